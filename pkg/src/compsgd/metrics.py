"""Per-round metric traces and their CSV form.

Column meanings (one row per round t = 0..T):

  t                  round index
  f_gap              f(x_t) - f*
  grad_norm_sq       ||grad f(x_t)||^2
  x_dist_sq          ||x~_t - x*||^2 (virtual sequence; equals ||x_t - x*||^2
                     for algorithms without error memory)
  err_sq_mean        (1/n) sum_i ||e_t^i||^2
  h_dist_sq_mean     (1/n) sum_i ||h_t^i - grad f_i(x*)||^2
  lyapunov           x_dist_sq + a err_sq_mean + b h_dist_sq_mean with the
                     algorithm's Lyapunov coefficients
  msg_size_estimate  heuristic uplink bits per worker per round; an estimate
                     only, nothing is actually encoded

Files are UTF-8, comma-separated, one header row, floats printed with 17
significant digits so a rewrite of the same run is byte-identical.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, fields

import numpy as np

from .errors import ValidationError

TRACE_COLUMNS = ("t", "f_gap", "grad_norm_sq", "x_dist_sq", "err_sq_mean",
                 "h_dist_sq_mean", "lyapunov", "msg_size_estimate")


@dataclass
class Trace:
    """Arrays of length T+1, one entry per recorded round."""

    t: np.ndarray
    f_gap: np.ndarray
    grad_norm_sq: np.ndarray
    x_dist_sq: np.ndarray
    err_sq_mean: np.ndarray
    h_dist_sq_mean: np.ndarray
    lyapunov: np.ndarray
    msg_size_estimate: np.ndarray

    @property
    def n_rounds(self) -> int:
        return len(self.t) - 1

    def column(self, name: str) -> np.ndarray:
        if name not in TRACE_COLUMNS:
            raise ValidationError(f"unknown trace column {name!r}")
        return getattr(self, name)

    @classmethod
    def empty(cls, rows: int) -> "Trace":
        return cls(t=np.arange(rows), **{f.name: np.zeros(rows)
                                         for f in fields(cls) if f.name != "t"})


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trace_csv(trace: Trace, path, metrics=None) -> None:
    """Write the trace atomically. ``metrics`` optionally restricts the
    value columns; t is always written."""
    cols = list(TRACE_COLUMNS[1:]) if metrics is None else list(metrics)
    for c in cols:
        if c not in TRACE_COLUMNS or c == "t":
            raise ValidationError(f"unknown metrics column {c!r}")
    lines = [",".join(["t"] + cols)]
    for i in range(len(trace.t)):
        row = [str(int(trace.t[i]))] + [_fmt(trace.column(c)[i]) for c in cols]
        lines.append(",".join(row))
    payload = "\n".join(lines) + "\n"
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_trace_csv(path) -> Trace:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if header[0] != "t":
        raise ValidationError(f"{path}: first column must be t")
    rows = data.shape[0]
    cols = {name: data[:, j] for j, name in enumerate(header)}
    full = {name: cols.get(name, np.zeros(rows)) for name in TRACE_COLUMNS}
    full["t"] = full["t"].astype(int)
    return Trace(**full)
