"""Experiment orchestration: configs, multi-seed runs, rate and plateau
estimation, CSV export.

Config files are flat ``key = value`` text with section prefixes::

    suite.d = 8            # or suite.file = path/to/suite.txt
    suite.n = 4
    suite.mu = 1
    suite.L = 10
    suite.sigma = 0
    suite.zeta_star_sq = 1
    suite.seed = 7
    algo.name = diana
    algo.gamma = 0.011
    algo.alpha = 0.125
    algo.quantizer = randk-unbiased:1
    run.T = 1000
    run.seeds = 1,2,3
    run.out = results

Lines starting with ``#`` are comments. Parse errors carry the line number
and field name.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .algorithms import AlgoConfig, Trajectory, run
from .compressors import parse_compressor
from .errors import NotInLinearRegimeError, ValidationError
from .metrics import TRACE_COLUMNS, Trace, write_trace_csv
from .problems import (ProblemSuite, gen_nonconvex_suite, gen_quadratic_suite,
                       load_suite)

_SUITE_KEYS = {"file", "kind", "d", "n", "mu", "L", "sigma", "zeta_star_sq", "seed"}
_ALGO_KEYS = {"name", "gamma", "alpha", "beta", "quantizer", "compressor", "x0_radius"}
_RUN_KEYS = {"T", "seeds", "out", "metrics", "record_iterates"}


@dataclass
class ExperimentConfig:
    """Parsed key/value config; ``raw`` keeps the flat dict for axis sweeps."""

    suite: dict = field(default_factory=dict)
    algo: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    source: str = "<memory>"

    @property
    def raw(self) -> dict:
        out = {f"suite.{k}": v for k, v in self.suite.items()}
        out.update({f"algo.{k}": v for k, v in self.algo.items()})
        out.update({f"run.{k}": v for k, v in self.run.items()})
        return out

    @property
    def seeds(self) -> list:
        return self.run["seeds"]

    def with_value(self, key: str, value) -> "ExperimentConfig":
        section, _, name = key.partition(".")
        cfg = ExperimentConfig(suite=dict(self.suite), algo=dict(self.algo),
                               run=dict(self.run), source=self.source)
        getattr(cfg, section)[name] = value
        return cfg


def _parse_value(section: str, key: str, value: str, lineno: int, source: str):
    def fail(msg):
        raise ValidationError(f"{source}:{lineno}: field {section}.{key}: {msg}")
    try:
        if key in ("d", "n", "seed", "T"):
            return int(value)
        if key in ("mu", "L", "sigma", "zeta_star_sq", "gamma", "alpha", "beta",
                   "x0_radius"):
            return float(value)
        if key == "seeds":
            seeds = [int(v) for v in value.split(",") if v.strip() != ""]
            if not seeds:
                fail("seed list is empty")
            return seeds
        if key == "metrics":
            cols = [v.strip() for v in value.split(",") if v.strip()]
            for c in cols:
                if c not in TRACE_COLUMNS:
                    fail(f"unknown metric {c!r}")
            return cols
        if key == "record_iterates":
            if value.lower() not in ("true", "false", "0", "1"):
                fail("expected a boolean")
            return value.lower() in ("true", "1")
    except ValueError as exc:
        fail(str(exc))
    return value


def parse_experiment_config(text: str, source: str = "<memory>") -> ExperimentConfig:
    cfg = ExperimentConfig(source=source)
    sections = {"suite": (_SUITE_KEYS, cfg.suite), "algo": (_ALGO_KEYS, cfg.algo),
                "run": (_RUN_KEYS, cfg.run)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        ln = line.strip()
        if not ln or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise ValidationError(f"{source}:{lineno}: expected key = value, got {ln!r}")
        key, _, value = ln.partition("=")
        key, value = key.strip(), value.strip()
        section, _, name = key.partition(".")
        if section not in sections or not name:
            raise ValidationError(f"{source}:{lineno}: unknown section in key {key!r}")
        allowed, store = sections[section]
        if name not in allowed:
            raise ValidationError(f"{source}:{lineno}: unknown field {key!r}")
        store[name] = _parse_value(section, name, value, lineno, source)
    for required, where in (("name", cfg.algo), ("gamma", cfg.algo),
                            ("T", cfg.run), ("seeds", cfg.run)):
        if required not in where:
            raise ValidationError(f"{source}: missing required field "
                                  f"{'algo' if where is cfg.algo else 'run'}.{required}")
    if "file" in cfg.suite and os.path.exists(cfg.suite["file"]) is False:
        raise ValidationError(f"{source}: suite.file {cfg.suite['file']!r} does not exist")
    if "file" not in cfg.suite:
        for required in ("d", "n", "L"):
            if required not in cfg.suite:
                raise ValidationError(f"{source}: missing required field suite.{required}")
    return cfg


def load_experiment_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_experiment_config(fh.read(), source=os.fspath(path))


def build_suite(cfg: ExperimentConfig) -> ProblemSuite:
    s = cfg.suite
    if "file" in s:
        return load_suite(s["file"])
    kind = s.get("kind", "quadratic")
    common = dict(d=s["d"], n=s["n"], L=s["L"],
                  zeta_star_sq=s.get("zeta_star_sq", 0.0),
                  sigma=s.get("sigma", 0.0), seed=s.get("seed", 0))
    if kind == "quadratic":
        return gen_quadratic_suite(mu=s.get("mu", 0.0), **common)
    if kind in ("nonconvex", "nonconvex-regularized"):
        return gen_nonconvex_suite(**common)
    raise ValidationError(f"{cfg.source}: unknown suite.kind {kind!r}")


def build_algo_config(cfg: ExperimentConfig, suite: ProblemSuite, seed: int) -> AlgoConfig:
    a, r = cfg.algo, cfg.run
    quant = parse_compressor(a["quantizer"], suite.d) if "quantizer" in a else None
    comp = parse_compressor(a["compressor"], suite.d) if "compressor" in a else None
    return AlgoConfig(algorithm=a["name"], gamma=a["gamma"], T=r["T"], seed=seed,
                      alpha=a.get("alpha", 0.0), beta=a.get("beta", 1.0),
                      quantizer=quant, compressor=comp,
                      x0_radius=a.get("x0_radius", 1.0),
                      record_iterates=r.get("record_iterates", False))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trajectories: dict            # seed -> Trajectory
    csv_paths: dict               # seed -> path (when run.out is set)

    def trace(self, seed) -> Trace:
        return self.trajectories[seed].trace

    def mean_f_gap(self) -> np.ndarray:
        return np.mean([t.trace.f_gap for t in self.trajectories.values()], axis=0)


def _run_cell(cfg: ExperimentConfig, seed: int) -> Trajectory:
    suite = build_suite(cfg)
    return run(suite, build_algo_config(cfg, suite, seed))


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """One trace per seed; cells are independent and may run in parallel,
    outputs are written and merged in deterministic seed order."""
    seeds = cfg.seeds
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trajs = dict(zip(seeds, pool.map(_run_cell, [cfg] * len(seeds), seeds)))
    else:
        trajs = {seed: _run_cell(cfg, seed) for seed in seeds}
    paths = {}
    out = cfg.run.get("out")
    if out:
        os.makedirs(out, exist_ok=True)
        for seed in seeds:
            path = os.path.join(out, f"trace_seed{seed}.csv")
            write_trace_csv(trajs[seed].trace, path, metrics=cfg.run.get("metrics"))
            paths[seed] = path
    return ExperimentResult(config=cfg, trajectories=trajs, csv_paths=paths)


# ---------------------------------------------------------------------------
# rate and plateau estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateReport:
    """Least-squares geometric rate of a positive decaying series."""

    rho: float            # fitted per-round contraction, exp(slope of log F)
    plateau: float        # mean of the final tail window
    plateau_stderr: float
    window: tuple         # [lo, hi) rounds used for the fit
    residual: float       # RMS residual of the log-linear fit


def default_fit_window(f_gap: np.ndarray, floor: float = 1e-12,
                       burn_in: int = 10) -> tuple:
    """Rounds [burn_in, first round below ``floor``), clipped to the series."""
    hi = len(f_gap)
    below = np.nonzero(f_gap < floor)[0]
    if below.size:
        hi = int(below[0])
    lo = min(burn_in, max(hi - 2, 0))
    return lo, hi


def fit_linear_rate(f_gap: np.ndarray, window: tuple | None = None,
                    tail_fraction: float = 0.1) -> RateReport:
    f_gap = np.asarray(f_gap, dtype=float)
    lo, hi = window if window is not None else default_fit_window(f_gap)
    if not 0 <= lo < hi <= len(f_gap) or hi - lo < 2:
        raise ValidationError(f"bad fit window [{lo}, {hi}) for series of length {len(f_gap)}")
    seg = f_gap[lo:hi]
    if np.any(seg <= 0.0):
        raise NotInLinearRegimeError("nonpositive suboptimality inside the fit window")
    ts = np.arange(lo, hi, dtype=float)
    logf = np.log(seg)
    slope, intercept = np.polyfit(ts, logf, 1)
    resid = logf - (slope * ts + intercept)
    level, se = detect_plateau(f_gap, max(1, int(tail_fraction * len(f_gap))))
    return RateReport(rho=float(np.exp(slope)), plateau=level, plateau_stderr=se,
                      window=(lo, hi), residual=float(np.sqrt(np.mean(resid ** 2))))


def detect_plateau(f_gap: np.ndarray, tail: int):
    """(mean, plain standard error) of the final ``tail`` entries."""
    f_gap = np.asarray(f_gap, dtype=float)
    if not 1 <= tail <= len(f_gap):
        raise ValidationError(f"tail {tail} out of range for series of length {len(f_gap)}")
    seg = f_gap[-tail:]
    level = float(seg.mean())
    se = float(seg.std(ddof=1) / math.sqrt(tail)) if tail > 1 else 0.0
    return level, se


# ---------------------------------------------------------------------------
# scaling comparisons along one config axis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingRow:
    axis_value: object
    plateau: float
    plateau_stderr: float
    rho: float


@dataclass(frozen=True)
class ScalingReport:
    axis: str
    rows: tuple
    ratios: tuple        # consecutive plateau ratios rows[i]/rows[i+1]
    ratio_stderrs: tuple

    def table(self) -> str:
        lines = [f"axis: {self.axis}",
                 f"{'value':>14} {'plateau':>14} {'stderr':>12} {'rho':>10}"]
        for r in self.rows:
            lines.append(f"{r.axis_value!s:>14} {r.plateau:>14.6e} "
                         f"{r.plateau_stderr:>12.3e} {r.rho:>10.6f}")
        if self.ratios:
            pretty = ", ".join(f"{v:.3f}" for v in self.ratios)
            lines.append(f"consecutive plateau ratios: {pretty}")
        return "\n".join(lines)


def compare_scaling(grid, axis: str, jobs: int = 1,
                    tail_fraction: float = 0.1) -> ScalingReport:
    """Run configs differing only along ``axis`` and tabulate plateau levels
    (seed-averaged tail means) and fitted rates with consecutive ratios."""
    if len(grid) < 2:
        raise ValidationError("need at least two configs to compare")
    base = {k: v for k, v in grid[0].raw.items() if k != axis and k != "run.out"}
    for cfg in grid[1:]:
        other = {k: v for k, v in cfg.raw.items() if k != axis and k != "run.out"}
        if other != base:
            off = sorted(k for k in set(base) | set(other)
                         if base.get(k) != other.get(k))
            raise ValidationError(f"configs differ off-axis at {off[:4]}")
    rows, levels = [], []
    for cfg in grid:
        res = run_experiment(cfg, jobs=jobs)
        per_seed = []
        for seed in cfg.seeds:
            fgap = res.trace(seed).f_gap
            tail = max(1, int(tail_fraction * len(fgap)))
            per_seed.append(detect_plateau(fgap, tail)[0])
        per_seed = np.asarray(per_seed)
        level = float(per_seed.mean())
        se = float(per_seed.std(ddof=1) / math.sqrt(len(per_seed))) if len(per_seed) > 1 else 0.0
        mean_gap = res.mean_f_gap()
        try:
            rho = fit_linear_rate(mean_gap).rho
        except (NotInLinearRegimeError, ValidationError):
            rho = float("nan")
        rows.append(ScalingRow(axis_value=cfg.raw.get(axis), plateau=level,
                               plateau_stderr=se, rho=rho))
        levels.append((level, se))
    ratios, ratio_ses = [], []
    for (l0, s0), (l1, s1) in zip(levels[:-1], levels[1:]):
        if l1 == 0.0:
            ratios.append(float("inf"))
            ratio_ses.append(float("inf"))
        else:
            rat = l0 / l1
            ratios.append(rat)
            rel = math.sqrt((s0 / l0) ** 2 + (s1 / l1) ** 2) if l0 > 0 else 0.0
            ratio_ses.append(abs(rat) * rel)
    return ScalingReport(axis=axis, rows=tuple(rows), ratios=tuple(ratios),
                         ratio_stderrs=tuple(ratio_ses))
