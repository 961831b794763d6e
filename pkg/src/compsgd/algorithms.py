"""Server/worker state machines for the six compressed-SGD schemes.

Each runner mirrors its pseudocode line by line over simulated workers and
a central server:

  run_dqsgd         quantize the stochastic gradient, average, step
  run_defsgd        error feedback: compress e_i + g_i, bank the residual
  run_diana         quantize gradient differences g_i - h_i, learn shifts
  run_defsgd_bias   error feedback plus the shift channel (two messages)
  run_ecsgd_diana   appendix variant: compression input adds +h_t and the
                    server step drops the explicit -gamma h_t term
  run_linear_sync   shared per-round linear compressor on all workers

Workers execute sequentially in index order and server averages always use
the same reduction, so trajectories are bitwise deterministic and the
documented identity reductions (omega=0, delta=1, alpha=0) agree with plain
distributed SGD to the bit.

The uncompressed shadow iterate x~ (x~_{t+1} = x~_t - gamma * mean_i g_t^i)
is tracked alongside every error-feedback run; the runner checks
x_t - x~_t = (gamma/n) sum_i e_t^i every round and raises on violation.

Synchronized linear runs drive the server with the collapsed update
C_t(e-bar + g-bar), which equals the per-worker average exactly by
linearity; per-worker memories are still simulated for the metric columns.
This is what makes the n-worker run and the single-node run on averaged
gradients (``run_averaged_single_node``) coincide bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tuning
from .compressors import CompressorOp, draw_index_subset
from .errors import ConfigError, InvariantViolation, ValidationError
from .metrics import Trace
from .problems import ProblemSuite, f_grad, f_value, grad_all
from .rng import LANE_INIT, LANE_OUTPUT, RunRngs, as_generator, lane_generator

ALGORITHMS = ("dsgd", "dqsgd", "defsgd", "diana", "defsgd-bias", "ecsgd-diana",
              "dqsgd-linear-sync", "defsgd-linear-sync")

VIRTUAL_SEQ_RTOL = 1e-9


@dataclass
class AlgoConfig:
    """Everything a run needs besides the problem suite."""

    algorithm: str
    gamma: float
    T: int
    seed: int = 0
    alpha: float = 0.0
    beta: float = 1.0
    quantizer: CompressorOp | None = None
    compressor: CompressorOp | None = None
    x0: np.ndarray | None = None
    x0_radius: float = 1.0
    record_iterates: bool = True
    check_invariants: bool = True


@dataclass
class WorkerState:
    """Final per-worker memories: error e_i and shift h_i rows."""

    errors: np.ndarray   # (n, d)
    shifts: np.ndarray   # (n, d)


@dataclass
class ServerState:
    x: np.ndarray
    h: np.ndarray
    x_tilde: np.ndarray
    t: int


@dataclass
class Trajectory:
    config: AlgoConfig
    trace: Trace
    iterates: np.ndarray | None     # (T+1, d) when recorded
    workers: WorkerState
    server: ServerState

    @property
    def x_final(self) -> np.ndarray:
        return self.server.x


def validate_config(suite: ProblemSuite, cfg: AlgoConfig) -> None:
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {cfg.algorithm!r}")
    if cfg.T < 1:
        raise ConfigError("need T >= 1")
    if cfg.gamma < 0.0:
        raise ConfigError("stepsize must be nonnegative")
    needs_q = cfg.algorithm in ("dqsgd", "diana", "defsgd-bias", "ecsgd-diana",
                                "dqsgd-linear-sync")
    needs_c = cfg.algorithm in ("defsgd", "defsgd-bias", "ecsgd-diana",
                                "defsgd-linear-sync")
    if needs_q:
        q = cfg.quantizer
        if q is None or not q.is_quantizer:
            raise ConfigError(f"{cfg.algorithm} needs an omega-quantizer")
        if q.d != suite.d:
            raise ConfigError(f"quantizer dimension {q.d} != suite dimension {suite.d}")
    if needs_c:
        c = cfg.compressor
        if c is None or not c.is_compressor:
            raise ConfigError(f"{cfg.algorithm} needs a delta-compressor")
        if c.d != suite.d:
            raise ConfigError(f"compressor dimension {c.d} != suite dimension {suite.d}")
    if cfg.algorithm == "diana":
        cap = 1.0 / (1.0 + cfg.quantizer.omega)
        if not 0.0 <= cfg.alpha <= cap + 1e-15:
            raise ConfigError(f"diana needs 0 <= alpha <= 1/(1+omega) = {cap:.6g}")
    if cfg.algorithm == "defsgd-bias":
        if not 0.0 < cfg.beta <= 1.0:
            raise ConfigError("defsgd-bias needs beta in (0, 1]")
        cap = cfg.beta / (1.0 + cfg.quantizer.omega)
        if not 0.0 <= cfg.alpha <= cap + 1e-15:
            raise ConfigError(f"defsgd-bias needs 0 <= alpha <= beta/(1+omega) = {cap:.6g}")
    if cfg.algorithm == "ecsgd-diana":
        cap = 1.0 / (1.0 + cfg.quantizer.omega)
        if not 0.0 <= cfg.alpha <= cap + 1e-15:
            raise ConfigError(f"ecsgd-diana needs 0 <= alpha <= 1/(1+omega) = {cap:.6g}")
    if cfg.algorithm == "dqsgd-linear-sync" and not cfg.quantizer.linear:
        raise ConfigError("synchronized mode needs a linear quantizer")
    if cfg.algorithm == "defsgd-linear-sync" and not cfg.compressor.linear:
        raise ConfigError("synchronized mode needs a linear compressor")
    if cfg.x0 is not None and np.asarray(cfg.x0).shape != (suite.d,):
        raise ConfigError("x0 has the wrong shape")


def default_x0(suite: ProblemSuite, cfg: AlgoConfig) -> np.ndarray:
    if cfg.x0 is not None:
        return np.asarray(cfg.x0, dtype=float).copy()
    g = lane_generator(cfg.seed, LANE_INIT)
    u = g.standard_normal(suite.d)
    u /= np.linalg.norm(u)
    return suite.x_star + cfg.x0_radius * u


# ---------------------------------------------------------------------------
# shared loop machinery
# ---------------------------------------------------------------------------

def _uplink_bits(cfg: AlgoConfig, d: int) -> float:
    from .compressors import FLOAT_BITS
    if cfg.algorithm == "dsgd":
        return float(d * FLOAT_BITS)
    bits = 0.0
    if cfg.algorithm in ("dqsgd", "diana", "dqsgd-linear-sync"):
        bits += cfg.quantizer.encoded_bits_estimate()
    if cfg.algorithm in ("defsgd", "defsgd-linear-sync"):
        bits += cfg.compressor.encoded_bits_estimate()
    if cfg.algorithm in ("defsgd-bias", "ecsgd-diana"):
        bits += cfg.compressor.encoded_bits_estimate()
        bits += cfg.quantizer.encoded_bits_estimate()
    return bits


class _Loop:
    """State shared by all runners: oracles, trace buffers, invariants."""

    def __init__(self, suite: ProblemSuite, cfg: AlgoConfig):
        validate_config(suite, cfg)
        self.suite = suite
        self.cfg = cfg
        self.n, self.d = suite.n, suite.d
        self.x = default_x0(suite, cfg)
        self.x_tilde = self.x.copy()
        self.E = np.zeros((self.n, self.d))
        self.Hw = np.zeros((self.n, self.d))
        self.h = np.zeros(self.d)
        self.rngs = RunRngs(cfg.seed, self.n)
        self.noise_scale = suite.sigma / np.sqrt(self.d)
        self.grads_at_star = grad_all(suite, suite.x_star)
        delta = cfg.compressor.delta if cfg.compressor is not None else 1.0
        omega = cfg.quantizer.omega if cfg.quantizer is not None else 0.0
        self.lyap_a, self.lyap_b = tuning.lyapunov_coefficients(
            cfg.algorithm, cfg.gamma, suite.L, self.n, delta=delta,
            omega=omega, alpha=cfg.alpha)
        rows = cfg.T + 1
        self.trace = Trace.empty(rows)
        self.trace.msg_size_estimate[:] = _uplink_bits(cfg, self.d)
        self.iterates = np.empty((rows, self.d)) if cfg.record_iterates else None
        self.has_error_memory = cfg.algorithm in (
            "defsgd", "defsgd-bias", "ecsgd-diana", "defsgd-linear-sync")

    def gradients(self) -> np.ndarray:
        G = grad_all(self.suite, self.x)
        if self.suite.sigma > 0.0:
            for i in range(self.n):
                G[i] += self.noise_scale * self.rngs.noise[i].standard_normal(self.d)
        return G

    def record(self, t: int) -> None:
        s = self.suite
        Ax = s.A @ self.x
        fx = 0.5 * (self.x @ Ax) - s.b_mean @ self.x + s.const_mean
        gx = Ax - s.b_mean
        if s.reg_coeff:
            fx = f_value(s, self.x)
            gx = f_grad(s, self.x)
        xt = self.x_tilde - s.x_star
        tr = self.trace
        tr.f_gap[t] = fx - s.f_star
        tr.grad_norm_sq[t] = gx @ gx
        tr.x_dist_sq[t] = xt @ xt
        tr.err_sq_mean[t] = np.einsum("ij,ij->", self.E, self.E) / self.n
        dh = self.Hw - self.grads_at_star
        tr.h_dist_sq_mean[t] = np.einsum("ij,ij->", dh, dh) / self.n
        tr.lyapunov[t] = (tr.x_dist_sq[t] + self.lyap_a * tr.err_sq_mean[t]
                          + self.lyap_b * tr.h_dist_sq_mean[t])
        if self.iterates is not None:
            self.iterates[t] = self.x
        if self.cfg.check_invariants and self.has_error_memory:
            resid = (self.x - self.x_tilde) - self.cfg.gamma * self.E.mean(axis=0)
            bound = VIRTUAL_SEQ_RTOL * (1.0 + float(np.linalg.norm(self.x)))
            if float(np.linalg.norm(resid)) > bound:
                raise InvariantViolation(
                    f"virtual-sequence identity violated at round {t}: "
                    f"residual {np.linalg.norm(resid):.3e} > {bound:.3e}")

    def finish(self) -> Trajectory:
        self.record(self.cfg.T)
        return Trajectory(config=self.cfg, trace=self.trace, iterates=self.iterates,
                          workers=WorkerState(errors=self.E, shifts=self.Hw),
                          server=ServerState(x=self.x, h=self.h,
                                             x_tilde=self.x_tilde, t=self.cfg.T))


def _apply_rows(op: CompressorOp, S: np.ndarray, gens) -> np.ndarray:
    """Apply op to each row with that worker's stream. Kind-specific paths
    avoid per-call realization objects; results match op.apply bitwise."""
    kind = op.kind
    if kind == "identity":
        return S
    n, d = S.shape
    if kind == "top-k":
        order = np.argsort(-np.abs(S), axis=1, kind="stable")[:, :op.k]
        out = np.zeros_like(S)
        np.put_along_axis(out, order, np.take_along_axis(S, order, axis=1), axis=1)
        return out
    if kind in ("rand-k-biased", "rand-k-unbiased") or (
            kind == "sketch" and op.sketch_kind == "coord"):
        out = np.zeros_like(S)
        scale = d / op.k if kind == "rand-k-unbiased" else 1.0
        for i in range(n):
            idx = draw_index_subset(gens[i], d, op.k)
            out[i, idx] = S[i, idx] if scale == 1.0 else scale * S[i, idx]
        return out
    if kind == "rescaled-quantizer":
        return _apply_rows(op.inner, S, gens) / (1.0 + op.inner.omega)
    out = np.empty_like(S)
    for i in range(n):
        out[i] = op.apply(S[i], gens[i])
    return out


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------

def run_dsgd(suite: ProblemSuite, cfg: AlgoConfig) -> Trajectory:
    """Plain distributed SGD, the no-compression reference."""
    loop = _Loop(suite, cfg)
    g = cfg.gamma
    for t in range(cfg.T):
        loop.record(t)
        G = loop.gradients()
        mg = G.mean(axis=0)
        loop.x = loop.x - g * mg
        loop.x_tilde = loop.x
    return loop.finish()


def run_dqsgd(suite: ProblemSuite, cfg: AlgoConfig) -> Trajectory:
    loop = _Loop(suite, cfg)
    g = cfg.gamma
    for t in range(cfg.T):
        loop.record(t)
        G = loop.gradients()
        Dhat = _apply_rows(cfg.quantizer, G, loop.rngs.quantize)
        loop.x = loop.x - g * Dhat.mean(axis=0)
        loop.x_tilde = loop.x
    return loop.finish()


def run_defsgd(suite: ProblemSuite, cfg: AlgoConfig) -> Trajectory:
    loop = _Loop(suite, cfg)
    g = cfg.gamma
    for t in range(cfg.T):
        loop.record(t)
        G = loop.gradients()
        S = loop.E + G
        Dhat = _apply_rows(cfg.compressor, S, loop.rngs.compress)
        loop.E = S - Dhat
        loop.x = loop.x - g * Dhat.mean(axis=0)
        loop.x_tilde = loop.x_tilde - g * G.mean(axis=0)
    return loop.finish()


def run_diana(suite: ProblemSuite, cfg: AlgoConfig) -> Trajectory:
    loop = _Loop(suite, cfg)
    g, a = cfg.gamma, cfg.alpha
    for t in range(cfg.T):
        loop.record(t)
        G = loop.gradients()
        Dhat = _apply_rows(cfg.quantizer, G - loop.Hw, loop.rngs.quantize)
        loop.x = loop.x - g * loop.h - g * Dhat.mean(axis=0)
        if a != 0.0:
            loop.Hw = loop.Hw + a * Dhat
        loop.h = loop.Hw.mean(axis=0)
        loop.x_tilde = loop.x
    return loop.finish()


def run_defsgd_bias(suite: ProblemSuite, cfg: AlgoConfig) -> Trajectory:
    loop = _Loop(suite, cfg)
    g, a = cfg.gamma, cfg.alpha
    for t in range(cfg.T):
        loop.record(t)
        G = loop.gradients()
        S = (loop.E + G) - loop.Hw
        Dhat = _apply_rows(cfg.compressor, S, loop.rngs.compress)
        Dq = _apply_rows(cfg.quantizer, G - loop.Hw, loop.rngs.quantize)
        loop.E = S - Dhat
        loop.x = loop.x - g * loop.h - g * Dhat.mean(axis=0)
        if a != 0.0:
            loop.Hw = loop.Hw + a * Dq
        loop.h = loop.Hw.mean(axis=0)
        loop.x_tilde = loop.x_tilde - g * G.mean(axis=0)
    return loop.finish()


def run_ecsgd_diana(suite: ProblemSuite, cfg: AlgoConfig) -> Trajectory:
    loop = _Loop(suite, cfg)
    g, a = cfg.gamma, cfg.alpha
    for t in range(cfg.T):
        loop.record(t)
        G = loop.gradients()
        S = ((loop.E + G) - loop.Hw) + loop.h
        Dhat = _apply_rows(cfg.compressor, S, loop.rngs.compress)
        Dq = _apply_rows(cfg.quantizer, G - loop.Hw, loop.rngs.quantize)
        loop.E = S - Dhat
        loop.x = loop.x - g * Dhat.mean(axis=0)
        if a != 0.0:
            loop.Hw = loop.Hw + a * Dq
        loop.h = loop.Hw.mean(axis=0)
        loop.x_tilde = loop.x_tilde - g * G.mean(axis=0)
    return loop.finish()


def run_linear_sync(suite: ProblemSuite, cfg: AlgoConfig) -> Trajectory:
    """Shared per-round compressor realization on every worker. The server
    update uses the collapsed form C_t(mean input), exact by linearity."""
    loop = _Loop(suite, cfg)
    g = cfg.gamma
    ef = cfg.algorithm == "defsgd-linear-sync"
    op = cfg.compressor if ef else cfg.quantizer
    e_bar = np.zeros(loop.d)
    for t in range(cfg.T):
        loop.record(t)
        G = loop.gradients()
        mg = G.mean(axis=0)
        if ef:
            s_bar = e_bar + mg
            real = op.realize(loop.rngs.sync, signal=s_bar)
            d_bar = real.apply(s_bar)
            S = loop.E + G
            for i in range(loop.n):
                loop.E[i] = S[i] - real.apply(S[i])
            e_bar = s_bar - d_bar
            loop.x = loop.x - g * d_bar
            loop.x_tilde = loop.x_tilde - g * mg
        else:
            real = op.realize(loop.rngs.sync, signal=mg)
            loop.x = loop.x - g * real.apply(mg)
            loop.x_tilde = loop.x
    return loop.finish()


def run_averaged_single_node(suite: ProblemSuite, cfg: AlgoConfig) -> Trajectory:
    """Single-worker error-feedback SGD driven by the node-averaged
    stochastic gradient of ``suite``, with the same synchronized compressor
    stream as ``run_linear_sync``; its server iterates match that run
    bitwise."""
    cfg = replace(cfg, algorithm="defsgd-linear-sync")
    loop = _Loop(suite, cfg)
    g = cfg.gamma
    op = cfg.compressor
    e_bar = np.zeros(loop.d)
    for t in range(cfg.T):
        loop.E[:] = e_bar  # single-worker memory, broadcast for the metrics
        loop.record(t)
        G = loop.gradients()
        mg = G.mean(axis=0)
        s_bar = e_bar + mg
        real = op.realize(loop.rngs.sync, signal=s_bar)
        d_bar = real.apply(s_bar)
        e_bar = s_bar - d_bar
        loop.x = loop.x - g * d_bar
        loop.x_tilde = loop.x_tilde - g * mg
    loop.E[:] = e_bar
    return loop.finish()


_RUNNERS = {
    "dsgd": run_dsgd,
    "dqsgd": run_dqsgd,
    "defsgd": run_defsgd,
    "diana": run_diana,
    "defsgd-bias": run_defsgd_bias,
    "ecsgd-diana": run_ecsgd_diana,
    "dqsgd-linear-sync": run_linear_sync,
    "defsgd-linear-sync": run_linear_sync,
}


def run(suite: ProblemSuite, cfg: AlgoConfig) -> Trajectory:
    """Dispatch on cfg.algorithm."""
    try:
        runner = _RUNNERS[cfg.algorithm]
    except KeyError:
        raise ConfigError(f"unknown algorithm {cfg.algorithm!r}") from None
    return runner(suite, cfg)


# ---------------------------------------------------------------------------
# output selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutputSelection:
    index: int
    iterate: np.ndarray
    average: np.ndarray          # deterministic weighted average of candidates
    probabilities: np.ndarray = field(repr=False)


def select_output(traj: Trajectory, weighting="uniform", rng=None) -> OutputSelection:
    """Sample x_out from {x_0, ..., x_{T-1}} with weights (1-c)^{-t}.

    ``weighting`` is either "uniform" or a contraction c in (0, 1) (the
    per-theorem value: mu*gamma, min{mu*gamma/2, delta/4}, ...). Weights are
    normalized in log space so large T cannot overflow.
    """
    if traj.iterates is None:
        raise ValidationError("trajectory was run without record_iterates")
    X = traj.iterates[:-1]
    T = X.shape[0]
    if weighting == "uniform":
        logw = np.zeros(T)
    else:
        c = float(weighting)
        if not 0.0 < c < 1.0:
            raise ValidationError("contraction c must lie in (0, 1)")
        logw = -np.arange(T) * np.log1p(-c)
    w = np.exp(logw - logw.max())
    p = w / w.sum()
    gen = as_generator(rng) if rng is not None else lane_generator(
        traj.config.seed, LANE_OUTPUT)
    idx = int(gen.choice(T, p=p))
    avg = p @ X
    return OutputSelection(index=idx, iterate=X[idx].copy(), average=avg,
                           probabilities=p)
