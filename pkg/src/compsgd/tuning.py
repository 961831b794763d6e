"""Stepsize rules derived from the descent-recursion summation lemmas.

Every convergence statement in scope reduces a run to one of two scalar
recursions for a Lyapunov value r_t and a progress quantity s_t:

    strongly convex:  r_{t+1} <= (1 - min{gamma A, F}) r_t - B gamma s_t
                                 + C gamma^2 + D gamma^3,   gamma <= 1/E
    sublinear:        r_{t+1} <= r_t - B gamma s_t + C gamma^2 + D gamma^3

``theorem_constants`` maps (algorithm, problem class) to the recursion
constants established by the corresponding descent lemma; the two ``tune_*``
functions then pick the stepsize the lemma proofs use. Where a theorem's
headline constant and its lemma disagree, the stricter lemma-backed value
is used so that tuned stepsizes never exceed any stated cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError

STRONGLY_CONVEX = "strongly-convex"
CONVEX = "convex"
NONCONVEX = "smooth-nonconvex"
OBJECTIVE_CLASSES = (STRONGLY_CONVEX, CONVEX, NONCONVEX)

ALGORITHMS = ("dqsgd", "defsgd", "diana", "defsgd-bias", "ecsgd-diana",
              "dqsgd-linear-sync", "defsgd-linear-sync")


@dataclass(frozen=True)
class RecursionConstants:
    """Coefficients of a descent recursion plus the initial Lyapunov value."""

    A: float   # contraction factor coefficient (gamma * A), > 0 when used
    B: float   # descent coefficient, > 0
    C: float   # gamma^2 noise coefficient, >= 0
    D: float   # gamma^3 noise coefficient, >= 0
    E: float   # inverse max stepsize, >= 0 (0 = unconstrained)
    F: float   # stepsize-free contraction cap, in (0, 1]
    r0: float  # initial Lyapunov value, >= 0

    def __post_init__(self):
        if self.B <= 0.0:
            raise ValidationError("descent coefficient B must be positive")
        if min(self.A, self.C, self.D, self.E, self.r0) < 0.0:
            raise ValidationError("recursion constants must be nonnegative")
        if not 0.0 < self.F <= 1.0:
            raise ValidationError("contraction cap F must lie in (0, 1]")


@dataclass(frozen=True)
class TunedStepsize:
    gamma: float
    tau: float | None   # the log factor; None on the noiseless branch
    branch: str         # which case of the proof applied


def tune_strongly_convex(k: RecursionConstants, T: int) -> TunedStepsize:
    """gamma = min{1/E, ln(tau) / (A (T+1))} with
    tau = max{e, min{A^2 r0 (T+1)^2 / C, A^3 r0 (T+1)^3 / D}},
    dropping inner-min terms whose coefficient is zero."""
    if T < 1:
        raise ValidationError("need T >= 1")
    if k.A <= 0.0:
        raise ValidationError("strongly convex tuning needs A > 0")
    if k.C == 0.0 and k.D == 0.0:
        if k.E <= 0.0:
            raise ValidationError("noiseless recursion with E = 0 leaves gamma unbounded")
        return TunedStepsize(gamma=1.0 / k.E, tau=None, branch="noiseless")
    horizon = T + 1
    inner = []
    if k.C > 0.0:
        inner.append(k.A ** 2 * k.r0 * horizon ** 2 / k.C)
    if k.D > 0.0:
        inner.append(k.A ** 3 * k.r0 * horizon ** 3 / k.D)
    tau = max(math.e, min(inner))
    g_log = math.log(tau) / (k.A * horizon)
    if k.E > 0.0 and 1.0 / k.E <= g_log:
        return TunedStepsize(gamma=1.0 / k.E, tau=tau, branch="stepsize-cap")
    return TunedStepsize(gamma=g_log, tau=tau, branch="log-tuned")


def tune_sublinear(k: RecursionConstants, T: int) -> TunedStepsize:
    """gamma = min{1/E, (r0 / (C (T+1)))^(1/2), (r0 / (D (T+1)))^(1/3)},
    dropping terms with zero coefficient."""
    if T < 1:
        raise ValidationError("need T >= 1")
    horizon = T + 1
    candidates = []
    if k.E > 0.0:
        candidates.append((1.0 / k.E, "stepsize-cap"))
    if k.C > 0.0 and k.r0 > 0.0:
        candidates.append(((k.r0 / (k.C * horizon)) ** 0.5, "sqrt-noise"))
    if k.D > 0.0 and k.r0 > 0.0:
        candidates.append(((k.r0 / (k.D * horizon)) ** (1.0 / 3.0), "cbrt-noise"))
    if not candidates:
        raise ValidationError("recursion leaves gamma unbounded (E = C = D = 0)")
    gamma, branch = min(candidates, key=lambda c: c[0])
    return TunedStepsize(gamma=gamma, tau=None, branch=branch)


def strongly_convex_bound(k: RecursionConstants, T: int, tuned: TunedStepsize) -> float:
    """Value the summation lemma guarantees for
    (B / W_T) sum w_t s_t + min{A, F/gamma} r_{T+1}
    at the tuned stepsize (proof-side constants 2C, 2D)."""
    horizon = T + 1
    decay = k.F if k.E == 0.0 else min(k.A / k.E, k.F)
    out = k.r0 * (k.E + k.A / k.F) * math.exp(-decay * horizon)
    if tuned.tau is not None:
        lt = math.log(tuned.tau)
        out += 2.0 * k.C * lt / (k.A * horizon)
        out += 2.0 * k.D * lt ** 2 / (k.A ** 2 * horizon ** 2)
    return out


# ---------------------------------------------------------------------------
# per-theorem constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteParams:
    """Problem-side quantities entering the recursion constants."""

    L: float
    mu: float
    sigma: float
    zeta_sq: float
    Z_sq: float
    n: int
    zeta_star_sq: float = 0.0
    x0_dist_sq: float = 1.0   # ||x0 - x*||^2, seeds r0 for iterate recursions
    f0_gap: float = 1.0       # f(x0) - f*, seeds r0 for value recursions


@dataclass(frozen=True)
class CompressorParams:
    delta: float = 1.0
    omega: float = 0.0
    alpha: float = 0.0
    beta: float = 1.0


def _linear_sync_reduction(p: SuiteParams) -> SuiteParams:
    # synchronized linear compressors collapse the run to one worker seeing
    # the averaged oracle: noise variance sigma^2/n, no dissimilarity
    return SuiteParams(L=p.L, mu=p.mu, sigma=p.sigma / math.sqrt(p.n),
                       zeta_sq=0.0, Z_sq=1.0, n=1, zeta_star_sq=0.0,
                       x0_dist_sq=p.x0_dist_sq, f0_gap=p.f0_gap)


def theorem_stepsize_cap(algorithm: str, p: SuiteParams, c: CompressorParams,
                         strict: bool = False) -> float:
    """The stepsize cap stated by the algorithm's theorem. ``strict=True``
    returns the (possibly smaller) cap the descent lemma itself needs."""
    L, n = p.L, p.n
    if algorithm == "dqsgd":
        return 1.0 / (2.0 * L * (1.0 + p.Z_sq * c.omega / n))
    if algorithm == "defsgd":
        return 1.0 / (14.0 * L * (1.0 + math.sqrt(p.Z_sq) / c.delta))
    if algorithm == "diana":
        if strict:
            return 1.0 / (2.0 * L * (1.0 + 8.0 * c.omega / n))
        return 1.0 / (2.0 * L * (1.0 + 2.0 * c.omega / n))
    if algorithm in ("defsgd-bias", "ecsgd-diana"):
        return c.delta / ((34.0 if strict else 32.0) * L)
    if algorithm == "dqsgd-linear-sync":
        return theorem_stepsize_cap("dqsgd", _linear_sync_reduction(p), c, strict)
    if algorithm == "defsgd-linear-sync":
        return theorem_stepsize_cap("defsgd", _linear_sync_reduction(p), c, strict)
    raise ValidationError(f"unknown algorithm {algorithm!r}")


def theorem_constants(algorithm: str, p: SuiteParams, c: CompressorParams,
                      objective_class: str) -> RecursionConstants:
    """Recursion constants under which the run's tracked Lyapunov sequence
    satisfies its descent lemma in expectation.

    The gamma^2/gamma^3 coefficients keep the (1-delta) and omega factors
    from the lemma derivations, so substituting delta=1 or omega=0 recovers
    the plain SGD constants exactly.
    """
    if objective_class not in OBJECTIVE_CLASSES:
        raise ValidationError(f"unknown objective class {objective_class!r}")
    if algorithm not in ALGORITHMS:
        raise ValidationError(f"unknown algorithm {algorithm!r}")
    if objective_class == STRONGLY_CONVEX and p.mu <= 0.0:
        raise ValidationError("strongly convex constants need mu > 0")
    if algorithm == "dqsgd-linear-sync":
        return theorem_constants("dqsgd", _linear_sync_reduction(p), c, objective_class)
    if algorithm == "defsgd-linear-sync":
        return theorem_constants("defsgd", _linear_sync_reduction(p), c, objective_class)

    L, mu, n = p.L, p.mu, p.n
    s2, z2, Z2 = p.sigma ** 2, p.zeta_sq, p.Z_sq
    delta, omega = c.delta, c.omega

    if algorithm == "dqsgd":
        E = 2.0 * L * (1.0 + Z2 * omega / n)
        if objective_class == NONCONVEX:
            return RecursionConstants(A=0.0, B=0.5, C=L * (s2 * (1.0 + omega) + z2 * omega) / (2.0 * n),
                                      D=0.0, E=E, F=1.0, r0=p.f0_gap)
        A = mu if objective_class == STRONGLY_CONVEX else 0.0
        return RecursionConstants(A=A, B=1.0, C=(s2 * (1.0 + omega) + z2 * omega) / n,
                                  D=0.0, E=E, F=1.0, r0=p.x0_dist_sq)

    if algorithm == "defsgd":
        if objective_class == NONCONVEX:
            D = (1.0 - delta) * (2.0 * L ** 2 * z2 / delta ** 2 + L ** 2 * s2 / delta)
            return RecursionConstants(A=0.0, B=1.0 / 8.0, C=L * s2 / (2.0 * n), D=D,
                                      E=4.0 * L * (1.0 + math.sqrt(Z2)) / delta,
                                      F=1.0, r0=p.f0_gap)
        D = (1.0 - delta) * (24.0 * L * z2 / delta ** 2 + 12.0 * L * s2 / delta)
        A = mu / 2.0 if objective_class == STRONGLY_CONVEX else 0.0
        return RecursionConstants(A=A, B=0.25, C=s2 / n, D=D,
                                  E=14.0 * L * (1.0 + math.sqrt(Z2) / delta),
                                  F=delta / 4.0, r0=p.x0_dist_sq)

    if algorithm == "diana":
        alpha = 1.0 / (1.0 + omega)
        if objective_class == NONCONVEX:
            return RecursionConstants(A=0.0, B=0.25,
                                      C=L * (s2 * (2.0 + omega) + 2.0 * z2 * omega) / (2.0 * n),
                                      D=0.0, E=2.0 * L * (1.0 + 2.0 * Z2 * omega / n),
                                      F=1.0, r0=p.f0_gap)
        E = 2.0 * L * (1.0 + 8.0 * omega / n)
        a_shift = 4.0 * omega / (alpha * n * E ** 2)  # a = 4 gamma^2 omega/(alpha n) at gamma = 1/E
        r0 = p.x0_dist_sq + a_shift * p.zeta_star_sq
        A = mu if objective_class == STRONGLY_CONVEX else 0.0
        return RecursionConstants(A=A, B=0.5, C=(1.0 + 5.0 * omega) * s2 / n,
                                  D=0.0, E=E, F=alpha / 2.0, r0=r0)

    # defsgd-bias and ecsgd-diana share Algorithm-4-style constants; the
    # appendix variant has no separate theorem and matches its behavior
    if algorithm == "defsgd-bias":
        beta = c.beta
    else:
        beta = c.alpha * (1.0 + omega) if c.alpha > 0.0 else 1.0
    if not 0.0 < beta <= 1.0:
        raise ValidationError("bias-corrected constants need beta in (0, 1]")
    alpha = beta / (1.0 + omega)
    if objective_class == NONCONVEX:
        if algorithm == "defsgd-bias" and abs(beta - delta) > 1e-12:
            raise ValidationError("the smooth-nonconvex lemma covers beta = delta only")
        D = 8.0 * L ** 2 * (1.0 - delta) * (delta * s2 + z2) / delta ** 2
        return RecursionConstants(A=0.0, B=1.0 / 8.0, C=L * s2 / (2.0 * n), D=D,
                                  E=2.0 * L * (1.0 + 4.0 * math.sqrt(Z2)),
                                  F=1.0, r0=p.f0_gap)
    E = 34.0 * L / delta
    D = (1.0 - delta) * (12.0 * L * s2 / delta + 96.0 * beta * L * s2 / delta ** 2)
    a = 12.0 * L / (delta * E ** 3)                  # a = 12 gamma^3 L / delta at gamma = 1/E
    b = 8.0 * a * (1.0 - delta) / (alpha * delta)
    r0 = p.x0_dist_sq + b * p.zeta_star_sq
    A = mu / 2.0 if objective_class == STRONGLY_CONVEX else 0.0
    return RecursionConstants(A=A, B=0.25, C=s2 / n, D=D, E=E,
                              F=min(alpha / 2.0, delta / 4.0), r0=r0)


# ---------------------------------------------------------------------------
# Lyapunov bookkeeping shared with the runners
# ---------------------------------------------------------------------------

def lyapunov_coefficients(algorithm: str, gamma: float, L: float, n: int,
                          delta: float = 1.0, omega: float = 0.0,
                          alpha: float = 0.0):
    """(a, b) such that Psi_t = X_t + a E_t + b H_t is the algorithm's
    Lyapunov value; zero entries for state the algorithm does not carry."""
    if algorithm in ("dqsgd", "dqsgd-linear-sync", "dsgd"):
        return 0.0, 0.0
    if algorithm in ("defsgd", "defsgd-linear-sync"):
        return 12.0 * gamma ** 3 * L / delta, 0.0
    if algorithm == "diana":
        b = 4.0 * gamma ** 2 * omega / (alpha * n) if alpha > 0.0 and omega > 0.0 else 0.0
        return 0.0, b
    if algorithm in ("defsgd-bias", "ecsgd-diana"):
        a = 12.0 * gamma ** 3 * L / delta
        b = 8.0 * a * (1.0 - delta) / (alpha * delta) if alpha > 0.0 else 0.0
        return a, b
    raise ValidationError(f"unknown algorithm {algorithm!r}")


def output_weight_contraction(algorithm: str, gamma: float, mu: float,
                              delta: float = 1.0, omega: float = 0.0,
                              alpha: float = 0.0) -> float:
    """Per-theorem contraction c defining the output weights (1-c)^{-t}."""
    if algorithm in ("dqsgd", "dqsgd-linear-sync"):
        return mu * gamma
    if algorithm in ("defsgd", "defsgd-linear-sync"):
        return min(mu * gamma / 2.0, delta / 4.0)
    if algorithm == "diana":
        return min(mu * gamma, alpha / 2.0)
    if algorithm in ("defsgd-bias", "ecsgd-diana"):
        return min(mu * gamma / 2.0, alpha / 2.0, delta / 4.0)
    raise ValidationError(f"unknown algorithm {algorithm!r}")


def bias_corrected_descent_rhs(psi_t: float, f_gap_t: float, gamma: float,
                               L: float, mu: float, n: int, sigma: float,
                               delta: float, omega: float, beta: float) -> float:
    """One-step upper bound on E Psi_{t+1} for the bias-corrected scheme:

        (1-c) Psi_t - gamma F_t / 4 + gamma^2 sigma^2 / n
        + gamma^3 (1-delta) (12 L sigma^2 / delta + 96 beta L sigma^2 / delta^2)

    with c = min{gamma mu / 2, alpha / 2, delta / 4}, alpha = beta/(1+omega).
    These are the coefficients the lemma's own derivation supports (its
    headline display understates them by a factor 3).
    """
    alpha = beta / (1.0 + omega)
    con = min(gamma * mu / 2.0, alpha / 2.0, delta / 4.0)
    noise = gamma ** 2 * sigma ** 2 / n + gamma ** 3 * (1.0 - delta) * (
        12.0 * L * sigma ** 2 / delta + 96.0 * beta * L * sigma ** 2 / delta ** 2)
    return (1.0 - con) * psi_t - gamma * f_gap_t / 4.0 + noise
