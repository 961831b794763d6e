"""Synthetic distributed objectives with controllable heterogeneity.

A suite holds n node objectives f_i sharing one PSD quadratic term,
    f_i(x) = 0.5 x^T A x - b_i^T x (+ optional smooth bounded regularizer),
so the average Hessian spectrum, the noise level, and the gradient
dissimilarity at the optimum are all set exactly at generation time:
heterogeneity enters only through zero-sum shifts of the linear terms b_i,
which makes (1/n) sum_i ||grad f_i(x*)||^2 a free dial while every node
keeps the same smoothness constant.

Stochastic oracles add isotropic Gaussian noise with E ||xi||^2 = sigma^2
held exactly (covariance sigma^2/d I), so noise-floor predictions are sharp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoUniqueOptimumError, ValidationError
from .rng import LANE_SUITE, as_generator, lane_generator

_REG_FRACTION = 20      # nonconvex kind: c = L / _REG_FRACTION
_QUAD_FLOOR = 100       # nonconvex kind: quadratic part min eigenvalue L / _QUAD_FLOOR


@dataclass(frozen=True)
class QuadraticNode:
    """One node objective f_i(x) = 0.5 x^T A x - b^T x + c."""

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def value(self, x):
        return 0.5 * (x @ (self.A @ x)) - self.b @ x + self.c

    def grad(self, x):
        return self.A @ x - self.b


@dataclass(eq=False)
class ProblemSuite:
    """n node objectives with oracle access, known optimum, and exact
    dissimilarity constants. Immutable after generation."""

    kind: str                 # 'quadratic' | 'nonconvex-regularized'
    A: np.ndarray             # shared d x d quadratic term
    B: np.ndarray             # (n, d) per-node linear terms
    reg_coeff: float          # regularizer weight c (0 for quadratic kind)
    L: float
    mu: float
    sigma: float
    x_star: np.ndarray
    f_star: float
    zeta_star_sq: float
    consts: np.ndarray | None = None   # (n,) per-node value offsets

    def __post_init__(self):
        self.b_mean = self.B.mean(axis=0)
        if self.consts is None:
            self.consts = np.zeros(self.B.shape[0])
        self.const_mean = float(self.consts.mean())

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def node(self, i: int) -> QuadraticNode:
        if not 0 <= i < self.n:
            raise ValidationError(f"node index {i} out of range for n={self.n}")
        return QuadraticNode(self.A, self.B[i], float(self.consts[i]))

    @property
    def nodes(self):
        return [self.node(i) for i in range(self.n)]


# regularizer r(x) = sum_j x_j^2 / (1 + x_j^2): smooth, bounded, nonnegative

def _reg_value(x):
    x2 = x * x
    return float(np.sum(x2 / (1.0 + x2)))


def _reg_grad(x):
    return 2.0 * x / (1.0 + x * x) ** 2


def _reg_hess_diag(x):
    x2 = x * x
    return (2.0 - 6.0 * x2) / (1.0 + x2) ** 3


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def node_value(suite: ProblemSuite, i: int, x: np.ndarray) -> float:
    v = suite.node(i).value(x)
    if suite.reg_coeff:
        v += suite.reg_coeff * _reg_value(x)
    return float(v)


def oracle_exact(suite: ProblemSuite, i: int, x: np.ndarray):
    """Exact (value, gradient) of f_i at x."""
    node = suite.node(i)
    v = node.value(x)
    g = node.grad(x)
    if suite.reg_coeff:
        v += suite.reg_coeff * _reg_value(x)
        g = g + suite.reg_coeff * _reg_grad(x)
    return float(v), g


def oracle_stochastic(suite: ProblemSuite, i: int, x: np.ndarray, rng) -> np.ndarray:
    """Gradient of f_i plus isotropic noise with E ||xi||^2 = sigma^2
    exactly. sigma = 0 returns the exact gradient bitwise (no draw)."""
    _, g = oracle_exact(suite, i, x)
    if suite.sigma == 0.0:
        return g
    gen = as_generator(rng)
    return g + (suite.sigma / math.sqrt(suite.d)) * gen.standard_normal(suite.d)


def grad_all(suite: ProblemSuite, x: np.ndarray) -> np.ndarray:
    """(n, d) matrix of all node gradients at x."""
    G = (suite.A @ x)[None, :] - suite.B
    if suite.reg_coeff:
        G = G + suite.reg_coeff * _reg_grad(x)[None, :]
    return G


def f_value(suite: ProblemSuite, x: np.ndarray) -> float:
    v = 0.5 * (x @ (suite.A @ x)) - suite.b_mean @ x + suite.const_mean
    if suite.reg_coeff:
        v += suite.reg_coeff * _reg_value(x)
    return float(v)


def f_grad(suite: ProblemSuite, x: np.ndarray) -> np.ndarray:
    g = suite.A @ x - suite.b_mean
    if suite.reg_coeff:
        g = g + suite.reg_coeff * _reg_grad(x)
    return g


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _haar_orthogonal(g: np.random.Generator, d: int) -> np.ndarray:
    M = g.standard_normal((d, d))
    Q, R = np.linalg.qr(M)
    return Q * np.sign(np.diag(R))


def _spd_with_spectrum(g, d, lo, hi):
    if d == 1:
        return np.array([[hi]])
    lam = np.empty(d)
    lam[0], lam[-1] = lo, hi
    lam[1:-1] = np.sort(g.uniform(lo, hi, d - 2))
    Q = _haar_orthogonal(g, d)
    A = (Q * lam) @ Q.T
    return 0.5 * (A + A.T)


def _zero_sum_offsets(g, n, d, target_sq):
    """(n, d) rows summing to ~0 with (1/n) sum ||u_i||^2 = target_sq."""
    if target_sq == 0.0 or n == 1:
        if target_sq > 0.0:
            raise ValidationError("a single node cannot have nonzero dissimilarity")
        return np.zeros((n, d))
    Z = g.standard_normal((n, d))
    Z = Z - Z.mean(axis=0)
    scale_sq = float(np.einsum("ij,ij->", Z, Z) / n)
    if scale_sq == 0.0:
        raise ValidationError("degenerate offset draw")
    return Z * math.sqrt(target_sq / scale_sq)


def _suite_rng(seed):
    if isinstance(seed, (int, np.integer)):
        return lane_generator(int(seed), LANE_SUITE)
    return as_generator(seed)


def gen_quadratic_suite(d: int, n: int, mu: float, L: float,
                        zeta_star_sq: float = 0.0, sigma: float = 0.0,
                        seed=0) -> ProblemSuite:
    """Quadratic suite whose mean Hessian spectrum spans [mu, L] and whose
    measured dissimilarity at the optimum equals zeta_star_sq."""
    if not (0.0 <= mu <= L) or L <= 0.0:
        raise ValidationError(f"need 0 <= mu <= L and L > 0, got mu={mu}, L={L}")
    if n < 1 or d < 1:
        raise ValidationError("need n >= 1 and d >= 1")
    if zeta_star_sq < 0.0 or sigma < 0.0:
        raise ValidationError("zeta_star_sq and sigma must be nonnegative")
    if d == 1 and mu != L:
        raise ValidationError("d = 1 admits a single eigenvalue; set mu = L")
    g = _suite_rng(seed)
    A = _spd_with_spectrum(g, d, mu, L)
    x_star = g.standard_normal(d) / math.sqrt(d)
    U = _zero_sum_offsets(g, n, d, zeta_star_sq)
    B = (A @ x_star)[None, :] + U
    suite = ProblemSuite(kind="quadratic", A=A, B=B, reg_coeff=0.0, L=float(L),
                         mu=float(mu), sigma=float(sigma), x_star=x_star,
                         f_star=0.0, zeta_star_sq=float(np.einsum("ij,ij->", U, U) / n))
    suite.f_star = f_value(suite, x_star)
    return suite


def gen_nonconvex_suite(d: int, n: int, L: float, zeta_star_sq: float = 0.0,
                        sigma: float = 0.0, seed=0,
                        reg_coeff: float | None = None) -> ProblemSuite:
    """Quadratic suite plus the bounded regularizer c * sum x_j^2/(1+x_j^2),
    with c sized so total smoothness stays <= L (the regularizer is
    2-smooth per coordinate). Bounded below, gradient in closed form,
    optimum located numerically by Newton refinement."""
    if L <= 0.0:
        raise ValidationError("need L > 0")
    c = L / _REG_FRACTION if reg_coeff is None else float(reg_coeff)
    if c < 0.0 or 2.0 * c >= L:
        raise ValidationError("regularizer weight must satisfy 0 <= c < L/2")
    mu_q = L / _QUAD_FLOOR
    L_q = L - 2.0 * c
    base = gen_quadratic_suite(d, n, mu_q, L_q, zeta_star_sq, sigma, seed)
    suite = ProblemSuite(kind="nonconvex-regularized", A=base.A, B=base.B,
                         reg_coeff=c, L=float(L), mu=0.0, sigma=float(sigma),
                         x_star=base.x_star, f_star=0.0, zeta_star_sq=0.0)
    x = _newton_minimize(suite, base.x_star)
    suite.x_star = x
    suite.f_star = f_value(suite, x)
    G = grad_all(suite, x)
    suite.zeta_star_sq = float(np.einsum("ij,ij->", G, G) / n)
    return suite


def _newton_minimize(suite, x0, tol=1e-12, max_iter=100):
    x = x0.copy()
    scale = max(1.0, float(np.linalg.norm(suite.b_mean)))
    lam = 0.0
    for _ in range(max_iter):
        g = f_grad(suite, x)
        gn = float(np.linalg.norm(g))
        if gn <= tol * scale:
            return x
        H = suite.A + suite.reg_coeff * np.diag(_reg_hess_diag(x))
        step = None
        for trial in range(8):
            try:
                step = np.linalg.solve(H + lam * np.eye(suite.d), g)
            except np.linalg.LinAlgError:
                lam = max(2.0 * lam, 1e-8 * suite.L)
                continue
            if float(np.linalg.norm(f_grad(suite, x - step))) < gn:
                break
            lam = max(2.0 * lam, 1e-8 * suite.L)
        if step is None:
            raise ValidationError("Newton refinement failed on nonconvex suite")
        x = x - step
        lam *= 0.25
    g = f_grad(suite, x)
    if float(np.linalg.norm(g)) > 1e-8 * scale:
        raise ValidationError("nonconvex optimum refinement did not converge")
    return x


def solve_optimum(suite: ProblemSuite):
    """Stationary point of the average quadratic: solve (mean A) x = mean b
    with one step of iterative refinement."""
    if suite.kind != "quadratic":
        raise ValidationError("solve_optimum handles the quadratic kind only")
    A, b = suite.A, suite.b_mean
    scale = max(1.0, float(np.linalg.norm(b)))
    if suite.mu > 0.0:
        x = np.linalg.solve(A, b)
        x = x + np.linalg.solve(A, b - A @ x)
    else:
        x, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
        if rank < suite.d and float(np.linalg.norm(A @ x - b)) > 1e-10 * scale:
            raise NoUniqueOptimumError("singular mean Hessian with inconsistent linear terms")
    if float(np.linalg.norm(A @ x - b)) > 1e-10 * scale:
        raise NoUniqueOptimumError("optimum solve did not reach first-order tolerance")
    return x, f_value(suite, x)


# ---------------------------------------------------------------------------
# dissimilarity measurement
# ---------------------------------------------------------------------------

Z_SQ_GRID = np.arange(1.0, 16.0 + 0.25, 0.25)


@dataclass(frozen=True)
class DissimilarityReport:
    """Fitted (zeta^2, Z^2) certificate for the gradient-spread bound
    (1/n) sum ||grad f_i(x)||^2 <= zeta^2 + Z^2 ||grad f(x)||^2."""

    zeta_sq: float        # best-fit pair, minimal zeta^2 over the Z^2 grid
    Z_sq: float
    zeta_star_sq: float   # exact spread at x_star
    sample_points: int
    zeta_sq_z1: float     # smallest feasible zeta^2 when Z^2 is pinned to 1


def measure_dissimilarity(suite: ProblemSuite, points) -> DissimilarityReport:
    points = [np.asarray(p, dtype=float) for p in points]
    if not points:
        raise ValidationError("need at least one evaluation point")
    spread = np.empty(len(points))
    gsq = np.empty(len(points))
    for j, x in enumerate(points):
        G = grad_all(suite, x)
        spread[j] = np.einsum("ij,ij->", G, G) / suite.n
        gsq[j] = G.mean(axis=0) @ G.mean(axis=0)
    zeta_z1 = float(max(0.0, np.max(spread - gsq)))
    best = (zeta_z1, 1.0)
    tol = 1e-12 * max(1.0, float(np.max(spread)))  # ties go to the smaller Z^2
    for zsq in Z_SQ_GRID[1:]:
        cand = float(max(0.0, np.max(spread - zsq * gsq)))
        if cand < best[0] - tol:
            best = (cand, float(zsq))
    Gs = grad_all(suite, suite.x_star)
    zeta_star = float(np.einsum("ij,ij->", Gs, Gs) / suite.n)
    return DissimilarityReport(zeta_sq=best[0], Z_sq=best[1],
                               zeta_star_sq=zeta_star,
                               sample_points=len(points), zeta_sq_z1=zeta_z1)


# ---------------------------------------------------------------------------
# plain-text serialization
# ---------------------------------------------------------------------------

_MAGIC = "compsgd-suite-v1"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_suite(suite: ProblemSuite, path) -> None:
    """Write the suite to a plain-text matrix file (17 significant digits,
    row-major), sufficient to reload it bitwise."""
    lines = [_MAGIC,
             f"kind {suite.kind}",
             f"d {suite.d}",
             f"n {suite.n}",
             f"L {_fmt(suite.L)}",
             f"mu {_fmt(suite.mu)}",
             f"sigma {_fmt(suite.sigma)}",
             f"reg_coeff {_fmt(suite.reg_coeff)}",
             f"f_star {_fmt(suite.f_star)}",
             f"zeta_star_sq {_fmt(suite.zeta_star_sq)}"]
    for name, M in (("A", suite.A), ("B", suite.B), ("x_star", suite.x_star[None, :]),
                    ("consts", suite.consts[None, :])):
        lines.append(f"matrix {name} {M.shape[0]} {M.shape[1]}")
        for row in M:
            lines.append(" ".join(_fmt(v) for v in row))
    lines.append("end")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_suite(path) -> ProblemSuite:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _MAGIC:
        raise ValidationError(f"{path}: not a {_MAGIC} file")
    scalars = {}
    matrices = {}
    i = 1
    while i < len(lines):
        ln = lines[i].strip()
        i += 1
        if not ln or ln == "end":
            continue
        parts = ln.split()
        if parts[0] == "matrix":
            name, rows, cols = parts[1], int(parts[2]), int(parts[3])
            M = np.empty((rows, cols))
            for r in range(rows):
                vals = lines[i].split()
                if len(vals) != cols:
                    raise ValidationError(f"{path}: row {r} of {name} has {len(vals)} values, expected {cols}")
                M[r] = [float(v) for v in vals]
                i += 1
            matrices[name] = M
        else:
            scalars[parts[0]] = parts[1]
    try:
        consts = matrices["consts"][0] if "consts" in matrices else None
        suite = ProblemSuite(kind=scalars["kind"], A=matrices["A"], B=matrices["B"],
                             reg_coeff=float(scalars["reg_coeff"]),
                             L=float(scalars["L"]), mu=float(scalars["mu"]),
                             sigma=float(scalars["sigma"]),
                             x_star=matrices["x_star"][0],
                             f_star=float(scalars["f_star"]),
                             zeta_star_sq=float(scalars["zeta_star_sq"]),
                             consts=consts)
    except KeyError as exc:
        raise ValidationError(f"{path}: missing field {exc}") from None
    if suite.B.shape[1] != suite.d or suite.x_star.shape[0] != suite.d:
        raise ValidationError(f"{path}: inconsistent dimensions")
    return suite
