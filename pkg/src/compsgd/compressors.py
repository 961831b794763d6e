"""Contractive compressors and unbiased quantizers.

Two families of lossy maps R^d -> R^d are provided:

* contractive compressors with a parameter ``delta`` in (0, 1]:
  ``E ||C(x) - x||^2 <= (1 - delta) ||x||^2``
* unbiased quantizers with a parameter ``omega`` >= 0:
  ``E Q(x) = x`` and ``E ||Q(x)||^2 <= (1 + omega) ||x||^2``

Concrete kinds: magnitude top-k, random-k with and without the unbiasing
d/k rescale, orthogonal-projection sketches onto random coordinate or
Gaussian subspaces, the identity, and the 1/(1+omega) rescale that turns
any quantizer into a compressor.

All maps are linear for a fixed internal random draw, which is what the
synchronized (shared per-round randomness) training modes rely on; for
top-k the fixed quantity is the selected support.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .rng import as_generator

QUANTIZER_KINDS = ("rand-k-unbiased", "identity")
COMPRESSOR_KINDS = ("top-k", "rand-k-biased", "sketch", "rescaled-quantizer", "identity")

FLOAT_BITS = 64  # payload size used by the message-size heuristic


def _check_k(k: int, d: int, what: str = "k") -> int:
    k = int(k)
    if not 1 <= k <= d:
        raise ValidationError(f"{what}={k} out of range for dimension {d}")
    return k


# ---------------------------------------------------------------------------
# sketch bases
# ---------------------------------------------------------------------------

class SketchBasis:
    """Orthogonal projector onto span(V) for a full-column-rank V (d x p).

    The projector V (V^T V)^-1 V^T is computed once via SVD (rank revealing);
    V is rejected when its condition exceeds 1e8. Coordinate-subspace bases
    get an index fast path so projection is exact masking.
    """

    RANK_RTOL = 1e-8

    def __init__(self, V: np.ndarray):
        V = np.asarray(V, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        if V.ndim != 2 or V.shape[1] < 1 or V.shape[1] > V.shape[0]:
            raise ValidationError(f"sketch basis must be d x p with 1 <= p <= d, got {V.shape}")
        self.V = V
        self.d, self.p = V.shape
        U, s, _ = np.linalg.svd(V, full_matrices=False)
        if s[-1] <= self.RANK_RTOL * s[0]:
            raise ValidationError(
                f"sketch basis is rank deficient (condition {s[0] / max(s[-1], 1e-300):.2e})")
        self.projector = U @ U.T
        self.coords = None  # set by from_coordinates

    @classmethod
    def from_coordinates(cls, d: int, indices) -> "SketchBasis":
        idx = np.asarray(indices, dtype=int)
        if idx.size != np.unique(idx).size:
            raise ValidationError("coordinate sketch indices must be distinct")
        _check_k(idx.size, d, "p")
        if idx.min() < 0 or idx.max() >= d:
            raise ValidationError("coordinate sketch index out of range")
        V = np.zeros((d, idx.size))
        V[idx, np.arange(idx.size)] = 1.0
        basis = cls(V)
        basis.coords = idx
        basis.projector = np.diag(V.sum(axis=1))
        return basis

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.coords is not None:
            out = np.zeros_like(x)
            out[self.coords] = x[self.coords]
            return out
        return self.projector @ x


def sketch(x: np.ndarray, basis: SketchBasis) -> np.ndarray:
    """Project x onto span(basis.V)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != basis.d:
        raise ValidationError(f"sketch basis is for dimension {basis.d}, got {x.shape[-1]}")
    return basis.apply(x)


# ---------------------------------------------------------------------------
# fixed-randomness realizations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearRealization:
    """One concrete draw of a compressor: a linear map applied identically
    wherever it is reused within a round (synchronized mode)."""

    coords: np.ndarray | None = None   # kept coordinates, masking path
    scale: float = 1.0
    projector: np.ndarray | None = None  # dense path (Gaussian sketches)
    is_identity: bool = False

    def apply(self, v: np.ndarray) -> np.ndarray:
        if self.is_identity:
            return v
        if self.coords is not None:
            out = np.zeros_like(v)
            if self.scale == 1.0:
                out[self.coords] = v[self.coords]
            else:
                out[self.coords] = self.scale * v[self.coords]
            return out
        out = self.projector @ v
        if self.scale != 1.0:
            out = self.scale * out
        return out


# ---------------------------------------------------------------------------
# operator description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompressorOp:
    """A (possibly randomized) compression map tagged with its parameter.

    Exactly one of (delta, omega) governs the guarantee, except for the
    identity which is both a delta=1 compressor and an omega=0 quantizer.
    """

    kind: str
    d: int
    k: int | None = None
    delta: float | None = None
    omega: float | None = None
    linear: bool = True
    sketch_kind: str | None = None   # 'coord' | 'gauss'
    inner: "CompressorOp | None" = field(default=None)

    @property
    def is_quantizer(self) -> bool:
        return self.omega is not None

    @property
    def is_compressor(self) -> bool:
        return self.delta is not None

    def realize(self, rng, signal: np.ndarray | None = None) -> LinearRealization:
        """Draw the internal randomness once and return the resulting map.

        ``signal`` feeds the data-adaptive kinds: top-k selects the support
        of the signal (in per-worker mode the signal is the worker's own
        input; in synchronized mode it is the aggregated one).
        """
        if self.kind == "identity":
            return LinearRealization(is_identity=True)
        if self.kind == "top-k":
            if signal is None:
                raise ValidationError("top-k realization needs a signal to select its support")
            return LinearRealization(coords=_top_k_support(signal, self.k))
        if self.kind == "rand-k-biased":
            return LinearRealization(coords=_draw_subset(as_generator(rng), self.d, self.k))
        if self.kind == "rand-k-unbiased":
            idx = _draw_subset(as_generator(rng), self.d, self.k)
            return LinearRealization(coords=idx, scale=self.d / self.k)
        if self.kind == "sketch":
            g = as_generator(rng)
            if self.sketch_kind == "coord":
                return LinearRealization(coords=_draw_subset(g, self.d, self.k))
            V = g.standard_normal((self.d, self.k))
            return LinearRealization(projector=SketchBasis(V).projector)
        if self.kind == "rescaled-quantizer":
            base = self.inner.realize(rng, signal)
            s = 1.0 / (1.0 + self.inner.omega)
            if base.is_identity:
                return LinearRealization(coords=np.arange(self.d), scale=s)
            return LinearRealization(coords=base.coords, scale=base.scale * s,
                                     projector=base.projector)
        raise ValidationError(f"unknown compressor kind {self.kind!r}")

    def apply(self, x: np.ndarray, rng=None) -> np.ndarray:
        """Apply one independent draw of the map to x."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValidationError(f"operator is for dimension {self.d}, got {x.shape[-1]}")
        return self.realize(rng, signal=x).apply(x)

    def encoded_bits_estimate(self) -> float:
        """Heuristic message size in bits, O(p log d + B) style; reported as
        an estimate only, no actual encoding is performed."""
        if self.kind == "identity":
            return float(self.d * FLOAT_BITS)
        if self.kind == "rescaled-quantizer":
            return self.inner.encoded_bits_estimate()
        nnz = self.k
        return float(nnz * (math.ceil(math.log2(max(self.d, 2))) + FLOAT_BITS))

    def describe(self) -> str:
        if self.kind == "identity":
            return "identity"
        if self.kind == "rescaled-quantizer":
            return f"rescaled({self.inner.describe()})"
        if self.kind == "sketch":
            return f"sketch:{self.sketch_kind}:{self.k}"
        short = {"top-k": "topk", "rand-k-biased": "randk-biased",
                 "rand-k-unbiased": "randk-unbiased"}[self.kind]
        return f"{short}:{self.k}"


def _top_k_support(x: np.ndarray, k: int) -> np.ndarray:
    # stable sort on negated magnitudes: lowest index wins among ties
    order = np.argsort(-np.abs(x), kind="stable")
    return order[:k]


def draw_index_subset(g: np.random.Generator, d: int, k: int) -> np.ndarray:
    """Uniform k-subset of [0, d). k == 1 keeps the hot path cheap; the draw
    method is fixed per (d, k) so stream consumption is identical across
    matched runs."""
    if k == 1:
        return g.integers(0, d, size=1)
    return g.choice(d, size=k, replace=False)


_draw_subset = draw_index_subset


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def make_identity(d: int) -> CompressorOp:
    return CompressorOp("identity", d=d, k=d, delta=1.0, omega=0.0)


def make_top_k(d: int, k: int) -> CompressorOp:
    k = _check_k(k, d)
    return CompressorOp("top-k", d=d, k=k, delta=k / d)


def make_rand_k_biased(d: int, k: int) -> CompressorOp:
    k = _check_k(k, d)
    return CompressorOp("rand-k-biased", d=d, k=k, delta=k / d)


def make_rand_k_unbiased(d: int, k: int) -> CompressorOp:
    k = _check_k(k, d)
    return CompressorOp("rand-k-unbiased", d=d, k=k, omega=d / k - 1.0)


def make_sketch(d: int, p: int, sketch_kind: str = "coord") -> CompressorOp:
    p = _check_k(p, d, "p")
    if sketch_kind not in ("coord", "gauss"):
        raise ValidationError(f"unknown sketch kind {sketch_kind!r}")
    return CompressorOp("sketch", d=d, k=p, delta=p / d, sketch_kind=sketch_kind)


def rescale_to_compressor(q: CompressorOp) -> CompressorOp:
    """Turn an omega-quantizer Q into the compressor x -> Q(x)/(1+omega),
    which contracts with delta = 1/(1+omega)."""
    if not q.is_quantizer:
        raise ValidationError(f"{q.kind} is not a quantizer")
    if q.kind == "identity":
        return make_identity(q.d)
    return CompressorOp("rescaled-quantizer", d=q.d, k=q.k,
                        delta=1.0 / (1.0 + q.omega), linear=q.linear, inner=q)


# convenience single-shot forms matching the mathematical definitions

def top_k(x: np.ndarray, k: int) -> np.ndarray:
    """Keep the k entries of largest magnitude (ties: lowest index wins)."""
    x = np.asarray(x, dtype=float)
    return make_top_k(x.shape[-1], k).apply(x)


def rand_k_biased(x: np.ndarray, k: int, rng) -> np.ndarray:
    """Keep a uniformly random k-subset of coordinates, no rescaling."""
    x = np.asarray(x, dtype=float)
    return make_rand_k_biased(x.shape[-1], k).apply(x, rng)


def rand_k_unbiased(x: np.ndarray, k: int, rng) -> np.ndarray:
    """Keep a uniformly random k-subset scaled by d/k (unbiased)."""
    x = np.asarray(x, dtype=float)
    return make_rand_k_unbiased(x.shape[-1], k).apply(x, rng)


# ---------------------------------------------------------------------------
# spec strings ("topk:8", "sketch:coord:16", "rescaled(randk-unbiased:4)", ...)
# ---------------------------------------------------------------------------

_RESCALED_RE = re.compile(r"^rescaled\((.+)\)$")


def parse_compressor(spec: str, d: int) -> CompressorOp:
    """Build an operator from its config-string form."""
    s = spec.strip()
    m = _RESCALED_RE.match(s)
    if m:
        return rescale_to_compressor(parse_compressor(m.group(1), d))
    if s == "identity":
        return make_identity(d)
    parts = s.split(":")
    try:
        if parts[0] == "topk" and len(parts) == 2:
            return make_top_k(d, int(parts[1]))
        if parts[0] == "randk-biased" and len(parts) == 2:
            return make_rand_k_biased(d, int(parts[1]))
        if parts[0] == "randk-unbiased" and len(parts) == 2:
            return make_rand_k_unbiased(d, int(parts[1]))
        if parts[0] == "sketch" and len(parts) == 3:
            return make_sketch(d, int(parts[2]), parts[1])
    except ValueError as exc:
        raise ValidationError(f"bad compressor spec {spec!r}: {exc}") from None
    raise ValidationError(f"bad compressor spec {spec!r}")


# ---------------------------------------------------------------------------
# Monte Carlo moment oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    """Empirical first/second moments of an operator at a fixed input."""

    samples: int
    mean: np.ndarray
    bias_norm: float
    bias_z_max: float              # max componentwise |bias| / stderr
    second_moment_ratio: float     # mean ||op(x)||^2 / ||x||^2
    second_moment_stderr: float
    contraction_ratio: float       # mean ||op(x) - x||^2 / ||x||^2
    contraction_stderr: float


def sample_applications(op: CompressorOp, x: np.ndarray, m: int, rng) -> np.ndarray:
    """Stack of m independent applications of op to x, vectorized where the
    kind allows. Draw order differs from m sequential apply() calls but is
    deterministic for a given stream."""
    g = as_generator(rng)
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    if x.shape != (d,) or d != op.d:
        raise ValidationError("input must be a vector matching the operator dimension")
    if op.kind == "identity":
        return np.tile(x, (m, 1))
    if op.kind == "top-k":
        return np.tile(op.apply(x), (m, 1))
    if op.kind in ("rand-k-biased", "rand-k-unbiased") or (
            op.kind == "sketch" and op.sketch_kind == "coord"):
        u = g.random((m, d))
        idx = np.argpartition(u, op.k - 1, axis=1)[:, :op.k]
        out = np.zeros((m, d))
        vals = x[idx]
        if op.kind == "rand-k-unbiased":
            vals = vals * (d / op.k)
        np.put_along_axis(out, idx, vals, axis=1)
        return out
    if op.kind == "rescaled-quantizer":
        return sample_applications(op.inner, x, m, g) / (1.0 + op.inner.omega)
    # dense per-draw kinds fall back to a loop
    return np.stack([op.apply(x, g) for _ in range(m)])


def estimate_moments(op: CompressorOp, x: np.ndarray, samples: int, rng) -> MomentReport:
    """Monte Carlo estimates of bias, second moment, and contraction at x."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    x = np.asarray(x, dtype=float)
    xx = float(x @ x)
    if xx == 0.0:
        raise ValidationError("moment ratios are undefined at x = 0")
    S = sample_applications(op, x, samples, rng)
    deterministic = bool(np.all(S == S[0]))
    if deterministic:
        mean = S[0].copy()
        se = np.zeros_like(mean)
    else:
        mean = S.mean(axis=0)
        se = S.std(axis=0, ddof=1) / math.sqrt(samples)
    bias = mean - x
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(bias) / se
    z = np.where(se > 0, z, np.where(np.abs(bias) > 0, np.inf, 0.0))
    r2 = np.einsum("ij,ij->i", S, S) / xx
    diff = S - x
    rc = np.einsum("ij,ij->i", diff, diff) / xx
    def _mean_se(v):
        mu = float(v.mean())
        s = float(v.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
        return mu, s
    r2_mean, r2_se = _mean_se(r2)
    rc_mean, rc_se = _mean_se(rc)
    return MomentReport(samples=samples, mean=mean,
                        bias_norm=float(np.linalg.norm(bias)),
                        bias_z_max=float(np.max(z)),
                        second_moment_ratio=r2_mean, second_moment_stderr=r2_se,
                        contraction_ratio=rc_mean, contraction_stderr=rc_se)
