import itertools

import numpy as np
import pytest

from compsgd.compressors import (CompressorOp, SketchBasis, estimate_moments,
                                 make_identity, make_rand_k_biased,
                                 make_rand_k_unbiased, make_sketch, make_top_k,
                                 parse_compressor, rand_k_biased,
                                 rand_k_unbiased, rescale_to_compressor,
                                 sample_applications, sketch, top_k)
from compsgd.errors import ValidationError
from compsgd.rng import RngStream


def _rng(seed=0):
    return RngStream(seed).generator()


# ---------------------------------------------------------------------------
# top-k
# ---------------------------------------------------------------------------

def test_top_k_definition():
    assert np.array_equal(top_k([3.0, -1.0, 2.0], k=1), [3.0, 0.0, 0.0])


def test_top_k_full_is_identity():
    x = _rng(1).standard_normal(6)
    assert np.array_equal(top_k(x, 6), x)


def test_top_k_equal_magnitudes_hits_contraction_bound():
    # all-equal entries: ||C(x)-x||^2 / ||x||^2 = 1 - k/d exactly
    x = np.ones(4)
    y = top_k(x, 2)
    assert np.array_equal(y, [1.0, 1.0, 0.0, 0.0])  # ties: lowest index wins
    assert np.sum((y - x) ** 2) / np.sum(x ** 2) == 0.5


def test_top_k_tie_break_lowest_index():
    assert np.array_equal(top_k([-2.0, 2.0, 2.0], 1), [-2.0, 0.0, 0.0])


def test_top_k_out_of_range():
    with pytest.raises(ValidationError):
        top_k([1.0, 2.0], 0)
    with pytest.raises(ValidationError):
        top_k([1.0, 2.0], 3)


def test_top_k_contraction_bound_deterministic():
    g = _rng(7)
    op = make_top_k(16, 5)
    bound = 1.0 - op.delta
    for _ in range(2000):
        x = g.standard_normal(16)
        y = op.apply(x)
        assert np.sum((y - x) ** 2) <= bound * np.sum(x ** 2) + 1e-15


# ---------------------------------------------------------------------------
# rand-k
# ---------------------------------------------------------------------------

def test_rand_k_biased_full_and_zero():
    x = _rng(2).standard_normal(5)
    assert np.array_equal(rand_k_biased(x, 5, _rng(3)), x)
    assert np.array_equal(rand_k_biased(np.zeros(5), 2, _rng(3)), np.zeros(5))


def test_rand_k_biased_two_outcome_enumeration():
    # d=2, k=1, x=[1,1]: outcomes [1,0] and [0,1] each drop one unit entry,
    # so E||C(x)-x||^2 = 1 = (1 - 1/2) ||x||^2
    x = np.array([1.0, 1.0])
    op = make_rand_k_biased(2, 1)
    outcomes = {tuple(op.apply(x, _rng(s))) for s in range(40)}
    assert outcomes == {(1.0, 0.0), (0.0, 1.0)}
    rep = estimate_moments(op, x, samples=40_000, rng=_rng(5))
    exact = 0.5  # enumeration: both outcomes contract by exactly ||x||^2/2
    assert abs(rep.contraction_ratio - exact) <= 4 * rep.contraction_stderr


def test_rand_k_unbiased_two_outcome_enumeration():
    a, b = 0.7, -1.3
    op = make_rand_k_unbiased(2, 1)
    outcomes = {tuple(op.apply(np.array([a, b]), _rng(s))) for s in range(40)}
    assert outcomes == {(2 * a, 0.0), (0.0, 2 * b)}
    assert op.omega == 1.0
    # enumerated second moment: (4a^2 + 4b^2)/2 = 2 (a^2+b^2) = (1+omega)||x||^2
    rep = estimate_moments(op, np.array([a, b]), samples=40_000, rng=_rng(6))
    assert abs(rep.second_moment_ratio - 2.0) <= 4 * rep.second_moment_stderr


def test_rand_k_unbiased_full_is_identity():
    x = _rng(4).standard_normal(7)
    assert np.array_equal(rand_k_unbiased(x, 7, _rng(0)), x)


def test_rand_k_unbiased_monte_carlo_mean():
    # d=10, k=1: sample mean within 3 standard errors of x, componentwise
    op = make_rand_k_unbiased(10, 1)
    x = _rng(8).standard_normal(10)
    rep = estimate_moments(op, x, samples=100_000, rng=_rng(9))
    assert rep.bias_z_max <= 3.0


def test_rand_k_out_of_range():
    with pytest.raises(ValidationError):
        make_rand_k_unbiased(4, 5)
    with pytest.raises(ValidationError):
        make_rand_k_biased(4, 0)


# ---------------------------------------------------------------------------
# sketches
# ---------------------------------------------------------------------------

def test_sketch_unit_vector_projector():
    basis = SketchBasis(np.array([1.0, 0.0, 0.0]))
    assert np.allclose(sketch(np.array([5.0, 2.0, -1.0]), basis), [5.0, 0.0, 0.0])


def test_sketch_full_basis_is_identity():
    x = _rng(11).standard_normal(4)
    basis = SketchBasis(np.eye(4))
    assert np.allclose(sketch(x, basis), x, atol=1e-12)


def test_sketch_idempotent():
    g = _rng(12)
    basis = SketchBasis(g.standard_normal((6, 2)))
    x = g.standard_normal(6)
    once = sketch(x, basis)
    assert np.allclose(sketch(once, basis), once, atol=1e-10)


def test_sketch_projector_symmetric_idempotent():
    g = _rng(13)
    for p in (1, 3, 6):
        P = SketchBasis(g.standard_normal((6, p))).projector
        assert np.linalg.norm(P - P.T) <= 1e-10 * max(1.0, np.linalg.norm(P))
        assert np.linalg.norm(P @ P - P) <= 1e-10 * max(1.0, np.linalg.norm(P))


def test_sketch_rank_deficient_rejected():
    V = np.ones((5, 2))
    with pytest.raises(ValidationError):
        SketchBasis(V)


def test_sketch_linearity():
    g = _rng(14)
    basis = SketchBasis(g.standard_normal((8, 3)))
    x, y = g.standard_normal(8), g.standard_normal(8)
    a, b = 1.7, -0.4
    lhs = sketch(a * x + b * y, basis)
    rhs = a * sketch(x, basis) + b * sketch(y, basis)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(lhs))


def test_coordinate_sketch_op_moments():
    op = make_sketch(8, 2, "coord")
    assert op.delta == 0.25
    x = _rng(15).standard_normal(8)
    rep = estimate_moments(op, x, samples=40_000, rng=_rng(16))
    assert rep.contraction_ratio <= (1 - op.delta) + 4 * rep.contraction_stderr


def test_gauss_sketch_realization_is_projection():
    op = make_sketch(6, 2, "gauss")
    real = op.realize(_rng(17))
    P = real.projector
    assert np.linalg.norm(P @ P - P) <= 1e-10


# ---------------------------------------------------------------------------
# rescaling quantizers to compressors
# ---------------------------------------------------------------------------

def test_rescale_identity():
    out = rescale_to_compressor(make_identity(3))
    assert out.kind == "identity" and out.delta == 1.0


def test_rescale_delta_value_exact():
    for k, d in [(1, 2), (1, 10), (3, 7)]:
        q = make_rand_k_unbiased(d, k)
        out = rescale_to_compressor(q)
        assert out.delta == 1.0 / (1.0 + q.omega)


def test_rescale_rejects_biased():
    with pytest.raises(ValidationError):
        rescale_to_compressor(make_top_k(4, 1))


def test_rescaled_rand1_two_outcome_enumeration():
    # rand-1-unbiased on d=2 rescaled by 1/2: outcomes [1,0], [0,1] on x=[1,1]
    op = rescale_to_compressor(make_rand_k_unbiased(2, 1))
    x = np.array([1.0, 1.0])
    outcomes = {tuple(op.apply(x, _rng(s))) for s in range(40)}
    assert outcomes == {(1.0, 0.0), (0.0, 1.0)}
    rep = estimate_moments(op, x, samples=40_000, rng=_rng(18))
    assert abs(rep.contraction_ratio - 0.5) <= 4 * rep.contraction_stderr


def test_rescaled_satisfies_compressor_bound():
    op = rescale_to_compressor(make_rand_k_unbiased(10, 2))
    x = _rng(19).standard_normal(10)
    rep = estimate_moments(op, x, samples=60_000, rng=_rng(20))
    assert rep.contraction_ratio <= (1 - op.delta) * (1 + 4 * rep.contraction_stderr
                                                      / max(rep.contraction_ratio, 1e-12))


# ---------------------------------------------------------------------------
# moment oracle
# ---------------------------------------------------------------------------

def test_estimate_moments_identity():
    x = _rng(21).standard_normal(5)
    rep = estimate_moments(make_identity(5), x, samples=100, rng=_rng(22))
    assert rep.bias_norm == 0.0
    assert rep.second_moment_ratio == pytest.approx(1.0)
    assert rep.contraction_ratio == 0.0


def test_estimate_moments_zero_map():
    class ZeroOp:
        kind = "zero-stub"
        d = 4
        def apply(self, x, rng=None):
            return np.zeros_like(x)
    x = np.array([1.0, -2.0, 0.5, 3.0])
    rep = estimate_moments(ZeroOp(), x, samples=64, rng=_rng(23))
    assert rep.contraction_ratio == pytest.approx(1.0)
    assert rep.second_moment_ratio == 0.0


def test_estimate_moments_zero_input_signalled():
    with pytest.raises(ValidationError):
        estimate_moments(make_identity(3), np.zeros(3), samples=10, rng=_rng(0))


def test_rand1_unbiased_second_moment_within_two_percent():
    op = make_rand_k_unbiased(10, 1)
    x = _rng(24).standard_normal(10)
    rep = estimate_moments(op, x, samples=100_000, rng=_rng(25))
    assert abs(rep.second_moment_ratio - 10.0) <= 0.02 * 10.0


def test_quantizer_bias_and_second_moment_bounds():
    g = _rng(26)
    for op in (make_rand_k_unbiased(16, 1), make_rand_k_unbiased(16, 4),
               make_identity(16)):
        for _ in range(5):
            x = g.standard_normal(16)
            rep = estimate_moments(op, x, samples=20_000, rng=g)
            assert rep.bias_z_max <= 4.0
            rel = rep.second_moment_stderr / max(rep.second_moment_ratio, 1e-12)
            assert rep.second_moment_ratio <= (1 + op.omega) * (1 + 4 * rel)


def test_rand_k_biased_contraction_in_expectation():
    op = make_rand_k_biased(12, 3)
    x = _rng(27).standard_normal(12)
    rep = estimate_moments(op, x, samples=60_000, rng=_rng(28))
    assert rep.contraction_ratio <= (1 - op.delta) * (
        1 + 4 * rep.contraction_stderr / max(rep.contraction_ratio, 1e-12))


def test_sample_applications_matches_sequential_statistics():
    op = make_rand_k_unbiased(6, 2)
    x = _rng(29).standard_normal(6)
    batch = sample_applications(op, x, 4000, _rng(30))
    assert batch.shape == (4000, 6)
    # every row keeps exactly k entries, scaled by d/k
    nz = np.count_nonzero(batch, axis=1)
    assert np.all(nz <= 2)
    mean = batch.mean(axis=0)
    assert np.linalg.norm(mean - x) < 0.2


def test_determinism_same_stream_same_output():
    op = make_rand_k_unbiased(9, 2)
    x = _rng(31).standard_normal(9)
    s = RngStream(5, worker=2, round_index=40)
    assert np.array_equal(op.apply(x, s), op.apply(x, s))


# ---------------------------------------------------------------------------
# spec strings
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("spec,kind,param", [
    ("topk:8", "top-k", 8),
    ("randk-biased:4", "rand-k-biased", 4),
    ("randk-unbiased:4", "rand-k-unbiased", 4),
    ("sketch:coord:16", "sketch", 16),
    ("sketch:gauss:3", "sketch", 3),
    ("identity", "identity", 32),
])
def test_parse_compressor(spec, kind, param):
    op = parse_compressor(spec, 32)
    assert op.kind == kind and op.k == param and op.d == 32


def test_parse_rescaled():
    op = parse_compressor("rescaled(randk-unbiased:4)", 16)
    assert op.kind == "rescaled-quantizer"
    assert op.delta == 1.0 / (1.0 + (16 / 4 - 1))
    assert op.describe() == "rescaled(randk-unbiased:4)"


@pytest.mark.parametrize("bad", ["topk", "topk:0", "topk:99", "frobnicate:3",
                                 "sketch:coord", "rescaled(topk:2)", "randk-unbiased:x"])
def test_parse_errors(bad):
    with pytest.raises(ValidationError):
        parse_compressor(bad, 16)


def test_all_kinds_marked_linear():
    d = 8
    ops = [make_top_k(d, 2), make_rand_k_biased(d, 2), make_rand_k_unbiased(d, 2),
           make_sketch(d, 2), make_identity(d),
           rescale_to_compressor(make_rand_k_unbiased(d, 2))]
    assert all(op.linear for op in ops)


def test_realizations_are_linear_maps():
    g = _rng(33)
    x, y = g.standard_normal(8), g.standard_normal(8)
    for op in (make_rand_k_unbiased(8, 3), make_sketch(8, 2, "gauss"),
               make_top_k(8, 2)):
        real = op.realize(g, signal=x)
        lhs = real.apply(1.5 * x - 2.0 * y)
        rhs = 1.5 * real.apply(x) - 2.0 * real.apply(y)
        assert np.allclose(lhs, rhs, atol=1e-12)
