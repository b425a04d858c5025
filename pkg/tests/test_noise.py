import numpy as np
import pytest

import stochflow as sf
from stochflow.errors import (
    GridMisalignedError,
    InvalidGridError,
    OutOfWindowError,
    TailNotNegligibleError,
)

COV1 = sf.CovarianceSpec.diagonal([1.0])
COV2 = sf.CovarianceSpec.diagonal([1.0, 0.5])


def test_sampling_is_deterministic():
    a = sf.sample_path(COV2, 1.0, 2.0, 0.01, 123)
    b = sf.sample_path(COV2, 1.0, 2.0, 0.01, 123)
    assert np.array_equal(a.increments, b.increments)


def test_forward_only_window_anchors_at_zero():
    p = sf.sample_path(COV1, 0.0, 1.0, 0.1, 5)
    assert p.t_min == 0.0
    assert p.value(0.0) == 0.0
    with pytest.raises(OutOfWindowError):
        p.value(-0.1)


def test_variance_of_unit_time_value():
    vals = []
    for seed in range(10_000):
        p = sf.sample_path(COV1, 0.0, 1.0, 0.05, seed)
        vals.append(p.value(1.0)[0])
    assert np.var(vals) == pytest.approx(1.0, abs=0.05)


def test_extension_stability_forward_and_backward():
    short = sf.sample_path(COV2, 1.0, 1.0, 0.01, 7)
    long = sf.sample_path(COV2, 2.0, 3.0, 0.01, 7)
    nb_s, nb_l = short.n_back, long.n_back
    assert np.array_equal(long.increments[nb_l - nb_s: nb_l + short.n_fwd],
                          short.increments)


def test_shift_identity_and_group_law():
    p = sf.sample_path(COV2, 2.0, 2.0, 0.01, 11)
    assert sf.shift(p, 0.0).n_back == p.n_back
    one = p.shift(0.5).shift(0.25)
    two = p.shift(0.75)
    assert one.n_back == two.n_back
    assert one.increments is p.increments  # re-anchoring, not copying
    for s in (-1.0, -0.13, 0.0, 0.42, 1.25):
        assert np.array_equal(one.value(s), two.value(s))


def test_shift_matches_wiener_shift_definition():
    p = sf.sample_path(COV2, 2.0, 2.0, 0.01, 13)
    t = 0.37
    q = p.shift(t)
    for s in (-0.5, 0.0, 0.8):
        np.testing.assert_allclose(q.value(s), p.value(t + s) - p.value(t),
                                   rtol=0, atol=1e-12)
    np.testing.assert_array_equal(q.increment(-0.2, 0.3),
                                  p.increment(t - 0.2, t + 0.3))


def test_shift_rejects_misaligned_and_out_of_window():
    p = sf.sample_path(COV1, 1.0, 1.0, 0.01, 3)
    with pytest.raises(GridMisalignedError):
        p.shift(0.005)
    with pytest.raises(OutOfWindowError):
        p.shift(1.5)


def test_shift_is_empirically_measure_preserving():
    # moments of shifted increments match unshifted over many paths
    m0, m2, m0s, m2s = [], [], [], []
    for seed in range(1500):
        p = sf.sample_path(COV1, 1.0, 1.0, 0.05, seed)
        q = p.shift(0.5)
        m0.append(p.increment(0.0, 0.5)[0])
        m0s.append(q.increment(0.0, 0.5)[0])
    assert np.mean(m0) == pytest.approx(np.mean(m0s), abs=0.05)
    assert np.var(m0) == pytest.approx(0.5, abs=0.06)
    assert np.var(m0s) == pytest.approx(0.5, abs=0.06)


def test_prefix_sums_agree_from_both_ends():
    p = sf.sample_path(COV2, 1.0, 1.0, 0.01, 17)
    total = p.value(1.0) - p.value(-1.0)
    rebuilt = p.increments.sum(axis=0)
    np.testing.assert_allclose(total, rebuilt, rtol=0, atol=1e-13)


def test_invalid_grids_rejected():
    with pytest.raises(InvalidGridError):
        sf.sample_path(COV1, 0.0, 0.0, 0.01, 1)
    with pytest.raises(InvalidGridError):
        sf.sample_path(COV1, 1.0, 1.0, -0.01, 1)
    with pytest.raises(InvalidGridError):
        sf.CovarianceSpec.diagonal([])
    with pytest.raises(InvalidGridError):
        sf.CovarianceSpec(mode_count=2, sigma=(1.0,))


def test_serialization_roundtrip_bit_exact():
    p = sf.sample_path(COV2, 1.5, 2.5, 0.01, 99).shift(0.5)
    q = sf.WienerPath.from_bytes(p.to_bytes())
    assert q.h == p.h and q.n_back == p.n_back and q.anchor == p.anchor
    assert q.seed == p.seed
    assert np.array_equal(q.increments, p.increments)


def test_coarsen_shares_brownian_values():
    p = sf.sample_path(COV1, 1.0, 1.0, 0.005, 21)
    c = sf.coarsen(p, 4)
    assert c.h == pytest.approx(0.02)
    for t in (-1.0, -0.5, 0.0, 0.48, 1.0):
        np.testing.assert_allclose(c.value(t), p.value(t), rtol=0, atol=1e-12)


# -- weighted integrals --------------------------------------------------------


def test_weighted_integral_zero_path_is_zero():
    p = sf.sample_path(COV1, 1.0, 1.0, 0.01, 1)
    zero = sf.WienerPath(h=p.h, increments=np.zeros_like(p.increments),
                         n_back=p.n_back)
    w = sf.ExpWeight(rate=0.0, lower=0.0, upper=1.0)
    assert sf.weighted_integral(zero, 0, w).value == 0.0


def test_weighted_integral_unit_weight_telescopes():
    p = sf.sample_path(COV2, 1.0, 2.0, 0.01, 2)
    w = sf.ExpWeight(rate=0.0, lower=0.0, upper=1.37)
    res = sf.weighted_integral(p, 1, w)
    assert res.value == pytest.approx(p.value(1.37)[1], abs=1e-13)
    assert res.tail_bound == 0.0


def test_weighted_integral_ito_isometry():
    # Var of int_{-inf}^0 e^{s} dW = int_0^inf e^{-2u} du = 1/2
    w = sf.ExpWeight(rate=1.0, lower=-np.inf, upper=0.0)
    vals = [sf.weighted_integral(
        sf.sample_path(COV1, 21.0, 0.0, 0.01, seed), 0, w, tail_tol=1e-9).value
        for seed in range(10_000)]
    assert np.var(vals) == pytest.approx(0.5, abs=0.03)


def test_weighted_integral_tail_guards():
    p = sf.sample_path(COV1, 2.0, 2.0, 0.01, 4)
    with pytest.raises(TailNotNegligibleError):
        sf.ExpWeight(rate=-1.0, lower=-np.inf, upper=0.0)  # grows into past
    w = sf.ExpWeight(rate=1.0, lower=-np.inf, upper=0.0)
    with pytest.raises(TailNotNegligibleError):
        sf.weighted_integral(p, 0, w, tail_tol=1e-12)  # window too short
    res = sf.weighted_integral(p, 0, w, tail_tol=np.exp(-2.0) * 1.01)
    assert res.tail_bound <= np.exp(-2.0) * 1.02
