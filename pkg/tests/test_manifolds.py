import numpy as np
import pytest

import stochflow as sf
from stochflow.errors import (
    AllSeedsRejectedError,
    ChainTooShortError,
    DegeneratePairsError,
    FitIllConditionedError,
    InsufficientSamplesError,
    InvalidGridError,
    NoUnstableDirectionsError,
    SeriesTooShortError,
)
from stochflow.manifolds import StableEvidence
from stochflow.spectrum import Splitting


def _saddle_params(n_max=6, t_back=12.0, rho=0.1):
    return sf.ManifoldParams(rho1=rho, rho2=rho, beta1=2 * rho, beta2=2 * rho,
                             eps1=0.5, eps2=0.5, n_max=n_max, t_back=t_back,
                             lambda_neg=-1.0, lambda_pos=1.0)


@pytest.fixture(scope="module")
def saddle_splits(saddle_model, saddle_station):
    s0 = sf.split_subspaces(saddle_model, saddle_station, None, 1, 12.0, 12.0)
    sb = sf.split_subspaces(saddle_model, saddle_station, None, 1, 12.0, 12.0,
                            at_shift=-12.0)
    return s0, sb


@pytest.fixture(scope="module")
def saddle_atlas(saddle_model, saddle_station, saddle_splits):
    s0, sb = saddle_splits
    params = _saddle_params()
    stable = sf.find_stable_samples(saddle_model, saddle_station, None,
                                    params, s0, 8)
    unstable = sf.build_unstable(saddle_model, saddle_station, None, params,
                                 4, sb)
    return sf.ManifoldAtlas(anchor=np.zeros(2), anchor_shift=0.0,
                            params=params, stable_samples=stable,
                            unstable_samples=unstable)


def test_params_validation():
    with pytest.raises(InvalidGridError):
        _saddle_params(rho=0.0)
    with pytest.raises(InvalidGridError):
        sf.ManifoldParams(rho1=0.1, rho2=0.1, beta1=0.2, beta2=0.2,
                          eps1=1.5, eps2=0.5, n_max=5, t_back=5.0,
                          lambda_neg=-1.0, lambda_pos=1.0)  # eps1 >= -lambda
    gap = sf.hyperbolicity_gap(
        __import__("tests.test_spectrum", fromlist=["_report"])._report
        if False else None) if False else None
    # defaults from a saddle gap
    from stochflow.spectrum import SpectralGap
    g = SpectralGap(True, 2, -1.0, 1.0, 1e-3, 1)
    p = sf.ManifoldParams.from_gap(g)
    assert 0 < p.rho1 < p.beta1 <= 1.0
    assert p.eps1 == pytest.approx(0.5)
    assert p.stable_rate == pytest.approx(-0.5)
    assert p.unstable_rate == pytest.approx(0.5)


def test_params_infinite_edges_use_fallback_rates():
    p = sf.ManifoldParams(rho1=0.1, rho2=0.1, beta1=0.2, beta2=0.2,
                          eps1=0.5, eps2=0.5, n_max=5, t_back=5.0,
                          lambda_neg=-1.0, lambda_pos=np.inf,
                          fallback_rate_unstable=2.0)
    assert p.unstable_rate == 2.0
    q = sf.ManifoldParams(rho1=0.1, rho2=0.1, beta1=0.2, beta2=0.2,
                          eps1=0.5, eps2=0.5, n_max=5, t_back=5.0,
                          lambda_neg=-np.inf, lambda_pos=1.0,
                          fallback_rate_stable=-0.7)
    assert q.stable_rate == -0.7


def test_classify_anchor_point_is_in(saddle_model, saddle_station):
    params = _saddle_params()
    ev = sf.classify_stable(saddle_model, saddle_station, None,
                            sf.zero_vec(saddle_model.operator), params)
    assert ev.verdict == "in"
    assert np.max(ev.int_distances) <= 1e-12


def test_classify_linear_stable_direction():
    op = sf.OperatorSpec(eigenvalues=(-1.0, 1.0))
    m = sf.SemiflowModel(operator=op, drift=sf.zero_drift(), h=1e-3)
    y = sf.constant_stationary_point(m, [0.0, 0.0], (-2.0, 10.0))
    params = _saddle_params(n_max=8, t_back=2.0)
    x = sf.mode_vec([0.0, params.rho1 / 2], op)
    ev = sf.classify_stable(m, y, None, x, params)
    assert ev.verdict == "in"
    rate = sf.stable_decay_rate(ev)
    assert rate.slope == pytest.approx(-1.0, abs=1e-6)


def test_classify_separates_graph_points(saddle_model, saddle_station):
    params = _saddle_params()
    v2 = 0.05
    on = sf.mode_vec([-v2 ** 2 / 3.0, v2], saddle_model.operator)
    off = sf.mode_vec([-v2 ** 2 / 3.0 + 1e-2, v2], saddle_model.operator)
    ev_on = sf.classify_stable(saddle_model, saddle_station, None, on, params)
    ev_off = sf.classify_stable(saddle_model, saddle_station, None, off, params)
    assert ev_on.verdict == "in"
    assert ev_off.verdict == "out"
    assert ev_off.first_violation is not None
    assert ev_off.first_violation <= 0.8 * params.n_max


def test_classify_boundary_band(saddle_model, saddle_station):
    # an offset small enough to fail only late in the horizon is inconclusive
    params = _saddle_params(n_max=6)
    v2 = 0.05
    # residue ~ s*e^n crosses the envelope near n = 5..6 for s ~ 2e-4
    x = sf.mode_vec([-v2 ** 2 / 3.0 + 2.2e-4, v2], saddle_model.operator)
    ev = sf.classify_stable(saddle_model, saddle_station, None, x, params)
    assert ev.verdict == "boundary"
    assert ev.first_violation is not None
    assert ev.first_violation > 0.8 * params.n_max


def test_classify_rejects_points_outside_ball(saddle_model, saddle_station):
    params = _saddle_params()
    with pytest.raises(ValueError):
        sf.classify_stable(saddle_model, saddle_station, None,
                           sf.mode_vec([0.2, 0.2], saddle_model.operator),
                           params)


def test_envelope_monotone_in_eps(saddle_model, saddle_station):
    # tightening eps1 never flips out -> in
    loose = _saddle_params()
    tight = sf.ManifoldParams(rho1=0.1, rho2=0.1, beta1=0.2, beta2=0.2,
                              eps1=0.1, eps2=0.5, n_max=6, t_back=12.0,
                              lambda_neg=-1.0, lambda_pos=1.0)
    rng = np.random.default_rng(4)
    for _ in range(6):
        v2 = rng.uniform(-0.05, 0.05)
        off = rng.uniform(-5e-3, 5e-3)
        x = sf.mode_vec([-v2 ** 2 / 3.0 + off, v2], saddle_model.operator)
        ev_t = sf.classify_stable(saddle_model, saddle_station, None, x, tight)
        ev_l = sf.classify_stable(saddle_model, saddle_station, None, x, loose)
        if ev_t.verdict == "in":
            assert ev_l.verdict == "in"


def test_decay_rate_on_synthetic_series():
    t = np.linspace(0.0, 5.0, 40)
    ev = StableEvidence(x=np.zeros(2), verdict="in", anchor_shift=0.0,
                        int_times=np.arange(6.0),
                        int_distances=np.exp(-np.arange(6.0)),
                        envelope=np.ones(6), first_violation=None,
                        times=t, distances=0.3 * np.exp(-t))
    est = sf.stable_decay_rate(ev)
    assert est.slope == pytest.approx(-1.0, abs=1e-9)


def test_decay_rate_noise_floor_too_early():
    t = np.arange(10.0)
    d = np.concatenate([[1.0, 1e-2, 1e-5], np.full(7, 1e-14)])
    ev = StableEvidence(x=np.zeros(1), verdict="in", anchor_shift=0.0,
                        int_times=t, int_distances=d, envelope=np.ones(10),
                        first_violation=None, times=t, distances=d)
    with pytest.raises(SeriesTooShortError):
        sf.stable_decay_rate(ev)


def test_lipschitz_exponent_linear_model_is_exact():
    op = sf.OperatorSpec(eigenvalues=(-1.0, 1.0))
    m = sf.SemiflowModel(operator=op, drift=sf.zero_drift(), h=1e-2)
    y = sf.constant_stationary_point(m, [0.0, 0.0], (-2.0, 10.0))
    pairs = [(sf.mode_vec([0.0, a], op), sf.mode_vec([0.0, b], op))
             for a, b in [(0.01, 0.02), (0.03, 0.01), (-0.02, 0.015),
                          (0.04, -0.04), (-0.01, -0.03)]]
    est = sf.stable_lipschitz_exponent(m, y, None, pairs, 6.0)
    assert est.slope == pytest.approx(-1.0, abs=1e-9)


def test_lipschitz_exponent_saddle_and_out_pair(saddle_model, saddle_station,
                                                saddle_atlas):
    uniq = {}
    for s in saddle_atlas.stable_in():
        uniq[tuple(np.round(s.x, 12))] = sf.ModeVec(s.x, saddle_model.operator)
    pts = list(uniq.values())
    from itertools import combinations
    pairs = list(combinations(pts, 2))[:5]
    assert len(pairs) == 5
    graph = lambda v2: sf.mode_vec([-v2 ** 2 / 3.0, v2], saddle_model.operator)
    est = sf.stable_lipschitz_exponent(saddle_model, saddle_station, None,
                                       pairs, 6.0)
    assert est.slope <= -0.95
    bad_pairs = pairs[:4] + [(graph(0.02),
                              sf.mode_vec([0.01, 0.02], saddle_model.operator))]
    est_bad = sf.stable_lipschitz_exponent(saddle_model, saddle_station, None,
                                           bad_pairs, 6.0)
    assert est_bad.slope >= 0.5  # the out-point pair diverges and dominates
    with pytest.raises(DegeneratePairsError):
        sf.stable_lipschitz_exponent(saddle_model, saddle_station, None,
                                     pairs[:3], 6.0)
    degenerate = pairs[:4] + [(graph(0.01), graph(0.01 + 1e-12))]
    with pytest.raises(DegeneratePairsError):
        sf.stable_lipschitz_exponent(saddle_model, saddle_station, None,
                                     degenerate, 6.0)


def test_stable_sampler_and_invariance(saddle_model, saddle_station,
                                       saddle_atlas):
    assert all(s.verdict == "in" for s in saddle_atlas.stable_samples)
    inv = sf.stable_invariance_check(saddle_model, saddle_station, None,
                                     saddle_atlas, [0.0, 1.0, 2.0])
    assert inv.fractions == (1.0, 1.0, 1.0)
    assert inv.tau1 == 0.0
    assert inv.boundary_counts == (0, 0, 0)


def test_invariance_counts_boundary_separately(saddle_model, saddle_station,
                                               saddle_atlas):
    # a sample whose envelope failure only shows up beyond the anchor-0
    # horizon classifies 'in' now but 'boundary' after mapping by t = 1;
    # the fraction must exclude it rather than count it as out
    params = saddle_atlas.params
    v2 = 0.05
    x = sf.mode_vec([-v2 ** 2 / 3.0 + 1.5e-5, v2], saddle_model.operator)
    ev = sf.classify_stable(saddle_model, saddle_station, None, x, params)
    assert ev.verdict == "in"
    atlas = sf.ManifoldAtlas(anchor=np.zeros(2), anchor_shift=0.0,
                             params=params,
                             stable_samples=saddle_atlas.stable_samples + (ev,),
                             unstable_samples=saddle_atlas.unstable_samples)
    inv = sf.stable_invariance_check(saddle_model, saddle_station, None,
                                     atlas, [1.0])
    assert inv.boundary_counts[0] == 1
    assert inv.fractions[0] == 1.0  # boundary sample excluded from the ratio


def test_build_unstable_linear_diagonal():
    op = sf.OperatorSpec(eigenvalues=(-1.0, 1.0))
    m = sf.SemiflowModel(operator=op, drift=sf.zero_drift(), h=1e-3)
    y = sf.constant_stationary_point(m, [0.0, 0.0], (-26.0, 2.0))
    split = sf.split_subspaces(m, y, None, 1, 12.0, 2.0, at_shift=-12.0)
    params = _saddle_params()
    samples = sf.build_unstable(m, y, None, params, 4, split)
    for s in samples:
        assert abs(s.x[1]) <= 1e-14           # exactly on span(e1)
        np.testing.assert_allclose(
            s.chain.distances,
            s.chain.distances[0] * np.exp(-np.arange(13.0)), rtol=1e-9)
        assert np.max(s.chain.consistency) <= 1e-12
        est = sf.unstable_backward_rate(s.chain)
        assert est.slope == pytest.approx(-1.0, abs=1e-9)


def test_build_unstable_saddle_axis(saddle_model, saddle_station, saddle_atlas):
    for s in saddle_atlas.unstable_samples:
        assert abs(s.x[1]) <= 1e-6            # recovered axis x2 = 0
        assert np.max(s.chain.consistency) <= 1e-12
        assert np.linalg.norm(s.x) <= saddle_atlas.params.rho2
    rates = [sf.unstable_backward_rate(s.chain).slope
             for s in saddle_atlas.unstable_samples]
    assert all(r <= -0.95 for r in rates)


def test_unstable_pairwise_rate(saddle_atlas):
    a, b = saddle_atlas.unstable_samples[:2]
    est = sf.unstable_pairwise_rate(a.chain, b.chain)
    assert est.slope <= -0.95


def test_chain_depth_truncated_not_error(saddle_model, saddle_station):
    params = sf.ManifoldParams(rho1=0.1, rho2=0.1, beta1=0.2, beta2=0.2,
                               eps1=0.5, eps2=0.5, n_max=6, t_back=6.5,
                               lambda_neg=-1.0, lambda_pos=1.0)
    split = sf.split_subspaces(saddle_model, saddle_station, None, 1,
                               6.5, 6.5, at_shift=-6.5)
    samples = sf.build_unstable(saddle_model, saddle_station, None, params,
                                2, split)
    assert samples[0].chain.depth == 6
    with pytest.raises(ChainTooShortError):
        sf.unstable_backward_rate(samples[0].chain)


def test_build_unstable_guards(saddle_model, saddle_station, saddle_splits):
    s0, sb = saddle_splits
    params = _saddle_params()
    empty = Splitting(unstable_basis=np.zeros((2, 0)), stable_basis=np.eye(2),
                      at_shift=-12.0, convergence_unstable=(),
                      convergence_stable=(), min_principal_angle=np.pi / 2,
                      basis=saddle_model.operator)
    with pytest.raises(NoUnstableDirectionsError):
        sf.build_unstable(saddle_model, saddle_station, None, params, 2, empty)
    with pytest.raises(InvalidGridError):
        sf.build_unstable(saddle_model, saddle_station, None, params, 2, s0)
    # claiming a much faster backward rate than the flow has rejects all seeds
    wrong = sf.ManifoldParams(rho1=0.1, rho2=0.1, beta1=0.2, beta2=0.2,
                              eps1=0.5, eps2=0.5, n_max=6, t_back=12.0,
                              lambda_neg=-1.0, lambda_pos=5.0)
    with pytest.raises(AllSeedsRejectedError):
        sf.build_unstable(saddle_model, saddle_station, None, wrong, 2, sb)


def test_tangency_recovers_graph_coefficient(saddle_atlas, saddle_splits):
    s0, _ = saddle_splits
    fit = sf.tangency_and_transversality(saddle_atlas, s0)
    assert fit.stable_fit.quadratic.shape == (1, 1)
    assert fit.stable_fit.quadratic[0, 0] == pytest.approx(-1.0 / 3.0,
                                                           abs=1e-3)
    assert fit.stable_fit.linear_norm <= 1e-3 * fit.stable_fit.quad_norm * \
        fit.stable_fit.radius + 1e-9
    assert fit.unstable_fit.quad_norm <= 1e-9
    assert fit.dims_sum == 2
    assert fit.min_angle == pytest.approx(np.pi / 2, abs=1e-6)
    assert fit.transversal


def test_tangency_linear_model_flat():
    op = sf.OperatorSpec(eigenvalues=(-1.0, 1.0))
    m = sf.SemiflowModel(operator=op, drift=sf.zero_drift(), h=1e-3)
    y = sf.constant_stationary_point(m, [0.0, 0.0], (-26.0, 10.0))
    s0 = sf.split_subspaces(m, y, None, 1, 10.0, 10.0)
    sb = sf.split_subspaces(m, y, None, 1, 12.0, 10.0, at_shift=-12.0)
    params = _saddle_params()
    stable = sf.find_stable_samples(m, y, None, params, s0, 6)
    unstable = sf.build_unstable(m, y, None, params, 4, sb)
    atlas = sf.ManifoldAtlas(anchor=np.zeros(2), anchor_shift=0.0,
                             params=params, stable_samples=stable,
                             unstable_samples=unstable)
    fit = sf.tangency_and_transversality(atlas, s0)
    assert fit.stable_fit.quad_norm <= 1e-9
    assert fit.stable_fit.linear_norm <= 1e-9
    assert fit.dims_sum == 2


def test_tangency_guards(saddle_atlas, saddle_splits):
    s0, _ = saddle_splits
    thin = sf.ManifoldAtlas(anchor=np.zeros(2), anchor_shift=0.0,
                            params=saddle_atlas.params,
                            stable_samples=saddle_atlas.stable_samples[:1],
                            unstable_samples=saddle_atlas.unstable_samples)
    with pytest.raises(InsufficientSamplesError):
        sf.tangency_and_transversality(thin, s0)
    # identical sample points cannot determine the fit
    ev = min(saddle_atlas.stable_samples, key=lambda s: np.linalg.norm(s.x))
    clones = tuple([ev] * 6)
    degenerate = sf.ManifoldAtlas(anchor=np.zeros(2), anchor_shift=0.0,
                                  params=saddle_atlas.params,
                                  stable_samples=clones,
                                  unstable_samples=saddle_atlas.unstable_samples)
    with pytest.raises(FitIllConditionedError):
        sf.tangency_and_transversality(degenerate, s0)


def test_shift_consistent_classification(saddle_model, saddle_station,
                                         saddle_atlas):
    # membership at anchor 0 agrees with membership of the image at anchor t
    params = saddle_atlas.params
    t = 1.0
    agree = 0
    samples = saddle_atlas.stable_samples
    for s in samples:
        xt = sf.cocycle_eval(saddle_model, t,
                             sf.ModeVec(s.x, saddle_model.operator), None)
        ev = sf.classify_stable(saddle_model, saddle_station, None, xt,
                                params, anchor_shift=t)
        agree += (ev.verdict == s.verdict)
    assert agree / len(samples) >= 0.95
