import math

import numpy as np
import pytest
import torch
from scipy.stats import ks_2samp

from kolseries.gaussian import GaussianSpec, sample_gaussian
from kolseries.girsanov import (PathConfig, PathGrid, accumulate_ladder, dump_paths,
                                estimate_girsanov_terms, estimate_girsanov_u, estimate_In,
                                estimate_u_direct, halving_ratios, ladder_moment_bound,
                                ladder_residual, ladder_second_moments, mean_martingale, psi_eval,
                                simulate_ou_path, step_halving_study)
from kolseries.registry import DriftSpec, HypothesisError, TestFunctionSpec
from kolseries.series import SeriesConfig, closed_form_u, estimate_vn
from kolseries.spectral import SpectralModel, standard_model
from kolseries.streams import Stream

T, X = 0.5, [0.3]


@pytest.fixture
def model():
    return standard_model()


@pytest.fixture
def cosine():
    return TestFunctionSpec.cosine([1.])


def test_path_grid():
    grid = PathGrid(0.5, 4)
    assert grid.dt == 0.125
    assert grid.times.tolist() == [0., 0.125, 0.25, 0.375, 0.5]
    with pytest.raises(ValueError):
        PathGrid(0.5, 0)
    with pytest.raises(ValueError):
        PathGrid(0., 4)


def test_simulate_shapes(model):
    grid = PathGrid(T, 8)
    single = simulate_ou_path(model, X, grid, Stream(0))
    assert single['path'].shape == (9, 1)
    assert single['dW'].shape == (8, 1)
    assert float(single['path'][0, 0]) == 0.3
    batch = simulate_ou_path(SpectralModel((-1., -3.), (1., 2.)), [0., 1.], grid, Stream(0), npaths=5)
    assert batch['path'].shape == (9, 5, 2)
    assert batch['dW'].shape == (8, 5, 2)


def test_simulated_terminal_law(model):
    sim = simulate_ou_path(model, X, PathGrid(T, 50), Stream(1), npaths=4000)
    exact = sample_gaussian(GaussianSpec.ou_law(model, T, X), Stream(2), size=4000)
    assert ks_2samp(sim['path'][-1, :, 0].numpy(), exact[:, 0].numpy()).pvalue > 1e-4


def test_ladder_for_constant_psi(model):
    # with constant psi the ladder holds the elementary symmetric polynomials of the increments
    grid = PathGrid(T, 16)
    sim = simulate_ou_path(model, X, grid, Stream(3), npaths=10)
    drift = DriftSpec.constant([0.8])
    ladder = accumulate_ladder(sim['path'], sim['dW'], drift, model, 3, grid.dt)
    psi = 0.8 / math.sqrt(2.)
    dL = psi * sim['dW'][:, :, 0]
    L = dL.sum(dim=0)
    assert torch.allclose(ladder.values[0], torch.ones(10, dtype=torch.float64))
    assert torch.allclose(ladder.values[1], L, rtol=1e-12, atol=1e-14)
    assert torch.allclose(ladder.values[2], (L ** 2 - (dL ** 2).sum(dim=0)) / 2, rtol=1e-10, atol=1e-14)
    expected_M = torch.exp(L - psi ** 2 * T / 2)
    assert torch.allclose(ladder.exp_martingale, expected_M, rtol=1e-12)
    assert torch.allclose(ladder.log_martingale_terms[0], L, rtol=1e-12, atol=1e-14)


def test_ladder_for_zero_drift(model):
    grid = PathGrid(T, 8)
    sim = simulate_ou_path(model, X, grid, Stream(0), npaths=3)
    ladder = accumulate_ladder(sim['path'], sim['dW'], DriftSpec.zero(), model, 2, grid.dt)
    assert torch.equal(ladder.values[1:], torch.zeros(2, 3, dtype=torch.float64))
    assert torch.equal(ladder.exp_martingale, torch.ones(3, dtype=torch.float64))


def test_ladder_rejects(model):
    grid = PathGrid(T, 8)
    sim = simulate_ou_path(model, X, grid, Stream(0))
    with pytest.raises(ValueError):
        accumulate_ladder(sim['path'], sim['dW'], DriftSpec.zero(), model, -1, grid.dt)
    with pytest.raises(ValueError):
        accumulate_ladder(sim['path'][:-1], sim['dW'], DriftSpec.zero(), model, 1, grid.dt)


def test_psi_eval(model):
    assert torch.allclose(psi_eval(model, DriftSpec.constant([2.]), [0.]),
                          torch.tensor([math.sqrt(2.)], dtype=torch.float64))
    incompatible = DriftSpec('bounded_sin', amplitude=1., qhalf_compatible=False)
    with pytest.raises(HypothesisError):
        psi_eval(model, incompatible, [0.])
    assert torch.isfinite(psi_eval(model, incompatible, [0.], override=True)).all()


def test_mean_martingale(model):
    cfg = PathConfig(npaths=2 ** 14, steps=64)
    est = mean_martingale(model, DriftSpec.bounded_sin(0.4, 1.), T, X, cfg, Stream(0))
    assert abs(est.mean - 1.) < 4 * est.stderr


def test_girsanov_terms_for_zero_drift(model, cosine):
    cfg = PathConfig(npaths=2 ** 14, steps=16)
    terms = estimate_girsanov_terms(model, DriftSpec.zero(), cosine, T, X, 2, cfg, Stream(0))
    exact = closed_form_u(model, DriftSpec.zero(), cosine, T, X)
    assert abs(terms[0].mean - exact) < 4 * terms[0].stderr
    assert terms[1].mean == 0. and terms[2].mean == 0.
    assert terms[0].extras['steps'] == 16


def test_first_girsanov_term_matches_series_term(model, cosine):
    drift = DriftSpec.bounded_sin(0.4, 1.)
    cfg = PathConfig(npaths=2 ** 15, steps=128)
    i1 = estimate_In(model, drift, cosine, T, X, 1, cfg, Stream(5))
    v1 = estimate_vn(model, drift, cosine, T, X, 1,
                     SeriesConfig(nsamples=2 ** 15, delta=0.5), Stream(6))
    assert abs(i1.mean - v1.mean) < 4 * (i1.stderr + v1.stderr)


def test_girsanov_u_for_constant_drift(model, cosine):
    drift = DriftSpec.constant([0.5])
    cfg = PathConfig(npaths=2 ** 15, steps=32)
    est = estimate_girsanov_u(model, drift, cosine, T, X, cfg, Stream(7))
    assert abs(est.mean - closed_form_u(model, drift, cosine, T, X)) < 4 * est.stderr
    assert 0 < est.extras['ess'] <= cfg.npaths
    assert 0 < est.extras['max_weight_share'] < 1
    assert est.extras['novikov_proxy'] == pytest.approx(math.exp(0.1 * 0.125))
    assert est.extras['warnings'] == []


def test_girsanov_refuses_incompatible_drift(model, cosine):
    incompatible = DriftSpec('bounded_sin', amplitude=1., qhalf_compatible=False)
    with pytest.raises(HypothesisError):
        estimate_girsanov_u(model, incompatible, cosine, T, X, PathConfig(npaths=16, steps=4))


def test_direct_for_constant_drift(model, cosine):
    drift = DriftSpec.constant([0.5])
    cfg = PathConfig(npaths=2 ** 15, steps=32)
    est = estimate_u_direct(model, drift, cosine, T, X, cfg, Stream(8))
    assert abs(est.mean - closed_form_u(model, drift, cosine, T, X)) < 4 * est.stderr
    # the exponential integrator is exact for constant drift, so fine and coarse agree pathwise
    assert abs(est.extras['bias']) < 1e-12


def test_direct_bias_needs_even_steps(model, cosine):
    drift = DriftSpec.bounded_sin(0.4, 1.)
    odd = estimate_u_direct(model, drift, cosine, T, X, PathConfig(npaths=64, steps=5), Stream(0))
    assert 'bias' not in odd.extras
    off = estimate_u_direct(model, drift, cosine, T, X,
                            PathConfig(npaths=64, steps=4, bias_estimate=False), Stream(0))
    assert 'bias' not in off.extras
    even = estimate_u_direct(model, drift, cosine, T, X, PathConfig(npaths=64, steps=4), Stream(0))
    assert math.isfinite(even.extras['bias'])
    assert even.mean == off.mean


def test_coupled_streams_share_paths(model, cosine):
    cfg = PathConfig(npaths=1000, steps=8, block_size=300)
    stream = Stream(12)
    direct = estimate_u_direct(model, DriftSpec.zero(), cosine, T, X, cfg, stream)
    weighted = estimate_girsanov_u(model, DriftSpec.zero(), cosine, T, X, cfg, stream)
    assert direct.mean == weighted.mean


def test_girsanov_is_worker_independent(model, cosine):
    drift = DriftSpec.bounded_sin(0.4, 1.)
    serial = estimate_girsanov_terms(model, drift, cosine, T, X, 2,
                                     PathConfig(npaths=900, steps=8, block_size=300), Stream(2))
    pooled = estimate_girsanov_terms(model, drift, cosine, T, X, 2,
                                     PathConfig(npaths=900, steps=8, block_size=300, workers=3),
                                     Stream(2))
    assert [(e.mean, e.stderr) for e in serial] == [(e.mean, e.stderr) for e in pooled]


def test_ladder_second_moments_below_bound(model):
    drift = DriftSpec.bounded_sin(0.4, 1.)
    moments = ladder_second_moments(model, drift, T, X, 4, PathConfig(npaths=2 ** 13, steps=64), Stream(0))
    assert moments[0].mean == 1.
    for k, est in enumerate(moments):
        assert est.mean <= ladder_moment_bound(k, drift.psi_sup(model), T)


def test_ladder_moment_bound():
    assert ladder_moment_bound(0, 3., 1.) == 1.
    assert ladder_moment_bound(2, 0.5, 2.) == 16 * 0.0625 * 4 / 2


def test_ladder_residual(model):
    drift = DriftSpec.bounded_sin(0.4, 1.)
    residual = ladder_residual(model, drift, T, X, 8, PathConfig(npaths=2000, steps=512), Stream(0))
    assert len(residual) == 9
    assert residual[-1] < 1e-2
    assert residual[-1] < residual[0]


def test_dump_paths(model):
    grid = PathGrid(T, 4)
    rows = dump_paths(model, DriftSpec.bounded_sin(0.4, 1.), X, grid, Stream(0), npaths=2)
    assert len(rows) == 10
    assert rows[0] == (0, 0., 0.3, 0., 1.)
    assert rows[5][:2] == (1, 0.)
    assert all(len(r) == 5 for r in rows)
    assert all(r[-1] > 0 for r in rows)
    np.testing.assert_allclose([r[1] for r in rows[:5]], grid.times.numpy())


def test_girsanov_term_converges_under_step_halving(model, cosine):
    drift = DriftSpec.bounded_sin(0.4, 1.)
    coarse = estimate_In(model, drift, cosine, T, X, 1, PathConfig(npaths=2 ** 14, steps=512), Stream(60))
    fine = estimate_In(model, drift, cosine, T, X, 1, PathConfig(npaths=2 ** 14, steps=1024), Stream(61))
    assert abs(coarse.mean - fine.mean) < 4 * math.hypot(coarse.stderr, fine.stderr)


def test_direct_bias_halves_with_step(model, cosine):
    cfg = PathConfig(npaths=2 ** 17)
    study = step_halving_study(model, DriftSpec.bounded_sin(0.4, 1.), cosine, T, X, [8, 16], cfg, Stream(62))
    assert [m for m, _ in study] == [8, 16]
    for _, est in study:
        assert est.extras['steps'] in (8, 16)
        assert abs(est.extras['bias']) > 4 * est.extras['bias_stderr']
    ratio, = halving_ratios(study)
    assert 0.3 < ratio < 0.7


def test_step_halving_study_rejects_odd_steps(model, cosine):
    with pytest.raises(ValueError):
        step_halving_study(model, DriftSpec.zero(), cosine, T, X, [8, 5])
