import math

import pytest
import torch

from kolseries.bounds import (b_product_bound, beta_chain_identity, bound_rows, gamma_ratio,
                              gamma_ratio_bound_check, log_b_product, log_tail_bound, minimal_n0,
                              per_factor_bound, plan_exponents, predicted_ratio, ratio_test,
                              require_growth_condition, simplex_time_integral,
                              simplex_time_integral_quadrature, vn_norm_bounds)
from kolseries.registry import HypothesisError


@pytest.fixture(scope='module')
def plan():
    return plan_exponents(2., 1.5, 2., 10 ** 4)


def test_exponent_plan(plan):
    assert plan.n0 == 7
    assert plan.nmax == 10 ** 4
    assert plan.p.numel() == 10 ** 4 + 1
    assert plan.p[0] == 2.
    assert float((plan.inv_p[1:] - plan.inv_p[:-1] - 1 / plan.q).abs().max()) < 1e-14
    assert bool((plan.p > 1.5).all())
    assert bool((plan.p[1:] < plan.p[:-1]).all())
    assert float(plan.q[0]) == 64.


def test_log_schedule():
    plan = plan_exponents(2., 1.5, 2., 1000, schedule='log')
    m = torch.arange(1, 1001, dtype=torch.float64) + plan.n0
    assert torch.allclose(plan.q, m * torch.log(m) ** 2)
    assert bool((plan.p > 1.5).all())


@pytest.mark.parametrize('args', [
    (2., 1.5, 1., 10),
    (1.5, 2., 2., 10),
    (2., 1., 2., 10),
    (2., 1.5, 2., -1),
])
def test_plan_rejects(args):
    with pytest.raises(ValueError):
        plan_exponents(*args)


def test_plan_rejects_unknown_schedule():
    with pytest.raises(ValueError):
        plan_exponents(2., 1.5, 2., 10, schedule='geometric')


def test_minimal_n0_tightens_with_gap():
    assert minimal_n0(0.5, 2.) < minimal_n0(0.1, 2.)


def test_log_schedule_at_default_kappa():
    gap = 1 / 1.5 - 1 / 2.
    n0 = minimal_n0(gap, 1.5, schedule='log')
    assert log_tail_bound(math.log(n0), 1.5) < gap
    # log n0 is pinned by 2 / sqrt(log n0) < 1/6, i.e. log n0 just above 144
    assert 144. < math.log(n0) < 145.
    plan = plan_exponents(2., 1.5, 1.5, 100, schedule='log')
    assert plan.n0 == n0
    assert bool((plan.p > 1.5).all())
    assert bool(torch.isfinite(plan.q).all())


def test_log_schedule_n0_is_minimal():
    n0 = minimal_n0(1 / 1.5 - 1 / 2., 2., schedule='log')
    assert log_tail_bound(math.log(n0), 2.) < 1 / 6
    assert log_tail_bound(math.log(n0 - 1), 2.) >= 1 / 6


def test_log_schedule_refuses_unreachable_gap():
    with pytest.raises(ValueError, match='log schedule'):
        minimal_n0(1e-3, 1.01, schedule='log')


def test_simplex_integral_closed_forms():
    t, d = 0.7, 0.3
    a = 1 - d
    assert simplex_time_integral(0, d, t) == 1.
    assert math.isclose(simplex_time_integral(1, d, t), t ** a / a, rel_tol=1e-13)
    assert math.isclose(simplex_time_integral(0, d, t, include_endpoint=True), t ** -d, rel_tol=1e-13)
    assert math.isclose(simplex_time_integral(1, d, t, include_endpoint=True),
                        math.gamma(a) ** 2 / math.gamma(2 * a) * t ** (a - d), rel_tol=1e-13)


@pytest.mark.parametrize('args', [(-1, 0.5, 1.), (1, 0., 1.), (1, 1., 1.), (1, 0.5, 0.)])
def test_simplex_integral_rejects(args):
    with pytest.raises(ValueError):
        simplex_time_integral(*args)


@pytest.mark.parametrize('delta', [0.25, 0.5, 0.75])
def test_beta_chain_identity(delta):
    for n in range(31):
        assert math.isclose(beta_chain_identity(n, delta), simplex_time_integral(n, delta, 1.),
                            rel_tol=1e-12)


@pytest.mark.parametrize('n', [1, 2, 3])
@pytest.mark.parametrize('endpoint', [False, True])
def test_simplex_quadrature(n, endpoint):
    for d in (0.25, 0.5, 0.75):
        quad = simplex_time_integral_quadrature(n, d, 1., endpoint)
        assert math.isclose(quad, simplex_time_integral(n, d, 1., endpoint), rel_tol=1e-6)


def test_simplex_quadrature_rejects_high_order():
    with pytest.raises(ValueError):
        simplex_time_integral_quadrature(5, 0.5, 1.)


def test_gamma_ratio():
    assert math.isclose(gamma_ratio(1, 0.5), 1 / math.gamma(1.5), rel_tol=1e-14)
    with pytest.raises(ValueError):
        gamma_ratio(0, 0.5)


@pytest.mark.parametrize('delta', [0.25, 0.5, 0.75])
def test_gamma_ratio_scan_is_bounded(delta):
    scan = gamma_ratio_bound_check(200, delta)
    assert scan.bounded
    assert 1 <= scan.argmax <= 200
    assert abs(scan.tail_slope) < 0.05
    assert scan.spearman_rho < 0


def test_ratio_test():
    geometric = ratio_test([1., 0.5, 0.25, 0.125])
    assert geometric.converges and geometric.first_contractive_index == 0
    assert ratio_test([1., 2., 1., 0.5]).first_contractive_index == 1
    growing = ratio_test([1., 2., 4.])
    assert not growing.converges and growing.first_contractive_index == -1
    assert ratio_test([0., 0.]).converges
    logs = ratio_test([0., -1., -2.], log_scale=True)
    assert logs.first_contractive_index == 0
    assert math.isclose(logs.ratios[0], math.exp(-1))


def test_growth_condition():
    require_growth_condition(0.5, 1.5, 0.5)
    with pytest.raises(HypothesisError) as e:
        require_growth_condition(1., 1.5, 0.5)
    assert e.value.clause == 'growth condition beta*kappa < 2(1-delta)'


def test_bound_rows_refuse_infeasible_growth():
    plan = plan_exponents(2., 1.5, 1.5, 10)
    with pytest.raises(HypothesisError):
        bound_rows(10, plan, 1., 0.5, 1., 1.)
    rows = bound_rows(10, plan, 1., 0.5, 1., 1., check=False)
    assert len(rows) == 11


def test_bound_rows_converge():
    plan = plan_exponents(2., 1.5, 1.5, 10)
    rows = bound_rows(10 ** 4, plan, c_delta=1., delta=0.5, trace=1., beta=0.5, c_beta=1.)
    test = ratio_test([r.log_vn_bound for r in rows], log_scale=True)
    assert test.converges
    assert 0 < test.first_contractive_index < 10 ** 4
    assert rows[-1].log_vn_bound < rows[test.first_contractive_index].log_vn_bound


def test_bounded_drift_rows_decay():
    plan = plan_exponents(2., 1.5, 1.5, 10)
    rows = bound_rows(50, plan, 1., 0.5, 1., 0.)
    test = ratio_test([r.log_vn_bound for r in rows], log_scale=True)
    assert test.converges
    assert rows[0].vn_bound == 1.
    assert rows[50].vn_bound < rows[10].vn_bound


def test_predicted_ratio_matches_rows():
    plan = plan_exponents(2., 1.5, 1.5, 10)
    kwargs = dict(c_delta=1.3, delta=0.4, trace=2., beta=0.5, c_beta=2., t=0.8)
    rows = bound_rows(40, plan, **kwargs)
    for n in (1, 5, 20, 39):
        expected = predicted_ratio(n, kwargs['delta'], plan.kappa, plan.n0, kwargs['trace'],
                                   kwargs['beta'], kwargs['c_beta'], kwargs['c_delta'], kwargs['t'])
        assert math.isclose(rows[n].ratio, expected, rel_tol=1e-9)


def test_vn_bound_components():
    plan = plan_exponents(2., 1.5, 1.5, 10)
    row = vn_norm_bounds(0, plan, 1., 0.5, 1., 0.5, 2., 1., phi_norm=3.)
    assert row.log_b_product == 0.
    assert math.isclose(row.vn_bound, 3.)
    log_plan = plan_exponents(2., 1.5, 1.5, 10, schedule='log')
    with pytest.raises(ValueError):
        vn_norm_bounds(11, log_plan, 1., 0.5, 1., 0.5, 2., 1.)
    assert math.isfinite(vn_norm_bounds(10, log_plan, 1., 0.5, 1., 0.5, 2., 1.).log_vn_bound)


def test_b_product_bound():
    pb = b_product_bound(3, 0.5, 2., 7, 4.)
    assert math.isclose(pb.log_bound, log_b_product(3, 0.5, 2., 7, 4.))
    expected = 2. ** 3 * 4. ** 0.75 * math.factorial(10) ** 0.5
    assert math.isclose(pb.bound, expected, rel_tol=1e-12)
    q = torch.tensor([64., 81., 100.], dtype=torch.float64)
    assert torch.allclose(pb.per_factor, per_factor_bound(q, 0.5, 4.))
    assert math.isclose(float(per_factor_bound(torch.tensor(16., dtype=torch.float64), 0.5, 4., 1.)), 4. ** 0.25 * 16 ** 0.25)
