"""Named verification suites: identities, moments, martingales, equivalence.

Statistical checks use a 3 standard error tolerance.
"""
import logging
import math
from dataclasses import dataclass, replace

import torch

from . import bounds
from .gaussian import (GaussianSpec, exact_even_moments, lp_moment_bound, lp_norm_estimate,
                       moment_report, trace_powers)
from .girsanov import (PathConfig, estimate_girsanov_terms, estimate_girsanov_u, estimate_In,
                       estimate_u_direct, halving_ratios, ladder_moment_bound, ladder_residual,
                       ladder_second_moments, mean_martingale, step_halving_study)
from .registry import DriftSpec, TestFunctionSpec
from .series import (SeriesConfig, closed_form_u, conditional_factor_variance, estimate_gradient,
                     estimate_series, estimate_vn, quadrature_vn)
from .spectral import SpectralModel, lambda_diagonal, qt_eigenvalues, q_infinity, semigroup_apply, standard_model
from .streams import CHECKS, DIRECT, GIRSANOV, GRADIENT, SERIES, Stream


log = logging.getLogger(__name__)

SUITES = ('identities', 'moments', 'martingales', 'equivalence')
SIGMAS = 3.


@dataclass
class CheckResult:
    suite: str
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ''


def _check(suite, name, value, tolerance, passed, detail=''):
    result = CheckResult(suite, name, float(value), float(tolerance), bool(passed), detail)
    log.log(logging.INFO if result.passed else logging.WARNING, '%s/%s: %s (value %.6g, tol %.3g)',
            suite, name, 'pass' if result.passed else 'FAIL', result.value, result.tolerance)
    return result


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def _random_models(seed, count, max_dim=6):
    gen = Stream(seed).child(CHECKS, 0).generator()
    models = []
    for _ in range(count):
        dim = int(gen.integers(1, max_dim + 1))
        a = -gen.uniform(0.2, 5., dim)
        q = gen.uniform(0.1, 3., dim)
        models.append(SpectralModel(tuple(a), tuple(q)))
    return models


def identities(seed=0, samples=None, workers=1):
    suite = 'identities'
    out = []
    model = SpectralModel((-1., -4., -0.3), (2., 1., 0.5))
    x = torch.tensor([1., -2., 0.5], dtype=torch.float64)
    worst = {'lambda': 0., 'semigroup': 0., 'qt_additivity': 0.}
    monotone = True
    for t in (1e-6, 1e-3, 0.1, 0.7, 3.):
        lam, _ = lambda_diagonal(model, t)
        qt = qt_eigenvalues(model, t)
        expected = torch.exp(2 * model.a_t * t)
        worst['lambda'] = max(worst['lambda'], float(((lam ** 2 * qt - expected).abs() / expected).max()))
        for s in (1e-4, 0.2, 1.1):
            lhs = semigroup_apply(model, t + s, x)
            rhs = semigroup_apply(model, t, semigroup_apply(model, s, x))
            worst['semigroup'] = max(worst['semigroup'], float(((lhs - rhs).abs() / lhs.abs()).max()))
            qts = qt_eigenvalues(model, s)
            additive = qts + torch.exp(2 * model.a_t * s) * qt
            worst['qt_additivity'] = max(worst['qt_additivity'],
                                         float(((qt_eigenvalues(model, t + s) - additive).abs() / additive).max()))
            monotone &= bool((qt_eigenvalues(model, t + s) > qt).all())
    qinf, _ = q_infinity(model)
    monotone &= bool((qt_eigenvalues(model, 3.) < qinf).all())
    out.append(_check(suite, 'lambda_identity', worst['lambda'], 1e-12, worst['lambda'] <= 1e-12))
    out.append(_check(suite, 'semigroup_law', worst['semigroup'], 1e-12, worst['semigroup'] <= 1e-12))
    out.append(_check(suite, 'qt_additivity', worst['qt_additivity'], 1e-12, worst['qt_additivity'] <= 1e-12))
    out.append(_check(suite, 'qt_monotone_below_qinf', float(monotone), 1, monotone))

    plan = bounds.plan_exponents(2., 1.5, 2., 10 ** 4)
    out.append(_check(suite, 'exponent_n0', plan.n0, 7, plan.n0 == 7))
    recurrence = float((plan.inv_p[1:] - plan.inv_p[:-1] - 1 / plan.q).abs().max())
    out.append(_check(suite, 'exponent_recurrence', recurrence, 1e-14, recurrence < 1e-14))
    margin = float(plan.p.min()) - plan.bar_p
    out.append(_check(suite, 'exponent_above_bar_p', margin, 0, margin > 0))

    worst_beta = max(_rel(bounds.beta_chain_identity(n, d), bounds.simplex_time_integral(n, d, 1.))
                     for n in range(31) for d in (0.25, 0.5, 0.75))
    out.append(_check(suite, 'beta_gamma_identity', worst_beta, 1e-12, worst_beta <= 1e-12))
    worst_quad = max(_rel(bounds.simplex_time_integral_quadrature(n, d, 1., e),
                          bounds.simplex_time_integral(n, d, 1., e))
                     for n in range(1, 4) for d in (0.25, 0.5, 0.75) for e in (False, True))
    out.append(_check(suite, 'simplex_quadrature', worst_quad, 1e-6, worst_quad <= 1e-6))

    for d in (0.25, 0.5, 0.75):
        scan = bounds.gamma_ratio_bound_check(200, d)
        out.append(_check(suite, 'gamma_ratio_bounded_delta_{}'.format(d), scan.sup, math.inf, scan.bounded,
                          'tail slope {:.3g}, spearman rho {:.3g}'.format(scan.tail_slope, scan.spearman_rho)))

    plan = bounds.plan_exponents(2., 1.5, 1.5, 10)
    rows = bounds.bound_rows(10 ** 4, plan, c_delta=1., delta=0.5, trace=1., beta=0.5, c_beta=1., t=1.)
    test = bounds.ratio_test([r.log_vn_bound for r in rows], log_scale=True)
    out.append(_check(suite, 'bound_rows_converge', test.first_contractive_index, 10 ** 4, test.converges))
    return out


def moments(seed=0, samples=200000, workers=1):
    suite = 'moments'
    out = []
    worst = 0.
    for var in (1., 0.37, 2.5):
        F = exact_even_moments([var], 10)
        for n in range(11):
            double_fact = math.prod(range(2 * n - 1, 0, -2)) if n else 1
            worst = max(worst, _rel(float(F[n]), double_fact * var ** n))
    out.append(_check(suite, 'double_factorial_1d', worst, 1e-12, worst <= 1e-12))

    models = _random_models(seed, 100)
    exceed = 0
    trace_fail = 0
    for model in models:
        eigs, trace = q_infinity(model)
        exceed += sum(not moment_report(eigs, n).holds for n in range(11))
        for k in range(1, 8):
            if trace_powers(eigs, k) > trace ** k * (1 + 1e-12):
                trace_fail += 1
    out.append(_check(suite, 'exact_below_bound', exceed, 0, exceed == 0, '100 random diagonal models'))
    out.append(_check(suite, 'trace_power_inequality', trace_fail, 0, trace_fail == 0, 'k <= 6'))

    spec = GaussianSpec([0.], [1.])
    stream = Stream(seed).child(CHECKS, 1)
    for i, p in enumerate((2, 4, 8)):
        est = lp_norm_estimate(lambda z: z[:, 0], p, spec, samples, stream.child(i))
        bound = lp_moment_bound(1., p, 2.)
        out.append(_check(suite, 'lp_moment_bound_p{}'.format(p), est.mean, bound,
                          est.mean + SIGMAS * est.stderr <= bound))

    # |x|^beta against its per-factor bound at the first exponent q_1 of the kappa=2 plan
    beta = 0.5
    q1 = float(bounds.plan_exponents(2., 1.5, 2., 1).q[0])
    model = standard_model()
    _, trace = q_infinity(model)
    est = lp_norm_estimate(lambda z: z.norm(dim=-1) ** beta, q1, GaussianSpec.invariant(model),
                           samples, stream.child(3))
    bound = float(bounds.per_factor_bound(torch.tensor(q1, dtype=torch.float64), beta, trace))
    out.append(_check(suite, 'per_factor_drift_bound', est.mean, bound,
                      est.mean + SIGMAS * est.stderr <= bound, 'q_1 = {:g}'.format(q1)))
    return out


def _bounded_drifts(model):
    return [DriftSpec.zero(), DriftSpec.constant([0.5] * model.dim), DriftSpec.bounded_sin(0.4, 1.)]


def martingales(seed=0, samples=200000, workers=1):
    suite = 'martingales'
    out = []
    model = standard_model()
    t, x = 0.5, [0.3]
    cfg = PathConfig(npaths=max(samples // 2, 2), steps=256, workers=workers)
    root = Stream(seed).child(CHECKS, 2)
    for i, drift in enumerate(_bounded_drifts(model)):
        est = mean_martingale(model, drift, t, x, cfg, root.child(i))
        out.append(_check(suite, 'mean_martingale_{}'.format(drift.kind), abs(est.mean - 1),
                          SIGMAS * est.stderr, est.within(1., SIGMAS)))

    drift = DriftSpec.bounded_sin(0.4, 1.)
    psi_sup = drift.psi_sup(model)
    second = ladder_second_moments(model, drift, t, x, 4, cfg, root.child(10))
    for k, est in enumerate(second):
        bound = ladder_moment_bound(k, psi_sup, t)
        out.append(_check(suite, 'ladder_second_moment_{}'.format(k), est.mean, bound,
                          est.mean - SIGMAS * est.stderr <= bound))

    residual_cfg = PathConfig(npaths=max(samples // 10, 2), steps=1024, workers=workers)
    residual = ladder_residual(model, drift, t, x, 8, residual_cfg, root.child(11))
    out.append(_check(suite, 'ladder_exponential_residual', residual[-1], 1e-2,
                      residual[-1] < 1e-2,
                      'K=0 residual {:.3g}'.format(residual[0])))

    phi = TestFunctionSpec.cosine([1.])
    halves = [estimate_In(model, drift, phi, t, x, 1, replace(cfg, steps=m), root.child(12, i))
              for i, m in enumerate((512, 1024))]
    diff = abs(halves[0].mean - halves[1].mean)
    tol = SIGMAS * math.hypot(halves[0].stderr, halves[1].stderr)
    out.append(_check(suite, 'I1_step_halving', diff, tol, diff <= tol, 'steps 512 and 1024'))

    wide = SpectralModel((-1., -4., -0.3), (2., 1., 0.5))
    est, exact = conditional_factor_variance(wide, drift, 0.1, [0.3, -1., 2.], samples, root.child(13))
    out.append(_check(suite, 'conditional_factor_variance', abs(est.mean - exact), SIGMAS * est.stderr,
                      est.within(exact, SIGMAS), '|Lambda B|^2 = {:.6g}'.format(exact)))
    return out


def equivalence(seed=0, samples=200000, workers=1):
    """Girsanov terms against series terms, and the three estimators of u against each other.
    """
    suite = 'equivalence'
    out = []
    model = standard_model()
    drift = DriftSpec.bounded_sin(0.4, 1.)
    phi = TestFunctionSpec.cosine([1.])
    t, x = 0.5, [0.3]
    root = Stream(seed).child(CHECKS, 3)
    scfg = SeriesConfig(nsamples=samples, mode='dirichlet', delta=0.5, workers=workers)
    pcfg = PathConfig(npaths=samples, steps=1024, workers=workers)
    girsanov = estimate_girsanov_terms(model, drift, phi, t, x, 2, pcfg, root.child(GIRSANOV))
    for n in range(3):
        v = estimate_vn(model, drift, phi, t, x, n, scfg, root.child(SERIES))
        tol = SIGMAS * (girsanov[n].stderr + v.stderr)
        diff = abs(girsanov[n].mean - v.mean)
        out.append(_check(suite, 'I{}_equals_v{}'.format(n, n), diff, tol, diff <= tol))
        if n >= 1:
            quad = quadrature_vn(model, drift, phi, t, x, n)
            diff = abs(quad - v.mean)
            out.append(_check(suite, 'quadrature_v{}'.format(n), diff, SIGMAS * v.stderr,
                              v.within(quad, SIGMAS), 'quadrature {:.12g}'.format(quad)))

    drift = DriftSpec.constant([0.5])
    exact = closed_form_u(model, drift, phi, t, x)
    series = estimate_series(model, drift, phi, t, x, 5, scfg, root.child(SERIES, 1)).u
    u_g = estimate_girsanov_u(model, drift, phi, t, x, pcfg, root.child(GIRSANOV, 1))
    u_d = estimate_u_direct(model, drift, phi, t, x, pcfg, root.child(DIRECT, 1))
    for name, est in (('series', series), ('girsanov', u_g), ('direct', u_d)):
        diff = abs(est.mean - exact)
        out.append(_check(suite, 'constant_drift_{}'.format(name), diff, SIGMAS * est.stderr,
                          est.within(exact, SIGMAS), 'closed form {:.12g}'.format(exact)))

    # smoothing identity for cosine phi: <h, D S_t phi(x)> in closed form
    h = [1.]
    grad = estimate_gradient(model, phi, t, x, h, scfg, root.child(GRADIENT))
    decay = math.exp(-t)
    exact = -math.sin(decay * x[0]) * decay * h[0] * math.exp(-0.5 * float(qt_eigenvalues(model, t)))
    out.append(_check(suite, 'gradient_formula', abs(grad.mean - exact), SIGMAS * grad.stderr,
                      grad.within(exact, SIGMAS), 'closed form {:.12g}'.format(exact)))

    drift = DriftSpec.bounded_sin(0.4, 1.)
    uniform = estimate_vn(model, drift, phi, t, x, 1, replace(scfg, mode='uniform'), root.child(SERIES, 2))
    dirichlet = estimate_vn(model, drift, phi, t, x, 1, scfg, root.child(SERIES, 3))
    diff = abs(uniform.mean - dirichlet.mean)
    tol = SIGMAS * math.hypot(uniform.stderr, dirichlet.stderr)
    out.append(_check(suite, 'uniform_equals_dirichlet_v1', diff, tol, diff <= tol))
    out.append(_check(suite, 'dirichlet_stderr_below_uniform_v1', dirichlet.stderr, uniform.stderr,
                      dirichlet.stderr <= uniform.stderr))

    # B and phi both odd at x = 0 make the integrand odd
    odd = estimate_vn(model, drift, TestFunctionSpec.linear([1.]), t, [0.], 1,
                      replace(scfg, override=True), root.child(SERIES, 4))
    out.append(_check(suite, 'odd_symmetry_v1', abs(odd.mean), SIGMAS * odd.stderr,
                      odd.within(0., SIGMAS), 'phi linear, x = 0'))

    study = step_halving_study(model, drift, phi, t, x, (8, 16), pcfg, root.child(DIRECT, 2))
    ratio, = halving_ratios(study)
    out.append(_check(suite, 'direct_step_halving', abs(ratio - 0.5), 0.2, abs(ratio - 0.5) <= 0.2,
                      'bias ratio {:.3g}'.format(ratio)))
    return out


def run_suite(name, seed=0, samples=200000, workers=1):
    if name not in SUITES:
        raise ValueError("Unknown suite '{}'. Choices: {}".format(name, SUITES))
    log.info('Running %s suite (seed %d, samples %d)', name, seed, samples)
    return globals()[name](seed=seed, samples=samples, workers=workers)
