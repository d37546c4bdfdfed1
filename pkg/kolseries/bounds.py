"""Convergence machinery for the series: exponent plans, simplex Gamma integrals,
moment product bounds, the v_n / Dv_n norm bounds and the ratio test.

Factorial and Gamma arithmetic is carried in log space throughout.
"""
import logging
import math
from dataclasses import dataclass

import torch
from scipy.integrate import quad
from scipy.stats import spearmanr

from .registry import HypothesisError


log = logging.getLogger(__name__)

# Partial sums of the power tail run to this index; an integral bounds the rest.
TAIL_TERMS = 10 ** 6
# Largest log n0 the log schedule can represent in float64.
MAX_LOG_N0 = 700.
CONTRACTION = 1 - 1e-6
SCHEDULES = ('power', 'log')


@dataclass
class ExponentPlan:
    """Exponents with 1/p_n = 1/p_{n-1} + 1/q_n and p_n > bar_p.

    Args:
        p (torch.Tensor): p_0..p_nmax.
        q (torch.Tensor): q_1..q_nmax (q[0] holds q_1).
        inv_p (torch.Tensor): the recurrence as computed, 1/p_0..1/p_nmax.
    """
    p0: float
    bar_p: float
    kappa: float
    n0: int
    p: torch.Tensor
    q: torch.Tensor
    inv_p: torch.Tensor
    schedule: str = 'power'

    @property
    def nmax(self):
        return self.q.numel()


def log_tail_bound(log_n0, kappa):
    """Upper bound 1/(n0 log^kappa n0) + log(n0)^{1-kappa}/(kappa - 1) on sum_{n >= n0} 1/(n log^kappa n).
    """
    return math.exp(-log_n0) * log_n0 ** -kappa + log_n0 ** (1 - kappa) / (kappa - 1)


def _minimal_n0_log(gap, kappa):
    lo, hi = math.log(2), MAX_LOG_N0
    if log_tail_bound(hi, kappa) >= gap:
        raise ValueError("The log schedule needs n0 > e^{:.0f} for kappa={} and gap {:.4g}; "
                         "raise kappa or widen p0 - bar_p".format(MAX_LOG_N0, kappa, gap))
    if log_tail_bound(lo, kappa) < gap:
        return 2
    # bisection in log n0; the bound decreases in n0
    for _ in range(200):
        mid = (lo + hi) / 2
        if log_tail_bound(mid, kappa) < gap:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-13 * hi:
            break
    n0 = math.ceil(math.exp(hi))
    # neighbouring integers are only distinguishable in float64 below 2^52
    if n0 < 2 ** 52:
        while n0 > 2 and log_tail_bound(math.log(n0 - 1), kappa) < gap:
            n0 -= 1
        while log_tail_bound(math.log(n0), kappa) >= gap:
            n0 += 1
    else:
        while log_tail_bound(math.log(n0), kappa) >= gap:
            hi *= 1 + 1e-13
            n0 = math.ceil(math.exp(hi))
    return n0


def minimal_n0(gap, kappa, schedule='power'):
    """Smallest n0 whose tail sum_{n >= n0} q-term stays below gap.

    The power tail is summed up to TAIL_TERMS with an integral remainder. The log
    tail decays too slowly for that, so n0 comes from its closed-form bound by
    bisection in log n0 and may be astronomically large.
    """
    if schedule == 'log':
        return _minimal_n0_log(gap, kappa)
    n = torch.arange(1, TAIL_TERMS + 1, dtype=torch.float64)
    remainder = TAIL_TERMS ** (1 - kappa) / (kappa - 1)
    tails = torch.flip(torch.cumsum(torch.flip(n ** -kappa, [0]), 0), [0]) + remainder
    ok = torch.nonzero(tails < gap)
    if ok.numel() == 0:
        raise ValueError("No n0 <= {} makes the power tail smaller than {}".format(TAIL_TERMS, gap))
    return int(ok[0]) + 1


def plan_exponents(p0, bar_p, kappa, nmax, schedule='power'):
    """Builds the exponent sequences p_n, q_n.

    q_n = (n + n0)^kappa ('power') or (n + n0) log(n + n0)^kappa ('log'), where n0
    is minimal with a tail sum below 1/bar_p - 1/p0.

    Returns:
        ExponentPlan
    """
    if not kappa > 1:
        raise ValueError("kappa must exceed 1, got {}".format(kappa))
    if not p0 > bar_p > 1:
        raise ValueError("Need p0 > bar_p > 1, got p0={}, bar_p={}".format(p0, bar_p))
    if schedule not in SCHEDULES:
        raise ValueError("Unknown schedule '{}'. Choices: {}".format(schedule, SCHEDULES))
    if nmax < 0:
        raise ValueError("nmax must be nonnegative, got {}".format(nmax))
    n0 = minimal_n0(1 / bar_p - 1 / p0, kappa, schedule)

    m = torch.arange(1, nmax + 1, dtype=torch.float64) + float(n0)
    q = m ** kappa if schedule == 'power' else m * torch.log(m) ** kappa
    inv_p = torch.empty(nmax + 1, dtype=torch.float64)
    inv_p[0] = 1 / p0
    for i in range(nmax):
        inv_p[i + 1] = inv_p[i] + 1 / q[i]
    p = 1 / inv_p
    if nmax and not bool((p > bar_p).all()):
        raise ValueError("Exponent plan dips below bar_p={} by n={}".format(bar_p, nmax))
    log.debug('Exponent plan: n0=%d, p_%d=%.6g (%s schedule)', n0, nmax, float(p[-1]), schedule)
    return ExponentPlan(p0, bar_p, kappa, n0, p, q, inv_p, schedule)


def log_simplex_time_integral(n, delta, t, include_endpoint=False):
    if n < 0:
        raise ValueError("n must be nonnegative, got {}".format(n))
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1), got {}".format(delta))
    if not t > 0:
        raise ValueError("t must be positive, got {}".format(t))
    alpha = 1 - delta
    if include_endpoint:
        return ((n + 1) * math.lgamma(alpha) - math.lgamma((n + 1) * alpha)
                + (n * alpha - delta) * math.log(t))
    return n * math.lgamma(alpha) - math.lgamma(1 + n * alpha) + n * alpha * math.log(t)


def simplex_time_integral(n, delta, t, include_endpoint=False):
    """Integral over 0 < r_1 < ... < r_n < t of prod (r_{i+1} - r_i)^{-delta}, r_{n+1} = t.

    With include_endpoint the factor r_1^{-delta} is included as well.
    """
    return math.exp(log_simplex_time_integral(n, delta, t, include_endpoint))


def simplex_time_integral_quadrature(n, delta, t, include_endpoint=False, epsrel=1e-12):
    """Nested adaptive quadrature of the simplex integral, without the Gamma form.

    Substituting r_k = s theta shows G_k(s), the integral over 0 < r_1 < ... < r_k < s,
    is homogeneous of degree e_k = k(1 - delta) (less delta with the endpoint factor).
    With G_k(s) = s^{e_k} H_k(s), H_0 = 1 and

        H_k(s) = int_0^1 theta^{e_{k-1}} (1 - theta)^{-delta} H_{k-1}(s theta) dtheta,

    so both endpoint singularities go into quad's algebraic weight.
    """
    if not 0 <= n <= 4:
        raise ValueError("Nested quadrature supports n <= 4, got {}".format(n))
    alpha = 1 - delta
    e0 = -delta if include_endpoint else 0.

    def H(k, s):
        if k == 0:
            return 1.
        e = e0 + (k - 1) * alpha
        value, _ = quad(lambda theta: H(k - 1, s * theta), 0., 1., weight='alg', wvar=(e, -delta),
                        epsabs=0., epsrel=epsrel)
        return value

    return t ** (e0 + n * alpha) * H(n, float(t))


def beta_chain_identity(n, delta):
    """prod_{i=1}^n Beta(1 - delta, 1 + (i - 1)(1 - delta)).
    """
    alpha = 1 - delta
    total = 0.
    for i in range(1, n + 1):
        b = 1 + (i - 1) * alpha
        total += math.lgamma(alpha) + math.lgamma(b) - math.lgamma(alpha + b)
    return math.exp(total)


def per_factor_bound(q, beta, trace, c_beta=2.):
    """Bound c_beta Tr^{beta/2} q^{beta/2} on the L^q(mu) norm of a drift with growth |x|^beta.
    """
    return c_beta * trace ** (beta / 2) * q ** (beta / 2)


@dataclass
class ProductBound:
    log_bound: float
    per_factor: torch.Tensor

    @property
    def bound(self):
        return _safe_exp(self.log_bound)


def log_b_product(n, beta, kappa, n0, trace_qinf, c_beta=2.):
    return (n * math.log(c_beta) + n * beta / 2 * math.log(trace_qinf)
            + beta * kappa / 2 * math.lgamma(n + n0 + 1))


def b_product_bound(n, beta, kappa, n0, trace_qinf, c_beta=2.):
    """Bound C^n Tr^{n beta/2} [(n + n0)!]^{beta kappa/2} on prod_{i<=n} ||B||_{L^{q_i}}.

    Also returns the per-factor bounds at q_i = (i + n0)^kappa.
    """
    log_bound = log_b_product(n, beta, kappa, n0, trace_qinf, c_beta)
    q = (torch.arange(1, n + 1, dtype=torch.float64) + n0) ** kappa
    return ProductBound(log_bound, per_factor_bound(q, beta, trace_qinf, c_beta))


def b_product_from_plan(plan, n, beta, trace_qinf, c_beta=2.):
    """Log of the product of per-factor bounds over the plan's own q_1..q_n.
    """
    if n > plan.nmax:
        raise ValueError("Plan covers n <= {}, got {}".format(plan.nmax, n))
    logs = torch.log(per_factor_bound(plan.q[:n], beta, trace_qinf, c_beta))
    return float(logs.sum())


@dataclass
class BoundRow:
    """Log-scale bound components for one order n.
    """
    n: int
    log_b_product: float
    simplex_integral: float
    log_vn_bound: float
    log_dvn_bound: float
    ratio: float = math.nan

    @property
    def vn_bound(self):
        return _safe_exp(self.log_vn_bound)

    @property
    def dvn_bound(self):
        return _safe_exp(self.log_dvn_bound)

    @property
    def b_product(self):
        return _safe_exp(self.log_b_product)


def _safe_exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def vn_norm_bounds(n, plan, c_delta, delta, trace, beta, c_beta, t, phi_norm=1.):
    """Bounds on ||v_n(t)||_{L^{p_n}} and ||Dv_n(t)||_{L^{p_n}}.

    Both are ||phi|| C_delta^n x (product bound) x the matching simplex integral;
    the gradient bound uses the endpoint variant. Log-schedule plans take the
    product over their own q_i and so need n <= plan.nmax.
    """
    if n == 0:
        log_b = 0.
    elif plan.schedule == 'power':
        log_b = log_b_product(n, beta, plan.kappa, plan.n0, trace, c_beta)
    else:
        log_b = b_product_from_plan(plan, n, beta, trace, c_beta)
    log_common = math.log(phi_norm) + n * math.log(c_delta) + log_b
    log_s = log_simplex_time_integral(n, delta, t)
    log_ds = log_simplex_time_integral(n, delta, t, include_endpoint=True)
    return BoundRow(n, log_b, math.exp(log_s), log_common + log_s, log_common + log_ds)


def gamma_ratio(n, delta):
    """Gamma(1 + (n - 1)(1 - delta)) / Gamma(1 + n(1 - delta)).
    """
    if n < 1:
        raise ValueError("n must be at least 1, got {}".format(n))
    alpha = 1 - delta
    return math.exp(math.lgamma(1 + (n - 1) * alpha) - math.lgamma(1 + n * alpha))


@dataclass
class GammaRatioScan:
    bounded: bool
    sup: float
    argmax: int
    tail_slope: float
    spearman_rho: float = math.nan
    spearman_pvalue: float = math.nan


def gamma_ratio_bound_check(nmax, delta, alpha_level=0.05):
    """Scans gamma_ratio(n) n^{1 - delta} over n <= nmax.

    Bounded means finite with no growth trend over the upper half of the scan: the
    increments show no significant increasing Spearman rank correlation with n and the
    log-log slope stays below 0.05.
    """
    alpha = 1 - delta
    n = torch.arange(1, nmax + 1, dtype=torch.float64)
    log_s = torch.lgamma(1 + (n - 1) * alpha) - torch.lgamma(1 + n * alpha) + alpha * torch.log(n)
    s = torch.exp(log_s)
    half = max(nmax // 2, 1)
    slope, rho, pvalue = 0., math.nan, math.nan
    if nmax - half >= 2:
        X = torch.stack([torch.ones(nmax - half, dtype=torch.float64), torch.log(n[half:])], dim=1)
        slope = float(torch.linalg.lstsq(X, log_s[half:].unsqueeze(1)).solution[1])
    if nmax - half >= 3:
        result = spearmanr(n[half:-1].numpy(), torch.diff(s)[half:].numpy())
        rho, pvalue = float(result[0]), float(result[1])
    sup = float(s.max())
    trend = rho > 0 and pvalue < alpha_level
    bounded = math.isfinite(sup) and slope < 0.05 and not trend
    return GammaRatioScan(bounded, sup, int(torch.argmax(s)) + 1, slope, rho, pvalue)


@dataclass
class RatioTest:
    converges: bool
    first_contractive_index: int
    ratios: list


def ratio_test(terms, log_scale=False):
    """Finds the first index after which successive ratios stay below 1 - 1e-6.

    Args:
        terms: positive values, or their logs with log_scale.

    Returns:
        RatioTest: first_contractive_index is -1 when the ratios never settle.
    """
    terms = [float(v) for v in terms]
    if not log_scale and all(v == 0 for v in terms):
        return RatioTest(True, 0, [])
    if log_scale:
        ratios = [_safe_exp(b - a) for a, b in zip(terms[:-1], terms[1:])]
    else:
        ratios = [b / a if a > 0 else math.inf for a, b in zip(terms[:-1], terms[1:])]
    index = len(ratios)
    while index > 0 and ratios[index - 1] < CONTRACTION:
        index -= 1
    converges = index < len(ratios) or not ratios
    return RatioTest(converges, index if converges else -1, ratios)


def require_growth_condition(beta, kappa, delta):
    if not beta * kappa < 2 * (1 - delta):
        raise HypothesisError('growth condition beta*kappa < 2(1-delta)',
                              'beta*kappa = {:.6g}, 2(1-delta) = {:.6g}'.format(beta * kappa, 2 * (1 - delta)))


def bound_rows(nmax, plan, c_delta, delta, trace, beta, c_beta=2., t=1., phi_norm=1., check=True):
    """BoundRow table for n = 0..nmax with successive v_n bound ratios filled in.
    """
    if check:
        require_growth_condition(beta, plan.kappa, delta)
    rows = [vn_norm_bounds(n, plan, c_delta, delta, trace, beta, c_beta, t, phi_norm)
            for n in range(nmax + 1)]
    for lo, hi in zip(rows[:-1], rows[1:]):
        lo.ratio = _safe_exp(hi.log_vn_bound - lo.log_vn_bound)
    return rows


def predicted_ratio(n, delta, kappa, n0, trace, beta, c_beta, c_delta, t):
    """vn_bound(n + 1) / vn_bound(n) from its Gamma-ratio factorization (n >= 1).
    """
    alpha = 1 - delta
    return (c_beta * trace ** (beta / 2) * c_delta * math.gamma(alpha) * t ** alpha
            * (n + 1 + n0) ** (beta * kappa / 2) * gamma_ratio(n + 1, delta))
