"""Gaussian laws on the truncated state space and the moments of the invariant measure.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from .spectral import _decay, _qt, q_infinity, semigroup_apply, qt_eigenvalues
from .stats import Estimate, calculate_error, exact_mean
from .streams import as_generator, standard_normal
from .utils import _as_state


log = logging.getLogger(__name__)

# Order up to which the moment recursion runs on linear floats.
LINEAR_MOMENT_ORDER = 20


@dataclass
class GaussianSpec:
    """Diagonal Gaussian N(mean, diag(var)).
    """
    mean: torch.Tensor
    var: torch.Tensor

    def __post_init__(self):
        self.mean = _as_state(self.mean)
        self.var = _as_state(self.var, self.mean.size(-1))
        if bool((self.var < 0).any()):
            raise ValueError("Variances must be nonnegative, got {}".format(self.var.tolist()))

    @property
    def dim(self):
        return self.mean.size(-1)

    @classmethod
    def ou_law(cls, model, t, x):
        """Law N(e^{tA}x, Q_t) of the OU process started at x.
        """
        mean = semigroup_apply(model, t, x)
        if t == 0:
            return cls(mean, torch.zeros(model.dim, dtype=torch.float64))
        return cls(mean, qt_eigenvalues(model, t))

    @classmethod
    def invariant(cls, model):
        eigs, _ = q_infinity(model)
        return cls(torch.zeros(model.dim, dtype=torch.float64), eigs)


def sample_gaussian(spec, rng, size=None):
    """Draws from a diagonal Gaussian.

    Args:
        spec (GaussianSpec): law to sample.
        rng (Stream or numpy.random.Generator): random stream.
        size (int, optional): number of draws; a single state if None.

    Returns:
        torch.Tensor: shape (N,) or (size, N).
    """
    rng = as_generator(rng)
    shape = (spec.dim,) if size is None else (int(size), spec.dim)
    g = standard_normal(rng, shape)
    return spec.mean + spec.var.sqrt() * g


def ou_transition(model, z, dt, rng, g=None):
    """Exact OU step z -> e^{dt A} z + Q_dt^{1/2} g.

    Args:
        model (SpectralModel): operator model.
        z: states, shape (N,) or (B, N).
        dt: positive step, float or tensor broadcastable to z (e.g. (B, 1)).
        rng: random stream; ignored when g is given.
        g (torch.Tensor, optional): standard normal draws shaped like z.

    Returns:
        (torch.Tensor, torch.Tensor): next states and the standardized increments g.
    """
    z = _as_state(z, model.dim)
    dt = torch.as_tensor(dt, dtype=torch.float64)
    if not bool((dt > 0).all()):
        raise ValueError("OU step must be positive, got {}".format(dt.min().item()))
    if g is None:
        g = standard_normal(as_generator(rng), tuple(z.shape))
    a, q = model.a_t, model.q_t
    z_next = _decay(a, dt) * z + torch.sqrt(_qt(a, q, dt)) * g
    return z_next, g


def trace_powers(eigs, k):
    """Tr(Q^k) for a diagonal Q.
    """
    eigs = torch.as_tensor(eigs, dtype=torch.float64)
    return float((eigs ** k).sum())


def exact_even_moments(qinf_eigs, n_max, log_scale=False):
    """Moments E|x|^{2k}, k = 0..n_max, of the centered Gaussian with covariance eigenvalues qinf_eigs.

    Uses F^{(n+1)}(0) = sum_k 2^k k! C(n, k) F^{(n-k)}(0) Tr(Q^{k+1}), where F is
    the Laplace transform of |x|^2. Orders up to 20 are summed on floats; higher
    orders by log-sum-exp.

    Args:
        qinf_eigs: nonnegative eigenvalues.
        n_max (int): highest order.
        log_scale (bool, optional): return log-moments (-inf for zero moments).

    Returns:
        torch.Tensor: n_max + 1 values.
    """
    eigs = torch.as_tensor(qinf_eigs, dtype=torch.float64).flatten()
    if n_max < 0:
        raise ValueError("n_max must be nonnegative, got {}".format(n_max))
    if bool((eigs < 0).any()):
        raise ValueError("Covariance eigenvalues must be nonnegative")

    linear_top = min(n_max, LINEAR_MOMENT_ORDER)
    traces = [trace_powers(eigs, k + 1) for k in range(linear_top)]
    F = [1.]
    for n in range(linear_top):
        F.append(math.fsum(2 ** k * math.factorial(k) * math.comb(n, k) * F[n - k] * traces[k]
                           for k in range(n + 1)))
    logF = torch.tensor([math.log(f) if f > 0 else -math.inf for f in F], dtype=torch.float64)

    if n_max > linear_top:
        log_eigs = torch.log(eigs)
        log_tr = torch.stack([torch.logsumexp((k + 1) * log_eigs, dim=0) for k in range(n_max)])
        logF = torch.cat([logF, torch.empty(n_max - linear_top, dtype=torch.float64)])
        for n in range(linear_top, n_max):
            k = torch.arange(n + 1, dtype=torch.float64)
            log_comb = math.lgamma(n + 1) - torch.lgamma(k + 1) - torch.lgamma(n - k + 1)
            terms = k * math.log(2) + torch.lgamma(k + 1) + log_comb + logF[n - k.long()] + log_tr[:n + 1]
            logF[n + 1] = torch.logsumexp(terms, dim=0)
        log.debug('Moment recursion continued in log space from order %d to %d', linear_top, n_max)

    if log_scale:
        return logF
    if n_max <= linear_top:
        return torch.tensor(F, dtype=torch.float64)
    if float(logF.max()) > math.log(np.finfo(np.float64).max):
        raise OverflowError("Moment of order {} overflows; request log_scale output"
                            .format(int(torch.argmax(logF))))
    values = torch.exp(logF)
    values[:linear_top + 1] = torch.tensor(F, dtype=torch.float64)
    return values


def moment_bound(trace_qinf, n):
    """Upper bound 2^n n! (Tr Q_inf)^n on E|x|^{2n}.
    """
    if n < 0 or trace_qinf < 0:
        raise ValueError("Need n >= 0 and a nonnegative trace, got n={}, trace={}".format(n, trace_qinf))
    return 2 ** n * math.factorial(n) * trace_qinf ** n


def lp_moment_bound(trace_qinf, p, c=2.):
    """Bound c (Tr Q_inf)^{1/2} p^{1/2} on the L^p(mu) norm of |x|.
    """
    if not p > 1:
        raise ValueError("p must exceed 1, got {}".format(p))
    if not c > 0:
        raise ValueError("c must be positive, got {}".format(c))
    return c * math.sqrt(trace_qinf) * math.sqrt(p)


@dataclass
class MomentReport:
    order: int
    exact: float
    bound: float
    lp_bound_constant: float

    @property
    def holds(self):
        return self.exact <= self.bound


def moment_report(qinf_eigs, n, c=2.):
    eigs = torch.as_tensor(qinf_eigs, dtype=torch.float64)
    trace = float(eigs.sum())
    exact = float(exact_even_moments(eigs, n)[n])
    return MomentReport(n, exact, moment_bound(trace, n), c * math.sqrt(trace))


def lp_norm_estimate(f, p, spec, nsamples, rng):
    """Monte Carlo estimate of ||f||_{L^p(spec)} with a delta-method standard error.

    Args:
        f (callable): maps a (B, N) batch of states to B reals.
        p (float): exponent, at least 1.
        spec (GaussianSpec): sampling law.
        nsamples (int): number of draws, at least 2.
        rng: random stream.

    Returns:
        Estimate: invalid if any value of f was not finite.
    """
    if p < 1:
        raise ValueError("p must be at least 1, got {}".format(p))
    if nsamples < 2:
        raise ValueError("Need at least 2 samples, got {}".format(nsamples))
    seed = getattr(rng, 'seed', 0)
    x = sample_gaussian(spec, rng, size=nsamples)
    values = torch.as_tensor(f(x), dtype=torch.float64).reshape(-1).numpy()
    finite = np.isfinite(values)
    invalid = int(values.size - np.count_nonzero(finite))
    if invalid:
        log.warning('%d of %d test function values were not finite', invalid, values.size)
    absv = np.abs(values[finite])
    if absv.size == 0:
        return Estimate(math.nan, math.nan, nsamples, seed, invalid=invalid)
    if np.all(absv == absv[0]):
        return Estimate(float(absv[0]), 0., nsamples, seed, invalid=invalid)
    powered = absv ** p
    m = exact_mean(powered)
    se_m = calculate_error(powered, m)
    norm = m ** (1 / p)
    stderr = norm / (p * m) * se_m if m > 0 else 0.
    return Estimate(norm, stderr, nsamples, seed, invalid=invalid, extras={'p': p})
