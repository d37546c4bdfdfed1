"""Iteration-scheme series u = sum_n v_n.

Each term v_n(t, x) is an integral over ordered times 0 < r_1 < ... < r_n < t of
a Gaussian expectation along an exact OU chain x -> Z_{r_1} -> ... -> Z_t. The
time simplex is sampled (uniformly or with Dirichlet spacings matched to the
Lambda singularity) and the chain is stepped with exact transitions.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from .gaussian import GaussianSpec, ou_transition
from .registry import TestFunctionSpec, require_admissible
from .spectral import _lambda, default_tgrid, fit_delta, lambda_diagonal
from .stats import Estimate, sum_estimates
from .streams import as_generator, as_stream, block_sizes, map_blocks, standard_normal
from .utils import _as_state, _as_time, inner


log = logging.getLogger(__name__)

MODES = ('uniform', 'dirichlet')
# Normalized spacings below this are redrawn.
MIN_SPACING = 1e-12


@dataclass
class SeriesConfig:
    """Monte Carlo settings for the series terms.

    Args:
        nsamples (int): simplex samples per term.
        mode (str): 'uniform' or 'dirichlet' time sampling.
        delta (float, optional): Dirichlet exponent; fitted from the model when None.
        block_size (int): samples per random substream.
        workers (int): worker processes.
        hermite_nodes (int): Gauss-Hermite nodes for the 1-D order-0 term; 0 forces Monte Carlo.
        override (bool): run even when a hypothesis fails.
    """
    nsamples: int = 2 ** 16
    mode: str = 'dirichlet'
    delta: float = None
    block_size: int = 8192
    workers: int = 1
    hermite_nodes: int = 64
    override: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError("Unknown sampling mode '{}'. Choices: {}".format(self.mode, MODES))
        if self.delta is not None and not 0 < self.delta < 1:
            raise ValueError("Dirichlet delta must lie in (0, 1), got {}".format(self.delta))


@dataclass
class QuadratureConfig:
    legendre: int = 24
    hermite: int = 16
    chunk: int = 64


@dataclass
class SimplexSample:
    """Ordered times with their importance weights.

    Args:
        times (torch.Tensor): r_1 < ... < r_n, shape (n,) or (B, n).
        spacings (torch.Tensor): r_1 - 0, r_2 - r_1, ..., t - r_n, shape (n + 1,) or (B, n + 1).
        weight (torch.Tensor): importance weight times simplex volume.
        resampled (int): draws rejected by the spacing guard.
    """
    times: torch.Tensor
    spacings: torch.Tensor
    weight: torch.Tensor
    resampled: int = 0


def resolve_delta(model, cfg):
    if cfg.delta is not None:
        return cfg.delta
    delta, _ = fit_delta(model, default_tgrid(model))
    if not 0 < delta < 1:
        raise ValueError("Fitted delta {} is outside (0, 1); set it explicitly".format(delta))
    return delta


def _draw_spacings(gen, n, mode, alpha, size):
    if mode == 'uniform':
        r = np.sort(gen.uniform(0., 1., (size, n)), axis=1)
        edges = np.concatenate([np.zeros((size, 1)), r, np.ones((size, 1))], axis=1)
        return np.diff(edges, axis=1)
    return gen.dirichlet(np.full(n + 1, alpha), size)


def sample_ordered_times(n, t, mode='uniform', rng=None, delta=None, size=None):
    """Samples ordered times on [0, t] with a weight unbiased for the simplex integral.

    Uniform mode sorts n uniforms and carries weight t^n / n!. Dirichlet mode draws
    the normalized spacings from Dirichlet(1 - delta, ..., 1 - delta) and carries
    weight t^n / pi(w), pi being the Dirichlet density. Draws with a spacing below
    1e-12 t are redrawn and counted.

    Args:
        n (int): number of times, at least 1.
        t (float): positive horizon.
        mode (str): 'uniform' or 'dirichlet'.
        rng: Stream or numpy Generator.
        delta (float, optional): Dirichlet exponent in (0, 1).
        size (int, optional): batch size.

    Returns:
        SimplexSample
    """
    if n < 1:
        raise ValueError("Need at least one time, got n={}".format(n))
    t = _as_time(t)
    if mode not in MODES:
        raise ValueError("Unknown sampling mode '{}'. Choices: {}".format(mode, MODES))
    if mode == 'dirichlet' and (delta is None or not 0 < delta < 1):
        raise ValueError("Dirichlet mode needs delta in (0, 1), got {}".format(delta))
    gen = as_generator(rng)
    batch = 1 if size is None else int(size)
    alpha = None if mode == 'uniform' else 1 - delta

    w = _draw_spacings(gen, n, mode, alpha, batch)
    resampled = 0
    bad = (w < MIN_SPACING).any(axis=1)
    while bad.any():
        idx = np.flatnonzero(bad)
        resampled += idx.size
        w[idx] = _draw_spacings(gen, n, mode, alpha, idx.size)
        bad = (w < MIN_SPACING).any(axis=1)
    if resampled:
        log.debug('Redrew %d simplex samples with spacing below %g t', resampled, MIN_SPACING)

    spacings = torch.from_numpy(w) * t
    times = torch.cumsum(spacings[:, :n], dim=1)
    if mode == 'uniform':
        weight = torch.full((batch,), t ** n / math.factorial(n), dtype=torch.float64)
    else:
        log_density = (math.lgamma((n + 1) * alpha) - (n + 1) * math.lgamma(alpha)
                       + (alpha - 1) * torch.log(torch.from_numpy(w)).sum(dim=1))
        weight = torch.exp(n * math.log(t) - log_density)
    if size is None:
        return SimplexSample(times[0], spacings[0], weight[0], resampled)
    return SimplexSample(times, spacings, weight, resampled)


def _chain(model, drift, phi, x, dts, gs):
    """phi(Z_t) prod_i <Lambda(dt_i) B(Z_{r_i}), g_i> along an exact OU chain.

    dts[0] is the step from 0 to r_1 and carries no factor.
    """
    a, q = model.a_t, model.q_t
    z, _ = ou_transition(model, x, dts[0], None, g=gs[0])
    prod = 1.
    for dt, g in zip(dts[1:], gs[1:]):
        prod = prod * inner(_lambda(a, q, dt) * drift(z), g)
        z, _ = ou_transition(model, z, dt, None, g=g)
    return phi(z) * prod


def _vn_block(task):
    model, drift, phi, t, x, n, mode, delta, stream, size = task
    gen = stream.generator()
    if n == 0:
        g = standard_normal(gen, (size, model.dim))
        z, _ = ou_transition(model, x, t, None, g=g)
        values, resampled = phi(z), 0
    else:
        sample = sample_ordered_times(n, t, mode, gen, delta=delta, size=size)
        g = standard_normal(gen, (n + 1, size, model.dim))
        dts = [sample.spacings[:, i:i + 1] for i in range(n + 1)]
        values = sample.weight * _chain(model, drift, phi, x, dts, list(g))
        resampled = sample.resampled
    values = values.numpy()
    if not np.isfinite(values).all():
        raise FloatingPointError("Non-finite sample in block {} of term {} (sample {})"
                                 .format(stream.key[-1], n, int(np.argmin(np.isfinite(values)))))
    return values, resampled


def _hermite_v0(model, phi, t, x, nodes):
    law = GaussianSpec.ou_law(model, t, x)
    xi, w = hermegauss(nodes)
    z = law.mean + law.var.sqrt() * torch.from_numpy(xi).unsqueeze(-1)
    w = torch.from_numpy(w) / math.sqrt(2 * math.pi)
    return float((w * phi(z)).sum())


def estimate_vn(model, drift, phi, t, x, n, cfg=None, rng=0):
    """Estimates the series term v_n(t, x).

    Args:
        model (SpectralModel): operator model.
        drift (DriftSpec): nonlinearity B.
        phi (TestFunctionSpec): initial datum.
        t (float): positive time.
        x: starting state.
        n (int): order, at least 0.
        cfg (SeriesConfig, optional): Monte Carlo settings.
        rng (Stream or int): block b uses substream rng.child(n, b).

    Returns:
        Estimate
    """
    cfg = cfg or SeriesConfig()
    stream = as_stream(rng)
    t = _as_time(t)
    x = _as_state(x, model.dim)
    drift.validate(model.dim)
    phi.validate(model.dim)
    if n < 0:
        raise ValueError("Series order must be nonnegative, got {}".format(n))
    require_admissible(drift, phi, n, cfg.override)

    if n == 0 and model.dim == 1 and cfg.hermite_nodes > 0:
        value = _hermite_v0(model, phi, t, x, cfg.hermite_nodes)
        return Estimate.exact(value, cfg.hermite_nodes, stream.seed, mode='hermite')

    delta = resolve_delta(model, cfg) if n >= 1 and cfg.mode == 'dirichlet' else None
    sizes = block_sizes(cfg.nsamples, cfg.block_size)
    tasks = [(model, drift, phi, t, x, n, cfg.mode, delta, stream.child(n, b), size)
             for b, size in enumerate(sizes)]
    results = map_blocks(_vn_block, tasks, cfg.workers)
    values = np.concatenate([r[0] for r in results])
    resampled = sum(r[1] for r in results)
    mode = cfg.mode if n >= 1 else 'mc'
    est = Estimate.from_samples(values, stream.seed, mode=mode, delta=delta, resampled=resampled)
    log.debug('v_%d(t=%g): %.10g +- %.3g over %d samples in %d blocks (%s)',
              n, t, est.mean, est.stderr, est.nsamples, len(sizes), mode)
    return est


def quadrature_vn(model, drift, phi, t, x, n, cfg=None, override=False):
    """Deterministic v_n for 1-D models and n in {1, 2}.

    Nested Gauss-Legendre over the time simplex, tensor Gauss-Hermite over the
    n + 1 standardized increments, same integrand as estimate_vn.
    """
    cfg = cfg or QuadratureConfig()
    if model.dim != 1:
        raise ValueError("Quadrature supports 1-D models only, got dim={}".format(model.dim))
    if n not in (1, 2):
        raise ValueError("Quadrature supports n in {{1, 2}}, got {}".format(n))
    t = _as_time(t)
    x = _as_state(x, 1)
    drift.validate(1)
    phi.validate(1)
    require_admissible(drift, phi, n, override)

    xi, wl = leggauss(cfg.legendre)
    xi, wl = torch.from_numpy(xi), torch.from_numpy(wl)
    if n == 1:
        r1 = t * (xi + 1) / 2
        W = t / 2 * wl
        spacings = torch.stack([r1, t - r1], dim=1)
    else:
        r2 = t * (xi + 1) / 2
        r1 = r2.unsqueeze(1) * (xi + 1) / 2
        W = (t / 2 * wl).unsqueeze(1) * (r2.unsqueeze(1) / 2 * wl)
        r2 = r2.unsqueeze(1).expand_as(r1)
        spacings = torch.stack([r1, r2 - r1, t - r2], dim=-1).reshape(-1, 3)
        W = W.reshape(-1)

    hx, hw = hermegauss(cfg.hermite)
    hx = torch.from_numpy(hx)
    hw = torch.from_numpy(hw) / math.sqrt(2 * math.pi)
    grid = torch.cartesian_prod(*[hx] * (n + 1)).reshape(-1, n + 1)
    gw = torch.cartesian_prod(*[hw] * (n + 1)).reshape(-1, n + 1).prod(dim=1)

    gs = [grid[:, i].reshape(1, -1, 1) for i in range(n + 1)]
    partial = []
    for start in range(0, spacings.size(0), cfg.chunk):
        chunk = spacings[start:start + cfg.chunk]
        dts = [chunk[:, i].reshape(-1, 1, 1) for i in range(n + 1)]
        inner_vals = (_chain(model, drift, phi, x, dts, gs) * gw).sum(dim=1)
        partial.extend((W[start:start + cfg.chunk] * inner_vals).tolist())
    return math.fsum(partial)


@dataclass
class SeriesResult:
    terms: list
    partial_sums: list
    ratio_diagnostics: list
    mode: str = 'dirichlet'

    @property
    def u(self):
        return self.partial_sums[-1]

    def rows(self):
        """CSV rows n, mean, stderr, nsamples, mode, seed.
        """
        return [(n, e.mean, e.stderr, e.nsamples, e.extras.get('mode', self.mode), e.seed)
                for n, e in enumerate(self.terms)]


def estimate_series(model, drift, phi, t, x, n_max, cfg=None, rng=0):
    """Estimates v_0..v_{n_max}, their partial sums and successive term ratios.
    """
    if n_max < 0:
        raise ValueError("n_max must be nonnegative, got {}".format(n_max))
    cfg = cfg or SeriesConfig()
    stream = as_stream(rng)
    terms = [estimate_vn(model, drift, phi, t, x, n, cfg, stream) for n in range(n_max + 1)]
    partial_sums = [sum_estimates(terms[:k + 1], seed=stream.seed) for k in range(n_max + 1)]
    ratios = []
    for lo, hi in zip(terms[:-1], terms[1:]):
        ratios.append(abs(hi.mean) / abs(lo.mean) if lo.mean != 0 else math.nan)
    log.info('Series to order %d: u = %.10g +- %.3g', n_max, partial_sums[-1].mean,
             partial_sums[-1].stderr)
    return SeriesResult(terms, partial_sums, ratios, cfg.mode)


def likelihood_weight_partial(model, drift, t, x, n_max, cfg=None, rng=0):
    """Estimates E[rho_{<= n_max}(t, x)], the partial weight series with phi = 1.
    """
    if n_max < 0:
        raise ValueError("n_max must be nonnegative, got {}".format(n_max))
    cfg = cfg or SeriesConfig()
    stream = as_stream(rng)
    one = TestFunctionSpec.constant(1.)
    terms = [Estimate.exact(1., seed=stream.seed)]
    terms += [estimate_vn(model, drift, one, t, x, n, cfg, stream) for n in range(1, n_max + 1)]
    return sum_estimates(terms, seed=stream.seed)


def _gradient_block(task):
    model, phi, t, x, h, stream, size = task
    g = standard_normal(stream.generator(), (size, model.dim))
    z, _ = ou_transition(model, x, t, None, g=g)
    lam, _ = lambda_diagonal(model, t)
    return (phi(z) * inner(lam * h, g)).numpy()


def estimate_gradient(model, phi, t, x, h, cfg=None, rng=0):
    """Estimates <h, D S_t phi(x)> = E[phi(Z_t) <Lambda(t) h, Q_t^{-1/2}(Z_t - e^{tA} x)>].
    """
    cfg = cfg or SeriesConfig()
    stream = as_stream(rng)
    t = _as_time(t)
    x = _as_state(x, model.dim)
    h = _as_state(h, model.dim)
    phi.validate(model.dim)
    tasks = [(model, phi, t, x, h, stream.child(b), size)
             for b, size in enumerate(block_sizes(cfg.nsamples, cfg.block_size))]
    values = np.concatenate(map_blocks(_gradient_block, tasks, cfg.workers))
    return Estimate.from_samples(values, stream.seed)


def closed_form_u(model, drift, phi, t, x):
    """Exact u(t, x) = E phi(X_t) for zero or constant drift, where X_t is Gaussian.

    X_t has mean e^{tA}x + int_0^t e^{sA} b ds and covariance Q_t.
    """
    if drift.kind not in ('zero', 'constant'):
        raise ValueError("Closed form needs a zero or constant drift, got '{}'".format(drift.kind))
    law = GaussianSpec.ou_law(model, t, x)
    if drift.kind == 'constant':
        drift.validate(model.dim)
        a = model.a_t
        law = GaussianSpec(law.mean + torch.expm1(a * t) / a * torch.tensor(drift.b, dtype=torch.float64),
                           law.var)
    return phi.gaussian_expectation(law)


def conditional_factor_variance(model, drift, dt, z, nsamples=2 ** 16, rng=0):
    """Estimates the variance of the chain factor <Lambda(dt) B(z), g> at frozen (dt, z).

    Given the past the factor has mean zero, so its conditional variance is the
    second moment over fresh g ~ N(0, I) and should equal |Lambda(dt) B(z)|^2.

    Returns:
        tuple: the Estimate and the exact |Lambda(dt) B(z)|^2.
    """
    stream = as_stream(rng)
    dt = _as_time(dt, 'dt')
    z = _as_state(z, model.dim)
    drift.validate(model.dim)
    lam_b = _lambda(model.a_t, model.q_t, dt) * drift(z)
    g = standard_normal(stream.generator(), (nsamples, model.dim))
    factor = inner(lam_b, g)
    exact = float((lam_b ** 2).sum())
    return Estimate.from_samples((factor ** 2).numpy(), stream.seed), exact
