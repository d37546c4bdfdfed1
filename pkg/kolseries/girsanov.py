"""Girsanov side: OU paths, the exponential martingale, the iterated-integral ladder
and the drift-included oracle.

All path estimators share one draw layout: per step a (2, B, N) block of standard
normals, the first slice driving dW and the second the variance correction of the
OU noise. Estimators handed the same stream therefore see the same Wiener paths.
"""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import torch

from .registry import HypothesisError, TestFunctionSpec, require_admissible
from .stats import Estimate, exact_mean
from .streams import as_generator, as_stream, block_sizes, map_blocks, standard_normal
from .utils import _as_state, _as_time, inner


log = logging.getLogger(__name__)

# Epsilon of the Novikov proxy E exp(eps |psi|^2).
NOVIKOV_EPS = 0.1
# ESS fraction below which the Girsanov weights are flagged.
ESS_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class PathGrid:
    t_final: float
    steps: int

    def __post_init__(self):
        _as_time(self.t_final, 't_final')
        if int(self.steps) < 1:
            raise ValueError("Grid needs at least one step, got {}".format(self.steps))

    @property
    def dt(self):
        return self.t_final / self.steps

    @property
    def times(self):
        return torch.linspace(0., self.t_final, self.steps + 1, dtype=torch.float64)


@dataclass
class PathConfig:
    """Path simulation settings.

    Args:
        npaths (int): number of Wiener paths.
        steps (int): time steps on [0, t].
        block_size (int): paths per random substream.
        workers (int): worker processes.
        couple (bool): the direct oracle reuses the Girsanov stream.
        bias_estimate (bool): attach a step-halving bias to the direct oracle.
        override (bool): run even when a hypothesis fails.
    """
    npaths: int = 2 ** 15
    steps: int = 1024
    block_size: int = 8192
    workers: int = 1
    couple: bool = False
    bias_estimate: bool = True
    override: bool = False


@dataclass
class MartingaleLadder:
    """Terminal ladder M^(0..n), exponential martingale M_t and (L_t, int |psi|^2 ds).
    """
    order: int
    values: torch.Tensor
    exp_martingale: torch.Tensor
    log_martingale_terms: tuple

    def __post_init__(self):
        if not bool(torch.isfinite(self.values).all()):
            raise FloatingPointError("Ladder has non-finite terminal values")
        if not bool((self.exp_martingale > 0).all()):
            raise FloatingPointError("Exponential martingale is not positive on every path")


def _sinhc_m1(y):
    """sinh(y)/y - 1, by its series for small |y|.
    """
    small = y.abs() < 0.1
    safe = torch.where(small, torch.ones_like(y), y)
    series = y ** 2 / 6 + y ** 4 / 120 + y ** 6 / 5040
    return torch.where(small, series, torch.sinh(safe) / safe - 1)


@dataclass
class _StepCoeffs:
    decay: torch.Tensor
    dw_scale: torch.Tensor
    corr_std: torch.Tensor
    drift_int: torch.Tensor

    @classmethod
    def build(cls, model, dt):
        a, q = model.a_t, model.q_t
        y = a * dt
        return cls(
            decay=torch.exp(y),
            dw_scale=torch.exp(y / 2) * q.sqrt(),
            corr_std=torch.sqrt(q * dt * torch.exp(y) * _sinhc_m1(y)),
            drift_int=torch.expm1(y) / a,
        )

    def noise(self, dW, xi):
        return self.dw_scale * dW + self.corr_std * xi


def _draw_step(gen, size, dim, dt):
    xi = standard_normal(gen, (2, size, dim))
    return math.sqrt(dt) * xi[0], xi[1]


def _psi(model, drift, z):
    return drift(z) / model.q_t.sqrt()


def psi_eval(model, drift, z, override=False):
    """psi(z) = Q^{-1/2} B(z), coordinatewise B(z)_k / sqrt(q_k).
    """
    if not drift.qhalf_compatible and not override:
        raise HypothesisError('Q^{-1/2}B well defined', 'drift declared incompatible')
    return _psi(model, drift, _as_state(z, model.dim))


def simulate_ou_path(model, x, grid, rng, npaths=None):
    """Simulates OU paths on a uniform grid together with their Wiener increments.

    Each step is z <- e^{aD} z + e^{aD/2} sqrt(q) dW + c xi, where the independent
    correction c xi makes the step variance exactly (Q_D)_k.

    Returns:
        dict: 'path' of shape (steps + 1, [npaths,] N) and 'dW' of shape (steps, [npaths,] N).
    """
    gen = as_generator(rng)
    size = 1 if npaths is None else int(npaths)
    x = _as_state(x, model.dim)
    coeffs = _StepCoeffs.build(model, grid.dt)
    z = x.expand(size, model.dim).clone()
    path, dWs = [z], []
    for _ in range(grid.steps):
        dW, xi = _draw_step(gen, size, model.dim, grid.dt)
        z = coeffs.decay * z + coeffs.noise(dW, xi)
        path.append(z)
        dWs.append(dW)
    path, dWs = torch.stack(path), torch.stack(dWs)
    if npaths is None:
        path, dWs = path[:, 0], dWs[:, 0]
    return {'path': path, 'dW': dWs}


def _ladder_update(ladder, psi, dW):
    """Left-point step M^(k) += M^(k-1) dL for k = n..1; returns dL.
    """
    dL = inner(psi, dW)
    for k in range(ladder.size(0) - 1, 0, -1):
        ladder[k] = ladder[k] + ladder[k - 1] * dL
    return dL


def _check_finite(step, *tensors):
    for tensor in tensors:
        if not bool(torch.isfinite(tensor).all()):
            raise FloatingPointError("Non-finite ladder value at step {}".format(step))


def accumulate_ladder(path, dW, drift, model, n, dt):
    """Accumulates L_t, M_t and the ladder M^(0..n) along given paths.

    Args:
        path: states (steps + 1, [P,] N).
        dW: increments (steps, [P,] N).
        drift (DriftSpec): nonlinearity B.
        model (SpectralModel): operator model.
        n (int): highest ladder order.
        dt (float): grid step.

    Returns:
        MartingaleLadder
    """
    if n < 0:
        raise ValueError("Ladder order must be nonnegative, got {}".format(n))
    path = _as_state(path, model.dim)
    dW = _as_state(dW, model.dim)
    if path.size(0) != dW.size(0) + 1:
        raise ValueError("Path has {} states but {} increments".format(path.size(0), dW.size(0)))
    batch = tuple(path.shape[1:-1])
    ladder = torch.zeros((n + 1,) + batch, dtype=torch.float64)
    ladder[0] = 1.
    L = torch.zeros(batch, dtype=torch.float64)
    qv = torch.zeros(batch, dtype=torch.float64)
    for j in range(dW.size(0)):
        psi = psi_eval(model, drift, path[j])
        L = L + _ladder_update(ladder, psi, dW[j])
        qv = qv + (psi ** 2).sum(dim=-1) * dt
        _check_finite(j, ladder, L)
    M = torch.exp(L - qv / 2)
    return MartingaleLadder(n, ladder, M, (L, qv))


def _girsanov_block(task):
    model, drift, phi, t, x, n, steps, stream, size = task
    gen = stream.generator()
    dt = t / steps
    coeffs = _StepCoeffs.build(model, dt)
    z = x.expand(size, model.dim).clone()
    ladder = torch.zeros(n + 1, size, dtype=torch.float64)
    ladder[0] = 1.
    L = torch.zeros(size, dtype=torch.float64)
    qv = torch.zeros(size, dtype=torch.float64)
    novikov = np.empty(steps)
    for j in range(steps):
        dW, xi = _draw_step(gen, size, model.dim, dt)
        psi = _psi(model, drift, z)
        psi2 = (psi ** 2).sum(dim=-1)
        novikov[j] = float(torch.exp(NOVIKOV_EPS * psi2).sum())
        L = L + _ladder_update(ladder, psi, dW)
        qv = qv + psi2 * dt
        _check_finite(j, ladder, L)
        z = coeffs.decay * z + coeffs.noise(dW, xi)
    M = torch.exp(L - qv / 2)
    return {
        'phi': phi(z).numpy(),
        'ladder': ladder.numpy(),
        'M': M.numpy(),
        'novikov': novikov,
    }


def _run_paths(model, drift, phi, t, x, n, cfg, stream):
    t = _as_time(t)
    x = _as_state(x, model.dim)
    drift.validate(model.dim)
    phi.validate(model.dim)
    if cfg.steps < 1:
        raise ValueError("Need at least one step, got {}".format(cfg.steps))
    sizes = block_sizes(cfg.npaths, cfg.block_size)
    tasks = [(model, drift, phi, t, x, n, cfg.steps, stream.child(b), size)
             for b, size in enumerate(sizes)]
    results = map_blocks(_girsanov_block, tasks, cfg.workers)
    log.debug('Simulated %d paths x %d steps in %d blocks', cfg.npaths, cfg.steps, len(sizes))
    return {
        'phi': np.concatenate([r['phi'] for r in results]),
        'ladder': np.concatenate([r['ladder'] for r in results], axis=1),
        'M': np.concatenate([r['M'] for r in results]),
        'novikov': np.sum([r['novikov'] for r in results], axis=0) / cfg.npaths,
    }


def estimate_girsanov_terms(model, drift, phi, t, x, n_max, cfg=None, rng=0):
    """Estimates I_0..I_{n_max}, I_n = E[phi(Z_t) M^(n)_t], from one set of paths.

    Block b uses substream rng.child(b).
    """
    cfg = cfg or PathConfig()
    stream = as_stream(rng)
    if n_max < 0:
        raise ValueError("n_max must be nonnegative, got {}".format(n_max))
    require_admissible(drift, phi, n_max, cfg.override, girsanov=True)
    out = _run_paths(model, drift, phi, t, x, n_max, cfg, stream)
    terms = []
    for k in range(n_max + 1):
        terms.append(Estimate.from_samples(out['phi'] * out['ladder'][k], stream.seed,
                                           steps=cfg.steps))
    return terms


def estimate_In(model, drift, phi, t, x, n, cfg=None, rng=0):
    """Estimates the single Girsanov term I_n.
    """
    return estimate_girsanov_terms(model, drift, phi, t, x, n, cfg, rng)[n]


def estimate_girsanov_u(model, drift, phi, t, x, cfg=None, rng=0):
    """Estimates u(t, x) = E[phi(Z_t) M_t] with weight diagnostics.

    Extras: ess, max_weight_share, novikov_proxy (max over grid times of
    E exp(0.1 |psi|^2)) and warnings.
    """
    cfg = cfg or PathConfig()
    stream = as_stream(rng)
    require_admissible(drift, None, 1, cfg.override, girsanov=True)
    out = _run_paths(model, drift, phi, t, x, 0, cfg, stream)
    w = out['M']
    total = math.fsum(w)
    ess = total ** 2 / math.fsum(w ** 2)
    share = float(w.max()) / total
    warnings = []
    if ess < ESS_WARN_FRACTION * cfg.npaths:
        warnings.append('effective sample size {:.1f} below {:.0%} of {} paths'
                        .format(ess, ESS_WARN_FRACTION, cfg.npaths))
        log.warning('Girsanov weights degenerate: ESS %.1f of %d paths', ess, cfg.npaths)
    est = Estimate.from_samples(out['phi'] * w, stream.seed, steps=cfg.steps, ess=ess,
                                max_weight_share=share,
                                novikov_proxy=float(out['novikov'].max()),
                                warnings=warnings)
    log.info('Girsanov u = %.10g +- %.3g (ESS %.1f)', est.mean, est.stderr, ess)
    return est


def ladder_second_moments(model, drift, t, x, n, cfg=None, rng=0):
    """Estimates E[(M^(k)_t)^2] for k = 0..n.
    """
    cfg = cfg or PathConfig()
    stream = as_stream(rng)
    require_admissible(drift, None, 1, cfg.override, girsanov=True)
    out = _run_paths(model, drift, TestFunctionSpec.constant(1.), t, x, n, cfg, stream)
    return [Estimate.from_samples(out['ladder'][k] ** 2, stream.seed) for k in range(n + 1)]


def ladder_moment_bound(k, psi_sup, t, c=4.):
    """Bound c^k ||psi||_inf^{2k} t^k / k! on E[(M^(k)_t)^2].
    """
    return c ** k * psi_sup ** (2 * k) * t ** k / math.factorial(k)


def _direct_block(task):
    model, drift, phi, t, x, steps, stream, size, halve = task
    gen = stream.generator()
    dt = t / steps
    fine = _StepCoeffs.build(model, dt)
    coarse = _StepCoeffs.build(model, 2 * dt)
    z = x.expand(size, model.dim).clone()
    zc = z.clone()
    carry = None
    for j in range(steps):
        dW, xi = _draw_step(gen, size, model.dim, dt)
        noise = fine.noise(dW, xi)
        z = fine.decay * z + fine.drift_int * drift(z) + noise
        if halve:
            if carry is None:
                carry = noise
            else:
                zc = coarse.decay * zc + coarse.drift_int * drift(zc) + fine.decay * carry + noise
                carry = None
    fine_vals = phi(z).numpy()
    coarse_vals = phi(zc).numpy() if halve else None
    return fine_vals, coarse_vals


def estimate_u_direct(model, drift, phi, t, x, cfg=None, rng=0):
    """Estimates E phi(X_t) for the drifted equation by exponential-integrator Euler-Maruyama.

    z <- e^{DA} z + (int_0^D e^{sA} ds) B(z) + exact OU noise. With an even number
    of steps a coarse solution on 2D steps is driven by the same noise and the
    mean fine-minus-coarse difference is attached as the step-halving bias.
    """
    cfg = cfg or PathConfig()
    stream = as_stream(rng)
    t = _as_time(t)
    x = _as_state(x, model.dim)
    drift.validate(model.dim)
    phi.validate(model.dim)
    halve = cfg.bias_estimate and cfg.steps >= 2 and cfg.steps % 2 == 0
    sizes = block_sizes(cfg.npaths, cfg.block_size)
    tasks = [(model, drift, phi, t, x, cfg.steps, stream.child(b), size, halve)
             for b, size in enumerate(sizes)]
    results = map_blocks(_direct_block, tasks, cfg.workers)
    fine = np.concatenate([r[0] for r in results])
    extras = {'steps': cfg.steps}
    if halve:
        diff = Estimate.from_samples(fine - np.concatenate([r[1] for r in results]), stream.seed)
        extras.update(bias=diff.mean, bias_stderr=diff.stderr)
    est = Estimate.from_samples(fine, stream.seed, **extras)
    log.info('Direct u = %.10g +- %.3g (%d steps)', est.mean, est.stderr, cfg.steps)
    return est


def step_halving_study(model, drift, phi, t, x, steps, cfg=None, rng=0):
    """Runs the direct oracle at each even step count with its coupled halving bias.

    Entry i uses substream rng.child(i). For weak order one in the drift term the
    bias u(D) - u(2D) roughly halves from one doubling of the steps to the next.

    Returns:
        list: (steps, Estimate) pairs; each Estimate carries extras bias and bias_stderr.
    """
    cfg = cfg or PathConfig()
    stream = as_stream(rng)
    odd = [m for m in steps if m < 2 or m % 2]
    if odd:
        raise ValueError("Step halving needs even step counts, got {}".format(odd))
    study = []
    for i, m in enumerate(steps):
        run = replace(cfg, steps=m, bias_estimate=True)
        study.append((m, estimate_u_direct(model, drift, phi, t, x, run, stream.child(i))))
    return study


def halving_ratios(study):
    """Successive |bias| ratios of a step_halving_study.
    """
    biases = [abs(est.extras['bias']) for _, est in study]
    return [b / a if a > 0 else math.nan for a, b in zip(biases[:-1], biases[1:])]


def dump_paths(model, drift, x, grid, rng, npaths=1, override=False):
    """Rows (path_id, t_j, z_1..z_N, L, M) of simulated paths.
    """
    sim = simulate_ou_path(model, x, grid, rng, npaths=npaths)
    path, dW = sim['path'], sim['dW']
    times = grid.times.tolist()
    L = torch.zeros(npaths, dtype=torch.float64)
    qv = torch.zeros(npaths, dtype=torch.float64)
    Ls, Ms = [L], [torch.ones(npaths, dtype=torch.float64)]
    for j in range(grid.steps):
        psi = psi_eval(model, drift, path[j], override)
        L = L + inner(psi, dW[j])
        qv = qv + (psi ** 2).sum(dim=-1) * grid.dt
        Ls.append(L)
        Ms.append(torch.exp(L - qv / 2))
    rows = []
    for p in range(npaths):
        for j, tj in enumerate(times):
            rows.append((p, tj, *path[j, p].tolist(), float(Ls[j][p]), float(Ms[j][p])))
    return rows


def mean_martingale(model, drift, t, x, cfg=None, rng=0):
    """Estimates E[M_t], which equals 1 when the Girsanov density is a true martingale.
    """
    cfg = cfg or PathConfig()
    stream = as_stream(rng)
    require_admissible(drift, None, 1, cfg.override, girsanov=True)
    out = _run_paths(model, drift, TestFunctionSpec.constant(1.), t, x, 0, cfg, stream)
    return Estimate.from_samples(out['M'], stream.seed)


def ladder_residual(model, drift, t, x, K, cfg=None, rng=0):
    """L1 norm of M_t - sum_{k<=K} M^(k)_t over simulated paths.
    """
    cfg = cfg or PathConfig()
    stream = as_stream(rng)
    out = _run_paths(model, drift, TestFunctionSpec.constant(1.), t, x, K, cfg, stream)
    partial = np.cumsum(out['ladder'], axis=0)
    return [exact_mean(np.abs(out['M'] - partial[k])) for k in range(K + 1)]
