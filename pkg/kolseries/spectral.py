"""Diagonal (A, Q) model: semigroup, covariances Q_t and Q_inf, and Lambda(t).

A and Q share an orthonormal eigenbasis, so every operator here acts coordinatewise
on eigenvalue tensors.
"""
import json
import logging
import math
from dataclasses import dataclass, field

import torch

from .utils import _as_state, _as_time


log = logging.getLogger(__name__)

# |a t| below which (e^{2at} - 1)/(2a) is evaluated by its Taylor series.
TAYLOR_CUTOFF = 1e-8
# Number of smallest grid times used by the delta fit.
DELTA_FIT_POINTS = 10


class SpectralModel:
    """Truncated operator model.

    Args:
        a: drift eigenvalues of A, each strictly negative.
        q: noise eigenvalues of Q, each strictly positive.
    """
    def __init__(self, a, q):
        self.a = tuple(float(ak) for ak in a)
        self.q = tuple(float(qk) for qk in q)
        if len(self.a) == 0:
            raise ValueError("Model needs at least one eigenpair")
        if len(self.a) != len(self.q):
            raise ValueError("Got {} drift eigenvalues but {} noise eigenvalues"
                             .format(len(self.a), len(self.q)))
        bad = [ak for ak in self.a if not ak < 0 or not math.isfinite(ak)]
        if bad:
            raise ValueError("Drift eigenvalues must be finite and negative, got {}".format(bad))
        bad = [qk for qk in self.q if not qk > 0 or not math.isfinite(qk)]
        if bad:
            raise ValueError("Noise eigenvalues must be finite and positive, got {}".format(bad))

    def __eq__(self, other):
        if not isinstance(other, SpectralModel):
            return NotImplemented
        return self.a == other.a and self.q == other.q

    def __hash__(self):
        return hash((self.a, self.q))

    def __repr__(self):
        return 'SpectralModel(a={}, q={})'.format(self.a, self.q)

    @property
    def dim(self):
        return len(self.a)

    @property
    def a_t(self):
        return torch.tensor(self.a, dtype=torch.float64)

    @property
    def q_t(self):
        return torch.tensor(self.q, dtype=torch.float64)

    @classmethod
    def from_dict(cls, d):
        model = cls(d['a'], d['q'])
        if 'dim' in d and int(d['dim']) != model.dim:
            raise ValueError("Model declares dim={} but lists {} eigenvalues"
                             .format(d['dim'], model.dim))
        return model

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self):
        return {'dim': self.dim, 'a': list(self.a), 'q': list(self.q)}


def standard_model():
    """1-D model a=-1, q=2 used by the cross-estimator checks.
    """
    return SpectralModel((-1.,), (2.,))


def _decay(a, t):
    return torch.exp(a * t)


def _qt(a, q, t):
    """Q_t eigenvalues for (broadcast) times t > 0.
    """
    at = a * t
    direct = q * torch.expm1(2 * at) / (2 * a)
    taylor = q * t * (1 + at + (2. / 3.) * at ** 2)
    return torch.where(at.abs() < TAYLOR_CUTOFF, taylor, direct)


def _lambda(a, q, t):
    return torch.exp(a * t) / torch.sqrt(_qt(a, q, t))


def semigroup_apply(model, t, x):
    """Applies e^{tA} to a state.

    Args:
        model (SpectralModel): operator model.
        t (float): nonnegative time.
        x: state coordinates, shape (N,) or (B, N).

    Returns:
        torch.Tensor: e^{a_k t} x_k coordinatewise.
    """
    t = _as_time(t, strict=False)
    x = _as_state(x, model.dim)
    if t == 0:
        return x.clone()
    return _decay(model.a_t, t) * x


def qt_eigenvalues(model, t):
    """Eigenvalues of Q_t = int_0^t e^{sA} Q e^{sA*} ds.
    """
    t = _as_time(t)
    return _qt(model.a_t, model.q_t, torch.tensor(t, dtype=torch.float64))


def lambda_diagonal(model, t):
    """Eigenvalues of Lambda(t) = Q_t^{-1/2} e^{tA} and their maximum.

    Returns:
        (torch.Tensor, float): entries and operator norm.
    """
    t = _as_time(t)
    lam = _lambda(model.a_t, model.q_t, torch.tensor(t, dtype=torch.float64))
    return lam, float(lam.max())


def q_infinity(model):
    """Eigenvalues and trace of the invariant covariance Q_inf.
    """
    eigs = model.q_t / (2 * model.a_t.abs())
    return eigs, float(eigs.sum())


@dataclass
class HypothesisReport:
    trace_Qt_finite: bool
    trace_Qinf: float
    delta_fit: float
    c_delta_fit: float
    lambda_integrable: bool
    beta_kappa_ok: bool
    kappa: float = 1.5
    phi_bounded: bool = True
    drift_bounded: bool = True
    psi_sup: float = None
    diagnostics: list = field(default_factory=list)

    @property
    def valid(self):
        return 0 < self.delta_fit < 1 and self.c_delta_fit > 0

    def violations(self, n=1):
        """Names of the hypothesis clauses that refuse an order-n series term.
        """
        out = []
        if not self.valid or not self.lambda_integrable:
            out.append('integrability of ||Lambda(t)|| near t=0')
        if n >= 1 and not self.phi_bounded:
            out.append('bounded test function')
        if n >= 1 and not self.beta_kappa_ok:
            out.append('growth condition beta*kappa < 2(1-delta)')
        return out


def default_tgrid(model, points=40):
    """Log-spaced grid below the fastest relaxation time of the model.
    """
    t_max = 0.1 / max(abs(ak) for ak in model.a)
    return torch.logspace(math.log10(t_max) - 3, math.log10(t_max), points,
                          dtype=torch.float64)


def fit_delta(model, tgrid):
    """Least-squares fit of log||Lambda(t)|| = log C + delta log(1/t).

    Returns:
        (float, float): delta and C_delta.
    """
    tgrid = torch.as_tensor(tgrid, dtype=torch.float64).flatten()
    times = torch.sort(tgrid).values[:DELTA_FIT_POINTS]
    norms = _lambda(model.a_t, model.q_t, times.unsqueeze(-1)).max(dim=-1).values
    X = torch.stack([torch.ones_like(times), -torch.log(times)], dim=1)
    y = torch.log(norms).unsqueeze(1)
    coef = torch.linalg.lstsq(X, y).solution.flatten()
    return float(coef[1]), math.exp(float(coef[0]))


def check_hypotheses(model, drift, phi, tgrid, kappa=1.5):
    """Checks the standing hypotheses on a model, drift and test function.

    Args:
        model (SpectralModel): operator model.
        drift (DriftSpec): nonlinearity B.
        phi (TestFunctionSpec): initial datum.
        tgrid: strictly positive increasing times; the delta fit uses
            the smallest ten.
        kappa (float, optional): exponent of the q_n schedule.

    Returns:
        HypothesisReport
    """
    tgrid = torch.as_tensor(tgrid, dtype=torch.float64).flatten()
    if tgrid.numel() == 0:
        raise ValueError("Time grid is empty")
    if not bool((tgrid > 0).all()):
        raise ValueError("Time grid must be strictly positive")
    if tgrid.numel() > 1 and not bool((tgrid[1:] > tgrid[:-1]).all()):
        raise ValueError("Time grid must be strictly increasing")
    if not kappa > 1:
        raise ValueError("kappa must exceed 1, got {}".format(kappa))
    diagnostics = []

    qt = _qt(model.a_t, model.q_t, tgrid[-1])
    trace_finite = bool(torch.isfinite(qt.sum()))
    _, trace_inf = q_infinity(model)

    delta, c_delta = fit_delta(model, tgrid)
    if not delta > 0:
        diagnostics.append('delta fit failed: non-positive slope {:.6g}'.format(delta))
    if not delta < 1:
        diagnostics.append('delta fit {:.6g} >= 1: ||Lambda|| not integrable at 0'.format(delta))
    integrable = 0 < delta < 1

    beta = drift.declared_beta
    beta_kappa_ok = beta * kappa < 2 * (1 - delta)
    if not beta_kappa_ok:
        diagnostics.append('beta*kappa = {:.6g} >= 2(1-delta) = {:.6g}'
                           .format(beta * kappa, 2 * (1 - delta)))
    if drift.kind == 'linear':
        diagnostics.append('linear drift is outside the growth hypotheses; oracle use only')
    if not phi.bounded_flag:
        diagnostics.append('test function {} is unbounded'.format(phi.kind))

    report = HypothesisReport(
        trace_Qt_finite=trace_finite,
        trace_Qinf=trace_inf,
        delta_fit=delta,
        c_delta_fit=c_delta,
        lambda_integrable=integrable,
        beta_kappa_ok=beta_kappa_ok,
        kappa=kappa,
        phi_bounded=phi.bounded_flag,
        drift_bounded=drift.bounded_flag,
        psi_sup=drift.psi_sup(model),
        diagnostics=diagnostics,
    )
    log.debug('Hypothesis report: delta=%.6g C_delta=%.6g Tr Q_inf=%.6g, %d diagnostics',
              delta, c_delta, trace_inf, len(diagnostics))
    return report
