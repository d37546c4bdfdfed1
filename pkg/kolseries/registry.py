"""Registry of drifts B and test functions phi.

Each entry carries the growth metadata the hypothesis checks and estimators
consult before running.
"""
import logging
import math
from dataclasses import dataclass

import torch

from .utils import _as_state, inner


log = logging.getLogger(__name__)


class HypothesisError(ValueError):
    """A standing hypothesis fails and no override was given.
    """
    def __init__(self, clause, detail=''):
        self.clause = clause
        msg = "Hypothesis violated: {}".format(clause)
        if detail:
            msg = "{} ({})".format(msg, detail)
        super().__init__(msg)


DRIFT_KINDS = ('zero', 'constant', 'bounded_sin', 'sublinear', 'linear')
PHI_KINDS = ('cosine', 'gaussian_bump', 'linear', 'constant')


@dataclass
class DriftSpec:
    """Declarative nonlinearity B : H -> H.

    Kinds:
        zero: B = 0.
        constant: B = b.
        bounded_sin: B(z)_k = amplitude * sin(frequency * z_k).
        sublinear: B(z)_k = coeff * z_k * (1 + z_k^2)^((beta - 1) / 2), growth |z|^beta.
        linear: B(z) = scale * z; outside the growth hypotheses, oracle use only.
    """
    kind: str
    b: tuple = ()
    amplitude: float = 0.
    frequency: float = 1.
    coeff: float = 0.
    beta: float = 0.
    scale: float = 0.
    qhalf_compatible: bool = True

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ValueError("Unknown drift kind '{}'. Choices: {}".format(self.kind, DRIFT_KINDS))
        self.b = tuple(float(bk) for bk in self.b)
        if self.kind == 'constant' and len(self.b) == 0:
            raise ValueError("Constant drift needs a vector b")
        if self.kind == 'sublinear' and not 0 < self.beta < 1:
            raise ValueError("Sublinear drift needs beta in (0, 1), got {}".format(self.beta))

    @classmethod
    def zero(cls):
        return cls('zero')

    @classmethod
    def constant(cls, b):
        if isinstance(b, (int, float)):
            b = (b,)
        return cls('constant', b=tuple(b))

    @classmethod
    def bounded_sin(cls, amplitude, frequency=1.):
        return cls('bounded_sin', amplitude=float(amplitude), frequency=float(frequency))

    @classmethod
    def sublinear(cls, coeff, beta):
        return cls('sublinear', coeff=float(coeff), beta=float(beta))

    @classmethod
    def linear(cls, scale):
        return cls('linear', scale=float(scale))

    @property
    def declared_beta(self):
        if self.kind == 'sublinear':
            return self.beta
        if self.kind == 'linear':
            return 1.
        return 0.

    @property
    def bounded_flag(self):
        return self.kind in ('zero', 'constant', 'bounded_sin')

    def validate(self, dim):
        if self.kind == 'constant' and len(self.b) != dim:
            raise ValueError("Constant drift has {} coordinates but the model dimension is {}"
                             .format(len(self.b), dim))

    def __call__(self, z):
        z = _as_state(z)
        if self.kind == 'zero':
            return torch.zeros_like(z)
        if self.kind == 'constant':
            return torch.tensor(self.b, dtype=torch.float64).expand_as(z).clone()
        if self.kind == 'bounded_sin':
            return self.amplitude * torch.sin(self.frequency * z)
        if self.kind == 'sublinear':
            return self.coeff * z * torch.pow(1 + z ** 2, (self.beta - 1) / 2)
        return self.scale * z

    def psi_sup(self, model):
        """Supremum of |Q^{-1/2} B| over the state space (inf if unbounded).
        """
        inv_sqrt_q = 1 / model.q_t.sqrt()
        if self.kind == 'zero':
            return 0.
        if self.kind == 'constant':
            return float((torch.tensor(self.b, dtype=torch.float64) * inv_sqrt_q).norm())
        if self.kind == 'bounded_sin':
            return abs(self.amplitude) * float(inv_sqrt_q.norm())
        return math.inf

    def psi_growth(self, model):
        """Constant c with |Q^{-1/2} B(z)| <= c (1 + |z|) for all z.
        """
        if self.bounded_flag:
            return self.psi_sup(model)
        qmin = min(model.q)
        if self.kind == 'sublinear':
            return abs(self.coeff) * math.sqrt(model.dim / qmin)
        return abs(self.scale) / math.sqrt(qmin)

    def to_dict(self):
        d = {'kind': self.kind}
        if self.kind == 'constant':
            d['b'] = list(self.b)
        elif self.kind == 'bounded_sin':
            d.update(amplitude=self.amplitude, frequency=self.frequency)
        elif self.kind == 'sublinear':
            d.update(coeff=self.coeff, beta=self.beta)
        elif self.kind == 'linear':
            d['scale'] = self.scale
        if not self.qhalf_compatible:
            d['qhalf_compatible'] = False
        return d


@dataclass
class TestFunctionSpec:
    """Declarative initial datum phi : H -> R.

    Kinds:
        cosine: cos(<h, z>).
        gaussian_bump: exp(-|z|^2 / (2 scale^2)).
        linear: <h, z>; unbounded, closed-form oracles only.
        constant: c.
    """
    __test__ = False

    kind: str
    h: tuple = ()
    scale: float = 1.
    c: float = 1.

    def __post_init__(self):
        if self.kind not in PHI_KINDS:
            raise ValueError("Unknown test function kind '{}'. Choices: {}".format(self.kind, PHI_KINDS))
        self.h = tuple(float(hk) for hk in self.h)
        if self.kind in ('cosine', 'linear') and len(self.h) == 0:
            raise ValueError("Test function '{}' needs a direction h".format(self.kind))
        if self.kind == 'gaussian_bump' and not self.scale > 0:
            raise ValueError("Bump scale must be positive, got {}".format(self.scale))

    @classmethod
    def cosine(cls, h):
        if isinstance(h, (int, float)):
            h = (h,)
        return cls('cosine', h=tuple(h))

    @classmethod
    def gaussian_bump(cls, scale):
        return cls('gaussian_bump', scale=float(scale))

    @classmethod
    def linear(cls, h):
        if isinstance(h, (int, float)):
            h = (h,)
        return cls('linear', h=tuple(h))

    @classmethod
    def constant(cls, c=1.):
        return cls('constant', c=float(c))

    @property
    def bounded_flag(self):
        return self.kind != 'linear'

    @property
    def sup_norm(self):
        if self.kind == 'constant':
            return abs(self.c)
        return 1. if self.bounded_flag else math.inf

    @property
    def h_t(self):
        return torch.tensor(self.h, dtype=torch.float64)

    def validate(self, dim):
        if self.kind in ('cosine', 'linear') and len(self.h) != dim:
            raise ValueError("Direction h has {} coordinates but the model dimension is {}"
                             .format(len(self.h), dim))

    def __call__(self, z):
        z = _as_state(z)
        if self.kind == 'cosine':
            return torch.cos(inner(self.h_t, z))
        if self.kind == 'gaussian_bump':
            return torch.exp(-(z ** 2).sum(dim=-1) / (2 * self.scale ** 2))
        if self.kind == 'linear':
            return inner(self.h_t, z)
        return torch.full(z.shape[:-1], self.c, dtype=torch.float64)

    def gaussian_expectation(self, spec):
        """Closed-form E phi(X) for X ~ spec (a GaussianSpec).
        """
        mean, var = spec.mean, spec.var
        if self.kind == 'cosine':
            h = self.h_t
            return math.cos(float(inner(h, mean))) * math.exp(-0.5 * float((h ** 2 * var).sum()))
        if self.kind == 'gaussian_bump':
            s2 = self.scale ** 2
            factors = torch.sqrt(s2 / (s2 + var)) * torch.exp(-mean ** 2 / (2 * (s2 + var)))
            return float(torch.prod(factors))
        if self.kind == 'linear':
            return float(inner(self.h_t, mean))
        return self.c

    def to_dict(self):
        d = {'kind': self.kind}
        if self.kind in ('cosine', 'linear'):
            d['h'] = list(self.h)
        elif self.kind == 'gaussian_bump':
            d['scale'] = self.scale
        else:
            d['c'] = self.c
        return d


def drift_from_dict(d):
    d = dict(d)
    kind = d.pop('kind')
    if kind == 'constant' and isinstance(d.get('b'), (int, float)):
        d['b'] = (d['b'],)
    return DriftSpec(kind, **d)


def phi_from_dict(d):
    d = dict(d)
    kind = d.pop('kind')
    if isinstance(d.get('h'), (int, float)):
        d['h'] = (d['h'],)
    return TestFunctionSpec(kind, **d)


def require_admissible(drift, phi=None, n=1, override=False, girsanov=False):
    """Raises HypothesisError when an estimator's hypotheses fail.

    Args:
        drift (DriftSpec): nonlinearity.
        phi (TestFunctionSpec, optional): initial datum.
        n (int): series order; order 0 never involves B.
        override (bool): downgrade refusals to warnings.
        girsanov (bool): the estimator needs Q^{-1/2} B.
    """
    violations = []
    if girsanov and not drift.qhalf_compatible:
        violations.append(('Q^{-1/2}B well defined', 'drift declared incompatible'))
    if n >= 1 and phi is not None and not phi.bounded_flag:
        violations.append(('bounded test function', 'phi kind {}'.format(phi.kind)))
    if n >= 1 and drift.kind == 'linear':
        violations.append(('drift growth', 'linear drift is admitted for oracle experiments only'))
    for clause, detail in violations:
        if not override:
            raise HypothesisError(clause, detail)
        log.warning('Overriding hypothesis "%s": %s', clause, detail)
