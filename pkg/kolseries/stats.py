import math
from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass
class Estimate:
    """Monte Carlo (or deterministic) estimate of a scalar.

    Args:
        mean (float): point estimate.
        stderr (float): sample standard deviation / sqrt(nsamples).
        nsamples (int): number of samples (or quadrature nodes).
        seed (int): seed of the stream the samples were drawn from.
        invalid (int, optional): number of non-finite samples encountered.
        extras (dict, optional): estimator-specific diagnostics.
    """
    mean: float
    stderr: float
    nsamples: int
    seed: int
    invalid: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def valid(self):
        return self.invalid == 0

    @classmethod
    def from_samples(cls, values, seed, **extras):
        values = _to_numpy(values)
        n = values.size
        bad = int(n - np.count_nonzero(np.isfinite(values)))
        if bad:
            values = values[np.isfinite(values)]
        mean = exact_mean(values)
        return cls(mean, calculate_error(values, mean), n, seed,
                   invalid=bad, extras=dict(extras))

    @classmethod
    def exact(cls, value, nsamples=1, seed=0, **extras):
        return cls(float(value), 0., nsamples, seed, extras=dict(extras))

    def z_score(self, other):
        """Absolute difference in units of the combined standard error.
        """
        return z_score(self.mean, self.stderr, other.mean, other.stderr)

    def within(self, value, k=3.):
        return abs(self.mean - value) <= k * self.stderr


def _to_numpy(values):
    if isinstance(values, torch.Tensor):
        values = values.detach().cpu().numpy()
    return np.ascontiguousarray(values, dtype=np.float64).ravel()


def exact_mean(values):
    """Correctly rounded mean, shifted by the first value.

    The shift makes the mean of a constant sample equal the constant exactly.
    """
    if values.size == 0:
        return float('nan')
    shift = float(values[0])
    return shift + math.fsum(values - shift) / values.size


def calculate_error(items, mean=None):
    N = len(items)
    if N <= 1:
        return 0.
    if mean is None:
        mean = exact_mean(np.asarray(items, dtype=np.float64))
    diff_sq_sum = math.fsum((np.asarray(items, dtype=np.float64) - mean) ** 2)
    return math.sqrt(diff_sq_sum / (N * (N - 1)))


def z_score(m1, s1, m2, s2):
    diff = abs(m1 - m2)
    scale = math.sqrt(s1 ** 2 + s2 ** 2)
    if scale == 0:
        return 0. if diff == 0 else float('inf')
    return diff / scale


def sum_estimates(estimates, seed=None):
    """Sum of independent estimates with combined standard error.
    """
    estimates = list(estimates)
    mean = math.fsum(e.mean for e in estimates)
    stderr = math.sqrt(math.fsum(e.stderr ** 2 for e in estimates))
    return Estimate(
        mean, stderr,
        sum(e.nsamples for e in estimates),
        estimates[0].seed if seed is None else seed,
        invalid=sum(e.invalid for e in estimates)
    )
