"""Metropolis-adjusted Langevin sampling of a differentiable log density."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericError

ACCEPTANCE_WARN = 0.05


@dataclass
class MalaResult:
    samples: np.ndarray      # (n, d) post-burn-in draws
    acceptance_rate: float
    burn_in: int
    step: float


def mala_sample(
    log_density,
    grad_log_density,
    n: int,
    step: float,
    rng: np.random.Generator,
    x0=None,
    dim: int = 1,
    burn_in_frac: float = 0.1,
    metropolis: bool = True,
) -> MalaResult:
    """Langevin proposal x' = x + step * grad(x) + sqrt(2 step) * xi with a
    Metropolis correction; returns post-burn-in draws (thinning 1).

    ``metropolis=False`` disables the correction (unadjusted Langevin), kept
    for the small-step consistency probe.
    """
    if step <= 0.0:
        raise ConfigError(f"step size must be positive, got {step}")
    if n < 1:
        raise ConfigError("need at least one sample")
    burn = int(np.ceil(burn_in_frac * n))
    total = n + burn
    x = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=np.float64).reshape(dim)

    prop_var = 2.0 * step
    lp_x = float(log_density(x))
    g_x = np.asarray(grad_log_density(x), dtype=np.float64).reshape(dim)
    samples = np.empty((n, dim))
    accepted = 0

    for i in range(total):
        xi = rng.standard_normal(dim)
        prop = x + step * g_x + np.sqrt(prop_var) * xi
        lp_prop = float(log_density(prop))
        g_prop = np.asarray(grad_log_density(prop), dtype=np.float64).reshape(dim)
        if metropolis:
            fwd = -((prop - x - step * g_x) ** 2).sum() / (2.0 * prop_var)
            bwd = -((x - prop - step * g_prop) ** 2).sum() / (2.0 * prop_var)
            log_accept = lp_prop - lp_x + bwd - fwd
            take = np.log(rng.uniform()) < log_accept
        else:
            take = True
        if take:
            x, lp_x, g_x = prop, lp_prop, g_prop
            accepted += 1
        if not np.isfinite(lp_x):
            raise NumericError(f"non-finite log density at MCMC iteration {i}")
        if i >= burn:
            samples[i - burn] = x

    rate = accepted / total
    if rate < ACCEPTANCE_WARN:
        warnings.warn(f"MALA acceptance rate {rate:.3f} below {ACCEPTANCE_WARN}; retune the step size")
    return MalaResult(samples, rate, burn, float(step))
