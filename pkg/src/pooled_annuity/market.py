"""Two-asset return structure: an iid Normal risky asset and a deterministic bond.

All returns are gross real returns per rebalancing period (so 1.0 means the
asset kept pace with inflation exactly). The risky asset is modelled as
Normal(mu, sigma^2); the bond pays 1 + r deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

# Historical fit for annual real total returns of a broad US equity index.
DEFAULT_MU = 1.083
DEFAULT_SIGMA = 0.1753
DEFAULT_RATE = 0.0

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ReturnModel:
    """Gross-return distribution of the risky asset plus the bond rate.

    mu, sigma parameterize the Normal distribution of the risky gross real
    return; r is the bond real interest rate per period. The model admits
    negative gross returns (at the default parameters the probability is
    ~3e-10); draws are used unclamped everywhere so that the quadrature and
    the closed forms stay consistent.
    """

    mu: float = DEFAULT_MU
    sigma: float = DEFAULT_SIGMA
    r: float = DEFAULT_RATE

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.r < 0:
            raise ValueError(f"bond rate must be nonnegative, got {self.r}")

    @property
    def bond_return(self) -> float:
        """Deterministic gross return of the bond, 1 + r."""
        return 1.0 + self.r

    def pdf(self, z):
        """Normal(mu, sigma^2) density at gross return z (scalar or array)."""
        u = (np.asarray(z, dtype=float) - self.mu) / self.sigma
        return np.exp(-0.5 * u * u) / (self.sigma * _SQRT_2PI)

    def cdf(self, z):
        """P(risky gross return <= z), via the erf-based Normal cdf."""
        u = (np.asarray(z, dtype=float) - self.mu) / self.sigma
        return ndtr(u)

    def quantile(self, p):
        """Inverse cdf; p in (0, 1)."""
        from scipy.special import ndtri

        return self.mu + self.sigma * ndtri(np.asarray(p, dtype=float))

    def sample_return(self, rng: np.random.Generator, size=None):
        """Draw gross return(s) from Normal(mu, sigma^2)."""
        return rng.normal(self.mu, self.sigma, size=size)

    def portfolio_return(self, q, x1):
        """Gross return of a (q, 1-q) stock/bond mix given risky return x1.

        q must lie in [0, 1] (no shorting, no leverage).
        """
        q = np.asarray(q, dtype=float)
        if np.any(q < 0) or np.any(q > 1):
            raise ValueError("stock weight must lie in [0, 1]")
        return q * np.asarray(x1, dtype=float) + (1.0 - q) * self.bond_return
