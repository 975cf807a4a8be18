"""
Transition kernels of bifurcating Markov chains.

A kernel P(x, dy, dz) draws the two children of a node jointly given the
parent state. The induced kernel Q = (P_0 + P_1) / 2 is the law of a
uniformly chosen child. The symmetric Gaussian BAR kernel is the only one
with analytic operators; generic kernels only need to sample.
"""

import math
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from app.core.config import settings
from app.core.exceptions import BasisMismatchError
from app.models.enums import InitialLaw, Regime
from app.models.observables import HermiteBasis, Observable


@runtime_checkable
class KernelInterface(Protocol):
    """Sampling capability every kernel provides."""

    def sample_children(self, x: float, rng: np.random.Generator) -> tuple[float, float]:
        ...


@dataclass(frozen=True)
class GaussianLaw:
    """N(mean, variance)."""
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def classify_regime(alpha: float, tolerance: float | None = None) -> Regime:
    """Sub-critical iff 2 alpha^2 < 1, critical iff 2 alpha^2 = 1 within tolerance."""
    tol = settings.CRITICAL_TOLERANCE if tolerance is None else tolerance
    gap = 2.0 * alpha * alpha - 1.0
    if abs(gap) < tol:
        return Regime.CRITICAL
    return Regime.SUBCRITICAL if gap < 0 else Regime.SUPERCRITICAL


@dataclass(frozen=True)
class BarKernel:
    """
    Symmetric Gaussian bifurcating autoregression:
    X_child = a X_parent + sigma * eps, children conditionally independent.

    sigma = 0 is accepted as a degenerate diagnostic mode (deterministic
    dynamics); analytic operators need sigma > 0.
    """
    a: float
    sigma: float = 1.0

    def __post_init__(self):
        a, sigma = float(self.a), float(self.sigma)
        if not (0.0 < abs(a) < 1.0):
            raise ValueError(f"BAR coefficient must satisfy 0 < |a| < 1, got a={a}")
        if not (sigma >= 0.0 and math.isfinite(sigma)):
            raise ValueError(f"Innovation standard deviation must be >= 0, got sigma={sigma}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "sigma", sigma)

    @property
    def sigma_a(self) -> float:
        """Standard deviation of the invariant law, sigma (1 - a^2)^(-1/2)."""
        return self.sigma / math.sqrt(1.0 - self.a * self.a)

    @property
    def alpha(self) -> float:
        return abs(self.a)

    @property
    def theta(self) -> int:
        return 1 if self.a > 0 else -1

    @property
    def is_degenerate(self) -> bool:
        return self.sigma == 0.0

    @property
    def regime(self) -> Regime:
        return classify_regime(self.alpha)

    @property
    def basis(self) -> HermiteBasis:
        """Hermite eigenbasis of Q on L^2(mu)."""
        return HermiteBasis(a=self.a, sigma_a=self.sigma_a)

    def normalization_exponent(self) -> float:
        """
        gamma such that M_{G_n}(f~) fluctuates on the scale 2^(gamma n)
        (times sqrt(n) at criticality).
        """
        if self.regime is Regime.SUPERCRITICAL:
            return math.log2(2.0 * self.alpha)
        return 0.5

    # ----------------------------------------------------------------
    # Sampling
    # ----------------------------------------------------------------

    def sample_children(self, x: float, rng: np.random.Generator) -> tuple[float, float]:
        """(a x + sigma g0, a x + sigma g1) with g0, g1 independent N(0, 1)."""
        g = rng.standard_normal(2)
        mean = self.a * x
        return mean + self.sigma * g[0], mean + self.sigma * g[1]

    def sample_generation(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Children of a whole generation in level order: node k -> 2k, 2k+1."""
        children = np.repeat(self.a * states, 2)
        if self.sigma:
            children += self.sigma * rng.standard_normal(children.size)
        return children

    def sample_initial(
        self,
        law: InitialLaw,
        x0: float,
        rng: np.random.Generator,
    ) -> float:
        if InitialLaw(law) is InitialLaw.POINT:
            return float(x0)
        return float(self.sigma_a * rng.standard_normal())

    # ----------------------------------------------------------------
    # Analytic operators
    # ----------------------------------------------------------------

    def invariant_measure(self) -> GaussianLaw:
        """mu = N(0, sigma_a^2)."""
        return GaussianLaw(0.0, self.sigma_a ** 2)

    def q_apply(self, f: Observable, x, n: int = 1):
        """Q^n f(x) through Q^n g_m = a^(n m) g_m."""
        if n < 0:
            raise ValueError("Number of steps must be non-negative")
        basis = self.basis
        if not basis.same_as(f.basis):
            raise BasisMismatchError("Observable is expanded on another kernel's basis")
        coeffs = f.coeffs * basis.eigenvalues(f.degree, n)
        values = basis.vander(x, f.degree) @ coeffs
        return float(values) if np.ndim(values) == 0 else values


def sample_generation(kernel: KernelInterface, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorised children when the kernel supports it, node-by-node otherwise."""
    if hasattr(kernel, "sample_generation"):
        return kernel.sample_generation(states, rng)
    children = np.empty(2 * states.size)
    for k, x in enumerate(states):
        children[2 * k], children[2 * k + 1] = kernel.sample_children(float(x), rng)
    return children
