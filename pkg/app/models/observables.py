"""
Observables of the Gaussian BAR expanded in the orthonormal Hermite basis of
the invariant law mu = N(0, sigma_a^2).

The basis functions are g_m(x) = He_m(x / sigma_a) / sqrt(m!), with He_m the
probabilists' Hermite polynomials. They are eigenfunctions of Q with
eigenvalue a^m, which makes every operator used by the services diagonal in
the coefficient vector.
"""

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
from numpy.polynomial import hermite_e
from scipy.special import gammaln

from app.core.exceptions import BasisMismatchError
from app.models.enums import TailMode


def default_quadrature_order(degree: int) -> int:
    """Gauss-Hermite order exact for every integrand built from degree-`degree` terms."""
    return max(2 * degree + 16, 48)


@lru_cache(maxsize=64)
def _standard_gauss_hermite(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and probability weights of N(0, 1)."""
    nodes, weights = hermite_e.hermegauss(order)
    weights = weights / np.sqrt(2.0 * np.pi)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@dataclass(frozen=True)
class HermiteBasis:
    """Orthonormal Hermite basis of N(0, sigma_a^2) with Q-eigenvalues a^m."""
    a: float
    sigma_a: float

    def __post_init__(self):
        if not self.sigma_a > 0:
            raise ValueError("A Hermite basis needs sigma_a > 0")

    def vander(self, x, degree: int) -> np.ndarray:
        """Matrix [g_0(x), ..., g_degree(x)] along the last axis."""
        y = np.asarray(x, dtype=float) / self.sigma_a
        scale = np.exp(-0.5 * gammaln(np.arange(degree + 1) + 1.0))
        return hermite_e.hermevander(y, degree) * scale

    def quadrature(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights integrating against mu."""
        nodes, weights = _standard_gauss_hermite(order)
        return self.sigma_a * nodes, weights

    def eigenvalues(self, degree: int, n: int = 1) -> np.ndarray:
        """a^(n m) for m = 0..degree."""
        return self.a ** (n * np.arange(degree + 1))

    def same_as(self, other: "HermiteBasis") -> bool:
        return self.a == other.a and self.sigma_a == other.sigma_a


def require_same_basis(*observables: "Observable") -> HermiteBasis:
    """Common basis of the observables, or BasisMismatchError."""
    basis = observables[0].basis
    for obs in observables[1:]:
        if not basis.same_as(obs.basis):
            raise BasisMismatchError(
                "Observables are expanded on different kernels "
                f"(sigma_a={basis.sigma_a} vs {obs.basis.sigma_a}, a={basis.a} vs {obs.basis.a})"
            )
    return basis


@dataclass(frozen=True, eq=False)
class Observable:
    """f = sum_m coeffs[m] g_m, a real function of finite Hermite degree."""
    coeffs: np.ndarray
    basis: HermiteBasis
    name: str = ""

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size == 0:
            c = np.zeros(1)
        if not np.all(np.isfinite(c)):
            raise ValueError("Observable coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    @property
    def mean(self) -> float:
        """<mu, f> = c_0."""
        return float(self.coeffs[0])

    @cached_property
    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def __call__(self, x) -> np.ndarray:
        return self.basis.vander(x, self.degree) @ self.coeffs

    def with_coeffs(self, coeffs, name: str | None = None) -> "Observable":
        return Observable(coeffs, self.basis, self.name if name is None else name)

    def padded(self, degree: int) -> np.ndarray:
        """Coefficient vector extended with zeros up to `degree`."""
        out = np.zeros(max(degree, self.degree) + 1)
        out[: self.coeffs.size] = self.coeffs
        return out

    def __add__(self, other):
        if isinstance(other, Observable):
            require_same_basis(self, other)
            deg = max(self.degree, other.degree)
            return self.with_coeffs(self.padded(deg) + other.padded(deg), name="")
        c = self.coeffs.copy()
        c[0] += float(other)
        return self.with_coeffs(c, name="")

    __radd__ = __add__

    def __neg__(self):
        return self.with_coeffs(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar: float):
        return self.with_coeffs(float(scalar) * self.coeffs, name="")

    __rmul__ = __mul__

    def allclose(self, other: "Observable", atol: float = 1e-12) -> bool:
        deg = max(self.degree, other.degree)
        return bool(np.allclose(self.padded(deg), other.padded(deg), rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        label = f"{self.name!r}, " if self.name else ""
        return f"Observable({label}coeffs={np.array2string(self.coeffs, precision=6)})"


@dataclass(frozen=True)
class ObservableSequence:
    """
    The sequence (f_l, l >= 0): explicit entries f_0..f_L, continued by zero
    or by repeating f_L forever.
    """
    entries: tuple[Observable, ...]
    tail: TailMode = TailMode.ZERO
    name: str = ""

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ValueError("An observable sequence needs at least one entry")
        require_same_basis(*entries)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "tail", TailMode(self.tail))

    @classmethod
    def single(cls, f: Observable) -> "ObservableSequence":
        """(f, 0, 0, ...)."""
        return cls((f,), TailMode.ZERO, name=f"({f.name or 'f'},0,...)")

    @classmethod
    def constant(cls, f: Observable) -> "ObservableSequence":
        """(f, f, f, ...)."""
        return cls((f,), TailMode.CONSTANT, name=f"({f.name or 'f'},...)")

    @property
    def basis(self) -> HermiteBasis:
        return self.entries[0].basis

    @property
    def last_index(self) -> int:
        return len(self.entries) - 1

    @property
    def is_constant(self) -> bool:
        """True when every f_l is the same observable."""
        if self.tail is not TailMode.CONSTANT:
            return False
        first = self.entries[0]
        return all(first.allclose(e, atol=0.0) for e in self.entries[1:])

    def entry_index(self, ell: int) -> int | None:
        """Index into `entries` of f_ell, or None when f_ell = 0."""
        if ell < 0:
            raise ValueError("Sequence index must be non-negative")
        if ell <= self.last_index:
            return ell
        return self.last_index if self.tail is TailMode.CONSTANT else None

    def __getitem__(self, ell: int) -> Observable:
        idx = self.entry_index(ell)
        if idx is None:
            return self.entries[0].with_coeffs(np.zeros(1), name="0")
        return self.entries[idx]

    @property
    def max_degree(self) -> int:
        return max(e.degree for e in self.entries)


def stack_coefficients(observables: Sequence[Observable], degree: int | None = None) -> np.ndarray:
    """Rows of padded coefficient vectors."""
    deg = degree if degree is not None else max(o.degree for o in observables)
    return np.vstack([o.padded(deg)[: deg + 1] for o in observables])
