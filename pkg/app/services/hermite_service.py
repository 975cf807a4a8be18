"""
Spectral toolkit of the BAR kernel.
Projection onto the Hermite eigenbasis, centering, projector R, products.
"""

import math
import re
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import numpy as np
from loguru import logger

from app.core.config import settings
from app.core.exceptions import BasisMismatchError
from app.models.kernels import BarKernel
from app.models.observables import (
    HermiteBasis,
    Observable,
    default_quadrature_order,
    require_same_basis,
)

if TYPE_CHECKING:
    from app.schemas.base import ObservableSpec

_HERMITE_PRESET = re.compile(r"^hermite:(\d+)$")
_CONSTANT_PRESET = re.compile(r"^constant:([-+0-9.eE]+)$")


class HermiteService:
    """
    Service for building and transforming observables.
    All inner products against mu use Gauss-Hermite quadrature.
    """

    def check_degree(self, degree: int, allow_high_degree: bool = False) -> int:
        if degree < 0:
            raise ValueError("Hermite degree must be non-negative")
        if degree > settings.MAX_HERMITE_DEGREE and not allow_high_degree:
            raise ValueError(
                f"Hermite degree {degree} exceeds {settings.MAX_HERMITE_DEGREE}; "
                "pass allow_high_degree=True to opt in"
            )
        return degree

    def basis_for(self, kernel: BarKernel) -> HermiteBasis:
        if kernel.is_degenerate:
            raise ValueError("No Hermite basis exists for a kernel with sigma = 0")
        return kernel.basis

    # ----------------------------------------------------------------
    # Construction
    # ----------------------------------------------------------------

    def decompose(
        self,
        func: Callable[[np.ndarray], np.ndarray],
        degree: int,
        kernel: BarKernel,
        order: Optional[int] = None,
        name: str = "",
        allow_high_degree: bool = False,
    ) -> Observable:
        """
        c_m = <mu, f g_m> by Gauss-Hermite quadrature, exact for polynomial
        f of degree <= 2 * order - 1 - degree.
        """
        self.check_degree(degree, allow_high_degree)
        basis = self.basis_for(kernel)
        nodes, weights = basis.quadrature(order or default_quadrature_order(degree))
        values = np.asarray(func(nodes), dtype=float)
        if values.shape != nodes.shape:
            values = np.broadcast_to(values, nodes.shape)
        coeffs = (weights * values) @ basis.vander(nodes, degree)
        return Observable(coeffs, basis, name=name)

    def from_coefficients(self, coeffs: Sequence[float], kernel: BarKernel, name: str = "") -> Observable:
        self.check_degree(len(coeffs) - 1)
        return Observable(np.asarray(coeffs, dtype=float), self.basis_for(kernel), name=name)

    def basis_function(self, m: int, kernel: BarKernel) -> Observable:
        """g_m as an observable."""
        coeffs = np.zeros(self.check_degree(m) + 1)
        coeffs[m] = 1.0
        return Observable(coeffs, self.basis_for(kernel), name=f"hermite:{m}")

    def preset(self, name: str, kernel: BarKernel) -> Observable:
        """
        Named observables used in experiment files:
        identity, square, square-centered, hermite:m, constant:c.
        """
        s = kernel.sigma_a
        key = name.strip().lower()
        if key == "identity":
            return self.from_coefficients([0.0, s], kernel, name="identity")
        if key == "square":
            return self.from_coefficients([s * s, 0.0, math.sqrt(2.0) * s * s], kernel, name="square")
        if key == "square-centered":
            return self.from_coefficients([0.0, 0.0, math.sqrt(2.0) * s * s], kernel, name="square-centered")
        match = _HERMITE_PRESET.match(key)
        if match:
            return self.basis_function(int(match.group(1)), kernel)
        match = _CONSTANT_PRESET.match(key)
        if match:
            return self.from_coefficients([float(match.group(1))], kernel, name=key)
        raise ValueError(f"Unknown observable preset {name!r}")

    def from_spec(self, spec: "ObservableSpec", kernel: BarKernel) -> Observable:
        """Observable of an experiment-file or request spec (preset or coefficients)."""
        if spec.preset is not None:
            f = self.preset(spec.preset, kernel)
            return f.with_coeffs(f.coeffs, name=spec.name or f.name)
        return self.from_coefficients(spec.coefficients, kernel, name=spec.name)

    # ----------------------------------------------------------------
    # Linear operators (diagonal in the eigenbasis)
    # ----------------------------------------------------------------

    def center(self, f: Observable) -> Observable:
        """f~ = f - <mu, f>."""
        c = f.coeffs.copy()
        c[0] = 0.0
        return f.with_coeffs(c)

    def project_R(self, f: Observable, kernel: Optional[BarKernel] = None) -> Observable:
        """R f = <mu, f g_1> g_1, the projection on the a-eigenspace."""
        self._check_kernel(f, kernel)
        c = np.zeros(2)
        if f.degree >= 1:
            c[1] = f.coeffs[1]
        return f.with_coeffs(c, name=f"R({f.name})" if f.name else "")

    def hat(self, f: Observable, kernel: Optional[BarKernel] = None) -> Observable:
        """f^ = f~ - R f: centered, a-eigenspace removed."""
        self._check_kernel(f, kernel)
        c = f.coeffs.copy()
        c[: min(2, c.size)] = 0.0
        return f.with_coeffs(c)

    def q_power(self, f: Observable, n: int) -> Observable:
        """Q^n f as an observable."""
        if n < 0:
            raise ValueError("Number of steps must be non-negative")
        return f.with_coeffs(f.coeffs * f.basis.eigenvalues(f.degree, n))

    # ----------------------------------------------------------------
    # Quadrature-backed algebra
    # ----------------------------------------------------------------

    def inner(self, f: Observable, g: Observable, order: Optional[int] = None) -> float:
        """<mu, f g>."""
        basis = require_same_basis(f, g)
        nodes, weights = basis.quadrature(order or default_quadrature_order(f.degree + g.degree))
        return float(np.sum(weights * f(nodes) * g(nodes)))

    def multiply(self, f: Observable, g: Observable) -> Observable:
        """Hermite re-expansion of f g, degree capped at deg f + deg g."""
        basis = require_same_basis(f, g)
        degree = f.degree + g.degree
        nodes, weights = basis.quadrature(default_quadrature_order(degree))
        values = f(nodes) * g(nodes)
        coeffs = (weights * values) @ basis.vander(nodes, degree)
        return Observable(coeffs, basis)

    def square(self, f: Observable) -> Observable:
        return self.multiply(f, f)

    def parseval_norm(self, f: Observable) -> float:
        """<mu, f^2> = sum c_m^2."""
        return float(np.dot(f.coeffs, f.coeffs))

    def integrate(self, f: Observable) -> float:
        """<mu, f> by quadrature (equals c_0)."""
        nodes, weights = f.basis.quadrature(default_quadrature_order(f.degree))
        return float(np.sum(weights * f(nodes)))

    def decay_certificate(
        self,
        f: Observable,
        kernel: BarKernel,
        n_max: int = 20,
        grid: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """
        max over an x-grid of |Q^n f^(x)| / (alpha^(2n) (1 + x^2)^d), n = 0..n_max,
        with d the degree of f. Bounded in n when f^ decays at least like alpha^(2n).
        """
        self._check_kernel(f, kernel)
        f_hat = self.hat(f)
        if grid is None:
            grid = np.linspace(-10.0, 10.0, 401) * kernel.sigma_a
        envelope = (1.0 + grid ** 2) ** max(f.degree, 1)
        ratios = np.empty(n_max + 1)
        for n in range(n_max + 1):
            values = kernel.q_apply(f_hat, grid, n)
            ratios[n] = np.max(np.abs(values) / (kernel.alpha ** (2 * n) * envelope))
        logger.debug(f"Decay certificate for {f!r}: max ratio {ratios.max():.3e}")
        return ratios

    def _check_kernel(self, f: Observable, kernel: Optional[BarKernel]) -> None:
        if kernel is not None and not kernel.basis.same_as(f.basis):
            raise BasisMismatchError("Observable is expanded on another kernel's basis")


# Singleton instance
hermite_service = HermiteService()
