"""
Exact moments of generation sums through the many-to-one formulas.

For the BAR kernel P(g (x) h)(y) = Qg(y) Qh(y), so every term reduces to
powers of Q applied to products of observables, computed in the Hermite
eigenbasis. All functions accept a scalar or an array of initial states.
"""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from loguru import logger

from app.core.exceptions import BasisMismatchError
from app.models.enums import MomentKind, Statistic
from app.models.kernels import BarKernel
from app.models.observables import Observable, require_same_basis
from app.services.hermite_service import hermite_service

State = Union[float, np.ndarray]


@dataclass(frozen=True)
class MomentRequest:
    """One oracle evaluation: E_x of a generation-sum moment."""
    kind: MomentKind
    f: Observable
    n: int
    x: float
    g: Optional[Observable] = None
    m: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", MomentKind(self.kind))
        if self.n < 0:
            raise ValueError("Generation n must be non-negative")
        if self.kind is MomentKind.CROSS_GEN:
            if self.g is None or self.m is None:
                raise ValueError("cross_gen needs g and m")
            if not 0 <= self.m <= self.n:
                raise ValueError(f"cross_gen needs n >= m >= 0, got n={self.n}, m={self.m}")


def _scalar(value):
    return float(value) if np.ndim(value) == 0 else value


class OracleService:
    """
    Service for many-to-one moment formulas of the BAR.
    """

    def _check(self, kernel: BarKernel, *observables: Observable) -> None:
        basis = require_same_basis(*observables)
        if not kernel.basis.same_as(basis):
            raise BasisMismatchError("Observable is expanded on another kernel's basis")

    def mean_generation(self, f: Observable, n: int, x: State, kernel: BarKernel) -> State:
        """E_x[M_{G_n}(f)] = 2^n Q^n f(x)."""
        self._check(kernel, f)
        return _scalar(2.0 ** n * kernel.q_apply(f, x, n))

    def second_moment_generation(self, f: Observable, n: int, x: State, kernel: BarKernel) -> State:
        """
        E_x[M_{G_n}(f)^2] = 2^n Q^n(f^2)(x)
            + sum_{k<n} 2^(n+k) Q^(n-k-1)((Q^(k+1) f)^2)(x).
        """
        self._check(kernel, f)
        total = 2.0 ** n * kernel.q_apply(hermite_service.square(f), x, n)
        for k in range(n):
            h = hermite_service.q_power(f, k + 1)
            total = total + 2.0 ** (n + k) * kernel.q_apply(hermite_service.square(h), x, n - k - 1)
        return _scalar(total)

    def cross_moment(
        self,
        f: Observable,
        g: Observable,
        n: int,
        m: int,
        x: State,
        kernel: BarKernel,
    ) -> State:
        """
        E_x[M_{G_n}(f) M_{G_m}(g)], n >= m:
            2^n Q^m(g Q^(n-m) f)(x)
            + sum_{k<m} 2^(n+k) Q^(m-k-1)(Q^(k+1) g . Q^(n-m+k+1) f)(x).
        """
        if n < m:
            raise ValueError(f"cross_moment needs n >= m, got n={n}, m={m}")
        if m < 0:
            raise ValueError("Generations must be non-negative")
        self._check(kernel, f, g)
        lead = hermite_service.multiply(g, hermite_service.q_power(f, n - m))
        total = 2.0 ** n * kernel.q_apply(lead, x, m)
        for k in range(m):
            prod = hermite_service.multiply(
                hermite_service.q_power(g, k + 1),
                hermite_service.q_power(f, n - m + k + 1),
            )
            total = total + 2.0 ** (n + k) * kernel.q_apply(prod, x, m - k - 1)
        return _scalar(total)

    def evaluate(self, request: MomentRequest, kernel: BarKernel) -> float:
        if request.kind is MomentKind.MEAN_GEN:
            return self.mean_generation(request.f, request.n, request.x, kernel)
        if request.kind is MomentKind.SECOND_GEN:
            return self.second_moment_generation(request.f, request.n, request.x, kernel)
        return self.cross_moment(request.f, request.g, request.n, request.m, request.x, kernel)

    # ----------------------------------------------------------------
    # Tree sums
    # ----------------------------------------------------------------

    def mean_tree(self, f: Observable, n: int, x: State, kernel: BarKernel) -> State:
        """E_x[M_{T_n}(f)]."""
        return _scalar(sum(self.mean_generation(f, g, x, kernel) for g in range(n + 1)))

    def tree_second_moment(self, f: Observable, n: int, x: State, kernel: BarKernel) -> State:
        """E_x[M_{T_n}(f)^2] = sum_g E[M_g^2] + 2 sum_{g>h} E[M_g M_h]."""
        total = 0.0
        for g in range(n + 1):
            total = total + self.second_moment_generation(f, g, x, kernel)
            for h in range(g):
                total = total + 2.0 * self.cross_moment(f, f, g, h, x, kernel)
        return _scalar(total)

    # ----------------------------------------------------------------
    # Stationary start
    # ----------------------------------------------------------------

    def stationary_moments(
        self,
        f: Observable,
        n: int,
        kernel: BarKernel,
        statistic: Statistic = Statistic.GENERATION,
    ) -> tuple[float, float]:
        """(E_mu[M], E_mu[M^2]) for M = M_{G_n}(f) or M_{T_n}(f), X_root ~ mu."""
        self._check(kernel, f)
        statistic = Statistic(statistic)
        degree = 2 * f.degree
        nodes, weights = kernel.basis.quadrature(max(2 * degree + 16, 48))
        if statistic is Statistic.GENERATION:
            first = self.mean_generation(f, n, nodes, kernel)
            second = self.second_moment_generation(f, n, nodes, kernel)
        else:
            first = self.mean_tree(f, n, nodes, kernel)
            second = self.tree_second_moment(f, n, nodes, kernel)
        return float(np.sum(weights * first)), float(np.sum(weights * second))

    def stationary_variance(
        self,
        f: Observable,
        n: int,
        kernel: BarKernel,
        statistic: Statistic = Statistic.GENERATION,
    ) -> float:
        """Var_mu of M_{G_n}(f~) or M_{T_n}(f~), by the law of total variance."""
        f_tilde = hermite_service.center(f)
        first, second = self.stationary_moments(f_tilde, n, kernel, statistic)
        variance = second - first * first
        logger.debug(f"Stationary variance n={n} {Statistic(statistic).value}: {variance:.6g}")
        return variance


# Singleton instance
oracle_service = OracleService()
