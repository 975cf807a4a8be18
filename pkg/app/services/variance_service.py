"""
Asymptotic variances of the sub-critical and critical central limit theorems.

For the BAR, P(g (x) h) = Qg . Qh and Q is self-adjoint on L^2(mu), so every
term <mu, Q^p f~ . Q^q g~> only depends on p + q. The services compute the
pairing sequence
    H[s] = <mu, f~ . Q^s g~>
by quadrature once and read the series off it. Series are truncated where a
geometric majorant of the remainder drops below the requested tolerance; the
majorant is reported as the tail bound.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from loguru import logger

from app.core.exceptions import BasisMismatchError, RegimeError
from app.models.enums import Regime, TailMode, VarianceKind
from app.models.kernels import BarKernel
from app.models.observables import (
    Observable,
    ObservableSequence,
    default_quadrature_order,
    require_same_basis,
)
from app.services.hermite_service import hermite_service

DEFAULT_TOLERANCE = 1e-12
# 2^k stays finite in float64 below this
MAX_SERIES_TERMS = 1000


@dataclass
class VarianceReport:
    """Value of an asymptotic variance with its truncation certificate."""
    kind: VarianceKind
    value: float
    truncation_K: int
    tail_bound: float
    terms: dict[str, float] = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {
            "kind": VarianceKind(self.kind).value,
            "value": self.value,
            "truncation_K": self.truncation_K,
            "tail_bound": self.tail_bound,
        }
        row.update({f"term_{k}": v for k, v in self.terms.items()})
        return row


def geometric_cutoff(scale: float, ratio: float, tol: float, start: int = 0) -> int:
    """
    Smallest K >= start with scale * ratio^K / (1 - ratio) < tol,
    the remainder of a geometric series of first term `scale`.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"Geometric ratio must lie in [0, 1), got {ratio}")
    if scale <= 0.0 or ratio == 0.0:
        return start
    bound = scale / (1.0 - ratio)
    if bound < tol:
        return start
    k = math.ceil(math.log(tol / bound) / math.log(ratio))
    k = max(k, start)
    while bound * ratio ** k >= tol:
        k += 1
    if k > MAX_SERIES_TERMS:
        raise ValueError(
            f"Series needs {k} terms for tolerance {tol:.1e}; the kernel is too close to criticality"
        )
    return k


def geometric_tail(scale: float, ratio: float, k: int) -> float:
    """scale * ratio^k / (1 - ratio)."""
    if scale <= 0.0:
        return 0.0
    return scale * ratio ** k / (1.0 - ratio)


class VarianceService:
    """
    Service computing the asymptotic variances of the BAR.
    """

    # ----------------------------------------------------------------
    # Helpers
    # ----------------------------------------------------------------

    def _require(self, kernel: BarKernel, regime: Regime) -> None:
        if kernel.regime is not regime:
            raise RegimeError(
                f"Kernel a={kernel.a} is in the {kernel.regime.label} regime, "
                f"operation needs the {regime.label} regime"
            )

    def _check_basis(self, kernel: BarKernel, *observables: Observable) -> None:
        basis = require_same_basis(*observables)
        if not kernel.basis.same_as(basis):
            raise BasisMismatchError("Observable is expanded on another kernel's basis")

    def pairing(self, observables: Sequence[Observable], max_shift: int, kernel: BarKernel) -> np.ndarray:
        """
        H[e1, e2, s] = <mu, f~_e1 . Q^s f~_e2> for s = 0..max_shift,
        by Gauss-Hermite quadrature.
        """
        degree = max(o.degree for o in observables)
        basis = kernel.basis
        nodes, weights = basis.quadrature(default_quadrature_order(2 * degree))
        vander = basis.vander(nodes, degree)
        coeffs = np.vstack([hermite_service.center(o).padded(degree)[: degree + 1] for o in observables])
        plain = coeffs @ vander.T
        powers = basis.a ** np.outer(np.arange(max_shift + 1), np.arange(degree + 1))
        # shifted[e, s, i] = Q^s f~_e(x_i)
        shifted = np.einsum("sm,em,im->esi", powers, coeffs, vander)
        return np.einsum("ai,bsi,i->abs", plain, shifted, weights)

    def _norm(self, f: Observable) -> float:
        return hermite_service.parseval_norm(hermite_service.center(f))

    # ----------------------------------------------------------------
    # Sub-critical regime
    # ----------------------------------------------------------------

    def sigma_sub_G(self, f: Observable, kernel: BarKernel, tol: float = DEFAULT_TOLERANCE) -> VarianceReport:
        """
        <mu, f~^2> + sum_{k>=0} 2^k <mu, (Q^(k+1) f~)^2>.
        """
        self._require(kernel, Regime.SUBCRITICAL)
        self._check_basis(kernel, f)
        a2 = kernel.a ** 2
        norm = self._norm(f)
        if norm == 0.0:
            return VarianceReport(VarianceKind.SUB_G, 0.0, 0, 0.0, {"S1": 0.0, "S2": 0.0})
        K = geometric_cutoff(norm * a2, 2.0 * a2, tol)
        h = self.pairing([f], 2 * K, kernel)[0, 0]
        ks = np.arange(K)
        first = float(h[0])
        second = float(np.sum(2.0 ** ks * h[2 * ks + 2]))
        tail = geometric_tail(norm * a2, 2.0 * a2, K)
        logger.debug(f"sigma_sub_G K={K} tail={tail:.2e}")
        return VarianceReport(VarianceKind.SUB_G, first + second, K, tail, {"S1": first, "S2": second})

    def _sub_T2(self, f: Observable, kernel: BarKernel, tol: float) -> tuple[float, float, int, dict]:
        """
        sum_{k>=1} <mu, f~ Q^k f~> + sum_{k>=1, r>=0} 2^r <mu, Q^(r+1) f~ Q^(r+k+1) f~>.
        """
        alpha = kernel.alpha
        a2 = kernel.a ** 2
        norm = self._norm(f)
        if norm == 0.0:
            return 0.0, 0.0, 0, {"T2_direct": 0.0, "T2_branching": 0.0}
        piece = tol / 8.0
        # terms of the single sum are bounded by norm alpha^k
        k_direct = geometric_cutoff(norm * alpha, alpha, piece, start=1)
        r_max = geometric_cutoff(norm * a2 * alpha / (1.0 - alpha), 2.0 * a2, piece)
        k_branch = geometric_cutoff(norm * a2 / (1.0 - 2.0 * a2) * alpha, alpha, piece, start=1)
        h = self.pairing([f], max(k_direct, 2 * r_max + k_branch, 1), kernel)[0, 0]

        direct = float(np.sum(h[1 : k_direct + 1]))
        rs = np.arange(r_max)
        weights = 2.0 ** rs
        branching = float(sum(np.sum(weights * h[2 * rs + k + 2]) for k in range(1, k_branch + 1)))

        tail = (
            geometric_tail(norm * alpha, alpha, k_direct)
            + geometric_tail(norm * a2 * alpha / (1.0 - alpha), 2.0 * a2, r_max)
            + geometric_tail(norm * a2 / (1.0 - 2.0 * a2) * alpha, alpha, k_branch)
        )
        K = max(k_direct, k_branch, r_max)
        return direct + branching, tail, K, {"T2_direct": direct, "T2_branching": branching}

    def sigma_sub_T(self, f: Observable, kernel: BarKernel, tol: float = DEFAULT_TOLERANCE) -> VarianceReport:
        """Sigma_T = Sigma_G + 2 Sigma_T2."""
        self._require(kernel, Regime.SUBCRITICAL)
        self._check_basis(kernel, f)
        g_report = self.sigma_sub_G(f, kernel, tol / 4.0)
        t2, t2_tail, t2_K, t2_terms = self._sub_T2(f, kernel, tol)
        terms = dict(g_report.terms)
        terms.update(t2_terms)
        terms["G"] = g_report.value
        return VarianceReport(
            VarianceKind.SUB_T,
            g_report.value + 2.0 * t2,
            max(g_report.truncation_K, t2_K),
            g_report.tail_bound + 2.0 * t2_tail,
            terms,
        )

    def sigma_sub_sequence(
        self,
        seq: ObservableSequence,
        kernel: BarKernel,
        tol: float = DEFAULT_TOLERANCE,
    ) -> VarianceReport:
        """
        Sigma^sub(f) = S1 + 2 S2 with
          S1 = sum_l 2^-l <mu, f~_l^2> + sum_{l,k>=0} 2^(k-l) <mu, (Q^(k+1) f~_l)^2>
          S2 = sum_{l<k} 2^-l <mu, f~_k Q^(k-l) f~_l>
               + sum_{l<k, r>=0} 2^(r-l) <mu, Q^(r+1) f~_k Q^(k-l+r+1) f~_l>.
        """
        self._require(kernel, Regime.SUBCRITICAL)
        self._check_basis(kernel, *seq.entries)
        alpha = kernel.alpha
        a2 = kernel.a ** 2
        bound = max(self._norm(e) for e in seq.entries)
        if bound == 0.0:
            return VarianceReport(VarianceKind.SUB_SEQUENCE, 0.0, 0, 0.0, {"S1": 0.0, "S2": 0.0})

        growth = (1.0 - a2) / (1.0 - 2.0 * a2)
        piece = tol / 16.0
        infinite = seq.tail is TailMode.CONSTANT
        if infinite:
            n_ell = max(
                geometric_cutoff(bound * growth, 0.5, piece),
                geometric_cutoff(bound * growth * alpha / (1.0 - alpha), 0.5, piece),
                seq.last_index + 1,
            )
            d_max = max(geometric_cutoff(2.0 * bound * growth * alpha, alpha, piece, start=1), seq.last_index)
        else:
            # finitely supported: only the Q-power series need truncation
            n_ell = seq.last_index + 1
            d_max = seq.last_index
        k_max = geometric_cutoff(2.0 * bound * a2, 2.0 * a2, piece)
        r_max = geometric_cutoff(2.0 * alpha / (1.0 - alpha) * bound * a2, 2.0 * a2, piece)

        h = self.pairing(seq.entries, max(2 * k_max, 2 * r_max + d_max, 1), kernel)

        def shifts(k: int, ell: int) -> Optional[np.ndarray]:
            e1, e2 = seq.entry_index(k), seq.entry_index(ell)
            if e1 is None or e2 is None:
                return None
            return h[e1, e2]

        ks = np.arange(k_max)
        rs = np.arange(r_max)
        s1 = 0.0
        for ell in range(n_ell):
            row = shifts(ell, ell)
            if row is None:
                continue
            s1 += 2.0 ** -ell * (row[0] + np.sum(2.0 ** ks * row[2 * ks + 2]))

        s2 = 0.0
        for ell in range(n_ell):
            for d in range(1, d_max + 1):
                row = shifts(ell + d, ell)
                if row is None:
                    continue
                s2 += 2.0 ** -ell * (row[d] + np.sum(2.0 ** rs * row[2 * rs + d + 2]))

        tail = (
            geometric_tail(2.0 * bound * a2, 2.0 * a2, k_max)
            + 2.0 * geometric_tail(2.0 * alpha / (1.0 - alpha) * bound * a2, 2.0 * a2, r_max)
        )
        if infinite:
            tail += (
                geometric_tail(bound * growth, 0.5, n_ell)
                + 2.0 * geometric_tail(bound * growth * alpha / (1.0 - alpha), 0.5, n_ell)
                + 2.0 * geometric_tail(2.0 * bound * growth * alpha, alpha, d_max)
            )
        s1, s2 = float(s1), float(s2)
        logger.debug(f"sigma_sub_sequence ell<{n_ell} d<={d_max} k<{k_max} r<{r_max}")
        return VarianceReport(
            VarianceKind.SUB_SEQUENCE,
            s1 + 2.0 * s2,
            max(n_ell, d_max, k_max, r_max),
            tail,
            {"S1": s1, "S2": s2},
        )

    # ----------------------------------------------------------------
    # Critical regime
    # ----------------------------------------------------------------

    def check_theta(self, theta: complex) -> float:
        """Only real unit eigenvalue phases (+1, -1) are evaluated."""
        theta = complex(theta)
        if abs(theta.imag) > 0.0 or abs(abs(theta.real) - 1.0) > 1e-12:
            raise ValueError(
                f"Eigenvalue phase {theta} is not real; complex conjugate pairs are not evaluated"
            )
        return theta.real

    def _critical_pairing(self, f: Observable, g: Observable, kernel: BarKernel) -> float:
        """<mu, P(R f (x)sym R g)> = <mu, Q R f . Q R g>."""
        qf = hermite_service.q_power(hermite_service.project_R(f), 1)
        qg = hermite_service.q_power(hermite_service.project_R(g), 1)
        return hermite_service.inner(qf, qg)

    def sigma_crit_G(self, f: Observable, kernel: BarKernel) -> VarianceReport:
        """sum_j <mu, P(R_j f (x)sym conj(R_j) f)>, J a singleton for the BAR."""
        self._require(kernel, Regime.CRITICAL)
        self._check_basis(kernel, f)
        self.check_theta(kernel.theta)
        value = self._critical_pairing(f, f, kernel)
        return VarianceReport(VarianceKind.CRIT_G, value, 0, 0.0, {"S1": value})

    def sigma_crit_T(self, f: Observable, kernel: BarKernel) -> VarianceReport:
        """Sigma_G + 2 (sqrt(2) theta - 1)^-1 Sigma_G."""
        g_report = self.sigma_crit_G(f, kernel)
        theta = self.check_theta(kernel.theta)
        t2 = g_report.value / (math.sqrt(2.0) * theta - 1.0)
        return VarianceReport(
            VarianceKind.CRIT_T,
            g_report.value + 2.0 * t2,
            0,
            0.0,
            {"G": g_report.value, "T2": t2},
        )

    def sigma_crit_sequence(
        self,
        seq: ObservableSequence,
        kernel: BarKernel,
        tol: float = DEFAULT_TOLERANCE,
    ) -> VarianceReport:
        """
        S1 + 2 S2 with S1 = sum_k 2^-k <mu, P f*_{k,k}> and
        S2 = sum_{l<k} 2^-(k+l)/2 <mu, P f*_{k,l}>,
        f*_{k,l} = theta^(l-k) R f_k (x)sym R f_l.
        """
        self._require(kernel, Regime.CRITICAL)
        self._check_basis(kernel, *seq.entries)
        theta = self.check_theta(kernel.theta)
        entries = seq.entries
        pair = np.array([[self._critical_pairing(f, g, kernel) for g in entries] for f in entries])
        bound = float(np.max(np.abs(np.diag(pair))))
        if bound == 0.0:
            return VarianceReport(VarianceKind.CRIT_SEQUENCE, 0.0, 0, 0.0, {"S1": 0.0, "S2": 0.0})

        if seq.tail is TailMode.CONSTANT:
            r = 2.0 ** -0.5
            K = max(
                geometric_cutoff(bound, 0.5, tol / 4.0),
                geometric_cutoff(bound / (1.0 - r), r, tol / 4.0),
                seq.last_index + 1,
            )
            tail = geometric_tail(bound, 0.5, K) + 2.0 * geometric_tail(bound / (1.0 - r), r, K)
        else:
            K = seq.last_index + 1
            tail = 0.0

        s1 = 0.0
        s2 = 0.0
        for k in range(K):
            ek = seq.entry_index(k)
            if ek is None:
                continue
            s1 += 2.0 ** -k * pair[ek, ek]
            for ell in range(k):
                el = seq.entry_index(ell)
                if el is None:
                    continue
                s2 += 2.0 ** (-(k + ell) / 2.0) * theta ** (ell - k) * pair[ek, el]
        s1, s2 = float(s1), float(s2)
        return VarianceReport(VarianceKind.CRIT_SEQUENCE, s1 + 2.0 * s2, K, tail, {"S1": s1, "S2": s2})

    # ----------------------------------------------------------------
    # Closed forms (Hermite reduction)
    # ----------------------------------------------------------------

    def closed_form_sub_G(self, f: Observable, kernel: BarKernel) -> float:
        """sum_{m>=1} c_m^2 (1 - a^2m) / (1 - 2 a^2m)."""
        self._require(kernel, Regime.SUBCRITICAL)
        c = f.coeffs[1:]
        am = kernel.a ** np.arange(1, f.degree + 1)
        return float(np.sum(c ** 2 * (1.0 - am ** 2) / (1.0 - 2.0 * am ** 2)))

    def closed_form_sub_T(self, f: Observable, kernel: BarKernel) -> float:
        """Sigma_G + 2 sum_{m>=1} c_m^2 a^m / (1 - a^m) (1 - a^2m) / (1 - 2 a^2m)."""
        self._require(kernel, Regime.SUBCRITICAL)
        c = f.coeffs[1:]
        am = kernel.a ** np.arange(1, f.degree + 1)
        growth = (1.0 - am ** 2) / (1.0 - 2.0 * am ** 2)
        t2 = float(np.sum(c ** 2 * am / (1.0 - am) * growth))
        return self.closed_form_sub_G(f, kernel) + 2.0 * t2

    # ----------------------------------------------------------------
    # Dispatch
    # ----------------------------------------------------------------

    def evaluate(
        self,
        kind: VarianceKind,
        kernel: BarKernel,
        f: Optional[Observable] = None,
        seq: Optional[ObservableSequence] = None,
        tol: float = DEFAULT_TOLERANCE,
    ) -> VarianceReport:
        kind = VarianceKind(kind)
        if kind in (VarianceKind.SUB_SEQUENCE, VarianceKind.CRIT_SEQUENCE):
            if seq is None:
                raise ValueError(f"{kind.value} needs an observable sequence")
            if kind is VarianceKind.SUB_SEQUENCE:
                return self.sigma_sub_sequence(seq, kernel, tol)
            return self.sigma_crit_sequence(seq, kernel, tol)
        if f is None:
            raise ValueError(f"{kind.value} needs an observable")
        if kind is VarianceKind.SUB_G:
            return self.sigma_sub_G(f, kernel, tol)
        if kind is VarianceKind.SUB_T:
            return self.sigma_sub_T(f, kernel, tol)
        if kind is VarianceKind.CRIT_G:
            return self.sigma_crit_G(f, kernel)
        return self.sigma_crit_T(f, kernel)

    def regime_sweep(
        self,
        a_grid: Sequence[float],
        sigma: float = 1.0,
        observable: str = "identity",
        tol: float = 1e-10,
    ) -> list[dict]:
        """
        Regime label, normalisation exponent and, in the sub-critical regime,
        Sigma^sub_G(f) together with Sigma^sub_G(f) (1 - 2a^2).
        """
        rows = []
        for a in a_grid:
            kernel = BarKernel(a=float(a), sigma=sigma)
            row = {
                "a": kernel.a,
                "regime": kernel.regime.value,
                "normalization_exponent": kernel.normalization_exponent(),
                "sigma_sub_G": math.nan,
                "scaled_sigma_sub_G": math.nan,
            }
            if kernel.regime is Regime.SUBCRITICAL:
                f = hermite_service.preset(observable, kernel)
                try:
                    value = self.sigma_sub_G(f, kernel, tol).value
                except ValueError:
                    logger.warning(f"a={kernel.a}: series too long, using the Hermite closed form")
                    value = self.closed_form_sub_G(f, kernel)
                row["sigma_sub_G"] = value
                row["scaled_sigma_sub_G"] = value * (1.0 - 2.0 * kernel.a ** 2)
            rows.append(row)
        logger.info(f"Regime sweep over {len(rows)} values of a")
        return rows

    def default_kinds(self, regime: Regime) -> tuple[VarianceKind, VarianceKind]:
        """(generation, tree) variance kinds of a regime."""
        if regime is Regime.SUBCRITICAL:
            return VarianceKind.SUB_G, VarianceKind.SUB_T
        if regime is Regime.CRITICAL:
            return VarianceKind.CRIT_G, VarianceKind.CRIT_T
        raise RegimeError("The super-critical regime has no Gaussian limit variance")


# Singleton instance
variance_service = VarianceService()
