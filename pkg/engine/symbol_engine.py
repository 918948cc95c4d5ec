"""
Symbol Engine
Time-dependent Fourier symbols A_t(ξ) = ∫ₜᵀ Q_s ξ·ξ ds, their exact time
derivatives and the propagator multiplier e^{−A_t(ξ)}.

Three families are supported:
    ExplicitQuadratic  Q_t given by callables (polynomial coefficients give
                       a closed form and exact derivatives)
    OuReduction        Q_t = e^{(T−t)B} Q e^{(T−t)Bᵀ} from a MatrixPair
    Fractional         A_t(ξ) = (T−t)|ξ|^{2s}, s ≥ 1/2
"""

from dataclasses import dataclass, field
from math import comb, factorial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from .errors import DerivOrderUnavailable, EllipticityFailure
from .flows_kalman import (
    MatrixPair,
    analyze_hypoellipticity,
    fit_power_law,
    matrix_exponential,
    sphere_infimum,
    sphere_points,
)
from .quadrature import adaptive_gauss_legendre
from .settings import load_settings

EXPLICIT = "ExplicitQuadratic"
OU_REDUCTION = "OuReduction"
FRACTIONAL = "Fractional"
KINDS = (EXPLICIT, OU_REDUCTION, FRACTIONAL)

# Unlimited derivative order for families that supply every order exactly
UNLIMITED = 10 ** 6


@dataclass
class SymbolValue:
    a: float
    time_derivs: List[float]


@dataclass(eq=False)
class SymbolFamily:
    """
    A time-dependent quadratic (or fractional) symbol on [0, T]

    Use the constructors heat_family, polynomial_family, explicit_family,
    ou_family and fractional_family rather than building this directly.
    """
    kind: str
    T: float
    n: int
    q_derivs: Optional[List[Callable[[float], np.ndarray]]] = None
    poly_coeffs: Optional[np.ndarray] = None
    pair: Optional[MatrixPair] = None
    s: Optional[float] = None
    label: str = ""
    _lie_cache: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def max_order(self) -> int:
        """Highest m for which ∂ₜ^m A_t is available"""
        if self.kind == EXPLICIT and self.poly_coeffs is None:
            return len(self.q_derivs)
        return UNLIMITED

    @property
    def has_closed_form(self) -> bool:
        return not (self.kind == EXPLICIT and self.poly_coeffs is None)

    def describe(self) -> Dict:
        info = {"kind": self.kind, "T": self.T, "n": self.n, "label": self.label}
        if self.kind == FRACTIONAL:
            info["s"] = self.s
        if self.pair is not None:
            info["Q"] = self.pair.Q.tolist()
            info["B"] = self.pair.B.tolist()
        return info

    # ------------------------------------------------------------------
    # Q_t and its time derivatives
    # ------------------------------------------------------------------
    def _lie_power(self, j: int) -> np.ndarray:
        """L^j(Q) with L(X) = BX + XBᵀ"""
        if j not in self._lie_cache:
            if j == 0:
                value = self.pair.Q.copy()
            else:
                previous = self._lie_power(j - 1)
                value = self.pair.B @ previous + previous @ self.pair.B.T
            self._lie_cache[j] = value
        return self._lie_cache[j]

    def q_derivative(self, t: float, j: int) -> np.ndarray:
        """
        ∂ₜ^j Q_t as an n×n matrix (for Fractional, the scalar weight of |ξ|^{2s})
        """
        if self.kind == FRACTIONAL:
            return np.array([[1.0 if j == 0 else 0.0]])
        if self.kind == OU_REDUCTION:
            E = matrix_exponential(self.pair.B, self.T - t)
            return (-1) ** j * (E @ self._lie_power(j) @ E.T)
        if self.poly_coeffs is not None:
            degree = self.poly_coeffs.shape[0] - 1
            out = np.zeros((self.n, self.n))
            for p in range(j, degree + 1):
                out += (factorial(p) // factorial(p - j)) * self.poly_coeffs[p] * t ** (p - j)
            return out
        if j >= len(self.q_derivs):
            raise DerivOrderUnavailable(
                f"explicit family declares ∂ₜ^j Q_t only up to j = {len(self.q_derivs) - 1}")
        return np.asarray(self.q_derivs[j](t), dtype=float)

    def q_at(self, t: float) -> np.ndarray:
        return self.q_derivative(t, 0)

    # ------------------------------------------------------------------
    # ∫_{t0}^{t1} Q_s ds
    # ------------------------------------------------------------------
    def integrated_q(self, t0: float, t1: float) -> np.ndarray:
        """∫_{t0}^{t1} Q_s ds (Fractional: the scalar t1 − t0)"""
        if self.kind == FRACTIONAL:
            return np.array([[t1 - t0]])
        if self.kind == OU_REDUCTION:
            return ou_gramian(self.pair, self.T - t0) - ou_gramian(self.pair, self.T - t1)
        if self.poly_coeffs is not None:
            out = np.zeros((self.n, self.n))
            for p, coeff in enumerate(self.poly_coeffs):
                out += coeff * (t1 ** (p + 1) - t0 ** (p + 1)) / (p + 1)
            return out
        tol = load_settings("symbol_engine")["quad_abs_tol"] * (1.0 + abs(t1 - t0))
        first = self.q_derivs[0]
        return adaptive_gauss_legendre(
            lambda s: np.array([np.asarray(first(float(x)), dtype=float) for x in s]),
            t0, t1, abs_tol=tol)

    # ------------------------------------------------------------------
    # grid evaluation
    # ------------------------------------------------------------------
    def _quadratic(self, matrix: np.ndarray, xi: np.ndarray) -> np.ndarray:
        if self.kind == FRACTIONAL:
            radius = np.sqrt(np.sum(xi * xi, axis=-1))
            return matrix[0, 0] * radius ** (2.0 * self.s)
        return np.einsum('...i,ij,...j->...', xi, matrix, xi)

    def a_values(self, t: float, xi: np.ndarray) -> np.ndarray:
        """A_t(ξ) for ξ of shape (..., n)"""
        return self._quadratic(self.integrated_q(t, self.T), np.asarray(xi, dtype=float))

    def increment(self, t0: float, t1: float, xi: np.ndarray) -> np.ndarray:
        return self._quadratic(self.integrated_q(t0, t1), np.asarray(xi, dtype=float))

    def a_derivatives(self, t: float, xi: np.ndarray, order: int) -> np.ndarray:
        """
        Stack of ∂ₜ^m A_t(ξ) for m = 1..order, shape (order, ...)
        """
        self.check_order(order)
        xi = np.asarray(xi, dtype=float)
        out = np.zeros((order,) + xi.shape[:-1])
        for m in range(1, order + 1):
            if self.kind == FRACTIONAL and m > 1:
                break
            out[m - 1] = -self._quadratic(self.q_derivative(t, m - 1), xi)
        return out

    def check_order(self, order: int):
        if order < 0:
            raise ValueError("derivative order must be nonnegative")
        if order > self.max_order:
            raise DerivOrderUnavailable(
                f"{self.kind} family supplies ∂ₜ^m A_t only up to m = {self.max_order}, "
                f"requested {order}")


# ============================================================================
# CONSTRUCTORS
# ============================================================================

def ou_gramian(pair: MatrixPair, tau: float) -> np.ndarray:
    """
    ∫₀^τ e^{sB} Q e^{sBᵀ} ds in closed form: the top-right block of
    exp(τ [[B, Q], [0, −Bᵀ]]) multiplied on the right by e^{τBᵀ}.
    """
    n = pair.n
    if tau == 0:
        return np.zeros((n, n))
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = pair.B
    block[:n, n:] = pair.Q
    block[n:, n:] = -pair.B.T
    big = expm(tau * block)
    result = big[:n, n:] @ big[:n, :n].T
    return 0.5 * (result + result.T)


def _check_time_psd(fam: SymbolFamily):
    points = load_settings("symbol_engine")["psd_check_points"]
    for t in np.linspace(0.0, fam.T, points):
        Q = fam.q_at(float(t))
        if not np.allclose(Q, Q.T, atol=1e-10 * max(1.0, np.abs(Q).max())):
            raise ValueError(f"Q_t is not symmetric at t = {t:.4g}")
        smallest = np.linalg.eigvalsh(0.5 * (Q + Q.T)).min()
        if smallest < -1e-10 * max(1.0, np.abs(Q).max()):
            raise ValueError(f"Q_t is not positive semidefinite at t = {t:.4g}")


def _check_horizon(T: float):
    if not T > 0:
        raise ValueError(f"final time T must be positive, got {T}")


def ou_family(pair: MatrixPair, T: float, label: str = "") -> SymbolFamily:
    _check_horizon(T)
    fam = SymbolFamily(kind=OU_REDUCTION, T=float(T), n=pair.n, pair=pair,
                       label=label or "ou")
    _check_time_psd(fam)
    return fam


def polynomial_family(coeffs: Sequence, T: float, label: str = "") -> SymbolFamily:
    """
    Q_t = Σ_p coeffs[p] t^p with symmetric matrix coefficients

    Args:
        coeffs: List of n×n matrices, lowest degree first
        T: Final time
    """
    _check_horizon(T)
    array = np.asarray(coeffs, dtype=float)
    if array.ndim != 3 or array.shape[1] != array.shape[2]:
        raise ValueError("polynomial coefficients must be a list of square matrices")
    fam = SymbolFamily(kind=EXPLICIT, T=float(T), n=array.shape[1], poly_coeffs=array,
                       label=label or "polynomial")
    _check_time_psd(fam)
    return fam


def heat_family(n: int, T: float, diffusivity: float = 1.0) -> SymbolFamily:
    """Q_t ≡ diffusivity·I, A_t(ξ) = (T−t)·diffusivity·|ξ|²"""
    return polynomial_family([diffusivity * np.eye(n)], T, label="heat")


def explicit_family(q_derivs: Sequence[Callable[[float], np.ndarray]], T: float,
                    label: str = "") -> SymbolFamily:
    """
    Q_t from callables [Q, ∂ₜQ, …, ∂ₜ^{J_max}Q]; A_t is integrated numerically
    """
    _check_horizon(T)
    if not q_derivs:
        raise ValueError("explicit family needs at least the callable t ↦ Q_t")
    sample = np.asarray(q_derivs[0](0.0), dtype=float)
    fam = SymbolFamily(kind=EXPLICIT, T=float(T), n=sample.shape[0],
                       q_derivs=list(q_derivs), label=label or "explicit")
    _check_time_psd(fam)
    return fam


def fractional_family(n: int, T: float, s: float) -> SymbolFamily:
    _check_horizon(T)
    if s < 0.5:
        raise ValueError(f"fractional exponent must satisfy s ≥ 1/2, got {s}")
    return SymbolFamily(kind=FRACTIONAL, T=float(T), n=n, s=float(s), label=f"fractional s={s}")


# ============================================================================
# OPERATIONS
# ============================================================================

def _check_time(fam: SymbolFamily, t: float):
    if not (-1e-14 <= t <= fam.T * (1 + 1e-14)):
        raise ValueError(f"t = {t} outside [0, {fam.T}]")


def eval_symbol(fam: SymbolFamily, t: float, xi, deriv_order: int = 0) -> SymbolValue:
    """
    A_t(ξ) and ∂ₜ^m A_t(ξ), m = 1..deriv_order, at a single frequency
    """
    _check_time(fam, t)
    xi = np.asarray(xi, dtype=float).reshape(fam.n)
    fam.check_order(deriv_order)
    a = float(fam.a_values(t, xi))
    derivs = fam.a_derivatives(t, xi, deriv_order) if deriv_order else np.zeros(0)
    return SymbolValue(a=a, time_derivs=[float(d) for d in derivs])


def symbol_increment(fam: SymbolFamily, t0: float, t1: float, xi) -> float:
    """∫_{t0}^{t1} Q_s ξ·ξ ds"""
    return float(fam.increment(t0, t1, np.asarray(xi, dtype=float).reshape(fam.n)))


def multiplier_derivatives_grid(fam: SymbolFamily, t: float, xi: np.ndarray, m: int) -> np.ndarray:
    """
    ∂ₜ^m e^{−A_t(ξ)} over an array of frequencies, by the Leibniz recurrence
    E_k = Σ_{j<k} C(k−1, j) ∂ₜ^{k−j}(−A_t) E_j
    """
    _check_time(fam, t)
    xi = np.asarray(xi, dtype=float)
    E = [np.exp(-fam.a_values(t, xi))]
    if m == 0:
        return E[0]
    D = -fam.a_derivatives(t, xi, m)
    for k in range(1, m + 1):
        total = np.zeros_like(E[0])
        for j in range(k):
            total = total + comb(k - 1, j) * D[k - j - 1] * E[j]
        E.append(total)
    return E[m]


def multiplier_derivative(fam: SymbolFamily, t: float, xi, m: int) -> float:
    """∂ₜ^m e^{−A_t(ξ)} at a single frequency"""
    xi = np.asarray(xi, dtype=float).reshape(fam.n)
    return float(multiplier_derivatives_grid(fam, t, xi, m))


def ellipticity_probe(fam: SymbolFamily, time_samples: Optional[int] = None,
                      xi_samples: Optional[int] = None) -> Tuple[float, float]:
    """
    Estimate (c, k) with A_t(ξ) ≥ c (T−t)^k |ξ|²

    Args:
        fam: Symbol family
        time_samples: Number of log-spaced T − t values
        xi_samples: Unit-sphere samples

    Returns:
        Tuple (c_hat, k_hat)

    Raises:
        EllipticityFailure: inf_ξ A_t(ξ) vanishes at some t < T
    """
    config = load_settings("symbol_engine")
    time_samples = time_samples or config["probe_time_samples"]
    xi_samples = xi_samples or config["probe_xi_samples"]

    if fam.kind == OU_REDUCTION and not analyze_hypoellipticity(fam.pair).kalman_holds:
        raise EllipticityFailure("Kalman condition fails for the OU pair")

    gaps = fam.T * np.logspace(np.log10(config["probe_min_fraction"]), 0.0, time_samples)
    samples = sphere_points(fam.n, xi_samples)
    ratios = np.empty_like(gaps)
    for i, gap in enumerate(gaps):
        t = max(fam.T - gap, 0.0)
        if fam.kind == FRACTIONAL:
            ratios[i] = gap
            continue
        W = fam.integrated_q(t, fam.T)
        ratios[i], _ = sphere_infimum(W, samples)
        scale = max(np.abs(W).max(), 1e-300)
        if ratios[i] <= config["degeneracy_rtol"] * scale:
            raise EllipticityFailure(
                f"inf over the sphere of A_t(ξ) vanishes at T − t = {gap:.3e}")

    k_hat, _ = fit_power_law(gaps, ratios)
    c_hat = float(np.min(ratios / gaps ** k_hat))
    return c_hat, k_hat


def analyticity_constant(fam: SymbolFamily, time_samples: int = 16, max_m: int = 6) -> float:
    """
    ŝ_T = max over sampled t and m ≤ max_m of (‖∂ₜ^m Q_t‖ / m!)^{1/(m+1)}
    """
    if fam.kind == FRACTIONAL:
        return 1.0
    best = 0.0
    order = max_m if fam.max_order == UNLIMITED else min(max_m, fam.max_order - 1)
    for t in np.linspace(0.0, fam.T, time_samples):
        for m in range(order + 1):
            size = np.linalg.norm(fam.q_derivative(float(t), m), 2)
            if size > 0:
                best = max(best, (size / factorial(m)) ** (1.0 / (m + 1)))
    return best


def bernstein_constant(T: float, s_hat: float, c_hat: float) -> float:
    """Ĉ_T = max(1, T)·ŝ_T/ĉ_T"""
    return max(1.0, T) * s_hat / c_hat


if __name__ == "__main__":
    fam = ou_family(MatrixPair.example("kolmogorov"), T=1.0)
    value = eval_symbol(fam, 0.25, [1.0, -2.0], deriv_order=3)
    print(f"[OK] A_t = {value.a:.6f}, derivatives {value.time_derivs}")
    c_hat, k_hat = ellipticity_probe(fam)
    print(f"[OK] ellipticity c_hat = {c_hat:.4e}, k_hat = {k_hat:.4f}")
