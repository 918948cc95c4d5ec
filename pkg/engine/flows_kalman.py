"""
Flows and Kalman Analysis
Matrix-level analysis of an Ornstein-Uhlenbeck pair (Q, B): matrix flows
e^{tB}, the Kalman rank condition, the hypoellipticity index k0 and the
short-time behaviour of the controllability Gramian.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy
from scipy.linalg import expm
from scipy.stats import norm, qmc

from .errors import FlowOverflow, RankMismatch
from .quadrature import adaptive_gauss_legendre
from .settings import load_settings

MIN_SPHERE_SAMPLES = 100

# Built-in pairs, keyed by the name scenarios use
EXAMPLE_PAIRS = {
    "kolmogorov": {"Q": [[0.0, 0.0], [0.0, 1.0]], "B": [[0.0, 1.0], [0.0, 0.0]]},
    "rotation": {"Q": [[0.0, 0.0], [0.0, 1.0]], "B": [[0.0, 1.0], [-1.0, 0.0]]},
    "heat2": {"Q": [[1.0, 0.0], [0.0, 1.0]], "B": [[0.0, 0.0], [0.0, 0.0]]},
    "chain3": {"Q": [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
               "B": [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]},
}


@dataclass(frozen=True, eq=False)
class MatrixPair:
    """
    The (Q, B) data of P = Q D·D + Bx·∇

    Q is symmetrized and its eigenvalues within psd_rtol·‖Q‖ of zero are
    clamped before the principal square root is taken.
    """
    Q: np.ndarray
    B: np.ndarray
    sqrt_q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        B = np.array(self.B, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got shape {Q.shape}")
        if B.shape != Q.shape:
            raise ValueError(f"B must have shape {Q.shape}, got {B.shape}")
        scale = max(np.linalg.norm(Q, 2), 1e-300)
        if np.max(np.abs(Q - Q.T)) > 1e-12 * max(scale, 1.0):
            raise ValueError("Q must be symmetric")
        Q = 0.5 * (Q + Q.T)

        psd_rtol = load_settings("flows_kalman")["psd_rtol"]
        eigenvalues, eigenvectors = np.linalg.eigh(Q)
        if eigenvalues.size and eigenvalues.min() < -psd_rtol * scale:
            raise ValueError(f"Q is not positive semidefinite "
                             f"(smallest eigenvalue {eigenvalues.min():.3e})")
        eigenvalues = np.clip(eigenvalues, 0.0, None)
        sqrt_q = (eigenvectors * np.sqrt(eigenvalues)) @ eigenvectors.T

        for name, value in (("Q", Q), ("B", B), ("sqrt_q", sqrt_q)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @classmethod
    def example(cls, name: str) -> "MatrixPair":
        if name not in EXAMPLE_PAIRS:
            raise KeyError(f"unknown example pair '{name}'. "
                           f"Available: {', '.join(sorted(EXAMPLE_PAIRS))}")
        entry = EXAMPLE_PAIRS[name]
        return cls(entry["Q"], entry["B"])

    def conjugated(self, orthogonal: np.ndarray) -> "MatrixPair":
        """The pair (OQOᵀ, OBOᵀ)"""
        O = np.asarray(orthogonal, dtype=float)
        return MatrixPair(O @ self.Q @ O.T, O @ self.B @ O.T)


@dataclass
class HypoellipticityReport:
    kalman_holds: bool
    rank: int
    k0: Optional[int]
    kernel_chain: List[int]
    exact_chain: Optional[List[int]] = None

    def to_dict(self) -> Dict:
        return {
            "kalman_holds": self.kalman_holds,
            "rank": self.rank,
            "k0": self.k0,
            "kernel_chain": list(self.kernel_chain),
            "exact_chain": None if self.exact_chain is None else list(self.exact_chain),
        }


@dataclass
class GramianCurve:
    tau_grid: np.ndarray
    values: np.ndarray
    fitted_exponent: float
    residual: float
    minimizers: np.ndarray

    def to_dict(self) -> Dict:
        return {
            "tau_grid": [float(t) for t in self.tau_grid],
            "values": [float(v) for v in self.values],
            "fitted_exponent": float(self.fitted_exponent),
            "residual": float(self.residual),
        }


# ============================================================================
# FLOWS
# ============================================================================

def matrix_exponential(B, t: float, norm_cap: Optional[float] = None) -> np.ndarray:
    """
    e^{tB} by scaling-and-squaring Padé

    Args:
        B: Square real matrix
        t: Time, |t| ≤ 1e6
        norm_cap: Largest admissible ‖tB‖₁ (defaults to settings)

    Returns:
        np.ndarray: The matrix exponential (exact identity at t = 0)
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    if t == 0:
        return np.eye(n)
    if abs(t) > 1e6:
        raise FlowOverflow(f"|t| = {abs(t):.3e} exceeds 1e6")
    if norm_cap is None:
        norm_cap = load_settings("flows_kalman")["expm_norm_cap"]
    scaled = t * B
    size = np.linalg.norm(scaled, 1)
    if size > norm_cap:
        raise FlowOverflow(f"‖tB‖₁ = {size:.3e} exceeds the cap {norm_cap:.3e}")
    return expm(scaled)


class FlowMap:
    """t ↦ e^{tB} with a small memo for repeated times"""

    def __init__(self, B):
        self.B = np.array(B, dtype=float)
        self.B.setflags(write=False)
        self._memo: Dict[float, np.ndarray] = {}

    def __call__(self, t: float) -> np.ndarray:
        key = float(t)
        value = self._memo.get(key)
        if value is None:
            value = matrix_exponential(self.B, key)
            value.setflags(write=False)
            if len(self._memo) < 4096:
                self._memo[key] = value
        return value


def flow_of(B) -> FlowMap:
    return FlowMap(B)


# ============================================================================
# KALMAN / HYPOELLIPTICITY
# ============================================================================

def _numeric_rank(matrix: np.ndarray, rtol: float) -> int:
    if matrix.size == 0:
        return 0
    singular = np.linalg.svd(matrix, compute_uv=False)
    if singular.size == 0 or singular[0] == 0.0:
        return 0
    return int(np.sum(singular > rtol * singular[0]))


def _stacked_observability(pair: MatrixPair, k: int) -> np.ndarray:
    blocks = []
    power = np.eye(pair.n)
    for _ in range(k + 1):
        blocks.append(pair.sqrt_q @ power)
        power = power @ pair.B.T
    return np.vstack(blocks)


def kalman_block(pair: MatrixPair) -> np.ndarray:
    """[√Q, B√Q, …, B^{n−1}√Q]"""
    n = pair.n
    block = np.zeros((n, n * n))
    block[:, :n] = pair.sqrt_q
    for k in range(1, n):
        block[:, k * n:(k + 1) * n] = pair.B @ block[:, (k - 1) * n:k * n]
    return block


def exact_kernel_chain(Q, B) -> List[int]:
    """
    dim ⋂_{j≤k} Ker(Q (Bᵀ)^j) for k = 0..n−1 in exact rational arithmetic.

    Ker √Q = Ker Q for PSD Q, so Q replaces √Q and no irrational square
    roots enter.
    """
    Qs = sympy.Matrix(np.asarray(Q, dtype=float).tolist()).applyfunc(
        lambda value: sympy.nsimplify(value, rational=True))
    Bs = sympy.Matrix(np.asarray(B, dtype=float).tolist()).applyfunc(
        lambda value: sympy.nsimplify(value, rational=True))
    n = Qs.shape[0]
    chain = []
    rows = None
    power = sympy.eye(n)
    for _ in range(n):
        block = Qs * power
        rows = block if rows is None else rows.col_join(block)
        chain.append(n - rows.rank())
        power = power * Bs.T
    return chain


def analyze_hypoellipticity(pair: MatrixPair, exact: bool = False) -> HypoellipticityReport:
    """
    Kalman status, rank and index k0 of a pair

    Args:
        pair: MatrixPair to analyse
        exact: Also compute the rational kernel chain (slow for large n)

    Returns:
        HypoellipticityReport
    """
    rtol = load_settings("flows_kalman")["rank_rtol"]
    n = pair.n
    chain = [n - _numeric_rank(_stacked_observability(pair, k), rtol) for k in range(n)]
    rank = _numeric_rank(kalman_block(pair), rtol)
    kalman_holds = rank == n
    if kalman_holds != (chain[-1] == 0):
        raise RankMismatch(f"Kalman block rank {rank} disagrees with kernel chain {chain}")
    k0 = chain.index(0) if kalman_holds else None
    exact_chain = exact_kernel_chain(pair.Q, pair.B) if exact else None
    return HypoellipticityReport(kalman_holds=kalman_holds, rank=rank, k0=k0,
                                 kernel_chain=chain, exact_chain=exact_chain)


# ============================================================================
# GRAMIAN
# ============================================================================

def sphere_points(n: int, count: int, seed: int = 0) -> np.ndarray:
    """
    Deterministic low-discrepancy points on the unit sphere modulo ±.

    Quadratic forms are even, so one hemisphere is enough: n = 2 uses
    equispaced angles on [0, π), n ≥ 3 maps a scrambled Halton sequence
    through the Gaussian quantile function.
    """
    if n == 1:
        return np.ones((1, 1))
    if n == 2:
        angles = np.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(angles), np.sin(angles)])
    sampler = qmc.Halton(d=n, scramble=True, seed=seed)
    uniform = np.clip(sampler.random(count), 1e-12, 1.0 - 1e-12)
    gaussian = norm.ppf(uniform)
    return gaussian / np.linalg.norm(gaussian, axis=1, keepdims=True)


def default_sphere_samples(n: int) -> int:
    base = load_settings("flows_kalman")["sphere_samples"]
    return int(base * 10 ** max(n - 2, 0))


def _gramian_samples(n: int, sphere_samples: Optional[int]) -> np.ndarray:
    if sphere_samples is None:
        sphere_samples = default_sphere_samples(n)
    if n > 1 and sphere_samples < MIN_SPHERE_SAMPLES:
        raise ValueError(f"Gramian infima need at least {MIN_SPHERE_SAMPLES} sphere samples, "
                         f"got {sphere_samples}")
    return sphere_points(n, sphere_samples)


def sphere_infimum(W: np.ndarray, samples: np.ndarray, refine_steps: int = 20) -> Tuple[float, np.ndarray]:
    """
    inf over |ξ| = 1 of ξᵀWξ: sample minimum followed by Rayleigh-quotient
    iteration started at the best sample. Ties resolve to the lowest index.
    """
    values = np.einsum('ij,jk,ik->i', samples, W, samples)
    index = int(np.argmin(values))
    best_value = float(values[index])
    best_xi = samples[index].copy()

    xi = best_xi.copy()
    rho = best_value
    identity = np.eye(W.shape[0])
    for _ in range(refine_steps):
        try:
            step = np.linalg.solve(W - rho * identity, xi)
        except np.linalg.LinAlgError:
            break
        size = np.linalg.norm(step)
        if not np.isfinite(size) or size == 0.0:
            break
        xi = step / size
        new_rho = float(xi @ W @ xi)
        if new_rho < best_value:
            best_value, best_xi = new_rho, xi.copy()
        if abs(new_rho - rho) <= 1e-16 * max(abs(rho), 1e-300):
            break
        rho = new_rho
    return max(best_value, 0.0), best_xi


def gramian_integrand(pair: MatrixPair) -> Callable[[np.ndarray], np.ndarray]:
    """s ↦ e^{sB} Q e^{sBᵀ}, vectorized over an array of s"""
    def integrand(s: np.ndarray) -> np.ndarray:
        out = np.empty((len(s), pair.n, pair.n))
        for i, time in enumerate(s):
            E = matrix_exponential(pair.B, float(time))
            out[i] = E @ pair.Q @ E.T
        return out
    return integrand


def gramian_matrix(pair: MatrixPair, tau: float, start: float = 0.0) -> np.ndarray:
    """∫_start^τ e^{sB} Q e^{sBᵀ} ds by adaptive Gauss-Legendre"""
    config = load_settings("flows_kalman")
    return adaptive_gauss_legendre(gramian_integrand(pair), start, tau,
                                   abs_tol=config["quad_abs_tol"],
                                   nodes=config["quad_nodes"],
                                   max_depth=config["quad_max_depth"])


def fit_power_law(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """
    Least-squares slope of log y against log x on the smallest decade of x

    Returns:
        Tuple of (slope, RMS residual of the fit)
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = x <= 10.0 * x.min() * (1 + 1e-12)
    if mask.sum() < 2:
        mask = np.zeros_like(x, dtype=bool)
        mask[:2] = True
    lx, ly = np.log(x[mask]), np.log(y[mask])
    slope, intercept = np.polyfit(lx, ly, 1)
    residual = float(np.sqrt(np.mean((ly - (slope * lx + intercept)) ** 2)))
    return float(slope), residual


def gramian_curve(pair: MatrixPair, tau_grid: Sequence[float],
                  sphere_samples: Optional[int] = None) -> GramianCurve:
    """
    τ ↦ inf_{|ξ|=1} ∫₀^τ |√Q e^{sBᵀ}ξ|² ds on a sorted positive grid

    The Gramian is accumulated panel by panel between consecutive grid
    times, so each τ costs one adaptive integration over a short interval.
    """
    taus = np.asarray(tau_grid, dtype=float)
    if taus.ndim != 1 or taus.size == 0 or np.any(taus <= 0) or np.any(np.diff(taus) <= 0):
        raise ValueError("tau_grid must be positive and strictly increasing")
    samples = _gramian_samples(pair.n, sphere_samples)

    values = np.empty_like(taus)
    minimizers = np.empty((taus.size, pair.n))
    W = np.zeros((pair.n, pair.n))
    previous = 0.0
    for i, tau in enumerate(taus):
        W = W + gramian_matrix(pair, tau, start=previous)
        previous = tau
        values[i], minimizers[i] = sphere_infimum(W, samples)

    positive = values > 0
    if positive.sum() >= 2:
        exponent, residual = fit_power_law(taus[positive], values[positive])
    else:
        exponent, residual = float("nan"), float("nan")
    return GramianCurve(tau_grid=taus, values=values, fitted_exponent=exponent,
                        residual=residual, minimizers=minimizers)


def multiscale_gramian_ratio(pair: MatrixPair, tau_grid: Sequence[float],
                             sphere_samples: Optional[int] = None) -> List[Dict]:
    """
    Compare the Gramian with Σ_{j≤k0} τ^{2j+1}|√Q(Bᵀ)^j ξ|² on the sphere

    Returns:
        List of dicts (tau, min_ratio, max_ratio); bounded ratios on a
        decade of small τ indicate the two-sided local estimate.
    """
    report = analyze_hypoellipticity(pair)
    if not report.kalman_holds:
        raise ValueError("multiscale comparison needs the Kalman condition")
    samples = _gramian_samples(pair.n, sphere_samples)

    rows = []
    W = np.zeros((pair.n, pair.n))
    previous = 0.0
    for tau in np.asarray(tau_grid, dtype=float):
        W = W + gramian_matrix(pair, tau, start=previous)
        previous = tau
        weights = np.zeros(samples.shape[0])
        power = np.eye(pair.n)
        for j in range(report.k0 + 1):
            image = samples @ (pair.sqrt_q @ power).T
            weights += tau ** (2 * j + 1) * np.sum(image ** 2, axis=1)
            power = power @ pair.B.T
        gram = np.einsum('ij,jk,ik->i', samples, W, samples)
        ratio = gram / weights
        rows.append({"tau": float(tau), "min_ratio": float(ratio.min()),
                     "max_ratio": float(ratio.max())})
    return rows


if __name__ == "__main__":
    pair = MatrixPair.example("kolmogorov")
    report = analyze_hypoellipticity(pair, exact=True)
    print(f"[OK] Kolmogorov pair: {report.to_dict()}")
    curve = gramian_curve(pair, np.logspace(-3, -1, 9))
    print(f"[OK] Gramian exponent {curve.fitted_exponent:.4f} (residual {curve.residual:.2e})")
