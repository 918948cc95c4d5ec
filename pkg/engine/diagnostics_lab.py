"""
Diagnostics Lab
Verification experiments for the smoothing and necessity estimates:
the Gaussian necessity construction, Faà di Bruno combinatorics, the
Bernstein-type derivative audit and the good/bad cylinder classification.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from math import factorial, prod, sqrt
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.fft as sfft
from scipy.optimize import minimize

from .errors import GridMismatch, PartitionOverflow
from .flows_kalman import fit_power_law, sphere_points
from .quadrature import composite_gauss_legendre, gauss_legendre
from .settings import get_threads, load_settings
from .spectral_field import (
    GridSpec,
    SpectralField,
    derivative_field,
    indicator_values,
    multi_factorial,
    propagator_multiplier,
)
from .support_geometry import MovingSupport
from .symbol_engine import (
    SymbolFamily,
    analyticity_constant,
    bernstein_constant,
    ellipticity_probe,
    multiplier_derivatives_grid,
)


# ============================================================================
# GAUSSIAN PROBE
# ============================================================================

@dataclass
class GaussianProbe:
    """
    g_l(x) = l^{−n} exp(−|x − x0|²/(2l²)), built from its transform
    ĝ_l(ξ) = (2π)^{n/2} exp(−i x0·ξ − l²|ξ|²/2)
    """
    x0: np.ndarray
    l: float

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if not self.l > 0:
            raise ValueError(f"probe width must be positive, got {self.l}")

    @property
    def n(self) -> int:
        return self.x0.size

    def transform(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        phase = xi @ self.x0
        return (2.0 * np.pi) ** (self.n / 2.0) * np.exp(
            -1j * phase - 0.5 * self.l ** 2 * np.sum(xi * xi, axis=-1))

    def norm_sq(self) -> float:
        """‖g_l‖² = (π/l²)^{n/2}"""
        return (np.pi / self.l ** 2) ** (self.n / 2.0)

    def coefficients(self, grid: GridSpec) -> np.ndarray:
        """DFT coefficients of the sampled probe, ĝ(ξ_k)e^{iξ_k·x_first}/dxⁿ"""
        if grid.n != self.n:
            raise GridMismatch(f"probe dimension {self.n} does not match grid dimension {grid.n}")
        xi = grid.frequencies()
        first = np.full(self.n, grid.axis()[0])
        return self.transform(xi) * np.exp(1j * (xi @ first)) / grid.cell_volume

    def field(self, grid: GridSpec) -> SpectralField:
        return SpectralField.from_fourier(grid, self.coefficients(grid))


def _ball_mask(grid: GridSpec, center: np.ndarray, r: float) -> np.ndarray:
    """|x − center| ≤ r in the minimum-image metric of the periodic box"""
    offset = grid.points() - center
    period = 2.0 * grid.L
    offset -= period * np.round(offset / period)
    return np.sum(offset * offset, axis=-1) <= r * r


# ============================================================================
# NECESSITY
# ============================================================================

@dataclass
class NecessityReport:
    table: pd.DataFrame
    delta: float
    delta_spread: float
    norm_sq: float
    margin: Optional[float]
    decay_ratio: float
    window_monotone: bool

    def summary(self) -> Dict:
        return {"delta": self.delta, "delta_spread": self.delta_spread, "probe_norm_sq": self.norm_sq,
                "margin": self.margin, "decay_ratio": self.decay_ratio,
                "window_monotone": self.window_monotone}


def necessity_experiment(fam: SymbolFamily, sup: MovingSupport, grid: GridSpec, l: float,
                         r: float, center_schedule: Sequence, epsilon: Optional[float] = None,
                         time_nodes: Optional[int] = None) -> NecessityReport:
    """
    Gaussian probes along a center schedule: δ_l = ‖U(T,0)g_l‖², the
    observed energy inside ω(t) ∩ B(x0, r) and the energy outside B(x0, r)

    Args:
        fam: Symbol family
        sup: Moving support on the same horizon
        grid: Periodic grid
        l: Probe width
        r: Window radius
        center_schedule: Probe centers x0
        epsilon: When given, the margin δ_l − ε‖g_l‖² is reported
        time_nodes: Composite Gauss-Legendre nodes on [0, T]

    Returns:
        NecessityReport
    """
    config = load_settings("hum_synthesizer")
    time_nodes = time_nodes or config["time_nodes"]
    if fam.n != grid.n or sup.n != grid.n:
        raise GridMismatch("family, support and grid dimensions disagree")
    nodes, weights = composite_gauss_legendre(0.0, fam.T, time_nodes, config["panel_nodes"])
    multipliers = [propagator_multiplier(fam, t, grid) for t in nodes]
    support_masks = [indicator_values(grid, sup.indicator_at(t)) for t in nodes]
    initial = propagator_multiplier(fam, 0.0, grid)
    volume = grid.cell_volume
    size = np.prod(grid.shape)
    threads = get_threads()

    rows = []
    for center in center_schedule:
        probe = GaussianProbe(center, l)
        coeffs = probe.coefficients(grid)
        delta = float(np.sum(np.abs(initial * coeffs) ** 2) * volume / size)
        ball = _ball_mask(grid, probe.x0, r)
        window = tail = total = 0.0
        for weight, multiplier, mask in zip(weights, multipliers, support_masks):
            density = np.abs(sfft.ifftn(multiplier * coeffs, workers=threads)) ** 2 * volume
            window += weight * float(np.sum(density[mask & ball]))
            tail += weight * float(np.sum(density[~ball]))
            total += weight * float(np.sum(density))
        row = {f"x{j}": float(v) for j, v in enumerate(probe.x0)}
        row.update({"delta": delta, "window_energy": window, "tail_energy": tail,
                    "total_energy": total})
        rows.append(row)

    table = pd.DataFrame(rows)
    deltas = table["delta"].to_numpy()
    windows = table["window_energy"].to_numpy()
    norm_sq = GaussianProbe(np.zeros(grid.n), l).norm_sq()
    return NecessityReport(
        table=table,
        delta=float(deltas.mean()),
        delta_spread=float((deltas.max() - deltas.min()) / deltas.mean()) if deltas.mean() > 0 else 0.0,
        norm_sq=norm_sq,
        margin=None if epsilon is None else float(deltas.mean() - epsilon * norm_sq),
        decay_ratio=float(windows[-1] / windows[0]) if windows[0] > 0 else 0.0,
        window_monotone=bool(np.all(np.diff(windows) <= 1e-12 * max(windows.max(), 1e-300))),
    )


def necessity_sweep(fam: SymbolFamily, sup: MovingSupport, grid: GridSpec, widths: Sequence[float],
                    r: float, center_schedule: Sequence, epsilon: Optional[float] = None) -> pd.DataFrame:
    """necessity_experiment over several probe widths"""
    rows = []
    for width in widths:
        report = necessity_experiment(fam, sup, grid, width, r, center_schedule, epsilon=epsilon)
        rows.append({"l": float(width), **report.summary()})
    return pd.DataFrame(rows)


# ============================================================================
# FAA DI BRUNO
# ============================================================================

def _descending_partitions(total: int, largest: int) -> Iterator[List[int]]:
    if total == 0:
        yield []
        return
    for part in range(min(total, largest), 0, -1):
        for rest in _descending_partitions(total - part, part):
            yield [part] + rest


def partitions_with_multiplicities(m: int) -> Iterator[Tuple[int, ...]]:
    """All (l₁, …, l_m) with Σ j·l_j = m"""
    if m < 1:
        raise ValueError(f"partition order must be ≥ 1, got {m}")
    limit = load_settings("diagnostics_lab")["max_partition_order"]
    if m > limit:
        raise PartitionOverflow(f"partition enumeration supports m ≤ {limit}, requested {m}")
    for parts in _descending_partitions(m, m):
        multiplicities = [0] * m
        for part in parts:
            multiplicities[part - 1] += 1
        yield tuple(multiplicities)


def faa_di_bruno_sum(m: int, a) -> Fraction:
    """Σ a^{l₁+…+l_m} / Π j^{l_j} l_j! over all partitions, in exact arithmetic"""
    a = Fraction(a)
    total = Fraction(0)
    for multiplicities in partitions_with_multiplicities(m):
        denominator = 1
        for j, count in enumerate(multiplicities, start=1):
            denominator *= j ** count * factorial(count)
        total += a ** sum(multiplicities) / denominator
    return total


def rising_factorial_ratio(m: int, a) -> Fraction:
    """(1/m!)·Π_{j<m}(a + j)"""
    a = Fraction(a)
    return prod((a + j for j in range(m)), start=Fraction(1)) / factorial(m)


def faa_di_bruno_derivative(derivs: Sequence, m: int, value=1.0):
    """
    ∂ₜ^m e^{f} = e^{f}·Σ m!/Π(l_j!(j!)^{l_j}) Π (f^{(j)})^{l_j}

    Args:
        derivs: f', f'', …, f^{(m)} (scalars or arrays)
        m: Derivative order
        value: e^{f}
    """
    if m == 0:
        return value
    if len(derivs) < m:
        raise ValueError(f"need {m} derivatives, got {len(derivs)}")
    total = 0.0
    for multiplicities in partitions_with_multiplicities(m):
        coefficient = factorial(m)
        term = 1.0
        for j, count in enumerate(multiplicities, start=1):
            if count:
                coefficient //= factorial(count) * factorial(j) ** count
                term = term * np.asarray(derivs[j - 1]) ** count
        total = total + coefficient * term
    return value * total


# ============================================================================
# BERNSTEIN AUDIT
# ============================================================================

def multi_indices(n: int, max_order: int) -> List[Tuple[int, ...]]:
    """Multi-indices α ∈ Nⁿ with |α| ≤ max_order, graded order"""
    indices = [alpha for alpha in product(range(max_order + 1), repeat=n) if sum(alpha) <= max_order]
    return sorted(indices, key=lambda alpha: (sum(alpha), tuple(-a for a in alpha)))


def _log_multiplier(fam: SymbolFamily, t: float, xi: np.ndarray, m: int,
                    alpha: Tuple[int, ...]) -> np.ndarray:
    """log |ξ^α ∂ₜ^m e^{−A_t(ξ)}|, −inf where it vanishes"""
    values = np.abs(multiplier_derivatives_grid(fam, t, xi, m))
    for j, power in enumerate(alpha):
        if power:
            values = values * np.abs(xi[..., j]) ** power
    with np.errstate(divide="ignore"):
        return np.log(values)


def multiplier_sup(fam: SymbolFamily, t: float, m: int, alpha: Sequence[int],
                   directions: Optional[int] = None, radii: Optional[int] = None) -> float:
    """
    sup over ξ ∈ Rⁿ of |ξ^α ∂ₜ^m e^{−A_t(ξ)}|: direction × log-radius
    sampling refined with Nelder-Mead
    """
    config = load_settings("diagnostics_lab")
    alpha = tuple(int(a) for a in alpha)
    if m == 0 and sum(alpha) == 0:
        return 1.0
    directions = sphere_points(fam.n, directions or config["sup_directions"])
    scales = np.logspace(-2.0, 4.0, radii or config["sup_radii"])
    xi = directions[:, None, :] * scales[None, :, None]
    logs = _log_multiplier(fam, t, xi.reshape(-1, fam.n), m, alpha)
    start = xi.reshape(-1, fam.n)[int(np.argmax(logs))]
    best = float(np.max(logs))

    def objective(point):
        value = float(_log_multiplier(fam, t, point.reshape(1, fam.n), m, alpha)[0])
        return -value if np.isfinite(value) else 1e300

    result = minimize(objective, start, method="Nelder-Mead",
                      options={"xatol": 1e-8 * max(1.0, float(np.max(np.abs(start)))),
                               "fatol": 1e-11, "maxiter": 2000})
    if np.isfinite(result.fun) and -result.fun > best:
        best = -result.fun
    return float(np.exp(best))


@dataclass
class BernsteinReport:
    table: pd.DataFrame
    slopes: pd.DataFrame
    k: int
    k_hat: float
    c0_hat: float
    c0_operator: float
    max_normalized_slope: float
    slope_ok: bool

    def summary(self) -> Dict:
        return {"k": self.k, "k_hat": self.k_hat, "c0_hat": self.c0_hat,
                "c0_operator": self.c0_operator,
                "max_normalized_slope": self.max_normalized_slope, "slope_ok": self.slope_ok}


def bernstein_audit(fam: SymbolFamily, g: SpectralField, t_schedule: Sequence[float], m_max: int,
                    alpha_max: int, k: Optional[int] = None) -> BernsteinReport:
    """
    Audit ‖∂ₜ^m ∂ₓ^α U(T,t)g‖ against m!·√α!·(T−t)^{−k(2m+|α|)/2}

    Each row holds the field norm, ρ = norm·(T−t)^{k(2m+|α|)/2}/(m!√α!‖g‖),
    its (m+|α|)-th root, and the same quantities for the operator norm
    (the multiplier sup over continuous ξ). The exponent slope of the
    operator norm in log(1/(T−t)), divided by 2m+|α|, must peak at k/2.

    Raises:
        DerivOrderUnavailable: the family cannot supply order m_max
    """
    if m_max > 6 or alpha_max > 6:
        raise ValueError("bernstein_audit supports m ≤ 6 and |α| ≤ 6")
    fam.check_order(m_max)
    times = np.asarray(t_schedule, dtype=float)
    if np.any(times < 0) or np.any(times >= fam.T):
        raise ValueError(f"audit times must lie in [0, {fam.T})")
    _, k_hat = ellipticity_probe(fam)
    k = int(round(k_hat)) if k is None else int(k)
    g_norm = g.norm()

    rows = []
    for t in times:
        gap = fam.T - t
        for m in range(m_max + 1):
            for alpha in multi_indices(fam.n, alpha_max):
                order = m + sum(alpha)
                weight = 2 * m + sum(alpha)
                scale = gap ** (0.5 * k * weight) / (factorial(m) * sqrt(multi_factorial(alpha)))
                norm = derivative_field(fam, float(t), g, m, alpha).norm()
                operator = multiplier_sup(fam, float(t), m, alpha)
                ratio = norm * scale / g_norm if g_norm > 0 else 0.0
                op_ratio = operator * scale
                rows.append({
                    "t": float(t), "m": m, "alpha": "-".join(str(a) for a in alpha),
                    "order": order, "weight": weight, "norm": norm, "ratio": ratio,
                    "ratio_root": ratio ** (1.0 / order) if order else ratio,
                    "operator_norm": operator, "operator_ratio": op_ratio,
                    "operator_root": op_ratio ** (1.0 / order) if order else op_ratio,
                })
    table = pd.DataFrame(rows)

    slope_rows = []
    if len(times) >= 2:
        for (m, alpha), group in table[table["weight"] > 0].groupby(["m", "alpha"], sort=False):
            gaps = fam.T - group["t"].to_numpy()
            slope, residual = fit_power_law(gaps, group["operator_norm"].to_numpy())
            weight = int(group["weight"].iloc[0])
            slope_rows.append({"m": m, "alpha": alpha, "weight": weight, "slope": -slope,
                               "normalized_slope": -slope / weight, "fit_residual": residual})
    slopes = pd.DataFrame(slope_rows)
    positive = table[table["order"] > 0]
    c0_hat = float(positive["ratio_root"].max()) if len(positive) else 0.0
    c0_operator = float(positive["operator_root"].max()) if len(positive) else 0.0
    max_slope = float(slopes["normalized_slope"].max()) if len(slopes) else float("nan")
    slope_ok = bool(abs(max_slope - 0.5 * k) <= 0.05 * 0.5 * k) if len(slopes) else False
    return BernsteinReport(table=table, slopes=slopes, k=k, k_hat=float(k_hat), c0_hat=c0_hat,
                           c0_operator=c0_operator, max_normalized_slope=max_slope,
                           slope_ok=slope_ok)


# ============================================================================
# CYLINDERS
# ============================================================================

GOOD = "Good"
BAD = "Bad"


@dataclass
class CylinderReport:
    beta: np.ndarray
    classification: str
    bound_ratio: float
    energy: float
    witness: Optional[Tuple[int, Tuple[int, ...]]] = None

    def to_row(self) -> Dict:
        row = {f"beta{j}": float(v) for j, v in enumerate(self.beta)}
        row.update({"classification": self.classification, "bound_ratio": self.bound_ratio,
                    "energy": self.energy,
                    "witness_m": None if self.witness is None else self.witness[0],
                    "witness_alpha": None if self.witness is None
                    else "-".join(str(a) for a in self.witness[1])})
        return row


@dataclass
class CylinderClassification:
    reports: List[CylinderReport]
    T_gamma: float
    constants: Dict
    good_energy: float
    bad_energy: float
    energy_bound: float
    caps: Dict = field(default_factory=dict)

    @property
    def bound_holds(self) -> bool:
        return self.bad_energy <= self.energy_bound

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([report.to_row() for report in self.reports])

    def summary(self) -> Dict:
        counts = {GOOD: 0, BAD: 0}
        for report in self.reports:
            counts[report.classification] += 1
        return {"T_gamma": self.T_gamma, "good": counts[GOOD], "bad": counts[BAD],
                "good_energy": self.good_energy, "bad_energy": self.bad_energy,
                "energy_bound": self.energy_bound, "bound_holds": self.bound_holds,
                "constants": self.constants, "caps": self.caps}


def measure_bernstein_constants(fam: SymbolFamily, times: Sequence[float], m_cap: int,
                                alpha_cap: int) -> Dict:
    """
    Empirical (ĉ, k, ŝ, Ĉ_T, ĉ₀) with ĉ₀ the smallest c making
    sup_ξ|ξ^α ∂ₜ^m e^{−A_t}| ≤ c^{m+|α|}(Ĉ_T/(T−t))^{k(2m+|α|)/2} m!√α! on the nodes
    """
    c_hat, k_hat = ellipticity_probe(fam)
    k = int(round(k_hat))
    s_hat = analyticity_constant(fam)
    C_T = bernstein_constant(fam.T, s_hat, c_hat)
    c0 = 0.0
    for t in times:
        gap = fam.T - t
        for m in range(m_cap + 1):
            for alpha in multi_indices(fam.n, alpha_cap):
                order = m + sum(alpha)
                if order == 0:
                    continue
                operator = multiplier_sup(fam, float(t), m, alpha)
                scaled = operator * (gap / C_T) ** (0.5 * k * (2 * m + sum(alpha)))
                scaled /= factorial(m) * sqrt(multi_factorial(alpha))
                c0 = max(c0, scaled ** (1.0 / order))
    return {"c_hat": float(c_hat), "k_hat": float(k_hat), "k": k, "s_hat": float(s_hat),
            "C_T": float(C_T), "c0_hat": float(c0), "measured": ["c_hat", "k", "s_hat", "c0_hat"]}


def classify_cylinders(fam: SymbolFamily, gamma: float, epsilon: float, g: SpectralField, r: float,
                       beta_window: Sequence, m_cap: Optional[int] = None,
                       alpha_cap: Optional[int] = None, time_nodes: int = 16,
                       constants: Optional[Dict] = None) -> CylinderClassification:
    """
    Good/bad classification of cylinders C(β) = [0, T_γ] × B(β, r)

    A cylinder is Good when every tested (m, α) satisfies
    ‖∂ₜ^m∂ₓ^α Ug‖_{C(β)} ≤ (3√(2T_γ)/√ε)·c₀^{m+|α|}·(4C_T/(γT))^{k(2m+|α|)/2}·m!·√(|α|!)·‖Ug‖_{C(β)}
    with the constants measured by measure_bernstein_constants unless given.
    The bad cylinders' energy is compared with ε‖g‖².

    Returns:
        CylinderClassification
    """
    config = load_settings("diagnostics_lab")
    m_cap = config["m_cap"] if m_cap is None else m_cap
    alpha_cap = config["alpha_cap"] if alpha_cap is None else alpha_cap
    if m_cap > 4 or alpha_cap > 4:
        raise ValueError("cylinder caps must not exceed 4")
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    grid = g.grid
    T_gamma = (1.0 - 0.5 * gamma) * fam.T
    nodes, weights = gauss_legendre(0.0, T_gamma, time_nodes)
    if constants is None:
        constants = measure_bernstein_constants(fam, nodes, m_cap, alpha_cap)
    k, c0, C_T = constants["k"], constants["c0_hat"], constants["C_T"]

    betas = [np.atleast_1d(np.asarray(beta, dtype=float)) for beta in beta_window]
    balls = [_ball_mask(grid, beta, r) for beta in betas]
    prefactor = 3.0 * sqrt(2.0 * T_gamma) / sqrt(epsilon)
    growth = 4.0 * C_T / (gamma * fam.T)

    energies: Dict[Tuple[int, Tuple[int, ...]], np.ndarray] = {}
    for m in range(m_cap + 1):
        for alpha in multi_indices(grid.n, alpha_cap):
            per_cylinder = np.zeros(len(betas))
            for t, w in zip(nodes, weights):
                density = np.abs(derivative_field(fam, float(t), g, m, alpha).values) ** 2
                per_cylinder += w * np.array([np.sum(density[ball]) for ball in balls]) * grid.cell_volume
            energies[(m, alpha)] = per_cylinder

    base = energies[(0, (0,) * grid.n)]
    reports = []
    for index, beta in enumerate(betas):
        base_norm = sqrt(base[index])
        worst, witness = 0.0, None
        for (m, alpha), values in energies.items():
            if m == 0 and sum(alpha) == 0:
                continue
            order = m + sum(alpha)
            rhs = (prefactor * c0 ** order * growth ** (0.5 * k * (2 * m + sum(alpha)))
                   * factorial(m) * sqrt(factorial(sum(alpha))) * base_norm)
            lhs = sqrt(values[index])
            if lhs == 0.0:
                ratio = 0.0
            elif rhs == 0.0:
                ratio = float("inf")
            else:
                ratio = lhs / rhs
            if ratio > worst:
                worst, witness = ratio, (m, alpha)
        bad = worst > 1.0
        reports.append(CylinderReport(beta=beta, classification=BAD if bad else GOOD,
                                      bound_ratio=float(worst), energy=float(base[index]),
                                      witness=witness if bad else None))

    good_energy = float(sum(rep.energy for rep in reports if rep.classification == GOOD))
    bad_energy = float(sum(rep.energy for rep in reports if rep.classification == BAD))
    return CylinderClassification(reports=reports, T_gamma=T_gamma, constants=constants,
                                  good_energy=good_energy, bad_energy=bad_energy,
                                  energy_bound=float(epsilon * g.norm_sq()),
                                  caps={"m_cap": m_cap, "alpha_cap": alpha_cap,
                                        "time_nodes": time_nodes})


if __name__ == "__main__":
    for order in range(1, 6):
        assert faa_di_bruno_sum(order, 3) == rising_factorial_ratio(order, 3)
    print("[OK] Faà di Bruno identity holds for m ≤ 5, a = 3")
