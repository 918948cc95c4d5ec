"""
Spectral Fields
Complex fields on the periodic box [−L, L)^n sampled at cell centers, FFT
transforms, the propagator U(T,t) as a Fourier multiplier, masked products
and derivative fields.

Conventions: x_j = −L + (j + ½)·dx with dx = 2L/N, frequencies ξ_k = πk/L
for k ∈ [−N/2, N/2) in FFT order, inner product ⟨u, v⟩ = Σ u v̄ · dxⁿ.
"""

import warnings
from dataclasses import dataclass
from functools import cached_property
from math import factorial, prod
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatch, TruncationWarning
from .settings import get_threads, load_settings
from .symbol_engine import SymbolFamily, multiplier_derivatives_grid

Indicator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GridSpec:
    n: int
    L: float
    N: int

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"grid dimension must be 1, 2 or 3, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"box half-width L must be positive, got {self.L}")
        if self.N < 16 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two ≥ 16, got {self.N}")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.n

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def xi_max(self) -> float:
        return np.pi * (self.N // 2) / self.L

    def axis(self) -> np.ndarray:
        return -self.L + (np.arange(self.N) + 0.5) * self.dx

    def frequency_axis(self) -> np.ndarray:
        return 2.0 * np.pi * sfft.fftfreq(self.N, d=self.dx)

    def points(self) -> np.ndarray:
        """Cell centers, shape (N, …, N, n)"""
        axes = np.meshgrid(*([self.axis()] * self.n), indexing='ij')
        return np.stack(axes, axis=-1)

    def frequencies(self) -> np.ndarray:
        """Frequency vectors in FFT order, shape (N, …, N, n)"""
        axes = np.meshgrid(*([self.frequency_axis()] * self.n), indexing='ij')
        return np.stack(axes, axis=-1)

    def to_dict(self):
        return {"n": self.n, "L": self.L, "N": self.N}


def _fft(values: np.ndarray) -> np.ndarray:
    return sfft.fftn(values, workers=get_threads())


def _ifft(coeffs: np.ndarray) -> np.ndarray:
    return sfft.ifftn(coeffs, workers=get_threads())


class SpectralField:
    """Immutable complex field with lazily cached Fourier coefficients"""

    def __init__(self, grid: GridSpec, values: np.ndarray, fourier: Optional[np.ndarray] = None):
        values = np.array(values, dtype=complex)
        if values.shape != grid.shape:
            raise GridMismatch(f"values of shape {values.shape} do not fit grid {grid.shape}")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        if fourier is not None:
            fourier = np.array(fourier, dtype=complex)
            fourier.setflags(write=False)
            self.__dict__["fourier"] = fourier

    @cached_property
    def fourier(self) -> np.ndarray:
        coeffs = _fft(self.values)
        coeffs.setflags(write=False)
        return coeffs

    # ------------------------------------------------------------------
    # constructors
    # ------------------------------------------------------------------
    @classmethod
    def from_fourier(cls, grid: GridSpec, coeffs: np.ndarray) -> "SpectralField":
        coeffs = np.asarray(coeffs, dtype=complex)
        return cls(grid, _ifft(coeffs), fourier=coeffs)

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable[[np.ndarray], np.ndarray]) -> "SpectralField":
        """Sample func on the cell centers; func receives points of shape (..., n)"""
        return cls(grid, func(grid.points()))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SpectralField":
        zero = np.zeros(grid.shape, dtype=complex)
        return cls(grid, zero, fourier=zero)

    @classmethod
    def fourier_mode(cls, grid: GridSpec, index: Sequence[int]) -> "SpectralField":
        """e^{iξ_k·x} for the integer frequency index k (k_j ∈ [−N/2, N/2))"""
        index = np.asarray(index, dtype=int).reshape(grid.n)
        xi = np.pi * index / grid.L
        return cls.from_function(grid, lambda x: np.exp(1j * (x @ xi)))

    @classmethod
    def gaussian(cls, grid: GridSpec, center: Sequence[float], width: float,
                 normalized: bool = False) -> "SpectralField":
        """exp(−|x − center|²/(2 width²)), optionally scaled to unit L² norm"""
        center = np.asarray(center, dtype=float).reshape(grid.n)
        field = cls.from_function(
            grid, lambda x: np.exp(-np.sum((x - center) ** 2, axis=-1) / (2.0 * width ** 2)))
        return field.scaled(1.0 / field.norm()) if normalized else field

    @classmethod
    def random(cls, grid: GridSpec, rng: np.random.Generator) -> "SpectralField":
        values = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        return cls(grid, values)

    # ------------------------------------------------------------------
    # algebra
    # ------------------------------------------------------------------
    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise GridMismatch(f"grid {other.grid} does not match {self.grid}")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.values + other.values)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.values - other.values)

    def __neg__(self) -> "SpectralField":
        return self.scaled(-1.0)

    def scaled(self, factor: complex) -> "SpectralField":
        fourier = self.__dict__.get("fourier")
        return SpectralField(self.grid, factor * self.values,
                             fourier=None if fourier is None else factor * fourier)

    def inner(self, other: "SpectralField") -> complex:
        """⟨self, other⟩ = ∫ u v̄"""
        self._check(other)
        return complex(np.vdot(other.values, self.values) * self.grid.cell_volume)

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.cell_volume)

    def norm(self) -> float:
        return float(np.sqrt(self.norm_sq()))

    def fourier_norm_sq(self) -> float:
        """Parseval side: dxⁿ/Nⁿ Σ |û_k|²"""
        total = np.sum(np.abs(self.fourier) ** 2)
        return float(total * self.grid.cell_volume / self.values.size)

    def slice_1d(self, axis: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        """Coordinates and values along one axis through the box center"""
        index = [self.grid.N // 2] * self.grid.n
        index[axis] = slice(None)
        return self.grid.axis(), self.values[tuple(index)]


# ============================================================================
# PROPAGATOR
# ============================================================================

def check_grid(g: SpectralField, grid: GridSpec):
    if g.grid != grid:
        raise GridMismatch(f"field grid {g.grid} does not match {grid}")


def _check_family(fam: SymbolFamily, grid: GridSpec):
    if fam.n != grid.n:
        raise GridMismatch(f"family dimension {fam.n} does not match grid dimension {grid.n}")


def propagator_multiplier(fam: SymbolFamily, t: float, grid: GridSpec) -> np.ndarray:
    """e^{−A_t(ξ)} sampled on the FFT-ordered frequency grid"""
    _check_family(fam, grid)
    return np.exp(-fam.a_values(t, grid.frequencies()))


def apply_multiplier(g: SpectralField, multiplier: np.ndarray) -> SpectralField:
    return SpectralField.from_fourier(g.grid, g.fourier * multiplier)


def apply_propagator(fam: SymbolFamily, t: float, g: SpectralField) -> SpectralField:
    """
    U(T,t)g: Fourier coefficients multiplied by e^{−A_t(ξ)}

    Raises:
        GridMismatch: family and field dimensions differ
    """
    if t == fam.T:
        _check_family(fam, g.grid)
        return g
    return apply_multiplier(g, propagator_multiplier(fam, t, g.grid))


def aliasing_margin(fam: SymbolFamily, t: float, grid: GridSpec) -> float:
    """min A_t(ξ) over the top third of frequencies (max-norm of the index)"""
    config = load_settings("spectral_field")
    xi = grid.frequencies()
    top = np.max(np.abs(xi), axis=-1) >= (1.0 - config["top_fraction"]) * grid.xi_max
    return float(np.min(fam.a_values(t, xi[top])))


def check_aliasing(fam: SymbolFamily, grid: GridSpec, t_earliest: float = 0.0) -> float:
    """
    Aliasing guard: warns with TruncationWarning when the propagator from
    t_earliest damps the top third of frequencies by less than e^{−30}.
    """
    margin = aliasing_margin(fam, t_earliest, grid)
    floor = load_settings("spectral_field")["aliasing_floor"]
    if margin < floor:
        warnings.warn(
            f"aliasing guard: min A over the top third of frequencies is {margin:.3g} "
            f"(< {floor:g}) at t = {t_earliest:g} on grid N={grid.N}, L={grid.L:g}",
            TruncationWarning, stacklevel=2)
    return margin


def derivative_multiplier(fam: SymbolFamily, t: float, grid: GridSpec, m: int,
                          alpha: Sequence[int]) -> np.ndarray:
    """(iξ)^α · ∂ₜ^m e^{−A_t(ξ)} on the frequency grid"""
    _check_family(fam, grid)
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != grid.n or min(alpha) < 0:
        raise ValueError(f"multi-index {alpha} does not fit dimension {grid.n}")
    max_alpha = load_settings("spectral_field")["max_alpha"]
    if sum(alpha) > max_alpha:
        raise ValueError(f"|α| = {sum(alpha)} exceeds the configured maximum {max_alpha}")
    xi = grid.frequencies()
    symbol = multiplier_derivatives_grid(fam, t, xi, m).astype(complex)
    for j, power in enumerate(alpha):
        if power:
            symbol = symbol * (1j * xi[..., j]) ** power
    return symbol


def derivative_field(fam: SymbolFamily, t: float, g: SpectralField, m: int,
                     alpha: Sequence[int]) -> SpectralField:
    """∂ₜ^m ∂ₓ^α (U(T,t) g)"""
    return apply_multiplier(g, derivative_multiplier(fam, t, g.grid, m, alpha))


def multi_factorial(alpha: Sequence[int]) -> int:
    """α! = Π α_j!"""
    return prod(factorial(int(a)) for a in alpha)


# ============================================================================
# MASKS
# ============================================================================

def indicator_values(grid: GridSpec, indicator: Indicator) -> np.ndarray:
    """Boolean mask of the indicator sampled at cell centers"""
    mask = np.asarray(indicator(grid.points()), dtype=bool)
    if mask.shape != grid.shape:
        mask = np.broadcast_to(mask, grid.shape)
    return mask


def mask_multiply(g: SpectralField, indicator) -> SpectralField:
    """Pointwise product with a {0,1} indicator (callable or boolean mask)"""
    mask = indicator if isinstance(indicator, np.ndarray) else indicator_values(g.grid, indicator)
    return SpectralField(g.grid, np.where(mask, g.values, 0.0))


def windowed_l2(g: SpectralField, indicator) -> float:
    """Riemann sum of |g|² over the indicator region (cell-centered)"""
    mask = indicator if isinstance(indicator, np.ndarray) else indicator_values(g.grid, indicator)
    return float(np.sum(np.abs(g.values[mask]) ** 2) * g.grid.cell_volume)


if __name__ == "__main__":
    from .symbol_engine import heat_family

    grid = GridSpec(n=1, L=8.0, N=256)
    g = SpectralField.gaussian(grid, [0.0], 1.0)
    fam = heat_family(1, 1.0)
    u = apply_propagator(fam, 0.0, g)
    print(f"[OK] ‖g‖ = {g.norm():.6f}, ‖U(T,0)g‖ = {u.norm():.6f}")
