"""
Support Geometry
Moving control supports ω(t), flow actions, and the integral-thickness
functional (1/T)∫₀ᵀ Leb(ω(t) ∩ B(x,r)) dt estimated by stratified Monte Carlo.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union as TypingUnion

import numpy as np
import pandas as pd
from scipy.special import gamma as gamma_function

from .errors import NonMonotoneScenario
from .flows_kalman import FlowMap, flow_of
from .settings import get_threads, load_settings

FIXED = "Fixed"
FLOW_PUSHFORWARD = "FlowPushforward"
DILATING = "Dilating"
EXPLICIT_FAMILY = "ExplicitFamily"

TRANSLATION_B = [[0.0, 1.0], [0.0, 0.0]]
ROTATION_B = [[0.0, 1.0], [-1.0, 0.0]]


# ============================================================================
# REGIONS (time-independent predicates with exact membership)
# ============================================================================

class Region:
    """Predicate on Rⁿ; contains() takes points of shape (..., n)"""

    n: int = 0

    def contains(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.contains(points)

    def __or__(self, other: "Region") -> "Region":
        return Union([self, other])

    def __and__(self, other: "Region") -> "Region":
        return Intersection([self, other])

    def __invert__(self) -> "Region":
        return Complement(self)

    def translated(self, offset) -> "Region":
        return Translated(self, offset)


class Everywhere(Region):
    def __init__(self, n: int):
        self.n = n

    def contains(self, points):
        return np.ones(np.shape(points)[:-1], dtype=bool)


class Nowhere(Region):
    def __init__(self, n: int):
        self.n = n

    def contains(self, points):
        return np.zeros(np.shape(points)[:-1], dtype=bool)


class HalfSpace(Region):
    """{x : normal·x ≥ offset}"""

    def __init__(self, normal: Sequence[float], offset: float = 0.0):
        self.normal = np.asarray(normal, dtype=float)
        self.offset = float(offset)
        self.n = self.normal.size

    def contains(self, points):
        return np.asarray(points) @ self.normal >= self.offset


class Ball(Region):
    def __init__(self, center: Sequence[float], radius: float):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.n = self.center.size

    def contains(self, points):
        diff = np.asarray(points) - self.center
        return np.sum(diff * diff, axis=-1) <= self.radius ** 2


class SlopeCone(Region):
    """Planar double cone {(x, αx) : slope_min < α < slope_max, x ≠ 0}"""

    n = 2

    def __init__(self, slope_min: float, slope_max: float):
        if not slope_min < slope_max:
            raise ValueError("slope_min must be smaller than slope_max")
        self.slope_min = float(slope_min)
        self.slope_max = float(slope_max)

    def contains(self, points):
        points = np.asarray(points)
        x, v = points[..., 0], points[..., 1]
        sign = np.sign(x)
        return (sign != 0) & ((v - self.slope_min * x) * sign > 0) & ((self.slope_max * x - v) * sign > 0)


class IntervalUnion(Region):
    """Finite union of closed intervals on the line"""

    n = 1

    def __init__(self, intervals: Sequence[Tuple[float, float]]):
        self.intervals = [(float(lo), float(hi)) for lo, hi in intervals]

    def contains(self, points):
        x = np.asarray(points)[..., 0]
        inside = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.intervals:
            inside |= (x >= lo) & (x <= hi)
        return inside


class PeriodicIntervals(Region):
    """{x : (x − phase) mod period < width} on the line"""

    n = 1

    def __init__(self, period: float, width: float, phase: float = 0.0):
        if not 0 < width <= period:
            raise ValueError("need 0 < width ≤ period")
        self.period = float(period)
        self.width = float(width)
        self.phase = float(phase)

    def contains(self, points):
        x = np.asarray(points)[..., 0]
        return np.mod(x - self.phase, self.period) < self.width


class SquareRootIntervals(Region):
    """[−1, 1] ∪ ⋃_{k≥1} (k², k²+k) ∪ (−k²−k, −k²)"""

    n = 1

    def contains(self, points):
        x = np.abs(np.asarray(points)[..., 0])
        k = np.floor(np.sqrt(x))
        # floor(sqrt) can land one off for large perfect squares
        k = np.where(k * k > x, k - 1, k)
        k = np.where((k + 1) * (k + 1) <= x, k + 1, k)
        return (x <= 1.0) | ((k >= 1) & (x > k * k) & (x < k * k + k))


class Union(Region):
    def __init__(self, parts: Sequence[Region]):
        self.parts = list(parts)
        self.n = self.parts[0].n

    def contains(self, points):
        result = self.parts[0].contains(points)
        for part in self.parts[1:]:
            result = result | part.contains(points)
        return result


class Intersection(Region):
    def __init__(self, parts: Sequence[Region]):
        self.parts = list(parts)
        self.n = self.parts[0].n

    def contains(self, points):
        result = self.parts[0].contains(points)
        for part in self.parts[1:]:
            result = result & part.contains(points)
        return result


class Complement(Region):
    def __init__(self, part: Region):
        self.part = part
        self.n = part.n

    def contains(self, points):
        return ~self.part.contains(points)


class Translated(Region):
    """base + offset"""

    def __init__(self, base: Region, offset: Sequence[float]):
        self.base = base
        self.offset = np.asarray(offset, dtype=float)
        self.n = base.n

    def contains(self, points):
        return self.base.contains(np.asarray(points) - self.offset)


# ============================================================================
# MOVING SUPPORTS
# ============================================================================

@dataclass(eq=False)
class MovingSupport:
    """
    Time-indexed family ω(t), t ∈ [0, T]

    FlowPushforward: ω(t) = e^{(T−t)B} ω (reversed: e^{tB} ω), membership
    evaluated as base(e^{−τB} x).
    Dilating: ω(t) = √(1+2μt) ω.
    ExplicitFamily: member(t, points) supplied directly.
    """
    kind: str
    T: float
    n: int
    base: Optional[Region] = None
    B: Optional[np.ndarray] = None
    reversed: bool = False
    mu: Optional[float] = None
    member: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    label: str = ""
    _flow: Optional[FlowMap] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"support horizon T must be positive, got {self.T}")
        if self.kind == FLOW_PUSHFORWARD:
            self.B = np.asarray(self.B, dtype=float)
            self._flow = flow_of(-self.B)
        if self.kind == DILATING and not (self.mu is not None and self.mu > 0):
            raise ValueError("dilating support needs μ > 0")

    def flow_time(self, t: float) -> float:
        return t if self.reversed else self.T - t

    def _contains_at(self, t: float, points: np.ndarray) -> np.ndarray:
        if self.kind == FIXED:
            return self.base.contains(points)
        if self.kind == FLOW_PUSHFORWARD:
            inverse = self._flow(self.flow_time(t))
            return self.base.contains(points @ inverse.T)
        if self.kind == DILATING:
            return self.base.contains(points / np.sqrt(1.0 + 2.0 * self.mu * t))
        return np.asarray(self.member(t, points), dtype=bool)

    def contains(self, t, points: np.ndarray) -> np.ndarray:
        """
        Membership of points (shape (..., n)) in ω(t); t is a scalar or an
        array matching points.shape[:-1]
        """
        points = np.asarray(points, dtype=float)
        if np.ndim(t) == 0:
            return self._contains_at(float(t), points)
        times = np.broadcast_to(np.asarray(t, dtype=float), points.shape[:-1])
        flat_times = times.reshape(-1)
        flat_points = points.reshape(-1, points.shape[-1])
        result = np.zeros(flat_times.shape, dtype=bool)
        unique, inverse = np.unique(flat_times, return_inverse=True)
        for index, value in enumerate(unique):
            rows = inverse == index
            result[rows] = self._contains_at(float(value), flat_points[rows])
        return result.reshape(points.shape[:-1])

    def indicator_at(self, t: float) -> Callable[[np.ndarray], np.ndarray]:
        """Spatial predicate x ↦ 1_{ω(t)}(x)"""
        return lambda points: self.contains(t, points)

    def with_horizon(self, T: float) -> "MovingSupport":
        return MovingSupport(kind=self.kind, T=T, n=self.n, base=self.base, B=self.B,
                             reversed=self.reversed, mu=self.mu, member=self.member,
                             label=self.label)

    def describe(self) -> Dict:
        info = {"kind": self.kind, "T": self.T, "n": self.n, "label": self.label}
        if self.kind == FLOW_PUSHFORWARD:
            info["B"] = self.B.tolist()
            info["reversed"] = self.reversed
        if self.kind == DILATING:
            info["mu"] = self.mu
        return info


def fixed_support(region: Region, T: float, label: str = "") -> MovingSupport:
    return MovingSupport(kind=FIXED, T=T, n=region.n, base=region, label=label or "fixed")


def flow_support(region: Region, B, T: float, reversed: bool = False,
                 label: str = "") -> MovingSupport:
    return MovingSupport(kind=FLOW_PUSHFORWARD, T=T, n=region.n, base=region, B=B,
                         reversed=reversed, label=label or "flow")


def dilating_support(region: Region, mu: float, T: float, label: str = "") -> MovingSupport:
    return MovingSupport(kind=DILATING, T=T, n=region.n, base=region, mu=mu,
                         label=label or "dilating")


def explicit_support(member: Callable, n: int, T: float, label: str = "") -> MovingSupport:
    return MovingSupport(kind=EXPLICIT_FAMILY, T=T, n=n, member=member, label=label or "explicit")


def translation_cone_support(theta0: float, T: float) -> MovingSupport:
    """Kolmogorov flow of the cone {(x, αx) : |α| < tan θ₀}"""
    slope = np.tan(theta0)
    return flow_support(SlopeCone(-slope, slope), TRANSLATION_B, T, label="translation cone")


def rotation_cone_support(theta0: float, T: float) -> MovingSupport:
    """Rotation flow of the cone {(x, αx) : 0 < α < tan θ₀}"""
    return flow_support(SlopeCone(0.0, np.tan(theta0)), ROTATION_B, T, label="rotation cone")


def dilating_example_support(mu: float, T: float) -> MovingSupport:
    return dilating_support(SquareRootIntervals(), mu, T, label="dilating square-root intervals")


def translation_escape_centers(T: float, theta0: float,
                               distances: Sequence[float] = (250.0, 500.0, 1000.0)) -> List[np.ndarray]:
    """
    Far points along the direction whose inverse slope x/v = T/2 stays in
    the uncovered band [τ − 1/tan θ₀, τ + 1/tan θ₀] longest
    """
    c = 0.5 * T
    direction = np.array([c, 1.0]) / np.hypot(c, 1.0)
    centers = [np.zeros(2)]
    centers += [d * direction for d in distances]
    return centers


def rotation_escape_centers(theta0: float, count: int = 40, stride: float = 1.0) -> List[np.ndarray]:
    """(m, m tan θ₀) for m = stride, 2·stride, …"""
    slope = np.tan(theta0)
    return [np.array([m * stride, m * stride * slope]) for m in range(1, count + 1)]


# ============================================================================
# THICKNESS
# ============================================================================

def ball_volume(n: int, r: float) -> float:
    """V_r = π^{n/2} rⁿ / Γ(n/2 + 1)"""
    return float(np.pi ** (n / 2.0) * r ** n / gamma_function(n / 2.0 + 1.0))


def ball_offsets(rng: np.random.Generator, n: int, r: float, count: int) -> np.ndarray:
    """Uniform points of B(0, r) by the polar method"""
    directions = rng.standard_normal((count, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = r * rng.random(count) ** (1.0 / n)
    return directions * radii[:, None]


@dataclass
class ThicknessEstimate:
    x: np.ndarray
    r: float
    value: float
    std_err: float
    samples: int
    seed: int
    t_range: Tuple[float, float] = (0.0, 0.0)

    def integral(self, n: int) -> float:
        """Unnormalized ∫ Leb(ω(t) ∩ B(x,r)) dt over t_range"""
        return self.value * (self.t_range[1] - self.t_range[0]) * ball_volume(n, self.r)

    def to_row(self) -> Dict:
        row = {f"x{j}": float(v) for j, v in enumerate(np.atleast_1d(self.x))}
        row.update({"r": self.r, "value": self.value, "std_err": self.std_err,
                    "samples": self.samples, "seed": self.seed})
        return row


@dataclass
class ThicknessProfile:
    estimates: List[ThicknessEstimate]

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.estimates])

    @property
    def minimum(self) -> float:
        return float(self.values.min())

    @property
    def argmin(self) -> np.ndarray:
        return self.estimates[int(np.argmin(self.values))].x

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([e.to_row() for e in self.estimates])


def thickness_at(sup: MovingSupport, x, r: float, samples: int, seed: int,
                 t_range: Optional[Tuple[float, float]] = None) -> ThicknessEstimate:
    """
    Stratified Monte Carlo estimate of (1/|I|)∫_I Leb(ω(t) ∩ B(x,r)) dt / V_r

    Time is split into equal strata with one uniform time per stratum; the
    ball points are drawn center-relative, so the estimate for (ω, x) and
    (ω − x, 0) uses identical draws.

    Args:
        sup: Moving support
        x: Ball center
        r: Radius (> 0)
        samples: Total sample count (≥ the configured minimum)
        seed: Integer seed
        t_range: Time window, [0, T] by default

    Returns:
        ThicknessEstimate
    """
    config = load_settings("support_geometry")
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    if samples < config["min_samples"]:
        raise ValueError(f"need at least {config['min_samples']} samples, got {samples}")
    x = np.asarray(x, dtype=float).reshape(sup.n)
    t0, t1 = t_range if t_range is not None else (0.0, sup.T)

    strata = min(config["time_strata"], samples)
    per_stratum = samples // strata
    rng = np.random.default_rng(seed)
    edges = np.linspace(t0, t1, strata + 1)
    times = edges[:-1] + np.diff(edges) * rng.random(strata)
    points = x + ball_offsets(rng, sup.n, r, strata * per_stratum)

    inside = sup.contains(np.repeat(times, per_stratum), points)
    fractions = inside.reshape(strata, per_stratum).mean(axis=1)
    value = float(fractions.mean())
    variance = float(np.sum(fractions * (1.0 - fractions) / per_stratum)) / strata ** 2
    return ThicknessEstimate(x=x, r=float(r), value=value, std_err=float(np.sqrt(variance)),
                             samples=strata * per_stratum, seed=int(seed), t_range=(t0, t1))


def center_seeds(seed: int, count: int) -> List[int]:
    """Per-center integer sub-seeds, independent of evaluation order"""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


def thickness_profile(sup: MovingSupport, r: float, centers: Sequence, samples: int,
                      seed: int, t_range: Optional[Tuple[float, float]] = None) -> ThicknessProfile:
    """thickness_at over a center list with deterministic sub-seeds"""
    centers = [np.asarray(c, dtype=float) for c in centers]
    if not centers:
        raise ValueError("center list must not be empty")
    seeds = center_seeds(seed, len(centers))
    jobs = list(zip(centers, seeds))

    def estimate(job):
        center, sub_seed = job
        return thickness_at(sup, center, r, samples, sub_seed, t_range=t_range)

    threads = get_threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            estimates = list(pool.map(estimate, jobs))
    else:
        estimates = [estimate(job) for job in jobs]
    return ThicknessProfile(estimates=estimates)


@dataclass
class ThresholdResult:
    T_star: float
    lower: float
    upper: float
    evaluations: List[Dict]

    def to_dict(self) -> Dict:
        return {"T_star": self.T_star, "lower": self.lower, "upper": self.upper,
                "evaluations": self.evaluations}


CenterSchedule = TypingUnion[Sequence, Callable[[float], Sequence]]


def threshold_bisect(family: Callable[[float], MovingSupport], r: float, gamma_floor: float,
                     centers: CenterSchedule, T_lo: float, T_hi: float, samples: int,
                     seed: int, tol: Optional[float] = None, scan_points: int = 5) -> ThresholdResult:
    """
    Smallest horizon T at which the min-over-centers thickness value (the
    time average of Leb(ω(t) ∩ B(x,r))/V_r) reaches gamma_floor. The
    unnormalized integral value·T·V_r is recorded with each evaluation.

    A coarse scan over [T_lo, T_hi] checks the fail-then-hold pattern before
    bisecting inside the bracket it exposes.

    Raises:
        NonMonotoneScenario: the scan is not fail-then-hold, or the condition
            fails at T_hi
    """
    tol = tol or load_settings("support_geometry")["bisect_tol"]
    evaluations = []

    def holds(T: float) -> bool:
        sup = family(T)
        schedule = centers(T) if callable(centers) else centers
        profile = thickness_profile(sup, r, schedule, samples, seed)
        verdict = profile.minimum >= gamma_floor
        evaluations.append({"T": float(T), "min_value": profile.minimum,
                            "integral": profile.minimum * T * ball_volume(sup.n, r),
                            "holds": bool(verdict)})
        return verdict

    grid = np.linspace(T_lo, T_hi, max(scan_points, 2))
    pattern = [holds(float(T)) for T in grid]
    if pattern[0]:
        if not all(pattern):
            raise NonMonotoneScenario(f"condition holds at T_lo but fails later: {evaluations}")
        return ThresholdResult(T_star=float(T_lo), lower=float(T_lo), upper=float(T_lo),
                               evaluations=evaluations)
    if not pattern[-1]:
        raise NonMonotoneScenario(f"condition fails at the upper bracket T_hi = {T_hi}")
    first_hold = pattern.index(True)
    if not all(pattern[first_hold:]):
        raise NonMonotoneScenario(f"scan is not fail-then-hold: {pattern}")

    lo, hi = float(grid[first_hold - 1]), float(grid[first_hold])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if holds(mid):
            hi = mid
        else:
            lo = mid
    return ThresholdResult(T_star=0.5 * (lo + hi), lower=lo, upper=hi, evaluations=evaluations)


def timespace_thicken(sup: MovingSupport, gamma: float) -> Tuple[float, Callable]:
    """
    T_γ = (1 − γ/2)T and Ω = {(t, x) ∈ [0, T_γ] × Rⁿ : x ∈ ω(t)}

    Returns:
        Tuple (T_gamma, omega_big) where omega_big(t, points) is a boolean array
    """
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    T_gamma = (1.0 - 0.5 * gamma) * sup.T

    def omega_big(t, points):
        inside = sup.contains(t, points)
        return inside & (np.asarray(t) <= T_gamma)

    return T_gamma, omega_big


def verify_timespace_thickness(sup: MovingSupport, gamma: float, r: float, centers: Sequence,
                               samples: int, seed: int) -> pd.DataFrame:
    """
    Check Leb(Ω ∩ [0,T_γ]×B(x,r)) ≥ (γ/2)·T·V_r on sampled centers within
    three standard errors
    """
    T_gamma, _ = timespace_thicken(sup, gamma)
    profile = thickness_profile(sup, r, centers, samples, seed, t_range=(0.0, T_gamma))
    volume = ball_volume(sup.n, r)
    bound = 0.5 * gamma * sup.T * volume
    rows = []
    for estimate in profile.estimates:
        integral = estimate.integral(sup.n)
        slack = 3.0 * estimate.std_err * T_gamma * volume
        row = estimate.to_row()
        row.update({"T_gamma": T_gamma, "integral": integral, "bound": bound,
                    "holds": bool(integral + slack >= bound)})
        rows.append(row)
    return pd.DataFrame(rows)


def radius_gamma_search(sup: MovingSupport, radii: Sequence[float], centers: Sequence,
                        samples: int, seed: int) -> pd.DataFrame:
    """Measured γ (min over centers) for each candidate radius"""
    rows = []
    for r in radii:
        profile = thickness_profile(sup, r, centers, samples, seed)
        rows.append({"r": float(r), "gamma": profile.minimum,
                     "argmin": [float(v) for v in np.atleast_1d(profile.argmin)]})
    return pd.DataFrame(rows)


if __name__ == "__main__":
    sup = translation_cone_support(np.pi / 4, 3.0)
    profile = thickness_profile(sup, 5.0, translation_escape_centers(3.0, np.pi / 4), 20000, 7)
    print(f"[OK] translation cone T=3: min thickness {profile.minimum:.4f}")
