"""
Gauss-Legendre Quadrature
Adaptive and composite Gauss-Legendre rules for array-valued integrands.
"""

from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
from scipy.special import roots_legendre

from .errors import QuadratureFailure


@lru_cache(maxsize=32)
def _reference_rule(nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(nodes)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(a: float, b: float, nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the nodes-point rule on [a, b]"""
    x, w = _reference_rule(nodes)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def composite_gauss_legendre(a: float, b: float, total_nodes: int,
                             panel_nodes: int = 8) -> Tuple[np.ndarray, np.ndarray]:
    """
    Composite rule with equal panels

    Args:
        a, b: Integration interval
        total_nodes: Total node count, a multiple of panel_nodes
        panel_nodes: Gauss-Legendre nodes per panel

    Returns:
        Tuple of (nodes, weights), nodes increasing inside (a, b)
    """
    if total_nodes < 1 or panel_nodes < 1:
        raise ValueError("node counts must be positive")
    if total_nodes < panel_nodes:
        panel_nodes = total_nodes
    if total_nodes % panel_nodes != 0:
        raise ValueError(f"total_nodes={total_nodes} is not a multiple of "
                         f"panel_nodes={panel_nodes}")
    panels = total_nodes // panel_nodes
    edges = np.linspace(a, b, panels + 1)
    nodes, weights = [], []
    for left, right in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(left, right, panel_nodes)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def adaptive_gauss_legendre(func: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                            abs_tol: float = 1e-12, nodes: int = 10,
                            max_depth: int = 40) -> np.ndarray:
    """
    Globally adaptive bisection with a fixed Gauss-Legendre rule per panel.

    ``func`` receives a 1-D array of times and returns an array whose first
    axis runs over those times; the result has the trailing shape.
    A panel is accepted when the rule on the panel and the sum of the rules
    on its two halves agree to the panel's share of ``abs_tol``.

    Raises:
        QuadratureFailure: a panel still disagrees at depth ``max_depth``
    """
    if b == a:
        probe = np.asarray(func(np.array([a])))
        return np.zeros(probe.shape[1:], dtype=probe.dtype)

    def panel(left, right):
        x, w = gauss_legendre(left, right, nodes)
        values = np.asarray(func(x))
        return np.tensordot(w, values, axes=(0, 0))

    total = None
    stack = [(a, b, panel(a, b), abs_tol, 0)]
    while stack:
        left, right, whole, tol, depth = stack.pop()
        mid = 0.5 * (left + right)
        first, second = panel(left, mid), panel(mid, right)
        refined = first + second
        if np.max(np.abs(refined - whole)) <= tol:
            total = refined if total is None else total + refined
            continue
        if depth + 1 > max_depth:
            raise QuadratureFailure(
                f"adaptive Gauss-Legendre exceeded depth {max_depth} on [{left}, {right}]")
        stack.append((mid, right, second, 0.5 * tol, depth + 1))
        stack.append((left, mid, first, 0.5 * tol, depth + 1))
    return total
