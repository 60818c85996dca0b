# src/diffcore/gradcheck.py
"""
Central-difference oracle for backward().

f is written against the graph API: f(graph, x_node) -> scalar Node.
The same f is used for the analytic pass (x as a differentiable leaf) and
for the perturbed evaluations (x as a constant in a fresh graph).
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Tuple

import numpy as np

from src.diffcore.graph import Graph, Node, as_array, backward
from src.errors import ContractError, GradientCheckError, ParameterError

ScalarFn = Callable[[Graph, Node], Node]

DENOMINATOR_FLOOR = 1e-8


def analytic_gradient(f: ScalarFn, x0: np.ndarray) -> np.ndarray:
    g = Graph()
    x = g.leaf(x0, name="x")
    out = f(g, x)
    return backward(g, out)["x"]


def _evaluate(f: ScalarFn, x: np.ndarray, coord: Tuple[int, ...]) -> float:
    g = Graph()
    out = f(g, g.constant(x))
    if out.value.size != 1:
        raise ContractError(f"gradient check needs a scalar function, got shape {out.shape}")
    value = float(out.value.reshape(-1)[0])
    if not np.isfinite(value):
        raise GradientCheckError(coord, value)
    return value


def numerical_gradient(f: ScalarFn, x0: np.ndarray, h: float = 1e-5,
                       coords: Optional[Iterable[Tuple[int, ...]]] = None) -> np.ndarray:
    """
    Central differences (f(x + s e_i) - f(x - s e_i)) / 2s with s = h * max(1, |x_i|).

    Coordinates not listed in `coords` are left at 0.
    """
    if not h > 0:
        raise ParameterError(f"finite-difference step must be positive, got {h}")
    x0 = as_array(x0)
    grad = np.zeros_like(x0)
    todo = list(np.ndindex(*x0.shape)) if coords is None else [tuple(c) for c in coords]
    for coord in todo:
        step = h * max(1.0, abs(float(x0[coord])))
        plus = x0.copy()
        plus[coord] += step
        minus = x0.copy()
        minus[coord] -= step
        grad[coord] = (_evaluate(f, plus, coord) - _evaluate(f, minus, coord)) / (2.0 * step)
    return grad


def finite_difference_check(f: ScalarFn, x0, h: float = 1e-5,
                            coords: Optional[Iterable[Tuple[int, ...]]] = None) -> float:
    """
    Max relative error between backward() and central differences.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    Pass `coords` to check a sample of coordinates of a large input.
    """
    x0 = as_array(x0)
    todo = list(np.ndindex(*x0.shape)) if coords is None else [tuple(c) for c in coords]
    analytic = analytic_gradient(f, x0)
    numeric = numerical_gradient(f, x0, h=h, coords=todo)
    worst = 0.0
    for coord in todo:
        a, n = float(analytic[coord]), float(numeric[coord])
        denom = max(abs(a), abs(n), DENOMINATOR_FLOOR)
        worst = max(worst, abs(a - n) / denom)
    return worst
