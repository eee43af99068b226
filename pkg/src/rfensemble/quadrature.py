"""Gaussian-expectation primitives.

Everything downstream (channel integrals, activation coefficients) consumes
expectations of the form E[g(Z)] with Z standard normal, or E[g(W, W')] with
(W, W') a correlated Gaussian pair of common variance q0 and covariance q1.
Rules use the probabilists' normalization: weights sum to 1 and nodes are
abscissae of the standard normal, so scaling lives in the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainError, NumericalError

MAX_ORDER = 320

DEFAULT_ORDER_1D = 101
DEFAULT_ORDER_2D = 61


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite nodes/weights normalized for expectations under N(0,1)."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigError("quadrature weights must sum to 1 within 1e-12")
        if np.any(np.diff(self.nodes) <= 0):
            raise ConfigError("quadrature nodes must be strictly increasing")
        if np.max(np.abs(self.nodes + self.nodes[::-1])) > 1e-12 * (1 + np.max(np.abs(self.nodes))):
            raise ConfigError("quadrature nodes must be symmetric about 0")


def gauss_hermite_rule(order: int) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule of the given order.

    Exact for polynomial integrands of degree <= 2*order - 1 under N(0,1).
    """
    if not isinstance(order, (int, np.integer)) or order < 1:
        raise ConfigError(f"quadrature order must be a positive integer, got {order!r}")
    if order > MAX_ORDER:
        raise ConfigError(f"quadrature order {order} exceeds cap {MAX_ORDER}")
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    weights = weights / weights.sum()
    # symmetrize away last-ulp asymmetry from the eigenvalue solver
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights, order=int(order))


@dataclass(frozen=True)
class QuadratureSet:
    """The 1D rule and the per-axis 2D rule used by the channel integrals."""

    rule_1d: QuadratureRule = field(default_factory=lambda: gauss_hermite_rule(DEFAULT_ORDER_1D))
    rule_2d: QuadratureRule = field(default_factory=lambda: gauss_hermite_rule(DEFAULT_ORDER_2D))

    @staticmethod
    def with_orders(order_1d: int = DEFAULT_ORDER_1D, order_2d: int = DEFAULT_ORDER_2D) -> "QuadratureSet":
        return QuadratureSet(gauss_hermite_rule(order_1d), gauss_hermite_rule(order_2d))


def _check_finite(values: np.ndarray, nodes: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(np.atleast_1d(values))
    if bad.any():
        idx = int(np.argmax(bad.reshape(-1)))
        node = np.atleast_1d(nodes).reshape(-1)[idx] if np.atleast_1d(nodes).size > idx else None
        raise NumericalError(f"{what} evaluated non-finite at node {node}")


def expect_1d(g: Callable[[np.ndarray], np.ndarray], rule: QuadratureRule) -> float:
    """E[g(Z)], Z ~ N(0,1). g must accept an array of nodes."""
    vals = np.asarray(g(rule.nodes), dtype=float)
    _check_finite(vals, rule.nodes, "integrand")
    return float(rule.weights @ vals)


def expect_2d_correlated(
    g: Callable[[np.ndarray, np.ndarray], np.ndarray],
    q0: float,
    q1: float,
    rule: QuadratureRule,
) -> float:
    """E[g(W, W')] with Var(W)=Var(W')=q0 and Cov(W,W')=q1.

    Tensorized rule after a Cholesky transform of [[q0,q1],[q1,q0]]. The
    degenerate cases q1 = +/-q0 dispatch to an exact 1D expectation; the
    kernel limit drives q1 -> q0, so this path must not go through a
    near-singular factorization.
    """
    if not q0 > 0:
        raise DomainError(f"q0 must be positive, got {q0}")
    if abs(q1) > q0 * (1 + 1e-12):
        raise DomainError(f"|q1|={abs(q1)} exceeds q0={q0}: covariance not PSD")
    s = np.sqrt(q0)
    if abs(q1) >= q0 * (1 - 1e-12):
        sign = 1.0 if q1 > 0 else -1.0
        w = s * rule.nodes
        vals = np.asarray(g(w, sign * w), dtype=float)
        _check_finite(vals, rule.nodes, "integrand")
        return float(rule.weights @ vals)
    z1 = rule.nodes[:, None]
    z2 = rule.nodes[None, :]
    w = s * z1 + np.zeros_like(z2)
    wp = (q1 / s) * z1 + np.sqrt(q0 - q1 * q1 / q0) * z2
    vals = np.asarray(g(w, wp), dtype=float)
    _check_finite(vals, w, "integrand")
    weights = rule.weights[:, None] * rule.weights[None, :]
    return float(np.sum(weights * vals))
