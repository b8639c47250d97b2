"""Gauss-Hermite rules for expectations over a standard normal variable."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

MAX_NODES = 64


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights with ``sum(w * g(z)) ~= E[g(Z)]``, ``Z ~ N(0, 1)``."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float).ravel()
        weights = np.array(self.weights, dtype=float).ravel()
        if nodes.size == 0 or nodes.shape != weights.shape:
            raise ValueError("nodes and weights must be non-empty and of equal length")
        if not np.all(weights > 0):
            raise ValueError("weights must be positive")
        for a in (nodes, weights):
            a.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.nodes.size

    def expect(self, g) -> float:
        return float(np.dot(self.weights, [g(z) for z in self.nodes]))


@lru_cache(maxsize=None)
def gauss_hermite(n: int) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule via Golub-Welsch.

    The Jacobi matrix of the monic Hermite_e recurrence has zero diagonal and
    off-diagonal ``sqrt(k)``; its eigenvalues are the nodes. Weights are the
    Christoffel numbers ``1 / sum_k p_k(z)^2`` of the orthonormal polynomials,
    which stay positive where squared eigenvector entries would underflow.
    """
    if isinstance(n, bool) or int(n) != n or not 1 <= n <= MAX_NODES:
        raise ValueError(f"n must be an integer in [1, {MAX_NODES}], got {n!r}")
    n = int(n)
    if n == 1:
        return QuadratureRule(np.zeros(1), np.ones(1))
    off = np.sqrt(np.arange(1, n, dtype=float))
    nodes = eigh_tridiagonal(np.zeros(n), off, eigvals_only=True)
    p_prev, p = np.zeros(n), np.ones(n)
    total = np.ones(n)
    for k in range(1, n):
        p_prev, p = p, (nodes * p - math.sqrt(k - 1) * p_prev) / math.sqrt(k)
        total += p * p
    weights = 1.0 / total
    # symmetrize to remove eigen-solver asymmetry
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    weights = weights / weights.sum()
    if n % 2 == 1:
        nodes[n // 2] = 0.0
    return QuadratureRule(nodes, weights)


def expect_max_affine(a, b, rule: QuadratureRule) -> float:
    """Quadrature estimate of ``E[max_m (a_m + b_m Z)]``."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("a and b must be non-empty")
    if a.shape != b.shape:
        raise ValueError("a and b must have equal length")
    return float(expect_max_affine_columns(a, b[:, None], rule)[0])


def expect_max_affine_columns(a, B, rule: QuadratureRule) -> np.ndarray:
    """Column-wise :func:`expect_max_affine` for a slope matrix ``B`` (M x C)."""
    a = np.asarray(a, dtype=float)[:, None]
    B = np.asarray(B, dtype=float)
    out = np.zeros(B.shape[1])
    buf = np.empty_like(B)
    for z, w in zip(rule.nodes, rule.weights):
        np.multiply(B, z, out=buf)
        buf += a
        out += w * buf.max(axis=0)
    return out
