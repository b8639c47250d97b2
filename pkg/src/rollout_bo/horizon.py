"""Stagewise rolling-horizon choice from a GP interpolation error bound.

A horizon ``j`` is feasible when the discounted profit of looking ahead
beyond one step outweighs the worst-case discounted error::

    sum_{i=2..j} alpha^(i-2) phi(i)  >  e_bar * (1 - alpha^(N-k)) / (1 - alpha)

The smallest feasible ``j`` up to ``h_bar`` is used; if there is none the
stage falls back to the greedy horizon ``h = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve

from .gp import GpModel, cholesky_jittered


@dataclass(frozen=True)
class ErrorBoundParams:
    """Constants of the error bound.

    ``sigma2=None`` uses the fitted truth signal variance on the scale of the
    observations (the standardized variance times ``y_scale**2``).
    """

    K_const: float = 1.0
    u_const: float = 0.0
    sigma2: float | None = None

    def __post_init__(self):
        if not (self.K_const > 0 and math.isfinite(self.K_const)):
            raise ValueError("K_const must be positive and finite")
        if not (self.u_const >= 0 and math.isfinite(self.u_const)):
            raise ValueError("u_const must be non-negative and finite")
        if self.sigma2 is not None and not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError("sigma2 must be positive and finite")


@dataclass(frozen=True)
class HorizonDecision:
    h: int
    e_bar: float
    feasible_set_nonempty: bool


def power_function_batch(model: GpModel, X) -> np.ndarray:
    """Power function ``sqrt(1 - rho^T R^-1 rho)`` under the truth kernel correlation."""
    X = np.asarray(X, dtype=float).reshape(-1, model.dim)
    if len(model.data) == 0:
        return np.ones(X.shape[0])
    kern = model.spec.truth_kernel
    obs = np.unique(model.data.X, axis=0)
    R = kern.correlation(obs, obs)
    L, _ = cholesky_jittered(R, "observed-input correlation matrix")
    rho = kern.correlation(obs, X)
    q = np.sum(rho * cho_solve((L, True), rho), axis=0)
    return np.sqrt(np.maximum(0.0, 1.0 - q))


def power_function(model: GpModel, x) -> float:
    return float(power_function_batch(model, np.atleast_2d(x))[0])


def bound_term(p) -> np.ndarray:
    """``P * sqrt(log(e / P))`` with value 0 at ``P = 0``."""
    p = np.asarray(p, dtype=float)
    safe = np.where(p > 0, p, 1.0)
    return np.where(p > 0, p * np.sqrt(np.log(math.e / safe)), 0.0)


def error_bound(params: ErrorBoundParams, model: GpModel, probe_points) -> float:
    """Worst-case interpolation error ``e_bar`` over the probe points."""
    probe_points = np.atleast_2d(np.asarray(probe_points, dtype=float))
    if probe_points.shape[0] == 0:
        raise ValueError("probe_points must be non-empty")
    if params.sigma2 is None:
        sigma2 = model.spec.truth_kernel.signal_variance * model.y_scale ** 2
    else:
        sigma2 = params.sigma2
    term = bound_term(power_function_batch(model, probe_points))
    return float(np.max(params.K_const * sigma2 * term) + params.u_const)


@dataclass(frozen=True)
class PhiMode:
    """Per-step benefit ``phi``: ``kind="kg_proxy"`` or ``kind="constant"`` with ``value``."""

    kind: str = "kg_proxy"
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("kg_proxy", "constant"):
            raise ValueError(f"unknown phi mode {self.kind!r}")
        if self.kind == "constant" and not self.value >= 0:
            raise ValueError("constant phi must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "PhiMode":
        text = text.strip().lower()
        if text in ("kg_proxy", "kg-proxy", "kg"):
            return cls("kg_proxy")
        if text.startswith("constant:"):
            return cls("constant", float(text.split(":", 1)[1]))
        raise ValueError(f"cannot parse phi mode {text!r}")

    def __str__(self) -> str:
        return "kg_proxy" if self.kind == "kg_proxy" else f"constant:{self.value:g}"


def profit(phi_mode: PhiMode, k: int, model: GpModel | None = None,
           greedy_kg_value: float | None = None) -> Callable[[int], float]:
    """``phi`` evaluator for stage ``k``.

    The KG proxy is the value of the greedy KG maximizer at this stage; pass it
    in as ``greedy_kg_value`` (it is computed once per stage by the caller).
    """
    if phi_mode.kind == "constant":
        c = float(phi_mode.value)
        return lambda j: c
    if greedy_kg_value is None:
        raise ValueError("the KG proxy needs the stage's greedy KG value")
    v = max(float(greedy_kg_value), 0.0)
    return lambda j: v


def profit_sum(phi: Callable[[int], float], h: int) -> float:
    """``g_k(h) = sum_{j=1..h} phi(j)``."""
    return float(sum(phi(j) for j in range(1, h + 1)))


def error_budget(e_bar: float, alpha: float, n_minus_k: int) -> float:
    if alpha == 1.0:
        return e_bar * n_minus_k
    return e_bar * (1.0 - alpha ** n_minus_k) / (1.0 - alpha)


def feasible_horizon(phi: Callable[[int], float], e_bar: float, alpha: float, N_minus_k: int,
                     h_bar: int) -> HorizonDecision:
    """Smallest feasible horizon in ``2..h_bar``, else ``h = 1``."""
    if h_bar < 2:
        raise ValueError("h_bar must be at least 2")
    if N_minus_k < 1:
        raise ValueError("N_minus_k must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    rhs = error_budget(e_bar, alpha, N_minus_k)
    lhs = 0.0
    for j in range(2, h_bar + 1):
        lhs += alpha ** (j - 2) * phi(j)
        if lhs > rhs:
            return HorizonDecision(j, e_bar, True)
    return HorizonDecision(1, e_bar, False)
