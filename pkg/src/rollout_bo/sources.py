"""Benchmark objectives (maximization form) and biased auxiliary sources."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .optim import BoxBounds


def branin(x):
    x1, x2 = x[0], x[1]
    b, c, t = 5.1 / (4 * math.pi ** 2), 5 / math.pi, 1 / (8 * math.pi)
    return (x2 - b * x1 ** 2 + c * x1 - 6) ** 2 + 10 * (1 - t) * math.cos(x1) + 10


def six_hump_camel(x):
    x1, x2 = x[0], x[1]
    return (4 - 2.1 * x1 ** 2 + x1 ** 4 / 3) * x1 ** 2 + x1 * x2 + (-4 + 4 * x2 ** 2) * x2 ** 2


def goldstein_price(x):
    x1, x2 = x[0], x[1]
    a = 1 + (x1 + x2 + 1) ** 2 * (19 - 14 * x1 + 3 * x1 ** 2 - 14 * x2 + 6 * x1 * x2 + 3 * x2 ** 2)
    b = 30 + (2 * x1 - 3 * x2) ** 2 * (18 - 32 * x1 + 12 * x1 ** 2 + 48 * x2 - 36 * x1 * x2 + 27 * x2 ** 2)
    return a * b


def bohachevsky(x):
    x1, x2 = x[0], x[1]
    return x1 ** 2 + 2 * x2 ** 2 - 0.3 * math.cos(3 * math.pi * x1) - 0.4 * math.cos(4 * math.pi * x2) + 0.7


def forrester(x):
    return (6 * x[0] - 2) ** 2 * math.sin(12 * x[0] - 4)


def griewank(x):
    x = np.asarray(x, dtype=float)
    i = np.arange(1, x.size + 1)
    return float(np.sum(x ** 2) / 4000 - np.prod(np.cos(x / np.sqrt(i))) + 1)


@dataclass(frozen=True)
class _Function:
    minimize_form: Callable
    bounds: tuple
    minimum: float


# standard minimization forms; the optimizer sees their negation
FUNCTIONS = {
    "BraninHoo": _Function(branin, ((-5.0, 10.0), (0.0, 15.0)), 0.39788735772973816),
    "SixHumpCamel": _Function(six_hump_camel, ((-3.0, 3.0), (-2.0, 2.0)), -1.0316284534898774),
    "GoldsteinPrice": _Function(goldstein_price, ((-2.0, 2.0), (-2.0, 2.0)), 3.0),
    "Bohachevsky": _Function(bohachevsky, ((-100.0, 100.0), (-100.0, 100.0)), 0.0),
    "Griewank3": _Function(griewank, ((-600.0, 600.0),) * 3, 0.0),
    "Forrester": _Function(forrester, ((0.0, 1.0),), -6.0207400557670825),
}


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str
    noise_sd: float = 0.1

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise ValueError(f"unknown objective {self.name!r}; choose from {sorted(FUNCTIONS)}")
        if not self.noise_sd >= 0:
            raise ValueError("noise_sd must be non-negative")

    @property
    def bounds(self) -> BoxBounds:
        b = np.array(FUNCTIONS[self.name].bounds)
        return BoxBounds(b[:, 0], b[:, 1])

    @property
    def dim(self) -> int:
        return len(FUNCTIONS[self.name].bounds)

    @property
    def known_max(self) -> float:
        return -FUNCTIONS[self.name].minimum

    def value(self, x) -> float:
        """Noise-free objective ``f(x)`` (maximization orientation)."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim or not self.bounds.contains(x, atol=1e-12):
            raise ValueError(f"{x} is not a point of the {self.name} domain")
        return -float(FUNCTIONS[self.name].minimize_form(x))


def evaluate_truth(spec: ObjectiveSpec, x, rng: np.random.Generator) -> float:
    """Noisy truth observation ``f(x) + noise_sd * N(0, 1)``."""
    f = spec.value(x)
    if spec.noise_sd == 0:
        return f
    return f + spec.noise_sd * float(rng.standard_normal())


BIAS_KINDS = ("sinusoid2d", "sinusoid3d", "gp_draw")


@dataclass(frozen=True)
class BiasedSourceSpec:
    """Auxiliary source ``y(i, x) = y(x) + delta_i(x)``.

    ``gp_draw`` realizes ``delta`` as one fixed draw from an RBF GP with the
    given parameters (white component included), seeded by ``seed``.
    """

    kind: str
    cost: float = 1.0
    seed: int = 0
    lengthscale: float = 1.0
    signal_variance: float = 1.0
    noise_variance: float = 0.5
    n_features: int = 2000

    def __post_init__(self):
        if self.kind not in BIAS_KINDS:
            raise ValueError(f"unknown bias kind {self.kind!r}")
        if not self.cost > 0:
            raise ValueError("cost must be positive")


@lru_cache(maxsize=64)
def _fourier_features(seed: int, dim: int, n_features: int, lengthscale: float):
    rng = np.random.default_rng([int(seed), dim, 7919])
    omega = rng.standard_normal((n_features, dim)) / lengthscale
    phase = rng.uniform(0.0, 2 * math.pi, n_features)
    weights = rng.standard_normal(n_features)
    return omega, phase, weights


def bias_value(bspec: BiasedSourceSpec, x) -> float:
    """Deterministic bias ``delta(x)``; independent of query order."""
    x = np.asarray(x, dtype=float).ravel()
    if bspec.kind == "sinusoid2d":
        return 2.0 * math.sin(10 * x[0] + 5 * x[1])
    if bspec.kind == "sinusoid3d":
        return 2.0 * math.sin(10 * x[0] + 5 * x[1] + 3 * x[2])
    omega, phase, weights = _fourier_features(bspec.seed, x.size, bspec.n_features, bspec.lengthscale)
    smooth = math.sqrt(2 * bspec.signal_variance / bspec.n_features) * float(
        weights @ np.cos(omega @ x + phase))
    if bspec.noise_variance == 0:
        return smooth
    # white component of the kernel: a fixed draw per distinct input
    key = np.frombuffer(np.ascontiguousarray(x).tobytes(), dtype=np.uint32)
    nugget = np.random.default_rng([int(bspec.seed), 104729, *key.tolist()]).standard_normal()
    return smooth + math.sqrt(bspec.noise_variance) * float(nugget)


def evaluate_source(bspecs, truth: ObjectiveSpec, i: int, x, rng: np.random.Generator) -> float:
    """Observation from source ``i``; 0 is the truth, ``i >= 1`` indexes ``bspecs``."""
    if i == 0:
        return evaluate_truth(truth, x, rng)
    if isinstance(bspecs, BiasedSourceSpec):
        bspecs = (bspecs,)
    if not 1 <= i <= len(bspecs):
        raise ValueError(f"unknown source index {i}; have {len(bspecs)} auxiliary sources")
    return evaluate_truth(truth, x, rng) + bias_value(bspecs[i - 1], x)
