"""Multi-source Gaussian-process regression.

Source 0 is the truth surface ``f``; source ``i >= 1`` observes
``f + delta_i`` with an independent bias GP, so the latent covariance is

    Sigma((i, x), (j, x')) = Sigma_0(x, x') + [i == j >= 1] Sigma_i(x, x')

Observation noise is added per row on the Gram diagonal; the noise variance
of source ``i`` is the truth kernel noise plus the bias kernel noise.

Observations are standardized by the truth-source mean and standard
deviation. Hyperparameters live on that standardized scale; every public
accessor returns values on the raw scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import factorial
from scipy.spatial.distance import cdist

from .optim import BoxBounds, maximize, sobol_points

JITTER_START = 1e-10
JITTER_MAX = 1e-4
HYPER_BOUNDS = (1e-3, 1e3)


class GpNumericalError(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# kernels


def _matern_coefficients(p: int) -> np.ndarray:
    # Matern nu = p + 1/2 closed form:
    # exp(-s) * p!/(2p)! * sum_i (p+i)!/(i!(p-i)!) (2 s)^(p-i),  s = sqrt(2 nu) r
    i = np.arange(p + 1)
    c = factorial(p + i) / (factorial(i) * factorial(p - i)) * 2.0 ** (p - i)
    return c * factorial(p) / factorial(2 * p)


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel ``sigma_f^2 rho(x, x') + sigma_n^2 [x == x']``."""

    lengthscale: tuple
    signal_variance: float = 1.0
    noise_variance: float = 0.0
    family: str = "matern"
    p: int = 2

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscale))
        object.__setattr__(self, "lengthscale", ls)
        if self.family not in ("matern", "rbf"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not ls or any(not (v > 0 and math.isfinite(v)) for v in ls):
            raise ValueError("lengthscales must be positive and finite")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be non-negative")
        if self.family == "matern" and (int(self.p) != self.p or self.p < 0):
            raise ValueError("Matern order p must be a non-negative integer")

    @property
    def dim(self) -> int:
        return len(self.lengthscale)

    def correlation(self, X1, X2) -> np.ndarray:
        """Noise-free correlation matrix ``rho(X1, X2)``."""
        X1 = np.atleast_2d(np.asarray(X1, dtype=float))
        X2 = np.atleast_2d(np.asarray(X2, dtype=float))
        if X1.shape[1] != self.dim or X2.shape[1] != self.dim:
            raise ValueError(
                f"input dimension mismatch: kernel has {self.dim} lengthscales, "
                f"got {X1.shape[1]} and {X2.shape[1]}"
            )
        ls = np.asarray(self.lengthscale)
        r = cdist(X1 / ls, X2 / ls)
        if self.family == "rbf":
            return np.exp(-0.5 * r * r)
        p = int(self.p)
        s = math.sqrt(2 * p + 1) * r
        poly = np.polyval(_matern_coefficients(p), s)
        return np.exp(-s) * poly

    def covariance(self, X1, X2) -> np.ndarray:
        return self.signal_variance * self.correlation(X1, X2)


def kernel_eval(spec: KernelSpec, x, x_prime) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != xp.shape or x.size != spec.dim:
        raise ValueError("x and x_prime must both match the kernel dimension")
    rho = float(spec.correlation(x[None, :], xp[None, :])[0, 0])
    same = float(np.array_equal(x, xp))
    return spec.signal_variance * rho + spec.noise_variance * same


@dataclass(frozen=True)
class SourceModelSpec:
    truth_kernel: KernelSpec
    bias_kernels: tuple = ()
    prior_mean: float | Callable = 0.0

    def __post_init__(self):
        object.__setattr__(self, "bias_kernels", tuple(self.bias_kernels))
        for k in self.bias_kernels:
            if k.dim != self.truth_kernel.dim:
                raise ValueError("bias kernels must share the truth input dimension")

    @property
    def n_sources(self) -> int:
        return 1 + len(self.bias_kernels)

    @property
    def dim(self) -> int:
        return self.truth_kernel.dim

    def kernels(self) -> tuple:
        return (self.truth_kernel,) + self.bias_kernels

    def check_source(self, source: int) -> None:
        if not 0 <= int(source) < self.n_sources:
            raise ValueError(f"source index {source} outside 0..{self.n_sources - 1}")

    def mean(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        if callable(self.prior_mean):
            return np.asarray(self.prior_mean(X), dtype=float).reshape(X.shape[0])
        return np.full(X.shape[0], float(self.prior_mean))

    def latent_cov(self, s1, X1, s2, X2) -> np.ndarray:
        s1 = np.asarray(s1, dtype=int).ravel()
        s2 = np.asarray(s2, dtype=int).ravel()
        K = self.truth_kernel.covariance(X1, X2)
        for i, bk in enumerate(self.bias_kernels, start=1):
            m1 = s1 == i
            m2 = s2 == i
            if m1.any() and m2.any():
                X1a = np.atleast_2d(X1)
                X2a = np.atleast_2d(X2)
                K[np.ix_(m1, m2)] += bk.covariance(X1a[m1], X2a[m2])
        return K

    def latent_var(self, sources, X) -> np.ndarray:
        sources = np.asarray(sources, dtype=int).ravel()
        out = np.full(sources.size, self.truth_kernel.signal_variance)
        for i, bk in enumerate(self.bias_kernels, start=1):
            out[sources == i] += bk.signal_variance
        return out

    def noise_variance(self, source: int) -> float:
        v = self.truth_kernel.noise_variance
        if source >= 1:
            v += self.bias_kernels[source - 1].noise_variance
        return v

    # hyperparameter vector: per kernel [log l_1..l_d, log sf2, log sn2]
    def log_params(self) -> np.ndarray:
        parts = []
        for k in self.kernels():
            parts += [np.log(k.lengthscale), [math.log(k.signal_variance)],
                      [math.log(max(k.noise_variance, HYPER_BOUNDS[0]))]]
        return np.concatenate(parts)

    def with_log_params(self, theta) -> "SourceModelSpec":
        theta = np.asarray(theta, dtype=float)
        d = self.dim
        ks = []
        for j, k in enumerate(self.kernels()):
            t = theta[j * (d + 2):(j + 1) * (d + 2)]
            ks.append(replace(k, lengthscale=tuple(np.exp(t[:d])),
                              signal_variance=float(np.exp(t[d])),
                              noise_variance=float(np.exp(t[d + 1]))))
        return replace(self, truth_kernel=ks[0], bias_kernels=tuple(ks[1:]))


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Dataset:
    """Append-only list of (source, x, y) rows inside a box domain."""

    bounds: BoxBounds
    sources: np.ndarray = field(default=None)
    X: np.ndarray = field(default=None)
    y: np.ndarray = field(default=None)

    def __post_init__(self):
        d = self.bounds.dim
        src = np.zeros(0, dtype=int) if self.sources is None else np.asarray(self.sources, dtype=int).ravel()
        X = np.zeros((0, d)) if self.X is None else np.asarray(self.X, dtype=float).reshape(-1, d)
        y = np.zeros(0) if self.y is None else np.asarray(self.y, dtype=float).ravel()
        if not (src.size == X.shape[0] == y.size):
            raise ValueError("sources, X and y must have the same number of rows")
        if np.any(src < 0):
            raise ValueError("source indices must be non-negative")
        for x in X:
            if not self.bounds.contains(x, atol=1e-12):
                raise ValueError(f"input {x} lies outside the domain")
        for a in (src, X, y):
            a.flags.writeable = False
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.size

    @property
    def truth_mask(self) -> np.ndarray:
        return self.sources == 0

    def append(self, source: int, x, y: float) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, self.bounds.dim)
        return Dataset(
            self.bounds,
            np.append(self.sources, int(source)),
            np.vstack([self.X, x]),
            np.append(self.y, float(y)),
        )

    def permuted(self, order) -> "Dataset":
        order = np.asarray(order, dtype=int)
        return Dataset(self.bounds, self.sources[order], self.X[order], self.y[order])


# ---------------------------------------------------------------------------
# model


def _standardization(data: Dataset) -> tuple[float, float]:
    if len(data) == 0:
        return 0.0, 1.0
    ys = data.y[data.truth_mask] if data.truth_mask.any() else data.y
    mean = float(np.mean(ys))
    scale = float(np.std(ys)) if ys.size >= 2 else 1.0
    if not scale > 0 or not math.isfinite(scale):
        scale = 1.0
    return mean, scale


def cholesky_jittered(K: np.ndarray, what: str = "Gram matrix") -> tuple[np.ndarray, float]:
    """Lower Cholesky factor; on failure add ``1e-10 * mean(diag)`` and escalate x10 to 1e-4."""
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(K)))
    if not scale > 0:
        scale = 1.0
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-9):
        jit = rel * scale
        try:
            return np.linalg.cholesky(K + jit * np.eye(n)), jit
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise GpNumericalError(
        f"Cholesky failed for the {n}x{n} {what} even with jitter {JITTER_MAX:g}*mean(diag)"
    )


class GpModel:
    """Fitted multi-source GP. Immutable once constructed."""

    def __init__(self, spec: SourceModelSpec, data: Dataset, standardize: bool = True,
                 y_mean: float | None = None, y_scale: float | None = None):
        if data.bounds.dim != spec.dim:
            raise ValueError("data dimension does not match the kernel dimension")
        for s in np.unique(data.sources):
            spec.check_source(int(s))
        self.spec = spec
        self.data = data
        self.standardize = standardize
        if y_mean is None or y_scale is None:
            y_mean, y_scale = _standardization(data) if standardize else (0.0, 1.0)
        self.y_mean = float(y_mean)
        self.y_scale = float(y_scale)

        n = len(data)
        if n:
            K = spec.latent_cov(data.sources, data.X, data.sources, data.X)
            K[np.diag_indices(n)] += np.array([spec.noise_variance(int(s)) for s in data.sources])
            self.chol, self.jitter = cholesky_jittered(K, "multi-source Gram matrix")
            self._resid = (data.y - self.y_mean) / self.y_scale - spec.mean(data.X)
            self.alpha_vec = cho_solve((self.chol, True), self._resid)
        else:
            self.chol, self.jitter = np.zeros((0, 0)), 0.0
            self._resid = np.zeros(0)
            self.alpha_vec = np.zeros(0)

    # -- internals on the standardized scale -------------------------------
    def _cross(self, sources, X) -> np.ndarray:
        return self.spec.latent_cov(self.data.sources, self.data.X, sources, X)

    def _whiten(self, sources, X) -> np.ndarray:
        if len(self.data) == 0:
            return np.zeros((0, np.atleast_2d(X).shape[0]))
        return solve_triangular(self.chol, self._cross(sources, X), lower=True)

    @staticmethod
    def _as_sites(sources, X, dim):
        X = np.asarray(X, dtype=float).reshape(-1, dim)
        sources = np.broadcast_to(np.asarray(sources, dtype=int), (X.shape[0],)).copy()
        return sources, X

    # -- public accessors (raw scale) --------------------------------------
    @property
    def dim(self) -> int:
        return self.spec.dim

    def noise_variance(self, source: int) -> float:
        return self.spec.noise_variance(int(source)) * self.y_scale ** 2

    def prior_mean(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return self.y_mean + self.y_scale * self.spec.mean(X)

    def mean(self, sources, X) -> np.ndarray:
        sources, X = self._as_sites(sources, X, self.dim)
        m = self.spec.mean(X)
        if len(self.data):
            m = m + self._cross(sources, X).T @ self.alpha_vec
        return self.y_mean + self.y_scale * m

    def posterior_batch(self, sources, X) -> tuple[np.ndarray, np.ndarray]:
        sources, X = self._as_sites(sources, X, self.dim)
        for s in np.unique(sources):
            self.spec.check_source(int(s))
        m = self.mean(sources, X)
        var = self.spec.latent_var(sources, X)
        if len(self.data):
            V = self._whiten(sources, X)
            var = var - np.sum(V * V, axis=0)
        return m, np.maximum(var, 0.0) * self.y_scale ** 2

    def posterior(self, query_source: int, x) -> tuple[float, float]:
        m, v = self.posterior_batch([query_source], np.atleast_2d(x))
        return float(m[0]), float(v[0])

    def posterior_cov(self, sources_a, Xa, sources_b, Xb) -> np.ndarray:
        sa, Xa = self._as_sites(sources_a, Xa, self.dim)
        sb, Xb = self._as_sites(sources_b, Xb, self.dim)
        K = self.spec.latent_cov(sa, Xa, sb, Xb)
        if len(self.data):
            K = K - self._whiten(sa, Xa).T @ self._whiten(sb, Xb)
        return K * self.y_scale ** 2

    def truth_mean(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return self.mean(np.zeros(X.shape[0], dtype=int), X)

    def log_marginal_likelihood(self) -> float:
        n = len(self.data)
        if n == 0:
            return 0.0
        lml_std = (-0.5 * float(self._resid @ self.alpha_vec)
                   - float(np.sum(np.log(np.diag(self.chol))))
                   - 0.5 * n * math.log(2 * math.pi))
        return lml_std - n * math.log(self.y_scale)

    def condition(self, source: int, x, y: float) -> "GpModel":
        """Add one observation keeping hyperparameters and standardization fixed."""
        return GpModel(self.spec, self.data.append(source, x, y), self.standardize,
                       y_mean=self.y_mean, y_scale=self.y_scale)

    def with_spec(self, spec: SourceModelSpec) -> "GpModel":
        return GpModel(spec, self.data, self.standardize, y_mean=self.y_mean, y_scale=self.y_scale)


def log_marginal_likelihood(model: GpModel) -> float:
    return model.log_marginal_likelihood()


def posterior(model: GpModel, query_source: int, x) -> tuple[float, float]:
    return model.posterior(query_source, x)


# ---------------------------------------------------------------------------
# KG update coefficient


def sigma_tilde_vector(model: GpModel, eval_X, cand_source: int, cand_x) -> tuple[np.ndarray, bool]:
    """Coefficients of ``Z`` in the truth posterior-mean update at each row of ``eval_X``.

    Returns ``(b, degenerate)``; ``degenerate`` is set when the predictive
    variance of the pending observation is zero (a repeated noiseless point),
    in which case ``b`` is all zeros.
    """
    eval_X = np.asarray(eval_X, dtype=float).reshape(-1, model.dim)
    cand_x = np.asarray(cand_x, dtype=float).reshape(1, model.dim)
    model.spec.check_source(int(cand_source))
    cov = model.posterior_cov(np.zeros(eval_X.shape[0], dtype=int), eval_X, [cand_source], cand_x)[:, 0]
    _, var = model.posterior_batch([cand_source], cand_x)
    den = model.noise_variance(cand_source) + float(var[0])
    prior_scale = float(model.spec.latent_var([cand_source], cand_x)[0]) * model.y_scale ** 2
    if not den > 1e-14 * prior_scale:
        return np.zeros(eval_X.shape[0]), True
    return cov / math.sqrt(den), False


def sigma_tilde(model: GpModel, eval_x, cand_source: int, cand_x) -> float:
    b, _ = sigma_tilde_vector(model, eval_x, cand_source, cand_x)
    return float(b[0])


# ---------------------------------------------------------------------------
# maximum likelihood


def default_spec(dim: int, n_bias: int = 0, p: int = 2, bounds: BoxBounds | None = None) -> SourceModelSpec:
    """Matern ``p + 1/2`` truth kernel (plus bias kernels) scaled to the domain."""
    ls = 0.25 * bounds.width if bounds is not None else np.ones(dim)
    ls = np.where(ls > 0, ls, 1.0)
    truth = KernelSpec(tuple(ls), 1.0, 1e-2, "matern", p)
    bias = tuple(KernelSpec(tuple(ls), 0.1, 1e-2, "matern", p) for _ in range(n_bias))
    return SourceModelSpec(truth, bias)


def _start_box(spec: SourceModelSpec, bounds: BoxBounds) -> BoxBounds:
    w = np.where(bounds.width > 0, bounds.width, 1.0)
    lo, hi = [], []
    for _ in spec.kernels():
        lo += list(np.log(0.05 * w)) + [math.log(0.1), math.log(1e-3)]
        hi += list(np.log(2.0 * w)) + [math.log(5.0), math.log(0.1)]
    blo, bhi = math.log(HYPER_BOUNDS[0]), math.log(HYPER_BOUNDS[1])
    return BoxBounds(np.clip(lo, blo, bhi), np.clip(hi, blo, bhi))


def fit_mle(spec_init: SourceModelSpec, data: Dataset, restarts: int = 8, rng_seed=0,
            standardize: bool = True, evals_per_start: int | None = None) -> GpModel:
    """Multistart Nelder-Mead maximization of the log marginal likelihood.

    All lengthscales, signal variances and noise variances are optimized in
    log space within ``[1e-3, 1e3]``. The first start is ``spec_init``; the
    rest are scrambled Sobol points over a domain-scaled start box.
    """
    if len(data) == 0:
        raise ValueError("cannot fit hyperparameters to an empty dataset")
    if spec_init.bias_kernels and not data.truth_mask.any():
        raise ValueError("need at least one truth-source observation to fit bias kernels")
    y_mean, y_scale = _standardization(data) if standardize else (0.0, 1.0)
    theta0 = spec_init.log_params()
    lb, ub = math.log(HYPER_BOUNDS[0]), math.log(HYPER_BOUNDS[1])
    box = BoxBounds(np.full(theta0.size, lb), np.full(theta0.size, ub))
    start_box = _start_box(spec_init, data.bounds)
    starts = [np.clip(theta0, lb, ub)]
    starts += [start_box.from_unit(u) for u in sobol_points(restarts - 1, theta0.size, rng_seed)]
    per_start = evals_per_start or max(200, 40 * theta0.size)

    def objective(theta):
        try:
            m = GpModel(spec_init.with_log_params(theta), data, standardize, y_mean, y_scale)
        except GpNumericalError:
            return -math.inf
        return m.log_marginal_likelihood()

    report = maximize(objective, box, starts=restarts, budget_evals=restarts * per_start,
                      rng_seed=rng_seed, initial_points=starts)
    return GpModel(spec_init.with_log_params(report.best_x), data, standardize, y_mean, y_scale)
