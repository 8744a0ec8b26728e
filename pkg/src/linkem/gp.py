"""Univariate Gaussian process emulator.

Squared-exponential correlation ``r(x, x') = exp(-sum_k (x_k - x'_k)^2 / d_k^2)``
on unit-cube inputs, a constant or linear mean trend, and the reference
prior ``pi(beta, sigma^2) ~ 1/sigma^2``. Trend coefficients and variance are
integrated out analytically; the correlation lengths are set to the mode
of their integrated posterior.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import pdist

from .design import DesignMatrix, Domain

__all__ = [
    "TrendSpec",
    "KernelSpec",
    "FitOptions",
    "GpModel",
    "Prediction",
    "IllConditionedError",
    "GpNumericalError",
    "ExtrapolationWarning",
    "fit_gp",
    "predict",
    "loglik_profile",
    "correlation",
    "trend_basis",
]

TrendKind = Literal["constant", "linear"]


class IllConditionedError(ValueError):
    """Duplicate (or near-duplicate) design points."""


class GpNumericalError(RuntimeError):
    """Correlation matrix could not be factorized even with the largest nugget."""


class ExtrapolationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrendSpec:
    kind: TrendKind = "linear"

    def __post_init__(self):
        if self.kind not in ("constant", "linear"):
            raise ValueError(f"unknown trend kind {self.kind!r}")

    def size(self, p: int) -> int:
        return 1 if self.kind == "constant" else p + 1


@dataclass(frozen=True)
class KernelSpec:
    lengthscales: np.ndarray
    nugget: float = 1e-8
    name: str = "squared_exponential"

    def __post_init__(self):
        if self.name != "squared_exponential":
            raise ValueError(f"unsupported kernel {self.name!r}")
        d = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(d <= 0):
            raise ValueError("lengthscales must be positive")
        if self.nugget < 0:
            raise ValueError("nugget must be non-negative")
        object.__setattr__(self, "lengthscales", d)


@dataclass(frozen=True)
class FitOptions:
    nugget: float = 1e-8
    max_nugget: float = 1e-4
    n_starts: int = 10
    log_bounds: tuple[float, float] = (np.log(0.01), np.log(10.0))
    seed: int = 0
    maxiter: int = 2000


def trend_basis(u: np.ndarray, trend: TrendSpec) -> np.ndarray:
    """Rows ``h(u)`` for unit-cube points ``u`` (``k x p``)."""
    u = np.atleast_2d(u)
    ones = np.ones((u.shape[0], 1))
    return ones if trend.kind == "constant" else np.hstack([ones, u])


def correlation(a: np.ndarray, b: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    a = np.atleast_2d(a) / lengthscales
    b = np.atleast_2d(b) / lengthscales
    d2 = (a**2).sum(1)[:, None] + (b**2).sum(1)[None, :] - 2 * a @ b.T
    return np.exp(-np.maximum(d2, 0.0))


class _Factors(NamedTuple):
    L: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    sigma2: float
    Ainv_chol: np.ndarray  # Cholesky factor of H^T K^-1 H
    KinvH: np.ndarray
    logdet_R: float
    logdet_HKH: float


def _factorize(u, f, H, lengthscales, nugget) -> _Factors:
    n, m = H.shape
    K = correlation(u, u, lengthscales) + nugget * np.eye(n)
    L = cholesky(K, lower=True)
    KinvH = cho_solve((L, True), H)
    HKH = H.T @ KinvH
    C = cholesky(HKH, lower=True)
    beta = cho_solve((C, True), KinvH.T @ f)
    resid = f - H @ beta
    alpha = cho_solve((L, True), resid)
    sigma2 = float(resid @ alpha) / (n - m)
    return _Factors(
        L, beta, alpha, sigma2, C, KinvH,
        2 * np.log(np.diag(L)).sum(), 2 * np.log(np.diag(C)).sum(),
    )


def _profile(fac: _Factors, n: int, m: int) -> float:
    if not fac.sigma2 > 0:
        # exact fit: objective unbounded; treat as the best attainable
        return np.inf if fac.sigma2 == 0 else -np.inf
    return -0.5 * (n - m) * np.log(fac.sigma2) - 0.5 * fac.logdet_R - 0.5 * fac.logdet_HKH


def loglik_profile(X, f, trend: TrendSpec, lengthscales, nugget: float = 1e-8) -> float:
    """Integrated log posterior of the correlation lengths, up to a constant.

    ``X`` is unit-cube inputs (or a :class:`DesignMatrix`, mapped to the unit
    cube). Returns ``-inf`` when the correlation matrix is not positive
    definite.
    """
    u = X.unit() if isinstance(X, DesignMatrix) else np.atleast_2d(np.asarray(X, dtype=float))
    f = np.asarray(f, dtype=float)
    H = trend_basis(u, trend)
    try:
        fac = _factorize(u, f, H, np.asarray(lengthscales, dtype=float), nugget)
    except (LinAlgError, ValueError):
        return -np.inf
    return _profile(fac, *H.shape)


def _coincident(a: np.ndarray, b: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    return (np.abs(a[:, None, :] - b[None, :, :]).max(-1) <= tol).astype(float)


class Prediction(NamedTuple):
    mean: np.ndarray
    variance: np.ndarray
    extrapolated: np.ndarray


@dataclass(frozen=True)
class GpModel:
    """A fitted emulator. Build with :func:`fit_gp`; treat as immutable."""

    domain: Domain
    X: np.ndarray  # unit-cube training inputs, n x p
    F: np.ndarray
    trend: TrendSpec
    beta: np.ndarray
    kernel: KernelSpec
    sigma2: float
    L: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    hkh_chol: np.ndarray = field(repr=False)
    KinvH: np.ndarray = field(repr=False)
    loglik: float = float("nan")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def lengthscales(self) -> np.ndarray:
        return self.kernel.lengthscales

    @property
    def nugget(self) -> float:
        return self.kernel.nugget

    def to_unit(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (x - self.domain.lower) / (self.domain.upper - self.domain.lower)

    def predict_unit(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance at unit-cube points ``u`` (``k x p``), no range checks."""
        u = np.atleast_2d(u)
        r = correlation(u, self.X, self.lengthscales)  # k x n
        # nugget acts as a white-noise term: it correlates exactly coincident inputs
        r = r + self.nugget * _coincident(u, self.X)
        h = trend_basis(u, self.trend)
        mean = h @ self.beta + r @ self.alpha
        v = solve_triangular(self.L, r.T, lower=True)  # L^-1 r
        w = h - r @ self.KinvH  # u(x) = h - H^T K^-1 r, row-wise
        z = solve_triangular(self.hkh_chol, w.T, lower=True)
        var = self.sigma2 * (1.0 + self.nugget - (v**2).sum(0) + (z**2).sum(0))
        return mean, np.maximum(var, 0.0)

    def predict(self, x) -> Prediction:
        u = self.to_unit(x)
        out = np.any((u < -1e-12) | (u > 1 + 1e-12), axis=1)
        if out.any():
            warnings.warn(f"{int(out.sum())} prediction point(s) outside the training domain",
                          ExtrapolationWarning, stacklevel=2)
        mean, var = self.predict_unit(u)
        return Prediction(mean, var, out)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "trend": self.trend.kind,
            "beta": self.beta.tolist(),
            "lengthscales": self.lengthscales.tolist(),
            "nugget": self.nugget,
            "sigma2": self.sigma2,
            "X": self.X.tolist(),
            "F": self.F.tolist(),
            "alpha_check": _alpha_check(self.alpha),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "GpModel":
        domain = Domain.from_dict(d["domain"])
        trend = TrendSpec(d["trend"])
        X = np.asarray(d["X"], dtype=float).reshape(-1, domain.p)
        F = np.asarray(d["F"], dtype=float)
        kernel = KernelSpec(np.asarray(d["lengthscales"]), float(d["nugget"]))
        model = _assemble(domain, X, F, trend, kernel)
        stored = d.get("alpha_check")
        if stored is not None and not np.allclose(_alpha_check(model.alpha), stored, rtol=1e-6, atol=1e-12):
            raise ValueError("GP weights recomputed on load do not match the stored checksum")
        return model

    @classmethod
    def from_json(cls, text: str) -> "GpModel":
        return cls.from_dict(json.loads(text))


def _alpha_check(alpha: np.ndarray) -> list[float]:
    idx = np.arange(1, alpha.size + 1)
    return [float(alpha.sum()), float(alpha @ alpha), float(idx @ alpha)]


def _assemble(domain, u, f, trend, kernel, loglik=float("nan")) -> GpModel:
    H = trend_basis(u, trend)
    fac = _factorize(u, f, H, kernel.lengthscales, kernel.nugget)
    return GpModel(domain, u, f, trend, fac.beta, kernel, fac.sigma2,
                   fac.L, fac.alpha, fac.Ainv_chol, fac.KinvH, loglik)


def fit_gp(
    X: DesignMatrix,
    f,
    trend: TrendSpec | None = None,
    opts: FitOptions | None = None,
) -> GpModel:
    """Fit a GP emulator to runs ``f`` at design ``X``.

    Correlation lengths maximize :func:`loglik_profile` by multi-start
    bounded Nelder-Mead on log-lengthscales. The nugget is escalated by
    factors of ten (up to ``opts.max_nugget``) if the final correlation
    matrix cannot be factorized.

    Raises
    ------
    IllConditionedError
        Two design points coincide within 1e-10 in the unit cube.
    GpNumericalError
        Factorization still fails at the largest nugget.
    """
    trend = TrendSpec() if trend is None else trend
    opts = FitOptions() if opts is None else opts
    u = X.unit()
    f = np.asarray(f, dtype=float)
    n, p = u.shape
    m = trend.size(p)
    if f.shape != (n,):
        raise ValueError(f"expected {n} outputs, got shape {f.shape}")
    if n < m + 2:
        raise ValueError(f"need at least {m + 2} runs for a {trend.kind} trend in {p} dims, got {n}")
    if n > 1 and pdist(u).min() < 1e-10:
        raise IllConditionedError("duplicate design points")
    # canonical row order makes the fit independent of how runs are listed
    order = np.lexsort(u.T[::-1])
    u, f = u[order], f[order]

    H = trend_basis(u, trend)
    lo, hi = opts.log_bounds

    def objective(theta, nugget):
        try:
            fac = _factorize(u, f, H, np.exp(theta), nugget)
        except (LinAlgError, ValueError):
            return np.inf
        val = _profile(fac, n, m)
        return -val if np.isfinite(val) else (np.inf if val < 0 else -1e300)

    rng = np.random.default_rng(opts.seed)
    starts = [np.full(p, np.log(0.5))]
    starts += list(rng.uniform(lo, hi, size=(max(opts.n_starts - 1, 0), p)))
    nugget = opts.nugget
    while True:
        best_theta, best_val = None, np.inf
        for x0 in starts:
            res = minimize(objective, x0, args=(nugget,), method="Nelder-Mead",
                           bounds=[(lo, hi)] * p,
                           options={"maxiter": opts.maxiter, "xatol": 1e-6, "fatol": 1e-10})
            if res.fun < best_val:
                best_theta, best_val = res.x, res.fun
        if best_theta is not None and np.isfinite(best_val):
            try:
                return _assemble(X.domain, u, f, trend,
                                 KernelSpec(np.exp(best_theta), nugget), -best_val)
            except (LinAlgError, ValueError):
                pass
        nugget *= 10
        if nugget > opts.max_nugget * (1 + 1e-9):
            raise GpNumericalError("correlation matrix not positive definite at maximum nugget")


def predict(model: GpModel, x) -> tuple[float, float]:
    """Predictive mean and variance at a single point ``x`` in model units."""
    pred = model.predict(np.atleast_2d(x))
    return float(pred.mean[0]), float(pred.variance[0])
