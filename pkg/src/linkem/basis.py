"""Principal-component output basis for multivariate simulator ensembles.

An ensemble's ``l x n`` output matrix is centred on its mean run and
divided by one global scale. The SVD of the transposed result gives an
orthonormal basis of ``l``-vectors; outputs are then represented by a
few coefficients on the leading basis vectors plus a residual.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass

import numpy as np

from .design import DesignMatrix, Domain

__all__ = [
    "Ensemble",
    "PcBasis",
    "GaussianVector",
    "InsufficientDataError",
    "build_basis",
    "project",
    "reconstruct",
    "reconstruct_moments",
]


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class Ensemble:
    """Design points paired with multivariate outputs.

    ``outputs`` is ``l x n``: column ``i`` is the simulator output at
    ``design.points[i]``.
    """

    design: DesignMatrix
    outputs: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        F = np.array(self.outputs, dtype=float, order="C")
        if F.ndim != 2 or F.shape[1] != self.design.n:
            raise ValueError(f"outputs must be l x {self.design.n}, got {F.shape}")
        if F.shape[0] < 2:
            raise ValueError("outputs need l >= 2 coordinates")
        labels = tuple(self.labels) or tuple(f"y{j}" for j in range(F.shape[0]))
        if len(labels) != F.shape[0]:
            raise ValueError("one label per output coordinate required")
        F.setflags(write=False)
        object.__setattr__(self, "outputs", F)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def l(self) -> int:
        return self.outputs.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.design.domain.names) + list(self.labels))
        for x, f in zip(self.design.points, self.outputs.T):
            w.writerow([f"{v:.17g}" for v in np.concatenate([x, f])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, domain: Domain) -> "Ensemble":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
        p = domain.p
        if header[:p] != domain.names:
            raise ValueError(f"CSV input columns {header[:p]} do not match {domain.names}")
        return cls(DesignMatrix(body[:, :p], domain), body[:, p:].T, tuple(header[p:]))


@dataclass(frozen=True)
class GaussianVector:
    """Moments of a random coefficient vector.

    Components are independent unless ``cov`` is given; when present it is
    the full covariance and ``variances`` equals its diagonal.
    """

    means: np.ndarray
    variances: np.ndarray
    cov: np.ndarray | None = None

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.means, dtype=float))
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if m.shape != v.shape:
            raise ValueError("means and variances must have equal length")
        if np.any(v < 0):
            raise ValueError("variances must be non-negative")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)
        if self.cov is not None:
            c = np.asarray(self.cov, dtype=float)
            if c.shape != (m.size, m.size):
                raise ValueError("cov must be q x q")
            object.__setattr__(self, "cov", c)

    def __len__(self) -> int:
        return self.means.size

    @property
    def covariance(self) -> np.ndarray:
        return np.diag(self.variances) if self.cov is None else self.cov


@dataclass(frozen=True)
class PcBasis:
    """Centred, scaled SVD basis truncated to ``q`` vectors.

    Attributes
    ----------
    mean : (l,) array
    scale : float
        Standard deviation of all centred ensemble entries.
    gamma : (l, q) array
        Orthonormal retained basis vectors (all zero when ``degenerate``).
    singular_values : array
        All singular values of the scaled centred ensemble (up to ``n - 1``).
    residual_var : (l,) array
        Per-coordinate ensemble variance of the discarded components, in
        output units.
    degenerate : bool
        True when the centred ensemble is identically zero.
    """

    mean: np.ndarray
    scale: float
    gamma: np.ndarray
    singular_values: np.ndarray
    residual_var: np.ndarray
    degenerate: bool = False

    @property
    def q(self) -> int:
        return self.gamma.shape[1]

    @property
    def l(self) -> int:
        return self.mean.size

    def explained(self) -> np.ndarray:
        """Cumulative fraction of variance explained by the first k components."""
        s2 = self.singular_values**2
        tot = s2.sum()
        if tot == 0:
            return np.ones_like(s2)
        return np.minimum(np.cumsum(s2) / tot, 1.0)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale,
            # column-major: one list per basis vector
            "gamma": self.gamma.T.tolist(),
            "singular_values": self.singular_values.tolist(),
            "residual_var": self.residual_var.tolist(),
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcBasis":
        return cls(
            np.asarray(d["mean"], dtype=float),
            float(d["scale"]),
            np.asarray(d["gamma"], dtype=float).T.reshape(len(d["mean"]), -1),
            np.asarray(d["singular_values"], dtype=float),
            np.asarray(d["residual_var"], dtype=float),
            bool(d.get("degenerate", False)),
        )

    def checksum(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def build_basis(ens: Ensemble, fraction: float = 0.95, q: int | None = None) -> PcBasis:
    """Build the PC basis of an ensemble.

    Parameters
    ----------
    ens : Ensemble
    fraction : float
        Retain the smallest number of components whose cumulative squared
        singular values reach this fraction of the total.
    q : int, optional
        Fixed number of components; overrides ``fraction``.
    """
    n = ens.n
    if n < 3:
        raise InsufficientDataError(f"need at least 3 runs, got {n}")
    F = ens.outputs
    mu = F.mean(axis=1)
    centred = F - mu[:, None]
    scale = float(centred.std())
    # rounding in the mean leaves ~1 ulp of spread in identical columns
    degenerate = scale <= 1e-13 * max(float(np.abs(F).max()), 1e-300)
    if degenerate:
        centred = np.zeros_like(centred)
        scale = 1.0
    Fmu = centred / scale
    _, sv, Vt = np.linalg.svd(Fmu.T, full_matrices=False)
    k_max = min(n - 1, Vt.shape[0])
    sv = sv[:k_max]
    gamma_full = Vt[:k_max].T

    if q is None:
        if not 0 < fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        s2 = sv**2
        if s2.sum() == 0:
            q = 1
        else:
            cum = np.cumsum(s2) / s2.sum()
            q = int(np.searchsorted(cum, fraction - 1e-12) + 1)
    if not 1 <= q <= k_max:
        raise ValueError(f"q must lie in [1, {k_max}], got {q}")
    gamma = gamma_full[:, :q].copy()
    if degenerate:
        # no variation to explain: the basis contributes nothing
        gamma[:] = 0.0

    resid = centred - scale * gamma @ (gamma.T @ Fmu)
    residual_var = (resid**2).sum(axis=1) / (n - 1)
    return PcBasis(mu, scale, gamma, sv, residual_var, degenerate)


def project(basis: PcBasis, y) -> np.ndarray:
    """Coefficients of ``y`` (an ``l``-vector, or ``l x k`` columns) on the basis."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] != basis.l:
        raise ValueError(f"expected {basis.l} output coordinates, got {y.shape[0]}")
    centred = y - (basis.mean if y.ndim == 1 else basis.mean[:, None])
    return basis.gamma.T @ centred / basis.scale


def reconstruct(basis: PcBasis, c) -> np.ndarray:
    """Output vector(s) from coefficient vector(s) ``c`` (``q`` or ``q x k``)."""
    c = np.asarray(c, dtype=float)
    out = basis.scale * basis.gamma @ c
    return out + (basis.mean if c.ndim == 1 else basis.mean[:, None])


def reconstruct_moments(basis: PcBasis, coeff: GaussianVector) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise output mean and variance implied by coefficient moments."""
    if len(coeff) != basis.q:
        raise ValueError(f"expected {basis.q} coefficients, got {len(coeff)}")
    G = basis.gamma
    mean = basis.mean + basis.scale * G @ coeff.means
    if coeff.cov is None:
        var = basis.scale**2 * (G**2) @ coeff.variances
    else:
        var = basis.scale**2 * np.einsum("ji,ik,jk->j", G, coeff.cov, G)
    return mean, np.maximum(var, 0.0) + basis.residual_var
