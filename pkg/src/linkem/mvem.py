"""Multivariate emulators: a PC basis plus one GP per retained coefficient."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .basis import Ensemble, GaussianVector, PcBasis, build_basis, project, reconstruct_moments
from .design import Domain
from .gp import FitOptions, GpModel, TrendSpec, fit_gp

__all__ = [
    "MvEmulator",
    "GaussianVector",
    "ValidationReport",
    "fit_mv",
    "predict_mv",
    "cross_validate",
]


@dataclass(frozen=True)
class MvEmulator:
    basis: PcBasis
    coeff_models: tuple[GpModel, ...]
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "coeff_models", tuple(self.coeff_models))
        if len(self.coeff_models) != self.basis.q:
            raise ValueError(f"{len(self.coeff_models)} coefficient models for q={self.basis.q}")
        X0 = self.coeff_models[0].X
        if any(not np.array_equal(m.X, X0) for m in self.coeff_models[1:]):
            raise ValueError("coefficient models must share one training design")

    @property
    def domain(self) -> Domain:
        return self.coeff_models[0].domain

    @property
    def q(self) -> int:
        return self.basis.q

    def coefficients(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Coefficient means and variances at points ``x`` (``k x p``), each ``k x q``."""
        preds = [m.predict(np.atleast_2d(x)) for m in self.coeff_models]
        return np.column_stack([p.mean for p in preds]), np.column_stack([p.variance for p in preds])

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "basis": self.basis.to_dict(),
            "coeff_models": [m.to_dict() for m in self.coeff_models],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "MvEmulator":
        return cls(
            PcBasis.from_dict(d["basis"]),
            tuple(GpModel.from_dict(m) for m in d["coeff_models"]),
            d.get("provenance", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "MvEmulator":
        return cls.from_dict(json.loads(text))


def fit_mv(
    ens: Ensemble,
    trend: TrendSpec | None = None,
    fraction: float = 0.95,
    q: int | None = None,
    opts: FitOptions | None = None,
    provenance: str = "",
) -> MvEmulator:
    """Build the basis of ``ens`` and fit an independent GP to each coefficient."""
    basis = build_basis(ens, fraction=fraction, q=q)
    C = project(basis, ens.outputs)  # q x n
    models = tuple(fit_gp(ens.design, C[i], trend, opts) for i in range(basis.q))
    return MvEmulator(basis, models, provenance)


def predict_mv(em: MvEmulator, x) -> tuple[GaussianVector, np.ndarray, np.ndarray]:
    """Coefficient moments and reconstructed output mean/variance at one point."""
    m, v = em.coefficients(np.atleast_2d(x))
    coeff = GaussianVector(m[0], v[0])
    mean, var = reconstruct_moments(em.basis, coeff)
    return coeff, mean, var


@dataclass
class ValidationReport:
    """Held-out diagnostics.

    ``coeff_*`` arrays are ``n_test x q``; ``output_*`` arrays are
    ``n_test x l``.
    """

    coeff_mean: np.ndarray
    coeff_sd: np.ndarray
    coeff_true: np.ndarray
    output_mean: np.ndarray
    output_sd: np.ndarray
    output_true: np.ndarray
    test_points: np.ndarray
    labels: tuple[str, ...] = field(default=())
    k: float = 2.0
    # relative slack for round-off where the predictive sd is exactly zero
    roundoff: float = 1e-9

    def _inside(self, true, mean, sd):
        return np.abs(true - mean) <= self.k * sd + self.roundoff * (1 + np.abs(true))

    @property
    def coeff_inside(self) -> np.ndarray:
        return self._inside(self.coeff_true, self.coeff_mean, self.coeff_sd)

    @property
    def output_inside(self) -> np.ndarray:
        return self._inside(self.output_true, self.output_mean, self.output_sd)

    @property
    def coeff_coverage(self) -> np.ndarray:
        return self.coeff_inside.mean(axis=0)

    @property
    def output_coverage(self) -> np.ndarray:
        return self.output_inside.mean(axis=0)

    def to_csv(self) -> str:
        """One row per test point per coefficient."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "coefficient", "mean", "sd", "true", "inside"])
        n, q = self.coeff_mean.shape
        for i in range(n):
            for j in range(q):
                w.writerow([i, j + 1, f"{self.coeff_mean[i, j]:.17g}", f"{self.coeff_sd[i, j]:.17g}",
                            f"{self.coeff_true[i, j]:.17g}", int(self.coeff_inside[i, j])])
        return buf.getvalue()

    def output_csv(self) -> str:
        """One row per test point per output coordinate."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "output", "mean", "sd", "true", "inside"])
        labels = self.labels or tuple(str(j) for j in range(self.output_mean.shape[1]))
        for i in range(self.output_mean.shape[0]):
            for j, lab in enumerate(labels):
                w.writerow([i, lab, f"{self.output_mean[i, j]:.17g}", f"{self.output_sd[i, j]:.17g}",
                            f"{self.output_true[i, j]:.17g}", int(self.output_inside[i, j])])
        return buf.getvalue()


def cross_validate(em: MvEmulator | Ensemble, test: Ensemble, **fit_kwargs) -> ValidationReport:
    """Compare emulator predictions with held-out runs.

    ``em`` may be a fitted emulator or a training ensemble, in which case it
    is fitted first with ``fit_kwargs``. True coefficients are the
    projections of the test outputs onto the emulator's own basis.
    """
    if isinstance(em, Ensemble):
        em = fit_mv(em, **fit_kwargs)
    X = test.design.points
    cm, cv = em.coefficients(X)
    ctrue = project(em.basis, test.outputs).T
    om, ov = [], []
    for mi, vi in zip(cm, cv):
        mean, var = reconstruct_moments(em.basis, GaussianVector(mi, vi))
        om.append(mean)
        ov.append(var)
    return ValidationReport(
        cm, np.sqrt(cv), ctrue,
        np.array(om), np.sqrt(np.array(ov)), test.outputs.T.copy(),
        X.copy(), test.labels,
    )
