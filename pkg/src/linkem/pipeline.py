"""Case-study pipeline: heat demand emulator linked to an operating cost emulator.

Stage functions are pure given a :class:`PipelineConfig`; the CLI adds
persistence and the run manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import Ensemble, PcBasis, build_basis, project, reconstruct
from .design import DesignMatrix, Domain, lhc_maximin, random_test_design
from .gp import FitOptions, TrendSpec
from .linked import LinkedNetwork
from .mvem import MvEmulator, fit_mv
from .sim import (
    YEARS,
    CostParams,
    HeatModelInput,
    ScenarioSeries,
    SeasonShares,
    default_gas_price_series,
    default_temperature_series,
    energy_cost,
    heat_demand,
)

__all__ = [
    "ConfigError",
    "PipelineConfig",
    "heat_domain",
    "run_heat",
    "run_energy",
    "coefficient_domain",
    "energy_design",
    "run_chain",
    "fit_layer",
    "assemble_network",
    "query_point",
    "heat_basis",
]

YEAR_LABELS = tuple(str(y) for y in YEARS)
GAS = "shift_gas"


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    heat_domain: dict = field(default_factory=lambda: {
        "shift_T": [-1.0, 1.0], "E": [0.5, 1.0], "H": [5.0, 20.0]})
    gas_domain: list = field(default_factory=lambda: [-1.0, 1.0])
    n_train: int = 30
    n_test: int = 30
    lhc_restarts: int = 50
    # fixed number of retained components; null -> use retain_fraction
    q_heat: int | None = 2
    q_energy: int | None = 2
    retain_fraction: float = 0.95
    trend_heat: str = "linear"
    trend_energy: str = "linear"
    coeff_padding: float = 0.05
    n_starts: int = 10
    nugget: float = 1e-8
    seeds: dict = field(default_factory=lambda: {
        "heat_train": 1, "heat_test": 101, "energy_train": 2, "energy_test": 102,
        "fit": 0, "mc": 7})
    temperature: dict = field(default_factory=lambda: default_temperature_series().to_dict())
    gas_price: dict = field(default_factory=lambda: default_gas_price_series().to_dict())
    shares: dict = field(default_factory=lambda: SeasonShares.published().to_dict())
    base_temperature: float = 15.5
    amplitude: float = 8.0
    cost: dict = field(default_factory=lambda: CostParams().to_dict())
    coverage_threshold: float = 0.85
    query: dict = field(default_factory=lambda: {
        "shift_T": 0.3, "E": 0.6, "H": 15.0, "shift_gas": 0.2})
    mc_samples: int = 100_000

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            Domain.from_dict(self.heat_domain)
            Domain([(GAS, *self.gas_domain)])
            self.temperature_series()
            self.gas_price_series()
            self.season_shares()
            CostParams(**self.cost)
            TrendSpec(self.trend_heat)
            TrendSpec(self.trend_energy)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        needed = {"heat_train", "heat_test", "energy_train", "energy_test", "fit", "mc"}
        missing = needed - set(self.seeds)
        if missing:
            raise ConfigError(f"missing seeds {sorted(missing)}")
        if self.n_train < 3 or self.n_test < 1:
            raise ConfigError("n_train must be >= 3 and n_test >= 1")
        if not 0 < self.retain_fraction <= 1:
            raise ConfigError("retain_fraction must lie in (0, 1]")
        if set(self.query) != set(self.heat_domain) | {GAS}:
            raise ConfigError(f"query must set {sorted(set(self.heat_domain) | {GAS})}")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def checksum(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def temperature_series(self) -> ScenarioSeries:
        return ScenarioSeries.from_dict(self.temperature)

    def gas_price_series(self) -> ScenarioSeries:
        return ScenarioSeries.from_dict(self.gas_price)

    def season_shares(self) -> SeasonShares:
        return SeasonShares.from_dict(self.shares)

    def cost_params(self) -> CostParams:
        return CostParams(**self.cost)

    def fit_options(self) -> FitOptions:
        return FitOptions(nugget=self.nugget, n_starts=self.n_starts, seed=self.seeds["fit"])


def heat_domain(cfg: PipelineConfig) -> Domain:
    return Domain.from_dict(cfg.heat_domain)


def run_heat(cfg: PipelineConfig, design: DesignMatrix) -> Ensemble:
    T = cfg.temperature_series()
    cols = [heat_demand(HeatModelInput(*x), T, cfg.base_temperature, cfg.amplitude)
            for x in design.points]
    return Ensemble(design, np.column_stack(cols), YEAR_LABELS)


def _cost(cfg: PipelineConfig, demand, gas_shift):
    return energy_cost(demand, gas_shift, cfg.gas_price_series(), cfg.season_shares(), cfg.cost_params())


def coefficient_domain(cfg: PipelineConfig, heat_basis: PcBasis, heat_ens: Ensemble) -> Domain:
    """Energy-layer input box: heat coefficients seen in training, padded, plus gas shift."""
    C = project(heat_basis, heat_ens.outputs)
    lo, hi = C.min(axis=1), C.max(axis=1)
    pad = cfg.coeff_padding * (hi - lo)
    dims = [(f"c{i + 1}", lo[i] - pad[i], hi[i] + pad[i]) for i in range(heat_basis.q)]
    return Domain(dims + [(GAS, *cfg.gas_domain)])


def run_energy(cfg: PipelineConfig, design: DesignMatrix, heat_basis: PcBasis) -> Ensemble:
    """Evaluate the cost model at points ``(c_1..c_q, shift_gas)``.

    Heat demand is reconstructed from the coefficients with the heat basis,
    so projecting it back gives the design coefficients exactly.
    """
    q = heat_basis.q
    cols = []
    for x in design.points:
        demand = reconstruct(heat_basis, x[:q])
        if np.any(demand < 0):
            raise ValueError("reconstructed heat demand negative; shrink coeff_padding")
        cols.append(_cost(cfg, demand, x[q]))
    return Ensemble(design, np.column_stack(cols), YEAR_LABELS)


def energy_design(cfg: PipelineConfig, domain: Domain, which: str) -> DesignMatrix:
    if which == "train":
        return lhc_maximin(cfg.n_train, domain, cfg.lhc_restarts, cfg.seeds["energy_train"])
    return random_test_design(cfg.n_test, domain, cfg.seeds["energy_test"])


def run_chain(cfg: PipelineConfig, x1, gas_shift: float) -> np.ndarray:
    """Full simulator chain: heat demand model feeding the cost model."""
    demand = heat_demand(HeatModelInput(*x1), cfg.temperature_series(), cfg.base_temperature, cfg.amplitude)
    return _cost(cfg, demand, gas_shift)


def fit_layer(cfg: PipelineConfig, ens: Ensemble, layer: str, provenance: str = "") -> MvEmulator:
    q = cfg.q_heat if layer == "heat" else cfg.q_energy
    trend = TrendSpec(cfg.trend_heat if layer == "heat" else cfg.trend_energy)
    return fit_mv(ens, trend, cfg.retain_fraction, q, cfg.fit_options(), provenance)


def heat_basis(cfg: PipelineConfig, ens: Ensemble) -> PcBasis:
    return build_basis(ens, cfg.retain_fraction, cfg.q_heat)


def assemble_network(heat: MvEmulator, energy: MvEmulator) -> LinkedNetwork:
    wiring = list(range(heat.q)) + [GAS]
    return LinkedNetwork.two_layer(heat, energy, wiring)


def query_point(cfg: PipelineConfig, query: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    query = cfg.query if query is None else query
    names = heat_domain(cfg).names
    return np.array([query[n] for n in names], dtype=float), np.array([query[GAS]], dtype=float)
