"""Component simulators for the heat-demand / operating-cost case study.

Two deterministic models:

* a degree-day heat demand model driven by an annual-mean surface
  temperature scenario, building efficiency and transmission coefficient;
* a seasonal-share gas boiler cost model driven by the heat demand and a
  gas price scenario.

Scenario series are low/central/high triples and an input ``shift`` in
``[-1, 1]`` interpolates between them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "YEARS",
    "ScenarioSeries",
    "SeasonShares",
    "HeatModelInput",
    "CostParams",
    "HEAT_SHARE_PERCENT",
    "default_temperature_series",
    "default_gas_price_series",
    "interpolate_series",
    "daily_temperatures",
    "degree_days",
    "heat_demand",
    "energy_cost",
]

YEARS = np.arange(2021, 2051)

# Share of annual heat demand (%), rows day/night, columns winter..autumn.
HEAT_SHARE_PERCENT = {
    "winter": (26.5, 4.66),
    "spring": (17.7, 5.11),
    "summer": (12.2, 4.12),
    "autumn": (24.5, 5.14),
}

SEASONS = ("winter", "spring", "summer", "autumn")


@dataclass(frozen=True)
class ScenarioSeries:
    """Low / central / high annual projections over ``years``."""

    low: np.ndarray
    central: np.ndarray
    high: np.ndarray
    years: np.ndarray = field(default_factory=lambda: YEARS.copy())

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=float) for a in (self.low, self.central, self.high)]
        years = np.asarray(self.years, dtype=int)
        if not all(a.shape == years.shape for a in arrs):
            raise ValueError("low, central, high and years must have equal length")
        if np.any(np.diff(years) <= 0):
            raise ValueError("years must be strictly increasing")
        for name, a in zip(("low", "central", "high"), arrs):
            object.__setattr__(self, name, a)
        object.__setattr__(self, "years", years)

    def to_dict(self) -> dict:
        return {
            "years": self.years.tolist(),
            "low": self.low.tolist(),
            "central": self.central.tolist(),
            "high": self.high.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSeries":
        return cls(d["low"], d["central"], d["high"], d.get("years", YEARS))


def default_temperature_series(
    start: float = 9.5, end: float = 11.5, spread: float = 1.2
) -> ScenarioSeries:
    """Linear warming central path with a symmetric +/- ``spread`` band (deg C)."""
    central = np.linspace(start, end, YEARS.size)
    return ScenarioSeries(central - spread, central, central + spread)


def default_gas_price_series(
    start: float = 0.05, end: float = 0.08, rel_spread: float = 0.3
) -> ScenarioSeries:
    """Linear central gas price (currency/kWh) with a +/- ``rel_spread`` band."""
    central = np.linspace(start, end, YEARS.size)
    return ScenarioSeries(central * (1 - rel_spread), central, central * (1 + rel_spread))


def interpolate_series(s: ScenarioSeries, shift: float) -> np.ndarray:
    """Piecewise-linear interpolation: -1 -> low, 0 -> central, +1 -> high."""
    shift = float(shift)
    if not -1.0 <= shift <= 1.0:
        raise ValueError(f"shift must lie in [-1, 1], got {shift}")
    if shift >= 0:
        return s.central + shift * (s.high - s.central)
    return s.central + (-shift) * (s.low - s.central)


@dataclass(frozen=True)
class SeasonShares:
    """Day/night share of annual heat demand for each season.

    ``day`` and ``night`` are 4-vectors ordered winter, spring, summer,
    autumn. Inputs are normalized to sum to one; published tables rounded
    to a few significant digits are accepted if they sum to within
    ``tolerance`` of one.
    """

    day: np.ndarray
    night: np.ndarray
    raw_total: float = 1.0

    def __init__(self, day, night, tolerance: float = 1e-2):
        day = np.asarray(day, dtype=float)
        night = np.asarray(night, dtype=float)
        if day.shape != (4,) or night.shape != (4,):
            raise ValueError("shares need 4 seasons x (day, night)")
        if np.any(day < 0) or np.any(night < 0):
            raise ValueError("shares must be non-negative")
        total = float(day.sum() + night.sum())
        if abs(total - 1.0) > tolerance:
            raise ValueError(f"shares sum to {total}, not 1")
        object.__setattr__(self, "day", day / total)
        object.__setattr__(self, "night", night / total)
        object.__setattr__(self, "raw_total", total)

    @classmethod
    def published(cls) -> "SeasonShares":
        day = [HEAT_SHARE_PERCENT[s][0] / 100 for s in SEASONS]
        night = [HEAT_SHARE_PERCENT[s][1] / 100 for s in SEASONS]
        return cls(day, night)

    def to_dict(self) -> dict:
        return {s: [float(d), float(n)] for s, d, n in zip(SEASONS, self.day, self.night)}

    @classmethod
    def from_dict(cls, d: dict) -> "SeasonShares":
        scale = 100.0 if sum(sum(d[s]) for s in SEASONS) > 2 else 1.0
        return cls([d[s][0] / scale for s in SEASONS], [d[s][1] / scale for s in SEASONS])


@dataclass(frozen=True)
class HeatModelInput:
    shift: float
    efficiency: float
    transmission: float

    def __post_init__(self):
        if not -1 <= self.shift <= 1:
            raise ValueError(f"temperature shift {self.shift} outside [-1, 1]")
        if self.efficiency <= 0:
            raise ValueError("efficiency must be positive")
        if self.transmission < 0:
            raise ValueError("transmission coefficient must be non-negative")


@dataclass(frozen=True)
class CostParams:
    boiler_efficiency: float = 0.85
    day_multiplier: float = 1.0
    night_multiplier: float = 0.9
    fixed_om: float = 500.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def daily_temperatures(annual_mean: float, amplitude: float = 6.0, n_days: int = 365) -> np.ndarray:
    """Deterministic daily profile: coldest on day 15 (mid-January)."""
    d = np.arange(n_days)
    return annual_mean - amplitude * np.cos(2 * np.pi * (d - 15) / n_days)


def degree_days(daily_temps, base: float = 15.5) -> float:
    """Heating degree days: sum of ``max(0, base - T_d)``."""
    t = np.asarray(daily_temps, dtype=float)
    return float(np.maximum(0.0, base - t).sum())


def heat_demand(
    inp: HeatModelInput,
    temps: ScenarioSeries,
    base: float = 15.5,
    amplitude: float = 6.0,
) -> np.ndarray:
    """Annual heat demand in kWh for each scenario year.

    ``H [kW/degC] * DD [degC day] * 24 [h/day] / E``.
    """
    means = interpolate_series(temps, inp.shift)
    dd = np.array([degree_days(daily_temperatures(m, amplitude), base) for m in means])
    return inp.transmission * dd * 24.0 / inp.efficiency


def energy_cost(
    demand,
    gas_shift: float,
    prices: ScenarioSeries,
    shares: SeasonShares | None = None,
    params: CostParams | None = None,
) -> np.ndarray:
    """Annual operating cost of meeting ``demand`` with a gas boiler."""
    shares = SeasonShares.published() if shares is None else shares
    params = CostParams() if params is None else params
    demand = np.asarray(demand, dtype=float)
    if np.any(demand < 0):
        raise ValueError("heat demand must be non-negative")
    price = interpolate_series(prices, gas_shift)
    if demand.shape != price.shape:
        raise ValueError(f"demand has {demand.size} years, prices have {price.size}")
    fuel = demand / params.boiler_efficiency * price
    cost = np.zeros_like(fuel)
    for d_share, n_share in zip(shares.day, shares.night):
        cost += d_share * fuel * params.day_multiplier
        cost += n_share * fuel * params.night_multiplier
    return cost + params.fixed_om
