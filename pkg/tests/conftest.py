from __future__ import annotations

from types import SimpleNamespace

import pytest

from linkem.pipeline import (
    PipelineConfig,
    assemble_network,
    coefficient_domain,
    energy_design,
    fit_layer,
    heat_basis,
    heat_domain,
    run_energy,
    run_heat,
)
from linkem.design import lhc_maximin, random_test_design

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def case():
    """The default two-layer case study, fitted once per test session."""
    cfg = PipelineConfig()
    dom = heat_domain(cfg)
    h_train = run_heat(cfg, lhc_maximin(cfg.n_train, dom, cfg.lhc_restarts, cfg.seeds["heat_train"]))
    h_test = run_heat(cfg, random_test_design(cfg.n_test, dom, cfg.seeds["heat_test"]))
    basis = heat_basis(cfg, h_train)
    cdom = coefficient_domain(cfg, basis, h_train)
    e_train = run_energy(cfg, energy_design(cfg, cdom, "train"), basis)
    e_test = run_energy(cfg, energy_design(cfg, cdom, "test"), basis)
    heat = fit_layer(cfg, h_train, "heat")
    energy = fit_layer(cfg, e_train, "energy", provenance=f"heat-basis:{basis.checksum()}")
    return SimpleNamespace(
        cfg=cfg, heat_train=h_train, heat_test=h_test, energy_train=e_train, energy_test=e_test,
        heat=heat, energy=energy, net=assemble_network(heat, energy),
    )
