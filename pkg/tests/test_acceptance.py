"""Acceptance criteria, one test each, at their stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""

import json

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from linkem.basis import build_basis, project, reconstruct
from linkem.cli import main
from linkem.linked import composed_predict, linked_predict, mc_propagate, psi_factor, xi_factor, zeta_factor
from linkem.mvem import cross_validate
from linkem.pipeline import query_point
from linkem.sim import HeatModelInput, daily_temperatures, default_temperature_series, degree_days, heat_demand
from oracles import psi_quad, xi_quad, zeta_quad


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_criterion_1_interpolation(case):
    worst_mean, worst_var = 0.0, 0.0
    for em in (case.heat, case.energy):
        for model in em.coeff_models:
            mean, var = model.predict_unit(model.X)
            worst_mean = max(worst_mean, float(np.max(np.abs(mean - model.F) / (1 + np.abs(model.F)))))
            worst_var = max(worst_var, float(np.max(var / (model.nugget * model.sigma2))))
    ok = worst_mean <= 1e-6 and worst_var <= 10
    assert record(1, ok, f"max |mean-truth|/(1+|truth|) = {worst_mean:.2e} (<= 1e-6); "
                         f"max variance/(nugget*sigma2) = {worst_var:.2e} (<= 10)")


def test_criterion_2_kernel_moment_quadrature():
    rng = np.random.default_rng(2024)
    n = 250
    worst = 0.0
    for _ in range(n):
        m, w, w2 = rng.uniform(-1, 1, 3)
        v = 10 ** rng.uniform(-6, 0)
        d = 10 ** rng.uniform(np.log10(0.05), np.log10(5))
        errs = (
            abs(xi_factor(m, v, d, w) - xi_quad(m, v, d, w)),
            abs(zeta_factor(m, v, d, w, w2) - zeta_quad(m, v, d, w, w2)),
            abs(psi_factor(m, v, d, w) - psi_quad(m, v, d, w)),
        )
        worst = max(worst, *errs)
    assert record(2, worst <= 1e-8, f"{n} (m, v, delta, w) tuples, max |closed form - quadrature| = {worst:.2e} (<= 1e-8)")


def test_criterion_3_linked_vs_monte_carlo(case):
    dom = case.heat.domain
    rng = np.random.default_rng(33)
    worst_z, worst_rel, worst_all, checked = 0.0, 0.0, 0.0, 0
    for k in range(10):
        x1 = rng.uniform(dom.lower, dom.upper)
        z = rng.uniform(*case.cfg.gas_domain, size=1)
        _, lm, lv = linked_predict(case.net, x1, z)
        mc = mc_propagate(case.net, x1, z, n_samples=100_000, seed=1000 + k)
        worst_z = max(worst_z, float(np.max(np.abs(lm - mc.mean) / mc.mean_se)))
        rel = np.abs(lv / mc.variance - 1)
        worst_all = max(worst_all, float(rel.max()))
        sel = np.sqrt(mc.variance) > 0.01 * np.abs(mc.mean)
        checked += int(sel.sum())
        if sel.any():
            worst_rel = max(worst_rel, float(rel[sel].max()))
    # the sd > 1% gate can select no years here, so the variance bound is also held on every year
    ok = worst_z <= 3 and worst_rel <= 0.05 and worst_all <= 0.05
    assert record(3, ok, f"10 points x 30 years: max |mean z| = {worst_z:.2f} (<= 3); "
                         f"max relative variance error {worst_rel:.4f} over {checked} gated year-points, "
                         f"{worst_all:.4f} over all 300 (<= 0.05)")


def test_criterion_4_pca_retention(case):
    heat = build_basis(case.heat_train, q=2).explained()[1]
    energy = build_basis(case.energy_train, q=2).explained()[1]
    ok = heat >= 0.95 and energy >= 0.88
    assert record(4, ok, f"2 PCs retain {heat:.6f} of heat-demand variance (>= 0.95) "
                         f"and {energy:.6f} of energy-cost variance (>= 0.88)")


def test_criterion_5_coverage(case):
    heat = cross_validate(case.heat, case.heat_test).coeff_coverage
    energy = cross_validate(case.energy, case.energy_test).coeff_coverage
    ok = bool(np.all(heat >= 0.85) and np.all(energy >= 0.85))
    fmt = lambda c: ", ".join(f"{x:.3f}" for x in c)  # noqa: E731
    assert record(5, ok, f"30 held-out points, 2-sd coefficient coverage heat [{fmt(heat)}], "
                         f"energy [{fmt(energy)}] (each >= 0.85)")


def test_criterion_6_underestimation(case):
    x1, z = query_point(case.cfg)
    _, _, lv = linked_predict(case.net, x1, z)
    _, _, cv = composed_predict(case.net, x1, z)
    ratio = np.sqrt(lv / cv)
    n_strict = int(np.sum(ratio >= 1.01))
    ok = bool(np.all(ratio >= 1)) and n_strict >= 20
    assert record(6, ok, f"linked/composed sd ratio in [{ratio.min():.3f}, {ratio.max():.3f}] over 30 years; "
                         f"{n_strict} years >= 1.01 (need all >= 1 and >= 20 strict)")


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("determinism")
    codes = [main(["all", "--out", str(tmp / name)]) for name in ("a", "b")]
    return tmp / "a", tmp / "b", codes


def test_criterion_7_identities_and_determinism(case, two_runs):
    checks = {}

    ens = case.heat_train
    full = build_basis(ens, q=ens.n - 1)
    back = reconstruct(full, project(full, ens.outputs))
    checks["full-basis round-trip"] = bool(np.all(np.abs(back - ens.outputs) <= 1e-10 * np.abs(ens.outputs)))

    rng = np.random.default_rng(7)
    mono = True
    for _ in range(200):
        t = rng.uniform(-10, 25, 365)
        warmer = t.copy()
        warmer[rng.integers(365)] += rng.uniform(0, 5)
        mono &= degree_days(warmer) <= degree_days(t) and degree_days(t) >= 0
    means = np.linspace(8, 13, 11)
    dd = [degree_days(daily_temperatures(m, case.cfg.amplitude)) for m in means]
    checks["degree-day monotonicity"] = bool(mono and np.all(np.diff(dd) < 0))

    temps = default_temperature_series()
    homog = True
    for shift, E, H in rng.uniform([-1, 0.5, 5], [1, 1, 20], size=(20, 3)):
        base = heat_demand(HeatModelInput(shift, E, H), temps)
        homog &= np.allclose(heat_demand(HeatModelInput(shift, E, 2 * H), temps), 2 * base, rtol=1e-13)
        homog &= np.allclose(heat_demand(HeatModelInput(shift, E / 2, H), temps), 2 * base, rtol=1e-13)
    checks["homogeneity"] = bool(homog)

    a, b, codes = two_runs
    ma = json.loads((a / "manifest.json").read_text())["files"]
    mb = json.loads((b / "manifest.json").read_text())["files"]
    same = codes == [0, 0] and ma == mb and all((a / f).read_bytes() == (b / f).read_bytes() for f in ma)
    checks["byte-identical rerun"] = bool(same)

    ok = all(checks.values())
    assert record(7, ok, "; ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items()))
