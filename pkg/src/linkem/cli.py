"""Command-line pipeline.

Every subcommand reads one JSON config (``--config``) and works inside an
output directory (``--out``) that holds the artifacts and ``manifest.json``.
Stages check that the artifacts they consume are listed in the manifest
with matching checksums.

Exit codes: 0 success, 2 config error, 3 missing artifact,
4 validation threshold failure, 5 artifact checksum mismatch.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .basis import Ensemble, PcBasis
from .design import DesignMatrix, Domain, lhc_maximin, random_test_design
from .linked import LinkedNetwork, composed_predict, linked_predict, mc_propagate, projection_csv
from .mvem import MvEmulator, cross_validate
from .pipeline import (
    ConfigError,
    PipelineConfig,
    assemble_network,
    coefficient_domain,
    energy_design,
    fit_layer,
    heat_basis,
    heat_domain,
    query_point,
    run_chain,
    run_energy,
    run_heat,
)
from .sim import YEARS

log = logging.getLogger("linkem")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_THRESHOLD = 4
EXIT_CHECKSUM = 5


class PipelineError(Exception):
    code = 1


class MissingArtifact(PipelineError):
    code = EXIT_MISSING


class ChecksumMismatch(PipelineError):
    code = EXIT_CHECKSUM


class ThresholdFailure(PipelineError):
    code = EXIT_THRESHOLD


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Workspace:
    """Output directory plus its manifest."""

    def __init__(self, out: Path, cfg: PipelineConfig):
        self.out = Path(out)
        self.cfg = cfg
        self.path = self.out / "manifest.json"
        if self.path.exists():
            self.manifest = json.loads(self.path.read_text())
            if self.manifest.get("config_checksum") != cfg.checksum():
                raise ChecksumMismatch(
                    f"{self.out} was produced with a different config; use a fresh --out")
        else:
            self.manifest = {
                "config_checksum": cfg.checksum(),
                "versions": {
                    "linkem": __version__,
                    "python": platform.python_version(),
                    "numpy": np.__version__,
                    "scipy": scipy.__version__,
                },
                "files": {},
                "timings": {},
            }

    def write(self, rel: str, text: str):
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        p.write_bytes(data)
        self.manifest["files"][rel] = _sha(data)

    def read(self, rel: str) -> str:
        if rel not in self.manifest["files"] or not (self.out / rel).exists():
            raise MissingArtifact(f"required artifact {rel} missing; run the earlier stage first")
        data = (self.out / rel).read_bytes()
        if _sha(data) != self.manifest["files"][rel]:
            raise ChecksumMismatch(f"{rel} changed since it was written")
        return data.decode()

    def save(self, stage: str, seconds: float):
        self.manifest["timings"][stage] = round(seconds, 3)
        self.out.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.manifest, indent=1, sort_keys=True) + "\n")


def _domain_json(domain: Domain) -> str:
    return json.dumps(domain.to_dict(), indent=1) + "\n"


def _load_domain(ws: Workspace, rel: str) -> Domain:
    return Domain.from_dict(json.loads(ws.read(rel)))


# -- stages ------------------------------------------------------------------


def cmd_design(ws: Workspace):
    cfg = ws.cfg
    dom = heat_domain(cfg)
    ws.write("config.json", json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    ws.write("designs/heat_domain.json", _domain_json(dom))
    train = lhc_maximin(cfg.n_train, dom, cfg.lhc_restarts, cfg.seeds["heat_train"])
    test = random_test_design(cfg.n_test, dom, cfg.seeds["heat_test"])
    ws.write("designs/heat_train.csv", train.to_csv())
    ws.write("designs/heat_test.csv", test.to_csv())


def cmd_run_ensemble(ws: Workspace):
    cfg = ws.cfg
    dom = _load_domain(ws, "designs/heat_domain.json")
    train = DesignMatrix.from_csv(ws.read("designs/heat_train.csv"), dom)
    test = DesignMatrix.from_csv(ws.read("designs/heat_test.csv"), dom)
    h_train, h_test = run_heat(cfg, train), run_heat(cfg, test)
    ws.write("ensembles/heat_train.csv", h_train.to_csv())
    ws.write("ensembles/heat_test.csv", h_test.to_csv())

    basis = heat_basis(cfg, h_train)
    ws.write("bases/heat_basis.json", json.dumps(basis.to_dict(), indent=1) + "\n")
    cdom = coefficient_domain(cfg, basis, h_train)
    ws.write("designs/energy_domain.json", _domain_json(cdom))
    e_train_design = energy_design(cfg, cdom, "train")
    e_test_design = energy_design(cfg, cdom, "test")
    ws.write("designs/energy_train.csv", e_train_design.to_csv())
    ws.write("designs/energy_test.csv", e_test_design.to_csv())
    ws.write("ensembles/energy_train.csv", run_energy(cfg, e_train_design, basis).to_csv())
    ws.write("ensembles/energy_test.csv", run_energy(cfg, e_test_design, basis).to_csv())


def _load_ensembles(ws: Workspace, layer: str):
    dom = _load_domain(ws, f"designs/{layer}_domain.json")
    return (Ensemble.from_csv(ws.read(f"ensembles/{layer}_train.csv"), dom),
            Ensemble.from_csv(ws.read(f"ensembles/{layer}_test.csv"), dom))


def cmd_fit(ws: Workspace):
    cfg = ws.cfg
    h_train, _ = _load_ensembles(ws, "heat")
    e_train, _ = _load_ensembles(ws, "energy")
    stored = PcBasis.from_dict(json.loads(ws.read("bases/heat_basis.json")))
    heat = fit_layer(cfg, h_train, "heat", provenance="heat demand emulator")
    if heat.basis.checksum() != stored.checksum():
        raise ChecksumMismatch("refitted heat basis differs from the one used to build the energy ensemble")
    energy = fit_layer(cfg, e_train, "energy", provenance=f"heat-basis:{stored.checksum()}")
    ws.write("emulators/heat.json", heat.to_json() + "\n")
    ws.write("emulators/energy.json", energy.to_json() + "\n")


def _load_emulators(ws: Workspace):
    return (MvEmulator.from_json(ws.read("emulators/heat.json")),
            MvEmulator.from_json(ws.read("emulators/energy.json")))


def cmd_validate(ws: Workspace) -> dict:
    heat, energy = _load_emulators(ws)
    rows = ["emulator,component,kind,coverage,n_test"]
    summary = {}
    for name, em in (("heat", heat), ("energy", energy)):
        _, test = _load_ensembles(ws, name)
        rep = cross_validate(em, test)
        ws.write(f"validation/{name}_coefficients.csv", rep.to_csv())
        ws.write(f"validation/{name}_outputs.csv", rep.output_csv())
        for i, c in enumerate(rep.coeff_coverage):
            rows.append(f"{name},c{i + 1},coefficient,{c:.17g},{test.n}")
        rows.append(f"{name},all,output_mean,{rep.output_coverage.mean():.17g},{test.n}")
        summary[name] = rep.coeff_coverage
    ws.write("validation/summary.csv", "\n".join(rows) + "\n")
    for name, cov in summary.items():
        print(f"{name}: 2-sd coefficient coverage " + ", ".join(f"c{i + 1}={c:.3f}" for i, c in enumerate(cov)))
    return summary


def cmd_link(ws: Workspace):
    heat, energy = _load_emulators(ws)
    net = assemble_network(heat, energy)
    ws.write("network.json", net.to_json() + "\n")


def cmd_project(ws: Workspace, query: dict | None = None):
    cfg = ws.cfg
    net = LinkedNetwork.from_json(ws.read("network.json"))
    x1, z = query_point(cfg, query)
    _, lm, lv = linked_predict(net, x1, z)
    _, cm, cv = composed_predict(net, x1, z)
    mc = mc_propagate(net, x1, z, cfg.mc_samples, cfg.seeds["mc"])
    ws.write("projection/project.csv", projection_csv(YEARS, {
        "linked": (lm, lv),
        "composed": (cm, cv),
        "mc": (mc.mean, mc.variance, mc.mean_se),
    }))
    truth = run_chain(cfg, x1, float(z[0]))
    lines = ["year,cost"] + [f"{y},{v:.17g}" for y, v in zip(YEARS, truth)]
    ws.write("projection/simulator.csv", "\n".join(lines) + "\n")


def read_projection(text: str) -> dict[str, dict[str, np.ndarray]]:
    """Parse a projection CSV into ``{method: {column: array}}``, each with ``year``."""
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
    out: dict[str, dict[str, np.ndarray]] = {}
    for k, name in enumerate(header[1:], start=1):
        for stat in ("mean_se", "lower_2sd", "upper_2sd", "mean", "sd"):
            if name.endswith("_" + stat):
                method = name[: -len(stat) - 1]
                out.setdefault(method, {"year": body[:, 0]})[stat] = body[:, k]
                break
    return out


def compare_projection(proj: dict) -> tuple[str, bool, bool]:
    """Per-year linked/composed sd ratios and the MC agreement check."""
    lk, cp, mc = proj["linked"], proj["composed"], proj["mc"]
    ratio = lk["sd"] / cp["sd"]
    z = (lk["mean"] - mc["mean"]) / mc["mean_se"]
    ratio_ok = bool(np.all(ratio >= 1 - 1e-9))
    mc_ok = bool(np.all(np.abs(z) <= 3))
    lines = ["year,linked_sd,composed_sd,ratio,mc_mean_z"]
    for y, a, b, r, zz in zip(lk["year"], lk["sd"], cp["sd"], ratio, z):
        lines.append(f"{int(y)},{a:.17g},{b:.17g},{r:.17g},{zz:.17g}")
    return "\n".join(lines) + "\n", ratio_ok, mc_ok


def cmd_compare(ws: Workspace):
    proj = read_projection(ws.read("projection/project.csv"))
    text, ratio_ok, mc_ok = compare_projection(proj)
    ws.write("projection/compare.csv", text)
    ratio = proj["linked"]["sd"] / proj["composed"]["sd"]
    print(f"linked/composed sd ratio: min {ratio.min():.4f}, max {ratio.max():.4f}")
    return ratio_ok, mc_ok


# -- entry point -------------------------------------------------------------


def load_config(path: str | None, seed: int | None = None) -> PipelineConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = PipelineConfig.from_dict(data)
    if seed is not None:
        ss = np.random.SeedSequence(seed)
        keys = sorted(cfg.seeds)
        vals = ss.generate_state(len(keys))
        cfg.seeds = {k: int(v) for k, v in zip(keys, vals)}
    return cfg


STAGES = ("design", "run-ensemble", "fit", "validate", "link", "project", "compare")


def _run_stage(ws: Workspace, stage: str, args) -> int:
    t0 = time.perf_counter()
    code = EXIT_OK
    if stage == "design":
        cmd_design(ws)
    elif stage == "run-ensemble":
        cmd_run_ensemble(ws)
    elif stage == "fit":
        cmd_fit(ws)
    elif stage == "validate":
        summary = cmd_validate(ws)
        worst = min(float(np.min(c)) for c in summary.values())
        if worst < ws.cfg.coverage_threshold:
            print(f"FAIL: coverage {worst:.3f} below threshold {ws.cfg.coverage_threshold}")
            code = EXIT_THRESHOLD
        else:
            print(f"PASS: all coefficient coverages >= {ws.cfg.coverage_threshold}")
    elif stage == "link":
        cmd_link(ws)
    elif stage == "project":
        query = None
        if getattr(args, "query", None):
            query = dict(ws.cfg.query)
            for item in args.query:
                key, _, val = item.partition("=")
                if key not in query:
                    raise ConfigError(f"unknown query input {key!r}")
                query[key] = float(val)
        cmd_project(ws, query)
    elif stage == "compare":
        ratio_ok, mc_ok = cmd_compare(ws)
        if not (ratio_ok and mc_ok):
            print(f"FAIL: ratio check {'ok' if ratio_ok else 'failed'}, MC check {'ok' if mc_ok else 'failed'}")
            code = EXIT_THRESHOLD
        else:
            print("PASS: linked sd >= composed sd every year; MC within 3 standard errors")
    ws.save(stage, time.perf_counter() - t0)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linkem", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("all",):
        p = sub.add_parser(name)
        p.add_argument("--config", help="pipeline config JSON (defaults used if omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="root seed; replaces every configured seed")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("project", "all"):
            p.add_argument("--query", nargs="*", metavar="NAME=VALUE",
                           help="override query inputs, e.g. shift_T=0.5 E=0.7")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        ws = Workspace(Path(args.out), cfg)
        stages = STAGES if args.command == "all" else (args.command,)
        code = EXIT_OK
        for stage in stages:
            log.info("stage %s", stage)
            code = max(code, _run_stage(ws, stage, args))
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
