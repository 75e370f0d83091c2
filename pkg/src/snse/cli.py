"""Command-line front end: ``snse {decompose,simulate,verify,report}``.

Exit codes: 0 success, 1 usage or configuration error, 2 infeasible
parameters, 3 numerical failure, 4 partial ensemble (some paths failed),
5 verification ran but at least one report failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .fieldio import FieldFormatError, read_field
from .initial_data import InfeasibleSplitError
from .integrator import BlowUpError
from .runner import (
    Outputs,
    build_decomposition,
    build_grid,
    build_initial,
    manifest_base,
    resolve_workers,
    run_ensemble,
    survival_constant,
    survival_table,
    write_simulation,
)
from .verifier import (
    InequalityReport,
    STABILITY_BAND,
    heat_cases,
    make_report,
    poincare_survey,
    reports_to_text,
    verify_main_energy,
)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_PARTIAL, EXIT_VERIFY = 0, 1, 2, 3, 4, 5


def parse_seeds(spec: str) -> list[int]:
    """``"START:STOP"`` (half-open) or a comma list of path indices."""
    spec = spec.strip()
    try:
        if ":" in spec:
            a, b = spec.split(":", 1)
            out = list(range(int(a), int(b)))
        else:
            out = [int(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise ConfigError([f"--seeds: cannot parse {spec!r}; use START:STOP or i,j,k"]) from None
    if not out or min(out) < 0 or len(set(out)) != len(out):
        raise ConfigError([f"--seeds: {spec!r} must give distinct nonnegative indices"])
    return out


def effective_config(args) -> RunConfig:
    cfg = load_config(args.config)
    over = {}
    ens = {}
    if getattr(args, "paths", None) is not None:
        ens.update(n_paths=args.paths, indices=None)
    if getattr(args, "seeds", None):
        ens.update(indices=parse_seeds(args.seeds))
    if ens:
        over["ensemble"] = ens
    if getattr(args, "mode", None):
        over["run"] = {"mode": args.mode}
    if getattr(args, "dense_output", False):
        over["dense"] = {"enabled": True}
    if getattr(args, "out", None):
        over["output"] = {"directory": str(args.out)}
    return cfg.with_overrides(**over) if over else cfg


def _base_dir(args) -> Path:
    return Path(args.config).resolve().parent


# --------------------------------------------------------------------------
# subcommands


def cmd_decompose(args) -> int:
    cfg = effective_config(args)
    if args.input:
        u0, _ = read_field(args.input)
    else:
        u0 = build_initial(cfg, _base_dir(args))
    try:
        decomp = build_decomposition(cfg, u0)
    except InfeasibleSplitError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    decomp.verify()
    out = Outputs(cfg["output"]["directory"])
    out.write_field("input.snsf", u0)
    out.write_field("w_bar_0.snsf", decomp.w_bar_0)
    out.write_field("w0.snsf", decomp.w0)
    for k, v in enumerate(decomp.levels):
        out.write_field(f"levels/level_{k:02d}.snsf", v, {"level": k})
    out.write_text("certificate.json", decomp.certificate_json() + "\n")
    manifest = manifest_base(cfg, "decompose")
    manifest["K0"] = decomp.k0
    manifest["files"] = dict(sorted(out.files.items()))
    out.write_json("manifest.json", manifest)
    print(f"K0={decomp.k0:.6g} ||w0||={decomp.w0_norm:.6g} levels={len(decomp.levels)}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = effective_config(args)
    workers = resolve_workers(args.workers)
    try:
        sim = run_ensemble(cfg, workers, base_dir=_base_dir(args))
    except InfeasibleSplitError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = Outputs(cfg["output"]["directory"])
    manifest = write_simulation(out, cfg, sim, dense=cfg["dense"]["enabled"])
    print(f"status={manifest['status']} paths={cfg.n_paths} failed={len(sim.failed_indices)}")
    return {"clean": EXIT_OK, "partial": EXIT_PARTIAL, "failed": EXIT_NUMERICAL}[sim.status]


def survival_report(taus: np.ndarray, T: float) -> InequalityReport:
    """Stopping-time survey as a report: ``C_emp`` on all paths and on the first half."""
    deltas, prob = survival_table(taus, T)
    c_full, c_half = survival_constant(taus, T)
    mono = bool(np.all(np.diff(prob) >= 0))
    if c_full == 0 and c_half == 0:
        ratio = 1.0
    else:
        ratio = c_full / c_half if c_half > 0 else float("inf")
    passed = bool(mono and np.isfinite(c_full) and STABILITY_BAND[0] <= ratio <= STABILITY_BAND[1])
    return InequalityReport("stopping_time_survey", float(prob[-1]), 0.0, 1.0, c_full, c_half,
                            len(taus), passed, float(ratio), 0,
                            "implied_constant is C_emp with P(tau_w < delta) <= C_emp delta",
                            {"deltas": deltas.tolist(), "probability": prob.tolist(),
                             "monotone": mono})


def poincare_report(grid, p: float, n_fields: int = 100, seed: int = 0) -> InequalityReport:
    s = poincare_survey(grid, p, n_fields, "white", seed)
    passed = bool(s.finite and s.plateau <= STABILITY_BAND[1])
    return InequalityReport(f"poincare_p{p:g}", s.max_ratio, 0.0, 1.0, s.max_ratio,
                            s.max_ratio_half, n_fields, passed, s.plateau, 0,
                            "implied_constant is the largest sampled ratio")


def direct_energy_report(ledger, u0) -> InequalityReport:
    from .initial_data import critical_norm

    lhs = np.max(ledger["L3"], axis=0) ** 3 + ledger["int_dissip3"][-1]
    return make_report("direct_energy", lhs, critical_norm(u0, "L3") ** 3)


def run_verification(cfg: RunConfig, workers: int = 1, base_dir=None):
    """Every report for one configuration, plus the run outcome."""
    sim = run_ensemble(cfg, workers, dense=False, base_dir=base_dir)
    reports = []
    if sim.cascade is not None:
        reports.extend(verify_main_energy(sim.cascade, sim.decomp, sim.u0))
        reports.append(survival_report(sim.cascade.stops.tau_w, cfg["time"]["T"]))
    elif sim.ledger is not None:
        reports.append(direct_energy_report(sim.ledger, sim.u0))
    g = build_grid(cfg)
    reports.extend(heat_cases(g, cfg.n_paths, cfg["ensemble"]["base_seed"], cfg["time"]["T"],
                              cfg["time"]["dt"]))
    for p in (2.0, 3.0):
        reports.append(poincare_report(g, p))
    return sim, reports


def write_reports(out: Outputs, reports, sim=None, T=None) -> None:
    out.write_json("reports.json", [r.to_dict() for r in reports])
    out.write_text("reports.txt", reports_to_text(reports))
    rows = ["series,level,implied_constant,stderr"]
    for r in reports:
        if r.name.startswith("level_energy_"):
            tag = r.name[len("level_energy_"):].rsplit("_k", 1)[0]
            rows.append(f"{tag},{r.extra['level']},{r.implied_constant!r},{r.stderr_constant!r}")
    out.write_text("level_constants.csv", "\n".join(rows) + "\n")
    surv = [r for r in reports if r.name == "stopping_time_survey"]
    if surv:
        ex = surv[0].extra
        lines = ["delta,probability"] + [f"{d!r},{p!r}" for d, p in zip(ex["deltas"], ex["probability"])]
        out.write_text("survival.csv", "\n".join(lines) + "\n")


def cmd_verify(args) -> int:
    cfg = effective_config(args)
    workers = resolve_workers(args.workers)
    try:
        sim, reports = run_verification(cfg, workers, _base_dir(args))
    except InfeasibleSplitError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = Outputs(cfg["output"]["directory"])
    write_reports(out, reports)
    manifest = manifest_base(cfg, "verify")
    manifest["status"] = sim.status
    manifest["failed_paths"] = sorted(sim.failed_indices)
    manifest["all_passed"] = all(r.passed for r in reports)
    if sim.cascade is not None:
        manifest["K0"] = sim.decomp.k0
        manifest["pointwise_violations"] = int(sim.cascade.violations)
    manifest["files"] = dict(sorted(out.files.items()))
    out.write_json("manifest.json", manifest)
    sys.stdout.write(reports_to_text(reports))
    if sim.status == "failed":
        return EXIT_NUMERICAL
    if sim.status == "partial":
        return EXIT_PARTIAL
    return EXIT_OK if manifest["all_passed"] else EXIT_VERIFY


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    man_path = run / "manifest.json"
    if not man_path.exists():
        print(f"{run}: no manifest.json", file=sys.stderr)
        return EXIT_USAGE
    manifest = json.loads(man_path.read_text())
    rep_path = run / "reports.json"
    if rep_path.exists():
        reports = [InequalityReport(**{k: v for k, v in d.items() if k != "stderr_constant"})
                   for d in json.loads(rep_path.read_text())]
        text = reports_to_text(reports)
        if args.out:
            out = Outputs(args.out)
            write_reports(out, reports)
        sys.stdout.write(text)
        return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY
    lines = [f"command={manifest.get('command')} status={manifest.get('status')} "
             f"paths={len(manifest.get('paths', []))} failed={len(manifest.get('failed_paths', []))}"]
    stops = manifest.get("stopping_times")
    if stops:
        taus = np.array([np.inf if v["tau_w"] is None else v["tau_w"] for v in stops.values()])
        T = manifest["config"]["time"]["T"]
        deltas, prob = survival_table(taus, T)
        lines.append("delta       P(tau_w < delta)")
        lines.extend(f"{d:<11.5g} {p:.4f}" for d, p in zip(deltas, prob))
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML config or a manifest.json")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--seeds", help="path indices: START:STOP or i,j,k")
        p.add_argument("--paths", type=int, help="ensemble size (paths 0..N-1)")
        p.add_argument("--workers", type=int, help="worker processes (default: $SNSE_WORKERS or 1)")
        p.add_argument("--mode", choices=("l3", "h12"), help="critical norm family")
        p.add_argument("--dense-output", action="store_true", help="store dense field records")

    p = sub.add_parser("decompose", help="split and decompose an initial datum")
    common(p)
    p.add_argument("--input", help="field file (.snsf); default: initial data from the config")
    p.set_defaults(func=cmd_decompose)
    p = sub.add_parser("simulate", help="run an ensemble and write ledgers")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("verify", help="run an ensemble and emit inequality reports")
    common(p)
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("report", help="render tables from a finished run directory")
    p.add_argument("run_dir")
    p.add_argument("--out", help="rewrite tables and CSV series into this directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (FieldFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BlowUpError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
