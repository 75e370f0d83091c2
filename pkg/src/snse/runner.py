"""Ensemble orchestration shared by the command-line front end.

Paths are processed in fixed-size chunks so that results do not depend on
the number of workers. Every output file is written by the parent process
and listed with its SHA-256 in ``manifest.json``.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import (
    CascadeResult,
    StopRecord,
    make_cutoff_params,
    run_cascade,
    stopping_time_survey,
    survey_constant,
)
from .config import RunConfig
from .fieldio import read_field, sha256_bytes, write_field
from .initial_data import decompose, random_solenoidal, scale_to, taylor_green
from .integrator import BlowUpError, EvolutionSpec, simulate_path
from .ledger import EnergyLedger
from .noise import WienerEnsemble, make_noise_model, path_seed
from .spectral import Grid, SpectralField

MANIFEST_VERSION = 1
WORKERS_ENV = "SNSE_WORKERS"


def build_grid(cfg: RunConfig) -> Grid:
    return Grid(cfg["grid"]["dim"], cfg["grid"]["n_per_axis"])


def build_noise(cfg: RunConfig):
    nz = cfg["noise"]
    if nz["kind"] == "zero" or nz["n_modes"] == 0 or nz["amplitude"] == 0:
        return make_noise_model("zero")
    if nz["kind"] == "identity":
        return make_noise_model("identity", {"amplitude": nz["amplitude"]})
    return make_noise_model("diagonal-spectral", {
        "n_modes": nz["n_modes"], "amplitude": nz["amplitude"], "decay": nz["decay"],
        "radius_step": nz["radius_step"]})


def build_initial(cfg: RunConfig, base_dir: Path | None = None) -> SpectralField:
    """Initial datum; ``random`` data are scaled to ``scale`` in the run's critical norm."""
    g = build_grid(cfg)
    ic = cfg["initial_data"]
    if ic["kind"] == "zero":
        return SpectralField.zeros(g)
    if ic["kind"] == "taylor-green":
        return taylor_green(g, ic["scale"])
    if ic["kind"] == "file":
        path = Path(ic["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        f, _ = read_field(path)
        if (f.grid.dim, f.grid.n_per_axis) != (g.dim, g.n_per_axis):
            raise ValueError(f"field file grid {f.grid.dim}x{f.grid.n_per_axis} does not match config")
        return f
    u = random_solenoidal(g, np.random.default_rng(ic["seed"]), slope=ic["slope"],
                          decay=ic["decay"])
    return scale_to(u, ic["scale"], cfg.norm)


def build_decomposition(cfg: RunConfig, u0: SpectralField):
    dc = cfg["decomposition"]
    return decompose(u0, dc["epsilon0"], dc["k_max"], norm=cfg.norm)


def build_cutoffs(cfg: RunConfig, decomp):
    cc = cfg["cascade"]
    return make_cutoff_params(decomp, cc["epsilon1"], cc["K1"], cc["M_factor"], cc["M_scale"])


def ensemble_for(cfg: RunConfig, indices, n_modes: int) -> WienerEnsemble | None:
    if n_modes == 0:
        return None
    return WienerEnsemble.from_base_seed(cfg["ensemble"]["base_seed"], indices,
                                         cfg["time"]["dt"], n_modes)


def chunks(indices: list[int], size: int) -> list[list[int]]:
    return [indices[i:i + size] for i in range(0, len(indices), size)]


def resolve_workers(flag: int | None) -> int:
    """Worker count: the flag wins over ``SNSE_WORKERS``; default 1."""
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


# --------------------------------------------------------------------------
# per-chunk work (top-level functions so they pickle)


def _cascade_chunk(args):
    cfg_dict, indices, u0_coeffs, dense = args
    cfg = RunConfig(cfg_dict)
    g = build_grid(cfg)
    u0 = SpectralField(g, u0_coeffs, True)
    decomp = build_decomposition(cfg, u0)
    params = build_cutoffs(cfg, decomp)
    noise = build_noise(cfg)
    ens = ensemble_for(cfg, indices, noise.n_modes)
    tm = cfg["time"]
    stride = cfg["run"]["ledger_stride"]
    try:
        res = run_cascade(decomp, params, noise, tm["T"], tm["dt"], ens, tm["scheme"],
                          strict=False, n_paths=len(indices), ledger_stride=stride,
                          record_fields=stride if dense else 0)
        return {"ok": True, "result": res}
    except BlowUpError as exc:
        return {"ok": False, "error": str(exc), "indices": indices}


def _direct_chunk(args):
    cfg_dict, indices, u0_coeffs, dense = args
    cfg = RunConfig(cfg_dict)
    g = build_grid(cfg)
    u0 = SpectralField(g, np.broadcast_to(u0_coeffs, (len(indices),) + u0_coeffs.shape).copy(),
                       True)
    noise = build_noise(cfg)
    ens = ensemble_for(cfg, indices, noise.n_modes)
    tm = cfg["time"]
    spec = EvolutionSpec("full-snse", noise if noise.n_modes else None, tm["T"], tm["dt"],
                         tm["scheme"])
    _, ledger = simulate_path(u0, spec, ens, ledger_stride=cfg["run"]["ledger_stride"],
                              dense=dense, dense_radius2=cfg["dense"]["radius2"], blowup="mark")
    return {"ok": True, "ledger": ledger}


def _map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


# --------------------------------------------------------------------------
# merging


def _cat_ledgers(ledgers: list[EnergyLedger]) -> EnergyLedger:
    first = ledgers[0]
    data = {k: np.concatenate([l.data[k] for l in ledgers], axis=1) for k in first.data}
    frozen = np.concatenate([l.frozen for l in ledgers], axis=1)
    return EnergyLedger(first.times.copy(), data, first.cutoff_names, frozen, dict(first.meta))


def merge_cascade(results: list[CascadeResult]) -> CascadeResult:
    """Concatenate chunk results along the path axis."""
    r0 = results[0]
    stops = StopRecord(np.concatenate([r.stops.tau_level for r in results], axis=1),
                       np.concatenate([r.stops.rho_level for r in results], axis=1),
                       np.concatenate([r.stops.tau_wbar for r in results]), r0.T)
    ledgers = {k: _cat_ledgers([r.ledgers[k] for r in results]) for k in r0.ledgers}
    g = r0.u.grid
    fields = {}
    if r0.fields:
        fields = {"t": r0.fields["t"]}
        for k in ("u", "w", "w_bar"):
            fields[k] = np.concatenate([r.fields[k] for r in results], axis=1)
    return CascadeResult(
        r0.params, stops, ledgers,
        SpectralField(g, np.concatenate([r.u.coeffs for r in results]), True),
        SpectralField(g, np.concatenate([r.w_bar.coeffs for r in results]), True),
        np.concatenate([r.levels for r in results], axis=1),
        np.concatenate([r.bound_ratio for r in results], axis=1),
        sum(r.violations for r in results), fields, r0.T, r0.dt)


# --------------------------------------------------------------------------
# outputs


@dataclass
class Outputs:
    """Collects files written under one directory with their hashes."""

    root: Path
    files: dict = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    def write_bytes(self, rel: str, data: bytes) -> None:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.files[rel] = sha256_bytes(data)

    def write_text(self, rel: str, text: str) -> None:
        self.write_bytes(rel, text.encode())

    def write_json(self, rel: str, obj) -> None:
        self.write_text(rel, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")

    def write_npy(self, rel: str, arr: np.ndarray) -> None:
        import io

        buf = io.BytesIO()
        np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
        self.write_bytes(rel, buf.getvalue())

    def write_field(self, rel: str, f: SpectralField, metadata: dict | None = None) -> None:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        self.files[rel] = write_field(path, f, metadata)
        side = rel + ".json"
        self.files[side] = sha256_bytes((self.root / side).read_bytes())


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _finite_or_none(x):
    x = float(x)
    return x if np.isfinite(x) else None


def manifest_base(cfg: RunConfig, command: str) -> dict:
    base_seed = cfg["ensemble"]["base_seed"]
    return {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "code_version": __version__,
        "config": {k: v for k, v in cfg.to_dict().items() if k != "output"},
        "paths": [{"index": i, "seed": path_seed(base_seed, i)} for i in cfg.path_indices],
    }


@dataclass
class SimulationOutcome:
    status: str                       # clean, partial or failed
    failed_indices: list
    cascade: CascadeResult | None = None
    ledger: EnergyLedger | None = None
    decomp: object = None
    u0: SpectralField | None = None


def run_ensemble(cfg: RunConfig, workers: int = 1, dense: bool | None = None,
                 base_dir: Path | None = None) -> SimulationOutcome:
    """Run the configured ensemble (cascade or direct) in fixed-size chunks."""
    dense = cfg["dense"]["enabled"] if dense is None else dense
    u0 = build_initial(cfg, base_dir)
    indices = cfg.path_indices
    tasks = [(cfg.to_dict(), ch, u0.coeffs, dense) for ch in chunks(indices, cfg["ensemble"]["chunk_size"])]
    if cfg["run"]["kind"] == "cascade":
        decomp = build_decomposition(cfg, u0)
        outs = _map(_cascade_chunk, tasks, workers)
        good = [o["result"] for o in outs if o["ok"]]
        failed = [i for o in outs if not o["ok"] for i in o["indices"]]
        status = "clean" if not failed else ("partial" if good else "failed")
        merged = merge_cascade(good) if good else None
        return SimulationOutcome(status, failed, cascade=merged, decomp=decomp, u0=u0)
    outs = _map(_direct_chunk, tasks, workers)
    ledger = _cat_ledgers([o["ledger"] for o in outs])
    failed_mask = np.concatenate([o["ledger"].meta["failed"] for o in outs])
    ledger.meta = {"failed": failed_mask,
                   "stop_times": np.concatenate([o["ledger"].meta["stop_times"] for o in outs])}
    if dense:
        ledger.meta["dense"] = [o["ledger"].meta["dense"] for o in outs]
    failed = [i for i, f in zip(indices, failed_mask) if f]
    status = "clean" if not failed else ("partial" if len(failed) < len(indices) else "failed")
    return SimulationOutcome(status, failed, ledger=ledger, u0=u0)


def write_simulation(out: Outputs, cfg: RunConfig, sim: SimulationOutcome,
                     dense: bool = False) -> dict:
    """Write ledgers, stop table and manifest; return the manifest dict."""
    manifest = manifest_base(cfg, "simulate")
    out.write_field("initial.snsf", sim.u0, {"kind": cfg["initial_data"]["kind"]})
    indices = cfg.path_indices
    failed = set(sim.failed_indices)
    ok_indices = [i for i in indices if i not in failed]
    if sim.cascade is not None:
        res = sim.cascade
        out.write_text("certificate.json", sim.decomp.certificate_json() + "\n")
        for j, idx in enumerate(ok_indices):
            for name, led in res.ledgers.items():
                out.write_text(f"ledgers/path_{idx:05d}/{name}.csv", led.path(j).to_csv())
        s = res.stops
        rows = ["index,tau_w,tau_wbar,tau,censored"]
        for j, idx in enumerate(ok_indices):
            rows.append(f"{idx},{s.tau_w[j]!r},{s.tau_wbar[j]!r},{s.tau[j]!r},{int(s.censored[j])}")
        out.write_text("stops.csv", "\n".join(rows) + "\n")
        if dense and res.fields:
            out.write_npy("dense/times.npy", res.fields["t"])
            out.write_npy("dense/u.npy", res.fields["u"])
        p = res.params
        manifest.update({
            "K0": sim.decomp.k0,
            "thresholds": {"epsilon0": p.epsilon0, "epsilon1": p.epsilon1, "K1": p.K1,
                           "M": list(p.M)},
            "stopping_times": {str(idx): {"tau_w": _finite_or_none(s.tau_w[j]),
                                          "tau_wbar": _finite_or_none(s.tau_wbar[j])}
                               for j, idx in enumerate(ok_indices)},
            "pointwise_violations": int(res.violations),
        })
    elif sim.ledger is not None:
        led = sim.ledger
        for j, idx in enumerate(indices):
            out.write_text(f"ledgers/path_{idx:05d}/u.csv", led.path(j).to_csv())
        if dense and "dense" in led.meta:
            recs = led.meta["dense"]
            out.write_npy("dense/times.npy", recs[0].times)
            out.write_npy("dense/wavevectors.npy", recs[0].wavevectors)
            for name in ("u", "drift", "noise", "dW"):
                # path axis is 1 in every dense array
                out.write_npy(f"dense/{name}.npy",
                              np.concatenate([getattr(r, name) for r in recs], axis=1))
    manifest["status"] = sim.status
    manifest["failed_paths"] = sorted(failed)
    manifest["files"] = dict(sorted(out.files.items()))
    out.write_json("manifest.json", manifest)
    return manifest


def survival_table(taus: np.ndarray, T: float, n_points: int = 16):
    deltas = T * np.arange(1, n_points + 1) / n_points
    return deltas, stopping_time_survey(taus, deltas)


def survival_constant(taus: np.ndarray, T: float) -> tuple[float, float]:
    """``C_emp`` on all paths and on the first half."""
    deltas, prob = survival_table(taus, T)
    half = taus[: max(len(taus) // 2, 1)]
    _, prob_half = survival_table(half, T)
    return survey_constant(prob, deltas), survey_constant(prob_half, deltas)
