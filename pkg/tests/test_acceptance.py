"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The ensembles are expensive (the 3D run alone takes about half an hour on
one core), so they are built once per module and shared.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from snse.cascade import make_cutoff_params, run_cascade, run_monolithic
from snse.cli import main, survival_report
from snse.config import load_config
from snse.initial_data import decompose, random_solenoidal, scale_to, taylor_green
from snse.integrator import EvolutionSpec, simulate_path, weak_form_residual
from snse.noise import (
    WienerEnsemble,
    ito_isometry_check,
    lipschitz_audit,
    make_noise_model,
    structure_defect,
)
from snse.runner import build_noise, merge_cascade, run_ensemble
from snse.spectral import (
    Grid,
    SpectralField,
    divergence_hat,
    inner_product,
    leray_project_hat,
    lebesgue_norm,
    nonlinear_term,
)
from snse.verifier import heat_cases, verify_main_energy

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

pytestmark = pytest.mark.slow


@pytest.fixture
def say(capsys):
    def emit(n, passed, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed
    return emit


def _timed_run(cfg):
    t0 = time.perf_counter()
    sim = run_ensemble(cfg)
    return sim, time.perf_counter() - t0


def _desk_pair(name):
    """Default 64 paths (timed) plus paths 64..127, merged in index order."""
    cfg = load_config(CONFIGS / name)
    first, secs = _timed_run(cfg)
    second, _ = _timed_run(cfg.with_overrides(ensemble={"indices": list(range(64, 128))}))
    assert first.status == second.status == "clean"
    merged = merge_cascade([first.cascade, second.cascade])
    return {"cfg": cfg, "first": first, "seconds": secs, "merged": merged}


@pytest.fixture(scope="module")
def desk_l3():
    return _desk_pair("desk_l3.yaml")


@pytest.fixture(scope="module")
def desk_h12():
    return _desk_pair("desk_h12.yaml")


@pytest.fixture(scope="module")
def desk_3d():
    sim, secs = _timed_run(load_config(CONFIGS / "desk_l3_3d.yaml"))
    assert sim.status == "clean"
    return {"sim": sim, "seconds": secs}


# --------------------------------------------------------------------------


def test_criterion_01_taylor_green(say):
    g = Grid(2, 64)
    u0 = taylor_green(g)
    t0 = time.perf_counter()
    state, _ = simulate_path(u0, EvolutionSpec("full-snse", None, T=1.0, dt=1e-3),
                             ledger_stride=1000, dissipation=False)
    secs = time.perf_counter() - t0
    exact = u0.with_coeffs(u0.coeffs * np.exp(-2.0))
    err = float(lebesgue_norm(state.u - exact, 2))
    ok = err < 1e-6 and secs < 30
    assert say(1, ok, f"L2 error {err:.2e} (< 1e-6), runtime {secs:.1f}s (< 30s)")


def test_criterion_02_heat_mode_exactness(say):
    g = Grid(3, 16)
    u0 = random_solenoidal(g, np.random.default_rng(2), slope=0.0)
    T = 0.1
    state, _ = simulate_path(u0, EvolutionSpec("heat", None, T=T, dt=1e-2), dissipation=False)
    err = float(np.max(np.abs(state.u.coeffs - u0.coeffs * np.exp(-g.k2 * T))))
    assert say(2, err <= 1e-13, f"max coefficient error {err:.2e} (<= 1e-13)")


def test_criterion_03_leray_and_flux(say):
    g = Grid(2, 16)
    rng = np.random.default_rng(3)
    worst_idem = worst_div = worst_flux = 0.0
    for _ in range(1000):
        raw = rng.standard_normal((2,) + g.shape) + 1j * rng.standard_normal((2,) + g.shape)
        raw = np.fft.fftn(np.real(np.fft.ifftn(raw, axes=(1, 2))), axes=(1, 2)) * g.dealias_mask
        p1 = leray_project_hat(g, raw)
        p2 = leray_project_hat(g, p1)
        scale = max(np.max(np.abs(p1)), 1e-300)
        worst_idem = max(worst_idem, float(np.max(np.abs(p2 - p1))) / scale)
        worst_div = max(worst_div, float(np.max(np.abs(divergence_hat(g, p1)))) / scale)
        u = SpectralField(g, p1, True)
        flux = abs(float(inner_product(nonlinear_term(u), u)))
        worst_flux = max(worst_flux, flux / float(lebesgue_norm(u, 2)) ** 3)
    ok = worst_idem <= 1e-12 and worst_div <= 1e-12 and worst_flux <= 1e-8
    assert say(3, ok, f"idempotence {worst_idem:.1e}, divergence {worst_div:.1e} (<= 1e-12); "
                      f"flux/||u||^3 {worst_flux:.1e} (<= 1e-8)")


def test_criterion_04_decomposition_certificates(say):
    g = Grid(2, 16)
    rng = np.random.default_rng(4)
    k_max = 8
    bad = 0
    for _ in range(100):
        u0 = random_solenoidal(g, rng, slope=float(rng.uniform(0, 0.5)),
                               decay=float(rng.uniform(2.0, 4.0)))
        d = decompose(scale_to(u0, float(rng.uniform(0.5, 3.0))), 0.05, k_max)
        d.verify()
        for k, cert in enumerate(d.certificates):
            bad += cert["critical"] > d.level_bound(k)
        bad += d.tail_norm > d.w0_norm / (3 * 4 ** k_max)
    assert say(4, bad == 0, f"{bad} bound violations over 100 data (level bounds and residual)")


def test_criterion_05_noise_conditions(say):
    g = Grid(2, 16)
    noise = make_noise_model("diagonal-spectral", {"amplitude": 3.0, "decay": 0.7, "radius_step": 3})
    K = noise.lipschitz_K
    audits = {p: lipschitz_audit(noise, g, p, 1000, rng=p) for p in (3, 6)}
    zero = float(np.max(np.abs(noise.columns(SpectralField.zeros(g)).coeffs)))
    u = scale_to(random_solenoidal(g, np.random.default_rng(5), slope=0.0, decay=3.0), 2.0)
    div = structure_defect(noise, u)["divergence"]
    ito = ito_isometry_check(noise, u, 10 ** 4, dt=0.01, seed=5)
    ok = (all(a <= K * (1 + 1e-6) for a in audits.values()) and zero == 0 and div <= 1e-12
          and abs(ito.z_score) <= 4)
    assert say(5, ok, f"Lipschitz p=3 {audits[3]:.4f}, p=6 {audits[6]:.4f} (K={K:.4f}); "
                      f"sigma(0) {zero:.0e}; divergence {div:.1e}; Ito z {ito.z_score:+.2f}")


def _pointwise(result):
    return int(result.violations), float(np.max(result.bound_ratio))


def test_criterion_06_pointwise_bounds(say, desk_l3, desk_3d):
    v2, r2 = _pointwise(desk_l3["first"].cascade)
    v3, r3 = _pointwise(desk_3d["sim"].cascade)
    s2, s3 = desk_l3["seconds"], desk_3d["seconds"]
    ok = v2 == 0 and v3 == 0 and s2 < 600 and s3 < 2400
    assert say(6, ok, f"2D: {v2} violations, max ratio {r2:.3f}, {s2:.0f}s (< 600s); "
                      f"3D 16^3: {v3} violations, max ratio {r3:.3f}, {s3:.0f}s (< 2400s)")


def _survival_line(result, T):
    rep = survival_report(result.stops.tau_w, T)
    stops = int(np.sum(np.isfinite(result.stops.tau_w)))
    return rep, (f"C_emp {rep.implied_constant:.3g} (half {rep.implied_constant_half:.3g}), "
                 f"{stops}/{len(result.stops.tau_w)} stopped, monotone {rep.extra['monotone']}")


def test_criterion_07_stopping_time_survey(say, desk_l3, desk_3d):
    T = desk_l3["cfg"]["time"]["T"]
    r2, l2 = _survival_line(desk_l3["merged"], T)
    r3, l3 = _survival_line(desk_3d["sim"].cascade, T)
    assert say(7, r2.passed and r3.passed, f"2D: {l2}; 3D: {l3}")


def _constant_reports(entry):
    sim = entry["first"]
    reps = verify_main_energy(entry["merged"], sim.decomp, sim.u0)
    cfg = entry["cfg"]
    g = Grid(cfg["grid"]["dim"], cfg["grid"]["n_per_axis"])
    reps += heat_cases(g, 128, cfg["ensemble"]["base_seed"], cfg["time"]["T"], cfg["time"]["dt"])
    return reps


def _summarise(reps):
    failed = [r.name for r in reps if not r.passed]
    named = {r.name: r for r in reps}
    parts = [f"{n} C={named[n].implied_constant:.3g} ratio={named[n].stability_ratio:.2f}"
             for n in ("main_energy", "regular_part_sub", "small_part") if n in named]
    trends = [r for r in reps if r.name.startswith("level_trend")]
    parts.append("level slopes " + ", ".join(f"{r.extra['slope']:+.2e}" for r in trends))
    return failed, "; ".join(parts)


def test_criterion_08_implied_constants(say, desk_l3):
    reps = _constant_reports(desk_l3)
    failed, text = _summarise(reps)
    assert say(8, not failed, f"{len(reps)} reports, failed {failed or 'none'}; {text}")


def test_criterion_09_weak_form_order(say):
    g = Grid(2, 16)
    u0 = scale_to(random_solenoidal(g, np.random.default_rng(0), slope=0.0, decay=3.0), 1.0)
    noise = make_noise_model("diagonal-spectral", {"amplitude": 1.0, "radius_step": 3, "decay": 0.7})
    B, dt, T = 32, 6.25e-5, 0.1
    ens = WienerEnsemble.from_base_seed(0, range(B), dt, 8)
    batch = SpectralField(g, np.broadcast_to(u0.coeffs, (B,) + u0.coeffs.shape).copy(), True)
    _, led = simulate_path(batch, EvolutionSpec("full-snse", noise, T, dt), ens, dense=True,
                           ledger_stride=1000, dissipation=False)
    res = [weak_form_residual(led, h) for h in (2e-3, 1e-3, 5e-4)]
    ratios = [res[0] / res[1], res[1] / res[2]]
    target = np.sqrt(2.0)
    ok = all(abs(r / target - 1) <= 0.2 for r in ratios)
    assert say(9, ok, f"residuals {res[0]:.3e}, {res[1]:.3e}, {res[2]:.3e}; halving ratios "
                      f"{ratios[0]:.3f}, {ratios[1]:.3f} (sqrt 2 = {target:.3f} within 20%)")


def test_criterion_10_cascade_matches_monolithic(say):
    cfg = load_config(CONFIGS / "desk_l3.yaml")
    g = Grid(2, 16)
    u0 = scale_to(random_solenoidal(g, np.random.default_rng(0), slope=0.0, decay=3.0), 2.0)
    d = decompose(u0, 0.05, 8)
    p = make_cutoff_params(d, epsilon1=0.105)
    noise = build_noise(cfg)
    dt, T = 1e-3, 0.25
    ens = WienerEnsemble.from_base_seed(7, range(8), dt, noise.n_modes)
    r = run_cascade(d, p, noise, T, dt, ens, pin_cutoffs=True, strict=False)
    m = run_monolithic(d, p, noise, T, dt, ens)
    err = float(np.max(lebesgue_norm(r.u - m["u"], 3)))
    ok = err <= np.sqrt(dt) * float(lebesgue_norm(u0, 3))
    assert say(10, ok, f"max L3 difference {err:.2e} (bound dt^1/2 ||u0|| = "
                       f"{np.sqrt(dt) * float(lebesgue_norm(u0, 3)):.2e})")


def test_criterion_11_h12_mode(say, desk_h12):
    v, ratio = _pointwise(desk_h12["first"].cascade)
    T = desk_h12["cfg"]["time"]["T"]
    surv, surv_text = _survival_line(desk_h12["merged"], T)
    reps = _constant_reports(desk_h12)
    failed, text = _summarise(reps)
    ok = v == 0 and desk_h12["seconds"] < 600 and surv.passed and not failed
    assert say(11, ok, f"{v} violations (max ratio {ratio:.3f}, {desk_h12['seconds']:.0f}s); "
                       f"{surv_text}; failed {failed or 'none'}; {text}")


def test_criterion_12_manifest_rerun_is_byte_identical(say, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = str(CONFIGS / "desk_l3.yaml")
    assert main(["simulate", "--config", cfg, "--out", str(a), "--paths", "8"]) == 0
    assert main(["simulate", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    differ = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    listed = set(json.loads((a / "manifest.json").read_text())["files"])
    same_set = {str(f) for f in files} == {str(p.relative_to(b)) for p in b.rglob("*") if p.is_file()}
    ok = not differ and same_set and len(listed) + 1 == len(files)
    assert say(12, ok, f"{len(files)} files compared, {len(differ)} differ")
