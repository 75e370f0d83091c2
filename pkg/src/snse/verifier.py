"""Monte Carlo checks of energy inequalities and related diagnostics.

Every inequality has the shape ``E[LHS] <= C * RHS`` with an unspecified
constant ``C``. A report estimates the implied constant ``E[LHS] / RHS``
on the full ensemble and on its first half; it passes when the constant is
finite and the two estimates agree within a factor of two.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cascade import CascadeResult
from .initial_data import DecompositionResult, critical_norm, random_solenoidal, regular_norm
from .integrator import EvolutionSpec, advance, simulate_path
from .ledger import EnergyLedger
from .noise import AdditiveNoise, WienerEnsemble
from .spectral import (
    Grid,
    NORM_OVERSAMPLE,
    SpectralField,
    _dissipation_chain,
    lebesgue_norm,
    lp_of_samples,
    poincare_ratio,
    to_physical,
)

STABILITY_BAND = (0.5, 2.0)


class UsageError(ValueError):
    """Invalid input to a verification routine."""


@dataclass
class InequalityReport:
    """Implied constant of one inequality with its stability check.

    Attributes:
        name: Descriptive identifier.
        lhs_estimate: Mean of the left-hand side over the ensemble.
        lhs_stderr: Standard error of that mean.
        rhs_bound: Right-hand side (without the constant).
        implied_constant: ``lhs_estimate / rhs_bound`` on all paths.
        implied_constant_half: The same on the first half of the paths.
        n_paths: Ensemble size.
        passed: Finite constant and half/full ratio inside the stability band.
    """

    name: str
    lhs_estimate: float
    lhs_stderr: float
    rhs_bound: float
    implied_constant: float
    implied_constant_half: float
    n_paths: int
    passed: bool
    stability_ratio: float = 1.0
    censored_paths: int = 0
    notes: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def stderr_constant(self) -> float:
        return self.lhs_stderr / self.rhs_bound if self.rhs_bound > 0 else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stderr_constant"] = self.stderr_constant
        return d

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<28s} C={self.implied_constant:11.5g} "
                f"(half {self.implied_constant_half:11.5g}, ratio {self.stability_ratio:6.3f}) "
                f"lhs={self.lhs_estimate:11.5g}+-{self.lhs_stderr:9.3g} rhs={self.rhs_bound:11.5g} "
                f"n={self.n_paths}")


def _implied(lhs: np.ndarray, rhs) -> float:
    m = float(np.mean(lhs))
    r = float(np.mean(rhs))
    if r > 0:
        return m / r
    if m <= 0:
        return 0.0
    return float("inf")


def make_report(name: str, lhs: np.ndarray, rhs, censored: int = 0, notes: str = "",
                extra: dict | None = None) -> InequalityReport:
    """Build a report from per-path left-hand sides and a right-hand side.

    ``rhs`` is a scalar or per-path samples whose mean is the bound.
    A nonpositive left-hand side against a zero right-hand side gives
    constant 0. Constants equal to zero on both halves count as stable.
    """
    lhs = np.asarray(lhs, dtype=float)
    n = lhs.shape[0]
    if n == 0:
        raise UsageError("empty ensemble")
    rhs_arr = np.broadcast_to(np.asarray(rhs, dtype=float), (n,))
    half = max(n // 2, 1)
    c_full = _implied(lhs, rhs_arr)
    c_half = _implied(lhs[:half], rhs_arr[:half])
    if c_full == 0 and c_half == 0:
        ratio = 1.0
    elif c_half > 0 and np.isfinite(c_half):
        ratio = c_full / c_half
    else:
        ratio = float("inf")
    passed = bool(np.isfinite(c_full) and np.isfinite(c_half)
                  and STABILITY_BAND[0] <= ratio <= STABILITY_BAND[1])
    se = float(np.std(lhs, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return InequalityReport(name, float(np.mean(lhs)), se, float(np.mean(rhs_arr)), c_full,
                            c_half, n, passed, float(ratio), int(censored), notes,
                            dict(extra or {}))


def reports_to_json(reports: Sequence[InequalityReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True, default=float)


def reports_to_text(reports: Sequence[InequalityReport]) -> str:
    return "\n".join(r.line() for r in reports) + "\n"


# --------------------------------------------------------------------------
# stochastic heat equation


def divergence_of_tensor(grid: Grid, f_hat: np.ndarray) -> np.ndarray:
    """``(div f)_j = sum_m d_m f_{jm}`` for coefficients of shape ``(..., d, d, *shape)``."""
    k = grid.wavenumbers
    return 1j * np.sum(k * f_hat, axis=-grid.dim - 1)


def verify_heat_estimate(grid: Grid, f_fn: Callable | None, g_fn: Callable | None,
                         n_modes: int, u0: SpectralField, p: float, paths: WienerEnsemble | None,
                         T: float, dt: float, name: str | None = None,
                         n_paths: int | None = None) -> InequalityReport:
    """Estimate the implied constant of the stochastic heat energy bound.

    Solves ``du = (Lap u + div f) dt + g dW`` with explicit ``f(t)``
    (coefficients ``(d, d, *shape)``) and ``g(t)`` (``(n_modes, d, *shape)``),
    then compares

        LHS = sup_t [ ||u(t)||_p^p + int_0^t sum_j ||grad |u_j|^(p/2)||^2 ] - ||u_0||_p^p
        RHS = int int |f|^2 |u|^(p-2) + int int |u|^(p-2) ||g||_{l2}^2

    per path; time integrals use left-point sums. Pure decay gives
    ``LHS <= 0``.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    d = grid.dim
    B = len(paths) if paths is not None else (1 if n_paths is None else n_paths)
    n_steps = int(round(T / dt))
    zeros_f = np.zeros((d, d) + grid.shape, dtype=complex)

    def f_hat(t):
        return zeros_f if f_fn is None else f_fn(t)

    def forcing(t):
        return divergence_of_tensor(grid, f_hat(t))

    noise = None
    if g_fn is not None and n_modes:
        noise = AdditiveNoise(g_fn, n_modes)
    spec = EvolutionSpec("heat", noise, T, dt, forcing=forcing)
    c = np.broadcast_to(u0.coeffs, (B,) + u0.coeffs.shape).copy()

    def lp_p(vals):
        mag = np.sqrt(np.sum(vals ** 2, axis=-d - 1))
        return lp_of_samples(grid, mag, p) ** p, mag

    vals = to_physical(grid, c, NORM_OVERSAMPLE)
    norm0, mag = lp_p(vals)
    sup = norm0.copy()
    dissip = np.zeros(B)
    rhs = np.zeros(B)
    for i in range(n_steps):
        t = i * dt
        dissip += dt * _dissipation_chain(grid, c, p, vals)
        weight = mag ** (p - 2.0) if p != 2 else np.ones_like(mag)
        fh = f_hat(t)
        if np.any(fh):
            fv = to_physical(grid, fh, NORM_OVERSAMPLE)
            fsq = np.sum(fv ** 2, axis=(0, 1))
            rhs += dt * grid.quadrature(fsq * weight)
        if noise is not None:
            gv = to_physical(grid, g_fn(t), NORM_OVERSAMPLE)
            gsq = np.sum(gv ** 2, axis=(0, 1))
            rhs += dt * grid.quadrature(gsq * weight)
        dW = paths.increment(i) if paths is not None else np.zeros((B, 0))
        c = advance(grid, c, t, spec, dW)
        vals = to_physical(grid, c, NORM_OVERSAMPLE)
        cur, mag = lp_p(vals)
        np.maximum(sup, cur + dissip, out=sup)
    lhs = sup - norm0
    return make_report(name or f"heat_estimate_p{p:g}", lhs, rhs,
                       extra={"p": p, "T": T, "dt": dt})


def heat_cases(grid: Grid, n_paths: int, base_seed: int, T: float, dt: float,
               seed: int = 0) -> list[InequalityReport]:
    """The three standard heat-estimate cases.

    ``heat_free_p2``: no forcing, no noise. ``heat_ou_p2``: one constant
    noise column on a single Fourier mode. ``heat_random_p3``: small random
    divergence-form forcing and two random noise columns, started from a
    small datum so that the forcing, not the initial decay, sets the sup.
    """
    rng = np.random.default_rng(seed)
    d = grid.dim
    u0 = random_solenoidal(grid, rng, slope=1.0)
    u0 = u0 * (1.0 / critical_norm(u0, "L3"))
    out = [verify_heat_estimate(grid, None, None, 0, u0, 2.0, None, T, dt, "heat_free_p2",
                                n_paths=n_paths)]
    e = single_mode_field(grid)
    ens1 = WienerEnsemble.from_base_seed(base_seed, range(n_paths), dt, 1)
    cols = (0.7 * e.coeffs)[None]
    out.append(verify_heat_estimate(grid, None, lambda t: cols, 1, e, 2.0, ens1, T, dt,
                                    "heat_ou_p2"))
    f_base = 0.2 * np.stack([random_solenoidal(grid, rng, slope=1.5).coeffs for _ in range(d)])
    g_cols = 0.3 * np.stack([random_solenoidal(grid, rng, slope=1.5).coeffs for _ in range(2)])
    ens2 = WienerEnsemble.from_base_seed(base_seed, range(n_paths), dt, 2)
    out.append(verify_heat_estimate(grid, lambda t: np.cos(2 * np.pi * t) * f_base,
                                    lambda t: g_cols, 2, u0 * 0.05, 3.0, ens2, T, dt,
                                    "heat_random_p3"))
    return out


def single_mode_field(grid: Grid) -> SpectralField:
    """``sin(x_1) e_2``: divergence-free, ``|n| = 1``, ``L^2`` norm squared ``(2 pi)^d / 2``."""
    x = grid.coordinates()
    e = np.zeros((grid.dim,) + grid.shape)
    e[1] = np.sin(x[0])
    return SpectralField.from_physical(grid, e, divergence_free=True)


def ou_second_moment(b: float, a: float, t: float, volume_factor: float) -> float:
    """``E ||X(t) e||^2`` for ``dX = -|n|^2 X dt + a dW`` with ``|n| = 1`` and
    ``||e||_{L^2}^2 = volume_factor``, ``X(0) = b``."""
    return volume_factor * (b * b * np.exp(-2 * t) + a * a * (1 - np.exp(-2 * t)) / 2)


# --------------------------------------------------------------------------
# cascade energy inequalities


def _lhs(ledger: EnergyLedger, sup_col: str, power: float, int_col: str) -> np.ndarray:
    return np.max(ledger[sup_col], axis=0) ** power + ledger[int_col][-1]


def verify_main_energy(result: CascadeResult, decomp: DecompositionResult,
                       u0: SpectralField | None = None) -> list[InequalityReport]:
    """Implied constants of the energy inequalities on a cascade ensemble.

    Reports (L3 mode; H12 mode uses the Sobolev analogues):

    * ``main_energy``: ``E[sup ||u||_3^3 + int D_3(u)]`` up to ``tau`` vs
      ``sup_Omega ||u_0||_3^3``.
    * ``regular_part_sub``: ``E[sup ||wb||_6^6 + int D_6(wb)]`` up to
      ``tau_wbar`` vs ``E[||wb_0||_6^6 + 1]``.
    * ``regular_part_crit``: ``E[sup ||wb||_3^3 + int D_3(wb)]`` vs ``1``.
    * ``small_part``: ``E[sup ||w||_3^3 + int D_3(w)]`` up to ``tau`` vs
      ``epsilon_0^3``.
    * ``level_energy_{3,6}_k{k}`` per level over ``[0, T]`` vs
      ``E ||v_0^(k)||_p^p``, and a trend report ``level_trend_{3,6}``.

    In H12 mode the pairs ``(sup ||.||^2_{H^1/2}, int ||.||^2_{H^3/2})`` and
    ``(sup ||.||^2_{H^1}, int ||.||^2_{H^2})`` replace the ``L^3`` and ``L^6``
    pairs, and level tags are ``crit`` and ``sub``.
    """
    if result.n_paths == 0:
        raise UsageError("empty ensemble")
    L = result.ledgers
    mode = result.params.mode
    cens = int(np.sum(result.stops.censored))
    if u0 is None:
        u0 = decomp.w_bar_0 + decomp.w0
    reports = []
    if mode == "L3":
        spec_u = ("L3", 3.0, "int_dissip3")
        spec_wb6 = ("L6", 6.0, "int_dissip6")
        spec_wb3 = ("L3", 3.0, "int_dissip3")
        rhs_u = critical_norm(u0, "L3") ** 3
        rhs_wb6 = regular_norm(decomp.w_bar_0, "L3") ** 6 + 1.0
        rhs_w = decomp.epsilon0 ** 3
        level_specs = ((3, "L3", 3.0, "int_dissip3"), (6, "L6", 6.0, "int_dissip6"))
    else:
        spec_u = ("H05", 2.0, "int_H15sq")
        spec_wb6 = ("H1", 2.0, "int_H2sq")
        spec_wb3 = ("H05", 2.0, "int_H15sq")
        rhs_u = critical_norm(u0, "H12") ** 2
        rhs_wb6 = regular_norm(decomp.w_bar_0, "H12") ** 2 + 1.0
        rhs_w = decomp.epsilon0 ** 2
        level_specs = (("crit", "H05", 2.0, "int_H15sq"), ("sub", "H1", 2.0, "int_H2sq"))
    reports.append(make_report("main_energy", _lhs(L["u"], *spec_u), rhs_u, cens))
    reports.append(make_report("regular_part_sub", _lhs(L["w_bar"], *spec_wb6), rhs_wb6,
                               int(np.sum(~np.isfinite(result.stops.tau_wbar)))))
    reports.append(make_report("regular_part_crit", _lhs(L["w_bar"], *spec_wb3), 1.0))
    reports.append(make_report("small_part", _lhs(L["w"], *spec_u), rhs_w, cens))
    for tag, col, power, icol in level_specs:
        level_reports = []
        for k in range(len(decomp.levels)):
            led = L[f"v{k}"]
            init = led[col][0] ** power
            level_reports.append(make_report(f"level_energy_{tag}_k{k}", _lhs(led, col, power, icol),
                                             init, extra={"level": k}))
        reports.extend(level_reports)
        reports.append(level_trend_report(f"level_trend_{tag}", level_reports))
    return reports


def weighted_slope(x: np.ndarray, y: np.ndarray, se: np.ndarray) -> tuple[float, float]:
    """Weighted least-squares slope and its standard error.

    Standard errors below a floor (1e-3 of the median) are raised to it so
    that nearly deterministic points do not dominate the fit.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    se = np.asarray(se, float)
    floor = max(1e-3 * float(np.median(se[se > 0])) if np.any(se > 0) else 1e-12, 1e-12)
    w = 1.0 / np.maximum(se, floor) ** 2
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    return float(slope), float(np.sqrt(1.0 / sxx))


def level_trend_report(name: str, level_reports: Sequence[InequalityReport]) -> InequalityReport:
    """Trend of implied constants over levels; passes when slope <= 2 sigma."""
    ks = np.array([r.extra["level"] for r in level_reports], float)
    cs = np.array([r.implied_constant for r in level_reports])
    ses = np.array([r.stderr_constant for r in level_reports])
    ok = np.isfinite(cs)
    slope, sigma = weighted_slope(ks[ok], cs[ok], ses[ok])
    passed = bool(slope <= 2 * sigma and all(r.passed for r in level_reports))
    return InequalityReport(name, float(np.mean(cs)), float(np.mean(ses)), 1.0, slope, slope,
                            level_reports[0].n_paths, passed, 1.0, 0,
                            "implied_constant holds the fitted slope over levels",
                            {"slope": slope, "sigma": sigma, "constants": cs.tolist(),
                             "stderr": ses.tolist()})


# --------------------------------------------------------------------------
# uniqueness and Poincare


@dataclass
class UniquenessReport:
    horizons: list
    ratios: list
    bound: float
    passed: bool
    n_paths: int
    perturbation: float

    def to_dict(self) -> dict:
        return asdict(self)


def uniqueness_diagnostic(u0: SpectralField, noise, dt: float, horizon: float,
                          perturbation_scale: float, paths: WienerEnsemble | None,
                          bound: float = 10.0, seed: int = 0,
                          n_splits: int = 4, drift="full-snse") -> UniquenessReport:
    """Growth of the difference of two solutions driven by the same noise.

    The second solve starts from ``u0 + delta`` with a random
    divergence-free ``delta`` of ``L^3`` norm ``perturbation_scale``. For
    horizons ``T' = horizon * j / n_splits`` the report lists
    ``E[sup_{t <= T'} ||U||_3^3] / ||U(0)||_3^3``. It passes when every
    ratio is at most ``bound`` and the ratios do not decrease with ``T'``.
    ``drift`` is passed to :class:`~snse.integrator.EvolutionSpec`.
    """
    g = u0.grid
    B = len(paths) if paths is not None else 1
    spec = EvolutionSpec(drift, noise, horizon, dt)
    base = SpectralField(g, np.broadcast_to(u0.coeffs, (B,) + u0.coeffs.shape).copy(), True)
    if perturbation_scale > 0:
        delta = random_solenoidal(g, np.random.default_rng(seed), slope=1.0)
        delta = delta * (perturbation_scale / critical_norm(delta, "L3"))
    else:
        delta = SpectralField.zeros(g)
    pert = SpectralField(g, base.coeffs + delta.coeffs, True)
    _, la = simulate_path(base, spec, paths, record_fields=1, dissipation=False,
                          ledger_stride=spec.n_steps)
    _, lb = simulate_path(pert, spec, paths, record_fields=1, dissipation=False,
                          ledger_stride=spec.n_steps)
    diff = lb.meta["fields"] - la.meta["fields"]           # (n+1, B, d, *shape)
    n1 = diff.shape[0]
    norms = lebesgue_norm(SpectralField(g, diff.reshape((-1,) + diff.shape[2:])), 3)
    norms = np.asarray(norms).reshape(n1, B)
    u_init = float(critical_norm(delta, "L3")) if perturbation_scale > 0 else 0.0
    horizons, ratios = [], []
    for j in range(1, n_splits + 1):
        m = int(round(j * (n1 - 1) / n_splits))
        sup3 = np.max(norms[: m + 1] ** 3, axis=0)
        ratio = float(np.mean(sup3) / u_init ** 3) if u_init > 0 else float(np.max(sup3))
        horizons.append(m * dt)
        ratios.append(ratio)
    mono = all(ratios[i] <= ratios[i + 1] * (1 + 1e-12) for i in range(len(ratios) - 1))
    passed = bool(mono and max(ratios) <= bound) if u_init > 0 else bool(max(ratios) == 0.0)
    return UniquenessReport(horizons, ratios, bound, passed, B, perturbation_scale)


@dataclass
class PoincareSurvey:
    p: float
    max_ratio: float
    max_ratio_half: float
    n_fields: int
    plateau: float

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.max_ratio))


def band_profile(grid: Grid, name: str, rng: np.random.Generator, batch: int) -> SpectralField:
    """Random mean-zero vector fields with a named spectral profile.

    ``white``: flat amplitude on ``|n|^2 <= (n/3)^2``; ``single``: one random
    Fourier mode; ``decay``: amplitude ``|n|^-2``.
    """
    if name == "white":
        return random_solenoidal(grid, rng, slope=0.0, cutoff2=(grid.n_per_axis // 3) ** 2,
                                 batch=(batch,))
    if name == "decay":
        return random_solenoidal(grid, rng, slope=2.0, batch=(batch,))
    if name == "single":
        coeffs = np.zeros((batch, grid.dim) + grid.shape, dtype=complex)
        half = grid.n_per_axis // 3
        for b in range(batch):
            kvec = rng.integers(-half, half + 1, size=grid.dim)
            while not np.any(kvec):
                kvec = rng.integers(-half, half + 1, size=grid.dim)
            idx = tuple(int(k) % grid.n_per_axis for k in kvec)
            midx = tuple(int(-k) % grid.n_per_axis for k in kvec)
            amp = rng.standard_normal(grid.dim) + 1j * rng.standard_normal(grid.dim)
            coeffs[(b, slice(None)) + idx] += amp
            coeffs[(b, slice(None)) + midx] += np.conj(amp)
        return SpectralField(grid, coeffs)
    raise ValueError(f"unknown spectrum profile {name!r}")


def poincare_survey(grid: Grid, p: float, n_fields: int, profile: str = "white",
                    seed: int = 0, batch: int = 10) -> PoincareSurvey:
    """Largest observed ``||f||_{3p}^p / sum_j ||grad |f_j|^(p/2)||^2``.

    ``plateau`` is the full-sample maximum over the first-half maximum.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    if n_fields < 100:
        raise ValueError("n_fields must be >= 100")
    rng = np.random.default_rng(seed)
    ratios = []
    done = 0
    while done < n_fields:
        m = min(batch, n_fields - done)
        f = band_profile(grid, profile, rng, m)
        ratios.extend(np.atleast_1d(poincare_ratio(f, p)).tolist())
        done += m
    ratios = np.array(ratios)
    full = float(np.max(ratios))
    half = float(np.max(ratios[: n_fields // 2]))
    return PoincareSurvey(p, full, half, n_fields, full / half)
