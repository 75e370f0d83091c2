"""Cascade of truncated difference systems for the small part of the data.

The regular part ``w_bar`` solves the full stochastic equation and is
frozen at the first time its subcritical norm reaches ``K1``. Each dyadic
piece ``v^(k)`` of the small part solves a truncated system whose
nonlinear and noise terms are multiplied by smooth cutoffs of its own
critical and subcritical norms, of the lower levels' subcritical norms
(``zeta``) and of ``w_bar`` (``psi_w_bar``). All levels advance in
lockstep on a shared Wiener path; since each level's right-hand side reads
only lower levels at the current left endpoint, this is the same
arithmetic as solving the levels one after another against stored
trajectories.

Two norm families are supported: ``"L3"`` (critical ``L^3``, subcritical
``L^6``) and ``"H12"`` (critical ``H^{1/2}``, subcritical ``H^1``, with
running time integrals of ``H^{3/2}`` and ``H^2`` added to the cutoff
arguments).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .initial_data import DecompositionResult, critical_norm, regular_norm
from .integrator import BLOWUP_THRESHOLD, BlowUpError, linear_factor
from .ledger import EnergyLedger, LedgerBuilder, field_diagnostics
from .noise import WienerEnsemble
from .spectral import Grid, SpectralField, StructuralError, advection_hat, flux_divergence_hat, to_physical

MODES = ("L3", "H12")


class CascadeBoundError(AssertionError):
    """A level left the pointwise critical-norm bound the cutoffs enforce."""


def theta(s):
    """Smooth cutoff: 1 on ``[0, 1]``, 0 on ``[2, inf)``, quintic in between.

    On ``[1, 2]`` with ``x = s - 1`` it is ``(1 - x)^3 (6x^2 + 3x + 1)``,
    which is monotone and twice continuously differentiable.
    """
    s = np.asarray(s, dtype=float)
    x = np.clip(s - 1.0, 0.0, 1.0)
    return (1.0 - x) ** 3 * (6.0 * x * x + 3.0 * x + 1.0)


@dataclass(frozen=True)
class CutoffParams:
    """Thresholds of the cutoff functions.

    Attributes:
        epsilon0: Smallness of the critical part of the data.
        epsilon1: Critical scale; level ``k`` is cut at ``epsilon1 / 2**k``.
        K1: Cap on ``w_bar`` (must exceed ``2 K0``).
        M: Per-level subcritical caps ``M_k``.
        mode: ``"L3"`` or ``"H12"``.
        K0: Subcritical norm of ``w_bar_0``.
    """

    epsilon0: float
    epsilon1: float
    K1: float
    M: tuple
    mode: str = "L3"
    K0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "M", tuple(float(m) for m in self.M))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 2 * self.epsilon0 < self.epsilon1 < 1:
            raise ValueError(f"epsilon1={self.epsilon1} must lie in (2*epsilon0, 1) = "
                             f"({2 * self.epsilon0}, 1)")
        if not self.K1 > 2 * self.K0:
            raise ValueError(f"K1={self.K1} must exceed 2*K0={2 * self.K0}")
        if any(m <= 0 for m in self.M):
            raise ValueError("M_k must be positive")

    @property
    def n_levels(self) -> int:
        return len(self.M)

    def level_scale(self, k) -> np.ndarray:
        return self.epsilon1 / 2.0 ** np.asarray(k)


def make_cutoff_params(decomp: DecompositionResult, epsilon1: float = 0.2,
                       K1: float | None = None, M_factor: float = 8.0,
                       M_scale: float = 1.0) -> CutoffParams:
    """Default thresholds: ``K1 = 2 K0 + 1`` and
    ``M_k = M_scale * 2**k * max(1, M_factor * ||v_0^(k)||_sub)``."""
    mode = decomp.norm
    k0 = decomp.k0
    if K1 is None:
        K1 = 2.0 * k0 + 1.0
    M = []
    for k, v in enumerate(decomp.levels):
        sub = regular_norm(v, mode)
        M.append(M_scale * 2.0 ** k * max(1.0, M_factor * sub))
    params = CutoffParams(decomp.epsilon0, epsilon1, K1, tuple(M), mode, k0)
    for k, v in enumerate(decomp.levels):
        if not params.M[k] > regular_norm(v, mode):
            raise ValueError(f"M_{k} does not exceed the level's initial subcritical norm")
    return params


def _quantities(norms: dict, mode: str, int15, int2):
    """Critical and subcritical cutoff arguments (before scaling)."""
    if mode == "L3":
        return norms["L3"], norms["L6"]
    return norms["H05"] + np.sqrt(int15), norms["H1"] + np.sqrt(int2)


def evaluate_cutoffs(params: CutoffParams, level_norms: dict, wbar_norms: dict,
                     level_int15=0.0, level_int2=0.0, wbar_int2=0.0) -> dict:
    """Cutoff values from current norms.

    Args:
        level_norms: Norm arrays of shape ``(L, *batch)`` (keys as in the ledger).
        wbar_norms: Norm arrays of shape ``batch``.
        level_int15, level_int2: Running ``int ||v_k||^2_{H^{3/2}}`` and
            ``int ||v_k||^2_{H^2}`` (H12 mode only).
        wbar_int2: Running ``int ||w_bar||^2_{H^2}`` (H12 mode only).

    Returns:
        ``psi``, ``phi``, ``zeta`` (``zeta[k] = zeta_{k-1}``) of shape
        ``(L, *batch)`` and ``psi_wbar`` of shape ``batch``.
    """
    crit, sub = _quantities(level_norms, params.mode, level_int15, level_int2)
    L = crit.shape[0]
    shape = (L,) + (1,) * (crit.ndim - 1)
    M = np.asarray(params.M[:L]).reshape(shape)
    scale = (2.0 ** np.arange(L)).reshape(shape) / params.epsilon1
    psi = theta(sub / M)
    phi = theta(scale * crit)
    zeta = np.concatenate([np.ones((1,) + psi.shape[1:]), np.cumprod(psi, axis=0)[:-1]], axis=0)
    if params.mode == "L3":
        wsub = wbar_norms["L6"]
    else:
        wsub = wbar_norms["H1"] + np.sqrt(wbar_int2)
    psi_w = theta(wsub / params.K1)
    return {"psi": psi, "phi": phi, "zeta": zeta, "psi_wbar": psi_w}


def _bcast(a: np.ndarray, grid: Grid) -> np.ndarray:
    return np.asarray(a)[(...,) + (None,) * (grid.dim + 1)]


def exclusive_partial_sums(v: np.ndarray) -> np.ndarray:
    """``w^(k-1) = sum_{l<k} v^(l)`` along the first axis, with ``w^(-1) = 0``."""
    return np.concatenate([np.zeros_like(v[:1]), np.cumsum(v, axis=0)[:-1]], axis=0)


def level_drift_hat(grid: Grid, v: np.ndarray, w_prev: np.ndarray, w_bar: np.ndarray,
                    cut: dict) -> np.ndarray:
    """Truncated drift for every level (Laplacian excluded).

    ``-psi^2 phi^2 [B(v, v) + zeta (B(w, v) + B(v, w)) + psi_w (B(v, wb) + B(wb, v))]``
    with ``B(a, b) = P((a . grad) b)``, evaluated as ``B(v, v + c) + B(c, v)``
    for ``c = zeta w + psi_w wb``, in flux form
    ``P div(v_m (v + c)_j + c_m v_j)`` since every piece is divergence-free.
    """
    zeta = _bcast(cut["zeta"], grid)
    psi_w = _bcast(cut["psi_wbar"], grid)
    c = zeta * w_prev + psi_w * w_bar
    mask = grid.dealias_mask
    vp = to_physical(grid, v * mask)
    cp = to_physical(grid, c * mask)
    ax = -grid.dim - 1
    # T[..., j, m, *shape]
    tensor = (np.expand_dims(vp, ax - 1) * np.expand_dims(vp + cp, ax)
              + np.expand_dims(cp, ax - 1) * np.expand_dims(vp, ax))
    adv = flux_divergence_hat(grid, tensor)
    amp = _bcast(cut["psi"] ** 2 * cut["phi"] ** 2, grid)
    return -amp * adv


def level_noise_hat(grid: Grid, noise, v: np.ndarray, w_prev: np.ndarray,
                    w_bar: np.ndarray, cut: dict, dW: np.ndarray, t: float) -> np.ndarray:
    """``psi^2 phi^2 zeta psi_w [sigma(v + w + wb) - sigma(w + wb)] dW`` per level."""
    if noise is None or noise.n_modes == 0:
        return np.zeros_like(v)
    base = w_prev + w_bar
    dWb = np.broadcast_to(dW, v.shape[:-grid.dim - 1] + (noise.n_modes,))
    diff = noise.apply_hat(grid, v + base, dWb, t) - noise.apply_hat(grid, base, dWb, t)
    amp = cut["psi"] ** 2 * cut["phi"] ** 2 * cut["zeta"] * cut["psi_wbar"]
    return _bcast(amp, grid) * diff


def assemble_level_rhs(k: int, v_k: SpectralField, w_prev: SpectralField,
                       w_bar: SpectralField, cutoffs: dict, noise, t: float = 0.0):
    """Drift field and noise columns of level ``k``.

    ``cutoffs`` holds scalars ``psi``, ``phi``, ``zeta`` (that is
    ``zeta_{k-1}``) and ``psi_wbar``. Returns ``(drift, columns)`` where
    ``columns`` is a field whose first batch axis indexes noise modes
    (``None`` for zero noise).
    """
    g = v_k.grid
    if k == 0 and np.any(w_prev.coeffs):
        raise StructuralError("level 0 has no lower levels; w_prev must be zero")
    cut = {key: np.asarray(cutoffs[key], dtype=float) for key in ("psi", "phi", "zeta", "psi_wbar")}
    for key, val in cut.items():
        if np.any((val < 0) | (val > 1)):
            raise ValueError(f"cutoff {key} outside [0, 1]")
    drift = level_drift_hat(g, v_k.coeffs, w_prev.coeffs, w_bar.coeffs, cut)
    columns = None
    if noise is not None and noise.n_modes:
        base = w_prev.coeffs + w_bar.coeffs
        cols = noise.columns_hat(g, v_k.coeffs + base, t) - noise.columns_hat(g, base, t)
        amp = cut["psi"] ** 2 * cut["phi"] ** 2 * cut["zeta"] * cut["psi_wbar"]
        columns = SpectralField(g, _bcast(amp, g) * cols, True)
    return SpectralField(g, drift, True), columns


# --------------------------------------------------------------------------
# ensemble runs


@dataclass
class StopRecord:
    """First-hit times per level and path (``inf`` when not hit before ``T``)."""

    tau_level: np.ndarray        # (L, B) critical threshold eps1 / 2**k
    rho_level: np.ndarray        # (L, B) subcritical threshold M_k
    tau_wbar: np.ndarray         # (B,)
    T: float

    @property
    def tau_upper(self) -> np.ndarray:
        """``tau^k = min_{l <= k} (tau_l, rho_l)``; nonincreasing in ``k``."""
        return np.minimum.accumulate(np.minimum(self.tau_level, self.rho_level), axis=0)

    @property
    def tau_w(self) -> np.ndarray:
        return self.tau_upper[-1]

    @property
    def tau(self) -> np.ndarray:
        """``tau_w ^ tau_wbar`` capped at ``T``."""
        return np.minimum(np.minimum(self.tau_w, self.tau_wbar), self.T)

    @property
    def censored(self) -> np.ndarray:
        return ~np.isfinite(np.minimum(self.tau_w, self.tau_wbar))


@dataclass
class CascadeResult:
    """Outcome of a cascade ensemble.

    ``ledgers`` maps ``"u"``, ``"w"``, ``"w_bar"`` and ``"v0"``, ``"v1"``...
    to batched ledgers. The ``u`` and ``w`` ledgers are frozen at
    ``tau = tau_w ^ tau_wbar``; the ``w_bar`` ledger at ``tau_wbar``; level
    ledgers run to ``T``.
    """

    params: CutoffParams
    stops: StopRecord
    ledgers: dict
    u: SpectralField
    w_bar: SpectralField
    levels: np.ndarray
    bound_ratio: np.ndarray           # (L, B) max over time of ||v_k|| / (eps1 / 2**(k-1))
    violations: int
    fields: dict = field(default_factory=dict)
    T: float = 0.0
    dt: float = 0.0

    @property
    def n_paths(self) -> int:
        return self.stops.tau_wbar.shape[0]


def _cutoff_names(L: int) -> tuple:
    return tuple(f"psi_{k}" for k in range(L)) + tuple(f"phi_{k}" for k in range(L)) + (
        "zeta_last", "psi_wbar")


def run_cascade(decomp: DecompositionResult, params: CutoffParams, noise, T: float, dt: float,
                paths: WienerEnsemble | None, scheme: str = "exponential-em",
                dissipation: bool = True, pin_cutoffs: bool = False,
                record_fields: int = 0, strict: bool = True,
                n_paths: int | None = None, ledger_stride: int = 1) -> CascadeResult:
    """Integrate ``w_bar`` and all cascade levels on an ensemble of paths.

    Args:
        decomp: Initial data pieces (shared by all paths).
        params: Cutoff thresholds; ``params.mode`` picks the norm family.
        noise: Noise model (or ``None``).
        paths: One Wiener path per ensemble member (``None`` for zero noise,
            then ``n_paths`` sets the ensemble size).
        pin_cutoffs: Hold every cutoff at 1 (diagnostic; stopping times are
            still recorded).
        record_fields: Store assembled fields every that many steps.
        strict: Raise :class:`CascadeBoundError` if a level breaks the
            pointwise bound.
        ledger_stride: Record ledgers (with dissipation) every that many
            steps; cutoffs, stopping times and the pointwise bound are
            still evaluated at every step.
    """
    g = decomp.w_bar_0.grid
    mode = params.mode
    if mode != decomp.norm:
        raise ValueError(f"cutoff mode {mode} differs from decomposition norm {decomp.norm}")
    L = len(decomp.levels)
    if params.n_levels != L:
        raise StructuralError(f"{params.n_levels} thresholds for {L} levels")
    if paths is None:
        if noise is not None and noise.n_modes:
            raise ValueError("noise requires Wiener paths")
        B = 1 if n_paths is None else n_paths
    else:
        B = len(paths)
        if abs(paths.dt - dt) > 1e-12 * dt:
            raise StructuralError("Wiener step differs from dt")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * T:
        raise ValueError("T must be a multiple of dt")
    n_modes = 0 if noise is None else noise.n_modes

    wb = np.broadcast_to(decomp.w_bar_0.coeffs, (B,) + decomp.w_bar_0.coeffs.shape).copy()
    v = np.stack([np.broadcast_to(lv.coeffs, (B,) + lv.coeffs.shape) for lv in decomp.levels]).copy()
    lin = linear_factor(g, dt, scheme)
    eps_scale = params.level_scale(np.arange(L))[:, None]       # eps1 / 2**k
    bound = 2.0 * eps_scale                                     # eps1 / 2**(k-1)
    M = np.asarray(params.M)[:, None]

    wb_frozen = np.zeros(B, dtype=bool)
    stopped = np.zeros(B, dtype=bool)
    was_stopped = stopped
    tau_lv = np.full((L, B), np.inf)
    rho_lv = np.full((L, B), np.inf)
    tau_wb = np.full(B, np.inf)
    int15 = np.zeros((L, B))
    int2 = np.zeros((L, B))
    wb_int2 = np.zeros(B)
    bound_ratio = np.zeros((L, B))

    names = ["u", "w", "w_bar"] + [f"v{k}" for k in range(L)]
    builders = {n: LedgerBuilder(B, _cutoff_names(L) if n == "u" else ()) for n in names}
    u_snap = None
    w_snap = None
    fields = {"t": [], "u": [], "w_bar": [], "w": []}

    def diagnostics(v, wb, full=True):
        w = v.sum(axis=0)
        stack = np.concatenate([v, wb[None], w[None], (w + wb)[None]])
        d = field_diagnostics(g, stack, dissipation and full)
        lv = {k: x[:L] for k, x in d.items()}
        return lv, {k: x[L] for k, x in d.items()}, {k: x[L + 1] for k, x in d.items()}, \
            {k: x[L + 2] for k, x in d.items()}, w

    def record(t, lvn, wbn, wn, un, cut, w, u_now):
        nonlocal u_snap, w_snap
        if u_snap is None:
            u_snap = {k: x.copy() for k, x in un.items()}
            w_snap = {k: x.copy() for k, x in wn.items()}
        track_frozen(un, wn)
        cvals = {}
        for k in range(L):
            cvals[f"psi_{k}"] = cut["psi"][k]
            cvals[f"phi_{k}"] = cut["phi"][k]
        cvals["zeta_last"] = cut["zeta"][-1]
        cvals["psi_wbar"] = cut["psi_wbar"]
        builders["u"].append(t, u_snap, stopped, cvals)
        builders["w"].append(t, w_snap, stopped)
        builders["w_bar"].append(t, wbn, wb_frozen)
        never = np.zeros(B, dtype=bool)
        for k in range(L):
            builders[f"v{k}"].append(t, {c: x[k] for c, x in lvn.items()}, never)
        if record_fields and round(t / dt) % record_fields == 0:
            fields["t"].append(t)
            fields["u"].append(u_now.copy())
            fields["w_bar"].append(wb.copy())
            fields["w"].append(w.copy())

    def track_frozen(un, wn):
        # the snapshot follows each path up to and including its stopping step
        for k in un:
            u_snap[k] = np.where(was_stopped, u_snap[k], un[k])
            w_snap[k] = np.where(was_stopped, w_snap[k], wn[k])

    def cutoffs(lvn, wbn):
        if pin_cutoffs:
            one = np.ones((L, B))
            return {"psi": one, "phi": one, "zeta": one, "psi_wbar": np.ones(B)}
        return evaluate_cutoffs(params, lvn, wbn, int15, int2, wb_int2)

    def update_stops(t, lvn, wbn):
        nonlocal stopped
        crit, sub = _quantities(lvn, mode, int15, int2)
        hit_t = (crit >= eps_scale) & ~np.isfinite(tau_lv)
        tau_lv[hit_t] = t
        hit_r = (sub >= M) & ~np.isfinite(rho_lv)
        rho_lv[hit_r] = t
        if mode == "L3":
            wsub = wbn["L6"]
        else:
            wsub = wbn["H1"] + np.sqrt(wb_int2)
        hit_w = (wsub >= params.K1) & ~wb_frozen
        tau_wb[hit_w] = t
        wb_frozen[:] = wb_frozen | hit_w
        tau_now = np.minimum(np.min(np.minimum(tau_lv, rho_lv), axis=0), tau_wb)
        stopped = tau_now <= t + 1e-12
        # pointwise control: the critical norm itself, without running integrals
        pointwise = lvn["L3"] if mode == "L3" else lvn["H05"]
        np.maximum(bound_ratio, pointwise / bound, out=bound_ratio)

    t = 0.0
    lvn, wbn, wn, un, w = diagnostics(v, wb)
    update_stops(t, lvn, wbn)
    cut = cutoffs(lvn, wbn)
    record(t, lvn, wbn, wn, un, cut, w, w + wb)
    for i in range(n_steps):
        dW = paths.increment(i) if paths is not None else np.zeros((B, 0))
        w_prev = exclusive_partial_sums(v)
        wb_b = np.broadcast_to(wb, v.shape)
        drift_v = level_drift_hat(g, v, w_prev, wb_b, cut)
        noise_v = level_noise_hat(g, noise, v, w_prev, wb_b, cut, dW, t)
        drift_wb = -advection_hat(g, wb, wb)
        noise_wb = noise.apply_hat(g, wb, dW, t) if n_modes else 0.0
        v_new = lin * (v + dt * drift_v + noise_v)
        wb_new = lin * (wb + dt * drift_wb + noise_wb)
        wb = np.where(_bcast(wb_frozen, g), wb, wb_new)
        if mode == "H12":
            sq_v = lvn["H15"] ** 2, lvn["H2"] ** 2
            int15 += sq_v[0] * dt
            int2 += sq_v[1] * dt
            wb_int2 += np.where(wb_frozen, 0.0, wbn["H2"] ** 2 * dt)
        v = v_new
        t = (i + 1) * dt
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(wb))):
            raise BlowUpError(f"non-finite cascade state at t={t:.6g}", t, dict(un))
        full = (i + 1) % ledger_stride == 0 or i + 1 == n_steps
        lvn, wbn, wn, un, w = diagnostics(v, wb, full)
        if np.any(~(un["L2"] <= BLOWUP_THRESHOLD)) or np.any(~(lvn["L6"] <= BLOWUP_THRESHOLD)):
            raise BlowUpError(f"cascade norm above {BLOWUP_THRESHOLD:g} at t={t:.6g}", t, dict(un))
        was_stopped = stopped.copy()
        update_stops(t, lvn, wbn)
        if not full and dissipation and np.any(stopped & ~was_stopped):
            # the frozen snapshot needs dissipation values
            lvn, wbn, wn, un, w = diagnostics(v, wb, True)
        cut = cutoffs(lvn, wbn)
        if full:
            record(t, lvn, wbn, wn, un, cut, w, w + wb)
        else:
            track_frozen(un, wn)

    violations = int(np.sum(bound_ratio > 1.0))
    if strict and violations:
        k, b = np.unravel_index(np.argmax(bound_ratio), bound_ratio.shape)
        raise CascadeBoundError(
            f"level {k} exceeded eps1/2^(k-1) on path {b}: ratio {bound_ratio[k, b]:.6g}")
    meta = {"mode": mode}
    ledgers = {n: b.build(meta) for n, b in builders.items()}
    stops = StopRecord(tau_lv, rho_lv, tau_wb, T)
    out_fields = {k: np.array(x) for k, x in fields.items()} if record_fields else {}
    return CascadeResult(params, stops, ledgers, SpectralField(g, w + wb, True),
                         SpectralField(g, wb, True), v, bound_ratio, violations,
                         out_fields, T, dt)


def run_monolithic(decomp: DecompositionResult, params: CutoffParams, noise, T: float,
                   dt: float, paths: WienerEnsemble | None, scheme: str = "exponential-em",
                   record_fields: int = 0, n_paths: int | None = None) -> dict:
    """Solve the regular system and the remainder system directly.

    ``w_bar`` obeys the same freeze rule as in :func:`run_cascade`; ``w``
    solves ``dw = [Lap w - B(w, w) - B(w, wb) - B(wb, w)] dt
    + [sigma(w + wb) - sigma(wb)] dW`` from ``w_0 = sum_k v_0^(k)``.
    Returns final fields and, if requested, snapshots every
    ``record_fields`` steps.
    """
    g = decomp.w_bar_0.grid
    B = len(paths) if paths is not None else (1 if n_paths is None else n_paths)
    n_steps = int(round(T / dt))
    n_modes = 0 if noise is None else noise.n_modes
    wb = np.broadcast_to(decomp.w_bar_0.coeffs, (B,) + decomp.w_bar_0.coeffs.shape).copy()
    w = np.broadcast_to(decomp.w0.coeffs, wb.shape).copy()
    lin = linear_factor(g, dt, scheme)
    frozen = np.zeros(B, dtype=bool)
    wb_int2 = np.zeros(B)
    snaps = {"t": [], "u": [], "w_bar": [], "w": []}

    def wsub(c):
        d = field_diagnostics(g, c, dissipation=False)
        if params.mode == "L3":
            return d["L6"], d
        return d["H1"] + np.sqrt(wb_int2), d

    def snap(t, i):
        if record_fields and i % record_fields == 0:
            snaps["t"].append(t)
            snaps["u"].append(w + wb)
            snaps["w_bar"].append(wb.copy())
            snaps["w"].append(w.copy())

    sub, dwb = wsub(wb)
    frozen |= sub >= params.K1
    snap(0.0, 0)
    t = 0.0
    for i in range(n_steps):
        dW = paths.increment(i) if paths is not None else np.zeros((B, 0))
        a = np.stack([w, w, wb, wb])
        b = np.stack([w, wb, w, wb])
        adv = advection_hat(g, a, b)
        drift_w = -(adv[0] + adv[1] + adv[2])
        drift_wb = -adv[3]
        if n_modes:
            s_full = noise.apply_hat(g, w + wb, dW, t)
            s_wb = noise.apply_hat(g, wb, dW, t)
            noise_w = s_full - s_wb
        else:
            noise_w = 0.0
            s_wb = 0.0
        w = lin * (w + dt * drift_w + noise_w)
        wb_new = lin * (wb + dt * drift_wb + s_wb)
        if params.mode == "H12":
            wb_int2 += np.where(frozen, 0.0, dwb["H2"] ** 2 * dt)
        wb = np.where(_bcast(frozen, g), wb, wb_new)
        t = (i + 1) * dt
        sub, dwb = wsub(wb)
        frozen |= sub >= params.K1
        snap(t, i + 1)
    out = {"u": SpectralField(g, w + wb, True), "w": SpectralField(g, w, True),
           "w_bar": SpectralField(g, wb, True)}
    if record_fields:
        out["fields"] = {k: np.array(x) for k, x in snaps.items()}
    return out


def stopping_time_survey(result_or_taus, deltas) -> np.ndarray:
    """Empirical ``P(tau_w < delta)`` for each ``delta``.

    Accepts a :class:`CascadeResult` or an array of per-path stopping times
    (``inf`` where no threshold was reached).
    """
    if isinstance(result_or_taus, CascadeResult):
        taus = result_or_taus.stops.tau_w
    else:
        taus = np.asarray(result_or_taus, dtype=float)
    if taus.size == 0:
        raise ValueError("no paths")
    deltas = np.asarray(deltas, dtype=float)
    return np.array([np.mean(taus < d) for d in deltas])


def survey_constant(prob: np.ndarray, deltas) -> float:
    """Smallest ``C`` with ``P(tau_w < delta) <= C delta`` on the grid."""
    return float(np.max(np.asarray(prob) / np.asarray(deltas, dtype=float)))
