"""Ito time stepping on the torus.

One step of the exponential Euler-Maruyama scheme reads

    u_hat <- exp(-|n|^2 dt) * (u_hat + dt * F_hat(u) + (sigma(u) dW)_hat),

mode by mode, where ``F`` is the drift without the Laplacian. The
semi-implicit variant divides by ``1 + |n|^2 dt`` instead. All state
arrays carry an optional leading batch axis so an ensemble of independent
paths advances in one vectorised step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .ledger import EnergyLedger, LedgerBuilder, field_diagnostics
from .noise import WienerEnsemble, WienerPath
from .spectral import Grid, SpectralField, StructuralError, advection_hat

BLOWUP_THRESHOLD = 1e6
SCHEMES = ("exponential-em", "semi-implicit-em")


class BlowUpError(RuntimeError):
    """Non-finite coefficients or a monitored norm above the blow-up threshold."""

    def __init__(self, message: str, t: float, last_norms: dict, paths=None):
        super().__init__(message)
        self.t = t
        self.last_norms = last_norms
        self.paths = paths


class UsageError(ValueError):
    """An operation was called on data that does not support it."""


def _drift_heat(grid: Grid, coeffs: np.ndarray, t: float) -> np.ndarray:
    return np.zeros_like(coeffs)


def _drift_full(grid: Grid, coeffs: np.ndarray, t: float) -> np.ndarray:
    return -advection_hat(grid, coeffs, coeffs)


DRIFTS = {"heat": _drift_heat, "full-snse": _drift_full}


@dataclass
class EvolutionSpec:
    """What to integrate and how.

    Attributes:
        drift: ``"heat"``, ``"full-snse"``, or a callable
            ``(grid, coeffs, t) -> coeffs`` returning the drift without the
            Laplacian.
        noise: A :class:`~snse.noise.NoiseModel`, an
            :class:`~snse.noise.AdditiveNoise`, or ``None``.
        T: Horizon.
        dt: Step.
        scheme: ``"exponential-em"`` or ``"semi-implicit-em"``.
        forcing: Optional ``t -> coeffs`` added to the drift.
        noise_prefactor: Optional ``(t, coeffs) -> per-path factor``
            multiplying the noise term.
    """

    drift: str | Callable = "full-snse"
    noise: object = None
    T: float = 1.0
    dt: float = 1e-3
    scheme: str = "exponential-em"
    forcing: Callable | None = None
    noise_prefactor: Callable | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T >= self.dt * (1 - 1e-12):
            raise ValueError("T must be at least dt")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if isinstance(self.drift, str) and self.drift not in DRIFTS:
            raise ValueError(f"unknown drift {self.drift!r}; choose from {sorted(DRIFTS)}")

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if abs(n * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"T={self.T} is not a multiple of dt={self.dt}")
        return n

    @property
    def n_modes(self) -> int:
        return 0 if self.noise is None else self.noise.n_modes

    def drift_hat(self, grid: Grid, coeffs: np.ndarray, t: float) -> np.ndarray:
        fn = DRIFTS[self.drift] if isinstance(self.drift, str) else self.drift
        out = fn(grid, coeffs, t)
        if self.forcing is not None:
            out = out + self.forcing(t)
        return out

    def noise_hat(self, grid: Grid, coeffs: np.ndarray, dW: np.ndarray, t: float) -> np.ndarray:
        if self.noise is None or self.noise.n_modes == 0:
            return np.zeros_like(coeffs)
        out = self.noise.apply_hat(grid, coeffs, dW, t)
        if self.noise_prefactor is not None:
            fac = np.asarray(self.noise_prefactor(t, coeffs), dtype=float)
            out = out * fac.reshape(fac.shape + (1,) * (grid.dim + 1))
        return out


def linear_factor(grid: Grid, dt: float, scheme: str) -> np.ndarray:
    if scheme == "exponential-em":
        return np.exp(-grid.k2 * dt)
    if scheme == "semi-implicit-em":
        return 1.0 / (1.0 + grid.k2 * dt)
    raise ValueError(f"unknown scheme {scheme!r}")


def advance(grid: Grid, coeffs: np.ndarray, t: float, spec: EvolutionSpec, dW,
            drift: np.ndarray | None = None, noise: np.ndarray | None = None) -> np.ndarray:
    """One step on raw coefficient arrays; ``drift``/``noise`` may be precomputed."""
    if drift is None:
        drift = spec.drift_hat(grid, coeffs, t)
    if noise is None:
        noise = spec.noise_hat(grid, coeffs, np.asarray(dW, dtype=float), t)
    return linear_factor(grid, spec.dt, spec.scheme) * (coeffs + spec.dt * drift + noise)


@dataclass
class PathState:
    """Current time and field of one path (or a batch of paths).

    Attributes:
        t: Current time.
        u: The field; batched fields carry one path per leading index.
        frozen: Per-path flag; a frozen path is carried constantly in time.
        ledger: Ledger of the run that produced this state, if any.
    """

    t: float
    u: SpectralField
    frozen: np.ndarray | bool = False
    ledger: EnergyLedger | None = None

    def __post_init__(self):
        self.frozen = np.asarray(self.frozen, dtype=bool)


def step(state: PathState, spec: EvolutionSpec, dW) -> PathState:
    """Advance one Ito step; frozen paths are returned unchanged.

    Raises:
        StructuralError: increment count differs from the noise modes.
        BlowUpError: non-finite coefficients after the step.
    """
    dW = np.asarray(dW, dtype=float)
    if dW.shape[-1:] != (spec.n_modes,) and not (spec.n_modes == 0 and dW.size == 0):
        raise StructuralError(f"expected {spec.n_modes} increments, got shape {dW.shape}")
    if np.all(state.frozen):
        return PathState(state.t + spec.dt, state.u, state.frozen, state.ledger)
    g = state.u.grid
    c = state.u.coeffs
    new = advance(g, c, state.t, spec, dW)
    if not np.all(np.isfinite(new)):
        raise BlowUpError(f"non-finite coefficients at t={state.t + spec.dt:.6g}",
                          state.t + spec.dt, field_diagnostics(g, c, dissipation=False))
    fr = state.frozen.reshape(state.frozen.shape + (1,) * (g.dim + 1))
    new = np.where(fr, c, new)
    return PathState(state.t + spec.dt, state.u.with_coeffs(new), state.frozen, state.ledger)


@dataclass(frozen=True)
class Monitor:
    """Stopping rule: freeze the path when ``quantity >= threshold``.

    ``quantity`` is a ledger column name (``"L3"``, ``"L6"``, ``"H1"``...).
    ``threshold`` may be a scalar or one value per path.
    """

    name: str
    quantity: str
    threshold: object


class DenseRecord(NamedTuple):
    """Per-step data needed to evaluate the weak form on selected modes.

    ``modes`` indexes the stored wavevectors; ``u`` has shape
    ``(n_steps+1, n_paths, ncomp, n_stored)``, ``drift`` and ``noise``
    (noise columns) are left-point values per step, ``dW`` the increments.
    """

    times: np.ndarray
    modes: np.ndarray
    wavevectors: np.ndarray
    u: np.ndarray
    drift: np.ndarray
    noise: np.ndarray
    dW: np.ndarray
    stop_times: np.ndarray
    grid: Grid


def _as_ensemble(path, n_paths: int) -> WienerEnsemble | None:
    if path is None:
        return None
    if isinstance(path, WienerPath):
        path = WienerEnsemble([path])
    if len(path) != n_paths:
        raise StructuralError(f"{len(path)} Wiener paths for {n_paths} field paths")
    return path


def simulate_path(u0: SpectralField, spec: EvolutionSpec, path=None,
                  monitors: Sequence[Monitor] = (), ledger_stride: int = 1,
                  dissipation: bool = True, dense: bool = False,
                  dense_radius2: float = 4.0, blowup: str = "raise",
                  record_fields: int = 0) -> tuple[PathState, EnergyLedger]:
    """Integrate ``u0`` to ``spec.T`` with optional stopping monitors.

    ``u0`` may be batched; then ``path`` must be a
    :class:`~snse.noise.WienerEnsemble` with one path per batch entry. A
    path whose monitor fires is frozen at the state that triggered it. The
    returned ledger is batched exactly when ``u0`` is.

    Args:
        dense: Keep low-mode data for :func:`weak_form_residual`; stored on
            ``ledger.meta["dense"]``.
        dense_radius2: Largest ``|n|^2`` kept in dense mode.
        blowup: ``"raise"`` to raise :class:`BlowUpError`; ``"mark"`` to
            freeze offending paths and flag them in ``ledger.meta["failed"]``.
        record_fields: If positive, store full fields every that many steps
            in ``ledger.meta["fields"]``.
    """
    g = u0.grid
    batched = bool(u0.batch_shape)
    coeffs = u0.coeffs if batched else u0.coeffs[None]
    n_paths = coeffs.shape[0]
    ens = _as_ensemble(path, n_paths)
    if spec.n_modes and ens is None:
        raise UsageError("a Wiener path is required for nonzero noise")
    if ens is not None and ens.n_modes != spec.n_modes:
        raise StructuralError(f"path has {ens.n_modes} modes, noise has {spec.n_modes}")
    if ens is not None and abs(ens.dt - spec.dt) > 1e-12 * spec.dt:
        raise StructuralError(f"path step {ens.dt} differs from spec dt {spec.dt}")
    if blowup not in ("raise", "mark"):
        raise ValueError("blowup must be 'raise' or 'mark'")
    n = spec.n_steps
    frozen = np.zeros(n_paths, dtype=bool)
    failed = np.zeros(n_paths, dtype=bool)
    stop_times = np.full(n_paths, np.inf)
    stop_reason = [""] * n_paths
    thresholds = [(m, np.broadcast_to(np.asarray(m.threshold, float), (n_paths,))) for m in monitors]
    builder = LedgerBuilder(n_paths)
    lin = linear_factor(g, spec.dt, spec.scheme)

    if dense:
        sel = np.flatnonzero((g.k2 <= dense_radius2).reshape(-1))
        kvecs = g.wavenumbers.reshape(g.dim, -1)[:, sel].T
        d_u, d_drift, d_noise, d_dw = [], [], [], []

        def low(a):
            return a.reshape(a.shape[: -g.dim] + (-1,))[..., sel]
    fields = []

    def record(t, c):
        norms = field_diagnostics(g, c, dissipation)
        builder.append(t, norms, frozen)
        return norms

    t = 0.0
    norms = record(t, coeffs)
    if dense:
        d_u.append(low(coeffs))
    if record_fields:
        fields.append(coeffs.copy())
    for i in range(n):
        dW = ens.increment(i) if ens is not None else np.zeros((n_paths, 0))
        drift = spec.drift_hat(g, coeffs, t)
        noise = spec.noise_hat(g, coeffs, dW, t)
        if dense:
            d_drift.append(low(drift))
            if spec.n_modes:
                cols = spec.noise.columns_hat(g, coeffs, t)
                if spec.noise_prefactor is not None:
                    fac = np.asarray(spec.noise_prefactor(t, coeffs), float)
                    cols = cols * fac.reshape((1,) + fac.shape + (1,) * (g.dim + 1))
                d_noise.append(np.moveaxis(low(cols), 0, 1))
            else:
                d_noise.append(np.zeros((n_paths, 0, coeffs.shape[1], len(sel))))
            d_dw.append(dW.copy())
        new = lin * (coeffs + spec.dt * drift + noise)
        t = (i + 1) * spec.dt
        bad = ~np.all(np.isfinite(new.reshape(n_paths, -1)), axis=1) & ~frozen
        if np.any(bad):
            if blowup == "raise":
                raise BlowUpError(f"non-finite coefficients at t={t:.6g} on paths "
                                  f"{np.flatnonzero(bad).tolist()}", t,
                                  {k: v for k, v in norms.items()}, np.flatnonzero(bad))
            failed |= bad
            new[bad] = coeffs[bad]
        fr = frozen.reshape((n_paths,) + (1,) * (g.dim + 1))
        coeffs = np.where(fr, coeffs, new)
        record_now = ((i + 1) % ledger_stride == 0) or i + 1 == n or bool(thresholds)
        if record_now:
            new_norms = field_diagnostics(g, coeffs, dissipation)
            big = np.zeros(n_paths, dtype=bool)
            for name in ("L2", "L3", "L6"):
                big |= ~(new_norms[name] <= BLOWUP_THRESHOLD)
            big &= ~frozen
            if np.any(big):
                if blowup == "raise":
                    raise BlowUpError(f"norm above {BLOWUP_THRESHOLD:g} at t={t:.6g} on paths "
                                      f"{np.flatnonzero(big).tolist()}", t,
                                      {k: v for k, v in norms.items()}, np.flatnonzero(big))
                failed |= big
            for mon, thr in thresholds:
                hit = (new_norms[mon.quantity] >= thr) & ~frozen & ~big
                for j in np.flatnonzero(hit):
                    stop_times[j] = t
                    stop_reason[j] = mon.name
                frozen = frozen | hit
            frozen = frozen | big
            norms = new_norms
            if ((i + 1) % ledger_stride == 0) or i + 1 == n:
                builder.append(t, norms, frozen)
        if dense:
            d_u.append(low(coeffs))
        if record_fields and ((i + 1) % record_fields == 0 or i + 1 == n):
            fields.append(coeffs.copy())

    meta = {"stop_times": stop_times, "stop_reason": stop_reason, "failed": failed}
    if dense:
        meta["dense"] = DenseRecord(
            times=np.arange(n + 1) * spec.dt, modes=sel, wavevectors=kvecs,
            u=np.array(d_u), drift=np.array(d_drift), noise=np.array(d_noise),
            dW=np.array(d_dw).reshape(n, n_paths, spec.n_modes), stop_times=stop_times, grid=g)
    if record_fields:
        meta["fields"] = np.array(fields)
    ledger = builder.build(meta)
    if not batched:
        single = ledger.path(0)
        single.meta = {"stop_times": stop_times[0], "stop_reason": stop_reason[0],
                       "failed": bool(failed[0])}
        if dense:
            single.meta["dense"] = meta["dense"]
        if record_fields:
            single.meta["fields"] = meta["fields"][:, 0]
        ledger = single
        out = PathState(t, u0.with_coeffs(coeffs[0]), frozen[0], ledger)
    else:
        out = PathState(t, u0.with_coeffs(coeffs), frozen, ledger)
    return out, ledger


# --------------------------------------------------------------------------
# weak form


def _pair(volume: float, hat: np.ndarray, kind: np.ndarray) -> np.ndarray:
    """``(f, phi)`` for ``phi = cos(n.x)`` (kind 0) or ``sin(n.x)`` (kind 1)."""
    return volume * np.where(kind == 0, np.real(hat), -np.imag(hat))


def weak_form_residual(record, quad_step: float | None = None,
                       return_per_path: bool = False):
    """Largest defect of the weak formulation over test modes, components and time.

    For each stored wavevector ``n`` the test functions are ``cos(n.x)`` and
    ``sin(n.x)`` (``n = 0`` gives the constant). At quadrature points
    ``t_j = j h`` the defect is

        (u_j(t), phi) - (u_j(0), phi) - int (u_j, Lap phi) - int (F_j, phi)
            - sum (sigma_j, phi) dW,

    with trapezoid sums for the Lebesgue integrals, left-point sums for the
    Ito integral, and ``h = quad_step`` (a multiple of the stored step;
    default: the stored step). Times beyond a path's stop time are ignored.

    Args:
        record: A :class:`DenseRecord` or a ledger whose ``meta`` holds one.

    Returns:
        Ensemble mean of the per-path maxima (and the per-path array when
        ``return_per_path``).

    Raises:
        UsageError: the run did not keep dense output.
    """
    if isinstance(record, EnergyLedger):
        record = record.meta.get("dense")
    if not isinstance(record, DenseRecord):
        raise UsageError("weak_form_residual needs a run with dense output enabled")
    g = record.grid
    dt = record.times[1] - record.times[0]
    m = 1 if quad_step is None else int(round(quad_step / dt))
    if m < 1 or abs(m * dt - (quad_step or dt)) > 1e-9 * dt:
        raise ValueError(f"quadrature step {quad_step} is not a multiple of {dt}")
    n_steps = len(record.times) - 1
    nq = n_steps // m
    idx = np.arange(nq + 1) * m
    times = record.times[idx]
    u = record.u[idx]                              # (nq+1, B, c, S)
    drift = record.drift[idx[:-1]]                 # (nq, B, c, S)
    cols = record.noise[idx[:-1]]                  # (nq, B, K, c, S)
    dW = record.dW[: nq * m].reshape(nq, m, *record.dW.shape[1:]).sum(axis=1)  # (nq, B, K)
    # drift at the right endpoint of the last interval is not stored; use
    # left-point sums where the trapezoid needs it
    k2 = np.sum(record.wavevectors ** 2, axis=1)    # (S,)
    vol = g.volume
    res_all = []
    for kind in (0, 1):
        kk = np.full(k2.shape, kind)
        pu = _pair(vol, u, kk)                      # (nq+1, B, c, S)
        pf = _pair(vol, drift, kk)
        lap = -k2 * pu
        lin_int = 0.5 * (lap[1:] + lap[:-1]) * (times[1:] - times[:-1])[:, None, None, None]
        if nq > 1:
            fmid = np.concatenate([0.5 * (pf[1:] + pf[:-1]), pf[-1:]], axis=0)
        else:
            fmid = pf
        drift_int = fmid * (times[1:] - times[:-1])[:, None, None, None]
        pn = _pair(vol, cols, kk)                   # (nq, B, K, c, S)
        ito = np.einsum("qbkcs,qbk->qbcs", pn, dW)
        rhs = np.concatenate([np.zeros_like(pu[:1]),
                              np.cumsum(lin_int + drift_int + ito, axis=0)])
        res = np.abs(pu - pu[0] - rhs)              # (nq+1, B, c, S)
        if kind == 1:
            res = res * (k2 > 0)
        res_all.append(res)
    res = np.maximum(res_all[0], res_all[1])
    valid = times[:, None] <= record.stop_times[None, :] + 1e-12
    per_path = np.max(np.where(valid[:, :, None, None], res, 0.0), axis=(0, 2, 3))
    mean = float(np.mean(per_path))
    return (mean, per_path) if return_per_path else mean
