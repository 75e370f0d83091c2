"""Splitting of initial data into a regular part and a small critical part.

The split ``u0 = w_bar_0 + w0`` is a Fourier low-pass/high-pass cut at the
smallest shell radius that makes the high-pass part small in the critical
norm. The small part is then cut again into annular bands

    w0 = v0^(0) + v0^(1) + ... + v0^(K_max) + tail

chosen so that the residual after band ``k`` is at most
``(3/4) * ||w0|| / 4**(k+1)``. The triangle inequality then gives
``||v0^(0)|| <= (19/16) ||w0||`` and ``||v0^(k)|| <= (15/16) ||w0|| / 4**k``
for ``k >= 1``, and the final residual is below ``||w0|| / (3 * 4**K_max)``.
Fourier truncation keeps every piece divergence-free and mean-zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .spectral import (
    Grid,
    SpectralField,
    leray_project_hat,
    lebesgue_norm,
    sobolev_norm,
    to_spectral,
)

TAIL_FACTOR = 0.75


class InfeasibleSplitError(ValueError):
    """No admissible low-pass radius reaches the requested smallness."""

    def __init__(self, message: str, best_tail: float, max_radius2: int, n_per_axis: int):
        super().__init__(message)
        self.best_tail = best_tail
        self.max_radius2 = max_radius2
        self.n_per_axis = n_per_axis


class DecompositionError(RuntimeError):
    """A level violates its certified bound (self-check; should not happen)."""


def critical_norm(f: SpectralField, norm: str = "L3") -> float:
    """The smallness norm of the splitting: ``L3`` or ``H12`` (= H^{1/2})."""
    if norm == "L3":
        return float(lebesgue_norm(f, 3))
    if norm == "H12":
        return float(sobolev_norm(f, 0.5))
    raise ValueError(f"unknown critical norm {norm!r}")


def regular_norm(f: SpectralField, norm: str = "L3") -> float:
    """The matching subcritical norm: ``L6`` for ``L3``, ``H1`` for ``H12``."""
    if norm == "L3":
        return float(lebesgue_norm(f, 6))
    if norm == "H12":
        return float(sobolev_norm(f, 1.0))
    raise ValueError(f"unknown critical norm {norm!r}")


def low_pass(f: SpectralField, radius2: float) -> SpectralField:
    """Keep modes with ``|n|^2 <= radius2``."""
    return f.with_coeffs(f.coeffs * (f.grid.k2 <= radius2))


def default_split_radius2(grid: Grid) -> int:
    """Largest admissible cut for the regular part: the dealiased band."""
    return (grid.n_per_axis // 3) ** 2


class InitialSplit(NamedTuple):
    w_bar_0: SpectralField
    w0: SpectralField
    k0: float
    radius2: int
    tail_norm: float


def split_initial_datum(u0: SpectralField, epsilon0: float, norm: str = "L3",
                        max_radius2: int | None = None) -> InitialSplit:
    """Split ``u0`` into a low-pass part and a high-pass part small in ``norm``.

    The cut is the smallest shell radius ``N`` with ``||P_{>N} u0|| <= epsilon0``.
    Radii are limited to ``max_radius2`` (default: the dealiased band); if
    no admissible radius works, :class:`InfeasibleSplitError` carries the
    best achievable tail norm.
    """
    if not 0 < epsilon0 < 0.5:
        raise ValueError(f"epsilon0 must lie in (0, 1/2), got {epsilon0}")
    grid = u0.grid
    if max_radius2 is None:
        max_radius2 = default_split_radius2(grid)
    zero = SpectralField.zeros(grid, u0.ncomp)
    best = np.inf
    for r2 in np.concatenate([[0], grid.shells()]):
        if r2 > max_radius2:
            break
        high = u0.with_coeffs(u0.coeffs * (grid.k2 > r2))
        tail = critical_norm(high, norm)
        best = min(best, tail)
        if tail <= epsilon0:
            low = u0 - high if r2 > 0 else zero
            low = SpectralField(grid, low.coeffs, u0.divergence_free)
            return InitialSplit(low, high, regular_norm(low, norm), int(r2), tail)
    needed = 3 * int(np.ceil(np.sqrt(max_radius2))) + 2
    raise InfeasibleSplitError(
        f"epsilon0={epsilon0} is not reachable with a low-pass cut inside the dealiased "
        f"band |n|^2 <= {max_radius2}; best tail {norm} norm {best:.6g}. "
        f"Use a finer grid (n_per_axis > {needed}) or a larger epsilon0.",
        float(best), int(max_radius2), grid.n_per_axis)


@dataclass
class DecompositionResult:
    """Pieces of the initial datum together with their recorded norms."""

    w_bar_0: SpectralField
    levels: list[SpectralField]
    epsilon0: float
    k0: float
    norm: str = "L3"
    w0_norm: float = 0.0
    certificates: list[dict] = field(default_factory=list)
    tail_norm: float = 0.0

    @property
    def k_max(self) -> int:
        return len(self.levels) - 1

    @property
    def w0(self) -> SpectralField:
        total = self.levels[0]
        for v in self.levels[1:]:
            total = total + v
        return total

    def level_bound(self, k: int) -> float:
        return 2 * self.w0_norm if k == 0 else self.w0_norm / 4 ** k

    def verify(self, rtol: float = 1e-12) -> None:
        """Recompute every certificate and compare with the stored value."""
        for k, (v, cert) in enumerate(zip(self.levels, self.certificates)):
            crit = critical_norm(v, self.norm)
            reg = regular_norm(v, self.norm)
            for name, value in (("critical", crit), ("regular", reg)):
                stored = cert[name]
                if abs(value - stored) > rtol * max(abs(stored), 1e-300):
                    raise DecompositionError(
                        f"level {k}: recomputed {name} norm {value!r} != stored {stored!r}")
            if crit > self.level_bound(k):
                raise DecompositionError(f"level {k}: bound violated")

    def certificate_json(self) -> str:
        doc = {
            "norm": self.norm,
            "epsilon0": self.epsilon0,
            "K0": self.k0,
            "w0_norm": self.w0_norm,
            "tail_norm": self.tail_norm,
            "tail_bound": self.w0_norm / (3 * 4 ** self.k_max),
            "w_bar_0": {
                "critical": critical_norm(self.w_bar_0, self.norm),
                "regular": regular_norm(self.w_bar_0, self.norm),
            },
            "levels": self.certificates,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def dyadic_decompose(w0: SpectralField, k_max: int = 12, norm: str = "L3",
                     epsilon0: float | None = None,
                     w_bar_0: SpectralField | None = None, k0: float = 0.0) -> DecompositionResult:
    """Cut ``w0`` into ``k_max + 1`` annular Fourier bands with geometric bounds."""
    grid = w0.grid
    total = critical_norm(w0, norm)
    shells = grid.shells()
    levels, certs = [], []
    residual = w0
    lower = -1.0
    for k in range(k_max + 1):
        target = TAIL_FACTOR * total / 4 ** (k + 1)
        chosen = None
        for r2 in shells[shells > lower]:
            rest = residual.with_coeffs(residual.coeffs * (grid.k2 > r2))
            if critical_norm(rest, norm) <= target:
                chosen = r2
                break
        if chosen is None:
            chosen = shells[-1]
        band = residual.with_coeffs(residual.coeffs * ((grid.k2 > lower) & (grid.k2 <= chosen)))
        residual = residual.with_coeffs(residual.coeffs * (grid.k2 > chosen))
        lower = float(chosen)
        band = SpectralField(grid, band.coeffs, w0.divergence_free)
        crit = critical_norm(band, norm)
        bound = 2 * total if k == 0 else total / 4 ** k
        if crit > bound:
            raise DecompositionError(
                f"level {k}: {norm} norm {crit:.6g} exceeds bound {bound:.6g}")
        levels.append(band)
        certs.append({
            "level": k,
            "radius2": float(chosen),
            "critical": crit,
            "regular": regular_norm(band, norm),
            "bound": bound,
            "tail_after": critical_norm(residual, norm),
        })
    tail = critical_norm(residual, norm)
    if tail > total / (3 * 4 ** k_max):
        raise DecompositionError(f"tail {tail:.6g} exceeds geometric bound")
    if w_bar_0 is None:
        w_bar_0 = SpectralField.zeros(grid, w0.ncomp)
    return DecompositionResult(
        w_bar_0=w_bar_0, levels=levels,
        epsilon0=total if epsilon0 is None else epsilon0,
        k0=k0, norm=norm, w0_norm=total, certificates=certs, tail_norm=tail)


def decompose(u0: SpectralField, epsilon0: float = 0.05, k_max: int = 12,
              norm: str = "L3", max_radius2: int | None = None) -> DecompositionResult:
    """Split ``u0`` and decompose the small part; the full two-stage pipeline."""
    split = split_initial_datum(u0, epsilon0, norm, max_radius2)
    return dyadic_decompose(split.w0, k_max, norm, epsilon0=epsilon0,
                            w_bar_0=split.w_bar_0, k0=split.k0)


# --------------------------------------------------------------------------
# initial data families


def random_solenoidal(grid: Grid, rng: np.random.Generator, slope: float = 1.0,
                      cutoff2: float | None = None, batch: tuple = (),
                      decay: float = 0.0) -> SpectralField:
    """Random divergence-free, mean-zero field with spectral envelope.

    The envelope is ``|n|^(-slope) * exp(-decay * |n|)`` on ``|n|^2 <= cutoff2``.
    Amplitudes are not normalised.
    """
    noise = rng.standard_normal(batch + (grid.dim,) + grid.shape)
    coeffs = to_spectral(grid, noise)
    kmag = np.sqrt(grid.k2)
    env = np.where(grid.k2 > 0, np.maximum(kmag, 1.0) ** (-slope), 0.0) * np.exp(-decay * kmag)
    if cutoff2 is not None:
        env = env * (grid.k2 <= cutoff2)
    coeffs = leray_project_hat(grid, coeffs * env)
    return SpectralField(grid, coeffs, True)


def taylor_green(grid: Grid, amplitude: float = 1.0) -> SpectralField:
    """Taylor-Green vortex; an exact decaying solution of the unforced NSE in 2D."""
    x = grid.coordinates()
    if grid.dim == 2:
        u = np.array([np.sin(x[0]) * np.cos(x[1]), -np.cos(x[0]) * np.sin(x[1])])
    else:
        u = np.array([np.sin(x[0]) * np.cos(x[1]) * np.cos(x[2]),
                      -np.cos(x[0]) * np.sin(x[1]) * np.cos(x[2]),
                      np.zeros_like(x[0])])
    return SpectralField.from_physical(grid, amplitude * u, divergence_free=True)


def scale_to(f: SpectralField, target: float, norm: str = "L3") -> SpectralField:
    """Rescale ``f`` so that its critical norm equals ``target``."""
    current = critical_norm(f, norm)
    if current == 0:
        return f
    return f * (target / current)
