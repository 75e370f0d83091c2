"""Truncated Wiener processes and multiplicative noise coefficients.

A noise column acts on a field by a scalar Fourier multiplier followed by
the Leray projection,

    sigma(u) e_k = a(t) * c_k * P(chi_k * u),

where ``chi_k`` is a tensor-product Fejer filter of radius ``R_k``. The
Fejer kernel is nonnegative with unit mass, so each column is a contraction
on every ``L^p`` (and every ``H^s``) when it acts on divergence-free
fields. Minkowski's inequality for the pointwise l2 sum then bounds the
Lipschitz constant by ``(sum c_k^2)^(1/2)``.

Gaussian increments come from a counter-based generator keyed on the path
seed with the step index in the counter, so any step of any path can be
regenerated in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .spectral import (
    Grid,
    SpectralField,
    StructuralError,
    hilbert_schmidt_norm,
    leray_project_hat,
    lebesgue_norm,
)

# --------------------------------------------------------------------------
# Wiener paths


def path_seed(base_seed: int, path_index: int) -> int:
    """64-bit seed of path ``path_index`` derived from ``base_seed``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(path_index),))
    return int(ss.generate_state(1, np.uint64)[0])


def _unit_normals(seed: int, step: int, n_modes: int) -> np.ndarray:
    bitgen = np.random.Philox(key=int(seed), counter=[0, int(step), 0, 0])
    return np.random.Generator(bitgen).standard_normal(n_modes)


@dataclass(frozen=True)
class WienerPath:
    """Increments of ``n_modes`` independent Brownian motions on a uniform grid.

    A coarse step is the sum of ``substeps`` base increments of length
    ``dt / substeps``, so paths with equal ``seed`` and equal base step
    ``dt / substeps`` are the same Brownian path sampled at different
    resolutions.

    Attributes:
        seed: 64-bit key of the generator.
        dt: Step of the increments.
        n_modes: Number of independent Brownian motions.
        substeps: Base increments per step.
    """

    seed: int
    dt: float
    n_modes: int
    substeps: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def increment(self, step: int) -> np.ndarray:
        """``W(t_{step+1}) - W(t_step)`` for every mode."""
        if self.n_modes == 0:
            return np.zeros(0)
        h = self.dt / self.substeps
        base = step * self.substeps
        total = np.zeros(self.n_modes)
        for j in range(self.substeps):
            total += _unit_normals(self.seed, base + j, self.n_modes)
        return total * np.sqrt(h)

    def increments(self, n_steps: int, start: int = 0) -> np.ndarray:
        """Array of shape ``(n_steps, n_modes)``."""
        return np.array([self.increment(s) for s in range(start, start + n_steps)]).reshape(
            n_steps, self.n_modes)

    def refined(self, factor: int) -> "WienerPath":
        """The same Brownian path with steps ``factor`` times shorter."""
        if self.substeps % factor:
            raise ValueError(f"substeps {self.substeps} not divisible by {factor}")
        return WienerPath(self.seed, self.dt / factor, self.n_modes, self.substeps // factor)


class WienerEnsemble:
    """Independent paths sharing step and mode count; increments stacked."""

    def __init__(self, paths: Sequence[WienerPath]):
        paths = list(paths)
        if not paths:
            raise ValueError("empty ensemble")
        if len({(p.dt, p.n_modes, p.substeps) for p in paths}) != 1:
            raise ValueError("paths must share dt, n_modes and substeps")
        self.paths = paths

    @classmethod
    def from_base_seed(cls, base_seed: int, indices, dt: float, n_modes: int,
                       substeps: int = 1) -> "WienerEnsemble":
        return cls([WienerPath(path_seed(base_seed, i), dt, n_modes, substeps) for i in indices])

    @property
    def n_modes(self) -> int:
        return self.paths[0].n_modes

    @property
    def dt(self) -> float:
        return self.paths[0].dt

    def __len__(self) -> int:
        return len(self.paths)

    def increment(self, step: int) -> np.ndarray:
        """Shape ``(n_paths, n_modes)``."""
        return np.stack([p.increment(step) for p in self.paths])


# --------------------------------------------------------------------------
# noise models


def fejer_symbol(grid: Grid, radius: int | None) -> np.ndarray:
    """Tensor-product Fejer multiplier ``prod_i (1 - |n_i|/(R+1))_+``.

    ``radius=None`` is the identity multiplier. Radii beyond
    ``n_per_axis/2 - 1`` are clamped there, the largest radius whose kernel
    stays nonnegative on the grid.
    """
    if radius is None:
        return np.ones(grid.shape)
    if radius < 0:
        raise ValueError(f"filter radius must be nonnegative, got {radius}")
    radius = min(radius, grid.n_per_axis // 2 - 1)
    sym = np.ones(grid.shape)
    for axis in range(grid.dim):
        sym = sym * np.clip(1.0 - np.abs(grid.wavenumbers[axis]) / (radius + 1.0), 0.0, None)
    return sym


@dataclass(frozen=True)
class NoiseModel:
    """Finite family of multiplicative noise columns.

    Attributes:
        kind: ``"zero"`` or ``"diagonal-spectral"``.
        coefficients: Amplitudes ``c_k >= 0``.
        radii: Fejer radius per column; ``None`` means the identity filter.
        envelope: Optional deterministic time factor ``a(t)`` in ``[0, 1]``.
    """

    kind: str
    coefficients: tuple = ()
    radii: tuple = ()
    envelope: Callable[[float], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        c = tuple(float(x) for x in self.coefficients)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "radii", tuple(self.radii))
        if self.kind not in ("zero", "diagonal-spectral"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "zero" and c:
            raise ValueError("zero noise takes no coefficients")
        if len(self.radii) != len(c):
            raise ValueError("one filter radius per coefficient is required")
        if any(not np.isfinite(x) or x < 0 for x in c):
            raise ValueError("noise coefficients must be finite and nonnegative")
        object.__setattr__(self, "_symbol_cache", {})

    @property
    def n_modes(self) -> int:
        return len(self.coefficients)

    @property
    def lipschitz_K(self) -> float:
        """``(sum c_k^2)^(1/2) * max_k ||chi_k||_mult`` with unit multiplier norms."""
        if not self.coefficients:
            return 0.0
        return float(np.sqrt(np.sum(np.square(self.coefficients))))

    def amplitude(self, t: float) -> float:
        if self.envelope is None:
            return 1.0
        a = float(self.envelope(t))
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"noise envelope {a} outside [0, 1] at t={t}")
        return a

    def symbols(self, grid: Grid) -> np.ndarray:
        """``c_k chi_k(n)`` stacked along the first axis."""
        key = grid
        if key not in self._symbol_cache:
            if not self.coefficients:
                sym = np.zeros((0,) + grid.shape)
            else:
                sym = np.stack([c * fejer_symbol(grid, r)
                                for c, r in zip(self.coefficients, self.radii)])
            self._symbol_cache[key] = sym
        return self._symbol_cache[key]

    def columns_hat(self, grid: Grid, coeffs: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Column coefficients, shape ``(n_modes, *batch, ncomp, *grid.shape)``."""
        sym = self.symbols(grid)
        extra = coeffs.ndim - grid.dim
        sym = sym.reshape((sym.shape[0],) + (1,) * extra + grid.shape)
        out = sym * coeffs[None]
        if out.shape[-grid.dim - 1] == grid.dim:
            out = leray_project_hat(grid, out)
        return self.amplitude(t) * out

    def columns(self, u: SpectralField, t: float = 0.0) -> SpectralField:
        """``sigma(t, u) e_k`` for every ``k``; the column index is the first batch axis."""
        return SpectralField(u.grid, self.columns_hat(u.grid, u.coeffs, t), u.divergence_free)

    def apply_hat(self, grid: Grid, coeffs: np.ndarray, dW: np.ndarray,
                  t: float = 0.0) -> np.ndarray:
        """``sum_k sigma(t, u) e_k dW_k`` on coefficient arrays.

        ``dW`` has shape ``(*batch, n_modes)`` matching the batch of ``coeffs``.
        """
        dW = np.asarray(dW, dtype=float)
        if dW.shape[-1:] != (self.n_modes,):
            raise StructuralError(
                f"increment has {dW.shape[-1] if dW.ndim else 0} modes, model has {self.n_modes}")
        if self.n_modes == 0:
            return np.zeros_like(coeffs)
        combined = _weighted_sum(dW, self.symbols(grid))                   # (*batch, *shape)
        combined = np.expand_dims(combined, -grid.dim - 1)
        out = combined * coeffs
        if out.shape[-grid.dim - 1] == grid.dim:
            out = leray_project_hat(grid, out)
        return self.amplitude(t) * out


def _weighted_sum(dW: np.ndarray, stack: np.ndarray) -> np.ndarray:
    """``sum_k dW[..., k] * stack[k]`` in a fixed order.

    BLAS contractions may round differently depending on a row's position
    in the batch; an explicit loop keeps every path bit-identical however
    the ensemble is chunked.
    """
    tail = (1,) * (stack.ndim - 1)
    out = np.zeros(dW.shape[:-1] + stack.shape[1:], dtype=np.result_type(dW, stack))
    for k in range(stack.shape[0]):
        out = out + dW[..., k].reshape(dW.shape[:-1] + tail) * stack[k]
    return out


def make_noise_model(kind: str, params: dict | None = None) -> NoiseModel:
    """Build a noise model from a parameter block.

    Args:
        kind: ``"zero"``, ``"identity"`` (one identity column) or
            ``"diagonal-spectral"``.
        params: For ``diagonal-spectral``: ``n_modes`` (default 8),
            ``amplitude`` (default 1), ``decay`` (default 0.5; ``c_k =
            amplitude * decay**k``), optional explicit ``coefficients``
            and ``radii`` lists (default ``R_k = radius_step * k`` with
            ``radius_step`` defaulting to 1). For ``identity``:
            ``amplitude``.

    Raises:
        ValueError: negative, non-finite or non-summable coefficients.
    """
    params = dict(params or {})
    if kind == "zero":
        if params:
            raise ValueError(f"zero noise takes no parameters, got {sorted(params)}")
        return NoiseModel("zero")
    if kind == "identity":
        amp = float(params.pop("amplitude", 1.0))
        if params:
            raise ValueError(f"unknown identity-noise parameters {sorted(params)}")
        return NoiseModel("diagonal-spectral", (amp,), (None,))
    if kind != "diagonal-spectral":
        raise ValueError(f"unknown noise kind {kind!r}")
    n_modes = int(params.pop("n_modes", 8))
    amp = float(params.pop("amplitude", 1.0))
    decay = float(params.pop("decay", 0.5))
    coeffs = params.pop("coefficients", None)
    radii = params.pop("radii", None)
    radius_step = int(params.pop("radius_step", 1))
    if params:
        raise ValueError(f"unknown diagonal-spectral parameters {sorted(params)}")
    if coeffs is None:
        if not 0 <= decay < 1:
            raise ValueError("decay must lie in [0, 1) for square-summable coefficients")
        coeffs = [amp * decay ** k for k in range(1, n_modes + 1)]
    if radii is None:
        radii = [radius_step * k for k in range(1, len(coeffs) + 1)]
    radii = [None if r is None else int(r) for r in radii]
    return NoiseModel("diagonal-spectral", tuple(coeffs), tuple(radii))


def apply_noise(model: NoiseModel, u: SpectralField, dW, t: float = 0.0) -> SpectralField:
    """``sum_k sigma(t, u) e_k dW_k`` as a field."""
    return SpectralField(u.grid, model.apply_hat(u.grid, u.coeffs, dW, t), u.divergence_free)


class AdditiveNoise:
    """State-independent columns ``g(t)``; for the stochastic heat equation.

    Args:
        columns_fn: Maps ``t`` to coefficients of shape ``(n_modes, ncomp, *grid.shape)``.
        n_modes: Number of columns.
    """

    def __init__(self, columns_fn: Callable[[float], np.ndarray], n_modes: int):
        self.columns_fn = columns_fn
        self.n_modes = n_modes

    def columns_hat(self, grid: Grid, coeffs: np.ndarray, t: float = 0.0) -> np.ndarray:
        cols = self.columns_fn(t)
        batch = coeffs.shape[: -grid.dim - 1]
        return np.broadcast_to(
            cols.reshape((cols.shape[0],) + (1,) * len(batch) + cols.shape[1:]),
            (cols.shape[0],) + coeffs.shape)

    def apply_hat(self, grid: Grid, coeffs: np.ndarray, dW: np.ndarray, t: float = 0.0) -> np.ndarray:
        dW = np.asarray(dW, dtype=float)
        if dW.shape[-1:] != (self.n_modes,):
            raise StructuralError("increment mode count mismatch")
        if self.n_modes == 0:
            return np.zeros_like(coeffs)
        cols = self.columns_fn(t)
        out = _weighted_sum(dW, cols)
        return np.broadcast_to(out, coeffs.shape).copy()


# --------------------------------------------------------------------------
# validators


def lipschitz_audit(model: NoiseModel, grid: Grid, p: float, trials: int,
                    rng: np.random.Generator | int = 0, batch: int = 100) -> float:
    """Largest observed ``||sigma(u1) - sigma(u2)||_{L^p} / ||u1 - u2||_{L^p}``.

    Pairs are random divergence-free fields with randomly chosen spectral
    slopes and band limits.
    """
    from .initial_data import random_solenoidal

    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng)
    worst = 0.0
    done = 0
    while done < trials:
        m = min(batch, trials - done)
        slope = rng.uniform(0.0, 3.0)
        cutoff2 = rng.choice(grid.shells())
        u1 = random_solenoidal(grid, rng, slope=slope, cutoff2=cutoff2, batch=(m,))
        u2 = random_solenoidal(grid, rng, slope=slope, cutoff2=cutoff2, batch=(m,))
        diff_in = u1 - u2
        cols = model.columns_hat(grid, u1.coeffs) - model.columns_hat(grid, u2.coeffs)
        den = lebesgue_norm(diff_in, p)
        if model.n_modes == 0:
            num = np.zeros(m)
        else:
            num = np.array([hilbert_schmidt_norm(SpectralField(grid, cols[:, i]), p)
                            for i in range(m)])
        ok = den > 0
        if np.any(ok):
            worst = max(worst, float(np.max(num[ok] / den[ok])))
        done += m
    return worst


class ItoCheck(NamedTuple):
    empirical: float
    predicted: float
    z_score: float
    bdg_lhs: float
    bdg_rhs: float
    standard_error: float


BDG_CONSTANT = 3.0


def ito_isometry_check(model, u_fixed: SpectralField, samples: int, dt: float = 0.01,
                       seed: int = 0, t: float = 0.0) -> ItoCheck:
    """Second moment of a one-step stochastic integral with frozen integrand.

    Returns the empirical ``E ||sum_k g_k dW_k||_{L^2}^2``, the prediction
    ``dt * sum_k ||g_k||_{L^2}^2``, the z-score of their difference, and the
    two sides of the first-moment BDG bound
    ``E ||I||_{L^2} <= C E[(dt sum_k ||g_k||^2)^(1/2)]`` (with ``C = 1``
    on the left's right-hand side; compare against :data:`BDG_CONSTANT`).
    """
    if samples < 100:
        raise ValueError("samples must be >= 100")
    grid = u_fixed.grid
    cols = model.columns_hat(grid, u_fixed.coeffs, t)     # (K, ncomp, *shape)
    k = cols.shape[0]
    if k == 0:
        return ItoCheck(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    flat = cols.reshape(k, -1)
    gram = grid.volume * np.real(flat @ np.conj(flat).T)
    predicted = dt * float(np.trace(gram))
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    dW = rng.standard_normal((samples, k)) * np.sqrt(dt)
    second = np.einsum("si,ij,sj->s", dW, gram, dW)
    emp = float(np.mean(second))
    se = float(np.std(second, ddof=1) / np.sqrt(samples))
    z = (emp - predicted) / se if se > 0 else 0.0
    bdg_lhs = float(np.mean(np.sqrt(np.maximum(second, 0.0))))
    bdg_rhs = float(np.sqrt(predicted))
    return ItoCheck(emp, predicted, float(z), bdg_lhs, bdg_rhs, se)


def structure_defect(model: NoiseModel, u: SpectralField) -> dict:
    """Max divergence, mean and Hermitian defects over all columns."""
    from .spectral import divergence_hat, hermitian_part

    g = u.grid
    cols = model.columns_hat(g, u.coeffs)
    if cols.shape[0] == 0:
        return {"divergence": 0.0, "mean": 0.0, "hermitian": 0.0}
    return {
        "divergence": float(np.max(np.abs(divergence_hat(g, cols)))),
        "mean": float(np.max(np.abs(cols[(..., slice(None)) + (0,) * g.dim]))),
        "hermitian": float(np.max(np.abs(cols - hermitian_part(g, cols)))),
    }


__all__ = [
    "WienerPath", "WienerEnsemble", "path_seed", "NoiseModel", "make_noise_model",
    "apply_noise", "AdditiveNoise", "lipschitz_audit", "ito_isometry_check", "ItoCheck",
    "fejer_symbol", "structure_defect",
]
