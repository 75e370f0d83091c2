"""Truncated Fourier representation of periodic vector fields on the torus.

Fields live on ``[0, 2*pi)^dim`` with integer wavevectors. Coefficients are
stored in standard FFT ordering and normalised so that

    u(x) = sum_n u_hat(n) exp(i n.x),

i.e. ``u_hat = fftn(u) / n_per_axis**dim``. The Nyquist planes are kept at
zero so every coefficient array describes a real trigonometric polynomial.

All kernels accept arbitrary leading batch axes: a coefficient array has
shape ``(*batch, ncomp, *grid.shape)``. Norms reduce over the component and
spatial axes and return arrays of shape ``batch``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi


class StructuralError(ValueError):
    """Fields or operators that do not fit together (grid, component count)."""


class UndefinedRatioError(ValueError):
    """A ratio was requested whose denominator vanishes."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n_per_axis`` points per axis."""

    dim: int
    n_per_axis: int

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise StructuralError(f"dim must be 2 or 3, got {self.dim}")
        if self.n_per_axis < 8 or self.n_per_axis % 2:
            raise StructuralError(
                f"n_per_axis must be even and >= 8, got {self.n_per_axis}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_per_axis,) * self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @property
    def volume(self) -> float:
        return TWO_PI ** self.dim

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavevector components, shape ``(dim, *shape)``."""
        k = np.fft.fftfreq(self.n_per_axis, 1.0 / self.n_per_axis)
        return np.array(np.meshgrid(*([k] * self.dim), indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.wavenumbers ** 2, axis=0)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on modes kept by the truncation (Nyquist planes removed)."""
        half = self.n_per_axis // 2
        return np.all(np.abs(self.wavenumbers) < half, axis=0)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keep ``|n_i| <= n_per_axis // 3`` on every axis."""
        return np.all(np.abs(self.wavenumbers) <= self.n_per_axis // 3, axis=0)

    @cached_property
    def _k_over_k2(self) -> np.ndarray:
        k2 = np.where(self.k2 == 0, 1, self.k2)
        return self.wavenumbers / k2

    def coordinates(self, oversample: int = 1) -> np.ndarray:
        """Physical coordinates, shape ``(dim, *shape)`` on the refined grid."""
        m = self.n_per_axis * oversample
        x = TWO_PI * np.arange(m) / m
        return np.array(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def quadrature(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid rule over the trailing ``dim`` axes (any resolution)."""
        batch = values.shape[: values.ndim - self.dim]
        flat = values.reshape(batch + (-1,))
        return self.volume * flat.mean(axis=-1)

    def shells(self) -> np.ndarray:
        """Sorted distinct values of ``|n|^2`` on the truncated lattice."""
        return np.unique(self.k2[self.nyquist_mask])


# --------------------------------------------------------------------------
# transforms


def to_physical(grid: Grid, coeffs: np.ndarray, oversample: int = 1) -> np.ndarray:
    """Evaluate coefficients on the grid refined by ``oversample``.

    Only the half-spectrum is read, so the input must be Hermitian.
    """
    n = grid.n_per_axis
    m = n * oversample
    d = grid.dim
    half = coeffs[..., : n // 2]
    if oversample == 1:
        spec = np.zeros(coeffs.shape[:-1] + (n // 2 + 1,), dtype=complex)
        spec[..., : n // 2] = half
    else:
        spec = np.zeros(coeffs.shape[:-d] + (m,) * (d - 1) + (m // 2 + 1,),
                        dtype=complex)
        lo, hi = slice(0, n // 2), slice(n // 2 + 1, n)
        plo, phi = slice(0, n // 2), slice(m - n // 2 + 1, m)
        if d == 2:
            spec[..., plo, : n // 2] = half[..., lo, :]
            spec[..., phi, : n // 2] = half[..., hi, :]
        else:
            for src0, dst0 in ((lo, plo), (hi, phi)):
                for src1, dst1 in ((lo, plo), (hi, phi)):
                    spec[..., dst0, dst1, : n // 2] = half[..., src0, src1, :]
    scale = m ** d
    return sfft.irfftn(spec * scale, s=(m,) * d, axes=grid.axes)


def to_spectral(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Coefficients of real samples on the base grid; Nyquist planes zeroed."""
    if values.shape[-grid.dim:] != grid.shape:
        raise StructuralError(
            f"sample shape {values.shape[-grid.dim:]} does not match grid {grid.shape}")
    coeffs = sfft.fftn(values, axes=grid.axes) / grid.n_per_axis ** grid.dim
    return coeffs * grid.nyquist_mask


def hermitian_part(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Project coefficients onto real fields, ``(c(n) + conj(c(-n))) / 2``."""
    flipped = np.conj(np.flip(coeffs, axis=grid.axes))
    flipped = np.roll(flipped, 1, axis=grid.axes)
    return 0.5 * (coeffs + flipped) * grid.nyquist_mask


# --------------------------------------------------------------------------
# field containers


@dataclass(frozen=True)
class SpectralField:
    """Real vector (or scalar) field stored as truncated Fourier coefficients.

    ``coeffs`` has shape ``(*batch, ncomp, *grid.shape)``. The
    ``divergence_free`` flag records an intent; :meth:`check` verifies it.
    """

    grid: Grid
    coeffs: np.ndarray
    divergence_free: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim < self.grid.dim + 1 or c.shape[-self.grid.dim:] != self.grid.shape:
            raise StructuralError(
                f"coefficient shape {c.shape} does not fit grid {self.grid.shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: Grid, ncomp: int | None = None, batch: tuple = ()) -> "SpectralField":
        ncomp = grid.dim if ncomp is None else ncomp
        return cls(grid, np.zeros(batch + (ncomp,) + grid.shape, dtype=complex),
                   divergence_free=ncomp == grid.dim)

    @classmethod
    def from_physical(cls, grid: Grid, values: np.ndarray,
                      divergence_free: bool = False) -> "SpectralField":
        values = np.asarray(values, dtype=float)
        if values.ndim == grid.dim:
            values = values[None]
        return cls(grid, to_spectral(grid, values), divergence_free)

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[-self.grid.dim - 1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[: -self.grid.dim - 1]

    def physical(self, oversample: int = 1) -> np.ndarray:
        return to_physical(self.grid, self.coeffs, oversample)

    def with_coeffs(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, coeffs, self.divergence_free)

    def __getitem__(self, index) -> "SpectralField":
        if not self.batch_shape:
            raise IndexError("field has no batch axis")
        return self.with_coeffs(self.coeffs[index])

    def _other(self, other: "SpectralField") -> np.ndarray:
        if other.grid != self.grid:
            raise StructuralError(f"grid mismatch: {self.grid} vs {other.grid}")
        return other.coeffs

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs + self._other(other),
                             self.divergence_free and other.divergence_free)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs - self._other(other),
                             self.divergence_free and other.divergence_free)

    def __mul__(self, scalar) -> "SpectralField":
        scalar = np.asarray(scalar)
        if scalar.ndim:
            scalar = scalar.reshape(scalar.shape + (1,) * (self.grid.dim + 1))
        return self.with_coeffs(self.coeffs * scalar)

    __rmul__ = __mul__

    def check(self, tol: float = 1e-12) -> None:
        """Raise ``ValueError`` if an invariant of the representation fails."""
        g = self.grid
        c = self.coeffs
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite coefficients")
        scale = max(np.max(np.abs(c)), 1.0)
        if np.max(np.abs(c - hermitian_part(g, c))) > tol * scale:
            raise ValueError("coefficients are not Hermitian symmetric")
        if np.max(np.abs(c[(..., slice(None)) + (0,) * g.dim])) > tol * scale:
            raise ValueError("field has nonzero mean")
        if self.divergence_free:
            div = np.abs(divergence_hat(g, c))
            if np.max(div) > tol * scale:
                raise ValueError(f"divergence {np.max(div):.3e} exceeds tolerance")


@dataclass(frozen=True)
class ScalarDensity:
    """Physical-space samples of a scalar (any resolution on the torus)."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("ScalarDensity values must be finite")
        object.__setattr__(self, "values", v)


# --------------------------------------------------------------------------
# differential operators


def _check_vector(grid: Grid, coeffs: np.ndarray) -> None:
    if coeffs.shape[-grid.dim - 1] != grid.dim:
        raise StructuralError(
            f"expected {grid.dim} components, got {coeffs.shape[-grid.dim - 1]}")


def gradient_hat(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Spectral gradient; inserts a derivative axis after the component axis."""
    return 1j * np.expand_dims(coeffs, -grid.dim - 1) * grid.wavenumbers


def divergence_hat(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    _check_vector(grid, coeffs)
    return 1j * np.sum(grid.wavenumbers * coeffs, axis=-grid.dim - 1)


def leray_project_hat(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Apply ``I - n n^T / |n|^2`` mode-wise and remove the mean."""
    _check_vector(grid, coeffs)
    caxis = -grid.dim - 1
    ndotf = np.sum(grid.wavenumbers * coeffs, axis=caxis, keepdims=True)
    out = coeffs - grid._k_over_k2 * ndotf
    out[(..., slice(None)) + (0,) * grid.dim] = 0.0
    return out


def leray_project(f: SpectralField) -> SpectralField:
    """Leray projection onto divergence-free, mean-zero fields."""
    return SpectralField(f.grid, leray_project_hat(f.grid, f.coeffs), True)


def advection_hat(grid: Grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dealiased ``P((a . grad) b)`` for coefficient arrays ``a``, ``b``."""
    _check_vector(grid, a)
    _check_vector(grid, b)
    mask = grid.dealias_mask
    a = a * mask
    b = b * mask
    d = grid.dim
    a_phys = to_physical(grid, a)
    grad_b = to_physical(grid, gradient_hat(grid, b))      # (..., j, m, *shape)
    prod = np.sum(np.expand_dims(a_phys, -d - 2) * grad_b, axis=-d - 1)
    out = to_spectral(grid, prod) * mask
    return leray_project_hat(grid, out)


def flux_divergence_hat(grid: Grid, tensor: np.ndarray) -> np.ndarray:
    """Dealiased ``P(div T)`` for physical samples ``T[..., j, m, *shape]``.

    Returns ``P(sum_m d_m T_jm)``; with ``T_jm = a_m b_j`` and ``div a = 0``
    this equals ``P((a . grad) b)``.
    """
    d = grid.dim
    t_hat = to_spectral(grid, tensor) * grid.dealias_mask
    out = 1j * np.sum(grid.wavenumbers * t_hat, axis=-d - 1)
    return leray_project_hat(grid, out)


def nonlinear_term(u: SpectralField) -> SpectralField:
    """Pseudospectral ``P((u . grad) u)`` with 2/3-rule dealiasing."""
    return SpectralField(u.grid, advection_hat(u.grid, u.coeffs, u.coeffs), True)


# --------------------------------------------------------------------------
# norms

NORM_OVERSAMPLE = 2


def _magnitude(grid: Grid, values: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(values ** 2, axis=-grid.dim - 1))


def lp_of_samples(grid: Grid, magnitude: np.ndarray, p: float) -> np.ndarray:
    """``(int |f|^p)^(1/p)`` by quadrature of nonnegative samples."""
    if p < 1:
        raise ValueError(f"exponent p must be >= 1, got {p}")
    return grid.quadrature(magnitude ** p) ** (1.0 / p)


def lebesgue_norm(f: SpectralField | ScalarDensity, p: float) -> np.ndarray | float:
    """L^p norm with Euclidean magnitude for vector fields.

    Spectral fields are sampled on a twice refined grid so that the
    non-band-limited integrand ``|f|^p`` is integrated accurately.
    """
    if p < 1:
        raise ValueError(f"exponent p must be >= 1, got {p}")
    if isinstance(f, ScalarDensity):
        return lp_of_samples(f.grid, np.abs(f.values), p)
    values = f.physical(NORM_OVERSAMPLE)
    return lp_of_samples(f.grid, _magnitude(f.grid, values), p)


def sobolev_multiplier(grid: Grid, alpha: float) -> np.ndarray:
    return (1.0 + grid.k2) ** (alpha / 2.0)


def sobolev_norm(f: SpectralField, alpha: float, p: float = 2,
                 method: str = "auto") -> np.ndarray:
    """``||((1+|n|^2)^(alpha/2) f_hat)^vee||_{L^p}``.

    For ``p == 2`` the default evaluates the Plancherel sum; pass
    ``method="quadrature"`` to force the physical-space route.
    """
    g = f.grid
    if method == "auto":
        method = "plancherel" if p == 2 else "quadrature"
    if method == "plancherel":
        if p != 2:
            raise ValueError("Plancherel evaluation needs p == 2")
        w = (1.0 + g.k2) ** alpha
        flat = (w * np.abs(f.coeffs) ** 2).reshape(f.batch_shape + (-1,))
        return np.sqrt(g.volume * flat.sum(axis=-1))
    if alpha == 0:
        return lebesgue_norm(f, p)
    return lebesgue_norm(f.with_coeffs(f.coeffs * sobolev_multiplier(g, alpha)), p)


def sobolev_norms_sq(grid: Grid, coeffs: np.ndarray, alphas) -> dict:
    """Squared ``H^alpha`` norms for several exponents in one pass."""
    batch = coeffs.shape[: -grid.dim - 1]
    a2 = (np.abs(coeffs) ** 2).sum(axis=-grid.dim - 1).reshape(batch + (-1,))
    base = (1.0 + grid.k2).reshape(-1)
    return {alpha: grid.volume * (a2 * base ** alpha).sum(axis=-1) for alpha in alphas}


def hilbert_schmidt_norm(cols, p: float, alpha: float = 0.0) -> np.ndarray | float:
    """``(int (sum_k |g e_k(x)|^2)^(p/2) dx)^(1/p)`` for a column family.

    ``cols`` is a list of :class:`SpectralField` sharing one grid, or a
    single field whose first batch axis indexes the columns.
    """
    if isinstance(cols, SpectralField):
        grid, coeffs = cols.grid, cols.coeffs
        if not cols.batch_shape:
            coeffs = coeffs[None]
    else:
        cols = list(cols)
        if not cols:
            return 0.0
        grid = cols[0].grid
        for c in cols[1:]:
            if c.grid != grid:
                raise StructuralError("columns live on different grids")
        coeffs = np.stack([c.coeffs for c in cols])
    if alpha:
        coeffs = coeffs * sobolev_multiplier(grid, alpha)
    values = to_physical(grid, coeffs, NORM_OVERSAMPLE)
    sq = np.sum(values ** 2, axis=(0, -grid.dim - 1))
    return lp_of_samples(grid, np.sqrt(sq), p)


def dissipation_functional(f: SpectralField, p: float, method: str = "chain") -> np.ndarray:
    """``sum_j int |grad(|f_j|^(p/2))|^2 dx``.

    ``method="chain"`` uses ``grad |f_j|^(p/2) = (p/2) |f_j|^(p/2-1) sgn(f_j) grad f_j``
    with the spectral gradient of the band-limited ``f_j``; the integrand is
    then sampled on the refined grid. ``method="spectral"`` forms
    ``|f_j|^(p/2)`` on the refined grid and differentiates it spectrally,
    which converges only algebraically at zeros of ``f_j``.
    """
    if p < 2:
        raise ValueError(f"dissipation functional needs p >= 2, got {p}")
    g = f.grid
    if method == "chain":
        return _dissipation_chain(g, f.coeffs, p)
    if method == "spectral":
        m = g.n_per_axis * NORM_OVERSAMPLE
        vals = np.abs(f.physical(NORM_OVERSAMPLE)) ** (p / 2.0)
        hat = sfft.fftn(vals, axes=g.axes) / m ** g.dim
        k = np.fft.fftfreq(m, 1.0 / m)
        k2 = np.sum(np.array(np.meshgrid(*([k] * g.dim), indexing="ij")) ** 2, axis=0)
        dens = k2 * np.abs(hat) ** 2                    # (..., ncomp, *fine)
        per_comp = dens.reshape(dens.shape[: -g.dim] + (-1,)).sum(axis=-1)
        return g.volume * per_comp.sum(axis=-1)
    raise ValueError(f"unknown method {method!r}")


def _dissipation_chain(grid: Grid, coeffs: np.ndarray, p: float,
                       values: np.ndarray | None = None) -> np.ndarray:
    d = grid.dim
    if values is None:
        values = to_physical(grid, coeffs, NORM_OVERSAMPLE)
    grads = to_physical(grid, gradient_hat(grid, coeffs), NORM_OVERSAMPLE)
    grad_sq = np.sum(grads ** 2, axis=-d - 1)              # (..., ncomp, *fine)
    if p == 2:
        dens = grad_sq
    else:
        dens = np.abs(values) ** (p - 2.0) * grad_sq
    dens = np.sum(dens, axis=-d - 1)
    return (p / 2.0) ** 2 * grid.quadrature(dens)


def poincare_ratio(f: SpectralField, p: float) -> np.ndarray:
    """``||f||_{L^{3p}}^p / sum_j ||grad |f_j|^(p/2)||_{L^2}^2``."""
    num = lebesgue_norm(f, 3 * p) ** p
    den = dissipation_functional(f, p)
    if np.any(np.asarray(den) <= 0):
        raise UndefinedRatioError("poincare_ratio is undefined for the zero field")
    return num / den


def inner_product(f: SpectralField, g: SpectralField) -> np.ndarray:
    """Real L^2 pairing ``int f . g dx`` via Parseval."""
    prod = np.real(f.coeffs * np.conj(f._other(g)))
    batch = prod.shape[: -f.grid.dim - 1]
    return f.grid.volume * prod.reshape(batch + (-1,)).sum(axis=-1)
