"""Per-path time series of norms, dissipation integrals and cutoff values."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    Grid,
    NORM_OVERSAMPLE,
    gradient_hat,
    lp_of_samples,
    sobolev_norms_sq,
    to_physical,
)

SCHEMA_VERSION = 1
HEADER_COMMENT = f"# snse-ledger v{SCHEMA_VERSION}"

NORM_COLUMNS = ("L2", "L3", "L6", "H05", "H1", "H15", "H2", "dissip3", "dissip6")
INTEGRAL_COLUMNS = ("int_dissip3", "int_dissip6", "int_H15sq", "int_H2sq")
_INTEGRANDS = {"int_dissip3": "dissip3", "int_dissip6": "dissip6",
               "int_H15sq": "H15", "int_H2sq": "H2"}


def field_diagnostics(grid: Grid, coeffs: np.ndarray, dissipation: bool = True) -> dict:
    """Norms of a (batched) field in one pass over the refined grid.

    Returns arrays of shape ``batch`` for every name in :data:`NORM_COLUMNS`.
    Without ``dissipation`` the two dissipation functionals are NaN.
    """
    d = grid.dim
    values = to_physical(grid, coeffs, NORM_OVERSAMPLE)
    mag = np.sqrt(np.sum(values ** 2, axis=-d - 1))
    out = {"L3": lp_of_samples(grid, mag, 3), "L6": lp_of_samples(grid, mag, 6)}
    sq = sobolev_norms_sq(grid, coeffs, (0.0, 0.5, 1.0, 1.5, 2.0))
    for name, alpha in (("L2", 0.0), ("H05", 0.5), ("H1", 1.0), ("H15", 1.5), ("H2", 2.0)):
        out[name] = np.sqrt(sq[alpha])
    if dissipation:
        grads = to_physical(grid, gradient_hat(grid, coeffs), NORM_OVERSAMPLE)
        grad_sq = np.sum(grads ** 2, axis=-d - 1)            # (..., ncomp, *fine)
        absu = np.abs(values)
        u2 = absu * absu
        d3 = np.sum(absu * grad_sq, axis=-d - 1)
        d6 = np.sum(u2 * u2 * grad_sq, axis=-d - 1)
        out["dissip3"] = (1.5 ** 2) * grid.quadrature(d3)
        out["dissip6"] = (3.0 ** 2) * grid.quadrature(d6)
    else:
        nan = np.full(coeffs.shape[: -d - 1], np.nan)
        out["dissip3"] = nan
        out["dissip6"] = nan.copy()
    return out


@dataclass
class EnergyLedger:
    """Time series for one path (arrays of shape ``(n_records,)``) or a batch.

    Batched ledgers store arrays of shape ``(n_records, n_paths)``; use
    :meth:`path` to split them. Integral columns are trapezoid sums over the
    recorded times that stop growing once the path is frozen.
    """

    times: np.ndarray
    data: dict
    cutoff_names: tuple = ()
    frozen: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def columns(self) -> tuple:
        return ("t",) + NORM_COLUMNS + INTEGRAL_COLUMNS + tuple(self.cutoff_names) + ("frozen",)

    @property
    def batched(self) -> bool:
        return self.frozen is not None and self.frozen.ndim == 2

    @property
    def n_paths(self) -> int:
        return self.frozen.shape[1] if self.batched else 1

    def path(self, i: int) -> "EnergyLedger":
        if not self.batched:
            raise IndexError("ledger is not batched")
        return EnergyLedger(self.times.copy(), {k: v[:, i].copy() for k, v in self.data.items()},
                            self.cutoff_names, self.frozen[:, i].copy(), dict(self.meta))

    def __getitem__(self, name: str) -> np.ndarray:
        if name == "t":
            return self.times
        if name == "frozen":
            return self.frozen
        return self.data[name]

    def freeze_time(self) -> np.ndarray | float:
        """First recorded time with the frozen flag set; ``inf`` if never."""
        fr = self.frozen
        idx = np.argmax(fr, axis=0)
        t = self.times[idx]
        return np.where(np.any(fr, axis=0), t, np.inf)

    def sup_until(self, name: str, tau=None) -> np.ndarray:
        """``max`` of a column over recorded times ``t <= tau`` (default: all)."""
        vals = self.data[name]
        if tau is None:
            return np.max(vals, axis=0)
        tau = np.asarray(tau, dtype=float)
        mask = self.times.reshape((-1,) + (1,) * tau.ndim) <= tau + 1e-12
        return np.max(np.where(mask, vals, -np.inf), axis=0)

    def value_at(self, name: str, tau) -> np.ndarray:
        """Column value at the last recorded time ``<= tau``."""
        vals = self.data[name]
        tau = np.asarray(tau, dtype=float)
        idx = np.searchsorted(self.times, tau + 1e-12, side="right") - 1
        idx = np.clip(idx, 0, len(self.times) - 1)
        if vals.ndim == 1:
            return vals[idx]
        return vals[idx, np.arange(vals.shape[1])]

    # ---------------------------------------------------------------- csv

    def to_csv(self) -> str:
        if self.batched:
            raise ValueError("split a batched ledger with path() before writing")
        buf = io.StringIO()
        buf.write(HEADER_COMMENT + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        cols = self.columns
        writer.writerow(cols)
        for i in range(len(self.times)):
            row = []
            for c in cols:
                v = self[c][i]
                row.append(str(int(v)) if c == "frozen" else repr(float(v)))
            writer.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EnergyLedger":
        lines = text.splitlines()
        if not lines or lines[0].strip() != HEADER_COMMENT:
            raise ValueError(f"missing ledger header {HEADER_COMMENT!r}")
        rows = list(csv.reader(lines[1:]))
        cols = rows[0]
        body = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, len(cols))
        known = ("t", "frozen") + NORM_COLUMNS + INTEGRAL_COLUMNS
        cutoffs = tuple(c for c in cols if c not in known)
        data = {c: body[:, j] for j, c in enumerate(cols) if c not in ("t", "frozen")}
        return cls(body[:, cols.index("t")], data, cutoffs,
                   body[:, cols.index("frozen")].astype(bool))


class LedgerBuilder:
    """Accumulates per-step diagnostics for a batch of paths."""

    def __init__(self, n_paths: int, cutoff_names=()):
        self.n_paths = n_paths
        self.cutoff_names = tuple(cutoff_names)
        self.times: list[float] = []
        self.rows: dict[str, list] = {c: [] for c in NORM_COLUMNS + self.cutoff_names}
        self.frozen: list[np.ndarray] = []

    def append(self, t: float, norms: dict, frozen: np.ndarray, cutoffs: dict | None = None):
        self.times.append(float(t))
        for c in NORM_COLUMNS:
            self.rows[c].append(np.broadcast_to(np.asarray(norms[c], dtype=float),
                                                (self.n_paths,)).copy())
        for c in self.cutoff_names:
            self.rows[c].append(np.asarray((cutoffs or {})[c], dtype=float).reshape(self.n_paths))
        self.frozen.append(np.asarray(frozen, dtype=bool).reshape(self.n_paths).copy())

    def build(self, meta: dict | None = None) -> EnergyLedger:
        times = np.array(self.times)
        data = {c: np.array(v).reshape(len(times), self.n_paths) for c, v in self.rows.items()}
        frozen = np.array(self.frozen).reshape(len(times), self.n_paths)
        dt = np.diff(times)[:, None]
        active = ~frozen[:-1]
        for name, src in _INTEGRANDS.items():
            f = data[src]
            if name in ("int_H15sq", "int_H2sq"):
                f = f ** 2
            inc = np.where(active, 0.5 * (f[1:] + f[:-1]) * dt, 0.0)
            data[name] = np.concatenate([np.zeros((1, self.n_paths)), np.cumsum(inc, axis=0)])
        return EnergyLedger(times, data, self.cutoff_names, frozen, dict(meta or {}))
