import numpy as np
import pytest

from snse.ledger import (
    HEADER_COMMENT,
    INTEGRAL_COLUMNS,
    NORM_COLUMNS,
    EnergyLedger,
    LedgerBuilder,
    field_diagnostics,
)
from snse.spectral import SpectralField, dissipation_functional, lebesgue_norm, sobolev_norm


def norms(value):
    return {c: value for c in NORM_COLUMNS}


def build(values, frozen=None, times=None, cutoffs=()):
    n = len(values)
    b = LedgerBuilder(1, cutoffs)
    times = np.arange(n) * 0.1 if times is None else times
    frozen = np.zeros(n, bool) if frozen is None else frozen
    for t, v, f in zip(times, values, frozen):
        b.append(t, norms(v), f, {c: 0.5 for c in cutoffs})
    return b.build({"mode": "L3"})


class TestDiagnostics:
    def test_matches_single_field_routines(self, field2):
        d = field_diagnostics(field2.grid, field2.coeffs)
        assert d["L3"] == pytest.approx(lebesgue_norm(field2, 3), rel=1e-12)
        assert d["L6"] == pytest.approx(lebesgue_norm(field2, 6), rel=1e-12)
        assert d["H05"] == pytest.approx(sobolev_norm(field2, 0.5), rel=1e-12)
        assert d["H2"] == pytest.approx(sobolev_norm(field2, 2.0), rel=1e-12)
        assert d["dissip3"] == pytest.approx(dissipation_functional(field2, 3), rel=1e-10)
        assert d["dissip6"] == pytest.approx(dissipation_functional(field2, 6), rel=1e-10)

    def test_batched(self, field2):
        stack = np.stack([field2.coeffs, 2 * field2.coeffs])
        d = field_diagnostics(field2.grid, stack)
        assert d["L3"][1] == pytest.approx(2 * d["L3"][0], rel=1e-12)
        # homogeneity of degree p of the p-dissipation
        assert d["dissip3"][1] == pytest.approx(8 * d["dissip3"][0], rel=1e-10)

    def test_without_dissipation(self, field2):
        d = field_diagnostics(field2.grid, field2.coeffs, dissipation=False)
        assert np.isnan(d["dissip3"]) and np.isfinite(d["L6"])

    def test_zero_field(self, grid2):
        d = field_diagnostics(grid2, SpectralField.zeros(grid2).coeffs)
        assert all(float(v) == 0 for v in d.values())


class TestBuilder:
    def test_trapezoid_integrals(self):
        led = build([1.0, 3.0, 5.0])
        # int of dissip3 samples 1, 3, 5 at spacing 0.1
        assert led["int_dissip3"][:, 0] == pytest.approx([0, 0.2, 0.6])
        # squared columns for the Sobolev integrals
        assert led["int_H2sq"][-1, 0] == pytest.approx(0.05 * (1 + 9) + 0.05 * (9 + 25))

    def test_integrals_stop_when_frozen(self):
        led = build([1.0, 1.0, 1.0, 1.0], frozen=np.array([0, 1, 1, 1], bool))
        assert led["int_dissip3"][:, 0] == pytest.approx([0, 0.1, 0.1, 0.1])
        assert led.freeze_time() == pytest.approx(0.1)

    def test_nan_after_freeze_does_not_propagate(self):
        led = build([1.0, 1.0, np.nan], frozen=np.array([0, 1, 1], bool))
        assert np.all(np.isfinite(led["int_dissip3"]))

    def test_sup_and_value_at(self):
        led = build([1.0, 4.0, 2.0])
        assert led.sup_until("L3")[0] == 4.0
        assert led.sup_until("L3", np.array([0.05]))[0] == 1.0
        assert led.value_at("L3", np.array([0.15]))[0] == 4.0

    def test_never_frozen(self):
        assert np.isinf(build([1.0, 2.0]).freeze_time())

    def test_split_paths(self):
        b = LedgerBuilder(2)
        for t in (0.0, 0.1):
            b.append(t, {c: np.array([1.0, 2.0]) for c in NORM_COLUMNS}, np.zeros(2, bool))
        led = b.build()
        assert led.batched and led.n_paths == 2
        assert led.path(1)["L3"].tolist() == [2.0, 2.0]


class TestCsv:
    def test_round_trip_is_exact(self):
        led = build([1.0 / 3, np.pi, 2.0 ** 0.5], cutoffs=("psi_0",)).path(0)
        text = led.to_csv()
        assert text.startswith(HEADER_COMMENT + "\n")
        back = EnergyLedger.from_csv(text)
        assert back.cutoff_names == ("psi_0",)
        for c in NORM_COLUMNS + INTEGRAL_COLUMNS + ("psi_0",):
            assert np.array_equal(back[c], led[c])
        assert back.to_csv() == text

    def test_column_order(self):
        led = build([1.0, 2.0], cutoffs=("psi_0",)).path(0)
        header = led.to_csv().splitlines()[1].split(",")
        assert header[0] == "t" and header[-1] == "frozen" and "psi_0" in header

    def test_rejects_missing_header(self):
        with pytest.raises(ValueError):
            EnergyLedger.from_csv("t,L2\n0,1\n")

    def test_batched_write_refused(self):
        with pytest.raises(ValueError):
            build([1.0, 2.0]).to_csv()
