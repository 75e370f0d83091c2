import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snse.cascade import (
    CutoffParams,
    StopRecord,
    assemble_level_rhs,
    evaluate_cutoffs,
    exclusive_partial_sums,
    level_drift_hat,
    make_cutoff_params,
    run_cascade,
    run_monolithic,
    stopping_time_survey,
    survey_constant,
    theta,
)
from snse.initial_data import decompose, random_solenoidal, scale_to
from snse.integrator import EvolutionSpec, simulate_path
from snse.noise import WienerEnsemble, make_noise_model
from snse.spectral import Grid, SpectralField, advection_hat, lebesgue_norm


@pytest.fixture(scope="module")
def desk():
    g = Grid(2, 16)
    u0 = scale_to(random_solenoidal(g, np.random.default_rng(0), slope=0.0, decay=3.0), 2.0)
    d = decompose(u0, 0.05, 8)
    p = make_cutoff_params(d, epsilon1=0.105)
    noise = make_noise_model("diagonal-spectral", {"amplitude": 3.0, "radius_step": 3, "decay": 0.7})
    return g, u0, d, p, noise


class TestTheta:
    def test_values(self):
        assert theta(0.0) == 1 and theta(1.0) == 1 and theta(2.0) == 0 and theta(7.0) == 0
        assert theta(1.5) == pytest.approx(0.5)

    def test_smoothness_at_junctions(self):
        h = 1e-4
        for s0 in (1.0, 2.0):
            d1 = (theta(s0 + h) - theta(s0 - h)) / (2 * h)
            d2 = (theta(s0 + h) - 2 * theta(s0) + theta(s0 - h)) / h ** 2
            assert abs(d1) < 1e-6 and abs(d2) < 1e-2

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(-1, 4), b=st.floats(-1, 4))
    def test_monotone_and_bounded(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert 0 <= theta(hi) <= theta(lo) <= 1


class TestParams:
    def test_defaults(self, desk):
        _, _, d, p, _ = desk
        assert p.K1 == pytest.approx(2 * d.k0 + 1)
        assert p.n_levels == len(d.levels)
        assert p.level_scale(3) == pytest.approx(0.105 / 8)

    @pytest.mark.parametrize("kw", [dict(epsilon1=0.09), dict(epsilon1=1.0), dict(K1=0.5),
                                    dict(M=(1.0, -1.0)), dict(mode="L4")])
    def test_validation(self, kw):
        base = dict(epsilon0=0.05, epsilon1=0.2, K1=3.0, M=(1.0, 1.0), mode="L3", K0=1.0)
        base.update(kw)
        with pytest.raises(ValueError):
            CutoffParams(**base)

    def test_cutoffs_at_zero_and_far_out(self):
        p = CutoffParams(0.05, 0.2, 3.0, (1.0, 2.0), "L3", 1.0)
        small = {"L3": np.zeros((2, 1)), "L6": np.zeros((2, 1))}
        c = evaluate_cutoffs(p, small, {"L6": np.zeros(1)})
        assert all(np.all(v == 1) for v in c.values())
        big = {"L3": np.full((2, 1), 10.0), "L6": np.array([[5.0], [0.0]])}
        c = evaluate_cutoffs(p, big, {"L6": np.array([10.0])})
        assert np.all(c["phi"] == 0) and c["psi_wbar"][0] == 0
        assert c["psi"][:, 0].tolist() == [0.0, 1.0]
        # zeta_k is the product of psi over lower levels
        assert c["zeta"][:, 0].tolist() == [1.0, 0.0]


def test_exclusive_partial_sums():
    v = np.arange(4.0).reshape(4, 1)
    assert exclusive_partial_sums(v)[:, 0].tolist() == [0.0, 0.0, 1.0, 3.0]


def test_drift_matches_bilinear_expansion(desk):
    g, _, d, _, _ = desk
    rng = np.random.default_rng(3)
    v = random_solenoidal(g, rng).coeffs
    w = random_solenoidal(g, rng).coeffs
    wb = random_solenoidal(g, rng).coeffs
    one = np.ones(1)
    cut = {"psi": one, "phi": one, "zeta": one, "psi_wbar": one}
    got = level_drift_hat(g, v[None], w[None], wb[None], cut)[0]
    B = lambda a, b: advection_hat(g, a, b)
    ref = -(B(v, v) + B(w, v) + B(v, w) + B(v, wb) + B(wb, v))
    assert np.max(np.abs(got - ref)) < 1e-13


def test_assemble_level_rhs_rejects_lower_levels_for_level_zero(desk):
    g, u0, d, _, noise = desk
    cut = {"psi": 1.0, "phi": 1.0, "zeta": 1.0, "psi_wbar": 1.0}
    with pytest.raises(Exception):
        assemble_level_rhs(0, d.levels[0], u0, d.w_bar_0, cut, noise)
    drift, cols = assemble_level_rhs(1, d.levels[1], d.levels[0], d.w_bar_0, cut, noise)
    assert cols.batch_shape == (noise.n_modes,)
    with pytest.raises(ValueError):
        assemble_level_rhs(1, d.levels[1], d.levels[0], d.w_bar_0, dict(cut, psi=1.5), noise)


class TestRun:
    def test_zero_data_stays_zero(self, desk):
        g, _, _, _, noise = desk
        d = decompose(SpectralField.zeros(g), 0.05, 4)
        p = make_cutoff_params(d, epsilon1=0.105)
        r = run_cascade(d, p, noise, 0.01, 1e-3, WienerEnsemble.from_base_seed(0, range(2), 1e-3, 8))
        assert np.all(r.u.coeffs == 0) and r.violations == 0
        assert np.all(r.stops.censored)

    def test_desk_smoke(self, desk):
        _, u0, d, p, noise = desk
        ens = WienerEnsemble.from_base_seed(7, range(4), 1e-3, 8)
        r = run_cascade(d, p, noise, 0.02, 1e-3, ens, ledger_stride=5)
        assert r.violations == 0 and r.n_paths == 4
        assert set(r.ledgers) == {"u", "w", "w_bar"} | {f"v{k}" for k in range(9)}
        assert r.ledgers["u"]["L3"][0, 0] == pytest.approx(float(lebesgue_norm(u0, 3)), rel=1e-10)
        assert len(r.ledgers["u"].times) == 5
        # u = w_bar + sum of levels
        total = r.w_bar.coeffs + r.levels.sum(axis=0)
        assert np.max(np.abs(total - r.u.coeffs)) < 1e-14

    def test_zero_noise_matches_direct_solve(self, desk):
        _, u0, d, p, _ = desk
        r = run_cascade(d, p, None, 0.02, 1e-3, None, n_paths=1)
        assert np.all(r.stops.censored)
        # the dyadic tail beyond k_max is not part of the cascade data
        start = d.w_bar_0 + d.w0
        assert float(lebesgue_norm(u0 - start, 3)) == pytest.approx(d.tail_norm, rel=1e-6)
        state, _ = simulate_path(start, EvolutionSpec("full-snse", None, 0.02, 1e-3))
        assert float(lebesgue_norm(r.u[0] - state.u, 3)) < 1e-12

    def test_pinned_cascade_equals_monolithic(self, desk):
        _, _, d, p, noise = desk
        ens = WienerEnsemble.from_base_seed(7, range(3), 1e-3, 8)
        r = run_cascade(d, p, noise, 0.02, 1e-3, ens, pin_cutoffs=True, strict=False)
        m = run_monolithic(d, p, noise, 0.02, 1e-3, ens)
        err = np.max(lebesgue_norm(r.u - m["u"], 3))
        assert err < 1e-12

    def test_wiener_dt_mismatch(self, desk):
        _, _, d, p, noise = desk
        with pytest.raises(Exception):
            run_cascade(d, p, noise, 0.02, 1e-3, WienerEnsemble.from_base_seed(0, [0], 2e-3, 8))

    def test_mode_mismatch(self, desk):
        g, u0, _, p, noise = desk
        d12 = decompose(scale_to(u0, 1.0, "H12"), 0.05, 8, norm="H12")
        with pytest.raises(ValueError):
            run_cascade(d12, p, noise, 0.01, 1e-3, WienerEnsemble.from_base_seed(0, [0], 1e-3, 8))


class TestStops:
    def test_tau_upper_is_nonincreasing(self):
        tau = np.array([[np.inf, 0.2], [0.1, np.inf]])
        rho = np.array([[np.inf, np.inf], [np.inf, 0.05]])
        s = StopRecord(tau, rho, np.array([np.inf, 0.3]), 1.0)
        assert s.tau_upper[:, 1].tolist() == [0.2, 0.05]
        assert s.tau_w.tolist() == [0.1, 0.05]
        assert s.tau.tolist() == [0.1, 0.05]
        assert not s.censored.any()

    def test_survey(self):
        taus = np.array([0.05, 0.2, np.inf, np.inf])
        d = np.array([0.1, 0.25])
        prob = stopping_time_survey(taus, d)
        assert prob.tolist() == [0.25, 0.5]
        assert survey_constant(prob, d) == pytest.approx(2.5)
        with pytest.raises(ValueError):
            stopping_time_survey(np.array([]), d)
