import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snse.initial_data import random_solenoidal
from snse.noise import (
    AdditiveNoise,
    NoiseModel,
    WienerEnsemble,
    WienerPath,
    apply_noise,
    fejer_symbol,
    ito_isometry_check,
    lipschitz_audit,
    make_noise_model,
    path_seed,
    structure_defect,
)
from snse.spectral import Grid, SpectralField, StructuralError, inner_product, lebesgue_norm


@pytest.fixture
def desk_noise():
    return make_noise_model("diagonal-spectral", {"amplitude": 3.0, "decay": 0.7, "radius_step": 3})


class TestWiener:
    def test_reproducible(self):
        a = WienerPath(path_seed(7, 3), 1e-3, 4).increments(50)
        b = WienerPath(path_seed(7, 3), 1e-3, 4).increments(50)
        assert np.array_equal(a, b)

    def test_random_access(self):
        p = WienerPath(123, 1e-2, 3)
        assert np.array_equal(p.increments(10)[7], p.increment(7))

    def test_distinct_paths(self):
        assert path_seed(0, 0) != path_seed(0, 1)
        assert path_seed(0, 1) != path_seed(1, 1)

    def test_moments(self):
        dt = 0.01
        x = WienerPath(99, dt, 5).increments(4000).ravel() / np.sqrt(dt)
        se = 1 / np.sqrt(x.size)
        assert abs(x.mean()) < 4 * se
        assert abs(x.var() - 1) < 4 * np.sqrt(2) * se
        # lag-one correlation across steps
        y = WienerPath(99, dt, 1).increments(4000)[:, 0]
        assert abs(np.corrcoef(y[1:], y[:-1])[0, 1]) < 4 / np.sqrt(4000)

    def test_refined_path_sums_to_coarse(self):
        coarse = WienerPath(5, 4e-3, 2, substeps=4)
        fine = coarse.refined(4)
        for s in range(5):
            assert np.allclose(fine.increments(4, 4 * s).sum(axis=0), coarse.increment(s),
                               rtol=0, atol=1e-15)

    def test_refine_must_divide(self):
        with pytest.raises(ValueError):
            WienerPath(5, 1e-3, 2, substeps=3).refined(2)

    def test_ensemble(self):
        ens = WienerEnsemble.from_base_seed(7, [4, 9], 1e-3, 3)
        assert ens.increment(2).shape == (2, 3)
        sub = WienerEnsemble.from_base_seed(7, [9], 1e-3, 3)
        assert np.array_equal(ens.increment(2)[1], sub.increment(2)[0])

    def test_zero_modes(self):
        assert WienerPath(1, 0.1, 0).increment(0).shape == (0,)


class TestModel:
    def test_coefficients_and_constant(self, desk_noise):
        c = np.array(desk_noise.coefficients)
        assert np.allclose(c, 3.0 * 0.7 ** np.arange(1, 9))
        assert desk_noise.lipschitz_K == pytest.approx(np.sqrt(np.sum(c ** 2)), rel=1e-15)
        assert desk_noise.radii == tuple(3 * k for k in range(1, 9))

    @pytest.mark.parametrize("bad", [{"decay": 1.0}, {"coefficients": [1.0, -1.0]},
                                     {"coefficients": [np.inf]}, {"colour": 1}])
    def test_rejects_bad_parameters(self, bad):
        with pytest.raises(ValueError):
            make_noise_model("diagonal-spectral", bad)

    def test_zero_model(self, field2):
        z = make_noise_model("zero")
        assert z.n_modes == 0 and z.lipschitz_K == 0
        assert np.all(z.apply_hat(field2.grid, field2.coeffs, np.zeros(0)) == 0)

    def test_sigma_of_zero_is_zero(self, grid2, desk_noise):
        cols = desk_noise.columns(SpectralField.zeros(grid2))
        assert np.all(cols.coeffs == 0)

    def test_structure(self, field2, desk_noise):
        d = structure_defect(desk_noise, field2)
        assert d["divergence"] <= 1e-12 and d["mean"] == 0 and d["hermitian"] < 1e-15

    def test_apply_matches_columns(self, field2, desk_noise):
        dW = np.random.default_rng(0).standard_normal(8)
        direct = apply_noise(desk_noise, field2, dW).coeffs
        cols = desk_noise.columns(field2).coeffs
        assert np.max(np.abs(direct - np.tensordot(dW, cols, axes=1))) < 1e-14

    def test_mode_mismatch(self, field2, desk_noise):
        with pytest.raises(StructuralError):
            desk_noise.apply_hat(field2.grid, field2.coeffs, np.zeros(3))

    def test_envelope_range(self, field2):
        m = NoiseModel("diagonal-spectral", (1.0,), (None,), envelope=lambda t: 2.0)
        with pytest.raises(ValueError):
            m.columns(field2, 0.5)

    def test_identity_column(self, field2):
        m = make_noise_model("identity", {"amplitude": 0.5})
        assert np.allclose(m.columns(field2).coeffs[0], 0.5 * field2.coeffs, atol=1e-15)


class TestFejer:
    @pytest.mark.parametrize("radius", [0, 1, 3, 7, 20])
    def test_kernel_is_nonnegative_with_unit_mass(self, grid2, radius):
        sym = fejer_symbol(grid2, radius)
        kernel = np.real(np.fft.ifftn(sym))
        assert kernel.min() > -1e-15
        assert kernel.sum() == pytest.approx(1.0, rel=1e-14)

    def test_column_is_contraction_in_lp(self, field2):
        m = NoiseModel("diagonal-spectral", (1.0,), (2,))
        col = SpectralField(field2.grid, m.columns_hat(field2.grid, field2.coeffs)[0], True)
        for p in (2, 3, 6):
            assert lebesgue_norm(col, p) <= lebesgue_norm(field2, p) * (1 + 1e-9)


@pytest.mark.parametrize("p", [3, 6])
def test_lipschitz_audit(grid2, desk_noise, p):
    worst = lipschitz_audit(desk_noise, grid2, p, 200, rng=p)
    assert 0 < worst <= desk_noise.lipschitz_K * (1 + 1e-6)


def test_ito_isometry(field2, desk_noise):
    chk = ito_isometry_check(desk_noise, field2, 10 ** 4, dt=0.01, seed=3)
    assert abs(chk.z_score) < 4
    # closed-form oracle: sum_k ||c_k P(chi_k u)||^2 dt
    cols = desk_noise.columns(field2)
    pred = 0.01 * sum(float(inner_product(cols[k], cols[k])) for k in range(8))
    assert chk.predicted == pytest.approx(pred, rel=1e-12)
    assert chk.bdg_lhs <= 3.0 * chk.bdg_rhs


def test_additive_noise_is_state_independent(grid2, field2):
    col = field2.coeffs[None]
    noise = AdditiveNoise(lambda t: col, 1)
    out = noise.apply_hat(grid2, np.zeros_like(field2.coeffs), np.array([0.3]))
    assert np.allclose(out, 0.3 * field2.coeffs)
    assert noise.columns_hat(grid2, np.zeros((4,) + field2.coeffs.shape)).shape == (1, 4) + field2.coeffs.shape


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), a=st.floats(-3, 3))
def test_noise_is_linear(seed, a):
    g = Grid(2, 8)
    rng = np.random.default_rng(seed)
    m = make_noise_model("diagonal-spectral", {"n_modes": 3, "amplitude": 1.0, "decay": 0.5})
    u = random_solenoidal(g, rng).coeffs
    v = random_solenoidal(g, rng).coeffs
    dW = rng.standard_normal(3)
    lhs = m.apply_hat(g, u + a * v, dW)
    rhs = m.apply_hat(g, u, dW) + a * m.apply_hat(g, v, dW)
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * (1 + abs(a))
