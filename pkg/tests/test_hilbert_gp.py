"""Reduced-rank GP basis: eigenfunctions, spectral prior, fitting, search."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condgp.hilbert_gp import (
    BasisSpec,
    Domain,
    Hyperparameters,
    OutOfDomainError,
    basis_matrix,
    eigenfunction,
    eigenvalue,
    evaluate_expansion,
    fit_coefficients,
    kernel_approximation,
    load_model,
    make_basis_spec,
    model_from_dict,
    model_to_dict,
    optimize_hyperparameters,
    padded_domain,
    save_model,
    se_kernel,
    se_spectral_density,
    spectral_weights,
)

HYP = Hyperparameters(signal_variance=1.0, lengthscale=1.0, noise_variance=1e-4)


def spec_1d(L=15.0, count=50, hyper=HYP):
    return make_basis_spec(Domain(lower=np.array([-L]), upper=np.array([L])), count, hyper)


class TestDomain:
    def test_rejects_inverted_bounds(self):
        with pytest.raises(ValueError):
            Domain(lower=np.array([1.0]), upper=np.array([0.0]))

    def test_half_widths_symmetric_form(self):
        d = Domain(lower=np.array([-15.0]), upper=np.array([15.0]))
        assert d.half_widths[0] == 15.0
        assert d.center[0] == 0.0

    def test_asymmetric_domain_centering(self):
        d = Domain(lower=np.array([0.0]), upper=np.array([2.0]))
        assert d.half_widths[0] == 1.0
        assert d.center[0] == 1.0


class TestEigenfunction:
    def test_center_value_j1(self):
        # sin(pi/2) = 1, so the value is 1/sqrt(L)
        assert eigenfunction(spec_1d(), 1, [0.0]) == pytest.approx(1 / np.sqrt(15), abs=1e-12)

    def test_center_value_j2_is_zero(self):
        assert eigenfunction(spec_1d(), 2, [0.0]) == pytest.approx(0.0, abs=1e-12)

    def test_boundary_zero(self):
        assert eigenfunction(spec_1d(), 1, [15.0]) == pytest.approx(0.0, abs=1e-12)

    def test_outside_domain_raises(self):
        with pytest.raises(OutOfDomainError):
            eigenfunction(spec_1d(), 1, [15.0001])

    def test_index_bounds(self):
        with pytest.raises(IndexError):
            eigenfunction(spec_1d(count=5), 6, [0.0])


class TestEigenvalue:
    def test_1d_j1(self):
        assert eigenvalue(spec_1d(), 1) == pytest.approx((np.pi / 30) ** 2, rel=1e-12)

    def test_1d_j2_quadratic(self):
        assert eigenvalue(spec_1d(), 2) == pytest.approx(4 * (np.pi / 30) ** 2, rel=1e-12)

    def test_2d_sum_over_dimensions(self):
        dom = Domain(lower=np.array([-1.0, -1.0]), upper=np.array([1.0, 1.0]))
        spec = BasisSpec(domain=dom, count=1, indices=np.array([[1, 1]]), hyper=HYP)
        assert eigenvalue(spec, 1) == pytest.approx(2 * (np.pi / 2) ** 2, rel=1e-12)

    @given(j=st.integers(min_value=1, max_value=40))
    @settings(max_examples=25, deadline=None)
    def test_strictly_increasing_in_index(self, j):
        spec = spec_1d(count=41)
        assert eigenvalue(spec, j + 1) > eigenvalue(spec, j)


class TestSeKernel:
    def test_zero_distance(self):
        assert se_kernel(HYP, [0.3], [0.3]) == pytest.approx(1.0)

    def test_direct_value(self):
        h = Hyperparameters(signal_variance=2.0, lengthscale=1.0, noise_variance=1e-4)
        assert se_kernel(h, [0.0], [np.sqrt(2)]) == pytest.approx(2 * np.exp(-1), rel=1e-12)

    @given(a=st.floats(-5, 5), b=st.floats(-5, 5))
    @settings(max_examples=25, deadline=None)
    def test_symmetry(self, a, b):
        assert se_kernel(HYP, [a], [b]) == se_kernel(HYP, [b], [a])


class TestSpectralDensity:
    def test_peak_at_zero(self):
        assert se_spectral_density(HYP, 0.0) == pytest.approx(np.sqrt(2 * np.pi), rel=1e-12)

    def test_direct_value(self):
        assert se_spectral_density(HYP, 1.0) == pytest.approx(np.sqrt(2 * np.pi) * np.exp(-0.5), rel=1e-12)

    @given(omega=st.floats(-10, 10))
    @settings(max_examples=25, deadline=None)
    def test_even(self, omega):
        assert se_spectral_density(HYP, omega) == se_spectral_density(HYP, -omega)


class TestKernelApproximation:
    def test_empty_basis_is_zero(self):
        dom = Domain(lower=np.array([-15.0]), upper=np.array([15.0]))
        spec = BasisSpec(domain=dom, count=0, indices=np.zeros((0, 1), dtype=int), hyper=HYP)
        assert kernel_approximation(spec, [0.0], [0.0]) == 0.0

    def test_converges_at_center(self):
        h = Hyperparameters(signal_variance=1.0, lengthscale=2.0, noise_variance=1e-4)
        spec = spec_1d(count=50, hyper=h)
        assert abs(kernel_approximation(spec, [0.0], [0.0]) - 1.0) <= 0.05

    def test_symmetry(self):
        spec = spec_1d(count=20)
        rng = np.random.default_rng(0)
        for _ in range(5):
            a, b = rng.uniform(-14, 14, size=2)
            assert kernel_approximation(spec, [a], [b]) == pytest.approx(
                kernel_approximation(spec, [b], [a]), rel=1e-12, abs=1e-15
            )

    def test_error_non_increasing_with_basis_size(self):
        # interior sup error over |x| <= 0.6 L shrinks as the basis grows
        h = Hyperparameters(signal_variance=1.0, lengthscale=2.0, noise_variance=1e-4)
        grid = np.linspace(-9.0, 9.0, 101)
        sups = []
        for n in (10, 20, 40):
            spec = spec_1d(count=n, hyper=h)
            err = [abs(kernel_approximation(spec, [x], [0.0]) - se_kernel(h, [x], [0.0])) for x in grid]
            sups.append(max(err))
        assert sups[0] >= sups[1] >= sups[2]


class TestBasisOrthonormality:
    def test_quadrature_gram_is_identity(self):
        spec = spec_1d(count=10)
        g = np.linspace(-15, 15, 20001)
        h = 30 / 20000
        wts = np.full(g.size, h)
        wts[0] = wts[-1] = h / 2
        phi = basis_matrix(spec, g[:, None])
        gram = phi.T @ (wts[:, None] * phi)
        assert np.max(np.abs(gram - np.eye(10))) <= 1e-6


class TestMakeBasisSpec:
    def test_1d_yields_consecutive_indices(self):
        spec = spec_1d(count=50)
        assert np.array_equal(spec.indices[:, 0], np.arange(1, 51))

    def test_ordering_by_spectral_density(self):
        spec = spec_1d(count=50)
        s = spectral_weights(spec)
        assert np.all(np.diff(s) <= 1e-15)

    def test_2d_selection_is_deterministic(self):
        dom = Domain(lower=np.array([-1.0, -2.0]), upper=np.array([1.0, 2.0]))
        a = make_basis_spec(dom, 12, HYP)
        b = make_basis_spec(dom, 12, HYP)
        assert np.array_equal(a.indices, b.indices)
        assert len({tuple(r) for r in a.indices}) == 12

    def test_padded_domain_widens_range(self):
        x = np.array([[0.0], [1.0]])
        dom = padded_domain(x, padding=0.125)
        assert dom.lower[0] == pytest.approx(-0.125)
        assert dom.upper[0] == pytest.approx(1.125)


class TestFitCoefficients:
    def test_zero_targets_zero_coefficients(self):
        spec = spec_1d(count=20)
        x = np.linspace(-14, 14, 50)[:, None]
        model = fit_coefficients(spec, x, np.zeros(50))
        assert np.allclose(model.w, 0.0)

    def test_recovers_single_eigenfunction(self):
        h = Hyperparameters(signal_variance=1.0, lengthscale=1.0, noise_variance=1e-8)
        spec = spec_1d(count=20, hyper=h)
        x = np.linspace(-15, 15, 200)[:, None]
        targets = basis_matrix(spec, x)[:, 2]  # third basis function
        model = fit_coefficients(spec, x, targets)
        e3 = np.zeros(20)
        e3[2] = 1.0
        assert np.max(np.abs(model.w - e3)) <= 1e-3

    def test_sinc_residual_below_noise(self):
        sigma_xi = 0.01
        h = Hyperparameters(signal_variance=25.0, lengthscale=1.0, noise_variance=sigma_xi**2)
        # padded domain: eigenfunctions vanish at the domain boundary, so the
        # data must sit strictly inside
        spec = spec_1d(L=22.5, count=50, hyper=h)
        rng = np.random.default_rng(3)
        x = np.linspace(-15, 15, 200)[:, None]
        truth = 10 * np.sinc(5 * x[:, 0] / 100)
        targets = truth + sigma_xi * rng.standard_normal(200)
        model = fit_coefficients(spec, x, targets)
        resid = evaluate_expansion(model, x) - targets
        assert np.sqrt(np.mean(resid**2)) <= 2 * sigma_xi

    def test_stationarity_condition(self):
        spec = spec_1d(count=30)
        rng = np.random.default_rng(4)
        x = rng.uniform(-15, 15, size=(80, 1))
        targets = rng.standard_normal(80)
        model = fit_coefficients(spec, x, targets)
        phi = basis_matrix(spec, x)
        v = spectral_weights(spec)
        lhs = (phi.T @ phi + np.diag(spec.hyper.noise_variance / v)) @ model.w - phi.T @ targets
        assert np.linalg.norm(lhs) <= 1e-8 * np.linalg.norm(phi.T @ targets)

    def test_non_finite_targets_rejected(self):
        spec = spec_1d(count=5)
        x = np.zeros((3, 1))
        with pytest.raises(ValueError):
            fit_coefficients(spec, x, np.array([0.0, np.nan, 1.0]))


class TestEvaluateExpansion:
    def test_zero_coefficients(self):
        spec = spec_1d(count=10)
        model = fit_coefficients(spec, np.zeros((5, 1)), np.zeros(5))
        assert evaluate_expansion(model, [1.2]) == 0.0

    def test_unit_vector_matches_eigenfunction(self):
        from condgp.hilbert_gp import HilbertGpModel

        spec = spec_1d(count=10)
        w = np.zeros(10)
        w[0] = 1.0
        model = HilbertGpModel(spec=spec, w=w)
        assert evaluate_expansion(model, [2.5]) == pytest.approx(eigenfunction(spec, 1, [2.5]), rel=1e-14)

    @given(alpha=st.floats(-10, 10, allow_nan=False))
    @settings(max_examples=20, deadline=None)
    def test_linearity(self, alpha):
        from condgp.hilbert_gp import HilbertGpModel

        spec = spec_1d(count=8)
        rng = np.random.default_rng(5)
        w = rng.standard_normal(8)
        base = evaluate_expansion(HilbertGpModel(spec=spec, w=w), [1.0])
        scaled = evaluate_expansion(HilbertGpModel(spec=spec, w=alpha * w), [1.0])
        assert scaled == pytest.approx(alpha * base, rel=1e-10, abs=1e-12)


class TestOptimizeHyperparameters:
    @pytest.fixture(scope="class")
    @staticmethod
    def gp_draw_datasets():
        # sample from a known SE GP with lengthscale 2 on a modest grid
        rng = np.random.default_rng(11)
        x = np.linspace(-10, 10, 60)[:, None]
        true = Hyperparameters(signal_variance=1.0, lengthscale=2.0, noise_variance=1e-4)
        k = np.array([[se_kernel(true, a, b) for b in x] for a in x]) + 1e-10 * np.eye(60)
        chol = np.linalg.cholesky(k)
        return x, [
            (x, chol @ rng.standard_normal(60) + 1e-2 * rng.standard_normal(60)) for _ in range(3)
        ]

    def test_recovers_lengthscale_within_factor_two(self, gp_draw_datasets):
        x, datasets = gp_draw_datasets
        dom = Domain(lower=np.array([-15.0]), upper=np.array([15.0]))
        template = make_basis_spec(dom, 25, HYP)
        found = optimize_hyperparameters(template, datasets)
        assert 1.0 <= found.lengthscale <= 4.0

    def test_duplicated_dataset_same_optimum(self, gp_draw_datasets):
        x, datasets = gp_draw_datasets
        dom = Domain(lower=np.array([-15.0]), upper=np.array([15.0]))
        template = make_basis_spec(dom, 25, HYP)
        once = optimize_hyperparameters(template, datasets[:1])
        twice = optimize_hyperparameters(template, datasets[:1] * 2)
        assert once.lengthscale == pytest.approx(twice.lengthscale, rel=1e-3)

    def test_noise_floor_on_noiseless_data(self):
        dom = Domain(lower=np.array([-15.0]), upper=np.array([15.0]))
        template = make_basis_spec(dom, 15, HYP)
        x = np.linspace(-12, 12, 50)[:, None]
        y = np.sin(0.3 * x[:, 0])
        found = optimize_hyperparameters(template, [(x, y)])
        assert found.noise_variance >= 1e-10


class TestSerialization:
    def test_round_trip_preserves_doubles(self, tmp_path):
        spec = spec_1d(count=12)
        rng = np.random.default_rng(6)
        x = rng.uniform(-15, 15, size=(40, 1))
        model = fit_coefficients(spec, x, rng.standard_normal(40))
        path = tmp_path / "model.json"
        save_model(model, path)
        back = load_model(path)
        assert np.array_equal(back.w, model.w)
        assert np.array_equal(back.spec.indices, model.spec.indices)
        assert back.spec.hyper == model.spec.hyper

    def test_dict_round_trip(self):
        spec = spec_1d(count=4)
        rng = np.random.default_rng(7)
        x = rng.uniform(-15, 15, size=(10, 1))
        model = fit_coefficients(spec, x, rng.standard_normal(10))
        again = model_from_dict(model_to_dict(model))
        assert np.array_equal(again.w, model.w)
