"""
Тесты хрупкости: энтропия первого порядка, сертификаты, области корреляции, скорости
"""
import numpy as np
from django.test import SimpleTestCase
from scipy import sparse

from .dynamics_service import DensityMatrix, OpenSystem, convention_ratio, propagate
from .environment_service import (
    ConstantKernel,
    DeltaKernel,
    ExponentialKernel,
    InteractionSpec,
    build_g_matrix,
    contact_from_spec,
    random_positive_kernel,
)
from .exceptions import ParityError, PreconditionError
from .fit_service import ScalingFitService
from .fragility_service import (
    EntropyReport,
    correlation_region,
    difference_bound_certificate,
    difference_bound_size_sweep,
    entropy_report,
    first_order_entropy,
    fragility_ratio,
    intensive_fluctuation_bound,
    linear_entropy,
    rate_bound_certificate,
    rate_difference,
    rate_extract,
    time_grid,
)
from .lattice_service import LatticeSpec, LocalOperatorField, ManyBodyState
from .model_service import (
    PSI,
    PSI_DAG,
    SIGMA_1,
    IsingModel,
    build_afv_ising,
    build_boson_pair,
    build_free_boson,
    build_ising,
    random_invariant_state,
    tilted_vacuum_pair,
)


def ising_system(L, coupling, g_bar=1.0, kernel=None, contact=None):
    model = build_ising(L, 1, 1.0)
    contact = contact if contact is not None else tuple(range(model.lattice.volume))
    corr = build_g_matrix(kernel or ConstantKernel(), g_bar, contact, model.lattice)
    spec = InteractionSpec(coupling, contact, model.order_field)
    return OpenSystem.build(model, [(spec, corr)]), build_afv_ising(model)


def boson_system(L, coupling, n_max, N, alpha=0.2, n_max_excited=None, plus_kernel=None, minus_kernel=None):
    model = build_free_boson(L, 1, n_max, n_max_excited)
    contact = tuple(range(model.lattice.volume))
    plus = build_g_matrix(plus_kernel or ConstantKernel(), 1.0, contact, model.lattice, label='plus')
    minus = build_g_matrix(minus_kernel or ConstantKernel(), 1.0, contact, model.lattice, label='minus')
    terms = [
        (InteractionSpec(coupling, contact, PSI, label='plus'), plus),
        (InteractionSpec(coupling, contact, PSI_DAG, label='minus'), minus),
    ]
    return OpenSystem.build(model, terms), build_boson_pair(model, N, alpha)


class LinearEntropyTests(SimpleTestCase):
    """Тесты линейной энтропии"""

    def test_pure_state(self):
        rng = np.random.default_rng(41)
        state = ManyBodyState.from_amplitudes(rng.normal(size=4), LatticeSpec(1, 2), (2, 2))
        self.assertAlmostEqual(linear_entropy(DensityMatrix.from_state(state)), 0.0, places=12)

    def test_maximally_mixed(self):
        self.assertAlmostEqual(linear_entropy(np.eye(4) / 4), 0.75, places=14)

    def test_equal_mixture(self):
        self.assertAlmostEqual(linear_entropy(np.diag([0.5, 0.5, 0.0])), 0.5, places=14)

    def test_time_grid_requires_points(self):
        with self.assertRaises(PreconditionError):
            time_grid(1.0, 16)
        self.assertEqual(list(time_grid(0.0)), [0.0])


class IsingEntropyTests(SimpleTestCase):
    """Тесты замкнутых формул для изинговской пары вакуумов"""

    def setUp(self):
        self.system, self.pair = ising_system(8, 0.01, g_bar=64.0)
        self.g00 = self.system.terms[0][1].g00

    def test_g00_value(self):
        self.assertAlmostEqual(self.g00, 4096.0, places=8)

    def test_afv_entropy(self):
        """Тест: S^(1)(Φ₀,t) = (λ²/ħ²)g₀₀t"""
        for t in (0.5, 1.0, 2.0):
            with self.subTest(t=t):
                expected = 0.01 ** 2 * self.g00 * t
                self.assertAlmostEqual(first_order_entropy(self.system, self.pair.afv, t), expected, places=10)

    def test_ppv_entropy_vanishes(self):
        """Тест: S^(1)(Ξ₊,t) = 0"""
        self.assertAlmostEqual(first_order_entropy(self.system, self.pair.ppv, 1.0), 0.0, places=14)

    def test_zero_time(self):
        self.assertEqual(first_order_entropy(self.system, self.pair.afv, 0.0), 0.0)

    def test_rates(self):
        """Тест: γ̂(AFV) = λ²g₀₀, γ̂(PPV) = 0"""
        times = time_grid(1.0)
        afv = entropy_report(self.system, self.pair.afv, times)
        ppv = entropy_report(self.system, self.pair.ppv, times)
        self.assertAlmostEqual(afv.gamma_hat, 0.01 ** 2 * self.g00, places=10)
        self.assertAlmostEqual(ppv.gamma_hat, 0.0, places=14)
        self.assertAlmostEqual(rate_difference(afv, ppv), 0.01 ** 2 * self.g00, places=10)
        self.assertEqual(fragility_ratio(afv.gamma_hat, 0.0), float('inf'))


class BosonEntropyTests(SimpleTestCase):
    """Тесты бозонной пары: число частиц |N⟩ и когерентное |α⟩"""

    def setUp(self):
        self.coupling = 0.1
        self.system, self.pair = boson_system(4, self.coupling, 6, 4, plus_kernel=ExponentialKernel(1.5),
                                              minus_kernel=DeltaKernel())
        self.plus = self.system.terms[0][1]
        self.minus = self.system.terms[1][1]
        self.volume = 4

    def test_number_state_entropy(self):
        """Тест: S^(1)(|N⟩,t) = λ²[n₀(g⁺₀₀+g⁻₀₀) + Σ g⁻_kk/|Λ|]t с n₀ = N/|Λ|"""
        n0 = 4 / self.volume
        rate = self.coupling ** 2 * (n0 * (self.plus.g00 + self.minus.g00)
                                     + self.minus.diagonal().sum().real / self.volume)
        self.assertAlmostEqual(first_order_entropy(self.system, self.pair.afv, 1.0), rate, places=10)

    def test_coherent_state_entropy(self):
        """Тест: S^(1)(|α⟩,t) = λ² Σ g⁻_kk/|Λ| t"""
        rate = self.coupling ** 2 * self.minus.diagonal().sum().real / self.volume
        self.assertAlmostEqual(first_order_entropy(self.system, self.pair.ppv, 1.0), rate, places=8)

    def test_measured_occupation(self):
        """Тест: Δγ̂ / (λ²(g⁺₀₀+g⁻₀₀)) = N/|Λ|"""
        times = time_grid(1.0)
        afv = entropy_report(self.system, self.pair.afv, times)
        ppv = entropy_report(self.system, self.pair.ppv, times)
        measured = rate_difference(afv, ppv) / (self.coupling ** 2 * (self.plus.g00 + self.minus.g00))
        self.assertAlmostEqual(measured, 1.0, places=6)

    def test_fragility_ratio_grows_linearly(self):
        """Тест: γ̂(AFV)/γ̂(PPV) ∝ |Λ| при фиксированной плотности n₀ = 2"""
        volumes, ratios = [], []
        for L in (2, 3, 4, 5, 6):
            system, pair = boson_system(L, 0.1, 2 * L + 1, 2 * L, n_max_excited=1)
            times = time_grid(1.0)
            gamma_afv = entropy_report(system, pair.afv, times).gamma_hat
            gamma_ppv = entropy_report(system, pair.ppv, times).gamma_hat
            volumes.append(L)
            ratios.append(fragility_ratio(gamma_afv, gamma_ppv))
            with self.subTest(L=L):
                self.assertAlmostEqual(ratios[-1], 4 * L + 1, delta=1e-6 * ratios[-1])
        fit = ScalingFitService.power_law(volumes, ratios)
        self.assertAlmostEqual(fit.exponent, 1.0, delta=0.2)


class RateBoundTests(SimpleTestCase):
    """Тесты нижней оценки скорости декогеренции"""

    def test_afv_equality(self):
        system, pair = ising_system(6, 0.05, kernel=ExponentialKernel(2.0))
        certificate = rate_bound_certificate(system, pair.afv, 1.0)
        self.assertEqual(certificate.status, 'pass')
        self.assertAlmostEqual(certificate.slack, 0.0, delta=1e-10)

    def test_ppv_both_sides_zero(self):
        system, pair = ising_system(6, 0.05)
        certificate = rate_bound_certificate(system, pair.ppv, 1.0)
        self.assertEqual(certificate.status, 'pass')
        self.assertAlmostEqual(certificate.lhs, 0.0, places=14)
        self.assertAlmostEqual(certificate.rhs, 0.0, places=14)

    def test_random_invariant_states(self):
        """Тест: slack ≥ -1e-9 на 100 случайных инвариантных состояниях и положительных g"""
        rng = np.random.default_rng(42)
        for trial in range(100):
            with self.subTest(trial=trial):
                L = int(rng.integers(3, 7))
                model = build_ising(L, 1, 1.0)
                lattice = model.lattice
                size = int(rng.integers(1, L + 1))
                contact = tuple(sorted(rng.choice(L, size=size, replace=False)))
                corr = build_g_matrix(random_positive_kernel(rng, lattice), float(rng.uniform(0.1, 2.0)),
                                      contact, lattice)
                operator = LocalOperatorField(np.diag(rng.normal(size=2) + 1j * rng.normal(size=2)))
                spec = InteractionSpec(float(rng.uniform(0.01, 1.0)), contact, operator)
                system = OpenSystem.build(model, [(spec, corr)])
                certificate = rate_bound_certificate(system, random_invariant_state(model, rng), 1.0)
                self.assertTrue(certificate.preconditions_met)
                self.assertGreaterEqual(certificate.slack, -1e-9)
                self.assertTrue(certificate.passed)

    def test_non_invariant_state(self):
        """Тест: нарушение трансляционной инвариантности отключает вердикт"""
        system, _ = ising_system(4, 0.1)
        model = system.model
        state = ManyBodyState.basis_state(1, model.lattice, model.local_dims, 'one_flip')
        certificate = rate_bound_certificate(system, state, 1.0)
        self.assertFalse(certificate.preconditions_met)
        self.assertIsNone(certificate.passed)
        self.assertEqual(certificate.status, 'preconditions unmet')


class DifferenceBoundTests(SimpleTestCase):
    """Тесты неравенства для разности энтропий AFV и PPV"""

    def test_uniform_kernel_equality(self):
        """Тест: f ≡ 1, Λ_C = Λ даёт LHS = RHS = λ²g₀₀t"""
        system, pair = ising_system(4, 0.05)
        certificate = difference_bound_certificate(system, pair, 1.0, 1.0, 0.1)
        expected = 0.05 ** 2 * 16.0
        self.assertTrue(certificate.passed)
        self.assertAlmostEqual(certificate.lhs, expected, places=12)
        self.assertAlmostEqual(certificate.rhs, expected, places=12)
        self.assertAlmostEqual(certificate.slack, 0.0, delta=1e-10)
        self.assertAlmostEqual(certificate.details['nu'], 1.0, places=12)
        self.assertAlmostEqual(certificate.details['epsilon_hat'], 0.0, delta=1e-10)
        self.assertEqual(certificate.details['omega_volume'], 1)

    def test_size_sweep(self):
        """Тест: L = 4, 6, 8, LHS ≥ 0 и |ε̂_Λ| не растёт"""
        def build_point(L):
            model_lattice = LatticeSpec(1, L)
            return ising_system(L, 0.05, kernel=ExponentialKernel(2.0),
                                contact=contact_from_spec(model_lattice, 'block', size=L // 2))

        certificates, shrinking = difference_bound_size_sweep(build_point, [4, 6, 8], 1.0, 1.0, 0.1)
        self.assertTrue(shrinking)
        for certificate in certificates:
            with self.subTest(L=certificate.details['L']):
                self.assertTrue(certificate.passed)
                self.assertGreaterEqual(certificate.lhs, -1e-9)
                self.assertGreaterEqual(certificate.slack + abs(certificate.details['epsilon_hat']), -1e-9)

    def test_size_sweep_with_finite_size_correction(self):
        """Тест: наклонённые PPV в возмущённой модели дают ε̂_Λ ≠ 0, убывающую с L"""
        def build_point(L):
            base = build_ising(L, 1, 1.0)
            next_nearest = np.sum(base.spins * np.roll(base.spins, -2, axis=1), axis=1)
            model = build_ising(L, 1, 1.0, perturbation=sparse.diags(0.3 * next_nearest.astype(complex)))
            contact = contact_from_spec(model.lattice, 'block', size=2)
            corr = build_g_matrix(ConstantKernel(), 1.0, contact, model.lattice)
            system = OpenSystem.build(model, [(InteractionSpec(0.1, contact, model.order_field), corr)])
            return system, tilted_vacuum_pair(model, 0.6)

        certificates, shrinking = difference_bound_size_sweep(build_point, [4, 6, 8], 1.0, 0.0, 0.1)
        corrections = [abs(certificate.details['epsilon_hat']) for certificate in certificates]
        self.assertTrue(shrinking)
        self.assertGreater(min(corrections), 1e-4)
        self.assertLess(corrections[2], corrections[1])
        self.assertLess(corrections[1], corrections[0])
        for certificate in certificates:
            with self.subTest(L=certificate.details['L']):
                self.assertTrue(certificate.passed)
                self.assertGreater(certificate.lhs, 0.0)
                self.assertLess(certificate.slack, 0.0)
                self.assertGreaterEqual(certificate.slack + abs(certificate.details['epsilon_hat']), 0.0)

    def test_coupling_must_be_order_field(self):
        model = build_ising(4, 1, 1.0)
        contact = tuple(range(4))
        corr = build_g_matrix(ConstantKernel(), 1.0, contact, model.lattice)
        system = OpenSystem.build(model, [(InteractionSpec(0.1, contact, LocalOperatorField(SIGMA_1)), corr)])
        with self.assertRaises(PreconditionError):
            difference_bound_certificate(system, build_afv_ising(model), 1.0, 1.0, 0.1)

    def test_boson_pair_has_no_parity(self):
        model = build_free_boson(2, 1, 5)
        contact = (0, 1)
        corr = build_g_matrix(ConstantKernel(), 1.0, contact, model.lattice, label='plus')
        system = OpenSystem.build(model, [(InteractionSpec(0.1, contact, PSI, label='plus'), corr)])
        pair = build_boson_pair(model, 2, 0.2)
        with self.assertRaises(ParityError):
            difference_bound_certificate(system, pair, 1.0, 1.0, 0.1)


class CorrelationRegionTests(SimpleTestCase):
    """Тесты областей ε-корреляции"""

    def setUp(self):
        self.model = build_ising(6, 1, 1.0)
        self.system = OpenSystem.build(self.model, [])
        self.pair = build_afv_ising(self.model)

    def test_ppv_region_is_single_site(self):
        """Тест: для Ξ₊ область Ω = {y} при любых ε и T"""
        for epsilon in (0.1, 0.5, 0.9):
            for horizon in (0.0, 1.0, 2.0):
                with self.subTest(epsilon=epsilon, horizon=horizon):
                    region = correlation_region(self.system, self.pair.ppv, 2, epsilon, horizon)
                    self.assertEqual(region.members, (2,))

    def test_afv_region_is_full_lattice(self):
        """Тест: для Φ₀ нормированная корреляция s₃(x)-s₃(y) равна 1, Ω = Λ"""
        for epsilon in (0.1, 0.5, 0.9, 1.0):
            with self.subTest(epsilon=epsilon):
                region = correlation_region(self.system, self.pair.afv, 0, epsilon, 1.0)
                self.assertEqual(region.volume, 6)

    def test_epsilon_range(self):
        with self.assertRaises(PreconditionError):
            correlation_region(self.system, self.pair.afv, 0, 0.0, 1.0)
        with self.assertRaises(PreconditionError):
            correlation_region(self.system, self.pair.afv, 0, 1.5, 1.0)

    def test_monotone_in_epsilon_and_translation(self):
        rng = np.random.default_rng(43)
        model = build_ising(4, 1, 1.0)
        system = OpenSystem.build(model, [])
        state = random_invariant_state(model, rng)
        regions = [set(correlation_region(system, state, 0, epsilon, 1.0).members) for epsilon in (0.1, 0.5, 0.9)]
        self.assertGreaterEqual(regions[0], regions[1])
        self.assertGreaterEqual(regions[1], regions[2])
        shifted = correlation_region(system, state, 2, 0.5, 1.0)
        self.assertEqual(shifted.volume, len(regions[1]))

    def test_refinement_stable(self):
        region = correlation_region(self.system, self.pair.ppv, 0, 0.1, 1.0, refine=True)
        self.assertTrue(region.refinement_stable)


class FluctuationBoundTests(SimpleTestCase):
    """Тесты оценки флуктуаций интенсивного оператора"""

    def test_ppv_bound(self):
        system, pair = ising_system(6, 0.0)
        region = correlation_region(system, pair.ppv, 0, 0.01, 1.0)
        report = intensive_fluctuation_bound(system, pair.ppv, system.model.order_field, region)
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.omega_fraction, 1 / 6, places=14)
        np.testing.assert_allclose(report.intensive, 0.0, atol=1e-14)

    def test_afv_region_covers_lattice(self):
        """Тест: для AFV |Ω|/|Λ| = 1, оценка не мала"""
        system, pair = ising_system(6, 0.0)
        region = correlation_region(system, pair.afv, 0, 0.1, 1.0)
        report = intensive_fluctuation_bound(system, pair.afv, system.model.order_field, region)
        self.assertEqual(report.omega_fraction, 1.0)
        np.testing.assert_allclose(report.intensive, 1.0, atol=1e-12)

    def test_single_site_equality(self):
        model = IsingModel(LatticeSpec(1, 1), 1.0)
        system = OpenSystem.build(model, [])
        rng = np.random.default_rng(44)
        state = ManyBodyState.from_amplitudes(rng.normal(size=2) + 1j * rng.normal(size=2),
                                              model.lattice, model.local_dims)
        operator = LocalOperatorField(SIGMA_1)
        region = correlation_region(system, state, 0, 0.5, 1.0)
        report = intensive_fluctuation_bound(system, state, operator, region)
        self.assertEqual(region.members, (0,))
        np.testing.assert_allclose(report.bound / 1.5, report.intensive, atol=1e-12)


class RateExtractionTests(SimpleTestCase):
    """Тесты извлечения скоростей"""

    def test_zero_coupling(self):
        system, pair = ising_system(4, 0.0)
        report = entropy_report(system, pair.afv, time_grid(1.0))
        self.assertEqual(report.gamma_hat, 0.0)

    def test_nonlinear_report_flagged(self):
        times = time_grid(1.0)
        report = EntropyReport('quadratic', times, times ** 2, prefactor=1.0)
        with self.assertLogs('physics.fragility_service', level='WARNING'):
            estimate = rate_extract(report)
        self.assertFalse(estimate.linear)
        self.assertIsNotNone(estimate.windowed_slopes)
        self.assertLess(estimate.window_end, 1.0)

    def test_slack_against_bound(self):
        system, pair = ising_system(4, 0.1)
        bound = 0.1 ** 2 * 16.0
        report = entropy_report(system, pair.afv, time_grid(1.0), bound_rate=bound)
        self.assertAlmostEqual(report.slack, 0.0, places=10)


class FirstOrderDynamicsTests(SimpleTestCase):
    """Тесты согласия S_lin полной динамики с c·S^(1)"""

    def test_residual_scales_as_fourth_power(self):
        """Тест: |S_lin - c·S^(1)| убывает примерно в 16 раз при уменьшении λ вдвое"""
        residuals, conventions = [], []
        for coupling in (0.02, 0.01, 0.005):
            system, pair = ising_system(4, coupling)
            trajectory = propagate(DensityMatrix.from_state(pair.afv), system.hamiltonian, system.channels,
                                   1.0, 100, sample_every=100)
            c = convention_ratio(pair.afv, system.hamiltonian, system.channels)
            conventions.append(c)
            residuals.append(abs(trajectory.final.linear_entropy() - c * first_order_entropy(system, pair.afv, 1.0)))
        self.assertAlmostEqual(conventions[0], 4.0, places=8)
        self.assertLess(max(conventions) - min(conventions), 0.01 * conventions[0])
        for coarse, fine in zip(residuals, residuals[1:]):
            self.assertGreaterEqual(coarse / fine, 8.0)
            self.assertLessEqual(coarse / fine, 24.0)
