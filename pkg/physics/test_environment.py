"""
Тесты окружения: ядра, матрица g, контактные области, скейлинг g₀₀
"""
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from .environment_service import (
    ConstantKernel,
    DeltaKernel,
    EnvCorrelation,
    ExponentialKernel,
    InteractionSpec,
    TabulatedKernel,
    build_g_matrix,
    build_kernel,
    contact_from_spec,
    direct_g00,
    markovianity_check,
    random_positive_kernel,
    restrict_contact,
    scaling_regime,
    scaling_sweep,
)
from .exceptions import DimensionError, KernelError, PositivityError
from .lattice_service import LatticeSpec, LocalOperatorField


class GMatrixTests(SimpleTestCase):
    """Тесты построения g_{k1k2}"""

    def test_constant_kernel_full_contact(self):
        """Тест: f ≡ 1, Λ_C = Λ даёт g₀₀ = ḡ|Λ_C|²"""
        lattice = LatticeSpec(1, 4)
        corr = build_g_matrix(ConstantKernel(), 0.5, range(4), lattice)
        self.assertAlmostEqual(corr.g00, 8.0, places=12)
        self.assertAlmostEqual(corr.matrix[0, 0].real, 8.0, places=10)

    def test_delta_kernel_diagonal(self):
        """Тест: f = δ даёт g_kk = ḡ|Λ_C| для всех k"""
        lattice = LatticeSpec(1, 6)
        corr = build_g_matrix(DeltaKernel(), 2.0, (0, 2, 3), lattice)
        self.assertAlmostEqual(corr.g00, 6.0, places=12)
        np.testing.assert_allclose(corr.diagonal(), 6.0, atol=1e-12)

    def test_single_site_contact(self):
        """Тест: Λ_C из одного узла даёт g₀₀ = ḡ f(0)"""
        lattice = LatticeSpec(2, 3)
        corr = build_g_matrix(ExponentialKernel(1.5), 0.7, (4,), lattice)
        self.assertAlmostEqual(corr.g00, 0.7, places=12)

    def test_positivity_and_direct_sum(self):
        """Тест положительности и согласия g₀₀ с прямой двойной суммой"""
        rng = np.random.default_rng(21)
        for trial in range(10):
            with self.subTest(trial=trial):
                lattice = LatticeSpec(int(rng.integers(1, 3)), int(rng.integers(2, 5)))
                kernel = random_positive_kernel(rng, lattice)
                size = int(rng.integers(1, lattice.volume + 1))
                contact = tuple(sorted(rng.choice(lattice.volume, size=size, replace=False)))
                corr = build_g_matrix(kernel, float(rng.uniform(0.1, 2.0)), contact, lattice)
                self.assertGreaterEqual(corr.min_eigenvalue, -1e-10 * corr.max_eigenvalue)
                np.testing.assert_allclose(corr.matrix, corr.matrix.conj().T, atol=1e-12)
                direct = direct_g00(kernel, corr.g_bar, contact, lattice)
                self.assertLessEqual(abs(corr.matrix[0, 0].real - direct), 1e-10 * max(abs(direct), 1.0))

    def test_negative_fourier_kernel_rejected(self):
        """Тест: ядро с отрицательной фурье-компонентой нефизично"""
        with self.assertRaisesMessage(KernelError, 'положительность'):
            build_g_matrix(TabulatedKernel([1.0, -0.9, 0.0, -0.9]), 1.0, range(4), LatticeSpec(1, 4))

    def test_odd_kernel_rejected(self):
        with self.assertRaises(KernelError):
            build_g_matrix(TabulatedKernel([1.0, 0.5, 0.0, 0.1]), 1.0, range(4), LatticeSpec(1, 4))

    def test_tabulated_size_mismatch(self):
        with self.assertRaises(KernelError):
            TabulatedKernel([1.0, 0.0]).table(LatticeSpec(1, 4))

    def test_unknown_kernel(self):
        with self.assertRaises(KernelError):
            build_kernel('gaussian')

    def test_exponential_kernel_normalized(self):
        """Тест: периодизованная экспонента имеет f(0) = 1 и неотрицательный спектр"""
        lattice = LatticeSpec(2, 5)
        kernel = ExponentialKernel(0.8)
        self.assertAlmostEqual(kernel.table(lattice)[0, 0], 1.0, places=14)
        self.assertGreaterEqual(kernel.fourier_spectrum(lattice).min(), 0.0)

    def test_injected_negative_matrix_rejected(self):
        """Тест: явно заданная неположительная g отвергается при разложении на каналы"""
        lattice = LatticeSpec(1, 2)
        corr = EnvCorrelation.from_matrix(np.diag([1.0, -0.5]), lattice)
        self.assertFalse(corr.is_positive)
        with self.assertRaises(PositivityError):
            corr.eigen_channels()

    def test_export_csv(self):
        """Тест экспорта g в CSV"""
        lattice = LatticeSpec(1, 3)
        corr = build_g_matrix(ExponentialKernel(1.0), 1.0, range(3), lattice, label='plus')
        with tempfile.TemporaryDirectory() as tmp:
            path = corr.export_csv(Path(tmp) / 'g_plus.csv')
            df = pd.read_csv(path)
        self.assertEqual(list(df.columns), ['k1', 'k2', 'real', 'imag'])
        self.assertEqual(len(df), 9)
        self.assertAlmostEqual(df.loc[0, 'real'], corr.g00, places=10)


class ContactRegionTests(SimpleTestCase):
    """Тесты контактной области"""

    def setUp(self):
        self.lattice = LatticeSpec(1, 8)
        self.full = build_g_matrix(ExponentialKernel(2.0), 1.0, range(8), self.lattice)

    def test_shrinking_contact_decreases_g00(self):
        half = restrict_contact(self.full, range(4))
        self.assertLess(half.g00, self.full.g00)

    def test_unchanged_contact_is_identity(self):
        self.assertIs(restrict_contact(self.full, tuple(range(8))), self.full)

    def test_disjoint_halves_superadditive(self):
        """Тест: g₀₀(Λ) ≥ g₀₀(половина₁) + g₀₀(половина₂) при f ≥ 0"""
        first = restrict_contact(self.full, range(4))
        second = restrict_contact(self.full, range(4, 8))
        self.assertGreaterEqual(self.full.g00, first.g00 + second.g00)

    def test_empty_contact_rejected(self):
        with self.assertRaises(DimensionError):
            restrict_contact(self.full, ())
        with self.assertRaises(DimensionError):
            contact_from_spec(self.lattice, 'sites', sites=[])

    def test_contact_spec_kinds(self):
        self.assertEqual(contact_from_spec(self.lattice, 'all'), tuple(range(8)))
        self.assertEqual(contact_from_spec(self.lattice, 'block', size=3), (0, 1, 2))
        self.assertEqual(contact_from_spec(self.lattice, 'sites', sites=[5, 1, 5]), (1, 5))
        with self.assertRaises(DimensionError):
            contact_from_spec(self.lattice, 'sites', sites=[9])

    def test_interaction_rejects_negative_coupling(self):
        with self.assertRaises(DimensionError):
            InteractionSpec(-0.1, (0,), LocalOperatorField(np.eye(2)))


class ScalingRegimeTests(SimpleTestCase):
    """Тесты режимов скейлинга g₀₀"""

    def test_long_range_ratio(self):
        """Тест: ξ_E ≫ L даёт g₀₀/(ḡ|Λ_C|²) в [0.5, 1]"""
        lattice = LatticeSpec(1, 8)
        report = scaling_regime(build_g_matrix(ExponentialKernel(1000.0), 1.0, range(8), lattice))
        self.assertEqual(report.regime, 'long_range')
        self.assertGreaterEqual(report.ratio, 0.5)
        self.assertLessEqual(report.ratio, 1.0 + 1e-12)

    def test_short_range_bounded(self):
        """Тест: ξ_E = 1, |Λ_C| = L даёт ограниченное g₀₀/(ḡ|Λ_C|)"""
        for L in (8, 16, 32):
            lattice = LatticeSpec(1, L)
            report = scaling_regime(build_g_matrix(ExponentialKernel(1.0), 1.0, range(L), lattice))
            self.assertEqual(report.regime, 'short_range')
            self.assertLess(report.exact_g00 / L, 2.5)

    def test_single_site_estimates_coincide(self):
        lattice = LatticeSpec(1, 4)
        for kernel in (ConstantKernel(), DeltaKernel()):
            report = scaling_regime(build_g_matrix(kernel, 1.0, (0,), lattice))
            self.assertEqual(report.long_range_estimate, report.short_range_estimate)

    def test_sweep_exponents(self):
        """Тест показателей: 2 в дальнем режиме, 1 в ближнем"""
        lattice = LatticeSpec(1, 64)
        sizes = [4, 8, 16, 32]
        _, long_fit = scaling_sweep(ConstantKernel(), 1.0, lattice, sizes)
        _, short_fit = scaling_sweep(DeltaKernel(), 1.0, lattice, sizes)
        self.assertAlmostEqual(long_fit.exponent, 2.0, delta=0.15)
        self.assertAlmostEqual(short_fit.exponent, 1.0, delta=0.15)

    def test_exponential_crossover(self):
        """Тест перехода между режимами при изменении ξ_E"""
        lattice = LatticeSpec(1, 256)
        sizes = [8, 16, 32, 64]
        _, wide = scaling_sweep(ExponentialKernel(1000.0), 1.0, lattice, sizes)
        _, narrow = scaling_sweep(ExponentialKernel(2.0), 1.0, lattice, sizes)
        self.assertAlmostEqual(wide.exponent, 2.0, delta=0.15)
        self.assertAlmostEqual(narrow.exponent, 1.0, delta=0.15)

    def test_sweep_needs_three_points(self):
        df, fit = scaling_sweep(ConstantKernel(), 1.0, LatticeSpec(1, 16), [2, 4])
        self.assertEqual(len(df), 2)
        self.assertIsNone(fit)


class MarkovianityTests(SimpleTestCase):

    def test_warning_when_spread_exceeds_limit(self):
        with self.assertLogs('physics.environment_service', level='WARNING'):
            self.assertFalse(markovianity_check(10.0, 1.0))

    def test_within_limit(self):
        self.assertTrue(markovianity_check(0.5, 1.0))
        self.assertTrue(markovianity_check(0.5, None))
