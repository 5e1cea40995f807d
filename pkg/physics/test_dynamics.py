"""
Тесты динамики: унитарная эволюция, картина Гейзенберга, интегратор основного уравнения
"""
import numpy as np
from django.conf import settings
from django.test import SimpleTestCase, override_settings
from scipy import linalg, sparse

from .dynamics_service import (
    ConvergenceStudy,
    DensityMatrix,
    OpenSystem,
    convention_ratio,
    evolve_state,
    heisenberg_picture,
    invariant_report,
    lindblad_step,
    propagate,
    richardson_ratio,
    spectral_decompose,
)
from .environment_service import ConstantKernel, DeltaKernel, EnvCorrelation, InteractionSpec, build_g_matrix
from .exceptions import ConvergenceError, HermiticityError, PositivityError
from .lattice_service import LatticeSpec, LocalOperatorField, ManyBodyState
from .model_service import SIGMA_3, build_afv_ising, build_free_boson, build_ising


def random_hermitian(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return 0.5 * (a + a.conj().T)


def ising_afv_system(L, coupling, g_bar=1.0, kernel=None):
    model = build_ising(L, 1, 1.0)
    lattice = model.lattice
    contact = tuple(range(lattice.volume))
    corr = build_g_matrix(kernel or ConstantKernel(), g_bar, contact, lattice)
    spec = InteractionSpec(coupling, contact, model.order_field)
    return OpenSystem.build(model, [(spec, corr)]), build_afv_ising(model)


class UnitaryEvolutionTests(SimpleTestCase):
    """Тесты унитарной эволюции"""

    def setUp(self):
        self.rng = np.random.default_rng(31)
        self.lattice = LatticeSpec(1, 3)
        self.h = random_hermitian(self.rng, 8)
        amplitudes = self.rng.normal(size=8) + 1j * self.rng.normal(size=8)
        self.state = ManyBodyState.from_amplitudes(amplitudes, self.lattice, (2, 2, 2))

    def test_eigenstate_only_acquires_phase(self):
        """Тест: AFV в замкнутой системе не эволюционирует"""
        model = build_ising(6, 1, 1.0)
        afv = build_afv_ising(model).afv
        evolved = evolve_state(afv, model.hamiltonian, 3.7)
        self.assertAlmostEqual(abs(evolved.overlap(afv)), 1.0, places=12)

    def test_zero_time(self):
        self.assertIs(evolve_state(self.state, self.h, 0.0), self.state)

    def test_reversibility(self):
        """Тест обратимости: t, затем -t"""
        forward = evolve_state(self.state, self.h, 1.3)
        back = evolve_state(forward, self.h, -1.3)
        np.testing.assert_allclose(back.amplitudes, self.state.amplitudes, atol=1e-10)

    def test_matches_matrix_exponential(self):
        evolved = evolve_state(self.state, self.h, 0.8)
        expected = linalg.expm(-0.8j * self.h) @ self.state.amplitudes
        np.testing.assert_allclose(evolved.amplitudes, expected, atol=1e-10)

    def test_krylov_path_above_dense_limit(self):
        """Тест ветви expm_multiply для размерностей выше предела"""
        lab = dict(settings.LAB, DENSE_DIM_LIMIT=4)
        with override_settings(LAB=lab):
            evolved = evolve_state(self.state, sparse.csr_matrix(self.h), 0.8)
        expected = linalg.expm(-0.8j * self.h) @ self.state.amplitudes
        np.testing.assert_allclose(evolved.amplitudes, expected, atol=1e-10)

    def test_non_hermitian_rejected(self):
        with self.assertRaises(HermiticityError):
            evolve_state(self.state, self.h + 1j * np.eye(8), 1.0)

    def test_spectral_reconstruction(self):
        """Тест разложения: ‖H - VEV†‖ и унитарность V"""
        spectrum = spectral_decompose(self.h)
        self.assertLess(np.abs(spectrum.reconstruct() - self.h).max(), 1e-10 * np.abs(self.h).max())
        v = spectrum.unitary()
        np.testing.assert_allclose(v.conj().T @ v, np.eye(8), atol=1e-10)


class HeisenbergPictureTests(SimpleTestCase):
    """Тесты картины Гейзенберга"""

    def test_conserved_operator_unchanged(self):
        rng = np.random.default_rng(32)
        h = random_hermitian(rng, 4)
        function_of_h = h @ h + 2 * h
        np.testing.assert_allclose(heisenberg_picture(function_of_h, h, 0.9), function_of_h, atol=1e-10)

    def test_sigma3_under_ising(self):
        """Тест: s₃(x) сохраняется под действием изинговского H"""
        model = build_ising(4, 1, 1.0)
        s3 = model.site_operator(SIGMA_3, 2)
        np.testing.assert_allclose(heisenberg_picture(s3, model.hamiltonian, 2.5), s3.toarray(), atol=1e-12)

    def test_boson_mode_oscillates(self):
        """Тест: A_k(s) = A_k e^{-iε_k s}"""
        model = build_free_boson(2, 1, 2)
        mode = model.annihilators[1]
        epsilon = model.dispersion[1]
        self.assertAlmostEqual(epsilon, 4.0, places=12)
        evolved = heisenberg_picture(mode, model.hamiltonian, 0.6)
        np.testing.assert_allclose(evolved, mode.toarray() * np.exp(-1j * epsilon * 0.6), atol=1e-12)

    def test_pictures_agree_on_fluctuations(self):
        """Тест согласия картин Шрёдингера и Гейзенберга для ⟨δa†δa⟩"""
        rng = np.random.default_rng(33)
        lattice = LatticeSpec(1, 3)
        h = random_hermitian(rng, 8)
        a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        phi = ManyBodyState.from_amplitudes(rng.normal(size=8) + 1j * rng.normal(size=8), lattice, (2, 2, 2))
        s = 0.7
        phi_s = evolve_state(phi, h, s).amplitudes
        mean = np.vdot(phi_s, a @ phi_s)
        residual = a @ phi_s - mean * phi_s
        schroedinger = np.vdot(residual, residual).real

        a_s = heisenberg_picture(a, h, s)
        psi = phi.amplitudes
        mean_h = np.vdot(psi, a_s @ psi)
        residual_h = a_s @ psi - mean_h * psi
        heisenberg = np.vdot(residual_h, residual_h).real
        self.assertAlmostEqual(schroedinger, heisenberg, delta=1e-10)


class LindbladIntegratorTests(SimpleTestCase):
    """Тесты интегратора марковского уравнения"""

    def test_zero_coupling_stays_pure(self):
        """Тест: λ = 0 даёт чисто унитарную эволюцию"""
        system, pair = ising_afv_system(4, 0.0)
        trajectory = propagate(DensityMatrix.from_state(pair.afv), system.hamiltonian, system.channels, 1.0, 50)
        for rho in trajectory.states:
            self.assertLess(abs(rho.linear_entropy()), 1e-10)

    def test_zero_g_matches_unitary(self):
        """Тест: нулевая g совпадает с evolve_state"""
        model = build_ising(3, 1, 1.0)
        rng = np.random.default_rng(34)
        state = ManyBodyState.from_amplitudes(rng.normal(size=8) + 1j * rng.normal(size=8),
                                              model.lattice, model.local_dims)
        corr = EnvCorrelation.from_matrix(np.zeros((3, 3)), model.lattice)
        system = OpenSystem.build(model, [(InteractionSpec(0.5, (0, 1, 2), model.order_field), corr)])
        trajectory = propagate(DensityMatrix.from_state(state), system.hamiltonian, system.channels, 1.0, 200)
        expected = evolve_state(state, model.hamiltonian, 1.0).density_matrix()
        np.testing.assert_allclose(trajectory.final.matrix, expected, atol=1e-8)

    def test_afv_closed_form_entropy(self):
        """Тест: S_lin(Φ₀,t) = (1 - e^{-8λ²g₀₀t})/2 при f ≡ 1"""
        system, pair = ising_afv_system(4, 0.05)
        gamma0 = 0.05 ** 2 * 16.0
        trajectory = propagate(DensityMatrix.from_state(pair.afv), system.hamiltonian, system.channels, 1.0, 100)
        expected = 0.5 * (1.0 - np.exp(-8.0 * gamma0))
        self.assertAlmostEqual(trajectory.final.linear_entropy(), expected, delta=1e-8)

    def test_initial_entropy_production(self):
        """Тест: начальная скорость потери чистоты равна 4× подынтегральному выражению первого порядка"""
        system, pair = ising_afv_system(4, 0.01)
        self.assertAlmostEqual(convention_ratio(pair.afv, system.hamiltonian, system.channels), 4.0, places=10)

    def test_convention_ratio_for_random_state(self):
        rng = np.random.default_rng(35)
        system, _ = ising_afv_system(3, 0.2, kernel=DeltaKernel())
        state = ManyBodyState.from_amplitudes(rng.normal(size=8) + 1j * rng.normal(size=8),
                                              system.model.lattice, system.model.local_dims)
        self.assertAlmostEqual(convention_ratio(state, system.hamiltonian, system.channels), 4.0, places=10)

    def test_invariants_along_trajectory(self):
        """Тест следа, эрмитовости и положительности ρ(t)"""
        system, pair = ising_afv_system(4, 0.1, kernel=DeltaKernel())
        trajectory = propagate(DensityMatrix.from_state(pair.afv), system.hamiltonian, system.channels, 1.0, 100)
        report = invariant_report(trajectory)
        self.assertLess(report['max_trace_drift'], 1e-8)
        self.assertGreaterEqual(report['min_eigenvalue'], -1e-6)
        self.assertLess(report['max_hermiticity_defect'], 1e-10)
        self.assertEqual(len(trajectory.states), 101)

    def test_zero_time_trajectory(self):
        system, pair = ising_afv_system(2, 0.1)
        rho0 = DensityMatrix.from_state(pair.afv)
        trajectory = propagate(rho0, system.hamiltonian, system.channels, 0.0, 100)
        self.assertEqual(trajectory.states, [rho0])

    def test_too_few_steps(self):
        system, pair = ising_afv_system(2, 0.1)
        with self.assertRaises(ConvergenceError):
            propagate(DensityMatrix.from_state(pair.afv), system.hamiltonian, system.channels, 1.0, 5)

    def test_richardson_ratio_fourth_order(self):
        """Тест порядка схемы: отношение Ричардсона ≈ 16"""
        system, pair = ising_afv_system(2, 1.0)
        study = richardson_ratio(DensityMatrix.from_state(pair.afv), system.hamiltonian, system.channels, 0.25, 20)
        self.assertIsNotNone(study.richardson_ratio)
        self.assertTrue(study.fourth_order())
        self.assertAlmostEqual(study.richardson_ratio, 16.0, delta=8.0)

    def test_convergence_gate(self):
        """Тест: изменение S_lin при удвоении шагов больше 1e-6 не проходит проверку"""
        coarse = ConvergenceStudy((10, 20, 40), (0.30, 0.29, 0.289375), 0.01 / 0.289375, 16.0)
        self.assertTrue(coarse.fourth_order())
        self.assertFalse(coarse.passed())
        fine = ConvergenceStudy((10, 20, 40), (0.3, 0.3 - 1.6e-8, 0.3 - 1.7e-8), 1.6e-8 / 0.3, 16.0)
        self.assertTrue(fine.passed())

    def test_missing_ratio_requires_roundoff_differences(self):
        """Тест: без отношения Ричардсона нужны разности на уровне округления"""
        stalled = ConvergenceStudy((10, 20, 40), (0.31, 0.30, 0.30), 0.1 / 0.3, None)
        self.assertEqual(stalled.differences[1], 0.0)
        self.assertFalse(stalled.fourth_order())
        exact = ConvergenceStudy((10, 20, 40), (0.3, 0.3, 0.3), 0.0, None)
        self.assertTrue(exact.fourth_order())
        self.assertTrue(exact.passed())

    def test_dephasing_fixed_point(self):
        """Тест: диагональная ρ стационарна для дефазирующего канала"""
        system, _ = ising_afv_system(3, 0.3, kernel=DeltaKernel())
        rng = np.random.default_rng(36)
        weights = rng.uniform(size=8)
        rho0 = DensityMatrix(np.diag(weights / weights.sum()).astype(complex), system.model.lattice)
        trajectory = propagate(rho0, system.hamiltonian, system.channels, 1.0, 20)
        np.testing.assert_allclose(trajectory.final.matrix, rho0.matrix, atol=1e-12)

    def test_positivity_violation_gives_step_advice(self):
        """Тест: слишком большой шаг нарушает положительность"""
        system, pair = ising_afv_system(2, 1.0)
        with self.assertRaisesMessage(PositivityError, 'dt'):
            lindblad_step(DensityMatrix.from_state(pair.afv), system.hamiltonian, system.channels, 1.0)

    def test_trajectory_dataframe(self):
        system, pair = ising_afv_system(2, 0.1)
        trajectory = propagate(DensityMatrix.from_state(pair.afv), system.hamiltonian, system.channels, 0.5, 10)
        df = trajectory.to_dataframe(system.model.order_parameter())
        self.assertEqual(list(df.columns), ['t', 'S_lin', 'trace', 'min_eig', 'M', 'dM_dM'])
        self.assertEqual(len(df), 11)
        self.assertAlmostEqual(df['dM_dM'].iloc[0], 1.0, places=12)


class ChannelBindingTests(SimpleTestCase):

    def test_rank_one_g_gives_single_jump(self):
        """Тест: f ≡ 1 при Λ_C = Λ даёт один оператор скачка L = S₃"""
        system, _ = ising_afv_system(4, 0.1)
        channel = system.channels[0]
        self.assertEqual(len(channel.jumps), 1)
        self.assertAlmostEqual(channel.rates[0], 16.0, places=10)
        m = system.model.order_parameter()
        self.assertLess(abs(abs(channel.jumps[0]) - abs(m)).max(), 1e-12)

    def test_non_positive_g_rejected(self):
        model = build_ising(2, 1, 1.0)
        corr = EnvCorrelation.from_matrix(np.diag([1.0, -1.0]), model.lattice)
        with self.assertRaises(PositivityError):
            OpenSystem.build(model, [(InteractionSpec(0.1, (0, 1), LocalOperatorField(SIGMA_3)), corr)])
