import numpy as np
from django.test import SimpleTestCase
from scipy import sparse

from .exceptions import CutoffError, DimensionError, HermiticityError, MomentumGridError, NormalizationError, ParityError
from .fit_service import ScalingFitService
from .lattice_service import (
    IntensiveOperator,
    LatticeSpec,
    LocalOperatorField,
    ManyBodyState,
    MomentumOperator,
    build_intensive,
    embed_local,
    ggm_basis,
    momentum_transform,
    translate_state,
    translation_operator,
)
from .model_service import (
    PSI,
    SIGMA_1,
    SIGMA_3,
    build_afv_ising,
    build_boson_states,
    build_free_boson,
    build_ising,
    fluctuation,
    parity_decompose,
    tilted_ppv_pair,
)


def random_state(rng, lattice, q=2, label='random'):
    amplitudes = rng.normal(size=q ** lattice.volume) + 1j * rng.normal(size=q ** lattice.volume)
    return ManyBodyState.from_amplitudes(amplitudes, lattice, (q,) * lattice.volume, label)


def random_operator(rng, q=2):
    return rng.normal(size=(q, q)) + 1j * rng.normal(size=(q, q))


class LatticeSpecTests(SimpleTestCase):
    """Тесты геометрии решётки"""

    def test_sites_enumerate_volume(self):
        """Тест перечисления узлов"""
        lattice = LatticeSpec(2, 3)
        self.assertEqual(lattice.volume, 9)
        self.assertEqual(len(set(lattice.sites)), 9)
        self.assertEqual(lattice.index(lattice.coords(7)), 7)

    def test_neighbor_wraps(self):
        """Тест периодических граничных условий"""
        lattice = LatticeSpec(1, 4)
        self.assertEqual(lattice.neighbor((3,), 0), (0,))

    def test_bonds_literal_enumeration(self):
        """Тест перечисления связей: при L=2 пара встречается дважды"""
        lattice = LatticeSpec(1, 2)
        self.assertEqual(lattice.bonds(), [(0, 1), (1, 0)])
        self.assertEqual(len(LatticeSpec(2, 3).bonds()), 18)

    def test_momentum_grid(self):
        """Тест импульсной сетки"""
        lattice = LatticeSpec(1, 4)
        self.assertEqual(lattice.momentum_index([np.pi]), (2,))
        self.assertEqual(lattice.momentum_index([-np.pi / 2]), (3,))
        with self.assertRaises(MomentumGridError):
            lattice.momentum_index([0.3])

    def test_invalid_contact_block(self):
        with self.assertRaises(DimensionError):
            LatticeSpec(1, 4).contact_block(5)


class EmbeddingTests(SimpleTestCase):
    """Тесты вложения одноузельных операторов"""

    def test_single_site_embedding(self):
        """Тест: на одном узле вложение совпадает с самим оператором"""
        op = LocalOperatorField(SIGMA_3)
        np.testing.assert_allclose(embed_local(op, 0, 2).toarray(), np.diag([1, -1]))

    def test_identity_embedding(self):
        """Тест: единичный оператор вкладывается в единицу"""
        op = LocalOperatorField(np.eye(2))
        np.testing.assert_allclose(embed_local(op, 1, 8).toarray(), np.eye(8))

    def test_sigma3_on_second_site(self):
        """Тест: σ₃(1)|↑↓⟩ = -|↑↓⟩"""
        up_down = np.zeros(4)
        up_down[1] = 1.0
        result = embed_local(LocalOperatorField(SIGMA_3), 1, 4) @ up_down
        np.testing.assert_allclose(result, -up_down)

    def test_dimension_mismatch_names_site(self):
        """Тест ошибки размерности"""
        with self.assertRaisesMessage(DimensionError, 'Узел 1'):
            embed_local(LocalOperatorField(SIGMA_3), 1, 6)

    def test_distinct_sites_commute(self):
        """Тест локальности: операторы на разных узлах коммутируют"""
        rng = np.random.default_rng(3)
        a = LocalOperatorField(random_operator(rng))
        b = LocalOperatorField(random_operator(rng))
        ax = embed_local(a, 0, 8)
        by = embed_local(b, 2, 8)
        self.assertLess(abs(ax @ by - by @ ax).max(), 1e-12)


class IntensiveOperatorTests(SimpleTestCase):
    """Тесты интенсивных и импульсных операторов"""

    def setUp(self):
        self.rng = np.random.default_rng(11)
        self.s3 = LocalOperatorField(SIGMA_3, name='s3')

    def test_all_up_expectation(self):
        """Тест: ⟨↑↑…|S₃|↑↑…⟩ = 1"""
        lattice = LatticeSpec(1, 5)
        state = ManyBodyState.basis_state(0, lattice, (2,) * 5)
        self.assertAlmostEqual(state.expectation(build_intensive(self.s3, lattice)).real, 1.0, places=12)

    def test_afv_expectation_vanishes(self):
        """Тест: ⟨Φ₀|S₃|Φ₀⟩ = 0"""
        pair = build_afv_ising(build_ising(4, 1, 1.0))
        m = build_intensive(self.s3, LatticeSpec(1, 4))
        self.assertAlmostEqual(abs(pair.afv.expectation(m)), 0.0, places=12)

    def test_brute_force_three_sites(self):
        """Тест сравнения с прямым тензорным произведением"""
        lattice = LatticeSpec(1, 3)
        a = random_operator(self.rng)
        eye = np.eye(2)
        brute = (np.kron(np.kron(a, eye), eye) + np.kron(np.kron(eye, a), eye) + np.kron(np.kron(eye, eye), a)) / 3
        np.testing.assert_allclose(build_intensive(LocalOperatorField(a), lattice).toarray(), brute, atol=1e-12)

    def test_norm_contracts(self):
        """Тест: ‖A_Λ‖ ≤ ‖a‖"""
        a = random_operator(self.rng)
        intensive = IntensiveOperator(LocalOperatorField(a), LatticeSpec(1, 3)).matrix.toarray()
        self.assertLessEqual(np.linalg.norm(intensive, 2), np.linalg.norm(a, 2) + 1e-12)

    def test_zero_momentum_is_intensive(self):
        """Тест: a_{k=0} совпадает с интенсивным оператором"""
        lattice = LatticeSpec(1, 4)
        a = LocalOperatorField(random_operator(self.rng))
        diff = momentum_transform(a, [0.0], lattice) - build_intensive(a, lattice)
        self.assertLess(abs(diff).max(), 1e-12)

    def test_momentum_pi_two_sites(self):
        """Тест: s₃ при k=π на цепочке L=2"""
        lattice = LatticeSpec(1, 2)
        expected = 0.5 * (embed_local(self.s3, 0, 4) - embed_local(self.s3, 1, 4))
        self.assertLess(abs(momentum_transform(self.s3, [np.pi], lattice) - expected).max(), 1e-12)

    def test_momentum_on_ppv(self):
        """Тест: a_k Ξ₊ = δ_{k0} Ξ₊"""
        lattice = LatticeSpec(1, 4)
        xi_plus = ManyBodyState.basis_state(0, lattice, (2,) * 4)
        for n in lattice.momenta():
            image = momentum_transform(self.s3, lattice.momentum_vector(n), lattice) @ xi_plus.amplitudes
            expected = xi_plus.amplitudes if n == (0,) else np.zeros(16)
            np.testing.assert_allclose(image, expected, atol=1e-12)

    def test_off_grid_momentum(self):
        with self.assertRaises(MomentumGridError):
            momentum_transform(self.s3, [1.0], LatticeSpec(1, 4))

    def test_fourier_modes_orthogonal(self):
        """Тест ортогональности фурье-мод для бесследового a"""
        lattice = LatticeSpec(1, 3)
        a = random_operator(self.rng)
        a = a - np.trace(a) / 2 * np.eye(2)
        field = LocalOperatorField(a)
        modes = [MomentumOperator(field, lattice, n).matrix for n in lattice.momenta()]
        for i in range(3):
            for j in range(3):
                if i != j:
                    self.assertLess(abs((modes[i].conj().T @ modes[j]).diagonal().sum()), 1e-10)

    def test_momentum_adjoint(self):
        """Тест: (a_k)† = (a†)_{-k}"""
        lattice = LatticeSpec(1, 3)
        op = MomentumOperator(LocalOperatorField(random_operator(self.rng)), lattice, (1,))
        self.assertLess(abs(op.matrix.conj().T - op.adjoint().matrix).max(), 1e-12)

    def test_translation_invariance(self):
        """Тест: T A_Λ T⁻¹ = A_Λ"""
        lattice = LatticeSpec(2, 2)
        a = build_intensive(LocalOperatorField(random_operator(self.rng)), lattice)
        t = translation_operator(lattice, 2, (1, 0))
        self.assertLess(abs(t @ a @ t.T - a).max(), 1e-12)

    def test_ggm_basis_orthonormal(self):
        """Тест базиса Гелл-Манна"""
        for q in (2, 3):
            basis = ggm_basis(q)
            self.assertEqual(len(basis), q * q - 1)
            gram = np.einsum('aij,bij->ab', basis.conj(), basis)
            np.testing.assert_allclose(gram, np.eye(q * q - 1), atol=1e-12)
            for element in basis:
                self.assertTrue(LocalOperatorField(element).is_traceless())


class TranslationTests(SimpleTestCase):
    """Тесты трансляций"""

    def test_zero_shift(self):
        lattice = LatticeSpec(1, 3)
        state = random_state(np.random.default_rng(1), lattice)
        np.testing.assert_array_equal(translate_state(state, (0,)).amplitudes, state.amplitudes)

    def test_product_state_shift(self):
        """Тест: |↑↓⟩ сдвигается в |↓↑⟩"""
        lattice = LatticeSpec(1, 2)
        up_down = ManyBodyState.basis_state(1, lattice, (2, 2))
        self.assertEqual(int(np.argmax(np.abs(translate_state(up_down, (1,)).amplitudes))), 2)

    def test_periodicity(self):
        """Тест: L сдвигов возвращают исходное состояние"""
        lattice = LatticeSpec(1, 4)
        state = random_state(np.random.default_rng(2), lattice)
        moved = state
        for _ in range(4):
            moved = translate_state(moved, (1,))
        np.testing.assert_allclose(moved.amplitudes, state.amplitudes, atol=1e-14)

    def test_operator_matches_state_translation(self):
        lattice = LatticeSpec(2, 2)
        state = random_state(np.random.default_rng(4), lattice)
        t = translation_operator(lattice, 2, (0, 1))
        np.testing.assert_allclose(t @ state.amplitudes, translate_state(state, (0, 1)).amplitudes)

    def test_unnormalized_state_rejected(self):
        with self.assertRaises(NormalizationError):
            ManyBodyState(np.ones(4), LatticeSpec(1, 2), (2, 2))

    def test_norm_tolerance_independent_of_dimension(self):
        """Тест: допуск нормы 1e-12 не растёт с размерностью пространства"""
        amplitudes = np.full(256, 1.0 / 16.0) * (1.0 + 1e-11)
        with self.assertRaises(NormalizationError):
            ManyBodyState(amplitudes, LatticeSpec(1, 8), (2,) * 8)


class IsingModelTests(SimpleTestCase):
    """Тесты модели Изинга"""

    def test_two_site_ground_energy(self):
        """Тест: L=2, J=1 даёт E₀ = -2J (удвоенная связь)"""
        model = build_ising(2, 1, 1.0)
        self.assertAlmostEqual(np.linalg.eigvalsh(model.hamiltonian.toarray()).min(), -2.0, places=12)

    def test_ppv_eigenstates(self):
        """Тест: Ξ± - собственные состояния H"""
        model = build_ising(6, 1, 1.0)
        for xi in model.ppv_states():
            h_xi = model.hamiltonian @ xi.amplitudes
            energy = np.vdot(xi.amplitudes, h_xi)
            self.assertLess(np.linalg.norm(h_xi - energy * xi.amplitudes), 1e-12)
            self.assertAlmostEqual(energy.real, -6.0, places=12)

    def test_ppv_has_no_connected_correlations(self):
        """Тест: ⟨Ξ₊|δa(0)δb(x)|Ξ₊⟩ = 0"""
        rng = np.random.default_rng(5)
        model = build_ising(4, 1, 1.0)
        xi_plus, _ = model.ppv_states()
        for x in (1, 2, 3):
            a = model.site_operator(random_operator(rng), 0)
            b = model.site_operator(random_operator(rng), x)
            psi = xi_plus.amplitudes
            da = a - np.vdot(psi, a @ psi) * sparse.identity(16)
            db = b - np.vdot(psi, b @ psi) * sparse.identity(16)
            self.assertLess(abs(np.vdot(psi, da @ (db @ psi))), 1e-12)

    def test_size_overflow_proposes_size(self):
        """Тест ошибки переполнения размерности"""
        with self.assertRaisesMessage(DimensionError, 'L=14'):
            build_ising(16, 1, 1.0)
        with self.assertRaisesMessage(DimensionError, 'L=3'):
            build_ising(4, 2, 1.0)

    def test_symmetric_perturbation_accepted(self):
        """Тест возмущения, сохраняющего симметрию"""
        lattice = LatticeSpec(1, 3)
        field = sum(embed_local(LocalOperatorField(SIGMA_1), x, 8) for x in range(3))
        model = build_ising(3, 1, 1.0, perturbation=0.3 * field)
        self.assertLess(abs(model.parity() @ model.hamiltonian - model.hamiltonian @ model.parity()).max(), 1e-12)
        self.assertEqual(model.lattice, lattice)

    def test_symmetry_breaking_perturbation_rejected(self):
        field = sum(embed_local(LocalOperatorField(SIGMA_3), x, 8) for x in range(3))
        with self.assertRaises(ParityError):
            build_ising(3, 1, 1.0, perturbation=field)

    def test_non_hermitian_perturbation_rejected(self):
        upper = sparse.csr_matrix(([1.0], ([0], [1])), shape=(8, 8))
        with self.assertRaises(HermiticityError):
            build_ising(3, 1, 1.0, perturbation=upper)


class VacuumPairTests(SimpleTestCase):
    """Тесты AFV, PPV и разложения по чётности"""

    def setUp(self):
        self.model = build_ising(4, 1, 1.0)
        self.pair = build_afv_ising(self.model)
        self.m = self.model.order_parameter()

    def test_afv_order_parameter(self):
        """Тест: ⟨Φ₀|S₃|Φ₀⟩ = 0 и ⟨Φ₀|S₃†S₃|Φ₀⟩ = 1"""
        self.assertAlmostEqual(abs(self.pair.afv.expectation(self.m)), 0.0, places=12)
        self.assertAlmostEqual(self.pair.afv.expectation(self.m.conj().T @ self.m).real, 1.0, places=12)

    def test_parity_of_components(self):
        """Тест: PΦ₀ = Φ₀, PΦ₋ = -Φ₋"""
        parity = self.model.parity()
        components = self.pair.components
        np.testing.assert_allclose(parity @ self.pair.afv.amplitudes, self.pair.afv.amplitudes, atol=1e-14)
        np.testing.assert_allclose(parity @ components.phi_minus.amplitudes,
                                   -components.phi_minus.amplitudes, atol=1e-14)

    def test_ppv_decomposition(self):
        """Тест: Ξ₊ даёт c₊ = c₋ = 1/√2"""
        components = self.pair.components
        self.assertAlmostEqual(components.c_plus, 1 / np.sqrt(2), places=12)
        self.assertAlmostEqual(components.c_minus, 1 / np.sqrt(2), places=12)
        np.testing.assert_allclose(components.reconstruct(), self.pair.ppv.amplitudes, atol=1e-12)

    def test_even_state_decomposition(self):
        """Тест: Φ₀ целиком в чётном секторе"""
        components = parity_decompose(self.pair.afv, self.model.parity())
        self.assertAlmostEqual(components.c_plus, 1.0, places=12)
        self.assertEqual(components.c_minus, 0.0)
        self.assertEqual(components.absent, ('minus',))

    def test_random_state_completeness(self):
        """Тест полноты разложения для случайного состояния"""
        state = random_state(np.random.default_rng(6), self.model.lattice)
        components = parity_decompose(state, self.model.parity())
        self.assertAlmostEqual(components.c_plus ** 2 + components.c_minus ** 2, 1.0, places=12)
        np.testing.assert_allclose(components.reconstruct(), state.amplitudes, atol=1e-12)

    def test_parity_must_square_to_one(self):
        with self.assertRaises(ParityError):
            parity_decompose(self.pair.afv, 2 * self.model.parity())

    def test_afv_fluctuation_is_size_independent(self):
        """Тест аномальной флуктуации AFV: O(|Λ|⁰)"""
        values = []
        for L in (4, 6, 8, 10):
            model = build_ising(L, 1, 1.0)
            values.append(fluctuation(build_afv_ising(model).afv, model.order_parameter()))
        self.assertLess(max(values) / min(values) - 1.0, 0.01)
        self.assertAlmostEqual(values[0], 1.0, places=12)

    def test_ppv_fluctuation_vanishes(self):
        self.assertEqual(fluctuation(self.pair.ppv, self.m), 0.0)

    def test_tilted_pair_orthogonality_grows(self):
        """Тест: перекрытие приближённых PPV убывает с |Λ|"""
        overlaps = []
        for L in (2, 3, 4, 5, 6):
            model = build_ising(L, 1, 1.0)
            plus, minus = tilted_ppv_pair(model, 0.3)
            overlaps.append(abs(plus.overlap(minus)))
        self.assertTrue(all(b < a for a, b in zip(overlaps, overlaps[1:])))
        self.assertAlmostEqual(overlaps[0], np.sin(0.3) ** 2, places=12)

    def test_exact_ppv_overlap_zero(self):
        xi_plus, xi_minus = self.model.ppv_states()
        self.assertEqual(abs(xi_plus.overlap(xi_minus)), 0.0)


class FreeBosonModelTests(SimpleTestCase):
    """Тесты свободных бозонов"""

    def setUp(self):
        self.model = build_free_boson(4, 1, 6)
        self.number, self.coherent = build_boson_states(self.model, 4, 0.2)

    def test_dimension(self):
        self.assertEqual(self.model.dimension, 7 ** 4)

    def test_number_state_fluctuation(self):
        """Тест: ⟨N|δM†δM|N⟩ = N/|Λ|"""
        self.assertAlmostEqual(fluctuation(self.number, self.model.order_parameter()), 1.0, places=12)

    def test_coherent_state_mean(self):
        """Тест: ⟨α|M_Λ|α⟩ = α/√|Λ|"""
        mean = self.coherent.expectation(self.model.order_parameter())
        self.assertAlmostEqual(mean.real, 0.1, places=10)
        self.assertAlmostEqual(mean.imag, 0.0, places=12)

    def test_vacuum_has_no_normal_fluctuations(self):
        """Тест: в вакууме нормально упорядоченные флуктуации ψ равны нулю"""
        vacuum, _ = build_boson_states(self.model, 0, 0.2)
        for x in range(4):
            self.assertEqual(fluctuation(vacuum, self.model.field_operator(x)), 0.0)

    def test_field_average_is_order_parameter(self):
        """Тест: |Λ|⁻¹ Σ ψ(x) = M_Λ"""
        total = sum(self.model.field_operator(x) for x in range(4)) / 4
        self.assertLess(abs(total - self.model.order_parameter()).max(), 1e-12)

    def test_psi_zero_mode_is_order_parameter(self):
        zero_mode = self.model.momentum_components(PSI)[0]
        self.assertLess(abs(zero_mode - self.model.order_parameter()).max(), 1e-12)

    def test_cutoff_violations(self):
        """Тест ошибок обрезки"""
        with self.assertRaises(CutoffError):
            build_boson_states(self.model, 7, 0.2)
        with self.assertRaises(CutoffError):
            build_boson_states(self.model, 4, 1.0)

    def test_truncation_flag(self):
        """Тест флага усечения на верхнем уровне Фока"""
        full, _ = build_boson_states(self.model, 6, 0.2)
        self.assertFalse(self.model.truncation_reliable(full))
        self.assertTrue(self.model.truncation_reliable(self.number))
        self.assertTrue(self.model.truncation_reliable(self.coherent))

    def test_condensate_translation_invariant(self):
        moved = self.model.translate(self.number, (1,))
        self.assertAlmostEqual(abs(moved.overlap(self.number)), 1.0, places=12)

    def test_coherent_fluctuation_decays_as_inverse_volume(self):
        """Тест: флуктуация PPV бозонов ~ c/|Λ|"""
        volumes, values = [], []
        for L in (2, 4, 6, 8):
            model = build_free_boson(L, 1, 6, n_max_excited=1)
            _, coherent = build_boson_states(model, 0, 0.2)
            volumes.append(model.lattice.volume)
            values.append(fluctuation(coherent, model.order_parameter(), ordering='anti'))
            self.assertLess(fluctuation(coherent, model.order_parameter()), 1e-10)
        fit = ScalingFitService.power_law(volumes, values)
        self.assertAlmostEqual(fit.exponent, -1.0, delta=0.1)
