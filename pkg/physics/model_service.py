"""
Сервис модельных систем: изинговская решётка и свободные бозоны
Построение гамильтонианов, вакуумов (AFV, PPV) и разложения по чётности
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from django.conf import settings

from .exceptions import CutoffError, DimensionError, HermiticityError, ParityError
from .lattice_service import (
    LatticeSpec,
    LocalOperatorField,
    ManyBodyState,
    Operator,
    build_intensive,
    embed_local,
    is_hermitian,
    momentum_operators,
    translate_state,
    translation_operator,
)

logger = logging.getLogger(__name__)

SIGMA_3 = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_1 = np.array([[0, 1], [1, 0]], dtype=complex)

BosonField = str
PSI = 'psi'
PSI_DAG = 'psi_dag'


def largest_feasible_size(dimension: int, max_sites: int) -> int:
    size = 1
    while (size + 1) ** dimension <= max_sites:
        size += 1
    return size


def fluctuation(state: ManyBodyState, op: Operator, ordering: str = 'normal') -> float:
    """
    ⟨δO†δO⟩ (normal) или ⟨δO δO†⟩ (anti), где δO = O - ⟨O⟩
    """
    psi = state.amplitudes
    mean = np.vdot(psi, op @ psi)
    if ordering == 'normal':
        residual = op @ psi - mean * psi
    elif ordering == 'anti':
        residual = op.conj().T @ psi - np.conj(mean) * psi
    else:
        raise ValueError(f'Неизвестный порядок операторов: {ordering}')
    return float(np.vdot(residual, residual).real)


@dataclass(frozen=True)
class ParityComponents:
    """Разложение состояния на чётную и нечётную компоненты"""
    c_plus: float
    phi_plus: Optional[ManyBodyState]
    c_minus: float
    phi_minus: Optional[ManyBodyState]

    @property
    def absent(self) -> Tuple[str, ...]:
        flags = []
        if self.phi_plus is None:
            flags.append('plus')
        if self.phi_minus is None:
            flags.append('minus')
        return tuple(flags)

    def reconstruct(self) -> np.ndarray:
        total = 0
        if self.phi_plus is not None:
            total = total + self.c_plus * self.phi_plus.amplitudes
        if self.phi_minus is not None:
            total = total + self.c_minus * self.phi_minus.amplitudes
        return total


def parity_decompose(state: ManyBodyState, parity: Operator, tol: float = 1e-12) -> ParityComponents:
    """Φ± = (1±P)ψ / (2c±), c± = ‖(1±P)ψ‖/2; пустой сектор помечается отсутствующим"""
    psi = state.amplitudes
    p_psi = parity @ psi
    if np.linalg.norm(parity @ p_psi - psi) > 1e-10:
        raise ParityError('Оператор чётности не удовлетворяет P² = 1')

    parts = {}
    for sign, key in ((1, 'plus'), (-1, 'minus')):
        projected = 0.5 * (psi + sign * p_psi)
        weight = float(np.linalg.norm(projected))
        if weight < tol:
            parts[key] = (0.0, None)
        else:
            parts[key] = (weight, state.with_amplitudes(projected / weight, label=f'{state.label}{key}'))

    components = ParityComponents(parts['plus'][0], parts['plus'][1], parts['minus'][0], parts['minus'][1])
    if components.absent:
        logger.debug('Состояние %s лежит в одном секторе чётности: нет %s', state.label, components.absent)
    return components


@dataclass(frozen=True, eq=False)
class VacuumPair:
    """Пара вакуумов: симметричный AFV и PPV с нарушенной симметрией"""
    afv: ManyBodyState
    ppv: ManyBodyState
    parity: Optional[sparse.csr_matrix] = None
    components: Optional[ParityComponents] = None

    @property
    def has_parity(self) -> bool:
        return self.parity is not None and self.components is not None


@dataclass(frozen=True, eq=False)
class IsingModel:
    """Модель Изинга H = -J Σ s₃(x)s₃(y) на периодической решётке"""
    lattice: LatticeSpec
    coupling: float
    perturbation: Optional[sparse.spmatrix] = None
    local_dim: int = 2

    def __post_init__(self):
        if self.perturbation is not None:
            perturbation = sparse.csr_matrix(self.perturbation, dtype=complex)
            if perturbation.shape != (self.dimension, self.dimension):
                raise DimensionError(f'Возмущение размера {perturbation.shape} не совпадает с размерностью {self.dimension}')
            if not is_hermitian(perturbation, settings.LAB['HERMITIAN_TOL']):
                raise HermiticityError('Возмущение гамильтониана не эрмитово')
            commutator = self.parity() @ perturbation - perturbation @ self.parity()
            if commutator.count_nonzero() and abs(commutator).max() > settings.LAB['HERMITIAN_TOL']:
                raise ParityError('Возмущение нарушает симметрию верх-низ: [P, V] ≠ 0')
            object.__setattr__(self, 'perturbation', perturbation)

    @property
    def kind(self) -> str:
        return 'ising'

    @property
    def dimension(self) -> int:
        return 2 ** self.lattice.volume

    @property
    def local_dims(self) -> Tuple[int, ...]:
        return (2,) * self.lattice.volume

    @cached_property
    def spins(self) -> np.ndarray:
        """Значения s₃ на узлах для каждого базисного состояния, форма (dim, N)"""
        n_sites = self.lattice.volume
        indices = np.arange(self.dimension)[:, None]
        shifts = (n_sites - 1 - np.arange(n_sites))[None, :]
        return 1 - 2 * ((indices >> shifts) & 1)

    @cached_property
    def hamiltonian(self) -> sparse.csr_matrix:
        energies = np.zeros(self.dimension)
        for x, y in self.lattice.bonds():
            energies -= self.coupling * self.spins[:, x] * self.spins[:, y]
        h = sparse.diags(energies.astype(complex), format='csr')
        if self.perturbation is not None:
            h = (h + self.perturbation).tocsr()
        return h

    @cached_property
    def order_field(self) -> LocalOperatorField:
        return LocalOperatorField(SIGMA_3, name='s3')

    def parity(self) -> sparse.csr_matrix:
        """P = Π s₁(x): переворот всех спинов"""
        dim = self.dimension
        rows = np.arange(dim)
        return sparse.csr_matrix((np.ones(dim, dtype=complex), (rows, dim - 1 - rows)), shape=(dim, dim))

    def order_parameter(self) -> sparse.csr_matrix:
        return build_intensive(self.order_field, self.lattice)

    def ppv_states(self) -> Tuple[ManyBodyState, ManyBodyState]:
        xi_plus = ManyBodyState.basis_state(0, self.lattice, self.local_dims, 'xi_plus')
        xi_minus = ManyBodyState.basis_state(self.dimension - 1, self.lattice, self.local_dims, 'xi_minus')
        return xi_plus, xi_minus

    def is_order_field(self, operator) -> bool:
        return isinstance(operator, LocalOperatorField) and operator.same_as(self.order_field)

    def momentum_components(self, operator) -> List[sparse.csr_matrix]:
        if not isinstance(operator, LocalOperatorField):
            raise DimensionError(f'Изинговская модель принимает только одноузельные операторы, получено {operator!r}')
        if operator.local_dim != self.local_dim:
            raise DimensionError(f'Оператор {operator.name} размера {operator.local_dim} не совпадает с q=2')
        return momentum_operators(operator, self.lattice)

    def site_operator(self, matrix: np.ndarray, x: int) -> sparse.csr_matrix:
        return embed_local(LocalOperatorField(matrix), x, self.dimension)

    def translate(self, state: ManyBodyState, shift: Sequence[int]) -> ManyBodyState:
        return translate_state(state, shift)


def build_ising(L: int, d: int, J: float, perturbation: Optional[sparse.spmatrix] = None) -> IsingModel:
    """Построение изинговской модели с проверкой размера пространства"""
    if L < 2:
        raise DimensionError(f'Изинговская решётка требует L ≥ 2, получено L={L}')
    lattice = LatticeSpec(d, L)
    max_sites = settings.LAB['MAX_SITES']
    if lattice.volume > max_sites:
        raise DimensionError(
            f'Решётка {L}^{d} содержит {lattice.volume} узлов, предел {max_sites}; '
            f'наибольший допустимый размер L={largest_feasible_size(d, max_sites)}'
        )
    model = IsingModel(lattice, float(J), perturbation)
    logger.debug('Модель Изинга L=%s d=%s: размерность %s', L, d, model.dimension)
    return model


def build_afv_ising(model: IsingModel) -> VacuumPair:
    """AFV Φ₀ = (Ξ₊+Ξ₋)/√2 и PPV Ξ₊ с разложением Ξ₊ по чётности"""
    xi_plus, xi_minus = model.ppv_states()
    afv = ManyBodyState.from_amplitudes(xi_plus.amplitudes + xi_minus.amplitudes,
                                        model.lattice, model.local_dims, 'phi0')
    parity = model.parity()
    return VacuumPair(afv=afv, ppv=xi_plus, parity=parity, components=parity_decompose(xi_plus, parity))


def tilted_ppv_pair(model: IsingModel, theta: float) -> Tuple[ManyBodyState, ManyBodyState]:
    """
    Пара приближённых PPV для возмущённой модели: произведение наклонённых спинов
    cos(θ/2)|↑⟩ + sin(θ/2)|↓⟩ и её образ под действием чётности
    """
    local = np.array([np.cos(theta / 2), np.sin(theta / 2)], dtype=complex)
    amplitudes = local
    for _ in range(model.lattice.volume - 1):
        amplitudes = np.kron(amplitudes, local)
    plus = ManyBodyState.from_amplitudes(amplitudes, model.lattice, model.local_dims, 'tilted_plus')
    minus = plus.with_amplitudes(model.parity() @ plus.amplitudes, label='tilted_minus')
    return plus, minus


def tilted_vacuum_pair(model: IsingModel, theta: float) -> VacuumPair:
    """AFV как чётная суперпозиция наклонённых PPV; PPV раскладывается по чётности"""
    plus, minus = tilted_ppv_pair(model, theta)
    afv = plus.with_amplitudes(plus.amplitudes + minus.amplitudes, label='tilted_phi0')
    parity = model.parity()
    return VacuumPair(afv=afv, ppv=plus, parity=parity, components=parity_decompose(plus, parity))


def random_invariant_state(model: IsingModel, rng: np.random.Generator) -> ManyBodyState:
    """Случайная суперпозиция трансляционно-инвариантных (k = 0) состояний"""
    lattice = model.lattice
    vector = rng.normal(size=model.dimension) + 1j * rng.normal(size=model.dimension)
    for axis in range(lattice.dimension):
        shift = [0] * lattice.dimension
        shift[axis] = 1
        step = translation_operator(lattice, model.local_dim, shift)
        total = np.zeros_like(vector)
        for _ in range(lattice.size):
            total += vector
            vector = step @ vector
        vector = total
    return ManyBodyState.from_amplitudes(vector, lattice, model.local_dims, 'random_k0')


def _destroy(dim: int) -> sparse.csr_matrix:
    return sparse.diags(np.sqrt(np.arange(1, dim)).astype(complex), 1, format='csr')


def _free_dispersion(lattice: LatticeSpec) -> np.ndarray:
    return np.array([
        float(np.sum(2.0 * (1.0 - np.cos(lattice.momentum_vector(n)))))
        for n in lattice.momenta()
    ])


@dataclass(frozen=True, eq=False)
class FreeBosonModel:
    """Свободные бозоны H = Σ ε_k A†_k A_k в усечённом пространстве Фока по модам"""
    lattice: LatticeSpec
    n_max: int
    n_max_excited: int
    dispersion: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dispersion is None:
            object.__setattr__(self, 'dispersion', _free_dispersion(self.lattice))
        dispersion = np.asarray(self.dispersion, dtype=float)
        if dispersion.shape != (self.lattice.volume,):
            raise DimensionError(f'Дисперсия должна иметь {self.lattice.volume} значений')
        if dispersion[0] > dispersion.min() + 1e-12:
            raise DimensionError('Минимум дисперсии должен приходиться на k=0')
        object.__setattr__(self, 'dispersion', dispersion)

    @property
    def kind(self) -> str:
        return 'free_boson'

    @property
    def local_dims(self) -> Tuple[int, ...]:
        return (self.n_max + 1,) + (self.n_max_excited + 1,) * (self.lattice.volume - 1)

    @property
    def dimension(self) -> int:
        return int(np.prod(self.local_dims))

    def minus_mode(self, index: int) -> int:
        n = self.lattice.momenta()[index]
        return self.lattice.index(tuple(-v for v in n))

    @cached_property
    def occupations(self) -> np.ndarray:
        """Числа заполнения мод для каждого базисного состояния, форма (dim, |Λ|)"""
        grids = np.indices(self.local_dims).reshape(len(self.local_dims), -1)
        return grids.T

    @cached_property
    def annihilators(self) -> List[sparse.csr_matrix]:
        dims = self.local_dims
        ops = []
        for q, dim_q in enumerate(dims):
            left = sparse.identity(int(np.prod(dims[:q])), dtype=complex, format='csr')
            right = sparse.identity(int(np.prod(dims[q + 1:])), dtype=complex, format='csr')
            ops.append(sparse.kron(sparse.kron(left, _destroy(dim_q)), right, format='csr'))
        return ops

    @cached_property
    def hamiltonian(self) -> sparse.csr_matrix:
        energies = self.occupations @ self.dispersion
        return sparse.diags(energies.astype(complex), format='csr')

    def field_operator(self, x: int) -> sparse.csr_matrix:
        """ψ(x) = |Λ|^{-1/2} Σ_q A_q e^{iqx}"""
        volume = self.lattice.volume
        total = sparse.csr_matrix((self.dimension, self.dimension), dtype=complex)
        position = np.asarray(self.lattice.coords(x), dtype=float)
        for q, n in enumerate(self.lattice.momenta()):
            phase = np.exp(1j * self.lattice.momentum_vector(n) @ position)
            total = total + phase * self.annihilators[q]
        return (total / np.sqrt(volume)).tocsr()

    def order_parameter(self) -> sparse.csr_matrix:
        """M_Λ = |Λ|⁻¹ Σ ψ(x) = |Λ|^{-1/2} A₀"""
        return (self.annihilators[0] / np.sqrt(self.lattice.volume)).tocsr()

    def is_order_field(self, operator) -> bool:
        return operator == PSI

    def momentum_components(self, operator: BosonField) -> List[sparse.csr_matrix]:
        """
        a_k для поля ψ: |Λ|^{-1/2} A_{-k}; для ψ†: |Λ|^{-1/2} A_k†
        """
        scale = 1.0 / np.sqrt(self.lattice.volume)
        if operator == PSI:
            return [(scale * self.annihilators[self.minus_mode(q)]).tocsr() for q in range(self.lattice.volume)]
        if operator == PSI_DAG:
            return [(scale * a.conj().T).tocsr() for a in self.annihilators]
        raise DimensionError(f'Бозонная модель принимает поля {PSI!r} и {PSI_DAG!r}, получено {operator!r}')

    def translate(self, state: ManyBodyState, shift: Sequence[int]) -> ManyBodyState:
        """Сдвиг действует фазой e^{-i Σ q·shift n_q}"""
        shift = np.asarray(shift, dtype=float)
        momenta = np.array([self.lattice.momentum_vector(n) @ shift for n in self.lattice.momenta()])
        phases = np.exp(-1j * self.occupations @ momenta)
        return ManyBodyState(phases * state.amplitudes, state.lattice, state.local_dims, state.label)

    def top_level_weight(self, state: ManyBodyState) -> float:
        tensor = np.abs(state.amplitudes.reshape(self.local_dims)) ** 2
        weights = [np.take(tensor, dim - 1, axis=q).sum() for q, dim in enumerate(self.local_dims)]
        return float(max(weights))

    def truncation_reliable(self, state: ManyBodyState) -> bool:
        return self.top_level_weight(state) <= settings.LAB['TRUNCATION_TOL']


def build_free_boson(L: int, d: int, n_max: int, n_max_excited: Optional[int] = None,
                     dispersion: Optional[Sequence[float]] = None) -> FreeBosonModel:
    if n_max < 1:
        raise CutoffError(f'Обрезка n_max должна быть положительной: {n_max}')
    n_max_excited = n_max if n_max_excited is None else n_max_excited
    if n_max_excited < 1:
        raise CutoffError(f'Обрезка возбуждённых мод должна быть положительной: {n_max_excited}')
    lattice = LatticeSpec(d, L)
    dimension = (n_max + 1) * (n_max_excited + 1) ** (lattice.volume - 1)
    limit = 2 ** settings.LAB['MAX_SITES']
    if dimension > limit:
        raise DimensionError(
            f'Пространство Фока размерности {dimension} превышает предел {limit}; '
            f'уменьшите L или обрезку возбуждённых мод'
        )
    model = FreeBosonModel(lattice, n_max, n_max_excited,
                           None if dispersion is None else np.asarray(dispersion, dtype=float))
    logger.debug('Свободные бозоны L=%s d=%s: размерность %s', L, d, model.dimension)
    return model


def build_boson_states(model: FreeBosonModel, N: int, alpha: complex) -> Tuple[ManyBodyState, ManyBodyState]:
    """Числовое |N⟩ и когерентное |α⟩ состояния в моде k=0, вакуум в остальных"""
    if N < 0 or N > model.n_max:
        raise CutoffError(f'Число частиц N={N} вне обрезки n_max={model.n_max}')
    if abs(alpha) ** 2 + 6 * abs(alpha) > model.n_max:
        raise CutoffError(
            f'Когерентное состояние α={alpha} не помещается в обрезку: |α|²+6|α| > n_max={model.n_max}'
        )
    stride = model.dimension // model.local_dims[0]

    number = ManyBodyState.basis_state(N * stride, model.lattice, model.local_dims, f'number_{N}')

    levels = np.arange(model.n_max + 1)
    mode_amplitudes = np.ones(model.n_max + 1, dtype=complex)
    for n in levels[1:]:
        mode_amplitudes[n] = mode_amplitudes[n - 1] * alpha / np.sqrt(n)
    mode_amplitudes *= np.exp(-abs(alpha) ** 2 / 2)
    amplitudes = np.zeros(model.dimension, dtype=complex)
    amplitudes[levels * stride] = mode_amplitudes
    coherent = ManyBodyState.from_amplitudes(amplitudes, model.lattice, model.local_dims, 'coherent')

    for state in (number, coherent):
        if not model.truncation_reliable(state):
            logger.warning('Состояние %s имеет вес %.2e на верхнем уровне Фока: результат ненадёжен',
                           state.label, model.top_level_weight(state))
    return number, coherent


def build_boson_pair(model: FreeBosonModel, N: int, alpha: complex) -> VacuumPair:
    number, coherent = build_boson_states(model, N, alpha)
    return VacuumPair(afv=number, ppv=coherent)


Model = Union[IsingModel, FreeBosonModel]
