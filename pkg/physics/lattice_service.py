"""
Сервис геометрии решётки и операторной алгебры
Узлы, импульсная сетка, вложение одноузельных операторов, трансляции
"""
import itertools
import logging
from dataclasses import dataclass
from functools import cached_property, reduce
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from django.conf import settings

from .exceptions import DimensionError, MomentumGridError, NormalizationError

logger = logging.getLogger(__name__)

Site = Tuple[int, ...]
Operator = Union[np.ndarray, sparse.spmatrix]


@dataclass(frozen=True)
class LatticeSpec:
    """Гиперкубическая решётка L^d с периодическими граничными условиями"""
    dimension: int
    size: int

    def __post_init__(self):
        if self.dimension < 1:
            raise DimensionError(f'Размерность решётки должна быть положительной: d={self.dimension}')
        if self.size < 1:
            raise DimensionError(f'Линейный размер должен быть положительным: L={self.size}')

    @property
    def volume(self) -> int:
        return self.size ** self.dimension

    @cached_property
    def sites(self) -> Tuple[Site, ...]:
        # построчный (row-major) порядок
        return tuple(itertools.product(range(self.size), repeat=self.dimension))

    def index(self, x: Sequence[int]) -> int:
        """Номер узла по координатам (с периодическим заворачиванием)"""
        if len(x) != self.dimension:
            raise DimensionError(f'Узел {tuple(x)} не принадлежит решётке размерности {self.dimension}')
        idx = 0
        for coord in x:
            idx = idx * self.size + (int(coord) % self.size)
        return idx

    def coords(self, index: int) -> Site:
        if not 0 <= index < self.volume:
            raise DimensionError(f'Узел с номером {index} вне решётки из {self.volume} узлов')
        return self.sites[index]

    def neighbor(self, x: Sequence[int], direction: int, step: int = 1) -> Site:
        shifted = list(x)
        shifted[direction] = (shifted[direction] + step) % self.size
        return tuple(shifted)

    def bonds(self) -> List[Tuple[int, int]]:
        """
        Буквальное перечисление связей <x,y>: по одной на узел и положительное направление.
        При L=2 каждая пара встречается дважды.
        """
        return [
            (self.index(x), self.index(self.neighbor(x, mu)))
            for x in self.sites
            for mu in range(self.dimension)
        ]

    def momenta(self) -> Tuple[Site, ...]:
        """Импульсная сетка как индексы n, k = 2πn/L"""
        return self.sites

    def momentum_vector(self, n: Sequence[int]) -> np.ndarray:
        return 2.0 * np.pi * np.asarray(n, dtype=float) / self.size

    def momentum_index(self, k: Sequence[float]) -> Site:
        """Индекс импульса на сетке; вне сетки - MomentumGridError"""
        k = np.atleast_1d(np.asarray(k, dtype=float))
        if k.shape != (self.dimension,):
            raise MomentumGridError(f'Импульс {tuple(k)} имеет неверную размерность')
        n = k * self.size / (2.0 * np.pi)
        n_round = np.round(n)
        if np.max(np.abs(n - n_round)) > 1e-9:
            raise MomentumGridError(f'Импульс {tuple(k)} не лежит на сетке 2πn/{self.size}')
        return tuple(int(v) % self.size for v in n_round)

    def phases(self, n: Sequence[int], sign: int = 1) -> np.ndarray:
        """e^{±ikx} для всех узлов"""
        k = self.momentum_vector(n)
        positions = np.asarray(self.sites, dtype=float)
        return np.exp(sign * 1j * positions @ k)

    def site_permutation(self, shift: Sequence[int]) -> List[int]:
        """
        Перестановка осей тензора состояния для сдвига на shift:
        новое содержимое узла j берётся с узла j - shift
        """
        if len(shift) != self.dimension:
            raise DimensionError(f'Сдвиг {tuple(shift)} не совпадает с размерностью решётки')
        return [
            self.index(tuple(c - s for c, s in zip(x, shift)))
            for x in self.sites
        ]

    def contact_block(self, size: int) -> Tuple[int, ...]:
        """Первые size узлов в построчном порядке"""
        if not 1 <= size <= self.volume:
            raise DimensionError(f'Контактная область из {size} узлов не помещается в решётку из {self.volume}')
        return tuple(range(size))


@dataclass(frozen=True, eq=False)
class LocalOperatorField:
    """Одноузельный оператор a, размещённый на узлах решётки"""
    matrix: np.ndarray
    placement: Optional[Tuple[int, ...]] = None
    name: str = 'a'

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=complex)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionError(f'Оператор {self.name} должен быть квадратной матрицей, получено {matrix.shape}')
        object.__setattr__(self, 'matrix', matrix)

    @property
    def local_dim(self) -> int:
        return self.matrix.shape[0]

    def covers(self, lattice: LatticeSpec) -> bool:
        return self.placement is None or set(self.placement) == set(range(lattice.volume))

    def placed_sites(self, lattice: LatticeSpec) -> Tuple[int, ...]:
        return tuple(range(lattice.volume)) if self.placement is None else tuple(self.placement)

    def adjoint(self) -> 'LocalOperatorField':
        return LocalOperatorField(self.matrix.conj().T, self.placement, f'{self.name}†')

    def is_traceless(self, tol: float = 1e-12) -> bool:
        return abs(np.trace(self.matrix)) < tol

    def same_as(self, other: 'LocalOperatorField', tol: float = 1e-12) -> bool:
        return self.matrix.shape == other.matrix.shape and np.allclose(self.matrix, other.matrix, atol=tol)


def _sites_count(q: int, dim: int, x: int) -> int:
    n_sites = int(round(np.log(dim) / np.log(q))) if q > 1 else 0
    if q ** n_sites != dim:
        raise DimensionError(
            f'Узел {x}: размерность {dim} не является степенью локальной размерности {q}'
        )
    return n_sites


def embed_local(op: LocalOperatorField, x: int, dim: int) -> sparse.csr_matrix:
    """
    I ⊗ … ⊗ a ⊗ … ⊗ I с оператором a на позиции узла x
    """
    q = op.local_dim
    n_sites = _sites_count(q, dim, x)
    if not 0 <= x < max(n_sites, 1):
        raise DimensionError(f'Узел {x} вне пространства из {n_sites} узлов')
    left = sparse.identity(q ** x, dtype=complex, format='csr')
    right = sparse.identity(q ** (n_sites - 1 - x), dtype=complex, format='csr')
    return sparse.kron(sparse.kron(left, sparse.csr_matrix(op.matrix)), right, format='csr')


def site_operators(op: LocalOperatorField, lattice: LatticeSpec) -> List[sparse.csr_matrix]:
    dim = op.local_dim ** lattice.volume
    return [embed_local(op, x, dim) for x in range(lattice.volume)]


def build_intensive(op: LocalOperatorField, lattice: LatticeSpec) -> sparse.csr_matrix:
    """A_Λ = (1/|Λ|) Σ_x a(x)"""
    if not op.covers(lattice):
        raise DimensionError(f'Интенсивный оператор требует размещения {op.name} на всех узлах')
    total = reduce(lambda acc, term: acc + term, site_operators(op, lattice))
    return (total / lattice.volume).tocsr()


def momentum_transform(op: LocalOperatorField, k: Sequence[float], lattice: LatticeSpec,
                       embedded: Optional[List[sparse.csr_matrix]] = None) -> sparse.csr_matrix:
    """a_k = |Λ|⁻¹ Σ_x e^{ikx} a(x); k задаётся вектором импульса"""
    n = lattice.momentum_index(k)
    phases = lattice.phases(n, sign=1)
    embedded = embedded if embedded is not None else site_operators(op, lattice)
    total = sparse.csr_matrix(embedded[0].shape, dtype=complex)
    for x in op.placed_sites(lattice):
        total = total + phases[x] * embedded[x]
    return (total / lattice.volume).tocsr()


def momentum_operators(op: LocalOperatorField, lattice: LatticeSpec) -> List[sparse.csr_matrix]:
    """Все a_k в порядке импульсной сетки"""
    embedded = site_operators(op, lattice)
    return [
        momentum_transform(op, lattice.momentum_vector(n), lattice, embedded)
        for n in lattice.momenta()
    ]


@dataclass(frozen=True, eq=False)
class IntensiveOperator:
    """Интенсивный оператор A_Λ, составленный из одноузельного a"""
    base: LocalOperatorField
    lattice: LatticeSpec

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        return build_intensive(self.base, self.lattice)


@dataclass(frozen=True, eq=False)
class MomentumOperator:
    """Фурье-компонента a_k = |Λ|⁻¹ Σ_x a(x) e^{ikx}"""
    base: LocalOperatorField
    lattice: LatticeSpec
    k: Site

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        return momentum_transform(self.base, self.lattice.momentum_vector(self.k), self.lattice)

    def adjoint(self) -> 'MomentumOperator':
        """(a_k)† = (a†)_{-k}"""
        minus_k = tuple((-n) % self.lattice.size for n in self.k)
        return MomentumOperator(self.base.adjoint(), self.lattice, minus_k)


@dataclass(frozen=True, eq=False)
class ManyBodyState:
    """Нормированный вектор состояния на решётке"""
    amplitudes: np.ndarray
    lattice: LatticeSpec
    local_dims: Tuple[int, ...]
    label: str = ''

    def __post_init__(self):
        amplitudes = np.asarray(self.amplitudes, dtype=complex).ravel()
        expected = int(np.prod(self.local_dims))
        if amplitudes.size != expected:
            raise DimensionError(
                f'Состояние {self.label!r}: длина {amplitudes.size}, ожидалось {expected}'
            )
        norm = np.linalg.norm(amplitudes)
        if abs(norm - 1.0) > settings.LAB['NORM_TOL']:
            raise NormalizationError(f'Состояние {self.label!r} не нормировано: ‖ψ‖={norm:.15f}')
        object.__setattr__(self, 'amplitudes', amplitudes)

    @classmethod
    def from_amplitudes(cls, amplitudes, lattice: LatticeSpec, local_dims: Sequence[int],
                        label: str = '', normalize: bool = True) -> 'ManyBodyState':
        amplitudes = np.asarray(amplitudes, dtype=complex).ravel()
        if normalize:
            norm = np.linalg.norm(amplitudes)
            if norm == 0:
                raise NormalizationError(f'Состояние {label!r} нулевое')
            amplitudes = amplitudes / norm
        return cls(amplitudes, lattice, tuple(int(q) for q in local_dims), label)

    @classmethod
    def basis_state(cls, index: int, lattice: LatticeSpec, local_dims: Sequence[int],
                    label: str = '') -> 'ManyBodyState':
        amplitudes = np.zeros(int(np.prod(local_dims)), dtype=complex)
        amplitudes[index] = 1.0
        return cls(amplitudes, lattice, tuple(local_dims), label)

    @property
    def dimension(self) -> int:
        return self.amplitudes.size

    @property
    def local_dim(self) -> int:
        if len(set(self.local_dims)) != 1:
            raise DimensionError(f'Состояние {self.label!r} не имеет единой локальной размерности')
        return self.local_dims[0]

    def expectation(self, op: Operator) -> complex:
        return complex(np.vdot(self.amplitudes, op @ self.amplitudes))

    def overlap(self, other: 'ManyBodyState') -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def density_matrix(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())

    def with_amplitudes(self, amplitudes, label: Optional[str] = None) -> 'ManyBodyState':
        return ManyBodyState.from_amplitudes(
            amplitudes, self.lattice, self.local_dims, label if label is not None else self.label
        )


def translate_state(state: ManyBodyState, shift: Sequence[int]) -> ManyBodyState:
    """Циклический сдвиг узлов; норма сохраняется точно"""
    lattice = state.lattice
    q = state.local_dim
    tensor = state.amplitudes.reshape((q,) * lattice.volume)
    moved = np.transpose(tensor, lattice.site_permutation(shift)).ravel()
    return ManyBodyState(moved, lattice, state.local_dims, state.label)


def translation_operator(lattice: LatticeSpec, q: int, shift: Sequence[int]) -> sparse.csr_matrix:
    """Матрица перестановки T: T @ ψ совпадает с translate_state"""
    dim = q ** lattice.volume
    source = np.arange(dim).reshape((q,) * lattice.volume)
    mapping = np.transpose(source, lattice.site_permutation(shift)).ravel()
    data = np.ones(dim, dtype=complex)
    return sparse.csr_matrix((data, (np.arange(dim), mapping)), shape=(dim, dim))


def ggm_basis(q: int) -> np.ndarray:
    """
    Бесследовый ортонормированный базис Гелл-Манна (нормировка Гильберта-Шмидта),
    массив формы (q²-1, q, q)
    """
    elements = []
    inv_sqrt2 = 1 / np.sqrt(2)
    for j in range(q):
        for k in range(j + 1, q):
            sym = np.zeros((q, q), dtype=complex)
            sym[j, k] = sym[k, j] = inv_sqrt2
            elements.append(sym)
    for j in range(q):
        for k in range(j + 1, q):
            anti = np.zeros((q, q), dtype=complex)
            anti[j, k] = -1j * inv_sqrt2
            anti[k, j] = 1j * inv_sqrt2
            elements.append(anti)
    for l in range(1, q):
        diag = np.zeros((q, q), dtype=complex)
        diag[range(l), range(l)] = 1.0
        diag[l, l] = -l
        elements.append(diag / np.sqrt(l * (l + 1)))
    return np.array(elements).reshape(-1, q, q)


def is_hermitian(op: Operator, tol: float) -> bool:
    diff = op - op.conj().T
    if sparse.issparse(diff):
        return diff.count_nonzero() == 0 or abs(diff).max() <= tol
    return np.max(np.abs(diff), initial=0.0) <= tol
