"""
Сервис окружения: пространственные ядра корреляций, матрица g_{k1k2},
контактная область и оценки скейлинга g₀₀
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from django.conf import settings

from .exceptions import DimensionError, KernelError, PositivityError
from .fit_service import PowerLawFit, ScalingFitService
from .lattice_service import LatticeSpec, LocalOperatorField

logger = logging.getLogger(__name__)


class SpatialKernel:
    """Базовое пространственное ядро f(r) на периодической решётке"""
    kind = 'base'

    def table(self, lattice: LatticeSpec) -> np.ndarray:
        """Значения f на сетке смещений, форма (L,)*d"""
        raise NotImplementedError

    def correlation_length(self, lattice: LatticeSpec) -> float:
        raise NotImplementedError

    def fourier_spectrum(self, lattice: LatticeSpec) -> np.ndarray:
        return np.real(np.fft.fftn(self.table(lattice)))

    def check_positive(self, lattice: LatticeSpec):
        spectrum = self.fourier_spectrum(lattice)
        scale = max(float(np.max(np.abs(spectrum))), 1e-300)
        if spectrum.min() < -settings.LAB['G_POSITIVITY_TOL'] * scale:
            raise KernelError(
                f'Ядро {self.kind} нефизично: отрицательная фурье-компонента {spectrum.min():.3e} '
                f'нарушает положительность g'
            )

    def describe(self) -> dict:
        return {'kind': self.kind}


class ConstantKernel(SpatialKernel):
    """f ≡ 1: бесконечный радиус корреляций"""
    kind = 'constant'

    def table(self, lattice):
        return np.ones((lattice.size,) * lattice.dimension)

    def correlation_length(self, lattice):
        return float('inf')


class DeltaKernel(SpatialKernel):
    kind = 'delta'

    def table(self, lattice):
        values = np.zeros((lattice.size,) * lattice.dimension)
        values[(0,) * lattice.dimension] = 1.0
        return values

    def correlation_length(self, lattice):
        return 1.0


class ExponentialKernel(SpatialKernel):
    """
    Периодизованная экспонента по каждой оси:
    w(r) = [e^{-r/ξ} + e^{-(L-r)/ξ}] / (1 + e^{-L/ξ}), f = Π_μ w(r_μ), f(0) = 1
    """
    kind = 'exponential'

    def __init__(self, xi: float):
        if not np.isfinite(xi) or xi <= 0:
            raise KernelError(f'Радиус экспоненциального ядра должен быть положительным: ξ={xi}')
        self.xi = float(xi)

    def axis_profile(self, size: int) -> np.ndarray:
        r = np.arange(size, dtype=float)
        return (np.exp(-r / self.xi) + np.exp(-(size - r) / self.xi)) / (1.0 + np.exp(-size / self.xi))

    def table(self, lattice):
        profile = self.axis_profile(lattice.size)
        values = np.ones((lattice.size,) * lattice.dimension)
        for axis in range(lattice.dimension):
            shape = [1] * lattice.dimension
            shape[axis] = lattice.size
            values = values * profile.reshape(shape)
        return values

    def correlation_length(self, lattice):
        return self.xi

    def describe(self):
        return {'kind': self.kind, 'xi': self.xi}


class TabulatedKernel(SpatialKernel):
    """Ядро, заданное таблицей на сетке смещений (построчный порядок)"""
    kind = 'tabulated'

    def __init__(self, values: Sequence[float]):
        values = np.asarray(values)
        if np.iscomplexobj(values):
            if np.max(np.abs(values.imag)) > 1e-12:
                raise KernelError('Табличное ядро должно быть вещественным')
            values = values.real
        self.values = values.astype(float).ravel()

    def table(self, lattice):
        if self.values.size != lattice.volume:
            raise KernelError(
                f'Табличное ядро из {self.values.size} значений не подходит к решётке из {lattice.volume} узлов'
            )
        values = self.values.reshape((lattice.size,) * lattice.dimension)
        mirrored = np.roll(np.flip(values), shift=1, axis=tuple(range(lattice.dimension)))
        if np.max(np.abs(values - mirrored)) > 1e-12:
            raise KernelError('Табличное ядро должно быть чётным: f(r) = f(-r)')
        return values

    def correlation_length(self, lattice):
        values = self.table(lattice)
        origin = values[(0,) * lattice.dimension]
        if origin <= 0:
            raise KernelError('Табличное ядро должно иметь f(0) > 0')
        volume = max(float(values.sum()) / origin, 0.0)
        return volume ** (1.0 / lattice.dimension)

    def describe(self):
        return {'kind': self.kind, 'values': self.values.tolist()}


def random_positive_kernel(rng: np.random.Generator, lattice: LatticeSpec) -> TabulatedKernel:
    """Табличное ядро со случайным неотрицательным чётным спектром"""
    spectrum = rng.uniform(0.0, 1.0, size=(lattice.size,) * lattice.dimension)
    spectrum = 0.5 * (spectrum + np.roll(np.flip(spectrum), 1, axis=tuple(range(lattice.dimension))))
    return TabulatedKernel(np.real(np.fft.ifftn(spectrum)).ravel())


def build_kernel(kind: str, xi: Optional[float] = None, values: Optional[Sequence[float]] = None) -> SpatialKernel:
    if kind == ConstantKernel.kind:
        return ConstantKernel()
    if kind == DeltaKernel.kind:
        return DeltaKernel()
    if kind == ExponentialKernel.kind:
        return ExponentialKernel(xi)
    if kind == TabulatedKernel.kind:
        return TabulatedKernel(values if values is not None else [])
    raise KernelError(f'Неизвестный тип ядра: {kind}')


def contact_from_spec(lattice: LatticeSpec, kind: str = 'all', size: Optional[int] = None,
                      sites: Optional[Sequence[int]] = None) -> Tuple[int, ...]:
    """Контактная область Λ_C: вся решётка, блок первых узлов или явный список"""
    if kind == 'all':
        return tuple(range(lattice.volume))
    if kind == 'block':
        return lattice.contact_block(size if size is not None else lattice.volume)
    if kind == 'sites':
        chosen = tuple(sorted(set(int(x) for x in sites or ())))
        if not chosen:
            raise DimensionError('Контактная область пуста')
        outside = [x for x in chosen if not 0 <= x < lattice.volume]
        if outside:
            raise DimensionError(f'Узлы контактной области {outside} вне решётки')
        return chosen
    raise DimensionError(f'Неизвестный способ задания контактной области: {kind}')


def _contact_kernel_matrix(kernel: SpatialKernel, contact: Sequence[int], lattice: LatticeSpec) -> np.ndarray:
    """F_{xy} = f(x - y) для x, y ∈ Λ_C"""
    table = kernel.table(lattice)
    coords = np.asarray([lattice.coords(x) for x in contact], dtype=int)
    diff = (coords[:, None, :] - coords[None, :, :]) % lattice.size
    return table[tuple(diff[..., axis] for axis in range(lattice.dimension))]


@dataclass(frozen=True, eq=False)
class EnvCorrelation:
    """Положительная матрица корреляций окружения g_{k1k2} на импульсной сетке"""
    kernel: SpatialKernel
    g_bar: float
    contact: Tuple[int, ...]
    lattice: LatticeSpec
    matrix: np.ndarray
    g00: float
    min_eigenvalue: float
    max_eigenvalue: float
    tau_c: Optional[float] = None
    label: str = 'a'

    @property
    def contact_size(self) -> int:
        return len(self.contact)

    @property
    def norm(self) -> float:
        return max(abs(self.min_eigenvalue), abs(self.max_eigenvalue))

    @property
    def is_positive(self) -> bool:
        return self.min_eigenvalue >= -settings.LAB['G_POSITIVITY_TOL'] * max(self.norm, 1e-300)

    def diagonal(self) -> np.ndarray:
        return np.real(np.diag(self.matrix))

    def eigen_channels(self, tol: float = 1e-14) -> Tuple[np.ndarray, np.ndarray]:
        """
        Спектральное разложение g = Σ μ_j v_j v_j†; малые μ отбрасываются.
        Возвращает (μ, V) с собственными векторами в столбцах V
        """
        if not self.is_positive:
            raise PositivityError(
                f'Матрица g[{self.label}] не положительна: λ_min={self.min_eigenvalue:.3e}'
            )
        mu, vectors = np.linalg.eigh(self.matrix)
        if mu.size == 0 or mu.max() <= 0:
            return np.zeros(0), np.zeros((self.matrix.shape[0], 0), dtype=complex)
        keep = mu > tol * mu.max()
        return mu[keep], vectors[:, keep]

    def export_csv(self, path: Union[str, Path]) -> Path:
        """Длинный формат: k1, k2 (номера импульсов), real, imag"""
        size = self.matrix.shape[0]
        rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing='ij')
        df = pd.DataFrame({
            'k1': rows.ravel(),
            'k2': cols.ravel(),
            'real': self.matrix.real.ravel(),
            'imag': self.matrix.imag.ravel(),
        })
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False, float_format='%.17g')
        return path

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, lattice: LatticeSpec, label: str = 'a',
                    g_bar: float = 1.0, contact: Optional[Tuple[int, ...]] = None) -> 'EnvCorrelation':
        """Матрица g, заданная явно (без ядра); положительность проверяется при связывании каналов"""
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (lattice.volume, lattice.volume):
            raise DimensionError(f'Матрица g размера {matrix.shape} не совпадает с сеткой из {lattice.volume} импульсов')
        matrix = 0.5 * (matrix + matrix.conj().T)
        eigenvalues = np.linalg.eigvalsh(matrix)
        return cls(
            kernel=SpatialKernel(), g_bar=g_bar,
            contact=contact if contact is not None else tuple(range(lattice.volume)),
            lattice=lattice, matrix=matrix, g00=float(matrix[0, 0].real),
            min_eigenvalue=float(eigenvalues.min()), max_eigenvalue=float(eigenvalues.max()),
            label=label,
        )


@dataclass(frozen=True, eq=False)
class InteractionSpec:
    """Член взаимодействия λ Σ_{x∈Λ_C} a(x)⊗b(x)"""
    coupling: float
    contact: Tuple[int, ...]
    operator: Union[LocalOperatorField, str]
    label: str = 'a'

    def __post_init__(self):
        if not np.isfinite(self.coupling) or self.coupling < 0:
            raise DimensionError(f'Константа связи должна быть неотрицательной: λ={self.coupling}')
        if not self.contact:
            raise DimensionError('Контактная область пуста')

    @property
    def prefactor(self) -> float:
        """λ²/ħ²"""
        return self.coupling ** 2 / settings.LAB['HBAR'] ** 2


def build_g_matrix(kernel: SpatialKernel, g_bar: float, contact: Sequence[int], lattice: LatticeSpec,
                   label: str = 'a', tau_c: Optional[float] = None) -> EnvCorrelation:
    """
    g_{k1k2} = ḡ Σ_{x,y∈Λ_C} f(x-y) e^{ik₁x} e^{-ik₂y}
    """
    if g_bar < 0:
        raise KernelError(f'Временной вес должен быть неотрицательным: ḡ={g_bar}')
    contact = tuple(contact)
    if not contact:
        raise DimensionError('Контактная область пуста')
    kernel.check_positive(lattice)

    f_contact = _contact_kernel_matrix(kernel, contact, lattice)
    positions = np.asarray([lattice.coords(x) for x in contact], dtype=float)
    momenta = np.asarray([lattice.momentum_vector(n) for n in lattice.momenta()])
    u = np.exp(1j * momenta @ positions.T)
    matrix = g_bar * (u @ f_contact @ u.conj().T)
    matrix = 0.5 * (matrix + matrix.conj().T)

    eigenvalues = np.linalg.eigvalsh(matrix)
    corr = EnvCorrelation(
        kernel=kernel, g_bar=float(g_bar), contact=contact, lattice=lattice, matrix=matrix,
        g00=float(g_bar * f_contact.sum()),
        min_eigenvalue=float(eigenvalues.min()), max_eigenvalue=float(eigenvalues.max()),
        tau_c=tau_c, label=label,
    )
    if not corr.is_positive:
        raise PositivityError(f'Матрица g[{label}] не положительна: λ_min={corr.min_eigenvalue:.3e}')
    logger.debug('g[%s]: ядро %s, |Λ_C|=%s, g00=%.6g, λ_min=%.3e',
                 label, kernel.kind, len(contact), corr.g00, corr.min_eigenvalue)
    return corr


def restrict_contact(corr: EnvCorrelation, contact: Sequence[int]) -> EnvCorrelation:
    """Пересборка g с суммами по новой контактной области"""
    contact = tuple(contact)
    if not contact:
        raise DimensionError('Контактная область пуста')
    if contact == corr.contact:
        return corr
    return build_g_matrix(corr.kernel, corr.g_bar, contact, corr.lattice, corr.label, corr.tau_c)


def direct_g00(kernel: SpatialKernel, g_bar: float, contact: Sequence[int], lattice: LatticeSpec) -> float:
    """g₀₀ = ḡ Σ_{x,y∈Λ_C} f(x-y) без построения полной матрицы"""
    return float(g_bar * _contact_kernel_matrix(kernel, tuple(contact), lattice).sum())


@dataclass(frozen=True)
class RegimeReport:
    regime: str
    xi_E: float
    correlation_volume: float
    contact_size: int
    predicted_g00: float
    exact_g00: float
    ratio: float
    long_range_estimate: float
    short_range_estimate: float


def scaling_regime(corr: EnvCorrelation) -> RegimeReport:
    """
    Сравнение |Λ_E^corr| = ξ_E^d с |Λ_C|: оценка ḡ|Λ_C|² (дальний режим)
    или ḡ|Λ_C|·|Λ_E^corr| (ближний)
    """
    lattice = corr.lattice
    xi = corr.kernel.correlation_length(lattice)
    volume = xi ** lattice.dimension if np.isfinite(xi) else float('inf')
    size = corr.contact_size
    long_estimate = corr.g_bar * size ** 2
    short_estimate = corr.g_bar * size * min(volume, size)
    regime = 'long_range' if volume >= size else 'short_range'
    predicted = long_estimate if regime == 'long_range' else short_estimate
    ratio = corr.g00 / predicted if predicted > 0 else float('nan')
    return RegimeReport(regime, xi, volume, size, predicted, corr.g00, ratio, long_estimate, short_estimate)


def scaling_sweep(kernel: SpatialKernel, g_bar: float, lattice: LatticeSpec,
                  sizes: Sequence[int]) -> Tuple[pd.DataFrame, Optional[PowerLawFit]]:
    """g₀₀ для блоков Λ_C растущего размера и показатель log-log аппроксимации"""
    kernel.check_positive(lattice)
    rows = []
    for size in sizes:
        contact = lattice.contact_block(size)
        rows.append({
            'contact_size': size,
            'xi_E': kernel.correlation_length(lattice),
            'g00': direct_g00(kernel, g_bar, contact, lattice),
        })
    df = pd.DataFrame(rows, columns=['contact_size', 'xi_E', 'g00'])
    fit = ScalingFitService.power_law(df['contact_size'], df['g00']) if len(df) >= 3 else None
    return df, fit


def markovianity_check(energy_spread: Optional[float], tau_c: Optional[float]) -> bool:
    """Условие марковости: разброс энергий системы меньше ħ/τ_c (только предупреждение)"""
    if energy_spread is None or tau_c is None or tau_c <= 0:
        return True
    limit = settings.LAB['HBAR'] / tau_c
    if energy_spread > limit:
        logger.warning('Разброс энергий %.4g превышает ħ/τ_c = %.4g: марковское приближение под вопросом',
                       energy_spread, limit)
        return False
    return True
