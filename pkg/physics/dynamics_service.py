"""
Сервис динамики: унитарная эволюция, картина Гейзенберга
и интегрирование марковского основного уравнения методом Рунге-Кутты 4-го порядка
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, sparse
from scipy.sparse import linalg as sparse_linalg
from django.conf import settings

from .environment_service import EnvCorrelation, InteractionSpec
from .exceptions import ConvergenceError, DimensionError, HermiticityError, PositivityError
from .lattice_service import LatticeSpec, ManyBodyState, Operator, is_hermitian

logger = logging.getLogger(__name__)

ROUNDOFF_DIFFERENCE = 1e-13


def _dense(op: Operator) -> np.ndarray:
    return op.toarray() if sparse.issparse(op) else np.asarray(op)


def _is_diagonal(op: Operator) -> bool:
    if sparse.issparse(op):
        coo = op.tocoo()
        return bool(np.all(coo.row == coo.col) or np.all(coo.data[coo.row != coo.col] == 0))
    return np.count_nonzero(op - np.diag(np.diag(op))) == 0


def _right_multiply(rho: np.ndarray, op: Operator) -> np.ndarray:
    """ρ·op через разреженное умножение слева"""
    return (op.conj().T @ rho.conj().T).conj().T


def operator_norm_bound(op: Operator) -> float:
    """Оценка сверху ‖A‖₂ ≤ sqrt(‖A‖₁‖A‖∞)"""
    if sparse.issparse(op):
        return float(np.sqrt(sparse_linalg.norm(op, 1) * sparse_linalg.norm(op, np.inf)))
    return float(np.sqrt(np.linalg.norm(op, 1) * np.linalg.norm(op, np.inf)))


def check_hermitian(h: Operator, tag: str = 'H'):
    if not is_hermitian(h, settings.LAB['HERMITIAN_TOL']):
        raise HermiticityError(f'Гамильтониан {tag} не эрмитов')


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """H = V E V†; для диагонального H собственный базис вычислительный (V = None)"""
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray]
    tag: str = 'H'

    @property
    def dimension(self) -> int:
        return self.eigenvalues.size

    def unitary(self) -> np.ndarray:
        if self.eigenvectors is None:
            return np.eye(self.dimension, dtype=complex)
        return self.eigenvectors

    def phases(self, t: float) -> np.ndarray:
        return np.exp(-1j * self.eigenvalues * t / settings.LAB['HBAR'])

    def propagate(self, psi: np.ndarray, t: float) -> np.ndarray:
        if self.eigenvectors is None:
            return self.phases(t) * psi
        v = self.eigenvectors
        return v @ (self.phases(t) * (v.conj().T @ psi))

    def reconstruct(self) -> np.ndarray:
        v = self.unitary()
        return (v * self.eigenvalues) @ v.conj().T


def spectral_decompose(h: Operator, tag: str = 'H') -> SpectralDecomposition:
    check_hermitian(h, tag)
    if _is_diagonal(h):
        diagonal = h.diagonal() if sparse.issparse(h) else np.diag(h)
        return SpectralDecomposition(np.real(np.asarray(diagonal)), None, tag)
    dim = h.shape[0]
    if dim > settings.LAB['DENSE_DIM_LIMIT']:
        raise DimensionError(
            f'Плотная диагонализация {tag} размерности {dim} превышает предел {settings.LAB["DENSE_DIM_LIMIT"]}'
        )
    eigenvalues, eigenvectors = linalg.eigh(_dense(h))
    return SpectralDecomposition(eigenvalues, eigenvectors, tag)


def evolve_state(state: ManyBodyState, h: Operator, t: float,
                 spectrum: Optional[SpectralDecomposition] = None) -> ManyBodyState:
    """e^{-iHt}ψ: спектрально для малых размерностей, Крылов (expm_multiply) для больших"""
    if t == 0:
        return state
    if spectrum is None:
        check_hermitian(h)
        if _is_diagonal(h) or h.shape[0] <= settings.LAB['DENSE_DIM_LIMIT']:
            spectrum = spectral_decompose(h)
    if spectrum is not None:
        evolved = spectrum.propagate(state.amplitudes, t)
    else:
        evolved = sparse_linalg.expm_multiply(-1j * t / settings.LAB['HBAR'] * sparse.csr_matrix(h),
                                              state.amplitudes)
    return ManyBodyState.from_amplitudes(evolved, state.lattice, state.local_dims, state.label)


def heisenberg_picture(op: Operator, h: Operator, s: float,
                       spectrum: Optional[SpectralDecomposition] = None) -> np.ndarray:
    """e^{iHs} O e^{-iHs}"""
    spectrum = spectrum if spectrum is not None else spectral_decompose(h)
    phases = spectrum.phases(s)
    if spectrum.eigenvectors is None:
        dense = _dense(op)
        return np.conj(phases)[:, None] * dense * phases[None, :]
    v = spectrum.eigenvectors
    rotated = v.conj().T @ _dense(op) @ v
    rotated = np.conj(phases)[:, None] * rotated * phases[None, :]
    return v @ rotated @ v.conj().T


def energy_spread(state: ManyBodyState, h: Operator) -> float:
    h_psi = h @ state.amplitudes
    mean = np.vdot(state.amplitudes, h_psi).real
    return float(np.sqrt(max(np.vdot(h_psi, h_psi).real - mean ** 2, 0.0)))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Приведённая матрица плотности системы в момент t"""
    matrix: np.ndarray
    lattice: LatticeSpec
    time: float = 0.0

    @classmethod
    def from_state(cls, state: ManyBodyState, time: float = 0.0) -> 'DensityMatrix':
        return cls(state.density_matrix(), state.lattice, time)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def purity(self) -> float:
        # tr ρ² = Σ|ρ_ij|² для эрмитовой ρ
        return float(np.vdot(self.matrix, self.matrix).real)

    def linear_entropy(self) -> float:
        return 1.0 - self.purity()

    def min_eigenvalue(self) -> float:
        return float(linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T)).min())

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0))

    def expectation(self, op: Operator) -> complex:
        return complex(np.trace(_dense(op @ self.matrix)))


@dataclass(frozen=True, eq=False)
class CouplingChannel:
    """Канал диссипации: λ²/ħ², скорости μ_j и операторы скачков L_j = Σ_k v_j[k]* a_k"""
    label: str
    prefactor: float
    rates: np.ndarray
    jumps: Tuple[sparse.csr_matrix, ...]
    jump_products: Tuple[sparse.csr_matrix, ...] = field(default=())

    def __post_init__(self):
        if not self.jump_products:
            object.__setattr__(self, 'jump_products',
                               tuple((jump.conj().T @ jump).tocsr() for jump in self.jumps))

    def correlation_integrand(self, state: ManyBodyState) -> float:
        """Σ_{k1k2} g⟨δa†δa⟩ = Σ_j μ_j ⟨δL_j†δL_j⟩ (без множителя λ²/ħ²)"""
        psi = state.amplitudes
        total = 0.0
        for mu, jump in zip(self.rates, self.jumps):
            l_psi = jump @ psi
            mean = np.vdot(psi, l_psi)
            residual = l_psi - mean * psi
            total += mu * np.vdot(residual, residual).real
        return float(total)

    def dissipator(self, rho: np.ndarray) -> np.ndarray:
        out = np.zeros_like(rho)
        for mu, jump, product in zip(self.rates, self.jumps, self.jump_products):
            left = jump @ rho
            out += mu * (2.0 * _right_multiply(left, jump.conj().T)
                         - product @ rho - _right_multiply(rho, product))
        return self.prefactor * out

    def rate_scale(self) -> float:
        if not self.jumps:
            return 0.0
        return self.prefactor * float(sum(mu * operator_norm_bound(jump) ** 2
                                          for mu, jump in zip(self.rates, self.jumps)))


def build_channels(model, terms: Sequence[Tuple[InteractionSpec, EnvCorrelation]]) -> List[CouplingChannel]:
    """
    Связывание членов взаимодействия с их матрицами g через g = Σ μ_j v_j v_j†
    """
    channels = []
    for spec, corr in terms:
        components = model.momentum_components(spec.operator)
        if len(components) != corr.matrix.shape[0]:
            raise DimensionError(f'Канал {spec.label}: число импульсов не совпадает с размером g')
        mu, vectors = corr.eigen_channels()
        jumps = []
        for j in range(mu.size):
            coefficients = np.conj(vectors[:, j])
            jump = sparse.csr_matrix(components[0].shape, dtype=complex)
            for coefficient, a_k in zip(coefficients, components):
                if abs(coefficient) > 1e-15:
                    jump = jump + coefficient * a_k
            jumps.append(jump.tocsr())
        channels.append(CouplingChannel(spec.label, spec.prefactor, mu, tuple(jumps)))
        logger.debug('Канал %s: %s операторов скачков, λ²=%.3g', spec.label, len(jumps), spec.prefactor)
    return channels


def lindblad_rhs(rho: np.ndarray, h: Operator, channels: Sequence[CouplingChannel]) -> np.ndarray:
    """ρ̇ = -i[H,ρ]/ħ + Σ λ²/ħ² μ_j (2L ρ L† - {L†L, ρ})"""
    out = -1j / settings.LAB['HBAR'] * (h @ rho - _right_multiply(rho, h))
    for channel in channels:
        out = out + channel.dissipator(rho)
    return out


def stable_step(h: Operator, channels: Sequence[CouplingChannel]) -> float:
    """Эвристика устойчивости: 0.1·min(1/‖H‖, ħ²/(λ²‖g‖‖a‖²))"""
    scales = [operator_norm_bound(h) / settings.LAB['HBAR']] + [c.rate_scale() for c in channels]
    scale = max(scales)
    return float('inf') if scale == 0 else 0.1 / scale


def lindblad_step(rho: DensityMatrix, h: Operator, channels: Sequence[CouplingChannel], dt: float,
                  check_positivity: bool = True) -> Tuple[DensityMatrix, float]:
    """
    Один шаг RK4. Возвращает новую матрицу плотности и дрейф следа до перенормировки
    """
    m = rho.matrix
    k1 = lindblad_rhs(m, h, channels)
    k2 = lindblad_rhs(m + 0.5 * dt * k1, h, channels)
    k3 = lindblad_rhs(m + 0.5 * dt * k2, h, channels)
    k4 = lindblad_rhs(m + dt * k3, h, channels)
    updated = m + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    updated = 0.5 * (updated + updated.conj().T)

    drift = float(np.trace(updated).real - 1.0)
    if abs(drift) > settings.LAB['TRACE_RENORM_TOL']:
        logger.info('Дрейф следа %.3e при t=%.6g: перенормировка', drift, rho.time + dt)
        updated = updated / np.trace(updated).real

    result = DensityMatrix(updated, rho.lattice, rho.time + dt)
    if check_positivity:
        min_eig = result.min_eigenvalue()
        if min_eig < -settings.LAB['POSITIVITY_TOL']:
            raise PositivityError(
                f'Нарушение положительности ρ при t={result.time:.6g}: λ_min={min_eig:.3e}; '
                f'уменьшите шаг (текущий dt={dt:.3g}, рекомендуемый ≤ {stable_step(h, channels):.3g})'
            )
    return result, drift


@dataclass
class Trajectory:
    """Траектория ρ(t) на равномерной сетке"""
    times: List[float]
    states: List[DensityMatrix]
    max_trace_drift: float = 0.0
    renormalizations: int = 0

    @property
    def final(self) -> DensityMatrix:
        return self.states[-1]

    def to_dataframe(self, order_parameter: Optional[Operator] = None) -> pd.DataFrame:
        rows = []
        for t, rho in zip(self.times, self.states):
            row = {
                't': t,
                'S_lin': rho.linear_entropy(),
                'trace': rho.trace,
                'min_eig': rho.min_eigenvalue(),
            }
            if order_parameter is not None:
                mean = rho.expectation(order_parameter)
                second = rho.expectation(order_parameter.conj().T @ order_parameter)
                row['M'] = mean.real
                row['dM_dM'] = (second - abs(mean) ** 2).real
            rows.append(row)
        return pd.DataFrame(rows)


def propagate(rho0: DensityMatrix, h: Operator, channels: Sequence[CouplingChannel],
              t_final: float, n_steps: int, sample_every: int = 1) -> Trajectory:
    """Траектория с фиксированным шагом t_final/n_steps и проверками инвариантов"""
    if t_final == 0:
        return Trajectory([rho0.time], [rho0])
    if n_steps < 10:
        raise ConvergenceError(f'Слишком мало шагов интегрирования: {n_steps} < 10')
    check_hermitian(h)
    dt = t_final / n_steps
    limit = stable_step(h, channels)
    if dt > limit:
        logger.warning('Шаг dt=%.3g превышает эвристику устойчивости %.3g', dt, limit)

    trajectory = Trajectory([rho0.time], [rho0])
    rho = rho0
    for step in range(1, n_steps + 1):
        sampled = step % sample_every == 0 or step == n_steps
        rho, drift = lindblad_step(rho, h, channels, dt, check_positivity=sampled)
        trajectory.max_trace_drift = max(trajectory.max_trace_drift, abs(drift))
        if abs(drift) > settings.LAB['TRACE_RENORM_TOL']:
            trajectory.renormalizations += 1
        if sampled:
            trajectory.times.append(rho.time)
            trajectory.states.append(rho)
    return trajectory


@dataclass(frozen=True)
class ConvergenceStudy:
    n_steps: Tuple[int, int, int]
    entropies: Tuple[float, float, float]
    relative_change: float
    richardson_ratio: Optional[float]

    @property
    def differences(self) -> Tuple[float, float]:
        """S(n) - S(2n) и S(2n) - S(4n)"""
        return self.entropies[0] - self.entropies[1], self.entropies[1] - self.entropies[2]

    def passed(self, rel_tol: float = 1e-6) -> bool:
        return self.relative_change < rel_tol

    def fourth_order(self) -> bool:
        """Отношение Ричардсона 16 ± 50% или обе разности на уровне ошибок округления"""
        if self.richardson_ratio is None:
            return all(abs(difference) < ROUNDOFF_DIFFERENCE for difference in self.differences)
        return 8.0 <= self.richardson_ratio <= 24.0


def richardson_ratio(rho0: DensityMatrix, h: Operator, channels: Sequence[CouplingChannel],
                     t_final: float, n_steps: int) -> ConvergenceStudy:
    """
    Сравнение n, 2n и 4n шагов: (S(n) - S(2n)) / (S(2n) - S(4n))
    """
    counts = (n_steps, 2 * n_steps, 4 * n_steps)
    entropies = tuple(
        propagate(rho0, h, channels, t_final, count, sample_every=count).final.linear_entropy()
        for count in counts
    )
    coarse = entropies[0] - entropies[1]
    fine = entropies[1] - entropies[2]
    scale = max(abs(entropies[2]), 1e-300)
    relative_change = abs(coarse) / scale if entropies[2] != 0 else abs(coarse)
    ratio = None if abs(fine) < ROUNDOFF_DIFFERENCE else coarse / fine
    return ConvergenceStudy(counts, entropies, relative_change, ratio)


def convention_ratio(state: ManyBodyState, h: Operator, channels: Sequence[CouplingChannel]) -> float:
    """
    Начальная скорость потери чистоты по основному уравнению,
    делённая на подынтегральное выражение первого порядка при t=0
    """
    rho = state.density_matrix()
    purity_rate = 2.0 * np.vdot(rho, lindblad_rhs(rho, h, channels)).real
    integrand = sum(channel.prefactor * channel.correlation_integrand(state) for channel in channels)
    if integrand == 0:
        return float('nan')
    return float(-purity_rate / integrand)


def invariant_report(trajectory: Trajectory) -> Dict[str, float]:
    return {
        'max_trace_drift': trajectory.max_trace_drift,
        'min_eigenvalue': min(rho.min_eigenvalue() for rho in trajectory.states),
        'max_hermiticity_defect': max(rho.hermiticity_defect() for rho in trajectory.states),
        'renormalizations': trajectory.renormalizations,
    }


@dataclass(eq=False)
class OpenSystem:
    """Модель вместе с членами взаимодействия и связанными каналами диссипации"""
    model: object
    terms: Tuple[Tuple[InteractionSpec, EnvCorrelation], ...]
    channels: Tuple[CouplingChannel, ...]

    @classmethod
    def build(cls, model, terms: Sequence[Tuple[InteractionSpec, EnvCorrelation]]) -> 'OpenSystem':
        terms = tuple(terms)
        return cls(model, terms, tuple(build_channels(model, terms)))

    @property
    def hamiltonian(self) -> sparse.csr_matrix:
        return self.model.hamiltonian

    @cached_property
    def spectrum(self) -> Optional[SpectralDecomposition]:
        h = self.hamiltonian
        if _is_diagonal(h) or h.shape[0] <= settings.LAB['DENSE_DIM_LIMIT']:
            return spectral_decompose(h, self.model.kind)
        return None

    def evolve(self, state: ManyBodyState, t: float) -> ManyBodyState:
        return evolve_state(state, self.hamiltonian, t, self.spectrum)

    def intensive_components(self) -> List[Tuple[InteractionSpec, EnvCorrelation, sparse.csr_matrix]]:
        """(член, g, A = a_{k=0}) для каждого канала"""
        return [(spec, corr, self.model.momentum_components(spec.operator)[0]) for spec, corr in self.terms]
