"""
Сервис анализа хрупкости вакуумов
Линейная энтропия, энтропия первого порядка по λ², сертификаты нижних оценок
скорости декогеренции, области ε-корреляции и извлечение скоростей
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid, simpson
from django.conf import settings

from .dynamics_service import DensityMatrix, OpenSystem
from .exceptions import ConvergenceError, DimensionError, ParityError, PreconditionError
from .fit_service import OriginSlopeFit, ScalingFitService
from .lattice_service import LocalOperatorField, ManyBodyState, build_intensive, ggm_basis
from .model_service import VacuumPair, fluctuation

logger = logging.getLogger(__name__)

MIN_TIME_POINTS = 32
TRANSLATION_TOL = 1e-8
STATIONARITY_TOL = 1e-8
CERTIFICATE_TOL = 1e-9


@dataclass
class Certificate:
    """Результат проверки неравенства: левая и правая части, запас и предусловия"""
    name: str
    lhs: Optional[float]
    rhs: Optional[float]
    slack: Optional[float]
    preconditions_met: bool
    passed: Optional[bool]
    details: Dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        if not self.preconditions_met:
            return 'preconditions unmet'
        return 'pass' if self.passed else 'fail'


@dataclass
class CorrelationRegion:
    """Область ε-корреляции Ω_{T,Λ}(y, ε)"""
    reference: int
    horizon: float
    epsilon: float
    members: Tuple[int, ...]
    times: np.ndarray
    correlations: np.ndarray
    notes: List[str] = field(default_factory=list)
    refinement_stable: Optional[bool] = None

    @property
    def volume(self) -> int:
        return len(self.members)


@dataclass
class FluctuationBoundReport:
    times: np.ndarray
    intensive: np.ndarray
    bound: np.ndarray
    omega_fraction: float

    @property
    def slack(self) -> np.ndarray:
        return self.bound - self.intensive

    @property
    def passed(self) -> bool:
        return bool(np.all(self.slack >= -1e-10))


@dataclass
class EntropyReport:
    """Временные ряды S_lin и S_lin^(1) с оценкой скорости и нижней границей"""
    label: str
    times: np.ndarray
    first_order: np.ndarray
    prefactor: float
    bound_rate: Optional[float] = None
    linear_entropy: Optional[np.ndarray] = None
    gamma_hat: Optional[float] = None

    @property
    def slack(self) -> Optional[float]:
        if self.gamma_hat is None or self.bound_rate is None:
            return None
        return self.gamma_hat - self.bound_rate


@dataclass(frozen=True)
class RateEstimate:
    gamma: float
    window_end: float
    linear: bool
    fit: OriginSlopeFit
    windowed_slopes: Optional[np.ndarray] = None


def time_grid(horizon: float, n_time: int = MIN_TIME_POINTS) -> np.ndarray:
    if n_time < MIN_TIME_POINTS:
        raise PreconditionError(f'Временная сетка должна содержать не менее {MIN_TIME_POINTS} точек: {n_time}')
    if horizon == 0:
        return np.zeros(1)
    return np.linspace(0.0, horizon, n_time)


def linear_entropy(rho: Union[DensityMatrix, np.ndarray]) -> float:
    """S_lin = 1 - tr ρ²"""
    matrix = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    return float(1.0 - np.vdot(matrix, matrix).real)


def is_eigenstate(state: ManyBodyState, h, tol: float = 1e-10) -> bool:
    h_psi = h @ state.amplitudes
    energy = np.vdot(state.amplitudes, h_psi)
    return bool(np.linalg.norm(h_psi - energy * state.amplitudes) < tol)


def first_order_integrand(system: OpenSystem, state: ManyBodyState, s: float = 0.0) -> float:
    """(λ²/ħ²) Σ g_{k1k2}⟨δa†_{k1}δa_{k2}⟩ в момент s (среднее вычитается в тот же момент)"""
    evolved = system.evolve(state, s)
    return float(sum(channel.prefactor * channel.correlation_integrand(evolved) for channel in system.channels))


def _simpson(system: OpenSystem, state: ManyBodyState, t: float, n_quad: int) -> float:
    grid = np.linspace(0.0, t, n_quad + 1)
    values = [first_order_integrand(system, state, s) for s in grid]
    return float(simpson(values, x=grid))


def first_order_entropy(system: OpenSystem, state: ManyBodyState, t: float, n_quad: int = 16,
                        max_refinements: int = 4) -> float:
    """
    S^(1)(φ,t) составной формулой Симпсона; сходимость подтверждается удвоением n_quad
    """
    if n_quad < 8:
        raise ConvergenceError(f'Слишком мало узлов квадратуры: {n_quad} < 8')
    if t == 0:
        return 0.0
    if is_eigenstate(state, system.hamiltonian):
        return first_order_integrand(system, state) * t

    n_quad += n_quad % 2
    previous = _simpson(system, state, t, n_quad)
    for _ in range(max_refinements + 1):
        n_quad *= 2
        current = _simpson(system, state, t, n_quad)
        if abs(current - previous) <= settings.LAB['QUAD_REL_TOL'] * max(abs(current), 1e-300):
            return current
        previous = current
    raise ConvergenceError(
        f'Квадратура S^(1) не сошлась для {state.label!r}: последнее изменение '
        f'{abs(current - previous):.3e} при n_quad={n_quad}'
    )


def first_order_entropy_series(system: OpenSystem, state: ManyBodyState, times: Sequence[float]) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if is_eigenstate(state, system.hamiltonian):
        return first_order_integrand(system, state) * times
    values = np.array([first_order_integrand(system, state, s) for s in times])
    if times.size < 3:
        return cumulative_trapezoid(values, x=times, initial=0.0)
    return cumulative_simpson(values, x=times, initial=0.0)


def _translation_overlaps(system: OpenSystem, state: ManyBodyState) -> List[float]:
    lattice = system.model.lattice
    overlaps = []
    for axis in range(lattice.dimension):
        shift = [0] * lattice.dimension
        shift[axis] = 1
        moved = system.model.translate(state, shift)
        overlaps.append(abs(moved.overlap(state)))
    return overlaps


def rate_bound_certificate(system: OpenSystem, state: ManyBodyState, t: float,
                         n_quad: int = 16, n_time: int = MIN_TIME_POINTS) -> Certificate:
    """
    S^(1)(φ,t) ≥ (λ²/ħ²) g₀₀ ⟨δA†δA⟩ t для трансляционно-инвариантного φ
    со стационарной флуктуацией интенсивного оператора
    """
    overlaps = _translation_overlaps(system, state)
    invariant = min(overlaps) >= 1.0 - TRANSLATION_TOL

    grid = time_grid(t, n_time)
    evolved = [system.evolve(state, s) for s in grid]
    rhs = 0.0
    max_drift = 0.0
    fluctuations = []
    for spec, corr, a0 in system.intensive_components():
        series = np.array([fluctuation(phi, a0) for phi in evolved])
        max_drift = max(max_drift, float(np.max(np.abs(series - series[0])) / max(1.0, abs(series[0]))))
        fluctuations.append(float(series[0]))
        rhs += spec.prefactor * corr.g00 * series[0] * t
    stationary = max_drift <= STATIONARITY_TOL

    lhs = first_order_entropy(system, state, t, n_quad)
    slack = lhs - rhs
    preconditions = invariant and stationary
    passed = bool(slack >= -CERTIFICATE_TOL * max(1.0, abs(rhs))) if preconditions else None
    certificate = Certificate(
        name='rate_bound', lhs=lhs, rhs=float(rhs), slack=float(slack),
        preconditions_met=preconditions, passed=passed,
        details={
            'state': state.label,
            't': t,
            'translation_overlaps': overlaps,
            'stationarity_drift': max_drift,
            'intensive_fluctuations': fluctuations,
            'gamma_hat': lhs / t if t else 0.0,
            'bound_rate': rhs / t if t else 0.0,
            'n_time': len(grid),
        },
    )
    logger.debug('Нижняя оценка скорости для %s: LHS=%.6g RHS=%.6g статус=%s', state.label, lhs, rhs, certificate.status)
    return certificate


def _whitened_fluctuations(vectors: np.ndarray) -> Optional[np.ndarray]:
    """Ортонормированный базис линейной оболочки флуктуаций δB_α φ (псевдообратный корень Грама)"""
    gram = vectors.conj().T @ vectors
    weights, basis = np.linalg.eigh(gram)
    top = weights.max() if weights.size else 0.0
    if top <= 1e-14:
        return None
    keep = weights > 1e-10 * top
    return vectors @ (basis[:, keep] / np.sqrt(weights[keep]))


def _site_fluctuation_vectors(phi: np.ndarray, operators: Sequence) -> np.ndarray:
    columns = []
    for op in operators:
        image = op @ phi
        columns.append(image - np.vdot(phi, image) * phi)
    return np.column_stack(columns)


def _max_correlations(system: OpenSystem, state: ManyBodyState, y: int, times: np.ndarray,
                      notes: List[str]) -> np.ndarray:
    model = system.model
    if not hasattr(model, 'site_operator'):
        raise DimensionError(f'Модель {model.kind} не поддерживает одноузельный операторный базис')
    basis = ggm_basis(model.local_dim)
    n_sites = model.lattice.volume
    site_ops = [[model.site_operator(b, x) for b in basis] for x in range(n_sites)]

    best = np.zeros(n_sites)
    silent = set()
    for s in times:
        phi = system.evolve(state, s).amplitudes
        frames = [_whitened_fluctuations(_site_fluctuation_vectors(phi, site_ops[x])) for x in range(n_sites)]
        if frames[y] is None:
            silent.add(y)
            continue
        for x in range(n_sites):
            if frames[x] is None:
                silent.add(x)
                continue
            overlap = frames[x].conj().T @ frames[y]
            best[x] = max(best[x], float(np.linalg.norm(overlap, 2)))
    for x in sorted(silent):
        notes.append(f'узел {x}: все одноузельные флуктуации обращаются в нуль хотя бы в один момент')
    return best


def correlation_region(system: OpenSystem, state: ManyBodyState, y: int, epsilon: float, horizon: float,
                       n_time: int = MIN_TIME_POINTS, refine: bool = False) -> CorrelationRegion:
    """
    Ω = {x : sup_{a,b,s} |⟨δa†δb⟩| / (⟨δa†δa⟩⟨δb†δb⟩)^{1/2} ≥ ε}; супремум по алгебре одного узла
    равен наибольшему сингулярному числу G_x^{-1/2} C_{xy} G_y^{-1/2}
    """
    if not 0 < epsilon <= 1:
        raise PreconditionError(f'Порог ε должен лежать в (0, 1]: {epsilon}')
    times = time_grid(horizon, n_time)
    notes: List[str] = []
    best = _max_correlations(system, state, y, times, notes)
    members = tuple(x for x in range(len(best)) if x == y or best[x] >= epsilon - 1e-12)
    region = CorrelationRegion(y, horizon, epsilon, members, times, best, notes)

    if refine and horizon > 0:
        finer = time_grid(horizon, 2 * n_time - 1)
        refined = _max_correlations(system, state, y, finer, [])
        refined_members = tuple(x for x in range(len(refined)) if x == y or refined[x] >= epsilon - 1e-12)
        region.refinement_stable = refined_members == members
        if not region.refinement_stable:
            logger.warning('Состав области Ω меняется при удвоении сетки: %s -> %s', members, refined_members)
    return region


def intensive_fluctuation_bound(system: OpenSystem, state: ManyBodyState, operator: LocalOperatorField,
                                region: CorrelationRegion) -> FluctuationBoundReport:
    """⟨δA†δA⟩(t) ≤ (|Ω|/|Λ| + ε)⟨δa†(y)δa(y)⟩(t) на каждом узле сетки"""
    model = system.model
    lattice = model.lattice
    intensive_op = build_intensive(operator, lattice)
    local_op = model.site_operator(operator.matrix, region.reference)
    fraction = region.volume / lattice.volume

    intensive, bound = [], []
    for s in region.times:
        phi = system.evolve(state, s)
        intensive.append(fluctuation(phi, intensive_op))
        bound.append((fraction + region.epsilon) * fluctuation(phi, local_op))
    return FluctuationBoundReport(region.times, np.array(intensive), np.array(bound), fraction)


def difference_bound_certificate(system: OpenSystem, pair: VacuumPair, t: float, horizon: float, epsilon: float,
                         n_time: int = MIN_TIME_POINTS, n_quad: int = 16) -> Certificate:
    """
    S^(1)(Φ₀,t) - S^(1)(Ξ,t) ≥ (λ²/ħ²) g₀₀ t ⟨δM†δM⟩_Φ₀ с поправкой конечного размера ε̂_Λ
    """
    model = system.model
    for spec, _ in system.terms:
        if not model.is_order_field(spec.operator):
            raise PreconditionError(f'Канал {spec.label}: оператор связи должен совпадать с параметром порядка m')
    if not pair.has_parity:
        raise ParityError('Пара вакуумов не имеет разложения по чётности')

    order_parameter = model.order_parameter()
    s1_afv = first_order_entropy(system, pair.afv, t, n_quad)
    s1_ppv = first_order_entropy(system, pair.ppv, t, n_quad)
    lhs = s1_afv - s1_ppv
    fluct_afv = fluctuation(pair.afv, order_parameter)
    weight = sum(spec.prefactor * corr.g00 for spec, corr in system.terms)
    rhs = weight * t * fluct_afv

    def order_infimum(grid):
        return min(abs(system.evolve(pair.ppv, s).expectation(order_parameter)) for s in grid)

    grid = time_grid(horizon, n_time)
    nu = order_infimum(grid)
    nu_refined = order_infimum(time_grid(horizon, 2 * n_time - 1)) if horizon > 0 else nu
    region = correlation_region(system, pair.ppv, 0, epsilon, horizon, n_time)

    local_op = model.site_operator(model.order_field.matrix, 0)
    t_grid = time_grid(t, n_time)
    local = [fluctuation(system.evolve(pair.ppv, s), local_op) for s in t_grid]
    local_integral = float(simpson(local, x=t_grid)) if t > 0 else 0.0

    components = pair.components
    mixture = 0.0
    for c, phi in ((components.c_plus, components.phi_plus), (components.c_minus, components.phi_minus)):
        if phi is not None:
            mixture += c ** 2 * first_order_entropy(system, phi, t, n_quad)
    fraction = region.volume / model.lattice.volume
    epsilon_hat = (weight * (t * (nu ** 2 - fluct_afv) - (fraction + epsilon) * local_integral)
                   + (s1_afv - mixture))

    slack = lhs - rhs
    tol = CERTIFICATE_TOL * max(1.0, abs(rhs))
    passed = slack >= -abs(epsilon_hat) - tol and lhs >= -tol
    certificate = Certificate(
        name='difference_bound', lhs=float(lhs), rhs=float(rhs), slack=float(slack),
        preconditions_met=True, passed=bool(passed),
        details={
            't': t,
            'horizon': horizon,
            'epsilon': epsilon,
            'nu': float(nu),
            'nu_refinement_delta': float(abs(nu_refined - nu)),
            'afv_fluctuation': float(fluct_afv),
            'epsilon_hat': float(epsilon_hat),
            'omega_volume': region.volume,
            'c_plus': components.c_plus,
            'c_minus': components.c_minus,
            'n_time': len(grid),
        },
    )
    logger.debug('Оценка разности энтропий: LHS=%.6g RHS=%.6g ε̂=%.3g статус=%s', lhs, rhs, epsilon_hat, certificate.status)
    return certificate


def difference_bound_size_sweep(build_point: Callable[[int], Tuple[OpenSystem, VacuumPair]], sizes: Sequence[int],
                        t: float, horizon: float, epsilon: float,
                        n_time: int = MIN_TIME_POINTS) -> Tuple[List[Certificate], bool]:
    """Сертификаты для ряда размеров и проверка невозрастания |ε̂_Λ|"""
    certificates = []
    for size in sizes:
        system, pair = build_point(size)
        certificate = difference_bound_certificate(system, pair, t, horizon, epsilon, n_time)
        certificate.details['L'] = size
        certificates.append(certificate)
    corrections = [abs(c.details['epsilon_hat']) for c in certificates]
    shrinking = all(later <= earlier + 1e-12 for earlier, later in zip(corrections, corrections[1:]))
    return certificates, shrinking


def rate_extract(report: EntropyReport) -> RateEstimate:
    """
    Наклон S^(1) через начало координат в окне t ≤ 0.1/γ̂ (два прохода)
    """
    times = np.asarray(report.times, dtype=float)
    values = np.asarray(report.first_order, dtype=float)
    bootstrap = ScalingFitService.slope_through_origin(times, values)

    mask = np.ones(times.size, dtype=bool)
    window_end = float(times.max()) if times.size else 0.0
    if bootstrap.slope > 0:
        candidate = times <= 0.1 / bootstrap.slope
        if candidate.sum() >= 3:
            mask = candidate
            window_end = float(times[mask].max())
    fit = ScalingFitService.slope_through_origin(times[mask], values[mask])
    linear = fit.is_linear(0.01)
    slopes = None
    if not linear:
        logger.warning('S^(1) для %s нелинейна в окне: отклонение %.2g', report.label, fit.max_relative_residual)
        slopes = np.diff(values[mask]) / np.diff(times[mask])
    report.gamma_hat = fit.slope
    return RateEstimate(fit.slope, window_end, linear, fit, slopes)


def entropy_report(system: OpenSystem, state: ManyBodyState, times: Sequence[float],
                   bound_rate: Optional[float] = None,
                   linear_entropy_series: Optional[Sequence[float]] = None) -> EntropyReport:
    times = np.asarray(times, dtype=float)
    prefactor = system.terms[0][0].prefactor if system.terms else 0.0
    report = EntropyReport(
        label=state.label,
        times=times,
        first_order=first_order_entropy_series(system, state, times),
        prefactor=prefactor,
        bound_rate=bound_rate,
        linear_entropy=None if linear_entropy_series is None else np.asarray(linear_entropy_series),
    )
    rate_extract(report)
    return report


def rate_difference(afv: EntropyReport, ppv: EntropyReport) -> float:
    """Δγ̂ = γ̂(AFV) - γ̂(PPV)"""
    return rate_extract(afv).gamma - rate_extract(ppv).gamma


def fragility_ratio(gamma_afv: float, gamma_ppv: float) -> float:
    if gamma_ppv == 0:
        return float('inf') if gamma_afv > 0 else float('nan')
    return gamma_afv / gamma_ppv
