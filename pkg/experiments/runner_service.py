"""
Сервис запуска экспериментов
Конвейер: модель → окружение → энтропии → сертификаты → агрегирование
"""
import hashlib
import itertools
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from django.conf import settings
from django.db import transaction

from physics.dynamics_service import (
    DensityMatrix,
    OpenSystem,
    convention_ratio,
    energy_spread,
    invariant_report,
    propagate,
    richardson_ratio,
)
from physics.environment_service import (
    EnvCorrelation,
    InteractionSpec,
    build_g_matrix,
    build_kernel,
    contact_from_spec,
    markovianity_check,
    random_positive_kernel,
    scaling_regime,
)
from physics.exceptions import ConfigError, KernelError, LabError, PositivityError
from physics.fit_service import ScalingFitService
from physics.fragility_service import (
    Certificate,
    difference_bound_certificate,
    entropy_report,
    fragility_ratio,
    rate_bound_certificate,
    time_grid,
)
from physics.model_service import (
    PSI,
    PSI_DAG,
    build_afv_ising,
    build_boson_pair,
    build_free_boson,
    build_ising,
    random_invariant_state,
)

from .export_service import ExportService
from .models import CertificateRecord, RunRecord
from .serializers import ExperimentConfigSerializer

logger = logging.getLogger(__name__)

MIN_FIT_POINTS = 3
MAX_TRACE_DRIFT = 1e-8


def load_config(path: Union[str, Path]) -> Dict:
    """Чтение и проверка документа конфигурации"""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except OSError as exc:
        raise ConfigError(f'{path}: не удалось прочитать файл ({exc})') from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f'{path}: некорректный JSON ({exc})') from exc

    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigError(f'{path}: {json.dumps(serializer.errors, ensure_ascii=False)}')
    return json.loads(json.dumps(serializer.validated_data))


def config_hash(config: Dict, seed: int) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'), ensure_ascii=False)
    return hashlib.sha256(f'{canonical}|seed={seed}'.encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class SweepPoint:
    index: int
    L: int
    contact_size: Optional[int]
    coupling: float


@dataclass
class PointResult:
    point: SweepPoint
    row: Dict
    certificates: List[Certificate] = field(default_factory=list)
    trajectory: Optional[pd.DataFrame] = None
    correlations: List[EnvCorrelation] = field(default_factory=list)


@dataclass
class RunResult:
    """Агрегированный результат запуска; при ошибке содержит строки, посчитанные до неё"""
    config_hash: str
    command: str
    points: List[PointResult] = field(default_factory=list)
    error: Optional[Exception] = None
    wall_clock: float = 0.0
    record: Optional[RunRecord] = None

    @property
    def status(self) -> str:
        if self.error is not None or any(c.status == 'fail' for _, c in self.certificates):
            return RunRecord.STATUS_FAILED
        return RunRecord.STATUS_OK

    @property
    def rows(self) -> List[Dict]:
        return [result.row for result in self.points]

    @property
    def certificates(self) -> List[Tuple[int, Certificate]]:
        return [(result.point.index, c) for result in self.points for c in result.certificates]

    def failed_certificates(self) -> List[Tuple[int, Certificate]]:
        return [(index, c) for index, c in self.certificates if c.status != 'pass']


class ExperimentRunner:
    """
    Запуск эксперимента по документу конфигурации.
    Точки развёртки считаются в пуле потоков; порядок строк совпадает с порядком точек
    """

    def __init__(self, config: Dict, command: str = 'run', seed: Optional[int] = None, threads: int = 1,
                 config_path: Union[str, Path] = ''):
        self.config = config
        self.command = command
        self.seed = config['seed'] if seed is None else seed
        self.threads = max(1, int(threads))
        self.config_path = str(config_path)
        self.gates = command == 'verify'
        self.certify = command != 'sweep'

    def points(self) -> List[SweepPoint]:
        sweep = self.config['sweep']
        sizes = sweep['L'] or [self.config['model']['L']]
        contacts = sweep['contact_size'] or [None]
        couplings = sweep['coupling'] or [self.config['drive']['coupling']]
        return [
            SweepPoint(index, L, contact_size, coupling)
            for index, (L, contact_size, coupling) in enumerate(itertools.product(sizes, contacts, couplings))
        ]

    def boson_occupation(self, L: int) -> Tuple[int, int]:
        """(N, n_max); при заданной плотности N = n₀|Λ| и обрезка не ниже N+1"""
        spec = self.config['model']
        volume = L ** spec['d']
        if spec.get('density') is not None:
            N = int(round(spec['density'] * volume))
            return N, max(spec.get('n_max') or 0, N + 1)
        return spec['N'], spec['n_max']

    def build_model(self, L: int):
        spec = self.config['model']
        if spec['kind'] == 'ising':
            model = build_ising(L, spec['d'], spec['J'])
            return model, build_afv_ising(model)
        N, n_max = self.boson_occupation(L)
        model = build_free_boson(L, spec['d'], n_max, spec.get('n_max_excited'))
        return model, build_boson_pair(model, N, complex(*spec['alpha']))

    def build_environment(self, model, point: SweepPoint) -> List[Tuple[InteractionSpec, EnvCorrelation]]:
        env = self.config['environment']
        lattice = model.lattice
        contact_spec = env['contact']
        if point.contact_size is not None:
            contact_spec = {'kind': 'block', 'size': point.contact_size}
        contact = contact_from_spec(lattice, contact_spec['kind'], contact_spec.get('size'),
                                    contact_spec.get('sites'))

        kernel_spec = env['kernel']
        kernel = build_kernel(kernel_spec['kind'], kernel_spec.get('xi'), kernel_spec.get('values'))
        tau_c = env.get('tau_c')
        if model.kind == 'ising':
            corr = build_g_matrix(kernel, env['g_bar'], contact, lattice, 'a', tau_c)
            return [(InteractionSpec(point.coupling, contact, model.order_field, 'a'), corr)]

        minus = env.get('minus') or {'kernel': kernel_spec, 'g_bar': env['g_bar']}
        minus_kernel = build_kernel(minus['kernel']['kind'], minus['kernel'].get('xi'),
                                    minus['kernel'].get('values'))
        plus_corr = build_g_matrix(kernel, env['g_bar'], contact, lattice, 'plus', tau_c)
        minus_corr = build_g_matrix(minus_kernel, minus['g_bar'], contact, lattice, 'minus', tau_c)
        return [
            (InteractionSpec(point.coupling, contact, PSI, 'plus'), plus_corr),
            (InteractionSpec(point.coupling, contact, PSI_DAG, 'minus'), minus_corr),
        ]

    def evaluate(self, point: SweepPoint) -> PointResult:
        logger.info('Точка %s: L=%s, |Λ_C|=%s, λ=%s', point.index, point.L, point.contact_size, point.coupling)
        try:
            model, pair = self.build_model(point.L)
            terms = self.build_environment(model, point)
            system = OpenSystem.build(model, terms)
        except (KernelError, PositivityError) as exc:
            if not self.gates:
                raise
            return self._positivity_failure(point, exc)

        result = self._entropies(point, system, pair)
        if self.gates:
            result.certificates.append(self._positivity_certificate(result.correlations))
        if self.config['drive']['dynamics']:
            self._dynamics(result, system, pair)
        if self.gates and self.config['drive']['property_trials'] and model.kind == 'ising':
            result.certificates.append(self._property_suite(system, point))
        logger.info('Точка %s готова: γ̂_AFV=%.6g γ̂_PPV=%.6g', point.index,
                    result.row['gamma_afv'], result.row['gamma_ppv'])
        return result

    def _entropies(self, point: SweepPoint, system: OpenSystem, pair) -> PointResult:
        drive = self.config['drive']
        env = self.config['environment']
        model = system.model
        t_final = drive['t_final']

        if env.get('tau_c') is not None:
            spread = env.get('energy_spread_limit')
            if spread is None:
                spread = energy_spread(pair.ppv, system.hamiltonian)
            markovianity_check(spread, env['tau_c'])

        certificates = []
        bounds = {}
        if self.certify:
            for label, state in (('afv', pair.afv), ('ppv', pair.ppv)):
                certificate = rate_bound_certificate(system, state, t_final, drive['n_quad'], drive['n_time'])
                certificates.append(replace(certificate, name=f'rate_bound_{label}'))
                bounds[label] = certificate.details['bound_rate']
            if pair.has_parity:
                certificates.append(difference_bound_certificate(system, pair, t_final, drive['horizon'],
                                                         drive['epsilon'], drive['n_time'], drive['n_quad']))

        times = time_grid(t_final, drive['n_time'])
        afv = entropy_report(system, pair.afv, times, bound_rate=bounds.get('afv'))
        ppv = entropy_report(system, pair.ppv, times, bound_rate=bounds.get('ppv'))

        correlations = [corr for _, corr in system.terms]
        regime = scaling_regime(correlations[0])
        prefactor = system.terms[0][0].prefactor
        delta_gamma = afv.gamma_hat - ppv.gamma_hat
        row = {
            'index': point.index,
            'L': point.L,
            'volume': model.lattice.volume,
            'contact_size': correlations[0].contact_size,
            'xi_E': regime.xi_E,
            'regime': regime.regime,
            'g00': correlations[0].g00,
            'coupling': point.coupling,
            'prefactor': prefactor,
            'gamma_afv': afv.gamma_hat,
            'gamma_ppv': ppv.gamma_hat,
            'ratio': fragility_ratio(afv.gamma_hat, ppv.gamma_hat),
            'delta_gamma': delta_gamma,
            'status': 'ok',
        }
        if model.kind == 'free_boson':
            weight = prefactor * sum(corr.g00 for corr in correlations)
            N, _ = self.boson_occupation(point.L)
            row['n0_measured'] = delta_gamma / weight if weight else float('nan')
            row['n0_expected'] = N / model.lattice.volume
        return PointResult(point, row, certificates, None, correlations)

    def _dynamics(self, result: PointResult, system: OpenSystem, pair):
        drive = self.config['drive']
        rho0 = DensityMatrix.from_state(pair.afv)
        trajectory = propagate(rho0, system.hamiltonian, system.channels, drive['t_final'], drive['n_steps'])
        result.trajectory = trajectory.to_dataframe(system.model.order_parameter())
        report = invariant_report(trajectory)
        result.row['convention_ratio'] = convention_ratio(pair.afv, system.hamiltonian, system.channels)
        result.row['max_trace_drift'] = report['max_trace_drift']
        result.row['min_eigenvalue'] = report['min_eigenvalue']
        if not self.gates:
            return

        positivity_tol = settings.LAB['POSITIVITY_TOL']
        result.certificates.append(Certificate(
            name='integrator_health', lhs=report['max_trace_drift'], rhs=MAX_TRACE_DRIFT,
            slack=MAX_TRACE_DRIFT - report['max_trace_drift'], preconditions_met=True,
            passed=bool(report['max_trace_drift'] < MAX_TRACE_DRIFT
                        and report['min_eigenvalue'] >= -positivity_tol),
            details=report,
        ))
        study = richardson_ratio(rho0, system.hamiltonian, system.channels, drive['t_final'], drive['n_steps'])
        result.certificates.append(Certificate(
            name='dynamics_convergence', lhs=study.richardson_ratio, rhs=16.0, slack=None,
            preconditions_met=True, passed=bool(study.passed() and study.fourth_order()),
            details={
                'n_steps': list(study.n_steps),
                'entropies': list(study.entropies),
                'relative_change': study.relative_change,
                'differences': list(study.differences),
            },
        ))

    def _property_suite(self, system: OpenSystem, point: SweepPoint) -> Certificate:
        """
        Нижняя оценка скорости на случайных тройках (состояние, g, Λ_C); генератор от seed.
        Испытания с невыполненными предусловиями не входят в вердикт
        """
        drive = self.config['drive']
        model = system.model
        lattice = model.lattice
        rng = np.random.default_rng([self.seed, point.index])
        slacks = []
        unmet = 0
        for _ in range(drive['property_trials']):
            size = int(rng.integers(1, lattice.volume + 1))
            contact = tuple(sorted(int(x) for x in rng.choice(lattice.volume, size=size, replace=False)))
            corr = build_g_matrix(random_positive_kernel(rng, lattice), float(rng.uniform(0.1, 2.0)),
                                  contact, lattice)
            trial = OpenSystem.build(model, [(InteractionSpec(point.coupling, contact, model.order_field), corr)])
            state = random_invariant_state(model, rng)
            certificate = rate_bound_certificate(trial, state, drive['t_final'], drive['n_quad'], drive['n_time'])
            if not certificate.preconditions_met:
                unmet += 1
                continue
            slacks.append(certificate.slack)
        details = {'trials': drive['property_trials'], 'checked': len(slacks), 'preconditions_unmet': unmet,
                   'seed': self.seed}
        if not slacks:
            return Certificate(name='rate_bound_property', lhs=None, rhs=-1e-9, slack=None,
                               preconditions_met=False, passed=None, details=details)
        worst = min(slacks)
        return Certificate(
            name='rate_bound_property', lhs=worst, rhs=-1e-9, slack=worst + 1e-9, preconditions_met=True,
            passed=bool(worst >= -1e-9), details=details,
        )

    @staticmethod
    def _positivity_certificate(correlations: List[EnvCorrelation]) -> Certificate:
        worst = min(corr.min_eigenvalue for corr in correlations)
        return Certificate(
            name='positivity', lhs=worst, rhs=0.0, slack=worst, preconditions_met=True,
            passed=all(corr.is_positive for corr in correlations),
            details={corr.label: corr.min_eigenvalue for corr in correlations},
        )

    def _positivity_failure(self, point: SweepPoint, exc: LabError) -> PointResult:
        logger.warning('Точка %s: нефизичное окружение: %s', point.index, exc)
        row = {'index': point.index, 'L': point.L, 'coupling': point.coupling, 'status': 'failed', 'error': str(exc)}
        certificate = Certificate(name='positivity', lhs=None, rhs=0.0, slack=None, preconditions_met=True,
                                  passed=False, details={'error': str(exc)})
        return PointResult(point, row, [certificate])

    def run(self) -> RunResult:
        """Все точки развёртки; ошибка точки останавливает запуск, но сохраняет посчитанное"""
        started = time.monotonic()
        points = self.points()
        result = RunResult(config_hash(self.config, self.seed), self.command)
        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            try:
                for outcome in executor.map(self.evaluate, points):
                    result.points.append(outcome)
            except Exception as exc:  # pylint: disable=broad-except
                failed = points[len(result.points)]
                if isinstance(exc, LabError):
                    logger.error('Точка %s завершилась ошибкой: %s', failed.index, exc)
                else:
                    logger.exception('Точка %s: непредвиденная ошибка', failed.index)
                result.points.append(PointResult(failed, {
                    'index': failed.index, 'L': failed.L, 'coupling': failed.coupling,
                    'status': 'failed', 'error': str(exc),
                }))
                result.error = exc
                executor.shutdown(wait=True, cancel_futures=True)
        result.wall_clock = time.monotonic() - started
        result.record = self.persist(result)
        return result

    def persist(self, result: RunResult) -> RunRecord:
        with transaction.atomic():
            record = RunRecord.objects.create(
                config_hash=result.config_hash,
                config_path=self.config_path,
                code_version=settings.LAB['CODE_VERSION'],
                command=self.command,
                status=result.status,
                results=ExportService.json_ready(result.rows),
                wall_clock=result.wall_clock,
            )
            CertificateRecord.objects.bulk_create([
                CertificateRecord(
                    run=record,
                    name=certificate.name,
                    point_index=index,
                    lhs=ExportService.json_ready(certificate.lhs),
                    rhs=ExportService.json_ready(certificate.rhs),
                    slack=ExportService.json_ready(certificate.slack),
                    preconditions_met=bool(certificate.preconditions_met),
                    passed=None if certificate.passed is None else bool(certificate.passed),
                    details=ExportService.json_ready(certificate.details),
                )
                for index, certificate in result.certificates
            ])
        logger.info('Запуск %s сохранён: %s, %.2f с', record.pk, record.status, record.wall_clock)
        return record


def sweep_summary(rows: List[Dict]) -> Dict:
    """Показатели log-log: g₀₀ и γ̂_AFV от |Λ_C|, отношение от |Λ|"""
    df = pd.DataFrame([row for row in rows if row.get('status') == 'ok'])
    fits = {}
    for name, x_column, y_column in (
        ('g00_vs_contact_size', 'contact_size', 'g00'),
        ('gamma_afv_vs_contact_size', 'contact_size', 'gamma_afv'),
        ('ratio_vs_volume', 'volume', 'ratio'),
    ):
        if df.empty or x_column not in df or y_column not in df:
            fits[name] = {'exponent': None, 'reason': 'нет посчитанных точек'}
            continue
        subset = df[[x_column, y_column]].replace([np.inf, -np.inf], np.nan).dropna()
        subset = subset[(subset[x_column] > 0) & (subset[y_column] > 0)]
        distinct = subset[x_column].nunique()
        if distinct < MIN_FIT_POINTS:
            fits[name] = {'exponent': None, 'reason': f'меньше {MIN_FIT_POINTS} различных точек: {distinct}'}
            continue
        fit = ScalingFitService.power_law(subset[x_column], subset[y_column])
        fits[name] = {'exponent': fit.exponent, 'prefactor': fit.prefactor, 'r2': fit.r2, 'n_points': fit.n_points}
    return {'points': len(rows), 'fits': fits}
