import json
import math
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase, TestCase

from physics.exceptions import ConfigError, DimensionError
from .export_service import ExportService
from .models import CertificateRecord, RunRecord
from .runner_service import ExperimentRunner, config_hash, load_config, sweep_summary
from .serializers import ExperimentConfigSerializer, describe_serializer


def make_config(model=None, environment=None, **blocks):
    data = {
        'schema_version': 1,
        'model': model or {'kind': 'ising', 'L': 4},
        'environment': environment or {'kernel': {'kind': 'constant'}},
    }
    data.update(blocks)
    serializer = ExperimentConfigSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    return json.loads(json.dumps(serializer.validated_data))


class ConfigSerializerTests(SimpleTestCase):
    """Тесты проверки документа конфигурации"""

    def test_defaults_filled(self):
        """Тест заполнения необязательных блоков значениями по умолчанию"""
        config = make_config()
        self.assertEqual(config['model']['d'], 1)
        self.assertEqual(config['drive']['n_quad'], 16)
        self.assertEqual(config['drive']['n_time'], 32)
        self.assertEqual(config['sweep']['L'], [])
        self.assertEqual(config['output']['formats'], ['csv', 'json'])
        self.assertEqual(config['environment']['contact'], {'kind': 'all'})
        self.assertIsNone(config['environment']['minus'])

    def test_unknown_key_rejected(self):
        """Тест: неизвестный ключ отвергается"""
        serializer = ExperimentConfigSerializer(data={
            'schema_version': 1,
            'model': {'kind': 'ising', 'L': 4, 'colour': 'red'},
            'environment': {'kernel': {'kind': 'constant'}},
        })
        self.assertFalse(serializer.is_valid())
        self.assertIn('colour', serializer.errors['model'])

    def test_non_finite_values_rejected(self):
        """Тест: NaN и ±inf отвергаются во всех вещественных полях"""
        nan, inf = float('nan'), float('inf')
        cases = {
            'g_bar': {'environment': {'kernel': {'kind': 'constant'}, 'g_bar': nan}},
            'g_bar_inf': {'environment': {'kernel': {'kind': 'constant'}, 'g_bar': inf}},
            'tau_c': {'environment': {'kernel': {'kind': 'constant'}, 'tau_c': nan}},
            'values': {'environment': {'kernel': {'kind': 'tabulated', 'values': [1.0, nan, 0.0, nan]}}},
            'xi': {'environment': {'kernel': {'kind': 'exponential', 'xi': inf}}},
            'coupling': {'drive': {'coupling': nan}},
            'horizon': {'drive': {'horizon': inf}},
            't_final': {'drive': {'t_final': inf}},
            'J': {'model': {'kind': 'ising', 'L': 4, 'J': -inf}},
            'sweep_coupling': {'sweep': {'coupling': [0.1, nan]}},
        }
        for name, blocks in cases.items():
            with self.subTest(field=name):
                data = {
                    'schema_version': 1,
                    'model': {'kind': 'ising', 'L': 4},
                    'environment': {'kernel': {'kind': 'constant'}},
                }
                data.update(blocks)
                serializer = ExperimentConfigSerializer(data=json.loads(json.dumps(data)))
                self.assertFalse(serializer.is_valid())

    def test_schema_version_checked(self):
        serializer = ExperimentConfigSerializer(data={
            'schema_version': 2,
            'model': {'kind': 'ising', 'L': 4},
            'environment': {'kernel': {'kind': 'constant'}},
        })
        self.assertFalse(serializer.is_valid())
        self.assertIn('schema_version', serializer.errors)

    def test_ranges_enforced(self):
        """Тест диапазонов: λ ≤ 10, чётное n_quad, ε ∈ (0, 1]"""
        for drive in ({'coupling': 11.0}, {'n_quad': 15}, {'epsilon': 0.0}, {'n_time': 16}, {'t_final': 0.0}):
            with self.subTest(drive=drive):
                serializer = ExperimentConfigSerializer(data={
                    'schema_version': 1,
                    'model': {'kind': 'ising', 'L': 4},
                    'environment': {'kernel': {'kind': 'constant'}},
                    'drive': drive,
                })
                self.assertFalse(serializer.is_valid())
                self.assertIn('drive', serializer.errors)

    def test_exponential_kernel_needs_xi(self):
        serializer = ExperimentConfigSerializer(data={
            'schema_version': 1,
            'model': {'kind': 'ising', 'L': 4},
            'environment': {'kernel': {'kind': 'exponential'}},
        })
        self.assertFalse(serializer.is_valid())

    def test_boson_needs_occupation(self):
        """Тест: бозонная модель требует N и n_max либо плотность"""
        serializer = ExperimentConfigSerializer(data={
            'schema_version': 1,
            'model': {'kind': 'free_boson', 'L': 2, 'n_max': 4},
            'environment': {'kernel': {'kind': 'constant'}},
        })
        self.assertFalse(serializer.is_valid())
        config = make_config(model={'kind': 'free_boson', 'L': 2, 'density': 2.0})
        self.assertEqual(config['model']['density'], 2.0)

    def test_describe_serializer(self):
        """Тест описания схемы: типы, умолчания и варианты"""
        schema = describe_serializer(ExperimentConfigSerializer())
        self.assertTrue(schema['schema_version']['required'])
        self.assertEqual(schema['drive']['fields']['n_quad']['default'], 16)
        self.assertIn('exponential', schema['environment']['fields']['kernel']['fields']['kind']['choices'])
        self.assertEqual(schema['model']['fields']['alpha']['default'], [0.2, 0.0])


class LoadConfigTests(SimpleTestCase):
    """Тесты чтения конфигурации с диска"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.directory = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(self.directory / 'missing.json')

    def test_broken_json(self):
        path = self.directory / 'broken.json'
        path.write_text('{"schema_version": 1,', encoding='utf-8')
        with self.assertRaisesRegex(ConfigError, 'JSON'):
            load_config(path)

    def test_invalid_document(self):
        path = self.directory / 'invalid.json'
        path.write_text(json.dumps({'schema_version': 1, 'model': {'kind': 'potts', 'L': 4}}), encoding='utf-8')
        with self.assertRaisesRegex(ConfigError, 'kind'):
            load_config(path)

    def test_non_finite_literal_rejected(self):
        path = self.directory / 'nan.json'
        path.write_text('{"schema_version": 1, "model": {"kind": "ising", "L": 4}, '
                        '"environment": {"kernel": {"kind": "constant"}, "g_bar": NaN}}', encoding='utf-8')
        with self.assertRaisesRegex(ConfigError, 'g_bar'):
            load_config(path)

    def test_shipped_configs_are_valid(self):
        """Тест: все конфигурации из experiments/configs проходят проверку"""
        directory = Path(__file__).resolve().parent / 'configs'
        paths = sorted(directory.glob('*.json'))
        self.assertGreaterEqual(len(paths), 7)
        for path in paths:
            with self.subTest(config=path.name):
                self.assertEqual(load_config(path)['schema_version'], 1)

    def test_hash_depends_on_seed_and_content(self):
        config = make_config()
        self.assertEqual(config_hash(config, 0), config_hash(make_config(), 0))
        self.assertNotEqual(config_hash(config, 0), config_hash(config, 1))
        self.assertNotEqual(config_hash(config, 0), config_hash(make_config(drive={'coupling': 0.2}), 0))


class RunnerPointsTests(SimpleTestCase):
    """Тесты построения точек развёртки"""

    def test_single_point_without_sweep(self):
        runner = ExperimentRunner(make_config(drive={'coupling': 0.05}))
        points = runner.points()
        self.assertEqual(len(points), 1)
        self.assertEqual((points[0].L, points[0].contact_size, points[0].coupling), (4, None, 0.05))

    def test_cartesian_product_order(self):
        """Тест порядка точек: L, затем |Λ_C|, затем λ"""
        runner = ExperimentRunner(make_config(sweep={'L': [4, 6], 'contact_size': [2], 'coupling': [0.1, 0.2]}))
        points = runner.points()
        self.assertEqual([point.index for point in points], [0, 1, 2, 3])
        self.assertEqual([(point.L, point.coupling) for point in points],
                         [(4, 0.1), (4, 0.2), (6, 0.1), (6, 0.2)])

    def test_density_sets_occupation(self):
        """Тест: N = n₀|Λ| и n_max ≥ N+1"""
        runner = ExperimentRunner(make_config(model={'kind': 'free_boson', 'L': 3, 'density': 2.0, 'n_max': 2}))
        self.assertEqual(runner.boson_occupation(3), (6, 7))

    def test_seed_override(self):
        config = make_config(seed=5)
        self.assertEqual(ExperimentRunner(config).seed, 5)
        self.assertEqual(ExperimentRunner(config, seed=9).seed, 9)


class ExperimentRunnerTests(TestCase):
    """Тесты конвейера запуска и сохранения результатов"""

    def test_ising_point(self):
        """Тест изинговской точки: γ̂_AFV = λ²g₀₀, γ̂_PPV = 0"""
        config = make_config(drive={'coupling': 0.05})
        result = ExperimentRunner(config, 'run').run()
        self.assertIsNone(result.error)
        row = result.rows[0]
        self.assertEqual(row['status'], 'ok')
        self.assertAlmostEqual(row['g00'], 16.0, places=10)
        self.assertAlmostEqual(row['gamma_afv'], 0.05 ** 2 * 16.0, places=10)
        self.assertAlmostEqual(row['gamma_ppv'], 0.0, places=12)
        self.assertGreater(row['ratio'], 1e6)
        self.assertEqual(row['regime'], 'long_range')
        names = [certificate.name for _, certificate in result.certificates]
        self.assertEqual(names, ['rate_bound_afv', 'rate_bound_ppv', 'difference_bound'])
        self.assertFalse(result.failed_certificates())

    def test_run_is_persisted(self):
        """Тест сохранения запуска и сертификатов в БД"""
        config = make_config(drive={'coupling': 0.05})
        result = ExperimentRunner(config, 'run', config_path='inline.json').run()
        record = RunRecord.objects.get(pk=result.record.pk)
        self.assertEqual(record.status, RunRecord.STATUS_OK)
        self.assertEqual(record.config_hash, result.config_hash)
        self.assertEqual(record.config_path, 'inline.json')
        self.assertEqual(len(record.results), 1)
        self.assertAlmostEqual(record.results[0]['g00'], 16.0, places=10)
        self.assertEqual(CertificateRecord.objects.filter(run=record).count(), 3)
        self.assertTrue(all(c.status == 'pass' for c in record.certificates.all()))

    def test_boson_density_point(self):
        """Тест бозонной точки: n₀ из Δγ̂ и отношение 2n₀|Λ|+1"""
        config = make_config(
            model={'kind': 'free_boson', 'L': 2, 'n_max': 3, 'n_max_excited': 1, 'density': 2.0},
            drive={'coupling': 0.1},
        )
        result = ExperimentRunner(config, 'run').run()
        self.assertIsNone(result.error)
        row = result.rows[0]
        self.assertAlmostEqual(row['n0_expected'], 2.0)
        self.assertAlmostEqual(row['n0_measured'], 2.0, places=6)
        self.assertAlmostEqual(row['ratio'], 9.0, delta=1e-5)
        names = [certificate.name for _, certificate in result.certificates]
        self.assertNotIn('difference_bound', names)

    def test_contact_sweep_exponents(self):
        """Тест развёртки по |Λ_C|: g₀₀ ∝ |Λ_C|² для f ≡ 1"""
        config = make_config(model={'kind': 'ising', 'L': 6}, sweep={'contact_size': [1, 2, 3, 6]})
        result = ExperimentRunner(config, 'sweep').run()
        self.assertEqual(len(result.rows), 4)
        self.assertEqual(result.certificates, [])
        summary = sweep_summary(result.rows)
        self.assertAlmostEqual(summary['fits']['g00_vs_contact_size']['exponent'], 2.0, places=8)
        self.assertAlmostEqual(summary['fits']['gamma_afv_vs_contact_size']['exponent'], 2.0, places=6)
        self.assertIsNone(summary['fits']['ratio_vs_volume']['exponent'])

    def test_failed_point_keeps_partial_results(self):
        """Тест: ошибка точки останавливает запуск, строки до неё сохраняются"""
        config = make_config(sweep={'contact_size': [2, 10]})
        result = ExperimentRunner(config, 'run').run()
        self.assertIsInstance(result.error, DimensionError)
        self.assertEqual([row['status'] for row in result.rows], ['ok', 'failed'])
        self.assertIn('error', result.rows[1])
        self.assertEqual(result.record.status, RunRecord.STATUS_FAILED)

    def test_certificate_flags_are_plain_bool(self):
        """Тест: флаги сертификатов сохраняются как bool, а не numpy.bool_"""
        config = make_config(drive={'coupling': 0.05})
        result = ExperimentRunner(config, 'verify').run()
        for _, certificate in result.certificates:
            with self.subTest(certificate=certificate.name):
                self.assertIs(type(certificate.passed), bool)
        stored = list(CertificateRecord.objects.filter(run=result.record).values_list('passed', flat=True))
        self.assertEqual(stored, [True] * len(result.certificates))

    def test_failed_certificate_marks_run_failed(self):
        """Тест: статус запуска 'failed' при непройденном сертификате без исключения"""
        config = make_config(environment={'kernel': {'kind': 'tabulated', 'values': [1.0, 1.0, 0.0, 1.0]}})
        result = ExperimentRunner(config, 'verify').run()
        self.assertIsNone(result.error)
        self.assertEqual(result.status, RunRecord.STATUS_FAILED)
        self.assertEqual(RunRecord.objects.get(pk=result.record.pk).status, RunRecord.STATUS_FAILED)

    def test_unexpected_error_keeps_partial_results(self):
        """Тест: непредвиденное исключение точки сохраняет посчитанные строки"""
        config = make_config(sweep={'coupling': [0.01, 0.02]})
        runner = ExperimentRunner(config, 'run')
        original = runner._entropies

        def failing(point, system, pair):
            if point.index == 1:
                raise RuntimeError('сбой')
            return original(point, system, pair)

        with mock.patch.object(runner, '_entropies', side_effect=failing):
            result = runner.run()
        self.assertIsInstance(result.error, RuntimeError)
        self.assertEqual([row['status'] for row in result.rows], ['ok', 'failed'])
        self.assertEqual(result.record.status, RunRecord.STATUS_FAILED)

    def test_verify_turns_kernel_error_into_certificate(self):
        """Тест: нефизичное ядро в verify даёт непройденный сертификат positivity"""
        config = make_config(environment={'kernel': {'kind': 'tabulated', 'values': [1.0, 1.0, 0.0, 1.0]}})
        result = ExperimentRunner(config, 'verify').run()
        self.assertIsNone(result.error)
        failed = result.failed_certificates()
        self.assertEqual([certificate.name for _, certificate in failed], ['positivity'])
        self.assertEqual(result.rows[0]['status'], 'failed')

    def test_verify_property_suite(self):
        """Тест случайных трансляционно-инвариантных состояний в verify"""
        config = make_config(model={'kind': 'ising', 'L': 3}, drive={'coupling': 0.1, 'property_trials': 3})
        result = ExperimentRunner(config, 'verify').run()
        certificates = {certificate.name: certificate for _, certificate in result.certificates}
        self.assertIn('positivity', certificates)
        self.assertEqual(certificates['rate_bound_property'].status, 'pass')
        self.assertEqual(certificates['rate_bound_property'].details['trials'], 3)
        self.assertEqual(certificates['rate_bound_property'].details['checked'], 3)
        self.assertEqual(certificates['rate_bound_property'].details['preconditions_unmet'], 0)

    def test_threads_keep_order(self):
        config = make_config(sweep={'coupling': [0.01, 0.02, 0.03, 0.04]})
        result = ExperimentRunner(config, 'sweep', threads=3).run()
        self.assertEqual([row['coupling'] for row in result.rows], [0.01, 0.02, 0.03, 0.04])
        self.assertEqual([row['index'] for row in result.rows], [0, 1, 2, 3])


class SweepSummaryTests(SimpleTestCase):
    """Тесты сводных показателей развёртки"""

    def test_too_few_points(self):
        rows = [{'status': 'ok', 'contact_size': size, 'g00': size ** 2, 'gamma_afv': 1.0,
                 'volume': 4, 'ratio': 1.0} for size in (1, 2)]
        summary = sweep_summary(rows)
        self.assertIsNone(summary['fits']['g00_vs_contact_size']['exponent'])
        self.assertIn('reason', summary['fits']['g00_vs_contact_size'])

    def test_failed_and_infinite_rows_skipped(self):
        rows = [{'status': 'ok', 'contact_size': 2, 'volume': v, 'g00': 4.0, 'gamma_afv': 1.0,
                 'ratio': 4 * v + 1} for v in (2, 3, 4)]
        rows.append({'status': 'ok', 'contact_size': 2, 'volume': 5, 'g00': 4.0, 'gamma_afv': 1.0,
                     'ratio': float('inf')})
        rows.append({'status': 'failed', 'error': 'boom'})
        summary = sweep_summary(rows)
        self.assertEqual(summary['points'], 5)
        self.assertEqual(summary['fits']['ratio_vs_volume']['n_points'], 3)
        self.assertIsNone(summary['fits']['g00_vs_contact_size']['exponent'])

    def test_empty(self):
        summary = sweep_summary([])
        self.assertIsNone(summary['fits']['ratio_vs_volume']['exponent'])


class ExportServiceTests(SimpleTestCase):
    """Тесты выгрузки результатов"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.directory = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_json_ready(self):
        """Тест приведения numpy, комплексных и бесконечных значений"""
        value = {'a': np.float64(1.5), 'b': [np.inf, complex(1, 2)], 'c': np.arange(2), 1: np.bool_(True)}
        self.assertEqual(ExportService.json_ready(value), {'a': 1.5, 'b': [None, [1.0, 2.0]], 'c': [0, 1], '1': True})
        self.assertTrue(math.isfinite(ExportService.json_ready(2.0)))

    def test_output_directory_override(self):
        config = make_config(output={'directory': str(self.directory / 'from_config')})
        self.assertEqual(ExportService.output_directory(config), self.directory / 'from_config')
        override = ExportService.output_directory(config, str(self.directory / 'override'))
        self.assertTrue(override.is_dir())
        self.assertEqual(override.name, 'override')

    def test_sweep_files(self):
        rows = [{'L': 4, 'volume': 4, 'contact_size': 2, 'xi_E': 1.0, 'g00': 2.0, 'gamma_afv': 1.0,
                 'gamma_ppv': 0.5, 'ratio': 2.0, 'delta_gamma': 0.5, 'status': 'ok', 'regime': 'short_range'}]
        written = ExportService.write_sweep(rows, {'points': 1}, self.directory, ['csv', 'json'])
        self.assertEqual([path.name for path in written], ['sweep.csv', 'sweep_summary.json'])
        header = (self.directory / 'sweep.csv').read_text().splitlines()[0]
        self.assertNotIn('regime', header)
        self.assertTrue(header.startswith('L,volume,contact_size'))
