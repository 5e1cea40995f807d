"""
Общая основа команд лаборатории: разбор флагов, загрузка конфигурации и коды выхода
"""
import logging

from django.core.management.base import BaseCommand, CommandError

from experiments.export_service import ExportService
from experiments.runner_service import ExperimentRunner, RunResult, load_config
from physics.exceptions import (
    ConfigError,
    ConvergenceError,
    CutoffError,
    DimensionError,
    KernelError,
    LabError,
    MomentumGridError,
    PositivityError,
)

logger = logging.getLogger('experiments')

EXIT_CERTIFICATE = 1
EXIT_CONFIG = 2
EXIT_NUMERICS = 3
EXIT_INTERNAL = 4

CONFIG_ERRORS = (ConfigError, DimensionError, MomentumGridError, CutoffError, KernelError)
NUMERIC_ERRORS = (ConvergenceError, PositivityError)


def exit_code(error: Exception) -> int:
    """Код выхода для ошибки запуска; непредвиденные исключения отделены от отказов сертификатов"""
    if isinstance(error, NUMERIC_ERRORS):
        return EXIT_NUMERICS
    if isinstance(error, LabError):
        return EXIT_CONFIG
    return EXIT_INTERNAL


class LabCommand(BaseCommand):
    """Базовая команда: --config, --out, --seed, --threads"""
    command_name = 'run'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='JSON-документ конфигурации эксперимента')
        parser.add_argument('--out', default=None, help='Каталог результатов (перекрывает output.directory)')
        parser.add_argument('--seed', type=int, default=None, help='Seed генератора (перекрывает seed конфигурации)')
        parser.add_argument('--threads', type=int, default=1, help='Число потоков для точек развёртки')

    def handle(self, *args, **options):
        try:
            config = load_config(options['config'])
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc

        runner = ExperimentRunner(config, self.command_name, seed=options['seed'],
                                  threads=options['threads'], config_path=options['config'])
        result = runner.run()
        directory = ExportService.output_directory(config, options['out'])
        self.export(result, config, directory)

        if result.error is not None:
            raise CommandError(str(result.error), returncode=exit_code(result.error))
        self.report(result, directory)

    def export(self, result: RunResult, config, directory):
        """Выгрузка результатов; вызывается и для частично посчитанных запусков"""
        ExportService.write_points(result.rows, directory)

    def report(self, result: RunResult, directory):
        self.stdout.write(self.style.SUCCESS(f'Готово: {len(result.rows)} точек, результаты в {directory}'))
