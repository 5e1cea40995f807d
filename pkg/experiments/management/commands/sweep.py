"""
Команда sweep: развёртка по L, |Λ_C| и λ со сводными показателями скейлинга
"""
from experiments.export_service import ExportService
from experiments.runner_service import sweep_summary

from ._base import LabCommand


class Command(LabCommand):
    help = 'Развёртка параметров: sweep.csv и показатели степенных законов'
    command_name = 'sweep'

    def export(self, result, config, directory):
        super().export(result, config, directory)
        self.summary = sweep_summary(result.rows)
        self.summary['config_hash'] = result.config_hash
        ExportService.write_sweep(result.rows, self.summary, directory, config['output']['formats'])

    def report(self, result, directory):
        for name, fit in self.summary['fits'].items():
            if fit['exponent'] is None:
                self.stdout.write(f'{name}: нет оценки ({fit["reason"]})')
            else:
                self.stdout.write(f'{name}: показатель {fit["exponent"]:.4f} (R²={fit["r2"]:.4f})')
        super().report(result, directory)
