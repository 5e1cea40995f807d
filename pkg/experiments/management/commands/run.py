"""
Команда run: одна конфигурация, все точки, все сертификаты без ворот
"""
from experiments.export_service import ExportService
from experiments.serializers import CertificateRecordSerializer

from ._base import LabCommand


class Command(LabCommand):
    help = 'Запуск эксперимента: энтропии, скорости и сертификаты по документу конфигурации'
    command_name = 'run'

    def export(self, result, config, directory):
        super().export(result, config, directory)
        certificates = CertificateRecordSerializer(result.record.certificates.all(), many=True).data
        run_info = {
            'config_hash': result.config_hash,
            'code_version': result.record.code_version,
            'command': result.command,
            'status': result.status,
            'wall_clock': result.wall_clock,
        }
        ExportService.write_certificates(certificates, run_info, directory)

        single_point = len(result.points) == 1
        for point in result.points:
            if point.trajectory is not None:
                ExportService.write_trajectory(point.trajectory, point.point.index, directory)
            if config['output']['export_g']:
                for corr in point.correlations:
                    ExportService.write_g(corr, point.point.index, directory, single_point)
