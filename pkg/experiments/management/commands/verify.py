"""
Команда verify: сертификаты как ворота, ненулевой код выхода при любом непройденном
"""
from django.core.management.base import CommandError

from ._base import EXIT_CERTIFICATE
from .run import Command as RunCommand


class Command(RunCommand):
    help = 'Проверка сертификатов: одна строка на сертификат, код 1 при любом непройденном'
    command_name = 'verify'

    def report(self, result, directory):
        for index, certificate in result.certificates:
            line = (f'[{index}] {certificate.name}: {certificate.status} '
                    f'lhs={certificate.lhs} rhs={certificate.rhs} slack={certificate.slack}')
            style = self.style.SUCCESS if certificate.status == 'pass' else self.style.ERROR
            self.stdout.write(style(line))

        failed = result.failed_certificates()
        if failed:
            names = ', '.join(sorted({certificate.name for _, certificate in failed}))
            raise CommandError(f'Не пройдено сертификатов: {len(failed)} ({names})', returncode=EXIT_CERTIFICATE)
        self.stdout.write(self.style.SUCCESS(f'Все сертификаты пройдены, результаты в {directory}'))
