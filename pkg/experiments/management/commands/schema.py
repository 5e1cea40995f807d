"""
Команда schema: поля документа конфигурации и столбцы выходных файлов
"""
import json

from django.core.management.base import BaseCommand

from experiments.export_service import COLUMN_DOCS
from experiments.serializers import SCHEMA_VERSION, ExperimentConfigSerializer, describe_serializer


class Command(BaseCommand):
    help = 'Печать схемы конфигурации и описания столбцов выходных файлов'

    def handle(self, *args, **options):
        schema = {
            'schema_version': SCHEMA_VERSION,
            'config': describe_serializer(ExperimentConfigSerializer()),
            'outputs': COLUMN_DOCS,
        }
        self.stdout.write(json.dumps(schema, ensure_ascii=False, indent=2, default=str))
