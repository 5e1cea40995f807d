from django.db import models


class RunRecord(models.Model):
    """Запуск эксперимента"""
    STATUS_OK = 'ok'
    STATUS_FAILED = 'failed'
    STATUS_CHOICES = [
        (STATUS_OK, 'Успешно'),
        (STATUS_FAILED, 'Ошибка'),
    ]

    config_hash = models.CharField(max_length=64, db_index=True, verbose_name='Хэш конфигурации')
    config_path = models.CharField(max_length=500, blank=True, verbose_name='Путь к конфигурации')
    code_version = models.CharField(max_length=32, verbose_name='Версия кода')
    command = models.CharField(max_length=20, verbose_name='Команда')
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default=STATUS_OK, verbose_name='Статус')
    results = models.JSONField(default=list, verbose_name='Результаты по точкам')
    wall_clock = models.FloatField(default=0.0, verbose_name='Время выполнения (с)')
    created_at = models.DateTimeField(auto_now_add=True, verbose_name='Дата запуска')

    class Meta:
        verbose_name = 'Запуск'
        verbose_name_plural = 'Запуски'
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.command} {self.config_hash[:12]} ({self.status})"


class CertificateRecord(models.Model):
    """Сертификат нижней оценки для одной точки запуска"""
    run = models.ForeignKey(
        RunRecord,
        on_delete=models.CASCADE,
        related_name='certificates',
        verbose_name='Запуск'
    )
    name = models.CharField(max_length=50, verbose_name='Название')
    point_index = models.PositiveIntegerField(default=0, verbose_name='Номер точки')
    lhs = models.FloatField(null=True, blank=True, verbose_name='Левая часть')
    rhs = models.FloatField(null=True, blank=True, verbose_name='Правая часть')
    slack = models.FloatField(null=True, blank=True, verbose_name='Запас')
    preconditions_met = models.BooleanField(default=True, verbose_name='Предусловия выполнены')
    passed = models.BooleanField(null=True, verbose_name='Пройден')
    details = models.JSONField(default=dict, verbose_name='Подробности')

    class Meta:
        verbose_name = 'Сертификат'
        verbose_name_plural = 'Сертификаты'
        ordering = ['run', 'point_index', 'name']

    def __str__(self):
        return f"{self.name}[{self.point_index}]: {self.status}"

    @property
    def status(self) -> str:
        if not self.preconditions_met:
            return 'preconditions unmet'
        return 'pass' if self.passed else 'fail'
