# Generated by Django 4.2.7 on 2026-10-18 12:00

from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='RunRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('config_hash', models.CharField(db_index=True, max_length=64, verbose_name='Хэш конфигурации')),
                ('config_path', models.CharField(blank=True, max_length=500, verbose_name='Путь к конфигурации')),
                ('code_version', models.CharField(max_length=32, verbose_name='Версия кода')),
                ('command', models.CharField(max_length=20, verbose_name='Команда')),
                ('status', models.CharField(choices=[('ok', 'Успешно'), ('failed', 'Ошибка')], default='ok', max_length=10, verbose_name='Статус')),
                ('results', models.JSONField(default=list, verbose_name='Результаты по точкам')),
                ('wall_clock', models.FloatField(default=0.0, verbose_name='Время выполнения (с)')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='Дата запуска')),
            ],
            options={
                'verbose_name': 'Запуск',
                'verbose_name_plural': 'Запуски',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='CertificateRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=50, verbose_name='Название')),
                ('point_index', models.PositiveIntegerField(default=0, verbose_name='Номер точки')),
                ('lhs', models.FloatField(blank=True, null=True, verbose_name='Левая часть')),
                ('rhs', models.FloatField(blank=True, null=True, verbose_name='Правая часть')),
                ('slack', models.FloatField(blank=True, null=True, verbose_name='Запас')),
                ('preconditions_met', models.BooleanField(default=True, verbose_name='Предусловия выполнены')),
                ('passed', models.BooleanField(null=True, verbose_name='Пройден')),
                ('details', models.JSONField(default=dict, verbose_name='Подробности')),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='certificates', to='experiments.runrecord', verbose_name='Запуск')),
            ],
            options={
                'verbose_name': 'Сертификат',
                'verbose_name_plural': 'Сертификаты',
                'ordering': ['run', 'point_index', 'name'],
            },
        ),
    ]
