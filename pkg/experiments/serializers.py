"""
Сериализаторы документа конфигурации эксперимента и сертификатов
"""
import math

from rest_framework import serializers
from rest_framework.fields import empty

from .models import CertificateRecord

SCHEMA_VERSION = 1


def finite(value):
    if not math.isfinite(value):
        raise serializers.ValidationError('Значение должно быть конечным числом')


def _default_formats():
    return ['csv', 'json']


class StrictSerializer(serializers.Serializer):
    """Сериализатор, отвергающий неизвестные ключи"""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Неизвестное поле'] for key in unknown})
        return super().to_internal_value(data)


class KernelSerializer(StrictSerializer):
    """Пространственное ядро f(r)"""
    kind = serializers.ChoiceField(choices=['constant', 'delta', 'exponential', 'tabulated'])
    xi = serializers.FloatField(required=False, validators=[finite])
    values = serializers.ListField(child=serializers.FloatField(validators=[finite]), required=False, allow_empty=False)

    def validate_xi(self, value):
        if not value > 0:
            raise serializers.ValidationError('ξ_E должно быть положительным')
        return value

    def validate(self, attrs):
        if attrs['kind'] == 'exponential' and 'xi' not in attrs:
            raise serializers.ValidationError({'xi': ['Экспоненциальное ядро требует ξ_E']})
        if attrs['kind'] == 'tabulated' and 'values' not in attrs:
            raise serializers.ValidationError({'values': ['Табличное ядро требует значения']})
        return attrs


class ContactSerializer(StrictSerializer):
    """Контактная область Λ_C"""
    kind = serializers.ChoiceField(choices=['all', 'block', 'sites'], default='all')
    size = serializers.IntegerField(min_value=1, required=False)
    sites = serializers.ListField(child=serializers.IntegerField(min_value=0), required=False)

    def validate(self, attrs):
        if attrs['kind'] == 'sites' and not attrs.get('sites'):
            raise serializers.ValidationError({'sites': ['Нужен непустой список узлов']})
        return attrs


class ChannelSerializer(StrictSerializer):
    """Второй канал бозонной связи (g⁻)"""
    kernel = KernelSerializer()
    g_bar = serializers.FloatField(min_value=0.0, default=1.0, validators=[finite])


class EnvironmentSerializer(StrictSerializer):
    kernel = KernelSerializer()
    g_bar = serializers.FloatField(min_value=0.0, default=1.0, validators=[finite])
    contact = ContactSerializer(required=False)
    minus = ChannelSerializer(required=False, allow_null=True)
    tau_c = serializers.FloatField(required=False, allow_null=True, default=None, validators=[finite])
    energy_spread_limit = serializers.FloatField(required=False, allow_null=True, default=None, validators=[finite])

    def validate(self, attrs):
        attrs.setdefault('contact', {'kind': 'all'})
        attrs.setdefault('minus', None)
        return attrs


class LatticeModelSerializer(StrictSerializer):
    """Блок модели: изинговская или свободные бозоны"""
    kind = serializers.ChoiceField(choices=['ising', 'free_boson'])
    L = serializers.IntegerField(min_value=1, max_value=64)
    d = serializers.IntegerField(min_value=1, max_value=3, default=1)
    J = serializers.FloatField(default=1.0, validators=[finite])
    n_max = serializers.IntegerField(min_value=1, max_value=40, required=False)
    n_max_excited = serializers.IntegerField(min_value=1, max_value=40, required=False, allow_null=True)
    N = serializers.IntegerField(min_value=0, required=False)
    density = serializers.FloatField(min_value=0.0, required=False, allow_null=True, validators=[finite])
    alpha = serializers.ListField(child=serializers.FloatField(validators=[finite]), min_length=2, max_length=2,
                                  default=lambda: [0.2, 0.0])

    def validate(self, attrs):
        if attrs['kind'] == 'free_boson':
            if attrs.get('density') is None and ('n_max' not in attrs or 'N' not in attrs):
                raise serializers.ValidationError('Бозонная модель требует n_max и N либо плотность density')
        return attrs


class DriveSerializer(StrictSerializer):
    """Параметры связи, времени и сеток"""
    coupling = serializers.FloatField(min_value=0.0, max_value=10.0, default=0.01, validators=[finite])
    t_final = serializers.FloatField(default=1.0, validators=[finite])
    n_steps = serializers.IntegerField(min_value=10, default=100)
    n_quad = serializers.IntegerField(min_value=8, default=16)
    horizon = serializers.FloatField(min_value=0.0, default=1.0, validators=[finite])
    epsilon = serializers.FloatField(default=0.1, validators=[finite])
    n_time = serializers.IntegerField(min_value=32, default=32)
    dynamics = serializers.BooleanField(default=False)
    property_trials = serializers.IntegerField(min_value=0, default=0)

    def validate_t_final(self, value):
        if not value > 0:
            raise serializers.ValidationError('t_final должно быть положительным')
        return value

    def validate_n_quad(self, value):
        if value % 2:
            raise serializers.ValidationError('n_quad должно быть чётным')
        return value

    def validate_epsilon(self, value):
        if not 0 < value <= 1:
            raise serializers.ValidationError('ε должно лежать в (0, 1]')
        return value


class SweepSerializer(StrictSerializer):
    L = serializers.ListField(child=serializers.IntegerField(min_value=1, max_value=64), default=list)
    contact_size = serializers.ListField(child=serializers.IntegerField(min_value=1), default=list)
    coupling = serializers.ListField(
        child=serializers.FloatField(min_value=0.0, max_value=10.0, validators=[finite]), default=list
    )


class OutputSerializer(StrictSerializer):
    directory = serializers.CharField(required=False, allow_null=True, default=None)
    formats = serializers.ListField(child=serializers.ChoiceField(choices=['csv', 'json']), default=_default_formats)
    export_g = serializers.BooleanField(default=False)


class ExperimentConfigSerializer(StrictSerializer):
    """Документ конфигурации эксперимента (schema_version 1)"""
    schema_version = serializers.IntegerField()
    seed = serializers.IntegerField(min_value=0, default=0)
    model = LatticeModelSerializer()
    environment = EnvironmentSerializer()
    drive = DriveSerializer(required=False)
    sweep = SweepSerializer(required=False)
    output = OutputSerializer(required=False)

    OPTIONAL_BLOCKS = {
        'drive': DriveSerializer,
        'sweep': SweepSerializer,
        'output': OutputSerializer,
    }

    def validate_schema_version(self, value):
        if value != SCHEMA_VERSION:
            raise serializers.ValidationError(f'Поддерживается только schema_version {SCHEMA_VERSION}')
        return value

    def validate(self, attrs):
        for name, serializer_class in self.OPTIONAL_BLOCKS.items():
            if name not in attrs:
                block = serializer_class(data={})
                block.is_valid(raise_exception=True)
                attrs[name] = block.validated_data
        return attrs


class CertificateRecordSerializer(serializers.ModelSerializer):
    """Сертификат для JSON-отчёта"""
    config_hash = serializers.SerializerMethodField()
    code_version = serializers.SerializerMethodField()
    status = serializers.ReadOnlyField()

    class Meta:
        model = CertificateRecord
        fields = [
            'name', 'point_index', 'lhs', 'rhs', 'slack',
            'preconditions_met', 'passed', 'status', 'details',
            'config_hash', 'code_version'
        ]

    def get_config_hash(self, obj):
        return obj.run.config_hash

    def get_code_version(self, obj):
        return obj.run.code_version


def describe_serializer(serializer) -> dict:
    """Схема полей: тип, обязательность, значение по умолчанию, диапазоны и варианты"""
    schema = {}
    for name, field in serializer.fields.items():
        entry = {'type': type(field).__name__, 'required': field.required}
        if field.default is not empty:
            entry['default'] = field.default() if callable(field.default) else field.default
        for attribute in ('min_value', 'max_value', 'min_length', 'max_length'):
            value = getattr(field, attribute, None)
            if value is not None:
                entry[attribute] = value
        if getattr(field, 'allow_null', False):
            entry['nullable'] = True
        if isinstance(field, serializers.ChoiceField):
            entry['choices'] = list(field.choices)
        if isinstance(field, serializers.ListField):
            entry['items'] = type(field.child).__name__
            if isinstance(field.child, serializers.ChoiceField):
                entry['choices'] = list(field.child.choices)
        if isinstance(field, serializers.Serializer):
            entry['fields'] = describe_serializer(field)
        schema[name] = entry
    return schema
