"""
Исключения численного ядра
"""


class LabError(Exception):
    """Базовая ошибка лаборатории"""


class DimensionError(LabError):
    """Несовпадение размерностей или слишком большое гильбертово пространство"""


class MomentumGridError(LabError):
    """Импульс не лежит на сетке 2πn/L"""


class CutoffError(LabError):
    """Нарушено ограничение обрезки пространства Фока"""


class NormalizationError(LabError):
    """Вектор состояния не нормирован"""


class HermiticityError(LabError):
    """Оператор, который должен быть эрмитовым, таковым не является"""


class KernelError(LabError):
    """Нефизичное ядро корреляций окружения (нарушена положительность g)"""


class PositivityError(LabError):
    """Потеря положительности матрицы плотности или матрицы g"""


class ConvergenceError(LabError):
    """Не сошлась квадратура или интегратор"""


class PreconditionError(LabError):
    """Не выполнены предусловия операции"""


class ParityError(LabError):
    """Нет структуры чётности или возмущение её нарушает"""


class ConfigError(LabError):
    """Документ конфигурации эксперимента не читается или не проходит проверку"""
