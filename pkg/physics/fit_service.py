"""
Сервис регрессий для скейлинговых законов
Использует scikit-learn: степенные показатели и наклоны через начало координат
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.linear_model import LinearRegression

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerLawFit:
    """Результат аппроксимации y = C·x^p в двойном логарифмическом масштабе"""
    exponent: float
    prefactor: float
    r2: float
    n_points: int


@dataclass(frozen=True)
class OriginSlopeFit:
    slope: float
    max_relative_residual: float
    n_points: int

    def is_linear(self, tolerance: float = 0.01) -> bool:
        return self.max_relative_residual <= tolerance


class ScalingFitService:
    """Сервис регрессий на scikit-learn"""

    MIN_POWER_LAW_POINTS = 2

    @staticmethod
    def power_law(x: Sequence[float], y: Sequence[float]) -> Optional[PowerLawFit]:
        """
        Показатель степени по log-log регрессии; None, если положительных точек мало
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        mask = (x > 0) & (y > 0)
        if mask.sum() < ScalingFitService.MIN_POWER_LAW_POINTS:
            logger.debug('Недостаточно точек для степенной аппроксимации: %s', int(mask.sum()))
            return None

        log_x = np.log(x[mask]).reshape(-1, 1)
        log_y = np.log(y[mask])
        model = LinearRegression()
        model.fit(log_x, log_y)
        return PowerLawFit(
            exponent=float(model.coef_[0]),
            prefactor=float(np.exp(model.intercept_)),
            r2=float(model.score(log_x, log_y)) if mask.sum() > 2 else 1.0,
            n_points=int(mask.sum()),
        )

    @staticmethod
    def slope_through_origin(t: Sequence[float], y: Sequence[float]) -> OriginSlopeFit:
        """Наклон y = γ·t методом наименьших квадратов без свободного члена"""
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        if t.size == 0 or not np.any(t != 0):
            return OriginSlopeFit(slope=0.0, max_relative_residual=0.0, n_points=int(t.size))

        model = LinearRegression(fit_intercept=False)
        model.fit(t.reshape(-1, 1), y)
        slope = float(model.coef_[0])

        predicted = slope * t
        scale = np.max(np.abs(y))
        if scale == 0:
            residual = 0.0
        else:
            residual = float(np.max(np.abs(y - predicted)) / scale)
        return OriginSlopeFit(slope=slope, max_relative_residual=residual, n_points=int(t.size))
