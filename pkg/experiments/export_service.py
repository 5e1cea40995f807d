"""
Сервис выгрузки результатов через pandas
CSV для табличных данных, JSON для сертификатов и сводок
"""
import json
import math
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from django.conf import settings

from physics.environment_service import EnvCorrelation

SWEEP_COLUMNS = ['L', 'volume', 'contact_size', 'xi_E', 'g00', 'gamma_afv', 'gamma_ppv', 'ratio', 'delta_gamma']

COLUMN_DOCS = {
    'points.csv': {
        'index': 'номер точки развёртки',
        'L': 'линейный размер решётки',
        'volume': '|Λ|',
        'contact_size': '|Λ_C|',
        'xi_E': 'радиус корреляций окружения',
        'regime': 'long_range или short_range',
        'g00': 'g₀₀ (для бозонов: канал plus)',
        'coupling': 'λ',
        'prefactor': 'λ²/ħ²',
        'gamma_afv': 'наклон S^(1) для AFV',
        'gamma_ppv': 'наклон S^(1) для PPV',
        'ratio': 'γ̂_AFV / γ̂_PPV',
        'delta_gamma': 'γ̂_AFV - γ̂_PPV',
        'n0_measured': 'Δγ̂ / (λ²(g⁺₀₀+g⁻₀₀)), только бозоны',
        'n0_expected': 'N/|Λ|, только бозоны',
        'convention_ratio': 'скорость потери чистоты / подынтегральное выражение S^(1) при t=0',
        'status': 'ok или failed',
        'error': 'сообщение об ошибке для точки failed',
    },
    'trajectory_<i>.csv': {
        't': 'время',
        'S_lin': '1 - tr ρ²',
        'trace': 'tr ρ',
        'min_eig': 'наименьшее собственное значение ρ',
        'M': 'Re tr(ρM)',
        'dM_dM': '⟨δM†δM⟩',
    },
    'g_<label>.csv': {
        'k1': 'номер импульса строки',
        'k2': 'номер импульса столбца',
        'real': 'Re g_{k1k2}',
        'imag': 'Im g_{k1k2}',
    },
    'sweep.csv': {name: 'см. points.csv' for name in SWEEP_COLUMNS},
}


class ExportService:
    """Сервис выгрузки результатов"""

    @staticmethod
    def json_ready(value):
        """Приведение numpy-типов и нечисловых значений к виду, пригодному для JSON"""
        if isinstance(value, dict):
            return {str(key): ExportService.json_ready(item) for key, item in value.items()}
        if isinstance(value, (list, tuple)):
            return [ExportService.json_ready(item) for item in value]
        if isinstance(value, np.ndarray):
            return ExportService.json_ready(value.tolist())
        if isinstance(value, np.generic):
            return ExportService.json_ready(value.item())
        if isinstance(value, complex):
            return [ExportService.json_ready(value.real), ExportService.json_ready(value.imag)]
        if isinstance(value, float) and not math.isfinite(value):
            return None
        return value

    @staticmethod
    def output_directory(config: Dict, override: Optional[str] = None) -> Path:
        directory = override or config['output'].get('directory') or settings.LAB['OUTPUT_DIR']
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        return directory

    @staticmethod
    def write_json(data, path: Path) -> Path:
        path.write_text(json.dumps(ExportService.json_ready(data), ensure_ascii=False, indent=2), encoding='utf-8')
        return path

    @staticmethod
    def write_points(rows: List[Dict], directory: Path) -> Path:
        df = pd.DataFrame(rows)
        path = directory / 'points.csv'
        df.to_csv(path, index=False)
        return path

    @staticmethod
    def write_trajectory(df: pd.DataFrame, index: int, directory: Path) -> Path:
        path = directory / f'trajectory_{index}.csv'
        df.to_csv(path, index=False)
        return path

    @staticmethod
    def write_g(corr: EnvCorrelation, index: int, directory: Path, single_point: bool = True) -> Path:
        name = f'g_{corr.label}.csv' if single_point else f'g_{corr.label}_{index}.csv'
        return corr.export_csv(directory / name)

    @staticmethod
    def write_certificates(certificates: List[Dict], run_info: Dict, directory: Path) -> Path:
        return ExportService.write_json({'run': run_info, 'certificates': certificates},
                                        directory / 'certificates.json')

    @staticmethod
    def write_sweep(rows: List[Dict], summary: Dict, directory: Path, formats: List[str]) -> List[Path]:
        written = []
        if 'csv' in formats:
            df = pd.DataFrame(rows)
            columns = [column for column in SWEEP_COLUMNS + ['status', 'error'] if column in df.columns]
            path = directory / 'sweep.csv'
            df[columns].to_csv(path, index=False)
            written.append(path)
        if 'json' in formats:
            written.append(ExportService.write_json(summary, directory / 'sweep_summary.json'))
        return written
