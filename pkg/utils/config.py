"""
Модуль конфигурации приложения.
Содержит настройки, читаемые из переменных окружения, и константы по умолчанию.

Переменные окружения управляют только "окружением" запуска (уровень логирования,
запись логов в файл). Параметры отбора (качество JPEG, K, σ, m и т.д.) задаются
исключительно флагами командной строки, чтобы каждый выходной файл полностью
описывал, как он был получен.
"""

import os

from dotenv import load_dotenv

_DOTENV_STATE = {"loaded": False}

_TRUE_VALUES = {"true", "1", "yes", "on"}


def _load_dotenv_if_needed() -> None:
    """
    Ленивый fallback: при первом обращении к отсутствующей переменной
    пробуем загрузить их из локального `.env` без жестко заданного пути.
    """
    if _DOTENV_STATE["loaded"]:
        return
    try:
        load_dotenv()
    except Exception as e:
        # Используем стандартный logging, чтобы избежать циклических импортов с utils.logger
        import logging

        logging.getLogger(__name__).debug(f"Не удалось загрузить .env файл (игнорируется): {e}")
    _DOTENV_STATE["loaded"] = True


class Config:
    """
    Класс для управления конфигурацией приложения.
    """

    @staticmethod
    def _get_env_var(name: str) -> str | None:
        """
        Получает значение переменной окружения.

        Args:
            name: Имя переменной окружения

        Returns:
            Значение переменной или None, если переменная не найдена
        """
        value = os.getenv(name)
        if value is not None:
            return value

        # Если переменная не найдена, один раз пробуем подгрузить .env через python-dotenv
        _load_dotenv_if_needed()
        return os.getenv(name)

    @property
    def log_level(self) -> str:
        """
        Уровень логирования.

        Returns:
            Уровень логирования из переменной LOG_LEVEL или "INFO" по умолчанию
        """
        return (Config._get_env_var("LOG_LEVEL") or "INFO").upper()

    @property
    def log_to_file(self) -> bool:
        """
        Писать ли логи дополнительно в файл `logs/coreset.log`.

        Returns:
            True, если LOG_TO_FILE установлена в true/1/yes/on
        """
        value = Config._get_env_var("LOG_TO_FILE")
        if value is None:
            return False
        return value.strip().lower() in _TRUE_VALUES


# Создаем глобальный экземпляр конфигурации
config = Config()


class BppDefaults:
    """Значения по умолчанию для оценки BPP_J."""

    # "Наивысшее качество" фиксируем как quality=100 без субдискретизации цветности (4:4:4)
    JPEG_QUALITY = 100
    CHROMA_SUBSAMPLING = "none"
    MIN_QUALITY = 1
    MAX_QUALITY = 100

    # Множитель IQR для нижней границы выбросов (ограда Тьюки)
    OUTLIER_IQR_FACTOR = 1.5


class KMeansDefaults:
    """Значения по умолчанию для k-means (оценка прототипичности)."""

    MAX_ITER = 300
    TOL = 1e-6
    N_INIT = 1
    SEED = 0

    # Допуск на округление при проверке монотонности искажения между итерациями
    MONOTONE_RTOL = 1e-12


class HistogramDefaults:
    """Значения по умолчанию для гистограмм меток сегментации."""

    # Конвенция масок VOC/ADE: 255 означает "void", игнорируемый пиксель
    IGNORE_INDEX = 255


class GraphDefaults:
    """Значения по умолчанию для K-NN графа."""

    # Ширина ядра по умолчанию: медиана расстояний рёбер (флаг --sigma median)
    SIGMA_POLICY = "median"
    # Нижняя граница σ, если медиана расстояний равна нулю
    SIGMA_FLOOR = 1e-12
    # Размер блока строк при полном переборе соседей
    ROW_BLOCK = 256


class SynthDefaults:
    """Параметры синтетического бенчмарка `synth`."""

    CLUSTERS = 5
    POINTS_PER_CLUSTER = 100
    COUNT = 10
    KNN = 10
    SEED = 1
    RUNS = 1

    # Центры кластеров лежат на окружности такого радиуса, разброс внутри кластера = CLUSTER_STD
    CENTER_RADIUS = 10.0
    CLUSTER_STD = 1.0
    # Масштаб затухания оценки по рангу расстояния до центра собственного кластера
    RANK_DECAY = 10.0
