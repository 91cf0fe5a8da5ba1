"""
Утилитный модуль с централизованными путями для файловых операций.
"""

from __future__ import annotations

from pathlib import Path

# === Логи приложения ===

# Относительный путь для логов (от текущей рабочей директории).
LOGS_DIR: str = "logs"

# Имя файла логов внутри LOGS_DIR.
LOG_FILE_NAME: str = "coreset.log"


def resolve_logs_dir() -> Path:
    """
    Возвращает путь к директории с логами.

    При локальном запуске это <cwd>/logs.
    """

    return Path(LOGS_DIR)


def resolve_relative(base_file: Path, value: str) -> Path:
    """
    Разрешает путь из манифеста относительно директории самого манифеста.

    Абсолютные пути возвращаются как есть.
    """

    candidate = Path(value)
    if candidate.is_absolute():
        return candidate
    return (base_file.parent / candidate).resolve()
