"""
Параметры одного запуска подкоманды и их эхо в выходных файлах.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from services.score_algebra import resolve_count
from utils.dataset_io import format_echo, format_echo_value
from utils.errors import ConfigError

# Команды, которым нужен ровно один из --count и --fraction
COUNTED_COMMANDS = frozenset({"select", "baseline"})
DEFAULT_SEED = 0


@dataclass(frozen=True, slots=True)
class RunConfig:
    """
    Флаги подкоманды.

    Эхо содержит все параметры с отсортированными ключами, включая seed:
    по первой строке выходного файла команду можно повторить.
    Служебные флаги (--threads, --log-level) в эхо не входят, на результат они не влияют.
    """

    command: str
    options: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        options = {key: _normalize(value) for key, value in self.options.items()}
        if options.get("seed") is None:
            options["seed"] = DEFAULT_SEED
        if self.command in COUNTED_COMMANDS:
            count, fraction = options.get("count"), options.get("fraction")
            if (count is None) == (fraction is None):
                raise ConfigError("exactly one of --count and --fraction must be given")
            if fraction is not None and not (isinstance(fraction, float) and 0.0 < fraction <= 1.0):
                raise ConfigError(f"--fraction must be in (0, 1], got {fraction}")
            if count is not None and (not isinstance(count, int) or count < 1):
                raise ConfigError(f"--count must be a positive integer, got {count}")
        object.__setattr__(self, "options", options)

    @property
    def seed(self) -> int:
        return int(self.options["seed"])  # type: ignore[call-overload]

    def count_for(self, n: int) -> int:
        count = self.options.get("count")
        fraction = self.options.get("fraction")
        return resolve_count(
            n,
            count=count if isinstance(count, int) else None,
            fraction=fraction if isinstance(fraction, float) else None,
        )

    def echo(self) -> str:
        return format_echo(self.command, self.options)

    def provenance(self) -> str:
        """Эхо без ведущего `# ` для комментариев столбцов таблицы оценок."""
        return self.echo()[2:]

    def as_params(self) -> dict[str, str]:
        return {key: format_echo_value(value) for key, value in self.options.items()}


def _normalize(value: object) -> object:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, Enum):
        return value.value
    return value
