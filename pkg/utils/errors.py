"""
Иерархия исключений пайплайна отбора.

Все ошибки входных данных наследуются от ValueError, как и в остальном коде
проекта, и несут короткий машинный код: CLI печатает его в однострочном
сообщении `error[<code>]: <message>`.
"""

from __future__ import annotations

from typing import ClassVar


class CoresetError(ValueError):
    """Базовая ошибка пайплайна отбора."""

    code: ClassVar[str] = "coreset"


class MissingInputError(CoresetError):
    """Отсутствует входной файл или обязательный входной столбец/параметр."""

    code: ClassVar[str] = "missing_input"


class ManifestError(CoresetError):
    """Манифест не разбирается или нарушает инварианты."""

    code: ClassVar[str] = "manifest"


class DecodeError(CoresetError):
    """Изображение или маска не декодируется либо имеет неподдерживаемый формат."""

    code: ClassVar[str] = "decode"


class FeatureFileError(CoresetError):
    code: ClassVar[str] = "features"


class ScoreFileError(CoresetError):
    code: ClassVar[str] = "scores"


class ConfigError(CoresetError):
    """Недопустимая комбинация или значение параметров."""

    code: ClassVar[str] = "config"


class ScoreError(CoresetError):
    code: ClassVar[str] = "score"


class GraphError(CoresetError):
    code: ClassVar[str] = "graph"


class SelectionError(CoresetError):
    code: ClassVar[str] = "selection"
