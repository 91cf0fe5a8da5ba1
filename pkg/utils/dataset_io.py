"""
Ввод-вывод набора данных.

Манифест (JSON-Lines), декодирование изображений и масок сегментации,
матрицы признаков и таблицы оценок (CSV), файлы отбора. Все загруженные
структуры неизменяемы: dataclass(frozen=True), numpy-массивы только для чтения.
"""

from __future__ import annotations

import csv
import json
import math
import shlex
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray
from PIL import Image, UnidentifiedImageError

from utils.errors import (
    CoresetError,
    DecodeError,
    FeatureFileError,
    ManifestError,
    MissingInputError,
    ScoreError,
    ScoreFileError,
    SelectionError,
)
from utils.logger import get_logger, log_execution
from utils.paths import resolve_relative

logger = get_logger(__name__)

SUPPORTED_IMAGE_FORMATS = frozenset({"PNG", "JPEG"})
ECHO_PREFIX = "# coreset-select"
SELECTION_HEADER = ("rank", "id", "original_score", "final_score")

_HEADER_KEYS = frozenset({"feature_file", "score_file"})
_RECORD_KEYS = frozenset({"id", "image", "mask", "feature_row", "label"})
# Режимы Pillow с альфа-каналом или не-RGB цветовыми моделями
_ALPHA_MODES = frozenset({"LA", "La", "PA", "RGBA", "RGBa"})
_WIDE_MODES = frozenset({"I", "F", "I;16", "I;16B", "I;16L", "I;16N"})


def _readonly(array: NDArray[Any]) -> NDArray[Any]:
    array.setflags(write=False)
    return array


# === Доменные типы ===


@dataclass(frozen=True, slots=True)
class SampleRecord:
    """Одна запись манифеста. Пути хранятся уже разрешёнными."""

    id: str
    image_path: Path
    mask_path: Path | None = None
    feature_row: int | None = None
    label: int | None = None


@dataclass(frozen=True, slots=True)
class DatasetManifest:
    """
    Упорядоченный список записей.

    Порядок записей задаёт каноническую индексацию образцов для всех
    остальных модулей (оценки, граф, отбор).
    """

    records: tuple[SampleRecord, ...]
    feature_file: Path | None = None
    score_file: Path | None = None

    def __post_init__(self) -> None:
        if not self.records:
            raise ManifestError("empty manifest")
        seen: set[str] = set()
        for record in self.records:
            if record.id in seen:
                raise ManifestError(f"duplicate id '{record.id}'")
            seen.add(record.id)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(record.id for record in self.records)

    @property
    def declared_num_classes(self) -> int | None:
        """Число различных меток классов, если метка есть у каждой записи."""
        labels = [record.label for record in self.records]
        if any(label is None for label in labels):
            return None
        return len(set(labels))

    def subset(self, ids: Sequence[str]) -> DatasetManifest:
        """
        Манифест из записей `ids` в заданном порядке.

        Строка признаков каждой записи закрепляется явно, поэтому общий файл
        признаков остаётся пригодным. Файл оценок не переносится: в нём строки
        всего набора.
        """
        position = {record.id: index for index, record in enumerate(self.records)}
        records: list[SampleRecord] = []
        for sample_id in ids:
            if sample_id not in position:
                raise ManifestError(f"id '{sample_id}' is not in the manifest")
            index = position[sample_id]
            record = self.records[index]
            records.append(replace(record, feature_row=index if record.feature_row is None else record.feature_row))
        return DatasetManifest(records=tuple(records), feature_file=self.feature_file)


@dataclass(frozen=True, slots=True)
class PixelBuffer:
    """8-битное изображение в построчном порядке: 1 канал (оттенки серого) или 3 (RGB)."""

    width: int
    height: int
    channels: int
    data: bytes

    def __post_init__(self) -> None:
        if self.channels not in {1, 3}:
            raise DecodeError(f"unsupported channel count {self.channels}")
        expected = self.width * self.height * self.channels
        if len(self.data) != expected:
            raise DecodeError(f"pixel buffer holds {len(self.data)} bytes, expected {expected}")

    @classmethod
    def from_array(cls, array: NDArray[Any]) -> PixelBuffer:
        """Строит буфер из массива (h, w) или (h, w, 3) с dtype uint8."""
        if array.dtype != np.uint8:
            raise DecodeError(f"pixel array must be uint8, got {array.dtype}")
        if array.ndim == 2:  # noqa: PLR2004
            height, width = array.shape
            channels = 1
        elif array.ndim == 3 and array.shape[2] == 3:  # noqa: PLR2004
            height, width, channels = array.shape
        else:
            raise DecodeError(f"pixel array must have shape (h, w) or (h, w, 3), got {array.shape}")
        return cls(width=width, height=height, channels=channels, data=np.ascontiguousarray(array).tobytes())


@dataclass(frozen=True, slots=True, eq=False)
class MaskBuffer:
    """Маска сегментации: сырые индексы классов в построчном порядке."""

    width: int
    height: int
    labels: NDArray[np.int64]

    def __post_init__(self) -> None:
        labels = np.array(self.labels, dtype=np.int64).ravel()
        if labels.size != self.width * self.height:
            raise DecodeError(f"mask holds {labels.size} labels, expected {self.width * self.height}")
        if labels.size and int(labels.min()) < 0:
            raise DecodeError("mask labels must be non-negative")
        object.__setattr__(self, "labels", _readonly(labels))


@dataclass(frozen=True, slots=True, eq=False)
class FeatureMatrix:
    """Матрица признаков (n, d) с идентификаторами строк. Значения не масштабируются."""

    ids: tuple[str, ...]
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:  # noqa: PLR2004
            raise FeatureFileError(f"feature matrix must be 2-D, got {values.ndim}-D")
        if values.shape[0] != len(self.ids):
            raise FeatureFileError(f"feature matrix has {values.shape[0]} rows but {len(self.ids)} ids")
        if not np.isfinite(values).all():
            row = int(np.flatnonzero(~np.isfinite(values).all(axis=1))[0])
            raise FeatureFileError(f"non-finite feature value for '{self.ids[row]}'")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "values", _readonly(values))

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True, slots=True, eq=False)
class ScoreTable:
    """
    Таблица оценок: столбцы (bpp, nll, cpx, ps, ...) выровнены по ids.

    provenance хранит для столбца строку-эхо команды, которой он получен;
    при записи она выводится комментарием `#[<name>] ...`.
    """

    ids: tuple[str, ...]
    columns: Mapping[str, NDArray[np.float64]]
    provenance: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = tuple(self.ids)
        if len(set(ids)) != len(ids):
            raise ScoreError("score table ids must be unique")
        columns: dict[str, NDArray[np.float64]] = {}
        for name, raw in self.columns.items():
            values = np.array(raw, dtype=np.float64).ravel()
            if values.size != len(ids):
                raise ScoreError(f"column '{name}' has {values.size} values for {len(ids)} ids")
            bad = np.flatnonzero(~np.isfinite(values))
            if bad.size:
                raise ScoreError(f"non-finite '{name}' score for '{ids[int(bad[0])]}'")
            columns[name] = _readonly(values)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.columns)

    def column(self, name: str) -> NDArray[np.float64]:
        if name not in self.columns:
            raise MissingInputError(f"score column '{name}' not found (available: {', '.join(self.names) or 'none'})")
        return self.columns[name]

    def with_column(self, name: str, values: Sequence[float] | NDArray[Any], provenance: str | None = None) -> ScoreTable:
        """Возвращает новую таблицу с добавленным (или заменённым) столбцом."""
        columns = dict(self.columns)
        columns[name] = np.asarray(values, dtype=np.float64)
        prov = dict(self.provenance)
        if provenance is not None:
            prov[name] = provenance
        else:
            prov.pop(name, None)
        return ScoreTable(ids=self.ids, columns=columns, provenance=prov)

    def aligned_to(self, ids: Sequence[str]) -> ScoreTable:
        """Переупорядочивает строки под заданный порядок ids (обычно порядок манифеста)."""
        ids = tuple(ids)
        if ids == self.ids:
            return self
        position = {sample_id: index for index, sample_id in enumerate(self.ids)}
        missing = [sample_id for sample_id in ids if sample_id not in position]
        if missing:
            raise ScoreFileError(f"score table has no row for id '{missing[0]}'")
        if len(ids) != len(self.ids):
            extra = next(sample_id for sample_id in self.ids if sample_id not in set(ids))
            raise ScoreFileError(f"score table has a row for unknown id '{extra}'")
        order = np.array([position[sample_id] for sample_id in ids], dtype=np.intp)
        return ScoreTable(
            ids=ids,
            columns={name: values[order] for name, values in self.columns.items()},
            provenance=self.provenance,
        )


@dataclass(frozen=True, slots=True)
class SelectionEntry:
    id: str
    original_score: float
    final_score: float


@dataclass(frozen=True, slots=True)
class Selection:
    """Упорядоченный результат отбора и полный набор параметров, которыми он получен."""

    entries: tuple[SelectionEntry, ...]
    params: Mapping[str, str] = field(default_factory=dict)
    command: str = "select"

    def __post_init__(self) -> None:
        ids = [entry.id for entry in self.entries]
        if len(set(ids)) != len(ids):
            raise SelectionError("selection ids must be unique")
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "params", {key: str(value) for key, value in self.params.items()})

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(entry.id for entry in self.entries)


# === Эхо параметров ===


def format_echo_value(value: object) -> str:
    """Каноническое строковое представление значения параметра."""
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


def format_echo(command: str, params: Mapping[str, object]) -> str:
    """Строка `# coreset-select <command> key=value ...` с отсортированными ключами."""
    parts = [f"{key}={shlex.quote(format_echo_value(params[key]))}" for key in sorted(params)]
    return " ".join([ECHO_PREFIX, command, *parts])


def parse_echo(line: str) -> tuple[str, dict[str, str]]:
    """Разбирает строку-эхо обратно в (команда, параметры)."""
    if not line.startswith(ECHO_PREFIX):
        raise SelectionError(f"not a parameter echo line: {line.strip()!r}")
    tokens = shlex.split(line[len(ECHO_PREFIX) :])
    if not tokens:
        raise SelectionError("parameter echo line has no command")
    params: dict[str, str] = {}
    for token in tokens[1:]:
        key, sep, value = token.partition("=")
        if not sep:
            raise SelectionError(f"malformed parameter {token!r} in echo line")
        params[key] = value
    return tokens[0], params


# === Манифест ===


def _require_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise MissingInputError(f"{what} not found: {path}")


def _optional_int(obj: Mapping[str, Any], key: str, where: str) -> int | None:
    value = obj.get(key)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ManifestError(f"{where}: '{key}' must be a non-negative integer, got {value!r}")
    return value


@log_execution(level="DEBUG", log_result=False)
def load_manifest(path: str | Path) -> DatasetManifest:
    """
    Загружает манифест JSON-Lines.

    Первая непустая строка может быть заголовком без ключа `id`
    (`feature_file`, `score_file`). Пустые строки пропускаются.
    Относительные пути разрешаются от директории манифеста.

    Raises:
        MissingInputError: файл не найден
        ManifestError: ошибка разбора (с номером строки), дубликат id, пустой манифест
    """
    path = Path(path)
    _require_file(path, "manifest")

    records: list[SampleRecord] = []
    first_line_of: dict[str, int] = {}
    feature_file: Path | None = None
    score_file: Path | None = None
    seen_content = False

    with path.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            where = f"{path.name}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{where}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ManifestError(f"{where}: expected a JSON object")

            if not seen_content and "id" not in obj and set(obj) <= _HEADER_KEYS:
                seen_content = True
                if obj.get("feature_file") is not None:
                    feature_file = resolve_relative(path, str(obj["feature_file"]))
                if obj.get("score_file") is not None:
                    score_file = resolve_relative(path, str(obj["score_file"]))
                continue
            seen_content = True

            unknown = sorted(set(obj) - _RECORD_KEYS)
            if unknown:
                raise ManifestError(f"{where}: unknown field(s) {', '.join(unknown)}")
            sample_id = obj.get("id")
            image = obj.get("image")
            if not isinstance(sample_id, str) or not sample_id:
                raise ManifestError(f"{where}: 'id' must be a non-empty string")
            if not isinstance(image, str) or not image:
                raise ManifestError(f"{where}: 'image' must be a non-empty string")
            if sample_id in first_line_of:
                raise ManifestError(
                    f"duplicate id '{sample_id}' on line {lineno} (first seen on line {first_line_of[sample_id]})",
                )
            first_line_of[sample_id] = lineno

            mask = obj.get("mask")
            if mask is not None and not isinstance(mask, str):
                raise ManifestError(f"{where}: 'mask' must be a string")
            records.append(
                SampleRecord(
                    id=sample_id,
                    image_path=resolve_relative(path, image),
                    mask_path=resolve_relative(path, mask) if mask else None,
                    feature_row=_optional_int(obj, "feature_row", where),
                    label=_optional_int(obj, "label", where),
                ),
            )

    if not records:
        raise ManifestError("empty manifest")
    logger.info(f"Манифест {path} загружен: {len(records)} записей")
    return DatasetManifest(records=tuple(records), feature_file=feature_file, score_file=score_file)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Записывает манифест так, что повторная загрузка даёт идентичную структуру."""
    lines: list[str] = []
    header: dict[str, str] = {}
    if manifest.feature_file is not None:
        header["feature_file"] = str(manifest.feature_file)
    if manifest.score_file is not None:
        header["score_file"] = str(manifest.score_file)
    if header:
        lines.append(json.dumps(header, ensure_ascii=False))
    for record in manifest.records:
        obj: dict[str, Any] = {"id": record.id, "image": str(record.image_path)}
        if record.mask_path is not None:
            obj["mask"] = str(record.mask_path)
        if record.feature_row is not None:
            obj["feature_row"] = record.feature_row
        if record.label is not None:
            obj["label"] = record.label
        lines.append(json.dumps(obj, ensure_ascii=False))
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(lines) + "\n")
    logger.info(f"Манифест {path} записан: {len(manifest)} записей")


# === Изображения и маски ===


def _tile_rawmodes(image: Image.Image) -> list[str]:
    rawmodes: list[str] = []
    for tile in getattr(image, "tile", None) or []:
        args = tile[3] if len(tile) > 3 else None  # noqa: PLR2004
        if isinstance(args, str):
            rawmodes.append(args)
        elif isinstance(args, tuple) and args and isinstance(args[0], str):
            rawmodes.append(args[0])
    return rawmodes


def _reject_wide_samples(image: Image.Image, what: str) -> None:
    # 16-битный RGB PNG открывается в режиме RGB, глубину выдаёт только rawmode тайла
    if image.mode in _WIDE_MODES or any("16" in rawmode for rawmode in _tile_rawmodes(image)):
        raise DecodeError(f"{what}: images with more than 8 bits per sample are not supported")


def _open_checked(path: Path, what: str, formats: frozenset[str]) -> Image.Image:
    _require_file(path, what)
    try:
        image = Image.open(path)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"{what}: cannot decode {path.name} ({exc})") from exc
    if image.format not in formats:
        image.close()
        raise DecodeError(f"{what}: unsupported format {image.format or 'unknown'}")
    return image


def load_image(record: SampleRecord) -> PixelBuffer:
    """
    Декодирует PNG/JPEG в 8-битный буфер.

    Оттенки серого дают 1 канал, RGB и палитровые изображения дают 3 канала.
    Изображения с альфа-каналом, CMYK и больше 8 бит на отсчёт отклоняются,
    а не усекаются.
    """
    what = f"image for '{record.id}'"
    image = _open_checked(record.image_path, what, SUPPORTED_IMAGE_FORMATS)
    try:
        with image:
            _reject_wide_samples(image, what)
            image.load()
            mode = image.mode
            if mode in _ALPHA_MODES:
                raise DecodeError(f"{what}: images with alpha channel are not supported (mode {mode})")
            if mode == "1":
                converted = image.convert("L")
            elif mode == "P":
                converted = image.convert("RGB")
            elif mode in {"L", "RGB"}:
                converted = image
            else:
                raise DecodeError(f"{what}: unsupported image mode {mode}")
            channels = 1 if converted.mode == "L" else 3
            width, height = converted.size
            return PixelBuffer(width=width, height=height, channels=channels, data=converted.tobytes())
    except CoresetError:
        raise
    except (OSError, ValueError) as exc:
        raise DecodeError(f"{what}: cannot decode {record.image_path.name} ({exc})") from exc


def load_mask(record: SampleRecord) -> MaskBuffer:
    """
    Загружает маску сегментации: 8-битный одноканальный или палитровый PNG.

    Для палитровых PNG возвращаются индексы палитры как есть: цветовые
    таблицы классов не интерпретируются.
    """
    if record.mask_path is None:
        raise MissingInputError(f"record '{record.id}' has no mask")
    what = f"mask for '{record.id}'"
    image = _open_checked(record.mask_path, what, frozenset({"PNG"}))
    try:
        with image:
            _reject_wide_samples(image, what)
            image.load()
            if image.mode not in {"L", "P", "1"}:
                raise DecodeError(f"{what}: expected a single-channel or paletted PNG, got mode {image.mode}")
            labels = np.asarray(image).astype(np.int64)
            width, height = image.size
            return MaskBuffer(width=width, height=height, labels=labels.ravel())
    except CoresetError:
        raise
    except (OSError, ValueError) as exc:
        raise DecodeError(f"{what}: cannot decode {record.mask_path.name} ({exc})") from exc


# === CSV ===


def _iter_csv_rows(path: Path) -> Iterator[tuple[int, list[str]]]:
    """
    Строки CSV с номерами строк файла.

    Пустые строки пропускаются; комментарии `#` допускаются только перед заголовком,
    поэтому id образца может начинаться с `#`.
    """
    in_preamble = True
    with path.open(encoding="utf-8", newline="") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            if in_preamble and line.startswith("#"):
                continue
            in_preamble = False
            yield lineno, next(csv.reader([line]))


def _open_writer(path: Path) -> tuple[Any, Any]:
    handle = path.open("w", encoding="utf-8", newline="")
    return handle, csv.writer(handle, lineterminator="\n")


def _parse_float(cell: str, where: str, error: type[CoresetError]) -> float:
    try:
        value = float(cell)
    except ValueError as exc:
        raise error(f"{where}: non-numeric value {cell!r}") from exc
    if not math.isfinite(value):
        raise error(f"{where}: non-finite value {cell!r}")
    return value


@log_execution(level="DEBUG")
def load_features(
    path: str | Path,
    expected_n: int | None = None,
    expected_ids: Sequence[str] | None = None,
) -> FeatureMatrix:
    """
    Загружает матрицу признаков из CSV `id,f0,f1,...`.

    Значения сохраняются в точности как разобраны: без нормализации и масштабирования.
    Номера строк в ошибках считаются по строкам данных, начиная с 1.
    """
    path = Path(path)
    _require_file(path, "feature file")
    rows = _iter_csv_rows(path)
    header = next(rows, None)
    if header is None:
        raise FeatureFileError(f"feature file {path.name} is empty")
    columns = header[1]
    if len(columns) < 2 or columns[0].strip() != "id":  # noqa: PLR2004
        raise FeatureFileError(f"feature file {path.name}: header must be 'id,f0,...'")
    width = len(columns)

    ids: list[str] = []
    values: list[list[float]] = []
    for k, (_, row) in enumerate(rows, start=1):
        if len(row) != width:
            raise FeatureFileError(f"row {k}: expected {width} cells, got {len(row)}")
        sample_id = row[0]
        if expected_ids is not None and k <= len(expected_ids) and sample_id != expected_ids[k - 1]:
            raise FeatureFileError(f"row {k}: id '{sample_id}' does not match manifest id '{expected_ids[k - 1]}'")
        values.append(
            [_parse_float(cell, f"row {k}, column '{columns[j + 1]}'", FeatureFileError) for j, cell in enumerate(row[1:])],
        )
        ids.append(sample_id)

    if not ids:
        raise FeatureFileError(f"feature file {path.name} has no rows")
    if expected_n is not None and len(ids) != expected_n:
        raise FeatureFileError(f"feature file has {len(ids)} rows, expected {expected_n}")
    if expected_ids is not None and len(ids) != len(expected_ids):
        raise FeatureFileError(f"feature file has {len(ids)} rows, expected {len(expected_ids)}")
    logger.info(f"Признаки {path} загружены: n={len(ids)}, d={width - 1}")
    return FeatureMatrix(ids=tuple(ids), values=np.array(values, dtype=np.float64))


def write_features(matrix: FeatureMatrix, path: str | Path, echo: str | None = None) -> None:
    handle, writer = _open_writer(Path(path))
    with handle:
        if echo:
            handle.write(echo + "\n")
        writer.writerow(["id", *(f"f{j}" for j in range(matrix.d))])
        for sample_id, row in zip(matrix.ids, matrix.values, strict=True):
            writer.writerow([sample_id, *(repr(float(value)) for value in row)])


def resolve_feature_rows(manifest: DatasetManifest, matrix: FeatureMatrix) -> FeatureMatrix:
    """
    Выравнивает признаки по манифесту: строка feature_row, если задана, иначе индекс записи.
    """
    rows: list[int] = []
    for index, record in enumerate(manifest.records):
        row = record.feature_row if record.feature_row is not None else index
        if row >= matrix.n:
            raise FeatureFileError(f"record '{record.id}': feature_row {row} out of range for {matrix.n} feature rows")
        rows.append(row)
    return FeatureMatrix(ids=manifest.ids, values=matrix.values[np.array(rows, dtype=np.intp)])


def load_aligned_features(manifest: DatasetManifest, path: str | Path) -> FeatureMatrix:
    """
    Загружает признаки для манифеста.

    Без feature_row файл обязан идти строго в порядке манифеста (число строк и id сверяются);
    с feature_row строки выбираются по индексу.
    """
    if any(record.feature_row is not None for record in manifest.records):
        return resolve_feature_rows(manifest, load_features(path))
    return load_features(path, expected_n=len(manifest), expected_ids=manifest.ids)


# === Таблицы оценок ===


def _provenance_line(line: str) -> tuple[str, str] | None:
    if not line.startswith("#["):
        return None
    name, sep, text = line[2:].partition("]")
    if not sep or not name:
        return None
    return name, text.strip()


@log_execution(level="DEBUG")
def load_scores(path: str | Path, expected_ids: Sequence[str] | None = None) -> ScoreTable:
    """
    Загружает таблицу оценок CSV `id,<name>[,<name>...]`.

    Комментарии `#[<name>] ...` восстанавливаются как provenance столбцов,
    прочие комментарии пропускаются. С expected_ids строки переупорядочиваются
    под порядок манифеста, а лишние или недостающие id считаются ошибкой.
    """
    path = Path(path)
    _require_file(path, "score file")
    provenance: dict[str, str] = {}
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            if line.strip() and not line.startswith("#"):
                break
            parsed = _provenance_line(line.rstrip("\n"))
            if parsed is not None:
                provenance[parsed[0]] = parsed[1]

    rows = _iter_csv_rows(path)
    header = next(rows, None)
    if header is None:
        raise ScoreFileError(f"score file {path.name} is empty")
    columns = [name.strip() for name in header[1]]
    names = columns[1:]
    if columns[0] != "id" or not names or any(not name for name in names):
        raise ScoreFileError(f"score file {path.name}: header must be 'id,<score_name>[,...]'")
    if len(set(names)) != len(names):
        raise ScoreFileError(f"score file {path.name}: duplicate column names")

    ids: list[str] = []
    values: list[list[float]] = []
    seen: set[str] = set()
    for k, (_, row) in enumerate(rows, start=1):
        if len(row) != len(columns):
            raise ScoreFileError(f"row {k}: expected {len(columns)} cells, got {len(row)}")
        sample_id = row[0]
        if sample_id in seen:
            raise ScoreFileError(f"row {k}: duplicate id '{sample_id}'")
        seen.add(sample_id)
        ids.append(sample_id)
        values.append([_parse_float(cell, f"id '{sample_id}', column '{names[j]}'", ScoreFileError) for j, cell in enumerate(row[1:])])

    if not ids:
        raise ScoreFileError(f"score file {path.name} has no rows")
    matrix = np.array(values, dtype=np.float64)
    table = ScoreTable(
        ids=tuple(ids),
        columns={name: matrix[:, j] for j, name in enumerate(names)},
        provenance={name: text for name, text in provenance.items() if name in names},
    )
    if expected_ids is not None:
        table = table.aligned_to(expected_ids)
    return table


def write_scores(table: ScoreTable, path: str | Path) -> None:
    handle, writer = _open_writer(Path(path))
    with handle:
        for name in table.names:
            if name in table.provenance:
                handle.write(f"#[{name}] {table.provenance[name]}\n")
        writer.writerow(["id", *table.names])
        columns = [table.columns[name] for name in table.names]
        for index, sample_id in enumerate(table.ids):
            writer.writerow([sample_id, *(repr(float(column[index])) for column in columns)])


# === Файлы отбора ===


def write_selection(selection: Selection, path: str | Path) -> None:
    """
    Пишет отбор CSV `rank,id,original_score,final_score` (rank с 1).

    Первая строка содержит эхо параметров. Для равных отборов файл побайтно одинаков.
    """
    if not selection.entries:
        raise SelectionError("cannot write an empty selection")
    handle, writer = _open_writer(Path(path))
    with handle:
        handle.write(format_echo(selection.command, selection.params) + "\n")
        writer.writerow(SELECTION_HEADER)
        for rank, entry in enumerate(selection.entries, start=1):
            writer.writerow([rank, entry.id, repr(float(entry.original_score)), repr(float(entry.final_score))])
    logger.info(f"Отбор из {len(selection)} образцов записан в {path}")


def read_selection(path: str | Path) -> Selection:
    path = Path(path)
    _require_file(path, "selection file")
    command = "select"
    params: dict[str, str] = {}
    with path.open(encoding="utf-8") as handle:
        first = handle.readline()
    if first.startswith(ECHO_PREFIX):
        command, params = parse_echo(first.rstrip("\n"))

    rows = _iter_csv_rows(path)
    header = next(rows, None)
    if header is None or tuple(cell.strip() for cell in header[1]) != SELECTION_HEADER:
        raise SelectionError(f"selection file {path.name}: header must be '{','.join(SELECTION_HEADER)}'")
    entries: list[SelectionEntry] = []
    for expected_rank, (lineno, row) in enumerate(rows, start=1):
        where = f"{path.name}:{lineno}"
        if len(row) != len(SELECTION_HEADER):
            raise SelectionError(f"{where}: expected {len(SELECTION_HEADER)} cells, got {len(row)}")
        if row[0] != str(expected_rank):
            raise SelectionError(f"{where}: expected rank {expected_rank}, got {row[0]!r}")
        entries.append(
            SelectionEntry(
                id=row[1],
                original_score=_parse_float(row[2], where, SelectionError),
                final_score=_parse_float(row[3], where, SelectionError),
            ),
        )
    if not entries:
        raise SelectionError(f"selection file {path.name} has no rows")
    return Selection(entries=tuple(entries), params=params, command=command)
