"""
Оценка сложности изображения BPP_J.

BPP_J = 8 · (размер JPEG в байтах) / (ширина · высота), то есть биты на пиксель.
Размер берётся либо из уже сохранённого JPEG-файла, либо из повторного
кодирования пикселей стандартным JPEG-кодировщиком Pillow. Оба способа
никогда не смешиваются в одном столбце: сравнимы только оценки,
полученные одним способом.
"""

from __future__ import annotations

import io
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from utils.config import BppDefaults
from utils.dataset_io import DatasetManifest, PixelBuffer, SampleRecord, ScoreTable, load_image
from utils.errors import ConfigError, CoresetError, DecodeError, MissingInputError, ScoreError
from utils.logger import get_logger, log_execution

logger = get_logger(__name__)

BITS_PER_BYTE = 8
BPP_COLUMN = "bpp"


class ChromaSubsampling(str, Enum):
    """Субдискретизация цветности при повторном кодировании."""

    NONE = "none"
    YUV420 = "4:2:0"

    @property
    def pillow_value(self) -> int:
        # Pillow: 0 = 4:4:4, 2 = 4:2:0
        return 0 if self is ChromaSubsampling.NONE else 2


@dataclass(frozen=True, slots=True)
class BppConfig:
    """Параметры оценки BPP_J. По умолчанию: quality=100, 4:4:4, повторное кодирование."""

    jpeg_quality: int = BppDefaults.JPEG_QUALITY
    chroma_subsampling: ChromaSubsampling = ChromaSubsampling(BppDefaults.CHROMA_SUBSAMPLING)
    use_stored_size: bool = False

    def __post_init__(self) -> None:
        quality = self.jpeg_quality
        if isinstance(quality, bool) or not isinstance(quality, int):
            raise ConfigError(f"jpeg quality must be an integer, got {quality!r}")
        if not BppDefaults.MIN_QUALITY <= quality <= BppDefaults.MAX_QUALITY:
            raise ConfigError(
                f"jpeg quality must be in [{BppDefaults.MIN_QUALITY}, {BppDefaults.MAX_QUALITY}], got {quality}",
            )
        try:
            object.__setattr__(self, "chroma_subsampling", ChromaSubsampling(self.chroma_subsampling))
        except ValueError as exc:
            allowed = ", ".join(item.value for item in ChromaSubsampling)
            raise ConfigError(f"chroma subsampling must be one of {allowed}, got {self.chroma_subsampling!r}") from exc

    def echo_params(self) -> dict[str, object]:
        return {
            "jpeg_quality": self.jpeg_quality,
            "chroma": self.chroma_subsampling.value,
            "stored_size": self.use_stored_size,
        }


def _image_format(record: SampleRecord) -> tuple[str | None, tuple[int, int]]:
    path: Path = record.image_path
    if not path.is_file():
        raise MissingInputError(f"image for '{record.id}' not found: {path}")
    try:
        with Image.open(path) as image:
            return image.format, image.size
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"image for '{record.id}': unreadable header ({exc})") from exc


def bpp_from_stored(record: SampleRecord) -> float:
    """
    BPP_J по размеру уже сохранённого JPEG-файла.

    Числитель 8 · bytes вычисляется в целых числах, деление одно.
    """
    image_format, (width, height) = _image_format(record)
    if image_format != "JPEG":
        raise ScoreError(f"'{record.id}' is not a JPEG (format {image_format}); stored size requires JPEG sources")
    pixels = width * height
    if pixels <= 0:
        raise DecodeError(f"image for '{record.id}' has zero size")
    return BITS_PER_BYTE * record.image_path.stat().st_size / pixels


def bpp_reencode(pixels: PixelBuffer, cfg: BppConfig) -> float:
    """
    BPP_J по размеру повторного JPEG-кодирования.

    Оттенки серого кодируются однокомпонентным JPEG, без расширения до RGB.
    Для крошечных изображений оценка завышена заголовком JPEG.
    """
    if pixels.width <= 0 or pixels.height <= 0:
        raise ScoreError(f"cannot encode a {pixels.width}x{pixels.height} image")
    mode = "L" if pixels.channels == 1 else "RGB"
    image = Image.frombytes(mode, (pixels.width, pixels.height), pixels.data)
    buffer = io.BytesIO()
    if pixels.channels == 1:
        image.save(buffer, format="JPEG", quality=cfg.jpeg_quality)
    else:
        image.save(
            buffer,
            format="JPEG",
            quality=cfg.jpeg_quality,
            subsampling=cfg.chroma_subsampling.pillow_value,
        )
    return BITS_PER_BYTE * buffer.tell() / (pixels.width * pixels.height)


def _with_id(record: SampleRecord, scorer: Callable[[SampleRecord], float]) -> float:
    try:
        return scorer(record)
    except CoresetError as exc:
        if record.id in str(exc):
            raise
        raise type(exc)(f"'{record.id}': {exc}") from exc


@log_execution(level="INFO", log_args=False)
def score_dataset_bpp(manifest: DatasetManifest, cfg: BppConfig, threads: int = 1) -> ScoreTable:
    """
    Считает столбец "bpp" для всего манифеста.

    Args:
        manifest: Набор данных
        cfg: Параметры кодирования
        threads: Число потоков (результат от него не зависит)

    Returns:
        ScoreTable с единственным столбцом "bpp" в порядке манифеста

    Raises:
        ScoreError: при use_stored_size источник не JPEG (называется первый такой id)
    """
    if cfg.use_stored_size:
        for record in manifest.records:
            image_format, _ = _image_format(record)
            if image_format != "JPEG":
                raise ScoreError(
                    f"stored-size scoring requires JPEG sources; '{record.id}' is {image_format or 'unknown'}",
                )

        def scorer(record: SampleRecord) -> float:
            return bpp_from_stored(record)

    else:

        def scorer(record: SampleRecord) -> float:
            return bpp_reencode(load_image(record), cfg)

    records = manifest.records
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(lambda record: _with_id(record, scorer), records))
    else:
        scores = [_with_id(record, scorer) for record in records]

    logger.info(
        f"BPP посчитан для {len(scores)} изображений "
        f"(quality={cfg.jpeg_quality}, chroma={cfg.chroma_subsampling.value}, stored={cfg.use_stored_size})",
    )
    return ScoreTable(ids=manifest.ids, columns={BPP_COLUMN: np.array(scores, dtype=np.float64)})


@dataclass(frozen=True, slots=True)
class LowOutlierReport:
    """Нижние выбросы по ограде Тьюки: значения ниже Q1 − factor · IQR."""

    column: str
    q1: float
    q3: float
    fence: float
    ids: tuple[str, ...]


def flag_low_outliers(
    table: ScoreTable,
    column: str = BPP_COLUMN,
    factor: float = BppDefaults.OUTLIER_IQR_FACTOR,
) -> LowOutlierReport:
    """
    Отмечает подозрительно низкие оценки.

    У наборов, уже сжатых с потерями, артефакты сжатия занижают BPP_J.
    Отчёт только сообщает о таких образцах и ничего не исправляет.
    """
    if factor < 0:
        raise ConfigError(f"outlier factor must be non-negative, got {factor}")
    values = table.column(column)
    q1, q3 = (float(value) for value in np.percentile(values, [25.0, 75.0]))
    fence = q1 - factor * (q3 - q1)
    flagged = tuple(sample_id for sample_id, value in zip(table.ids, values, strict=True) if value < fence)
    if flagged:
        logger.warning(f"Столбец {column}: {len(flagged)} оценок ниже нижней границы {fence:.6g}")
    return LowOutlierReport(column=column, q1=q1, q3=q3, fence=fence, ids=flagged)
