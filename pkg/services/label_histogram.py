"""
Гистограммы меток сегментации и дивергенция Йенсена–Шеннона между ними.

Дивергенция считается в натах и лежит в [0, ln 2]. Именно она (а не её
квадратный корень) служит расстоянием в графе G_H; метрика √JSD доступна
отдельно.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.special import rel_entr

from utils.config import HistogramDefaults
from utils.dataset_io import DatasetManifest, FeatureMatrix, MaskBuffer, SampleRecord, load_mask
from utils.errors import ConfigError, CoresetError, ScoreError
from utils.logger import get_logger, log_execution

logger = get_logger(__name__)

LN2 = math.log(2.0)


@dataclass(frozen=True, slots=True, eq=False)
class LabelHistogram:
    """Нормированная гистограмма меток по C классам."""

    probs: NDArray[np.float64]
    num_classes: int
    counted_pixels: int


def histogram(
    mask: MaskBuffer,
    num_classes: int,
    ignore_index: int | None = HistogramDefaults.IGNORE_INDEX,
) -> LabelHistogram:
    """
    Гистограмма меток маски.

    Пиксели ignore_index не считаются. Метка ≥ C является ошибкой с указанием
    метки и смещения пикселя. Полностью игнорируемая маска тоже ошибка.
    """
    if num_classes < 1:
        raise ConfigError(f"num_classes must be >= 1, got {num_classes}")
    labels = mask.labels
    keep = labels != ignore_index if ignore_index is not None else np.ones(labels.shape, dtype=bool)
    out_of_range = np.flatnonzero(keep & (labels >= num_classes))
    if out_of_range.size:
        offset = int(out_of_range[0])
        raise ScoreError(f"label {int(labels[offset])} at pixel offset {offset} is out of range for {num_classes} classes")
    counted = labels[keep]
    if counted.size == 0:
        raise ScoreError("mask has no counted pixels (all pixels are ignored)")
    counts = np.bincount(counted, minlength=num_classes).astype(np.float64)
    probs = counts / counted.size
    probs.setflags(write=False)
    return LabelHistogram(probs=probs, num_classes=num_classes, counted_pixels=int(counted.size))


def _as_probs(value: LabelHistogram | NDArray[np.float64]) -> NDArray[np.float64]:
    if isinstance(value, LabelHistogram):
        return value.probs
    return np.asarray(value, dtype=np.float64)


def jsd_rows(p: NDArray[np.float64], others: NDArray[np.float64]) -> NDArray[np.float64]:
    """
    JSD между распределением p и каждой строкой матрицы others.

    Формула симметрична по построению: ½·KL(p‖m) + ½·KL(q‖m) с m = (p + q) / 2,
    а 0·log(0/·) = 0 обеспечивает rel_entr.
    """
    p = np.asarray(p, dtype=np.float64)
    others = np.atleast_2d(np.asarray(others, dtype=np.float64))
    if others.shape[1] != p.shape[-1]:
        raise ScoreError(f"histogram dimensions differ: {p.shape[-1]} != {others.shape[1]}")
    mid = (p + others) / 2.0
    left = rel_entr(p, mid).sum(axis=1)
    right = rel_entr(others, mid).sum(axis=1)
    divergence = 0.5 * (np.minimum(left, right) + np.maximum(left, right))
    return np.clip(divergence, 0.0, LN2)


def jsd(p: LabelHistogram | NDArray[np.float64], q: LabelHistogram | NDArray[np.float64]) -> float:
    """Дивергенция Йенсена–Шеннона в натах, в [0, ln 2]."""
    p_probs, q_probs = _as_probs(p), _as_probs(q)
    if p_probs.shape != q_probs.shape:
        raise ScoreError(f"histogram dimensions differ: {p_probs.size} != {q_probs.size}")
    # Складываем слагаемые в фиксированном порядке, чтобы jsd(p, q) == jsd(q, p) побитово
    mid = (p_probs + q_probs) / 2.0
    left = float(rel_entr(p_probs, mid).sum())
    right = float(rel_entr(q_probs, mid).sum())
    low, high = sorted((left, right))
    return min(max(0.5 * (low + high), 0.0), LN2)


def js_distance(p: LabelHistogram | NDArray[np.float64], q: LabelHistogram | NDArray[np.float64]) -> float:
    """Метрика Йенсена–Шеннона √JSD."""
    return math.sqrt(jsd(p, q))


def _record_histogram(record: SampleRecord, num_classes: int, ignore_index: int | None) -> LabelHistogram:
    try:
        return histogram(load_mask(record), num_classes, ignore_index)
    except CoresetError as exc:
        if record.id in str(exc):
            raise
        raise type(exc)(f"mask for '{record.id}': {exc}") from exc


@log_execution(level="INFO", log_args=False)
def dataset_histograms(
    manifest: DatasetManifest,
    num_classes: int,
    ignore_index: int | None = HistogramDefaults.IGNORE_INDEX,
    threads: int = 1,
) -> list[LabelHistogram]:
    """Гистограммы для всех масок манифеста, в порядке манифеста."""
    records = manifest.records
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            result = list(pool.map(lambda record: _record_histogram(record, num_classes, ignore_index), records))
    else:
        result = [_record_histogram(record, num_classes, ignore_index) for record in records]
    logger.info(f"Построено {len(result)} гистограмм меток (C={num_classes}, ignore={ignore_index})")
    return result


def histograms_to_matrix(ids: tuple[str, ...], histograms: list[LabelHistogram]) -> FeatureMatrix:
    """Гистограммы как FeatureMatrix (id + C столбцов) для экспорта и графа G_H."""
    if len(ids) != len(histograms):
        raise ScoreError(f"{len(histograms)} histograms for {len(ids)} ids")
    values = np.vstack([item.probs for item in histograms])
    return FeatureMatrix(ids=ids, values=values)
