"""
Алгебра оценок: CPX, ранжирование, отбор top-m и случайный базовый отбор.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np
from numpy.typing import NDArray

from utils.dataset_io import ScoreTable, Selection, SelectionEntry
from utils.errors import ConfigError, MissingInputError, ScoreError, SelectionError
from utils.logger import get_logger

logger = get_logger(__name__)

NLL_COLUMN = "nll"
CPX_COLUMN = "cpx"


class Order(str, Enum):
    """Направление ранжирования. Обязательный параметр: значения по умолчанию нет."""

    ASCENDING = "asc"
    DESCENDING = "desc"


@dataclass(frozen=True, slots=True)
class Ranking:
    """Перестановка индексов образцов, монотонная по оценке в заданном направлении."""

    permutation: tuple[int, ...]
    order: Order
    score_name: str = ""

    def __len__(self) -> int:
        return len(self.permutation)


def _sample_name(ids: Sequence[str] | None, index: int) -> str:
    if ids is not None and index < len(ids):
        return f"'{ids[index]}'"
    return f"index {index}"


def _finite_vector(scores: Sequence[float] | NDArray[Any], ids: Sequence[str] | None, what: str) -> NDArray[np.float64]:
    values = np.asarray(scores, dtype=np.float64).ravel()
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ScoreError(f"non-finite {what} for {_sample_name(ids, int(bad[0]))}")
    return values


def cpx(nll: float, bpp: float) -> float:
    """CPX = NLL − BPP_J. Оба значения должны быть в битах на пиксель."""
    if not (math.isfinite(nll) and math.isfinite(bpp)):
        raise ScoreError(f"cpx requires finite inputs, got nll={nll!r}, bpp={bpp!r}")
    return nll - bpp


def cpx_column(
    nll: Sequence[float] | NDArray[Any],
    bpp: Sequence[float] | NDArray[Any],
    ids: Sequence[str] | None = None,
) -> NDArray[np.float64]:
    """Поэлементный CPX; результат совпадает с `cpx` для каждой пары."""
    nll_values = _finite_vector(nll, ids, "nll")
    bpp_values = _finite_vector(bpp, ids, "bpp")
    if nll_values.shape != bpp_values.shape:
        raise ScoreError(f"nll and bpp lengths differ: {nll_values.size} != {bpp_values.size}")
    return nll_values - bpp_values


def add_cpx(table: ScoreTable, provenance: str | None = None) -> ScoreTable:
    """Добавляет столбец "cpx" к таблице, в которой уже есть "nll" и "bpp"."""
    if NLL_COLUMN not in table.columns:
        raise MissingInputError("cpx requires nll")
    if "bpp" not in table.columns:
        raise MissingInputError("cpx requires bpp")
    values = cpx_column(table.columns[NLL_COLUMN], table.columns["bpp"], table.ids)
    return table.with_column(CPX_COLUMN, values, provenance)


def rank(
    scores: Sequence[float] | NDArray[Any],
    order: Order,
    ids: Sequence[str] | None = None,
    score_name: str = "",
) -> Ranking:
    """
    Стабильное ранжирование.

    Равные оценки упорядочиваются по возрастанию индекса образца, то есть
    в каноническом порядке манифеста, в обоих направлениях.
    """
    values = _finite_vector(scores, ids, f"score '{score_name}'" if score_name else "score")
    order = Order(order)
    indices = np.arange(values.size)
    key = values if order is Order.ASCENDING else -values
    # lexsort: последний ключ главный
    permutation = np.lexsort((indices, key))
    return Ranking(permutation=tuple(int(i) for i in permutation), order=order, score_name=score_name)


def top_m(
    ranking: Ranking,
    m: int,
    scores: Sequence[float] | NDArray[Any],
    ids: Sequence[str],
    params: Mapping[str, object] | None = None,
) -> Selection:
    """Первые m позиций ранжирования; final_score совпадает с original_score."""
    n = len(ranking)
    if not 1 <= m <= n:
        raise SelectionError(f"count must be in [1, {n}], got {m}")
    values = np.asarray(scores, dtype=np.float64)
    entries = tuple(
        SelectionEntry(id=ids[index], original_score=float(values[index]), final_score=float(values[index]))
        for index in ranking.permutation[:m]
    )
    return Selection(entries=entries, params=dict(params or {}))


def random_subset(
    ids: Sequence[str],
    scores: Sequence[float] | NDArray[Any] | None,
    m: int,
    seed: int,
    params: Mapping[str, object] | None = None,
) -> Selection:
    """
    Случайный равномерный отбор без возвращения (базовая линия RND).

    Порядок записей совпадает с порядком выборки генератора.
    """
    n = len(ids)
    if not 1 <= m <= n:
        raise SelectionError(f"count must be in [1, {n}], got {m}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=m, replace=False)
    values = np.zeros(n) if scores is None else np.asarray(scores, dtype=np.float64)
    entries = tuple(
        SelectionEntry(id=ids[int(index)], original_score=float(values[index]), final_score=float(values[index]))
        for index in chosen
    )
    return Selection(entries=entries, params=dict(params or {}), command="baseline")


def resolve_count(n: int, count: int | None = None, fraction: float | None = None) -> int:
    """
    Число отбираемых образцов: ровно один из count и fraction.

    fraction ∈ (0, 1] переводится в max(1, ⌊f · n + ½⌋).
    """
    if (count is None) == (fraction is None):
        raise ConfigError("exactly one of count and fraction must be given")
    if count is not None:
        if not 1 <= count <= n:
            raise ConfigError(f"count must be in [1, {n}], got {count}")
        return count
    assert fraction is not None
    if not (math.isfinite(fraction) and 0.0 < fraction <= 1.0):
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    return max(1, min(n, math.floor(fraction * n + 0.5)))
