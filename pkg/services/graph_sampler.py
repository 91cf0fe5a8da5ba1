"""
Жадный отбор с учётом разнообразия на K-NN графе.

На каждом шаге выбирается невыбранный узел с наибольшей рабочей оценкой,
после чего каждый его невыбранный сосед j получает сообщение:
s_j ← s_j · (1 − w_ij). Близкие соседи (w → 1) подавляются сильнее далёких.
Режим по возрастанию сводится к тому же циклу через отражение s′ = max(s) − s.
"""

from __future__ import annotations

import heapq
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray

from services.knn_graph import KnnGraph, Metric, pairwise_distances
from services.score_algebra import Order
from utils.dataset_io import FeatureMatrix, Selection, SelectionEntry
from utils.errors import ScoreError, SelectionError
from utils.logger import get_logger, log_execution

__all__ = ["CoverageReport", "SamplerState", "Selection", "coverage_stats", "graph_select"]

logger = get_logger(__name__)


@dataclass(slots=True)
class SamplerState:
    """
    Изменяемое состояние одного прогона отбора (единственный владелец).

    Рабочая оценка выбранного узла после выбора больше не меняется.
    """

    working_scores: NDArray[np.float64]
    original_scores: NDArray[np.float64]
    selected: list[int] = field(default_factory=list)
    is_selected: NDArray[np.bool_] = field(init=False)
    messaged: NDArray[np.bool_] = field(init=False)

    def __post_init__(self) -> None:
        self.original_scores = np.array(self.original_scores, dtype=np.float64)
        self.original_scores.setflags(write=False)
        self.working_scores = np.array(self.working_scores, dtype=np.float64)
        self.is_selected = np.zeros(self.working_scores.size, dtype=bool)
        self.messaged = np.zeros(self.working_scores.size, dtype=bool)

    def select(self, node: int) -> None:
        if self.is_selected[node]:
            raise SelectionError(f"node {node} is already selected")
        self.is_selected[node] = True
        self.selected.append(node)

    def send_messages(self, node: int, graph: KnnGraph) -> list[int]:
        """Обновляет невыбранных соседей узла и возвращает их индексы."""
        neighbors, _, weights = graph.neighbors_of(node)
        touched: list[int] = []
        for j, weight in zip(neighbors, weights, strict=True):
            j = int(j)
            if self.is_selected[j]:
                continue
            self.working_scores[j] *= 1.0 - float(weight)
            self.messaged[j] = True
            touched.append(j)
        return touched


def _finite_scores(scores: Sequence[float] | NDArray[Any], ids: Sequence[str]) -> NDArray[np.float64]:
    values = np.asarray(scores, dtype=np.float64).ravel()
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ScoreError(f"non-finite score for '{ids[int(bad[0])]}'")
    return values


@log_execution(level="INFO", log_args=False)
def graph_select(
    graph: KnnGraph,
    scores: Sequence[float] | NDArray[Any],
    m: int,
    order: Order,
    ids: Sequence[str] | None = None,
    params: Mapping[str, object] | None = None,
) -> Selection:
    """
    Отбирает m узлов жадным проходом с обратной передачей сообщений.

    Порядок выбора: рабочая оценка, затем исходная оценка (в обоих случаях
    в преобразованной шкале), затем сырая оценка в направлении ранжирования,
    затем меньший индекс. На графе без рёбер результат совпадает с `top_m`.

    final_score: рабочая оценка в момент выбора. В режиме по возрастанию она
    переводится обратно в исходную шкалу; узлы без сообщений сообщают
    исходную оценку побитово.

    Raises:
        SelectionError: m вне [1, n], несовпадение размеров, отрицательные оценки при desc
    """
    n = graph.n
    names = list(ids) if ids is not None else [str(index) for index in range(n)]
    raw = _finite_scores(scores, names)
    if raw.size != n or len(names) != n:
        raise SelectionError(f"graph has {n} nodes but {raw.size} scores and {len(names)} ids were given")
    if not 1 <= m <= n:
        raise SelectionError(f"count must be in [1, {n}], got {m}")
    order = Order(order)

    if order is Order.DESCENDING:
        negative = np.flatnonzero(raw < 0.0)
        if negative.size:
            index = int(negative[0])
            raise SelectionError(
                f"descending graph selection requires non-negative scores; '{names[index]}' has {raw[index]!r}",
            )
        transformed = raw.copy()
        tiebreak = -raw
        peak = 0.0
    else:
        peak = float(raw.max())
        transformed = peak - raw
        tiebreak = raw

    state = SamplerState(working_scores=transformed, original_scores=transformed)
    version = np.zeros(n, dtype=np.int64)
    # heapq даёт min-кучу: оценки берутся со знаком минус
    heap: list[tuple[float, float, float, int, int]] = [
        (-float(transformed[i]), -float(transformed[i]), float(tiebreak[i]), i, 0) for i in range(n)
    ]
    heapq.heapify(heap)

    entries: list[SelectionEntry] = []
    while len(entries) < m:
        _, _, _, node, entry_version = heapq.heappop(heap)
        if state.is_selected[node] or entry_version != version[node]:
            continue
        state.select(node)
        working = float(state.working_scores[node])
        if order is Order.DESCENDING:
            final = working
        else:
            final = peak - working if state.messaged[node] else float(raw[node])
        entries.append(SelectionEntry(id=names[node], original_score=float(raw[node]), final_score=final))
        for j in state.send_messages(node, graph):
            version[j] += 1
            heapq.heappush(
                heap,
                (-float(state.working_scores[j]), -float(transformed[j]), float(tiebreak[j]), j, int(version[j])),
            )

    logger.info(f"Отобрано {len(entries)} из {n} узлов (order={order.value}, рёбер={graph.num_edges})")
    return Selection(entries=tuple(entries), params=dict(params or {}))


@dataclass(frozen=True, slots=True)
class CoverageReport:
    """
    Покрытие отбора.

    mean_pairwise и min_pairwise считаются метрикой графа по точкам и равны
    None, если выбрано меньше двух узлов или точки не переданы.
    """

    size: int
    mean_pairwise: float | None
    min_pairwise: float | None
    one_hop_fraction: float


def coverage_stats(
    selected_indices: Sequence[int],
    graph: KnnGraph,
    points: FeatureMatrix | NDArray[Any] | None = None,
) -> CoverageReport:
    """Попарные расстояния внутри отбора и доля узлов в одном шаге от выбранных."""
    selected = np.asarray(selected_indices, dtype=np.intp)
    if selected.size == 0:
        raise SelectionError("coverage requires a non-empty selection")
    if np.unique(selected).size != selected.size:
        raise SelectionError("selection contains duplicate nodes")
    if selected.min() < 0 or selected.max() >= graph.n:
        raise SelectionError(f"selected node out of range for a graph with {graph.n} nodes")

    covered = np.zeros(graph.n, dtype=bool)
    covered[selected] = True
    for node in selected:
        neighbors, _, _ = graph.neighbors_of(int(node))
        covered[neighbors] = True

    mean_pairwise: float | None = None
    min_pairwise: float | None = None
    if points is not None and selected.size >= 2:  # noqa: PLR2004
        metric = graph.metric if graph.metric is not None else Metric.EUCLIDEAN
        distances = pairwise_distances(points, metric, selected)[:, selected]
        upper = distances[np.triu_indices(selected.size, k=1)]
        mean_pairwise = float(upper.mean())
        min_pairwise = float(upper.min())

    return CoverageReport(
        size=int(selected.size),
        mean_pairwise=mean_pairwise,
        min_pairwise=min_pairwise,
        one_hop_fraction=float(covered.sum()) / graph.n,
    )
