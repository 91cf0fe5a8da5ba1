"""
Симметричный K-NN граф с гауссовыми весами рёбер.

G_S строится по евклидовым расстояниям между признаками, G_H по дивергенции
Йенсена–Шеннона между гистограммами меток. Поиск соседей точный (полный
перебор), симметризация объединением, вес ребра w = exp(−d² / 2σ²).
"""

from __future__ import annotations

from collections.abc import Iterator, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy.sparse import csr_matrix
from scipy.spatial.distance import cdist

from services.label_histogram import jsd_rows
from utils.config import GraphDefaults
from utils.dataset_io import FeatureMatrix, format_echo, parse_echo
from utils.errors import ConfigError, CoresetError, GraphError, MissingInputError
from utils.logger import get_logger, log_execution

logger = get_logger(__name__)

GRAPH_HEADER = ("i", "j", "distance", "weight")
# Наименьшее положительное нормализованное число: вес ребра никогда не обращается в 0
MIN_WEIGHT = float(np.finfo(np.float64).tiny)


class Metric(str, Enum):
    """Расстояние между узлами графа."""

    EUCLIDEAN = "euclidean"
    JSD = "jsd"
    JS_DISTANCE = "js-distance"


def _points_array(points: FeatureMatrix | NDArray[Any]) -> NDArray[np.float64]:
    values = points.values if isinstance(points, FeatureMatrix) else points
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 2:  # noqa: PLR2004
        raise GraphError(f"points must be a 2-D array, got {array.ndim}-D")
    return array


def pairwise_distances(
    points: FeatureMatrix | NDArray[Any],
    metric: Metric,
    rows: NDArray[np.intp] | None = None,
) -> NDArray[np.float64]:
    """
    Матрица расстояний (len(rows), n) от выбранных строк до всех точек.

    Все три метрики симметричны побитово: d(i, j) == d(j, i).
    """
    values = _points_array(points)
    selected = np.arange(values.shape[0]) if rows is None else np.asarray(rows, dtype=np.intp)
    metric = Metric(metric)
    if metric is Metric.EUCLIDEAN:
        return cdist(values[selected], values, "euclidean")
    if selected.size == 0:
        return np.empty((0, values.shape[0]))
    divergences = np.vstack([jsd_rows(values[i], values) for i in selected])
    if metric is Metric.JS_DISTANCE:
        return np.sqrt(divergences)
    return divergences


@dataclass(frozen=True, slots=True, eq=False)
class KnnLists:
    """Направленные списки K ближайших соседей каждого узла (до симметризации)."""

    neighbors: tuple[NDArray[np.intp], ...]
    distances: tuple[NDArray[np.float64], ...]
    k: int
    metric: Metric

    @property
    def n(self) -> int:
        return len(self.neighbors)


def _knn_block(
    values: NDArray[np.float64],
    metric: Metric,
    k: int,
    start: int,
    stop: int,
) -> list[tuple[NDArray[np.intp], NDArray[np.float64]]]:
    n = values.shape[0]
    block = pairwise_distances(values, metric, np.arange(start, stop))
    bad_rows = np.flatnonzero(~np.isfinite(block).all(axis=1))
    if bad_rows.size:
        raise GraphError(f"non-finite distance from node {start + int(bad_rows[0])}")
    indices = np.arange(n)
    result: list[tuple[NDArray[np.intp], NDArray[np.float64]]] = []
    for local, node in enumerate(range(start, stop)):
        row = block[local].copy()
        row[node] = np.inf
        threshold = np.partition(row, k - 1)[k - 1]
        candidates = indices[row <= threshold]
        # Равные расстояния: сначала меньший индекс соседа
        ordered = candidates[np.lexsort((candidates, row[candidates]))][:k]
        result.append((ordered.astype(np.intp), row[ordered]))
    return result


@log_execution(level="INFO", log_args=False)
def pairwise_knn(
    points: FeatureMatrix | NDArray[Any],
    metric: Metric,
    k: int,
    threads: int = 1,
) -> KnnLists:
    """
    Точные K ближайших соседей полным перебором.

    Raises:
        GraphError: n < 2, K вне [1, n−1] или неконечное расстояние
    """
    values = _points_array(points)
    metric = Metric(metric)
    n = values.shape[0]
    if n < 2:  # noqa: PLR2004
        raise GraphError(f"a K-NN graph needs at least 2 nodes, got {n}")
    if not 1 <= k <= n - 1:
        raise GraphError(f"K must be in [1, {n - 1}], got {k}")

    step = GraphDefaults.ROW_BLOCK
    bounds = [(start, min(start + step, n)) for start in range(0, n, step)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(lambda bound: _knn_block(values, metric, k, *bound), bounds))
    else:
        blocks = [_knn_block(values, metric, k, start, stop) for start, stop in bounds]

    lists = [item for block in blocks for item in block]
    return KnnLists(
        neighbors=tuple(item[0] for item in lists),
        distances=tuple(item[1] for item in lists),
        k=k,
        metric=metric,
    )


@dataclass(frozen=True, slots=True, eq=False)
class KnnGraph:
    """
    Симметричный взвешенный граф в формате CSR.

    Для узла i соседи лежат в neighbors[indptr[i]:indptr[i + 1]] по возрастанию
    индекса, с теми же срезами distances и weights. Граф без рёбер (K = 0)
    соответствует отбору без учёта разнообразия.
    """

    n: int
    k: int
    sigma: float | None
    metric: Metric | None
    indptr: NDArray[np.int64]
    neighbors: NDArray[np.int64]
    distances: NDArray[np.float64]
    weights: NDArray[np.float64]

    @classmethod
    def empty(cls, n: int) -> KnnGraph:
        return cls.from_edges(n, np.empty(0), np.empty(0), np.empty(0), np.empty(0), k=0, sigma=None, metric=None)

    @classmethod
    def from_edges(
        cls,
        n: int,
        first: NDArray[Any],
        second: NDArray[Any],
        distances: NDArray[Any],
        weights: NDArray[Any],
        *,
        k: int,
        sigma: float | None,
        metric: Metric | None,
    ) -> KnnGraph:
        """Строит CSR по списку неориентированных рёбер (каждое ребро один раз)."""
        first = np.asarray(first, dtype=np.int64)
        second = np.asarray(second, dtype=np.int64)
        distances = np.asarray(distances, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        rows = np.concatenate([first, second])
        cols = np.concatenate([second, first])
        order = np.lexsort((cols, rows))
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        graph = cls(
            n=n,
            k=k,
            sigma=sigma,
            metric=metric,
            indptr=indptr,
            neighbors=cols[order],
            distances=np.concatenate([distances, distances])[order],
            weights=np.concatenate([weights, weights])[order],
        )
        for array in (graph.indptr, graph.neighbors, graph.distances, graph.weights):
            array.setflags(write=False)
        return graph

    @property
    def num_edges(self) -> int:
        """Число неориентированных рёбер."""
        return int(self.neighbors.size // 2)

    def neighbors_of(self, node: int) -> tuple[NDArray[np.int64], NDArray[np.float64], NDArray[np.float64]]:
        start, stop = int(self.indptr[node]), int(self.indptr[node + 1])
        return self.neighbors[start:stop], self.distances[start:stop], self.weights[start:stop]

    def edges(self) -> Iterator[tuple[int, int, float, float]]:
        """Неориентированные рёбра (i, j, d, w) с i < j по возрастанию (i, j)."""
        for node in range(self.n):
            neighbors, distances, weights = self.neighbors_of(node)
            for j, distance, weight in zip(neighbors, distances, weights, strict=True):
                if j > node:
                    yield node, int(j), float(distance), float(weight)

    def as_csr(self, values: str = "weights") -> csr_matrix:
        data = self.weights if values == "weights" else self.distances
        return csr_matrix((data, self.neighbors, self.indptr), shape=(self.n, self.n))

    def validate(self) -> None:
        """Проверяет симметричность, отсутствие петель и диапазон весов."""
        if self.indptr.size != self.n + 1 or int(self.indptr[-1]) != self.neighbors.size:
            raise GraphError("malformed adjacency structure")
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        if np.any(rows == self.neighbors):
            raise GraphError(f"self-loop at node {int(rows[rows == self.neighbors][0])}")
        if self.weights.size and not (np.all(self.weights > 0.0) and np.all(self.weights <= 1.0)):
            raise GraphError("edge weights must lie in (0, 1]")
        forward = self.as_csr("weights")
        if (forward != forward.T).nnz or (self.as_csr("distances") != self.as_csr("distances").T).nnz:
            raise GraphError("adjacency is not symmetric")

    def echo_params(self) -> dict[str, object]:
        return {
            "n": self.n,
            "knn": self.k,
            "metric": self.metric.value if self.metric is not None else "none",
            "sigma_value": self.sigma,
        }


def resolve_sigma(distances: NDArray[np.float64], sigma: float | None) -> float:
    """σ: фиксированное значение > 0 или медиана расстояний рёбер (sigma=None)."""
    if sigma is not None:
        if not (np.isfinite(sigma) and sigma > 0.0):
            raise ConfigError(f"fixed sigma must be a positive finite number, got {sigma}")
        return float(sigma)
    if distances.size == 0 or not np.any(distances > 0.0):
        raise GraphError("all K-NN distances are zero; the median bandwidth is undefined, pass a fixed --sigma")
    median = float(np.median(distances))
    return median if median > 0.0 else GraphDefaults.SIGMA_FLOOR


def gaussian_weights(distances: NDArray[np.float64], sigma: float) -> NDArray[np.float64]:
    weights = np.exp(-(distances**2) / (2.0 * sigma**2))
    return np.maximum(weights, MIN_WEIGHT)


@log_execution(level="INFO", log_args=False)
def build_graph(knn_lists: KnnLists, sigma: float | None = None) -> KnnGraph:
    """
    Симметризует списки соседей объединением и взвешивает рёбра гауссовым ядром.

    Args:
        knn_lists: Направленные списки соседей
        sigma: Фиксированная ширина ядра; None означает медиану расстояний рёбер
    """
    n = knn_lists.n
    sources = np.concatenate([np.full(len(nbrs), i, dtype=np.int64) for i, nbrs in enumerate(knn_lists.neighbors)])
    targets = np.concatenate(knn_lists.neighbors).astype(np.int64)
    distances = np.concatenate(knn_lists.distances).astype(np.float64)
    if np.any(sources == targets):
        raise GraphError("K-NN lists contain a self-loop")
    low = np.minimum(sources, targets)
    high = np.maximum(sources, targets)
    # return_index даёт первое вхождение ребра в порядке узлов
    _, first_seen = np.unique(low * n + high, return_index=True)
    low, high, distances = low[first_seen], high[first_seen], distances[first_seen]

    resolved = resolve_sigma(distances, sigma)
    weights = gaussian_weights(distances, resolved)
    graph = KnnGraph.from_edges(n, low, high, distances, weights, k=knn_lists.k, sigma=resolved, metric=knn_lists.metric)
    logger.info(
        f"K-NN граф: n={n}, K={knn_lists.k}, metric={knn_lists.metric.value}, "
        f"рёбер={graph.num_edges}, sigma={resolved!r}",
    )
    return graph


def write_graph(graph: KnnGraph, path: str | Path, params: Mapping[str, object] | None = None) -> None:
    """CSV `i,j,distance,weight` (каждое ребро один раз, i < j) с эхо-строкой параметров."""
    echo_params: dict[str, object] = dict(params or {})
    echo_params.update(graph.echo_params())
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        handle.write(format_echo("graph", echo_params) + "\n")
        handle.write(",".join(GRAPH_HEADER) + "\n")
        for i, j, distance, weight in graph.edges():
            handle.write(f"{i},{j},{distance!r},{weight!r}\n")


def _optional_float(value: str) -> float | None:
    return None if value == "none" else float(value)


def read_graph(path: str | Path) -> KnnGraph:
    """Читает граф, записанный `write_graph`, и проверяет его инварианты."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"graph file not found: {path}")
    with path.open(encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    try:
        _, params = parse_echo(lines[0] if lines else "")
        n = int(params["n"])
        k = int(params["knn"])
        metric = None if params["metric"] == "none" else Metric(params["metric"])
        sigma = _optional_float(params["sigma_value"])
    except (CoresetError, KeyError, ValueError) as exc:
        raise GraphError(f"graph file {path.name}: missing or malformed parameter echo ({exc})") from exc
    if len(lines) < 2 or tuple(lines[1].split(",")) != GRAPH_HEADER:  # noqa: PLR2004
        raise GraphError(f"graph file {path.name}: header must be '{','.join(GRAPH_HEADER)}'")

    first: list[int] = []
    second: list[int] = []
    distances: list[float] = []
    weights: list[float] = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        cells = line.split(",")
        try:
            i, j = int(cells[0]), int(cells[1])
            distance, weight = float(cells[2]), float(cells[3])
        except (IndexError, ValueError) as exc:
            raise GraphError(f"{path.name}:{lineno}: malformed edge row") from exc
        if not 0 <= i < j < n:
            raise GraphError(f"{path.name}:{lineno}: edge ({i}, {j}) must satisfy 0 <= i < j < {n}")
        first.append(i)
        second.append(j)
        distances.append(distance)
        weights.append(weight)

    graph = KnnGraph.from_edges(
        n,
        np.array(first),
        np.array(second),
        np.array(distances),
        np.array(weights),
        k=k,
        sigma=sigma,
        metric=metric,
    )
    graph.validate()
    return graph
