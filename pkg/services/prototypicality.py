"""
Оценка прототипичности PS.

k-means (инициализация k-means++, итерации Ллойда) по матрице признаков;
оценка образца равна евклидову расстоянию до ближайшего центроида.
Низкое значение означает типичный, избыточный образец.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.distance import cdist

from utils.config import KMeansDefaults
from utils.dataset_io import FeatureMatrix, ScoreTable
from utils.errors import ConfigError, FeatureFileError, ScoreError
from utils.logger import get_logger, log_execution

logger = get_logger(__name__)

PS_COLUMN = "ps"


@dataclass(frozen=True, slots=True)
class KMeansConfig:
    k: int
    seed: int = KMeansDefaults.SEED
    max_iter: int = KMeansDefaults.MAX_ITER
    tol: float = KMeansDefaults.TOL
    n_init: int = KMeansDefaults.N_INIT

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be positive, got {self.max_iter}")
        if not self.tol >= 0:
            raise ConfigError(f"tol must be non-negative, got {self.tol}")
        if self.n_init < 1:
            raise ConfigError(f"n_init must be >= 1, got {self.n_init}")

    def echo_params(self) -> dict[str, object]:
        return {"k": self.k, "seed": self.seed, "max_iter": self.max_iter, "tol": self.tol, "n_init": self.n_init}


@dataclass(frozen=True, slots=True, eq=False)
class KMeansModel:
    """
    Обученная модель k-means.

    distortion: среднее квадратов расстояний до назначенного центроида.
    history: искажение после каждого шага назначения (невозрастающее).
    """

    centroids: NDArray[np.float64]
    assignments: NDArray[np.int64]
    distortion: float
    history: tuple[float, ...] = field(default_factory=tuple)
    n_iter: int = 0

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])


def _kmeans_plus_plus(points: NDArray[np.float64], k: int, rng: np.random.Generator) -> NDArray[np.float64]:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = cdist(points, points[chosen], "sqeuclidean").min(axis=1)
    while len(chosen) < k:
        total = float(closest.sum())
        if total > 0.0:
            index = int(rng.choice(n, p=closest / total))
        else:
            # Все оставшиеся точки совпадают с уже выбранными центрами
            taken = set(chosen)
            index = next(i for i in range(n) if i not in taken)
        chosen.append(index)
        closest = np.minimum(closest, cdist(points, points[[index]], "sqeuclidean")[:, 0])
    return points[chosen].copy()


def _assign(points: NDArray[np.float64], centroids: NDArray[np.float64]) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
    squared = cdist(points, centroids, "sqeuclidean")
    assignments = squared.argmin(axis=1)
    return assignments.astype(np.int64), squared[np.arange(points.shape[0]), assignments]


def _update(
    points: NDArray[np.float64],
    centroids: NDArray[np.float64],
    assignments: NDArray[np.int64],
    squared: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Шаг обновления; пустой кластер получает самую далёкую точку самого крупного кластера."""
    k = centroids.shape[0]
    assignments = assignments.copy()
    squared = squared.copy()
    updated = centroids.copy()
    counts = np.bincount(assignments, minlength=k)
    for cluster in np.flatnonzero(counts == 0):
        largest = int(counts.argmax())
        members = np.flatnonzero(assignments == largest)
        # argmax берёт первый максимум: при равенстве побеждает меньший индекс
        donor = int(members[squared[members].argmax()])
        assignments[donor] = cluster
        squared[donor] = 0.0
        counts[largest] -= 1
        counts[cluster] += 1
    for cluster in range(k):
        members = assignments == cluster
        updated[cluster] = points[members].mean(axis=0)
    return updated


def _lloyd(
    points: NDArray[np.float64],
    cfg: KMeansConfig,
    rng: np.random.Generator,
) -> KMeansModel:
    centroids = _kmeans_plus_plus(points, cfg.k, rng)
    assignments, squared = _assign(points, centroids)
    distortion = float(squared.mean())
    history = [distortion]
    n_iter = 0
    while n_iter < cfg.max_iter and distortion > 0.0:
        n_iter += 1
        centroids = _update(points, centroids, assignments, squared)
        new_assignments, squared = _assign(points, centroids)
        new_distortion = float(squared.mean())
        if new_distortion > distortion * (1.0 + KMeansDefaults.MONOTONE_RTOL):
            raise RuntimeError(
                f"k-means distortion increased at iteration {n_iter}: {distortion!r} -> {new_distortion!r}",
            )
        history.append(new_distortion)
        improvement = (distortion - new_distortion) / distortion
        unchanged = bool(np.array_equal(new_assignments, assignments))
        assignments, distortion = new_assignments, new_distortion
        if unchanged or improvement < cfg.tol:
            break
    return KMeansModel(
        centroids=centroids,
        assignments=assignments,
        distortion=distortion,
        history=tuple(history),
        n_iter=n_iter,
    )


@log_execution(level="INFO", log_args=False)
def kmeans_fit(features: FeatureMatrix, cfg: KMeansConfig) -> KMeansModel:
    """
    Обучает k-means по признакам.

    Детерминирован побитово при одинаковых (features, cfg). При n_init > 1
    сохраняется перезапуск с наименьшим искажением (при равенстве более ранний).

    Raises:
        ConfigError: k > n
    """
    points = np.asarray(features.values, dtype=np.float64)
    if not np.isfinite(points).all():
        raise FeatureFileError("k-means requires finite features")
    n = points.shape[0]
    if cfg.k > n:
        raise ConfigError(f"k={cfg.k} exceeds the number of samples n={n}")

    rng = np.random.default_rng(cfg.seed)
    best: KMeansModel | None = None
    for restart in range(cfg.n_init):
        model = _lloyd(points, cfg, rng)
        logger.debug(f"k-means перезапуск {restart}: distortion={model.distortion!r}, итераций={model.n_iter}")
        if best is None or model.distortion < best.distortion:
            best = model
    assert best is not None

    centroids = best.centroids.copy()
    assignments = best.assignments.copy()
    centroids.setflags(write=False)
    assignments.setflags(write=False)
    logger.info(f"k-means: k={cfg.k}, n={n}, distortion={best.distortion:.6g}, итераций={best.n_iter}")
    return KMeansModel(
        centroids=centroids,
        assignments=assignments,
        distortion=best.distortion,
        history=best.history,
        n_iter=best.n_iter,
    )


def nearest_centroid_distances(points: NDArray[np.float64], centroids: NDArray[np.float64]) -> NDArray[np.float64]:
    if points.ndim != 2 or centroids.ndim != 2 or points.shape[1] != centroids.shape[1]:  # noqa: PLR2004
        raise ScoreError(
            f"feature dimension {points.shape[-1]} does not match centroid dimension {centroids.shape[-1]}",
        )
    return np.sqrt(cdist(points, centroids, "sqeuclidean").min(axis=1))


def ps_score(features: FeatureMatrix, model: KMeansModel) -> ScoreTable:
    """Столбец "ps": евклидово (не квадрат) расстояние до ближайшего центроида."""
    distances = nearest_centroid_distances(np.asarray(features.values, dtype=np.float64), model.centroids)
    return ScoreTable(ids=features.ids, columns={PS_COLUMN: distances})
