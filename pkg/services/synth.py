"""
Синтетический бенчмарк разнообразия.

Двумерная гауссова смесь, оценки сосредоточены в одном кластере.
Сравниваются два способа отбора: только по оценке (top-m) и по оценке с
K-NN графом. Результат считается в числе покрытых кластеров.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from services.graph_sampler import graph_select
from services.knn_graph import Metric, build_graph, pairwise_knn
from services.score_algebra import Order, rank, top_m
from utils.config import GraphDefaults, SynthDefaults
from utils.errors import ConfigError
from utils.logger import get_logger, log_execution

logger = get_logger(__name__)


@dataclass(frozen=True, slots=True)
class SynthConfig:
    clusters: int = SynthDefaults.CLUSTERS
    points_per_cluster: int = SynthDefaults.POINTS_PER_CLUSTER
    count: int = SynthDefaults.COUNT
    knn: int = SynthDefaults.KNN
    sigma: float | None = None
    seed: int = SynthDefaults.SEED
    runs: int = SynthDefaults.RUNS

    def __post_init__(self) -> None:
        if self.clusters < 1:
            raise ConfigError(f"clusters must be >= 1, got {self.clusters}")
        if self.points_per_cluster < 2:  # noqa: PLR2004
            raise ConfigError(f"points per cluster must be >= 2, got {self.points_per_cluster}")
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        total = self.total
        if not 1 <= self.count <= total:
            raise ConfigError(f"count must be in [1, {total}], got {self.count}")
        if not 1 <= self.knn <= total - 1:
            raise ConfigError(f"knn must be in [1, {total - 1}], got {self.knn}")
        if self.sigma is not None and not (math.isfinite(self.sigma) and self.sigma > 0.0):
            raise ConfigError(f"sigma must be a positive finite number, got {self.sigma}")

    @property
    def total(self) -> int:
        return self.clusters * self.points_per_cluster

    def echo_params(self) -> dict[str, object]:
        return {
            "clusters": self.clusters,
            "points": self.points_per_cluster,
            "count": self.count,
            "knn": self.knn,
            "sigma": GraphDefaults.SIGMA_POLICY if self.sigma is None else self.sigma,
            "seed": self.seed,
            "runs": self.runs,
        }


@dataclass(frozen=True, slots=True, eq=False)
class SynthDataset:
    points: NDArray[np.float64]
    cluster_of: NDArray[np.int64]
    scores: NDArray[np.float64]


def make_dataset(cfg: SynthConfig, seed: int) -> SynthDataset:
    """
    Генерирует смесь и оценки.

    Центры кластеров лежат на окружности (один кластер стоит в начале координат).
    Оценка точки: amp_c · exp(−r / τ), где r: ранг расстояния до центра своего
    кластера. У кластера 0 амплитуда exp((m − ½) / τ), у остальных 1: его m
    ближайших к центру точек строго выше любой точки других кластеров.
    """
    rng = np.random.default_rng(seed)
    if cfg.clusters == 1:
        centers = np.zeros((1, 2))
    else:
        angles = 2.0 * np.pi * np.arange(cfg.clusters) / cfg.clusters
        centers = SynthDefaults.CENTER_RADIUS * np.column_stack([np.cos(angles), np.sin(angles)])

    cluster_of = np.repeat(np.arange(cfg.clusters, dtype=np.int64), cfg.points_per_cluster)
    points = centers[cluster_of] + rng.normal(0.0, SynthDefaults.CLUSTER_STD, size=(cfg.total, 2))

    decay = SynthDefaults.RANK_DECAY
    scores = np.empty(cfg.total)
    for cluster in range(cfg.clusters):
        members = np.flatnonzero(cluster_of == cluster)
        distance = np.linalg.norm(points[members] - centers[cluster], axis=1)
        ranks = np.empty(members.size)
        ranks[np.lexsort((members, distance))] = np.arange(members.size)
        amplitude = math.exp((cfg.count - 0.5) / decay) if cluster == 0 else 1.0
        scores[members] = amplitude * np.exp(-ranks / decay)
    return SynthDataset(points=points, cluster_of=cluster_of, scores=scores)


@dataclass(frozen=True, slots=True)
class SynthRun:
    seed: int
    score_only_clusters: int
    graph_clusters: int


@dataclass(frozen=True, slots=True)
class SynthReport:
    config: SynthConfig
    runs: tuple[SynthRun, ...]

    @property
    def mean_score_only(self) -> float:
        return float(np.mean([run.score_only_clusters for run in self.runs]))

    @property
    def mean_graph(self) -> float:
        return float(np.mean([run.graph_clusters for run in self.runs]))

    @property
    def graph_not_worse_fraction(self) -> float:
        return float(np.mean([run.graph_clusters >= run.score_only_clusters for run in self.runs]))

    @property
    def graph_near_full_fraction(self) -> float:
        """Доля прогонов, где граф покрыл все кластеры, кроме не более чем одного."""
        target = max(1, self.config.clusters - 1)
        return float(np.mean([run.graph_clusters >= target for run in self.runs]))


def _clusters_covered(dataset: SynthDataset, indices: list[int]) -> int:
    return int(np.unique(dataset.cluster_of[indices]).size)


def run_once(cfg: SynthConfig, seed: int) -> SynthRun:
    dataset = make_dataset(cfg, seed)
    ids = [str(index) for index in range(cfg.total)]
    position = {sample_id: index for index, sample_id in enumerate(ids)}

    score_only = top_m(rank(dataset.scores, Order.DESCENDING), cfg.count, dataset.scores, ids)
    graph = build_graph(pairwise_knn(dataset.points, Metric.EUCLIDEAN, cfg.knn), cfg.sigma)
    diverse = graph_select(graph, dataset.scores, cfg.count, Order.DESCENDING, ids)

    return SynthRun(
        seed=seed,
        score_only_clusters=_clusters_covered(dataset, [position[entry.id] for entry in score_only.entries]),
        graph_clusters=_clusters_covered(dataset, [position[entry.id] for entry in diverse.entries]),
    )


@log_execution(level="INFO", log_args=False)
def run_synth(cfg: SynthConfig) -> SynthReport:
    """Прогоны с сидами seed, seed + 1, ..., seed + runs − 1."""
    runs = tuple(run_once(cfg, cfg.seed + offset) for offset in range(cfg.runs))
    report = SynthReport(config=cfg, runs=runs)
    logger.info(
        f"synth: {cfg.runs} прогонов, среднее покрытие score-only={report.mean_score_only:.3f}, "
        f"graph={report.mean_graph:.3f} из {cfg.clusters}",
    )
    return report
