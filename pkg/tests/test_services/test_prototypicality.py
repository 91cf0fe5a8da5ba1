import numpy as np
import pytest

from services.prototypicality import KMeansConfig, KMeansModel, _update, kmeans_fit, ps_score
from utils.dataset_io import FeatureMatrix
from utils.errors import ConfigError, ScoreError


def _matrix(values: np.ndarray) -> FeatureMatrix:
    return FeatureMatrix(ids=tuple(f"s{index}" for index in range(values.shape[0])), values=values)


def test_distortion_never_increases_on_fuzzed_problems() -> None:
    rng = np.random.default_rng(0)
    for problem in range(100):
        n = int(rng.integers(10, 60))
        d = int(rng.integers(1, 6))
        k = int(rng.integers(1, 8))
        values = rng.normal(size=(n, d)) * rng.uniform(0.1, 10.0)

        model = kmeans_fit(_matrix(values), KMeansConfig(k=k, seed=problem))

        history = np.array(model.history)
        assert np.all(np.diff(history) <= np.abs(history[:-1]) * 1e-12)
        assert model.distortion == history[-1]


def test_ps_is_zero_for_centroid_coincident_points() -> None:
    locations = np.array([[0.0, 0.0], [3.0, 1.0], [-2.0, 5.0]])
    values = np.repeat(locations, 4, axis=0)

    model = kmeans_fit(_matrix(values), KMeansConfig(k=3, seed=5))
    scores = ps_score(_matrix(values), model)

    assert scores.column("ps").tolist() == [0.0] * 12
    assert model.distortion == 0.0


def test_ps_matches_brute_force_oracle() -> None:
    rng = np.random.default_rng(1)
    for seed in range(5):
        values = rng.normal(size=(50, 8))
        model = kmeans_fit(_matrix(values), KMeansConfig(k=4, seed=seed))

        scores = ps_score(_matrix(values), model).column("ps")

        oracle = [min(float(np.linalg.norm(point - centroid)) for centroid in model.centroids) for point in values]
        assert np.allclose(scores, oracle, rtol=0.0, atol=1e-9)


def test_fit_is_deterministic() -> None:
    values = np.random.default_rng(2).normal(size=(40, 3))
    cfg = KMeansConfig(k=5, seed=9, n_init=2)

    first = kmeans_fit(_matrix(values), cfg)
    second = kmeans_fit(_matrix(values), cfg)

    assert np.array_equal(first.centroids, second.centroids)
    assert np.array_equal(first.assignments, second.assignments)
    assert first.distortion == second.distortion
    assert not first.centroids.flags.writeable


def test_more_restarts_never_worse() -> None:
    values = np.random.default_rng(3).normal(size=(80, 2))

    single = kmeans_fit(_matrix(values), KMeansConfig(k=6, seed=4, n_init=1))
    several = kmeans_fit(_matrix(values), KMeansConfig(k=6, seed=4, n_init=4))

    assert several.distortion <= single.distortion


def test_empty_cluster_takes_farthest_point_of_largest_cluster() -> None:
    points = np.array([[0.0], [1.0], [10.0]])
    centroids = np.array([[0.0], [100.0]])
    assignments = np.array([0, 0, 0], dtype=np.int64)
    squared = np.array([0.0, 1.0, 100.0])

    updated = _update(points, centroids, assignments, squared)

    assert updated.tolist() == [[0.5], [10.0]]


def test_k_larger_than_n_rejected() -> None:
    with pytest.raises(ConfigError, match="exceeds"):
        kmeans_fit(_matrix(np.zeros((3, 2))), KMeansConfig(k=4))


@pytest.mark.parametrize("kwargs", [{"k": 0}, {"k": 2, "max_iter": 0}, {"k": 2, "tol": -1.0}, {"k": 2, "n_init": 0}])
def test_config_validation(kwargs: dict[str, float]) -> None:
    with pytest.raises(ConfigError):
        KMeansConfig(**kwargs)  # type: ignore[arg-type]


def test_ps_dimension_mismatch() -> None:
    model = kmeans_fit(_matrix(np.random.default_rng(5).normal(size=(10, 3))), KMeansConfig(k=2))

    with pytest.raises(ScoreError, match="dimension"):
        ps_score(_matrix(np.zeros((4, 2))), model)


def test_two_separated_pairs_recover_cluster_means() -> None:
    values = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])

    model = kmeans_fit(_matrix(values), KMeansConfig(k=2, seed=0, n_init=10))

    centroids = model.centroids[np.argsort(model.centroids[:, 0])]
    assert np.allclose(centroids, [[0.0, 0.5], [10.0, 0.5]], rtol=0.0, atol=1e-12)
    assert model.distortion == pytest.approx(0.25, abs=1e-12)
    assert ps_score(_matrix(values), model).column("ps").tolist() == pytest.approx([0.5] * 4, abs=1e-12)


def test_ps_unchanged_under_rigid_motion() -> None:
    rng = np.random.default_rng(3)
    values = rng.normal(size=(60, 3))
    model = kmeans_fit(_matrix(values), KMeansConfig(k=4, seed=1))
    rotation, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    shift = rng.uniform(-50.0, 50.0, size=3)

    moved = KMeansModel(
        centroids=model.centroids @ rotation + shift,
        assignments=model.assignments,
        distortion=model.distortion,
    )
    before = ps_score(_matrix(values), model).column("ps")
    after = ps_score(_matrix(values @ rotation + shift), moved).column("ps")

    assert np.allclose(after, before, rtol=0.0, atol=1e-9)


def test_ps_never_exceeds_distance_to_assigned_centroid() -> None:
    rng = np.random.default_rng(4)
    for seed in range(10):
        values = rng.normal(size=(80, 4))
        model = kmeans_fit(_matrix(values), KMeansConfig(k=5, seed=seed, max_iter=3))

        scores = ps_score(_matrix(values), model).column("ps")

        assigned = np.linalg.norm(values - model.centroids[model.assignments], axis=1)
        assert np.all(scores <= assigned + 1e-12)
