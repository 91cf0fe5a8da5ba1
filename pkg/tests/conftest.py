import importlib
import json
import sys
from collections.abc import Callable, Generator, Sequence
from pathlib import Path
from types import SimpleNamespace
from typing import Any

import numpy as np
import pytest
from PIL import Image
from pytest import MonkeyPatch

_session_monkeypatch = MonkeyPatch()
_session_env_defaults = {
    "LOG_LEVEL": "WARNING",
    "LOG_TO_FILE": "false",
}

for key, value in _session_env_defaults.items():
    # Принудительно устанавливаем тестовые значения, игнорируя существующие переменные окружения
    _session_monkeypatch.setenv(key, value)


@pytest.fixture(scope="session", autouse=True)
def session_env_defaults() -> Generator[None, None, None]:
    """Устанавливает переменные окружения до импорта модулей проекта."""
    yield
    _session_monkeypatch.undo()


@pytest.fixture(autouse=True)
def base_env(monkeypatch: Any) -> Generator[None, None, None]:
    """Каждый тест видит одинаковое окружение логирования."""
    for key, value in _session_env_defaults.items():
        monkeypatch.setenv(key, value)
    yield


@pytest.fixture
def reload_config() -> Generator[Callable[[], Any], None, None]:
    """
    Возвращает функцию для повторной загрузки utils.config с актуальными env.
    После теста модуль очищается из sys.modules.
    """

    loaded_modules: list[Any] = []

    def _reload() -> Any:
        if "utils.config" in sys.modules:
            del sys.modules["utils.config"]
        module = importlib.import_module("utils.config")
        loaded_modules.append(module)
        return module

    try:
        yield _reload
    finally:
        if "utils.config" in sys.modules:
            del sys.modules["utils.config"]
        # пересоздаем модуль для других тестов с дефолтным окружением
        importlib.import_module("utils.config")


# === Синтетические изображения ===


def constant_pixels(size: int, channels: int = 3) -> np.ndarray:
    shape = (size, size) if channels == 1 else (size, size, channels)
    return np.full(shape, 128, dtype=np.uint8)


def gradient_pixels(size: int, channels: int = 3) -> np.ndarray:
    ramp = np.linspace(0, 255, size, dtype=np.float64)
    plane = ((ramp[None, :] + ramp[:, None]) / 2.0).astype(np.uint8)
    if channels == 1:
        return plane
    return np.stack([plane, plane[::-1], plane.T], axis=2)


def noise_pixels(size: int, channels: int = 3, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    shape = (size, size) if channels == 1 else (size, size, channels)
    return rng.integers(0, 256, size=shape, dtype=np.uint8)


@pytest.fixture
def pixels() -> SimpleNamespace:
    """Генераторы тестовых изображений: постоянное, градиент, шум."""
    return SimpleNamespace(constant=constant_pixels, gradient=gradient_pixels, noise=noise_pixels)


@pytest.fixture
def write_image(tmp_path: Path) -> Callable[..., Path]:
    """Сохраняет массив uint8 как PNG или JPEG во временную директорию."""

    def _write(name: str, pixels: np.ndarray, **save_kwargs: Any) -> Path:
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels).save(path, **save_kwargs)
        return path

    return _write


@pytest.fixture
def write_mask(tmp_path: Path) -> Callable[..., Path]:
    """Сохраняет маску меток как одноканальный (L) или палитровый (P) PNG."""

    def _write(name: str, labels: np.ndarray, mode: str = "L") -> Path:
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        image = Image.fromarray(np.asarray(labels, dtype=np.uint8))
        if mode == "P":
            # putpalette переводит L в P, индексы остаются прежними
            image.putpalette([value for index in range(256) for value in (index, 255 - index, index // 2)])
        image.save(path, format="PNG")
        return path

    return _write


@pytest.fixture
def write_manifest(tmp_path: Path) -> Callable[..., Path]:
    """Пишет манифест JSON-Lines; header задаёт первую строку без id."""

    def _write(
        records: Sequence[dict[str, Any]],
        name: str = "manifest.jsonl",
        header: dict[str, Any] | None = None,
    ) -> Path:
        path = tmp_path / name
        lines = [json.dumps(header)] if header else []
        lines.extend(json.dumps(record) for record in records)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return _write


@pytest.fixture
def write_csv(tmp_path: Path) -> Callable[[str, str], Path]:
    def _write(name: str, text: str) -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


@pytest.fixture
def small_dataset(tmp_path: Path, write_image: Callable[..., Path], write_mask: Callable[..., Path]) -> Path:
    """
    Набор из 12 образцов: изображения трёх сложностей, маски 4 классов,
    признаки (3 компактные группы в 2-D) и таблица NLL.
    Возвращает путь к манифесту с заголовком feature_file/score_file.
    """
    rng = np.random.default_rng(7)
    kinds = [constant_pixels, gradient_pixels, noise_pixels]
    records: list[dict[str, Any]] = []
    feature_rows: list[str] = ["id,f0,f1"]
    nll_rows: list[str] = ["id,nll"]
    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    for index in range(12):
        sample_id = f"s{index:02d}"
        group = index % 3
        pixels = kinds[group](16)
        write_image(f"images/{sample_id}.png", pixels)
        labels = np.full((8, 8), group, dtype=np.uint8)
        labels[: index % 4 + 1, :] = 3
        labels[7, 7] = 255
        write_mask(f"masks/{sample_id}.png", labels)
        point = centers[group] + rng.normal(0.0, 0.3, size=2)
        feature_rows.append(f"{sample_id},{float(point[0])!r},{float(point[1])!r}")
        nll_rows.append(f"{sample_id},{float(4.0 + 0.25 * index)!r}")
        records.append(
            {
                "id": sample_id,
                "image": f"images/{sample_id}.png",
                "mask": f"masks/{sample_id}.png",
                "label": group,
            },
        )
    (tmp_path / "features.csv").write_text("\n".join(feature_rows) + "\n", encoding="utf-8")
    (tmp_path / "nll.csv").write_text("\n".join(nll_rows) + "\n", encoding="utf-8")
    manifest = tmp_path / "manifest.jsonl"
    lines = [json.dumps({"feature_file": "features.csv", "score_file": "nll.csv"})]
    lines.extend(json.dumps(record) for record in records)
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
