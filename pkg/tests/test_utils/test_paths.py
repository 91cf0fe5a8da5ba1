from pathlib import Path

from utils import paths


def test_logs_dir_is_relative() -> None:
    """
    Проверяем, что директория логов относительная
    и файл логов называется coreset.log.
    """

    assert paths.LOGS_DIR == "logs"
    assert paths.LOG_FILE_NAME == "coreset.log"
    assert paths.resolve_logs_dir() == Path("logs")


def test_resolve_relative_uses_manifest_directory(tmp_path: Path) -> None:
    manifest = tmp_path / "data" / "manifest.jsonl"

    resolved = paths.resolve_relative(manifest, "images/a.png")

    assert resolved == (tmp_path / "data" / "images" / "a.png").resolve()


def test_resolve_relative_keeps_absolute(tmp_path: Path) -> None:
    absolute = tmp_path / "elsewhere" / "a.png"

    assert paths.resolve_relative(tmp_path / "manifest.jsonl", str(absolute)) == absolute
