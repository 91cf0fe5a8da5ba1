import hashlib
from collections.abc import Callable
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
from PIL import Image

from utils import dataset_io
from utils.dataset_io import (
    DatasetManifest,
    FeatureMatrix,
    PixelBuffer,
    SampleRecord,
    ScoreTable,
    Selection,
    SelectionEntry,
    format_echo,
    load_features,
    load_image,
    load_manifest,
    load_mask,
    load_scores,
    parse_echo,
    read_selection,
    resolve_feature_rows,
    write_features,
    write_scores,
    write_selection,
)
from utils.errors import DecodeError, FeatureFileError, ManifestError, MissingInputError, ScoreFileError


# === Манифест ===


def test_load_manifest_with_header_and_blank_lines(tmp_path: Path) -> None:
    path = tmp_path / "manifest.jsonl"
    path.write_text(
        '{"feature_file": "feats.csv", "score_file": "scores.csv"}\n'
        "\n"
        '{"id": "a", "image": "img/a.png", "mask": "m/a.png", "feature_row": 1, "label": 2}\n'
        "   \n"
        '{"id": "b", "image": "/abs/b.jpg"}\n',
        encoding="utf-8",
    )

    manifest = load_manifest(path)

    assert manifest.ids == ("a", "b")
    assert manifest.feature_file == (tmp_path / "feats.csv").resolve()
    assert manifest.score_file == (tmp_path / "scores.csv").resolve()
    first, second = manifest.records
    assert first.image_path == (tmp_path / "img" / "a.png").resolve()
    assert first.mask_path == (tmp_path / "m" / "a.png").resolve()
    assert first.feature_row == 1
    assert first.label == 2
    assert second.image_path == Path("/abs/b.jpg")
    assert second.mask_path is None
    assert manifest.declared_num_classes is None


def test_load_manifest_missing_file(tmp_path: Path) -> None:
    with pytest.raises(MissingInputError):
        load_manifest(tmp_path / "nope.jsonl")


def test_load_manifest_parse_error_names_line(write_manifest: Callable[..., Path]) -> None:
    path = write_manifest([{"id": "a", "image": "a.png"}])
    path.write_text(path.read_text(encoding="utf-8") + "{broken\n", encoding="utf-8")

    with pytest.raises(ManifestError, match=r"manifest.jsonl:2"):
        load_manifest(path)


def test_load_manifest_duplicate_id(write_manifest: Callable[..., Path]) -> None:
    path = write_manifest([{"id": "a", "image": "a.png"}, {"id": "a", "image": "b.png"}])

    with pytest.raises(ManifestError, match="duplicate id 'a'"):
        load_manifest(path)


def test_load_manifest_empty(tmp_path: Path) -> None:
    path = tmp_path / "empty.jsonl"
    path.write_text("\n\n", encoding="utf-8")

    with pytest.raises(ManifestError, match="empty manifest"):
        load_manifest(path)


def test_load_manifest_rejects_unknown_fields(write_manifest: Callable[..., Path]) -> None:
    path = write_manifest([{"id": "a", "image": "a.png", "caption": "frog"}])

    with pytest.raises(ManifestError, match="caption"):
        load_manifest(path)


def test_load_manifest_rejects_negative_feature_row(write_manifest: Callable[..., Path]) -> None:
    path = write_manifest([{"id": "a", "image": "a.png", "feature_row": -1}])

    with pytest.raises(ManifestError, match="feature_row"):
        load_manifest(path)


def test_manifest_fields_and_declared_classes(tmp_path: Path, write_manifest: Callable[..., Path]) -> None:
    path = write_manifest(
        [
            {"id": "a", "image": "a.png", "mask": "a_mask.png", "label": 0},
            {"id": "b", "image": "b.png", "feature_row": 3, "label": 1},
        ],
        header={"feature_file": "f.csv"},
    )

    manifest = load_manifest(path)

    first, second = manifest.records
    assert manifest.feature_file == (tmp_path / "f.csv").resolve()
    assert manifest.score_file is None
    assert first.mask_path == (tmp_path / "a_mask.png").resolve()
    assert (first.feature_row, second.feature_row) == (None, 3)
    assert second.mask_path is None
    assert manifest.declared_num_classes == 2


def test_manifest_round_trip(tmp_path: Path, write_manifest: Callable[..., Path]) -> None:
    path = write_manifest(
        [
            {"id": "a", "image": "img/a.png", "mask": "a_mask.png", "label": 0},
            {"id": "b", "image": "b.png", "feature_row": 3},
        ],
        header={"feature_file": "f.csv", "score_file": "s.csv"},
    )
    original = load_manifest(path)
    copy_path = tmp_path / "copy" / "manifest.jsonl"
    copy_path.parent.mkdir()

    dataset_io.write_manifest(original, copy_path)

    assert load_manifest(copy_path) == original


def test_subset_pins_feature_rows_and_drops_score_file(write_manifest: Callable[..., Path]) -> None:
    manifest = load_manifest(
        write_manifest(
            [
                {"id": "a", "image": "a.png"},
                {"id": "b", "image": "b.png", "feature_row": 7},
                {"id": "c", "image": "c.png"},
            ],
            header={"feature_file": "f.csv", "score_file": "s.csv"},
        ),
    )

    subset = manifest.subset(["c", "b"])

    assert subset.ids == ("c", "b")
    assert [record.feature_row for record in subset.records] == [2, 7]
    assert subset.feature_file == manifest.feature_file
    assert subset.score_file is None
    with pytest.raises(ManifestError, match="'z' is not in the manifest"):
        manifest.subset(["a", "z"])


def test_empty_manifest_structure_rejected() -> None:
    with pytest.raises(ManifestError, match="empty manifest"):
        DatasetManifest(records=())


# === Изображения ===


def _record(path: Path, mask: Path | None = None) -> SampleRecord:
    return SampleRecord(id="x", image_path=path, mask_path=mask)


def _as_array(buffer: PixelBuffer) -> np.ndarray:
    shape = (buffer.height, buffer.width) if buffer.channels == 1 else (buffer.height, buffer.width, buffer.channels)
    return np.frombuffer(buffer.data, dtype=np.uint8).reshape(shape)


def test_load_image_grayscale_and_rgb(write_image: Callable[..., Path], pixels: SimpleNamespace) -> None:
    gray = pixels.gradient(8, channels=1)
    rgb = pixels.noise(8)

    gray_buffer = load_image(_record(write_image("gray.png", gray)))
    rgb_buffer = load_image(_record(write_image("rgb.png", rgb)))

    assert (gray_buffer.width, gray_buffer.height, gray_buffer.channels) == (8, 8, 1)
    assert np.array_equal(_as_array(gray_buffer), gray)
    assert rgb_buffer.channels == 3
    assert np.array_equal(_as_array(rgb_buffer), rgb)


def test_load_image_jpeg(write_image: Callable[..., Path], pixels: SimpleNamespace) -> None:
    buffer = load_image(_record(write_image("a.jpg", pixels.gradient(16), quality=95)))

    assert (buffer.width, buffer.height, buffer.channels) == (16, 16, 3)
    assert len(buffer.data) == 16 * 16 * 3


def test_load_image_paletted_expands_to_rgb(tmp_path: Path) -> None:
    image = Image.fromarray(np.arange(16, dtype=np.uint8).reshape(4, 4))
    image.putpalette([value for index in range(256) for value in (index, 0, 255 - index)])
    path = tmp_path / "p.png"
    image.save(path)

    buffer = load_image(_record(path))

    assert buffer.channels == 3
    assert _as_array(buffer)[0, 1].tolist() == [1, 0, 254]


def test_load_image_rejects_alpha(tmp_path: Path) -> None:
    path = tmp_path / "rgba.png"
    Image.new("RGBA", (4, 4), (1, 2, 3, 4)).save(path)

    with pytest.raises(DecodeError, match="alpha"):
        load_image(_record(path))


def test_load_image_rejects_16_bit(tmp_path: Path) -> None:
    path = tmp_path / "deep.png"
    Image.fromarray(np.full((4, 4), 40000, dtype=np.uint16)).save(path)

    with pytest.raises(DecodeError, match="8 bits"):
        load_image(_record(path))


def test_load_image_rejects_other_formats(tmp_path: Path) -> None:
    path = tmp_path / "a.bmp"
    Image.new("RGB", (4, 4)).save(path)

    with pytest.raises(DecodeError, match="unsupported format BMP"):
        load_image(_record(path))


def test_load_image_corrupt_file(tmp_path: Path) -> None:
    path = tmp_path / "broken.png"
    path.write_bytes(b"definitely not a png")

    with pytest.raises(DecodeError):
        load_image(_record(path))


def test_load_image_missing_file(tmp_path: Path) -> None:
    with pytest.raises(MissingInputError):
        load_image(_record(tmp_path / "missing.png"))


def test_pixel_buffer_validates_length() -> None:
    with pytest.raises(DecodeError):
        PixelBuffer(width=2, height=2, channels=3, data=b"\x00" * 11)


# === Маски ===


def test_load_mask_single_channel(tmp_path: Path, write_mask: Callable[..., Path]) -> None:
    labels = np.array([[0, 1], [2, 255]], dtype=np.uint8)
    path = write_mask("m.png", labels)

    mask = load_mask(_record(tmp_path / "unused.png", path))

    assert (mask.width, mask.height) == (2, 2)
    assert mask.labels.tolist() == [0, 1, 2, 255]
    assert not mask.labels.flags.writeable


def test_load_mask_palette_indices_passthrough(tmp_path: Path, write_mask: Callable[..., Path]) -> None:
    labels = np.array([[3, 3, 7], [0, 12, 7]], dtype=np.uint8)
    path = write_mask("p.png", labels, mode="P")

    mask = load_mask(_record(tmp_path / "unused.png", path))

    assert mask.labels.tolist() == labels.ravel().tolist()


def test_load_mask_rejects_multichannel(tmp_path: Path, write_image: Callable[..., Path], pixels: SimpleNamespace) -> None:
    path = write_image("rgb_mask.png", pixels.noise(4))

    with pytest.raises(DecodeError, match="mode RGB"):
        load_mask(_record(tmp_path / "unused.png", path))


def test_load_mask_requires_mask_path(tmp_path: Path) -> None:
    with pytest.raises(MissingInputError, match="no mask"):
        load_mask(_record(tmp_path / "a.png"))


# === Признаки ===


def test_load_features_preserves_values(write_csv: Callable[[str, str], Path]) -> None:
    path = write_csv("f.csv", "id,f0,f1\na,0.1,-2.5e-3\nb,1e300,7\n")

    matrix = load_features(path, expected_n=2, expected_ids=["a", "b"])

    assert matrix.ids == ("a", "b")
    assert (matrix.n, matrix.d) == (2, 2)
    assert matrix.values.tolist() == [[0.1, -0.0025], [1e300, 7.0]]


@pytest.mark.parametrize(
    ("text", "message"),
    [
        ("id,f0\na,1\nc,2\n", "row 2: id 'c'"),
        ("id,f0\na,1\nb,x\n", "non-numeric"),
        ("id,f0,f1\na,1,2\nb,3\n", "row 2: expected 3 cells"),
        ("id,f0\na,1\nb,nan\n", "non-finite"),
        ("id,f0\na,1\n", "expected 2"),
    ],
)
def test_load_features_errors(write_csv: Callable[[str, str], Path], text: str, message: str) -> None:
    path = write_csv("f.csv", text)

    with pytest.raises(FeatureFileError, match=message):
        load_features(path, expected_n=2, expected_ids=["a", "b"])


def test_features_round_trip(tmp_path: Path) -> None:
    matrix = FeatureMatrix(ids=("a", "b"), values=np.array([[0.1, 1.0 / 3.0], [2.0, -5.5]]))
    path = tmp_path / "f.csv"

    write_features(matrix, path, echo="# coreset-select histograms num_classes=2")
    reloaded = load_features(path)

    assert reloaded.ids == matrix.ids
    assert np.array_equal(reloaded.values, matrix.values)


def test_resolve_feature_rows(write_manifest: Callable[..., Path]) -> None:
    manifest = load_manifest(
        write_manifest(
            [
                {"id": "a", "image": "a.png", "feature_row": 2},
                {"id": "b", "image": "b.png", "feature_row": 0},
            ],
        ),
    )
    matrix = FeatureMatrix(ids=("r0", "r1", "r2"), values=np.array([[0.0], [1.0], [2.0]]))

    aligned = resolve_feature_rows(manifest, matrix)

    assert aligned.ids == ("a", "b")
    assert aligned.values.ravel().tolist() == [2.0, 0.0]


def test_resolve_feature_rows_out_of_range(write_manifest: Callable[..., Path]) -> None:
    manifest = load_manifest(write_manifest([{"id": "a", "image": "a.png", "feature_row": 5}]))
    matrix = FeatureMatrix(ids=("r0",), values=np.array([[0.0]]))

    with pytest.raises(FeatureFileError, match="feature_row 5"):
        resolve_feature_rows(manifest, matrix)


# === Оценки ===


def test_load_scores_aligns_and_keeps_provenance(write_csv: Callable[[str, str], Path]) -> None:
    path = write_csv(
        "s.csv",
        "#[nll] external glow run\n# plain comment\nid,nll,bpp\nb,2.0,0.5\na,1.0,0.25\n",
    )

    table = load_scores(path, expected_ids=["a", "b"])

    assert table.ids == ("a", "b")
    assert table.column("nll").tolist() == [1.0, 2.0]
    assert table.column("bpp").tolist() == [0.25, 0.5]
    assert table.provenance == {"nll": "external glow run"}


def test_ids_starting_with_hash_are_data_after_header(write_csv: Callable[[str, str], Path]) -> None:
    scores = write_csv("s.csv", "# note\nid,nll\n#tag,1.0\n\nb,2.0\n")
    features = write_csv("f.csv", "id,f0\n#tag,0.5\nb,1.5\n")

    table = load_scores(scores, expected_ids=["#tag", "b"])
    matrix = load_features(features, expected_n=2, expected_ids=["#tag", "b"])

    assert table.ids == ("#tag", "b")
    assert table.column("nll").tolist() == [1.0, 2.0]
    assert matrix.ids == ("#tag", "b")
    assert matrix.values.tolist() == [[0.5], [1.5]]


def test_load_scores_missing_and_unknown_ids(write_csv: Callable[[str, str], Path]) -> None:
    path = write_csv("s.csv", "id,nll\na,1.0\nz,2.0\n")

    with pytest.raises(ScoreFileError, match="no row for id 'b'"):
        load_scores(path, expected_ids=["a", "b"])


def test_score_table_missing_column() -> None:
    table = ScoreTable(ids=("a",), columns={"bpp": np.array([1.0])})

    with pytest.raises(MissingInputError, match="nll"):
        table.column("nll")


def test_scores_round_trip(tmp_path: Path) -> None:
    table = ScoreTable(
        ids=("a", "b"),
        columns={"bpp": np.array([0.1, 1.0 / 3.0]), "nll": np.array([3.0, 4.0])},
        provenance={"bpp": "coreset-select score which=bpp"},
    )
    path = tmp_path / "scores.csv"

    write_scores(table, path)
    reloaded = load_scores(path)

    assert reloaded.names == ("bpp", "nll")
    assert np.array_equal(reloaded.column("bpp"), table.column("bpp"))
    assert reloaded.provenance == table.provenance


# === Отбор ===


def _selection() -> Selection:
    return Selection(
        entries=(
            SelectionEntry(id="b", original_score=0.9, final_score=0.45),
            SelectionEntry(id="a", original_score=1.0 / 3.0, final_score=1.0 / 3.0),
        ),
        params={"order": "desc", "seed": "0", "out": "sel dir/out.csv"},
    )


def test_write_selection_format(tmp_path: Path) -> None:
    path = tmp_path / "sel.csv"

    write_selection(_selection(), path)
    lines = path.read_text(encoding="utf-8").split("\n")

    assert lines[0] == "# coreset-select select order=desc out='sel dir/out.csv' seed=0"
    assert lines[1] == "rank,id,original_score,final_score"
    assert lines[2] == "1,b,0.9,0.45"
    assert lines[3] == f"2,a,{1.0 / 3.0!r},{1.0 / 3.0!r}"
    assert lines[4] == ""


def test_write_selection_is_byte_identical(tmp_path: Path) -> None:
    first, second = tmp_path / "one.csv", tmp_path / "two.csv"

    write_selection(_selection(), first)
    write_selection(_selection(), second)

    assert hashlib.sha256(first.read_bytes()).hexdigest() == hashlib.sha256(second.read_bytes()).hexdigest()


def test_read_selection_round_trip(tmp_path: Path) -> None:
    path = tmp_path / "sel.csv"
    write_selection(_selection(), path)

    selection = read_selection(path)

    assert selection == _selection()


def test_echo_round_trip() -> None:
    line = format_echo("select", {"seed": 0, "fraction": 0.25, "out": "a b.csv", "jsd_sqrt": False, "knn": None})

    command, params = parse_echo(line)

    assert line.startswith("# coreset-select select fraction=0.25 ")
    assert command == "select"
    assert params == {"fraction": "0.25", "jsd_sqrt": "false", "knn": "none", "out": "a b.csv", "seed": "0"}
