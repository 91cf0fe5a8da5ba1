"""
Обработчики подкоманд CLI.

Каждый обработчик получает уже разобранные флаги, выполняет стадию пайплайна
(оценка → граф → отбор) и пишет результат в файл. Стадии связаны только
файлами, поэтому дорогие шаги (JPEG-кодирование, O(n²) поиск соседей)
перезапускаются независимо.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from cli.run_config import RunConfig
from services.bpp_score import BPP_COLUMN, BppConfig, ChromaSubsampling, flag_low_outliers, score_dataset_bpp
from services.graph_sampler import CoverageReport, coverage_stats, graph_select
from services.knn_graph import KnnGraph, Metric, build_graph, pairwise_knn, read_graph, write_graph
from services.label_histogram import dataset_histograms, histograms_to_matrix
from services.prototypicality import PS_COLUMN, KMeansConfig, kmeans_fit, ps_score
from services.score_algebra import CPX_COLUMN, NLL_COLUMN, Order, add_cpx, random_subset, rank, top_m
from services.synth import SynthConfig, SynthReport, run_synth
from utils.config import GraphDefaults
from utils.dataset_io import (
    DatasetManifest,
    FeatureMatrix,
    ScoreTable,
    Selection,
    format_echo_value,
    load_aligned_features,
    load_manifest,
    load_scores,
    read_selection,
    write_features,
    write_manifest,
    write_scores,
    write_selection,
)
from utils.errors import ConfigError, GraphError, MissingInputError
from utils.logger import get_logger

logger = get_logger(__name__)

GRAPH_FEATURES = "features"
GRAPH_HISTOGRAM = "histogram"
GRAPH_NONE = "none"


def _features_path(manifest: DatasetManifest, features: Path | None, purpose: str) -> Path:
    path = features or manifest.feature_file
    if path is None:
        raise MissingInputError(f"{purpose} requires features (--features or feature_file in the manifest header)")
    return path


def _scores_path(manifest: DatasetManifest, scores: Path | None) -> Path:
    path = scores or manifest.score_file
    if path is None:
        raise MissingInputError("a score file is required (--scores or score_file in the manifest header)")
    return path


def _existing_table(manifest: DatasetManifest, out: Path) -> ScoreTable:
    if out.is_file():
        return load_scores(out, expected_ids=manifest.ids)
    return ScoreTable(ids=manifest.ids, columns={})


# === score ===


def score_ps(
    manifest: DatasetManifest,
    features: Path | None,
    k: int | None,
    seed: int,
    max_iter: int,
    tol: float,
    n_init: int,
) -> tuple[ScoreTable, int]:
    """PS по признакам; k по умолчанию равно числу классов, объявленных в манифесте."""
    matrix = load_aligned_features(manifest, _features_path(manifest, features, "ps"))
    if k is None:
        k = manifest.declared_num_classes
        if k is None:
            raise MissingInputError("ps requires --k (the manifest does not declare labels)")
        logger.info(f"k не задан, используется число классов манифеста: {k}")
    model = kmeans_fit(matrix, KMeansConfig(k=k, seed=seed, max_iter=max_iter, tol=tol, n_init=n_init))
    return ps_score(matrix, model), k


def merge_external(table: ScoreTable, incoming: ScoreTable, source: Path) -> ScoreTable:
    """
    Переносит из внешней таблицы входы CPX: nll всегда, bpp только если своего ещё нет.

    Прочие столбцы внешнего файла игнорируются; несовпадающий bpp считается ошибкой.
    """
    for name in (NLL_COLUMN, BPP_COLUMN):
        if name not in incoming.columns:
            continue
        if name == BPP_COLUMN and name in table.columns:
            if not np.array_equal(table.column(name), incoming.column(name)):
                raise ConfigError(f"column '{name}' in {source.name} conflicts with the one already in the score table")
            continue
        table = table.with_column(name, incoming.column(name), incoming.provenance.get(name))
    return table


def handle_score(
    *,
    manifest_path: Path,
    which: str,
    out: Path,
    external: Path | None,
    features: Path | None,
    jpeg_quality: int,
    chroma: str,
    stored_size: bool,
    k: int | None,
    seed: int,
    max_iter: int,
    tol: float,
    n_init: int,
    threads: int,
) -> RunConfig:
    """
    Пишет (или обновляет) столбец `which` в таблице `out`.

    Повторный запуск с теми же флагами даёт побайтно тот же файл.
    """
    manifest = load_manifest(manifest_path)
    table = _existing_table(manifest, out)
    options: dict[str, object] = {"manifest": manifest_path, "which": which, "out": out, "seed": seed}

    if which == BPP_COLUMN:
        cfg = BppConfig(
            jpeg_quality=jpeg_quality,
            chroma_subsampling=ChromaSubsampling(chroma),
            use_stored_size=stored_size,
        )
        options.update(cfg.echo_params())
        run = RunConfig("score", options)
        values = score_dataset_bpp(manifest, cfg, threads=threads).column(BPP_COLUMN)
        table = table.with_column(BPP_COLUMN, values, run.provenance())
    elif which == PS_COLUMN:
        ps_table, resolved_k = score_ps(manifest, features, k, seed, max_iter, tol, n_init)
        options.update(
            {
                "features": _features_path(manifest, features, "ps"),
                "k": resolved_k,
                "max_iter": max_iter,
                "tol": tol,
                "n_init": n_init,
            },
        )
        run = RunConfig("score", options)
        table = table.with_column(PS_COLUMN, ps_table.column(PS_COLUMN), run.provenance())
    elif which == CPX_COLUMN:
        source = external or manifest.score_file
        options["external"] = source
        run = RunConfig("score", options)
        if source is not None:
            table = merge_external(table, load_scores(source, expected_ids=manifest.ids), source)
        table = add_cpx(table, run.provenance())
    else:
        raise ConfigError(f"unknown score '{which}' (expected bpp, ps or cpx)")

    write_scores(table, out)
    logger.info(f"Столбец {which} записан в {out}")
    return run


# === histograms / graph ===


def load_histogram_points(
    manifest: DatasetManifest,
    num_classes: int | None,
    ignore_index: int | None,
    threads: int,
) -> FeatureMatrix:
    if num_classes is None:
        raise MissingInputError("histograms require --num-classes")
    histograms = dataset_histograms(manifest, num_classes, ignore_index, threads=threads)
    return histograms_to_matrix(manifest.ids, histograms)


def handle_histograms(
    *,
    manifest_path: Path,
    num_classes: int,
    ignore_index: int | None,
    out: Path,
    threads: int,
) -> RunConfig:
    manifest = load_manifest(manifest_path)
    run = RunConfig(
        "histograms",
        {"manifest": manifest_path, "num_classes": num_classes, "ignore_index": ignore_index, "out": out},
    )
    write_features(load_histogram_points(manifest, num_classes, ignore_index, threads), out, run.echo())
    return run


def graph_points(
    manifest: DatasetManifest,
    kind: str,
    *,
    features: Path | None,
    num_classes: int | None,
    ignore_index: int | None,
    jsd_sqrt: bool,
    threads: int,
) -> tuple[FeatureMatrix, Metric]:
    """Точки и метрика графа: признаки с L2 (G_S) или гистограммы меток с JSD (G_H)."""
    if kind == GRAPH_FEATURES:
        path = _features_path(manifest, features, "a features graph")
        return load_aligned_features(manifest, path), Metric.EUCLIDEAN
    if kind == GRAPH_HISTOGRAM:
        points = load_histogram_points(manifest, num_classes, ignore_index, threads)
        return points, Metric.JS_DISTANCE if jsd_sqrt else Metric.JSD
    raise ConfigError(f"unknown graph kind '{kind}'")


def graph_options(
    kind: str,
    *,
    manifest: DatasetManifest,
    knn: int | None,
    sigma: float | None,
    features: Path | None,
    num_classes: int | None,
    ignore_index: int | None,
    jsd_sqrt: bool,
) -> dict[str, object]:
    options: dict[str, object] = {
        "graph": kind,
        "knn": knn,
        "sigma": GraphDefaults.SIGMA_POLICY if sigma is None else sigma,
    }
    if kind == GRAPH_FEATURES:
        options["features"] = features or manifest.feature_file
    elif kind == GRAPH_HISTOGRAM:
        options.update({"num_classes": num_classes, "ignore_index": ignore_index, "jsd_sqrt": jsd_sqrt})
    return options


def construct_graph(
    manifest: DatasetManifest,
    kind: str,
    *,
    knn: int | None,
    sigma: float | None,
    features: Path | None,
    num_classes: int | None,
    ignore_index: int | None,
    jsd_sqrt: bool,
    threads: int,
) -> KnnGraph:
    if knn is None:
        raise MissingInputError("a K-NN graph requires --knn")
    points, metric = graph_points(
        manifest,
        kind,
        features=features,
        num_classes=num_classes,
        ignore_index=ignore_index,
        jsd_sqrt=jsd_sqrt,
        threads=threads,
    )
    return build_graph(pairwise_knn(points, metric, knn, threads=threads), sigma)


def handle_graph(
    *,
    manifest_path: Path,
    kind: str,
    knn: int,
    sigma: float | None,
    features: Path | None,
    num_classes: int | None,
    ignore_index: int | None,
    jsd_sqrt: bool,
    out: Path,
    threads: int,
) -> RunConfig:
    manifest = load_manifest(manifest_path)
    options = graph_options(
        kind,
        manifest=manifest,
        knn=knn,
        sigma=sigma,
        features=features,
        num_classes=num_classes,
        ignore_index=ignore_index,
        jsd_sqrt=jsd_sqrt,
    )
    options.update({"manifest": manifest_path, "out": out})
    run = RunConfig("graph", options)
    graph = construct_graph(
        manifest,
        kind,
        knn=knn,
        sigma=sigma,
        features=features,
        num_classes=num_classes,
        ignore_index=ignore_index,
        jsd_sqrt=jsd_sqrt,
        threads=threads,
    )
    write_graph(graph, out, run.options)
    return run


# === select / baseline ===


def _write_subset(manifest: DatasetManifest, selection: Selection, path: Path | None) -> None:
    """Манифест выбранных образцов в порядке отбора, готовый для обучения."""
    if path is not None:
        write_manifest(manifest.subset(selection.ids), path)


def handle_select(
    *,
    manifest_path: Path,
    scores: Path | None,
    score_name: str,
    order: str,
    kind: str,
    graph_file: Path | None,
    knn: int | None,
    sigma: float | None,
    features: Path | None,
    num_classes: int | None,
    ignore_index: int | None,
    jsd_sqrt: bool,
    count: int | None,
    fraction: float | None,
    seed: int,
    out: Path,
    threads: int,
    subset_manifest: Path | None = None,
) -> Selection:
    """
    Отбор m образцов: только по оценке (`--graph none`) или с K-NN графом.

    Граф берётся из `--graph-file`, если он передан, иначе строится заново.
    """
    manifest = load_manifest(manifest_path)
    scores_path = _scores_path(manifest, scores)
    options: dict[str, object] = {
        "manifest": manifest_path,
        "scores": scores_path,
        "score": score_name,
        "order": order,
        "count": count,
        "fraction": fraction,
        "seed": seed,
        "out": out,
    }
    if kind == GRAPH_NONE:
        options["graph"] = GRAPH_NONE
    elif graph_file is not None:
        options.update({"graph": kind, "graph_file": graph_file})
    else:
        options.update(
            graph_options(
                kind,
                manifest=manifest,
                knn=knn,
                sigma=sigma,
                features=features,
                num_classes=num_classes,
                ignore_index=ignore_index,
                jsd_sqrt=jsd_sqrt,
            ),
        )
    if subset_manifest is not None:
        options["subset_manifest"] = subset_manifest
    run = RunConfig("select", options)

    table = load_scores(scores_path, expected_ids=manifest.ids)
    values = table.column(score_name)
    m = run.count_for(len(manifest))
    direction = Order(order)

    params = {**run.as_params(), "m": format_echo_value(m)}

    if kind == GRAPH_NONE:
        ranking = rank(values, direction, manifest.ids, score_name)
        selection = top_m(ranking, m, values, manifest.ids, params)
    else:
        if graph_file is not None:
            graph = read_graph(graph_file)
        else:
            graph = construct_graph(
                manifest,
                kind,
                knn=knn,
                sigma=sigma,
                features=features,
                num_classes=num_classes,
                ignore_index=ignore_index,
                jsd_sqrt=jsd_sqrt,
                threads=threads,
            )
        if graph.n != len(manifest):
            raise GraphError(f"graph has {graph.n} nodes but the manifest has {len(manifest)} records")
        # K, метрика и итоговая σ берутся из самого графа: при --graph-file флагов нет
        for key, value in graph.echo_params().items():
            if key != "n":
                params.setdefault(key, format_echo_value(value))
        selection = graph_select(graph, values, m, direction, manifest.ids, params)

    write_selection(selection, out)
    _write_subset(manifest, selection, subset_manifest)
    return selection


def handle_baseline(
    *,
    manifest_path: Path,
    scores: Path | None,
    score_name: str | None,
    count: int | None,
    fraction: float | None,
    seed: int,
    out: Path,
    subset_manifest: Path | None = None,
) -> Selection:
    """Случайный отбор (RND) как точка отсчёта для сравнения с отбором по оценкам."""
    manifest = load_manifest(manifest_path)
    options: dict[str, object] = {
        "manifest": manifest_path,
        "count": count,
        "fraction": fraction,
        "seed": seed,
        "out": out,
    }
    values = None
    if score_name is not None:
        scores_path = _scores_path(manifest, scores)
        options.update({"scores": scores_path, "score": score_name})
        values = load_scores(scores_path, expected_ids=manifest.ids).column(score_name)
    if subset_manifest is not None:
        options["subset_manifest"] = subset_manifest
    run = RunConfig("baseline", options)
    selection = random_subset(manifest.ids, values, run.count_for(len(manifest)), run.seed, run.as_params())
    write_selection(selection, out)
    _write_subset(manifest, selection, subset_manifest)
    return selection


# === stats ===


def _fmt(value: float | None) -> str:
    return "none" if value is None else repr(float(value))


def score_summary_lines(table: ScoreTable) -> list[str]:
    lines: list[str] = []
    for name in table.names:
        values = table.column(name)
        q1, median, q3 = (float(value) for value in np.percentile(values, [25.0, 50.0, 75.0]))
        outliers = flag_low_outliers(table, name)
        lines.append(
            f"score {name}: count={values.size} min={_fmt(values.min())} max={_fmt(values.max())} "
            f"mean={_fmt(values.mean())} std={_fmt(values.std())} q1={_fmt(q1)} median={_fmt(median)} "
            f"q3={_fmt(q3)} low_fence={_fmt(outliers.fence)} low_outliers={';'.join(outliers.ids) or 'none'}",
        )
    return lines


def coverage_line(report: CoverageReport) -> str:
    return (
        f"coverage: size={report.size} mean_pairwise={_fmt(report.mean_pairwise)} "
        f"min_pairwise={_fmt(report.min_pairwise)} one_hop_fraction={_fmt(report.one_hop_fraction)}"
    )


def handle_stats(
    *,
    manifest_path: Path,
    scores: Path | None,
    selection_path: Path | None,
    graph_file: Path | None,
    features: Path | None,
    num_classes: int | None,
    ignore_index: int | None,
    out: Path | None,
    threads: int,
) -> list[str]:
    """
    Сводка по столбцам оценок и, при переданных отборе и графе, покрытие отбора.

    Попарные расстояния внутри отбора считаются, если доступны точки графа:
    признаки для евклидова графа, `--num-classes` для графа гистограмм.
    """
    manifest = load_manifest(manifest_path)
    options: dict[str, object] = {"manifest": manifest_path}
    lines: list[str] = []

    scores_path = scores or manifest.score_file
    if scores_path is not None:
        options["scores"] = scores_path
        lines.extend(score_summary_lines(load_scores(scores_path, expected_ids=manifest.ids)))

    if (selection_path is None) != (graph_file is None):
        raise ConfigError("coverage statistics need both --selection and --graph-file")
    if selection_path is not None and graph_file is not None:
        options.update({"selection": selection_path, "graph_file": graph_file})
        graph = read_graph(graph_file)
        if graph.n != len(manifest):
            raise GraphError(f"graph has {graph.n} nodes but the manifest has {len(manifest)} records")
        position = {sample_id: index for index, sample_id in enumerate(manifest.ids)}
        selection = read_selection(selection_path)
        unknown = [sample_id for sample_id in selection.ids if sample_id not in position]
        if unknown:
            raise MissingInputError(f"selection id '{unknown[0]}' is not in the manifest")

        points: FeatureMatrix | None = None
        if graph.metric in {Metric.JSD, Metric.JS_DISTANCE}:
            if num_classes is not None:
                options.update({"num_classes": num_classes, "ignore_index": ignore_index})
                points = load_histogram_points(manifest, num_classes, ignore_index, threads)
        elif features is not None or manifest.feature_file is not None:
            feature_path = _features_path(manifest, features, "coverage distances")
            options["features"] = feature_path
            points = load_aligned_features(manifest, feature_path)
        report = coverage_stats([position[sample_id] for sample_id in selection.ids], graph, points)
        lines.append(coverage_line(report))

    if not lines:
        raise MissingInputError("nothing to report: pass --scores and/or --selection with --graph-file")

    if out is not None:
        options["out"] = out
        run = RunConfig("stats", options)
        with out.open("w", encoding="utf-8", newline="") as handle:
            handle.write("\n".join([run.echo(), *lines]) + "\n")
    return lines


# === synth ===


def synth_lines(report: SynthReport) -> list[str]:
    cfg = report.config
    lines = [
        f"run seed={run.seed} score_only_clusters={run.score_only_clusters}/{cfg.clusters} "
        f"graph_clusters={run.graph_clusters}/{cfg.clusters}"
        for run in report.runs
    ]
    lines.append(
        f"summary runs={len(report.runs)} mean_score_only={report.mean_score_only!r} "
        f"mean_graph={report.mean_graph!r} graph_not_worse_fraction={report.graph_not_worse_fraction!r} "
        f"graph_near_full_fraction={report.graph_near_full_fraction!r}",
    )
    return lines


def handle_synth(cfg: SynthConfig, out: Path | None) -> list[str]:
    report = run_synth(cfg)
    lines = synth_lines(report)
    if out is not None:
        options = cfg.echo_params()
        options["out"] = out
        run = RunConfig("synth", options)
        with out.open("w", encoding="utf-8", newline="") as handle:
            handle.write(run.echo() + "\n")
            handle.write("run,seed,score_only_clusters,graph_clusters\n")
            for index, item in enumerate(report.runs, start=1):
                handle.write(f"{index},{item.seed},{item.score_only_clusters},{item.graph_clusters}\n")
    return lines
