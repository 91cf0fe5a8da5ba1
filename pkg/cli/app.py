"""
Точка входа командной строки coreset-select (click).

Подкоманды: score, histograms, graph, select, baseline, stats, synth.
Ошибки входных данных печатаются одной строкой `error[<code>]: <message>`
в stderr с кодом выхода 2; непредвиденные ошибки логируются с трассировкой
и завершают процесс с кодом 1.
"""

from __future__ import annotations

import sys
from collections.abc import Callable
from functools import wraps
from pathlib import Path
from typing import Any, TypeVar, cast

import click

from cli import handlers
from services.synth import SynthConfig
from utils.config import BppDefaults, GraphDefaults, HistogramDefaults, KMeansDefaults, SynthDefaults
from utils.errors import ConfigError, CoresetError
from utils.logger import get_logger, setup_logger

logger = get_logger(__name__)

EXIT_INPUT_ERROR = 2
EXIT_UNEXPECTED = 1

F = TypeVar("F", bound=Callable[..., Any])

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
GRAPH_KINDS = (handlers.GRAPH_FEATURES, handlers.GRAPH_HISTOGRAM)


class SigmaType(click.ParamType):
    """`median` или положительное число."""

    name = "sigma"

    def convert(self, value: Any, param: click.Parameter | None, ctx: click.Context | None) -> float | None:  # noqa: ANN401
        if value is None or isinstance(value, float):
            return value
        text = str(value).strip().lower()
        if text == GraphDefaults.SIGMA_POLICY:
            return None
        try:
            sigma = float(text)
        except ValueError:
            self.fail(f"expected 'median' or a positive number, got {value!r}", param, ctx)
        if not sigma > 0.0 or sigma == float("inf"):
            self.fail(f"sigma must be a positive finite number, got {value!r}", param, ctx)
        return sigma


class IgnoreIndexType(click.ParamType):
    """Неотрицательный индекс класса или `none`."""

    name = "ignore_index"

    def convert(self, value: Any, param: click.Parameter | None, ctx: click.Context | None) -> int | None:  # noqa: ANN401
        if value is None or isinstance(value, int):
            return value
        text = str(value).strip().lower()
        if text == "none":
            return None
        try:
            index = int(text)
        except ValueError:
            self.fail(f"expected a non-negative integer or 'none', got {value!r}", param, ctx)
        if index < 0:
            self.fail(f"ignore index must be non-negative, got {index}", param, ctx)
        return index


SIGMA = SigmaType()
IGNORE_INDEX = IgnoreIndexType()
INPUT_FILE = click.Path(exists=False, dir_okay=False, path_type=Path)
OUTPUT_FILE = click.Path(dir_okay=False, writable=True, path_type=Path)


def handle_errors(func: F) -> F:
    """Переводит исключения пайплайна в однострочное сообщение и код выхода."""

    @wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:  # noqa: ANN401
        ctx = click.get_current_context()
        try:
            return func(*args, **kwargs)
        except (click.ClickException, click.exceptions.Exit):
            raise
        except CoresetError as exc:
            logger.error(f"Команда {ctx.info_name} завершилась ошибкой: {exc}")
            click.echo(f"error[{exc.code}]: {exc}", err=True)
            ctx.exit(EXIT_INPUT_ERROR)
        except OSError as exc:
            logger.error(f"Команда {ctx.info_name}: ошибка ввода-вывода: {exc}")
            click.echo(f"error[io]: {exc}", err=True)
            ctx.exit(EXIT_INPUT_ERROR)
        except Exception as exc:
            logger.opt(exception=exc).error(f"Непредвиденная ошибка в команде {ctx.info_name}")
            click.echo(f"error[internal]: {exc}", err=True)
            ctx.exit(EXIT_UNEXPECTED)
        return None

    return cast(F, wrapper)


class CoresetGroup(click.Group):
    """
    Группа подкоманд с однострочными ошибками разбора аргументов.

    Ошибки click (нет обязательного флага, неверное значение) печатаются как
    `error[usage]: <message>` без блока Usage и завершают процесс с кодом 2.
    """

    def main(self, *args: Any, **kwargs: Any) -> Any:  # noqa: ANN401
        standalone = kwargs.pop("standalone_mode", True)
        try:
            code = super().main(*args, standalone_mode=False, **kwargs)
        except click.UsageError as exc:
            click.echo(f"error[usage]: {_one_line(exc.format_message())}", err=True)
            code = EXIT_INPUT_ERROR
        except click.ClickException as exc:
            click.echo(f"error[usage]: {_one_line(exc.format_message())}", err=True)
            code = exc.exit_code
        except click.Abort:
            click.echo("error[aborted]: interrupted", err=True)
            code = EXIT_UNEXPECTED
        if not standalone:
            return code
        sys.exit(code if isinstance(code, int) else 0)


def _one_line(message: str) -> str:
    return " ".join(message.split())


def _threads(ctx: click.Context) -> int:
    return int(ctx.obj.get("threads", 1)) if ctx.obj else 1


def graph_input_options(func: F) -> F:
    """Флаги, нужные для построения графа признаков или гистограмм."""
    options = [
        click.option("--knn", "knn", type=click.IntRange(min=1), default=None, help="Число соседей K."),
        click.option(
            "--sigma",
            type=SIGMA,
            default=GraphDefaults.SIGMA_POLICY,
            show_default=True,
            help="median или фиксированная σ.",
        ),
        click.option("--features", type=INPUT_FILE, default=None, help="CSV признаков (для графа features)."),
        click.option("--num-classes", type=click.IntRange(min=1), default=None, help="Число классов C масок."),
        click.option(
            "--ignore-index",
            type=IGNORE_INDEX,
            default=str(HistogramDefaults.IGNORE_INDEX),
            show_default=True,
            help="Игнорируемая метка или none.",
        ),
        click.option("--jsd-sqrt", is_flag=True, default=False, help="Расстояние √JSD вместо JSD."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@click.group(cls=CoresetGroup, context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default=None, help="Уровень логов.")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True, help="Число рабочих потоков.")
@click.pass_context
def cli(ctx: click.Context, log_level: str | None, threads: int) -> None:
    """Отбор обучающего подмножества изображений по BPP_J, CPX, PS и K-NN графу."""
    if log_level is not None:
        setup_logger(log_level)
    ctx.ensure_object(dict)
    ctx.obj["threads"] = threads


@cli.command("score", short_help="посчитать столбец bpp, ps или cpx")
@click.option("--manifest", "manifest_path", type=INPUT_FILE, required=True)
@click.option("--which", type=click.Choice(["bpp", "ps", "cpx"]), required=True)
@click.option("--out", type=OUTPUT_FILE, required=True, help="Таблица оценок (создаётся или дополняется).")
@click.option("--external", type=INPUT_FILE, default=None, help="CSV внешних оценок (nll) для cpx.")
@click.option("--features", type=INPUT_FILE, default=None)
@click.option(
    "--jpeg-quality",
    type=click.IntRange(BppDefaults.MIN_QUALITY, BppDefaults.MAX_QUALITY),
    default=BppDefaults.JPEG_QUALITY,
    show_default=True,
)
@click.option("--chroma", type=click.Choice(["none", "4:2:0"]), default=BppDefaults.CHROMA_SUBSAMPLING, show_default=True)
@click.option("--stored-size", is_flag=True, default=False, help="Размер уже сохранённых JPEG без перекодирования.")
@click.option("--k", type=click.IntRange(min=1), default=None, help="Число кластеров k-means.")
@click.option("--seed", type=int, default=KMeansDefaults.SEED, show_default=True)
@click.option("--max-iter", type=click.IntRange(min=1), default=KMeansDefaults.MAX_ITER, show_default=True)
@click.option("--tol", type=click.FloatRange(min=0.0), default=KMeansDefaults.TOL, show_default=True)
@click.option("--n-init", type=click.IntRange(min=1), default=KMeansDefaults.N_INIT, show_default=True)
@click.pass_context
@handle_errors
def score_command(ctx: click.Context, **kwargs: Any) -> None:  # noqa: ANN401
    handlers.handle_score(**kwargs, threads=_threads(ctx))
    click.echo(f"{kwargs['which']} -> {kwargs['out']}")


@cli.command("histograms", short_help="выгрузить гистограммы меток в CSV")
@click.option("--manifest", "manifest_path", type=INPUT_FILE, required=True)
@click.option("--num-classes", type=click.IntRange(min=1), required=True)
@click.option("--ignore-index", type=IGNORE_INDEX, default=str(HistogramDefaults.IGNORE_INDEX), show_default=True)
@click.option("--out", type=OUTPUT_FILE, required=True)
@click.pass_context
@handle_errors
def histograms_command(ctx: click.Context, **kwargs: Any) -> None:  # noqa: ANN401
    handlers.handle_histograms(**kwargs, threads=_threads(ctx))
    click.echo(f"histograms -> {kwargs['out']}")


@cli.command("graph", short_help="построить K-NN граф и сохранить рёбра")
@click.option("--manifest", "manifest_path", type=INPUT_FILE, required=True)
@click.option("--graph", "kind", type=click.Choice(GRAPH_KINDS), required=True)
@graph_input_options
@click.option("--out", type=OUTPUT_FILE, required=True)
@click.pass_context
@handle_errors
def graph_command(ctx: click.Context, knn: int | None, **kwargs: Any) -> None:  # noqa: ANN401
    if knn is None:
        raise ConfigError("graph requires --knn")
    handlers.handle_graph(knn=knn, **kwargs, threads=_threads(ctx))
    click.echo(f"graph -> {kwargs['out']}")


@cli.command("select", short_help="отобрать подмножество")
@click.option("--manifest", "manifest_path", type=INPUT_FILE, required=True)
@click.option("--scores", type=INPUT_FILE, default=None, help="Таблица оценок (иначе score_file манифеста).")
@click.option("--score", "score_name", required=True, help="Имя столбца оценки.")
@click.option("--order", type=click.Choice(["asc", "desc"]), required=True, help="Направление, без значения по умолчанию.")
@click.option("--graph", "kind", type=click.Choice([handlers.GRAPH_NONE, *GRAPH_KINDS]), required=True)
@click.option("--graph-file", type=INPUT_FILE, default=None, help="Готовый граф из команды graph.")
@graph_input_options
@click.option("--count", type=int, default=None)
@click.option("--fraction", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=OUTPUT_FILE, required=True)
@click.option("--subset-manifest", type=OUTPUT_FILE, default=None, help="Манифест выбранных образцов.")
@click.pass_context
@handle_errors
def select_command(ctx: click.Context, **kwargs: Any) -> None:  # noqa: ANN401
    selection = handlers.handle_select(**kwargs, threads=_threads(ctx))
    click.echo(f"selected {len(selection)} -> {kwargs['out']}")


@cli.command("baseline", short_help="случайный отбор (RND)")
@click.option("--manifest", "manifest_path", type=INPUT_FILE, required=True)
@click.option("--scores", type=INPUT_FILE, default=None)
@click.option("--score", "score_name", default=None, help="Столбец, значения которого попадут в отчёт.")
@click.option("--count", type=int, default=None)
@click.option("--fraction", type=float, default=None)
@click.option("--seed", type=int, required=True)
@click.option("--out", type=OUTPUT_FILE, required=True)
@click.option("--subset-manifest", type=OUTPUT_FILE, default=None, help="Манифест выбранных образцов.")
@click.pass_context
@handle_errors
def baseline_command(ctx: click.Context, **kwargs: Any) -> None:  # noqa: ANN401
    selection = handlers.handle_baseline(**kwargs)
    click.echo(f"selected {len(selection)} -> {kwargs['out']}")


@cli.command("stats", short_help="сводка по оценкам и покрытию отбора")
@click.option("--manifest", "manifest_path", type=INPUT_FILE, required=True)
@click.option("--scores", type=INPUT_FILE, default=None)
@click.option("--selection", "selection_path", type=INPUT_FILE, default=None)
@click.option("--graph-file", type=INPUT_FILE, default=None)
@click.option("--features", type=INPUT_FILE, default=None)
@click.option("--num-classes", type=click.IntRange(min=1), default=None)
@click.option("--ignore-index", type=IGNORE_INDEX, default=str(HistogramDefaults.IGNORE_INDEX), show_default=True)
@click.option("--out", type=OUTPUT_FILE, default=None)
@click.pass_context
@handle_errors
def stats_command(ctx: click.Context, **kwargs: Any) -> None:  # noqa: ANN401
    for line in handlers.handle_stats(**kwargs, threads=_threads(ctx)):
        click.echo(line)


@cli.command("synth", short_help="синтетический бенчмарк покрытия кластеров")
@click.option("--clusters", type=int, default=SynthDefaults.CLUSTERS, show_default=True)
@click.option("--points", type=int, default=SynthDefaults.POINTS_PER_CLUSTER, show_default=True)
@click.option("--count", type=int, default=SynthDefaults.COUNT, show_default=True)
@click.option("--knn", type=int, default=SynthDefaults.KNN, show_default=True)
@click.option("--sigma", type=SIGMA, default=GraphDefaults.SIGMA_POLICY, show_default=True)
@click.option("--seed", type=int, default=SynthDefaults.SEED, show_default=True)
@click.option("--runs", type=int, default=SynthDefaults.RUNS, show_default=True)
@click.option("--out", type=OUTPUT_FILE, default=None)
@handle_errors
def synth_command(
    clusters: int,
    points: int,
    count: int,
    knn: int,
    sigma: float | None,
    seed: int,
    runs: int,
    out: Path | None,
) -> None:
    cfg = SynthConfig(
        clusters=clusters,
        points_per_cluster=points,
        count=count,
        knn=knn,
        sigma=sigma,
        seed=seed,
        runs=runs,
    )
    for line in handlers.handle_synth(cfg, out):
        click.echo(line)


def main() -> None:
    """Запуск CLI как консольного скрипта."""
    cli(prog_name="coreset-select")
