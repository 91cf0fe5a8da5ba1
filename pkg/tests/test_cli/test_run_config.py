from pathlib import Path

import pytest

from cli.run_config import RunConfig
from services.score_algebra import Order
from utils.errors import ConfigError


def test_echo_sorts_keys_and_normalizes_values() -> None:
    run = RunConfig(
        "select",
        {"order": Order.DESCENDING, "count": 10, "fraction": None, "out": Path("out/sel.csv"), "jsd_sqrt": True},
    )

    assert run.echo() == "# coreset-select select count=10 fraction=none jsd_sqrt=true order=desc out=out/sel.csv seed=0"
    assert run.provenance() == run.echo()[2:]
    assert run.seed == 0


def test_as_params_are_strings() -> None:
    run = RunConfig("baseline", {"fraction": 0.1, "seed": 5})

    assert run.as_params() == {"fraction": "0.1", "seed": "5"}
    assert run.seed == 5


@pytest.mark.parametrize(
    "options",
    [
        {},
        {"count": 3, "fraction": 0.5},
        {"count": 0},
        {"fraction": 0.0},
        {"fraction": 1.5},
    ],
)
def test_counted_commands_validate_count_and_fraction(options: dict[str, object]) -> None:
    with pytest.raises(ConfigError):
        RunConfig("select", options)


def test_other_commands_do_not_need_count() -> None:
    run = RunConfig("graph", {"knn": 5})

    assert run.options == {"knn": 5, "seed": 0}


@pytest.mark.parametrize(("options", "n", "expected"), [({"count": 4}, 10, 4), ({"fraction": 0.5}, 9, 5)])
def test_count_for(options: dict[str, object], n: int, expected: int) -> None:
    assert RunConfig("select", options).count_for(n) == expected
