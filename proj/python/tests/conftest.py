import pathlib

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[2]


@pytest.fixture
def toy_graph_path():
    return ROOT / "tests" / "fixtures" / "toy_graph.jsonl"


@pytest.fixture
def data_dir():
    return ROOT / "data"
