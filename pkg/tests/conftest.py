import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from neogat.cli import main


@dataclass
class Pipeline:
    root: Path
    data: Path
    store: Path
    run: Path
    checkpoint: Path
    seconds: float


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory) -> Pipeline:
    """synth -> preprocess -> train (holdout) through the CLI, run once per session."""
    root = tmp_path_factory.mktemp("pipeline")
    data, store, run = root / "data", root / "store", root / "run"
    t0 = time.perf_counter()
    assert main(["synth", "--out", str(data), "--seed", "7"]) == 0
    assert main(["preprocess", str(data), "--out", str(store), "--seed", "7"]) == 0
    assert main(["train", str(store), "--out", str(run), "--seed", "7"]) == 0
    return Pipeline(root, data, store, run, run / "fold00" / "checkpoint", time.perf_counter() - t0)


@pytest.fixture(scope="session")
def trained_model(pipeline):
    from neogat.model import load_checkpoint

    return load_checkpoint(pipeline.checkpoint)
