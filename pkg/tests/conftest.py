import time

import numpy as np
import pytest

from pyrovigil.features import SamplingPlan
from pyrovigil.frameio import write_ppm
from pyrovigil.pipeline import train_codebook, train_model
from pyrovigil.synth import fire_patch, nonfire_patch


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def synth_artifacts(tmp_path_factory):
    """Codebook + model trained once on the synthetic patch set; shared by
    the pipeline, CLI, and acceptance tests."""
    root = tmp_path_factory.mktemp("artifacts")
    fire_dir = root / "fire"
    non_dir = root / "nonfire"
    fire_dir.mkdir()
    non_dir.mkdir()
    for i in range(100):
        write_ppm(fire_dir / f"{i:06d}.ppm", fire_patch(i).pixels)
        write_ppm(non_dir / f"{i:06d}.ppm", nonfire_patch(i).pixels)
    cb_path = root / "codebook.pvcb"
    model_path = root / "model.pvsm"
    t0 = time.perf_counter()
    book = train_codebook(
        [fire_dir, non_dir], SamplingPlan(), k=500, iterations=50, seed=3,
        out_path=cb_path, log=None,
    )
    model, report = train_model(
        fire_dir, non_dir, book, seed=3, out_path=model_path, log=None
    )
    train_seconds = time.perf_counter() - t0
    return {
        "root": root,
        "fire_dir": fire_dir,
        "nonfire_dir": non_dir,
        "codebook_path": cb_path,
        "model_path": model_path,
        "codebook": book,
        "model": model,
        "train_report": report,
        "train_seconds": train_seconds,
    }
