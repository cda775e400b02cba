import os
from pathlib import Path

import pytest
import torch

from ddmark.msgcodec import SpreadParams
from ddmark.networks import WatermarkModel, save_checkpoint
from ddmark.training import TrainConfig

SMOKE_ATTACKS = ["none", "dropout:p=0.5", "jpeg:q=50"]


def smoke_config(out_dir) -> TrainConfig:
    return TrainConfig(n_train=500, n_test=100, image_size=128, epochs=10, disc_epochs=2, batch_size=12,
                       attacks=SMOKE_ATTACKS, eval_attacks=SMOKE_ATTACKS, seed=0, checkpoint_every=5,
                       out_dir=str(out_dir))


def run_smoke(out_dir) -> Path:
    from ddmark.training import train_pipeline

    _, final = train_pipeline(smoke_config(out_dir))
    return Path(out_dir)


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory):
    """Directory of a finished smoke training run (about 1.5 h on one CPU).

    Set ``DDMARK_SMOKE_DIR`` to reuse a run produced earlier with the same
    configuration; otherwise a fresh one is trained.
    """
    cached = os.environ.get("DDMARK_SMOKE_DIR")
    if cached and (Path(cached) / "checkpoint_final.pt").exists():
        return Path(cached)
    return run_smoke(tmp_path_factory.mktemp("smoke_a"))


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """Untrained 8-channel model; enough for plumbing, not for decoding."""
    torch.manual_seed(0)
    model = WatermarkModel(SpreadParams(L=32, k=2, b=16, n=3, W=64, H=64), channels=8)
    path = tmp_path_factory.mktemp("ckpt") / "tiny.pt"
    save_checkpoint(path, model, config={"channels": 8})
    return path


# -- acceptance reporting --------------------------------------------------------

ACCEPTANCE: dict = {}
CRITERIA = {
    1: "codec round-trip",
    2: "collision probability",
    3: "loss oracles",
    4: "attack suite",
    5: "desk-scale training smoke",
    6: "identification protocol fixture",
    7: "transparency dial",
    8: "determinism",
}


@pytest.fixture
def record():
    def _record(n: int, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE[n] = (bool(ok), detail)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n} ({name}): {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n} ({name}): NOT RUN")
