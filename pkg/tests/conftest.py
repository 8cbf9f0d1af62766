from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from fuda.config import DataConfig, PhantomConfig, RunConfig
from fuda.phantom import gen_phantom


def tiny_phantom_config(seed: int = 11) -> PhantomConfig:
    return PhantomConfig(image_size=32, seed=seed)


def tiny_run_config(tmp_root: str, seed: int = 11) -> RunConfig:
    """A configuration small enough for sub-minute training smoke tests."""
    cfg = RunConfig(seed=seed)
    cfg.data = DataConfig(
        root=tmp_root,
        n_patients=4,
        slices_per_patient=2,
        train_patients=("p00", "p01"),
        target_patient="p02",
        test_patients=("p03",),
        phantom=tiny_phantom_config(seed),
        write_png=False,
    )
    cfg.rain.widths = (8, 16, 32)
    cfg.rain.latent_dim = 16
    cfg.rain.vae_hidden = 32
    cfg.rain.iters = 12
    cfg.rain.batch_size = 2
    cfg.seg.widths = (8, 16, 32)
    cfg.seg.pretrain_iters = 6
    cfg.seg.adv_iters = 6
    cfg.seg.batch_size = 2
    cfg.adversarial.resample_period = 3
    return cfg


@pytest.fixture(scope="session")
def phantom_small():
    """One deterministic tiny multi-modality phantom cohort, shared per session."""
    return gen_phantom(tiny_phantom_config(), n_patients=3, slices_per_patient=2)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@dataclass
class TrainedStack:
    """Artifacts of one tiny end-to-end run, shared across training tests."""

    cfg: RunConfig
    root: Path
    out_dir: Path
    rain_ckpt: Path
    seg_ckpt: Path


@pytest.fixture(scope="session")
def trained_tiny(tmp_path_factory) -> TrainedStack:
    from fuda import training

    base = tmp_path_factory.mktemp("tiny_run")
    root = base / "data"
    cfg = tiny_run_config(str(root))
    training.generate_dataset(cfg, root)
    out_dir = base / "run"
    rain_ckpt = training.train_stage1(cfg, root, out_dir)
    seg_ckpt = training.train_stage2(cfg, root, rain_ckpt, out_dir)
    return TrainedStack(cfg=cfg, root=root, out_dir=out_dir,
                        rain_ckpt=rain_ckpt, seg_ckpt=seg_ckpt)


# ---------------------------------------------------------------------------
# acceptance-criteria reporting: each criterion check records one line here,
# and the terminal summary prints them after the run.

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str):
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[num]
        word = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {word} — {detail}")
