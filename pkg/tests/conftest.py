import numpy as np
import pytest

from splatface.config import RunConfig
from splatface.synth import SceneConfig, gen_scene


@pytest.fixture(scope="session")
def tiny_bundle():
    """Small scene shared by training/CLI tests: 12 frames, 32x32, 460 prims."""
    cfg = SceneConfig(t_frames=12, width=32, height=32, n_face=400, n_mouth=60)
    return gen_scene(0, cfg)


@pytest.fixture(scope="session")
def tiny_bundle_dir(tiny_bundle, tmp_path_factory):
    from splatface.synth import save_bundle
    path = tmp_path_factory.mktemp("bundle") / "tiny"
    save_bundle(tiny_bundle, str(path), write_pngs=False)
    return str(path)


def small_run_config(**kw):
    base = dict(static_iters=20, motion_iters=20, finetune_iters=10, log_every=1)
    base.update(kw)
    return RunConfig(**base).validate()


@pytest.fixture(scope="session")
def trained_tiny(tiny_bundle):
    """One short full-stage training run shared by read-only tests."""
    from splatface.train import Trainer
    trainer = Trainer(tiny_bundle, small_run_config(static_iters=30,
                                                    motion_iters=30,
                                                    finetune_iters=10))
    trainer.train()
    return trainer


def rng(seed=0):
    return np.random.default_rng(seed)


# one line per acceptance criterion, echoed after the test summary so the
# verdicts stay visible even with output capture on
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
