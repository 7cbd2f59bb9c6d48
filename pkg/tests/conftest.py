import os

import numpy as np
import pytest
from hypothesis import settings

from lsksvd.imaging import build_dataset
from lsksvd.sparse import TrainConfig, ksvd_train
from lsksvd.synth import DEFAULT_BACKGROUND, DEFAULT_FOREGROUND

settings.register_profile("default", max_examples=40, deadline=None)
settings.register_profile("thorough", max_examples=400, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene():
    """96x96 two-texture scene split at x=40, with small dictionaries trained on it."""
    r = np.random.default_rng(3)
    left = DEFAULT_FOREGROUND.render(96, 96, r)
    right = DEFAULT_BACKGROUND.render(96, 96, r)
    fg = np.zeros((96, 96), dtype=bool)
    fg[:, :40] = True
    image = np.clip(np.where(fg[:, :, None], left, right), 0.0, 1.0)
    ds = build_dataset(image, fg, ~fg, patch_size=4, stride=2, seed=0)
    cfg = TrainConfig(K=24, rho=3, iterations=8, seed=0)
    D1, _ = ksvd_train(ds.class_patches(1), cfg, patch_size=4, channels=3)
    D2, _ = ksvd_train(ds.class_patches(2), cfg, patch_size=4, channels=3)
    return {"image": image, "fg": fg, "dataset": ds, "D1": D1, "D2": D2}


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
