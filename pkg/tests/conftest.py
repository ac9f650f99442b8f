"""Shared fixtures: generated datasets and briefly trained models.

The tiny_* fixtures are sized for speed (few windows, a short schedule,
the narrow cpu profile) and live in pytest's tmp tree. The accept_*
fixtures are the realistic-scale artifacts the acceptance tests need;
they are expensive to build, so they persist under .cache/ between
runs. Delete that directory to force a rebuild.
"""

import os

import pytest

from motionfill.dataset import generate_dataset
from motionfill.nn.extractor import load_extractor, save_extractor, train_feature_extractor
from motionfill.training import Trainer, WindowBank, train_config

CACHE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, ".cache")


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("data") / "tiny")
    generate_dataset(
        root,
        seed=11,
        n_scenes=3,
        train_windows=10,
        test_windows=3,
        test_scenes=1,
        stride=60,
    )
    return root


@pytest.fixture(scope="session")
def tiny_bank(tiny_root):
    return WindowBank(tiny_root, "train")


@pytest.fixture(scope="session")
def tiny_trainer(tiny_bank, tmp_path_factory):
    """A model trained just long enough to be mechanically usable."""
    cfg = train_config(
        "cpu",
        batch_size=4,
        diffusion_steps=100,
        train_steps=40,
        log_every=10,
        seed=3,
    )
    trainer = Trainer(cfg, tiny_bank, str(tmp_path_factory.mktemp("tinyrun")))
    trainer.train()
    return trainer


# -- realistic-scale cached fixtures ------------------------------------------


@pytest.fixture(scope="session")
def accept_root():
    root = os.path.join(CACHE_DIR, "dataset")
    marker = os.path.join(root, ".complete")
    if not os.path.exists(marker):
        generate_dataset(
            root,
            seed=0,
            n_scenes=8,
            train_windows=220,
            test_windows=40,
            test_scenes=2,
        )
        open(marker, "w").close()
    return root


@pytest.fixture(scope="session")
def accept_train_bank(accept_root):
    return WindowBank(accept_root, "train")


@pytest.fixture(scope="session")
def accept_test_bank(accept_root):
    return WindowBank(accept_root, "test")


@pytest.fixture(scope="session")
def accept_extractor(accept_train_bank):
    base = os.path.join(CACHE_DIR, "extractor")
    if os.path.exists(base + ".txt"):
        return load_extractor(base)
    extractor = train_feature_extractor(
        accept_train_bank, seed=0, steps=1500, batch_size=16
    )
    save_extractor(extractor, base)
    return extractor
