"""Shared fixtures: toy scenes and a quickly trained model.

The quick_model fixture is deliberately undertrained (a few hundred steps);
it exists so rendering/serving/checkpoint tests have a model whose output
depends nontrivially on its inputs. Quality-bar training lives in the
acceptance suite.
"""

import dataclasses

import numpy as np
import pytest

from raylight.dataio import gen_toy_scene, make_toy_spec, save_checkpoint
from raylight.pipeline import get_preset, train


@pytest.fixture(scope="session")
def toy_spec():
    return make_toy_spec(7, 3)


@pytest.fixture(scope="session")
def toy_train(toy_spec):
    return gen_toy_scene(toy_spec, 12, 64, 64, split="train")


@pytest.fixture(scope="session")
def toy_val(toy_spec):
    return gen_toy_scene(toy_spec, 2, 64, 64, split="val", azimuth_offset=9.0)


@pytest.fixture(scope="session")
def quick_model(toy_train):
    cfg = dataclasses.replace(
        get_preset("tiny-test"),
        total_steps=300,
        batch_size=256,
        val_every=0,
        checkpoint_every=0,
    )
    model, log = train(cfg, toy_train)
    assert not log.diverged
    return model


@pytest.fixture(scope="session")
def quick_checkpoint(tmp_path_factory, quick_model, toy_train):
    path = str(tmp_path_factory.mktemp("ckpt") / "quick.gnlf")
    save_checkpoint(
        path, quick_model, step=300, preset="tiny-test", intrinsics=toy_train.intrinsics
    )
    return path


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
