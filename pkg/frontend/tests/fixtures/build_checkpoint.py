"""Build a small deterministic checkpoint for the live viewer tests.

Usage: python3 build_checkpoint.py OUT.gnlf

A briefly trained tiny model is enough: the tests need renders that depend
on the pose, not renders that look good.
"""

import dataclasses
import sys

from raylight.dataio import gen_toy_scene, make_toy_spec, save_checkpoint
from raylight.pipeline import get_preset, train


def main(out_path):
    spec = make_toy_spec(5, 3)
    data = gen_toy_scene(spec, 8, 64, 64, split="train")
    cfg = dataclasses.replace(
        get_preset("tiny-test"),
        total_steps=100,
        batch_size=256,
        val_every=0,
        checkpoint_every=0,
    )
    model, log = train(cfg, data)
    assert not log.diverged
    save_checkpoint(
        out_path, model, step=100, preset="tiny-test", intrinsics=data.intrinsics
    )
    print(f"wrote {out_path}")


if __name__ == "__main__":
    main(sys.argv[1])
