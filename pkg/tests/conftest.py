import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture(scope="session")
def trained_pair():
    """Two strongly distinct textures, 400 iterations, reduced-width net.

    Shared across modules: the trainer contract tests, the pre-segmentation
    integration test, and the CLI k-means path all reuse this state.
    """
    from texseg import (NetworkSpec, TrainConfig, TrainSample, build_fcnt,
                        train_supervised)
    from texseg.mosaic import TextureSpec, gen_texture

    bank = {0: TextureSpec("grating", 0, 11, frequency=0.10, orientation=0.0),
            1: TextureSpec("grating", 1, 22, frequency=0.10,
                           orientation=np.pi / 2)}
    rng = np.random.default_rng(0)
    samples = []
    for c, b in sorted(bank.items()):
        for _ in range(4):
            tex = gen_texture(TextureSpec(b.family, c, int(rng.integers(2**31)),
                                          b.frequency, b.orientation,
                                          b.contrast, b.noise_sigma), (96, 96))
            samples.append(TrainSample.uniform(tex, c))
    spec = NetworkSpec(num_classes=2, block_channels=(4, 8, 12, 16),
                       convs_per_block=(1, 1, 1, 1), head_channels=32)
    state = build_fcnt(spec, 42)
    state, trace = train_supervised(state, samples,
                                    TrainConfig(max_iters=400, seed=1))
    return bank, state, trace
