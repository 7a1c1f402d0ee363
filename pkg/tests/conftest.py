import math

import numpy as np
import pytest

import quadkiri as qk

PHI = math.pi / 3
GRID = qk.GridShape(10, 10)


@pytest.fixture(scope="session")
def anchors10():
    return qk.default_anchors(GRID, PHI)


@pytest.fixture(scope="session")
def feasible_fields():
    """A bag of feasible 10x10 ratio fields drawn from the generation stream."""
    z = qk.sobol_stream(100, 64, seed=7)
    fields = []
    for k in range(64):
        x = qk.z_to_ratio(z[k].reshape(10, 10))
        layout = qk.march_decode(x, PHI)
        if qk.check_feasible(layout, 0.02):
            fields.append(x)
        if len(fields) >= 12:
            break
    assert len(fields) >= 8
    return fields


@pytest.fixture(scope="session")
def feasible_masks(feasible_fields):
    return [qk.simulate(qk.march_decode(x, PHI)) for x in feasible_fields]


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """A small generated dataset shared by dataset/CLI tests."""
    root = tmp_path_factory.mktemp("ds")
    cfg = qk.GenConfig(grid=qk.GridShape(6, 6), seed=11)
    qk.generate_split(8, cfg, root, split="train")
    qk.generate_split(4, cfg, root, split="test")
    return root
