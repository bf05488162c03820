import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ugibbs import disktree, systems

settings.register_profile(
    "ugibbs",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ugibbs")

LOG_GOLDEN = math.log((3.0 + math.sqrt(5.0)) / 2.0)


@pytest.fixture(scope="session")
def cat():
    return systems.make_system("cat2")


@pytest.fixture(scope="session")
def perturbed():
    return systems.make_system("cat2_perturbed:eps=0.1")


@pytest.fixture(scope="session")
def identity():
    return systems.make_system("identity2")


def segment(system, side=0.04, x0=(0.3, 0.2)):
    x0 = np.array(x0)
    return disktree.affine_disk(x0, disktree.unstable_frame(system, x0, 1), side)


@pytest.fixture(scope="session")
def cat_tree_p3(cat):
    return disktree.grow_tree(cat, segment(cat), 0.05, 3, p=3)


@pytest.fixture(scope="session")
def perturbed_tree_p3(perturbed):
    return disktree.grow_tree(perturbed, segment(perturbed), 0.05, 3, p=3)


@pytest.fixture(scope="session")
def perturbed_tree_p1(perturbed):
    return disktree.grow_tree(perturbed, segment(perturbed), 0.05, 6, p=1)
