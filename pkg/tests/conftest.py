import numpy as np
import pytest

from tendonkit.handmodel import builtin_proto0


@pytest.fixture(scope="session")
def proto0():
    return builtin_proto0()


@pytest.fixture(scope="session")
def joint_ranges(proto0):
    jmap = {j.name: j for j in proto0.joints}
    lo = np.array([jmap[n].q_min for n in proto0.actuated_joints])
    hi = np.array([jmap[n].q_max for n in proto0.actuated_joints])
    return lo, hi
