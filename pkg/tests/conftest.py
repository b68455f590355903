import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_ensemble(N=40, M=12, P=2, seed=0):
    """Outputs driven smoothly by a P-dimensional design."""
    from qbcal.basis import SimulationEnsemble
    r = np.random.default_rng(seed)
    Z = r.random((M, P))
    t = np.linspace(0, 1, N)[:, None]
    Y = (np.sin(2 * np.pi * t * (1 + Z[:, 0])) + Z[:, -1] * t
         + 0.3 * Z[:, 0] + 1e-3 * r.standard_normal((N, M)))
    X = r.standard_normal((N, 2))
    return SimulationEnsemble(Y, Z, np.column_stack([r.standard_normal(N), X]))
