import numpy as np
import pytest

from dispscan.dataset import TrajectorySet


def make_ts(n_nodes=4, n_runs=3, n_steps=12, seed=0, dt=1.0):
    """Small random-walk dataset with identical initial configurations."""
    rng = np.random.default_rng(seed)
    initial = rng.uniform(-100.0, 100.0, size=(n_nodes, 1, 1, 3))
    steps = rng.normal(scale=0.5, size=(n_nodes, n_runs, n_steps, 3))
    steps[:, :, 0, :] = 0.0
    positions = initial + np.cumsum(steps, axis=2)
    return TrajectorySet(
        node_ids=np.arange(n_nodes, dtype=np.int64) + 10,
        part_ids=(np.arange(n_nodes, dtype=np.int64) % 2) + 1,
        dt_index=np.arange(n_steps, dtype=np.float64) * dt,
        positions=positions,
    )


@pytest.fixture
def small_ts():
    return make_ts()
