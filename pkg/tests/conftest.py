import pytest
from synth import identity_stats, point_mass_windows, train_on_windows


@pytest.fixture(scope="session")
def point_mass_model():
    """One trained point-mass bundle shared by sampler/planner tests."""
    windows = point_mass_windows(H=8, seed=13)
    result, _ = train_on_windows(
        windows, identity_stats(), H=8, K=20, steps=4000, batch=64, lr=3e-3,
        hidden=96, seed=13)
    return result, windows
