"""Shared builders for tests (these use the package; oracles.py does not)."""
import numpy as np

from procam.photometry import CalibrationModel, SamplePlan

PLAN = SamplePlan()


def random_model(rng, grid, fallback_rate=0.2):
    """Local model with random increasing logistics and some fallback regions."""
    gh, gw = grid.grid_height, grid.grid_width
    params = np.stack(
        [
            rng.uniform(50, 300, (gh, gw, 3)),
            rng.uniform(0.005, 0.1, (gh, gw, 3)),
            rng.uniform(40, 220, (gh, gw, 3)),
            rng.uniform(-30, 40, (gh, gw, 3)),
        ],
        axis=-1,
    )
    flags = (rng.random((gh, gw, 3)) < fallback_rate).astype(np.uint8)
    fb = flags.astype(bool)
    params[fb] = np.sort(rng.uniform(-20, 280, (int(fb.sum()), 4)), axis=1)
    return CalibrationModel("local", grid, PLAN, params, flags)
