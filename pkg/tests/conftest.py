import json

import numpy as np
import pytest

from brakedist.model import ModelSpec, StimulusRegistry, TrainedModel
from brakedist.training import save_model


@pytest.fixture
def tiny_sim_config_path(tmp_path):
    """A small single-stimulus study config, cheap enough for CLI tests."""
    doc = {
        "num_stimuli": 1,
        "degree": 2,
        "stimuli": ["traffic_signal"],
        "beta_true": [-0.3, 0.1, 0.0],
        "sigma2_true": 0.04,
        "sigma_gamma_true": [
            [0.02, 0.0, 0.0],
            [0.0, 0.005, 0.0],
            [0.0, 0.0, 5e-5],
        ],
        "num_drivers": 12,
        "obs_per_driver": [6],
        "headway_range": [0.3, 8.0],
        "seed": 11,
    }
    path = tmp_path / "sim_config.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def handmade_model_path(tmp_path):
    """A hand-constructed model file (no fitting), exact values known."""
    model = TrainedModel(
        spec=ModelSpec(num_stimuli=2, degree=2),
        stimuli=StimulusRegistry(["traffic_signal", "lead_car_brake"]),
        beta=np.array([-0.3, 0.1, 0.005, -0.4, 0.12, 0.004]),
        sigma2=0.04,
        sigma_gamma=np.diag([0.02, 0.005, 5e-5, 0.02, 0.005, 5e-5]),
        beta_cov=0.0004 * np.eye(6),
        t_star=1.5,
    )
    path = tmp_path / "model.json"
    save_model(model, path)
    return path
