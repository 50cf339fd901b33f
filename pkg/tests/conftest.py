import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from vecal.consumption import predict  # noqa: E402
from vecal.models import EnergySample, VehicleMode  # noqa: E402


def make_samples(v, a, j, mode=VehicleMode.ACC, run_id=1):
    """Wrap arrays into EnergySamples, splitting energy evenly between sources."""
    out = []
    for t, (vi, ai, ji) in enumerate(zip(v, a, j), start=1):
        out.append(EnergySample(run_id, mode, t, float(vi), float(ai), float(ji) / 2, float(ji) - float(ji) / 2,
                                float(ji) / 2 + (float(ji) - float(ji) / 2)))
    return out


@pytest.fixture
def sample_factory():
    return make_samples


@pytest.fixture
def model_data():
    """Draw ``(v, a, J)`` from a model, with optional relative noise."""

    def _draw(coeffs, n=1500, seed=0, v_range=(9.0, 18.0), a_range=(-2.0, 2.0), noise_rel=0.0):
        rng = np.random.default_rng(seed)
        v = rng.uniform(*v_range, n)
        a = rng.uniform(*a_range, n)
        j = np.asarray(predict(coeffs, v, a), dtype=float)
        if noise_rel:
            j = j + noise_rel * np.abs(j) * rng.standard_normal(n)
        return v, a, j

    return _draw
