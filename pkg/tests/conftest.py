import json

import numpy as np
import pytest

from models.data_models import ClaimKind, ClaimSet, ClaimSpec, HestonParams
from pricing.fourier_engine import QuadratureSettings


@pytest.fixture
def benchmark_params() -> HestonParams:
    return HestonParams.benchmark()


@pytest.fixture
def two_options() -> ClaimSet:
    return ClaimSet(ClaimSpec(ClaimKind.VARIANCE_SWAP),
                    [ClaimSpec(ClaimKind.PUT, strike=90.0), ClaimSpec(ClaimKind.CALL, strike=110.0)])


@pytest.fixture
def fast_settings() -> QuadratureSettings:
    return QuadratureSettings(time_nodes=32)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240607)


@pytest.fixture
def write_json(tmp_path):
    def write(name, payload):
        path = tmp_path / name
        path.write_text(json.dumps(payload))
        return str(path)
    return write
