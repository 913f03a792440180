import os
import tempfile

# Logs of a test session go to a throwaway directory; set before any engine import.
os.environ.setdefault("RPC_LOG_DIR", tempfile.mkdtemp(prefix="rpc-engine-logs-"))
os.environ.setdefault("RPC_WORKERS", "1")

import numpy as np
import pytest

from engine.schemas.cascade_schemas import CascadeParams
from engine.schemas.clause_schemas import DilutedModel, KSatModel, KSpinModel
from engine.schemas.field_schemas import OrderParamH
from engine.utils.rng_util import stream


@pytest.fixture
def rng():
    return stream(12345, "test")


@pytest.fixture
def params_r1():
    return CascadeParams(r=1, zetas=(0.5,))


@pytest.fixture
def params_r2():
    return CascadeParams(r=2, zetas=(0.25, 0.75), overlaps=(0.0, 0.5, 1.0))


@pytest.fixture
def ksat2():
    return DilutedModel(clause=KSatModel(K=2, beta=1.0), lam=1.0)


@pytest.fixture
def kspin2():
    return DilutedModel(clause=KSpinModel(K=2, beta=1.0), lam=1.0)


@pytest.fixture
def empty_model():
    return DilutedModel(clause=KSpinModel(K=2, beta=1.0), lam=0.0)


@pytest.fixture
def h_r1():
    return OrderParamH(r=1, G=2, values=np.array([-0.6, 0.4]))
