import copy

import numpy as np
import pytest

from greencontract.config import RunConfig
from greencontract.config import build_config
from greencontract.config import load_config
from greencontract.config import reference_config_path
from greencontract.model_core import AffineCoeff
from greencontract.model_core import BondCoeffs
from greencontract.model_core import GovPrefs
from greencontract.model_core import IndexCoeffs
from greencontract.model_core import InvestorPrefs
from greencontract.model_core import MarketModel


CORRELATION = [
    [1.0, 0.2, 0.8, 0.8],
    [0.2, 1.0, 0.2, 0.7],
    [0.8, 0.2, 1.0, 0.7],
    [0.8, 0.7, 0.7, 1.0],
]

MODERATE_TREE = {
    "market": {
        "horizon": 1.0,
        "green": [{"name": "green1", "maturity": 10.0, "rate": [0.02, 0.0], "premium": [0.5, 0.0],
                   "vol": [0.2, 0.0]}],
        "conventional": [
            {"name": "conv1", "maturity": 6.0, "rate": [0.02, 0.0], "premium": [0.3, 0.0], "vol": [0.15, 0.0]},
            {"name": "conv2", "maturity": 30.0, "rate": [0.03, 0.0], "premium": [0.3, 0.0], "vol": [0.2, 0.0]},
        ],
        "index": {"maturity": 10.0, "drift": [0.05, 0.0], "vol": [0.15, 0.0]},
        "corr": CORRELATION,
    },
    "investor": {"alpha": [0.2, 0.2, 0.3, 0.5], "beta": [0.4, 0.4, 0.4, 0.4], "gamma": 1.0},
    "government": {"G": [0.0], "kappa": 0.0, "nu": 1.0},
    "run": {"seed": 11, "n_paths": 400, "n_steps": 4, "grid_M": 2, "mode": "risk_source", "n_random_starts": 0},
}


@pytest.fixture
def moderate_tree() -> dict:
    """Time-homogeneous market with moderate coefficients."""
    return copy.deepcopy(MODERATE_TREE)


@pytest.fixture
def moderate_config(moderate_tree) -> RunConfig:
    return build_config(moderate_tree)


@pytest.fixture(scope="session")
def shared_moderate_config() -> RunConfig:
    """Same market as `moderate_config`, for module-scoped fixtures of slow solves."""
    return build_config(copy.deepcopy(MODERATE_TREE))


@pytest.fixture
def price_config(moderate_config) -> RunConfig:
    return moderate_config.with_overrides(["run.mode=price"])


@pytest.fixture
def reference_config() -> RunConfig:
    return load_config(reference_config_path())


@pytest.fixture
def moderate_model(moderate_config) -> MarketModel:
    return moderate_config.market_model()


@pytest.fixture
def investor(moderate_config) -> InvestorPrefs:
    return moderate_config.investor_prefs()


@pytest.fixture
def government(moderate_config) -> GovPrefs:
    return moderate_config.gov_prefs()


def _two_bond_model(vol: float = 0.1, corr=None, box=None) -> MarketModel:
    extra = {} if box is None else {"box": box}
    return MarketModel(
        horizon=1.0,
        green_maturities=(5.0,),
        conv_maturities=(5.0,),
        index_maturity=5.0,
        green=(BondCoeffs(AffineCoeff(0.02), AffineCoeff(0.3), AffineCoeff(vol)),),
        conv=(BondCoeffs(AffineCoeff(0.02), AffineCoeff(0.2), AffineCoeff(vol)),),
        index=IndexCoeffs(AffineCoeff(0.04), AffineCoeff(vol)),
        corr=np.eye(3) if corr is None else corr,
        **extra,
    )


@pytest.fixture
def two_bond_model():
    """Factory of a one green, one conventional market with constant coefficients."""
    return _two_bond_model
