import numpy as np
import pytest

from greencontract.errors import BadBox
from greencontract.errors import NonPositiveVolatility
from greencontract.errors import NotPSD
from greencontract.errors import OutOfBox
from greencontract.model_core import AffineCoeff
from greencontract.model_core import BondCoeffs
from greencontract.model_core import ControlBox
from greencontract.model_core import GovPrefs
from greencontract.model_core import IndexationMode
from greencontract.model_core import InvestorPrefs
from greencontract.model_core import MarketModel
from greencontract.model_core import as_vector
from greencontract.model_core import check_correlation
from greencontract.model_core import cost
from greencontract.model_core import eval_coefficients
from greencontract.model_core import mu_obs
from greencontract.model_core import observable_dynamics
from greencontract.model_core import sigma_obs
from greencontract.model_core import validate


def test_reference_coefficients(reference_config):
    model = reference_config.market_model()
    snapshot = eval_coefficients(model, 0.0)

    assert snapshot.r_g[0] == pytest.approx(-0.07 + 0.66 * 19.73)
    assert snapshot.sigma_g[0] == pytest.approx(0.41 + 0.31 * 19.73)
    assert snapshot.sigma_c[1] == pytest.approx(-0.10 + 0.96 * 40.58)
    assert snapshot.mu_I == pytest.approx(-0.01 + 0.53 * 18.29)
    assert snapshot.drift[0] == pytest.approx(snapshot.r_g[0] + snapshot.eta_g[0] * snapshot.sigma_g[0])

    late = eval_coefficients(model, 1.0)
    assert late.sigma_I == pytest.approx(0.01 + 0.92 * 17.29)


def test_reference_model_is_valid(reference_config):
    validate(reference_config.market_model())


def test_affine_coefficient_is_in_time_to_maturity():
    coeff = AffineCoeff(0.1, 0.5)
    assert coeff(10.0, 0.0) == pytest.approx(5.1)
    assert coeff(10.0, 1.0) == pytest.approx(4.6)


def test_negative_volatility_is_reported(reference_config):
    tree = reference_config.to_tree()
    market = reference_config.market_model()
    unflipped = BondCoeffs(AffineCoeff(0.28, 0.02), AffineCoeff(0.12, -0.99), AffineCoeff(0.10, -0.96))
    model = MarketModel(
        horizon=market.horizon,
        green_maturities=market.green_maturities,
        conv_maturities=market.conv_maturities,
        index_maturity=market.index_maturity,
        green=market.green,
        conv=(market.conv[0], unflipped),
        index=market.index,
        corr=np.abs(np.asarray(tree["market"]["corr"])),
    )

    with pytest.raises(NonPositiveVolatility) as err:
        validate(model)

    assert err.value.instrument == "conv2"
    assert err.value.t == 0.0
    assert str(err.value).startswith("Volatility of 'conv2' is not positive at t=0")


def test_not_psd_correlation(two_bond_model):
    corr = np.array([[1.0, 0.99, -0.99], [0.99, 1.0, 0.99], [-0.99, 0.99, 1.0]])

    with pytest.raises(NotPSD) as err:
        validate(two_bond_model(corr=corr))

    assert err.value.min_eigenvalue < 0
    assert "not positive semidefinite" in str(err.value)


@pytest.mark.parametrize("corr, reason", [
    ([[1.0, 0.5, 0.0], [0.4, 1.0, 0.0], [0.0, 0.0, 1.0]], "not symmetric"),
    ([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], "non-unit diagonal"),
])
def test_malformed_correlation(corr, reason):
    with pytest.raises(NotPSD) as err:
        check_correlation(np.array(corr))

    assert reason in str(err.value)


def test_correlation_eigenvalue_is_returned():
    assert check_correlation(np.eye(3)) == pytest.approx(1.0)


def test_bad_box(two_bond_model):
    with pytest.raises(BadBox) as err:
        validate(two_bond_model(box=ControlBox(eps=1.0, b_inf=0.5)))

    assert str(err.value) == "Control box must satisfy 0 < eps < b_inf (got eps=1, b_inf=0.5)."


def test_shape_problems_are_aggregated():
    with pytest.raises(ValueError) as err:
        MarketModel(
            horizon=-1.0,
            green_maturities=(5.0, 6.0),
            conv_maturities=(),
            index_maturity=5.0,
            green=(BondCoeffs(AffineCoeff(0.02), AffineCoeff(0.3), AffineCoeff(0.1)),),
            conv=(),
            index=None,
            corr=np.eye(3),
        )

    assert str(err.value) == (
        "\n    One maturity per green bond is required."
        "\n    The horizon must be positive (got -1.0)."
        "\n    The correlation matrix must be 2x2 (got (3, 3)).")


def test_portfolio_variance(two_bond_model):
    model = two_bond_model(vol=0.1)
    sigma = sigma_obs(model, 0.0, np.ones(3))
    covariance = sigma @ model.corr @ sigma.T

    assert covariance[0, 0] == pytest.approx(0.03)
    np.testing.assert_allclose(
        observable_dynamics(model, 0.0).covariance(np.ones(3)), covariance, atol=1e-15)


def test_covariance_matches_loadings(moderate_model):
    rng = np.random.default_rng(3)
    for mode in IndexationMode:
        dynamics = observable_dynamics(moderate_model, 0.5, mode)
        for p in rng.uniform(0.5, 5.0, size=(5, 4)):
            sigma = dynamics.sigma(p)
            np.testing.assert_allclose(dynamics.covariance(p), sigma @ dynamics.corr @ sigma.T, rtol=1e-12)


def test_trace_gradient(moderate_model):
    dynamics = observable_dynamics(moderate_model, 0.0)
    rng = np.random.default_rng(5)
    weights = rng.normal(size=(3, 3))
    weights = weights + weights.T
    p = rng.uniform(0.5, 5.0, 4)
    step = 1e-6
    expected = [
        (np.sum(dynamics.covariance(p + step * e) * weights) - np.sum(dynamics.covariance(p - step * e) * weights))
        / (2 * step)
        for e in np.eye(4)]

    np.testing.assert_allclose(dynamics.trace_gradient(p, weights), expected, rtol=1e-6, atol=1e-9)


def test_risk_source_drift(moderate_model):
    p = np.array([1.0, 2.0, 3.0, 4.0])
    mu = mu_obs(moderate_model, 0.0, p, IndexationMode.RISK_SOURCE)

    drift = np.array([0.02 + 0.5 * 0.2, 0.02 + 0.3 * 0.15, 0.03 + 0.3 * 0.2, 0.05])
    np.testing.assert_allclose(mu, [p @ drift, 0.0, 0.0])


def test_price_drift(moderate_model):
    mu = mu_obs(moderate_model, 0.0, np.ones(4), IndexationMode.PRICE)

    assert mu[1] == pytest.approx(0.02 + 0.5 * 0.2 - 0.2 ** 2)
    assert mu[2] == pytest.approx(0.05 - 0.5 * 0.15 ** 2)


def test_holdings_outside_box(moderate_model):
    with pytest.raises(OutOfBox) as err:
        mu_obs(moderate_model, 0.0, np.array([0.0, 1.0, 1.0, 1.0]))

    assert str(err.value) == "Control (0, 1, 1, 1) is outside the box [0.01, 10]."


def test_cost():
    prefs = InvestorPrefs(alpha=[0.2, 0.2, 0.3, 0.5], beta=[0.4] * 4)

    assert cost(prefs, np.array([0.3, 0.2, 0.3, 0.5])) == pytest.approx(0.002)
    assert cost(prefs, prefs.alpha) == 0.0
    np.testing.assert_allclose(cost(prefs, np.tile(prefs.alpha, (3, 1))), np.zeros(3))


def test_preferences_validation():
    with pytest.raises(ValueError) as err:
        InvestorPrefs(alpha=[0.2, 0.2], beta=[0.4, -0.4], gamma=0.0)

    assert str(err.value) == "\n    beta entries must be nonnegative.\n    gamma must be positive (got 0.0)."

    with pytest.raises(ValueError) as err:
        GovPrefs(G=[0.0], kappa=-1.0, nu=1.0)

    assert str(err.value) == "\n    kappa must be nonnegative (got -1.0)."


def test_government_utility():
    gov = GovPrefs(G=[0.0], nu=2.0, risk_charge="nu_squared")

    assert gov.utility(0.5) == pytest.approx(-np.exp(-1.0))
    assert gov.risk_coefficient == 4.0
    assert gov.target_weight == 0.0


def test_as_vector():
    np.testing.assert_allclose(as_vector(0.4, 3, "beta"), [0.4, 0.4, 0.4])

    with pytest.raises(ValueError) as err:
        as_vector([0.1, 0.2], 3, "alpha")

    assert str(err.value) == "'alpha' must have 3 entries (got 2)."
