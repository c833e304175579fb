import numpy as np
import pytest

from greencontract.agent import Incentives
from greencontract.agent import best_response
from greencontract.agent import h_obs
from greencontract.agent import h_obs_gradient
from greencontract.agent import response_jacobian
from greencontract.agent import solve_best_response
from greencontract.agent import tax_best_response
from greencontract.errors import ZeroBetaWithTax
from greencontract.model_core import InvestorPrefs
from greencontract.model_core import observable_dynamics


@pytest.fixture
def incentives() -> Incentives:
    return Incentives.from_matrix(
        [0.8, 0.3, -0.2],
        [[0.5, 0.1, -0.2], [0.1, -0.3, 0.05], [-0.2, 0.05, 0.4]])


def test_zero_incentives_give_preferred_holdings(reference_config):
    model = reference_config.market_model()
    prefs = reference_config.investor_prefs()

    response = best_response(model, prefs, 0.0, Incentives.zeros(3))

    np.testing.assert_allclose(response.p_hat, [0.2, 0.2, 0.3, 0.5], atol=1e-9)
    assert response.flags.concave
    assert not response.flags.used_fallback


def test_preferred_holdings_are_clamped(moderate_model):
    prefs = InvestorPrefs(alpha=[-1.0, 0.2, 12.0, 0.5], beta=[0.4] * 4)

    response = best_response(moderate_model, prefs, 0.0, Incentives.zeros(3))

    np.testing.assert_allclose(response.p_hat, [0.01, 0.2, 10.0, 0.5], atol=1e-9)


def test_closed_form_response(moderate_model, investor):
    exposure = Incentives([1.0, 0.0, 0.0], np.zeros(6))
    response = best_response(moderate_model, investor, 0.0, exposure)

    drift = np.array([0.12, 0.065, 0.09, 0.05])
    np.testing.assert_allclose(response.p_hat, investor.alpha + drift / 0.4, atol=1e-8)
    assert response.h_value == pytest.approx(
        h_obs(moderate_model, investor, 0.0, exposure, response.p_hat))


def test_h_obs_gradient(moderate_model, investor, incentives):
    rng = np.random.default_rng(7)
    step = 1e-5
    for p in rng.uniform(0.5, 5.0, size=(20, 4)):
        expected = [
            (h_obs(moderate_model, investor, 0.3, incentives, p + step * e)
             - h_obs(moderate_model, investor, 0.3, incentives, p - step * e)) / (2 * step)
            for e in np.eye(4)]
        np.testing.assert_allclose(
            h_obs_gradient(moderate_model, investor, 0.3, incentives, p), expected, rtol=1e-5, atol=1e-8)


def test_non_concave_hamiltonian(moderate_model, investor):
    g = np.zeros((3, 3))
    g[0, 0] = 50.0
    strong = Incentives.from_matrix([0.5, 0.0, 0.0], g)
    lattice = np.array(np.meshgrid(*[np.linspace(0.01, 10.0, 9)] * 4)).reshape(4, -1).T

    response = best_response(moderate_model, investor, 0.0, strong)

    assert not response.flags.concave
    assert response.flags.used_fallback
    assert moderate_model.box.contains(response.p_hat)
    best_on_lattice = max(h_obs(moderate_model, investor, 0.0, strong, p) for p in lattice[::7])
    assert response.h_value >= best_on_lattice - 1e-9


def test_response_jacobian(moderate_model, investor):
    dynamics = observable_dynamics(moderate_model, 0.0)
    base = Incentives([1.0, 0.1, 0.1], np.zeros(6))
    p_hat = solve_best_response(dynamics, investor, moderate_model.box, base).p_hat
    jacobian = response_jacobian(dynamics, investor, moderate_model.box, base, p_hat)
    step = 1e-3
    theta = base.to_vector()

    for k in range(theta.shape[0]):
        shift = np.zeros_like(theta)
        shift[k] = step
        up = solve_best_response(dynamics, investor, moderate_model.box, Incentives.from_vector(theta + shift, 3))
        down = solve_best_response(dynamics, investor, moderate_model.box, Incentives.from_vector(theta - shift, 3))
        np.testing.assert_allclose(jacobian[:, k], (up.p_hat - down.p_hat) / (2 * step), rtol=1e-2, atol=1e-3)


def test_tax_response(moderate_model, investor):
    p = tax_best_response(moderate_model, investor, 0.1)

    np.testing.assert_allclose(p, [0.2 + 0.1 / 0.4, 0.2, 0.3, 0.5])


def test_tax_response_without_green_intensity(moderate_model):
    prefs = InvestorPrefs(alpha=[0.2, 0.2, 0.3, 0.5], beta=[0.0, 0.4, 0.4, 0.4])

    with pytest.raises(ZeroBetaWithTax) as err:
        tax_best_response(moderate_model, prefs, 0.1, strict=True)

    assert err.value.indices == (0,)
    assert tax_best_response(moderate_model, prefs, 0.1)[0] == moderate_model.box.b_inf


def test_negative_tax_rate(moderate_model, investor):
    with pytest.raises(ValueError):
        tax_best_response(moderate_model, investor, -0.1)


def test_incentives_shape():
    with pytest.raises(ValueError) as err:
        Incentives([1.0, 0.0, 0.0], np.zeros(5))

    assert str(err.value) == "Γ needs 6 upper-triangle entries for 3 contractible variables (got 5)."


def test_incentives_vector(incentives):
    rebuilt = Incentives.from_vector(incentives.to_vector(), 3)

    np.testing.assert_allclose(rebuilt.g, incentives.g)
    np.testing.assert_allclose(Incentives.from_vector(np.ones(3), 3).g, np.zeros((3, 3)))
