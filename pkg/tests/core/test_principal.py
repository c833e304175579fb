import dataclasses

import numpy as np
import pytest

from greencontract.agent import Incentives
from greencontract.errors import GridMismatch
from greencontract.model_core import IndexationMode
from greencontract.model_core import observable_dynamics
from greencontract.principal import average_schedule
from greencontract.principal import certainty_equivalent
from greencontract.principal import optimize_pointwise
from greencontract.principal import principal_criterion
from greencontract.principal import principal_value
from greencontract.principal import script_H
from greencontract.principal import script_H_gradient
from greencontract.principal import sensitivity_sweep
from greencontract.principal import solve_schedule
from greencontract.principal import summarize


@pytest.fixture
def moderate_problem(moderate_config):
    return moderate_config.market_model(), moderate_config.investor_prefs(), moderate_config.gov_prefs()


@pytest.fixture
def schedule(moderate_problem):
    return solve_schedule(*moderate_problem, M=2, n_random_starts=0)


def _random_points(rng, n):
    for _ in range(n):
        z = rng.normal(size=3)
        g = rng.normal(size=(3, 3))
        yield Incentives.from_matrix(z, g + g.T), rng.uniform(0.5, 5.0, 4)


def test_literal_and_simplified_criterion_agree(moderate_problem):
    model, prefs, gov = moderate_problem
    gov = dataclasses.replace(gov, G=np.array([1.5]), kappa=0.8)
    dynamics = observable_dynamics(model, 0.4)
    criterion = principal_criterion(dynamics, prefs, gov, model.d_g)

    for incentives, p in _random_points(np.random.default_rng(1), 10):
        value, _, _ = criterion(incentives.z, p)
        assert script_H(model, prefs, gov, 0.4, incentives, p) == pytest.approx(value, rel=1e-10, abs=1e-12)


def test_criterion_does_not_depend_on_gamma(moderate_problem):
    model, prefs, gov = moderate_problem
    p = np.array([0.5, 1.0, 1.5, 2.0])
    first = Incentives.from_matrix([0.4, 0.1, 0.2], np.zeros((3, 3)))
    second = Incentives.from_matrix([0.4, 0.1, 0.2], np.ones((3, 3)))

    assert script_H(model, prefs, gov, 0.0, first, p) == pytest.approx(script_H(model, prefs, gov, 0.0, second, p))


def test_criterion_gradient(moderate_problem):
    model, prefs, gov = moderate_problem
    gov = dataclasses.replace(gov, G=np.array([1.5]), kappa=0.8)
    step = 1e-5

    for incentives, p in _random_points(np.random.default_rng(2), 20):
        grad_z, grad_g, grad_p = script_H_gradient(model, prefs, gov, 0.0, incentives, p)

        def value(z=incentives.z, holdings=p):
            return script_H(model, prefs, gov, 0.0, Incentives(z, incentives.g_upper), holdings)

        expected_z = [(value(z=incentives.z + step * e) - value(z=incentives.z - step * e)) / (2 * step)
                      for e in np.eye(3)]
        expected_p = [(value(holdings=p + step * e) - value(holdings=p - step * e)) / (2 * step)
                      for e in np.eye(4)]
        np.testing.assert_allclose(grad_z, expected_z, rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(grad_p, expected_p, rtol=1e-5, atol=1e-7)
        assert not grad_g.any()


def test_optimal_incentives(moderate_problem):
    model, prefs, gov = moderate_problem
    optimum = optimize_pointwise(model, prefs, gov, 0.0, n_random_starts=0)
    dynamics = observable_dynamics(model, 0.0)
    _, grad_z, _ = principal_criterion(dynamics, prefs, gov, model.d_g)(
        optimum.incentives.z, optimum.response.p_hat)

    assert optimum.incentives.z[0] > 0
    assert optimum.response.p_hat[0] > prefs.alpha[0]
    # exposures to the green bond and the index only enter the criterion
    np.testing.assert_allclose(grad_z[1:], 0.0, atol=1e-2)
    assert optimum.value == pytest.approx(
        script_H(model, prefs, gov, 0.0, optimum.incentives, optimum.response.p_hat), rel=1e-9)


def test_reference_contract_raises_green_investment(reference_config):
    model = reference_config.market_model()
    prefs = reference_config.investor_prefs()
    gov = reference_config.gov_prefs()

    optimum = optimize_pointwise(model, prefs, gov, 0.0)
    z = optimum.incentives.z

    assert z[0] > 0
    assert abs(z[1]) <= 0.05 * z[0]
    assert abs(z[2]) <= 0.05 * z[0]
    assert optimum.response.p_hat[0] > 0.2


def test_green_target_raises_green_investment(moderate_problem):
    model, prefs, gov = moderate_problem
    targeted = dataclasses.replace(gov, G=np.array([3.0]), kappa=0.8)

    free = optimize_pointwise(model, prefs, gov, 0.0, n_random_starts=0)
    constrained = optimize_pointwise(model, prefs, targeted, 0.0, n_random_starts=0)

    assert constrained.response.p_hat[0] > free.response.p_hat[0]


def test_risk_averse_investor_gets_smaller_incentives(moderate_problem):
    model, prefs, gov = moderate_problem
    averse = dataclasses.replace(prefs, gamma=1e6)

    baseline = optimize_pointwise(model, prefs, gov, 0.0, n_random_starts=0)
    optimum = optimize_pointwise(model, averse, gov, 0.0, n_random_starts=0)

    assert np.linalg.norm(optimum.incentives.z) <= np.linalg.norm(baseline.incentives.z)
    assert np.linalg.norm(optimum.incentives.z) < 0.1


def test_time_homogeneous_schedule(schedule):
    assert schedule.M == 2
    np.testing.assert_allclose(schedule.H_values, schedule.H_values[0], rtol=1e-4)
    assert certainty_equivalent(schedule) == pytest.approx(schedule.H_values[0], rel=1e-4)
    assert principal_value(schedule) == pytest.approx(-np.exp(-certainty_equivalent(schedule)))


def test_schedule_frame(schedule):
    frame = schedule.to_frame()

    assert list(frame.columns[:4]) == ["t", "z_X", "z_green1", "z_index"]
    assert "g_X_green1" in frame.columns
    assert list(frame.columns[-6:]) == ["pi_green1", "pi_conv1", "pi_conv2", "pi_index", "h_obs", "script_H"]
    assert frame.shape[0] == 3


def test_step_nodes(schedule):
    np.testing.assert_array_equal(schedule.step_nodes(4), [0, 0, 1, 1])

    with pytest.raises(GridMismatch) as err:
        schedule.step_nodes(5)

    assert str(err.value) == "5 simulation steps are not a multiple of the 2 schedule intervals."


def test_averaged_contract(schedule):
    averaged = average_schedule(schedule)

    np.testing.assert_allclose(averaged.z_bar, schedule.z[0], atol=1e-2)
    np.testing.assert_allclose(averaged.schedule.pi, schedule.pi, atol=1e-2)
    assert averaged.coupon_integral == pytest.approx(averaged.schedule.h_values[0], rel=1e-6)
    assert certainty_equivalent(averaged) == pytest.approx(certainty_equivalent(schedule), rel=1e-3)


def test_gamma_zero_family(moderate_problem):
    schedule = solve_schedule(*moderate_problem, M=1, n_random_starts=0, gamma_zero=True)

    assert not schedule.g_upper.any()
    assert summarize(schedule).contract_family == "gamma_zero"


def test_summary(schedule):
    summary = summarize(schedule, average_schedule(schedule)).report_dict()

    assert summary["type"] == "optimization"
    assert summary["contractFamily"] == "full"
    assert summary["mode"] == IndexationMode.RISK_SOURCE.value
    assert summary["certaintyEquivalent"] == pytest.approx(certainty_equivalent(schedule))
    assert len(summary["scriptH"]) == 3
    assert "meta" not in summary


def test_schedule_needs_one_interval(moderate_problem):
    with pytest.raises(ValueError) as err:
        solve_schedule(*moderate_problem, M=0)

    assert str(err.value) == "The schedule needs at least one interval (got M=0)."


def test_sweep_over_green_target(moderate_problem):
    model, prefs, gov = moderate_problem
    gov = dataclasses.replace(gov, kappa=0.8)

    frame = sensitivity_sweep(model, prefs, gov, "G", [0.0, 3.0], M=1)

    assert list(frame["value"]) == [0.0, 3.0]
    assert frame["green_mean"].iloc[1] > frame["green_mean"].iloc[0]


def test_sweep_unknown_parameter(moderate_problem):
    with pytest.raises(ValueError) as err:
        sensitivity_sweep(*moderate_problem, "gamma", [1.0], M=1)

    assert str(err.value) == "Unknown sweep parameter 'gamma' (expected one of G, kappa, alpha_g, beta_g, nu)."


def test_sweep_over_target_cost(moderate_problem):
    model, prefs, gov = moderate_problem
    gov = dataclasses.replace(gov, G=np.array([3.0]))

    frame = sensitivity_sweep(model, prefs, gov, "kappa", [0.0, 0.4, 0.8], M=1)

    green = frame["green_mean"].to_numpy()
    assert np.all(np.diff(green) >= -1e-4)
    assert green[-1] > green[0]
