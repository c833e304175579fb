import dataclasses
from types import SimpleNamespace

import numpy as np
import pytest

from greencontract.agent import Incentives
from greencontract.agent import best_response
from greencontract.config import build_config
from greencontract.errors import OutOfGrid
from greencontract.errors import ValidationError
from greencontract.hjb import HjbGrid
from greencontract.hjb import OuRate
from greencontract.hjb import diagnose
from greencontract.hjb import extract_policy
from greencontract.hjb import hamiltonian_S
from greencontract.hjb import inner_best_response_S
from greencontract.hjb import normalized_criterion
from greencontract.hjb import solve_hjb
from greencontract.hjb import stochastic_dynamics
from greencontract.mc_engine import simulate_market
from greencontract.model_core import IndexationMode
from greencontract.principal import certainty_equivalent
from greencontract.principal import script_H
from greencontract.principal import solve_schedule


FROZEN_RATE = OuRate(theta=0.0, m=0.02, sigma_r=0.0)


def test_ou_transition():
    ou = OuRate(theta=0.5, m=0.03, sigma_r=0.01)

    decay, scale = ou.transition(0.5)

    assert decay == pytest.approx(np.exp(-0.25))
    assert scale == pytest.approx(0.01 * np.sqrt(1.0 - np.exp(-0.5)))
    assert OuRate(0.0, 0.03, 0.01).transition(0.25) == pytest.approx((1.0, 0.005))


def test_ou_initial_rate(moderate_model):
    assert OuRate(0.5, 0.03, 0.01).initial_rate(moderate_model) == pytest.approx(0.02)
    assert OuRate(0.5, 0.03, 0.01, r0=0.05).initial_rate(moderate_model) == 0.05


def test_ou_parameters_are_checked():
    with pytest.raises(ValueError) as err:
        OuRate(theta=-1.0, m=0.02, sigma_r=0.01)

    assert str(err.value) == "theta and sigma_r must be nonnegative (got -1.0, 0.01)."


def test_grid():
    grid = HjbGrid()

    assert grid.shape == (40, 20, 10, 20)
    assert grid.refined(2).shape == (80, 40, 20, 40)
    assert grid.refined(2).n_t == 20


@pytest.mark.parametrize("kwargs, message", [
    ({"n_t": 0}, "The HJB grid needs at least one time step (got 0)."),
    ({"n_r": 3}, "Every axis of the HJB grid needs at least 4 nodes."),
])
def test_grid_checks(kwargs, message):
    with pytest.raises(ValueError) as err:
        HjbGrid(**kwargs)

    assert str(err.value) == message


def test_solver_needs_one_green_bond(moderate_tree):
    moderate_tree["market"]["green"].append(
        {"name": "green2", "maturity": 5.0, "rate": [0.02, 0.0], "premium": [0.3, 0.0], "vol": [0.1, 0.0]})
    moderate_tree["market"]["conventional"] = moderate_tree["market"]["conventional"][:1]
    moderate_tree["market"]["corr"] = np.eye(4).tolist()
    moderate_tree["government"]["G"] = [0.0, 0.0]
    config = build_config(moderate_tree)

    with pytest.raises(ValidationError) as err:
        solve_hjb(config.market_model(), config.investor_prefs(), config.gov_prefs(),
                  OuRate(0.5, 0.02, 0.01), HjbGrid())

    assert str(err.value) == "The stochastic-rate solver needs exactly one green bond (got 2)."


def test_flat_value_gives_the_deterministic_criterion(moderate_model, investor, government):
    z = np.array([0.8, 0.3, -0.2])
    embedded = Incentives.from_matrix([0.8, 0.3, 0.0, -0.2], np.zeros((4, 4)))
    deterministic = Incentives.from_matrix(z, np.zeros((3, 3)))
    p = best_response(moderate_model, investor, 0.0, deterministic, IndexationMode.RISK_SOURCE).p_hat

    value = hamiltonian_S(
        moderate_model, investor, government, 0.0, embedded, 0.02, -1.0, np.zeros(4), np.zeros((4, 4)),
        FROZEN_RATE)

    assert inner_best_response_S(moderate_model, investor, 0.0, embedded, 0.02, FROZEN_RATE).p_hat == \
        pytest.approx(p, abs=1e-6)
    assert value == pytest.approx(
        government.nu * script_H(moderate_model, investor, government, 0.0, deterministic, p,
                                 IndexationMode.RISK_SOURCE), rel=1e-6)


@pytest.fixture
def derivatives():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(4, 4))
    return rng.normal(size=4), 0.5 * (m + m.T)


def test_normalized_criterion(moderate_model, investor, government, derivatives):
    ou = OuRate(theta=0.5, m=0.03, sigma_r=0.01)
    rho_b, rho_bb = derivatives
    u = -2.0
    incentives = Incentives.from_matrix([0.5, 0.2, 0.1, -0.1], np.zeros((4, 4)))
    p = inner_best_response_S(moderate_model, investor, 0.0, incentives, 0.025, ou).p_hat
    dynamics = stochastic_dynamics(moderate_model, 0.0, 0.025, ou)

    value, _, _ = normalized_criterion(dynamics, investor, government, rho_b, rho_bb)(incentives.z, p)

    expected = hamiltonian_S(
        moderate_model, investor, government, 0.0, incentives, 0.025, u, u * rho_b, u * rho_bb, ou)
    assert value == pytest.approx(expected / (-government.nu * u), rel=1e-9)


def test_normalized_criterion_gradient(moderate_model, investor, government, derivatives):
    ou = OuRate(theta=0.5, m=0.03, sigma_r=0.01)
    dynamics = stochastic_dynamics(moderate_model, 0.2, 0.025, ou)
    criterion = normalized_criterion(dynamics, investor, government, *derivatives)
    rng = np.random.default_rng(4)
    step = 1e-5

    for _ in range(10):
        z, p = rng.normal(size=4), rng.uniform(0.5, 5.0, 4)
        _, grad_z, grad_p = criterion(z, p)

        expected_z = [(criterion(z + step * e, p)[0] - criterion(z - step * e, p)[0]) / (2 * step)
                      for e in np.eye(4)]
        expected_p = [(criterion(z, p + step * e)[0] - criterion(z, p - step * e)[0]) / (2 * step)
                      for e in np.eye(4)]
        np.testing.assert_allclose(grad_z, expected_z, rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(grad_p, expected_p, rtol=1e-5, atol=1e-7)


###########################################################################
#                    F R O Z E N   R A T E   S O L V E S                  #
###########################################################################


def _frozen_solve(config, n_t):
    model, prefs, gov = config.market_model(), config.investor_prefs(), config.gov_prefs()
    schedule = solve_schedule(model, prefs, gov, M=2, mode=IndexationMode.RISK_SOURCE, n_random_starts=0)
    grid = HjbGrid(n_t=n_t, n_x=4, n_w=4, n_r=5)
    solution = solve_hjb(model, prefs, gov, FROZEN_RATE, grid, schedule=schedule)
    return SimpleNamespace(model=model, schedule=schedule, grid=grid, solution=solution)


@pytest.fixture(scope="module")
def frozen(shared_moderate_config):
    return _frozen_solve(shared_moderate_config, n_t=2)


def _origin_group(controls):
    return controls.group_index[0, 0, 2, 0]


def test_frozen_rate_value(frozen):
    solution = frozen.solution
    dt = solution.times[1]
    H = [controls.H[_origin_group(controls)] for controls in solution.layers[:-1]]

    # every axis takes a quarter of the reaction
    expected = -np.prod([(1.0 + dt * solution.nu * h / 4) ** -4 for h in H])

    assert solution.u0 == pytest.approx(expected, rel=1e-10)
    assert H == pytest.approx(frozen.schedule.H_values[:2], rel=1e-5)
    assert [controls.n_groups for controls in solution.layers] == [5, 5, 5]


def test_frozen_rate_converges_to_deterministic_value(frozen, shared_moderate_config):
    finer = _frozen_solve(shared_moderate_config, n_t=4)
    target = certainty_equivalent(frozen.schedule)

    coarse_error = abs(frozen.solution.certainty_equivalent - target)
    fine_error = abs(finer.solution.certainty_equivalent - target)

    assert fine_error < coarse_error
    assert coarse_error / fine_error == pytest.approx(2.0, abs=0.5)


def test_value_slice(frozen, tmp_path):
    frame = frozen.solution.slice_frame(axis="r_g")

    assert list(frame.columns) == ["r_g", "U", "pi_0", "pi_1", "pi_2", "pi_3"]
    assert frame.shape[0] == 5
    assert (frame["U"] < 0).all()
    assert frozen.solution.save(tmp_path / "hjb.bin").exists()


def test_extracted_policy_matches_schedule(frozen):
    bundle = simulate_market(frozen.model, 200, 4, seed=3, ou=FROZEN_RATE)

    policy = extract_policy(frozen.solution, bundle)
    report = diagnose(frozen.solution, frozen.grid, frozen.schedule, policy)

    np.testing.assert_allclose(bundle.rates, 0.02)
    np.testing.assert_allclose(policy.pi.mean(axis=0)[0], frozen.schedule.pi[0], atol=1e-3)
    assert report.policy_match
    assert report.policy_relative_error < 1e-2
    assert report.deterministic_certainty_equivalent == pytest.approx(certainty_equivalent(frozen.schedule))
    exported = report.report_dict()
    assert exported["type"] == "hjb"
    assert exported["groups"] == [5, 5, 5]


def test_policy_needs_rate_paths(frozen):
    bundle = simulate_market(frozen.model, 4, 4, seed=3)

    with pytest.raises(ValueError) as err:
        extract_policy(frozen.solution, bundle)

    assert str(err.value) == "The paths must carry a simulated green rate."


def test_policy_off_the_grid(frozen):
    bundle = simulate_market(frozen.model, 10, 4, seed=3, ou=FROZEN_RATE)

    assert extract_policy(frozen.solution, bundle, x0=1e6).n_clamped == 40

    with pytest.raises(OutOfGrid) as err:
        extract_policy(frozen.solution, bundle, x0=1e6, strict=True)

    assert str(err.value) == "40 path states left the grid and were clamped."


###########################################################################
#                  S T O C H A S T I C   R A T E   S O L V E S            #
###########################################################################


GREEN_RATE = OuRate(theta=0.4, m=0.04, sigma_r=0.02)


@pytest.fixture(scope="module")
def stochastic(shared_moderate_config):
    model = shared_moderate_config.market_model()
    prefs = shared_moderate_config.investor_prefs()
    gov = shared_moderate_config.gov_prefs()
    grid = HjbGrid(n_t=2, n_x=4, n_w=4, n_r=5)
    solutions = {nu: solve_hjb(model, prefs, dataclasses.replace(gov, nu=nu), GREEN_RATE, grid)
                 for nu in (0.5, 1.0, 2.0)}
    schedule = solve_schedule(model, prefs, gov, M=2, mode=IndexationMode.RISK_SOURCE, n_random_starts=0)
    return SimpleNamespace(model=model, schedule=schedule, solutions=solutions)


def test_stochastic_rate_value(stochastic):
    for solution in stochastic.solutions.values():
        assert -1.0 < solution.u0 < 0.0
        assert all((layer < 0).all() for layer in solution.values)


def test_risk_aversion_lowers_certainty_equivalent(stochastic):
    solutions = [stochastic.solutions[nu] for nu in (0.5, 1.0, 2.0)]

    gaps = [solution.u0 + 1.0 for solution in solutions]
    certainty_equivalents = [solution.certainty_equivalent for solution in solutions]

    assert gaps[0] < gaps[1] < gaps[2]
    assert certainty_equivalents[0] > certainty_equivalents[1] > certainty_equivalents[2]


def test_stochastic_policy_stays_near_deterministic_policy(stochastic):
    bundle = simulate_market(stochastic.model, 200, 4, seed=3, ou=GREEN_RATE)

    policy = extract_policy(stochastic.solutions[1.0], bundle)

    green = policy.pi[:, -1, 0]
    deterministic = stochastic.schedule.pi[1, 0]
    assert green.std() > 0
    assert abs(green.mean() - deterministic) <= 0.25 * abs(deterministic)
