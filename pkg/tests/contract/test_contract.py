import numpy as np
import pytest

from greencontract.contract import PORTFOLIO
from greencontract.contract import ReplicationReport
from greencontract.contract import accumulate_contract
from greencontract.contract import expand_swaps
from greencontract.contract import replicated_payoff
from greencontract.contract import replication_positions
from greencontract.contract import replication_series
from greencontract.errors import GridMismatch
from greencontract.errors import ValidationError
from greencontract.mc_engine import simulate_market
from greencontract.model_core import IndexationMode
from greencontract.model_core import observable_dynamics
from greencontract.principal import IncentiveSchedule
from greencontract.principal import average_schedule
from greencontract.principal import solve_schedule
from greencontract.utils import pack_upper


def constant_schedule(config, z, g=None, pi=None, M=1) -> IncentiveSchedule:
    model, prefs, gov = config.market_model(), config.investor_prefs(), config.gov_prefs()
    z = np.asarray(z, dtype=float)
    g_upper = pack_upper(np.zeros((3, 3)) if g is None else np.asarray(g, dtype=float))
    pi = model.box.clamp(prefs.alpha) if pi is None else np.asarray(pi, dtype=float)
    times = np.linspace(0.0, model.horizon, M + 1)
    return IncentiveSchedule(
        times=times,
        z=np.tile(z, (M + 1, 1)),
        g_upper=np.tile(g_upper, (M + 1, 1)),
        pi=np.tile(pi, (M + 1, 1)),
        h_values=np.zeros(M + 1),
        H_values=np.zeros(M + 1),
        model=model,
        prefs=prefs,
        gov=gov,
        mode=config.mode,
    )


def test_null_contract(moderate_config):
    schedule = constant_schedule(moderate_config, np.zeros(3))
    bundle = simulate_market(schedule.model, 50, 4, seed=1)

    contract = accumulate_contract(schedule, bundle, y0=0.25)

    np.testing.assert_allclose(contract.y, 0.25)
    np.testing.assert_allclose(contract.cost_integral, 0.0)


def test_contract_pays_portfolio_gains(moderate_config):
    schedule = constant_schedule(moderate_config, [1.0, 0.0, 0.0])
    model, prefs = schedule.model, schedule.prefs
    bundle = simulate_market(model, 20, 8, seed=2)
    pi = schedule.pi[0]
    dynamics = observable_dynamics(model, 0.0)
    A = dynamics.covariance(pi)

    contract = accumulate_contract(schedule, bundle)

    gains = bundle.returns() @ pi
    expected = gains.sum(axis=1) + (0.5 * prefs.gamma * A[0, 0] - pi @ dynamics.drift) * model.horizon
    np.testing.assert_allclose(contract.xi, expected, rtol=1e-10, atol=1e-12)


def test_realized_quadratic_variation_bias(moderate_config):
    pi = np.array([1.0, 0.01, 0.01, 0.01])
    schedule = constant_schedule(moderate_config, [1.0, 0.0, 0.0], pi=pi)
    model = schedule.model
    mu = observable_dynamics(model, 0.0).mu(pi)[0]
    bundle = simulate_market(model, 20000, 2, seed=3)

    biases = []
    for factor in (1, 2):
        coarse = bundle.coarsen(factor)
        analytic = accumulate_contract(schedule, coarse).xi
        realized = accumulate_contract(schedule, coarse, quadratic_variation="realized").xi
        biases.append(float(np.mean(realized - analytic)))

    # E[dX^2] exceeds the analytic variance by (mu dt)^2 on every step
    expected = 0.5 * mu ** 2 * model.horizon * model.horizon / 2
    assert biases[1] / biases[0] == pytest.approx(2.0, abs=0.5)
    assert biases[0] == pytest.approx(expected, rel=0.25)


def test_unknown_quadratic_variation(moderate_config):
    schedule = constant_schedule(moderate_config, np.zeros(3))
    bundle = simulate_market(schedule.model, 4, 2, seed=1)

    with pytest.raises(ValueError) as err:
        accumulate_contract(schedule, bundle, quadratic_variation="empirical")

    assert str(err.value) == "quadratic_variation must be one of ('analytic', 'realized') (got 'empirical')."


def test_grid_mismatch(moderate_config):
    schedule = constant_schedule(moderate_config, np.zeros(3), M=2)
    bundle = simulate_market(schedule.model, 4, 3, seed=1)

    with pytest.raises(GridMismatch):
        accumulate_contract(schedule, bundle)


@pytest.fixture
def price_contract(price_config):
    schedule = solve_schedule(
        price_config.market_model(), price_config.investor_prefs(), price_config.gov_prefs(),
        M=1, n_random_starts=0)
    return average_schedule(schedule)


def test_replication_positions(price_contract):
    report = replication_positions(price_contract)
    positions = {(p["kind"], tuple(p["underliers"])): p["size"] for p in report.positions}
    C = np.asarray(report.quadratic_weights)

    assert report.mode == "price"
    assert report.coupon == pytest.approx(-price_contract.coupon_integral)
    assert positions[("bond-holding", (PORTFOLIO,))] == pytest.approx(price_contract.z_bar[0])
    assert positions[("variance-swap", (PORTFOLIO,))] == pytest.approx(0.5 * C[0, 0])
    assert positions[("variance-swap", ("green1",))] == pytest.approx(0.5 * C[1, 1] + C[0, 1] * report.policy[0])
    np.testing.assert_allclose(C, C.T)


def test_replication_matches_contract(price_contract):
    bundle = simulate_market(price_contract.schedule.model, 500, 40, seed=4)
    report = replication_positions(price_contract)

    errors = []
    for factor in (4, 1):
        paths = bundle.coarsen(factor)
        contract = accumulate_contract(price_contract, paths, quadratic_variation="realized")
        replicated = replicated_payoff(report, replication_series(price_contract, paths))
        errors.append(float(np.mean(np.abs(replicated - contract.xi))))

    # the legs on bonds are measured with returns instead of log-returns
    assert errors[1] <= 0.3 * errors[0] + 1e-12


def test_replication_needs_price_indexation(moderate_config):
    schedule = solve_schedule(
        moderate_config.market_model(), moderate_config.investor_prefs(), moderate_config.gov_prefs(),
        M=1, n_random_starts=0)

    with pytest.raises(ValidationError) as err:
        replication_positions(average_schedule(schedule))

    assert str(err.value) == "Static replication needs a contract indexed on prices (mode 'price')."


def test_swap_expansion():
    report = ReplicationReport(
        mode=IndexationMode.PRICE.value,
        coupon=0.1,
        positions=[
            {"kind": "variance-swap", "underliers": [PORTFOLIO], "size": 0.3},
            {"kind": "variance-swap", "underliers": ["green1"], "size": 0.5},
            {"kind": "covariance-swap", "underliers": ["conv1", "green1"], "size": 0.2},
        ],
        quadratic_weights=[[1.0]],
        z_bar=[1.0],
        policy=[1.0],
        expanded=None,
    )

    expanded = expand_swaps(report)
    positions = {(p["kind"], tuple(p["underliers"])): p["size"] for p in expanded.positions}

    assert expanded.expanded
    assert positions == pytest.approx({
        ("variance-swap", (PORTFOLIO,)): 0.3,
        ("log-contract", ("green1",)): -1.0,
        ("dynamic-holding", ("green1",)): 0.8,
        ("dynamic-holding", ("conv1*green1",)): 0.2,
        ("dynamic-holding", ("conv1",)): -0.2,
    })
    assert expanded.report_dict()["meta"] == {"expanded": True}


def test_expanded_positions_cannot_be_priced_from_increments():
    report = ReplicationReport(
        mode="price", coupon=0.0, quadratic_weights=[[1.0]], z_bar=[1.0], policy=[1.0], expanded=True,
        positions=[{"kind": "dynamic-holding", "underliers": ["green1"], "size": 1.0}])

    with pytest.raises(ValueError) as err:
        replicated_payoff(report, {"green1": np.zeros((2, 3))})

    assert str(err.value) == "Cannot price a 'dynamic-holding' position from increments."
