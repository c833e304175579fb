# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Contract paths and replication

The optimal contract is paid in units of

$$\\xi = y_0 + \\int_0^T z_t \\cdot dB_t
+ \\tfrac12 \\int_0^T \\mathrm{Tr}\\big[(\\Gamma_t + \\gamma z_t z_t^\\top)\\, d\\langle B\\rangle_t\\big]
- \\int_0^T h^{obs}_t\\, dt.$$

`accumulate_contract()` evaluates it along simulated paths, with the
quadratic variation either analytic ($A\\,dt$) or realized from the path
increments.

For an averaged contract (constant $\\bar z$, $\\bar\\Gamma$),
`replication_positions()` lists the static portfolio paying the same amount:
a holding in the portfolio, log-contracts on the green bonds and the index,
variance and covariance swaps for the quadratic terms, and a coupon. Names of
underliers are the instrument names of the model and `"portfolio"`.

Positions are dictionaries `{"kind": ..., "underliers": [...], "size": ...}`
with `kind` one of `"bond-holding"`, `"log-contract"`, `"variance-swap"`,
`"covariance-swap"` and, after `expand_swaps()`, `"dynamic-holding"` (a
self-financing holding of `size / P_t` units of the named bond).
"""
import collections
import logging
from dataclasses import dataclass
from typing import Dict
from typing import List
from typing import Mapping
from typing import Optional
from typing import TYPE_CHECKING
from typing import Tuple
from typing import Union

import numpy as np

from greencontract.base import BaseReport
from greencontract.errors import GridMismatch
from greencontract.errors import ValidationError
from greencontract.model_core import IndexationMode
from greencontract.model_core import cost
from greencontract.model_core import observable_dynamics
from greencontract.principal import AveragedContract
from greencontract.principal import IncentiveSchedule

if TYPE_CHECKING:
    from greencontract.mc_engine import PathBundle


__all__ = (
    "ContractPath",
    "ReplicationReport",
    "observable_increments",
    "accumulate_contract",
    "replication_positions",
    "replicated_payoff",
    "replication_series",
    "expand_swaps",
)

logger = logging.getLogger(__name__)

PORTFOLIO = "portfolio"
QUADRATIC_VARIATIONS = ("analytic", "realized")

Plan = Union[IncentiveSchedule, AveragedContract]


def _as_schedule(plan: Plan) -> IncentiveSchedule:
    return plan.schedule if isinstance(plan, AveragedContract) else plan


@dataclass(frozen=True)
class ContractPath:
    """Contract value `y` along each path (`n_paths x (n_steps + 1)`).

    `cost_integral` and `penalty_integral` are the investor's effort cost and
    the government's target penalty accumulated along the same steps.
    """

    times: np.ndarray
    y: np.ndarray
    cost_integral: np.ndarray
    penalty_integral: np.ndarray

    @property
    def xi(self) -> np.ndarray:
        return self.y[:, -1]


###########################################################################
#                          A C C U M U L A T I O N                        #
###########################################################################


def _check_grid(schedule: IncentiveSchedule, bundle: "PathBundle") -> np.ndarray:
    if not np.isclose(bundle.times[-1], schedule.horizon):
        raise GridMismatch(
            f"Paths end at {bundle.times[-1]:g} but the schedule ends at {schedule.horizon:g}.")
    return schedule.step_nodes(bundle.n_steps)


def observable_increments(plan: Plan, bundle: "PathBundle") -> np.ndarray:
    """Increments of the contractible vector along every path (`n_paths x n_steps x m`).

    The portfolio coordinate is driven by the plan's holdings, piecewise
    constant between schedule nodes.
    """
    schedule = _as_schedule(plan)
    nodes = _check_grid(schedule, bundle)
    returns = bundle.returns()
    dW = bundle.dW[..., :schedule.model.n_assets]
    m = schedule.model.n_obs
    out = np.empty((bundle.n_paths, bundle.n_steps, m))
    for k in range(bundle.n_steps):
        dynamics = observable_dynamics(schedule.model, float(bundle.times[k]), schedule.mode)
        out[:, k, 0] = returns[:, k] @ schedule.pi[nodes[k]]
        out[:, k, 1:] = dynamics.lower_drift * bundle.dt + dW[:, k] @ dynamics.lower_rows.T
    return out


def accumulate_contract(
    plan: Plan,
    bundle: "PathBundle",
    y0: float = 0.0,
    quadratic_variation: str = "analytic",
) -> ContractPath:
    """Accumulate the contract along the paths of `bundle`.

    Every step uses the incentives and holdings of the schedule node at or
    before its start, and coefficients evaluated at its start.

    ###### Errors raised ######

    `GridMismatch` if the number of steps is not a multiple of the schedule
    intervals or the horizons differ; `ValueError` for an unknown
    `quadratic_variation`.
    """
    if quadratic_variation not in QUADRATIC_VARIATIONS:
        raise ValueError(
            f"quadratic_variation must be one of {QUADRATIC_VARIATIONS} (got {quadratic_variation!r}).")
    schedule = _as_schedule(plan)
    model, prefs, gov = schedule.model, schedule.prefs, schedule.gov
    nodes = _check_grid(schedule, bundle)
    dB = observable_increments(schedule, bundle)
    dt = bundle.dt
    y = np.empty((bundle.n_paths, bundle.n_steps + 1))
    y[:, 0] = y0
    cost_integral = 0.0
    penalty_integral = 0.0
    for k in range(bundle.n_steps):
        node = nodes[k]
        incentives = schedule.incentives(node)
        z, g = incentives.z, incentives.g
        p = schedule.pi[node]
        dynamics = observable_dynamics(model, float(bundle.times[k]), schedule.mode)
        A = dynamics.covariance(p)
        h = -cost(prefs, p) + z @ dynamics.mu(p) + 0.5 * np.sum(g * A)
        weights = g + prefs.gamma * np.outer(z, z)
        if quadratic_variation == "analytic":
            compensation = 0.5 * np.sum(weights * A) * dt
        else:
            compensation = 0.5 * np.einsum("pa,ab,pb->p", dB[:, k], weights, dB[:, k])
        y[:, k + 1] = y[:, k] + dB[:, k] @ z + compensation - h * dt
        cost_integral += cost(prefs, p) * dt
        gap = gov.G - p[:model.d_g]
        penalty_integral += gov.target_weight * (gap @ gap) * dt
    ones = np.ones(bundle.n_paths)
    return ContractPath(
        times=bundle.times, y=y,
        cost_integral=cost_integral * ones, penalty_integral=penalty_integral * ones)


###########################################################################
#                             R E P L I C A T I O N                       #
###########################################################################


class ReplicationReport(BaseReport):
    mode: str
    coupon: float
    positions: list
    quadratic_weights: list
    z_bar: list
    policy: list
    expanded: Optional[bool]

    class Meta:
        report_name = "replication"
        meta_attributes = {"expanded"}


def _swap(first: str, second: str) -> Tuple[str, Tuple[str, ...]]:
    if first == second:
        return "variance-swap", (first,)
    return "covariance-swap", tuple(sorted((first, second)))


def _aggregate(entries: List[Tuple[str, Tuple[str, ...], float]]) -> List[Dict]:
    totals: Dict[Tuple[str, Tuple[str, ...]], float] = collections.OrderedDict()
    for kind, underliers, size in entries:
        totals[(kind, underliers)] = totals.get((kind, underliers), 0.0) + size
    return [
        {"kind": kind, "underliers": list(underliers), "size": float(size)}
        for (kind, underliers), size in totals.items()
        if abs(size) > 1e-15]


def replication_positions(
    averaged: AveragedContract,
    policy: Optional[np.ndarray] = None,
) -> ReplicationReport:
    """Static portfolio replicating the averaged contract.

    With $C = \\bar\\Gamma + \\gamma \\bar z \\bar z^\\top$, each ordered pair
    `(i, k)` of contractible variables contributes a swap of size $C_{ik}/2$.
    The portfolio variance is held directly; a pair involving the portfolio and
    another variable is expanded over the holdings `policy` (default: the
    response at the first node), each leg measured on the holding's bond. The
    coupon is `-coupon_integral`.

    The contract must be indexed on prices: swaps and log-contracts are
    written on instruments (`ValidationError` otherwise).
    """
    schedule = averaged.schedule
    if schedule.mode is not IndexationMode.PRICE:
        raise ValidationError("Static replication needs a contract indexed on prices (mode 'price').")
    model = schedule.model
    policy = schedule.pi[0] if policy is None else np.asarray(policy, dtype=float)
    obs_names = [PORTFOLIO, *model.green_names, "index"]
    assets = model.asset_names
    z_bar = averaged.z_bar
    C = averaged.g_bar + schedule.prefs.gamma * np.outer(z_bar, z_bar)

    entries = []
    if z_bar[0] != 0:
        entries.append(("bond-holding", (PORTFOLIO,), z_bar[0]))
    entries.extend(("log-contract", (name,), z_bar[i]) for i, name in enumerate(obs_names) if i and z_bar[i] != 0)
    m = z_bar.shape[0]
    for i in range(m):
        for k in range(m):
            half = 0.5 * C[i, k]
            if half == 0:
                continue
            if i == 0 and k == 0:
                entries.append(("variance-swap", (PORTFOLIO,), half))
            elif i == 0 or k == 0:
                other = obs_names[k if i == 0 else i]
                entries.extend((*_swap(asset, other), half * weight) for asset, weight in zip(assets, policy))
            else:
                entries.append((*_swap(obs_names[i], obs_names[k]), half))

    return ReplicationReport(
        mode=schedule.mode.value,
        coupon=-averaged.coupon_integral,
        positions=_aggregate(entries),
        quadratic_weights=C,
        z_bar=z_bar,
        policy=policy,
        expanded=None,
    )


def replication_series(plan: Plan, bundle: "PathBundle") -> Dict[str, np.ndarray]:
    """Per-step increments of every underlier named by replication positions.

    The portfolio and the contractible variables use their contractible
    increments; the other bonds use their returns.
    """
    schedule = _as_schedule(plan)
    model = schedule.model
    dB = observable_increments(schedule, bundle)
    returns = bundle.returns()
    series = {PORTFOLIO: dB[..., 0]}
    for j, name in enumerate(model.conv_names):
        series[name] = returns[..., model.d_g + j]
    for i, name in enumerate([*model.green_names, "index"]):
        series[name] = dB[..., i + 1]
    return series


def replicated_payoff(report: ReplicationReport, series: Mapping[str, np.ndarray]) -> np.ndarray:
    """Payoff of the replicating portfolio along paths, from per-step increments of each underlier."""
    total = report.coupon
    for position in report.positions:
        kind, names, size = position["kind"], position["underliers"], position["size"]
        if kind in ("bond-holding", "log-contract"):
            total = total + size * series[names[0]].sum(axis=-1)
        elif kind == "variance-swap":
            total = total + size * (series[names[0]] ** 2).sum(axis=-1)
        elif kind == "covariance-swap":
            total = total + size * (series[names[0]] * series[names[1]]).sum(axis=-1)
        else:
            raise ValueError(f"Cannot price a '{kind}' position from increments.")
    return total


###########################################################################
#                          S W A P   S Y N T H E S I S                    #
###########################################################################


def _expand_variance(name: str, size: float):
    # <log P> = 2 (int dP/P - log P_T/P_0)
    return [("log-contract", (name,), -2.0 * size), ("dynamic-holding", (name,), 2.0 * size)]


def expand_swaps(report: ReplicationReport) -> ReplicationReport:
    """Rewrite swaps on bonds with log-contracts and self-financing bond holdings.

    A variance swap on `P` becomes a short-2 log-contract on `P` and a
    `2 / P_t` holding of `P`. A covariance swap on `(P1, P2)` is half the
    variance swap of the product bond `P1*P2` minus half the variance swaps
    of its legs, each expanded in turn; the log-contract on the product is the
    sum of the log-contracts on its legs. Swaps on the portfolio are kept.
    """
    entries = []
    for position in report.positions:
        kind, names, size = position["kind"], tuple(position["underliers"]), position["size"]
        if kind == "variance-swap" and names[0] != PORTFOLIO:
            entries.extend(_expand_variance(names[0], size))
        elif kind == "covariance-swap" and PORTFOLIO not in names:
            product = "*".join(names)
            for leg_kind, leg_names, leg_size in _expand_variance(product, 0.5 * size):
                if leg_kind == "log-contract":
                    entries.extend(("log-contract", (leg,), leg_size) for leg in names)
                else:
                    entries.append((leg_kind, leg_names, leg_size))
            for leg in names:
                entries.extend(_expand_variance(leg, -0.5 * size))
        else:
            entries.append((kind, names, size))
    return ReplicationReport(
        mode=report.mode,
        coupon=report.coupon,
        positions=_aggregate(entries),
        quadratic_weights=report.quadratic_weights,
        z_bar=report.z_bar,
        policy=report.policy,
        expanded=True,
    )
