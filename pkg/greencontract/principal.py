# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Government (Principal) optimal incentives

With deterministic coefficients the Principal's problem reduces to the
pointwise maximization, at every date, of

$$\\mathcal H(t, z, \\Gamma) = -\\kappa \\sum_i (G_i - \\hat\\pi^g_i)^2
- k(\\hat\\pi) + d(t) \\cdot \\hat\\pi
- \\tfrac12 \\gamma\\, z^\\top A z - \\tfrac12 \\nu\\, (e_1 - z)^\\top A (e_1 - z),$$

where $\\hat\\pi$ is the investor's best response to $(z, \\Gamma)$ and
$A = A(t, \\hat\\pi)$ the covariance of the contractible vector. Γ only acts
through $\\hat\\pi$. The certainty equivalent of the Principal is
$\\int_0^T \\mathcal H^\\star dt$ and the participation constant is $y_0 = 0$.

```python
schedule = solve_schedule(model, prefs, gov, M=10)
certainty_equivalent(schedule)
average_schedule(schedule).coupon_integral
```

The outer maximization runs L-BFGS-B over $(z, \\Gamma)$ in $[-10, 10]$ from
several starts; its gradient includes the response of $\\hat\\pi$ obtained by
implicit differentiation of the investor's first-order condition (see
`greencontract.agent.response_jacobian()`).
"""
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable
from typing import List
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np
import pandas as pd
from scipy import optimize

from greencontract import utils
from greencontract.agent import BestResponse
from greencontract.agent import Incentives
from greencontract.agent import response_jacobian
from greencontract.agent import solve_best_response
from greencontract.base import BaseReport
from greencontract.errors import GridMismatch
from greencontract.errors import OptimizerFailure
from greencontract.model_core import ControlBox
from greencontract.model_core import GovPrefs
from greencontract.model_core import IndexationMode
from greencontract.model_core import InvestorPrefs
from greencontract.model_core import MarketModel
from greencontract.model_core import ObservableDynamics
from greencontract.model_core import cost
from greencontract.model_core import cost_gradient
from greencontract.model_core import observable_dynamics


__all__ = (
    "PointwiseOptimum",
    "IncentiveSchedule",
    "AveragedContract",
    "OptimizationSummary",
    "principal_criterion",
    "script_H",
    "script_H_gradient",
    "maximize_incentives",
    "optimize_pointwise",
    "solve_schedule",
    "certainty_equivalent",
    "principal_value",
    "average_schedule",
    "summarize",
    "sensitivity_sweep",
    "SWEEP_PARAMETERS",
)

logger = logging.getLogger(__name__)

INCENTIVE_BOUND = 10.0
RANDOM_START_STD = 0.5
VALUE_TIE_TOLERANCE = 1e-6
SWEEP_PARAMETERS = ("G", "kappa", "alpha_g", "beta_g", "nu")

Criterion = Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray, np.ndarray]]


###########################################################################
#                            C R I T E R I O N                            #
###########################################################################


def principal_criterion(
    dynamics: ObservableDynamics, prefs: InvestorPrefs, gov: GovPrefs, d_g: int,
) -> Criterion:
    """Return `criterion(z, p) -> (value, d/dz, d/dp)` of $\\mathcal H$ at fixed holdings `p`."""
    weight = gov.target_weight
    charge = gov.risk_coefficient
    gamma = prefs.gamma
    e1 = np.zeros(dynamics.dim)
    e1[0] = 1.0

    def criterion(z: np.ndarray, p: np.ndarray):
        A = dynamics.covariance(p)
        w = e1 - z
        gap = gov.G - p[:d_g]
        value = (
            -weight * gap @ gap
            - cost(prefs, p)
            + p @ dynamics.drift
            - 0.5 * gamma * z @ A @ z
            - 0.5 * charge * w @ A @ w)
        grad_z = -gamma * A @ z + charge * A @ w
        grad_p = (
            -cost_gradient(prefs, p)
            + dynamics.drift
            - 0.5 * gamma * dynamics.trace_gradient(p, np.outer(z, z))
            - 0.5 * charge * dynamics.trace_gradient(p, np.outer(w, w)))
        grad_p[:d_g] += 2.0 * weight * gap
        return float(value), grad_z, grad_p

    return criterion


def script_H(
    model: MarketModel,
    prefs: InvestorPrefs,
    gov: GovPrefs,
    t: float,
    incentives: Incentives,
    p: np.ndarray,
    mode: Optional[IndexationMode] = None,
) -> float:
    """Evaluate the Principal's pointwise criterion term by term at holdings `p`.

    This is the unsimplified expression, in which the investor's Hamiltonian,
    the contract's drift and its quadratic-variation compensation appear
    separately; Γ cancels out of it at fixed `p`.
    """
    p = model.box.check(p)
    dynamics = observable_dynamics(model, t, mode)
    z, g = incentives.z, incentives.g
    A = dynamics.covariance(p)
    mu = dynamics.mu(p)
    w = -z.copy()
    w[0] += 1.0
    gap = gov.G - p[:model.d_g]
    h = -cost(prefs, p) + z @ mu + 0.5 * np.sum(g * A)
    return float(
        -gov.target_weight * gap @ gap
        - 0.5 * np.sum((g + prefs.gamma * np.outer(z, z)) * A)
        + h
        + mu[0]
        - z @ mu
        - 0.5 * gov.risk_coefficient * w @ A @ w)


def script_H_gradient(
    model: MarketModel,
    prefs: InvestorPrefs,
    gov: GovPrefs,
    t: float,
    incentives: Incentives,
    p: np.ndarray,
    mode: Optional[IndexationMode] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partial derivatives of `script_H()` in `z`, in the packed Γ (zero) and in `p`."""
    p = model.box.check(p)
    dynamics = observable_dynamics(model, t, mode)
    _, grad_z, grad_p = principal_criterion(dynamics, prefs, gov, model.d_g)(incentives.z, p)
    return grad_z, np.zeros_like(incentives.g_upper), grad_p


###########################################################################
#                     P O I N T W I S E   O P T I M U M                   #
###########################################################################


class PointwiseOptimum(NamedTuple):
    incentives: Incentives
    response: BestResponse
    value: float


def maximize_incentives(
    dynamics: ObservableDynamics,
    prefs: InvestorPrefs,
    box: ControlBox,
    criterion: Criterion,
    starts: Sequence[np.ndarray],
    gamma_zero: bool = False,
    node: Optional[int] = None,
) -> PointwiseOptimum:
    """Maximize `criterion(z, best response)` over the incentives from each start.

    Every start and every L-BFGS-B end point is a candidate. The best value
    wins; candidates within a relative 1e-6 of it are tied and the one with the
    smallest norm is kept.
    """
    dim = dynamics.dim
    n_theta = dim if gamma_zero else dim + utils.upper_size(dim)
    cache = {}

    def evaluate(theta):
        key = theta.tobytes()
        if key not in cache:
            incentives = Incentives.from_vector(theta, dim)
            response = solve_best_response(dynamics, prefs, box, incentives, node)
            value, grad_z, grad_p = criterion(incentives.z, response.p_hat)
            total = np.concatenate([grad_z, np.zeros(utils.upper_size(dim))])
            total += grad_p @ response_jacobian(dynamics, prefs, box, incentives, response.p_hat)
            cache[key] = (value, total[:n_theta], incentives, response)
        return cache[key]

    bounds = [(-INCENTIVE_BOUND, INCENTIVE_BOUND)] * n_theta
    candidates = []
    for start in starts:
        start = np.clip(np.asarray(start, dtype=float)[:n_theta], -INCENTIVE_BOUND, INCENTIVE_BOUND)
        candidates.append(start)
        result = optimize.minimize(
            lambda theta: -evaluate(theta)[0],
            start,
            jac=lambda theta: -evaluate(theta)[1],
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": 200})
        if not result.success:
            logger.debug("outer optimizer stopped early at node %s: %s", node, result.message)
        candidates.append(np.clip(result.x, -INCENTIVE_BOUND, INCENTIVE_BOUND))

    values = np.array([evaluate(theta)[0] for theta in candidates])
    if not np.isfinite(values).any():
        raise OptimizerFailure("no finite value of the Principal's criterion", node)
    best = np.nanmax(values)
    tied = [k for k, v in enumerate(values) if v >= best - VALUE_TIE_TOLERANCE * max(1.0, abs(best))]
    winner = min(tied, key=lambda k: (np.linalg.norm(candidates[k]), k))
    value, _, incentives, response = evaluate(candidates[winner])
    logger.debug("node %s: %d criterion evaluations", node, len(cache))
    return PointwiseOptimum(incentives, response, value)


def _starts(n_theta: int, warm_start: Optional[np.ndarray], rng: np.random.Generator,
            n_random_starts: int) -> List[np.ndarray]:
    e1 = np.zeros(n_theta)
    e1[0] = 1.0
    starts = [np.zeros(n_theta), e1]
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=float)[:n_theta])
    for _ in range(n_random_starts):
        starts.append(np.clip(rng.normal(0.0, RANDOM_START_STD, n_theta), -INCENTIVE_BOUND, INCENTIVE_BOUND))
    return starts


def optimize_pointwise(
    model: MarketModel,
    prefs: InvestorPrefs,
    gov: GovPrefs,
    t: float,
    mode: Optional[IndexationMode] = None,
    warm_start: Optional[np.ndarray] = None,
    seed: int = 0,
    node: int = 0,
    n_random_starts: int = 2,
    gamma_zero: bool = False,
) -> PointwiseOptimum:
    """Maximize the Principal's criterion at date `t`.

    ###### Parameters ######

    - `warm_start`: incentives vector `(z, g_upper)` added to the starts,
      usually the previous node's optimum.
    - `seed`, `node`: the random starts are drawn from
      `numpy.random.default_rng([seed, node])`.
    - `gamma_zero`: restrict to contracts with Γ = 0.

    ###### Returned value ######

    A `PointwiseOptimum(incentives, response, value)` tuple.
    """
    dynamics = observable_dynamics(model, t, mode)
    dim = dynamics.dim
    n_theta = dim if gamma_zero else dim + utils.upper_size(dim)
    rng = np.random.default_rng([seed, node])
    starts = _starts(n_theta, warm_start, rng, n_random_starts)
    criterion = principal_criterion(dynamics, prefs, gov, model.d_g)
    return maximize_incentives(dynamics, prefs, model.box, criterion, starts, gamma_zero, node)


###########################################################################
#                             S C H E D U L E                             #
###########################################################################


@dataclass(frozen=True)
class IncentiveSchedule:
    """Optimal incentives and responses on the uniform grid `times` (M + 1 nodes).

    Simulations use the schedule piecewise constantly: a step starting at
    `t_k` uses the last node at or before `t_k`.
    """

    times: np.ndarray
    z: np.ndarray
    g_upper: np.ndarray
    pi: np.ndarray
    h_values: np.ndarray
    H_values: np.ndarray
    model: MarketModel
    prefs: InvestorPrefs
    gov: GovPrefs
    mode: IndexationMode
    gamma_zero: bool = False
    fallback_nodes: Tuple[int, ...] = ()
    y0: float = 0.0

    @property
    def M(self) -> int:
        return self.times.shape[0] - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def incentives(self, node: int) -> Incentives:
        return Incentives(self.z[node], self.g_upper[node])

    def step_nodes(self, n_steps: int) -> np.ndarray:
        """Node driving each of `n_steps` uniform steps over the horizon.

        Raise `GridMismatch` if `n_steps` is not a multiple of M.
        """
        if n_steps < 1 or n_steps % self.M:
            raise GridMismatch(f"{n_steps} simulation steps are not a multiple of the {self.M} schedule intervals.")
        return np.arange(n_steps) // (n_steps // self.M)

    def policy_path(self, n_steps: int) -> np.ndarray:
        return self.pi[self.step_nodes(n_steps)]

    def to_frame(self) -> pd.DataFrame:
        obs = self.model.obs_names
        columns = {"t": self.times}
        columns.update({f"z_{name}": self.z[:, i] for i, name in enumerate(obs)})
        columns.update({f"g_{label}": self.g_upper[:, k] for k, label in enumerate(utils.upper_labels(obs))})
        columns.update({f"pi_{name}": self.pi[:, i] for i, name in enumerate(self.model.asset_names)})
        columns["h_obs"] = self.h_values
        columns["script_H"] = self.H_values
        return pd.DataFrame(columns)

    def to_csv(self, path: Union[str, Path], provenance: Optional[dict] = None) -> Path:
        return utils.write_csv(path, self.to_frame(), provenance)


def _schedule_from_optima(model, prefs, gov, mode, times, optima, gamma_zero) -> IncentiveSchedule:
    h_values = []
    for t, opt in zip(times, optima):
        dynamics = observable_dynamics(model, float(t), mode)
        inc, p = opt.incentives, opt.response.p_hat
        h_values.append(-cost(prefs, p) + inc.z @ dynamics.mu(p) + 0.5 * np.sum(inc.g * dynamics.covariance(p)))
    return IncentiveSchedule(
        times=np.asarray(times, dtype=float),
        z=np.array([opt.incentives.z for opt in optima]),
        g_upper=np.array([opt.incentives.g_upper for opt in optima]),
        pi=np.array([opt.response.p_hat for opt in optima]),
        h_values=np.array(h_values, dtype=float),
        H_values=np.array([opt.value for opt in optima]),
        model=model,
        prefs=prefs,
        gov=gov,
        mode=mode,
        gamma_zero=gamma_zero,
        fallback_nodes=tuple(i for i, opt in enumerate(optima) if opt.response.flags.used_fallback))


def solve_schedule(
    model: MarketModel,
    prefs: InvestorPrefs,
    gov: GovPrefs,
    M: int = 10,
    mode: Optional[IndexationMode] = None,
    seed: int = 0,
    n_random_starts: int = 2,
    gamma_zero: bool = False,
) -> IncentiveSchedule:
    """Optimize the incentives on M + 1 uniform nodes, each warm-started from the previous one."""
    if M < 1:
        raise ValueError(f"The schedule needs at least one interval (got M={M}).")
    mode = IndexationMode(mode or model.mode)
    times = np.linspace(0.0, model.horizon, M + 1)
    optima = []
    warm = None
    for node, t in enumerate(times):
        opt = optimize_pointwise(
            model, prefs, gov, float(t), mode, warm, seed, node, n_random_starts, gamma_zero)
        optima.append(opt)
        warm = opt.incentives.to_vector()
        logger.info("node %d/%d (t=%.3f): H*=%.6g z_X=%.4f", node, M, t, opt.value, opt.incentives.z[0])
    return _schedule_from_optima(model, prefs, gov, mode, times, optima, gamma_zero)


def certainty_equivalent(schedule: Union[IncentiveSchedule, "AveragedContract"]) -> float:
    """Trapezoidal integral of the Principal's criterion over the schedule nodes."""
    if isinstance(schedule, AveragedContract):
        schedule = schedule.schedule
    return float(utils.trapezoid(schedule.H_values, schedule.times))


def principal_value(schedule: Union[IncentiveSchedule, "AveragedContract"]) -> float:
    """Principal's expected utility $U_P(CE)$."""
    plan = schedule.schedule if isinstance(schedule, AveragedContract) else schedule
    return float(plan.gov.utility(certainty_equivalent(plan)))


###########################################################################
#                      A V E R A G E D   C O N T R A C T                  #
###########################################################################


@dataclass(frozen=True)
class AveragedContract:
    """Time-averaged incentives and the investor's responses to them at the schedule nodes.

    `schedule` holds the constant incentives with the node-wise responses and
    criterion values, so the averaged contract is simulated like any schedule.
    The coupon paid by the replicating portfolio is `-coupon_integral`.
    """

    z_bar: np.ndarray
    g_bar_upper: np.ndarray
    coupon_integral: float
    schedule: IncentiveSchedule
    y0: float = 0.0

    @property
    def g_bar(self) -> np.ndarray:
        return utils.unpack_upper(self.g_bar_upper, self.z_bar.shape[0])

    @property
    def incentives(self) -> Incentives:
        return Incentives(self.z_bar, self.g_bar_upper)


def average_schedule(schedule: IncentiveSchedule) -> AveragedContract:
    """Average the incentives over time and recompute the investor's responses."""
    model, prefs, gov, mode = schedule.model, schedule.prefs, schedule.gov, schedule.mode
    z_bar = utils.trapezoid_mean(schedule.z, schedule.times)
    g_bar = utils.trapezoid_mean(schedule.g_upper, schedule.times)
    incentives = Incentives(z_bar, g_bar)
    optima = []
    for node, t in enumerate(schedule.times):
        dynamics = observable_dynamics(model, float(t), mode)
        response = solve_best_response(dynamics, prefs, model.box, incentives, node)
        value, _, _ = principal_criterion(dynamics, prefs, gov, model.d_g)(z_bar, response.p_hat)
        optima.append(PointwiseOptimum(incentives, response, value))
    averaged = _schedule_from_optima(model, prefs, gov, mode, schedule.times, optima, schedule.gamma_zero)
    coupon_integral = float(utils.trapezoid(averaged.h_values, averaged.times))
    return AveragedContract(z_bar=z_bar, g_bar_upper=g_bar, coupon_integral=coupon_integral, schedule=averaged)


###########################################################################
#                              R E P O R T S                              #
###########################################################################


class OptimizationSummary(BaseReport):
    certainty_equivalent: float
    principal_value: float
    y0: float
    contract_family: str
    mode: str
    times: list
    script_h: list
    z_x_mean: float
    z_x_relative_variation: float
    green_mean: float
    averaged_certainty_equivalent: Optional[float]
    fallback_nodes: Optional[list]

    class Meta:
        report_name = "optimization"
        meta_attributes = {"fallback_nodes"}


def summarize(schedule: IncentiveSchedule, averaged: Optional[AveragedContract] = None) -> OptimizationSummary:
    z_x = schedule.z[:, 0]
    z_x_mean = float(utils.trapezoid_mean(z_x, schedule.times))
    green = schedule.pi[:, :schedule.model.d_g].sum(axis=1)
    return OptimizationSummary(
        certainty_equivalent=certainty_equivalent(schedule),
        principal_value=principal_value(schedule),
        y0=schedule.y0,
        contract_family="gamma_zero" if schedule.gamma_zero else "full",
        mode=schedule.mode.value,
        times=schedule.times,
        script_h=schedule.H_values,
        z_x_mean=z_x_mean,
        z_x_relative_variation=float((z_x.max() - z_x.min()) / max(abs(z_x_mean), 1e-12)),
        green_mean=float(utils.trapezoid_mean(green, schedule.times)),
        averaged_certainty_equivalent=None if averaged is None else certainty_equivalent(averaged),
        fallback_nodes=list(schedule.fallback_nodes) or None,
    )


###########################################################################
#                    S E N S I T I V I T Y   S W E E P S                  #
###########################################################################


def _with_parameter(model, prefs, gov, parameter, value):
    d_g = model.d_g
    if parameter == "G":
        return model, prefs, dataclasses.replace(gov, G=np.full(d_g, float(value)))
    if parameter == "kappa":
        return model, prefs, dataclasses.replace(gov, kappa=float(value))
    if parameter == "nu":
        return model, prefs, dataclasses.replace(gov, nu=float(value))
    if parameter in ("alpha_g", "beta_g"):
        name = parameter.split("_")[0]
        vector = getattr(prefs, name).copy()
        vector[:d_g] = float(value)
        return model, dataclasses.replace(prefs, **{name: vector}), gov
    raise ValueError(f"Unknown sweep parameter {parameter!r} (expected one of {', '.join(SWEEP_PARAMETERS)}).")


def sensitivity_sweep(
    model: MarketModel,
    prefs: InvestorPrefs,
    gov: GovPrefs,
    parameter: str,
    values: Sequence[float],
    M: int = 10,
    mode: Optional[IndexationMode] = None,
    seed: int = 0,
    gamma_zero: bool = False,
) -> pd.DataFrame:
    """Solve the schedule for each value of one parameter.

    `parameter` is one of `G` (every green target), `kappa`, `nu`, `alpha_g`
    and `beta_g` (every green bond). The frame has one row per value with the
    time-averaged green holding, the time-averaged `z_X` and the certainty
    equivalent.
    """
    rows = []
    for value in values:
        swept = _with_parameter(model, prefs, gov, parameter, value)
        schedule = solve_schedule(*swept, M=M, mode=mode, seed=seed, gamma_zero=gamma_zero)
        green = schedule.pi[:, :model.d_g].sum(axis=1)
        rows.append({
            "parameter": parameter,
            "value": float(value),
            "green_mean": float(utils.trapezoid_mean(green, schedule.times)),
            "z_x_mean": float(utils.trapezoid_mean(schedule.z[:, 0], schedule.times)),
            "certainty_equivalent": certainty_equivalent(schedule),
        })
        logger.info("sweep %s=%g done", parameter, value)
    return pd.DataFrame(rows)
