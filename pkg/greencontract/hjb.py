# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Stochastic green rate: HJB solver

When the green short rate follows an Ornstein-Uhlenbeck process

$$dr^g_t = \\theta (m - r^g_t)\\,dt + \\sigma_r\\, dW^{g,r}_t,$$

the contractible vector becomes $b = (X, W^g, r^g, W^I)$ (one green bond) and
the Principal's value depends on it. Writing the value as
$V = e^{-\\nu Q} U(t, b)$, where $Q$ is the Principal's wealth net of the
contract, gives $U(T, \\cdot) = -1$ and the backward equation
$\\partial_t U + \\sup_{z, \\Gamma} H = 0$ with

$$H = -\\nu U \\mathcal H(t, z, \\Gamma, \\hat\\pi) + U_b \\cdot \\mu^{obs}
+ \\tfrac12 \\mathrm{Tr}[A\\, U_{bb}] - \\nu\\, U_b^\\top A (e_1 - z),$$

which reduces to $-\\nu U \\mathcal H$ when $U$ is flat: the deterministic
pipeline is recovered when the rate volatility vanishes.

## Scheme

`solve_hjb()` steps backward on a uniform grid. On each layer, controls are
first frozen at the previous layer's optimizers and the linear equation is
solved by a locally one-dimensional implicit scheme: one banded solve per
axis with upwind advection, the reaction split equally between the axes and
cross derivatives explicit. Linear extrapolation closes every boundary. The
controls are then re-optimized at every node from the normalized derivatives
$U_b / U$ and $U_{bb} / U$ (nodes sharing them are optimized once) and the
layer is solved again until the values stop moving.
"""
import logging
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import List
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np
import pandas as pd
from scipy import interpolate
from scipy import linalg

from greencontract import utils
from greencontract.agent import BestResponse
from greencontract.agent import Incentives
from greencontract.agent import solve_best_response
from greencontract.base import BaseReport
from greencontract.errors import NonConvergence
from greencontract.errors import OutOfGrid
from greencontract.errors import UnstableStep
from greencontract.errors import ValidationError
from greencontract.model_core import GovPrefs
from greencontract.model_core import InvestorPrefs
from greencontract.model_core import MarketModel
from greencontract.model_core import ObservableDynamics
from greencontract.model_core import eval_coefficients
from greencontract.model_core import observable_dynamics
from greencontract.principal import IncentiveSchedule
from greencontract.principal import maximize_incentives
from greencontract.principal import principal_criterion


__all__ = (
    "AXES",
    "OuRate",
    "HjbGrid",
    "LayerControls",
    "HjbSolution",
    "PolicyPaths",
    "HjbDiagnostics",
    "stochastic_dynamics",
    "inner_best_response_S",
    "hamiltonian_S",
    "normalized_criterion",
    "grid_axes",
    "solve_hjb",
    "extract_policy",
    "diagnose",
)

logger = logging.getLogger(__name__)

AXES = ("X", "W_g", "r_g", "W_I")
GROUP_DECIMALS = 8


@dataclass(frozen=True)
class OuRate:
    """Ornstein-Uhlenbeck green rate; `r0` defaults to the deterministic green rate at 0."""

    theta: float
    m: float
    sigma_r: float
    r0: Optional[float] = None

    def __post_init__(self):
        if self.theta < 0 or self.sigma_r < 0:
            raise ValueError(f"theta and sigma_r must be nonnegative (got {self.theta}, {self.sigma_r}).")

    def transition(self, dt: float) -> Tuple[float, float]:
        """Decay factor and standard deviation of the exact transition over `dt`."""
        if self.theta == 0:
            return 1.0, self.sigma_r * np.sqrt(dt)
        decay = np.exp(-self.theta * dt)
        return float(decay), float(self.sigma_r * np.sqrt((1.0 - decay ** 2) / (2.0 * self.theta)))

    def initial_rate(self, model: MarketModel) -> float:
        return self.r0 if self.r0 is not None else float(eval_coefficients(model, 0.0).r_g[0])


@dataclass(frozen=True)
class HjbGrid:
    """Numbers of time steps and of nodes per axis; bounds default to `grid_axes()`."""

    n_t: int = 10
    n_x: int = 40
    n_w: int = 20
    n_r: int = 10
    x_bounds: Optional[Tuple[float, float]] = None
    w_bounds: Optional[Tuple[float, float]] = None
    r_bounds: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError(f"The HJB grid needs at least one time step (got {self.n_t}).")
        if min(self.n_x, self.n_w, self.n_r) < 4:
            raise ValueError("Every axis of the HJB grid needs at least 4 nodes.")

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.n_x, self.n_w, self.n_r, self.n_w

    def refined(self, factor: int = 2) -> "HjbGrid":
        return HjbGrid(
            self.n_t * factor, self.n_x * factor, self.n_w * factor, self.n_r * factor,
            self.x_bounds, self.w_bounds, self.r_bounds)


###########################################################################
#                         L O C A L   P R O B L E M                       #
###########################################################################


def stochastic_dynamics(model: MarketModel, t: float, r_g: float, ou: OuRate) -> ObservableDynamics:
    """Contractible dynamics of $(X, W^g, r^g, W^I)$ at rate `r_g`.

    The rate source is independent of the bond sources and appended after
    them.
    """
    snapshot = eval_coefficients(model, t)
    n = model.n_assets
    drift = snapshot.drift
    drift[0] = r_g + snapshot.eta_g[0] * snapshot.sigma_g[0]
    corr = np.zeros((n + 1, n + 1))
    corr[:n, :n] = model.corr
    corr[n, n] = 1.0
    rows = np.zeros((3, n + 1))
    rows[0, 0] = 1.0
    rows[1, n] = ou.sigma_r
    rows[2, n - 1] = 1.0
    lower_drift = np.array([0.0, ou.theta * (ou.m - r_g), 0.0])
    return ObservableDynamics(drift, snapshot.vol, lower_drift, rows, corr)


def inner_best_response_S(
    model: MarketModel,
    prefs: InvestorPrefs,
    t: float,
    incentives: Incentives,
    r_g: float,
    ou: OuRate,
) -> BestResponse:
    """Investor's best response at rate `r_g` (incentives on `(X, W^g, r^g, W^I)`)."""
    return solve_best_response(stochastic_dynamics(model, t, r_g, ou), prefs, model.box, incentives)


def hamiltonian_S(
    model: MarketModel,
    prefs: InvestorPrefs,
    gov: GovPrefs,
    t: float,
    incentives: Incentives,
    r_g: float,
    u: float,
    u_b: np.ndarray,
    u_bb: np.ndarray,
    ou: OuRate,
) -> float:
    """Hamiltonian of the Principal's value equation at one state."""
    dynamics = stochastic_dynamics(model, t, r_g, ou)
    p = solve_best_response(dynamics, prefs, model.box, incentives).p_hat
    value, _, _ = principal_criterion(dynamics, prefs, gov, model.d_g)(incentives.z, p)
    A = dynamics.covariance(p)
    w = -incentives.z.copy()
    w[0] += 1.0
    return float(
        -gov.nu * u * value
        + np.asarray(u_b) @ dynamics.mu(p)
        + 0.5 * np.sum(A * np.asarray(u_bb))
        - gov.nu * np.asarray(u_b) @ A @ w)


def normalized_criterion(
    dynamics: ObservableDynamics,
    prefs: InvestorPrefs,
    gov: GovPrefs,
    rho_b: np.ndarray,
    rho_bb: np.ndarray,
):
    """$H / (-\\nu U)$ as a criterion of `(z, p)`, with $\\rho = U_b / U$ and $U_{bb} / U$."""
    base = principal_criterion(dynamics, prefs, gov, 1)
    nu = gov.nu
    e1 = np.zeros(dynamics.dim)
    e1[0] = 1.0

    def criterion(z, p):
        value, grad_z, grad_p = base(z, p)
        A = dynamics.covariance(p)
        w = e1 - z
        value += (
            -(rho_b @ dynamics.mu(p) + 0.5 * np.sum(A * rho_bb)) / nu
            + rho_b @ A @ w)
        grad_z = grad_z - A @ rho_b
        cross = 0.5 * (np.outer(w, rho_b) + np.outer(rho_b, w))
        grad_p = (
            grad_p
            - (rho_b[0] * dynamics.drift + 0.5 * dynamics.trace_gradient(p, rho_bb)) / nu
            + dynamics.trace_gradient(p, cross))
        return float(value), grad_z, grad_p

    return criterion


###########################################################################
#                               G R I D                                   #
###########################################################################


def grid_axes(
    model: MarketModel,
    ou: OuRate,
    grid: HjbGrid,
    schedule: Optional[IncentiveSchedule] = None,
) -> Tuple[np.ndarray, ...]:
    """Axes `(X, W^g, r^g, W^I)` of the grid.

    X spans five standard deviations around the mean terminal portfolio under
    the deterministic schedule (and always contains 0); the risk sources span
    three standard deviations; the rate spans five stationary standard
    deviations around `m`, or `r0 +- 0.01` without volatility.
    """
    T = model.horizon
    if grid.x_bounds is not None:
        x_bounds = grid.x_bounds
    elif schedule is not None:
        dynamics = [observable_dynamics(model, float(t), schedule.mode) for t in schedule.times]
        mean = utils.trapezoid([d.drift @ p for d, p in zip(dynamics, schedule.pi)], schedule.times)
        variance = utils.trapezoid([p @ d.Q @ p for d, p in zip(dynamics, schedule.pi)], schedule.times)
        std = max(np.sqrt(variance), 1e-3)
        x_bounds = (min(mean - 5 * std, -std), max(mean + 5 * std, std))
    else:
        x_bounds = (-1.0, 1.0)
    w_bounds = grid.w_bounds or (-3 * np.sqrt(T), 3 * np.sqrt(T))
    r0 = ou.initial_rate(model)
    if grid.r_bounds is not None:
        r_bounds = grid.r_bounds
    elif ou.sigma_r == 0:
        r_bounds = (r0 - 0.01, r0 + 0.01)
    else:
        if ou.theta > 0:
            center, half = ou.m, 5 * ou.sigma_r / np.sqrt(2 * ou.theta)
            half = max(half, 1.2 * abs(r0 - ou.m))
        else:
            center, half = r0, 5 * ou.sigma_r * np.sqrt(T)
        r_bounds = (center - half, center + half)
    return (
        np.linspace(*x_bounds, grid.n_x),
        np.linspace(*w_bounds, grid.n_w),
        np.linspace(*r_bounds, grid.n_r),
        np.linspace(*w_bounds, grid.n_w))


###########################################################################
#                       L I N E A R   S O L V E S                         #
###########################################################################


def _implicit_axis(U, axis, dt, advection, diffusion, reaction, h):
    values = np.moveaxis(U, axis, -1)
    shape = values.shape
    N = shape[-1]
    a = np.moveaxis(advection, axis, -1).reshape(-1, N)
    D = np.moveaxis(diffusion, axis, -1).reshape(-1, N)
    R = np.moveaxis(reaction, axis, -1).reshape(-1, N)
    size = a.size

    upper = -dt * (0.5 * D / h ** 2 + np.maximum(a, 0.0) / h)
    lower = -dt * (0.5 * D / h ** 2 + np.maximum(-a, 0.0) / h)
    diag = 1.0 + dt * (np.abs(a) / h + D / h ** 2 - R)
    upper2 = np.zeros_like(a)
    lower2 = np.zeros_like(a)
    # linear extrapolation rows
    diag[:, 0] = diag[:, -1] = 1.0
    upper[:, 0], upper2[:, 0] = -2.0, 1.0
    lower[:, -1], lower2[:, -1] = -2.0, 1.0
    upper[:, -1] = 0.0
    lower[:, 0] = 0.0

    ab = np.zeros((5, size))
    ab[0, 2:] = upper2.ravel()[:-2]
    ab[1, 1:] = upper.ravel()[:-1]
    ab[2] = diag.ravel()
    ab[3, :-1] = lower.ravel()[1:]
    ab[4, :-2] = lower2.ravel()[2:]
    rhs = values.reshape(-1, N).copy()
    rhs[:, 0] = rhs[:, -1] = 0.0
    solution = linalg.solve_banded((2, 2), ab, rhs.ravel())
    return np.moveaxis(solution.reshape(shape), -1, axis)


def _cross_terms(U, covariance, spacings):
    gradients = np.gradient(U, *spacings)
    total = np.zeros_like(U)
    for i in range(U.ndim):
        for j in range(i + 1, U.ndim):
            total += covariance[..., i, j] * np.gradient(gradients[i], spacings[j], axis=j)
    return total


def _lod_step(U_next, dt, reaction, advection, covariance, spacings):
    U = U_next + dt * _cross_terms(U_next, covariance, spacings)
    for axis, h in enumerate(spacings):
        U = _implicit_axis(
            U, axis, dt, advection[..., axis], covariance[..., axis, axis], reaction / U.ndim, h)
    return U


def _derivatives(U, spacings):
    gradients = np.gradient(U, *spacings)
    first = np.stack(gradients, axis=-1)
    second = np.empty(U.shape + (U.ndim, U.ndim))
    for i in range(U.ndim):
        for j in range(i, U.ndim):
            second[..., i, j] = second[..., j, i] = np.gradient(gradients[i], spacings[j], axis=j)
    return first / U[..., None], second / U[..., None, None]


###########################################################################
#                            S O L U T I O N                              #
###########################################################################


class LayerControls(NamedTuple):
    """Optimal controls of one layer: node-wise group index into small tables."""

    group_index: np.ndarray
    z: np.ndarray
    g_upper: np.ndarray
    pi: np.ndarray
    H: np.ndarray

    @property
    def n_groups(self) -> int:
        return self.z.shape[0]

    def theta(self, group: int) -> np.ndarray:
        return np.concatenate([self.z[group], self.g_upper[group]])


@dataclass
class HjbSolution:
    times: np.ndarray
    axes: Tuple[np.ndarray, ...]
    values: np.ndarray
    layers: List[LayerControls]
    iterations: List[int] = field(default_factory=list)
    r0: float = 0.0
    nu: float = 1.0

    @property
    def origin(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.r0, 0.0])

    def policy_grid(self, layer: int) -> np.ndarray:
        controls = self.layers[layer]
        return controls.pi[controls.group_index]

    def value_at(self, layer: int, points: np.ndarray) -> np.ndarray:
        interpolator = interpolate.RegularGridInterpolator(self.axes, self.values[layer])
        return interpolator(np.atleast_2d(points))

    @property
    def u0(self) -> float:
        return float(self.value_at(0, self.origin)[0])

    @property
    def certainty_equivalent(self) -> float:
        return -np.log(-self.u0) / self.nu

    def slice_frame(self, layer: int = 0, axis: str = "r_g") -> pd.DataFrame:
        """Values and holdings along one axis through the nodes closest to the origin."""
        k = AXES.index(axis)
        index = [int(np.argmin(np.abs(ax - o))) for ax, o in zip(self.axes, self.origin)]
        index[k] = slice(None)
        index = tuple(index)
        frame = pd.DataFrame({axis: self.axes[k], "U": self.values[layer][index]})
        policy = self.policy_grid(layer)[index]
        for i in range(policy.shape[-1]):
            frame[f"pi_{i}"] = policy[:, i]
        return frame

    def save(self, path: Union[str, Path]) -> Path:
        """Flat binary layout: a header with the axes, then the values layer by layer (row-major)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {"axes_names": list(AXES), "times": self.times, "axes": list(self.axes),
                  "r0": self.r0, "nu": self.nu}
        utils.write_flat_binary(path, header, [self.values])
        return path


def _layer_from_groups(group_index, results) -> LayerControls:
    return LayerControls(
        group_index=group_index.astype(np.int32),
        z=np.array([r[0].z for r in results]),
        g_upper=np.array([r[0].g_upper for r in results]),
        pi=np.array([r[1] for r in results]),
        H=np.array([r[2] for r in results]))


def _coefficients(model, prefs, gov, ou, t, r_axis, controls, shape):
    """Node-wise reaction, advection and covariance from grouped controls."""
    n_groups = controls.n_groups
    # groups never straddle two rates
    r_of_group = np.zeros(n_groups, dtype=int)
    r_nodes = np.broadcast_to(np.arange(shape[2])[None, None, :, None], shape)
    r_of_group[controls.group_index.ravel()] = r_nodes.ravel()
    reaction = np.empty(n_groups)
    advection = np.empty((n_groups, 4))
    covariance = np.empty((n_groups, 4, 4))
    pi = np.empty_like(controls.pi)
    H = np.empty(n_groups)
    for group in range(n_groups):
        dynamics = stochastic_dynamics(model, t, float(r_axis[r_of_group[group]]), ou)
        incentives = Incentives(controls.z[group], controls.g_upper[group])
        p = solve_best_response(dynamics, prefs, model.box, incentives).p_hat
        value, _, _ = principal_criterion(dynamics, prefs, gov, 1)(incentives.z, p)
        A = dynamics.covariance(p)
        w = -incentives.z.copy()
        w[0] += 1.0
        reaction[group] = -gov.nu * value
        advection[group] = dynamics.mu(p) - gov.nu * A @ w
        covariance[group] = A
        pi[group], H[group] = p, value
    index = controls.group_index
    return reaction[index], advection[index], covariance[index], controls._replace(pi=pi, H=H)


def _optimize_groups(model, prefs, gov, ou, t, r_axis, U, spacings, previous, n_random_starts, seed, layer):
    shape = U.shape
    rho_b, rho_bb = _derivatives(U, spacings)
    rows, cols = np.triu_indices(4)
    r_index = np.broadcast_to(np.arange(shape[2])[None, None, :, None], shape)
    keys = np.concatenate([
        r_index.reshape(-1, 1).astype(float),
        np.round(rho_b.reshape(-1, 4), GROUP_DECIMALS),
        np.round(rho_bb[..., rows, cols].reshape(-1, rows.size), GROUP_DECIMALS)], axis=1)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    flat_rho_b = rho_b.reshape(-1, 4)
    flat_rho_bb = rho_bb.reshape(-1, 4, 4)
    previous_group = None if previous is None else previous.group_index.reshape(-1)
    results = []
    for group, node in enumerate(first):
        r = float(r_axis[int(keys[node, 0])])
        dynamics = stochastic_dynamics(model, t, r, ou)
        criterion = normalized_criterion(dynamics, prefs, gov, flat_rho_b[node], flat_rho_bb[node])
        n_theta = 4 + utils.upper_size(4)
        e1 = np.zeros(n_theta)
        e1[0] = 1.0
        starts = [np.zeros(n_theta), e1]
        if previous is not None:
            starts.insert(0, previous.theta(previous_group[node]))
        rng = np.random.default_rng([seed, layer, group])
        starts.extend(rng.normal(0.0, 0.5, n_theta) for _ in range(n_random_starts))
        opt = maximize_incentives(dynamics, prefs, model.box, criterion, starts, node=layer)
        value, _, _ = principal_criterion(dynamics, prefs, gov, 1)(opt.incentives.z, opt.response.p_hat)
        results.append((opt.incentives, opt.response.p_hat, value))
    return _layer_from_groups(inverse.reshape(shape), results)


def _damp(new: LayerControls, old: LayerControls, damping: float) -> LayerControls:
    # blend each new group with the old control of its first node
    flat_new = new.group_index.reshape(-1)
    flat_old = old.group_index.reshape(-1)
    _, first = np.unique(flat_new, return_index=True)
    old_theta = np.array([old.theta(flat_old[node]) for node in first])
    new_theta = np.concatenate([new.z, new.g_upper], axis=1)
    theta = old_theta + damping * (new_theta - old_theta)
    return new._replace(z=theta[:, :4], g_upper=theta[:, 4:])


def solve_hjb(
    model: MarketModel,
    prefs: InvestorPrefs,
    gov: GovPrefs,
    ou: OuRate,
    grid: HjbGrid,
    schedule: Optional[IncentiveSchedule] = None,
    tolerance: float = 1e-6,
    max_iterations: int = 20,
    damping: float = 0.5,
    n_random_starts: int = 0,
    seed: int = 0,
) -> HjbSolution:
    """Solve the Principal's value equation backward from $U(T) = -1$.

    ###### Parameters ######

    - `schedule`: deterministic schedule used to size the X axis.
    - `tolerance`, `max_iterations`: stopping rule of the per-layer fixed
      point on the largest change of U.
    - `damping`: weight of the new controls once the change of U alternates
      in sign between iterations.

    ###### Errors raised ######

    `ValidationError` unless there is exactly one green bond,
    `UnstableStep` if U becomes positive, `NonConvergence` if a layer's fixed
    point does not settle.
    """
    if model.d_g != 1:
        raise ValidationError(f"The stochastic-rate solver needs exactly one green bond (got {model.d_g}).")
    axes = grid_axes(model, ou, grid, schedule)
    spacings = [float(ax[1] - ax[0]) for ax in axes]
    shape = tuple(ax.shape[0] for ax in axes)
    times = np.linspace(0.0, model.horizon, grid.n_t + 1)
    dt = float(times[1] - times[0])
    r_axis = axes[2]

    values = np.empty((grid.n_t + 1,) + shape)
    values[-1] = -1.0
    terminal = _optimize_groups(
        model, prefs, gov, ou, float(times[-1]), r_axis, values[-1], spacings, None, n_random_starts, seed, grid.n_t)
    layers: List[Optional[LayerControls]] = [None] * grid.n_t + [terminal]
    iterations = [0] * (grid.n_t + 1)

    for layer in range(grid.n_t - 1, -1, -1):
        t = float(times[layer])
        controls = layers[layer + 1]
        previous_U = None
        last_sign = 0.0
        count = 0
        while True:
            reaction, advection, covariance, controls = _coefficients(
                model, prefs, gov, ou, t, r_axis, controls, shape)
            U = _lod_step(values[layer + 1], dt, reaction, advection, covariance, spacings)
            if U.max() > 0:
                raise UnstableStep(layer, float(U.max()))
            if previous_U is not None:
                change = U - previous_U
                residual = float(np.abs(change).max())
                if residual < tolerance:
                    break
                sign = np.sign(change.ravel()[np.argmax(np.abs(change))])
                oscillating = sign * last_sign < 0
                last_sign = sign
            else:
                residual, oscillating = np.inf, False
            count += 1
            if count > max_iterations:
                raise NonConvergence(layer, count - 1, residual)
            optimized = _optimize_groups(
                model, prefs, gov, ou, t, r_axis, U, spacings, controls, n_random_starts, seed, layer)
            controls = _damp(optimized, controls, damping) if oscillating else optimized
            previous_U = U
        values[layer] = U
        layers[layer] = controls
        iterations[layer] = count
        logger.info("layer %d solved: %d iterations, %d control groups", layer, count, controls.n_groups)

    return HjbSolution(
        times=times, axes=axes, values=values, layers=layers, iterations=iterations,
        r0=ou.initial_rate(model), nu=gov.nu)


###########################################################################
#                         P O L I C Y   P A T H S                         #
###########################################################################


@dataclass(frozen=True)
class PolicyPaths:
    times: np.ndarray
    pi: np.ndarray
    x: np.ndarray
    n_clamped: int


def extract_policy(solution: HjbSolution, bundle, x0: float = 0.0, strict: bool = False) -> PolicyPaths:
    """Follow the feedback holdings along simulated paths with a stochastic rate.

    States leaving the grid are clamped to it (`strict` raises `OutOfGrid`
    instead); the clamped count is logged and returned.
    """
    if bundle.rates is None:
        raise ValueError("The paths must carry a simulated green rate.")
    n = bundle.model.n_assets
    returns = bundle.returns()
    w_g = np.concatenate([np.zeros((bundle.n_paths, 1)), np.cumsum(bundle.dW[..., 0], axis=1)], axis=1)
    w_i = np.concatenate([np.zeros((bundle.n_paths, 1)), np.cumsum(bundle.dW[..., n - 1], axis=1)], axis=1)
    lower = np.array([ax[0] for ax in solution.axes])
    upper = np.array([ax[-1] for ax in solution.axes])
    hjb_dt = solution.times[1] - solution.times[0]
    n_layers = solution.times.shape[0] - 1

    interpolators = {}
    pi = np.empty((bundle.n_paths, bundle.n_steps, n))
    x = np.empty((bundle.n_paths, bundle.n_steps + 1))
    x[:, 0] = x0
    n_clamped = 0
    for k in range(bundle.n_steps):
        layer = min(int(np.floor(bundle.times[k] / hjb_dt + 1e-9)), n_layers - 1)
        if layer not in interpolators:
            interpolators[layer] = interpolate.RegularGridInterpolator(solution.axes, solution.policy_grid(layer))
        states = np.stack([x[:, k], w_g[:, k], bundle.rates[:, k], w_i[:, k]], axis=1)
        clamped = np.clip(states, lower, upper)
        n_clamped += int(np.any(clamped != states, axis=1).sum())
        pi[:, k] = interpolators[layer](clamped)
        x[:, k + 1] = x[:, k] + np.einsum("pi,pi->p", pi[:, k], returns[:, k])
    if n_clamped:
        if strict:
            raise OutOfGrid(n_clamped)
        logger.warning("%d path states left the grid and were clamped", n_clamped)
    return PolicyPaths(times=bundle.times, pi=pi, x=x, n_clamped=n_clamped)


###########################################################################
#                           D I A G N O S T I C S                         #
###########################################################################


class HjbDiagnostics(BaseReport):
    u0: float
    certainty_equivalent: float
    iterations: list
    groups: list
    grid: dict
    deterministic_certainty_equivalent: Optional[float]
    policy_relative_error: Optional[float]
    policy_match: Optional[bool]

    class Meta:
        report_name = "hjb"


def diagnose(
    solution: HjbSolution,
    grid: HjbGrid,
    schedule: Optional[IncentiveSchedule] = None,
    policy: Optional[PolicyPaths] = None,
    tolerance: float = 0.1,
) -> HjbDiagnostics:
    """Summarize a solution; with a deterministic schedule and policy paths, compare the holdings.

    The relative error is the largest over steps of the distance between the
    mean extracted holdings and the schedule's, relative to the latter.
    """
    error = None
    if schedule is not None and policy is not None:
        steps = policy.pi.shape[1]
        nodes = np.minimum((policy.times[:-1] / (schedule.horizon / schedule.M) + 1e-9).astype(int), schedule.M)
        reference = schedule.pi[nodes]
        mean = policy.pi.mean(axis=0)
        error = float(np.max(np.linalg.norm(mean - reference, axis=1) / np.linalg.norm(reference, axis=1)))
        logger.info("policy relative error over %d steps: %.3e", steps, error)
    return HjbDiagnostics(
        u0=solution.u0,
        certainty_equivalent=solution.certainty_equivalent,
        iterations=solution.iterations,
        groups=[controls.n_groups for controls in solution.layers],
        grid={"n_t": grid.n_t, "n_x": grid.n_x, "n_w": grid.n_w, "n_r": grid.n_r},
        deterministic_certainty_equivalent=None if schedule is None else float(
            utils.trapezoid(schedule.H_values, schedule.times)),
        policy_relative_error=error,
        policy_match=None if error is None else bool(error <= tolerance),
    )
