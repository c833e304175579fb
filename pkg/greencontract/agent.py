# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Investor (Agent) best response

Given incentives $(z, \\Gamma)$ the investor maximizes over the box $K$ the
Hamiltonian

$$h^{obs}(t, z, \\Gamma, p) = -k(p) + z \\cdot \\mu^{obs}(t, p)
+ \\tfrac12 \\mathrm{Tr}\\big[\\Gamma\\, \\Sigma^{obs}\\Sigma\\Sigma^{obs\\top}(t, p)\\big].$$

Since only the first row of $\\Sigma^{obs}$ depends on $p$, $h^{obs}$ is a
quadratic function of the holdings (see `AgentQuadratic`). It is concave when
$\\Gamma_{XX}$ is small enough and may not be otherwise, which is why
`best_response()` combines several L-BFGS-B starts, a grid refinement when the
starts disagree and a lattice dominance check.

The tax-credit alternative has a closed form, see `tax_best_response()`.
"""
import functools
import itertools
import logging
from dataclasses import dataclass
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np
from scipy import optimize

from greencontract import utils
from greencontract.errors import OptimizerFailure
from greencontract.errors import ZeroBetaWithTax
from greencontract.model_core import ControlBox
from greencontract.model_core import IndexationMode
from greencontract.model_core import InvestorPrefs
from greencontract.model_core import MarketModel
from greencontract.model_core import ObservableDynamics
from greencontract.model_core import cost
from greencontract.model_core import observable_dynamics


__all__ = (
    "Incentives",
    "ResponseFlags",
    "BestResponse",
    "AgentQuadratic",
    "h_obs",
    "h_obs_gradient",
    "best_response",
    "solve_best_response",
    "response_jacobian",
    "tax_best_response",
)

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-9
AGREEMENT_TOLERANCE = 1e-4
CLUSTER_TOLERANCE = 1e-6
LATTICE_POINTS = 9
LATTICE_MAX_DIM = 4
REFINE_STEPS = 200

_LBFGSB_OPTIONS = {"ftol": 1e-15, "gtol": 1e-12, "maxiter": 500}


@dataclass(frozen=True)
class Incentives:
    """Exposure `z` to the contractible increments and `g_upper`, the packed upper triangle of Γ."""

    z: np.ndarray
    g_upper: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        g_upper = np.asarray(self.g_upper, dtype=float)
        if g_upper.shape != (utils.upper_size(z.shape[0]),):
            raise ValueError(
                f"Γ needs {utils.upper_size(z.shape[0])} upper-triangle entries for {z.shape[0]} "
                f"contractible variables (got {g_upper.shape[0]}).")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "g_upper", g_upper)

    @classmethod
    def from_matrix(cls, z, g) -> "Incentives":
        return cls(np.asarray(z, dtype=float), utils.pack_upper(np.asarray(g, dtype=float)))

    @classmethod
    def zeros(cls, dim: int) -> "Incentives":
        return cls(np.zeros(dim), np.zeros(utils.upper_size(dim)))

    @classmethod
    def from_vector(cls, theta: np.ndarray, dim: int) -> "Incentives":
        """Inverse of `to_vector()`; a vector of length `dim` alone means Γ = 0."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape[0] == dim:
            return cls(theta.copy(), np.zeros(utils.upper_size(dim)))
        return cls(theta[:dim].copy(), theta[dim:].copy())

    @property
    def dim(self) -> int:
        return self.z.shape[0]

    @property
    def g(self) -> np.ndarray:
        return utils.unpack_upper(self.g_upper, self.dim)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.z, self.g_upper])


@dataclass(frozen=True)
class ResponseFlags:
    concave: bool
    starts_agree: bool
    used_fallback: bool
    lattice_checked: bool


@dataclass(frozen=True)
class BestResponse:
    p_hat: np.ndarray
    h_value: float
    flags: ResponseFlags


###########################################################################
#                        H A M I L T O N I A N                            #
###########################################################################


class AgentQuadratic:
    """$h^{obs}$ written as $\\frac12 p^\\top H p + l^\\top p + c$ for fixed incentives."""

    def __init__(self, dynamics: ObservableDynamics, prefs: InvestorPrefs, incentives: Incentives):
        g = incentives.g
        z = incentives.z
        B = np.diag(prefs.beta)
        self.hessian = -B + g[0, 0] * dynamics.Q
        self.linear = prefs.beta * prefs.alpha + z[0] * dynamics.drift + dynamics.q @ g[0, 1:]
        self.constant = (
            -0.5 * prefs.alpha @ (prefs.beta * prefs.alpha)
            + z[1:] @ dynamics.lower_drift
            + 0.5 * np.sum(g[1:, 1:] * dynamics.A_low))

    def value(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", p, self.hessian, p) + p @ self.linear + self.constant

    def gradient(self, p: np.ndarray) -> np.ndarray:
        return self.hessian @ np.asarray(p, dtype=float) + self.linear

    @property
    def concave(self) -> bool:
        return bool(np.linalg.eigvalsh(self.hessian).max() <= 1e-12)


def h_obs(
    model: MarketModel,
    prefs: InvestorPrefs,
    t: float,
    incentives: Incentives,
    p: np.ndarray,
    mode: Optional[IndexationMode] = None,
) -> float:
    """Evaluate the investor's Hamiltonian at holdings `p`.

    ###### Errors raised ######

    `OutOfBox` if `p` is not in the box, `NonPositiveVolatility` from the
    coefficient evaluation.
    """
    p = model.box.check(p)
    dynamics = observable_dynamics(model, t, mode)
    return float(
        -cost(prefs, p)
        + incentives.z @ dynamics.mu(p)
        + 0.5 * np.sum(incentives.g * dynamics.covariance(p)))


def h_obs_gradient(
    model: MarketModel,
    prefs: InvestorPrefs,
    t: float,
    incentives: Incentives,
    p: np.ndarray,
    mode: Optional[IndexationMode] = None,
) -> np.ndarray:
    """Gradient of `h_obs()` in the holdings."""
    p = model.box.check(p)
    dynamics = observable_dynamics(model, t, mode)
    return AgentQuadratic(dynamics, prefs, incentives).gradient(p)


###########################################################################
#                         B E S T   R E S P O N S E                       #
###########################################################################


@functools.lru_cache(maxsize=16)
def _lattice(eps: float, b_inf: float, dim: int) -> np.ndarray:
    axis = np.linspace(eps, b_inf, LATTICE_POINTS)
    return np.array(list(itertools.product(axis, repeat=dim)))


def _maximize_from(quad: AgentQuadratic, box: ControlBox, start: np.ndarray) -> np.ndarray:
    bounds = [(box.eps, box.b_inf)] * start.shape[0]
    result = optimize.minimize(
        lambda p: -quad.value(p), box.clamp(start), jac=lambda p: -quad.gradient(p),
        method="L-BFGS-B", bounds=bounds, options=_LBFGSB_OPTIONS)
    return box.clamp(result.x)


def _grid_refine(quad: AgentQuadratic, box: ControlBox, start: np.ndarray) -> np.ndarray:
    # coordinate sweeps on a lattice of step (b_inf - eps) / REFINE_STEPS
    axis = np.linspace(box.eps, box.b_inf, REFINE_STEPS + 1)
    p = box.clamp(start).copy()
    best = quad.value(p)
    for _ in range(50):
        improved = False
        for i in range(p.shape[0]):
            trial = np.repeat(p[None, :], axis.shape[0], axis=0)
            trial[:, i] = axis
            values = quad.value(trial)
            k = int(np.argmax(values))
            if values[k] > best + 1e-14:
                best, p = values[k], trial[k]
                improved = True
        if not improved:
            break
    return p


def _starts(quad: AgentQuadratic, prefs: InvestorPrefs, box: ControlBox, z0: float,
            drift: np.ndarray) -> List[np.ndarray]:
    alpha = box.clamp(prefs.alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        closed_form = np.where(
            prefs.beta > 0,
            prefs.alpha + z0 * drift / np.where(prefs.beta > 0, prefs.beta, 1.0),
            np.where(z0 * drift > 0, box.b_inf, box.eps))
    starts = [
        alpha,
        box.clamp(closed_form),
        box.clamp(0.5 * (prefs.alpha + box.eps)),
        box.clamp(0.5 * (prefs.alpha + box.b_inf)),
    ]
    try:
        newton = np.linalg.solve(-quad.hessian, quad.linear)
        starts.append(box.clamp(newton))
    except np.linalg.LinAlgError:
        starts.append(np.full_like(alpha, 0.5 * (box.eps + box.b_inf)))
    return starts


def _select(candidates: List[np.ndarray], values: np.ndarray) -> Tuple[np.ndarray, float]:
    # merge near-identical maximizers into their earliest candidate, then
    # prefer the lexicographically smallest among ties
    order = np.argsort(-values, kind="stable")
    clusters: List[List] = []
    for k in order:
        for cluster in clusters:
            if np.max(np.abs(candidates[k] - candidates[cluster[0]])) <= CLUSTER_TOLERANCE:
                cluster[0] = min(cluster[0], int(k))
                break
        else:
            clusters.append([int(k), float(values[k])])
    best = clusters[0][1]
    ties = [k for k, v in clusters if v >= best - TIE_TOLERANCE]
    k = min(ties, key=lambda i: tuple(candidates[i]))
    return candidates[k], float(values[k])


def solve_best_response(
    dynamics: ObservableDynamics,
    prefs: InvestorPrefs,
    box: ControlBox,
    incentives: Incentives,
    node: Optional[int] = None,
) -> BestResponse:
    """Best response for already-built contractible dynamics (see `best_response()`)."""
    quad = AgentQuadratic(dynamics, prefs, incentives)
    concave = quad.concave
    starts = _starts(quad, prefs, box, incentives.z[0], dynamics.drift)
    candidates = [_maximize_from(quad, box, s) for s in starts]
    values = np.array([quad.value(p) for p in candidates])
    starts_agree = bool(values.max() - values.min() <= AGREEMENT_TOLERANCE)

    used_fallback = False
    if not (concave and starts_agree):
        used_fallback = True
        refined = _grid_refine(quad, box, candidates[int(np.argmax(values))])
        candidates.append(_maximize_from(quad, box, refined))
        values = np.append(values, quad.value(candidates[-1]))
        logger.warning("grid refinement used (concave=%s, starts agree=%s)", concave, starts_agree)

    lattice_checked = False
    if dynamics.n_assets <= LATTICE_MAX_DIM:
        lattice_checked = True
        lattice = _lattice(box.eps, box.b_inf, dynamics.n_assets)
        lattice_values = quad.value(lattice)
        k = int(np.argmax(lattice_values))
        if values.max() + TIE_TOLERANCE < lattice_values[k]:
            candidates.append(_maximize_from(quad, box, lattice[k]))
            values = np.append(values, quad.value(candidates[-1]))
            if values.max() + TIE_TOLERANCE < lattice_values[k]:
                raise OptimizerFailure(
                    f"best response {values.max():.6g} is dominated by a lattice point "
                    f"({lattice_values[k]:.6g})", node)

    p_hat, h_value = _select(candidates, values)
    return BestResponse(
        p_hat=p_hat,
        h_value=h_value,
        flags=ResponseFlags(
            concave=concave, starts_agree=starts_agree,
            used_fallback=used_fallback, lattice_checked=lattice_checked))


def best_response(
    model: MarketModel,
    prefs: InvestorPrefs,
    t: float,
    incentives: Incentives,
    mode: Optional[IndexationMode] = None,
) -> BestResponse:
    """Maximize `h_obs()` over the box.

    ###### Returned value ######

    A `BestResponse` with the maximizer, the maximal value and flags telling
    whether the Hamiltonian was concave, whether the L-BFGS-B starts agreed
    and whether the grid refinement was needed. Among maximizers whose values
    are within 1e-9 of each other, the lexicographically smallest one is kept.

    ###### Errors raised ######

    `OptimizerFailure` if no candidate dominates the 9-point-per-axis lattice
    (checked for at most four holdings).
    """
    return solve_best_response(observable_dynamics(model, t, mode), prefs, model.box, incentives)


def response_jacobian(
    dynamics: ObservableDynamics,
    prefs: InvestorPrefs,
    box: ControlBox,
    incentives: Incentives,
    p_hat: np.ndarray,
) -> np.ndarray:
    """Sensitivity of the best response to the incentives vector `(z, g_upper)`.

    Holdings at a bound of the box are locally constant; the free ones follow
    from the implicit function theorem on the first-order condition.
    """
    n, dim = dynamics.n_assets, incentives.dim
    free = (p_hat > box.eps + 1e-9) & (p_hat < box.b_inf - 1e-9)
    jac = np.zeros((n, dim + utils.upper_size(dim)))
    if not free.any():
        return jac
    # derivatives of the gradient in p with respect to each incentive
    forcing = np.zeros_like(jac)
    forcing[:, 0] = dynamics.drift
    rows, cols = np.triu_indices(dim)
    for k, (i, j) in enumerate(zip(rows, cols)):
        if i == 0 and j == 0:
            forcing[:, dim + k] = dynamics.Q @ p_hat
        elif i == 0:
            forcing[:, dim + k] = dynamics.q[:, j - 1]
    hessian = -np.diag(prefs.beta) + incentives.g[0, 0] * dynamics.Q
    h_ff = hessian[np.ix_(free, free)]
    try:
        jac[free] = -np.linalg.solve(h_ff, forcing[free])
    except np.linalg.LinAlgError:
        jac[free] = -np.linalg.lstsq(h_ff, forcing[free], rcond=None)[0]
    return jac


###########################################################################
#                               T A X                                     #
###########################################################################


def tax_best_response(
    model: MarketModel,
    prefs: InvestorPrefs,
    c: float,
    strict: bool = False,
) -> np.ndarray:
    """Holdings of an investor paid `c` per unit of green bond held and nothing else.

    Green holdings are `clamp(alpha + c / beta)`, the others `clamp(alpha)`.
    A positive `c` with a zero green intensity is unbounded: it raises
    `ZeroBetaWithTax` when `strict`, otherwise it is clamped to `b_inf` with a
    warning.
    """
    if c < 0:
        raise ValueError(f"The tax rate must be nonnegative (got {c}).")
    d_g = model.d_g
    p = prefs.alpha.copy()
    beta_g = prefs.beta[:d_g]
    zero = np.flatnonzero(beta_g == 0)
    if c > 0 and zero.size:
        if strict:
            raise ZeroBetaWithTax(zero.tolist())
        logger.warning("tax rate %.4g with zero green intensity: clamping bonds %s to b_inf", c, zero + 1)
    with np.errstate(divide="ignore"):
        p[:d_g] = np.where(beta_g > 0, prefs.alpha[:d_g] + c / np.where(beta_g > 0, beta_g, 1.0),
                           model.box.b_inf if c > 0 else prefs.alpha[:d_g])
    return model.box.clamp(p)
