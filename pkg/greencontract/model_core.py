# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Market model and preferences

This module houses the market of green bonds, conventional bonds and the index
of conventional bonds, the preferences of the investor and of the government,
and the builders of the *contractible* dynamics used by every other module.

## Coefficients

Every short rate, risk premium, volatility and index drift is affine in the
time to maturity of its instrument:

$$x(t) = a + b\\,(T_{\\text{instrument}} - t).$$

`eval_coefficients()` evaluates all of them at a given date and returns a
`CoefficientSnapshot`. Holdings and risk sources are always ordered
`(green..., conventional..., index)`.

## Contractible dynamics

The contract may be indexed on the portfolio value $X$, on the risk sources of
the green bonds and on the risk source of the index (`IndexationMode.RISK_SOURCE`),
or equivalently on $X$ and the log-prices of the same instruments
(`IndexationMode.PRICE`). In both cases the contractible vector $B$ follows

$$dB_t = \\mu(t, \\pi_t)\\,dt + \\Sigma^{obs}(t, \\pi_t)\\,dW_t,$$

where only the first row of $\\Sigma^{obs}$ and the first entry of $\\mu$ depend on
the holdings. `ObservableDynamics` stores the holdings-independent pieces once
per date and evaluates $\\mu$, $\\Sigma^{obs}$ and the instantaneous covariance
$A(p) = \\Sigma^{obs}\\Sigma\\Sigma^{obs\\top}$ for any holdings, including batches
of holdings stacked along a leading axis.

```python
from greencontract.model_core import mu_obs, sigma_obs

mu_obs(model, 0.0, p)      # drift of (X, W^g, W^I)
sigma_obs(model, 0.0, p)   # (d_g + 2) x (d_g + d_c + 1) loading matrix
```
"""
import enum
import logging
from dataclasses import dataclass
from dataclasses import field
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from greencontract.errors import BadBox
from greencontract.errors import NonPositiveVolatility
from greencontract.errors import NotPSD
from greencontract.errors import OutOfBox


__all__ = (
    "IndexationMode",
    "AffineCoeff",
    "BondCoeffs",
    "IndexCoeffs",
    "ControlBox",
    "MarketModel",
    "InvestorPrefs",
    "GovPrefs",
    "CoefficientSnapshot",
    "ObservableDynamics",
    "eval_coefficients",
    "observable_dynamics",
    "cost",
    "cost_gradient",
    "mu_obs",
    "sigma_obs",
    "validate",
    "check_correlation",
)

logger = logging.getLogger(__name__)

PSD_TOLERANCE = 1e-10


class IndexationMode(str, enum.Enum):
    RISK_SOURCE = "risk_source"
    PRICE = "price"


###########################################################################
#                              M O D E L                                  #
###########################################################################


@dataclass(frozen=True)
class AffineCoeff:
    """Level `a` and slope `b` (per year of time to maturity)."""

    a: float
    b: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError(f"Affine coefficients must be finite (got a={self.a}, b={self.b}).")

    def __call__(self, maturity: float, t: float) -> float:
        return self.a + self.b * (maturity - t)


@dataclass(frozen=True)
class BondCoeffs:
    rate: AffineCoeff
    premium: AffineCoeff
    vol: AffineCoeff


@dataclass(frozen=True)
class IndexCoeffs:
    drift: AffineCoeff
    vol: AffineCoeff


@dataclass(frozen=True)
class ControlBox:
    """The box $K = [\\varepsilon, b_\\infty]$ applied to every holding."""

    eps: float = 0.01
    b_inf: float = 10.0

    def contains(self, p: np.ndarray, atol: float = 1e-12) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.eps - atol) and np.all(p <= self.b_inf + atol))

    def clamp(self, p: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(p, dtype=float), self.eps, self.b_inf)

    def check(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if not self.contains(p):
            raise OutOfBox(np.ravel(p), self.eps, self.b_inf)
        return p


@dataclass(frozen=True)
class MarketModel:
    """Green bonds, conventional bonds and the index over the horizon `[0, horizon]`.

    `corr` is the correlation matrix of the risk sources ordered
    `(green..., conventional..., index)`. Shapes are checked at construction,
    numerical soundness by `validate()`.
    """

    horizon: float
    green_maturities: Tuple[float, ...]
    conv_maturities: Tuple[float, ...]
    index_maturity: float
    green: Tuple[BondCoeffs, ...]
    conv: Tuple[BondCoeffs, ...]
    index: IndexCoeffs
    corr: np.ndarray = field(compare=False)
    box: ControlBox = ControlBox()
    mode: IndexationMode = IndexationMode.RISK_SOURCE
    green_names: Optional[Tuple[str, ...]] = None
    conv_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        errors = []
        if len(self.green) < 1:
            errors.append("    At least one green bond is required.")
        if len(self.green) != len(self.green_maturities):
            errors.append("    One maturity per green bond is required.")
        if len(self.conv) != len(self.conv_maturities):
            errors.append("    One maturity per conventional bond is required.")
        if not self.horizon > 0:
            errors.append(f"    The horizon must be positive (got {self.horizon}).")
        corr = np.asarray(self.corr, dtype=float)
        n = len(self.green) + len(self.conv) + 1
        if corr.shape != (n, n):
            errors.append(f"    The correlation matrix must be {n}x{n} (got {corr.shape}).")
        if errors:
            raise ValueError("\n" + "\n".join(errors))
        object.__setattr__(self, "corr", corr)
        object.__setattr__(self, "mode", IndexationMode(self.mode))
        if self.green_names is None:
            object.__setattr__(self, "green_names", tuple(f"green{i + 1}" for i in range(self.d_g)))
        if self.conv_names is None:
            object.__setattr__(self, "conv_names", tuple(f"conv{i + 1}" for i in range(self.d_c)))

    @property
    def d_g(self) -> int:
        return len(self.green)

    @property
    def d_c(self) -> int:
        return len(self.conv)

    @property
    def n_assets(self) -> int:
        """Number of holdings and of risk sources, `d_g + d_c + 1`."""
        return self.d_g + self.d_c + 1

    @property
    def n_obs(self) -> int:
        """Dimension of the contractible vector, `d_g + 2`."""
        return self.d_g + 2

    @property
    def asset_names(self) -> List[str]:
        return [*self.green_names, *self.conv_names, "index"]

    @property
    def obs_names(self) -> List[str]:
        return ["X", *self.green_names, "index"]


@dataclass(frozen=True)
class InvestorPrefs:
    """Targets `alpha`, intensities `beta` and risk aversion `gamma` of the investor."""

    alpha: np.ndarray = field(compare=False)
    beta: np.ndarray = field(compare=False)
    gamma: float = 1.0

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        errors = []
        if alpha.shape != beta.shape or alpha.ndim != 1:
            errors.append("    alpha and beta must be vectors of the same length.")
        if np.any(beta < 0):
            errors.append("    beta entries must be nonnegative.")
        if not self.gamma > 0:
            errors.append(f"    gamma must be positive (got {self.gamma}).")
        if errors:
            raise ValueError("\n" + "\n".join(errors))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)


@dataclass(frozen=True)
class GovPrefs:
    """Green targets `G`, target cost `kappa` and risk aversion `nu` of the government.

    `kappa_in_H` weights the target term of the pointwise criterion by `kappa`
    (otherwise by 1). `risk_charge` selects the coefficient of the Principal's
    risk charge: `"nu"` (½ν) or `"nu_squared"` (½ν²).
    """

    G: np.ndarray = field(compare=False)
    kappa: float = 0.0
    nu: float = 1.0
    kappa_in_H: bool = True
    risk_charge: str = "nu"

    def __post_init__(self):
        errors = []
        if self.kappa < 0:
            errors.append(f"    kappa must be nonnegative (got {self.kappa}).")
        if not self.nu > 0:
            errors.append(f"    nu must be positive (got {self.nu}).")
        if self.risk_charge not in ("nu", "nu_squared"):
            errors.append(f"    risk_charge must be 'nu' or 'nu_squared' (got {self.risk_charge!r}).")
        if errors:
            raise ValueError("\n" + "\n".join(errors))
        object.__setattr__(self, "G", np.atleast_1d(np.asarray(self.G, dtype=float)))

    @property
    def target_weight(self) -> float:
        return self.kappa if self.kappa_in_H else 1.0

    @property
    def risk_coefficient(self) -> float:
        return self.nu if self.risk_charge == "nu" else self.nu ** 2

    def utility(self, x):
        """$U_P(x) = -\\exp(-\\nu x)$."""
        return -np.exp(-self.nu * np.asarray(x, dtype=float))


@dataclass(frozen=True)
class CoefficientSnapshot:
    t: float
    r_g: np.ndarray
    eta_g: np.ndarray
    sigma_g: np.ndarray
    r_c: np.ndarray
    eta_c: np.ndarray
    sigma_c: np.ndarray
    mu_I: float
    sigma_I: float

    @property
    def drift(self) -> np.ndarray:
        """Return drifts of every holding, `(r + eta*sigma)` for bonds and `mu_I` for the index."""
        return np.concatenate([
            self.r_g + self.eta_g * self.sigma_g,
            self.r_c + self.eta_c * self.sigma_c,
            [self.mu_I]])

    @property
    def vol(self) -> np.ndarray:
        return np.concatenate([self.sigma_g, self.sigma_c, [self.sigma_I]])


###########################################################################
#                    C O N T R A C T I B L E   D Y N A M I C S            #
###########################################################################


class ObservableDynamics:
    """Holdings-independent pieces of the contractible dynamics at one date.

    ###### Parameters ######

    - `drift`, `vol`: drift and volatility of every holding (length `n`).
    - `lower_drift`: drift of the contractible coordinates after the portfolio
      (length `m - 1`).
    - `lower_rows`: loadings of those coordinates on the risk sources
      (`(m - 1) x k`, `k >= n`; sources beyond `n` carry no holdings).
    - `corr`: correlation of the `k` risk sources.
    """

    def __init__(self, drift, vol, lower_drift, lower_rows, corr):
        self.drift = np.asarray(drift, dtype=float)
        self.vol = np.asarray(vol, dtype=float)
        self.lower_drift = np.asarray(lower_drift, dtype=float)
        self.lower_rows = np.atleast_2d(np.asarray(lower_rows, dtype=float))
        self.corr = np.asarray(corr, dtype=float)
        n = self.drift.shape[0]
        self.n_assets = n
        self.n_sources = self.corr.shape[0]
        self.dim = self.lower_rows.shape[0] + 1
        scaled = self.vol[:, None] * self.corr[:n, :]
        # A(p) = [[p'Qp, p'q], [q'p, A_low]]
        self.Q = scaled[:, :n] * self.vol[None, :]
        self.q = scaled @ self.lower_rows.T
        self.A_low = self.lower_rows @ self.corr @ self.lower_rows.T

    def mu(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        first = p @ self.drift
        rest = np.broadcast_to(self.lower_drift, p.shape[:-1] + self.lower_drift.shape)
        return np.concatenate([np.asarray(first)[..., None], rest], axis=-1)

    def sigma(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        first = np.zeros(p.shape[:-1] + (1, self.n_sources))
        first[..., 0, :self.n_assets] = p * self.vol
        rest = np.broadcast_to(self.lower_rows, p.shape[:-1] + self.lower_rows.shape)
        return np.concatenate([first, rest], axis=-2)

    def covariance(self, p: np.ndarray) -> np.ndarray:
        """Instantaneous covariance $A(p)$ of the contractible vector."""
        p = np.asarray(p, dtype=float)
        out = np.empty(p.shape[:-1] + (self.dim, self.dim))
        out[..., 0, 0] = np.einsum("...i,ij,...j->...", p, self.Q, p)
        cross = p @ self.q
        out[..., 0, 1:] = cross
        out[..., 1:, 0] = cross
        out[..., 1:, 1:] = self.A_low
        return out

    def trace_gradient(self, p: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Gradient in `p` of $\\mathrm{Tr}[A(p)\\,M]$ for a symmetric `weights` matrix $M$."""
        p = np.asarray(p, dtype=float)
        return 2.0 * weights[0, 0] * (self.Q @ p) + 2.0 * self.q @ weights[0, 1:]


def eval_coefficients(model: MarketModel, t: float) -> CoefficientSnapshot:
    """Evaluate every affine coefficient of `model` at time `t`.

    ###### Errors raised ######

    `NonPositiveVolatility` if some volatility is not positive at `t`, and
    `ValueError` if `t` is outside `[0, horizon]`.
    """
    if not -1e-12 <= t <= model.horizon + 1e-12:
        raise ValueError(f"t={t} is outside [0, {model.horizon}].")
    green = [(c, T) for c, T in zip(model.green, model.green_maturities)]
    conv = [(c, T) for c, T in zip(model.conv, model.conv_maturities)]
    snapshot = CoefficientSnapshot(
        t=t,
        r_g=np.array([c.rate(T, t) for c, T in green]),
        eta_g=np.array([c.premium(T, t) for c, T in green]),
        sigma_g=np.array([c.vol(T, t) for c, T in green]),
        r_c=np.array([c.rate(T, t) for c, T in conv]),
        eta_c=np.array([c.premium(T, t) for c, T in conv]),
        sigma_c=np.array([c.vol(T, t) for c, T in conv]),
        mu_I=model.index.drift(model.index_maturity, t),
        sigma_I=model.index.vol(model.index_maturity, t),
    )
    for name, value in zip(model.asset_names, snapshot.vol):
        if not value > 0:
            raise NonPositiveVolatility(name, t, value)
    return snapshot


def observable_dynamics(
    model: MarketModel,
    t: float,
    mode: Optional[IndexationMode] = None,
    snapshot: Optional[CoefficientSnapshot] = None,
) -> ObservableDynamics:
    """Contractible dynamics of `model` at `t` in the given indexation mode (default: the model's)."""
    mode = IndexationMode(mode or model.mode)
    snap = snapshot or eval_coefficients(model, t)
    d_g, n = model.d_g, model.n_assets
    rows = np.zeros((d_g + 1, n))
    if mode is IndexationMode.RISK_SOURCE:
        rows[np.arange(d_g), np.arange(d_g)] = 1.0
        rows[d_g, n - 1] = 1.0
        lower_drift = np.zeros(d_g + 1)
    else:
        rows[np.arange(d_g), np.arange(d_g)] = snap.sigma_g
        rows[d_g, n - 1] = snap.sigma_I
        corr_g = model.corr[:d_g, :d_g]
        correction = snap.sigma_g @ corr_g @ snap.sigma_g
        lower_drift = np.concatenate([
            snap.r_g + snap.eta_g * snap.sigma_g - correction,
            [snap.mu_I - 0.5 * snap.sigma_I ** 2]])
    return ObservableDynamics(snap.drift, snap.vol, lower_drift, rows, model.corr)


def mu_obs(model: MarketModel, t: float, p: np.ndarray, mode: Optional[IndexationMode] = None) -> np.ndarray:
    """Drift of the contractible vector for holdings `p` (raise `OutOfBox` if `p` is not in K)."""
    p = model.box.check(p)
    return observable_dynamics(model, t, mode).mu(p)


def sigma_obs(model: MarketModel, t: float, p: np.ndarray, mode: Optional[IndexationMode] = None) -> np.ndarray:
    """Loadings of the contractible vector on the risk sources (raise `OutOfBox` if `p` is not in K)."""
    p = model.box.check(p)
    return observable_dynamics(model, t, mode).sigma(p)


###########################################################################
#                               C O S T                                   #
###########################################################################


def cost(prefs: InvestorPrefs, p: np.ndarray) -> np.ndarray:
    """$k(p) = \\frac12 \\sum_i \\beta_i (p_i - \\alpha_i)^2$, vectorized over leading axes."""
    deviation = np.asarray(p, dtype=float) - prefs.alpha
    return 0.5 * np.sum(prefs.beta * deviation ** 2, axis=-1)


def cost_gradient(prefs: InvestorPrefs, p: np.ndarray) -> np.ndarray:
    return prefs.beta * (np.asarray(p, dtype=float) - prefs.alpha)


###########################################################################
#                           V A L I D A T I O N                           #
###########################################################################


def check_correlation(corr: np.ndarray, tolerance: float = PSD_TOLERANCE) -> float:
    """Check `corr` is a valid correlation matrix and return its smallest eigenvalue.

    Raise `NotPSD` if it is not symmetric, has a non-unit diagonal, an entry
    outside [-1, 1], or a smallest eigenvalue below `-tolerance`.
    """
    corr = np.asarray(corr, dtype=float)
    min_eig = float(np.linalg.eigvalsh(0.5 * (corr + corr.T)).min())
    if not np.allclose(corr, corr.T, atol=1e-12):
        raise NotPSD(min_eig, "Correlation matrix is not symmetric.")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
        raise NotPSD(min_eig, "Correlation matrix has a non-unit diagonal.")
    if np.any(np.abs(corr) > 1.0 + 1e-12):
        raise NotPSD(min_eig, "Correlation entries must lie in [-1, 1].")
    if min_eig < -tolerance:
        raise NotPSD(min_eig)
    return min_eig


def validate(model: MarketModel, n_grid: int = 100) -> None:
    """Check the box, the correlation matrix and the volatilities on a uniform time grid.

    ###### Errors raised ######

    `BadBox`, `NotPSD` (with the smallest eigenvalue) or `NonPositiveVolatility`.
    """
    if not 0 < model.box.eps < model.box.b_inf:
        raise BadBox(model.box.eps, model.box.b_inf)
    min_eig = check_correlation(model.corr)
    for t in np.linspace(0.0, model.horizon, n_grid):
        eval_coefficients(model, float(t))
    logger.debug("model validated (smallest correlation eigenvalue %.3e)", min_eig)


def as_vector(values: Sequence[float], size: int, name: str) -> np.ndarray:
    """Broadcast a scalar or check a sequence against the expected length."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if values.shape == (1,) and size != 1:
        values = np.full(size, values[0])
    if values.shape != (size,):
        raise ValueError(f"'{name}' must have {size} entries (got {values.shape[0]}).")
    return values
