# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Monte Carlo engine

Paths of the correlated risk sources are drawn once into a `PathBundle` and
then reused by every estimator, so that two policies compared on the same
bundle see the same shocks (common random numbers).

## Random streams

Each path owns a counter-based Philox stream: the key is derived from the
seed and the path index is placed in the high word of the counter. The
normals of a path therefore depend only on `(seed, path)`, whatever the
number of worker threads (environment variable `GREENCONTRACT_THREADS`,
default 1) or the order in which chunks of paths are processed. With
antithetic variates, paths `2i` and `2i + 1` share stream `i` with opposite
signs.

```python
bundle = simulate_market(model, n_paths=10000, n_steps=50, seed=7)
estimate_agent_value(schedule, bundle)   # close to -1
report = compare_policies(schedule, calibrate_tax_rate(model, prefs, target), bundle)
```
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import List
from typing import Optional
from typing import TYPE_CHECKING
from typing import Tuple
from typing import Union

import numpy as np
import pandas as pd
from scipy import optimize
from scipy import stats

from greencontract import utils
from greencontract.base import BaseReport
from greencontract.contract import accumulate_contract
from greencontract.errors import NotPSD
from greencontract.errors import UnreachableTarget
from greencontract.model_core import CoefficientSnapshot
from greencontract.model_core import InvestorPrefs
from greencontract.model_core import MarketModel
from greencontract.model_core import eval_coefficients
from greencontract.model_core import PSD_TOLERANCE
from greencontract.agent import tax_best_response
from greencontract.principal import AveragedContract
from greencontract.principal import IncentiveSchedule

if TYPE_CHECKING:
    from greencontract.hjb import OuRate


__all__ = (
    "PathBundle",
    "ComparisonReport",
    "simulate_market",
    "simulate_portfolio",
    "estimate_agent_value",
    "estimate_principal_value",
    "mean_green_investment",
    "calibrate_tax_rate",
    "compare_policies",
    "compare_no_contract",
    "worker_count",
    "write_paths_csv",
)

logger = logging.getLogger(__name__)

THREADS_VARIABLE = "GREENCONTRACT_THREADS"
CHUNK_SIZE = 1024

Plan = Union[IncentiveSchedule, AveragedContract]


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_VARIABLE, "1")))
    except ValueError:
        logger.warning("ignoring %s=%r (not an integer)", THREADS_VARIABLE, os.environ[THREADS_VARIABLE])
        return 1


def _as_schedule(plan: Plan) -> IncentiveSchedule:
    return plan.schedule if isinstance(plan, AveragedContract) else plan


###########################################################################
#                                P A T H S                                #
###########################################################################


@dataclass
class PathBundle:
    """Brownian increments `dW` (`n_paths x n_steps x sources`) on a uniform grid.

    With a stochastic green rate, `rates` holds its path (`n_paths x
    (n_steps + 1)`) and the last source of `dW` drives it.
    """

    model: MarketModel
    times: np.ndarray
    dW: np.ndarray
    seed: int
    antithetic: bool = False
    rates: Optional[np.ndarray] = None
    _snapshots: List[CoefficientSnapshot] = field(default=None, init=False, repr=False)

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dW.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def snapshots(self) -> List[CoefficientSnapshot]:
        if self._snapshots is None:
            self._snapshots = [eval_coefficients(self.model, float(t)) for t in self.times[:-1]]
        return self._snapshots

    def returns(self) -> np.ndarray:
        """Instantaneous returns $dP/P$ of every holding over each step."""
        n = self.model.n_assets
        d_g = self.model.d_g
        drift = np.array([s.drift for s in self.snapshots()])
        vol = np.array([s.vol for s in self.snapshots()])
        out = drift[None] * self.dt + vol[None] * self.dW[..., :n]
        if self.rates is not None:
            deterministic = np.array([s.r_g for s in self.snapshots()])
            out[..., :d_g] += (self.rates[:, :-1, None] - deterministic[None]) * self.dt
        return out

    def coarsen(self, factor: int) -> "PathBundle":
        """Same paths observed every `factor` steps."""
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"Cannot coarsen {self.n_steps} steps by a factor {factor}.")
        dW = self.dW.reshape(self.n_paths, self.n_steps // factor, factor, -1).sum(axis=2)
        rates = None if self.rates is None else self.rates[:, ::factor]
        return PathBundle(self.model, self.times[::factor], dW, self.seed, self.antithetic, rates)

    def save(self, path: Union[str, Path]) -> Path:
        """Flat binary layout: a header with the dimensions and the seed, then row-major doubles."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = [self.times, self.dW] + ([] if self.rates is None else [self.rates])
        header = {"seed": self.seed, "antithetic": self.antithetic, "n_paths": self.n_paths,
                  "n_steps": self.n_steps, "n_sources": self.dW.shape[2]}
        utils.write_flat_binary(path, header, arrays)
        return path

    @classmethod
    def load(cls, path: Union[str, Path], model: MarketModel) -> "PathBundle":
        header, arrays = utils.read_flat_binary(path)
        rates = arrays[2] if len(arrays) > 2 else None
        return cls(model, arrays[0], arrays[1], header["seed"], header["antithetic"], rates)


def _factor(corr: np.ndarray) -> np.ndarray:
    # symmetric square root with clipped eigenvalues
    eigenvalues, vectors = np.linalg.eigh(corr)
    if eigenvalues.min() < -PSD_TOLERANCE:
        raise NotPSD(float(eigenvalues.min()))
    return (vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ vectors.T


def _stream_normals(key: np.ndarray, stream: int, shape: Tuple[int, int]) -> np.ndarray:
    bit_generator = np.random.Philox(key=key, counter=np.array([0, 0, 0, stream], dtype=np.uint64))
    return np.random.Generator(bit_generator).standard_normal(shape)


def simulate_market(
    model: MarketModel,
    n_paths: int,
    n_steps: int,
    seed: int,
    antithetic: bool = False,
    ou: Optional["OuRate"] = None,
    workers: Optional[int] = None,
) -> PathBundle:
    """Draw correlated Brownian increments on `n_steps` uniform steps over the horizon.

    With `ou`, an extra independent source drives an Ornstein-Uhlenbeck green
    rate simulated with its exact transition (one green bond only).

    ###### Errors raised ######

    `NotPSD` if the correlation matrix is not positive semidefinite,
    `ValueError` for an odd number of antithetic paths.
    """
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be positive.")
    if antithetic and n_paths % 2:
        raise ValueError(f"Antithetic variates need an even number of paths (got {n_paths}).")
    if ou is not None and model.d_g != 1:
        raise ValueError("A stochastic green rate needs exactly one green bond.")
    factor = _factor(model.corr)
    n = model.n_assets
    n_sources = n + (ou is not None)
    dt = model.horizon / n_steps
    key = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    dW = np.empty((n_paths, n_steps, n_sources))

    def fill(paths: range):
        for path in paths:
            stream, sign = (path // 2, 1.0 - 2.0 * (path % 2)) if antithetic else (path, 1.0)
            normals = sign * _stream_normals(key, stream, (n_steps, n_sources))
            dW[path, :, :n] = np.sqrt(dt) * normals[:, :n] @ factor
            if ou is not None:
                dW[path, :, n] = np.sqrt(dt) * normals[:, n]

    chunks = [range(start, min(start + CHUNK_SIZE, n_paths)) for start in range(0, n_paths, CHUNK_SIZE)]
    n_workers = workers or worker_count()
    if n_workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(fill, chunks))
    else:
        for chunk in chunks:
            fill(chunk)

    rates = None
    if ou is not None:
        rates = np.empty((n_paths, n_steps + 1))
        rates[:, 0] = ou.initial_rate(model)
        decay, scale = ou.transition(dt)
        for k in range(n_steps):
            rates[:, k + 1] = ou.m + (rates[:, k] - ou.m) * decay + scale * dW[:, k, n] / np.sqrt(dt)
    logger.info("simulated %d paths x %d steps (seed %d)", n_paths, n_steps, seed)
    return PathBundle(model, np.linspace(0.0, model.horizon, n_steps + 1), dW, seed, antithetic, rates)


def _policy_array(policy, bundle: PathBundle) -> np.ndarray:
    if isinstance(policy, (IncentiveSchedule, AveragedContract)):
        return _as_schedule(policy).policy_path(bundle.n_steps)
    policy = np.asarray(policy, dtype=float)
    if policy.ndim == 1:
        policy = np.broadcast_to(policy, (bundle.n_steps, policy.shape[0]))
    return policy


def simulate_portfolio(bundle: PathBundle, policy, x0: float = 0.0) -> np.ndarray:
    """Portfolio values (`n_paths x (n_steps + 1)`) under deterministic holdings.

    `policy` is a schedule, a constant holdings vector or one vector per step.
    Holdings outside the box raise `OutOfBox`.
    """
    policy = _policy_array(policy, bundle)
    bundle.model.box.check(policy)
    gains = np.einsum("psi,si->ps", bundle.returns(), policy)
    x = np.empty((bundle.n_paths, bundle.n_steps + 1))
    x[:, 0] = x0
    np.cumsum(gains, axis=1, out=x[:, 1:])
    x[:, 1:] += x0
    return x


###########################################################################
#                             E S T I M A T E S                           #
###########################################################################


def _mean_and_error(values: np.ndarray, antithetic: bool) -> Tuple[float, float]:
    if antithetic:
        values = 0.5 * (values[0::2] + values[1::2])
    if values.shape[0] < 2:
        return float(values.mean()), float("nan")
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.shape[0]))


def estimate_agent_value(plan: Plan, bundle: PathBundle, y0: float = 0.0,
                         quadratic_variation: str = "analytic") -> Tuple[float, float]:
    """Mean and standard error of $-\\exp(-\\gamma(\\xi - \\int k\\,dt))$ over the paths."""
    schedule = _as_schedule(plan)
    contract = accumulate_contract(schedule, bundle, y0, quadratic_variation)
    values = -np.exp(-schedule.prefs.gamma * (contract.xi - contract.cost_integral))
    return _mean_and_error(values, bundle.antithetic)


def estimate_principal_value(plan: Plan, bundle: PathBundle, x0: float = 0.0) -> Tuple[float, float]:
    """Mean and standard error of $U_P(X_T - \\int \\kappa |G - \\pi^g|^2 dt - \\xi)$ over the paths."""
    schedule = _as_schedule(plan)
    contract = accumulate_contract(schedule, bundle)
    x = simulate_portfolio(bundle, schedule, x0)
    values = schedule.gov.utility(x[:, -1] - contract.penalty_integral - contract.xi)
    return _mean_and_error(values, bundle.antithetic)


###########################################################################
#                           T A X   P O L I C Y                           #
###########################################################################


def mean_green_investment(plan: Plan) -> float:
    """Time average of the total green holding of a schedule."""
    schedule = _as_schedule(plan)
    green = schedule.pi[:, :schedule.model.d_g].sum(axis=1)
    return float(utils.trapezoid_mean(green, schedule.times))


def calibrate_tax_rate(model: MarketModel, prefs: InvestorPrefs, target_green: float) -> float:
    """Smallest tax rate for which the investor's total green holding reaches `target_green`.

    ###### Errors raised ######

    `UnreachableTarget` above `d_g * b_inf`, `ValueError` below the untaxed
    green holding.
    """
    d_g = model.d_g
    upper = d_g * model.box.b_inf
    if target_green > upper + 1e-12:
        raise UnreachableTarget(target_green, upper)
    floor = float(model.box.clamp(prefs.alpha)[:d_g].sum())
    if target_green < floor - 1e-12:
        raise ValueError(f"Target {target_green:g} is below the untaxed green holding {floor:g}.")
    if target_green <= floor + 1e-12:
        return 0.0
    target_green = min(target_green, upper)

    def green(c):
        return tax_best_response(model, prefs, c)[:d_g].sum() - target_green

    # every green bond with a positive intensity saturates at c_max
    beta_g = prefs.beta[:d_g]
    saturation = beta_g * (model.box.b_inf - prefs.alpha[:d_g])
    c_max = float(np.max(saturation[beta_g > 0], initial=0.0))
    if c_max <= 0:
        c_max = 1.0
    if green(c_max) < 0:
        raise UnreachableTarget(target_green, upper)
    return float(optimize.brentq(green, 0.0, c_max, xtol=1e-12))


class ComparisonReport(BaseReport):
    baseline: str
    times: list
    mean_diff: list
    rel_diff_pct: list
    std_err: list
    green_contract: float
    green_baseline: float
    terminal_confidence: float
    tax_rate: Optional[float]
    n_paths: Optional[int]

    class Meta:
        report_name = "comparison"
        meta_attributes = {"n_paths"}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": self.times, "mean_diff": self.mean_diff,
            "rel_diff_pct": self.rel_diff_pct, "std_err": self.std_err})

    @property
    def green_gap(self) -> float:
        return self.green_contract - self.green_baseline


def _compare(plan: Plan, baseline_policy: np.ndarray, bundle: PathBundle, baseline: str,
             x0: float, tax_rate: Optional[float]) -> ComparisonReport:
    schedule = _as_schedule(plan)
    x_contract = simulate_portfolio(bundle, schedule, x0)
    x_baseline = simulate_portfolio(bundle, baseline_policy, x0)
    diff = x_contract - x_baseline
    if bundle.antithetic:
        diff = 0.5 * (diff[0::2] + diff[1::2])
    n = diff.shape[0]
    mean_diff = diff.mean(axis=0)
    std_err = diff.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full_like(mean_diff, np.nan)
    base_mean = np.abs(x_baseline.mean(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(base_mean > 1e-14, 100.0 * mean_diff / base_mean, 0.0)
    terminal = mean_diff[-1] / std_err[-1] if std_err[-1] > 0 else np.sign(mean_diff[-1]) * np.inf
    d_g = schedule.model.d_g
    return ComparisonReport(
        baseline=baseline,
        times=bundle.times,
        mean_diff=mean_diff,
        rel_diff_pct=rel,
        std_err=std_err,
        green_contract=mean_green_investment(schedule),
        green_baseline=float(np.asarray(baseline_policy)[:d_g].sum()),
        terminal_confidence=float(stats.norm.cdf(terminal)),
        tax_rate=tax_rate,
        n_paths=bundle.n_paths,
    )


def compare_policies(plan: Plan, c: float, bundle: PathBundle, x0: float = 0.0) -> ComparisonReport:
    """Portfolio of the contracted investor against the investor paid the tax rate `c`."""
    schedule = _as_schedule(plan)
    tax_policy = tax_best_response(schedule.model, schedule.prefs, c)
    report = _compare(schedule, tax_policy, bundle, "tax", x0, c)
    logger.info("mean terminal gain over the tax policy %.6g (confidence %.3f)",
                report.mean_diff[-1], report.terminal_confidence)
    return report


def compare_no_contract(plan: Plan, bundle: PathBundle, x0: float = 0.0) -> ComparisonReport:
    """Portfolio of the contracted investor against the uncontracted one, `clamp(alpha)`."""
    schedule = _as_schedule(plan)
    return _compare(schedule, schedule.model.box.clamp(schedule.prefs.alpha), bundle, "no_contract", x0, None)


def write_paths_csv(
    path: Union[str, Path],
    times: np.ndarray,
    values: np.ndarray,
    max_paths: int = 100,
    provenance: Optional[dict] = None,
) -> Path:
    """Time series CSV with the mean over paths and the first `max_paths` paths."""
    frame = pd.DataFrame({"t": times, "mean": values.mean(axis=0)})
    for i in range(min(max_paths, values.shape[0])):
        frame[f"path_{i}"] = values[i]
    return utils.write_csv(path, frame, provenance)
