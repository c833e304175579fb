# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Calibration from daily prices

Inputs are a long price table `date,ticker,price` and a metadata table
`ticker,maturity_years,amount_issued[,kind]` where `kind` is `green` or
`conventional` (the green tickers may also be given explicitly).

- `build_index()` aggregates conventional bonds into the index, the geometric
  mean of their prices weighted by the amounts issued.
- `fit_affine()` fits the rate, premium and volatility coefficients of one
  series. The volatility comes from a regression of squared daily
  log-returns on the time to maturity; the total drift from a regression of
  window-averaged annualized log-returns plus half the fitted variance. The
  drift is split between the rate and `eta * sigma` by `eta_share` (0: no
  premium) unless the premium coefficients are given.
- `fit_ou()` estimates an Ornstein-Uhlenbeck rate by the exact AR(1)
  likelihood.
- `calibrate_market()` chains them into the `market` section of a
  configuration file.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np
import pandas as pd
from scipy import stats

from greencontract.base import BaseReport
from greencontract.errors import DegenerateSeries
from greencontract.errors import EmptyIntersection
from greencontract.errors import InsufficientData
from greencontract.errors import MissingInstrument
from greencontract.errors import ParseError
from greencontract.model_core import AffineCoeff


__all__ = (
    "PriceSeries",
    "AffineFit",
    "OuFit",
    "CalibrationDiagnostics",
    "read_prices",
    "read_metadata",
    "build_index",
    "fit_affine",
    "fit_ou",
    "calibrate_market",
)

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 30
VARIANCE_FLOOR = 1e-8
PERIODS_PER_YEAR = 252


@dataclass(frozen=True)
class PriceSeries:
    ticker: str
    dates: pd.DatetimeIndex
    prices: np.ndarray
    amount_issued: float = 1.0
    maturity: float = 1.0

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        dates = pd.DatetimeIndex(self.dates)
        if prices.shape != (len(dates),):
            raise ValueError(f"'{self.ticker}': one price per date is required.")
        if np.any(~np.isfinite(prices)) or np.any(prices <= 0):
            raise ValueError(f"'{self.ticker}': prices must be positive.")
        if not (dates.is_monotonic_increasing and dates.is_unique):
            raise ValueError(f"'{self.ticker}': dates must be strictly increasing.")
        if not self.amount_issued > 0:
            raise ValueError(f"'{self.ticker}': the amount issued must be positive.")
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "dates", dates)

    def __len__(self):
        return self.prices.shape[0]

    @property
    def log_returns(self) -> np.ndarray:
        return np.diff(np.log(self.prices))


###########################################################################
#                               I N P U T S                               #
###########################################################################


def _read_csv(path: Union[str, Path], columns: Sequence[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError as err:
        raise ParseError("empty file", str(path)) from err
    except pd.errors.ParserError as err:
        raise ParseError(str(err), str(path)) from err
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ParseError(f"missing columns {', '.join(missing)}", str(path), 1)
    if frame.empty:
        raise ParseError("no data rows", str(path))
    return frame


def _parse_column(frame: pd.DataFrame, column: str, path, parser):
    parsed = parser(frame[column])
    bad = parsed.isna() & frame[column].notna() | frame[column].isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        # header is line 1
        raise ParseError(f"invalid {column} {frame[column].iloc[row]!r}", str(path), row + 2)
    return parsed


def read_metadata(path: Union[str, Path]) -> pd.DataFrame:
    frame = _read_csv(path, ("ticker", "maturity_years", "amount_issued"))
    frame["maturity_years"] = _parse_column(frame, "maturity_years", path, lambda s: pd.to_numeric(s, errors="coerce"))
    frame["amount_issued"] = _parse_column(frame, "amount_issued", path, lambda s: pd.to_numeric(s, errors="coerce"))
    frame["ticker"] = frame["ticker"].str.strip()
    return frame.set_index("ticker")


def read_prices(prices_path: Union[str, Path], metadata_path: Union[str, Path]) -> Dict[str, PriceSeries]:
    """Read every series of the price table, with maturity and amount from the metadata.

    ###### Errors raised ######

    `ParseError` with the line of the first bad row, `MissingInstrument` for a
    ticker absent from the metadata.
    """
    metadata = read_metadata(metadata_path)
    frame = _read_csv(prices_path, ("date", "ticker", "price"))
    frame["date"] = _parse_column(frame, "date", prices_path, lambda s: pd.to_datetime(s, errors="coerce", format="%Y-%m-%d"))
    frame["price"] = _parse_column(frame, "price", prices_path, lambda s: pd.to_numeric(s, errors="coerce"))
    frame["ticker"] = frame["ticker"].str.strip()
    series = {}
    for ticker, group in frame.groupby("ticker", sort=False):
        if ticker not in metadata.index:
            raise MissingInstrument(ticker, str(metadata_path))
        group = group.sort_values("date")
        series[ticker] = PriceSeries(
            ticker=ticker,
            dates=pd.DatetimeIndex(group["date"]),
            prices=group["price"].to_numpy(dtype=float),
            amount_issued=float(metadata.loc[ticker, "amount_issued"]),
            maturity=float(metadata.loc[ticker, "maturity_years"]))
    logger.info("read %d price series from %s", len(series), prices_path)
    return series


###########################################################################
#                                 I N D E X                               #
###########################################################################


def _aligned(series: Sequence[PriceSeries]) -> pd.DataFrame:
    frame = pd.concat(
        [pd.Series(s.prices, index=s.dates, name=s.ticker) for s in series], axis=1, join="inner")
    if frame.empty:
        raise EmptyIntersection(f"Series {', '.join(s.ticker for s in series)} share no date.")
    return frame


def build_index(series: Sequence[PriceSeries], ticker: str = "index") -> PriceSeries:
    """Geometric mean of the series on their common dates, weighted by the amounts issued.

    The index maturity is the amount-weighted mean maturity.
    """
    if not series:
        raise ValueError("At least one series is required to build the index.")
    frame = _aligned(series)
    amounts = np.array([s.amount_issued for s in series])
    weights = amounts / amounts.sum()
    index = np.exp(np.log(frame.to_numpy()) @ weights)
    return PriceSeries(
        ticker=ticker,
        dates=frame.index,
        prices=index,
        amount_issued=float(amounts.sum()),
        maturity=float(weights @ np.array([s.maturity for s in series])))


###########################################################################
#                               F I T T I N G                             #
###########################################################################


@dataclass(frozen=True)
class AffineFit:
    rate: AffineCoeff
    premium: AffineCoeff
    vol: AffineCoeff
    drift: AffineCoeff
    n_obs: int
    clipped: int


@dataclass(frozen=True)
class OuFit:
    theta: float
    m: float
    sigma: float


def _line(x: np.ndarray, y: np.ndarray) -> AffineCoeff:
    if np.ptp(x) == 0:
        return AffineCoeff(float(np.mean(y)), 0.0)
    fit = stats.linregress(x, y)
    return AffineCoeff(float(fit.intercept), float(fit.slope))


def fit_affine(
    series: PriceSeries,
    maturity: Optional[float] = None,
    premium: Optional[AffineCoeff] = None,
    eta_share: float = 0.0,
    window: int = 10,
    periods_per_year: int = PERIODS_PER_YEAR,
) -> AffineFit:
    """Fit the affine coefficients of one series, in years of time to maturity.

    ###### Parameters ######

    - `maturity`: years from the first date to maturity (default: the series').
    - `premium`: known premium coefficients; the rate then takes the rest of
      the drift.
    - `eta_share`: otherwise, share of the drift attributed to `eta * sigma`.
    - `window`: number of returns averaged for each drift observation.

    ###### Errors raised ######

    `InsufficientData` below 30 prices.
    """
    if len(series) < MIN_OBSERVATIONS:
        raise InsufficientData(series.ticker, len(series), MIN_OBSERVATIONS)
    if not 0.0 <= eta_share <= 1.0:
        raise ValueError(f"eta_share must lie in [0, 1] (got {eta_share}).")
    maturity = series.maturity if maturity is None else maturity
    dt = 1.0 / periods_per_year
    returns = series.log_returns
    tau = maturity - np.arange(returns.shape[0]) * dt

    variance_line = _line(tau, returns ** 2 / dt)
    variance = variance_line.a + variance_line.b * tau
    clipped = int(np.sum(variance < VARIANCE_FLOOR))
    if clipped:
        logger.warning("'%s': fitted variance clipped at %g on %d dates", series.ticker, VARIANCE_FLOOR, clipped)
    sigma = np.sqrt(np.maximum(variance, VARIANCE_FLOOR))
    vol = _line(tau, sigma)

    n_windows = max(returns.shape[0] // window, 1)
    used = n_windows * window if returns.shape[0] >= window else returns.shape[0]
    size = used // n_windows
    window_tau = tau[:used].reshape(n_windows, size).mean(axis=1)
    window_drift = returns[:used].reshape(n_windows, size).sum(axis=1) / (size * dt)
    window_drift += 0.5 * (sigma[:used] ** 2).reshape(n_windows, size).mean(axis=1)
    drift = _line(window_tau, window_drift)

    drift_values = drift.a + drift.b * tau
    sigma_values = vol.a + vol.b * tau
    if premium is not None:
        rate = _line(tau, drift_values - (premium.a + premium.b * tau) * sigma_values)
    else:
        rate = AffineCoeff((1.0 - eta_share) * drift.a, (1.0 - eta_share) * drift.b)
        premium = _line(tau, eta_share * drift_values / np.where(sigma_values > 0, sigma_values, np.inf))
    logger.info("'%s' fitted on %d prices", series.ticker, len(series))
    return AffineFit(rate=rate, premium=premium, vol=vol, drift=drift, n_obs=len(series), clipped=clipped)


def fit_ou(rates: Iterable[float], dt: float = 1.0 / PERIODS_PER_YEAR) -> OuFit:
    """Exact-discretization estimate of $dr = \\theta(m - r)dt + \\sigma dW$.

    A constant series gives `theta = sigma = 0` and `m` the constant.

    ###### Errors raised ######

    `InsufficientData` below 30 observations, `DegenerateSeries` when the
    series shows no mean reversion.
    """
    rates = np.asarray(list(rates), dtype=float)
    if rates.shape[0] < MIN_OBSERVATIONS:
        raise InsufficientData("rate series", rates.shape[0], MIN_OBSERVATIONS)
    x, y = rates[:-1], rates[1:]
    if np.ptp(rates) == 0:
        logger.warning("constant rate series: no volatility, no mean reversion")
        return OuFit(theta=0.0, m=float(rates[0]), sigma=0.0)
    if np.ptp(x) == 0:
        raise DegenerateSeries("The lagged rate series has zero variance.")
    fit = stats.linregress(x, y)
    phi = fit.slope
    if not 0.0 < phi < 1.0:
        raise DegenerateSeries(f"Autoregressive coefficient {phi:.6g} shows no mean reversion.")
    theta = -np.log(phi) / dt
    m = fit.intercept / (1.0 - phi)
    residuals = y - phi * x - fit.intercept
    # maximum likelihood residual variance
    sigma = np.sqrt(np.mean(residuals ** 2) * 2.0 * theta / (1.0 - phi ** 2))
    return OuFit(theta=float(theta), m=float(m), sigma=float(sigma))


###########################################################################
#                                 M A R K E T                             #
###########################################################################


class CalibrationDiagnostics(BaseReport):
    instruments: list
    index_tickers: list
    index_weights: list
    n_common_dates: int
    min_correlation_eigenvalue: float

    class Meta:
        report_name = "calibration"


def _coefficients(fit: AffineFit) -> Dict[str, List[float]]:
    return {
        "rate": [fit.rate.a, fit.rate.b],
        "premium": [fit.premium.a, fit.premium.b],
        "vol": [fit.vol.a, fit.vol.b]}


def calibrate_market(
    series: Dict[str, PriceSeries],
    green: Sequence[str],
    horizon: float = 1.0,
    eta_share: float = 0.0,
) -> Tuple[Dict, CalibrationDiagnostics]:
    """Fit every instrument and return the `market` section and the fit diagnostics.

    Series not listed in `green` are conventional bonds and make up the
    index. Correlations are estimated on the daily log-returns of the common
    dates, ordered `(green..., conventional..., index)`.
    """
    missing = [ticker for ticker in green if ticker not in series]
    if missing:
        raise MissingInstrument(missing[0], "the price table")
    conventional = [s for ticker, s in series.items() if ticker not in set(green)]
    if not conventional:
        raise ValueError("At least one conventional bond is required to build the index.")
    index = build_index(conventional)
    ordered = [series[ticker] for ticker in green] + conventional
    returns = np.diff(np.log(_aligned([*ordered, index]).to_numpy()), axis=0)
    if returns.shape[0] < 2:
        raise InsufficientData("common dates", returns.shape[0] + 1, 3)
    corr = np.corrcoef(returns, rowvar=False)

    fits = {s.ticker: fit_affine(s, eta_share=eta_share) for s in ordered}
    index_fit = fit_affine(index, eta_share=eta_share)
    market = {
        "horizon": horizon,
        "green": [{"name": s.ticker, "maturity": s.maturity, **_coefficients(fits[s.ticker])}
                  for s in ordered[:len(green)]],
        "conventional": [{"name": s.ticker, "maturity": s.maturity, **_coefficients(fits[s.ticker])}
                         for s in conventional],
        "index": {
            "maturity": index.maturity,
            "drift": [index_fit.drift.a, index_fit.drift.b],
            "vol": [index_fit.vol.a, index_fit.vol.b]},
        "corr": np.round(corr, 12).tolist(),
    }
    amounts = np.array([s.amount_issued for s in conventional])
    diagnostics = CalibrationDiagnostics(
        instruments=[
            {"ticker": ticker, "n_obs": fit.n_obs, "clipped": fit.clipped, **_coefficients(fit)}
            for ticker, fit in fits.items()],
        index_tickers=[s.ticker for s in conventional],
        index_weights=amounts / amounts.sum(),
        n_common_dates=int(returns.shape[0] + 1),
        min_correlation_eigenvalue=float(np.linalg.eigvalsh(corr).min()),
    )
    return market, diagnostics
