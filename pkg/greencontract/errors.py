# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Exceptions

Every error raised on purpose by the library derives from `GreenContractError`.
Two families split them by cause:

- `ValidationError` (also a `ValueError`): the inputs are inconsistent with the
  model, for example a correlation matrix which is not positive semidefinite or
  a control outside the box $K$.
- `NumericalError` (also an `ArithmeticError`): the inputs are fine but a
  numerical procedure did not deliver, for example an optimizer failing the
  lattice dominance check or an HJB layer which does not converge.

`ParseError` is raised when an input file cannot be read into the expected
tabular shape. The command line interface maps these families to exit codes,
see `greencontract.cli`.
"""
from typing import Optional
from typing import Sequence


__all__ = (
    "GreenContractError",
    "ValidationError",
    "NumericalError",
    "ParseError",
    "NonPositiveVolatility",
    "NotPSD",
    "BadBox",
    "OutOfBox",
    "ZeroBetaWithTax",
    "GridMismatch",
    "UnreachableTarget",
    "InsufficientData",
    "DegenerateSeries",
    "EmptyIntersection",
    "MissingInstrument",
    "ConfigError",
    "OptimizerFailure",
    "NonConvergence",
    "UnstableStep",
    "OutOfGrid",
)


class GreenContractError(Exception):
    """Base class of the library errors."""


class ValidationError(GreenContractError, ValueError):
    """Inputs inconsistent with the model."""


class NumericalError(GreenContractError, ArithmeticError):
    """A numerical procedure failed on valid inputs."""


class ParseError(GreenContractError, ValueError):
    """An input file could not be parsed.

    `line` is the 1-based line number of the offending row when known.
    """

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


###########################################################################
#                     V A L I D A T I O N   E R R O R S                   #
###########################################################################


class NonPositiveVolatility(ValidationError):
    def __init__(self, instrument: str, t: float, value: float):
        super().__init__(
            f"Volatility of '{instrument}' is not positive at t={t:g} ({value:g}).")
        self.instrument = instrument
        self.t = t
        self.value = value


class NotPSD(ValidationError):
    def __init__(self, min_eigenvalue: float, reason: str = ""):
        message = f"Correlation matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:.3e})."
        if reason:
            message = f"{reason} {message}"
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class BadBox(ValidationError):
    def __init__(self, eps: float, b_inf: float):
        super().__init__(f"Control box must satisfy 0 < eps < b_inf (got eps={eps:g}, b_inf={b_inf:g}).")
        self.eps = eps
        self.b_inf = b_inf


class OutOfBox(ValidationError):
    def __init__(self, p: Sequence[float], eps: float, b_inf: float):
        values = ", ".join(f"{x:g}" for x in p)
        super().__init__(f"Control ({values}) is outside the box [{eps:g}, {b_inf:g}].")
        self.p = tuple(p)


class ZeroBetaWithTax(ValidationError):
    def __init__(self, indices: Sequence[int]):
        super().__init__(
            "A positive tax rate with a zero green intensity gives an unbounded response "
            f"(green bonds {', '.join(str(i + 1) for i in indices)}).")
        self.indices = tuple(indices)


class GridMismatch(ValidationError):
    pass


class UnreachableTarget(ValidationError):
    def __init__(self, target: float, bound: float):
        super().__init__(f"Green target {target:g} exceeds the largest reachable investment {bound:g}.")
        self.target = target
        self.bound = bound


class InsufficientData(ValidationError):
    def __init__(self, what: str, n_obs: int, required: int):
        super().__init__(f"'{what}' has {n_obs} observations, at least {required} are required.")
        self.n_obs = n_obs
        self.required = required


class DegenerateSeries(ValidationError):
    pass


class EmptyIntersection(ValidationError):
    pass


class MissingInstrument(ValidationError):
    def __init__(self, ticker: str, where: str):
        super().__init__(f"Ticker '{ticker}' has no entry in {where}.")
        self.ticker = ticker


class ConfigError(ValidationError):
    """Aggregated configuration problems, one per indented line."""

    def __init__(self, problems: Sequence[str]):
        super().__init__("\n" + "\n".join(f"    {problem}" for problem in problems))
        self.problems = tuple(problems)


###########################################################################
#                      N U M E R I C A L   E R R O R S                    #
###########################################################################


class OptimizerFailure(NumericalError):
    def __init__(self, message: str, node: Optional[int] = None):
        if node is not None:
            message = f"node {node}: {message}"
        super().__init__(message)
        self.node = node


class NonConvergence(NumericalError):
    def __init__(self, layer: int, iterations: int, residual: float):
        super().__init__(
            f"Fixed point on layer {layer} did not converge after {iterations} iterations "
            f"(last change {residual:.3e}).")
        self.layer = layer
        self.iterations = iterations
        self.residual = residual


class UnstableStep(NumericalError):
    def __init__(self, layer: int, max_value: float):
        super().__init__(f"Value function became positive on layer {layer} (max {max_value:.3e}).")
        self.layer = layer
        self.max_value = max_value


class OutOfGrid(NumericalError):
    def __init__(self, n_points: int):
        super().__init__(f"{n_points} path states left the grid and were clamped.")
        self.n_points = n_points
