# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Run configuration

A run is described by one YAML file with five sections:

```yaml
market:
  horizon: 1.0
  box: {eps: 0.01, b_inf: 10.0}
  green:
    - {name: green1, maturity: 19.73, rate: [0.21, 0.79], premium: [0.78, 0.07], vol: [0.41, 0.31]}
  conventional:
    - {name: conv1, maturity: 6.06, rate: [0.11, 0.98], premium: [0.15, 0.56], vol: [0.67, 0.72]}
  index: {maturity: 18.29, drift: [0.59, 0.98], vol: [0.16, 0.24]}
  corr: [[1.0, 0.2, 0.8], [0.2, 1.0, 0.7], [0.8, 0.7, 1.0]]
investor: {alpha: [0.2, 0.2, 0.5], beta: [0.4, 0.4, 0.4], gamma: 1.0}
government: {G: [0.0], kappa: 0.0, nu: 1.0}
run: {seed: 7, n_paths: 10000, n_steps: 50, grid_M: 10, mode: price}
hjb:
  ou: {theta: 0.4, m: 0.04, sigma_r: 0.02}
  grid: {n_t: 10, n_x: 40, n_w: 20, n_r: 10}
```

Keys may be written in camelCase or snake_case. The `run` and `hjb` sections
are optional and filled with `DEFAULTS`. `--set section.key=value` overrides
are applied with `apply_overrides()` before validation. Every problem found
while building the domain objects is reported at once in a `ConfigError`.

`config_hash()` fingerprints the resolved configuration; every output of the
command line interface carries it.
"""
import copy
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any
from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Union

import numpy as np
import yaml

from greencontract import utils
from greencontract.errors import ConfigError
from greencontract.errors import GreenContractError
from greencontract.errors import ParseError
from greencontract.model_core import AffineCoeff
from greencontract.model_core import BondCoeffs
from greencontract.model_core import ControlBox
from greencontract.model_core import GovPrefs
from greencontract.model_core import IndexCoeffs
from greencontract.model_core import IndexationMode
from greencontract.model_core import InvestorPrefs
from greencontract.model_core import MarketModel
from greencontract.model_core import as_vector
from greencontract.model_core import validate


__all__ = (
    "DEFAULTS",
    "RunConfig",
    "load_config",
    "build_config",
    "apply_overrides",
    "config_hash",
    "reference_config_path",
)

logger = logging.getLogger(__name__)

SECTIONS = ("market", "investor", "government", "run", "hjb")

DEFAULTS = {
    "run": {
        "seed": 0,
        "n_paths": 10000,
        "n_steps": 50,
        "grid_M": 10,
        "mode": "risk_source",
        "kappa_in_H": True,
        "risk_charge": "nu",
        "antithetic": False,
        "x0": 0.0,
        "gamma_zero_contract": False,
        "n_random_starts": 2,
        "output_dir": "out",
    },
    "hjb": {
        "ou": {"theta": 0.4, "m": 0.04, "sigma_r": 0.02, "r0": None},
        "grid": {"n_t": 10, "n_x": 40, "n_w": 20, "n_r": 10},
        "tolerance": 1e-6,
        "max_iterations": 20,
        "damping": 0.5,
    },
}

# keys whose case is meaningful
_VERBATIM_KEYS = {"G", "grid_M", "kappa_in_H"}


def reference_config_path() -> Path:
    """Path of the shipped configuration with the reference coefficients."""
    return Path(__file__).parent / "configs" / "reference.yaml"


###########################################################################
#                          T R E E   H A N D L I N G                      #
###########################################################################


def _normalize_keys(tree: Any) -> Any:
    if isinstance(tree, dict):
        return {
            (key if key in _VERBATIM_KEYS else utils.camel_to_snake_case(str(key))): _normalize_keys(value)
            for key, value in tree.items()}
    if isinstance(tree, list):
        return [_normalize_keys(value) for value in tree]
    return tree


def _merge_defaults(tree: Dict, defaults: Dict) -> Dict:
    merged = copy.deepcopy(defaults)
    for key, value in tree.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge_defaults(value, merged[key])
        else:
            merged[key] = value
    return merged


def apply_overrides(tree: Dict, overrides: Iterable[str]) -> Dict:
    """Return a copy of `tree` where every `"section.key=value"` override is set.

    Values are parsed as YAML scalars or flow collections, so `run.seed=3`
    gives an integer and `government.G=[3.0]` a list. Nested keys are
    separated by dots.
    """
    tree = copy.deepcopy(tree)
    problems = []
    for override in overrides:
        path, sep, raw = override.partition("=")
        if not sep or not path:
            problems.append(f"Malformed override '{override}' (expected section.key=value).")
            continue
        keys = [k if k in _VERBATIM_KEYS else utils.camel_to_snake_case(k) for k in path.strip().split(".")]
        if keys[0] not in SECTIONS:
            problems.append(f"Unknown section '{keys[0]}' in override '{override}'.")
            continue
        if len(keys) < 2:
            problems.append(f"Override '{override}' must name a key inside the section.")
            continue
        node = tree.setdefault(keys[0], {})
        for key in keys[1:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = yaml.safe_load(raw)
    if problems:
        raise ConfigError(problems)
    return tree


def config_hash(tree: Dict) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON dump of `tree`.

    The output directory does not take part in the fingerprint.
    """
    tree = copy.deepcopy(tree)
    tree.get("run", {}).pop("output_dir", None)
    canonical = json.dumps(utils.to_builtin(tree), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


###########################################################################
#                           R U N   C O N F I G                           #
###########################################################################


@dataclass(frozen=True)
class RunConfig:
    """A resolved configuration tree and the builders of the domain objects."""

    tree: Dict
    path: Optional[Path] = None
    explicit_sections: frozenset = frozenset(SECTIONS)

    @property
    def run(self) -> Dict:
        return self.tree["run"]

    @property
    def hjb(self) -> Dict:
        return self.tree["hjb"]

    @property
    def hash(self) -> str:
        return config_hash(self.tree)

    @property
    def mode(self) -> IndexationMode:
        return IndexationMode(self.run["mode"])

    @property
    def output_dir(self) -> Path:
        return Path(self.run["output_dir"])

    def market_model(self) -> MarketModel:
        market = self.tree["market"]
        box = market.get("box", {})

        def bond(entry):
            return BondCoeffs(
                rate=AffineCoeff(*entry["rate"]),
                premium=AffineCoeff(*entry["premium"]),
                vol=AffineCoeff(*entry["vol"]))

        green = market["green"]
        conv = market.get("conventional", [])
        index = market["index"]
        return MarketModel(
            horizon=float(market.get("horizon", 1.0)),
            green_maturities=tuple(float(e["maturity"]) for e in green),
            conv_maturities=tuple(float(e["maturity"]) for e in conv),
            index_maturity=float(index["maturity"]),
            green=tuple(bond(e) for e in green),
            conv=tuple(bond(e) for e in conv),
            index=IndexCoeffs(drift=AffineCoeff(*index["drift"]), vol=AffineCoeff(*index["vol"])),
            corr=np.asarray(market["corr"], dtype=float),
            box=ControlBox(eps=float(box.get("eps", 0.01)), b_inf=float(box.get("b_inf", 10.0))),
            mode=self.mode,
            green_names=tuple(e.get("name", f"green{i + 1}") for i, e in enumerate(green)),
            conv_names=tuple(e.get("name", f"conv{i + 1}") for i, e in enumerate(conv)),
        )

    def investor_prefs(self) -> InvestorPrefs:
        investor = self.tree["investor"]
        n = len(self.tree["market"]["green"]) + len(self.tree["market"].get("conventional", [])) + 1
        return InvestorPrefs(
            alpha=as_vector(investor["alpha"], n, "investor.alpha"),
            beta=as_vector(investor["beta"], n, "investor.beta"),
            gamma=float(investor.get("gamma", 1.0)))

    def gov_prefs(self) -> GovPrefs:
        government = self.tree["government"]
        d_g = len(self.tree["market"]["green"])
        return GovPrefs(
            G=as_vector(government.get("G", 0.0), d_g, "government.G"),
            kappa=float(government.get("kappa", 0.0)),
            nu=float(government.get("nu", 1.0)),
            kappa_in_H=bool(self.run["kappa_in_H"]),
            risk_charge=str(self.run["risk_charge"]))

    def ou_rate(self):
        from greencontract.hjb import OuRate

        ou = self.hjb["ou"]
        return OuRate(
            theta=float(ou["theta"]), m=float(ou["m"]), sigma_r=float(ou["sigma_r"]),
            r0=None if ou.get("r0") is None else float(ou["r0"]))

    def hjb_grid(self):
        from greencontract.hjb import HjbGrid

        grid = self.hjb["grid"]
        return HjbGrid(
            n_t=int(grid["n_t"]), n_x=int(grid["n_x"]), n_w=int(grid["n_w"]), n_r=int(grid["n_r"]))

    def with_overrides(self, overrides: Iterable[str]) -> "RunConfig":
        return build_config(apply_overrides(self.tree, overrides), self.path, self.explicit_sections)

    def to_tree(self) -> Dict:
        return copy.deepcopy(self.tree)

    def to_yaml(self) -> str:
        """Dump the sections given explicitly; the others reload from `DEFAULTS`."""
        tree = {k: v for k, v in self.tree.items() if k in self.explicit_sections}
        return yaml.safe_dump(utils.to_builtin(tree), sort_keys=False)


def _check(config: RunConfig) -> List[str]:
    problems = []
    tree = config.tree
    for section in ("market", "investor", "government"):
        if not isinstance(tree.get(section), dict):
            problems.append(f"Missing section '{section}'.")
    unknown = set(tree) - set(SECTIONS)
    problems.extend(f"Unknown section '{name}'." for name in sorted(unknown))
    if problems:
        return problems

    run = config.run
    for key in ("n_paths", "n_steps", "grid_M"):
        if not isinstance(run[key], int) or run[key] < 1:
            problems.append(f"run.{key} must be a positive integer (got {run[key]!r}).")
    if not problems and run["n_steps"] % run["grid_M"]:
        problems.append(
            f"run.n_steps ({run['n_steps']}) must be a multiple of run.grid_M ({run['grid_M']}).")
    if run["mode"] not in {m.value for m in IndexationMode}:
        problems.append(f"run.mode must be 'risk_source' or 'price' (got {run['mode']!r}).")
    if run["antithetic"] and isinstance(run["n_paths"], int) and run["n_paths"] % 2:
        problems.append("run.n_paths must be even with antithetic variates.")

    builders = (
        ("market", config.market_model),
        ("investor", config.investor_prefs),
        ("government", config.gov_prefs))
    built = {}
    for section, builder in builders:
        try:
            built[section] = builder()
        except (KeyError, TypeError) as err:
            problems.append(f"Section '{section}' is incomplete or malformed ({err!s}).")
        except (ValueError, GreenContractError) as err:
            problems.extend(f"{section}: {line.strip()}" for line in str(err).strip().splitlines())
    if "market" in built:
        try:
            validate(built["market"])
        except GreenContractError as err:
            problems.append(f"market: {err}")
        if built["market"].d_g != 1 and "hjb" in config.explicit_sections:
            problems.append("hjb: the stochastic-rate solver supports exactly one green bond.")

    hjb = config.hjb
    if hjb["ou"]["theta"] < 0 or hjb["ou"]["sigma_r"] < 0:
        problems.append("hjb.ou: theta and sigma_r must be nonnegative.")
    grid = hjb["grid"]
    if int(grid["n_t"]) < 1:
        problems.append("hjb.grid.n_t must be a positive integer.")
    if any(int(grid[key]) < 4 for key in ("n_x", "n_w", "n_r")):
        problems.append("hjb.grid: every axis needs at least 4 nodes.")
    return problems


def build_config(
    tree: Dict, path: Optional[Path] = None, explicit_sections: Optional[Iterable[str]] = None,
) -> RunConfig:
    """Normalize, complete with `DEFAULTS` and validate a configuration tree.

    ###### Errors raised ######

    `ConfigError` listing every problem found.
    """
    if not isinstance(tree, dict):
        raise ConfigError(["The configuration must be a mapping of sections."])
    tree = _normalize_keys(tree)
    config = RunConfig(
        _merge_defaults(tree, DEFAULTS),
        Path(path) if path is not None else None,
        frozenset(tree if explicit_sections is None else explicit_sections))
    problems = _check(config)
    if problems:
        raise ConfigError(problems)
    logger.debug("configuration %s resolved", config.hash)
    return config


def load_config(path: Union[str, Path], overrides: Iterable[str] = ()) -> RunConfig:
    """Read, override and validate the YAML configuration at `path`."""
    path = Path(path)
    try:
        tree = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        line = None
        mark = getattr(err, "problem_mark", None)
        if mark is not None:
            line = mark.line + 1
        raise ParseError(f"invalid YAML ({getattr(err, 'problem', err)})", str(path), line) from err
    if tree is None:
        raise ParseError("empty configuration file", str(path))
    tree = _normalize_keys(tree)
    return build_config(apply_overrides(tree, overrides), path)
