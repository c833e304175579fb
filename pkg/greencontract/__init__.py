# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # greencontract - Incentive contracts for green bond portfolios

> **WIP:** this library is still in early development phase.

`greencontract` computes the remuneration a government (the Principal) should
offer an investor (the Agent) so that the investor's bond portfolio, split
between green bonds, conventional bonds and an index of conventional bonds,
serves the government's objectives. The contract is indexed on what the
government observes: the portfolio value, the green bonds, the index and their
quadratic variations.

This library is provided under the [MIT License](https://pycolore.mit-license.org).

## Basics

A market and two sets of preferences make up a problem. They are usually read
from a YAML configuration (see `greencontract.config`):

```python
import greencontract

config = greencontract.load_config(greencontract.reference_config_path())
model = config.market_model()
prefs = config.investor_prefs()
gov = config.gov_prefs()
```

Without a contract, the investor holds its preferred allocation clamped into
the admissible box:

```python
greencontract.best_response(model, prefs, 0.0, greencontract.Incentives.zeros(3)).p_hat
# array([0.2, 0.2, 0.3, 0.5])
```

The optimal contract is a schedule of incentives on a time grid; its
certainty equivalent is the integral of the government's pointwise value:

```python
schedule = greencontract.solve_schedule(model, prefs, gov, M=10)
greencontract.certainty_equivalent(schedule)
schedule.to_frame()  # t, z_X, z_green, z_index, g_..., pi_..., h_obs, script_H
```

## Checking a contract by simulation

```python
bundle = greencontract.simulate_market(model, n_paths=10000, n_steps=50, seed=7)
greencontract.estimate_agent_value(schedule, bundle)      # close to -1
greencontract.estimate_principal_value(schedule, bundle)  # close to principal_value(schedule)
```

`greencontract.mc_engine` also compares the contract with a tax incentive
matched on the green investment, and `greencontract.contract` turns the
time-averaged contract into a static portfolio of log-contracts and
variance/covariance swaps.

## Reports

Every result written to disk is a report (see `greencontract.base`) wrapped
in a `greencontract.document.OutputDocument` that records the configuration
hash and the seed of the run.

## Command line

The `greencontract` command exposes the whole pipeline; see
`greencontract.cli`.
"""


from .agent import Incentives
from .agent import best_response
from .agent import h_obs
from .agent import tax_best_response
from .base import BaseReport
from .config import RunConfig
from .config import load_config
from .config import reference_config_path
from .contract import accumulate_contract
from .contract import replication_positions
from .document import OutputDocument
from .mc_engine import calibrate_tax_rate
from .mc_engine import compare_policies
from .mc_engine import estimate_agent_value
from .mc_engine import estimate_principal_value
from .mc_engine import simulate_market
from .model_core import GovPrefs
from .model_core import InvestorPrefs
from .model_core import MarketModel
from .principal import average_schedule
from .principal import certainty_equivalent
from .principal import principal_value
from .principal import script_H
from .principal import solve_schedule
