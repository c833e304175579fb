# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Command line interface

```text
greencontract calibrate --prices prices.csv --metadata metadata.csv -o market.yaml
greencontract optimize config.yaml [--sweep kappa=0,0.4,0.8]
greencontract simulate config.yaml
greencontract compare-tax config.yaml
greencontract replicate config.yaml [--expanded]
greencontract hjb config.yaml
```

Every command but `calibrate` reads a run configuration (see
`greencontract.config`), accepts `--set section.key=value` overrides and
`--out DIR`, and writes its outputs to the run's output directory. JSON outputs
are `greencontract.document.OutputDocument`s carrying the configuration hash
and the seed; `--provenance FILE` refuses to run when `FILE` was produced with
another configuration.

Exit codes: 0 on success, 2 for invalid inputs, 3 for numerical failures and
4 for unreadable files.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional
from typing import Sequence

import numpy as np
import yaml

from greencontract import calibration
from greencontract import contract
from greencontract import hjb
from greencontract import mc_engine
from greencontract import principal
from greencontract import utils
from greencontract.base import create_report
from greencontract.config import DEFAULTS
from greencontract.config import RunConfig
from greencontract.config import build_config
from greencontract.config import load_config
from greencontract.document import OutputDocument
from greencontract.errors import NumericalError
from greencontract.errors import ParseError
from greencontract.errors import ValidationError
from greencontract.model_core import IndexationMode
from greencontract.principal import IncentiveSchedule


__all__ = ("main", "build_parser", "SimulationReport", "CertaintyGapReport")

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

SimulationReport = create_report(
    "SimulationReport",
    {"report_name": "simulation", "meta_attributes": {"n_paths", "n_steps"}},
    agent_value=float,
    agent_std_err=float,
    agent_target=float,
    principal_value=float,
    principal_std_err=float,
    principal_target=float,
    n_paths=Optional[int],
    n_steps=Optional[int],
)

CertaintyGapReport = create_report(
    "CertaintyGapReport",
    {"report_name": "certainty_gap"},
    exact=float,
    averaged=float,
    gap=float,
    exact_std_err=float,
    averaged_std_err=float,
)


###########################################################################
#                               H E L P E R S                             #
###########################################################################


def _resolve(args) -> RunConfig:
    config = load_config(args.config, args.set or ())
    if args.out is not None:
        config = config.with_overrides([f"run.output_dir={args.out}"])
    if args.provenance is not None:
        document = json.loads(Path(args.provenance).read_text())
        OutputDocument.check_provenance(document, config.hash)
    return config


def _schedule(config: RunConfig, mode: Optional[IndexationMode] = None) -> IncentiveSchedule:
    run = config.run
    return principal.solve_schedule(
        config.market_model(), config.investor_prefs(), config.gov_prefs(),
        M=run["grid_M"], mode=mode or config.mode, seed=run["seed"],
        n_random_starts=run["n_random_starts"], gamma_zero=run["gamma_zero_contract"])


def _bundle(config: RunConfig, ou: Optional[hjb.OuRate] = None, n_steps: Optional[int] = None):
    run = config.run
    return mc_engine.simulate_market(
        config.market_model(), run["n_paths"], n_steps or run["n_steps"], run["seed"],
        antithetic=run["antithetic"], ou=ou)


def _write(config: RunConfig, name: str, data) -> Path:
    path = OutputDocument(data, config.hash, config.run["seed"]).write(config.output_dir / name)
    logger.info("wrote %s", path)
    return path


def _provenance(config: RunConfig) -> dict:
    return {"config_hash": config.hash, "seed": config.run["seed"]}


def _write_table(config: RunConfig, name: str, frame) -> Path:
    path = utils.write_csv(config.output_dir / name, frame, _provenance(config))
    logger.info("wrote %s", path)
    return path


def _certainty_equivalent(values: np.ndarray, nu: float) -> float:
    return float(-np.log(-values) / nu)


###########################################################################
#                               C O M M A N D S                           #
###########################################################################


def cmd_calibrate(args) -> int:
    series = calibration.read_prices(args.prices, args.metadata)
    green = list(args.green or ())
    if not green:
        metadata = calibration.read_metadata(args.metadata)
        if "kind" in metadata.columns:
            green = [t for t, kind in metadata["kind"].items() if str(kind).strip().lower() == "green"]
    if not green:
        raise ValidationError("No green bond given (use --green or a 'kind' column in the metadata).")
    market, diagnostics = calibration.calibrate_market(series, green, args.horizon, args.eta_share)
    n = len(market["green"]) + len(market["conventional"]) + 1
    if args.template is not None:
        tree = yaml.safe_load(Path(args.template).read_text()) or {}
    else:
        tree = {
            "investor": {"alpha": [0.2] * n, "beta": [0.4] * n, "gamma": 1.0},
            "government": {"G": [0.0] * len(green), "kappa": 0.0, "nu": 1.0},
            "run": dict(DEFAULTS["run"]),
        }
    tree["market"] = market
    config = build_config(tree, explicit_sections=("market", "investor", "government", "run"))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(config.to_yaml())
    report_path = OutputDocument(diagnostics, config.hash).write(out.with_suffix(".calibration.json"))
    for instrument in diagnostics.instruments:
        print(f"{instrument['ticker']}: {instrument['n_obs']} observations, "
              f"vol {instrument['vol']}, clipped {instrument['clipped']}")
    print(f"minimum correlation eigenvalue {diagnostics.min_correlation_eigenvalue:.3e}")
    print(f"configuration written to {out} ({config.hash}), diagnostics to {report_path}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    config = _resolve(args)
    run = config.run
    if args.sweep is not None:
        parameter, _, raw = args.sweep.partition("=")
        values = [float(v) for v in raw.split(",") if v.strip()]
        if not values:
            raise ValidationError(f"Empty sweep {args.sweep!r} (expected parameter=v1,v2,...).")
        frame = principal.sensitivity_sweep(
            config.market_model(), config.investor_prefs(), config.gov_prefs(), parameter.strip(), values,
            M=run["grid_M"], mode=config.mode, seed=run["seed"], gamma_zero=run["gamma_zero_contract"])
        _write_table(config, "sweep.csv", frame)
        print(frame.to_string(index=False))
        return EXIT_OK
    schedule = _schedule(config)
    averaged = principal.average_schedule(schedule)
    summary = principal.summarize(schedule, averaged)
    schedule.to_csv(config.output_dir / "schedule.csv", _provenance(config))
    _write(config, "summary.json", summary)
    print(f"certainty equivalent {summary.certainty_equivalent:.6g} (averaged contract "
          f"{summary.averaged_certainty_equivalent:.6g})")
    print(f"mean z_X {summary.z_x_mean:.6g}, mean green holding {summary.green_mean:.6g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = _resolve(args)
    schedule = _schedule(config)
    bundle = _bundle(config)
    x0 = config.run["x0"]
    agent_value, agent_err = mc_engine.estimate_agent_value(schedule, bundle, schedule.y0)
    principal_value, principal_err = mc_engine.estimate_principal_value(schedule, bundle, x0)
    report = SimulationReport(
        agent_value=agent_value,
        agent_std_err=agent_err,
        agent_target=-float(np.exp(-schedule.prefs.gamma * schedule.y0)),
        principal_value=principal_value,
        principal_std_err=principal_err,
        principal_target=principal.principal_value(schedule),
        n_paths=bundle.n_paths,
        n_steps=bundle.n_steps,
    )
    x = mc_engine.simulate_portfolio(bundle, schedule, x0)
    paths = contract.accumulate_contract(schedule, bundle, schedule.y0)
    provenance = _provenance(config)
    mc_engine.write_paths_csv(config.output_dir / "portfolio_paths.csv", bundle.times, x, provenance=provenance)
    mc_engine.write_paths_csv(config.output_dir / "contract_paths.csv", bundle.times, paths.y, provenance=provenance)
    _write(config, "simulation.json", report)
    print(f"agent value {agent_value:.6g} +- {agent_err:.2g} (target {report.agent_target:.6g})")
    print(f"principal value {principal_value:.6g} +- {principal_err:.2g} (target {report.principal_target:.6g})")
    return EXIT_OK


def cmd_compare_tax(args) -> int:
    config = _resolve(args)
    schedule = _schedule(config)
    target = mc_engine.mean_green_investment(schedule)
    c = mc_engine.calibrate_tax_rate(schedule.model, schedule.prefs, target)
    bundle = _bundle(config)
    x0 = config.run["x0"]
    tax = mc_engine.compare_policies(schedule, c, bundle, x0)
    no_contract = mc_engine.compare_no_contract(schedule, bundle, x0)
    _write_table(config, "comparison.csv", tax.to_frame())
    _write(config, "comparison.json", [tax, no_contract])
    print(f"tax rate {c:.6g} matching the mean green holding {target:.6g}")
    print(f"terminal gain over the tax policy {tax.mean_diff[-1]:.6g} "
          f"({tax.rel_diff_pct[-1]:.3g}%, confidence {tax.terminal_confidence:.3f})")
    print(f"terminal gain over no contract {no_contract.mean_diff[-1]:.6g}")
    return EXIT_OK


def cmd_replicate(args) -> int:
    config = _resolve(args)
    # swaps and log-contracts are written on prices
    schedule = _schedule(config, IndexationMode.PRICE)
    averaged = principal.average_schedule(schedule)
    report = contract.replication_positions(averaged)
    if args.expanded:
        report = contract.expand_swaps(report)
    documents = [report]
    if not args.no_gap:
        bundle = _bundle(config)
        x0 = config.run["x0"]
        nu = schedule.gov.nu
        exact, exact_err = mc_engine.estimate_principal_value(schedule, bundle, x0)
        approx, approx_err = mc_engine.estimate_principal_value(averaged, bundle, x0)
        gap = CertaintyGapReport(
            exact=_certainty_equivalent(exact, nu),
            averaged=_certainty_equivalent(approx, nu),
            gap=_certainty_equivalent(exact, nu) - _certainty_equivalent(approx, nu),
            exact_std_err=exact_err,
            averaged_std_err=approx_err,
        )
        documents.append(gap)
        print(f"certainty equivalent gap exact - averaged: {gap.gap:.6g}")
    _write(config, "replication.json", documents if len(documents) > 1 else report)
    print(f"coupon {report.coupon:.6g}, {len(report.positions)} positions")
    for position in report.positions:
        print(f"    {position['kind']:<16} {'/'.join(position['underliers']):<24} {position['size']:+.6g}")
    return EXIT_OK


def cmd_hjb(args) -> int:
    config = _resolve(args)
    settings = config.hjb
    ou = config.ou_rate()
    grid = config.hjb_grid()
    model, prefs, gov = config.market_model(), config.investor_prefs(), config.gov_prefs()
    schedule = principal.solve_schedule(
        model, prefs, gov, M=grid.n_t, mode=IndexationMode.RISK_SOURCE, seed=config.run["seed"],
        n_random_starts=config.run["n_random_starts"])
    solution = hjb.solve_hjb(
        model, prefs, gov, ou, grid, schedule,
        tolerance=settings["tolerance"], max_iterations=settings["max_iterations"],
        damping=settings["damping"], seed=config.run["seed"])
    solution.save(config.output_dir / "hjb_values.bin")
    _write_table(config, "hjb_rate_slice.csv", solution.slice_frame(0, "r_g"))
    bundle = _bundle(config, ou, n_steps=grid.n_t * max(1, config.run["n_steps"] // grid.n_t))
    policy = hjb.extract_policy(solution, bundle, config.run["x0"])
    degenerate = ou.sigma_r == 0 and (ou.theta == 0 or ou.initial_rate(model) == ou.m)
    diagnostics = hjb.diagnose(solution, grid, schedule if degenerate else None, policy if degenerate else None)
    _write(config, "hjb.json", diagnostics)
    print(f"U(0) {diagnostics.u0:.6g}, certainty equivalent {diagnostics.certainty_equivalent:.6g}")
    print(f"iterations per layer {diagnostics.iterations}, clamped states {policy.n_clamped}")
    if diagnostics.policy_match is not None:
        verdict = "PASS" if diagnostics.policy_match else "FAIL"
        print(f"degenerate limit: policy relative error {diagnostics.policy_relative_error:.3e} [{verdict}]")
    return EXIT_OK


###########################################################################
#                                 P A R S E R                             #
###########################################################################


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greencontract", description="Optimal incentive contracts for green bond portfolios.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    commands = parser.add_subparsers(dest="command", required=True)

    calibrate = commands.add_parser("calibrate", help="fit the market section from price histories")
    calibrate.add_argument("--prices", required=True, help="CSV with columns date, ticker, price")
    calibrate.add_argument("--metadata", required=True, help="CSV with columns ticker, maturity_years, amount_issued")
    calibrate.add_argument("--green", action="append", help="ticker of a green bond (repeatable)")
    calibrate.add_argument("--horizon", type=float, default=1.0)
    calibrate.add_argument("--eta-share", type=float, default=0.0, help="share of the drift slope given to the premium")
    calibrate.add_argument("--template", help="configuration whose other sections are kept")
    calibrate.add_argument("-o", "--output", required=True, help="configuration file to write")
    calibrate.set_defaults(handler=cmd_calibrate)

    def run_command(name, handler, help_text):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("config", help="YAML run configuration")
        sub.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a value")
        sub.add_argument("--out", help="output directory (overrides run.output_dir)")
        sub.add_argument("--provenance", metavar="FILE", help="refuse to run if FILE has another configuration hash")
        sub.set_defaults(handler=handler)
        return sub

    optimize = run_command("optimize", cmd_optimize, "solve the optimal incentive schedule")
    optimize.add_argument("--sweep", metavar="PARAMETER=V1,V2,...", help="re-solve for several values of a parameter")
    run_command("simulate", cmd_simulate, "Monte Carlo check of the agent's and the principal's values")
    run_command("compare-tax", cmd_compare_tax, "compare the contract with a matched tax incentive")
    replicate = run_command("replicate", cmd_replicate, "static replication of the averaged contract")
    replicate.add_argument("--expanded", action="store_true", help="rewrite swaps with log-contracts")
    replicate.add_argument("--no-gap", action="store_true", help="skip the Monte Carlo certainty equivalent gap")
    run_command("hjb", cmd_hjb, "solve the stochastic green rate extension")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except ParseError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
