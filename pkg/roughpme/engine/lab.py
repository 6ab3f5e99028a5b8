"""
Lab - Command-line front end: simulate, characteristics and experiment
"""

import argparse
import csv
import logging
import os
from pathlib import Path
from typing import List, Optional

import numpy as np

from .. import __version__
from ..domain.geometry import Domain
from ..experiments.report import write_json, write_reports, write_snapshots_csv
from ..experiments.scenarios import Scenario, prepare
from ..signals.path_io import read_path_csv
from ..signals.roughpath import sample_brownian
from ..systems import pde
from ..systems.characteristics import CharState, FlowParams, flow_trajectory
from ..systems.coefficients import build_coefficient
from .config import load_config
from .constants import (
    DEFAULT_FLOW_DT, DEFAULT_OUTPUT_DIR, EXIT_CHECK_FAILED, EXIT_CONFIG_ERROR, EXIT_OK, OUTPUT_DIR_ENV,
)
from .errors import ConfigError, RoughPMEError
from .scenario_manager import ScenarioManager

logger = logging.getLogger(__name__)

CHARACTERISTICS_COLUMNS = ("x0", "xi0", "t", "X", "Xi", "detJ")


def setup_logging(verbose: bool = False):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def output_dir(explicit: Optional[str] = None) -> Path:
    return Path(explicit or os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR))


class Lab:
    """Parses the command line and dispatches to one subcommand"""

    def __init__(self):
        self.parser = self._build_parser()
        self.manager = ScenarioManager()

    def _build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog="roughpme",
            description="Simulate porous medium and fast diffusion equations with rough conservative noise")
        parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
        parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
        parser.add_argument("--out", help=f"Output directory (default: ${OUTPUT_DIR_ENV} or '{DEFAULT_OUTPUT_DIR}')")
        commands = parser.add_subparsers(dest="command", required=True)

        simulate = commands.add_parser("simulate", help="Solve once and write snapshots and a stability report")
        simulate.add_argument("config", help="TOML experiment document")
        simulate.add_argument("--seed", type=int, help="Path seed (default: first configured seed)")
        simulate.set_defaults(handler=self.simulate)

        chars = commands.add_parser("characteristics",
                                    help="Tabulate forward characteristics on a grid of start points")
        chars.add_argument("--coefficient", default="basis-product",
                           choices=("zero", "linear-in-xi", "basis-product"))
        chars.add_argument("--sigma", default="identity")
        chars.add_argument("--basis", nargs="+", default=["sin2_1"])
        chars.add_argument("--amplitude", type=float, default=1.0)
        chars.add_argument("--lo", type=float, default=0.0)
        chars.add_argument("--hi", type=float, default=1.0)
        source = chars.add_mutually_exclusive_group()
        source.add_argument("--seed", type=int, default=0, help="Seed of a Brownian driver")
        source.add_argument("--path-file", help="CSV driver 't, z1..zn'")
        chars.add_argument("--steps", type=int, default=256, help="Segments of the Brownian driver")
        chars.add_argument("--t0", type=float, default=0.0)
        chars.add_argument("--horizon", type=float, default=1.0)
        chars.add_argument("--dt", type=float, default=DEFAULT_FLOW_DT)
        chars.add_argument("--points", type=int, default=8, help="Start points per axis")
        chars.add_argument("--xi-max", type=float, default=1.0)
        chars.add_argument("--records", type=int, default=11, help="Recorded times per trajectory")
        chars.set_defaults(handler=self.characteristics)

        experiment = commands.add_parser("experiment", help="Run scenario documents and write reports")
        experiment.add_argument("configs", nargs="+", help="TOML experiment documents")
        experiment.set_defaults(handler=self.experiment)
        return parser

    def simulate(self, args) -> int:
        scenario = Scenario.from_config(load_config(args.config))
        ctx = prepare(scenario, args.seed)
        cfg = ctx.config
        traj = pde.solve(ctx.u0, cfg.pde.T, ctx.params, ctx.driver, ctx.coefficient, ctx.record)
        target = output_dir(args.out) / scenario.id
        write_snapshots_csv(traj, target / "snapshots.csv")
        write_json({'stability': pde.stability_report(traj).to_dict(),
                    'dt': ctx.params.dt, 'steps': traj.steps,
                    'provenance': ctx.report.provenance}, target / "stability.json")
        return EXIT_OK

    def characteristics(self, args) -> int:
        dom = Domain(args.lo, args.hi, 2 * args.points)
        c = build_coefficient(args.coefficient, dom, sigma=args.sigma, basis=args.basis,
                              amplitude=args.amplitude)
        t1 = args.t0 + args.horizon
        if args.path_file:
            path = read_path_csv(args.path_file)
        else:
            path = sample_brownian(args.seed, c.n, args.steps, t1)
        xs = dom.lo + (np.arange(args.points) + 0.5) * dom.length / args.points
        xis = np.linspace(-args.xi_max, args.xi_max, args.points)
        x0, xi0 = (a.ravel() for a in np.meshgrid(xs, xis, indexing='ij'))
        traj = flow_trajectory(CharState.start(x0, xi0, with_jacobian=True), args.t0, t1, path, c,
                               FlowParams(dt=args.dt, with_jacobian=True),
                               record_times=np.linspace(args.t0, t1, args.records))
        det = np.linalg.det(traj.jac)

        target = output_dir(args.out) / "characteristics.csv"
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(CHARACTERISTICS_COLUMNS)
            for k, t in enumerate(traj.times):
                for j in range(x0.size):
                    writer.writerow([repr(float(x0[j])), repr(float(xi0[j])), repr(float(t)),
                                     repr(float(traj.x[k, j])), repr(float(traj.xi[k, j])),
                                     repr(float(det[k, j]))])
        logger.info("Wrote %d characteristic(s) at %d time(s) to %s", x0.size, traj.times.size, target)
        return EXIT_OK

    def experiment(self, args) -> int:
        scenarios = [Scenario.from_config(load_config(path)) for path in args.configs]
        passed = True
        for scenario in scenarios:
            reports = self.manager.run(scenario)
            write_reports(reports, output_dir(args.out) / scenario.id)
            good = sum(report.passed for report in reports)
            status = "all checks passed" if good == len(reports) else "FAILED"
            print(f"{scenario.id}: {good}/{len(reports)} seed(s), {status}")
            passed = passed and good == len(reports)
        return EXIT_OK if passed else EXIT_CHECK_FAILED

    def run(self, argv: Optional[List[str]] = None) -> int:
        args = self.parser.parse_args(argv)
        setup_logging(args.verbose)
        try:
            return args.handler(args)
        except ConfigError as e:
            logger.error("%s", e)
            return EXIT_CONFIG_ERROR
        except RoughPMEError as e:
            logger.error("%s: %s", type(e).__name__, e)
            return EXIT_CHECK_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    return Lab().run(argv)
