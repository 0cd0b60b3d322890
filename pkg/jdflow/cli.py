import argparse
import logging
import os
import sys
from typing import Callable, ClassVar, Dict, List, Optional, Tuple

import numpy as np

from jdflow import __version__, config
from jdflow.cache import Cache
from jdflow.control import dpp_battery, lsc_spot_check, solve_value
from jdflow.errors import ArgumentError, ConfigurationError
from jdflow.exporter import Exporter
from jdflow.integrator import evaluate_flow_field, integrate_batch
from jdflow.models.config import ExperimentConfig, TypedConfigParser
from jdflow.models.control import ValueGrid
from jdflow.models.coefficients import StateBox
from jdflow.models.reports import RegularityReports
from jdflow.noise import dump_scenarios
from jdflow.parallel import ordered_map, resolve_threads
from jdflow.probe import probe_hypotheses
from jdflow.regularity import (
    check_flow_property,
    estimate_cadlag_exponent,
    estimate_lipschitz_moment,
    estimate_stochastic_continuity,
)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class Runner:
    """Runs one subcommand on a validated config and writes its artifacts."""

    SUBCOMMANDS: ClassVar[Tuple[str, ...]] = (
        "simulate",
        "flow-check",
        "regularity",
        "solve",
        "dpp-check",
        "probe",
    )
    _logger = logging.getLogger("Runner")

    def __init__(self, cfg: ExperimentConfig, exporter: Exporter, threads: int) -> None:
        self.cfg = cfg
        self.exporter = exporter
        self.threads = threads
        self.coeffs = cfg.coefficients()
        self.noise = cfg.noise_model()
        self.seed = cfg.noise.seed

    def run(self, subcommand: str) -> Tuple[bool, str]:
        handlers: Dict[str, Callable[[], Tuple[bool, str]]] = {
            "simulate": self.simulate,
            "flow-check": self.flow_check,
            "regularity": self.regularity,
            "solve": self.solve,
            "dpp-check": self.dpp_check,
            "probe": self.probe,
        }
        self._logger.info(f"{subcommand}: config {self.cfg.config_hash()[:12]} seed={self.seed} threads={self.threads}")
        return handlers[subcommand]()

    def simulate(self) -> Tuple[bool, str]:
        run = self.cfg.run
        x0 = self.cfg.states("x0")
        clamp_box = self.cfg.clamp_box()
        indices = list(range(run.scenarios))

        def one(path_index: int):
            scenario = self.noise.scenario(self.seed, path_index)
            return scenario, integrate_batch(self.coeffs, 0.0, x0, None, scenario, clamp_box=clamp_box)

        results = ordered_map(one, indices, threads=self.threads)
        dump_scenarios([r[0] for r in results], self.exporter.file("scenarios.jsonl"))
        self.exporter.register("scenarios.jsonl")

        first = results[0][1].path(0)
        rows = (
            [path_index, j] + row
            for path_index, (_, batch) in zip(indices, results)
            for j in range(len(batch))
            for row in batch.path(j).to_rows()
        )
        self.exporter.write_csv("paths.csv", ["path_index", "x0_index"] + first.header(), rows)

        finals = np.stack([batch.final for _, batch in results])
        mean, std = finals.mean(axis=0), finals.std(axis=0)
        lines = [f"simulated {run.scenarios} scenarios x {len(x0)} start states"]
        if clamp_box is not None:
            clamped = sum(batch.clamp_count for _, batch in results)
            lines.append(f"clamped {clamped} states to {list(clamp_box.low)} .. {list(clamp_box.high)}")
        for j, x in enumerate(x0):
            lines.append(f"x0={x.tolist()}: mean X_T={mean[j].tolist()} std={std[j].tolist()}")
        return True, "\n".join(lines)

    def _report(self, name: str, reports: RegularityReports) -> Tuple[bool, str]:
        self.exporter.write_jsonl(name, reports.to_records())
        return reports.all_passed, reports.summary_table()

    def flow_check(self) -> Tuple[bool, str]:
        run = self.cfg.run
        if len(run.flow_times) != 3:
            raise ArgumentError("run.flow_times needs exactly three grid times s, u, t")
        s, u, t = run.flow_times
        xs = self.cfg.states("x_values")
        report = check_flow_property(
            self.coeffs, self.noise, s, u, t, xs, None, run.scenarios, self.seed, threads=self.threads
        )
        field = evaluate_flow_field(self.coeffs, [s, u], xs, [u, t], None, self.noise.scenario(self.seed, 0))
        self.exporter.write_csv("flow_field.csv", field.header(), field.to_rows())
        return self._report("flow_check.jsonl", RegularityReports(records=[report]))

    def regularity(self) -> Tuple[bool, str]:
        run = self.cfg.run
        reports = RegularityReports()
        x = self.cfg.states("lipschitz_x")[0]
        y = self.cfg.states("lipschitz_y")[0]
        for p in run.moment_orders:
            reports.append(
                estimate_lipschitz_moment(
                    self.coeffs,
                    self.noise,
                    0.0,
                    x,
                    y,
                    p,
                    None,
                    run.scenarios,
                    self.seed,
                    margin=run.margin,
                    allow_large_jumps=True,
                    threads=self.threads,
                )
            )
        reports.append(
            estimate_stochastic_continuity(
                self.coeffs,
                self.noise,
                run.continuity_start,
                run.radius,
                run.epsilon,
                run.offsets,
                None,
                run.scenarios,
                self.seed,
                lattice_points=run.lattice_points,
                two_sided=run.two_sided,
                threads=self.threads,
            )
        )
        reports.append(
            estimate_cadlag_exponent(
                self.coeffs,
                self.noise,
                np.zeros(self.coeffs.state_dim),
                run.radius,
                run.q,
                run.triple_count,
                run.cadlag_scenarios,
                self.seed,
                lattice_points=run.lattice_points,
                min_decades=run.min_decades,
                threads=self.threads,
            )
        )
        return self._report("regularity.jsonl", reports)

    def value_grid(self) -> ValueGrid:
        grid = self.cfg.require_grid()
        cache = Cache(os.path.join(self.exporter.out_dir, ".cache"))

        def compute() -> ValueGrid:
            return solve_value(
                self.coeffs,
                self.noise,
                self.cfg.running_cost(),
                self.cfg.terminal_cost(),
                self.cfg.action_set(),
                self.cfg.state_grid(),
                grid.dyadic_level,
                self.cfg.run.inner_scenarios,
                self.seed,
                threads=self.threads,
            )

        # grids never cross package versions
        return cache.get_or_compute(("value_grid", __version__, self.cfg.config_hash()), compute)

    def solve(self) -> Tuple[bool, str]:
        value_grid = self.value_grid()
        self.exporter.write_csv("value_grid.csv", value_grid.header(), value_grid.to_rows())
        values = value_grid.values
        summary = (
            f"value grid: {values.shape[0]} times x {value_grid.state_grid.size} states, "
            f"range [{values.min():.6g}, {values.max():.6g}], clamped queries {value_grid.clamp_count}"
        )
        return True, summary

    def dpp_check(self) -> Tuple[bool, str]:
        run = self.cfg.run
        value_grid = self.value_grid()
        states = self.cfg.states("dpp_states")
        combinations = [
            (theta, s, x) for theta in self.cfg.stopping_times() for s in run.dpp_starts for x in states
        ]
        residuals, fraction = dpp_battery(
            self.coeffs, self.noise, value_grid, combinations, run.scenarios, self.seed, threads=self.threads
        )
        self.exporter.write_jsonl("dpp.jsonl", [r.to_record() for r in residuals])

        lsc = RegularityReports(
            records=[
                lsc_spot_check(value_grid, s, x, run.approach_count, self.seed)
                for s in run.dpp_starts
                for x in states
            ]
        )
        self.exporter.write_jsonl("lsc.jsonl", lsc.to_records())

        table = RegularityReports(records=residuals + list(lsc)).summary_table()
        passed = fraction >= run.dpp_min_pass and lsc.all_passed
        return passed, f"{table}\npass fraction {fraction:.3f} (need {run.dpp_min_pass:g})"

    def probe(self) -> Tuple[bool, str]:
        grid = self.cfg.grid
        box = StateBox(low=grid.low, high=grid.high) if grid is not None else None
        action_box = None
        if self.coeffs.control_dim and self.cfg.control.actions:
            actions = self.cfg.action_set().actions
            action_box = StateBox(low=actions.min(axis=0), high=actions.max(axis=0))
        report = probe_hypotheses(
            self.coeffs,
            box,
            self.cfg.run.probe_samples,
            self.seed,
            action_box=action_box,
            levy=self.cfg.levy(),
            horizon=self.noise.horizon,
            threads=self.threads,
        )
        self.exporter.write_jsonl("probe.jsonl", [report.to_record()])
        return report.passed, RegularityReports(records=[report]).summary_table()


def main(
    subcommand: str = None,
    config_path: str = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    out: Optional[str] = None,
    overrides: List[str] = None,
) -> int:
    logger = logging.getLogger("jdflow")
    overrides = list(overrides or [])
    try:
        cfg = _load(config_path, overrides, seed)
        n_threads = resolve_threads(cfg.run.threads if threads is None else threads)
        exporter = Exporter(out or cfg.run.output_dir)
        passed, summary = Runner(cfg, exporter, n_threads).run(subcommand)
    except (ConfigurationError, ArgumentError) as e:
        logger.error(f"{subcommand}: {e}")
        return EXIT_CONFIG

    exporter.write_manifest(subcommand, cfg.config_hash(), cfg.noise.seed, passed)
    exporter.write_run_info(n_threads)
    print(summary)
    return EXIT_PASS if passed else EXIT_FAIL


def _load(config_path: str, overrides: List[str], seed: Optional[int]) -> ExperimentConfig:
    sections = TypedConfigParser.parse_file(config_path)
    if seed is not None:
        # the seed may be absent from the file
        sections.setdefault("noise", {})["seed"] = ("int", int(seed))
    for assignment in overrides:
        TypedConfigParser.apply_override(sections, assignment)
    return ExperimentConfig.from_sections(sections)


def parse_args(raw_args):
    parser = argparse.ArgumentParser(prog="jdflow")
    parser.add_argument(
        "subcommand",
        choices=Runner.SUBCOMMANDS,
        help="Operation to run",
    )
    parser.add_argument(
        "--config",
        dest="config_path",
        required=True,
        help="Path to the experiment config",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Override noise.seed",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Worker threads, 0 for one per CPU; never changes results",
    )
    parser.add_argument(
        "--out",
        default=None,
        help=f"Output directory, default: run.output_dir or {config.DEFAULT_OUT_DIR!r}",
    )
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.NAME=VALUE",
        help="Override one config value, parsed with its declared type",
    )
    return parser.parse_args(raw_args)


if __name__ == "__main__":
    logging.basicConfig(level=config.LOGGING_LEVEL)
    args = parse_args(sys.argv[1:])
    sys.exit(main(**vars(args)))
