"""
Command-line surface of the laboratory.

Commands: inr, dnr-table, experiment, holes, converge, calibrate, replay.
Every command writes its outputs atomically next to a run manifest that can
be replayed to reproduce them.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from lib.config_validation import load_config, validate_codimension
from lib.errors import ConfigError, LabError, NumericalError
from lib.harness import (
	ExperimentConfig,
	hole_monotonicity,
	run_calibration,
	run_convergence_sequence,
	run_hole_probability,
	run_moment_experiment,
	system_records,
)
from lib.limit_law import InrEstimate, MonteCarloSpec, QuadratureSpec, dnr_table, estimate_inr, grid_roughness, t_grid
from lib.storage import RunManifest, Settings, load_settings, manifest_path, read_json, write_csv, write_json

logger = logging.getLogger(__name__)

DNR_COLUMNS = ["t", "estimate", "std_error", "n_samples"]


class LabArgumentParser(argparse.ArgumentParser):
	"""ArgumentParser whose usage errors exit with status 1."""

	def error(self, message: str) -> None:  # type: ignore[override]
		self.print_usage(sys.stderr)
		self.exit(1, f"{self.prog}: error: {message}\n")


# ============================================================================
# RESOLUTION HELPERS
# ============================================================================

def resolve_seed(cli_seed: Optional[int], settings: Settings, config_seed: Optional[int] = None) -> int:
	"""CLI flag, then KACRICE_SEED, then the config file, then 0."""
	for candidate in (cli_seed, settings.seed, config_seed):
		if candidate is not None:
			return int(candidate)
	return 0


def resolve_threads(cli_threads: Optional[int], settings: Settings, config_threads: Optional[int] = None) -> int:
	for candidate in (cli_threads, settings.threads, config_threads):
		if candidate is not None:
			return max(1, int(candidate))
	return 1


def _output_dir(args: argparse.Namespace, settings: Settings) -> Path:
	return Path(args.out or settings.output_dir)


def _replay_argv(argv: Sequence[str], seed: int, out: Path) -> List[str]:
	"""argv with the resolved seed and output directory pinned, so replays ignore the environment."""
	argv = list(argv)
	cleaned: List[str] = []
	skip = False
	for token in argv:
		if skip:
			skip = False
			continue
		if token in ("--seed", "--out"):
			skip = True
			continue
		if token.startswith(("--seed=", "--out=")):
			continue
		cleaned.append(token)
	return cleaned + ["--seed", str(seed), "--out", str(out)]


def _require_codimension(n: int, r: int) -> None:
	is_valid, error_msg = validate_codimension(n, r)
	if not is_valid:
		raise ConfigError(error_msg)


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_inr(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
	_require_codimension(args.n, args.r)
	seed = resolve_seed(args.seed, settings)
	threads = resolve_threads(args.threads, settings)
	quad = QuadratureSpec(
		t_split=args.t_split,
		t_max=args.tmax,
		nodes_low=args.nodes_low,
		nodes_high=args.nodes_high,
		samples_per_node=args.samples,
		seed=seed,
	)
	out = _output_dir(args, settings)
	stem = args.name or f"inr_n{args.n}_r{args.r}"
	manifest = RunManifest(command="inr", argv=_replay_argv(argv, seed, out), config=quad.to_dict() | {"n": args.n, "r": args.r}, seed=seed)

	estimate = estimate_inr(args.n, args.r, quad, threads=threads)
	nonnegative = estimate.consistent_with_nonnegative()
	if not nonnegative:
		logger.warning(f"I_{{{args.n},{args.r}}} = {estimate.value:.3g} is more than 3 standard errors below zero")
	manifest.add_output(write_json(estimate.to_dict() | {"consistent_with_nonnegative": nonnegative}, out / f"{stem}.json"))
	nodes = pd.DataFrame([node.to_dict() for node in estimate.nodes], columns=DNR_COLUMNS)
	manifest.add_output(write_csv(nodes, out / f"{stem}.nodes.csv"))
	manifest.finish(manifest_path(out, stem))
	print(
		f"I_{{{args.n},{args.r}}} = {estimate.value:.6g} "
		f"± {estimate.statistical_se:.2g} (stat) "
		f"± {estimate.quadrature_error:.2g} (quad) "
		f"+ tail <= {estimate.tail_bound:.2g}; "
		f"consistent with I >= 0: {'yes' if nonnegative else 'no'}"
	)
	return 0


def cmd_dnr_table(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
	_require_codimension(args.n, args.r)
	seed = resolve_seed(args.seed, settings)
	threads = resolve_threads(args.threads, settings)
	ts = t_grid(args.tmin, args.tmax, args.points, args.spacing)
	mc = MonteCarloSpec(samples=args.samples, seed=seed)
	out = _output_dir(args, settings)
	stem = args.name or f"dnr_n{args.n}_r{args.r}"
	config = {"n": args.n, "r": args.r, "tmin": args.tmin, "tmax": args.tmax, "points": args.points,
		"spacing": args.spacing, "samples": args.samples, "crn": args.crn}
	manifest = RunManifest(command="dnr-table", argv=_replay_argv(argv, seed, out), config=config, seed=seed)

	rows = dnr_table(args.n, args.r, ts, mc, crn=args.crn, threads=threads)
	table = pd.DataFrame([row.to_dict() for row in rows], columns=DNR_COLUMNS)
	manifest.add_output(write_csv(table, out / f"{stem}.csv"))
	manifest.finish(manifest_path(out, stem))
	print(f"D_{{{args.n},{args.r}}} on {len(rows)} nodes; roughness {grid_roughness(table['estimate']):.3g}")
	return 0


def _load_experiment(args: argparse.Namespace, settings: Settings) -> ExperimentConfig:
	payload = load_config(args.config)
	payload["seed"] = resolve_seed(args.seed, settings, payload.get("seed"))
	payload["threads"] = resolve_threads(args.threads, settings, payload.get("threads"))
	try:
		return ExperimentConfig.from_dict(payload)
	except TypeError as e:
		raise ConfigError(f"Invalid config {args.config}: {e}") from e


def resolve_inr(config: ExperimentConfig, config_path: str, out: Path, stem: str, manifest: RunManifest) -> Optional[InrEstimate]:
	"""
	I_{n,1} for the variance prediction, according to inr_source.

	"inline" runs the quadrature now (and saves it); a path is read relative
	to the config file; null skips the prediction.
	"""
	source = config.inr_source
	if source is None:
		return None
	if source == "inline":
		quad = QuadratureSpec(**config.quadrature, seed=config.seed) if config.quadrature else QuadratureSpec(seed=config.seed)
		estimate = estimate_inr(config.n, config.r, quad, threads=config.threads)
		manifest.add_output(write_json(estimate.to_dict(), out / f"{stem}.inr.json"))
		return estimate
	path = Path(source)
	if not path.is_absolute():
		path = Path(config_path).parent / path
	estimate = InrEstimate.from_dict(read_json(path, "I_{n,r} estimate"))
	if (estimate.n, estimate.r) != (config.n, config.r):
		raise ConfigError(f"{path} holds I_{{{estimate.n},{estimate.r}}}, expected I_{{{config.n},{config.r}}}")
	return estimate


def cmd_experiment(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
	config = _load_experiment(args, settings)
	out = _output_dir(args, settings)
	stem = args.name or f"{Path(args.config).stem}_moments"
	manifest = RunManifest(command="experiment", argv=_replay_argv(argv, config.seed, out), config=config.to_dict(), seed=config.seed)

	inr = resolve_inr(config, args.config, out, stem, manifest)
	report = run_moment_experiment(config, inr=inr)
	manifest.add_output(write_csv(report.to_frame(), out / f"{stem}.csv"))
	if args.save_systems > 0:
		records = system_records(config, args.save_systems)
		manifest.add_output(write_json({"systems": records}, out / f"{stem}.systems.json"))
		logger.info(f"Saved {len(records)} system records")
	manifest.finish(manifest_path(out, stem))
	print(report.summary())
	if report.failed_degrees:
		raise NumericalError(f"More than 1% of trials failed at degrees {report.failed_degrees}")
	return 0


def cmd_holes(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
	config = _load_experiment(args, settings)
	out = _output_dir(args, settings)
	stem = args.name or f"{Path(args.config).stem}_holes"
	manifest = RunManifest(command="holes", argv=_replay_argv(argv, config.seed, out), config=config.to_dict(), seed=config.seed)

	table = run_hole_probability(config)
	manifest.add_output(write_csv(table, out / f"{stem}.csv"))
	manifest.finish(manifest_path(out, stem))
	monotone, violations = hole_monotonicity(table)
	scaled = table["scaled"].max() if len(table) else float("nan")
	print(f"monotone: {monotone} {violations or ''}; max p(d) d^(n/2) = {scaled:.4g}")
	return 0


def cmd_converge(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
	config = _load_experiment(args, settings)
	out = _output_dir(args, settings)
	stem = args.name or f"{Path(args.config).stem}_converge"
	manifest = RunManifest(command="converge", argv=_replay_argv(argv, config.seed, out), config=config.to_dict(), seed=config.seed)

	report = run_convergence_sequence(config)
	manifest.add_output(write_csv(report.table, out / f"{stem}.csv"))
	spread = report.spread_by_degree()
	manifest.add_output(write_csv(spread, out / f"{stem}.spread.csv"))
	manifest.finish(manifest_path(out, stem))
	print(f"{report.regime}: limit {report.limit:.6g}; spread by degree {spread['std'].round(4).tolist()}")
	return 0


def cmd_calibrate(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
	seed = resolve_seed(args.seed, settings)
	out = _output_dir(args, settings)
	stem = args.name or "calibration"
	manifest = RunManifest(command="calibrate", argv=_replay_argv(argv, seed, out), config={"ns": args.ns, "circles": args.circles}, seed=seed)

	table = run_calibration(args.ns, args.circles, seed)
	manifest.add_output(write_csv(table, out / f"{stem}.csv"))
	manifest.finish(manifest_path(out, stem))
	print(table.to_string(index=False))
	if (table["min_count"] != 2).any() or (table["max_count"] != 2).any():
		raise NumericalError("Some great circles did not meet the equator exactly twice")
	return 0


def cmd_replay(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
	manifest = RunManifest.load(args.manifest)
	if manifest.command == "replay" or not manifest.argv:
		raise ConfigError(f"{args.manifest} cannot be replayed")
	logger.info(f"Replaying '{manifest.command}' from {args.manifest}")
	return main(manifest.argv)


# ============================================================================
# PARSER
# ============================================================================

def _common(parser: argparse.ArgumentParser) -> None:
	parser.add_argument("--seed", type=int, default=None, help="Seed (overrides KACRICE_SEED and the config)")
	parser.add_argument("--threads", type=int, default=None, help="Worker threads; never changes results")
	parser.add_argument("--out", default=None, help="Output directory (default KACRICE_OUTPUT_DIR or ./outputs)")
	parser.add_argument("--name", default=None, help="Output file stem")


def build_parser() -> LabArgumentParser:
	parser = LabArgumentParser(prog="kacrice", description="Kac-Rice numerical laboratory")
	sub = parser.add_subparsers(dest="command", required=True, parser_class=LabArgumentParser)

	inr = sub.add_parser("inr", help="Estimate the variance constant I_{n,r}")
	inr.add_argument("--n", type=int, required=True)
	inr.add_argument("--r", type=int, required=True)
	inr.add_argument("--t-split", type=float, default=1.0)
	inr.add_argument("--tmax", type=float, default=40.0)
	inr.add_argument("--nodes-low", type=int, default=32)
	inr.add_argument("--nodes-high", type=int, default=48)
	inr.add_argument("--samples", type=int, default=100_000, help="Monte Carlo samples per node")
	_common(inr)
	inr.set_defaults(handler=cmd_inr)

	table = sub.add_parser("dnr-table", help="Tabulate D_{n,r}(t) on a t grid")
	table.add_argument("--n", type=int, required=True)
	table.add_argument("--r", type=int, required=True)
	table.add_argument("--tmin", type=float, default=1e-2)
	table.add_argument("--tmax", type=float, default=40.0)
	table.add_argument("--points", type=int, default=40)
	table.add_argument("--spacing", choices=["log", "linear"], default="log")
	table.add_argument("--samples", type=int, default=100_000)
	table.add_argument("--crn", action=argparse.BooleanOptionalAction, default=True,
		help="Share random numbers across nodes (default on)")
	_common(table)
	table.set_defaults(handler=cmd_dnr_table)

	for name, handler, text in (
		("experiment", cmd_experiment, "Zero-set moments against theory"),
		("holes", cmd_holes, "Hole frequencies of a fixed cap"),
		("converge", cmd_converge, "Normalized statistic sequences"),
	):
		command = sub.add_parser(name, help=text)
		command.add_argument("--config", required=True, help="Experiment config (JSON)")
		if name == "experiment":
			command.add_argument("--save-systems", type=int, default=0, metavar="K",
				help="Also write the first K sampled systems of every degree to <name>.systems.json")
		_common(command)
		command.set_defaults(handler=handler)

	calibrate = sub.add_parser("calibrate", help="Crofton calibration on the equator")
	calibrate.add_argument("--ns", type=int, nargs="+", default=[2, 3, 4])
	calibrate.add_argument("--circles", type=int, default=200)
	_common(calibrate)
	calibrate.set_defaults(handler=cmd_calibrate)

	replay = sub.add_parser("replay", help="Re-run the command recorded in a manifest")
	replay.add_argument("--manifest", required=True)
	replay.set_defaults(handler=cmd_replay, seed=None, threads=None, out=None, name=None)
	return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
	"""
	Run one command.

	Returns:
		0 on success, 1 for usage/config/dependency errors, 2 for numerical failures
	"""
	argv = list(sys.argv[1:] if argv is None else argv)
	args = build_parser().parse_args(argv)
	try:
		settings = load_settings()
		logger.info(f"Starting '{args.command}'")
		status = args.handler(args, settings, argv)
		logger.info(f"Finished '{args.command}'")
		return status
	except LabError as e:
		logger.error(f"'{args.command}' failed: {e}")
		print(f"error: {e}", file=sys.stderr)
		return e.exit_code
