"""
End-to-end experiments: empirical zero-set moments against the leading-order
theory, hole frequencies, almost-sure convergence sequences and the Crofton
calibration.

Statistics are always measured on S^n. Projective reporting halves them
(zero sets of KSS systems are antipodally symmetric and the built-in test
functions are even).
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from lib.errors import DomainError, UnsupportedError
from lib.kostlan import KostlanSystem, linear_form, sample_system, system_to_record
from lib.limit_law import InrEstimate, sphere_volume
from lib.streams import parallel_map, stream
from lib.zero_stats import Cap, TestFunction, builtin_phi, cap_is_hole, crofton_statistic, marching_length_s2

logger = logging.getLogger(__name__)

Z95 = 1.959963984540054
MAX_FAILURE_RATE = 0.01

# Leading stream keys, one per experiment family
MOMENT_STREAM = 0
HOLE_STREAM = 1
CONVERGENCE_STREAM = 2
CALIBRATION_STREAM = 3
SYSTEM_ROLE = 0
CIRCLE_ROLE = 1

MOMENT_COLUMNS = [
	"d", "mean", "mean_ci_lo", "mean_ci_hi", "theory_mean",
	"var_raw", "var_corr", "var_ci_lo", "var_ci_hi", "theory_var",
	"estimator_var_correction", "trials", "failures",
]
HOLE_COLUMNS = ["d", "trials", "holes", "frequency", "ci_lo", "ci_hi", "scaled", "scaled_ci_hi"]
CONVERGENCE_COLUMNS = ["sequence", "d", "normalized", "limit", "deviation"]


# ============================================================================
# CONFIGURATION TYPES
# ============================================================================

@dataclass(frozen=True)
class ManifoldSpec:
	n: int
	mode: str
	volume: float

	@classmethod
	def of(cls, n: int, mode: str = "sphere") -> "ManifoldSpec":
		if mode not in ("sphere", "projective"):
			raise DomainError(f"Mode must be 'sphere' or 'projective', got '{mode}'")
		volume = sphere_volume(n)
		return cls(n=n, mode=mode, volume=volume if mode == "sphere" else volume / 2.0)

	@property
	def factor(self) -> float:
		"""Reported statistic per S^n statistic."""
		return 1.0 if self.mode == "sphere" else 0.5


@dataclass(frozen=True)
class EstimatorSpec:
	method: str = "crofton"
	circles: int = 500
	oversample: float = 8.0
	level: int = 5

	def __post_init__(self) -> None:
		if self.method not in ("crofton", "marching"):
			raise DomainError(f"Unknown estimator '{self.method}'")
		if self.circles < 1:
			raise DomainError("Crofton estimation needs at least one circle")


@dataclass(frozen=True)
class CapSpec:
	center: Tuple[float, ...] = (0.0, 0.0, 1.0)
	radius: float = 0.5
	resolution: float = 0.05

	def to_cap(self) -> Cap:
		center = np.asarray(self.center, dtype=float)
		return Cap(center=center / np.linalg.norm(center), radius=self.radius)


@dataclass(frozen=True)
class ExperimentConfig:
	n: int
	r: int = 1
	degrees: Tuple[int, ...] = (10,)
	trials: int = 1000
	mode: str = "sphere"
	estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
	phi: str = "const"
	seed: int = 0
	inr_source: Optional[str] = None
	quadrature: Dict[str, Any] = field(default_factory=dict)
	cap: CapSpec = field(default_factory=CapSpec)
	allow_conjectural: bool = False
	sequences: int = 20
	threads: int = 1

	def __post_init__(self) -> None:
		object.__setattr__(self, "degrees", tuple(int(d) for d in self.degrees))
		if list(self.degrees) != sorted(self.degrees) or len(set(self.degrees)) != len(self.degrees):
			raise DomainError(f"Degrees must be strictly ascending, got {list(self.degrees)}")
		if any(d < 1 for d in self.degrees):
			raise DomainError("Degrees must be positive")
		if self.r != 1:
			raise UnsupportedError(f"Zero-set experiments handle hypersurfaces only (r = 1), got r = {self.r}")
		if self.trials < 0:
			raise DomainError("Trial count cannot be negative")
		if self.estimator.method == "marching" and self.n != 2:
			raise UnsupportedError("The marching estimator is available on S^2 only")
		ManifoldSpec.of(self.n, self.mode)

	@property
	def manifold(self) -> ManifoldSpec:
		return ManifoldSpec.of(self.n, self.mode)

	@property
	def test_function(self) -> TestFunction:
		return builtin_phi(self.phi)

	@classmethod
	def from_dict(cls, payload: Dict[str, Any]) -> "ExperimentConfig":
		payload = dict(payload)
		payload.pop("schema_version", None)
		if "estimator" in payload:
			payload["estimator"] = EstimatorSpec(**payload["estimator"])
		if "cap" in payload:
			cap = dict(payload["cap"])
			if "center" in cap:
				cap["center"] = tuple(cap["center"])
			payload["cap"] = CapSpec(**cap)
		if "degrees" in payload:
			payload["degrees"] = tuple(payload["degrees"])
		if payload.get("quadrature") is None:
			payload["quadrature"] = {}
		return cls(**payload)

	def to_dict(self) -> Dict[str, Any]:
		payload = asdict(self)
		payload["degrees"] = list(self.degrees)
		payload["cap"]["center"] = list(self.cap.center)
		payload["schema_version"] = 1
		return payload


# ============================================================================
# THEORY SIDE
# ============================================================================

def theory_mean(n: int, r: int, d: int, phi_integral: float, manifold: Optional[ManifoldSpec] = None) -> float:
	"""
	Leading term d^{r/2} (int_M phi) Vol(S^{n-r}) / Vol(S^n) of the expected linear statistic.

	`phi_integral` is the integral of phi over the manifold being reported on.
	"""
	if not 1 <= r <= n:
		raise DomainError(f"Need 1 <= r <= n, got n={n}, r={r}")
	if manifold is not None and manifold.n != n:
		raise DomainError(f"Manifold dimension {manifold.n} does not match n={n}")
	return d ** (r / 2.0) * phi_integral * sphere_volume(n - r) / sphere_volume(n)


def theory_variance(
	n: int,
	r: int,
	d: int,
	phi_sq_integral: float,
	inr: Union[float, InrEstimate],
	manifold: Optional[ManifoldSpec] = None,
) -> float:
	"""
	Leading term d^{r-n/2} (int_M phi^2) Vol(S^{n-1}) / (2 pi)^r I_{n,r} of the variance.

	In sphere mode the statistic is twice the projective one while int phi^2
	doubles, so the prediction carries an extra factor 2.
	"""
	if not 1 <= r <= n:
		raise DomainError(f"Need 1 <= r <= n, got n={n}, r={r}")
	if r == n:
		raise UnsupportedError("The variance law does not cover the maximal codimension r = n")
	value = inr.value if isinstance(inr, InrEstimate) else float(inr)
	lift = 2.0 if manifold is not None and manifold.mode == "sphere" else 1.0
	return lift * d ** (r - n / 2.0) * phi_sq_integral * sphere_volume(n - 1) / (2.0 * math.pi) ** r * value


# ============================================================================
# MOMENT EXPERIMENT
# ============================================================================

@dataclass(frozen=True)
class MomentRow:
	d: int
	mean: float
	mean_ci_lo: float
	mean_ci_hi: float
	theory_mean: float
	var_raw: float
	var_corr: float
	var_ci_lo: float
	var_ci_hi: float
	theory_var: Optional[float]
	estimator_var_correction: float
	trials: int
	failures: int


@dataclass
class MomentReport:
	config: ExperimentConfig
	rows: List[MomentRow] = field(default_factory=list)
	failed_degrees: List[int] = field(default_factory=list)
	values: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)

	def to_frame(self) -> pd.DataFrame:
		return pd.DataFrame([asdict(row) for row in self.rows], columns=MOMENT_COLUMNS)

	def summary(self) -> str:
		if not self.rows:
			return "no degrees completed"
		parts = []
		for row in self.rows:
			text = f"d={row.d}: mean {row.mean:.4g} (theory {row.theory_mean:.4g})"
			if row.theory_var is not None:
				text += f", var {row.var_corr:.4g} (theory {row.theory_var:.4g})"
			parts.append(text)
		return "; ".join(parts)


def trial_system(config: ExperimentConfig, d: int, trial: int, family: int = MOMENT_STREAM) -> KostlanSystem:
	return sample_system(config.n, d, config.r, stream(config.seed, family, d, trial, SYSTEM_ROLE))


def trial_statistic(config: ExperimentConfig, d: int, trial: int, family: int = MOMENT_STREAM) -> Tuple[float, float]:
	"""
	Statistic of one sampled system on S^n and the estimator's own standard error.

	Streams are keyed by (seed, family, d, trial, role).
	"""
	system = trial_system(config, d, trial, family)
	if config.estimator.method == "marching":
		length = marching_length_s2(system, config.estimator.level)
		return length.refined_value, 0.0
	estimate = crofton_statistic(
		system,
		config.test_function,
		config.estimator.circles,
		stream(config.seed, family, d, trial, CIRCLE_ROLE),
		oversample=config.estimator.oversample,
	)
	return estimate.value, estimate.std_error


def system_records(config: ExperimentConfig, trials: int, family: int = MOMENT_STREAM) -> List[Dict[str, Any]]:
	"""
	Records of the first `trials` systems of every degree, as the experiment samples them.

	Each record carries its stream keys (family, d, trial, role), so a saved run can be
	checked against a re-sampled one or resumed from a given trial.
	"""
	records = []
	for d in config.degrees:
		for trial in range(min(trials, config.trials)):
			system = trial_system(config, d, trial, family)
			records.append(system_to_record(system, seed=config.seed, keys=(family, d, trial, SYSTEM_ROLE)))
	return records


def _guarded(fn):
	def run(item):
		try:
			return fn(item)
		except Exception as e:
			logger.warning(f"Trial {item} failed: {e}")
			return None
	return run


def _variance_ci(values: np.ndarray, correction: float) -> Tuple[float, float, float, float]:
	"""Raw and corrected variance with a normal CI from the fourth central moment."""
	count = len(values)
	if count < 2:
		return float("nan"), float("nan"), float("nan"), float("nan")
	var_raw = float(np.var(values, ddof=1))
	centered = values - values.mean()
	m4 = float(np.mean(centered ** 4))
	spread = max(m4 - var_raw ** 2 * (count - 3) / (count - 1), 0.0)
	half = Z95 * math.sqrt(spread / count)
	var_corr = var_raw - correction
	return var_raw, var_corr, var_corr - half, var_corr + half


def run_moment_experiment(
	config: ExperimentConfig,
	inr: Union[None, float, InrEstimate] = None,
	threads: Optional[int] = None,
) -> MomentReport:
	"""
	Empirical mean and variance of the linear statistic per degree, with theory columns.

	Args:
		config: Experiment configuration (r = 1)
		inr: I_{n,1} value or estimate; without it theory_var is left empty
		threads: Worker threads; defaults to config.threads

	Returns:
		MomentReport; degrees where more than 1% of trials failed are listed in
		failed_degrees and have no row
	"""
	threads = config.threads if threads is None else threads
	manifold = config.manifold
	phi = config.test_function
	report = MomentReport(config=config)
	if config.trials == 0:
		logger.info("No trials requested; returning an empty report")
		return report
	phi_integral = phi.integral(config.n) * manifold.factor
	phi_sq_integral = phi.integral_sq(config.n) * manifold.factor

	for d in config.degrees:
		logger.info(f"Degree {d}: {config.trials} trials with the {config.estimator.method} estimator")
		results = parallel_map(_guarded(lambda trial: trial_statistic(config, d, trial)), list(range(config.trials)), threads)
		done = [res for res in results if res is not None]
		failures = config.trials - len(done)
		if failures > MAX_FAILURE_RATE * config.trials:
			logger.error(f"Degree {d} aborted: {failures} of {config.trials} trials failed")
			report.failed_degrees.append(d)
			continue
		values = np.array([v for v, _ in done]) * manifold.factor
		errors = np.array([s for _, s in done]) * manifold.factor
		report.values[d] = values
		mean = float(values.mean())
		half = Z95 * float(np.std(values, ddof=1)) / math.sqrt(len(values)) if len(values) > 1 else float("nan")
		correction = float(np.mean(errors ** 2))
		var_raw, var_corr, var_lo, var_hi = _variance_ci(values, correction)
		theory_var = None
		if inr is not None:
			theory_var = theory_variance(config.n, config.r, d, phi_sq_integral, inr, manifold)
		report.rows.append(MomentRow(
			d=d,
			mean=mean,
			mean_ci_lo=mean - half,
			mean_ci_hi=mean + half,
			theory_mean=theory_mean(config.n, config.r, d, phi_integral, manifold),
			var_raw=var_raw,
			var_corr=var_corr,
			var_ci_lo=var_lo,
			var_ci_hi=var_hi,
			theory_var=theory_var,
			estimator_var_correction=correction,
			trials=len(values),
			failures=failures,
		))
	return report


# ============================================================================
# HOLE PROBABILITY
# ============================================================================

def _wilson(successes: int, trials: int) -> Tuple[float, float]:
	if trials == 0:
		return float("nan"), float("nan")
	ci = stats.binomtest(successes, trials).proportion_ci(confidence_level=0.95, method="wilson")
	return float(ci.low), float(ci.high)


def run_hole_probability(config: ExperimentConfig, threads: Optional[int] = None) -> pd.DataFrame:
	"""
	Frequency with which a fixed cap misses the zero set, per degree.

	Returns:
		DataFrame with HOLE_COLUMNS; `scaled` is p(d) d^{n/2}
	"""
	threads = config.threads if threads is None else threads
	cap = config.cap.to_cap()
	rows = []
	for d in config.degrees:
		def trial_is_hole(trial: int, d: int = d) -> bool:
			system = trial_system(config, d, trial, HOLE_STREAM)
			return cap_is_hole(system, cap, config.cap.resolution)

		holes = int(sum(parallel_map(trial_is_hole, list(range(config.trials)), threads)))
		frequency = holes / config.trials if config.trials else float("nan")
		lo, hi = _wilson(holes, config.trials)
		scale = d ** (config.n / 2.0)
		logger.info(f"Degree {d}: {holes} holes in {config.trials} trials")
		rows.append({
			"d": d, "trials": config.trials, "holes": holes, "frequency": frequency,
			"ci_lo": lo, "ci_hi": hi, "scaled": frequency * scale, "scaled_ci_hi": hi * scale,
		})
	return pd.DataFrame(rows, columns=HOLE_COLUMNS)


def hole_monotonicity(table: pd.DataFrame, confidence: float = 0.95) -> Tuple[bool, List[int]]:
	"""
	Joint one-sided check that hole frequencies do not increase with d.

	Each adjacent pair is tested with a two-proportion z-test at level
	(1 - confidence)/(k - 1) (Bonferroni).

	Returns:
		(ok, degrees at which a significant increase was found)
	"""
	if len(table) < 2:
		return True, []
	level = (1.0 - confidence) / (len(table) - 1)
	critical = stats.norm.ppf(1.0 - level)
	violations = []
	rows = table.to_dict("records")
	for prev, cur in zip(rows, rows[1:]):
		pooled = (prev["holes"] + cur["holes"]) / (prev["trials"] + cur["trials"])
		spread = math.sqrt(pooled * (1 - pooled) * (1 / prev["trials"] + 1 / cur["trials"]))
		if spread == 0:
			continue
		if (cur["frequency"] - prev["frequency"]) / spread > critical:
			violations.append(int(cur["d"]))
	return not violations, violations


# ============================================================================
# CONVERGENCE SEQUENCES
# ============================================================================

@dataclass
class ConvergenceReport:
	regime: str
	limit: float
	table: pd.DataFrame

	def spread_by_degree(self) -> pd.DataFrame:
		"""Standard deviation of the normalized statistic across sequences, per degree."""
		grouped = self.table.groupby("d")["normalized"]
		return pd.DataFrame({"d": grouped.std(ddof=1).index, "std": grouped.std(ddof=1).values, "mean": grouped.mean().values})


def run_convergence_sequence(config: ExperimentConfig, sequences: Optional[int] = None, threads: Optional[int] = None) -> ConvergenceReport:
	"""
	Independent sequences d -> d^{-r/2} <statistic>, with their deviation from the limit.

	The almost-sure convergence is established for n >= 3; n = 2 runs only
	with `allow_conjectural` and is labelled "conjectural regime".
	"""
	sequences = config.sequences if sequences is None else sequences
	threads = config.threads if threads is None else threads
	if config.n < 2 or (config.n == 2 and not config.allow_conjectural):
		raise UnsupportedError(
			f"Convergence sequences need n >= 3 (n = 2 with allow_conjectural), got n = {config.n}"
		)
	regime = "conjectural regime" if config.n == 2 else "proven regime"
	manifold = config.manifold
	phi_integral = config.test_function.integral(config.n) * manifold.factor
	limit = theory_mean(config.n, config.r, 1, phi_integral, manifold)

	tasks = [(s, d) for s in range(sequences) for d in config.degrees]

	def element(task: Tuple[int, int]) -> float:
		s, d = task
		value, _ = trial_statistic(config, d, s, family=CONVERGENCE_STREAM)
		return value * manifold.factor / d ** (config.r / 2.0)

	values = parallel_map(element, tasks, threads)
	table = pd.DataFrame(
		[{"sequence": s, "d": d, "normalized": v, "limit": limit, "deviation": v - limit} for (s, d), v in zip(tasks, values)],
		columns=CONVERGENCE_COLUMNS,
	)
	logger.info(f"Convergence sequences in the {regime}: {sequences} sequences over {len(config.degrees)} degrees")
	return ConvergenceReport(regime=regime, limit=limit, table=table)


# ============================================================================
# CHECKS
# ============================================================================

@dataclass(frozen=True)
class ConcentrationResult:
	threshold: float
	fraction: float
	fraction_ci_lo: float
	bound: float
	consistent: bool


def concentration_check(values: Sequence[float], d: int, n: int, r: int, alpha: float, eps: float) -> ConcentrationResult:
	"""
	Chebyshev consistency of the deviation frequency at scale d^alpha eps.

	The fraction of |X - mean| > d^alpha eps must not exceed Var / (d^alpha eps)^2
	beyond binomial noise. Requires alpha > r/2 - n/4.
	"""
	if alpha <= r / 2.0 - n / 4.0:
		raise DomainError(f"alpha must exceed r/2 - n/4 = {r / 2.0 - n / 4.0}, got {alpha}")
	if eps <= 0:
		raise DomainError("eps must be positive")
	values = np.asarray(values, dtype=float)
	if values.size < 2:
		raise DomainError("Need at least two values")
	threshold = d ** alpha * eps
	exceed = int(np.sum(np.abs(values - values.mean()) > threshold))
	lo, _ = _wilson(exceed, values.size)
	bound = float(np.var(values, ddof=1)) / threshold ** 2
	return ConcentrationResult(
		threshold=threshold,
		fraction=exceed / values.size,
		fraction_ci_lo=lo,
		bound=bound,
		consistent=lo <= bound,
	)


def run_calibration(ns: Sequence[int] = (2, 3, 4), circles: int = 200, seed: int = 0) -> pd.DataFrame:
	"""
	Crofton estimate of the equator X_0 = 0 of S^n, whose volume is Vol(S^{n-1}).

	Every great circle not contained in the equator meets it exactly twice.
	"""
	rows = []
	for n in ns:
		estimate = crofton_statistic(linear_form(n, 0), None, circles, stream(seed, CALIBRATION_STREAM, n))
		expected = sphere_volume(n - 1)
		counts = estimate.per_geodesic_counts
		rows.append({
			"n": n,
			"value": estimate.value,
			"expected": expected,
			"rel_error": abs(estimate.value - expected) / expected,
			"std_error": estimate.std_error,
			"min_count": counts.min,
			"max_count": counts.max,
		})
	return pd.DataFrame(rows, columns=["n", "value", "expected", "rel_error", "std_error", "min_count", "max_count"])
