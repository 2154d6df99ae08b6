"""
Scaling-limit Gaussian objects of the two-point zero-set density.

The pair (X(t), Y(t)) of correlated r x n Gaussian matrices describes the
rescaled derivatives of a random section at two points whose squared rescaled
distance is t. Everything the variance constant I_{n,r} needs lives here:
the per-column covariance blocks, their closed-form spectrum, the Jacobian
|det_perp|, Monte Carlo and quadrature estimates of
E[|det_perp X(t)| |det_perp Y(t)|], the density D_{n,r}(t) and the integral
I_{n,r} = 1/2 * int_0^inf D_{n,r}(t) t^{(n-2)/2} dt.

Covariance blocks are evaluated through the two eigenvalues of the j = 1
block, written with expm1 and sinh(s) - s (s = t/2) so that nothing cancels
catastrophically as t -> 0.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.sparse.csgraph import connected_components

from lib.errors import DomainError, NumericalError, ShapeError, UnsupportedError
from lib.streams import (
	DEFAULT_CHUNK,
	RunningMoments,
	chunk_sizes,
	merge_columns,
	parallel_map,
	stream,
)

logger = logging.getLogger(__name__)

# Eigenvalues in [-PSD_TOLERANCE, 0) are rounding noise and get clamped to 0
PSD_TOLERANCE = 1e-14
# Below s = t/2 = 1, sinh(s) - s is summed from its Taylor series
SERIES_CUTOFF = 1.0
TAIL_SAFETY = 10.0
WEAK_PIVOT = 1e-6
# Rows of the Gauss-Hermite outer product handled at once
GH_BLOCK = 512
MIN_SAMPLES = 1000


# ============================================================================
# SPHERE VOLUMES
# ============================================================================

def sphere_volume(m: int) -> float:
	"""
	Euclidean volume of the unit sphere S^m in R^{m+1}.

	Args:
		m: Sphere dimension, m >= 0

	Returns:
		2 pi^{(m+1)/2} / Gamma((m+1)/2)
	"""
	if m < 0:
		raise DomainError(f"Sphere dimension must be non-negative, got {m}")
	half = (m + 1) / 2.0
	if m <= 300:
		return 2.0 * math.pi ** half / math.gamma(half)
	return math.exp(math.log(2.0) + half * math.log(math.pi) - math.lgamma(half))


def expected_odet_standard(n: int, r: int) -> float:
	"""E|det_perp G| for an r x n matrix G of i.i.d. standard Gaussians."""
	_check_dims(n, r)
	return (2.0 * math.pi) ** (r / 2.0) * sphere_volume(n - r) / sphere_volume(n)


def chi_moment_odet(n: int, r: int) -> float:
	"""
	Same quantity as `expected_odet_standard`, computed as a product of chi means.

	Gram-Schmidt on the rows turns |det_perp G| into a product of independent
	chi variables with n, n-1, ..., n-r+1 degrees of freedom.
	"""
	_check_dims(n, r)
	total = 0.0
	for k in range(n - r + 1, n + 1):
		total += 0.5 * math.log(2.0) + math.lgamma((k + 1) / 2.0) - math.lgamma(k / 2.0)
	return math.exp(total)


# ============================================================================
# TYPES
# ============================================================================

@dataclass(frozen=True)
class LimitPairParams:
	"""Squared rescaled distance t and the shape (r, n) of the matrices."""

	t: float
	n: int
	r: int

	def __post_init__(self) -> None:
		_check_t(self.t)
		_check_dims(self.n, self.r)

	def require_integrable(self) -> None:
		_require_integrable(self.n, self.r)


@dataclass(frozen=True)
class ColumnCovariance:
	"""
	2x2 covariance [[a, b], [b, a]] of one entry pair (X_ij, Y_ij).

	`even` = a + b and `odd` = a - b are its eigenvalues, for the eigenvectors
	(1, 1) and (1, -1). They are stored as computed by the stable formulas
	rather than re-derived from a and b.
	"""

	a: float
	b: float
	even: float
	odd: float


@dataclass(frozen=True, eq=False)
class MatrixPair:
	x: np.ndarray
	y: np.ndarray

	def __post_init__(self) -> None:
		if self.x.shape != self.y.shape or self.x.ndim != 2:
			raise ShapeError(f"Pair matrices must share an (r, n) shape, got {self.x.shape} and {self.y.shape}")
		if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
			raise NumericalError("Pair matrices contain non-finite entries")


@dataclass(frozen=True)
class MonteCarloSpec:
	"""Sample budget and seed of a chunked Monte Carlo estimate."""

	samples: int
	seed: int = 0
	chunk: int = DEFAULT_CHUNK

	def __post_init__(self) -> None:
		if self.samples < MIN_SAMPLES:
			raise DomainError(f"Monte Carlo estimates need at least {MIN_SAMPLES} samples, got {self.samples}")
		if self.chunk < 1:
			raise DomainError("Chunk size must be positive")


@dataclass(frozen=True)
class DnrEvaluation:
	t: float
	estimate: float
	std_error: float
	n_samples: int

	def to_dict(self) -> Dict[str, Any]:
		return asdict(self)


@dataclass(frozen=True)
class QuadratureSpec:
	"""Layout of the I_{n,r} quadrature: u = sqrt(t) rule on (0, t_split], t rule on [t_split, t_max]."""

	t_split: float = 1.0
	t_max: float = 40.0
	nodes_low: int = 32
	nodes_high: int = 48
	samples_per_node: int = 100_000
	seed: int = 0

	def __post_init__(self) -> None:
		if not 0 < self.t_split < self.t_max:
			raise DomainError(f"Need 0 < t_split < t_max, got t_split={self.t_split}, t_max={self.t_max}")
		if self.nodes_low < 4 or self.nodes_high < 4:
			raise DomainError("Quadrature node counts must be at least 4")
		if self.samples_per_node < MIN_SAMPLES:
			raise DomainError(f"samples_per_node must be at least {MIN_SAMPLES}")
		if not 0 <= self.seed < 2 ** 64:
			raise DomainError("Seed must fit in 64 unsigned bits")

	def to_dict(self) -> Dict[str, Any]:
		return asdict(self)


def _optional_float(value: Any) -> Optional[float]:
	return None if value is None else float(value)


@dataclass(frozen=True)
class InrEstimate:
	"""
	Value of I_{n,r} with its error decomposition.

	statistical_se is the Monte Carlo standard error of the whole quadrature
	sum (nodes share their random numbers, so it is computed per sample, not
	per node). quadrature_error compares the rule against one with half the
	nodes; tail_bound covers the discarded (t_max, inf) mass.
	"""

	n: int
	r: int
	value: float
	statistical_se: float
	tail_bound: float
	quadrature: QuadratureSpec
	quadrature_error: float = 0.0
	tail_log_constant: Optional[float] = None
	nodes: List[DnrEvaluation] = field(default_factory=list)

	def consistent_with_nonnegative(self, k: float = 3.0) -> bool:
		return self.value >= -k * self.statistical_se

	def to_dict(self) -> Dict[str, Any]:
		payload = asdict(self)
		payload["quadrature"] = self.quadrature.to_dict()
		payload["nodes"] = [node.to_dict() for node in self.nodes]
		return payload

	@classmethod
	def from_dict(cls, payload: Dict[str, Any]) -> "InrEstimate":
		return cls(
			n=int(payload["n"]),
			r=int(payload["r"]),
			value=float(payload["value"]),
			statistical_se=float(payload["statistical_se"]),
			tail_bound=float(payload["tail_bound"]),
			quadrature=QuadratureSpec(**payload["quadrature"]),
			quadrature_error=float(payload.get("quadrature_error", 0.0)),
			tail_log_constant=_optional_float(payload.get("tail_log_constant")),
			nodes=[DnrEvaluation(**node) for node in payload.get("nodes", [])],
		)


# ============================================================================
# VALIDATION HELPERS
# ============================================================================

def _check_t(t: float) -> None:
	if not (t > 0):  # also rejects NaN
		raise DomainError(f"t must be positive, got {t}")


def _check_dims(n: int, r: int) -> None:
	if n < 1 or not 1 <= r <= n:
		raise ShapeError(f"Need 1 <= r <= n, got n={n}, r={r}")


def _require_integrable(n: int, r: int) -> None:
	_check_dims(n, r)
	if r == n:
		raise UnsupportedError(
			f"r = n = {n} is the maximal codimension: D_{{n,r}} t^((n-2)/2) is not integrable at 0"
		)


# ============================================================================
# COVARIANCE BLOCKS AND THEIR SPECTRUM
# ============================================================================

def _sinh_minus_identity(s: float) -> float:
	"""sinh(s) - s without cancellation for small s."""
	if s > SERIES_CUTOFF:
		return math.sinh(s) - s
	term = s ** 3 / 6.0
	total = term
	s2 = s * s
	for k in range(2, 12):
		term *= s2 / ((2 * k) * (2 * k + 1))
		total += term
	return total


def _lambda_min(t: float) -> float:
	"""Smallest eigenvalue a + b of the j = 1 block, equal to 1/f(t)."""
	if math.isinf(t):
		return 1.0
	s = 0.5 * t
	if s <= SERIES_CUTOFF:
		return 2.0 * _sinh_minus_identity(s) / math.expm1(s)
	return (-math.expm1(-2.0 * s) - 2.0 * s * math.exp(-s)) / (-math.expm1(-s))


def _lambda_max(t: float) -> float:
	"""Eigenvalue a - b of the j = 1 block."""
	if math.isinf(t):
		return 1.0
	s = 0.5 * t
	decay = math.exp(-s)
	return (-math.expm1(-2.0 * s) + 2.0 * s * decay) / (1.0 + decay)


def column_covariance(t: float, j: int) -> ColumnCovariance:
	"""
	Covariance block of (X_ij(t), Y_ij(t)).

	Args:
		t: Squared rescaled distance, t > 0 (math.inf gives the independent limit)
		j: 1-based column index

	Returns:
		ColumnCovariance with a = 1 - t e^-t/(1 - e^-t), b = e^{-t/2}(1 - t/(1 - e^-t))
		for j = 1, and a = 1, b = e^{-t/2} otherwise
	"""
	_check_t(t)
	if j < 1:
		raise DomainError(f"Column index must be >= 1, got {j}")
	if j == 1:
		low, high = _lambda_min(t), _lambda_max(t)
		return ColumnCovariance(a=0.5 * (low + high), b=0.5 * (low - high), even=low, odd=high)
	decay = 0.0 if math.isinf(t) else math.exp(-0.5 * t)
	gap = 1.0 if math.isinf(t) else -math.expm1(-0.5 * t)
	return ColumnCovariance(a=1.0, b=decay, even=1.0 + decay, odd=gap)


def assemble_variance_matrix(params: LimitPairParams) -> np.ndarray:
	"""
	Full 2rn x 2rn covariance of (X(t), Y(t)).

	Coordinates are ordered as (column block, row): X_ij sits at index
	(j-1)*r + (i-1) and Y_ij at (n+j-1)*r + (i-1), i.e. the 2n x 2n column
	matrix tensored with I_r.
	"""
	n, r = params.n, params.r
	columns = np.zeros((2 * n, 2 * n))
	for j in range(n):
		cov = column_covariance(params.t, j + 1)
		columns[j, j] = columns[n + j, n + j] = cov.a
		columns[j, n + j] = columns[n + j, j] = cov.b
	return np.kron(columns, np.eye(r))


def closed_form_eigenvalues(t: float, n: int, r: int) -> List[Tuple[float, int]]:
	"""
	Spectrum of the covariance of (X(t), Y(t)) as (eigenvalue, multiplicity) pairs.

	1 - e^{-t/2} and 1 + e^{-t/2} each appear (n-1) r times; the j = 1 block
	contributes (1 - e^-t + t e^{-t/2})/(1 + e^{-t/2}) and
	(1 - e^-t - t e^{-t/2})/(1 - e^{-t/2}) with multiplicity r each.
	"""
	_check_t(t)
	_check_dims(n, r)
	other = column_covariance(t, 2)
	pairs = [
		(other.odd, (n - 1) * r),
		(other.even, (n - 1) * r),
		(_lambda_max(t), r),
		(_lambda_min(t), r),
	]
	return [(value, mult) for value, mult in pairs if mult > 0]


def expand_eigenvalues(pairs: Sequence[Tuple[float, int]]) -> np.ndarray:
	"""Sorted array with every eigenvalue repeated by its multiplicity."""
	return np.sort(np.concatenate([np.full(mult, value) for value, mult in pairs]))


def block_eigenvalues(matrix: np.ndarray) -> np.ndarray:
	"""
	Numeric eigenvalues of a symmetric matrix, computed per decoupled block.

	The covariance is a direct sum of 2x2 blocks once its coordinates are
	permuted; diagonalizing each connected block separately keeps relative
	accuracy on eigenvalues much smaller than the matrix norm.
	"""
	matrix = np.asarray(matrix, dtype=float)
	count, labels = connected_components(np.abs(matrix) > 0, directed=False)
	values = []
	for label in range(count):
		idx = np.flatnonzero(labels == label)
		values.append(np.linalg.eigvalsh(matrix[np.ix_(idx, idx)]))
	return np.sort(np.concatenate(values))


def variance_determinant(t: float, n: int, r: int) -> float:
	"""
	det of the covariance: (1-e^-t)^{r(n-2)} (1-e^-t+t e^{-t/2})^r (1-e^-t-t e^{-t/2})^r.

	Evaluated as a product of the stable eigenvalues.
	"""
	_check_t(t)
	_check_dims(n, r)
	one_minus = 1.0 if math.isinf(t) else -math.expm1(-t)
	return (_lambda_min(t) * _lambda_max(t)) ** r * one_minus ** ((n - 1) * r)


def f_of_t(t: float) -> float:
	"""f(t) = (1 - e^{-t/2}) / (1 - e^-t - t e^{-t/2}), the norm of the inverse covariance."""
	_check_t(t)
	return 1.0 / _lambda_min(t)


def two_point_jacobian_limit(t: float, r: int) -> float:
	"""Normalized two-point evaluation Jacobian (1 - e^-t)^r."""
	_check_t(t)
	if r < 1:
		raise DomainError(f"Codimension must be >= 1, got {r}")
	if math.isinf(t):
		return 1.0
	return (-math.expm1(-t)) ** r


# ============================================================================
# JACOBIAN
# ============================================================================

def jacobian_odet(m: np.ndarray) -> Any:
	"""
	Jacobian |det_perp M| = sqrt(det(M M^T)) of one or many r x n matrices.

	Args:
		m: Array of shape (r, n) or (..., r, n), r <= n

	Returns:
		A float for a single matrix, an array over the leading axes otherwise
	"""
	m = np.asarray(m, dtype=float)
	if m.ndim < 2:
		raise ShapeError(f"Expected an (r, n) matrix, got shape {m.shape}")
	r, n = m.shape[-2:]
	if r > n:
		raise ShapeError(f"|det_perp| needs r <= n, got r={r}, n={n}")
	if r == 1:
		out = np.linalg.norm(m[..., 0, :], axis=-1)
		return float(out) if np.ndim(out) == 0 else out
	flat = m.reshape(-1, r, n)
	try:
		pivots = np.diagonal(np.linalg.cholesky(flat @ np.swapaxes(flat, -1, -2)), axis1=-2, axis2=-1)
		out = np.prod(pivots, axis=-1)
		# Near-singular Gram matrices give meaningless small pivots
		weak = pivots.min(axis=-1) <= WEAK_PIVOT * pivots.max(axis=-1)
	except np.linalg.LinAlgError:
		out = np.empty(len(flat))
		weak = np.ones(len(flat), dtype=bool)
	if np.any(weak):
		out[weak] = np.prod(np.linalg.svd(flat[weak], compute_uv=False), axis=-1)
	out = out.reshape(m.shape[:-2])
	return float(out) if out.ndim == 0 else out


# ============================================================================
# SAMPLING
# ============================================================================

def _column_roots(t: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
	"""Square roots of the per-column eigenvalues (even, odd), PSD-clamped."""
	even = np.empty(n)
	odd = np.empty(n)
	for j in range(n):
		cov = column_covariance(t, j + 1)
		for value in (cov.even, cov.odd):
			if value < -PSD_TOLERANCE:
				raise NumericalError(f"Covariance block for t={t}, j={j + 1} is not PSD (eigenvalue {value})")
		even[j] = max(cov.even, 0.0)
		odd[j] = max(cov.odd, 0.0)
	return np.sqrt(even), np.sqrt(odd)


def _correlate(t: float, n: int, normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
	"""Map independent normals of shape (2, ..., r, n) to a sample of (X(t), Y(t))."""
	root_even, root_odd = _column_roots(t, n)
	even_part = root_even * normals[0]
	odd_part = root_odd * normals[1]
	return (even_part + odd_part) / math.sqrt(2.0), (even_part - odd_part) / math.sqrt(2.0)


def sample_pairs(params: LimitPairParams, size: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
	"""Draw `size` independent copies of (X(t), Y(t)), each array of shape (size, r, n)."""
	normals = rng.standard_normal((2, size, params.r, params.n))
	return _correlate(params.t, params.n, normals)


def sample_pair(params: LimitPairParams, rng: np.random.Generator) -> MatrixPair:
	x, y = sample_pairs(params, 1, rng)
	return MatrixPair(x=x[0], y=y[0])


def estimate_product_moment(
	params: LimitPairParams,
	n_samples: int,
	rng: np.random.Generator,
	chunk: int = DEFAULT_CHUNK,
) -> Tuple[float, float]:
	"""
	Monte Carlo estimate of E[|det_perp X(t)| |det_perp Y(t)|].

	Returns:
		(estimate, std_error)
	"""
	if n_samples < MIN_SAMPLES:
		raise DomainError(f"Need at least {MIN_SAMPLES} samples, got {n_samples}")
	moments = RunningMoments()
	for size in chunk_sizes(n_samples, chunk):
		x, y = sample_pairs(params, size, rng)
		moments = moments.merge(RunningMoments.of(jacobian_odet(x) * jacobian_odet(y)))
	return moments.mean, moments.std_error


def estimate_odet_moment(
	n: int,
	r: int,
	t: float,
	n_samples: int,
	rng: np.random.Generator,
	chunk: int = DEFAULT_CHUNK,
) -> Tuple[float, float]:
	"""Monte Carlo estimate of E|det_perp X(t)|; t = math.inf is the standard Gaussian case."""
	params = LimitPairParams(t=t, n=n, r=r)
	if n_samples < MIN_SAMPLES:
		raise DomainError(f"Need at least {MIN_SAMPLES} samples, got {n_samples}")
	moments = RunningMoments()
	for size in chunk_sizes(n_samples, chunk):
		x, _ = sample_pairs(params, size, rng)
		moments = moments.merge(RunningMoments.of(jacobian_odet(x)))
	return moments.mean, moments.std_error


def gauss_hermite_product_moment(t: float, n: int = 2, nodes: int = 64) -> float:
	"""
	Deterministic tensor-grid value of E[|det_perp X(t)| |det_perp Y(t)|] for r = 1, n = 2.

	Each column pair is written as (sqrt(even) z1 +/- sqrt(odd) z2)/sqrt(2) with
	z1, z2 independent standard normals, and the four normals are integrated on
	a probabilists' Gauss-Hermite grid with `nodes` points per axis.
	"""
	_check_t(t)
	if n != 2:
		raise UnsupportedError("The Gauss-Hermite oracle is built for (n, r) = (2, 1) only")
	if nodes < 8:
		raise DomainError("Use at least 8 Gauss-Hermite nodes per axis")
	z, w = hermegauss(nodes)
	w = w / math.sqrt(2.0 * math.pi)
	z1, z2 = np.meshgrid(z, z, indexing="ij")
	weight = np.outer(w, w).ravel()
	root_even, root_odd = _column_roots(t, n)
	xs, ys = [], []
	for j in range(n):
		even_part = root_even[j] * z1.ravel()
		odd_part = root_odd[j] * z2.ravel()
		xs.append((even_part + odd_part) / math.sqrt(2.0))
		ys.append((even_part - odd_part) / math.sqrt(2.0))
	total = 0.0
	for start in range(0, len(weight), GH_BLOCK):
		rows = slice(start, start + GH_BLOCK)
		x_norm = np.hypot(xs[0][rows, None], xs[1][None, :])
		y_norm = np.hypot(ys[0][rows, None], ys[1][None, :])
		total += float(weight[rows] @ (x_norm * y_norm) @ weight)
	return total


def integral_product_moment(t: float, n: int) -> float:
	"""
	E[|X(t)| |Y(t)|] for r = 1 and any n, as a smooth two-dimensional integral.

	With |v| = (4 pi)^{-1/2} int_0^inf (1 - e^{-s|v|^2}) s^{-3/2} ds the moment
	becomes an integral of Gaussian Laplace transforms, which factor over the
	independent columns:
		E|X||Y| = (E|X|)^2 + (1/pi) int int A(s) A(u) (prod_j (1 - q_j)^{-1/2} - 1) / (s u) dx dy
	with s = x^2, u = y^2, A(s) = prod_j (1 + 2 a_j s)^{-1/2} and
	q_j = 4 b_j^2 s u / ((1 + 2 a_j s)(1 + 2 a_j u)).
	"""
	_check_t(t)
	_check_dims(n, 1)
	blocks = [column_covariance(t, j + 1) for j in range(n)]
	a = np.array([cov.a for cov in blocks])
	b_sq = np.array([cov.b ** 2 for cov in blocks])

	def laplace(s: float) -> float:
		return math.exp(-0.5 * float(np.sum(np.log1p(2.0 * a * s))))

	def single(x: float) -> float:
		s = x * x
		if s == 0.0:
			return float(np.sum(a))
		return -math.expm1(-0.5 * float(np.sum(np.log1p(2.0 * a * s)))) / s

	def cross(y: float, x: float) -> float:
		s, u = x * x, y * y
		q_scaled = 4.0 * b_sq / ((1.0 + 2.0 * a * s) * (1.0 + 2.0 * a * u))
		if s * u == 0.0:
			ratio = 0.5 * float(np.sum(q_scaled))
		else:
			ratio = math.expm1(-0.5 * float(np.sum(np.log1p(-q_scaled * s * u)))) / (s * u)
		return laplace(s) * laplace(u) * ratio

	norm_mean, _ = integrate.quad(single, 0.0, math.inf, epsabs=1e-12, epsrel=1e-11, limit=200)
	norm_mean /= math.sqrt(math.pi)
	coupling, _ = integrate.dblquad(cross, 0.0, math.inf, 0.0, math.inf, epsabs=1e-11, epsrel=1e-10)
	return norm_mean ** 2 + coupling / math.pi


# ============================================================================
# D_{n,r} AND I_{n,r}
# ============================================================================

def _normalizer(t: float, r: int) -> float:
	"""(1 - e^-t)^{r/2}."""
	if math.isinf(t):
		return 1.0
	return (-math.expm1(-t)) ** (0.5 * r)


def _limit_product(n: int, normals: np.ndarray) -> np.ndarray:
	x, y = _correlate(math.inf, n, normals)
	return np.atleast_1d(jacobian_odet(x) * jacobian_odet(y))


def _node_moments(
	ts: Sequence[float],
	n: int,
	r: int,
	mc: MonteCarloSpec,
	threads: int = 1,
	crn: bool = True,
	coefficients: Optional[Sequence[np.ndarray]] = None,
) -> Tuple[Tuple[RunningMoments, ...], Tuple[RunningMoments, ...]]:
	"""
	Per-node moments of D_{n,r} samples over a t grid.

	With `crn` every node transforms the same normals (stream keys (seed, 0, chunk));
	otherwise node k draws its own (seed, k + 1, chunk). A sample of D at t is
	P(t) / (1 - e^-t)^{r/2} - P(inf), where P(inf) is the product for the same
	normals mapped with the t = inf covariance: its mean is E_inf^2, so the
	difference is unbiased and its variance vanishes as t grows. For each
	coefficient vector c the per-sample value sum_k c_k D_k is also accumulated,
	which gives the exact standard error of a quadrature sum under common
	random numbers.
	"""
	scales = [_normalizer(t, r) for t in ts]
	coefficients = list(coefficients or [])
	tasks = list(enumerate(chunk_sizes(mc.samples, mc.chunk)))

	def run_chunk(task: Tuple[int, int]) -> Tuple[Tuple[RunningMoments, ...], Tuple[RunningMoments, ...]]:
		index, size = task
		shared = stream(mc.seed, 0, index).standard_normal((2, size, r, n)) if crn else None
		shared_control = _limit_product(n, shared) if crn else None
		sums = [np.zeros(size) for _ in coefficients]
		per_node = []
		for k, t in enumerate(ts):
			normals = shared if crn else stream(mc.seed, k + 1, index).standard_normal((2, size, r, n))
			control = shared_control if crn else _limit_product(n, normals)
			x, y = _correlate(t, n, normals)
			sample = np.atleast_1d(jacobian_odet(x) * jacobian_odet(y)) / scales[k] - control
			per_node.append(RunningMoments.of(sample))
			for acc, coef in zip(sums, coefficients):
				if coef[k] != 0.0:
					acc += coef[k] * sample
		return tuple(per_node), tuple(RunningMoments.of(acc) for acc in sums)

	results = parallel_map(run_chunk, tasks, threads)
	per_node = merge_columns(part[0] for part in results)
	aggregates = merge_columns(part[1] for part in results) if coefficients else ()
	return per_node, aggregates


def _evaluation(t: float, moments: RunningMoments) -> DnrEvaluation:
	return DnrEvaluation(
		t=float(t),
		estimate=moments.mean,
		std_error=moments.std_error,
		n_samples=moments.count,
	)


def dnr(t: float, n: int, r: int, mc: MonteCarloSpec, threads: int = 1) -> DnrEvaluation:
	"""
	Monte Carlo value of D_{n,r}(t) = E[|det_perp X||det_perp Y|]/(1-e^-t)^{r/2} - (2pi)^r (Vol S^{n-r}/Vol S^n)^2.

	Args:
		t: Squared rescaled distance
		n, r: Dimension and codimension, r < n
		mc: Sample budget and seed
		threads: Worker threads (does not change the result)
	"""
	LimitPairParams(t=t, n=n, r=r).require_integrable()
	per_node, _ = _node_moments([t], n, r, mc, threads)
	return _evaluation(t, per_node[0])


def t_grid(t_min: float, t_max: float, points: int, spacing: str = "log") -> np.ndarray:
	"""Strictly increasing grid of `points` values from t_min to t_max."""
	if not 0 < t_min < t_max:
		raise DomainError(f"Need 0 < t_min < t_max, got {t_min}, {t_max}")
	if points < 2:
		raise DomainError("A grid needs at least two points")
	if spacing == "log":
		return np.geomspace(t_min, t_max, points)
	if spacing == "linear":
		return np.linspace(t_min, t_max, points)
	raise DomainError(f"Unknown grid spacing '{spacing}'")


def dnr_table(
	n: int,
	r: int,
	ts: Sequence[float],
	mc: MonteCarloSpec,
	crn: bool = True,
	threads: int = 1,
) -> List[DnrEvaluation]:
	"""D_{n,r} on a monotone grid, with or without common random numbers across nodes."""
	_require_integrable(n, r)
	ts = [float(t) for t in ts]
	for t in ts:
		_check_t(t)
	if any(b <= a for a, b in zip(ts, ts[1:])):
		raise DomainError("The t grid must be strictly increasing")
	per_node, _ = _node_moments(ts, n, r, mc, threads, crn=crn)
	return [_evaluation(t, moments) for t, moments in zip(ts, per_node)]


def grid_roughness(values: Sequence[float]) -> float:
	"""Sum of squared second differences of a sequence."""
	values = np.asarray(values, dtype=float)
	if values.size < 3:
		return 0.0
	return float(np.sum(np.diff(values, n=2) ** 2))


def quadrature_nodes(n: int, quad: QuadratureSpec, halve: bool = False) -> Tuple[np.ndarray, np.ndarray]:
	"""
	Nodes t_k and coefficients c_k with I_{n,r} ~ sum_k c_k D_{n,r}(t_k).

	On (0, t_split] the substitution t = u^2 turns 1/2 D(t) t^{(n-2)/2} dt into
	D(u^2) u^{n-1} du, which is bounded at u = 0 because D(t) = O(t^{-r/2}).
	"""
	low = max(2, quad.nodes_low // 2) if halve else quad.nodes_low
	high = max(2, quad.nodes_high // 2) if halve else quad.nodes_high
	x, w = leggauss(low)
	u_max = math.sqrt(quad.t_split)
	u = 0.5 * (x + 1.0) * u_max
	low_t = u ** 2
	low_c = 0.5 * u_max * w * u ** (n - 1)
	x, w = leggauss(high)
	width = quad.t_max - quad.t_split
	high_t = quad.t_split + 0.5 * (x + 1.0) * width
	high_c = 0.5 * (0.5 * width * w) * high_t ** (0.5 * (n - 2))
	return np.concatenate([low_t, high_t]), np.concatenate([low_c, high_c])


def log_tail_mass_bound(log_constant: float, n: int, t_max: float) -> float:
	"""
	Log of 1/2 * int_{t_max}^inf e^log_constant * t e^{-t/2} t^{(n-2)/2} dt.

	With t = t_max + s the integral is
	e^{-t_max/2} t_max^{n/2} int_0^inf (1 + s/t_max)^{n/2} e^{-s/2} ds. The last factor
	is of order one for every t_max, so a log_constant of order t_max/2 cancels
	against the exponent instead of overflowing.
	"""
	if math.isinf(log_constant) and log_constant < 0:
		return -math.inf
	m = 0.5 * n
	shifted, _ = integrate.quad(
		lambda s: (1.0 + s / t_max) ** m * math.exp(-0.5 * s), 0.0, math.inf, epsabs=0.0, epsrel=1e-12
	)
	return math.log(0.5) + log_constant - 0.5 * t_max + m * math.log(t_max) + math.log(shifted)


def tail_mass_bound(constant: float, n: int, t_max: float) -> float:
	"""1/2 * int_{t_max}^inf constant * t e^{-t/2} t^{(n-2)/2} dt."""
	if constant <= 0.0:
		return 0.0
	return math.exp(log_tail_mass_bound(math.log(constant), n, t_max))


def _tail_log_constant(rows: Sequence[DnrEvaluation], t_max: float) -> float:
	"""Smallest log C with |D(t)| <= C t e^{-t/2} on the rows from t_max/2 on (or the last three)."""
	tail_rows = [row for row in rows if row.t >= 0.5 * t_max] or list(rows[-3:])
	logs = [math.log(abs(row.estimate)) - math.log(row.t) + 0.5 * row.t for row in tail_rows if row.estimate != 0.0]
	return max(logs, default=-math.inf)


def estimate_inr(n: int, r: int, quad: QuadratureSpec, threads: int = 1) -> InrEstimate:
	"""
	Quadrature + Monte Carlo value of I_{n,r}.

	Args:
		n, r: Dimension and codimension, r < n
		quad: Quadrature layout, sample budget and seed
		threads: Worker threads (does not change the result)

	Returns:
		InrEstimate with per-node D values for the full rule
	"""
	_require_integrable(n, r)
	full_t, full_c = quadrature_nodes(n, quad)
	half_t, half_c = quadrature_nodes(n, quad, halve=True)
	ts = np.concatenate([full_t, half_t])
	coef_full = np.concatenate([full_c, np.zeros_like(half_c)])
	coef_half = np.concatenate([np.zeros_like(full_c), half_c])
	mc = MonteCarloSpec(samples=quad.samples_per_node, seed=quad.seed)
	logger.info(f"Estimating I_{{{n},{r}}} on {len(full_t)} nodes with {mc.samples} samples each")
	per_node, (full, half) = _node_moments(ts, n, r, mc, threads, crn=True, coefficients=[coef_full, coef_half])
	rows = [_evaluation(t, moments) for t, moments in zip(full_t, per_node[: len(full_t)])]

	log_constant = _tail_log_constant(rows, quad.t_max)
	tail_bound = math.exp(log_tail_mass_bound(log_constant + math.log(TAIL_SAFETY), n, quad.t_max))
	if tail_bound > full.std_error:
		logger.warning(f"Tail bound {tail_bound:.3g} exceeds the statistical error {full.std_error:.3g}")
	return InrEstimate(
		n=n,
		r=r,
		value=full.mean,
		statistical_se=full.std_error,
		tail_bound=float(tail_bound),
		quadrature=quad,
		quadrature_error=abs(full.mean - half.mean),
		tail_log_constant=None if math.isinf(log_constant) else float(log_constant),
		nodes=rows,
	)
