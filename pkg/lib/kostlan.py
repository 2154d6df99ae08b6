"""
Kostlan-Shub-Smale polynomial systems on S^n.

A KSS polynomial of degree d in n+1 variables is
	P(x) = sum_alpha a_alpha sqrt(d! / alpha!) x^alpha
with i.i.d. standard Gaussian a_alpha; its covariance is E[P(x)P(y)] = <x,y>^d.
Coefficients are stored in graded-colexicographic order of the multi-indices,
which every table in this module shares.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln

from lib.errors import DomainError, FrameError, ShapeError, SizeError

logger = logging.getLogger(__name__)

MAX_MONOMIALS = 2_000_000
# Above this degree, weights go through log-gamma instead of exact integers
EXACT_WEIGHT_DEGREE = 20
# Entries of a (points x monomials) block evaluated at once
EVAL_BLOCK = 1_000_000
UNIT_TOLERANCE = 1e-12
FRAME_TOLERANCE = 1e-10


# ============================================================================
# MULTI-INDICES AND WEIGHTS
# ============================================================================

@dataclass(frozen=True)
class MultiIndex:
	exponents: Tuple[int, ...]

	@property
	def degree(self) -> int:
		return sum(self.exponents)


def monomial_count(n: int, d: int) -> int:
	"""binom(d + n, n), the dimension of degree-d forms in n+1 variables."""
	return math.comb(d + n, n)


@lru_cache(maxsize=64)
def multi_index_array(n: int, d: int) -> np.ndarray:
	"""
	All exponent vectors of degree d in n+1 variables, one per row.

	Rows are sorted with the last exponent as primary key, then the one before
	it, and so on (graded colex). Cached; the returned array is read-only.
	"""
	if n < 1 or d < 1:
		raise DomainError(f"Need n >= 1 and d >= 1, got n={n}, d={d}")
	count = monomial_count(n, d)
	if count > MAX_MONOMIALS:
		raise SizeError(f"{count} monomials for n={n}, d={d} exceeds the limit of {MAX_MONOMIALS}")
	# Stars and bars: n bar positions among d + n slots
	bars = np.array(list(combinations(range(d + n), n)), dtype=np.int64).reshape(count, n)
	edges = np.concatenate([np.full((count, 1), -1), bars, np.full((count, 1), d + n)], axis=1)
	alpha = np.diff(edges, axis=1) - 1
	alpha = alpha[np.lexsort(alpha.T)]
	alpha.setflags(write=False)
	return alpha


def enumerate_multi_indices(n: int, d: int) -> List[MultiIndex]:
	return [MultiIndex(tuple(int(e) for e in row)) for row in multi_index_array(n, d)]


@lru_cache(maxsize=64)
def _index_lookup(n: int, d: int) -> Dict[Tuple[int, ...], int]:
	return {tuple(int(e) for e in row): k for k, row in enumerate(multi_index_array(n, d))}


def index_of(n: int, d: int, exponents: Sequence[int]) -> int:
	"""Position of a multi-index in the shared ordering."""
	key = tuple(int(e) for e in exponents)
	if len(key) != n + 1 or sum(key) != d or min(key) < 0:
		raise DomainError(f"{key} is not a degree-{d} multi-index in {n + 1} variables")
	return _index_lookup(n, d)[key]


def log_multinomial(d: int, alpha: np.ndarray) -> np.ndarray:
	"""log(d! / prod alpha_i!) for each row of alpha."""
	alpha = np.asarray(alpha)
	return gammaln(d + 1.0) - gammaln(alpha + 1.0).sum(axis=-1)


@lru_cache(maxsize=64)
def weight_array(n: int, d: int) -> np.ndarray:
	"""sqrt(d! / alpha!) aligned with `multi_index_array(n, d)`; read-only."""
	alpha = multi_index_array(n, d)
	if d <= EXACT_WEIGHT_DEGREE:
		top = math.factorial(d)
		weights = np.array(
			[math.sqrt(top // math.prod(math.factorial(int(e)) for e in row)) for row in alpha]
		)
	else:
		weights = np.exp(0.5 * log_multinomial(d, alpha))
	weights.setflags(write=False)
	return weights


# ============================================================================
# POINTS, POLYNOMIALS AND SYSTEMS
# ============================================================================

@dataclass(frozen=True, eq=False)
class SpherePoint:
	coords: np.ndarray

	def __post_init__(self) -> None:
		norm = float(np.linalg.norm(self.coords))
		if abs(norm - 1.0) > UNIT_TOLERANCE:
			raise DomainError(f"Sphere points must be unit vectors, got norm {norm}")

	@classmethod
	def from_vector(cls, vector: Sequence[float]) -> "SpherePoint":
		vector = np.asarray(vector, dtype=float)
		return cls(vector / np.linalg.norm(vector))


@dataclass(frozen=True, eq=False)
class KostlanPolynomial:
	n: int
	d: int
	coefficients: np.ndarray
	weights: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

	def __post_init__(self) -> None:
		expected = monomial_count(self.n, self.d)
		coefficients = np.asarray(self.coefficients, dtype=float)
		if coefficients.shape != (expected,):
			raise ShapeError(f"Expected {expected} coefficients for n={self.n}, d={self.d}, got {coefficients.shape}")
		object.__setattr__(self, "coefficients", coefficients)
		object.__setattr__(self, "weights", weight_array(self.n, self.d))


@dataclass(frozen=True, eq=False)
class KostlanSystem:
	"""
	r polynomials sharing (n, d), optionally composed with a rotation.

	With `frame` = R, the system evaluates x -> P(R^T x): its zero set is the
	base zero set moved by R.
	"""

	polynomials: Tuple[KostlanPolynomial, ...]
	frame: Optional[np.ndarray] = None

	def __post_init__(self) -> None:
		polys = tuple(self.polynomials)
		if not polys:
			raise ShapeError("A system needs at least one polynomial")
		n, d = polys[0].n, polys[0].d
		if any(p.n != n or p.d != d for p in polys):
			raise ShapeError("All polynomials in a system must share n and d")
		if len(polys) > n:
			raise ShapeError(f"At most n={n} polynomials, got {len(polys)}")
		object.__setattr__(self, "polynomials", polys)
		if self.frame is not None:
			object.__setattr__(self, "frame", _check_rotation(self.frame, n))

	@property
	def n(self) -> int:
		return self.polynomials[0].n

	@property
	def d(self) -> int:
		return self.polynomials[0].d

	@property
	def r(self) -> int:
		return len(self.polynomials)

	@property
	def coefficient_matrix(self) -> np.ndarray:
		return np.stack([p.coefficients for p in self.polynomials])

	def rotated(self, rotation: np.ndarray) -> "KostlanSystem":
		rotation = _check_rotation(rotation, self.n)
		frame = rotation if self.frame is None else rotation @ self.frame
		return KostlanSystem(self.polynomials, frame=frame)


PolyLike = Union[KostlanPolynomial, KostlanSystem]


def _check_rotation(rotation: np.ndarray, n: int) -> np.ndarray:
	rotation = np.asarray(rotation, dtype=float)
	if rotation.shape != (n + 1, n + 1):
		raise ShapeError(f"Rotation must be {(n + 1, n + 1)}, got {rotation.shape}")
	if not np.allclose(rotation @ rotation.T, np.eye(n + 1), atol=FRAME_TOLERANCE, rtol=0.0):
		raise FrameError("Rotation matrix is not orthogonal")
	return rotation


def as_system(poly: PolyLike) -> KostlanSystem:
	if isinstance(poly, KostlanSystem):
		return poly
	return KostlanSystem((poly,))


def from_coefficients(n: int, d: int, coefficients: np.ndarray) -> KostlanSystem:
	"""Build a system from an (r, binom(d+n, n)) coefficient matrix."""
	coefficients = np.atleast_2d(np.asarray(coefficients, dtype=float))
	return KostlanSystem(tuple(KostlanPolynomial(n, d, row) for row in coefficients))


def sample_system(n: int, d: int, r: int, rng: np.random.Generator) -> KostlanSystem:
	"""r independent KSS polynomials; all coefficients i.i.d. N(0, 1) drawn from `rng`."""
	if not 1 <= r <= n:
		raise ShapeError(f"Need 1 <= r <= n, got n={n}, r={r}")
	return from_coefficients(n, d, rng.standard_normal((r, monomial_count(n, d))))


def monomial_system(n: int, d: int, exponents: Sequence[int], scale: float = 1.0) -> KostlanSystem:
	"""
	Single polynomial whose only nonzero coefficient sits on `exponents`.

	The coefficient is divided by the KSS weight, so the polynomial is exactly
	scale * x^exponents.
	"""
	k = index_of(n, d, exponents)
	coefficients = np.zeros(monomial_count(n, d))
	coefficients[k] = scale / weight_array(n, d)[k]
	return from_coefficients(n, d, coefficients)


def linear_form(n: int, axis: int = 0) -> KostlanSystem:
	"""The degree-1 polynomial X_axis; its zero set is a great S^{n-1}."""
	exponents = [0] * (n + 1)
	exponents[axis] = 1
	return monomial_system(n, 1, exponents)


def sum_of_squares_power(n: int, d: int) -> KostlanSystem:
	"""(X_0^2 + ... + X_n^2)^{d/2} for even d: equal to 1 on the sphere, so no zeros."""
	if d % 2:
		raise DomainError(f"Degree must be even, got {d}")
	alpha = multi_index_array(n, d)
	half = d // 2
	even = np.all(alpha % 2 == 0, axis=1)
	coefficients = np.zeros(len(alpha))
	beta = alpha[even] // 2
	coefficients[even] = np.exp(log_multinomial(half, beta) - 0.5 * log_multinomial(d, alpha[even]))
	return from_coefficients(n, d, coefficients)


# ============================================================================
# EVALUATION
# ============================================================================

def _as_points(points: Any, n: int) -> Tuple[np.ndarray, bool]:
	if isinstance(points, SpherePoint):
		points = points.coords
	pts = np.asarray(points, dtype=float)
	single = pts.ndim == 1
	pts = np.atleast_2d(pts)
	if pts.ndim != 2 or pts.shape[1] != n + 1:
		raise ShapeError(f"Points must have {n + 1} coordinates, got shape {np.shape(points)}")
	return pts, single


def _power_table(points: np.ndarray, d: int) -> np.ndarray:
	"""powers[p, i, k] = points[p, i] ** k for k <= d."""
	powers = np.empty(points.shape + (d + 1,))
	powers[..., 0] = 1.0
	for k in range(1, d + 1):
		powers[..., k] = powers[..., k - 1] * points
	return powers


def _monomials(powers: np.ndarray, alpha: np.ndarray) -> np.ndarray:
	mono = powers[:, 0, alpha[:, 0]]
	for i in range(1, alpha.shape[1]):
		mono = mono * powers[:, i, alpha[:, i]]
	return mono


def _block_rows(count: int) -> int:
	return max(1, EVAL_BLOCK // max(count, 1))


def evaluate(system: PolyLike, points: Any) -> np.ndarray:
	"""
	Values of every polynomial of the system.

	Args:
		system: KostlanSystem or a single KostlanPolynomial
		points: One point (n+1,), a SpherePoint, or a batch (P, n+1)

	Returns:
		Array (r,) for one point, (P, r) for a batch
	"""
	system = as_system(system)
	pts, single = _as_points(points, system.n)
	if system.frame is not None:
		pts = pts @ system.frame
	alpha = multi_index_array(system.n, system.d)
	scaled = system.coefficient_matrix * weight_array(system.n, system.d)
	out = np.empty((len(pts), system.r))
	rows = _block_rows(len(alpha))
	for start in range(0, len(pts), rows):
		block = pts[start:start + rows]
		out[start:start + rows] = _monomials(_power_table(block, system.d), alpha) @ scaled.T
	return out[0] if single else out


def evaluate_gradient(system: PolyLike, points: Any) -> np.ndarray:
	"""
	Ambient partial derivatives dP_k/dx_i.

	Returns:
		Array (r, n+1) for one point, (P, r, n+1) for a batch
	"""
	system = as_system(system)
	pts, single = _as_points(points, system.n)
	base = pts @ system.frame if system.frame is not None else pts
	alpha = multi_index_array(system.n, system.d)
	scaled = system.coefficient_matrix * weight_array(system.n, system.d)
	out = np.empty((len(pts), system.r, system.n + 1))
	rows = _block_rows(len(alpha) * (system.n + 1))
	for start in range(0, len(base), rows):
		block = base[start:start + rows]
		powers = _power_table(block, system.d)
		for i in range(system.n + 1):
			lowered = alpha.copy()
			lowered[:, i] = np.maximum(lowered[:, i] - 1, 0)
			mono = _monomials(powers, lowered) * alpha[:, i]
			out[start:start + rows, :, i] = mono @ scaled.T
	if system.frame is not None:
		out = out @ system.frame.T
	return out[0] if single else out


def covariance_oracle(x: Sequence[float], y: Sequence[float], d: int) -> float:
	"""E[P(x) P(y)] = <x, y>^d for a KSS polynomial."""
	return float(np.dot(x, y)) ** d


# ============================================================================
# RESTRICTION TO GREAT CIRCLES
# ============================================================================

class CircleRestriction:
	"""
	theta -> P(cos(theta) u + sin(theta) v) for one circle or a batch of circles.

	With u, v of shape (n+1,) calling on thetas of shape (T,) gives (T,);
	with (K, n+1) frames it gives (K, T).
	"""

	def __init__(self, poly: PolyLike, u: np.ndarray, v: np.ndarray, component: int = 0):
		self.system = as_system(poly)
		u = np.asarray(u, dtype=float)
		v = np.asarray(v, dtype=float)
		if u.shape != v.shape or u.shape[-1] != self.system.n + 1:
			raise ShapeError(f"Circle frame shapes {u.shape}, {v.shape} do not match n={self.system.n}")
		dots = np.abs(np.sum(u * v, axis=-1))
		norms = np.concatenate([np.atleast_1d(np.linalg.norm(u, axis=-1)), np.atleast_1d(np.linalg.norm(v, axis=-1))])
		if np.any(dots > FRAME_TOLERANCE) or np.any(np.abs(norms - 1.0) > FRAME_TOLERANCE):
			raise FrameError("Circle frame (u, v) is not orthonormal")
		self.single = u.ndim == 1
		self.u = np.atleast_2d(u)
		self.v = np.atleast_2d(v)
		self.component = component

	@property
	def degree(self) -> int:
		return self.system.d

	@property
	def circles(self) -> int:
		return len(self.u)

	def points(self, theta: np.ndarray) -> np.ndarray:
		"""Points on every circle at the given angles, shape (K, T, n+1)."""
		theta = np.asarray(theta, dtype=float)
		return np.cos(theta)[None, :, None] * self.u[:, None, :] + np.sin(theta)[None, :, None] * self.v[:, None, :]

	def __call__(self, theta: Any) -> Any:
		theta_arr = np.atleast_1d(np.asarray(theta, dtype=float))
		pts = self.points(theta_arr)
		values = evaluate(self.system, pts.reshape(-1, pts.shape[-1]))[:, self.component]
		values = values.reshape(self.circles, len(theta_arr))
		if self.single:
			values = values[0]
			return float(values[0]) if np.ndim(theta) == 0 else values
		return values

	def at(self, circle_index: np.ndarray, theta: np.ndarray) -> np.ndarray:
		"""Values at paired (circle, angle) entries."""
		circle_index = np.asarray(circle_index, dtype=int)
		theta = np.asarray(theta, dtype=float)
		pts = np.cos(theta)[:, None] * self.u[circle_index] + np.sin(theta)[:, None] * self.v[circle_index]
		if len(pts) == 0:
			return np.empty(0)
		return evaluate(self.system, pts)[:, self.component]

	def point_at(self, circle_index: np.ndarray, theta: np.ndarray) -> np.ndarray:
		circle_index = np.asarray(circle_index, dtype=int)
		theta = np.asarray(theta, dtype=float)
		return np.cos(theta)[:, None] * self.u[circle_index] + np.sin(theta)[:, None] * self.v[circle_index]


def restrict_to_circle(poly: PolyLike, circle: Any, component: int = 0) -> CircleRestriction:
	"""
	Restriction of a polynomial to the great circle spanned by an orthonormal pair.

	Args:
		poly: KostlanPolynomial or KostlanSystem
		circle: (u, v) pair, or anything unpacking to one (e.g. a GreatCircle)
		component: Which polynomial of a system to restrict

	Returns:
		A CircleRestriction; a trigonometric polynomial of degree <= d in theta
	"""
	u, v = circle
	return CircleRestriction(poly, u, v, component=component)


# ============================================================================
# RECORDS
# ============================================================================

def system_to_record(system: KostlanSystem, seed: Optional[int] = None, keys: Sequence[int] = ()) -> Dict[str, Any]:
	"""Flat JSON-ready record of a system."""
	return {
		"n": system.n,
		"d": system.d,
		"r": system.r,
		"seed": seed,
		"keys": [int(k) for k in keys],
		"coefficients": system.coefficient_matrix.tolist(),
		"frame": None if system.frame is None else system.frame.tolist(),
	}


def system_from_record(record: Dict[str, Any]) -> KostlanSystem:
	system = from_coefficients(int(record["n"]), int(record["d"]), np.asarray(record["coefficients"], dtype=float))
	if system.r != int(record["r"]):
		raise ShapeError(f"Record declares r={record['r']} but holds {system.r} polynomials")
	frame = record.get("frame")
	return system if frame is None else KostlanSystem(system.polynomials, frame=np.asarray(frame, dtype=float))
