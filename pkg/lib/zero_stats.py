"""
Linear statistics of real zero sets on S^n.

Hypersurface statistics <|dV_Z|, phi> are estimated with the Crofton formula:
random great circles are intersected with the zero set, and the intersection
points are found by sign changes of the restricted trigonometric polynomial.
For n = 2 a marching-triangles contour on an icosphere gives an independent
length estimate, and `cap_is_hole` probes whether a spherical cap misses the
zero set.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Tuple

import numpy as np
from scipy import integrate, special
from scipy.linalg import null_space
from scipy.spatial.transform import Rotation
from scipy.stats import qmc

from lib.errors import DomainError, FrameError, ShapeError, UnsupportedError
from lib.kostlan import CircleRestriction, KostlanSystem, PolyLike, as_system, evaluate, restrict_to_circle
from lib.limit_law import sphere_volume

logger = logging.getLogger(__name__)

MIN_GRID = 64
DEFAULT_OVERSAMPLE = 8.0
ROOT_TOLERANCE = 1e-10
COLLINEAR_ANGLE = 1e-8
# |g| below this fraction of max|g| with no sign change counts as a possible tangency
TANGENCY_RATIO = 1e-8
TANGENCY_POINTS = 33
CIRCLE_BATCH = 256
HOLE_SPACING = 0.3
HOLE_BATCH = 4096
# Marching meshes coarser than this multiple of 1/sqrt(d) are reported as under-resolved
MARCHING_RESOLUTION = 1.0


# ============================================================================
# TYPES
# ============================================================================

@dataclass(frozen=True, eq=False)
class GreatCircle:
	u: np.ndarray
	v: np.ndarray

	def __post_init__(self) -> None:
		if abs(float(np.dot(self.u, self.v))) > 1e-10:
			raise FrameError("Great-circle frame vectors are not orthogonal")
		for vec in (self.u, self.v):
			if abs(float(np.linalg.norm(vec)) - 1.0) > 1e-12:
				raise FrameError("Great-circle frame vectors must be unit vectors")

	def __iter__(self):
		yield self.u
		yield self.v

	def point(self, theta: float) -> np.ndarray:
		return math.cos(theta) * self.u + math.sin(theta) * self.v


@dataclass(frozen=True, eq=False)
class RootOnCircle:
	theta: float
	point: np.ndarray
	residual: float
	circle: int = 0


@dataclass(frozen=True)
class CountSummary:
	mean: float
	std: float
	min: int
	max: int

	@classmethod
	def of(cls, counts: np.ndarray) -> "CountSummary":
		counts = np.asarray(counts)
		if counts.size == 0:
			return cls(0.0, 0.0, 0, 0)
		std = float(np.std(counts, ddof=1)) if counts.size > 1 else 0.0
		return cls(float(np.mean(counts)), std, int(counts.min()), int(counts.max()))


@dataclass(frozen=True)
class CroftonEstimate:
	value: float
	std_error: float
	n_geodesics: int
	per_geodesic_counts: CountSummary


@dataclass(frozen=True)
class ContourLength:
	"""Marching length at mesh spacing h; refined_value extrapolates from h and h/2."""

	value: float
	resolution: float
	refined_value: float
	fine_value: float = 0.0
	under_resolved: bool = False


@dataclass(frozen=True, eq=False)
class Cap:
	center: np.ndarray
	radius: float

	def __post_init__(self) -> None:
		center = np.asarray(self.center, dtype=float)
		if abs(float(np.linalg.norm(center)) - 1.0) > 1e-12:
			raise DomainError("Cap center must be a unit vector")
		if not 0.0 < self.radius < math.pi:
			raise DomainError(f"Cap radius must lie in (0, pi), got {self.radius}")
		object.__setattr__(self, "center", center)


@dataclass(frozen=True)
class TestFunction:
	"""
	Antipodally even test function phi on S^n with its integrals over S^n.

	`fn` maps points (P, n+1) to values (P,); `integral(n)` and
	`integral_sq(n)` return the integrals of phi and phi^2 over the whole sphere.
	"""

	__test__ = False

	name: str
	fn: Callable[[np.ndarray], np.ndarray]
	integral: Callable[[int], float]
	integral_sq: Callable[[int], float]

	def __call__(self, points: np.ndarray) -> np.ndarray:
		return self.fn(np.atleast_2d(points))


# ============================================================================
# BUILT-IN TEST FUNCTIONS
# ============================================================================

def _constant(c: float) -> TestFunction:
	return TestFunction(
		name=f"const:{c:g}",
		fn=lambda pts: np.full(len(pts), c),
		integral=lambda n: c * sphere_volume(n),
		integral_sq=lambda n: c * c * sphere_volume(n),
	)


def _coordinate_square(axis: int) -> TestFunction:
	# int x_i^2 = Vol/(n+1), int x_i^4 = 3 Vol/((n+1)(n+3))
	return TestFunction(
		name=f"coord2:{axis}",
		fn=lambda pts: pts[:, axis] ** 2,
		integral=lambda n: sphere_volume(n) / (n + 1),
		integral_sq=lambda n: 3.0 * sphere_volume(n) / ((n + 1) * (n + 3)),
	)


def _cap_bump(axis: int, rho: float) -> TestFunction:
	"""(1 - (angle/rho)^2)^2 on the caps of angular radius rho around +/- e_axis."""
	if not 0.0 < rho <= math.pi / 2:
		raise DomainError(f"Bump radius must lie in (0, pi/2], got {rho}")

	def profile(angle: np.ndarray) -> np.ndarray:
		return np.where(angle < rho, (1.0 - (angle / rho) ** 2) ** 2, 0.0)

	def fn(pts: np.ndarray) -> np.ndarray:
		return profile(np.arccos(np.clip(np.abs(pts[:, axis]), 0.0, 1.0)))

	def integral_of(power: int) -> Callable[[int], float]:
		def compute(n: int) -> float:
			radial, _ = integrate.quad(lambda a: float(profile(np.array(a))) ** power * math.sin(a) ** (n - 1), 0.0, rho)
			return 2.0 * sphere_volume(n - 1) * radial
		return compute

	return TestFunction(name=f"capbump:{axis}:{rho:g}", fn=fn, integral=integral_of(1), integral_sq=integral_of(2))


def builtin_phi(spec: str) -> TestFunction:
	"""
	Parse a test-function name.

	Args:
		spec: "const", "const:c", "coord2:i" or "capbump:i:rho"

	Returns:
		The matching TestFunction
	"""
	parts = spec.strip().split(":")
	try:
		if parts[0] == "const" and len(parts) <= 2:
			return _constant(float(parts[1]) if len(parts) == 2 else 1.0)
		if parts[0] == "coord2" and len(parts) == 2:
			return _coordinate_square(int(parts[1]))
		if parts[0] == "capbump" and len(parts) == 3:
			return _cap_bump(int(parts[1]), float(parts[2]))
	except ValueError as e:
		raise DomainError(f"Malformed test function '{spec}': {e}") from e
	raise DomainError(f"Unknown test function '{spec}' (expected const[:c], coord2:i or capbump:i:rho)")


# ============================================================================
# GREAT CIRCLES
# ============================================================================

def sample_great_circles(n: int, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
	"""
	`count` independent uniformly distributed great circles as frames (U, V), each (count, n+1).

	Two Gaussian vectors are orthonormalized; pairs closer than 1e-8 rad to
	collinear are redrawn.
	"""
	if n < 1:
		raise DomainError(f"Need n >= 1, got {n}")
	a = rng.standard_normal((count, n + 1))
	b = rng.standard_normal((count, n + 1))
	while True:
		u = a / np.linalg.norm(a, axis=1, keepdims=True)
		w = b - np.sum(b * u, axis=1, keepdims=True) * u
		w_norm = np.linalg.norm(w, axis=1)
		bad = w_norm < COLLINEAR_ANGLE * np.linalg.norm(b, axis=1)
		if not np.any(bad):
			break
		a[bad] = rng.standard_normal((int(bad.sum()), n + 1))
		b[bad] = rng.standard_normal((int(bad.sum()), n + 1))
	v = w / w_norm[:, None]
	v = v - np.sum(v * u, axis=1, keepdims=True) * u
	v /= np.linalg.norm(v, axis=1, keepdims=True)
	return u, v


def sample_great_circle(n: int, rng: np.random.Generator) -> GreatCircle:
	u, v = sample_great_circles(n, 1, rng)
	return GreatCircle(u[0], v[0])


# ============================================================================
# ROOTS ON CIRCLES
# ============================================================================

def grid_size(d: int, oversample: float = DEFAULT_OVERSAMPLE) -> int:
	return max(MIN_GRID, int(math.ceil(oversample * 2 * d)), 2 * d + 2)


class _TrigSeries:
	"""Exact Fourier representation of degree-<=d restrictions, one row per circle."""

	def __init__(self, samples: np.ndarray, d: int):
		count = samples.shape[1]
		spectrum = np.fft.rfft(samples, axis=1) / count
		spectrum[:, 1:] *= 2.0
		self.coefficients = spectrum[:, : d + 1]
		self.frequencies = np.arange(d + 1)

	def grid(self, m: int) -> np.ndarray:
		padded = np.zeros((len(self.coefficients), m // 2 + 1), dtype=complex)
		padded[:, : self.coefficients.shape[1]] = self.coefficients
		padded[:, 1:] /= 2.0
		return np.fft.irfft(padded, n=m, axis=1) * m

	def at(self, circle: np.ndarray, theta: np.ndarray) -> np.ndarray:
		phases = np.exp(1j * theta[:, None] * self.frequencies[None, :])
		return np.real(np.sum(self.coefficients[circle] * phases, axis=1))


def _sign_brackets(values: np.ndarray, thetas: np.ndarray, cyclic: bool) -> Tuple[np.ndarray, np.ndarray]:
	"""Indices of intervals with a sign change, for rows of values on the same angles."""
	positive = values >= 0
	if cyclic:
		change = positive != np.roll(positive, -1, axis=1)
	else:
		change = np.zeros_like(positive)
		change[:, :-1] = positive[:, :-1] != positive[:, 1:]
	return np.nonzero(change)


def _tangency_windows(values: np.ndarray, scale: float) -> List[Tuple[int, int]]:
	"""
	Runs of grid points that are nearly zero without a neighbouring sign change.

	Each run (first, last) is widened by one grid point on each side by the
	caller; runs touching both ends of the cyclic grid are merged.
	"""
	m = len(values)
	positive = values >= 0
	flat = (positive == np.roll(positive, 1)) & (positive == np.roll(positive, -1))
	candidates = np.flatnonzero((np.abs(values) < TANGENCY_RATIO * scale) & flat)
	if candidates.size == 0:
		return []
	runs: List[List[int]] = [[int(candidates[0]), int(candidates[0])]]
	for k in candidates[1:]:
		if k == runs[-1][1] + 1:
			runs[-1][1] = int(k)
		else:
			runs.append([int(k), int(k)])
	if len(runs) > 1 and runs[0][0] == 0 and runs[-1][1] == m - 1:
		last = runs.pop()
		runs[0] = [last[0] - m, runs[0][1]]
	return [(first, last) for first, last in runs]


def _bisect(series: _TrigSeries, circle: np.ndarray, lo: np.ndarray, hi: np.ndarray, tol: float) -> np.ndarray:
	if lo.size == 0:
		return lo
	lo_positive = series.at(circle, lo) >= 0
	width = float(np.max(hi - lo))
	steps = max(0, int(math.ceil(math.log2(width / tol)))) if width > tol else 0
	for _ in range(steps):
		mid = 0.5 * (lo + hi)
		same = (series.at(circle, mid) >= 0) == lo_positive
		lo = np.where(same, mid, lo)
		hi = np.where(same, hi, mid)
	return 0.5 * (lo + hi)


def find_roots(
	restriction: CircleRestriction,
	oversample: float = DEFAULT_OVERSAMPLE,
	tol: float = ROOT_TOLERANCE,
) -> Tuple[np.ndarray, np.ndarray]:
	"""
	Sign-change roots of every circle of a restriction.

	The restriction is sampled at 2d+2 equispaced angles, which determines it
	exactly as a trigonometric polynomial; the sign grid of
	m = max(64, ceil(oversample * 2d)) points comes from that series, and
	bisection runs on the series down to angular width `tol`.

	Returns:
		(circle_index, theta) arrays sorted by circle then angle
	"""
	if oversample <= 0:
		raise DomainError("Oversample factor must be positive")
	d = restriction.degree
	samples_at = 2 * np.pi * np.arange(2 * d + 2) / (2 * d + 2)
	series = _TrigSeries(np.atleast_2d(restriction(samples_at)), d)
	m = grid_size(d, oversample)
	step = 2 * np.pi / m
	values = series.grid(m)

	circle, k = _sign_brackets(values, np.arange(m) * step, cyclic=True)
	lo_parts = [k * step]
	hi_parts = [(k + 1) * step]
	circle_parts = [circle]

	scales = np.max(np.abs(values), axis=1)
	for c in range(len(values)):
		for first, last in _tangency_windows(values[c], scales[c]):
			start = (first - 1) * step
			stop = (last + 1) * step
			dense = np.linspace(start, stop, TANGENCY_POINTS * (last - first + 1))
			dense_values = series.at(np.full(len(dense), c), dense)
			_, idx = _sign_brackets(dense_values[None, :], dense, cyclic=False)
			if idx.size:
				logger.debug(f"Tangency guard found {idx.size} crossings on circle {c}")
				lo_parts.append(dense[idx])
				hi_parts.append(dense[idx + 1])
				circle_parts.append(np.full(idx.size, c))

	circle = np.concatenate(circle_parts).astype(int)
	theta = np.mod(_bisect(series, circle, np.concatenate(lo_parts), np.concatenate(hi_parts), tol), 2 * np.pi)
	order = np.lexsort((theta, circle))
	circle, theta = circle[order], theta[order]
	counts = np.bincount(circle, minlength=restriction.circles)
	if np.any(counts > 2 * d):
		logger.warning(f"{int(np.sum(counts > 2 * d))} circles report more than 2d={2 * d} roots")
	return circle, theta


def count_roots_on_circle(
	restriction: CircleRestriction,
	d: Optional[int] = None,
	oversample: float = DEFAULT_OVERSAMPLE,
	tol: float = ROOT_TOLERANCE,
) -> List[RootOnCircle]:
	"""
	Isolate the zeros of a circle restriction.

	Args:
		restriction: From `restrict_to_circle` (one or several circles)
		d: Degree of the restriction; defaults to the polynomial's degree
		oversample: Grid points per unit of 2d
		tol: Final bracket width in radians

	Returns:
		RootOnCircle entries; non-certified (near-double roots may be missed)
	"""
	if d is not None and d != restriction.degree:
		raise ShapeError(f"Restriction has degree {restriction.degree}, not {d}")
	circle, theta = find_roots(restriction, oversample, tol)
	points = restriction.point_at(circle, theta)
	residuals = np.abs(restriction.at(circle, theta))
	return [
		RootOnCircle(theta=float(t), point=p, residual=float(res), circle=int(c))
		for c, t, p, res in zip(circle, theta, points, residuals)
	]


# ============================================================================
# CROFTON ESTIMATOR
# ============================================================================

def _as_phi(phi: Any) -> Callable[[np.ndarray], np.ndarray]:
	if phi is None:
		return lambda pts: np.ones(len(pts))
	return phi


def crofton_statistic(
	system: PolyLike,
	phi: Any,
	K: int,
	rng: Optional[np.random.Generator] = None,
	oversample: float = DEFAULT_OVERSAMPLE,
	tol: float = ROOT_TOLERANCE,
	circles: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> CroftonEstimate:
	"""
	Crofton estimate of the zero-set statistic int_Z phi on S^n.

	Args:
		system: A single polynomial (r = 1)
		phi: TestFunction, callable on (P, n+1) points, or None for phi = 1
		K: Number of random great circles
		rng: Source of the circles (unused when `circles` is given)
		circles: Optional pre-sampled frames (U, V), each (K, n+1)

	Returns:
		CroftonEstimate with value Vol(S^{n-1})/2 * mean over circles of sum_roots phi
	"""
	system = as_system(system)
	if system.r != 1:
		raise UnsupportedError(f"Crofton estimation handles hypersurfaces only (r = 1), got r = {system.r}")
	if K < 1:
		raise DomainError("Need at least one great circle")
	if circles is None:
		if rng is None:
			raise DomainError("Either rng or circles must be given")
		circles = sample_great_circles(system.n, K, rng)
	u_all, v_all = (np.atleast_2d(np.asarray(c, dtype=float)) for c in circles)
	if len(u_all) != K:
		raise ShapeError(f"Got {len(u_all)} circles for K={K}")
	weight = _as_phi(phi)
	sums = np.zeros(K)
	counts = np.zeros(K, dtype=int)
	for start in range(0, K, CIRCLE_BATCH):
		stop = min(K, start + CIRCLE_BATCH)
		restriction = restrict_to_circle(system, (u_all[start:stop], v_all[start:stop]))
		circle, theta = find_roots(restriction, oversample, tol)
		if circle.size:
			values = np.asarray(weight(restriction.point_at(circle, theta)), dtype=float)
			sums[start:stop] = np.bincount(circle, weights=values, minlength=stop - start)
			counts[start:stop] = np.bincount(circle, minlength=stop - start)
	per_circle = 0.5 * sphere_volume(system.n - 1) * sums
	std_error = float(np.std(per_circle, ddof=1) / math.sqrt(K)) if K > 1 else 0.0
	return CroftonEstimate(
		value=float(np.mean(per_circle)),
		std_error=std_error,
		n_geodesics=K,
		per_geodesic_counts=CountSummary.of(counts),
	)


# ============================================================================
# MARCHING TRIANGLES ON S^2
# ============================================================================

# Generic fixed orientation so no mesh vertex falls on a coordinate plane
_MESH_ORIENTATION = Rotation.from_euler("zyx", [0.3141, 0.7071, 1.1180]).as_matrix()


def _icosahedron() -> Tuple[np.ndarray, np.ndarray]:
	g = (1.0 + math.sqrt(5.0)) / 2.0
	vertices = np.array([
		[-1, g, 0], [1, g, 0], [-1, -g, 0], [1, -g, 0],
		[0, -1, g], [0, 1, g], [0, -1, -g], [0, 1, -g],
		[g, 0, -1], [g, 0, 1], [-g, 0, -1], [-g, 0, 1],
	], dtype=float)
	faces = np.array([
		[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
		[1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
		[3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
		[4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
	])
	return vertices / np.linalg.norm(vertices, axis=1, keepdims=True), faces


def _face_edges(faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
	"""Unique undirected edges and, per face, the edge ids of (v0v1, v1v2, v2v0)."""
	pairs = np.stack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=1).reshape(-1, 2)
	edges, inverse = np.unique(np.sort(pairs, axis=1), axis=0, return_inverse=True)
	return edges, inverse.reshape(-1, 3)


def icosphere(level: int) -> Tuple[np.ndarray, np.ndarray]:
	"""Geodesic icosphere after `level` midpoint subdivisions: (vertices, faces)."""
	if level < 0:
		raise DomainError(f"Subdivision level must be non-negative, got {level}")
	vertices, faces = _icosahedron()
	for _ in range(level):
		edges, face_edges = _face_edges(faces)
		mids = vertices[edges[:, 0]] + vertices[edges[:, 1]]
		mids /= np.linalg.norm(mids, axis=1, keepdims=True)
		base = len(vertices)
		vertices = np.concatenate([vertices, mids])
		a, b, c = faces.T
		ab, bc, ca = (face_edges[:, i] + base for i in range(3))
		faces = np.concatenate([
			np.stack([a, ab, ca], axis=1),
			np.stack([ab, b, bc], axis=1),
			np.stack([ca, bc, c], axis=1),
			np.stack([ab, bc, ca], axis=1),
		])
	return vertices @ _MESH_ORIENTATION.T, faces


def _mesh_spacing(vertices: np.ndarray, edges: np.ndarray) -> float:
	chords = np.linalg.norm(vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=1)
	return float(2.0 * np.max(np.arcsin(np.minimum(chords / 2.0, 1.0))))


def _contour_length(poly: KostlanSystem, level: int) -> Tuple[float, float]:
	vertices, faces = icosphere(level)
	edges, face_edges = _face_edges(faces)
	values = evaluate(poly, vertices)[:, 0]
	positive = values >= 0
	crossing = positive[edges[:, 0]] != positive[edges[:, 1]]
	spacing = _mesh_spacing(vertices, edges)

	a, b = edges[crossing, 0], edges[crossing, 1]
	weight = values[a] / (values[a] - values[b])
	points = np.zeros((len(edges), 3))
	points[crossing] = vertices[a] + weight[:, None] * (vertices[b] - vertices[a])
	points[crossing] /= np.linalg.norm(points[crossing], axis=1, keepdims=True)

	face_crossing = crossing[face_edges]
	active = face_crossing.sum(axis=1) == 2
	if not np.any(active):
		return 0.0, spacing
	order = np.argsort(~face_crossing[active], axis=1, kind="stable")[:, :2]
	chosen = np.take_along_axis(face_edges[active], order, axis=1)
	chords = np.linalg.norm(points[chosen[:, 0]] - points[chosen[:, 1]], axis=1)
	return float(np.sum(2.0 * np.arcsin(np.minimum(chords / 2.0, 1.0)))), spacing


def marching_length_s2(poly: PolyLike, level: int = 5) -> ContourLength:
	"""
	Length of the zero curve of a polynomial on S^2 by marching triangles.

	Args:
		poly: Single polynomial with n = 2
		level: Icosphere subdivision level for the coarse mesh (spacing h);
			the fine mesh uses level + 1 (spacing about h/2)

	Returns:
		ContourLength with the coarse value, its spacing and the Richardson value (4 L_{h/2} - L_h)/3
	"""
	system = as_system(poly)
	if system.n != 2 or system.r != 1:
		raise UnsupportedError(f"Marching contours need n = 2 and r = 1, got n={system.n}, r={system.r}")
	coarse, spacing = _contour_length(system, level)
	fine, _ = _contour_length(system, level + 1)
	under_resolved = spacing > MARCHING_RESOLUTION / math.sqrt(system.d)
	if under_resolved:
		logger.warning(f"Mesh spacing {spacing:.3g} exceeds 1/sqrt(d) for d={system.d}; contour is under-resolved")
	return ContourLength(
		value=coarse,
		resolution=spacing,
		refined_value=(4.0 * fine - coarse) / 3.0,
		fine_value=fine,
		under_resolved=under_resolved,
	)


# ============================================================================
# HOLES
# ============================================================================

def _shell_directions(n: int, count: int, shell: int) -> np.ndarray:
	"""`count` deterministic, well spread unit directions in R^n."""
	if n == 1:
		return np.array([[1.0], [-1.0]])[: max(count, 2)]
	if n == 2:
		offset = (shell * 0.6180339887498949) % 1.0
		angles = 2 * np.pi * (np.arange(count) + offset) / count
		return np.stack([np.cos(angles), np.sin(angles)], axis=1)
	halton = qmc.Halton(d=n, scramble=False).random(count + 1)[1:]
	normals = special.ndtri(np.clip(halton, 1e-12, 1 - 1e-12))
	return normals / np.linalg.norm(normals, axis=1, keepdims=True)


def cap_lattice(cap: Cap, spacing: float) -> List[np.ndarray]:
	"""
	Deterministic point shells covering a cap, ordered outward from the center.

	Shells sit at geodesic radii 0, h, 2h, ..., radius, each with enough
	directions that neighbouring points are about h apart.
	"""
	n = len(cap.center) - 1
	basis = null_space(cap.center[None, :])
	steps = max(1, int(math.ceil(cap.radius / spacing)))
	shells = [cap.center[None, :]]
	surface = sphere_volume(n - 1)
	for j in range(1, steps + 1):
		rho = min(j * spacing, cap.radius)
		count = max(2, int(math.ceil(surface * (math.sin(rho) / spacing) ** (n - 1) / (2.0 if n == 1 else 1.0))))
		directions = _shell_directions(n, count, j)
		shells.append(math.cos(rho) * cap.center[None, :] + math.sin(rho) * directions @ basis.T)
	return shells


def cap_is_hole(system: PolyLike, cap: Cap, resolution: float = 0.05) -> bool:
	"""
	Whether the polynomial keeps a constant sign on a fine lattice of the cap.

	The lattice spacing is min(resolution, 0.3/sqrt(d)). A True answer can be
	a false positive when the zero set slips between lattice points.
	"""
	system = as_system(system)
	if system.r != 1:
		raise UnsupportedError("Hole detection uses a sign test and needs r = 1")
	if len(cap.center) != system.n + 1:
		raise ShapeError(f"Cap center has {len(cap.center)} coordinates, expected {system.n + 1}")
	if resolution <= 0:
		raise DomainError("Resolution must be positive")
	spacing = min(resolution, HOLE_SPACING / math.sqrt(system.d))
	seen_positive = seen_negative = False
	batch: List[np.ndarray] = []
	pending = 0
	shells = cap_lattice(cap, spacing)
	for index, shell in enumerate(shells):
		batch.append(shell)
		pending += len(shell)
		if pending < HOLE_BATCH and index < len(shells) - 1:
			continue
		values = evaluate(system, np.concatenate(batch))[:, 0]
		seen_positive |= bool(np.any(values >= 0))
		seen_negative |= bool(np.any(values < 0))
		if seen_positive and seen_negative:
			return False
		batch, pending = [], 0
	return True
