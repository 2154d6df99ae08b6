from __future__ import annotations

import logging
import math

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.transform import Rotation

from lib.errors import DomainError, FrameError, ShapeError, UnsupportedError
from lib.kostlan import from_coefficients, linear_form, restrict_to_circle, sample_system, sum_of_squares_power
from lib.limit_law import sphere_volume
from lib.streams import stream
from lib.zero_stats import (
	Cap,
	GreatCircle,
	builtin_phi,
	cap_is_hole,
	cap_lattice,
	count_roots_on_circle,
	crofton_statistic,
	find_roots,
	grid_size,
	icosphere,
	marching_length_s2,
	sample_great_circle,
	sample_great_circles,
)

E0, E1, E2 = np.eye(3)


# ============================================================================
# GREAT CIRCLES
# ============================================================================

def test_great_circle_frames_are_orthonormal() -> None:
	u, v = sample_great_circles(3, 500, stream(1))
	assert np.all(np.abs(np.sum(u * v, axis=1)) < 1e-12)
	np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-12)
	np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-12)
	circle = sample_great_circle(3, stream(2))
	assert circle.point(0.0) == pytest.approx(circle.u)


def test_great_circles_are_uniform() -> None:
	# the first coordinate of a uniform point on S^2 is uniform on [-1, 1]
	u, v = sample_great_circles(2, 20_000, stream(3))
	assert stats.kstest(u[:, 0], "uniform", args=(-1.0, 2.0)).pvalue > 0.01
	assert stats.kstest(v[:, 0], "uniform", args=(-1.0, 2.0)).pvalue > 0.01


def test_great_circle_rejects_bad_frames() -> None:
	with pytest.raises(FrameError):
		GreatCircle(E0, (E0 + E1) / math.sqrt(2.0))


# ============================================================================
# ROOTS
# ============================================================================

def test_roots_of_a_cosine() -> None:
	restriction = restrict_to_circle(linear_form(2, 0), GreatCircle(E0, E1))
	roots = count_roots_on_circle(restriction, d=1)
	assert [root.theta for root in roots] == pytest.approx([math.pi / 2, 3 * math.pi / 2], abs=1e-9)
	assert roots[0].point == pytest.approx(E1, abs=1e-9)
	assert all(root.residual < 1e-9 for root in roots)
	with pytest.raises(ShapeError):
		count_roots_on_circle(restriction, d=2)


def test_grid_size() -> None:
	assert grid_size(1) == 64
	assert grid_size(100) == 1600
	assert grid_size(10, oversample=0.01) == 64


def test_tangency_guard_recovers_close_root_pairs() -> None:
	# sin(theta - a) sin(theta - b) with both roots just past a grid point
	step = 2 * math.pi / grid_size(2)
	a = 10 * step + 1e-7
	b = a + 0.02
	coefficients = [math.sin(a) * math.sin(b), -math.sin(a + b) / math.sqrt(2.0), math.cos(a) * math.cos(b)]
	system = from_coefficients(1, 2, np.array(coefficients))
	restriction = restrict_to_circle(system, (np.array([1.0, 0.0]), np.array([0.0, 1.0])))
	np.testing.assert_allclose(restriction(np.array([a, b])), 0.0, atol=1e-14)
	roots = [root.theta for root in count_roots_on_circle(restriction)]
	assert roots == pytest.approx([a, b, a + math.pi, b + math.pi], abs=1e-9)


def test_root_counts_do_not_depend_on_oversampling() -> None:
	for case in range(50):
		rng = stream(50, case)
		d = 20
		system = sample_system(2, d, 1, rng)
		restriction = restrict_to_circle(system, sample_great_circles(2, 20, rng))
		circle_a, theta_a = find_roots(restriction, oversample=8)
		circle_b, theta_b = find_roots(restriction, oversample=16)
		counts = np.bincount(circle_a, minlength=20)
		assert np.array_equal(counts, np.bincount(circle_b, minlength=20))
		assert np.all(counts <= 2 * d)
		assert np.all(counts % 2 == 0)
		np.testing.assert_allclose(theta_a, theta_b, atol=1e-8)


# ============================================================================
# CROFTON
# ============================================================================

@pytest.mark.parametrize("n", [2, 3, 4])
def test_equator_calibration(n: int) -> None:
	estimate = crofton_statistic(linear_form(n), None, 50, stream(3, n))
	assert estimate.value == pytest.approx(sphere_volume(n - 1), rel=1e-12)
	assert estimate.std_error == pytest.approx(0.0, abs=1e-12)
	assert estimate.per_geodesic_counts.min == estimate.per_geodesic_counts.max == 2
	assert estimate.n_geodesics == 50


def test_crofton_is_linear_in_the_test_function() -> None:
	system = sample_system(2, 8, 1, stream(4))
	circles = sample_great_circles(2, 200, stream(5))
	one = crofton_statistic(system, builtin_phi("const"), 200, circles=circles).value
	two = crofton_statistic(system, builtin_phi("const:2"), 200, circles=circles).value
	assert two == pytest.approx(2.0 * one, rel=1e-12)
	# x0^2 + x1^2 + x2^2 = 1 on the sphere
	parts = sum(crofton_statistic(system, builtin_phi(f"coord2:{i}"), 200, circles=circles).value for i in range(3))
	assert parts == pytest.approx(one, rel=1e-10)


def test_crofton_is_rotation_invariant() -> None:
	system = sample_system(2, 6, 1, stream(6))
	rotation = Rotation.from_euler("zyx", [0.9, -0.3, 1.7]).as_matrix()
	u, v = sample_great_circles(2, 300, stream(7))
	phi = builtin_phi("coord2:0")
	base = crofton_statistic(system, phi, 300, circles=(u, v))
	moved = crofton_statistic(
		system.rotated(rotation),
		lambda pts: phi(pts @ rotation),
		300,
		circles=(u @ rotation.T, v @ rotation.T),
	)
	assert moved.value == pytest.approx(base.value, rel=1e-9)


def test_crofton_error_shrinks_with_more_circles() -> None:
	system = sample_system(2, 10, 1, stream(8))
	small = crofton_statistic(system, None, 500, stream(9))
	large = crofton_statistic(system, None, 5000, stream(10))
	assert small.std_error / large.std_error == pytest.approx(math.sqrt(10.0), rel=0.2)


def test_crofton_argument_checks() -> None:
	system = sample_system(3, 2, 2, stream(0))
	with pytest.raises(UnsupportedError):
		crofton_statistic(system, None, 10, stream(0))
	with pytest.raises(DomainError):
		crofton_statistic(linear_form(2), None, 0, stream(0))
	with pytest.raises(DomainError):
		crofton_statistic(linear_form(2), None, 10)


def test_zero_free_polynomial_has_empty_zero_set() -> None:
	estimate = crofton_statistic(sum_of_squares_power(2, 4), None, 40, stream(11))
	assert estimate.value == 0.0
	assert estimate.per_geodesic_counts.max == 0


# ============================================================================
# MARCHING
# ============================================================================

@pytest.mark.parametrize("level", [0, 1, 3])
def test_icosphere_sizes(level: int) -> None:
	vertices, faces = icosphere(level)
	assert len(vertices) == 10 * 4 ** level + 2
	assert len(faces) == 20 * 4 ** level
	np.testing.assert_allclose(np.linalg.norm(vertices, axis=1), 1.0, atol=1e-12)


def test_marching_equator() -> None:
	length = marching_length_s2(linear_form(2), level=3)
	assert length.value == pytest.approx(2 * math.pi, rel=1e-9)
	assert length.refined_value == pytest.approx(2 * math.pi, rel=1e-9)
	assert not length.under_resolved


def test_marching_without_zeros() -> None:
	length = marching_length_s2(sum_of_squares_power(2, 4), level=2)
	assert length.value == 0.0
	assert length.refined_value == 0.0


def test_marching_agrees_with_crofton() -> None:
	system = sample_system(2, 10, 1, stream(12))
	length = marching_length_s2(system, level=5)
	estimate = crofton_statistic(system, None, 2000, stream(13))
	assert abs(length.refined_value - estimate.value) <= 4.0 * estimate.std_error + 0.01 * length.refined_value


def test_marching_flags_coarse_meshes(caplog: pytest.LogCaptureFixture) -> None:
	with caplog.at_level(logging.WARNING):
		length = marching_length_s2(sample_system(2, 100, 1, stream(14)), level=1)
	assert length.under_resolved
	assert "under-resolved" in caplog.text


def test_marching_needs_a_surface() -> None:
	with pytest.raises(UnsupportedError):
		marching_length_s2(linear_form(3))


# ============================================================================
# HOLES
# ============================================================================

def test_cap_validation() -> None:
	with pytest.raises(DomainError):
		Cap(E2, 0.0)
	with pytest.raises(DomainError):
		Cap(E2, 4.0)
	with pytest.raises(DomainError):
		Cap(2 * E2, 0.5)


def test_cap_lattice_stays_inside_the_cap() -> None:
	cap = Cap(E2, 0.5)
	shells = cap_lattice(cap, 0.1)
	assert len(shells) == 6
	points = np.concatenate(shells)
	np.testing.assert_allclose(np.linalg.norm(points, axis=1), 1.0, atol=1e-12)
	assert np.all(np.arccos(np.clip(points @ cap.center, -1.0, 1.0)) <= 0.5 + 1e-9)


def test_cap_lattice_in_higher_dimension() -> None:
	center = np.array([0.0, 0.0, 0.0, 1.0])
	points = np.concatenate(cap_lattice(Cap(center, 0.4), 0.1))
	np.testing.assert_allclose(np.linalg.norm(points, axis=1), 1.0, atol=1e-12)
	assert np.all(points @ center >= math.cos(0.4) - 1e-12)


def test_cap_holes() -> None:
	assert cap_is_hole(sum_of_squares_power(2, 4), Cap(E2, 0.5))
	assert cap_is_hole(linear_form(2, 0), Cap(E0, 0.5))
	assert not cap_is_hole(linear_form(2, 0), Cap(E1, 0.5))
	with pytest.raises(ShapeError):
		cap_is_hole(linear_form(3, 0), Cap(E1, 0.5))


# ============================================================================
# TEST FUNCTIONS
# ============================================================================

def test_builtin_integrals() -> None:
	assert builtin_phi("const:2").integral(2) == pytest.approx(8 * math.pi)
	coord = builtin_phi("coord2:0")
	assert coord.integral(2) == pytest.approx(4 * math.pi / 3)
	assert coord.integral_sq(2) == pytest.approx(4 * math.pi / 5)


def test_cap_bump_integrals_by_sampling() -> None:
	phi = builtin_phi("capbump:2:0.5")
	pts = stream(15).standard_normal((400_000, 3))
	pts /= np.linalg.norm(pts, axis=1, keepdims=True)
	values = phi(pts)
	area = 4 * math.pi
	for sample, exact in ((values, phi.integral(2)), (values ** 2, phi.integral_sq(2))):
		assert abs(area * sample.mean() - exact) <= 4.0 * area * sample.std() / math.sqrt(len(sample))


@pytest.mark.parametrize("spec", ["cubic", "coord2:x", "capbump:0:2.5", "const:1:2"])
def test_unknown_test_functions(spec: str) -> None:
	with pytest.raises(DomainError):
		builtin_phi(spec)
