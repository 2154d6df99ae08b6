from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate

from lib.errors import DomainError, ShapeError, UnsupportedError
from lib.limit_law import (
	InrEstimate,
	LimitPairParams,
	MatrixPair,
	MonteCarloSpec,
	QuadratureSpec,
	assemble_variance_matrix,
	block_eigenvalues,
	chi_moment_odet,
	closed_form_eigenvalues,
	column_covariance,
	dnr,
	dnr_table,
	estimate_inr,
	estimate_odet_moment,
	estimate_product_moment,
	expand_eigenvalues,
	expected_odet_standard,
	f_of_t,
	gauss_hermite_product_moment,
	grid_roughness,
	integral_product_moment,
	jacobian_odet,
	log_tail_mass_bound,
	quadrature_nodes,
	sample_pair,
	sample_pairs,
	t_grid,
	tail_mass_bound,
	two_point_jacobian_limit,
	variance_determinant,
)
from lib.streams import stream

mp.mp.dps = 50


def _mp_entries(t: float) -> tuple[float, float]:
	"""High-precision a, b of the j = 1 block straight from their defining formulas."""
	t = mp.mpf(t)
	a = 1 - t * mp.exp(-t) / (1 - mp.exp(-t))
	b = mp.exp(-t / 2) * (1 - t / (1 - mp.exp(-t)))
	return float(a), float(b)


def _mp_f(t: float) -> float:
	t = mp.mpf(t)
	return float((1 - mp.exp(-t / 2)) / (1 - mp.exp(-t) - t * mp.exp(-t / 2)))


def _mp_determinant(t: float, n: int, r: int) -> float:
	t = mp.mpf(t)
	e = mp.exp(-t)
	h = t * mp.exp(-t / 2)
	return float((1 - e) ** (r * (n - 2)) * (1 - e + h) ** r * (1 - e - h) ** r)


def _within(estimate: float, target: float, se: float, slack: float = 0.0) -> bool:
	return abs(estimate - target) <= 4.0 * se + slack


# ============================================================================
# COVARIANCE BLOCKS
# ============================================================================

def test_first_column_block_at_unit_distance() -> None:
	cov = column_covariance(1.0, 1)
	assert cov.a == pytest.approx(0.4180233, rel=1e-6)
	assert cov.b == pytest.approx(-0.3529874, rel=1e-6)
	assert cov.even == pytest.approx(cov.a + cov.b, rel=1e-12)
	assert cov.odd == pytest.approx(cov.a - cov.b, rel=1e-12)


@pytest.mark.parametrize("t", np.geomspace(1e-8, 1e3, 23).tolist())
def test_first_column_block_matches_high_precision(t: float) -> None:
	a, b = _mp_entries(t)
	cov = column_covariance(t, 1)
	assert cov.a == pytest.approx(a, rel=1e-10, abs=1e-15)
	assert cov.b == pytest.approx(b, rel=1e-10, abs=1e-15)


def test_other_column_blocks() -> None:
	cov = column_covariance(2.0, 3)
	assert cov.a == 1.0
	assert cov.b == pytest.approx(math.exp(-1.0), rel=1e-15)
	assert cov.odd == pytest.approx(1.0 - math.exp(-1.0), rel=1e-15)


def test_independent_limit_block() -> None:
	cov = column_covariance(math.inf, 1)
	assert (cov.a, cov.b) == (1.0, 0.0)


@pytest.mark.parametrize("t", [0.0, -1.0, math.nan])
def test_column_covariance_rejects_bad_distance(t: float) -> None:
	with pytest.raises(DomainError):
		column_covariance(t, 1)


@pytest.mark.parametrize("n, r", [(2, 1), (3, 1), (3, 2), (4, 2), (5, 3)])
@pytest.mark.parametrize("t", np.geomspace(1e-3, 1e2, 11).tolist())
def test_closed_form_spectrum_matches_numeric(n: int, r: int, t: float) -> None:
	matrix = assemble_variance_matrix(LimitPairParams(t=t, n=n, r=r))
	assert matrix.shape == (2 * n * r, 2 * n * r)
	closed = expand_eigenvalues(closed_form_eigenvalues(t, n, r))
	assert closed.size == 2 * n * r
	np.testing.assert_allclose(block_eigenvalues(matrix), closed, rtol=1e-10, atol=0.0)


def test_spectrum_bounds() -> None:
	values = expand_eigenvalues(closed_form_eigenvalues(1.0, 3, 2))
	assert np.all(values > 0)
	assert values.max() < 2.0
	assert values.min() == pytest.approx(1.0 / f_of_t(1.0), rel=1e-14)


@pytest.mark.parametrize("n, r", [(2, 1), (3, 2), (4, 1)])
@pytest.mark.parametrize("t", np.geomspace(1e-3, 50.0, 12).tolist())
def test_variance_determinant(n: int, r: int, t: float) -> None:
	expected = _mp_determinant(t, n, r)
	assert variance_determinant(t, n, r) == pytest.approx(expected, rel=1e-10)
	numeric = float(np.prod(block_eigenvalues(assemble_variance_matrix(LimitPairParams(t, n, r)))))
	assert numeric == pytest.approx(expected, rel=1e-9)


def test_f_at_unit_distance() -> None:
	assert f_of_t(1.0) == pytest.approx(15.376, rel=1e-3)
	assert f_of_t(1.0) == pytest.approx(_mp_f(1.0), rel=1e-12)


def test_f_small_and_large_distance() -> None:
	assert f_of_t(1e-4) * 1e-8 / 12.0 == pytest.approx(1.0, rel=1e-3)
	assert f_of_t(1e3) == pytest.approx(1.0, rel=1e-12)
	assert f_of_t(math.inf) == 1.0


def test_f_is_decreasing() -> None:
	values = [f_of_t(t) for t in np.geomspace(1e-3, 50.0, 40)]
	assert all(later < earlier for earlier, later in zip(values, values[1:]))


def test_two_point_jacobian() -> None:
	assert two_point_jacobian_limit(1.0, 2) == pytest.approx(0.399576, rel=1e-5)
	assert two_point_jacobian_limit(1.0, 2) == pytest.approx(1.0 - 2.0 * math.exp(-1.0) + math.exp(-2.0), rel=1e-12)
	assert two_point_jacobian_limit(math.inf, 3) == 1.0


# ============================================================================
# JACOBIAN
# ============================================================================

def test_odet_examples() -> None:
	assert jacobian_odet(np.array([[3.0, 4.0]])) == pytest.approx(5.0)
	assert jacobian_odet(np.eye(2, 3)) == pytest.approx(1.0)
	assert jacobian_odet(np.array([[2.0, 0.0, 0.0], [0.0, 3.0, 0.0]])) == pytest.approx(6.0)


def test_odet_of_dependent_rows_is_zero() -> None:
	assert jacobian_odet(np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])) == pytest.approx(0.0, abs=1e-12)


def test_odet_batches() -> None:
	m = stream(4).standard_normal((6, 2, 3))
	batch = jacobian_odet(m)
	assert batch.shape == (6,)
	for k in range(6):
		assert batch[k] == pytest.approx(jacobian_odet(m[k]), rel=1e-12)


def test_odet_rejects_wide_rows() -> None:
	with pytest.raises(ShapeError):
		jacobian_odet(np.ones((3, 2)))


def test_odet_rotation_invariance() -> None:
	rng = stream(5)
	m = rng.standard_normal((3, 5))
	q, _ = np.linalg.qr(stream(12).standard_normal((5, 5)))
	assert jacobian_odet(m @ q) == pytest.approx(jacobian_odet(m), rel=1e-12)


# ============================================================================
# SAMPLING AND MOMENTS
# ============================================================================

def test_sampled_pairs_have_the_block_covariance() -> None:
	size = 400_000
	x, y = sample_pairs(LimitPairParams(t=1.0, n=2, r=1), size, stream(11))
	assert x.shape == y.shape == (size, 1, 2)
	for j in range(2):
		cov = column_covariance(1.0, j + 1)
		xs, ys = x[:, 0, j], y[:, 0, j]
		for product, target in ((xs * xs, cov.a), (xs * ys, cov.b), (ys * ys, cov.a)):
			assert _within(product.mean(), target, product.std() / math.sqrt(size))
	cross = x[:, 0, 0] * y[:, 0, 1]
	assert _within(cross.mean(), 0.0, cross.std() / math.sqrt(size))


def test_sample_pair_shapes() -> None:
	pair = sample_pair(LimitPairParams(t=0.5, n=3, r=2), stream(1))
	assert pair.x.shape == pair.y.shape == (2, 3)


def test_matrix_pair_rejects_mismatched_shapes() -> None:
	with pytest.raises(ShapeError):
		MatrixPair(x=np.zeros((1, 2)), y=np.zeros((2, 2)))


@pytest.mark.parametrize("n, r", [(n, r) for n in range(1, 9) for r in range(1, n + 1)])
def test_standard_odet_two_ways(n: int, r: int) -> None:
	assert expected_odet_standard(n, r) == pytest.approx(chi_moment_odet(n, r), rel=1e-12)


def test_standard_odet_values() -> None:
	assert expected_odet_standard(2, 1) == pytest.approx(1.25331, rel=1e-5)
	assert expected_odet_standard(3, 1) == pytest.approx(1.59577, rel=1e-5)
	assert expected_odet_standard(3, 2) == pytest.approx(2.0, rel=1e-12)


def test_standard_odet_by_monte_carlo() -> None:
	estimate, se = estimate_odet_moment(3, 2, math.inf, 100_000, stream(5))
	assert _within(estimate, 2.0, se)


@pytest.mark.parametrize("t", [0.5, 1.0, 5.0])
def test_product_moment_against_integral_oracle(t: float) -> None:
	params = LimitPairParams(t=t, n=2, r=1)
	estimate, se = estimate_product_moment(params, 200_000, stream(21, int(10 * t)))
	assert _within(estimate, integral_product_moment(t, 2), se)
	assert estimate <= 2.0 + 3.0 * se


@pytest.mark.parametrize("t", [0.5, 1.0, 5.0])
def test_gauss_hermite_grid_tracks_integral_oracle(t: float) -> None:
	assert gauss_hermite_product_moment(t, nodes=64) == pytest.approx(integral_product_moment(t, 2), abs=5e-4)


@pytest.mark.parametrize("t", [0.5, 1.0, 5.0])
def test_product_moment_against_gauss_hermite_grid(t: float) -> None:
	estimate, se = estimate_product_moment(LimitPairParams(t=t, n=2, r=1), 200_000, stream(23, int(10 * t)))
	assert abs(estimate - gauss_hermite_product_moment(t, nodes=64)) <= 3.0 * se + 5e-4


def test_integral_oracle_independent_limit() -> None:
	assert integral_product_moment(math.inf, 2) == pytest.approx(math.pi / 2.0, rel=1e-8)
	assert integral_product_moment(math.inf, 3) == pytest.approx(8.0 / math.pi, rel=1e-8)


def test_integral_oracle_in_three_dimensions() -> None:
	estimate, se = estimate_product_moment(LimitPairParams(t=1.0, n=3, r=1), 200_000, stream(22))
	assert _within(estimate, integral_product_moment(1.0, 3), se)


def test_gauss_hermite_independent_limit() -> None:
	assert gauss_hermite_product_moment(60.0) == pytest.approx(math.pi / 2.0, abs=1e-2)


def test_gauss_hermite_scope() -> None:
	with pytest.raises(UnsupportedError):
		gauss_hermite_product_moment(1.0, n=3)


# ============================================================================
# D AND I
# ============================================================================

def test_dnr_rejects_maximal_codimension() -> None:
	with pytest.raises(UnsupportedError):
		dnr(1.0, 2, 2, MonteCarloSpec(samples=1000))


@pytest.mark.parametrize("t", [0.0, -2.0])
def test_dnr_rejects_bad_distance(t: float) -> None:
	with pytest.raises(DomainError):
		dnr(t, 2, 1, MonteCarloSpec(samples=1000))


def test_monte_carlo_spec_needs_samples() -> None:
	with pytest.raises(DomainError):
		MonteCarloSpec(samples=10)


def test_dnr_vanishes_at_large_distance() -> None:
	row = dnr(30.0, 2, 1, MonteCarloSpec(samples=40_000, seed=3))
	assert row.n_samples == 40_000
	# D(30) is of order 30 e^{-15}
	assert abs(row.estimate) < 1e-4
	assert row.std_error < 1e-4


def test_dnr_noise_shrinks_with_distance() -> None:
	mc = MonteCarloSpec(samples=20_000, seed=4)
	rows = dnr_table(2, 1, [1.0, 5.0, 10.0, 20.0], mc)
	errors = [row.std_error for row in rows]
	assert errors == sorted(errors, reverse=True)
	assert errors[-1] < 0.01 * errors[0]


def test_dnr_against_integral_oracle() -> None:
	row = dnr(1.0, 2, 1, MonteCarloSpec(samples=100_000, seed=8))
	expected = integral_product_moment(1.0, 2) / math.sqrt(1.0 - math.exp(-1.0)) - math.pi / 2.0
	assert _within(row.estimate, expected, row.std_error)


def test_dnr_table_ignores_thread_count() -> None:
	mc = MonteCarloSpec(samples=45_000, seed=9)
	single = dnr_table(2, 1, [0.5, 1.0, 2.0], mc, threads=1)
	several = dnr_table(2, 1, [0.5, 1.0, 2.0], mc, threads=4)
	assert single == several


def test_common_random_numbers_smooth_the_table() -> None:
	ts = np.linspace(2.0, 2.2, 12)
	mc = MonteCarloSpec(samples=20_000, seed=2)
	shared = [row.estimate for row in dnr_table(2, 1, ts, mc, crn=True)]
	independent = [row.estimate for row in dnr_table(2, 1, ts, mc, crn=False)]
	assert grid_roughness(shared) < grid_roughness(independent)


def test_dnr_table_needs_increasing_grid() -> None:
	with pytest.raises(DomainError):
		dnr_table(2, 1, [1.0, 0.5], MonteCarloSpec(samples=1000))


def test_t_grid() -> None:
	log = t_grid(0.01, 10.0, 4)
	assert log[0] == pytest.approx(0.01) and log[-1] == pytest.approx(10.0)
	assert np.all(np.diff(log) > 0)
	assert t_grid(1.0, 2.0, 3, "linear").tolist() == [1.0, 1.5, 2.0]
	with pytest.raises(DomainError):
		t_grid(1.0, 2.0, 3, "cubic")


def test_grid_roughness() -> None:
	assert grid_roughness([1.0, 2.0, 3.0, 4.0]) == 0.0
	assert grid_roughness([0.0, 1.0, 0.0]) == 4.0


@pytest.mark.parametrize("n", [2, 3])
def test_quadrature_rule_integrates_smooth_weights(n: int) -> None:
	quad = QuadratureSpec(t_split=1.0, t_max=40.0)
	ts, coefficients = quadrature_nodes(n, quad)
	assert len(ts) == quad.nodes_low + quad.nodes_high
	# 1/2 int_0^T t^{(n-2)/2} dt
	expected = 0.5 * quad.t_max ** (n / 2.0) / (n / 2.0)
	assert float(np.sum(coefficients)) == pytest.approx(expected, rel=1e-10)
	half_ts, _ = quadrature_nodes(n, quad, halve=True)
	assert len(half_ts) == quad.nodes_low // 2 + quad.nodes_high // 2


def test_tail_mass_bound_matches_integral() -> None:
	n, t_max, constant = 3, 20.0, 2.0
	expected, _ = integrate.quad(
		lambda t: 0.5 * constant * t * math.exp(-t / 2) * t ** ((n - 2) / 2), t_max, math.inf
	)
	assert tail_mass_bound(constant, n, t_max) == pytest.approx(expected, rel=1e-8)


def test_quadrature_spec_validation() -> None:
	with pytest.raises(DomainError):
		QuadratureSpec(t_split=5.0, t_max=4.0)
	with pytest.raises(DomainError):
		QuadratureSpec(nodes_low=2)


def _small_quadrature(seed: int) -> QuadratureSpec:
	return QuadratureSpec(t_split=1.0, t_max=20.0, nodes_low=8, nodes_high=12, samples_per_node=4000, seed=seed)


def test_inr_estimate_error_budget() -> None:
	estimate = estimate_inr(2, 1, _small_quadrature(1))
	assert math.isfinite(estimate.value)
	assert estimate.statistical_se > 0
	assert estimate.tail_bound >= 0
	assert estimate.quadrature_error >= 0
	assert len(estimate.nodes) == 20
	assert all(node.n_samples == 4000 for node in estimate.nodes)


def test_inr_independent_seeds_agree() -> None:
	first = estimate_inr(2, 1, _small_quadrature(1))
	second = estimate_inr(2, 1, _small_quadrature(2))
	combined = math.hypot(first.statistical_se, second.statistical_se)
	assert abs(first.value - second.value) <= 5.0 * combined


def test_inr_ignores_thread_count() -> None:
	assert estimate_inr(3, 1, _small_quadrature(4), threads=1).value == estimate_inr(3, 1, _small_quadrature(4), threads=3).value


def test_inr_record_survives_json_shape() -> None:
	estimate = estimate_inr(2, 1, _small_quadrature(6))
	assert InrEstimate.from_dict(estimate.to_dict()) == estimate


def test_inr_rejects_maximal_codimension() -> None:
	with pytest.raises(UnsupportedError):
		estimate_inr(2, 2, _small_quadrature(0))


def _cutoff_quadrature(t_max: float, nodes_high: int) -> QuadratureSpec:
	return QuadratureSpec(t_split=1.0, t_max=t_max, nodes_low=8, nodes_high=nodes_high, samples_per_node=20_000, seed=11)


def test_inr_stable_when_the_cutoff_doubles() -> None:
	near = estimate_inr(2, 1, _cutoff_quadrature(20.0, 12))
	far = estimate_inr(2, 1, _cutoff_quadrature(40.0, 24))
	allowance = near.tail_bound + far.tail_bound + near.quadrature_error + far.quadrature_error
	assert abs(near.value - far.value) <= allowance + 3.0 * math.hypot(near.statistical_se, far.statistical_se)
	# nodes past t = 20 add almost no noise
	assert far.statistical_se < 1.25 * near.statistical_se


def test_inr_is_consistent_with_nonnegative() -> None:
	estimate = estimate_inr(2, 1, _cutoff_quadrature(40.0, 24))
	assert estimate.value >= -3.0 * estimate.statistical_se
	assert estimate.consistent_with_nonnegative()


def test_nonnegativity_check_uses_the_standard_error() -> None:
	estimate = InrEstimate(n=2, r=1, value=-0.5, statistical_se=0.1, tail_bound=0.0, quadrature=QuadratureSpec())
	assert not estimate.consistent_with_nonnegative()
	assert estimate.consistent_with_nonnegative(k=6.0)


def test_log_tail_bound_survives_far_cutoffs() -> None:
	t_max = 1600.0
	# for n = 2 the tail integral is e^{-T/2} (T + 2) times the constant
	log_constant = 0.5 * t_max - math.log(t_max)
	expected = math.log((t_max + 2.0) / t_max)
	assert log_tail_mass_bound(log_constant, 2, t_max) == pytest.approx(expected, rel=1e-9)
	assert log_tail_mass_bound(-math.inf, 2, t_max) == -math.inf
	assert tail_mass_bound(0.0, 3, t_max) == 0.0


def test_inr_tail_bound_is_finite_for_far_cutoffs() -> None:
	quad = QuadratureSpec(t_split=1.0, t_max=1600.0, nodes_low=8, nodes_high=12, samples_per_node=4000, seed=5)
	estimate = estimate_inr(2, 1, quad)
	assert math.isfinite(estimate.value)
	assert math.isfinite(estimate.tail_bound)
	assert estimate.tail_bound >= 0.0
	assert InrEstimate.from_dict(estimate.to_dict()) == estimate
