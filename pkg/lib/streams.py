"""
Keyed random streams and deterministic parallel reduction.

Streams are counter-based (Philox) generators keyed by a seed plus a tuple of
non-negative integer keys, so any piece of work can rebuild its own stream
without knowing which worker runs it. Chunked Monte Carlo loops reduce their
per-chunk results in chunk order, which keeps every total bit-identical for
any thread count.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Sequence, Tuple, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# Samples per chunk; fixed so chunk boundaries never depend on the worker count
DEFAULT_CHUNK = 20_000


def stream(seed: int, *keys: int) -> np.random.Generator:
	"""
	Build the generator for one unit of work.

	Args:
		seed: Experiment seed (non-negative, up to 64 bits)
		keys: Non-negative integers identifying the unit (trial, degree, chunk, ...)

	Returns:
		A numpy Generator backed by Philox, keyed by (seed, *keys)
	"""
	entropy = [int(seed)] + [int(k) for k in keys]
	if any(k < 0 for k in entropy):
		raise ValueError(f"Stream keys must be non-negative, got {entropy}")
	return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def chunk_sizes(total: int, chunk: int = DEFAULT_CHUNK) -> List[int]:
	"""Split `total` samples into fixed-size chunks (last one possibly shorter)."""
	if total <= 0:
		return []
	full, rest = divmod(total, chunk)
	return [chunk] * full + ([rest] if rest else [])


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> List[R]:
	"""
	Apply `fn` to every item, in order, on up to `threads` worker threads.

	numpy releases the GIL inside its kernels, so threads give real speedups
	for the vectorized chunk work done here. Results come back in input order.
	"""
	threads = max(1, int(threads))
	if threads == 1 or len(items) <= 1:
		return [fn(item) for item in items]
	with ThreadPoolExecutor(max_workers=threads) as pool:
		return list(pool.map(fn, items))


@dataclass(frozen=True)
class RunningMoments:
	"""Mergeable (count, sum, sum of squares) triple of a scalar sample."""

	count: int = 0
	total: float = 0.0
	total_sq: float = 0.0

	@classmethod
	def of(cls, values: np.ndarray) -> "RunningMoments":
		values = np.asarray(values, dtype=float).ravel()
		return cls(int(values.size), float(values.sum()), float(np.dot(values, values)))

	def merge(self, other: "RunningMoments") -> "RunningMoments":
		return RunningMoments(
			self.count + other.count,
			self.total + other.total,
			self.total_sq + other.total_sq,
		)

	@property
	def mean(self) -> float:
		return self.total / self.count if self.count else float("nan")

	@property
	def variance(self) -> float:
		"""Unbiased sample variance."""
		if self.count < 2:
			return 0.0
		centered = self.total_sq - self.total * self.total / self.count
		return max(centered, 0.0) / (self.count - 1)

	@property
	def std_error(self) -> float:
		if self.count < 2:
			return 0.0
		return float(np.sqrt(self.variance / self.count))


def merge_all(parts: Iterable[RunningMoments]) -> RunningMoments:
	"""Left fold of `merge` in the given order."""
	acc = RunningMoments()
	for part in parts:
		acc = acc.merge(part)
	return acc


def merge_columns(parts: Iterable[Tuple[RunningMoments, ...]]) -> Tuple[RunningMoments, ...]:
	"""Merge tuples of moments column by column, in order."""
	merged: List[RunningMoments] = []
	for row in parts:
		if not merged:
			merged = list(row)
			continue
		merged = [a.merge(b) for a, b in zip(merged, row)]
	return tuple(merged)
