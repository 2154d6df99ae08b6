"""
Exception types shared by the laboratory modules.

Every error carries the process exit code the command line reports for it:
1 for usage, configuration and dependency problems, 2 for numerical failures.
"""


class LabError(Exception):
	"""Base class for all errors raised by the laboratory."""

	exit_code = 1


class DomainError(LabError, ValueError):
	"""An argument lies outside the domain of a formula (t <= 0, m < 0, ...)."""


class ShapeError(LabError, ValueError):
	"""Matrix or point dimensions do not match what the operation expects."""


class UnsupportedError(LabError, ValueError):
	"""The requested (n, r) or codimension is excluded from the model."""


class FrameError(LabError, ValueError):
	"""A circle frame (u, v) is not orthonormal."""


class SizeError(LabError, ValueError):
	"""A multi-index table would be too large to enumerate."""


class ConfigError(LabError, ValueError):
	"""An experiment config or environment variable is malformed."""


class DependencyError(LabError):
	"""A required input file (for example an I_{n,r} estimate) is missing."""


class NumericalError(LabError):
	"""A numerical routine failed beyond its tolerance."""

	exit_code = 2
