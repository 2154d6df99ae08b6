"""
Experiment config validation for the laboratory's command line.
"""
import math
from typing import Any, Dict, Optional

from jsonschema import Draft202012Validator

from lib.errors import ConfigError
from lib.storage import read_json

SCHEMA_VERSION = 1

_QUADRATURE = {
	"type": ["object", "null"],
	"additionalProperties": False,
	"properties": {
		"t_split": {"type": "number", "exclusiveMinimum": 0},
		"t_max": {"type": "number", "exclusiveMinimum": 0},
		"nodes_low": {"type": "integer", "minimum": 4},
		"nodes_high": {"type": "integer", "minimum": 4},
		"samples_per_node": {"type": "integer", "minimum": 1000},
	},
}

EXPERIMENT_SCHEMA: Dict[str, Any] = {
	"$schema": "https://json-schema.org/draft/2020-12/schema",
	"type": "object",
	"required": ["schema_version", "n", "degrees", "trials"],
	"additionalProperties": False,
	"properties": {
		"schema_version": {"const": SCHEMA_VERSION},
		"n": {"type": "integer", "minimum": 1},
		"r": {"const": 1},
		"degrees": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
		"trials": {"type": "integer", "minimum": 30},
		"mode": {"enum": ["sphere", "projective"]},
		"estimator": {
			"type": "object",
			"additionalProperties": False,
			"properties": {
				"method": {"enum": ["crofton", "marching"]},
				"circles": {"type": "integer", "minimum": 1},
				"oversample": {"type": "number", "exclusiveMinimum": 0},
				"level": {"type": "integer", "minimum": 0, "maximum": 8},
			},
		},
		"phi": {
			"type": "string",
			"pattern": r"^(const(:[-+0-9.eE]+)?|coord2:[0-9]+|capbump:[0-9]+:[0-9.eE+-]+)$",
		},
		"seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
		"inr_source": {"type": ["string", "null"]},
		"quadrature": _QUADRATURE,
		"cap": {
			"type": "object",
			"additionalProperties": False,
			"properties": {
				"center": {"type": "array", "minItems": 2, "items": {"type": "number"}},
				"radius": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": math.pi},
				"resolution": {"type": "number", "exclusiveMinimum": 0},
			},
		},
		"allow_conjectural": {"type": "boolean"},
		"sequences": {"type": "integer", "minimum": 2},
		"threads": {"type": "integer", "minimum": 1},
	},
}

_VALIDATOR = Draft202012Validator(EXPERIMENT_SCHEMA)


def validate_config(payload: Any) -> tuple[bool, Optional[str]]:
	"""
	Validate an experiment config against the schema.

	Args:
		payload: Parsed JSON document

	Returns:
		Tuple of (is_valid, error_message)
		- is_valid: True if the config matches the schema
		- error_message: None if valid, otherwise "<json path>: <reason>" for
		  the first offending field
	"""
	errors = sorted(_VALIDATOR.iter_errors(payload), key=lambda e: e.json_path)
	if not errors:
		return True, None
	first = errors[0]
	error_msg = f"{first.json_path}: {first.message}"
	if len(errors) > 1:
		error_msg += f" (and {len(errors) - 1} more)"
	return False, error_msg


def load_config(path: str) -> Dict[str, Any]:
	"""Read and validate a config file, raising ConfigError with the offending path."""
	payload = read_json(path, "config")
	is_valid, error_msg = validate_config(payload)
	if not is_valid:
		raise ConfigError(f"Invalid config {path}: {error_msg}")
	return payload


def validate_codimension(n: int, r: int, allow_maximal: bool = False) -> tuple[bool, Optional[str]]:
	"""Check 1 <= r <= n, and r < n unless the maximal codimension is allowed."""
	if n < 1:
		return False, f"n must be at least 1, got {n}"
	if not 1 <= r <= n:
		return False, f"r must satisfy 1 <= r <= n, got n={n}, r={r}"
	if r == n and not allow_maximal:
		return False, f"r = n = {n} is the maximal codimension, where the variance density is not integrable"
	return True, None
