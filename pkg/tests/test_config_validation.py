from __future__ import annotations

import json
from pathlib import Path

import pytest

from lib.config_validation import load_config, validate_codimension, validate_config
from lib.errors import ConfigError, DependencyError
from lib.harness import ExperimentConfig

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _minimal(**overrides) -> dict:
	payload = {"schema_version": 1, "n": 2, "degrees": [10], "trials": 100}
	payload.update(overrides)
	return payload


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_are_valid(path: Path) -> None:
	payload = load_config(str(path))
	assert ExperimentConfig.from_dict(payload).n == payload["n"]


def test_minimal_config() -> None:
	assert validate_config(_minimal()) == (True, None)


@pytest.mark.parametrize(
	"overrides, path",
	[
		({"trials": 10}, "$.trials"),
		({"r": 2}, "$.r"),
		({"degrees": []}, "$.degrees"),
		({"mode": "torus"}, "$.mode"),
		({"estimator": {"circles": 0}}, "$.estimator.circles"),
		({"phi": "cubic"}, "$.phi"),
		({"cap": {"radius": 3.5}}, "$.cap.radius"),
		({"quadrature": {"nodes_low": 2}}, "$.quadrature.nodes_low"),
		({"schema_version": 2}, "$.schema_version"),
	],
)
def test_invalid_fields_are_named(overrides: dict, path: str) -> None:
	is_valid, error_msg = validate_config(_minimal(**overrides))
	assert not is_valid
	assert error_msg.startswith(f"{path}:")


def test_unknown_and_missing_fields() -> None:
	is_valid, error_msg = validate_config(_minimal(colour="red"))
	assert not is_valid
	assert "colour" in error_msg
	payload = _minimal()
	del payload["trials"]
	assert not validate_config(payload)[0]


def test_several_errors_are_counted() -> None:
	_, error_msg = validate_config(_minimal(trials=1, mode="torus"))
	assert error_msg.endswith("(and 1 more)")


def test_load_config_errors(tmp_path: Path) -> None:
	with pytest.raises(DependencyError):
		load_config(str(tmp_path / "absent.json"))
	path = tmp_path / "bad.json"
	path.write_text(json.dumps(_minimal(trials=1)), encoding="utf-8")
	with pytest.raises(ConfigError, match=r"\$\.trials"):
		load_config(str(path))


@pytest.mark.parametrize(
	"n, r, allow, expected",
	[(2, 1, False, True), (3, 2, False, True), (2, 2, False, False), (2, 2, True, True), (2, 3, False, False), (0, 1, False, False)],
)
def test_codimension(n: int, r: int, allow: bool, expected: bool) -> None:
	is_valid, error_msg = validate_codimension(n, r, allow)
	assert is_valid is expected
	assert (error_msg is None) is expected
