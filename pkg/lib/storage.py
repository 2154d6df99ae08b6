from __future__ import annotations

import json
import logging
import os
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

import pandas as pd
from dotenv import load_dotenv

from lib.errors import ConfigError, DependencyError

logger = logging.getLogger(__name__)

# Load environment variables
load_dotenv()

CODE_VERSION = "0.1.0"
DEFAULT_OUTPUT_DIR = "outputs"

PathLike = Union[str, Path]


@dataclass(frozen=True)
class Settings:
	"""Process-wide defaults read from the environment (or a .env file)."""

	seed: Optional[int]
	threads: Optional[int]
	output_dir: str
	log_level: str


def _int_from_env(name: str) -> Optional[int]:
	raw = os.getenv(name)
	if raw is None or not raw.strip():
		return None
	try:
		value = int(raw)
	except ValueError:
		raise ConfigError(
			f"{name} must be an integer, got '{raw}'. "
			"Fix it in your environment or .env file."
		) from None
	if value < 0:
		raise ConfigError(f"{name} must be non-negative, got {value}")
	return value


def load_settings() -> Settings:
	"""Read KACRICE_SEED, KACRICE_THREADS, KACRICE_OUTPUT_DIR and KACRICE_LOG_LEVEL."""
	return Settings(
		seed=_int_from_env("KACRICE_SEED"),
		threads=_int_from_env("KACRICE_THREADS"),
		output_dir=os.getenv("KACRICE_OUTPUT_DIR") or DEFAULT_OUTPUT_DIR,
		log_level=(os.getenv("KACRICE_LOG_LEVEL") or "INFO").upper(),
	)


@contextmanager
def atomic_write(path: PathLike) -> Iterator[Any]:
	"""
	Context manager for writing a text file atomically.
	Renames the temporary file over `path` on success and deletes it on error.
	"""
	target = Path(path)
	target.parent.mkdir(parents=True, exist_ok=True)
	fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
	try:
		with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
			yield handle
		os.replace(tmp_name, target)
	except Exception as e:
		logger.error(f"Failed to write {target}: {e}")
		if os.path.exists(tmp_name):
			os.unlink(tmp_name)
		raise


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
	"""Write a table with a header row, '.' decimals and '\\n' line endings."""
	with atomic_write(path) as handle:
		frame.to_csv(handle, index=False, lineterminator="\n")
	logger.info(f"Wrote {len(frame)} rows to {path}")
	return Path(path)


def write_json(payload: Any, path: PathLike) -> Path:
	with atomic_write(path) as handle:
		json.dump(payload, handle, indent=2, sort_keys=True)
		handle.write("\n")
	return Path(path)


def read_json(path: PathLike, what: str = "input") -> Any:
	"""
	Load a JSON document.

	Raises:
		DependencyError: when the file does not exist
		ConfigError: when it is not valid JSON
	"""
	target = Path(path)
	if not target.is_file():
		raise DependencyError(f"Missing {what} file: {target}")
	try:
		return json.loads(target.read_text(encoding="utf-8"))
	except json.JSONDecodeError as e:
		raise ConfigError(f"{target} is not valid JSON: {e}") from e


def utc_now() -> str:
	return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
	command: str
	argv: List[str]
	config: Dict[str, Any]
	seed: int
	version: str = CODE_VERSION
	started_at: str = field(default_factory=utc_now)
	finished_at: Optional[str] = None
	outputs: List[str] = field(default_factory=list)

	def add_output(self, path: PathLike) -> None:
		self.outputs.append(str(path))

	def finish(self, path: PathLike) -> Path:
		"""Stamp the end time and write the manifest next to the outputs."""
		self.finished_at = utc_now()
		return write_json(asdict(self), path)

	@classmethod
	def load(cls, path: PathLike) -> "RunManifest":
		payload = read_json(path, "manifest")
		try:
			return cls(**payload)
		except TypeError as e:
			raise ConfigError(f"{path} is not a run manifest: {e}") from e


def manifest_path(output_dir: PathLike, stem: str) -> Path:
	return Path(output_dir) / f"{stem}.manifest.json"
