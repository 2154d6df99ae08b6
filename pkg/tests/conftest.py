from __future__ import annotations

import pytest


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch: pytest.MonkeyPatch) -> None:
	"""Keep developer .env values from leaking into seeds, threads and output paths."""
	for name in ("KACRICE_SEED", "KACRICE_THREADS", "KACRICE_OUTPUT_DIR", "KACRICE_LOG_LEVEL"):
		monkeypatch.delenv(name, raising=False)
