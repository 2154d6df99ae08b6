"""
Kac-Rice laboratory command line.

	python app.py inr --n 2 --r 1 --seed 7
	python app.py experiment --config configs/length_s2.json
"""
import logging
import os
import sys

from dotenv import load_dotenv

from lib.cli_io import main

# Load environment variables
load_dotenv()

if __name__ == "__main__":
	logging.basicConfig(
		level=(os.getenv("KACRICE_LOG_LEVEL") or "INFO").upper(),
		format="%(asctime)s %(levelname)s %(name)s: %(message)s",
	)
	sys.exit(main())
