"""Thin wrapper for ``dsp report``."""
from __future__ import annotations

import sys

from dsp.cli import main as dsp_main


if __name__ == "__main__":
    sys.exit(dsp_main(["report", *sys.argv[1:]]))
