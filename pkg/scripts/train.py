"""Thin wrapper for ``dsp train``."""
from __future__ import annotations

import sys

from dsp.cli import main as dsp_main


def main(argv: list[str] | None = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    return dsp_main(["train", *args])


if __name__ == "__main__":
    sys.exit(main())
