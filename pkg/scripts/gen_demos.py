"""Convenient wrapper around ``dsp gen-demos``."""
from __future__ import annotations

import sys

from dsp.cli import main as dsp_main


def main(argv: list[str] | None = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    if not args:
        args = ["--task", "block_transfer", "-n", "100", "--seed", "1", "-o", "data/block_transfer_clean.jsonl"]
    return dsp_main(["gen-demos", *args])


if __name__ == "__main__":
    sys.exit(main())
