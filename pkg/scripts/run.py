"""Create a virtual environment, install deps, and run the desk-scale four-mode comparison."""
from __future__ import annotations

import os
import subprocess
import sys
from pathlib import Path

TASK = "block_transfer"
MODES = ("none", "naive", "offline", "online")


def _venv_python(venv_dir: Path) -> Path:
    if os.name == "nt":
        return venv_dir / "Scripts" / "python.exe"
    return venv_dir / "bin" / "python"


def main() -> int:
    repo_root = Path(__file__).resolve().parents[1]
    venv_dir = repo_root / ".venv"
    python_exe = _venv_python(venv_dir)

    if not python_exe.exists():
        print(f"Creating virtual environment at {venv_dir}")
        subprocess.check_call([sys.executable, "-m", "venv", str(venv_dir)])
        python_exe = _venv_python(venv_dir)

    requirements = repo_root / "requirements.txt"
    print(f"Installing dependencies from {requirements}")
    subprocess.check_call([str(python_exe), "-m", "pip", "install", "-r", str(requirements)])

    config = repo_root / "samples" / "configs" / "desk.toml"
    print("Resolving configuration")
    subprocess.check_call([str(python_exe), "-m", "dsp.config", str(config)])

    data = repo_root / "data"
    runs = repo_root / "runs"
    clean = data / f"{TASK}_clean.jsonl"
    raw = data / f"{TASK}_raw.jsonl"
    perturbed = data / f"{TASK}_perturbed.jsonl"

    def dsp(*args: str) -> None:
        subprocess.check_call([str(python_exe), "-m", "dsp.cli", *args], cwd=repo_root)

    dsp("gen-demos", "--task", TASK, "-n", "25", "--seed", "1", "-o", str(clean))
    dsp("gen-demos", "--task", TASK, "-n", "25", "--seed", "1001", "-o", str(raw))
    dsp("perturb", "--in", str(raw), "-o", str(perturbed), "--seed", "0")
    for mode in MODES:
        dsp(
            "train",
            "--config", str(config),
            "--task", TASK,
            "--clean", str(clean),
            "--perturbed", str(perturbed),
            "--mode", mode,
            "-o", str(runs / mode),
        )
    dsp("report", *(str(runs / mode) for mode in MODES), "-o", str(runs / "report.jsonl"))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
