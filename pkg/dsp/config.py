"""Run configuration: sectioned TOML files layered over presets and defaults."""
from __future__ import annotations

import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional

import toml
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

try:  # Python 3.11+
    import tomllib as toml_parser
except ModuleNotFoundError:  # pragma: no cover - fallback for older stdlib
    import toml as toml_parser  # type: ignore

from .errors import ConfigurationError
from .trainer import TrainConfig

REPO_ROOT = Path(__file__).resolve().parents[1]
SEED_ENV = "DSP_SEED"

PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {
        "train.stage1_steps": 10000,
        "train.stage2_steps": 10000,
        "train.batch_size": 128,
        "train.lr": 2e-4,
        "policy.hidden_dim": 128,
    },
    "paper": {
        "train.stage1_steps": 50000,
        "train.stage2_steps": 50000,
        "train.batch_size": 256,
        "train.lr": 2e-4,
        "policy.hidden_dim": 512,
    },
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RunSection(_Section):
    task: str = "point_reach"
    seed: int = 0
    preset: Literal["desk", "paper"] = "desk"
    out_dir: str = "runs/default"


class DataSection(_Section):
    clean: Optional[str] = None
    perturbed: Optional[str] = None
    n_clean: Optional[int] = Field(default=None, ge=0)
    n_perturbed: Optional[int] = Field(default=None, ge=0)
    n_demos: int = Field(default=100, ge=0)


class PolicySection(_Section):
    hidden_dim: int = Field(default=128, gt=0)
    embed_dim: int = Field(default=128, gt=0)
    T: int = Field(default=5, gt=0)
    beta_start: float = 0.1
    beta_end: float = 0.9


class PerturbSection(_Section):
    frac: float = Field(default=0.2, ge=0.0, le=1.0)
    eta: float = 0.2
    sigma_sq: float = Field(default=0.05, ge=0.0)
    flip_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    sigma_is_std: bool = False
    replay: bool = True


class EvalSection(_Section):
    n_episodes: int = Field(default=100, ge=1)
    base_seed: int = 10000
    n_resamples: int = Field(default=10000, ge=1)
    level: float = Field(default=0.95, gt=0.0, lt=1.0)
    bootstrap_seed: int = 0


class RunConfig(_Section):
    run: RunSection = Field(default_factory=RunSection)
    data: DataSection = Field(default_factory=DataSection)
    policy: PolicySection = Field(default_factory=PolicySection)
    train: TrainConfig = Field(default_factory=TrainConfig)
    perturb: PerturbSection = Field(default_factory=PerturbSection)
    eval: EvalSection = Field(default_factory=EvalSection)

    def train_config(self) -> TrainConfig:
        """Trainer settings with the run seed filled in."""
        return self.train.model_copy(update={"seed": self.run.seed})


def _load_env_file(path: Path) -> Dict[str, str]:
    if not path.exists():
        return {}
    data: Dict[str, str] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            continue
        key, value = line.split("=", 1)
        data[key.strip()] = value.strip().strip('"').strip("'")
    return data


def _load_toml(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        loaded = toml_parser.loads(path.read_text())
    except Exception as exc:
        raise ConfigurationError(f"unable to load {path}: {exc}") from exc
    return _flatten(loaded)


def _flatten(tree: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def _nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if not name:
            raise ConfigurationError(f"config key {key!r} must live in a [section]")
        tree.setdefault(section, {})[name] = value
    return tree


def _seed_fallback(env: Mapping[str, str], env_file: Path) -> Optional[int]:
    raw = env.get(SEED_ENV, _load_env_file(env_file).get(SEED_ENV))
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def resolve_config(
    path: Path | str | None = None,
    overrides: Optional[Mapping[str, Any]] = None,
    *,
    env: Optional[Mapping[str, str]] = None,
    env_file: Path | None = None,
) -> RunConfig:
    """Return the resolved run configuration.

    Precedence: defaults < preset < config file < ``overrides``. ``DSP_SEED`` (process
    environment first, then the .env file) only fills ``run.seed`` when nothing else sets it.
    ``overrides`` uses dotted keys (``"train.lr"``); ``None`` values are ignored.
    """
    env = os.environ if env is None else env
    env_file = REPO_ROOT / ".env" if env_file is None else env_file
    from_file = _load_toml(Path(path)) if path is not None else {}
    flags = {key: value for key, value in (overrides or {}).items() if value is not None}

    preset = flags.get("run.preset", from_file.get("run.preset", "desk"))
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    if "train.seed" in from_file or "train.seed" in flags:
        raise ConfigurationError("set the seed under [run], not [train]")

    merged: Dict[str, Any] = dict(PRESETS[preset])
    merged.update(from_file)
    if "run.seed" not in merged and "run.seed" not in flags:
        seed = _seed_fallback(env, env_file)
        if seed is not None:
            merged["run.seed"] = seed
    merged.update(flags)
    merged["run.preset"] = preset

    try:
        return RunConfig.model_validate(_nest(merged))
    except PydanticValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}" for error in exc.errors()
        )
        raise ConfigurationError(f"invalid configuration: {problems}") from exc


def dump_config(config: RunConfig, path: Path | str) -> Path:
    """Write the resolved config as TOML; loading it back reproduces ``config``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(toml.dumps(config.model_dump(mode="json", exclude_none=True, exclude={"train": {"seed"}})))
    return path


if __name__ == "__main__":
    resolved = resolve_config(sys.argv[1] if len(sys.argv) > 1 else None)
    print(json.dumps(resolved.model_dump(mode="json"), indent=2))


__all__ = ["RunConfig", "PRESETS", "SEED_ENV", "resolve_config", "dump_config"]
