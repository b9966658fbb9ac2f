"""Conditional diffusion policy: embedders plus the denoiser MLP that predicts added noise."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .diffusion import NoiseSchedule, denoise_loss_batch
from .errors import CheckpointError, ConfigurationError, IndexOutOfRange, ShapeError
from .nn_core import (
    Activation,
    DenseLayer,
    ForwardCache,
    MlpParams,
    init_params,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    save_checkpoint,
)

LOGGER = logging.getLogger(__name__)

SECTION_NAMES = ("obs_embed", "act_embed", "time_embed", "denoiser")
DENOISER_LAYERS = 4


@dataclass(frozen=True)
class PolicyConfig:
    obs_dim: int
    act_dim: int
    hidden_dim: int = 128
    embed_dim: int = 128
    T: int = 5
    seed: int = 0


@dataclass
class PolicyCache:
    act_cache: ForwardCache
    obs_cache: ForwardCache
    denoiser_cache: ForwardCache
    steps: np.ndarray


@dataclass(frozen=True, eq=False)
class PolicyParams:
    obs_embed: MlpParams
    act_embed: MlpParams
    time_embed_table: np.ndarray
    denoiser: MlpParams

    def __post_init__(self) -> None:
        embed = self.embed_dim
        if self.act_embed.out_dim != embed or self.time_embed_table.ndim != 2 or (
            self.time_embed_table.shape[1] != embed
        ):
            raise ShapeError("observation, action and time embeddings must share one width")
        if self.denoiser.in_dim != 3 * embed:
            raise ShapeError(
                f"denoiser takes {self.denoiser.in_dim} inputs, expected {3 * embed}"
            )

    @property
    def embed_dim(self) -> int:
        return self.obs_embed.out_dim

    @property
    def obs_dim(self) -> int:
        return self.obs_embed.in_dim

    @property
    def act_dim(self) -> int:
        return self.denoiser.out_dim

    @property
    def T(self) -> int:
        return int(self.time_embed_table.shape[0])

    def arrays(self) -> List[np.ndarray]:
        return (
            self.obs_embed.arrays()
            + self.act_embed.arrays()
            + [self.time_embed_table]
            + self.denoiser.arrays()
        )

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "PolicyParams":
        n_obs = len(self.obs_embed.arrays())
        n_act = len(self.act_embed.arrays())
        if len(arrays) != len(self.arrays()):
            raise ShapeError(f"expected {len(self.arrays())} arrays, got {len(arrays)}")
        table = arrays[n_obs + n_act]
        if table.shape != self.time_embed_table.shape:
            raise ShapeError("time embedding table shape mismatch")
        return PolicyParams(
            obs_embed=self.obs_embed.with_arrays(arrays[:n_obs]),
            act_embed=self.act_embed.with_arrays(arrays[n_obs:n_obs + n_act]),
            time_embed_table=table,
            denoiser=self.denoiser.with_arrays(arrays[n_obs + n_act + 1:]),
        )

    def forward(
        self, a_t: np.ndarray, t: np.ndarray, obs: np.ndarray
    ) -> Tuple[np.ndarray, PolicyCache]:
        a_t = np.atleast_2d(np.asarray(a_t, dtype=np.float64))
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        steps = np.asarray(t, dtype=np.int64).reshape(-1)
        if not (a_t.shape[0] == obs.shape[0] == steps.shape[0]):
            raise ShapeError(
                f"batch sizes disagree: actions {a_t.shape[0]}, steps {steps.shape[0]}, "
                f"observations {obs.shape[0]}"
            )
        if steps.size and (steps.min() < 1 or steps.max() > self.T):
            raise IndexOutOfRange(f"diffusion step outside 1..{self.T}: {steps.min()}..{steps.max()}")
        act_features, act_cache = mlp_forward(self.act_embed, a_t)
        obs_features, obs_cache = mlp_forward(self.obs_embed, obs)
        joint = np.concatenate(
            [act_features, self.time_embed_table[steps - 1], obs_features], axis=1
        )
        eps_hat, denoiser_cache = mlp_forward(self.denoiser, joint)
        return eps_hat, PolicyCache(act_cache, obs_cache, denoiser_cache, steps)

    def backward(self, cache: PolicyCache, upstream: np.ndarray) -> "PolicyParams":
        embed = self.embed_dim
        denoiser_grads, joint_grad = mlp_backward(self.denoiser, cache.denoiser_cache, upstream)
        act_grads, _ = mlp_backward(self.act_embed, cache.act_cache, joint_grad[:, :embed])
        table_grad = np.zeros_like(self.time_embed_table)
        np.add.at(table_grad, cache.steps - 1, joint_grad[:, embed:2 * embed])
        obs_grads, _ = mlp_backward(self.obs_embed, cache.obs_cache, joint_grad[:, 2 * embed:])
        return PolicyParams(
            obs_embed=obs_grads,
            act_embed=act_grads,
            time_embed_table=table_grad,
            denoiser=denoiser_grads,
        )


def build_policy(config: PolicyConfig) -> PolicyParams:
    dims = {
        "obs_dim": config.obs_dim,
        "act_dim": config.act_dim,
        "hidden_dim": config.hidden_dim,
        "embed_dim": config.embed_dim,
        "T": config.T,
    }
    bad = {name: value for name, value in dims.items() if int(value) != value or value <= 0}
    if bad:
        raise ConfigurationError(f"policy dimensions must be positive integers: {bad}")
    seeds = np.random.SeedSequence(config.seed).generate_state(4)
    embed, hidden = config.embed_dim, config.hidden_dim
    obs_embed = init_params([config.obs_dim, embed, embed], int(seeds[0]))
    act_embed = init_params([config.act_dim, embed, embed], int(seeds[1]))
    # one-hot fan-in of T, so the table is initialised like a T -> embed dense layer
    table_layer = init_params([config.T, embed], int(seeds[2])).layers[0]
    denoiser = init_params(
        [3 * embed] + [hidden] * (DENOISER_LAYERS - 1) + [config.act_dim], int(seeds[3])
    )
    return PolicyParams(
        obs_embed=obs_embed,
        act_embed=act_embed,
        time_embed_table=np.ascontiguousarray(table_layer.weight.T),
        denoiser=denoiser,
    )


def predict_noise(params: PolicyParams, a_t: np.ndarray, t: int, obs: np.ndarray) -> np.ndarray:
    a_t = np.asarray(a_t, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if a_t.shape != (params.act_dim,):
        raise ShapeError(f"action has shape {a_t.shape}, policy expects ({params.act_dim},)")
    if obs.shape != (params.obs_dim,):
        raise ShapeError(f"observation has shape {obs.shape}, policy expects ({params.obs_dim},)")
    eps_hat, _ = params.forward(a_t[None, :], np.array([t]), obs[None, :])
    return eps_hat[0]


def policy_gradients(
    params: PolicyParams,
    obs: np.ndarray,
    actions: np.ndarray,
    schedule: NoiseSchedule,
    rng,
) -> Tuple[float, PolicyParams]:
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if obs.shape[0] == 0:
        raise ShapeError("cannot compute gradients of an empty batch")
    if schedule.T != params.T:
        raise ShapeError(f"schedule has {schedule.T} steps but the policy embeds {params.T}")
    return denoise_loss_batch(params, obs, actions, schedule, rng)


def zeros_like_policy(params: PolicyParams) -> PolicyParams:
    return params.with_arrays([np.zeros_like(arr) for arr in params.arrays()])


def policy_sections(params: PolicyParams) -> dict:
    table = DenseLayer(
        weight=params.time_embed_table,
        bias=np.zeros(params.T),
        activation=Activation.IDENTITY,
    )
    return {
        "obs_embed": params.obs_embed,
        "act_embed": params.act_embed,
        "time_embed": MlpParams(layers=(table,)),
        "denoiser": params.denoiser,
    }


def save_policy(path: Path | str, params: PolicyParams) -> Path:
    return save_checkpoint(path, policy_sections(params))


def load_policy(path: Path | str) -> PolicyParams:
    sections = load_checkpoint(path)
    missing = [name for name in SECTION_NAMES if name not in sections]
    if missing:
        raise CheckpointError(f"checkpoint {path} lacks policy sections {missing}")
    try:
        return PolicyParams(
            obs_embed=sections["obs_embed"],
            act_embed=sections["act_embed"],
            time_embed_table=sections["time_embed"].layers[0].weight,
            denoiser=sections["denoiser"],
        )
    except ShapeError as exc:
        raise CheckpointError(f"checkpoint {path} is not a policy: {exc}") from exc


__all__ = [
    "PolicyConfig",
    "PolicyParams",
    "PolicyCache",
    "build_policy",
    "predict_noise",
    "policy_gradients",
    "zeros_like_policy",
    "save_policy",
    "load_policy",
]
