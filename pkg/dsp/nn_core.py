"""Dense network core: parameters, forward/backward passes, AdamW and checkpoints.

Everything runs in float64 on numpy arrays. Inputs may be a single vector of
shape ``(in,)`` or a batch of shape ``(B, in)``; batched parameter gradients are
summed over the batch.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Protocol, Sequence, Tuple, TypeVar

import numpy as np

from .errors import CheckpointError, ConfigurationError, NumericError, ShapeError

LOGGER = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DSPCKPT1"
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.RELU

    def __post_init__(self) -> None:
        if self.weight.ndim != 2:
            raise ShapeError(f"weight must be a matrix, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weight rows {self.weight.shape[0]}"
            )

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[0])


@dataclass(frozen=True, eq=False)
class MlpParams:
    layers: Tuple[DenseLayer, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ShapeError("an MLP needs at least one layer")
        for index in range(1, len(self.layers)):
            prev, cur = self.layers[index - 1], self.layers[index]
            if prev.out_dim != cur.in_dim:
                raise ShapeError(
                    f"layer {index} expects {cur.in_dim} inputs but layer {index - 1} "
                    f"produces {prev.out_dim}"
                )

    @property
    def dims(self) -> List[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def arrays(self) -> List[np.ndarray]:
        flat: List[np.ndarray] = []
        for layer in self.layers:
            flat.extend((layer.weight, layer.bias))
        return flat

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        if len(arrays) != 2 * len(self.layers):
            raise ShapeError(f"expected {2 * len(self.layers)} arrays, got {len(arrays)}")
        layers = []
        for index, layer in enumerate(self.layers):
            weight, bias = arrays[2 * index], arrays[2 * index + 1]
            if weight.shape != layer.weight.shape or bias.shape != layer.bias.shape:
                raise ShapeError(f"array shapes for layer {index} do not match")
            layers.append(DenseLayer(weight=weight, bias=bias, activation=layer.activation))
        return MlpParams(layers=tuple(layers))


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations recorded by :func:`mlp_forward`."""

    inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)
    batched: bool = False


class ParamTree(Protocol):
    def arrays(self) -> List[np.ndarray]: ...

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "ParamTree": ...


P = TypeVar("P", bound=ParamTree)


def init_params(layer_dims: Sequence[int], seed: int) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, ReLU hidden layers."""
    dims = [int(dim) for dim in layer_dims]
    if len(dims) < 2:
        raise ConfigurationError(f"need at least two layer dims, got {dims}")
    if any(dim <= 0 for dim in dims):
        raise ConfigurationError(f"layer dims must be positive, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for index, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        last = index == len(dims) - 2
        layers.append(
            DenseLayer(
                weight=weight,
                bias=np.zeros(fan_out),
                activation=Activation.IDENTITY if last else Activation.RELU,
            )
        )
    return MlpParams(layers=tuple(layers))


def mlp_forward(params: MlpParams, inputs: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != params.in_dim:
        raise ShapeError(f"expected input with last dim {params.in_dim}, got shape {x.shape}")
    cache = ForwardCache(batched=x.ndim == 2)
    for layer in params.layers:
        cache.inputs.append(x)
        z = x @ layer.weight.T + layer.bias
        cache.pre_activations.append(z)
        x = np.maximum(z, 0.0) if layer.activation is Activation.RELU else z
    return x, cache


def mlp_backward(
    params: MlpParams, cache: ForwardCache, upstream_grad: np.ndarray
) -> Tuple[MlpParams, np.ndarray]:
    """Gradients of ``sum(output * upstream_grad)`` w.r.t. every parameter and the input."""
    if len(cache.inputs) != len(params.layers):
        raise ShapeError(
            f"cache has {len(cache.inputs)} layers but params have {len(params.layers)}"
        )
    grad = np.asarray(upstream_grad, dtype=np.float64)
    expected = cache.pre_activations[-1].shape
    if grad.shape != expected:
        raise ShapeError(f"upstream grad shape {grad.shape} does not match output {expected}")

    grads: List[DenseLayer] = []
    for layer, x, z in zip(
        reversed(params.layers), reversed(cache.inputs), reversed(cache.pre_activations)
    ):
        if x.shape[-1] != layer.in_dim or z.shape[-1] != layer.out_dim:
            raise ShapeError("cache does not belong to these parameters")
        if layer.activation is Activation.RELU:
            grad = grad * (z > 0.0)
        if cache.batched:
            weight_grad = grad.T @ x
            bias_grad = grad.sum(axis=0)
        else:
            weight_grad = np.outer(grad, x)
            bias_grad = grad.copy()
        grads.append(DenseLayer(weight=weight_grad, bias=bias_grad, activation=layer.activation))
        grad = grad @ layer.weight
    grads.reverse()
    return MlpParams(layers=tuple(grads)), grad


@dataclass(frozen=True)
class AdamWState:
    first_moment: ParamTree
    second_moment: ParamTree
    step_count: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    @classmethod
    def initial(cls, params: ParamTree, **hyper: float) -> "AdamWState":
        zeros = params.with_arrays([np.zeros_like(arr) for arr in params.arrays()])
        return cls(first_moment=zeros, second_moment=zeros, **hyper)


def adamw_step(params: P, grads: ParamTree, state: AdamWState) -> Tuple[P, AdamWState]:
    """One AdamW update with bias correction and decoupled weight decay."""
    param_arrays = params.arrays()
    grad_arrays = grads.arrays()
    first = state.first_moment.arrays()
    second = state.second_moment.arrays()
    if not (len(param_arrays) == len(grad_arrays) == len(first) == len(second)):
        raise ShapeError("parameters, gradients and optimizer moments disagree in structure")
    for index, (param, grad) in enumerate(zip(param_arrays, grad_arrays)):
        if param.shape != grad.shape:
            raise ShapeError(f"gradient {index} has shape {grad.shape}, expected {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient in array {index}", index=index)

    step = state.step_count + 1
    correction1 = 1.0 - state.beta1**step
    correction2 = 1.0 - state.beta2**step
    decay = 1.0 - state.lr * state.weight_decay
    new_params, new_first, new_second = [], [], []
    for param, grad, m, v in zip(param_arrays, grad_arrays, first, second):
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        new_params.append(param * decay - state.lr * update)
        new_first.append(m)
        new_second.append(v)

    new_state = AdamWState(
        first_moment=state.first_moment.with_arrays(new_first),
        second_moment=state.second_moment.with_arrays(new_second),
        step_count=step,
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        weight_decay=state.weight_decay,
    )
    return params.with_arrays(new_params), new_state


def encode_checkpoint(sections: Mapping[str, MlpParams]) -> bytes:
    chunks = [CHECKPOINT_MAGIC, _U32.pack(len(sections))]
    for name, params in sections.items():
        encoded = name.encode("utf-8")
        chunks.append(_U16.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(len(params.layers)))
    for params in sections.values():
        for layer in params.layers:
            chunks.append(_U32.pack(layer.out_dim))
            chunks.append(_U32.pack(layer.in_dim))
            chunks.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes) -> None:
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointError(
                f"checkpoint truncated at byte {self.offset} (needed {size} more bytes)"
            )
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def u16(self) -> int:
        return _U16.unpack(self.take(_U16.size))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(_U32.size))[0]


def decode_checkpoint(payload: bytes) -> Dict[str, MlpParams]:
    reader = _Reader(payload)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a DSP checkpoint (bad magic)")
    index: List[Tuple[str, int]] = []
    for _ in range(reader.u32()):
        try:
            name = reader.take(reader.u16()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"bad section name: {exc}") from exc
        index.append((name, reader.u32()))

    sections: Dict[str, MlpParams] = {}
    for name, n_layers in index:
        if n_layers == 0:
            raise CheckpointError(f"section {name!r} has no layers")
        layers = []
        for layer_index in range(n_layers):
            out_dim, in_dim = reader.u32(), reader.u32()
            weight = np.frombuffer(reader.take(8 * out_dim * in_dim), dtype="<f8")
            bias = np.frombuffer(reader.take(8 * out_dim), dtype="<f8")
            last = layer_index == n_layers - 1
            layers.append(
                DenseLayer(
                    weight=weight.reshape(out_dim, in_dim).astype(np.float64),
                    bias=bias.astype(np.float64),
                    activation=Activation.IDENTITY if last else Activation.RELU,
                )
            )
        try:
            sections[name] = MlpParams(layers=tuple(layers))
        except ShapeError as exc:
            raise CheckpointError(f"section {name!r}: {exc}") from exc
    if reader.offset != len(payload):
        raise CheckpointError(f"{len(payload) - reader.offset} trailing bytes after last section")
    return sections


def save_checkpoint(path: Path | str, sections: Mapping[str, MlpParams]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(sections))
    LOGGER.debug("Wrote checkpoint %s (%d sections)", path, len(sections))
    return path


def load_checkpoint(path: Path | str) -> Dict[str, MlpParams]:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"unable to read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(payload)


__all__ = [
    "Activation",
    "DenseLayer",
    "MlpParams",
    "ForwardCache",
    "AdamWState",
    "init_params",
    "mlp_forward",
    "mlp_backward",
    "adamw_step",
    "encode_checkpoint",
    "decode_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]
