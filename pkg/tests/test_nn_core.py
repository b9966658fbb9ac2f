from dataclasses import dataclass
from typing import List

import numpy as np
import pytest

from dsp.errors import CheckpointError, ConfigurationError, NumericError, ShapeError
from dsp.nn_core import (
    Activation,
    AdamWState,
    adamw_step,
    decode_checkpoint,
    encode_checkpoint,
    init_params,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    save_checkpoint,
)


@dataclass
class _Scalar:
    value: np.ndarray

    def arrays(self) -> List[np.ndarray]:
        return [self.value]

    def with_arrays(self, arrays):
        return _Scalar(arrays[0])


def test_init_params_layout():
    params = init_params([3, 5, 2], seed=0)
    assert params.dims == [3, 5, 2]
    assert [layer.activation for layer in params.layers] == [Activation.RELU, Activation.IDENTITY]
    assert np.all(np.abs(params.layers[0].weight) <= 1 / np.sqrt(3))
    assert np.all(params.layers[1].bias == 0)
    again = init_params([3, 5, 2], seed=0)
    for left, right in zip(params.arrays(), again.arrays()):
        assert np.array_equal(left, right)


def test_init_params_rejects_bad_dims():
    with pytest.raises(ConfigurationError):
        init_params([4], seed=0)
    with pytest.raises(ConfigurationError):
        init_params([4, 0, 2], seed=0)


def test_forward_vector_matches_batch_row():
    params = init_params([4, 6, 3], seed=1)
    batch = np.random.default_rng(0).normal(size=(5, 4))
    out_batch, _ = mlp_forward(params, batch)
    out_row, _ = mlp_forward(params, batch[2])
    assert out_batch.shape == (5, 3)
    np.testing.assert_allclose(out_row, out_batch[2], rtol=1e-12, atol=1e-12)


def test_forward_rejects_wrong_width():
    params = init_params([4, 3], seed=0)
    with pytest.raises(ShapeError):
        mlp_forward(params, np.zeros(5))


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    params = init_params([3, 5, 4, 2], seed=2)
    params = params.with_arrays([arr + rng.normal(scale=0.1, size=arr.shape) for arr in params.arrays()])
    x = rng.normal(size=(6, 3))
    upstream = rng.normal(size=(6, 2))
    out, cache = mlp_forward(params, x)
    grads, input_grad = mlp_backward(params, cache, upstream)

    def objective(candidate, inputs=x):
        value, _ = mlp_forward(candidate, inputs)
        return float(np.sum(value * upstream))

    h = 1e-5
    arrays = params.arrays()
    for index, grad in enumerate(grads.arrays()):
        for flat in range(arrays[index].size):
            plus = [arr.copy() for arr in arrays]
            minus = [arr.copy() for arr in arrays]
            plus[index].flat[flat] += h
            minus[index].flat[flat] -= h
            numeric = (objective(params.with_arrays(plus)) - objective(params.with_arrays(minus))) / (2 * h)
            assert abs(numeric - grad.flat[flat]) <= 1e-6 + 1e-4 * abs(numeric)

    shifted = x.copy()
    shifted[1, 2] += h
    lowered = x.copy()
    lowered[1, 2] -= h
    numeric = (objective(params, shifted) - objective(params, lowered)) / (2 * h)
    assert abs(numeric - input_grad[1, 2]) <= 1e-6 + 1e-4 * abs(numeric)


def test_backward_single_vector_uses_outer_product():
    params = init_params([2, 3], seed=0)
    x = np.array([0.5, -1.0])
    _, cache = mlp_forward(params, x)
    grads, _ = mlp_backward(params, cache, np.array([1.0, 0.0, 2.0]))
    np.testing.assert_allclose(grads.layers[0].weight, np.outer([1.0, 0.0, 2.0], x))


def test_adamw_first_step_moves_by_lr():
    state = AdamWState.initial(_Scalar(np.array([1.0])), lr=0.1, weight_decay=0.0)
    params, state = adamw_step(_Scalar(np.array([1.0])), _Scalar(np.array([3.0])), state)
    # bias-corrected first step has unit magnitude
    np.testing.assert_allclose(params.value, [0.9], atol=1e-7)
    assert state.step_count == 1


def test_adamw_weight_decay_is_decoupled():
    state = AdamWState.initial(_Scalar(np.array([2.0])), lr=0.1, weight_decay=0.5)
    params, _ = adamw_step(_Scalar(np.array([2.0])), _Scalar(np.array([0.0])), state)
    np.testing.assert_allclose(params.value, [2.0 * (1 - 0.05)])


def test_adamw_rejects_non_finite_gradients():
    state = AdamWState.initial(_Scalar(np.array([1.0])))
    with pytest.raises(NumericError):
        adamw_step(_Scalar(np.array([1.0])), _Scalar(np.array([np.nan])), state)


def test_checkpoint_round_trip(tmp_path):
    sections = {"encoder": init_params([3, 4, 4], seed=0), "head": init_params([4, 2], seed=1)}
    path = save_checkpoint(tmp_path / "model.ckpt", sections)
    loaded = load_checkpoint(path)
    assert list(loaded) == ["encoder", "head"]
    for name in sections:
        for left, right in zip(sections[name].arrays(), loaded[name].arrays()):
            assert np.array_equal(left, right)
        assert loaded[name].layers[-1].activation is Activation.IDENTITY
    assert path.read_bytes()[:8] == b"DSPCKPT1"


def test_checkpoint_corruption_is_detected():
    payload = encode_checkpoint({"net": init_params([2, 2], seed=0)})
    with pytest.raises(CheckpointError):
        decode_checkpoint(payload[:-3])
    with pytest.raises(CheckpointError):
        decode_checkpoint(payload + b"\x00")
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"NOTACKPT" + payload[8:])


def test_load_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")
