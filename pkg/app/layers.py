"""
Parameterised building blocks for the sentence classifiers.

Each layer owns named Parameters and exposes them in a fixed order through
`parameters()`; that order is the order used by checkpoints.
"""
import logging
from typing import List, Sequence, Tuple

import numpy as np

from app import autograd as ag
from app.autograd import Parameter, RngStream, Tensor

logger = logging.getLogger(__name__)


class Layer:
    """Base class collecting Parameters from attributes and sub-layers"""

    def parameters(self) -> List[Parameter]:
        params = []
        for value in self.__dict__.values():
            if isinstance(value, Parameter):
                params.append(value)
            elif isinstance(value, Layer):
                params.extend(value.parameters())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Layer):
                        params.extend(item.parameters())
        return params


def _uniform(rng: RngStream, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, shape).astype(ag.get_default_dtype())


class Embedding(Layer):
    def __init__(self, values: np.ndarray, name: str = 'embedding'):
        self.weight = Parameter(values, name=f'{name}.weight')

    def __call__(self, indices) -> Tensor:
        return ag.embedding_lookup(self.weight, indices)


class Linear(Layer):
    """Fully-connected layer y = x W + b"""

    def __init__(self, in_features: int, out_features: int, rng: RngStream, name: str):
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (in_features, out_features)), name=f'{name}.weight')
        self.bias = Parameter(np.zeros(out_features), name=f'{name}.bias')

    def __call__(self, x: Tensor) -> Tensor:
        return ag.linear(x, self.weight, self.bias)


class LSTMCell(Layer):
    """
    Single LSTM step with the four gates packed into one matrix.

    Gate order in the packed columns is input, forget, candidate, output.
    The forget-gate bias starts at 1.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: RngStream, name: str):
        self.input_size = input_size
        self.hidden_size = hidden_size
        bound = 1.0 / np.sqrt(hidden_size)
        self.weight = Parameter(
            _uniform(rng, bound, (input_size + hidden_size, 4 * hidden_size)), name=f'{name}.weight'
        )
        bias = np.zeros(4 * hidden_size)
        bias[hidden_size:2 * hidden_size] = 1.0
        self.bias = Parameter(bias, name=f'{name}.bias')

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
        hs = self.hidden_size
        gates = ag.linear(ag.concat([x, h], axis=1), self.weight, self.bias)
        i = ag.sigmoid(ag.getitem(gates, (slice(None), slice(0, hs))))
        f = ag.sigmoid(ag.getitem(gates, (slice(None), slice(hs, 2 * hs))))
        g = ag.tanh(ag.getitem(gates, (slice(None), slice(2 * hs, 3 * hs))))
        o = ag.sigmoid(ag.getitem(gates, (slice(None), slice(3 * hs, 4 * hs))))
        c_new = ag.add(ag.mul(f, c), ag.mul(i, g))
        h_new = ag.mul(o, ag.tanh(c_new))
        return h_new, c_new

    def initial_state(self, batch: int) -> Tuple[Tensor, Tensor]:
        zeros = np.zeros((batch, self.hidden_size), dtype=self.weight.dtype)
        return Tensor(zeros), Tensor(zeros.copy())


class BiLSTM(Layer):
    """
    Bidirectional LSTM over a right-padded batch.

    Padded steps leave the recurrent state untouched, so the forward final
    state is the state after the last real token and the backward direction
    only starts accumulating once it reaches real tokens.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: RngStream, name: str):
        self.hidden_size = hidden_size
        self.forward_cell = LSTMCell(input_size, hidden_size, rng, f'{name}.fwd')
        self.backward_cell = LSTMCell(input_size, hidden_size, rng, f'{name}.bwd')

    def _run(self, cell: LSTMCell, steps: Sequence[Tensor], mask: np.ndarray, order) -> Tuple[List[Tensor], Tensor]:
        batch = steps[0].shape[0]
        h, c = cell.initial_state(batch)
        outputs = [None] * len(steps)
        for t in order:
            keep = mask[:, t:t + 1]
            h_new, c_new = cell(steps[t], h, c)
            h = ag.mask_blend(h_new, h, keep)
            c = ag.mask_blend(c_new, c, keep)
            outputs[t] = h
        return outputs, h

    def __call__(self, steps: Sequence[Tensor], mask: np.ndarray):
        """
        Args:
            steps: T tensors of shape (B, input_size)
            mask: (B, T) 1 for real tokens, 0 for padding

        Returns:
            (outputs, final_forward, final_backward) where outputs are T
            tensors of shape (B, 2 * hidden_size)
        """
        count = len(steps)
        fwd_out, fwd_final = self._run(self.forward_cell, steps, mask, range(count))
        bwd_out, bwd_final = self._run(self.backward_cell, steps, mask, range(count - 1, -1, -1))
        outputs = [ag.concat([f, b], axis=1) for f, b in zip(fwd_out, bwd_out)]
        return outputs, fwd_final, bwd_final


class Conv1d(Layer):
    """Valid convolution over time with `maps` filters of one width"""

    def __init__(self, width: int, in_features: int, maps: int, rng: RngStream, name: str):
        self.width = width
        bound = 1.0 / np.sqrt(width * in_features)
        self.weight = Parameter(_uniform(rng, bound, (width, in_features, maps)), name=f'{name}.weight')
        self.bias = Parameter(np.zeros(maps), name=f'{name}.bias')

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv1d(x, self.weight, self.bias)
