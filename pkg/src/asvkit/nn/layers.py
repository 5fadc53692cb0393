"""Parameterized layers built on the autodiff tensor.

Weights use Xavier-uniform initialization; biases start at zero except
LSTM forget-gate biases, which start at +1 so cells default to
remembering.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Base class: parameter discovery, training-mode flag, grad reset."""

    def __init__(self):
        self.training = True

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_training(self, flag: bool) -> None:
        self.training = flag
        for value in vars(self).values():
            if isinstance(value, Module):
                value.set_training(flag)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.set_training(flag)


class Dense(Module):
    """Affine map on the last axis, with optional fused activation."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 activation: str | None = None):
        super().__init__()
        self.w = xavier_uniform(rng, (in_dim, out_dim), in_dim, out_dim)
        self.b = zeros_param((out_dim,))
        if activation not in (None, "relu", "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = False
        if x.ndim == 1:
            x = T.reshape(x, (1, -1))
            squeeze = True
        y = T.add(T.matmul(x, self.w), self.b)
        if self.activation == "relu":
            y = T.relu(y)
        elif self.activation == "tanh":
            y = T.tanh(y)
        return T.reshape(y, (-1,)) if squeeze else y


class Dropout(Module):
    """Inverted dropout driven by a shared generator; identity at eval."""

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.rate, self.rng, self.training)


class LstmCell(Module):
    """One LSTM cell: four gate weight matrices of shape
    [hidden, hidden + input] acting on [h_{t-1}, x_t]."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        shape = (hidden_dim, hidden_dim + input_dim)
        fan_in, fan_out = hidden_dim + input_dim, hidden_dim
        self.w_f = xavier_uniform(rng, shape, fan_in, fan_out)
        self.w_i = xavier_uniform(rng, shape, fan_in, fan_out)
        self.w_o = xavier_uniform(rng, shape, fan_in, fan_out)
        self.w_c = xavier_uniform(rng, shape, fan_in, fan_out)
        self.b_f = Tensor(np.ones(hidden_dim), requires_grad=True)
        self.b_i = zeros_param((hidden_dim,))
        self.b_o = zeros_param((hidden_dim,))
        self.b_c = zeros_param((hidden_dim,))

    def step(self, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        """One recurrence step built from elementwise tape ops.

        x: [batch, input]; h_prev, c_prev: [batch, hidden].
        """
        z = T.concat([h_prev, x], axis=-1)
        f = T.sigmoid(T.add(T.matmul(z, T.transpose(self.w_f)), self.b_f))
        i = T.sigmoid(T.add(T.matmul(z, T.transpose(self.w_i)), self.b_i))
        o = T.sigmoid(T.add(T.matmul(z, T.transpose(self.w_o)), self.b_o))
        g = T.tanh(T.add(T.matmul(z, T.transpose(self.w_c)), self.b_c))
        c = T.add(T.mul(f, c_prev), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
        return h, c

    def sequence(self, x: Tensor) -> Tensor:
        """Full [batch, time, hidden] run as one fused tape node."""
        return T.lstm_sequence(
            x, self.w_f, self.w_i, self.w_o, self.w_c,
            self.b_f, self.b_i, self.b_o, self.b_c,
        )


def lstm_cell_step(cell: LstmCell, x, h_prev, c_prev) -> tuple[Tensor, Tensor]:
    return cell.step(T.as_tensor(x), T.as_tensor(h_prev), T.as_tensor(c_prev))


class Lstm(Module):
    """Unidirectional LSTM; returns the full hidden sequence."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        super().__init__()
        self.cell = LstmCell(input_dim, hidden_dim, rng)
        self.hidden_dim = hidden_dim

    def __call__(self, x: Tensor) -> Tensor:
        return self.cell.sequence(x)

    def final_state(self, out: Tensor) -> Tensor:
        return out[:, -1, :]


class Bilstm(Module):
    """Bidirectional LSTM: independent forward and backward cells, output
    [batch, time, 2 * hidden] with the forward half first."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        super().__init__()
        self.forward_cell = LstmCell(input_dim, hidden_dim, rng)
        self.backward_cell = LstmCell(input_dim, hidden_dim, rng)
        self.hidden_dim = hidden_dim

    def __call__(self, x: Tensor) -> Tensor:
        out_f = self.forward_cell.sequence(x)
        out_b = T.flip_time(self.backward_cell.sequence(T.flip_time(x)))
        return T.concat([out_f, out_b], axis=2)

    def final_state(self, out: Tensor) -> Tensor:
        """Concatenate each direction's terminal state: the forward half
        at the last step and the backward half at the first step."""
        h = self.hidden_dim
        return T.concat([out[:, -1, :h], out[:, 0, h:]], axis=-1)


def bilstm_forward(layer: Bilstm, seq) -> Tensor:
    """Run a BiLSTM over a single unbatched [time, features] sequence."""
    seq = T.as_tensor(seq)
    out = layer(T.reshape(seq, (1, *seq.shape)))
    return T.reshape(out, out.shape[1:])


class Attention(Module):
    """Soft attention over a sequence of column vectors.

    Given H = [h_1 .. h_T] (columns) and a query vector h_x:

        P = tanh(W_h H)
        alpha = softmax(w^T P)
        R = H alpha^T
        out = tanh(W_m R + W_n h_x)
    """

    def __init__(self, column_dim: int, query_dim: int, attn_dim: int,
                 out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.w_h = xavier_uniform(rng, (attn_dim, column_dim), column_dim, attn_dim)
        self.w = xavier_uniform(rng, (1, attn_dim), attn_dim, 1)
        self.w_m = xavier_uniform(rng, (out_dim, column_dim), column_dim, out_dim)
        self.w_n = xavier_uniform(rng, (out_dim, query_dim), query_dim, out_dim)

    def __call__(self, h_seq: Tensor, query: Tensor) -> tuple[Tensor, Tensor]:
        """h_seq: [batch, column_dim, time]; query: [batch, query_dim].
        Returns ([batch, out_dim] fused vector, [batch, time] weights)."""
        bsz, _, steps = h_seq.shape
        p = T.tanh(T.matmul(self.w_h, h_seq))
        scores = T.reshape(T.matmul(self.w, p), (bsz, steps))
        alpha = T.softmax(scores, axis=-1)
        r = T.reshape(T.matmul(h_seq, T.reshape(alpha, (bsz, steps, 1))), (bsz, -1))
        out = T.tanh(T.add(T.matmul(r, T.transpose(self.w_m)),
                           T.matmul(query, T.transpose(self.w_n))))
        return out, alpha


def attention_forward(layer: Attention, h_seq, query) -> tuple[Tensor, Tensor]:
    """Attention over one unbatched [column_dim, time] sequence."""
    h_seq = T.as_tensor(h_seq)
    query = T.as_tensor(query)
    out, alpha = layer(
        T.reshape(h_seq, (1, *h_seq.shape)), T.reshape(query, (1, *query.shape))
    )
    return T.reshape(out, (-1,)), T.reshape(alpha, (-1,))


class Conv2d(Module):
    """3x3-style same-padded convolution layer."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, bias: bool = True):
        super().__init__()
        fan_in = in_ch * kernel * kernel
        fan_out = out_ch * kernel * kernel
        self.w = xavier_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, fan_out)
        self.b = zeros_param((out_ch,)) if bias else None
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b, stride=self.stride)


class MaxPool2d(Module):
    """Non-overlapping max pooling with a square window."""

    def __init__(self, size: int):
        super().__init__()
        self.size = size

    def __call__(self, x: Tensor) -> Tensor:
        return T.maxpool2d(x, self.size)


class ResidualBlock(Module):
    """conv-relu-conv plus identity (or a 1x1 projection when the shape
    changes), then relu. With zero-initialized convolutions the block
    reduces to relu(x)."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, stride: int = 1):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, stride=stride)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng)
        if stride != 1 or in_ch != out_ch:
            self.project = Conv2d(in_ch, out_ch, 1, rng, stride=stride, bias=False)
        else:
            self.project = None

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv2(T.relu(self.conv1(x)))
        shortcut = self.project(x) if self.project is not None else x
        return T.relu(T.add(y, shortcut))


def residual_block_forward(block: ResidualBlock, x) -> Tensor:
    return block(T.as_tensor(x))


def global_average_pool(x: Tensor) -> Tensor:
    """Mean over the two spatial axes of [batch, channels, h, w]."""
    return T.mean(x, axis=(2, 3))
