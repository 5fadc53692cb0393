"""Reverse-mode automatic differentiation on dense float64 arrays.

A Tensor wraps a numpy array and remembers how it was produced; calling
backward() on a scalar loss walks the tape in reverse topological order
and accumulates gradients into the requires_grad leaves. Heavy ops
(conv2d, maxpool2d, lstm_sequence, softmax, cross_entropy) are fused
primitives with hand-written vector-Jacobian products; everything else
composes from elementwise and matmul nodes.

The tape is released as backward() visits each node, so a graph cannot
be differentiated twice.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is not None:
                if node._vjp is not None:
                    need = tuple(p.requires_grad for p in node._parents)
                    for parent, pg in zip(node._parents, node._vjp(g, need)):
                        if pg is None or not parent.requires_grad:
                            continue
                        prev = grads.get(id(parent))
                        grads[id(parent)] = pg if prev is None else prev + pg
                elif node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
            node._parents = ()
            node._vjp = None

    # ----- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


# ----- elementwise and shape primitives ------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g, need):
        return (
            _unbroadcast(g, a.shape) if need[0] else None,
            _unbroadcast(g, b.shape) if need[1] else None,
        )

    return _make(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g, need):
        return (
            _unbroadcast(g, a.shape) if need[0] else None,
            _unbroadcast(-g, b.shape) if need[1] else None,
        )

    return _make(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g, need):
        return (
            _unbroadcast(g * b.data, a.shape) if need[0] else None,
            _unbroadcast(g * a.data, b.shape) if need[1] else None,
        )

    return _make(a.data * b.data, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g, need: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def vjp(g, need):
        ga = gb = None
        if need[0]:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if need[1]:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), vjp)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g, need: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _make(y, (a,), lambda g, need: (g * y * (1.0 - y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def vjp(g, need):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _make(y, (a,), lambda g, need: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g, need: (g / a.data,))


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def vjp(g, need):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def vjp(g, need):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.shape).copy(),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g, need: (g.reshape(orig),))


def swapaxes(a, ax1, ax2) -> Tensor:
    a = as_tensor(a)
    return _make(
        np.swapaxes(a.data, ax1, ax2).copy(),
        (a,),
        lambda g, need: (np.swapaxes(g, ax1, ax2),),
    )


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    return swapaxes(a, -1, -2)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def vjp(g, need):
        buf = np.zeros(a.shape)
        np.add.at(buf, idx, g)
        return (buf,)

    data = a.data[idx]
    if isinstance(data, np.ndarray):
        data = data.copy()
    return _make(data, (a,), vjp)


def flip_time(a) -> Tensor:
    """Reverse axis 1 (the time axis of a [batch, time, dim] tensor)."""
    return getitem(a, (slice(None), slice(None, None, -1)))


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g, need):
        out = []
        for i in range(len(tensors)):
            if not need[i]:
                out.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def vjp(g, need):
        parts = np.moveaxis(g, axis, 0)
        return tuple(parts[i] if need[i] else None for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


# ----- softmax and loss -----------------------------------------------------


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g, need):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _make(y, (a,), vjp)


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log likelihood of integer targets under softmax
    of the logits. logits: [batch, classes]; targets: [batch] ints."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2:
        raise ValueError("logits must be [batch, classes]")
    batch, n_classes = logits.shape
    if targets.size != batch:
        raise ValueError("target count must match batch size")
    if targets.min() < 0 or targets.max() >= n_classes:
        raise ValueError("target class index out of range")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    loss = -log_probs[np.arange(batch), targets].mean()

    def vjp(g, need):
        probs = np.exp(log_probs)
        probs[np.arange(batch), targets] -= 1.0
        return (probs * (float(g) / batch),)

    return _make(loss, (logits,), vjp)


def dropout(a, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: zero a `rate` fraction and scale the survivors by
    1 / (1 - rate). Identity when rate is 0 or when not training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    a = as_tensor(a)
    if rate == 0.0 or not training:
        return a
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make(a.data * mask, (a,), lambda g, need: (g * mask,))


# ----- convolution and pooling ----------------------------------------------


def _col_view(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int):
    b, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, kh, kw, oh, ow),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )


def conv2d(x, w, b=None, stride: int = 1) -> Tensor:
    """2-D cross-correlation over [batch, channels, height, width] input
    with zero 'same' padding (output spatial size is ceil(size / stride)
    for odd kernels)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects 4-D input and weights")
    bsz, cin, h, wd = x.shape
    f, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, weights {cin_w}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel sides must be odd")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (wd + 2 * pw - kw) // stride + 1
    cols = _col_view(xp, kh, kw, stride, oh, ow).reshape(bsz, cin * kh * kw, oh * ow)
    wmat = w.data.reshape(f, cin * kh * kw)
    out = np.matmul(wmat, cols).reshape(bsz, f, oh, ow)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data.reshape(1, f, 1, 1)
        parents.append(b)

    def vjp(g, need):
        gm = g.reshape(bsz, f, oh * ow)
        gx = gw = gb = None
        if need[1]:
            gw = np.tensordot(gm, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if need[0]:
            dcols = np.matmul(wmat.T, gm).reshape(bsz, cin, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    dxp[:, :, u : u + oh * stride : stride, v : v + ow * stride : stride] += dcols[
                        :, :, u, v
                    ]
            gx = dxp[:, :, ph : ph + h, pw : pw + wd]
        if len(need) > 2 and need[2]:
            gb = g.sum(axis=(0, 2, 3))
        out_grads = [gx, gw]
        if b is not None:
            out_grads.append(gb)
        return tuple(out_grads)

    return _make(out, tuple(parents), vjp)


def maxpool2d(x, kernel: int = 2, stride: int | None = None) -> Tensor:
    """Max pooling over [batch, channels, height, width]."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError("maxpool2d expects 4-D input")
    stride = kernel if stride is None else stride
    bsz, c, h, w = x.shape
    if h < kernel or w < kernel:
        raise ValueError("input smaller than pooling kernel")
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    windows = _col_view(x.data, kernel, kernel, stride, oh, ow)
    flat = windows.transpose(0, 1, 4, 5, 2, 3).reshape(bsz, c, oh, ow, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., np.newaxis], axis=-1)[..., 0]

    def vjp(g, need):
        gx = np.zeros_like(x.data)
        bi, ci, hi, wi = np.indices((bsz, c, oh, ow))
        rows = hi * stride + arg // kernel
        cols_ = wi * stride + arg % kernel
        np.add.at(gx, (bi, ci, rows, cols_), g)
        return (gx,)

    return _make(out, (x,), vjp)


# ----- fused LSTM over a sequence -------------------------------------------


def lstm_sequence(x, w_f, w_i, w_o, w_c, b_f, b_i, b_o, b_c) -> Tensor:
    """Run an LSTM over [batch, time, features] input and return the full
    hidden state sequence [batch, time, hidden].

    Gate equations, with [h_{t-1}, x_t] the concatenation of the previous
    hidden state and the current input:

        f_t = sigmoid(W_f [h_{t-1}, x_t] + b_f)
        i_t = sigmoid(W_i [h_{t-1}, x_t] + b_i)
        o_t = sigmoid(W_o [h_{t-1}, x_t] + b_o)
        c~_t = tanh(W_c [h_{t-1}, x_t] + b_c)
        C_t = f_t * C_{t-1} + i_t * c~_t
        h_t = o_t * tanh(C_t)

    Initial h and C are zero. The whole sequence is one tape node with a
    hand-written backward pass through time.
    """
    x = as_tensor(x)
    weights = [as_tensor(w) for w in (w_f, w_i, w_o, w_c)]
    biases = [as_tensor(b) for b in (b_f, b_i, b_o, b_c)]
    if x.ndim != 3:
        raise ValueError("lstm_sequence expects [batch, time, features] input")
    bsz, steps, d = x.shape
    hidden = weights[0].shape[0]
    for w in weights:
        if w.shape != (hidden, hidden + d):
            raise ValueError(
                f"weight shape {w.shape} does not match [hidden, hidden+input]"
                f" = {(hidden, hidden + d)}"
            )
    for b in biases:
        if b.shape != (hidden,):
            raise ValueError(f"bias shape {b.shape} does not match ({hidden},)")

    w_all = np.concatenate([w.data for w in weights], axis=0)  # [4h, h+d]
    w_h, w_x = w_all[:, :hidden], w_all[:, hidden:]
    b_all = np.concatenate([b.data for b in biases])
    pre_x = np.matmul(x.data, w_x.T) + b_all  # [B, T, 4h]

    gates = np.empty((bsz, steps, 4, hidden))
    cells = np.empty((bsz, steps, hidden))
    cell_tanh = np.empty((bsz, steps, hidden))
    hidden_seq = np.empty((bsz, steps, hidden))
    h_t = np.zeros((bsz, hidden))
    c_t = np.zeros((bsz, hidden))
    for t in range(steps):
        pre = pre_x[:, t] + np.matmul(h_t, w_h.T)
        f = _sigmoid(pre[:, :hidden])
        i = _sigmoid(pre[:, hidden : 2 * hidden])
        o = _sigmoid(pre[:, 2 * hidden : 3 * hidden])
        g = np.tanh(pre[:, 3 * hidden :])
        c_t = f * c_t + i * g
        tc = np.tanh(c_t)
        h_t = o * tc
        gates[:, t, 0], gates[:, t, 1], gates[:, t, 2], gates[:, t, 3] = f, i, o, g
        cells[:, t] = c_t
        cell_tanh[:, t] = tc
        hidden_seq[:, t] = h_t

    def vjp(gout, need):
        need_x = need[0]
        need_w = any(need[1:5])
        need_b = any(need[5:9])
        gw = np.zeros_like(w_all) if need_w else None
        gb = np.zeros_like(b_all) if need_b else None
        gx = np.zeros_like(x.data) if need_x else None
        dh_next = np.zeros((bsz, hidden))
        dc_next = np.zeros((bsz, hidden))
        dpre = np.empty((bsz, 4 * hidden))
        for t in range(steps - 1, -1, -1):
            f, i, o, g = (gates[:, t, k] for k in range(4))
            tc = cell_tanh[:, t]
            c_prev = cells[:, t - 1] if t > 0 else np.zeros((bsz, hidden))
            dh = gout[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dpre[:, :hidden] = dc * c_prev * f * (1.0 - f)
            dpre[:, hidden : 2 * hidden] = dc * g * i * (1.0 - i)
            dpre[:, 2 * hidden : 3 * hidden] = dh * tc * o * (1.0 - o)
            dpre[:, 3 * hidden :] = dc * i * (1.0 - g * g)
            if need_w:
                h_prev = hidden_seq[:, t - 1] if t > 0 else np.zeros((bsz, hidden))
                gw[:, :hidden] += np.matmul(dpre.T, h_prev)
                gw[:, hidden:] += np.matmul(dpre.T, x.data[:, t])
            if need_b:
                gb += dpre.sum(axis=0)
            if need_x:
                gx[:, t] = np.matmul(dpre, w_x)
            dh_next = np.matmul(dpre, w_h)
            dc_next = dc * f
        out = [gx]
        for k in range(4):
            out.append(gw[k * hidden : (k + 1) * hidden] if need[1 + k] else None)
        for k in range(4):
            out.append(gb[k * hidden : (k + 1) * hidden] if need[5 + k] else None)
        return tuple(out)

    return _make(hidden_seq, (x, *weights, *biases), vjp)
