"""Minimal reverse-mode automatic differentiation over dense tensors.

Just enough machinery for a small encoder-decoder GAN: strided
convolution and transposed convolution, a few pointwise nonlinearities,
channel concatenation, the two training losses, and Adam.  Tensors wrap
numpy arrays (float32 by default); each op records its parents and a
backward closure, and Tensor.backward() replays the implicit graph in
reverse topological order, visiting every node exactly once.

Accumulation order inside every op is fixed, so runs are bit-reproducible.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A dense array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g.astype(self.data.dtype, copy=False)

    def backward(self, seed: np.ndarray | None = None):
        """Reverse-mode sweep from this tensor (gradient seeded with ones)."""
        order = []
        seen = set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)

        visit(self)
        self.grad = (np.ones_like(self.data) if seed is None
                     else np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def as_tensor(x, dtype=np.float32) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    out._parents = tuple(parents)
    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Convolution machinery (im2col views + BLAS tensordot)
# ---------------------------------------------------------------------------


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    n, c, h, w = xp.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (n, c, kh, kw, ho, wo), (s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False)


def _conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int):
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    return ho, wo


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(_pad_hw(x, padding), kh, kw, stride)
    y = np.tensordot(win, w, axes=([1, 2, 3], [1, 2, 3]))  # (N, ho, wo, O)
    return np.ascontiguousarray(np.moveaxis(y, -1, 1))


def _conv_dw(x: np.ndarray, dy: np.ndarray, stride: int, padding: int,
             kh: int, kw: int) -> np.ndarray:
    win = _windows(_pad_hw(x, padding), kh, kw, stride)
    return np.tensordot(dy, win, axes=([0, 2, 3], [0, 4, 5]))  # (O, C, kh, kw)


def _conv_dx(dy: np.ndarray, w: np.ndarray, stride: int, padding: int,
             out_hw: tuple[int, int]) -> np.ndarray:
    n = dy.shape[0]
    o, c, kh, kw = w.shape
    ho, wo = dy.shape[2], dy.shape[3]
    hh, ww = out_hw
    t = np.tensordot(dy, w, axes=(1, 0))  # (N, ho, wo, C, kh, kw)
    dxp = np.zeros((n, c, hh + 2 * padding, ww + 2 * padding), dtype=dy.dtype)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += \
                np.moveaxis(t[..., u, v], -1, 1)
    if padding == 0:
        return dxp
    return np.ascontiguousarray(dxp[:, :, padding:padding + hh, padding:padding + ww])


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Strided cross-correlation; x (N,C,H,W), w (O,C,kh,kw), b (O,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects 4D input/weights, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weights expect {w.shape[1]}")
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = _conv_out_hw(x.shape[2], x.shape[3], kh, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} does not fit padded input {x.shape}")
    y = _conv_forward(x.data, w.data, stride, padding)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} != ({w.shape[0]},)")
        y = y + b.data.reshape(1, -1, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def backward(dy):
        x._accumulate(_conv_dx(dy, w.data, stride, padding, (x.shape[2], x.shape[3])))
        w._accumulate(_conv_dw(x.data, dy, stride, padding, kh, kw))
        if b is not None:
            b._accumulate(dy.sum(axis=(0, 2, 3)))

    return _make(y, parents, backward)


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution (gradient-of-conv semantics).

    x (N,Cin,H,W), w (Cin,Cout,kh,kw), b (Cout,); output spatial size is
    (H-1)*stride - 2*padding + kh, inverting conv2d's formula.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d_transpose expects 4D input/weights, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weights expect {w.shape[0]}")
    kh, kw = w.shape[2], w.shape[3]
    ho = (x.shape[2] - 1) * stride - 2 * padding + kh
    wo = (x.shape[3] - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise ValueError(f"degenerate output {ho}x{wo} for input {x.shape}")
    y = _conv_dx(x.data, w.data, stride, padding, (ho, wo))
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ValueError(f"bias shape {b.shape} != ({w.shape[1]},)")
        y = y + b.data.reshape(1, -1, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def backward(dy):
        x._accumulate(_conv_forward(dy, w.data, stride, padding))
        w._accumulate(_conv_dw(dy, x.data, stride, padding, kh, kw))
        if b is not None:
            b._accumulate(dy.sum(axis=(0, 2, 3)))

    return _make(y, parents, backward)


# ---------------------------------------------------------------------------
# Pointwise ops, concat, losses
# ---------------------------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    y = np.where(x.data > 0, x.data, slope * x.data)

    def backward(dy):
        x._accumulate(np.where(x.data > 0, dy, slope * dy))

    return _make(y.astype(x.dtype), (x,), backward)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, slope=0.0)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = np.empty_like(x.data)
    pos = x.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    s[~pos] = e / (1.0 + e)

    def backward(dy):
        x._accumulate(dy * s * (1.0 - s))

    return _make(s, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)

    def backward(dy):
        x._accumulate(dy * (1.0 - t * t))

    return _make(t, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two (N,C,H,W) tensors along the channel axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ValueError("concat_channels expects 4D tensors")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"batch/spatial mismatch: {a.shape} vs {b.shape}")
    y = np.concatenate([a.data, b.data], axis=1)
    ca = a.shape[1]

    def backward(dy):
        a._accumulate(dy[:, :ca])
        b._accumulate(dy[:, ca:])

    return _make(y, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    y = a.data + b.data

    def backward(dy):
        a._accumulate(dy)
        b._accumulate(dy)

    return _make(y, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    y = x.data * x.data.dtype.type(c)

    def backward(dy):
        x._accumulate(dy * x.data.dtype.type(c))

    return _make(y, (x,), backward)


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error over all elements."""
    pred = as_tensor(pred)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != tgt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {tgt.shape}")
    diff = pred.data - tgt
    y = np.asarray(np.abs(diff).mean(), dtype=pred.dtype)

    def backward(dy):
        pred._accumulate(dy * np.sign(diff) / diff.size)

    return _make(y, (pred,), backward)


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy on logits, in the stable log-sum-exp form."""
    logits = as_tensor(logits)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=logits.dtype)
    tgt = np.broadcast_to(tgt, logits.shape)
    if np.any(tgt < 0) or np.any(tgt > 1):
        raise ValueError("targets must lie in [0, 1]")
    z = logits.data
    loss = np.maximum(z, 0) - z * tgt + np.log1p(np.exp(-np.abs(z)))
    y = np.asarray(loss.mean(), dtype=logits.dtype)

    def backward(dy):
        s = 1.0 / (1.0 + np.exp(-z))
        logits._accumulate(dy * (s - tgt) / z.size)

    return _make(y, (logits,), backward)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment buffers and the shared step counter."""

    def __init__(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step = 0


def adam_step(params, grads, state: AdamState, lr: float = 2e-4,
              beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update with bias correction; params are updated in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"param/grad shape mismatch: {p.shape} vs {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return params, state
