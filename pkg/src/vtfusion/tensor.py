"""Dense float32 tensors with reverse-mode automatic differentiation.

The computation graph is define-by-run: every op records its parents and a
vector-Jacobian closure on the output node, and ``Tensor.backward`` replays
the graph in reverse topological order. Adjoints are accumulated additively,
so calling backward twice without zeroing doubles the gradients. Tensors
created under ``no_grad()`` record nothing and are plain immutable values.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True
_alloc_tracker = None


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class _AllocTracker:
    def __init__(self):
        self.bytes = 0


@contextlib.contextmanager
def track_allocations():
    """Count bytes of every tensor created in the block (bench memory probe)."""
    global _alloc_tracker
    prev = _alloc_tracker
    tracker = _AllocTracker()
    _alloc_tracker = tracker
    try:
        yield tracker
    finally:
        _alloc_tracker = prev


def _as_f32(data):
    arr = np.asarray(data, dtype=np.float32)
    return arr


class Tensor:
    """N-d float32 value, optionally participating in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f32(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None
        if _alloc_tracker is not None:
            _alloc_tracker.bytes += self.data.nbytes

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(ancestor) into every requires_grad ancestor.

        ``self`` must be a scalar produced on the active tape.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ValueError("backward called on a tensor that is not on the tape")
        order = _topo_order(self)
        # per-pass adjoints kept separate from .grad so repeated backward calls
        # each contribute exactly one pass worth of gradient
        adjoint = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, gp in zip(node._parents, node._vjp(g)):
                if gp is None or not parent.requires_grad:
                    continue
                key = id(parent)
                held = adjoint.get(key)
                adjoint[key] = gp if held is None else held + gp

    # -- operator sugar --------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topo_order(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data, parents, vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting introduced."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.astype(np.float32, copy=False)


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _from_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _from_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _from_op(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _from_op(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def pow_(a, exponent: float) -> Tensor:
    a = _wrap(a)
    e = float(exponent)
    out = a.data**np.float32(e)
    return _from_op(out, (a,), lambda g: (g * np.float32(e) * a.data ** np.float32(e - 1.0),))


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _from_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _wrap(a)
    return _from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)
    return _from_op(out, (a,), lambda g: (g * np.float32(0.5) / out,))


# -- activations -----------------------------------------------------------------


def relu(a) -> Tensor:
    a = _wrap(a)
    out = np.maximum(a.data, 0.0)
    return _from_op(out, (a,), lambda g: (g * (a.data > 0.0),))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = _wrap(a)
    al = np.float32(alpha)
    neg = al * np.expm1(a.data)
    out = np.where(a.data > 0.0, a.data, neg).astype(np.float32)
    return _from_op(out, (a,), lambda g: (g * np.where(a.data > 0.0, np.float32(1.0), neg + al),))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out = _sigmoid_np(a.data)
    return _from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid_np(x):
    # split by sign to stay overflow-free in f32
    pos = x >= 0
    z = np.exp(np.where(pos, -x, x))
    return np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z)).astype(np.float32)


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)
    return _from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def softmax(a, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``; rows sum to one."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _from_op(out, (a,), vjp)


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to the first argument."""
    a, b = _wrap(a), _wrap(b)
    mask = a.data <= b.data
    return _from_op(
        np.where(mask, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * mask, a.data.shape), _unbroadcast(g * ~mask, b.data.shape)),
    )


def abs_(a) -> Tensor:
    a = _wrap(a)
    return _from_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip to [lo, hi]; gradient passes through inside the bounds, zero outside."""
    a = _wrap(a)
    out = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    return _from_op(out, (a,), lambda g: (g * mask,))


# -- shape ops -------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    return _from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = np.argsort(axes)
    return _from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = _wrap(a)
    return _from_op(
        a.data.swapaxes(axis1, axis2), (a,), lambda g: (g.swapaxes(axis1, axis2),)
    )


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _from_op(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in map(_wrap, tensors)]
    return concat(expanded, axis=axis)


def take(a, index) -> Tensor:
    """Basic (slice/int/ellipsis) indexing with scatter-back gradient."""
    a = _wrap(a)
    out = a.data[index]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _from_op(out, (a,), vjp)


def flip(a, axis: int) -> Tensor:
    a = _wrap(a)
    return _from_op(np.flip(a.data, axis=axis), (a,), lambda g: (np.flip(g, axis=axis),))


def flip_vertical(a) -> Tensor:
    """Reverse the H axis (rows, axis -2) of a rank >= 2 tensor."""
    a = _wrap(a)
    if a.data.ndim < 2:
        raise ValueError(f"flip_vertical needs rank >= 2, got shape {a.data.shape}")
    return flip(a, axis=-2)


# -- reductions ------------------------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).astype(np.float32),)

    return _from_op(out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float32)
    count = a.data.size if axis is None else a.data.size // out.size

    def vjp(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return ((np.broadcast_to(g, a.data.shape) / np.float32(count)).astype(np.float32),)

    return _from_op(out, (a,), vjp)


def mse(a, b) -> Tensor:
    """Mean of squared differences over all elements (scalar)."""
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"mse shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    out = np.float32(np.mean(diff * diff, dtype=np.float32))
    scale = np.float32(2.0 / diff.size)

    def vjp(g):
        ga = g * scale * diff
        return (ga, -ga)

    return _from_op(out, (a, b), vjp)


# -- linear algebra ----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise ValueError("matmul needs tensors of rank >= 1")
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)
        return (ga, gb)

    return _from_op(out, (a, b), vjp)


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight.T + bias with weight shaped (out_features, in_features).

    Accepts inputs with any number of leading batch dims.
    """
    x, weight = _wrap(x), _wrap(weight)
    if x.data.shape[-1] != weight.data.shape[1]:
        raise ValueError(
            f"linear: input features {x.data.shape[-1]} != weight in-features {weight.data.shape[1]}"
        )
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, x.data.shape[-1])
    out = x2 @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        if bias.data.shape != (weight.data.shape[0],):
            raise ValueError(
                f"linear: bias shape {bias.data.shape} != ({weight.data.shape[0]},)"
            )
        out = out + bias.data
        parents.append(bias)

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ weight.data).reshape(x.data.shape)
        gw = g2.T @ x2
        if len(parents) == 3:
            return (gx, gw, g2.sum(axis=0))
        return (gx, gw)

    return _from_op(out.reshape(lead + (weight.data.shape[0],)), tuple(parents), vjp)


# -- convolution ---------------------------------------------------------------------


def _conv_windows(x: np.ndarray, kh: int, kw: int, stride: int):
    b, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sb, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, oh, ow, kh, kw),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    return view, oh, ow


def conv2d(x, kernel, bias=None, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2-d convolution, NCHW layout, square stride."""
    x, kernel = _wrap(x), _wrap(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError(
            f"conv2d expects 4-d input/kernel, got {x.data.shape} and {kernel.data.shape}"
        )
    b, c, h, w = x.data.shape
    o, ck, kh, kw = kernel.data.shape
    if c != ck:
        raise ValueError(f"conv2d channel mismatch: input has {c}, kernel expects {ck}")
    if h < kh or w < kw:
        raise ValueError(f"conv2d input {h}x{w} smaller than kernel {kh}x{kw}")
    if stride < 1:
        raise ValueError("conv2d stride must be a positive int")
    xc = np.ascontiguousarray(x.data)
    windows, oh, ow = _conv_windows(xc, kh, kw, stride)
    out = np.tensordot(windows, kernel.data, axes=([1, 4, 5], [1, 2, 3]))  # (b,oh,ow,o)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    parents = [x, kernel]
    if bias is not None:
        bias = _wrap(bias)
        if bias.data.shape != (o,):
            raise ValueError(f"conv2d bias shape {bias.data.shape} != ({o},)")
        out += bias.data.reshape(1, o, 1, 1)
        parents.append(bias)

    def vjp(g):
        gk = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))  # (o,c,kh,kw)
        gx = np.zeros_like(xc)
        for ki in range(kh):
            for kj in range(kw):
                patch = np.tensordot(g, kernel.data[:, :, ki, kj], axes=([1], [0]))
                gx[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += (
                    patch.transpose(0, 3, 1, 2)
                )
        if len(parents) == 3:
            return (gx, gk, g.sum(axis=(0, 2, 3)))
        return (gx, gk)

    return _from_op(out, tuple(parents), vjp)


def conv2d_output_shape(hw, khw, stride: int):
    """Closed-form valid-convolution output size: floor((n - k) / stride) + 1."""
    return tuple((n - k) // stride + 1 for n, k in zip(hw, khw))


# -- spatial soft argmax ---------------------------------------------------------------

_COORD_CACHE = {}


def _coord_grid(h: int, w: int) -> np.ndarray:
    key = (h, w)
    grid = _COORD_CACHE.get(key)
    if grid is None:
        gx = np.linspace(-1.0, 1.0, w, dtype=np.float32) if w > 1 else np.zeros(1, np.float32)
        gy = np.linspace(-1.0, 1.0, h, dtype=np.float32) if h > 1 else np.zeros(1, np.float32)
        grid = np.stack(
            [np.tile(gx, h), np.repeat(gy, w)], axis=1
        )  # (h*w, 2): columns are (x, y)
        _COORD_CACHE[key] = grid
    return grid


def spatial_soft_argmax(features, temperature: float = 1.0) -> Tensor:
    """Per-channel expected (x, y) image coordinates in [-1, 1]^2.

    Softmax over the H*W cells of each channel, then the probability-weighted
    coordinate. Output is (B, 2C) with per-channel (x, y) pairs interleaved.
    """
    features = _wrap(features)
    if features.data.ndim != 4:
        raise ValueError(f"spatial_soft_argmax expects (B,C,H,W), got {features.data.shape}")
    if temperature <= 0.0:
        raise ValueError("spatial_soft_argmax temperature must be > 0")
    b, c, h, w = features.data.shape
    flat = reshape(features, (b, c, h * w))
    if temperature != 1.0:
        flat = mul(flat, 1.0 / float(temperature))
    weights = softmax(flat, axis=-1)
    coords = Tensor(_coord_grid(h, w))
    return reshape(matmul(weights, coords), (b, 2 * c))


# -- fused LSTM step ----------------------------------------------------------------------


def lstm_step(x, h, c, w_x, w_h, b):
    """One LSTM cell step with input/forget/candidate/output gating.

    Shapes: x (B,N), h and c (B,M), w_x (4M,N), w_h (4M,M), b (4M,).
    Gate order along the 4M axis is [input, forget, candidate, output].
    Returns (h', c'), both differentiable through the step.
    """
    x, h, c = _wrap(x), _wrap(h), _wrap(c)
    w_x, w_h, b = _wrap(w_x), _wrap(w_h), _wrap(b)
    bsz, n = x.data.shape
    m = h.data.shape[1]
    if w_x.data.shape != (4 * m, n) or w_h.data.shape != (4 * m, m) or b.data.shape != (4 * m,):
        raise ValueError(
            f"lstm_step parameter shapes {w_x.data.shape}/{w_h.data.shape}/{b.data.shape} "
            f"inconsistent with input {x.data.shape} and state {h.data.shape}"
        )
    if c.data.shape != (bsz, m):
        raise ValueError(f"lstm_step cell state shape {c.data.shape} != {(bsz, m)}")

    z = x.data @ w_x.data.T + h.data @ w_h.data.T + b.data
    gi = _sigmoid_np(z[:, :m])
    gf = _sigmoid_np(z[:, m : 2 * m])
    gc = np.tanh(z[:, 2 * m : 3 * m])
    go = _sigmoid_np(z[:, 3 * m :])
    c_new = gf * c.data + gi * gc
    tc = np.tanh(c_new)
    h_new = go * tc
    fused_data = np.concatenate([h_new, c_new], axis=1)

    def vjp(g):
        gh, gc_out = g[:, :m], g[:, m:]
        gc_tot = gc_out + gh * go * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                gc_tot * gc * gi * (1.0 - gi),
                gc_tot * c.data * gf * (1.0 - gf),
                gc_tot * gi * (1.0 - gc * gc),
                gh * tc * go * (1.0 - go),
            ],
            axis=1,
        )
        return (
            dz @ w_x.data,
            dz @ w_h.data,
            gc_tot * gf,
            dz.T @ x.data,
            dz.T @ h.data,
            dz.sum(axis=0),
        )

    fused = _from_op(fused_data, (x, h, c, w_x, w_h, b), vjp)
    return take(fused, (slice(None), slice(0, m))), take(fused, (slice(None), slice(m, 2 * m)))


def zero_grads(tensors):
    """Drop accumulated gradients; parameter values are untouched."""
    for t in tensors:
        t.grad = None
