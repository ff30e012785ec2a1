"""Dense tensors with reverse-mode automatic differentiation.

Implements exactly the op set the Conv-LSTM models need: same-padding 2D
convolution, pointwise arithmetic and nonlinearities, channel concat /
frame stack, space-to-depth reshaping, and mean squared error. Values are
float64 ndarrays; every op is deterministic. Gradients accumulate
additively across fan-out and are verified against central finite
differences in the test suite.

A tape is a DAG of `Tensor` nodes built eagerly as ops execute. It is
confined to one thread; independent tapes (e.g. per mini-batch element)
may run concurrently because tensors are never mutated by ops and
`gradients()` keeps its accumulation buffers local.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager

import numpy as np

from .errors import ConfigError, DataError

_STATE = threading.local()


def _tracking() -> bool:
    return getattr(_STATE, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape construction in the current thread."""
    prev = _tracking()
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = prev


class Tensor:
    """A float64 ndarray plus the bookkeeping needed for backprop.

    `_parents` and `_vjp` are set only on op outputs while grad tracking
    is enabled; leaves (parameters, constants) have neither. `_vjp(g)`
    yields `(parent, contribution)` pairs for the upstream gradient `g`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        if not (isinstance(data, np.ndarray) and data.dtype == np.float64):
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self):
        """Run reverse-mode accumulation from this scalar into `.grad`s."""
        bufs = _backprop(self)
        for t, g in bufs.items():
            t.grad = np.array(g) if t.grad is None else t.grad + g


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, vjp) -> Tensor:
    out = Tensor(data)
    if _tracking() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _toposort(root: Tensor):
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


def _backprop(loss: Tensor, seed=None):
    """Reverse sweep over the tape rooted at `loss`.

    Returns a dict mapping every grad-requiring tensor reached from
    `loss` to its accumulated gradient array. The dict is local to this
    call, so concurrent backprops over shared parameters do not race.
    """
    if loss.size != 1:
        raise ConfigError(f"backward requires a scalar loss, got shape {loss.shape}")
    if seed is None:
        seed = np.ones_like(loss.data)
    bufs: dict[Tensor, np.ndarray] = {loss: seed}
    owned = {id(loss)}
    for node in reversed(_toposort(loss)):
        g = bufs.get(node)
        if g is None or node._vjp is None:
            continue
        for parent, contrib in node._vjp(g):
            if not parent.requires_grad:
                continue
            cur = bufs.get(parent)
            if cur is None:
                bufs[parent] = contrib
            elif id(parent) in owned:
                cur += contrib
            else:
                bufs[parent] = cur + contrib
                owned.add(id(parent))
    return bufs


def gradients(loss: Tensor, wrt) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. a list of tensors.

    Tensors not reached by the tape get exact zeros. Thread-safe for
    concurrent calls sharing parameters.
    """
    bufs = _backprop(loss)
    return [
        np.array(bufs[p]) if p in bufs else np.zeros_like(p.data) for p in wrt
    ]


# ---------------------------------------------------------------------------
# pointwise ops


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ConfigError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: ((a, g), (b, g)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: ((a, g), (b, -g)))


def mul(a, b) -> Tensor:
    """Hadamard product."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "mul")
    return _node(
        a.data * b.data, (a, b), lambda g: ((a, g * b.data), (b, g * a.data))
    )


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: ((a, g * c),))


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # Two-branch form avoids overflow warnings for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid_values(a.data)
    return _node(s, (a,), lambda g: ((a, g * (s * (1.0 - s))),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return _node(t, (a,), lambda g: ((a, g * (1.0 - t * t)),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: ((a, g * mask),))


# ---------------------------------------------------------------------------
# structural ops


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along an existing axis (channel concat in the decoders)."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ConfigError("concat of zero tensors")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        parts = []
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            parts.append((t, g[tuple(idx)]))
        return parts

    return _node(out, tuple(ts), vjp)


def stack(tensors) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ConfigError("stack of zero tensors")
    for t in ts[1:]:
        _check_same_shape(ts[0], t, "stack")
    out = np.stack([t.data for t in ts])
    return _node(
        out, tuple(ts), lambda g: [(t, g[i]) for i, t in enumerate(ts)]
    )


def space_to_depth(x, factor: int) -> Tensor:
    """[C, S, S] -> [C*k*k, S/k, S/k]; grid cell (r, c) becomes channel r*k+c.

    Exact inverse is `depth_to_space`.
    """
    x = _as_tensor(x)
    k = int(factor)
    if x.data.ndim != 3:
        raise ConfigError(f"space_to_depth expects a 3-d tensor, got {x.shape}")
    c, hh, ww = x.data.shape
    if k < 1 or hh % k or ww % k:
        raise ConfigError(
            f"spatial size {hh}x{ww} not divisible by patch factor {k}"
        )
    sh, sw = hh // k, ww // k
    out = (
        x.data.reshape(c, k, sh, k, sw)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c * k * k, sh, sw)
    )

    def vjp(g):
        back = (
            g.reshape(c, k, k, sh, sw)
            .transpose(0, 1, 3, 2, 4)
            .reshape(c, hh, ww)
        )
        return ((x, back),)

    return _node(out, (x,), vjp)


def depth_to_space(x, factor: int) -> Tensor:
    """Inverse of `space_to_depth`."""
    x = _as_tensor(x)
    k = int(factor)
    if x.data.ndim != 3:
        raise ConfigError(f"depth_to_space expects a 3-d tensor, got {x.shape}")
    ck, sh, sw = x.data.shape
    if k < 1 or ck % (k * k):
        raise ConfigError(f"channel count {ck} not divisible by {k}*{k}")
    c = ck // (k * k)
    out = (
        x.data.reshape(c, k, k, sh, sw)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, sh * k, sw * k)
    )

    def vjp(g):
        back = (
            g.reshape(c, k, sh, k, sw)
            .transpose(0, 1, 3, 2, 4)
            .reshape(ck, sh, sw)
        )
        return ((x, back),)

    return _node(out, (x,), vjp)


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, hh: int, ww: int) -> np.ndarray:
    c = xp.shape[0]
    if kh == 1 and kw == 1:
        return xp.reshape(c, hh * ww)
    cols = np.empty((c, kh, kw, hh, ww))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + hh, j : j + ww]
    return cols.reshape(c * kh * kw, hh * ww)


def _col2im(dcols, c, kh, kw, hh, ww, ph, pw):
    if kh == 1 and kw == 1:
        return dcols.reshape(c, hh, ww)
    dxp = np.zeros((c, hh + 2 * ph, ww + 2 * pw))
    dc = dcols.reshape(c, kh, kw, hh, ww)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + hh, j : j + ww] += dc[:, i, j]
    return dxp[:, ph : ph + hh, pw : pw + ww]


def conv2d_multi(x, kernels, biases) -> list[Tensor]:
    """Several same-padding cross-correlations of one input.

    The patch matrix (im2col) is computed once and shared, which is what
    makes the four-gate Conv-LSTM step cheap. Each `kernels[i]` is
    [C_out, C_in, kH, kW] with odd kH, kW; `biases[i]` is [C_out] or None.
    """
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ConfigError(f"conv input must be [C, H, W], got {x.shape}")
    c_in, hh, ww = x.data.shape
    kernels = [_as_tensor(k) for k in kernels]
    biases = [None if b is None else _as_tensor(b) for b in biases]
    if len(kernels) != len(biases):
        raise ConfigError("conv2d_multi: kernels and biases length mismatch")
    k0 = kernels[0].data.shape
    for k in kernels:
        ks = k.data.shape
        if k.data.ndim != 4 or ks[1] != c_in:
            raise ConfigError(
                f"kernel {ks} incompatible with input channels {c_in}"
            )
        if ks[2] % 2 == 0 or ks[3] % 2 == 0:
            raise ConfigError(f"kernel spatial dims must be odd, got {ks}")
        if ks[2:] != k0[2:]:
            raise ConfigError("conv2d_multi kernels must share one filter size")
    kh, kw = k0[2], k0[3]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = x.data if ph == 0 and pw == 0 else np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw, hh, ww)

    outs = []
    for k, b in zip(kernels, biases):
        c_out = k.data.shape[0]
        kmat = k.data.reshape(c_out, -1)
        y = kmat @ cols
        if b is not None:
            if b.data.shape != (c_out,):
                raise ConfigError(
                    f"bias shape {b.data.shape} does not match {c_out} channels"
                )
            y = y + b.data[:, None]

        def vjp(g, k=k, b=b, kmat=kmat, c_out=c_out):
            gmat = g.reshape(c_out, hh * ww)
            parts = []
            if k.requires_grad:
                parts.append((k, (gmat @ cols.T).reshape(k.data.shape)))
            if b is not None and b.requires_grad:
                parts.append((b, gmat.sum(axis=1)))
            if x.requires_grad:
                dcols = kmat.T @ gmat
                parts.append((x, _col2im(dcols, c_in, kh, kw, hh, ww, ph, pw)))
            return parts

        parents = (x, k) if b is None else (x, k, b)
        outs.append(_node(y.reshape(c_out, hh, ww), parents, vjp))
    return outs


def conv2d_same(x, kernels, bias=None) -> Tensor:
    """Zero-padded same-size cross-correlation with per-channel bias."""
    return conv2d_multi(x, [kernels], [bias])[0]


# ---------------------------------------------------------------------------
# loss and initialization


def mse(pred, target) -> Tensor:
    """Mean squared error over all elements (scalar output)."""
    a, b = _as_tensor(pred), _as_tensor(target)
    _check_same_shape(a, b, "mse")
    if a.size == 0:
        raise DataError("mse of empty tensors")
    diff = a.data - b.data
    out = np.mean(diff * diff)
    coef = 2.0 / a.size

    def vjp(g):
        gd = g * coef * diff
        return ((a, gd), (b, -gd))

    return _node(np.asarray(out), (a, b), vjp)


def xavier_init(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> Tensor:
    """Uniform Xavier/Glorot initialization; returns a trainable tensor."""
    if fan_in <= 0 or fan_out <= 0:
        raise ConfigError("xavier_init fans must be positive")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)
