"""Dense tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor` whose ``_backward`` closure maps the
output gradient to one gradient per parent.  :func:`backward` walks the graph
in reverse topological order, accumulates into leaf ``.grad`` buffers and then
releases the graph.

Precision is global: 32-bit for training, 64-bit for gradient checks.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

from .errors import ContractError, NumericalError, ShapeError

_DTYPE = np.float32
_GRAD_ENABLED = True


def set_precision(bits: int) -> None:
    global _DTYPE
    if bits == 32:
        _DTYPE = np.float32
    elif bits == 64:
        _DTYPE = np.float64
    else:
        raise ValueError(f"precision must be 32 or 64, got {bits}")


def get_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(bits: int):
    """Temporarily switch the default float width."""
    global _DTYPE
    old = _DTYPE
    set_precision(bits)
    try:
        yield
    finally:
        _DTYPE = old


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.name = name
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operators
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
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        perm = list(range(self.ndim))
        perm[a], perm[b] = perm[b], perm[a]
        return transpose(self, tuple(perm))

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a finite sum implies finite elements; only an overflowing sum needs the full scan
    with np.errstate(over="ignore", invalid="ignore"):
        s = arr.sum()
    if not np.isfinite(s) and not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values produced by {op}")


def _make(data: np.ndarray, parents: tuple, backward_fn: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._parents = ()
    out._backward = None
    out._consumed = False
    out.requires_grad = False
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss`` and consume the graph."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise ContractError("the graph of this loss was already consumed by an earlier backward")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    if loss._backward is None and not loss._parents:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        node._parents = ()
        node._backward = None
        node._consumed = True


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None),
                 "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None),
                 "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _make(out, (a,), lambda g: (g / ad,), "log")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return _make(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),), "gelu")


def softplus(a) -> Tensor:
    """log(1 + e^x), overflow-safe."""
    a = as_tensor(a)
    out = np.logaddexp(0, a.data)
    s = special.expit(a.data)
    return _make(out, (a,), lambda g: (g * s,), "softplus")


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    return _make(np.where(take_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)),
                 "maximum")


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    return _make(np.where(take_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)),
                 "minimum")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ----------------------------------------------------------------- reductions

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _make(np.asarray(out), (a,), _bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return sum_(a, axis, keepdims) * (1.0 / count)


# ------------------------------------------------------------------- shaping

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


permute = transpose


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        idx = idx.data
    shape, dtype = a.shape, a.data.dtype
    basic = _is_basic_index(idx)

    def _bw(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(a.data[idx]), (a,), _bw, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ndim = ts[0].ndim
    ax = axis % ndim
    for t in ts[1:]:
        if t.ndim != ndim or any(t.shape[i] != ts[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def _bw(g):
        sl = [slice(None)] * ndim
        out = []
        for i in range(len(ts)):
            sl[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    return _make(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), _bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % (ts[0].ndim + 1)
    return concat([reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in ts], axis=ax)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, old),), "broadcast_to")


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]``; repeated ids accumulate gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ShapeError(f"embedding ids out of range [0, {vocab})")
    shape, dtype = weight.shape, weight.data.dtype

    def _bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids, g)
        return (full,)

    return _make(weight.data[ids], (weight,), _bw, "embedding")


# -------------------------------------------------------------------- linear

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul batch extents not broadcastable: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data

    def _bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                k, n = bd.shape
                gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(out, (a, b), _bw, "matmul")


# ---------------------------------------------------------------- composites

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), _bw, "softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ValueError("eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data
    out = xhat * gd + beta.data

    def _bw(g):
        c = xd.shape[-1]
        g2 = g.reshape(-1, c)
        dgamma = (g2 * xhat.reshape(-1, c)).sum(axis=0) if gamma.requires_grad else None
        dbeta = g2.sum(axis=0) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gd
            dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                         - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), _bw, "layer_norm")


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last 2-D convolution.

    x: [..., H, W, Cin]; kernel: [kh, kw, Cin, Cout]; result [..., H', W', Cout].
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    kh, kw, cin, cout = kernel.shape
    if kh not in (1, 3) or kw not in (1, 3):
        raise ShapeError(f"conv2d supports 1x1 and 3x3 kernels, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d stride must be 1 or 2, got {stride}")
    if x.ndim < 3 or x.shape[-1] != cin:
        raise ShapeError(f"conv2d input {x.shape} does not match kernel {kernel.shape}")
    h, w = x.shape[-3], x.shape[-2]
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output extent < 1 for input {x.shape}, kernel {kh}x{kw}")
    lead = x.shape[:-3]
    xd = x.data
    if padding:
        pad = [(0, 0)] * len(lead) + [(padding, padding), (padding, padding), (0, 0)]
        xp = np.pad(xd, pad)
    else:
        xp = xd
    kd = kernel.data
    hs = slice(None)
    taps = []
    out = None
    for i in range(kh):
        for j in range(kw):
            hs = slice(i, i + stride * (ho - 1) + 1, stride)
            ws = slice(j, j + stride * (wo - 1) + 1, stride)
            taps.append((i, j, hs, ws))
            contrib = xp[..., hs, ws, :] @ kd[i, j]
            out = contrib if out is None else out + contrib
    parents = (x, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = parents + (bias,)

    def _bw(g):
        gx = gk = None
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i, j, hs, ws in taps:
                gxp[..., hs, ws, :] += g @ kd[i, j].T
            if padding:
                gx = gxp[..., padding:padding + h, padding:padding + w, :]
            else:
                gx = gxp
        if kernel.requires_grad:
            gk = np.zeros(kd.shape, dtype=kd.dtype)
            g2 = g.reshape(-1, cout)
            for i, j, hs, ws in taps:
                gk[i, j] = xp[..., hs, ws, :].reshape(-1, cin).T @ g2
        res = (gx, gk)
        if bias is not None:
            res = res + (g.reshape(-1, cout).sum(axis=0),)
        return res

    return _make(out, parents, _bw, "conv2d")


def upsample2x(x) -> Tensor:
    """Nearest-neighbour 2x upsampling of [..., H, W, C]."""
    x = as_tensor(x)
    out = np.repeat(np.repeat(x.data, 2, axis=-3), 2, axis=-2)
    shape = x.shape

    def _bw(g):
        h, w, c = shape[-3:]
        g = g.reshape(g.shape[:-3] + (h, 2, w, 2, c))
        return (g.sum(axis=(-4, -2)),)

    return _make(out, (x,), _bw, "upsample2x")


def multi_head_attention(q, k, v, heads: int, mask=None) -> Tensor:
    """Scaled dot-product attention over already-projected q, k, v.

    q: [..., Sq, C], k and v: [..., Sk, C]; ``mask`` is an additive array
    broadcastable to [..., heads, Sq, Sk] (large negatives block a key).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    c = q.shape[-1]
    if c % heads:
        raise ShapeError(f"model dim {c} not divisible by {heads} heads")
    if k.shape[-1] != c or v.shape[-1] != c or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes q={q.shape} k={k.shape} v={v.shape}")
    d = c // heads

    def split(t):
        lead = t.shape[:-2]
        n = len(lead)
        t = reshape(t, lead + (t.shape[-2], heads, d))
        return transpose(t, tuple(range(n)) + (n + 1, n, n + 2))

    qh, kh, vh = split(q), split(k), split(v)
    scores = matmul(qh, kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    if mask is not None:
        scores = scores + Tensor(mask)
    att = softmax(scores, axis=-1)
    out = matmul(att, vh)
    n = out.ndim - 3
    out = transpose(out, tuple(range(n)) + (n + 1, n, n + 2))
    return reshape(out, out.shape[:-2] + (c,))


# ------------------------------------------------------------------- checking

def numerical_grad(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``t.data`` (in place)."""
    g = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """||a - b|| / max(||a||, ||b||, floor).

    The floor keeps gradients that are exactly zero in theory (e.g. attention
    key biases, which softmax ignores) from turning round-off into 100% error.
    """
    num = np.linalg.norm(np.asarray(a, np.float64) - np.asarray(b, np.float64))
    den = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(num / den)


def gradcheck(f: Callable[[], Tensor], inputs: Iterable[Tensor], eps: float = 1e-5,
              floor: float = 1e-12) -> float:
    """Worst relative error between analytic and finite-difference gradients.

    ``f`` must rebuild the graph from ``inputs`` on each call.  Run in 64-bit.
    """
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    backward(f())
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, relative_error(analytic, numerical_grad(f, t, eps), floor))
    return worst
