"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps a real (float32/float64) or complex64 numpy array. Ops are
recorded on a tape (parent links + backward closures); backward() walks the
tape in reverse topological order and accumulates gradients into leaf tensors
that have requires_grad set.

Complex values inside a differentiable graph use the real-composite
convention: a complex quantity is a real tensor whose trailing axis has
length 2 and holds (re, im). Gradients are then ordinary real gradients of a
real-valued loss with respect to the re/im parts. Tensors with a complex
dtype are supported as forward-only constants (requires_grad is rejected).

There is no implicit broadcasting beyond scalar-tensor; shape alignment is
done with explicit ops (expand, reshape, concat).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import ContractError, DtypeError, ShapeError

REAL32 = np.dtype(np.float32)
REAL64 = np.dtype(np.float64)
COMPLEX64 = np.dtype(np.complex64)

_ALLOWED_DTYPES = (REAL32, REAL64, COMPLEX64)

_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled():
    return _grad_enabled


class Tensor:
    """Dense array node with optional gradient accumulation."""

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_bwd")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            if np.issubdtype(arr.dtype, np.complexfloating):
                arr = arr.astype(COMPLEX64)
            else:
                arr = arr.astype(REAL32)
        if requires_grad and arr.dtype == COMPLEX64:
            raise DtypeError(
                "complex tensors cannot require grad; store (re, im) as a "
                "real tensor with a trailing axis of length 2"
            )
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = None          # op kind for recorded results, None for leaves
        self.parents = ()
        self._bwd = None        # closure: output grad -> tuple of parent grads

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = self.op or ("param" if self.requires_grad else "const")
        return f"Tensor({tag}, shape={self.shape}, dtype={self.data.dtype})"

    def item(self):
        return self.data.item()

    def is_leaf(self):
        return self.op is None

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return forward_op("add", self, _wrap(other, self.dtype))

    def __sub__(self, other):
        other = _wrap(other, self.dtype)
        neg = forward_op("mul", other, Tensor(np.asarray(-1, other.dtype.type)))
        return forward_op("add", self, neg)

    def __mul__(self, other):
        return forward_op("mul", self, _wrap(other, self.dtype))

    def __matmul__(self, other):
        return forward_op("matmul", self, _wrap(other, self.dtype))

    def sum(self, axis=None):
        return forward_op("sum", self, axis=axis)

    def reshape(self, shape):
        return forward_op("reshape", self, shape=tuple(shape))


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class Graph:
    """Topologically ordered view of the op nodes reachable from a root.

    Leaves come first, the root last; every node appears exactly once.
    """

    def __init__(self, root):
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
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.nodes = order

    def __len__(self):
        return len(self.nodes)


def backward(loss):
    """Accumulate dLoss/dParam into every reachable requires_grad leaf.

    Returns a dict mapping leaf tensors to their (freshly accumulated)
    gradient arrays. Repeated calls accumulate unless zero_grad() is used.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor loss")
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if loss.dtype == COMPLEX64:
        raise ContractError("loss must be real")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(Graph(loss).nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf():
            if node.requires_grad:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g
                leaves[node] = node.grad
            continue
        if node._bwd is None:
            continue
        for parent, pg in zip(node.parents, node._bwd(g)):
            if pg is None or not _needs_grad(parent):
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    return leaves


def _needs_grad(t):
    # recorded nodes always need grad: forward_op only records when they do
    return t.requires_grad or t.op is not None


# ---------------------------------------------------------------------------
# op registry
# ---------------------------------------------------------------------------

_OPS = {}


def register_op(kind):
    def deco(fn):
        _OPS[kind] = fn
        return fn
    return deco


def op_kinds():
    return sorted(_OPS)


def forward_op(kind, *inputs, **attrs):
    """Apply op `kind` to input tensors, recording it on the tape."""
    if kind not in _OPS:
        raise DtypeError(f"unsupported op kind: {kind!r}")
    inputs = tuple(t if isinstance(t, Tensor) else Tensor(t) for t in inputs)
    out_data, bwd = _OPS[kind](*(t.data for t in inputs), **attrs)
    out = Tensor(out_data)
    if _grad_enabled and any(_needs_grad(t) for t in inputs):
        out.op = kind
        out.parents = inputs
        out._bwd = bwd
    return out


def _check_same(kind, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise DtypeError(f"{kind}: dtype mismatch {a.dtype} vs {b.dtype}")


def _binary_shapes(kind, a, b):
    """Equal shapes, or one operand is a scalar (size-1) array."""
    if a.size == 1 or b.size == 1:
        if a.dtype != b.dtype:
            raise DtypeError(f"{kind}: dtype mismatch {a.dtype} vs {b.dtype}")
        return
    _check_same(kind, a, b)


def _reduce_like(grad, ref):
    if ref.size == 1:
        return np.asarray(grad.sum(), dtype=ref.dtype).reshape(ref.shape)
    return grad


@register_op("add")
def _op_add(a, b):
    _binary_shapes("add", a, b)
    out = a + b

    def bwd(g):
        return _reduce_like(g, a), _reduce_like(g, b)

    return out, bwd


@register_op("mul")
def _op_mul(a, b):
    _binary_shapes("mul", a, b)
    out = a * b

    def bwd(g):
        return _reduce_like(g * b, a), _reduce_like(g * a, b)

    return out, bwd


@register_op("matmul")
def _op_matmul(a, b):
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: rank must be 1 or 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise DtypeError(f"matmul: dtype mismatch {a.dtype} vs {b.dtype}")
    out = a @ b

    def bwd(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b, g * a
        if a.ndim == 1:           # (k,) @ (k,n) -> (n,)
            return g @ b.T, np.outer(a, g)
        if b.ndim == 1:           # (m,k) @ (k,) -> (m,)
            return np.outer(g, b), a.T @ g
        return g @ b.T, a.T @ g

    return out, bwd


@register_op("linear")
def _op_linear(x, w, b):
    """x @ w + row-broadcast bias, as one explicit op."""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"linear: expected (n,k),(k,m),(m,), got {x.shape},{w.shape},{b.shape}")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"linear: inconsistent dims {x.shape},{w.shape},{b.shape}")
    out = x @ w + b

    def bwd(g):
        return g @ w.T, x.T @ g, g.sum(axis=0)

    return out, bwd


@register_op("tanh")
def _op_tanh(x):
    out = np.tanh(x)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return out, bwd


@register_op("sigmoid")
def _op_sigmoid(x):
    out = expit(x)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return out, bwd


@register_op("log")
def _op_log(x):
    out = np.log(x)

    def bwd(g):
        return (g / x,)

    return out, bwd


@register_op("softmax")
def _op_softmax(x, axis=-1):
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return out, bwd


@register_op("log_softmax")
def _op_log_softmax(x, axis=-1):
    m = x.max(axis=axis, keepdims=True)
    s = x - m
    lse = np.log(np.exp(s).sum(axis=axis, keepdims=True))
    out = s - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return out, bwd


@register_op("sum")
def _op_sum(x, axis=None):
    out = x.sum(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).astype(x.dtype),)

    return np.asarray(out, dtype=x.dtype), bwd


@register_op("mean_pool")
def _op_mean_pool(x, size, axis=0):
    """Windowed mean along `axis`, window/stride `size`, ceil semantics.

    The last window may be shorter; its mean is over the available rows.
    """
    if size < 1:
        raise ShapeError(f"mean_pool: size must be >= 1, got {size}")
    t = x.shape[axis]
    n_out = -(-t // size)
    xm = np.moveaxis(x, axis, 0)
    widths = np.minimum(size, t - size * np.arange(n_out))
    out = np.empty((n_out,) + xm.shape[1:], dtype=x.dtype)
    for i in range(n_out):
        out[i] = xm[i * size: i * size + size].mean(axis=0)

    def bwd(g):
        gm = np.moveaxis(g, axis, 0)
        dx = np.empty_like(xm)
        for i in range(n_out):
            dx[i * size: i * size + size] = gm[i] / widths[i]
        return (np.moveaxis(dx, 0, axis),)

    return np.moveaxis(out, 0, axis), bwd


@register_op("concat")
def _op_concat(*xs, axis=0):
    base = xs[0].shape
    for x in xs[1:]:
        if x.ndim != xs[0].ndim:
            raise ShapeError(f"concat: rank mismatch {base} vs {x.shape}")
        for ax, (i, j) in enumerate(zip(base, x.shape)):
            if ax != (axis % xs[0].ndim) and i != j:
                raise ShapeError(f"concat: shape mismatch {base} vs {x.shape}")
        if x.dtype != xs[0].dtype:
            raise DtypeError("concat: dtype mismatch")
    out = np.concatenate(xs, axis=axis)
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return out, bwd


@register_op("slice")
def _op_slice(x, slices):
    key = tuple(slices)
    out = x[key]

    def bwd(g):
        dx = np.zeros_like(x)
        dx[key] = g
        return (dx,)

    return out, bwd


@register_op("stride_decimate")
def _op_stride_decimate(x, stride, axis=0):
    key = [slice(None)] * x.ndim
    key[axis] = slice(None, None, stride)
    key = tuple(key)
    out = x[key]

    def bwd(g):
        dx = np.zeros_like(x)
        dx[key] = g
        return (dx,)

    return out, bwd


@register_op("reshape")
def _op_reshape(x, shape):
    out = x.reshape(shape)

    def bwd(g):
        return (g.reshape(x.shape),)

    return out, bwd


@register_op("expand")
def _op_expand(x, n, axis=0):
    """Insert a new axis of length n at `axis` by tiling."""
    out = np.repeat(np.expand_dims(x, axis), n, axis=axis)

    def bwd(g):
        return (g.sum(axis=axis),)

    return out, bwd


@register_op("conv1d")
def _op_conv1d(x, k, b, stride=1):
    """1-D convolution over the leading (time) axis of x: (T,B,Din).

    Kernel k has shape (K, Din, Dout), bias b (Dout,). Zero padding is chosen
    so the output length is ceil(T / stride).
    """
    if x.ndim != 3 or k.ndim != 3 or b.ndim != 1:
        raise ShapeError(f"conv1d: expected (T,B,Din),(K,Din,Dout),(Dout,), got {x.shape},{k.shape},{b.shape}")
    if x.shape[2] != k.shape[1] or k.shape[2] != b.shape[0]:
        raise ShapeError(f"conv1d: inconsistent dims {x.shape},{k.shape},{b.shape}")
    t, nb, din = x.shape
    width, _, dout = k.shape
    n_out = -(-t // stride)
    pad_l = (width - 1) // 2
    pad_r = max(0, stride * (n_out - 1) + width - pad_l - t)
    xp = np.zeros((pad_l + t + pad_r, nb, din), dtype=x.dtype)
    xp[pad_l:pad_l + t] = x
    kf = k.reshape(width * din, dout)
    # windows[l] covers padded rows [l*stride, l*stride+width)
    win = np.stack([xp[j: j + stride * n_out: stride] for j in range(width)], axis=2)
    win_flat = win.reshape(n_out * nb, width * din)
    out = (win_flat @ kf + b).reshape(n_out, nb, dout)

    def bwd(g):
        gf = g.reshape(n_out * nb, dout)
        dwin = (gf @ kf.T).reshape(n_out, nb, width, din)
        dxp = np.zeros_like(xp)
        for j in range(width):
            dxp[j: j + stride * n_out: stride] += dwin[:, :, j]
        dk = (win_flat.T @ gf).reshape(width, din, dout)
        return dxp[pad_l:pad_l + t], dk, gf.sum(axis=0)

    return out, bwd


@register_op("complex_mul")
def _op_complex_mul(a, b):
    """Elementwise complex product.

    Real-pair form: both inputs (..., 2) real, differentiable. Complex-dtype
    inputs are supported forward-only.
    """
    if a.dtype == COMPLEX64 or b.dtype == COMPLEX64:
        _check_same("complex_mul", a, b)
        return a * b, lambda g: (None, None)
    _check_same("complex_mul", a, b)
    if a.shape[-1] != 2:
        raise ShapeError(f"complex_mul: trailing axis must be 2, got {a.shape}")
    ar, ai = a[..., 0], a[..., 1]
    br, bi = b[..., 0], b[..., 1]
    out = np.stack([ar * br - ai * bi, ar * bi + ai * br], axis=-1)

    def bwd(g):
        gr, gi = g[..., 0], g[..., 1]
        da = np.stack([gr * br + gi * bi, -gr * bi + gi * br], axis=-1)
        db = np.stack([gr * ar + gi * ai, -gr * ai + gi * ar], axis=-1)
        return da, db

    return out, bwd


@register_op("abs_squared")
def _op_abs_squared(x):
    """|z|^2. Real-pair form (..., 2) -> (...), or complex dtype forward-only."""
    if x.dtype == COMPLEX64:
        return np.ascontiguousarray((x.real ** 2 + x.imag ** 2).astype(REAL32)), lambda g: (None,)
    if x.shape[-1] != 2:
        raise ShapeError(f"abs_squared: trailing axis must be 2, got {x.shape}")
    out = x[..., 0] ** 2 + x[..., 1] ** 2

    def bwd(g):
        return (2.0 * x * g[..., None],)

    return out, bwd


@register_op("cfsum")
def _op_cfsum(x, w, b):
    """Complex filter-and-sum across channels, per look direction.

    x: (T,F,C,2) input spectra, w: (F,D,C,2) filter weights, b: (F,D,2) bias;
    output y: (T,F,D,2) with y[t,f,d] = sum_c w[f,d,c]*x[t,f,c] + b[f,d].
    """
    if x.ndim != 4 or w.ndim != 4 or b.ndim != 3:
        raise ShapeError(f"cfsum: expected (T,F,C,2),(F,D,C,2),(F,D,2), got {x.shape},{w.shape},{b.shape}")
    if x.shape[-1] != 2 or w.shape[-1] != 2 or b.shape[-1] != 2:
        raise ShapeError("cfsum: trailing axis must be 2 (re, im)")
    if x.shape[1] != w.shape[0] or x.shape[2] != w.shape[2] or w.shape[:2] != b.shape[:2]:
        raise ShapeError(f"cfsum: inconsistent dims {x.shape},{w.shape},{b.shape}")
    xr, xi = x[..., 0], x[..., 1]
    wr, wi = w[..., 0], w[..., 1]
    yr = np.einsum("tfc,fdc->tfd", xr, wr) - np.einsum("tfc,fdc->tfd", xi, wi) + b[..., 0]
    yi = np.einsum("tfc,fdc->tfd", xr, wi) + np.einsum("tfc,fdc->tfd", xi, wr) + b[..., 1]
    out = np.stack([yr, yi], axis=-1)

    def bwd(g):
        gr, gi = g[..., 0], g[..., 1]
        dxr = np.einsum("tfd,fdc->tfc", gr, wr) + np.einsum("tfd,fdc->tfc", gi, wi)
        dxi = -np.einsum("tfd,fdc->tfc", gr, wi) + np.einsum("tfd,fdc->tfc", gi, wr)
        dwr = np.einsum("tfd,tfc->fdc", gr, xr) + np.einsum("tfd,tfc->fdc", gi, xi)
        dwi = -np.einsum("tfd,tfc->fdc", gr, xi) + np.einsum("tfd,tfc->fdc", gi, xr)
        db = np.stack([gr.sum(axis=0), gi.sum(axis=0)], axis=-1)
        return (np.stack([dxr, dxi], axis=-1),
                np.stack([dwr, dwi], axis=-1),
                db)

    return out, bwd


@register_op("lstm_seq")
def _op_lstm_seq(x, w, u, b, reverse=False):
    """Full-sequence LSTM with fused BPTT backward.

    x: (T,B,Din), w: (Din,4H), u: (H,4H), b: (4H,) with gate order i,f,g,o.
    Returns the hidden sequence (T,B,H); initial state is zero.
    """
    if x.ndim != 3 or w.ndim != 2 or u.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"lstm_seq: bad ranks {x.shape},{w.shape},{u.shape},{b.shape}")
    t_len, nb, din = x.shape
    h4 = w.shape[1]
    if h4 % 4 or u.shape[1] != h4 or b.shape[0] != h4 or w.shape[0] != din or u.shape[0] != h4 // 4:
        raise ShapeError(f"lstm_seq: inconsistent dims {x.shape},{w.shape},{u.shape},{b.shape}")
    nh = h4 // 4

    xin = x[::-1] if reverse else x
    xproj = xin.reshape(t_len * nb, din) @ w + b
    xproj = xproj.reshape(t_len, nb, h4)

    gates = np.empty((t_len, nb, h4), dtype=x.dtype)   # activated i,f,g,o
    cs = np.empty((t_len, nb, nh), dtype=x.dtype)
    tcs = np.empty((t_len, nb, nh), dtype=x.dtype)
    hprev = np.empty((t_len, nb, nh), dtype=x.dtype)
    h = np.zeros((nb, nh), dtype=x.dtype)
    c = np.zeros((nb, nh), dtype=x.dtype)
    for t in range(t_len):
        hprev[t] = h
        a = xproj[t] + h @ u
        ig = expit(a[:, :nh])
        fg = expit(a[:, nh:2 * nh])
        gg = np.tanh(a[:, 2 * nh:3 * nh])
        og = expit(a[:, 3 * nh:])
        c = fg * c + ig * gg
        tc = np.tanh(c)
        h = og * tc
        gates[t, :, :nh] = ig
        gates[t, :, nh:2 * nh] = fg
        gates[t, :, 2 * nh:3 * nh] = gg
        gates[t, :, 3 * nh:] = og
        cs[t] = c
        tcs[t] = tc
    hs = gates[:, :, 3 * nh:] * tcs
    out = hs[::-1].copy() if reverse else hs

    def bwd(g):
        gh_seq = g[::-1] if reverse else g
        da_all = np.empty((t_len, nb, h4), dtype=x.dtype)
        dh = np.zeros((nb, nh), dtype=x.dtype)
        dc = np.zeros((nb, nh), dtype=x.dtype)
        for t in range(t_len - 1, -1, -1):
            ig = gates[t, :, :nh]
            fg = gates[t, :, nh:2 * nh]
            gg = gates[t, :, 2 * nh:3 * nh]
            og = gates[t, :, 3 * nh:]
            tc = tcs[t]
            cm1 = cs[t - 1] if t > 0 else np.zeros_like(dc)
            dh = dh + gh_seq[t]
            do = dh * tc * og * (1.0 - og)
            dc = dc + dh * og * (1.0 - tc * tc)
            di = dc * gg * ig * (1.0 - ig)
            df = dc * cm1 * fg * (1.0 - fg)
            dg = dc * ig * (1.0 - gg * gg)
            da = da_all[t]
            da[:, :nh] = di
            da[:, nh:2 * nh] = df
            da[:, 2 * nh:3 * nh] = dg
            da[:, 3 * nh:] = do
            dh = da @ u.T
            dc = dc * fg
        da_flat = da_all.reshape(t_len * nb, h4)
        dxin = (da_flat @ w.T).reshape(t_len, nb, din)
        dw = xin.reshape(t_len * nb, din).T @ da_flat
        du = hprev.reshape(t_len * nb, nh).T @ da_flat
        db = da_flat.sum(axis=0)
        dx = dxin[::-1] if reverse else dxin
        return dx, dw, du, db

    return out, bwd


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def numeric_grad(fn, tensors, eps=1e-4, coords=None, rng=None):
    """Central finite differences of the scalar fn() w.r.t. the given leaves.

    Returns one array per tensor. With `coords`, only that many randomly
    sampled coordinates per tensor are probed (other entries are NaN).
    """
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        if coords is None or coords >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=coords, replace=False)
        g = np.full(flat.size, np.nan)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn().item()
            flat[i] = orig - eps
            lo = fn().item()
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * eps)
        grads.append(g.reshape(t.data.shape))
    return grads


def check_gradients(fn, tensors, eps=1e-4, rtol=1e-3, coords=None, seed=0):
    """Compare backward() against finite differences; returns max rel error.

    Relative error uses max(1, |analytic|) as the denominator.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.zero_grad()
    backward(fn())
    worst = 0.0
    num = numeric_grad(fn, tensors, eps=eps, coords=coords, rng=rng)
    for t, ng in zip(tensors, num):
        ag = t.grad if t.grad is not None else np.zeros_like(t.data)
        mask = ~np.isnan(ng)
        err = np.abs(ag - ng)[mask] / np.maximum(1.0, np.abs(ag)[mask])
        if err.size:
            worst = max(worst, float(err.max()))
    if worst > rtol:
        raise AssertionError(f"gradient check failed: max rel error {worst:.3e} > {rtol}")
    return worst
