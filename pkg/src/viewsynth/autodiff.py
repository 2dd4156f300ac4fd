"""Reverse-mode automatic differentiation over dense numpy arrays.

Operations execute eagerly on numpy buffers.  While a Tape is active
(``with Tape() as tape:``) every primitive whose inputs participate in
differentiation appends a record holding the input tensors and a backward
closure.  ``tape.backward(loss)`` walks the records in reverse and
accumulates dloss/dx into the ``grad`` buffer of every tensor with
``requires_grad`` set.

Conventions:

* Compute dtype is float32.  Ops preserve the dtype of their inputs, so a
  graph built from float64 tensors runs entirely in float64; the gradient
  checker uses that for its high-precision probes.
* No implicit broadcasting.  Elementwise ops demand identical shapes; the
  few aligned ops (add_bias, mul_rows, scale) state their alignment
  explicitly.  Mismatches raise ShapeError naming the primitive.
* Reductions go through numpy's fixed-order kernels (sum, cumsum,
  bincount), so repeated single-threaded runs are bit-identical.
* Index arguments (gather/segment ids, sample coordinates fed as plain
  arrays) are structural: they are never differentiated.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "add_bias",
    "mul_rows",
    "matmul",
    "dot",
    "conv2d",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "exp",
    "absolute",
    "softmax",
    "l2_normalize",
    "guarded_reciprocal",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "concat",
    "reshape",
    "transpose",
    "upsample_nearest2",
    "bilinear_sample",
    "gather_rows",
    "segment_sum",
    "segment_mean",
    "segment_max",
    "detach",
    "custom_op",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Dense array with an optional gradient buffer.

    ``data`` is a contiguous float array.  ``grad`` is None until a
    backward pass deposits a gradient of the same shape.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        arr = np.asarray(values)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else np.float32
        arr = np.asarray(arr, dtype=dtype)
        if not arr.flags.c_contiguous:
            # keep 0-d tensors 0-d: ascontiguousarray would promote to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", f"tensor has shape {self.data.shape}, need a scalar")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """The raw value buffer (shared, treat as read-only)."""
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(values) -> Tensor:
    """Wrap an array as a non-differentiable tensor."""
    return Tensor(values, requires_grad=False)


_STACK = threading.local()


def _tape_stack():
    stack = getattr(_STACK, "tapes", None)
    if stack is None:
        stack = []
        _STACK.tapes = stack
    return stack


class Tape:
    """Ordered record of executed primitives for one backward pass."""

    def __init__(self):
        # each record: (output, inputs tuple, backward closure)
        self._records = []
        self._leaves = {}

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a tape that is not active")
        stack.pop()
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor):
        """Fill grad buffers with dloss/dx for every recorded tensor.

        Leaves that took part in some recorded op but not in the path to
        the loss receive an explicit zero gradient.
        """
        if loss.data.size != 1:
            raise ShapeError("backward", f"loss must be scalar, got shape {loss.data.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        tensors = {id(loss): loss}
        for out, inputs, back in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            self._deposit(out, g)
            input_grads = back(g)
            for t, gt in zip(inputs, input_grads):
                if gt is None or not t.requires_grad:
                    continue
                key = id(t)
                tensors[key] = t
                have = grads.get(key)
                grads[key] = gt if have is None else have + gt
        for key, g in grads.items():
            self._deposit(tensors[key], g)
        for leaf in self._leaves.values():
            if leaf.requires_grad and leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)

    @staticmethod
    def _deposit(t: Tensor, g: np.ndarray):
        if not t.requires_grad:
            return
        g = np.asarray(g, dtype=t.data.dtype).reshape(t.data.shape)
        t.grad = g if t.grad is None else t.grad + g


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _record(out: Tensor, inputs, back) -> Tensor:
    """Attach a backward rule if a tape is active and some input needs it."""
    tape = _active_tape()
    if tape is None:
        return out
    tracked = tuple(t for t in inputs if isinstance(t, Tensor))
    if not any(t.requires_grad for t in tracked):
        return out
    out.requires_grad = True
    tape._records.append((out, tracked, back))
    for t in tracked:
        tape._leaves.setdefault(id(t), t)
    return out


def _need(t, op: str, name: str) -> Tensor:
    if not isinstance(t, Tensor):
        raise TypeError(f"{op}: {name} must be a Tensor, got {type(t).__name__}")
    return t


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(op, f"operand shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _need(a, "add", "a"), _need(b, "add", "b")
    _same_shape("add", a, b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _need(a, "sub", "a"), _need(b, "sub", "b")
    _same_shape("sub", a, b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _need(a, "mul", "a"), _need(b, "mul", "b")
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)
    return _record(out, (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b: Tensor) -> Tensor:
    _need(a, "div", "a"), _need(b, "div", "b")
    _same_shape("div", a, b)
    bd = b.data
    y = a.data / bd
    out = Tensor(y)
    return _record(out, (a, b), lambda g: (g / bd, -g * y / bd))


def scale(x: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar (the one permitted broadcast)."""
    _need(x, "scale", "x")
    s = float(s)
    out = Tensor(x.data * s)
    return _record(out, (x,), lambda g: (g * s,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias: (M, C) + (C,) or (N, C, H, W) + (C,)."""
    _need(x, "add_bias", "x"), _need(b, "add_bias", "b")
    if b.data.ndim != 1:
        raise ShapeError("add_bias", f"bias must be 1-D, got {b.data.shape}")
    c = b.data.shape[0]
    if x.data.ndim == 2:
        if x.data.shape[1] != c:
            raise ShapeError("add_bias", f"x {x.data.shape} vs bias ({c},)")
        out = Tensor(x.data + b.data[None, :])
        return _record(out, (x, b), lambda g: (g, g.sum(axis=0)))
    if x.data.ndim == 4:
        if x.data.shape[1] != c:
            raise ShapeError("add_bias", f"x {x.data.shape} vs bias ({c},)")
        out = Tensor(x.data + b.data[None, :, None, None])
        return _record(out, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))))
    raise ShapeError("add_bias", f"x must be 2-D or 4-D, got {x.data.shape}")


def mul_rows(x: Tensor, s: Tensor) -> Tensor:
    """Scale each row of (M, C) by the matching entry of (M,)."""
    _need(x, "mul_rows", "x"), _need(s, "mul_rows", "s")
    if x.data.ndim != 2 or s.data.ndim != 1 or x.data.shape[0] != s.data.shape[0]:
        raise ShapeError("mul_rows", f"x {x.data.shape} vs s {s.data.shape}")
    xd, sd = x.data, s.data
    out = Tensor(xd * sd[:, None])
    return _record(out, (x, s), lambda g: (g * sd[:, None], (g * xd).sum(axis=1)))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _need(a, "matmul", "a"), _need(b, "matmul", "b")
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", f"cannot multiply {a.data.shape} by {b.data.shape}")
    ad, bd = a.data, b.data
    out = Tensor(ad @ bd)
    return _record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def dot(a: Tensor, b: Tensor) -> Tensor:
    _need(a, "dot", "a"), _need(b, "dot", "b")
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError("dot", f"need equal-length vectors, got {a.data.shape} and {b.data.shape}")
    ad, bd = a.data, b.data
    out = Tensor(np.asarray(ad @ bd))
    return _record(out, (a, b), lambda g: (g * bd, g * ad))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution (cross-correlation) via im2col and one matmul.

    x: (N, Cin, H, W), w: (Cout, Cin, kh, kw), b: (Cout,) or None.
    stride 1 or 2, symmetric zero padding.  Output spatial extent is
    floor((H + 2*pad - kh) / stride) + 1.
    """
    _need(x, "conv2d", "x"), _need(w, "conv2d", "w")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d", f"x {x.data.shape} and w {w.data.shape} must be 4-D")
    n, cin, h, wd = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeError("conv2d", f"input channels {cin} vs kernel channels {cin_w}")
    if stride not in (1, 2):
        raise ShapeError("conv2d", f"stride must be 1 or 2, got {stride}")
    if b is not None:
        _need(b, "conv2d", "b")
        if b.data.shape != (cout,):
            raise ShapeError("conv2d", f"bias {b.data.shape} vs ({cout},)")
    hp, wp = h + 2 * pad, wd + 2 * pad
    if hp < kh or wp < kw:
        raise ShapeError("conv2d", f"padded input {hp}x{wp} smaller than kernel {kh}x{kw}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, Cin, Ho, Wo, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out_mat = cols @ wmat.T
    if b is not None:
        out_mat = out_mat + b.data[None, :]
    y = np.ascontiguousarray(out_mat.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    out = Tensor(y)

    def back(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        gw = (gmat.T @ cols).reshape(w.data.shape)
        gb = gmat.sum(axis=0) if b is not None else None
        gcols = (gmat @ wmat).reshape(n, ho, wo, cin, kh, kw)
        gcols = gcols.transpose(0, 3, 4, 5, 1, 2)  # (N, Cin, kh, kw, Ho, Wo)
        gxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
        for di in range(kh):
            for dj in range(kw):
                gxp[:, :, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += gcols[:, :, di, dj]
        gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        if b is not None:
            return np.ascontiguousarray(gx), gw, gb
        return np.ascontiguousarray(gx), gw

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, back)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x: Tensor) -> Tensor:
    _need(x, "relu", "x")
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0))
    return _record(out, (x,), lambda g: (np.where(mask, g, 0),))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    _need(x, "leaky_relu", "x")
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, alpha * x.data))
    return _record(out, (x,), lambda g: (np.where(mask, g, alpha * g),))


def tanh(x: Tensor) -> Tensor:
    _need(x, "tanh", "x")
    y = np.tanh(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    _need(x, "sigmoid", "x")
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    _need(x, "exp", "x")
    y = np.exp(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * y,))


def absolute(x: Tensor) -> Tensor:
    """|x| elementwise; subgradient 0 at the origin."""
    _need(x, "absolute", "x")
    sign = np.sign(x.data)
    out = Tensor(np.abs(x.data))
    return _record(out, (x,), lambda g: (g * sign,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _need(x, "softmax", "x")
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return ((g - inner) * y,)

    return _record(out, (x,), back)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / max(||x||, eps) along one axis."""
    _need(x, "l2_normalize", "x")
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    safe = np.maximum(norm, eps)
    y = xd / safe
    out = Tensor(y)

    def back(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        # below the clamp the denominator is constant, so no projection term
        return (np.where(norm > eps, (g - y * proj) / safe, g / safe),)

    return _record(out, (x,), back)


def guarded_reciprocal(x: Tensor, threshold: float) -> Tensor:
    """1/x where x > threshold, else exactly 0 (gradient 0 in the guard).

    Intended for nonnegative normalizers; the guard turns a vanishing
    denominator into a zero output instead of an overflow.
    """
    _need(x, "guarded_reciprocal", "x")
    keep = x.data > threshold
    with np.errstate(divide="ignore"):
        y = np.where(keep, 1.0 / np.where(keep, x.data, 1.0), 0.0).astype(x.data.dtype)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (np.where(keep, -g * y * y, 0),))


# ---------------------------------------------------------------------------
# reductions


def _normalize_axis(op: str, axis, ndim: int):
    if axis is None:
        return None
    axis = int(axis)
    if not -ndim <= axis < ndim:
        raise ShapeError(op, f"axis {axis} out of range for {ndim}-D input")
    return axis % ndim


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    _need(x, "reduce_sum", "x")
    axis = _normalize_axis("reduce_sum", axis, x.data.ndim)
    y = x.data.sum(axis=axis)
    out = Tensor(np.asarray(y))

    def back(g):
        if axis is None:
            return (np.ascontiguousarray(np.broadcast_to(g, x.data.shape)),)
        ge = np.expand_dims(g, axis)
        return (np.ascontiguousarray(np.broadcast_to(ge, x.data.shape)),)

    return _record(out, (x,), back)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    _need(x, "reduce_mean", "x")
    axis = _normalize_axis("reduce_mean", axis, x.data.ndim)
    count = x.data.size if axis is None else x.data.shape[axis]
    if count == 0:
        raise ShapeError("reduce_mean", f"mean over empty extent in shape {x.data.shape}")
    y = x.data.mean(axis=axis)
    out = Tensor(np.asarray(y))

    def back(g):
        gs = g / count
        if axis is None:
            return (np.ascontiguousarray(np.broadcast_to(gs, x.data.shape)),)
        ge = np.expand_dims(gs, axis)
        return (np.ascontiguousarray(np.broadcast_to(ge, x.data.shape)),)

    return _record(out, (x,), back)


def reduce_max(x: Tensor, axis: int | None = None) -> Tensor:
    """Max reduction; backward routes to the first (lowest-index) argmax."""
    _need(x, "reduce_max", "x")
    if x.data.size == 0:
        raise ShapeError("reduce_max", f"max over empty tensor of shape {x.data.shape}")
    axis = _normalize_axis("reduce_max", axis, x.data.ndim)
    if axis is None:
        arg = int(np.argmax(x.data))  # first occurrence = lowest flat index
        out = Tensor(np.asarray(x.data.reshape(-1)[arg]))

        def back(g):
            gx = np.zeros_like(x.data)
            gx.reshape(-1)[arg] = g
            return (gx,)

        return _record(out, (x,), back)

    arg = np.argmax(x.data, axis=axis)
    y = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)
    out = Tensor(np.asarray(y))

    def back(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _record(out, (x,), back)


# ---------------------------------------------------------------------------
# shape plumbing


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat", "need at least one tensor")
    for i, t in enumerate(tensors):
        _need(t, "concat", f"tensors[{i}]")
    ndim = tensors[0].data.ndim
    axis = _normalize_axis("concat", axis, ndim)
    ref = list(tensors[0].data.shape)
    for t in tensors[1:]:
        other = list(t.data.shape)
        if len(other) != ndim or other[:axis] + other[axis + 1 :] != ref[:axis] + ref[axis + 1 :]:
            raise ShapeError("concat", f"shape {t.data.shape} incompatible with {tensors[0].data.shape} on axis {axis}")
    sizes = [t.data.shape[axis] for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return _record(out, tuple(tensors), back)


def reshape(x: Tensor, shape) -> Tensor:
    _need(x, "reshape", "x")
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ShapeError("reshape", f"cannot view {x.data.shape} as {shape}")
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.data.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    _need(x, "transpose", "x")
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError("transpose", f"axes {axes} are not a permutation for {x.data.ndim}-D input")
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    return _record(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsample of (N, C, H, W)."""
    _need(x, "upsample_nearest2", "x")
    if x.data.ndim != 4:
        raise ShapeError("upsample_nearest2", f"need 4-D input, got {x.data.shape}")
    n, c, h, w = x.data.shape
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3))

    def back(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _record(out, (x,), back)


# ---------------------------------------------------------------------------
# sampling and row indexing


def bilinear_sample(feat: Tensor, coords: Tensor) -> Tensor:
    """Sample (C, H, W) features at continuous (x, y) positions -> (M, C).

    Integer coordinates land exactly on texels; out-of-range positions
    clamp to the border.  Differentiable in both the feature plane and the
    coordinates (piecewise-linear in the latter; at a clamped border the
    coordinate gradient is 0).
    """
    _need(feat, "bilinear_sample", "feat"), _need(coords, "bilinear_sample", "coords")
    if feat.data.ndim != 3:
        raise ShapeError("bilinear_sample", f"feat must be (C, H, W), got {feat.data.shape}")
    if coords.data.ndim != 2 or coords.data.shape[1] != 2:
        raise ShapeError("bilinear_sample", f"coords must be (M, 2), got {coords.data.shape}")
    c, h, w = feat.data.shape
    cx = np.clip(coords.data[:, 0], 0.0, w - 1.0)
    cy = np.clip(coords.data[:, 1], 0.0, h - 1.0)
    inside_x = (coords.data[:, 0] > 0.0) & (coords.data[:, 0] < w - 1.0)
    inside_y = (coords.data[:, 1] > 0.0) & (coords.data[:, 1] < h - 1.0)
    x0 = np.floor(cx).astype(np.int64)
    y0 = np.floor(cy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (cx - x0).astype(feat.data.dtype)
    fy = (cy - y0).astype(feat.data.dtype)

    plane = feat.data.reshape(c, h * w)
    i00 = y0 * w + x0
    i01 = y0 * w + x1
    i10 = y1 * w + x0
    i11 = y1 * w + x1
    v00 = plane[:, i00].T  # (M, C)
    v01 = plane[:, i01].T
    v10 = plane[:, i10].T
    v11 = plane[:, i11].T
    wx1 = fx[:, None]
    wx0 = 1.0 - wx1
    wy1 = fy[:, None]
    wy0 = 1.0 - wy1
    out_vals = wy0 * (wx0 * v00 + wx1 * v01) + wy1 * (wx0 * v10 + wx1 * v11)
    out = Tensor(out_vals)

    def back(g):
        grads = []
        if feat.requires_grad:
            gplane = np.zeros((h * w, c), dtype=np.float64)
            for idx, wgt in ((i00, wy0 * wx0), (i01, wy0 * wx1), (i10, wy1 * wx0), (i11, wy1 * wx1)):
                contrib = g * wgt
                for ch in range(c):
                    gplane[:, ch] += np.bincount(idx, weights=contrib[:, ch], minlength=h * w)
            grads.append(gplane.T.reshape(c, h, w).astype(feat.data.dtype))
        else:
            grads.append(None)
        if coords.requires_grad:
            dx = (wy0 * (v01 - v00) + wy1 * (v11 - v10)) * g
            dy = (wx0 * (v10 - v00) + wx1 * (v11 - v01)) * g
            gc = np.zeros_like(coords.data)
            gc[:, 0] = np.where(inside_x, dx.sum(axis=1), 0.0)
            gc[:, 1] = np.where(inside_y, dy.sum(axis=1), 0.0)
            grads.append(gc)
        else:
            grads.append(None)
        return tuple(grads)

    return _record(out, (feat, coords), back)


def _rows_2d(op: str, x: Tensor):
    if x.data.ndim == 1:
        return x.data[:, None], True
    if x.data.ndim == 2:
        return x.data, False
    raise ShapeError(op, f"need 1-D or 2-D input, got {x.data.shape}")


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows of a 1-D or 2-D tensor: out[r] = x[idx[r]]."""
    _need(x, "gather_rows", "x")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows", f"idx must be 1-D, got {idx.shape}")
    xd, was_1d = _rows_2d("gather_rows", x)
    m = xd.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise ShapeError("gather_rows", f"index out of range for {m} rows")
    y = xd[idx]
    out = Tensor(y[:, 0] if was_1d else y)

    def back(g):
        g2 = g[:, None] if was_1d else g
        gx = np.empty_like(xd)
        for ch in range(xd.shape[1]):
            gx[:, ch] = np.bincount(idx, weights=g2[:, ch], minlength=m)
        return (gx[:, 0] if was_1d else gx,)

    return _record(out, (x,), back)


def _check_segments(op: str, seg: np.ndarray, m: int, num_segments: int):
    if seg.ndim != 1 or seg.shape[0] != m:
        raise ShapeError(op, f"segment ids {seg.shape} vs {m} rows")
    if m:
        if seg[0] < 0 or seg[-1] >= num_segments:
            raise ShapeError(op, f"segment ids must lie in [0, {num_segments})")
        if np.any(np.diff(seg) < 0):
            raise ShapeError(op, "segment ids must be nondecreasing")


def segment_sum(x: Tensor, seg, num_segments: int) -> Tensor:
    """Sum rows sharing a segment id; empty segments produce zero rows.

    Rows must already be grouped (ids nondecreasing); summation order is
    the fixed row order, so results are reproducible bit for bit.
    """
    _need(x, "segment_sum", "x")
    seg = np.asarray(seg, dtype=np.int64)
    xd, was_1d = _rows_2d("segment_sum", x)
    m = xd.shape[0]
    _check_segments("segment_sum", seg, m, num_segments)
    y = _segment_sum_raw(xd, seg, num_segments).astype(xd.dtype)
    out = Tensor(y[:, 0] if was_1d else y)

    def back(g):
        g2 = g[:, None] if was_1d else g
        gx = g2[seg]
        return (gx[:, 0] if was_1d else np.ascontiguousarray(gx),)

    return _record(out, (x,), back)


def _segment_sum_raw(xd: np.ndarray, seg: np.ndarray, num_segments: int) -> np.ndarray:
    # float64 reduceat sums each segment over its own slice only, so a
    # segment's result is bit-identical whether computed alone or batched
    # alongside other segments.  A zero pad row keeps every reduceat start
    # index in bounds when trailing segments are empty; empty segments are
    # masked to zero afterwards.
    m = xd.shape[0]
    starts = np.searchsorted(seg, np.arange(num_segments))
    xpad = np.concatenate([xd.astype(np.float64), np.zeros((1, xd.shape[1]))], axis=0)
    out = np.add.reduceat(xpad, starts, axis=0)
    counts = np.bincount(seg, minlength=num_segments)
    out[counts == 0] = 0.0
    return out


def segment_mean(x: Tensor, seg, num_segments: int) -> Tensor:
    """Mean of rows per segment; empty segments produce zero rows."""
    _need(x, "segment_mean", "x")
    seg = np.asarray(seg, dtype=np.int64)
    xd, was_1d = _rows_2d("segment_mean", x)
    m = xd.shape[0]
    _check_segments("segment_mean", seg, m, num_segments)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    denom = np.maximum(counts, 1.0)
    y = (_segment_sum_raw(xd, seg, num_segments) / denom[:, None]).astype(xd.dtype)
    out = Tensor(y[:, 0] if was_1d else y)

    def back(g):
        g2 = g[:, None] if was_1d else g
        gx = g2[seg] / denom[seg][:, None].astype(g.dtype)
        return (gx[:, 0] if was_1d else np.ascontiguousarray(gx),)

    return _record(out, (x,), back)


def segment_max(x: Tensor, seg, num_segments: int) -> Tensor:
    """Columnwise max per segment; zero rows for empty segments.

    Backward routes each output entry to the first (lowest row index)
    attaining row, mirroring reduce_max's tie rule.
    """
    _need(x, "segment_max", "x")
    seg = np.asarray(seg, dtype=np.int64)
    xd, was_1d = _rows_2d("segment_max", x)
    m, c = xd.shape
    _check_segments("segment_max", seg, m, num_segments)
    counts = np.bincount(seg, minlength=num_segments)
    y = np.zeros((num_segments, c), dtype=xd.dtype)
    arg = np.full((num_segments, c), m, dtype=np.int64)
    if m:
        # sentinel row keeps every reduceat start index in bounds without
        # disturbing real segment boundaries (empty segments read garbage,
        # masked below via counts)
        starts = np.searchsorted(seg, np.arange(num_segments))
        xpad = np.concatenate([xd, np.full((1, c), -np.inf, dtype=xd.dtype)], axis=0)
        raw = np.maximum.reduceat(xpad, starts, axis=0)
        nonempty = counts > 0
        y[nonempty] = raw[nonempty]
        rowidx = np.arange(m, dtype=np.int64)[:, None]
        hit = xd == y[seg]
        cand = np.where(hit, rowidx, m)
        cpad = np.concatenate([cand, np.full((1, c), m, dtype=np.int64)], axis=0)
        amin = np.minimum.reduceat(cpad, starts, axis=0)
        arg[nonempty] = amin[nonempty]
    out = Tensor(y[:, 0] if was_1d else y)

    def back(g):
        g2 = g[:, None] if was_1d else g
        gx = np.zeros((m + 1, c), dtype=xd.dtype)
        np.add.at(gx, (arg.reshape(-1), np.tile(np.arange(c), num_segments)), g2.reshape(-1))
        gx = gx[:m]
        return (gx[:, 0] if was_1d else gx,)

    return _record(out, (x,), back)


# ---------------------------------------------------------------------------
# graph edges


def detach(x: Tensor) -> Tensor:
    """A view of the value that blocks gradient flow (shares the buffer)."""
    _need(x, "detach", "x")
    return Tensor(x.data)


def custom_op(inputs, value: np.ndarray, backward, name: str = "custom_op") -> Tensor:
    """Record an externally computed op with a caller-supplied backward.

    backward(g) must return one gradient array (or None) per input.
    """
    inputs = tuple(inputs)
    for i, t in enumerate(inputs):
        _need(t, name, f"inputs[{i}]")
    out = Tensor(value)
    return _record(out, inputs, backward)
