"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is a Wengert list: every differentiable op appends its output to
the active :class:`Tape` in execution order, which is a valid topological
order by construction. ``backward`` walks the list in reverse exactly once;
a tape is single-use and training rebuilds it each iteration.

All data is double precision. Values are checked for NaN/Inf at op
boundaries and tensors are frozen after construction; only ``grad`` buffers
mutate during a backward pass.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class AutodiffError(Exception):
    """Base class for autodiff failures."""


class ShapeError(AutodiffError):
    """Operand shapes do not satisfy an op's precondition."""


class NonFiniteError(AutodiffError):
    """A NaN or Inf crossed an op boundary."""


class DomainError(AutodiffError):
    """Input values outside an op's domain (e.g. division by zero)."""


class TapeError(AutodiffError):
    """Backward misuse: non-scalar loss, missing tape, or reuse of a consumed tape."""


class DeterminismError(AutodiffError):
    """Two forward evaluations of a supposedly deterministic function disagreed."""


class Tape:
    """Execution-ordered record of op outputs for one forward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False


_active_tape = Tape()
_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording (inference / finite differences)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _require_finite(arr, context):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {context}")


class Tensor:
    """Immutable dense float64 array with optional gradient tracking."""

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        if any(n <= 0 for n in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        _require_finite(arr, "tensor constructor")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._parents = ()
        self._tape = None

    @classmethod
    def _from_array(cls, arr, requires_grad=False):
        """Wrap a freshly computed array without copying (caller relinquishes it)."""
        t = cls.__new__(cls)
        # np.ascontiguousarray would promote 0-d arrays to 1-d; keep scalars 0-d.
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        _require_finite(arr, "op output")
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._backward = None
        t._parents = ()
        t._tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        """A view of the same values outside the graph."""
        return Tensor._from_array(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    # convenience arithmetic; the named module functions are the primary API
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

    def abs(self):
        return absolute(self)

    def exp(self):
        return exp(self)

    def square(self):
        return square(self)

    def sum(self, axes=None):
        return reduce_sum(self, axes)

    def mean(self, axes=None):
        return reduce_mean(self, axes)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _record(out, parents, backward_fn):
    """Attach backward metadata and push onto the active tape."""
    out.requires_grad = True
    out._parents = tuple(parents)
    out._backward = backward_fn
    out._tape = _active_tape
    _active_tape.nodes.append(out)
    return out


def _should_record(*tensors):
    return _grad_enabled and any(t.requires_grad for t in tensors if isinstance(t, Tensor))


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _binary_operands(a, b, op_name):
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(
            f"{op_name}: shapes {a.shape} and {b.shape} are neither equal nor scalar"
        )
    return a, b


def _reduce_to(g, shape):
    """Sum a gradient down to a scalar operand's shape if it was broadcast."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=np.float64).reshape(shape)


def backward(loss):
    """Run the reverse pass from a scalar loss; the tape is consumed."""
    global _active_tape
    if not isinstance(loss, Tensor):
        raise TapeError("backward expects a Tensor")
    if loss.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeError("loss was not produced on a tape (no grad-requiring inputs)")
    if tape.consumed:
        raise TapeError("tape already consumed; re-run the forward pass")
    tape.consumed = True
    if _active_tape is tape:
        _active_tape = Tape()
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a, b = _binary_operands(a, b, "add")
    out = Tensor._from_array(a.data + b.data)
    if _should_record(a, b):
        def bwd(g):
            if a.requires_grad:
                a._accumulate(_reduce_to(g, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to(g, b.shape))
        _record(out, (a, b), bwd)
    return out


def sub(a, b):
    a, b = _binary_operands(a, b, "sub")
    out = Tensor._from_array(a.data - b.data)
    if _should_record(a, b):
        def bwd(g):
            if a.requires_grad:
                a._accumulate(_reduce_to(g, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to(-g, b.shape))
        _record(out, (a, b), bwd)
    return out


def mul(a, b):
    a, b = _binary_operands(a, b, "mul")
    out = Tensor._from_array(a.data * b.data)
    if _should_record(a, b):
        def bwd(g):
            if a.requires_grad:
                a._accumulate(_reduce_to(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to(g * a.data, b.shape))
        _record(out, (a, b), bwd)
    return out


def div(a, b):
    a, b = _binary_operands(a, b, "div")
    if np.any(b.data == 0.0):
        raise DomainError("div: divisor contains zero elements")
    out = Tensor._from_array(a.data / b.data)
    if _should_record(a, b):
        def bwd(g):
            if a.requires_grad:
                a._accumulate(_reduce_to(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to(-g * a.data / (b.data * b.data), b.shape))
        _record(out, (a, b), bwd)
    return out


def neg(a):
    a = _as_tensor(a)
    out = Tensor._from_array(-a.data)
    if _should_record(a):
        def bwd(g):
            a._accumulate(-g)
        _record(out, (a,), bwd)
    return out


def absolute(a):
    a = _as_tensor(a)
    out = Tensor._from_array(np.abs(a.data))
    if _should_record(a):
        sign = np.sign(a.data)
        def bwd(g):
            a._accumulate(g * sign)
        _record(out, (a,), bwd)
    return out


def exp(a):
    a = _as_tensor(a)
    out = Tensor._from_array(np.exp(a.data))
    if _should_record(a):
        def bwd(g):
            a._accumulate(g * out.data)
        _record(out, (a,), bwd)
    return out


def square(a):
    a = _as_tensor(a)
    out = Tensor._from_array(a.data * a.data)
    if _should_record(a):
        def bwd(g):
            a._accumulate(g * (2.0 * a.data))
        _record(out, (a,), bwd)
    return out


def clamp_min(a, floor):
    """Elementwise max(a, floor); gradient flows to a strictly above the floor."""
    a, b = _binary_operands(a, floor, "clamp_min")
    out = Tensor._from_array(np.maximum(a.data, b.data))
    if _should_record(a, b):
        above = a.data > b.data
        def bwd(g):
            if a.requires_grad:
                a._accumulate(_reduce_to(g * above, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to(g * ~above, b.shape))
        _record(out, (a, b), bwd)
    return out


def relu(a):
    return clamp_min(a, 0.0)


# ---------------------------------------------------------------------------
# reductions


def _normalize_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    if any(ax >= ndim or ax < -ndim for ax in axes):
        raise ShapeError(f"axes {tuple(axes)} invalid for ndim {ndim}")
    axes = tuple(ax % ndim for ax in axes)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate axes {axes}")
    return axes


def _reduce(a, axes, take_mean):
    a = _as_tensor(a)
    axes = _normalize_axes(axes, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    res = a.data.sum(axis=axes) if axes else a.data.copy()
    if take_mean:
        res = res / count
    out = Tensor._from_array(np.asarray(res))
    if _should_record(a):
        kept = tuple(1 if ax in axes else n for ax, n in enumerate(a.shape))
        scale = 1.0 / count if take_mean else 1.0
        def bwd(g):
            a._accumulate(np.broadcast_to(g.reshape(kept) * scale, a.shape))
        _record(out, (a,), bwd)
    return out


def reduce_sum(a, axes=None):
    return _reduce(a, axes, take_mean=False)


def reduce_mean(a, axes=None):
    """Mean over the given axes; divides by the exact reduced element count."""
    return _reduce(a, axes, take_mean=True)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape):
    a = _as_tensor(a)
    shape = tuple(int(n) for n in shape)
    target = int(np.prod(shape)) if shape else 1
    if target != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    out = Tensor._from_array(a.data.reshape(shape))
    if _should_record(a):
        def bwd(g):
            a._accumulate(g.reshape(a.shape))
        _record(out, (a,), bwd)
    return out


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of no tensors")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim:
            raise ShapeError("concat rank mismatch")
        for ax in range(ndim):
            if ax != axis and t.shape[ax] != tensors[0].shape[ax]:
                raise ShapeError("concat extent mismatch off the concat axis")
    out = Tensor._from_array(np.concatenate([t.data for t in tensors], axis=axis))
    if _should_record(*tensors):
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def bwd(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * ndim
                    idx[axis] = slice(lo, hi)
                    t._accumulate(g[tuple(idx)])
        _record(out, tuple(tensors), bwd)
    return out


def _axis_slice(ndim, axis, sl):
    idx = [slice(None)] * ndim
    idx[axis] = sl
    return tuple(idx)


def diff_forward(a, axis):
    """First-order forward difference t[i+1] - t[i]; the last slot is 0 (replicate edge)."""
    a = _as_tensor(a)
    axis = axis % a.ndim
    n = a.shape[axis]
    res = np.zeros_like(a.data)
    if n > 1:
        hi = a.data[_axis_slice(a.ndim, axis, slice(1, None))]
        lo = a.data[_axis_slice(a.ndim, axis, slice(None, -1))]
        res[_axis_slice(a.ndim, axis, slice(None, -1))] = hi - lo
    out = Tensor._from_array(res)
    if _should_record(a):
        def bwd(g):
            ga = np.zeros(a.shape)
            if n > 1:
                gsl = g[_axis_slice(a.ndim, axis, slice(None, -1))]
                ga[_axis_slice(a.ndim, axis, slice(1, None))] += gsl
                ga[_axis_slice(a.ndim, axis, slice(None, -1))] -= gsl
            a._accumulate(ga)
        _record(out, (a,), bwd)
    return out


def diff_second(a, axis):
    """Central second difference t[i-1] - 2 t[i] + t[i+1] on the interior; borders are 0."""
    a = _as_tensor(a)
    axis = axis % a.ndim
    n = a.shape[axis]
    res = np.zeros_like(a.data)
    if n > 2:
        left = a.data[_axis_slice(a.ndim, axis, slice(None, -2))]
        mid = a.data[_axis_slice(a.ndim, axis, slice(1, -1))]
        right = a.data[_axis_slice(a.ndim, axis, slice(2, None))]
        res[_axis_slice(a.ndim, axis, slice(1, -1))] = left - 2.0 * mid + right
    out = Tensor._from_array(res)
    if _should_record(a):
        def bwd(g):
            ga = np.zeros(a.shape)
            if n > 2:
                gsl = g[_axis_slice(a.ndim, axis, slice(1, -1))]
                ga[_axis_slice(a.ndim, axis, slice(None, -2))] += gsl
                ga[_axis_slice(a.ndim, axis, slice(1, -1))] -= 2.0 * gsl
                ga[_axis_slice(a.ndim, axis, slice(2, None))] += gsl
            a._accumulate(ga)
        _record(out, (a,), bwd)
    return out


# ---------------------------------------------------------------------------
# softmax


def softmax_axis(a, axis):
    """Exp-normalize along an axis with max subtraction; slices sum to 1."""
    a = _as_tensor(a)
    axis = axis % a.ndim
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._from_array(y)
    if _should_record(a):
        def bwd(g):
            dot = (g * out.data).sum(axis=axis, keepdims=True)
            a._accumulate(out.data * (g - dot))
        _record(out, (a,), bwd)
    return out


# ---------------------------------------------------------------------------
# convolution (cross-correlation, zero padding)


def _conv_checks(x, kernels, bias, stride, padding, spatial):
    if x.ndim != spatial + 1:
        raise ShapeError(f"conv input must have {spatial + 1} dims, got {x.shape}")
    if kernels.ndim != spatial + 2:
        raise ShapeError(f"conv kernels must have {spatial + 2} dims, got {kernels.shape}")
    if bias.ndim != 1 or bias.shape[0] != kernels.shape[0]:
        raise ShapeError("bias must be one value per output channel")
    if kernels.shape[1] != x.shape[0]:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[0]}, kernels expect {kernels.shape[1]}"
        )
    if any(k % 2 == 0 for k in kernels.shape[2:]):
        raise ShapeError(f"kernel extents must be odd, got {kernels.shape[2:]}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    if padding < 0:
        raise ShapeError("padding must be >= 0")
    out_sp = []
    for n, k in zip(x.shape[1:], kernels.shape[2:]):
        o = (n + 2 * padding - k) // stride + 1
        if o < 1:
            raise ShapeError("conv output extent would be non-positive")
        out_sp.append(o)
    return tuple(out_sp)


# einsum subscripts for the sliding-window contraction, per spatial rank
_CONV_FWD = {2: "chwij,ocij->ohw", 3: "cdhwijk,ocijk->odhw"}
_CONV_KGRAD = {2: "chwij,ohw->ocij", 3: "cdhwijk,odhw->ocijk"}
_CONV_XGRAD = {2: "ohwij,ocij->chw", 3: "odhwijk,ocijk->cdhw"}


def _conv_nd(x, kernels, bias, stride, padding, spatial):
    x, kernels, bias = _as_tensor(x), _as_tensor(kernels), _as_tensor(bias)
    out_sp = _conv_checks(x, kernels, bias, stride, padding, spatial)
    ksp = kernels.shape[2:]
    p = padding
    axes = tuple(range(1, spatial + 1))
    xp = np.pad(x.data, ((0, 0),) + ((p, p),) * spatial)
    win = sliding_window_view(xp, ksp, axis=axes)
    if stride > 1:
        win = win[(slice(None),) + (slice(None, None, stride),) * spatial]
    res = np.einsum(_CONV_FWD[spatial], win, kernels.data, optimize=True)
    res += bias.data.reshape((-1,) + (1,) * spatial)
    out = Tensor._from_array(res)
    if _should_record(x, kernels, bias):
        def bwd(g):
            if bias.requires_grad:
                bias._accumulate(g.sum(axis=axes))
            if kernels.requires_grad:
                kernels._accumulate(np.einsum(_CONV_KGRAD[spatial], win, g, optimize=True))
            if x.requires_grad:
                x._accumulate(_conv_input_grad(g, kernels.data, x.shape, xp, stride, p, out_sp))
        _record(out, (x, kernels, bias), bwd)
    return out


def _conv_input_grad(g, kern, x_shape, xp, stride, p, out_sp):
    """Gradient of a conv w.r.t. its input.

    For stride 1 this is itself a cross-correlation of the output
    gradient with spatially flipped, channel-transposed kernels; for
    larger strides the slower per-offset scatter is used.
    """
    spatial = len(out_sp)
    ksp = kern.shape[2:]
    if stride == 1 and all(p <= k - 1 for k in ksp):
        flip = kern[(slice(None), slice(None)) + (slice(None, None, -1),) * spatial]
        pads = ((0, 0),) + tuple((k - 1 - p, k - 1 - p) for k in ksp)
        gwin = sliding_window_view(np.pad(g, pads), ksp, axis=tuple(range(1, spatial + 1)))
        return np.einsum(_CONV_XGRAD[spatial], gwin, flip, optimize=True)
    cout = kern.shape[0]
    cin = x_shape[0]
    gm = g.reshape(cout, -1)
    gxp = np.zeros_like(xp)
    for offset in np.ndindex(*ksp):
        ksel = kern[(slice(None), slice(None)) + offset]
        contrib = (ksel.T @ gm).reshape((cin,) + out_sp)
        window = tuple(
            slice(o, o + stride * n, stride) for o, n in zip(offset, out_sp)
        )
        gxp[(slice(None),) + window] += contrib
    trim = tuple(slice(p, p + n) for n in x_shape[1:])
    return gxp[(slice(None),) + trim]


def conv2d(x, kernels, bias, stride=1, padding=0):
    """2D cross-correlation of [C_in,H,W] with [C_out,C_in,kh,kw] kernels plus bias."""
    return _conv_nd(x, kernels, bias, stride, padding, spatial=2)


def conv3d(x, kernels, bias, stride=1, padding=0):
    """3D cross-correlation of [C_in,D,H,W] with [C_out,C_in,kd,kh,kw] kernels plus bias."""
    return _conv_nd(x, kernels, bias, stride, padding, spatial=3)


def avg_pool2d(x, window, stride):
    """Mean over square windows; the gradient spreads 1/window**2 to each source pixel."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"avg_pool2d input must be [C,H,W], got {x.shape}")
    if window > x.shape[1] or window > x.shape[2]:
        raise ShapeError(f"pool window {window} exceeds spatial extents {x.shape[1:]}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    win = sliding_window_view(x.data, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    res = win.mean(axis=(-2, -1))
    out = Tensor._from_array(res)
    if _should_record(x):
        c, ho, wo = res.shape
        inv = 1.0 / (window * window)
        def bwd(g):
            gx = np.zeros(x.shape)
            gs = g * inv
            for i in range(window):
                for j in range(window):
                    gx[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gs
            x._accumulate(gx)
        _record(out, (x,), bwd)
    return out


# ---------------------------------------------------------------------------
# linear interpolation resizing (align_corners = False)


def _linear_resize_matrix(n_in, n_out):
    """Row-stochastic [n_out, n_in] matrix of linear interpolation weights."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m


def _apply_axis_matrix(arr, mat, axis):
    moved = np.moveaxis(arr, axis, 0)
    flat = mat @ moved.reshape(moved.shape[0], -1)
    return np.moveaxis(flat.reshape((mat.shape[0],) + moved.shape[1:]), 0, axis)


def _resize_linear(x, out_spatial, spatial_axes):
    if all(x.shape[ax] == n for ax, n in zip(spatial_axes, out_spatial)):
        out = Tensor._from_array(x.data)
        if _should_record(x):
            def bwd(g):
                x._accumulate(g)
            _record(out, (x,), bwd)
        return out
    mats = [_linear_resize_matrix(x.shape[ax], n) for ax, n in zip(spatial_axes, out_spatial)]
    res = x.data
    for mat, ax in zip(mats, spatial_axes):
        res = _apply_axis_matrix(res, mat, ax)
    out = Tensor._from_array(res)
    if _should_record(x):
        def bwd(g):
            for mat, ax in zip(reversed(mats), reversed(spatial_axes)):
                g = _apply_axis_matrix(g, mat.T, ax)
            x._accumulate(g)
        _record(out, (x,), bwd)
    return out


def upsample_bilinear2d(x, out_h, out_w):
    """Resize [C,H,W] spatially by separable linear interpolation; identity when sizes match."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"upsample_bilinear2d input must be [C,H,W], got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError("target extents must be >= 1")
    return _resize_linear(x, (out_h, out_w), (1, 2))


def upsample_trilinear3d(x, out_d, out_h, out_w):
    """Resize [C,D,H,W] along depth and space by separable linear interpolation."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_trilinear3d input must be [C,D,H,W], got {x.shape}")
    if out_d < 1 or out_h < 1 or out_w < 1:
        raise ShapeError("target extents must be >= 1")
    return _resize_linear(x, (out_d, out_h, out_w), (1, 2, 3))


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(f, x, h=1e-5):
    """Max relative error between analytic and central-difference gradients of scalar f.

    Relative error per entry is |a - d| / max(1, |a|, |d|). Runs the forward
    pass twice first and raises DeterminismError if the results differ.
    """
    if not isinstance(x, Tensor) or not x.requires_grad:
        raise AutodiffError("grad_check needs a requires_grad tensor input")
    with no_grad():
        y1 = f(Tensor._from_array(x.data))
        y2 = f(Tensor._from_array(x.data))
    if not np.array_equal(y1.data, y2.data):
        raise DeterminismError("two forward evaluations disagreed")

    x.zero_grad()
    loss = f(x)
    backward(loss)
    analytic = np.zeros(x.shape) if x.grad is None else x.grad

    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.shape)
    with no_grad():
        for i in range(flat.size):
            up = flat.copy()
            up[i] += h
            dn = flat.copy()
            dn[i] -= h
            fu = f(Tensor._from_array(up.reshape(x.shape))).item()
            fd = f(Tensor._from_array(dn.reshape(x.shape))).item()
            numeric[i] = (fu - fd) / (2.0 * h)
    numeric = numeric.reshape(x.shape)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
