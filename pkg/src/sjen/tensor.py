"""Dense float64 tensors with reverse-mode automatic differentiation.

Small by design: every operation the networks need, nothing more. Graphs are
built eagerly; ``backward`` on a scalar populates ``grad`` on every node that
requires gradients and accumulates across calls (two backward passes double
the leaf gradients). Operations on inputs that do not require gradients skip
graph recording entirely, so frozen-model forwards carry no autodiff cost.

A process-wide multiply-accumulate counter can be armed with ``mac_counting``;
it records the (m, k, n) product of every matrix multiply actually executed,
including the ones inside the fused convolution kernels. This is the runtime
side of the FLOPs cross-check; the analytic side lives with the layers.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import NumericError, ShapeError

_mac_accumulator: list[int] | None = None


class mac_counting:
    """Context manager counting MACs of every matmul executed inside it."""

    def __enter__(self):
        global _mac_accumulator
        self._saved = _mac_accumulator
        _mac_accumulator = [0]
        return self

    def __exit__(self, *exc):
        global _mac_accumulator
        self.total = _mac_accumulator[0]
        _mac_accumulator = self._saved
        return False


def _record_macs(m: int, k: int, n: int) -> None:
    if _mac_accumulator is not None:
        _mac_accumulator[0] += int(m) * int(k) * int(n)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ------------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.shape}")
        order = _toposort(self)
        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in flowing:
                    flowing[key] = flowing[key] + pg
                else:
                    flowing[key] = pg

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order, iterative to cope with long LSTM chains."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data**2), b.shape),
        ),
    )


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    out = a.data**exponent
    return _make(
        out,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1.0),),
    )


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient routes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    return _make(
        np.where(take_a, a.data, b.data),
        (a, b),
        lambda g: (
            _unbroadcast(g * take_a, a.shape),
            _unbroadcast(g * ~take_a, b.shape),
        ),
    )


# -- transcendental / activations ----------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out**2),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    return _make(out, (a,), lambda g: (g * expit(a.data),))


def elu(a) -> Tensor:
    """x for x > 0, exp(x) - 1 otherwise."""
    a = as_tensor(a)
    neg = np.expm1(np.minimum(a.data, 0.0))
    positive = a.data > 0.0
    out = np.where(positive, a.data, neg)
    return _make(out, (a,), lambda g: (g * np.where(positive, 1.0, neg + 1.0),))


def absval(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


# -- reductions ------------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).copy(),)

    return _make(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- shape manipulation -----------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = tuple(np.argsort(axes))
    return _make(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (g.transpose(inverse),),
    )


def getitem(a, key) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros(a.shape)
        np.add.at(full, key, g)
        return (full,)

    return _make(a.data[key].copy(), (a,), vjp)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


# -- linear algebra ----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-D operands, got {a.data.ndim}-D @ {b.data.ndim}-D"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner axes disagree: ({a.shape[0]}x{a.shape[1]}) @ "
            f"({b.shape[0]}x{b.shape[1]})"
        )
    _record_macs(a.shape[0], a.shape[1], b.shape[1])

    def vjp(g):
        return (g @ b.data.T, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), vjp)


# -- fused convolution kernels -------------------------------------------------------


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def _conv_geometry(n_in: int, kernel: int, stride: int, pad: int) -> int:
    return (n_in + 2 * pad - kernel) // stride + 1


def conv2d(x, w, b, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Cross-correlation of (B, C_in, H, W) with weights (C_out, C_in, Kh, Kw)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be (B, C, H, W), got {x.shape}")
    co, ci_w, kh, kw = w.shape
    bsz, ci, h, wid = x.shape
    if ci != ci_w:
        raise ShapeError(
            f"conv2d channel axis mismatch: input has {ci} channels, weight expects {ci_w}"
        )
    if b.shape != (co,):
        raise ShapeError(f"conv2d bias must be ({co},), got {b.shape}")
    (sh, sw), (ph, pw) = _pair(stride), _pair(padding)
    ho = _conv_geometry(h, kh, sh, ph)
    wo = _conv_geometry(wid, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d kernel ({kh}x{kw}) does not fit padded input "
            f"({h + 2 * ph}x{wid + 2 * pw}) at stride ({sh},{sw})"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        bsz * ho * wo, ci * kh * kw
    )
    wmat = w.data.reshape(co, ci * kh * kw).T
    _record_macs(bsz * ho * wo, ci * kh * kw, co)
    out = (cols @ wmat).reshape(bsz, ho, wo, co).transpose(0, 3, 1, 2) + b.data.reshape(
        1, co, 1, 1
    )

    def vjp(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * ho * wo, co)
        gw = (cols.T @ gmat).T.reshape(co, ci, kh, kw)
        gb = g.sum(axis=(0, 2, 3))
        gcols = (gmat @ wmat.T).reshape(bsz, ho, wo, ci, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros_like(xp)
        for ikh in range(kh):
            for ikw in range(kw):
                gxp[:, :, ikh : ikh + sh * ho : sh, ikw : ikw + sw * wo : sw] += gcols[
                    :, :, :, :, ikh, ikw
                ]
        gx = gxp[:, :, ph : ph + h, pw : pw + wid]
        return (gx, gw, gb)

    return _make(out, (x, w, b), vjp)


def deconv2d(x, w, b, stride=(1, 1), padding=(0, 0), output_padding=(0, 0)) -> Tensor:
    """Transposed convolution; weights (C_in, C_out, Kh, Kw), adjoint of conv2d."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 4:
        raise ShapeError(f"deconv2d input must be (B, C, H, W), got {x.shape}")
    ci_w, co, kh, kw = w.shape
    bsz, ci, h, wid = x.shape
    if ci != ci_w:
        raise ShapeError(
            f"deconv2d channel axis mismatch: input has {ci} channels, weight expects {ci_w}"
        )
    if b.shape != (co,):
        raise ShapeError(f"deconv2d bias must be ({co},), got {b.shape}")
    (sh, sw), (ph, pw) = _pair(stride), _pair(padding)
    oph, opw = _pair(output_padding)
    if oph >= sh or opw >= sw:
        raise ShapeError("output_padding must be smaller than stride")
    hf = (h - 1) * sh + kh + oph
    wf = (wid - 1) * sw + kw + opw
    ho, wo = hf - 2 * ph, wf - 2 * pw
    if ho < 1 or wo < 1:
        raise ShapeError(f"deconv2d output would be empty ({ho}x{wo})")
    xmat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(bsz * h * wid, ci)
    wmat = w.data.reshape(ci, co * kh * kw)
    _record_macs(bsz * h * wid, ci, co * kh * kw)
    cols = (xmat @ wmat).reshape(bsz, h, wid, co, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    grid = np.zeros((bsz, co, hf, wf))
    for ikh in range(kh):
        for ikw in range(kw):
            grid[:, :, ikh : ikh + sh * h : sh, ikw : ikw + sw * wid : sw] += cols[
                :, :, :, :, ikh, ikw
            ]
    out = grid[:, :, ph : ph + ho, pw : pw + wo] + b.data.reshape(1, co, 1, 1)

    def vjp(g):
        ggrid = np.zeros((bsz, co, hf, wf))
        ggrid[:, :, ph : ph + ho, pw : pw + wo] = g
        gcols = np.empty((bsz, co, h, wid, kh, kw))
        for ikh in range(kh):
            for ikw in range(kw):
                gcols[:, :, :, :, ikh, ikw] = ggrid[
                    :, :, ikh : ikh + sh * h : sh, ikw : ikw + sw * wid : sw
                ]
        gmat = np.ascontiguousarray(gcols.transpose(0, 2, 3, 1, 4, 5)).reshape(
            bsz * h * wid, co * kh * kw
        )
        gx = (gmat @ wmat.T).reshape(bsz, h, wid, ci).transpose(0, 3, 1, 2)
        gw = (xmat.T @ gmat).reshape(ci, co, kh, kw)
        gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)

    return _make(out, (x, w, b), vjp)


def check_finite(t: Tensor, what: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"{what} contains non-finite values")
    return t
