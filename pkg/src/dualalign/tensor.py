"""Dense 4-D tensors with tape-based reverse-mode differentiation.

The operator set is fixed to what the pipeline needs: broadcasting
elementwise arithmetic, sqrt, spatial/full reductions, reshape, 3x3
convolution (stride 1 or 2, zero padding 1), relu, nearest 2x upsampling,
and softmax cross-entropy. Feature maps are (batch, channel, height,
width); losses are scalar tensors; reduction statistics keep dims so they
broadcast back over the map they came from.

Gradients are recorded on an explicit :class:`Tape`. Backward replays the
recorded closures in exact reverse order of forward execution, which makes
gradient computation bit-reproducible for a fixed forward sequence.
Training runs in float32; float64 inputs stay float64 so finite-difference
checks can run the same code in double precision.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError

_FLOAT_DTYPES = (np.float32, np.float64)

_TAPES: list["Tape"] = []


class Tensor:
    """A dense array with an optional gradient buffer.

    ``data`` is float32 unless explicitly created as float64. ``grad`` is
    allocated lazily during backward and always matches ``data``'s shape.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view of the same values that no gradient flows into."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class Tape:
    """Ordered record of the forward pass; replayed in reverse for backward."""

    def __init__(self):
        self._records: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        assert popped is self, "tapes must unwind in LIFO order"
        return False

    def record(self, backward_fn: Callable[[], None]) -> None:
        self._records.append(backward_fn)

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Seed the loss gradient with 1 and replay all records reversed."""
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._records):
            fn()


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    """Add ``g`` into ``t.grad``, allocating the buffer on first use."""
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make_output(data: np.ndarray, *inputs: Tensor) -> tuple[Tensor, bool]:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    return out, (tape is not None and out.requires_grad)


def _record(fn: Callable[[], None]) -> None:
    _TAPES[-1].record(fn)


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules apply)
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out, taped = _make_output(a.data + b.data, a, b)
    if taped:
        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                accumulate_grad(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                accumulate_grad(b, _unbroadcast(g, b.data.shape))
        _record(backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out, taped = _make_output(a.data - b.data, a, b)
    if taped:
        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                accumulate_grad(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                accumulate_grad(b, _unbroadcast(-g, b.data.shape))
        _record(backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out, taped = _make_output(a.data * b.data, a, b)
    if taped:
        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                accumulate_grad(a, _unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                accumulate_grad(b, _unbroadcast(g * a.data, b.data.shape))
        _record(backward)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out, taped = _make_output(a.data / b.data, a, b)
    if taped:
        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                accumulate_grad(a, _unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                accumulate_grad(b, _unbroadcast(-g * out.data / b.data, b.data.shape))
        _record(backward)
    return out


def sqrt(a: Tensor) -> Tensor:
    out, taped = _make_output(np.sqrt(a.data), a)
    if taped:
        def backward():
            g = out.grad
            if g is None:
                return
            accumulate_grad(a, g / (2.0 * out.data))
        _record(backward)
    return out


# ---------------------------------------------------------------------------
# reductions and reshape
# ---------------------------------------------------------------------------

def spatial_mean(a: Tensor) -> Tensor:
    """Mean over the two spatial axes, keeping dims: (n,c,h,w) -> (n,c,1,1)."""
    if a.data.ndim != 4:
        raise ValueError(f"spatial_mean expects a 4-D tensor, got shape {a.data.shape}")
    count = a.data.shape[2] * a.data.shape[3]
    out, taped = _make_output(a.data.mean(axis=(2, 3), keepdims=True), a)
    if taped:
        def backward():
            g = out.grad
            if g is None:
                return
            accumulate_grad(a, np.broadcast_to(g / count, a.data.shape))
        _record(backward)
    return out


def mean_all(a: Tensor) -> Tensor:
    """Mean over every element; returns a scalar tensor."""
    count = a.data.size
    out, taped = _make_output(a.data.mean(), a)
    if taped:
        def backward():
            g = out.grad
            if g is None:
                return
            accumulate_grad(a, np.broadcast_to(g / count, a.data.shape))
        _record(backward)
    return out


def sum_all(a: Tensor) -> Tensor:
    """Sum over every element; returns a scalar tensor."""
    out, taped = _make_output(a.data.sum(), a)
    if taped:
        def backward():
            g = out.grad
            if g is None:
                return
            accumulate_grad(a, np.broadcast_to(g, a.data.shape))
        _record(backward)
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out, taped = _make_output(a.data.reshape(shape), a)
    if taped:
        def backward():
            g = out.grad
            if g is None:
                return
            accumulate_grad(a, g.reshape(a.data.shape))
        _record(backward)
    return out


# ---------------------------------------------------------------------------
# network operators
# ---------------------------------------------------------------------------

class ConvLayer:
    """A 3x3 convolution layer: kernel (out_c, in_c, 3, 3), per-channel bias.

    Padding is fixed at 1; stride is 1 or 2. The op is a correlation (no
    kernel flip). Bias is stored (1, out_c, 1, 1) so it broadcasts over the
    output map and serializes as a 4-D tensor like every other parameter.
    """

    KSIZE = 3
    PADDING = 1

    def __init__(self, kernel: Tensor, bias: Tensor, stride: int = 1):
        if kernel.data.ndim != 4 or kernel.data.shape[2:] != (self.KSIZE, self.KSIZE):
            raise ValueError(f"kernel must be (out_c, in_c, 3, 3), got {kernel.data.shape}")
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        out_c = kernel.data.shape[0]
        if bias.data.shape != (1, out_c, 1, 1):
            raise ValueError(f"bias must be (1, {out_c}, 1, 1), got {bias.data.shape}")
        self.kernel = kernel
        self.bias = bias
        self.stride = stride

    @property
    def in_channels(self) -> int:
        return self.kernel.data.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.data.shape[0]

    @classmethod
    def initialize(cls, rng: np.random.Generator, in_c: int, out_c: int,
                   stride: int = 1, trainable: bool = True,
                   dtype=np.float32) -> "ConvLayer":
        """Uniform(-s, s) kernel with s = sqrt(6 / (fan_in + fan_out)), zero bias.

        Fans count the receptive field: fan_in = in_c*9, fan_out = out_c*9.
        """
        fan_in = in_c * cls.KSIZE * cls.KSIZE
        fan_out = out_c * cls.KSIZE * cls.KSIZE
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        kernel = rng.uniform(-limit, limit, size=(out_c, in_c, cls.KSIZE, cls.KSIZE))
        k = Tensor(kernel.astype(dtype), requires_grad=trainable)
        b = Tensor(np.zeros((1, out_c, 1, 1), dtype=dtype), requires_grad=trainable)
        return cls(k, b, stride=stride)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self)

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        s, k, p = self.stride, self.KSIZE, self.PADDING
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


def conv2d(x: Tensor, layer: ConvLayer) -> Tensor:
    """3x3 correlation with zero padding 1 and stride from the layer.

    Differentiable w.r.t. the input, the kernel, and the bias. Forward and
    both backward contractions decompose over the nine kernel offsets, each
    a single GEMM against a shifted view of the padded input; that avoids
    materializing im2col patches and is the fastest layout here for the
    narrow channel counts this pipeline uses.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects a 4-D input, got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    if h < 1 or w < 1:
        raise ValueError(f"conv2d needs h,w >= 1, got input shape {x.data.shape}")
    kernel, bias, stride = layer.kernel, layer.bias, layer.stride
    oc, ic, kh, kw = kernel.data.shape
    if ic != c:
        raise ValueError(
            f"channel mismatch: input shape {x.data.shape} has {c} channels, "
            f"kernel shape {kernel.data.shape} expects {ic}")
    pad = layer.PADDING
    oh, ow = layer.out_size(h, w)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))

    def shifted(ki, kj):
        return xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]

    acc = np.zeros((oc, n, oh, ow), dtype=x.data.dtype)
    for ki in range(kh):
        for kj in range(kw):
            acc += np.tensordot(kernel.data[:, :, ki, kj], shifted(ki, kj), axes=([1], [1]))
    out_data = np.ascontiguousarray(acc.transpose(1, 0, 2, 3))
    out_data += bias.data

    out, taped = _make_output(out_data, x, kernel, bias)
    if taped:
        def backward():
            g = out.grad
            if g is None:
                return
            if bias.requires_grad:
                accumulate_grad(bias, g.sum(axis=(0, 2, 3)).reshape(1, oc, 1, 1))
            if kernel.requires_grad:
                gk = np.empty_like(kernel.data)
                for ki in range(kh):
                    for kj in range(kw):
                        gk[:, :, ki, kj] = np.tensordot(
                            g, shifted(ki, kj), axes=([0, 2, 3], [0, 2, 3]))
                accumulate_grad(kernel, gk)
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for ki in range(kh):
                    for kj in range(kw):
                        gi = np.tensordot(kernel.data[:, :, ki, kj], g, axes=([0], [1]))
                        gxp[:, :, ki:ki + stride * oh:stride,
                            kj:kj + stride * ow:stride] += gi.transpose(1, 0, 2, 3)
                accumulate_grad(x, gxp[:, :, pad:pad + h, pad:pad + w])
        _record(backward)
    return out


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0). The subgradient at exactly 0 is 0."""
    out, taped = _make_output(np.maximum(x.data, 0), x)
    if taped:
        mask = x.data > 0
        def backward():
            g = out.grad
            if g is None:
                return
            accumulate_grad(x, g * mask)
        _record(backward)
    return out


def upsample_nearest2(x: Tensor) -> Tensor:
    """Replicate each pixel into a 2x2 block; backward sums each block."""
    if x.data.ndim != 4:
        raise ValueError(f"upsample expects a 4-D input, got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    out_data = x.data.repeat(2, axis=2).repeat(2, axis=3)
    out, taped = _make_output(out_data, x)
    if taped:
        def backward():
            g = out.grad
            if g is None:
                return
            accumulate_grad(x, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))
        _record(backward)
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-pixel softmax cross-entropy, averaged over all n*h*w pixels.

    ``labels`` is an integer map (n, h, w) with values in [0, C). The
    softmax is max-subtracted for stability. The gradient is
    (softmax - one_hot) / (n*h*w).
    """
    if logits.data.ndim != 4:
        raise ValueError(f"logits must be 4-D (n,C,h,w), got shape {logits.data.shape}")
    labels = np.asarray(labels)
    n, num_classes, h, w = logits.data.shape
    if labels.shape != (n, h, w):
        raise ValueError(
            f"label map shape {labels.shape} does not match logits shape {logits.data.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    bad = (labels < 0) | (labels >= num_classes)
    if bad.any():
        idx = tuple(int(v) for v in np.argwhere(bad)[0])
        raise ValueError(
            f"label {int(labels[idx])} at pixel {idx} is outside [0, {num_classes})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    log_p = z - np.log(denom)
    picked = np.take_along_axis(log_p, labels[:, None, :, :], axis=1)[:, 0]
    npix = n * h * w
    loss_val = -picked.sum(dtype=logits.data.dtype) / npix

    out, taped = _make_output(np.asarray(loss_val, dtype=logits.data.dtype), logits)
    if taped:
        def backward():
            g = out.grad
            if g is None:
                return
            grad = ez / denom
            np.put_along_axis(
                grad, labels[:, None, :, :],
                np.take_along_axis(grad, labels[:, None, :, :], axis=1) - 1.0, axis=1)
            accumulate_grad(logits, grad * (g / npix))
        _record(backward)
    return out


def check_finite(t: Tensor, what: str) -> Tensor:
    """Raise NumericalError if the tensor holds NaN or Inf."""
    if not np.isfinite(t.data).all():
        raise NumericalError(f"non-finite values in {what}")
    return t
