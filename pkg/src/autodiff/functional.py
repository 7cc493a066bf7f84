"""
Differentiable operations.

Every op is a ``Function`` subclass with an explicit backward rule and a thin
wrapper function that validates shapes before building the node. Binary ops
accept either two tensors of identical shape or a tensor and a python scalar.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.autodiff.tensor import DiffTensor, Function
from src.utils.errors import ShapeMismatchError

Scalar = Union[float, int]


def _check_same_shape(op: str, a: DiffTensor, b: DiffTensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: shape {a.shape} does not match {b.shape}")


def _check_4d(op: str, x: DiffTensor, what: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeMismatchError(f"{op}: {what} must be (batch, channels, height, width), got shape {x.shape}")


# ---------------------------------------------------------------------- #
#  Elementwise arithmetic
# ---------------------------------------------------------------------- #
class Add(Function):
    def forward(self, x, y):
        return x + y

    def backward(self, grad):
        return grad, grad


class AddScalar(Function):
    def forward(self, x, value: float = 0.0):
        return x + x.dtype.type(value)

    def backward(self, grad):
        return (grad,)


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return grad * self.y, grad * self.x


class MulScalar(Function):
    def forward(self, x, value: float = 1.0):
        self.value = x.dtype.type(value)
        return x * self.value

    def backward(self, grad):
        return (grad * self.value,)


def add(a: DiffTensor, b: Union[DiffTensor, Scalar]) -> DiffTensor:
    if isinstance(b, DiffTensor):
        _check_same_shape("add", a, b)
        return Add.apply(a, b)
    return AddScalar.apply(a, value=float(b))


def neg(a: DiffTensor) -> DiffTensor:
    return MulScalar.apply(a, value=-1.0)


def sub(a: DiffTensor, b: Union[DiffTensor, Scalar]) -> DiffTensor:
    if isinstance(b, DiffTensor):
        _check_same_shape("sub", a, b)
        return Add.apply(a, neg(b))
    return AddScalar.apply(a, value=-float(b))


def mul(a: DiffTensor, b: Union[DiffTensor, Scalar]) -> DiffTensor:
    """Hadamard product (or scaling by a python scalar)."""
    if isinstance(b, DiffTensor):
        _check_same_shape("mul", a, b)
        return Mul.apply(a, b)
    return MulScalar.apply(a, value=float(b))


def one_minus(a: DiffTensor) -> DiffTensor:
    return add(neg(a), 1.0)


# ---------------------------------------------------------------------- #
#  Unary nonlinearities
# ---------------------------------------------------------------------- #
class Sigmoid(Function):
    def forward(self, x):
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self.out = out
        return out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


class Relu(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, x.dtype.type(0))

    def backward(self, grad):
        return (grad * self.mask,)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Abs(Function):
    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad):
        return (grad * self.sign,)


class Square(Function):
    def forward(self, x):
        self.x = x
        return x * x

    def backward(self, grad):
        return (grad * 2.0 * self.x,)


class Clamp(Function):
    def forward(self, x, lo: float = 0.0, hi: float = 1.0):
        self.mask = (x >= lo) & (x <= hi)
        return np.clip(x, lo, hi).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.mask,)


def sigmoid(x: DiffTensor) -> DiffTensor:
    return Sigmoid.apply(x)


def tanh(x: DiffTensor) -> DiffTensor:
    return Tanh.apply(x)


def relu(x: DiffTensor) -> DiffTensor:
    return Relu.apply(x)


def exp(x: DiffTensor) -> DiffTensor:
    return Exp.apply(x)


def log(x: DiffTensor) -> DiffTensor:
    return Log.apply(x)


def absolute(x: DiffTensor) -> DiffTensor:
    return Abs.apply(x)


def square(x: DiffTensor) -> DiffTensor:
    return Square.apply(x)


def clamp(x: DiffTensor, lo: float, hi: float) -> DiffTensor:
    return Clamp.apply(x, lo=lo, hi=hi)


# ---------------------------------------------------------------------- #
#  Reductions
# ---------------------------------------------------------------------- #
class Sum(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.full(self.shape, grad, dtype=grad.dtype),)


class Mean(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.mean(), dtype=x.dtype)

    def backward(self, grad):
        return (np.full(self.shape, grad / np.prod(self.shape), dtype=grad.dtype),)


class SumChannels(Function):
    def forward(self, x):
        self.channels = x.shape[1]
        return x.sum(axis=1, keepdims=True)

    def backward(self, grad):
        return (np.repeat(grad, self.channels, axis=1),)


def sum_all(x: DiffTensor) -> DiffTensor:
    return Sum.apply(x)


def mean(x: DiffTensor) -> DiffTensor:
    return Mean.apply(x)


def sum_channels(x: DiffTensor) -> DiffTensor:
    _check_4d("sum_channels", x)
    return SumChannels.apply(x)


def mse(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    return mean(square(sub(a, b)))


# ---------------------------------------------------------------------- #
#  Channel plumbing
# ---------------------------------------------------------------------- #
class Concat(Function):
    def forward(self, *xs):
        self.splits = np.cumsum([x.shape[1] for x in xs])[:-1]
        return np.concatenate(xs, axis=1)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=1))


class SliceChannels(Function):
    def forward(self, x, start: int = 0, stop: int = 0):
        self.shape, self.start, self.stop = x.shape, start, stop
        return x[:, start:stop]

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=grad.dtype)
        full[:, self.start:self.stop] = grad
        return (full,)


class ExpandChannels(Function):
    def forward(self, x, channels: int = 1):
        return np.repeat(x, channels, axis=1)

    def backward(self, grad):
        return (grad.sum(axis=1, keepdims=True),)


def concat_channels(tensors: Sequence[DiffTensor]) -> DiffTensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatchError("concat_channels: nothing to concatenate")
    ref = tensors[0]
    for t in tensors:
        _check_4d("concat_channels", t)
        if t.shape[0] != ref.shape[0] or t.shape[2:] != ref.shape[2:]:
            raise ShapeMismatchError(
                f"concat_channels: shape {t.shape} is not compatible with {ref.shape} (batch/spatial dims differ)"
            )
    return Concat.apply(*tensors)


def slice_channels(x: DiffTensor, start: int, stop: int) -> DiffTensor:
    _check_4d("slice_channels", x)
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeMismatchError(f"slice_channels: [{start}:{stop}] out of range for {x.shape[1]} channels")
    return SliceChannels.apply(x, start=start, stop=stop)


def expand_channels(x: DiffTensor, channels: int) -> DiffTensor:
    """Replicate a single-channel map so it can gate a multi-channel tensor."""
    _check_4d("expand_channels", x)
    if x.shape[1] != 1:
        raise ShapeMismatchError(f"expand_channels: expected 1 channel, got {x.shape[1]}")
    if channels == 1:
        return x
    return ExpandChannels.apply(x, channels=channels)


# ---------------------------------------------------------------------- #
#  Convolution
# ---------------------------------------------------------------------- #
def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


class Conv2d(Function):
    def forward(self, x, w, b=None, stride: int = 1, padding: int = 0, dilation: int = 1):
        n, c, h, wd = x.shape
        o, _, k, _ = w.shape
        ho = conv_output_size(h, k, stride, padding, dilation)
        wo = conv_output_size(wd, k, stride, padding, dilation)
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                y0, x0 = i * dilation, j * dilation
                cols[:, :, i, j] = xp[:, :, y0:y0 + stride * (ho - 1) + 1:stride, x0:x0 + stride * (wo - 1) + 1:stride]
        out = np.tensordot(cols, w, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
        if b is not None:
            out = out + b[None, :, None, None]
        self.cols, self.w, self.has_bias = cols, w, b is not None
        self.xp_shape, self.x_shape = xp.shape, x.shape
        self.stride, self.padding, self.dilation = stride, padding, dilation
        return np.ascontiguousarray(out)

    def backward(self, grad):
        k = self.w.shape[2]
        s, p, d = self.stride, self.padding, self.dilation
        ho, wo = grad.shape[2:]
        gw = np.tensordot(grad, self.cols, axes=([0, 2, 3], [0, 4, 5]))
        dcols = np.tensordot(grad, self.w, axes=([1], [0]))  # (n, ho, wo, c, k, k)
        dxp = np.zeros(self.xp_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                y0, x0 = i * d, j * d
                dxp[:, :, y0:y0 + s * (ho - 1) + 1:s, x0:x0 + s * (wo - 1) + 1:s] += dcols[..., i, j].transpose(0, 3, 1, 2)
        h, wd = self.x_shape[2:]
        gx = dxp[:, :, p:p + h, p:p + wd] if p else dxp
        grads = [gx, gw]
        if self.has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)


def conv2d(
    x: DiffTensor,
    weight: DiffTensor,
    bias: Optional[DiffTensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> DiffTensor:
    """Cross-correlation of an NCHW input with an (out, in, k, k) kernel."""
    _check_4d("conv2d", x)
    _check_4d("conv2d", weight, "weight")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ShapeMismatchError(f"conv2d: invalid stride={stride}, padding={padding}, dilation={dilation}")
    o, c, kh, kw = weight.shape
    if kh != kw:
        raise ShapeMismatchError(f"conv2d: only square kernels are supported, got {kh}x{kw}")
    if x.shape[1] != c:
        raise ShapeMismatchError(
            f"conv2d: input has {x.shape[1]} channels (shape {x.shape}) but weight expects {c} (shape {weight.shape})"
        )
    if bias is not None and bias.shape != (o,):
        raise ShapeMismatchError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")
    ho = conv_output_size(x.shape[2], kh, stride, padding, dilation)
    wo = conv_output_size(x.shape[3], kh, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ShapeMismatchError(
            f"conv2d: input {x.shape[2]}x{x.shape[3]} too small for kernel {kh}, dilation {dilation}, padding {padding}"
        )
    if bias is None:
        return Conv2d.apply(x, weight, stride=stride, padding=padding, dilation=dilation)
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding, dilation=dilation)


# ---------------------------------------------------------------------- #
#  Resampling
# ---------------------------------------------------------------------- #
def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray):
    """
    Sample an (N, H, W, C) array at real coordinates with border clamping.

    Returns the samples (N, h, w, C) plus the interpolation state needed by
    the backward pass.
    """
    n, h, w, _ = image.shape
    dtype = image.dtype
    x_in = (x > 0) & (x < w - 1)
    y_in = (y > 0) & (y < h - 1)
    xc = np.clip(x, 0, w - 1).astype(dtype, copy=False)
    yc = np.clip(y, 0, h - 1).astype(dtype, copy=False)
    x0 = np.floor(xc).astype(np.int64)
    y0 = np.floor(yc).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (xc - x0)[..., None]
    wy = (yc - y0)[..., None]
    bi = np.arange(n).reshape((n,) + (1,) * (x.ndim - 1))
    ia, ib = image[bi, y0, x0], image[bi, y0, x1]
    ic, id_ = image[bi, y1, x0], image[bi, y1, x1]
    out = (1 - wx) * (1 - wy) * ia + wx * (1 - wy) * ib + (1 - wx) * wy * ic + wx * wy * id_
    state = dict(bi=bi, x0=x0, x1=x1, y0=y0, y1=y1, wx=wx, wy=wy,
                 ia=ia, ib=ib, ic=ic, id=id_, x_in=x_in, y_in=y_in)
    return out.astype(dtype, copy=False), state


class BilinearWarp(Function):
    def forward(self, image, flow):
        n, c, h, w = image.shape
        dtype = image.dtype
        gx = np.arange(w, dtype=dtype)[None, None, :]
        gy = np.arange(h, dtype=dtype)[None, :, None]
        x = gx + flow[:, 0].astype(dtype, copy=False)
        y = gy + flow[:, 1].astype(dtype, copy=False)
        img_t = image.transpose(0, 2, 3, 1)
        out, self.state = bilinear_sample(img_t, x, y)
        self.image_shape = img_t.shape
        self.flow_dtype = flow.dtype
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, grad):
        s = self.state
        g = grad.transpose(0, 2, 3, 1)
        wx, wy = s["wx"], s["wy"]
        gimg = np.zeros(self.image_shape, dtype=grad.dtype)
        bi = np.broadcast_to(s["bi"], s["x0"].shape)
        np.add.at(gimg, (bi, s["y0"], s["x0"]), g * (1 - wx) * (1 - wy))
        np.add.at(gimg, (bi, s["y0"], s["x1"]), g * wx * (1 - wy))
        np.add.at(gimg, (bi, s["y1"], s["x0"]), g * (1 - wx) * wy)
        np.add.at(gimg, (bi, s["y1"], s["x1"]), g * wx * wy)
        dx = (1 - wy) * (s["ib"] - s["ia"]) + wy * (s["id"] - s["ic"])
        dy = (1 - wx) * (s["ic"] - s["ia"]) + wx * (s["id"] - s["ib"])
        gfx = (g * dx).sum(axis=-1) * s["x_in"]
        gfy = (g * dy).sum(axis=-1) * s["y_in"]
        gflow = np.stack([gfx, gfy], axis=1).astype(self.flow_dtype, copy=False)
        return gimg.transpose(0, 3, 1, 2), gflow


def bilinear_warp(image: DiffTensor, flow: DiffTensor) -> DiffTensor:
    """
    output(p) = image(p + flow(p)), bilinear, border-clamped.

    ``flow`` is (N, 2, H, W) with channel 0 = dx and channel 1 = dy.
    """
    _check_4d("bilinear_warp", image)
    _check_4d("bilinear_warp", flow, "flow")
    if flow.shape[1] != 2:
        raise ShapeMismatchError(f"bilinear_warp: flow must have 2 channels, got {flow.shape}")
    if flow.shape[0] != image.shape[0] or flow.shape[2:] != image.shape[2:]:
        raise ShapeMismatchError(f"bilinear_warp: flow {flow.shape} does not match image {image.shape}")
    return BilinearWarp.apply(image, flow)


def resize_matrix(src: int, dst: int, dtype=np.float64) -> np.ndarray:
    """(dst, src) linear interpolation matrix with half-pixel alignment."""
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, src - 1)
    frac = pos - i0
    m = np.zeros((dst, src), dtype=dtype)
    rows = np.arange(dst)
    np.add.at(m, (rows, i0), 1 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


class ResizeBilinear(Function):
    def forward(self, x, size: Tuple[int, int] = (1, 1)):
        self.ry = resize_matrix(x.shape[2], size[0], x.dtype)
        self.rx = resize_matrix(x.shape[3], size[1], x.dtype)
        return self.ry @ x @ self.rx.T

    def backward(self, grad):
        return (self.ry.T @ grad @ self.rx,)


def resize_bilinear(x: DiffTensor, size: Tuple[int, int]) -> DiffTensor:
    _check_4d("resize_bilinear", x)
    return ResizeBilinear.apply(x, size=(int(size[0]), int(size[1])))


def upsample2(x: DiffTensor) -> DiffTensor:
    return resize_bilinear(x, (x.shape[2] * 2, x.shape[3] * 2))


def _edge_pad_matrix(n: int, dtype) -> np.ndarray:
    m = np.zeros((n + 2, n), dtype=dtype)
    m[np.arange(n + 2), np.clip(np.arange(n + 2) - 1, 0, n - 1)] = 1
    return m


class ConvexUpsample(Function):
    def forward(self, flow, logits, factor: int = 2):
        n, c, h, w = flow.shape
        f = factor
        self.py = _edge_pad_matrix(h, flow.dtype)
        self.px = _edge_pad_matrix(w, flow.dtype)
        padded = self.py @ flow @ self.px.T
        unfold = np.stack(
            [padded[:, :, i:i + h, j:j + w] for i in range(3) for j in range(3)], axis=2
        )  # (n, c, 9, h, w)
        lg = logits.reshape(n, 9, f, f, h, w)
        lg = lg - lg.max(axis=1, keepdims=True)
        e = np.exp(lg)
        weights = e / e.sum(axis=1, keepdims=True)
        # out[n,c,a,b,y,x] = sum_k W[n,k,a,b,y,x] * f * U[n,c,k,y,x]
        out = np.einsum("nkabyx,nckyx->ncabyx", weights, unfold) * f
        self.weights, self.unfold, self.factor = weights, unfold, f
        self.shape = (n, c, h, w)
        return np.ascontiguousarray(out.transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * f, w * f))

    def backward(self, grad):
        n, c, h, w = self.shape
        f = self.factor
        g = grad.reshape(n, c, h, f, w, f).transpose(0, 1, 3, 5, 2, 4)  # (n,c,a,b,y,x)
        dweights = np.einsum("ncabyx,nckyx->nkabyx", g, self.unfold) * f
        dunfold = np.einsum("ncabyx,nkabyx->nckyx", g, self.weights) * f
        dlg = self.weights * (dweights - (self.weights * dweights).sum(axis=1, keepdims=True))
        dpadded = np.zeros((n, c, h + 2, w + 2), dtype=grad.dtype)
        for idx, (i, j) in enumerate((i, j) for i in range(3) for j in range(3)):
            dpadded[:, :, i:i + h, j:j + w] += dunfold[:, :, idx]
        dflow = self.py.T @ dpadded @ self.px
        return dflow, dlg.reshape(n, 9 * f * f, h, w)


def convex_upsample(flow: DiffTensor, logits: DiffTensor, factor: int = 2) -> DiffTensor:
    """
    Upsample a coarse flow as a softmax-weighted combination of each coarse
    pixel's 3x3 neighbourhood (edge replicated), scaling magnitudes by ``factor``.
    """
    _check_4d("convex_upsample", flow, "flow")
    _check_4d("convex_upsample", logits, "weight logits")
    n, _, h, w = flow.shape
    if logits.shape != (n, 9 * factor * factor, h, w):
        raise ShapeMismatchError(
            f"convex_upsample: logits {logits.shape} must be ({n}, {9 * factor * factor}, {h}, {w})"
        )
    return ConvexUpsample.apply(flow, logits, factor=factor)

