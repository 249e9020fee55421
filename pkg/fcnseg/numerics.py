from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ConfigurationError, DegenerateBatchError, ShapeError

# Tensor4 is a plain ndarray laid out (batch, channels, height, width).
Tensor4 = np.ndarray
Mode = Literal["train", "infer"]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class LayerParams:
    """Trainable parameters of one layer plus gradient buffers of the same shapes.

    Convolution weights are laid out (out, in, kh, kw); transposed convolution
    weights are (in, out, kh, kw) so one array can serve as a kernel for both.
    For batch norm ``weight`` holds gamma and ``bias`` holds the shift.
    """

    kind: Literal["conv", "deconv", "bn"]
    weight: np.ndarray
    bias: np.ndarray
    grad_weight: np.ndarray = field(init=False)
    grad_bias: np.ndarray = field(init=False)
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @classmethod
    def conv(cls, out_channels: int, in_channels: int, kernel: tuple[int, int], dtype=np.float64) -> LayerParams:
        kh, kw = kernel
        return cls(
            "conv",
            np.zeros((out_channels, in_channels, kh, kw), dtype=dtype),
            np.zeros(out_channels, dtype=dtype),
        )

    @classmethod
    def deconv(cls, in_channels: int, out_channels: int, kernel: tuple[int, int], dtype=np.float64) -> LayerParams:
        kh, kw = kernel
        return cls(
            "deconv",
            np.zeros((in_channels, out_channels, kh, kw), dtype=dtype),
            np.zeros(out_channels, dtype=dtype),
        )

    @classmethod
    def batchnorm(cls, channels: int, dtype=np.float64) -> LayerParams:
        return cls(
            "bn",
            np.ones(channels, dtype=dtype),
            np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    @property
    def gamma(self) -> np.ndarray:
        return self.weight

    @property
    def beta_shift(self) -> np.ndarray:
        return self.bias

    def trainable(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        yield "weight", self.weight, self.grad_weight
        yield "bias", self.bias, self.grad_bias

    def zero_grad(self) -> None:
        self.grad_weight.fill(0)
        self.grad_bias.fill(0)


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float
    velocity: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[LayerParams], learning_rate: float, momentum: float) -> OptimizerState:
        if learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be positive, got {learning_rate}")
        if not 0 <= momentum < 1:
            raise ConfigurationError(f"momentum must be in [0, 1), got {momentum}")
        velocity = [np.zeros_like(value) for p in params for _, value, _ in p.trainable()]
        return cls(learning_rate=learning_rate, momentum=momentum, velocity=velocity)


# ---------------------------------------------------------------------------
# Shape helpers
# ---------------------------------------------------------------------------


def _check_rank(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be a 4-d (B, C, H, W) tensor, got shape {x.shape}")


def _pad_hw(x: np.ndarray, pad: tuple[int, int]) -> np.ndarray:
    ph, pw = pad
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _windows(xp: np.ndarray, kernel: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
    """View of every kernel window: (B, C, Ho, Wo, kh, kw)."""
    sh, sw = stride
    return sliding_window_view(xp, kernel, axis=(2, 3))[:, :, ::sh, ::sw]


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def deconv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + kernel


def _check_stride(stride: tuple[int, int]) -> None:
    if stride[0] < 1 or stride[1] < 1:
        raise ShapeError(f"stride components must be >= 1, got {stride}")


# ---------------------------------------------------------------------------
# Convolution and transposed convolution
# ---------------------------------------------------------------------------


def conv2d_forward(
    x: Tensor4,
    p: LayerParams,
    stride: tuple[int, int] = (1, 1),
    pad: tuple[int, int] = (0, 0),
) -> Tensor4:
    """Cross-correlation (no kernel flip) plus per-channel bias."""
    _check_rank(x)
    _check_stride(stride)
    out_c, in_c, kh, kw = p.weight.shape
    if x.shape[1] != in_c:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {in_c}")
    ho = conv_output_size(x.shape[2], kh, stride[0], pad[0])
    wo = conv_output_size(x.shape[3], kw, stride[1], pad[1])
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {(kh, kw)} does not fit padded input {x.shape[2:]} with pad {pad}")
    win = _windows(_pad_hw(x, pad), (kh, kw), stride)[:, :, :ho, :wo]
    out = np.tensordot(win, p.weight, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2)
    out += p.bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(
    x: Tensor4,
    p: LayerParams,
    grad_out: Tensor4,
    stride: tuple[int, int] = (1, 1),
    pad: tuple[int, int] = (0, 0),
) -> Tensor4:
    """Returns grad wrt x; weight and bias grads are accumulated into ``p``."""
    _check_rank(x)
    _check_rank(grad_out, "grad_out")
    out_c, in_c, kh, kw = p.weight.shape
    if x.shape[1] != in_c:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {in_c}")
    sh, sw = stride
    ph, pw = pad
    ho = conv_output_size(x.shape[2], kh, sh, ph)
    wo = conv_output_size(x.shape[3], kw, sw, pw)
    expected = (x.shape[0], out_c, ho, wo)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")

    xp = _pad_hw(x, pad)
    win = _windows(xp, (kh, kw), stride)[:, :, :ho, :wo]
    p.grad_weight += np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))
    p.grad_bias += grad_out.sum(axis=(0, 2, 3))

    grad_xp = np.zeros(xp.shape, dtype=np.result_type(grad_out, p.weight))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(grad_out, p.weight[:, :, i, j], axes=([1], [0]))
            grad_xp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += contrib.transpose(
                0, 3, 1, 2
            )
    return grad_xp[:, :, ph : ph + x.shape[2], pw : pw + x.shape[3]]


def deconv2d_forward(
    x: Tensor4,
    p: LayerParams,
    stride: tuple[int, int] = (1, 1),
    pad: tuple[int, int] = (0, 0),
) -> Tensor4:
    """Transposed convolution: scatter-add of every input pixel times the kernel."""
    _check_rank(x)
    _check_stride(stride)
    in_c, out_c, kh, kw = p.weight.shape
    if x.shape[1] != in_c:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {in_c}")
    b, _, h, w = x.shape
    sh, sw = stride
    ph, pw = pad
    ho = deconv_output_size(h, kh, sh, ph)
    wo = deconv_output_size(w, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise ShapeError(f"transposed convolution output would be {(ho, wo)}")

    # (B, H, W, out, kh, kw)
    cols = np.tensordot(x, p.weight, axes=([1], [0]))
    full = np.zeros((b, out_c, ho + 2 * ph, wo + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i : i + sh * (h - 1) + 1 : sh, j : j + sw * (w - 1) + 1 : sw] += cols[..., i, j].transpose(
                0, 3, 1, 2
            )
    out = full[:, :, ph : ph + ho, pw : pw + wo] + p.bias[None, :, None, None]
    return np.ascontiguousarray(out)


def deconv2d_backward(
    x: Tensor4,
    p: LayerParams,
    grad_out: Tensor4,
    stride: tuple[int, int] = (1, 1),
    pad: tuple[int, int] = (0, 0),
) -> Tensor4:
    _check_rank(x)
    _check_rank(grad_out, "grad_out")
    in_c, out_c, kh, kw = p.weight.shape
    if x.shape[1] != in_c:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {in_c}")
    b, _, h, w = x.shape
    expected = (
        b,
        out_c,
        deconv_output_size(h, kh, stride[0], pad[0]),
        deconv_output_size(w, kw, stride[1], pad[1]),
    )
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")

    # The gradient of a scatter-add is a gather: a strided correlation of the
    # padded upstream gradient with the same kernel.
    win = _windows(_pad_hw(grad_out, pad), (kh, kw), stride)[:, :, :h, :w]
    p.grad_weight += np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 3]))
    p.grad_bias += grad_out.sum(axis=(0, 2, 3))
    grad_x = np.tensordot(win, p.weight, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(grad_x.transpose(0, 3, 1, 2))


# ---------------------------------------------------------------------------
# Max pooling
# ---------------------------------------------------------------------------


@dataclass
class PoolArgmax:
    """Window-local flat index of each maximum, plus what is needed to scatter back."""

    indices: np.ndarray  # (B, C, Ho, Wo)
    window: tuple[int, int]
    input_shape: tuple[int, int, int, int]


def maxpool_forward(x: Tensor4, window: tuple[int, int]) -> tuple[Tensor4, PoolArgmax]:
    _check_rank(x)
    b, c, h, w = x.shape
    kh, kw = window
    if kh < 1 or kw < 1 or h % kh or w % kw:
        raise ShapeError(f"input {(h, w)} is not divisible by pool window {window}")
    blocks = x.reshape(b, c, h // kh, kh, w // kw, kw).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(b, c, h // kh, w // kw, kh * kw)
    # argmax returns the first occurrence, i.e. the smallest flat index on ties
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, PoolArgmax(idx, (kh, kw), (b, c, h, w))


def maxpool_backward(argmax: PoolArgmax, grad_out: Tensor4) -> Tensor4:
    b, c, h, w = argmax.input_shape
    kh, kw = argmax.window
    if grad_out.shape != argmax.indices.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != pooled shape {argmax.indices.shape}")
    blocks = np.zeros((b, c, h // kh, w // kw, kh * kw), dtype=grad_out.dtype)
    np.put_along_axis(blocks, argmax.indices[..., None], grad_out[..., None], axis=-1)
    blocks = blocks.reshape(b, c, h // kh, w // kw, kh, kw).transpose(0, 1, 2, 4, 3, 5)
    return blocks.reshape(b, c, h, w)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


def _batch_stats(x: Tensor4) -> tuple[np.ndarray, np.ndarray, int]:
    n = x.shape[0] * x.shape[2] * x.shape[3]
    if n < 2:
        raise DegenerateBatchError(f"batch norm needs >= 2 elements per channel in train mode, got {n}")
    return x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3)), n


def batchnorm_forward(
    x: Tensor4,
    p: LayerParams,
    mode: Mode = "train",
    eps: float = BN_EPS,
    momentum_bn: float = BN_MOMENTUM,
) -> Tensor4:
    _check_rank(x)
    if x.shape[1] != p.gamma.shape[0]:
        raise ShapeError(f"input has {x.shape[1]} channels, batch norm has {p.gamma.shape[0]}")
    if mode == "train":
        mean, var, n = _batch_stats(x)
        p.running_mean *= 1 - momentum_bn
        p.running_mean += momentum_bn * mean
        # running variance tracks the unbiased estimate
        p.running_var *= 1 - momentum_bn
        p.running_var += momentum_bn * var * (n / (n - 1))
    else:
        mean, var = p.running_mean, p.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    return p.gamma[None, :, None, None] * x_hat + p.beta_shift[None, :, None, None]


def batchnorm_backward(x: Tensor4, p: LayerParams, grad_out: Tensor4, eps: float = BN_EPS) -> Tensor4:
    """Gradient of the train-mode forward; batch statistics are recomputed from x."""
    _check_rank(x)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    mean, var, n = _batch_stats(x)
    inv_std = (1.0 / np.sqrt(var + eps))[None, :, None, None]
    x_hat = (x - mean[None, :, None, None]) * inv_std
    p.grad_weight += (grad_out * x_hat).sum(axis=(0, 2, 3))
    p.grad_bias += grad_out.sum(axis=(0, 2, 3))
    d_hat = grad_out * p.gamma[None, :, None, None]
    sum_d = d_hat.sum(axis=(0, 2, 3), keepdims=True)
    sum_dx = (d_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
    return inv_std / n * (n * d_hat - sum_d - x_hat * sum_dx)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def sigmoid_forward(x: np.ndarray) -> np.ndarray:
    """Logistic function, kept strictly inside (0, 1) at the dtype's resolution."""
    tiny = np.finfo(x.dtype).epsneg if np.issubdtype(x.dtype, np.floating) else np.finfo(np.float64).epsneg
    return np.clip(expit(x), tiny, 1 - tiny)


def sigmoid_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """``y`` is the forward output."""
    return grad_out * y * (1 - y)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


def sgd_momentum_step(params: list[LayerParams], opt: OptimizerState) -> None:
    """Classic momentum: v <- momentum*v - lr*g; w <- w + v; then zero the grads."""
    slots = [(value, grad) for p in params for _, value, grad in p.trainable()]
    if len(slots) != len(opt.velocity):
        raise ShapeError(f"optimizer tracks {len(opt.velocity)} buffers, model has {len(slots)}")
    for (value, grad), v in zip(slots, opt.velocity):
        v *= opt.momentum
        v -= opt.learning_rate * grad
        value += v
    for p in params:
        p.zero_grad()
