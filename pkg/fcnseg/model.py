from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pydantic

from .errors import ConfigurationError, FormatError, ShapeError, StateError
from .numerics import (
    LayerParams,
    Mode,
    PoolArgmax,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    deconv2d_backward,
    deconv2d_forward,
    deconv_output_size,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
)

log = logging.getLogger(__name__)

MAGIC = b"FCNSEG01"
FORMAT_VERSION = 1

_KIND_TAGS = {"conv": 1, "bn": 2, "deconv": 3}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


class DownBlock(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    out_channels: pydantic.PositiveInt
    conv_kernel: tuple[pydantic.PositiveInt, pydantic.PositiveInt] = (3, 3)
    pool_window: tuple[pydantic.PositiveInt, pydantic.PositiveInt] = (2, 2)


class UpBlock(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    out_channels: pydantic.PositiveInt
    deconv_kernel: tuple[pydantic.PositiveInt, pydantic.PositiveInt] = (1, 4)
    stride: tuple[pydantic.PositiveInt, pydantic.PositiveInt] = (1, 2)


def _default_down() -> list[DownBlock]:
    pools = [(2, 2), (2, 2), (2, 2), (2, 2), (3, 2)]
    return [DownBlock(out_channels=c, pool_window=pw) for c, pw in zip((16, 32, 64, 128, 256), pools)]


def _default_up() -> list[UpBlock]:
    return [UpBlock(out_channels=c) for c in (128, 64, 32, 16, 1)]


class ArchitectureSpec(pydantic.BaseModel):
    """Layer plan of the width-restoring FCN.

    Down blocks are conv -> batch norm -> max-pool -> ReLU, up blocks are
    deconv -> batch norm -> ReLU, and the last up block ends in a sigmoid
    instead. Pool heights must collapse ``input_height`` to exactly 1 and the
    up-block strides must undo the pool widths.
    """

    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    input_height: pydantic.PositiveInt = 48
    input_width: pydantic.PositiveInt = 2048
    down_blocks: list[DownBlock] = pydantic.Field(default_factory=_default_down)
    up_blocks: list[UpBlock] = pydantic.Field(default_factory=_default_up)

    @property
    def width_divisor(self) -> int:
        return math.prod(b.pool_window[1] for b in self.down_blocks)

    def with_width(self, width: int) -> ArchitectureSpec:
        return self.model_copy(update={"input_width": width})


def tiny_spec(height: int = 4, width: int = 32) -> ArchitectureSpec:
    """Two down and two up blocks; small enough for end-to-end gradient checks."""
    return ArchitectureSpec(
        input_height=height,
        input_width=width,
        down_blocks=[DownBlock(out_channels=3), DownBlock(out_channels=4)],
        up_blocks=[UpBlock(out_channels=3), UpBlock(out_channels=1)],
    )


def shape_walk(spec: ArchitectureSpec) -> list[tuple[int, int, int]]:
    """(channels, height, width) after every block, input first."""
    c, h, w = 1, spec.input_height, spec.input_width
    shapes = [(c, h, w)]
    for block in spec.down_blocks:
        kh, kw = block.conv_kernel
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigurationError(f"down-block conv kernels must be odd for same padding, got {block.conv_kernel}")
        ph, pw = block.pool_window
        if h % ph or w % pw:
            raise ConfigurationError(f"feature map {(h, w)} is not divisible by pool window {block.pool_window}")
        c, h, w = block.out_channels, h // ph, w // pw
        shapes.append((c, h, w))
    for block in spec.up_blocks:
        kh, kw = block.deconv_kernel
        sh, sw = block.stride
        ph, pw = _deconv_pad(block)
        c = block.out_channels
        h = deconv_output_size(h, kh, sh, ph)
        w = deconv_output_size(w, kw, sw, pw)
        shapes.append((c, h, w))
    return shapes


def validate_spec(spec: ArchitectureSpec) -> None:
    if not spec.down_blocks or not spec.up_blocks:
        raise ConfigurationError("the FCN needs at least one down block and one up block")
    if spec.input_width % spec.width_divisor:
        raise ConfigurationError(f"input width {spec.input_width} must be a multiple of {spec.width_divisor}")
    heights = math.prod(b.pool_window[0] for b in spec.down_blocks)
    if heights != spec.input_height:
        raise ConfigurationError(f"pool heights multiply to {heights}, input height is {spec.input_height}")
    final = shape_walk(spec)[-1]
    if final != (1, 1, spec.input_width):
        raise ConfigurationError(f"network ends in feature map {final}, expected (1, 1, {spec.input_width})")


def _deconv_pad(block: UpBlock) -> tuple[int, int]:
    # pad (k - s) / 2 makes the output exactly ``stride`` times the input
    kh, kw = block.deconv_kernel
    sh, sw = block.stride
    return max(0, (kh - sh) // 2), max(0, (kw - sw) // 2)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Conv2d:
    def __init__(self, params: LayerParams, pad: tuple[int, int]) -> None:
        self.params = params
        self.pad = pad
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        if mode == "train":
            self._x = x
        return conv2d_forward(x, self.params, (1, 1), self.pad)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return conv2d_backward(self._x, self.params, grad, (1, 1), self.pad)


class Deconv2d:
    def __init__(self, params: LayerParams, stride: tuple[int, int], pad: tuple[int, int]) -> None:
        self.params = params
        self.stride = stride
        self.pad = pad
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        if mode == "train":
            self._x = x
        return deconv2d_forward(x, self.params, self.stride, self.pad)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return deconv2d_backward(self._x, self.params, grad, self.stride, self.pad)


class BatchNorm2d:
    def __init__(self, params: LayerParams) -> None:
        self.params = params
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        if mode == "train":
            self._x = x
        return batchnorm_forward(x, self.params, mode)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return batchnorm_backward(self._x, self.params, grad)


class MaxPool2d:
    params = None

    def __init__(self, window: tuple[int, int]) -> None:
        self.window = window
        self._argmax: PoolArgmax | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        out, argmax = maxpool_forward(x, self.window)
        if mode == "train":
            self._argmax = argmax
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return maxpool_backward(self._argmax, grad)

    def pattern(self) -> np.ndarray:
        return self._argmax.indices


class ReLU:
    params = None

    def __init__(self) -> None:
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        if mode == "train":
            self._x = x
        return relu_forward(x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return relu_backward(self._x, grad)

    def pattern(self) -> np.ndarray:
        return self._x > 0


class Sigmoid:
    params = None

    def __init__(self) -> None:
        self._y: np.ndarray | None = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        y = sigmoid_forward(x)
        if mode == "train":
            self._y = y
        return y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return sigmoid_backward(self._y, grad)


Layer = Conv2d | Deconv2d | BatchNorm2d | MaxPool2d | ReLU | Sigmoid


@dataclass
class FcnModel:
    spec: ArchitectureSpec
    layers: list[Layer]
    mode: Mode = "infer"
    dtype: type = np.float32
    _ready_for_backward: bool = field(default=False, repr=False)

    def params(self) -> list[LayerParams]:
        return [layer.params for layer in self.layers if layer.params is not None]

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def activation_pattern(self) -> list[np.ndarray]:
        """ReLU masks and pool argmaxes of the last forward pass."""
        return [layer.pattern() for layer in self.layers if hasattr(layer, "pattern")]


@dataclass
class ModelCheckpoint:
    model: FcnModel
    iteration: int = 0
    alpha: float = 0.9
    beta: float = 0.1
    version: int = FORMAT_VERSION

    @property
    def spec(self) -> ArchitectureSpec:
        return self.model.spec


def _assemble(spec: ArchitectureSpec, dtype) -> list[Layer]:
    layers: list[Layer] = []
    in_c = 1
    for block in spec.down_blocks:
        kh, kw = block.conv_kernel
        layers.append(Conv2d(LayerParams.conv(block.out_channels, in_c, block.conv_kernel, dtype), (kh // 2, kw // 2)))
        layers.append(BatchNorm2d(LayerParams.batchnorm(block.out_channels, dtype)))
        layers.append(MaxPool2d(block.pool_window))
        layers.append(ReLU())
        in_c = block.out_channels
    for k, block in enumerate(spec.up_blocks):
        params = LayerParams.deconv(in_c, block.out_channels, block.deconv_kernel, dtype)
        layers.append(Deconv2d(params, block.stride, _deconv_pad(block)))
        layers.append(BatchNorm2d(LayerParams.batchnorm(block.out_channels, dtype)))
        layers.append(Sigmoid() if k == len(spec.up_blocks) - 1 else ReLU())
        in_c = block.out_channels
    return layers


def build_fcn(spec: ArchitectureSpec, seed: int, dtype=np.float32) -> FcnModel:
    """He fan-in initialisation from ``default_rng(seed)``; biases 0, gamma 1, shift 0."""
    validate_spec(spec)
    rng = np.random.default_rng(seed)
    layers = _assemble(spec, dtype)
    for layer in layers:
        p = layer.params
        if p is None or p.kind == "bn":
            continue
        if p.kind == "conv":
            _, in_c, kh, kw = p.weight.shape
            fan_in = in_c * kh * kw
        else:
            in_c, _, kh, kw = p.weight.shape
            # each output pixel of a strided transposed conv sees kh*kw/(sh*sw) taps
            fan_in = max(1, in_c * kh * kw // (layer.stride[0] * layer.stride[1]))
        p.weight[...] = rng.standard_normal(p.weight.shape) * math.sqrt(2.0 / fan_in)
    log.debug("built FCN with %d layers, seed %d", len(layers), seed)
    return FcnModel(spec=spec, layers=layers, dtype=dtype)


def forward(model: FcnModel, batch: np.ndarray, mode: Mode | None = None) -> np.ndarray:
    """B x 1 x H x W images in [0, 1] -> B x W split probabilities.

    ``mode`` defaults to ``model.mode``. Only a train-mode pass caches layer
    inputs and arms ``backward``; an infer-mode pass leaves the model untouched.
    """
    mode = model.mode if mode is None else mode
    spec = model.spec
    if batch.ndim != 4 or batch.shape[1] != 1:
        raise ShapeError(f"expected a (B, 1, H, W) batch, got shape {batch.shape}")
    _, _, h, w = batch.shape
    if w % spec.width_divisor:
        raise ShapeError(f"image width {w} must be a multiple of {spec.width_divisor}")
    if (h, w) != (spec.input_height, spec.input_width):
        raise ShapeError(f"image is {h}x{w}, model expects {spec.input_height}x{spec.input_width}")
    x = batch.astype(model.dtype, copy=False)
    for layer in model.layers:
        x = layer.forward(x, mode)
    if x.shape[1:3] != (1, 1) or x.shape[3] != w:
        raise ShapeError(f"network produced feature map {x.shape}, expected (B, 1, 1, {w})")
    if mode == "train":
        model._ready_for_backward = True
    return x.reshape(x.shape[0], w)


def backward(model: FcnModel, grad: np.ndarray) -> None:
    """Accumulates every parameter gradient from dLoss/dOutput (B x W)."""
    if not model._ready_for_backward:
        raise StateError("backward() needs a preceding train-mode forward()")
    x = grad.reshape(grad.shape[0], 1, 1, grad.shape[-1]).astype(model.dtype, copy=False)
    for layer in reversed(model.layers):
        x = layer.backward(x)


def predict(model: FcnModel, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Infer-mode forward over N x H x W images; ``model.mode`` and the layer caches are left as they were."""
    rows = [forward(model, images[i : i + batch_size, None], "infer") for i in range(0, len(images), batch_size)]
    if not rows:
        return np.zeros((0, model.spec.input_width), dtype=model.dtype)
    return np.concatenate(rows)


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------


def _layer_arrays(p: LayerParams) -> list[np.ndarray]:
    if p.kind == "bn":
        return [p.weight, p.bias, p.running_mean, p.running_var]
    return [p.weight, p.bias]


def save_checkpoint(
    model: FcnModel,
    path: str | Path,
    iteration: int = 0,
    alpha: float = 0.9,
    beta: float = 0.1,
) -> None:
    """Write magic, a self-describing header, then float32 little-endian parameters.

    Header: version, H, W, down count, up count (u32); five u32 per down block
    (out_channels, kh, kw, pool_h, pool_w) and per up block (out_channels, kh,
    kw, stride_h, stride_w); iteration (u64); alpha, beta (f64); layer count
    (u32) and per layer a kind tag (u8), rank (u8) and u32 dims of its weight.
    """
    spec = model.spec
    out = bytearray(MAGIC)
    out += struct.pack(
        "<5I", FORMAT_VERSION, spec.input_height, spec.input_width, len(spec.down_blocks), len(spec.up_blocks)
    )
    for d in spec.down_blocks:
        out += struct.pack("<5I", d.out_channels, *d.conv_kernel, *d.pool_window)
    for u in spec.up_blocks:
        out += struct.pack("<5I", u.out_channels, *u.deconv_kernel, *u.stride)
    out += struct.pack("<Q2d", iteration, alpha, beta)
    params = model.params()
    out += struct.pack("<I", len(params))
    for p in params:
        out += struct.pack("<2B", _KIND_TAGS[p.kind], p.weight.ndim)
        out += struct.pack(f"<{p.weight.ndim}I", *p.weight.shape)
    for p in params:
        for arr in _layer_arrays(p):
            out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise FormatError("checkpoint is truncated", self.offset)
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def floats(self, shape: tuple[int, ...]) -> np.ndarray:
        count = math.prod(shape)
        size = 4 * count
        if self.offset + size > len(self.data):
            raise FormatError("checkpoint is truncated", self.offset)
        arr = np.frombuffer(self.data, dtype="<f4", count=count, offset=self.offset)
        self.offset += size
        return arr.reshape(shape).astype(np.float32)


def read_checkpoint(path: str | Path) -> ModelCheckpoint:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}", 0)
    r = _Reader(data)
    r.offset = len(MAGIC)
    version, height, width, n_down, n_up = r.take("<5I")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", len(MAGIC))
    header_at = r.offset
    down = []
    for _ in range(n_down):
        c, kh, kw, ph, pw = r.take("<5I")
        down.append(DownBlock(out_channels=c, conv_kernel=(kh, kw), pool_window=(ph, pw)))
    up = []
    for _ in range(n_up):
        c, kh, kw, sh, sw = r.take("<5I")
        up.append(UpBlock(out_channels=c, deconv_kernel=(kh, kw), stride=(sh, sw)))
    try:
        spec = ArchitectureSpec(input_height=height, input_width=width, down_blocks=down, up_blocks=up)
        model = build_fcn(spec, seed=0)
    except (pydantic.ValidationError, ConfigurationError, ShapeError) as e:
        raise FormatError(f"checkpoint describes an invalid architecture: {e}", header_at) from e
    iteration, alpha, beta = r.take("<Q2d")
    (n_layers,) = r.take("<I")
    params = model.params()
    if n_layers != len(params):
        raise FormatError(f"checkpoint has {n_layers} parameter layers, architecture implies {len(params)}", r.offset)
    for p in params:
        at = r.offset
        tag, rank = r.take("<2B")
        dims = r.take(f"<{rank}I")
        if _TAG_KINDS.get(tag) != p.kind or tuple(dims) != p.weight.shape:
            found = _TAG_KINDS.get(tag, tag)
            raise FormatError(f"layer descriptor {found} {dims} does not match {p.kind} {p.weight.shape}", at)
    for p in params:
        for arr in _layer_arrays(p):
            arr[...] = r.floats(arr.shape)
    if r.offset != len(data):
        raise FormatError(f"{len(data) - r.offset} trailing bytes after parameters", r.offset)
    return ModelCheckpoint(model=model, iteration=iteration, alpha=alpha, beta=beta, version=version)


def load_checkpoint(path: str | Path) -> FcnModel:
    return read_checkpoint(path).model


