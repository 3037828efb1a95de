"""Layer vocabulary: convolution, batch norm, sampling ops, and erosion.

Convolutions use "same" zero padding (pad = dilation*(kernel-1)/2 per
side), so stride-1 layers preserve spatial dims and stride-s layers emit
ceil(H/s).  Forward passes never mutate parameters; updates are the
trainer's job.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, ShapeError, make_node, relu

__all__ = [
    "BatchNormLayer",
    "Conv2dLayer",
    "ConvBnRelu",
    "DegenerateStatisticsError",
    "conv2d",
    "downsample_avg",
    "erode",
    "global_avg_pool",
    "resize_bilinear_np",
    "resize_nearest_np",
    "upsample",
]


class DegenerateStatisticsError(RuntimeError):
    """Train-mode batch norm was asked to normalize a single element."""


def _kaiming_std(fan_in: int) -> float:
    return float(np.sqrt(2.0 / fan_in))


class Conv2dLayer:
    """2-D convolution with odd kernel, same padding, stride and dilation."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        stride: int = 1,
        dilation: int = 1,
        bias: bool = True,
        rng: np.random.Generator | None = None,
        weight_scale: float = 1.0,
    ):
        if kernel % 2 != 1 or kernel < 1:
            raise ValueError(f"kernel must be odd and positive, got {kernel}")
        if stride < 1 or dilation < 1:
            raise ValueError("stride and dilation must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.dilation = dilation
        rng = rng or np.random.default_rng(0)
        std = _kaiming_std(in_channels * kernel * kernel) * weight_scale
        self.weight = Tensor(
            rng.normal(0.0, std, (out_channels, in_channels, kernel, kernel)),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self)

    def parameters(self, prefix: str = ""):
        yield prefix + "weight", self.weight
        if self.bias is not None:
            yield prefix + "bias", self.bias


def _im2col(xp: np.ndarray, kernel: int, stride: int, dilation: int):
    """Patch matrix (B*Ho*Wo, C*k*k) from an already padded input."""
    B, C, Hp, Wp = xp.shape
    eff = dilation * (kernel - 1) + 1
    Ho = (Hp - eff) // stride + 1
    Wo = (Wp - eff) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (eff, eff), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, ::dilation, ::dilation]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kernel * kernel)
    return np.ascontiguousarray(cols), Ho, Wo


def conv2d(x: Tensor, layer: Conv2dLayer) -> Tensor:
    B, C, H, W = x.shape
    if C != layer.in_channels:
        raise ShapeError(
            f"conv2d: input has {C} channels, layer expects {layer.in_channels}"
        )
    k, s, d = layer.kernel, layer.stride, layer.dilation
    w, b = layer.weight, layer.bias

    if k == 1 and s == 1:
        return _conv1x1(x, w, b)

    pad = d * (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols, Ho, Wo = _im2col(xp, k, s, d)
    wmat = w.data.reshape(layer.out_channels, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(B, Ho, Wo, layer.out_channels).transpose(0, 3, 1, 2)
    Hp, Wp = xp.shape[2], xp.shape[3]

    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, layer.out_channels)
        gw = (gmat.T @ cols).reshape(w.shape)
        gcols = gmat @ wmat
        gpatch = gcols.reshape(B, Ho, Wo, C, k, k).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros((B, C, Hp, Wp))
        for i in range(k):
            for j in range(k):
                gxp[:, :, i * d : i * d + Ho * s : s, j * d : j * d + Wo * s : s] += gpatch[
                    :, :, :, :, i, j
                ]
        gx = gxp[:, :, pad : pad + H, pad : pad + W]
        if b is None:
            return gx, gw
        return gx, gw, gmat.sum(axis=0)

    return make_node(np.ascontiguousarray(out), parents, bwd)


def _conv1x1(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    B, C, H, W = x.shape
    O = w.shape[0]
    wmat = w.data.reshape(O, C)
    xd = x.data.reshape(B, C, H * W)
    out = np.matmul(wmat, xd)
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(B, O, H, W)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        gm = g.reshape(B, O, H * W)
        gx = np.matmul(wmat.T, gm).reshape(B, C, H, W)
        gw = np.einsum("boi,bci->oc", gm, xd).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, gm.sum(axis=(0, 2))

    return make_node(np.ascontiguousarray(out), parents, bwd)


class BatchNormLayer:
    """Per-channel batch normalization over (B, H, W).

    Train mode normalizes with batch statistics (biased variance) and
    updates the running estimates; eval mode uses the running estimates
    only, so its output is deterministic for a fixed input.
    """

    def __init__(self, channels: int, epsilon: float = 1e-5, momentum: float = 0.1):
        self.channels = channels
        self.epsilon = epsilon
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        B, C, H, W = x.shape
        if C != self.channels:
            raise ShapeError(f"batchnorm: {C} channels, layer has {self.channels}")
        gamma = self.gamma.reshape(1, C, 1, 1)
        beta = self.beta.reshape(1, C, 1, 1)
        if training:
            if B * H * W < 2:
                raise DegenerateStatisticsError(
                    "train-mode batch norm needs >= 2 elements per channel"
                )
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
            xhat = centered * (var + self.epsilon) ** -0.5
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data.reshape(C)
            self.running_var = (1 - m) * self.running_var + m * var.data.reshape(C)
        else:
            rm = Tensor(self.running_mean.reshape(1, C, 1, 1))
            rstd = Tensor(1.0 / np.sqrt(self.running_var + self.epsilon).reshape(1, C, 1, 1))
            xhat = (x - rm) * rstd
        return xhat * gamma + beta

    def parameters(self, prefix: str = ""):
        yield prefix + "gamma", self.gamma
        yield prefix + "beta", self.beta

    def state(self, prefix: str = ""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var

    def load_state(self, prefix: str, arrays: dict) -> None:
        self.running_mean = arrays[prefix + "running_mean"].copy()
        self.running_var = arrays[prefix + "running_var"].copy()


class ConvBnRelu:
    """conv -> batch norm -> ReLU, the basic projection block."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        stride: int = 1,
        dilation: int = 1,
        rng: np.random.Generator | None = None,
    ):
        self.conv = Conv2dLayer(
            in_channels, out_channels, kernel, stride, dilation, bias=False, rng=rng
        )
        self.bn = BatchNormLayer(out_channels)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return relu(self.bn.forward(self.conv.forward(x), training))

    def parameters(self, prefix: str = ""):
        yield from self.conv.parameters(prefix + "conv.")
        yield from self.bn.parameters(prefix + "bn.")

    def state(self, prefix: str = ""):
        yield from self.bn.state(prefix + "bn.")

    def load_state(self, prefix: str, arrays: dict) -> None:
        self.bn.load_state(prefix + "bn.", arrays)


# -- resampling ----------------------------------------------------------


def _interp_grid(n_in: int, n_out: int, align_corners: bool):
    """Source taps (i0, i1) and blend factor t for 1-D linear resampling."""
    if n_in == 1:
        z = np.zeros(n_out, dtype=np.intp)
        return z, z, np.zeros(n_out)
    if align_corners and n_out > 1:
        src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    else:
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i0 = np.minimum(i0, n_in - 2)
    i1 = i0 + 1
    return i0, i1, src - i0


def _interp_matrix(n_in: int, n_out: int, align_corners: bool) -> np.ndarray:
    i0, i1, t = _interp_grid(n_in, n_out, align_corners)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - t)
    np.add.at(m, (rows, i1), t)
    return m


def upsample(
    x: Tensor,
    factor: int,
    mode: str = "bilinear",
    align_corners: bool = False,
) -> Tensor:
    """Scale spatial dims by an integer factor; constants stay constant."""
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    if factor == 1:
        return x
    B, C, H, W = x.shape
    Ho, Wo = H * factor, W * factor

    if mode == "nearest":
        def bwd_n(g):
            return (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),)

        data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
        return make_node(data, (x,), bwd_n)
    if mode != "bilinear":
        raise ValueError(f"unknown upsample mode {mode!r}")

    r0, r1, tr = _interp_grid(H, Ho, align_corners)
    c0, c1, tc = _interp_grid(W, Wo, align_corners)
    # a + t*(b - a) keeps constant inputs bit-exact.
    rows = x.data[:, :, r0, :] + tr[None, None, :, None] * (
        x.data[:, :, r1, :] - x.data[:, :, r0, :]
    )
    data = rows[:, :, :, c0] + tc[None, None, None, :] * (
        rows[:, :, :, c1] - rows[:, :, :, c0]
    )
    wr = _interp_matrix(H, Ho, align_corners)
    wc = _interp_matrix(W, Wo, align_corners)

    def bwd(g):
        gz = np.tensordot(g, wc, axes=([3], [0]))          # (B, C, Ho, W)
        gx = np.tensordot(gz, wr, axes=([2], [0]))          # (B, C, W, H)
        return (np.ascontiguousarray(gx.transpose(0, 1, 3, 2)),)

    return make_node(np.ascontiguousarray(data), (x,), bwd)


def downsample_avg(x: Tensor, factor: int) -> Tensor:
    """Average pooling by an integer factor; dims must divide evenly."""
    if factor < 1:
        raise ValueError("downsample factor must be >= 1")
    if factor == 1:
        return x
    B, C, H, W = x.shape
    if H % factor or W % factor:
        raise ShapeError(f"downsample_avg: dims ({H}, {W}) not divisible by {factor}")
    Ho, Wo = H // factor, W // factor
    win = x.data.reshape(B, C, Ho, factor, Wo, factor)
    if factor & (factor - 1) == 0:
        # Pairwise halving: windows of equal values pool exactly.
        pooled = win
        while pooled.shape[3] > 1:
            pooled = 0.5 * (pooled[:, :, :, 0::2] + pooled[:, :, :, 1::2])
        while pooled.shape[5] > 1:
            pooled = 0.5 * (pooled[:, :, :, :, :, 0::2] + pooled[:, :, :, :, :, 1::2])
        data = pooled.reshape(B, C, Ho, Wo)
    else:
        data = win.mean(axis=(3, 5))
    inv = 1.0 / (factor * factor)

    def bwd(g):
        gw = np.broadcast_to(
            g[:, :, :, None, :, None] * inv, (B, C, Ho, factor, Wo, factor)
        )
        return (gw.reshape(B, C, H, W),)

    return make_node(np.ascontiguousarray(data), (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel, kept as a (B, C, 1, 1) map."""
    return x.mean(axis=(2, 3), keepdims=True)


# -- morphology ----------------------------------------------------------


def erode(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Morphological erosion of a binary (H, W) mask.

    Structuring element is the (2*radius+1)^2 square; pixels outside the
    image count as 0, so a full-frame mask loses a radius-wide border.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ShapeError("erode expects an (H, W) mask")
    if radius < 1:
        raise ValueError("erode radius must be >= 1")
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise ValueError("erode expects a binary mask with values in {0, 1}")
    side = 2 * radius + 1
    padded = np.pad(mask, radius)
    win = np.lib.stride_tricks.sliding_window_view(padded, (side, side))
    return win.min(axis=(2, 3))


# -- plain-numpy resizing (data pipeline, not autodiff) -------------------


def resize_bilinear_np(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an (..., H, W) array to (..., Ho, Wo)."""
    H, W = arr.shape[-2:]
    Ho, Wo = out_hw
    if (H, W) == (Ho, Wo):
        return arr.copy()
    r0, r1, tr = _interp_grid(H, Ho, align_corners=False)
    c0, c1, tc = _interp_grid(W, Wo, align_corners=False)
    rows = arr[..., r0, :] + tr[:, None] * (arr[..., r1, :] - arr[..., r0, :])
    return rows[..., c0] + tc * (rows[..., c1] - rows[..., c0])


def resize_nearest_np(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize; keeps binary masks binary."""
    H, W = arr.shape[-2:]
    Ho, Wo = out_hw
    if (H, W) == (Ho, Wo):
        return arr.copy()
    ri = np.clip(np.floor((np.arange(Ho) + 0.5) * H / Ho), 0, H - 1).astype(np.intp)
    ci = np.clip(np.floor((np.arange(Wo) + 0.5) * W / Wo), 0, W - 1).astype(np.intp)
    return arr[..., ri, :][..., ci]
