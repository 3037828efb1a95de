"""FPN-like saliency network: encoder, context flow, prediction heads.

A small 4-stage residual encoder produces feature maps at strides
4/8/16/32.  The deepest map is channel-projected, then three chained
fusion modules carry context from deep to shallow.  Each refined level
feeds a 1x1 saliency head and a 1x1 boundary head whose logits are
upsampled to the input resolution.

In RGB-D mode a second encoder (same architecture, separate weights,
native 1-channel stem) provides depth features to the fusion modules
plus per-level 1x1 depth saliency heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crace import CraceConfig, CraceModule
from .layers import BatchNormLayer, Conv2dLayer, ConvBnRelu, relu, upsample
from .tensor import Tensor, ShapeError, sigmoid

__all__ = ["EncoderConfig", "NetworkConfig", "SodNetwork", "InputSizeError", "ModeError"]

STRIDES = (4, 8, 16, 32)


class InputSizeError(ValueError):
    """Input spatial dims are not divisible by the encoder stride."""


class ModeError(ValueError):
    """Depth input given to an RGB network, or missing in RGB-D mode."""


@dataclass
class EncoderConfig:
    widths: tuple[int, int, int, int] = (16, 32, 64, 128)
    blocks_per_stage: int = 1

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 4:
            raise ValueError("encoder needs exactly 4 stage widths")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")


@dataclass
class NetworkConfig:
    encoder: EncoderConfig
    crace: CraceConfig
    mode: str = "rgb"

    def __post_init__(self):
        if self.mode not in ("rgb", "rgbd"):
            raise ValueError(f"mode must be 'rgb' or 'rgbd', got {self.mode!r}")

    @staticmethod
    def default(mode: str = "rgb") -> "NetworkConfig":
        crace = CraceConfig(depth_input=(mode == "rgbd"))
        return NetworkConfig(EncoderConfig(), crace, mode)


class ResidualBlock:
    """conv-bn-relu-conv-bn plus (projected) skip, ReLU on the sum."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, rng):
        self.conv1 = Conv2dLayer(in_ch, out_ch, 3, stride=stride, bias=False, rng=rng)
        self.bn1 = BatchNormLayer(out_ch)
        self.conv2 = Conv2dLayer(out_ch, out_ch, 3, bias=False, rng=rng)
        self.bn2 = BatchNormLayer(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.skip = Conv2dLayer(in_ch, out_ch, 1, stride=stride, bias=False, rng=rng)
            self.skip_bn = BatchNormLayer(out_ch)
        else:
            self.skip = None
            self.skip_bn = None

    def forward(self, x: Tensor, training: bool) -> Tensor:
        y = relu(self.bn1.forward(self.conv1.forward(x), training))
        y = self.bn2.forward(self.conv2.forward(y), training)
        if self.skip is not None:
            x = self.skip_bn.forward(self.skip.forward(x), training)
        return relu(y + x)

    def parameters(self, prefix: str = ""):
        yield from self.conv1.parameters(prefix + "conv1.")
        yield from self.bn1.parameters(prefix + "bn1.")
        yield from self.conv2.parameters(prefix + "conv2.")
        yield from self.bn2.parameters(prefix + "bn2.")
        if self.skip is not None:
            yield from self.skip.parameters(prefix + "skip.")
            yield from self.skip_bn.parameters(prefix + "skip_bn.")

    def state(self, prefix: str = ""):
        yield from self.bn1.state(prefix + "bn1.")
        yield from self.bn2.state(prefix + "bn2.")
        if self.skip_bn is not None:
            yield from self.skip_bn.state(prefix + "skip_bn.")

    def load_state(self, prefix: str, arrays: dict) -> None:
        self.bn1.load_state(prefix + "bn1.", arrays)
        self.bn2.load_state(prefix + "bn2.", arrays)
        if self.skip_bn is not None:
            self.skip_bn.load_state(prefix + "skip_bn.", arrays)


class Encoder:
    """Four residual stages at strides 4/8/16/32 relative to the input."""

    def __init__(self, in_channels: int, config: EncoderConfig, rng):
        self.in_channels = in_channels
        self.config = config
        w = config.widths
        self.stem = ConvBnRelu(in_channels, w[0], 3, stride=2, rng=rng)
        self.stages: list[list[ResidualBlock]] = []
        prev = w[0]
        for width in w:
            blocks = [ResidualBlock(prev, width, stride=2, rng=rng)]
            for _ in range(config.blocks_per_stage - 1):
                blocks.append(ResidualBlock(width, width, stride=1, rng=rng))
            self.stages.append(blocks)
            prev = width

    def forward(self, x: Tensor, training: bool) -> list[Tensor]:
        B, C, H, W = x.shape
        if C != self.in_channels:
            raise ShapeError(f"encoder expects {self.in_channels} channels, got {C}")
        if H % 32 or W % 32:
            raise InputSizeError(
                f"input dims ({H}, {W}) must be divisible by 32; resize first"
            )
        y = self.stem.forward(x, training)
        features = []
        for blocks in self.stages:
            for block in blocks:
                y = block.forward(y, training)
            features.append(y)
        return features

    def parameters(self, prefix: str = ""):
        yield from self.stem.parameters(prefix + "stem.")
        for s, blocks in enumerate(self.stages):
            for b, block in enumerate(blocks):
                yield from block.parameters(prefix + f"stage{s + 2}.block{b}.")

    def state(self, prefix: str = ""):
        yield from self.stem.state(prefix + "stem.")
        for s, blocks in enumerate(self.stages):
            for b, block in enumerate(blocks):
                yield from block.state(prefix + f"stage{s + 2}.block{b}.")

    def load_state(self, prefix: str, arrays: dict) -> None:
        self.stem.load_state(prefix + "stem.", arrays)
        for s, blocks in enumerate(self.stages):
            for b, block in enumerate(blocks):
                block.load_state(prefix + f"stage{s + 2}.block{b}.", arrays)


class SodNetwork:
    """The unified RGB / RGB-D saliency detector."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        self.mode = config.mode
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
        w = config.encoder.widths
        n = config.crace.n

        self.rgb_encoder = Encoder(3, config.encoder, rng)
        if self.mode == "rgbd":
            self.depth_encoder = Encoder(1, config.encoder, rng)
        else:
            self.depth_encoder = None

        self.top_proj = ConvBnRelu(w[3], n, config.crace.proj_kernel, rng=rng)

        def module_for(level: int) -> CraceModule:
            cfg = config.crace
            in_depth = w[level - 2] if cfg.depth_input else None
            return CraceModule(w[level - 2], n, cfg, rng=rng, in_depth=in_depth)

        # Context flows deep to shallow through exactly three fusion modules.
        self.crace4 = module_for(4)
        self.crace3 = module_for(3)
        self.crace2 = module_for(2)

        self.saliency_heads = [Conv2dLayer(n, 1, 1, rng=rng) for _ in range(4)]
        self.edge_heads = [Conv2dLayer(n, 1, 1, rng=rng) for _ in range(4)]
        if self.mode == "rgbd":
            self.depth_heads = [Conv2dLayer(w[i], 1, 1, rng=rng) for i in range(4)]
        else:
            self.depth_heads = None

    # -- encoders ---------------------------------------------------------

    def encode(self, image: Tensor, training: bool = False) -> list[Tensor]:
        return self.rgb_encoder.forward(image, training)

    def encode_depth(self, depth: Tensor, training: bool = False) -> list[Tensor]:
        if self.depth_encoder is None:
            raise ModeError("RGB-mode network does not accept depth input")
        return self.depth_encoder.forward(depth, training)

    # -- decoder -----------------------------------------------------------

    def context_flow(
        self,
        features: list[Tensor],
        depth_features: list[Tensor] | None = None,
        training: bool = False,
    ) -> list[Tensor]:
        """[f2..f5] (+ [d2..d5]) -> [F2..F5], deep to shallow."""
        f2, f3, f4, f5 = features
        use_depth = self.config.crace.depth_input
        if use_depth:
            if depth_features is None:
                raise ModeError("depth features required when depth_input is enabled")
            d2, d3, d4, _ = depth_features
        else:
            if depth_features is not None and self.mode == "rgb":
                raise ModeError("RGB-mode network does not accept depth features")
            d2 = d3 = d4 = None
        top = self.top_proj.forward(f5, training)
        m4 = self.crace4.forward(f4, top, d4, training)
        m3 = self.crace3.forward(f3, m4, d3, training)
        m2 = self.crace2.forward(f2, m3, d2, training)
        return [m2, m3, m4, top]

    # -- heads ----------------------------------------------------------------

    def predict(
        self,
        refined: list[Tensor],
        input_hw: tuple[int, int],
        depth_features: list[Tensor] | None = None,
        training: bool = False,
    ) -> dict:
        """Per-level saliency/edge logit maps, upsampled to the input size."""
        H, W = input_hw

        def up_to_full(t: Tensor) -> Tensor:
            factor = H // t.shape[2]
            return upsample(t, factor)

        saliency = [up_to_full(head.forward(f)) for head, f in zip(self.saliency_heads, refined)]
        edges = [up_to_full(head.forward(f)) for head, f in zip(self.edge_heads, refined)]
        out = {"saliency_logits": saliency, "edge_logits": edges}
        if self.depth_heads is not None and depth_features is not None:
            out["depth_logits"] = [
                up_to_full(head.forward(d))
                for head, d in zip(self.depth_heads, depth_features)
            ]
        return out

    def forward(
        self,
        image: Tensor,
        depth: Tensor | None = None,
        training: bool = False,
    ) -> dict:
        if self.mode == "rgb":
            if depth is not None:
                raise ModeError("RGB-mode network does not accept depth input")
            depth_features = None
        else:
            if depth is None:
                raise ModeError("RGB-D network requires a depth map")
            depth_features = self.encode_depth(depth, training)
        features = self.encode(image, training)
        pass_depth = depth_features if self.config.crace.depth_input else None
        refined = self.context_flow(features, pass_depth, training)
        return self.predict(refined, image.shape[2:], depth_features, training)

    def infer(self, image: np.ndarray, depth: np.ndarray | None = None) -> np.ndarray:
        """Final saliency probability map for one (3, H, W) image."""
        img = Tensor(image[None])
        dep = Tensor(depth[None, None]) if depth is not None else None
        out = self.forward(img, dep, training=False)
        return sigmoid(out["saliency_logits"][0]).data[0, 0]

    # -- parameter plumbing -------------------------------------------------------

    def parameters(self):
        yield from self.rgb_encoder.parameters("rgb_encoder.")
        if self.depth_encoder is not None:
            yield from self.depth_encoder.parameters("depth_encoder.")
        yield from self.top_proj.parameters("top_proj.")
        yield from self.crace4.parameters("crace4.")
        yield from self.crace3.parameters("crace3.")
        yield from self.crace2.parameters("crace2.")
        for i, head in enumerate(self.saliency_heads):
            yield from head.parameters(f"saliency_head{i + 2}.")
        for i, head in enumerate(self.edge_heads):
            yield from head.parameters(f"edge_head{i + 2}.")
        if self.depth_heads is not None:
            for i, head in enumerate(self.depth_heads):
                yield from head.parameters(f"depth_head{i + 2}.")

    def state(self):
        yield from self.rgb_encoder.state("rgb_encoder.")
        if self.depth_encoder is not None:
            yield from self.depth_encoder.state("depth_encoder.")
        yield from self.top_proj.state("top_proj.")
        yield from self.crace4.state("crace4.")
        yield from self.crace3.state("crace3.")
        yield from self.crace2.state("crace2.")

    def param_dict(self) -> dict[str, Tensor]:
        return dict(self.parameters())

    def param_count(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def export_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: t.data.copy() for name, t in self.parameters()}
        arrays.update({name: arr.copy() for name, arr in self.state()})
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.parameters():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name!r}")
            if arrays[name].shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {arrays[name].shape} "
                    f"!= model shape {t.data.shape}"
                )
            t.data = np.ascontiguousarray(arrays[name], dtype=np.float64)
        self.rgb_encoder.load_state("rgb_encoder.", arrays)
        if self.depth_encoder is not None:
            self.depth_encoder.load_state("depth_encoder.", arrays)
        self.top_proj.load_state("top_proj.", arrays)
        self.crace4.load_state("crace4.", arrays)
        self.crace3.load_state("crace3.", arrays)
        self.crace2.load_state("crace2.", arrays)
