"""Image generator: frozen random encoder, statistic alignment, trainable decoder.

The encoder is a seeded random filterbank of four conv+relu stages
(3->8 stride 1, then 8->16, 16->32, 32->64 at stride 2). Its weights are
frozen at creation; it only provides a feature space in which channel
statistics are matched. The decoder mirrors it with nearest-neighbor
upsampling and is the trainable half: conv 64->32, up, conv 32->16, up,
conv 16->8, up, conv 8->3, relu after all but the last conv.

Synthesis aligns the deepest source features to the target's channel
statistics and decodes them. The generation loss ties the synthesized
image's deepest features to the aligned features (content) and its Gram
matrices at all four stages to the target's (style).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .align import DEFAULT_EPS, adain, content_loss, style_loss
from .optim import ParameterSet
from .tensor import ConvLayer, Tensor, relu, upsample_nearest2

ENCODER_CHANNELS = (3, 8, 16, 32, 64)
ENCODER_STRIDES = (1, 2, 2, 2)
DOWNSCALE = 8  # product of encoder strides; inputs must divide evenly


class GeneratorModel:
    def __init__(self, encoder: list[ConvLayer], decoder: list[ConvLayer],
                 eps: float = DEFAULT_EPS):
        self.encoder = encoder
        self.decoder = decoder
        self.eps = eps

    @classmethod
    def create(cls, rng: np.random.Generator, eps: float = DEFAULT_EPS,
               dtype=np.float32) -> "GeneratorModel":
        encoder = [
            ConvLayer.initialize(rng, ENCODER_CHANNELS[i], ENCODER_CHANNELS[i + 1],
                                 stride=ENCODER_STRIDES[i], trainable=False, dtype=dtype)
            for i in range(4)
        ]
        widths = list(reversed(ENCODER_CHANNELS))  # 64, 32, 16, 8, 3
        decoder = [
            ConvLayer.initialize(rng, widths[i], widths[i + 1],
                                 stride=1, trainable=True, dtype=dtype)
            for i in range(4)
        ]
        return cls(encoder, decoder, eps=eps)

    def encode(self, image: Tensor) -> list[Tensor]:
        """Four stage features: channels (8, 16, 32, 64), strides (1, 2, 2, 2)."""
        _check_image(image)
        feats = []
        x = image
        for layer in self.encoder:
            x = relu(layer(x))
            feats.append(x)
        return feats

    def decode(self, feat: Tensor) -> Tensor:
        x = feat
        for i, layer in enumerate(self.decoder):
            x = layer(x)
            if i < len(self.decoder) - 1:
                x = relu(x)
                x = upsample_nearest2(x)
        return x

    def parameters(self, prefix: str = "gen") -> ParameterSet:
        """Trainable tensors only: the decoder. The frozen encoder is excluded."""
        params = ParameterSet()
        for i, layer in enumerate(self.decoder, start=1):
            params.add(f"{prefix}.dec{i}.kernel", layer.kernel)
            params.add(f"{prefix}.dec{i}.bias", layer.bias)
        return params

    def all_tensors(self, prefix: str = "gen") -> dict[str, Tensor]:
        """Every weight including the frozen encoder, for checkpointing."""
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.encoder, start=1):
            out[f"{prefix}.enc{i}.kernel"] = layer.kernel
            out[f"{prefix}.enc{i}.bias"] = layer.bias
        for i, layer in enumerate(self.decoder, start=1):
            out[f"{prefix}.dec{i}.kernel"] = layer.kernel
            out[f"{prefix}.dec{i}.bias"] = layer.bias
        return out


def _check_image(image: Tensor) -> None:
    if image.data.ndim != 4 or image.data.shape[1] != 3:
        raise ValueError(f"expected an (n, 3, h, w) image, got shape {image.data.shape}")
    _, _, h, w = image.data.shape
    if h % DOWNSCALE or w % DOWNSCALE:
        raise ValueError(
            f"image size {h}x{w} must be a multiple of {DOWNSCALE} in both dimensions")


@dataclass
class StylizedSample:
    """One synthesis result plus the constants its loss needs."""

    image: Tensor                       # synthesized image, unclamped
    aligned_feat: Tensor                # alignment output at the deepest stage, constant
    target_feats: list[Tensor] = field(default_factory=list)  # all 4 stages, constant
    model: GeneratorModel | None = None


def synthesize(model: GeneratorModel, x_src: Tensor, x_tgt: Tensor) -> StylizedSample:
    """Align the source's deepest features to the target's stats and decode.

    Both encoders run on constants (frozen weights, data inputs), so only
    the decoder contributes gradients.
    """
    src_feats = model.encode(x_src.detach())
    tgt_feats = [f.detach() for f in model.encode(x_tgt.detach())]
    aligned = adain(src_feats[3], tgt_feats[3], eps=model.eps).detach()
    image = model.decode(aligned)
    return StylizedSample(image=image, aligned_feat=aligned,
                          target_feats=tgt_feats, model=model)


def generation_loss(sample: StylizedSample) -> Tensor:
    """Content loss at the deepest stage plus Gram style loss over all four."""
    synth_feats = sample.model.encode(sample.image)
    return (content_loss(synth_feats[3], sample.aligned_feat)
            + style_loss(synth_feats, sample.target_feats))
