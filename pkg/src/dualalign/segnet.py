"""Segmentation network with optional mid-network statistic alignment.

Encoder: S1 (conv 3->16 stride 1), S2 (conv 16->32 stride 2),
S3 (conv 32->64 stride 2), each followed by relu. Decoder: D1
(conv 64->64 + relu), upsample, D2 (conv 64->32 + relu), upsample,
D3 (conv 32->classes, linear). Logits come back at input resolution for
sizes divisible by 4.

During training the source branch's features are aligned to a target
image's channel statistics right after ``align_point``; at test time the
network runs single-branch with no alignment and no target input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align import DEFAULT_EPS, adain
from .optim import ParameterSet
from .tensor import ConvLayer, Tensor, relu, softmax_cross_entropy, upsample_nearest2

ALIGN_POINTS = ("S1", "S2", "S3", "D1", "D2", "off")
ENC_CHANNELS = (3, 16, 32, 64)
ENC_STRIDES = (1, 2, 2)


class SegModel:
    def __init__(self, encoder: list[ConvLayer], decoder: list[ConvLayer],
                 num_classes: int, align_point: str = "S3",
                 stop_grad_target: bool = False, eps: float = DEFAULT_EPS):
        if align_point not in ALIGN_POINTS:
            raise ValueError(f"align_point must be one of {ALIGN_POINTS}, got {align_point!r}")
        self.encoder = encoder
        self.decoder = decoder
        self.num_classes = num_classes
        self.align_point = align_point
        self.stop_grad_target = stop_grad_target
        self.eps = eps

    @classmethod
    def create(cls, rng: np.random.Generator, num_classes: int = 5,
               align_point: str = "S3", stop_grad_target: bool = False,
               eps: float = DEFAULT_EPS, dtype=np.float32) -> "SegModel":
        encoder = [
            ConvLayer.initialize(rng, ENC_CHANNELS[i], ENC_CHANNELS[i + 1],
                                 stride=ENC_STRIDES[i], dtype=dtype)
            for i in range(3)
        ]
        decoder = [
            ConvLayer.initialize(rng, 64, 64, stride=1, dtype=dtype),
            ConvLayer.initialize(rng, 64, 32, stride=1, dtype=dtype),
            ConvLayer.initialize(rng, 32, num_classes, stride=1, dtype=dtype),
        ]
        return cls(encoder, decoder, num_classes, align_point, stop_grad_target, eps)

    def _steps(self):
        """(name, fn) pairs in forward order; alignment slots in after a name."""
        return [
            ("S1", lambda x: relu(self.encoder[0](x))),
            ("S2", lambda x: relu(self.encoder[1](x))),
            ("S3", lambda x: relu(self.encoder[2](x))),
            ("D1", lambda x: relu(self.decoder[0](x))),
            ("up1", upsample_nearest2),
            ("D2", lambda x: relu(self.decoder[1](x))),
            ("up2", upsample_nearest2),
            ("D3", self.decoder[2]),
        ]

    def parameters(self, prefix: str = "seg") -> ParameterSet:
        params = ParameterSet()
        for i, layer in enumerate(self.encoder, start=1):
            params.add(f"{prefix}.s{i}.kernel", layer.kernel)
            params.add(f"{prefix}.s{i}.bias", layer.bias)
        for i, layer in enumerate(self.decoder, start=1):
            params.add(f"{prefix}.d{i}.kernel", layer.kernel)
            params.add(f"{prefix}.d{i}.bias", layer.bias)
        return params

    def all_tensors(self, prefix: str = "seg") -> dict[str, Tensor]:
        return {name: t for name, t in self.parameters(prefix).items()}


@dataclass
class PredictionMap:
    """Per-pixel class logits plus the derived hard labels."""

    logits: Tensor

    def label_map(self) -> np.ndarray:
        """Argmax over classes; ties break toward the lowest class index."""
        return np.argmax(self.logits.data, axis=1)


def _check_input(x: Tensor) -> None:
    if x.data.ndim != 4 or x.data.shape[1] != 3:
        raise ValueError(f"expected an (n, 3, h, w) image, got shape {x.data.shape}")
    _, _, h, w = x.data.shape
    if h % 4 or w % 4:
        raise ValueError(f"image size {h}x{w} must be a multiple of 4 in both dimensions")


def seg_forward_train(x_synth: Tensor, x_tgt: Tensor, model: SegModel) -> PredictionMap:
    """Two-branch forward: align source features to the target's statistics.

    Both images run up to ``align_point``; the source branch continues alone
    afterwards. With ``stop_grad_target`` the target branch enters the
    alignment as a constant.
    """
    if model.align_point == "off":
        raise ValueError("seg_forward_train requires an alignment point; use seg_forward_test")
    _check_input(x_synth)
    _check_input(x_tgt)
    steps = model._steps()
    src = x_synth
    tgt = x_tgt
    aligned = False
    out = src
    for name, fn in steps:
        out = fn(out)
        if not aligned:
            tgt = fn(tgt)
            if name == model.align_point:
                ref = tgt.detach() if model.stop_grad_target else tgt
                out = adain(out, ref, eps=model.eps)
                aligned = True
    return PredictionMap(logits=out)


def seg_forward_test(x: Tensor, model: SegModel) -> PredictionMap:
    """Single-branch forward with alignment off; consults no target image."""
    _check_input(x)
    out = x
    for _, fn in model._steps():
        out = fn(out)
    return PredictionMap(logits=out)


def segmentation_loss(pred: PredictionMap, labels: np.ndarray) -> Tensor:
    """Mean per-pixel softmax cross-entropy against an integer label map."""
    return softmax_cross_entropy(pred.logits, labels)
