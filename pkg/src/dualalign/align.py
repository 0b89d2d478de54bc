"""Channel-wise feature statistics, alignment, and style/content losses.

Per batch item and channel, a feature map has a spatial mean mu_c and an
eps-stabilized standard deviation sigma_c = sqrt(var_c + eps). Alignment
rescales a source map so its channel statistics match a target map's:

    out = sigma_t * (F_s - mu_s) / sigma_s + mu_t

computed as (F_s - mu_s) * (sigma_t / sigma_s) + mu_t so that aligning a
map with itself reproduces it to rounding. The same eps enters every sigma.

Everything here is differentiable through the statistics; call sites that
want a constant target branch detach explicitly (content_loss and
style_loss detach their target arguments themselves, since their targets
are fixed-encoder features by contract).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (Tensor, accumulate_grad, active_tape, mean_all,
                     spatial_mean, sqrt)

DEFAULT_EPS = 1e-5


@dataclass
class ChannelStats:
    """Per-item, per-channel spatial statistics, shapes (n, c, 1, 1)."""

    mean: Tensor
    std: Tensor
    eps: float


@dataclass
class GramMatrix:
    """Channel-by-channel inner products, shape (n, c, c)."""

    values: Tensor
    normalized: bool


def channel_stats(feat: Tensor, eps: float = DEFAULT_EPS) -> ChannelStats:
    """Spatial mean and eps-stabilized std per batch item and channel."""
    mu = spatial_mean(feat)
    centered = feat - mu
    var = spatial_mean(centered * centered)
    std = sqrt(var + eps)
    return ChannelStats(mean=mu, std=std, eps=eps)


def adain(feat_src: Tensor, feat_tgt: Tensor, eps: float = DEFAULT_EPS) -> Tensor:
    """Shift the source map's channel statistics onto the target's.

    Spatial sizes may differ (statistics are spatial reductions). The
    target batch must match the source batch or be 1 (broadcast). Output
    spatial size equals the source's. Gradients flow into both arguments.
    """
    cs, ct = feat_src.data.shape[1], feat_tgt.data.shape[1]
    if cs != ct:
        raise ValueError(f"channel mismatch: source has {cs} channels, target has {ct}")
    ns, nt = feat_src.data.shape[0], feat_tgt.data.shape[0]
    if nt not in (1, ns):
        raise ValueError(f"batch mismatch: source batch {ns}, target batch {nt}")
    s = channel_stats(feat_src, eps)
    t = channel_stats(feat_tgt, eps)
    scale = t.std / s.std
    return (feat_src - s.mean) * scale + t.mean


def gram(feat: Tensor, normalized: bool = True) -> GramMatrix:
    """Per-item Gram matrix of the channel-flattened map: F_r @ F_r^T.

    ``normalized`` divides by h*w so layers of different spatial size
    contribute comparably; the raw sum is available with False.
    """
    if feat.data.ndim != 4:
        raise ValueError(f"gram expects a 4-D tensor, got shape {feat.data.shape}")
    n, c, h, w = feat.data.shape
    hw = h * w
    flat = feat.data.reshape(n, c, hw)
    values = flat @ flat.transpose(0, 2, 1)
    if normalized:
        values = values / hw

    out = Tensor(values, requires_grad=feat.requires_grad)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        def backward():
            g = out.grad
            if g is None:
                return
            gf = (g + g.transpose(0, 2, 1)) @ flat
            if normalized:
                gf = gf / hw
            accumulate_grad(feat, gf.reshape(n, c, h, w))
        tape.record(backward)
    return GramMatrix(values=out, normalized=normalized)


def _mse(a: Tensor, b: Tensor) -> Tensor:
    diff = a - b
    return mean_all(diff * diff)


def content_loss(feat_synth: Tensor, feat_target: Tensor) -> Tensor:
    """Mean squared difference; the target enters as a constant."""
    if feat_synth.data.shape != feat_target.data.shape:
        raise ValueError(
            f"shape mismatch: {feat_synth.data.shape} vs {feat_target.data.shape}")
    return _mse(feat_synth, feat_target.detach())


def style_loss(synth_feats: list[Tensor], target_feats: list[Tensor],
               normalized: bool = True) -> Tensor:
    """Sum over four layers of the Gram-matrix MSE; target Grams are constants."""
    if len(synth_feats) != 4 or len(target_feats) != 4:
        raise ValueError(
            f"style_loss expects 4 feature layers per side, got "
            f"{len(synth_feats)} and {len(target_feats)}")
    total = None
    for i, (fs, ft) in enumerate(zip(synth_feats, target_feats)):
        if fs.data.shape[1] != ft.data.shape[1]:
            raise ValueError(
                f"layer {i + 1} channel mismatch: {fs.data.shape[1]} vs {ft.data.shape[1]}")
        g_s = gram(fs, normalized).values
        g_t = gram(ft.detach(), normalized).values
        term = _mse(g_s, g_t)
        total = term if total is None else total + term
    return total


def stats_arrays(feat: np.ndarray, eps: float = DEFAULT_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Plain-numpy channel statistics for reporting, shapes (n, c)."""
    mu = feat.mean(axis=(2, 3))
    var = ((feat - mu[:, :, None, None]) ** 2).mean(axis=(2, 3))
    return mu, np.sqrt(var + eps)
