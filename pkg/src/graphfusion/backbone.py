"""Per-modality feature extraction with structure-salience attention.

Each branch runs two 3x3 conv + ReLU stages on its single-channel input,
then a salience stage: a 3x3 conv followed by sliding max and average pools
(window 3, stride 1, padding 1, size-preserving) whose responses are
combined per modality, multiplicatively for infrared (salient structures
gate each other) and additively for visible (texture accumulates).  The
combined map is reweighted per channel by a squeeze-excite style bottleneck
(global average pool, linear down to C/r, ReLU, linear back to C, sigmoid).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from . import ops
from .config import FusionConfig
from .tensor import ShapeError, Tensor

MODALITIES = ("ir", "vis")


@dataclass
class BranchFeatures:
    """The three per-branch feature maps, all (N, C, H, W)."""

    modality: str
    f1: Tensor
    f2: Tensor
    f3: Tensor

    def as_list(self) -> list[Tensor]:
        return [self.f1, self.f2, self.f3]


def channel_attention(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """Per-channel weights in (0, 1) from a squeeze-excite bottleneck."""
    n, c = x.shape[0], x.shape[1]
    pooled = ops.global_avgpool(x)
    hidden = ops.relu(ops.fully_connected(pooled, params[f"{prefix}.fc1.weight"], params[f"{prefix}.fc1.bias"]))
    raw = ops.fully_connected(hidden, params[f"{prefix}.fc2.weight"], params[f"{prefix}.fc2.bias"])
    return ops.reshape(ops.sigmoid(raw), (n, c, 1, 1))


def salience(x: Tensor, params: Mapping[str, Tensor], modality: str) -> Tensor:
    """Structure-salience stage for one modality; preserves (N, C, H, W)."""
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")
    prefix = f"salience.{modality}"
    y = ops.conv2d(x, params[f"{prefix}.conv.weight"], params[f"{prefix}.conv.bias"], 1, 1)
    peaks = ops.maxpool2d(y, 3, 1, 1)
    smooth = ops.avgpool2d(y, 3, 1, 1)
    if modality == "ir":
        combined = ops.mul(peaks, smooth)
    else:
        combined = ops.add(peaks, smooth)
    weight = channel_attention(combined, params, prefix)
    return ops.mul(combined, weight)


def extract(image: Tensor, params: Mapping[str, Tensor], modality: str, config: FusionConfig) -> BranchFeatures:
    """Run one branch on a (N, 1, H, W) image in [0, 1]."""
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")
    if image.ndim != 4 or image.shape[1] != 1:
        raise ShapeError(f"extract: expected (N, 1, H, W) input, got {image.shape}")
    prefix = f"extract.{modality}"
    f1 = ops.relu(ops.conv2d(image, params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"], 1, 1))
    f2 = ops.relu(ops.conv2d(f1, params[f"{prefix}.conv2.weight"], params[f"{prefix}.conv2.bias"], 1, 1))
    f3 = salience(f2, params, modality) if config.use_salience else f2
    return BranchFeatures(modality=modality, f1=f1, f2=f2, f3=f3)
