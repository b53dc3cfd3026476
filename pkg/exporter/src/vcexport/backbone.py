"""The 16-layer convnet trunk up to its fourth pooling stage: 512 channels at
stride 16.  Weights load from a local file (with an optional checksum); when
no file is given the trunk is initialized deterministically from a seed,
which keeps geometry and byte-level determinism testable without a model
zoo.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch
from torch import nn

# convolution widths between poolings, through the fourth pool
_TRUNK = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M")

STRIDE = 16
RECEPTIVE_OFFSET = 8
DEPTH = 512

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class WeightError(RuntimeError):
    pass


def build_trunk() -> nn.Sequential:
    layers: list[nn.Module] = []
    in_ch = 3
    for item in _TRUNK:
        if item == "M":
            layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
        else:
            layers.append(nn.Conv2d(in_ch, item, kernel_size=3, padding=1))
            layers.append(nn.ReLU(inplace=True))
            in_ch = item
    return nn.Sequential(*layers)


def _init_deterministic(trunk: nn.Sequential, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for m in trunk.modules():
        if isinstance(m, nn.Conv2d):
            # small-gain orthogonal-ish init keeps activations finite through
            # 13 conv layers without pretrained statistics
            fan_in = m.in_channels * 9
            std = (2.0 / fan_in) ** 0.5
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                m.bias.zero_()


def load_trunk(weights: str | Path | None = None,
               weights_sha256: str | None = None, seed: int = 0) -> nn.Sequential:
    """Trunk with pretrained weights when available, else seeded init.

    Accepts either a bare trunk state dict or a full backbone checkpoint
    whose conv keys are prefixed with "features.".
    """
    trunk = build_trunk()
    if weights is None:
        _init_deterministic(trunk, seed)
    else:
        raw = Path(weights).read_bytes()
        if weights_sha256 is not None:
            digest = hashlib.sha256(raw).hexdigest()
            if digest != weights_sha256.lower():
                raise WeightError(
                    f"weight checksum mismatch: {digest} != {weights_sha256}")
        state = torch.load(weights, map_location="cpu", weights_only=True)
        if any(k.startswith("features.") for k in state):
            state = {k[len("features."):]: v for k, v in state.items()
                     if k.startswith("features.")}
        own = trunk.state_dict()
        state = {k: v for k, v in state.items() if k in own}
        missing = set(own) - set(state)
        if missing:
            raise WeightError(f"weight file lacks parameters: {sorted(missing)[:4]}")
        trunk.load_state_dict(state)
    trunk.eval()
    for p in trunk.parameters():
        p.requires_grad_(False)
    return trunk


def extract_features(trunk: nn.Sequential, image: np.ndarray,
                     normalize: bool = True) -> np.ndarray:
    """Fourth-pool activations of an (H, W, 3) uint8 image as
    (H//16, W//16, 512) float32."""
    x = torch.from_numpy(np.array(image, copy=True)).float() / 255.0
    x = x.permute(2, 0, 1).unsqueeze(0)
    if normalize:
        mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
        x = (x - mean) / std
    with torch.no_grad():
        y = trunk(x)
    return y.squeeze(0).permute(1, 2, 0).contiguous().numpy().astype(np.float32)
