"""Image-domain operations the detector never performs itself: loading,
cropping, rescaling to a target short edge, and occluder compositing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image


class ImageError(RuntimeError):
    pass


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as e:
        raise ImageError(f"unreadable image {path}: {e}") from None


def crop(image: np.ndarray, box) -> np.ndarray:
    """Crop to an (x1, y1, x2, y2) pixel box, clamped to the image."""
    h, w = image.shape[:2]
    x1, y1, x2, y2 = (int(round(v)) for v in box)
    x1, y1 = max(0, x1), max(0, y1)
    x2, y2 = min(w, x2), min(h, y2)
    if x2 <= x1 or y2 <= y1:
        raise ImageError(f"crop box {box} empty within image {w}x{h}")
    return image[y1:y2, x1:x2]


def resize_short_edge(image: np.ndarray, short_edge: int) -> np.ndarray:
    """Bilinear resize so min(height, width) == short_edge."""
    h, w = image.shape[:2]
    rho = short_edge / min(h, w)
    if h <= w:
        nh, nw = short_edge, int(round(w * rho))
    else:
        nh, nw = int(round(h * rho)), short_edge
    pil = Image.fromarray(image)
    return np.asarray(pil.resize((nw, nh), Image.BILINEAR))


@dataclass(frozen=True)
class OccluderPaste:
    """A segment pasted onto the scene before feature extraction."""

    patch: np.ndarray        # (h, w, 3) uint8 appearance
    mask: np.ndarray         # (h, w) bool segment support
    top: int
    left: int


def composite(image: np.ndarray, pastes) -> np.ndarray:
    """Superimpose occluder segments; pixels outside their masks are kept."""
    out = image.copy()
    h, w = out.shape[:2]
    for p in pastes:
        mh, mw = p.mask.shape
        r0, c0 = max(0, p.top), max(0, p.left)
        r1, c1 = min(h, p.top + mh), min(w, p.left + mw)
        if r0 >= r1 or c0 >= c1:
            continue
        sub = p.mask[r0 - p.top:r1 - p.top, c0 - p.left:c1 - p.left]
        out[r0:r1, c0:c1][sub] = p.patch[r0 - p.top:r1 - p.top,
                                         c0 - p.left:c1 - p.left][sub]
    return out
