"""Pose augmentation: identity-perturbing, pose-preserving corruption of the
pose-source frame.

The transform first rescales the image independently along the horizontal and
vertical axes (re-centered on the original canvas with zero padding), then
applies each photometric op with its own probability, in the fixed order
blur -> sharpen -> contrast -> jpeg. Ops may stack. Everything is a pure
function of (image, config, rng), so a given generator state reproduces the
output bit for bit.
"""
from __future__ import annotations

import io

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .config import AugmentConfig
from .dataset import bilinear_resize

OP_ORDER = ("blur", "sharpen", "contrast", "jpeg")


def _rescale_to_canvas(image: np.ndarray, sx: float, sy: float) -> np.ndarray:
    """Scale by (sx, sy) about the image center, then center-crop / zero-pad
    back to the input resolution."""
    h, w = image.shape[:2]
    nh, nw = max(1, int(round(h * sy))), max(1, int(round(w * sx)))
    if (nh, nw) == (h, w):
        return image.copy()
    scaled = bilinear_resize(image, nh, nw)
    out = np.zeros_like(image)
    # offsets of the destination window (canvas) and source window (scaled)
    dy, dx = (h - nh) // 2, (w - nw) // 2
    sy0, sx0 = max(-dy, 0), max(-dx, 0)
    dy0, dx0 = max(dy, 0), max(dx, 0)
    ch, cw = min(nh - sy0, h - dy0), min(nw - sx0, w - dx0)
    out[dy0:dy0 + ch, dx0:dx0 + cw] = scaled[sy0:sy0 + ch, sx0:sx0 + cw]
    return out


def scale_point(point, image_hw, sx: float, sy: float):
    """Where a source-image point lands after _rescale_to_canvas.

    Follows the half-pixel resize convention: x' = (x + 0.5) * s - 0.5, then
    shifted by the center placement offset.
    """
    h, w = image_hw
    nh, nw = max(1, int(round(h * sy))), max(1, int(round(w * sx)))
    x, y = point
    xs = (x + 0.5) * (nw / w) - 0.5
    ys = (y + 0.5) * (nh / h) - 0.5
    return (xs + (w - nw) // 2, ys + (h - nh) // 2)


def _blur(image: np.ndarray, sigma: float) -> np.ndarray:
    return gaussian_filter(image, sigma=(sigma, sigma, 0), mode="nearest")


def _sharpen(image: np.ndarray, amount: float, sigma: float = 1.0) -> np.ndarray:
    return image + amount * (image - _blur(image, sigma))


def _contrast(image: np.ndarray, factors: np.ndarray) -> np.ndarray:
    # per-channel mean and factor: scales deviations about each channel's own
    # mean, which perturbs color balance (an identity cue) on non-gray images
    mean = image.mean(axis=(0, 1), keepdims=True)
    return (image - mean) * factors[None, None, :] + mean


def _jpeg(image: np.ndarray, quality: int) -> np.ndarray:
    arr = np.clip((image + 1.0) * 127.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    with Image.open(buf) as im:
        dec = np.asarray(im.convert("RGB"), dtype=np.float64)
    return dec / 127.5 - 1.0


def pose_augment(image: np.ndarray, config: AugmentConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Apply the pose augmentation to an RGB image in [-1, 1].

    Output stays in [-1, 1]. Draw order is fixed (scales first, then one
    Bernoulli + parameter draw per op in OP_ORDER) so the rng stream is
    stable regardless of which ops fire.
    """
    config.validate()
    if not config.enabled:
        return image.copy()
    lo, hi = config.scale_range
    sx = float(rng.uniform(lo, hi))
    sy = float(rng.uniform(lo, hi))
    out = _rescale_to_canvas(image, sx, sy)

    gates = {op: float(rng.uniform()) < config.op_probabilities[op] for op in OP_ORDER}
    blur_sigma = float(rng.uniform(*config.blur_sigma_range))
    sharpen_amount = float(rng.uniform(*config.sharpen_amount_range))
    contrast_factors = rng.uniform(*config.contrast_factor_range, size=3)
    q_lo, q_hi = config.jpeg_quality_range
    jpeg_quality = int(rng.integers(q_lo, q_hi + 1))

    if gates["blur"]:
        out = _blur(out, blur_sigma)
    if gates["sharpen"]:
        out = _sharpen(out, sharpen_amount)
    if gates["contrast"]:
        out = _contrast(out, contrast_factors)
    if gates["jpeg"]:
        out = _jpeg(np.clip(out, -1.0, 1.0), jpeg_quality)
    return np.clip(out, -1.0, 1.0)


def make_augment_fn(config: AugmentConfig):
    """Adapter with the (image, rng) signature used by the episode sampler."""
    def fn(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return pose_augment(image, config, rng)
    return fn
