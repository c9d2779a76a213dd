"""Differentiable stereo operators: cost volumes, horizontal warping, sub-pixel
disparity regression, validity masks, and disparity-to-depth conversion.

Sign convention: a left-image pixel at column x corresponds to the right-image
pixel at column x - d with d >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError, ShapeError, Tensor

LEFT_REF = "left_ref"
RIGHT_REF = "right_ref"
SAMPLE_LEFT_FROM_RIGHT = "sample_left_from_right"
SAMPLE_RIGHT_FROM_LEFT = "sample_right_from_left"


@dataclass
class CostVolume:
    """Concatenated-feature matching volume of shape [2F, D+1, H, W].

    Channels [:F] hold the reference features repeated per hypothesis;
    channels [F:] hold the other view's features shifted by each hypothesis d,
    zero where the shifted source falls outside the image.
    """

    tensor: Tensor
    disparity_range: int
    direction: str


def build_cost_volume(f_ref, f_other, max_disparity, direction):
    """Stack reference and per-hypothesis-shifted other-view features.

    For ``left_ref`` the hypothesis d at column x samples the other view at
    x - d; for ``right_ref`` at x + d. Differentiable to both feature inputs.
    """
    if direction not in (LEFT_REF, RIGHT_REF):
        raise ValueError(f"unknown direction {direction!r}")
    if f_ref.shape != f_other.shape:
        raise ShapeError(f"feature shapes differ: {f_ref.shape} vs {f_other.shape}")
    if f_ref.ndim != 3:
        raise ShapeError(f"features must be [F,H,W], got {f_ref.shape}")
    n_feat, height, width = f_ref.shape
    if max_disparity >= width:
        raise ShapeError(f"disparity range {max_disparity} must be < width {width}")
    if max_disparity < 0:
        raise ShapeError("disparity range must be >= 0")

    hyps = max_disparity + 1
    vol = np.zeros((2 * n_feat, hyps, height, width))
    vol[:n_feat] = f_ref.data[:, None, :, :]
    for d in range(hyps):
        if direction == LEFT_REF:
            vol[n_feat:, d, :, d:] = f_other.data[:, :, :width - d]
        else:
            vol[n_feat:, d, :, :width - d] = f_other.data[:, :, d:]
    out = Tensor._from_array(vol)
    if ad._should_record(f_ref, f_other):
        def bwd(g):
            if f_ref.requires_grad:
                f_ref._accumulate(g[:n_feat].sum(axis=1))
            if f_other.requires_grad:
                go = np.zeros(f_other.shape)
                for d in range(hyps):
                    if direction == LEFT_REF:
                        go[:, :, :width - d] += g[n_feat:, d, :, d:]
                    else:
                        go[:, :, d:] += g[n_feat:, d, :, :width - d]
                f_other._accumulate(go)
        ad._record(out, (f_ref, f_other), bwd)
    return CostVolume(out, max_disparity, direction)


def soft_argmin(cost_logits):
    """Expected disparity under a softmax over negated costs; sub-pixel, in [0, D]."""
    if cost_logits.ndim != 3:
        raise ShapeError(f"cost logits must be [D+1,H,W], got {cost_logits.shape}")
    hyps = cost_logits.shape[0]
    probs = ad.softmax_axis(ad.neg(cost_logits), 0)
    levels = np.broadcast_to(
        np.arange(hyps, dtype=np.float64)[:, None, None], cost_logits.shape
    )
    weighted = ad.mul(probs, Tensor._from_array(levels.copy()))
    return ad.reduce_sum(weighted, axes=(0,))


def warp_horizontal(source, disparity, direction):
    """Sample ``source`` along rows through a disparity field.

    ``sample_left_from_right``: out(y,x) = source(y, x - d(y,x)).
    ``sample_right_from_left``: out(y,x) = source(y, x + d(y,x)).
    Linear interpolation in x; out-of-range samples clamp to the border
    column. Differentiable with respect to both inputs. ``source`` may be
    [C,H,W] or [H,W]; the output keeps the source's rank.
    """
    if direction == SAMPLE_LEFT_FROM_RIGHT:
        sign = -1.0
    elif direction == SAMPLE_RIGHT_FROM_LEFT:
        sign = 1.0
    else:
        raise ValueError(f"unknown direction {direction!r}")
    squeeze = source.ndim == 2
    src = ad.reshape(source, (1,) + source.shape) if squeeze else source
    if src.ndim != 3:
        raise ShapeError(f"source must be [C,H,W] or [H,W], got {source.shape}")
    channels, height, width = src.shape
    if disparity.shape != (height, width):
        raise ShapeError(
            f"disparity shape {disparity.shape} does not match image {height}x{width}"
        )

    xs = np.arange(width, dtype=np.float64)[None, :] + sign * disparity.data
    x0 = np.floor(xs)
    frac = xs - x0
    x0c = np.clip(x0, 0, width - 1).astype(np.intp)
    x1c = np.clip(x0 + 1, 0, width - 1).astype(np.intp)

    left_vals = src.data[:, np.arange(height)[:, None], x0c]
    right_vals = src.data[:, np.arange(height)[:, None], x1c]
    res = (1.0 - frac) * left_vals + frac * right_vals
    out = Tensor._from_array(res)
    if ad._should_record(src, disparity):
        def bwd(g):
            if src.requires_grad:
                gs = np.zeros(src.shape)
                ci = np.arange(channels)[:, None, None]
                yi = np.arange(height)[None, :, None]
                np.add.at(gs, (ci, yi, x0c[None]), g * (1.0 - frac))
                np.add.at(gs, (ci, yi, x1c[None]), g * frac)
                src._accumulate(gs)
            if disparity.requires_grad:
                ddisp = sign * ((right_vals - left_vals) * g).sum(axis=0)
                disparity._accumulate(ddisp)
        ad._record(out, (src, disparity), bwd)
    return ad.reshape(out, source.shape) if squeeze else out


def valid_region_mask(height, width, max_disparity, side):
    """0/1 mask excluding the disparity-range border band from the loss.

    The left mask zeroes columns [0, D); the right mask zeroes columns
    [W-D, W). These are the columns where horizontal warping has no valid
    source in the other view.
    """
    if side not in ("left", "right"):
        raise ValueError(f"unknown side {side!r}")
    if max_disparity >= width:
        raise ShapeError(f"disparity range {max_disparity} must be < width {width}")
    mask = np.ones((height, width))
    if max_disparity > 0:
        if side == "left":
            mask[:, :max_disparity] = 0.0
        else:
            mask[:, width - max_disparity:] = 0.0
    return Tensor._from_array(mask)


def depth_from_disparity(disparity, baseline_b, focal_f):
    """Depth = b*f/d per pixel, with zero-disparity pixels masked out.

    Returns (depth, validity): invalid pixels carry a 0.0 sentinel in the
    depth buffer and a 0 in the validity mask instead of an Inf.
    """
    if baseline_b <= 0 or focal_f <= 0:
        raise DomainError("baseline and focal length must be positive")
    valid = disparity.data > 0
    safe = np.where(valid, disparity.data, 1.0)
    depth = np.where(valid, baseline_b * focal_f / safe, 0.0)
    out = Tensor._from_array(depth)
    if ad._should_record(disparity):
        def bwd(g):
            disparity._accumulate(
                np.where(valid, -baseline_b * focal_f / (safe * safe), 0.0) * g
            )
        ad._record(out, (disparity,), bwd)
    return out, Tensor._from_array(valid.astype(np.float64))
