"""Disparity metrics, reconstruction scoring, and a SAD block-match baseline.

All metrics are masked means over an explicit binary validity mask, so
the same functions serve non-occluded (Out-Noc) and all-pixel (Out-All)
accounting.  The block matcher is a deliberately naive exhaustive SAD
search used as a learning-free oracle: on noise-free integer-disparity
scenes it must recover the ground truth exactly, which validates the
generator, the metrics, and the disparity sign convention together.
"""

from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import DomainError, ShapeError, Tensor
from .losses import ssim
from .stereo import SAMPLE_LEFT_FROM_RIGHT, valid_region_mask, warp_horizontal


@dataclass(frozen=True)
class EvalReport:
    """Disparity accuracy and reconstruction quality for one evaluation."""

    mae: float
    outlier_rate_noc: float
    outlier_rate_all: float
    recon_ssim: float
    recon_l1: float
    pixel_threshold: float = 3.0

    def __post_init__(self):
        if self.mae < 0:
            raise ValueError(f"mae must be non-negative, got {self.mae}")
        for name in ("outlier_rate_noc", "outlier_rate_all"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must be a fraction in [0,1], got {rate}")

    def text(self):
        """Human-readable ``metric = value`` lines."""
        return "\n".join(f"{f.name} = {getattr(self, f.name)!r}" for f in fields(self))

    @staticmethod
    def row_header():
        return " ".join(f.name for f in fields(EvalReport))

    def row(self):
        """Single machine-readable row matching :meth:`row_header`."""
        return " ".join(repr(float(getattr(self, f.name))) for f in fields(self))


def _plane(arr, name):
    a = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=float)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a [H,W] map, got shape {a.shape}")
    return a


def _checked_mask(mask, shape):
    if mask is None:
        return np.ones(shape)
    m = _plane(mask, "mask")
    if m.shape != shape:
        raise ShapeError(f"mask shape {m.shape} does not match {shape}")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise DomainError("validity mask must be binary (0/1)")
    if m.sum() == 0:
        raise DomainError("validity mask selects no pixels")
    return m


def mae(pred, gt, mask=None):
    """Mean absolute disparity deviation over masked pixels."""
    p = _plane(pred, "pred")
    g = _plane(gt, "gt")
    if p.shape != g.shape:
        raise ShapeError(f"disparity shapes differ: {p.shape} vs {g.shape}")
    m = _checked_mask(mask, p.shape)
    return float((np.abs(p - g) * m).sum() / m.sum())


def outlier_rate(pred, gt, threshold, mask=None):
    """Fraction of masked pixels whose error strictly exceeds ``threshold``."""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    p = _plane(pred, "pred")
    g = _plane(gt, "gt")
    if p.shape != g.shape:
        raise ShapeError(f"disparity shapes differ: {p.shape} vs {g.shape}")
    m = _checked_mask(mask, p.shape)
    outliers = (np.abs(p - g) > threshold).astype(float)
    return float((outliers * m).sum() / m.sum())


def reconstruction_metrics(i_ref, i_recon, mask=None):
    """Masked means of the SSIM map and |i_ref - i_recon|.

    Unlike the training losses, the images are not pre-masked here: the
    mask only selects which pixels of the quality maps are averaged.
    """
    with ad.no_grad():
        ref = i_ref if isinstance(i_ref, Tensor) else Tensor(np.asarray(i_ref, dtype=float))
        rec = i_recon if isinstance(i_recon, Tensor) else Tensor(np.asarray(i_recon, dtype=float))
        ssim_map = ssim(ref, rec).data.mean(axis=0)
        l1_map = np.abs(ref.data - rec.data)
        if l1_map.ndim == 3:
            l1_map = l1_map.mean(axis=0)
    m = _checked_mask(mask, ssim_map.shape)
    n = m.sum()
    return float((ssim_map * m).sum() / n), float((l1_map * m).sum() / n)


def block_match_baseline(pair, max_disparity, window):
    """Exhaustive SAD block matching on the left view.

    For each pixel the integer disparity in ``[0, max_disparity]``
    minimizing the window SAD between the left patch at x and the right
    patch at x-d, ties broken toward smaller d.  The per-pixel
    absolute-difference image is edge-replicated for the window sum, and
    hypotheses whose matched center x-d falls outside the frame are
    excluded.  Returns a [H,W] float map.
    """
    left = _plane(pair.left, "left image")
    right = _plane(pair.right, "right image")
    if left.shape != right.shape:
        raise ShapeError(f"pair shapes differ: {left.shape} vs {right.shape}")
    h, w = left.shape
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and positive, got {window}")
    if window > h or window > w:
        raise ShapeError(f"window {window} exceeds image extents {h}x{w}")
    if not 0 <= max_disparity < w:
        raise ValueError(f"max_disparity must lie in [0, {w - 1}], got {max_disparity}")

    r = window // 2
    cols = np.arange(w)
    costs = np.empty((max_disparity + 1, h, w))
    for d in range(max_disparity + 1):
        shifted = right[:, np.clip(cols - d, 0, w - 1)]
        diff = np.abs(left - shifted)
        padded = np.pad(diff, r, mode="edge")
        costs[d] = sliding_window_view(padded, (window, window)).sum(axis=(-2, -1))
        costs[d, :, :d] = np.inf
    return np.argmin(costs, axis=0).astype(float)


def evaluate_pair(pair, disparity_pred, max_disparity, pixel_threshold=3.0):
    """Score a predicted left disparity map against a pair's annotations.

    MAE, Out-Noc and the reconstruction metrics average over the
    non-occluded pixels inside the valid region; Out-All averages over
    the whole valid region.  The pair must carry ``gt_disparity_left``
    and ``occlusion_left``.
    """
    pred = _plane(disparity_pred, "pred")
    gt = _plane(pair.gt_disp_left, "gt")
    h, w = gt.shape
    valid = valid_region_mask(h, w, max_disparity, "left").data
    noc = valid * (1.0 - _plane(pair.occlusion_left, "occlusion"))
    with ad.no_grad():
        recon = warp_horizontal(
            Tensor(np.asarray(pair.right, dtype=float)),
            Tensor(pred),
            SAMPLE_LEFT_FROM_RIGHT,
        )
    recon_ssim, recon_l1 = reconstruction_metrics(
        np.asarray(pair.left, dtype=float), recon, mask=noc
    )
    return EvalReport(
        mae=mae(pred, gt, mask=noc),
        outlier_rate_noc=outlier_rate(pred, gt, pixel_threshold, mask=noc),
        outlier_rate_all=outlier_rate(pred, gt, pixel_threshold, mask=valid),
        recon_ssim=recon_ssim,
        recon_l1=recon_l1,
        pixel_threshold=float(pixel_threshold),
    )


def mean_report(reports):
    """Field-wise mean of several :class:`EvalReport` rows."""
    if not reports:
        raise ValueError("no reports to aggregate")
    values = {
        f.name: float(np.mean([getattr(r, f.name) for r in reports]))
        for f in fields(EvalReport)
    }
    return EvalReport(**values)
