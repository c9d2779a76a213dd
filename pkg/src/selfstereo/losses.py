"""Four-part self-supervised stereo objective with region masking.

The training signal combines, per side, an appearance term (SSIM + L1 +
gradient L1 between an image and its warped reconstruction), an
edge-aware second-order smoothness term on the disparity field, a
left-right cyclic consistency term, and a perceptual term computed in
the feature space of a frozen convolutional extractor.  Every term is
averaged over the pixels selected by a binary validity mask; excluded
pixels contribute nothing to the value or the gradient.

To keep excluded pixels truly inert, the appearance and perceptual
terms multiply both images by the mask *before* any windowed statistic
or convolution is taken, so a masked pixel can never leak into a
neighbouring window.  Window statistics therefore treat excluded
pixels as zero intensity.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError, ShapeError, Tensor
from .stereo import SAMPLE_LEFT_FROM_RIGHT, SAMPLE_RIGHT_FROM_LEFT, warp_horizontal

# Stabilizers for a dynamic range of 1.0 (images live in [0, 1]).
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    """Weights of the four objective parts plus the appearance mixing factors.

    ``w_appearance``/``w_smoothness``/``w_consistency``/``w_perceptual``
    scale the four parts; ``alpha1``/``alpha2``/``alpha3`` mix the SSIM,
    absolute-difference, and gradient-difference terms inside the
    appearance loss.
    """

    w_appearance: float = 1.0
    w_smoothness: float = 0.1
    w_consistency: float = 1.5
    w_perceptual: float = 0.3
    alpha1: float = 0.85
    alpha2: float = 0.15
    alpha3: float = 0.15

    def __post_init__(self):
        for name in (
            "w_appearance",
            "w_smoothness",
            "w_consistency",
            "w_perceptual",
            "alpha1",
            "alpha2",
            "alpha3",
        ):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"loss weight {name} must be a non-negative real, got {value}")


@dataclass(frozen=True)
class LossReport:
    """Scalar values of every loss component for one training step."""

    total: float
    appearance_l: float
    appearance_r: float
    smooth_l: float
    smooth_r: float
    consistency_l: float
    consistency_r: float
    perceptual_l: float
    perceptual_r: float

    def weighted_sum(self, weights):
        """Recombine the components with ``weights``; equals ``total`` up to rounding."""
        return (
            weights.w_appearance * (self.appearance_l + self.appearance_r)
            + weights.w_smoothness * (self.smooth_l + self.smooth_r)
            + weights.w_consistency * (self.consistency_l + self.consistency_r)
            + weights.w_perceptual * (self.perceptual_l + self.perceptual_r)
        )


def _as_chw(image):
    """Coerce a [H,W] or [C,H,W] array/tensor to a [C,H,W] Tensor."""
    t = image if isinstance(image, Tensor) else Tensor(image)
    if t.ndim == 2:
        t = ad.reshape(t, (1,) + t.shape)
    if t.ndim != 3:
        raise ShapeError(f"expected an image of shape [H,W] or [C,H,W], got {t.shape}")
    return t


def _as_mask(mask, shape_hw):
    t = mask if isinstance(mask, Tensor) else Tensor(mask)
    if t.shape != tuple(shape_hw):
        raise ShapeError(f"mask shape {t.shape} does not match image plane {tuple(shape_hw)}")
    vals = t.data
    if not np.all((vals == 0.0) | (vals == 1.0)):
        raise DomainError("validity mask must be binary (0/1)")
    return t


def _mask_channels(mask, channels):
    m = ad.reshape(mask, (1,) + mask.shape)
    if channels == 1:
        return m
    return ad.concat([m] * channels, axis=0)


def _masked_mean(per_pixel, mask):
    """Mean of a [H,W] map over the pixels where ``mask`` is 1."""
    count = float(mask.data.sum())
    if count == 0.0:
        raise DomainError("validity mask selects no pixels")
    return ad.reduce_sum(per_pixel * mask) * (1.0 / count)


def _channel_mean(t):
    return ad.reduce_mean(t, axes=(0,))


def _box_filter_3x3(x):
    """Per-channel 3x3 uniform filter, zero padding, output same shape."""
    channels = x.shape[0]
    kern = np.zeros((channels, channels, 3, 3))
    for c in range(channels):
        kern[c, c] = 1.0 / 9.0
    return ad.conv2d(x, Tensor(kern), Tensor(np.zeros(channels)), stride=1, padding=1)


def ssim(a, b):
    """Per-pixel structural similarity map of two [C,H,W] images in [0, 1].

    Local means, variances and covariance are taken over a 3x3 uniform
    window (zero padded), per channel.  Output values lie in [-1, 1];
    identical inputs map to exactly 1.
    """
    a, b = _as_chw(a), _as_chw(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim operands differ in shape: {a.shape} vs {b.shape}")
    for t in (a, b):
        if np.any(t.data < 0.0) or np.any(t.data > 1.0):
            raise DomainError("ssim expects image values in [0, 1]")
    mu_a = _box_filter_3x3(a)
    mu_b = _box_filter_3x3(b)
    e_aa = _box_filter_3x3(a * a)
    e_bb = _box_filter_3x3(b * b)
    e_ab = _box_filter_3x3(a * b)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    num = (mu_a * mu_b * 2.0 + SSIM_C1) * (cov * 2.0 + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def appearance_loss(i_ref, i_recon, mask, alpha1=0.85, alpha2=0.15, alpha3=0.15):
    """Masked photometric distance between an image and its reconstruction.

    Per pixel: ``alpha1 * (1 - SSIM)/2 + alpha2 * |I - I'| + alpha3 *
    (|dx I - dx I'| + |dy I - dy I'|)`` with forward-difference image
    gradients, averaged over channels, then averaged over the pixels
    selected by ``mask``.  Both images are multiplied by the mask up
    front so excluded pixels cannot enter any window or difference.
    """
    ref = _as_chw(i_ref)
    rec = _as_chw(i_recon)
    if ref.shape != rec.shape:
        raise ShapeError(f"image shapes differ: {ref.shape} vs {rec.shape}")
    mask = _as_mask(mask, ref.shape[1:])
    mc = _mask_channels(mask, ref.shape[0])
    ref = ref * mc
    rec = rec * mc

    dssim = (1.0 - ssim(ref, rec)) * 0.5
    l1 = (ref - rec).abs()
    grad_dx = (ad.diff_forward(ref, axis=2) - ad.diff_forward(rec, axis=2)).abs()
    grad_dy = (ad.diff_forward(ref, axis=1) - ad.diff_forward(rec, axis=1)).abs()
    per_pixel = _channel_mean(dssim * alpha1 + l1 * alpha2 + (grad_dx + grad_dy) * alpha3)
    return _masked_mean(per_pixel, mask)


def smoothness_loss(disparity, image, mask):
    """Edge-aware second-order smoothness of a disparity field.

    Masked mean of ``|d2x d| * exp(-|dx I|) + |d2y d| * exp(-|dy I|)``
    where the second differences are central with zeroed border rows or
    columns (so affine disparity fields cost exactly nothing) and the
    image gradient magnitudes are channel means of forward differences.
    """
    d = disparity if isinstance(disparity, Tensor) else Tensor(disparity)
    if d.ndim != 2:
        raise ShapeError(f"disparity must be [H,W], got {d.shape}")
    img = _as_chw(image)
    if img.shape[1:] != d.shape:
        raise ShapeError(f"image plane {img.shape[1:]} does not match disparity {d.shape}")
    mask = _as_mask(mask, d.shape)

    edge_x = _channel_mean(ad.diff_forward(img, axis=2).abs())
    edge_y = _channel_mean(ad.diff_forward(img, axis=1).abs())
    curve_x = ad.diff_second(d, axis=1).abs()
    curve_y = ad.diff_second(d, axis=0).abs()
    per_pixel = curve_x * (-edge_x).exp() + curve_y * (-edge_y).exp()
    return _masked_mean(per_pixel, mask)


def consistency_loss(d_left, d_right, mask, side="left"):
    """Cyclic left-right agreement of a disparity pair.

    For ``side="left"`` the left field is warped into the right view
    (sampled through the right field), warped back into the left view
    (sampled through the left field), and the masked mean absolute
    difference to the original left field is returned.  ``side="right"``
    runs the mirrored cycle.  Geometrically consistent fields are fixed
    points of the double warp, so the loss vanishes on them.
    """
    d_l = d_left if isinstance(d_left, Tensor) else Tensor(d_left)
    d_r = d_right if isinstance(d_right, Tensor) else Tensor(d_right)
    if d_l.shape != d_r.shape:
        raise ShapeError(f"disparity shapes differ: {d_l.shape} vs {d_r.shape}")
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    mask = _as_mask(mask, d_l.shape)

    if side == "left":
        d_r_from_l = warp_horizontal(d_l, d_r, SAMPLE_RIGHT_FROM_LEFT)
        cycled = warp_horizontal(d_r_from_l, d_l, SAMPLE_LEFT_FROM_RIGHT)
        residual = (cycled - d_l).abs()
    else:
        d_l_from_r = warp_horizontal(d_r, d_l, SAMPLE_LEFT_FROM_RIGHT)
        cycled = warp_horizontal(d_l_from_r, d_r, SAMPLE_RIGHT_FROM_LEFT)
        residual = (cycled - d_r).abs()
    return _masked_mean(residual, mask)


class FixedFeatureNet:
    """Frozen convolutional feature extractor for the perceptual term.

    A stack of 3x3 stride-2 convolutions with ReLU activations.  Weights
    are drawn once from ``uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`` with
    a seeded generator and never trained; biases are zero.  An empty
    ``channels`` tuple yields the identity map, under which the
    perceptual loss degenerates to a plain mean squared error.
    """

    KERNEL = 3
    STRIDE = 2

    def __init__(self, in_channels=1, channels=(8, 16, 16), seed=0):
        if in_channels < 1:
            raise ValueError("in_channels must be positive")
        rng = np.random.default_rng(seed)
        self.in_channels = int(in_channels)
        self.channels = tuple(int(c) for c in channels)
        self.seed = int(seed)
        self.layers = []
        c_prev = self.in_channels
        for c_out in self.channels:
            fan_in = c_prev * self.KERNEL * self.KERNEL
            bound = 1.0 / np.sqrt(fan_in)
            weights = Tensor(rng.uniform(-bound, bound, size=(c_out, c_prev, self.KERNEL, self.KERNEL)))
            bias = Tensor(np.zeros(c_out))
            self.layers.append((weights, bias))
            c_prev = c_out

    @classmethod
    def identity(cls, in_channels=1):
        """Degenerate extractor that returns its input unchanged."""
        return cls(in_channels=in_channels, channels=(), seed=0)

    def apply(self, image):
        x = _as_chw(image)
        if x.shape[0] != self.in_channels:
            raise ShapeError(f"feature net expects {self.in_channels} channels, got {x.shape[0]}")
        for weights, bias in self.layers:
            x = ad.conv2d(x, weights, bias, stride=self.STRIDE, padding=self.KERNEL // 2)
            x = ad.relu(x)
        return x


def perceptual_loss(i_ref, i_recon, feature_net):
    """Mean squared distance between frozen-network features of two images.

    ``(1/N) * ||f(I_ref) - f(I_recon)||^2`` over the N feature elements.
    The reference image is detached, so gradients reach only the
    reconstruction branch; the extractor's parameters carry no gradient
    by construction.
    """
    ref = _as_chw(i_ref).detach()
    rec = _as_chw(i_recon)
    if ref.shape != rec.shape:
        raise ShapeError(f"image shapes differ: {ref.shape} vs {rec.shape}")
    return ad.reduce_mean((feature_net.apply(ref) - feature_net.apply(rec)).square())


def total_loss(
    pair,
    d_left,
    d_right,
    reconstructions,
    masks,
    weights=None,
    feature_net=None,
    perceptual_both_sides=True,
):
    """Weighted four-part objective over both views.

    ``pair`` provides the observed images (any object with ``left`` and
    ``right`` attributes, or a 2-tuple), ``reconstructions`` the warped
    counterparts ``(recon_left, recon_right)``, and ``masks`` the binary
    validity masks ``(mask_left, mask_right)``.  Returns the scalar loss
    tensor (for backpropagation) together with a :class:`LossReport` of
    the unweighted component values.

    The perceptual term needs ``feature_net``; it may be omitted only
    when ``w_perceptual`` is zero.  ``perceptual_both_sides=False``
    restricts the perceptual term to the left reconstruction.
    """
    w = weights if weights is not None else LossWeights()
    if hasattr(pair, "left") and hasattr(pair, "right"):
        image_l, image_r = pair.left, pair.right
    else:
        image_l, image_r = pair
    image_l = _as_chw(image_l)
    image_r = _as_chw(image_r)
    recon_l, recon_r = (_as_chw(r) for r in reconstructions)
    mask_l = _as_mask(masks[0], image_l.shape[1:])
    mask_r = _as_mask(masks[1], image_r.shape[1:])

    app_l = appearance_loss(image_l, recon_l, mask_l, w.alpha1, w.alpha2, w.alpha3)
    app_r = appearance_loss(image_r, recon_r, mask_r, w.alpha1, w.alpha2, w.alpha3)
    smo_l = smoothness_loss(d_left, image_l, mask_l)
    smo_r = smoothness_loss(d_right, image_r, mask_r)
    con_l = consistency_loss(d_left, d_right, mask_l, side="left")
    con_r = consistency_loss(d_left, d_right, mask_r, side="right")

    if feature_net is None:
        if w.w_perceptual != 0.0:
            raise ValueError("w_perceptual is non-zero but no feature net was given")
        per_l = Tensor(0.0)
        per_r = Tensor(0.0)
    else:
        mc_l = _mask_channels(mask_l, image_l.shape[0])
        mc_r = _mask_channels(mask_r, image_r.shape[0])
        per_l = perceptual_loss(image_l * mc_l, recon_l * mc_l, feature_net)
        if perceptual_both_sides:
            per_r = perceptual_loss(image_r * mc_r, recon_r * mc_r, feature_net)
        else:
            per_r = Tensor(0.0)

    total = (
        (app_l + app_r) * w.w_appearance
        + (smo_l + smo_r) * w.w_smoothness
        + (con_l + con_r) * w.w_consistency
        + (per_l + per_r) * w.w_perceptual
    )
    report = LossReport(
        total=float(total.data),
        appearance_l=float(app_l.data),
        appearance_r=float(app_r.data),
        smooth_l=float(smo_l.data),
        smooth_r=float(smo_r.data),
        consistency_l=float(con_l.data),
        consistency_r=float(con_r.data),
        perceptual_l=float(per_l.data),
        perceptual_r=float(per_r.data),
    )
    return total, report
