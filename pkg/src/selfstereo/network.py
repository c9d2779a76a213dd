"""Symmetric stereo network: shared 2D feature extractor, dual cost volumes,
shared 3D regularizer, and sub-pixel disparity regression.

The architecture is a desk-scale analog of the pyramid-pooling stereo
networks: a cascade of 3x3 convolutions (the leading ones stride-2)
feeding a spatial-pyramid-pooling block, two cost volumes built at the
reduced resolution with ``max_disparity / downsample_factor``
hypotheses, a stack of 3x3x3 convolutions collapsing the feature axis
to one cost logit per hypothesis, trilinear upsampling back to full
resolution (which also rescales the disparity axis), and a soft-argmin
readout.  Both views run through the *same* parameter tensors, so the
left and right branches are weight-shared by construction.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .stereo import LEFT_REF, RIGHT_REF, build_cost_volume, soft_argmin


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyper-parameters of the toy stereo network.

    The defaults are desk-scale stand-ins; ``feature_channels`` and
    ``max_disparity`` scale up to full-size values unchanged.
    """

    feature_channels: int = 16
    num_2d_layers: int = 4
    num_3d_layers: int = 4
    downsample_factor: int = 4
    max_disparity: int = 16
    spp_pool_sizes: tuple = (2, 4)
    seed: int = 0

    def __post_init__(self):
        if self.downsample_factor not in (1, 2, 4):
            raise ValueError(f"downsample_factor must be 1, 2 or 4, got {self.downsample_factor}")
        if self.feature_channels < 1:
            raise ValueError("feature_channels must be >= 1")
        if self.num_2d_layers < 1 or self.num_3d_layers < 1:
            raise ValueError("layer counts must be >= 1")
        if self.num_2d_layers < self.num_stride_layers:
            raise ValueError(
                f"num_2d_layers={self.num_2d_layers} cannot realize a "
                f"downsample factor of {self.downsample_factor}"
            )
        if self.max_disparity < 1:
            raise ValueError("max_disparity must be >= 1")
        if self.max_disparity % self.downsample_factor != 0:
            raise ValueError(
                f"max_disparity {self.max_disparity} must be divisible by "
                f"downsample_factor {self.downsample_factor}"
            )
        object.__setattr__(self, "spp_pool_sizes", tuple(int(p) for p in self.spp_pool_sizes))
        if any(p < 1 for p in self.spp_pool_sizes):
            raise ValueError("spp_pool_sizes must be positive")

    @property
    def num_stride_layers(self):
        return int(round(math.log2(self.downsample_factor)))


class ModelParams(dict):
    """Ordered mapping of parameter name to trainable Tensor.

    Both network branches read from the same mapping, which is what
    makes the extractor and regularizer weight-shared.
    """

    def clone(self):
        """Deep copy with fresh gradient state."""
        return ModelParams((k, Tensor(v.data, requires_grad=True)) for k, v in self.items())

    def zero_grads(self):
        for t in self.values():
            t.zero_grad()

    def count(self):
        """Total number of scalar parameters."""
        return sum(t.size for t in self.values())


def _conv_shapes_2d(config):
    """(name, c_in, c_out, stride) for every 2D conv including the SPP fusion."""
    f = config.feature_channels
    shapes = []
    for i in range(config.num_2d_layers):
        c_in = 1 if i == 0 else f
        stride = 2 if i < config.num_stride_layers else 1
        shapes.append((f"f2d{i}", c_in, f, stride))
    fusion_in = f * (1 + len(config.spp_pool_sizes))
    shapes.append(("spp_fuse", fusion_in, f, 1))
    return shapes


def _conv_shapes_3d(config):
    """(name, c_in, c_out) for every 3D conv of the cost regularizer."""
    f = config.feature_channels
    shapes = []
    for i in range(config.num_3d_layers):
        c_in = 2 * f if i == 0 else f
        c_out = 1 if i == config.num_3d_layers - 1 else f
        shapes.append((f"c3d{i}", c_in, c_out))
    return shapes


def init_params(config):
    """Deterministic seeded initialization of every kernel and bias.

    Kernels are drawn from ``uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))``
    with ``np.random.default_rng(config.seed)`` in a fixed layer order;
    biases start at zero.  The same seed always yields bit-identical
    parameters.
    """
    rng = np.random.default_rng(config.seed)
    params = ModelParams()

    def draw(name, shape):
        fan_in = int(np.prod(shape[1:]))
        bound = 1.0 / math.sqrt(fan_in)
        params[f"{name}.weight"] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(shape[0]), requires_grad=True)

    for name, c_in, c_out, _stride in _conv_shapes_2d(config):
        draw(name, (c_out, c_in, 3, 3))
    for name, c_in, c_out in _conv_shapes_3d(config):
        draw(name, (c_out, c_in, 3, 3, 3))
    return params


def extract_features(image, params, config):
    """Shared-weight feature extraction: conv cascade plus pyramid pooling.

    ``image`` is [1,H,W] (or [H,W]) with H and W divisible by the
    downsample factor; the result is [feature_channels, H/s, W/s].  The
    pyramid block average-pools the cascade output at each configured
    window, upsamples every pooled map back bilinearly, concatenates
    them with the unpooled map, and fuses with one final 3x3 conv.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.ndim == 2:
        x = ad.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[0] != 1:
        raise ShapeError(f"expected a [1,H,W] image, got {x.shape}")
    s = config.downsample_factor
    if x.shape[1] % s or x.shape[2] % s:
        raise ShapeError(f"image extents {x.shape[1:]} must be divisible by {s}")

    for name, _c_in, _c_out, stride in _conv_shapes_2d(config)[:-1]:
        x = ad.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=stride, padding=1)
        x = ad.relu(x)

    h, w = x.shape[1], x.shape[2]
    branches = [x]
    for pool in config.spp_pool_sizes:
        pooled = ad.avg_pool2d(x, pool, pool)
        branches.append(ad.upsample_bilinear2d(pooled, h, w))
    fused = ad.concat(branches, axis=0)
    fused = ad.conv2d(fused, params["spp_fuse.weight"], params["spp_fuse.bias"], stride=1, padding=1)
    return ad.relu(fused)


def _regularize_cost(volume, params, config):
    """Shared 3D conv stack mapping [2F,D',h,w] to cost logits [1,D',h,w]."""
    x = volume
    last = config.num_3d_layers - 1
    for i, (name, _c_in, _c_out) in enumerate(_conv_shapes_3d(config)):
        x = ad.conv3d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=1, padding=1)
        if i != last:
            x = ad.relu(x)
    return x


def forward_pass(pair, params, config):
    """Full symmetric forward pass producing both disparity maps.

    Returns ``(d_l, d_r, cost_l, cost_r)`` where the disparity maps are
    [H,W] with values in [0, max_disparity] and the cost tensors are the
    full-resolution regularized volumes [D+1,H,W] feeding the
    soft-argmin readout.
    """
    if hasattr(pair, "left") and hasattr(pair, "right"):
        image_l, image_r = pair.left, pair.right
    else:
        image_l, image_r = pair

    feat_l = extract_features(image_l, params, config)
    feat_r = extract_features(image_r, params, config)

    s = config.downsample_factor
    coarse_d = config.max_disparity // s
    full_h = feat_l.shape[1] * s
    full_w = feat_l.shape[2] * s

    outputs = []
    for feats, direction in ((
        (feat_l, feat_r), LEFT_REF), ((feat_r, feat_l), RIGHT_REF)):
        volume = build_cost_volume(feats[0], feats[1], coarse_d, direction)
        logits = _regularize_cost(volume.tensor, params, config)
        logits = ad.upsample_trilinear3d(logits, config.max_disparity + 1, full_h, full_w)
        logits = ad.reshape(logits, logits.shape[1:])
        outputs.append((soft_argmin(logits), logits))

    (d_l, cost_l), (d_r, cost_r) = outputs
    return d_l, d_r, cost_l, cost_r
