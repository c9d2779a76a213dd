"""Synthetic vein-mimic stereo scenes with exact disparity ground truth.

A scene is a latent wide canvas holding a textured background plus dark
curvilinear primitives (anti-aliased polyline tubes), each carrying its
own disparity, constant or linear in the horizontal coordinate.  The
left view samples every layer at its own pixel grid; the right view
samples each layer at the horizontally shifted positions implied by
that layer's disparity.  Because primitives are evaluated analytically
at the exact sample positions (and the raster background is resampled
with linear interpolation, which is an exact column copy for integer
shifts), the ground-truth disparity is correct by construction rather
than estimated.

Disparity convention: a point at column ``x`` in the left view appears
at column ``x - d`` in the right view, ``d >= 0``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class VeinPrimitive:
    """A dark anti-aliased tube along a polyline, at its own depth.

    ``points`` are ``(y, x)`` vertices in left-view/canvas coordinates;
    ``width`` is the tube diameter in pixels; ``level`` the intensity it
    is drawn with; the disparity at left column ``x`` is
    ``disparity_a + disparity_b * x``.
    """

    points: tuple
    width: float = 3.0
    level: float = 0.2
    disparity_a: float = 8.0
    disparity_b: float = 0.0

    def __post_init__(self):
        pts = tuple((float(y), float(x)) for y, x in self.points)
        if len(pts) < 2:
            raise ValueError("a primitive needs at least two polyline points")
        object.__setattr__(self, "points", pts)
        if not self.width >= 1.0:
            raise ValueError(f"primitive width must be >= 1 pixel, got {self.width}")
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"primitive level must be in [0,1], got {self.level}")
        if abs(self.disparity_b) >= 0.5:
            raise ValueError("linear disparity slope must satisfy |b| < 0.5")

    def disparity_at(self, x):
        """Disparity of the tube surface seen at left column ``x``."""
        return self.disparity_a + self.disparity_b * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class SceneSpec:
    """Complete, seed-deterministic description of one stereo scene."""

    height: int = 64
    width: int = 128
    max_disparity: int = 16
    seed: int = 0
    background_level: float = 0.55
    background_contrast: float = 0.15
    background_smooth_sigma: float = 2.0
    background_disparity: float = 0.0
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0
    veins: tuple = ()
    baseline_b: float = None
    focal_f: float = None

    def __post_init__(self):
        object.__setattr__(self, "veins", tuple(self.veins))
        if self.height < 8 or self.width < 8:
            raise ValueError("scene extents must be at least 8x8")
        if self.max_disparity < 1:
            raise ValueError("max_disparity must be >= 1")
        if not 0.0 <= self.background_level <= 1.0:
            raise ValueError("background_level must be in [0,1]")
        if self.background_contrast < 0 or self.background_smooth_sigma < 0:
            raise ValueError("background texture parameters must be non-negative")
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("blur_sigma and noise_sigma must be non-negative")
        if not 0.0 <= self.background_disparity <= self.max_disparity:
            raise ValueError(
                f"background_disparity {self.background_disparity} outside "
                f"[0, {self.max_disparity}]"
            )
        xs = np.array([0.0, self.canvas_width - 1.0])
        for i, vein in enumerate(self.veins):
            d = vein.disparity_at(xs)
            if d.min() < 0.0 or d.max() > self.max_disparity:
                raise ValueError(
                    f"vein {i} disparity range [{d.min():g}, {d.max():g}] outside "
                    f"[0, {self.max_disparity}]"
                )

    @property
    def canvas_width(self):
        return self.width + self.max_disparity + 2


@dataclass
class StereoPair:
    """A rectified image pair with optional exact annotations.

    Images are ``[1,H,W]`` float arrays in [0,1]; ground-truth disparity
    maps are ``[H,W]``; occlusion masks are ``[H,W]`` binary with 1
    marking pixels visible in only their own view.
    """

    left: np.ndarray
    right: np.ndarray
    gt_disp_left: np.ndarray = None
    gt_disp_right: np.ndarray = None
    occlusion_left: np.ndarray = None
    occlusion_right: np.ndarray = None
    baseline_b: float = None
    focal_f: float = None

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=float)
        self.right = np.asarray(self.right, dtype=float)
        if self.left.ndim == 2:
            self.left = self.left[None]
        if self.right.ndim == 2:
            self.right = self.right[None]
        if self.left.shape != self.right.shape:
            raise ValueError(f"view shapes differ: {self.left.shape} vs {self.right.shape}")
        if self.left.min() < 0.0 or self.left.max() > 1.0 or \
                self.right.min() < 0.0 or self.right.max() > 1.0:
            raise ValueError("image values must lie in [0,1]")


def gaussian_smooth(image, sigma):
    """Separable Gaussian blur with replicate borders; ``sigma=0`` is identity.

    The kernel has radius ``ceil(3*sigma)`` and is normalized, so
    constant images pass through unchanged.  Works on the trailing two
    axes of a [H,W] or [C,H,W] array; not differentiable (preprocessing
    only).
    """
    arr = np.asarray(image, dtype=float)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return arr.copy()
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()

    def smooth_axis(a, axis):
        axis = axis % a.ndim
        pads = [(0, 0)] * a.ndim
        pads[axis] = (radius, radius)
        padded = np.pad(a, pads, mode="edge")
        win = sliding_window_view(padded, 2 * radius + 1, axis=axis)
        return win @ kernel

    return smooth_axis(smooth_axis(arr, -1), -2)


def _segment_distance(ys, xs, a, b):
    """Distance from grid points (ys, xs) to segment a->b, each (y, x)."""
    ay, ax = a
    by, bx = b
    dy, dx = by - ay, bx - ax
    seg_sq = dy * dy + dx * dx
    if seg_sq < 1e-12:
        return np.hypot(ys - ay, xs - ax)
    t = np.clip(((ys - ay) * dy + (xs - ax) * dx) / seg_sq, 0.0, 1.0)
    return np.hypot(ys - (ay + t * dy), xs - (ax + t * dx))


def _vein_coverage(vein, ys, xs):
    """Anti-aliased coverage of a tube evaluated at arbitrary positions.

    Coverage ramps linearly from 1 inside to 0 outside over one pixel
    around the tube boundary at ``width/2``.
    """
    dist = None
    for a, b in zip(vein.points[:-1], vein.points[1:]):
        d = _segment_distance(ys, xs, a, b)
        dist = d if dist is None else np.minimum(dist, d)
    return np.clip(vein.width / 2.0 + 0.5 - dist, 0.0, 1.0)


def _resample_rows(canvas, xs):
    """Linearly interpolate each canvas row at fractional columns ``xs``."""
    n = canvas.shape[1]
    xc = np.clip(xs, 0.0, n - 1.0)
    x0 = np.floor(xc).astype(int)
    x1 = np.minimum(x0 + 1, n - 1)
    frac = xc - x0
    rows = np.arange(canvas.shape[0])[:, None]
    return canvas[rows, x0] * (1.0 - frac) + canvas[rows, x1] * frac


def _cross_check_occlusion(d_own, d_other, sign):
    """1 where a pixel fails the 1-px left-right disparity cross-check.

    ``sign`` is -1 when the matching position in the other view is
    ``x - d`` (checking the left view) and +1 for the right view.
    Positions that land outside the other view's frame are occluded.
    """
    h, w = d_own.shape
    xs = np.arange(w)[None, :] + sign * d_own
    out_of_frame = (xs < 0.0) | (xs > w - 1.0)
    occ = np.zeros((h, w))
    grid = np.arange(w, dtype=float)
    for y in range(h):
        other = np.interp(np.clip(xs[y], 0.0, w - 1.0), grid, d_other[y])
        occ[y] = np.abs(d_own[y] - other) > 1.0
    occ[out_of_frame] = 1.0
    return occ


def render_synthetic_pair(spec):
    """Render a :class:`SceneSpec` into a fully annotated stereo pair.

    Layers are composited in list order (later primitives are nearer
    and painted over earlier ones).  Ground truth takes, per pixel, the
    disparity of the front-most layer whose hard silhouette (coverage
    >= 0.5) covers it.  Occlusion masks come from the 1-px left-right
    cross-check of the two ground-truth fields.  Blur and seeded noise
    are applied to the images only, never to the annotations.
    """
    h, w = spec.height, spec.width
    rng_texture = np.random.default_rng([spec.seed, 0])
    raw = rng_texture.uniform(size=(h, spec.canvas_width))
    if spec.background_smooth_sigma > 0:
        smooth = gaussian_smooth(raw, spec.background_smooth_sigma)
    else:
        smooth = raw
    std = smooth.std()
    if std > 0 and spec.background_contrast > 0:
        canvas = spec.background_level + spec.background_contrast * (smooth - smooth.mean()) / std
    else:
        canvas = np.full_like(smooth, spec.background_level)
    canvas = np.clip(canvas, 0.0, 1.0)

    ys = np.arange(h, dtype=float)[:, None]
    xs_left = np.tile(np.arange(w, dtype=float), (h, 1))
    views = {}
    for side, sign in (("left", 0.0), ("right", 1.0)):
        if side == "left":
            xs_bg = xs_left
        else:
            xs_bg = xs_left + spec.background_disparity
        image = _resample_rows(canvas, xs_bg)
        gt = np.full((h, w), float(spec.background_disparity))
        for i, vein in enumerate(spec.veins):
            if side == "left":
                xs_layer = xs_left
            else:
                # left position of the surface point seen at right column x:
                # x_l - (a + b*x_l) = x  =>  x_l = (x + a) / (1 - b)
                xs_layer = (xs_left + vein.disparity_a) / (1.0 - vein.disparity_b)
            cov = _vein_coverage(vein, ys, xs_layer)
            if side == "right" and not np.any(cov >= 0.5):
                raise ValueError(
                    f"vein {i} is shifted entirely out of the right view frame"
                )
            image = image * (1.0 - cov) + vein.level * cov
            solid = cov >= 0.5
            gt[solid] = vein.disparity_at(xs_layer[solid])
        views[side] = (image, gt)

    image_l, gt_l = views["left"]
    image_r, gt_r = views["right"]
    occ_l = _cross_check_occlusion(gt_l, gt_r, sign=-1.0)
    occ_r = _cross_check_occlusion(gt_r, gt_l, sign=+1.0)

    if spec.blur_sigma > 0:
        image_l = gaussian_smooth(image_l, spec.blur_sigma)
        image_r = gaussian_smooth(image_r, spec.blur_sigma)
    rng_noise = np.random.default_rng([spec.seed, 1])
    if spec.noise_sigma > 0:
        image_l = image_l + rng_noise.normal(0.0, spec.noise_sigma, size=(h, w))
        image_r = image_r + rng_noise.normal(0.0, spec.noise_sigma, size=(h, w))
    image_l = np.clip(image_l, 0.0, 1.0)
    image_r = np.clip(image_r, 0.0, 1.0)

    return StereoPair(
        left=image_l[None],
        right=image_r[None],
        gt_disp_left=gt_l,
        gt_disp_right=gt_r,
        occlusion_left=occ_l,
        occlusion_right=occ_r,
        baseline_b=spec.baseline_b,
        focal_f=spec.focal_f,
    )


@dataclass(frozen=True)
class SceneSampler:
    """Randomized scene factory for building varied datasets.

    Each call to :meth:`scene` derives every scene property from the
    given seed alone, so a dataset is reproducible from its seed list.
    Veins span the frame horizontally with a vertical random walk and
    are ordered back to front by disparity, keeping the painter's-order
    compositing geometrically consistent.
    """

    height: int = 64
    width: int = 128
    max_disparity: int = 16
    num_veins_range: tuple = (2, 4)
    vein_width_range: tuple = (2.0, 4.5)
    vein_level_range: tuple = (0.1, 0.3)
    vein_disparity_offset_range: tuple = None  # offsets above background; default (D/8, D/4)
    vein_slope_range: tuple = (0.0, 0.0)
    control_points: int = 4
    background_disparity_range: tuple = None  # default (0, D/4)
    background_level: float = 0.55
    background_contrast: float = 0.15
    blur_sigma: float = 1.0
    noise_sigma: float = 0.01

    def __post_init__(self):
        # disparity ranges default to fractions of the search range so
        # any max_disparity yields renderable scenes
        d = float(self.max_disparity)
        if self.vein_disparity_offset_range is None:
            object.__setattr__(self, "vein_disparity_offset_range", (0.125 * d, 0.25 * d))
        if self.background_disparity_range is None:
            object.__setattr__(self, "background_disparity_range", (0.0, 0.25 * d))

    def scene(self, seed):
        rng = np.random.default_rng([int(seed), 2])
        canvas_w = self.width + self.max_disparity + 2
        background_disparity = float(rng.uniform(*self.background_disparity_range))
        count = int(rng.integers(self.num_veins_range[0], self.num_veins_range[1] + 1))
        # vein disparities sit a bounded offset in front of the background,
        # keeping the vein-to-background parallax within photometric pull range
        offsets = np.sort(rng.uniform(*self.vein_disparity_offset_range, size=count))
        disparities = np.minimum(background_disparity + offsets, self.max_disparity - 1.0)
        veins = []
        for d in disparities:
            xs = np.linspace(-4.0, canvas_w + 4.0, self.control_points)
            xs = xs + rng.uniform(-6.0, 6.0, size=self.control_points)
            y0 = rng.uniform(0.15 * self.height, 0.85 * self.height)
            steps = rng.uniform(-0.25 * self.height, 0.25 * self.height, size=self.control_points)
            ys = np.clip(y0 + np.cumsum(steps) - steps[0], 2.0, self.height - 3.0)
            slope = float(rng.uniform(*self.vein_slope_range))
            max_x = canvas_w - 1.0
            a = float(d)
            if slope != 0.0:
                # keep a + slope*x inside [0, max_disparity] across the canvas
                lo, hi = sorted((a, a + slope * max_x))
                if lo < 0.0 or hi > self.max_disparity:
                    slope = 0.0
            veins.append(
                VeinPrimitive(
                    points=tuple(zip(ys, xs)),
                    width=float(rng.uniform(*self.vein_width_range)),
                    level=float(rng.uniform(*self.vein_level_range)),
                    disparity_a=a,
                    disparity_b=slope,
                )
            )
        return SceneSpec(
            height=self.height,
            width=self.width,
            max_disparity=self.max_disparity,
            seed=int(seed),
            background_level=self.background_level,
            background_contrast=self.background_contrast,
            background_disparity=background_disparity,
            blur_sigma=self.blur_sigma,
            noise_sigma=self.noise_sigma,
            veins=tuple(veins),
        )

    def pair(self, seed):
        """Render the pair for ``seed`` (shorthand for render(scene(seed)))."""
        return render_synthetic_pair(self.scene(seed))
