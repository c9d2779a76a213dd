"""File formats: PGM images, PFM disparity maps, scene-spec text, manifests.

Images travel as binary PGM (P5, maxval 255) with intensities mapped to
[0,1] by dividing by 255; disparity maps as grayscale PFM ("Pf",
bottom-up rows, little-endian float32 signalled by a negative scale).
Scene specifications serialize to a flat ``key = value`` text format
with ``#`` comments; parse errors name the offending line.
"""

import os
import re

import numpy as np

from .synth import SceneSpec, StereoPair, VeinPrimitive


class FileFormatError(ValueError):
    """A file does not conform to its declared format."""


# ---------------------------------------------------------------------------
# PGM (binary, 8-bit grayscale)


def write_pgm(path, image):
    """Write a [1,H,W] or [H,W] array in [0,1] as binary P5, maxval 255."""
    arr = np.asarray(image, dtype=float)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise FileFormatError(f"PGM is single-channel, got shape {arr.shape}")
        arr = arr[0]
    if arr.ndim != 2:
        raise FileFormatError(f"expected [H,W] or [1,H,W], got shape {arr.shape}")
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _pgm_header_tokens(raw, count):
    """First ``count`` whitespace tokens after the magic, skipping comments."""
    pos = 2  # past the 2-byte magic
    tokens = []
    while len(tokens) < count:
        if pos >= len(raw):
            raise FileFormatError("truncated PGM header")
        ch = raw[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            nl = raw.find(b"\n", pos)
            if nl < 0:
                raise FileFormatError("unterminated comment in PGM header")
            pos = nl + 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    return tokens, pos + 1  # single whitespace separates header from payload


def read_pgm(path):
    """Read binary P5 into a [1,H,W] float array in [0,1]."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] != b"P5":
        raise FileFormatError(f"not a binary PGM (P5) file: magic {raw[:2]!r}")
    tokens, payload_at = _pgm_header_tokens(raw, 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FileFormatError(f"non-numeric PGM header fields {tokens}") from exc
    if maxval != 255:
        raise FileFormatError(f"only maxval 255 is supported, got {maxval}")
    if w < 1 or h < 1:
        raise FileFormatError(f"bad PGM extents {w}x{h}")
    payload = raw[payload_at:payload_at + w * h]
    if len(payload) != w * h:
        raise FileFormatError(f"truncated PGM payload: {len(payload)} of {w * h} bytes")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    return (data.astype(float) / 255.0)[None]


# ---------------------------------------------------------------------------
# PFM (grayscale float map)


def write_pfm(path, values):
    """Write a [H,W] float map as grayscale PFM, little-endian (scale -1.0)."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise FileFormatError(f"PFM writer expects [H,W], got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(arr).astype("<f4").tobytes())


def read_pfm(path):
    """Read a grayscale PFM into a [H,W] float64 array."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic == b"PF":
            raise FileFormatError("color PFM (PF) is not supported; expected grayscale Pf")
        if magic != b"Pf":
            raise FileFormatError(f"not a PFM file: magic {magic!r}")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FileFormatError(f"bad PFM dimensions line {dims}")
        try:
            w, h = int(dims[0]), int(dims[1])
            scale = float(f.readline().strip())
        except ValueError as exc:
            raise FileFormatError("non-numeric PFM header fields") from exc
        if w < 1 or h < 1:
            raise FileFormatError(f"bad PFM extents {w}x{h}")
        if scale == 0.0:
            raise FileFormatError("PFM scale field must be non-zero")
        dtype = "<f4" if scale < 0 else ">f4"
        payload = f.read(4 * w * h)
    if len(payload) != 4 * w * h:
        raise FileFormatError(f"truncated PFM payload: {len(payload)} of {4 * w * h} bytes")
    data = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    return np.flipud(data).astype(float)


# ---------------------------------------------------------------------------
# scene-spec text format


_SCALAR_FIELDS = {
    "height": int,
    "width": int,
    "max_disparity": int,
    "seed": int,
    "background_level": float,
    "background_contrast": float,
    "background_smooth_sigma": float,
    "background_disparity": float,
    "blur_sigma": float,
    "noise_sigma": float,
    "baseline_b": float,
    "focal_f": float,
}

_VEIN_FIELDS = {
    "points": None,
    "width": float,
    "level": float,
    "disparity_a": float,
    "disparity_b": float,
}

_VEIN_KEY = re.compile(r"^vein(\d+)\.(\w+)$")


def _parse_points(text, lineno):
    points = []
    for part in text.split(";"):
        coords = part.split(",")
        if len(coords) != 2:
            raise FileFormatError(
                f"line {lineno}: vein point {part.strip()!r} is not 'y,x'"
            )
        try:
            points.append((float(coords[0]), float(coords[1])))
        except ValueError as exc:
            raise FileFormatError(f"line {lineno}: non-numeric vein point {part.strip()!r}") from exc
    return tuple(points)


def parse_scene_spec(text):
    """Parse ``key = value`` scene text into a :class:`SceneSpec`.

    Lines are order-insensitive; ``#`` starts a comment; unknown keys
    are rejected.  Vein primitives use ``veinN.field`` keys with N
    counting contiguously from 0.
    """
    scalars = {}
    veins = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FileFormatError(f"line {lineno}: expected 'key = value', got {rawline!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _SCALAR_FIELDS:
            if key in scalars:
                raise FileFormatError(f"line {lineno}: duplicate key {key!r}")
            try:
                scalars[key] = _SCALAR_FIELDS[key](value)
            except ValueError as exc:
                raise FileFormatError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
            continue
        m = _VEIN_KEY.match(key)
        if not m:
            raise FileFormatError(f"line {lineno}: unknown key {key!r}")
        index, fieldname = int(m.group(1)), m.group(2)
        if fieldname not in _VEIN_FIELDS:
            raise FileFormatError(f"line {lineno}: unknown vein field {fieldname!r}")
        group = veins.setdefault(index, {})
        if fieldname in group:
            raise FileFormatError(f"line {lineno}: duplicate key {key!r}")
        if fieldname == "points":
            group[fieldname] = _parse_points(value, lineno)
        else:
            try:
                group[fieldname] = _VEIN_FIELDS[fieldname](value)
            except ValueError as exc:
                raise FileFormatError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc

    if veins and sorted(veins) != list(range(len(veins))):
        raise FileFormatError(
            f"vein indices must be contiguous from 0, got {sorted(veins)}"
        )
    primitives = []
    for i in range(len(veins)):
        group = veins[i]
        if "points" not in group:
            raise FileFormatError(f"vein{i} is missing its 'points' line")
        try:
            primitives.append(VeinPrimitive(**group))
        except ValueError as exc:
            raise FileFormatError(f"vein{i}: {exc}") from exc
    try:
        return SceneSpec(veins=tuple(primitives), **scalars)
    except (TypeError, ValueError) as exc:
        raise FileFormatError(f"invalid scene spec: {exc}") from exc


def read_scene_spec(path):
    with open(path, "r", encoding="ascii") as f:
        return parse_scene_spec(f.read())


def scene_spec_text(spec):
    """Serialize a :class:`SceneSpec` to its text form (full precision)."""
    lines = ["# stereo scene specification"]
    for key in ("height", "width", "max_disparity", "seed"):
        lines.append(f"{key} = {getattr(spec, key)}")
    for key in (
        "background_level",
        "background_contrast",
        "background_smooth_sigma",
        "background_disparity",
        "blur_sigma",
        "noise_sigma",
    ):
        lines.append(f"{key} = {getattr(spec, key)!r}")
    for key in ("baseline_b", "focal_f"):
        value = getattr(spec, key)
        if value is not None:
            lines.append(f"{key} = {value!r}")
    for i, vein in enumerate(spec.veins):
        pts = " ; ".join(f"{y!r},{x!r}" for y, x in vein.points)
        lines.append(f"vein{i}.points = {pts}")
        lines.append(f"vein{i}.width = {vein.width!r}")
        lines.append(f"vein{i}.level = {vein.level!r}")
        lines.append(f"vein{i}.disparity_a = {vein.disparity_a!r}")
        lines.append(f"vein{i}.disparity_b = {vein.disparity_b!r}")
    return "\n".join(lines) + "\n"


def write_scene_spec(path, spec):
    with open(path, "w", encoding="ascii") as f:
        f.write(scene_spec_text(spec))


# ---------------------------------------------------------------------------
# dataset layout: flat files per pair plus a manifest


PAIR_FILES = (
    "{}_left.pgm",
    "{}_right.pgm",
    "{}_disp_left.pfm",
    "{}_disp_right.pfm",
    "{}_occ_left.pgm",
)


def save_pair(out_dir, prefix, pair):
    """Write one annotated pair as five files named ``<prefix>_*``."""
    write_pgm(os.path.join(out_dir, f"{prefix}_left.pgm"), pair.left)
    write_pgm(os.path.join(out_dir, f"{prefix}_right.pgm"), pair.right)
    write_pfm(os.path.join(out_dir, f"{prefix}_disp_left.pfm"), pair.gt_disp_left)
    write_pfm(os.path.join(out_dir, f"{prefix}_disp_right.pfm"), pair.gt_disp_right)
    write_pgm(os.path.join(out_dir, f"{prefix}_occ_left.pgm"), pair.occlusion_left)


def load_pair(data_dir, prefix):
    """Load a pair saved by :func:`save_pair`; annotations are optional."""
    left = read_pgm(os.path.join(data_dir, f"{prefix}_left.pgm"))
    right = read_pgm(os.path.join(data_dir, f"{prefix}_right.pgm"))

    def optional(fname, reader):
        p = os.path.join(data_dir, fname)
        return reader(p) if os.path.exists(p) else None

    occ = optional(f"{prefix}_occ_left.pgm", read_pgm)
    return StereoPair(
        left=left,
        right=right,
        gt_disp_left=optional(f"{prefix}_disp_left.pfm", read_pfm),
        gt_disp_right=optional(f"{prefix}_disp_right.pfm", read_pfm),
        occlusion_left=occ[0] if occ is not None else None,
    )


MANIFEST_NAME = "manifest.txt"


def write_manifest(out_dir, prefixes):
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w", encoding="ascii") as f:
        for prefix in prefixes:
            f.write(prefix + "\n")
    return path


def read_manifest(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, "r", encoding="ascii") as f:
        return [line.strip() for line in f if line.strip()]


def load_dataset(manifest_path):
    """All pairs listed by a manifest, in listed order."""
    data_dir = os.path.dirname(os.path.abspath(manifest_path))
    return [load_pair(data_dir, prefix) for prefix in read_manifest(manifest_path)]
