"""Command-line front end: synth | train | infer | eval.

Every command is a pure function of its inputs and seeds, so reruns are
bit-identical.  Failures exit nonzero with a single diagnostic line
prefixed by a machine-parseable category (``error:config:``,
``error:io:``, ``error:numeric:``).

Run configuration lives in one text file with ``[network]``, ``[train]``,
``[loss]`` and ``[paths]`` sections of ``key = value`` lines (``#``
comments allowed).  Unknown sections or keys are rejected with the line
number.  Precedence is defaults < config file < command-line flags.
"""

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np
from PIL import Image

from . import autodiff as ad
from .autodiff import AutodiffError
from .evaluate import EvalReport, evaluate_pair, mean_report
from .fileio import (
    MANIFEST_NAME,
    FileFormatError,
    load_dataset,
    load_pair,
    read_manifest,
    read_pfm,
    read_pgm,
    read_scene_spec,
    save_pair,
    write_manifest,
    write_pfm,
)
from .losses import LossWeights
from .network import NetworkConfig, forward_pass
from .synth import SceneSampler, render_synthetic_pair
from .trainer import (
    CheckpointError,
    TrainConfig,
    TrainingError,
    load_checkpoint,
    train,
)


class ConfigError(ValueError):
    """Bad run configuration (file contents or flag values)."""


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Merged view of every tunable plus file-system paths."""

    network: NetworkConfig
    train: TrainConfig
    loss: LossWeights
    paths: dict

    @classmethod
    def defaults(cls):
        return cls(NetworkConfig(), TrainConfig(), LossWeights(), {})


_SECTION_TYPES = {"network": NetworkConfig, "train": TrainConfig, "loss": LossWeights}
_PATH_KEYS = ("dataset", "out", "checkpoint", "spec")


def _decode_field(cls, key, text):
    template = getattr(cls(), key)
    if isinstance(template, bool):
        if text not in ("true", "false"):
            raise ValueError(f"expected true/false for {key}, got {text!r}")
        return text == "true"
    if isinstance(template, tuple):
        return tuple(int(v) for v in text.split(",")) if text else ()
    if isinstance(template, float):
        return float(text)
    return int(text)


def parse_run_config(text, source="<config>"):
    """Parse the sectioned key=value grammar into a :class:`RunConfig`."""
    sections = {name: {} for name in (*_SECTION_TYPES, "paths")}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in sections:
                raise ConfigError(f"{source}:{lineno}: unknown section [{name}]")
            current = name
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if current is None:
            raise ConfigError(f"{source}:{lineno}: key outside any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if current == "paths":
            if key not in _PATH_KEYS:
                raise ConfigError(f"{source}:{lineno}: unknown path key {key!r}")
        else:
            known = {f.name for f in fields(_SECTION_TYPES[current])}
            if key not in known:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in [{current}]")
        if key in sections[current]:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        sections[current][key] = (lineno, value)

    built = {}
    for name, cls in _SECTION_TYPES.items():
        kwargs = {}
        for key, (lineno, value) in sections[name].items():
            try:
                kwargs[key] = _decode_field(cls, key, value)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from exc
        try:
            built[name] = cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"{source}: invalid [{name}] section: {exc}") from exc
    paths = {key: value for key, (_ln, value) in sections["paths"].items()}
    return RunConfig(network=built["network"], train=built["train"],
                     loss=built["loss"], paths=paths)


def load_run_config(path):
    """Read a config file, or the pure defaults when ``path`` is None."""
    if path is None:
        return RunConfig.defaults()
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_run_config(text, source=path)


def _override(config, **changes):
    actual = {k: v for k, v in changes.items() if v is not None}
    return replace(config, **actual) if actual else config


# ---------------------------------------------------------------------------
# disparity visualization

# Polynomial fit of the turbo colormap (degree-5 per channel, t in [0,1]).
_TURBO_POLYS = (
    (34.61, 1172.33, -10793.56, 33300.12, -38394.49, 14825.05),
    (23.31, 557.33, 1225.33, -3574.96, 1073.77, 707.56),
    (27.2, 3211.1, -15327.97, 27814.0, -22569.18, 6838.66),
)


def colorize_disparity(disparity, max_disparity, valid=None):
    """Turbo-mapped uint8 RGB image of a disparity map scaled by D.

    Values are normalized by ``max_disparity`` and clipped; pixels where
    ``valid`` is 0 come out black.
    """
    d = np.asarray(disparity, dtype=float)
    if max_disparity <= 0:
        raise ValueError("max_disparity must be positive")
    t = np.clip(d / float(max_disparity), 0.0, 1.0)
    rgb = np.zeros(d.shape + (3,), dtype=np.uint8)
    for c, coeffs in enumerate(_TURBO_POLYS):
        acc = np.zeros_like(t)
        for coef in reversed(coeffs):
            acc = acc * t + coef
        rgb[..., c] = np.clip(np.round(acc), 0, 255).astype(np.uint8)
    if valid is not None:
        rgb[np.asarray(valid) == 0] = 0
    return rgb


def _write_png(path, rgb):
    Image.fromarray(rgb, mode="RGB").save(path)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    config = load_run_config(args.config)
    seed = args.seed if args.seed is not None else config.train.seed
    max_disparity = (
        args.max_disparity if args.max_disparity is not None else config.network.max_disparity
    )
    os.makedirs(args.out, exist_ok=True)
    base = read_scene_spec(args.spec) if args.spec else None
    if base is None:
        sampler = SceneSampler(height=args.height, width=args.width,
                               max_disparity=max_disparity)
    prefixes = []
    for i in range(args.count):
        if base is not None:
            spec = replace(base, seed=seed + i)
        else:
            spec = sampler.scene(seed + i)
        pair = render_synthetic_pair(spec)
        prefix = f"pair_{i:04d}"
        save_pair(args.out, prefix, pair)
        prefixes.append(prefix)
    manifest = write_manifest(args.out, prefixes)
    print(f"wrote {len(prefixes)} pairs and {manifest}")
    return 0


def cmd_train(args):
    config = load_run_config(args.config)
    config.train = _override(config.train, seed=args.seed,
                             max_iterations=args.iterations)
    dataset_path = args.data if args.data is not None else config.paths.get("dataset")
    if dataset_path is None:
        raise ConfigError("no dataset given (use --data or [paths] dataset=...)")
    out_dir = args.out if args.out is not None else config.paths.get("out")
    if out_dir is None:
        raise ConfigError("no output directory given (use --out or [paths] out=...)")
    manifest = (
        dataset_path
        if os.path.basename(dataset_path) == MANIFEST_NAME
        else os.path.join(dataset_path, MANIFEST_NAME)
    )
    dataset = load_dataset(manifest)
    os.makedirs(out_dir, exist_ok=True)
    resume = load_checkpoint(args.resume) if args.resume else None

    log_path = os.path.join(out_dir, "train_log.txt")
    with open(log_path, "w", encoding="ascii") as log:
        def emit(line):
            log.write(line + "\n")

        checkpoint, reports = train(
            dataset,
            config.network,
            config.train,
            weights=config.loss,
            log_fn=emit,
            checkpoint_dir=out_dir,
            resume_from=resume,
        )
    final_path = os.path.join(out_dir, "checkpoint_final.bin")
    if reports:
        print(f"trained {checkpoint.iteration} iterations; "
              f"final loss {reports[-1].total!r}; checkpoint {final_path}")
    else:
        print(f"trained 0 iterations; wrote initialization checkpoint {final_path}")
    print(f"log {log_path}")
    return 0


def _crop_to_multiple(image, factor):
    """Center-crop a [1,H,W] image down to extents divisible by ``factor``."""
    _c, h, w = image.shape
    th, tw = (h // factor) * factor, (w // factor) * factor
    if th == 0 or tw == 0:
        raise ConfigError(f"image extents {h}x{w} smaller than one stride block ({factor})")
    oy, ox = (h - th) // 2, (w - tw) // 2
    return image[:, oy:oy + th, ox:ox + tw]


def cmd_infer(args):
    if len(args.images) == 0 or len(args.images) % 2 != 0:
        raise ConfigError("infer expects an even number of images: LEFT RIGHT [LEFT RIGHT ...]")
    checkpoint = load_checkpoint(args.checkpoint)
    net_config = checkpoint.net_config
    os.makedirs(args.out, exist_ok=True)
    written = []
    for left_path, right_path in zip(args.images[0::2], args.images[1::2]):
        left = read_pgm(left_path)
        right = read_pgm(right_path)
        if left.shape != right.shape:
            raise ConfigError(
                f"pair extents differ: {left.shape} vs {right.shape} "
                f"({left_path}, {right_path})"
            )
        left = _crop_to_multiple(left, net_config.downsample_factor)
        right = _crop_to_multiple(right, net_config.downsample_factor)
        with ad.no_grad():
            d_l, d_r, _, _ = forward_pass((left, right), checkpoint.params, net_config)
        stem = os.path.splitext(os.path.basename(left_path))[0]
        if stem.endswith("_left"):
            stem = stem[: -len("_left")]
        for name, disp in (("disp_left", d_l), ("disp_right", d_r)):
            pfm = os.path.join(args.out, f"{stem}_{name}.pfm")
            png = os.path.join(args.out, f"{stem}_{name}.png")
            write_pfm(pfm, disp.data)
            _write_png(png, colorize_disparity(disp.data, net_config.max_disparity))
            written.extend([pfm, png])
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def cmd_eval(args):
    config = load_run_config(args.config)
    max_disparity = (
        args.max_disparity if args.max_disparity is not None else config.network.max_disparity
    )
    prefixes = read_manifest(os.path.join(args.gt_dir, MANIFEST_NAME))
    missing = []
    for prefix in prefixes:
        for required in (
            os.path.join(args.gt_dir, f"{prefix}_disp_left.pfm"),
            os.path.join(args.gt_dir, f"{prefix}_occ_left.pgm"),
            os.path.join(args.pred_dir, f"{prefix}_disp_left.pfm"),
        ):
            if not os.path.exists(required):
                missing.append(required)
    if missing:
        raise FileNotFoundError("missing evaluation inputs: " + ", ".join(missing))

    lines = []
    reports = []
    for prefix in prefixes:
        pair = load_pair(args.gt_dir, prefix)
        pred = read_pfm(os.path.join(args.pred_dir, f"{prefix}_disp_left.pfm"))
        report = evaluate_pair(pair, pred, max_disparity, pixel_threshold=args.threshold)
        reports.append(report)
        lines.append(f"{prefix} {report.row()}")
    aggregate = mean_report(reports)

    out_lines = [f"# per-pair: prefix {EvalReport.row_header()}"]
    out_lines.extend(lines)
    out_lines.append("# aggregate")
    out_lines.append(aggregate.text())
    text = "\n".join(out_lines)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="ascii") as f:
            f.write(text + "\n")
        print(f"report written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch


def build_parser():
    parser = argparse.ArgumentParser(
        prog="selfstereo",
        description="Self-supervised stereo matching on synthetic vein-like scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, default=1, help="number of pairs")
    p.add_argument("--seed", type=int, default=None, help="base scene seed")
    p.add_argument("--spec", default=None, help="scene spec file to re-render per seed")
    p.add_argument("--config", default=None, help="run config file")
    p.add_argument("--max-disparity", type=int, default=None)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train from a dataset directory")
    p.add_argument("--config", default=None, help="run config file")
    p.add_argument("--data", default=None, help="dataset directory or manifest path")
    p.add_argument("--out", default=None, help="run output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None, help="override max_iterations")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict disparities for image pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("images", nargs="*", help="LEFT RIGHT [LEFT RIGHT ...] PGM images")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("pred_dir", help="directory of predicted *_disp_left.pfm files")
    p.add_argument("gt_dir", help="dataset directory with manifest and annotations")
    p.add_argument("--threshold", type=float, default=3.0, help="outlier threshold in pixels")
    p.add_argument("--config", default=None, help="run config file")
    p.add_argument("--max-disparity", type=int, default=None)
    p.add_argument("--out", default=None, help="also write the report to this file")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return 2
    except (FileFormatError, CheckpointError, FileNotFoundError, OSError) as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"error:numeric: {exc}", file=sys.stderr)
        return 4
    except (AutodiffError, ValueError) as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
