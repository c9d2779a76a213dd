"""Adam optimization, the self-supervised training loop, and checkpoints.

The loop is deliberately stateless outside its numeric buffers: the
pair sampled at iteration ``i`` and the crop offsets (when enabled) are
pure functions of ``(seed, i)``, so resuming from a checkpoint replays
exactly the sequence an uninterrupted run would have seen, bit for bit.

Checkpoints are a versioned flat binary: an ASCII header holding the
iteration counter and the full configuration, a manifest of named
tensors (name, shape, byte offset), then one contiguous little-endian
float64 payload.  The format is documented in :func:`save_checkpoint`.
"""

import io
import os
from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .losses import FixedFeatureNet, LossWeights, total_loss
from .network import ModelParams, NetworkConfig, forward_pass, init_params
from .stereo import (
    SAMPLE_LEFT_FROM_RIGHT,
    SAMPLE_RIGHT_FROM_LEFT,
    valid_region_mask,
    warp_horizontal,
)


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or gradient, bad inputs)."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer constants, schedule, and loop bookkeeping."""

    lr_initial: float = 1e-3
    lr_after_drop: float = 1e-4
    drop_iteration: int = 4000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iterations: int = 1000
    seed: int = 0
    checkpoint_every: int = 0
    use_region_masks: bool = True
    perceptual_channels: tuple = (8, 16, 16)
    perceptual_seed: int = 0
    crop_height: int = 0
    crop_width: int = 0

    def __post_init__(self):
        if not 0 < self.lr_after_drop <= self.lr_initial:
            raise ValueError("need 0 < lr_after_drop <= lr_initial")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {b}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 0 or self.drop_iteration < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be non-negative")
        if (self.crop_height > 0) != (self.crop_width > 0):
            raise ValueError("crop extents must be both zero or both positive")
        object.__setattr__(
            self, "perceptual_channels", tuple(int(c) for c in self.perceptual_channels)
        )

    def lr_at(self, iteration):
        """Learning rate for a 0-based iteration index."""
        return self.lr_initial if iteration < self.drop_iteration else self.lr_after_drop


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, m=None, v=None, step=0):
        self.m = dict(m) if m else {}
        self.v = dict(v) if v else {}
        self.step = int(step)

    @classmethod
    def zeros_like(cls, params):
        return cls(
            m={k: np.zeros(t.shape) for k, t in params.items()},
            v={k: np.zeros(t.shape) for k, t in params.items()},
            step=0,
        )


def adam_step(params, grads, state, lr, config):
    """One bias-corrected Adam update; returns fresh params and state.

    Parameters are immutable tensors, so the update binds new Tensor
    objects rather than writing in place.  A non-finite gradient aborts
    with the offending parameter's name.
    """
    t = state.step + 1
    new_params = ModelParams()
    new_m, new_v = {}, {}
    bc1 = 1.0 - config.beta1**t
    bc2 = 1.0 - config.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = config.beta1 * state.m[name] + (1.0 - config.beta1) * g
        v = config.beta2 * state.v[name] + (1.0 - config.beta2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)
        new_params[name] = Tensor(p.data - update, requires_grad=True)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t)


def sample_index(seed, count, iteration):
    """Dataset index for an iteration under epoch-wise seeded shuffling.

    A pure function of its arguments: each epoch's permutation is drawn
    from a generator seeded by (seed, epoch), so any iteration's sample
    can be recomputed without replaying earlier ones.
    """
    if count < 1:
        raise TrainingError("dataset is empty")
    epoch, offset = divmod(iteration, count)
    rng = np.random.default_rng([int(seed), 3, int(epoch)])
    return int(rng.permutation(count)[offset])


def _crop_offsets(seed, iteration, max_y, max_x):
    rng = np.random.default_rng([int(seed), 4, int(iteration)])
    return int(rng.integers(0, max_y + 1)), int(rng.integers(0, max_x + 1))


@dataclass
class Checkpoint:
    """Everything needed to resume training bit-exactly."""

    iteration: int
    params: ModelParams
    adam_state: AdamState
    net_config: NetworkConfig
    train_config: TrainConfig
    weights: LossWeights
    loss_history: np.ndarray


def train_step(images, params, net_config, weights, feature_net, use_region_masks):
    """Forward, reconstruct, loss, backward for one pair; returns (grads, report)."""
    image_l, image_r = images
    d_l, d_r, _, _ = forward_pass((image_l, image_r), params, net_config)
    recon_l = warp_horizontal(Tensor(image_r), d_l, SAMPLE_LEFT_FROM_RIGHT)
    recon_r = warp_horizontal(Tensor(image_l), d_r, SAMPLE_RIGHT_FROM_LEFT)
    h, w = d_l.shape
    if use_region_masks:
        mask_l = valid_region_mask(h, w, net_config.max_disparity, "left")
        mask_r = valid_region_mask(h, w, net_config.max_disparity, "right")
    else:
        mask_l = Tensor(np.ones((h, w)))
        mask_r = mask_l
    loss, report = total_loss(
        (image_l, image_r),
        d_l,
        d_r,
        (recon_l, recon_r),
        (mask_l, mask_r),
        weights=weights,
        feature_net=feature_net,
    )
    ad.backward(loss)
    grads = {name: p.grad for name, p in params.items()}
    params.zero_grads()
    return grads, report


def train(
    dataset,
    net_config,
    train_config,
    weights=None,
    log_fn=None,
    checkpoint_dir=None,
    resume_from=None,
):
    """Run the training loop; returns ``(Checkpoint, [LossReport, ...])``.

    ``dataset`` is a non-empty sequence of stereo pairs (each with
    ``left``/``right`` image arrays).  ``log_fn``, when given, receives
    one structured text line per iteration.  ``checkpoint_dir`` enables
    periodic checkpoints every ``checkpoint_every`` iterations plus a
    final one.  ``resume_from`` continues a checkpoint to
    ``train_config.max_iterations``, reproducing the uninterrupted
    run's trajectory exactly.
    """
    if len(dataset) == 0:
        raise TrainingError("dataset is empty")
    weights = weights if weights is not None else LossWeights()

    if resume_from is not None:
        params = resume_from.params.clone()
        state = AdamState(resume_from.adam_state.m, resume_from.adam_state.v,
                          resume_from.adam_state.step)
        start = resume_from.iteration
        history = list(resume_from.loss_history)
        reports = []
    else:
        params = init_params(net_config)
        state = AdamState.zeros_like(params)
        start = 0
        history = []
        reports = []

    if weights.w_perceptual != 0.0:
        feature_net = FixedFeatureNet(
            in_channels=1,
            channels=train_config.perceptual_channels,
            seed=train_config.perceptual_seed,
        )
    else:
        feature_net = None

    crop = train_config.crop_height > 0

    def images_for(iteration):
        pair = dataset[sample_index(train_config.seed, len(dataset), iteration)]
        image_l = np.asarray(pair.left, dtype=float)
        image_r = np.asarray(pair.right, dtype=float)
        if image_l.ndim == 2:
            image_l, image_r = image_l[None], image_r[None]
        if crop:
            ch, cw = train_config.crop_height, train_config.crop_width
            h, w = image_l.shape[1:]
            if ch > h or cw > w:
                raise TrainingError(f"crop {ch}x{cw} exceeds image extents {h}x{w}")
            oy, ox = _crop_offsets(train_config.seed, iteration, h - ch, w - cw)
            image_l = image_l[:, oy:oy + ch, ox:ox + cw]
            image_r = image_r[:, oy:oy + ch, ox:ox + cw]
        return image_l, image_r

    def snapshot(iteration):
        return Checkpoint(
            iteration=iteration,
            params=params.clone(),
            adam_state=AdamState(state.m, state.v, state.step),
            net_config=net_config,
            train_config=train_config,
            weights=weights,
            loss_history=np.array(history, dtype=float),
        )

    for iteration in range(start, train_config.max_iterations):
        lr = train_config.lr_at(iteration)
        try:
            grads, report = train_step(
                images_for(iteration),
                params,
                net_config,
                weights,
                feature_net,
                train_config.use_region_masks,
            )
        except NonFiniteError as exc:
            raise TrainingError(f"iteration {iteration}: non-finite value: {exc}") from exc
        if not np.isfinite(report.total):
            raise TrainingError(f"iteration {iteration}: non-finite loss {report.total}")
        params, state = adam_step(params, grads, state, lr, train_config)
        history.append(report.total)
        reports.append(report)
        if log_fn is not None:
            log_fn(format_log_line(iteration, lr, report))
        if (
            checkpoint_dir is not None
            and train_config.checkpoint_every > 0
            and (iteration + 1) % train_config.checkpoint_every == 0
        ):
            save_checkpoint(
                os.path.join(checkpoint_dir, f"checkpoint_{iteration + 1:06d}.bin"),
                snapshot(iteration + 1),
            )

    final = snapshot(train_config.max_iterations)
    if checkpoint_dir is not None:
        save_checkpoint(os.path.join(checkpoint_dir, "checkpoint_final.bin"), final)
    return final, reports


def format_log_line(iteration, lr, report):
    parts = [f"iteration={iteration}", f"lr={lr!r}"]
    for name in (
        "appearance_l",
        "appearance_r",
        "smooth_l",
        "smooth_r",
        "consistency_l",
        "consistency_r",
        "perceptual_l",
        "perceptual_r",
        "total",
    ):
        parts.append(f"{name}={getattr(report, name)!r}")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# checkpoint file format
#
#   SELFSTEREO-CKPT v1\n
#   iteration = <int>\n
#   adam_step = <int>\n
#   [network] / [train] / [loss] sections of key = value lines
#   [tensors]\n
#   <name> <dim0,dim1,...> <byte offset into payload>\n   (one per tensor)
#   DATA\n
#   <concatenated little-endian float64 payload>
#
# Tensor names: parameters verbatim, Adam moments as adam_m.<name> /
# adam_v.<name>, and the loss history as loss_history.

_MAGIC = b"SELFSTEREO-CKPT v1\n"


def _encode_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _decode_value(text, template):
    if isinstance(template, bool):
        if text not in ("true", "false"):
            raise ValueError(f"bad boolean {text!r}")
        return text == "true"
    if isinstance(template, tuple):
        return tuple(int(v) for v in text.split(",")) if text else ()
    if isinstance(template, float):
        return float(text)
    return int(text)


def _config_lines(section, config):
    lines = [f"[{section}]"]
    for f in fields(config):
        lines.append(f"{f.name} = {_encode_value(getattr(config, f.name))}")
    return lines


def _parse_config(cls, mapping):
    defaults = cls()
    kwargs = {}
    for f in fields(cls):
        if f.name in mapping:
            kwargs[f.name] = _decode_value(mapping[f.name], getattr(defaults, f.name))
    return cls(**kwargs)


def save_checkpoint(path, checkpoint):
    """Serialize a :class:`Checkpoint` to the versioned flat binary format."""
    tensors = []
    for name, t in checkpoint.params.items():
        tensors.append((name, t.data))
    for name in checkpoint.params:
        tensors.append((f"adam_m.{name}", checkpoint.adam_state.m[name]))
    for name in checkpoint.params:
        tensors.append((f"adam_v.{name}", checkpoint.adam_state.v[name]))
    tensors.append(("loss_history", np.asarray(checkpoint.loss_history, dtype=float)))

    header = io.StringIO()
    header.write(f"iteration = {checkpoint.iteration}\n")
    header.write(f"adam_step = {checkpoint.adam_state.step}\n")
    for section, cfg in (
        ("network", checkpoint.net_config),
        ("train", checkpoint.train_config),
        ("loss", checkpoint.weights),
    ):
        header.write("\n".join(_config_lines(section, cfg)) + "\n")
    header.write("[tensors]\n")
    offset = 0
    payload = []
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype=float)
        dims = ",".join(str(d) for d in arr.shape)
        header.write(f"{name} {dims or '-'} {offset}\n")
        payload.append(arr.tobytes("C"))
        offset += arr.nbytes
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(header.getvalue().encode("ascii"))
        f.write(b"DATA\n")
        for chunk in payload:
            f.write(chunk)


class CheckpointError(ValueError):
    """Checkpoint file is unreadable or inconsistent."""


def load_checkpoint(path):
    """Read back a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(_MAGIC):
        raise CheckpointError(f"bad checkpoint magic in {path}")
    data_at = raw.find(b"DATA\n")
    if data_at < 0:
        raise CheckpointError("checkpoint has no DATA marker")
    header = raw[len(_MAGIC):data_at].decode("ascii")
    payload = raw[data_at + len(b"DATA\n"):]

    sections = {"": {}}
    manifest = []
    current = sections[""]
    in_tensors = False
    for line in header.splitlines():
        line = line.strip()
        if not line:
            continue
        if line == "[tensors]":
            in_tensors = True
            continue
        if in_tensors:
            parts = line.split()
            if len(parts) != 3:
                raise CheckpointError(f"bad tensor manifest line {line!r}")
            name, dims, offset = parts
            shape = () if dims == "-" else tuple(int(d) for d in dims.split(","))
            manifest.append((name, shape, int(offset)))
            continue
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1], {})
            continue
        if "=" not in line:
            raise CheckpointError(f"bad checkpoint header line {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        current[key] = value

    arrays = {}
    for name, shape, offset in manifest:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(payload):
            raise CheckpointError(f"tensor {name!r} overruns checkpoint payload")
        arrays[name] = np.frombuffer(payload[offset:end], dtype="<f8").reshape(shape).copy()

    try:
        net_config = _parse_config(NetworkConfig, sections.get("network", {}))
        train_config = _parse_config(TrainConfig, sections.get("train", {}))
        weights = _parse_config(LossWeights, sections.get("loss", {}))
        iteration = int(sections[""]["iteration"])
        adam_t = int(sections[""]["adam_step"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"invalid checkpoint header: {exc}") from exc

    params = ModelParams()
    m, v = {}, {}
    for name, _shape, _off in manifest:
        if name.startswith("adam_m."):
            m[name[len("adam_m."):]] = arrays[name]
        elif name.startswith("adam_v."):
            v[name[len("adam_v."):]] = arrays[name]
        elif name != "loss_history":
            params[name] = Tensor(arrays[name], requires_grad=True)
    missing = set(params) - set(m) or set(params) - set(v)
    if missing:
        raise CheckpointError(f"checkpoint missing Adam moments for {sorted(missing)}")
    return Checkpoint(
        iteration=iteration,
        params=params,
        adam_state=AdamState(m, v, adam_t),
        net_config=net_config,
        train_config=train_config,
        weights=weights,
        loss_history=arrays.get("loss_history", np.zeros(0)),
    )
