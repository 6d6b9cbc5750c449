"""Procedural scenes: low-dimensional body pose plus high-dimensional identity texture.

Behavior lives in a binary silhouette controlled by four pose parameters
(horizontal position, tilt about the feet, arm elevation, crouch). Identity
lives in an 8x8 random texture patch stamped into the head region, defined
as the top quarter of the silhouette's bounding box. Two scenes that share
everything but the identity therefore differ only inside the head region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np

from spx.errors import InvalidArgument, SplitTooSmall
from spx.patterns import SensingOperator
from spx.recognisability import LabeledMeasurementSet, temporal_features
from spx.rng import derive_seed, generator
from spx.sensing import FrameBatch, NoiseModel, Scene

# Normal and abnormal activities, one per class.
BEHAVIOR_NAMES = ("standing", "collapse", "fighting", "leaning")
TEXTURE_SIZE = 8
HEAD_FRACTION = 0.25
FLOOR = 0.92
BODY_LENGTH = 0.66
TEXTURE_AMPLITUDE = 0.4

_TASK_CODE = {"privacy": 1, "behavior": 2}
_IDENTITY_STREAM = 7
DEFAULT_SIGMA = 6.0


@dataclass(frozen=True)
class SynthSpec:
    height: int = 32
    width: int = 32
    num_identities: int = 20
    num_behaviors: int = 4
    samples_per_class: int = 50
    t_frames: int = 8
    noise: NoiseModel = field(default_factory=lambda: NoiseModel("iid_gaussian", sigma=DEFAULT_SIGMA))
    master_seed: int = 0

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise InvalidArgument("scenes must be at least 8x8")
        if self.num_identities < 2 or self.num_behaviors < 2:
            raise InvalidArgument("need at least two identities and two behaviors")
        if self.num_behaviors > len(BEHAVIOR_NAMES):
            raise InvalidArgument(f"at most {len(BEHAVIOR_NAMES)} behavior classes are defined")
        if self.samples_per_class < 1 or self.t_frames < 1:
            raise InvalidArgument("counts must be positive")

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def replace(self, **changes) -> "SynthSpec":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return SynthSpec(**values)


@dataclass(frozen=True, eq=False)
class IdentityBank:
    """One zero-mean texture patch per identity, values in [-1, 1]."""

    textures: tuple[np.ndarray, ...]
    seeds: tuple[int, ...]

    @classmethod
    def build(cls, spec: SynthSpec) -> "IdentityBank":
        seeds = tuple(derive_seed(spec.master_seed, _IDENTITY_STREAM, u) for u in range(spec.num_identities))
        textures = tuple(
            generator(s).uniform(-1.0, 1.0, (TEXTURE_SIZE, TEXTURE_SIZE)) for s in seeds
        )
        return cls(textures, seeds)


@dataclass(frozen=True)
class Pose:
    center: float  # feet column, fraction of width
    tilt: float  # radians from vertical, rotation about the feet
    arms: float  # 0 = hanging, pi = straight up
    crouch: float  # 0 = full height, 1 = most compressed

    N_PARAMS = 4


@lru_cache(maxsize=8)
def _pixel_centers(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    rr, cc = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    rr.setflags(write=False)
    cc.setflags(write=False)
    return rr, cc


def _capsules(rr, cc, starts, ends, radii) -> np.ndarray:
    """Union of thick segments ``starts[i] -> ends[i]`` with half-widths ``radii[i]``."""
    ab = ends - starts
    denom = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    dr = rr[None] - starts[:, 0, None, None]
    dc = cc[None] - starts[:, 1, None, None]
    t = np.clip((dr * ab[:, 0, None, None] + dc * ab[:, 1, None, None]) / denom[:, None, None], 0.0, 1.0)
    dist2 = (dr - t * ab[:, 0, None, None]) ** 2 + (dc - t * ab[:, 1, None, None]) ** 2
    return np.any(dist2 <= (radii**2)[:, None, None], axis=0)


def silhouette(pose: Pose, height: int, width: int) -> np.ndarray:
    """Binary body mask for ``pose`` on an ``height x width`` grid."""
    rr, cc = _pixel_centers(height, width)
    length = BODY_LENGTH * height * (1.0 - 0.4 * pose.crouch)
    feet = np.array([FLOOR * height, pose.center * width])
    up = np.array([-np.cos(pose.tilt), np.sin(pose.tilt)])
    side = np.array([np.sin(pose.tilt), np.cos(pose.tilt)])

    def at(u, v):
        return feet + u * length * up + v * length * side

    scale = height / 32.0
    hip, neck, head = at(0.45, 0.0), at(0.8, 0.0), at(0.92, 0.0)
    starts, ends, radii = [hip, head], [neck, head], [2.2 * scale, 0.09 * length + 0.5 * scale]
    for s in (-1.0, 1.0):
        starts.append(at(0.0, 0.08 * s))
        ends.append(hip)
        radii.append(1.2 * scale)
        shoulder = at(0.78, 0.1 * s)
        arm_dir = -np.cos(pose.arms) * up + s * np.sin(pose.arms) * side
        starts.append(shoulder)
        ends.append(shoulder + 0.35 * length * arm_dir)
        radii.append(1.0 * scale)
    return _capsules(rr, cc, np.array(starts), np.array(ends), np.array(radii))


def head_region(mask: np.ndarray) -> np.ndarray:
    """Top quarter (by rows) of the mask's bounding box, intersected with the mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return np.zeros_like(mask)
    top = rows[0]
    span = rows[-1] - top + 1
    cut = top + int(np.ceil(HEAD_FRACTION * span))
    region = np.zeros_like(mask)
    region[top:cut] = mask[top:cut]
    return region


@dataclass(frozen=True)
class BehaviorClass:
    """Pose distribution and motion of one behavior.

    ``start`` draws the instance pose; ``trajectory`` maps a phase in [0, 1]
    to the pose at that point of the motion.
    """

    name: str
    static: bool

    def start(self, rng: np.random.Generator) -> dict:
        center = rng.uniform(0.4, 0.6)
        side = rng.choice([-1.0, 1.0])
        if self.name == "standing":
            return dict(center=center, tilt=rng.uniform(-0.05, 0.05), arms=rng.uniform(0.0, 0.3),
                        crouch=rng.uniform(0.0, 0.1), sway=rng.uniform(0.03, 0.08), side=side)
        if self.name == "collapse":
            return dict(center=0.5 - side * rng.uniform(0.15, 0.25), tilt=0.0, arms=rng.uniform(0.2, 0.8),
                        crouch=rng.uniform(0.0, 0.1), fall=rng.uniform(1.3, 1.5), side=side)
        if self.name == "fighting":
            return dict(center=center, tilt=side * rng.uniform(0.05, 0.15), arms=rng.uniform(1.6, 2.2),
                        crouch=rng.uniform(0.1, 0.25), swing=rng.uniform(0.6, 0.9), side=side)
        return dict(center=center, tilt=side * rng.uniform(0.3, 0.42), arms=rng.uniform(0.2, 0.6),
                    crouch=rng.uniform(0.0, 0.1), side=side)

    def trajectory(self, p: dict, phase: float) -> Pose:
        if self.name == "standing":
            return Pose(p["center"], p["tilt"] + p["sway"] * np.sin(2 * np.pi * phase), p["arms"], p["crouch"])
        if self.name == "collapse":
            tilt = p["side"] * p["fall"] * phase
            return Pose(p["center"], tilt, p["arms"], p["crouch"] + 0.3 * phase)
        if self.name == "fighting":
            return Pose(p["center"], p["tilt"], p["arms"] + p["swing"] * np.sin(2 * np.pi * phase), p["crouch"])
        return Pose(p["center"], p["tilt"], p["arms"], p["crouch"])


@dataclass(frozen=True)
class BehaviorBank:
    classes: tuple[BehaviorClass, ...]

    @classmethod
    def build(cls, spec: SynthSpec) -> "BehaviorBank":
        return cls(tuple(BehaviorClass(n, n == "leaning") for n in BEHAVIOR_NAMES[: spec.num_behaviors]))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)


def _check_labels(spec: SynthSpec, identity: int, behavior: int) -> None:
    if not 0 <= identity < spec.num_identities:
        raise InvalidArgument(f"identity {identity} out of range [0, {spec.num_identities})")
    if not 0 <= behavior < spec.num_behaviors:
        raise InvalidArgument(f"behavior {behavior} out of range [0, {spec.num_behaviors})")


def _instance(spec: SynthSpec, behavior: int, instance_seed: int):
    """Per-instance nuisance and pose parameters; independent of the identity."""
    rng = generator(instance_seed)
    klass = BehaviorBank.build(spec).classes[behavior]
    params = klass.start(rng)
    nuisance = dict(
        background=rng.uniform(0.05, 0.15),
        slope=rng.uniform(0.0, 0.05),
        angle=rng.uniform(0.0, 2 * np.pi),
        body=rng.uniform(0.55, 0.65),
        phase=rng.uniform(0.0, 1.0),
    )
    return klass, params, nuisance


def _render(spec: SynthSpec, texture: np.ndarray, pose: Pose, nuisance: dict) -> np.ndarray:
    h, w = spec.height, spec.width
    rr, cc = _pixel_centers(h, w)
    ramp = (np.cos(nuisance["angle"]) * rr / h + np.sin(nuisance["angle"]) * cc / w)
    image = nuisance["background"] + nuisance["slope"] * ramp
    mask = silhouette(pose, h, w)
    image[mask] = nuisance["body"]
    head = head_region(mask)
    hr, hc = np.nonzero(head)
    image[hr, hc] += TEXTURE_AMPLITUDE * texture[hr % TEXTURE_SIZE, hc % TEXTURE_SIZE]
    return np.clip(image, 0.0, 1.0)


def gen_scene(spec: SynthSpec, identity: int, behavior: int, instance_seed: int, bank: IdentityBank | None = None) -> Scene:
    """Single snapshot of an instance, at its own random motion phase."""
    _check_labels(spec, identity, behavior)
    bank = bank or IdentityBank.build(spec)
    klass, params, nuisance = _instance(spec, behavior, instance_seed)
    pose = klass.trajectory(params, nuisance["phase"])
    return Scene(spec.height, spec.width, _render(spec, bank.textures[identity], pose, nuisance).reshape(-1))


def gen_sequence(spec: SynthSpec, identity: int, behavior: int, instance_seed: int, bank: IdentityBank | None = None) -> FrameBatch:
    """``T`` frames sweeping the behavior's motion from phase 0 to 1.

    A single frame (``T == 1``) is the :func:`gen_scene` snapshot.
    """
    _check_labels(spec, identity, behavior)
    bank = bank or IdentityBank.build(spec)
    if spec.t_frames == 1:
        return FrameBatch(spec.height, spec.width, gen_scene(spec, identity, behavior, instance_seed, bank).values)
    klass, params, nuisance = _instance(spec, behavior, instance_seed)
    texture = bank.textures[identity]
    frames = [
        _render(spec, texture, klass.trajectory(params, t / (spec.t_frames - 1)), nuisance).reshape(-1)
        for t in range(spec.t_frames)
    ]
    return FrameBatch(spec.height, spec.width, np.column_stack(frames))


@dataclass(frozen=True, eq=False)
class InstanceTable:
    """Instances of one task: label, companion label, split and seed per row."""

    task: str
    identity: np.ndarray
    behavior: np.ndarray
    split: np.ndarray
    seed: np.ndarray
    index: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return self.identity if self.task == "privacy" else self.behavior

    def __len__(self) -> int:
        return self.seed.size


def split_counts(samples_per_class: int) -> tuple[int, int, int]:
    """Per-class 8:1:1 train/val/test sizes."""
    if samples_per_class < 10:
        raise SplitTooSmall(f"samples_per_class = {samples_per_class} < 10 cannot be split 8:1:1")
    n_val = samples_per_class // 10
    n_train = samples_per_class - 2 * n_val
    return n_train, n_val, samples_per_class - n_train - n_val


def instance_table(spec: SynthSpec, task: Literal["privacy", "behavior"]) -> InstanceTable:
    """Enumerate instances class by class; splits are assigned by instance index."""
    if task not in _TASK_CODE:
        raise InvalidArgument(f"unknown task {task!r}")
    n_train, n_val, _ = split_counts(spec.samples_per_class)
    k = spec.num_identities if task == "privacy" else spec.num_behaviors
    other = spec.num_behaviors if task == "privacy" else spec.num_identities
    label, companion, split, seed, index = [], [], [], [], []
    for cls in range(k):
        for i in range(spec.samples_per_class):
            label.append(cls)
            companion.append((cls + i) % other)
            split.append("train" if i < n_train else "val" if i < n_train + n_val else "test")
            seed.append(derive_seed(spec.master_seed, _TASK_CODE[task], cls, i))
            index.append(i)
    label, companion = np.array(label), np.array(companion)
    identity, behavior = (label, companion) if task == "privacy" else (companion, label)
    return InstanceTable(task, identity, behavior, np.array(split), np.array(seed, dtype=np.uint64), np.array(index))


def render_instances(spec: SynthSpec, table: InstanceTable) -> np.ndarray:
    """Stack every instance's frames: ``N x (count * T_task)`` in instance order.

    Privacy instances are single snapshots; behavior instances are
    ``spec.t_frames``-frame sequences.
    """
    bank = IdentityBank.build(spec)
    cols = []
    for u, b, s in zip(table.identity, table.behavior, table.seed):
        if table.task == "privacy":
            cols.append(gen_scene(spec, int(u), int(b), int(s), bank).values[:, None])
        else:
            cols.append(gen_sequence(spec, int(u), int(b), int(s), bank).frames)
    return np.hstack(cols)


def instance_features(spec: SynthSpec, op: SensingOperator, table: InstanceTable, frames: np.ndarray | None = None) -> np.ndarray:
    """Measure every instance through ``op``; one feature row per instance.

    Noise for instance ``i`` is drawn from ``derive_seed(seed_i, 1)``.
    """
    if frames is None:
        frames = render_instances(spec, table)
    t = 1 if table.task == "privacy" else spec.t_frames
    clean = op.effective @ frames
    rows = []
    for i, s in enumerate(table.seed):
        y = clean[:, i * t:(i + 1) * t]
        if spec.noise.kind != "none":
            y = y + spec.noise.sample(op.m, t, derive_seed(int(s), 1))
        rows.append(y[:, 0] if table.task == "privacy" else temporal_features(y))
    return np.vstack(rows)


def build_dataset(spec: SynthSpec, op: SensingOperator, task: Literal["privacy", "behavior"]):
    """Simulate, measure and split one task's data into (train, val, test)."""
    if (op.height, op.width) != (spec.height, spec.width):
        raise InvalidArgument("operator grid does not match the synthetic scene size")
    table = instance_table(spec, task)
    features = instance_features(spec, op, table)
    k = spec.num_identities if task == "privacy" else spec.num_behaviors
    out = []
    for name in ("train", "val", "test"):
        sel = table.split == name
        out.append(LabeledMeasurementSet(features[sel], table.labels[sel], k, task, op.rho, name, table.seed[sel]))
    return tuple(out)
