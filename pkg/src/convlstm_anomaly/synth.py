"""Procedural bouncing-shapes video generation and clip file I/O.

Clips are grayscale frame stacks in [0, 1] with optional anomalous
frame intervals as ground truth. Scenes hold shapes (square, disc,
cross) moving at constant velocity with elastic wall bounces; anomalies
inject speed changes, direction changes, shape swaps, or extra objects
over a frame interval, and those intervals become the ground truth.

On disk a clip is a directory of binary PGM (P5) frames named
`frame_%06d.pgm` plus an optional `ground_truth.txt` of inclusive
`start end` pairs, one per line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import (
    parse_bool,
    parse_float,
    parse_int,
    parse_pair,
    read_kv_file,
)
from .errors import ConfigError, DataError

SHAPES = ("square", "disc", "cross")
ANOMALY_KINDS = ("speed", "direction", "shape", "new_object")

_FRAME_RE = re.compile(r"^frame_(\d{6})\.pgm$")


def normalize_intervals(intervals) -> list[tuple[int, int]]:
    """Sort inclusive intervals and merge overlaps."""
    ivs = sorted((int(s), int(e)) for s, e in intervals)
    for s, e in ivs:
        if s > e:
            raise ConfigError(f"interval start {s} > end {e}")
    merged: list[tuple[int, int]] = []
    for s, e in ivs:
        if merged and s <= merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


@dataclass
class VideoClip:
    """Frames [T, 1, S, S] in [0, 1] plus anomalous frame intervals."""

    frames: np.ndarray
    ground_truth: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[1] != 1:
            raise ConfigError(
                f"clip frames must be [T, 1, S, S], got {self.frames.shape}"
            )
        if self.frames.size and (
            self.frames.min() < 0.0 or self.frames.max() > 1.0
        ):
            raise ConfigError("frame values must lie in [0, 1]")
        self.ground_truth = normalize_intervals(self.ground_truth)
        n = len(self)
        for s, e in self.ground_truth:
            if s < 0 or e >= n:
                raise ConfigError(
                    f"ground-truth interval [{s}, {e}] outside clip of {n} frames"
                )

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_size(self) -> int:
        return self.frames.shape[2]


@dataclass
class ObjectSpec:
    shape: str
    size: int
    intensity: float = 1.0
    position: tuple[float, float] | None = None  # (row, col); None -> random
    velocity: tuple[float, float] = (0.0, 0.0)  # px/frame (row, col)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}; choose from {SHAPES}")
        if self.size < 1:
            raise ConfigError("object size must be >= 1")


@dataclass
class AnomalySpec:
    """One injected behavior change over an inclusive frame interval."""

    kind: str
    start: int
    end: int
    target: int | None = None  # object index for speed/direction/shape
    factor: float = 3.0  # speed multiplier
    velocity: tuple[float, float] | None = None  # direction override
    shape: str | None = None  # shape override
    object: ObjectSpec | None = None  # for new_object

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise ConfigError(
                f"unknown anomaly kind {self.kind!r}; choose from {ANOMALY_KINDS}"
            )
        if self.start < 0 or self.end < self.start:
            raise ConfigError(f"bad anomaly interval [{self.start}, {self.end}]")
        if self.kind == "new_object":
            if self.object is None:
                raise ConfigError("new_object anomaly needs object.* fields")
        elif self.target is None:
            raise ConfigError(f"{self.kind} anomaly needs a target object index")
        if self.kind == "direction" and self.velocity is None:
            raise ConfigError("direction anomaly needs a velocity override")
        if self.kind == "shape" and self.shape is None:
            raise ConfigError("shape anomaly needs a shape override")


@dataclass
class SceneSpec:
    frame_size: int
    objects: list[ObjectSpec]
    anomalies: list[AnomalySpec] = field(default_factory=list)
    bounce: bool = True
    background: float = 0.0

    def __post_init__(self):
        if self.frame_size < 1:
            raise ConfigError("frame_size must be >= 1")
        if not 0.0 <= self.background <= 1.0:
            raise ConfigError("background must lie in [0, 1]")
        if not self.objects:
            raise ConfigError("scene needs at least one object")
        for a in self.anomalies:
            if a.target is not None and not 0 <= a.target < len(self.objects):
                raise ConfigError(f"anomaly target {a.target} out of range")


def shape_mask(shape: str, size: int) -> np.ndarray:
    if shape == "square":
        return np.ones((size, size))
    if shape == "disc":
        c = (size - 1) / 2.0
        yy, xx = np.mgrid[0:size, 0:size]
        return ((yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0) ** 2).astype(float)
    if shape == "cross":
        bar = max(1, size // 3)
        lo = (size - bar) // 2
        m = np.zeros((size, size))
        m[lo : lo + bar, :] = 1.0
        m[:, lo : lo + bar] = 1.0
        return m
    raise ConfigError(f"unknown shape {shape!r}")


def _stamp(canvas: np.ndarray, mask: np.ndarray, top: int, left: int, intensity: float):
    s = mask.shape[0]
    size = canvas.shape[0]
    r0, r1 = max(0, top), min(size, top + s)
    c0, c1 = max(0, left), min(size, left + s)
    if r0 >= r1 or c0 >= c1:
        return
    canvas[r0:r1, c0:c1] += intensity * mask[r0 - top : r1 - top, c0 - left : c1 - left]


def _advance(pos: float, step: float, hi: float, bounce: bool) -> tuple[float, int]:
    """Move one axis by `step`, reflecting off [0, hi]; returns (pos, sign)."""
    sign = 1
    pos = pos + step
    if not bounce:
        return pos, sign
    while pos < 0.0 or pos > hi:
        if pos < 0.0:
            pos = -pos
        else:
            pos = 2.0 * hi - pos
        sign = -sign
        if hi == 0.0:
            return 0.0, sign
    return pos, sign


class _ObjectState:
    def __init__(self, spec: ObjectSpec, pos: tuple[float, float]):
        self.spec = spec
        self.pos = [float(pos[0]), float(pos[1])]
        self.vel = [float(spec.velocity[0]), float(spec.velocity[1])]
        self.saved_vel: list[float] | None = None


def generate(spec: SceneSpec, length: int, seed: int) -> VideoClip:
    """Render a clip; deterministic for a given (spec, length, seed).

    The seed only feeds unspecified spawn positions, drawn in object
    order (scene objects first, then new_object anomalies).
    """
    if length < 1:
        raise ConfigError("clip length must be >= 1")
    size = spec.frame_size
    rng = np.random.default_rng(seed)

    def spawn(ospec: ObjectSpec) -> _ObjectState:
        if ospec.size > size:
            raise ConfigError(
                f"object of size {ospec.size} does not fit a {size}px frame"
            )
        hi = size - ospec.size
        if ospec.position is None:
            pos = (float(rng.integers(0, hi + 1)), float(rng.integers(0, hi + 1)))
        else:
            pos = ospec.position
            if not (0 <= pos[0] <= hi and 0 <= pos[1] <= hi):
                raise ConfigError(f"object at {pos} does not fit at spawn")
        return _ObjectState(ospec, pos)

    states = [spawn(o) for o in spec.objects]
    extra_states: dict[int, _ObjectState] = {
        i: spawn(a.object)
        for i, a in enumerate(spec.anomalies)
        if a.kind == "new_object"
    }

    def active(a: AnomalySpec, t: int) -> bool:
        return a.start <= t <= a.end

    frames = np.empty((length, 1, size, size))
    masks = {}

    def mask_for(shape: str, sz: int) -> np.ndarray:
        key = (shape, sz)
        if key not in masks:
            masks[key] = shape_mask(shape, sz)
        return masks[key]

    def step_state(st: _ObjectState, factor: float):
        hi = float(size - st.spec.size)
        for axis in range(2):
            st.pos[axis], sign = _advance(
                st.pos[axis], st.vel[axis] * factor, hi, spec.bounce
            )
            st.vel[axis] *= sign

    for t in range(length):
        canvas = np.full((size, size), spec.background)
        for oi, st in enumerate(states):
            shp = st.spec.shape
            for a in spec.anomalies:
                if a.kind == "shape" and a.target == oi and active(a, t):
                    shp = a.shape
            _stamp(
                canvas,
                mask_for(shp, st.spec.size),
                int(round(st.pos[0])),
                int(round(st.pos[1])),
                st.spec.intensity,
            )
        for i, a in enumerate(spec.anomalies):
            if a.kind == "new_object" and active(a, t):
                st = extra_states[i]
                _stamp(
                    canvas,
                    mask_for(st.spec.shape, st.spec.size),
                    int(round(st.pos[0])),
                    int(round(st.pos[1])),
                    st.spec.intensity,
                )
        frames[t, 0] = np.clip(canvas, 0.0, 1.0)

        # advance into frame u = t+1; a step is anomalous if u is in-interval
        u = t + 1
        for a in spec.anomalies:
            if a.kind != "direction":
                continue
            st = states[a.target]
            if active(a, u) and st.saved_vel is None:
                st.saved_vel = list(st.vel)
                st.vel = [float(a.velocity[0]), float(a.velocity[1])]
            elif not active(a, u) and st.saved_vel is not None:
                st.vel = st.saved_vel
                st.saved_vel = None
        factors = [1.0] * len(states)
        for a in spec.anomalies:
            if a.kind == "speed" and active(a, u):
                factors[a.target] *= a.factor
        for st, factor in zip(states, factors):
            step_state(st, factor)
        for i, a in enumerate(spec.anomalies):
            if a.kind == "new_object" and active(a, u):
                step_state(extra_states[i], 1.0)

    gt = normalize_intervals(
        (a.start, min(a.end, length - 1))
        for a in spec.anomalies
        if a.start <= length - 1
    )
    return VideoClip(frames=frames, ground_truth=gt)


# ---------------------------------------------------------------------------
# PGM and interval file I/O


def save_pgm(path, frame: np.ndarray) -> None:
    """Write one [H, W] float frame in [0, 1] as binary PGM, maxval 255."""
    data = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    if data.ndim != 2:
        raise ConfigError(f"PGM frame must be 2-d, got shape {data.shape}")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def load_pgm(path) -> np.ndarray:
    """Read a binary PGM into a float [H, W] array scaled to [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()

    def fail(why):
        raise DataError(f"{path}: {why}")

    pos = 0
    tokens = []
    while len(tokens) < 4:
        if pos >= len(raw):
            fail("truncated header")
        ch = raw[pos : pos + 1]
        if ch == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end : end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        fail(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        fail("malformed header")
    if w < 1 or h < 1:
        fail("bad dimensions")
    if not 1 <= maxval <= 255:
        fail(f"unsupported maxval {maxval}")
    if len(raw) - pos < w * h:
        fail("truncated pixel data")
    data = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / maxval


def write_intervals(path, intervals) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s, e in intervals:
            fh.write(f"{int(s)} {int(e)}\n")


def read_intervals(path) -> list[tuple[int, int]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'start end'")
            try:
                out.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer interval") from None
    return out


def save_clip(clip: VideoClip, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(len(clip)):
        save_pgm(directory / f"frame_{i:06d}.pgm", clip.frames[i, 0])
    if clip.ground_truth:
        write_intervals(directory / "ground_truth.txt", clip.ground_truth)


def load_clip(directory) -> VideoClip:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    found = {}
    for p in directory.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            found[int(m.group(1))] = p
    if not found:
        raise DataError(f"{directory}: no frame_%06d.pgm files")
    count = max(found) + 1
    missing = sorted(set(range(count)) - set(found))
    if missing:
        raise DataError(
            f"{directory}: missing frame index {missing[0]} "
            f"(frame_{missing[0]:06d}.pgm)"
        )
    frames = []
    size = None
    for i in range(count):
        img = load_pgm(found[i])
        if size is None:
            size = img.shape
        elif img.shape != size:
            raise DataError(
                f"{found[i]}: size {img.shape} differs from first frame {size}"
            )
        frames.append(img[None, :, :])
    gt_path = directory / "ground_truth.txt"
    gt = read_intervals(gt_path) if gt_path.exists() else []
    return VideoClip(frames=np.stack(frames), ground_truth=gt)


def resize_grayscale(frame: np.ndarray, target_side: int) -> np.ndarray:
    """Bilinear resize of a [1, H, W] or [H, W] frame to target x target."""
    arr = np.asarray(frame, dtype=np.float64)
    squeeze = arr.ndim == 3
    if squeeze:
        if arr.shape[0] != 1:
            raise ConfigError(f"expected single-channel frame, got {arr.shape}")
        arr = arr[0]
    if arr.ndim != 2:
        raise ConfigError(f"expected a 2-d frame, got shape {arr.shape}")
    if target_side < 1:
        raise ConfigError("target side must be >= 1")
    h, w = arr.shape
    out = _bilinear_axis(_bilinear_axis(arr, target_side, axis=0), target_side, axis=1)
    assert out.shape == (target_side, target_side)
    return out[None, :, :] if squeeze else out


def _bilinear_axis(arr: np.ndarray, target: int, axis: int) -> np.ndarray:
    src = arr.shape[axis]
    if target == src:
        return arr
    if target == 1:
        coords = np.array([(src - 1) / 2.0])
    else:
        coords = np.arange(target) * (src - 1) / (target - 1)
    lo = np.floor(coords).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = coords - lo
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, hi, axis=axis)
    shape = [1, 1]
    shape[axis] = target
    f = frac.reshape(shape)
    return a * (1.0 - f) + b * f


# ---------------------------------------------------------------------------
# scene spec files


def _group_indexed(kv: dict[str, str], prefix: str):
    """Collect `prefix.N.rest` keys into {index: {rest: value}}."""
    groups: dict[int, dict[str, str]] = {}
    for key, value in kv.items():
        parts = key.split(".")
        if parts[0] != prefix:
            continue
        if len(parts) < 3 or not parts[1].isdigit():
            raise ConfigError(f"malformed key {key!r}")
        groups.setdefault(int(parts[1]), {})[".".join(parts[2:])] = value
    return groups


def _object_from_kv(d: dict[str, str], where: str) -> ObjectSpec:
    known = {"shape", "size", "intensity", "position", "velocity"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")
    if "shape" not in d or "size" not in d:
        raise ConfigError(f"{where}: shape and size are required")
    return ObjectSpec(
        shape=d["shape"],
        size=parse_int(d["size"], f"{where}.size"),
        intensity=parse_float(d.get("intensity", "1.0"), f"{where}.intensity"),
        position=(
            parse_pair(d["position"], f"{where}.position")
            if "position" in d
            else None
        ),
        velocity=(
            parse_pair(d["velocity"], f"{where}.velocity")
            if "velocity" in d
            else (0.0, 0.0)
        ),
    )


def scene_spec_from_kv(kv: dict[str, str]) -> SceneSpec:
    top_known = {"frame_size", "background", "bounce"}
    for key in kv:
        head = key.split(".")[0]
        if head not in top_known and head not in ("objects", "anomalies"):
            raise ConfigError(f"unknown scene key {key!r}")
    if "frame_size" not in kv:
        raise ConfigError("scene spec needs frame_size")

    objects = []
    obj_groups = _group_indexed(kv, "objects")
    for idx in sorted(obj_groups):
        objects.append(_object_from_kv(obj_groups[idx], f"objects.{idx}"))

    anomalies = []
    for idx, d in sorted(_group_indexed(kv, "anomalies").items()):
        where = f"anomalies.{idx}"
        obj_kv = {
            k.split(".", 1)[1]: v for k, v in d.items() if k.startswith("object.")
        }
        plain = {k: v for k, v in d.items() if not k.startswith("object.")}
        known = {"kind", "start", "end", "target", "factor", "velocity", "shape"}
        unknown = sorted(set(plain) - known)
        if unknown:
            raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")
        for req in ("kind", "start", "end"):
            if req not in plain:
                raise ConfigError(f"{where}: {req} is required")
        anomalies.append(
            AnomalySpec(
                kind=plain["kind"],
                start=parse_int(plain["start"], f"{where}.start"),
                end=parse_int(plain["end"], f"{where}.end"),
                target=(
                    parse_int(plain["target"], f"{where}.target")
                    if "target" in plain
                    else None
                ),
                factor=parse_float(plain.get("factor", "3.0"), f"{where}.factor"),
                velocity=(
                    parse_pair(plain["velocity"], f"{where}.velocity")
                    if "velocity" in plain
                    else None
                ),
                shape=plain.get("shape"),
                object=(
                    _object_from_kv(obj_kv, f"{where}.object") if obj_kv else None
                ),
            )
        )

    return SceneSpec(
        frame_size=parse_int(kv["frame_size"], "frame_size"),
        objects=objects,
        anomalies=anomalies,
        bounce=parse_bool(kv.get("bounce", "true"), "bounce"),
        background=parse_float(kv.get("background", "0.0"), "background"),
    )


def load_scene_spec(path) -> SceneSpec:
    return scene_spec_from_kv(read_kv_file(path))
