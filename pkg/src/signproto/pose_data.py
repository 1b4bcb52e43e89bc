"""Skeleton sequence ingestion, normalization, augmentation and persistence.

Keypoints arrive in the 133-joint COCO-WholeBody layout::

    0-16    body      17-22   feet      23-90   face (68 iBUG landmarks)
    91-111  left hand 112-132 right hand

and are split into four partitions (body, left_hand, right_hand, face).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    DataError,
    TruncatedPayloadError,
    VersionMismatchError,
)

NUM_JOINTS = 133
PARTITION_NAMES = ("body", "left_hand", "right_hand", "face")
DEFAULT_TAU = 0.3
SPEED_FACTORS = (0.8, 1.0, 1.25)
DEFAULT_FPS = 25.0

# COCO body indices
NOSE, L_SHOULDER, R_SHOULDER = 0, 5, 6
L_ELBOW, R_ELBOW, L_WRIST, R_WRIST = 7, 8, 9, 10
L_HIP, R_HIP = 11, 12
FACE_START, LEFT_HAND_START, RIGHT_HAND_START = 23, 91, 112
NOSE_TIP_LANDMARK = 30  # iBUG-68 index of the nose tip


@dataclass(frozen=True)
class PartitionSpec:
    """Which joints of the 133-layout form a partition.

    ``virtual_joints`` are appended after ``joint_indices``; each is the
    midpoint of a pair of source joints with confidence ``min`` of the pair.
    """

    name: str
    joint_indices: tuple[int, ...]
    anchor_index: int | None = None
    virtual_joints: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.name not in PARTITION_NAMES:
            raise DataError(f"unknown partition {self.name!r}")
        idx = self.joint_indices
        if len(set(idx)) != len(idx):
            raise DataError(f"{self.name}: duplicate joint indices")
        for j in list(idx) + [j for pair in self.virtual_joints for j in pair]:
            if not 0 <= j < NUM_JOINTS:
                raise DataError(f"{self.name}: joint index {j} outside [0, {NUM_JOINTS})")
        if self.anchor_index is not None and self.anchor_index not in idx:
            raise DataError(f"{self.name}: anchor {self.anchor_index} not among its joints")

    @property
    def num_joints(self) -> int:
        return len(self.joint_indices) + len(self.virtual_joints)

    @property
    def anchor_row(self) -> int | None:
        if self.anchor_index is None:
            return None
        return self.joint_indices.index(self.anchor_index)


def _hand_indices(wrist: int, start: int) -> tuple[int, ...]:
    # the body wrist stands in for the hand root keypoint (start + 0)
    return (wrist,) + tuple(range(start + 1, start + 21))


DEFAULT_PARTITIONS: tuple[PartitionSpec, ...] = (
    PartitionSpec(
        "body",
        (NOSE, L_SHOULDER, R_SHOULDER, L_ELBOW, R_ELBOW, L_WRIST, R_WRIST),
        None,
        ((L_SHOULDER, R_SHOULDER), (L_HIP, R_HIP)),  # neck, mid-hip
    ),
    PartitionSpec("left_hand", _hand_indices(L_WRIST, LEFT_HAND_START), L_WRIST),
    PartitionSpec("right_hand", _hand_indices(R_WRIST, RIGHT_HAND_START), R_WRIST),
    PartitionSpec(
        "face",
        tuple(range(FACE_START, FACE_START + 68)),
        FACE_START + NOSE_TIP_LANDMARK,
    ),
)


@dataclass
class KeypointSequence:
    video_id: str
    gloss: str
    frames: np.ndarray  # (T, 133, 3): x px, y px, confidence
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        f = self.frames
        if f.ndim != 3 or f.shape[1] != NUM_JOINTS or f.shape[2] != 3:
            raise DataError(f"expected frames of shape (T, {NUM_JOINTS}, 3), got {f.shape}")
        if f.shape[0] < 1:
            raise DataError("sequence has no frames")
        conf = f[..., 2]
        if np.any(conf < 0) or np.any(conf > 1) or not np.all(np.isfinite(f)):
            raise DataError(f"{self.video_id}: confidences must lie in [0, 1] and values be finite")
        if not self.fps > 0:
            raise DataError("fps must be positive")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class NormalizedSample:
    video_id: str
    gloss: str
    coords: dict[str, np.ndarray]  # name -> (T, J_p, 2) float32
    masks: dict[str, np.ndarray]  # name -> (T, J_p) float32 in {0, 1}

    @property
    def num_frames(self) -> int:
        return next(iter(self.coords.values())).shape[0]

    def __eq__(self, other):
        if not isinstance(other, NormalizedSample):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.gloss == other.gloss
            and list(self.coords) == list(other.coords)
            and all(np.array_equal(self.coords[k], other.coords[k]) for k in self.coords)
            and all(np.array_equal(self.masks[k], other.masks[k]) for k in self.masks)
        )


# ---------------------------------------------------------------------------
# partitioning and normalization


def partition_keypoints(frames: np.ndarray, specs: Sequence[PartitionSpec] = DEFAULT_PARTITIONS):
    """Gather the partitions out of one frame ``(133, 3)`` or a clip ``(T, 133, 3)``.

    Returns ``{name: (coords (..., J_p, 2), confidences (..., J_p))}``.
    """
    frames = np.asarray(frames)
    if frames.ndim not in (2, 3) or frames.shape[-2:] != (NUM_JOINTS, 3):
        actual = frames.shape[-2] if frames.ndim >= 2 else frames.shape
        raise DataError(
            f"malformed joint count: expected {NUM_JOINTS} joints with (x, y, conf), "
            f"got {actual} (array shape {frames.shape})"
        )
    out = {}
    for spec in specs:
        parts = [frames[..., list(spec.joint_indices), :]]
        for a, b in spec.virtual_joints:
            xy = 0.5 * (frames[..., a, :2] + frames[..., b, :2])
            conf = np.minimum(frames[..., a, 2], frames[..., b, 2])
            parts.append(np.concatenate([xy, conf[..., None]], axis=-1)[..., None, :])
        block = np.concatenate(parts, axis=-2)
        out[spec.name] = (block[..., :2], block[..., 2])
    return out


def normalize_sequence(
    seq: KeypointSequence,
    specs: Sequence[PartitionSpec] = DEFAULT_PARTITIONS,
    tau: float = DEFAULT_TAU,
) -> NormalizedSample:
    """Global body scaling, local re-centering of hands/face, confidence gating."""
    if not 0 < tau < 1:
        raise DataError(f"tau must lie in (0, 1), got {tau}")
    parts = partition_keypoints(seq.frames.astype(np.float64), specs)
    if "body" not in parts:
        raise DataError("normalization needs a body partition")

    body_xy, body_conf = parts["body"]
    confident = body_xy[body_conf >= tau]
    if confident.size == 0:
        raise DataError(f"{seq.video_id}: degenerate input, no confident body joint in any frame")
    lo, hi = confident.min(axis=0), confident.max(axis=0)
    scale = float(np.max(hi - lo))
    if scale == 0.0:
        raise DataError(f"{seq.video_id}: degenerate input, body box has zero size (all body joints coincide)")
    center = 0.5 * (lo + hi)

    coords, masks = {}, {}
    for spec in specs:
        xy, conf = parts[spec.name]
        xy = 2.0 * (xy - center) / scale
        row = spec.anchor_row
        if row is not None:
            xy = xy - xy[:, row : row + 1, :]
        keep = conf >= tau
        xy = np.where(keep[..., None], xy, 0.0)
        coords[spec.name] = xy.astype(np.float32)
        masks[spec.name] = keep.astype(np.float32)
    return NormalizedSample(seq.video_id, seq.gloss, coords, masks)


# ---------------------------------------------------------------------------
# temporal resampling


def _resample(sample: NormalizedSample, new_len: int) -> NormalizedSample:
    T = sample.num_frames
    if T < 2:
        raise DataError(f"{sample.video_id}: cannot interpolate a clip with {T} frame(s)")
    if new_len < 2:
        raise DataError(f"target length must be >= 2, got {new_len}")
    pos = np.arange(new_len, dtype=np.float64) * (T - 1) / (new_len - 1)
    i0 = np.minimum(np.floor(pos).astype(np.int64), T - 1)
    frac = pos - i0
    i1 = np.where(frac > 0, np.minimum(i0 + 1, T - 1), i0)

    coords, masks = {}, {}
    for name, xy in sample.coords.items():
        m = sample.masks[name]
        f = frac[:, None, None]
        c = (1.0 - f) * xy[i0].astype(np.float64) + f * xy[i1].astype(np.float64)
        mask = (m[i0] > 0) & (m[i1] > 0)
        coords[name] = np.where(mask[..., None], c, 0.0).astype(np.float32)
        masks[name] = mask.astype(np.float32)
    return NormalizedSample(sample.video_id, sample.gloss, coords, masks)


def speed_augment(sample: NormalizedSample, factor: float) -> NormalizedSample:
    """Play the clip at ``factor`` times its speed: ``T' = round(T / factor)``."""
    if not factor > 0:
        raise DataError(f"speed factor must be positive, got {factor}")
    if sample.num_frames < 2:
        raise DataError(f"{sample.video_id}: cannot interpolate a clip with {sample.num_frames} frame(s)")
    new_len = max(2, int(math.floor(sample.num_frames / factor + 0.5)))
    return _resample(sample, new_len)


def resample_to_length(sample: NormalizedSample, length: int) -> NormalizedSample:
    return _resample(sample, length)


# ---------------------------------------------------------------------------
# binary sample files

MAGIC = b"PSLR"
FORMAT_VERSION = 1
KIND_RAW, KIND_NORMALIZED = 0, 1


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def write_sample(obj: KeypointSequence | NormalizedSample, path) -> None:
    path = Path(path)
    if isinstance(obj, KeypointSequence):
        T = obj.num_frames
        chunks = [MAGIC, struct.pack("<IIIB", FORMAT_VERSION, T, NUM_JOINTS, KIND_RAW)]
        chunks.append(np.ascontiguousarray(obj.frames, dtype="<f4").tobytes())
    elif isinstance(obj, NormalizedSample):
        T = obj.num_frames
        chunks = [MAGIC, struct.pack("<IIIB", FORMAT_VERSION, T, NUM_JOINTS, KIND_NORMALIZED)]
        for name in PARTITION_NAMES:
            xy, m = obj.coords[name], obj.masks[name]
            chunks.append(struct.pack("<I", xy.shape[1]))
            chunks.append(np.ascontiguousarray(xy, dtype="<f4").tobytes())
            chunks.append(np.ascontiguousarray(m, dtype="<f4").tobytes())
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    chunks += [_pack_str(obj.gloss), _pack_str(obj.video_id)]
    path.write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"{self.path}: truncated payload (needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)})"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def read_sample(path) -> KeypointSequence | NormalizedSample:
    """Inverse of :func:`write_sample`.

    Raises BadMagicError, VersionMismatchError or TruncatedPayloadError.
    """
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    r = _Reader(data, path)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: version mismatch, file has {version}, reader supports {FORMAT_VERSION}")
    T, J, kind = r.unpack("<IIB")
    if kind == KIND_RAW:
        if J != NUM_JOINTS:
            raise DataError(f"{path}: malformed joint count, expected {NUM_JOINTS}, got {J}")
        frames = r.floats((T, J, 3))
        gloss, video_id = r.string(), r.string()
        return KeypointSequence(video_id, gloss, frames)
    if kind == KIND_NORMALIZED:
        coords, masks = {}, {}
        for name in PARTITION_NAMES:
            (jp,) = r.unpack("<I")
            coords[name] = r.floats((T, jp, 2))
            masks[name] = r.floats((T, jp))
        gloss, video_id = r.string(), r.string()
        return NormalizedSample(video_id, gloss, coords, masks)
    raise DataError(f"{path}: unknown sample kind {kind}")


def load_normalized(path, tau: float = DEFAULT_TAU, specs=DEFAULT_PARTITIONS) -> NormalizedSample:
    """Read a sample file, normalizing raw keypoints on the fly."""
    obj = read_sample(path)
    if isinstance(obj, KeypointSequence):
        return normalize_sequence(obj, specs, tau)
    return obj


# ---------------------------------------------------------------------------
# manifests

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    gloss: str
    split: str
    file_path: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    gloss_vocabulary: list[str] = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.video_id in seen:
                raise DataError(f"duplicate video_id {e.video_id!r} in manifest")
            if e.split not in SPLITS:
                raise DataError(f"{e.video_id}: unknown split {e.split!r}")
            seen.add(e.video_id)
        if not self.gloss_vocabulary:
            self.gloss_vocabulary = sorted({e.gloss for e in self.entries})
        vocab = set(self.gloss_vocabulary)
        missing = {e.gloss for e in self.entries} - vocab
        if missing:
            raise DataError(f"glosses missing from vocabulary: {sorted(missing)}")

    def split(self, name: str | None) -> list[ManifestEntry]:
        if name is None:
            return list(self.entries)
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.file_path)
        return p if p.is_absolute() else self.root / p

    def check_files(self) -> None:
        absent = [e.video_id for e in self.entries if not self.resolve(e).is_file()]
        if absent:
            raise DataError(f"{len(absent)} manifest file(s) missing, e.g. {absent[:3]}")


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = ["# video_id\tgloss\tsplit\tpath"]
    lines += [f"{e.video_id}\t{e.gloss}\t{e.split}\t{e.file_path}" for e in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    entries = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise DataError(f"{path}:{n}: expected 4 tab-separated fields, got {len(fields)}")
        entries.append(ManifestEntry(*fields))
    vocab = list(dict.fromkeys(e.gloss for e in entries))
    return DatasetManifest(entries, vocab, path.parent)


# ---------------------------------------------------------------------------
# synthetic data


def geometric_counts(n_classes: int, high: int, low: int) -> list[int]:
    """Long-tail class sizes decaying geometrically from ``high`` to ``low``."""
    if n_classes == 1:
        return [high]
    ratio = low / high
    return [int(round(high * ratio ** (i / (n_classes - 1)))) for i in range(n_classes)]


def _face_template() -> np.ndarray:
    """Rough 68-landmark face in a unit box centred on the nose tip."""
    pts = np.zeros((68, 2))
    a = np.linspace(np.pi, 0.0, 17)
    pts[0:17] = np.c_[0.9 * np.cos(a), -0.2 + 1.1 * np.sin(a)]
    pts[17:22] = np.c_[np.linspace(-0.75, -0.15, 5), -0.75 - 0.08 * np.sin(np.linspace(0, np.pi, 5))]
    pts[22:27] = np.c_[np.linspace(0.15, 0.75, 5), -0.75 - 0.08 * np.sin(np.linspace(0, np.pi, 5))]
    pts[27:31] = np.c_[np.zeros(4), np.linspace(-0.55, 0.0, 4)]
    pts[31:36] = np.c_[np.linspace(-0.2, 0.2, 5), np.full(5, 0.1)]
    for start, cx in ((36, -0.4), (42, 0.4)):
        t = np.linspace(0, 2 * np.pi, 6, endpoint=False)
        pts[start : start + 6] = np.c_[cx + 0.15 * np.cos(t), -0.45 + 0.06 * np.sin(t)]
    t = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts[48:60] = np.c_[0.35 * np.cos(t), 0.45 + 0.12 * np.sin(t)]
    t = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    pts[60:68] = np.c_[0.25 * np.cos(t), 0.45 + 0.05 * np.sin(t)]
    return pts


@dataclass
class _Template:
    wrist_amp: np.ndarray  # (2 hands, 3 harmonics, 2 dims)
    wrist_phase: np.ndarray
    rest: np.ndarray  # (2, 2) resting wrist offset from shoulder
    curl_base: np.ndarray  # (2, 5)
    curl_amp: np.ndarray
    curl_phase: np.ndarray
    roll_amp: np.ndarray  # (2,)
    roll_phase: np.ndarray
    mouth_amp: float
    mouth_phase: float


def _make_template(rng: np.random.Generator) -> _Template:
    return _Template(
        wrist_amp=rng.uniform(-1.0, 1.0, (2, 3, 2)) * np.array([60.0, 30.0, 15.0])[None, :, None],
        wrist_phase=rng.uniform(0, 2 * np.pi, (2, 3, 2)),
        rest=np.c_[rng.uniform(-40, 40, 2), rng.uniform(20, 160, 2)],
        curl_base=rng.uniform(0.0, 1.2, (2, 5)),
        curl_amp=rng.uniform(0.0, 0.6, (2, 5)),
        curl_phase=rng.uniform(0, 2 * np.pi, (2, 5)),
        roll_amp=rng.uniform(0.0, 0.8, 2),
        roll_phase=rng.uniform(0, 2 * np.pi, 2),
        mouth_amp=float(rng.uniform(0.0, 1.0)),
        mouth_phase=float(rng.uniform(0, 2 * np.pi)),
    )


_FACE = _face_template()
_FINGER_ANGLES = np.array([-0.9, -0.35, 0.0, 0.3, 0.6])
_FINGER_LENGTHS = np.array([[9, 8, 7, 6], [11, 9, 7, 6], [12, 10, 8, 6], [11, 9, 7, 6], [9, 7, 6, 5]], dtype=float)


def _render(tpl: _Template, u: np.ndarray) -> np.ndarray:
    """Pixel keypoints (T, 133, 2) of a template evaluated at phases ``u``."""
    T = len(u)
    xy = np.zeros((T, NUM_JOINTS, 2))
    origin = np.array([320.0, 200.0])
    l_sh, r_sh = origin + [60, 0], origin + [-60, 0]
    xy[:, NOSE] = origin + [0, -70]
    xy[:, 1:5] = (origin + [0, -80])[None, None] + np.array([[8, -5], [-8, -5], [18, 0], [-18, 0]])[None]
    xy[:, L_SHOULDER], xy[:, R_SHOULDER] = l_sh, r_sh
    xy[:, L_HIP], xy[:, R_HIP] = origin + [45, 180], origin + [-45, 180]
    xy[:, 13:17] = xy[:, [11, 12, 11, 12]] + np.array([[0, 90], [0, 90], [0, 180], [0, 180]])
    xy[:, 17:23] = xy[:, [15, 15, 15, 16, 16, 16]] + np.array([[8, 10], [14, 10], [0, 14]] * 2)

    k = np.arange(1, 4)
    for h, (shoulder, wrist_j, elbow_j, start, side) in enumerate(
        ((l_sh, L_WRIST, L_ELBOW, LEFT_HAND_START, 1.0), (r_sh, R_WRIST, R_ELBOW, RIGHT_HAND_START, -1.0))
    ):
        arg = 2 * np.pi * k[None, :, None] * u[:, None, None] + tpl.wrist_phase[h][None]
        wrist = shoulder + tpl.rest[h] + np.sum(tpl.wrist_amp[h][None] * np.sin(arg), axis=1)
        xy[:, wrist_j] = wrist
        mid = 0.5 * (shoulder + wrist)
        xy[:, elbow_j] = mid + np.array([side * 25.0, 15.0])
        xy[:, start] = wrist
        roll = tpl.roll_amp[h] * np.sin(2 * np.pi * u + tpl.roll_phase[h])
        for f in range(5):
            curl = tpl.curl_base[h, f] + tpl.curl_amp[h, f] * np.sin(2 * np.pi * u + tpl.curl_phase[h, f])
            heading = -np.pi / 2 + side * _FINGER_ANGLES[f] + roll
            pos = wrist.copy()
            for seg in range(4):
                ang = heading + side * curl * (seg + 1) / 2.5
                pos = pos + _FINGER_LENGTHS[f, seg] * np.c_[np.cos(ang), np.sin(ang)]
                xy[:, start + 1 + 4 * f + seg] = pos

    face = np.repeat(_FACE[None], T, axis=0).copy()
    opening = tpl.mouth_amp * (0.5 + 0.5 * np.sin(2 * np.pi * u + tpl.mouth_phase))
    face[:, 48:68, 1] += (face[:, 48:68, 1] - 0.45) * 1.5 * opening[:, None]
    xy[:, FACE_START : FACE_START + 68] = xy[:, NOSE][:, None] + 40.0 * face
    return xy


def generate_synthetic_dataset(
    out_dir,
    n_classes: int,
    samples_per_class,
    T_range: tuple[int, int] = (40, 80),
    noise_scale: float = 0.02,
    seed: int = 0,
    template_seed: int | None = None,
    screen_offset: tuple[float, float] = (0.0, 0.0),
    screen_scale: float = 1.0,
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    dropout_rate: float = 0.0,
    gloss_prefix: str = "sign",
) -> DatasetManifest:
    """Write a synthetic raw-keypoint dataset plus ``manifest.tsv`` into ``out_dir``.

    Each class is a random smooth motion template (wrist trajectories, finger
    curls, hand roll, mouth opening). A sample is the template evaluated under a
    random monotone time warp, with Gaussian pixel noise of standard deviation
    ``noise_scale * 200`` (200 px is roughly the body box size).

    ``template_seed`` fixes the class templates independently of the per-sample
    randomness, so two calls sharing it but differing in ``seed``,
    ``noise_scale`` or screen placement act as two domains with the same
    vocabulary.
    """
    if n_classes < 2:
        raise DataError(f"need at least 2 classes, got {n_classes}")
    if isinstance(samples_per_class, int):
        samples_per_class = [samples_per_class] * n_classes
    samples_per_class = list(samples_per_class)
    if len(samples_per_class) != n_classes:
        raise DataError(f"samples_per_class has {len(samples_per_class)} entries for {n_classes} classes")
    if min(samples_per_class) < 1:
        raise DataError("every class needs at least one sample")
    lo_T, hi_T = T_range
    if lo_T < 2 or hi_T < lo_T:
        raise DataError(f"bad T_range {T_range}")

    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    tpl_rng = np.random.default_rng([seed if template_seed is None else template_seed, 0])
    templates = [_make_template(tpl_rng) for _ in range(n_classes)]

    width = len(str(n_classes - 1))
    entries = []
    for c, (tpl, count) in enumerate(zip(templates, samples_per_class)):
        gloss = f"{gloss_prefix}{c:0{width}d}"
        rng = np.random.default_rng([seed, 1, c])
        splits = _assign_splits(count, split_fractions, rng)
        for i in range(count):
            T = int(rng.integers(lo_T, hi_T + 1))
            x = np.linspace(0.0, 1.0, T)
            w = rng.uniform(-0.25, 0.25)
            u = x + w * np.sin(np.pi * x) / np.pi  # monotone since |w| < 1
            xy = _render(tpl, u)
            if noise_scale > 0:
                xy = xy + rng.normal(0.0, noise_scale * 200.0, xy.shape)
            xy = xy * screen_scale + np.asarray(screen_offset, dtype=float)
            conf = np.full((T, NUM_JOINTS), 0.95)
            if dropout_rate > 0:
                drop = rng.random((T, NUM_JOINTS)) < dropout_rate
                conf[drop] = rng.uniform(0.0, 0.25, int(drop.sum()))
            frames = np.concatenate([xy, conf[..., None]], axis=-1).astype(np.float32)
            vid = f"{gloss}_{i:03d}"
            rel = f"samples/{vid}.pslr"
            write_sample(KeypointSequence(vid, gloss, frames), out_dir / rel)
            entries.append(ManifestEntry(vid, gloss, splits[i], rel))

    vocab = [f"{gloss_prefix}{c:0{width}d}" for c in range(n_classes)]
    manifest = DatasetManifest(entries, vocab, out_dir)
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest


def _assign_splits(count: int, fractions, rng) -> list[str]:
    """At least one train sample; val and test get one each once count >= 3."""
    f_train, f_val, f_test = fractions
    n_val = int(round(count * f_val)) if f_val > 0 else 0
    n_test = int(round(count * f_test)) if f_test > 0 else 0
    if count >= 3:
        n_val = max(n_val, 1 if f_val > 0 else 0)
        n_test = max(n_test, 1 if f_test > 0 else 0)
    while n_val + n_test > count - 1:
        if n_val >= n_test and n_val > 0:
            n_val -= 1
        else:
            n_test -= 1
    labels = ["train"] * (count - n_val - n_test) + ["val"] * n_val + ["test"] * n_test
    return [labels[i] for i in rng.permutation(count)]


def iter_samples(manifest: DatasetManifest, split: str | None, tau: float = DEFAULT_TAU) -> Iterable[NormalizedSample]:
    for e in manifest.split(split):
        yield load_normalized(manifest.resolve(e), tau)
