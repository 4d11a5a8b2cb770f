"""Scene parameterization and checkpoint I/O.

A scene is a static background Gaussian set plus one Gaussian set per
tracked rigid object, each object carried through time by a pose track
with learnable residuals, plus a sky cubemap.

All learnable state lives in plain float64 numpy arrays so optimizers can
address them uniformly. Checkpoints store the per-Gaussian columns as
little-endian float32 blocks; save -> load -> save is byte-identical
(rotations are written verbatim, never renormalized on save).
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from . import imio
from .geometry import quat_normalize

CHECKPOINT_SCHEMA_VERSION = 1

# fixed column order of the per-model binary block
COLUMN_ORDER = (
    "positions",
    "log_scales",
    "rotations",
    "opacity_logits",
    "appearance",
    "semantic",
)

_ID_RE = re.compile(r"^[A-Za-z0-9_\-]+$")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_sigmoid(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


@dataclass
class GaussianSet:
    """Columnar storage for one model's Gaussians.

    appearance is (N, k, B, 3): k Fourier coefficients per SH basis entry
    per color channel; k = 1 collapses to a static SH model. semantic is
    (N, M) class logits for the background model or (N,) one scalar
    vehicle logit per Gaussian for object models.
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    appearance: np.ndarray
    semantic: np.ndarray
    sh_degree: int = 1
    fourier_k: int = 1

    def __post_init__(self):
        for name in COLUMN_ORDER:
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        self.validate()

    @property
    def count(self):
        return self.positions.shape[0]

    @property
    def semantic_kind(self):
        return "vector" if self.semantic.ndim == 2 else "scalar"

    @property
    def sh_dim(self):
        return (self.sh_degree + 1) ** 2

    def validate(self):
        n = self.positions.shape[0]
        if self.positions.shape != (n, 3):
            raise ValueError("positions must be (N, 3)")
        if self.log_scales.shape != (n, 3):
            raise ValueError("log_scales must be (N, 3)")
        if self.rotations.shape != (n, 4):
            raise ValueError("rotations must be (N, 4)")
        if self.opacity_logits.shape != (n,):
            raise ValueError("opacity_logits must be (N,)")
        if self.fourier_k < 1:
            raise ValueError("fourier_k must be >= 1")
        if self.appearance.shape != (n, self.fourier_k, self.sh_dim, 3):
            raise ValueError(
                f"appearance must be (N, {self.fourier_k}, {self.sh_dim}, 3), "
                f"got {self.appearance.shape}"
            )
        if self.semantic.ndim not in (1, 2) or self.semantic.shape[0] != n:
            raise ValueError("semantic must be (N,) or (N, M)")
        for name in COLUMN_ORDER:
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        if n and np.any(np.linalg.norm(self.rotations, axis=-1) < 1e-8):
            raise ValueError("zero-norm rotation quaternion")

    def opacities(self):
        return sigmoid(self.opacity_logits)

    def subset(self, mask):
        return GaussianSet(
            positions=self.positions[mask],
            log_scales=self.log_scales[mask],
            rotations=self.rotations[mask],
            opacity_logits=self.opacity_logits[mask],
            appearance=self.appearance[mask],
            semantic=self.semantic[mask],
            sh_degree=self.sh_degree,
            fourier_k=self.fourier_k,
        )

    def concat(self, other):
        if (
            other.sh_degree != self.sh_degree
            or other.fourier_k != self.fourier_k
            or other.semantic.ndim != self.semantic.ndim
        ):
            raise ValueError("incompatible Gaussian sets")
        return GaussianSet(
            positions=np.concatenate([self.positions, other.positions]),
            log_scales=np.concatenate([self.log_scales, other.log_scales]),
            rotations=np.concatenate([self.rotations, other.rotations]),
            opacity_logits=np.concatenate([self.opacity_logits, other.opacity_logits]),
            appearance=np.concatenate([self.appearance, other.appearance]),
            semantic=np.concatenate([self.semantic, other.semantic]),
            sh_degree=self.sh_degree,
            fourier_k=self.fourier_k,
        )

    def copy(self):
        # subset(slice(None)) would hand back views; edits mutate copies in
        # place, so every column must own its buffer
        return GaussianSet(
            positions=self.positions.copy(),
            log_scales=self.log_scales.copy(),
            rotations=self.rotations.copy(),
            opacity_logits=self.opacity_logits.copy(),
            appearance=self.appearance.copy(),
            semantic=self.semantic.copy(),
            sh_degree=self.sh_degree,
            fourier_k=self.fourier_k,
        )


def empty_gaussian_set(sh_degree, fourier_k, semantic_kind, num_classes):
    B = (sh_degree + 1) ** 2
    sem_shape = (0, num_classes) if semantic_kind == "vector" else (0,)
    return GaussianSet(
        positions=np.zeros((0, 3)),
        log_scales=np.zeros((0, 3)),
        rotations=np.zeros((0, 4)),
        opacity_logits=np.zeros((0,)),
        appearance=np.zeros((0, fourier_k, B, 3)),
        semantic=np.zeros(sem_shape),
        sh_degree=sh_degree,
        fourier_k=fourier_k,
    )


@dataclass
class PoseTrack:
    """Per-frame rigid pose of one object with learnable residuals.

    rotations/translations are the tracker-provided world poses; the
    residuals refine them as R' = R Rz(delta_yaw), T' = T + delta_t.
    valid marks frames where the object exists.
    """

    rotations: np.ndarray          # (N_t, 3, 3)
    translations: np.ndarray       # (N_t, 3)
    valid: np.ndarray              # (N_t,) bool
    delta_yaws: np.ndarray = None          # (N_t,)
    delta_translations: np.ndarray = None  # (N_t, 3)

    def __post_init__(self):
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64)
        self.translations = np.ascontiguousarray(self.translations, dtype=np.float64)
        self.valid = np.ascontiguousarray(self.valid, dtype=bool)
        n = self.rotations.shape[0]
        if self.delta_yaws is None:
            self.delta_yaws = np.zeros(n)
        if self.delta_translations is None:
            self.delta_translations = np.zeros((n, 3))
        self.delta_yaws = np.ascontiguousarray(self.delta_yaws, dtype=np.float64)
        self.delta_translations = np.ascontiguousarray(
            self.delta_translations, dtype=np.float64
        )
        if self.rotations.shape != (n, 3, 3):
            raise ValueError("rotations must be (N_t, 3, 3)")
        if self.translations.shape != (n, 3):
            raise ValueError("translations must be (N_t, 3)")
        if self.valid.shape != (n,):
            raise ValueError("valid must be (N_t,)")
        if self.delta_yaws.shape != (n,) or self.delta_translations.shape != (n, 3):
            raise ValueError("pose residual shape mismatch")
        det = np.linalg.det(self.rotations[self.valid]) if self.valid.any() else np.ones(0)
        if det.size and np.any(np.abs(det - 1.0) > 1e-5):
            raise ValueError("tracked rotation is not special orthogonal")

    @property
    def num_frames(self):
        return self.rotations.shape[0]

    def copy(self):
        return PoseTrack(
            rotations=self.rotations.copy(),
            translations=self.translations.copy(),
            valid=self.valid.copy(),
            delta_yaws=self.delta_yaws.copy(),
            delta_translations=self.delta_translations.copy(),
        )


@dataclass
class SkyCubemap:
    """Six learnable RGB faces indexed (+x, -x, +y, -y, +z, -z)."""

    faces: np.ndarray  # (6, R, R, 3) float64 in [0, 1]

    def __post_init__(self):
        self.faces = np.ascontiguousarray(self.faces, dtype=np.float64)
        if self.faces.ndim != 4 or self.faces.shape[0] != 6 or self.faces.shape[3] != 3:
            raise ValueError("faces must be (6, R, R, 3)")
        if self.faces.shape[1] != self.faces.shape[2]:
            raise ValueError("cubemap faces must be square")

    @property
    def resolution(self):
        return self.faces.shape[1]

    @classmethod
    def constant(cls, resolution, value=0.5):
        return cls(np.full((6, resolution, resolution, 3), float(value)))

    def copy(self):
        return SkyCubemap(self.faces.copy())


@dataclass
class ObjectNode:
    gaussians: GaussianSet
    track: PoseTrack
    box_dims: np.ndarray  # (3,) object-frame extents (length, width, height)

    def __post_init__(self):
        self.box_dims = np.ascontiguousarray(self.box_dims, dtype=np.float64).reshape(3)
        if np.any(self.box_dims <= 0):
            raise ValueError("box_dims must be positive")
        if self.gaussians.semantic.ndim != 1:
            raise ValueError("object models carry a scalar semantic logit")


@dataclass
class SceneGraph:
    """Background + tracked objects + sky; the full optimizable scene."""

    background: GaussianSet
    objects: dict  # id -> ObjectNode, insertion order is the canonical order
    sky: SkyCubemap
    num_frames: int
    num_classes: int
    vehicle_class_index: int

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if not 0 <= self.vehicle_class_index < self.num_classes:
            raise ValueError("vehicle_class_index out of range")
        if self.background.semantic.ndim != 2 or self.background.semantic.shape[1] != self.num_classes:
            raise ValueError("background semantic must be (N, num_classes)")
        for oid, node in self.objects.items():
            if not _ID_RE.match(oid):
                raise ValueError(f"object id {oid!r} has characters unsafe for filenames")
            if node.track.num_frames != self.num_frames:
                raise ValueError(f"object {oid} track length != num_frames")

    def object_ids(self):
        return list(self.objects.keys())

    def total_gaussians(self):
        return self.background.count + sum(o.gaussians.count for o in self.objects.values())

    def copy(self):
        return SceneGraph(
            background=self.background.copy(),
            objects={
                oid: ObjectNode(n.gaussians.copy(), n.track.copy(), n.box_dims.copy())
                for oid, n in self.objects.items()
            },
            sky=self.sky.copy(),
            num_frames=self.num_frames,
            num_classes=self.num_classes,
            vehicle_class_index=self.vehicle_class_index,
        )


# ---------------------------------------------------------------------------
# checkpoint I/O


def _pack_columns(gs: GaussianSet) -> bytes:
    parts = []
    for name in COLUMN_ORDER:
        arr = np.ascontiguousarray(getattr(gs, name), dtype="<f4")
        parts.append(arr.tobytes())
    return b"".join(parts)


def _unpack_columns(raw, count, fourier_k, sh_dim, semantic_kind, num_classes):
    shapes = {
        "positions": (count, 3),
        "log_scales": (count, 3),
        "rotations": (count, 4),
        "opacity_logits": (count,),
        "appearance": (count, fourier_k, sh_dim, 3),
        "semantic": (count, num_classes) if semantic_kind == "vector" else (count,),
    }
    out = {}
    offset = 0
    for name in COLUMN_ORDER:
        shape = shapes[name]
        n = int(np.prod(shape)) if shape else 0
        block = np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
        out[name] = block.reshape(shape).astype(np.float64)
        offset += 4 * n
    if offset != len(raw):
        raise ValueError("checkpoint column block has trailing bytes")
    return out


def save_checkpoint(scene: SceneGraph, path):
    """Write meta.json, per-model float32 column blocks, and 16-bit sky
    face PNGs under path. Deterministic byte layout."""
    os.makedirs(path, exist_ok=True)
    meta = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "column_order": list(COLUMN_ORDER),
        "dtype": "<f4",
        "num_frames": int(scene.num_frames),
        "num_classes": int(scene.num_classes),
        "vehicle_class_index": int(scene.vehicle_class_index),
        "background": {
            "file": "background.bin",
            "count": int(scene.background.count),
            "sh_degree": int(scene.background.sh_degree),
            "fourier_k": int(scene.background.fourier_k),
            "semantic_kind": scene.background.semantic_kind,
        },
        "objects": [],
        "sky": {
            "resolution": int(scene.sky.resolution),
            "faces": [f"sky_face_{i}.png" for i in range(6)],
        },
    }
    with open(os.path.join(path, "background.bin"), "wb") as f:
        f.write(_pack_columns(scene.background))
    for oid, node in scene.objects.items():
        fname = f"object_{oid}.bin"
        meta["objects"].append(
            {
                "id": oid,
                "file": fname,
                "count": int(node.gaussians.count),
                "sh_degree": int(node.gaussians.sh_degree),
                "fourier_k": int(node.gaussians.fourier_k),
                "semantic_kind": node.gaussians.semantic_kind,
                "box_dims": [float(v) for v in node.box_dims],
                "rotations": node.track.rotations.tolist(),
                "translations": node.track.translations.tolist(),
                "valid": node.track.valid.astype(int).tolist(),
                "delta_yaws": node.track.delta_yaws.tolist(),
                "delta_translations": node.track.delta_translations.tolist(),
            }
        )
        with open(os.path.join(path, fname), "wb") as f:
            f.write(_pack_columns(node.gaussians))
    for i in range(6):
        face = np.clip(scene.sky.faces[i], 0.0, 1.0)
        imio.write_png16(os.path.join(path, f"sky_face_{i}.png"), face)
    with open(os.path.join(path, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> SceneGraph:
    with open(os.path.join(path, "meta.json")) as f:
        meta = json.load(f)
    if meta["schema_version"] != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {meta['schema_version']}")

    def read_set(entry, num_classes):
        with open(os.path.join(path, entry["file"]), "rb") as f:
            raw = f.read()
        sh_dim = (entry["sh_degree"] + 1) ** 2
        cols = _unpack_columns(
            raw, entry["count"], entry["fourier_k"], sh_dim,
            entry["semantic_kind"], num_classes,
        )
        return GaussianSet(
            sh_degree=entry["sh_degree"], fourier_k=entry["fourier_k"], **cols
        )

    background = read_set(meta["background"], meta["num_classes"])
    objects = {}
    for entry in meta["objects"]:
        gs = read_set(entry, meta["num_classes"])
        track = PoseTrack(
            rotations=np.array(entry["rotations"], dtype=np.float64),
            translations=np.array(entry["translations"], dtype=np.float64),
            valid=np.array(entry["valid"], dtype=bool),
            delta_yaws=np.array(entry["delta_yaws"], dtype=np.float64),
            delta_translations=np.array(entry["delta_translations"], dtype=np.float64),
        )
        objects[entry["id"]] = ObjectNode(
            gaussians=gs, track=track, box_dims=np.array(entry["box_dims"])
        )
    faces = np.stack(
        [
            imio.read_png16(os.path.join(path, fname))
            for fname in meta["sky"]["faces"]
        ]
    )
    return SceneGraph(
        background=background,
        objects=objects,
        sky=SkyCubemap(faces),
        num_frames=meta["num_frames"],
        num_classes=meta["num_classes"],
        vehicle_class_index=meta["vehicle_class_index"],
    )
