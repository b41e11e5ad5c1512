"""Reading/writing NeRFStudio-style transforms files and pose post-processing.

transforms.json layout: shared intrinsics keys at the top level
(fl_x, fl_y, cx, cy, w, h, k1, k2, p1, p2) with a ``frames`` list of
``{file_path, transform_matrix}`` records; frames may override any intrinsic
key.  Matrices are 4x4 camera-to-world in the OPENGL convention.  Files are
serialized deterministically (sorted keys, shortest round-trip floats) so
equal inputs produce byte-identical output.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConventionError,
    DegenerateGeometry,
    InvalidArgument,
    ParseError,
    ValidationError,
)
from .rig_geometry import CameraIntrinsics, CameraPose, Convention

MATRIX_ORTHO_TOL = 1e-6

_INTRINSIC_KEYS = ("fl_x", "fl_y", "cx", "cy", "w", "h", "k1", "k2", "p1", "p2")
_REQUIRED_KEYS = ("fl_x", "fl_y", "cx", "cy", "w", "h")


def _intrinsics_record(intr: CameraIntrinsics) -> dict:
    return {
        "fl_x": float(intr.fx),
        "fl_y": float(intr.fy),
        "cx": float(intr.cx),
        "cy": float(intr.cy),
        "w": int(intr.width),
        "h": int(intr.height),
        "k1": float(intr.k1),
        "k2": float(intr.k2),
        "p1": float(intr.p1),
        "p2": float(intr.p2),
    }


def _record_intrinsics(rec: dict) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=rec["fl_x"], fy=rec["fl_y"], cx=rec["cx"], cy=rec["cy"],
        width=int(rec["w"]), height=int(rec["h"]),
        k1=rec.get("k1", 0.0), k2=rec.get("k2", 0.0),
        p1=rec.get("p1", 0.0), p2=rec.get("p2", 0.0),
    )


@dataclass
class TransformFrame:
    file_path: str
    transform_matrix: np.ndarray  # (4, 4) camera-to-world
    intrinsics: CameraIntrinsics

    def pose(self) -> CameraPose:
        return CameraPose.from_matrix(self.transform_matrix, Convention.OPENGL)


@dataclass
class TransformsDocument:
    frames: list[TransformFrame]
    shared_intrinsics: CameraIntrinsics | None = None
    meta: dict = field(default_factory=dict)


def atomic_write_text(path: Path, text: str) -> Path:
    """Write via a sibling temp file and rename, so readers never see a
    partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return path


def dumps_canonical(obj) -> str:
    """Deterministic JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_transforms(
    frames: Sequence[tuple[str, CameraPose, CameraIntrinsics]],
    out_path,
    meta: dict | None = None,
) -> Path:
    """Serialize frames to a transforms.json file.

    All poses must be OPENGL-convention; file paths must be unique.  Shared
    intrinsics come from the first frame, frames that differ carry their own
    full key set.
    """
    if not frames:
        raise InvalidArgument("no frames to write")
    paths = [p for p, _, _ in frames]
    if len(set(paths)) != len(paths):
        dupes = sorted({p for p in paths if paths.count(p) > 1})
        raise InvalidArgument(f"duplicate frame paths: {dupes}")
    for path, pose, _ in frames:
        if pose.convention is not Convention.OPENGL:
            raise ConventionError(
                f"frame {path!r}: transforms files require OPENGL poses, "
                f"got {pose.convention.value}"
            )

    shared = _intrinsics_record(frames[0][2])
    doc: dict = dict(shared)
    doc["frames"] = []
    for path, pose, intr in frames:
        rec: dict = {"file_path": path,
                     "transform_matrix": [[float(v) for v in row] for row in pose.matrix()]}
        this = _intrinsics_record(intr)
        if this != shared:
            rec.update(this)
        doc["frames"].append(rec)
    if meta:
        doc["meta"] = meta
    return atomic_write_text(Path(out_path), dumps_canonical(doc))


def read_transforms(path) -> TransformsDocument:
    """Parse and validate a transforms.json file.

    Violations (missing keys, malformed/non-orthonormal matrices, duplicate
    paths) raise :class:`ValidationError` whose details name the offending
    frame index.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON: {exc}") from exc

    problems: list[str] = []
    for key in _REQUIRED_KEYS:
        if key not in raw:
            problems.append(f"missing intrinsics key {key!r}")
    if "frames" not in raw or not isinstance(raw["frames"], list):
        problems.append("missing frames list")
    if problems:
        raise ValidationError(f"{path}: invalid transforms document", problems)

    shared_rec = {k: raw[k] for k in _INTRINSIC_KEYS if k in raw}
    shared = _record_intrinsics(shared_rec)

    frames: list[TransformFrame] = []
    seen: set[str] = set()
    for i, rec in enumerate(raw["frames"]):
        fp = rec.get("file_path")
        if not isinstance(fp, str):
            problems.append(f"frame {i}: missing file_path")
            continue
        if fp in seen:
            problems.append(f"frame {i}: duplicate file_path {fp!r}")
        seen.add(fp)
        m = np.asarray(rec.get("transform_matrix", []), dtype=np.float64)
        if m.shape != (4, 4):
            problems.append(f"frame {i}: transform_matrix is not 4x4")
            continue
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            problems.append(f"frame {i}: last matrix row is not [0,0,0,1]")
            continue
        r = m[:3, :3]
        ortho_err = float(np.abs(r.T @ r - np.eye(3)).max())
        det = float(np.linalg.det(r))
        if ortho_err > MATRIX_ORTHO_TOL or abs(det - 1.0) > MATRIX_ORTHO_TOL:
            problems.append(
                f"frame {i}: rotation not orthonormal "
                f"(|R^T R - I|={ortho_err:.2e}, det={det:.6f}) for {fp!r}"
            )
            continue
        merged = dict(shared_rec)
        merged.update({k: rec[k] for k in _INTRINSIC_KEYS if k in rec})
        frames.append(TransformFrame(fp, m, _record_intrinsics(merged)))

    if problems:
        raise ValidationError(f"{path}: invalid transforms document", problems)
    return TransformsDocument(frames=frames, shared_intrinsics=shared,
                              meta=raw.get("meta", {}))


class NormalizationScope(str, enum.Enum):
    PER_TIMESTEP = "per_timestep"
    ACROSS_TIMESTEPS = "across_timesteps"


@dataclass(frozen=True)
class Similarity:
    """x' = scale * (rotation @ x + translation); rotation is always I here."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (points @ self.rotation.T + self.translation)

    def to_dict(self) -> dict:
        return {
            "scale": float(self.scale),
            "rotation": [[float(v) for v in row] for row in self.rotation],
            "translation": [float(v) for v in self.translation],
        }


def _fit_similarity(centers: np.ndarray) -> Similarity:
    centroid = centers.mean(axis=0)
    radii = np.linalg.norm(centers - centroid, axis=1)
    max_r = float(radii.max())
    if max_r == 0.0:
        raise DegenerateGeometry("all camera centers coincide; scale is undefined")
    return Similarity(scale=1.0 / max_r, rotation=np.eye(3), translation=-centroid)


def normalize_and_center(
    groups: Sequence[Sequence[CameraPose]],
    scope: NormalizationScope = NormalizationScope.PER_TIMESTEP,
) -> tuple[list[list[CameraPose]], list[Similarity]]:
    """Center camera positions on their centroid and scale the farthest to 1.

    ``groups`` is a frame group per timestep.  PER_TIMESTEP fits one
    similarity per group; ACROSS_TIMESTEPS fits a single similarity over all
    groups (returned as a one-element list).  Rotations are untouched, so
    relative poses are preserved up to the global similarity.
    """
    scope = NormalizationScope(scope)
    if not groups or any(len(g) == 0 for g in groups):
        raise InvalidArgument("need at least one pose per group")

    def transform_group(group, sim):
        return [
            CameraPose(p.rotation, sim.apply(p.translation[None])[0],
                       p.convention, p.degenerate)
            for p in group
        ]

    if scope is NormalizationScope.PER_TIMESTEP:
        sims = []
        out = []
        for group in groups:
            centers = np.stack([p.translation for p in group])
            sim = _fit_similarity(centers)
            sims.append(sim)
            out.append(transform_group(group, sim))
        return out, sims

    centers = np.concatenate([[p.translation for p in g] for g in groups])
    sim = _fit_similarity(centers)
    return [transform_group(g, sim) for g in groups], [sim]


def normalize_documents(
    docs: Sequence[TransformsDocument],
    scope: NormalizationScope = NormalizationScope.PER_TIMESTEP,
) -> tuple[list[TransformsDocument], list[Similarity]]:
    """Apply :func:`normalize_and_center` to whole transforms documents."""
    groups = [[f.pose() for f in doc.frames] for doc in docs]
    new_groups, sims = normalize_and_center(groups, scope)
    out_docs = []
    for doc, group in zip(docs, new_groups):
        frames = [
            TransformFrame(f.file_path, p.matrix(), f.intrinsics)
            for f, p in zip(doc.frames, group)
        ]
        out_docs.append(TransformsDocument(frames, doc.shared_intrinsics, dict(doc.meta)))
    return out_docs, sims


def split_frames(items: Sequence, ratio: float, seed: int, key=None):
    """Deterministic train/test partition.

    Items are ranked by a hash of (seed, index, key) so the split is stable
    across platforms and runs; |train| = round(ratio * N) (banker's
    rounding).  Outputs preserve the original ordering.
    """
    if not 0.0 < ratio < 1.0:
        raise InvalidArgument(f"ratio must be in (0, 1), got {ratio}")
    n = len(items)
    if n < 2:
        raise InvalidArgument(f"need at least two frames to split, got {n}")
    if key is None:
        key = lambda item: getattr(item, "file_path", str(item))  # noqa: E731

    def rank(i):
        token = f"{seed}|{i}|{key(items[i])}".encode("utf-8")
        return hashlib.sha256(token).hexdigest()

    order = sorted(range(n), key=lambda i: (rank(i), i))
    n_train = round(ratio * n)
    train_idx = set(order[:n_train])
    train = [items[i] for i in range(n) if i in train_idx]
    test = [items[i] for i in range(n) if i not in train_idx]
    return train, test
