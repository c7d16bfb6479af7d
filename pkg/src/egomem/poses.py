"""Ego and exo human pose sequences and their JSON file formats.

Ego poses live in the camera frame of each target frame: 3D body joints plus
two 6DoF wrist poses. Exo poses are 2D skeleton tracks in the image plane.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError
from .geometry import PoseSE3, quat_to_rotation, rotation_to_quat


@dataclass(frozen=True)
class EgoPoseSequence:
    """n frames of J camera-frame 3D joints and left/right wrist poses."""

    joints: np.ndarray  # (n, J, 3) f64 meters
    wrists: tuple[tuple[PoseSE3, PoseSE3], ...]  # per frame (left, right)
    head_index: int
    pelvis_index: int

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.ndim != 3 or j.shape[2] != 3 or j.shape[1] < 2:
            raise ValueError("joints must be (n, J, 3) with J >= 2")
        if len(self.wrists) != j.shape[0]:
            raise ValueError("wrists must have one (left, right) pair per frame")
        if self.head_index == self.pelvis_index:
            raise ValueError("head and pelvis indices must differ")
        for idx in (self.head_index, self.pelvis_index):
            if not (0 <= idx < j.shape[1]):
                raise ValueError(f"joint index {idx} out of range for J={j.shape[1]}")
        j.setflags(write=False)
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "wrists", tuple(tuple(w) for w in self.wrists))

    @property
    def n_frames(self) -> int:
        return self.joints.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joints.shape[1]

    def wrist_positions(self) -> np.ndarray:
        """(n, 2, 3) wrist translations."""
        return np.array([[w.translation for w in pair] for pair in self.wrists])

    def wrist_rotations(self) -> np.ndarray:
        """(n, 2, 3, 3) wrist rotation matrices."""
        return np.array([[w.rotation for w in pair] for pair in self.wrists])


@dataclass(frozen=True)
class ExoPerson:
    person_id: int
    keypoints: np.ndarray  # (K, 3) f64: x, y, confidence

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64)
        if kp.ndim != 2 or kp.shape[1] != 3:
            raise ValueError("keypoints must be (K, 3) of x, y, confidence")
        if kp.size and (kp[:, 2].min() < 0 or kp[:, 2].max() > 1):
            raise ValueError("confidences must lie in [0, 1]")
        kp.setflags(write=False)
        object.__setattr__(self, "keypoints", kp)


@dataclass(frozen=True)
class ExoPoseSequence:
    """Per-frame lists of 2D skeleton detections."""

    frames: tuple[tuple[ExoPerson, ...], ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int):
        return self.frames[i]

    def without_person(self, person_id: int) -> "ExoPoseSequence":
        return ExoPoseSequence(tuple(
            tuple(p for p in frame if p.person_id != person_id) for frame in self.frames
        ))


@dataclass(frozen=True)
class SkeletonTopology:
    """Bone list plus a per-limb color palette (RGB in [0, 1])."""

    edges: tuple[tuple[int, int], ...]
    palette: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if not self.palette:
            raise ValueError("palette must be non-empty")


DEFAULT_PALETTE = (
    (1.0, 0.2, 0.2), (0.2, 1.0, 0.2), (0.2, 0.4, 1.0), (1.0, 1.0, 0.2),
    (1.0, 0.2, 1.0), (0.2, 1.0, 1.0), (1.0, 0.6, 0.2), (0.6, 0.2, 1.0),
    (0.6, 1.0, 0.4), (0.4, 0.6, 1.0), (1.0, 0.4, 0.6), (0.7, 0.7, 0.7),
)


def _load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(path, e.lineno, e.msg) from None


def load_topology(path) -> SkeletonTopology:
    """topology.json: {"edges": [[i, j], ...], "palette": [[r, g, b], ...]}."""
    data = _load_json(path)
    try:
        edges = tuple((int(a), int(b)) for a, b in data["edges"])
        palette = tuple((float(r), float(g), float(b)) for r, g, b in data["palette"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(path, 1, f"malformed topology: {e}") from None
    return SkeletonTopology(edges=edges, palette=palette)


def save_topology(path, topo: SkeletonTopology) -> None:
    payload = {"edges": [list(e) for e in topo.edges], "palette": [list(c) for c in topo.palette]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_exo_sequence(path) -> ExoPoseSequence:
    """skeleton_exo.json: per-frame array of {"id": int, "keypoints": [[x,y,c],...]}."""
    data = _load_json(path)
    if not isinstance(data, list):
        raise ParseError(path, 1, "expected a top-level array over frames")
    frames = []
    for f, persons in enumerate(data):
        out = []
        for p in persons:
            try:
                out.append(ExoPerson(person_id=int(p["id"]), keypoints=np.asarray(p["keypoints"], dtype=np.float64)))
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(path, 1, f"frame {f}: malformed person record: {e}") from None
        frames.append(tuple(out))
    return ExoPoseSequence(tuple(frames))


def save_exo_sequence(path, exo: ExoPoseSequence) -> None:
    payload = [
        [{"id": p.person_id, "keypoints": p.keypoints.tolist()} for p in frame]
        for frame in exo.frames
    ]
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_ego_sequence(path) -> EgoPoseSequence:
    """skeleton_ego.json with joints (n x J x 3), per-frame wrist pairs as
    (qx,qy,qz,qw,tx,ty,tz), and the head/pelvis joint indices."""
    data = _load_json(path)
    try:
        joints = np.asarray(data["joints"], dtype=np.float64)
        wrist_raw = data["wrists"]
        head = int(data["head_index"])
        pelvis = int(data["pelvis_index"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(path, 1, f"malformed ego sequence: {e}") from None
    wrists = []
    for f, pair in enumerate(wrist_raw):
        if len(pair) != 2:
            raise ParseError(path, 1, f"frame {f}: expected two wrists, got {len(pair)}")
        decoded = []
        for rec in pair:
            if len(rec) != 7:
                raise ParseError(path, 1, f"frame {f}: wrist record must be (qx,qy,qz,qw,tx,ty,tz)")
            qx, qy, qz, qw, tx, ty, tz = (float(x) for x in rec)
            q = np.array([qx, qy, qz, qw])
            norm = np.linalg.norm(q)
            if abs(norm - 1.0) > 1e-3:
                raise ParseError(path, 1, f"frame {f}: wrist quaternion norm {norm:.6f} too far from 1")
            q = q / norm
            decoded.append(PoseSE3(quat_to_rotation(*q), np.array([tx, ty, tz])))
        wrists.append(tuple(decoded))
    return EgoPoseSequence(joints=joints, wrists=tuple(wrists), head_index=head, pelvis_index=pelvis)


def save_ego_sequence(path, ego: EgoPoseSequence) -> None:
    wrists = []
    for pair in ego.wrists:
        row = []
        for w in pair:
            q = rotation_to_quat(w.rotation)
            t = w.translation
            row.append([q[0], q[1], q[2], q[3], t[0], t[1], t[2]])
        wrists.append(row)
    payload = {
        "joints": ego.joints.tolist(),
        "wrists": wrists,
        "head_index": ego.head_index,
        "pelvis_index": ego.pelvis_index,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
