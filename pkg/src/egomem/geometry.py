"""Rigid/similarity transforms, pinhole projection, rotation representations,
and trajectory alignment.

Conventions used throughout the package:
  - poses are camera-to-world: p_world = R @ p_cam + t
  - camera frame: x right, y down, z forward (depth = z)
  - pixel value lattice sits at integer coordinates, i.e. bilinear sampling at
    an integer (u, v) returns exactly that pixel; rasterizers round continuous
    coordinates with floor(x + 0.5)
  - all geometry is float64
"""

from __future__ import annotations

import csv
import gzip
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateConfiguration, DegenerateRotation6D, ParseError

# Near-plane cull depth in meters. Points at or below this depth never project.
Z_MIN = 1e-4

_ORTHO_TOL = 1e-9


def _as_vec3(p) -> np.ndarray:
    v = np.asarray(p, dtype=np.float64).reshape(3)
    return v


def _check_rotation(R: np.ndarray, tol: float = _ORTHO_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation matrix contains non-finite entries")
    if np.abs(R.T @ R - np.eye(3)).max() > tol:
        raise ValueError("rotation matrix is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("rotation matrix determinant is not +1")
    return R


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def scaled(self, stride: int) -> "PinholeIntrinsics":
        """Intrinsics of the grid downsampled by an integer stride.

        The principal point is mapped with the same half-pixel-center rule as
        feature sampling: c' = (c + 0.5)/stride - 0.5, so that full-resolution
        pixel (u, v) and coarse cell ((u+0.5)/s - 0.5, ...) name the same ray.
        """
        return PinholeIntrinsics(
            fx=self.fx / stride,
            fy=self.fy / stride,
            cx=(self.cx + 0.5) / stride - 0.5,
            cy=(self.cy + 0.5) / stride - 0.5,
            width=self.width // stride,
            height=self.height // stride,
        )


@dataclass(frozen=True)
class PoseSE3:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray  # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,) meters

    def __post_init__(self):
        R = _check_rotation(self.rotation)
        t = _as_vec3(self.translation)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.eye(3), np.zeros(3))

    def inverse(self) -> "PoseSE3":
        return PoseSE3(self.rotation.T, -self.rotation.T @ self.translation)


@dataclass(frozen=True)
class Sim3:
    """Similarity transform x -> scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError("scale must be a positive finite scalar")
        R = _check_rotation(self.rotation)
        t = _as_vec3(self.translation)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Sim3":
        return Sim3(1.0, np.eye(3), np.zeros(3))

    def inverse(self) -> "Sim3":
        Rinv = self.rotation.T
        return Sim3(1.0 / self.scale, Rinv, -Rinv @ self.translation / self.scale)

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation


def transform_point(pose: PoseSE3, p, direction: str) -> np.ndarray:
    """Map a point across a camera-to-world pose.

    direction "camera_to_world": R p + t; "world_to_camera": R^T (p - t).
    """
    p = _as_vec3(p)
    if direction == "camera_to_world":
        return pose.rotation @ p + pose.translation
    if direction == "world_to_camera":
        return pose.rotation.T @ (p - pose.translation)
    raise ValueError(f"unknown direction {direction!r}")


def project_to_pixel(intr: PinholeIntrinsics, p_cam, z_min: float = Z_MIN):
    """Project a camera-frame point. Returns (u, v, depth) or None if culled.

    Culling: depth <= z_min, or (u, v) outside [0, width) x [0, height).
    """
    x, y, z = _as_vec3(p_cam)
    if z <= z_min:
        return None
    u = intr.fx * x / z + intr.cx
    v = intr.fy * y / z + intr.cy
    if not (0.0 <= u < intr.width and 0.0 <= v < intr.height):
        return None
    return (u, v, z)


def unproject_pixel(intr: PinholeIntrinsics, u: float, v: float, depth: float) -> np.ndarray:
    """Inverse of project_to_pixel for in-bounds samples."""
    x = (u - intr.cx) / intr.fx * depth
    y = (v - intr.cy) / intr.fy * depth
    return np.array([x, y, depth], dtype=np.float64)


def sim3_apply(s: Sim3, pose: PoseSE3) -> PoseSE3:
    """Align a pose by a global similarity: (R, t) -> (R_S R, s R_S t + t_S)."""
    return PoseSE3(s.rotation @ pose.rotation, s.scale * s.rotation @ pose.translation + s.translation)


def sim3_compose(a: Sim3, b: Sim3) -> Sim3:
    """Composition a ∘ b (apply b first)."""
    return Sim3(a.scale * b.scale, a.rotation @ b.rotation, a.scale * a.rotation @ b.translation + a.translation)


def fit_sim3(source, target) -> Sim3:
    """Least-squares Sim(3) minimizing sum ||s R x_i + t - y_i||^2.

    Closed form via the SVD of the cross-covariance (Umeyama). Reflections are
    resolved by flipping the sign of the smallest singular vector when
    det(U V^T) < 0. Raises DegenerateConfiguration for fewer than 3 points or
    when the centered source covariance has rank < 2 (collinear points).
    """
    x = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if x.shape[0] != y.shape[0]:
        raise DegenerateConfiguration("source and target must have the same length")
    n = x.shape[0]
    if n < 3:
        raise DegenerateConfiguration(f"need at least 3 point pairs, got {n}")

    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y

    sv = np.linalg.svd(xc, compute_uv=False)
    if sv[0] <= 0.0 or sv[1] <= sv[0] * 1e-9:
        raise DegenerateConfiguration("source points are collinear or coincident")

    cov = yc.T @ xc / n
    U, d, Vt = np.linalg.svd(cov)
    signs = np.ones(3)
    if np.linalg.det(U @ Vt) < 0:
        signs[2] = -1.0
    R = U @ np.diag(signs) @ Vt

    var_x = (xc * xc).sum() / n
    scale = float((d * signs).sum() / var_x)
    t = mu_y - scale * R @ mu_x
    return Sim3(scale, R, t)


def rotation_error_deg(R_a, R_b) -> float:
    """Geodesic angle between two rotations in degrees, in [0, 180]."""
    R_a = np.asarray(R_a, dtype=np.float64)
    R_b = np.asarray(R_b, dtype=np.float64)
    c = (np.trace(R_a.T @ R_b) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def rot6d_encode(R) -> np.ndarray:
    """First two columns of a rotation matrix, column-major, as a 6-vector."""
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    return np.concatenate([R[:, 0], R[:, 1]])


def rot6d_decode(r6) -> np.ndarray:
    """Gram-Schmidt decode of the continuous 6D rotation representation."""
    r6 = np.asarray(r6, dtype=np.float64).reshape(6)
    a1 = r6[:3]
    a2 = r6[3:]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-12:
        raise DegenerateRotation6D("first column has near-zero norm")
    b1 = a1 / n1
    a2p = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(a2p)
    if n2 < 1e-12:
        raise DegenerateRotation6D("columns are parallel")
    b2 = a2p / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def quat_to_rotation(qx: float, qy: float, qz: float, qw: float) -> np.ndarray:
    """Unit quaternion (x, y, z, w) to rotation matrix (Hamilton convention)."""
    x, y, z, w = qx, qy, qz, qw
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def rotation_to_quat(R) -> np.ndarray:
    """Rotation matrix to unit quaternion (x, y, z, w), w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w], dtype=np.float64)
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class CameraTrajectory:
    """Ordered per-frame camera-to-world poses."""

    poses: tuple[PoseSE3, ...]

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i: int) -> PoseSE3:
        return self.poses[i]

    def __iter__(self):
        return iter(self.poses)

    def translations(self) -> np.ndarray:
        return np.stack([p.translation for p in self.poses]) if self.poses else np.zeros((0, 3))

    def rotations(self) -> np.ndarray:
        return np.stack([p.rotation for p in self.poses]) if self.poses else np.zeros((0, 3, 3))


_QUAT_NORM_TOL = 1e-3
_TRAJ_HEADER = ["frame", "tx", "ty", "tz", "qx", "qy", "qz", "qw"]


def _open_maybe_gzip_text(path):
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="utf-8", newline="")
    return open(path, "r", encoding="utf-8", newline="")


def load_trajectory(path) -> CameraTrajectory:
    """Read a trajectory.csv (frame,tx,ty,tz,qx,qy,qz,qw).

    Frame indices must be 0-based and strictly increasing. Quaternions are
    normalized on load and rejected if their norm is off unity by more than
    1e-3.
    """
    path = Path(path)
    poses = []
    with _open_maybe_gzip_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != _TRAJ_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(_TRAJ_HEADER)}")
        expected_frame = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 8:
                raise ParseError(path, lineno, f"expected 8 fields, got {len(row)}")
            try:
                frame = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as e:
                raise ParseError(path, lineno, str(e)) from None
            if frame != expected_frame:
                raise ParseError(path, lineno, f"frame indices must be 0-based consecutive; expected {expected_frame}, got {frame}")
            expected_frame += 1
            t = np.array(vals[0:3])
            q = np.array(vals[3:7])
            norm = np.linalg.norm(q)
            if abs(norm - 1.0) > _QUAT_NORM_TOL:
                raise ParseError(path, lineno, f"quaternion norm {norm:.6f} deviates from 1 by more than {_QUAT_NORM_TOL}")
            q = q / norm
            poses.append(PoseSE3(quat_to_rotation(*q), t))
    return CameraTrajectory(tuple(poses))


def save_trajectory(path, traj: CameraTrajectory) -> None:
    lines = [",".join(_TRAJ_HEADER)]
    for i, pose in enumerate(traj):
        q = rotation_to_quat(pose.rotation)
        t = pose.translation
        lines.append(
            f"{i},{t[0]!r},{t[1]!r},{t[2]!r},{q[0]!r},{q[1]!r},{q[2]!r},{q[3]!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_intrinsics(path) -> PinholeIntrinsics:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(path, e.lineno, e.msg) from None
    try:
        return PinholeIntrinsics(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]),
            height=int(data["height"]),
        )
    except KeyError as e:
        raise ParseError(path, 1, f"missing intrinsics key {e.args[0]!r}") from None


def save_intrinsics(path, intr: PinholeIntrinsics) -> None:
    payload = {
        "fx": intr.fx,
        "fy": intr.fy,
        "cx": intr.cx,
        "cy": intr.cy,
        "width": intr.width,
        "height": intr.height,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
