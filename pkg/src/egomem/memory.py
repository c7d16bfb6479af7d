"""Semi-dense 3D environmental memory: ingest SLAM points/observations, sample
per-point colors and latent descriptors from context frames, voxel-pool into a
compact memory, and edit it by deleting regions.

The memory holds two separately pooled point sets: an RGB set (default voxel
0.01 m) and a feature-descriptor set (default voxel 0.02 m).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, StrideMismatch, UnknownFrame, UnknownUid
from .geometry import CameraTrajectory, PinholeIntrinsics, Z_MIN, _open_maybe_gzip_text

DEFAULT_VOXEL_RGB = 0.01
DEFAULT_VOXEL_FEAT = 0.02
DEFAULT_FEATURE_STRIDE = 8


@dataclass(frozen=True)
class SemidensePoints:
    """Raw world points with their per-context-frame pixel observations.

    Observations are stored flat: observation k is point `obs_point[k]` seen in
    context frame `obs_frame[k]` at pixel `obs_uv[k]`.
    """

    uids: np.ndarray  # (n,) int64, unique
    positions: np.ndarray  # (n, 3) f64 world meters
    obs_point: np.ndarray  # (m,) int64 index into uids/positions
    obs_frame: np.ndarray  # (m,) int64 context frame index
    obs_uv: np.ndarray  # (m, 2) f64 pixels

    def __len__(self) -> int:
        return len(self.uids)

    def observations_of(self, point_index: int) -> np.ndarray:
        """(k, 3) array of (frame, u, v) rows for one point."""
        sel = self.obs_point == point_index
        return np.column_stack([self.obs_frame[sel].astype(np.float64), self.obs_uv[sel]])


@dataclass(frozen=True)
class SpatialMemory:
    """Voxel-pooled point memory: positions are voxel centers."""

    voxel_size_rgb: float
    voxel_size_feat: float
    rgb_positions: np.ndarray  # (n, 3) f64
    rgb_colors: np.ndarray  # (n, 3) f32 in [0, 1]
    feat_positions: np.ndarray  # (k, 3) f64
    feat_descriptors: np.ndarray  # (k, D) f32

    def __post_init__(self):
        for name in ("rgb_positions", "rgb_colors", "feat_positions", "feat_descriptors"):
            getattr(self, name).setflags(write=False)

    @property
    def n_rgb(self) -> int:
        return self.rgb_positions.shape[0]

    @property
    def n_feat(self) -> int:
        return self.feat_positions.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.feat_descriptors.shape[1]

    @staticmethod
    def empty(voxel_size_rgb: float = DEFAULT_VOXEL_RGB, voxel_size_feat: float = DEFAULT_VOXEL_FEAT,
              feature_dim: int = 0) -> "SpatialMemory":
        return SpatialMemory(
            voxel_size_rgb=voxel_size_rgb,
            voxel_size_feat=voxel_size_feat,
            rgb_positions=np.zeros((0, 3), dtype=np.float64),
            rgb_colors=np.zeros((0, 3), dtype=np.float32),
            feat_positions=np.zeros((0, 3), dtype=np.float64),
            feat_descriptors=np.zeros((0, feature_dim), dtype=np.float32),
        )


@dataclass(frozen=True)
class FeatureVideo:
    """Dense D-channel per-frame maps, frame-major row-major float32."""

    data: np.ndarray  # (n, H, W, D) f32

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 4 or min(d.shape) <= 0:
            raise ValueError("feature video must be a non-empty (n, H, W, D) tensor")
        if not np.all(np.isfinite(d)):
            raise ValueError("feature video contains non-finite values")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def channels(self) -> int:
        return self.data.shape[3]


# ---------------------------------------------------------------------------
# CSV ingest
# ---------------------------------------------------------------------------

_POINTS_HEADER = ["uid", "px", "py", "pz"]
_OBS_HEADER = ["frame", "uid", "u", "v"]


def _read_csv_rows(path, header: list[str]):
    path = Path(path)
    rows = []
    with _open_maybe_gzip_text(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(path, 1, "empty file")
    got = [h.strip() for h in lines[0].split(",")]
    if got != header:
        raise ParseError(path, 1, f"expected header {','.join(header)}, got {lines[0]!r}")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(parts)}")
        rows.append((lineno, parts))
    return path, rows


def ingest_semidense(points_file, observations_file, context_trajectory: CameraTrajectory,
                     intr: PinholeIntrinsics) -> SemidensePoints:
    """Load semi-dense points and observations, keeping only observations whose
    point projects inside the RGB frustum of the observing frame, and dropping
    points left with no in-frustum observation.

    Files may be gzip-compressed (detected by magic bytes).
    """
    ppath, prows = _read_csv_rows(points_file, _POINTS_HEADER)
    uids = np.zeros(len(prows), dtype=np.int64)
    positions = np.zeros((len(prows), 3), dtype=np.float64)
    uid_to_index: dict[int, int] = {}
    for i, (lineno, parts) in enumerate(prows):
        try:
            uid = int(parts[0])
            pos = [float(x) for x in parts[1:4]]
        except ValueError as e:
            raise ParseError(ppath, lineno, str(e)) from None
        if uid in uid_to_index:
            raise ParseError(ppath, lineno, f"duplicate uid {uid}")
        uid_to_index[uid] = i
        uids[i] = uid
        positions[i] = pos

    opath, orows = _read_csv_rows(observations_file, _OBS_HEADER)
    n_ctx = len(context_trajectory)
    obs_point = np.zeros(len(orows), dtype=np.int64)
    obs_frame = np.zeros(len(orows), dtype=np.int64)
    obs_uv = np.zeros((len(orows), 2), dtype=np.float64)
    for i, (lineno, parts) in enumerate(orows):
        try:
            frame = int(parts[0])
            uid = int(parts[1])
            u = float(parts[2])
            v = float(parts[3])
        except ValueError as e:
            raise ParseError(opath, lineno, str(e)) from None
        if uid not in uid_to_index:
            raise UnknownUid(f"{opath}:{lineno}: observation references unknown uid {uid}")
        if not (0 <= frame < n_ctx):
            raise UnknownFrame(f"{opath}:{lineno}: frame {frame} outside context trajectory of length {n_ctx}")
        if not (0 <= u < intr.width and 0 <= v < intr.height):
            raise ParseError(opath, lineno, f"observation pixel ({u}, {v}) outside {intr.width}x{intr.height} image")
        obs_point[i] = uid_to_index[uid]
        obs_frame[i] = frame
        obs_uv[i] = (u, v)

    # Frustum filter: an observation survives iff its point projects in-bounds
    # with positive depth under the observing frame's pose.
    keep_obs = np.zeros(len(orows), dtype=bool)
    for f in range(n_ctx):
        sel = np.nonzero(obs_frame == f)[0]
        if sel.size == 0:
            continue
        pose = context_trajectory[f]
        pc = (positions[obs_point[sel]] - pose.translation) @ pose.rotation
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = intr.fx * pc[:, 0] / z + intr.cx
            v = intr.fy * pc[:, 1] / z + intr.cy
        ok = (z > Z_MIN) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
        keep_obs[sel] = ok

    obs_point = obs_point[keep_obs]
    obs_frame = obs_frame[keep_obs]
    obs_uv = obs_uv[keep_obs]

    keep_point = np.zeros(len(prows), dtype=bool)
    keep_point[obs_point] = True
    new_index = np.cumsum(keep_point) - 1
    return SemidensePoints(
        uids=uids[keep_point],
        positions=positions[keep_point],
        obs_point=new_index[obs_point],
        obs_frame=obs_frame,
        obs_uv=obs_uv,
    )


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def bilinear_sample(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear sample of an (H, W, C) image at continuous (u, v).

    The value lattice sits at integer coordinates and edges are clamped, so a
    sample at an integer pixel returns exactly that pixel's value.
    """
    H, W = image.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = u - x0
    fy = v - y0
    x0c = np.clip(x0, 0, W - 1)
    x1c = np.clip(x0 + 1, 0, W - 1)
    y0c = np.clip(y0, 0, H - 1)
    y1c = np.clip(y0 + 1, 0, H - 1)
    img = image.astype(np.float64, copy=False)
    w00 = ((1 - fx) * (1 - fy))[..., None]
    w10 = (fx * (1 - fy))[..., None]
    w01 = ((1 - fx) * fy)[..., None]
    w11 = (fx * fy)[..., None]
    return w00 * img[y0c, x0c] + w10 * img[y0c, x1c] + w01 * img[y1c, x0c] + w11 * img[y1c, x1c]


def sample_point_colors(pts: SemidensePoints, context_frames: np.ndarray,
                        intr: PinholeIntrinsics) -> np.ndarray:
    """Mean bilinear color over each point's observations.

    context_frames: (m, H, W, 3) float array with values in [0, 1].
    Returns (n, 3) float64 colors.
    """
    frames = np.asarray(context_frames)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValueError("context frames must be (m, H, W, 3)")
    if pts.obs_frame.size and pts.obs_frame.max() >= frames.shape[0]:
        raise UnknownFrame(f"observation references frame {int(pts.obs_frame.max())} "
                           f"but only {frames.shape[0]} context frames were given")
    n = len(pts)
    sums = np.zeros((n, 3), dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    for f in np.unique(pts.obs_frame):
        sel = pts.obs_frame == f
        vals = bilinear_sample(frames[f], pts.obs_uv[sel, 0], pts.obs_uv[sel, 1])
        np.add.at(sums, pts.obs_point[sel], vals)
        np.add.at(counts, pts.obs_point[sel], 1)
    if np.any(counts == 0):
        raise ValueError("every point must have at least one observation")
    return sums / counts[:, None]


def sample_point_features(pts: SemidensePoints, feats: FeatureVideo, intr: PinholeIntrinsics,
                          spatial_stride: int = DEFAULT_FEATURE_STRIDE) -> np.ndarray:
    """Mean bilinear descriptor over each point's observations.

    Pixel (u, v) maps to feature coordinates ((u+0.5)/stride - 0.5, ...);
    sampling clamps at the borders. Returns (n, D) float64 descriptors.
    """
    if intr.width % spatial_stride or intr.height % spatial_stride:
        raise StrideMismatch(f"context size {intr.width}x{intr.height} not divisible by stride {spatial_stride}")
    if feats.width != intr.width // spatial_stride or feats.height != intr.height // spatial_stride:
        raise StrideMismatch(
            f"feature maps are {feats.width}x{feats.height}, expected "
            f"{intr.width // spatial_stride}x{intr.height // spatial_stride} at stride {spatial_stride}")
    if pts.obs_frame.size and pts.obs_frame.max() >= feats.n_frames:
        raise UnknownFrame(f"observation references frame {int(pts.obs_frame.max())} "
                           f"but the feature video has {feats.n_frames} frames")
    n = len(pts)
    sums = np.zeros((n, feats.channels), dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    fu = (pts.obs_uv[:, 0] + 0.5) / spatial_stride - 0.5
    fv = (pts.obs_uv[:, 1] + 0.5) / spatial_stride - 0.5
    for f in np.unique(pts.obs_frame):
        sel = pts.obs_frame == f
        vals = bilinear_sample(feats.data[f], fu[sel], fv[sel])
        np.add.at(sums, pts.obs_point[sel], vals)
        np.add.at(counts, pts.obs_point[sel], 1)
    if np.any(counts == 0):
        raise ValueError("every point must have at least one observation")
    return sums / counts[:, None]


# ---------------------------------------------------------------------------
# Voxel pooling
# ---------------------------------------------------------------------------


def voxel_pool(positions: np.ndarray, payloads: np.ndarray, voxel_size: float):
    """Pool points into voxels: index = floor(p / voxel_size) per axis, payload
    = arithmetic f64 mean within the voxel, output position = voxel center
    ((idx + 0.5) * voxel_size), output ordered by ascending lexicographic index.

    Members of a voxel are summed in a canonical order (sorted by position then
    payload), making the result exactly permutation-invariant.
    """
    if not voxel_size > 0:
        raise ValueError("voxel_size must be positive")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    payloads = np.asarray(payloads, dtype=np.float64)
    if payloads.ndim == 1:
        payloads = payloads[:, None]
    if payloads.shape[0] != positions.shape[0]:
        raise ValueError("positions and payloads must have the same length")
    n, dim = payloads.shape
    if n == 0:
        return np.zeros((0, 3), dtype=np.float64), np.zeros((0, dim), dtype=np.float64)

    idx = np.floor(positions / voxel_size).astype(np.int64)
    # lexsort: last key is primary. Canonical order: voxel index, then
    # position, then payload.
    keys = tuple(payloads[:, d] for d in range(dim - 1, -1, -1)) + (
        positions[:, 2], positions[:, 1], positions[:, 0],
        idx[:, 2], idx[:, 1], idx[:, 0],
    )
    order = np.lexsort(keys)
    idx_s = idx[order]
    pay_s = payloads[order]

    boundary = np.ones(n, dtype=bool)
    boundary[1:] = np.any(idx_s[1:] != idx_s[:-1], axis=1)
    starts = np.nonzero(boundary)[0]
    counts = np.diff(np.append(starts, n))
    gid = np.cumsum(boundary) - 1
    # np.add.at accumulates sequentially in index order, i.e. a left fold over
    # the canonical member order within each voxel.
    sums = np.zeros((starts.size, dim), dtype=np.float64)
    np.add.at(sums, gid, pay_s)
    pooled = sums / counts[:, None]
    centers = (idx_s[starts].astype(np.float64) + 0.5) * voxel_size
    return centers, pooled


def build_memory(pts: SemidensePoints, context_frames: np.ndarray, intr: PinholeIntrinsics,
                 feats: FeatureVideo | None = None,
                 voxel_size_rgb: float = DEFAULT_VOXEL_RGB,
                 voxel_size_feat: float = DEFAULT_VOXEL_FEAT,
                 feature_stride: int = DEFAULT_FEATURE_STRIDE) -> SpatialMemory:
    """Construct the pooled memory from ingested points and context frames.

    The feature point set is built only when a feature video is supplied.
    """
    colors = sample_point_colors(pts, context_frames, intr)
    rgb_pos, rgb_col = voxel_pool(pts.positions, colors, voxel_size_rgb)
    if feats is not None:
        descriptors = sample_point_features(pts, feats, intr, feature_stride)
        feat_pos, feat_desc = voxel_pool(pts.positions, descriptors, voxel_size_feat)
        feat_dim = feats.channels
    else:
        feat_pos = np.zeros((0, 3), dtype=np.float64)
        feat_desc = np.zeros((0, 0), dtype=np.float64)
        feat_dim = 0
    return SpatialMemory(
        voxel_size_rgb=voxel_size_rgb,
        voxel_size_feat=voxel_size_feat,
        rgb_positions=rgb_pos,
        rgb_colors=np.clip(rgb_col, 0.0, 1.0).astype(np.float32),
        feat_positions=feat_pos,
        feat_descriptors=feat_desc.astype(np.float32).reshape(-1, feat_dim),
    )


# ---------------------------------------------------------------------------
# Region edits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxRegion:
    """Closed axis-aligned box [min, max] in world meters."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise ValueError("box min corner must be <= max corner")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        return np.all((pts >= self.min_corner) & (pts <= self.max_corner), axis=1)


@dataclass(frozen=True)
class SphereRegion:
    """Closed ball of given radius in world meters."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        object.__setattr__(self, "center", c)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        d2 = ((pts - self.center) ** 2).sum(axis=1)
        return d2 <= self.radius * self.radius


def delete_region(mem: SpatialMemory, region) -> SpatialMemory:
    """New memory with every voxel whose center lies inside the region removed."""
    keep_rgb = ~region.contains(mem.rgb_positions) if mem.n_rgb else np.zeros(0, dtype=bool)
    keep_feat = ~region.contains(mem.feat_positions) if mem.n_feat else np.zeros(0, dtype=bool)
    return SpatialMemory(
        voxel_size_rgb=mem.voxel_size_rgb,
        voxel_size_feat=mem.voxel_size_feat,
        rgb_positions=mem.rgb_positions[keep_rgb].copy(),
        rgb_colors=mem.rgb_colors[keep_rgb].copy(),
        feat_positions=mem.feat_positions[keep_feat].copy(),
        feat_descriptors=mem.feat_descriptors[keep_feat].copy(),
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_E3M_MAGIC = b"E3M1"
_E3CF_MAGIC = b"E3CF"


def save_memory(path, mem: SpatialMemory) -> None:
    """memory.e3m: magic E3M1, little-endian u32 counts, f32 voxel sizes,
    f64 positions, f32 payloads. Round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(_E3M_MAGIC)
        fh.write(struct.pack("<III", mem.n_rgb, mem.n_feat, mem.feature_dim))
        fh.write(struct.pack("<ff", mem.voxel_size_rgb, mem.voxel_size_feat))
        fh.write(np.ascontiguousarray(mem.rgb_positions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(mem.rgb_colors, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(mem.feat_positions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(mem.feat_descriptors, dtype="<f4").tobytes())


def load_memory(path) -> SpatialMemory:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _E3M_MAGIC:
        raise ParseError(path, 1, f"bad magic {raw[:4]!r}, expected {_E3M_MAGIC!r}")
    n_rgb, n_feat, dim = struct.unpack_from("<III", raw, 4)
    vs_rgb, vs_feat = struct.unpack_from("<ff", raw, 16)
    off = 24
    expect = n_rgb * 24 + n_rgb * 12 + n_feat * 24 + n_feat * dim * 4
    if len(raw) - off != expect:
        raise ParseError(path, 1, f"payload is {len(raw) - off} bytes, expected {expect}")

    def take(count, dtype, shape):
        nonlocal off
        nbytes = count * np.dtype(dtype).itemsize
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(shape)
        off += nbytes
        return arr.astype(arr.dtype.newbyteorder("="))

    rgb_pos = take(n_rgb * 3, "<f8", (n_rgb, 3))
    rgb_col = take(n_rgb * 3, "<f4", (n_rgb, 3))
    feat_pos = take(n_feat * 3, "<f8", (n_feat, 3))
    feat_desc = take(n_feat * dim, "<f4", (n_feat, dim))
    return SpatialMemory(
        voxel_size_rgb=float(vs_rgb),
        voxel_size_feat=float(vs_feat),
        rgb_positions=rgb_pos,
        rgb_colors=rgb_col,
        feat_positions=feat_pos,
        feat_descriptors=feat_desc,
    )


def save_feature_video(path, feats: FeatureVideo) -> None:
    """featmap.bin: magic E3CF, u32 n,H,W,D, f32 little-endian payload."""
    with open(path, "wb") as fh:
        fh.write(_E3CF_MAGIC)
        fh.write(struct.pack("<IIII", feats.n_frames, feats.height, feats.width, feats.channels))
        fh.write(np.ascontiguousarray(feats.data, dtype="<f4").tobytes())


def load_feature_video(path) -> FeatureVideo:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _E3CF_MAGIC:
        raise ParseError(path, 1, f"bad magic {raw[:4]!r}, expected {_E3CF_MAGIC!r}")
    n, h, w, d = struct.unpack_from("<IIII", raw, 4)
    expect = n * h * w * d * 4
    if len(raw) - 20 != expect:
        raise ParseError(path, 1, f"payload is {len(raw) - 20} bytes, expected {expect}")
    data = np.frombuffer(raw, dtype="<f4", count=n * h * w * d, offset=20).reshape(n, h, w, d)
    return FeatureVideo(data=data.astype(np.float32))


def save_mask_video(path, mask: np.ndarray) -> None:
    """mask.bin: E3CF header with D = 1 and a u8 payload."""
    mask = np.asarray(mask)
    if mask.ndim != 3:
        raise ValueError("mask must be (n, H, W)")
    n, h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(_E3CF_MAGIC)
        fh.write(struct.pack("<IIII", n, h, w, 1))
        fh.write(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())


def load_mask_video(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _E3CF_MAGIC:
        raise ParseError(path, 1, f"bad magic {raw[:4]!r}, expected {_E3CF_MAGIC!r}")
    n, h, w, d = struct.unpack_from("<IIII", raw, 4)
    if d != 1:
        raise ParseError(path, 1, f"mask file must have D=1, got {d}")
    if len(raw) - 20 != n * h * w:
        raise ParseError(path, 1, "mask payload size mismatch")
    return np.frombuffer(raw, dtype=np.uint8, count=n * h * w, offset=20).reshape(n, h, w).copy()
