"""Recordings, the on-disk container format, and calibrated ingestion.

A recording holds time-sliced events with per-event normal flow, per-slice
IMU rotation, camera intrinsics, and optional ground truth (labels, poses,
velocities).  The container is a single little-endian file: magic, version,
a canonical JSON header describing typed arrays, and the raw array bytes in
column-major order.  Writing is fully deterministic, so saving a loaded
recording reproduces the file byte for byte.  The full layout is documented
in docs/FORMAT.md.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, VersionError

MAGIC = b"EVNFBOX\x00"
VERSION = 1

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8"),
           "<i4": np.dtype("<i4"), "|u1": np.dtype("|u1")}

# canonical array order per container kind
_RECORDING_ARRAYS = [
    ("slice_bounds", "<i8"), ("windows", "<f8"), ("imu_w", "<f8"),
    ("t", "<f8"), ("xy_px", "<f8"), ("n", "<f8"), ("n0", "<f8"),
]
_RECORDING_GT_ARRAYS = [
    ("gt_labels", "<i4"), ("gt_cam_pose", "<f8"), ("gt_obj_pose", "<f8"),
    ("gt_cam_vel", "<f8"), ("gt_obj_vel", "<f8"), ("gt_obj_present", "|u1"),
]
_PREDICTION_ARRAYS = [
    ("slice_bounds", "<i8"), ("labels", "<i4"),
    ("ego_t", "<f8"), ("ego_w", "<f8"), ("ego_valid", "|u1"),
    ("ego_scale", "<f8"), ("reinit", "|u1"),
    ("seg_slice", "<i4"), ("seg_id", "<i4"), ("seg_t", "<f8"),
    ("seg_w", "<f8"), ("seg_centroid_px", "<f8"), ("seg_centroid_calib", "<f8"),
]


@dataclass
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def to_calibrated(self, xy_px) -> np.ndarray:
        p = np.asarray(xy_px, dtype=float)
        return np.stack([(p[..., 0] - self.cx) / self.fx,
                         (p[..., 1] - self.cy) / self.fy], axis=-1)

    def to_pixels(self, xy_calib) -> np.ndarray:
        p = np.asarray(xy_calib, dtype=float)
        return np.stack([p[..., 0] * self.fx + self.cx,
                         p[..., 1] * self.fy + self.cy], axis=-1)

    def as_dict(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "fx": self.fx, "fy": self.fy}


@dataclass
class SliceData:
    """One event slice in both pixel and calibrated coordinates."""

    times: np.ndarray      # (N,) seconds
    xy_px: np.ndarray      # (N, 2)
    points: np.ndarray     # (N, 2) calibrated
    n: np.ndarray          # (N,) normal flow magnitude, calibrated/s
    n0: np.ndarray         # (N, 2) unit directions, calibrated
    imu_w: np.ndarray      # (3,) rad/s
    t0: float
    t1: float

    @property
    def dt(self) -> float:
        return self.t1 - self.t0

    def __len__(self) -> int:
        return self.times.shape[0]


@dataclass
class GroundTruth:
    labels: np.ndarray        # (N,) 0 = background, 1..K objects
    cam_pose: np.ndarray      # (S+1, 4, 4) world-from-camera
    obj_pose: np.ndarray      # (K, S+1, 4, 4) world-from-object
    cam_vel: np.ndarray       # (S, 3) camera translational velocity, m/s
    obj_vel: np.ndarray       # (K, S, 3) object translational velocity in camera frame
    obj_present: np.ndarray   # (K, S) uint8 presence mask


@dataclass
class Recording:
    width: int
    height: int
    intrinsics: Intrinsics
    slice_bounds: np.ndarray  # (S+1,) event offsets
    windows: np.ndarray       # (S, 2) slice [t0, t1]
    imu_w: np.ndarray         # (S, 3)
    t: np.ndarray             # (N,)
    xy_px: np.ndarray         # (N, 2)
    n: np.ndarray             # (N,)
    n0: np.ndarray            # (N, 2)
    gt: GroundTruth | None = None

    @property
    def num_slices(self) -> int:
        return self.slice_bounds.shape[0] - 1

    @property
    def num_events(self) -> int:
        return self.t.shape[0]

    @property
    def num_objects(self) -> int:
        return 0 if self.gt is None else self.gt.obj_pose.shape[0]

    def slice_range(self, i: int) -> tuple[int, int]:
        return int(self.slice_bounds[i]), int(self.slice_bounds[i + 1])

    def get_slice(self, i: int) -> SliceData:
        a, b = self.slice_range(i)
        return SliceData(
            times=self.t[a:b],
            xy_px=self.xy_px[a:b],
            points=self.intrinsics.to_calibrated(self.xy_px[a:b]),
            n=self.n[a:b],
            n0=self.n0[a:b],
            imu_w=self.imu_w[i],
            t0=float(self.windows[i, 0]),
            t1=float(self.windows[i, 1]),
        )

    def validate(self) -> None:
        s = self.num_slices
        n = self.num_events
        if self.slice_bounds[0] != 0 or self.slice_bounds[-1] != n:
            raise FormatError("slice bounds do not cover the event arrays")
        if np.any(np.diff(self.slice_bounds) < 0):
            raise FormatError("slice bounds must be non-decreasing")
        if s > 1 and np.any(np.diff(self.windows[:, 0]) <= 0):
            raise FormatError("slice start times must be strictly increasing")
        for arr, cols in ((self.xy_px, 2), (self.n0, 2)):
            if arr.shape != (n, cols):
                raise FormatError("event array shapes are inconsistent")
        if self.n.shape != (n,) or self.t.shape != (n,):
            raise FormatError("event array shapes are inconsistent")
        if self.imu_w.shape != (s, 3) or self.windows.shape != (s, 2):
            raise FormatError("per-slice array shapes are inconsistent")
        for i in range(s):
            a, b = self.slice_range(i)
            ts = self.t[a:b]
            if ts.size and (np.any(np.diff(ts) < 0)):
                raise FormatError(f"slice {i}: event times not sorted")
            if ts.size and (ts[0] < self.windows[i, 0] - 1e-12
                            or ts[-1] > self.windows[i, 1] + 1e-12):
                raise FormatError(f"slice {i}: event times outside the slice window")
        norms = np.linalg.norm(self.n0, axis=1)
        if n and np.abs(norms - 1.0).max() > 1e-9:
            raise FormatError("normal flow directions must be unit vectors")
        if self.gt is not None:
            g = self.gt
            k = g.obj_pose.shape[0]
            if g.labels.shape != (n,):
                raise FormatError("ground-truth labels length mismatch")
            if g.cam_pose.shape != (s + 1, 4, 4):
                raise FormatError("camera pose series must have one pose per slice boundary")
            if g.obj_pose.shape != (k, s + 1, 4, 4) or g.obj_vel.shape != (k, s, 3):
                raise FormatError("object ground-truth shapes are inconsistent")
            if g.cam_vel.shape != (s, 3) or g.obj_present.shape != (k, s):
                raise FormatError("per-slice ground-truth shapes are inconsistent")

    def save(self, path) -> None:
        meta = {
            "height": self.height,
            "intrinsics": self.intrinsics.as_dict(),
            "num_objects": self.num_objects,
            "width": self.width,
        }
        arrays = {
            "slice_bounds": self.slice_bounds, "windows": self.windows,
            "imu_w": self.imu_w, "t": self.t, "xy_px": self.xy_px,
            "n": self.n, "n0": self.n0,
        }
        schema = list(_RECORDING_ARRAYS)
        if self.gt is not None:
            schema += _RECORDING_GT_ARRAYS
            arrays.update({
                "gt_labels": self.gt.labels, "gt_cam_pose": self.gt.cam_pose,
                "gt_obj_pose": self.gt.obj_pose, "gt_cam_vel": self.gt.cam_vel,
                "gt_obj_vel": self.gt.obj_vel, "gt_obj_present": self.gt.obj_present,
            })
        write_container(path, "recording", meta, schema, arrays)


@dataclass
class Predictions:
    """Per-slice pipeline outputs in array form, ready for evaluation."""

    slice_bounds: np.ndarray
    labels: np.ndarray
    ego_t: np.ndarray
    ego_w: np.ndarray
    ego_valid: np.ndarray
    ego_scale: np.ndarray
    reinit: np.ndarray
    seg_slice: np.ndarray
    seg_id: np.ndarray
    seg_t: np.ndarray
    seg_w: np.ndarray
    seg_centroid_px: np.ndarray
    seg_centroid_calib: np.ndarray

    @property
    def num_slices(self) -> int:
        return self.slice_bounds.shape[0] - 1

    def slice_labels(self, i: int) -> np.ndarray:
        return self.labels[self.slice_bounds[i]:self.slice_bounds[i + 1]]

    def segments_of(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.seg_slice == i)

    def save(self, path) -> None:
        arrays = {name: getattr(self, name) for name, _ in _PREDICTION_ARRAYS}
        write_container(path, "predictions", {}, _PREDICTION_ARRAYS, arrays)


def write_container(path, kind: str, meta: dict, schema, arrays: dict) -> None:
    """Write a deterministic container file; see docs/FORMAT.md."""
    entries = []
    blobs = []
    for name, dtype in schema:
        arr = np.ascontiguousarray(arrays[name]).astype(_DTYPES[dtype], copy=False)
        entries.append({"dtype": dtype, "name": name, "shape": list(arr.shape)})
        blobs.append(np.asfortranarray(arr).tobytes(order="F"))
    header = json.dumps({"arrays": entries, "kind": kind, "meta": meta},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, 0))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def read_container(path):
    """Read a container file, returning (kind, meta, arrays)."""
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise FormatError(f"{path}: file too short for a container header")
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a container file")
    version, _reserved = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise VersionError(f"{path}: unsupported container version {version}")
    (header_len,) = struct.unpack("<Q", raw[16:24])
    if 24 + header_len > len(raw):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[24:24 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    for key in ("arrays", "kind", "meta"):
        if key not in header:
            raise FormatError(f"{path}: header missing {key!r}")
    offset = 24 + header_len
    arrays = {}
    for entry in header["arrays"]:
        dtype = _DTYPES.get(entry.get("dtype"))
        if dtype is None:
            raise FormatError(f"{path}: unknown dtype {entry.get('dtype')!r}")
        shape = tuple(int(v) for v in entry["shape"])
        nbytes = int(np.prod(shape)) * dtype.itemsize if shape else dtype.itemsize
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: truncated array {entry['name']!r}")
        flat = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=offset)
        arrays[entry["name"]] = np.reshape(flat, shape, order="F").copy()
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after arrays")
    return header["kind"], header["meta"], arrays


def load_recording(path) -> Recording:
    """Load and fully validate a recording container."""
    kind, meta, arrays = read_container(path)
    if kind != "recording":
        raise FormatError(f"{path}: container holds {kind!r}, expected a recording")
    try:
        intr = Intrinsics(**meta["intrinsics"])
        rec = Recording(
            width=int(meta["width"]), height=int(meta["height"]),
            intrinsics=intr,
            slice_bounds=arrays["slice_bounds"], windows=arrays["windows"],
            imu_w=arrays["imu_w"], t=arrays["t"], xy_px=arrays["xy_px"],
            n=arrays["n"], n0=arrays["n0"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed recording metadata: {exc}") from exc
    if int(meta.get("num_objects", 0)) > 0 or "gt_labels" in arrays:
        try:
            rec.gt = GroundTruth(
                labels=arrays["gt_labels"], cam_pose=arrays["gt_cam_pose"],
                obj_pose=arrays["gt_obj_pose"], cam_vel=arrays["gt_cam_vel"],
                obj_vel=arrays["gt_obj_vel"], obj_present=arrays["gt_obj_present"],
            )
        except KeyError as exc:
            raise FormatError(f"{path}: ground-truth arrays incomplete: {exc}") from exc
    rec.validate()
    return rec


def load_predictions(path) -> Predictions:
    kind, _meta, arrays = read_container(path)
    if kind != "predictions":
        raise FormatError(f"{path}: container holds {kind!r}, expected predictions")
    try:
        return Predictions(**{name: arrays[name] for name, _ in _PREDICTION_ARRAYS})
    except KeyError as exc:
        raise FormatError(f"{path}: prediction arrays incomplete: {exc}") from exc
