"""Core container types and frame-schedule arithmetic.

Conventions used throughout the package: activity is expressed in kBq/mL and
time in seconds. Dynamic arrays are stored frame-major as (n_voxels, n_frames)
with voxel index j = row * width + col, row 0 at the bottom of the grid.
All containers are immutable after construction; their arrays are marked
read-only so they can be shared freely across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("K1", "k2", "k3", "fv")
MAP_NAMES = PARAM_NAMES + ("Ki",)

DPT_FORMAT = "dpt"
DPT_VERSION = 1


def _frozen_array(x, dtype=np.float64, ndim=None) -> np.ndarray:
    a = np.array(x, dtype=dtype)
    if ndim is not None and a.ndim != ndim:
        raise ValueError(f"expected {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FrameSchedule:
    """Contiguous acquisition frames given by start times and durations (s)."""

    starts: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        starts = _frozen_array(self.starts, ndim=1)
        durations = _frozen_array(self.durations, ndim=1)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "durations", durations)
        if starts.size == 0 or starts.size != durations.size:
            raise ValueError("starts and durations must be nonempty and equal length")
        if starts[0] < 0:
            raise ValueError("first frame must not start before t=0")
        if np.any(durations <= 0):
            raise ValueError("all frame durations must be positive")
        gaps = starts[:-1] + durations[:-1] - starts[1:]
        if np.any(np.abs(gaps) > 1e-9 * np.maximum(1.0, np.abs(starts[1:]))):
            raise ValueError("frames must be contiguous (start[m]+duration[m] == start[m+1])")

    @classmethod
    def from_durations(cls, durations, start=0.0) -> "FrameSchedule":
        durations = np.asarray(durations, dtype=np.float64)
        starts = start + np.concatenate(([0.0], np.cumsum(durations)[:-1]))
        return cls(starts, durations)

    @property
    def n_frames(self) -> int:
        return self.starts.size

    @property
    def end(self) -> float:
        return float(self.starts[-1] + self.durations[-1])

    def to_dict(self) -> dict:
        return {"starts": self.starts.tolist(), "durations": self.durations.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FrameSchedule":
        return cls(d["starts"], d["durations"])


def frame_mid_times(schedule: FrameSchedule) -> np.ndarray:
    """Midpoint time of each frame in seconds."""
    return schedule.starts + 0.5 * schedule.durations


def total_scan_time(schedule: FrameSchedule) -> float:
    """Span from the start of the first frame to the end of the last one."""
    return float(schedule.starts[-1] + schedule.durations[-1] - schedule.starts[0])


@dataclass(frozen=True)
class DynamicImage:
    """Nonnegative activity samples (kBq/mL) on a 2D grid, one column per frame."""

    width: int
    height: int
    values: np.ndarray  # (n_voxels, n_frames)

    def __post_init__(self):
        values = _frozen_array(self.values, ndim=2)
        object.__setattr__(self, "values", values)
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be positive")
        if values.shape[0] != self.width * self.height:
            raise ValueError(
                f"values has {values.shape[0]} voxels, expected {self.width * self.height}"
            )
        if np.any(values < 0):
            raise ValueError("activity values must be nonnegative")

    @property
    def n_voxels(self) -> int:
        return self.width * self.height

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    def frame(self, m: int) -> np.ndarray:
        return self.values[:, m]

    def frame_grid(self, m: int) -> np.ndarray:
        """Frame m as a (height, width) array, row index increasing with y."""
        return self.values[:, m].reshape(self.height, self.width)


@dataclass(frozen=True)
class SinogramSeries:
    """Measured coincidence counts per detector bin and frame.

    ``background`` holds the expected additive counts (randoms plus scatter
    surrogate) that the acquisition model adds on top of the projected
    activity. ``calibration`` is the global scale relating projected activity
    times frame duration to expected counts; it is recorded at simulation
    time so reconstruction can work in activity units.
    """

    n_bins: int
    counts: np.ndarray  # (n_bins, n_frames), integral
    background: np.ndarray  # (n_bins, n_frames)
    calibration: float = 1.0

    def __post_init__(self):
        counts = _frozen_array(self.counts, ndim=2)
        background = _frozen_array(self.background, ndim=2)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "background", background)
        if counts.shape[0] != self.n_bins or background.shape != counts.shape:
            raise ValueError("counts/background shape must be (n_bins, n_frames)")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise ValueError("counts must be nonnegative integers")
        if np.any(background < 0):
            raise ValueError("background must be nonnegative")
        if not self.calibration > 0:
            raise ValueError("calibration must be positive")

    @property
    def n_frames(self) -> int:
        return self.counts.shape[1]


@dataclass(frozen=True)
class ParametricMaps:
    """Per-voxel kinetic parameter values, one column per parameter.

    With the default four parameters the column order is fixed as
    (K1, k2, k3, fv) and the corresponding range constraints are enforced.
    """

    width: int
    height: int
    values: np.ndarray  # (n_voxels, n_params)
    names: tuple = PARAM_NAMES

    def __post_init__(self):
        values = _frozen_array(self.values, ndim=2)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))
        if values.shape[0] != self.width * self.height:
            raise ValueError("values row count must equal width*height")
        if values.shape[1] != len(self.names):
            raise ValueError("one name per parameter column required")
        if self.names[: len(PARAM_NAMES)] == PARAM_NAMES:
            if np.any(values[:, :3] < 0):
                raise ValueError("K1, k2, k3 must be nonnegative")
            fv = values[:, 3]
            if np.any(fv < 0) or np.any(fv > 1):
                raise ValueError("fv must lie in [0, 1]")

    @property
    def n_params(self) -> int:
        return self.values.shape[1]

    def map_grid(self, p: int) -> np.ndarray:
        return self.values[:, p].reshape(self.height, self.width)


# ---------------------------------------------------------------------------
# .dpt binary format: one UTF-8 JSON header line, then the listed arrays as
# raw little-endian float32 blocks in order.
# ---------------------------------------------------------------------------


def _write_dpt(path, header: dict, arrays) -> None:
    header = dict(header)
    header["format"] = DPT_FORMAT
    header["version"] = DPT_VERSION
    header["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _read_dpt(path):
    with open(path, "rb") as f:
        header_line = f.readline()
        header = json.loads(header_line.decode("utf-8"))
        if header.get("format") != DPT_FORMAT:
            raise ValueError(f"{path}: not a .dpt file")
        blobs = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            n = int(np.prod(shape))
            raw = f.read(4 * n)
            if len(raw) != 4 * n:
                raise ValueError(f"{path}: truncated array block {spec['name']}")
            blobs[spec["name"]] = (
                np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
            )
    return header, blobs


def save_dynamic_image(path, image: DynamicImage, schedule: FrameSchedule, units="kBq/mL"):
    header = {
        "kind": "dynamic_image",
        "width": image.width,
        "height": image.height,
        "n_frames": image.n_frames,
        "units": units,
        "schedule": schedule.to_dict(),
    }
    _write_dpt(path, header, [("values", image.values)])


def load_dynamic_image(path):
    header, blobs = _read_dpt(path)
    if header["kind"] != "dynamic_image":
        raise ValueError(f"{path}: expected a dynamic_image file, got {header['kind']}")
    image = DynamicImage(header["width"], header["height"], blobs["values"])
    return image, FrameSchedule.from_dict(header["schedule"])


def save_sinogram_series(path, sino: SinogramSeries, schedule: FrameSchedule):
    header = {
        "kind": "sinogram_series",
        "n_bins": sino.n_bins,
        "n_frames": sino.n_frames,
        "calibration": sino.calibration,
        "units": "counts",
        "schedule": schedule.to_dict(),
    }
    _write_dpt(path, header, [("counts", sino.counts), ("background", sino.background)])


def load_sinogram_series(path):
    header, blobs = _read_dpt(path)
    if header["kind"] != "sinogram_series":
        raise ValueError(f"{path}: expected a sinogram_series file, got {header['kind']}")
    counts = np.round(blobs["counts"])
    sino = SinogramSeries(header["n_bins"], counts, blobs["background"], header["calibration"])
    return sino, FrameSchedule.from_dict(header["schedule"])


def save_parametric_maps(path, maps: ParametricMaps):
    header = {
        "kind": "parametric_maps",
        "width": maps.width,
        "height": maps.height,
        "names": list(maps.names),
    }
    _write_dpt(path, header, [("values", maps.values)])


def load_parametric_maps(path):
    header, blobs = _read_dpt(path)
    if header["kind"] != "parametric_maps":
        raise ValueError(f"{path}: expected a parametric_maps file, got {header['kind']}")
    return ParametricMaps(
        header["width"], header["height"], blobs["values"], tuple(header["names"])
    )
