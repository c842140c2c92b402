"""Desk-scale dynamic study synthesis: phantom, activity, and noisy sinograms.

The phantom is a fixed geometric layout with four tissue classes painted in
a deterministic z-order onto a 2D grid: an outer elliptical cortex ring, an
inner elliptical core, a circular lesion insert, and a small circular blood
pool, all inside the inscribed field of view. Regional TACs come from the
compartment model; the blood region carries the frame-averaged input curve.

Expected counts multiply activity by the frame duration, so the same
activity level yields counts proportional to frame length, and a global
scale is chosen to hit the requested total. Poisson sampling uses one
derived RNG stream per frame so results do not depend on scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DynamicImage, FrameSchedule, SinogramSeries
from .kinetics import DEFAULT_GRID_DT, InputFunction, KineticParams, get_model
from .projector import SystemMatrix

REGION_NAMES = ("background", "gray_matter", "white_matter", "tumor", "blood")
BACKGROUND, GRAY_MATTER, WHITE_MATTER, TUMOR, BLOOD = range(5)

#: Desk acquisition protocol: 24 frames covering 40 minutes.
DESK_FRAME_DURATIONS_S = (
    (10.0,) * 12 + (30.0,) * 2 + (60.0,) * 3 + (120.0,) * 2 + (300.0,) * 4 + (600.0,)
)

#: Default regional rate constants (1/s) and blood fractions. These are
#: self-consistent stand-ins with plausible FDG brain magnitudes; studies
#: normally override them from the run config.
DESK_REGION_PARAMS = {
    "gray_matter": KineticParams(0.102 / 60, 0.130 / 60, 0.065 / 60, 0.05),
    "white_matter": KineticParams(0.054 / 60, 0.109 / 60, 0.045 / 60, 0.03),
    "tumor": KineticParams(0.150 / 60, 0.120 / 60, 0.100 / 60, 0.06),
    "blood": KineticParams(0.0, 0.0, 0.0, 1.0),
}


@dataclass(frozen=True)
class Phantom:
    """Region label image plus the kinetic parameters of each tissue class."""

    width: int
    height: int
    labels: np.ndarray  # (n_voxels,) int region ids
    region_params: dict  # name -> KineticParams, all non-background regions

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        if labels.shape != (self.width * self.height,):
            raise ValueError("labels must be a flat (width*height,) array")
        present = set(np.unique(labels)) - {BACKGROUND}
        for rid in present:
            name = REGION_NAMES[rid]
            if name not in self.region_params:
                raise ValueError(f"missing kinetic parameters for region {name!r}")

    def mask(self, region_id: int) -> np.ndarray:
        return self.labels == region_id

    def label_grid(self) -> np.ndarray:
        return self.labels.reshape(self.height, self.width)


def build_phantom(width: int, height: int, region_params=None) -> Phantom:
    """Paint the deterministic four-region layout onto a width x height grid."""
    if width < 8 or height < 8:
        raise ValueError("phantom grid must be at least 8x8 voxels")
    if region_params is None:
        region_params = dict(DESK_REGION_PARAMS)
    cols, rows = np.meshgrid(np.arange(width), np.arange(height))
    # normalized coordinates in [-1, 1] relative to the FOV circle
    x = (cols - 0.5 * (width - 1)) / (0.5 * min(width, height))
    y = (rows - 0.5 * (height - 1)) / (0.5 * min(width, height))

    labels = np.zeros((height, width), dtype=np.int64)
    outer = (x / 0.82) ** 2 + (y / 0.90) ** 2 <= 1.0
    core = (x / 0.52) ** 2 + (y / 0.62) ** 2 <= 1.0
    tumor = (x - 0.34) ** 2 + (y + 0.30) ** 2 <= 0.16 ** 2
    blood = (x + 0.38) ** 2 + (y - 0.40) ** 2 <= 0.11 ** 2
    labels[outer] = GRAY_MATTER
    labels[core] = WHITE_MATTER
    labels[tumor] = TUMOR
    labels[blood] = BLOOD
    return Phantom(width, height, labels.ravel(), dict(region_params))


def synthesize_dynamic_image(
    phantom: Phantom,
    cp: InputFunction,
    schedule: FrameSchedule,
    dt: float = DEFAULT_GRID_DT,
) -> DynamicImage:
    """Noise-free dynamic image: every voxel carries its region's model TAC."""
    model = get_model(cp, schedule, dt)
    values = np.zeros((phantom.width * phantom.height, schedule.n_frames))
    for rid, name in enumerate(REGION_NAMES):
        if rid == BACKGROUND:
            continue
        mask = phantom.mask(rid)
        if not np.any(mask):
            continue
        theta = phantom.region_params[name]
        tac = model.model_frames_batch(theta.as_array()[None, :])[0]
        values[mask] = tac
    return DynamicImage(phantom.width, phantom.height, values)


def true_parameter_maps(phantom: Phantom) -> np.ndarray:
    """(n_voxels, 5) ground-truth K1, k2, k3, fv, Ki per voxel."""
    from .kinetics import ki_values

    thetas = np.zeros((phantom.width * phantom.height, 4))
    for rid, name in enumerate(REGION_NAMES):
        if rid == BACKGROUND:
            continue
        mask = phantom.mask(rid)
        if np.any(mask):
            thetas[mask] = phantom.region_params[name].as_array()
    return np.column_stack([thetas, ki_values(thetas)])


def simulate_sinograms(
    x_true: DynamicImage,
    system: SystemMatrix,
    schedule: FrameSchedule,
    target_total_counts: float,
    background_fraction: float = 0.2,
    seed: int = 0,
) -> SinogramSeries:
    """Poisson-sampled dynamic sinograms with a known uniform background.

    The calibration scale alpha is chosen so the expected total over all
    bins and frames equals target_total_counts, of which background_fraction
    arrives as a flat per-frame background proportional to frame duration.
    Sampling is bit-reproducible for a fixed seed.
    """
    if not target_total_counts > 0:
        raise ValueError("target_total_counts must be positive")
    if not 0.0 <= background_fraction < 1.0:
        raise ValueError("background_fraction must lie in [0, 1)")
    if x_true.n_frames != schedule.n_frames:
        raise ValueError("image and schedule disagree on frame count")

    durations = schedule.durations
    proj = np.column_stack([system.matrix @ x_true.values[:, m]
                            for m in range(schedule.n_frames)])
    signal_weight = float(np.sum(proj * durations[None, :]))
    signal_target = (1.0 - background_fraction) * target_total_counts
    if signal_weight <= 0 and np.any(x_true.values > 0):
        raise ValueError("activity projects to zero counts; cannot reach target")
    alpha = signal_target / signal_weight if signal_weight > 0 else 1.0

    n_bins = system.n_bins
    total_time = float(np.sum(durations))
    background = np.broadcast_to(
        background_fraction * target_total_counts * durations / (total_time * n_bins),
        (n_bins, schedule.n_frames),
    ).copy()

    expected = alpha * proj * durations[None, :] + background
    counts = np.empty_like(expected)
    for m in range(schedule.n_frames):
        rng = np.random.default_rng([seed, m])
        counts[:, m] = rng.poisson(expected[:, m])
    return SinogramSeries(n_bins, counts, background, calibration=alpha)


def save_labels_pgm(path, phantom: Phantom) -> None:
    """Binary portable graymap preview of the region labels (maxval 4)."""
    grid = phantom.label_grid().astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{phantom.width} {phantom.height}\n{len(REGION_NAMES) - 1}\n".encode())
        f.write(grid.tobytes())


def load_labels_pgm(path) -> np.ndarray:
    """Read back a label preview as a (height, width) integer array."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary .pgm file")
        width, height = (int(v) for v in f.readline().split())
        f.readline()  # maxval
        data = np.frombuffer(f.read(width * height), dtype=np.uint8)
    return data.reshape(height, width).astype(np.int64)
