"""Quantitative evaluation: relative-error bias in dB, ROI noise, trade-offs.

Bias is 10*log10(||estimate - truth|| / ||truth||), so exact recovery tends
to -inf and is reported as the sentinel -300 dB. Noise is the population
variance over a region of interest. ``tradeoff_table`` flattens per-run
histories into (algorithm, beta, iteration, target) rows covering single
frames, the whole dynamic volume, and each parameter map.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

BIAS_FLOOR_DB = -300.0
METRIC_COLUMNS = ("algorithm", "beta", "iteration", "target", "bias_db", "noise")


@dataclass(frozen=True)
class RoiMask:
    """Boolean voxel selector; needs at least two voxels for a variance."""

    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool).copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        if self.n_roi < 2:
            raise ValueError("ROI must contain at least two voxels")

    @property
    def n_roi(self) -> int:
        return int(np.count_nonzero(self.mask))


def bias_db(estimate: np.ndarray, truth: np.ndarray) -> float:
    """10*log10 of the relative L2 error, floored at -300 dB on exact match."""
    estimate = np.asarray(estimate, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if estimate.shape != truth.shape:
        raise ValueError("estimate and truth must have the same size")
    denom = float(np.linalg.norm(truth))
    if denom == 0.0:
        raise ValueError("truth has zero norm; relative bias undefined")
    err = float(np.linalg.norm(estimate - truth))
    if err == 0.0:
        return BIAS_FLOOR_DB
    return max(10.0 * np.log10(err / denom), BIAS_FLOOR_DB)


def roi_noise(frame: np.ndarray, roi) -> float:
    """Population variance of the frame values inside the ROI."""
    mask = roi.mask if isinstance(roi, RoiMask) else RoiMask(roi).mask
    values = np.asarray(frame, dtype=np.float64).ravel()[mask]
    return float(np.var(values))


def erode_mask(mask2d: np.ndarray) -> np.ndarray:
    """Shrink a 2D boolean mask by one voxel (4-neighborhood erosion)."""
    m = np.asarray(mask2d, dtype=bool)
    out = m.copy()
    out[1:, :] &= m[:-1, :]
    out[:-1, :] &= m[1:, :]
    out[:, 1:] &= m[:, :-1]
    out[:, :-1] &= m[:, 1:]
    out[0, :] = out[-1, :] = False
    out[:, 0] = out[:, -1] = False
    return out


@dataclass(frozen=True)
class RunRecord:
    """One reconstruction run's logged history plus its identifying labels."""

    algorithm: str
    beta: float
    entries: tuple  # per-cycle dicts as produced by the recon drivers

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))


def tradeoff_table(records) -> list:
    """Rows of (algorithm, beta, iteration, target, bias_db, noise).

    Emits a row per logged frame metric, one for the whole dynamic volume
    (volume bias with the mean of per-frame ROI noises), and one per map
    whenever the history entry carries map metrics.
    """
    rows = []
    for rec in records:
        for entry in rec.entries:
            it = entry["cycle"]
            frame_bias = entry.get("frame_bias_db")
            frame_noise = entry.get("frame_noise")
            if frame_bias is not None:
                for m, b in enumerate(frame_bias):
                    rows.append({
                        "algorithm": rec.algorithm,
                        "beta": rec.beta,
                        "iteration": it,
                        "target": f"frame_{m}",
                        "bias_db": float(b),
                        "noise": float(frame_noise[m]) if frame_noise is not None else float("nan"),
                    })
            if "bias_db" in entry:
                rows.append({
                    "algorithm": rec.algorithm,
                    "beta": rec.beta,
                    "iteration": it,
                    "target": "volume",
                    "bias_db": float(entry["bias_db"]),
                    "noise": float(entry.get("noise", float("nan"))),
                })
            map_bias = entry.get("map_bias_db") or {}
            map_noise = entry.get("map_noise") or {}
            for name, b in map_bias.items():
                rows.append({
                    "algorithm": rec.algorithm,
                    "beta": rec.beta,
                    "iteration": it,
                    "target": f"map_{name}",
                    "bias_db": float(b),
                    "noise": float(map_noise.get(name, float("nan"))),
                })
    return rows


def write_metrics_csv(path, rows) -> None:
    """Write trade-off rows; floats use repr so values round-trip exactly."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([
                row["algorithm"],
                repr(float(row["beta"])),
                int(row["iteration"]),
                row["target"],
                repr(float(row["bias_db"])),
                repr(float(row["noise"])),
            ])


def read_metrics_csv(path) -> list:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected metrics columns {reader.fieldnames}")
        for rec in reader:
            rows.append({
                "algorithm": rec["algorithm"],
                "beta": float(rec["beta"]),
                "iteration": int(rec["iteration"]),
                "target": rec["target"],
                "bias_db": float(rec["bias_db"]),
                "noise": float(rec["noise"]),
            })
    return rows


def write_history_csv(path, history) -> None:
    """Per-cycle scalar history (cycle, loglik, KM residual, bias, noise, floor)."""
    cols = ("cycle", "loglik", "km_residual", "bias_db", "noise", "floored_fraction")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(cols)
        for entry in history:
            writer.writerow([
                int(entry["cycle"]),
                repr(float(entry.get("loglik", float("nan")))),
                repr(float(entry.get("km_residual", float("nan")))),
                repr(float(entry.get("bias_db", float("nan")))),
                repr(float(entry.get("noise", float("nan")))),
                repr(float(entry.get("floored_fraction", float("nan")))),
            ])
