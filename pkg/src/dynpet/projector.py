"""Sparse 2D parallel-beam system matrix and its forward/back application.

The image grid is centered on the origin. A projection bin (angle phi, radial
offset s) integrates activity along the line s*n + t*u with direction
u = (cos phi, sin phi) and radial axis n = (-sin phi, cos phi), so at phi = 0
rays run horizontally and positive offsets select rows with larger y.
Coefficients are exact ray/voxel intersection lengths in mm; attenuation and
normalization are uniform (folded into the calibration scale elsewhere).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Geometry2D:
    width: int
    height: int
    voxel_size: float  # mm
    n_angles: int
    n_radial_bins: int
    bin_width: float  # mm

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be at least 1 voxel")
        if not self.voxel_size > 0:
            raise ValueError("voxel size must be positive")
        if self.n_angles < 1 or self.n_radial_bins < 1:
            raise ValueError("need at least one angle and one radial bin")
        if not self.bin_width > 0:
            raise ValueError("bin width must be positive")

    @property
    def n_voxels(self) -> int:
        return self.width * self.height

    @property
    def n_bins(self) -> int:
        return self.n_angles * self.n_radial_bins

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_angles) * (np.pi / self.n_angles)

    @property
    def radial_offsets(self) -> np.ndarray:
        k = np.arange(self.n_radial_bins)
        return (k - 0.5 * (self.n_radial_bins - 1)) * self.bin_width

    @property
    def fov_radius(self) -> float:
        """Radius of the inscribed field-of-view circle in mm."""
        return 0.5 * min(self.width, self.height) * self.voxel_size

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "voxel_size": self.voxel_size,
            "n_angles": self.n_angles,
            "n_radial_bins": self.n_radial_bins,
            "bin_width": self.bin_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Geometry2D":
        return cls(**d)

    def cache_key(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


class SystemMatrix:
    """Read-only sparse projection operator with its sensitivity image."""

    def __init__(self, geometry: Geometry2D, matrix: sp.csr_matrix):
        self.geometry = geometry
        self.matrix = matrix.tocsr()
        self.matrix.data.setflags(write=False)
        sens = np.asarray(self.matrix.sum(axis=0)).ravel()
        sens.setflags(write=False)
        self.sensitivity = sens

    @property
    def n_bins(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.matrix.shape[1]


def _ray_cells(p0x, p0y, ux, uy, x0, y0, extent_x, extent_y, voxel, width, height):
    """Voxel indices and intersection lengths for one ray, Siddon traversal."""
    tiny = 1e-12
    tmins, tmaxs = [], []
    if abs(ux) > tiny:
        ta = (x0 - p0x) / ux
        tb = (x0 + extent_x - p0x) / ux
        tmins.append(min(ta, tb))
        tmaxs.append(max(ta, tb))
    elif not (x0 <= p0x <= x0 + extent_x):
        return None
    if abs(uy) > tiny:
        ta = (y0 - p0y) / uy
        tb = (y0 + extent_y - p0y) / uy
        tmins.append(min(ta, tb))
        tmaxs.append(max(ta, tb))
    elif not (y0 <= p0y <= y0 + extent_y):
        return None
    t_in = max(tmins) if tmins else -1e30
    t_out = min(tmaxs) if tmaxs else 1e30
    if t_out - t_in <= tiny:
        return None

    crossings = [np.array([t_in, t_out])]
    if abs(ux) > tiny:
        tx = (x0 + voxel * np.arange(width + 1) - p0x) / ux
        crossings.append(tx[(tx > t_in) & (tx < t_out)])
    if abs(uy) > tiny:
        ty = (y0 + voxel * np.arange(height + 1) - p0y) / uy
        crossings.append(ty[(ty > t_in) & (ty < t_out)])
    ts = np.unique(np.concatenate(crossings))
    if ts.size < 2:
        return None
    lengths = np.diff(ts)
    mids = 0.5 * (ts[:-1] + ts[1:])
    ix = np.floor((p0x + mids * ux - x0) / voxel).astype(np.int64)
    iy = np.floor((p0y + mids * uy - y0) / voxel).astype(np.int64)
    keep = (lengths > tiny) & (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
    if not np.any(keep):
        return None
    return iy[keep] * width + ix[keep], lengths[keep]


def build_system_matrix(geometry: Geometry2D) -> SystemMatrix:
    """Trace every (angle, radial bin) ray through the grid; deterministic."""
    w, h, v = geometry.width, geometry.height, geometry.voxel_size
    x0, y0 = -0.5 * w * v, -0.5 * h * v
    rows, cols, vals = [], [], []
    offsets = geometry.radial_offsets
    for ia, phi in enumerate(geometry.angles):
        ux, uy = np.cos(phi), np.sin(phi)
        nx, ny = -np.sin(phi), np.cos(phi)
        for ib, s in enumerate(offsets):
            hit = _ray_cells(s * nx, s * ny, ux, uy, x0, y0, w * v, h * v, v, w, h)
            if hit is None:
                continue
            j, lengths = hit
            rows.append(np.full(j.size, ia * geometry.n_radial_bins + ib, dtype=np.int64))
            cols.append(j)
            vals.append(lengths)
    if rows:
        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(geometry.n_bins, geometry.n_voxels),
        ).tocsr()
    else:
        mat = sp.csr_matrix((geometry.n_bins, geometry.n_voxels))
    mat.sum_duplicates()
    return SystemMatrix(geometry, mat)


def forward_project(system: SystemMatrix, image_frame: np.ndarray) -> np.ndarray:
    """Line integrals of one image frame: returns matrix @ x."""
    x = np.asarray(image_frame, dtype=np.float64)
    if x.shape != (system.n_voxels,):
        raise ValueError(f"image frame must have shape ({system.n_voxels},), got {x.shape}")
    return system.matrix @ x


def back_project(system: SystemMatrix, sino_frame: np.ndarray) -> np.ndarray:
    """Transpose application: returns matrix.T @ q (input may be signed)."""
    q = np.asarray(sino_frame, dtype=np.float64)
    if q.shape != (system.n_bins,):
        raise ValueError(f"sinogram frame must have shape ({system.n_bins},), got {q.shape}")
    return system.matrix.T @ q


# ---------------------------------------------------------------------------
# .sysm cache format: geometry JSON header line, then CSR indptr (<i8),
# indices (<i4), data (<f8) as raw little-endian blocks.
# ---------------------------------------------------------------------------


def save_system_matrix(path, system: SystemMatrix) -> None:
    m = system.matrix
    header = {
        "format": "sysm",
        "version": 1,
        "geometry": system.geometry.to_dict(),
        "nnz": int(m.nnz),
    }
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        f.write(m.indptr.astype("<i8").tobytes())
        f.write(m.indices.astype("<i4").tobytes())
        f.write(m.data.astype("<f8").tobytes())


def load_system_matrix(path) -> SystemMatrix:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != "sysm":
            raise ValueError(f"{path}: not a .sysm file")
        geometry = Geometry2D.from_dict(header["geometry"])
        n_rows = geometry.n_bins
        nnz = header["nnz"]
        indptr = np.frombuffer(f.read(8 * (n_rows + 1)), dtype="<i8")
        indices = np.frombuffer(f.read(4 * nnz), dtype="<i4")
        data = np.frombuffer(f.read(8 * nnz), dtype="<f8")
    mat = sp.csr_matrix((data, indices, indptr), shape=(n_rows, geometry.n_voxels))
    return SystemMatrix(geometry, mat)


def load_or_build_system_matrix(geometry: Geometry2D, cache_dir=None) -> SystemMatrix:
    """Build the matrix, reusing a cached .sysm keyed by the geometry hash."""
    if cache_dir is None:
        return build_system_matrix(geometry)
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, f"sysmatrix-{geometry.cache_key()}.sysm")
    if os.path.exists(path):
        cached = load_system_matrix(path)
        if cached.geometry == geometry:
            return cached
    system = build_system_matrix(geometry)
    save_system_matrix(path, system)
    return system
