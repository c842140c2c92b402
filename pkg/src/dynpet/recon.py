"""Reconstruction algorithms for time-framed emission data.

All drivers share the same multiplicative image update:

* ``mlem``: frame-independent Poisson EM (single subset).
* ``map-osl``: EM with a one-step-late spatial Huber prior per frame.
* ``pgm-pet``: alternating estimation of kinetic maps and activity, where
  the image update carries a one-step-late kinetic prior pulling each voxel
  TAC toward its fitted model curve with weight beta.
* ``icm-em``: deterministic direct baseline; after each EM pass the maps are
  refitted and the image is replaced by the model curves (the beta -> inf
  limit of pgm-pet).
* ``pgd``: the pgm-pet objective driven by strictly interleaved single
  steps (one LM iteration, one image update per cycle).

The acquisition model for frame m is counts ~ Poisson(scale_m * A x_m + r_m)
with scale_m = calibration * frame_duration, so images stay in activity
units and frame durations enter through the per-frame scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import DynamicImage, FrameSchedule, ParametricMaps, SinogramSeries
from .fitting import HuberSpec, LMOptions, map_lm_fit
from .kinetics import DEFAULT_GRID_DT, get_model, ki_values
from .metrics import bias_db, roi_noise
from .projector import SystemMatrix

ALGORITHMS = ("mlem", "map-osl", "pgm-pet", "icm-em", "pgd")


@dataclass(frozen=True)
class ReconConfig:
    """Knobs shared by all algorithms, tuned for the 64x64 desk study.

    beta and sigma only enter through beta / sigma^2, so sigma fixes the
    scale on which the conventional beta range [20, 250] spans indirect to
    nearly direct behavior at the desk count level; eps_floor_rel bounds
    the amplification a floored penalized update can apply.
    """

    algorithm: str = "mlem"
    n_outer_iters: int = 100
    n_inner_image_updates: int = 1
    beta: float = 0.0  # kinetic prior weight
    sigma: float = 350.0  # TAC model uncertainty (kBq/mL)
    gamma: float = 0.2  # map prior weight
    delta_fraction: float = 0.1  # map Huber threshold, fraction of box range
    spatial_beta: float = 0.04
    spatial_delta: float = 1.0  # kBq/mL
    eps_floor_rel: float = 0.05  # denominator floor relative to max sensitivity
    lm_iters_per_cycle: int = 2
    grid_dt: float = DEFAULT_GRID_DT
    checkpoints: tuple = (1, 10, 25, 50, 100)
    lm_options: LMOptions = field(default_factory=LMOptions)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}, expected one of {ALGORITHMS}")
        if self.beta < 0 or self.gamma < 0 or self.spatial_beta < 0:
            raise ValueError("prior weights must be nonnegative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.eps_floor_rel > 0:
            raise ValueError("eps_floor_rel must be positive")
        if self.n_inner_image_updates < 1 or self.n_outer_iters < 1:
            raise ValueError("iteration counts must be at least 1")
        if self.lm_iters_per_cycle < 1:
            raise ValueError("lm_iters_per_cycle must be at least 1")
        object.__setattr__(self, "checkpoints", tuple(int(c) for c in self.checkpoints))

    def map_huber(self) -> HuberSpec:
        delta = self.lm_options.delta_per_param(self.delta_fraction)
        return HuberSpec(delta, self.gamma)


@dataclass
class EvalContext:
    """Optional ground truth and ROI used to log metrics during a run."""

    truth: DynamicImage | None = None
    truth_maps: np.ndarray | None = None  # (n_voxels, 5): K1, k2, k3, fv, Ki
    roi_mask: np.ndarray | None = None  # (n_voxels,) bool
    map_metric_cycles: tuple = ()


def poisson_log_likelihood(counts: np.ndarray, expected: np.ndarray) -> float:
    """sum(y log yhat - yhat), with 0 log 0 = 0; -inf if yhat=0 where y>0."""
    counts = np.asarray(counts, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    pos = expected > 0
    if np.any(counts[~pos] > 0):
        return -np.inf
    return float(np.sum(counts[pos] * np.log(expected[pos])) - np.sum(expected))


def osl_penalized_update(x, system: SystemMatrix, y, r, prior_grad, beta, eps_floor, scale=1.0):
    """One-step-late penalized EM update of a single frame.

    Returns the updated frame and the number of voxels whose denominator
    (scaled sensitivity minus beta times the prior gradient at the current
    estimate) had to be floored at eps_floor.
    """
    x = np.asarray(x, dtype=np.float64)
    proj = scale * (system.matrix @ x) + r
    if np.any((proj <= 0) & (y > 0)):
        raise ValueError("zero expected counts where data is positive: model inconsistent")
    safe = np.where(proj > 0, proj, 1.0)
    ratio = np.where(proj > 0, y / safe, 0.0)
    back = scale * (system.matrix.T @ ratio)
    denom_raw = scale * system.sensitivity - beta * prior_grad
    floored = int(np.count_nonzero((denom_raw < eps_floor) & (x > 0)))
    denom = np.maximum(denom_raw, eps_floor)
    return x * back / denom, floored


def mlem_update(x, system: SystemMatrix, y, r, scale=1.0, eps_floor=None):
    """Plain EM update of one frame; fixed point where y == scale*A x + r."""
    if eps_floor is None:
        eps_floor = 1e-6 * scale * float(np.max(system.sensitivity))
    out, _ = osl_penalized_update(
        x, system, y, r, np.zeros_like(np.asarray(x, dtype=np.float64)), 0.0, eps_floor, scale
    )
    return out


def kinetic_prior_gradient(x: np.ndarray, f: np.ndarray, sigma: float) -> np.ndarray:
    """Gradient of the log kinetic prior at x: -(x - f) / sigma^2."""
    x = np.asarray(x, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if x.shape != f.shape:
        raise ValueError("activity and model arrays must have the same shape")
    return -(x - f) / (sigma * sigma)


def spatial_prior_gradient(frame: np.ndarray, huber_spec: HuberSpec) -> np.ndarray:
    """Gradient of the log spatial prior of one (height, width) frame.

    Each voxel receives -sum of Huber derivatives of its differences with
    the 4-neighborhood; pairwise antisymmetry makes the gradient sum to zero.
    """
    img = np.asarray(frame, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("frame must be a 2-d (height, width) array")
    delta = float(np.asarray(huber_spec.delta).ravel()[0])
    grad = np.zeros_like(img)
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        d = img - np.roll(img, shift, axis=axis)
        ad = np.abs(d)
        hder = np.where(ad <= delta, d, delta * np.sign(d))
        # mask the wrapped edge introduced by roll
        if axis == 0:
            if shift == 1:
                hder[0, :] = 0.0
            else:
                hder[-1, :] = 0.0
        else:
            if shift == 1:
                hder[:, 0] = 0.0
            else:
                hder[:, -1] = 0.0
        grad -= hder
    return grad


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


class _RunState:
    """Shared per-run quantities: scales, floors, support, initial image."""

    def __init__(self, y: SinogramSeries, system: SystemMatrix, schedule: FrameSchedule,
                 config: ReconConfig):
        if y.n_bins != system.n_bins:
            raise ValueError("sinogram and system matrix disagree on bin count")
        if y.n_frames != schedule.n_frames:
            raise ValueError("sinogram and schedule disagree on frame count")
        self.system = system
        self.counts = y.counts
        self.background = y.background
        self.scales = y.calibration * schedule.durations
        smax = float(np.max(system.sensitivity))
        self.support = system.sensitivity >= config.eps_floor_rel * smax
        self.eps_floors = config.eps_floor_rel * self.scales * smax
        self.n_frames = schedule.n_frames
        self.n_voxels = system.n_voxels

    def initial_image(self) -> np.ndarray:
        """Uniform positive start on the support, matched to total counts."""
        proj_per_activity = float(
            np.sum(self.scales) * np.sum(self.system.matrix @ self.support.astype(np.float64))
        )
        excess = float(np.sum(self.counts) - np.sum(self.background))
        level = excess / proj_per_activity if excess > 0 and proj_per_activity > 0 else 1e-3
        x = np.zeros((self.n_voxels, self.n_frames))
        x[self.support, :] = max(level, 1e-12)
        return x

    def log_likelihood(self, x: np.ndarray) -> float:
        total = 0.0
        for m in range(self.n_frames):
            expected = self.scales[m] * (self.system.matrix @ x[:, m]) + self.background[:, m]
            total += poisson_log_likelihood(self.counts[:, m], expected)
        return total


def _metrics_entry(cycle, state, x, theta, f, floored, eval_ctx, config,
                   schedule=None, cp=None):
    entry = {
        "cycle": cycle,
        "loglik": state.log_likelihood(x),
        "km_residual": float(np.sum((x - f) ** 2)) if f is not None else float("nan"),
        "floored_fraction": floored / (max(1, np.count_nonzero(state.support)) * state.n_frames),
    }
    if eval_ctx is not None and eval_ctx.truth is not None:
        truth = eval_ctx.truth.values
        entry["bias_db"] = bias_db(x.ravel(), truth.ravel())
        entry["frame_bias_db"] = [
            bias_db(x[:, m], truth[:, m]) for m in range(state.n_frames)
        ]
    if eval_ctx is not None and eval_ctx.roi_mask is not None:
        per_frame = [float(roi_noise(x[:, m], eval_ctx.roi_mask)) for m in range(state.n_frames)]
        entry["frame_noise"] = per_frame
        entry["noise"] = float(np.mean(per_frame))
    want_maps = (
        eval_ctx is not None
        and eval_ctx.truth_maps is not None
        and cycle in tuple(eval_ctx.map_metric_cycles)
    )
    if want_maps:
        if theta is None:
            fitted = _fit_maps_for_eval(x, state, config, schedule, cp)
        else:
            fitted = theta
        full = np.column_stack([fitted, ki_values(fitted)])
        entry["map_bias_db"] = {}
        entry["map_noise"] = {}
        names = ("K1", "k2", "k3", "fv", "Ki")
        nonbg = np.any(eval_ctx.truth_maps != 0, axis=1)
        for p, name in enumerate(names):
            entry["map_bias_db"][name] = bias_db(full[nonbg, p], eval_ctx.truth_maps[nonbg, p])
            if eval_ctx.roi_mask is not None:
                entry["map_noise"][name] = float(roi_noise(full[:, p], eval_ctx.roi_mask))
    return entry


def _fit_maps_for_eval(x, state, config, schedule, cp):
    """Indirect map estimate from the current image (metrics logging only)."""
    geom = state.system.geometry
    image = DynamicImage(geom.width, geom.height, np.maximum(x, 0.0))
    opts = replace(config.lm_options, max_iters=25)
    start = ParametricMaps(
        geom.width, geom.height, np.tile(opts.box_center, (state.n_voxels, 1))
    )
    fitted = map_lm_fit(
        start, image, schedule, cp, config.map_huber(), config.sigma, opts,
        dt=config.grid_dt,
    )
    return fitted.values


def run_mlem(y, system, schedule, config, eval_ctx=None, x0=None, cp=None, hook=None):
    """Frame-independent EM; returns (image, history)."""
    state = _RunState(y, system, schedule, config)
    x = state.initial_image() if x0 is None else np.array(x0, dtype=np.float64)
    history = []
    for cycle in range(1, config.n_outer_iters + 1):
        for m in range(state.n_frames):
            x[:, m] = mlem_update(
                x[:, m], system, state.counts[:, m], state.background[:, m],
                state.scales[m], state.eps_floors[m],
            )
        history.append(_metrics_entry(cycle, state, x, None, None, 0, eval_ctx, config,
                                      schedule, cp))
        if hook is not None:
            hook(cycle, x, None)
    return DynamicImage(system.geometry.width, system.geometry.height, x), history


def run_map_osl_osem(y, system, schedule, config, eval_ctx=None, x0=None, cp=None, hook=None):
    """EM with the one-step-late spatial Huber prior; returns (image, history)."""
    state = _RunState(y, system, schedule, config)
    geom = system.geometry
    x = state.initial_image() if x0 is None else np.array(x0, dtype=np.float64)
    spec = HuberSpec(config.spatial_delta, 1.0)
    history = []
    for cycle in range(1, config.n_outer_iters + 1):
        floored = 0
        for m in range(state.n_frames):
            grad = spatial_prior_gradient(
                x[:, m].reshape(geom.height, geom.width), spec
            ).ravel()
            x[:, m], nf = osl_penalized_update(
                x[:, m], system, state.counts[:, m], state.background[:, m],
                grad, config.spatial_beta, state.eps_floors[m], state.scales[m],
            )
            floored += nf
        history.append(_metrics_entry(cycle, state, x, None, None, floored, eval_ctx,
                                      config, schedule, cp))
        if hook is not None:
            hook(cycle, x, None)
    return DynamicImage(geom.width, geom.height, x), history


def _joint_reconstruct(y, system, schedule, cp, config, eval_ctx, x0, theta0,
                       lm_iters, n_inner, replace_with_model, hook=None):
    """Shared alternating driver for pgm-pet, pgd, and icm-em."""
    state = _RunState(y, system, schedule, config)
    geom = system.geometry
    model = get_model(cp, schedule, config.grid_dt)
    opts = replace(config.lm_options, max_iters=lm_iters)
    huber_spec = config.map_huber()
    sigma = config.sigma

    x = state.initial_image() if x0 is None else np.array(x0, dtype=np.float64)
    if theta0 is None:
        theta = np.tile(opts.box_center, (state.n_voxels, 1))
        theta[~state.support] = 0.0
    else:
        theta = np.array(theta0, dtype=np.float64)

    history = []
    for cycle in range(1, config.n_outer_iters + 1):
        floored = 0
        if replace_with_model:
            # EM pass first, then refit and project onto the model manifold
            for m in range(state.n_frames):
                x[:, m] = mlem_update(
                    x[:, m], system, state.counts[:, m], state.background[:, m],
                    state.scales[m], state.eps_floors[m],
                )
            theta = _fit_sweep(theta, x, geom, model, schedule, cp, huber_spec, sigma, opts,
                               config.grid_dt)
            x = model.model_frames_batch(theta)
            f = x
        else:
            theta = _fit_sweep(theta, x, geom, model, schedule, cp, huber_spec, sigma, opts,
                               config.grid_dt)
            f = model.model_frames_batch(theta)
            for _ in range(n_inner):
                for m in range(state.n_frames):
                    grad = kinetic_prior_gradient(x[:, m], f[:, m], sigma)
                    x[:, m], nf = osl_penalized_update(
                        x[:, m], system, state.counts[:, m], state.background[:, m],
                        grad, config.beta, state.eps_floors[m], state.scales[m],
                    )
                    floored += nf
        history.append(_metrics_entry(cycle, state, x, theta, f, floored, eval_ctx,
                                      config, schedule, cp))
        if hook is not None:
            hook(cycle, x, theta)
    image = DynamicImage(geom.width, geom.height, np.maximum(x, 0.0))
    maps = ParametricMaps(geom.width, geom.height, theta)
    return image, maps, history


def _fit_sweep(theta, x, geom, model, schedule, cp, huber_spec, sigma, opts, grid_dt):
    image = DynamicImage(geom.width, geom.height, np.maximum(x, 0.0))
    start = ParametricMaps(geom.width, geom.height, theta)
    fitted = map_lm_fit(start, image, schedule, cp, huber_spec, sigma, opts,
                        n_sweeps=1, dt=grid_dt)
    return fitted.values


def pgm_pet_reconstruct(y, system, schedule, cp, config, eval_ctx=None,
                        x0=None, theta0=None, hook=None):
    """Alternating map/image estimation with the weighted kinetic prior.

    Each cycle refits the maps from the current image (several LM iterations),
    recomputes the model curves, and applies the penalized EM update to every
    frame. With beta == 0 the image path is bitwise identical to run_mlem.
    """
    return _joint_reconstruct(
        y, system, schedule, cp, config, eval_ctx, x0, theta0,
        lm_iters=config.lm_iters_per_cycle, n_inner=config.n_inner_image_updates,
        replace_with_model=False, hook=hook,
    )


def pgd_reconstruct(y, system, schedule, cp, config, eval_ctx=None,
                    x0=None, theta0=None, hook=None):
    """Strictly interleaved variant: one LM step and one image update per cycle."""
    return _joint_reconstruct(
        y, system, schedule, cp, config, eval_ctx, x0, theta0,
        lm_iters=1, n_inner=1, replace_with_model=False, hook=hook,
    )


def icm_em_reconstruct(y, system, schedule, cp, config, eval_ctx=None,
                       x0=None, theta0=None, hook=None):
    """Deterministic direct baseline: activity is replaced by the model output.

    Each cycle: one EM update per frame, a map refit from the updated TACs,
    then x := model(theta) exactly, so reconstructed TACs always lie on the
    model manifold.
    """
    return _joint_reconstruct(
        y, system, schedule, cp, config, eval_ctx, x0, theta0,
        lm_iters=config.lm_iters_per_cycle, n_inner=0, replace_with_model=True, hook=hook,
    )


def run_algorithm(name, y, system, schedule, cp, config, eval_ctx=None, hook=None):
    """Dispatch by algorithm name; returns (image, maps or None, history)."""
    cfg = replace(config, algorithm=name)
    if name == "mlem":
        image, history = run_mlem(y, system, schedule, cfg, eval_ctx, cp=cp, hook=hook)
        return image, None, history
    if name == "map-osl":
        image, history = run_map_osl_osem(y, system, schedule, cfg, eval_ctx, cp=cp, hook=hook)
        return image, None, history
    if name == "pgm-pet":
        return pgm_pet_reconstruct(y, system, schedule, cp, cfg, eval_ctx, hook=hook)
    if name == "pgd":
        return pgd_reconstruct(y, system, schedule, cp, cfg, eval_ctx, hook=hook)
    if name == "icm-em":
        return icm_em_reconstruct(y, system, schedule, cp, cfg, eval_ctx, hook=hook)
    raise ValueError(f"unknown algorithm {name!r}")
