"""Two-tissue irreversible compartment model with an analytic arterial input.

The tracer input Cp(t) follows the classic four-coefficient exponential form
(one linear-times-exponential term plus two pure exponentials, delayed by
tau). Tissue activity for rate constants (K1, k2, k3) and blood fraction fv
is

    C(t) = (1 - fv) * [ K1*k3/(k2+k3) * int_0^t Cp
                        + K1*k2/(k2+k3) * (exp(-(k2+k3) t) conv Cp)(t) ]
           + fv * Cp(t),

reducing to K1 * int Cp when k2 + k3 = 0 (pure trapping). Integrals and
convolutions are evaluated by trapezoidal accumulation on a fine uniform
grid; frame values are averages of the curve over each acquisition frame.

A ``KineticModel`` binds an input function, a frame schedule, and the grid,
precomputing everything that does not depend on the parameters. Its batch
methods evaluate model frame values and parameter Jacobians for thousands of
voxels at once through a compiled recursion over the grid. The plain and
Jacobian evaluation paths share the same arithmetic, so model values agree
bitwise between them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy.integrate import cumulative_trapezoid

from .core import FrameSchedule

DEFAULT_GRID_DT = 0.1  # s
_INPUT_CHECK_HORIZON = 7200.0  # s, nonnegativity validated out to here


@dataclass(frozen=True)
class InputFunction:
    """Arterial plasma input: amplitudes in kBq/mL (a1 in kBq/mL/s), rates in 1/s.

    Rates lam1..lam3 are negative by convention; the curve is zero before the
    delay and continuous at onset. Nonnegativity over the working horizon is
    checked numerically on a 0.1 s grid at construction.
    """

    a1: float
    a2: float
    a3: float
    lam1: float
    lam2: float
    lam3: float
    delay: float = 0.0

    def __post_init__(self):
        if self.lam1 > 0 or self.lam2 > 0 or self.lam3 > 0:
            raise ValueError("decay rates lam1..lam3 must be <= 0")
        if self.delay < 0:
            raise ValueError("delay must be nonnegative")
        grid = np.arange(0.0, _INPUT_CHECK_HORIZON + 0.05, 0.1)
        if np.any(self(grid) < -1e-9):
            raise ValueError("input function is negative on [0, horizon]")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        dt = t - self.delay
        active = dt >= 0
        dtc = np.where(active, dt, 0.0)
        val = (
            (self.a1 * dtc - self.a2 - self.a3) * np.exp(self.lam1 * dtc)
            + self.a2 * np.exp(self.lam2 * dtc)
            + self.a3 * np.exp(self.lam3 * dtc)
        )
        return np.where(active, val, 0.0)

    def to_dict(self) -> dict:
        return {
            "a1": self.a1, "a2": self.a2, "a3": self.a3,
            "lam1": self.lam1, "lam2": self.lam2, "lam3": self.lam3,
            "delay": self.delay,
        }


#: Shipped default input shape (documentation values, overridable via config):
#: 851.1 kBq/mL/min, 21.9 and 20.8 kBq/mL with rates -4.1339, -0.1191,
#: -0.0104 per minute, converted to seconds.
DEFAULT_INPUT = InputFunction(
    a1=851.1 / 60.0,
    a2=21.9,
    a3=20.8,
    lam1=-4.1339 / 60.0,
    lam2=-0.1191 / 60.0,
    lam3=-0.0104 / 60.0,
    delay=0.0,
)


@dataclass(frozen=True)
class KineticParams:
    """Rate constants in 1/s plus the fractional blood volume."""

    k1: float
    k2: float
    k3: float
    fv: float

    def __post_init__(self):
        if self.k1 < 0 or self.k2 < 0 or self.k3 < 0:
            raise ValueError("K1, k2, k3 must be nonnegative")
        if not 0.0 <= self.fv <= 1.0:
            raise ValueError("fv must lie in [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.k3, self.fv], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "KineticParams":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


def input_value(cp: InputFunction, t):
    """Plasma input activity at time t (scalar or array), zero before delay."""
    out = cp(t)
    return float(out) if np.isscalar(t) else out


def ki(theta: KineticParams) -> float:
    """Net influx rate K1*k3/(k2+k3); requires k2+k3 > 0."""
    denom = theta.k2 + theta.k3
    if denom <= 0:
        raise ZeroDivisionError("ki undefined for k2 + k3 == 0")
    return theta.k1 * theta.k3 / denom


def ki_values(thetas: np.ndarray) -> np.ndarray:
    """Vectorized influx rate with 0 where k2+k3 == 0 (degenerate voxels)."""
    thetas = np.asarray(thetas, dtype=np.float64)
    denom = thetas[:, 1] + thetas[:, 2]
    out = np.zeros(thetas.shape[0])
    ok = denom > 0
    out[ok] = thetas[ok, 0] * thetas[ok, 2] / denom[ok]
    return out


@njit(cache=True)
def _exp_conv_curve(a, x, dt):
    """Trapezoidal (exp(-a t) conv x)(t) on a uniform grid, via recursion."""
    n = x.shape[0]
    out = np.zeros(n)
    e = np.exp(-a * dt)
    c = 0.5 * dt
    acc = 0.0
    for i in range(1, n):
        acc = e * acc + c * (x[i] + e * x[i - 1])
        out[i] = acc
    return out


@njit(parallel=True, cache=True)
def _conv_frame_stats(a_arr, cp, tcp, t, dt, fa, wa, fb, wb, n_frames, deriv):
    """Frame-averaged exponential convolutions for a batch of decay rates.

    For each rate a returns tbar[m] = avg over frame m of (exp(-a t) conv Cp)
    and, when deriv is true, sbar[m] = avg of ((t exp(-a t)) conv Cp), which
    equals -d(tbar)/da. Each grid node carries at most two (frame, weight)
    pairs listed in fa/wa and fb/wb, frame index -1 meaning unused.
    """
    n_a = a_arr.shape[0]
    n = cp.shape[0]
    tbar = np.zeros((n_a, n_frames))
    sbar = np.zeros((n_a, n_frames))
    for k in prange(n_a):
        a = a_arr[k]
        e = np.exp(-a * dt)
        c = 0.5 * dt
        conv = 0.0
        if deriv:
            conv_t = 0.0
            for i in range(1, n):
                conv = e * conv + c * (cp[i] + e * cp[i - 1])
                conv_t = e * conv_t + c * (tcp[i] + e * tcp[i - 1])
                s = t[i] * conv - conv_t
                ia = fa[i]
                if ia >= 0:
                    tbar[k, ia] += wa[i] * conv
                    sbar[k, ia] += wa[i] * s
                ib = fb[i]
                if ib >= 0:
                    tbar[k, ib] += wb[i] * conv
                    sbar[k, ib] += wb[i] * s
        else:
            for i in range(1, n):
                conv = e * conv + c * (cp[i] + e * cp[i - 1])
                ia = fa[i]
                if ia >= 0:
                    tbar[k, ia] += wa[i] * conv
                ib = fb[i]
                if ib >= 0:
                    tbar[k, ib] += wb[i] * conv
    return tbar, sbar


def _validate_grid(grid) -> float:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("time grid must be a 1-d array with at least 2 points")
    steps = np.diff(grid)
    dt = steps[0]
    if dt <= 0 or np.any(np.abs(steps - dt) > 1e-9 * dt):
        raise ValueError("time grid must be uniform and increasing")
    if dt > 0.5 + 1e-12:
        raise ValueError("grid step must be at most 0.5 s")
    return float(dt)


def tissue_curve(theta: KineticParams, cp: InputFunction, grid) -> np.ndarray:
    """Model tissue activity sampled on the given uniform grid."""
    grid = np.asarray(grid, dtype=np.float64)
    dt = _validate_grid(grid)
    cpv = cp(grid)
    icp = cumulative_trapezoid(cpv, dx=dt, initial=0.0)
    a = theta.k2 + theta.k3
    if a > 0:
        conv = _exp_conv_curve(a, cpv, dt)
        ct = theta.k1 * (theta.k3 * icp + theta.k2 * conv) / a
    else:
        ct = theta.k1 * icp
    return (1.0 - theta.fv) * ct + theta.fv * cpv


class KineticModel:
    """Input function + schedule + fine grid, with batch evaluation methods."""

    def __init__(self, cp: InputFunction, schedule: FrameSchedule, dt: float = DEFAULT_GRID_DT):
        if dt <= 0 or dt > 0.5:
            raise ValueError("grid step must lie in (0, 0.5] s")
        if np.min(schedule.durations) < 2 * dt:
            raise ValueError("grid step too coarse for the shortest frame")
        self.cp = cp
        self.schedule = schedule
        self.dt = float(dt)
        end = schedule.end
        n = int(np.ceil(end / dt - 1e-9)) + 1
        self.grid = np.arange(n) * self.dt
        if self.grid[-1] < end - 1e-9:  # cover the last frame completely
            self.grid = np.arange(n + 1) * self.dt
        self.cp_values = cp(self.grid)
        self.cp_integral = cumulative_trapezoid(self.cp_values, dx=self.dt, initial=0.0)
        self._tcp = self.grid * self.cp_values
        self._weights = self._frame_weights()
        self._fa, self._wa, self._fb, self._wb = self._weight_pairs()
        self.cp_frame_avg = self._weights @ self.cp_values
        self.cp_integral_frame_avg = self._weights @ self.cp_integral

    @property
    def n_frames(self) -> int:
        return self.schedule.n_frames

    def _frame_weights(self) -> np.ndarray:
        """Dense (n_frames, n_grid) trapezoid weights; rows average over frames.

        Frame edges that fall inside a grid cell are handled by linear
        interpolation of the integrand, so a constant curve averages to
        itself for any edge placement.
        """
        t = self.grid
        dt = self.dt
        n = t.size
        w = np.zeros((self.n_frames, n))
        for m in range(self.n_frames):
            t0 = self.schedule.starts[m]
            t1 = t0 + self.schedule.durations[m]
            i0 = min(int(np.floor(t0 / dt + 1e-9)), n - 2)
            i1 = min(int(np.floor(t1 / dt - 1e-9)), n - 2)
            if i1 < i0:
                i1 = i0
            for cell in range(i0, i1 + 1):
                lo = max(t0, t[cell])
                hi = min(t1, t[cell + 1])
                if hi <= lo:
                    continue
                alpha = (lo - t[cell]) / dt
                beta = (hi - t[cell]) / dt
                half = 0.5 * (hi - lo)
                w[m, cell] += half * (2.0 - alpha - beta)
                w[m, cell + 1] += half * (alpha + beta)
            w[m] /= self.schedule.durations[m]
        return w

    def _weight_pairs(self):
        """Per-node (frame, weight) pairs for the compiled kernel, max two each."""
        n = self.grid.size
        fa = np.full(n, -1, dtype=np.int64)
        fb = np.full(n, -1, dtype=np.int64)
        wa = np.zeros(n)
        wb = np.zeros(n)
        rows, cols = np.nonzero(self._weights)
        for m, i in zip(rows, cols):
            if fa[i] < 0:
                fa[i], wa[i] = m, self._weights[m, i]
            elif fb[i] < 0:
                fb[i], wb[i] = m, self._weights[m, i]
            else:
                raise AssertionError("grid node claimed by more than two frames")
        return fa, wa, fb, wb

    def frame_average(self, curve: np.ndarray) -> np.ndarray:
        """Average a grid-sampled curve over each frame."""
        return self._weights @ np.asarray(curve, dtype=np.float64)

    def conv_frame_stats(self, a_arr: np.ndarray, deriv: bool):
        """Frame-averaged convolution per rate, plus its negated a-derivative."""
        a_arr = np.ascontiguousarray(a_arr, dtype=np.float64)
        return _conv_frame_stats(
            a_arr, self.cp_values, self._tcp, self.grid, self.dt,
            self._fa, self._wa, self._fb, self._wb, self.n_frames, deriv,
        )

    def _frames_from_stats(self, k1, k2, k3, fv, a, pos, tbar):
        """Shared arithmetic for model frame values given the conv averages."""
        g1 = self.cp_integral_frame_avg[None, :]
        safe_a = np.where(pos, a, 1.0)
        inner = k3[:, None] * g1 + k2[:, None] * tbar
        ct = (k1 / safe_a)[:, None] * inner
        if np.any(~pos):
            ct[~pos] = (k1[~pos])[:, None] * g1
        f = (1.0 - fv)[:, None] * ct + fv[:, None] * self.cp_frame_avg[None, :]
        return ct, f

    def model_frames_batch(self, thetas: np.ndarray) -> np.ndarray:
        """Frame-averaged model values for a (n, 4) parameter batch."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        k1, k2, k3, fv = thetas.T
        a = k2 + k3
        pos = a > 0
        tbar, _ = self.conv_frame_stats(a, deriv=False)
        _, f = self._frames_from_stats(k1, k2, k3, fv, a, pos, tbar)
        return f

    def jacobian_batch(self, thetas: np.ndarray):
        """Model frames and their (n, n_frames, 4) parameter derivatives."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        n = thetas.shape[0]
        k1, k2, k3, fv = thetas.T
        a = k2 + k3
        pos = a > 0
        tbar, sbar = self.conv_frame_stats(a, deriv=True)
        ct, f = self._frames_from_stats(k1, k2, k3, fv, a, pos, tbar)

        g0 = self.cp_frame_avg[None, :]
        g1 = self.cp_integral_frame_avg[None, :]
        safe_a = np.where(pos, a, 1.0)
        inv_a = 1.0 / safe_a
        one_mfv = (1.0 - fv)[:, None]

        jac = np.empty((n, self.n_frames, 4))
        d_k1 = inv_a[:, None] * (k3[:, None] * g1 + k2[:, None] * tbar)
        k1k3_a2 = (k1 * k3 * inv_a * inv_a)[:, None]
        k1k2_a2 = (k1 * k2 * inv_a * inv_a)[:, None]
        k1k2_a = (k1 * k2 * inv_a)[:, None]
        jac[:, :, 0] = one_mfv * d_k1
        jac[:, :, 1] = one_mfv * (k1k3_a2 * (tbar - g1) - k1k2_a * sbar)
        jac[:, :, 2] = one_mfv * (k1k2_a2 * (g1 - tbar) - k1k2_a * sbar)
        if np.any(~pos):
            # pure-trapping limit: no k3 dependence; k2 enters at first order
            # through -K1 * (frame average of (t - u) weighted input integral)
            neg = ~pos
            jac[neg, :, 0] = one_mfv[neg] * g1
            jac[neg, :, 1] = -(k1[neg])[:, None] * (one_mfv[neg] * sbar[neg])
            jac[neg, :, 2] = 0.0
        jac[:, :, 3] = g0 - ct
        return f, jac


_model_cache: dict = {}


def get_model(cp: InputFunction, schedule: FrameSchedule, dt: float = DEFAULT_GRID_DT) -> KineticModel:
    """Shared KineticModel instances keyed by input, schedule, and grid step."""
    key = (
        tuple(sorted(cp.to_dict().items())),
        schedule.starts.tobytes(),
        schedule.durations.tobytes(),
        float(dt),
    )
    model = _model_cache.get(key)
    if model is None:
        model = KineticModel(cp, schedule, dt)
        _model_cache[key] = model
    return model


def model_frame_values(
    theta: KineticParams,
    cp: InputFunction,
    schedule: FrameSchedule,
    dt: float = DEFAULT_GRID_DT,
) -> np.ndarray:
    """Frame-averaged model prediction for one parameter vector."""
    model = get_model(cp, schedule, dt)
    return model.model_frames_batch(theta.as_array()[None, :])[0]


def model_jacobian(
    theta: KineticParams,
    cp: InputFunction,
    schedule: FrameSchedule,
    dt: float = DEFAULT_GRID_DT,
) -> np.ndarray:
    """(n_frames, 4) derivative of the frame values w.r.t. (K1, k2, k3, fv)."""
    model = get_model(cp, schedule, dt)
    _, jac = model.jacobian_batch(theta.as_array()[None, :])
    return jac[0]
