"""End-to-end acceptance suite for the desk-scale study.

Runs every advertised guarantee at its stated tolerance and prints one
PASS line per criterion. The heavy reconstruction comparisons share one
module-scoped simulation at a fixed seed; criteria asserting trends state
the ordering only, with the realized margins echoed to stdout and written
to an acceptance manifest next to the run artifacts.
"""

import json
import os
import time

import numpy as np
import pytest

from dynpet.core import FrameSchedule, load_parametric_maps
from dynpet.fitting import LMOptions, huber, lm_fit
from dynpet.kinetics import (
    DEFAULT_INPUT,
    KineticParams,
    get_model,
    ki,
    model_frame_values,
    model_jacobian,
)
from dynpet.metrics import bias_db, erode_mask, roi_noise
from dynpet.projector import Geometry2D, build_system_matrix, back_project, forward_project
from dynpet.recon import (
    EvalContext,
    ReconConfig,
    icm_em_reconstruct,
    mlem_update,
    pgd_reconstruct,
    pgm_pet_reconstruct,
    poisson_log_likelihood,
    run_mlem,
)
from dynpet.simulate import (
    DESK_FRAME_DURATIONS_S,
    DESK_REGION_PARAMS,
    GRAY_MATTER,
    build_phantom,
    simulate_sinograms,
    synthesize_dynamic_image,
    true_parameter_maps,
)

SEED = 20260809
DESK_COUNTS = 5e6


def _report(num, name, detail=""):
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {num:2d} [{name}]: PASS{suffix}")


@pytest.fixture(scope="module")
def desk():
    schedule = FrameSchedule.from_durations(DESK_FRAME_DURATIONS_S)
    geometry = Geometry2D(64, 64, 2.0, 90, 96, 2.0)
    system = build_system_matrix(geometry)
    phantom = build_phantom(64, 64)
    truth = synthesize_dynamic_image(phantom, DEFAULT_INPUT, schedule)
    sino = simulate_sinograms(truth, system, schedule, DESK_COUNTS, 0.2, SEED)
    roi = erode_mask(phantom.mask(GRAY_MATTER).reshape(64, 64)).ravel()
    eval_ctx = EvalContext(truth=truth, truth_maps=true_parameter_maps(phantom),
                           roi_mask=roi)
    return schedule, geometry, system, phantom, truth, sino, roi, eval_ctx


def _recon_cfg(**kw):
    base = dict(n_outer_iters=100, sigma=350.0, gamma=0.2, eps_floor_rel=0.05,
                lm_iters_per_cycle=2)
    base.update(kw)
    return ReconConfig(**base)


@pytest.fixture(scope="module")
def ladder(desk, tmp_path_factory):
    """MLEM plus the kinetic-prior ladder and the direct baseline, 100 cycles."""
    schedule, _, system, _, _, sino, _, eval_ctx = desk
    t0 = time.monotonic()
    runs = {}
    _, hist = run_mlem(sino, system, schedule, _recon_cfg(algorithm="mlem"), eval_ctx)
    runs[0.0] = hist
    for beta in (20.0, 100.0, 250.0):
        _, _, hist = pgm_pet_reconstruct(
            sino, system, schedule, DEFAULT_INPUT,
            _recon_cfg(algorithm="pgm-pet", beta=beta), eval_ctx,
        )
        runs[beta] = hist
    _, _, hist_icm = icm_em_reconstruct(
        sino, system, schedule, DEFAULT_INPUT, _recon_cfg(algorithm="icm-em"), eval_ctx
    )
    elapsed = time.monotonic() - t0
    out_dir = tmp_path_factory.mktemp("acceptance")
    return runs, hist_icm, elapsed, out_dir


def test_criterion_01_projector_adjointness(desk):
    _, geometry, _, _, _, _, _, _ = desk
    t0 = time.monotonic()
    system = build_system_matrix(geometry)  # timed together with the checks
    rng = np.random.default_rng(314)
    worst = 0.0
    for _ in range(100):
        x = rng.random(system.n_voxels)
        q = rng.random(system.n_bins)
        lhs = float(forward_project(system, x) @ q)
        rhs = float(x @ back_project(system, q))
        worst = max(worst, abs(lhs - rhs) / (abs(lhs) + 1e-30))
    elapsed = time.monotonic() - t0
    assert worst < 1e-10
    assert elapsed < 10.0
    _report(1, "projector adjointness", f"worst {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_mlem_loglik_monotone_per_frame(desk):
    schedule, _, system, _, _, sino, _, _ = desk
    scales = sino.calibration * schedule.durations
    smax = float(system.sensitivity.max())
    support = system.sensitivity >= 0.05 * smax
    worst_drop = np.inf
    for m in range(schedule.n_frames):
        y = sino.counts[:, m]
        r = sino.background[:, m]
        x = np.where(support, 1.0, 0.0)
        prev = poisson_log_likelihood(y, scales[m] * (system.matrix @ x) + r)
        for _ in range(100):
            x = mlem_update(x, system, y, r, scales[m], 0.05 * scales[m] * smax)
            cur = poisson_log_likelihood(y, scales[m] * (system.matrix @ x) + r)
            worst_drop = min(worst_drop, cur - prev)
            assert cur - prev >= -1e-9
            prev = cur
    _report(2, "EM log-likelihood monotone", f"worst step {worst_drop:.2e}")


def test_criterion_03_beta_zero_bitwise_degeneracy(desk):
    schedule, _, system, _, _, sino, _, _ = desk
    cycles = 10
    img_pgm, _, _ = pgm_pet_reconstruct(
        sino, system, schedule, DEFAULT_INPUT,
        _recon_cfg(algorithm="pgm-pet", beta=0.0, n_outer_iters=cycles,
                   lm_iters_per_cycle=1),
    )
    img_mlem, _ = run_mlem(sino, system, schedule,
                           _recon_cfg(algorithm="mlem", n_outer_iters=cycles))
    assert np.array_equal(img_pgm.values, img_mlem.values)
    _report(3, "beta=0 degenerates to EM", f"bitwise over {cycles} cycles")


def test_criterion_04_jacobian_finite_differences(desk):
    schedule = desk[0]
    rng = np.random.default_rng(2718)
    worst = 0.0
    for _ in range(50):
        arr = np.array([
            rng.uniform(1e-4, 0.01),
            rng.uniform(1e-4, 0.01),
            rng.uniform(1e-4, 0.01),
            rng.uniform(0.0, 1.0),
        ])
        theta = KineticParams.from_array(arr)
        jac = model_jacobian(theta, DEFAULT_INPUT, schedule)
        for p in range(4):
            h = max(abs(arr[p]), 1e-4) * 1e-5
            up, dn = arr.copy(), arr.copy()
            up[p] = min(arr[p] + h, 1.0) if p == 3 else arr[p] + h
            dn[p] = max(arr[p] - h, 0.0)
            fd = (
                model_frame_values(KineticParams.from_array(up), DEFAULT_INPUT, schedule)
                - model_frame_values(KineticParams.from_array(dn), DEFAULT_INPUT, schedule)
            ) / (up[p] - dn[p])
            rel = np.max(np.abs(fd - jac[:, p])) / max(np.max(np.abs(jac[:, p])), 1e-12)
            worst = max(worst, rel)
    assert worst < 1e-4
    _report(4, "analytic Jacobian vs finite differences", f"worst {worst:.2e}")


def test_criterion_05_noiseless_identifiability(desk, tmp_path):
    schedule, _, _, phantom, truth, _, _, _ = desk
    t0 = time.monotonic()
    opts = LMOptions(max_iters=60)

    # per-TAC recovery from a 20 percent perturbed start
    for name, params in DESK_REGION_PARAMS.items():
        tac = model_frame_values(params, DEFAULT_INPUT, schedule)
        arr = params.as_array()
        init = np.clip(arr * np.array([1.2, 0.8, 1.2, 0.8]), opts.lower, opts.upper)
        fitted, _ = lm_fit(tac, schedule, DEFAULT_INPUT,
                           KineticParams.from_array(init), opts)
        est = fitted.as_array()
        identifiable = arr > 0 if name == "blood" else np.ones(4, dtype=bool)
        rel = np.abs(est - arr)[identifiable] / arr[identifiable]
        assert np.max(rel) < 1e-3, f"{name}: {rel}"

    # end-to-end CLI fit of the noise-free ground truth image
    from dynpet.cli import cmd_fit, cmd_simulate

    cfg = tmp_path / "desk.toml"
    cfg.write_text(
        "[simulation]\nseed = %d\n[fitting]\ngamma = 0.0\n"
        "[recon]\nsigma = 350.0\neps_floor_rel = 0.05\n"
        "[output]\ndir = %r\n" % (SEED, str(tmp_path / "runs"))
    )
    assert cmd_simulate(str(cfg)) == 0
    truth_path = os.path.join(str(tmp_path / "runs"), "sim", "ground_truth.dpt")
    assert cmd_fit(str(cfg), truth_path, gamma=0.0) == 0
    maps = load_parametric_maps(os.path.join(str(tmp_path / "runs"), "fit", "maps.dpt"))
    for name, rid in (("gray_matter", 1), ("white_matter", 2), ("tumor", 3), ("blood", 4)):
        arr = DESK_REGION_PARAMS[name].as_array()
        med = np.median(maps.values[phantom.mask(rid), :4], axis=0)
        identifiable = arr > 0 if name == "blood" else np.ones(4, dtype=bool)
        rel = np.abs(med - arr)[identifiable] / arr[identifiable]
        assert np.max(rel) < 1e-3, f"{name}: {rel}"
    elapsed = time.monotonic() - t0
    assert elapsed < 120.0
    _report(5, "noiseless identifiability", f"{elapsed:.0f}s")


def test_criterion_06_joint_fixed_point(desk):
    schedule, _, system, phantom, _, _, _, _ = desk
    model = get_model(DEFAULT_INPUT, schedule)
    support = system.sensitivity >= 0.05 * float(system.sensitivity.max())
    theta0 = true_parameter_maps(phantom)[:, :4]
    theta0[~support] = 0.0
    x0 = model.model_frames_batch(theta0)
    x0[~support] = 0.0

    from dynpet.core import SinogramSeries

    r = np.full((system.n_bins, schedule.n_frames), 2.0)
    expected = np.column_stack([
        schedule.durations[m] * (system.matrix @ x0[:, m])
        for m in range(schedule.n_frames)
    ]) + r
    counts = np.floor(expected)
    sino = SinogramSeries(system.n_bins, counts, r - (expected - counts), 1.0)

    cfg = _recon_cfg(algorithm="pgm-pet", beta=100.0, gamma=0.0, n_outer_iters=1)
    img, maps, _ = pgm_pet_reconstruct(sino, system, schedule, DEFAULT_INPUT, cfg,
                                       x0=x0, theta0=theta0)
    rel_x = np.max(np.abs(img.values - x0)) / np.max(np.abs(x0))
    scale = np.maximum(np.max(np.abs(theta0), axis=0), 1e-12)
    rel_t = float(np.max(np.abs(maps.values - theta0) / scale))
    assert rel_x < 1e-10
    assert rel_t < 1e-10
    _report(6, "model-consistent fixed point", f"dx {rel_x:.1e}, dtheta {rel_t:.1e}")


def test_criterion_07_beta_noise_ordering(desk, ladder):
    runs, hist_icm, elapsed, out_dir = ladder
    noises = {beta: runs[beta][-1]["noise"] for beta in (0.0, 20.0, 100.0, 250.0)}
    icm_noise = hist_icm[-1]["noise"]
    floored = {beta: max(e["floored_fraction"] for e in runs[beta]) for beta in runs}

    order = [noises[b] for b in (0.0, 20.0, 100.0, 250.0)]
    assert all(a >= b for a, b in zip(order, order[1:])), order
    assert noises[0.0] == max(order)
    assert noises[250.0] >= icm_noise
    assert all(f < 0.01 for f in floored.values()), floored
    assert elapsed < 20 * 60.0

    detail = ("noise " + " > ".join(f"{noises[b]:.1f}@b{b:g}" for b in (0.0, 20.0, 100.0, 250.0))
              + f" >= {icm_noise:.1f}@icm, {elapsed/60:.1f} min")
    with open(out_dir / "acceptance-manifest.json", "w") as f:
        json.dump({
            "seed": SEED,
            "counts": DESK_COUNTS,
            "noise_by_beta": {str(k): v for k, v in noises.items()},
            "icm_noise": icm_noise,
            "max_floored_fraction": max(floored.values()),
        }, f, sort_keys=True, indent=1)
    _report(7, "beta sweep noise ordering", detail)


def test_criterion_08_bias_improvement(ladder):
    runs, _, _, out_dir = ladder
    bias_mlem = runs[0.0][-1]["bias_db"]
    bias_pgm = runs[250.0][-1]["bias_db"]
    margin = bias_mlem - bias_pgm
    assert bias_pgm <= bias_mlem - 1.0, (bias_pgm, bias_mlem)
    path = out_dir / "acceptance-manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest["bias_margin_db"] = margin
    manifest["bias_mlem_db"] = bias_mlem
    manifest["bias_pgm250_db"] = bias_pgm
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1))
    _report(8, "kinetic prior bias gain", f"{bias_pgm:.2f} vs {bias_mlem:.2f} dB "
                                          f"(margin {margin:.2f} dB)")


def test_criterion_09_icm_beats_pgd_convergence(desk):
    schedule, _, system, _, truth, _, roi, _ = desk
    eval_ctx = EvalContext(truth=truth, roi_mask=roi)
    details = []
    for seed in (1, 2, 3):
        sino = simulate_sinograms(truth, system, schedule, DESK_COUNTS, 0.2, seed)
        _, _, h_icm = pgm_pet_reconstruct(
            sino, system, schedule, DEFAULT_INPUT,
            _recon_cfg(algorithm="pgm-pet", beta=100.0, n_outer_iters=40,
                       lm_iters_per_cycle=3), eval_ctx,
        )
        _, _, h_pgd = pgd_reconstruct(
            sino, system, schedule, DEFAULT_INPUT,
            _recon_cfg(algorithm="pgd", beta=100.0, n_outer_iters=40), eval_ctx,
        )
        idx_icm = int(np.argmin([e["bias_db"] for e in h_icm])) + 1
        idx_pgd = int(np.argmin([e["bias_db"] for e in h_pgd])) + 1
        assert idx_icm <= idx_pgd, (seed, idx_icm, idx_pgd)
        details.append(f"seed{seed}: {idx_icm}<={idx_pgd}")
    _report(9, "block updates converge no later than interleaved", ", ".join(details))


def test_criterion_10_simulation_statistics():
    geometry = Geometry2D(8, 8, 4.0, 12, 12, 4.0)
    system = build_system_matrix(geometry)
    schedule = FrameSchedule.from_durations([10.0, 30.0, 60.0])
    phantom = build_phantom(8, 8)
    truth = synthesize_dynamic_image(phantom, DEFAULT_INPUT, schedule)

    a = simulate_sinograms(truth, system, schedule, 2e5, 0.2, SEED)
    b = simulate_sinograms(truth, system, schedule, 2e5, 0.2, SEED)
    assert np.array_equal(a.counts, b.counts)

    reps = [simulate_sinograms(truth, system, schedule, 2e5, 0.2, s) for s in range(200)]
    expected = (
        a.calibration
        * np.column_stack([system.matrix @ truth.values[:, m] for m in range(3)])
        * schedule.durations[None, :]
        + a.background
    )
    mean = np.mean([s.counts for s in reps], axis=0)
    se = np.sqrt(np.maximum(expected, 1e-12) / 200.0)
    frac_ok = float(np.mean(np.abs(mean - expected) <= 3.0 * se))
    assert frac_ok >= 0.99
    _report(10, "seeded simulation statistics", f"{100 * frac_ok:.1f}% bins in 3 SE")


def test_criterion_11_metric_identities():
    assert bias_db(np.array([0.2, 2.0]), np.array([0.0, 2.0])) == -10.0
    assert roi_noise(np.array([0.0, 2.0]), np.array([True, True])) == 1.0
    delta = 0.37
    v_quad, d_quad = 0.5 * delta * delta, delta
    v_lin = delta * (delta - 0.5 * delta)
    value, deriv = huber(delta, delta)
    assert value == v_quad == v_lin
    assert deriv == d_quad
    _report(11, "metric identities")


def test_criterion_12_influx_rate():
    import mpmath

    mpmath.mp.dps = 40
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(200):
        k1, k2, k3 = rng.uniform(1e-5, 0.02, 3)
        ours = ki(KineticParams(k1, k2, k3, 0.0))
        ref = float(mpmath.mpf(k1) * mpmath.mpf(k3) / (mpmath.mpf(k2) + mpmath.mpf(k3)))
        worst = max(worst, abs(ours - ref) / abs(ref))
    assert worst < 1e-12
    _report(12, "influx rate arithmetic", f"worst {worst:.1e}")
