"""Command-line entry point wiring simulation, reconstruction, and metrics.

A single TOML config drives every run. Unknown keys anywhere in the config
are rejected with the offending key path. All artifacts land under the
configured output directory (or --out): ``sim/`` for simulated data,
``recon-<algorithm>[-beta<b>]/`` for reconstructions, ``fit/`` for indirect
map estimation, and ``sweep/`` for merged beta-sweep tables. Each run writes
a ``run-manifest.json`` with the fully resolved configuration, so reruns
from the same config and seed are byte-identical.

Exit codes: 0 success, 1 config/validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .core import (
    DynamicImage,
    FrameSchedule,
    ParametricMaps,
    load_dynamic_image,
    load_sinogram_series,
    save_dynamic_image,
    save_parametric_maps,
    save_sinogram_series,
)
from .fitting import HuberSpec, LMOptions, fit_image
from .kinetics import InputFunction, KineticParams, ki_values
from .metrics import (
    RunRecord,
    erode_mask,
    tradeoff_table,
    write_history_csv,
    write_metrics_csv,
)
from .projector import Geometry2D, load_or_build_system_matrix
from .recon import ALGORITHMS, EvalContext, ReconConfig, run_algorithm
from .simulate import (
    DESK_FRAME_DURATIONS_S,
    DESK_REGION_PARAMS,
    GRAY_MATTER,
    REGION_NAMES,
    build_phantom,
    save_labels_pgm,
    simulate_sinograms,
    synthesize_dynamic_image,
    true_parameter_maps,
)


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class SimulationSettings:
    target_total_counts: float
    background_fraction: float
    seed: int


@dataclass(frozen=True)
class RunConfig:
    geometry: Geometry2D
    schedule: FrameSchedule
    input_function: InputFunction
    region_params: dict
    simulation: SimulationSettings
    recon: ReconConfig
    output_dir: str
    raw: dict = field(repr=False, default_factory=dict)


def _reject_unknown(section: dict, allowed, path: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key [{path}].{key}")


def _parse_region(d: dict, path: str) -> KineticParams:
    _reject_unknown(d, {"k1_per_s", "k2_per_s", "k3_per_s", "fv"}, path)
    try:
        return KineticParams(
            float(d.get("k1_per_s", 0.0)),
            float(d.get("k2_per_s", 0.0)),
            float(d.get("k3_per_s", 0.0)),
            float(d.get("fv", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"[{path}]: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    _reject_unknown(
        raw,
        {"geometry", "schedule", "input_function", "phantom", "simulation",
         "fitting", "recon", "output"},
        "config",
    )

    g = raw.get("geometry", {})
    _reject_unknown(
        g,
        {"width", "height", "voxel_size_mm", "n_angles", "n_radial_bins", "bin_width_mm"},
        "geometry",
    )
    try:
        geometry = Geometry2D(
            int(g.get("width", 64)),
            int(g.get("height", 64)),
            float(g.get("voxel_size_mm", 2.0)),
            int(g.get("n_angles", 90)),
            int(g.get("n_radial_bins", 96)),
            float(g.get("bin_width_mm", 2.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"[geometry]: {exc}") from exc

    s = raw.get("schedule", {})
    _reject_unknown(s, {"frame_durations_s", "start_s"}, "schedule")
    durations = s.get("frame_durations_s", list(DESK_FRAME_DURATIONS_S))
    try:
        schedule = FrameSchedule.from_durations(durations, float(s.get("start_s", 0.0)))
    except ValueError as exc:
        raise ConfigError(f"[schedule]: {exc}") from exc

    i = raw.get("input_function", {})
    _reject_unknown(
        i,
        {"a1_kbq_ml_s", "a2_kbq_ml", "a3_kbq_ml", "lambda1_per_s", "lambda2_per_s",
         "lambda3_per_s", "delay_s"},
        "input_function",
    )
    try:
        cp = InputFunction(
            float(i.get("a1_kbq_ml_s", 851.1 / 60.0)),
            float(i.get("a2_kbq_ml", 21.9)),
            float(i.get("a3_kbq_ml", 20.8)),
            float(i.get("lambda1_per_s", -4.1339 / 60.0)),
            float(i.get("lambda2_per_s", -0.1191 / 60.0)),
            float(i.get("lambda3_per_s", -0.0104 / 60.0)),
            float(i.get("delay_s", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"[input_function]: {exc}") from exc

    p = raw.get("phantom", {})
    _reject_unknown(p, set(REGION_NAMES[1:]), "phantom")
    region_params = dict(DESK_REGION_PARAMS)
    for name in REGION_NAMES[1:]:
        if name in p:
            region_params[name] = _parse_region(p[name], f"phantom.{name}")

    sim = raw.get("simulation", {})
    _reject_unknown(
        sim, {"target_total_counts", "background_fraction", "seed"}, "simulation"
    )
    if "seed" not in sim:
        raise ConfigError("[simulation].seed is required")
    try:
        simulation = SimulationSettings(
            float(sim.get("target_total_counts", 5e6)),
            float(sim.get("background_fraction", 0.2)),
            int(sim["seed"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[simulation]: {exc}") from exc

    fit = raw.get("fitting", {})
    _reject_unknown(
        fit,
        {"grid_dt_s", "gamma", "delta_fraction", "lm_max_iters", "lm_lambda_init",
         "lm_lambda_up", "lm_lambda_down", "lm_ftol", "k1_max_per_s", "k2_max_per_s",
         "k3_max_per_s", "fv_max"},
        "fitting",
    )
    try:
        lm_options = LMOptions(
            max_iters=int(fit.get("lm_max_iters", 40)),
            lambda_init=float(fit.get("lm_lambda_init", 1e-3)),
            lambda_up=float(fit.get("lm_lambda_up", 10.0)),
            lambda_down=float(fit.get("lm_lambda_down", 0.1)),
            ftol=float(fit.get("lm_ftol", 1e-10)),
            lower=(0.0, 0.0, 0.0, 0.0),
            upper=(
                float(fit.get("k1_max_per_s", 0.01)),
                float(fit.get("k2_max_per_s", 0.01)),
                float(fit.get("k3_max_per_s", 0.01)),
                float(fit.get("fv_max", 1.0)),
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"[fitting]: {exc}") from exc

    r = raw.get("recon", {})
    _reject_unknown(
        r,
        {"algorithm", "n_outer_iters", "n_inner_image_updates", "beta", "sigma",
         "spatial_beta", "spatial_delta", "eps_floor_rel", "lm_iters_per_cycle",
         "checkpoints"},
        "recon",
    )
    try:
        recon = ReconConfig(
            algorithm=str(r.get("algorithm", "mlem")),
            n_outer_iters=int(r.get("n_outer_iters", 100)),
            n_inner_image_updates=int(r.get("n_inner_image_updates", 1)),
            beta=float(r.get("beta", 0.0)),
            sigma=float(r.get("sigma", 350.0)),
            gamma=float(fit.get("gamma", 0.2)),
            delta_fraction=float(fit.get("delta_fraction", 0.1)),
            spatial_beta=float(r.get("spatial_beta", 0.04)),
            spatial_delta=float(r.get("spatial_delta", 1.0)),
            eps_floor_rel=float(r.get("eps_floor_rel", 0.05)),
            lm_iters_per_cycle=int(r.get("lm_iters_per_cycle", 2)),
            grid_dt=float(fit.get("grid_dt_s", 0.1)),
            checkpoints=tuple(r.get("checkpoints", (1, 10, 25, 50, 100))),
            lm_options=lm_options,
        )
    except ValueError as exc:
        raise ConfigError(f"[recon]: {exc}") from exc

    out = raw.get("output", {})
    _reject_unknown(out, {"dir"}, "output")
    output_dir = str(out.get("dir", "runs/desk"))
    return RunConfig(geometry, schedule, cp, region_params, simulation, recon,
                     output_dir, raw)


def _resolved_config_dict(config: RunConfig) -> dict:
    return {
        "geometry": config.geometry.to_dict(),
        "schedule": config.schedule.to_dict(),
        "input_function": config.input_function.to_dict(),
        "phantom": {
            name: list(params.as_array()) for name, params in sorted(config.region_params.items())
        },
        "simulation": {
            "target_total_counts": config.simulation.target_total_counts,
            "background_fraction": config.simulation.background_fraction,
            "seed": config.simulation.seed,
        },
        "recon": {
            "algorithm": config.recon.algorithm,
            "n_outer_iters": config.recon.n_outer_iters,
            "n_inner_image_updates": config.recon.n_inner_image_updates,
            "beta": config.recon.beta,
            "sigma": config.recon.sigma,
            "gamma": config.recon.gamma,
            "delta_fraction": config.recon.delta_fraction,
            "spatial_beta": config.recon.spatial_beta,
            "spatial_delta": config.recon.spatial_delta,
            "eps_floor_rel": config.recon.eps_floor_rel,
            "lm_iters_per_cycle": config.recon.lm_iters_per_cycle,
            "grid_dt": config.recon.grid_dt,
            "checkpoints": list(config.recon.checkpoints),
            "lm": {
                "max_iters": config.recon.lm_options.max_iters,
                "lambda_init": config.recon.lm_options.lambda_init,
                "lambda_up": config.recon.lm_options.lambda_up,
                "lambda_down": config.recon.lm_options.lambda_down,
                "ftol": config.recon.lm_options.ftol,
                "lower": list(config.recon.lm_options.lower),
                "upper": list(config.recon.lm_options.upper),
            },
        },
        "output_dir": config.output_dir,
    }


def _write_manifest(run_dir, config: RunConfig, command: str, extra=None) -> None:
    manifest = {
        "toolkit_version": __version__,
        "command": command,
        "config": _resolved_config_dict(config),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(run_dir, "run-manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
        f.write("\n")


def _sim_dir(base: str) -> str:
    return os.path.join(base, "sim")


def _run_dir(base: str, algorithm: str, beta) -> str:
    name = f"recon-{algorithm}"
    if algorithm in ("pgm-pet", "pgd") and beta is not None:
        name += f"-beta{beta:g}"
    return os.path.join(base, name)


def _write_region_tacs_csv(path, phantom, cp, schedule, config) -> None:
    import csv as _csv

    from .kinetics import get_model

    model = get_model(cp, schedule, config.recon.grid_dt)
    mids = schedule.starts + 0.5 * schedule.durations
    columns = {}
    for name in REGION_NAMES[1:]:
        params = phantom.region_params.get(name)
        if params is None:
            continue
        columns[name] = model.model_frames_batch(params.as_array()[None, :])[0]
    with open(path, "w", newline="") as f:
        writer = _csv.writer(f)
        writer.writerow(["time_s"] + list(columns))
        for m, t in enumerate(mids):
            writer.writerow([repr(float(t))] + [repr(float(columns[n][m])) for n in columns])


def cmd_simulate(config_path, out=None, seed=None) -> int:
    config = load_config(config_path)
    if seed is not None:
        config = _override_seed(config, seed)
    base = out or config.output_dir
    sim_dir = _sim_dir(base)
    os.makedirs(sim_dir, exist_ok=True)

    system = load_or_build_system_matrix(config.geometry, os.path.join(base, "cache"))
    phantom = build_phantom(config.geometry.width, config.geometry.height,
                            config.region_params)
    truth = synthesize_dynamic_image(phantom, config.input_function, config.schedule,
                                     config.recon.grid_dt)
    sino = simulate_sinograms(
        truth, system, config.schedule,
        config.simulation.target_total_counts,
        config.simulation.background_fraction,
        config.simulation.seed,
    )
    save_dynamic_image(os.path.join(sim_dir, "ground_truth.dpt"), truth, config.schedule)
    save_sinogram_series(os.path.join(sim_dir, "sinograms.dpt"), sino, config.schedule)
    save_labels_pgm(os.path.join(sim_dir, "phantom_labels.pgm"), phantom)
    _write_region_tacs_csv(os.path.join(sim_dir, "region_tacs.csv"), phantom,
                           config.input_function, config.schedule, config)
    _write_manifest(sim_dir, config, "simulate")
    print(f"simulated {int(np.sum(sino.counts))} counts into {sim_dir}")
    return 0


def _override_seed(config: RunConfig, seed: int) -> RunConfig:
    from dataclasses import replace

    return replace(config, simulation=replace(config.simulation, seed=int(seed)))


def _load_sim_inputs(base, config):
    sim_dir = _sim_dir(base)
    sino_path = os.path.join(sim_dir, "sinograms.dpt")
    if not os.path.exists(sino_path):
        raise FileNotFoundError(
            f"no simulated inputs under {sim_dir}; run the simulate command first"
        )
    sino, schedule = load_sinogram_series(sino_path)
    truth = None
    truth_path = os.path.join(sim_dir, "ground_truth.dpt")
    if os.path.exists(truth_path):
        truth, _ = load_dynamic_image(truth_path)
    return sino, schedule, truth


def _eval_context(base, config, truth):
    phantom = build_phantom(config.geometry.width, config.geometry.height,
                            config.region_params)
    gm = phantom.mask(GRAY_MATTER).reshape(config.geometry.height, config.geometry.width)
    roi = erode_mask(gm).ravel()
    truth_maps = true_parameter_maps(phantom)
    return EvalContext(
        truth=truth,
        truth_maps=truth_maps,
        roi_mask=roi,
        map_metric_cycles=tuple(config.recon.checkpoints),
    )


def _snapshot_hook(run_dir, config, schedule, checkpoints):
    geom = config.geometry

    def hook(cycle, x, theta):
        if cycle not in checkpoints:
            return
        image = DynamicImage(geom.width, geom.height, np.maximum(x, 0.0))
        save_dynamic_image(os.path.join(run_dir, f"image_cycle{cycle:04d}.dpt"),
                           image, schedule)
        if theta is not None:
            full = np.column_stack([theta, ki_values(theta)])
            maps = ParametricMaps(geom.width, geom.height, full,
                                  ("K1", "k2", "k3", "fv", "Ki"))
            save_parametric_maps(
                os.path.join(run_dir, f"maps_cycle{cycle:04d}.dpt"), maps)

    return hook


def cmd_recon(config_path, algorithm=None, beta=None, out=None, checkpoints=None,
              seed=None) -> int:
    config = load_config(config_path)
    if seed is not None:
        config = _override_seed(config, seed)
    from dataclasses import replace

    recon_cfg = config.recon
    algorithm = algorithm or recon_cfg.algorithm
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}, expected one of {ALGORITHMS}")
    if beta is not None:
        recon_cfg = replace(recon_cfg, beta=float(beta))
    if checkpoints is not None:
        recon_cfg = replace(recon_cfg, checkpoints=tuple(checkpoints))
    config = replace(config, recon=recon_cfg)

    base = out or config.output_dir
    sino, schedule, truth = _load_sim_inputs(base, config)
    if schedule.n_frames != config.schedule.n_frames:
        raise ConfigError("schedule in sinogram file disagrees with the config")
    system = load_or_build_system_matrix(config.geometry, os.path.join(base, "cache"))
    eval_ctx = _eval_context(base, config, truth)

    run_dir = _run_dir(base, algorithm, recon_cfg.beta)
    os.makedirs(run_dir, exist_ok=True)
    hook = _snapshot_hook(run_dir, config, schedule, set(recon_cfg.checkpoints))
    image, maps, history = run_algorithm(
        algorithm, sino, system, schedule, config.input_function, recon_cfg,
        eval_ctx, hook=hook,
    )
    save_dynamic_image(os.path.join(run_dir, "image_final.dpt"), image, schedule)
    if maps is not None:
        full = np.column_stack([maps.values, ki_values(maps.values)])
        save_parametric_maps(
            os.path.join(run_dir, "maps_final.dpt"),
            ParametricMaps(maps.width, maps.height, full, ("K1", "k2", "k3", "fv", "Ki")),
        )
    write_history_csv(os.path.join(run_dir, "history.csv"), history)
    logged_beta = recon_cfg.beta if algorithm in ("pgm-pet", "pgd") else 0.0
    with open(os.path.join(run_dir, "history.json"), "w") as f:
        json.dump({"algorithm": algorithm, "beta": logged_beta, "entries": history},
                  f, sort_keys=True)
        f.write("\n")
    _write_manifest(run_dir, config, "recon", {"algorithm": algorithm})
    final_bias = history[-1].get("bias_db", float("nan"))
    print(f"{algorithm}: {recon_cfg.n_outer_iters} cycles, final volume bias "
          f"{final_bias:.2f} dB -> {run_dir}")
    return 0


def cmd_sweep_beta(config_path, beta_list, out=None, seed=None) -> int:
    if not beta_list:
        raise ConfigError("beta sweep needs at least one value")
    betas = [float(b) for b in beta_list]
    if len(set(betas)) != len(betas):
        raise ConfigError("duplicate beta values in sweep list")
    config = load_config(config_path)
    base = out or config.output_dir
    records = []
    for beta in betas:
        code = cmd_recon(config_path, "pgm-pet", beta, out=out, seed=seed)
        if code != 0:
            return code
        run_dir = _run_dir(base, "pgm-pet", beta)
        with open(os.path.join(run_dir, "history.json")) as f:
            payload = json.load(f)
        records.append(RunRecord("pgm-pet", beta, payload["entries"]))
    sweep_dir = os.path.join(base, "sweep")
    os.makedirs(sweep_dir, exist_ok=True)
    rows = tradeoff_table(records)
    write_metrics_csv(os.path.join(sweep_dir, "tradeoff.csv"), rows)
    _write_manifest(sweep_dir, config, "sweep-beta", {"betas": betas})
    print(f"swept beta over {betas} -> {sweep_dir}/tradeoff.csv")
    return 0


def cmd_fit(config_path, image_path, out=None, gamma=None, verbose=False) -> int:
    config = load_config(config_path)
    base = out or config.output_dir
    image, schedule = load_dynamic_image(image_path)
    if schedule.n_frames != config.schedule.n_frames or not np.allclose(
        schedule.durations, config.schedule.durations
    ):
        raise ConfigError("frame schedule in image header disagrees with the config")
    g = config.recon.gamma if gamma is None else float(gamma)
    spec = HuberSpec(config.recon.lm_options.delta_per_param(config.recon.delta_fraction),
                     g)
    maps, diagnostics = fit_image(image, schedule, config.input_function, spec,
                                  config.recon.sigma, config.recon.lm_options,
                                  dt=config.recon.grid_dt, with_diagnostics=True)
    full = np.column_stack([maps.values, ki_values(maps.values)])
    named = ParametricMaps(maps.width, maps.height, full, ("K1", "k2", "k3", "fv", "Ki"))

    fit_dir = os.path.join(base, "fit")
    os.makedirs(fit_dir, exist_ok=True)
    save_parametric_maps(os.path.join(fit_dir, "maps.dpt"), named)
    import csv as _csv

    for p, name in enumerate(named.names):
        with open(os.path.join(fit_dir, f"{name}.csv"), "w", newline="") as f:
            writer = _csv.writer(f)
            writer.writerow(["row", "col", name])
            grid = named.map_grid(p)
            for rr in range(named.height):
                for cc in range(named.width):
                    writer.writerow([rr, cc, repr(float(grid[rr, cc]))])
    if verbose:
        with open(os.path.join(fit_dir, "fit_diagnostics.csv"), "w", newline="") as f:
            writer = _csv.writer(f)
            writer.writerow(["row", "col", "iterations", "cost"])
            iters = diagnostics["iterations"].reshape(named.height, named.width)
            cost = diagnostics["cost"].reshape(named.height, named.width)
            for rr in range(named.height):
                for cc in range(named.width):
                    writer.writerow([rr, cc, int(iters[rr, cc]),
                                     repr(float(cost[rr, cc]))])
    _write_manifest(fit_dir, config, "fit", {"image": os.path.abspath(image_path),
                                             "gamma": g})
    print(f"fitted maps -> {fit_dir}")
    return 0


def cmd_metrics(config_path, out=None) -> int:
    config = load_config(config_path)
    base = out or config.output_dir
    records = []
    for entry in sorted(os.listdir(base)) if os.path.isdir(base) else []:
        hist_path = os.path.join(base, entry, "history.json")
        if os.path.exists(hist_path):
            with open(hist_path) as f:
                payload = json.load(f)
            records.append(
                RunRecord(payload["algorithm"], payload["beta"], payload["entries"])
            )
    if not records:
        raise FileNotFoundError(f"no reconstruction histories under {base}")
    rows = tradeoff_table(records)
    write_metrics_csv(os.path.join(base, "metrics.csv"), rows)
    print(f"wrote metrics for {len(records)} runs -> {base}/metrics.csv")
    return 0


def _parse_list(text, cast):
    return [cast(tok) for tok in text.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynpet",
        description="Desk-scale dynamic PET simulation and reconstruction studies",
    )
    parser.add_argument("--version", action="version", version=f"dynpet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--out", default=None, help="override the output directory")
    common.add_argument("--threads", type=int, default=None,
                        help="compute threads for batched kinetics")

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="build phantom, synthesize activity, sample sinograms")
    p_sim.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_rec = sub.add_parser("recon", parents=[common],
                           help="reconstruct simulated data with one algorithm")
    p_rec.add_argument("--algorithm", choices=ALGORITHMS, default=None)
    p_rec.add_argument("--beta", type=float, default=None)
    p_rec.add_argument("--seed", type=int, default=None)
    p_rec.add_argument("--checkpoints", type=str, default=None,
                       help="comma-separated snapshot cycles, e.g. 1,10,100")

    p_sweep = sub.add_parser("sweep-beta", parents=[common],
                             help="run pgm-pet for several beta values and merge metrics")
    p_sweep.add_argument("--betas", type=str, required=True,
                         help="comma-separated beta values")
    p_sweep.add_argument("--seed", type=int, default=None)

    p_fit = sub.add_parser("fit", parents=[common],
                           help="indirect map estimation from a dynamic image")
    p_fit.add_argument("--image", required=True, help="dynamic image .dpt path")
    p_fit.add_argument("--gamma", type=float, default=None,
                       help="override the map prior weight (0 = independent fits)")
    p_fit.add_argument("--verbose", action="store_true",
                       help="also write per-voxel fit diagnostics CSV")

    sub.add_parser("metrics", parents=[common],
                   help="merge run histories under the output dir into metrics.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None):
        try:
            import numba

            numba.set_num_threads(max(1, args.threads))
        except Exception:
            pass
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out, args.seed)
        if args.command == "recon":
            checkpoints = _parse_list(args.checkpoints, int) if args.checkpoints else None
            return cmd_recon(args.config, args.algorithm, args.beta, args.out,
                             checkpoints, args.seed)
        if args.command == "sweep-beta":
            return cmd_sweep_beta(args.config, _parse_list(args.betas, float),
                                  args.out, args.seed)
        if args.command == "fit":
            return cmd_fit(args.config, args.image, args.out, args.gamma, args.verbose)
        if args.command == "metrics":
            return cmd_metrics(args.config, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
