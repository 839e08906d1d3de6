"""Command-line driver: generate -> train -> evaluate -> convergence.

Every command is deterministic: rerunning with identical config and inputs
produces byte-identical output files (floats are serialized with repr, JSON
keys are sorted, and no timestamps enter any file).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
import time
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .core import ConfigError, ScaleSystem, greenshields
from .datagen import (generate_dataset, load_dataset, save_dataset,
                      scenario_from_spec, shock_scenario, sinusoidal_scenario,
                      validate_alpha_assumption)
from .evaluate import convergence_study, evaluate_reconstruction, write_convergence_csv
from .learn import TrainConfig, fit

PRESETS = {
    "waves": {
        "scenario": {"kind": "sinusoidal", "mean": 0.6, "amplitude": 0.3, "waves": 3},
        "fleet": {"N": 2000, "T": 0.1, "stride": 10},
        "training": {"eta": 1e6},
    },
    "shock": {
        "scenario": {"kind": "shock", "left": 0.4, "right": 0.9, "jump": 0.5},
        "fleet": {"N": 3000, "T": 0.1, "stride": 10},
        "training": {"eta": 1e6},
    },
}

DEFAULT_CONFIG = {
    "scenario": {},
    "fleet": {"N": None, "T": None, "stride": 10, "data_steps": None},
    "solver": {"train_steps": None, "eval_steps": 1000, "m_cells": 1000, "cfl": 0.9},
    "training": {"epochs": 5000, "eta": None, "tol_loss": 0.0,
                 "projection_tol": 1e-9},
    "units": {"rho_max": 200.0, "v_max": 120.0, "road_length": 1.0},
    "convergence": {"N_list": [500, 1000, 2000, 4000], "workers": 1},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(config_path: Path | None, preset: str | None,
                need_scenario: bool = True) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = _deep_merge(cfg, PRESETS[preset])
    if config_path is not None:
        text = Path(config_path).read_bytes()
        if str(config_path).endswith(".toml"):
            user = tomllib.loads(text.decode())
        else:
            user = json.loads(text)
        cfg = _deep_merge(cfg, user)
    validate_config(cfg, need_scenario=need_scenario)
    return cfg


def validate_config(cfg: dict, need_scenario: bool = True) -> None:
    """Cross-field consistency checks, run before any computation or file I/O.

    Train and evaluate take the scenario and fleet geometry from the dataset
    directory, so those sections are only required when generating data.
    """
    solver = cfg["solver"]
    if not (0 < solver["cfl"] <= 1):
        raise ConfigError(f"solver.cfl must lie in (0, 1], got {solver['cfl']}")
    if int(solver["m_cells"]) < 2:
        raise ConfigError("solver.m_cells must be at least 2")
    if int(solver["eval_steps"]) < 1:
        raise ConfigError("solver.eval_steps must be at least 1")
    if int(cfg["training"]["epochs"]) < 0:
        raise ConfigError("training.epochs must be nonnegative")
    if not need_scenario:
        return
    fleet = cfg["fleet"]
    if fleet["N"] is None or fleet["T"] is None:
        raise ConfigError("fleet.N and fleet.T are required (set them or use a preset)")
    if int(fleet["N"]) < 1:
        raise ConfigError(f"fleet.N must be a positive integer, got {fleet['N']}")
    if fleet["T"] <= 0:
        raise ConfigError(f"fleet.T must be positive, got {fleet['T']}")
    if int(fleet["stride"]) < 2:
        raise ConfigError(f"fleet.stride must be at least 2, got {fleet['stride']}")
    kind = cfg["scenario"].get("kind")
    if kind not in ("sinusoidal", "shock"):
        raise ConfigError(
            f"scenario.kind must be 'sinusoidal' or 'shock', got {kind!r}")


def build_scenario(cfg: dict):
    sc = dict(cfg["scenario"])
    kind = sc.pop("kind")
    scales = ScaleSystem(**cfg["units"])
    N, T = int(cfg["fleet"]["N"]), float(cfg["fleet"]["T"])
    if kind == "sinusoidal":
        return sinusoidal_scenario(N=N, T=T, scales=scales, **sc)
    return shock_scenario(N=N, T=T, scales=scales, **sc)


def build_train_config(cfg: dict) -> TrainConfig:
    tr = cfg["training"]
    return TrainConfig(epochs=int(tr["epochs"]), eta=tr["eta"],
                       steps=cfg["solver"]["train_steps"],
                       tol_loss=float(tr["tol_loss"]),
                       projection_tol=float(tr["projection_tol"]))


def cmd_generate(cfg: dict, out_dir: Path) -> int:
    scenario = build_scenario(cfg)
    ds = generate_dataset(scenario,
                          steps=cfg["fleet"]["data_steps"],
                          train_stride=int(cfg["fleet"]["stride"]))
    save_dataset(ds, out_dir)
    assumption = validate_alpha_assumption(ds.ground_truth_alpha, ds.fleet)
    print(f"dataset written to {out_dir}")
    print(f"  N = {ds.fleet.N}, train probes = {ds.n_train_probes} "
          f"(n = {ds.fleet.n} segments), test vehicles = {ds.n_test}")
    print(f"  max alpha = {assumption.max_alpha:g}, "
          f"sublinearity ratio = {assumption.ratio:.4f} "
          f"({'pass' if assumption.passed else 'FAIL'})")
    return 0


def cmd_train(data_dir: Path, cfg: dict, out_dir: Path) -> int:
    ds = load_dataset(data_dir)
    tc = build_train_config(cfg)
    v = greenshields()
    t0 = time.perf_counter()
    result = fit(ds.train_obs, ds.fleet, v, tc)
    elapsed = time.perf_counter() - t0
    out_dir.mkdir(parents=True, exist_ok=True)
    result.write_json(out_dir / "alpha.json")
    result.write_loss_csv(out_dir / "loss_history.csv")
    result.trajectory.write_csv(out_dir / "trajectories.csv")
    print(f"trained {result.epochs_run} epochs in {elapsed:.1f} s "
          f"(eta = {result.eta:g}, K = {result.steps}, restarts = {result.restarts})")
    print(f"  final loss = {result.final_loss:.6e}, best loss = {result.best_loss:.6e}")
    return 0


def cmd_evaluate(data_dir: Path, result_dir: Path, cfg: dict, out_dir: Path) -> int:
    ds = load_dataset(data_dir)
    alpha_path = Path(result_dir) / "alpha.json"
    if not alpha_path.exists():
        raise ConfigError(f"missing train result {alpha_path}")
    alpha_values = np.array(json.loads(alpha_path.read_text())["alpha"], dtype=float)
    scenario = scenario_from_spec(ds.scenario_spec)

    art = evaluate_reconstruction(ds, alpha_values, scenario,
                                  steps=int(cfg["solver"]["eval_steps"]),
                                  m_cells=int(cfg["solver"]["m_cells"]),
                                  cfl=float(cfg["solver"]["cfl"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    art.report.write_json(out_dir / "report.json")

    stride = max(1, art.field.times.size // 101)
    _write_spacetime_csv(art, out_dir / "density_spacetime.csv", stride)
    final = art.field.at_step(art.field.times.size - 1)
    with open(out_dir / "density_final.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_left", "x_right", "rho"])
        for j, val in enumerate(final.values):
            w.writerow([repr(float(final.edges[j])), repr(float(final.edges[j + 1])),
                        repr(float(val))])
    pde_stride = max(1, art.pde.cell_averages.shape[0] // 101)
    art.pde.write_csv(out_dir / "godunov_spacetime.csv", time_stride=pde_stride)
    _write_test_trajectories(art, out_dir / "test_trajectories.csv")

    r = art.report
    print(f"report written to {out_dir}")
    print(f"  test MSE = {r.mse_test:.6e} (normalized), RE = {r.re_test:.6e}")
    print(f"  train MSE = {r.mse_train:.6e}, W(rho^N(0), rho_bar) = {r.wasserstein_init:.6e}")
    print(f"  L1 vs Godunov (time avg) = {r.density_l1_vs_godunov:.6e}, "
          f"Lemma-1 violations = {r.lemma1_violations}")
    return 0


def _write_spacetime_csv(art, path: Path, time_stride: int) -> None:
    last = art.field.times.size - 1
    ks = sorted(set(range(0, art.field.times.size, time_stride)) | {last})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x_left", "x_right", "rho"])
        for k in ks:
            t = repr(float(art.field.times[k]))
            snap = art.field.at_step(k)
            for j, val in enumerate(snap.values):
                w.writerow([t, repr(float(snap.edges[j])),
                            repr(float(snap.edges[j + 1])), repr(float(val))])


def _write_test_trajectories(art, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "vehicle_index", "position"])
        for k, t in enumerate(art.test_times):
            for i, x in enumerate(art.test_history[k]):
                w.writerow([k, repr(float(t)), i, repr(float(x))])


def cmd_convergence(cfg: dict, out_dir: Path) -> int:
    scenario = build_scenario(cfg)
    conv = cfg["convergence"]
    rows = convergence_study(scenario, conv["N_list"],
                             stride=int(cfg["fleet"]["stride"]),
                             steps=int(cfg["solver"]["eval_steps"]),
                             m_cells=int(cfg["solver"]["m_cells"]),
                             cfl=float(cfg["solver"]["cfl"]),
                             workers=int(conv["workers"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_convergence_csv(rows, out_dir / "convergence.csv")
    print(f"convergence table written to {out_dir / 'convergence.csv'}")
    for r in rows:
        print(f"  N = {r.N}: W_init = {r.wasserstein_init:.6e}, "
              f"L1 vs Godunov at T = {r.l1_vs_godunov_final:.6e}, "
              f"test MSE = {r.mse_test:.6e}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="trafficrecon",
        description="Reconstruct traffic density from probe-vehicle endpoints.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="JSON or TOML config file (overrides the preset)")
        p.add_argument("--preset", choices=sorted(PRESETS), default=None,
                       help="named scenario preset")
        p.add_argument("--out", type=Path, required=True, help="output directory")

    p_gen = sub.add_parser("generate", help="generate an artificial dataset")
    add_common(p_gen)

    p_train = sub.add_parser("train", help="fit the per-segment counts")
    add_common(p_train)
    p_train.add_argument("--data", type=Path, required=True, help="dataset directory")

    p_eval = sub.add_parser("evaluate", help="evaluate a trained reconstruction")
    add_common(p_eval)
    p_eval.add_argument("--data", type=Path, required=True, help="dataset directory")
    p_eval.add_argument("--result", type=Path, required=True,
                        help="training result directory")

    p_conv = sub.add_parser("convergence", help="fleet-size convergence table")
    add_common(p_conv)

    args = parser.parse_args(argv)
    try:
        need_scenario = args.command in ("generate", "convergence")
        cfg = load_config(args.config, args.preset, need_scenario=need_scenario)
        if args.command == "generate":
            return cmd_generate(cfg, args.out)
        if args.command == "train":
            return cmd_train(args.data, cfg, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(args.data, args.result, cfg, args.out)
        return cmd_convergence(cfg, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
