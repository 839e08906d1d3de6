"""Artificial dataset generation.

A ground-truth initial density profile is discretized into N+1 vehicle
positions (one car length of mass between consecutive vehicles), the full
fleet is evolved with the follow-the-leader model, and train/test probe
vehicles are sampled from the fleet by index.  Everything is deterministic:
no randomness enters the pipeline.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .core import (ConfigError, DomainError, FleetConfig, ProbeObservations,
                   ScaleSystem, VelocityMap, greenshields)
from .densityfield import PiecewiseDensity
from .microsim import TrajectoryField, ftl_full_simulate

SAMPLES_PER_UNIT_LENGTH = 100_000
MASS_BISECTION_TOL = 1e-12
DATASET_SCHEMA_VERSION = 1


class DensityProfile:
    """An initial density on a bounded support with an invertible cumulative.

    Smooth profiles are tabulated with composite trapezoid quadrature; the
    piecewise-constant constructor stores the exact piecewise-linear
    cumulative instead, so jump profiles invert without smearing.
    """

    def __init__(self, knots: np.ndarray, cum_mass: np.ndarray,
                 fn: Callable[[np.ndarray], np.ndarray]):
        self.knots = np.asarray(knots, dtype=float)
        self.cum_mass = np.asarray(cum_mass, dtype=float)
        if np.any(np.diff(self.cum_mass) < 0):
            raise DomainError("density profile must be nonnegative")
        self._fn = fn

    @classmethod
    def from_callable(cls, fn, x_left: float, x_right: float,
                      samples_per_unit: int = SAMPLES_PER_UNIT_LENGTH) -> "DensityProfile":
        if x_right <= x_left:
            raise ConfigError("profile support must have positive length")
        npts = max(int(round(samples_per_unit * (x_right - x_left))), 2) + 1
        xs = np.linspace(x_left, x_right, npts)
        ys = np.asarray(fn(xs), dtype=float)
        if np.any(ys < 0):
            raise DomainError("density profile must be nonnegative")
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs))))
        return cls(knots=xs, cum_mass=cum, fn=fn)

    @classmethod
    def piecewise_constant(cls, edges: np.ndarray, values: np.ndarray) -> "DensityProfile":
        field = PiecewiseDensity(edges=np.asarray(edges, dtype=float),
                                 values=np.asarray(values, dtype=float))
        return cls(knots=field.edges, cum_mass=field.cumulative_knots(),
                   fn=lambda x: field.at(x))

    @property
    def support(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def mass(self) -> float:
        return float(self.cum_mass[-1])

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        inside = (x_arr >= self.knots[0]) & (x_arr <= self.knots[-1])
        out = np.where(inside, self._fn(x_arr), 0.0)
        return float(out) if np.isscalar(x) else out

    def cumulative(self, x):
        return np.interp(np.asarray(x, dtype=float), self.knots, self.cum_mass)

    def invert_mass(self, target: float, tol: float = MASS_BISECTION_TOL) -> float:
        """Position x with cumulative(x) = target, by monotone bisection."""
        if target < -tol or target > self.mass + max(tol, 1e-9 * self.mass):
            raise DomainError(f"mass target {target} outside [0, {self.mass}]")
        lo, hi = self.support
        target = min(max(target, 0.0), self.mass)
        while hi - lo > 1e-300:
            mid = 0.5 * (lo + hi)
            err = self.cumulative(mid) - target
            if abs(err) <= tol:
                return mid
            if err < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-16 * max(1.0, abs(hi)):
                break
        return 0.5 * (lo + hi)

    def cell_averages(self, edges: np.ndarray) -> np.ndarray:
        cum = self.cumulative(edges)
        return np.diff(cum) / np.diff(edges)

    def to_piecewise(self, n_cells: int = 10_000) -> PiecewiseDensity:
        """Piecewise-constant representation with exactly the profile's mass."""
        lo, hi = self.support
        edges = np.linspace(lo, hi, n_cells + 1)
        return PiecewiseDensity(edges=edges, values=self.cell_averages(edges))


@dataclass(frozen=True)
class Scenario:
    """A named initial-density profile plus fleet geometry and unit scales."""

    kind: str                 # "sinusoidal" | "shock" | "custom-profile"
    parameters: dict
    profile: DensityProfile
    fleet: FleetConfig
    scales: ScaleSystem

    def describe(self) -> dict:
        return {"kind": self.kind, "parameters": dict(self.parameters),
                "N": self.fleet.N, "L": self.fleet.L, "T": self.fleet.T,
                "scales": self.scales.to_dict()}

    def with_fleet_size(self, N: int) -> "Scenario":
        fleet = FleetConfig(N=N, L=self.fleet.L, T=self.fleet.T, n=N)
        return replace(self, fleet=fleet)


def _check_profile_range(values: np.ndarray):
    if np.min(values) <= 0:
        raise ConfigError("initial density must be strictly positive on its support")
    if np.max(values) > 1 + 1e-12:
        raise ConfigError("initial density must not exceed the jam density")


def sinusoidal_scenario(N: int, T: float, mean: float = 0.6, amplitude: float = 0.3,
                        waves: int = 3, scales: ScaleSystem | None = None) -> Scenario:
    """Alternating congestion and free flow: mean + amplitude*sin(2 pi k x) on [0, 1]."""
    _check_profile_range(np.array([mean - amplitude, mean + amplitude]))
    profile = DensityProfile.from_callable(
        lambda x: mean + amplitude * np.sin(2.0 * np.pi * waves * x), 0.0, 1.0)
    fleet = FleetConfig(N=N, L=profile.mass, T=T, n=N)
    return Scenario(kind="sinusoidal",
                    parameters={"mean": mean, "amplitude": amplitude, "waves": waves},
                    profile=profile, fleet=fleet,
                    scales=scales or ScaleSystem())


def shock_scenario(N: int, T: float, left: float = 0.4, right: float = 0.9,
                   jump: float = 0.5, scales: ScaleSystem | None = None) -> Scenario:
    """Abrupt low-to-high density transition at a normalized jump position."""
    if not (0.0 < jump < 1.0):
        raise ConfigError("jump position must lie strictly inside (0, 1)")
    _check_profile_range(np.array([left, right]))
    profile = DensityProfile.piecewise_constant([0.0, jump, 1.0], [left, right])
    fleet = FleetConfig(N=N, L=profile.mass, T=T, n=N)
    return Scenario(kind="shock",
                    parameters={"left": left, "right": right, "jump": jump},
                    profile=profile, fleet=fleet,
                    scales=scales or ScaleSystem())


def custom_scenario(profile: DensityProfile, N: int, T: float,
                    scales: ScaleSystem | None = None,
                    parameters: dict | None = None) -> Scenario:
    lo, hi = profile.support
    probe = profile(np.linspace(lo, hi, 4097))
    _check_profile_range(np.asarray(probe))
    fleet = FleetConfig(N=N, L=profile.mass, T=T, n=N)
    return Scenario(kind="custom-profile", parameters=parameters or {},
                    profile=profile, fleet=fleet, scales=scales or ScaleSystem())


def scenario_from_spec(spec: dict) -> Scenario:
    """Rebuild a scenario from its ``describe()`` dictionary."""
    kind = spec["kind"]
    scales = ScaleSystem.from_dict(spec["scales"]) if "scales" in spec else ScaleSystem()
    if kind == "sinusoidal":
        return sinusoidal_scenario(N=spec["N"], T=spec["T"], scales=scales,
                                   **spec["parameters"])
    if kind == "shock":
        return shock_scenario(N=spec["N"], T=spec["T"], scales=scales,
                              **spec["parameters"])
    raise ConfigError(f"cannot rebuild scenario of kind {kind!r} from a descriptor")


def discretize_positions(profile: DensityProfile, cfg: FleetConfig) -> np.ndarray:
    """N+1 ordered positions enclosing one car length of mass L/N per gap.

    The first vehicle sits at the left edge of the support; each next
    position inverts the cumulative integral at the next multiple of L/N.
    """
    if profile.mass < cfg.L * (1.0 - 1e-9):
        raise ConfigError(
            f"profile mass {profile.mass} is below the total vehicle length {cfg.L}")
    targets = cfg.L / cfg.N * np.arange(cfg.N + 1)
    positions = np.empty(cfg.N + 1)
    positions[0] = profile.support[0]
    for i in range(1, cfg.N + 1):
        positions[i] = profile.invert_mass(float(targets[i]))
    if np.any(np.diff(positions) <= 0):
        raise DomainError("discretized positions are not strictly increasing")
    return positions


def default_data_steps(cfg: FleetConfig, v_max: float = 1.0) -> int:
    """Step count keeping dt <= (L/N) / (2 v_max), so fleet gaps stay positive."""
    return int(math.ceil(2.0 * v_max * cfg.N * cfg.T / cfg.L))


@dataclass(frozen=True)
class AlphaAssumptionReport:
    """Sublinearity check on the segment counts: max alpha should be o(N)."""

    max_alpha: float
    ratio: float        # max_alpha * log(N) / N
    threshold: float
    passed: bool

    def to_dict(self) -> dict:
        return {"max_alpha": self.max_alpha, "ratio": self.ratio,
                "threshold": self.threshold, "passed": self.passed}


def validate_alpha_assumption(alpha_values: np.ndarray, cfg: FleetConfig,
                              threshold: float = 1.0) -> AlphaAssumptionReport:
    """Report max alpha_i * log(N) / N against the sublinear-growth threshold."""
    values = np.asarray(alpha_values, dtype=float)
    max_alpha = float(np.max(values))
    ratio = max_alpha * math.log(cfg.N) / cfg.N
    return AlphaAssumptionReport(max_alpha=max_alpha, ratio=ratio,
                                 threshold=threshold, passed=ratio <= threshold)


@dataclass(frozen=True)
class Dataset:
    """Probe observations for training plus held-out test endpoints.

    ``ground_truth_alpha`` (the per-segment fleet counts) never enters
    training; it exists for post-hoc evaluation only.
    """

    train_obs: ProbeObservations
    test_init: np.ndarray
    test_final: np.ndarray
    ground_truth_alpha: np.ndarray
    fleet: FleetConfig              # with n = number of train segments
    train_indices: np.ndarray
    test_indices: np.ndarray
    stride: int
    data_steps: int
    scenario_spec: dict
    full_trajectories: TrajectoryField | None = None

    @property
    def n_train_probes(self) -> int:
        return self.train_indices.size

    @property
    def n_test(self) -> int:
        return self.test_indices.size


def generate_dataset(scenario: Scenario, steps: int | None = None,
                     train_stride: int = 10, v: VelocityMap | None = None,
                     keep_full: bool = False) -> Dataset:
    """Discretize, evolve the full fleet, and sample train/test probes.

    Train probes are every ``train_stride``-th vehicle plus the leader; test
    vehicles sit at the middle of every fourth inter-probe segment, so they
    are disjoint from the probes and lie strictly between them.
    """
    if train_stride < 2:
        raise ConfigError("train_stride must be at least 2")
    v = v or greenshields()
    cfg = scenario.fleet
    steps = steps if steps is not None else default_data_steps(cfg, v.v_max)

    positions0 = discretize_positions(scenario.profile, cfg)
    traj = ftl_full_simulate(positions0, cfg, v, steps)
    final = traj.final_positions()

    train_idx = np.arange(0, cfg.N + 1, train_stride)
    if train_idx[-1] != cfg.N:
        train_idx = np.append(train_idx, cfg.N)
    n = train_idx.size - 1

    # one test vehicle per fourth segment, at the segment's middle fleet index
    seg_ids = np.arange(0, n, 4)
    test_idx = np.array(
        [(train_idx[s] + train_idx[s + 1]) // 2 for s in seg_ids], dtype=int)
    test_idx = test_idx[(test_idx > train_idx[seg_ids]) & (test_idx < train_idx[seg_ids + 1])]

    ground_truth_alpha = np.diff(train_idx).astype(float)
    obs = ProbeObservations(x_init=positions0[train_idx], x_final=final[train_idx])
    fleet = replace(cfg, n=n)

    return Dataset(train_obs=obs,
                   test_init=positions0[test_idx],
                   test_final=final[test_idx],
                   ground_truth_alpha=ground_truth_alpha,
                   fleet=fleet,
                   train_indices=train_idx,
                   test_indices=test_idx,
                   stride=train_stride,
                   data_steps=steps,
                   scenario_spec=scenario.describe(),
                   full_trajectories=traj if keep_full else None)


def _write_positions_csv(path: Path, indices: np.ndarray, x_init: np.ndarray,
                         x_final: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x_init", "x_final"])
        for i, xi, xf in zip(indices, x_init, x_final):
            w.writerow([int(i), repr(float(xi)), repr(float(xf))])


def save_dataset(ds: Dataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_positions_csv(out / "train.csv", ds.train_indices,
                         ds.train_obs.x_init, ds.train_obs.x_final)
    _write_positions_csv(out / "test.csv", ds.test_indices, ds.test_init, ds.test_final)
    assumption = validate_alpha_assumption(ds.ground_truth_alpha, ds.fleet)
    meta = {
        "schema_version": DATASET_SCHEMA_VERSION,
        "scenario": ds.scenario_spec,
        "N": ds.fleet.N,
        "L": ds.fleet.L,
        "T": ds.fleet.T,
        "n": ds.fleet.n,
        "n_test": int(ds.n_test),
        "stride": ds.stride,
        "data_steps": ds.data_steps,
        "ground_truth_alpha": [float(a) for a in ds.ground_truth_alpha],
        "alpha_assumption": assumption.to_dict(),
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(in_dir: str | Path) -> Dataset:
    src = Path(in_dir)
    meta = json.loads((src / "meta.json").read_text())
    if meta.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise ConfigError(f"unsupported dataset schema: {meta.get('schema_version')}")

    def read_positions(path):
        idx, xi, xf = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                idx.append(int(row["index"]))
                xi.append(float(row["x_init"]))
                xf.append(float(row["x_final"]))
        return np.array(idx), np.array(xi), np.array(xf)

    train_idx, train_xi, train_xf = read_positions(src / "train.csv")
    test_idx, test_xi, test_xf = read_positions(src / "test.csv")
    fleet = FleetConfig(N=meta["N"], L=meta["L"], T=meta["T"], n=meta["n"])
    return Dataset(train_obs=ProbeObservations(x_init=train_xi, x_final=train_xf),
                   test_init=test_xi, test_final=test_xf,
                   ground_truth_alpha=np.array(meta["ground_truth_alpha"], dtype=float),
                   fleet=fleet, train_indices=train_idx, test_indices=test_idx,
                   stride=meta["stride"], data_steps=meta["data_steps"],
                   scenario_spec=meta["scenario"])
