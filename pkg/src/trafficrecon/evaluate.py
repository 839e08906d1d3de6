"""Test-phase simulation through the reconstructed density and error metrics.

Test vehicles never interact with each other: each one reads the local
density of the reconstructed field just ahead of itself and moves at the
corresponding speed.  The reconstruction is compared against held-out test
endpoints, against the ground-truth initial profile (Wasserstein), and
against a Godunov solution of the conservation law.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (ConfigError, DomainError, FleetConfig, VelocityMap,
                   greenshields)
from .datagen import (Dataset, Scenario, generate_dataset, scenario_from_spec)
from .densityfield import SpacetimeDensity, spacetime_density, wasserstein_L1
from .macrosolver import GodunovGrid, godunov_solve
from .microsim import TrajectoryField, check_maximum_principle, probe_forward_values

RE_DEFINITION = "||pred - obs||_2 / ||obs||_2"
PROFILE_COMPARISON_CELLS = 10_000


def mse(pred: np.ndarray, obs: np.ndarray) -> float:
    """Mean squared componentwise difference."""
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape:
        raise ConfigError(f"length mismatch: {pred.shape} vs {obs.shape}")
    d = pred - obs
    return float(np.mean(d * d))


def relative_error(pred: np.ndarray, obs: np.ndarray) -> float:
    """Euclidean-norm ratio ||pred - obs|| / ||obs||."""
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape:
        raise ConfigError(f"length mismatch: {pred.shape} vs {obs.shape}")
    denom = float(np.linalg.norm(obs))
    if denom == 0.0:
        raise DomainError("observation vector has zero norm")
    return float(np.linalg.norm(pred - obs) / denom)


def test_simulate(field: SpacetimeDensity, test_init: np.ndarray,
                  cfg: FleetConfig, v: VelocityMap,
                  steps: int | None = None,
                  record: bool = False):
    """Advance test vehicles through the reconstructed density field.

    Each vehicle moves at v(rho(t, x+)) by explicit Euler; vehicles are
    independent of each other.  With ``record`` the full trajectory comes
    back as a TrajectoryField-shaped array (vehicles need not stay ordered
    relative to each other, so it is returned raw).
    """
    x = np.asarray(test_init, dtype=float).copy()
    if steps is None:
        times = field.times
    else:
        times = np.linspace(field.times[0], field.times[0] + cfg.T, steps + 1)
    history = np.empty((times.size, x.size)) if record else None
    if record:
        history[0] = x
    for k in range(times.size - 1):
        snapshot = field.at_time(float(times[k]))
        speed = v(snapshot.at(x))
        x = x + speed * (times[k + 1] - times[k])
        if record:
            history[k + 1] = x
    if record:
        return x, times, history
    return x


@dataclass(frozen=True)
class GodunovComparison:
    """L1 discrepancy between a reconstructed field and a Godunov solution."""

    times: np.ndarray
    l1_profile: np.ndarray
    time_average: float
    final: float

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "l1_discrepancy"])
            for t, val in zip(self.times, self.l1_profile):
                w.writerow([repr(float(t)), repr(float(val))])


def compare_to_godunov(field: SpacetimeDensity, pde: GodunovGrid,
                       max_samples: int = 201) -> GodunovComparison:
    """Rasterize both fields on the Godunov grid and integrate |difference|.

    Sampled at (a thinning of) the Godunov time steps restricted to the
    overlap of the two time ranges.
    """
    t_lo = max(float(field.times[0]), float(pde.times[0]))
    t_hi = min(float(field.times[-1]), float(pde.times[-1]))
    if t_hi <= t_lo:
        raise ConfigError("space-time domains do not overlap in time")
    pde_times = pde.times
    mask = (pde_times >= t_lo - 1e-12) & (pde_times <= t_hi + 1e-12)
    ks = np.nonzero(mask)[0]
    if ks.size > max_samples:
        ks = ks[np.unique(np.linspace(0, ks.size - 1, max_samples).astype(int))]
    centers = pde.centers
    dx = pde.dx
    times, l1 = [], []
    for k in ks:
        t = float(pde_times[k])
        micro = field.at_time(min(max(t, float(field.times[0])), float(field.times[-1])))
        diff = np.abs(micro.at(centers) - pde.cell_averages[k])
        times.append(t)
        l1.append(float(np.sum(diff) * dx))
    l1 = np.array(l1)
    return GodunovComparison(times=np.array(times), l1_profile=l1,
                             time_average=float(np.mean(l1)), final=float(l1[-1]))


def godunov_reference(scenario: Scenario, m_cells: int = 1000, cfl: float = 0.9,
                      v: VelocityMap | None = None, margin: float = 0.05) -> GodunovGrid:
    """Godunov solve of the scenario profile, zero-extended outside its support.

    The domain spans the initial support plus the leader's travel, padded so
    no mass reaches a boundary within the horizon.
    """
    v = v or greenshields()
    lo, hi = scenario.profile.support
    span = (hi + v.v_max * scenario.fleet.T) - lo
    x_min = lo - margin * span
    x_max = hi + v.v_max * scenario.fleet.T + margin * span
    edges = np.linspace(x_min, x_max, m_cells + 1)
    inside = (edges[:-1] >= lo) & (edges[1:] <= hi)
    initial = np.zeros(m_cells)
    sub = np.nonzero(inside)[0]
    if sub.size:
        initial[sub] = scenario.profile.cell_averages(edges[sub[0]:sub[-1] + 2])
    # partially covered boundary cells keep the exact cell average as well
    for j in np.nonzero(~inside)[0]:
        a, b = max(edges[j], lo), min(edges[j + 1], hi)
        if b > a:
            initial[j] = (scenario.profile.cumulative(b)
                          - scenario.profile.cumulative(a)) / (edges[j + 1] - edges[j])
    initial = np.clip(initial, 0.0, 1.0)
    return godunov_solve(initial, x_min, x_max, scenario.fleet.T, v, cfl=cfl)


@dataclass(frozen=True)
class EvalReport:
    """All evaluation metrics of one reconstruction run.

    Positional errors are nondimensional; the physical entries are the same
    values scaled back to km via the scenario's unit system.  The relative
    error convention is recorded because conventions differ across reports.
    """

    mse_test: float
    re_test: float
    mse_train: float
    wasserstein_init: float
    alpha_error: float
    lemma1_violations: int
    density_l1_vs_godunov: float
    mse_test_physical: float
    mse_train_physical: float
    re_definition: str = RE_DEFINITION

    def to_dict(self) -> dict:
        return {
            "mse_test": self.mse_test,
            "re_test": self.re_test,
            "mse_train": self.mse_train,
            "wasserstein_init": self.wasserstein_init,
            "alpha_error": self.alpha_error,
            "lemma1_violations": self.lemma1_violations,
            "density_l1_vs_godunov": self.density_l1_vs_godunov,
            "mse_test_physical": self.mse_test_physical,
            "mse_train_physical": self.mse_train_physical,
            "re_definition": self.re_definition,
        }

    def write_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class ReconstructionArtifacts:
    """Everything cmd_evaluate writes besides the metric report."""

    report: EvalReport
    field: SpacetimeDensity
    trajectory: TrajectoryField
    pde: GodunovGrid
    comparison: GodunovComparison
    test_times: np.ndarray
    test_history: np.ndarray


def evaluate_reconstruction(ds: Dataset, alpha_values: np.ndarray,
                            scenario: Scenario, v: VelocityMap | None = None,
                            steps: int = 1000, m_cells: int = 1000,
                            cfl: float = 0.9, lemma_margin: float = 1e-3,
                            pde: GodunovGrid | None = None) -> ReconstructionArtifacts:
    """Run the reconstruction pipeline for a fitted (or ground-truth) alpha.

    Rebuilds the probe trajectories from the initial observations and alpha,
    assembles the moving-cell density, simulates the held-out test vehicles
    through it, and compares against the profile and the Godunov solution.
    """
    v = v or greenshields()
    cfg = ds.fleet
    alpha_values = np.asarray(alpha_values, dtype=float)

    traj = probe_forward_values(alpha_values, ds.train_obs, cfg, v, steps)
    field = spacetime_density(traj, alpha_values, cfg)

    pred_test, test_times, test_history = test_simulate(field, ds.test_init, cfg, v,
                                                        record=True)
    mse_test = mse(pred_test, ds.test_final)
    re_test = relative_error(pred_test, ds.test_final)
    mse_train = mse(traj.final_positions()[:cfg.n], ds.train_obs.x_final[:cfg.n])

    w_init = wasserstein_L1(field.at_step(0),
                            scenario.profile.to_piecewise(PROFILE_COMPARISON_CELLS))
    alpha_err = float(np.sum(np.abs(alpha_values - ds.ground_truth_alpha))
                      / np.sum(np.abs(ds.ground_truth_alpha)))
    lemma = check_maximum_principle(traj, alpha_values, cfg, v)

    if pde is None:
        pde = godunov_reference(scenario, m_cells=m_cells, cfl=cfl, v=v)
    comparison = compare_to_godunov(field, pde)

    scale = scenario.scales.road_length
    report = EvalReport(
        mse_test=mse_test,
        re_test=re_test,
        mse_train=mse_train,
        wasserstein_init=w_init,
        alpha_error=alpha_err,
        lemma1_violations=lemma.violations(lemma_margin),
        density_l1_vs_godunov=comparison.time_average,
        mse_test_physical=mse_test * scale * scale,
        mse_train_physical=mse_train * scale * scale,
    )
    return ReconstructionArtifacts(report=report, field=field, trajectory=traj,
                                   pde=pde, comparison=comparison,
                                   test_times=test_times, test_history=test_history)


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    wasserstein_init: float
    l1_vs_godunov_final: float
    mse_test: float


def _convergence_row(scenario_spec: dict, N: int, stride: int, steps: int,
                     m_cells: int, cfl: float) -> ConvergenceRow:
    scenario = scenario_from_spec(scenario_spec).with_fleet_size(N)
    ds = generate_dataset(scenario, train_stride=stride)
    art = evaluate_reconstruction(ds, ds.ground_truth_alpha, scenario,
                                  steps=steps, m_cells=m_cells, cfl=cfl)
    return ConvergenceRow(N=N,
                          wasserstein_init=art.report.wasserstein_init,
                          l1_vs_godunov_final=art.comparison.final,
                          mse_test=art.report.mse_test)


def convergence_study(scenario: Scenario, N_list, stride: int = 10,
                      steps: int = 1000, m_cells: int = 1000, cfl: float = 0.9,
                      workers: int = 1) -> list[ConvergenceRow]:
    """Tabulate (N, W at t=0, final L1 vs Godunov, test MSE) over fleet sizes.

    Uses the ground-truth per-segment counts, so the table isolates the
    discretization from the optimizer.  Rows may be computed in parallel
    worker processes; results keep the order of ``N_list``.
    """
    N_list = [int(N) for N in N_list]
    spec = scenario.describe()
    args = [(spec, N, stride, steps, m_cells, cfl) for N in N_list]
    if workers > 1 and scenario.kind in ("sinusoidal", "shock"):
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_convergence_row, *zip(*args)))
    else:
        rows = [_convergence_row(*a) for a in args]
    return rows


def write_convergence_csv(rows, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "wasserstein_init", "l1_vs_godunov_final", "mse_test"])
        for r in rows:
            w.writerow([r.N, repr(float(r.wasserstein_init)),
                        repr(float(r.l1_vs_godunov_final)), repr(float(r.mse_test))])
