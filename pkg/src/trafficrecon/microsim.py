"""Microscopic follow-the-leader simulation.

Two integrators share the same explicit Euler scheme: the full-fleet model
(ground truth for data generation) and the probe system parametrized by the
per-segment counts alpha, written in the interaction-matrix form so the same
coefficients drive both the forward unroll and its adjoint.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (AlphaVector, ConfigError, DomainError, FleetConfig,
                   ProbeObservations, StepSizeError, VelocityMap)

# A step is rejected when a gap falls below this fraction of the bumper-to-
# bumper minimum alpha_i*L/N; the continuous dynamics never cross it.
GAP_COLLAPSE_TOL = 1e-6


@dataclass(frozen=True)
class TrajectoryField:
    """Positions of m vehicles at K+1 Euler time points (the adjoint tape)."""

    times: np.ndarray      # (K+1,)
    positions: np.ndarray  # (K+1, m)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", x)
        if t.ndim != 1 or x.ndim != 2 or x.shape[0] != t.size:
            raise ConfigError("positions must be (K+1, m) with K+1 time points")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("times must be strictly increasing")
        if np.any(np.diff(x, axis=1) <= 0):
            raise DomainError("vehicle ordering violated in trajectory")

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def n_vehicles(self) -> int:
        return self.positions.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def final_positions(self) -> np.ndarray:
        return self.positions[-1]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "time", "vehicle_index", "position"])
            for k, t in enumerate(self.times):
                for i, x in enumerate(self.positions[k]):
                    w.writerow([k, repr(float(t)), i, repr(float(x))])


@dataclass(frozen=True)
class ParametrizedSystem:
    """Coefficients of the probe dynamics dx/dt = V(W x + b(t)).

    Row i of W carries -N/(alpha_i L) on the diagonal and +N/(alpha_i L) on
    the superdiagonal (for i = 0..n-2); the bias has a single nonzero last
    entry N/(alpha_{n-1} L) * (v_max t + leader_start) carrying the leader's
    influence.  ``rate`` stores the shared per-row factor N/(alpha_i L).
    """

    rate: np.ndarray        # (n,)  N / (alpha_i * L)
    leader_start: float     # x_bar_n
    v_max: float

    @classmethod
    def from_alpha(cls, alpha_values: np.ndarray, obs: ProbeObservations,
                   cfg: FleetConfig, v_max: float = 1.0) -> "ParametrizedSystem":
        alpha_values = np.asarray(alpha_values, dtype=float)
        if alpha_values.size != obs.n:
            raise ConfigError("alpha length must equal the follower count n")
        if np.any(alpha_values <= 0):
            raise DomainError("alpha entries must be positive")
        rate = cfg.N / (alpha_values * cfg.L)
        return cls(rate=rate, leader_start=float(obs.x_init[-1]), v_max=v_max)

    @property
    def n(self) -> int:
        return self.rate.size

    def leader_position(self, t: float) -> float:
        return self.leader_start + self.v_max * t

    def W_matrix(self) -> np.ndarray:
        """Dense n x n interaction matrix (for verification; the solver never builds it)."""
        n = self.n
        W = np.zeros((n, n))
        W[np.arange(n), np.arange(n)] = -self.rate
        W[np.arange(n - 1), np.arange(1, n)] = self.rate[:-1]
        return W

    def bias(self, t: float) -> np.ndarray:
        b = np.zeros(self.n)
        b[-1] = self.rate[-1] * self.leader_position(t)
        return b

    def gap_quotients(self, x: np.ndarray, t: float) -> np.ndarray:
        """(W x + b(t))_i = N (x_{i+1} - x_i) / (alpha_i L), leader gap in the last row."""
        ahead = np.empty_like(x)
        ahead[:-1] = x[1:]
        ahead[-1] = self.leader_position(t)
        return self.rate * (ahead - x)


def _euler_times(T: float, steps: int) -> np.ndarray:
    if steps < 1 or int(steps) != steps:
        raise ConfigError("step count must be a positive integer")
    return np.linspace(0.0, T, steps + 1)


def ftl_full_simulate(initial_positions: np.ndarray, cfg: FleetConfig,
                      v: VelocityMap, steps: int) -> TrajectoryField:
    """Explicit-Euler trajectories of the full fleet of N+1 vehicles.

    Follower i moves at v(L / (N (x_{i+1} - x_i))); the leader advances at
    v_max.  Raises StepSizeError when any gap falls below L/N (up to
    tolerance), which indicates the step count is too small.
    """
    x0 = np.asarray(initial_positions, dtype=float)
    if x0.ndim != 1 or x0.size != cfg.N + 1:
        raise ConfigError(f"expected {cfg.N + 1} initial positions, got {x0.size}")
    if np.any(np.diff(x0) <= 0):
        raise DomainError("initial positions must be strictly increasing")

    times = _euler_times(cfg.T, steps)
    dt = times[1] - times[0]
    l_car = cfg.car_length
    min_gap = l_car * (1.0 - GAP_COLLAPSE_TOL)

    def check_gaps(x, k):
        if np.any(np.diff(x) < min_gap):
            raise StepSizeError(
                f"gap collapsed below L/N at step {k}; rerun with more than "
                f"{steps} Euler steps")

    positions = np.empty((steps + 1, cfg.N + 1))
    positions[0] = x0
    x = x0.copy()
    check_gaps(x, 0)
    for k in range(steps):
        rho = l_car / np.diff(x)
        x[:-1] += v(rho) * dt
        x[-1] = x0[-1] + v.v_max * times[k + 1]
        check_gaps(x, k + 1)
        positions[k + 1] = x
    return TrajectoryField(times=times, positions=positions)


def probe_forward_values(alpha_values: np.ndarray, obs: ProbeObservations,
                         cfg: FleetConfig, v: VelocityMap,
                         steps: int) -> TrajectoryField:
    """Probe-system unroll for raw alpha values (no feasibility check).

    x_{k+1} = x_k + V(W x_k + b(t_k)) dt for the n followers; the leader row
    is appended analytically as x_bar_n + v_max t_k.
    """
    system = ParametrizedSystem.from_alpha(alpha_values, obs, cfg, v_max=v.v_max)
    times = _euler_times(cfg.T, steps)
    dt = times[1] - times[0]
    n = system.n

    def check_quotients(z, k):
        if np.any(z < 1.0 - GAP_COLLAPSE_TOL):
            raise StepSizeError(
                f"probe gap collapsed below alpha_i*L/N at step {k}; rerun with "
                f"more than {steps} Euler steps")

    positions = np.empty((steps + 1, n + 1))
    positions[0] = obs.x_init
    x = obs.x_init[:-1].copy()
    for k in range(steps):
        z = system.gap_quotients(x, times[k])
        check_quotients(z, k)
        x = x + v.spacing_velocity(z) * dt
        positions[k + 1, :-1] = x
        positions[k + 1, -1] = system.leader_position(times[k + 1])
    check_quotients(system.gap_quotients(x, times[-1]), steps)
    return TrajectoryField(times=times, positions=positions)


def probe_forward(alpha: AlphaVector, obs: ProbeObservations, cfg: FleetConfig,
                  v: VelocityMap, steps: int,
                  feasibility_tol: float = 1e-9) -> TrajectoryField:
    """Feasibility-checked probe-system unroll (see probe_forward_values)."""
    alpha.require_feasible(feasibility_tol)
    return probe_forward_values(alpha.values, obs, cfg, v, steps)


@dataclass(frozen=True)
class MaxPrincipleReport:
    """Per-step margins of the two-sided gap bounds along a trajectory.

    ``lower_margin[k]`` is min_i (gap_i(t_k) - alpha_i L/(N M)) and
    ``upper_margin[k]`` is min_i (span_0 + (v_max - v(M)) t_k - gap_i(t_k));
    a negative margin is a violation.  M is the maximum discrete density at
    the initial time.
    """

    times: np.ndarray
    lower_margin: np.ndarray
    upper_margin: np.ndarray
    max_initial_density: float

    def per_step_ok(self, tol: float = 0.0) -> np.ndarray:
        return (self.lower_margin >= -tol) & (self.upper_margin >= -tol)

    def violations(self, tol: float = 0.0) -> int:
        return int(np.sum(~self.per_step_ok(tol)))

    @property
    def worst_lower_margin(self) -> float:
        return float(np.min(self.lower_margin))

    @property
    def worst_upper_margin(self) -> float:
        return float(np.min(self.upper_margin))


def check_maximum_principle(traj: TrajectoryField, alpha, cfg: FleetConfig,
                            v: VelocityMap) -> MaxPrincipleReport:
    """Verify the two-sided gap bounds at every stored step.

    ``alpha`` is an AlphaVector or a plain array of per-gap counts (pass all
    ones for a full-fleet trajectory).  Violations are reported with their
    margins, never raised: the Euler discretization may overshoot the
    continuous-time bounds by O(dt).
    """
    values = alpha.values if isinstance(alpha, AlphaVector) else np.asarray(alpha, dtype=float)
    if values.size != traj.n_vehicles - 1:
        raise ConfigError("alpha length must match the trajectory's gap count")

    gaps0 = np.diff(traj.positions[0])
    density0 = values * cfg.L / (cfg.N * gaps0)
    M = float(np.max(density0))
    lower = values * cfg.L / (cfg.N * M)
    span0 = float(traj.positions[0, -1] - traj.positions[0, 0])
    growth = v.v_max - v(M)

    gaps = np.diff(traj.positions, axis=1)           # (K+1, m-1)
    lower_margin = np.min(gaps - lower, axis=1)
    upper = span0 + growth * traj.times
    upper_margin = np.min(upper[:, None] - gaps, axis=1)
    return MaxPrincipleReport(times=traj.times, lower_margin=lower_margin,
                              upper_margin=upper_margin, max_initial_density=M)
