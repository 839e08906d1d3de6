"""Piecewise-constant Eulerian density fields and the W_{L,1} distance.

The reconstructed density is a step function on the moving probe cells:
cell i spans [x_i(t), x_{i+1}(t)) and carries alpha_i L / (N gap).  The
distance between two such fields is the L1 norm of the difference of their
cumulative mass functions, which is exact for piecewise-linear cumulatives.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import AlphaVector, ConfigError, DomainError, FleetConfig
from .microsim import TrajectoryField

MASS_MISMATCH_RTOL = 1e-9


@dataclass(frozen=True)
class PiecewiseDensity:
    """Step-function density: m+1 ordered cell edges, m nonnegative values."""

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        val = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "values", val)
        if e.ndim != 1 or val.ndim != 1 or e.size != val.size + 1 or val.size < 1:
            raise ConfigError("need m+1 edges and m values")
        if np.any(np.diff(e) <= 0):
            raise DomainError("edges must be strictly increasing")
        if np.any(val < 0):
            raise DomainError("density values must be nonnegative")

    @property
    def mass(self) -> float:
        return float(np.sum(self.values * np.diff(self.edges)))

    def cumulative_knots(self) -> np.ndarray:
        """Cumulative mass at each edge; the cumulative is linear in between."""
        return np.concatenate(([0.0], np.cumsum(self.values * np.diff(self.edges))))

    def cumulative_at(self, x) -> np.ndarray:
        """F(x) = integral of the density over (-inf, x]; constant outside the support."""
        return np.interp(np.asarray(x, dtype=float), self.edges, self.cumulative_knots())

    def at(self, x, right: bool = True):
        """Point value with the half-open cell convention.

        With ``right`` (the default) an x lying exactly on an interior edge
        reads the cell to its right, matching rho(t, x+).  Outside the edges
        the density is zero: free road ahead of the leader and behind the
        last probe.
        """
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        side = "right" if right else "left"
        idx = np.searchsorted(self.edges, x_arr, side=side) - 1
        out = np.zeros(x_arr.shape)
        inside = (idx >= 0) & (idx < self.values.size)
        out[inside] = self.values[idx[inside]]
        return float(out[0]) if np.isscalar(x) or np.asarray(x).ndim == 0 else out


def density_at(field: PiecewiseDensity, x, right: bool = True):
    """Right-limit (or left-limit) lookup in a piecewise density."""
    return field.at(x, right=right)


def discrete_density(traj: TrajectoryField, alpha, cfg: FleetConfig,
                     step: int) -> PiecewiseDensity:
    """Density alpha_i L / (N gap_i) on the probe cells of one stored step."""
    values_alpha = alpha.values if isinstance(alpha, AlphaVector) else np.asarray(alpha, dtype=float)
    if values_alpha.size != traj.n_vehicles - 1:
        raise ConfigError("alpha length must match the trajectory's gap count")
    if not (0 <= step <= traj.n_steps):
        raise ConfigError(f"step {step} outside stored range 0..{traj.n_steps}")
    edges = traj.positions[step]
    rho = values_alpha * cfg.L / (cfg.N * np.diff(edges))
    return PiecewiseDensity(edges=edges.copy(), values=rho)


@dataclass(frozen=True)
class SpacetimeDensity:
    """One PiecewiseDensity per stored Euler step, with linear edge interpolation.

    Queries at intermediate times interpolate the probe positions (the cell
    edges) linearly between the bracketing steps and recompute the cell
    values from the interpolated gaps, so mass is conserved exactly.
    """

    times: np.ndarray
    traj: TrajectoryField
    alpha_values: np.ndarray
    cfg: FleetConfig

    def __iter__(self):
        for k, t in enumerate(self.times):
            yield float(t), self.at_step(k)

    def at_step(self, k: int) -> PiecewiseDensity:
        return discrete_density(self.traj, self.alpha_values, self.cfg, k)

    def edges_at_time(self, t: float) -> np.ndarray:
        times = self.times
        if not (times[0] <= t <= times[-1]):
            raise DomainError(f"time {t} outside stored range [{times[0]}, {times[-1]}]")
        k = int(np.searchsorted(times, t, side="right") - 1)
        if k >= times.size - 1:
            return self.traj.positions[-1].copy()
        w = (t - times[k]) / (times[k + 1] - times[k])
        return (1.0 - w) * self.traj.positions[k] + w * self.traj.positions[k + 1]

    def at_time(self, t: float) -> PiecewiseDensity:
        edges = self.edges_at_time(t)
        rho = self.alpha_values * self.cfg.L / (self.cfg.N * np.diff(edges))
        return PiecewiseDensity(edges=edges, values=rho)

    def density_at(self, t: float, x, right: bool = True):
        return self.at_time(t).at(x, right=right)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x_left", "x_right", "rho"])
            for t, field in self:
                for j, val in enumerate(field.values):
                    w.writerow([repr(float(t)), repr(float(field.edges[j])),
                                repr(float(field.edges[j + 1])), repr(float(val))])

    def write_grid_json(self, path: str | Path, nx: int = 400,
                        nt: int | None = None) -> None:
        """Rasterize onto a uniform (t, x) grid for heatmap rendering."""
        t_samples = self.times if nt is None else np.linspace(self.times[0], self.times[-1], nt)
        x_lo = float(self.traj.positions[0, 0])
        x_hi = float(self.traj.positions[-1, -1])
        xs = np.linspace(x_lo, x_hi, nx)
        grid = [self.at_time(float(t)).at(xs).tolist() for t in t_samples]
        payload = {"t": [float(t) for t in t_samples], "x": xs.tolist(), "rho": grid}
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True)


def spacetime_density(traj: TrajectoryField, alpha, cfg: FleetConfig) -> SpacetimeDensity:
    """Assemble the moving-cell density over all stored Euler steps."""
    values_alpha = alpha.values if isinstance(alpha, AlphaVector) else np.asarray(alpha, dtype=float)
    if values_alpha.size != traj.n_vehicles - 1:
        raise ConfigError("alpha length must match the trajectory's gap count")
    return SpacetimeDensity(times=traj.times, traj=traj,
                            alpha_values=values_alpha, cfg=cfg)


def wasserstein_L1(f: PiecewiseDensity, g: PiecewiseDensity) -> float:
    """L1 norm of the difference of the cumulative mass functions of f and g.

    Both cumulatives are piecewise linear, so the integral is evaluated in
    closed form on the merged edge partition, inserting the root wherever the
    difference changes sign.  Fields of unequal mass are infinitely far apart
    (the tail difference is constant); that case returns ``inf``.
    """
    mass_f, mass_g = f.mass, g.mass
    scale = max(mass_f, mass_g, np.finfo(float).tiny)
    if abs(mass_f - mass_g) > MASS_MISMATCH_RTOL * scale:
        return math.inf

    knots = np.union1d(f.edges, g.edges)
    d = f.cumulative_at(knots) - g.cumulative_at(knots)
    a, b = d[:-1], d[1:]
    width = np.diff(knots)

    same_sign = a * b >= 0
    total = np.sum(np.where(same_sign, 0.5 * np.abs(a + b) * width, 0.0))
    # sign change: split the segment at the root of the linear difference
    if not np.all(same_sign):
        a_c, b_c, w_c = a[~same_sign], b[~same_sign], width[~same_sign]
        r = a_c / (a_c - b_c)  # root position as a fraction of the width
        total += np.sum(0.5 * (np.abs(a_c) * r + np.abs(b_c) * (1.0 - r)) * w_c)
    return float(total)
