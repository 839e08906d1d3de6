"""First-order Godunov finite-volume solver for the scalar conservation law.

Reference oracle only: it never enters the learning loop.  The flux is the
fundamental diagram f(rho) = rho v(rho), assumed concave, so the interface
flux of the Riemann problem has a closed form through the critical density.
Boundaries are outflow (ghost cells copy the edge values).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ConfigError, DomainError, VelocityMap


@dataclass(frozen=True)
class GodunovGrid:
    """Space-time cell averages of a Godunov solve on a uniform grid."""

    x_min: float
    x_max: float
    m_cells: int
    dt: float
    cell_averages: np.ndarray  # (steps+1, m_cells)
    mass_residual: float       # worst per-step defect of the discrete mass balance

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.m_cells

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.cell_averages.shape[0])

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + self.dx * (np.arange(self.m_cells) + 0.5)

    def at_time(self, t: float) -> np.ndarray:
        """Cell averages at the stored step nearest to t."""
        k = int(round(t / self.dt))
        k = min(max(k, 0), self.cell_averages.shape[0] - 1)
        return self.cell_averages[k]

    def _strided_steps(self, time_stride: int) -> list[int]:
        last = self.cell_averages.shape[0] - 1
        return sorted(set(range(0, last + 1, time_stride)) | {last})

    def write_csv(self, path: str | Path, time_stride: int = 1) -> None:
        centers = self.centers
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "rho"])
            for k in self._strided_steps(time_stride):
                t = repr(float(k * self.dt))
                for x, r in zip(centers, self.cell_averages[k]):
                    w.writerow([t, repr(float(x)), repr(float(r))])

    def write_grid_json(self, path: str | Path, time_stride: int = 1) -> None:
        ks = self._strided_steps(time_stride)
        payload = {
            "t": [float(k * self.dt) for k in ks],
            "x": self.centers.tolist(),
            "rho": [self.cell_averages[k].tolist() for k in ks],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True)


def godunov_flux(rho_left, rho_right, v: VelocityMap):
    """Exact Riemann interface flux for the concave flux f(rho) = rho v(rho).

    min of f over [rho_L, rho_R] when rho_L <= rho_R, max over [rho_R, rho_L]
    otherwise; concavity puts the min at an endpoint and the max either at an
    endpoint or at the critical density when it sits inside the interval.
    """
    rl = np.asarray(rho_left, dtype=float)
    rr = np.asarray(rho_right, dtype=float)
    if np.any(rl < 0) or np.any(rl > 1) or np.any(rr < 0) or np.any(rr > 1):
        raise DomainError("densities must lie in [0, 1]")
    fl = rl * v(rl)
    fr = rr * v(rr)
    rc = v.critical_density
    f_crit = rc * v(rc)
    undercompressive = np.minimum(fl, fr)
    through_crit = np.where((rr <= rc) & (rc <= rl), f_crit, np.maximum(fl, fr))
    out = np.where(rl <= rr, undercompressive, through_crit)
    if np.isscalar(rho_left) and np.isscalar(rho_right):
        return float(out)
    return out


def max_wave_speed(v: VelocityMap, samples: int = 2001) -> float:
    """Upper bound on |f'(rho)| over [0, 1], sampled densely."""
    rho = np.linspace(0.0, 1.0, samples)
    fprime = v(rho) + rho * v.derivative(rho)
    return float(np.max(np.abs(fprime)))


def godunov_solve(initial: np.ndarray, x_min: float, x_max: float, horizon: float,
                  v: VelocityMap, cfl: float = 0.9) -> GodunovGrid:
    """Conservative first-order update of an initial cell-average profile.

    rho_i^{k+1} = rho_i^k - (dt/dx)(F_{i+1/2} - F_{i-1/2}) with outflow ghost
    cells.  dt is set from the CFL number and the wave-speed bound, then
    shrunk so an integer number of steps lands exactly on the horizon.
    """
    rho0 = np.asarray(initial, dtype=float)
    if rho0.ndim != 1 or rho0.size < 2:
        raise ConfigError("initial profile must be a 1-d array of cell averages")
    if np.any(rho0 < 0) or np.any(rho0 > 1):
        raise DomainError("initial densities must lie in [0, 1]")
    if not (0 < cfl <= 1):
        raise ConfigError(f"CFL number must lie in (0, 1], got {cfl}")
    if x_max <= x_min or horizon <= 0:
        raise ConfigError("need x_max > x_min and a positive horizon")

    m = rho0.size
    dx = (x_max - x_min) / m
    speed = max_wave_speed(v)
    dt_max = cfl * dx / speed
    steps = int(np.ceil(horizon / dt_max))
    dt = horizon / steps
    if dt > cfl * dx / speed + 1e-15:
        raise ConfigError("CFL condition violated")

    field = np.empty((steps + 1, m))
    field[0] = rho0
    rho = rho0.copy()
    mass_residual = 0.0
    lam = dt / dx
    for k in range(steps):
        padded = np.concatenate(([rho[0]], rho, [rho[-1]]))
        flux = godunov_flux(padded[:-1], padded[1:], v)  # m+1 interface fluxes
        mass_before = np.sum(rho) * dx
        rho = rho - lam * (flux[1:] - flux[:-1])
        boundary_balance = dt * (flux[0] - flux[-1])
        mass_residual = max(mass_residual,
                            abs(np.sum(rho) * dx - mass_before - boundary_balance))
        field[k + 1] = rho
    return GodunovGrid(x_min=x_min, x_max=x_max, m_cells=m, dt=dt,
                       cell_averages=field, mass_residual=float(mass_residual))
