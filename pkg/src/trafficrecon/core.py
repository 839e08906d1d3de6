"""Domain types, unit conventions and velocity maps shared by all modules.

Everything downstream works in nondimensional units: densities in units of
the jam density (rho in [0, 1]), speeds in units of the free-flow speed
(v in [0, 1]), positions in units of the road length, and times in units of
road_length / v_max.  ``ScaleSystem`` converts to and from physical units at
the I/O boundary only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class TrafficReconError(Exception):
    """Base class for all library errors."""


class DomainError(TrafficReconError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class InfeasibleError(TrafficReconError, ValueError):
    """The constraint set on the per-segment counts is empty."""


class StepSizeError(TrafficReconError, RuntimeError):
    """A gap collapsed during integration; rerun with more Euler steps."""


class ConfigError(TrafficReconError, ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class ScaleSystem:
    """Physical scales: jam density (veh/km), free-flow speed (km/h), road length (km)."""

    rho_max: float = 200.0
    v_max: float = 120.0
    road_length: float = 1.0

    def __post_init__(self):
        if self.rho_max <= 0 or self.v_max <= 0 or self.road_length <= 0:
            raise ConfigError("rho_max, v_max and road_length must all be positive")

    @property
    def time_scale(self) -> float:
        """Physical duration (hours) of one nondimensional time unit."""
        return self.road_length / self.v_max

    def position_to_physical(self, x):
        return np.asarray(x, dtype=float) * self.road_length

    def position_from_physical(self, x):
        return np.asarray(x, dtype=float) / self.road_length

    def density_to_physical(self, rho):
        return np.asarray(rho, dtype=float) * self.rho_max

    def density_from_physical(self, rho):
        return np.asarray(rho, dtype=float) / self.rho_max

    def speed_to_physical(self, v):
        return np.asarray(v, dtype=float) * self.v_max

    def speed_from_physical(self, v):
        return np.asarray(v, dtype=float) / self.v_max

    def time_to_physical(self, t):
        return np.asarray(t, dtype=float) * self.time_scale

    def time_from_physical(self, t):
        return np.asarray(t, dtype=float) / self.time_scale

    def to_dict(self) -> dict:
        return {"rho_max": self.rho_max, "v_max": self.v_max,
                "road_length": self.road_length}

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleSystem":
        return cls(**d)


def _argmax_concave(f: Callable[[float], float], lo: float, hi: float,
                    tol: float = 1e-12) -> float:
    """Golden-section maximizer for a concave function on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


class VelocityMap:
    """A decreasing speed-density law v(rho) with derivative access.

    ``speed_fn`` and ``derivative_fn`` must accept and return numpy arrays.
    The spacing form V(z) = v(1/z) and its derivative are derived from them;
    V is what the probe dynamics and its adjoint consume.
    """

    def __init__(self, speed_fn, derivative_fn, v_max: float = 1.0,
                 critical_density: float | None = None):
        self._speed_fn = speed_fn
        self._derivative_fn = derivative_fn
        self.v_max = float(v_max)
        if critical_density is None:
            # argmax of the flux rho*v(rho); flux is assumed concave on [0, 1]
            critical_density = _argmax_concave(
                lambda r: r * float(speed_fn(np.asarray(r))), 0.0, 1.0)
        self.critical_density = float(critical_density)

    def __call__(self, rho):
        rho_arr = np.asarray(rho, dtype=float)
        if np.any(rho_arr < 0):
            raise DomainError("density must be nonnegative")
        out = self._speed_fn(rho_arr)
        return float(out) if np.isscalar(rho) else out

    def derivative(self, rho):
        rho_arr = np.asarray(rho, dtype=float)
        if np.any(rho_arr < 0):
            raise DomainError("density must be nonnegative")
        out = self._derivative_fn(rho_arr)
        return float(out) if np.isscalar(rho) else out

    def spacing_velocity(self, z):
        """V(z) = v(1/z), the speed as a function of the normalized gap."""
        z_arr = np.asarray(z, dtype=float)
        if np.any(z_arr <= 0):
            raise DomainError("normalized gap must be positive (vanishing gap)")
        out = self._speed_fn(1.0 / z_arr)
        return float(out) if np.isscalar(z) else out

    def spacing_derivative(self, z):
        """V'(z) = -v'(1/z) / z**2."""
        z_arr = np.asarray(z, dtype=float)
        if np.any(z_arr <= 0):
            raise DomainError("normalized gap must be positive (vanishing gap)")
        out = -self._derivative_fn(1.0 / z_arr) / (z_arr * z_arr)
        return float(out) if np.isscalar(z) else out

    def flux(self, rho):
        """Fundamental diagram f(rho) = rho * v(rho)."""
        return np.asarray(rho, dtype=float) * self(rho)


def greenshields() -> VelocityMap:
    """The linear speed-density law v(rho) = max(1 - rho, 0), nondimensional.

    The derivative at the kink rho = 1 is taken as the left limit -1; for
    rho > 1 it is 0.  In-scope trajectories keep rho <= 1, so the choice only
    affects pathological inputs.
    """
    def speed(rho):
        return np.maximum(1.0 - rho, 0.0)

    def derivative(rho):
        return np.where(rho <= 1.0, -1.0, 0.0)

    return VelocityMap(speed, derivative, v_max=1.0, critical_density=0.5)


@dataclass(frozen=True)
class FleetConfig:
    """Fleet geometry: N vehicles behind a leader, total bumper-to-bumper length L.

    ``n`` is the number of probe followers (n + 1 probes including the leader);
    for the full fleet n == N.  All quantities nondimensional.
    """

    N: int
    L: float
    T: float
    n: int

    def __post_init__(self):
        if self.N < 1 or int(self.N) != self.N:
            raise ConfigError("N must be a positive integer")
        if self.L <= 0:
            raise ConfigError("total vehicle length L must be positive")
        if self.T <= 0:
            raise ConfigError("time horizon T must be positive")
        if not (1 <= self.n <= self.N):
            raise ConfigError("probe follower count n must satisfy 1 <= n <= N")

    @property
    def car_length(self) -> float:
        return self.L / self.N


@dataclass(frozen=True)
class ProbeObservations:
    """Initial and final positions of the n+1 probe vehicles (leader last)."""

    x_init: np.ndarray
    x_final: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.x_init, dtype=float)
        xf = np.asarray(self.x_final, dtype=float)
        object.__setattr__(self, "x_init", xi)
        object.__setattr__(self, "x_final", xf)
        if xi.ndim != 1 or xf.ndim != 1 or xi.shape != xf.shape or xi.size < 2:
            raise ConfigError("x_init and x_final must be 1-d arrays of equal length >= 2")
        if np.any(np.diff(xi) <= 0) or np.any(np.diff(xf) <= 0):
            raise DomainError("probe positions must be strictly increasing")

    @property
    def n(self) -> int:
        """Number of probe followers (probes minus the leader)."""
        return self.x_init.size - 1

    def check_leader_motion(self, T: float, v_max: float = 1.0,
                            tol: float = 1e-9) -> None:
        """The leader travels at v_max, so its displacement must equal v_max*T."""
        expected = self.x_init[-1] + v_max * T
        if abs(self.x_final[-1] - expected) > tol * max(1.0, abs(expected)):
            raise DomainError(
                f"leader final position {self.x_final[-1]} != x_init[-1] + v_max*T "
                f"= {expected}; observations inconsistent with constant-speed leader")


@dataclass(frozen=True)
class AlphaBounds:
    """Box bounds [1, z_bar_i] and the sum target for the per-segment counts."""

    lower: np.ndarray
    upper: np.ndarray
    total: float

    @property
    def feasible(self) -> bool:
        return bool(np.sum(self.lower) <= self.total <= np.sum(self.upper))

    def require_feasible(self) -> "AlphaBounds":
        if not self.feasible:
            raise InfeasibleError(
                f"no alpha satisfies sum = {self.total} with bounds "
                f"[sum lower = {np.sum(self.lower)}, sum upper = {np.sum(self.upper)}]")
        return self


@dataclass(frozen=True)
class AlphaVector:
    """Per-segment vehicle counts alpha with their box bounds and sum target."""

    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    total: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if not (vals.shape == lo.shape == hi.shape) or vals.ndim != 1 or vals.size < 1:
            raise ConfigError("values and bounds must be 1-d arrays of equal length")

    @property
    def n(self) -> int:
        return self.values.size

    def bound_violation(self) -> float:
        """Largest absolute excursion outside [lower, upper]."""
        below = np.max(self.lower - self.values, initial=0.0)
        above = np.max(self.values - self.upper, initial=0.0)
        return float(max(below, above, 0.0))

    def sum_violation(self) -> float:
        """|sum(values) - total|, absolute."""
        return float(abs(np.sum(self.values) - self.total))

    def require_feasible(self, tol: float = 1e-9) -> "AlphaVector":
        if self.bound_violation() > tol or self.sum_violation() > tol * max(1.0, self.total):
            raise InfeasibleError(
                f"alpha infeasible: bound violation {self.bound_violation():.3e}, "
                f"sum violation {self.sum_violation():.3e} (tol {tol:.1e})")
        return self

    @classmethod
    def from_bounds(cls, values: np.ndarray, bounds: AlphaBounds) -> "AlphaVector":
        return cls(values=np.asarray(values, dtype=float), lower=bounds.lower,
                   upper=bounds.upper, total=bounds.total)


def make_alpha_bounds(obs: ProbeObservations, cfg: FleetConfig) -> AlphaBounds:
    """Upper bounds z_bar_i = min of the initial- and final-gap capacities.

    A segment holding k cars needs at least k*L/N of road at both endpoints
    of the horizon, so z_bar_i = min(N*gap_init/L, N*gap_final/L).  The result
    carries a ``feasible`` flag; call ``require_feasible`` to raise instead.
    """
    if obs.n != cfg.n:
        raise ConfigError(f"observations have n = {obs.n} followers, config says {cfg.n}")
    gaps_init = np.diff(obs.x_init)
    gaps_final = np.diff(obs.x_final)
    z_bar = cfg.N * np.minimum(gaps_init, gaps_final) / cfg.L
    return AlphaBounds(lower=np.ones(cfg.n), upper=z_bar, total=float(cfg.N))
