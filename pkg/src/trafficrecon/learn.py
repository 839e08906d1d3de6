"""Fitting the per-segment counts by projected gradient descent.

The forward model is the unrolled Euler discretization of the probe dynamics
(one repeated residual block per time step).  The gradient of the final
position loss with respect to alpha is computed exactly for that discrete
map by reverse accumulation through the stored trajectory, and every update
is projected back onto the box-and-sum constraint set, which is what keeps
the total vehicle count conserved at every epoch.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (AlphaBounds, AlphaVector, ConfigError, FleetConfig,
                   InfeasibleError, ProbeObservations, StepSizeError,
                   VelocityMap, make_alpha_bounds)
from .microsim import TrajectoryField, probe_forward_values

PROJECTION_SUM_RTOL = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the projected-gradient loop.

    ``eta`` and ``steps`` default at fit time to 1e-2 * N / n and
    round(1000 * T): the gradient entries scale like 1/alpha, and dt = 1e-3
    resolves both paper horizons.  Both are echoed into every result file.
    """

    epochs: int = 5000
    eta: float | None = None
    steps: int | None = None
    tol_loss: float = 0.0
    projection_tol: float = 1e-9

    def __post_init__(self):
        if self.epochs < 0 or int(self.epochs) != self.epochs:
            raise ConfigError("epochs must be a nonnegative integer")
        if self.eta is not None and self.eta <= 0:
            raise ConfigError("learning rate eta must be positive")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("Euler step count must be >= 1")

    def resolved_eta(self, cfg: FleetConfig) -> float:
        return self.eta if self.eta is not None else 1e-2 * cfg.N / cfg.n

    def resolved_steps(self, cfg: FleetConfig) -> int:
        return self.steps if self.steps is not None else max(1, round(1000 * cfg.T))


@dataclass(frozen=True)
class TrainResult:
    """Fitted alpha with the loss/gradient trace and feasibility bookkeeping."""

    alpha_star: AlphaVector
    loss_history: np.ndarray            # loss of iterate e, length epochs_run + 1
    gradient_norm_history: np.ndarray   # projected-gradient norms, length epochs_run
    trajectory: TrajectoryField         # forward pass of alpha_star
    best_loss_history: np.ndarray       # running minimum of loss_history
    eta: float
    steps: int
    epochs_run: int
    restarts: int
    max_sum_violation: float            # |sum(alpha) - N| worst case over epochs
    max_bound_violation: float          # worst box-bound excursion over epochs
    stalled: bool = False               # eta halved below float resolution

    @property
    def best_loss(self) -> float:
        return float(self.best_loss_history[-1])

    @property
    def final_loss(self) -> float:
        return float(self.loss_history[-1])

    def write_json(self, path: str | Path) -> None:
        payload = {
            "schema_version": 1,
            "alpha": [float(a) for a in self.alpha_star.values],
            "lower": [float(a) for a in self.alpha_star.lower],
            "upper": [float(a) for a in self.alpha_star.upper],
            "total": float(self.alpha_star.total),
            "best_loss": self.best_loss,
            "final_loss": self.final_loss,
            "eta": self.eta,
            "steps": self.steps,
            "epochs_run": self.epochs_run,
            "restarts": self.restarts,
            "stalled": self.stalled,
            "max_sum_violation": self.max_sum_violation,
            "max_bound_violation": self.max_bound_violation,
            "loss_definition": "mean squared final-position error over the n "
                               "probe followers (leader excluded: its final "
                               "position is analytic)",
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_loss_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "grad_norm"])
            for e, loss in enumerate(self.loss_history):
                grad = (repr(float(self.gradient_norm_history[e]))
                        if e < self.gradient_norm_history.size else "")
                w.writerow([e, repr(float(loss)), grad])


def train_loss(traj: TrajectoryField, obs: ProbeObservations) -> float:
    """Mean squared deviation of the predicted follower final positions."""
    if traj.n_vehicles != obs.x_init.size:
        raise ConfigError(
            f"trajectory has {traj.n_vehicles} vehicles, observations have "
            f"{obs.x_init.size}")
    n = obs.n
    err = traj.final_positions()[:n] - obs.x_final[:n]
    return float(np.mean(err * err))


def adjoint_gradient_values(alpha_values: np.ndarray, obs: ProbeObservations,
                            cfg: FleetConfig, v: VelocityMap, steps: int,
                            traj: TrajectoryField | None = None) -> np.ndarray:
    """Exact gradient of train_loss through the unrolled Euler map.

    Reverse accumulation: with z_k the gap quotients at step k, the costate
    recursion is lam_k = lam_{k+1} + dt * W^T (V'(z_k) . lam_{k+1}) and each
    step contributes dt * V'(z_k) . lam_{k+1} . (-z_k / alpha) to the
    gradient, since z depends on alpha_i only through the 1/alpha_i factor.
    """
    alpha_values = np.asarray(alpha_values, dtype=float)
    if traj is None:
        traj = probe_forward_values(alpha_values, obs, cfg, v, steps)
    elif traj.n_steps != steps:
        raise ConfigError("provided tape does not match the requested step count")
    n = obs.n
    dt = traj.dt
    rate = cfg.N / (alpha_values * cfg.L)

    lam = 2.0 / n * (traj.positions[-1, :n] - obs.x_final[:n])
    grad = np.zeros(n)
    for k in range(steps - 1, -1, -1):
        x_row = traj.positions[k]
        z = rate * (x_row[1:] - x_row[:n])
        w = v.spacing_derivative(z) * lam
        grad += dt * w * (-z / alpha_values)
        # lam <- lam + dt * W^T w, with W^T w = rate[i-1] w[i-1] - rate[i] w[i]
        lam = lam - dt * rate * w
        lam[1:] += dt * rate[:-1] * w[:-1]
    return grad


def adjoint_gradient(alpha: AlphaVector, obs: ProbeObservations, cfg: FleetConfig,
                     v: VelocityMap, steps: int,
                     traj: TrajectoryField | None = None,
                     feasibility_tol: float = 1e-9) -> np.ndarray:
    """Feasibility-checked wrapper around adjoint_gradient_values."""
    alpha.require_feasible(feasibility_tol)
    return adjoint_gradient_values(alpha.values, obs, cfg, v, steps, traj=traj)


def project_onto_feasible(raw: np.ndarray, bounds: AlphaBounds) -> AlphaVector:
    """Euclidean projection onto {lower <= a <= upper, sum a = total}.

    The projection is clip(raw + lam, lower, upper) for a scalar shift lam
    found by bisection on the monotone sum defect; the KKT conditions of the
    projection hold by construction.
    """
    bounds.require_feasible()
    raw = np.asarray(raw, dtype=float)
    lo, hi, total = bounds.lower, bounds.upper, bounds.total
    if raw.shape != lo.shape:
        raise ConfigError("raw vector and bounds must have equal length")

    def defect(lam):
        return float(np.sum(np.clip(raw + lam, lo, hi)) - total)

    lam_lo = float(np.min(lo - raw))
    lam_hi = float(np.max(hi - raw))
    tol = PROJECTION_SUM_RTOL * max(abs(total), 1.0)
    d_lo = defect(lam_lo)
    if abs(d_lo) <= tol:
        lam = lam_lo
    else:
        lam = None
        for _ in range(200):
            mid = 0.5 * (lam_lo + lam_hi)
            d = defect(mid)
            if abs(d) <= tol:
                lam = mid
                break
            if d < 0:
                lam_lo = mid
            else:
                lam_hi = mid
        if lam is None:
            lam = 0.5 * (lam_lo + lam_hi)
            if abs(defect(lam)) > tol:
                raise InfeasibleError("projection bisection failed to converge")
    return AlphaVector.from_bounds(np.clip(raw + lam, lo, hi), bounds)


def fit(obs: ProbeObservations, cfg: FleetConfig, v: VelocityMap,
        tc: TrainConfig | None = None) -> TrainResult:
    """Projected gradient descent on the final-position loss.

    Starts from the uniform guess alpha_i = N/n projected into the bounds.
    Each epoch runs the forward unroll, the adjoint gradient, a step
    alpha <- project(alpha - eta grad), and a feasibility audit.  If the loss
    ever exceeds 10x its initial value, or an iterate's unroll collapses a
    gap (an Euler overshoot: feasible alphas never collapse in continuous
    time), eta is halved and the iterate resets to the best one seen.  The
    best-loss iterate is returned.
    """
    tc = tc or TrainConfig()
    bounds = make_alpha_bounds(obs, cfg).require_feasible()
    obs.check_leader_motion(cfg.T, v.v_max)
    eta = tc.resolved_eta(cfg)
    steps = tc.resolved_steps(cfg)

    alpha = project_onto_feasible(np.full(cfg.n, cfg.N / cfg.n), bounds)
    losses: list[float] = []
    grad_norms: list[float] = []
    best_loss = np.inf
    best_values = alpha.values
    restarts = 0
    max_sum_violation = alpha.sum_violation()
    max_bound_violation = alpha.bound_violation()

    epoch = 0
    stalled = False
    eta_floor = eta * 2.0 ** -60  # halving past this cannot move alpha in float64

    def restart_from_best():
        nonlocal eta, restarts, alpha, stalled
        eta *= 0.5
        restarts += 1
        stalled = stalled or eta < eta_floor
        alpha = AlphaVector.from_bounds(best_values, bounds)

    while True:
        try:
            tape = probe_forward_values(alpha.values, obs, cfg, v, steps)
        except StepSizeError:
            if not np.isfinite(best_loss):
                raise  # the projected initialization itself needs more steps
            restart_from_best()
            tape = probe_forward_values(alpha.values, obs, cfg, v, steps)
        loss = train_loss(tape, obs)
        losses.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_values = alpha.values
        if epoch >= tc.epochs or loss < tc.tol_loss or stalled:
            break
        if losses[0] > 0 and loss > 10.0 * losses[0]:
            restart_from_best()
            if stalled:
                break
            tape = probe_forward_values(alpha.values, obs, cfg, v, steps)

        grad = adjoint_gradient_values(alpha.values, obs, cfg, v, steps, traj=tape)
        stepped = project_onto_feasible(alpha.values - eta * grad, bounds)
        grad_norms.append(float(np.linalg.norm(alpha.values - stepped.values) / eta))
        alpha = stepped
        max_sum_violation = max(max_sum_violation, alpha.sum_violation())
        max_bound_violation = max(max_bound_violation, alpha.bound_violation())
        epoch += 1

    alpha_star = AlphaVector.from_bounds(best_values, bounds)
    return TrainResult(
        alpha_star=alpha_star,
        loss_history=np.array(losses),
        gradient_norm_history=np.array(grad_norms),
        trajectory=probe_forward_values(alpha_star.values, obs, cfg, v, steps),
        best_loss_history=np.minimum.accumulate(np.array(losses)),
        eta=eta,
        steps=steps,
        epochs_run=epoch,
        restarts=restarts,
        max_sum_violation=max_sum_violation,
        max_bound_violation=max_bound_violation,
        stalled=stalled,
    )
