"""Optimal control laws, Hamiltonian and state/costate propagation.

State vectors are length-7 arrays ``[r, v, m]`` and costates length-7 arrays
``[lambda_r, lambda_v, lambda_m]``; the small dataclasses below wrap them
where a named view helps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

EPS_DIR = 1e-12


class SingularCostateError(ValueError):
    """The primer vector is (numerically) zero, so no thrust direction is defined."""


class PropagationError(RuntimeError):
    def __init__(self, status: int, t: float):
        self.status = status
        self.t = t
        super().__init__(f"{kernels.STATUS_MESSAGES.get(status, 'failure')} at t={t:.6g}")


class StepSizeUnderflow(PropagationError):
    pass


class MassDepleted(PropagationError):
    pass


@dataclass(frozen=True)
class SpacecraftState:
    r: np.ndarray
    v: np.ndarray
    m: float

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if not self.m > 0.0:
            raise ValueError("mass must be positive")
        if not np.linalg.norm(self.r) > 0.0:
            raise ValueError("position must be non-zero")

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.r, self.v, [self.m]])

    @classmethod
    def from_array(cls, x) -> SpacecraftState:
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], float(x[6]))


@dataclass(frozen=True)
class Costate:
    lr: np.ndarray
    lv: np.ndarray
    lm: float

    def to_array(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.lr, float), np.asarray(self.lv, float), [self.lm]])

    @classmethod
    def from_array(cls, lam) -> Costate:
        lam = np.asarray(lam, dtype=float)
        return cls(lam[0:3], lam[3:6], float(lam[6]))


@dataclass(frozen=True)
class ControlAction:
    """Throttle and unit thrust direction."""

    u: float
    dir: np.ndarray

    @property
    def polar(self) -> tuple[float, float, float]:
        theta = math.acos(max(-1.0, min(1.0, float(self.dir[2]))))
        phi = math.atan2(float(self.dir[1]), float(self.dir[0]))
        return self.u, theta, phi

    @property
    def thrust(self) -> np.ndarray:
        return self.u * np.asarray(self.dir)


@dataclass(frozen=True)
class EngineParams:
    c1: float
    c2: float
    alpha: float = 0.0

    def __post_init__(self):
        if not (self.c1 > 0.0 and self.c2 > 0.0):
            raise ValueError("engine constants must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    def with_alpha(self, alpha: float) -> EngineParams:
        return EngineParams(self.c1, self.c2, alpha)


def _as_array(obj) -> np.ndarray:
    if hasattr(obj, "to_array"):
        return obj.to_array()
    return np.asarray(obj, dtype=float)


def optimal_direction(lv) -> np.ndarray:
    """Thrust direction anti-parallel to the velocity costate."""
    lv = np.asarray(lv, dtype=float)
    n = float(np.linalg.norm(lv))
    if n <= EPS_DIR:
        raise SingularCostateError("|lambda_v| too small to define a thrust direction")
    return -lv / n


def _norm3(a: np.ndarray) -> np.ndarray:
    # same operation order as the compiled kernels, so both agree bit for bit
    return np.sqrt(a[..., 0] * a[..., 0] + a[..., 1] * a[..., 1] + a[..., 2] * a[..., 2])


def switching_function(x, lam, eng: EngineParams) -> float:
    x, lam = _as_array(x), _as_array(lam)
    m = x[6]
    return float(eng.c1 * _norm3(lam[3:6]) + m * eng.c2 * lam[6] - m * eng.alpha)


def optimal_throttle(x, lam, eng: EngineParams) -> float:
    u, _ = control_law(np.concatenate([_as_array(x), _as_array(lam)]), eng)
    return float(u[0])


def optimal_control(x, lam, eng: EngineParams) -> ControlAction:
    u, d = control_law(np.concatenate([_as_array(x), _as_array(lam)]), eng)
    return ControlAction(float(u[0]), d[0])


def control_law(ys: np.ndarray, eng: EngineParams) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised control law over rows of augmented vectors ``[x, lam]``.

    Returns throttles ``(N,)`` and unit directions ``(N, 3)``. Where
    ``|lambda_v| <= EPS_DIR`` the throttle is 0 and the direction +x.
    """
    ys = np.atleast_2d(ys)
    m = ys[:, 6]
    lv = ys[:, 10:13]
    lvn = _norm3(lv)
    singular = lvn <= EPS_DIR
    if eng.alpha >= 1.0:
        s = eng.c1 * lvn + m * eng.c2 * ys[:, 13] - m
        u = np.where(s > 0.0, 1.0, 0.0)
    else:
        arg = (eng.c1 * lvn / m + ys[:, 13] * eng.c2 - eng.alpha) / (2.0 * (1.0 - eng.alpha))
        u = np.clip(arg, 0.0, 1.0)
    u = np.where(singular, 0.0, u)
    safe = np.where(singular, 1.0, lvn)
    d = -lv / safe[:, None]
    d[singular] = (1.0, 0.0, 0.0)
    return u, d


def hamiltonian(x, lam, ctrl: ControlAction, eng: EngineParams, mu: float = 1.0, time_weight: float = 0.0) -> float:
    """Hamiltonian of the transfer problem for a given control.

    ``time_weight`` adds a constant running cost (a flight-time penalty); the
    default of zero is the pure throttle cost.
    """
    x, lam = _as_array(x), _as_array(lam)
    r, v, m = x[0:3], x[3:6], x[6]
    lr, lv, lm = lam[0:3], lam[3:6], lam[6]
    u = ctrl.u
    rn = float(np.linalg.norm(r))
    acc = -mu * r / rn**3 + eng.c1 * u / m * np.asarray(ctrl.dir)
    return float(lr @ v + lv @ acc - lm * eng.c2 * u + eng.alpha * u + (1.0 - eng.alpha) * u * u + time_weight)


def hamiltonian_along(ys: np.ndarray, eng: EngineParams, mu: float = 1.0, time_weight: float = 0.0) -> np.ndarray:
    """Optimal Hamiltonian at every row of ``ys`` (vectorised)."""
    ys = np.atleast_2d(ys)
    u, d = control_law(ys, eng)
    r, v, m = ys[:, 0:3], ys[:, 3:6], ys[:, 6]
    rn = np.linalg.norm(r, axis=1)
    acc = -mu * r / rn[:, None] ** 3 + (eng.c1 * u / m)[:, None] * d
    return (
        np.sum(ys[:, 7:10] * v, axis=1)
        + np.sum(ys[:, 10:13] * acc, axis=1)
        - ys[:, 13] * eng.c2 * u
        + eng.alpha * u
        + (1.0 - eng.alpha) * u * u
        + time_weight
    )


def augmented_rhs(x, lam, eng: EngineParams, mu: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Time derivatives of state and costate under the optimal control."""
    x, lam = _as_array(x), _as_array(lam)
    r, v, m = x[0:3], x[3:6], x[6]
    lr, lv = lam[0:3], lam[3:6]
    ctrl = optimal_control(x, lam, eng)
    u = ctrl.u
    rn = float(np.linalg.norm(r))
    lvn = float(_norm3(lv))
    dx = np.empty(7)
    dx[0:3] = v
    dx[3:6] = -mu * r / rn**3 + eng.c1 * u / m * ctrl.dir
    dx[6] = -eng.c2 * u
    dlam = np.empty(7)
    dlam[0:3] = mu * lv / rn**3 - 3.0 * mu * (lv @ r) * r / rn**5
    dlam[3:6] = -lr
    dlam[6] = -eng.c1 * u * lvn / m**2
    return dx, dlam


@dataclass(frozen=True)
class TrajectoryNode:
    t: float
    x: np.ndarray
    lam: np.ndarray
    ctrl: ControlAction


@dataclass
class TrajectoryRecord:
    """Time-ordered nodes of an optimal trajectory, stored column-wise.

    ``ys`` holds one augmented vector ``[x, lam]`` per node; the controls are
    the control law evaluated at each node.
    """

    ts: np.ndarray
    ys: np.ndarray
    alpha: float
    converged: bool = True
    u: np.ndarray = field(default=None, repr=False)
    dirs: np.ndarray = field(default=None, repr=False)
    eng: EngineParams | None = field(default=None, repr=False)
    angles: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=float)
        self.ys = np.atleast_2d(np.asarray(self.ys, dtype=float))
        if self.u is None or self.dirs is None:
            if self.eng is None:
                raise ValueError("either controls or engine parameters are required")
            self.u, self.dirs = control_law(self.ys, self.eng.with_alpha(self.alpha))
        if self.angles is None:
            theta = np.arccos(np.clip(self.dirs[:, 2], -1.0, 1.0))
            phi = np.arctan2(self.dirs[:, 1], self.dirs[:, 0])
            self.angles = np.column_stack([theta, phi])

    def __len__(self) -> int:
        return len(self.ts)

    @property
    def nodes(self) -> list[TrajectoryNode]:
        return [
            TrajectoryNode(float(t), y[:7].copy(), y[7:].copy(), ControlAction(float(u), d.copy()))
            for t, y, u, d in zip(self.ts, self.ys, self.u, self.dirs)
        ]

    @property
    def duration(self) -> float:
        return float(self.ts[-1] - self.ts[0])

    @property
    def x0(self) -> np.ndarray:
        return self.ys[0, :7].copy()

    @property
    def lam0(self) -> np.ndarray:
        return self.ys[0, 7:].copy()

    @property
    def final_mass(self) -> float:
        return float(self.ys[-1, 6])

    def polar(self) -> np.ndarray:
        """``(N, 3)`` array of ``(u, theta, phi)`` per node."""
        return np.column_stack([self.u, self.angles])


_ERRORS = {kernels.STEP_UNDERFLOW: StepSizeUnderflow, kernels.MASS_DEPLETED: MassDepleted}


def propagate_raw(y0, dt: float, eng: EngineParams, mu: float = 1.0, tol: float = 1e-12, record: bool = True):
    """Kernel call without wrapping; returns ``(status, ts, ys)``."""
    status, ts, ys, _ = kernels.integrate_augmented(
        np.ascontiguousarray(y0, dtype=float), float(dt), eng.c1, eng.c2, eng.alpha, mu, tol, tol, 0.0, 1_000_000, record
    )
    return status, ts, ys


def propagate(x0, lam0, dt: float, eng: EngineParams, mu: float = 1.0, tol: float = 1e-12) -> TrajectoryRecord:
    """Integrate states and costates for ``dt`` under the optimal control law.

    Raises
    ------
    StepSizeUnderflow, MassDepleted, PropagationError
    """
    if not dt > 0.0:
        raise ValueError("duration must be positive")
    y0 = np.concatenate([_as_array(x0), _as_array(lam0)])
    status, ts, ys = propagate_raw(y0, dt, eng, mu, tol, record=True)
    if status != kernels.OK:
        raise _ERRORS.get(status, PropagationError)(status, float(ts[-1]))
    return TrajectoryRecord(ts, ys, eng.alpha, True, eng=eng)
