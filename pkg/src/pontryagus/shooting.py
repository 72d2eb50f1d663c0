"""Single-shooting solution of the phase-free orbit-to-orbit transfer.

Unknowns are the initial costates, the time of flight and the departure and
arrival eccentric anomalies. A problem can also be pinned to a fixed initial
state (``TransferProblem.x0``); the departure anomaly and its transversality
condition then drop out and the system is 9 x 9.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from . import kernels
from .astro import BoundaryOrbit
from .dynamics import EngineParams, TrajectoryRecord, control_law, hamiltonian_along, propagate_raw

log = logging.getLogger(__name__)

DEFAULT_TIME_WEIGHT = 0.2


class ExhaustedRestartsError(RuntimeError):
    pass


@dataclass
class ShootingUnknowns:
    lam0: np.ndarray
    dt: float
    E0: float | None
    Ef: float

    def __post_init__(self):
        self.lam0 = np.asarray(self.lam0, dtype=float).reshape(7)

    def to_vector(self) -> np.ndarray:
        tail = [self.dt, self.Ef] if self.E0 is None else [self.dt, self.E0, self.Ef]
        return np.concatenate([self.lam0, tail])

    @classmethod
    def from_vector(cls, z, fixed_start: bool = False) -> ShootingUnknowns:
        z = np.asarray(z, dtype=float)
        if fixed_start:
            return cls(z[:7].copy(), float(z[7]), None, float(z[8]))
        return cls(z[:7].copy(), float(z[7]), float(z[8]), float(z[9]))


@dataclass(frozen=True, eq=False)
class TransferProblem:
    """Boundary orbits, engine and cost weights of one transfer.

    ``time_weight`` is a constant running cost added to the throttle cost; it
    makes the free-time problem well posed (see README, "Time of flight").
    """

    departure: BoundaryOrbit
    arrival: BoundaryOrbit
    eng: EngineParams
    m0: float = 1.0
    mu: float = 1.0
    time_weight: float = DEFAULT_TIME_WEIGHT
    tol: float = 1e-12
    x0: np.ndarray | None = None

    def __post_init__(self):
        if not self.m0 > 0.0:
            raise ValueError("initial mass must be positive")
        if self.x0 is not None:
            object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(7))

    @property
    def alpha(self) -> float:
        return self.eng.alpha

    @property
    def fixed_start(self) -> bool:
        return self.x0 is not None

    @property
    def n_unknowns(self) -> int:
        return 9 if self.fixed_start else 10

    def with_alpha(self, alpha: float) -> TransferProblem:
        return replace(self, eng=self.eng.with_alpha(alpha))

    def with_fixed_start(self, x0) -> TransferProblem:
        return replace(self, x0=np.asarray(x0, dtype=float))

    def initial_state(self, E0: float | None) -> np.ndarray:
        if self.x0 is not None:
            return self.x0.copy()
        r, v = self.departure.state(E0)
        return np.concatenate([r, v, [self.m0]])


@dataclass
class TpbvpSolution:
    z: ShootingUnknowns
    alpha: float
    converged: bool
    residuals: np.ndarray
    trajectory: TrajectoryRecord | None = None
    iterations: int = 0
    message: str = ""
    jacobian_cond: float = math.nan
    extra: dict = field(default_factory=dict)

    @property
    def residual_norm(self) -> float:
        r = np.asarray(self.residuals)
        return float(np.max(np.abs(r))) if np.all(np.isfinite(r)) else math.inf

    def __bool__(self) -> bool:
        return self.converged


def transversality_sma(lam, r2, v2) -> float:
    """Free semi-major-axis transversality: ``2 lambda_r . r - lambda_v . v``."""
    lam = np.asarray(lam, dtype=float)
    return float(2.0 * lam[0:3] @ np.asarray(r2) - lam[3:6] @ np.asarray(v2))


def transversality_anomaly(lam, r, v, mu: float = 1.0) -> float:
    """Free-anomaly transversality: costate orthogonal to the two-body flow."""
    lam = np.asarray(lam, dtype=float)
    r = np.asarray(r)
    return float(lam[0:3] @ np.asarray(v) - lam[3:6] @ (mu * r / np.linalg.norm(r) ** 3))


def _residuals(z: np.ndarray, prob: TransferProblem, record: bool = False):
    n = prob.n_unknowns
    if not np.all(np.isfinite(z)):
        return np.full(n, np.nan), None
    lam0 = z[:7]
    dt = z[7]
    E0 = None if prob.fixed_start else z[8]
    Ef = z[-1]
    if not dt > 0.0:
        return np.full(n, np.nan), None
    x1 = prob.initial_state(E0)
    status, ts, ys = propagate_raw(np.concatenate([x1, lam0]), dt, prob.eng, prob.mu, prob.tol, record)
    if status != kernels.OK:
        return np.full(n, np.nan), None
    yf = ys[-1]
    r2, v2 = prob.arrival.state(Ef)
    F = np.empty(n)
    F[0:3] = yf[0:3] - r2
    F[3:6] = yf[3:6] - v2
    F[6] = yf[13]
    F[7] = hamiltonian_along(yf, prob.eng, prob.mu, prob.time_weight)[0]
    k = 8
    if not prob.fixed_start:
        F[8] = transversality_anomaly(lam0, x1[0:3], x1[3:6], prob.mu)
        k = 9
    F[k] = transversality_anomaly(yf[7:], yf[0:3], yf[3:6], prob.mu)
    return F, (ts, ys) if record else None


def shooting_residuals(z, prob: TransferProblem) -> np.ndarray:
    """Boundary-condition residuals; all-NaN when the propagation fails.

    Order: position and velocity mismatch at arrival (6), final mass costate,
    final Hamiltonian, departure free-anomaly condition (omitted for a fixed
    start), arrival free-anomaly condition.
    """
    if isinstance(z, ShootingUnknowns):
        z = z.to_vector()
    F, _ = _residuals(np.asarray(z, dtype=float), prob)
    return F


def fd_jacobian(z: np.ndarray, F: np.ndarray, prob: TransferProblem, rel_step: float = 1e-7, abs_step: float = 1e-7) -> np.ndarray:
    n = len(z)
    J = np.empty((len(F), n))
    for k in range(n):
        h = max(rel_step * abs(z[k]), abs_step)
        zp = z.copy()
        zp[k] += h
        Fp, _ = _residuals(zp, prob)
        J[:, k] = (Fp - F) / h
    return J


def _finish(z, prob, F, it, msg, with_jacobian):
    Fr, rec = _residuals(z, prob, record=True)
    traj = None
    if rec is not None:
        ts, ys = rec
        u, d = control_law(ys, prob.eng)
        traj = TrajectoryRecord(ts, ys, prob.alpha, True, u=u, dirs=d)
    cond = math.nan
    if with_jacobian:
        cond = float(np.linalg.cond(fd_jacobian(z, Fr, prob)))
    zs = ShootingUnknowns.from_vector(z, prob.fixed_start)
    return TpbvpSolution(zs, prob.alpha, True, Fr, traj, it, msg, cond)


def solve_tpbvp(
    guess,
    prob: TransferProblem,
    tol: float = 1e-8,
    max_iter: int = 200,
    max_halvings: int = 12,
    with_jacobian: bool = False,
) -> TpbvpSolution:
    """Damped Newton iteration with a forward-difference Jacobian.

    Never raises on numerical failure; check ``converged`` on the result.
    """
    z = guess.to_vector() if isinstance(guess, ShootingUnknowns) else np.asarray(guess, dtype=float).copy()
    if len(z) != prob.n_unknowns:
        raise ValueError(f"expected {prob.n_unknowns} unknowns, got {len(z)}")

    def fail(F, it, msg):
        zs = ShootingUnknowns.from_vector(z, prob.fixed_start)
        return TpbvpSolution(zs, prob.alpha, False, F, None, it, msg)

    F, _ = _residuals(z, prob)
    if not np.all(np.isfinite(F)):
        return fail(F, 0, "non-finite residuals at initial guess")
    for it in range(max_iter + 1):
        if np.max(np.abs(F)) <= tol:
            return _finish(z, prob, F, it, "converged", with_jacobian)
        if it == max_iter:
            break
        J = fd_jacobian(z, F, prob)
        if not np.all(np.isfinite(J)):
            return fail(F, it, "non-finite Jacobian")
        try:
            dz = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            dz = np.linalg.lstsq(J, -F, rcond=None)[0]
        norm0 = np.linalg.norm(F)
        step = 1.0
        for _ in range(max_halvings + 1):
            zn = z + step * dz
            Fn, _ = _residuals(zn, prob)
            if np.all(np.isfinite(Fn)) and np.linalg.norm(Fn) < norm0:
                break
            step *= 0.5
        else:
            return fail(F, it, "line search failed")
        z, F = zn, Fn
    return fail(F, max_iter, "iteration limit reached")


def hohmann_guess_dt(prob: TransferProblem) -> float:
    a = 0.5 * (prob.departure.elements.a + prob.arrival.elements.a)
    return math.pi * math.sqrt(a**3 / prob.mu)


def restart_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for restart ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng([seed, index])


def random_guess(prob: TransferProblem, rng: np.random.Generator) -> ShootingUnknowns:
    lam = rng.uniform(-1.0, 1.0, 7)
    E0, Ef = rng.uniform(0.0, 2.0 * math.pi, 2)
    return ShootingUnknowns(lam, hohmann_guess_dt(prob), None if prob.fixed_start else E0, Ef)


def globalize(guess: ShootingUnknowns, prob: TransferProblem, max_nfev: int = 2000) -> ShootingUnknowns:
    """Levenberg-Marquardt pass on the residuals to pull a random guess into
    the Newton basin."""
    z0 = guess.to_vector()

    def f(z):
        F, _ = _residuals(z, prob)
        return np.where(np.isfinite(F), F, 1e3)

    sol = least_squares(f, z0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    return ShootingUnknowns.from_vector(sol.x, prob.fixed_start)


@dataclass
class NominalSolutions:
    qoc: TpbvpSolution
    moc: TpbvpSolution
    seed: int
    restarts: int


def solve_nominal(prob: TransferProblem, seed: int = 0, max_restarts: int = 500, homotopy_cfg=None) -> NominalSolutions:
    """Quadratic-control nominal by multistart, then continuation to mass-optimal.

    Raises
    ------
    ExhaustedRestartsError
        If no restart yields both a converged QOC and MOC solution.
    """
    from .datagen import HomotopyConfig, homotopy

    homotopy_cfg = homotopy_cfg or HomotopyConfig()
    qprob = prob.with_alpha(0.0)
    for k in range(max_restarts):
        rng = restart_rng(seed, k)
        guess = globalize(random_guess(qprob, rng), qprob)
        qoc = solve_tpbvp(guess, qprob, with_jacobian=True)
        if not qoc.converged:
            log.debug("restart %d: QOC failed (%s)", k, qoc.message)
            continue
        moc = homotopy(qoc.z, qprob, homotopy_cfg)
        if not moc.converged:
            log.debug("restart %d: homotopy failed", k)
            continue
        if math.isnan(moc.jacobian_cond):
            moc = solve_tpbvp(moc.z, prob.with_alpha(1.0), with_jacobian=True)
        log.info("nominal solved at restart %d", k)
        return NominalSolutions(qoc, moc, seed, k + 1)
    raise ExhaustedRestartsError(f"no nominal solution in {max_restarts} restarts (seed {seed})")
