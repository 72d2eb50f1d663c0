"""Evaluation of trained guidance networks.

Open-loop: network predictions against the stored optimal controls of a
trajectory. Closed-loop: integrate the state equations with a controller in
the loop and measure how far from the target orbit the spacecraft ends up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .astro import closest_point_on_orbit
from .dynamics import MassDepleted, PropagationError, StepSizeUnderflow, TrajectoryRecord, augmented_rhs, control_law
from .nn import TARGET_COLUMN, TARGET_NAMES, GuidanceModel, TargetMismatchError, TrainReport, polar_to_direction
from .shooting import TransferProblem

_ERRORS = {kernels.STEP_UNDERFLOW: StepSizeUnderflow, kernels.MASS_DEPLETED: MassDepleted}


@dataclass
class PredictionReport:
    """Per-node truth and prediction series for one trajectory.

    ``mse`` is in native units; ``mse_scaled`` uses the model's [-1, 1] target
    scaling, the same space as the training loss.
    """

    targets: tuple[str, ...]
    ts: np.ndarray
    truth: np.ndarray
    pred: np.ndarray
    mse: dict[str, float]
    mse_scaled: dict[str, float] = field(default_factory=dict)


def evaluate_on_trajectory(model, traj: TrajectoryRecord, targets=None) -> PredictionReport:
    """Run ``model`` on every node state of ``traj``.

    ``model`` needs a ``targets`` tuple and a vectorised ``forward``; the
    optional ``targets`` argument asserts the expected target set.

    Raises
    ------
    TargetMismatchError
        If the model's targets differ from ``targets`` or are not polar
        control components.
    """
    mt = tuple(model.targets)
    if any(t not in TARGET_COLUMN for t in mt):
        raise TargetMismatchError(f"model targets {mt} are not control components")
    if targets is not None and tuple(targets) != mt:
        raise TargetMismatchError(f"model predicts {','.join(mt)} but {','.join(targets)} was requested")
    cols = [TARGET_COLUMN[t] for t in mt]
    truth = traj.polar()[:, cols]
    pred = np.asarray(model.forward(traj.ys[:, :7]), dtype=float).reshape(len(traj), len(mt))
    mse = dict(zip(mt, map(float, np.mean((pred - truth) ** 2, axis=0))))
    scaled = {}
    norm = getattr(model, "norm", None)
    if norm is not None:
        scaled = dict(zip(mt, map(float, np.mean((norm.scale(pred) - norm.scale(truth)) ** 2, axis=0))))
    return PredictionReport(mt, traj.ts.copy(), truth, pred, mse, scaled)


# -- controllers --------------------------------------------------------------


class ZeroThrustController:
    breakpoints = ()

    def __call__(self, t, x):
        return 0.0, np.array([1.0, 0.0, 0.0])


class NetworkController:
    """Feedback from one or more models that together predict u, theta and phi.

    The first model providing a target is used for it.
    """

    def __init__(self, models):
        self.models = [models] if isinstance(models, GuidanceModel) else list(models)
        self.source = {}
        for k, m in enumerate(self.models):
            for j, name in enumerate(m.targets):
                self.source.setdefault(name, (k, j))
        missing = [t for t in TARGET_NAMES if t not in self.source]
        if missing:
            raise TargetMismatchError(f"no model predicts {','.join(missing)}")
        self.breakpoints = ()

    def __call__(self, t, x):
        outs = [m.forward(np.asarray(x[:7], dtype=float)) for m in self.models]
        u, theta, phi = (float(outs[k][j]) for k, j in (self.source[n] for n in TARGET_NAMES))
        return min(max(u, 0.0), 1.0), polar_to_direction(theta, phi)


class ReplayController:
    """Replays a stored optimal trajectory as state feedback.

    Costates are interpolated in time with cubic Hermite polynomials (node
    derivatives from the costate equations) and the control law is applied to
    the current state; node times are exposed as integration breakpoints.
    """

    def __init__(self, traj: TrajectoryRecord, prob: TransferProblem):
        self.traj = traj
        self.eng = prob.eng.with_alpha(traj.alpha)
        self.t0 = float(traj.ts[0])
        self.breakpoints = traj.ts - self.t0
        self.dlam = np.array([augmented_rhs(y[:7], y[7:], self.eng, prob.mu)[1] for y in traj.ys])

    def costate(self, t: float) -> np.ndarray:
        ts, ys, d = self.breakpoints, self.traj.ys, self.dlam
        k = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2))
        h = ts[k + 1] - ts[k]
        s = (t - ts[k]) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * ys[k, 7:] + h10 * h * d[k] + h01 * ys[k + 1, 7:] + h11 * h * d[k + 1]

    def __call__(self, t, x):
        u, d = control_law(np.concatenate([x[:7], self.costate(t)]), self.eng)
        return float(u[0]), d[0]


def as_controller(obj):
    if isinstance(obj, GuidanceModel) or (isinstance(obj, (list, tuple)) and obj and isinstance(obj[0], GuidanceModel)):
        return NetworkController(obj)
    if not callable(obj):
        raise TypeError("expected a GuidanceModel, a list of models or a controller callable")
    return obj


# -- closed loop --------------------------------------------------------------


@dataclass
class RolloutResult:
    ts: np.ndarray
    xs: np.ndarray
    u: np.ndarray
    dirs: np.ndarray
    arrival_pos_err: float
    arrival_vel_err: float
    arrival_distance: float
    arrival_anomaly: float
    final_mass: float
    propellant_used: float
    throttle_integral: float = math.nan

    @property
    def final_state(self) -> np.ndarray:
        return self.xs[-1].copy()


def _arrival(x, prob: TransferProblem, w: float):
    E, D = closest_point_on_orbit(x[0:3], x[3:6], prob.arrival, w)
    r, v = prob.arrival.state(E)
    return float(np.linalg.norm(x[0:3] - r)), float(np.linalg.norm(x[3:6] - v)), D, E


def closed_loop_rollout(
    controller,
    x0,
    duration: float,
    prob: TransferProblem,
    control_update_dt: float | None = None,
    continuous: bool = False,
    w: float = 1.0,
    tol: float = 1e-12,
) -> RolloutResult:
    """Fly the state equations with ``controller`` in the loop.

    With the default zero-order hold the controller is queried every
    ``control_update_dt`` (``duration / 1000`` if omitted) and its thrust held
    until the next query. With ``continuous=True`` it is evaluated inside
    every integrator stage, split at the controller's ``breakpoints``.

    Raises
    ------
    MassDepleted, StepSizeUnderflow, PropagationError
    """
    if not duration > 0.0:
        raise ValueError("duration must be positive")
    ctrl = as_controller(controller)
    x = np.asarray(x0.to_array() if hasattr(x0, "to_array") else x0, dtype=float).copy()
    m0 = float(x[6])
    c1, c2, mu = prob.eng.c1, prob.eng.c2, prob.mu
    ts, xs, us, ds = [0.0], [x.copy()], [], []
    integral = 0.0
    if continuous:
        bps = np.asarray(getattr(ctrl, "breakpoints", ()), dtype=float)
        grid = np.unique(np.concatenate([[0.0, duration], bps[(bps > 0.0) & (bps < duration)]]))

        def f(t, y):
            u, d = ctrl(t, y)
            k = c1 * u / y[6]
            r3 = np.linalg.norm(y[0:3]) ** 3
            return np.concatenate([y[3:6], -mu * y[0:3] / r3 + k * d, [-c2 * u]])

        for a, b in zip(grid[:-1], grid[1:]):
            u, d = ctrl(a, x)
            us.append(u)
            ds.append(d)
            status, x, _ = kernels.integrate_generic(f, x, a, b - a, tol, tol)
            if status == kernels.OK and x[6] <= 0.0:
                status = kernels.MASS_DEPLETED
            if status != kernels.OK:
                raise _ERRORS.get(status, PropagationError)(status, float(b))
            ts.append(float(b))
            xs.append(x.copy())
    else:
        h = duration / 1000.0 if control_update_dt is None else control_update_dt
        if not h > 0.0:
            raise ValueError("control_update_dt must be positive")
        n = max(1, int(math.ceil(duration / h - 1e-9)))
        for k in range(n):
            a, b = k * h, min((k + 1) * h, duration)
            u, d = ctrl(a, x)
            us.append(u)
            ds.append(np.asarray(d, dtype=float))
            status, x, _ = kernels.integrate_thrust(x, b - a, u * np.asarray(d), c1, c2, mu, tol, tol)
            if status != kernels.OK:
                raise _ERRORS.get(status, PropagationError)(status, float(b))
            integral += u * (b - a)
            ts.append(float(b))
            xs.append(x.copy())
    # the control at the final time completes the series
    u, d = ctrl(duration, x)
    us.append(u)
    ds.append(np.asarray(d, dtype=float))
    pe, ve, D, E = _arrival(x, prob, w)
    return RolloutResult(
        np.array(ts),
        np.array(xs),
        np.array(us, dtype=float),
        np.array(ds),
        pe,
        ve,
        D,
        E,
        float(x[6]),
        m0 - float(x[6]),
        math.nan if continuous else integral,
    )


# -- figure data --------------------------------------------------------------


def _trajectory_columns(ts, xs, u, dirs):
    theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    return np.column_stack([ts, xs, u, theta, phi])


_STATE_COLS = ["t", "rx", "ry", "rz", "vx", "vy", "vz", "m", "u", "theta", "phi"]


def export_figure_data(obj, path) -> None:
    """Write plot-ready CSV for a trajectory (or a ``{label: trajectory}``
    mapping), a prediction report, a rollout result or a training report.

    Lines starting with ``#`` describe the series; the first other line is the
    column header.
    """
    if isinstance(obj, TrajectoryRecord):
        obj = {"trajectory": obj}
    if isinstance(obj, dict) and all(isinstance(v, TrajectoryRecord) for v in obj.values()):
        comments = ["kind: trajectories", "units: canonical (LU, LU/TU, MU, TU); angles in rad", "series: " + ",".join(obj)]
        cols = ["series", *_STATE_COLS]
        blocks = [np.column_stack([np.full(len(t), k), _trajectory_columns(t.ts, t.ys[:, :7], t.u, t.dirs)]) for k, t in enumerate(obj.values())]
        data = np.concatenate(blocks) if blocks else np.empty((0, len(cols)))
    elif isinstance(obj, PredictionReport):
        comments = ["kind: prediction", "targets: " + ",".join(obj.targets)]
        comments += [f"mse_{k}: {v:.17g}" for k, v in obj.mse.items()]
        cols = ["t"] + [f"{p}_{t}" for t in obj.targets for p in ("truth", "pred")]
        inter = np.empty((len(obj.ts), 2 * len(obj.targets)))
        inter[:, 0::2], inter[:, 1::2] = obj.truth, obj.pred
        data = np.column_stack([obj.ts, inter])
    elif isinstance(obj, RolloutResult):
        comments = [
            "kind: rollout",
            f"arrival_pos_err: {obj.arrival_pos_err:.17g}",
            f"arrival_vel_err: {obj.arrival_vel_err:.17g}",
            f"final_mass: {obj.final_mass:.17g}",
            f"propellant_used: {obj.propellant_used:.17g}",
        ]
        cols = _STATE_COLS
        data = _trajectory_columns(obj.ts, obj.xs, obj.u, obj.dirs)
    elif isinstance(obj, TrainReport):
        comments = ["kind: training", f"epochs_run: {obj.epochs_run}"]
        comments += [f"val_mse_{k}: {v:.17g}" for k, v in obj.final_mse.items()]
        cols = ["epoch", "train_loss", "val_loss", "lr"]
        n = obj.epochs_run
        data = np.column_stack([np.arange(1, n + 1), obj.train_loss_history, obj.val_loss_history, obj.lr_history[:n]]) if n else np.empty((0, 4))
    else:
        raise TypeError(f"cannot export {type(obj).__name__}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for c in comments:
            f.write(f"# {c}\n")
        f.write(",".join(cols) + "\n")
        np.savetxt(f, data, fmt="%.17g", delimiter=",")


def read_figure_data(path) -> tuple[dict[str, str], list[str], np.ndarray]:
    """Parse a file written by :func:`export_figure_data`."""
    meta, header, rows = {}, None, []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(":")
                meta[key.strip()] = val.strip()
            elif header is None:
                header = line.split(",")
            elif line:
                rows.append([float(v) for v in line.split(",")])
    return meta, header or [], np.array(rows).reshape(len(rows), len(header or []))
