"""Dataset generation around the nominal transfers.

The QOC set comes from random walks in state space started at nodes of the
nominal quadratic-control trajectory; every walk step re-solves the transfer
from the perturbed state. The MOC set continues each QOC trajectory to
mass-optimal control by the alpha homotopy.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .dynamics import EngineParams, TrajectoryRecord, control_law, propagate_raw
from .shooting import ShootingUnknowns, TpbvpSolution, TransferProblem, shooting_residuals, solve_tpbvp

log = logging.getLogger(__name__)

COLUMNS = (
    "traj_id", "node_id", "alpha", "t",
    "rx", "ry", "rz", "vx", "vy", "vz", "m",
    "lrx", "lry", "lrz", "lvx", "lvy", "lvz", "lm",
    "u", "theta", "phi",
)  # fmt: skip


class MalformedDatasetError(ValueError):
    def __init__(self, path, line: int, reason: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {reason}")


@dataclass(frozen=True)
class WalkConfig:
    gamma_bar: float = 0.01
    n: int = 50
    start_points: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma_bar < 1.0:
            raise ValueError("gamma_bar must lie in (0, 1)")
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if self.start_points < 1:
            raise ValueError("start_points must be at least 1")


@dataclass(frozen=True)
class HomotopyConfig:
    alpha_tol: float = 0.99
    max_iters: int = 100

    def __post_init__(self):
        if not 0.0 < self.alpha_tol < 1.0:
            raise ValueError("alpha_tol must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


def next_gamma(gamma: float, gamma_bar: float, success: bool) -> float:
    """Walk step-size update: relax towards ``gamma_bar`` on success, halve on failure."""
    return 0.5 * (gamma + gamma_bar) if success else 0.5 * gamma


def next_alpha(alpha: float, alpha_star: float, success: bool, alpha_tol: float) -> float:
    """Continuation update; ``alpha_star`` is the last alpha that converged."""
    if not success:
        return 0.5 * (alpha + alpha_star)
    return 1.0 if alpha >= alpha_tol else 0.5 * (1.0 + alpha)


def random_walk(
    x0,
    guess: ShootingUnknowns,
    prob: TransferProblem,
    cfg: WalkConfig,
    rng: np.random.Generator,
    include_origin: bool = True,
) -> tuple[list[tuple[int, TpbvpSolution]], int]:
    """Random walk in state space from ``x0``.

    ``guess`` holds the costates, remaining flight time and arrival anomaly at
    ``x0``. Each of the ``cfg.n`` iterations perturbs the last accepted state
    componentwise by ``x * beta * gamma`` with ``beta ~ U(-1, 1)^7`` and solves
    the fixed-start transfer from it, warm-started from the last solution.

    Returns ``(solutions, attempts)`` where ``solutions`` pairs each converged
    solution with its step index (0 for the unperturbed origin).
    """
    x = np.asarray(x0, dtype=float).copy()
    g = np.array([*guess.lam0, guess.dt, guess.Ef])
    out: list[tuple[int, TpbvpSolution]] = []
    attempts = 0
    if include_origin:
        attempts += 1
        sol = solve_tpbvp(g, prob.with_fixed_start(x))
        if sol.converged:
            out.append((0, sol))
            g = sol.z.to_vector()
    gamma = cfg.gamma_bar
    for step in range(1, cfg.n + 1):
        beta = rng.uniform(-1.0, 1.0, 7)
        x1 = x + x * beta * gamma
        attempts += 1
        sol = solve_tpbvp(g, prob.with_fixed_start(x1)) if x1[6] > 0.0 else None
        ok = sol is not None and sol.converged
        if ok:
            out.append((step, sol))
            x, g = x1, sol.z.to_vector()
        gamma = next_gamma(gamma, cfg.gamma_bar, ok)
    return out, attempts


def homotopy(entry: ShootingUnknowns, prob: TransferProblem, cfg: HomotopyConfig = HomotopyConfig(), with_jacobian: bool = False) -> TpbvpSolution:
    """Continue a solution of ``prob`` from its alpha to mass-optimal control.

    Mass-optimal is attempted first; on failure alpha is bisected towards the
    last converged value (initially 0) and raised again after each success.
    The returned solution has ``converged=False`` if ``cfg.max_iters`` solves
    do not reach alpha = 1. ``extra['path']`` lists the (alpha, success)
    sequence.
    """
    alpha, alpha_star = 1.0, 0.0
    g = entry
    path = []
    sol = None
    for _ in range(cfg.max_iters):
        sol = solve_tpbvp(g, prob.with_alpha(alpha), with_jacobian=with_jacobian and alpha == 1.0)
        path.append((alpha, sol.converged))
        if sol.converged:
            if alpha == 1.0:
                sol.extra["path"] = path
                return sol
            alpha_star, g = alpha, sol.z
        alpha = next_alpha(alpha, alpha_star, sol.converged, cfg.alpha_tol)
    fail = TpbvpSolution(g if isinstance(g, ShootingUnknowns) else sol.z, alpha, False, sol.residuals, message="homotopy iteration limit reached")
    fail.extra["path"] = path
    return fail


@dataclass
class TrajectoryProvenance:
    seed: int
    origin: int
    step: int
    Ef: float


@dataclass
class OptimalControlDataset:
    """Optimal trajectories of one alpha regime with per-trajectory provenance."""

    trajectories: list[TrajectoryRecord]
    alpha_label: str
    provenance: list[TrajectoryProvenance]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha_label = self.alpha_label.upper()
        if self.alpha_label not in ("QOC", "MOC"):
            raise ValueError(f"alpha_label must be QOC or MOC, got {self.alpha_label!r}")
        if len(self.trajectories) != len(self.provenance):
            raise ValueError("one provenance entry per trajectory is required")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n_pairs(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def states(self) -> np.ndarray:
        if not self.trajectories:
            return np.empty((0, 7))
        return np.concatenate([t.ys[:, :7] for t in self.trajectories])

    def targets(self) -> np.ndarray:
        """``(N, 3)`` array of ``(u, theta, phi)``."""
        if not self.trajectories:
            return np.empty((0, 3))
        return np.concatenate([t.polar() for t in self.trajectories])

    def trajectory_index(self) -> np.ndarray:
        return np.concatenate([np.full(len(t), k) for k, t in enumerate(self.trajectories)]) if self.trajectories else np.empty(0, int)


# -- generation ---------------------------------------------------------------


def origin_nodes(traj: TrajectoryRecord, count: int) -> list[int]:
    """Indices of the nodes closest to ``count`` equally spaced times in [t0, tf)."""
    times = traj.ts[0] + traj.duration * np.arange(count) / count
    return [int(np.argmin(np.abs(traj.ts - t))) for t in times]


def _walk_task(args):
    origin, x0, guess, prob, cfg = args
    rng = np.random.default_rng([cfg.seed, origin])
    sols, attempts = random_walk(x0, guess, prob, cfg, rng)
    return origin, [(step, s.trajectory, s.z.Ef) for step, s in sols], attempts


def _run(tasks, fn, threads: int):
    threads = max(1, min(threads, len(tasks))) if tasks else 1
    if threads == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def build_qoc_dataset(nominal: TpbvpSolution, prob: TransferProblem, cfg: WalkConfig, threads: int = 1) -> OptimalControlDataset:
    """Random walks from ``cfg.start_points`` equally spaced nominal nodes.

    Each walk owns the generator ``default_rng([cfg.seed, origin])``, so the
    result does not depend on ``threads``.
    """
    traj = nominal.trajectory
    qprob = prob.with_alpha(0.0)
    tasks = []
    for origin, j in enumerate(origin_nodes(traj, cfg.start_points)):
        guess = ShootingUnknowns(traj.ys[j, 7:], nominal.z.dt - (traj.ts[j] - traj.ts[0]), None, nominal.z.Ef)
        tasks.append((origin, traj.ys[j, :7].copy(), guess, qprob, cfg))
    results = sorted(_run(tasks, _walk_task, threads), key=lambda r: r[0])
    trajs, prov, attempts, succ = [], [], 0, 0
    for origin, sols, n_att in results:
        attempts += n_att
        succ += len(sols)
        for step, rec, Ef in sols:
            trajs.append(rec)
            prov.append(TrajectoryProvenance(cfg.seed, origin, step, Ef))
    meta = {
        "seed": cfg.seed,
        "gamma_bar": cfg.gamma_bar,
        "n": cfg.n,
        "start_points": cfg.start_points,
        "walk_attempts": attempts,
        "walk_successes": succ,
    }
    log.info("QOC walks: %d/%d solves converged", succ, attempts)
    return OptimalControlDataset(trajs, "QOC", prov, meta)


def _homotopy_task(args):
    k, x0, guess, prob, cfg = args
    sol = homotopy(guess, prob.with_fixed_start(x0), cfg)
    if not sol.converged:
        return k, None, math.nan, len(sol.extra.get("path", []))
    return k, sol.trajectory, sol.z.Ef, len(sol.extra["path"])


def build_moc_dataset(qoc: OptimalControlDataset, prob: TransferProblem, cfg: HomotopyConfig = HomotopyConfig(), threads: int = 1) -> OptimalControlDataset:
    """Homotopy from the initial entry of every QOC trajectory; failures are skipped."""
    if len(qoc) == 0:
        raise ValueError("QOC dataset is empty")
    tasks = []
    for k, (t, p) in enumerate(zip(qoc.trajectories, qoc.provenance)):
        guess = ShootingUnknowns(t.lam0, t.duration, None, p.Ef)
        tasks.append((k, t.x0, guess, prob, cfg))
    results = sorted(_run(tasks, _homotopy_task, threads), key=lambda r: r[0])
    trajs, prov, solves = [], [], 0
    for k, rec, Ef, n in results:
        solves += n
        if rec is None:
            log.debug("homotopy failed for QOC trajectory %d", k)
            continue
        p = qoc.provenance[k]
        trajs.append(rec)
        prov.append(TrajectoryProvenance(p.seed, p.origin, p.step, Ef))
    meta = dict(qoc.meta)
    meta.update(alpha_tol=cfg.alpha_tol, max_iters=cfg.max_iters, homotopy_attempts=len(qoc), homotopy_successes=len(trajs), homotopy_solves=solves)
    log.info("homotopy: %d/%d QOC trajectories continued to MOC", len(trajs), len(qoc))
    return OptimalControlDataset(trajs, "MOC", prov, meta)


# -- checks -------------------------------------------------------------------


def control_mismatch(ds: OptimalControlDataset, eng: EngineParams) -> float:
    """Largest deviation between stored controls and the control law at each node."""
    worst = 0.0
    for t in ds.trajectories:
        u, d = control_law(t.ys, eng.with_alpha(t.alpha))
        rec = TrajectoryRecord(t.ts, t.ys, t.alpha, u=u, dirs=d)
        worst = max(worst, float(np.max(np.abs(rec.polar() - t.polar()))))
    return worst


def repropagation_residuals(ds: OptimalControlDataset, prob: TransferProblem) -> np.ndarray:
    """Max-norm shooting residual of each stored trajectory re-propagated from
    its first node over its duration."""
    out = np.empty(len(ds))
    for k, (t, p) in enumerate(zip(ds.trajectories, ds.provenance)):
        fp = prob.with_fixed_start(t.x0).with_alpha(t.alpha)
        z = ShootingUnknowns(t.lam0, t.duration, None, p.Ef)
        F = shooting_residuals(z, fp)
        out[k] = np.max(np.abs(F)) if np.all(np.isfinite(F)) else math.inf
    return out


def endpoint_consistency(ds: OptimalControlDataset, prob: TransferProblem) -> float:
    """Largest difference between stored final nodes and a fresh propagation."""
    worst = 0.0
    for t in ds.trajectories:
        status, _, ys = propagate_raw(t.ys[0], t.duration, prob.eng.with_alpha(t.alpha), prob.mu, prob.tol, record=False)
        worst = max(worst, float(np.max(np.abs(ys[-1] - t.ys[-1]))) if status == 0 else math.inf)
    return worst


# -- persistence --------------------------------------------------------------


def _meta_path(path) -> str:
    root, _ = os.path.splitext(str(path))
    return root + ".meta"


def write_dataset(ds: OptimalControlDataset, path, extra_meta: dict | None = None) -> None:
    """Write the node table as CSV plus a ``.meta`` sidecar.

    The CSV is a pure function of the dataset; the only timestamp lives in the
    sidecar.
    """
    fmt = "%d,%d," + ",".join(["%.17g"] * (len(COLUMNS) - 2))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(COLUMNS) + "\n")
        for k, t in enumerate(ds.trajectories):
            n = len(t)
            block = np.column_stack([np.full(n, k), np.arange(n), np.full(n, t.alpha), t.ts, t.ys, t.polar()])
            np.savetxt(f, block, fmt=fmt)
    meta = {"format": "pontryagus-dataset v1", "alpha_label": ds.alpha_label, "trajectories": len(ds), "pairs": ds.n_pairs}
    meta.update(ds.meta)
    meta.update(extra_meta or {})
    meta["created"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    with open(_meta_path(path), "w", encoding="utf-8", newline="\n") as f:
        for key, val in meta.items():
            f.write(f"{key}={val}\n")
        for k, p in enumerate(ds.provenance):
            f.write(f"traj.{k}={p.seed},{p.origin},{p.step},{p.Ef!r}\n")


def read_meta(path) -> dict[str, str]:
    meta = {}
    with open(_meta_path(path), encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise MalformedDatasetError(_meta_path(path), lineno, "expected key=value")
            key, val = line.split("=", 1)
            meta[key.strip()] = val.strip()
    return meta


def _direction(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    st = np.sin(theta)
    return np.column_stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)])


def read_dataset(path) -> OptimalControlDataset:
    """Read a dataset written by :func:`write_dataset`.

    Raises
    ------
    MalformedDatasetError
        On a bad header, wrong field count, unparsable or non-finite value,
        or non-contiguous trajectory/node ids; the message carries the line.
    """
    rows = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if header != ",".join(COLUMNS):
            raise MalformedDatasetError(path, 1, "unexpected header")
        for lineno, line in enumerate(f, 2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(COLUMNS):
                raise MalformedDatasetError(path, lineno, f"expected {len(COLUMNS)} fields, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise MalformedDatasetError(path, lineno, "unparsable number") from None
            if not all(math.isfinite(v) for v in vals):
                raise MalformedDatasetError(path, lineno, "non-finite value")
            rows.append((lineno, vals))

    meta_raw = read_meta(path) if os.path.exists(_meta_path(path)) else {}
    label = meta_raw.get("alpha_label", "QOC")
    trajs, prov = [], []
    k = 0
    i = 0
    while i < len(rows):
        j = i
        while j < len(rows) and rows[j][1][0] == k:
            j += 1
        if j == i:
            raise MalformedDatasetError(path, rows[i][0], f"expected traj_id {k}")
        block = np.array([r[1] for r in rows[i:j]])
        if not np.array_equal(block[:, 1], np.arange(j - i)):
            raise MalformedDatasetError(path, rows[i][0], "node ids not contiguous")
        if np.any(np.diff(block[:, 3]) <= 0.0):
            raise MalformedDatasetError(path, rows[i][0], "node times not strictly increasing")
        dirs = _direction(block[:, 19], block[:, 20])
        trajs.append(TrajectoryRecord(block[:, 3], block[:, 4:18], float(block[0, 2]), True, u=block[:, 18], dirs=dirs, angles=block[:, 19:21]))
        p = meta_raw.get(f"traj.{k}")
        if p is not None:
            seed, origin, step, Ef = p.split(",")
            prov.append(TrajectoryProvenance(int(seed), int(origin), int(step), float(Ef)))
        else:
            prov.append(TrajectoryProvenance(-1, -1, -1, math.nan))
        k += 1
        i = j
    skip = {"format", "alpha_label", "trajectories", "pairs", "created"}
    meta = {key: val for key, val in meta_raw.items() if key not in skip and not key.startswith("traj.")}
    return OptimalControlDataset(trajs, label, prov, meta)
