"""Command-line pipeline: nominal -> generate -> train -> evaluate -> rollout.

Every command reads the same config file and works inside one output
directory. Exit codes: 0 success, 2 config or usage error, 3 solver failure,
4 I/O error (including missing prerequisite files).
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .astro import BoundaryOrbit, CanonicalUnits, ElementsError, KeplerElements
from .datagen import (
    HomotopyConfig,
    MalformedDatasetError,
    OptimalControlDataset,
    TrajectoryProvenance,
    WalkConfig,
    build_moc_dataset,
    build_qoc_dataset,
    default_threads,
    read_dataset,
    read_meta,
    write_dataset,
)
from .dynamics import EngineParams
from .nn import MalformedModelError, TargetMismatchError, TrainConfig, TrainingDivergedError, Trainer, dataset_arrays, load_model, parse_targets, save_model, split_groups
from .rollout import NetworkController, ZeroThrustController, closed_loop_rollout, evaluate_on_trajectory, export_figure_data
from .shooting import ExhaustedRestartsError, ShootingUnknowns, TpbvpSolution, TransferProblem, shooting_residuals, solve_nominal

log = logging.getLogger("pontryagus")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class MissingPrerequisiteError(FileNotFoundError):
    pass


class SolverFailure(RuntimeError):
    pass


def default_config_text() -> str:
    return resources.files("pontryagus").joinpath("data/desk.cfg").read_text(encoding="utf-8")


@dataclass
class RunConfig:
    units: CanonicalUnits
    g0: float
    departure: BoundaryOrbit
    arrival: BoundaryOrbit
    elements_deg: dict
    m0_kg: float
    tmax_n: float
    isp_s: float
    time_weight: float
    nominal_seed: int
    max_restarts: int
    walk: WalkConfig
    homotopy: HomotopyConfig
    train: TrainConfig
    held_out: int
    control_updates: int
    output_dir: Path

    def problem(self) -> TransferProblem:
        c1, c2 = self.units.engine_constants(self.tmax_n, self.isp_s, self.g0)
        return TransferProblem(self.departure, self.arrival, EngineParams(c1, c2, 0.0), 1.0, 1.0, self.time_weight)

    def describe(self) -> dict:
        u = self.units
        out = {
            "length_unit_m": repr(u.length_unit),
            "mass_unit_kg": repr(u.mass_unit),
            "time_unit_s": repr(u.time_unit),
            "time_weight": repr(self.time_weight),
        }
        for side, el in self.elements_deg.items():
            out[f"{side}_elements"] = ",".join(f"{k}={v!r}" for k, v in el.items())
        return out


def _get(cp, section, key, conv=float):
    try:
        raw = cp.get(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError):
        raise ConfigError(f"missing [{section}] {key}") from None
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _positive(value, name):
    if not (math.isfinite(value) and value > 0.0):
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


def load_config(path=None, seed_override: str | None = None, output_dir=None) -> RunConfig:
    """Parse and validate a run configuration; ``path=None`` uses the packaged desk config.

    ``seed_override`` (normally ``$PONTRYAGUS_SEED``) replaces every seed.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is None:
        cp.read_string(default_config_text())
    else:
        try:
            with open(path, encoding="utf-8") as f:
                cp.read_file(f)
        except OSError as exc:
            raise MissingPrerequisiteError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None

    mu_sun = _positive(_get(cp, "constants", "mu_sun"), "mu_sun")
    au = _positive(_get(cp, "constants", "au"), "au")
    g0 = _positive(_get(cp, "constants", "g0"), "g0")
    m0 = _positive(_get(cp, "engine", "m0_kg"), "m0_kg")
    units = CanonicalUnits(au, m0, mu_sun)

    orbits, el_deg = {}, {}
    for side in ("departure", "arrival"):
        vals = {k: _get(cp, side, k) for k in ("a_au", "e", "i_deg", "argp_deg", "raan_deg")}
        _positive(vals["a_au"], f"[{side}] a_au")
        try:
            el = KeplerElements(vals["a_au"], vals["e"], math.radians(vals["i_deg"]), math.radians(vals["argp_deg"]), math.radians(vals["raan_deg"]))
        except ElementsError as exc:
            raise ConfigError(f"[{side}] {exc}") from None
        orbits[side] = BoundaryOrbit(el, 1.0)
        el_deg[side] = vals

    seeds = {}
    for sec in ("nominal", "walk", "training"):
        seeds[sec] = _get(cp, sec, "seed", int)
    if seed_override is not None:
        try:
            s = int(seed_override)
        except ValueError:
            raise ConfigError(f"PONTRYAGUS_SEED must be an integer, got {seed_override!r}") from None
        seeds = dict.fromkeys(seeds, s)

    try:
        walk = WalkConfig(_get(cp, "walk", "gamma_bar"), _get(cp, "walk", "n", int), _get(cp, "walk", "start_points", int), seeds["walk"])
        hom = HomotopyConfig(_get(cp, "homotopy", "alpha_tol"), _get(cp, "homotopy", "max_iters", int))
        tr = TrainConfig(
            batch=_get(cp, "training", "batch", int),
            lr0=_get(cp, "training", "lr0"),
            lr_factor=_get(cp, "training", "lr_factor"),
            lr_patience=_get(cp, "training", "lr_patience", int),
            stop_patience=_get(cp, "training", "stop_patience", int),
            plateau_delta=_get(cp, "training", "plateau_delta"),
            val_fraction=_get(cp, "training", "val_fraction"),
            seed=seeds["training"],
            max_epochs=_get(cp, "training", "max_epochs", int),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None

    time_weight = _get(cp, "problem", "time_weight")
    if not (math.isfinite(time_weight) and time_weight >= 0.0):
        raise ConfigError("time_weight must be non-negative")
    held_out = _get(cp, "evaluation", "held_out", int)
    updates = _get(cp, "evaluation", "control_updates", int)
    if held_out < 1 or updates < 1:
        raise ConfigError("held_out and control_updates must be positive")
    max_restarts = _get(cp, "nominal", "max_restarts", int)
    if max_restarts < 1:
        raise ConfigError("max_restarts must be positive")
    out = Path(output_dir) if output_dir is not None else Path(_get(cp, "output", "directory", str))
    return RunConfig(
        units,
        g0,
        orbits["departure"],
        orbits["arrival"],
        el_deg,
        m0,
        _positive(_get(cp, "engine", "tmax_n"), "tmax_n"),
        _positive(_get(cp, "engine", "isp_s"), "isp_s"),
        time_weight,
        seeds["nominal"],
        max_restarts,
        walk,
        hom,
        tr,
        held_out,
        updates,
        out,
    )


# -- file helpers -------------------------------------------------------------


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingPrerequisiteError(f"missing prerequisite {path} (run `pontryagus {hint}` first)")
    return path


def _nominal_path(cfg: RunConfig, label: str) -> Path:
    return cfg.output_dir / f"nominal_{label}.csv"


def _dataset_path(cfg: RunConfig, label: str) -> Path:
    return cfg.output_dir / f"{label}.csv"


def load_nominal(cfg: RunConfig, label: str) -> TpbvpSolution:
    path = _require(_nominal_path(cfg, label), "nominal")
    ds = read_dataset(path)
    meta = read_meta(path)
    traj = ds.trajectories[0]
    z = ShootingUnknowns(traj.lam0, traj.duration, float(meta["E0"]), ds.provenance[0].Ef)
    prob = cfg.problem().with_alpha(traj.alpha)
    return TpbvpSolution(z, traj.alpha, True, shooting_residuals(z, prob), traj)


def _write_nominal(cfg: RunConfig, label: str, sol: TpbvpSolution, seed: int) -> None:
    ds = OptimalControlDataset([sol.trajectory], label, [TrajectoryProvenance(seed, -1, 0, sol.z.Ef)])
    extra = {"seed": seed, "E0": repr(sol.z.E0), "dt": repr(sol.z.dt), "residual_norm": repr(sol.residual_norm), "jacobian_cond": repr(sol.jacobian_cond)}
    extra.update(cfg.describe())
    write_dataset(ds, _nominal_path(cfg, label), extra)


def _summary_lines(label: str, sol: TpbvpSolution, units: CanonicalUnits) -> list[str]:
    traj = sol.trajectory
    switches = int(np.count_nonzero(np.diff(traj.u) != 0.0)) if label == "moc" else None
    days = sol.z.dt * units.time_unit / 86400.0
    line = f"{label.upper()}: dt={sol.z.dt:.10g} TU ({days:.2f} d) final_mass={traj.final_mass:.10g} MU ({traj.final_mass * units.mass_unit:.3f} kg) residual={sol.residual_norm:.3e} cond={sol.jacobian_cond:.3e}"
    if switches is not None:
        line += f" switches={switches}"
    return [line]


# -- commands -----------------------------------------------------------------


def cmd_nominal(cfg: RunConfig, args) -> int:
    prob = cfg.problem()
    try:
        nom = solve_nominal(prob, cfg.nominal_seed, cfg.max_restarts, cfg.homotopy)
    except ExhaustedRestartsError as exc:
        raise SolverFailure(str(exc)) from None
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    _write_nominal(cfg, "qoc", nom.qoc, cfg.nominal_seed)
    _write_nominal(cfg, "moc", nom.moc, cfg.nominal_seed)
    export_figure_data({"qoc": nom.qoc.trajectory, "moc": nom.moc.trajectory}, cfg.output_dir / "fig1_nominal.csv")
    lines = [f"seed={cfg.nominal_seed} restarts={nom.restarts}"]
    lines += _summary_lines("qoc", nom.qoc, cfg.units) + _summary_lines("moc", nom.moc, cfg.units)
    (cfg.output_dir / "nominal_summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK


def cmd_generate(cfg: RunConfig, args) -> int:
    prob = cfg.problem()
    if args.alpha_label == "qoc":
        nominal = load_nominal(cfg, "qoc")
        ds = build_qoc_dataset(nominal, prob, cfg.walk, args.threads)
    else:
        qoc = read_dataset(_require(_dataset_path(cfg, "qoc"), "generate --alpha-label qoc"))
        if len(qoc) == 0:
            raise SolverFailure("QOC dataset is empty")
        ds = build_moc_dataset(qoc, prob, cfg.homotopy, args.threads)
    write_dataset(ds, _dataset_path(cfg, args.alpha_label), cfg.describe())
    if args.alpha_label == "qoc":
        print(f"QOC: {len(ds)} trajectories, {ds.n_pairs} state-control pairs ({ds.meta['walk_successes']}/{ds.meta['walk_attempts']} walk solves converged)")
    else:
        print(f"MOC: {len(ds)} trajectories, {ds.n_pairs} state-control pairs ({ds.meta['homotopy_successes']}/{ds.meta['homotopy_attempts']} homotopies converged)")
    return EXIT_OK


def _model_stem(label: str, targets) -> str:
    return f"model_{label.lower()}_{'-'.join(targets)}"


def cmd_train(cfg: RunConfig, args) -> int:
    targets = args.targets
    ds = read_dataset(_require(Path(args.dataset), "generate"))
    if len(ds) < 2:
        raise SolverFailure("dataset needs at least two trajectories for a validation split")
    tcfg = cfg.train
    if args.max_epochs is not None:
        tcfg = TrainConfig(**{**tcfg.__dict__, "max_epochs": args.max_epochs})
    X, Y, groups = dataset_arrays(ds, targets)
    trainer = Trainer(X, Y, groups, targets, tcfg)
    try:
        model, report = trainer.fit()
    except TrainingDivergedError as exc:
        raise SolverFailure(f"training diverged at epoch {exc.epoch}; last finite epoch {exc.last_finite_epoch}") from None
    out = Path(args.out) if args.out else cfg.output_dir / f"{_model_stem(ds.alpha_label, targets)}.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    export_figure_data(report, out.with_name(out.stem + "_history.csv"))
    mse = " ".join(f"{k}={v:.4g}" for k, v in report.final_mse.items())
    print(f"{ds.alpha_label} {','.join(targets)}: epochs={report.epochs_run} val_mse(scaled) {mse} -> {out}")
    return EXIT_OK


def _held_out(ds: OptimalControlDataset, model, count: int, val_fraction: float) -> list[int]:
    """Trajectory indices from the model's validation split, evenly spread.

    The split is re-derived from the model seed exactly as training drew it.
    """
    groups = ds.trajectory_index()
    _, va = split_groups(groups, val_fraction, np.random.default_rng(model.seed))
    ids = np.unique(groups[va])
    pick = np.unique(np.linspace(0, len(ids) - 1, min(count, len(ids))).round().astype(int))
    return [int(ids[k]) for k in pick]


def cmd_evaluate(cfg: RunConfig, args) -> int:
    model = load_model(_require(Path(args.model), "train"))
    ds = read_dataset(_require(Path(args.dataset), "generate"))
    requested = args.targets if args.targets is not None else model.targets
    tag = Path(args.model).stem.removeprefix("model_")
    for n, k in enumerate(_held_out(ds, model, cfg.held_out, cfg.train.val_fraction)):
        rep = evaluate_on_trajectory(model, ds.trajectories[k], requested)
        path = cfg.output_dir / f"fig3_{tag}_transfer{n}.csv"
        export_figure_data(rep, path)
        mse = " ".join(f"{t}={v:.4g}" for t, v in rep.mse_scaled.items())
        print(f"trajectory {k}: mse(scaled) {mse} -> {path}")
    return EXIT_OK


def cmd_rollout(cfg: RunConfig, args) -> int:
    nominal = load_nominal(cfg, args.nominal)
    prob = cfg.problem().with_alpha(nominal.alpha)
    if args.zero_thrust:
        ctrl, tag = ZeroThrustController(), "zero"
    else:
        if not args.model:
            raise ConfigError("rollout needs --model (one or more) or --zero-thrust")
        ctrl = NetworkController([load_model(_require(Path(p), "train")) for p in args.model])
        tag = "network"
    traj = nominal.trajectory
    res = closed_loop_rollout(ctrl, traj.x0, traj.duration, prob, traj.duration / cfg.control_updates)
    path = cfg.output_dir / f"rollout_{args.nominal}_{tag}.csv"
    export_figure_data(res, path)
    used_nom = traj.x0[6] - traj.final_mass
    print(
        f"rollout ({tag}) from nominal {args.nominal.upper()}: arrival_pos_err={res.arrival_pos_err:.4e} LU "
        f"arrival_vel_err={res.arrival_vel_err:.4e} LU/TU propellant={res.propellant_used:.6g} MU "
        f"(nominal {used_nom:.6g}) -> {path}"
    )
    return EXIT_OK


def cmd_export(cfg: RunConfig, args) -> int:
    qoc, moc = load_nominal(cfg, "qoc"), load_nominal(cfg, "moc")
    export_figure_data({"qoc": qoc.trajectory, "moc": moc.trajectory}, cfg.output_dir / "fig1_nominal.csv")
    written = ["fig1_nominal.csv"]
    for label in ("qoc", "moc"):
        p = _dataset_path(cfg, label)
        if p.exists():
            ds = read_dataset(p)
            step = max(1, len(ds) // args.max_trajectories) if len(ds) else 1
            sel = {f"traj{k}": ds.trajectories[k] for k in range(0, len(ds), step)}
            export_figure_data(sel, cfg.output_dir / f"fig2_{label}_dataset.csv")
            written.append(f"fig2_{label}_dataset.csv")
    print("wrote " + ", ".join(written))
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def _targets_arg(text: str):
    try:
        return parse_targets(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (default: packaged desk config)")
    common.add_argument("--output-dir", help="override [output] directory")
    common.add_argument("--threads", type=_positive_int, default=None, help="worker processes for data generation (default: available cores)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    p = argparse.ArgumentParser(prog="pontryagus", description="Optimal low-thrust transfers, optimal-control datasets and learned guidance.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("nominal", parents=[common], help="solve the nominal QOC and MOC transfers", description="Multistart solve of the quadratic-control nominal, then continuation to mass-optimal.")

    g = sub.add_parser("generate", parents=[common], help="build a QOC or MOC dataset", description="QOC: random walks around the nominal. MOC: homotopy from every QOC trajectory.")
    g.add_argument("--alpha-label", choices=("qoc", "moc"), required=True, help="which dataset to build")

    t = sub.add_parser("train", parents=[common], help="train a guidance network", description="Train a network on a dataset for a subset of u, theta, phi.")
    t.add_argument("--dataset", required=True, help="dataset CSV")
    t.add_argument("--targets", type=_targets_arg, default=("u", "theta", "phi"), help="comma-separated subset of u,theta,phi (default: all)")
    t.add_argument("--out", help="model file (default: <output>/model_<label>_<targets>.txt)")
    t.add_argument("--max-epochs", type=_positive_int, default=None, help="override [training] max_epochs")

    e = sub.add_parser("evaluate", parents=[common], help="compare predictions with held-out optimal trajectories", description="Per-node predictions on held-out transfers of the model's validation split.")
    e.add_argument("--model", required=True, help="model file")
    e.add_argument("--dataset", required=True, help="dataset CSV the model was trained on")
    e.add_argument("--targets", type=_targets_arg, default=None, help="expected target set; must match the model")

    r = sub.add_parser("rollout", parents=[common], help="closed-loop flight with networks as controller", description="Fly from the nominal initial state with zero-order-hold network feedback.")
    r.add_argument("--model", action="append", help="model file; repeat to combine models covering u, theta and phi")
    r.add_argument("--zero-thrust", action="store_true", help="use a zero-thrust controller instead of a model")
    r.add_argument("--nominal", choices=("qoc", "moc"), default="moc", help="nominal providing x0 and duration (default: moc)")

    x = sub.add_parser("export", parents=[common], help="write figure-data CSVs for the nominals and datasets", description="Re-export plot data from files in the output directory.")
    x.add_argument("--max-trajectories", type=_positive_int, default=50, help="dataset trajectories to include per figure")
    return p


COMMANDS = {
    "nominal": cmd_nominal,
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "rollout": cmd_rollout,
    "export": cmd_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    if args.threads is None:
        args.threads = default_threads()
    try:
        cfg = load_config(args.config, os.environ.get("PONTRYAGUS_SEED"), args.output_dir)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, TargetMismatchError) as exc:
        print(f"pontryagus: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverFailure as exc:
        print(f"pontryagus: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, MalformedDatasetError, MalformedModelError) as exc:
        print(f"pontryagus: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
