"""Feed-forward guidance network written directly in numpy.

Inputs are the 7 state components, outputs a subset of the polar control
``(u, theta, phi)``. Inputs are z-scored and targets mapped affinely to
[-1, 1]; the loss is the MSE in that scaled space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

TARGET_NAMES = ("u", "theta", "phi")
TARGET_COLUMN = {"u": 0, "theta": 1, "phi": 2}
MODEL_MAGIC = "pontryagus-model"
MODEL_VERSION = "v1"
HIDDEN = (200, 200, 200, 200)


class ZeroVarianceError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, last_finite_epoch: int):
        self.epoch = epoch
        self.last_finite_epoch = last_finite_epoch
        super().__init__(f"loss became non-finite at epoch {epoch} (last finite epoch {last_finite_epoch})")


class MalformedModelError(ValueError):
    pass


class ModelVersionError(MalformedModelError):
    pass


class TargetMismatchError(ValueError):
    pass


def control_to_polar(ctrl) -> tuple[float, float, float]:
    """``(u, theta, phi)`` with theta in [0, pi] measured from +z and phi in (-pi, pi]."""
    d = np.asarray(ctrl.dir, dtype=float)
    theta = math.acos(max(-1.0, min(1.0, float(d[2]))))
    phi = math.atan2(float(d[1]), float(d[0]))
    return float(ctrl.u), theta, phi


def polar_to_direction(theta, phi) -> np.ndarray:
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def parse_targets(spec) -> tuple[str, ...]:
    """Normalise a target selection such as ``"u,phi"`` to canonical order."""
    names = [s.strip() for s in spec.split(",")] if isinstance(spec, str) else list(spec)
    bad = [n for n in names if n not in TARGET_COLUMN]
    if bad or not names or len(set(names)) != len(names):
        raise ValueError(f"invalid target selection {spec!r}; choose from {', '.join(TARGET_NAMES)}")
    return tuple(n for n in TARGET_NAMES if n in names)


@dataclass
class Normalization:
    mean: np.ndarray
    std: np.ndarray
    low: np.ndarray
    high: np.ndarray

    def inputs(self, X):
        return (X - self.mean) / self.std

    def scale(self, Y):
        return 2.0 * (Y - self.low) / (self.high - self.low) - 1.0

    def unscale(self, Ys):
        return self.low + 0.5 * (Ys + 1.0) * (self.high - self.low)


def fit_normalization(X, Y) -> Normalization:
    """Per-feature z-score statistics and per-target min/max maps to [-1, 1].

    Raises
    ------
    ZeroVarianceError
        If an input feature is constant or a target has zero range.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    if len(X) < 2:
        raise ValueError("at least two rows are needed")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    if np.any(std <= 0.0):
        raise ZeroVarianceError(f"zero-variance input feature(s) {np.flatnonzero(std <= 0.0).tolist()}")
    low, high = Y.min(axis=0), Y.max(axis=0)
    if np.any(high <= low):
        raise ZeroVarianceError(f"constant target column(s) {np.flatnonzero(high <= low).tolist()}")
    return Normalization(mean, std, low, high)


@dataclass
class GuidanceModel:
    """Weights ``W[k]`` of shape ``(fan_in, fan_out)``; layer ``k`` is ``h @ W[k] + b[k]``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    norm: Normalization
    targets: tuple[str, ...]
    seed: int = 0

    def __post_init__(self):
        if self.layer_dims[-1] != len(self.targets):
            raise ValueError("output width must equal the number of targets")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def forward_scaled(self, Xn: np.ndarray) -> np.ndarray:
        h = Xn
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
        return np.tanh(h @ self.weights[-1] + self.biases[-1])

    def forward(self, X) -> np.ndarray:
        """Predictions in native units for states ``X`` of shape ``(7,)`` or ``(N, 7)``."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        out = self.norm.unscale(self.forward_scaled(self.norm.inputs(np.atleast_2d(X))))
        if "u" in self.targets:
            k = self.targets.index("u")
            out[:, k] = np.clip(out[:, k], 0.0, 1.0)
        return out[0] if single else out

    __call__ = forward

    def copy(self) -> GuidanceModel:
        return GuidanceModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            Normalization(*(a.copy() for a in (self.norm.mean, self.norm.std, self.norm.low, self.norm.high))),
            self.targets,
            self.seed,
        )


def glorot_init(dims, rng: np.random.Generator) -> tuple[list[np.ndarray], list[np.ndarray]]:
    Ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Ws, bs


def _loss_and_grads(weights, biases, Xn, Ys, reduction="mean"):
    acts = [Xn]
    h = Xn
    for W, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    out = np.tanh(h @ weights[-1] + biases[-1])
    err = out - Ys
    n, k = Ys.shape
    denom = n * k if reduction == "mean" else k
    loss = float(np.sum(err * err)) / denom
    delta = (2.0 / denom) * err * (1.0 - out * out)
    gW = [None] * len(weights)
    gb = [None] * len(weights)
    for layer in range(len(weights) - 1, -1, -1):
        a = acts[layer]
        gW[layer] = a.T @ delta
        gb[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ weights[layer].T) * (a > 0.0)
    return loss, gW, gb


def backprop_gradient(model: GuidanceModel, X, Y, reduction: str = "mean", normalized: bool = False):
    """Loss and exact gradients with respect to every weight and bias.

    The loss is the squared error on scaled targets averaged over outputs and,
    for ``reduction="mean"``, over samples; ``"sum"`` sums over samples.

    Returns
    -------
    loss, grad_weights, grad_biases
    """
    if reduction not in ("mean", "sum"):
        raise ValueError("reduction must be 'mean' or 'sum'")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    if not normalized:
        X, Y = model.norm.inputs(X), model.norm.scale(Y)
    return _loss_and_grads(model.weights, model.biases, X, Y, reduction)


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 64
    lr0: float = 1e-3
    lr_factor: float = 10.0
    lr_patience: int = 10
    stop_patience: int = 50
    plateau_delta: float = 1e-4
    val_fraction: float = 0.10
    seed: int = 0
    max_epochs: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.batch, self.lr0, self.lr_factor, self.lr_patience, self.stop_patience, self.max_epochs) <= 0:
            raise ValueError("training parameters must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class TrainReport:
    epochs_run: int = 0
    train_loss_history: list[float] = field(default_factory=list)
    val_loss_history: list[float] = field(default_factory=list)
    lr_history: list[float] = field(default_factory=list)
    final_mse: dict[str, float] = field(default_factory=dict)
    stopped_early: bool = False


def split_groups(groups: np.ndarray, val_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Row masks for a whole-group split: the last fraction of a shuffled group list is validation."""
    uniq = np.unique(groups)
    if len(uniq) < 2:
        raise ValueError("at least two groups are needed for a validation split")
    perm = rng.permutation(uniq)
    n_val = min(len(uniq) - 1, max(1, int(round(val_fraction * len(uniq)))))
    val = np.isin(groups, perm[len(uniq) - n_val :])
    return ~val, val


class Trainer:
    """Stateful Adam training loop with plateau LR decay and early stopping.

    All state, including the shuffling generator, can be checkpointed with
    :meth:`save_checkpoint` and restored with :meth:`load_checkpoint`.
    """

    def __init__(self, X, Y, groups, targets, cfg: TrainConfig = TrainConfig()):
        self.cfg = cfg
        self.targets = tuple(targets)
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
        if len(X) == 0:
            raise ValueError("dataset is empty")
        if Y.shape[1] != len(self.targets):
            raise ValueError("one target column per target name is required")
        self.rng = np.random.default_rng(cfg.seed)
        tr, va = split_groups(np.asarray(groups), cfg.val_fraction, self.rng)
        norm = fit_normalization(X[tr], Y[tr])
        self.Xtr, self.Ytr = norm.inputs(X[tr]), norm.scale(Y[tr])
        self.Xva, self.Yva = norm.inputs(X[va]), norm.scale(Y[va])
        dims = [X.shape[1], *HIDDEN, len(self.targets)]
        Ws, bs = glorot_init(dims, self.rng)
        self.model = GuidanceModel(Ws, bs, norm, self.targets, cfg.seed)
        params = Ws + bs
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step = 0
        self.lr = cfg.lr0
        self.best = math.inf
        self.lr_wait = 0
        self.stop_wait = 0
        self.report = TrainReport()

    @property
    def done(self) -> bool:
        return self.report.stopped_early or self.report.epochs_run >= self.cfg.max_epochs

    def _adam(self, grads):
        c = self.cfg
        self.step += 1
        params = self.model.weights + self.model.biases
        b1t = 1.0 - c.beta1**self.step
        b2t = 1.0 - c.beta2**self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + c.eps)

    def val_mse(self) -> np.ndarray:
        out = self.model.forward_scaled(self.Xva)
        return np.mean((out - self.Yva) ** 2, axis=0)

    def run_epoch(self) -> float:
        c = self.cfg
        n = len(self.Xtr)
        perm = self.rng.permutation(n)
        total = 0.0
        for s in range(0, n, c.batch):
            idx = perm[s : s + c.batch]
            loss, gW, gb = _loss_and_grads(self.model.weights, self.model.biases, self.Xtr[idx], self.Ytr[idx])
            total += loss * len(idx)
            self._adam(gW + gb)
        loss = total / n
        rep = self.report
        rep.epochs_run += 1
        if not math.isfinite(loss):
            raise TrainingDivergedError(rep.epochs_run, rep.epochs_run - 1)
        rep.train_loss_history.append(loss)
        rep.val_loss_history.append(float(np.mean(self.val_mse())))
        rep.lr_history.append(self.lr)
        if loss < self.best - c.plateau_delta:
            self.best = loss
            self.lr_wait = self.stop_wait = 0
        else:
            self.lr_wait += 1
            self.stop_wait += 1
            if self.lr_wait >= c.lr_patience:
                self.lr /= c.lr_factor
                self.lr_wait = 0
            if self.stop_wait >= c.stop_patience:
                rep.stopped_early = True
        return loss

    def fit(self, callback=None) -> tuple[GuidanceModel, TrainReport]:
        while not self.done:
            self.run_epoch()
            if callback is not None:
                callback(self)
        self.report.final_mse = dict(zip(self.targets, map(float, self.val_mse())))
        return self.model, self.report

    # -- checkpointing ---------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        arrays = {}
        for k, (W, b) in enumerate(zip(self.model.weights, self.model.biases)):
            arrays[f"W{k}"], arrays[f"b{k}"] = W, b
        for k, (m, v) in enumerate(zip(self.m, self.v)):
            arrays[f"m{k}"], arrays[f"v{k}"] = m, v
        state = {
            "step": self.step,
            "lr": self.lr,
            "best": self.best,
            "lr_wait": self.lr_wait,
            "stop_wait": self.stop_wait,
            "rng": self.rng.bit_generator.state,
            "report": self.report.__dict__,
        }
        arrays["state"] = np.array(json.dumps(state))
        with open(path, "wb") as f:
            np.savez(f, **arrays)

    def load_checkpoint(self, path) -> None:
        with np.load(path) as data:
            n = len(self.model.weights)
            self.model.weights = [data[f"W{k}"].copy() for k in range(n)]
            self.model.biases = [data[f"b{k}"].copy() for k in range(n)]
            self.m = [data[f"m{k}"].copy() for k in range(2 * n)]
            self.v = [data[f"v{k}"].copy() for k in range(2 * n)]
            state = json.loads(str(data["state"]))
        self.step, self.lr, self.best = state["step"], state["lr"], state["best"]
        self.lr_wait, self.stop_wait = state["lr_wait"], state["stop_wait"]
        self.rng.bit_generator.state = state["rng"]
        self.report = TrainReport(**state["report"])


def dataset_arrays(ds, targets) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """States, selected target columns and trajectory ids of a dataset."""
    targets = parse_targets(targets)
    cols = [TARGET_COLUMN[t] for t in targets]
    return ds.states(), ds.targets()[:, cols], ds.trajectory_index()


def train(dataset, targets, cfg: TrainConfig = TrainConfig(), callback=None) -> tuple[GuidanceModel, TrainReport]:
    """Train a network on an :class:`~pontryagus.datagen.OptimalControlDataset`.

    Raises
    ------
    TrainingDivergedError
        If the epoch loss becomes non-finite.
    """
    targets = parse_targets(targets)
    X, Y, groups = dataset_arrays(dataset, targets)
    return Trainer(X, Y, groups, targets, cfg).fit(callback)


# -- persistence --------------------------------------------------------------


def _fmt(a) -> str:
    return ",".join(f"{x:.17g}" for x in np.ravel(a))


def save_model(model: GuidanceModel, path) -> None:
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"target_set={','.join(model.targets)}",
        f"layer_dims={','.join(map(str, model.layer_dims))}",
        f"seed={model.seed}",
        f"input_mean={_fmt(model.norm.mean)}",
        f"input_std={_fmt(model.norm.std)}",
        f"output_low={_fmt(model.norm.low)}",
        f"output_high={_fmt(model.norm.high)}",
    ]
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"weight {k} {W.shape[0]} {W.shape[1]}")
        lines.extend(_fmt(row) for row in W)
        lines.append(f"bias {k} {b.size}")
        lines.append(_fmt(b))
    lines.append("end")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _floats(text: str, n: int, lineno: int) -> np.ndarray:
    try:
        vals = np.array([float(x) for x in text.split(",")]) if text else np.empty(0)
    except ValueError:
        raise MalformedModelError(f"line {lineno}: unparsable number") from None
    if vals.size != n or not np.all(np.isfinite(vals)):
        raise MalformedModelError(f"line {lineno}: expected {n} finite values")
    return vals


def load_model(path) -> GuidanceModel:
    """Read a model written by :func:`save_model`.

    Raises
    ------
    ModelVersionError
        For a different format version.
    MalformedModelError
        For truncated or corrupt files.
    """
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if not lines or not lines[0].startswith(MODEL_MAGIC + " "):
        raise MalformedModelError("not a model file")
    version = lines[0].split(" ", 1)[1].strip()
    if version != MODEL_VERSION:
        raise ModelVersionError(f"unsupported model version {version!r} (expected {MODEL_VERSION})")
    pos = 1

    def take(prefix: str) -> str:
        nonlocal pos
        if pos >= len(lines) or not lines[pos].startswith(prefix):
            raise MalformedModelError(f"line {pos + 1}: expected {prefix!r}")
        pos += 1
        return lines[pos - 1][len(prefix) :]

    try:
        targets = parse_targets(take("target_set="))
        dims = [int(x) for x in take("layer_dims=").split(",")]
        seed = int(take("seed="))
    except ValueError as exc:
        raise MalformedModelError(str(exc)) from None
    stats = [_floats(take(key), n, pos) for key, n in (("input_mean=", dims[0]), ("input_std=", dims[0]), ("output_low=", dims[-1]), ("output_high=", dims[-1]))]
    Ws, bs = [], []
    for k, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        if take("weight ").split() != [str(k), str(fi), str(fo)]:
            raise MalformedModelError(f"line {pos}: weight header mismatch")
        Ws.append(np.array([_floats(take(""), fo, pos) for _ in range(fi)]).reshape(fi, fo))
        if take("bias ").split() != [str(k), str(fo)]:
            raise MalformedModelError(f"line {pos}: bias header mismatch")
        bs.append(_floats(take(""), fo, pos))
    if pos >= len(lines) or lines[pos] != "end":
        raise MalformedModelError("missing end marker (truncated file?)")
    return GuidanceModel(Ws, bs, Normalization(*stats), targets, seed)
