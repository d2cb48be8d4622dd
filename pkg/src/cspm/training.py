"""Training engine: softmax cross-entropy, Adam, the training loop, and a
finite-difference gradient checker.

The loop is deterministic given (config, data, seed): parameter init comes
from the model's seed, epoch shuffles from default_rng([seed, epoch]), and
everything runs single-threaded unless BLAS is told otherwise. The gradient
checker always builds its numeric reference from central differences on a
float64 twin; the analytic gradient is computed at the precision under test.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, StateError
from .model import CSPMNet, ModelConfig, save_checkpoint

DEFAULT_BUDGET = 300_000


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy over the batch and its logits cotangent.

    Internally computed in float64 with max subtraction; the gradient
    (softmax - onehot) / B is cast back to the logits dtype.

    Returns:
        (loss: float, grad_logits: array shaped like logits).
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"bad shapes: logits {logits.shape}, labels {labels.shape}")
    b, c = logits.shape
    if b == 0:
        raise ShapeError("empty batch")
    if labels.dtype.kind not in "iu":
        raise ConfigError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.min() < 0 or labels.max() >= c:
        raise ConfigError("label out of range")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=1))
    rows = np.arange(b)
    loss = float(np.mean(lse - z[rows, labels]))
    p = np.exp(z - lse[:, None])
    p[rows, labels] -= 1.0
    return loss, (p / b).astype(logits.dtype)


class Adam:
    """Textbook Adam with bias correction; state lives in the parameter dtype.

    Only trainable parameters are registered. A non-finite gradient aborts
    with NumericError naming the offending tensor.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0 or eps <= 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ConfigError("bad Adam hyperparameters")
        self.params = [p for p in params if p.trainable]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                raise StateError(f"no gradient for {p.name}; run backward first")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in {p.name}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 512
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 42
    budget: int = DEFAULT_BUDGET
    shuffle: bool = True
    restore_best: bool = True
    stop_at_val_accuracy: float = None   # opt-in early exit; None = run all epochs

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.stop_at_val_accuracy is not None and not 0 < self.stop_at_val_accuracy <= 1:
            raise ConfigError("stop_at_val_accuracy must be in (0, 1]")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy", "seconds"])
            for i in range(self.epochs_run):
                writer.writerow([i + 1, repr(self.train_loss[i]), repr(self.val_loss[i]),
                                 repr(self.val_accuracy[i]), f"{self.seconds[i]:.3f}"])
        os.replace(tmp, path)

    @classmethod
    def from_csv(cls, path: str) -> "TrainHistory":
        hist = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                hist.train_loss.append(float(row["train_loss"]))
                hist.val_loss.append(float(row["val_loss"]))
                hist.val_accuracy.append(float(row["val_accuracy"]))
                hist.seconds.append(float(row["seconds"]))
        return hist


@dataclass
class TrainResult:
    history: TrainHistory
    best_epoch: int            # 1-based, earliest epoch achieving the best val accuracy
    best_val_accuracy: float
    trainable_params: int
    best_checkpoint: str = None
    last_checkpoint: str = None
    history_path: str = None


def count_trainable(model: CSPMNet) -> int:
    return int(sum(p.value.size for p in model.trainable_params()))


def _as_arrays(data, model: CSPMNet, role: str):
    if hasattr(data, "to_arrays"):
        if len(data.class_names) != model.config.n_classes:
            raise ConfigError(
                f"{role} set has {len(data.class_names)} classes, "
                f"model expects {model.config.n_classes}")
        if data.seq_len != model.config.seq_len:
            raise ConfigError(
                f"{role} set length {data.seq_len} != model length {model.config.seq_len}")
        x, y, _ = data.to_arrays()
    else:
        x, y = data
        x = np.asarray(x)
        y = np.asarray(y)
    if x.ndim != 3 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ShapeError(f"bad {role} arrays: x {x.shape}, y {y.shape}")
    return x, y


def _snapshot(model: CSPMNet) -> dict:
    return {name: p.value.copy() for name, p in model.state_items()}


def _restore(model: CSPMNet, state: dict) -> None:
    for name, p in model.state_items():
        p.value = state[name].copy()


def train(model: CSPMNet, train_set, val_set, config: TrainConfig = None,
          out_dir: str = None, on_epoch=None) -> TrainResult:
    """Train the model with Adam on softmax cross-entropy.

    Refuses to start if the trainable parameter count exceeds config.budget.
    Tracks the best validation accuracy (earliest epoch wins ties); at the
    end the best state is restored into the model (config.restore_best) and,
    when out_dir is given, best.ckpt / last.ckpt / history.csv are written.
    `on_epoch(epoch_1based, history)` is called after each epoch's metrics.
    """
    config = config or TrainConfig()
    n_params = count_trainable(model)
    if n_params > config.budget:
        raise ConfigError(
            f"trainable parameter count {n_params} exceeds budget {config.budget}")
    x_tr, y_tr = _as_arrays(train_set, model, "train")
    x_val, y_val = _as_arrays(val_set, model, "val")

    opt = Adam(model.trainable_params(), lr=config.learning_rate,
               beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    history = TrainHistory()
    best_acc = -1.0
    best_epoch = -1
    best_state = None
    n = x_tr.shape[0]

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        if config.shuffle:
            order = np.random.default_rng([config.seed, epoch]).permutation(n)
        else:
            order = np.arange(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            logits, cache = model.forward(x_tr[idx], train=True)
            loss, grad = cross_entropy(logits, y_tr[idx])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch + 1}")
            model.backward(grad, cache)
            opt.step()
            total += loss * idx.size
        val_logits = model.predict_logits(x_val, batch_size=config.batch_size)
        val_loss, _ = cross_entropy(val_logits, y_val)
        val_acc = float(np.mean(np.argmax(val_logits, axis=1) == y_val))
        history.train_loss.append(total / n)
        history.val_loss.append(val_loss)
        history.val_accuracy.append(val_acc)
        history.seconds.append(time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(epoch + 1, history)
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch + 1
            best_state = _snapshot(model)
        if (config.stop_at_val_accuracy is not None
                and val_acc >= config.stop_at_val_accuracy):
            break

    result = TrainResult(history=history, best_epoch=best_epoch,
                         best_val_accuracy=best_acc, trainable_params=n_params)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.last_checkpoint = os.path.join(out_dir, "last.ckpt")
        save_checkpoint(model, result.last_checkpoint)
    if config.restore_best and best_state is not None:
        _restore(model, best_state)
    if out_dir is not None:
        result.best_checkpoint = os.path.join(out_dir, "best.ckpt")
        if not config.restore_best:
            current = _snapshot(model)
            _restore(model, best_state)
            save_checkpoint(model, result.best_checkpoint)
            _restore(model, current)
        else:
            save_checkpoint(model, result.best_checkpoint)
        result.history_path = os.path.join(out_dir, "history.csv")
        history.to_csv(result.history_path)
    return result


# ---------------------------------------------------------------------------
# Gradient checking


def default_gradcheck_config(variant: str = "full") -> ModelConfig:
    """The small configuration used for gradient verification."""
    return ModelConfig(
        n_classes=3, seq_len=16, variant=variant, n_subbands=2, kernel_len=5,
        lags=(1, 2, 4, 8), mix_channels=4, mix_kernel=3, hidden=3, attn_dim=4,
        mlp_hidden=4, dtype="f64")


@dataclass
class GradCheckReport:
    precision: str
    tolerance: float
    step: float
    group_errors: dict
    max_error: float
    passed: bool
    seconds: float

    def worst_group(self) -> str:
        return max(self.group_errors, key=self.group_errors.get)


def grad_check(config: ModelConfig = None, precision: str = "f64",
               step: float = 1e-5, tolerance: float = None, batch_size: int = 3,
               seed: int = 0, inject_fault: bool = False) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    The numeric reference is always computed on a float64 twin (an f32
    forward cannot resolve a 1e-5 step); the analytic gradient is computed
    at `precision`. Per parameter group the error is

        ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf, floor)

    Default tolerances: 1e-6 for f64, 1e-4 for f32. `inject_fault` flips the
    sign of the first group's analytic gradient (a self-test of the checker).
    """
    if precision not in ("f32", "f64"):
        raise ConfigError(f"precision must be f32 or f64, got {precision!r}")
    if tolerance is None:
        tolerance = 1e-6 if precision == "f64" else 1e-4
    if step <= 0:
        raise ConfigError("step must be positive")
    t_start = time.perf_counter()
    config = config or default_gradcheck_config()
    config = dataclasses.replace(config, dtype="f64")
    model64 = CSPMNet(config, seed=seed)
    rng = np.random.default_rng([seed, 1])
    x64 = rng.standard_normal((batch_size, 2, config.seq_len))
    labels = rng.integers(0, config.n_classes, size=batch_size)

    def loss64() -> float:
        logits, _ = model64.forward(x64, train=True, update_stats=False)
        return cross_entropy(logits, labels)[0]

    # analytic gradient at the requested precision
    model_p = model64 if precision == "f64" else model64.astype("f32")
    x_p = x64.astype(model_p.config.np_dtype)
    logits, cache = model_p.forward(x_p, train=True, update_stats=False)
    _, grad_logits = cross_entropy(logits, labels)
    model_p.backward(grad_logits, cache)

    group_errors = {}
    floor = 1e-12 if precision == "f64" else 1e-6
    first = True
    for name, p64 in model64.params.items():
        if not p64.trainable:
            continue
        analytic = model_p.params[name].grad.astype(np.float64)
        if inject_fault and first:
            analytic = -analytic
            first = False
        numeric = np.zeros_like(p64.value)
        it = np.nditer(p64.value, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            keep = p64.value[idx]
            p64.value[idx] = keep + step
            lp = loss64()
            p64.value[idx] = keep - step
            lm = loss64()
            p64.value[idx] = keep
            numeric[idx] = (lp - lm) / (2.0 * step)
            it.iternext()
        scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
        group_errors[name] = float(np.max(np.abs(analytic - numeric)) / scale)
    max_error = max(group_errors.values())
    return GradCheckReport(
        precision=precision, tolerance=tolerance, step=step,
        group_errors=group_errors, max_error=max_error,
        passed=max_error < tolerance, seconds=time.perf_counter() - t_start)
