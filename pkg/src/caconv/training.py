"""MSE loss, Nadam, plateau learning-rate decay, early stopping and the epoch loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import Dataset
from .errors import DimensionError, DivergenceError, NumericError, UsageError
from .metrics import mean_example_metrics
from .model import Model
from .tensor import Tensor, as_tensor, backward, mean, square, sub

log = logging.getLogger(__name__)

LOG_HEADER = "epoch,train_loss,val_loss,val_f2,lr"


def mse_loss(pred, target) -> Tensor:
    """Mean of ``(P_l - y_l)^2`` over classes (and over the batch, if any)."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    return mean(square(sub(pred, Tensor(target))))


@dataclass
class NadamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def nadam_step(params: dict[str, Tensor], state: NadamState,
               grads: dict[str, np.ndarray] | None = None) -> None:
    """One Nesterov-Adam update, in place.

    With ``m``/``v`` the moment estimates after this step::

        m_hat = m / (1 - beta1^(t+1))
        g_hat = g / (1 - beta1^t)
        v_hat = v / (1 - beta2^t)
        theta -= lr * (beta1 * m_hat + (1 - beta1) * g_hat) / (sqrt(v_hat) + eps)
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items() if p.requires_grad}
    for k, g in grads.items():
        if g is None:
            continue
        if g.shape != params[k].shape:
            raise DimensionError(f"gradient for {k} has shape {g.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {k}; step aborted")
    state.t += 1
    t, b1, b2 = state.t, state.beta1, state.beta2
    c_m = 1.0 - b1 ** (t + 1)
    c_g = 1.0 - b1 ** t
    c_v = 1.0 - b2 ** t
    for k, g in grads.items():
        if g is None:
            continue
        m = state.m.setdefault(k, np.zeros_like(g))
        v = state.v.setdefault(k, np.zeros_like(g))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = (b1 * (m / c_m) + (1.0 - b1) * (g / c_g)) / (np.sqrt(v / c_v) + state.eps)
        params[k].data -= state.lr * step


@dataclass(frozen=True)
class TrainSchedule:
    batch_size: int = 32
    max_epochs: int = 100
    lr: float = 1e-4
    plateau_decay: float = 0.1
    decay_patience: int = 3
    early_stop_patience: int = 5

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise UsageError("batch size and epoch count must be positive")
        if self.decay_patience < 1 or self.early_stop_patience < 1:
            raise UsageError("patience values must be positive")
        if not 0.0 < self.plateau_decay < 1.0 or self.lr <= 0:
            raise UsageError("decay must lie in (0, 1) and lr must be positive")


class PlateauDecay:
    """Cut the learning rate after ``patience`` epochs without a new best score."""

    def __init__(self, lr0: float, factor: float, patience: int):
        self.lr0, self.factor, self.patience = lr0, factor, patience
        self.events = 0
        self.best = -np.inf
        self.stale = 0

    @property
    def lr(self) -> float:
        return self.lr0 * self.factor ** self.events

    def update(self, score: float) -> bool:
        if score > self.best:
            self.best, self.stale = score, 0
            return False
        self.stale += 1
        if self.stale >= self.patience:
            self.events += 1
            self.stale = 0
            return True
        return False


class EarlyStopping:
    """Signal a stop once the monitored loss has not decreased for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.stale = 0

    def update(self, loss: float) -> bool:
        if loss < self.best:
            self.best, self.stale = loss, 0
        else:
            self.stale += 1
        return self.stale >= self.patience


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_f2: float
    lr: float

    def csv(self) -> str:
        return f"{self.epoch},{self.train_loss!r},{self.val_loss!r},{self.val_f2!r},{self.lr!r}"


@dataclass
class TrainResult:
    best_arrays: dict[str, np.ndarray]
    best_epoch: int
    history: list[EpochLog]
    stopped_early: bool

    def log_text(self) -> str:
        return "\n".join([LOG_HEADER] + [row.csv() for row in self.history]) + "\n"

    def write_log(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.log_text())


def evaluate_split(model: Model, data: Dataset, threshold: float = 0.5, batch_size: int = 64
                   ) -> tuple[float, float]:
    """Mean MSE and mean example F2 of ``model`` on ``data``."""
    probs = model.predict(data.images, batch_size)
    loss = float(np.mean((probs - data.labels) ** 2))
    f2, _, _ = mean_example_metrics((probs >= threshold).astype(int), data.labels)
    return loss, f2


def train(model: Model, train_set: Dataset, val_set: Dataset, schedule: TrainSchedule,
          seed: int = 0, threshold: float = 0.5, on_epoch=None) -> TrainResult:
    """Mini-batch Nadam on MSE until ``max_epochs`` or early stop.

    Tracks the epoch with the best validation F2 (lower validation loss breaks
    ties) and returns its parameters. The model keeps the final parameters.
    ``on_epoch(row)`` is called after every epoch; a true return ends the run.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise UsageError("training and validation sets must be nonempty")
    if train_set.labels.shape[1] != model.config.n_classes:
        raise DimensionError(f"dataset has {train_set.labels.shape[1]} classes, model "
                             f"{model.config.n_classes}")
    rng = np.random.default_rng(seed)
    params = model.parameters()
    opt = NadamState(lr=schedule.lr)
    plateau = PlateauDecay(schedule.lr, schedule.plateau_decay, schedule.decay_patience)
    stopper = EarlyStopping(schedule.early_stop_patience)
    history: list[EpochLog] = []
    best = (-np.inf, np.inf)
    best_arrays, best_epoch, stopped = model.state_arrays(), 0, False
    n = len(train_set)
    for epoch in range(1, schedule.max_epochs + 1):
        lr_used = opt.lr
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, schedule.batch_size):
            idx = order[start:start + schedule.batch_size]
            for p in params.values():
                p.zero_grad()
            try:
                loss = mse_loss(model.forward(Tensor(train_set.images[idx])),
                                train_set.labels[idx])
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError("non-finite loss")
                backward(loss)
                nadam_step(params, opt)
            except NumericError as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}: {exc}") from None
            total += value * len(idx)
        train_loss = total / n
        try:
            val_loss, val_f2 = evaluate_split(model, val_set, threshold)
        except NumericError as exc:
            raise DivergenceError(f"validation diverged at epoch {epoch}: {exc}") from None
        row = EpochLog(epoch, train_loss, val_loss, val_f2, lr_used)
        history.append(row)
        log.info("epoch %d train %.5f val %.5f f2 %.4f lr %.2e", epoch, train_loss, val_loss,
                 val_f2, lr_used)
        if (val_f2, -val_loss) > (best[0], -best[1]):
            best = (val_f2, val_loss)
            best_arrays, best_epoch = model.state_arrays(), epoch
        if on_epoch is not None and on_epoch(row):
            break
        plateau.update(val_f2)
        opt.lr = plateau.lr
        if stopper.update(val_loss):
            stopped = True
            break
    return TrainResult(best_arrays, best_epoch, history, stopped)


def holdout(data: Dataset, fraction: float = 0.1, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded (train, validation) split holding out ``fraction`` of ``data``."""
    n = len(data)
    k = max(1, int(np.floor(fraction * n + 0.5)))
    if k >= n:
        raise UsageError(f"cannot hold out {k} of {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(perm[k:])), data.subset(np.sort(perm[:k]))
