"""Training loop for the fusion detector.

Minibatch gradient descent with per-parameter adaptive moments (decay 0.9 /
0.999, epsilon 1e-8), global gradient-norm clipping at 1.0, and a fixed
per-epoch shuffle drawn from the run seed. Every epoch logs mean train focal
loss and validation AUROC; the returned checkpoint holds the parameters of
the best validation epoch. Instances are visited and reduced in a fixed
order, so two runs with the same seed produce byte-identical logs and
bit-identical checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .config import DetectorConfig
from .detector import init_params, loss_and_gradients
from .embeddings import EmbeddingSequence, InternalStateSet
from .errors import NonFiniteLoss, SingleClass, SingleClassDataset
from .evaluation import auroc
from .kernels import ParamStore
from .records import Record, confirmed_split


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_auroc: float  # nan when there is no validation split

    def format_line(self) -> str:
        val = "nan" if math.isnan(self.val_auroc) else repr(self.val_auroc)
        return f"{self.epoch},{repr(self.train_loss)},{val}"


@dataclass
class TrainResult:
    params: ParamStore
    config: DetectorConfig
    metrics: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auroc: float = float("nan")
    final_loss: float = float("nan")

    def to_checkpoint(self) -> Checkpoint:
        meta = {
            "epochs": len(self.metrics),
            "final_loss": self.final_loss,
            "seed": self.config.seed,
            "best_epoch": self.best_epoch,
            "best_val_auroc": self.best_val_auroc,
        }
        return Checkpoint(params=self.params, config=self.config, training_meta=meta)

    def metrics_text(self) -> str:
        lines = ["epoch,train_loss,val_auroc"]
        lines += [m.format_line() for m in self.metrics]
        return "\n".join(lines) + "\n"


class AdamOptimizer:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params: ParamStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(value) for name, value in params.items()}
        self.v = {name: np.zeros_like(value) for name, value in params.items()}

    def step(self) -> None:
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for name, value in self.params.items():
            grad = self.params.grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / correct1
            v_hat = self.v[name] / correct2
            self.params[name] = value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(params: ParamStore, max_norm: float = 1.0) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for grad in params.grads.values():
        total += float((grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for grad in params.grads.values():
            grad *= scale
    return norm


def _score_split(records, states, units, params, config) -> tuple[list[float], list[int]]:
    from .detector import forward

    scores, labels = [], []
    for record in records:
        output = forward(states[record.id], units[record.id], params, config)
        scores.append(output.p_halluc)
        labels.append(record.label)
    return scores, labels


def train(
    records: list[Record],
    states: dict[str, InternalStateSet],
    units: dict[str, EmbeddingSequence],
    config: DetectorConfig,
    log: "callable | None" = None,
) -> TrainResult:
    """Train on the confirmed train split, tracking val AUROC per epoch."""
    config.validate()
    train_records = confirmed_split(records, "train")
    val_records = confirmed_split(records, "val")

    n_pos = sum(1 for r in train_records if r.label == 1)
    n_neg = sum(1 for r in train_records if r.label == 0)
    if n_pos < 2 or n_neg < 2:
        raise SingleClassDataset(
            f"need >= 2 confirmed train records per class, got {n_neg} negative / {n_pos} positive"
        )
    val_labels_present = {r.label for r in val_records}
    if val_records and len(val_labels_present) < 2:
        raise SingleClass("validation split does not contain both classes")

    params = init_params(config)
    optimizer = AdamOptimizer(params, lr=config.learning_rate)
    shuffle_rng = np.random.default_rng(config.seed)

    best_values = params.copy_values()
    best_val = -1.0
    best_epoch = 0
    metrics: list[EpochMetrics] = []
    step = 0

    n = len(train_records)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_losses: list[float] = []
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            params.zero_grads()
            step += 1
            for idx in batch:
                record = train_records[int(idx)]
                loss, _ = loss_and_gradients(
                    states[record.id],
                    units[record.id],
                    record.label,
                    params,
                    config,
                    grad_scale=1.0 / len(batch),
                )
                if not math.isfinite(loss):
                    raise NonFiniteLoss(step)
                epoch_losses.append(loss)
            clip_gradients(params, 1.0)
            optimizer.step()

        train_loss = float(np.mean(epoch_losses))
        if val_records:
            val_scores, val_labels = _score_split(val_records, states, units, params, config)
            val_auroc = auroc(val_scores, val_labels)
        else:
            val_auroc = float("nan")
        entry = EpochMetrics(epoch=epoch, train_loss=train_loss, val_auroc=val_auroc)
        metrics.append(entry)
        if log is not None:
            log(entry)

        if val_records and val_auroc > best_val:
            best_val = val_auroc
            best_epoch = epoch
            best_values = params.copy_values()

    if not val_records:
        best_values = params.copy_values()
        best_epoch = config.epochs
        best_val = float("nan")

    params.load_values(best_values)
    return TrainResult(
        params=params,
        config=config,
        metrics=metrics,
        best_epoch=best_epoch,
        best_val_auroc=best_val,
        final_loss=metrics[-1].train_loss if metrics else float("nan"),
    )
