"""Mini-batch training loop: AdamW, reduce-on-plateau, best-checkpoint selection.

Every stochastic choice (epoch shuffle, per-batch top-n draw, dropout masks)
comes from a generator derived from (seed, epoch), so a run is a pure function
of (seed, config, data) and resuming at an epoch boundary replays the exact
trajectory the uninterrupted run would have taken.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, TrainingError
from .model import Model, ModelParams, aggregate_test, load_checkpoint, save_checkpoint, total_loss
from .nn.tensor import Tape, Tensor, backward


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 3e-4
    weight_decay: float = 0.01
    gamma: float = 0.5
    plateau_patience: int = 2
    plateau_factor: float = 10.0
    seed: int = 0
    gene_loss: str = "mse"
    test_aggregate: str = "mean"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 0.0  # 0 disables clipping
    improvement_rel: float = 1e-6

    def validate(self) -> "TrainConfig":
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr <= 0 or self.plateau_factor <= 1 or self.plateau_patience < 1:
            raise ConfigError("lr must be positive, plateau_factor > 1, patience >= 1")
        if self.gamma < 0 or self.weight_decay < 0 or self.clip_norm < 0:
            raise ConfigError("gamma, weight_decay and clip_norm must be non-negative")
        if self.gene_loss not in ("mse", "mae") or self.test_aggregate not in ("mean", "harmonic"):
            raise ConfigError("gene_loss in {mse, mae}; test_aggregate in {mean, harmonic}")
        return self

    def to_dict(self) -> dict:
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d).validate()


class AdamW:
    """Bias-corrected Adam with decoupled weight decay."""

    def __init__(self, params: ModelParams, config: TrainConfig):
        self.betas = (config.beta1, config.beta2)
        self.eps = config.eps
        self.weight_decay = config.weight_decay
        self.step_count = 0
        self.moments = {
            name: (np.zeros_like(p.data), np.zeros_like(p.data)) for name, p in params.named()
        }

    def step(self, params: ModelParams, lr: float) -> None:
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        for name, p in params.named():
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in {name} at step {t}")
            m, v = self.moments[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p.value.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.value.data -= lr * self.weight_decay * p.value.data

    def state(self) -> dict:
        return {"step": self.step_count, "moments": self.moments}

    def load_state(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for name, (m, v) in state["moments"].items():
            self.moments[name] = (np.array(m, copy=True), np.array(v, copy=True))


class PlateauScheduler:
    """Divide the learning rate when validation stops improving.

    An epoch improves when its loss drops below the best seen by more than a
    relative threshold; `patience` consecutive non-improving epochs trigger
    one division by `factor` and reset the counter.
    """

    def __init__(self, lr: float, patience: int = 2, factor: float = 10.0, rel_threshold: float = 1e-6):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.rel_threshold = rel_threshold
        self.best = None
        self.bad_epochs = 0

    def update(self, val_loss: float) -> float:
        improved = self.best is None or val_loss < self.best - self.rel_threshold * abs(self.best)
        if improved:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr /= self.factor
                self.bad_epochs = 0
        return self.lr

    def state(self) -> dict:
        return {
            "lr": self.lr,
            "best": self.best,
            "bad_epochs": self.bad_epochs,
            "patience": self.patience,
            "factor": self.factor,
            "rel_threshold": self.rel_threshold,
        }

    def load_state(self, state: dict) -> None:
        self.lr = state["lr"]
        self.best = state["best"]
        self.bad_epochs = state["bad_epochs"]
        self.patience = state["patience"]
        self.factor = state["factor"]
        self.rel_threshold = state["rel_threshold"]


def adamw_step(params: ModelParams, optimizer: AdamW, lr: float) -> None:
    """Apply one update from the gradients currently held by the params."""
    optimizer.step(params, lr)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    lr: float


def evaluate_loss(model: Model, bags, labels, genes, config: TrainConfig, batch_size: int = 256):
    """Validation objective: cross-entropy plus the gamma-weighted gene term.

    Eval mode throughout; the gene term compares the deterministic test-time
    aggregate against the targets. Returns (loss, accuracy).
    """
    out = model.predict(bags, batch_size=batch_size, aggregate=config.test_aggregate)
    shifted = out.logits - out.logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    ce = float((lse - shifted[np.arange(len(labels)), labels]).mean())
    gene_term = 0.0
    if genes is not None and genes.shape[1] > 0:
        diff = out.S - genes
        gene_term = float((diff**2).mean() if config.gene_loss == "mse" else np.abs(diff).mean())
    acc = float((out.logits.argmax(axis=1) == labels).mean())
    return ce + config.gamma * gene_term, acc


def _clip_gradients(params: ModelParams, max_norm: float) -> None:
    total = 0.0
    for _, p in params.named():
        total += float((p.grad**2).sum())
    norm = total**0.5
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, p in params.named():
            p.grad *= scale


def train_epoch(model: Model, bags, labels, genes, config: TrainConfig, optimizer: AdamW, lr: float, epoch: int) -> float:
    """One shuffled pass; returns the mean training loss over samples."""
    rng = np.random.default_rng((config.seed, epoch))
    n_samples = bags.shape[0]
    order = rng.permutation(n_samples)
    n_set = model.config.top_n_choices
    total, seen = 0.0, 0
    for start in range(0, n_samples, config.batch_size):
        idx = order[start : start + config.batch_size]
        n = int(n_set[rng.integers(len(n_set))])
        x = Tensor(bags[idx].astype(model.config.np_dtype))
        y = labels[idx]
        g = genes[idx] if genes is not None and genes.shape[1] > 0 else None
        model.params.zero_grads()
        with Tape() as tape:
            _, logits, _, s_n = model.forward(x, n=n, training=True, rng=rng)
            loss, _, _ = total_loss(logits, y, s_n, g, config.gamma, config.gene_loss)
            backward(tape, loss)
        if config.clip_norm > 0:
            _clip_gradients(model.params, config.clip_norm)
        adamw_step(model.params, optimizer, lr)
        total += loss.item() * len(idx)
        seen += len(idx)
    return total / seen


def train(
    model: Model,
    train_data: tuple,
    val_data: tuple,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    log=None,
) -> tuple[Model, list[EpochMetrics]]:
    """Train to the epoch budget, tracking the best-validation checkpoint.

    `train_data` / `val_data` are (bags, labels, gene_targets) arrays with
    gene_targets possibly of width zero. Returns the best model plus the
    per-epoch metrics log; with `out_dir` set, also writes best.ckpt,
    last.ckpt and metrics.csv there.
    """
    config.validate()
    tr_bags, tr_labels, tr_genes = train_data
    va_bags, va_labels, va_genes = val_data
    if tr_bags.shape[0] == 0 or va_bags.shape[0] == 0:
        raise ConfigError("empty training or validation dataset")

    optimizer = AdamW(model.params, config)
    scheduler = PlateauScheduler(
        config.lr, config.plateau_patience, config.plateau_factor, config.improvement_rel
    )
    start_epoch = 0
    best_val = float("inf")
    metrics: list[EpochMetrics] = []
    best_snapshot = {name: p.data.copy() for name, p in model.params.named()}

    if resume_from is not None:
        _, params, opt_state, extra = load_checkpoint(resume_from)
        model.params = params
        if opt_state is None:
            raise ConfigError("checkpoint has no optimizer state; cannot resume")
        optimizer.load_state(opt_state)
        scheduler.load_state(opt_state["scheduler"])
        start_epoch = int(opt_state["epoch"]) + 1
        best_val = float(opt_state["best_val"])
        metrics = [EpochMetrics(**row) for row in extra.get("metrics", [])]
        best_snapshot = {name: p.data.copy() for name, p in model.params.named()}

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(start_epoch, config.epochs):
        lr = scheduler.lr
        train_loss = train_epoch(model, tr_bags, tr_labels, tr_genes, config, optimizer, lr, epoch)
        val_loss, val_acc = evaluate_loss(model, va_bags, va_labels, va_genes, config)
        metrics.append(EpochMetrics(epoch, train_loss, val_loss, val_acc, lr))
        if log:
            log(f"epoch {epoch}: train {train_loss:.4f} val {val_loss:.4f} acc {val_acc:.3f} lr {lr:.2e}")
        if val_loss < best_val:
            best_val = val_loss
            best_snapshot = {name: p.data.copy() for name, p in model.params.named()}
            if out_dir is not None:
                save_checkpoint(
                    out_dir / "best.ckpt",
                    model.config,
                    model.params,
                    optimizer_state=None,
                    extra={"epoch": epoch, "val_loss": val_loss},
                )
        scheduler.update(val_loss)
        if out_dir is not None:
            opt_state = optimizer.state()
            opt_state.update(
                {"epoch": epoch, "best_val": best_val, "lr": scheduler.lr, "scheduler": scheduler.state()}
            )
            save_checkpoint(
                out_dir / "last.ckpt",
                model.config,
                model.params,
                optimizer_state=opt_state,
                extra={"metrics": [m.__dict__ for m in metrics]},
            )
            write_metrics_csv(out_dir / "metrics.csv", metrics)

    best_params = ModelParams({name: _param_from(arr) for name, arr in best_snapshot.items()})
    best_model = Model(model.config, best_params)
    return best_model, metrics


def _param_from(arr: np.ndarray):
    from .nn import Param

    return Param(arr.copy())


def write_metrics_csv(path, metrics: list[EpochMetrics]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy", "lr"])
        for m in metrics:
            writer.writerow([m.epoch, repr(m.train_loss), repr(m.val_loss), repr(m.val_accuracy), repr(m.lr)])
