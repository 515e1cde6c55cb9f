"""Losses, momentum SGD and a deterministic training loop."""
from __future__ import annotations

import csv
import io
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pinet.autodiff import Node, Tape
from pinet.data import Dataset
from pinet.polynet import ModelSpec, init_params, make_rng, trainable_names


class DivergenceError(FloatingPointError):
    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message if dump_path is None else f"{message} (state dumped to {dump_path})")
        self.dump_path = dump_path


def mse_loss(pred, target):
    """Mean squared error; accepts tape nodes for ``pred``."""
    if isinstance(pred, Node):
        diff = pred - np.asarray(target, dtype=np.float64)
        return pred.tape.record("mean", [diff * diff])
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    return float(np.mean((pred - target) ** 2))


def cross_entropy_loss(logits, labels):
    """Mean softmax cross-entropy, log-sum-exp stabilized.

    ``logits`` is ``(C,)`` with an integer label or ``(n, C)`` with ``n`` labels.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if isinstance(logits, Node):
        if logits.ndim == 1:
            logits = logits.tape.record("reshape", [logits], shape=(1, -1))
        return logits.tape.record("softmax_xent", [logits], labels=labels)
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if z.shape[0] != labels.shape[0]:
        raise ValueError(f"cross_entropy_loss: {z.shape[0]} rows but {labels.shape[0]} labels")
    if np.any(labels < 0) or np.any(labels >= z.shape[1]):
        raise ValueError(f"cross_entropy_loss: label out of range for {z.shape[1]} classes")
    if not np.all(np.isfinite(z)):
        raise ValueError("cross_entropy_loss: non-finite logits")
    shifted = z - z.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logz - shifted[np.arange(len(labels)), labels]))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    milestones: tuple = ()
    lr_factor: float = 0.1
    seed: int = 0
    precision: str = "f64"
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        ms = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing: {ms}")
        object.__setattr__(self, "milestones", ms)
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be 'f32' or 'f64'")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch`` after milestone decays."""
        drops = sum(1 for m in self.milestones if epoch >= m)
        return self.lr * self.lr_factor ** drops


def sgd_step(params: dict, grads: dict, state: dict, cfg: TrainConfig, lr: float | None = None):
    """Momentum SGD with decoupled weight decay.

    ``v <- momentum * v + g``; ``w <- w - lr * v - lr * weight_decay * w``.
    Returns new ``(params, state)``; the inputs are left untouched.
    """
    lr = cfg.lr if lr is None else lr
    new_params, new_state = dict(params), dict(state)
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name!r}")
        w = params[name]
        if w.shape != g.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {w.shape}")
        v = cfg.momentum * state.get(name, np.zeros_like(w)) + g
        new_state[name] = v
        new_params[name] = w - lr * v - lr * cfg.weight_decay * w
    return new_params, new_state


METRICS_HEADER = ("epoch", "lr", "train_loss", "val_loss", "train_acc", "val_acc", "wall_time")


@dataclass
class Metrics:
    """Per-epoch history. Accuracy columns are NaN for regression, val columns without data."""

    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append({k: row.get(k, float("nan")) for k in METRICS_HEADER})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def __len__(self):
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in self.rows:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in METRICS_HEADER[1:]])
        return buf.getvalue()


def _loss_node(out, targets, task):
    if task == "classification":
        return out.tape.record("softmax_xent", [out], labels=targets)
    return mse_loss(out, targets)


def loss_and_grad(model, names, data: Dataset, idx=None, dtype=np.float64):
    """Batch loss and float64 gradients for the tensors listed in ``names``."""
    idx = slice(None) if idx is None else idx
    tape = Tape()
    tensors = {}
    for k, v in model.named().items():
        v = np.asarray(v, dtype=dtype)
        tensors[k] = tape.leaf(v, k) if k in names else v
    out = model.with_tensors(tensors)(data.inputs[idx].astype(dtype))
    loss = _loss_node(out, data.targets[idx], data.task)
    return float(loss.value), tape.backward(loss)


def evaluate(model, data: Dataset) -> dict:
    """Loss and accuracy (classification only) on ``data``."""
    if len(data) == 0:
        raise ValueError("evaluate: empty dataset")
    # overflow shows up as a non-finite loss, which the caller checks
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.asarray(model(data.inputs), dtype=np.float64)
        if data.task == "regression":
            return {"loss": mse_loss(out, data.targets), "accuracy": float("nan")}
    if not np.all(np.isfinite(out)):
        return {"loss": float("nan"), "accuracy": float("nan")}
    loss = cross_entropy_loss(out, data.targets)
    acc = float(np.mean(np.argmax(out, axis=1) == data.targets))
    return {"loss": loss, "accuracy": acc}


def _dump(model, spec, path_hint):
    from pinet.formats import save_checkpoint

    if path_hint is None:
        fd, path_hint = tempfile.mkstemp(prefix="pinet-diverged-", suffix=".ckpt")
        os.close(fd)
    save_checkpoint(path_hint, spec, model)
    return str(path_hint)


def train_loop(spec: ModelSpec, data: Dataset, cfg: TrainConfig, val: Dataset | None = None,
               model=None, dump_path=None):
    """Train ``spec`` (initialized from ``spec.seed`` unless ``model`` is given).

    Mini-batches come from a Philox stream seeded with ``cfg.seed``; sample
    order within a batch is fixed, so f64 runs are bit-reproducible.
    Returns ``(model, metrics)``.
    """
    if len(data) == 0:
        raise ValueError("train_loop: empty dataset")
    if data.d != spec.d:
        raise ValueError(f"data has {data.d} features, model expects {spec.d}")
    if data.task == "classification" and data.n_outputs > spec.o:
        raise ValueError(f"{data.n_outputs} classes but the model emits {spec.o} logits")
    if data.task == "regression" and data.targets.shape[1] != spec.o:
        raise ValueError(f"targets have {data.targets.shape[1]} columns, model emits {spec.o}")
    if model is None:
        model = init_params(spec)
    names = trainable_names(model, spec)
    dtype = np.float32 if cfg.precision == "f32" else np.float64
    params = {k: np.asarray(v, dtype=np.float64) for k, v in model.named().items()}
    state: dict = {}
    rng = make_rng(cfg.seed)
    metrics = Metrics()
    start = time.perf_counter()
    n = len(data)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = np.sort(order[lo:lo + cfg.batch_size])
            loss, grads = loss_and_grad(model, names, data, idx, dtype)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss} in epoch {epoch}",
                                      _dump(model, spec, dump_path))
            try:
                params, state = sgd_step(params, grads, state, cfg, lr)
            except DivergenceError as exc:
                raise DivergenceError(str(exc), _dump(model, spec, dump_path)) from None
            model = model.with_tensors(params)
        tr = evaluate(model, data)
        if not np.isfinite(tr["loss"]):
            raise DivergenceError(f"training loss became {tr['loss']} after epoch {epoch}",
                                  _dump(model, spec, dump_path))
        va = evaluate(model, val) if val is not None and len(val) else {}
        metrics.append(epoch=epoch + 1, lr=lr, train_loss=tr["loss"], train_acc=tr["accuracy"],
                       val_loss=va.get("loss", float("nan")),
                       val_acc=va.get("accuracy", float("nan")),
                       wall_time=time.perf_counter() - start)
        if cfg.checkpoint_dir and (epoch + 1) in cfg.milestones:
            from pinet.formats import save_checkpoint

            Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_checkpoint(Path(cfg.checkpoint_dir) / f"epoch{epoch + 1:05d}.ckpt", spec, model)
    return model, metrics
