"""Mini-batch training loop with validation-based early stopping.

Training windows are every run of input_len + output_len consecutive
frames across the given clips (stride 1). The last `validation_fraction`
of that list is held out; batches are sampled uniformly from the rest
with the run's seeded generator. Per-element gradients can be computed
on worker threads; they are always reduced in index order, so the summed
mini-batch gradient is identical with parallelism on or off.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, NumericError
from .network import CompositeModel, forward_composite
from .optim import make_optimizer


@dataclass
class TrainConfig:
    optimizer: str = "rmsprop"
    learning_rate: float = 1e-4
    decay: float = 0.9
    batch_size: int = 5
    max_iterations: int = 2000  # desk-scale default; the full-scale regime ran 25,000
    eval_interval: int = 100
    early_stop_patience: int = 10
    validation_fraction: float = 0.2
    clip_norm: float | None = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 < self.decay < 1:
            raise ConfigError("decay must be in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in [0, 1)")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = "" if v is None else str(v)
        return d


@dataclass
class HistoryRow:
    iteration: int
    train_loss: float
    val_loss: float | None = None


@dataclass
class TrainResult:
    model: CompositeModel
    history: list[HistoryRow] = field(default_factory=list)
    best_val_loss: float | None = None
    iterations: int = 0
    stopped_early: bool = False

    @property
    def final_train_loss(self) -> float | None:
        return self.history[-1].train_loss if self.history else None


def _clip_frames(clip) -> np.ndarray:
    return clip.frames if hasattr(clip, "frames") else np.asarray(clip)


def make_windows(clips, window_len: int) -> list[tuple[int, int]]:
    """(clip index, start frame) for every stride-1 window of window_len."""
    windows = []
    for ci, clip in enumerate(clips):
        n = _clip_frames(clip).shape[0]
        for start in range(n - window_len + 1):
            windows.append((ci, start))
    if not windows:
        raise DataError(
            f"no clip has the {window_len} consecutive frames a window needs"
        )
    return windows


def split_windows(windows, validation_fraction: float):
    n_val = int(len(windows) * validation_fraction)
    if n_val == 0:
        return list(windows), []
    return list(windows[:-n_val]), list(windows[-n_val:])


def _window_loss(model, frames, start):
    cfg = model.config
    inputs = list(frames[start : start + cfg.input_len])
    targets = list(frames[start + cfg.input_len : start + cfg.window_len])
    return forward_composite(model, inputs, targets).loss


def _element_grads(model, params, frames, start):
    loss = _window_loss(model, frames, start)
    return loss.item(), T.gradients(loss, params)


def validation_loss(model, clips, windows) -> float:
    frame_sets = [_clip_frames(c) for c in clips]
    total = 0.0
    with T.no_grad():
        for ci, start in windows:
            total += _window_loss(model, frame_sets[ci], start).item()
    return total / len(windows)


def train(model: CompositeModel, clips, config: TrainConfig) -> TrainResult:
    """Optimize `model` in place; returns the best-validation parameters.

    Raises NumericError if the loss goes non-finite, DataError if no clip
    is long enough to yield a window.
    """
    cfg = model.config
    windows = make_windows(clips, cfg.window_len)
    train_windows, val_windows = split_windows(windows, config.validation_fraction)
    if not train_windows:
        raise DataError("validation split leaves no training windows")
    frame_sets = [_clip_frames(c) for c in clips]

    params = model.parameters()
    optimizer = make_optimizer(
        config.optimizer, params, lr=config.learning_rate, decay=config.decay
    )
    rng = np.random.default_rng(config.seed)

    result = TrainResult(model=model)
    best_snapshot = None
    evals_since_best = 0
    pool = (
        ThreadPoolExecutor(max_workers=config.threads)
        if config.threads > 1
        else None
    )
    try:
        for iteration in range(1, config.max_iterations + 1):
            picks = rng.integers(0, len(train_windows), size=config.batch_size)
            batch = [train_windows[i] for i in picks]

            def one(item):
                ci, start = item
                return _element_grads(model, params, frame_sets[ci], start)

            outs = list(pool.map(one, batch)) if pool else [one(b) for b in batch]

            losses = [loss for loss, _ in outs]
            if not all(np.isfinite(losses)):
                raise NumericError(f"non-finite loss at iteration {iteration}")
            train_loss = float(np.mean(losses))

            # reduce per-element gradients in index order
            inv = 1.0 / config.batch_size
            for pi, p in enumerate(params):
                total = outs[0][1][pi].copy()
                for _, grads in outs[1:]:
                    total += grads[pi]
                p.grad = total * inv
            if config.clip_norm is not None:
                norm = np.sqrt(sum(float(np.sum(p.grad**2)) for p in params))
                if norm > config.clip_norm:
                    fac = config.clip_norm / norm
                    for p in params:
                        p.grad *= fac
            optimizer.step()
            optimizer.zero_grad()

            row = HistoryRow(iteration=iteration, train_loss=train_loss)
            result.iterations = iteration

            if val_windows and iteration % config.eval_interval == 0:
                val = validation_loss(model, clips, val_windows)
                if not np.isfinite(val):
                    raise NumericError(f"non-finite validation loss at {iteration}")
                row.val_loss = val
                if result.best_val_loss is None or val < result.best_val_loss:
                    result.best_val_loss = val
                    best_snapshot = [p.data.copy() for p in params]
                    evals_since_best = 0
                else:
                    evals_since_best += 1
                    if evals_since_best >= config.early_stop_patience:
                        result.history.append(row)
                        result.stopped_early = True
                        break
            result.history.append(row)
    finally:
        if pool:
            pool.shutdown()

    if best_snapshot is not None:
        for p, snap in zip(params, best_snapshot):
            p.data = snap
    return result


def write_loss_history(path, history: list[HistoryRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "train_loss", "val_loss"])
        for row in history:
            writer.writerow(
                [
                    row.iteration,
                    repr(row.train_loss),
                    "" if row.val_loss is None else repr(row.val_loss),
                ]
            )
