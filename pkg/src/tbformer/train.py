"""Mini-batch training loop with deterministic data order and exact resume.

Sample order is a pure function of ``(seed, epoch)``, parameters and momentum
are stored at float32, and both are checkpointed, so stopping and resuming
reproduces an uninterrupted run bit for bit.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .checkpoint import checkpoint_load, checkpoint_save
from .config import ModelConfig
from .metrics import aggregate, evaluate_image, pixel_accuracy
from .model import active_names, bce_loss, forward, init_params, predict
from .optim import ScheduleConfig, lr_at, sgd_step

logger = logging.getLogger(__name__)

MODEL_FILE = "model.tbf"
STATE_FILE = "state.tbf"
LOSS_LOG = "loss.csv"
VAL_LOG = "val.csv"


class TrainingError(RuntimeError):
    """Training diverged or could not continue."""


@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    momentum: dict[str, np.ndarray] = field(default_factory=dict)
    iteration: int = 0
    losses: list[tuple[int, float, float]] = field(default_factory=list)


def batch_indices(iteration: int, batch_size: int, n: int, seed: int) -> list[int]:
    """Indices of the samples in batch ``iteration``; each epoch is a fresh seeded permutation."""
    out = []
    cache: dict[int, np.ndarray] = {}
    for k in range(iteration * batch_size, (iteration + 1) * batch_size):
        epoch, pos = divmod(k, n)
        if epoch not in cache:
            cache[epoch] = np.random.default_rng([seed, 0xE9, epoch]).permutation(n)
        out.append(int(cache[epoch][pos]))
    return out


def batch_loss(params: dict[str, np.ndarray], cfg: ModelConfig, batch, names: Sequence[str], forged_weight: float = 1.0):
    """Mean BCE over ``batch`` and its gradients for ``names``."""
    leaves = nx.leaves_from(params)
    total = None
    for image, mask in batch:
        loss = bce_loss(forward(image, leaves, cfg), mask, forged_weight)
        total = loss if total is None else total + loss
    total = total * (1.0 / len(batch))
    nx.backward(total)
    grads = {}
    for n in names:
        g = leaves[n].grad
        grads[n] = np.zeros(params[n].shape) if g is None else g
    return total.item(), grads


def save_state(out_dir: Path, state: TrainState) -> None:
    checkpoint_save(state.params, out_dir / MODEL_FILE)
    extra = {f"momentum.{k}": v for k, v in state.momentum.items()}
    extra["iteration"] = np.array([state.iteration], dtype=np.float32)
    checkpoint_save(extra, out_dir / STATE_FILE)


def load_state(out_dir: Path, cfg: ModelConfig) -> TrainState:
    template = init_params(cfg)
    params = checkpoint_load(out_dir / MODEL_FILE, template)
    extra = checkpoint_load(out_dir / STATE_FILE)
    if "iteration" not in extra:
        raise TrainingError(f"{out_dir / STATE_FILE} has no iteration counter")
    momentum = {}
    for k, v in extra.items():
        if k == "iteration":
            continue
        name = k.removeprefix("momentum.")
        if name not in params:
            raise TrainingError(f"momentum for unknown parameter {name!r}")
        momentum[name] = v
    return TrainState(params, momentum, int(extra["iteration"][0]))


def _read_loss_log(path: Path, upto: int) -> list[tuple[int, float, float]]:
    if not path.exists():
        return []
    rows = []
    with path.open() as fh:
        for row in csv.DictReader(fh):
            it = int(row["iteration"])
            if it < upto:
                rows.append((it, float(row["lr"]), float(row["loss"])))
    return rows


def _write_loss_log(path: Path, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iteration", "lr", "loss"))
        for it, lr, loss in rows:
            w.writerow((it, repr(lr), repr(loss)))


def validate(params, cfg: ModelConfig, data) -> dict[str, float]:
    records, accs = [], []
    for i, (image, mask) in enumerate(data):
        prob = predict(image, params, cfg)
        records.append(evaluate_image(str(i), prob, mask))
        accs.append(pixel_accuracy(prob, mask))
    agg = aggregate(records).aggregate
    agg["pixel_accuracy"] = float(np.mean(accs))
    return agg


def train(
    cfg: ModelConfig,
    sched: ScheduleConfig,
    data: Sequence[tuple[np.ndarray, np.ndarray]],
    out_dir=None,
    *,
    resume: bool = False,
    stop_after: int | None = None,
    val_data: Sequence[tuple[np.ndarray, np.ndarray]] | None = None,
    checkpoint_every: int | None = None,
    forged_weight: float = 1.0,
    on_step: Callable[[int, float, float], None] | None = None,
) -> TrainState:
    """Train on ``data`` (image, mask) pairs for ``sched.iter_total`` iterations.

    With ``out_dir`` set, checkpoints are written every
    ``max(1, iter_total // 10)`` iterations and at the end, together with
    ``loss.csv`` (and ``val.csv`` when ``val_data`` is given). ``stop_after``
    ends the run early after that many iterations, checkpointing first.
    """
    if not data:
        raise TrainingError("no training samples")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if resume:
        if out is None:
            raise TrainingError("resume needs an output directory")
        state = load_state(out, cfg)
        state.losses = _read_loss_log(out / LOSS_LOG, state.iteration)
    else:
        state = TrainState(init_params(cfg))
    names = active_names(state.params, cfg)
    every = checkpoint_every or max(1, sched.iter_total // 10)
    end = sched.iter_total if stop_after is None else min(sched.iter_total, stop_after)
    val_rows = _read_val_log(out / VAL_LOG, state.iteration) if resume else []

    for it in range(state.iteration, end):
        lr = lr_at(it, sched)
        batch = [data[i] for i in batch_indices(it, sched.batch_size, len(data), cfg.seed)]
        loss, grads = batch_loss(state.params, cfg, batch, names, forged_weight)
        if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
            raise TrainingError(f"non-finite loss or gradient at iteration {it} (loss={loss})")
        sgd_step(
            state.params,
            grads,
            lr,
            state.momentum,
            names,
            momentum=sched.momentum,
            weight_decay=sched.weight_decay,
            clip_norm=sched.clip_norm,
        )
        state.iteration = it + 1
        state.losses.append((it, lr, loss))
        if on_step is not None:
            on_step(it, lr, loss)
        if out is not None and (state.iteration % every == 0 or state.iteration == end):
            save_state(out, state)
            _write_loss_log(out / LOSS_LOG, state.losses)
            if val_data:
                val_rows.append((state.iteration, validate(state.params, cfg, val_data)))
                _write_val_log(out / VAL_LOG, val_rows)
            logger.info("iteration %d lr %.3g loss %.5f", state.iteration, lr, loss)
    return state


VAL_KEYS = ("precision", "recall", "f1", "iou", "auc", "pixel_accuracy")


def _read_val_log(path: Path, upto: int) -> list[tuple[int, dict]]:
    if not path.exists():
        return []
    rows = []
    with path.open() as fh:
        for row in csv.DictReader(fh):
            it = int(row["iteration"])
            if it <= upto:
                rows.append((it, {k: (float(row[k]) if row[k] else None) for k in VAL_KEYS}))
    return rows


def _write_val_log(path: Path, rows) -> None:
    keys = VAL_KEYS
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iteration",) + keys)
        for it, agg in rows:
            w.writerow([it] + ["" if agg.get(k) is None else f"{agg[k]:.6f}" for k in keys])
