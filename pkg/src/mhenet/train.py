"""Training loop: seeded batching, per-iteration loss logging, epoch and
best checkpoints.

Determinism contract: given the same settings, seed, and thread cap, two runs
produce byte-identical loss logs and checkpoints.  All randomness flows from
one seed (parameter init, batch order, augmentation); log values print with
17 significant digits so the text round-trips the exact doubles.
"""

import json
import os
from dataclasses import dataclass, asdict, field

import numpy as np

from .data import augment, collate, load_sample
from .losses import total_loss
from .network import MheNet, NetworkConfig
from .optim import Adam, lr_at_epoch
from .tensor import backward

LOG_HEADER = "step\tepoch\tlr\tbce1\tiou1\tbce2\tiou2\tbce3\tiou3\ttotal"


@dataclass
class TrainSettings:
    seed: int = 0
    epochs: int = 100
    batch: int = 8
    lr: float = 5e-5
    lr_decay_every: int = 40
    augment: bool = True
    max_steps: int | None = None
    out_dir: str | None = None
    checkpoint_every_epoch: bool = True


@dataclass
class TrainResult:
    steps: int
    epochs: int
    first_loss: float
    last_loss: float
    best_epoch_loss: float
    log_lines: list = field(default_factory=list)


def _format_row(step, epoch, lr, bd):
    vals = [f"{lr:.17g}"]
    for b, i in zip(bd.bce, bd.iou):
        vals += [f"{b:.17g}", f"{i:.17g}"]
    vals.append(f"{bd.total:.17g}")
    return f"{step}\t{epoch}\t" + "\t".join(vals)


def _batch_indices(n, batch, rng):
    """Cyclically tiled shuffled indices, chunked into full batches."""
    reps = max(1, -(-batch // n))
    order = np.concatenate([rng.permutation(n) for _ in range(reps)])
    count = max(len(order) // batch, 1)
    return [order[i * batch:(i + 1) * batch] for i in range(count)]


def load_training_set(manifest, target_size):
    return [load_sample(manifest.root, e, target_size) for e in manifest.entries]


def run_training(net: MheNet, manifest, settings: TrainSettings,
                 val_manifest=None):
    """Train ``net`` on ``manifest``; returns a TrainResult.

    With ``out_dir`` set, writes ``config.json`` (the resolved settings),
    ``loss_log.tsv`` (one row per iteration), per-epoch checkpoints, and
    ``ckpt_best.mhen`` at the lowest epoch-mean loss (validation-set loss
    when a validation manifest is given, else the training epoch mean).
    """
    if settings.batch < 2:
        raise ValueError("batch must be >= 2 (batch-statistic normalization)")
    if len(manifest) == 0:
        raise ValueError("training dataset is empty")
    size = net.config.input_size
    samples = load_training_set(manifest, size)
    val_samples = (load_training_set(val_manifest, size)
                   if val_manifest is not None and len(val_manifest) else None)

    seq = np.random.SeedSequence(settings.seed)
    shuffle_rng, aug_rng = [np.random.default_rng(s) for s in seq.spawn(2)]
    opt = Adam(net.store, lr=settings.lr)

    out_dir = settings.out_dir
    log_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump({"settings": asdict(settings),
                       "network": _config_dict(net.config)}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        log_fh = open(os.path.join(out_dir, "loss_log.tsv"), "w", encoding="utf-8")
        log_fh.write(LOG_HEADER + "\n")

    result = TrainResult(0, 0, 0.0, 0.0, float("inf"))
    step = 0
    try:
        for epoch in range(1, settings.epochs + 1):
            lr = lr_at_epoch(settings.lr, epoch, settings.lr_decay_every)
            epoch_losses = []
            for idx in _batch_indices(len(samples), settings.batch, shuffle_rng):
                chosen = [samples[i] for i in idx]
                if settings.augment:
                    chosen = [augment(s, aug_rng) for s in chosen]
                rgb, depth, gt = collate(chosen, net.config.np_dtype)
                out = net.forward(rgb, depth, mode="train")
                bd, loss = total_loss(out, gt)
                opt.zero_grad()
                backward(loss)
                opt.step(lr)
                step += 1
                epoch_losses.append(bd.total)
                row = _format_row(step, epoch, lr, bd)
                result.log_lines.append(row)
                if log_fh:
                    log_fh.write(row + "\n")
                if result.steps == 0:
                    result.first_loss = bd.total
                result.steps = step
                result.last_loss = bd.total
                if settings.max_steps and step >= settings.max_steps:
                    raise _StopTraining
            result.epochs = epoch
            score = (_validation_loss(net, val_samples, settings.batch)
                     if val_samples else float(np.mean(epoch_losses)))
            if out_dir and settings.checkpoint_every_epoch:
                net.save(os.path.join(out_dir, f"ckpt_epoch_{epoch:03d}.mhen"))
            if score < result.best_epoch_loss:
                result.best_epoch_loss = score
                if out_dir:
                    net.save(os.path.join(out_dir, "ckpt_best.mhen"))
    except _StopTraining:
        result.epochs = max(result.epochs, 1)
        if out_dir:
            net.save(os.path.join(out_dir, "ckpt_best.mhen"))
    finally:
        if log_fh:
            log_fh.close()
    return result


class _StopTraining(Exception):
    pass


def _validation_loss(net, val_samples, batch):
    total = 0.0
    count = 0
    for i in range(0, len(val_samples), batch):
        chunk = val_samples[i:i + batch]
        rgb, depth, gt = collate(chunk, net.config.np_dtype)
        out = net.forward(rgb, depth, mode="eval")
        bd, _ = total_loss(out, gt)
        total += bd.total * len(chunk)
        count += len(chunk)
    return total / max(count, 1)


def _config_dict(config: NetworkConfig):
    return {
        "input_size": list(config.input_size),
        "channels": config.channels,
        "backbone_widths": list(config.widths),
        "ablation": asdict(config.ablation),
        "dtype": config.dtype,
        "avg_mode": config.avg_mode,
    }
