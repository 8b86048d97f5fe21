"""Mini-batch Adam training on frame-level (approximate) strong labels."""

import contextlib
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .nn import layers
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.model import TIME_REDUCTION, backward, forward

log = logging.getLogger(__name__)

STD_FLOOR = 1e-6


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    crop_frames: int = 480
    seed: int = 0
    classes: tuple = ()
    single_threaded: bool = True
    # re-estimate batchnorm statistics at the final weights after the last epoch
    recalibrate_bn: bool = True

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.crop_frames < TIME_REDUCTION or self.crop_frames % TIME_REDUCTION:
            raise ValueError(f"crop_frames must be a positive multiple of {TIME_REDUCTION}")


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    checkpoint_path: str = ""
    seconds: float = 0.0
    seed: int = 0

    def write(self, log_path, tsv_path):
        with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"checkpoint={self.checkpoint_path}\n")
            fh.write(f"seconds={self.seconds:.3f}\n")
            fh.write(f"seed={self.seed}\n")
            fh.write(f"epochs={len(self.epoch_losses)}\n")
            if self.epoch_losses:
                fh.write(f"final_loss={self.epoch_losses[-1]!r}\n")
        with open(tsv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch\tloss\n")
            for i, loss in enumerate(self.epoch_losses, start=1):
                fh.write(f"{i}\t{loss!r}\n")


def rasterize_labels(events, n_frames, hop, classes):
    """Frame t, class k is 1 iff [t*hop, (t+1)*hop) intersects an event of class k."""
    index = {c: k for k, c in enumerate(classes)}
    y = np.zeros((n_frames, len(classes)), dtype=np.float32)
    starts = np.arange(n_frames) * hop
    for ev in events:
        if ev.label not in index:
            raise ValueError(f"unknown class {ev.label!r}")
        hit = (starts < ev.offset) & (starts + hop > ev.onset)
        y[hit, index[ev.label]] = 1.0
    return y


def pool_labels(y, factor=TIME_REDUCTION):
    """Max-pool frame targets in time so they align with the network output."""
    t = y.shape[-2] // factor
    trimmed = y[..., :t * factor, :]
    return trimmed.reshape(*y.shape[:-2], t, factor, y.shape[-1]).max(axis=-2)


def feature_stats(features):
    """Per-bin mean and std over every frame of every clip (std floored)."""
    stacked = np.concatenate([np.asarray(f, dtype=np.float64) for f in features], axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return mean, std


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        """Update ``params`` in place."""
        self.t += 1
        if self.lr == 0:
            return
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            upd = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            params[k] -= upd.astype(params[k].dtype, copy=False)


def _crop(x, y, start, length):
    xc = np.zeros((length, x.shape[1]), dtype=np.float32)
    yc = np.zeros((length, y.shape[1]), dtype=np.float32)
    n = min(length, x.shape[0] - start)
    xc[:n] = x[start:start + n]
    yc[:n] = y[start:start + n]
    return xc, yc


def _thread_guard(single):
    if not single:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(1)


def train_step(model, xb, yb, opt):
    """One forward/backward/Adam step on a standardized batch; returns the loss."""
    post, cache = forward(model, xb, train=True, standardize_input=False)
    loss, dlogits = layers.bce_loss(post, pool_labels(yb))
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss}")
    grads = backward(model, cache, dlogits)
    opt.step(model.tensors, grads)
    return loss


def _epoch_batches(feats, labels, crop, batch_size, rng):
    """Yield (x, y) crop batches covering every clip once, in a seeded random order.

    With ``labels=None`` the y batches are None.
    """
    order = rng.permutation(len(feats))
    starts = [int(rng.integers(0, max(0, feats[i].shape[0] - crop) + 1)) for i in order]
    for b in range(0, len(order), batch_size):
        pairs = [_crop(feats[i], feats[i] if labels is None else labels[i], s, crop)
                 for i, s in zip(order[b:b + batch_size], starts[b:b + batch_size])]
        yield np.stack([p[0] for p in pairs]), (None if labels is None else np.stack([p[1] for p in pairs]))


def recalibrate_batchnorm(model, feats, crop, batch_size, rng):
    """Replace the running batchnorm statistics with exact averages at the current weights.

    The running averages kept during training trail the weights, which keep
    moving until the last step. One extra pass over standardized training
    crops gives statistics that match the final network. Each statistic is
    the plain mean of its per-batch values.
    """
    for name, t in model.tensors.items():
        if name.endswith(("running_mean", "running_var")):
            t[...] = 0
    n = 0
    for xb, _ in _epoch_batches(feats, None, crop, batch_size, rng):
        if xb.shape[0] * crop < 2:
            continue
        n += 1
        forward(model, xb, train=True, standardize_input=False, bn_momentum=(n - 1) / n)


def train(model, dataset, cfg, checkpoint_path=None, epoch_dir=None):
    """Train ``model`` in place on ``dataset`` = list of (logmel (T, 64), labels (T, K)).

    Standardization statistics are computed once over the whole dataset and
    stored in the model's ``norm.*`` tensors.
    """
    cfg.validate()
    if not dataset:
        raise TrainingError("empty training set")
    for x, y in dataset:
        if x.shape[1] != model.tensors["norm.mean"].shape[0]:
            raise ValueError(f"feature dim {x.shape[1]} does not match the model")
        if y.shape != (x.shape[0], model.n_classes):
            raise ValueError(f"label shape {y.shape} does not match features {x.shape}")

    t0 = time.perf_counter()
    mean, std = feature_stats([x for x, _ in dataset])
    model.tensors["norm.mean"][...] = mean
    model.tensors["norm.std"][...] = std
    mean32, std32 = model.tensors["norm.mean"], model.tensors["norm.std"]
    feats = [((np.asarray(x, dtype=np.float32) - mean32) / std32).astype(np.float32)
             for x, _ in dataset]
    labels = [np.asarray(y, dtype=np.float32) for _, y in dataset]

    rng = np.random.default_rng(cfg.seed)
    trainable = {k: model.tensors[k] for k in model.trainable()}
    opt = Adam(trainable, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    report = TrainReport(seed=cfg.seed)
    crop = cfg.crop_frames

    with _thread_guard(cfg.single_threaded):
        for epoch in range(1, cfg.epochs + 1):
            losses, weights = [], []
            for xb, yb in _epoch_batches(feats, labels, crop, cfg.batch_size, rng):
                if xb.shape[0] * crop * xb.shape[2] < 2:
                    continue
                losses.append(train_step(model, xb, yb, opt))
                weights.append(xb.shape[0])
            epoch_loss = float(np.average(losses, weights=weights))
            report.epoch_losses.append(epoch_loss)
            log.info("epoch %d/%d loss %.5f", epoch, cfg.epochs, epoch_loss)
            if epoch_dir is not None:
                save_checkpoint(model, os.path.join(epoch_dir, f"epoch{epoch:03d}.nmfc"))
        if cfg.recalibrate_bn:
            recalibrate_batchnorm(model, feats, crop, cfg.batch_size, rng)

    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
        report.checkpoint_path = os.fspath(checkpoint_path)
    report.seconds = time.perf_counter() - t0
    return report


__all__ = [
    "Adam", "TrainConfig", "TrainReport", "TrainingError", "feature_stats",
    "load_checkpoint", "pool_labels", "rasterize_labels", "recalibrate_batchnorm",
    "save_checkpoint", "train",
    "train_step",
]
