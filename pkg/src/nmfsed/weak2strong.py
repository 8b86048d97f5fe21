"""Weak -> approximate strong labels via NMF activations, and model pseudo-tagging."""

from dataclasses import dataclass, field, replace

import numpy as np

from .ingest import StrongEvent, WeakClipLabel
from .nmf import NmfOptions, factorize
from .nn.model import clip_probabilities, forward


@dataclass
class ActivationCurve:
    values: np.ndarray
    frame_hop_seconds: float


@dataclass
class LabelingOptions:
    threshold: float = 0.5
    min_event_seconds: float = 0.1
    max_gap_seconds: float = 0.2
    nmf: NmfOptions = field(default_factory=NmfOptions)
    # None -> one NMF component per weak tag
    components: int = None

    def validate(self):
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.min_event_seconds < 0 or self.max_gap_seconds < 0:
            raise ValueError("durations must be >= 0")


def activation_curve(factors, frame_hop_seconds=0.0):
    """Column sums of H divided by their max (all zeros if H is all zero)."""
    H = factors.H if hasattr(factors, "H") else np.asarray(factors)
    if np.any(H < 0):
        raise ValueError("activations must be non-negative")
    a = H.sum(axis=0)
    peak = a.max() if a.size else 0.0
    return ActivationCurve(a / peak if peak > 0 else np.zeros_like(a), frame_hop_seconds)


def _runs(mask):
    """(start, stop) frame index pairs of maximal True runs, stop exclusive."""
    m = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    d = np.flatnonzero(np.diff(m.astype(np.int8)))
    return list(zip(d[0::2].tolist(), d[1::2].tolist()))


def mask_to_intervals(mask, frame_hop_seconds, min_event_seconds=0.1, max_gap_seconds=0.2):
    """Turn a frame mask into (onset, offset) seconds.

    Runs separated by gaps shorter than ``max_gap_seconds`` are merged first,
    then merged runs shorter than ``min_event_seconds`` are dropped.
    """
    merged = []
    for start, stop in _runs(mask):
        if merged and (start - merged[-1][1]) * frame_hop_seconds < max_gap_seconds:
            merged[-1][1] = stop
        else:
            merged.append([start, stop])
    return [(start * frame_hop_seconds, stop * frame_hop_seconds)
            for start, stop in merged
            if (stop - start) * frame_hop_seconds >= min_event_seconds]


def label_options_for(weak, opts):
    r = opts.components if opts.components is not None else max(1, len(weak.tags))
    return replace(opts.nmf, components=r)


def approximate_strong_labels(mel, weak, opts=None):
    """Every activated interval gets one event per weak tag.

    If nothing survives thresholding, each tag gets a single full-clip event.
    """
    opts = opts or LabelingOptions()
    opts.validate()
    if not weak.tags:
        raise ValueError(f"{weak.clip_id}: weak label has no tags")
    hop = mel.frame_hop_seconds
    duration = mel.duration or mel.values.shape[0] * hop
    factors = factorize(np.asarray(mel.values, dtype=np.float64).T, label_options_for(weak, opts))
    curve = activation_curve(factors, hop)
    intervals = mask_to_intervals(curve.values >= opts.threshold, hop,
                                  opts.min_event_seconds, opts.max_gap_seconds)
    if not intervals:
        intervals = [(0.0, duration)]
    tags = sorted(weak.tags)
    return [StrongEvent(weak.clip_id, on, min(off, duration), tag, "nmf")
            for on, off in intervals for tag in tags]


def clip_tag_probabilities(model, logmel):
    post, _ = forward(model, np.asarray(logmel.values if hasattr(logmel, "values") else logmel))
    return clip_probabilities(post)


def tag_unlabeled(model, logmel, classes, tag_threshold=0.5, clip_id=""):
    """Tag a clip with every class whose max frame posterior reaches the threshold.

    The returned label may have no tags; such clips are skipped for retraining.
    """
    if len(classes) != model.n_classes:
        raise ValueError(f"model has {model.n_classes} classes, vocabulary has {len(classes)}")
    probs = clip_tag_probabilities(model, logmel)
    tags = frozenset(c for c, p in zip(classes, probs) if p >= tag_threshold)
    return WeakClipLabel(clip_id, tags)


def _union_length(intervals):
    total, cur_on, cur_off = 0.0, None, None
    for on, off in sorted(intervals):
        if cur_off is None or on > cur_off:
            if cur_off is not None:
                total += cur_off - cur_on
            cur_on, cur_off = on, off
        else:
            cur_off = max(cur_off, off)
    if cur_off is not None:
        total += cur_off - cur_on
    return total


def interval_iou(pred, truth):
    """IoU of the unions of two (onset, offset) interval lists."""
    inter = 0.0
    for a in _merge(pred):
        for b in _merge(truth):
            inter += max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = _union_length(pred) + _union_length(truth) - inter
    return inter / union if union > 0 else 1.0


def _merge(intervals):
    out = []
    for on, off in sorted(intervals):
        if out and on <= out[-1][1]:
            out[-1][1] = max(out[-1][1], off)
        else:
            out.append([on, off])
    return out


THRESHOLD_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


def calibrate_threshold(examples, opts=None, grid=THRESHOLD_GRID):
    """Pick the threshold with the highest mean IoU on ``examples``.

    examples: list of (MelSpectrogram, WeakClipLabel, truth intervals).
    Returns (best threshold, {threshold: mean IoU}); ties go to the lower value.
    """
    opts = opts or LabelingOptions()
    scores = {}
    for th in grid:
        o = replace(opts, threshold=th)
        ious = []
        for mel, weak, truth in examples:
            events = approximate_strong_labels(mel, weak, o)
            ious.append(interval_iou([(e.onset, e.offset) for e in events], truth))
        scores[th] = float(np.mean(ious))
    best = max(grid, key=lambda th: (scores[th], -th))
    return best, scores
