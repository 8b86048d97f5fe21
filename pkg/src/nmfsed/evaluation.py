"""Frame posteriors -> events, and event-/segment-based F1 scoring."""

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ingest import StrongEvent
from .weak2strong import mask_to_intervals


@dataclass
class DetectionOptions:
    threshold: float = 0.5
    median_width: int = 5
    min_event_seconds: float = 0.1
    max_gap_seconds: float = 0.2

    def validate(self):
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.median_width < 1 or self.median_width % 2 == 0:
            raise ValueError("median width must be odd and positive")


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp, fp, fn):
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f, tp, fp, fn)


def median_filter(track, width):
    """Running median with symmetric (edge-repeating) reflection at the ends."""
    track = np.asarray(track, dtype=np.float64)
    if width == 1 or track.size == 0:
        return track.copy()
    half = width // 2
    padded = np.pad(track, half, mode="symmetric")
    return np.median(sliding_window_view(padded, width), axis=1)


def posteriors_to_events(posteriors, frame_hop_seconds, classes, clip_id="", opts=None):
    """Smooth and threshold each class track on its own, then cut it into events."""
    opts = opts or DetectionOptions()
    opts.validate()
    p = np.asarray(posteriors)
    events = []
    for k, name in enumerate(classes):
        mask = median_filter(p[:, k], opts.median_width) >= opts.threshold
        for on, off in mask_to_intervals(mask, frame_hop_seconds,
                                         opts.min_event_seconds, opts.max_gap_seconds):
            events.append(StrongEvent(clip_id, on, off, name, "model"))
    events.sort(key=lambda e: (e.onset, e.label))
    return events


def _group(events):
    out = defaultdict(list)
    for ev in events:
        out[(ev.clip_id, ev.label)].append(ev)
    return out


def _compatible(ref, pred, onset_collar, offset_min, offset_ratio):
    offset_collar = max(offset_min, offset_ratio * (ref.offset - ref.onset))
    return (abs(pred.onset - ref.onset) <= onset_collar
            and abs(pred.offset - ref.offset) <= offset_collar)


def greedy_matches(refs, preds, onset_collar=0.2, offset_min=0.2, offset_ratio=0.2):
    """One-to-one matches for events of a single (clip, class).

    Refs are visited in onset order; each claims the earliest-onset unmatched
    compatible pred. Returns a list of (ref_index, pred_index).
    """
    r_order = sorted(range(len(refs)), key=lambda i: (refs[i].onset, refs[i].offset))
    p_order = sorted(range(len(preds)), key=lambda j: (preds[j].onset, preds[j].offset))
    used = set()
    pairs = []
    for i in r_order:
        for j in p_order:
            if j not in used and _compatible(refs[i], preds[j], onset_collar, offset_min, offset_ratio):
                used.add(j)
                pairs.append((i, j))
                break
    return pairs


def event_counts(refs, preds, onset_collar=0.2, offset_min=0.2, offset_ratio=0.2):
    """Per-class (tp, fp, fn) over all clips."""
    r_groups, p_groups = _group(refs), _group(preds)
    counts = defaultdict(lambda: [0, 0, 0])
    for key in set(r_groups) | set(p_groups):
        rs, ps = r_groups.get(key, []), p_groups.get(key, [])
        tp = len(greedy_matches(rs, ps, onset_collar, offset_min, offset_ratio))
        c = counts[key[1]]
        c[0] += tp
        c[1] += len(ps) - tp
        c[2] += len(rs) - tp
    return counts


def _average(counts, average):
    if average == "micro":
        tp, fp, fn = (sum(c[i] for c in counts.values()) for i in range(3))
        return PRF.from_counts(tp, fp, fn)
    if average == "macro":
        per = [PRF.from_counts(*c) for c in counts.values()]
        if not per:
            return PRF.from_counts(0, 0, 0)
        tp, fp, fn = (sum(c[i] for c in counts.values()) for i in range(3))
        return PRF(float(np.mean([x.precision for x in per])), float(np.mean([x.recall for x in per])),
                   float(np.mean([x.f1 for x in per])), tp, fp, fn)
    raise ValueError(f"unknown averaging {average!r}")


def event_based_f1(refs, preds, onset_collar=0.2, offset_min=0.2, offset_ratio=0.2,
                   average="micro"):
    """Collar-matched event F1 (offset collar = max(offset_min, ratio x ref length))."""
    return _average(event_counts(refs, preds, onset_collar, offset_min, offset_ratio), average)


def segment_activity(events, duration, segment_seconds=1.0):
    """Boolean per-segment activity for one class track within one clip."""
    n_seg = max(1, math.ceil(duration / segment_seconds - 1e-9))
    active = np.zeros(n_seg, dtype=bool)
    for ev in events:
        first = int(math.floor(ev.onset / segment_seconds))
        # segments [s, s+1) with s*seg < offset
        last = int(math.ceil(ev.offset / segment_seconds)) - 1
        active[max(first, 0):min(last, n_seg - 1) + 1] = True
    return active


def segment_counts(refs, preds, durations, segment_seconds=1.0):
    r_groups, p_groups = _group(refs), _group(preds)
    counts = defaultdict(lambda: [0, 0, 0])
    for clip_id, label in set(r_groups) | set(p_groups):
        dur = durations[clip_id]
        ra = segment_activity(r_groups.get((clip_id, label), []), dur, segment_seconds)
        pa = segment_activity(p_groups.get((clip_id, label), []), dur, segment_seconds)
        c = counts[label]
        c[0] += int(np.sum(ra & pa))
        c[1] += int(np.sum(pa & ~ra))
        c[2] += int(np.sum(ra & ~pa))
    return counts


def infer_durations(*event_lists):
    """Fallback clip lengths when none are supplied: latest offset, rounded up to a second."""
    out = {}
    for events in event_lists:
        for ev in events:
            out[ev.clip_id] = max(out.get(ev.clip_id, 0.0), math.ceil(ev.offset))
    return out


def segment_based_f1(refs, preds, durations=None, segment_seconds=1.0, average="micro"):
    """F1 over fixed segments marked active/inactive per class (last partial segment kept)."""
    if durations is None:
        durations = infer_durations(refs, preds)
    return _average(segment_counts(refs, preds, durations, segment_seconds), average)


# ------------------------------------------------------------------ report

METRIC_ROWS = ("event_based_f1", "segment_based_f1")


def write_report(path, results, metadata=None):
    """Results TSV: one row per metric, one column per combination.

    ``results`` maps combination name -> (event PRF, segment PRF).
    """
    combos = list(results)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}={value}\n")
        fh.write("\t".join(["metric"] + combos) + "\n")
        if not combos:
            return
        for row, metric in enumerate(METRIC_ROWS):
            fh.write("\t".join([metric] + [f"{results[c][row].f1:.4f}" for c in combos]) + "\n")


def read_report(path):
    """Parse :func:`write_report` output into {combo: {metric: f1}}."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    header = lines[0].split("\t")
    if header[0] != "metric":
        raise ValueError("not a metrics report")
    out = {c: {} for c in header[1:]}
    for line in lines[1:]:
        fields = line.split("\t")
        for combo, val in zip(header[1:], fields[1:]):
            out[combo][fields[0]] = float(val)
    return out
