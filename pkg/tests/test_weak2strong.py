import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nmfsed.features import MelSpectrogram, mel_spectrogram
from nmfsed.ingest import SynthCorpusConfig, WeakClipLabel, synth_clip
from nmfsed.nmf import DegenerateInputError, NmfFactors, NmfOptions
from nmfsed.nn.model import build_model
from nmfsed.weak2strong import (LabelingOptions, activation_curve, approximate_strong_labels,
                                calibrate_threshold, interval_iou, mask_to_intervals,
                                tag_unlabeled)

HOP = 500 / 32000


def _factors(H):
    return NmfFactors(np.ones((2, H.shape[0])), H, 0.0, 0)


# -- activation curve --------------------------------------------------

def test_curve_zero_and_single_column():
    assert not np.any(activation_curve(_factors(np.zeros((2, 5)))).values)
    H = np.zeros((3, 6))
    H[1, 4] = 2.5
    np.testing.assert_array_equal(activation_curve(_factors(H)).values, [0, 0, 0, 0, 1, 0])


def test_curve_matches_loop_oracle():
    H = np.random.default_rng(0).random((3, 10))
    sums = [sum(H[r, n] for r in range(3)) for n in range(10)]
    oracle = np.array(sums) / max(sums)
    np.testing.assert_allclose(activation_curve(_factors(H)).values, oracle, atol=1e-9)


@given(arrays(np.float64, (3, 8), elements=st.floats(0, 1e3)))
def test_curve_range(H):
    v = activation_curve(_factors(H)).values
    assert np.all((v >= 0) & (v <= 1))
    assert v.max() == 1.0 or not np.any(H)


# -- mask to intervals -------------------------------------------------

def test_mask_examples():
    assert mask_to_intervals(np.zeros(50, bool), HOP) == []
    m = np.zeros(600, bool)
    m[100:200] = True
    assert mask_to_intervals(m, 0.015625) == [(1.5625, 3.125)]
    m = np.zeros(60, bool)
    m[10:20] = True
    m[23:31] = True
    assert mask_to_intervals(m, 0.01, min_event_seconds=0.0, max_gap_seconds=0.05) == [(0.1, 0.31)]


def test_short_runs_dropped_after_merge():
    m = np.zeros(100, bool)
    m[10:13] = True
    m[14:16] = True
    # 3 + 2 frames separated by one frame: merged run spans 6 frames (0.06 s)
    assert mask_to_intervals(m, 0.01, min_event_seconds=0.05, max_gap_seconds=0.02) == [(0.1, 0.16)]
    assert mask_to_intervals(m, 0.01, min_event_seconds=0.07, max_gap_seconds=0.02) == []


@given(st.lists(st.booleans(), max_size=80), st.floats(0, 0.2), st.floats(0, 0.2))
def test_intervals_ordered_disjoint_cover_kept_frames(mask, min_ev, gap):
    ivs = mask_to_intervals(np.array(mask, bool), 0.01, min_ev, gap)
    for on, off in ivs:
        assert off > on >= 0 and off <= len(mask) * 0.01 + 1e-12
        assert off - on >= min_ev - 1e-12
    assert all(a[1] < b[0] for a, b in zip(ivs, ivs[1:]))


# -- approximate strong labels ----------------------------------------

def _tone_clip(onset=1.0, offset=2.0, seed=0):
    cfg = SynthCorpusConfig(n_clips=1, clip_seconds=4.0, events_per_clip=(0, 0), seed=seed)
    clip, _ = synth_clip(cfg, 0)
    rate = clip.sample_rate
    t = np.arange(int(onset * rate), int(offset * rate))
    x = clip.samples.copy()
    x[t] += 0.1 * np.sqrt(2) * np.sin(2 * np.pi * 500 * t / rate)
    clip.samples = x
    return clip


def test_tone_interval_localized():
    mel = mel_spectrogram(_tone_clip())
    events = approximate_strong_labels(mel, WeakClipLabel("c", frozenset({"Tone"})))
    assert events and all(e.label == "Tone" and e.source == "nmf" for e in events)
    assert interval_iou([(e.onset, e.offset) for e in events], [(1.0, 2.0)]) >= 0.5
    assert all(e.onset < 2.0 and e.offset > 1.0 for e in events)


def test_two_tags_share_intervals():
    mel = mel_spectrogram(_tone_clip())
    events = approximate_strong_labels(mel, WeakClipLabel("c", frozenset({"A", "B"})))
    by_time = {}
    for e in events:
        by_time.setdefault((e.onset, e.offset), set()).add(e.label)
    assert all(v == {"A", "B"} for v in by_time.values())


def test_full_clip_fallback():
    mel = MelSpectrogram(np.ones((40, 64)), HOP, 40 * HOP)
    # constant activations: all frames equal 1, so only a mask shorter than
    # min_event can empty it; use a min_event longer than the clip
    opts = LabelingOptions(min_event_seconds=10.0)
    events = approximate_strong_labels(mel, WeakClipLabel("c", frozenset({"A", "B"})), opts)
    assert sorted((e.label, e.onset, e.offset) for e in events) == [("A", 0.0, 40 * HOP), ("B", 0.0, 40 * HOP)]


def test_empty_tags_and_degenerate_input():
    mel = MelSpectrogram(np.zeros((40, 64)), HOP, 1.0)
    with pytest.raises(ValueError):
        approximate_strong_labels(mel, WeakClipLabel("c", frozenset()))
    with pytest.raises(DegenerateInputError):
        approximate_strong_labels(mel, WeakClipLabel("c", frozenset({"A"})))


@pytest.mark.parametrize("kw", [dict(threshold=0.0), dict(threshold=1.0), dict(min_event_seconds=-1)])
def test_invalid_options(kw):
    mel = MelSpectrogram(np.ones((40, 64)), HOP, 1.0)
    with pytest.raises(ValueError):
        approximate_strong_labels(mel, WeakClipLabel("c", frozenset({"A"})), LabelingOptions(**kw))


def _labeled_duration(events):
    return sum(e.offset - e.onset for e in events if e.label == "Tone")


def test_theta_monotone_and_events_inside_clip():
    clip = _tone_clip(seed=3)
    mel = mel_spectrogram(clip)
    weak = WeakClipLabel("c", frozenset({"Tone"}))
    total = []
    for th in (0.05, 0.2, 0.4, 0.6, 0.8, 0.95):
        opts = LabelingOptions(threshold=th, min_event_seconds=0.0, max_gap_seconds=0.0)
        events = approximate_strong_labels(mel, weak, opts)
        assert all(0 <= e.onset < e.offset <= mel.duration + 1e-9 for e in events)
        total.append(_labeled_duration(events))
    assert all(a >= b - 1e-12 for a, b in zip(total, total[1:]))


def test_tiny_theta_covers_whole_clip():
    rng = np.random.default_rng(1)
    mel = MelSpectrogram(rng.random((50, 64)) + 0.5, HOP, 50 * HOP)
    opts = LabelingOptions(threshold=1e-6)
    (ev,) = approximate_strong_labels(mel, WeakClipLabel("c", frozenset({"A"})), opts)
    assert (ev.onset, ev.offset) == (0.0, 50 * HOP)


def test_labeling_deterministic():
    mel = mel_spectrogram(_tone_clip(seed=5))
    weak = WeakClipLabel("c", frozenset({"Tone"}))
    opts = LabelingOptions(nmf=NmfOptions(seed=3))
    assert approximate_strong_labels(mel, weak, opts) == approximate_strong_labels(mel, weak, opts)


# -- interval IoU and calibration -------------------------------------

def test_interval_iou():
    assert interval_iou([(0, 1)], [(0, 1)]) == 1.0
    assert interval_iou([(0, 1)], [(2, 3)]) == 0.0
    assert interval_iou([(0, 2)], [(1, 3)]) == pytest.approx(1 / 3)
    assert interval_iou([(0, 1), (0.5, 2)], [(0, 2)]) == 1.0
    assert interval_iou([], []) == 1.0


def test_calibration_picks_best_mean_iou():
    examples = [(mel_spectrogram(_tone_clip(seed=s)), WeakClipLabel("c", frozenset({"Tone"})), [(1.0, 2.0)])
                for s in range(2)]
    best, scores = calibrate_threshold(examples, grid=(0.1, 0.5, 0.9))
    assert scores[best] == max(scores.values())


# -- pseudo-tagging ----------------------------------------------------

def _zero_logit_model(k=3):
    m = build_model("proposed5", k, seed=0)
    m.tensors["head.weight"][...] = 0
    m.tensors["head.bias"][...] = 0
    return m


def test_zero_logits_tag_every_class():
    m = _zero_logit_model()
    x = np.random.default_rng(0).standard_normal((16, 64)).astype(np.float32)
    lab = tag_unlabeled(m, x, ("A", "B", "C"), 0.5, "u.wav")
    assert lab.tags == frozenset({"A", "B", "C"}) and lab.clip_id == "u.wav"
    assert tag_unlabeled(m, x, ("A", "B", "C"), 0.5 + 1e-6).tags == frozenset()


def test_tagging_vocabulary_mismatch():
    with pytest.raises(ValueError):
        tag_unlabeled(_zero_logit_model(), np.zeros((16, 64), np.float32), ("A", "B"))
