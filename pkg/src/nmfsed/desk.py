"""Desk-scale synthetic corpora and the settings used for the end-to-end runs."""

import os

from .config import PipelineConfig
from .features import mel_spectrogram
from .ingest import DEFAULT_CLASSES, SynthCorpusConfig, WeakClipLabel, generate_synth_corpus, synth_clip

# Frozen after the calibration run recorded in scripts/desk_experiment.py.
DESK_CROP_FRAMES = 128
DESK_EPOCHS = 30
# NMF labeling threshold from calibrate_threshold on localization_examples(10, LOCALIZATION_CAL_SEED).
DESK_THETA = 0.05
LOCALIZATION_CAL_SEED = 61
LOCALIZATION_TEST_SEED = 62

_SET_SEEDS = {"weak": 101, "strong": 202, "unlabeled": 303, "eval": 404}


def desk_corpus_config(n_clips, seed, prefix, snr_db=20.0):
    return SynthCorpusConfig(
        n_clips=n_clips, clip_seconds=10.0, classes=DEFAULT_CLASSES,
        events_per_clip=(1, 2), event_seconds=(0.5, 3.0), snr_db=snr_db,
        seed=seed, prefix=prefix)


def build_desk_corpora(root, n_weak=200, n_strong=0, n_unlabeled=0, n_eval=50, seed=0):
    """Generate the requested sets under ``root`` and return a config pointing at them.

    Each set gets its own seed and filename prefix, so sets never share clips.
    Existing sets with a matching manifest are reused.
    """
    cfg = PipelineConfig()
    cfg.classes = tuple(c.name for c in DEFAULT_CLASSES)
    cfg.seed = seed
    cfg.out = os.path.join(root, "out")
    for name, n in (("weak", n_weak), ("strong", n_strong), ("unlabeled", n_unlabeled), ("eval", n_eval)):
        if n <= 0:
            continue
        d = os.path.join(root, f"{name}{n}")
        if not os.path.exists(os.path.join(d, "weak.tsv")):
            generate_synth_corpus(desk_corpus_config(n, _SET_SEEDS[name] + 1000 * seed, name), d)
        setattr(cfg.corpus, name, d)
    cfg.labeling.threshold = DESK_THETA
    cfg.train.crop_frames = DESK_CROP_FRAMES
    cfg.train.epochs = DESK_EPOCHS
    return cfg


def localization_examples(n_clips, seed):
    """Single-tone clips with known bounds, as (mel, weak label, [(onset, offset)])."""
    cfg = SynthCorpusConfig(n_clips=n_clips, clip_seconds=10.0, classes=DEFAULT_CLASSES[:1],
                            events_per_clip=(1, 1), event_seconds=(0.5, 3.0), snr_db=20.0,
                            seed=seed, prefix="loc")
    out = []
    for i in range(n_clips):
        clip, events = synth_clip(cfg, i)
        tags = frozenset(e.label for e in events)
        out.append((mel_spectrogram(clip), WeakClipLabel(clip.id, tags),
                    [(e.onset, e.offset) for e in events]))
    return out
