"""Stage graph for the C1-C7 data combinations, with content-addressed caching.

Every stage artifact lives under ``<out>/cache/<stage>/<key>`` where ``key``
hashes the stage's inputs and options; a stage whose key already exists on
disk is skipped. Changing an option therefore only recomputes the stages
downstream of it.
"""

import glob
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field

from . import features as feat
from .config import dump_config
from .evaluation import DetectionOptions, event_based_f1, posteriors_to_events, segment_based_f1, write_report
from .ingest import (PIPELINE_RATE, WeakClipLabel, load_strong_manifest,
                     load_weak_manifest, read_wav, resample, write_strong_manifest,
                     write_weak_manifest)
from .nmf import NmfOptions
from .nn.checkpoint import load_checkpoint
from .nn.model import TIME_REDUCTION, build_model, forward
from .trainer import TrainConfig, rasterize_labels, train
from .weak2strong import LabelingOptions, approximate_strong_labels, tag_unlabeled

log = logging.getLogger(__name__)

COMBOS = ("C1", "C2", "C3", "C4", "C5", "C6", "C7")
# which supervision sources each combination trains on
COMBO_SOURCES = {
    "C1": ("weak",),
    "C2": ("strong",),
    "C3": ("weak", "strong"),
    "C4": ("tagged",),
    "C5": ("weak", "tagged"),
    "C6": ("tagged",),
    "C7": ("weak", "strong", "tagged"),
}
# combination whose model tags the unlabeled set when bootstrapping
BOOTSTRAP_FROM = {"C4": "C1", "C5": "C1", "C6": "C3", "C7": "C3"}
INPUT_HOP = feat.HOP / PIPELINE_RATE


class PipelineError(RuntimeError):
    pass


class MissingCorpusError(PipelineError):
    pass


class PrerequisiteError(PipelineError):
    pass


@dataclass
class RunManifest:
    combo: str
    run_dir: str
    config_snapshot: str
    stages: list = field(default_factory=list)  # (stage, path, seconds)
    report_path: str = ""
    checkpoint_path: str = ""
    metrics: dict = field(default_factory=dict)

    def write(self):
        path = os.path.join(self.run_dir, "manifest.tsv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("stage\tpath\tseconds\n")
            for stage, p, secs in self.stages:
                fh.write(f"{stage}\t{p}\t{secs:.3f}\n")
        return path


# ------------------------------------------------------------- hashing

def _digest(*parts):
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, bytes):
            h.update(p)
        else:
            h.update(json.dumps(p, sort_keys=True, default=str).encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:24]


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:24]


# ------------------------------------------------------------- corpora

def corpus_audio(root):
    """Sorted wav paths of a corpus directory (``audio/`` subdir or the dir itself)."""
    sub = os.path.join(root, "audio")
    base = sub if os.path.isdir(sub) else root
    return sorted(glob.glob(os.path.join(base, "*.wav")))


def _require(path, what, combo):
    if not path or not os.path.isdir(path):
        raise MissingCorpusError(f"{combo} needs the {what} corpus (got {path!r})")
    return path


class Stages:
    """Cached per-stage computations sharing one cache root."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.cache = os.path.join(cfg.out, "cache")
        self.classes = tuple(cfg.classes)

    def _dir(self, stage, key=None):
        d = os.path.join(self.cache, stage) if key is None else os.path.join(self.cache, stage, key)
        os.makedirs(d, exist_ok=True)
        return d

    # -- features -----------------------------------------------------
    def features(self, wav_path):
        """Returns (key, mel path, logmel path, duration)."""
        key = _digest("features-v1", file_digest(wav_path), asdict(self.cfg.features))
        d = self._dir("features")
        mel_p, log_p = os.path.join(d, key + ".mel"), os.path.join(d, key + ".logmel")
        meta_p = os.path.join(d, key + ".json")
        if not (os.path.exists(mel_p) and os.path.exists(log_p) and os.path.exists(meta_p)):
            clip = read_wav(wav_path)
            if clip.sample_rate != PIPELINE_RATE:
                clip = resample(clip, PIPELINE_RATE)
            mel = feat.mel_spectrogram(clip)
            logmel = feat.log_compress(mel, self.cfg.features.log_eps)
            feat.cache_write(mel.values, mel_p)
            feat.cache_write(logmel.values, log_p)
            feat.atomic_write_bytes(meta_p, json.dumps({"duration": clip.duration}).encode())
        with open(meta_p, encoding="utf-8") as fh:
            duration = json.load(fh)["duration"]
        return key, mel_p, log_p, duration

    def features_for(self, wav_paths):
        return {os.path.basename(p): self.features(p) for p in wav_paths}

    # -- NMF labels ---------------------------------------------------
    def labeling_options(self):
        c = self.cfg
        return LabelingOptions(
            threshold=c.labeling.threshold,
            min_event_seconds=c.labeling.min_event_seconds,
            max_gap_seconds=c.labeling.max_gap_seconds,
            nmf=NmfOptions(max_iters=c.nmf.max_iters, rel_tol=c.nmf.rel_tol, seed=c.nmf_seed()),
            components=c.nmf.components or None,
        )

    def nmf_labels(self, feature_entry, weak):
        fkey, mel_p, _, duration = feature_entry
        opts = self.labeling_options()
        key = _digest("nmf-label-v1", fkey, weak.clip_id, sorted(weak.tags), asdict(opts))
        path = os.path.join(self._dir("labels"), key + ".tsv")
        if not os.path.exists(path):
            mel = feat.MelSpectrogram(feat.cache_read(mel_p), INPUT_HOP, duration)
            events = approximate_strong_labels(mel, weak, opts)
            tmp = path + ".part"
            write_strong_manifest(events, tmp, with_source=True)
            os.replace(tmp, path)
        return load_strong_manifest(path, self.classes), path

    # -- tagging ------------------------------------------------------
    def tag(self, feature_entry, clip_id, model, model_digest):
        fkey, _, log_p, _ = feature_entry
        thr = self.cfg.tagging.threshold
        key = _digest("tag-v1", fkey, clip_id, model_digest, thr, self.classes)
        path = os.path.join(self._dir("tags"), key + ".tsv")
        if not os.path.exists(path):
            label = tag_unlabeled(model, feat.cache_read(log_p), self.classes, thr, clip_id)
            tmp = path + ".part"
            write_weak_manifest([label] if label.tags else [], tmp)
            os.replace(tmp, path)
        rows = load_weak_manifest(path, self.classes)
        return (rows[0] if rows else WeakClipLabel(clip_id, frozenset())), path

    # -- training -----------------------------------------------------
    def train_config(self):
        t = self.cfg.train
        return TrainConfig(epochs=t.epochs, batch_size=t.batch_size, lr=t.lr,
                           crop_frames=t.crop_frames, seed=self.cfg.train_seed(),
                           classes=self.classes, recalibrate_bn=t.recalibrate_bn)

    def train(self, items):
        """items: list of (clip_id, feature entry, events). Returns (ckpt path, report, dir)."""
        tcfg = self.train_config()
        arch = self.cfg.train.arch
        key = _digest("train-v2", arch, asdict(tcfg),
                      [(cid, fe[0], [(e.onset, e.offset, e.label) for e in evs])
                       for cid, fe, evs in items])
        d = self._dir("train", key)
        ckpt = os.path.join(d, "model.nmfc")
        if not os.path.exists(ckpt):
            dataset = []
            for clip_id, (_, _, log_p, duration), events in items:
                x = feat.cache_read(log_p)
                for ev in events:
                    if ev.label not in self.classes:
                        raise PipelineError(f"{clip_id}: class {ev.label!r} not in vocabulary")
                    if ev.onset < 0 or ev.offset > duration + 1e-9:
                        raise PipelineError(f"{clip_id}: event {ev.onset}-{ev.offset} outside clip")
                dataset.append((x, rasterize_labels(events, x.shape[0], INPUT_HOP, self.classes)))
            model = build_model(arch, len(self.classes), tcfg.seed)
            report = train(model, dataset, tcfg, checkpoint_path=ckpt + ".part")
            os.replace(ckpt + ".part", ckpt)
            report.checkpoint_path = ckpt
            report.write(os.path.join(d, "train.log"), os.path.join(d, "loss.tsv"))
        return ckpt, d

    # -- detection ----------------------------------------------------
    def detection_options(self):
        d = self.cfg.detection
        return DetectionOptions(d.threshold, d.median_width, d.min_event_seconds, d.max_gap_seconds)

    def detect(self, ckpt, feature_entries):
        """feature_entries: {clip_id: entry}. Returns (events, preds path)."""
        opts = self.detection_options()
        key = _digest("detect-v1", file_digest(ckpt),
                      sorted((c, e[0]) for c, e in feature_entries.items()), asdict(opts),
                      self.classes)
        path = os.path.join(self._dir("detect"), key + ".tsv")
        if not os.path.exists(path):
            model = load_checkpoint(ckpt)
            events = []
            for clip_id in sorted(feature_entries):
                x = feat.cache_read(feature_entries[clip_id][2])
                post, _ = forward(model, x)
                events.extend(posteriors_to_events(post, INPUT_HOP * TIME_REDUCTION,
                                                   self.classes, clip_id, opts))
            write_strong_manifest(events, path + ".part", with_source=True)
            os.replace(path + ".part", path)
        return load_strong_manifest(path, self.classes), path


def _write_listing(path, rows, header):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for r in rows:
            fh.write("\t".join(str(x) for x in r) + "\n")
    return path


def run_combination(cfg, combo=None, tagging_checkpoint=None):
    """Execute one combination end to end and score it on the evaluation set."""
    combo = (combo or cfg.combo).upper()
    if combo not in COMBOS:
        raise PipelineError(f"unknown combination {combo!r}; choose from {', '.join(COMBOS)}")
    sources = COMBO_SOURCES[combo]
    corpus = cfg.corpus
    if "weak" in sources:
        _require(corpus.weak, "weakly labeled", combo)
    if "strong" in sources:
        _require(corpus.strong, "strongly labeled synthetic", combo)
    if "tagged" in sources:
        _require(corpus.unlabeled, "unlabeled", combo)
    _require(corpus.eval, "evaluation", combo)

    stages = Stages(cfg)
    run_dir = os.path.join(cfg.out, "runs", combo)
    os.makedirs(run_dir, exist_ok=True)
    snapshot = dump_config(cfg)
    with open(os.path.join(run_dir, "config.cfg"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(snapshot)
    manifest = RunManifest(combo, run_dir, snapshot)
    items = []

    if "weak" in sources:
        t0 = time.perf_counter()
        weak = load_weak_manifest(os.path.join(corpus.weak, "weak.tsv"), stages.classes)
        audio = {os.path.basename(p): p for p in corpus_audio(corpus.weak)}
        rows = []
        for lab in weak:
            if lab.clip_id not in audio:
                raise PipelineError(f"weak manifest names missing audio {lab.clip_id}")
            fe = stages.features(audio[lab.clip_id])
            events, lpath = stages.nmf_labels(fe, lab)
            items.append((lab.clip_id, fe, events))
            rows.append((lab.clip_id, fe[2], lpath))
        manifest.stages.append(("features+nmf-label:weak", _write_listing(
            os.path.join(run_dir, "weak_labels.tsv"), rows, ("clip", "logmel", "labels")),
            time.perf_counter() - t0))

    if "strong" in sources:
        t0 = time.perf_counter()
        strong = load_strong_manifest(os.path.join(corpus.strong, "strong.tsv"), stages.classes)
        by_clip = {}
        for ev in strong:
            by_clip.setdefault(ev.clip_id, []).append(ev)
        rows = []
        for p in corpus_audio(corpus.strong):
            cid = os.path.basename(p)
            fe = stages.features(p)
            items.append((cid, fe, by_clip.get(cid, [])))
            rows.append((cid, fe[2], len(by_clip.get(cid, []))))
        manifest.stages.append(("features:strong", _write_listing(
            os.path.join(run_dir, "strong_clips.tsv"), rows, ("clip", "logmel", "n_events")),
            time.perf_counter() - t0))

    if "tagged" in sources:
        ckpt = tagging_checkpoint or cfg.tagging.checkpoint
        if not ckpt:
            if not cfg.bootstrap:
                raise PrerequisiteError(
                    f"{combo} needs a tagging checkpoint (tagging.checkpoint) or --bootstrap")
            sub = run_combination(cfg, BOOTSTRAP_FROM[combo])
            ckpt = sub.checkpoint_path
            manifest.stages.append((f"bootstrap:{sub.combo}", sub.run_dir, 0.0))
        if not os.path.exists(ckpt):
            raise PrerequisiteError(f"tagging checkpoint {ckpt} does not exist")
        t0 = time.perf_counter()
        model = load_checkpoint(ckpt)
        if model.n_classes != len(stages.classes):
            raise PrerequisiteError("tagging checkpoint class count does not match vocabulary")
        mdig = file_digest(ckpt)
        rows = []
        for p in corpus_audio(corpus.unlabeled):
            cid = os.path.basename(p)
            fe = stages.features(p)
            lab, tpath = stages.tag(fe, cid, model, mdig)
            if not lab.tags:
                rows.append((cid, tpath, ""))
                continue
            events, lpath = stages.nmf_labels(fe, lab)
            items.append((cid, fe, events))
            rows.append((cid, tpath, lpath))
        manifest.stages.append(("tag+nmf-label:unlabeled", _write_listing(
            os.path.join(run_dir, "tagged_labels.tsv"), rows, ("clip", "tags", "labels")),
            time.perf_counter() - t0))

    if not items:
        raise PipelineError(f"{combo}: no training material after labeling")

    t0 = time.perf_counter()
    ckpt, train_dir = stages.train(items)
    manifest.checkpoint_path = ckpt
    manifest.stages.append(("train", ckpt, time.perf_counter() - t0))

    t0 = time.perf_counter()
    eval_audio = corpus_audio(corpus.eval)
    eval_feats = stages.features_for(eval_audio)
    preds, ppath = stages.detect(ckpt, eval_feats)
    manifest.stages.append(("detect", ppath, time.perf_counter() - t0))

    t0 = time.perf_counter()
    refs = load_strong_manifest(os.path.join(corpus.eval, "strong.tsv"), stages.classes)
    durations = {cid: e[3] for cid, e in eval_feats.items()}
    ev = event_based_f1(refs, preds)
    seg = segment_based_f1(refs, preds, durations)
    manifest.metrics = {"event": ev, "segment": seg}
    report_path = os.path.join(run_dir, "report.tsv")
    write_report(report_path, {combo: (ev, seg)},
                 {"arch": cfg.train.arch, "seed": cfg.seed, "checkpoint": ckpt})
    manifest.report_path = report_path
    manifest.stages.append(("eval", report_path, time.perf_counter() - t0))
    manifest.write()
    return manifest
