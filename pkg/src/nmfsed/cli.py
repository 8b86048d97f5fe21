"""Command-line entry point: ``python -m nmfsed <subcommand> ...``."""

import argparse
import logging
import os
import sys

from . import features as feat
from .config import ConfigError, load_config
from .evaluation import event_based_f1, infer_durations, segment_based_f1, write_report
from .ingest import (DEFAULT_CLASSES, PIPELINE_RATE, SynthCorpusConfig,
                     generate_synth_corpus, load_strong_manifest, load_weak_manifest, read_wav,
                     resample, write_strong_manifest, write_weak_manifest)
from .pipeline import COMBOS, INPUT_HOP, PipelineError, Stages, corpus_audio, run_combination
from .nn.checkpoint import load_checkpoint
from .nn.model import build_model
from .trainer import rasterize_labels, train
from .weak2strong import approximate_strong_labels, tag_unlabeled

log = logging.getLogger("nmfsed")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="global seed (overrides config)")
    p.add_argument("--out", help="output path (file or directory, per subcommand)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key, e.g. train.epochs=5")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="nmfsed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--n-clips", type=int)
    p.add_argument("--seconds", type=float)
    p.add_argument("--snr-db", type=float)

    p = sub.add_parser("features", parents=[common], help="write .mel/.logmel caches")
    p.add_argument("--audio", required=True, help="wav file or directory")

    p = sub.add_parser("nmf-label", parents=[common], help="weak -> approximate strong labels")
    p.add_argument("--corpus", required=True, help="directory holding weak.tsv and audio")

    p = sub.add_parser("train", parents=[common], help="train a model on strong labels")
    p.add_argument("--corpus", required=True, help="directory holding audio")
    p.add_argument("--labels", help="strong manifest (default <corpus>/strong.tsv)")

    p = sub.add_parser("tag", parents=[common], help="pseudo-tag unlabeled audio")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", required=True)

    p = sub.add_parser("detect", parents=[common], help="detect events with a model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", required=True)

    p = sub.add_parser("eval", parents=[common], help="score predictions against references")
    p.add_argument("--refs", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--audio", help="directory of the scored clips (for clip durations)")

    p = sub.add_parser("run", parents=[common], help="run data combinations end to end")
    p.add_argument("--combo", required=True, help="C1..C7, comma separated for several")
    p.add_argument("--bootstrap", action="store_true",
                   help="train the tagging model first when C4-C7 lack a checkpoint")
    p.add_argument("--tagging-checkpoint")
    return parser


def _config(args):
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _wavs(path):
    return [path] if os.path.isfile(path) else corpus_audio(path)


def _load_clip(path):
    clip = read_wav(path)
    return resample(clip, PIPELINE_RATE) if clip.sample_rate != PIPELINE_RATE else clip


def _need_out(args):
    if not args.out:
        raise ConfigError(f"{args.command} needs --out")
    return args.out


def cmd_synth(args, cfg):
    s = cfg.synth
    n = args.n_clips if args.n_clips is not None else s.n_clips
    sc = SynthCorpusConfig(
        n_clips=n, clip_seconds=args.seconds or s.clip_seconds,
        classes=tuple(c for c in DEFAULT_CLASSES if c.name in cfg.classes) or DEFAULT_CLASSES,
        events_per_clip=(s.events_min, s.events_max),
        event_seconds=(s.event_min_seconds, s.event_max_seconds),
        snr_db=args.snr_db if args.snr_db is not None else s.snr_db,
        sample_rate=s.sample_rate, seed=cfg.seed, prefix=s.prefix)
    corpus = generate_synth_corpus(sc, _need_out(args))
    print(f"wrote {len(corpus.clip_names)} clips, {len(corpus.strong)} events to {args.out}")


def cmd_features(args, cfg):
    out = _need_out(args)
    os.makedirs(out, exist_ok=True)
    for p in _wavs(args.audio):
        mel = feat.mel_spectrogram(_load_clip(p))
        stem = os.path.join(out, os.path.splitext(os.path.basename(p))[0])
        feat.cache_write(mel.values, stem + ".mel")
        feat.cache_write(feat.log_compress(mel, cfg.features.log_eps).values, stem + ".logmel")


def cmd_nmf_label(args, cfg):
    stages = Stages(cfg)
    opts = stages.labeling_options()
    weak = load_weak_manifest(os.path.join(args.corpus, "weak.tsv"), cfg.classes)
    audio = {os.path.basename(p): p for p in corpus_audio(args.corpus)}
    events = []
    for lab in weak:
        clip = _load_clip(audio[lab.clip_id])
        events.extend(approximate_strong_labels(feat.mel_spectrogram(clip), lab, opts))
    write_strong_manifest(events, _need_out(args), with_source=True)
    print(f"labeled {len(weak)} clips with {len(events)} events")


def cmd_train(args, cfg):
    out = _need_out(args)
    os.makedirs(out, exist_ok=True)
    stages = Stages(cfg)
    tcfg = stages.train_config()
    labels = load_strong_manifest(args.labels or os.path.join(args.corpus, "strong.tsv"), cfg.classes)
    by_clip = {}
    for ev in labels:
        by_clip.setdefault(ev.clip_id, []).append(ev)
    dataset = []
    for p in corpus_audio(args.corpus):
        cid = os.path.basename(p)
        if args.labels and cid not in by_clip:
            continue
        x = feat.log_compress(feat.mel_spectrogram(_load_clip(p)), cfg.features.log_eps).values
        dataset.append((x, rasterize_labels(by_clip.get(cid, []), x.shape[0], INPUT_HOP, cfg.classes)))
    model = build_model(cfg.train.arch, len(cfg.classes), tcfg.seed)
    report = train(model, dataset, tcfg, checkpoint_path=os.path.join(out, "model.nmfc"))
    report.write(os.path.join(out, "train.log"), os.path.join(out, "loss.tsv"))
    print(f"final loss {report.epoch_losses[-1]:.5f}; checkpoint {report.checkpoint_path}")


def cmd_tag(args, cfg):
    model = load_checkpoint(args.checkpoint)
    labels = []
    for p in _wavs(args.audio):
        logmel = feat.log_compress(feat.mel_spectrogram(_load_clip(p)), cfg.features.log_eps)
        lab = tag_unlabeled(model, logmel.values, cfg.classes, cfg.tagging.threshold,
                            os.path.basename(p))
        if lab.tags:
            labels.append(lab)
    write_weak_manifest(labels, _need_out(args))
    print(f"tagged {len(labels)} clips")


def cmd_detect(args, cfg):
    from .evaluation import posteriors_to_events
    from .nn.model import TIME_REDUCTION, forward
    model = load_checkpoint(args.checkpoint)
    opts = Stages(cfg).detection_options()
    events = []
    for p in _wavs(args.audio):
        logmel = feat.log_compress(feat.mel_spectrogram(_load_clip(p)), cfg.features.log_eps)
        post, _ = forward(model, logmel.values)
        events.extend(posteriors_to_events(post, INPUT_HOP * TIME_REDUCTION, cfg.classes,
                                           os.path.basename(p), opts))
    write_strong_manifest(events, _need_out(args), with_source=True)
    print(f"detected {len(events)} events")


def cmd_eval(args, cfg):
    refs = load_strong_manifest(args.refs)
    preds = load_strong_manifest(args.preds)
    durations = infer_durations(refs, preds)
    if args.audio:
        for p in corpus_audio(args.audio):
            durations[os.path.basename(p)] = read_wav(p).duration
    ev = event_based_f1(refs, preds)
    seg = segment_based_f1(refs, preds, durations)
    print(f"event_based_f1\t{ev.f1:.4f}\tP={ev.precision:.4f}\tR={ev.recall:.4f}")
    print(f"segment_based_f1\t{seg.f1:.4f}\tP={seg.precision:.4f}\tR={seg.recall:.4f}")
    if args.out:
        write_report(args.out, {"eval": (ev, seg)})


def cmd_run(args, cfg):
    if args.out:
        cfg.out = args.out
    if args.bootstrap:
        cfg.bootstrap = True
    combos = [c.strip().upper() for c in args.combo.split(",") if c.strip()]
    for c in combos:
        if c not in COMBOS:
            raise ConfigError(f"unknown combination {c!r}")
    results = {}
    for c in combos:
        m = run_combination(cfg, c, args.tagging_checkpoint)
        results[c] = (m.metrics["event"], m.metrics["segment"])
        print(f"{c}\tevent_based_f1={m.metrics['event'].f1:.4f}\t"
              f"segment_based_f1={m.metrics['segment'].f1:.4f}\t{m.run_dir}")
    if len(combos) > 1:
        path = os.path.join(cfg.out, "report.tsv")
        write_report(path, results, {"seed": cfg.seed})
        print(f"combined report {path}")


COMMANDS = {
    "synth": cmd_synth, "features": cmd_features, "nmf-label": cmd_nmf_label,
    "train": cmd_train, "tag": cmd_tag, "detect": cmd_detect, "eval": cmd_eval, "run": cmd_run,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, PipelineError, ValueError, OSError, RuntimeError) as exc:
        print(f"nmfsed {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0
