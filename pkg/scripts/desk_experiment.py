#!/usr/bin/env python
"""Desk-scale C1..C7 experiment on synthetic corpora.

Calibration record for the frozen acceptance floors (1-core Xeon, numpy/OpenBLAS):
    C1, proposed5, 30 epochs, 128-frame crops, 200 weak clips / 50 eval clips,
    threshold 0.05: event F1 0.956, segment F1 0.977, 1171 s.
    The floors checked by tests/test_acceptance.py are event 0.5 and segment 0.6.

Example:
    python scripts/desk_experiment.py --root /tmp/desk --combos C1
    python scripts/desk_experiment.py --root /tmp/desk --combos C2,C3 --n-strong 100 --epochs 10
"""

import argparse
import logging
import os
import time

from nmfsed.desk import build_desk_corpora
from nmfsed.evaluation import write_report
from nmfsed.pipeline import run_combination


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--root", required=True)
    ap.add_argument("--combos", default="C1")
    ap.add_argument("--n-weak", type=int, default=200)
    ap.add_argument("--n-strong", type=int, default=0)
    ap.add_argument("--n-unlabeled", type=int, default=0)
    ap.add_argument("--n-eval", type=int, default=50)
    ap.add_argument("--arch", default="proposed5")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--crop", type=int)
    ap.add_argument("--theta", type=float)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--bootstrap", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = build_desk_corpora(args.root, args.n_weak, args.n_strong, args.n_unlabeled,
                             args.n_eval, args.seed)
    cfg.train.arch = args.arch
    cfg.bootstrap = args.bootstrap
    if args.epochs:
        cfg.train.epochs = args.epochs
    if args.crop:
        cfg.train.crop_frames = args.crop
    if args.theta:
        cfg.labeling.threshold = args.theta

    results = {}
    for combo in args.combos.split(","):
        t0 = time.perf_counter()
        m = run_combination(cfg, combo)
        ev, seg = m.metrics["event"], m.metrics["segment"]
        results[combo] = (ev, seg)
        print(f"{combo}: event F1 {ev.f1:.4f} (P {ev.precision:.3f} R {ev.recall:.3f}) "
              f"segment F1 {seg.f1:.4f} (P {seg.precision:.3f} R {seg.recall:.3f}) "
              f"in {time.perf_counter() - t0:.0f} s", flush=True)
    write_report(os.path.join(args.root, "report.tsv"), results, {"arch": args.arch})


if __name__ == "__main__":
    main()
