"""Independent reference implementations used by the tests.

Each oracle is written the slow, obvious way so it shares no code with the
package implementation it checks.
"""

import math

import numpy as np


def planted_nmf(seed, L=64, N=200):
    """Exactly factorizable M = W H with sparse non-negative factors.

    Half the entries of W and H are zeroed so the factorization is essentially
    unique; dense planted factors admit many equally good rotations and the
    multiplicative updates then stall far from the planted solution.
    Returns (M, R).
    """
    rng = np.random.default_rng(seed)
    R = 1 + seed % 3
    W = rng.random((L, R)) * (rng.random((L, R)) < 0.5)
    H = rng.exponential(1.0, (R, N)) * (rng.random((R, N)) < 0.5)
    # every component must appear somewhere
    W[rng.integers(L, size=R), np.arange(R)] += 1.0
    H[np.arange(R), rng.integers(N, size=R)] += 1.0
    return W @ H, R


def frobenius_loop(M, W, H):
    total = 0.0
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            s = sum(W[i, r] * H[r, j] for r in range(W.shape[1]))
            total += (M[i, j] - s) ** 2
    return math.sqrt(total)


# ---------------------------------------------------------------- metrics

def segment_f1_bruteforce(refs, preds, durations, seg=1.0):
    """Walk every (clip, class, segment) cell and test overlap directly."""
    classes = sorted({e.label for e in refs} | {e.label for e in preds})
    tp = fp = fn = 0
    for clip, dur in sorted(durations.items()):
        n_seg = max(1, math.ceil(dur / seg - 1e-9))
        for c in classes:
            for s in range(n_seg):
                lo, hi = s * seg, (s + 1) * seg
                r = any(e.clip_id == clip and e.label == c and e.onset < hi and e.offset > lo
                        for e in refs)
                p = any(e.clip_id == clip and e.label == c and e.onset < hi and e.offset > lo
                        for e in preds)
                tp += r and p
                fp += p and not r
                fn += r and not p
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return 2 * prec * rec / (prec + rec) if prec + rec else 0.0, (tp, fp, fn)


def compatible(ref, pred, onset_collar=0.2, offset_min=0.2, offset_ratio=0.2):
    off = max(offset_min, offset_ratio * (ref.offset - ref.onset))
    return abs(pred.onset - ref.onset) <= onset_collar and abs(pred.offset - ref.offset) <= off


def max_matching_bruteforce(refs, preds, **kw):
    """Size of the largest one-to-one compatible matching, by exhaustive search."""
    best = 0

    def search(i, used, size):
        nonlocal best
        if size + (len(refs) - i) <= best:
            return
        if i == len(refs):
            best = max(best, size)
            return
        for j in range(len(preds)):
            if j not in used and compatible(refs[i], preds[j], **kw):
                search(i + 1, used | {j}, size + 1)
        search(i + 1, used, size)

    search(0, frozenset(), 0)
    return best


# ----------------------------------------------------------- gradients

def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar f with respect to every entry of x (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    """Norm-wise relative error ||a - b|| / max(||a|| + ||b||, tiny)."""
    num = np.linalg.norm(np.ravel(a) - np.ravel(b))
    den = max(np.linalg.norm(np.ravel(a)) + np.linalg.norm(np.ravel(b)), 1e-30)
    return num / den


# --------------------------------------------------------------- shapes

def shape_chain(arch, T, F=64, K=3):
    """Hand propagation of (T, F, C) through the architecture; pooling floors."""
    shapes = [(T, F, 1)]
    t, f = T, F
    for block, c in enumerate((64, 128, 256, 512), start=1):
        convs = 1 if arch == "proposed5" else 2
        for _ in range(convs):
            shapes.append((t, f, c))  # same padding keeps T and F
        if block <= 3:
            t, f = t // 2, f // 2
            shapes.append((t, f, c))
    shapes.append((t, K))
    return shapes


def random_event_instance(rng, max_events=6, classes=("A", "B"), clip_seconds=5.0):
    """Small refs/preds lists on one or two clips; times on a 50 ms grid so
    collar boundaries are hit often."""
    from nmfsed.ingest import StrongEvent

    def events(n):
        out = []
        for _ in range(n):
            on = round(float(rng.integers(0, int(clip_seconds / 0.05) - 2)) * 0.05, 2)
            dur = round(float(rng.integers(1, 30)) * 0.05, 2)
            out.append(StrongEvent(f"c{int(rng.integers(2))}.wav", on, min(on + dur, clip_seconds),
                                   str(rng.choice(classes))))
        return [e for e in out if e.offset > e.onset]

    n_ref = int(rng.integers(0, max_events + 1))
    refs = events(n_ref)
    preds = events(int(rng.integers(0, max_events - n_ref + 1)))
    # jittered copies of refs make matches likely
    for e in refs:
        if len(refs) + len(preds) < max_events and rng.random() < 0.5:
            j = rng.integers(-5, 6, size=2) * 0.05
            on, off = max(0.0, round(e.onset + j[0], 2)), min(clip_seconds, round(e.offset + j[1], 2))
            if off > on:
                preds.append(StrongEvent(e.clip_id, on, off, e.label))
    return refs, preds
