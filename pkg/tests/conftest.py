import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_corpus_config(root, n_weak=4, n_strong=0, n_unlabeled=0, n_eval=3, epochs=1):
    """A very small desk setup for pipeline plumbing tests (seconds, not minutes)."""
    from nmfsed.desk import build_desk_corpora
    cfg = build_desk_corpora(str(root), n_weak, n_strong, n_unlabeled, n_eval, seed=0)
    cfg.train.epochs = epochs
    cfg.train.crop_frames = 32
    cfg.train.batch_size = 4
    cfg.nmf.max_iters = 50
    return cfg


# Acceptance results, one line per criterion, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
