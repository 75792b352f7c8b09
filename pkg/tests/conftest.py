import numpy as np
import pytest

from pdtrace.data import DrawSequence
from pdtrace.synth import SynthConfig, generate_corpus

ACCEPTANCE_RESULTS = []


def make_sequence(x, y, t, label="HC", subject_id="s1", a=None, l=None, p=None):
    n = len(t)
    a = np.full(n, 1.0) if a is None else a
    l = np.full(n, 0.8) if l is None else l
    p = np.full(n, 1.5) if p is None else p
    return DrawSequence(subject_id, label, np.column_stack([a, l, p, t, x, y]))


@pytest.fixture
def seq_factory():
    return make_sequence


@pytest.fixture(scope="session")
def small_corpus():
    cfg = SynthConfig(samples_per_sequence=300, sequences_per_subject=2)
    return generate_corpus(4, 3, cfg, seed=1)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.line(f"[{'PASS' if ok else 'FAIL'}] {number}. {name}: {detail}")
