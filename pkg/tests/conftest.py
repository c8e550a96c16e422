import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sjen.datasim import CorpusConfig, synth_corpus

# -- acceptance reporting ----------------------------------------------------
# Each acceptance criterion is one test (or one parametrized family) in
# test_acceptance.py; the terminal summary prints a single PASS/FAIL line per
# criterion so the gate is readable at a glance.

ACCEPTANCE_LABELS = {
    "test_c1_gradient_integrity": "C1 gradient integrity",
    "test_c2_stft_fidelity": "C2 STFT fidelity",
    "test_c3_simulation_oracle": "C3 simulation oracle",
    "test_c4_loss_identities": "C4 loss identities",
    "test_c5_toy_overfit": "C5 toy overfit",
    "test_c6_distillation_direction": "C6 distillation direction",
    "test_c7_metrics_sanity": "C7 metrics sanity",
    "test_c8_determinism": "C8 determinism",
    "test_c9_bench_reporting": "C9 bench reporting",
}

_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    base = report.nodeid.split("::")[-1].split("[")[0]
    if base not in ACCEPTANCE_LABELS:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        if _acceptance_results.get(base) == "FAIL":
            outcome = "FAIL"
        _acceptance_results[base] = outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for key, label in ACCEPTANCE_LABELS.items():
        if key in _acceptance_results:
            terminalreporter.write_line(f"{label}: {_acceptance_results[key]}")


# -- shared fixtures -----------------------------------------------------------


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """2 train / 4 test records, 0.6 s each: long enough for the
    intelligibility metric, small enough for per-test training runs."""
    out = tmp_path_factory.mktemp("corpus_small")
    cfg = CorpusConfig(out_dir=str(out), seed=7, n_train=2, n_test=4, duration_s=0.6)
    manifests = synth_corpus(cfg)
    return {"dir": out, "cfg": cfg, **manifests}


@pytest.fixture()
def rng():
    import numpy as np

    return np.random.default_rng(0)
