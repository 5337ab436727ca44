"""Shared builders: a tiny rendered corpus, its manifest, and annotated stores.

Session-scoped where the artifact is immutable (video files, manifest);
function-scoped stores are cheap copies so tests can mutate freely.
"""

from __future__ import annotations

import shutil

import pytest

from yawnforge.annotate import auto_annotate
from yawnforge.backends import DetectorConfig
from yawnforge.fixtures import (
    MeanIntensityClassifier,
    make_fixture_corpus,
)
from yawnforge.ingest import build_corpus_manifest, extract_corpus, save_manifest
from yawnforge.store import AnnotationStore


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Two 10-frame videos with programmed truth."""
    root = tmp_path_factory.mktemp("corpus")
    truth = make_fixture_corpus(root, n_videos=2, frames_per_video=10)
    return {"root": root, "truth": truth}


@pytest.fixture(scope="session")
def ingested(corpus, tmp_path_factory):
    work = tmp_path_factory.mktemp("work")
    manifest = build_corpus_manifest(corpus["root"])
    extract_corpus(manifest, work, stride=1, image_format="png")
    save_manifest(manifest, work / "manifest.json")
    return {"work": work, "manifest": manifest, **corpus}


@pytest.fixture(scope="session")
def annotated_store_dir(ingested, tmp_path_factory):
    """A store with the machine pass applied; treat as read-only."""
    store_dir = tmp_path_factory.mktemp("annotated") / "store"
    truth_path = str(ingested["truth"].path)
    auto_annotate(
        ingested["manifest"],
        classifier=MeanIntensityClassifier(),
        store_dir=store_dir,
        detector_cfg=DetectorConfig(
            backend_id="fixture", options={"truth": truth_path}
        ),
        mesh_backend="fixture",
        mesh_options={"truth": truth_path},
    )
    return store_dir


@pytest.fixture
def store_dir(annotated_store_dir, tmp_path):
    """Private mutable copy of the annotated store."""
    dest = tmp_path / "store"
    shutil.copytree(annotated_store_dir, dest)
    return dest


@pytest.fixture
def store(store_dir):
    return AnnotationStore.open(store_dir)


def checkout_and_submit(store, decisions_fn, session="s1", reviewer="rev",
                        ordering="by_video"):
    """Drive one review round at the store level; returns the submit result."""
    result = store.checkout(session, reviewer, ordering=ordering)
    assert result.status == "ok", result.status
    decisions = decisions_fn(result.frames)
    return store.submit(result.batch["batch_id"], session, reviewer, decisions)


def accept_all(frames):
    return [{"frame_id": f["frame_id"], "final_label": f["auto_label"]}
            for f in frames]


# Acceptance-gate reporting: one visible line per criterion at the end of
# the run, independent of output capture.

_acceptance_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call":
        _acceptance_outcomes[report.nodeid] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        _acceptance_outcomes[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_outcomes:
        return
    style = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in _acceptance_outcomes.items():
        name = nodeid.rsplit("::", 1)[-1]
        terminalreporter.write_line(
            f"{style.get(outcome, outcome.upper()):4s}  {name}"
        )
