import sys
from pathlib import Path

import pytest

from focusloop.archive import write_archive, write_embedding_sidecar
from focusloop.backends import MockEmbedder

sys.path.insert(0, str(Path(__file__).parent))


def payload(i: int) -> bytes:
    return f"frame-{i:05d}".encode() + bytes([i % 251]) * (16 + i % 7)


@pytest.fixture
def make_archive(tmp_path):
    """Factory: regular archive with ``n`` frames at ``fps``; returns its path."""

    def make(n=60, fps=1.0, name="clip", duration_ms=None):
        fps_millis = int(round(fps * 1000))
        frames = [(int(round(i * 1_000_000 / fps_millis)), payload(i)) for i in range(n)]
        path = tmp_path / f"{name}.fafv"
        write_archive(frames, fps_millis, path, duration_ms=duration_ms)
        return path

    return make


@pytest.fixture
def make_sidecar(tmp_path):
    def make(times_ms, name="clip", dim=16, seed=0):
        emb = MockEmbedder(dim, seed)
        path = tmp_path / f"{name}.faem"
        write_embedding_sidecar([(t, emb.embed_frame(str(t).encode()).values) for t in times_ms], path)
        return path

    return make


_acceptance: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py::test_ac" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        _acceptance.append((name, "PASS" if report.passed else "FAIL", report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, dur in sorted(_acceptance):
        terminalreporter.write_line(f"{outcome}  {name}  ({dur:.2f}s)")
