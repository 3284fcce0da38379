import numpy as np
import pytest

from affectstream.stream import AU_NAMES, AuScores, BoundingBox, FrameObservation, LandmarkSet


def make_obs(ts, video="v0", face="f0", au=None, box=(10.0, 10.0, 100.0, 100.0), landmarks=None, luma=None):
    raw = None
    if au is not None:
        raw = au if isinstance(au, AuScores) else AuScores.from_mapping({**{n: 0.0 for n in AU_NAMES}, **au})
    return FrameObservation(video, face, ts, BoundingBox(*box), landmarks, raw, luma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def level_eyes():
    return LandmarkSet((40.0, 50.0), (80.0, 50.0), (60.0, 70.0), (60.0, 95.0))


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
