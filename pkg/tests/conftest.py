import numpy as np
import pytest

from chicane.track import TrackGeometry, preset_track


def dense_rectangle(side: float = 400.0, half_width: float = 7.5,
                    points_per_side: int = 200) -> TrackGeometry:
    """Axis-aligned square loop traversed counterclockwise from (0,0).

    The bottom edge runs along +x, so s=0 sits at the origin with heading 0;
    useful for analytic projection and ray tests on straight corridor
    sections.
    """
    n = points_per_side
    pts = []
    for i in range(n):
        pts.append([i * side / n, 0.0])
    for i in range(n):
        pts.append([side, i * side / n])
    for i in range(n):
        pts.append([side - i * side / n, side])
    for i in range(n):
        pts.append([0.0, side - i * side / n])
    return TrackGeometry(np.array(pts), half_width=half_width, name="rect")


@pytest.fixture(scope="session")
def rect_track() -> TrackGeometry:
    return dense_rectangle()


@pytest.fixture(scope="session")
def train_a() -> TrackGeometry:
    return preset_track("train-a")


@pytest.fixture(scope="session")
def eval_b() -> TrackGeometry:
    return preset_track("eval-b")
