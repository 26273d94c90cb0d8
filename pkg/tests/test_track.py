import json
import math

import numpy as np
import pytest

from chicane.track import (
    GeneratorSpec,
    TrackGeometry,
    TrackValidationError,
    generate_track,
    load_track,
    preset_track,
    save_track,
    signed_curvature,
)


def square(side=100.0, half_width=7.5):
    pts = np.array([[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]])
    return TrackGeometry(pts, half_width=half_width, name="square")


class TestLoadSave:
    def test_square_perimeter(self, tmp_path):
        p = tmp_path / "sq.json"
        p.write_text(json.dumps({
            "name": "sq", "width_m": 15.0,
            "waypoints": [[0, 0], [100, 0], [100, 100], [0, 100]],
        }))
        tr = load_track(p)
        assert tr.total_length == pytest.approx(400.0)
        assert tr.half_width == pytest.approx(7.5)

    def test_zero_width_rejected(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"name": "b", "width_m": 0.0,
                                 "waypoints": [[0, 0], [1, 0], [1, 1]]}))
        with pytest.raises(TrackValidationError):
            load_track(p)

    def test_roundtrip_identity(self, tmp_path):
        tr = square()
        p = tmp_path / "sq.json"
        save_track(tr, p)
        tr2 = load_track(p)
        assert np.array_equal(tr.waypoints, tr2.waypoints)
        assert tr2.half_width == tr.half_width
        assert tr2.total_length == tr.total_length

    def test_rejects_duplicate_waypoints(self):
        pts = np.array([[0, 0], [0, 0], [1, 0], [1, 1]], dtype=float)
        with pytest.raises(TrackValidationError):
            TrackGeometry(pts, half_width=1.0)

    def test_rejects_self_intersection(self):
        pts = np.array([[0, 0], [10, 10], [10, 0], [0, 10]], dtype=float)
        with pytest.raises(TrackValidationError):
            TrackGeometry(pts, half_width=1.0)

    def test_rejects_explicit_closure(self):
        pts = np.array([[0, 0], [10, 0], [10, 10], [0, 0]], dtype=float)
        with pytest.raises(TrackValidationError):
            TrackGeometry(pts, half_width=1.0)


class TestProjection:
    def test_on_centerline_d_zero(self, rect_track):
        f = rect_track.project((50.0, 0.0))
        assert f.d == pytest.approx(0.0, abs=1e-12)
        assert f.s == pytest.approx(50.0)

    def test_left_offset_positive(self, rect_track):
        f = rect_track.project((10.0, 3.0))
        assert f.s == pytest.approx(10.0)
        assert f.d == pytest.approx(3.0)
        assert f.psi_ref == pytest.approx(0.0)

    def test_right_offset_negative(self, rect_track):
        f = rect_track.project((10.0, -3.0))
        assert f.s == pytest.approx(10.0)
        assert f.d == pytest.approx(-3.0)

    def test_recover_frame_on_straights(self, rect_track):
        # project(point_at(s) + d*normal(s)) recovers (s, d) on straight
        # sections (sampled away from corners, where the nearest side flips)
        for s in (50.0, 123.4, 350.0):
            for d in (-6.0, -0.5, 0.0, 2.5, 7.0):
                p = rect_track.point_at(s) + d * rect_track.normal_at(s)
                f = rect_track.project(p)
                assert f.s == pytest.approx(s, abs=1e-6)
                assert f.d == pytest.approx(d, abs=1e-6)

    def test_corridor_points_stay_in_corridor(self, train_a):
        rng = np.random.default_rng(7)
        for _ in range(200):
            s = rng.uniform(0, train_a.total_length)
            d = rng.uniform(-0.95, 0.95) * train_a.half_width
            p = train_a.point_at(s) + d * train_a.normal_at(s)
            f = train_a.project(p)
            assert abs(f.d) < train_a.half_width

    def test_cursor_matches_global(self, train_a):
        cur = train_a.cursor()
        rng = np.random.default_rng(3)
        s = 100.0
        for _ in range(300):
            s += rng.uniform(0.0, 0.5)
            p = train_a.point_at(s) + rng.uniform(-5, 5) * train_a.normal_at(s)
            a = train_a.project(p)
            b = cur.project(p)
            assert a.s == pytest.approx(b.s, abs=1e-9)
            assert a.d == pytest.approx(b.d, abs=1e-9)


class TestRayCasting:
    def test_perpendicular_hits_wall(self, rect_track):
        d = rect_track.ray_to_edge((100.0, 0.0), (0.0, 1.0), 200.0)
        assert d == pytest.approx(7.5, abs=1e-9)

    def test_along_straight_clamps(self, rect_track):
        d = rect_track.ray_to_edge((100.0, 0.0), (1.0, 0.0), 500.0)
        # corner wall at x=400 minus miter; must clamp only if beyond range
        assert d <= 500.0
        d2 = rect_track.ray_to_edge((100.0, 0.0), (1.0, 0.0), 200.0)
        assert d2 == pytest.approx(200.0)

    def test_45_degrees(self, rect_track):
        u = (math.cos(math.pi / 4), math.sin(math.pi / 4))
        d = rect_track.ray_to_edge((100.0, 0.0), u, 200.0)
        assert d == pytest.approx(7.5 / math.sin(math.pi / 4), abs=1e-9)

    def test_monotone_in_max_range(self, train_a):
        o = train_a.point_at(500.0)
        u = train_a.seg_dir[train_a.segment_at(500.0)[0]]
        d1 = train_a.ray_to_edge(o, u, 50.0)
        d2 = train_a.ray_to_edge(o, u, 200.0)
        assert d1 <= d2
        assert d1 <= 50.0

    def test_origin_outside_corridor_rejected(self, rect_track):
        from chicane.track import OffCorridorError
        with pytest.raises(OffCorridorError):
            rect_track.ray_to_edge((100.0, 20.0), (0.0, 1.0), 100.0)


class TestGeneration:
    def test_deterministic(self):
        spec = GeneratorSpec(name="g", seed=42, target_length_m=900.0,
                             corner_count=5, irregularity=0.08)
        a = generate_track(spec)
        b = generate_track(spec)
        assert np.array_equal(a.waypoints, b.waypoints)

    def test_eval_b_matches_reference_length(self, eval_b):
        assert abs(eval_b.total_length - 7041.0) / 7041.0 < 0.10
        assert eval_b.half_width == pytest.approx(7.5)

    def test_zero_corners_is_circle_like(self):
        tr = generate_track(GeneratorSpec(name="c", seed=3, target_length_m=600.0,
                                          corner_count=0))
        k = signed_curvature(tr)
        assert (np.sign(k) == np.sign(k[0])).all()

    def test_waypoint_spacing_bound(self, train_a):
        assert float(train_a.seg_len.max()) <= 2.0

    def test_presets_satisfy_invariants(self, train_a, eval_b):
        for tr in (train_a, eval_b):
            assert tr.total_length > 0
            assert len(tr.waypoints) >= 8
            assert (tr.seg_len > 0).all()


def test_translation_leaves_local_geometry_unchanged():
    sq = square()
    shifted = TrackGeometry(sq.waypoints + np.array([123.0, -45.0]),
                            half_width=sq.half_width, name="shifted")
    f1 = sq.project((10.0, 3.0))
    f2 = shifted.project((10.0 + 123.0, 3.0 - 45.0))
    assert f1.s == pytest.approx(f2.s)
    assert f1.d == pytest.approx(f2.d)
