"""Court file parsing, containment, and camera court masks."""

import numpy as np
import pytest

from mvball.court import (
    CourtFile2D,
    CourtModel,
    CourtNotVisible,
    MalformedCourtFile,
    box_intersects_polygon,
    camera_court_mask,
    clip_polygon_to_rect,
    parse_court_file,
    point_in_court,
    point_in_polygon,
    polygon_area,
    render_court_file,
)
from mvball.geometry import Camera, CameraIntrinsics, CameraPose

from conftest import random_camera


def rect_court(length=105.0, width=68.0) -> CourtModel:
    contour = np.array([[0, 0], [length, 0], [length, width], [0, width]], float)
    return CourtModel(contour, ((0, (0.0, 0.0)),), (length, width))


def winding_number_inside(poly, x, y):
    """Brute-force winding number oracle (nonzero rule; boundary handled
    separately by the caller)."""
    angle = 0.0
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i][0] - x, poly[i][1] - y
        x2, y2 = poly[(i + 1) % n][0] - x, poly[(i + 1) % n][1] - y
        angle += np.arctan2(x1 * y2 - y1 * x2, x1 * x2 + y1 * y2)
    return abs(angle) > np.pi


class TestParseCourtFile:
    def test_minimal_file(self):
        cf = parse_court_file("contour_pt: 3\n(0,0)\n(10,0)\n(10,5)\ncourt_pt: 1\n(0, 5, 5)")
        assert cf.contour.shape == (3, 2)
        assert cf.lines == ((0, 5.0, 5.0),)

    def test_empty_input(self):
        with pytest.raises(MalformedCourtFile):
            parse_court_file("")

    def test_count_mismatch(self):
        with pytest.raises(MalformedCourtFile):
            parse_court_file("contour_pt: 4\n(0,0)\n(10,0)\n(10,5)\ncourt_pt: 0")

    def test_missing_header(self):
        with pytest.raises(MalformedCourtFile):
            parse_court_file("(0,0)\n(1,1)\n(2,2)")

    def test_bad_tuple(self):
        with pytest.raises(MalformedCourtFile):
            parse_court_file("contour_pt: 1\n(a,b)\ncourt_pt: 0")

    def test_whitespace_after_commas_optional(self):
        a = parse_court_file("contour_pt: 3\n(0,0)\n(10,0)\n(10,5)\ncourt_pt: 1\n(2,3,4)")
        b = parse_court_file("contour_pt: 3\n(0, 0)\n(10, 0)\n(10, 5)\ncourt_pt: 1\n(2, 3, 4)")
        np.testing.assert_array_equal(a.contour, b.contour)
        assert a.lines == b.lines

    def test_trailing_garbage_rejected(self):
        with pytest.raises(MalformedCourtFile):
            parse_court_file("contour_pt: 3\n(0,0)\n(10,0)\n(10,5)\ncourt_pt: 0\n(1,2)")

    def test_render_parse_round_trip(self, rng):
        contour = rng.uniform(0, 500, size=(6, 2))
        lines = tuple((i, float(x), float(y)) for i, (x, y) in enumerate(rng.uniform(0, 500, size=(4, 2))))
        cf = CourtFile2D(contour, lines)
        cf2 = parse_court_file(render_court_file(cf))
        np.testing.assert_allclose(cf2.contour, cf.contour, rtol=1e-8)
        for (i1, x1, y1), (i2, x2, y2) in zip(cf.lines, cf2.lines):
            assert i1 == i2
            np.testing.assert_allclose([x1, y1], [x2, y2], rtol=1e-8)


class TestPointInCourt:
    def test_center_inside(self):
        assert point_in_court(rect_court(), [52.5, 34.0, 0.0])

    def test_outside(self):
        assert not point_in_court(rect_court(), [-1.0, 34.0, 0.0])

    def test_boundary_counts_as_inside(self):
        assert point_in_court(rect_court(), [0.0, 34.0, 0.0])
        assert point_in_court(rect_court(), [0.0, 0.0, 0.0])  # vertex

    def test_matches_winding_oracle_on_random_polygons(self, rng):
        # star-shaped random polygons are always simple
        for _ in range(20):
            n = rng.integers(3, 9)
            angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
            radii = rng.uniform(1.0, 5.0, size=n)
            poly = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
            lo, hi = poly.min(0) - 0.5, poly.max(0) + 0.5
            for _ in range(50):
                x, y = rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1])
                expected = winding_number_inside(poly, x, y)
                assert point_in_polygon(poly, x, y, boundary=True) == expected


class TestPolygonHelpers:
    def test_area_of_rect(self):
        assert polygon_area(np.array([[0, 0], [4, 0], [4, 3], [0, 3]])) == 12.0

    def test_clip_keeps_interior(self):
        poly = np.array([[1, 1], [9, 1], [9, 9], [1, 9]], float)
        clipped = clip_polygon_to_rect(poly, 0, 0, 10, 10)
        assert polygon_area(clipped) == pytest.approx(64.0)

    def test_clip_cuts_protrusion(self):
        poly = np.array([[-5, 2], [5, 2], [5, 8], [-5, 8]], float)
        clipped = clip_polygon_to_rect(poly, 0, 0, 10, 10)
        assert polygon_area(clipped) == pytest.approx(30.0)

    def test_box_polygon_intersection(self):
        tri = np.array([[0, 0], [10, 0], [0, 10]], float)
        assert box_intersects_polygon(1, 1, 2, 2, tri)  # box inside
        assert box_intersects_polygon(-5, -5, 20, 20, tri)  # polygon inside box
        assert box_intersects_polygon(4, 4, 10, 10, tri)  # corner overlap
        assert not box_intersects_polygon(11, 11, 2, 2, tri)


def overhead_camera(height=50.0, fx=800.0, size=(640, 400)):
    # straight-down view centered over the court middle
    R = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])  # z maps down
    pos = np.array([52.5, 34.0, height])
    return Camera(0, CameraIntrinsics(fx, fx, size[0] / 2, size[1] / 2), CameraPose(R, -(R @ pos)), size)


class TestCameraCourtMask:
    def test_overhead_aspect_ratio(self):
        # projected court spans (L * fx / h) x (W * fx / h) before clipping;
        # compute the analytic projections of the 4 corners
        cam = overhead_camera(height=200.0, fx=600.0)
        court = rect_court()
        mask = camera_court_mask(court, cam)
        # analytic: corner (x, y, 0) -> pc = R p + t ; zc = 200
        # u = 600 * (x - 52.5)/200 + 320, v = 600 * (34 - y)/200 + 200
        expected = []
        for x, y in court.contour:
            expected.append((600 * (x - 52.5) / 200 + 320, 600 * (34 - y) / 200 + 200))
        area_expected = polygon_area(np.array(expected))
        assert polygon_area(mask) == pytest.approx(area_expected, rel=1e-9)
        width_px = mask[:, 0].max() - mask[:, 0].min()
        height_px = mask[:, 1].max() - mask[:, 1].min()
        assert width_px / height_px == pytest.approx(105.0 / 68.0, rel=1e-9)

    def test_camera_facing_away(self):
        cam = overhead_camera()
        # flip to look straight up from below ground
        R = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
        pos = np.array([52.5, 34.0, 50.0])
        up_cam = Camera(0, cam.intrinsics, CameraPose(R, -(R @ pos)), cam.image_size)
        with pytest.raises(CourtNotVisible):
            camera_court_mask(rect_court(), up_cam)

    def test_mask_area_bounded_by_image(self, rng):
        for _ in range(10):
            cam = random_camera(rng)
            try:
                mask = camera_court_mask(rect_court(), cam)
            except CourtNotVisible:
                continue
            w, h = cam.image_size
            assert polygon_area(mask) <= w * h + 1e-6


class TestCourtModelValidation:
    def test_needs_three_vertices(self):
        with pytest.raises(ValueError):
            CourtModel(np.array([[0, 0], [1, 1]]), (), (1.0, 1.0))

    def test_self_intersection_rejected(self):
        bowtie = np.array([[0, 0], [2, 2], [2, 0], [0, 2]], float)
        with pytest.raises(ValueError):
            CourtModel(bowtie, (), (2.0, 2.0))

    def test_parser_accepts_any_n_at_least_three(self):
        # more than six key points is fine
        pts = "\n".join(f"({i},0)" for i in range(8))
        cf = parse_court_file(f"contour_pt: 8\n{pts}\ncourt_pt: 0")
        assert cf.contour.shape == (8, 2)
