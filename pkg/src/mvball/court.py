"""Court geometry from labeled key points.

Holds the world-space court model (a simple ground polygon plus labeled
line points), the per-camera pixel-space court file, point-in-court
tests and projection of the court outline into a camera ("court mask").

Court file grammar (one file per camera, pixel coordinates; also reused
at world scale for the 3D court):

    contour_pt: <n>
    (x_1, y_1)
    ...
    (x_n, y_n)
    court_pt: <m>
    (pi_idx, x_1, y_1)
    ...

'#' starts a comment, blank lines are ignored, whitespace after commas
is optional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, project_points

__all__ = [
    "CourtError",
    "MalformedCourtFile",
    "CourtNotVisible",
    "CourtModel",
    "CourtFile2D",
    "parse_court_file",
    "render_court_file",
    "point_in_court",
    "point_in_polygon",
    "polygon_area",
    "clip_polygon_to_rect",
    "box_intersects_polygon",
    "camera_court_mask",
]


class CourtError(ValueError):
    pass


class MalformedCourtFile(CourtError):
    """Missing header, count mismatch, or unparsable tuple."""


class CourtNotVisible(CourtError):
    """No contour vertex projects in front of the camera."""


@dataclass(frozen=True, eq=False)
class CourtModel:
    """World-space court: ground contour (z = 0), labeled line points, dims.

    contour: (n, 2) array of ground-plane (x, y) vertices, n >= 3, forming
    a simple closed polygon. lines: list of (point_index, (x, y)) labeled
    court-line key points. dimensions: (length, width) in meters.
    """

    contour: np.ndarray
    lines: tuple
    dimensions: tuple[float, float]

    def __post_init__(self):
        c = np.asarray(self.contour, dtype=np.float64).reshape(-1, 2)
        if c.shape[0] < 3:
            raise CourtError("court contour needs at least 3 vertices")
        if _self_intersects(c):
            raise CourtError("court contour polygon is self-intersecting")
        L, W = self.dimensions
        if not (L > 0 and W > 0):
            raise CourtError(f"court dimensions must be positive, got {self.dimensions}")
        object.__setattr__(self, "contour", c)
        object.__setattr__(self, "lines", tuple((int(i), (float(x), float(y))) for i, (x, y) in self.lines))

    def contour3d(self) -> np.ndarray:
        """Contour as (n, 3) world points with z = 0."""
        c = self.contour
        return np.hstack([c, np.zeros((c.shape[0], 1))])


@dataclass(frozen=True, eq=False)
class CourtFile2D:
    """Parsed per-camera court file: pixel-space contour + line points."""

    contour: np.ndarray  # (n, 2) float
    lines: tuple  # ((point_index, x, y), ...)

    def __post_init__(self):
        object.__setattr__(self, "contour", np.asarray(self.contour, dtype=np.float64).reshape(-1, 2))
        object.__setattr__(self, "lines", tuple((int(i), float(x), float(y)) for i, x, y in self.lines))


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper intersection of open segments p1p2 and p3p4."""

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    d1 = cross(p3, p4, p1)
    d2 = cross(p3, p4, p2)
    d3 = cross(p1, p2, p3)
    d4 = cross(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _self_intersects(poly: np.ndarray) -> bool:
    n = poly.shape[0]
    for i in range(n):
        a1, a2 = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # shared endpoint
            if _segments_intersect(a1, a2, poly[j], poly[(j + 1) % n]):
                return True
    return False


# ---------------------------------------------------------------------------
# Court file parsing

def _parse_tuple(line: str, lineno: int, arity: int):
    s = line.strip()
    if not (s.startswith("(") and s.endswith(")")):
        raise MalformedCourtFile(f"line {lineno}: expected a parenthesized tuple, got {line!r}")
    parts = [p.strip() for p in s[1:-1].split(",")]
    if len(parts) != arity:
        raise MalformedCourtFile(f"line {lineno}: expected {arity} values, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as e:
        raise MalformedCourtFile(f"line {lineno}: {e}") from e


def parse_court_file(text: str) -> CourtFile2D:
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            lines.append((lineno, stripped))
    if not lines:
        raise MalformedCourtFile("empty court file")

    pos = 0

    def read_header(name: str) -> int:
        nonlocal pos
        if pos >= len(lines):
            raise MalformedCourtFile(f"missing '{name}:' header")
        lineno, content = lines[pos]
        if not content.startswith(name + ":"):
            raise MalformedCourtFile(f"line {lineno}: expected '{name}: <num points>', got {content!r}")
        try:
            count = int(content.split(":", 1)[1].strip())
        except ValueError as e:
            raise MalformedCourtFile(f"line {lineno}: bad count in {content!r}") from e
        pos += 1
        return count

    n_contour = read_header("contour_pt")
    contour = []
    for _ in range(n_contour):
        if pos >= len(lines) or lines[pos][1].startswith("court_pt:"):
            raise MalformedCourtFile(f"contour_pt declares {n_contour} points, found {len(contour)}")
        lineno, content = lines[pos]
        contour.append(_parse_tuple(content, lineno, 2))
        pos += 1

    n_court = read_header("court_pt")
    court_pts = []
    for _ in range(n_court):
        if pos >= len(lines):
            raise MalformedCourtFile(f"court_pt declares {n_court} points, found {len(court_pts)}")
        lineno, content = lines[pos]
        i, x, y = _parse_tuple(content, lineno, 3)
        court_pts.append((int(i), x, y))
        pos += 1

    if pos != len(lines):
        raise MalformedCourtFile(f"line {lines[pos][0]}: trailing content after declared points")
    return CourtFile2D(np.array(contour, dtype=np.float64).reshape(-1, 2), tuple(court_pts))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def render_court_file(cf: CourtFile2D) -> str:
    out = [f"contour_pt: {cf.contour.shape[0]}"]
    out += [f"({_fmt(x)}, {_fmt(y)})" for x, y in cf.contour]
    out.append(f"court_pt: {len(cf.lines)}")
    out += [f"({i}, {_fmt(x)}, {_fmt(y)})" for i, x, y in cf.lines]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Containment and clipping

def point_in_polygon(poly: np.ndarray, x: float, y: float, boundary: bool = True) -> bool:
    """Even-odd ray-casting test; boundary points count as inside when
    ``boundary`` is set (tolerance 1e-12 relative to edge length)."""
    poly = np.asarray(poly, dtype=np.float64)
    n = poly.shape[0]
    inside = False
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if boundary:
            # on-segment check
            cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
            seg2 = (x2 - x1) ** 2 + (y2 - y1) ** 2
            if seg2 > 0 and abs(cross) <= 1e-12 * max(seg2, 1.0):
                dot = (x - x1) * (x2 - x1) + (y - y1) * (y2 - y1)
                if -1e-12 <= dot <= seg2 * (1 + 1e-12):
                    return True
            elif seg2 == 0 and abs(x - x1) < 1e-12 and abs(y - y1) < 1e-12:
                return True
        if (y1 > y) != (y2 > y):
            xin = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xin:
                inside = not inside
    return inside


def point_in_court(court: CourtModel, p) -> bool:
    """True iff the (x, y) of a world point lies in the court polygon
    (boundary inclusive: a ball on the line is in play)."""
    p = np.asarray(p, dtype=np.float64).ravel()
    return point_in_polygon(court.contour, float(p[0]), float(p[1]), boundary=True)


def polygon_area(poly: np.ndarray) -> float:
    """Absolute shoelace area; 0 for fewer than 3 vertices."""
    poly = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
    if poly.shape[0] < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_polygon_to_rect(poly: np.ndarray, x0: float, y0: float, x1: float, y1: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon against an axis-aligned rect."""
    edges = [
        lambda p: p[0] >= x0,
        lambda p: p[0] <= x1,
        lambda p: p[1] >= y0,
        lambda p: p[1] <= y1,
    ]
    intersect = [
        lambda a, b: (x0, a[1] + (b[1] - a[1]) * (x0 - a[0]) / (b[0] - a[0])),
        lambda a, b: (x1, a[1] + (b[1] - a[1]) * (x1 - a[0]) / (b[0] - a[0])),
        lambda a, b: (a[0] + (b[0] - a[0]) * (y0 - a[1]) / (b[1] - a[1]), y0),
        lambda a, b: (a[0] + (b[0] - a[0]) * (y1 - a[1]) / (b[1] - a[1]), y1),
    ]
    pts = [tuple(p) for p in np.asarray(poly, dtype=np.float64).reshape(-1, 2)]
    for inside, cross in zip(edges, intersect):
        if not pts:
            break
        out = []
        for i, cur in enumerate(pts):
            prev = pts[i - 1]
            cur_in, prev_in = inside(cur), inside(prev)
            if cur_in:
                if not prev_in:
                    out.append(cross(prev, cur))
                out.append(cur)
            elif prev_in:
                out.append(cross(prev, cur))
        pts = out
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def box_intersects_polygon(x: float, y: float, w: float, h: float, poly: np.ndarray) -> bool:
    """True iff the axis-aligned box [x, x+w] x [y, y+h] meets the polygon."""
    poly = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
    if poly.shape[0] < 3:
        return False
    x2, y2 = x + w, y + h
    # any polygon vertex inside the box
    if np.any((poly[:, 0] >= x) & (poly[:, 0] <= x2) & (poly[:, 1] >= y) & (poly[:, 1] <= y2)):
        return True
    # any box corner inside the polygon
    for bx, by in ((x, y), (x2, y), (x2, y2), (x, y2)):
        if point_in_polygon(poly, bx, by, boundary=True):
            return True
    # any edge crossing
    corners = [(x, y), (x2, y), (x2, y2), (x, y2)]
    n = poly.shape[0]
    for i in range(4):
        b1, b2 = corners[i], corners[(i + 1) % 4]
        for j in range(n):
            if _segments_intersect(b1, b2, poly[j], poly[(j + 1) % n]):
                return True
    return False


def camera_court_mask(court: CourtModel, camera: Camera) -> np.ndarray:
    """Project the court contour into the camera and clip to the image.

    Returns the clipped pixel-space polygon as an (k, 2) array (possibly
    empty when the court projects wholly outside the frame). Raises
    CourtNotVisible when no contour vertex lies in front of the camera.
    ROIs wholly outside this polygon can be discarded.
    """
    px, depths = project_points(camera, court.contour3d())
    front = depths > 0
    if not np.any(front):
        raise CourtNotVisible(f"camera {camera.cam_id} faces away from the court")
    w, h = camera.image_size
    return clip_polygon_to_rect(px[front], 0.0, 0.0, float(w), float(h))
