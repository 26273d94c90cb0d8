"""Closed race-track geometry.

A track is a closed polyline centerline with a uniform half-width. The
module supports:

- loading/saving the track JSON format
- arc-length queries (point, heading, left normal at a given ``s``)
- projection of a point onto the centerline (returns a ``TrackFrame``)
- ray casting from inside the corridor to the corridor edges
- procedural generation of closed tracks, including the two bundled
  presets ``train-a`` and ``eval-b``

Conventions used throughout the package: ``s`` increases in the driving
direction (waypoint order), and the lateral offset ``d`` is positive to
the *left* of the direction of travel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from shapely.geometry import LinearRing

FloatArray = NDArray[np.float64]

_MIN_WAYPOINTS = 3


class TrackValidationError(ValueError):
    """A track violates a geometric invariant (open, degenerate, ...)."""


class GenerationError(RuntimeError):
    """Procedural generation failed for a given seed after bounded retries."""


class OffCorridorError(ValueError):
    """An operation that requires a point inside the corridor got one outside."""


@dataclass(frozen=True)
class TrackFrame:
    """Curvilinear coordinates of a point relative to the centerline.

    Attributes
    ----------
    s : float
        Arc length along the centerline, in [0, total_length).
    d : float
        Signed lateral offset in meters, positive left of travel.
    psi_ref : float
        Centerline tangent heading at ``s``, radians.
    """

    s: float
    d: float
    psi_ref: float


@dataclass(frozen=True)
class TrackGeometry:
    """Immutable closed-polyline track.

    Parameters
    ----------
    waypoints : NDArray[np.float64]
        Array of shape (N, 2), ordered centerline points in meters.
        The polyline is implicitly closed (last point connects to first).
    half_width : float
        Corridor half-width in meters.
    name : str
        Human-readable track name.
    """

    waypoints: FloatArray
    half_width: float
    name: str = "unnamed"

    # derived, filled in __post_init__
    seg_len: FloatArray = field(init=False, repr=False, compare=False)
    cum_s: FloatArray = field(init=False, repr=False, compare=False)
    total_length: float = field(init=False, repr=False, compare=False)
    seg_dir: FloatArray = field(init=False, repr=False, compare=False)
    seg_normal: FloatArray = field(init=False, repr=False, compare=False)
    left_edge: FloatArray = field(init=False, repr=False, compare=False)
    right_edge: FloatArray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        pts = np.asarray(self.waypoints, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise TrackValidationError("waypoints must have shape (N, 2)")
        if pts.shape[0] < _MIN_WAYPOINTS:
            raise TrackValidationError(
                f"need at least {_MIN_WAYPOINTS} waypoints, got {pts.shape[0]}"
            )
        if not np.isfinite(pts).all():
            raise TrackValidationError("waypoints contain non-finite values")
        if np.allclose(pts[0], pts[-1]):
            # closure is implicit; an explicitly repeated first point would
            # create a zero-length closing segment
            raise TrackValidationError(
                "do not repeat the first waypoint; the polyline closes implicitly"
            )
        if not (np.isfinite(self.half_width) and self.half_width > 0):
            raise TrackValidationError(f"half_width must be > 0, got {self.half_width}")

        vec = np.roll(pts, -1, axis=0) - pts
        seg_len = np.hypot(vec[:, 0], vec[:, 1])
        if (seg_len <= 0).any():
            raise TrackValidationError("two consecutive waypoints coincide")
        if not LinearRing(pts).is_simple:
            raise TrackValidationError("centerline is self-intersecting")

        seg_dir = vec / seg_len[:, None]
        # left normal of each segment
        seg_normal = np.column_stack([-seg_dir[:, 1], seg_dir[:, 0]])

        cum_s = np.zeros(len(pts))
        cum_s[1:] = np.cumsum(seg_len[:-1])

        left_edge, right_edge = _offset_edges(pts, seg_normal, self.half_width)

        object.__setattr__(self, "waypoints", pts)
        object.__setattr__(self, "seg_len", seg_len)
        object.__setattr__(self, "cum_s", cum_s)
        object.__setattr__(self, "total_length", float(seg_len.sum()))
        object.__setattr__(self, "seg_dir", seg_dir)
        object.__setattr__(self, "seg_normal", seg_normal)
        object.__setattr__(self, "left_edge", left_edge)
        object.__setattr__(self, "right_edge", right_edge)

    @property
    def n_segments(self) -> int:
        return len(self.waypoints)

    def wrap_s(self, s: float) -> float:
        return float(s % self.total_length)

    def segment_at(self, s: float) -> tuple[int, float]:
        """Return (segment index, distance into segment) for arc length s."""
        s = self.wrap_s(s)
        i = int(np.searchsorted(self.cum_s, s, side="right") - 1)
        return i, s - self.cum_s[i]

    def point_at(self, s: float) -> FloatArray:
        """Centerline point at arc length ``s`` (wrapped)."""
        i, ds = self.segment_at(s)
        return self.waypoints[i] + ds * self.seg_dir[i]

    def heading_at(self, s: float) -> float:
        """Tangent heading (radians) at arc length ``s``."""
        i, _ = self.segment_at(s)
        return float(np.arctan2(self.seg_dir[i, 1], self.seg_dir[i, 0]))

    def normal_at(self, s: float) -> FloatArray:
        """Left unit normal at arc length ``s``."""
        i, _ = self.segment_at(s)
        return self.seg_normal[i]

    def project(self, p) -> TrackFrame:
        """Project a point onto the centerline.

        Returns the nearest-point projection as a ``TrackFrame``. Distance
        ties are broken by the smallest ``s``.
        """
        p = np.asarray(p, dtype=np.float64)
        rel = p - self.waypoints
        t = np.einsum("ij,ij->i", rel, self.seg_dir)
        t = np.clip(t, 0.0, self.seg_len)
        proj = self.waypoints + t[:, None] * self.seg_dir
        dist2 = np.einsum("ij,ij->i", p - proj, p - proj)
        i = int(np.argmin(dist2))  # first minimum == smallest s
        s = self.wrap_s(self.cum_s[i] + t[i])
        d = float(np.dot(p - proj[i], self.seg_normal[i]))
        psi = float(np.arctan2(self.seg_dir[i, 1], self.seg_dir[i, 0]))
        return TrackFrame(s=s, d=d, psi_ref=psi)

    def cursor(self) -> "TrackCursor":
        """A stateful projector for fast sequential queries along the track."""
        return TrackCursor(self)

    def ray_to_edge(self, origin, direction, max_range: float) -> float:
        """Distance from ``origin`` along ``direction`` to the corridor edge.

        Parameters
        ----------
        origin : array-like (2,)
            Ray origin; must lie strictly inside the corridor.
        direction : array-like (2,)
            Unit direction of the beam.
        max_range : float
            Clamp distance in meters.

        Returns
        -------
        float
            Distance to the first intersection with either offset edge
            polyline, clamped to ``max_range``.
        """
        origin = np.asarray(origin, dtype=np.float64)
        frame = self.project(origin)
        if abs(frame.d) >= self.half_width:
            raise OffCorridorError(
                f"ray origin is outside the corridor (|d|={abs(frame.d):.3f} m "
                f">= half_width={self.half_width} m)"
            )
        idx = self._window_indices(frame.s, max_range)
        return self._cast(origin, np.asarray(direction, dtype=np.float64), max_range, idx)

    def rays_to_edge(self, origin, directions: FloatArray, max_range: float,
                     frame: TrackFrame | None = None) -> FloatArray:
        """Vectorized ``ray_to_edge`` for several beams sharing one origin."""
        origin = np.asarray(origin, dtype=np.float64)
        if frame is None:
            frame = self.project(origin)
        if abs(frame.d) >= self.half_width:
            raise OffCorridorError(
                f"ray origin is outside the corridor (|d|={abs(frame.d):.3f} m "
                f">= half_width={self.half_width} m)"
            )
        idx = self._window_indices(frame.s, max_range)
        a = np.vstack([self.left_edge[idx], self.right_edge[idx]])
        b = np.vstack(
            [np.roll(self.left_edge, -1, axis=0)[idx], np.roll(self.right_edge, -1, axis=0)[idx]]
        )
        u = np.asarray(directions, dtype=np.float64)  # (n_beams, 2)
        v = b - a                                     # (n_segs, 2)
        w = a - origin
        wxv = w[:, 0] * v[:, 1] - w[:, 1] * v[:, 0]   # (n_segs,)
        denom = u[:, 0][:, None] * v[:, 1] - u[:, 1][:, None] * v[:, 0]  # (n_beams, n_segs)
        wxu = w[:, 0] * u[:, 1][:, None] - w[:, 1] * u[:, 0][:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = wxv / denom
            r = wxu / -denom
        t = np.where(
            (np.abs(denom) > 1e-12) & (t > 1e-9) & (r >= 0.0) & (r <= 1.0), t, np.inf
        )
        return np.minimum(t.min(axis=1), max_range)

    def _window_indices(self, s: float, max_range: float) -> FloatArray | slice:
        # Candidate edge segments restricted to an arc-length window around s.
        # A beam of length R cannot reach corridor walls whose arc distance
        # exceeds ~1.5 R on tracks whose curvature radius stays well above the
        # half-width (all generated tracks); the margin covers near-tangent
        # beams. Small tracks fall through to the exact all-segments case.
        window = 1.5 * max_range + 10.0 * float(np.max(self.seg_len))
        if 2.0 * window >= self.total_length:
            return slice(None)
        ds = np.abs((self.cum_s - s + 0.5 * self.total_length) % self.total_length
                    - 0.5 * self.total_length)
        return np.nonzero(ds <= window)[0]

    def _cast(self, origin: FloatArray, u: FloatArray, max_range: float, idx) -> float:
        best = max_range
        for edge in (self.left_edge, self.right_edge):
            a = edge[idx]
            b = np.roll(edge, -1, axis=0)[idx]
            v = b - a
            w = a - origin
            denom = u[0] * v[:, 1] - u[1] * v[:, 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (w[:, 0] * v[:, 1] - w[:, 1] * v[:, 0]) / denom
                r = (w[:, 0] * u[1] - w[:, 1] * u[0]) / -denom
            hit = (np.abs(denom) > 1e-12) & (t > 1e-9) & (r >= 0.0) & (r <= 1.0)
            if hit.any():
                best = min(best, float(t[hit].min()))
        return best

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "width_m": 2.0 * self.half_width,
            "waypoints": self.waypoints.tolist(),
        }


class TrackCursor:
    """Windowed projection that exploits query locality.

    Successive queries (a car moving a fraction of a meter per step) only
    need to examine segments near the previous match. Results are identical
    to ``TrackGeometry.project`` as long as consecutive query points move
    less than the window span; the first query is global.
    """

    _WINDOW = 24  # segments on each side; ~36 m at 1.5 m spacing

    def __init__(self, track: TrackGeometry):
        self.track = track
        self._idx: int | None = None

    def project(self, p) -> TrackFrame:
        tr = self.track
        if self._idx is None or tr.n_segments <= 2 * self._WINDOW:
            frame = tr.project(p)
            self._idx, _ = tr.segment_at(frame.s)
            return frame
        p = np.asarray(p, dtype=np.float64)
        n = tr.n_segments
        idx = (np.arange(self._idx - self._WINDOW, self._idx + self._WINDOW + 1) % n)
        rel = p - tr.waypoints[idx]
        t = np.einsum("ij,ij->i", rel, tr.seg_dir[idx])
        t = np.clip(t, 0.0, tr.seg_len[idx])
        proj = tr.waypoints[idx] + t[:, None] * tr.seg_dir[idx]
        dist2 = np.einsum("ij,ij->i", p - proj, p - proj)
        k = int(np.argmin(dist2))
        i = int(idx[k])
        self._idx = i
        s = tr.wrap_s(tr.cum_s[i] + t[k])
        d = float(np.dot(p - proj[k], tr.seg_normal[i]))
        psi = float(np.arctan2(tr.seg_dir[i, 1], tr.seg_dir[i, 0]))
        return TrackFrame(s=s, d=d, psi_ref=psi)


def _offset_edges(pts: FloatArray, seg_normal: FloatArray, w: float):
    """Miter-offset the closed centerline by +/- w along vertex normals."""
    prev_normal = np.roll(seg_normal, 1, axis=0)
    m = prev_normal + seg_normal
    norm = np.hypot(m[:, 0], m[:, 1])
    if (norm < 1e-9).any():
        raise TrackValidationError("track reverses direction at a waypoint")
    m = m / norm[:, None]
    # scale so the perpendicular distance to both adjacent segments equals w
    scale = w / np.einsum("ij,ij->i", m, seg_normal)
    offset = m * scale[:, None]
    return pts + offset, pts - offset


# ---------------------------------------------------------------------------
# serialization

def track_from_dict(obj: dict) -> TrackGeometry:
    try:
        name = str(obj["name"])
        width = float(obj["width_m"])
        waypoints = np.asarray(obj["waypoints"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise TrackValidationError(f"malformed track record: {exc}") from exc
    return TrackGeometry(waypoints=waypoints, half_width=width / 2.0, name=name)


def load_track(path) -> TrackGeometry:
    """Load a track from its JSON file; validates all invariants."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TrackValidationError(f"{path}: not valid JSON ({exc})") from exc
    return track_from_dict(obj)


def save_track(track: TrackGeometry, path) -> None:
    Path(path).write_text(json.dumps(track.to_dict()))


# ---------------------------------------------------------------------------
# procedural generation

@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters for procedural track generation.

    Tracks are built like real circuits: a star-shaped polygon of
    ``corner_count`` vertices whose corners are rounded with constant-radius
    arcs (fillets), connected by straights. ``irregularity`` sets the
    in/out zigzag of the vertex radii (0 produces a circle-like loop);
    corner radii are drawn from [min_radius_m, ~2x min_radius_m].
    Generation is a pure function of the spec.
    """

    name: str
    seed: int
    target_length_m: float
    width_m: float = 15.0
    corner_count: int = 8
    irregularity: float = 0.12
    min_radius_m: float = 55.0
    waypoint_spacing_m: float = 1.5
    max_retries: int = 40

    def __post_init__(self) -> None:
        if self.target_length_m <= 0 or self.width_m <= 0:
            raise ValueError("target length and width must be positive")
        if self.corner_count < 0 or self.irregularity < 0:
            raise ValueError("corner_count and irregularity must be >= 0")
        if self.waypoint_spacing_m <= 0:
            raise ValueError("waypoint_spacing_m must be positive")


def generate_track(spec: GeneratorSpec) -> TrackGeometry:
    """Generate a closed track satisfying all ``TrackGeometry`` invariants.

    Deterministic for a given spec. Raises ``GenerationError`` (naming the
    seed) if no valid geometry is found within ``spec.max_retries`` attempts.
    """
    for attempt in range(spec.max_retries):
        pts = _circuit_curve(spec, attempt)
        if pts is None:
            continue
        pts = _resample_to_length(pts, spec.target_length_m, spec.waypoint_spacing_m)
        if _min_curvature_radius(pts) < 0.95 * spec.min_radius_m:
            continue
        if not _corridor_clear(pts, spec.width_m):
            continue
        try:
            track = TrackGeometry(
                waypoints=pts, half_width=spec.width_m / 2.0, name=spec.name
            )
        except TrackValidationError:
            continue
        return track
    raise GenerationError(
        f"no valid track for seed {spec.seed} after {spec.max_retries} attempts; "
        "reduce irregularity or corner_count"
    )


def _circuit_curve(spec: GeneratorSpec, attempt: int) -> FloatArray | None:
    """One generation attempt: zigzag star polygon with filleted corners."""
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, attempt)))
    base_r = spec.target_length_m / (2.0 * np.pi)
    if spec.corner_count == 0:
        theta = np.linspace(0.0, 2.0 * np.pi, 512, endpoint=False)
        return base_r * np.column_stack([np.cos(theta), np.sin(theta)])

    n = max(spec.corner_count, 3)
    # stratified angles keep the polygon star-shaped (hence simple)
    theta = 2.0 * np.pi * (np.arange(n) + rng.uniform(-0.3, 0.3, n)) / n
    # radii alternate between an inner and an outer band -> zigzag corners
    zig = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    amp = spec.irregularity * 0.92 ** attempt
    rho = base_r * (1.0 + amp * zig + rng.uniform(-0.35, 0.35, n) * amp)
    verts = np.column_stack([rho * np.cos(theta), rho * np.sin(theta)])
    # pre-scale so the filleted curve comes out near the target length and
    # corner radii keep their physical meaning after the final resample
    edge = np.roll(verts, -1, axis=0) - verts
    perimeter = float(np.hypot(edge[:, 0], edge[:, 1]).sum())
    verts *= spec.target_length_m / perimeter
    return _fillet_polygon(verts, spec, rng)


def _fillet_polygon(verts: FloatArray, spec: GeneratorSpec,
                    rng: np.random.Generator) -> FloatArray | None:
    n = len(verts)
    edge = np.roll(verts, -1, axis=0) - verts
    elen = np.hypot(edge[:, 0], edge[:, 1])
    if (elen < 8.0 * spec.waypoint_spacing_m).any():
        return None
    dirs = edge / elen[:, None]
    heads = np.arctan2(dirs[:, 1], dirs[:, 0])
    # turn at vertex i is between incoming edge i-1 and outgoing edge i
    turn = np.array([
        (heads[i] - heads[i - 1] + np.pi) % (2.0 * np.pi) - np.pi for i in range(n)
    ])
    if (np.abs(turn) > 2.35).any() or (np.abs(turn) < 0.02).any():
        return None

    # corner radii come from a small ladder: distinct, repeatable corner
    # "types" rather than a continuum (as on designed circuits)
    radius = spec.min_radius_m * 1.15 * rng.choice([1.0, 1.45, 2.0], size=n)
    toff = radius * np.tan(np.abs(turn) / 2.0)
    # shrink radii until both fillet offsets fit on every edge
    for _ in range(30):
        over = toff[np.arange(n)] + toff[(np.arange(n) + 1) % n] - 0.9 * elen
        bad = over > 0.0
        if not bad.any():
            break
        for i in np.nonzero(bad)[0]:
            for v in (i, (i + 1) % n):
                radius[v] *= 0.8
                toff[v] = radius[v] * np.tan(abs(turn[v]) / 2.0)
    else:
        return None
    if (radius < 0.95 * spec.min_radius_m).any():
        return None

    pts: list[np.ndarray] = []
    step = spec.waypoint_spacing_m
    for i in range(n):
        d_in, d_out = dirs[i - 1], dirs[i]
        t_in = verts[i] - d_in * toff[i]
        t_out = verts[i] + d_out * toff[i]
        sgn = 1.0 if turn[i] > 0 else -1.0
        normal_in = sgn * np.array([-d_in[1], d_in[0]])
        center = t_in + normal_in * radius[i]
        a0 = np.arctan2(t_in[1] - center[1], t_in[0] - center[0])
        sweep = turn[i]
        m = max(int(np.ceil(abs(sweep) * radius[i] / step)), 2)
        ang = a0 + sweep * np.arange(m) / m
        pts.append(center + radius[i] * np.column_stack([np.cos(ang), np.sin(ang)]))
        # straight from this corner exit to the next corner entry
        nxt = verts[(i + 1) % n] - dirs[i] * toff[(i + 1) % n]
        run = nxt - t_out
        run_len = float(np.hypot(*run))
        k = max(int(np.ceil(run_len / step)), 1)
        frac = np.arange(k) / k
        pts.append(t_out + frac[:, None] * run)
    return np.vstack(pts)


def _corridor_clear(pts: FloatArray, width: float) -> bool:
    """Reject layouts whose far-apart sections come closer than ~2 widths."""
    stride = max(len(pts) // 400, 1)
    sub = pts[::stride]
    m = len(sub)
    d2 = np.sum((sub[:, None, :] - sub[None, :, :]) ** 2, axis=2)
    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    ring_gap = np.minimum(np.abs(i - j), m - np.abs(i - j))
    near = (d2 < (2.0 * width) ** 2) & (ring_gap > max(3, int(6 * width / (stride * 1.5))))
    return not near.any()


def _resample_to_length(pts: FloatArray, target_length: float, spacing: float) -> FloatArray:
    # scale to target length, then resample uniformly; one extra pass keeps
    # the chord-length error of the resampling below 0.1%
    for _ in range(2):
        closed = np.vstack([pts, pts[:1]])
        seg = np.hypot(*np.diff(closed, axis=0).T)
        length = seg.sum()
        pts = pts * (target_length / length)
        closed = closed * (target_length / length)
        cum = np.concatenate([[0.0], np.cumsum(seg * (target_length / length))])
        n = max(int(np.ceil(target_length / spacing)), 8)
        s_new = np.linspace(0.0, cum[-1], n, endpoint=False)
        pts = np.column_stack(
            [np.interp(s_new, cum, closed[:, 0]), np.interp(s_new, cum, closed[:, 1])]
        )
    return pts


def _min_curvature_radius(pts: FloatArray) -> float:
    a, b, c = pts, np.roll(pts, -1, axis=0), np.roll(pts, -2, axis=0)
    ab, bc, ca = b - a, c - b, a - c
    cross = ab[:, 0] * bc[:, 1] - ab[:, 1] * bc[:, 0]
    denom = np.hypot(*ab.T) * np.hypot(*bc.T) * np.hypot(*ca.T)
    kappa = 2.0 * np.abs(cross) / denom
    kmax = float(kappa.max())
    return np.inf if kmax == 0.0 else 1.0 / kmax


def signed_curvature(track: TrackGeometry) -> FloatArray:
    """Discrete signed curvature at each waypoint (left turns positive)."""
    pts = track.waypoints
    a, b, c = pts, np.roll(pts, -1, axis=0), np.roll(pts, -2, axis=0)
    ab, bc, ca = b - a, c - b, a - c
    cross = ab[:, 0] * bc[:, 1] - ab[:, 1] * bc[:, 0]
    denom = np.hypot(*ab.T) * np.hypot(*bc.T) * np.hypot(*ca.T)
    return 2.0 * cross / denom


# ---------------------------------------------------------------------------
# bundled presets

PRESET_NAMES = ("train-a", "eval-b")


def _preset_spec(name: str) -> GeneratorSpec:
    fname = name.replace("-", "_") + ".json"
    try:
        text = resources.files("chicane.presets").joinpath(fname).read_text()
    except FileNotFoundError as exc:
        raise KeyError(f"unknown track preset {name!r}; have {PRESET_NAMES}") from exc
    return GeneratorSpec(**json.loads(text))


_PRESET_CACHE: dict[str, TrackGeometry] = {}


def preset_track(name: str) -> TrackGeometry:
    """Return one of the bundled tracks (generated on first use, cached)."""
    if name not in _PRESET_CACHE:
        _PRESET_CACHE[name] = generate_track(_preset_spec(name))
    return _PRESET_CACHE[name]


def resolve_track(ref: str) -> TrackGeometry:
    """Resolve a preset name or a JSON file path to a track."""
    if ref in PRESET_NAMES:
        return preset_track(ref)
    return load_track(ref)
