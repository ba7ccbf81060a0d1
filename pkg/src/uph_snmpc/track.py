"""Reference trajectories: CSV loading, synthetic tracks, horizon windows."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import minimum_filter1d, uniform_filter1d

from .vehicle import V_INTERFACE_MAX, VehicleParams, ax_max

CSV_COLUMNS = ("s_m", "x_m", "y_m", "psi_rad", "vx_mps")
SYNTH_STEP = 0.5
LATERAL_MARGIN = 0.95
LONGITUDINAL_MARGIN = 0.3
SMOOTH_LENGTH = 100.0
PROJECTION_LIMIT = 50.0
HEADING_TOLERANCE = 0.05


class TrackError(ValueError):
    """Base class for reference-trajectory problems."""


class SchemaError(TrackError):
    pass


class MonotonicityError(TrackError):
    pass


class SpeedRangeError(TrackError):
    pass


class ProjectionError(TrackError):
    pass


@dataclass(frozen=True)
class ReferenceTrajectory:
    s: np.ndarray
    x_ref: np.ndarray
    y_ref: np.ndarray
    psi_ref: np.ndarray
    v_ref: np.ndarray

    @property
    def length(self) -> float:
        return float(self.s[-1] - self.s[0])

    @property
    def closed(self) -> bool:
        return bool(np.hypot(self.x_ref[-1] - self.x_ref[0], self.y_ref[-1] - self.y_ref[0]) <= 1e-6)

    def __len__(self):
        return self.s.shape[0]

    def validate(self) -> None:
        n = self.s.shape[0]
        if n < 2 or any(a.shape != (n,) for a in (self.x_ref, self.y_ref, self.psi_ref, self.v_ref)):
            raise SchemaError("reference arrays must be one-dimensional, equal length, >= 2 nodes")
        for name, arr in zip(CSV_COLUMNS, (self.s, self.x_ref, self.y_ref, self.psi_ref, self.v_ref)):
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"column {name} contains non-finite values")
        bad = np.flatnonzero(np.diff(self.s) <= 0)
        if bad.size:
            raise MonotonicityError(f"arc length not strictly increasing at row {int(bad[0]) + 1}")
        bad = np.flatnonzero((self.v_ref <= 0) | (self.v_ref > V_INTERFACE_MAX))
        if bad.size:
            r = int(bad[0])
            raise SpeedRangeError(f"v_ref={self.v_ref[r]} at row {r} outside (0, {V_INTERFACE_MAX}]")
        bad = self._heading_mismatch()
        if bad.size:
            r = int(bad[0])
            raise SchemaError(f"psi at row {r} deviates from the adjacent segment directions by more than {HEADING_TOLERANCE} rad")

    def _heading_mismatch(self) -> np.ndarray:
        """Rows whose heading matches neither the incoming nor the outgoing segment."""
        seg = np.arctan2(np.diff(self.y_ref), np.diff(self.x_ref))
        seg = np.where(np.hypot(np.diff(self.x_ref), np.diff(self.y_ref)) > 0, seg, np.nan)
        out_seg = np.append(seg, seg[-1])
        in_seg = np.insert(seg, 0, seg[0])

        def off(a):
            d = np.abs(np.angle(np.exp(1j * (self.psi_ref - a))))
            return np.where(np.isnan(d), 0.0, d)

        return np.flatnonzero(np.minimum(off(out_seg), off(in_seg)) > HEADING_TOLERANCE)

    def sample(self, s_query) -> dict:
        """Linear interpolation of all channels at arc lengths (wrapping on closed tracks)."""
        s_query = np.asarray(s_query, dtype=float)
        s = self.s
        if self.closed:
            s_query = s[0] + np.mod(s_query - s[0], self.length)
        else:
            s_query = np.clip(s_query, s[0], s[-1])
        return {
            "s": s_query,
            "x": np.interp(s_query, s, self.x_ref),
            "y": np.interp(s_query, s, self.y_ref),
            "psi": np.interp(s_query, s, self.psi_ref),
            "v": np.interp(s_query, s, self.v_ref),
        }

    def project(self, x: float, y: float):
        """Closest point on the polyline: (arc length, signed lateral offset, distance)."""
        px, py = self.x_ref, self.y_ref
        dx, dy = np.diff(px), np.diff(py)
        seg_len2 = dx * dx + dy * dy
        t = np.clip(((x - px[:-1]) * dx + (y - py[:-1]) * dy) / seg_len2, 0.0, 1.0)
        cx, cy = px[:-1] + t * dx, py[:-1] + t * dy
        d2 = (x - cx) ** 2 + (y - cy) ** 2
        k = int(np.argmin(d2))
        seg_len = np.sqrt(seg_len2[k])
        cross = (dx[k] * (y - py[k]) - dy[k] * (x - px[k])) / seg_len
        dist = float(np.sqrt(d2[k]))
        sign = 1.0 if cross >= 0 else -1.0
        return float(self.s[k] + t[k] * (self.s[k + 1] - self.s[k])), sign * dist, dist


@dataclass(frozen=True)
class ReferenceWindow:
    s: np.ndarray
    x_ref: np.ndarray
    y_ref: np.ndarray
    psi_ref: np.ndarray
    v_ref: np.ndarray

    def __len__(self):
        return self.s.shape[0]


def _tangent_headings(x, y) -> np.ndarray:
    dx, dy = np.diff(x), np.diff(y)
    seg = np.unwrap(np.arctan2(dy, dx))
    return np.append(seg, seg[-1])


def load_reference_csv(path) -> ReferenceTrajectory:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(row for row in fh if not row.lstrip().startswith("#"))
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise SchemaError(f"{path}: header must be {','.join(CSV_COLUMNS)}, got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise SchemaError(f"{path}: row {lineno} has {len(row)} fields")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise SchemaError(f"{path}: row {lineno}: {exc}") from None
    data = np.array(rows, dtype=float).reshape(-1, len(CSV_COLUMNS))
    traj = ReferenceTrajectory(data[:, 0], data[:, 1], data[:, 2], np.unwrap(data[:, 3]), data[:, 4])
    traj.validate()
    return traj


def save_reference_csv(traj: ReferenceTrajectory, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in zip(traj.s, traj.x_ref, traj.y_ref, traj.psi_ref, traj.v_ref):
            w.writerow([repr(float(v)) for v in row])


def _centerline(kind: str, straight_len: float, radius: float):
    """Piecewise straight/arc centerline sampled every SYNTH_STEP metres.

    Returns arc length, x, y and the local curvature radius (inf on straights).
    The oval starts at the beginning of a straight. The figure-eight is two
    circles joined by diagonals crossing at the origin, where it starts.
    """
    if kind == "oval":
        heading = 0.0
        pieces = [(0, straight_len), (1, np.pi * radius), (0, straight_len), (1, np.pi * radius)]
    elif kind == "figure_eight":
        theta = np.arctan2(radius, 0.5 * straight_len)
        sweep = (np.pi + 2.0 * theta) * radius
        heading = theta
        pieces = [(0, 0.5 * straight_len), (-1, sweep), (0, straight_len), (1, sweep), (0, 0.5 * straight_len)]
    else:
        raise ValueError(f"unknown track kind {kind!r}")
    pieces = [(d, length) for d, length in pieces if length > 0]

    bounds = np.cumsum([0.0] + [length for _, length in pieces])
    n = max(int(round(bounds[-1] / SYNTH_STEP)), 2)
    s = np.linspace(0.0, bounds[-1], n + 1)
    x = np.empty_like(s)
    y = np.empty_like(s)
    rad = np.full_like(s, np.inf)
    p0 = np.zeros(2)
    for k, (direction, length) in enumerate(pieces):
        mask = (s >= bounds[k]) & (s <= bounds[k + 1])
        ds = s[mask] - bounds[k]
        if direction == 0:
            x[mask] = p0[0] + ds * np.cos(heading)
            y[mask] = p0[1] + ds * np.sin(heading)
            p0 = p0 + length * np.array([np.cos(heading), np.sin(heading)])
        else:
            center = p0 + direction * radius * np.array([-np.sin(heading), np.cos(heading)])
            h = heading + direction * ds / radius
            x[mask] = center[0] + direction * radius * np.sin(h)
            y[mask] = center[1] - direction * radius * np.cos(h)
            rad[mask] = radius
            heading = heading + direction * length / radius
            p0 = center + direction * radius * np.array([np.sin(heading), -np.cos(heading)])
    x[-1], y[-1] = x[0], y[0]
    return s, x, y, rad


def speed_profile(s, radius, v_max: float, a_y_max: float, closed: bool = True) -> np.ndarray:
    """Lateral-capped speed with forward/backward longitudinal passes, then smoothed.

    The passes use a fraction of the piecewise acceleration tables evaluated at
    the faster end of each step (the stricter limit). The result is eroded and
    then averaged over ``SMOOTH_LENGTH`` metres: every averaged value is a mean
    of minima over windows containing the point, so the smoothed profile never
    exceeds the raw one while the acceleration changes gradually.
    """
    cap = np.minimum(v_max, LATERAL_MARGIN * np.sqrt(a_y_max * radius))
    v = cap.copy()
    ds = np.diff(s)
    for _ in range(2 if closed else 1):
        for k in range(len(v) - 1):
            acc = LONGITUDINAL_MARGIN * ax_max(max(v[k], v[k + 1]), "accelerating")
            v[k + 1] = min(v[k + 1], np.sqrt(v[k] ** 2 + 2.0 * acc * ds[k]))
        if closed:
            v[0] = min(v[0], v[-1])
        for k in range(len(v) - 2, -1, -1):
            dec = LONGITUDINAL_MARGIN * ax_max(max(v[k], v[k + 1]), "decelerating")
            v[k] = min(v[k], np.sqrt(v[k + 1] ** 2 + 2.0 * dec * ds[k]))
        if closed:
            v[-1] = min(v[-1], v[0])
    width = int(round(SMOOTH_LENGTH / float(np.mean(ds)))) | 1
    if width > 1:
        mode = "wrap" if closed else "nearest"
        body = v[:-1] if closed else v
        body = uniform_filter1d(minimum_filter1d(body, width, mode=mode), width, mode=mode)
        v = np.append(body, body[0]) if closed else body
    return v


def synthesize_track(kind: str, straight_len: float, radius: float, v_max: float, params: VehicleParams) -> ReferenceTrajectory:
    """Closed oval or figure-eight with a g-g feasible speed profile."""
    if not radius > 10.0:
        raise TrackError(f"radius must exceed 10 m, got {radius}")
    if not 0 < v_max <= V_INTERFACE_MAX:
        raise SpeedRangeError(f"v_max must lie in (0, {V_INTERFACE_MAX}], got {v_max}")
    if straight_len < 0:
        raise TrackError("straight length must be non-negative")
    s, x, y, rad = _centerline(kind, straight_len, radius)
    v = speed_profile(s, rad, v_max, params.a_y_max)
    if not np.all(v > 0):
        raise TrackError("no positive speed satisfies the acceleration limits on this geometry")
    psi = _tangent_headings(x, y)
    traj = ReferenceTrajectory(s, x, y, psi, v)
    traj.validate()
    return traj


def reference_window(track: ReferenceTrajectory, x0, n_nodes: int, T_s: float) -> ReferenceWindow:
    """Horizon reference: project x0 and advance by ``v_ref * T_s`` per node.

    Headings are unwrapped to the branch nearest the heading of ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    s0, _, dist = track.project(x0[0], x0[1])
    if dist > PROJECTION_LIMIT:
        raise ProjectionError(f"state is {dist:.1f} m from the reference (limit {PROJECTION_LIMIT} m)")
    s_nodes = np.empty(n_nodes)
    s_nodes[0] = s0
    for k in range(n_nodes - 1):
        s_nodes[k + 1] = s_nodes[k] + track.sample(s_nodes[k])["v"] * T_s
    ref = track.sample(s_nodes)
    psi = ref["psi"].copy()
    if track.closed:
        # heading jumps by a full turn at the seam of a closed track; stitch it
        lap = track.psi_ref[-1] - track.psi_ref[0]
        laps = np.floor((s_nodes - track.s[0]) / track.length)
        psi += (laps - laps[0]) * lap
    psi = np.unwrap(psi)
    psi += 2 * np.pi * np.round((x0[2] - psi[0]) / (2 * np.pi))
    return ReferenceWindow(s_nodes, ref["x"], ref["y"], psi, ref["v"])


def lateral_deviation(x, track: ReferenceTrajectory) -> float:
    """Signed distance from the reference polyline, positive to the left."""
    x = np.asarray(x, dtype=float)
    return track.project(x[0], x[1])[1]
