"""Mobility trace ingestion, region extraction, request binning and synthetic traces.

Supported input formats, one sample line each::

    canonical    7,1213084687,512.5,9100.0            vehicle,unix_seconds,x_m,y_m
    cabspotting  37.75134 -122.39488 0 1213084687      lat lon occupied unix_seconds (one file per cab)
    tdrive       1,2008-02-02 15:36:08,116.51172,39.92123   taxi,UTC time,lon,lat
    rome         156;2014-02-01 00:00:00.739166+01;POINT(41.88367 12.48777)   taxi;time;POINT(lat lon)

Geographic formats are projected to planar meters with an equirectangular
projection about the centroid of the valid fixes, so the centroid lands at
(0, 0).
"""
from __future__ import annotations

import calendar
import enum
import hashlib
import io
import math
import re
from dataclasses import dataclass
from datetime import datetime
from typing import IO, Iterable, Sequence

import numpy as np

from .scenario import Box, Point, ServiceRequest

EARTH_RADIUS_M = 6371008.8


class TraceFormat(str, enum.Enum):
    CANONICAL = "canonical"
    CABSPOTTING = "cabspotting"
    TDRIVE = "tdrive"
    ROME = "rome"


class Mobility(str, enum.Enum):
    STATIONARY = "stationary"
    RANDOM_WAYPOINT = "randomwaypoint"


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TracePoint:
    vehicle: int
    timestamp: int
    position: Point


@dataclass
class RequestWindow:
    index: int
    requests: list[ServiceRequest]
    arrivals: np.ndarray


@dataclass(frozen=True)
class Projection:
    lat0: float
    lon0: float

    def forward(self, lat: float, lon: float) -> Point:
        k = math.cos(math.radians(self.lat0))
        return (EARTH_RADIUS_M * math.radians(lon - self.lon0) * k,
                EARTH_RADIUS_M * math.radians(lat - self.lat0))

    def inverse(self, x: float, y: float) -> tuple[float, float]:
        k = math.cos(math.radians(self.lat0))
        return (self.lat0 + math.degrees(y / EARTH_RADIUS_M),
                self.lon0 + math.degrees(x / (EARTH_RADIUS_M * k)))


@dataclass
class ParsedTrace:
    points: list[TracePoint]
    rejected: int
    projection: Projection | None  # None for planar input

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


_ROME_POINT = re.compile(r"POINT\(\s*([-+0-9.eE]+)\s+([-+0-9.eE]+)\s*\)")


def _utc_seconds(text: str) -> int:
    text = text.strip()
    m = re.fullmatch(r"(.*[0-9])([+-]\d{2})(\d{2})?", text)
    if m and ":" in m.group(1) and not re.search(r"[+-]\d{2}:\d{2}$", text):
        # "+01" style offsets are not accepted by fromisoformat before 3.11
        text = f"{m.group(1)}{m.group(2)}:{m.group(3) or '00'}"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        return calendar.timegm(dt.timetuple())
    return math.floor(dt.timestamp())


def _geo_line(line: str, fmt: TraceFormat, vehicle: int) -> tuple[int, int, float, float]:
    """Return (vehicle, t, lat, lon) for one geographic line; raise ValueError if malformed."""
    if fmt is TraceFormat.CABSPOTTING:
        lat, lon, _occ, t = line.split()
        return vehicle, int(t), float(lat), float(lon)
    if fmt is TraceFormat.TDRIVE:
        vid, ts, lon, lat = line.split(",")
        return int(vid), _utc_seconds(ts), float(lat), float(lon)
    vid, ts, geom = line.split(";")
    m = _ROME_POINT.fullmatch(geom.strip())
    if not m:
        raise ValueError("bad POINT")
    return int(vid), _utc_seconds(ts), float(m.group(1)), float(m.group(2))


def parse_trace(stream: IO[bytes] | IO[str] | bytes | str, fmt: TraceFormat | str = TraceFormat.CANONICAL,
                vehicle: int = 0) -> ParsedTrace:
    """Parse a trace into planar points.

    ``vehicle`` names the cab for the single-vehicle cabspotting format.
    Blank lines, ``#`` comments and a canonical header row are skipped;
    every other unparsable line counts as rejected.
    """
    try:
        fmt = TraceFormat(fmt.lower() if isinstance(fmt, str) else fmt)
    except ValueError:
        raise TraceError(f"unrecognized trace format {fmt!r}") from None
    if isinstance(stream, (bytes, str)):
        data = stream
    else:
        data = stream.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TraceError(f"trace is not UTF-8 text: {exc}") from None
    rejected = 0
    rows = []
    for raw in io.StringIO(data):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if fmt is TraceFormat.CANONICAL and line.lower().startswith("vehicle,"):
            continue
        try:
            if fmt is TraceFormat.CANONICAL:
                vid, t, x, y = line.split(",")
                row = (int(vid), int(t), float(x), float(y))
            else:
                row = _geo_line(line, fmt, vehicle)
                if not (-90 <= row[2] <= 90 and -180 <= row[3] <= 180):
                    raise ValueError("coordinates out of range")
            if not all(math.isfinite(v) for v in row[2:]):
                raise ValueError("non-finite coordinate")
        except ValueError:
            rejected += 1
            continue
        rows.append(row)
    if not rows:
        raise TraceError(f"zero valid lines ({rejected} rejected)")
    if fmt is TraceFormat.CANONICAL:
        pts = [TracePoint(v, t, (x, y)) for v, t, x, y in rows]
        return ParsedTrace(_normalized(pts), rejected, None)
    proj = Projection(math.fsum(r[2] for r in rows) / len(rows), math.fsum(r[3] for r in rows) / len(rows))
    pts = [TracePoint(v, t, proj.forward(lat, lon)) for v, t, lat, lon in rows]
    return ParsedTrace(_normalized(pts), rejected, proj)


def _normalized(points: Iterable[TracePoint]) -> list[TracePoint]:
    # per-vehicle chronological order; cabspotting files are newest-first
    return sorted(points, key=lambda p: (p.vehicle, p.timestamp, p.position))


def extract_region(points: Iterable[TracePoint], box: Box) -> list[TracePoint]:
    """Points inside the closed box, re-based so the box origin is (0, 0)."""
    if box.width < 0 or box.height < 0:
        raise ValueError("box has negative extent")
    return [TracePoint(p.vehicle, p.timestamp, (p.position[0] - box.x0, p.position[1] - box.y0))
            for p in points if box.contains(p.position)]


def centered(points: Iterable[TracePoint], box: Box) -> list[TracePoint]:
    """Shift centroid-origin (projected) points so (0, 0) sits at the box centre."""
    cx, cy = (box.x0 + box.x1) / 2, (box.y0 + box.y1) / 2
    return [TracePoint(p.vehicle, p.timestamp, (p.position[0] + cx, p.position[1] + cy)) for p in points]


def service_for(seed: int, vehicle: int, window: int, n_services: int) -> int:
    h = hashlib.blake2b(f"{seed}:{vehicle}:{window}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "big") % n_services


def bin_requests(points: Sequence[TracePoint], window_seconds: int, services: int, seed: int,
                 start: int | None = None) -> list[RequestWindow]:
    """Group fixes into windows of ``window_seconds``, numbered from 1.

    Window 1 starts at ``start`` (default: the earliest fix).  Each vehicle
    active in a window issues one request from its last fix there.  Empty
    windows between active ones are kept so numbering stays contiguous.
    """
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    if services < 1:
        raise ValueError("need at least one service")
    if not points:
        raise ValueError("no trace points to bin")
    t0 = min(p.timestamp for p in points) if start is None else start
    last: dict[tuple[int, int], TracePoint] = {}
    for p in points:
        if p.timestamp < t0:
            continue
        w = 1 + (p.timestamp - t0) // window_seconds
        k = (w, p.vehicle)
        q = last.get(k)
        # ties on timestamp broken by position so input order never matters
        if q is None or (p.timestamp, p.position) > (q.timestamp, q.position):
            last[k] = p
    n_windows = max((w for w, _ in last), default=0)
    per_window: list[list[ServiceRequest]] = [[] for _ in range(n_windows)]
    for (w, v), p in sorted(last.items()):
        per_window[w - 1].append(ServiceRequest(v, p.position, p.timestamp, service_for(seed, v, w, services)))
    out = []
    for w, reqs in enumerate(per_window, start=1):
        arrivals = np.bincount([r.service for r in reqs], minlength=services).astype(np.int64)
        out.append(RequestWindow(w, reqs, arrivals))
    return out


def synth_trace(n_vehicles: int, n_windows: int, box: Box, mobility: Mobility | str = Mobility.RANDOM_WAYPOINT,
                seed: int = 0, window_seconds: int = 60, speed: float = 10.0) -> list[TracePoint]:
    """One fix per vehicle per window, at the window's last second.

    Random waypoint: vehicles travel at ``speed`` m/s toward uniform
    waypoints, drawing a new one on arrival.
    """
    if n_vehicles < 1:
        raise ValueError("n_vehicles must be >= 1")
    mobility = Mobility(mobility.lower() if isinstance(mobility, str) else mobility)
    rng = np.random.default_rng(seed)

    def uniform(n):
        return np.column_stack([rng.uniform(box.x0, box.x1, n), rng.uniform(box.y0, box.y1, n)])

    pos = uniform(n_vehicles)
    goal = uniform(n_vehicles) if mobility is Mobility.RANDOM_WAYPOINT else pos
    pts = []
    for w in range(n_windows):
        if mobility is Mobility.RANDOM_WAYPOINT and w > 0:
            for v in range(n_vehicles):
                budget = speed * window_seconds
                while budget > 0:
                    delta = goal[v] - pos[v]
                    dist = math.hypot(*delta)
                    if dist <= budget:
                        pos[v] = goal[v]
                        budget -= dist
                        goal[v] = uniform(1)[0]
                        if dist == 0.0:  # degenerate box, nowhere to go
                            break
                    else:
                        pos[v] = pos[v] + delta * (budget / dist)
                        budget = 0.0
        t = w * window_seconds + window_seconds - 1
        pts.extend(TracePoint(v, t, (float(pos[v, 0]), float(pos[v, 1]))) for v in range(n_vehicles))
    return pts


def write_canonical(points: Iterable[TracePoint], out: IO[str]) -> None:
    out.write("vehicle,timestamp,x,y\n")
    for p in points:
        out.write(f"{p.vehicle},{p.timestamp},{p.position[0]:.3f},{p.position[1]:.3f}\n")
