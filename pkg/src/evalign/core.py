"""Fundamental data types: events, camera intrinsics, time windows, region
masks, and the count image with its accumulation contract.

Events are stored struct-of-arrays (parallel numpy vectors) rather than as
per-event objects; all operations are pure functions over those arrays.
Image-shaped arrays (count images, label grids) use numpy's [row, col] =
[y, x] convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Events:
    """A batch of events as parallel arrays.

    x, y : pixel coordinates (real-valued after undistortion)
    t    : timestamps in seconds, non-decreasing
    p    : polarity, +1 or -1
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        t = np.ascontiguousarray(self.t, dtype=np.float64)
        p = np.ascontiguousarray(self.p, dtype=np.int8)
        if not (x.shape == y.shape == t.shape == p.shape) or x.ndim != 1:
            raise ValidationError("event arrays must be 1-D and equal length")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)

    def __len__(self):
        return self.x.size

    @classmethod
    def empty(cls) -> "Events":
        z = np.empty(0)
        return cls(z, z, z, np.empty(0, dtype=np.int8))

    def validate(self, width: int | None = None, height: int | None = None) -> "Events":
        """Check stream invariants; returns self so calls can be chained."""
        if len(self) == 0:
            return self
        if np.any(self.t < 0):
            raise ValidationError("timestamps must be >= 0")
        if np.any(np.diff(self.t) < 0):
            raise ValidationError("event stream not sorted by timestamp")
        if not np.all(np.abs(self.p) == 1):
            raise ValidationError("polarity must be -1 or 1")
        if width is not None:
            if np.any(self.x < 0) or np.any(self.x > width - 1):
                raise ValidationError("x coordinate outside sensor bounds")
        if height is not None:
            if np.any(self.y < 0) or np.any(self.y > height - 1):
                raise ValidationError("y coordinate outside sensor bounds")
        return self

    def select(self, idx) -> "Events":
        return Events(self.x[idx], self.y[idx], self.t[idx], self.p[idx])

    def positions(self) -> np.ndarray:
        """(n, 2) array of (x, y) positions."""
        return np.column_stack((self.x, self.y))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("sensor dimensions must be positive")

    def normalized(self, x, y):
        """Pixel coordinates -> normalized image coordinates (x_bar, y_bar)."""
        return (np.asarray(x) - self.cx) / self.fx, (np.asarray(y) - self.cy) / self.fy


@dataclass(frozen=True)
class EventWindow:
    """All events in one time slice, with the reference time used for warping.

    Events are warped back to t_ref (= t_start for fixed-dt slicing), so a
    correctly compensating rotation maps every event to its t_start position.
    The last window of a stream is closed at t_end; all others are half-open.
    """

    events: Events
    t_start: float
    t_end: float
    t_ref: float
    derotated: bool = False

    def __post_init__(self):
        if self.t_end < self.t_start:
            raise ValidationError("t_end must be >= t_start")
        if not (self.t_start <= self.t_ref <= self.t_end):
            raise ValidationError("t_ref must lie within [t_start, t_end]")
        ev = self.events
        # one-ulp slop: boundaries are accumulated in floating point
        eps = 1e-9 * max(1.0, abs(self.t_end))
        if len(ev) and (ev.t[0] < self.t_start - eps
                        or ev.t[-1] > self.t_end + eps):
            raise ValidationError("window contains events outside its span")

    def __len__(self):
        return len(self.events)

    @property
    def span(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class RegionMask:
    """Per-pixel region labels; 0 means unlabeled/background."""

    labels: np.ndarray  # (height, width) non-negative ints

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels)
        if lab.ndim != 2:
            raise ValidationError("label grid must be 2-D")
        if not np.issubdtype(lab.dtype, np.integer):
            lab = lab.astype(np.int32)
        if lab.min(initial=0) < 0:
            raise ValidationError("labels must be non-negative")
        object.__setattr__(self, "labels", lab)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @cached_property
    def region_ids(self) -> tuple[int, ...]:
        ids = np.unique(self.labels)
        return tuple(int(i) for i in ids if i != 0)

    @cached_property
    def region_index(self) -> dict[int, np.ndarray]:
        """Map region id -> flat pixel indices (row-major)."""
        flat = self.labels.ravel()
        return {rid: np.flatnonzero(flat == rid) for rid in self.region_ids}

    def size(self, region_id: int) -> int:
        return len(self.region_index.get(region_id, ()))

    def bool_mask(self, region_id: int) -> np.ndarray:
        return self.labels == region_id

    def label_at(self, x, y) -> np.ndarray:
        """Region label at rounded positions; out-of-bounds positions map to 0."""
        xi = np.rint(np.asarray(x)).astype(np.intp)
        yi = np.rint(np.asarray(y)).astype(np.intp)
        ok = (xi >= 0) & (xi < self.width) & (yi >= 0) & (yi < self.height)
        out = np.zeros(xi.shape, dtype=self.labels.dtype)
        out[ok] = self.labels[yi[ok], xi[ok]]
        return out


@dataclass(frozen=True)
class CountImage:
    """Per-pixel accumulated event mass after warping.

    Bilinear splatting yields fractional counts; `dropped` tallies the mass
    that fell outside the sensor. sum(counts) + dropped equals the number of
    splatted events (to float accumulation error).
    """

    counts: np.ndarray  # (height, width) non-negative reals
    dropped: float = 0.0

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def slice_windows(stream: Events, dt: float) -> list[EventWindow]:
    """Partition a sorted stream into consecutive windows of width dt.

    Every event lands in exactly one window; the window count is
    ceil(span / dt) (with a tiny tolerance so exact multiples don't spill
    into an empty extra window). t_ref of each window is its t_start.
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    stream.validate()
    if len(stream) == 0:
        return []
    t0 = float(stream.t[0])
    span = float(stream.t[-1]) - t0
    n = max(1, math.ceil(span / dt - 1e-9))
    idx = np.minimum(np.floor((stream.t - t0) / dt).astype(np.intp), n - 1)
    bounds = np.searchsorted(idx, np.arange(n + 1))
    windows = []
    for k in range(n):
        ev = stream.select(slice(bounds[k], bounds[k + 1]))
        t_start = t0 + k * dt
        windows.append(EventWindow(ev, t_start, t_start + dt, t_ref=t_start))
    return windows


def slice_windows_count(stream: Events, n_events: int) -> list[EventWindow]:
    """Fixed-count slicing: consecutive chunks of n_events events.

    Window spans vary with event rate; t_start/t_end are the first/last
    event times of the chunk and t_ref = t_start. The comparison partner of
    fixed-dt slicing in the windowing ablation.
    """
    if n_events <= 0:
        raise ValidationError("n_events must be positive")
    stream.validate()
    windows = []
    for lo in range(0, len(stream), n_events):
        ev = stream.select(slice(lo, lo + n_events))
        if len(ev) == 0:
            break
        t_start, t_end = float(ev.t[0]), float(ev.t[-1])
        windows.append(EventWindow(ev, t_start, t_end, t_ref=t_start))
    return windows


def accumulate(positions: np.ndarray, width: int, height: int) -> CountImage:
    """Splat continuous (x, y) positions into a count image.

    Each position distributes unit mass over its 4 neighboring integer
    pixels with bilinear weights; mass falling outside the sensor is
    dropped and tallied in CountImage.dropped.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    counts = _splat(positions[None, :, :], width, height)[0]
    dropped = positions.shape[0] - counts.sum()
    return CountImage(counts, dropped=float(max(dropped, 0.0)))


def _splat(positions: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear splat of a (B, N, 2) position batch into (B, height, width).

    Implemented with a single weighted bincount over flattened
    (batch, y, x) indices; in-bounds mass is conserved exactly and
    out-of-bounds fragments are dropped.
    """
    b, n, _ = positions.shape
    if n == 0:
        return np.zeros((b, height, width))
    x = positions[..., 0]
    y = positions[..., 1]
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    batch = np.broadcast_to(np.arange(b, dtype=np.int64)[:, None], (b, n))

    idx_parts = []
    w_parts = []
    for dx, dy, w in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi = x0 + dx
        yi = y0 + dy
        ok = (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height)
        idx_parts.append(((batch[ok] * height + yi[ok]) * width + xi[ok]))
        w_parts.append(w[ok])
    flat = np.bincount(
        np.concatenate(idx_parts),
        weights=np.concatenate(w_parts),
        minlength=b * height * width,
    )
    return flat.reshape(b, height, width)


def _splat_interior(positions: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear splat without bounds checks.

    Precondition: every position lies in [1, width-2) x [1, height-2) so
    all four neighbor pixels exist. The likelihood scorer guarantees this
    by sizing its canvas from the position extents.
    """
    b, n, _ = positions.shape
    x = positions[..., 0]
    y = positions[..., 1]
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    base = (np.arange(b, dtype=np.int64)[:, None] * height
            + y0.astype(np.int64)) * width + x0.astype(np.int64)
    idx = np.empty((4, b, n), dtype=np.int64)
    idx[0] = base
    idx[1] = base + 1
    idx[2] = base + width
    idx[3] = base + width + 1
    gx = 1.0 - fx
    gy = 1.0 - fy
    wts = np.empty((4, b, n))
    wts[0] = gx * gy
    wts[1] = fx * gy
    wts[2] = gx * fy
    wts[3] = fx * fy
    flat = np.bincount(idx.ravel(), weights=wts.ravel(),
                       minlength=b * height * width)
    return flat.reshape(b, height, width)
