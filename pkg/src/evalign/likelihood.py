"""The alignment objective: negative-binomial log-likelihood of the count
image, and its marginalization over rotation magnitude.

A candidate rotation is scored by warping a region's events, splatting them
into a count image, and summing the NB log-pmf over pixels. Three details
make the objective usable as an optimization target:

  - Dispersion r < 1 (log-convex pmf): merging two single-count pixels into
    one double-count pixel then increases the likelihood, which is the
    alignment reward. r >= 1 would prefer spreading.
  - Mass conservation across pixels: warped events are scored wherever they
    land, on a canvas that tightly covers the warped extent, with untouched
    pixels contributing nothing beyond the |region| * logpmf(0) base term.
    Summing only over the region's own pixels would let large warps push
    events off the domain and be rewarded for deleting them.
  - Mass conservation across counts: fractional bilinear counts are scored
    with the gamma-function continuation of the NB log-pmf rather than
    being rounded. Rounding erases sub-0.5 fragments of isolated events,
    and the likelihood then rewards warps that park events at half-pixel
    offsets to destroy their mass. The continuous score is mass-neutral
    (the linear-in-k term sums to a constant), smooth in omega, and keeps
    the concentration reward: it is convex in k exactly when r < 1.

A region enters through which events are scored (those whose raw positions
lie inside it) and through the base term, not by clipping the pixel sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import CameraIntrinsics, EventWindow, _splat, _splat_interior
from .errors import ValidationError
from .warp import AngularVelocity2, flow_basis

# Default NB dispersion; must stay below 1 (see module docstring). q is
# moment-matched per window unless given explicitly.
DEFAULT_NB_R = 0.25

# Auto magnitude-grid rule: m_max = MMAX_FACTOR * median displacement /
# (f * dt), clamped to [MMAX_FLOOR, MMAX_CAP] rad/s.
MMAX_FACTOR = 4.0
MMAX_FLOOR = 0.5
MMAX_CAP = 10.0


@dataclass(frozen=True)
class NBParams:
    """Negative binomial parameters: dispersion r > 0, success prob q in (0,1).

    pmf(k) = Gamma(k+r) / (k! Gamma(r)) * q^r * (1-q)^k, mean r(1-q)/q.
    """

    r: float
    q: float

    def __post_init__(self):
        if not (self.r > 0):
            raise ValidationError("NB dispersion r must be positive")
        if not (0.0 < self.q < 1.0):
            raise ValidationError("NB success probability q must be in (0, 1)")

    @classmethod
    def moment_match(cls, mean_count: float, r: float = DEFAULT_NB_R) -> "NBParams":
        """Choose q so the NB mean equals the observed mean count per pixel."""
        mean_count = max(float(mean_count), 0.0)
        q = min(max(r / (r + mean_count), 1e-9), 1.0 - 1e-9)
        return cls(r, q)


@dataclass(frozen=True)
class NBSpec:
    """Request for per-window moment matching with a given dispersion.

    Passing this (or None) where NBParams is expected defers the choice of
    q to the window being scored.
    """

    r: float = DEFAULT_NB_R

    def __post_init__(self):
        if not (self.r > 0):
            raise ValidationError("NB dispersion r must be positive")


def nb_log_pmf(k, params: NBParams):
    """log pmf of the negative binomial at integer count(s) k >= 0.

    Computed via log-gamma; accepts scalars or arrays.
    """
    k_arr = np.asarray(k)
    if np.any(k_arr < 0) or not np.all(np.equal(np.mod(k_arr, 1), 0)):
        raise ValidationError("k must be a non-negative integer")
    r, q = params.r, params.q
    out = (
        gammaln(k_arr + r) - gammaln(k_arr + 1) - gammaln(r)
        + r * math.log(q) + k_arr * math.log1p(-q)
    )
    return float(out) if np.isscalar(k) else out


@dataclass(frozen=True)
class MagnitudeGrid:
    """Evenly spaced magnitudes over [0, m_max] (uniform prior support)."""

    m_max: float
    n: int = 50

    def __post_init__(self):
        if not (self.m_max > 0):
            raise ValidationError("m_max must be positive")
        if self.n < 2:
            raise ValidationError("grid needs at least 2 points")

    @cached_property
    def values(self) -> np.ndarray:
        return np.linspace(0.0, self.m_max, self.n)

    @classmethod
    def for_window(cls, w: EventWindow, intr: CameraIntrinsics,
                   n: int = 50, m_max: float | None = None) -> "MagnitudeGrid":
        """Build a grid; m_max defaults to the displacement-based auto rule."""
        if m_max is None:
            m_max = auto_m_max(w, intr)
        return cls(m_max, n)


def auto_m_max(w: EventWindow, intr: CameraIntrinsics) -> float:
    """Upper magnitude bound from the window's apparent image motion.

    The dominant displacement between the first and second halves of the
    window is found by FFT cross-correlation of their count images, scaled
    to the full span, then converted to rad/s via the mean focal length.
    Windows without usable drift fall back to the floor value.
    """
    ev = w.events
    f = 0.5 * (intr.fx + intr.fy)
    span = max(w.span, 1e-9)
    if len(ev) < 16:
        return MMAX_FLOOR
    t_mid = 0.5 * (float(ev.t[0]) + float(ev.t[-1]))
    first = ev.t <= t_mid
    second = ~first
    if first.sum() < 8 or second.sum() < 8:
        return MMAX_FLOOR
    h, wd = intr.height, intr.width
    img1 = _splat(np.column_stack((ev.x[first], ev.y[first]))[None], wd, h)[0]
    img2 = _splat(np.column_stack((ev.x[second], ev.y[second]))[None], wd, h)[0]
    corr = np.fft.irfft2(np.fft.rfft2(img2) * np.conj(np.fft.rfft2(img1)),
                         s=(h, wd))
    dy, dx = np.unravel_index(int(np.argmax(corr)), corr.shape)
    if dx > wd // 2:
        dx -= wd
    if dy > h // 2:
        dy -= h
    dt_eff = float(np.mean(ev.t[second]) - np.mean(ev.t[first]))
    if dt_eff <= 1e-9:
        return MMAX_FLOOR
    disp = math.hypot(dx, dy) * span / dt_eff
    m = MMAX_FACTOR * disp / (f * span)
    return min(max(m, MMAX_FLOOR), MMAX_CAP)


def _nb_log_density(k: np.ndarray, params: NBParams) -> np.ndarray:
    """NB log-pmf continued to real k >= 0 via log-gamma.

    Matches nb_log_pmf at integers; used to score fractional splat counts
    without the mass-destroying rounding step.
    """
    r, q = params.r, params.q
    return (gammaln(k + r) - gammaln(k + 1) - gammaln(r)
            + r * math.log(q) + k * math.log1p(-q))


class WindowObjective:
    """Precomputed per-window state for repeated likelihood evaluations.

    Warping is linear in omega, so for a fixed direction the warped
    positions along a magnitude ray are base - m * step; a whole ray is
    splatted and scored in one batched pass. NB parameters default to
    moment matching against the window's mean in-region count per pixel,
    computed from the raw (unwarped) positions so the parameters are
    identical for every candidate omega.
    """

    def __init__(self, w: EventWindow, intr: CameraIntrinsics,
                 region: np.ndarray | None = None,
                 params: NBParams | NBSpec | None = None):
        ev = w.events
        self.width, self.height = intr.width, intr.height
        if region is None:
            self.n_region_px = self.width * self.height
            member = np.ones(len(ev), dtype=bool)
        else:
            region = np.asarray(region, dtype=bool)
            if region.shape != (self.height, self.width):
                raise ValidationError("region mask shape mismatch")
            self.n_region_px = int(np.count_nonzero(region))
            if self.n_region_px == 0:
                raise ValidationError("empty region")
            if len(ev):
                xi = np.clip(np.rint(ev.x).astype(np.intp), 0, self.width - 1)
                yi = np.clip(np.rint(ev.y).astype(np.intp), 0, self.height - 1)
                member = region[yi, xi]
            else:
                member = np.ones(0, dtype=bool)
        sub = ev.select(member)
        self.n_events_in_region = len(sub)
        self.base = sub.positions()
        self.dt = (sub.t - w.t_ref)[:, None]
        self.jac = flow_basis(sub.x, sub.y, intr)[:, :, :2]  # pan/tilt columns
        if params is None:
            params = NBSpec()
        if isinstance(params, NBSpec):
            params = NBParams.moment_match(
                self.n_events_in_region / self.n_region_px, r=params.r)
        self.params = params
        self._log_pmf0 = nb_log_pmf(0, params)
        self._base_term = self.n_region_px * self._log_pmf0

    def _score_positions(self, pos: np.ndarray) -> np.ndarray:
        """Likelihood of a (B, N, 2) warped-position batch.

        Splats onto a canvas that tightly covers the batch so no mass is
        dropped; untouched pixels contribute zero on top of the base term.
        Batches are scored in chunks so rows with small warped extents do
        not pay for the canvas of the largest one.
        """
        b = pos.shape[0]
        if pos.shape[1] == 0:
            return np.full(b, self._base_term)
        scores = np.full(b, self._base_term)
        chunk = 8
        for lo in range(0, b, chunk):
            part = pos[lo:lo + chunk]
            nb = part.shape[0]
            x_lo = math.floor(float(part[..., 0].min())) - 1
            y_lo = math.floor(float(part[..., 1].min())) - 1
            w_c = math.floor(float(part[..., 0].max())) + 3 - x_lo
            h_c = math.floor(float(part[..., 1].max())) + 3 - y_lo
            shifted = part - np.array([x_lo, y_lo], dtype=np.float64)
            flat = _splat_interior(shifted, w_c, h_c).reshape(nb * h_c * w_c)
            nz = np.flatnonzero(flat)
            if nz.size:
                diff = _nb_log_density(flat[nz], self.params) - self._log_pmf0
                scores[lo:lo + chunk] += np.bincount(
                    nz // (h_c * w_c), weights=diff, minlength=nb)
        return scores

    def positions_for(self, omega: AngularVelocity2) -> np.ndarray:
        vec = np.array([omega.wx, omega.wy])
        return self.base - (self.jac @ vec) * self.dt

    def log_likelihood(self, omega: AngularVelocity2) -> float:
        return float(self._score_positions(self.positions_for(omega)[None])[0])

    def log_likelihood_ray(self, phi: float, m_values: np.ndarray) -> np.ndarray:
        """Inner log-likelihood at each magnitude along direction phi."""
        unit = np.array([math.sin(phi), -math.cos(phi)])
        step = (self.jac @ unit) * self.dt  # displacement per unit magnitude
        m_values = np.asarray(m_values, dtype=np.float64)
        pos = self.base[None] - m_values[:, None, None] * step[None]
        return self._score_positions(pos)


def window_log_likelihood(w: EventWindow, omega: AngularVelocity2,
                          region: np.ndarray | None, params: NBParams | None,
                          intr: CameraIntrinsics) -> float:
    """NB log-likelihood of the count image after warping w by omega.

    region is a boolean (height, width) mask or None for the full frame;
    params None selects per-window moment matching. The region selects
    which events are scored; counts are accumulated wherever the warp puts
    them (see module docstring).
    """
    return WindowObjective(w, intr, region, params).log_likelihood(omega)


def marginal_log_likelihood(w: EventWindow, phi: float, grid: MagnitudeGrid,
                            region: np.ndarray | None, params: NBParams | None,
                            intr: CameraIntrinsics) -> float:
    """log integral over magnitude of the window likelihood along phi.

    Trapezoid quadrature combined in log space; the constant uniform-prior
    density 1/m_max is dropped.
    """
    obj = WindowObjective(w, intr, region, params)
    return marginal_from_objective(obj, phi, grid)


def marginal_from_objective(obj: WindowObjective, phi: float,
                            grid: MagnitudeGrid) -> float:
    inner = obj.log_likelihood_ray(phi, grid.values)
    h = grid.m_max / (grid.n - 1)
    log_w = np.full(grid.n, math.log(h))
    log_w[0] = log_w[-1] = math.log(h / 2.0)
    return float(logsumexp(inner + log_w))
