"""Two-step object-wise alignment: a global flow direction shared by the
whole frame, then a per-region rotation magnitude along that direction.

Estimating the direction over all pixels keeps it identifiable regardless
of depth structure (direction is depth-independent for translational
motion); depth discontinuities only change the per-region speed. Both 1-D
searches are derivative-free (coarse grid + golden section) because the
rounded-count objective is piecewise constant at fine scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CameraIntrinsics, Events, EventWindow, RegionMask
from .errors import InsufficientEventsError
from .likelihood import (
    MagnitudeGrid,
    NBParams,
    WindowObjective,
    marginal_from_objective,
)
from .warp import (
    AngularVelocity2,
    AngularVelocity3,
    ImuTrace,
    derotate,
    warp_positions,
)

DEFAULT_MIN_EVENTS = 50
DEFAULT_PHI_SAMPLES = 36
PHI_TOL = math.radians(0.2)
MAX_REFINE_EVALS = 50
INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class RegionEstimate:
    m: float
    omega: AngularVelocity2
    log_likelihood: float
    n_events: int
    converged: bool
    centroid: tuple[float, float] | None = None


@dataclass(frozen=True)
class AlignmentResult:
    phi_global: float
    per_region: dict[int, RegionEstimate]
    derotated: bool = False


def _golden_max(f, lo: float, hi: float, tol: float, max_evals: int):
    """Golden-section maximization of f on [lo, hi].

    Stops when the bracket shrinks below tol or max_evals objective
    evaluations have been spent. Returns (x_best, f_best, evals).
    """
    x1 = hi - INV_GOLDEN * (hi - lo)
    x2 = lo + INV_GOLDEN * (hi - lo)
    f1, f2 = f(x1), f(x2)
    evals = 2
    while (hi - lo) > tol and evals < max_evals:
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - INV_GOLDEN * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + INV_GOLDEN * (hi - lo)
            f2 = f(x2)
        evals += 1
    return (x1, f1, evals) if f1 >= f2 else (x2, f2, evals)


def estimate_direction(w: EventWindow, grid: MagnitudeGrid,
                       params: NBParams | None, intr: CameraIntrinsics,
                       phi_samples: int = DEFAULT_PHI_SAMPLES,
                       min_events: int = DEFAULT_MIN_EVENTS) -> float:
    """Global flow direction by maximizing the magnitude-marginal likelihood.

    Coarse scan over evenly spaced directions in [0, 2pi), then
    golden-section refinement inside the bracketing interval (tolerance
    0.2 degrees, at most MAX_REFINE_EVALS objective evaluations). Coarse
    ties break toward the smaller angle.
    """
    if len(w) < min_events:
        raise InsufficientEventsError(
            f"insufficient events: {len(w)} < {min_events}")
    obj = WindowObjective(w, intr, region=None, params=params)
    phis = np.arange(phi_samples) * (2.0 * math.pi / phi_samples)
    coarse = np.array([marginal_from_objective(obj, p, grid) for p in phis])
    best = int(np.argmax(coarse))  # first occurrence = smaller angle on ties
    step = 2.0 * math.pi / phi_samples
    lo, hi = phis[best] - step, phis[best] + step
    phi_hat, _, _ = _golden_max(
        lambda p: marginal_from_objective(obj, p, grid),
        lo, hi, tol=PHI_TOL, max_evals=MAX_REFINE_EVALS)
    return float(phi_hat) % (2.0 * math.pi)


def estimate_magnitude(w: EventWindow, phi: float, region: np.ndarray | None,
                       grid: MagnitudeGrid, params: NBParams | None,
                       intr: CameraIntrinsics,
                       min_events: int = DEFAULT_MIN_EVENTS):
    """Rotation magnitude for one region along a fixed direction.

    Coarse scan over the magnitude grid, then golden-section refinement in
    the bracketing interval (tolerance m_max/5000, at most
    MAX_REFINE_EVALS evaluations). Returns (m, log_likelihood).
    """
    obj = WindowObjective(w, intr, region=region, params=params)
    if obj.n_events_in_region < min_events:
        raise InsufficientEventsError(
            f"insufficient events in region: "
            f"{obj.n_events_in_region} < {min_events}")
    values = grid.values
    coarse = obj.log_likelihood_ray(phi, values)
    best = int(np.argmax(coarse))
    lo = values[max(best - 1, 0)]
    hi = values[min(best + 1, grid.n - 1)]
    m_hat, ll, _ = _golden_max(
        lambda m: obj.log_likelihood(AngularVelocity2(m, phi)),
        lo, hi, tol=grid.m_max / 5000.0, max_evals=MAX_REFINE_EVALS)
    if coarse[best] > ll:  # coarse maximum can beat the refined interior
        return float(values[best]), float(coarse[best])
    return float(m_hat), float(ll)


def align_window(w: EventWindow, mask: RegionMask,
                 imu: ImuTrace | None, grid: MagnitudeGrid | None,
                 params: NBParams | None, intr: CameraIntrinsics,
                 phi_samples: int = DEFAULT_PHI_SAMPLES,
                 min_events: int = DEFAULT_MIN_EVENTS,
                 grid_n: int = 50, m_max: float | None = None,
                 threads: int = 1) -> AlignmentResult:
    """Object-wise alignment of one window.

    Derotates when an IMU trace is given, estimates the shared direction on
    the full frame, then the magnitude per mask region. Regions that fail
    (too few events) become unconverged entries; they never abort the
    window. Every region present in the mask gets an entry. With
    threads > 1, per-region magnitude estimation runs in a thread pool;
    results are identical either way.
    """
    if (mask.height, mask.width) != (intr.height, intr.width):
        raise ValueError("mask dimensions do not match sensor dimensions")
    w = derotate(w, imu, intr)
    if grid is None:
        grid = MagnitudeGrid.for_window(w, intr, n=grid_n, m_max=m_max)
    phi = estimate_direction(w, grid, params, intr,
                             phi_samples=phi_samples, min_events=min_events)
    ev = w.events
    labels_at_events = mask.label_at(ev.x, ev.y)

    def solve_region(rid: int) -> RegionEstimate:
        in_region = labels_at_events == rid
        n_ev = int(np.count_nonzero(in_region))
        centroid = None
        if n_ev:
            centroid = (float(ev.x[in_region].mean()),
                        float(ev.y[in_region].mean()))
        try:
            m, ll = estimate_magnitude(w, phi, mask.bool_mask(rid), grid,
                                       params, intr, min_events=min_events)
            return RegionEstimate(
                m=m, omega=AngularVelocity2(m, phi), log_likelihood=ll,
                n_events=n_ev, converged=True, centroid=centroid)
        except InsufficientEventsError:
            return RegionEstimate(
                m=0.0, omega=AngularVelocity2(0.0, phi),
                log_likelihood=float("-inf"), n_events=n_ev,
                converged=False, centroid=centroid)

    rids = list(mask.region_ids)
    if threads > 1 and len(rids) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            estimates = list(pool.map(solve_region, rids))
    else:
        estimates = [solve_region(rid) for rid in rids]
    per_region = dict(zip(rids, estimates))
    return AlignmentResult(phi_global=phi, per_region=per_region,
                           derotated=w.derotated)


def align_window_3dof(w: EventWindow, intr: CameraIntrinsics,
                      grid: MagnitudeGrid | None = None,
                      params: NBParams | None = None,
                      phi_samples: int = DEFAULT_PHI_SAMPLES,
                      min_events: int = DEFAULT_MIN_EVENTS,
                      grid_n: int = 50, m_max: float | None = None,
                      wz_samples: int = 11,
                      wz_max: float | None = None) -> AngularVelocity3:
    """Full-frame 3-DOF rotation estimate for rotation-dominant data.

    Extends the 2-DOF search with a nested wz scan: each wz candidate is
    removed from the window by warping, the 2-DOF machinery scores the
    remainder, and the best wz is refined by golden section. Uses the same
    likelihood throughout.
    """
    if len(w) < min_events:
        raise InsufficientEventsError(
            f"insufficient events: {len(w)} < {min_events}")
    if grid is None:
        grid = MagnitudeGrid.for_window(w, intr, n=grid_n, m_max=m_max)
    if wz_max is None:
        wz_max = grid.m_max

    cache: dict[float, tuple[float, float, float]] = {}

    def solve_2dof(wz: float):
        if wz in cache:
            return cache[wz]
        pos = warp_positions(w.events, np.array([0.0, 0.0, wz]), w.t_ref, intr)
        ev = Events(pos[:, 0], pos[:, 1], w.events.t, w.events.p)
        wd = EventWindow(ev, w.t_start, w.t_end, w.t_ref, derotated=w.derotated)
        phi = estimate_direction(wd, grid, params, intr,
                                 phi_samples=phi_samples,
                                 min_events=min_events)
        m, ll = estimate_magnitude(wd, phi, None, grid, params, intr,
                                   min_events=min_events)
        cache[wz] = (ll, phi, m)
        return cache[wz]

    wz_grid = np.linspace(-wz_max, wz_max, wz_samples)
    scores = np.array([solve_2dof(float(wz))[0] for wz in wz_grid])
    best = int(np.argmax(scores))
    lo = wz_grid[max(best - 1, 0)]
    hi = wz_grid[min(best + 1, wz_samples - 1)]
    wz_hat, ll_ref, _ = _golden_max(lambda z: solve_2dof(float(z))[0],
                                    float(lo), float(hi),
                                    tol=2.0 * wz_max / 5000.0, max_evals=12)
    if scores[best] > ll_ref:
        wz_hat = float(wz_grid[best])
    _, phi, m = solve_2dof(float(wz_hat))
    two = AngularVelocity2(m, phi)
    return AngularVelocity3(two.wx, two.wy, float(wz_hat))
