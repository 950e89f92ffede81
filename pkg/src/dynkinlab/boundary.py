"""Free-boundary extraction and monotonicity structure checks.

The lower free boundary separates the contact set {V = lower} from the
continuation band; with sup orientation it is the largest coordinate of
the contact set along the scan axis (sup of the empty set is -inf), with
inf orientation the smallest (inf of the empty set is +inf).  Contact
that runs into the truncated domain edge on the boundary side cannot be
localized and is flagged as truncation-censored.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .grids import _fmt
from .model import ModelSpec
from .pdvi import SolutionBundle, sample_problem


@dataclass
class FreeBoundary:
    side: str               # lower | upper
    axis: int
    orientation: str        # sup | inf
    times: np.ndarray
    cross_coords: np.ndarray | None    # None in one dimension
    values: np.ndarray      # (M+1,) or (M+1, N_cross); +-inf for empty contact
    censored: np.ndarray    # same shape, bool
    tol: float

    def to_csv(self, path) -> None:
        buf = io.StringIO()
        if self.cross_coords is None:
            buf.write("t,S,censored\n")
            for t, s, c in zip(self.times, self.values, self.censored):
                buf.write(f"{_fmt(t)},{_fmt(s)},{int(c)}\n")
        else:
            buf.write("t,x_cross,S,censored\n")
            for m, t in enumerate(self.times):
                for j, xc in enumerate(self.cross_coords):
                    buf.write(
                        f"{_fmt(t)},{_fmt(xc)},{_fmt(self.values[m, j])},"
                        f"{int(self.censored[m, j])}\n"
                    )
        with open(path, "w") as fh:
            fh.write(buf.getvalue())


def extract(
    bundle: SolutionBundle,
    model: ModelSpec,
    side: str = "lower",
    axis: int = 0,
    orientation: str = "sup",
    tol: float | None = None,
) -> FreeBoundary:
    """Scan each grid line along ``axis`` for the edge of the contact set.

    Contact means |V - obstacle| <= tol (tol defaults to the bundle's
    contact blur).  The scan is pure and idempotent: identical bundles
    give bit-identical boundaries.
    """
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    if orientation not in ("sup", "inf"):
        raise ValueError("orientation must be 'sup' or 'inf'")
    grid = bundle.grid
    if axis >= grid.d_star:
        raise ValueError("axis out of range")
    if tol is None:
        tol = bundle.eps_contact
    prob = sample_problem(model, grid)
    obstacle = prob.lower if side == "lower" else prob.upper
    gap = np.abs(bundle.V.values - obstacle)
    gap = np.where(np.isfinite(obstacle), gap, np.inf)
    contact = gap <= tol

    if grid.d_star == 2 and axis == 0:
        contact = np.swapaxes(contact, 1, 2)  # scan axis last
    coords = grid.axes()[axis]
    n_axis = grid.nodes[axis]
    flat = contact.reshape(grid.steps + 1, -1, n_axis)

    empty_val = -np.inf if orientation == "sup" else np.inf
    vals = np.full(flat.shape[:2], empty_val)
    cens = np.zeros(flat.shape[:2], dtype=bool)
    for m in range(flat.shape[0]):
        for j in range(flat.shape[1]):
            line = flat[m, j]
            hit = np.nonzero(line)[0]
            if hit.size == 0:
                continue
            if orientation == "sup":
                k = hit[-1]
                cens[m, j] = k == n_axis - 1
            else:
                k = hit[0]
                cens[m, j] = k == 0
            vals[m, j] = coords[k]

    if grid.d_star == 1:
        return FreeBoundary(side, axis, orientation, grid.times, None,
                            vals[:, 0], cens[:, 0], tol)
    cross_axis = 1 - axis
    return FreeBoundary(side, axis, orientation, grid.times,
                        grid.axes()[cross_axis], vals, cens, tol)


@dataclass
class MonotonicityReport:
    axis: int
    direction: str
    worst_violation: float
    worst_location: tuple | None
    ok: bool
    boundary_direction: str | None = None
    boundary_worst: float | None = None
    boundary_ok: bool | None = None

    def summary(self) -> dict:
        return {
            "axis": self.axis,
            "direction": self.direction,
            "worst_violation": self.worst_violation,
            "ok": self.ok,
            "boundary_direction": self.boundary_direction,
            "boundary_worst": self.boundary_worst,
            "boundary_ok": self.boundary_ok,
        }


def monotonicity_check(
    bundle: SolutionBundle,
    model: ModelSpec,
    axis: int = 0,
    direction: str = "increasing",
    cross_axis: int | None = None,
    side: str = "lower",
    tol: float | None = None,
    orientation: str = "sup",
) -> MonotonicityReport:
    """Check the declared monotone structure of V - obstacle on the grid.

    (a) the gap V - obstacle must be monotone along ``axis`` at every time
    slice up to tolerance 10*h^2 (the fixture declares the direction);
    (b) with a cross axis given, the extracted boundary must be monotone in
    it within one grid cell of slack.
    """
    if direction not in ("increasing", "decreasing"):
        raise ValueError("direction must be 'increasing' or 'decreasing'")
    grid = bundle.grid
    h = grid.spacing[axis]
    if tol is None:
        tol = 10.0 * h * h
    prob = sample_problem(model, grid)
    obstacle = prob.lower if side == "lower" else prob.upper
    gap = bundle.V.values - obstacle

    diffs = np.diff(gap, axis=axis + 1)
    if direction == "decreasing":
        diffs = -diffs
    worst = float(np.min(diffs))
    loc = None
    if worst < 0:
        loc = tuple(int(v) for v in np.unravel_index(int(np.argmin(diffs)), diffs.shape))
    ok = worst >= -tol

    b_dir = b_worst = b_ok = None
    if cross_axis is not None:
        if grid.d_star != 2:
            raise ValueError("cross-axis check needs a 2-d bundle")
        fb = extract(bundle, model, side=side, axis=axis, orientation=orientation)
        cell = grid.spacing[cross_axis]
        vals = fb.values
        finite = np.isfinite(vals)
        dd = []
        for m in range(vals.shape[0]):
            row = vals[m]
            sel = finite[m]
            if sel.sum() < 2:
                continue
            dd.append(np.diff(row[sel]))
        if dd:
            dd = np.concatenate(dd)
            inc_worst = float(np.min(dd))
            dec_worst = float(np.min(-dd))
            if inc_worst >= dec_worst:
                b_dir, b_worst = "nondecreasing", inc_worst
            else:
                b_dir, b_worst = "nonincreasing", dec_worst
            b_ok = b_worst >= -cell * (1 + 1e-9)
        else:
            b_dir, b_worst, b_ok = "undetermined", 0.0, True

    return MonotonicityReport(
        axis=axis,
        direction=direction,
        worst_violation=worst,
        worst_location=loc,
        ok=ok,
        boundary_direction=b_dir,
        boundary_worst=b_worst,
        boundary_ok=b_ok,
    )
