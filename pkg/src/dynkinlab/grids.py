"""Space-time grids, sampled fields, finite-difference operators, and field I/O.

Grids are uniform tensor products in one or two space dimensions with a
uniform backward-time partition of [0, T].  A ``Field`` stores one value
(or a small vector) per (time slice, space node) and is the discrete
carrier for the value surface V, the martingale integrand Z, the
reflection densities k+/k-, and the obstacle data.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np


class ExtrapolationError(ValueError):
    """Raised when a field is queried outside its grid extent."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid on a box, with M uniform time steps on [0, T].

    extent:  per-axis (lo, hi) pairs, one per space dimension (d_star <= 2)
    nodes:   per-axis node counts N_i >= 3 (spacing h_i = (hi-lo)/(N_i-1))
    steps:   number of time steps M >= 1
    horizon: terminal time T > 0
    """

    extent: tuple[tuple[float, float], ...]
    nodes: tuple[int, ...]
    steps: int
    horizon: float

    def __post_init__(self):
        extent = tuple((float(a), float(b)) for a, b in self.extent)
        nodes = tuple(int(n) for n in self.nodes)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "nodes", nodes)
        if not 1 <= len(extent) <= 2:
            raise ValueError("only 1- or 2-dimensional grids are supported")
        if len(nodes) != len(extent):
            raise ValueError("extent/nodes dimension mismatch")
        for (lo, hi), n in zip(extent, nodes):
            if not hi > lo:
                raise ValueError(f"empty extent ({lo}, {hi})")
            if n < 3:
                raise ValueError("need at least 3 nodes per axis")
        if self.steps < 1:
            raise ValueError("need at least one time step")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def d_star(self) -> int:
        return len(self.extent)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.extent, self.nodes))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nodes

    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            np.linspace(lo, hi, n) for (lo, hi), n in zip(self.extent, self.nodes)
        )

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays (sparse meshgrid, ij indexing)."""
        return tuple(np.meshgrid(*self.axes(), indexing="ij", sparse=True))

    def interior(self) -> tuple[slice, ...]:
        return tuple(slice(1, n - 1) for n in self.nodes)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.nodes, dtype=bool)
        for ax in range(self.d_star):
            idx = [slice(None)] * self.d_star
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = self.nodes[ax] - 1
            mask[tuple(idx)] = True
        return mask

    def contains(self, points: np.ndarray, slack: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ok = np.ones(pts.shape[0], dtype=bool)
        for ax, (lo, hi) in enumerate(self.extent):
            pad = slack * max(1.0, abs(hi - lo))
            ok &= (pts[:, ax] >= lo - pad) & (pts[:, ax] <= hi + pad)
        return ok


@dataclass
class Field:
    """Values sampled on a GridSpec: shape (M+1, *nodes) or (M+1, *nodes, arity)."""

    grid: GridSpec
    values: np.ndarray
    arity: int = 1

    def __post_init__(self):
        expected = (self.grid.steps + 1,) + self.grid.nodes
        if self.arity > 1:
            expected = expected + (self.arity,)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != expected:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {expected}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @classmethod
    def zeros(cls, grid: GridSpec, arity: int = 1) -> "Field":
        shape = (grid.steps + 1,) + grid.nodes
        if arity > 1:
            shape = shape + (arity,)
        return cls(grid, np.zeros(shape), arity)

    @classmethod
    def from_function(cls, grid: GridSpec, fn, b=None) -> "Field":
        """Sample fn(t, x, b) on every time slice (x is a coordinate-array tuple)."""
        mesh = grid.mesh()
        out = np.empty((grid.steps + 1,) + grid.nodes)
        for m, t in enumerate(grid.times):
            out[m] = np.broadcast_to(np.asarray(fn(t, mesh, b), dtype=float), grid.nodes)
        return cls(grid, out)

    def slice(self, m: int) -> np.ndarray:
        return self.values[m]

    def at(self, t: float, points) -> np.ndarray:
        """Interpolate the field: linear in t, multilinear in space.

        points has shape (n, d_star) (a single point may be given as a
        1-d array).  Raises ExtrapolationError for queries outside the
        grid extent or time range.
        """
        g = self.grid
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != g.d_star:
            raise ValueError("query dimension mismatch")
        if t < -1e-12 or t > g.horizon * (1 + 1e-12):
            raise ExtrapolationError(f"time {t} outside [0, {g.horizon}]")
        if not np.all(g.contains(pts)):
            bad = pts[~g.contains(pts)][0]
            raise ExtrapolationError(f"point {bad} outside grid extent {g.extent}")

        s = min(t / g.dt, g.steps)
        m0 = min(int(np.floor(s)), g.steps - 1)
        wt = s - m0

        lo = self._space_interp(self.values[m0], pts)
        if wt == 0.0:
            return lo
        hi = self._space_interp(self.values[m0 + 1], pts)
        return (1.0 - wt) * lo + wt * hi

    def _space_interp(self, slab: np.ndarray, pts: np.ndarray) -> np.ndarray:
        return space_interp(slab, self.grid, pts)

    # --- norms -----------------------------------------------------------

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def l2_norm(self) -> float:
        """Discrete L2 norm: sqrt( sum v^2 * prod(h) * dt )."""
        g = self.grid
        cell = g.dt * float(np.prod(g.spacing))
        return float(np.sqrt(np.sum(self.values**2) * cell))

    # --- I/O ---------------------------------------------------------------

    def to_csv(self, path) -> None:
        g = self.grid
        cols = ["t"] + [f"x{i + 1}" for i in range(g.d_star)]
        if self.arity == 1:
            cols.append("value")
        else:
            cols.extend(f"value{k + 1}" for k in range(self.arity))
        axes = g.axes()
        mesh = np.meshgrid(*axes, indexing="ij")
        coords = np.stack([m.ravel() for m in mesh], axis=1)
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for m, t in enumerate(g.times):
            slab = self.values[m].reshape(coords.shape[0], self.arity)
            for row, vals in zip(coords, slab):
                fields = [_fmt(t)] + [_fmt(v) for v in row] + [_fmt(v) for v in vals]
                buf.write(",".join(fields) + "\n")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())

    def to_npz(self, path) -> None:
        np.savez(
            path,
            extent=np.asarray(self.grid.extent, dtype=float),
            nodes=np.asarray(self.grid.nodes, dtype=np.int64),
            steps=np.int64(self.grid.steps),
            horizon=np.float64(self.grid.horizon),
            arity=np.int64(self.arity),
            values=self.values,
        )

    @classmethod
    def from_npz(cls, path) -> "Field":
        with np.load(path) as data:
            grid = GridSpec(
                extent=tuple(tuple(row) for row in data["extent"]),
                nodes=tuple(int(n) for n in data["nodes"]),
                steps=int(data["steps"]),
                horizon=float(data["horizon"]),
            )
            return cls(grid, data["values"].copy(), int(data["arity"]))


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def space_interp(slab: np.ndarray, grid: GridSpec, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of one space slice at points (n, d_star)."""
    idx = []
    wgt = []
    for ax in range(grid.d_star):
        lo, _ = grid.extent[ax]
        h = grid.spacing[ax]
        s = np.clip((pts[:, ax] - lo) / h, 0.0, grid.nodes[ax] - 1)
        i0 = np.minimum(s.astype(int), grid.nodes[ax] - 2)
        idx.append(i0)
        wgt.append(s - i0)
    if grid.d_star == 1:
        i0, w = idx[0], wgt[0]
        return (1 - w) * slab[i0] + w * slab[i0 + 1]
    i0, j0 = idx
    wi, wj = wgt
    return (
        (1 - wi) * (1 - wj) * slab[i0, j0]
        + (1 - wi) * wj * slab[i0, j0 + 1]
        + wi * (1 - wj) * slab[i0 + 1, j0]
        + wi * wj * slab[i0 + 1, j0 + 1]
    )


# --- finite-difference operators ------------------------------------------


def _component(comp, t, x, b, shape) -> np.ndarray:
    """Evaluate a coefficient component (number or callable) on the mesh."""
    if callable(comp):
        out = np.asarray(comp(t, x, b), dtype=float)
        return np.broadcast_to(out, shape).astype(float, copy=False)
    return np.full(shape, float(comp))


def apply_generator(coeffs, v: np.ndarray, t: float, grid: GridSpec, b=None) -> np.ndarray:
    """Second-order spatial generator  a^ij D_ij + b^i D_i + c  on one slice.

    Central differences throughout (9-point cross term in two dimensions).
    Boundary nodes are returned as zero; they are owned by the boundary
    condition, not by the stencil.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != grid.nodes:
        raise ValueError("slice shape does not match grid")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite values in slice")
    mesh = grid.mesh()
    out = np.zeros_like(v)
    inner = grid.interior()

    if grid.d_star == 1:
        h = grid.spacing[0]
        a = _component(coeffs.a[0][0], t, mesh, b, grid.nodes)
        bb = _component(coeffs.b[0], t, mesh, b, grid.nodes)
        c = _component(coeffs.c, t, mesh, b, grid.nodes)
        d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
        d1 = (v[2:] - v[:-2]) / (2 * h)
        out[1:-1] = a[1:-1] * d2 + bb[1:-1] * d1 + c[1:-1] * v[1:-1]
        return out

    h1, h2 = grid.spacing
    a11 = _component(coeffs.a[0][0], t, mesh, b, grid.nodes)
    a12 = _component(coeffs.a[0][1], t, mesh, b, grid.nodes)
    a22 = _component(coeffs.a[1][1], t, mesh, b, grid.nodes)
    b1 = _component(coeffs.b[0], t, mesh, b, grid.nodes)
    b2 = _component(coeffs.b[1], t, mesh, b, grid.nodes)
    c = _component(coeffs.c, t, mesh, b, grid.nodes)
    i = inner
    d11 = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / h1**2
    d22 = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / h2**2
    d12 = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * h1 * h2)
    d1 = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * h1)
    d2 = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * h2)
    out[i] = (
        a11[i] * d11
        + 2 * a12[i] * d12
        + a22[i] * d22
        + b1[i] * d1
        + b2[i] * d2
        + c[i] * v[i]
    )
    return out


def apply_noise_coupling(coeffs, z: np.ndarray, t: float, grid: GridSpec, b=None) -> np.ndarray:
    """First-order coupling  sum_k (sigma^ik D_i z^k + mu^k z^k)  on one slice.

    z carries the martingale components in its trailing axis: shape
    (*nodes, d2).  A bare (*nodes,) array is accepted when d2 == 1.
    """
    z = np.asarray(z, dtype=float)
    d2 = len(coeffs.mu)
    if d2 == 0:
        return np.zeros(grid.nodes)
    if z.shape == grid.nodes:
        if d2 != 1:
            raise ValueError("z arity does not match d2")
        z = z[..., None]
    if z.shape != grid.nodes + (d2,):
        raise ValueError("z arity does not match d2")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite values in z")
    mesh = grid.mesh()
    out = np.zeros(grid.nodes)
    for k in range(d2):
        mu = _component(coeffs.mu[k], t, mesh, b, grid.nodes)
        out += mu * z[..., k]
        for i in range(grid.d_star):
            sig = _component(coeffs.sigma[i][k], t, mesh, b, grid.nodes)
            h = grid.spacing[i]
            dzi = np.zeros(grid.nodes)
            sl_hi = [slice(1, -1)] * grid.d_star
            sl_p = list(sl_hi)
            sl_m = list(sl_hi)
            sl_p[i] = slice(2, None)
            sl_m[i] = slice(None, -2)
            dzi[tuple(sl_hi)] = (z[..., k][tuple(sl_p)] - z[..., k][tuple(sl_m)]) / (2 * h)
            out += sig * dzi
    bmask = grid.boundary_mask()
    out[bmask] = 0.0
    return out


def interpolate(fld: Field, t: float, x) -> float:
    """Point query of a scalar field (linear in time, multilinear in space)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(fld.at(t, x[None, :])[0])
