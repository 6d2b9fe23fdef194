"""Rectangular state-space grids and dense value functions.

Grids are node-centered: values live on the nodes, spacing is
(upper-lower)/(counts-1) for ordinary dimensions and (upper-lower)/counts for
periodic ones (the upper edge wraps onto the lower node). Everything downstream
(finite differences, interpolation, the DP solvers) assumes this convention.
"""

from __future__ import annotations

import dataclasses
import itertools
import time
from dataclasses import dataclass

import numpy as np


class OutOfBoundsError(ValueError):
    """Query state outside the grid. Carries the nearest in-bounds point."""

    def __init__(self, state, clamped):
        self.state = np.asarray(state, dtype=float)
        self.clamped = np.asarray(clamped, dtype=float)
        super().__init__(
            f"state {self.state.tolist()} outside grid bounds "
            f"(nearest in-bounds point {self.clamped.tolist()})"
        )


@dataclass(frozen=True)
class Grid:
    """Node-centered rectangular grid, optionally periodic per dimension."""

    lower: tuple
    upper: tuple
    counts: tuple
    periodic: tuple = None

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        counts = tuple(int(c) for c in self.counts)
        periodic = self.periodic
        if periodic is None:
            periodic = (False,) * len(counts)
        periodic = tuple(bool(p) for p in periodic)
        if not (len(lower) == len(upper) == len(counts) == len(periodic)):
            raise ValueError("grid field lengths disagree")
        for lo, hi in zip(lower, upper):
            if not lo < hi:
                raise ValueError(f"require lower < upper, got [{lo}, {hi}]")
        for c in counts:
            if c < 3:
                raise ValueError("need at least 3 nodes per dimension")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "periodic", periodic)

    @property
    def ndim(self):
        return len(self.counts)

    @property
    def num_nodes(self):
        return int(np.prod(self.counts))

    @property
    def spacing(self):
        return tuple(
            (hi - lo) / (c if p else c - 1)
            for lo, hi, c, p in zip(self.lower, self.upper, self.counts, self.periodic)
        )

    def coordinate_vectors(self):
        return [
            lo + dx * np.arange(c)
            for lo, dx, c in zip(self.lower, self.spacing, self.counts)
        ]

    def states(self):
        """All node coordinates, shape counts + (ndim,)."""
        mesh = np.meshgrid(*self.coordinate_vectors(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def index_to_state(self, idx):
        idx = tuple(int(i) for i in np.atleast_1d(idx))
        if len(idx) != self.ndim:
            raise IndexError(f"expected {self.ndim}-dim index, got {idx}")
        for i, c in zip(idx, self.counts):
            if not 0 <= i < c:
                raise IndexError(f"index {idx} outside counts {self.counts}")
        return np.array(
            [lo + i * dx for lo, dx, i in zip(self.lower, self.spacing, idx)]
        )

    def state_to_cell(self, x):
        """Nearest-node multi-index; inverse of index_to_state on exact nodes."""
        x = self.wrap(np.asarray(x, dtype=float))
        idx = []
        for xi, lo, dx, c, p in zip(
            x, self.lower, self.spacing, self.counts, self.periodic
        ):
            i = int(round((xi - lo) / dx))
            idx.append(i % c if p else min(max(i, 0), c - 1))
        return tuple(idx)

    def wrap(self, x):
        """Wrap periodic coordinates into [lower, lower + extent)."""
        x = np.array(x, dtype=float)
        for i, p in enumerate(self.periodic):
            if p:
                extent = self.upper[i] - self.lower[i]
                x[..., i] = self.lower[i] + np.mod(x[..., i] - self.lower[i], extent)
        return x

    def contains(self, x):
        x = self.wrap(np.asarray(x, dtype=float))
        tol = 1e-9
        for xi, lo, hi, p in zip(x, self.lower, self.upper, self.periodic):
            if p:
                continue
            if xi < lo - tol or xi > hi + tol:
                return False
        return True

    def clamp(self, x):
        x = self.wrap(np.asarray(x, dtype=float))
        out = x.copy()
        for i, p in enumerate(self.periodic):
            if not p:
                out[i] = min(max(out[i], self.lower[i]), self.upper[i])
        return out

    def boundary_distance(self, x):
        """Signed distance to the non-periodic domain boundary (positive inside)."""
        x = np.asarray(x, dtype=float)
        dists = [
            min(xi - lo, hi - xi)
            for xi, lo, hi, p in zip(x, self.lower, self.upper, self.periodic)
            if not p
        ]
        return min(dists) if dists else np.inf


@dataclass(frozen=True)
class ValueField:
    """Scalar value function sampled on a grid. Immutable snapshot."""

    grid: Grid
    values: np.ndarray
    version: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.counts:
            raise ValueError(
                f"values shape {values.shape} does not match grid counts {self.grid.counts}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("value field contains non-finite entries")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def publish(self, values=None):
        """New snapshot with a bumped version."""
        return ValueField(
            grid=self.grid,
            values=self.values if values is None else values,
            version=self.version + 1,
            timestamp=time.time(),
        )

    def with_values(self, values):
        return dataclasses.replace(self, values=values)


@dataclass(frozen=True)
class GradientField:
    """Per-dimension one-sided and central differences of a ValueField."""

    grid: Grid
    left: tuple
    right: tuple

    @property
    def central(self):
        return tuple(0.5 * (l + r) for l, r in zip(self.left, self.right))

    def central_stack(self):
        return np.stack(self.central, axis=-1)


def _shift(values, axis, offset, periodic):
    """values shifted so entry i holds values[i+offset]; edges replicate inward
    for non-periodic dims (one-sided stencils, no extrapolation)."""
    if periodic:
        return np.roll(values, -offset, axis=axis)
    out = np.empty_like(values)
    n = values.shape[axis]

    def sl(a, b):
        idx = [slice(None)] * values.ndim
        idx[axis] = slice(a, b)
        return tuple(idx)

    if offset > 0:
        out[sl(0, n - offset)] = values[sl(offset, n)]
        out[sl(n - offset, n)] = values[sl(n - 1, n)]
    elif offset < 0:
        out[sl(-offset, n)] = values[sl(0, n + offset)]
        out[sl(0, -offset)] = values[sl(0, 1)]
    else:
        out[...] = values
    return out


def finite_difference(field: ValueField, order: int = 1,
                      boundary: str = "copy") -> GradientField:
    """Upwind one-sided differences per dimension.

    order=1 is the plain first-order quotient; order=2 adds the ENO second-order
    correction (smaller-magnitude second difference). At non-periodic boundaries
    the edge-facing quotient does not exist; boundary="copy" reuses the
    interior-facing quotient (best slope estimate, used for interpolation) and
    boundary="zero" uses a replicated ghost value so the missing quotient is 0
    (Neumann edge, used by the DP solver so outflow edges stay put instead of
    draining the domain).
    """
    if order not in (1, 2):
        raise ValueError("finite difference order must be 1 or 2")
    if boundary not in ("copy", "zero"):
        raise ValueError("boundary must be 'copy' or 'zero'")
    grid = field.grid
    v = field.values
    lefts, rights = [], []
    for axis in range(grid.ndim):
        dx = grid.spacing[axis]
        per = grid.periodic[axis]
        vp = _shift(v, axis, +1, per)
        vm = _shift(v, axis, -1, per)
        left = (v - vm) / dx
        right = (vp - v) / dx
        if not per:
            first = [slice(None)] * grid.ndim
            first[axis] = slice(0, 1)
            last = [slice(None)] * grid.ndim
            last[axis] = slice(-1, None)
        if order == 2:
            d2 = (vp - 2.0 * v + vm) / (dx * dx)
            d2m = _shift(d2, axis, -1, per)
            d2p = _shift(d2, axis, +1, per)
            cm = np.where(np.abs(d2m) <= np.abs(d2), d2m, d2)
            cp = np.where(np.abs(d2) <= np.abs(d2p), d2, d2p)
            left = left + 0.5 * dx * cm
            right = right - 0.5 * dx * cp
        if not per:
            if boundary == "copy":
                left[tuple(first)] = right[tuple(first)]
                right[tuple(last)] = left[tuple(last)]
            else:
                left[tuple(first)] = 0.0
                right[tuple(last)] = 0.0
        lefts.append(left)
        rights.append(right)
    return GradientField(grid=grid, left=tuple(lefts), right=tuple(rights))


def _cell_and_weights(grid: Grid, x):
    """Lower-corner cell index and per-dim fractional weights for x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.ndim,):
        raise ValueError(f"expected state of dim {grid.ndim}")
    xw = grid.wrap(x)
    tol = 1e-9
    base, frac = [], []
    for xi, lo, hi, dx, c, p in zip(
        xw, grid.lower, grid.upper, grid.spacing, grid.counts, grid.periodic
    ):
        t = (xi - lo) / dx
        # snap to the node when within float noise so node queries are exact
        if abs(t - round(t)) < 1e-9:
            t = float(round(t))
        if p:
            i = int(np.floor(t)) % c
            f = t - np.floor(t)
        else:
            if xi < lo - tol or xi > hi + tol:
                raise OutOfBoundsError(x, grid.clamp(x))
            i = int(np.floor(t))
            i = min(max(i, 0), c - 2)
            f = min(max(t - i, 0.0), 1.0)
        base.append(i)
        frac.append(f)
    return base, frac


def interpolate(field: ValueField, x, gradients: GradientField = None):
    """Multilinear value and gradient at an off-grid state.

    The gradient is the multilinear interpolation of the precomputed central
    differences at the cell corners (not the derivative of the interpolant).
    """
    grid = field.grid
    base, frac = _cell_and_weights(grid, x)
    if gradients is None:
        gradients = finite_difference(field)
    central = gradients.central
    value = 0.0
    grad = np.zeros(grid.ndim)
    for corner in itertools.product((0, 1), repeat=grid.ndim):
        w = 1.0
        idx = []
        for d, c in enumerate(corner):
            w *= frac[d] if c else (1.0 - frac[d])
            i = base[d] + c
            if grid.periodic[d]:
                i %= grid.counts[d]
            idx.append(i)
        idx = tuple(idx)
        value += w * field.values[idx]
        for d in range(grid.ndim):
            grad[d] += w * central[d][idx]
    return value, grad


def save_field(field: ValueField, path):
    """Serialize grid + values to a self-describing .npz (bit-exact round trip)."""
    np.savez(
        path,
        lower=np.asarray(field.grid.lower, dtype=float),
        upper=np.asarray(field.grid.upper, dtype=float),
        counts=np.asarray(field.grid.counts, dtype=np.int64),
        periodic=np.asarray(field.grid.periodic, dtype=bool),
        values=field.values,
        version=np.int64(field.version),
        timestamp=np.float64(field.timestamp),
    )


def load_field(path) -> ValueField:
    with np.load(path) as data:
        grid = Grid(
            lower=tuple(data["lower"]),
            upper=tuple(data["upper"]),
            counts=tuple(data["counts"]),
            periodic=tuple(data["periodic"]),
        )
        return ValueField(
            grid=grid,
            values=data["values"],
            version=int(data["version"]),
            timestamp=float(data["timestamp"]),
        )
