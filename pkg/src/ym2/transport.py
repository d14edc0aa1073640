"""Stochastic parallel transport along staircase curves.

Conventions.  A horizontal curve ``x -> (x, y(x))`` with grid-aligned,
piecewise-constant height picks up one martingale increment per (fine)
column, ``dM = -fhat(slab)`` where the slab is the column strip between the
curve and the x-axis.  Transport solves ``d// + dM // = 0`` (Stratonovich)
by the group-preserving exponential scheme ``//_{j+1} = exp(-dM_j) //_j``,
the exact flow when the driving martingale is interpolated linearly in x.
Vertical moves transport trivially; backward horizontal moves contribute the
inverse of the forward product, reusing the same increments.

The perturbation machinery lives here too: the boundary gauge ``g for eta``
(an x-ODE solved exactly per column, since the coefficient is piecewise
constant), the curve-conditioned corrector ``k for eta``, the edge response
vector ``zeta``, and the pathwise identity tying the shifted-field transport
to ``g^{-1} // k g``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .groups import (GroupContext, adjoint_group, coords_to_algebra, exp_map,
                     group_inverse)
from .noise import GeometryError, GridWindow, NoiseField

__all__ = [
    "PerturbationOneForm",
    "HorizontalCurve",
    "TamePath",
    "martingale_increments",
    "transport_horizontal",
    "transport_prefixes",
    "transport_tame",
    "g_eta",
    "g_eta_boundary_values",
    "gauge_rotations_for_columns",
    "adjoint_coordinate_action",
    "k_eta",
    "zeta_edge",
    "perturbed_transport_identity_residual",
]


class PerturbationOneForm:
    """Piecewise-constant algebra-valued ``eta_y`` on grid cells.

    The associated function ``eta(x, y)`` integrates ``eta_y`` upward from
    below the window (cells outside the window are zero), is constant in x
    across each column, and is evaluated at grid nodes exactly.
    """

    def __init__(self, ctx: GroupContext, window: GridWindow, coords: np.ndarray):
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (window.ny, window.nx, ctx.algebra_dim):
            raise GeometryError("eta_y coordinate array does not match the grid")
        self.ctx = ctx
        self.window = window
        self.coords = coords
        # cumulative in y: eta(x, row boundary r) = _cum[r, col] * h_y
        self._cum = np.concatenate(
            [np.zeros((1, window.nx, ctx.algebra_dim)),
             np.cumsum(coords, axis=0)], axis=0) * window.h_y

    @classmethod
    def zero(cls, ctx: GroupContext, window: GridWindow) -> "PerturbationOneForm":
        return cls(ctx, window, np.zeros((window.ny, window.nx, ctx.algebra_dim)))

    @classmethod
    def insertion_pair(cls, ctx: GroupContext, window: GridWindow,
                       x0: float, x1: float, height: float,
                       xi_coords: np.ndarray) -> "PerturbationOneForm":
        """The canonical perturbation: +xi on the reflected box, -xi on the box.

        The box is [x0, x1] x [0, height] in the upper half plane; its mirror
        sits in the lower half plane.
        """
        c0, c1 = window.col_of(x0), window.col_of(x1)
        r1 = window.row_of(height)
        rz = window.row_zero
        r_neg = window.row_of(-height)
        coords = np.zeros((window.ny, window.nx, ctx.algebra_dim))
        xi = np.asarray(xi_coords, dtype=float)
        coords[rz:r1, c0:c1, :] = -xi
        coords[r_neg:rz, c0:c1, :] = +xi
        return cls(ctx, window, coords)

    def is_zero(self) -> bool:
        return not np.any(self.coords)

    def cell_integrals(self) -> np.ndarray:
        return self.coords * self.window.cell_area

    def norm_sq(self) -> float:
        return float(np.sum(self.coords**2) * self.window.cell_area)

    def pairing_coords(self, field_cells: np.ndarray) -> np.ndarray:
        """<f, eta_y> per replica, from raw field cell coordinates."""
        return np.einsum("...yxk,yxk->...", field_cells, self.coords)

    def at_node(self, col: int, row: int) -> np.ndarray:
        """eta at (any x inside column ``col``, the row-``row`` grid line)."""
        return self._cum[row, col]

    def on_axis(self, col: int) -> np.ndarray:
        return self._cum[self.window.row_zero, col]

    def axis_is_zero(self) -> bool:
        return not np.any(self._cum[self.window.row_zero])


# -- boundary gauge for a perturbation ----------------------------------------

def g_eta_boundary_values(eta: PerturbationOneForm) -> np.ndarray:
    """Solution of ``g' + eta(x,0) g = 0, g(0) = I`` at all column boundaries.

    The coefficient is constant on each column, so stepping by the column
    matrix exponential is the exact flow (both directions from x = 0).
    Returns an array of shape (nx + 1, D, D).
    """
    w = eta.window
    ctx = eta.ctx
    out = np.empty((w.nx + 1, ctx.dim, ctx.dim), dtype=complex)
    cz = w.col_zero
    out[cz] = np.eye(ctx.dim)
    for c in range(cz, w.nx):
        step = exp_map(-w.h_x * coords_to_algebra(ctx, eta.on_axis(c)))
        out[c + 1] = step @ out[c]
    for c in range(cz - 1, -1, -1):
        step = exp_map(+w.h_x * coords_to_algebra(ctx, eta.on_axis(c)))
        out[c] = step @ out[c + 1]
    return out


def g_eta(eta: PerturbationOneForm, x: float) -> np.ndarray:
    """Boundary gauge at a grid-aligned abscissa."""
    return g_eta_boundary_values(eta)[eta.window.col_of(x)]


def gauge_rotations_for_columns(ctx: GroupContext,
                                eta: PerturbationOneForm) -> np.ndarray:
    """Coordinate action of Ad_{g(x_left)^{-1}} per column: (nx, dk, dk)."""
    g = g_eta_boundary_values(eta)[:-1]  # left edges
    return adjoint_coordinate_action(ctx, group_inverse(g))


def adjoint_coordinate_action(ctx: GroupContext, g: np.ndarray) -> np.ndarray:
    """Orthogonal matrix of Ad_g on basis coordinates: R[a,b] = <Ad_g xi_b, xi_a>."""
    rotated = np.einsum("...ij,kjl,...lm->...kim", g, ctx.basis,
                        group_inverse(g))
    return -np.einsum("...kij,aji->...ak", rotated, ctx.basis).real


# -- curves and tame paths -----------------------------------------------------

@dataclass(frozen=True)
class HorizontalCurve:
    """Graph curve x -> (x, y(x)) with one grid-aligned height per column."""

    x0: float
    x1: float
    heights: tuple[float, ...]

    def __post_init__(self):
        if not self.x1 > self.x0:
            raise GeometryError("horizontal curve needs x1 > x0")
        if len(self.heights) < 1:
            raise GeometryError("horizontal curve needs at least one column")

    @classmethod
    def const(cls, window: GridWindow, x0: float, x1: float,
              y: float) -> "HorizontalCurve":
        c0, c1 = window.col_of(x0), window.col_of(x1)
        window.row_of(y)
        return cls(x0, x1, (y,) * (c1 - c0))

    def columns(self, window: GridWindow) -> tuple[int, int]:
        c0, c1 = window.col_of(self.x0), window.col_of(self.x1)
        if c1 - c0 != len(self.heights):
            raise GeometryError("height profile does not cover the column span")
        return c0, c1

    def runs(self, window: GridWindow):
        """Yield (col_start, col_end, y) for maximal constant-height runs."""
        c0, _ = self.columns(window)
        i = 0
        n = len(self.heights)
        while i < n:
            j = i
            while j < n and self.heights[j] == self.heights[i]:
                j += 1
            yield c0 + i, c0 + j, self.heights[i]
            i = j


@dataclass(frozen=True)
class HSeg:
    """Horizontal move at constant height; backward when x1 < x0."""
    x0: float
    x1: float
    y: float

    @property
    def forward(self) -> bool:
        return self.x1 > self.x0

    def curve(self, window: GridWindow) -> HorizontalCurve:
        a, b = (self.x0, self.x1) if self.forward else (self.x1, self.x0)
        return HorizontalCurve.const(window, a, b, self.y)

    @property
    def start(self):
        return (self.x0, self.y)

    @property
    def end(self):
        return (self.x1, self.y)


@dataclass(frozen=True)
class VSeg:
    """Vertical move; transports trivially."""
    x: float
    y0: float
    y1: float

    @property
    def start(self):
        return (self.x, self.y0)

    @property
    def end(self):
        return (self.x, self.y1)


class TamePath:
    """Chain of horizontal and vertical segments with matching endpoints."""

    def __init__(self, segments):
        segments = list(segments)
        if not segments:
            raise GeometryError("a tame path needs at least one segment")
        for a, b in zip(segments, segments[1:]):
            if a.end != b.start:
                raise GeometryError(
                    f"segment chain broken: {a.end} != {b.start}")
        self.segments = segments

    @classmethod
    def from_points(cls, points) -> "TamePath":
        segs = []
        for (x0, y0), (x1, y1) in zip(points, points[1:]):
            if x0 == x1 and y0 == y1:
                continue
            if y0 == y1:
                segs.append(HSeg(x0, x1, y0))
            elif x0 == x1:
                segs.append(VSeg(x0, y0, y1))
            else:
                raise GeometryError("tame paths move along one axis at a time")
        return cls(segs)

    @property
    def start(self):
        return self.segments[0].start

    @property
    def end(self):
        return self.segments[-1].end

    def reversed_(self) -> "TamePath":
        segs = []
        for seg in reversed(self.segments):
            if isinstance(seg, HSeg):
                segs.append(HSeg(seg.x1, seg.x0, seg.y))
            else:
                segs.append(VSeg(seg.x, seg.y1, seg.y0))
        return TamePath(segs)

    def concat(self, other: "TamePath") -> "TamePath":
        return TamePath(self.segments + other.segments)

    def grid_segments(self, window: GridWindow):
        """Unit grid segments of the image, as canonical node pairs."""
        out = set()
        for seg in self.segments:
            if isinstance(seg, HSeg):
                c0, c1 = sorted((window.col_of(seg.x0), window.col_of(seg.x1)))
                r = window.row_of(seg.y)
                out.update((("h", c, r)) for c in range(c0, c1))
            else:
                c = window.col_of(seg.x)
                r0, r1 = sorted((window.row_of(seg.y0), window.row_of(seg.y1)))
                out.update((("v", c, r)) for r in range(r0, r1))
        return out


# -- transport ----------------------------------------------------------------

def martingale_increments(field: NoiseField, curve: HorizontalCurve,
                          substeps: int = 1) -> np.ndarray:
    """Per fine-column increments ``dM = -fhat(slab)``: (*batch, nsteps, dk)."""
    blocks = []
    for c0, c1, y in curve.runs(field.window):
        if field.window.row_of(y) == field.window.row_zero:
            n = (c1 - c0) * substeps
            blocks.append(np.zeros((*field.batch_shape, n, field.ctx.algebra_dim)))
        else:
            blocks.append(-field.fhat_slab(c0, c1, y, substeps))
    return np.concatenate(blocks, axis=-2)


def _fold_exponentials(ctx: GroupContext, increments: np.ndarray,
                       keep_prefixes: bool) -> np.ndarray:
    """Left-fold exp(-dM_j) over the step axis of (*batch, nsteps, dk)."""
    mats = exp_map(coords_to_algebra(ctx, -increments))
    batch = increments.shape[:-2]
    nsteps = increments.shape[-2]
    if keep_prefixes:
        out = np.empty((*batch, nsteps + 1, ctx.dim, ctx.dim), dtype=complex)
        out[..., 0, :, :] = np.eye(ctx.dim)
        for j in range(nsteps):
            out[..., j + 1, :, :] = mats[..., j, :, :] @ out[..., j, :, :]
        return out
    acc = ctx.identity(*batch)
    for j in range(nsteps):
        acc = mats[..., j, :, :] @ acc
    return acc


def transport_horizontal(field: NoiseField, curve: HorizontalCurve,
                         substeps: int = 1) -> np.ndarray:
    """Holonomy of the forward horizontal curve: (*batch, D, D)."""
    inc = martingale_increments(field, curve, substeps)
    return _fold_exponentials(field.ctx, inc, keep_prefixes=False)


def transport_prefixes(field: NoiseField, curve: HorizontalCurve,
                       substeps: int = 1) -> np.ndarray:
    """All partial holonomies along the curve: (*batch, nsteps+1, D, D)."""
    inc = martingale_increments(field, curve, substeps)
    return _fold_exponentials(field.ctx, inc, keep_prefixes=True)


def transport_tame(field: NoiseField, path: TamePath,
                   substeps: int = 1) -> np.ndarray:
    """Product over segments; backward horizontals contribute exact inverses."""
    acc = field.ctx.identity(*field.batch_shape)
    for seg in path.segments:
        if isinstance(seg, VSeg):
            continue
        fwd = transport_horizontal(field, seg.curve(field.window), substeps)
        acc = (fwd if seg.forward else group_inverse(fwd)) @ acc
    return acc


# -- perturbation machinery along a curve --------------------------------------

def k_eta(field: NoiseField, curve: HorizontalCurve, eta: PerturbationOneForm,
          substeps: int = 1) -> np.ndarray:
    """Corrector ODE along the curve, driven by the transport prefixes.

    Solves ``k' + Ad_{//_x^{-1}} eta(x, y(x)) k = 0`` with the coefficient
    frozen per fine column (exact for the grid model's piecewise data).
    """
    w = field.window
    pref = transport_prefixes(field, curve, substeps)
    dx = w.h_x / substeps
    k = field.ctx.identity(*field.batch_shape)
    j = 0
    for c0, c1, y in curve.runs(w):
        row = w.row_of(y)
        for c in range(c0, c1):
            eta_val = coords_to_algebra(field.ctx, eta.at_node(c, row))
            if np.any(eta_val):
                for _ in range(substeps):
                    p = pref[..., j, :, :]
                    coeff = adjoint_group(group_inverse(p), eta_val)
                    k = exp_map(-dx * coeff) @ k
                    j += 1
            else:
                j += substeps
    return k


def zeta_edge(field: NoiseField, path: TamePath, eta: PerturbationOneForm,
              substeps: int = 1) -> np.ndarray:
    """Edge response ``integral of Ad_{//_x} eta(x, y(x)) dx`` along the path.

    Horizontal segments contribute with the sign of their direction;
    vertical segments contribute nothing.  The transport prefix is the
    partial holonomy of the path itself, frozen per fine column.
    """
    ctx = field.ctx
    w = field.window
    dx = w.h_x / substeps
    acc = np.zeros((*field.batch_shape, ctx.dim, ctx.dim), dtype=complex)
    prefix = ctx.identity(*field.batch_shape)
    for seg in path.segments:
        if isinstance(seg, VSeg):
            continue
        curve = seg.curve(w)
        inc = martingale_increments(field, curve, substeps)
        mats = exp_map(coords_to_algebra(ctx, -inc))
        row = w.row_of(seg.y)
        c0, c1 = curve.columns(w)
        sign = 1.0 if seg.forward else -1.0
        fine_ids = range(inc.shape[-2]) if seg.forward else \
            range(inc.shape[-2] - 1, -1, -1)
        for j in fine_ids:
            col = c0 + j // substeps
            eta_val = coords_to_algebra(ctx, eta.at_node(col, row))
            if np.any(eta_val):
                acc += sign * dx * adjoint_group(prefix, eta_val)
            step = mats[..., j, :, :]
            prefix = (step if seg.forward else group_inverse(step)) @ prefix
    return acc


def perturbed_transport_identity_residual(field: NoiseField,
                                          curve: HorizontalCurve,
                                          eta: PerturbationOneForm,
                                          substeps: int = 1) -> float:
    """Max-abs gap between the shifted-field transport and g^{-1} // k g."""
    from .noise import shifted_field_view

    lhs = transport_horizontal(shifted_field_view(field, eta), curve, substeps)
    bvals = g_eta_boundary_values(eta)
    w = field.window
    g_a = bvals[w.col_of(curve.x0)]
    g_b = bvals[w.col_of(curve.x1)]
    base = transport_horizontal(field, curve, substeps)
    k = k_eta(field, curve, eta, substeps)
    rhs = group_inverse(g_b) @ base @ k @ g_a
    return float(np.max(np.abs(lhs - rhs)))
