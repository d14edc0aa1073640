"""Grid realization of Lie-algebra-valued white noise on a plane window.

A :class:`NoiseField` holds one (or a stacked batch of) realization(s) of the
noise: every grid cell carries i.i.d. Gaussian basis coordinates of variance
``h_x * h_y``.  Region evaluations f(B) are exact sums of cell values for
grid-aligned B, and the sign-flipped field ``fhat`` negates cells strictly
below the x-axis (the grid keeps y = 0 on a cell boundary, so no cell
straddles the axis).

Cells can be split in the x direction into ``substeps`` sub-slices whose
values are Gaussian-bridge conditioned to sum exactly to the parent cell;
the split is a deterministic function of (seed, level) so replays agree
regardless of query order.
"""

from __future__ import annotations

from dataclasses import dataclass

import struct

import numpy as np

from .groups import GroupContext, coords_to_algebra, make_group

__all__ = [
    "GeometryError",
    "GridWindow",
    "GridRegion",
    "NoiseField",
    "ShiftedNoiseField",
    "sample_field",
    "f_region",
    "f_hat_region",
    "refine_column_strip",
    "shifted_field_view",
    "dump_field",
    "restore_field",
    "derive_rng",
]

DEFAULT_MAX_CELLS = 1 << 22
_ALIGN_TOL = 1e-9

# Stream tags for child RNGs; part of the on-disk/replay contract.
_TAG_CELLS = 0
_TAG_REFINE = 1


class GeometryError(ValueError):
    """Geometry is not representable on the grid or lies outside the window."""


def derive_rng(*path: int) -> np.random.Generator:
    """Counter-based generator keyed by an integer path.

    ``derive_rng(seed, tag, ...)`` is the single seeding rule used everywhere:
    the path tuple feeds ``np.random.SeedSequence`` and the stream is Philox,
    so values are reproducible regardless of evaluation order or platform.
    """
    ss = np.random.SeedSequence(tuple(int(p) & 0xFFFFFFFFFFFFFFFF for p in path))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GridWindow:
    """Axis-aligned grid with the origin on a grid node."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.x_min < 0.0 < self.x_max and self.y_min < 0.0 < self.y_max):
            raise GeometryError("window must contain the origin strictly inside")
        if self.nx < 1 or self.ny < 1:
            raise GeometryError("cell counts must be positive")
        for zero_col, h, name in ((-self.x_min / self.h_x, self.h_x, "x"),
                                  (-self.y_min / self.h_y, self.h_y, "y")):
            if abs(zero_col - round(zero_col)) > _ALIGN_TOL / h:
                raise GeometryError(f"the {name} = 0 line must be a grid line")

    @property
    def h_x(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def h_y(self) -> float:
        return (self.y_max - self.y_min) / self.ny

    @property
    def cell_area(self) -> float:
        return self.h_x * self.h_y

    @property
    def col_zero(self) -> int:
        """Column-boundary index of the line x = 0."""
        return round(-self.x_min / self.h_x)

    @property
    def row_zero(self) -> int:
        """Row-boundary index of the line y = 0."""
        return round(-self.y_min / self.h_y)

    def col_of(self, x: float) -> int:
        """Boundary index for a grid-aligned abscissa; rejects misaligned x."""
        c = (x - self.x_min) / self.h_x
        ic = round(c)
        if abs(c - ic) > 1e-6 or not (0 <= ic <= self.nx):
            raise GeometryError(f"x = {x} is not a grid column inside the window")
        return ic

    def row_of(self, y: float) -> int:
        r = (y - self.y_min) / self.h_y
        ir = round(r)
        if abs(r - ir) > 1e-6 or not (0 <= ir <= self.ny):
            raise GeometryError(f"y = {y} is not a grid row inside the window")
        return ir

    def x_of(self, col: int) -> float:
        return self.x_min + col * self.h_x

    def y_of(self, row: int) -> float:
        return self.y_min + row * self.h_y


class GridRegion:
    """Finite union of grid cells, stored as per-column row intervals."""

    def __init__(self, window: GridWindow, intervals: dict[int, tuple[tuple[int, int], ...]]):
        self.window = window
        clean: dict[int, tuple[tuple[int, int], ...]] = {}
        for col, spans in sorted(intervals.items()):
            if not 0 <= col < window.nx:
                raise GeometryError("region column outside window")
            kept = tuple((r0, r1) for r0, r1 in spans if r1 > r0)
            for r0, r1 in kept:
                if not (0 <= r0 < r1 <= window.ny):
                    raise GeometryError("region rows outside window")
            if kept:
                clean[col] = kept
        self.intervals = clean

    @classmethod
    def from_rect(cls, window: GridWindow, x0: float, x1: float,
                  y0: float, y1: float) -> "GridRegion":
        c0, c1 = window.col_of(x0), window.col_of(x1)
        r0, r1 = window.row_of(y0), window.row_of(y1)
        if c1 <= c0 or r1 <= r0:
            raise GeometryError("rectangle must have positive area")
        return cls(window, {c: ((r0, r1),) for c in range(c0, c1)})

    @classmethod
    def empty(cls, window: GridWindow) -> "GridRegion":
        return cls(window, {})

    @property
    def cell_count(self) -> int:
        return sum(r1 - r0 for spans in self.intervals.values() for r0, r1 in spans)

    @property
    def area(self) -> float:
        return self.cell_count * self.window.cell_area

    def union(self, other: "GridRegion") -> "GridRegion":
        if self.window != other.window:
            raise GeometryError("regions live on different windows")
        merged: dict[int, list[tuple[int, int]]] = {
            c: list(s) for c, s in self.intervals.items()}
        for c, spans in other.intervals.items():
            merged.setdefault(c, []).extend(spans)
        out: dict[int, tuple[tuple[int, int], ...]] = {}
        for c, spans in merged.items():
            spans.sort()
            for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
                if b0 < a1:
                    raise GeometryError("regions overlap; union must be disjoint")
            out[c] = tuple(spans)
        return GridRegion(self.window, out)

    def split_by_axis(self) -> tuple["GridRegion", "GridRegion"]:
        """Parts above and below y = 0."""
        rz = self.window.row_zero
        up: dict[int, tuple] = {}
        dn: dict[int, tuple] = {}
        for c, spans in self.intervals.items():
            u = tuple((max(r0, rz), r1) for r0, r1 in spans if r1 > rz)
            d = tuple((r0, min(r1, rz)) for r0, r1 in spans if r0 < rz)
            if u:
                up[c] = u
            if d:
                dn[c] = d
        return GridRegion(self.window, up), GridRegion(self.window, dn)


class NoiseField:
    """One realization (or a stacked batch) of the grid white noise.

    ``cells`` has shape (*batch, ny, nx, algebra_dim) and holds basis
    coordinates.  The public single-realization API corresponds to an empty
    batch; estimator internals stack replicas along the leading axis.
    """

    def __init__(self, ctx: GroupContext, window: GridWindow, seed: int,
                 cells: np.ndarray):
        self.ctx = ctx
        self.window = window
        self.seed = int(seed)
        self.cells = cells
        self._fine: dict[int, np.ndarray] = {}
        self._cum: dict[int, np.ndarray] = {}

    # -- construction -------------------------------------------------------

    @classmethod
    def sample(cls, ctx: GroupContext, window: GridWindow, seed: int,
               batch: tuple[int, ...] = (),
               max_cells: int = DEFAULT_MAX_CELLS) -> "NoiseField":
        if window.nx * window.ny > max_cells:
            raise GeometryError(
                f"grid of {window.nx * window.ny} cells exceeds the budget of "
                f"{max_cells}")
        rng = derive_rng(seed, _TAG_CELLS)
        shape = (*batch, window.ny, window.nx, ctx.algebra_dim)
        cells = rng.standard_normal(shape) * np.sqrt(window.cell_area)
        return cls(ctx, window, seed, cells)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.cells.shape[:-3]

    # -- refinement ---------------------------------------------------------

    def fine_cells(self, substeps: int) -> np.ndarray:
        """Cells split into x sub-slices, shape (*batch, ny, nx, s, dk).

        Sub-values are exchangeable Gaussians conditioned to sum exactly to
        the parent cell; built once per level from a child stream, so query
        order never matters.
        """
        s = int(substeps)
        if s < 1:
            raise ValueError("substeps must be >= 1")
        if s == 1:
            return self.cells[..., None, :]
        cached = self._fine.get(s)
        if cached is None:
            cached = self._split_cells(self.cells, s,
                                       derive_rng(self.seed, _TAG_REFINE, s))
            self._fine[s] = cached
        return cached

    def _split_cells(self, cells: np.ndarray, s: int,
                     rng: np.random.Generator) -> np.ndarray:
        var = self.window.cell_area / s
        g = rng.standard_normal((*cells.shape[:-1], s, cells.shape[-1]))
        g *= np.sqrt(var)
        g -= g.mean(axis=-2, keepdims=True)
        return g + cells[..., None, :] / s

    # -- region queries -----------------------------------------------------

    def region_coords(self, region: GridRegion, signed: bool = False) -> np.ndarray:
        """Sum of cell coordinates over a region; ``signed`` flips below y=0."""
        if region.window != self.window:
            raise GeometryError("region window does not match field window")
        out = np.zeros((*self.batch_shape, self.ctx.algebra_dim))
        rz = self.window.row_zero
        for col, spans in region.intervals.items():
            for r0, r1 in spans:
                if not signed or r0 >= rz:
                    out += self.cells[..., r0:r1, col, :].sum(axis=-2)
                elif r1 <= rz:
                    out -= self.cells[..., r0:r1, col, :].sum(axis=-2)
                else:
                    out += self.cells[..., rz:r1, col, :].sum(axis=-2)
                    out -= self.cells[..., r0:rz, col, :].sum(axis=-2)
        return out

    # -- slab sums for parallel transport ------------------------------------

    def _cum_rows(self, substeps: int) -> np.ndarray:
        """Cumulative row sums of fine cells: (*batch, ny+1, nx*s, dk)."""
        s = int(substeps)
        cached = self._cum.get(s)
        if cached is None:
            fine = self.fine_cells(s)
            b =  fine.shape[:-4]
            ny, nx, dk = fine.shape[-4], fine.shape[-3], fine.shape[-1]
            flat = fine.transpose(*range(len(b)), -4, -3, -2, -1).reshape(
                *b, ny, nx * s, dk)
            cum = np.zeros((*b, ny + 1, nx * s, dk))
            np.cumsum(flat, axis=-3, out=cum[..., 1:, :, :])
            self._cum[s] = cum
            cached = cum
        return cached

    def fhat_slab(self, col0: int, col1: int, y: float, substeps: int) -> np.ndarray:
        """Sign-flipped slab sums fhat(column strip x [0, y]) per fine column.

        Returns coordinates of shape (*batch, (col1-col0)*substeps, dk) for
        the fine columns covering grid columns [col0, col1).
        """
        s = int(substeps)
        cum = self._cum_rows(s)
        rz = self.window.row_zero
        ry = self.window.row_of(y)
        lo, hi = (rz, ry) if ry >= rz else (ry, rz)
        sign = 1.0 if ry >= rz else -1.0
        block = cum[..., hi, col0 * s:col1 * s, :] - cum[..., lo, col0 * s:col1 * s, :]
        return sign * block


class ShiftedNoiseField(NoiseField):
    """View of a field under a column gauge rotation and a drift subtraction.

    Cell values become ``Ad_{g(x_c)^{-1}} (f(c) - cell integral of the drift)``
    with ``g`` frozen at each cell's left edge.  Shares the base field's
    refinement stream so sub-slices stay consistent with the base.
    """

    def __init__(self, base: NoiseField, rot_cols: np.ndarray,
                 drift_cells: np.ndarray):
        # rot_cols: (nx, dk, dk) orthogonal coordinate action of Ad_{g^{-1}};
        # drift_cells: (ny, nx, dk) cell integrals to subtract before rotating.
        shifted = np.einsum("xab,...yxb->...yxa", rot_cols,
                            base.cells - drift_cells)
        super().__init__(base.ctx, base.window, base.seed, shifted)
        self._base = base
        self._rot_cols = rot_cols
        self._drift_cells = drift_cells

    def fine_cells(self, substeps: int) -> np.ndarray:
        s = int(substeps)
        if s == 1:
            return self.cells[..., None, :]
        cached = self._fine.get(s)
        if cached is None:
            base_fine = self._base.fine_cells(s)
            drift = self._drift_cells[:, :, None, :] / s
            cached = np.einsum("xab,...yxsb->...yxsa", self._rot_cols,
                               base_fine - drift)
            self._fine[s] = cached
        return cached


# -- module-level operation wrappers ----------------------------------------

def sample_field(ctx: GroupContext, window: GridWindow, seed: int,
                 max_cells: int = DEFAULT_MAX_CELLS) -> NoiseField:
    """Sample one field realization; deterministic in (window, seed)."""
    return NoiseField.sample(ctx, window, seed, batch=(), max_cells=max_cells)


def f_region(field: NoiseField, region: GridRegion) -> np.ndarray:
    """f(B): exact sum of cell values over B, as an algebra matrix."""
    return coords_to_algebra(field.ctx, field.region_coords(region))


def f_hat_region(field: NoiseField, region: GridRegion) -> np.ndarray:
    """fhat(B) = f(B upper) - f(B lower)."""
    return coords_to_algebra(field.ctx,
                             field.region_coords(region, signed=True))


def refine_column_strip(field: NoiseField, cell: tuple[int, int],
                        substeps: int) -> list[np.ndarray]:
    """Sub-values of one cell (row, col): algebra matrices summing to f(cell)."""
    iy, ix = cell
    fine = field.fine_cells(substeps)
    return [coords_to_algebra(field.ctx, fine[..., iy, ix, j, :])
            for j in range(fine.shape[-2])]


def shifted_field_view(field: NoiseField, eta) -> ShiftedNoiseField:
    """Field shifted by a perturbation one-form: rotate by the boundary gauge
    of ``eta`` (frozen per column at the left edge) and subtract the cell
    integrals of its y-derivative.

    With ``eta == 0`` this is the identity transform, exactly.
    """
    from .transport import gauge_rotations_for_columns  # local: avoids cycle

    if eta.window != field.window:
        raise GeometryError("perturbation window does not match field window")
    dk = field.ctx.algebra_dim
    if eta.axis_is_zero():
        # boundary gauge is exactly the identity: keep coordinates bit-exact
        rot = np.broadcast_to(np.eye(dk), (field.window.nx, dk, dk)).copy()
    else:
        rot = gauge_rotations_for_columns(field.ctx, eta)
    drift = eta.cell_integrals()
    return ShiftedNoiseField(field, rot, drift)


# -- binary dump/restore ------------------------------------------------------

_MAGIC = b"YM2NOISE"
_VERSION = 1


def dump_field(field: NoiseField, path) -> None:
    """Write a single-realization field: header + row-major float64 coords."""
    if field.batch_shape != ():
        raise ValueError("only single-realization fields can be dumped")
    w = field.window
    header = _MAGIC + struct.pack(
        "<IIIIQdddd", _VERSION, field.ctx.algebra_dim, w.nx, w.ny,
        field.seed & 0xFFFFFFFFFFFFFFFF, w.x_min, w.x_max, w.y_min, w.y_max)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.cells, dtype="<f8").tobytes())


def restore_field(ctx: GroupContext, path) -> NoiseField:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise ValueError("not a ym2 noise dump")
    version, dk, nx, ny, seed, x0, x1, y0, y1 = struct.unpack_from(
        "<IIIIQdddd", blob, 8)
    if version != _VERSION:
        raise ValueError(f"unsupported dump version {version}")
    if dk != ctx.algebra_dim:
        raise ValueError("dump algebra dimension does not match the group")
    window = GridWindow(x0, x1, y0, y1, nx, ny)
    cells = np.frombuffer(blob, dtype="<f8",
                          offset=8 + struct.calcsize("<IIIIQdddd"))
    cells = cells.reshape(ny, nx, dk).astype(float)
    return NoiseField(ctx, window, seed, cells)
