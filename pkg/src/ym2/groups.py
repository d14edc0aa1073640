"""Numerics for compact matrix groups and their Lie algebras.

Supported families: U(1), SU(2), SU(n) and U(n) for n <= 8.  A group is
described by a :class:`GroupContext` carrying an orthonormal basis of the
Lie algebra (skew-Hermitian D x D matrices, traceless for the SU families)
with respect to the inner product

    <X, Y> = -Re tr(X Y),

together with the Casimir matrix ``kappa = sum_i xi_i^2`` computed from the
basis.  All matrix-valued helpers broadcast over arbitrary leading axes so
that Monte Carlo replicas can be processed as one stacked array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GroupContext",
    "make_group",
    "inner",
    "coords_to_algebra",
    "algebra_coords",
    "exp_map",
    "retract",
    "adjoint_group",
    "sample_algebra_gaussian",
    "random_group_element",
    "brownian_sample",
    "heat_mean",
    "MAX_RANK",
    "DegenerateSampleError",
]

MAX_RANK = 8


class DegenerateSampleError(ValueError):
    """Raised when a matrix is too singular to project back onto the group."""


@dataclass(frozen=True)
class GroupContext:
    """Immutable description of one compact matrix group.

    Attributes
    ----------
    kind:
        Canonical label, one of ``"u1"``, ``"su2"``, ``"sun:N"``, ``"un:N"``.
    dim:
        Matrix dimension D.
    basis:
        Array of shape (algebra_dim, D, D); orthonormal, skew-Hermitian.
    casimir:
        ``sum_i basis[i] @ basis[i]``, Hermitian negative-semidefinite.
    special:
        True for the SU families (traceless algebra, det = 1 group).
    """

    kind: str
    dim: int
    basis: np.ndarray = field(repr=False)
    casimir: np.ndarray = field(repr=False)
    special: bool

    @property
    def algebra_dim(self) -> int:
        return self.basis.shape[0]

    def identity(self, *batch: int) -> np.ndarray:
        eye = np.eye(self.dim, dtype=complex)
        if not batch:
            return eye.copy()
        return np.broadcast_to(eye, (*batch, self.dim, self.dim)).copy()


def _su_basis(n: int) -> np.ndarray:
    """Orthonormal basis of traceless skew-Hermitian n x n matrices."""
    out = []
    s = 1.0 / np.sqrt(2.0)
    for j in range(n):
        for k in range(j + 1, n):
            sym = np.zeros((n, n), dtype=complex)
            sym[j, k] = 1j * s
            sym[k, j] = 1j * s
            out.append(sym)
            asym = np.zeros((n, n), dtype=complex)
            asym[j, k] = s
            asym[k, j] = -s
            out.append(asym)
    for m in range(1, n):
        d = np.zeros(n)
        d[:m] = 1.0
        d[m] = -m
        d /= np.sqrt(m * (m + 1))
        out.append(1j * np.diag(d).astype(complex))
    return np.stack(out) if out else np.zeros((0, n, n), dtype=complex)


def make_group(kind: str) -> GroupContext:
    """Build a :class:`GroupContext` from a label.

    Accepted labels: ``u1``, ``su2``, ``sun:N``, ``un:N`` (1 <= N <= 8).
    """
    label = kind.strip().lower()
    if label == "u1":
        basis = np.array([[[1j]]], dtype=complex)
        n, special = 1, False
    elif label == "su2":
        basis = _su_basis(2)
        n, special = 2, True
    elif label.startswith("sun:") or label.startswith("un:"):
        special = label.startswith("sun:")
        try:
            n = int(label.split(":", 1)[1])
        except ValueError as exc:
            raise ValueError(f"malformed group label {kind!r}") from exc
        if n < 1:
            raise ValueError(f"group rank must be positive, got {n}")
        if n > MAX_RANK:
            raise ValueError(
                f"group rank {n} exceeds the supported maximum {MAX_RANK}"
            )
        if special:
            if n == 1:
                raise ValueError("sun:1 is trivial; use u1 instead")
            basis = _su_basis(n)
        else:
            extra = (1j / np.sqrt(n)) * np.eye(n, dtype=complex)
            basis = np.concatenate([_su_basis(n), extra[None]], axis=0)
    else:
        raise ValueError(f"unknown group kind {kind!r}")
    casimir = np.einsum("kij,kjl->il", basis, basis)
    return GroupContext(kind=label, dim=n, basis=basis, casimir=casimir,
                        special=special)


def inner(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Algebra inner product -Re tr(xy); broadcasts over leading axes."""
    return -np.einsum("...ij,...ji->...", x, y).real


def coords_to_algebra(ctx: GroupContext, coords: np.ndarray) -> np.ndarray:
    """Map coordinate vectors (..., algebra_dim) to matrices (..., D, D)."""
    return np.einsum("...k,kij->...ij", np.asarray(coords, dtype=float),
                     ctx.basis)


def algebra_coords(ctx: GroupContext, x: np.ndarray) -> np.ndarray:
    """Coordinates of x in the orthonormal basis: <x, xi_i>."""
    return -np.einsum("...ij,kji->...k", x, ctx.basis).real


def _expm_skew(x: np.ndarray) -> np.ndarray:
    """Exponential of skew-Hermitian matrices, exact, batched.

    Dispatch: 1x1 scalar exp; traceless 2x2 via the closed form
    exp(X) = cos(t) I + sinc(t) X with X^2 = -t^2 I; otherwise unitary
    diagonalization of the Hermitian matrix iX.
    """
    x = np.asarray(x, dtype=complex)
    d = x.shape[-1]
    if d == 1:
        return np.exp(x)
    tr = np.einsum("...ii->...", x)
    if d == 2 and np.max(np.abs(tr), initial=0.0) < 1e-12:
        # X^2 = -det(X) I for traceless 2x2; det is real >= 0 here.
        det = (x[..., 0, 0] * x[..., 1, 1] - x[..., 0, 1] * x[..., 1, 0]).real
        t = np.sqrt(np.maximum(det, 0.0))
        c = np.cos(t)
        s = np.sinc(t / np.pi)  # sin(t)/t, stable at 0
        eye = np.eye(2, dtype=complex)
        return c[..., None, None] * eye + s[..., None, None] * x
    herm = 1j * x
    w, v = np.linalg.eigh(herm)
    phases = np.exp(-1j * w)
    return np.einsum("...ik,...k,...jk->...ij", v, phases, v.conj())


def exp_map(x: np.ndarray) -> np.ndarray:
    """Group exponential of a skew-Hermitian algebra element (batched)."""
    return _expm_skew(x)


def group_inverse(g: np.ndarray) -> np.ndarray:
    """Inverse of a unitary stack: the conjugate transpose."""
    return np.conj(np.swapaxes(g, -1, -2))


def retract(ctx: GroupContext, m: np.ndarray) -> np.ndarray:
    """Project a nonsingular matrix onto the group via polar decomposition.

    For the SU families the residual determinant phase is divided out so the
    result has unit determinant.  Raises :class:`DegenerateSampleError` for
    (numerically) singular input.
    """
    m = np.asarray(m, dtype=complex)
    try:
        u, s, vh = np.linalg.svd(m)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSampleError("SVD failed on degenerate sample") from exc
    if np.min(s) <= 1e3 * np.finfo(float).eps * np.max(s, initial=1.0):
        raise DegenerateSampleError("matrix is singular; cannot retract")
    q = u @ vh
    if ctx.special:
        det = np.linalg.det(q)
        q = q * np.exp(-1j * np.angle(det) / ctx.dim)[..., None, None]
    return q


def adjoint_group(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Ad_g x = g x g^{-1} for unitary g; preserves the inner product."""
    return g @ x @ group_inverse(g)


def sample_algebra_gaussian(ctx: GroupContext, variance: float,
                            rng: np.random.Generator,
                            size=None) -> np.ndarray:
    """Gaussian algebra element(s): i.i.d. N(0, variance) basis coordinates."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    shape = (ctx.algebra_dim,) if size is None else (*np.atleast_1d(size),
                                                     ctx.algebra_dim)
    coords = rng.standard_normal(shape) * np.sqrt(variance)
    return coords_to_algebra(ctx, coords)


def random_group_element(ctx: GroupContext, rng: np.random.Generator,
                         size=None, scale: float = 1.0) -> np.ndarray:
    """Generic group element(s) exp(X) with X Gaussian of unit coordinate scale.

    Used for probe points in invariance tests; not Haar-distributed.
    """
    return exp_map(sample_algebra_gaussian(ctx, scale**2, rng, size=size))


def brownian_sample(ctx: GroupContext, t: float, steps: int,
                    rng: np.random.Generator, size=None) -> np.ndarray:
    """Sample the group diffusion at area-time t by left-increment products.

    Each step multiplies by exp(dM) with dM Gaussian of per-coordinate
    variance t/steps; the weak error of the mean against
    ``heat_mean(ctx, t)`` is O(t/steps).
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    batch = () if size is None else tuple(np.atleast_1d(size))
    g = ctx.identity(*batch)
    if t == 0:
        return g
    var = t / steps
    for _ in range(steps):
        g = exp_map(sample_algebra_gaussian(ctx, var, rng, size=size)) @ g
    return g


def heat_mean(ctx: GroupContext, t: float) -> np.ndarray:
    """exp(kappa t / 2): the exact mean of the group diffusion at time t."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    w, v = np.linalg.eigh(ctx.casimir)
    return (v * np.exp(0.5 * t * w)) @ v.conj().T
