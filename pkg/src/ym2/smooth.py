"""Deterministic lab for smooth connections on the plane.

Closed-form test fields (polynomial/trigonometric amplitudes times fixed
algebra directions) keep analytic derivatives available; parallel transport
uses classical RK4 along piecewise-smooth paths; curvature of non-axial
connections falls back to 5-point central differences.  The checks here are
identity residuals: gauge covariance of transport and curvature, connection
comparison/differentiation, path differentiation, the axial projection, the
small-loop expansion with its Green-identity cross-check, and the homotopy
slice projection with its curvature reconstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .groups import GroupContext, coords_to_algebra, exp_map

__all__ = [
    "ScalarField",
    "AlgebraField",
    "SmoothConnection",
    "Gauge",
    "PathPiece",
    "SmoothPath",
    "line_path",
    "rect_loop_path",
    "axial_from_curvature",
    "ode_transport",
    "transport_with_prefixes",
    "gauge_transform",
    "pullback_connection",
    "curvature",
    "connection_comparison",
    "connection_derivative",
    "path_derivative",
    "axial_projection",
    "smooth_loop_expansion",
    "Homotopy",
    "radial_homotopy",
    "complete_axial_homotopy",
    "homotopy_project",
    "reconstruct_from_curvature",
    "projected_vector_field",
    "yang_mills_norm_sq",
    "make_test_curvature",
    "make_test_connection",
    "make_test_gauge",
]


# -- scalar and algebra-valued fields ------------------------------------------

@dataclass(frozen=True)
class ScalarField:
    """Smooth scalar amplitude with analytic partial derivatives."""

    f: Callable[[float, float], float]
    fx: Callable[[float, float], float]
    fy: Callable[[float, float], float]

    @classmethod
    def trig(cls, a, bx, by, phase=0.0):
        def f(x, y):
            return a * math.sin(bx * x + by * y + phase)

        def fx(x, y):
            return a * bx * math.cos(bx * x + by * y + phase)

        def fy(x, y):
            return a * by * math.cos(bx * x + by * y + phase)

        return cls(f, fx, fy)

    @classmethod
    def poly_xy(cls, a):
        return cls(lambda x, y: a * x * y,
                   lambda x, y: a * y,
                   lambda x, y: a * x)

    @classmethod
    def gaussian_bump(cls, a, s):
        def f(x, y):
            return a * math.exp(-(x * x + y * y) / s)

        def fx(x, y):
            return -2.0 * x / s * f(x, y)

        def fy(x, y):
            return -2.0 * y / s * f(x, y)

        return cls(f, fx, fy)


class AlgebraField:
    """Sum of scalar amplitudes times fixed algebra directions."""

    def __init__(self, ctx: GroupContext, terms):
        # terms: list of (ScalarField, direction matrix)
        self.ctx = ctx
        self.terms = [(s, np.asarray(d, dtype=complex)) for s, d in terms]

    def __call__(self, x: float, y: float) -> np.ndarray:
        out = np.zeros((self.ctx.dim, self.ctx.dim), dtype=complex)
        for s, d in self.terms:
            out += s.f(x, y) * d
        return out

    def dx(self, x, y):
        out = np.zeros((self.ctx.dim, self.ctx.dim), dtype=complex)
        for s, d in self.terms:
            out += s.fx(x, y) * d
        return out

    def dy(self, x, y):
        out = np.zeros((self.ctx.dim, self.ctx.dim), dtype=complex)
        for s, d in self.terms:
            out += s.fy(x, y) * d
        return out

    @classmethod
    def zero(cls, ctx):
        return cls(ctx, [])


@dataclass
class SmoothConnection:
    """Connection components A1, A2 as algebra-valued callables.

    ``axial`` marks the complete axial form: A2 = 0 and A1(x, 0) = 0.
    When the components carry analytic partials the curvature is exact;
    otherwise 5-point differences are used.
    """

    ctx: GroupContext
    a1: Callable[[float, float], np.ndarray]
    a2: Callable[[float, float], np.ndarray]
    a1_dx: Callable | None = None
    a1_dy: Callable | None = None
    a2_dx: Callable | None = None
    a2_dy: Callable | None = None
    axial: bool = False

    def along(self, vx: float, vy: float, x: float, y: float) -> np.ndarray:
        out = np.zeros((self.ctx.dim, self.ctx.dim), dtype=complex)
        if vx != 0.0:
            out += vx * self.a1(x, y)
        if vy != 0.0:
            out += vy * self.a2(x, y)
        return out


def _fd_partial(fn, x, y, axis, h=1e-3):
    """5-point central difference of a matrix-valued function."""
    def at(t):
        return fn(x + t, y) if axis == 0 else fn(x, y + t)

    return (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)


def curvature(conn: SmoothConnection, x: float, y: float) -> np.ndarray:
    """F12 = d1 A2 - d2 A1 + [A1, A2] at one point."""
    d1a2 = conn.a2_dx(x, y) if conn.a2_dx else _fd_partial(conn.a2, x, y, 0)
    d2a1 = conn.a1_dy(x, y) if conn.a1_dy else _fd_partial(conn.a1, x, y, 1)
    a1 = conn.a1(x, y)
    a2 = conn.a2(x, y)
    return d1a2 - d2a1 + a1 @ a2 - a2 @ a1


# -- paths -----------------------------------------------------------------------

@dataclass(frozen=True)
class PathPiece:
    """One smooth piece t in [0, 1] with analytic point and velocity."""

    point: Callable[[float], tuple[float, float]]
    velocity: Callable[[float], tuple[float, float]]


class SmoothPath:
    """Concatenation of smooth pieces, each parametrized over [0, 1]."""

    def __init__(self, pieces):
        self.pieces = list(pieces)

    @property
    def start(self):
        return self.pieces[0].point(0.0)

    @property
    def end(self):
        return self.pieces[-1].point(1.0)

    def reversed_(self) -> "SmoothPath":
        out = []
        for p in reversed(self.pieces):
            out.append(PathPiece(
                point=lambda t, p=p: p.point(1.0 - t),
                velocity=lambda t, p=p: tuple(-v for v in p.velocity(1.0 - t))))
        return SmoothPath(out)

    def mapped(self, phi, dphi) -> "SmoothPath":
        """Image path under a diffeomorphism with differential ``dphi``."""
        out = []
        for p in self.pieces:
            def point(t, p=p):
                return phi(*p.point(t))

            def velocity(t, p=p):
                vx, vy = p.velocity(t)
                j = dphi(*p.point(t))
                return (j[0][0] * vx + j[0][1] * vy,
                        j[1][0] * vx + j[1][1] * vy)

            out.append(PathPiece(point, velocity))
        return SmoothPath(out)


def line_path(p0, p1) -> SmoothPath:
    (x0, y0), (x1, y1) = p0, p1
    return SmoothPath([PathPiece(
        point=lambda t: (x0 + t * (x1 - x0), y0 + t * (y1 - y0)),
        velocity=lambda t: (x1 - x0, y1 - y0))])


def rect_loop_path(a: float, b: float) -> SmoothPath:
    """Counterclockwise boundary of [0,a] x [0,b] from the origin."""
    corners = [(0.0, 0.0), (a, 0.0), (a, b), (0.0, b), (0.0, 0.0)]
    pieces = []
    for p0, p1 in zip(corners, corners[1:]):
        pieces.extend(line_path(p0, p1).pieces)
    return SmoothPath(pieces)


# -- transport -------------------------------------------------------------------

def _rk4_piece(conn: SmoothConnection, piece: PathPiece, u0: np.ndarray,
               steps: int, collect=None):
    def rhs(t, u):
        x, y = piece.point(t)
        vx, vy = piece.velocity(t)
        return -conn.along(vx, vy, x, y) @ u

    u = u0
    h = 1.0 / steps
    for i in range(steps):
        t = i * h
        k1 = rhs(t, u)
        k2 = rhs(t + 0.5 * h, u + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, u + 0.5 * h * k2)
        k4 = rhs(t + h, u + h * k3)
        u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if collect is not None:
            collect.append(u)
    return u


def ode_transport(conn: SmoothConnection, path: SmoothPath,
                  steps: int = 400) -> np.ndarray:
    """Parallel transport along the whole path (``steps`` RK4 steps/piece)."""
    u = np.eye(conn.ctx.dim, dtype=complex)
    for piece in path.pieces:
        u = _rk4_piece(conn, piece, u, steps)
    return u


def transport_with_prefixes(conn: SmoothConnection, path: SmoothPath,
                            steps: int = 400):
    """Transport plus the prefix value at every RK4 step boundary."""
    u = np.eye(conn.ctx.dim, dtype=complex)
    prefixes = [u]
    for piece in path.pieces:
        u = _rk4_piece(conn, piece, u, steps, collect=prefixes)
    return u, prefixes


def _gl_nodes(order: int):
    return np.polynomial.legendre.leggauss(order)


def path_integral(path: SmoothPath, integrand, order: int = 24) -> np.ndarray:
    """Integral over the path of ``integrand(t_local, piece)`` per piece."""
    nodes, weights = _gl_nodes(order)
    total = None
    for piece in path.pieces:
        for z, w in zip(nodes, weights):
            t = 0.5 * (z + 1.0)
            val = 0.5 * w * integrand(t, piece)
            total = val if total is None else total + val
    return total


# -- gauge transformations ---------------------------------------------------------

class Gauge:
    """Smooth group-valued function with analytic partial derivatives.

    Built as a product exp(phi_1 xi_1) exp(phi_2 xi_2) of single-generator
    factors so that dg is exact.
    """

    def __init__(self, ctx: GroupContext, factors):
        # factors: list of (ScalarField, direction matrix)
        self.ctx = ctx
        self.factors = [(s, np.asarray(d, dtype=complex)) for s, d in factors]

    def value(self, x: float, y: float) -> np.ndarray:
        g = np.eye(self.ctx.dim, dtype=complex)
        for s, d in self.factors:
            g = g @ exp_map(s.f(x, y) * d)
        return g

    def _partial(self, x, y, axis) -> np.ndarray:
        # product rule over factors; each factor's derivative is
        # (d phi) * xi * exp(phi xi), inserted in place.
        mats = [exp_map(s.f(x, y) * d) for s, d in self.factors]
        out = np.zeros((self.ctx.dim, self.ctx.dim), dtype=complex)
        for i, (s, d) in enumerate(self.factors):
            dphi = s.fx(x, y) if axis == 0 else s.fy(x, y)
            term = np.eye(self.ctx.dim, dtype=complex)
            for j, m in enumerate(mats):
                term = term @ ((dphi * d) @ m if j == i else m)
            out += term
        return out

    def dx(self, x, y):
        return self._partial(x, y, 0)

    def dy(self, x, y):
        return self._partial(x, y, 1)


def gauge_transform(conn: SmoothConnection, gauge: Gauge) -> SmoothConnection:
    """A -> g^{-1} A g + g^{-1} dg, with dg analytic."""
    def comp(i):
        def val(x, y):
            g = gauge.value(x, y)
            gi = np.conj(g.T)
            a = conn.a1(x, y) if i == 0 else conn.a2(x, y)
            dg = gauge.dx(x, y) if i == 0 else gauge.dy(x, y)
            return gi @ a @ g + gi @ dg

        return val

    return SmoothConnection(conn.ctx, comp(0), comp(1))


def pullback_connection(conn: SmoothConnection, phi, dphi) -> SmoothConnection:
    """(phi^* A)_i(p) = sum_j A_j(phi(p)) dphi_j/dx_i(p).

    When the base connection carries analytic partials and the Jacobian is
    constant (affine phi), the pullback's partials are built by the chain
    rule, keeping its curvature exact.
    """
    def comp(i):
        def val(x, y):
            q = phi(x, y)
            j = dphi(x, y)
            return conn.a1(*q) * j[0][i] + conn.a2(*q) * j[1][i]

        return val

    partials = {}
    if conn.a1_dx and conn.a1_dy and conn.a2_dx and conn.a2_dy:
        j0 = dphi(0.0, 0.0)

        def partial(i, k):
            # d/dx_k of (phi^* A)_i, assuming dphi is constant
            def val(x, y):
                q = phi(x, y)
                da1 = conn.a1_dx(*q) * j0[0][k] + conn.a1_dy(*q) * j0[1][k]
                da2 = conn.a2_dx(*q) * j0[0][k] + conn.a2_dy(*q) * j0[1][k]
                return da1 * j0[0][i] + da2 * j0[1][i]

            return val

        partials = {"a1_dx": partial(0, 0), "a1_dy": partial(0, 1),
                    "a2_dx": partial(1, 0), "a2_dy": partial(1, 1)}
    return SmoothConnection(conn.ctx, comp(0), comp(1), **partials)


# -- axial constructions -------------------------------------------------------------

def axial_from_curvature(f: AlgebraField, order: int = 32) -> SmoothConnection:
    """A1(x, y) = -integral_0^y f(x, s) ds; the axial connection of f."""
    nodes, weights = _gl_nodes(order)

    def a1(x, y):
        out = np.zeros((f.ctx.dim, f.ctx.dim), dtype=complex)
        half = 0.5 * y
        for z, w in zip(nodes, weights):
            out += w * f(x, half * (z + 1.0))
        return -half * out

    def a1_dx(x, y):
        out = np.zeros((f.ctx.dim, f.ctx.dim), dtype=complex)
        half = 0.5 * y
        for z, w in zip(nodes, weights):
            out += w * f.dx(x, half * (z + 1.0))
        return -half * out

    def a1_dy(x, y):
        return -f(x, y)

    zero = lambda x, y: np.zeros((f.ctx.dim, f.ctx.dim), dtype=complex)
    return SmoothConnection(f.ctx, a1, zero, a1_dx=a1_dx, a1_dy=a1_dy,
                            a2_dx=zero, a2_dy=zero, axial=True)


def _solve_x_ode(ctx: GroupContext, coeff, x_target: float,
                 steps_per_unit: int = 800) -> np.ndarray:
    """Solve g' = -coeff(x) g from 0 to x_target (RK4, either direction)."""
    g = np.eye(ctx.dim, dtype=complex)
    if x_target == 0.0:
        return g
    n = max(8, int(math.ceil(abs(x_target) * steps_per_unit)))
    h = x_target / n
    for i in range(n):
        x = i * h

        def rhs(xx, gg):
            return -coeff(xx) @ gg

        k1 = rhs(x, g)
        k2 = rhs(x + 0.5 * h, g + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h, g + 0.5 * h * k2)
        k4 = rhs(x + h, g + h * k3)
        g = g + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return g


def axial_projection(conn: SmoothConnection):
    """Project an A1-only connection to complete axial gauge.

    Returns (projected connection, boundary gauge g(x)); the projected
    component is Ad_{g(x)^{-1}} (A1(x,y) - A1(x,0)).
    """
    ctx = conn.ctx

    def g_of(x):
        return _solve_x_ode(ctx, lambda s: conn.a1(s, 0.0), x)

    def a1(x, y):
        g = g_of(x)
        gi = np.conj(g.T)
        return gi @ (conn.a1(x, y) - conn.a1(x, 0.0)) @ g

    zero = lambda x, y: np.zeros((ctx.dim, ctx.dim), dtype=complex)
    return SmoothConnection(ctx, a1, zero, axial=True), g_of


def k_corrector(conn: SmoothConnection, eta1, path: SmoothPath,
                steps: int = 400) -> np.ndarray:
    """Corrector along a path: k' = -Ad_{//^{-1}} eta1<dx> k, jointly with //."""
    ctx = conn.ctx
    k = np.eye(ctx.dim, dtype=complex)
    u = np.eye(ctx.dim, dtype=complex)
    for piece in path.pieces:
        h = 1.0 / steps

        def rhs(t, state):
            uu, kk = state
            x, y = piece.point(t)
            vx, vy = piece.velocity(t)
            du = -conn.along(vx, vy, x, y) @ uu
            ui = np.linalg.inv(uu)
            dk = -(ui @ (vx * eta1(x, y)) @ uu) @ kk
            return (du, dk)

        for i in range(steps):
            t = i * h
            s0 = (u, k)
            k1 = rhs(t, s0)
            k2 = rhs(t + 0.5 * h, (u + 0.5 * h * k1[0], k + 0.5 * h * k1[1]))
            k3 = rhs(t + 0.5 * h, (u + 0.5 * h * k2[0], k + 0.5 * h * k2[1]))
            k4 = rhs(t + h, (u + h * k3[0], k + h * k3[1]))
            u = u + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            k = k + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return k


# -- differentiation identities --------------------------------------------------------

def connection_comparison(conn_a: SmoothConnection, conn_b: SmoothConnection,
                          path: SmoothPath, steps: int = 400) -> float:
    """Residual of //^B = //^A k with k the comparison ODE solution."""
    ctx = conn_a.ctx
    ua = np.eye(ctx.dim, dtype=complex)
    k = np.eye(ctx.dim, dtype=complex)
    for piece in path.pieces:
        h = 1.0 / steps

        def rhs(t, state):
            uu, kk = state
            x, y = piece.point(t)
            vx, vy = piece.velocity(t)
            da = conn_a.along(vx, vy, x, y)
            db = conn_b.along(vx, vy, x, y)
            ui = np.linalg.inv(uu)
            return (-da @ uu, -(ui @ (db - da) @ uu) @ kk)

        for i in range(steps):
            t = i * h
            k1 = rhs(t, (ua, k))
            k2 = rhs(t + 0.5 * h, (ua + 0.5 * h * k1[0], k + 0.5 * h * k1[1]))
            k3 = rhs(t + 0.5 * h, (ua + 0.5 * h * k2[0], k + 0.5 * h * k2[1]))
            k4 = rhs(t + h, (ua + h * k3[0], k + h * k3[1]))
            ua = ua + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            k = k + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    ub = ode_transport(conn_b, path, steps)
    return float(np.max(np.abs(ub - ua @ k)))


def connection_derivative(conn: SmoothConnection, eta: SmoothConnection,
                          path: SmoothPath, steps: int = 400,
                          fd_step: float = 1e-5):
    """Formula vs finite difference for the eta-derivative of transport.

    Returns (formula value, finite difference value).
    """
    ctx = conn.ctx
    u, prefixes = transport_with_prefixes(conn, path, steps)

    # integral of Ad_{//^{-1}} eta<path'> dt by Simpson on the step grid
    total = np.zeros((ctx.dim, ctx.dim), dtype=complex)
    idx = 0
    h = 1.0 / steps
    for piece in path.pieces:
        vals = []
        for i in range(steps + 1):
            t = i * h
            x, y = piece.point(t)
            vx, vy = piece.velocity(t)
            p = prefixes[idx + i]
            pi = np.linalg.inv(p)
            vals.append(pi @ eta.along(vx, vy, x, y) @ p)
        idx += steps
        for i in range(0, steps - 1, 2):
            total += (h / 3.0) * (vals[i] + 4 * vals[i + 1] + vals[i + 2])
    formula = -u @ total

    def shifted(s):
        sc = SmoothConnection(
            ctx,
            lambda x, y: conn.a1(x, y) + s * eta.a1(x, y),
            lambda x, y: conn.a2(x, y) + s * eta.a2(x, y))
        return ode_transport(sc, path, steps)

    fd = (shifted(fd_step) - shifted(-fd_step)) / (2 * fd_step)
    return formula, fd


def path_derivative(conn: SmoothConnection, family, s0: float,
                    steps: int = 400, fd_step: float = 1e-5):
    """Endpoint-fixed family: formula vs finite difference of d/ds //(l_s).

    ``family(s)`` returns a SmoothPath, and ``family.partial(s, t_global)``
    the s-derivative of the point at global parameter position; here we
    require the family object to expose ``path(s)`` and ``ds_point(s, piece
    index, t)``.
    """
    path = family.path(s0)
    u, prefixes = transport_with_prefixes(conn, path, steps)
    ctx = conn.ctx
    total = np.zeros((ctx.dim, ctx.dim), dtype=complex)
    h = 1.0 / steps
    idx = 0
    for pi_idx, piece in enumerate(path.pieces):
        vals = []
        for i in range(steps + 1):
            t = i * h
            x, y = piece.point(t)
            vx, vy = piece.velocity(t)
            wx, wy = family.ds_point(s0, pi_idx, t)
            fcur = curvature(conn, x, y)
            p = prefixes[idx + i]
            pinv = np.linalg.inv(p)
            # F(l_dot, l_prime) = F12 (vx wy - vy wx)
            vals.append(pinv @ (fcur * (vx * wy - vy * wx)) @ p)
        idx += steps
        for i in range(0, steps - 1, 2):
            total += (h / 3.0) * (vals[i] + 4 * vals[i + 1] + vals[i + 2])
    formula = u @ total
    fd = (ode_transport(conn, family.path(s0 + fd_step), steps)
          - ode_transport(conn, family.path(s0 - fd_step), steps)) / (2 * fd_step)
    return formula, fd


# -- small-loop expansion ----------------------------------------------------------

class BulgePath:
    """Right-bulging smooth path from the origin to (0, top) on the y-axis.

    x(t) = amp * sin(pi t)^2, y(t) = top * t; the enclosed region between the
    path and the y-axis has right boundary x = amp sin(pi y/top)^2.
    """

    def __init__(self, top: float = 1.0, amp: float = 0.6):
        self.top = top
        self.amp = amp

    def scaled(self, eps: float, reflect: bool = False) -> SmoothPath:
        sgn = -1.0 if reflect else 1.0

        def point(t):
            return (eps * self.amp * math.sin(math.pi * t) ** 2,
                    sgn * eps * self.top * t)

        def velocity(t):
            return (eps * self.amp * math.pi * math.sin(2 * math.pi * t),
                    sgn * eps * self.top)

        return SmoothPath([PathPiece(point, velocity)])

    def region_integral(self, fn, eps: float, order: int = 24,
                        reflect: bool = False) -> np.ndarray:
        """Integral of a matrix field over the scaled enclosed region."""
        nodes, weights = _gl_nodes(order)
        sgn = -1.0 if reflect else 1.0
        total = None
        for zy, wy in zip(nodes, weights):
            y = 0.5 * (zy + 1.0) * eps * self.top * sgn
            width = eps * self.amp * math.sin(
                math.pi * abs(y) / (eps * self.top)) ** 2
            if width == 0.0:
                continue
            row = None
            for zx, wx in zip(nodes, weights):
                x = 0.5 * (zx + 1.0) * width
                v = wx * fn(x, y)
                row = v if row is None else row + v
            row *= 0.5 * width * wy
            total = row if total is None else total + row
        return total * 0.5 * eps * self.top


def smooth_loop_expansion(conn: SmoothConnection, f: AlgebraField,
                          bulge: BulgePath, eps_list, psi=None,
                          steps: int = 600, order: int = 24) -> dict:
    """Expansion remainders and the Green-identity residual per scale.

    ``psi`` maps a group element to a complex number with a first derivative
    at the identity given by ``psi.diff(X)``; default is the normalized trace.
    Returns per-eps remainders |psi(//) - psi(I) + psi'(I)[f(region)]| and
    residuals |line integral of A - area integral of f|.
    """
    ctx = conn.ctx
    if psi is None:
        class _Tr:
            @staticmethod
            def value(g):
                return np.trace(g) / ctx.dim

            @staticmethod
            def diff(x):
                return np.trace(x) / ctx.dim

        psi = _Tr

    out = {"eps": list(eps_list), "remainder": [], "green_residual": []}
    eye = np.eye(ctx.dim, dtype=complex)
    for eps in eps_list:
        path = bulge.scaled(eps)
        hol = ode_transport(conn, path, steps)
        f_region = bulge.region_integral(lambda x, y: f(x, y), eps,
                                         order=order)
        beta = path_integral(
            path, lambda t, piece: _a_along(conn, piece, t), order=order)
        out["green_residual"].append(float(np.max(np.abs(beta - f_region))))
        rem = psi.value(hol) - psi.value(eye) + psi.diff(f_region)
        out["remainder"].append(abs(rem))
    return out


def _a_along(conn, piece, t):
    x, y = piece.point(t)
    vx, vy = piece.velocity(t)
    return conn.along(vx, vy, x, y)


# -- homotopy gauge fixing -----------------------------------------------------------

@dataclass(frozen=True)
class HomotopyPiece:
    """One smooth piece of a contraction, on the global interval [t0, t1]."""

    t0: float
    t1: float
    point: Callable   # (x, t) -> point of the partial path at global time t
    dt: Callable      # (x, t) -> time velocity
    dv: Callable      # (x, v, t) -> derivative of the path in base direction v


class Homotopy:
    """Piecewise-smooth contraction of the plane onto the origin."""

    def __init__(self, pieces):
        self.pieces = list(pieces)


def radial_homotopy() -> Homotopy:
    return Homotopy([HomotopyPiece(
        0.0, 1.0,
        point=lambda x, t: (t * x[0], t * x[1]),
        dt=lambda x, t: (x[0], x[1]),
        dv=lambda x, v, t: (t * v[0], t * v[1]))])


def complete_axial_homotopy() -> Homotopy:
    first = HomotopyPiece(
        0.0, 0.5,
        point=lambda x, t: (2 * t * x[0], 0.0),
        dt=lambda x, t: (2 * x[0], 0.0),
        dv=lambda x, v, t: (2 * t * v[0], 0.0))
    second = HomotopyPiece(
        0.5, 1.0,
        point=lambda x, t: (x[0], (2 * t - 1) * x[1]),
        dt=lambda x, t: (0.0, 2 * x[1]),
        dv=lambda x, v, t: (v[0], (2 * t - 1) * v[1]))
    return Homotopy([first, second])


def _homotopy_path(h: Homotopy, x) -> SmoothPath:
    pieces = []
    for hp in h.pieces:
        span = hp.t1 - hp.t0

        def point(t, hp=hp, span=span):
            return hp.point(x, hp.t0 + span * t)

        def velocity(t, hp=hp, span=span):
            d = hp.dt(x, hp.t0 + span * t)
            return (span * d[0], span * d[1])

        pieces.append(PathPiece(point, velocity))
    return SmoothPath(pieces)


def homotopy_project(conn: SmoothConnection, homotopy: Homotopy,
                     steps: int = 400):
    """Projection onto the homotopy slice, as a connection-valued callable.

    Returns a function ``project(x, v) -> algebra matrix`` evaluating the
    projected connection at base point x against direction v.
    """
    ctx = conn.ctx

    def project(x, v):
        path = _homotopy_path(homotopy, x)
        g_end, prefixes = transport_with_prefixes(conn, path, steps)
        g_inv = np.linalg.inv(g_end)
        total = np.zeros((ctx.dim, ctx.dim), dtype=complex)
        h = 1.0 / steps
        idx = 0
        for hp, piece in zip(homotopy.pieces, path.pieces):
            span = hp.t1 - hp.t0
            vals = []
            for i in range(steps + 1):
                tg = hp.t0 + span * (i * h)
                p = piece.point(i * h)
                sdot = hp.dt(x, tg)
                vdir = hp.dv(x, v, tg)
                fcur = curvature(conn, p[0], p[1])
                wedge = sdot[0] * vdir[1] - sdot[1] * vdir[0]
                pre = prefixes[idx + i]
                mid = g_end @ np.linalg.inv(pre)
                vals.append(mid @ (fcur * wedge) @ np.linalg.inv(mid))
            idx += steps
            for i in range(0, steps - 1, 2):
                total += (span * h / 3.0) * (vals[i] + 4 * vals[i + 1]
                                             + vals[i + 2])
        return g_inv @ total @ g_end

    return project


def reconstruct_from_curvature(ctx: GroupContext, fcur, homotopy: Homotopy,
                               order: int = 48):
    """Slice connection from its curvature: quadrature of F along partial paths.

    ``fcur(x, y)`` is the curvature function; returns ``a(x, v)`` evaluating
    the reconstructed connection.
    """
    nodes, weights = _gl_nodes(order)

    def a(x, v):
        total = np.zeros((ctx.dim, ctx.dim), dtype=complex)
        for hp in homotopy.pieces:
            half = 0.5 * (hp.t1 - hp.t0)
            for z, w in zip(nodes, weights):
                t = hp.t0 + half * (z + 1.0)
                p = hp.point(x, t)
                sdot = hp.dt(x, t)
                vdir = hp.dv(x, v, t)
                wedge = sdot[0] * vdir[1] - sdot[1] * vdir[0]
                total += (w * half * wedge) * fcur(p[0], p[1])
        return total

    return a


def projected_vector_field(conn: SmoothConnection, eta: SmoothConnection,
                           homotopy: Homotopy, x, v,
                           steps: int = 300, fd_step: float = 2e-4,
                           u_step: float = 1e-5):
    """Formula vs finite difference for the slice derivative of a perturbation.

    Formula: [u, A<v>] + eta<v> - du<v> with u(x) the integral of eta along
    the partial path ending at x.  (The commutator sign follows from
    d/ds g_{s eta} = -u: the boundary-gauge ODE carries a minus sign.)  The
    finite-difference side projects ``conn + s eta`` for small ``s``;
    ``conn`` must lie in the slice.
    """
    ctx = conn.ctx
    nodes, weights = _gl_nodes(32)

    def u_of(xx):
        total = np.zeros((ctx.dim, ctx.dim), dtype=complex)
        for hp in homotopy.pieces:
            half = 0.5 * (hp.t1 - hp.t0)
            for z, w in zip(nodes, weights):
                t = hp.t0 + half * (z + 1.0)
                p = hp.point(xx, t)
                sdot = hp.dt(xx, t)
                total += (w * half) * (sdot[0] * eta.a1(*p)
                                       + sdot[1] * eta.a2(*p))
        return total

    u_val = u_of(x)
    a_v = conn.along(v[0], v[1], x[0], x[1])
    eta_v = eta.along(v[0], v[1], x[0], x[1])
    du_v = ((u_of((x[0] + u_step * v[0], x[1] + u_step * v[1]))
             - u_of((x[0] - u_step * v[0], x[1] - u_step * v[1])))
            / (2 * u_step))
    formula = (u_val @ a_v - a_v @ u_val) + eta_v - du_v

    def projected(s):
        sc = SmoothConnection(
            ctx,
            lambda xx, yy: conn.a1(xx, yy) + s * eta.a1(xx, yy),
            lambda xx, yy: conn.a2(xx, yy) + s * eta.a2(xx, yy))
        return homotopy_project(sc, homotopy, steps)(x, v)

    fd = (projected(fd_step) - projected(-fd_step)) / (2 * fd_step)
    return formula, fd


# -- Yang-Mills norm under area-preserving maps ------------------------------------

def yang_mills_norm_sq(conn: SmoothConnection, box_x: float = 3.0,
                       box_y: float = 3.0, order_x: int = 72,
                       order_y: int = 72) -> float:
    """Integral of |F|^2 over a centered box by Gauss-Legendre quadrature."""
    nx, wxs = _gl_nodes(order_x)
    ny, wys = _gl_nodes(order_y)
    total = 0.0
    for zx, wx in zip(nx, wxs):
        x = box_x * zx
        for zy, wy in zip(ny, wys):
            y = box_y * zy
            fv = curvature(conn, x, y)
            total += wx * wy * float(-np.trace(fv @ fv).real)
    return total * box_x * box_y


# -- test-field factories ------------------------------------------------------------

def make_gentle_curvature(ctx: GroupContext) -> AlgebraField:
    """Slowly varying curvature: keeps small-loop sweeps in their asymptotic
    regime across the whole scale range."""
    d0 = coords_to_algebra(ctx, np.eye(ctx.algebra_dim)[0])
    terms = [(ScalarField(
        f=lambda x, y: 1.0 + 0.15 * math.sin(0.4 * (x + y)),
        fx=lambda x, y: 0.06 * math.cos(0.4 * (x + y)),
        fy=lambda x, y: 0.06 * math.cos(0.4 * (x + y))), d0)]
    if ctx.algebra_dim > 1:
        d1 = coords_to_algebra(ctx, np.eye(ctx.algebra_dim)[1])
        terms.append((ScalarField.trig(0.1, 0.3, -0.2, 0.7), d1))
    return AlgebraField(ctx, terms)


def make_test_curvature(ctx: GroupContext, seed: int = 0,
                        decay: float = 1.2) -> AlgebraField:
    """Smooth curvature function: Gaussian-windowed trig amplitudes."""
    rng = np.random.default_rng(seed)
    terms = []
    for k in range(min(3, ctx.algebra_dim)):
        a = 0.4 + 0.3 * rng.random()
        bump = ScalarField.gaussian_bump(a, decay)
        trig = ScalarField.trig(1.0, 1.0 + k, 0.7 * (k + 1), rng.random())
        prod = ScalarField(
            f=lambda x, y, b=bump, t=trig: b.f(x, y) * t.f(x, y),
            fx=lambda x, y, b=bump, t=trig: b.fx(x, y) * t.f(x, y)
            + b.f(x, y) * t.fx(x, y),
            fy=lambda x, y, b=bump, t=trig: b.fy(x, y) * t.f(x, y)
            + b.f(x, y) * t.fy(x, y))
        direction = coords_to_algebra(
            ctx, np.eye(ctx.algebra_dim)[k % ctx.algebra_dim])
        terms.append((prod, direction))
    return AlgebraField(ctx, terms)


def make_test_connection(ctx: GroupContext, seed: int = 0,
                         axial_only: bool = False) -> SmoothConnection:
    """Smooth non-axial test connection with analytic partials."""
    rng = np.random.default_rng(seed)
    dirs = [coords_to_algebra(ctx, np.eye(ctx.algebra_dim)[k])
            for k in range(min(2, ctx.algebra_dim))]
    s1 = ScalarField.trig(0.5 + 0.2 * rng.random(), 1.1, 0.6, rng.random())
    s2 = ScalarField.poly_xy(0.3)
    f1 = AlgebraField(ctx, [(s1, dirs[0]), (s2, dirs[-1])])
    if axial_only:
        zero = AlgebraField.zero(ctx)
        return SmoothConnection(ctx, f1, zero, a1_dx=f1.dx, a1_dy=f1.dy,
                                a2_dx=zero, a2_dy=zero)
    s3 = ScalarField.trig(0.4, 0.8, 1.3, rng.random())
    f2 = AlgebraField(ctx, [(s3, dirs[-1])])
    return SmoothConnection(ctx, f1, f2, a1_dx=f1.dx, a1_dy=f1.dy,
                            a2_dx=f2.dx, a2_dy=f2.dy)


def make_decaying_connection(ctx: GroupContext, scale: float = 0.8) -> SmoothConnection:
    """Closed-form non-axial connection with rapidly decaying curvature."""
    d0 = coords_to_algebra(ctx, np.eye(ctx.algebra_dim)[0])
    d1 = coords_to_algebra(ctx, np.eye(ctx.algebra_dim)[min(1, ctx.algebra_dim - 1)])

    def windowed(amp, bx, by, phase):
        b = ScalarField.gaussian_bump(amp, scale)
        t = ScalarField.trig(1.0, bx, by, phase)
        return ScalarField(
            f=lambda x, y: b.f(x, y) * t.f(x, y),
            fx=lambda x, y: b.fx(x, y) * t.f(x, y) + b.f(x, y) * t.fx(x, y),
            fy=lambda x, y: b.fy(x, y) * t.f(x, y) + b.f(x, y) * t.fy(x, y))

    f1 = AlgebraField(ctx, [(windowed(0.7, 1.3, 0.8, 0.2), d0)])
    f2 = AlgebraField(ctx, [(windowed(0.5, 0.9, 1.1, 1.1), d1)])
    return SmoothConnection(ctx, f1, f2, a1_dx=f1.dx, a1_dy=f1.dy,
                            a2_dx=f2.dx, a2_dy=f2.dy)


def make_test_gauge(ctx: GroupContext, seed: int = 0) -> Gauge:
    rng = np.random.default_rng(seed)
    dirs = [coords_to_algebra(ctx, np.eye(ctx.algebra_dim)[k])
            for k in range(min(2, ctx.algebra_dim))]
    s1 = ScalarField.trig(0.6, 0.9, 1.2, rng.random())
    factors = [(s1, dirs[0])]
    if len(dirs) > 1:
        s2 = ScalarField.poly_xy(0.25)
        factors.append((s2, dirs[1]))
    return Gauge(ctx, factors)
