"""Unit tests for the deterministic smooth-connection lab."""

import math

import numpy as np
import pytest

from ym2 import smooth as S
from ym2.estimators import fit_loglog_slope
from ym2.groups import make_group


@pytest.fixture(scope="module")
def su2():
    return make_group("su2")


@pytest.fixture(scope="module")
def u1():
    return make_group("u1")


STEPS = 400


def bent_path():
    return S.SmoothPath(S.line_path((0.1, -0.3), (0.8, -0.3)).pieces
                        + S.line_path((0.8, -0.3), (0.8, 0.5)).pieces)


def test_axial_from_curvature_closed_forms(su2):
    xi = su2.basis[0]
    const = S.AlgebraField(su2, [(S.ScalarField(
        f=lambda x, y: 1.0, fx=lambda x, y: 0.0, fy=lambda x, y: 0.0), xi)])
    conn = S.axial_from_curvature(const)
    assert conn.axial
    p = (0.3, 0.7)
    assert np.max(np.abs(conn.a1(*p) + p[1] * xi)) < 1e-12
    linear = S.AlgebraField(su2, [(S.ScalarField(
        f=lambda x, y: x, fx=lambda x, y: 1.0, fy=lambda x, y: 0.0), xi)])
    conn = S.axial_from_curvature(linear)
    assert np.max(np.abs(conn.a1(*p) + p[0] * p[1] * xi)) < 1e-12
    # round trip: -d_y A1 reproduces the curvature function
    f = S.make_test_curvature(su2, seed=2)
    conn = S.axial_from_curvature(f)
    for q in ((0.2, 0.5), (-0.4, -0.8)):
        fd = -S._fd_partial(conn.a1, q[0], q[1], 1)
        assert np.max(np.abs(fd - f(*q))) < 1e-8


def test_zero_field_transport(su2):
    zero = S.AlgebraField.zero(su2)
    conn = S.SmoothConnection(su2, zero, zero)
    assert np.allclose(S.ode_transport(conn, bent_path(), 100), np.eye(2))


def test_abelian_rectangle_holonomy(u1):
    """Around a rectangle the abelian holonomy is exp(-area * xi)."""
    xi = u1.basis[0]
    const = S.AlgebraField(u1, [(S.ScalarField(
        f=lambda x, y: 1.0, fx=lambda x, y: 0.0, fy=lambda x, y: 0.0), xi)])
    conn = S.axial_from_curvature(const)  # A = -y xi dx
    a, b = 0.7, 0.4
    loop = S.rect_loop_path(a, b)
    got = S.ode_transport(conn, loop, STEPS)
    want = np.exp(-a * b * 1j)
    assert abs(got[0, 0] - want) < 1e-10


def test_transport_unitary_and_reversal(su2):
    conn = S.make_test_connection(su2, seed=1)
    path = bent_path()
    g = S.ode_transport(conn, path, STEPS)
    assert np.max(np.abs(g @ g.conj().T - np.eye(2))) < 1e-10
    gi = S.ode_transport(conn, path.reversed_(), STEPS)
    assert np.max(np.abs(gi - g.conj().T)) < 1e-10


def test_transport_rk4_order(su2):
    conn = S.make_test_connection(su2, seed=1)
    path = bent_path()
    ref = S.ode_transport(conn, path, 1600)
    errs = [np.max(np.abs(S.ode_transport(conn, path, n) - ref))
            for n in (25, 50, 100)]
    slope, _ = fit_loglog_slope([1.0 / n for n in (25, 50, 100)], errs)
    assert slope > 3.5


def test_gauge_covariance(su2):
    conn = S.make_test_connection(su2, seed=1)
    gauge = S.make_test_gauge(su2, seed=2)
    path = bent_path()
    tg = S.gauge_transform(conn, gauge)
    lhs = S.ode_transport(tg, path, STEPS)
    rhs = np.conj(gauge.value(*path.end).T) \
        @ S.ode_transport(conn, path, STEPS) @ gauge.value(*path.start)
    assert np.max(np.abs(lhs - rhs)) < 1e-7
    for p in ((0.35, 0.12), (-0.2, 0.4)):
        g = gauge.value(*p)
        assert np.max(np.abs(S.curvature(tg, *p)
                             - np.conj(g.T) @ S.curvature(conn, *p) @ g)) < 1e-6


def test_abelian_gauge_leaves_curvature(u1):
    conn = S.make_test_connection(u1, seed=3)
    gauge = S.make_test_gauge(u1, seed=4)
    tg = S.gauge_transform(conn, gauge)
    for p in ((0.3, -0.2), (-0.5, 0.6)):
        assert np.max(np.abs(S.curvature(tg, *p)
                             - S.curvature(conn, *p))) < 1e-6


def test_connection_comparison(su2, u1):
    conn = S.make_test_connection(su2, seed=1)
    assert S.connection_comparison(conn, conn, bent_path(), STEPS) < 1e-12
    other = S.make_test_connection(su2, seed=5)
    assert S.connection_comparison(conn, other, bent_path(), STEPS) < 1e-7
    ca = S.make_test_connection(u1, seed=1)
    cb = S.make_test_connection(u1, seed=5)
    assert S.connection_comparison(ca, cb, bent_path(), STEPS) < 1e-9


def test_connection_derivative(su2):
    conn = S.make_test_connection(su2, seed=1)
    zero = S.SmoothConnection(su2, S.AlgebraField.zero(su2),
                              S.AlgebraField.zero(su2))
    formula, fd = S.connection_derivative(conn, zero, bent_path(), STEPS)
    assert np.max(np.abs(formula)) < 1e-12 and np.max(np.abs(fd)) < 1e-9
    eta = S.make_test_connection(su2, seed=9)
    formula, fd = S.connection_derivative(conn, eta, bent_path(), STEPS)
    assert np.max(np.abs(formula - fd)) / np.max(np.abs(fd)) < 1e-5


class _Family:
    def path(self, s):
        def point(t):
            return (math.sin(math.pi * t) * (0.5 + s * t * (1 - t)), t)

        def velocity(t):
            return (math.pi * math.cos(math.pi * t) * (0.5 + s * t * (1 - t))
                    + math.sin(math.pi * t) * s * (1 - 2 * t), 1.0)

        return S.SmoothPath([S.PathPiece(point, velocity)])

    def ds_point(self, s, piece_index, t):
        return (math.sin(math.pi * t) * t * (1 - t), 0.0)


def test_path_derivative(su2):
    conn = S.make_test_connection(su2, seed=1)
    formula, fd = S.path_derivative(conn, _Family(), 0.3, STEPS)
    assert np.max(np.abs(formula - fd)) / np.max(np.abs(fd)) < 1e-5
    zero = S.SmoothConnection(su2, S.AlgebraField.zero(su2),
                              S.AlgebraField.zero(su2))
    formula, fd = S.path_derivative(zero, _Family(), 0.3, 100)
    assert np.max(np.abs(formula)) < 1e-14
    assert np.max(np.abs(fd)) < 1e-9


def test_abelian_rectangle_family(u1):
    """Growing-rectangle family: d/ds of exp(-area(s) xi)."""
    xi = u1.basis[0]
    const = S.AlgebraField(u1, [(S.ScalarField(
        f=lambda x, y: 1.0, fx=lambda x, y: 0.0, fy=lambda x, y: 0.0), xi)])
    conn = S.axial_from_curvature(const)

    class Fam:
        def path(self, s):
            pts = [(0.0, 0.0), (0.6, 0.0), (0.6, s), (0.0, s), (0.0, 0.0)]
            pieces = []
            for p0, p1 in zip(pts, pts[1:]):
                pieces.extend(S.line_path(p0, p1).pieces)
            return S.SmoothPath(pieces)

        def ds_point(self, s, piece_index, t):
            if piece_index == 1:
                return (0.0, t)
            if piece_index == 2:
                return (0.0, 1.0)
            if piece_index == 3:
                return (0.0, 1.0 - t)
            return (0.0, 0.0)

    s0 = 0.4
    formula, fd = S.path_derivative(conn, Fam(), s0, STEPS)
    want = -0.6 * 1j * np.exp(-0.6 * s0 * 1j)  # d/ds exp(-area(s) xi)
    assert abs(formula[0, 0] - want) < 1e-8
    assert abs(fd[0, 0] - want) < 1e-8


def test_axial_projection(su2, u1):
    base = S.make_test_connection(su2, seed=3, axial_only=True)
    projected, g_of = S.axial_projection(base)
    for x in (-0.7, 0.2, 0.9):
        assert np.max(np.abs(projected.a1(x, 0.0))) < 1e-10
    already = S.axial_from_curvature(S.make_test_curvature(su2, seed=4))
    _, g_id = S.axial_projection(already)
    assert np.max(np.abs(g_id(0.8) - np.eye(2))) < 1e-10
    # abelian: g is the exponential of the axis integral
    ab = S.make_test_connection(u1, seed=3, axial_only=True)
    _, g_ab = S.axial_projection(ab)
    nodes, weights = np.polynomial.legendre.leggauss(48)
    x_t = 0.6
    integral = 0.5 * x_t * sum(
        w * ab.a1(0.5 * x_t * (z + 1.0), 0.0)[0, 0]
        for z, w in zip(nodes, weights))
    assert abs(g_ab(x_t)[0, 0] - np.exp(-integral)) < 1e-9


def test_loop_expansion_zero_field_exact(su2):
    zero = S.AlgebraField.zero(su2)
    conn = S.SmoothConnection(su2, zero, zero, axial=True)
    out = S.smooth_loop_expansion(conn, zero, S.BulgePath(), [0.2, 0.1],
                                  steps=100)
    assert max(out["remainder"]) < 1e-14
    assert max(out["green_residual"]) < 1e-14


def test_loop_expansion_slopes(su2, u1):
    for ctx in (su2, u1):
        f = S.make_gentle_curvature(ctx)
        conn = S.axial_from_curvature(f)
        out = S.smooth_loop_expansion(conn, f, S.BulgePath(top=1.0, amp=0.5),
                                      [0.4, 0.2, 0.1, 0.05], steps=400)
        assert max(out["green_residual"]) < 1e-6
        slope, _ = fit_loglog_slope(out["eps"], out["remainder"])
        assert 3.6 <= slope <= 4.4


def test_loop_expansion_generic_functional(su2):
    """A generic linear functional exercises the first-order term."""
    f = S.make_gentle_curvature(su2)
    conn = S.axial_from_curvature(f)
    rng = np.random.default_rng(8)
    m = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))

    class PsiM:
        @staticmethod
        def value(g):
            return np.trace(m @ g) / 2.0

        @staticmethod
        def diff(x):
            return np.trace(m @ x) / 2.0

    out = S.smooth_loop_expansion(conn, f, S.BulgePath(top=1.0, amp=0.5),
                                  [0.4, 0.2, 0.1, 0.05], steps=400, psi=PsiM)
    slope, _ = fit_loglog_slope(out["eps"], out["remainder"])
    assert 3.5 <= slope <= 4.5


def test_homotopy_agreement_and_slice(su2):
    base = S.make_test_connection(su2, seed=3, axial_only=True)
    proj_fn = S.homotopy_project(base, S.complete_axial_homotopy(), steps=300)
    projected, _ = S.axial_projection(base)
    for x in ((-0.6, 0.5), (0.4, -0.7)):
        assert np.max(np.abs(proj_fn(x, (1.0, 0.0))
                             - projected.a1(*x))) < 1e-8
    generic = S.make_test_connection(su2, seed=7)
    proj_rad = S.homotopy_project(generic, S.radial_homotopy(), steps=300)
    for x in ((0.5, 0.3), (-0.4, 0.6)):
        assert np.max(np.abs(proj_rad(x, x))) < 1e-6
    # a connection already in the slice projects to itself
    f = S.make_test_curvature(su2, seed=4)
    in_slice = S.axial_from_curvature(f)
    proj_ca = S.homotopy_project(in_slice, S.complete_axial_homotopy(),
                                 steps=300)
    for x in ((0.4, 0.6), (-0.5, -0.3)):
        assert np.max(np.abs(proj_ca(x, (1.0, 0.0))
                             - in_slice.a1(*x))) < 1e-8


def test_reconstruction_round_trip(su2):
    f = S.make_test_curvature(su2, seed=4)
    conn = S.axial_from_curvature(f)
    rec = S.reconstruct_from_curvature(
        su2, lambda x, y: S.curvature(conn, x, y),
        S.complete_axial_homotopy())
    for x in ((0.4, 0.6), (-0.5, -0.3)):
        assert np.max(np.abs(rec(x, (1.0, 0.0)) - conn.a1(*x))) < 1e-6
        assert np.max(np.abs(rec(x, (0.0, 1.0)))) < 1e-12
    # constant curvature: A = -y f dx
    xi = su2.basis[0]
    rec = S.reconstruct_from_curvature(su2, lambda x, y: xi,
                                       S.complete_axial_homotopy())
    p = (0.3, -0.4)
    assert np.max(np.abs(rec(p, (1.0, 0.0)) + p[1] * xi)) < 1e-12


def test_projected_vector_field(su2, u1):
    for ctx in (su2, u1):
        f = S.make_test_curvature(ctx, seed=4)
        conn = S.axial_from_curvature(f)
        eta = S.make_test_connection(ctx, seed=11)
        formula, fd = S.projected_vector_field(
            conn, eta, S.complete_axial_homotopy(), (0.4, 0.5), (1.0, 0.0),
            steps=200)
        assert np.max(np.abs(formula - fd)) / np.max(np.abs(fd)) < 1e-4
        zero = S.SmoothConnection(ctx, S.AlgebraField.zero(ctx),
                                  S.AlgebraField.zero(ctx))
        formula, fd = S.projected_vector_field(
            conn, zero, S.complete_axial_homotopy(), (0.4, 0.5), (1.0, 0.0),
            steps=150)
        assert np.max(np.abs(formula)) < 1e-12


def test_abelian_projected_vector_field_is_eta_minus_du(u1):
    f = S.make_test_curvature(u1, seed=4)
    conn = S.axial_from_curvature(f)
    eta = S.make_test_connection(u1, seed=11)
    formula, fd = S.projected_vector_field(
        conn, eta, S.complete_axial_homotopy(), (0.3, 0.6), (1.0, 0.0),
        steps=200)
    # abelian: the commutator drops; formula = eta<v> - du<v>
    nodes, weights = np.polynomial.legendre.leggauss(48)

    def u_of(x):
        # axis leg only contributes for eta1 dx along (2t x1, 0)
        total = 0.0 + 0.0j
        for z, w in zip(nodes, weights):
            t = 0.25 * (z + 1.0)
            total += w * 0.25 * 2 * x[0] * eta.a1(2 * t * x[0], 0.0)[0, 0]
        for z, w in zip(nodes, weights):
            t = 0.5 + 0.25 * (z + 1.0)
            total += w * 0.25 * 2 * x[1] * eta.a2(x[0], (2 * t - 1) * x[1])[0, 0]
        return total

    h = 1e-5
    du = (u_of((0.3 + h, 0.6)) - u_of((0.3 - h, 0.6))) / (2 * h)
    want = eta.a1(0.3, 0.6)[0, 0] - du
    assert abs(formula[0, 0] - want) < 1e-7


def test_pullback_norm_invariance(su2):
    conn = S.make_decaying_connection(su2)
    phi = (lambda x, y: (x + 0.7 * y, y))
    dphi = (lambda x, y: ((1.0, 0.7), (0.0, 1.0)))
    pb = S.pullback_connection(conn, phi, dphi)
    n0 = S.yang_mills_norm_sq(conn, box_x=3.2, box_y=3.2)
    n1 = S.yang_mills_norm_sq(pb, box_x=5.6, box_y=3.2, order_x=110)
    assert abs(n1 - n0) / n0 < 1e-6


def test_pullback_transport_naturality(su2):
    conn = S.make_test_connection(su2, seed=1)
    phi = (lambda x, y: (x + 0.7 * y, y))
    dphi = (lambda x, y: ((1.0, 0.7), (0.0, 1.0)))
    pb = S.pullback_connection(conn, phi, dphi)
    path = bent_path()
    assert np.max(np.abs(
        S.ode_transport(pb, path, STEPS)
        - S.ode_transport(conn, path.mapped(phi, dphi), STEPS))) < 1e-7
