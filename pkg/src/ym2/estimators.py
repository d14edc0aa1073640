"""Monte Carlo estimators and closed-form oracles for the loop identities.

Every estimator is a pure function of its inputs and a master seed: replicas
are processed in fixed-size blocks, block ``b`` drawing from a Philox stream
keyed by ``SeedSequence((seed, b))``, so reruns are bit-identical and blocks
may be distributed without changing results.  Wherever a difference of
expectations is estimated, both terms are evaluated on the same field
realization (common random numbers), which is also what makes the coupled
z-scores sharp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import loops as lp
from .groups import (GroupContext, brownian_sample, coords_to_algebra,
                     group_inverse, heat_mean, make_group)
from .noise import GeometryError, GridRegion, GridWindow, NoiseField
from .transport import (HorizontalCurve, PerturbationOneForm,
                        martingale_increments, perturbed_transport_identity_residual,
                        transport_prefixes, zeta_edge)

__all__ = [
    "MCEstimate",
    "ComparisonReport",
    "compare",
    "block_seed",
    "BLOCK_SIZE",
    "FigureEightConfig",
    "figure_eight_pass",
    "mm_lhs",
    "mm_rhs_oracle",
    "mm_insertion",
    "mm_deformation",
    "deformation_oracle",
    "lobe_trace_oracle",
    "oracle_sample_figure_eight",
    "oracle_figure_eight_estimate",
    "wilson_decay_run",
    "ibp_check",
    "girsanov_check",
    "loop_expansion_scan",
    "perturbation_residual_sweep",
    "strip_correlation_scan",
    "fit_loglog_slope",
]

BLOCK_SIZE = 16384  # fixed block width; part of the reproducibility contract


def block_seed(seed: int, block: int) -> int:
    """Documented 64-bit mix of (master seed, block index)."""
    ss = np.random.SeedSequence((int(seed) & 0xFFFFFFFFFFFFFFFF, int(block)))
    return int(ss.generate_state(1, np.uint64)[0])


def _blocks(n: int):
    done = 0
    b = 0
    while done < n:
        size = min(BLOCK_SIZE, n - done)
        yield b, size
        done += size
        b += 1


# -- estimates and comparisons -------------------------------------------------

@dataclass
class MCEstimate:
    """Sample mean with standard error; merging is associative."""

    mean: complex
    stderr: float
    n: int

    @classmethod
    def from_sums(cls, s: complex, sq: float, n: int) -> "MCEstimate":
        mean = s / n
        var = max(sq / n - abs(mean) ** 2, 0.0)
        if n > 1:
            var *= n / (n - 1)
        return cls(mean=mean, stderr=math.sqrt(var / n), n=n)

    def merge(self, other: "MCEstimate") -> "MCEstimate":
        n = self.n + other.n
        s = self.mean * self.n + other.mean * other.n
        sq = (self._sumsq() + other._sumsq())
        return MCEstimate.from_sums(s, sq, n)

    def _sumsq(self) -> float:
        # invert from_sums: recover sum of |v|^2
        var = self.stderr**2 * self.n
        if self.n > 1:
            var *= (self.n - 1) / self.n
        return (var + abs(self.mean) ** 2) * self.n


class _Acc:
    """Streaming accumulator for complex samples."""

    def __init__(self):
        self.n = 0
        self.s = 0.0 + 0.0j
        self.sq = 0.0

    def add(self, values: np.ndarray) -> None:
        v = np.asarray(values)
        self.n += v.size
        self.s += complex(v.sum())
        self.sq += float((np.abs(v) ** 2).sum())

    def estimate(self) -> MCEstimate:
        return MCEstimate.from_sums(self.s, self.sq, self.n)


@dataclass
class ComparisonReport:
    lhs: MCEstimate
    rhs: MCEstimate
    z: float
    threshold: float
    passed: bool


def _as_estimate(x) -> MCEstimate:
    if isinstance(x, MCEstimate):
        return x
    return MCEstimate(mean=complex(x), stderr=0.0, n=0)


def compare(lhs, rhs, threshold_sigma: float = 3.0) -> ComparisonReport:
    """z-score comparison; exact values contribute zero standard error."""
    a, b = _as_estimate(lhs), _as_estimate(rhs)
    se = math.hypot(a.stderr, b.stderr)
    gap = abs(a.mean - b.mean)
    z = gap / se if se > 0 else (0.0 if gap == 0 else math.inf)
    return ComparisonReport(lhs=a, rhs=b, z=z, threshold=threshold_sigma,
                            passed=z <= threshold_sigma)


def fit_loglog_slope(xs, ys) -> tuple[float, float]:
    """Least-squares slope of log y against log x, with its standard error."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3:
        raise ValueError("need at least three points for a slope fit")
    d = np.diff(xs)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("sweep values must be strictly monotone")
    lx, ly = np.log(xs), np.log(ys)
    vx = lx - lx.mean()
    slope = float(vx @ (ly - ly.mean()) / (vx @ vx))
    resid = (ly - ly.mean()) - slope * vx
    dof = max(xs.size - 2, 1)
    se = float(np.sqrt((resid @ resid) / dof / (vx @ vx)))
    return slope, se


# -- closed-form oracles --------------------------------------------------------

def lobe_trace_oracle(ctx: GroupContext, s: float) -> float:
    """tr exp(kappa s / 2): the exact loop expectation at total area s."""
    return float(np.trace(heat_mean(ctx, s)).real)


def mm_rhs_oracle(ctx: GroupContext, t1: float, t3: float) -> float:
    """-(d/dt1 + d/dt3) tr exp(kappa (t1+t3)/2) = -tr(kappa exp(kappa s/2))."""
    if t1 <= 0 or t3 <= 0:
        raise ValueError("areas must be positive")
    return float(-np.trace(ctx.casimir @ heat_mean(ctx, t1 + t3)).real)


def deformation_oracle(ctx: GroupContext, t1: float, t3: float,
                       q: float) -> float:
    """Finite-deformation prediction [z(t1-q+t3) - z(t1+t3+q)] / q."""
    s = t1 + t3
    return (lobe_trace_oracle(ctx, s - q) - lobe_trace_oracle(ctx, s + q)) / q


# -- the two-lobe benchmark engine ----------------------------------------------

@dataclass(frozen=True)
class FigureEightConfig:
    """Geometry and sampling parameters for the two-lobe benchmark."""

    group: str = "su2"
    t1: float = 0.5
    t3: float = 0.5
    lobe_height: float = 1.0
    h_x: float = 0.05
    h_y: float = 0.5
    substeps: int = 4
    n: int = 200_000
    seed: int = 0
    q_widths: tuple[float, ...] = ()
    eps_list: tuple[float, ...] = ()

    def context(self) -> GroupContext:
        return make_group(self.group)

    def window(self) -> GridWindow:
        h = self.lobe_height
        w1, w3 = self.t1 / h, self.t3 / h
        nx = round((w1 + w3) / self.h_x)
        ny = round(2 * h / self.h_y)
        win = GridWindow(-w3, w1, -h, h, nx, ny)
        for eps in self.eps_list:
            if eps > w1 + 1e-12:
                raise GeometryError("deformation width exceeds the right lobe")
            if win.col_of(eps) <= win.col_zero:
                raise GeometryError("deformation width is below one grid column")
        return win


def figure_eight_pass(cfg: FigureEightConfig) -> dict:
    """One replica pass over the benchmark, all estimators on shared fields.

    Returns a dict of MCEstimates keyed by:
      ``mm_lhs``; ``wilson``; ``insertion_diff:q`` and ``insertion_split:q``
      for each q width (both insertion forms); ``deformation:eps`` for each
      deformation width; plus coupled-difference estimates
      ``gap_insertion_diff:q``, ``gap_insertion_split:q`` against ``mm_lhs``.
    """
    ctx = cfg.context()
    win = cfg.window()
    h = cfg.lobe_height
    w1, w3 = cfg.t1 / h, cfg.t3 / h
    graph, wilson = lp.build_figure_eight(cfg.t1, cfg.t3, win, lobe_height=h)
    s = cfg.substeps
    cz = win.col_zero

    top = HorizontalCurve.const(win, 0.0, w1, h)
    # the bottom curve runs past x = 0 when deformed loops need it
    bot_end = max(cfg.eps_list, default=0.0)
    bot = HorizontalCurve.const(win, -w3, max(bot_end, 0.0), -h)

    regions = {}
    for q in cfg.q_widths:
        regions[q] = (GridRegion.from_rect(win, 0.0, q, 0.0, h),
                      GridRegion.from_rect(win, 0.0, q, -h, 0.0))

    accs: dict[str, _Acc] = {}

    def acc(key: str) -> _Acc:
        return accs.setdefault(key, _Acc())

    eye = ctx.identity()
    for b, size in _blocks(cfg.n):
        field = NoiseField.sample(ctx, win, block_seed(cfg.seed, b),
                                  batch=(size,))
        p_top = transport_prefixes(field, top, s)
        p_bot = transport_prefixes(field, bot, s)

        def t_at(x):
            return p_top[:, (win.col_of(x) - cz) * s]

        def c_at(x):
            return p_bot[:, (win.col_of(x) - win.col_of(-w3)) * s]

        c0 = c_at(0.0)
        omega = {"e1": eye, "e2": eye, "e3": eye, "e4": eye,
                 "a": group_inverse(t_at(w1)), "b": group_inverse(c0)}

        v_lhs = lp.grad_dot(ctx, wilson, omega, "e1", "e2")
        acc("mm_lhs").add(v_lhs)
        acc("wilson").add(wilson.evaluate(omega))

        for q, (reg_q, reg_rq) in regions.items():
            area = reg_q.area
            f_q = coords_to_algebra(ctx, field.region_coords(reg_q))
            f_rq = coords_to_algebra(ctx, field.region_coords(reg_rq))
            d_e2_q = lp.grad_edge(wilson, omega, "e2", f_q)
            d_e2_rq = lp.grad_edge(wilson, omega, "e2", f_rq)
            d_e4_rq = lp.grad_edge(wilson, omega, "e4", f_rq)
            v_diff = -(d_e2_q - d_e2_rq) / area
            v_split = -(d_e2_q + d_e4_rq) / area
            acc(f"insertion_diff:{q}").add(v_diff)
            acc(f"insertion_split:{q}").add(v_split)
            acc(f"gap_insertion_diff:{q}").add(v_diff - v_lhs)
            acc(f"gap_insertion_split:{q}").add(v_split - v_lhs)

        for eps in cfg.eps_list:
            q_eps = eps * h
            om_p = dict(omega)
            om_p["e2"] = group_inverse(t_at(eps))
            om_m = dict(omega)
            om_m["e4"] = c0 @ group_inverse(c_at(eps))
            v = (wilson.evaluate(om_p) - wilson.evaluate(om_m)) / q_eps
            acc(f"deformation:{eps}").add(v)

    return {k: a.estimate() for k, a in accs.items()}


def mm_lhs(cfg: FigureEightConfig) -> MCEstimate:
    """E of the crossing contraction on sampled holonomies."""
    out = figure_eight_pass(
        FigureEightConfig(**{**cfg.__dict__, "q_widths": (), "eps_list": ()}))
    return out["mm_lhs"]


def mm_insertion(cfg: FigureEightConfig, q_width: float) -> dict:
    """Both insertion estimates for one strip width (shared replicas).

    The strip and its mirror must stay inside the right lobe's column span.
    """
    win = cfg.window()
    if win.col_of(q_width) <= win.col_zero:
        raise GeometryError("insertion strip is below one grid column")
    if q_width > cfg.t1 / cfg.lobe_height + 1e-12:
        raise GeometryError("insertion strip leaves the crossing edge's span")
    out = figure_eight_pass(FigureEightConfig(
        **{**cfg.__dict__, "q_widths": (q_width,), "eps_list": ()}))
    return {"diff": out[f"insertion_diff:{q_width}"],
            "split": out[f"insertion_split:{q_width}"],
            "lhs": out["mm_lhs"],
            "gap_diff": out[f"gap_insertion_diff:{q_width}"],
            "gap_split": out[f"gap_insertion_split:{q_width}"]}


def mm_deformation(cfg: FigureEightConfig, eps: float) -> MCEstimate:
    """Deformed-loop difference quotient at one deformation width."""
    out = figure_eight_pass(FigureEightConfig(
        **{**cfg.__dict__, "q_widths": (), "eps_list": (eps,)}))
    return out[f"deformation:{eps}"]


# -- independent heat-kernel-lobe oracle ----------------------------------------

def oracle_sample_figure_eight(ctx: GroupContext, t1: float, t3: float,
                               steps: int, rng: np.random.Generator,
                               size=None):
    """Independent lobe holonomies distributed by the group diffusion."""
    h1 = brownian_sample(ctx, t1, steps, rng, size=size)
    h2 = brownian_sample(ctx, t3, steps, rng, size=size)
    return h1, h2


def oracle_figure_eight_estimate(ctx: GroupContext, t1: float, t3: float,
                                 n: int, seed: int,
                                 steps: int = 64) -> MCEstimate:
    """E[tr(h2 h1)] by the independent-lobe sampler."""
    acc = _Acc()
    for b, size in _blocks(n):
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence((seed, 1, b))))
        h1, h2 = oracle_sample_figure_eight(ctx, t1, t3, steps, rng, size=size)
        acc.add(np.einsum("...ii->...", h2 @ h1))
    return acc.estimate()


# -- Wilson decay ----------------------------------------------------------------

def wilson_decay_run(ctx: GroupContext, areas, n: int, seed: int,
                     h_x: float = 0.05, h_y: float = 0.5,
                     substeps: int = 4) -> dict[float, MCEstimate]:
    """Normalized loop traces for grid rectangles of the given areas.

    Rectangles are [0, a] x [0, 1]; all areas share each field realization.
    """
    areas = sorted(float(a) for a in areas)
    a_max = areas[-1]
    win = GridWindow(-2 * h_x, a_max, -h_y, 1.0, round(a_max / h_x) + 2, round(1.0 / h_y) + 1)
    curve = HorizontalCurve.const(win, 0.0, a_max, 1.0)
    cz = win.col_zero
    accs = {a: _Acc() for a in areas}
    for b, size in _blocks(n):
        field = NoiseField.sample(ctx, win, block_seed(seed, b), batch=(size,))
        pref = transport_prefixes(field, curve, substeps)
        for a in areas:
            g = group_inverse(pref[:, (win.col_of(a) - cz) * substeps])
            accs[a].add(np.einsum("...ii->...", g) / ctx.dim)
    return {a: accs[a].estimate() for a in areas}


# -- integration by parts ---------------------------------------------------------

def ibp_check(cfg: FigureEightConfig, eta: PerturbationOneForm | None = None,
              q_width: float = 0.2, xi_index: int = 0,
              functional: str = "crossing-derivative") -> dict:
    """Edgewise response sum against the noise pairing, on shared replicas.

    Default perturbation: the canonical box/mirror-box pair of width
    ``q_width`` against the upward crossing edge, in basis direction
    ``xi_index``.  With ``functional='crossing-derivative'`` the identity is
    applied to the e2-inserted derivative of the loop trace (which has a
    nonzero mean on this benchmark, so the test has teeth); with
    ``functional='wilson'`` to the plain loop trace (both sides mean zero).
    Returns coupled lhs/rhs estimates and their difference.
    """
    ctx = cfg.context()
    win = cfg.window()
    h = cfg.lobe_height
    graph, wilson = lp.build_figure_eight(cfg.t1, cfg.t3, win, lobe_height=h)
    xi_coords = np.zeros(ctx.algebra_dim)
    xi_coords[xi_index] = 1.0
    xi = coords_to_algebra(ctx, xi_coords)
    if eta is None:
        eta = PerturbationOneForm.insertion_pair(ctx, win, 0.0, q_width, h,
                                                 xi_coords)
    s = cfg.substeps
    derived = functional == "crossing-derivative"
    acc_l, acc_r, acc_d = _Acc(), _Acc(), _Acc()
    for b, size in _blocks(cfg.n):
        field = NoiseField.sample(ctx, win, block_seed(cfg.seed, b),
                                  batch=(size,))
        omega = lp.holonomies(field, graph, s)
        lhs = None
        for name, path in graph.edges.items():
            z = zeta_edge(field, path, eta, s)
            if not np.any(z):
                continue
            if derived:
                term = wilson.grad2(omega, name, z, "e2", xi)
            else:
                term = lp.grad_edge(wilson, omega, name, z)
            lhs = term if lhs is None else lhs + term
        if lhs is None:
            lhs = np.zeros(size, dtype=complex)
        base = lp.grad_edge(wilson, omega, "e2", xi) if derived \
            else wilson.evaluate(omega)
        rhs = base * eta.pairing_coords(field.cells)
        acc_l.add(lhs)
        acc_r.add(rhs)
        acc_d.add(lhs - rhs)
    return {"lhs": acc_l.estimate(), "rhs": acc_r.estimate(),
            "diff": acc_d.estimate()}


# -- Gaussian change of variables ---------------------------------------------

def girsanov_check(ctx: GroupContext, n: int, seed: int,
                   window: GridWindow | None = None,
                   alpha_coords: np.ndarray | None = None,
                   gauge_angles: np.ndarray | None = None,
                   psi: str = "linear",
                   region=None) -> dict:
    """Two-sided test of the affine change of variables for the grid noise.

    LHS samples psi of the rotated-and-shifted field; RHS reweights psi of
    the plain field by the Gaussian density ratio of the shift actually
    applied, whose direction is the rotated drift Ad_{g^{-1}} alpha (for
    g = I this is the plain pairing with alpha; the norm is unchanged either
    way).  For ``psi='linear'`` the exact LHS mean is also returned (key
    ``exact``).
    """
    if window is None:
        window = GridWindow(-0.4, 0.4, -0.4, 0.4, 8, 8)
    dk = ctx.algebra_dim
    if alpha_coords is None:
        rng0 = np.random.Generator(np.random.Philox(
            np.random.SeedSequence((seed, 77))))
        alpha_coords = 0.5 * rng0.standard_normal((window.ny, window.nx, dk))
        alpha_coords[:2] = 0.0
        alpha_coords[-2:] = 0.0
    if gauge_angles is None:
        xs = np.arange(window.nx) * window.h_x + window.x_min
        gauge_angles = np.sin(2.0 * np.pi * xs)
    if region is None:
        region = GridRegion.from_rect(window, -0.2, 0.3, -0.3, 0.2)

    # column rotation matrices for Ad_{g(x)^{-1}} in basis coordinates
    from .groups import exp_map
    from .transport import adjoint_coordinate_action
    gauge_angles = np.asarray(gauge_angles, dtype=float)
    if np.any(gauge_angles):
        gen = coords_to_algebra(ctx, np.eye(dk)[min(1, dk - 1)])
        g_cols = exp_map(gauge_angles[:, None, None] * gen)
        rot = adjoint_coordinate_action(ctx, group_inverse(g_cols))
    else:
        rot = np.broadcast_to(np.eye(dk), (window.nx, dk, dk)).copy()

    cell_area = window.cell_area
    alpha_norm_sq = float(np.sum(alpha_coords**2) * cell_area)
    # the drift actually subtracted from the rotated field, per cell
    beta_coords = np.einsum("xab,yxb->yxa", rot, alpha_coords)
    shifted_drift = beta_coords * cell_area

    mask = np.zeros((window.ny, window.nx), dtype=bool)
    for col, spans in region.intervals.items():
        for r0, r1 in spans:
            mask[r0:r1, col] = True

    def psi_of(vals: np.ndarray) -> np.ndarray:
        x = vals[..., 0]
        return x if psi == "linear" else np.cos(x)

    exact = None
    if psi == "linear":
        exact = float(-shifted_drift[mask].sum(axis=0)[0])

    acc_l, acc_r, acc_d = _Acc(), _Acc(), _Acc()
    for b, size in _blocks(n):
        field = NoiseField.sample(ctx, window, block_seed(seed, b),
                                  batch=(size,))
        cells = field.cells
        rotated = np.einsum("xab,...yxb->...yxa", rot, cells)
        shifted = rotated - shifted_drift
        lhs_vals = psi_of(shifted[:, mask, :].sum(axis=1))
        pairing = np.einsum("...yxk,yxk->...", cells, beta_coords)
        weight = np.exp(-pairing - 0.5 * alpha_norm_sq)
        rhs_vals = psi_of(cells[:, mask, :].sum(axis=1)) * weight
        acc_l.add(lhs_vals)
        acc_r.add(rhs_vals)
        acc_d.add(lhs_vals - rhs_vals)
    out = {"lhs": acc_l.estimate(), "rhs": acc_r.estimate(),
           "diff": acc_d.estimate()}
    if exact is not None:
        out["exact"] = exact
    return out


# -- loop expansion scan ----------------------------------------------------------

def loop_expansion_scan(ctx: GroupContext, t_list, n: int, seed: int,
                        h_x: float = 0.05, h_y: float = 0.5,
                        substeps: int = 4) -> dict:
    """Rectangle-loop expansion diagnostics per area.

    For each t, samples g_t = holonomy of the boundary of [0,t] x [0,1]
    (lower edge, right vertical, top edge backward, left vertical) and
    accumulates:
    the entrywise mean of g_t with its stderr (against exp(kappa a/2)),
    the L2 norm of the centered residual g - I + fhat(Q_t) - kappa a/2,
    and the quadratic-variation diagnostic |Ito integral of b x db|.
    """
    t_list = sorted(float(t) for t in t_list)
    t_max = t_list[-1]
    win = GridWindow(-2 * h_x, t_max, -h_y, 1.0,
                     round(t_max / h_x) + 2, round(1.0 / h_y) + 1)
    curve = HorizontalCurve.const(win, 0.0, t_max, 1.0)
    cz = win.col_zero
    d = ctx.dim
    dk = ctx.algebra_dim
    steps_of = {t: (win.col_of(t) - cz) * substeps for t in t_list}

    sum_g = {t: np.zeros((d, d), dtype=complex) for t in t_list}
    sumsq_g = {t: np.zeros((d, d)) for t in t_list}
    sum_r2 = {t: 0.0 for t in t_list}
    sum_bdg = {t: 0.0 for t in t_list}
    total = 0

    for b, size in _blocks(n):
        field = NoiseField.sample(ctx, win, block_seed(seed, b), batch=(size,))
        pref = transport_prefixes(field, curve, substeps)
        inc = martingale_increments(field, curve, substeps)
        # b-path at fine boundaries: b_j = -fhat over [0, x_j] = sum of dM
        bpath = np.concatenate(
            [np.zeros((size, 1, dk)), np.cumsum(inc, axis=1)], axis=1)
        for t in t_list:
            j = steps_of[t]
            a_t = t * 1.0
            g = group_inverse(pref[:, j])
            bt = coords_to_algebra(ctx, -bpath[:, j])  # fhat(Q_t) as matrix
            resid = g - np.eye(d) + bt - 0.5 * ctx.casimir * a_t
            sum_g[t] += g.sum(axis=0)
            sumsq_g[t] += (np.abs(g) ** 2).sum(axis=0)
            sum_r2[t] += float((np.abs(resid) ** 2).sum())
            db = inc[:, :j]
            bb = bpath[:, :j]
            ito = np.einsum("bja,bjc->bac", bb, db)
            sum_bdg[t] += float((ito**2).sum())
        total += size

    out = {"t": t_list, "records": {}}
    for t in t_list:
        a_t = t
        mean_g = sum_g[t] / total
        var_g = np.maximum(sumsq_g[t] / total - np.abs(mean_g) ** 2, 0.0)
        se_g = np.sqrt(var_g / total)
        target = heat_mean(ctx, a_t)
        gap = np.abs(mean_g - target)
        z_mean = float(np.max(gap / np.where(se_g > 0, se_g, np.inf)))
        out["records"][t] = {
            "area": a_t,
            "mean_gap_max": float(np.max(gap)),
            "mean_gap_z": z_mean,
            "mean_minus_linear": float(
                np.max(np.abs(mean_g - np.eye(ctx.dim)
                              - 0.5 * ctx.casimir * a_t))),
            "mean_stderr_max": float(np.max(se_g)),
            "centered_l2": math.sqrt(sum_r2[t] / total),
            "bdg_l2": math.sqrt(sum_bdg[t] / total),
            "bdg_ratio": math.sqrt(sum_bdg[t] / total) / a_t,
        }
    areas = [out["records"][t]["area"] for t in t_list]
    out["centered_slope"] = fit_loglog_slope(
        areas, [out["records"][t]["centered_l2"] for t in t_list])
    out["mean_slope"] = fit_loglog_slope(
        areas, [out["records"][t]["mean_minus_linear"] for t in t_list])
    out["n"] = total
    return out


# -- pathwise perturbation identity sweep -----------------------------------------

def perturbation_residual_sweep(ctx: GroupContext, levels: int = 3,
                                seed: int = 0, reps: int = 8,
                                substeps: int = 2) -> list[dict]:
    """Mean pathwise residual of the perturbed-transport identity per mesh level.

    Level L uses grid spacing (1/8) / 2^L in both directions; geometry is
    dyadic so every level keeps the same curve and perturbation.
    """
    out = []
    for level in range(levels):
        h = (1.0 / 8.0) / (2**level)
        nx = round(1.0 / h)
        ny = nx
        win = GridWindow(-0.5, 0.5, -0.5, 0.5, nx, ny)
        curve = HorizontalCurve.const(win, -0.375, 0.375, 0.25)
        dk = ctx.algebra_dim
        coords = np.zeros((ny, nx, dk))
        c0, c1 = win.col_of(-0.25), win.col_of(0.125)
        r0, r1 = win.row_of(0.0), win.row_of(0.25)
        coords[r0:r1, c0:c1, 0] = 1.0
        r2, r3 = win.row_of(-0.25), win.row_of(0.0)
        coords[r2:r3, c0:c1, min(1, dk - 1)] = -1.0
        eta = PerturbationOneForm(ctx, win, coords)
        field = NoiseField.sample(ctx, win, block_seed(seed, level),
                                  batch=(reps,))
        res = perturbed_transport_identity_residual(field, curve, eta, substeps)
        out.append({"level": level, "h": h, "residual": float(res)})
    return out


# -- strip-correlation diagnostic ---------------------------------------------------

def strip_correlation_scan(ctx: GroupContext, eps_list, n: int, seed: int,
                           h_x: float = 0.025, substeps: int = 2) -> dict:
    """Correlation between a thin-strip noise functional and a loop observable.

    The strip functional is a first-coordinate noise evaluation over
    [0, eps] x [0, 1]; the outside functional is Re tr(M //) for the top
    transport over [0, 0.5], with a fixed generic matrix M (a generic
    observable keeps the leading insertion term alive for the traceless
    families).  Returns the fitted decay exponent of |corr| in eps.
    """
    eps_list = sorted(float(e) for e in eps_list)
    win = GridWindow(-2 * h_x, 0.5, -0.5, 1.0, round(0.5 / h_x) + 2, 3)
    curve = HorizontalCurve.const(win, 0.0, 0.5, 1.0)
    probe = np.diag(np.arange(1.0, ctx.dim + 1.0)).astype(complex)
    probe += (0.25 + 0.2j) * (np.ones((ctx.dim, ctx.dim)) - np.eye(ctx.dim))
    probe += 0.5j * np.eye(ctx.dim)
    sums = {e: np.zeros(3) for e in eps_list}  # sum WZ, sum W^2, sum Z
    sum_z = 0.0
    sum_z2 = 0.0
    total = 0
    for b, size in _blocks(n):
        field = NoiseField.sample(ctx, win, block_seed(seed, b), batch=(size,))
        pref = transport_prefixes(field, curve, substeps)
        zval = np.einsum("ij,bji->b", probe, group_inverse(pref[:, -1])).real
        sum_z += zval.sum()
        sum_z2 += float((zval**2).sum())
        for e in eps_list:
            reg = GridRegion.from_rect(win, 0.0, e, 0.0, 1.0)
            wv = field.region_coords(reg)[:, 0]
            sums[e] += np.array([float(wv @ zval), float(wv @ wv), 0.0])
        total += size
    corr = {}
    mz = sum_z / total
    vz = sum_z2 / total - mz**2
    for e in eps_list:
        swz, sw2, _ = sums[e]
        cov = swz / total  # E[W] = 0
        corr[e] = abs(cov) / math.sqrt((sw2 / total) * vz)
    slope = fit_loglog_slope(eps_list, [corr[e] for e in eps_list])
    return {"corr": corr, "slope": slope}
