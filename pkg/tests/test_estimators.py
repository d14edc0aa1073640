"""Unit tests for the Monte Carlo estimators and their oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ym2 import estimators as E
from ym2.groups import heat_mean, make_group
from ym2.noise import GeometryError


@pytest.fixture(scope="module")
def su2():
    return make_group("su2")


@pytest.fixture(scope="module")
def u1():
    return make_group("u1")


# -- estimates and comparisons ----------------------------------------------------

def test_mc_estimate_from_samples():
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(4000) + 2.0
    acc = E._Acc()
    acc.add(vals)
    est = acc.estimate()
    assert abs(est.mean - vals.mean()) < 1e-12
    assert abs(est.stderr - vals.std(ddof=1) / math.sqrt(len(vals))) < 1e-12


@given(st.integers(10, 300), st.integers(10, 300), st.integers(10, 300))
@settings(max_examples=30, deadline=None)
def test_merge_associative(n1, n2, n3):
    rng = np.random.default_rng(n1 * 7 + n2 * 3 + n3)
    chunks = [rng.standard_normal(n) for n in (n1, n2, n3)]
    ests = []
    for c in chunks:
        a = E._Acc()
        a.add(c)
        ests.append(a.estimate())
    left = ests[0].merge(ests[1]).merge(ests[2])
    right = ests[0].merge(ests[1].merge(ests[2]))
    whole = E._Acc()
    whole.add(np.concatenate(chunks))
    target = whole.estimate()
    for got in (left, right):
        assert got.n == target.n
        assert abs(got.mean - target.mean) < 1e-10
        assert abs(got.stderr - target.stderr) < 1e-10


def test_compare_thresholds():
    a = E.MCEstimate(mean=1.0, stderr=0.1, n=100)
    assert E.compare(a, 1.05).passed
    rep = E.compare(a, 2.0)
    assert not rep.passed and abs(rep.z - 10.0) < 1e-12
    same = E.compare(a, a)
    assert same.z == 0.0 and same.passed
    exact = E.compare(E.MCEstimate(mean=1.0, stderr=0.0, n=0), 1.0)
    assert exact.z == 0.0 and exact.passed


def test_fit_loglog_slope_and_validation():
    xs = [0.1, 0.2, 0.4, 0.8]
    ys = [x**2.5 for x in xs]
    slope, se = E.fit_loglog_slope(xs, ys)
    assert abs(slope - 2.5) < 1e-12 and se < 1e-12
    with pytest.raises(ValueError):
        E.fit_loglog_slope([0.1, 0.1, 0.1], [1, 1, 1])
    with pytest.raises(ValueError):
        E.fit_loglog_slope([0.1, 0.2], [1, 1])


def test_block_seed_documented_mix():
    want = int(np.random.SeedSequence((12, 3)).generate_state(
        1, np.uint64)[0])
    assert E.block_seed(12, 3) == want
    assert E.block_seed(12, 3) != E.block_seed(12, 4)


# -- closed-form oracles ----------------------------------------------------------

def test_mm_oracle_values(su2, u1):
    assert abs(E.mm_rhs_oracle(su2, 0.5, 0.5) - 3 * math.exp(-0.75)) < 1e-12
    assert abs(E.mm_rhs_oracle(u1, 0.5, 0.5) - math.exp(-0.5)) < 1e-12
    # continuity at zero area: the limit is -tr(kappa)
    assert abs(E.mm_rhs_oracle(su2, 1e-9, 1e-9) - 3.0) < 1e-6
    with pytest.raises(ValueError):
        E.mm_rhs_oracle(su2, 0.0, 0.5)


def test_lobe_trace_oracle(su2, u1):
    assert abs(E.lobe_trace_oracle(su2, 1.0) - 2 * math.exp(-0.75)) < 1e-12
    assert abs(E.lobe_trace_oracle(u1, 1.0) - math.exp(-0.5)) < 1e-12


def test_deformation_oracle_against_independent_difference(su2):
    # independent check: central difference of the trace of the heat mean
    q = 0.1
    z = lambda s: float(np.trace(heat_mean(su2, s)).real)
    want = (z(0.9) - z(1.1)) / q
    got = E.deformation_oracle(su2, 0.5, 0.5, q)
    assert abs(got - want) < 1e-12
    assert abs(got - 1.41842) < 5e-4  # recomputed by hand from 2(e^-.675-e^-.825)/0.1
    # the small-q limit recovers the crossing oracle
    tiny = E.deformation_oracle(su2, 0.5, 0.5, 1e-6)
    assert abs(tiny - E.mm_rhs_oracle(su2, 0.5, 0.5)) < 1e-9


# -- the benchmark engine ---------------------------------------------------------

@pytest.fixture(scope="module")
def small_pass():
    cfg = E.FigureEightConfig(group="su2", n=20_000, seed=404,
                              q_widths=(0.1, 0.2), eps_list=(0.2, 0.1))
    return cfg, E.figure_eight_pass(cfg)


def test_pass_matches_oracles(small_pass, su2):
    cfg, out = small_pass
    oracle = E.mm_rhs_oracle(su2, cfg.t1, cfg.t3)
    rep = E.compare(out["mm_lhs"], oracle)
    assert rep.passed, rep
    rep = E.compare(out["wilson"], E.lobe_trace_oracle(su2, 1.0))
    assert rep.passed
    for eps in cfg.eps_list:
        rep = E.compare(out[f"deformation:{eps}"],
                        E.deformation_oracle(su2, cfg.t1, cfg.t3, eps))
        assert rep.passed


def test_insertion_forms_agree_with_contraction(small_pass):
    cfg, out = small_pass
    for q in cfg.q_widths:
        for form in ("diff", "split"):
            gap = out[f"gap_insertion_{form}:{q}"]
            assert abs(gap.mean) <= 3 * gap.stderr
        # on this benchmark geometry the two insertion forms coincide
        a = out[f"insertion_diff:{q}"]
        b = out[f"insertion_split:{q}"]
        assert abs(a.mean - b.mean) < 1e-10


def test_insertion_variance_scaling(small_pass):
    cfg, out = small_pass
    v_small = out["insertion_diff:0.1"].stderr
    v_large = out["insertion_diff:0.2"].stderr
    # stderr^2 scales like 1/|Q|: halving the width roughly doubles var
    ratio = (v_small / v_large) ** 2
    assert 1.5 < ratio < 2.7


def test_pass_is_deterministic():
    cfg = E.FigureEightConfig(group="u1", n=5_000, seed=17,
                              q_widths=(0.2,), eps_list=(0.2,))
    a = E.figure_eight_pass(cfg)
    b = E.figure_eight_pass(cfg)
    for key in a:
        assert a[key].mean == b[key].mean
        assert a[key].stderr == b[key].stderr


def test_individual_operation_wrappers(su2):
    cfg = E.FigureEightConfig(group="su2", n=4_000, seed=5)
    lhs = E.mm_lhs(cfg)
    assert abs(lhs.mean - E.mm_rhs_oracle(su2, 0.5, 0.5)) < 4 * lhs.stderr
    ins = E.mm_insertion(cfg, 0.2)
    assert abs(ins["gap_diff"].mean) < 4 * ins["gap_diff"].stderr
    deform = E.mm_deformation(cfg, 0.2)
    assert abs(deform.mean - E.deformation_oracle(su2, 0.5, 0.5, 0.2)) \
        < 4 * deform.stderr


def test_mm_insertion_support_validation():
    cfg = E.FigureEightConfig(group="su2", n=200, seed=1)
    with pytest.raises(GeometryError):
        E.mm_insertion(cfg, 0.7)  # wider than the right lobe
    with pytest.raises(GeometryError):
        E.mm_insertion(cfg, 0.01)  # below one grid column


def test_deformation_width_validation():
    with pytest.raises(GeometryError):
        E.FigureEightConfig(group="su2", n=200, seed=1,
                            eps_list=(0.01,)).window()
    with pytest.raises(GeometryError):
        E.FigureEightConfig(group="su2", n=200, seed=1,
                            eps_list=(0.7,)).window()


def test_oracle_sampler_and_cross_validation(su2):
    rng = np.random.default_rng(0)
    h1, h2 = E.oracle_sample_figure_eight(su2, 0.0, 0.0, 8, rng)
    assert np.allclose(h1, np.eye(2)) and np.allclose(h2, np.eye(2))
    est = E.oracle_figure_eight_estimate(su2, 0.5, 0.5, 40_000, 7, steps=64)
    assert abs(est.mean - E.lobe_trace_oracle(su2, 1.0)) < 3 * est.stderr


def test_wilson_decay_run(u1):
    out = E.wilson_decay_run(u1, [0.25, 1.0], 30_000, 3)
    for a in (0.25, 1.0):
        got = out[a]
        assert abs(got.mean - math.exp(-a / 2)) < 3.5 * got.stderr


def test_ibp_check_zero_eta_is_exactly_zero(su2):
    from ym2.transport import PerturbationOneForm
    cfg = E.FigureEightConfig(group="su2", n=500, seed=2)
    eta = PerturbationOneForm.zero(su2, cfg.window())
    out = E.ibp_check(cfg, eta=eta)
    assert out["lhs"].mean == 0.0 and out["rhs"].mean == 0.0
    assert out["diff"].mean == 0.0 and out["diff"].stderr == 0.0


def test_ibp_check_couples(su2):
    cfg = E.FigureEightConfig(group="su2", n=10_000, seed=3)
    out = E.ibp_check(cfg, q_width=0.2)
    d = out["diff"]
    assert abs(d.mean) < 4 * d.stderr
    # both sides individually sit on the predicted nonzero mean
    want = 0.2 * math.exp(-0.75)
    assert abs(out["lhs"].mean - want) < 5 * out["lhs"].stderr
    assert abs(out["rhs"].mean - want) < 5 * out["rhs"].stderr


def test_girsanov_trivial_and_checks(su2):
    out = E.girsanov_check(su2, 5_000, 4,
                           alpha_coords=np.zeros((8, 8, 3)),
                           gauge_angles=np.zeros(8))
    # alpha = 0 and g = I: both sides are identical samples
    assert out["diff"].mean == 0.0 and out["diff"].stderr == 0.0
    out = E.girsanov_check(su2, 30_000, 4, psi="linear")
    assert abs(out["lhs"].mean - out["exact"]) < 3 * out["lhs"].stderr
    assert abs(out["diff"].mean) < 3.5 * out["diff"].stderr


def test_loop_expansion_scan_small(su2):
    out = E.loop_expansion_scan(su2, [0.1, 0.2, 0.4], 20_000, 11)
    for t in (0.1, 0.2, 0.4):
        assert out["records"][t]["mean_gap_z"] < 4.0
    slope, _ = out["centered_slope"]
    assert 0.7 < slope < 1.3
    assert out["records"][0.4]["bdg_ratio"] < 5.0


def test_perturbation_sweep_shapes(su2, u1):
    su2_sweep = E.perturbation_residual_sweep(su2, levels=2, seed=1, reps=4)
    assert su2_sweep[1]["residual"] < su2_sweep[0]["residual"]
    u1_sweep = E.perturbation_residual_sweep(u1, levels=2, seed=1, reps=4)
    assert u1_sweep[-1]["residual"] < 1e-10


def test_strip_correlation_scan(su2):
    out = E.strip_correlation_scan(su2, [0.4, 0.2, 0.1], 30_000, 9)
    slope, _ = out["slope"]
    assert slope > 0.3
