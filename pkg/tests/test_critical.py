import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from magkam import _kernels
from magkam.critical import (GraphError, alpha_bisection, alpha_function_scan, alpha_karp,
                             alpha_lp, alpha_negative_cycle, build_action_graph,
                             continuity_modulus_check, field_distance)
from magkam.lagrangian import CohomologyClass, MagneticLagrangian, TrigOneForm

from conftest import TWIN, random_form

FREE = MagneticLagrangian()
SMALL = dict(n=10, h=0.1, v_cap=2.0, max_steps=2)


def test_kinetic_costs():
    g = build_action_graph(FREE, CohomologyClass(), n=16, h=0.05, v_cap=3.0)
    loops = g.self_loops()
    assert np.all(g.w[loops] == 0)
    others = np.setdiff1d(np.arange(g.E), loops)
    assert g.w[others].min() > 0
    g1 = build_action_graph(FREE, CohomologyClass(1.0, 0.0), n=16, h=0.05, v_cap=3.0)
    d = g1.displacement()
    want = (d * d).sum(1) / (2 * g1.tau) - d[:, 0]
    assert np.allclose(g1.w, want, atol=1e-14)


def test_reversal_cancels_linear_terms():
    g = build_action_graph(MagneticLagrangian(random_form(np.random.default_rng(0))),
                           CohomologyClass(0.3, -0.7), **SMALL)
    rng = np.random.default_rng(1)
    off = {tuple(o): s for s, o in enumerate(g.offsets)}
    for e in rng.integers(g.E, size=200):
        s = e // g.V
        d1, d2, t = g.offsets[s]
        r = off[(-d1, -d2, t)] * g.V + g.dst[e]
        assert g.dst[r] == g.src[e]
        d = g.displacement([e])[0]
        assert g.w[e] + g.w[r] == pytest.approx((d @ d) / g.tau[e], abs=1e-12)


def test_graph_guards():
    with pytest.raises(GraphError):
        build_action_graph(FREE, n=16, h=0.3, v_cap=2.0)
    with pytest.raises(GraphError):
        build_action_graph(FREE, n=4, h=0.05, v_cap=2.0)
    g = build_action_graph(MagneticLagrangian(TWIN), **SMALL)
    assert g.is_strongly_connected()
    lines = g.to_csv().splitlines()
    assert lines[0] == "x_idx,y_idx,w,h" and len(lines) == g.E + 1


def test_kinetic_alpha():
    g0 = build_action_graph(FREE, CohomologyClass(), n=16, h=0.05, v_cap=3.0)
    assert alpha_negative_cycle(g0) == 0.0
    a, mu = alpha_lp(g0)
    assert abs(a) < 1e-12
    assert np.isin(mu.support(), g0.self_loops()).all()
    g1 = build_action_graph(FREE, CohomologyClass(1.0, 0.0), n=32, h=0.05, v_cap=3.0)
    assert abs(alpha_negative_cycle(g1) - 0.5) < 0.05


def test_magnetic_alpha_positive():
    for A in (0.5, 1.0):
        L = MagneticLagrangian(TrigOneForm.from_terms((), [[1, 0, 0.0, A]]))
        assert alpha_negative_cycle(build_action_graph(L, **SMALL)) > 1e-3


def _brute_min_ratio(V, edges):
    # minimum of cost/steps over simple cycles (the optimum is attained on one)
    best = np.inf
    adj = {}
    for s, d, w, t in edges:
        adj.setdefault((s, d), []).append((w, t))
    for r in range(1, V + 1):
        for cyc in itertools.permutations(range(V), r):
            if cyc[0] != min(cyc):
                continue
            hops = [(cyc[i], cyc[(i + 1) % r]) for i in range(r)]
            if not all(h in adj for h in hops):
                continue
            for choice in itertools.product(*(adj[h] for h in hops)):
                W = sum(c[0] for c in choice)
                T = sum(c[1] for c in choice)
                best = min(best, W / T)
    return best


@given(st.integers(0, 2**32 - 1))
def test_karp_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    V = int(rng.integers(2, 6))
    edges = [(s, d, float(rng.normal()), int(rng.integers(1, 4)))
             for s in range(V) for d in range(V) if rng.random() < 0.7 or d == (s + 1) % V]
    src, dst, w, t = (np.array(c) for c in zip(*edges))
    got = _kernels.karp_min_ratio(src.astype(np.int64), dst.astype(np.int64), w,
                                  t.astype(np.int64), V, 3)
    assert got == pytest.approx(_brute_min_ratio(V, edges), abs=1e-10)


@given(st.integers(0, 2**32 - 1), st.floats(-1, 1), st.floats(-1, 1))
def test_routes_agree(seed, c1, c2):
    L = MagneticLagrangian(random_form(np.random.default_rng(seed), scale=0.3))
    g = build_action_graph(L, CohomologyClass(c1, c2), **SMALL)
    a = alpha_bisection(g).alpha
    assert alpha_karp(g) == pytest.approx(a, abs=1e-9)
    b, mu = alpha_lp(g)
    assert abs(a - b) < 1e-7
    assert mu.weights.min() >= 0
    assert abs(mu.total_time() - 1.0) < 1e-9
    assert np.abs(mu.imbalance()).max() < 1e-9
    assert mu.action() == pytest.approx(-b, abs=1e-9)


def test_lp_support_is_cycles(small_graph):
    g, a = small_graph
    _, mu = alpha_lp(g)
    sup = mu.support()
    inflow = np.bincount(g.dst[sup], mu.weights[sup], g.V)
    outflow = np.bincount(g.src[sup], mu.weights[sup], g.V)
    nodes = mu.support_nodes()
    assert np.allclose(inflow, outflow, atol=1e-9)
    assert (inflow[nodes] > 0).all()
    assert np.allclose(g.cycle_ratio(sup), a, atol=1e-7) or mu.action() == pytest.approx(-a)


def test_constant_form_shifts_class():
    L = MagneticLagrangian(TWIN)
    c = np.array([0.4, -0.2])
    cp = np.array([0.3, 0.1])
    g1 = build_action_graph(L, CohomologyClass(*c), **SMALL)
    g2 = build_action_graph(L.with_form(TrigOneForm.constant(*cp)), CohomologyClass(*(c + cp)),
                            **SMALL)
    assert np.allclose(g1.w, g2.w, atol=1e-13)
    assert alpha_bisection(g1).alpha == pytest.approx(alpha_bisection(g2).alpha, abs=1e-12)


@pytest.mark.parametrize("c", [(1.0, 0.3), (0.5, 0.5)])
def test_refinement_tightens(c):
    L = MagneticLagrangian(TWIN)
    vals = [alpha_bisection(build_action_graph(L, CohomologyClass(*c), n=n, h=h, v_cap=3.0)).alpha
            for n, h in ((16, 0.1), (32, 0.05), (64, 0.025))]
    steps = np.abs(np.diff(vals))
    # lattice-exact optima give zero steps; otherwise the steps shrink
    assert steps[1] <= steps[0] + 1e-12


def test_scan_symmetry_convexity_growth():
    grid = dict(n=16, h=0.05, v_cap=None, max_steps=2)
    cs = [(1, 0), (0, 1), (2, 0), (4, 0), (3, 0), (0.5, 0.5), (1.5, 0.5)]
    s = alpha_function_scan(FREE, cs, grid, disc_tol=0.05)
    assert s.alpha[0] == pytest.approx(s.alpha[1], abs=1e-6)
    assert s.gap.max() < 1e-7
    assert s.convexity_violations == []
    ratios = [r for _, r in s.ray_ratios[(1.0, 0.0)]]
    assert np.all(np.diff(ratios) >= 0)
    assert s.to_csv().splitlines()[0] == "c1,c2,alpha_cycle,alpha_lp,gap"
    with pytest.raises(ValueError):
        alpha_function_scan(FREE, [], grid)


def test_random_midpoint_convexity():
    rng = np.random.default_rng(5)
    L = MagneticLagrangian(TWIN)
    for _ in range(3):
        c, cp = rng.uniform(-1, 1, (2, 2))
        vals = [alpha_bisection(build_action_graph(L, CohomologyClass(*x), **SMALL)).alpha
                for x in (c, cp, 0.5 * (c + cp))]
        assert vals[2] <= 0.5 * (vals[0] + vals[1]) + 1e-9


def test_continuity_constant_sequence():
    L = MagneticLagrangian(TWIN)
    rep = continuity_modulus_check(L, [TWIN] * 3, (0, 0), SMALL)
    assert all(r.gap == 0 and r.eps == 0 for r in rep.rows)
    bad = [TWIN, TWIN + TrigOneForm.from_terms((), [[1, 0, 0.0, 0.5]])]
    with pytest.raises(ValueError):
        continuity_modulus_check(L, bad, (0, 0), SMALL)


def test_continuity_bound():
    L = MagneticLagrangian(TWIN)
    ns = [2, 4, 8, 16]
    forms = [TWIN + TrigOneForm.from_terms((), [[1, 0, 0.0, 1.0 / n]]) for n in ns]
    rep = continuity_modulus_check(L, forms, (0, 0), SMALL, ns)
    assert [r.eps for r in rep.rows] == pytest.approx([1.0 / n for n in ns], rel=1e-3)
    assert all(r.satisfied for r in rep.rows)
    assert all(r.sym_satisfied for r in rep.rows if r.eps <= 0.5)
    gaps = [r.gap for r in rep.rows]
    assert np.all(np.diff(gaps) < 1e-3)
    assert field_distance(TWIN, TWIN) == 0.0
    assert rep.to_csv().splitlines()[0] == "n,eps_n,alpha_n,gap,bound,bound_satisfied"
