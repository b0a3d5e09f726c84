import numpy as np
import pytest
from hypothesis import given, strategies as st

from magkam.critical import alpha_bisection, alpha_lp, build_action_graph
from magkam.lagrangian import CohomologyClass, MagneticLagrangian
from magkam.weak_kam import (InconsistentAlpha, NegativeCycle, aubry_by_delta, calibrate,
                             extract_sets, hausdorff, lax_oleinik, lax_oleinik_fixed_point,
                             mane_potential, potential_matrix, pseudo_metric,
                             semistatic_orbit_check)

DISC_TOL = 1e-2
CALIB_TOL = 1e-2


@pytest.fixture(scope="module")
def phi(small_graph):
    g, a = small_graph
    return potential_matrix(g, a, range(g.V))


@pytest.fixture(scope="module")
def cal(small_graph):
    g, a = small_graph
    return lax_oleinik_fixed_point(g, a)


def test_potential_axioms(small_graph, phi):
    g, _ = small_graph
    rng = np.random.default_rng(0)
    x, y, z = rng.integers(g.V, size=(3, 1000))
    assert (phi[x, z] <= phi[x, y] + phi[y, z] + 1e-9).all()
    delta = phi + phi.T
    assert np.array_equal(delta, delta.T)
    assert (delta >= -1e-12).all()
    assert (delta[x, z] <= delta[x, y] + delta[y, z] + 1e-9).all()
    assert (np.diag(phi) >= -1e-12).all()


def test_potential_vanishes_on_optimal_cycles(small_graph, phi):
    g, a = small_graph
    _, mu = alpha_lp(g)
    on = mu.support_nodes()
    assert np.abs(np.diag(phi)[on]).max() < 1e-9
    off = np.setdiff1d(np.arange(g.V), aubry_by_delta(g, a, 1e-9))
    assert (np.diag(phi)[off] > 0).all()
    assert pseudo_metric(g, a, int(on[0]), int(on[0])) == pytest.approx(0.0, abs=1e-9)


def test_negative_cycle_below_critical(small_graph):
    g, a = small_graph
    with pytest.raises(NegativeCycle):
        mane_potential(g, a - 1e-3, 0)


def test_kinetic_potential_decays():
    # free case: α = 0 and the cheapest path to distance D crawls at the slowest
    # grid speed 1/(n h J), costing D/(2 n h J); it vanishes as n h J grows
    c = CohomologyClass()
    vals = []
    for n in (16, 32, 64):
        g = build_action_graph(MagneticLagrangian(), c, n=n, h=0.1, v_cap=2.0, max_steps=2)
        got = mane_potential(g, 0.0, 0).phi[(n // 4) * n]
        assert got == pytest.approx(0.25 / (2 * n * 0.1 * 2), rel=1e-12)
        vals.append(got)
    assert vals[0] > vals[1] > vals[2] > 0


@given(st.integers(0, 2**32 - 1))
def test_lax_oleinik_nonexpansive(seed):
    import conftest
    g = build_action_graph(MagneticLagrangian(conftest.TWIN), n=10, h=0.1, v_cap=2.0)
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(2, g.V))
    Tu, Tv = lax_oleinik(g, 0.1, u), lax_oleinik(g, 0.1, v)
    assert np.abs(Tu - Tv).max() <= np.abs(u - v).max() + 1e-12
    assert np.allclose(lax_oleinik(g, 0.1, u + 3.0), Tu + 3.0, atol=1e-12)


def test_fixed_point_properties(small_graph, cal, phi):
    g, a = small_graph
    u = cal.u
    assert np.abs(lax_oleinik(g, a, u) - u).max() < 1e-9
    assert np.abs(lax_oleinik(g, a, u + 5.0) - (u + 5.0)).max() < 1e-9
    assert (np.abs(cal.reduced[cal.tight]) <= cal.tol_tight).all()
    # u is dominated by Φ, with equality along tight edges
    assert (u[None, :] - u[:, None] <= phi + 1e-8).all()
    for e in cal.tight[:200]:
        x, y = g.src[e], g.dst[e]
        assert u[y] - u[x] == pytest.approx(phi[x, y], abs=1e-8) or phi[x, y] < u[y] - u[x] + 1e-8


def test_tight_graph_contains_lp_cycles(small_graph, cal):
    g, _ = small_graph
    _, mu = alpha_lp(g)
    assert np.isin(mu.support(1e-7), cal.tight).all()


def test_cyclic_sccs_have_critical_mean(small_graph, cal):
    g, a = small_graph
    tight = set(cal.tight.tolist())
    out = {}
    for e in cal.tight:
        out.setdefault(int(g.src[e]), []).append(int(e))
    for comp in cal.cyclic_sccs:
        start = int(np.flatnonzero(cal.scc_labels == comp)[0])
        seen, path, x = {}, [], start
        while x not in seen:
            seen[x] = len(path)
            e = next(e for e in out[x] if cal.scc_labels[g.dst[e]] == comp and e in tight)
            path.append(e)
            x = int(g.dst[e])
        cyc = path[seen[x]:]
        assert g.cycle_ratio(cyc) == pytest.approx(a, abs=len(cyc) * cal.tol_tight)


def test_u0_independence(small_graph, cal):
    g, a = small_graph
    other = lax_oleinik_fixed_point(g, a, u0=np.random.default_rng(3).normal(size=g.V))
    assert np.array_equal(other.cyclic_nodes, cal.cyclic_nodes)


def test_delta_membership_agrees(small_graph, cal):
    g, a = small_graph
    S = extract_sets(g, a, cal, alpha_lp(g)[1])
    assert np.array_equal(np.sort(S.aubry_nodes), aubry_by_delta(g, a, 1e-7))


def test_sets_inclusions(twin_run, kinetic_run):
    for run in (twin_run, kinetic_run):
        S = run.sets
        assert np.isin(S.mather_nodes, S.aubry_nodes).all()
        assert np.isin(S.aubry_nodes, S.mane_nodes).all()
        assert np.isin(S.aubry_edges, S.mane_edges).all()
        target = np.sqrt(2 * run.alpha)
        assert np.abs(S.speeds() - target).max() <= 0.1 * target


def test_kinetic_sets(kinetic_run):
    S = kinetic_run.sets
    assert len(S.aubry_nodes) == kinetic_run.graph.V
    v = kinetic_run.graph.velocity(S.mane_edges)
    # lattice velocity nearest to c = (1, 0)
    assert np.allclose(v[:, 1], 0.0) and np.abs(v[:, 0] - 1.0).max() <= 0.0625 + 1e-12


def test_aubry_velocity_is_a_graph(twin_run):
    S, g = twin_run.sets, twin_run.graph
    src = g.src[S.aubry_edges]
    vel = g.velocity(S.aubry_edges)
    for s in np.unique(src):
        assert np.ptp(vel[src == s], axis=0).max() < 1e-12


def test_inconsistent_alpha(small_graph, cal):
    g, a = small_graph
    with pytest.raises(InconsistentAlpha):
        extract_sets(g, a + 1e-3, cal, alpha_lp(g)[1])


def test_semistatic_check(twin, twin_run):
    g, a = twin_run.graph, twin_run.alpha
    s = np.sqrt(2 * a)
    for x, v in (((0.75, 0.0), (0.0, s)), ((0.25, 0.0), (0.0, -s))):
        rep = semistatic_orbit_check(twin, x, v, g, a, 1.0)
        assert -DISC_TOL <= rep.defect <= CALIB_TOL
    bad = semistatic_orbit_check(twin, (0.25, 0.0), (0.0, s), g, a, 1.0)
    assert bad.defect > 10 * CALIB_TOL


def test_hausdorff():
    A = np.array([[0.0, 0.0], [0.5, 0.5]])
    B = np.array([[0.0, 0.1]])
    assert hausdorff(A, A) == 0.0
    assert hausdorff(B, A, one_sided=True) == pytest.approx(0.1)
    assert hausdorff(A, B) > hausdorff(B, A, one_sided=True)
    # torus wrap in the base coordinates
    assert hausdorff(np.array([[0.95, 0.0]]), np.array([[0.05, 0.0]])) == pytest.approx(0.1)


def test_exports(twin_run):
    S = twin_run.sets
    lines = S.to_csv().splitlines()
    assert lines[0] == "x1,x2,v1,v2,tag"
    tags = [l.rsplit(",", 1)[1] for l in lines[1:]]
    assert tags.count("mather") == len(S.mather_nodes) and tags.count("mane") == len(S.mane_edges)
    g = twin_run.graph
    grid = mane_potential(g, twin_run.alpha, 0).to_csv(g.n).splitlines()
    assert len(grid) == g.n and all(len(r.split(",")) == g.n for r in grid)
