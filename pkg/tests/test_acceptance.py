"""Acceptance criteria, one test each; every test records a PASS/FAIL line."""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from magkam.cli import execute
from magkam.config import ExperimentConfig
from magkam.critical import (alpha_bisection, alpha_lp, build_action_graph,
                             continuity_modulus_check)
from magkam.flow import find_periodic_orbit, periodic_orbit_from_state, symplectic_defect
from magkam.index_form import make_basis, perturbed_index_gap, second_variation_consistency
from magkam.lagrangian import CohomologyClass, MagneticLagrangian, TrigOneForm
from magkam.perturbation import (build_aubry_lift, build_perturbation, compute_sets,
                                 constant_lift, lemma1_constant, usc_sweep, verify_collapse)
from magkam.weak_kam import potential_matrix

from conftest import KINETIC_GRID, MAGNETIC_GRID, TWIN, record

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FINE_GRID = dict(n=32, h=0.05, v_cap=3.0, max_steps=4)

# the shipped instances: free motion and the twin-line field (curl != 0)
INSTANCES = [
    ("kinetic c=(0,0)", None, (0.0, 0.0), KINETIC_GRID),
    ("kinetic c=(1,0)", None, (1.0, 0.0), KINETIC_GRID),
    ("kinetic c=(1,1)", None, (1.0, 1.0), KINETIC_GRID),
    ("twin c=(0,0)", TWIN, (0.0, 0.0), MAGNETIC_GRID),
    ("twin c=(0,0.5)", TWIN, (0.0, 0.5), MAGNETIC_GRID),
    ("twin c=(0.5,0)", TWIN, (0.5, 0.0), FINE_GRID),
]


@pytest.fixture(scope="module")
def instance_runs():
    out = []
    for name, form, c, grid in INSTANCES:
        L = MagneticLagrangian() if form is None else MagneticLagrangian(form)
        out.append((name, compute_sets(L, CohomologyClass(*c), grid)))
    return out


@pytest.fixture(scope="module")
def twin_perturbation(twin, twin_run):
    X = build_aubry_lift(twin_run.sets, 0.04)
    return build_perturbation(twin_run.sets, X, 0.1, B_radius=0.75)


def test_criterion_01_kinetic_oracle():
    L = MagneticLagrangian()
    worst = {32: 0.0, 64: 0.0}
    slowest = 0.0
    for c in [(0, 0), (1, 0), (0, 1), (1, 1)]:
        target = 0.5 * (c[0] ** 2 + c[1] ** 2)
        for n, h in ((32, 0.05), (64, 0.025)):
            t = time.perf_counter()
            g = build_action_graph(L, CohomologyClass(*c), n=n, h=h, v_cap=3.0, max_steps=2)
            a_cycle = alpha_bisection(g).alpha
            a_lp, _ = alpha_lp(g)
            slowest = max(slowest, time.perf_counter() - t)
            worst[n] = max(worst[n], abs(a_cycle - target), abs(a_lp - target))
    ok = worst[32] < 0.05 and worst[64] < 0.02 and slowest < 60
    record(1, ok, f"max |alpha - |c|^2/2|: n=32 {worst[32]:.4f} (<0.05), "
                  f"n=64 {worst[64]:.4f} (<0.02); slowest class-grid {slowest:.1f}s")
    assert ok


def test_criterion_02_duality(instance_runs):
    gaps = {name: abs(run.alpha - run.alpha_lp) for name, run in instance_runs}
    worst = max(gaps.values())
    non_closed = sum(1 for _, form, _, _ in INSTANCES if form is not None)
    ok = worst < 1e-7 and len(gaps) >= 6 and non_closed >= 1
    record(2, ok, f"max |alpha_cycle - alpha_lp| = {worst:.2e} over {len(gaps)} instances "
                  f"({non_closed} non-closed)")
    assert ok


def test_criterion_03_strict_positivity(twin):
    t = time.perf_counter()
    g = build_action_graph(twin, CohomologyClass(0.0, 0.0), **dict(MAGNETIC_GRID, n=48))
    a = alpha_bisection(g).alpha
    dt = time.perf_counter() - t
    ok = a > 0.005 and dt < 120
    record(3, ok, f"twin lines, c=0, n=48: alpha = {a:.6f} (>0.005), {dt:.1f}s")
    assert ok


def test_criterion_04_inclusions_and_energy(instance_runs):
    worst_ratio, chain = 0.0, True
    for _, run in instance_runs:
        S = run.sets
        chain &= bool(np.isin(S.mather_nodes, S.aubry_nodes).all()
                      and np.isin(S.aubry_nodes, S.mane_nodes).all())
        target = np.sqrt(2 * run.alpha)
        dev = np.abs(S.speeds() - target).max()
        tol = 0.1 * target
        worst_ratio = max(worst_ratio, dev / tol if tol > 0 else (0.0 if dev == 0 else np.inf))
    ok = chain and worst_ratio <= 1.0
    record(4, ok, f"inclusion chain {'holds' if chain else 'BROKEN'}; worst speed deviation "
                  f"{worst_ratio:.2f} x speed_tol over {len(instance_runs)} instances")
    assert ok


def test_criterion_05_potential_axioms(twin):
    g = build_action_graph(twin, CohomologyClass(0.1, -0.2), **dict(MAGNETIC_GRID, n=16))
    a = alpha_bisection(g).alpha
    phi = potential_matrix(g, a, range(g.V))
    delta = phi + phi.T
    x, y, z = np.random.default_rng(0).integers(g.V, size=(3, 1000))
    tri_phi = float(np.max(phi[x, z] - phi[x, y] - phi[y, z]))
    tri_delta = float(np.max(delta[x, z] - delta[x, y] - delta[y, z]))
    sym = float(np.abs(delta - delta.T).max())
    neg = float(-delta.min())
    ok = tri_phi < 1e-9 and tri_delta < 1e-9 and sym == 0 and neg <= 1e-12
    record(5, ok, f"triangle excess Phi {max(tri_phi, 0):.1e}, delta {max(tri_delta, 0):.1e}; "
                  f"asymmetry {sym:.1e}; min delta {delta.min():.1e}")
    assert ok


def test_criterion_06_continuity(twin):
    idx = [2, 4, 8, 16, 32]
    forms = [TWIN + TrigOneForm.from_terms((), [[1, 0, 0.0, 1.0 / n]]) for n in idx]
    t = time.perf_counter()
    rep = continuity_modulus_check(twin, forms, (0.0, 0.0), MAGNETIC_GRID, idx)
    dt = time.perf_counter() - t
    last = rep.rows[-1]
    ok = all(r.satisfied for r in rep.rows) and last.gap < 5 * last.bound and dt < 600
    record(6, ok, f"bound holds for n in {idx}: {all(r.satisfied for r in rep.rows)}; "
                  f"n=32 gap {last.gap:.4f} vs predicted {last.bound:.4f}; {dt:.1f}s")
    assert ok


def test_criterion_07_collapse(twin, twin_run, twin_perturbation):
    t = time.perf_counter()
    rep = verify_collapse(twin, CohomologyClass(0.0, 0.0), twin_perturbation, MAGNETIC_GRID,
                          twin_run)
    dt = time.perf_counter() - t
    single = len(twin_run.sets.measure.support(1e-7)) == len(twin_run.sets.mather_nodes)
    cell = 1.0 / MAGNETIC_GRID["n"]
    ok = single and rep.mather_hausdorff <= cell and rep.excess_reduction >= 0.9 and dt < 600
    record(7, ok, f"mather displacement {rep.mather_hausdorff:.3g} (<= {cell:.4f}); excess "
                  f"{rep.excess_before} -> {rep.excess_after} "
                  f"({100 * rep.excess_reduction:.0f}% reduction)")
    assert ok


def test_criterion_08_upper_semicontinuity(twin, twin_run, twin_perturbation):
    eps = [0.2, 0.1, 0.05, 0.025]
    rows = usc_sweep(twin, CohomologyClass(0.0, 0.0), twin_perturbation, eps, MAGNETIC_GRID,
                     twin_run)
    d = [r.distance for r in rows]
    cell = 1.0 / MAGNETIC_GRID["n"]
    ok = all(b <= a + cell for a, b in zip(d, d[1:]))
    record(8, ok, "one-sided distances " + ", ".join(f"{x:.3g}" for x in d)
           + f" along eps={eps} (slack {cell:.4f})")
    assert ok


def test_criterion_09_index_machinery():
    L = MagneticLagrangian()
    h = 1e-3
    orbit = periodic_orbit_from_state(L, [0.0, 0.5], [1.0, 0.0], 1.0, h)
    basis = make_basis(orbit, 32)
    xi = np.zeros((basis.m + 1, 2))
    xi[1:-1] = np.random.default_rng(0).normal(size=(basis.m - 1, 2))
    sv = second_variation_consistency(L, basis, xi, h)
    eps = 0.1
    pert = build_perturbation(([[0.0, 0.5]], [[1.0, 0.0]]), constant_lift([1.0, 0.0]), eps,
                              B_radius=0.4, n_freq=24)
    gap = perturbed_index_gap(L, pert, basis, lemma1_constant(0.5))
    Lp = L.with_form(pert.form)
    porbit = find_periodic_orbit(Lp, (orbit.x0, orbit.v0), section=orbit.section.axis, h=h)
    defects = [symplectic_defect(o.monodromy) for o in (orbit, porbit)]
    det = max(d[0] for d in defects)
    asym = max(d[1] for d in defects)
    ok = (sv.gap < 1e-3 and gap.gaps.min() >= 0 and gap.test_gap >= 0.9 * gap.test_bound
          and det < 1e-6 and asym < 1e-4)
    record(9, ok, f"second-variation gap {sv.gap:.1e}; min basis gap {gap.gaps.min():.2e}; "
                  f"test gap {gap.test_gap:.3g} >= {0.9 * gap.test_bound:.3g}; "
                  f"|det-1| {det:.1e}; spectrum asymmetry {asym:.1e}")
    assert ok


def _small_alpha_config():
    cfg = json.loads((CONFIGS / "kinetic_alpha.json").read_text())
    cfg["classes"] = [[0, 0], [1, 0], [0.5, 0.5], [1, 1]]
    cfg["grid"] = {"n": 16, "h": 0.1, "v_cap": 3.0, "max_steps": 2}
    return ExperimentConfig.from_dict(cfg, str(CONFIGS))


def test_criterion_10_determinism(tmp_path):
    runs = [("alpha", _small_alpha_config())]
    runs += [(cmd, ExperimentConfig.load(CONFIGS / "twin_lines.json"))
             for cmd in ("sets", "perturb", "continuity")]
    runs += [("hyperbolic", ExperimentConfig.load(CONFIGS / "free_orbit.json"))]
    differing = []
    for cmd, cfg in runs:
        bodies = []
        for k in range(2):
            out = tmp_path / f"{cmd}_{k}"
            m = execute(cmd, cfg, out, echo=lambda *a: None)
            bodies.append({name: (out / name).read_bytes() for name in m.outputs})
        if bodies[0] != bodies[1]:
            differing.append(cmd)
    ok = not differing
    record(10, ok, f"byte-identical outputs on rerun for {[c for c, _ in runs]}"
                   + (f"; differing: {differing}" if differing else ""))
    assert ok
