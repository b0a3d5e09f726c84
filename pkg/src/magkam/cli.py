"""``magkam`` command line: config-driven pipelines with reproducible outputs.

Each pipeline returns ``{filename: body}``; bodies are deterministic for a
given config, and every file is written behind a header line carrying the
config hash and the tool version.
"""
from __future__ import annotations

import json
import math
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, ExperimentConfig, RunManifest, versions, write_output
from . import __version__
from .critical import (GraphError, alpha_bisection, alpha_function_scan, build_action_graph,
                       continuity_modulus_check)
from .flow import (classify_hyperbolicity, find_periodic_orbit, periodic_orbit_from_state)
from .index_form import (hyperbolicity_cross_check, make_basis, perturbed_index_gap,
                         second_variation_consistency)
from .lagrangian import CohomologyClass, TrigOneForm, TrigPoly
from .perturbation import (build_aubry_lift, build_perturbation, compute_sets, constant_lift,
                           usc_sweep, verify_collapse, verify_lemma1_bound)
from .weak_kam import mane_potential


class _Timer(dict):
    @contextmanager
    def stage(self, name):
        t = time.perf_counter()
        yield
        self[name] = round(time.perf_counter() - t, 3)


def _fmt(x) -> str:
    return f"{x:.12g}"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))


# ---------------------------------------------------------------- pipelines

def run_alpha(cfg: ExperimentConfig, timer: _Timer, echo=print) -> dict:
    L = cfg.lagrangian()
    with timer.stage("alpha_scan"):
        scan = alpha_function_scan(L, cfg.classes, cfg.grid.kwargs(), cfg.tolerances.alpha)
    for c, a, b in zip(scan.classes, scan.alpha, scan.alpha_lp):
        echo(f"c=({_fmt(c[0])}, {_fmt(c[1])}) alpha_cycle={a:.9f} alpha_lp={b:.9f}")
    summary = {"max_gap": float(scan.gap.max()),
               "convexity_violations": scan.convexity_violations,
               "ray_ratios": [{"direction": list(d), "t_ratio": r}
                              for d, r in sorted(scan.ray_ratios.items())]}
    return {"alpha_scan.csv": scan.to_csv(), "alpha_summary.json": _dumps(summary)}


def run_sets(cfg: ExperimentConfig, timer: _Timer, echo=print) -> dict:
    L = cfg.lagrangian()
    tol = cfg.tolerances
    out = {}
    summary = ["c1,c2,alpha,mather,aubry,mane_nodes,mane_edges,excess,max_speed_dev,speed_tol"]
    for i, c in enumerate(cfg.classes):
        with timer.stage(f"sets_{i}"):
            run = compute_sets(L, CohomologyClass(*c), cfg.grid.kwargs(), tol_tight=tol.tight,
                               tol_static=tol.static)
        S = run.sets
        if len(S.aubry_nodes) == 0:
            raise RuntimeError("empty Aubry set on a strongly connected graph")
        target = math.sqrt(2.0 * run.alpha)
        dev = float(np.abs(S.speeds() - target).max()) if len(S.mane_edges) else 0.0
        source = int(S.mather_nodes[0]) if len(S.mather_nodes) else 0
        with timer.stage(f"potential_{i}"):
            phi = mane_potential(run.graph, run.alpha, source)
        out[f"sets_{i}.csv"] = S.to_csv()
        out[f"potential_{i}.csv"] = phi.to_csv(run.graph.n)
        row = (f"{_fmt(c[0])},{_fmt(c[1])},{run.alpha:.12f},{len(S.mather_nodes)},"
               f"{len(S.aubry_nodes)},{len(S.mane_nodes)},{len(S.mane_edges)},"
               f"{S.excess_edges},{dev:.6e},{tol.speed_frac * target:.6e}")
        summary.append(row)
        echo(f"c=({_fmt(c[0])}, {_fmt(c[1])}) alpha={run.alpha:.9f} mather={len(S.mather_nodes)}"
             f" <= aubry={len(S.aubry_nodes)} <= mane={len(S.mane_nodes)}")
    out["sets_summary.csv"] = "\n".join(summary) + "\n"
    return out


def run_perturb(cfg: ExperimentConfig, timer: _Timer, echo=print) -> dict:
    L = cfg.lagrangian()
    c = CohomologyClass(*cfg.classes[0])
    grid = cfg.grid.kwargs()
    p, tol = cfg.perturbation, cfg.tolerances
    with timer.stage("base_sets"):
        base = compute_sets(L, c, grid, tol_tight=tol.tight, tol_static=tol.static)
    with timer.stage("lift"):
        X = build_aubry_lift(base.sets, p.sigma)
        lem = verify_lemma1_bound(L, c, base.alpha, X, p.r_U_cells / cfg.grid.n, seed=cfg.seed)
        pert = build_perturbation(base.sets, X, p.epsilon, p.profile, p.B_radius, p.n_freq,
                                  p.grid_n)
    with timer.stage("collapse"):
        col = verify_collapse(L, c, pert, grid, base, tol.tight)
    with timer.stage("usc"):
        rows = usc_sweep(L, c, pert, p.epsilons, grid, base, tol.tight)
    echo(f"alpha={base.alpha:.9f} K={lem.K:.6g} excess {col.excess_before} -> {col.excess_after}"
         f" mather_hausdorff={col.mather_hausdorff:.3g}")
    csv = ["epsilon,distance,reverse,mather_displacement,alpha"]
    csv += [f"{_fmt(r.epsilon)},{r.distance:.10g},{r.reverse:.10g},{r.mather:.10g},"
            f"{r.alpha:.12f}" for r in rows]
    usc = {"cell": 1.0 / cfg.grid.n,
           "rows": [{"epsilon": r.epsilon, "distance": r.distance, "reverse": r.reverse,
                     "mather_displacement": r.mather, "alpha": r.alpha} for r in rows]}
    collapse = col.to_dict()
    collapse["lemma1"] = lem.to_dict()
    return {"collapse.json": _dumps(collapse), "usc.json": _dumps(usc),
            "usc.csv": "\n".join(csv) + "\n",
            "perturbation.json": pert.form.dumps() + "\n",
            "perturbation_sidecar.json": pert.sidecar(lem.K, lem.to_dict()) + "\n"}


def _orbit_weight(terms) -> TrigPoly | None:
    if not terms:
        return None
    return TrigPoly.from_terms([[0, 0, 1.0, 0.0]] + list(terms))


def run_hyperbolic(cfg: ExperimentConfig, timer: _Timer, echo=print) -> dict:
    L = cfg.lagrangian()
    c = CohomologyClass(*cfg.classes[0])
    o = cfg.orbit
    with timer.stage("orbit"):
        if o.period is not None:
            orbit = periodic_orbit_from_state(L, o.x0, o.v0, o.period, o.h)
        else:
            orbit = find_periodic_orbit(L, (o.x0, o.v0), h=o.h)
        cls0 = classify_hyperbolicity(orbit.monodromy, cfg.tolerances.spec)
    seg = orbit.segment
    stride = max(1, (len(seg.t) - 1) // 256)
    pts = seg.lift[::stride]
    starts, disp = np.mod(pts[:-1], 1.0), np.diff(pts, axis=0)
    X = constant_lift(o.lift if o.lift is not None else o.v0, np.mod(pts, 1.0))
    with timer.stage("lemma1"):
        alpha = alpha_bisection(build_action_graph(L, c, **cfg.grid.kwargs()),
                                cfg.tolerances.alpha).alpha
        lem = verify_lemma1_bound(L, c, alpha, X, cfg.perturbation.r_U_cells / cfg.grid.n,
                                  seed=cfg.seed)
    eps_top = max(o.epsilons) if o.epsilons else 0.0
    pert = build_perturbation((starts, disp), X, eps_top, "quadratic", o.B_radius, o.n_freq,
                              cfg.perturbation.grid_n, weight=_orbit_weight(o.weight))
    basis = make_basis(orbit, o.nodes)
    rng = np.random.default_rng(cfg.seed)
    xi = np.zeros((basis.m + 1, 2))
    xi[1:-1] = rng.normal(size=(basis.m - 1, 2))
    with timer.stage("index"):
        sv = second_variation_consistency(L, basis, xi, o.h)
        gap = perturbed_index_gap(L, pert, basis, lem.K)
    with timer.stage("cross_check"):
        rows = hyperbolicity_cross_check(L, pert, orbit, o.epsilons, lem.K, o.nodes,
                                         cfg.tolerances.spec, o.manifolds, o.arc_length,
                                         o.manifold_points)
    for r in rows:
        echo(f"eps={_fmt(r.epsilon)} {r.kind} exponents={np.round(r.exponents, 6).tolist()}"
             f" min_gap={r.min_gap:.4g}")
    report = gap.to_dict()
    report.update({
        "orbit": {"x0": orbit.x0, "v0": orbit.v0, "period": orbit.period,
                  "closure_residual": orbit.closure_residual, "classification": cls0.kind,
                  "monodromy": orbit.monodromy},
        "second_variation": {"index": sv.index_value, "second_difference": sv.second_difference,
                             "gap": sv.gap, "first_variation": sv.first_variation,
                             "delta": sv.delta},
        "lemma1": lem.to_dict(), "alpha": alpha,
        "floquet": [r.to_dict() for r in rows],
        "classification": rows[-1].kind if rows else cls0.kind})
    csv = ["epsilon,kind,exp_min,exp_max,period,min_gap,predicted_hyperbolic,agrees,"
           "crossings,min_angle,primary_angle"]
    for r in rows:
        e = sorted(r.exponents) if r.exponents else [math.nan, math.nan]
        ang = "" if r.min_angle is None else f"{r.min_angle:.6g},{r.primary_angle:.6g}"
        csv.append(f"{_fmt(r.epsilon)},{r.kind},{e[0]:.10g},{e[-1]:.10g},{r.period:.12g},"
                   f"{r.min_gap:.10g},{str(r.predicted_hyperbolic).lower()},"
                   f"{str(r.agrees).lower()},{r.crossings},{ang or ','}")
    return {"index.json": _dumps(report), "floquet.csv": "\n".join(csv) + "\n"}


def run_continuity(cfg: ExperimentConfig, timer: _Timer, echo=print) -> dict:
    L = cfg.lagrangian()
    s = cfg.continuity
    if s.component not in ("a", "b"):
        raise ConfigError("continuity.component must be 'a' or 'b'")
    base = cfg.form()
    forms = []
    for n in s.indices:
        term = [[s.freq[0], s.freq[1], 0.0, 1.0 / n]]
        extra = TrigOneForm.from_terms(term, ()) if s.component == "a" \
            else TrigOneForm.from_terms((), term)
        forms.append(base + extra)
    with timer.stage("continuity"):
        rep = continuity_modulus_check(L, forms, cfg.classes[0], cfg.grid.kwargs(), s.indices,
                                       tol=cfg.tolerances.alpha)
    for r in rep.rows:
        echo(f"n={r.index} eps={r.eps:.4g} gap={r.gap:.4e} bound={r.bound:.4e}"
             f" ok={r.satisfied}")
    return {"continuity.csv": rep.to_csv()}


PIPELINES = {"alpha": run_alpha, "sets": run_sets, "perturb": run_perturb,
             "hyperbolic": run_hyperbolic, "continuity": run_continuity}


def execute(command: str, cfg: ExperimentConfig, out: Path, dry_run: bool = False,
            echo=print) -> RunManifest:
    manifest = RunManifest(command, cfg.hash, versions(), dry_run=dry_run)
    if dry_run:
        return manifest
    timer = _Timer()
    files = PIPELINES[command](cfg, timer, echo)
    out.mkdir(parents=True, exist_ok=True)
    for name in sorted(files):
        write_output(out / name, cfg, files[name])
        manifest.outputs.append(name)
    manifest.timings = dict(timer)
    (out / f"manifest_{command}.json").write_text(manifest.dumps() + "\n")
    return manifest


# ---------------------------------------------------------------- click

def _subcommand(name, help_text):
    @click.command(name=name, help=help_text)
    @click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                  help="JSON experiment config.")
    @click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
                  help="Output directory (overrides MAGKAM_OUT and the config).")
    @click.option("--dry-run", is_flag=True, help="Validate and print the manifest skeleton.")
    @click.option("--threads", type=click.IntRange(min=1), default=None,
                  help="Worker threads for the compiled kernels.")
    def cmd(config_path, out_dir, dry_run, threads):
        try:
            cfg = ExperimentConfig.load(config_path)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        if threads is not None:
            import numba
            numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
        out = cfg.out_dir(out_dir)
        try:
            m = execute(name, cfg, out, dry_run, echo=click.echo)
        except (ConfigError, GraphError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except Exception as exc:  # module diagnostics go to stderr
            click.echo(f"numerical failure in {type(exc).__module__}: "
                       f"{type(exc).__name__}: {exc}", err=True)
            sys.exit(3)
        if dry_run:
            click.echo(m.dumps())
        else:
            click.echo(f"wrote {len(m.outputs)} files to {out} (config {m.config_hash})")

    return cmd


@click.group()
@click.version_option(__version__, prog_name="magkam")
def main():
    """Aubry-Mather and Mañé-set experiments for magnetic Lagrangians on the torus."""


main.add_command(_subcommand("alpha", "Critical value scan over the configured classes."))
main.add_command(_subcommand("sets", "Discrete Mather, Aubry and Mañé sets with potentials."))
main.add_command(_subcommand("perturb", "Collapse check and upper-semicontinuity sweep."))
main.add_command(_subcommand("hyperbolic", "Index gaps and Floquet scan along a periodic orbit."))
main.add_command(_subcommand("continuity", "Continuity of the critical value in the form."))


if __name__ == "__main__":
    main()
