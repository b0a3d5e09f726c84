#!/usr/bin/env python3
"""Stable/unstable curves of a perturbed closed geodesic on the flat torus.

The horizontal geodesic x2 = 1/2 is parabolic for free motion.  The bump
form built around it makes it hyperbolic; a weight 1 + 0.5 cos(2 pi x1)
breaks the translation symmetry so the two curves cross at a nonzero angle.
The first crossing angle is reported for two integrator steps.
"""
import argparse

import numpy as np

from magkam.flow import (classify_hyperbolicity, find_periodic_orbit, invariant_manifold_slices,
                         periodic_orbit_from_state)
from magkam.lagrangian import MagneticLagrangian, TrigPoly
from magkam.perturbation import build_perturbation, constant_lift


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--weight", type=float, default=0.5, help="0 gives the symmetric case")
    ap.add_argument("--arc", type=float, default=1.5)
    ap.add_argument("--points", type=int, default=60)
    args = ap.parse_args()

    L = MagneticLagrangian()
    weight = None
    if args.weight:
        weight = TrigPoly.from_terms([[0, 0, 1.0, 0.0], [1, 0, args.weight, 0.0]])
    pert = build_perturbation(([[0.0, 0.5]], [[1.0, 0.0]]), constant_lift([1.0, 0.0]),
                              args.epsilon, B_radius=0.4, n_freq=24, weight=weight)
    Lp = L.with_form(pert.form)
    for h in (2e-3, 1e-3):
        seed = periodic_orbit_from_state(L, [0.0, 0.5], [1.0, 0.0], 1.0, h)
        orbit = find_periodic_orbit(Lp, (seed.x0, seed.v0), section=seed.section.axis, h=h)
        cls = classify_hyperbolicity(orbit.monodromy)
        ms = invariant_manifold_slices(Lp, orbit, args.arc, args.points, h=h)
        first = f"{ms.angles[0]:.4f}" if len(ms.angles) else "none"
        print(f"h={h:g} {cls.kind} exponents={np.round(cls.exponents(orbit.period), 4).tolist()} "
              f"crossings={len(ms.angles)} first_angle={first} transversal={ms.transversal}")


if __name__ == "__main__":
    main()
