import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from magkam.critical import alpha_bisection, alpha_lp, build_action_graph
from magkam.lagrangian import CohomologyClass, MagneticLagrangian, TrigOneForm
from magkam.perturbation import compute_sets

settings.register_profile("magkam", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("magkam")

# η = 0.5 sin(2π x1) dx2: two straight static lines x1 = 1/4 and x1 = 3/4
TWIN = TrigOneForm.from_terms((), [[1, 0, 0.0, 0.5]])
MAGNETIC_GRID = dict(n=32, h=0.1, v_cap=2.0, max_steps=3)
KINETIC_GRID = dict(n=32, h=0.05, v_cap=3.0, max_steps=2)


def random_form(rng, n_terms=3, max_freq=2, scale=0.4) -> TrigOneForm:
    def terms():
        k = rng.integers(-max_freq, max_freq + 1, size=(n_terms, 2))
        c = rng.normal(scale=scale, size=(n_terms, 2))
        return np.hstack([k, c]).tolist()
    return TrigOneForm.from_terms(terms(), terms())


@pytest.fixture(scope="session")
def twin():
    return MagneticLagrangian(TWIN)


@pytest.fixture(scope="session")
def twin_run(twin):
    return compute_sets(twin, CohomologyClass(0.0, 0.0), MAGNETIC_GRID)


@pytest.fixture(scope="session")
def kinetic_run():
    return compute_sets(MagneticLagrangian(), CohomologyClass(1.0, 0.0), KINETIC_GRID)


@pytest.fixture(scope="session")
def small_graph(twin):
    g = build_action_graph(twin, CohomologyClass(0.1, -0.2), n=12, h=0.1, v_cap=2.0,
                           max_steps=2)
    return g, alpha_bisection(g).alpha


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = {}


def record(number: int, ok: bool, detail: str):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
