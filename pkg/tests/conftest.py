import numpy as np
import pytest

import pooled_annuity as pa


@pytest.fixture(scope="session")
def model():
    return pa.ReturnModel()


@pytest.fixture(scope="session")
def life_table():
    return pa.load_default_life_table()


@pytest.fixture(scope="session")
def cohort_100(life_table):
    return pa.cohort(life_table, 100)  # k = 20


@pytest.fixture(scope="session")
def solved_small(model, cohort_100):
    """Solved grids for a short-horizon pool (s=100, a<=3, M=100)."""
    plan = pa.constant_plan(P=10.0, A0=3, k=cohort_100.k, r=0.0, s=100)
    solved = pa.solve(plan, cohort_100, model, pa.SolverConfig(a_max=3))
    return solved


def random_instance(rng, k_max=15, a_max=5):
    """A random small plan/cohort/model triple for property tests."""
    k = int(rng.integers(3, k_max + 1))
    a0 = int(rng.integers(1, a_max + 1))
    d = rng.uniform(0.0, 0.6, size=k)
    d[-1] = 1.0
    w = rng.uniform(0.2, 2.0, size=k)
    r = float(rng.uniform(0.0, 0.05))
    cohort = pa.CohortMortality(s=int(120 - k), d=d)
    plan = pa.WithdrawalPlan(P=1.0, A0=a0, w=w, r=r, s=cohort.s)
    model = pa.ReturnModel(mu=float(rng.uniform(1.02, 1.12)),
                           sigma=float(rng.uniform(0.1, 0.25)), r=r)
    return plan, cohort, model
