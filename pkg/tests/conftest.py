import numpy as np
import pytest

from svemkit.expand import Dataset, build_expansion_spec


@pytest.fixture
def sim_factors_data():
    """Four numerics on [-1, 1] plus a balanced 3-level factor, n = 30."""
    rng = np.random.default_rng(1234)
    n = 30
    cols = {f"X{i}": rng.uniform(-1.0, 1.0, n) for i in range(1, 5)}
    cols["X5"] = np.array(["L1", "L2", "L3"] * (n // 3))
    return Dataset.from_columns(cols)


@pytest.fixture
def order2_spec(sim_factors_data):
    return build_expansion_spec(
        sim_factors_data, ["X1", "X2", "X3", "X4", "X5"],
        factorial_order=2, polynomial_order=2)


@pytest.fixture
def signal_data(sim_factors_data):
    """order2 factors plus a smooth response with moderate noise."""
    rng = np.random.default_rng(77)
    d = sim_factors_data
    eta = (2.0 * d.column("X1") - 1.5 * d.column("X2") * d.column("X3")
           + d.column("X4") ** 2)
    cols = {name: d.column(name) for name in d.names}
    cols["y"] = eta + rng.normal(0.0, 0.3, d.n_rows)
    cols["eta"] = eta
    return Dataset.from_columns(cols)
