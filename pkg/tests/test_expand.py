import itertools
import math

import numpy as np
import pytest

from svemkit.errors import ConfigError, DataError
from svemkit.expand import (Dataset, build_expansion_spec, derive_term_list,
                            expand_rows, load_spec, save_spec, spec_from_dict,
                            spec_to_dict, term_count)


def _brute_force_term_count(d, c, factorial_order, polynomial_order, pc_2way=False):
    """Independent enumeration oracle for d numerics + one c-level factor.

    Counts distinct monomials by explicit combination enumeration instead of
    the recipe builder's construction order.
    """
    count = 1  # intercept
    count += d + (c - 1)  # mains
    factors = list(range(d + 1))  # index d is the categorical
    for order in range(2, factorial_order + 1):
        for combo in itertools.combinations(factors, order):
            cols = 1
            for f in combo:
                cols *= (c - 1) if f == d else 1
            count += cols
    count += d * (polynomial_order - 1)  # pure powers 2..P
    if pc_2way:
        for x in range(d):
            for z in factors:
                if z == x:
                    continue
                count += (c - 1) if z == d else 1
    return count


def _make_data(d, c, n=24):
    rng = np.random.default_rng(d * 10 + c)
    cols = {f"X{i}": rng.uniform(-1, 1, n) for i in range(1, d + 1)}
    cols["C"] = np.array([f"L{i % c + 1}" for i in range(n)])
    return Dataset.from_columns(cols), [f"X{i}" for i in range(1, d + 1)] + ["C"]


class TestTermCounts:
    def test_paper_benchmark_dimensions(self, sim_factors_data):
        mains = ["X1", "X2", "X3", "X4", "X5"]
        for fo, po, expected in [(1, 1, 7), (2, 2, 25), (3, 3, 45)]:
            spec = build_expansion_spec(sim_factors_data, mains,
                                        factorial_order=fo, polynomial_order=po)
            assert term_count(spec) == expected

    def test_order3_breakdown(self, sim_factors_data):
        # intercept 1 + mains 6 + quadratics 4 + two-ways 14 + cubics 4
        # + three-ways 16 = 45, from the enumeration oracle
        assert _brute_force_term_count(4, 3, 3, 3) == 45

    @pytest.mark.parametrize("d", [1, 2, 3, 4, 5])
    @pytest.mark.parametrize("c", [2, 3, 4])
    def test_order2_count_identity(self, d, c):
        data, mains = _make_data(d, c)
        spec = build_expansion_spec(data, mains, factorial_order=2,
                                    polynomial_order=2)
        identity = 1 + d + (c - 1) + math.comb(d, 2) + d * (c - 1) + d
        assert term_count(spec) == identity
        assert term_count(spec) == _brute_force_term_count(d, c, 2, 2)

    @pytest.mark.parametrize("d,c,fo,po,pc", [
        (3, 3, 3, 3, True), (4, 2, 2, 3, True), (2, 4, 1, 2, False),
        (5, 3, 3, 2, False),
    ])
    def test_general_counts_match_enumeration(self, d, c, fo, po, pc):
        data, mains = _make_data(d, c)
        spec = build_expansion_spec(data, mains, factorial_order=fo,
                                    polynomial_order=po, include_pc_2way=pc)
        assert term_count(spec) == _brute_force_term_count(d, c, fo, po, pc)

    def test_term_count_matches_matrix_width(self, order2_spec, sim_factors_data):
        dm = expand_rows(order2_spec, sim_factors_data)
        assert dm.p_full == term_count(order2_spec)


class TestDeterminism:
    def test_build_twice_identical(self, sim_factors_data):
        mains = ["X1", "X2", "X3", "X4", "X5"]
        a = build_expansion_spec(sim_factors_data, mains, factorial_order=2,
                                 polynomial_order=2)
        b = build_expansion_spec(sim_factors_data, mains, factorial_order=2,
                                 polynomial_order=2)
        assert a.term_list == b.term_list
        assert a.column_names() == b.column_names()

    def test_expand_bit_identical(self, order2_spec, sim_factors_data):
        m1 = expand_rows(order2_spec, sim_factors_data)
        m2 = expand_rows(order2_spec, sim_factors_data)
        assert np.array_equal(m1.values, m2.values)

    def test_term_list_rederivable(self, order2_spec):
        assert derive_term_list(order2_spec) == order2_spec.term_list

    def test_single_row_matches_training_row(self, order2_spec, sim_factors_data):
        full = expand_rows(order2_spec, sim_factors_data)
        row = Dataset.from_columns(
            {n: sim_factors_data.column(n)[3:4] for n in sim_factors_data.names})
        single = expand_rows(order2_spec, row)
        assert np.array_equal(single.values[0], full.values[3])


class TestStructure:
    def test_intercept_column_all_ones(self, order2_spec, sim_factors_data):
        dm = expand_rows(order2_spec, sim_factors_data)
        assert np.all(dm.values[:, 0] == 1.0)
        assert dm.column_names[0] == "Intercept"

    def test_reference_level_rows_have_zero_contrasts(self, order2_spec):
        ref = order2_spec.reference_level("X5")
        assert ref == "L1"
        data = Dataset.from_columns({
            "X1": np.array([0.3, -0.2]), "X2": np.array([0.1, 0.9]),
            "X3": np.array([0.5, 0.5]), "X4": np.array([-0.1, 0.2]),
            "X5": np.array([ref, ref]),
        })
        dm = expand_rows(order2_spec, data)
        contrast_cols = [j for j, name in enumerate(dm.column_names) if "X5[" in name]
        assert contrast_cols
        assert np.all(dm.values[:, contrast_cols] == 0.0)

    def test_blocking_additive_only(self, sim_factors_data):
        cols = {n: sim_factors_data.column(n) for n in sim_factors_data.names}
        cols["Block"] = np.array(["a", "b"] * 15)
        data = Dataset.from_columns(cols)
        spec = build_expansion_spec(data, ["X1", "X2", "X3", "X4", "X5"],
                                    blocking=["Block"], factorial_order=3,
                                    polynomial_order=2, include_pc_2way=True)
        block_terms = [t for t in spec.term_list
                       if any(comp[1] == "Block" for comp in t)]
        assert block_terms
        assert all(len(t) == 1 for t in block_terms)

    def test_partial_cubic_dedup_keeps_counts_exact(self, sim_factors_data):
        spec = build_expansion_spec(sim_factors_data, ["X1", "X2", "X3", "X4", "X5"],
                                    factorial_order=2, polynomial_order=2,
                                    include_pc_2way=True)
        names = spec.column_names()
        assert len(names) == len(set(names))


class TestErrors:
    def test_unknown_factor(self, sim_factors_data):
        with pytest.raises(DataError):
            build_expansion_spec(sim_factors_data, ["X1", "nope"])

    def test_single_level_categorical(self):
        data = Dataset.from_columns({"X1": np.arange(6.0),
                                     "C": np.array(["only"] * 6)})
        with pytest.raises(DataError):
            build_expansion_spec(data, ["X1", "C"])

    def test_constant_numeric(self):
        data = Dataset.from_columns({"X1": np.ones(6), "X2": np.arange(6.0)})
        with pytest.raises(DataError):
            build_expansion_spec(data, ["X1", "X2"])

    def test_unseen_level(self, order2_spec):
        data = Dataset.from_columns({
            "X1": np.array([0.1]), "X2": np.array([0.2]),
            "X3": np.array([0.3]), "X4": np.array([0.4]),
            "X5": np.array(["H104"]),
        })
        with pytest.raises(DataError, match="H104"):
            expand_rows(order2_spec, data)

    def test_missing_factor(self, order2_spec):
        data = Dataset.from_columns({"X1": np.array([0.1])})
        with pytest.raises(DataError):
            expand_rows(order2_spec, data)

    def test_blocking_overlap_rejected(self, sim_factors_data):
        with pytest.raises(ConfigError):
            build_expansion_spec(sim_factors_data, ["X1", "X2"], blocking=["X1"])

    def test_order_below_one_rejected(self, sim_factors_data):
        with pytest.raises(ConfigError):
            build_expansion_spec(sim_factors_data, ["X1"], factorial_order=0)


class TestSerialization:
    def test_round_trip_preserves_terms(self, order2_spec, sim_factors_data, tmp_path):
        path = tmp_path / "spec.json"
        save_spec(order2_spec, path)
        loaded = load_spec(path)
        assert loaded.term_list == order2_spec.term_list
        m1 = expand_rows(order2_spec, sim_factors_data)
        m2 = expand_rows(loaded, sim_factors_data)
        assert np.array_equal(m1.values, m2.values)

    def test_dict_round_trip(self, order2_spec):
        again = spec_from_dict(spec_to_dict(order2_spec))
        assert again.term_list == order2_spec.term_list
        assert again.numeric_ranges == order2_spec.numeric_ranges

    def test_bad_format_rejected(self, order2_spec):
        doc = spec_to_dict(order2_spec)
        doc["format"] = "something-else"
        with pytest.raises(ConfigError):
            spec_from_dict(doc)


class TestDatasetCsv:
    def test_csv_typing_rule(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b,c\n1,x,2.5\n2,y,3.5\n")
        data = Dataset.from_csv(path)
        assert data.kinds == {"a": "numeric", "b": "categorical", "c": "numeric"}

    def test_missing_values_rejected_by_modeling(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,0.5\n,0.7\n")
        data = Dataset.from_csv(path)
        with pytest.raises(DataError):
            build_expansion_spec(data, ["a", "b"])
