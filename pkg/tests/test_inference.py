import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from healthnet.inference import (
    CausalResult,
    CovariateMatrix,
    MatchingError,
    StatTable,
    average_treatment_effect,
    binarize_treatment,
    bootstrap_ci,
    causal_pipeline,
    correlate_tables,
    derive_seed,
    fit_logistic,
    fit_propensity,
    fmt_ate,
    fmt_r,
    match_pairs,
    naive_difference,
    normalize_outcome,
    pearson,
    read_covariates,
    read_statistics,
    select_confounders_cie,
    select_confounders_hdpsa,
    standardized_mean_differences,
    stars,
)
from healthnet.synthetic import causal_data

from oracles import gradient_descent_logistic, min_total_distance_matching, pearson_closed_form


class TestPearson:
    def test_exact_line(self):
        x = np.arange(10.0)
        r, p = pearson(x, 2 * x + 3)
        assert r == 1.0 and p == 0.0

    def test_small_example(self):
        assert pearson([1, 2, 3], [1, 2, 2])[0] == pytest.approx(pearson_closed_form([1, 2, 3], [1, 2, 2]), abs=1e-12)

    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=30), rng.normal(size=30)
        r, p = pearson(x, y)
        ref = stats.pearsonr(x, y)
        assert r == pytest.approx(ref[0], abs=1e-12) and p == pytest.approx(ref[1], abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            pearson([1, 2], [1, 2])
        with pytest.raises(ValueError):
            pearson([1, 1, 1], [1, 2, 3])
        with pytest.raises(ValueError):
            pearson([1, 2, 3], [1, 2])

    @given(st.lists(st.floats(-100, 100), min_size=3, max_size=15), st.floats(0.1, 10), st.floats(-5, 5), st.data())
    def test_symmetric_and_affine_invariant(self, xs, a, b, data):
        ys = data.draw(st.lists(st.floats(-100, 100), min_size=len(xs), max_size=len(xs)))
        if np.ptp(xs) < 1e-3 or np.ptp(ys) < 1e-3:
            return
        r, _ = pearson(xs, ys)
        assert pearson(ys, xs)[0] == pytest.approx(r, abs=1e-9)
        assert pearson([a * x + b for x in xs], ys)[0] == pytest.approx(r, abs=1e-9)


def test_stars_classes():
    assert [stars(p) for p in (0.005, 0.01, 0.03, 0.05, 0.09, 0.1, 0.5)] == ["***", "**", "**", "*", "*", "", ""]


def test_correlate_uses_common_locations():
    r, _, n = correlate_tables({"a": 1, "b": 2, "c": 3, "d": 9}, {"a": 2, "b": 4, "c": 6, "z": 0})
    assert n == 3 and r == pytest.approx(1.0)


def test_formatting():
    assert fmt_r(-0.4512, 0.003) == "-.45***"
    assert fmt_r(0.2, 0.5) == ".20"
    assert fmt_r(float("nan"), 1.0) == "---"
    res = CausalResult("h", "s", -0.19, -0.3, -0.05, ["x"], 10)
    assert fmt_ate(res) == "-.19*"
    assert fmt_ate(CausalResult("h", "s", -0.1, -0.3, 0.05, [], 10)) == "-.10"
    assert fmt_ate(None) == "---"


class TestTreatmentAndOutcome:
    def test_even_median(self):
        assert binarize_treatment({"a": 1, "b": 2, "c": 3, "d": 4}) == {"a": 0, "b": 0, "c": 1, "d": 1}

    def test_odd_median_is_control(self):
        assert binarize_treatment({"a": 1, "b": 2, "c": 3}) == {"a": 0, "b": 0, "c": 1}

    def test_constant_rejected(self):
        with pytest.raises(ValueError):
            binarize_treatment({"a": 1, "b": 1})

    @given(st.lists(st.integers(-50, 50), min_size=2, max_size=20, unique=True), st.randoms())
    def test_at_most_half_and_order_free(self, vals, rnd):
        d = {f"l{i}": v for i, v in enumerate(vals)}
        items = list(d.items())
        rnd.shuffle(items)
        t = binarize_treatment(d)
        assert t == binarize_treatment(dict(items))
        assert sum(t.values()) <= len(vals) // 2

    def test_normalize(self):
        assert normalize_outcome({"a": -1, "b": 0, "c": 1}) == {"a": 0.0, "b": 0.5, "c": 1.0}
        assert normalize_outcome({"a": 3, "b": 7}) == {"a": 0.0, "b": 1.0}
        with pytest.raises(ValueError):
            normalize_outcome({"a": 1, "b": 1})

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=10), st.floats(0.1, 5), st.floats(-5, 5))
    def test_normalize_affine_invariant(self, vals, a, b):
        if np.ptp(vals) < 1e-6:
            return
        d = {str(i): v for i, v in enumerate(vals)}
        base = normalize_outcome(d)
        moved = normalize_outcome({k: a * v + b for k, v in d.items()})
        assert all(math.isclose(base[k], moved[k], abs_tol=1e-9) for k in d)


class TestLogistic:
    def test_matches_gradient_descent(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=(20, 2))
        t = (x[:, 0] - 0.5 * x[:, 1] + rng.normal(size=20) > 0).astype(float)
        fit = fit_logistic(x, t)
        ref = gradient_descent_logistic(x, t)
        assert np.allclose(np.r_[fit.intercept, fit.coef], ref, atol=1e-4)

    def test_uninformative_covariate_gives_base_rate(self):
        x = np.array([[-1.0], [1.0], [-1.0], [1.0], [-1.0], [1.0]])
        t = np.array([1, 1, 0, 0, 0, 0], dtype=float)
        assert np.allclose(fit_logistic(x, t).probabilities, 1 / 3, atol=1e-6)

    def test_separable_is_monotone(self):
        x = np.arange(8.0)[:, None]
        t = (x[:, 0] > 3.5).astype(float)
        probs = fit_logistic(x, t).probabilities
        assert (np.diff(probs) >= 0).all() and probs[0] < 0.5 < probs[-1]

    def test_propensity_by_location(self):
        cov = CovariateMatrix(list("abcd"), ["x"], [[0.0], [1.0], [2.0], [3.0]])
        prop = fit_propensity(cov, {"a": 0, "b": 1, "c": 0, "d": 1})
        assert list(prop) == list("abcd") and prop["d"] > prop["a"]


class TestMatching:
    def test_nearest(self):
        m = match_pairs({"t": 0.8, "c1": 0.7, "c2": 0.2}, {"t": 1, "c1": 0, "c2": 0})
        assert m.pairs == [("t", "c1")]

    def test_caliper_error(self):
        with pytest.raises(MatchingError):
            match_pairs({"t": 0.8, "c": 0.7}, {"t": 1, "c": 0}, caliper=0.05)

    def test_unmatched_reported(self):
        m = match_pairs({"t1": 0.8, "t2": 0.3, "c": 0.75}, {"t1": 1, "t2": 1, "c": 0})
        assert m.pairs == [("t1", "c")] and m.unmatched == ["t2"]

    def test_symmetric_fixture_equals_exhaustive_oracle(self):
        prop = {"t1": 0.9, "t2": 0.6, "t3": 0.3, "c1": 0.85, "c2": 0.55, "c3": 0.25}
        treat = {k: int(k[0] == "t") for k in prop}
        m = match_pairs(prop, treat)
        best = min_total_distance_matching(prop, ["t1", "t2", "t3"], ["c1", "c2", "c3"])
        assert sorted(m.pairs) == sorted(best[1])

    def test_needs_both_groups(self):
        with pytest.raises(MatchingError):
            match_pairs({"a": 0.5}, {"a": 1})

    @given(st.lists(st.tuples(st.floats(0.01, 0.99), st.booleans()), min_size=2, max_size=20))
    def test_pairs_cross_groups_and_cover_treated(self, rows):
        prop = {f"l{i}": p for i, (p, _) in enumerate(rows)}
        treat = {f"l{i}": int(z) for i, (_, z) in enumerate(rows)}
        n_t = sum(treat.values())
        if n_t == 0 or n_t == len(rows):
            return
        m = match_pairs(prop, treat)
        assert all(treat[t] == 1 and treat[c] == 0 for t, c in m.pairs)
        assert len({c for _, c in m.pairs}) == len(m.pairs)
        if len(rows) - n_t >= n_t:
            assert len(m.pairs) == n_t


class TestEffect:
    def test_ate_arithmetic(self):
        y = {"t1": 0.3, "c1": 0.5, "t2": 0.1, "c2": 0.5}
        assert average_treatment_effect([("t1", "c1"), ("t2", "c2")], y) == pytest.approx(-0.3)
        assert average_treatment_effect([("t1", "t1")], y) == 0.0

    @given(st.floats(-5, 5))
    def test_ate_linear_in_outcome(self, a):
        y = {"t1": 0.3, "c1": 0.5, "t2": 0.1, "c2": 0.9}
        pairs = [("t1", "c1"), ("t2", "c2")]
        scaled = {k: a * v for k, v in y.items()}
        assert average_treatment_effect(pairs, scaled) == pytest.approx(a * average_treatment_effect(pairs, y), abs=1e-12)

    def test_bootstrap_constant_difference(self):
        y = {"t1": 1.0, "c1": 0.8, "t2": 0.5, "c2": 0.3}
        lo, hi = bootstrap_ci([("t1", "c1"), ("t2", "c2")], y, seed=3)
        assert lo == pytest.approx(0.2) and hi == pytest.approx(0.2)

    def test_bootstrap_deterministic_and_ordered(self):
        rng = np.random.default_rng(1)
        y = {f"x{i}": float(v) for i, v in enumerate(rng.normal(size=20))}
        pairs = [(f"x{i}", f"x{i + 10}") for i in range(10)]
        a = bootstrap_ci(pairs, y, seed=9)
        assert a == bootstrap_ci(pairs, y, seed=9) and a[0] <= a[1]
        with pytest.raises(ValueError):
            bootstrap_ci(pairs[:1], y)

    def test_bootstrap_calibration(self):
        # percentile intervals on 100 normal differences bracket the mean most of the time
        hits = 0
        for s in range(100):
            rng = np.random.default_rng(s)
            d = rng.normal(0.5, 1.0, size=100)
            y = {f"t{i}": float(v) for i, v in enumerate(d)} | {f"c{i}": 0.0 for i in range(100)}
            lo, hi = bootstrap_ci([(f"t{i}", f"c{i}") for i in range(100)], y, n_resamples=1000, seed=s)
            hits += lo <= 0.5 <= hi
        assert hits >= 90

    def test_naive(self):
        assert naive_difference({"a": 1, "b": 0, "c": 0}, {"a": 1.0, "b": 0.2, "c": 0.4}) == pytest.approx(0.7)


class TestConfounders:
    def test_smd_hand_computed(self):
        cov = CovariateMatrix(list("abcdef"), ["x"], [[1.0], [2.0], [3.0], [2.0], [4.0], [6.0]])
        treat = {"a": 0, "b": 0, "c": 0, "d": 1, "e": 1, "f": 1}
        # means 2 and 4, sample variances 1 and 4
        assert standardized_mean_differences(["x"], cov, treat)["x"] == pytest.approx(2 / math.sqrt(2.5), abs=1e-12)

    def test_smd_zero_cases(self):
        cov = CovariateMatrix(list("abcd"), ["same", "flat"], [[1, 5], [2, 5], [1, 5], [2, 5]])
        treat = {"a": 0, "b": 0, "c": 1, "d": 1}
        smd = standardized_mean_differences(["same", "flat"], cov, treat)
        assert smd == {"same": 0.0, "flat": 0.0}
        assert select_confounders_hdpsa(["same", "flat"], cov, treat) == []

    def test_hdpsa_picks_treatment_copy_first(self):
        rng = np.random.default_rng(0)
        t = np.array([0, 1] * 10)
        cov = CovariateMatrix([f"l{i}" for i in range(20)], ["copy", "noise"], np.c_[t, rng.normal(size=20)])
        treat = {f"l{i}": int(v) for i, v in enumerate(t)}
        assert standardized_mean_differences(["copy"], cov, treat)["copy"] == math.inf
        assert select_confounders_hdpsa(["copy", "noise"], cov, treat)[0] == "copy"

    def test_cie_ignores_pure_noise_on_large_data(self):
        rng = np.random.default_rng(4)
        n = 400
        conf, noise = rng.normal(size=n), rng.normal(size=n)
        t = (conf + rng.normal(size=n) > 0).astype(int)
        y = 0.5 * conf - 1.0 * t + 0.1 * rng.normal(size=n)
        locs = [f"l{i}" for i in range(n)]
        cov = CovariateMatrix(locs, ["conf", "noise"], np.c_[conf, noise])
        treat, out = dict(zip(locs, t.tolist())), dict(zip(locs, y.tolist()))
        sel = select_confounders_cie(["conf", "noise"], cov, treat, out, caliper=0.05)
        assert "conf" in sel and "noise" not in sel

    def test_cie_single_candidate_against_empty_model(self):
        # without x every propensity ties and e, f take a, b by name; with x they take c, d
        cov = CovariateMatrix(list("abcdef"), ["x"], [[0.0], [1.0], [2.0], [3.0], [2.5], [3.5]])
        treat = {"a": 0, "b": 0, "c": 0, "d": 0, "e": 1, "f": 1}
        y = {"a": 0.0, "b": 0.0, "c": 0.5, "d": 0.5, "e": 0.6, "f": 0.6}
        assert select_confounders_cie(["x"], cov, treat, y) == ["x"]
        flat = {"a": 0.0, "b": 0.0, "c": 0.0, "d": 0.0, "e": 0.6, "f": 0.6}
        assert select_confounders_cie(["x"], cov, treat, flat) == []

    def test_covariate_imputation(self):
        cov = CovariateMatrix(list("abc"), ["x"], [[1.0], [np.nan], [3.0]])
        assert cov.values[1, 0] == 2.0 and cov.imputed == {"x": 1}


class TestPipeline:
    def setup(self, seed=0):
        locs, names, x, stat, y = causal_data(seed)
        return StatTable("stat", stat), y, CovariateMatrix(locs, names, x)

    def test_deterministic(self):
        stat, y, cov = self.setup()
        a = causal_pipeline(stat, y, cov, seed=5, caliper=0.15)
        b = causal_pipeline(stat, y, cov, seed=5, caliper=0.15)
        assert (a.ate, a.ci_low, a.ci_high, a.selected_confounders) == (b.ate, b.ci_low, b.ci_high, b.selected_confounders)
        assert a.ci_low <= a.ci_high and a.n_pairs >= 2

    def test_too_few_locations(self):
        stat, y, cov = self.setup()
        keep = cov.locations[:5]
        with pytest.raises(ValueError):
            causal_pipeline(StatTable("s", {k: stat.values[k] for k in keep}), y, cov)

    def test_selected_set_is_intersection_or_fallback(self):
        stat, y, cov = self.setup(3)
        res = causal_pipeline(stat, y, cov, seed=1, caliper=0.15)
        inter = [c for c in res.hdpsa if c in res.cie]
        assert res.selected_confounders == (inter or res.hdpsa)


def test_derive_seed_stable():
    assert derive_seed(0, "a", "b") == derive_seed(0, "a", "b")
    assert derive_seed(0, "a", "b") != derive_seed(1, "a", "b")
    assert derive_seed(0, "ab") != derive_seed(0, "a", "b")


def test_table_readers(tmp_path):
    (tmp_path / "s.tsv").write_text("location\tx\ty\nA\t1\t\nB\t2\t3\n")
    st_ = read_statistics(tmp_path / "s.tsv")
    assert st_["x"].values == {"A": 1.0, "B": 2.0} and st_["y"].values == {"B": 3.0}
    (tmp_path / "c.csv").write_text("location,a\nA,1\nB,NA\nC,5\n")
    cov = read_covariates(tmp_path / "c.csv")
    assert cov.values[:, 0].tolist() == [1.0, 3.0, 5.0]
