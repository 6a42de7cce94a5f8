import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from healthnet.backbone import (
    BackboneParams,
    count_surviving,
    noise_corrected_backbone,
    null_model,
    tune_delta,
    write_scores,
)
from healthnet.graph import from_edges
from healthnet.synthetic import planted_heavy_edge, planted_partition

from oracles import backbone_edges


def kept_pairs(g, params):
    out, ids = noise_corrected_backbone(g, params)
    return {(int(ids[a]), int(ids[b])) for a, b, _ in out.edges()}


def k4(weight=1):
    return from_edges(list("abcd"), [1] * 4, [(a, b, weight) for a in range(4) for b in range(a + 1, 4)])


def test_k4_expectation_and_variance():
    sc = null_model(k4())
    # s = 3 for every node, T = 6: E = 9 / 12, Var = E (1 - E / T)
    assert np.allclose(sc.expected, 0.75)
    assert np.allclose(sc.variance, 0.75 * (1 - 0.75 / 6))


def test_k4_pruning_threshold():
    # each edge sits 0.25 above its expectation, i.e. 0.25 / sqrt(Var) = 0.3086 SDs
    assert count_surviving(k4(), 0.0) == 6
    assert count_surviving(k4(), 0.3) == 6
    assert count_surviving(k4(), 0.5) == 0
    out, _ = noise_corrected_backbone(k4(), BackboneParams(delta=0.5))
    assert out.n_edges == 0 and out.n_nodes == 0


def test_zero_survivors_logs_warning(caplog):
    noise_corrected_backbone(k4(), BackboneParams(delta=5))
    assert any("no edges survive" in r.message for r in caplog.records)


def test_planted_heavy_edge():
    g, planted = planted_heavy_edge()
    kept = kept_pairs(g, BackboneParams(delta=2.0))
    assert planted in kept
    unit = [(a, b) for a, b, w in g.edges() if w == 1]
    assert sum(e not in kept for e in unit) >= 0.9 * len(unit)


def test_matches_oracle_on_random_graphs():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(3, 15))
        edges = [(a, b, int(rng.integers(1, 9))) for a in range(n) for b in range(a + 1, n) if rng.random() < 0.5]
        if not edges:
            continue
        g = from_edges([f"n{i}" for i in range(n)], [1] * n, edges)
        for delta in (0.0, 0.5, 1.0, 2.0):
            assert kept_pairs(g, BackboneParams(delta=delta)) == backbone_edges(n, edges, delta)


def test_delta_zero_identity_when_all_exceed():
    # a perfect matching: each edge carries all of both endpoints' strength
    g = from_edges(list("abcd"), [1] * 4, [(0, 1, 5), (2, 3, 5)])
    out, _ = noise_corrected_backbone(g, BackboneParams(delta=0.0))
    assert out == g


def test_keep_isolates():
    out, ids = noise_corrected_backbone(k4(), BackboneParams(delta=5, keep_isolates=True))
    assert out.n_nodes == 4 and out.n_edges == 0 and ids.tolist() == [0, 1, 2, 3]


def test_errors():
    with pytest.raises(ValueError):
        BackboneParams(delta=-1)
    with pytest.raises(ValueError):
        noise_corrected_backbone(from_edges(["a"], [1], []))


def test_tune_removes_single_weakest_edge():
    # a heavy triangle plus one light chord; only the chord is weak
    edges = [(0, 1, 20), (1, 2, 20), (0, 2, 20), (2, 3, 20), (3, 4, 20), (2, 4, 20), (0, 4, 1)]
    g = from_edges([f"n{i}" for i in range(5)], [1] * 5, edges)
    res = tune_delta(g, g.n_edges - 1)
    assert res.converged and res.achieved == g.n_edges - 1
    out, ids = noise_corrected_backbone(g, BackboneParams(delta=res.delta))
    kept = {(int(ids[a]), int(ids[b])) for a, b, _ in out.edges()}
    assert (0, 4) not in kept


def test_tune_full_target_gives_zero():
    g = from_edges(list("abcd"), [1] * 4, [(0, 1, 5), (2, 3, 5)])
    res = tune_delta(g, 2)
    assert res.delta == 0.0 and res.achieved == 2


def test_tune_halves_ten_thousand_edges():
    g = planted_partition(2_000, 10_000, 20, p_in=0.7, seed=1)
    target = g.n_edges // 2
    res = tune_delta(g, target)
    assert abs(res.achieved - target) <= 0.01 * target
    assert count_surviving(g, res.delta) == res.achieved


def test_scores_side_file(tmp_path):
    g, _ = planted_heavy_edge(n=6, p=0.6)
    write_scores(g, tmp_path / "s.tsv")
    lines = (tmp_path / "s.tsv").read_text().splitlines()
    assert lines[0] == "u\tv\tw\tE\tVar\tscore"
    assert len(lines) == g.n_edges + 1
    u, v, w, e, var, z = lines[1].split("\t")
    assert float(z) == pytest.approx((float(w) - float(e)) / math.sqrt(float(var)))


weighted_graphs = st.integers(3, 10).flatmap(
    lambda n: st.lists(
        st.tuples(st.integers(0, n - 1), st.integers(0, n - 1), st.integers(1, 20)).filter(lambda t: t[0] != t[1]),
        min_size=1,
        max_size=25,
    ).map(lambda es: (n, [(min(a, b), max(a, b), w) for a, b, w in es]))
)


@given(weighted_graphs, st.floats(0, 3), st.floats(0, 3))
def test_monotone_in_delta(ng, d1, d2):
    n, edges = ng
    g = from_edges([f"n{i}" for i in range(n)], [1] * n, edges)
    lo, hi = sorted((d1, d2))
    assert kept_pairs(g, BackboneParams(delta=hi)) <= kept_pairs(g, BackboneParams(delta=lo))


@given(weighted_graphs, st.floats(0, 3), st.randoms())
def test_relabeling_invariant(ng, delta, rnd):
    n, edges = ng
    g = from_edges([f"n{i}" for i in range(n)], [1] * n, edges)
    perm = list(range(n))
    rnd.shuffle(perm)
    h = from_edges([f"n{i}" for i in range(n)], [1] * n, [(perm[a], perm[b], w) for a, b, w in edges])
    kept_g = {tuple(sorted((perm[a], perm[b]))) for a, b in kept_pairs(g, BackboneParams(delta=delta))}
    assert kept_g == kept_pairs(h, BackboneParams(delta=delta))


@given(weighted_graphs, st.floats(0, 3))
def test_never_adds_or_reweights(ng, delta):
    n, edges = ng
    g = from_edges([f"n{i}" for i in range(n)], [1] * n, edges)
    out, ids = noise_corrected_backbone(g, BackboneParams(delta=delta))
    orig = {(a, b): w for a, b, w in g.edges()}
    for a, b, w in out.edges():
        assert orig[int(ids[a]), int(ids[b])] == w
