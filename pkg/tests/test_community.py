import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from healthnet.community import (
    DisconnectedGraphError,
    Taxonomy,
    assign_overlaps,
    build_taxonomy,
    detect_communities,
    map_equation_codelength,
    module_codelengths,
    read_partition,
    read_taxonomy,
    top_terms,
    write_partition,
    write_taxonomy,
)
from healthnet.graph import from_edges
from healthnet.synthetic import ring_of_cliques

from oracles import exhaustive_min_codelength, map_codelength, random_connected_edges, same_partition


def two_cliques():
    edges = [(a, b, 1) for a in range(4) for b in range(a + 1, 4)]
    edges += [(a, b, 1) for a in range(4, 8) for b in range(a + 1, 8)]
    edges.append((3, 4, 1))
    return from_edges([f"n{i}" for i in range(8)], [1] * 8, edges), [0] * 4 + [1] * 4


def graph(n, edges):
    return from_edges([f"n{i}" for i in range(n)], [1] * n, edges)


class TestCodelength:
    def test_two_modules_beat_one(self):
        g, truth = two_cliques()
        assert map_equation_codelength(g, truth) < map_equation_codelength(g, [0] * 8)

    def test_one_module_is_node_entropy(self):
        g, _ = two_cliques()
        p = g.strength / g.strength.sum()
        assert map_equation_codelength(g, [0] * 8) == pytest.approx(-(p * np.log2(p)).sum(), abs=1e-12)

    def test_matches_entropy_form(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            n = int(rng.integers(2, 9))
            edges = random_connected_edges(rng, n)
            labels = rng.integers(0, 3, size=n).tolist()
            assert map_equation_codelength(graph(n, edges), labels) == pytest.approx(
                map_codelength(n, edges, labels), abs=1e-12
            )

    def test_dict_partition(self):
        g, truth = two_cliques()
        assert map_equation_codelength(g, dict(enumerate(truth))) == map_equation_codelength(g, truth)

    def test_module_terms_sum(self):
        g, truth = two_cliques()
        flow_terms = module_codelengths(g, truth).sum()
        from healthnet.community import module_flows

        _, exit_ = module_flows(g, truth)
        q = exit_.sum()
        index = q * -(np.log2(exit_ / q) * exit_ / q).sum()
        assert flow_terms + index == pytest.approx(map_equation_codelength(g, truth), abs=1e-12)


class TestDetect:
    def test_two_cliques_recovered(self):
        g, truth = two_cliques()
        hp = detect_communities(g, seed=1)
        assert same_partition(hp.level1, truth)
        assert hp.codelength_level1 < hp.codelength_one_module

    def test_ring_of_four_cliques(self):
        g, truth = ring_of_cliques([5] * 4)
        hp = detect_communities(g, seed=0)
        assert hp.n_modules == 4 and same_partition(hp.level1, truth)

    def test_matches_exhaustive_minimum(self):
        rng = np.random.default_rng(5)
        for t in range(25):
            n = int(rng.integers(3, 8))
            edges = random_connected_edges(rng, n)
            hp = detect_communities(graph(n, edges), seed=t)
            assert hp.codelength_level1 == pytest.approx(exhaustive_min_codelength(n, edges), abs=1e-9)

    def test_reported_codelength_is_exact(self):
        g, _ = ring_of_cliques([6, 7, 8])
        hp = detect_communities(g, seed=3)
        assert hp.codelength_level1 == pytest.approx(map_equation_codelength(g, hp.level1), abs=1e-12)
        assert hp.codelength_level2 == pytest.approx(map_equation_codelength(g, hp.level2_global()), abs=1e-12)

    def test_deterministic_and_thread_invariant(self):
        g, _ = ring_of_cliques([5, 6, 7, 8, 9, 10])
        a = detect_communities(g, seed=42, trials=4)
        b = detect_communities(g, seed=42, trials=4)
        c = detect_communities(g, seed=42, trials=4, threads=3)
        for x in (b, c):
            assert np.array_equal(a.level1, x.level1) and np.array_equal(a.level2, x.level2)

    def test_canonical_labels_by_size(self):
        g, _ = ring_of_cliques([5, 9, 7])
        hp = detect_communities(g, seed=0)
        sizes = np.bincount(hp.level1)
        assert list(sizes) == sorted(sizes, reverse=True)

    def test_disconnected_rejected(self):
        g = graph(4, [(0, 1, 1), (2, 3, 1)])
        with pytest.raises(DisconnectedGraphError):
            detect_communities(g)

    def test_single_node(self):
        hp = detect_communities(graph(1, []))
        assert hp.level1.tolist() == [0]

    def test_level2_nested(self):
        # cliques of cliques: two groups of three 5-cliques
        edges, base = [], 0
        for grp in range(2):
            firsts = []
            for _ in range(3):
                nodes = range(base, base + 5)
                edges += [(a, b, 3) for a in nodes for b in nodes if a < b]
                firsts.append(base)
                base += 5
            edges += [(firsts[0], firsts[1], 1), (firsts[1], firsts[2], 1), (firsts[0], firsts[2], 1)]
        edges.append((0, 15, 1))
        g = graph(base, edges)
        hp = detect_communities(g, seed=0)
        glob = hp.level2_global()
        for s in np.unique(glob):
            assert len(np.unique(hp.level1[glob == s])) == 1


@settings(max_examples=25)
@given(st.integers(3, 7), st.integers(0, 2**31 - 1))
def test_never_worse_than_one_module(n, seed):
    rng = np.random.default_rng(seed)
    edges = random_connected_edges(rng, n)
    hp = detect_communities(graph(n, edges), seed=seed % 1000, trials=2)
    assert hp.codelength_level1 <= hp.codelength_one_module + 1e-12


class TestOverlaps:
    def test_bridge_node_joins_both(self):
        # node 4 splits its strength evenly between two triangles
        edges = [(0, 1, 1), (1, 2, 1), (0, 2, 1), (5, 6, 1), (6, 7, 1), (5, 7, 1), (4, 0, 1), (4, 5, 1), (3, 0, 1), (3, 1, 1)]
        g = graph(8, edges)
        labels = [0, 0, 0, 0, 0, 1, 1, 1]
        ov = assign_overlaps(g, labels, threshold=0.25)
        assert ov[4].modules == {0, 1} and ov[4].strengths[1] == pytest.approx(0.5)
        assert ov[0].modules == {0}

    def test_primary_always_included(self):
        g = graph(3, [(0, 1, 1), (1, 2, 1)])
        ov = assign_overlaps(g, [0, 1, 1], threshold=0.9)
        assert ov[0].primary == 0 and 0 in ov[0].modules

    @given(st.floats(0.01, 1.0))
    def test_higher_threshold_fewer_memberships(self, thr):
        g, _ = ring_of_cliques([4, 5, 6])
        labels = [0] * 4 + [1] * 5 + [2] * 6
        lo = assign_overlaps(g, labels, thr)
        hi = assign_overlaps(g, labels, min(1.0, thr + 0.2))
        assert all(h.modules <= l.modules for h, l in zip(hi, lo))


class TestTaxonomy:
    def test_build_and_roundtrip(self, tmp_path):
        g, _ = ring_of_cliques([5, 6, 7])
        hp = detect_communities(g, seed=0)
        tax = build_taxonomy(g, hp, assign_overlaps(g, hp.level1), k=3, labels={"0": "big"})
        assert [c.cluster_id for c in tax.clusters] == ["0", "1", "2"]
        assert tax.clusters[0].label == "big" and tax.clusters[0].size == 7
        assert len(tax.clusters[0].top_terms) == 3
        assert all(ch.cluster_id.startswith(c.cluster_id + ".") for c in tax.clusters for ch in c.children)
        write_taxonomy(tax, tmp_path / "t.json")
        back = read_taxonomy(tmp_path / "t.json")
        assert back.to_dict() == tax.to_dict()
        json.loads((tmp_path / "t.json").read_text())

    def test_category_sets_include_overlaps(self):
        tax = Taxonomy([], {"x": ["0", "1"]}, 0.0, 0.0)
        from healthnet.community import Cluster

        tax.clusters = [Cluster("0", ["a", "x"], [], 0.0), Cluster("1", ["b"], [], 0.0)]
        assert tax.category_sets()["1"] == {"b", "x"}
        assert tax.category_sets(include_overlaps=False)["1"] == {"b"}

    def test_top_terms_ties(self):
        assert top_terms(["b", "a", "c"], [2, 2, 5], k=2) == ["c", "a"]

    def test_partition_roundtrip(self, tmp_path):
        g, _ = ring_of_cliques([5, 5])
        hp = detect_communities(g, seed=0)
        write_partition(hp, tmp_path / "p.tsv")
        l1, l2 = read_partition(tmp_path / "p.tsv")
        assert np.array_equal(l1, hp.level1) and np.array_equal(l2, hp.level2)
