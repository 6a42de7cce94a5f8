"""Undirected weighted co-occurrence graph of conditions."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .ingest import MentionRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CooccurrenceGraph:
    """Node table plus canonical (u < v) edge list.

    Attributes
    ----------
    conditions : tuple of str
        Condition string of each node id ``0..N-1``.
    mention_count : ndarray of int64
        Number of records mentioning each condition.
    u, v : ndarray of int64
        Edge endpoints with ``u < v``, sorted lexicographically.
    weight : ndarray
        Positive edge weights (int64 co-mention counts, or float).
    """

    conditions: tuple
    mention_count: np.ndarray
    u: np.ndarray
    v: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        n = len(self.conditions)
        if len(self.mention_count) != n:
            raise ValueError("mention_count length differs from node count")
        if not (len(self.u) == len(self.v) == len(self.weight)):
            raise ValueError("edge arrays differ in length")
        if len(self.u):
            if np.any(self.u >= self.v):
                raise ValueError("edges must satisfy u < v (no self-loops)")
            if self.v.max() >= n or self.u.min() < 0:
                raise ValueError("edge endpoint out of range")
            if np.any(self.weight <= 0):
                raise ValueError("edge weights must be positive")

    @property
    def n_nodes(self) -> int:
        return len(self.conditions)

    @property
    def n_edges(self) -> int:
        return len(self.u)

    @cached_property
    def strength(self) -> np.ndarray:
        s = np.zeros(self.n_nodes, dtype=np.float64)
        np.add.at(s, self.u, self.weight)
        np.add.at(s, self.v, self.weight)
        return s

    @property
    def total_weight(self) -> float:
        return float(self.weight.sum())

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric CSR matrix of edge weights (float64)."""
        n = self.n_nodes
        w = self.weight.astype(np.float64)
        a = sparse.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([self.u, self.v]), np.concatenate([self.v, self.u]))),
            shape=(n, n),
        ).tocsr()
        a.sort_indices()
        return a

    def index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.conditions)}

    def edges(self):
        for a, b, w in zip(self.u.tolist(), self.v.tolist(), self.weight.tolist()):
            yield a, b, w

    def is_connected(self) -> bool:
        if self.n_nodes <= 1:
            return True
        ncomp, _ = connected_components(self.adjacency, directed=False)
        return ncomp == 1

    def edge_subset(self, keep: np.ndarray) -> "CooccurrenceGraph":
        return CooccurrenceGraph(self.conditions, self.mention_count, self.u[keep], self.v[keep], self.weight[keep])

    def __eq__(self, other):
        if not isinstance(other, CooccurrenceGraph):
            return NotImplemented
        return (
            self.conditions == other.conditions
            and np.array_equal(self.mention_count, other.mention_count)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.weight, other.weight)
            and self.weight.dtype == other.weight.dtype
        )


def from_edges(conditions, mention_count, edges) -> CooccurrenceGraph:
    """Build a graph from ``(a, b, w)`` triples, merging duplicates by summation."""
    acc: Counter = Counter()
    for a, b, w in edges:
        if a == b:
            raise ValueError("self-loops are not allowed")
        acc[(a, b) if a < b else (b, a)] += w
    keys = sorted(acc)
    u = np.array([k[0] for k in keys], dtype=np.int64)
    v = np.array([k[1] for k in keys], dtype=np.int64)
    vals = [acc[k] for k in keys]
    is_int = all(isinstance(x, (int, np.integer)) for x in vals)
    w = np.array(vals, dtype=np.int64 if is_int else np.float64)
    return CooccurrenceGraph(tuple(conditions), np.asarray(mention_count, dtype=np.int64), u, v, w)


def build_cooccurrence(mentions: Iterable[MentionRecord], max_conditions: int | None = 50) -> CooccurrenceGraph:
    """Count co-mentions of condition pairs within single records.

    Records with more than `max_conditions` distinct conditions keep only the
    `max_conditions` most frequent ones (global mention count, ties broken
    lexicographically) before pairing.
    """
    records = [sorted(m.conditions) for m in mentions]
    freq: Counter = Counter()
    for conds in records:
        freq.update(conds)
    conditions = tuple(sorted(freq))
    idx = {c: i for i, c in enumerate(conditions)}
    mention_count = np.array([freq[c] for c in conditions], dtype=np.int64)

    pairs: Counter = Counter()
    n_truncated = 0
    for conds in records:
        if max_conditions is not None and len(conds) > max_conditions:
            conds = sorted(sorted(conds, key=lambda c: (-freq[c], c))[:max_conditions])
            n_truncated += 1
        ids = [idx[c] for c in conds]  # already ascending
        pairs.update(combinations(ids, 2))
    if n_truncated:
        log.info("truncated %d records to %d conditions", n_truncated, max_conditions)

    keys = sorted(pairs)
    u = np.fromiter((k[0] for k in keys), dtype=np.int64, count=len(keys))
    v = np.fromiter((k[1] for k in keys), dtype=np.int64, count=len(keys))
    w = np.fromiter((pairs[k] for k in keys), dtype=np.int64, count=len(keys))
    return CooccurrenceGraph(conditions, mention_count, u, v, w)


def induced_subgraph(g: CooccurrenceGraph, nodes) -> tuple[CooccurrenceGraph, np.ndarray]:
    """Subgraph on `nodes` with ids re-densified in ascending old-id order.

    Returns the subgraph and the array mapping new id -> old id.
    """
    old = np.unique(np.asarray(nodes, dtype=np.int64))
    remap = np.full(g.n_nodes, -1, dtype=np.int64)
    remap[old] = np.arange(len(old))
    keep = (remap[g.u] >= 0) & (remap[g.v] >= 0)
    sub = CooccurrenceGraph(
        tuple(g.conditions[i] for i in old.tolist()),
        g.mention_count[old],
        remap[g.u[keep]],
        remap[g.v[keep]],
        g.weight[keep],
    )
    return sub, old


def giant_component(g: CooccurrenceGraph) -> tuple[CooccurrenceGraph, np.ndarray]:
    """Largest connected component; ties go to the component with the smallest node id."""
    if g.n_nodes == 0:
        return g, np.zeros(0, dtype=np.int64)
    _, labels = connected_components(g.adjacency, directed=False)
    sizes = np.bincount(labels)
    # labels are assigned in order of first appearance, so the lowest label
    # among equal sizes holds the smallest node id
    best = int(np.argmax(sizes))
    return induced_subgraph(g, np.flatnonzero(labels == best))


def drop_isolates(g: CooccurrenceGraph) -> tuple[CooccurrenceGraph, np.ndarray]:
    deg = np.zeros(g.n_nodes, dtype=np.int64)
    np.add.at(deg, g.u, 1)
    np.add.at(deg, g.v, 1)
    return induced_subgraph(g, np.flatnonzero(deg > 0))


def _fmt_weight(x) -> str:
    return str(int(x)) if isinstance(x, (int, np.integer)) else repr(float(x))


def write_graph(g: CooccurrenceGraph, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{g.n_nodes} {g.n_edges}\n")
        for i, (c, m) in enumerate(zip(g.conditions, g.mention_count.tolist())):
            fh.write(f"{i}\t{c}\t{m}\n")
        for a, b, w in zip(g.u.tolist(), g.v.tolist(), g.weight.tolist()):
            fh.write(f"{a}\t{b}\t{_fmt_weight(w)}\n")


def read_graph(path) -> CooccurrenceGraph:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValueError(f"{path}: empty graph file")
    n, m = (int(x) for x in lines[0].split())
    if len(lines) != 1 + n + m:
        raise ValueError(f"{path}: expected {1 + n + m} lines, found {len(lines)}")
    conditions, counts = [], []
    for i, line in enumerate(lines[1 : 1 + n]):
        nid, cond, cnt = line.split("\t")
        if int(nid) != i:
            raise ValueError(f"{path}: node ids must be dense and ordered")
        conditions.append(cond)
        counts.append(int(cnt))
    edge_rows = [line.split("\t") for line in lines[1 + n :]]
    u = np.array([int(r[0]) for r in edge_rows], dtype=np.int64)
    v = np.array([int(r[1]) for r in edge_rows], dtype=np.int64)
    raw = [r[2] for r in edge_rows]
    if all(x.lstrip("-").isdigit() for x in raw):
        w = np.array([int(x) for x in raw], dtype=np.int64)
    else:
        w = np.array([float(x) for x in raw], dtype=np.float64)
    return CooccurrenceGraph(tuple(conditions), np.array(counts, dtype=np.int64), u, v, w)
