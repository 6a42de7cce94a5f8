"""Two-level map-equation clustering, overlap memberships and taxonomy export.

The optimizer follows the usual Infomap recipe: greedy node moves in random
order, aggregation of modules into super-nodes, then repeated fine tuning
(single leaf nodes re-moved) and coarse tuning (sub-modules moved as units)
until the codelength stops improving.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import sparse

from .graph import CooccurrenceGraph, induced_subgraph

log = logging.getLogger(__name__)

MIN_IMPROVEMENT = 1e-12
MAX_TUNE_ROUNDS = 20
MAX_MERGE_CANDIDATES = 16


class DisconnectedGraphError(ValueError):
    pass


def _plogp(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log2(x[pos])
    return out


def visit_rates(g: CooccurrenceGraph) -> np.ndarray:
    """Stationary visit rates ``s_i / 2T`` of a random walk on a connected graph."""
    if g.n_edges == 0:
        raise ValueError("graph has no edges")
    if not g.is_connected():
        raise DisconnectedGraphError("graph is disconnected; extract the giant component first")
    return g.strength / (2.0 * g.total_weight)


def _dense_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    _, inv = np.unique(labels, return_inverse=True)
    return inv.astype(np.int64)


def _as_label_array(g, partition) -> np.ndarray:
    if isinstance(partition, dict):
        if len(partition) != g.n_nodes:
            raise ValueError("partition must cover every node")
        partition = [partition[i] for i in range(g.n_nodes)]
    labels = np.asarray(partition)
    if len(labels) != g.n_nodes:
        raise ValueError("partition must cover every node")
    return _dense_labels(labels)


def module_flows(g: CooccurrenceGraph, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-module visit rate and exit rate for a flat partition."""
    labels = _as_label_array(g, labels)
    two_t = 2.0 * g.total_weight
    p = g.strength / two_t
    k = int(labels.max()) + 1 if len(labels) else 0
    flow = np.bincount(labels, weights=p, minlength=k)
    cross = labels[g.u] != labels[g.v]
    wc = g.weight[cross].astype(np.float64) / two_t
    exit_ = np.bincount(labels[g.u[cross]], weights=wc, minlength=k) + np.bincount(
        labels[g.v[cross]], weights=wc, minlength=k
    )
    return flow, exit_


def map_equation_codelength(g: CooccurrenceGraph, partition) -> float:
    """Two-level map-equation codelength (bits) of a flat partition.

    ``L = q H(Q) + sum_m p_m H(P^m)``, evaluated in its expanded form
    ``plogp(q) - 2 sum plogp(q_m) - sum plogp(p_i) + sum plogp(q_m + p_m)``.
    """
    if g.n_edges == 0:
        return 0.0
    labels = _as_label_array(g, partition)
    p = g.strength / (2.0 * g.total_weight)
    flow, exit_ = module_flows(g, labels)
    q = exit_.sum()
    return float(
        _plogp(q) - 2.0 * _plogp(exit_).sum() - _plogp(p).sum() + _plogp(exit_ + flow).sum()
    )


def module_codelengths(g: CooccurrenceGraph, labels) -> np.ndarray:
    """Per-module term ``p_m H(P^m)`` of the map equation."""
    labels = _as_label_array(g, labels)
    p = g.strength / (2.0 * g.total_weight)
    flow, exit_ = module_flows(g, labels)
    node_term = np.bincount(labels, weights=_plogp(p), minlength=len(flow))
    return _plogp(exit_ + flow) - _plogp(exit_) - node_term


# -- optimizer core ---------------------------------------------------------


@numba.njit(cache=True)
def _nplogp(x):
    if x > 0.0:
        return x * np.log2(x)
    return 0.0


@numba.njit(cache=True, nogil=True)
def _relabel(labels):
    """Dense ids in order of first appearance, and their count."""
    n = labels.shape[0]
    mapping = np.full(labels.max() + 1 if n else 1, -1, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    k = 0
    for i in range(n):
        lab = labels[i]
        if mapping[lab] < 0:
            mapping[lab] = k
            k += 1
        out[i] = mapping[lab]
    return out, k


@numba.njit(cache=True, nogil=True)
def _aggregate(u, v, f, p, groups, k):
    """CSR flow network between groups of leaf nodes (self-links dropped)."""
    count = np.zeros(k + 1, dtype=np.int64)
    for e in range(u.shape[0]):
        a = groups[u[e]]
        b = groups[v[e]]
        if a != b:
            count[a + 1] += 1
            count[b + 1] += 1
    for i in range(k):
        count[i + 1] += count[i]
    fill = count[:-1].copy()
    nbr = np.empty(count[k], dtype=np.int64)
    val = np.empty(count[k])
    for e in range(u.shape[0]):
        a = groups[u[e]]
        b = groups[v[e]]
        if a != b:
            nbr[fill[a]] = b
            val[fill[a]] = f[e]
            fill[a] += 1
            nbr[fill[b]] = a
            val[fill[b]] = f[e]
            fill[b] += 1
    # merge parallel links row by row, keeping first-seen neighbour order
    slot = np.full(k, -1, dtype=np.int64)
    indptr = np.zeros(k + 1, dtype=np.int64)
    indices = np.empty(count[k], dtype=np.int64)
    flows = np.empty(count[k])
    node_exit = np.zeros(k)
    n_out = 0
    for a in range(k):
        start = n_out
        for j in range(count[a], count[a + 1]):
            b = nbr[j]
            if slot[b] < start:
                slot[b] = n_out
                indices[n_out] = b
                flows[n_out] = val[j]
                n_out += 1
            else:
                flows[slot[b]] += val[j]
            node_exit[a] += val[j]
        indptr[a + 1] = n_out
    node_flow = np.zeros(k)
    for i in range(groups.shape[0]):
        node_flow[groups[i]] += p[i]
    return indptr, indices[:n_out].copy(), flows[:n_out].copy(), node_flow, node_exit


@numba.njit(cache=True, nogil=True)
def _move_nodes(indptr, indices, flows, node_flow, node_exit, module, active, order_seed, max_sweeps, min_gain):
    """Greedy moves of the `active` nodes; returns the new module array and the move count."""
    n = node_flow.shape[0]
    np.random.seed(order_seed)
    module = module.copy()
    mod_flow = np.zeros(n)
    mod_exit = np.zeros(n)
    mod_size = np.zeros(n, dtype=np.int64)
    for i in range(n):
        m = module[i]
        mod_flow[m] += node_flow[i]
        mod_exit[m] += node_exit[i]
        mod_size[m] += 1
        for k in range(indptr[i], indptr[i + 1]):
            if module[indices[k]] == m:
                mod_exit[m] -= flows[k]
    empty = np.empty(n, dtype=np.int64)
    n_empty = 0
    for m in range(n - 1, -1, -1):
        if mod_size[m] == 0:
            empty[n_empty] = m
            n_empty += 1
    total_exit = 0.0
    for m in range(n):
        total_exit += mod_exit[m]

    acc = np.zeros(n)
    touched = np.empty(n, dtype=np.int64)
    n_moves = 0
    for _sweep in range(max_sweeps):
        order = np.random.permutation(n)
        moved = 0
        for idx in range(n):
            i = order[idx]
            if not active[i]:
                continue
            a = module[i]
            w_ia = 0.0
            n_t = 0
            for k in range(indptr[i], indptr[i + 1]):
                m = module[indices[k]]
                if m == a:
                    w_ia += flows[k]
                else:
                    if acc[m] == 0.0:
                        touched[n_t] = m
                        n_t += 1
                    acc[m] += flows[k]
            xi = node_exit[i]
            pi = node_flow[i]
            qa = mod_exit[a]
            pa = mod_flow[a]
            qa_new = qa - xi + 2.0 * w_ia
            pa_new = pa - pi
            base_a = -2.0 * (_nplogp(qa_new) - _nplogp(qa)) + _nplogp(qa_new + pa_new) - _nplogp(qa + pa)
            best_delta = 0.0
            best_m = a
            best_w = 0.0
            for t in range(n_t):
                b = touched[t]
                w_ib = acc[b]
                qb = mod_exit[b]
                pb = mod_flow[b]
                qb_new = qb + xi - 2.0 * w_ib
                q_new = total_exit - qa - qb + qa_new + qb_new
                delta = (
                    _nplogp(q_new)
                    - _nplogp(total_exit)
                    + base_a
                    - 2.0 * (_nplogp(qb_new) - _nplogp(qb))
                    + _nplogp(qb_new + pb + pi)
                    - _nplogp(qb + pb)
                )
                if delta < best_delta:
                    best_delta = delta
                    best_m = b
                    best_w = w_ib
            if mod_size[a] > 1 and n_empty > 0:
                b = empty[n_empty - 1]
                q_new = total_exit - qa + qa_new + xi
                delta = _nplogp(q_new) - _nplogp(total_exit) + base_a - 2.0 * _nplogp(xi) + _nplogp(xi + pi)
                if delta < best_delta:
                    best_delta = delta
                    best_m = b
                    best_w = 0.0
            for t in range(n_t):
                acc[touched[t]] = 0.0
            if best_delta < -min_gain:
                b = best_m
                qb_new = mod_exit[b] + xi - 2.0 * best_w
                total_exit += qa_new - qa + qb_new - mod_exit[b]
                mod_exit[a] = qa_new
                mod_flow[a] = pa_new
                mod_size[a] -= 1
                if mod_size[b] == 0:
                    n_empty -= 1
                mod_exit[b] = qb_new
                mod_flow[b] += pi
                mod_size[b] += 1
                if mod_size[a] == 0:
                    mod_exit[a] = 0.0
                    mod_flow[a] = 0.0
                    empty[n_empty] = a
                    n_empty += 1
                module[i] = b
                moved += 1
        n_moves += moved
        if moved == 0:
            break
    return module, n_moves


@dataclass
class _Network:
    """Flow network over super-nodes (groups of leaf nodes)."""

    indptr: np.ndarray
    indices: np.ndarray
    flows: np.ndarray
    node_flow: np.ndarray
    node_exit: np.ndarray

    @property
    def n(self):
        return len(self.node_flow)


class _Leaf:
    """Leaf-level flow data: one-direction link flows ``w / 2T`` and visit rates."""

    def __init__(self, n, u, v, f, p):
        self.n = n
        self.u = np.ascontiguousarray(u, dtype=np.int64)
        self.v = np.ascontiguousarray(v, dtype=np.int64)
        self.f = np.ascontiguousarray(f, dtype=np.float64)
        self.p = np.ascontiguousarray(p, dtype=np.float64)
        self.node_term = float(_plogp(self.p).sum())
        self.base = self.aggregate(np.arange(n, dtype=np.int64), n)

    @classmethod
    def from_graph(cls, g: CooccurrenceGraph):
        two_t = 2.0 * g.total_weight if g.n_edges else 1.0
        return cls(g.n_nodes, g.u, g.v, g.weight.astype(np.float64) / two_t, g.strength / two_t)

    def aggregate(self, groups: np.ndarray, k: int) -> _Network:
        return _Network(*_aggregate(self.u, self.v, self.f, self.p, groups, k))

    def module_terms(self, labels):
        k = int(labels.max()) + 1
        flow = np.bincount(labels, weights=self.p, minlength=k)
        cross = labels[self.u] != labels[self.v]
        fc = self.f[cross]
        exit_ = np.bincount(labels[self.u[cross]], weights=fc, minlength=k) + np.bincount(
            labels[self.v[cross]], weights=fc, minlength=k
        )
        return flow, exit_

    def codelength(self, labels) -> float:
        flow, exit_ = self.module_terms(_relabel(np.ascontiguousarray(labels, dtype=np.int64))[0])
        return float(_plogp(exit_.sum()) - 2.0 * _plogp(exit_).sum() - self.node_term + _plogp(exit_ + flow).sum())


class _Optimizer:
    def __init__(self, leaf: _Leaf, rng: np.random.Generator, max_sweeps: int = 200):
        self.leaf = leaf
        self.rng = rng
        self.max_sweeps = max_sweeps

    def _seed(self) -> int:
        return int(self.rng.integers(0, 2**31 - 1))

    def move(self, net: _Network, modules: np.ndarray, active: np.ndarray | None = None) -> np.ndarray:
        if active is None:
            active = np.ones(net.n, dtype=np.bool_)
        out, _ = _move_nodes(
            net.indptr, net.indices, net.flows, net.node_flow, net.node_exit,
            np.ascontiguousarray(modules, dtype=np.int64), active, self._seed(), self.max_sweeps, MIN_IMPROVEMENT,
        )
        return out

    def core(self, groups: np.ndarray, init: np.ndarray | None = None) -> np.ndarray:
        """Move and aggregate from super-nodes `groups` until no modules merge.

        `init` optionally gives the starting module of each super-node.
        Returns the dense leaf -> module assignment.
        """
        groups, k = _relabel(np.ascontiguousarray(groups, dtype=np.int64))
        modules = np.arange(k, dtype=np.int64) if init is None else _relabel(np.asarray(init, dtype=np.int64))[0]
        while True:
            net = self.leaf.aggregate(groups, k)
            modules, n_mod = _relabel(self.move(net, modules))
            groups = modules[groups]
            if n_mod == k:
                return groups
            k = n_mod
            modules = np.arange(k, dtype=np.int64)

    def fine_tune(self, assign: np.ndarray, active: np.ndarray | None = None) -> np.ndarray:
        return self.core(self.move(self.leaf.base, assign, active))

    def coarse_tune(self, assign: np.ndarray) -> np.ndarray:
        # split every module into sub-modules, then move sub-modules between modules
        sub = np.empty(self.leaf.n, dtype=np.int64)
        order = np.argsort(assign, kind="stable")
        bounds = np.flatnonzero(np.diff(assign[order])) + 1
        offset = 0
        for members in np.split(order, bounds):
            local = self._submodules(members)
            sub[members] = local + offset
            offset += int(local.max()) + 1
        if offset == int(assign.max()) + 1:
            return assign
        parent = np.zeros(offset, dtype=np.int64)
        parent[sub] = assign
        net = self.leaf.aggregate(sub, offset)
        moved = self.move(net, parent)
        return self.core(moved[sub])

    def _submodules(self, members: np.ndarray) -> np.ndarray:
        if len(members) <= 2:
            return np.arange(len(members), dtype=np.int64)
        remap = np.full(self.leaf.n, -1, dtype=np.int64)
        remap[members] = np.arange(len(members))
        keep = (remap[self.leaf.u] >= 0) & (remap[self.leaf.v] >= 0)
        u, v, f = remap[self.leaf.u[keep]], remap[self.leaf.v[keep]], self.leaf.f[keep]
        tot = f.sum()
        if tot <= 0:
            return np.arange(len(members), dtype=np.int64)
        f = f / (2.0 * tot)
        p = np.bincount(u, weights=f, minlength=len(members)) + np.bincount(v, weights=f, minlength=len(members))
        sub = _Optimizer(_Leaf(len(members), u, v, f, p), self.rng, self.max_sweeps)
        return sub.core(np.arange(len(members)))

    def merge_tune(self, assign: np.ndarray) -> np.ndarray:
        """Merge adjacent module pairs and re-tune the nodes around them.

        Escapes local optima where a merge only pays off together with
        follow-up node moves. Pairs are tried in order of the codelength
        cost of the bare merge; the best improving candidate is returned.
        """
        a, b = assign[self.leaf.u], assign[self.leaf.v]
        cross = a != b
        if not cross.any():
            return assign
        k = int(assign.max()) + 1
        lo, hi = np.minimum(a[cross], b[cross]), np.maximum(a[cross], b[cross])
        uniq, inv = np.unique(lo * k + hi, return_inverse=True)
        between = np.bincount(inv, weights=self.leaf.f[cross])
        m1, m2 = uniq // k, uniq % k
        flow, exit_ = self.leaf.module_terms(assign)
        q_tot = exit_.sum()
        q_new = exit_[m1] + exit_[m2] - 2.0 * between
        cost = (
            _plogp(q_tot - 2.0 * between) - _plogp(q_tot)
            - 2.0 * (_plogp(q_new) - _plogp(exit_[m1]) - _plogp(exit_[m2]))
            + _plogp(q_new + flow[m1] + flow[m2]) - _plogp(exit_[m1] + flow[m1]) - _plogp(exit_[m2] + flow[m2])
        )
        order = np.lexsort((uniq, cost))[:MAX_MERGE_CANDIDATES]
        base = self.leaf.base
        rows = np.repeat(np.arange(self.leaf.n), np.diff(base.indptr))
        best, best_len = assign, self.leaf.codelength(assign)
        for idx in order.tolist():
            inside = (assign == m1[idx]) | (assign == m2[idx])
            merged = np.where(assign == m2[idx], m1[idx], assign)
            active = inside.copy()
            active[base.indices[inside[rows]]] = True
            cand = self.move(base, merged, active)
            length = self.leaf.codelength(cand)
            if length < best_len - MIN_IMPROVEMENT:
                best, best_len = cand, length
        return best

    def run(self) -> tuple[np.ndarray, float]:
        assign = self.core(np.arange(self.leaf.n))
        best = self.leaf.codelength(assign)
        for _ in range(MAX_TUNE_ROUNDS):
            improved = False
            for tune in (self.fine_tune, self.coarse_tune, self.merge_tune):
                cand = tune(assign)
                length = self.leaf.codelength(cand)
                if length < best - MIN_IMPROVEMENT:
                    assign, best, improved = cand, length, True
            if not improved:
                break
        return assign, best


def _trial_seed(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *path]))


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel modules by decreasing size, ties by smallest member id."""
    labels = _dense_labels(labels)
    k = int(labels.max()) + 1
    sizes = np.bincount(labels, minlength=k)
    first = np.full(k, len(labels), dtype=np.int64)
    np.minimum.at(first, labels, np.arange(len(labels)))
    order = np.lexsort((first, -sizes))
    rank = np.empty(k, dtype=np.int64)
    rank[order] = np.arange(k)
    return rank[labels]


def _best_partition(leaf: _Leaf, seed: int, trials: int, path: tuple, threads: int = 1):
    if leaf.n <= 1:
        return np.zeros(leaf.n, dtype=np.int64), 0.0
    if len(leaf.u) == 0:
        return np.arange(leaf.n, dtype=np.int64), 0.0

    def one(t):
        return _Optimizer(leaf, _trial_seed(seed, *path, t)).run()

    if threads > 1 and trials > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, range(trials)))
    else:
        results = [one(t) for t in range(trials)]
    # lowest codelength, ties to the earliest trial
    best_t = min(range(trials), key=lambda t: (results[t][1], t))
    assign = _canonical_labels(results[best_t][0])
    return assign, leaf.codelength(assign)


@dataclass
class HierarchicalPartition:
    """Level-1 modules and level-2 sub-modules (nested) for every node."""

    level1: np.ndarray
    level2: np.ndarray  # sub-module index within the node's level-1 module
    codelength_one_module: float
    codelength_level1: float
    codelength_level2: float
    sub_codelengths: list = field(default_factory=list)

    @property
    def n_modules(self) -> int:
        return int(self.level1.max()) + 1 if len(self.level1) else 0

    def level2_global(self) -> np.ndarray:
        """Dense ids of (module, sub-module) pairs."""
        pairs = self.level1 * (int(self.level2.max()) + 1 if len(self.level2) else 1) + self.level2
        return _dense_labels(pairs)

    def n_submodules(self) -> int:
        return int(self.level2_global().max()) + 1 if len(self.level2) else 0


def detect_communities(g: CooccurrenceGraph, seed: int = 0, trials: int = 10, threads: int = 1) -> HierarchicalPartition:
    """Best-of-`trials` map-equation partition, refined once more inside each module.

    Deterministic for fixed ``(g, seed, trials)``; `threads` does not change the result.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = g.n_nodes
    if n == 0:
        raise ValueError("graph has no nodes")
    if n == 1:
        z = np.zeros(1, dtype=np.int64)
        return HierarchicalPartition(z, z.copy(), 0.0, 0.0, 0.0, [0.0])
    visit_rates(g)  # connectivity check
    leaf = _Leaf.from_graph(g)
    one_module = leaf.codelength(np.zeros(n, dtype=np.int64))
    level1, length1 = _best_partition(leaf, seed, trials, (1,), threads)

    level2 = np.zeros(n, dtype=np.int64)
    sub_lengths = []

    def run_module(m):
        members = np.flatnonzero(level1 == m)
        sub, _ = induced_subgraph(g, members)
        if sub.n_edges == 0:
            return members, np.arange(len(members), dtype=np.int64), 0.0
        assign, length = _best_partition(_Leaf.from_graph(sub), seed, trials, (2, m), 1)
        return members, assign, length

    modules = range(int(level1.max()) + 1)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run_module, modules))
    else:
        results = [run_module(m) for m in modules]
    for members, assign, length in results:
        level2[members] = assign
        sub_lengths.append(length)

    hp = HierarchicalPartition(level1, level2, one_module, length1, 0.0, sub_lengths)
    hp.codelength_level2 = leaf.codelength(hp.level2_global())
    return hp


# -- overlaps and taxonomy --------------------------------------------------


@dataclass(frozen=True)
class OverlapMembership:
    node_id: int
    primary: int
    strengths: dict  # module -> share of the node's strength, primary first

    @property
    def modules(self) -> set:
        return set(self.strengths)


def membership_strengths(g: CooccurrenceGraph, labels) -> sparse.csr_matrix:
    """Node x module matrix: share of each node's strength spent on edges into each module."""
    labels = _as_label_array(g, labels)
    k = int(labels.max()) + 1
    adj = g.adjacency
    onto = sparse.csr_matrix((np.ones(g.n_nodes), (np.arange(g.n_nodes), labels)), shape=(g.n_nodes, k))
    to_mod = (adj @ onto).tocsr()
    s = g.strength.copy()
    s[s == 0] = 1.0
    return sparse.diags(1.0 / s) @ to_mod


def assign_overlaps(g: CooccurrenceGraph, labels, threshold: float = 0.25) -> list[OverlapMembership]:
    """Members of every module receiving at least `threshold` of a node's strength."""
    labels = _as_label_array(g, labels)
    shares = membership_strengths(g, labels).tocsr()
    out = []
    for i in range(g.n_nodes):
        row = shares.getrow(i)
        prim = int(labels[i])
        strengths = {prim: float(row[0, prim])} if row.nnz else {prim: 0.0}
        for m, val in sorted(zip(row.indices.tolist(), row.data.tolist())):
            if m != prim and val >= threshold:
                strengths[m] = float(val)
        out.append(OverlapMembership(i, prim, strengths))
    return out


@dataclass
class Cluster:
    cluster_id: str
    members: list
    top_terms: list
    codelength: float
    label: str | None = None
    children: list = field(default_factory=list)

    @property
    def size(self):
        return len(self.members)


@dataclass
class Taxonomy:
    clusters: list
    multi_membership: dict  # condition -> list of level-1 cluster ids
    codelength_level1: float
    codelength_level2: float

    def category_sets(self, include_overlaps: bool = True) -> dict[str, set]:
        """Level-1 cluster id -> condition set used as a scoring category."""
        out = {c.cluster_id: set(c.members) for c in self.clusters}
        if include_overlaps:
            for cond, ids in self.multi_membership.items():
                for cid in ids:
                    out[cid].add(cond)
        return out

    def to_dict(self) -> dict:
        def conv(c):
            return {
                "cluster_id": c.cluster_id,
                "label": c.label,
                "size": c.size,
                "codelength": round(c.codelength, 12),
                "top_terms": c.top_terms,
                "members": c.members,
                "children": [conv(ch) for ch in c.children],
            }

        return {
            "codelength_level1": round(self.codelength_level1, 12),
            "codelength_level2": round(self.codelength_level2, 12),
            "clusters": [conv(c) for c in self.clusters],
            "multi_membership": {k: self.multi_membership[k] for k in sorted(self.multi_membership)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Taxonomy":
        def conv(x):
            return Cluster(
                x["cluster_id"], x["members"], x["top_terms"], x["codelength"], x.get("label"),
                [conv(ch) for ch in x.get("children", [])],
            )

        return cls([conv(c) for c in d["clusters"]], d["multi_membership"], d["codelength_level1"], d["codelength_level2"])


def top_terms(conditions, counts, k: int = 50) -> list[str]:
    """The `k` conditions with the highest mention count, ties lexicographic."""
    ranked = sorted(zip(conditions, counts), key=lambda t: (-t[1], t[0]))
    return [c for c, _ in ranked[:k]]


def build_taxonomy(
    g: CooccurrenceGraph,
    partition: HierarchicalPartition,
    overlaps: list[OverlapMembership] | None = None,
    k: int = 50,
    labels: dict | None = None,
) -> Taxonomy:
    labels = labels or {}
    mc = g.mention_count.tolist()
    lvl1_len = module_codelengths(g, partition.level1)
    glob2 = partition.level2_global()
    lvl2_len = module_codelengths(g, glob2)

    def make(cid, nodes, length):
        conds = [g.conditions[i] for i in nodes]
        counts = [mc[i] for i in nodes]
        return Cluster(cid, sorted(conds), top_terms(conds, counts, k), float(length), labels.get(cid))

    clusters = []
    for m in range(partition.n_modules):
        nodes = np.flatnonzero(partition.level1 == m).tolist()
        parent = make(str(m), nodes, lvl1_len[m])
        for s in range(int(partition.level2[nodes].max()) + 1):
            sub_nodes = [i for i in nodes if partition.level2[i] == s]
            if sub_nodes:
                parent.children.append(make(f"{m}.{s}", sub_nodes, lvl2_len[glob2[sub_nodes[0]]]))
        parent.children.sort(key=lambda c: (-c.size, c.cluster_id))
        clusters.append(parent)
    clusters.sort(key=lambda c: (-c.size, int(c.cluster_id)))

    multi = {}
    for om in overlaps or []:
        if len(om.strengths) > 1:
            multi[g.conditions[om.node_id]] = [str(m) for m in sorted(om.strengths)]
    return Taxonomy(clusters, multi, partition.codelength_level1, partition.codelength_level2)


def write_partition(partition: HierarchicalPartition, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for i, (a, b) in enumerate(zip(partition.level1.tolist(), partition.level2.tolist())):
            fh.write(f"{i}\t{a}\t{b}\n")


def read_partition(path) -> tuple[np.ndarray, np.ndarray]:
    rows = [line.split("\t") for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
    if any(int(r[0]) != i for i, r in enumerate(rows)):
        raise ValueError(f"{path}: node ids must be dense and ordered")
    return np.array([int(r[1]) for r in rows], dtype=np.int64), np.array([int(r[2]) for r in rows], dtype=np.int64)


def write_taxonomy(tax: Taxonomy, path) -> None:
    text = json.dumps(tax.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_taxonomy(path) -> Taxonomy:
    return Taxonomy.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
