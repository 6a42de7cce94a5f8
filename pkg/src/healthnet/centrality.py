"""Node centralities used to weight conditions in health scores."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import shortest_path

from .graph import CooccurrenceGraph

KINDS = ("pagerank", "harmonic", "degree")


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass
class CentralityScores:
    kind: str
    conditions: tuple
    values: np.ndarray
    params: dict = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.conditions, self.values.tolist()))


def pagerank(adj: sparse.csr_matrix, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 200):
    """Power iteration on the weight-proportional walk with uniform teleportation.

    Nodes without edges teleport uniformly. Returns ``(scores, iterations)``.
    """
    n = adj.shape[0]
    out = np.asarray(adj.sum(axis=1)).ravel()
    dangling = out == 0
    inv = np.zeros(n)
    inv[~dangling] = 1.0 / out[~dangling]
    # column-stochastic transpose: x_new = d * A^T (x / s) + teleport
    at = adj.T.tocsr()
    x = np.full(n, 1.0 / n)
    residual = math.inf
    for it in range(1, max_iter + 1):
        spread = at @ (x * inv)
        leak = x[dangling].sum()
        new = damping * (spread + leak / n) + (1.0 - damping) / n
        new /= new.sum()
        residual = float(np.abs(new - x).sum())
        x = new
        if residual < tol:
            return x, it
    raise ConvergenceError(f"pagerank did not converge in {max_iter} iterations", residual)


def harmonic(adj: sparse.csr_matrix, chunk: int = 256) -> np.ndarray:
    """Sum of inverse hop distances to every other reachable node."""
    n = adj.shape[0]
    out = np.zeros(n)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        dist = shortest_path(adj, method="D", directed=False, unweighted=True, indices=idx)
        with np.errstate(divide="ignore"):
            inv = 1.0 / dist
        inv[~np.isfinite(inv)] = 0.0
        out[idx] = inv.sum(axis=1)
    return out


def centrality(
    g: CooccurrenceGraph,
    kind: str = "pagerank",
    damping: float = 0.85,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> CentralityScores:
    if g.n_nodes == 0:
        raise ValueError("graph has no nodes")
    if kind == "pagerank":
        vals, iters = pagerank(g.adjacency, damping, tol, max_iter)
        params = {"damping": damping, "tol": tol, "iterations": iters}
    elif kind == "harmonic":
        vals, params = harmonic(g.adjacency), {"distance": "hops"}
    elif kind == "degree":
        vals, params = g.strength.copy(), {}
    else:
        raise ValueError(f"unknown centrality kind {kind!r}")
    return CentralityScores(kind, g.conditions, vals, params)


def top_central(scores: CentralityScores, fraction: float = 0.05) -> set[str]:
    """The ceil(fraction * N) highest-scoring conditions; ties at the cut go lexicographically."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    n = len(scores.conditions)
    k = math.ceil(fraction * n - 1e-9)
    ranked = sorted(zip(scores.values.tolist(), scores.conditions), key=lambda t: (-t[0], t[1]))
    return {c for _, c in ranked[:k]}


def write_centrality(scores: CentralityScores, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(scores.params):
            fh.write(f"# {key}={scores.params[key]}\n")
        fh.write("condition\tkind\tvalue\n")
        for c, v in zip(scores.conditions, scores.values.tolist()):
            fh.write(f"{c}\t{scores.kind}\t{v!r}\n")


def read_centrality(path) -> CentralityScores:
    params, conds, vals, kind = {}, [], [], None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            params[key] = val
            continue
        c, k, v = line.split("\t")
        if c == "condition" and k == "kind":
            continue
        conds.append(c)
        vals.append(float(v))
        kind = k
    return CentralityScores(kind or "pagerank", tuple(conds), np.array(vals), params)
