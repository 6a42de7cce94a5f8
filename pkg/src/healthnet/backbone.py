"""Noise-corrected backboning against a strength-preserving null model.

Under the null model the total weight ``T`` is distributed over node pairs as
``T`` independent draws in which pair ``(u, v)`` is hit with probability
``p_uv = 2 s_u s_v / (2T)^2``. That gives

    E[w_uv]   = T p_uv = s_u s_v / (2T)
    Var[w_uv] = T p_uv (1 - p_uv) = E[w_uv] (1 - E[w_uv] / T)

and an edge is salient when ``w_uv > E + delta * sqrt(Var)``. Because
``s_u + s_v <= 2T`` we always have ``p_uv <= 1/2``, so the variance is positive
whenever the expectation is and grows with it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import CooccurrenceGraph, drop_isolates

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BackboneParams:
    delta: float = 0.0
    target_edges: int | None = None
    keep_isolates: bool = False

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError("delta must be non-negative")
        if self.target_edges is not None and self.target_edges <= 0:
            raise ValueError("target_edges must be positive")


@dataclass(frozen=True)
class EdgeScores:
    expected: np.ndarray
    variance: np.ndarray

    def score(self, weight) -> np.ndarray:
        """Standardized excess ``(w - E) / sqrt(Var)``; an edge survives iff score > delta."""
        sd = np.sqrt(self.variance)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (np.asarray(weight, dtype=np.float64) - self.expected) / sd
        return z


def null_model(g: CooccurrenceGraph) -> EdgeScores:
    s = g.strength
    total = g.total_weight
    su = s[g.u]
    sv = s[g.v]
    expected = su * sv / (2.0 * total)
    variance = expected * (1.0 - expected / total)
    return EdgeScores(expected, variance)


def _survivors(g, scores, delta):
    w = g.weight.astype(np.float64)
    return w > scores.expected + delta * np.sqrt(scores.variance)


def noise_corrected_backbone(g: CooccurrenceGraph, params: BackboneParams = BackboneParams()):
    """Keep edges whose weight exceeds the null expectation by more than `delta` SDs.

    Returns the pruned graph and the id mapping (new id -> input id). Nodes left
    without edges are dropped unless ``params.keep_isolates``.
    """
    if g.n_edges == 0:
        raise ValueError("graph has no edges")
    keep = _survivors(g, null_model(g), params.delta)
    if not keep.any():
        log.warning("no edges survive delta=%g", params.delta)
    pruned = g.edge_subset(keep)
    if params.keep_isolates:
        return pruned, np.arange(g.n_nodes, dtype=np.int64)
    return drop_isolates(pruned)


def count_surviving(g: CooccurrenceGraph, delta: float, scores: EdgeScores | None = None) -> int:
    scores = scores or null_model(g)
    return int(_survivors(g, scores, delta).sum())


@dataclass(frozen=True)
class TuneResult:
    delta: float
    achieved: int
    iterations: int
    converged: bool


def tune_delta(g: CooccurrenceGraph, target_edges: int, rel_tol: float = 0.01, max_iter: int = 40) -> TuneResult:
    """Bisect `delta` until the surviving edge count is within `rel_tol` of the target."""
    if not 0 < target_edges <= g.n_edges:
        raise ValueError("target_edges must lie in (0, |E|]")
    scores = null_model(g)
    tol = rel_tol * target_edges

    def count(d):
        return count_surviving(g, d, scores)

    best = (abs(count(0.0) - target_edges), 0.0, count(0.0))
    if best[0] <= tol:
        return TuneResult(0.0, best[2], 0, True)
    if best[2] < target_edges:
        log.warning("only %d edges exceed their expectation; target %d unreachable", best[2], target_edges)
        return TuneResult(0.0, best[2], 0, False)

    finite = scores.score(g.weight)
    finite = finite[np.isfinite(finite)]
    lo, hi = 0.0, float(finite.max()) + 1.0 if len(finite) else 1.0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        c = count(mid)
        gap = abs(c - target_edges)
        if (gap, mid) < best[:2]:
            best = (gap, mid, c)
        if gap <= tol:
            return TuneResult(mid, c, it, True)
        if c > target_edges:
            lo = mid
        else:
            hi = mid
    log.warning("delta search plateaued: closest count %d for target %d", best[2], target_edges)
    return TuneResult(best[1], best[2], max_iter, False)


def write_scores(g: CooccurrenceGraph, path) -> None:
    """Audit side-file with null-model expectation, variance and score per edge."""
    sc = null_model(g)
    z = sc.score(g.weight)
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("u\tv\tw\tE\tVar\tscore\n")
        for row in zip(g.u.tolist(), g.v.tolist(), g.weight.tolist(), sc.expected.tolist(), sc.variance.tolist(), z.tolist()):
            fh.write("\t".join(map(str, row[:3])) + "\t" + "\t".join(repr(x) for x in row[3:]) + "\n")
