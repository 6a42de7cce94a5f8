"""Correlation and propensity-score-matching validation of health scores."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


class MatchingError(ValueError):
    pass


@dataclass
class StatTable:
    name: str
    values: dict[str, float]


@dataclass
class CovariateMatrix:
    """Locations x candidate confounders, median-imputed."""

    locations: list
    names: list
    values: np.ndarray
    imputed: dict = field(default_factory=dict)  # column -> number of filled cells

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.locations), len(self.names)):
            raise ValueError("covariate matrix shape mismatch")
        if np.isnan(self.values).any():
            self.values = self.values.copy()
            for j, name in enumerate(self.names):
                col = self.values[:, j]
                miss = np.isnan(col)
                if miss.any():
                    if miss.all():
                        raise ValueError(f"covariate {name!r} has no values")
                    col[miss] = np.median(col[~miss])
                    self.imputed[name] = int(miss.sum())

    def subset(self, locations: Sequence[str], names: Sequence[str] | None = None) -> "CovariateMatrix":
        row = {loc: i for i, loc in enumerate(self.locations)}
        names = list(self.names if names is None else names)
        col = [self.names.index(n) for n in names]
        vals = self.values[np.ix_([row[loc] for loc in locations], col)] if col else np.zeros((len(locations), 0))
        return CovariateMatrix(list(locations), names, vals)

    def standardized(self) -> np.ndarray:
        x = self.values
        if x.shape[1] == 0:
            return x.copy()
        sd = x.std(axis=0)
        sd[sd == 0] = 1.0
        return (x - x.mean(axis=0)) / sd


@dataclass
class MatchedPairs:
    pairs: list  # (treated, control)
    propensity: dict
    unmatched: list = field(default_factory=list)


@dataclass
class CausalResult:
    outcome: str
    treatment: str
    ate: float
    ci_low: float
    ci_high: float
    selected_confounders: list
    n_pairs: int
    naive: float = float("nan")
    cie: list = field(default_factory=list)
    hdpsa: list = field(default_factory=list)
    smd: dict = field(default_factory=dict)
    matched: MatchedPairs | None = None

    @property
    def significant(self) -> bool:
        """True when the whole confidence interval lies below zero."""
        return self.ci_high < 0


def derive_seed(master: int, *names) -> int:
    """Stable per-task seed from a master seed and task labels."""
    key = "\x1f".join([str(master), *map(str, names)]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")


# -- correlation ------------------------------------------------------------


def pearson(x, y) -> tuple[float, float]:
    """Pearson r with a two-sided t-test p-value (n - 2 degrees of freedom)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    if n != len(y) or n < 3:
        raise ValueError("need two sequences of equal length >= 3")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("zero variance input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2.0 * stats.t.sf(abs(t), n - 2))


def stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def correlate_tables(scores: Mapping[str, float], stat: Mapping[str, float]) -> tuple[float, float, int]:
    common = sorted(set(scores) & set(stat))
    r, p = pearson([scores[k] for k in common], [stat[k] for k in common])
    return r, p, len(common)


# -- treatment, outcome, propensity -----------------------------------------


def binarize_treatment(values: Mapping[str, float]) -> dict[str, int]:
    """1 for locations strictly above the median value."""
    vals = np.array(list(values.values()), dtype=np.float64)
    if len(np.unique(vals)) < 2:
        raise ValueError("treatment statistic is constant")
    med = float(np.median(vals))
    return {loc: int(v > med) for loc, v in values.items()}


def normalize_outcome(scores: Mapping[str, float]) -> dict[str, float]:
    vals = list(scores.values())
    lo, hi = min(vals), max(vals)
    if len(vals) < 2 or hi == lo:
        raise ValueError("outcome needs at least two distinct values")
    return {k: (v - lo) / (hi - lo) for k, v in scores.items()}


@dataclass
class LogisticFit:
    intercept: float
    coef: np.ndarray
    probabilities: np.ndarray
    iterations: int


def fit_logistic(x: np.ndarray, t: np.ndarray, l2: float = 1e-4, max_iter: int = 100, tol: float = 1e-8) -> LogisticFit:
    """Ridge-penalized logistic regression by iteratively reweighted least squares.

    Minimizes ``-loglik(b) + l2/2 * |b_1:|^2`` (intercept unpenalized) with
    damped Newton steps. Stops when the gradient norm drops below `tol` or the
    Newton decrement is at rounding level.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    n, k = x.shape
    design = np.hstack([np.ones((n, 1)), x])
    pen = np.full(k + 1, l2)
    pen[0] = 0.0
    beta = np.zeros(k + 1)

    def objective(b):
        eta = design @ b
        return float(np.sum(np.logaddexp(0.0, eta) - t * eta) + 0.5 * np.sum(pen * b * b))

    obj = objective(beta)
    grad_norm = math.inf
    for it in range(1, max_iter + 1):
        mu = 1.0 / (1.0 + np.exp(-(design @ beta)))
        grad = design.T @ (mu - t) + pen * beta
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            return LogisticFit(beta[0], beta[1:], 1.0 / (1.0 + np.exp(-(design @ beta))), it - 1)
        w = mu * (1.0 - mu)
        hess = design.T @ (design * w[:, None]) + np.diag(pen)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        if float(grad @ step) < 1e-20:
            return LogisticFit(beta[0], beta[1:], mu, it - 1)
        scale = 1.0
        while True:
            cand = beta - scale * step
            cand_obj = objective(cand)
            # tolerance absorbs rounding once the objective is flat
            if cand_obj <= obj + 1e-12 * max(1.0, abs(obj)) or scale < 1e-10:
                break
            scale *= 0.5
        beta, obj = cand, cand_obj
    raise ConvergenceError(f"logistic regression did not converge in {max_iter} iterations (gradient norm {grad_norm:.3e})")


def fit_propensity(covariates: CovariateMatrix, treatment: Mapping[str, int], l2: float = 1e-4) -> dict[str, float]:
    """P(treatment | covariates) per location from standardized covariates."""
    locs = covariates.locations
    t = np.array([treatment[loc] for loc in locs], dtype=np.float64)
    fit = fit_logistic(covariates.standardized(), t, l2=l2)
    return dict(zip(locs, fit.probabilities.tolist()))


def match_pairs(propensity: Mapping[str, float], treatment: Mapping[str, int], caliper: float | None = None) -> MatchedPairs:
    """Greedy 1:1 nearest-neighbour matching without replacement.

    Treated locations are processed by decreasing propensity; each takes the
    closest unused control (ties by name), subject to the caliper.
    """
    treated = sorted((loc for loc, z in treatment.items() if z == 1), key=lambda k: (-propensity[k], k))
    controls = sorted(loc for loc, z in treatment.items() if z == 0)
    if not treated or not controls:
        raise MatchingError("need at least one treated and one control location")
    free = set(controls)
    pairs, unmatched = [], []
    for tloc in treated:
        if not free:
            unmatched.append(tloc)
            continue
        best = min(free, key=lambda c: (abs(propensity[tloc] - propensity[c]), c))
        if caliper is not None and abs(propensity[tloc] - propensity[best]) > caliper:
            unmatched.append(tloc)
            continue
        pairs.append((tloc, best))
        free.discard(best)
    if not pairs:
        raise MatchingError("no pairs formed within the caliper")
    return MatchedPairs(pairs, dict(propensity), unmatched)


def average_treatment_effect(pairs, outcome: Mapping[str, float]) -> float:
    pairs = pairs.pairs if isinstance(pairs, MatchedPairs) else pairs
    if not pairs:
        raise ValueError("no matched pairs")
    return math.fsum(outcome[t] - outcome[c] for t, c in pairs) / len(pairs)


def bootstrap_ci(pairs, outcome, n_resamples: int = 100, level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile interval of the ATE over resamples of the matched pairs."""
    pairs = pairs.pairs if isinstance(pairs, MatchedPairs) else pairs
    if len(pairs) < 2:
        raise ValueError("need at least 2 pairs")
    diffs = np.array([outcome[t] - outcome[c] for t, c in pairs])
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(diffs), size=(n_resamples, len(diffs)))
    ates = diffs[idx].mean(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(ates, [tail, 100.0 - tail])
    return float(lo), float(hi)


def naive_difference(treatment: Mapping[str, int], outcome: Mapping[str, float]) -> float:
    t = [outcome[k] for k, z in treatment.items() if z == 1]
    c = [outcome[k] for k, z in treatment.items() if z == 0]
    return float(np.mean(t) - np.mean(c))


# -- confounder selection ---------------------------------------------------


def psm_ate(covariates: CovariateMatrix, names, treatment, outcome, caliper=None) -> tuple[float, MatchedPairs]:
    sub = covariates.subset(covariates.locations, names)
    prop = fit_propensity(sub, treatment)
    pairs = match_pairs(prop, {k: treatment[k] for k in sub.locations}, caliper)
    return average_treatment_effect(pairs, outcome), pairs


def select_confounders_cie(candidates, covariates, treatment, outcome, threshold: float = 0.10, caliper=None) -> list:
    """Change-in-estimate: keep candidates whose removal moves the ATE by >= `threshold` (relative).

    A candidate whose removal makes matching or the propensity fit fail is kept.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidates")
    ate_all, _ = psm_ate(covariates, candidates, treatment, outcome, caliper)
    keep = []
    for c in candidates:
        try:
            ate_wo, _ = psm_ate(covariates, [x for x in candidates if x != c], treatment, outcome, caliper)
        except (MatchingError, ConvergenceError) as exc:
            # dropping c leaves no estimate at all, which we count as a change
            log.warning("CIE: estimate without %s failed (%s); keeping it", c, exc)
            keep.append(c)
            continue
        change = abs(ate_wo - ate_all)
        if ate_all != 0:
            change /= abs(ate_all)
        if change >= threshold:
            keep.append(c)
    return keep


def standardized_mean_differences(candidates, covariates: CovariateMatrix, treatment) -> dict[str, float]:
    """``|mean_T - mean_C| / sqrt((var_T + var_C) / 2)`` with sample variances.

    A zero pooled SD gives 0 when the group means agree and ``inf`` when they
    differ, so a covariate that reproduces the treatment ranks first.
    """
    t = np.array([treatment[loc] for loc in covariates.locations]) == 1
    out = {}
    for name in candidates:
        col = covariates.values[:, covariates.names.index(name)]
        a, b = col[t], col[~t]
        var_a = a.var(ddof=1) if len(a) > 1 else 0.0
        var_b = b.var(ddof=1) if len(b) > 1 else 0.0
        pooled = math.sqrt((var_a + var_b) / 2.0)
        gap = abs(a.mean() - b.mean()) if len(a) and len(b) else 0.0
        if pooled == 0:
            out[name] = math.inf if gap > 0 else 0.0
        else:
            out[name] = gap / pooled
    return out


def select_confounders_hdpsa(candidates, covariates, treatment, smd_threshold: float = 0.2) -> list:
    """Candidates with SMD >= threshold, most imbalanced first."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidates")
    smd = standardized_mean_differences(candidates, covariates, treatment)
    ranked = sorted(candidates, key=lambda c: (-smd[c], c))
    return [c for c in ranked if smd[c] >= smd_threshold]


def estimate_effect(
    covariates: CovariateMatrix,
    treatment: Mapping[str, int],
    outcome: Mapping[str, float],
    seed: int = 0,
    caliper: float | None = None,
    n_resamples: int = 100,
    cie_threshold: float = 0.10,
    smd_threshold: float = 0.2,
    outcome_name: str = "",
    treatment_name: str = "",
) -> CausalResult:
    """Confounder selection (CIE and HDPSA intersected), matching, ATE and bootstrap CI."""
    cands = list(covariates.names)
    cie = select_confounders_cie(cands, covariates, treatment, outcome, cie_threshold, caliper)
    smd = standardized_mean_differences(cands, covariates, treatment)
    hdpsa = select_confounders_hdpsa(cands, covariates, treatment, smd_threshold)
    selected = [c for c in hdpsa if c in set(cie)]
    if not selected:
        log.warning("%s ~ %s: empty CIE/HDPSA intersection, using the HDPSA set", outcome_name, treatment_name)
        selected = hdpsa
    ate, pairs = psm_ate(covariates, selected, treatment, outcome, caliper)
    lo, hi = bootstrap_ci(pairs, outcome, n_resamples, 0.95, seed)
    return CausalResult(
        outcome_name, treatment_name, ate, lo, hi, selected, len(pairs.pairs),
        naive_difference(treatment, outcome), cie, hdpsa, smd, pairs,
    )


def causal_pipeline(stat: StatTable, scores: Mapping[str, float], covariates: CovariateMatrix, seed: int = 0, score_name: str = "", **kw) -> CausalResult:
    """Effect of above-median `stat` on the min-max normalized health score."""
    common = sorted(set(stat.values) & set(scores) & set(covariates.locations))
    if len(common) < 6:
        raise ValueError(f"only {len(common)} locations overlap; need >= 6")
    treatment = binarize_treatment({k: stat.values[k] for k in common})
    outcome = normalize_outcome({k: scores[k] for k in common})
    return estimate_effect(
        covariates.subset(common), treatment, outcome, seed=seed,
        outcome_name=score_name, treatment_name=stat.name, **kw,
    )


# -- tables -----------------------------------------------------------------


def read_location_table(path) -> tuple[list, list, np.ndarray]:
    """Delimited text with a header row; first column holds the location code."""
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        delim = "\t" if "\t" in sample else ","
        rows = list(csv.reader(fh, delimiter=delim))
    header, body = rows[0], [r for r in rows[1:] if r]
    vals = np.array([[float(x) if x.strip() not in ("", "NA", "nan") else np.nan for x in r[1:]] for r in body])
    return [r[0] for r in body], header[1:], vals.reshape(len(body), len(header) - 1)


def read_statistics(path) -> dict[str, StatTable]:
    locs, names, vals = read_location_table(path)
    return {
        n: StatTable(n, {loc: float(v) for loc, v in zip(locs, vals[:, j]) if not np.isnan(v)})
        for j, n in enumerate(names)
    }


def read_covariates(path) -> CovariateMatrix:
    locs, names, vals = read_location_table(path)
    return CovariateMatrix(locs, names, vals)


def fmt_r(r: float, p: float) -> str:
    """Table-style correlation, e.g. ``-.45**``."""
    if r is None or (isinstance(r, float) and math.isnan(r)):
        return "---"
    s = f"{r:.2f}"
    s = s.replace("0.", ".", 1) if abs(r) < 1 else s
    return s + stars(p)


def fmt_ate(res: CausalResult | None) -> str:
    if res is None:
        return "---"
    s = f"{res.ate:.2f}".replace("0.", ".", 1)
    return s + ("*" if res.significant else "")
