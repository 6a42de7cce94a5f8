"""Per-location category fractions and standardized health scores."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .ingest import Document, Lexicon, MentionRecord, two_sigma_outliers

log = logging.getLogger(__name__)

AGGREGATIONS = ("max", "sum", "mean")
DENOMINATORS = ("mentioning-users", "all-users")


@dataclass(frozen=True)
class CategorySpec:
    category_id: str
    conditions: frozenset

    def __post_init__(self):
        if not self.conditions:
            raise ValueError(f"category {self.category_id!r} has no conditions")


@dataclass
class UserTable:
    """Union of mentioned conditions per located user.

    `users_by_location` holds the users that make up each location's
    denominator; users without a location are left out.
    """

    conditions: dict[str, frozenset]
    location: dict[str, str]
    users_by_location: dict[str, list]
    denominator: str = "mentioning-users"

    @classmethod
    def from_mentions(
        cls,
        mentions: Iterable[MentionRecord],
        user_location: Mapping[str, str] | None = None,
        denominator: str = "mentioning-users",
        exclude_locations=(),
    ):
        if denominator not in DENOMINATORS:
            raise ValueError(f"unknown denominator {denominator!r}")
        user_location = dict(user_location or {})
        conds: dict[str, set] = defaultdict(set)
        loc: dict[str, str] = {}
        for rec in mentions:
            where = user_location.get(rec.user_id) or rec.location
            if not where or where in exclude_locations:
                continue
            loc.setdefault(rec.user_id, where)
            if rec.conditions:
                conds[rec.user_id].update(rec.conditions)
        if denominator == "all-users":
            for user, where in user_location.items():
                if where not in exclude_locations:
                    loc.setdefault(user, where)
            members = loc
        else:
            members = {u: loc[u] for u in conds}
        by_loc: dict[str, list] = defaultdict(list)
        for user in sorted(members):
            by_loc[members[user]].append(user)
        return cls({u: frozenset(c) for u, c in conds.items()}, loc, dict(sorted(by_loc.items())), denominator)


@dataclass
class FractionTable:
    values: dict[str, float]
    category_id: str
    rho: int
    aggregation: str
    denominator: str = "mentioning-users"
    excluded: dict[str, str] = field(default_factory=dict)
    n_users: dict[str, int] = field(default_factory=dict)


@dataclass
class HealthScoreTable:
    scores: dict[str, float]
    fractions: dict[str, float]
    mu: float
    sigma: float
    category_id: str
    rho: int
    aggregation: str
    denominator: str = "mentioning-users"
    excluded: dict[str, str] = field(default_factory=dict)


def _aggregate(vals: list, agg: str) -> float:
    if agg == "max":
        return max(vals)
    if agg == "sum":
        return math.fsum(vals)
    if agg == "mean":
        return math.fsum(vals) / len(vals)
    raise ValueError(f"unknown aggregation {agg!r}")


def category_fraction(
    users: UserTable,
    spec: CategorySpec,
    centrality: Mapping[str, float] | None = None,
    rho: int = 1,
    agg: str = "max",
    locations: Iterable[str] = (),
) -> FractionTable:
    """Centrality-weighted fraction of each location's users mentioning the category.

    A user's contribution is ``agg(c(s) ** rho for s in S_i(u))`` or 0 when
    they mention nothing from the category. With ``rho = 0`` this is the plain
    share of users mentioning the category. Locations listed in `locations`
    but without any users are reported as excluded.
    """
    if rho not in (0, 1):
        raise ValueError("rho must be 0 or 1")
    if agg not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {agg!r}")
    if rho == 1 and centrality is None:
        raise ValueError("rho = 1 needs centrality scores")
    centrality = centrality or {}
    cat = spec.conditions
    values, n_users, excluded = {}, {}, {}
    for loc in sorted(set(locations) - set(users.users_by_location)):
        excluded[loc] = "no users"
    for loc, members in users.users_by_location.items():
        if not members:
            excluded[loc] = "no users"
            continue
        total = []
        for user in members:
            hit = users.conditions.get(user, frozenset()) & cat
            if hit:
                weights = [1.0 if rho == 0 else float(centrality.get(s, 0.0)) for s in sorted(hit)]
                total.append(_aggregate(weights, agg))
        values[loc] = math.fsum(total) / len(members)
        n_users[loc] = len(members)
    return FractionTable(values, spec.category_id, rho, agg, users.denominator, excluded, n_users)


def score_outlier_filter(ft: FractionTable) -> FractionTable:
    """Exclude locations more than two population SDs from the mean fraction."""
    if len(ft.values) < 3:
        raise ValueError("need at least 3 locations")
    out = two_sigma_outliers(ft.values)
    excluded = dict(ft.excluded)
    for loc in sorted(out):
        excluded[loc] = "outlier (>2 SD)"
    kept = {k: v for k, v in ft.values.items() if k not in out}
    return replace(ft, values=kept, excluded=excluded, n_users={k: ft.n_users[k] for k in kept if k in ft.n_users})


def health_score(ft: FractionTable) -> HealthScoreTable:
    """``H(l) = -(f(l) - mu) / sigma`` over the included locations (population SD)."""
    if len(ft.values) < 2:
        raise ValueError("need at least 2 locations")
    locs = sorted(ft.values)
    f = np.array([ft.values[k] for k in locs])
    mu = float(f.mean())
    sigma = float(f.std())
    if sigma == 0:
        log.warning("category %s: all fractions equal; scores set to 0", ft.category_id)
        h = np.zeros_like(f)
    else:
        h = -(f - mu) / sigma
    return HealthScoreTable(
        dict(zip(locs, h.tolist())), dict(zip(locs, f.tolist())), mu, sigma,
        ft.category_id, ft.rho, ft.aggregation, ft.denominator, dict(ft.excluded),
    )


def score_category(users, spec, centrality=None, rho=1, agg="max", locations=()):
    """Fraction, outlier filter and standardization in one call."""
    ft = category_fraction(users, spec, centrality, rho, agg, locations)
    return health_score(score_outlier_filter(ft))


def disliwc_scores(
    documents: Iterable[Document],
    user_location: Mapping[str, str],
    lexicons: Mapping[str, Lexicon],
    exclude_locations=(),
) -> dict[str, HealthScoreTable]:
    """Dictionary-count baseline: rho = 0 scores per disease word list.

    Every located user with at least one document forms the denominator, so a
    word list nobody uses gives all-zero fractions (and all-zero scores).
    """
    if not lexicons:
        raise ValueError("no lexicons given")
    docs = [d for d in documents if d.user_id in user_location]
    out = {}
    for name, lex in sorted(lexicons.items()):
        if not len(lex):
            raise ValueError(f"lexicon {name!r} is empty")
        records = (MentionRecord(d.doc_id, d.user_id, frozenset(lex.find(d.text))) for d in docs)
        located = {d.user_id: user_location[d.user_id] for d in docs}
        users = UserTable.from_mentions(records, located, "all-users", exclude_locations)
        spec = CategorySpec(f"liwc:{name}", frozenset(lex.entries))
        out[name] = score_category(users, spec, rho=0)
    return out


def write_scores(table: HealthScoreTable, path) -> None:
    meta = {
        "category_id": table.category_id,
        "rho": table.rho,
        "aggregation": table.aggregation,
        "denominator": table.denominator,
        "mu": repr(table.mu),
        "sigma": repr(table.sigma),
    }
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}={v}\n")
        for loc in sorted(table.excluded):
            fh.write(f"# excluded={loc}:{table.excluded[loc]}\n")
        fh.write("location\tf\tH\n")
        for loc in sorted(table.scores):
            fh.write(f"{loc}\t{table.fractions[loc]!r}\t{table.scores[loc]!r}\n")


def read_scores(path) -> HealthScoreTable:
    meta, excluded, fr, sc = {}, {}, {}, {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            if key == "excluded":
                loc, _, reason = val.partition(":")
                excluded[loc] = reason
            else:
                meta[key] = val
            continue
        loc, f, h = line.split("\t")
        if loc == "location":
            continue
        fr[loc] = float(f)
        sc[loc] = float(h)
    return HealthScoreTable(
        sc, fr, float(meta["mu"]), float(meta["sigma"]), meta["category_id"], int(meta["rho"]),
        meta["aggregation"], meta.get("denominator", ""), excluded,
    )
