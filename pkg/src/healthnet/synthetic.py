"""Seeded synthetic data: a toy geo-located health corpus and small test graphs.

Everything here is a pure function of its seed, so the corpus written by
:func:`write_corpus` is byte-identical across machines and runs.

The corpus plants a known structure:

* condition names are pseudo-words grouped into categories, each split into
  a few sub-topics, plus a handful of generic symptoms shared by all
  categories;
* every document is written by one user, lives in one forum and talks about
  one category (mostly one sub-topic of it);
* users live in a location and post in that location's forums, so the
  location heuristic can recover them; a few users post in two locations;
* a latent per-location prevalence raises the chance that residents talk about
  a category, and the official statistic for that category is a noisy copy of
  the same prevalence;
* covariates include two that drive the prevalence (true confounders) and
  several that do not.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import CooccurrenceGraph, from_edges

# filler vocabulary; condition names are built from syllables that never form these words
FILLER = (
    "i have been feeling really bad lately and the doctor said it is probably nothing "
    "my wife thinks we should wait but today was worse than yesterday so anyone else "
    "had this before any advice would help thanks in advance also work has been busy "
    "went to the clinic again after a long week not sure what to do next honestly"
).split()

SYLLABLES = (
    "ba be bi bo bu da de di do du fa fe fi fo ka ke ki ko ku la le li lo lu "
    "ma me mi mo mu na ne ni no nu pa pe pi po ra re ri ro ru sa se si so "
    "ta te ti to tu va ve vi vo za ze zi zo"
).split()
SUFFIXES = ("itis", "osis", "algia", "emia", "pathy", "oma", "ism", "ache")

CATEGORY_NAMES = ("mental", "breathing", "obesity", "elderly", "stds", "infections", "skin", "digestive")
STATISTIC_NAMES = {
    "mental": "mentally_unhealthy_days",
    "breathing": "asthma",
    "obesity": "diabetes_prev",
    "elderly": "arthritis",
    "stds": "hiv_prevalence",
    "infections": "heroin_use",
    "skin": "psoriasis_prev",
    "digestive": "ibs_prev",
}
COVARIATE_NAMES = (
    "median_age", "pct_unemployed", "per_capita_income", "pct_uninsured",
    "pct_higher_education", "homicide_rate", "cultural_tightness", "pct_volunteering",
)


@dataclass(frozen=True)
class CorpusParams:
    """Sizes and effect strengths of the synthetic corpus."""

    seed: int = 7
    n_documents: int = 10_000
    n_locations: int = 40
    n_users: int = 1_300
    n_categories: int = 8
    conditions_per_category: int = 240
    subtopics: int = 4
    subtopic_focus: float = 0.5
    n_generic: int = 20
    zipf_exponent: float = 1.1
    prevalence_effect: float = 0.6
    statistic_noise: float = 0.5
    multi_location_share: float = 0.03
    blocked_share: float = 0.03
    liwc_words: int = 15


@dataclass
class Corpus:
    documents: list
    conditions: dict = field(default_factory=dict)  # name -> category ("" for generic)
    subtopic: dict = field(default_factory=dict)
    forum_to_location: dict = field(default_factory=dict)
    census: dict = field(default_factory=dict)
    statistics: dict = field(default_factory=dict)  # statistic -> {location: value}
    covariates: dict = field(default_factory=dict)  # covariate -> {location: value}
    liwc: dict = field(default_factory=dict)  # phrase -> category
    mapping: list = field(default_factory=list)  # (category, statistic, liwc category)
    home: dict = field(default_factory=dict)  # user -> location
    blocklist: tuple = ()


def _pseudo_words(rng, n, used):
    out = []
    while len(out) < n:
        k = rng.integers(2, 4)
        word = "".join(rng.choice(SYLLABLES, size=k))
        if rng.random() < 0.5:
            word += rng.choice(SUFFIXES)
        if word not in used:
            used.add(word)
            out.append(word)
    return out


def _condition_names(rng, n, used):
    """Mix of one- and two-word names, unique and disjoint from the filler words."""
    names = []
    while len(names) < n:
        if rng.random() < 0.35:
            a, b = _pseudo_words(rng, 2, set(used))
            name = f"{a} {b}"
        else:
            (name,) = _pseudo_words(rng, 1, set(used))
        if name not in used:
            used.add(name)
            names.append(name)
    return names


def _zipf(n, s):
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def make_corpus(params: CorpusParams = CorpusParams()) -> Corpus:
    rng = np.random.default_rng(params.seed)
    used = set(FILLER)
    n_loc, n_cat = params.n_locations, params.n_categories
    cats = CATEGORY_NAMES[:n_cat] if n_cat <= len(CATEGORY_NAMES) else tuple(f"cat{i}" for i in range(n_cat))
    locations = [f"L{i:02d}" for i in range(n_loc)]

    # conditions: per category, split into sub-topics, Zipf popularity within each
    conditions, subtopic = {}, {}
    cat_terms = {}
    for c in cats:
        names = _condition_names(rng, params.conditions_per_category, used)
        cat_terms[c] = names
        for i, name in enumerate(names):
            conditions[name] = c
            subtopic[name] = i % params.subtopics
    generic = _condition_names(rng, params.n_generic, used)
    for name in generic:
        conditions[name] = ""
    sub_terms = {
        (c, k): [t for t in cat_terms[c] if subtopic[t] == k] for c in cats for k in range(params.subtopics)
    }
    sub_p = {key: _zipf(len(v), params.zipf_exponent) for key, v in sub_terms.items()}
    gen_p = _zipf(len(generic), 0.8)

    # locations: confounders drive a latent prevalence per category
    conf = rng.normal(size=(n_loc, 2))
    other = rng.normal(size=(n_loc, len(COVARIATE_NAMES) - 2))
    loadings = rng.normal(scale=0.6, size=(2, n_cat))
    prevalence = conf @ loadings + rng.normal(scale=0.8, size=(n_loc, n_cat))
    prevalence = (prevalence - prevalence.mean(0)) / prevalence.std(0)
    census = {loc: int(rng.integers(500_000, 20_000_000)) for loc in locations}

    statistics = {}
    for j, c in enumerate(cats):
        noisy = prevalence[:, j] + rng.normal(scale=params.statistic_noise, size=n_loc)
        name = STATISTIC_NAMES.get(c, f"{c}_rate")
        statistics[name] = {loc: round(float(10 + 2 * v), 6) for loc, v in zip(locations, noisy)}
    statistics["poor_health"] = {
        loc: round(float(15 + 2 * v), 6) for loc, v in zip(locations, prevalence.mean(1) + rng.normal(scale=0.3, size=n_loc))
    }
    cov_values = np.column_stack([conf, other])
    covariates = {
        name: {loc: round(float(x), 6) for loc, x in zip(locations, cov_values[:, k])}
        for k, name in enumerate(COVARIATE_NAMES)
    }

    # forums: two per location, plus topical forums and one blocked forum
    forum_to_location = {}
    for loc in locations:
        forum_to_location[f"{loc.lower()}_city"] = loc
        forum_to_location[f"{loc.lower()}_state"] = loc
    topical = ["askdocs", "health", "chronicpain", "nutrition"]
    blocked = "conspiracy"

    # users: population-proportional homes, activity from a geometric law
    pop = np.array([census[l] for l in locations], dtype=float)
    home_idx = rng.choice(n_loc, size=params.n_users, p=pop / pop.sum())
    users = [f"u{i:05d}" for i in range(params.n_users)]
    home = {u: locations[h] for u, h in zip(users, home_idx)}
    second = {
        u: locations[(h + 1 + rng.integers(n_loc - 1)) % n_loc]
        for u, h in zip(users, home_idx)
        if rng.random() < params.multi_location_share
    }
    activity = rng.geometric(1 / 8, size=params.n_users).astype(float)
    author = rng.choice(params.n_users, size=params.n_documents, p=activity / activity.sum())

    base = np.full(n_cat, 1.0 / n_cat)
    docs = []
    for d, ui in enumerate(author.tolist()):
        user = users[ui]
        li = home_idx[ui]
        w = base * np.exp(params.prevalence_effect * prevalence[li])
        cat = cats[rng.choice(n_cat, p=w / w.sum())]
        r = rng.random()
        if r < params.blocked_share:
            forum = blocked
        elif r < 0.55:
            forum = rng.choice(topical)
        else:
            loc = second[user] if user in second and rng.random() < 0.4 else home[user]
            forum = f"{loc.lower()}_{'city' if rng.random() < 0.5 else 'state'}"
        k_mentions = int(rng.choice([0, 1, 2, 3, 4, 5], p=[0.1, 0.25, 0.3, 0.2, 0.1, 0.05]))
        main = int(rng.integers(params.subtopics))
        mentioned = []
        for _ in range(k_mentions):
            if rng.random() < 0.12:
                mentioned.append(generic[rng.choice(len(generic), p=gen_p)])
                continue
            k = main if rng.random() < params.subtopic_focus else int(rng.integers(params.subtopics))
            terms = sub_terms[(cat, k)]
            mentioned.append(terms[rng.choice(len(terms), p=sub_p[(cat, k)])])
        words = list(rng.choice(FILLER, size=int(rng.integers(6, 16))))
        for m in mentioned:
            words.insert(int(rng.integers(len(words) + 1)), m)
        text = " ".join(words)
        if rng.random() < 0.3:
            text = text.capitalize() + "!"
        kind = "submission" if rng.random() < 0.3 else "comment"
        docs.append({"doc_id": f"d{d:06d}", "user_id": user, "forum": str(forum), "kind": kind, "text": text})

    # dictionary baseline: a few mid-popularity words per category
    liwc = {}
    for c in cats:
        pool = [t for t in cat_terms[c] if " " not in t]
        picks = rng.choice(len(pool), size=min(params.liwc_words, len(pool)), replace=False)
        for p in sorted(picks.tolist()):
            liwc[pool[p]] = c
    mapping = [(c, STATISTIC_NAMES.get(c, f"{c}_rate"), c) for c in cats]
    mapping += [("all", "poor_health", ""), ("central", "poor_health", "")]

    return Corpus(
        docs, conditions, subtopic, forum_to_location, census, statistics, covariates,
        liwc, mapping, home, (blocked,),
    )


def _write_table(path, header, rows):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(x) for x in row) + "\n")


CONFIG_TEMPLATE = """\
[paths]
documents = documents.jsonl
lexicon = lexicon.tsv
liwc = liwc.tsv
forum_map = forum_map.tsv
census = census.tsv
blocklist = blocklist.txt
statistics = statistics.tsv
covariates = covariates.tsv
mapping = mapping.tsv
output = out

[run]
seed = {seed}

[backbone]
delta = 1.0

[cluster]
trials = 5
"""


def write_corpus(outdir, params: CorpusParams = CorpusParams()) -> Path:
    """Write every input file of the pipeline plus a ready-to-use ``config.ini``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    c = make_corpus(params)
    with (out / "documents.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for doc in c.documents:
            fh.write(json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n")
    # lexicons carry no header row
    for fname, entries in (("lexicon.tsv", c.conditions), ("liwc.tsv", c.liwc)):
        (out / fname).write_text("".join(f"{k}\t{v}\n" for k, v in sorted(entries.items())), encoding="utf-8")
    _write_table(out / "forum_map.tsv", ["forum", "location"], sorted(c.forum_to_location.items()))
    _write_table(out / "census.tsv", ["location", "population"], sorted(c.census.items()))
    (out / "blocklist.txt").write_text("".join(f"{b}\n" for b in c.blocklist), encoding="utf-8")
    locs = sorted(c.census)
    for fname, table in (("statistics.tsv", c.statistics), ("covariates.tsv", c.covariates)):
        names = list(table)
        _write_table(out / fname, ["location", *names], [[loc, *(table[n][loc] for n in names)] for loc in locs])
    _write_table(out / "mapping.tsv", ["health_score", "statistic", "liwc"], c.mapping)
    (out / "config.ini").write_text(CONFIG_TEMPLATE.format(seed=params.seed), encoding="utf-8")
    return out / "config.ini"


# -- causal recovery ----------------------------------------------------------

CAUSAL_TAU = -0.15


@dataclass(frozen=True)
class CausalDGP:
    """Two confounders drive both the treatment statistic and the outcome."""

    n: int = 40
    n_noise: int = 6
    tau: float = CAUSAL_TAU
    treatment_strength: float = 1.0
    treatment_noise: float = 1.5
    outcome_confounding: float = 0.08
    outcome_noise: float = 0.12


def causal_data(seed: int, dgp: CausalDGP = CausalDGP()):
    """Return ``(locations, names, X, statistic, outcome)``.

    The statistic is continuous; binarizing it at the median gives the
    treatment. The outcome is ``tau * T + b * (x1 + x2) + noise``.
    """
    rng = np.random.default_rng(seed)
    k = 2 + dgp.n_noise
    x = rng.normal(size=(dgp.n, k))
    locations = [f"L{i:02d}" for i in range(dgp.n)]
    names = ["c1", "c2"] + [f"noise{j}" for j in range(dgp.n_noise)]
    conf = x[:, 0] + x[:, 1]
    stat = dgp.treatment_strength * conf + rng.normal(scale=dgp.treatment_noise, size=dgp.n)
    med = np.median(stat)
    t = (stat > med).astype(float)
    y = dgp.tau * t + dgp.outcome_confounding * conf + rng.normal(scale=dgp.outcome_noise, size=dgp.n)
    return locations, names, x, dict(zip(locations, stat.tolist())), dict(zip(locations, y.tolist()))


# -- graphs -------------------------------------------------------------------


def ring_of_cliques(sizes, bridge_weight: int = 1) -> tuple[CooccurrenceGraph, np.ndarray]:
    """Cliques of the given sizes joined in a ring by single bridge edges."""
    edges, truth, start = [], [], 0
    firsts = []
    for m, size in enumerate(sizes):
        nodes = list(range(start, start + size))
        firsts.append(nodes[0])
        edges += [(a, b, 1) for i, a in enumerate(nodes) for b in nodes[i + 1:]]
        truth += [m] * size
        start += size
    k = len(sizes)
    if k > 1:
        for m in range(k):
            last = firsts[m] + sizes[m] - 1
            edges.append((last, firsts[(m + 1) % k], bridge_weight))
    names = [f"n{i:04d}" for i in range(start)]
    return from_edges(names, np.ones(start, dtype=np.int64), edges), np.array(truth)


def planted_heavy_edge(n: int = 20, heavy: int = 50, p: float = 1.0, seed: int = 0) -> tuple[CooccurrenceGraph, tuple]:
    """Unit-weight background (each pair present with probability `p`) plus one edge of weight `heavy`.

    Unit edges only fall below the pruning line when their endpoints are
    strong enough, so the default background is the complete graph.
    """
    rng = np.random.default_rng(seed)
    edges = {(a, b): 1 for a in range(n) for b in range(a + 1, n) if rng.random() < p}
    edges[(0, 1)] = heavy
    names = [f"n{i:02d}" for i in range(n)]
    return from_edges(names, np.ones(n, dtype=np.int64), [(a, b, w) for (a, b), w in edges.items()]), (0, 1)


def planted_partition(n_nodes: int, n_edges: int, n_groups: int, p_in: float = 0.9, seed: int = 0) -> CooccurrenceGraph:
    """Sparse multigraph-style planted partition with integer weights, about `n_edges` distinct edges."""
    rng = np.random.default_rng(seed)
    group = np.arange(n_nodes) % n_groups
    draws = int(n_edges * 1.15)
    a = rng.integers(n_nodes, size=draws)
    inside = rng.random(draws) < p_in
    b_in = group[a] + n_groups * rng.integers(n_nodes // n_groups, size=draws)
    b = np.where(inside, b_in, rng.integers(n_nodes, size=draws))
    keep = a != b
    u, v = np.minimum(a, b)[keep], np.maximum(a, b)[keep]
    key = np.unique(u.astype(np.int64) * n_nodes + v)
    w = rng.integers(1, 6, size=len(key))
    names = [f"c{i:06d}" for i in range(n_nodes)]
    return CooccurrenceGraph(
        tuple(names), np.ones(n_nodes, dtype=np.int64), key // n_nodes, key % n_nodes, w.astype(np.int64)
    )
