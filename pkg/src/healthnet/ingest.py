"""Corpus loading, user geolocation, dictionary mention extraction and data checks."""

from __future__ import annotations

import csv
import json
import logging
import re
import string
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping

log = logging.getLogger(__name__)

DOCUMENT_KINDS = ("submission", "comment", "tweet")

_WS = re.compile(r"\s+")
_TOKEN = re.compile(r"\w+(?:['’]\w+)*")
_STRIP = string.punctuation + "‘’“”…"


class MalformedRecord(ValueError):
    """A line of an input file could not be parsed."""

    def __init__(self, path, lineno, reason):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = path
        self.lineno = lineno
        self.reason = reason


def normalize_condition(text: str) -> str:
    """Case-fold, collapse whitespace and strip surrounding punctuation."""
    return _WS.sub(" ", text.casefold()).strip().strip(_STRIP).strip()


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.casefold())


@dataclass(frozen=True)
class Document:
    doc_id: str
    user_id: str
    kind: str
    text: str
    forum: str | None = None


@dataclass(frozen=True)
class MentionRecord:
    doc_id: str
    user_id: str
    conditions: frozenset[str]
    location: str | None = None

    @classmethod
    def from_strings(cls, doc_id, user_id, conditions, location=None):
        normed = (normalize_condition(c) for c in conditions)
        return cls(doc_id, user_id, frozenset(c for c in normed if c), location or None)


@dataclass(frozen=True)
class ActivityRecord:
    user_id: str
    forum: str
    contribution_count: int

    def __post_init__(self):
        if self.contribution_count < 0:
            raise ValueError("contribution_count must be non-negative")


@dataclass(frozen=True)
class LocationStats:
    location: str
    user_count: int
    census_population: int

    def __post_init__(self):
        if self.census_population <= 0:
            raise ValueError(f"census_population must be positive for {self.location}")


@dataclass
class LoadReport:
    """Counts of parsed records and the line numbers of skipped ones."""

    n_ok: int = 0
    malformed: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_malformed(self) -> int:
        return len(self.malformed)


class Lexicon:
    """Phrase dictionary matched over token sequences, longest match first.

    Parameters
    ----------
    name : str
        Label used in reports (e.g. the disease a Dis-LIWC list describes).
    entries : mapping of phrase to category
        Phrases are normalized on construction; the category may be ``None``.
    """

    def __init__(self, name: str, entries: Mapping[str, str | None]):
        self.name = name
        self.entries: dict[str, str | None] = {}
        self._trie: dict = {}
        self.max_len = 0
        for phrase, category in entries.items():
            norm = normalize_condition(phrase)
            toks = tuple(tokenize(norm))
            if not toks:
                continue
            if norm in self.entries:
                raise ValueError(f"duplicate phrase after normalization: {norm!r}")
            self.entries[norm] = category or None
            node = self._trie
            for tok in toks:
                node = node.setdefault(tok, {})
            node[None] = norm
            self.max_len = max(self.max_len, len(toks))

    def __len__(self):
        return len(self.entries)

    def __contains__(self, phrase):
        return normalize_condition(phrase) in self.entries

    def categories(self) -> set[str]:
        return {c for c in self.entries.values() if c}

    def find(self, text: str) -> list[str]:
        """Leftmost-longest phrase matches in `text`, in order of occurrence."""
        toks = tokenize(text)
        out = []
        i, n = 0, len(toks)
        while i < n:
            node = self._trie
            best, best_end = None, i
            j = i
            while j < n and toks[j] in node:
                node = node[toks[j]]
                j += 1
                if None in node:
                    best, best_end = node[None], j
            if best is None:
                i += 1
            else:
                out.append(best)
                i = best_end
        return out


def _iter_jsonl(path, strict, report, parse):
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("record is not an object")
                rec = parse(obj)
            except (ValueError, KeyError, TypeError) as exc:
                err = MalformedRecord(path, lineno, str(exc))
                if strict:
                    raise err from exc
                log.warning("skipping malformed line: %s", err)
                if report is not None:
                    report.malformed.append((lineno, str(exc)))
                continue
            if report is not None:
                report.n_ok += 1
            yield rec


def _parse_document(obj):
    text = obj["text"]
    if not isinstance(text, str) or not text.strip():
        raise ValueError("empty text")
    kind = obj.get("kind", "comment")
    if kind not in DOCUMENT_KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    return Document(
        doc_id=str(obj["doc_id"]),
        user_id=str(obj["user_id"]),
        kind=kind,
        text=text,
        forum=obj.get("forum") or None,
    )


def _parse_mention(obj):
    conds = obj["conditions"]
    if not isinstance(conds, list) or not all(isinstance(c, str) for c in conds):
        raise ValueError("conditions must be a list of strings")
    return MentionRecord.from_strings(
        str(obj["doc_id"]), str(obj["user_id"]), conds, obj.get("location")
    )


def load_documents(path, strict: bool = False, report: LoadReport | None = None) -> Iterator[Document]:
    """Stream documents from a JSON-lines file in file order."""
    return _iter_jsonl(path, strict, report, _parse_document)


def load_mentions(path, strict: bool = False, report: LoadReport | None = None) -> Iterator[MentionRecord]:
    """Stream mention records (e.g. output of an external NER model)."""
    return _iter_jsonl(path, strict, report, _parse_mention)


def write_mentions(records: Iterable[MentionRecord], path) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            obj = {
                "doc_id": rec.doc_id,
                "user_id": rec.user_id,
                "location": rec.location,
                "conditions": sorted(rec.conditions),
            }
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def read_two_column(path, value_type=str, header: bool = False) -> dict[str, object]:
    """Read a tab-delimited ``key TAB value`` file; blank lines and ``#`` comments skipped."""
    out = {}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh, delimiter="\t")
        for i, row in enumerate(rows):
            if (header and i == 0) or not row or row[0].startswith("#"):
                continue
            if len(row) < 2:
                raise MalformedRecord(path, i + 1, "expected two columns")
            out[row[0]] = value_type(row[1])
    return out


def load_lexicon(path, name: str | None = None) -> Lexicon:
    entries = {}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            phrase, _, category = line.partition("\t")
            if normalize_condition(phrase) in entries:
                raise MalformedRecord(path, lineno, f"duplicate phrase {phrase!r}")
            entries[normalize_condition(phrase)] = category.strip() or None
    return Lexicon(name or Path(path).stem, entries)


def demo_disease_lexicon() -> Lexicon:
    """A small bundled word list (eight disease categories) in the lexicon file format."""
    with resources.as_file(resources.files("healthnet") / "data" / "demo_liwc.tsv") as path:
        return load_lexicon(path, "demo_liwc")


def split_lexicon(lexicon: Lexicon) -> dict[str, Lexicon]:
    """One sub-lexicon per category label, e.g. per-disease Dis-LIWC lists."""
    groups: dict[str, dict] = defaultdict(dict)
    for phrase, cat in lexicon.entries.items():
        if cat:
            groups[cat][phrase] = cat
    return {cat: Lexicon(cat, ents) for cat, ents in sorted(groups.items())}


def extract_mentions_dictionary(doc: Document, lexicon: Lexicon, location: str | None = None) -> MentionRecord:
    if not len(lexicon):
        raise ValueError("lexicon is empty")
    return MentionRecord(doc.doc_id, doc.user_id, frozenset(lexicon.find(doc.text)), location)


def activities_from_documents(docs: Iterable[Document]) -> list[ActivityRecord]:
    """Per (user, forum) message counts."""
    counts: dict[tuple[str, str], int] = defaultdict(int)
    for d in docs:
        if d.forum:
            counts[d.user_id, d.forum] += 1
    return [ActivityRecord(u, f, c) for (u, f), c in sorted(counts.items())]


def infer_user_locations(
    activities: Iterable[ActivityRecord],
    forum_to_state: Mapping[str, str],
    min_contributions: int = 5,
) -> dict[str, str]:
    """Assign users active in the location forums of exactly one state.

    Users whose location-forum contributions span two or more states are
    dropped, as are users with fewer than `min_contributions` contributions
    in location forums.
    """
    states: dict[str, set[str]] = defaultdict(set)
    totals: dict[str, int] = defaultdict(int)
    for act in activities:
        state = forum_to_state.get(act.forum)
        if state is None or act.contribution_count <= 0:
            continue
        states[act.user_id].add(state)
        totals[act.user_id] += act.contribution_count
    return {
        user: next(iter(ss))
        for user, ss in sorted(states.items())
        if len(ss) == 1 and totals[user] >= min_contributions
    }


def filter_forums(records: Iterable, blocklist, counts: dict | None = None) -> Iterator:
    """Drop records posted in blocklisted forums; ``counts['dropped']`` tallies removals."""
    blocked = set(blocklist)
    if counts is not None:
        counts.setdefault("dropped", 0)
    for rec in records:
        if getattr(rec, "forum", None) in blocked:
            if counts is not None:
                counts["dropped"] += 1
            continue
        yield rec


def two_sigma_outliers(values: Mapping[str, float], k: int = 2) -> set[str]:
    """Keys whose value lies strictly more than `k` population SDs from the mean.

    The comparison is done in exact rational arithmetic so that values sitting
    exactly on the band edge are retained regardless of rounding.
    """
    if not values:
        return set()
    xs = {key: Fraction(v) for key, v in values.items()}
    n = len(xs)
    s = sum(xs.values())
    q = sum(x * x for x in xs.values())
    spread = n * q - s * s  # n^2 * population variance
    if spread == 0:
        return set()
    return {key for key, x in xs.items() if (n * x - s) ** 2 > k * k * spread}


def representativeness_outliers(stats: Iterable[LocationStats]) -> set[str]:
    """Locations whose users-per-capita ratio deviates more than 2 SDs from the mean."""
    stats = list(stats)
    if len(stats) < 3:
        raise ValueError("need at least 3 locations")
    ratios = {s.location: Fraction(s.user_count, s.census_population) for s in stats}
    return two_sigma_outliers(ratios)


def _max_matching(left: list, right: list, compatible) -> int:
    adj = [[j for j, b in enumerate(right) if compatible(a, b)] for a in left]
    match_r = [-1] * len(right)

    def augment(i, seen):
        for j in adj[i]:
            if j in seen:
                continue
            seen.add(j)
            if match_r[j] < 0 or augment(match_r[j], seen):
                match_r[j] = i
                return True
        return False

    return sum(augment(i, set()) for i in range(len(left)))


def _contains_tokens(a: tuple, b: tuple) -> bool:
    if len(a) > len(b):
        a, b = b, a
    if not a:
        return not b
    return any(b[i : i + len(a)] == a for i in range(len(b) - len(a) + 1))


def annotation_agreement(worker_entities, expert_entities, mode: str = "strict") -> float:
    """Share of matched entities between two annotation lists.

    ``match / max(len(workers), len(expert))`` where `match` is the size of a
    maximum one-to-one pairing of compatible entries. Strict mode pairs equal
    strings; relaxed mode pairs entries when one normalized token sequence
    occurs inside the other ("pain" matches "strong pain", not "painting").
    """
    a, b = list(worker_entities), list(expert_entities)
    if not a and not b:
        return 1.0
    if mode == "strict":
        m = _max_matching(a, b, lambda x, y: x == y)
    elif mode == "relaxed":
        ta = [tuple(tokenize(normalize_condition(x))) for x in a]
        tb = [tuple(tokenize(normalize_condition(y))) for y in b]
        m = _max_matching(ta, tb, _contains_tokens)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return m / max(len(a), len(b))
