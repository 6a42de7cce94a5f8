"""Stage-wise command line pipeline.

Each stage reads the artifacts of earlier stages from the output directory,
writes its own artifacts atomically (all or nothing) and records a manifest
``manifest.<stage>.json`` with input digests, parameters, version and seed.
No timestamps are stored, so re-running a stage with the same inputs and seed
rewrites byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import shutil
import sys
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .backbone import noise_corrected_backbone, tune_delta, write_scores as write_edge_scores
from .centrality import ConvergenceError as PageRankError
from .centrality import centrality, read_centrality, top_central, write_centrality
from .community import (
    DisconnectedGraphError,
    assign_overlaps,
    build_taxonomy,
    detect_communities,
    read_taxonomy,
    write_partition,
    write_taxonomy,
)
from .config import ConfigError, PipelineConfig, load_config
from .graph import build_cooccurrence, giant_component, read_graph, write_graph
from .health import (
    CategorySpec,
    UserTable,
    disliwc_scores,
    read_scores,
    score_category,
    write_scores,
)
from .inference import (
    ConvergenceError,
    MatchingError,
    causal_pipeline,
    correlate_tables,
    derive_seed,
    fmt_ate,
    fmt_r,
    read_covariates,
    read_statistics,
    stars,
)
from .ingest import (
    LoadReport,
    LocationStats,
    MalformedRecord,
    activities_from_documents,
    extract_mentions_dictionary,
    filter_forums,
    infer_user_locations,
    load_documents,
    load_lexicon,
    load_mentions,
    read_two_column,
    representativeness_outliers,
    split_lexicon,
    write_mentions,
)

log = logging.getLogger("healthnet")

STAGES = ("extract", "graph", "backbone", "cluster", "centrality", "score", "correlate", "causal")
TABLE3_COLUMNS = ("Health score", "Official Statistic", "r_rho=0", "r_rho=1", "r_liwc", "ATE", "#Conf.")
RESULT_COLUMNS = (
    "health_score", "statistic", "n",
    "r_rho0", "p_rho0", "stars_rho0",
    "r_rho1", "p_rho1", "stars_rho1",
    "r_liwc", "p_liwc", "stars_liwc",
    "ate", "ate_star", "ci_low", "ci_high", "naive", "n_pairs", "n_conf", "confounders", "note",
)

# artifact name -> stage that writes it
ARTIFACTS = {
    "mentions.jsonl": "extract",
    "user_locations.tsv": "extract",
    "location_stats.tsv": "extract",
    "graph.tsv": "graph",
    "backbone.tsv": "backbone",
    "partition.tsv": "cluster",
    "taxonomy.json": "cluster",
    "centrality.tsv": "centrality",
    "scores/index.tsv": "score",
    "correlations.tsv": "correlate",
}


class ValidationError(Exception):
    """Bad input or configuration (exit code 1)."""


class MissingUpstream(ValidationError):
    def __init__(self, artifact, stage):
        super().__init__(f"missing {artifact}; run `{stage}` first")
        self.stage = stage


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# -- staging: all-or-nothing writes ---------------------------------------------


class Stage:
    """Collects a stage's outputs in a scratch directory and publishes them together."""

    def __init__(self, name: str, cfg: PipelineConfig):
        self.name = name
        self.cfg = cfg
        self.out = cfg.paths.output
        self.tmp = self.out / f".tmp-{name}"
        self.inputs: dict[str, str] = {}
        self.params: dict = {}
        self.written: list[str] = []

    def __enter__(self):
        self.out.mkdir(parents=True, exist_ok=True)
        if self.tmp.exists():
            shutil.rmtree(self.tmp)
        self.tmp.mkdir()
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self._publish()
        shutil.rmtree(self.tmp, ignore_errors=True)
        return False

    # inputs
    def artifact(self, name: str) -> Path:
        """An upstream artifact, digested into the manifest."""
        path = self.out / name
        if not path.exists():
            raise MissingUpstream(name, ARTIFACTS.get(name, "an earlier stage"))
        self.inputs[name] = sha256_file(path)
        return path

    def source(self, key: str, required: bool = True) -> Path | None:
        """A configured input file (``paths.<key>``)."""
        path = getattr(self.cfg.paths, key)
        if path is None:
            if required:
                raise ValidationError(f"paths.{key} is not set")
            return None
        if not Path(path).is_file():
            raise ValidationError(f"paths.{key}: {path} does not exist")
        self.inputs[key] = sha256_file(path)
        return Path(path)

    # outputs
    def path(self, name: str) -> Path:
        p = self.tmp / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(name)
        return p

    def _publish(self):
        outputs = {}
        for name in sorted(set(self.written)):
            outputs[name] = sha256_file(self.tmp / name)
        for name in sorted(set(self.written)):
            dest = self.out / name
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(self.tmp / name, dest)
        manifest = {
            "stage": self.name,
            "version": __version__,
            "seed": self.cfg.run.seed,
            "params": self.params,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": outputs,
        }
        text = json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n"
        (self.out / f"manifest.{self.name}.json").write_text(text, encoding="utf-8")


def _write_rows(path, header, rows):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join("" if x is None else str(x) for x in row) + "\n")


def _read_rows(path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[1:] if line]


def _num(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


# -- stages ---------------------------------------------------------------------


def stage_extract(cfg: PipelineConfig):
    strict = cfg.run.strict
    with Stage("extract", cfg) as st:
        st.params = {"extract": cfg.as_dict()["extract"], "strict": strict}
        st.source("blocklist", required=False)
        blocked = _blocklist(cfg)
        forum_map = read_two_column(p, header=True) if (p := st.source("forum_map", required=False)) else {}
        census = read_two_column(p, int, header=True) if (p := st.source("census", required=False)) else {}

        docs_path = st.source("documents", required=cfg.paths.mentions is None)
        mentions_path = st.source("mentions", required=False)
        report = LoadReport()
        docs = []
        if docs_path is not None:
            counts = {}
            stream = filter_forums(load_documents(docs_path, strict, report), blocked, counts)
            docs = [d for d in stream if not cfg.extract.kind or d.kind == cfg.extract.kind]
            log.info("extract: %d documents (%d blocked, %d malformed)", len(docs), counts["dropped"], report.n_malformed)

        user_loc = {}
        if docs and forum_map:
            user_loc = infer_user_locations(activities_from_documents(docs), forum_map, cfg.extract.min_contributions)

        if mentions_path is not None:
            records = []
            for rec in load_mentions(mentions_path, strict, report):
                loc = user_loc.get(rec.user_id) or rec.location
                records.append(type(rec)(rec.doc_id, rec.user_id, rec.conditions, loc))
                if rec.location and rec.user_id not in user_loc:
                    user_loc[rec.user_id] = rec.location
        else:
            lexicon = load_lexicon(st.source("lexicon"))
            records = [extract_mentions_dictionary(d, lexicon, user_loc.get(d.user_id)) for d in docs]
        records = [r for r in records if r.conditions]

        users_per_loc = Counter(user_loc.values())
        excluded = set()
        stats = []
        if census:
            stats = [LocationStats(loc, users_per_loc.get(loc, 0), census[loc]) for loc in sorted(census)]
            if cfg.extract.check_representativeness and len(stats) >= 3:
                excluded = representativeness_outliers(stats)
        elif user_loc:
            log.warning("no census file: representativeness check skipped")
        st.params["n_located_users"] = len(user_loc)
        st.params["excluded_locations"] = sorted(excluded)

        write_mentions(sorted(records, key=lambda r: r.doc_id), st.path("mentions.jsonl"))
        _write_rows(st.path("user_locations.tsv"), ["user_id", "location"], sorted(user_loc.items()))
        locs = sorted(set(census) | set(users_per_loc))
        _write_rows(
            st.path("location_stats.tsv"),
            ["location", "user_count", "census_population", "users_per_capita", "excluded"],
            [
                [
                    loc, users_per_loc.get(loc, 0), census.get(loc, ""),
                    _num(users_per_loc.get(loc, 0) / census[loc]) if loc in census else "",
                    int(loc in excluded),
                ]
                for loc in locs
            ],
        )
        if report.malformed:
            _write_rows(st.path("malformed.tsv"), ["line", "reason"], report.malformed)


def stage_graph(cfg: PipelineConfig):
    with Stage("graph", cfg) as st:
        st.params = {"max_conditions": cfg.graph.max_conditions}
        records = load_mentions(st.artifact("mentions.jsonl"), strict=True)
        g = build_cooccurrence(records, cfg.graph.max_conditions)
        st.params.update(n_nodes=g.n_nodes, n_edges=g.n_edges)
        write_graph(g, st.path("graph.tsv"))


def stage_backbone(cfg: PipelineConfig):
    with Stage("backbone", cfg) as st:
        g = read_graph(st.artifact("graph.tsv"))
        if g.n_edges == 0:
            raise ValidationError("co-occurrence graph has no edges")
        params = cfg.backbone_params()
        st.params = {"delta": params.delta, "target_edges": params.target_edges}
        if params.target_edges is not None:
            if params.target_edges >= g.n_edges:
                raise ValidationError(f"backbone.target_edges must be below {g.n_edges}")
            res = tune_delta(g, params.target_edges)
            st.params.update(delta=res.delta, achieved=res.achieved, converged=res.converged)
            params = type(params)(res.delta)
        pruned, _ = noise_corrected_backbone(g, params)
        giant, _ = giant_component(pruned)
        if giant.n_edges == 0:
            raise ValidationError("no edges survive the backbone; lower backbone.delta")
        st.params.update(n_nodes=giant.n_nodes, n_edges=giant.n_edges)
        write_graph(giant, st.path("backbone.tsv"))
        if cfg.backbone.emit_scores:
            write_edge_scores(g, st.path("backbone_scores.tsv"))


def _cluster_labels(tax, lexicon_path) -> dict:
    """Majority lexicon category per level-1 cluster (ties lexicographic)."""
    if lexicon_path is None:
        return {}
    lex = load_lexicon(lexicon_path)
    labels = {}
    for c in tax.clusters:
        votes = Counter(lex.entries.get(m) for m in c.members)
        votes.pop(None, None)
        if votes:
            labels[c.cluster_id] = min(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0]
    return labels


def stage_cluster(cfg: PipelineConfig):
    with Stage("cluster", cfg) as st:
        st.params = {"trials": cfg.cluster.trials, "overlap_threshold": cfg.cluster.overlap_threshold, "top_k": cfg.cluster.top_k}
        g = read_graph(st.artifact("backbone.tsv"))
        part = detect_communities(g, seed=cfg.run.seed, trials=cfg.cluster.trials, threads=cfg.run.threads)
        overlaps = assign_overlaps(g, part.level1, cfg.cluster.overlap_threshold)
        tax = build_taxonomy(g, part, overlaps, cfg.cluster.top_k)
        labels = _cluster_labels(tax, st.source("lexicon", required=False))
        for c in tax.clusters:
            c.label = labels.get(c.cluster_id)
        st.params.update(
            n_modules=part.n_modules, n_submodules=part.n_submodules(),
            codelength_one_module=part.codelength_one_module,
            codelength_level1=part.codelength_level1, codelength_level2=part.codelength_level2,
        )
        write_partition(part, st.path("partition.tsv"))
        write_taxonomy(tax, st.path("taxonomy.json"))


def stage_centrality(cfg: PipelineConfig):
    c = cfg.centrality
    with Stage("centrality", cfg) as st:
        st.params = {"kind": c.kind, "damping": c.damping, "tol": c.tol, "max_iter": c.max_iter}
        g = read_graph(st.artifact("backbone.tsv"))
        write_centrality(centrality(g, c.kind, c.damping, c.tol, c.max_iter), st.path("centrality.tsv"))


def _score_categories(tax, cent, top_fraction, include_overlaps) -> dict[str, set]:
    """Named categories: one per level-1 cluster, plus ``all`` and ``central``."""
    sets = tax.category_sets(include_overlaps)
    names, seen = {}, Counter()
    for c in tax.clusters:
        base = c.label or f"cluster{c.cluster_id}"
        seen[base] += 1
        names[c.cluster_id] = base if seen[base] == 1 else f"{base}-{seen[base]}"
    out = {names[cid]: conds for cid, conds in sets.items()}
    out["all"] = set(cent.conditions)
    out["central"] = top_central(cent, top_fraction)
    return dict(sorted(out.items()))


def stage_score(cfg: PipelineConfig):
    sc = cfg.score
    with Stage("score", cfg) as st:
        st.params = {"score": cfg.as_dict()["score"], "top_fraction": cfg.centrality.top_fraction}
        tax = read_taxonomy(st.artifact("taxonomy.json"))
        cent = read_centrality(st.artifact("centrality.tsv"))
        user_loc = {r["user_id"]: r["location"] for r in _read_rows(st.artifact("user_locations.tsv"))}
        loc_rows = _read_rows(st.artifact("location_stats.tsv"))
        excluded = {r["location"] for r in loc_rows if r["excluded"] == "1"}
        mentions = list(load_mentions(st.artifact("mentions.jsonl"), strict=True))
        users = UserTable.from_mentions(mentions, user_loc, sc.denominator, excluded)
        if len(users.users_by_location) < 3:
            raise ValidationError("fewer than 3 locations have users; cannot score")
        weights = cent.as_dict()
        index = []
        for name, conds in _score_categories(tax, cent, cfg.centrality.top_fraction, sc.include_overlaps).items():
            spec = CategorySpec(name, frozenset(conds))
            for rho in (0, 1):
                table = score_category(users, spec, weights, rho, sc.aggregation)
                fname = f"scores/{name}.rho{rho}.tsv"
                write_scores(table, st.path(fname))
                index.append([name, f"rho{rho}", fname, len(conds), len(table.scores)])
        if (liwc := st.source("liwc", required=False)) is not None:
            docs = list(filter_forums(load_documents(st.source("documents"), cfg.run.strict), _blocklist(cfg)))
            for name, table in disliwc_scores(docs, user_loc, split_lexicon(load_lexicon(liwc)), excluded).items():
                fname = f"scores/{name}.liwc.tsv"
                write_scores(table, st.path(fname))
                index.append([name, "liwc", fname, "", len(table.scores)])
        _write_rows(st.path("scores/index.tsv"), ["score", "variant", "file", "n_conditions", "n_locations"], index)


def _blocklist(cfg) -> set:
    p = cfg.paths.blocklist
    if p is None:
        return set()
    return {ln.strip() for ln in Path(p).read_text(encoding="utf-8").splitlines() if ln.strip() and not ln.startswith("#")}


def _load_scores(st: Stage) -> dict[tuple[str, str], dict]:
    index = _read_rows(st.artifact("scores/index.tsv"))
    out = {}
    for row in index:
        path = st.artifact(row["file"])
        out[row["score"], row["variant"]] = read_scores(path).scores
    return out


def _pairs(st: Stage, scores, stats) -> list[tuple[str, str, str]]:
    """(health score, statistic, liwc list) rows from the mapping file, or every combination."""
    mp = st.source("mapping", required=False)
    if mp is None:
        names = sorted({k for k, v in scores if v == "rho1"})
        return [(s, t, "") for s in names for t in sorted(stats)]
    rows = []
    for r in _read_rows(mp):
        if (r["health_score"], "rho1") not in scores:
            log.warning("mapping: no health score %r; row skipped", r["health_score"])
            continue
        if r["statistic"] not in stats:
            raise ValidationError(f"mapping: unknown statistic {r['statistic']!r}")
        rows.append((r["health_score"], r["statistic"], r.get("liwc", "") or ""))
    return rows


def _corr(scores, key, stat):
    if key not in scores:
        return None
    try:
        return correlate_tables(scores[key], stat.values)
    except ValueError as exc:
        log.warning("correlation %s vs %s skipped: %s", key, stat.name, exc)
        return None


def stage_correlate(cfg: PipelineConfig):
    with Stage("correlate", cfg) as st:
        scores = _load_scores(st)
        stats = read_statistics(st.source("statistics"))
        rows = []
        for health, stat_name, liwc in _pairs(st, scores, stats):
            stat = stats[stat_name]
            row = [health, stat_name]
            n = ""
            for key in ((health, "rho0"), (health, "rho1"), (liwc, "liwc")):
                res = _corr(scores, key, stat) if key[0] else None
                if res is None:
                    row += ["", ""]
                else:
                    r, p, n_used = res
                    n = n_used if n == "" else n
                    row += [_num(r), _num(p)]
            rows.append(row[:2] + [n] + row[2:])
        _write_rows(
            st.path("correlations.tsv"),
            ["health_score", "statistic", "n", "r_rho0", "p_rho0", "r_rho1", "p_rho1", "r_liwc", "p_liwc"],
            rows,
        )
        # activity checks: are scores mere proxies for platform activity?
        loc_rows = _read_rows(st.artifact("location_stats.tsv"))
        activity = {
            "census_population": {r["location"]: float(r["census_population"]) for r in loc_rows if r["census_population"]},
            "users_per_capita": {r["location"]: float(r["users_per_capita"]) for r in loc_rows if r["users_per_capita"]},
            "located_users": {r["location"]: float(r["user_count"]) for r in loc_rows},
        }
        act_rows = []
        for (name, variant), table in sorted(scores.items()):
            for var, values in activity.items():
                try:
                    r, p, n = correlate_tables(table, values)
                except ValueError:
                    continue
                act_rows.append([name, variant, var, n, _num(r), _num(p)])
        _write_rows(st.path("activity_checks.tsv"), ["score", "variant", "variable", "n", "r", "p"], act_rows)


def stage_causal(cfg: PipelineConfig):
    cc = cfg.causal
    with Stage("causal", cfg) as st:
        st.params = {"causal": cfg.as_dict()["causal"]}
        scores = _load_scores(st)
        corr = {(r["health_score"], r["statistic"]): r for r in _read_rows(st.artifact("correlations.tsv"))}
        stats = read_statistics(st.source("statistics"))
        covariates = read_covariates(st.source("covariates"))
        results, table3 = [], []
        for health, stat_name, _ in _pairs(st, scores, stats):
            c = corr.get((health, stat_name))
            if c is None:
                raise MissingUpstream(f"correlation row {health}/{stat_name}", "correlate")
            seed = derive_seed(cfg.run.seed, health, stat_name)
            note, res = "", None
            try:
                res = causal_pipeline(
                    stats[stat_name], scores[health, "rho1"], covariates, seed=seed, score_name=health,
                    caliper=cc.caliper, n_resamples=cc.n_resamples,
                    cie_threshold=cc.cie_threshold, smd_threshold=cc.smd_threshold,
                )
            except (MatchingError, ConvergenceError, ValueError) as exc:
                note = str(exc).replace("\t", " ")
                log.warning("causal %s ~ %s: %s", health, stat_name, note)
            fl = {k: (float(c[k]) if c[k] else float("nan")) for k in ("r_rho0", "p_rho0", "r_rho1", "p_rho1", "r_liwc", "p_liwc")}
            star = {k: stars(fl[f"p_{k}"]) if c[f"r_{k}"] else "" for k in ("rho0", "rho1", "liwc")}
            results.append([
                health, stat_name, c["n"],
                c["r_rho0"], c["p_rho0"], star["rho0"],
                c["r_rho1"], c["p_rho1"], star["rho1"],
                c["r_liwc"], c["p_liwc"], star["liwc"],
                _num(res.ate) if res else "", ("*" if res.significant else "") if res else "",
                _num(res.ci_low) if res else "", _num(res.ci_high) if res else "",
                _num(res.naive) if res else "", res.n_pairs if res else "",
                len(res.selected_confounders) if res else "",
                ",".join(res.selected_confounders) if res else "", note,
            ])
            table3.append([
                health, stat_name,
                fmt_r(fl["r_rho0"], fl["p_rho0"]), fmt_r(fl["r_rho1"], fl["p_rho1"]), fmt_r(fl["r_liwc"], fl["p_liwc"]),
                fmt_ate(res), len(res.selected_confounders) if res else "---",
            ])
        _write_rows(st.path("results.tsv"), RESULT_COLUMNS, results)
        _write_rows(st.path("table3.tsv"), TABLE3_COLUMNS, table3)


STAGE_FUNCS = {
    "extract": stage_extract,
    "graph": stage_graph,
    "backbone": stage_backbone,
    "cluster": stage_cluster,
    "centrality": stage_centrality,
    "score": stage_score,
    "correlate": stage_correlate,
    "causal": stage_causal,
}


def run_stage(stage: str, cfg: PipelineConfig) -> None:
    """Run one stage (or every stage in order for ``all``)."""
    for name in STAGES if stage == "all" else (stage,):
        log.info("stage %s", name)
        STAGE_FUNCS[name](cfg)


# -- entry point ----------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="healthnet", description="Condition networks and location health scores.")
    p.add_argument("--config", type=Path, help="INI configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    p.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    p.add_argument("--strict", action="store_true", help="fail on malformed input lines")
    p.add_argument("--output", type=Path, help="output directory (overrides paths.output)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "all"):
        sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage")
    syn = sub.add_parser("synth", help="write the synthetic demo corpus and a config")
    syn.add_argument("directory", type=Path)
    syn.add_argument("--documents", type=int, default=None)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "synth":
        from .synthetic import CorpusParams, write_corpus

        params = CorpusParams()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.documents is not None:
            overrides["n_documents"] = args.documents
        params = CorpusParams(**{**params.__dict__, **overrides})
        print(write_corpus(args.directory, params))
        return 0
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.run.seed = args.seed
        if args.threads is not None:
            cfg.run.threads = args.threads
        if args.strict:
            cfg.run.strict = True
        if args.output is not None:
            cfg.paths.output = args.output.resolve()
        cfg.validate()
        run_stage(args.command, cfg)
    except (ValidationError, ConfigError, MalformedRecord) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, PageRankError, DisconnectedGraphError, MatchingError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
