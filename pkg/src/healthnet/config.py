"""Pipeline configuration read from an INI file with one section per stage."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneParams
from .centrality import KINDS
from .health import AGGREGATIONS, DENOMINATORS
from .ingest import DOCUMENT_KINDS


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


@dataclass
class Paths:
    documents: Path | None = None
    mentions: Path | None = None
    lexicon: Path | None = None
    liwc: Path | None = None
    forum_map: Path | None = None
    census: Path | None = None
    blocklist: Path | None = None
    statistics: Path | None = None
    covariates: Path | None = None
    mapping: Path | None = None
    output: Path = Path("out")


@dataclass
class ExtractConfig:
    min_contributions: int = 5
    check_representativeness: bool = True
    kind: str = ""  # empty: every document kind


@dataclass
class GraphConfig:
    max_conditions: int = 50


@dataclass
class BackboneConfig:
    delta: float = 1.0
    target_edges: int | None = None
    emit_scores: bool = False


@dataclass
class ClusterConfig:
    trials: int = 10
    overlap_threshold: float = 0.25
    top_k: int = 50


@dataclass
class CentralityConfig:
    kind: str = "pagerank"
    damping: float = 0.85
    tol: float = 1e-10
    max_iter: int = 200
    top_fraction: float = 0.05


@dataclass
class ScoreConfig:
    aggregation: str = "max"
    denominator: str = "mentioning-users"
    include_overlaps: bool = True


@dataclass
class CausalConfig:
    caliper: float | None = 0.15
    n_resamples: int = 100
    cie_threshold: float = 0.10
    smd_threshold: float = 0.2


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    strict: bool = False


@dataclass
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    run: RunConfig = field(default_factory=RunConfig)
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    centrality: CentralityConfig = field(default_factory=CentralityConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    causal: CausalConfig = field(default_factory=CausalConfig)

    def validate(self) -> None:
        """Check parameter ranges; path existence is checked per stage."""
        checks = [
            (self.run.threads >= 1, "run.threads must be >= 1"),
            (self.extract.min_contributions >= 0, "extract.min_contributions must be >= 0"),
            (self.graph.max_conditions >= 2, "graph.max_conditions must be >= 2"),
            (self.extract.kind in ("", *DOCUMENT_KINDS), f"extract.kind {self.extract.kind!r} unknown"),
            (self.backbone.delta >= 0, "backbone.delta must be >= 0"),
            (self.backbone.target_edges is None or self.backbone.target_edges > 0, "backbone.target_edges must be > 0"),
            (self.cluster.trials >= 1, "cluster.trials must be >= 1"),
            (0 < self.cluster.overlap_threshold <= 1, "cluster.overlap_threshold must lie in (0, 1]"),
            (self.cluster.top_k >= 1, "cluster.top_k must be >= 1"),
            (self.centrality.kind in KINDS, f"centrality.kind must be one of {KINDS}"),
            (0 < self.centrality.damping < 1, "centrality.damping must lie in (0, 1)"),
            (self.centrality.tol > 0, "centrality.tol must be > 0"),
            (0 < self.centrality.top_fraction <= 1, "centrality.top_fraction must lie in (0, 1]"),
            (self.score.aggregation in AGGREGATIONS, f"score.aggregation must be one of {AGGREGATIONS}"),
            (self.score.denominator in DENOMINATORS, f"score.denominator must be one of {DENOMINATORS}"),
            (self.causal.caliper is None or self.causal.caliper > 0, "causal.caliper must be > 0"),
            (self.causal.n_resamples >= 10, "causal.n_resamples must be >= 10"),
            (self.causal.cie_threshold >= 0, "causal.cie_threshold must be >= 0"),
            (self.causal.smd_threshold >= 0, "causal.smd_threshold must be >= 0"),
        ]
        errors = [msg for ok, msg in checks if not ok]
        if errors:
            raise ConfigError("; ".join(errors))

    def backbone_params(self) -> BackboneParams:
        return BackboneParams(self.backbone.delta, self.backbone.target_edges)

    def as_dict(self) -> dict:
        return {
            f.name: {k: (str(v) if isinstance(v, Path) else v) for k, v in dataclasses.asdict(getattr(self, f.name)).items()}
            for f in dataclasses.fields(self)
        }


def _convert(raw: str, current, name: str):
    raw = raw.strip()
    if isinstance(current, bool):
        lowered = raw.lower()
        if lowered in ("1", "yes", "true", "on"):
            return True
        if lowered in ("0", "no", "false", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(current, str):
        return raw
    if raw.lower() in ("", "none"):
        return None
    try:
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float) or name in ("causal.caliper",):
            return float(raw)
        if name == "backbone.target_edges":
            return int(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return raw


def load_config(path=None) -> PipelineConfig:
    """Read an INI file; relative paths are resolved against the file's directory.

    Unknown sections or keys are errors, so typos do not silently fall back
    to defaults.
    """
    cfg = PipelineConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    parser = configparser.ConfigParser(interpolation=None)
    parser.read(path, encoding="utf-8")
    base = path.resolve().parent
    sections = {f.name for f in dataclasses.fields(cfg)}
    for section in parser.sections():
        if section not in sections:
            raise ConfigError(f"unknown section [{section}]")
        target = getattr(cfg, section)
        known = {f.name for f in dataclasses.fields(target)}
        for key, raw in parser.items(section):
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
            if section == "paths":
                value = Path(raw.strip()) if raw.strip() else None
                if value is not None and not value.is_absolute():
                    value = base / value
                if key == "output" and value is None:
                    raise ConfigError("paths.output must not be empty")
            else:
                value = _convert(raw, getattr(target, key), f"{section}.{key}")
            setattr(target, key, value)
    if not cfg.paths.output.is_absolute():
        cfg.paths.output = base / cfg.paths.output
    cfg.validate()
    return cfg
