"""Run configuration: a flat ``section.key = value`` text file.

Lines starting with ``#`` are comments.  List values are comma separated.
Command-line overrides use the same dotted keys and win over the file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "synth"            # synth | csv
    path: str = ""
    schema: str = ""
    outcome: str = "SEVER"           # outcome column when no severity rule is given
    severity: list = field(default_factory=list)   # died,icu,ventilation columns
    one_hot: list = field(default_factory=list)
    merge: list = field(default_factory=list)      # "A+B->TARGET" entries
    dedupe_key: str = ""
    drop: list = field(default_factory=list)


@dataclass
class SynthSection:
    rows: int = 392
    features: int = 20
    seed: int = -1                   # -1: use the run seed
    duplicates: list = field(default_factory=list)  # "src:dst:std" entries
    missing: list = field(default_factory=list)     # "col:rate" entries
    severity_flags: bool = False


@dataclass
class SelectConfig:
    missing: float = 0.2
    dominance: float = 0.9
    correlation: float = 0.8
    top_k: int = 20
    bins: int = 10
    exclude: list = field(default_factory=list)


@dataclass
class SplitConfig:
    fraction: float = 0.7
    seed: int = -1


@dataclass
class ModelConfig:
    kind: str = "forest"             # forest | leafwise | depthwise
    seed: int = -1
    trees: int = 200
    max_depth: int = 8
    features_per_split: int = 0      # 0: round(sqrt(d))
    rounds: int = 100
    leaves: int = 31
    boost_depth: int = 6
    learning_rate: float = 0.1
    l1: float = 0.0
    l2: float = 1.0


@dataclass
class ExplainConfig:
    instances: list = field(default_factory=lambda: ["0", "1", "2"])
    background: int = 100
    permutations: int = 50
    lime_samples: int = 5000
    kernel_width: float = 0.0        # 0: 0.75 * sqrt(d)
    summary_rows: int = 20
    summary_background: int = 20
    summary_permutations: int = 10
    seed: int = -1


@dataclass
class MetamodelConfig:
    iterations: int = 2000
    step: float = 0.1
    l1: float = 1e-4
    uniform_queries: int = 1000
    linear: bool = True
    interactions: bool = True
    precision: int = 4
    top_features: int = 5
    top_interactions: int = 2
    seed: int = -1


SECTIONS = {
    "data": DataConfig,
    "synth": SynthSection,
    "select": SelectConfig,
    "split": SplitConfig,
    "model": ModelConfig,
    "explain": ExplainConfig,
    "metamodel": MetamodelConfig,
}


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "report"
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthSection = field(default_factory=SynthSection)
    select: SelectConfig = field(default_factory=SelectConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    metamodel: MetamodelConfig = field(default_factory=MetamodelConfig)

    def seed_for(self, section: str) -> int:
        s = getattr(self, section).seed
        return self.seed if s < 0 else s

    def set(self, key: str, raw) -> None:
        key = key.strip()
        if "." in key:
            sec, _, name = key.partition(".")
            if sec not in SECTIONS:
                raise ConfigError(f"unknown config section {sec!r}")
            target = getattr(self, sec)
        else:
            target, name = self, key
        fields = {f.name: f for f in dataclasses.fields(target)}
        if name not in fields or name in SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(target, name)
        setattr(target, name, _coerce(key, raw, current))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = [f"seed = {self.seed}", f"out = {self.out}"]
        for sec in SECTIONS:
            for k, v in dataclasses.asdict(getattr(self, sec)).items():
                if isinstance(v, list):
                    v = ",".join(str(x) for x in v)
                elif isinstance(v, bool):
                    v = "true" if v else "false"
                lines.append(f"{sec}.{k} = {v}")
        return "\n".join(lines) + "\n"

    def validate(self) -> None:
        d = self.data
        if d.source not in ("synth", "csv"):
            raise ConfigError(f"data.source must be synth or csv, got {d.source!r}")
        if d.source == "csv" and not (d.path and d.schema):
            raise ConfigError("data.source = csv needs data.path and data.schema")
        if d.source == "synth" and d.path:
            raise ConfigError("exactly one data source: data.path is set but data.source = synth")
        if d.severity and len(d.severity) != 3:
            raise ConfigError("data.severity lists exactly three columns (died, icu, ventilation)")
        s = self.select
        if not 0.0 <= s.missing <= 1.0:
            raise ConfigError("select.missing must lie in [0, 1]")
        if not 0.0 < s.dominance <= 1.0:
            raise ConfigError("select.dominance must lie in (0, 1]")
        if not 0.0 < s.correlation <= 1.0:
            raise ConfigError("select.correlation must lie in (0, 1]")
        if s.top_k < 1 or s.bins < 2:
            raise ConfigError("select.top_k must be >= 1 and select.bins >= 2")
        if not 0.0 < self.split.fraction < 1.0:
            raise ConfigError("split.fraction must lie in (0, 1)")
        m = self.model
        if m.kind not in ("forest", "leafwise", "depthwise"):
            raise ConfigError(f"model.kind must be forest, leafwise or depthwise, got {m.kind!r}")
        if not 0.0 < m.learning_rate <= 1.0:
            raise ConfigError("model.learning_rate must lie in (0, 1]")
        if m.l1 < 0 or m.l2 < 0:
            raise ConfigError("model.l1 and model.l2 must be non-negative")
        if min(m.trees, m.max_depth, m.rounds, m.boost_depth) < 1 or m.leaves < 2:
            raise ConfigError("model sizes must be positive (leaves >= 2)")
        e = self.explain
        if min(e.background, e.permutations, e.summary_rows, e.summary_background, e.summary_permutations) < 1:
            raise ConfigError("explain sizes must be positive")
        if e.kernel_width < 0:
            raise ConfigError("explain.kernel_width must be >= 0")
        mm = self.metamodel
        if mm.iterations < 1 or mm.step <= 0 or mm.l1 < 0 or mm.uniform_queries < 0:
            raise ConfigError("metamodel settings out of range")
        if not (mm.linear or mm.interactions):
            raise ConfigError("metamodel basis is empty: enable linear or interactions")


def _coerce(key, raw, current):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, list):
            return [p.strip() for p in raw.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw


def parse_config_text(text: str, config: RunConfig | None = None) -> RunConfig:
    config = config or RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        config.set(key, value)
    return config


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    config = RunConfig()
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        parse_config_text(text, config)
    for key, value in (overrides or {}).items():
        config.set(key, value)
    config.validate()
    return config
