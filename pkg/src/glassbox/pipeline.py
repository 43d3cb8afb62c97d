"""Batch pipeline: preprocess -> select -> train -> explain -> metamodel -> report.

Each stage reads the previous stage's files from the output directory, so
stages can be run one at a time or all together through :func:`run_pipeline`.
Outside ``manifest.json`` (which carries a timestamp) every artifact is a
deterministic function of the resolved config.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .ensemble import (fit_boosted_depthwise, fit_boosted_leafwise, fit_random_forest, load_model,
                       save_model)
from .evaluation import compare_models
from .lime import TrainStats, lime_explain
from .metamodel import (FitOptions, build_basis, fit_metamodel, rank_features, rank_interactions,
                        render_expression)
from .selection import (SelectionReport, correlation_csv, filter_low_variance, filter_missing_rate,
                        prune_correlated, rank_by_mutual_information)
from .shap import ShapSummary, explain as shap_explain, shap_summary
from .svg import LIME_COLORS, SHAP_COLORS, magnitude_bar_chart, signed_bar_chart
from .synth import DEFAULT_INFORMATIVE, DEFAULT_INTERACTION, SynthConfig, write_cohort
from .table import (BINARY, CATEGORICAL, DataError, SeverityRule, Split, derive_severity,
                    drop_rows_with_missing, keep_last_by_key, load_table, merge_columns,
                    normalize_unit_range, one_hot_encode, read_schema, split_train_test, write_schema,
                    write_table)

STAGES = ("preprocess", "select", "train", "explain", "metamodel", "report")

ARTIFACTS = (
    "preprocess.json",
    "selection.json",
    "model.emdl",
    "explanations.json",
    "shap_summary.svg",
    "metamodel.json",
    "evaluation.json",
    "report.md",
)


class MissingArtifact(RuntimeError):
    def __init__(self, path, stage):
        super().__init__(f"{path} not found: run stage {stage} first")
        self.stage = stage


class StageFailure(RuntimeError):
    def __init__(self, stage, error):
        super().__init__(f"stage {stage} failed: {error}")
        self.stage = stage
        self.error = error


def _dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load(out, name, stage):
    path = Path(out) / name
    if not path.exists():
        raise MissingArtifact(path, stage)
    return json.loads(path.read_text())


def _require(out, name, stage) -> Path:
    path = Path(out) / name
    if not path.exists():
        raise MissingArtifact(path, stage)
    return path


# ---------------------------------------------------------------- stages

def _parse_entry(key, entry, types):
    parts = entry.split(":")
    try:
        if len(parts) != len(types):
            raise ValueError
        return tuple(t(p) for t, p in zip(types, parts))
    except ValueError:
        shape = ":".join(t.__name__ for t in types)
        raise ConfigError(f"bad {key} entry {entry!r}; expected {shape}") from None


def stage_preprocess(config: RunConfig) -> list[str]:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    d = config.data
    written = []
    severity = list(d.severity)
    if d.source == "synth":
        s = config.synth
        # the default plant, restricted to the requested width
        informative = {i: c for i, c in DEFAULT_INFORMATIVE.items() if i < s.features}
        pair = DEFAULT_INTERACTION if max(DEFAULT_INTERACTION[:2]) < s.features else None
        scfg = SynthConfig(
            rows=s.rows, features=s.features, seed=config.seed_for("synth"),
            informative=informative, interaction_pair=pair,
            duplicate_pairs=[_parse_entry("synth.duplicates", e, (int, int, float)) for e in s.duplicates],
            missing_rate=dict(_parse_entry("synth.missing", e, (int, float)) for e in s.missing),
            severity_flags=s.severity_flags,
        )
        try:
            scfg.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        write_cohort(scfg, out / "raw.csv", out / "raw.schema", out / "synthetic_truth.json", d.outcome)
        written += ["raw.csv", "raw.schema", "synthetic_truth.json"]
        data_path, schema_path = out / "raw.csv", out / "raw.schema"
        if s.severity_flags and not severity:
            severity = ["died", "icu", "ventilation"]
    else:
        data_path, schema_path = Path(d.path), Path(d.schema)

    schema = read_schema(schema_path)
    outcome_col = None if severity else d.outcome
    table = load_table(data_path, schema, outcome_col)
    steps = [{"step": "load", "rows": table.n_rows, "columns": table.n_cols}]
    if d.dedupe_key:
        table = keep_last_by_key(table, d.dedupe_key)
        steps.append({"step": "keep_last_by_key", "key": d.dedupe_key, "rows": table.n_rows})
    if d.drop:
        table = table.drop_columns(d.drop)
        steps.append({"step": "drop_columns", "columns": list(d.drop)})
    for entry in d.merge:
        sources, _, target = entry.partition("->")
        parts = [p.strip() for p in sources.split("+")]
        if not target or len(parts) < 2:
            raise ConfigError(f"bad data.merge entry {entry!r}; expected A+B->TARGET")
        table = merge_columns(table, parts, target.strip())
        steps.append({"step": "merge_columns", "sources": parts, "target": target.strip()})
    if d.one_hot:
        table = one_hot_encode(table, d.one_hot)
        steps.append({"step": "one_hot_encode", "columns": list(d.one_hot), "width": table.n_cols})
    if severity:
        table = derive_severity(table, SeverityRule(*severity))
        steps.append({"step": "derive_severity", "columns": severity})
    if table.outcome is None:
        raise DataError("no outcome: configure data.outcome or data.severity")

    write_table(table, out / "prepared.csv", d.outcome)
    write_schema(table, out / "prepared.schema", d.outcome)
    _dump({
        "steps": steps,
        "rows": table.n_rows,
        "columns": list(table.column_names),
        "column_kinds": list(table.column_kinds),
        "outcome_column": d.outcome,
        "positives": int(table.outcome.sum()),
        "missing_cells": int(table.missing_mask.sum()),
    }, out / "preprocess.json")
    return written + ["prepared.csv", "prepared.schema", "preprocess.json"]


def _load_prepared(config):
    out = Path(config.out)
    data = _require(out, "prepared.csv", "preprocess")
    schema = read_schema(_require(out, "prepared.schema", "preprocess"))
    return load_table(data, schema, config.data.outcome)


def stage_select(config: RunConfig) -> list[str]:
    out = Path(config.out)
    s = config.select
    table = _load_prepared(config)
    leftover = [n for n, k in zip(table.column_names, table.column_kinds) if k == CATEGORICAL]
    if leftover:
        raise DataError(f"categorical columns {leftover} must be listed in data.one_hot")

    table, r_missing = filter_missing_rate(table, s.missing)
    table, r_variance = filter_low_variance(table, s.dominance)
    excluded = [c for c in s.exclude if c in table.column_names]
    table = table.drop_columns(excluded)
    rows_before = table.n_rows
    table = drop_rows_with_missing(table)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        table, norm = normalize_unit_range(table)
    table, r_corr = prune_correlated(table, s.correlation, s.bins)
    r_mi = rank_by_mutual_information(table, s.top_k, s.bins)
    # keep the original column order so X<i> indices follow the input layout
    table = table.select_columns([c for c in table.column_names if c in r_mi.kept])
    split = split_train_test(table, config.split.fraction, config.seed_for("split"))

    report = r_missing.merge(r_variance)
    report.dropped += [(c, "excluded", 0.0) for c in excluded]
    report = report.merge(r_corr).merge(r_mi)
    kept_idx = [r_corr.kept.index(c) for c in table.column_names]
    report.correlation = r_corr.correlation[np.ix_(kept_idx, kept_idx)]
    report.kept = list(table.column_names)

    write_table(table, out / "selected.csv", config.data.outcome)
    write_schema(table, out / "selected.schema", config.data.outcome)
    (out / "correlation.csv").write_text(correlation_csv(report))
    _dump({
        "report": report.to_dict(),
        "mi_rank": list(r_mi.kept),
        "correlation_pruning": [{"column": c, "reason": r, "r": v} for c, r, v in r_corr.dropped],
        "normalization": norm,
        "normalization_scope": "full table before the split",
        "rows_before_missing_drop": rows_before,
        "rows": table.n_rows,
        "warnings": [str(w.message) for w in caught],
        "split": split.to_dict(),
        "test_positives": int(table.outcome[split.test_indices].sum()),
    }, out / "selection.json")
    return ["selected.csv", "selected.schema", "correlation.csv", "selection.json"]


def _load_selected(config):
    out = Path(config.out)
    data = _require(out, "selected.csv", "select")
    schema = read_schema(_require(out, "selected.schema", "select"))
    table = load_table(data, schema, config.data.outcome)
    split = Split.from_dict(_load(out, "selection.json", "select")["split"])
    return table, split


def train_model(config: RunConfig, X, y):
    m = config.model
    seed = config.seed_for("model")
    if m.kind == "forest":
        return fit_random_forest((X, y), m.trees, m.max_depth, m.features_per_split or None, seed)
    if m.kind == "leafwise":
        return fit_boosted_leafwise((X, y), m.rounds, m.leaves, m.learning_rate, seed)
    return fit_boosted_depthwise((X, y), m.rounds, m.boost_depth, m.learning_rate, m.l1, m.l2, seed)


def stage_train(config: RunConfig) -> list[str]:
    out = Path(config.out)
    table, split = _load_selected(config)
    X = table.matrix()
    model = train_model(config, X[split.train_indices], table.outcome[split.train_indices])
    save_model(model, out / "model.emdl")
    _dump({
        "kind": model.kind,
        "config": model.training_config,
        "tree_count": len(model.trees),
        "train_loss": model.train_loss,
        "flags": model.flags,
    }, out / "training.json")
    return ["model.emdl", "training.json"]


def _subsample(rows, size, seed):
    rows = np.asarray(rows)
    if size >= len(rows):
        return rows
    return np.sort(np.random.default_rng(seed).choice(rows, size=size, replace=False))


def _instances(config, n_test):
    ids = []
    for raw in config.explain.instances:
        try:
            k = int(raw)
        except ValueError:
            raise ConfigError(f"instance id {raw!r} is not an integer; valid range is 0..{n_test - 1}") from None
        if not 0 <= k < n_test:
            raise ConfigError(f"unknown instance id {k}; valid range is 0..{n_test - 1} (test-set positions)")
        ids.append(k)
    return ids


def stage_explain(config: RunConfig) -> list[str]:
    out = Path(config.out)
    table, split = _load_selected(config)
    model = load_model(_require(out, "model.emdl", "train"))
    e = config.explain
    seed = config.seed_for("explain")
    X = table.matrix()
    names = list(table.column_names)
    train = X[split.train_indices]
    test = X[split.test_indices]
    ids = _instances(config, len(test))

    background = train[_subsample(np.arange(len(train)), e.background, seed)]
    stats = TrainStats.from_matrix(train, [k == BINARY for k in table.column_kinds])
    width = e.kernel_width or None
    items = []
    for k in ids:
        x = test[k]
        sh = shap_explain(model, x, background, "auto", e.permutations, seed + k)
        li = lime_explain(model, x, stats, e.lime_samples, width, seed + k)
        items.append({
            "instance_id": k,
            "row": int(split.test_indices[k]),
            "label": int(table.outcome[split.test_indices[k]]),
            "shap": sh.to_dict(names),
            "lime": li.to_dict(names),
        })

    rows = test[: e.summary_rows]
    sbg = train[_subsample(np.arange(len(train)), e.summary_background, seed + 1)]
    summary = shap_summary(model, rows, sbg, names, "auto", e.summary_permutations, seed)
    _dump({
        "feature_names": names,
        "background_rows": int(len(background)),
        "lime_train_stats": stats.to_dict(),
        "instances": items,
        "summary": {**summary.to_dict(), "rows": int(len(rows)), "background_rows": int(len(sbg)),
                    "permutations": e.summary_permutations},
    }, out / "explanations.json")
    return ["explanations.json"] + render_figures(out)


def stage_metamodel(config: RunConfig) -> list[str]:
    out = Path(config.out)
    table, split = _load_selected(config)
    model = load_model(_require(out, "model.emdl", "train"))
    mm = config.metamodel
    X = table.matrix()
    names = list(table.column_names)
    train, test = X[split.train_indices], X[split.test_indices]
    rng = np.random.default_rng(config.seed_for("metamodel"))
    query = np.vstack([train, rng.uniform(0.0, 1.0, size=(mm.uniform_queries, X.shape[1]))])
    basis = build_basis(X.shape[1], mm.linear, mm.interactions)
    opts = FitOptions(mm.iterations, mm.step, mm.l1, config.seed_for("metamodel"))
    spec, trace = fit_metamodel(model, query, basis, opts, names)
    expression = render_expression(spec, mm.precision)

    black = model.score_batch(test)
    white = spec.evaluate(test)
    y_test = table.outcome[split.test_indices]
    comparison = compare_models([("black_box", black), ("metamodel", white)], y_test)
    _dump({
        "spec": spec.to_dict(),
        "expression": expression,
        "basis_size": len(basis),
        "query_rows": int(len(query)),
        "options": {"iterations": opts.iterations, "step": opts.step, "l1_penalty": opts.l1_penalty,
                    "uniform_queries": mm.uniform_queries},
        "trace": trace.to_dict(),
        "top_features": [[n, v] for n, v in rank_features(spec, mm.top_features)],
        "top_interactions": [[list(p), v] for p, v in rank_interactions(spec, mm.top_interactions)]
        if mm.interactions else [],
    }, out / "metamodel.json")
    _dump({
        "model_kind": model.kind,
        "test_rows": int(len(test)),
        "comparison": comparison,
        "fidelity_mse": float(np.mean((black - white) ** 2)),
    }, out / "evaluation.json")
    return ["metamodel.json", "evaluation.json"]


# ---------------------------------------------------------------- report

def render_figures(out) -> list[str]:
    """Re-draw every SVG from ``explanations.json``."""
    out = Path(out)
    ex = _load(out, "explanations.json", "explain")
    figs = out / "figures"
    figs.mkdir(exist_ok=True)
    written = []
    for item in ex["instances"]:
        k = item["instance_id"]
        sh = item["shap"]
        order = sorted(range(len(sh["features"])), key=lambda j: -abs(sh["attributions"][j]))
        (figs / f"shap_{k}.svg").write_text(signed_bar_chart(
            [sh["features"][j] for j in order], [sh["attributions"][j] for j in order],
            f"SHAP attributions, test instance {k}", SHAP_COLORS))
        li = item["lime"]["coefficients"]
        lorder = sorted(li, key=lambda n: -abs(li[n]))
        (figs / f"lime_{k}.svg").write_text(signed_bar_chart(
            lorder, [li[n] for n in lorder], f"LIME coefficients, test instance {k}", LIME_COLORS))
        written += [f"figures/shap_{k}.svg", f"figures/lime_{k}.svg"]
    feats = ex["summary"]["features"]
    (out / "shap_summary.svg").write_text(magnitude_bar_chart(
        [f["feature"] for f in feats], [f["mean_abs_attribution"] for f in feats],
        "Mean |SHAP attribution|"))
    return ["shap_summary.svg"] + written


def _num(v) -> str:
    # same text as the JSON encoder, so every number here can be found in the JSON files
    return json.dumps(v)


def render_report(out) -> str:
    out = Path(out)
    pre = _load(out, "preprocess.json", "preprocess")
    sel = _load(out, "selection.json", "select")
    ex = _load(out, "explanations.json", "explain")
    meta = _load(out, "metamodel.json", "metamodel")
    ev = _load(out, "evaluation.json", "metamodel")
    lines = ["# Interpretability report", ""]
    lines += ["## Data", "",
              f"- prepared rows: {_num(pre['rows'])}, positives: {_num(pre['positives'])}",
              f"- rows after dropping incomplete records: {_num(sel['rows'])}",
              f"- kept features: {', '.join(sel['report']['kept'])}",
              f"- test rows: {_num(ev['test_rows'])}, test positives: {_num(sel['test_positives'])}", ""]
    lines += ["## Feature selection", "", "| column | reason | statistic |", "|---|---|---|"]
    for d in sel["report"]["dropped"]:
        lines.append(f"| {d['column']} | {d['reason']} | {_num(d['statistic'])} |")
    lines += ["", "| kept feature | mutual information (nats) |", "|---|---|"]
    for c in sel["mi_rank"]:
        lines.append(f"| {c} | {_num(sel['report']['mi_scores'][c])} |")
    lines += ["", "## Black box versus metamodel", "", "| model | AUC |", "|---|---|"]
    for name, res in ev["comparison"]["auc"].items():
        lines.append(f"| {name} | {_num(res['value'])} |")
    for dlt in ev["comparison"]["deltas"]:
        lines.append(f"\nAUC difference ({dlt['a']} minus {dlt['b']}): {_num(dlt['delta'])}")
    legend = ", ".join(f"X{i} = {n}" for i, n in enumerate(meta["spec"]["feature_names"]))
    lines += ["", "## Symbolic metamodel", "", "```", meta["expression"], "```", "", f"Variables: {legend}", "",
              f"Basis size: {_num(meta['basis_size'])}; final training loss: {_num(meta['trace']['loss'][-1])}", "",
              "| feature | linear coefficient magnitude |", "|---|---|"]
    for n, v in meta["top_features"]:
        lines.append(f"| {n} | {_num(v)} |")
    lines += ["", "| interaction | coefficient magnitude |", "|---|---|"]
    for pair, v in meta["top_interactions"]:
        lines.append(f"| {pair[0]} x {pair[1]} | {_num(v)} |")
    lines += ["", "## SHAP summary", "", "![mean attribution](shap_summary.svg)", "",
              "| feature | mean abs attribution | sign association |", "|---|---|---|"]
    for f in ex["summary"]["features"]:
        lines.append(f"| {f['feature']} | {_num(f['mean_abs_attribution'])} | {_num(f['sign_association'])} |")
    lines += ["", "## Explained instances", ""]
    for item in ex["instances"]:
        k = item["instance_id"]
        sh, li = item["shap"], item["lime"]
        lines += [f"### Test instance {_num(k)} (label {_num(item['label'])})", "",
                  f"- black-box score: {_num(sh['score'])}",
                  f"- SHAP base value ({sh['base_value_definition']}): {_num(sh['base_value'])}",
                  f"- LIME surrogate R^2: {_num(li['surrogate_r2'])}",
                  f"- ![shap](figures/shap_{k}.svg) ![lime](figures/lime_{k}.svg)", ""]
    return "\n".join(lines) + "\n"


def stage_report(config: RunConfig) -> list[str]:
    out = Path(config.out)
    written = render_figures(out)
    (out / "report.md").write_text(render_report(out))
    return written + ["report.md"]


STAGE_FUNCS = {
    "preprocess": stage_preprocess,
    "select": stage_select,
    "train": stage_train,
    "explain": stage_explain,
    "metamodel": stage_metamodel,
    "report": stage_report,
}


# ---------------------------------------------------------------- manifest

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(config: RunConfig, stages_done, error=None) -> Path:
    out = Path(config.out)
    present = [a for a in ARTIFACTS if (out / a).exists()]
    aux = sorted(str(p.relative_to(out)) for p in out.rglob("*")
                 if p.is_file() and p.name != "manifest.json" and str(p.relative_to(out)) not in ARTIFACTS)
    manifest = {
        "tool": "glassbox",
        "version": __version__,
        "numpy_version": np.__version__,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": config.to_dict(),
        "seeds": {sec: config.seed_for(sec) for sec in ("synth", "split", "model", "explain", "metamodel")},
        "stages": list(stages_done),
        "artifacts": [{"path": a, "sha256": _sha256(out / a)} for a in present],
        "auxiliary": [{"path": a, "sha256": _sha256(out / a)} for a in aux],
        "error": error,
    }
    path = out / "manifest.json"
    _dump(manifest, path)
    return path


def run_stage(config: RunConfig, stage: str) -> list[str]:
    if stage not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}")
    return STAGE_FUNCS[stage](config)


def run_pipeline(config: RunConfig) -> Path:
    """Run every stage in order and write ``manifest.json``; returns the output directory."""
    config.validate()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    done = []
    for stage in STAGES:
        try:
            run_stage(config, stage)
        except Exception as exc:
            write_manifest(config, done, {"stage": stage, "type": type(exc).__name__, "message": str(exc)})
            raise StageFailure(stage, exc) from exc
        done.append(stage)
    write_manifest(config, done)
    return out
