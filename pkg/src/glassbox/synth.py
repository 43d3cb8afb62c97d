"""Synthetic cohorts with planted ground truth.

Features are uniform on [0, 1]; the label is Bernoulli with probability
``sigmoid(intercept + sum_i c_i x_i + c_ij x_i x_j)``.  Duplicate columns,
missingness and severity flags are optional extras layered on top.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .table import BINARY, NUMERIC, FeatureTable, write_schema, write_table

DEFAULT_INFORMATIVE = {0: 4.0, 3: 3.0, 5: -3.0, 8: 2.5, 12: 2.0}
DEFAULT_INTERACTION = (1, 4, 6.0)
DEFAULT_INTERCEPT = -7.2


@dataclass
class SynthConfig:
    rows: int = 392
    features: int = 20
    informative: dict = field(default_factory=lambda: dict(DEFAULT_INFORMATIVE))
    interaction_pair: tuple | None = DEFAULT_INTERACTION
    intercept: float = DEFAULT_INTERCEPT
    duplicate_pairs: list = field(default_factory=list)
    missing_rate: dict = field(default_factory=dict)
    severity_flags: bool = False
    seed: int = 0

    def validate(self):
        if self.rows < 1 or self.features < 1:
            raise ValueError("rows and features must be positive")
        if not self.informative and self.interaction_pair is None:
            raise ValueError("degenerate config: no informative features and no interaction")
        for i in self.informative:
            if not 0 <= int(i) < self.features:
                raise ValueError(f"informative index {i} out of range")
        if self.interaction_pair is not None:
            i, j, _ = self.interaction_pair
            if not (0 <= i < self.features and 0 <= j < self.features) or i == j:
                raise ValueError("interaction pair must name two distinct in-range features")
        for src, dst, std in self.duplicate_pairs:
            if not (0 <= src < self.features and 0 <= dst < self.features) or src == dst or std < 0:
                raise ValueError(f"bad duplicate pair {(src, dst, std)}")
        for j, r in self.missing_rate.items():
            if not 0 <= int(j) < self.features or not 0.0 <= r < 1.0:
                raise ValueError(f"bad missing rate {r} for column {j}")


def column_name(j: int) -> str:
    return f"x{j:02d}"


def generate(config: SynthConfig):
    """Return ``(FeatureTable, ground_truth_dict)``; deterministic per seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, d = config.rows, config.features
    X = rng.uniform(0.0, 1.0, size=(n, d))
    for src, dst, std in config.duplicate_pairs:
        X[:, dst] = X[:, src] + (rng.normal(0.0, std, size=n) if std > 0 else 0.0)

    logit = np.full(n, float(config.intercept))
    for i, c in sorted(config.informative.items()):
        logit += float(c) * X[:, int(i)]
    if config.interaction_pair is not None:
        i, j, c = config.interaction_pair
        logit += float(c) * X[:, i] * X[:, j]
    prob = expit(logit)
    y = (rng.uniform(size=n) < prob).astype(int)

    mask = np.zeros((n, d), dtype=bool)
    missing_rows = {}
    for j, r in sorted(config.missing_rate.items()):
        k = int(round(float(r) * n))
        rows = np.sort(rng.choice(n, size=k, replace=False))
        mask[rows, int(j)] = True
        missing_rows[column_name(int(j))] = rows.tolist()

    names = [column_name(j) for j in range(d)]
    kinds = [NUMERIC] * d
    values = X
    if config.severity_flags:
        # each positive row sets at least one of the three flags; negatives set none
        flags = np.zeros((n, 3))
        first = rng.integers(0, 3, size=n)
        extra = rng.uniform(size=(n, 3)) < 0.3
        flags[np.arange(n), first] = 1
        flags = np.where(extra, 1.0, flags) * y[:, None]
        names += ["died", "icu", "ventilation"]
        kinds += [BINARY] * 3
        values = np.column_stack([X, flags])
        mask = np.column_stack([mask, np.zeros((n, 3), dtype=bool)])

    table = FeatureTable(names, kinds, values, mask, None if config.severity_flags else y)
    truth = {
        "config": _config_dict(config),
        "informative": [column_name(int(i)) for i, c in sorted(config.informative.items()) if c != 0],
        "interaction": None if config.interaction_pair is None else
        [column_name(config.interaction_pair[0]), column_name(config.interaction_pair[1])],
        "duplicates": [[column_name(s), column_name(t)] for s, t, _ in config.duplicate_pairs],
        "missing_rows": missing_rows,
        "corrupted_rows": sorted(set(np.flatnonzero(mask.any(axis=1)).tolist())),
        "labels": y.tolist(),
        "positive_rate": float(y.mean()),
    }
    return table, truth


def _config_dict(config: SynthConfig) -> dict:
    d = asdict(config)
    d["informative"] = {str(k): float(v) for k, v in sorted(config.informative.items())}
    d["missing_rate"] = {str(k): float(v) for k, v in sorted(config.missing_rate.items())}
    d["interaction_pair"] = None if config.interaction_pair is None else list(config.interaction_pair)
    d["duplicate_pairs"] = [list(p) for p in config.duplicate_pairs]
    return d


def write_cohort(config: SynthConfig, data_path, schema_path, truth_path=None, outcome_column="SEVER"):
    """Emit the cohort as CSV + schema (+ ground truth JSON)."""
    table, truth = generate(config)
    write_table(table, data_path, outcome_column)
    write_schema(table, schema_path, outcome_column)
    if truth_path is not None:
        with open(truth_path, "w") as fh:
            json.dump(truth, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return table, truth
