"""Feature filters: missing rate, low variance, mutual information, correlation.

Every filter returns a :class:`SelectionReport` recording what was dropped
and the statistic that triggered it.  Mutual information is in nats.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .table import BINARY, NUMERIC, FeatureTable, DataError

DEFAULT_BINS = 10


@dataclass
class SelectionReport:
    dropped: list[tuple[str, str, float]] = field(default_factory=list)
    kept: list[str] = field(default_factory=list)
    mi_scores: dict[str, float] = field(default_factory=dict)
    correlation: np.ndarray | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self):
        return {
            "dropped": [{"column": c, "reason": r, "statistic": s} for c, r, s in self.dropped],
            "kept": list(self.kept),
            "mi_scores": {k: self.mi_scores[k] for k in self.kept if k in self.mi_scores},
            "correlation": None if self.correlation is None else self.correlation.tolist(),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d):
        corr = d.get("correlation")
        return cls(
            dropped=[(e["column"], e["reason"], e["statistic"]) for e in d["dropped"]],
            kept=list(d["kept"]),
            mi_scores=dict(d.get("mi_scores", {})),
            correlation=None if corr is None else np.array(corr, dtype=float),
            flags=list(d.get("flags", [])),
        )

    def merge(self, later: "SelectionReport") -> "SelectionReport":
        """Chain two reports: the later report's kept list and statistics win."""
        return SelectionReport(
            dropped=self.dropped + later.dropped,
            kept=list(later.kept),
            mi_scores={**self.mi_scores, **later.mi_scores},
            correlation=later.correlation if later.correlation is not None else self.correlation,
            flags=self.flags + later.flags,
        )


def correlation_csv(report: SelectionReport) -> str:
    if report.correlation is None:
        return ""
    lines = ["," + ",".join(report.kept)]
    for name, row in zip(report.kept, report.correlation):
        lines.append(name + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def save_report(report: SelectionReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------- filters

def filter_missing_rate(table: FeatureTable, threshold: float):
    """Drop columns whose missing fraction strictly exceeds ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    report = SelectionReport()
    n = max(table.n_rows, 1)
    for j, name in enumerate(table.column_names):
        frac = float(table.missing_mask[:, j].sum()) / n
        if frac > threshold:
            report.dropped.append((name, "missing_rate", frac))
        else:
            report.kept.append(name)
    if not report.kept:
        report.flags.append("all columns dropped by missing-rate filter")
    return table.select_columns(report.kept), report


def filter_low_variance(table: FeatureTable, dominance: float):
    """Drop binary columns whose most frequent value covers at least ``dominance`` of observed rows."""
    if not 0.0 < dominance <= 1.0:
        raise ValueError("dominance must lie in (0, 1]")
    report = SelectionReport()
    for j, name in enumerate(table.column_names):
        if table.column_kinds[j] != BINARY:
            report.kept.append(name)
            continue
        col = table.values[~table.missing_mask[:, j], j]
        if col.size == 0:
            report.dropped.append((name, "low_variance", 1.0))
            continue
        ones = float(col.sum()) / col.size
        modal = max(ones, 1.0 - ones)
        if modal >= dominance:
            report.dropped.append((name, "low_variance", modal))
        else:
            report.kept.append(name)
    return table.select_columns(report.kept), report


def discretize(x, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-frequency bin codes; columns with at most ``bins`` distinct values keep their levels."""
    x = np.asarray(x, dtype=float)
    uniq = np.unique(x)
    if uniq.size <= bins:
        return np.searchsorted(uniq, x)
    edges = np.unique(np.quantile(x, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, x, side="right")


def mutual_information(x, y) -> float:
    """Plug-in mutual information (nats) between two discrete vectors."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("mutual_information needs two 1-D vectors of equal length")
    n = x.size
    if n == 0:
        raise ValueError("mutual_information of empty vectors")
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    joint = np.zeros((xi.max() + 1, yi.max() + 1))
    np.add.at(joint, (xi, yi), 1.0)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    terms = []
    for a, b in zip(*np.nonzero(joint)):
        c = joint[a, b]
        terms.append(c / n * math.log(c * n / (px[a] * py[b])))
    # fsum is order independent, which makes MI(x, y) == MI(y, x) bit for bit
    return math.fsum(terms)


def outcome_mi(table: FeatureTable, bins: int = DEFAULT_BINS) -> dict[str, float]:
    """MI of every column with the outcome, using that column's observed rows."""
    if table.outcome is None:
        raise DataError("table has no outcome")
    scores = {}
    for j, name in enumerate(table.column_names):
        ok = ~table.missing_mask[:, j]
        col = table.values[ok, j]
        if col.size == 0:
            scores[name] = 0.0
            continue
        codes = discretize(col, bins) if table.column_kinds[j] == NUMERIC else col
        scores[name] = max(mutual_information(codes, table.outcome[ok]), 0.0)
    return scores


def rank_by_mutual_information(table: FeatureTable, top_k: int = 20, bins: int = DEFAULT_BINS) -> SelectionReport:
    """Keep the ``top_k`` columns by MI with the outcome (descending, ties by name)."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    scores = outcome_mi(table, bins)
    order = sorted(table.column_names, key=lambda c: (-scores[c], c))
    report = SelectionReport(mi_scores=scores)
    if top_k > len(order):
        report.flags.append(f"top_k={top_k} exceeds column count {len(order)}; keeping all")
    report.kept = order[:top_k]
    report.dropped = [(c, "low_mutual_information", scores[c]) for c in order[top_k:]]
    return report


def pearson_matrix(table: FeatureTable):
    """Pairwise-complete Pearson correlations; zero-variance pairs are defined as 0."""
    d = table.n_cols
    corr = np.eye(d)
    degenerate = set()
    for i in range(d):
        for j in range(i + 1, d):
            ok = ~(table.missing_mask[:, i] | table.missing_mask[:, j])
            r = pearson(table.values[ok, i], table.values[ok, j])
            if r is None:
                degenerate.update((table.column_names[i], table.column_names[j]))
                r = 0.0
            corr[i, j] = corr[j, i] = r
    return corr, degenerate


def pearson(x, y):
    """Pearson r, or ``None`` when either side has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        return None
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def prune_correlated(table: FeatureTable, threshold: float = 0.8, bins: int = DEFAULT_BINS):
    """Drop one member of every column pair with ``|r| > threshold``.

    Pairs are visited by descending ``|r|``; of a pair whose members are
    both still present, the one with lower MI against the outcome goes
    (ties: the later name).
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    names = table.column_names
    corr, degenerate = pearson_matrix(table)
    scores = outcome_mi(table, bins) if table.outcome is not None else {c: 0.0 for c in names}
    pairs = [(abs(corr[i, j]), i, j) for i in range(len(names)) for j in range(i + 1, len(names))
             if abs(corr[i, j]) > threshold]
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    gone = set()
    report = SelectionReport(mi_scores=scores)
    for _, i, j in pairs:
        if i in gone or j in gone:
            continue
        a, b = names[i], names[j]
        loser = j if (scores[a], b) > (scores[b], a) else i
        gone.add(loser)
        keeper = names[i + j - loser]
        report.dropped.append((names[loser], f"correlated_with:{keeper}", float(corr[i, j])))
    for name in sorted(degenerate):
        report.flags.append(f"zero variance column {name!r}; correlations set to 0")
    report.kept = [n for k, n in enumerate(names) if k not in gone]
    keep_idx = [k for k in range(len(names)) if k not in gone]
    report.correlation = corr[np.ix_(keep_idx, keep_idx)]
    return table.select_columns(report.kept), report
