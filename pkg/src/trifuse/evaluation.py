"""AUROC, threshold metrics, and the attention / feature export backends.

AUROC uses the rank statistic: assign fractional midranks to tied scores,
sum the positive ranks, and normalise; a tie between a positive and a
negative score counts half. This equals the brute-force probability that a
random positive outscores a random negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .config import DetectorConfig
from .detector import forward
from .embeddings import EmbeddingSequence, InternalStateSet
from .errors import LengthMismatch, SingleClass
from .ioutil import atomic_write_text, write_jsonl
from .kernels import ParamStore
from .records import Record, confirmed_split


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Rank-based AUROC with half credit for positive/negative ties."""
    if len(scores) != len(labels):
        raise LengthMismatch(len(scores), len(labels))
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass()

    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        midrank = (i + j) / 2.0 + 1.0
        ranks[order[i : j + 1]] = midrank
        i = j + 1

    rank_sum = float(ranks[labels == 1].sum())
    u_statistic = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u_statistic / (n_pos * n_neg)


@dataclass
class EvalReport:
    auroc: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    n_pos: int
    n_neg: int
    scores: list[tuple[str, float, int]] = field(default_factory=list)

    def summary_lines(self) -> list[str]:
        return [
            f"auroc={self.auroc:.6f}",
            f"accuracy={self.accuracy:.6f}",
            f"precision={self.precision:.6f}",
            f"recall={self.recall:.6f}",
            f"f1={self.f1:.6f}",
            f"n_pos={self.n_pos}",
            f"n_neg={self.n_neg}",
        ]


def evaluate(
    params: ParamStore,
    config: DetectorConfig,
    records: Iterable[Record],
    split: str,
    states: Mapping[str, InternalStateSet],
    units: Mapping[str, EmbeddingSequence],
) -> EvalReport:
    """Score every confirmed record of a split and compute the report."""
    chosen = confirmed_split(records, split)
    if not chosen:
        raise SingleClass(f"split {split!r} has no confirmed records")

    per_record: list[tuple[str, float, int]] = []
    for record in chosen:
        output = forward(states[record.id], units[record.id], params, config)
        per_record.append((record.id, output.p_halluc, record.label))

    score_values = [p for _, p, _ in per_record]
    labels = [y for _, _, y in per_record]
    area = auroc(score_values, labels)

    predictions = [1 if p >= 0.5 else 0 for p in score_values]
    tp = sum(1 for p, y in zip(predictions, labels) if p == 1 and y == 1)
    fp = sum(1 for p, y in zip(predictions, labels) if p == 1 and y == 0)
    fn = sum(1 for p, y in zip(predictions, labels) if p == 0 and y == 1)
    tn = sum(1 for p, y in zip(predictions, labels) if p == 0 and y == 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    return EvalReport(
        auroc=area,
        accuracy=(tp + tn) / len(labels),
        precision=precision,
        recall=recall,
        f1=f1,
        n_pos=sum(labels),
        n_neg=len(labels) - sum(labels),
        scores=per_record,
    )


def write_scores(report: EvalReport, path: str | Path) -> None:
    write_jsonl(
        path,
        ({"id": rid, "p_halluc": p, "label": label} for rid, p, label in report.scores),
    )


QUERY_ROW_LABELS = ("query", "answer", "reverse")


def export_attention(
    params: ParamStore,
    config: DetectorConfig,
    record_ids: Sequence[str],
    states: Mapping[str, InternalStateSet],
    units: Mapping[str, EmbeddingSequence],
    path: str | Path,
    unit_texts: Mapping[str, Sequence[str]] | None = None,
) -> None:
    """Tab-separated cross-attention dump, one block per record.

    Rows are the three internal-state segments; columns are the CLS slot and
    the trajectory units (annotated with their texts when available).
    """
    lines: list[str] = []
    for record_id in record_ids:
        output = forward(states[record_id], units[record_id], params, config)
        n_kv = output.cross_attention.shape[1]
        texts = list(unit_texts.get(record_id, [])) if unit_texts else []
        columns = ["CLS"]
        for unit_index in range(1, n_kv):
            label = f"u{unit_index}"
            if unit_index - 1 < len(texts):
                snippet = texts[unit_index - 1].replace("\t", " ").replace("\n", " ")
                label = f"{label}:{snippet}"
            columns.append(label)
        lines.append(f"# record\t{record_id}\tgate\t{repr(output.gate)}")
        lines.append("segment\t" + "\t".join(columns))
        for row_label, row in zip(QUERY_ROW_LABELS, output.cross_attention):
            lines.append(row_label + "\t" + "\t".join(repr(float(w)) for w in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def export_features(
    params: ParamStore,
    config: DetectorConfig,
    records: Iterable[Record],
    split: str,
    states: Mapping[str, InternalStateSet],
    units: Mapping[str, EmbeddingSequence],
    path: str | Path,
) -> None:
    """Tab-separated feature dump for external projection tools.

    Each row carries the fused representation (d columns ``fused_*``) and the
    raw concatenated internal states (3d columns ``raw_*``) plus the label,
    so downstream tools can contrast the two feature spaces.
    """
    chosen = confirmed_split(records, split)
    d = config.hidden_dim
    header = (
        ["id", "label"]
        + [f"fused_{i}" for i in range(d)]
        + [f"raw_{i}" for i in range(3 * d)]
    )
    lines = ["\t".join(header)]
    for record in chosen:
        output = forward(states[record.id], units[record.id], params, config)
        raw = states[record.id].stacked().reshape(-1)
        cells = [record.id, str(record.label)]
        cells += [repr(float(v)) for v in output.fused]
        cells += [repr(float(v)) for v in raw]
        lines.append("\t".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")
