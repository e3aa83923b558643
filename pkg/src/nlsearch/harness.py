"""Dataset handling, corpus evaluation, reports, and fine-tuning exports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .entities import SearchEntityDocument, parse_document, serialize_document
from .errors import BackendUnavailable, AuthError, ContractViolation, DatasetError, TranslationFailed
from .gateway import TranslationRecord
from .metrics import EmbeddingProvider, MetricKind, QueryScore, score_query, scoring_units
from .prompts import FewShotExample, build_system_message, render_prompt
from .schema import SchemaRegistry

log = logging.getLogger(__name__)

HISTOGRAM_BINS = 20
FINETUNE_HEADER = "# nlsearch fine-tune export v1: one chat-pair record per line (system, user, assistant)"

Translator = Callable[[str], TranslationRecord]


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    query: str
    ground_truth: SearchEntityDocument


def _record_from_json(obj, schema: SchemaRegistry) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    extra = set(obj) - {"id", "query", "ground_truth"}
    if extra:
        raise ValueError(f"unexpected keys {sorted(extra)}")
    rid, query, gt = obj.get("id"), obj.get("query"), obj.get("ground_truth")
    if isinstance(rid, int) and not isinstance(rid, bool):
        rid = str(rid)
    if not isinstance(rid, str) or not rid:
        raise ValueError("id must be a non-empty string")
    if not isinstance(query, str) or not query.strip():
        raise ValueError("query must be a non-empty string")
    if not isinstance(gt, dict):
        raise ValueError("ground_truth must be a JSON object")
    outcome = parse_document(json.dumps(gt), schema)
    if not outcome.valid:
        raise ValueError(f"ground_truth: {outcome.failure}")
    if outcome.coercions:
        notes = ", ".join(f"{c.field} {c.from_shape}->{c.to_shape}" for c in outcome.coercions)
        raise ValueError(f"ground_truth is not in canonical shape ({notes})")
    return DatasetRecord(rid, query.strip(), outcome.document)


def parse_dataset(lines: Iterable[str], schema: SchemaRegistry) -> list[DatasetRecord]:
    """Validate every line of a JSONL dataset, then fail with all problems at once."""
    records: list[DatasetRecord] = []
    problems: list[tuple[int | None, str]] = []
    first_line: dict[str, int] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            record = _record_from_json(json.loads(line), schema)
        except ValueError as exc:
            problems.append((lineno, str(exc)))
            continue
        if record.id in first_line:
            problems.append((lineno, f"duplicate id {record.id!r} (first on line {first_line[record.id]})"))
            continue
        first_line[record.id] = lineno
        records.append(record)
    if problems:
        raise DatasetError(problems)
    return records


def load_dataset(path: str | Path, schema: SchemaRegistry) -> list[DatasetRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh, schema)


def sample_dataset_path() -> Path:
    """Path of the bundled 25-query sample dataset."""
    return Path(str(resources.files("nlsearch").joinpath("data/sample_queries.jsonl")))


def dump_dataset(records: Sequence[DatasetRecord], schema: SchemaRegistry) -> str:
    lines = [
        json.dumps(
            {"id": r.id, "query": r.query, "ground_truth": r.ground_truth.to_wire(schema)},
            ensure_ascii=False,
        )
        for r in records
    ]
    return "".join(line + "\n" for line in lines)


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class QueryResult:
    id: str
    score: QueryScore
    attempts: int
    failed: bool
    error: str | None = None


@dataclass(frozen=True)
class EvaluationReport:
    per_query: tuple[QueryResult, ...]
    per_field_means: dict[tuple[str, MetricKind], float]
    overall_mean: float
    histogram: tuple[int, ...]
    exact_histograms: dict[str, tuple[int, ...]]
    unit_labels: dict[str, str]

    @property
    def failure_count(self) -> int:
        return sum(r.failed for r in self.per_query)


def histogram(values: Iterable[float], bins: int = HISTOGRAM_BINS) -> tuple[int, ...]:
    """Equal-width bins over [0, 1]; 1.0 falls in the last bin."""
    counts = [0] * bins
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ContractViolation(f"value {v} outside [0, 1]")
        counts[min(int(v * bins), bins - 1)] += 1
    return tuple(counts)


def _evaluate_one(record, translator, schema, provider, present_only) -> QueryResult:
    empty = SearchEntityDocument()
    try:
        translation = translator(record.query)
    except TranslationFailed as exc:
        score = score_query(record.ground_truth, empty, schema, provider, present_only=present_only)
        return QueryResult(record.id, score, len(exc.record.attempts), True, "translation_failed")
    except (BackendUnavailable, AuthError) as exc:
        score = score_query(record.ground_truth, empty, schema, provider, present_only=present_only)
        return QueryResult(record.id, score, 0, True, type(exc).__name__)
    score = score_query(record.ground_truth, translation.final, schema, provider, present_only=present_only)
    return QueryResult(record.id, score, len(translation.attempts), False)


def run_eval(
    records: Sequence[DatasetRecord],
    translator: Translator,
    schema: SchemaRegistry,
    provider: EmbeddingProvider,
    in_flight_cap: int = 1,
    *,
    present_only: bool = False,
) -> EvaluationReport:
    """Translate and score every record, then aggregate.

    Translations run on up to ``in_flight_cap`` threads. Failed translations
    are scored against an empty prediction and flagged. Results are sorted by
    id before any reduction, so the report does not depend on completion
    order.
    """
    if not records:
        raise ContractViolation("run_eval needs at least one record")
    if in_flight_cap < 1:
        raise ContractViolation("in_flight_cap must be >= 1")

    def work(rec):
        return _evaluate_one(rec, translator, schema, provider, present_only)

    if in_flight_cap == 1:
        results = [work(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=in_flight_cap) as pool:
            results = list(pool.map(work, records))
    results.sort(key=lambda r: r.id)
    return aggregate(results, schema)


def aggregate(results: Sequence[QueryResult], schema: SchemaRegistry) -> EvaluationReport:
    units = scoring_units(schema)
    per_field: dict[tuple[str, MetricKind], float] = {}
    exact_hist: dict[str, tuple[int, ...]] = {}
    for unit in units:
        for metric in unit.metrics:
            vals = [fs.scores[metric] for r in results for fs in r.score.field_scores if fs.field == unit.name]
            if vals:
                per_field[(unit.name, metric)] = math.fsum(vals) / len(vals)
        exact = [
            fs.scores[MetricKind.EXACT] for r in results for fs in r.score.field_scores if fs.field == unit.name
        ]
        exact_hist[unit.name] = histogram(exact)
    averages = [r.score.average for r in results]
    return EvaluationReport(
        per_query=tuple(results),
        per_field_means=per_field,
        overall_mean=math.fsum(averages) / len(averages),
        histogram=histogram(averages),
        exact_histograms=exact_hist,
        unit_labels={u.name: u.label for u in units},
    )


def make_translator(schema, shots, client, policy, *, include_reasoning: bool = True) -> Translator:
    from .gateway import translate

    def run(query: str) -> TranslationRecord:
        return translate(query, schema, shots, client, policy, include_reasoning=include_reasoning)

    return run


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    """Hold out ``test_fraction`` first, then divide the rest train/validation."""

    test_fraction: float = 0.10
    train_fraction: float = 0.80
    validation_fraction: float = 0.20
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.test_fraction < 1:
            raise ContractViolation("test_fraction must be in [0, 1)")
        if abs(self.train_fraction + self.validation_fraction - 1.0) > 1e-9:
            raise ContractViolation("train_fraction + validation_fraction must be 1")


def _apportion(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder rounding of ``n * f`` for each fraction (ties go to the earlier part)."""
    exact = [n * Fraction(f).limit_denominator(10**6) for f in fractions]
    sizes = [math.floor(x) for x in exact]
    short = n - sum(sizes)
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    return sizes


def split_dataset(records: Sequence[DatasetRecord], spec: SplitSpec = SplitSpec()):
    """Seeded shuffle, then (train, validation, test) with largest-remainder sizes."""
    if len(records) < 10:
        raise DatasetError([(None, f"need at least 10 records to split, got {len(records)}")])
    shuffled = list(records)
    random.Random(spec.seed).shuffle(shuffled)
    rest, n_test = _apportion(len(shuffled), [1 - spec.test_fraction, spec.test_fraction])
    n_train, n_val = _apportion(rest, [spec.train_fraction, spec.validation_fraction])
    train = shuffled[:n_train]
    val = shuffled[n_train:n_train + n_val]
    test = shuffled[n_train + n_val:]
    assert len(test) == n_test
    return train, val, test


# --------------------------------------------------------------------------
# fine-tune export


def finetune_lines(
    records: Sequence[DatasetRecord],
    schema: SchemaRegistry,
    shots: Sequence[FewShotExample] = (),
    *,
    include_reasoning: bool = True,
) -> list[str]:
    system = build_system_message(schema, tuple(shots), include_reasoning=include_reasoning)
    lines = []
    for rec in records:
        bundle = render_prompt(schema, shots, rec.query, include_reasoning=include_reasoning)
        lines.append(
            json.dumps(
                {
                    "id": rec.id,
                    "messages": [
                        {"role": "system", "content": system},
                        {"role": "user", "content": bundle.user_message()},
                        {"role": "assistant", "content": serialize_document(rec.ground_truth, schema)},
                    ],
                },
                ensure_ascii=False,
            )
        )
    return lines


def export_finetune(
    records: Sequence[DatasetRecord],
    path: str | Path,
    schema: SchemaRegistry,
    shots: Sequence[FewShotExample] = (),
    *,
    include_reasoning: bool = True,
) -> Path:
    """Write one chat-pair JSON line per record, after a ``#`` header line.

    Raises OSError (propagated) when the file cannot be written.
    """
    path = Path(path)
    lines = finetune_lines(records, schema, shots, include_reasoning=include_reasoning)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FINETUNE_HEADER + "\n")
        for line in lines:
            fh.write(line + "\n")
    return path


def read_finetune(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip() and not line.startswith("#")]


# --------------------------------------------------------------------------
# reports

_METRIC_COLUMNS = (MetricKind.EXACT, MetricKind.JACCARD, MetricKind.COSINE, MetricKind.SEMANTIC)


def _bin_edges(bins: int = HISTOGRAM_BINS) -> list[tuple[str, str]]:
    return [(f"{i / bins:.2f}", f"{(i + 1) / bins:.2f}") for i in range(bins)]


def render_table(report: EvaluationReport) -> str:
    """Per-field mean table, one row per scoring unit, '-' where a metric does not apply."""
    rows = [["Field", "Exact", "Jaccard", "Cosine", "Semantic"]]
    for unit, label in report.unit_labels.items():
        row = [label]
        for metric in _METRIC_COLUMNS:
            mean = report.per_field_means.get((unit, metric))
            row.append("-" if mean is None else f"{mean:.3f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    out = io.StringIO()
    for n, row in enumerate(rows):
        out.write("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() + "\n")
        if n == 0:
            out.write("  ".join("-" * w for w in widths) + "\n")
    out.write("\n")
    out.write(f"Queries: {len(report.per_query)}  Failed translations: {report.failure_count}\n")
    out.write(f"Overall mean: {report.overall_mean:.4f}\n\n")
    out.write("Per-query average histogram:\n")
    for (lo, hi), count in zip(_bin_edges(), report.histogram):
        out.write(f"  [{lo}, {hi}{']' if hi == '1.00' else ')'}  {count}\n")
    return out.getvalue()


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "overall_mean": report.overall_mean,
        "query_count": len(report.per_query),
        "failed_count": report.failure_count,
        "per_field_means": [
            {"unit": unit, "label": report.unit_labels[unit], "metric": metric.value, "mean": mean}
            for (unit, metric), mean in report.per_field_means.items()
        ],
        "histogram": {"bins": HISTOGRAM_BINS, "counts": list(report.histogram)},
        "exact_histograms": {unit: list(counts) for unit, counts in report.exact_histograms.items()},
        "per_query": [
            {
                "id": r.id,
                "average": r.score.average,
                "attempts": r.attempts,
                "failed": r.failed,
                "error": r.error,
                "scores": {fs.field: {m.value: v for m, v in fs.scores.items()} for fs in r.score.field_scores},
            }
            for r in report.per_query
        ],
    }


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


REPORT_FORMATS = ("table", "json", "csv")


def render_report(report: EvaluationReport, out_dir: str | Path, formats: Sequence[str] = REPORT_FORMATS) -> list[Path]:
    """Write report files into ``out_dir`` and return their paths.

    ``table`` -> report.txt; ``json`` -> report.json; ``csv`` ->
    field_means.csv (unit,label,metric,mean), query_scores.csv
    (id,average,attempts,failed,error) and histograms.csv
    (series,bin_low,bin_high,count). Latencies are deliberately left out so
    repeated runs produce identical bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    unknown = set(formats) - set(REPORT_FORMATS)
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    written = []

    def write(name: str, text: str) -> None:
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)

    if "table" in formats:
        write("report.txt", render_table(report))
    if "json" in formats:
        write("report.json", json.dumps(report_to_dict(report), indent=2, ensure_ascii=False) + "\n")
    if "csv" in formats:
        write(
            "field_means.csv",
            _csv_text(
                ["unit", "label", "metric", "mean"],
                ([u, report.unit_labels[u], m.value, f"{v:.6f}"] for (u, m), v in report.per_field_means.items()),
            ),
        )
        write(
            "query_scores.csv",
            _csv_text(
                ["id", "average", "attempts", "failed", "error"],
                ([r.id, f"{r.score.average:.6f}", r.attempts, int(r.failed), r.error or ""] for r in report.per_query),
            ),
        )
        hist_rows = [["query_average", lo, hi, c] for (lo, hi), c in zip(_bin_edges(), report.histogram)]
        for unit, counts in report.exact_histograms.items():
            hist_rows += [[f"exact:{unit}", lo, hi, c] for (lo, hi), c in zip(_bin_edges(), counts)]
        write("histograms.csv", _csv_text(["series", "bin_low", "bin_high", "count"], hist_rows))
    return written
