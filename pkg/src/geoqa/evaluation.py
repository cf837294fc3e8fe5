"""Corpus evaluation: per-example scoring, error taxonomy, subset reports.

Every generated answer lands in exactly one error class:

* ``exact``          -- the call matches the reference call exactly,
* ``syntax_error``   -- the call is unparsable or structurally out of spec,
* ``location_error`` -- structurally fine, but the location argument does not
                        resolve or names a different place than the reference,
* ``other``          -- any remaining mismatch (wrong category/mode/metric/
                        function, or no call emitted at all).

Reports aggregate exact-match percentage, mean BLEU-4 and mean ROUGE-L plus
the error-class percentages per subset and overall, rendered both as an
aligned text table and as JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence

from .metrics import MetricScores, exact_match, score_pair
from .protocol import (
    OPEN_TAG,
    SpecRegistry,
    ToolCall,
    default_registry,
    extract_first_call,
    validate_call,
)
from .store import canonicalize_name

Resolver = Callable[[str], object]  # raises when the place name is unknown


class EvalError(Exception):
    pass


class ReportIncomplete(EvalError):
    """The prediction source lacks some example ids."""

    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        preview = ", ".join(self.missing[:5])
        suffix = "..." if len(self.missing) > 5 else ""
        super().__init__(
            f"{len(self.missing)} prediction(s) missing: {preview}{suffix}"
        )


class ErrorClass(str, Enum):
    EXACT = "exact"
    SYNTAX = "syntax_error"
    LOCATION = "location_error"
    OTHER = "other"


@dataclass(frozen=True)
class EvalExample:
    id: str
    question: str
    reference: str
    subset: str


@dataclass(frozen=True)
class EvalRecord:
    example: EvalExample
    generated: str
    scores: MetricScores
    error_class: ErrorClass


def _is_resolvable(name: str, resolve: Optional[Resolver]) -> bool:
    if resolve is None:
        return True  # no gazetteer wired in: skip resolvability checking
    try:
        resolve(name)
        return True
    except Exception:
        return False


def classify_error(
    reference_text: str,
    generated_text: str,
    registry: Optional[SpecRegistry] = None,
    resolve: Optional[Resolver] = None,
) -> ErrorClass:
    """Assign the single error class for a generated answer."""
    registry = registry or default_registry()
    reference = extract_first_call(reference_text)
    generated = extract_first_call(generated_text)

    if generated is not None and reference is not None:
        if exact_match(reference_text, generated_text):
            return ErrorClass.EXACT

    if generated is None:
        if OPEN_TAG in generated_text:
            return ErrorClass.SYNTAX  # markup present but unparsable
        return ErrorClass.OTHER  # no call emitted at all

    call: ToolCall = generated[0]
    verdict = validate_call(call, registry, resolve=None)
    if verdict.kind == "syntax_invalid":
        return ErrorClass.SYNTAX

    generated_location = call.get("location")
    if generated_location is not None:
        if not _is_resolvable(generated_location, resolve):
            return ErrorClass.LOCATION
        reference_location = reference[0].get("location") if reference else None
        if reference_location is not None and canonicalize_name(
            generated_location
        ) != canonicalize_name(reference_location):
            return ErrorClass.LOCATION

    return ErrorClass.OTHER


@dataclass
class SubsetRow:
    subset: str
    size: int
    n_exact: int
    ema: float  # exact-match percentage
    mean_bleu_4: float
    mean_rouge_l: float
    error_percentages: Dict[str, float]

    def to_dict(self) -> dict:
        return {
            "subset": self.subset,
            "size": self.size,
            "n_exact": self.n_exact,
            "exact_match_pct": self.ema,
            "bleu_4": self.mean_bleu_4,
            "rouge_l": self.mean_rouge_l,
            "errors_pct": dict(self.error_percentages),
        }


@dataclass
class EvalReport:
    rows: List[SubsetRow]
    records: List[EvalRecord] = field(default_factory=list)

    OVERALL = "overall"

    def row(self, subset: str) -> SubsetRow:
        for row in self.rows:
            if row.subset == subset:
                return row
        raise KeyError(subset)

    def to_dict(self) -> dict:
        return {"rows": [row.to_dict() for row in self.rows]}

    def render_text(self) -> str:
        headers = [
            "Subset",
            "Size",
            "EM (%)",
            "BLEU-4",
            "ROUGE-L",
            "Syntax (%)",
            "Location (%)",
            "Other (%)",
        ]
        table = [headers]
        for row in self.rows:
            table.append(
                [
                    row.subset,
                    str(row.size),
                    f"{row.ema:.1f}",
                    f"{row.mean_bleu_4:.3f}",
                    f"{row.mean_rouge_l:.3f}",
                    f"{row.error_percentages[ErrorClass.SYNTAX.value]:.1f}",
                    f"{row.error_percentages[ErrorClass.LOCATION.value]:.1f}",
                    f"{row.error_percentages[ErrorClass.OTHER.value]:.1f}",
                ]
            )
        widths = [max(len(line[col]) for line in table) for col in range(len(headers))]
        lines = []
        for i, line in enumerate(table):
            rendered = "  ".join(
                cell.ljust(widths[col]) if col == 0 else cell.rjust(widths[col])
                for col, cell in enumerate(line)
            )
            lines.append(rendered.rstrip())
            if i == 0:
                lines.append("-" * len(rendered))
        return "\n".join(lines)

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.txt").write_text(self.render_text() + "\n", "utf-8")
        (directory / "report.json").write_text(
            json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", "utf-8"
        )


# Table-2-style presentation order; unknown subsets follow alphabetically.
_SUBSET_ORDER = [
    "test-unseen-location",
    "test-semantic-variant",
    "test-multilingual",
    "test-monolingual",
    "val",
    "train",
]


def _subset_sort_key(name: str):
    try:
        return (0, _SUBSET_ORDER.index(name), name)
    except ValueError:
        return (1, 0, name)


def _aggregate(subset: str, records: Sequence[EvalRecord]) -> SubsetRow:
    size = len(records)
    n_exact = sum(1 for r in records if r.scores.exact_match)
    counts = {cls.value: 0 for cls in ErrorClass}
    for record in records:
        counts[record.error_class.value] += 1
    return SubsetRow(
        subset=subset,
        size=size,
        n_exact=n_exact,
        ema=100.0 * n_exact / size,
        mean_bleu_4=sum(r.scores.bleu_4 for r in records) / size,
        mean_rouge_l=sum(r.scores.rouge_l for r in records) / size,
        error_percentages={k: 100.0 * v / size for k, v in counts.items()},
    )


def evaluate_corpus(
    examples: Sequence[EvalExample],
    predictions: Optional[Mapping[str, str]] = None,
    generate: Optional[Callable[[EvalExample], str]] = None,
    registry: Optional[SpecRegistry] = None,
    resolve: Optional[Resolver] = None,
) -> EvalReport:
    """Score a tagged corpus from a prediction map or a generation callable.

    Exactly one prediction source must be given. A prediction map missing
    any example id raises ReportIncomplete before any scoring runs.
    """
    if (predictions is None) == (generate is None):
        raise ValueError("provide exactly one of predictions= or generate=")
    registry = registry or default_registry()
    if predictions is not None:
        missing = [ex.id for ex in examples if ex.id not in predictions]
        if missing:
            raise ReportIncomplete(missing)

    records: List[EvalRecord] = []
    for example in examples:
        if predictions is not None:
            generated = predictions[example.id]
        else:
            generated = generate(example)
        scores = score_pair(example.reference, generated)
        error_class = classify_error(
            example.reference, generated, registry=registry, resolve=resolve
        )
        records.append(
            EvalRecord(
                example=example,
                generated=generated,
                scores=scores,
                error_class=error_class,
            )
        )

    by_subset: Dict[str, List[EvalRecord]] = {}
    for record in records:
        by_subset.setdefault(record.example.subset, []).append(record)
    rows = [
        _aggregate(subset, subset_records)
        for subset, subset_records in sorted(
            by_subset.items(), key=lambda item: _subset_sort_key(item[0])
        )
    ]
    if len(rows) > 1 or (rows and rows[0].subset != EvalReport.OVERALL):
        rows.append(_aggregate(EvalReport.OVERALL, records))
    return EvalReport(rows=rows, records=records)


# -- file-based sources --------------------------------------------------------


def load_examples(path) -> List[EvalExample]:
    """Read exported QA records (one JSON object per line) as eval examples."""
    examples: List[EvalExample] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            metadata = record.get("metadata", {})
            examples.append(
                EvalExample(
                    id=record["id"],
                    question=record["question"],
                    reference=record["answer"],
                    subset=metadata.get("split", "test"),
                )
            )
    return examples


def load_predictions(path) -> Dict[str, str]:
    """Read a prediction file: one ``{"id", "generated_text"}`` object per line."""
    predictions: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            predictions[record["id"]] = record["generated_text"]
    return predictions
