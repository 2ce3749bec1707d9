"""Intrinsic evaluation: exact-match accuracy, stratified analysis, and
method comparison grids.

The metric is single-reference exact match under NFC normalization,
case-sensitive by default (an optional case-folding flag exists but the
strict compare is the contract).
"""

import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum

from .corpus import nfc
from .errors import FormatError, ToolkitError

METHODS = ("edit", "vector", "seq2seq")


@dataclass(frozen=True)
class Prediction:
    """One translator output for one OOV.

    ``gold`` is attached at evaluation time (predictions files carry no gold
    column); ``fallback_flag`` marks copy-through outputs emitted when a
    translator had no candidate translation.
    """

    oov: str
    predicted: str
    method: str
    fallback_flag: bool = False
    gold: str = ""

    def with_gold(self, gold: str) -> "Prediction":
        return replace(self, gold=gold)


class OOVCategory(Enum):
    MORPHOLOGICAL_VARIATION = "MorphologicalVariation"
    MISSPELLING = "Misspelling"
    TRANSLITERATION = "Transliteration"
    COMPOUNDING = "Compounding"
    PROPER_NOUN = "ProperNoun"


@dataclass(frozen=True)
class CategoryStat:
    count: int
    matches: int

    @property
    def accuracy(self) -> float:
        return self.matches / self.count if self.count else 0.0


@dataclass
class EvalReport:
    """Exact-match results, optionally broken down by OOV category."""

    n: int
    matches: int
    per_category: dict[OOVCategory, CategoryStat] = field(default_factory=dict)

    @property
    def overall_accuracy(self) -> float:
        return self.matches / self.n if self.n else 0.0


def _is_match(p: Prediction, case_fold: bool) -> bool:
    predicted, gold = nfc(p.predicted), nfc(p.gold)
    if case_fold:
        return predicted.casefold() == gold.casefold()
    return predicted == gold


def exact_match_accuracy(
    predictions: Sequence[Prediction], case_fold: bool = False
) -> float:
    """Fraction of predictions string-equal to their gold reference."""
    if not predictions:
        raise ToolkitError("no predictions to evaluate")
    for p in predictions:
        if not p.gold:
            raise ToolkitError(f"prediction for {p.oov!r} has no gold reference")
    matches = sum(1 for p in predictions if _is_match(p, case_fold))
    return matches / len(predictions)


def stratified_report(
    predictions: Sequence[Prediction],
    annotations: Mapping[str, OOVCategory] | None = None,
    case_fold: bool = False,
) -> EvalReport:
    """Overall accuracy plus per-category counts and accuracies.

    Every annotated OOV must appear among the predictions; predictions
    without an annotation only contribute to the overall row.
    """
    if not predictions:
        raise ToolkitError("no predictions to evaluate")
    for p in predictions:
        if not p.gold:
            raise ToolkitError(f"prediction for {p.oov!r} has no gold reference")
    by_oov: dict[str, list[Prediction]] = {}
    for p in predictions:
        by_oov.setdefault(p.oov, []).append(p)

    annotations = dict(annotations or {})
    for oov in annotations:
        if oov not in by_oov:
            raise ToolkitError(f"annotation references absent OOV {oov!r}")

    matches = sum(1 for p in predictions if _is_match(p, case_fold))
    per_category: dict[OOVCategory, CategoryStat] = {}
    for category in OOVCategory:
        cat_preds = [
            p
            for oov, cat in annotations.items()
            if cat is category
            for p in by_oov[oov]
        ]
        if not cat_preds:
            continue
        cat_matches = sum(1 for p in cat_preds if _is_match(p, case_fold))
        per_category[category] = CategoryStat(len(cat_preds), cat_matches)
    return EvalReport(n=len(predictions), matches=matches, per_category=per_category)


@dataclass(frozen=True)
class ComparisonRow:
    dataset: str
    accuracies: dict[str, float]
    best: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "accuracies", dict(self.accuracies))


@dataclass
class ComparisonTable:
    methods: tuple[str, ...]
    rows: list[ComparisonRow]
    average: ComparisonRow | None = None


def _best_methods(accuracies: Mapping[str, float]) -> frozenset[str]:
    top = max(accuracies.values())
    return frozenset(m for m, a in accuracies.items() if a == top)


def method_comparison(
    reports: Mapping[str, "EvalReport | Mapping[str, EvalReport]"],
) -> ComparisonTable:
    """Build a per-method accuracy grid with best-method markers.

    ``reports`` maps method name to either a single report or a mapping of
    dataset name to report.  With several datasets, an unweighted average row
    across datasets is added.  The result does not depend on the mapping's
    iteration order.
    """
    if not reports:
        raise ToolkitError("no method reports supplied")
    methods = tuple(sorted(reports))
    first = reports[methods[0]]
    if isinstance(first, EvalReport):
        per_dataset = {"all": {m: reports[m] for m in methods}}
    else:
        datasets = sorted({d for m in methods for d in reports[m]})
        per_dataset = {}
        for dataset in datasets:
            row = {}
            for m in methods:
                if dataset not in reports[m]:
                    raise ToolkitError(
                        f"method {m!r} has no report for dataset {dataset!r}"
                    )
                row[m] = reports[m][dataset]
            per_dataset[dataset] = row

    rows = []
    for dataset in sorted(per_dataset):
        accuracies = {
            m: report.overall_accuracy for m, report in per_dataset[dataset].items()
        }
        rows.append(ComparisonRow(dataset, accuracies, _best_methods(accuracies)))
    average = None
    if len(rows) > 1:
        means = {
            m: sum(r.accuracies[m] for r in rows) / len(rows) for m in methods
        }
        average = ComparisonRow("Average", means, _best_methods(means))
    return ComparisonTable(methods=methods, rows=rows, average=average)


def load_annotations(path) -> dict[str, OOVCategory]:
    """Read an annotations TSV: ``oov<TAB>category``."""
    valid = {c.value: c for c in OOVCategory}
    annotations: dict[str, OOVCategory] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise FormatError(
                    f"expected 2 tab-separated fields, got {len(fields)}",
                    path=path,
                    line=lineno,
                )
            oov, category = nfc(fields[0]), fields[1]
            if category not in valid:
                raise FormatError(
                    f"unknown category {category!r} (expected one of "
                    f"{sorted(valid)})",
                    path=path,
                    line=lineno,
                )
            if oov in annotations:
                raise FormatError(f"duplicate annotation for {oov!r}", path=path, line=lineno)
            annotations[oov] = valid[category]
    return annotations


def write_predictions(predictions: Iterable[Prediction], path) -> None:
    """Write the shared prediction TSV: ``oov<TAB>prediction<TAB>method<TAB>fallback_flag``."""
    with open(path, "w", encoding="utf-8") as handle:
        for p in predictions:
            handle.write(
                f"{p.oov}\t{p.predicted}\t{p.method}\t{int(p.fallback_flag)}\n"
            )


def load_predictions(path) -> list[Prediction]:
    predictions = []
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise FormatError(
                    f"expected 4 tab-separated fields, got {len(fields)}",
                    path=path,
                    line=lineno,
                )
            if fields[3] not in ("0", "1"):
                raise FormatError(
                    f"fallback flag must be 0 or 1, got {fields[3]!r}",
                    path=path,
                    line=lineno,
                )
            predictions.append(
                Prediction(
                    oov=nfc(fields[0]),
                    predicted=nfc(fields[1]),
                    method=fields[2],
                    fallback_flag=fields[3] == "1",
                )
            )
    return predictions


def report_to_dict(report: EvalReport) -> dict:
    return {
        "n": report.n,
        "matches": report.matches,
        "overall_accuracy": report.overall_accuracy,
        "per_category": {
            cat.value: {
                "count": stat.count,
                "matches": stat.matches,
                "accuracy": stat.accuracy,
            }
            for cat, stat in report.per_category.items()
        },
    }


def comparison_to_dict(table: ComparisonTable) -> dict:
    def row(r: ComparisonRow) -> dict:
        return {
            "dataset": r.dataset,
            "accuracies": {m: r.accuracies[m] for m in table.methods},
            "best": sorted(r.best),
        }

    return {
        "methods": list(table.methods),
        "rows": [row(r) for r in table.rows],
        "average": row(table.average) if table.average else None,
    }


def render_comparison_text(table: ComparisonTable) -> str:
    """Aligned-column text grid; the best method per row is starred."""
    width = max([len("dataset")] + [len(r.dataset) for r in table.rows] + [7])
    header = "dataset".ljust(width) + "".join(f"{m:>12}" for m in table.methods)
    lines = [header]

    def fmt(r: ComparisonRow) -> str:
        cells = []
        for m in table.methods:
            mark = "*" if m in r.best else " "
            cells.append(f"{mark}{r.accuracies[m] * 100:10.2f}%")
        return r.dataset.ljust(width) + "".join(cells)

    lines.extend(fmt(r) for r in table.rows)
    if table.average is not None:
        lines.append(fmt(table.average))
    return "\n".join(lines) + "\n"


def render_report_text(report: EvalReport, title: str = "") -> str:
    lines = []
    if title:
        lines.append(title)
    lines.append(
        f"overall: {report.matches}/{report.n} = {report.overall_accuracy * 100:.2f}%"
    )
    for cat in OOVCategory:
        stat = report.per_category.get(cat)
        if stat is None:
            continue
        lines.append(
            f"{cat.value:<25}{stat.count:>6}{stat.accuracy * 100:>10.2f}%"
        )
    return "\n".join(lines) + "\n"


def report_json(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
