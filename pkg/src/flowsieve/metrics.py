"""Confusion-matrix accounting and the per-class detection report.

Rates follow the standard definitions: ACC = (TP+TN)/total, DR (recall) =
TP/(TP+FN), FPR = FP/(FP+TN), PPV (precision) = TP/(TP+FP). A 0/0 rate is
an explicit undefined marker, rendered as "-", never silently zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

UNDEFINED_CELL = "-"

# Report rows, in presentation order. Class 1 = Tor, class 0 = NonTor.
REPORT_ROWS = (
    ("dr_tor", "DR (Tor) %"),
    ("fpr_tor", "FPR (Tor) %"),
    ("ppv_tor", "PPV (Tor) %"),
    ("dr_nontor", "DR (nonTor) %"),
    ("fpr_nontor", "FPR (nonTor) %"),
    ("ppv_nontor", "PPV (nonTor) %"),
    ("overall_acc", "Overall ACC. %"),
)

# Published comparison values for the C4.5 baseline; these are reported
# numbers, not computed by this toolkit, and are labeled as such.
C45_REPORTED = {
    "dr_tor": 93.4,
    "fpr_tor": None,
    "ppv_tor": 94.8,
    "dr_nontor": 99.2,
    "fpr_nontor": None,
    "ppv_nontor": 99.4,
    "overall_acc": None,
}
C45_COLUMN_NAME = "C4.5 (reported, not computed)"


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class Rates:
    """Fractions in [0, 1]; None marks an undefined (0/0) rate."""

    acc: float | None
    dr: float | None
    fpr: float | None
    ppv: float | None


def confusion(predictions: Sequence[int], labels: Sequence[int],
              positive_class: int) -> ConfusionMatrix:
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} vs {len(labels)}")
    if len(labels) == 0:
        raise ValueError("need at least one example")
    tp = tn = fp = fn = 0
    for pred, label in zip(predictions, labels):
        pred_pos = pred == positive_class
        label_pos = label == positive_class
        if pred_pos and label_pos:
            tp += 1
        elif pred_pos:
            fp += 1
        elif label_pos:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def rates(cm: ConfusionMatrix) -> Rates:
    return Rates(
        acc=_ratio(cm.tp + cm.tn, cm.total),
        dr=_ratio(cm.tp, cm.tp + cm.fn),
        fpr=_ratio(cm.fp, cm.fp + cm.tn),
        ppv=_ratio(cm.tp, cm.tp + cm.fp),
    )


@dataclass(frozen=True)
class ClassReport:
    """Unrounded percentage values for the seven report rows (None = undefined)."""

    values: dict[str, float | None]

    def __getitem__(self, key: str) -> float | None:
        return self.values[key]


def build_report(predictions: Sequence[int], labels: Sequence[int]) -> ClassReport:
    """Per-class DR/FPR/PPV with each class treated as positive in turn,
    plus the shared overall accuracy."""
    tor = rates(confusion(predictions, labels, positive_class=1))
    nontor = rates(confusion(predictions, labels, positive_class=0))

    def pct(v: float | None) -> float | None:
        return None if v is None else 100.0 * v

    return ClassReport(values={
        "dr_tor": pct(tor.dr),
        "fpr_tor": pct(tor.fpr),
        "ppv_tor": pct(tor.ppv),
        "dr_nontor": pct(nontor.dr),
        "fpr_nontor": pct(nontor.fpr),
        "ppv_nontor": pct(nontor.ppv),
        "overall_acc": pct(tor.acc),
    })


def round_percent(value: float) -> float:
    """Round half away from zero to one decimal place."""
    return float(Decimal(repr(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def format_percent(value: float | None) -> str:
    if value is None:
        return UNDEFINED_CELL
    return f"{round_percent(value):.1f}"


def render_table(columns: dict[str, ClassReport | dict],
                 include_reference: bool = False) -> str:
    """Aligned plain-text comparison table, one column per model."""
    cols = dict(columns)
    if include_reference:
        cols[C45_COLUMN_NAME] = C45_REPORTED
    names = list(cols)
    header = ["PERFORMANCE"] + names
    body = []
    for key, label in REPORT_ROWS:
        row = [label]
        for name in names:
            report = cols[name]
            value = report[key] if isinstance(report, ClassReport) else report[key]
            row.append(format_percent(value))
        body.append(row)
    widths = [max(len(row[i]) for row in [header] + body)
              for i in range(len(header))]
    lines = []
    for row in [header] + body:
        lines.append("  ".join(cell.ljust(width)
                               for cell, width in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def render_csv(columns: dict[str, ClassReport | dict],
               include_reference: bool = False) -> str:
    cols = dict(columns)
    if include_reference:
        cols[C45_COLUMN_NAME] = C45_REPORTED
    names = list(cols)
    lines = [",".join(["metric"] + [f'"{n}"' if "," in n else n for n in names])]
    for key, label in REPORT_ROWS:
        cells = [label]
        for name in names:
            report = cols[name]
            value = report[key] if isinstance(report, ClassReport) else report[key]
            cells.append(format_percent(value))
        lines.append(",".join(f'"{c}"' if "," in c else c for c in cells))
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> dict[str, dict[str, float | None]]:
    """Re-parse render_csv output back into per-column rounded values."""
    import csv as _csv
    import io

    rows = list(_csv.reader(io.StringIO(text)))
    names = rows[0][1:]
    label_to_key = {label: key for key, label in REPORT_ROWS}
    out: dict[str, dict[str, float | None]] = {n: {} for n in names}
    for row in rows[1:]:
        key = label_to_key[row[0]]
        for name, cell in zip(names, row[1:]):
            out[name][key] = None if cell == UNDEFINED_CELL else float(cell)
    return out
