"""Plain-text and CSV renderings of study reports, and scored-detection files."""

from __future__ import annotations

import csv
import io
import json
from typing import Dict, List, Sequence, TextIO, Tuple

from .metrics import Scored
from .study import StudyReport

CSV_COLUMNS = (
    "study_id",
    "train",
    "test",
    "metric",
    "value",
    "std",
    "trials",
    "tp",
    "fp",
    "fn",
    "gt_count",
    "image_count",
    "fused",
    "trial_seeds",
    "seed",
    "confidence_cutoff",
    "iou_threshold",
    "fusion_theta",
    "ap_mode",
    "aggregation",
    "partition",
    "split_seed",
    "exposure_scope",
    "format_version",
)


def pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def render_table(report: StudyReport) -> str:
    header = ["Train", "Test", "Precision", "Recall", "F1-score", "AP"]
    lines = []
    for row in report.rows:
        m = row.metrics
        ap = pct(m.ap)
        if row.ap_std is not None:
            ap = f"{ap} ± {pct(row.ap_std)}"
        train = row.train_label
        if len(row.ap_trials) > 1:
            train = f"{train} (N={len(row.ap_trials)})"
        lines.append([train, row.test, pct(m.precision), pct(m.recall), pct(m.f1), ap])
    widths = [max(len(r[i]) for r in [header] + lines) for i in range(len(header))]

    def fmt(cells):
        left = [c.ljust(w) for c, w in zip(cells[:2], widths[:2])]
        right = [c.rjust(w) for c, w in zip(cells[2:], widths[2:])]
        return " | ".join(left + right).rstrip()

    rule = "-+-".join("-" * w for w in widths)
    out = [f"Results of Study {report.study_id}", fmt(header), rule]
    out += [fmt(r) for r in lines]
    out.append("")
    for key, value in report.provenance.items():
        out.append(f"# {key}: {value}")
    for row in report.rows:
        seeds = ",".join(str(s) for s in row.trial_seeds)
        out.append(f"# seeds[{row.train} -> {row.test}]: {seeds}")
    return "\n".join(out) + "\n"


def write_csv(report: StudyReport, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    prov = report.provenance
    for row in report.rows:
        m = row.metrics
        for metric, value in (("precision", m.precision), ("recall", m.recall), ("f1", m.f1), ("ap", m.ap)):
            std = row.ap_std if metric == "ap" and row.ap_std is not None else ""
            writer.writerow(
                [
                    report.study_id,
                    row.train,
                    row.test,
                    metric,
                    repr(value),
                    repr(std) if std != "" else "",
                    len(row.ap_trials),
                    row.counts.tp,
                    row.counts.fp,
                    row.counts.fn,
                    row.gt_count,
                    row.image_count,
                    int(row.fused),
                    " ".join(str(s) for s in row.trial_seeds),
                    prov["seed"],
                    prov["confidence_cutoff"],
                    prov["iou_threshold"],
                    prov["fusion_theta"],
                    prov["ap_mode"],
                    prov["aggregation"],
                    prov["partition"],
                    "" if prov["split_seed"] is None else prov["split_seed"],
                    prov["exposure_scope"],
                    prov["format_version"],
                ]
            )


def csv_text(report: StudyReport) -> str:
    buf = io.StringIO()
    write_csv(report, buf)
    return buf.getvalue()


# -- scored detections --------------------------------------------------------------

Curve = Tuple[str, List[Scored], int]


def write_scored(curves: Sequence[Curve], stream: TextIO) -> None:
    """One JSON line per curve: label, ground-truth count and (confidence, is_tp) pairs."""
    for label, scored, gt in curves:
        rec = {"curve": label, "gt_count": gt, "scored": [[c, bool(t)] for c, t in scored]}
        stream.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_scored(stream: TextIO) -> List[Curve]:
    from .dataset import FormatError

    curves = []
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict) or set(rec) != {"curve", "gt_count", "scored"}:
            raise FormatError("expected keys curve, gt_count, scored", lineno)
        gt = rec["gt_count"]
        if not isinstance(gt, int) or gt < 0:
            raise FormatError("gt_count must be a non-negative integer", lineno, "gt_count")
        scored = []
        for item in rec["scored"]:
            if (
                not isinstance(item, list)
                or len(item) != 2
                or not isinstance(item[1], bool)
                or not isinstance(item[0], (int, float))
                or not 0.0 <= item[0] <= 1.0
            ):
                raise FormatError("expected [confidence in [0,1], is_tp]", lineno, "scored")
            scored.append((float(item[0]), item[1]))
        curves.append((str(rec["curve"]), scored, gt))
    return curves


def report_curves(report: StudyReport) -> List[Curve]:
    curves = []
    for row in report.rows:
        ev = report.evaluations[(row.train, row.test)]
        label = row.train_label if report.study_id == 4 else f"{row.train_label} / {row.test}"
        curves.append((label, list(ev.scored), ev.gt_count))
    return curves
