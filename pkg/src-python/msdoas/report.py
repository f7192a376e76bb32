# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

import csv
from collections.abc import Callable
from dataclasses import dataclass
from typing import List, Sequence

from tabulate import tabulate

from msdoas.mot_metrics import MotReport


@dataclass(frozen=True)
class ReportField:
    """
    Represents a column of the tracking report
    """
    name: str
    compute_fn: Callable  # Callable[[MotReport], Any]


REPORT_FIELDS = [
    ReportField(name="MOTA", compute_fn=lambda r: r.mota),
    ReportField(name="FP", compute_fn=lambda r: r.fp),
    ReportField(name="FN", compute_fn=lambda r: r.fn),
    ReportField(name="IDsw", compute_fn=lambda r: r.idsw),
    ReportField(name="IDF1", compute_fn=lambda r: r.idf1),
    ReportField(name="MT", compute_fn=lambda r: r.mt),
    ReportField(name="ML", compute_fn=lambda r: r.ml),
    ReportField(name="P", compute_fn=lambda r: r.precision),
    ReportField(name="R", compute_fn=lambda r: r.recall),
    ReportField(name="GT", compute_fn=lambda r: r.counts.clear.g),
    ReportField(name="matches", compute_fn=lambda r: r.counts.clear.matches),
]

CSV_FIELDS = ["MOTA", "FP", "FN", "IDsw", "IDF1", "MT", "ML"]
CONSOLE_FIELDS = CSV_FIELDS + ["P", "R"]


def get_report_field_by_name(name: str):
    for field in REPORT_FIELDS:
        if name == field.name:
            return field
    raise ValueError(f"Not a valid report field: {name}")


def report_stats(report: MotReport, report_fields: Sequence[str]) -> dict:
    """
    Generate one report row for a sequence, or for the pooled global result.

    Available fields:
     * `MOTA`, `IDF1` – accuracy ratios, MOTA may be negative
     * `FP`, `FN`, `IDsw` – summed error counts
     * `MT`, `ML` – fractions of mostly tracked and mostly lost ground truth trajectories
     * `P`, `R` – precision and recall of the CLEAR matches
     * `GT`, `matches` – ground truth objects and matched objects

    :param report: The report to render.
    :param report_fields: list[str] of fields to include in the row.
    :return: A dict keyed by column name.
    """
    result = {'sequence': report.sequence}

    for field_name in report_fields:
        field = get_report_field_by_name(field_name)
        result[field.name] = field.compute_fn(report)

    return result


def report_rows(report: MotReport, report_fields: Sequence[str] = CSV_FIELDS) -> List[dict]:
    """Rows of every sequence of ``report`` followed by its global row."""
    rows = [report_stats(sequence, report_fields) for sequence in report.breakdown]
    rows.append(report_stats(report, report_fields))
    return rows


def render_table(rows: Sequence[dict], floatfmt='.4f') -> str:
    return tabulate(rows, tablefmt='pipe', headers='keys', floatfmt=floatfmt)


def write_report_csv(rows: Sequence[dict], path):
    """Writes report rows, with ratios at six decimals."""
    if not rows:
        raise ValueError('Cannot write an empty report')
    with open(path, 'w', newline='', encoding='utf-8') as fp:
        writer = csv.DictWriter(fp, fieldnames=list(rows[0]), lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: f'{v:.6f}' if isinstance(v, float) else v for k, v in row.items()})


def read_report_csv(path) -> List[dict]:
    """Reads a report written by :func:`write_report_csv`, converting numeric cells."""
    with open(path, 'r', newline='', encoding='utf-8') as fp:
        rows = []
        for row in csv.DictReader(fp):
            rows.append({k: v if k == 'sequence' else (float(v) if '.' in v else int(v)) for k, v in row.items()})
        return rows
