"""Report outputs built from :py:class:`.EvaluationReport` objects: reliability and histogram CSV
rows, a standalone SVG with both charts, and a table comparing several runs.
"""

from __future__ import annotations

from html import escape
from logging import getLogger
from pathlib import Path
from typing import Any, Optional
from collections.abc import Sequence

from attr import define, field, frozen

from nc_ensemble.calibration import EvaluationReport
from nc_ensemble.storage import atomic_write_text, format_csv, format_float, write_csv

DEFAULT_FLAG_THRESHOLD = 0.1
RELIABILITY_HEADER = ['bin_mid', 'acc', 'con', 'count']
HISTOGRAM_HEADER = ['bin_lo', 'bin_hi', 'count']
FLAG_MARKS = {'over': '+', 'under': '-', '': ''}

# SVG layout, in px
PANEL_WIDTH = 360
PANEL_HEIGHT = 260
MARGIN = 40
ACC_COLOR = '#3465a4'
CON_COLOR = '#f57900'
COUNT_COLOR = '#555753'

logger = getLogger(__name__)


def reliability_table(report: EvaluationReport) -> list[list[str]]:
    """Rows for ``reliability.csv``, one per bin (empty bins included)"""
    return [
        [format_float(row.bin_mid), format_float(row.acc), format_float(row.con), str(row.count)]
        for row in report.reliability
    ]


def histogram_table(report: EvaluationReport) -> list[list[str]]:
    """Rows for ``histogram.csv``: prediction count per confidence bin"""
    edges = report.bins.edges
    return [
        [format_float(edges[i]), format_float(edges[i + 1]), str(int(count))]
        for i, count in enumerate(report.histogram)
    ]


def write_report_files(
    report: EvaluationReport, out_dir: Path | str, svg_path: Optional[Path | str] = None
) -> list[Path]:
    """Write ``reliability.csv`` and ``histogram.csv`` to ``out_dir``, and optionally an SVG"""
    out_dir = Path(out_dir)
    paths = [
        write_csv(out_dir / 'reliability.csv', RELIABILITY_HEADER, reliability_table(report)),
        write_csv(out_dir / 'histogram.csv', HISTOGRAM_HEADER, histogram_table(report)),
    ]
    if svg_path is not None:
        paths.append(atomic_write_text(svg_path, render_svg(report)))
    logger.info(f'Wrote report files: {", ".join(str(p) for p in paths)}')
    return paths


def render_svg(report: EvaluationReport, title: Optional[str] = None) -> str:
    """Render a self-contained SVG with a reliability diagram (accuracy and confidence bars per
    bin, plus the diagonal) next to a histogram of predictions per bin. Each bar carries its value
    in a ``data-value`` attribute.
    """
    width = 2 * PANEL_WIDTH + 2 * MARGIN
    height = PANEL_HEIGHT + 2 * MARGIN
    title = title or f'accuracy {report.accuracy:.4f}, ECE {format_percent(report.ece)}'
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" '
        f'font-size="11">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">'
        f'{escape(title)}</text>',
    ]
    parts += _reliability_panel(report, MARGIN, MARGIN)
    parts += _histogram_panel(report, MARGIN + PANEL_WIDTH + MARGIN // 2, MARGIN)
    parts.append('</svg>')
    return '\n'.join(parts) + '\n'


def _reliability_panel(report: EvaluationReport, x0: float, y0: float) -> list[str]:
    plot_w, plot_h = PANEL_WIDTH - MARGIN, PANEL_HEIGHT - MARGIN
    bottom = y0 + plot_h
    slot = plot_w / report.bins.bin_count
    parts = ['<g class="reliability">', *_axes(x0, y0, plot_w, plot_h, 'confidence', 'accuracy')]
    parts.append(
        f'<line x1="{x0:.2f}" y1="{bottom:.2f}" x2="{x0 + plot_w:.2f}" y2="{y0:.2f}" '
        f'stroke="#888a85" stroke-dasharray="4 3"/>'
    )
    for i, row in enumerate(report.reliability):
        x = x0 + i * slot
        for offset, kind, value, color in (
            (0.1, 'acc', row.acc, ACC_COLOR),
            (0.5, 'con', row.con, CON_COLOR),
        ):
            bar_h = value * plot_h
            parts.append(
                f'<rect class="{kind}" data-bin="{i}" data-value="{format_float(value)}" '
                f'x="{x + offset * slot:.2f}" y="{bottom - bar_h:.2f}" width="{0.4 * slot:.2f}" '
                f'height="{bar_h:.2f}" fill="{color}">'
                f'<title>bin {i}: {kind} {value:.3f} (n={row.count})</title></rect>'
            )
    parts += _legend(x0 + 8, y0 + 8, [('accuracy', ACC_COLOR), ('confidence', CON_COLOR)])
    parts.append('</g>')
    return parts


def _histogram_panel(report: EvaluationReport, x0: float, y0: float) -> list[str]:
    plot_w, plot_h = PANEL_WIDTH - MARGIN, PANEL_HEIGHT - MARGIN
    bottom = y0 + plot_h
    slot = plot_w / report.bins.bin_count
    peak = max(int(report.histogram.max()), 1)
    parts = ['<g class="histogram">', *_axes(x0, y0, plot_w, plot_h, 'confidence', 'count')]
    for i, count in enumerate(report.histogram):
        bar_h = int(count) / peak * plot_h
        parts.append(
            f'<rect class="count" data-bin="{i}" data-value="{int(count)}" '
            f'x="{x0 + (i + 0.1) * slot:.2f}" y="{bottom - bar_h:.2f}" '
            f'width="{0.8 * slot:.2f}" height="{bar_h:.2f}" fill="{COUNT_COLOR}">'
            f'<title>bin {i}: {int(count)} predictions</title></rect>'
        )
    parts.append(
        f'<text x="{x0 - 4:.2f}" y="{y0 + 4:.2f}" text-anchor="end">{peak}</text>'
    )
    parts.append('</g>')
    return parts


def _axes(x0: float, y0: float, w: float, h: float, x_label: str, y_label: str) -> list[str]:
    bottom = y0 + h
    return [
        f'<line x1="{x0:.2f}" y1="{bottom:.2f}" x2="{x0 + w:.2f}" y2="{bottom:.2f}" stroke="black"/>',
        f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x0:.2f}" y2="{bottom:.2f}" stroke="black"/>',
        f'<text x="{x0:.2f}" y="{bottom + 14:.2f}" text-anchor="middle">0</text>',
        f'<text x="{x0 + w:.2f}" y="{bottom + 14:.2f}" text-anchor="middle">1</text>',
        f'<text x="{x0 + w / 2:.2f}" y="{bottom + 28:.2f}" text-anchor="middle">{x_label}</text>',
        f'<text x="{x0 - 28:.2f}" y="{y0 + h / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 {x0 - 28:.2f} {y0 + h / 2:.2f})">{y_label}</text>',
    ]


def _legend(x: float, y: float, entries: list[tuple[str, str]]) -> list[str]:
    parts = []
    for i, (label, color) in enumerate(entries):
        row_y = y + i * 14
        parts.append(f'<rect x="{x:.2f}" y="{row_y:.2f}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{x + 14:.2f}" y="{row_y + 9:.2f}">{escape(label)}</text>')
    return parts


def format_percent(value: float) -> str:
    """Format a fraction as a percentage with one decimal, e.g. ``0.043 -> '4.3%'``"""
    return f'{100 * value:.1f}%'


def confidence_flag(accuracy: float, confidence: float, threshold: float) -> str:
    """``'over'`` or ``'under'`` if confidence differs from accuracy by more than ``threshold``"""
    gap = confidence - accuracy
    if gap > threshold:
        return 'over'
    if -gap > threshold:
        return 'under'
    return ''


@frozen
class ClassCell:
    accuracy: float
    confidence: float
    flag: str

    def __str__(self) -> str:
        return f'{self.accuracy:.2f} ({self.confidence:.2f}){FLAG_MARKS[self.flag]}'


@frozen
class CompareRow:
    label: str
    mode: str
    member_count: Optional[int]
    accuracy: float
    ece: float
    avg_class_gap: float
    classes: tuple[ClassCell, ...] = field(converter=tuple)


@define
class CompareTable:
    """One row per evaluated run: accuracy, ECE, and per-class accuracy (confidence) cells"""

    rows: list[CompareRow]
    class_labels: list[str]
    flag_threshold: float = DEFAULT_FLAG_THRESHOLD

    def header(self, per_class: bool = False) -> list[str]:
        header = ['run', 'mode', 'M', 'accuracy', 'ece']
        if per_class:
            header += [*self.class_labels, 'average']
        return header

    def to_text(self, per_class: bool = False) -> str:
        body = [
            [
                row.label,
                row.mode,
                '' if row.member_count is None else str(row.member_count),
                f'{row.accuracy:.4f}',
                format_percent(row.ece),
                *([str(c) for c in row.classes] + [f'{row.avg_class_gap:.2f}'] if per_class else []),
            ]
            for row in self.rows
        ]
        lines = _align([self.header(per_class), *body])
        if per_class:
            lines.append(
                f'+ over-confident, - under-confident (|conf - acc| > {self.flag_threshold})'
            )
        return '\n'.join(lines) + '\n'

    def to_csv(self, per_class: bool = False) -> str:
        header = ['run', 'mode', 'M', 'accuracy', 'ece', 'ece_percent']
        if per_class:
            for label in self.class_labels:
                header += [f'{label}_acc', f'{label}_conf', f'{label}_flag']
            header.append('avg_class_gap')
        rows = []
        for row in self.rows:
            cells: list[Any] = [
                row.label,
                row.mode,
                '' if row.member_count is None else row.member_count,
                format_float(row.accuracy),
                format_float(row.ece),
                format_percent(row.ece),
            ]
            if per_class:
                for cell in row.classes:
                    cells += [format_float(cell.accuracy), format_float(cell.confidence), cell.flag]
                cells.append(format_float(row.avg_class_gap))
            rows.append(cells)
        return format_csv(header, rows)


def build_compare_table(
    runs: Sequence[tuple[str, EvaluationReport]],
    flag_threshold: float = DEFAULT_FLAG_THRESHOLD,
) -> CompareTable:
    """Build a comparison table from ``(label, report)`` pairs, in the given order"""
    rows = []
    class_labels: list[str] = []
    for label, report in runs:
        run = report.run or {}
        cells = [
            ClassCell(
                c.accuracy,
                c.mean_confidence,
                confidence_flag(c.accuracy, c.mean_confidence, flag_threshold),
            )
            for c in report.per_class
        ]
        if len(report.per_class) > len(class_labels):
            class_labels = [c.name or f'class_{c.class_index}' for c in report.per_class]
        rows.append(
            CompareRow(
                label=label,
                mode=str(run.get('mode', '')),
                member_count=run.get('M'),
                accuracy=report.accuracy,
                ece=report.ece,
                avg_class_gap=report.avg_class_gap,
                classes=cells,
            )
        )
    width = len(class_labels)
    for i, row in enumerate(rows):
        if len(row.classes) < width:
            missing = [ClassCell(0.0, 0.0, '')] * (width - len(row.classes))
            rows[i] = CompareRow(
                row.label, row.mode, row.member_count, row.accuracy, row.ece,
                row.avg_class_gap, [*row.classes, *missing],
            )  # fmt: skip
    return CompareTable(rows, class_labels, flag_threshold)


def _align(rows: list[list[str]]) -> list[str]:
    """Left-align the first column and right-align the rest"""
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append('  '.join(cells).rstrip())
    return lines
