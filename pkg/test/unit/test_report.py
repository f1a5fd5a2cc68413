import csv
import io
from typing import Optional
from xml.etree import ElementTree

import numpy as np
import pytest

from nc_ensemble.calibration import (
    CalibrationBins,
    ClassCalibrationRow,
    EvaluationReport,
    average_class_gap,
    evaluate,
)
from nc_ensemble.report import (
    ClassCell,
    build_compare_table,
    confidence_flag,
    format_percent,
    histogram_table,
    reliability_table,
    render_svg,
    write_report_files,
)

SVG_NS = '{http://www.w3.org/2000/svg}'
CLASS_NAMES = ['dog', 'cat', 'bird', 'man', 'boy']
SINGLE_ROWS = [(0.71, 0.88), (0.68, 0.71), (0.81, 0.85), (0.42, 0.64), (0.54, 0.66)]
NC_ROWS = [(0.79, 0.78), (0.68, 0.68), (0.83, 0.78), (0.51, 0.52), (0.57, 0.59)]


def class_report(
    pairs, ece: float, run: Optional[dict] = None, names: Optional[list] = None
) -> EvaluationReport:
    """A report with the given per-class ``(accuracy, confidence)`` pairs and ECE"""
    rows = [
        ClassCalibrationRow(c, 100, acc, conf, names[c] if names else None)
        for c, (acc, conf) in enumerate(pairs)
    ]
    bins = CalibrationBins(np.array([0, 500]), np.array([0.0, 0.65]), np.array([0.0, 0.7]))
    accuracy = sum(acc for acc, _ in pairs) / len(pairs)
    return EvaluationReport(accuracy, ece, 'standard', bins, rows, average_class_gap(rows), run)


@pytest.fixture
def small_report() -> EvaluationReport:
    probs = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.55, 0.45]])
    return evaluate(probs, [0, 1, 1, 0], bin_count=10)


@pytest.fixture
def calibrated_report() -> EvaluationReport:
    """Every prediction correct at confidence 1, so accuracy equals confidence in every bin"""
    probs = np.eye(3)[[0, 1, 2, 1, 0]]
    return evaluate(probs, [0, 1, 2, 1, 0], bin_count=5)


def svg_rects(svg: str, kind: str) -> list[ElementTree.Element]:
    root = ElementTree.fromstring(svg)
    return [el for el in root.iter(f'{SVG_NS}rect') if el.get('class') == kind]


def test_reliability_table(small_report):
    rows = reliability_table(small_report)
    assert len(rows) == 10
    assert rows[0] == ['0.05', '0.0', '0.0', '0']
    assert rows[5] == ['0.55', '1.0', '0.55', '1']
    assert rows[7] == ['0.75', '1.0', '0.7', '1']
    assert rows[8] == ['0.85', '0.0', '0.8', '1']
    assert rows[9] == ['0.95', '1.0', '0.9', '1']


def test_histogram_table(small_report):
    rows = histogram_table(small_report)
    assert len(rows) == 10
    assert rows[0] == ['0.0', '0.1', '0']
    assert rows[9] == ['0.9', '1.0', '1']
    assert sum(int(row[2]) for row in rows) == 4


def test_write_report_files(tmp_path, small_report):
    svg_path = tmp_path / 'plots' / 'calibration.svg'
    paths = write_report_files(small_report, tmp_path / 'report', svg_path)
    assert [p.name for p in paths] == ['reliability.csv', 'histogram.csv', 'calibration.svg']

    reliability = list(csv.reader(io.StringIO(paths[0].read_text())))
    assert reliability[0] == ['bin_mid', 'acc', 'con', 'count']
    assert len(reliability) == 11
    histogram = list(csv.reader(io.StringIO(paths[1].read_text())))
    assert histogram[0] == ['bin_lo', 'bin_hi', 'count']
    assert len(histogram) == 11
    assert svg_path.read_text().startswith('<svg')


def test_write_report_files__without_svg(tmp_path, small_report):
    paths = write_report_files(small_report, tmp_path)
    assert len(paths) == 2
    assert not list(tmp_path.glob('*.svg'))


def test_render_svg__bars(small_report):
    svg = render_svg(small_report)
    acc_bars = svg_rects(svg, 'acc')
    con_bars = svg_rects(svg, 'con')
    count_bars = svg_rects(svg, 'count')
    assert len(acc_bars) == len(con_bars) == len(count_bars) == 10
    assert [float(el.get('data-value')) for el in acc_bars] == list(small_report.bins.accuracy)
    assert [float(el.get('data-value')) for el in con_bars] == list(small_report.bins.confidence)
    assert sum(int(el.get('data-value')) for el in count_bars) == 4


def test_render_svg__calibrated_bars_match(calibrated_report):
    svg = render_svg(calibrated_report)
    for acc, con in zip(svg_rects(svg, 'acc'), svg_rects(svg, 'con')):
        assert acc.get('data-bin') == con.get('data-bin')
        assert acc.get('data-value') == con.get('data-value')
        assert acc.get('height') == con.get('height')
    top_bin = [el for el in svg_rects(svg, 'acc') if el.get('data-bin') == '4']
    assert top_bin[0].get('data-value') == '1.0'


def test_render_svg__title(small_report):
    svg = render_svg(small_report, title='single <M=1>')
    root = ElementTree.fromstring(svg)
    assert root.find(f'{SVG_NS}title').text == 'single <M=1>'
    assert 'ECE' in render_svg(small_report)


@pytest.mark.parametrize('value, expected', [(0.043, '4.3%'), (0.025, '2.5%'), (0.0, '0.0%')])
def test_format_percent(value, expected):
    assert format_percent(value) == expected


@pytest.mark.parametrize(
    'accuracy, confidence, expected',
    [(0.42, 0.64, 'over'), (0.71, 0.88, 'over'), (0.68, 0.71, ''), (0.9, 0.6, 'under')],
)
def test_confidence_flag(accuracy, confidence, expected):
    assert confidence_flag(accuracy, confidence, 0.1) == expected


def test_confidence_flag__threshold():
    assert confidence_flag(0.42, 0.64, 0.25) == ''
    assert confidence_flag(0.68, 0.71, 0.01) == 'over'


def test_class_cell():
    assert str(ClassCell(0.42, 0.64, 'over')) == '0.42 (0.64)+'
    assert str(ClassCell(0.9, 0.6, 'under')) == '0.90 (0.60)-'
    assert str(ClassCell(0.68, 0.71, '')) == '0.68 (0.71)'


def test_compare_table__text():
    table = build_compare_table(
        [
            ('pure', class_report(SINGLE_ROWS, 0.043, {'mode': 'pure', 'M': 7})),
            ('nc', class_report(NC_ROWS, 0.025, {'mode': 'nc', 'M': 7})),
        ]
    )
    lines = table.to_text().splitlines()
    assert lines[0].split() == ['run', 'mode', 'M', 'accuracy', 'ece']
    assert lines[1].split()[:3] == ['pure', 'pure', '7']
    assert lines[1].endswith('4.3%')
    assert lines[2].endswith('2.5%')
    assert len(lines) == 3


def test_compare_table__per_class_flags():
    table = build_compare_table(
        [
            ('single', class_report(SINGLE_ROWS, 0.11, {'mode': 'single', 'M': 1}, CLASS_NAMES)),
            ('nc', class_report(NC_ROWS, 0.03, {'mode': 'nc', 'M': 7}, CLASS_NAMES)),
        ]
    )
    assert table.class_labels == CLASS_NAMES
    assert [cell.flag for cell in table.rows[0].classes] == ['over', '', '', 'over', 'over']
    assert table.rows[0].avg_class_gap == pytest.approx(0.116)

    text = table.to_text(per_class=True)
    assert '0.42 (0.64)+' in text
    assert text.splitlines()[0].split()[-6:] == [*CLASS_NAMES, 'average']
    assert text.splitlines()[1].split()[-1] == '0.12'
    assert 'over-confident' in text.splitlines()[-1]


def test_compare_table__csv():
    table = build_compare_table(
        [
            ('single', class_report(SINGLE_ROWS, 0.043, {'mode': 'single', 'M': 1})),
            ('nc', class_report(NC_ROWS, 0.025, {'mode': 'nc', 'M': 7})),
        ]
    )
    rows = list(csv.DictReader(io.StringIO(table.to_csv(per_class=True))))
    assert len(rows) == 2
    assert rows[0]['run'] == 'single'
    assert rows[0]['M'] == '1'
    assert rows[0]['ece'] == '0.043'
    assert rows[0]['ece_percent'] == '4.3%'
    assert rows[1]['ece_percent'] == '2.5%'
    assert rows[0]['class_3_acc'] == '0.42'
    assert rows[0]['class_3_conf'] == '0.64'
    assert rows[0]['class_3_flag'] == 'over'
    assert rows[0]['class_1_flag'] == ''
    assert float(rows[1]['avg_class_gap']) == pytest.approx(0.018)


def test_compare_table__csv_without_per_class():
    report = class_report(NC_ROWS, 0.025)
    table = build_compare_table([('a', report), ('b', report)])
    header = table.to_csv().splitlines()[0]
    assert header == 'run,mode,M,accuracy,ece,ece_percent'


def test_compare_table__identical_runs():
    report = class_report(SINGLE_ROWS, 0.05, {'mode': 'pure', 'M': 3})
    table = build_compare_table([('first', report), ('second', report)])
    first, second = table.rows
    assert first.classes == second.classes
    assert (first.accuracy, first.ece) == (second.accuracy, second.ece)
    text_lines = table.to_text(per_class=True).splitlines()
    assert text_lines[1].split()[1:] == text_lines[2].split()[1:]


def test_compare_table__missing_run_info():
    report = class_report(NC_ROWS, 0.02)
    table = build_compare_table([('a', report), ('b', report)])
    assert table.rows[0].mode == ''
    assert table.rows[0].member_count is None


def test_compare_table__pads_fewer_classes():
    table = build_compare_table(
        [('three', class_report(NC_ROWS[:3], 0.02)), ('five', class_report(NC_ROWS, 0.02))]
    )
    assert table.class_labels == [f'class_{i}' for i in range(5)]
    assert len(table.rows[0].classes) == 5
    assert table.rows[0].classes[4] == ClassCell(0.0, 0.0, '')


def test_compare_table__flag_threshold():
    table = build_compare_table(
        [('a', class_report(SINGLE_ROWS, 0.1)), ('b', class_report(NC_ROWS, 0.02))],
        flag_threshold=0.2,
    )
    assert [cell.flag for cell in table.rows[0].classes] == ['', '', '', 'over', '']
    assert '> 0.2' in table.to_text(per_class=True)
