import csv
import io
import json

import pytest
import torch

from dlove.data.image import Image, Watermark
from dlove.metrics.report import COLUMNS, aggregate, measure, to_csv, to_document, to_text_table
from dlove.utils.exceptions import ReportError
from dlove.utils.models import AggregateReport, AttackRecord, MetricRecord


def _record(technique: str, success: bool, removal: bool, epsilon: float = 0.05, psnr: float = 40.0,
            input_id: int = 0) -> AttackRecord:
    return AttackRecord(input_id=input_id, technique=technique, epsilon_used=epsilon, iterations=10, attempts=1,
                        success=success, removal=removal, ber=0.0 if success else 0.5, alpha_beta_cosine=0.0,
                        metrics=MetricRecord(psnr=psnr, ssim=0.99, lpips_proxy=0.001, mse=0.0001, cosine=1.0))


@pytest.fixture
def records():
    return [
        _record('redmark', True, True, psnr=40.0),
        _record('redmark', False, True, psnr=50.0, input_id=1),
        _record('redmark', True, False, epsilon=0.1, psnr=45.0, input_id=2),
        _record('hidden', True, True, psnr=30.0),
    ]


def test_aggregate_rows(records):
    report = aggregate(records=records, budgets={'redmark': (40, 200)})
    redmark, hidden = report.rows

    assert redmark.technique == 'redmark'
    assert redmark.count == 3
    assert redmark.asr == pytest.approx(200.0 / 3)
    assert redmark.removal_rate == pytest.approx(200.0 / 3)
    assert redmark.psnr == pytest.approx(45.0)
    assert redmark.pert_limit == 0.1
    assert (redmark.epoch, redmark.image) == (40, 200)
    assert hidden.asr == 100.0
    assert (hidden.epoch, hidden.image) == (None, None)
    assert 'LPIPS_proxy' in report.conventions


def test_aggregate_needs_records():
    with pytest.raises(ReportError):
        aggregate(records=[])


def test_csv_report(records):
    rows = list(csv.reader(io.StringIO(to_csv(aggregate(records=records, budgets={'redmark': (40, 200)})))))

    assert rows[0] == COLUMNS
    assert rows[1] == ['redmark', '40', '200', '0.1', '45.0000', '0.9900', '0.0010', '0.0001', '66.7', '66.7']
    assert rows[2][:3] == ['hidden', '', '']


def test_text_table_shows_the_same_numbers(records):
    report = aggregate(records=records)
    table = to_text_table(report)
    lines = table.splitlines()

    assert lines[0].split() == COLUMNS
    assert lines[2].split() == ['redmark', '0.1', '45.0000', '0.9900', '0.0010', '0.0001', '66.7', '66.7']
    assert any(line.startswith('PSNR:') for line in lines)


def test_document_report(records):
    document = json.loads(to_document(aggregate(records=records)))

    assert document['columns'] == COLUMNS
    assert document['rows'][1]['Technique'] == 'hidden'
    assert document['rows'][0]['Count'] == '3'


def test_renderers_reject_empty_reports():
    with pytest.raises(ReportError):
        to_csv(AggregateReport(rows=[]))
    with pytest.raises(ReportError):
        to_text_table(AggregateReport(rows=[]))


def test_measure_compares_attacked_with_watermarked(bits):
    watermarked = Image.constant(0.5, (8, 8, 1), dtype=torch.float64)
    attacked = Image.constant(0.6, (8, 8, 1), dtype=torch.float64)

    metrics = measure(watermarked=watermarked, attacked=attacked, extracted=bits(1, 0), beta=bits(1, 1),
                      pyramid_seed=0)

    assert metrics.psnr == pytest.approx(20.0, abs=1e-6)
    assert metrics.mse == pytest.approx(0.01)
    assert metrics.ber == 0.5
    assert metrics.cosine == pytest.approx(0.0)


def test_measure_image_watermarks_have_no_ber():
    picture = Image(pixels=torch.rand(8, 8, 3, generator=torch.Generator().manual_seed(0)))
    mark = Watermark.from_image(picture)

    metrics = measure(watermarked=picture, attacked=picture, extracted=mark, beta=mark, pyramid_seed=0)

    assert metrics.ber is None
    assert metrics.cosine == pytest.approx(1.0)
