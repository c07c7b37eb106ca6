import io
import csv
import json
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from dlove.data.image import Image, Watermark
from dlove.metrics.quality import SSIM_C1, SSIM_C2, SSIM_WINDOW, PSNR_CAP, lpips_proxy, mse, psnr, ssim
from dlove.metrics.watermark import ber, cosine_similarity
from dlove.nets.perceptual import PYRAMID_WIDTHS
from dlove.utils.enums import WatermarkKind
from dlove.utils.exceptions import ReportError
from dlove.utils.models import AggregateReport, AttackRecord, MetricRecord, ReportRow

COLUMNS = ['Technique', 'Epoch', 'Image', 'PertLimit', 'PSNR', 'SSIM', 'LPIPS_proxy', 'MSE', 'ASR', 'RemovalRate']


def measure(watermarked: Image, attacked: Image, extracted: Watermark, beta: Watermark,
            pyramid_seed: int) -> MetricRecord:
    """Image metrics of attacked against watermarked; watermark metrics of extracted against β."""
    return MetricRecord(
        psnr=psnr(watermarked, attacked),
        ssim=ssim(watermarked, attacked),
        lpips_proxy=lpips_proxy(watermarked, attacked, pyramid_seed=pyramid_seed),
        mse=mse(watermarked, attacked),
        ber=ber(extracted, beta) if beta.kind == WatermarkKind.bits else None,
        cosine=cosine_similarity(extracted, beta),
    )


def conventions(pyramid_seed: int) -> Dict[str, str]:
    widths = '/'.join(str(width) for width in PYRAMID_WIDTHS)

    return {
        'MSE': 'mean squared difference on the [0,1] intensity scale, attacked vs watermarked',
        'PSNR': f'10*log10(1/MSE), peak 1, capped at {PSNR_CAP:g} dB',
        'SSIM': f'uniform {SSIM_WINDOW}x{SSIM_WINDOW} window, stride 1, C1={SSIM_C1:g}, C2={SSIM_C2:g}, '
                f'channel mean',
        'LPIPS_proxy': f'random conv pyramid {widths}, seed {pyramid_seed}; not the published LPIPS',
        'ASR': 'percentage of attacked images whose extracted watermark equals the target exactly',
        'RemovalRate': 'percentage of attacked images whose BER to the original watermark reaches the threshold',
    }


def aggregate(records: Sequence[AttackRecord], budgets: Optional[Mapping[str, Tuple[int, int]]] = None,
              pyramid_seed: int = 0) -> AggregateReport:
    """One row per technique in first-seen order; budgets map technique -> (fine-tune epochs, pairs)."""
    if not records:
        raise ReportError("Cannot aggregate an empty result set.")
    budgets = budgets or {}

    groups: Dict[str, List[AttackRecord]] = {}
    for record in records:
        groups.setdefault(record.technique, []).append(record)

    rows = []
    for technique, group in groups.items():
        count = len(group)
        epoch, image = budgets.get(technique, (None, None))
        rows.append(ReportRow(
            technique=technique,
            epoch=epoch,
            image=image,
            pert_limit=max(record.epsilon_used for record in group),
            psnr=sum(record.metrics.psnr for record in group) / count,
            ssim=sum(record.metrics.ssim for record in group) / count,
            lpips_proxy=sum(record.metrics.lpips_proxy for record in group) / count,
            mse=sum(record.metrics.mse for record in group) / count,
            asr=100.0 * sum(record.success for record in group) / count,
            removal_rate=100.0 * sum(record.removal for record in group) / count,
            count=count,
        ))

    return AggregateReport(rows=rows, conventions=conventions(pyramid_seed=pyramid_seed))


def format_row(row: ReportRow) -> List[str]:
    def optional(value: Optional[int]) -> str:
        return '' if value is None else str(value)

    return [
        row.technique,
        optional(row.epoch),
        optional(row.image),
        f"{row.pert_limit:g}",
        f"{row.psnr:.4f}",
        f"{row.ssim:.4f}",
        f"{row.lpips_proxy:.4f}",
        f"{row.mse:.4f}",
        f"{row.asr:.1f}",
        f"{row.removal_rate:.1f}",
    ]


def _check(report: AggregateReport) -> None:
    if not report.rows:
        raise ReportError("The report has no rows.")


def to_csv(report: AggregateReport) -> str:
    _check(report)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(COLUMNS)
    writer.writerows(format_row(row) for row in report.rows)

    return buffer.getvalue()


def to_text_table(report: AggregateReport) -> str:
    _check(report)
    cells = [COLUMNS] + [format_row(row) for row in report.rows]
    widths = [max(len(line[column]) for line in cells) for column in range(len(COLUMNS))]

    def render(line: List[str]) -> str:
        return '  '.join(cell.rjust(width) for cell, width in zip(line, widths)).rstrip()

    lines = [render(cells[0]), '  '.join('-' * width for width in widths)]
    lines.extend(render(line) for line in cells[1:])
    lines.append('')
    lines.extend(f"{name}: {text}" for name, text in report.conventions.items())

    return '\n'.join(lines) + '\n'


def to_document(report: AggregateReport) -> str:
    _check(report)
    document = {
        'columns': COLUMNS,
        'rows': [{**dict(zip(COLUMNS, format_row(row))), 'Count': str(row.count)} for row in report.rows],
        'conventions': report.conventions,
    }

    return json.dumps(document, indent=2, sort_keys=False) + '\n'
