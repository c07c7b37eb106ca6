import io
import os
import csv
import logging
from datetime import datetime, timezone
from typing import Dict, List, Sequence, Union

from dlove import __version__
from dlove.harness.runner import AGGREGATE_ARTIFACT, MANIFEST, effective_config, output_dir, run
from dlove.harness.stages import config_hash
from dlove.metrics.report import COLUMNS, format_row
from dlove.store.functions import read_model, write_model, write_text
from dlove.utils.enums import Mode, SweepAxis
from dlove.utils.exceptions import ConfigError
from dlove.utils.models import AggregateReport, ExperimentConfig, ReportRow, RunManifest, TargetConfig

logger = logging.getLogger(__name__)

SWEEP_REPORT = 'sweep.csv'

# rows within this many ASR points of the best count as optimal
OPTIMUM_TOLERANCE = 2.0

SweepValue = Union[int, float]


def _check_values(axis: SweepAxis, values: Sequence[SweepValue]) -> List[SweepValue]:
    if not values:
        raise ConfigError("A sweep needs at least one value.")
    if axis in (SweepAxis.finetune_epochs, SweepAxis.finetune_pairs):
        if any(int(value) != value or value < 1 for value in values):
            raise ConfigError(f"Sweep over '{axis.value}' takes positive integers, got {list(values)}.")
        return [int(value) for value in values]
    if any(value <= 0 for value in values):
        raise ConfigError(f"Perturbation limits must be positive, got {list(values)}.")

    return [float(value) for value in values]


def _vary_target(target: TargetConfig, axis: SweepAxis, value: SweepValue, max_pairs: int) -> TargetConfig:
    if axis == SweepAxis.epsilon:
        escalation = target.attack.escalation
        update = {'epsilon': value}
        if escalation is not None and escalation.epsilon_max < value:
            update['escalation'] = escalation.model_copy(update={'epsilon_max': value})
        return target.model_copy(update={'attack': target.attack.model_copy(update=update)})
    if axis == SweepAxis.finetune_epochs:
        return target.model_copy(update={'finetune': target.finetune.model_copy(update={'epochs': value})})

    # every point harvests the largest count so the harvest stage is shared
    return target.model_copy(update={'finetune': target.finetune.model_copy(update={'num_pairs': value}),
                                     'harvest_pairs': max(target.harvest_pairs, max_pairs)})


def vary(config: ExperimentConfig, axis: SweepAxis, value: SweepValue, max_pairs: int = 0) -> ExperimentConfig:
    """The config of one sweep point; it shares the base run's output directory and stage store."""
    if config.mode == Mode.whitebox and axis != SweepAxis.epsilon:
        raise ConfigError(f"Sweep axis '{axis.value}' needs a fine-tuned surrogate; mode 'whitebox' has none.")

    update: Dict[str, object] = {
        'output_dir': output_dir(config),
        'targets': [_vary_target(target, axis, value, max_pairs) for target in config.targets],
    }
    if config.mode == Mode.blackbox_common:
        common = config.common
        if axis == SweepAxis.epsilon:
            escalation = common.attack.escalation
            attack_update = {'epsilon': value}
            if escalation is not None and escalation.epsilon_max < value:
                attack_update['escalation'] = escalation.model_copy(update={'epsilon_max': value})
            common = common.model_copy(update={'attack': common.attack.model_copy(update=attack_update)})
        elif axis == SweepAxis.finetune_epochs:
            common = common.model_copy(update={'finetune': common.finetune.model_copy(update={'epochs': value})})
        else:
            common = common.model_copy(update={'finetune': common.finetune.model_copy(update={'num_pairs': value})})
        update['common'] = common

    return ExperimentConfig.model_validate(config.model_copy(update=update).model_dump(mode='json'))


def select_optimum(points: Sequence[SweepValue], rows: Sequence[ReportRow]) -> SweepValue:
    """Smallest sweep value whose ASR is within OPTIMUM_TOLERANCE points of the best one."""
    best = max(row.asr for row in rows)
    eligible = [point for point, row in zip(points, rows) if row.asr >= best - OPTIMUM_TOLERANCE]

    return min(eligible)


def sweep_csv(axis: SweepAxis, points: Sequence[SweepValue], reports: Sequence[AggregateReport],
              optimum: Dict[str, SweepValue]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow([axis.value] + COLUMNS + ['Optimal'])
    for point, result in zip(points, reports):
        for row in result.rows:
            selected = 'yes' if optimum.get(row.technique) == point else ''
            writer.writerow([f"{point:g}"] + format_row(row) + [selected])

    return buffer.getvalue()


def sweep(config: ExperimentConfig, axis: SweepAxis, values: Sequence[SweepValue]) -> RunManifest:
    """
    Runs the experiment once per value on a shared stage store and writes sweep.csv with one row per
    value and technique; the optimal value per technique is marked.
    """
    started_at = datetime.now(timezone.utc)
    points = _check_values(axis=axis, values=values)
    base = effective_config(config)
    out = output_dir(config)
    max_pairs = max(points) if axis == SweepAxis.finetune_pairs else 0

    reports: List[AggregateReport] = []
    artifacts: Dict[str, str] = {}
    for point in points:
        point_config = vary(config=base, axis=axis, value=point, max_pairs=max_pairs)
        logger.info("Sweep point %s=%g", axis.value, point)
        manifest = run(point_config)
        reports.append(read_model(path=manifest.artifacts[AGGREGATE_ARTIFACT], model=AggregateReport))
        artifacts.update({name: path for name, path in manifest.artifacts.items() if name != AGGREGATE_ARTIFACT
                          and name != 'report'})

    techniques = [row.technique for row in reports[0].rows]
    optimum = {}
    for technique in techniques:
        rows = [next(row for row in result.rows if row.technique == technique) for result in reports]
        optimum[technique] = select_optimum(points=points, rows=rows)
        logger.info("Optimal %s for '%s': %g", axis.value, technique, optimum[technique])

    path = os.path.join(out, SWEEP_REPORT)
    write_text(path=path, text=sweep_csv(axis=axis, points=points, reports=reports, optimum=optimum))
    artifacts['sweep'] = path

    manifest = RunManifest(config_hash=config_hash(config), config=config.model_dump(mode='json'),
                           artifacts=artifacts, started_at=started_at, finished_at=datetime.now(timezone.utc),
                           version=__version__)
    write_model(path=os.path.join(out, MANIFEST), model=manifest)

    return manifest
