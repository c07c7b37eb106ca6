import os
from typing import Optional

import pytest

from dlove.data.dataset import build_dataset
from dlove.harness.runner import AGGREGATE_ARTIFACT, run
from dlove.nets.pipeline import build_pipeline
from dlove.nets.profiles import REDMARK, get_profile
from dlove.nets.training import train_pipeline
from dlove.store.functions import load_config, read_model
from dlove.utils.models import AggregateReport, SyntheticSpec, TrainConfig

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, 'configs')

pytestmark = pytest.mark.slow


def _desk_run(name: str, tmp_path, seed: Optional[int] = None) -> AggregateReport:
    config = load_config(os.path.join(CONFIGS, f"{name}.json"))
    update = {'output_dir': str(tmp_path / name)}
    if seed is not None:
        update['seed'] = seed
    manifest = run(config.model_copy(update=update))

    return read_model(path=manifest.artifacts[AGGREGATE_ARTIFACT], model=AggregateReport)


def test_toy_pipeline_reaches_ninety_percent_bit_accuracy():
    profile = get_profile(REDMARK)
    data = build_dataset(source=SyntheticSpec(), count=2000, shape=profile.cover_shape, seed=11, name='desk')

    _, history = train_pipeline(pipeline=build_pipeline(profile=profile, seed=11), data=data,
                                cfg=TrainConfig(epochs=200, batch_size=32, holdout_fraction=0.1, seed=11))

    assert history.final.test_bit_accuracy >= 0.9
    assert history.final.test_psnr >= 30.0


@pytest.mark.parametrize('seed', [1234, 1235, 1236])
def test_whitebox_overwrites_desk_target(tmp_path, seed):
    row, = _desk_run('desk-whitebox', tmp_path, seed=seed).rows

    assert row.asr >= 80.0
    assert row.psnr >= 30.0


def test_blackbox_transfer_to_desk_target(tmp_path):
    row, = _desk_run('desk-blackbox', tmp_path).rows

    assert row.asr >= 60.0


def test_common_surrogate_removes_every_member(tmp_path):
    report = _desk_run('desk-common', tmp_path)

    assert len(report.rows) == 3
    assert all(row.removal_rate >= 50.0 for row in report.rows)
