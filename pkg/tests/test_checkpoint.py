import pytest
import torch

from dlove.nets.checkpoint import load_checkpoint, save_checkpoint
from dlove.nets.training import EpochRecord, TrainHistory
from dlove.utils.exceptions import ArtifactWriteError, CheckpointIntegrityError
from dlove.utils.models import TrainConfig


def test_checkpoint_round_trip(tiny_pipeline, tmp_path):
    path = tmp_path / 'pipeline.pt'
    history = TrainHistory(epochs=[EpochRecord(epoch=1, losses={'total': 0.5})])
    save_checkpoint(pipeline=tiny_pipeline, path=path, train_config=TrainConfig(epochs=3), history=history)

    loaded, metadata = load_checkpoint(path)

    assert metadata.profile == tiny_pipeline.profile
    assert metadata.train_config.epochs == 3
    assert metadata.history.final.losses == {'total': 0.5}
    assert loaded.dtype == torch.float64
    expected = tiny_pipeline.state_dict()
    assert all(torch.equal(value, expected[key]) for key, value in loaded.state_dict().items())


def test_tampered_checkpoint_is_rejected(tiny_pipeline, tmp_path):
    path = tmp_path / 'pipeline.pt'
    save_checkpoint(pipeline=tiny_pipeline, path=path)

    container = torch.load(path, weights_only=True)
    name = next(iter(container['state_dict']))
    container['state_dict'][name] = container['state_dict'][name] + 1e-3
    torch.save(container, path)

    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(path)


def test_tampered_metadata_is_rejected(tiny_pipeline, tmp_path):
    path = tmp_path / 'pipeline.pt'
    save_checkpoint(pipeline=tiny_pipeline, path=path)

    container = torch.load(path, weights_only=True)
    container['pyramid_seed'] = 99
    torch.save(container, path)

    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(tmp_path / 'missing.pt')


def test_foreign_file_is_not_a_checkpoint(tmp_path):
    path = tmp_path / 'other.pt'
    torch.save({'weights': torch.zeros(2)}, path)

    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(path)


def test_unwritable_checkpoint(tiny_pipeline, tmp_path):
    with pytest.raises(ArtifactWriteError):
        save_checkpoint(pipeline=tiny_pipeline, path=tmp_path / 'absent' / 'pipeline.pt')
