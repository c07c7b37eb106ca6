import os
import json
import shutil
import logging
from typing import List, Optional, Type, TypeVar, Union

from pydantic import BaseModel

from dlove.data.dataset import Dataset, DatasetItem
from dlove.data.image import Watermark, load_image, save_image
from dlove.nets.profiles import expand_presets
from dlove.surrogate.pairs import bits_to_hex, hex_to_bits
from dlove.utils.enums import Split, WatermarkKind
from dlove.utils.exceptions import ArtifactWriteError, ConfigError, DatasetError, StageError
from dlove.utils.models import AttackRecord, ExperimentConfig

logger = logging.getLogger(__name__)

Model = TypeVar('Model', bound=BaseModel)

STAGE_MARKER = 'stage.json'
DATASET_INDEX = 'dataset.json'


class StageMarker(BaseModel):
    stage: str
    key: str
    artifacts: List[str] = []


class DatasetIndex(BaseModel):
    name: str
    split: Split
    channels: int
    items: List[str]
    files: List[str]


def stage_dir(out: Union[str, os.PathLike], stage: str, key: str) -> str:
    return os.path.join(out, 'stages', stage, key)


def get_stage_marker(out: Union[str, os.PathLike], stage: str, key: str) -> Optional[StageMarker]:
    path = os.path.join(stage_dir(out, stage, key), STAGE_MARKER)
    if not os.path.isfile(path):
        return None

    try:
        marker = read_model(path=path, model=StageMarker)
    except Exception:
        return None

    return marker if marker.key == key and marker.stage == stage else None


def prepare_stage(out: Union[str, os.PathLike], stage: str, key: str) -> str:
    """Empty directory for a stage about to run; leftovers of an interrupted attempt are discarded."""
    directory = stage_dir(out, stage, key)
    if os.path.isdir(directory):
        shutil.rmtree(directory)
    os.makedirs(directory, exist_ok=True)

    return directory


def complete_stage(out: Union[str, os.PathLike], stage: str, key: str, artifacts: List[str]) -> StageMarker:
    marker = StageMarker(stage=stage, key=key, artifacts=artifacts)
    write_model(path=os.path.join(stage_dir(out, stage, key), STAGE_MARKER), model=marker)

    return marker


def write_text(path: Union[str, os.PathLike], text: str) -> None:
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as file:
            file.write(text)
    except OSError as error:
        raise ArtifactWriteError(f"Cannot write {path}: {error}")


def write_model(path: Union[str, os.PathLike], model: BaseModel) -> None:
    write_text(path=path, text=model.model_dump_json(indent=2) + '\n')


def read_model(path: Union[str, os.PathLike], model: Type[Model]) -> Model:
    try:
        with open(path, encoding='utf-8') as file:
            return model.model_validate_json(file.read())
    except OSError as error:
        raise StageError(stage=os.path.basename(os.path.dirname(path)), detail=f"cannot read {path}: {error}")


def write_records(path: Union[str, os.PathLike], records: List[AttackRecord]) -> None:
    write_text(path=path, text=''.join(record.model_dump_json() + '\n' for record in records))


def read_records(path: Union[str, os.PathLike]) -> List[AttackRecord]:
    try:
        with open(path, encoding='utf-8') as file:
            return [AttackRecord.model_validate_json(line) for line in file if line.strip()]
    except OSError as error:
        raise StageError(stage='attack', detail=f"cannot read {path}: {error}")


def save_dataset(dataset: Dataset, directory: Union[str, os.PathLike]) -> str:
    os.makedirs(directory, exist_ok=True)
    files = []
    for index, item in enumerate(dataset.items):
        name = f"item-{index:06d}.png"
        save_image(image=item.image, path=os.path.join(directory, name))
        files.append(name)

    index = DatasetIndex(name=dataset.name, split=dataset.split, channels=dataset.shape[2],
                         items=[item.item_id for item in dataset.items], files=files)
    path = os.path.join(directory, DATASET_INDEX)
    write_model(path=path, model=index)

    return path


def load_dataset(directory: Union[str, os.PathLike]) -> Dataset:
    path = os.path.join(directory, DATASET_INDEX)
    if not os.path.isfile(path):
        raise DatasetError(f"No dataset index in {directory}.")
    index = read_model(path=path, model=DatasetIndex)

    items = [
        DatasetItem(item_id=item_id, image=load_image(os.path.join(directory, name), target_channels=index.channels))
        for item_id, name in zip(index.items, index.files)
    ]

    return Dataset(name=index.name, items=items, split=index.split)


def load_config(path: Union[str, os.PathLike]) -> ExperimentConfig:
    try:
        with open(path, encoding='utf-8') as file:
            document = json.load(file)
    except OSError as error:
        raise ConfigError(f"Cannot read config {path}: {error}")
    except json.JSONDecodeError as error:
        raise ConfigError(f"Config {path} is not valid JSON: {error}")

    return ExperimentConfig.model_validate(expand_presets(document))


WATERMARK_INDEX = 'watermarks.json'


class WatermarkEntry(BaseModel):
    bits: Optional[str] = None
    bit_count: Optional[int] = None
    image: Optional[str] = None
    channels: Optional[int] = None


class WatermarkIndex(BaseModel):
    watermarks: List[WatermarkEntry]


def save_watermarks(watermarks: List[Watermark], directory: Union[str, os.PathLike]) -> str:
    os.makedirs(directory, exist_ok=True)
    entries = []
    for index, watermark in enumerate(watermarks):
        if watermark.kind == WatermarkKind.bits:
            entries.append(WatermarkEntry(bits=bits_to_hex(watermark.bit_list()), bit_count=watermark.size))
            continue
        name = f"wm-{index:06d}.png"
        save_image(image=watermark.image, path=os.path.join(directory, name))
        entries.append(WatermarkEntry(image=name, channels=watermark.image.channels))

    path = os.path.join(directory, WATERMARK_INDEX)
    write_model(path=path, model=WatermarkIndex(watermarks=entries))

    return path


def load_watermarks(directory: Union[str, os.PathLike]) -> List[Watermark]:
    index = read_model(path=os.path.join(directory, WATERMARK_INDEX), model=WatermarkIndex)

    return [
        Watermark.from_bits(hex_to_bits(entry.bits, entry.bit_count)) if entry.bits is not None
        else Watermark.from_image(load_image(os.path.join(directory, entry.image), target_channels=entry.channels))
        for entry in index.watermarks
    ]
