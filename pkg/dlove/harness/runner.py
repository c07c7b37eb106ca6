"""
Stage graphs of the three experiment modes.

whitebox:            train-target -> attack-set -> attack -> evaluate -> report
blackbox-per-target: train-target -> train-surrogate -> harvest -> finetune -> attack-set -> attack -> ...
blackbox-common:     train-targets -> one common surrogate -> capped harvests -> pooled finetune -> ...

Every stage reads its inputs back from the files its upstream stages wrote.
"""
import os
import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch
from tqdm import tqdm

from dlove import __version__
from dlove.attack.attack import AttackResult, attack_blackbox, attack_whitebox
from dlove.config import Config
from dlove.data.dataset import build_dataset, synthesize_image
from dlove.data.image import Image, Watermark, sample_bit_watermark, save_image
from dlove.harness.scale import apply_scale
from dlove.harness.stages import (ATTACK, ATTACK_SET, DATASET, EVALUATE, FINETUNE, HARVEST, REPORT, TRAIN_SURROGATE,
                                  TRAIN_TARGET, check_until, config_hash, reaches, run_stage, stage_key, stage_seed)
from dlove.metrics.quality import residual
from dlove.metrics.report import aggregate, measure, to_csv, to_text_table
from dlove.nets.checkpoint import load_checkpoint, save_checkpoint
from dlove.nets.pipeline import build_pipeline
from dlove.nets.training import train_pipeline
from dlove.store.functions import (DATASET_INDEX, WATERMARK_INDEX, load_dataset, load_watermarks, read_model,
                                   read_records, save_dataset, save_watermarks, write_model, write_records,
                                   write_text)
from dlove.surrogate.finetune import (build_common_surrogate, common_profile, finetune_common, finetune_decoder,
                                      surrogate_profile, train_surrogate)
from dlove.surrogate.pairs import (MANIFEST_NAME, AttackPair, BitMapping, bit_mapping, cap_pairs, harvest_pairs,
                                   load_pairs, save_pairs)
from dlove.utils.enums import Mode, ReportFormat, WatermarkKind
from dlove.utils.exceptions import ReportError
from dlove.utils.models import (AggregateReport, AttackConfig, AttackRecord, CommonSurrogateSpec, ExperimentConfig,
                                RunManifest, SyntheticSpec, TargetConfig, TechniqueProfile)
from dlove.utils.scripts import derive_seed, make_generator

logger = logging.getLogger(__name__)

CHECKPOINT = 'pipeline.pt'
HISTORY = 'history.json'
MARKED = 'marked'
TARGETS = 'targets'
RESULTS = 'attacks.jsonl'
IMAGES = 'images'
AGGREGATE = 'aggregate.json'
MANIFEST = 'manifest.json'

AGGREGATE_ARTIFACT = 'aggregate'

GRAPHS: Dict[Mode, List[str]] = {
    Mode.whitebox: [TRAIN_TARGET, ATTACK_SET, ATTACK, EVALUATE, REPORT],
    Mode.blackbox_per_target: [TRAIN_TARGET, TRAIN_SURROGATE, HARVEST, FINETUNE, ATTACK_SET, ATTACK, EVALUATE,
                               REPORT],
    Mode.blackbox_common: [TRAIN_TARGET, TRAIN_SURROGATE, HARVEST, FINETUNE, ATTACK_SET, ATTACK, EVALUATE, REPORT],
}

# (W, alpha, beta) -> result
AttackFn = Callable[[Image, Watermark, Watermark], AttackResult]

# (technique, stage key, stage directory)
StageOutput = Tuple[str, str, str]


def output_dir(config: ExperimentConfig) -> str:
    return config.output_dir or os.path.join(Config.OUTPUT_DIR, config.name)


def draw_target(profile: TechniqueProfile, alpha: Watermark, seed: int, window_bits: Optional[int] = None) -> Watermark:
    """β for one attacked image; bit targets are redrawn until they differ from α on the attacked window."""
    if profile.watermark_kind == WatermarkKind.image:
        picture = synthesize_image(spec=SyntheticSpec(), shape=profile.watermark_size,
                                   generator=make_generator(seed))
        return Watermark.from_image(picture)

    size = window_bits or profile.bit_count
    attempt = 0
    while True:
        beta = sample_bit_watermark(n=profile.bit_count, seed=derive_seed(seed, attempt))
        if not torch.equal(beta.bits[:size], alpha.bits[:size]):
            return beta
        attempt += 1


def to_record(result: AttackResult, input_id: int, technique: str) -> AttackRecord:
    return AttackRecord(
        input_id=input_id,
        technique=technique,
        epsilon_used=result.epsilon_used,
        iterations=result.iterations_used,
        attempts=result.attempts,
        success=result.success,
        removal=result.removal,
        surrogate_success=result.surrogate_success,
        ber=result.metrics.ber,
        ber_alpha=result.ber_alpha,
        alpha_beta_cosine=result.alpha_beta_cosine,
        metrics=result.metrics,
    )


def attack_images(attack_fn: AttackFn, marked: Sequence[AttackPair], betas: Sequence[Watermark], technique: str,
                  pyramid_seed: int, image_dir: Optional[str] = None, residual_gain: float = 10.0) -> List[AttackRecord]:
    """Attacks every marked image; with several workers results are still merged in input order."""

    def attack_one(index: int) -> AttackRecord:
        pair = marked[index]
        result = attack_fn(pair.watermarked, pair.wm, betas[index])
        metrics = measure(watermarked=pair.watermarked, attacked=result.attacked, extracted=result.extracted,
                          beta=betas[index], pyramid_seed=pyramid_seed)
        if image_dir is not None:
            save_image(image=result.attacked, path=os.path.join(image_dir, f"attacked-{index:06d}.png"))
            save_image(image=residual(pair.watermarked, result.attacked, gain=residual_gain),
                       path=os.path.join(image_dir, f"residual-{index:06d}.png"))

        return to_record(result=result.model_copy(update={'metrics': metrics}), input_id=index, technique=technique)

    indices = range(len(marked))
    progress = tqdm(total=len(marked), desc=f"attack {technique}", disable=not Config.PROGRESS)
    records = []
    if Config.WORKERS > 1:
        with ThreadPoolExecutor(max_workers=Config.WORKERS) as pool:
            for record in pool.map(attack_one, indices):
                records.append(record)
                progress.update()
    else:
        for index in indices:
            records.append(attack_one(index))
            progress.update()
    progress.close()

    logger.info("Attacked %d images of '%s': ASR %.1f%%, removal %.1f%%", len(records), technique,
                100.0 * sum(record.success for record in records) / len(records),
                100.0 * sum(record.removal for record in records) / len(records))

    return records


class Experiment:
    """One pass over a mode's stage graph, cut after `until` when given."""

    def __init__(self, config: ExperimentConfig, out: str, until: Optional[str] = None):
        self.config = config
        self.out = out
        self.until = until
        self.artifacts: Dict[str, str] = {}

    def seed(self, stage: str, *names) -> int:
        return stage_seed(self.config.seed, stage, *names)

    def reaches(self, stage: str) -> bool:
        return reaches(self.until, stage)

    def dataset(self, name: str, shape: Tuple[int, int, int]) -> Tuple[str, str]:
        spec = self.config.datasets[name]
        seed = self.seed(DATASET, name)
        key = stage_key(DATASET, {'name': name, 'spec': spec, 'shape': list(shape), 'seed': seed})

        def build(directory: str) -> List[str]:
            dataset = build_dataset(source=spec.source, count=spec.count, shape=shape, seed=seed, name=name,
                                    allow_replacement=spec.allow_replacement)
            save_dataset(dataset=dataset, directory=directory)
            return [DATASET_INDEX]

        label = f"{name} {'x'.join(str(side) for side in shape)}"

        return key, run_stage(self.out, DATASET, key, build, label=label)

    def _train(self, stage: str, profile: TechniqueProfile, dataset: str, train, train_fn) -> Tuple[str, str]:
        data_key, data_dir = self.dataset(dataset, profile.cover_shape)
        key = stage_key(stage, {'profile': profile, 'train': train, 'pyramid_seed': self.config.pyramid_seed},
                        [data_key])

        def build(directory: str) -> List[str]:
            pipeline, history = train_fn(load_dataset(data_dir))
            save_checkpoint(pipeline=pipeline, path=os.path.join(directory, CHECKPOINT), train_config=train,
                            history=history)
            return [CHECKPOINT]

        directory = run_stage(self.out, stage, key, build, label=profile.name)

        return key, os.path.join(directory, CHECKPOINT)

    def train_target(self, target: TargetConfig) -> Tuple[str, str]:
        profile = target.profile
        train = target.train.model_copy(update={'seed': self.seed(TRAIN_TARGET, profile.name)})

        def train_fn(data):
            pipeline = build_pipeline(profile=profile, seed=train.seed, pyramid_seed=self.config.pyramid_seed)
            return train_pipeline(pipeline=pipeline, data=data, cfg=train)

        key, path = self._train(TRAIN_TARGET, profile, self.config.target_dataset, train, train_fn)
        self.artifacts[f"target:{profile.name}"] = path

        return key, path

    def train_surrogate(self, target: TargetConfig) -> Tuple[str, str]:
        profile = surrogate_profile(target.profile)
        train = self.config.surrogate_train.model_copy(update={'seed': self.seed(TRAIN_SURROGATE, profile.name)})

        def train_fn(data):
            return train_surrogate(profile=profile, data=data, cfg=train, pyramid_seed=self.config.pyramid_seed)

        key, path = self._train(TRAIN_SURROGATE, profile, self.config.surrogate_dataset, train, train_fn)
        self.artifacts[f"surrogate:{target.profile.name}"] = path

        return key, path

    def train_common(self, spec: CommonSurrogateSpec) -> Tuple[str, str]:
        profile = common_profile(spec=spec)
        train = self.config.surrogate_train.model_copy(update={'seed': self.seed(TRAIN_SURROGATE, profile.name)})

        def train_fn(data):
            return build_common_surrogate(spec=spec, data=data, cfg=train, pyramid_seed=self.config.pyramid_seed)

        key, path = self._train(TRAIN_SURROGATE, profile, self.config.surrogate_dataset, train, train_fn)
        self.artifacts[f"surrogate:{profile.name}"] = path

        return key, path

    def harvest(self, target: TargetConfig, target_key: str, target_path: str,
                active_bits: Optional[int] = None) -> Tuple[str, str]:
        data_key, data_dir = self.dataset(self.config.surrogate_dataset, target.profile.cover_shape)
        seed = self.seed(HARVEST, target.profile.name)
        key = stage_key(HARVEST, {'count': target.harvest_pairs, 'seed': seed, 'active_bits': active_bits},
                        [target_key, data_key])

        def build(directory: str) -> List[str]:
            pipeline, _ = load_checkpoint(target_path)
            pairs = harvest_pairs(target=pipeline, covers=load_dataset(data_dir), n=target.harvest_pairs, seed=seed,
                                  active_bits=active_bits)
            save_pairs(pairs=pairs, directory=directory)
            return [MANIFEST_NAME]

        directory = run_stage(self.out, HARVEST, key, build, label=target.profile.name)
        self.artifacts[f"pairs:{target.profile.name}"] = os.path.join(directory, MANIFEST_NAME)

        return key, directory

    def finetune(self, target: TargetConfig, surrogate_key: str, surrogate_path: str, harvest_key: str,
                 harvest_dir: str) -> Tuple[str, str]:
        budget = target.finetune.model_copy(update={'seed': self.seed(FINETUNE, target.profile.name)})
        key = stage_key(FINETUNE, {'budget': budget}, [surrogate_key, harvest_key])

        def build(directory: str) -> List[str]:
            surrogate, _ = load_checkpoint(surrogate_path)
            model, history = finetune_decoder(surrogate=surrogate, pairs=load_pairs(harvest_dir), budget=budget)
            save_checkpoint(pipeline=model, path=os.path.join(directory, CHECKPOINT))
            write_model(path=os.path.join(directory, HISTORY), model=history)
            return [CHECKPOINT, HISTORY]

        directory = run_stage(self.out, FINETUNE, key, build, label=target.profile.name)
        path = os.path.join(directory, CHECKPOINT)
        self.artifacts[f"finetuned:{target.profile.name}"] = path

        return key, path

    def finetune_common(self, spec: CommonSurrogateSpec, common_key: str, common_path: str,
                        harvests: Sequence[Tuple[TargetConfig, str, str]]) -> Tuple[str, str]:
        budget = self.config.common.finetune.model_copy(update={'seed': self.seed(FINETUNE, common_profile(spec).name)})
        key = stage_key(FINETUNE, {'budget': budget, 'spec': spec}, [common_key, *(key for _, key, _ in harvests)])

        def build(directory: str) -> List[str]:
            pooled = []
            for member, _, harvest_dir in harvests:
                pairs = load_pairs(harvest_dir)[:budget.num_pairs]
                capped, _ = cap_pairs(pairs=pairs, spec=spec, member=member.profile)
                pooled.extend(capped)
            surrogate, _ = load_checkpoint(common_path)
            model, history = finetune_common(surrogate=surrogate, pooled=pooled, budget=budget)
            save_checkpoint(pipeline=model, path=os.path.join(directory, CHECKPOINT))
            write_model(path=os.path.join(directory, HISTORY), model=history)
            return [CHECKPOINT, HISTORY]

        directory = run_stage(self.out, FINETUNE, key, build, label=common_profile(spec).name)
        path = os.path.join(directory, CHECKPOINT)
        self.artifacts[f"finetuned:{common_profile(spec).name}"] = path

        return key, path

    def attack_set(self, target: TargetConfig, target_key: str, target_path: str,
                   window_bits: Optional[int] = None) -> Tuple[str, str]:
        data_key, data_dir = self.dataset(self.config.attack_dataset, target.profile.cover_shape)
        seed = self.seed(ATTACK_SET, target.profile.name)
        key = stage_key(ATTACK_SET, {'count': target.attack_images, 'seed': seed, 'attack_seed': target.attack.seed,
                                     'window': window_bits}, [target_key, data_key])

        def build(directory: str) -> List[str]:
            pipeline, _ = load_checkpoint(target_path)
            marked = harvest_pairs(target=pipeline, covers=load_dataset(data_dir), n=target.attack_images,
                                   seed=derive_seed(seed, 'alpha'))
            betas = [
                draw_target(profile=pipeline.profile, alpha=pair.wm, window_bits=window_bits,
                            seed=derive_seed(seed, 'beta', target.attack.seed, index))
                for index, pair in enumerate(marked)
            ]
            save_pairs(pairs=marked, directory=os.path.join(directory, MARKED))
            save_watermarks(watermarks=betas, directory=os.path.join(directory, TARGETS))
            return [os.path.join(MARKED, MANIFEST_NAME), os.path.join(TARGETS, WATERMARK_INDEX)]

        directory = run_stage(self.out, ATTACK_SET, key, build, label=target.profile.name)
        self.artifacts[f"attack-set:{target.profile.name}"] = os.path.join(directory, MARKED, MANIFEST_NAME)

        return key, directory

    def attack(self, technique: str, cfg: AttackConfig, upstream: List[str], attack_set_dir: str,
               load: Callable[[], AttackFn]) -> StageOutput:
        key = stage_key(ATTACK, {'technique': technique, 'attack': cfg, 'pyramid_seed': self.config.pyramid_seed},
                        upstream)

        def build(directory: str) -> List[str]:
            image_dir = None
            if cfg.write_images:
                image_dir = os.path.join(directory, IMAGES)
                os.makedirs(image_dir, exist_ok=True)
            records = attack_images(attack_fn=load(), marked=load_pairs(os.path.join(attack_set_dir, MARKED)),
                                    betas=load_watermarks(os.path.join(attack_set_dir, TARGETS)),
                                    technique=technique, pyramid_seed=self.config.pyramid_seed, image_dir=image_dir,
                                    residual_gain=cfg.residual_gain)
            write_records(path=os.path.join(directory, RESULTS), records=records)
            return [RESULTS]

        directory = run_stage(self.out, ATTACK, key, build, label=technique)
        self.artifacts[f"attacks:{technique}"] = os.path.join(directory, RESULTS)

        return technique, key, directory

    def evaluate(self, outputs: Sequence[StageOutput], budgets: Dict[str, Tuple[int, int]]) -> str:
        key = stage_key(EVALUATE, {'budgets': budgets, 'pyramid_seed': self.config.pyramid_seed},
                        [key for _, key, _ in outputs])

        def build(directory: str) -> List[str]:
            records: List[AttackRecord] = []
            for _, _, attack_dir in outputs:
                records.extend(read_records(os.path.join(attack_dir, RESULTS)))
            result = aggregate(records=records, budgets=budgets, pyramid_seed=self.config.pyramid_seed)
            write_model(path=os.path.join(directory, AGGREGATE), model=result)
            return [AGGREGATE]

        directory = run_stage(self.out, EVALUATE, key, build)

        return os.path.join(directory, AGGREGATE)

    def whitebox(self) -> Tuple[List[StageOutput], Dict[str, Tuple[int, int]]]:
        outputs = []
        for target in self.config.targets:
            target_key, target_path = self.train_target(target)
            if not self.reaches(ATTACK_SET):
                continue
            set_key, set_dir = self.attack_set(target, target_key, target_path)
            if not self.reaches(ATTACK):
                continue
            load = partial(_whitebox_fn, target_path=target_path, cfg=target.attack)
            outputs.append(self.attack(target.profile.name, target.attack, [target_key, set_key], set_dir, load))

        return outputs, {}

    def blackbox_per_target(self) -> Tuple[List[StageOutput], Dict[str, Tuple[int, int]]]:
        outputs, budgets = [], {}
        for target in self.config.targets:
            target_key, target_path = self.train_target(target)
            if not self.reaches(TRAIN_SURROGATE):
                continue
            surrogate_key, surrogate_path = self.train_surrogate(target)
            if not self.reaches(HARVEST):
                continue
            harvest_key, harvest_dir = self.harvest(target, target_key, target_path)
            if not self.reaches(FINETUNE):
                continue
            finetune_key, finetuned_path = self.finetune(target, surrogate_key, surrogate_path, harvest_key,
                                                         harvest_dir)
            if not self.reaches(ATTACK_SET):
                continue
            set_key, set_dir = self.attack_set(target, target_key, target_path)
            if not self.reaches(ATTACK):
                continue
            load = partial(_blackbox_fn, surrogate_path=finetuned_path, target_path=target_path, cfg=target.attack)
            outputs.append(self.attack(target.profile.name, target.attack, [target_key, finetune_key, set_key],
                                       set_dir, load))
            budgets[target.profile.name] = (target.finetune.epochs,
                                            min(target.finetune.num_pairs, target.harvest_pairs))

        return outputs, budgets

    def blackbox_common(self) -> Tuple[List[StageOutput], Dict[str, Tuple[int, int]]]:
        common = self.config.common
        spec = CommonSurrogateSpec(io_shape=common.io_shape, wm_bits=common.wm_bits,
                                   member_targets=[target.profile for target in self.config.targets],
                                   padding_policy=common.padding_policy)

        trained = [(target, *self.train_target(target)) for target in self.config.targets]
        if not self.reaches(TRAIN_SURROGATE):
            return [], {}
        common_key, common_path = self.train_common(spec)
        if not self.reaches(HARVEST):
            return [], {}
        harvests = []
        for target, target_key, target_path in trained:
            harvest_key, harvest_dir = self.harvest(target, target_key, target_path, active_bits=common.wm_bits)
            harvests.append((target, harvest_key, harvest_dir))
        if not self.reaches(FINETUNE):
            return [], {}
        finetune_key, finetuned_path = self.finetune_common(spec, common_key, common_path, harvests)
        if not self.reaches(ATTACK_SET):
            return [], {}

        pooled = pooled_pairs(self.config)
        outputs, budgets = [], {}
        for target, target_key, target_path in trained:
            mapping = bit_mapping(spec=spec, member=target.profile)
            set_key, set_dir = self.attack_set(target, target_key, target_path, window_bits=mapping.window)
            if not self.reaches(ATTACK):
                continue
            load = partial(_blackbox_fn, surrogate_path=finetuned_path, target_path=target_path, cfg=common.attack,
                           mapping=mapping)
            outputs.append(self.attack(target.profile.name, common.attack, [target_key, finetune_key, set_key],
                                       set_dir, load))
            budgets[target.profile.name] = (common.finetune.epochs, pooled)

        return outputs, budgets


def pooled_pairs(config: ExperimentConfig) -> int:
    """Pairs the common surrogate is fine-tuned on: up to num_pairs from every member's harvest."""
    return sum(min(config.common.finetune.num_pairs, target.harvest_pairs) for target in config.targets)


def _whitebox_fn(target_path: str, cfg: AttackConfig) -> AttackFn:
    target, _ = load_checkpoint(target_path)

    def attack_fn(W: Image, alpha: Watermark, beta: Watermark) -> AttackResult:
        return attack_whitebox(target=target, W=W, alpha=alpha, beta=beta, cfg=cfg)

    return attack_fn


def _blackbox_fn(surrogate_path: str, target_path: str, cfg: AttackConfig,
                 mapping: Optional[BitMapping] = None) -> AttackFn:
    surrogate, _ = load_checkpoint(surrogate_path)
    target, _ = load_checkpoint(target_path)

    def attack_fn(W: Image, alpha: Watermark, beta: Watermark) -> AttackResult:
        return attack_blackbox(surrogate=surrogate, target=target, W=W, beta=beta, cfg=cfg, alpha=alpha,
                               mapping=mapping)

    return attack_fn


MODES: Dict[Mode, Callable[[Experiment], Tuple[List[StageOutput], Dict[str, Tuple[int, int]]]]] = {
    Mode.whitebox: Experiment.whitebox,
    Mode.blackbox_per_target: Experiment.blackbox_per_target,
    Mode.blackbox_common: Experiment.blackbox_common,
}


def effective_config(config: ExperimentConfig) -> ExperimentConfig:
    return config if config.scale == 1.0 else apply_scale(config=config, factor=config.scale)


def run(config: ExperimentConfig, until: Optional[str] = None) -> RunManifest:
    """
    Executes the mode's stage graph, skipping stages whose outputs already exist under the same key, and
    writes report.csv and manifest.json to the output directory.
    """
    started_at = datetime.now(timezone.utc)
    out = output_dir(config)
    check_until(until=until, graph=GRAPHS[config.mode])
    os.makedirs(out, exist_ok=True)

    experiment = Experiment(config=effective_config(config), out=out, until=until)
    logger.info("Running '%s' (%s) in %s", config.name, config.mode.value, out)
    outputs, budgets = MODES[config.mode](experiment)

    if outputs and experiment.reaches(EVALUATE):
        source = experiment.evaluate(outputs=outputs, budgets=budgets)
        aggregate_path = os.path.join(out, AGGREGATE)
        write_model(path=aggregate_path, model=read_model(path=source, model=AggregateReport))
        experiment.artifacts[AGGREGATE_ARTIFACT] = aggregate_path

    manifest = RunManifest(config_hash=config_hash(config), config=config.model_dump(mode='json'),
                           artifacts=experiment.artifacts, started_at=started_at,
                           finished_at=datetime.now(timezone.utc), version=__version__)
    if AGGREGATE_ARTIFACT in manifest.artifacts and experiment.reaches(REPORT):
        manifest.artifacts['report'] = report(manifest=manifest, report_format=ReportFormat.csv)

    write_model(path=os.path.join(out, MANIFEST), model=manifest)
    logger.info("Run '%s' finished with %d artifacts", config.name, len(manifest.artifacts))

    return manifest


def report(manifest: RunManifest, report_format: ReportFormat = ReportFormat.csv) -> str:
    """Renders the run's aggregate next to it as report.csv or report.txt and returns the path."""
    path = manifest.artifacts.get(AGGREGATE_ARTIFACT)
    if path is None or not os.path.isfile(path):
        raise ReportError("The run manifest lists no aggregate results; run the experiment through 'evaluate' first.")
    result = read_model(path=path, model=AggregateReport)

    if report_format == ReportFormat.csv:
        target, text = os.path.join(os.path.dirname(path), 'report.csv'), to_csv(result)
    else:
        target, text = os.path.join(os.path.dirname(path), 'report.txt'), to_text_table(result)
    write_text(path=target, text=text)

    return target


def load_manifest(out: str) -> RunManifest:
    path = os.path.join(out, MANIFEST)
    if not os.path.isfile(path):
        raise ReportError(f"No run manifest in {out}; the run has not finished.")

    return read_model(path=path, model=RunManifest)
