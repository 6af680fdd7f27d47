"""Training loop for pseudo-domain (single source) and real multi-domain runs.

In ``pmdg`` mode every source mini-batch is expanded into K pseudo-domain
batches before the algorithm update. In ``mdg`` mode each step draws one
batch from every real source domain instead. Validation uses a held-out
split of the training domain(s), never the targets, and never sees the
default augmentation or any pseudo-domain transform.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from pmdg.algorithms import build_algorithm
from pmdg.data import (
    DefaultAugment,
    DomainDataset,
    MiniBatch,
    Normalizer,
    eval_batches,
    make_minibatches,
    split_in_domain,
)
from pmdg.errors import ConfigError
from pmdg.models import Model, ModelSpec, build_model
from pmdg.transforms import apply_set, make_transform_set

MODES = ("pmdg", "mdg")


def derive_seed(seed: int, purpose: str) -> int:
    """Independent sub-seed for one consumer of randomness in a run."""
    tag = int.from_bytes(purpose.encode(), "little") % (2**32)
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


@dataclass
class TrainConfig:
    source_domains: list[str] = field(default_factory=list)
    mode: str = "pmdg"
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    eval_every: int = 50
    transforms: list[str] = field(default_factory=lambda: ["org"])
    transform_params: dict = field(default_factory=dict)
    algorithm: str = "erm"
    hparams: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    holdout_fraction: float = 0.2
    steps: int | None = None
    augment: bool = True

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"must be one of {MODES}", key="mode")
        if self.epochs < 0:
            raise ConfigError("must be >= 0", key="train.epochs")
        if self.batch_size < 2:
            raise ConfigError("must be >= 2", key="train.batch_size")
        if self.eval_every < 1:
            raise ConfigError("must be >= 1", key="train.eval_every")
        if self.steps is not None and self.steps < 0:
            raise ConfigError("must be >= 0", key="train.steps")
        if self.mode == "pmdg" and len(self.source_domains) != 1:
            raise ConfigError("pmdg mode needs exactly one source domain", key="source")
        if self.mode == "mdg" and len(self.source_domains) < 2:
            raise ConfigError("mdg mode needs at least two source domains", key="source")
        if self.mode == "pmdg" and not self.transforms:
            raise ConfigError("empty transform set", key="transforms")


@dataclass
class Checkpoint:
    step: int
    val_accuracy: float
    state: dict | None = field(default=None, repr=False, compare=False)


@dataclass
class TrainLog:
    events: list[dict] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)
    selected: Checkpoint | None = None
    train_counts: dict[str, int] = field(default_factory=dict)
    val_counts: dict[str, int] = field(default_factory=dict)
    total_steps: int = 0
    steps_per_epoch: int = 0
    transform_calls: int = 0
    augmented_images: int = 0

    def write_jsonl(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")
        return path

    def losses(self) -> list[float]:
        return [ev["total"] for ev in self.events]


def evaluate(model: Model, ds: DomainDataset, domains: list[str] | None = None,
             batch_size: int = 256, normalizer: Normalizer | None = None) -> dict[str, float]:
    """Argmax accuracy per requested domain, in eval mode, without augmentation."""
    domains = list(ds.domains) if domains is None else list(domains)
    was_training = model.training
    model.eval()
    out = {}
    try:
        with torch.no_grad():
            for d in domains:
                sub = ds.domain_subset([d])
                if len(sub) == 0:
                    raise ConfigError(f"domain {d!r} has no examples", key="targets")
                correct = 0
                for batch in eval_batches(sub, batch_size, normalizer):
                    logits = model(batch.images.to(_dtype(model)))
                    correct += int((logits.argmax(1) == batch.labels).sum())
                out[d] = correct / len(sub)
    finally:
        model.train(was_training)
    return out


def pooled_accuracy(model: Model, ds: DomainDataset, normalizer: Normalizer | None = None) -> float:
    accs = evaluate(model, ds, normalizer=normalizer)
    counts = ds.domain_counts()
    return sum(accs[d] * counts[d] for d in accs) / len(ds)


def select_checkpoint(log: TrainLog | list[Checkpoint]) -> Checkpoint:
    """Highest validation accuracy; the earliest step wins ties."""
    cps = log.checkpoints if isinstance(log, TrainLog) else list(log)
    if not cps:
        raise ValueError("no evaluations logged")
    best = cps[0]
    for cp in cps[1:]:
        if cp.val_accuracy > best.val_accuracy:
            best = cp
    return best


def _dtype(model: Model) -> torch.dtype:
    return next(model.parameters()).dtype


def _cycle(ds: DomainDataset, batch_size: int, seed: int, augment) -> Iterator[MiniBatch]:
    epoch = 0
    while True:
        yield from make_minibatches(ds, batch_size, seed, epoch, augment)
        epoch += 1


def train(cfg: TrainConfig, data: DomainDataset, model: Model | None = None) -> tuple[Model, TrainLog]:
    """Train on ``cfg.source_domains`` of ``data`` and return the best-val model."""
    cfg.validate()
    missing = [d for d in cfg.source_domains if d not in data.domains]
    if missing:
        raise ConfigError(f"source domains {missing} not in dataset {list(data.domains)}",
                          key="source")
    source = data.domain_subset(cfg.source_domains)
    split = split_in_domain(source, cfg.holdout_fraction, derive_seed(cfg.seed, "split"))
    if model is None:
        spec = ModelSpec.from_dict({"num_classes": data.num_classes,
                                    "input_shape": tuple(data.image_shape), **cfg.model})
        model = build_model(spec, derive_seed(cfg.seed, "model"))
    augment = DefaultAugment() if cfg.augment else False
    batch_seed = derive_seed(cfg.seed, "batches")

    log = TrainLog(train_counts=split.train.domain_counts(), val_counts=split.val.domain_counts())
    if cfg.mode == "pmdg":
        tset = make_transform_set(cfg.transforms, derive_seed(cfg.seed, "transforms"),
                                  num_classes=data.num_classes, params=cfg.transform_params)
        num_domains = tset.K
        log.steps_per_epoch = len(split.train) // cfg.batch_size
        batches = _cycle(split.train, cfg.batch_size, batch_seed, augment)

        def next_step():
            return apply_set(tset, next(batches))
    else:
        tset = None
        per_domain = [split.train.domain_subset([d]) for d in cfg.source_domains]
        num_domains = len(per_domain)
        log.steps_per_epoch = min(len(d) // cfg.batch_size for d in per_domain)
        iters = [_cycle(d, cfg.batch_size, derive_seed(batch_seed, name), augment)
                 for d, name in zip(per_domain, cfg.source_domains)]

        def next_step():
            return [next(it) for it in iters]

    alg = build_algorithm(cfg.algorithm, model, cfg.hparams, num_domains=num_domains,
                          seed=derive_seed(cfg.seed, "algorithm"))
    total = cfg.steps if cfg.steps is not None else cfg.epochs * log.steps_per_epoch
    log.total_steps = total
    if total > 0 and log.steps_per_epoch == 0:
        raise ConfigError("training split smaller than one batch", key="train.batch_size")

    best: Checkpoint | None = None
    for step in range(1, total + 1):
        report = alg.update(next_step())
        event = {"step": step, "task_loss": report.task_loss, "penalty": report.penalty,
                 "total": report.total}
        if step % cfg.eval_every == 0 or step == total:
            acc = pooled_accuracy(model, split.val)
            event["val_accuracy"] = acc
            cp = Checkpoint(step, acc)
            log.checkpoints.append(cp)
            if best is None or acc > best.val_accuracy:
                best = Checkpoint(step, acc, copy.deepcopy(model.state_dict()))
        log.events.append(event)

    if tset is not None:
        log.transform_calls = sum(op.calls for op in tset.ops)
    log.augmented_images = augment.images_seen if augment else 0
    if log.checkpoints:
        log.selected = select_checkpoint(log)
        assert best is not None and best.step == log.selected.step
        model.load_state_dict(best.state)
    model.eval()
    return model, log


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
