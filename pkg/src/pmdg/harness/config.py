"""Experiment configuration: a JSON tree, validated and resolved to defaults."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from pmdg.algorithms import ALGORITHMS, NOT_IN_SCOPE, resolve_hparams
from pmdg.data import DomainDataset, SyntheticShiftSpec, generate_synthetic, load_image_folder
from pmdg.errors import ConfigError
from pmdg.trainer import MODES, TrainConfig
from pmdg.transforms import REGISTRY

TOP_LEVEL_KEYS = ("dataset", "source", "targets", "mode", "algorithm", "hparams", "transforms",
                  "trials", "train", "exclusions")

TRAIN_DEFAULTS = {
    "epochs": 5,
    "batch_size": 32,
    "seed": 0,
    "eval_every": 50,
    "holdout_fraction": 0.2,
    "steps": None,
    "augment": True,
    "samples": None,
    "model": {},
    "transform_params": {},
}


def _as_list(value, key: str) -> list[str]:
    if isinstance(value, str):
        return [value]
    if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
        raise ConfigError("must be a string or list of strings", key=key)
    return list(value)


@dataclass
class ExperimentConfig:
    dataset: dict
    source: list[str]
    targets: list[str]
    mode: str = "pmdg"
    algorithm: str = "erm"
    hparams: dict = field(default_factory=dict)
    transforms: list[str] = field(default_factory=lambda: ["org"])
    trials: int = 3
    train: dict = field(default_factory=dict)
    exclusions: dict[str, list[str]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object", key="<root>")
        unknown = sorted(set(d) - set(TOP_LEVEL_KEYS))
        if unknown:
            raise ConfigError(f"unknown top-level keys {unknown}; expected {list(TOP_LEVEL_KEYS)}",
                              key=unknown[0])
        for key in ("dataset", "source", "targets"):
            if key not in d:
                raise ConfigError("required", key=key)
        d = copy.deepcopy(d)
        train = dict(TRAIN_DEFAULTS)
        for k, v in (d.get("train") or {}).items():
            if k not in TRAIN_DEFAULTS:
                raise ConfigError(f"unknown key; known: {sorted(TRAIN_DEFAULTS)}", key=f"train.{k}")
            train[k] = v
        cfg = cls(
            dataset=d["dataset"],
            source=_as_list(d["source"], "source"),
            targets=_as_list(d["targets"], "targets"),
            mode=d.get("mode", "pmdg"),
            algorithm=d.get("algorithm", "erm"),
            hparams=resolve_hparams(d.get("hparams")),
            transforms=_as_list(d.get("transforms", ["org"]), "transforms"),
            trials=d.get("trials", 3),
            train=train,
            exclusions={k: _as_list(v, f"exclusions.{k}")
                        for k, v in (d.get("exclusions") or {}).items()},
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path, overrides: list[str] | None = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}", key="--config") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}", key="--config") from None
        if overrides:
            raw = apply_overrides(cls.from_dict(raw).to_dict(), overrides)
        return cls.from_dict(raw)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"must be one of {list(MODES)}", key="mode")
        name = str(self.algorithm).lower()
        if name in NOT_IN_SCOPE:
            raise ConfigError(f"{self.algorithm!r} not in scope; see registry {list(ALGORITHMS)}",
                              key="algorithm")
        if name not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm; registry: {list(ALGORITHMS)}", key="algorithm")
        if not isinstance(self.trials, int) or isinstance(self.trials, bool) or self.trials < 1:
            raise ConfigError("must be an integer >= 1", key="trials")
        if not self.targets:
            raise ConfigError("at least one target domain required", key="targets")
        if self.mode == "pmdg" and len(self.source) != 1:
            raise ConfigError("pmdg mode needs exactly one source domain", key="source")
        if self.mode == "mdg" and len(self.source) < 2:
            raise ConfigError("mdg mode needs at least two source domains", key="source")
        if self.mode == "pmdg" and not self.transforms:
            raise ConfigError("empty transform set", key="transforms")
        for i, t in enumerate(self.transforms):
            if t not in REGISTRY:
                raise ConfigError(f"unknown transform {t!r}; registered: {list(REGISTRY)}",
                                  key=f"transforms[{i}]")
        for target, names in self.exclusions.items():
            for t in names:
                if t not in REGISTRY:
                    raise ConfigError(f"unknown transform {t!r}; registered: {list(REGISTRY)}",
                                      key=f"exclusions.{target}")
        samples = self.train.get("samples")
        if samples is not None and (not isinstance(samples, int) or samples < 1):
            raise ConfigError("must be a positive integer or null", key="train.samples")
        if not isinstance(self.dataset, dict) or len(self.dataset) != 1 or \
                next(iter(self.dataset)) not in ("synthetic", "folder"):
            raise ConfigError('must be {"synthetic": {...}} or {"folder": {...}}', key="dataset")
        if "synthetic" in self.dataset:
            spec = synthetic_spec(self.dataset["synthetic"])
            names = [d.name for d in spec.domains]
            for key, doms in (("source", self.source), ("targets", self.targets)):
                missing = [d for d in doms if d not in names]
                if missing:
                    raise ConfigError(f"domains {missing} not in dataset {names}", key=key)
        self.train_config(self.source, self.transforms, 0).validate()

    def to_dict(self) -> dict:
        return {
            "dataset": copy.deepcopy(self.dataset),
            "source": list(self.source),
            "targets": list(self.targets),
            "mode": self.mode,
            "algorithm": self.algorithm,
            "hparams": copy.deepcopy(self.hparams),
            "transforms": list(self.transforms),
            "trials": self.trials,
            "train": copy.deepcopy(self.train),
            "exclusions": {k: list(v) for k, v in self.exclusions.items()},
        }

    @property
    def seed(self) -> int:
        return int(self.train["seed"])

    def effective_transforms(self, target: str) -> list[str]:
        """The transform set with this target's exclusions dropped."""
        drop = set(self.exclusions.get(target, ()))
        return [t for t in self.transforms if t not in drop]

    def train_config(self, source: list[str], transforms: list[str], seed: int,
                     steps: int | None = None) -> TrainConfig:
        t = self.train
        return TrainConfig(
            source_domains=list(source), mode=self.mode, epochs=t["epochs"],
            batch_size=t["batch_size"], seed=seed, eval_every=t["eval_every"],
            transforms=list(transforms), transform_params=copy.deepcopy(t["transform_params"]),
            algorithm=self.algorithm.lower(), hparams=copy.deepcopy(self.hparams),
            model=copy.deepcopy(t["model"]), holdout_fraction=t["holdout_fraction"],
            steps=t["steps"] if steps is None else steps, augment=t["augment"],
        )


def synthetic_spec(d: dict) -> SyntheticShiftSpec:
    if not isinstance(d, dict):
        raise ConfigError("must be an object", key="dataset.synthetic")
    try:
        return SyntheticShiftSpec.from_dict(d)
    except ConfigError as exc:
        raise ConfigError(exc.message, key=f"dataset.synthetic.{exc.key}" if exc.key else
                          "dataset.synthetic") from None


def build_dataset(dataset: dict) -> DomainDataset:
    if "synthetic" in dataset:
        return generate_synthetic(synthetic_spec(dataset["synthetic"]))
    opts = dataset["folder"]
    if not isinstance(opts, dict) or "root" not in opts:
        raise ConfigError("needs a 'root' path", key="dataset.folder")
    return load_image_folder(opts["root"], image_size=opts.get("image_size", 32))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# dotted-key overrides


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(tree: dict, key: str, value) -> None:
    """Set an existing dotted key in place. List elements are addressed by index."""
    parts = key.strip().split(".")
    node = tree
    for depth, part in enumerate(parts):
        last = depth == len(parts) - 1
        where = ".".join(parts[:depth + 1])
        if isinstance(node, list):
            if not part.isdigit() or int(part) >= len(node):
                raise ConfigError("no such list index", key=where)
            part = int(part)
        elif isinstance(node, dict):
            if part not in node:
                raise ConfigError("no such config key", key=where)
        else:
            raise ConfigError("cannot descend into a scalar", key=where)
        if last:
            node[part] = value
        else:
            node = node[part]


def apply_overrides(tree: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides to a copy of ``tree``; every key must exist.

    Values parse as JSON when they can and fall back to plain strings, so
    ``train.epochs=3`` sets an int and ``algorithm=coral`` a string.
    """
    tree = copy.deepcopy(tree)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", key="--override")
        key, _, text = item.partition("=")
        set_path(tree, key, parse_value(text))
    return tree
