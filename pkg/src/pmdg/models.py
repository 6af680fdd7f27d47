"""Small featurizer + linear-head classifiers and checkpoint I/O."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from pmdg.errors import ConfigError

CHECKPOINT_VERSION = 1


@dataclass
class ModelSpec:
    kind: str = "small_cnn"
    num_classes: int = 2
    feature_dim: int = 128
    widths: list[int] = field(default_factory=lambda: [32, 64])
    norm: str = "batch"
    input_shape: tuple[int, int, int] = (3, 32, 32)

    def validate(self) -> None:
        if self.kind not in ("small_cnn", "mlp"):
            raise ConfigError(f"unknown model kind {self.kind!r}", key="model.kind")
        if self.num_classes < 2:
            raise ConfigError("must be >= 2", key="model.num_classes")
        if self.feature_dim < 2:
            raise ConfigError("must be >= 2", key="model.feature_dim")
        if self.norm not in ("batch", "none"):
            raise ConfigError("must be 'batch' or 'none'", key="model.norm")
        if any(w < 1 for w in self.widths):
            raise ConfigError("widths must be positive", key="model.widths")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc), key="model") from None
        spec.input_shape = tuple(spec.input_shape)
        spec.widths = list(spec.widths)
        spec.validate()
        return spec


def _conv_block(cin: int, cout: int, norm: str) -> list[nn.Module]:
    layers: list[nn.Module] = [nn.Conv2d(cin, cout, 3, padding=1, bias=norm == "none")]
    if norm == "batch":
        layers.append(nn.BatchNorm2d(cout))
    layers += [nn.ReLU(), nn.MaxPool2d(2)]
    return layers


class Model(nn.Module):
    """``predict(x) == classifier(featurize(x))``."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        c, h, w = spec.input_shape
        if spec.kind == "small_cnn":
            chans = [c, *spec.widths, spec.feature_dim]
            layers: list[nn.Module] = []
            for cin, cout in zip(chans[:-1], chans[1:]):
                layers += _conv_block(cin, cout, spec.norm)
            layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten()]
            self.feature_dim = spec.feature_dim
        else:
            layers = [nn.Flatten()]
            width = c * h * w
            for out in spec.widths:
                layers.append(nn.Linear(width, out))
                if spec.norm == "batch":
                    layers.append(nn.BatchNorm1d(out))
                layers.append(nn.ReLU())
                width = out
            self.feature_dim = width
        self.featurizer = nn.Sequential(*layers)
        self.classifier = nn.Linear(self.feature_dim, spec.num_classes)

    def featurize(self, x: torch.Tensor) -> torch.Tensor:
        if tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ConfigError(f"expected images of shape {self.spec.input_shape}, "
                              f"got {tuple(x.shape[1:])}", key="model.input_shape")
        return self.featurizer(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.featurize(x))

    predict = forward


def init_parameters(model: nn.Module, seed: int) -> None:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), for every weight and bias."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                fan_in = module.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                module.weight.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    module.bias.uniform_(-bound, bound, generator=gen)
            elif isinstance(module, (nn.BatchNorm1d, nn.BatchNorm2d)):
                module.reset_parameters()


def build_model(spec: ModelSpec, seed: int) -> Model:
    model = Model(spec)
    init_parameters(model, seed)
    return model


def featurize(model: Model, images: torch.Tensor) -> torch.Tensor:
    return model.featurize(images)


def predict(model: Model, images: torch.Tensor) -> torch.Tensor:
    return model(images)


def save_checkpoint(model: Model, path: str | Path, **meta) -> Path:
    """Write parameters, buffers and the ModelSpec; reload is bit-exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    spec = asdict(model.spec)
    spec["input_shape"] = list(spec["input_shape"])
    torch.save({"version": CHECKPOINT_VERSION, "spec": spec, "meta": meta,
                "state": model.state_dict()}, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[Model, dict]:
    blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {blob.get('version')}", key="checkpoint")
    model = Model(ModelSpec.from_dict(blob["spec"]))
    model.load_state_dict(blob["state"])
    return model, blob.get("meta", {})


def state_digest(model: nn.Module) -> str:
    """Hash of the exact parameter/buffer bytes; equal digests mean identical models."""
    h = hashlib.sha256()
    for name, t in model.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
