"""Multi-domain training algorithms sharing one ``update(batches)`` contract.

Each algorithm receives K mini-batches (real domains or pseudo-domains; it
cannot tell which) and takes one optimizer step on its total loss.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.autograd as autograd

from pmdg.data import MiniBatch
from pmdg.errors import ConfigError
from pmdg.models import Model

ALGORITHMS = ("erm", "groupdro", "irm", "vrex", "coral", "mmd", "sd", "mixup_inter")
NOT_IN_SCOPE = ("arm", "cdann", "dann", "eqrm", "mldg", "mtl", "ridg", "selfreg",
                "sagnet", "rsc")

DEFAULT_HPARAMS = {
    "lr": 0.01,
    "momentum": 0.9,
    "weight_decay": 1e-4,
    "bn_mode": "sequential",
    "irm_lambda": 100.0,
    "irm_anneal_iters": 500,
    "irm_mode": "split_half",
    "vrex_lambda": 10.0,
    "vrex_anneal_iters": 500,
    "coral_lambda": 1.0,
    "mmd_lambda": 1.0,
    "mmd_gammas": [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0],
    "sd_lambda": 0.1,
    "groupdro_eta": 0.01,
    "mixup_alpha": 0.2,
}
BN_MODES = ("sequential", "joint", "frozen_pseudo")


# --------------------------------------------------------------------------
# losses and penalties


def soft_cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of ``-sum_c t_c log softmax(logits)_c``.

    ``targets`` are class indices ``[b]`` or distributions ``[b, C]``. A
    one-hot soft target gives the same value as the hard index.
    """
    if torch.isnan(logits).any():
        raise ValueError("NaN logits")
    logp = torch.log_softmax(logits, dim=1)
    if targets.ndim == 1:
        return -logp.gather(1, targets[:, None]).squeeze(1).mean()
    # zero-weight classes must not contribute even where log p = -inf
    terms = torch.where(targets > 0, targets * logp, torch.zeros_like(logp))
    return -terms.sum(1).mean()


def coral_penalty(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean squared gap of feature means plus mean squared gap of covariances."""
    if len(a) < 2 or len(b) < 2:
        raise ValueError("CORAL needs at least 2 samples per domain")
    mean_a, mean_b = a.mean(0, keepdim=True), b.mean(0, keepdim=True)
    ca, cb = a - mean_a, b - mean_b
    cov_a = ca.t() @ ca / (len(a) - 1)
    cov_b = cb.t() @ cb / (len(b) - 1)
    return (mean_a - mean_b).pow(2).mean() + (cov_a - cov_b).pow(2).mean()


def _gaussian_kernel(x: torch.Tensor, y: torch.Tensor, gammas) -> torch.Tensor:
    d = (x[:, None, :] - y[None, :, :]).pow(2).sum(-1)
    return sum(torch.exp(-g * d) for g in gammas)


def mmd_penalty(a: torch.Tensor, b: torch.Tensor, gammas=(1.0,)) -> torch.Tensor:
    """Biased squared MMD with a sum of Gaussian kernels ``exp(-gamma |x - y|^2)``."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("MMD needs non-empty feature sets")
    kxx = _gaussian_kernel(a, a, gammas).mean()
    kyy = _gaussian_kernel(b, b, gammas).mean()
    kxy = _gaussian_kernel(a, b, gammas).mean()
    return kxx + kyy - 2 * kxy


def _scale_grad(logits, targets, create_graph=True):
    scale = torch.ones((), dtype=logits.dtype, requires_grad=True)
    loss = soft_cross_entropy(logits * scale, targets)
    return autograd.grad(loss, [scale], create_graph=create_graph)[0]


def irm_penalty(logits: torch.Tensor, targets: torch.Tensor, mode: str = "split_half") -> torch.Tensor:
    """IRMv1: gradient of the risk w.r.t. a dummy logit multiplier at 1.

    ``plain`` squares the full-batch gradient; ``split_half`` multiplies the
    gradients of the even and odd halves (unbiased estimate of the square).
    """
    if mode == "plain":
        return _scale_grad(logits, targets).pow(2)
    if mode != "split_half":
        raise ConfigError(f"unknown IRM mode {mode!r}", key="irm_mode")
    if len(logits) < 2:
        raise ValueError("split-half IRM penalty needs a batch of at least 2")
    g1 = _scale_grad(logits[::2], targets[::2])
    g2 = _scale_grad(logits[1::2], targets[1::2])
    return g1 * g2


def vrex_penalty(risks: torch.Tensor) -> torch.Tensor:
    """Population variance of per-domain risks."""
    if len(risks) < 2:
        raise ValueError("VREx needs at least 2 domains")
    return (risks - risks.mean()).pow(2).mean()


def sd_penalty(logits: torch.Tensor) -> torch.Tensor:
    return logits.pow(2).mean()


def groupdro_reweight(q: torch.Tensor, losses: torch.Tensor, eta: float) -> torch.Tensor:
    """Exponentiated-gradient step ``q_k <- q_k exp(eta * loss_k)``, renormalized.

    Done in log space so long runs cannot overflow.
    """
    logq = torch.log(q.clamp_min(1e-300)) + eta * losses.detach().to(q.dtype)
    return torch.softmax(logq, dim=0)


def random_domain_pairs(k: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Pairs each domain with its successor in a random cyclic order."""
    perm = rng.permutation(k)
    return [(int(perm[i]), int(perm[(i + 1) % k])) for i in range(k)]


def mixup_inter_update_loss(model: nn.Module, batches: list[MiniBatch], alpha: float,
                            rng: np.random.Generator,
                            lams: list[float] | None = None,
                            pairs: list[tuple[int, int]] | None = None) -> tuple[torch.Tensor, list[float]]:
    """Mean over cross-domain pairs of the lambda-weighted two-target loss on blended inputs."""
    if len(batches) < 2:
        raise ValueError("inter-domain mixup requires >= 2 domains")
    if pairs is None:
        pairs = random_domain_pairs(len(batches), rng)
    total = 0.0
    per_pair = []
    for p, (i, j) in enumerate(pairs):
        lam = float(rng.beta(alpha, alpha)) if lams is None else float(lams[p])
        bi, bj = batches[i], batches[j]
        logits = model(lam * bi.images + (1.0 - lam) * bj.images)
        loss = lam * soft_cross_entropy(logits, bi.labels) + \
            (1.0 - lam) * soft_cross_entropy(logits, bj.labels)
        per_pair.append(float(loss.detach()))
        total = total + loss
    return total / len(pairs), per_pair


# --------------------------------------------------------------------------
# algorithms


@dataclass
class LossReport:
    task_loss: float
    penalty: float
    total: float
    per_domain_losses: list[float]
    penalty_weight: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class Algorithm:
    """Base class. Subclasses implement :meth:`objective`.

    ``objective`` is side-effect free apart from RNG draws and BN running
    statistics; :meth:`update` adds the optimizer step and commits any
    algorithm state (GroupDRO weights, step counter).
    """

    name = "base"
    pairwise = False

    def __init__(self, model: Model, hparams: dict | None = None, num_domains: int | None = None,
                 seed: int = 0):
        self.model = model
        self.hparams = resolve_hparams(hparams)
        self.num_domains = num_domains
        self.num_classes = model.spec.num_classes
        self.rng = np.random.default_rng([seed, 4242])
        self.step = 0
        self.optimizer = self._make_optimizer()

    def _make_optimizer(self):
        h = self.hparams
        return torch.optim.SGD(self.model.parameters(), lr=h["lr"], momentum=h["momentum"],
                               weight_decay=h["weight_decay"])

    # forward passes honour the batch-norm policy for K batches
    def forward(self, batches: list[MiniBatch]) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
        mode = self.hparams["bn_mode"]
        model = self.model
        if mode == "joint":
            sizes = [len(b) for b in batches]
            feats = model.featurize(torch.cat([b.images for b in batches]))
            logits = model.classifier(feats)
            return list(feats.split(sizes)), list(logits.split(sizes))
        feats, logits = [], []
        for k, b in enumerate(batches):
            if mode == "frozen_pseudo" and k > 0:
                with _bn_momentum(model, 0.0):
                    f = model.featurize(b.images)
            else:
                f = model.featurize(b.images)
            feats.append(f)
            logits.append(model.classifier(f))
        return feats, logits

    def check_domains(self, batches: list[MiniBatch]) -> None:
        if not batches:
            raise ValueError("no mini-batches")
        if self.pairwise and len(batches) < 2:
            raise ValueError(f"{self.name} requires ≥2 domains")

    def objective(self, batches: list[MiniBatch]) -> tuple[torch.Tensor, LossReport]:
        raise NotImplementedError

    def commit(self) -> None:
        pass

    def update(self, batches: list[MiniBatch]) -> LossReport:
        self.check_domains(batches)
        self.model.train()
        self.before_step()
        total, report = self.objective(batches)
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        self.commit()
        self.step += 1
        return report

    def before_step(self) -> None:
        pass

    def predict(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)

    def _risks(self, logits, batches) -> list[torch.Tensor]:
        return [soft_cross_entropy(z, b.labels) for z, b in zip(logits, batches)]


class _bn_momentum:
    def __init__(self, model, momentum):
        self.bns = [m for m in model.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
        self.momentum = momentum

    def __enter__(self):
        self.saved = [m.momentum for m in self.bns]
        for m in self.bns:
            m.momentum = self.momentum

    def __exit__(self, *exc):
        for m, v in zip(self.bns, self.saved):
            m.momentum = v


def _scalar(x) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def _report(task, penalty, total, risks, weight=0.0, **extra) -> LossReport:
    return LossReport(_scalar(task), _scalar(penalty), _scalar(total),
                      [_scalar(r) for r in risks], float(weight), extra)


class ERM(Algorithm):
    name = "erm"

    def objective(self, batches):
        self.check_domains(batches)
        _, logits = self.forward(batches)
        risks = self._risks(logits, batches)
        task = torch.stack(risks).mean()
        return task, _report(task, 0.0, task, risks)


class GroupDRO(Algorithm):
    name = "groupdro"

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.q = None if self.num_domains is None else \
            torch.full((self.num_domains,), 1.0 / self.num_domains, dtype=torch.float64)
        self._q_next = None

    def objective(self, batches):
        self.check_domains(batches)
        if self.q is None or len(self.q) != len(batches):
            self.q = torch.full((len(batches),), 1.0 / len(batches), dtype=torch.float64)
        _, logits = self.forward(batches)
        risks = torch.stack(self._risks(logits, batches))
        q = groupdro_reweight(self.q, risks, self.hparams["groupdro_eta"])
        self._q_next = q
        total = (q.to(risks.dtype) * risks).sum()
        task = risks.mean()
        return total, _report(task, total - task, total, risks, 1.0, q=q.tolist())

    def commit(self):
        self.q = self._q_next


class IRM(Algorithm):
    name = "irm"

    def penalty_weight(self) -> float:
        h = self.hparams
        return h["irm_lambda"] if self.step >= h["irm_anneal_iters"] else 1.0

    def before_step(self):
        if self.step == self.hparams["irm_anneal_iters"]:
            # the penalty weight jumps here; stale momentum would overshoot
            self.optimizer = self._make_optimizer()

    def objective(self, batches):
        self.check_domains(batches)
        _, logits = self.forward(batches)
        risks = self._risks(logits, batches)
        task = torch.stack(risks).mean()
        pen = torch.stack([irm_penalty(z, b.labels, self.hparams["irm_mode"])
                           for z, b in zip(logits, batches)]).mean()
        w = self.penalty_weight()
        total = task + w * pen
        return total, _report(task, pen, total, risks, w)


class VREx(Algorithm):
    name = "vrex"
    pairwise = True

    def penalty_weight(self) -> float:
        h = self.hparams
        return h["vrex_lambda"] if self.step >= h["vrex_anneal_iters"] else 1.0

    def before_step(self):
        if self.step == self.hparams["vrex_anneal_iters"]:
            self.optimizer = self._make_optimizer()

    def objective(self, batches):
        self.check_domains(batches)
        _, logits = self.forward(batches)
        risks = torch.stack(self._risks(logits, batches))
        task = risks.mean()
        pen = vrex_penalty(risks)
        w = self.penalty_weight()
        total = task + w * pen
        return total, _report(task, pen, total, risks, w)


class _Alignment(Algorithm):
    pairwise = True
    weight_key = ""

    def pair_penalty(self, a, b):
        raise NotImplementedError

    def objective(self, batches):
        self.check_domains(batches)
        feats, logits = self.forward(batches)
        risks = self._risks(logits, batches)
        task = torch.stack(risks).mean()
        pairs = list(itertools.combinations(range(len(batches)), 2))
        pen = torch.stack([self.pair_penalty(feats[i], feats[j]) for i, j in pairs]).mean()
        w = self.hparams[self.weight_key]
        total = task + w * pen
        return total, _report(task, pen, total, risks, w)


class CORAL(_Alignment):
    name = "coral"
    weight_key = "coral_lambda"

    def pair_penalty(self, a, b):
        return coral_penalty(a, b)


class MMD(_Alignment):
    name = "mmd"
    weight_key = "mmd_lambda"

    def pair_penalty(self, a, b):
        return mmd_penalty(a, b, self.hparams["mmd_gammas"])


class SD(Algorithm):
    name = "sd"

    def objective(self, batches):
        self.check_domains(batches)
        _, logits = self.forward(batches)
        risks = self._risks(logits, batches)
        task = torch.stack(risks).mean()
        pen = torch.stack([sd_penalty(z) for z in logits]).mean()
        w = self.hparams["sd_lambda"]
        total = task + w * pen
        return total, _report(task, pen, total, risks, w)


class MixupInter(Algorithm):
    name = "mixup_inter"
    pairwise = True

    def objective(self, batches):
        self.check_domains(batches)
        loss, per_pair = mixup_inter_update_loss(self.model, batches, self.hparams["mixup_alpha"],
                                                 self.rng)
        return loss, _report(loss, 0.0, loss, per_pair)


_CLASSES = {cls.name: cls for cls in (ERM, GroupDRO, IRM, VREx, CORAL, MMD, SD, MixupInter)}


def resolve_hparams(hparams: dict | None) -> dict:
    out = dict(DEFAULT_HPARAMS)
    for key, value in (hparams or {}).items():
        if key not in DEFAULT_HPARAMS:
            raise ConfigError(f"unknown hyperparameter; known: {sorted(DEFAULT_HPARAMS)}",
                              key=f"hparams.{key}")
        out[key] = value
    if out["bn_mode"] not in BN_MODES:
        raise ConfigError(f"must be one of {BN_MODES}", key="hparams.bn_mode")
    if out["irm_mode"] not in ("plain", "split_half"):
        raise ConfigError("must be 'plain' or 'split_half'", key="hparams.irm_mode")
    return out


def build_algorithm(name: str, model: Model, hparams: dict | None = None,
                    num_domains: int | None = None, seed: int = 0) -> Algorithm:
    key = name.lower()
    if key in NOT_IN_SCOPE:
        raise ConfigError(f"{name!r} not in scope; see registry {list(ALGORITHMS)}", key="algorithm")
    if key not in _CLASSES:
        raise ConfigError(f"unknown algorithm {name!r}; registry: {list(ALGORITHMS)}", key="algorithm")
    return _CLASSES[key](model, hparams, num_domains=num_domains, seed=seed)
