"""Shared fixtures for the unit and acceptance tests."""

import numpy as np
import torch

from pmdg.algorithms import build_algorithm
from pmdg.data import DefaultAugment, MiniBatch, make_minibatches, split_in_domain
from pmdg.models import ModelSpec, build_model
from pmdg.trainer import TrainConfig, derive_seed

GRAD_HPARAMS = {
    # penalty weights chosen so every term moves the gradient noticeably
    "irm": {"irm_lambda": 10.0, "irm_anneal_iters": 0, "irm_mode": "split_half"},
    "vrex": {"vrex_lambda": 10.0, "vrex_anneal_iters": 0},
    "mmd": {"mmd_gammas": [0.1, 1.0]},
}


def tiny_model(kind="mlp", seed=0, classes=3, dtype=torch.float64):
    if kind == "mlp":
        spec = ModelSpec(kind="mlp", num_classes=classes, widths=[8], norm="none",
                         input_shape=(3, 4, 4))
    else:
        spec = ModelSpec(kind="small_cnn", num_classes=classes, feature_dim=4, widths=[3],
                         norm="none", input_shape=(3, 8, 8))
    return build_model(spec, seed).to(dtype)


def random_batches(k, b=6, shape=(3, 4, 4), classes=3, seed=0, dtype=torch.float64, soft=False):
    g = torch.Generator().manual_seed(seed)
    out = []
    for i in range(k):
        x = torch.randn(b, *shape, generator=g, dtype=dtype)
        if soft:
            y = torch.softmax(torch.randn(b, classes, generator=g, dtype=dtype), 1)
        else:
            y = torch.randint(0, classes, (b,), generator=g)
        out.append(MiniBatch(x, y, f"d{i}"))
    return out


def flat_params(model):
    return [p for p in model.parameters()]


def gradient_check(name, kind="mlp", k=3, eps=1e-6, seed=0, soft=False):
    """Return (analytic, numeric) flattened gradients of the total loss."""
    model = tiny_model(kind, seed)
    shape = model.spec.input_shape
    batches = random_batches(k, shape=shape, seed=seed + 1, soft=soft)
    alg = build_algorithm(name, model, GRAD_HPARAMS.get(name, {}), num_domains=k, seed=seed)
    state = alg.rng.bit_generator.state

    def total():
        alg.rng.bit_generator.state = state
        value, _ = alg.objective(batches)
        return value

    model.zero_grad()
    total().backward()
    analytic = torch.cat([p.grad.flatten() for p in flat_params(model)]).clone()
    numeric = []
    with torch.no_grad():
        for p in flat_params(model):
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                with torch.enable_grad():
                    up = total().item()
                flat[i] = old - eps
                with torch.enable_grad():
                    down = total().item()
                flat[i] = old
                numeric.append((up - down) / (2 * eps))
    return analytic.numpy(), np.array(numeric)


def relative_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def fake_record(algorithm="erm", transforms=("org",), accuracies=None, seed=0, mode="pmdg",
                protocol=None, source=("s",), sample_counts=None):
    """A RunRecord with only the fields reports look at filled in."""
    from pmdg.harness.records import RunRecord

    accuracies = {"t": 0.5} if accuracies is None else dict(accuracies)
    return RunRecord(
        record_id=f"{algorithm}-{'+'.join(transforms)}-{mode}:{seed}", config_digest="0" * 16,
        config={}, trial=seed, seed=seed, mode=mode, algorithm=algorithm,
        transforms=list(transforms), requested_transforms=list(transforms), K=len(transforms),
        source=list(source), targets=list(accuracies), accuracies=accuracies,
        val_accuracy=None, selected_step=None, sample_counts=dict(sample_counts or {}),
        train_counts={}, val_counts={}, steps=0, steps_per_epoch=0, final_loss=None,
        wall_time=0.0, protocol=dict(protocol or {}),
    )


def plain_erm_losses(cfg_: TrainConfig, data, steps):
    """Single-domain ERM written out by hand from the same seeds."""
    source = data.domain_subset(cfg_.source_domains)
    split = split_in_domain(source, cfg_.holdout_fraction, derive_seed(cfg_.seed, "split"))
    spec = ModelSpec.from_dict({"num_classes": len(data.class_names),
                                "input_shape": tuple(data.image_shape), **cfg_.model})
    model = build_model(spec, derive_seed(cfg_.seed, "model"))
    opt = torch.optim.SGD(model.parameters(), lr=0.01, momentum=0.9, weight_decay=1e-4)
    augment = DefaultAugment()
    seed = derive_seed(cfg_.seed, "batches")
    losses, epoch, queue = [], 0, []
    model.train()
    while len(losses) < steps:
        if not queue:
            queue = make_minibatches(split.train, cfg_.batch_size, seed, epoch, augment)
            epoch += 1
        b = queue.pop(0)
        logp = torch.log_softmax(model(b.images), dim=1)
        loss = -logp.gather(1, b.labels[:, None]).squeeze(1).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return losses


GOLDEN_TABLE = """\
| Method | art | photo | Avg |
|---|---|---|---|
| erm: org | 50.6 ± 0.6 | **61.0** ± 0.6 | 55.8 ± 0.6 |
| erm: org+rand_conv+rand_conv | **55.9** ± 0.6 | _60.1_ ± 0.6 | **58.0** ± 0.6 |
| coral: org+rand_conv+rand_conv | _55.3_ ± 0.6 | 58.1 ± 0.6 | _56.7_ ± 0.6 |
"""


def table_fixture():
    rows = [("erm", ["org"], 0.506, 0.610),
            ("erm", ["org", "rand_conv", "rand_conv"], 0.559, 0.601),
            ("coral", ["org", "rand_conv", "rand_conv"], 0.553, 0.581)]
    return [fake_record(alg, ts, {"art": art + d, "photo": photo + d}, seed=i)
            for alg, ts, art, photo in rows for i, d in enumerate((-0.01, 0.0, 0.01))]
