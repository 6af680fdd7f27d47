"""Experiment execution: single configs, the equal-data protocol and sweeps."""

from __future__ import annotations

import copy
import itertools
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from pmdg.data import DomainDataset, concat, subsample
from pmdg.errors import ConfigError, DataError
from pmdg.harness.config import (
    ExperimentConfig,
    apply_overrides,
    build_dataset,
    digest,
    set_path,
)
from pmdg.harness.records import RecordSink, RunRecord
from pmdg.trainer import derive_seed, evaluate, train

_cache: dict[str, DomainDataset] = {}
_cache_lock = threading.Lock()


def load_dataset(cfg: ExperimentConfig) -> DomainDataset:
    key = digest(cfg.dataset)
    with _cache_lock:
        if key not in _cache:
            _cache[key] = build_dataset(cfg.dataset)
        return _cache[key]


def equal_split(n: int, k: int) -> list[int]:
    """``n`` spread over ``k`` parts; the first ``n % k`` parts get one extra."""
    return [n // k + (1 if i < n % k else 0) for i in range(k)]


def training_data(ds: DomainDataset, source: list[str], samples: int | None,
                  seed: int) -> DomainDataset:
    """The source domains of ``ds``, optionally subsampled to ``samples`` in total."""
    if samples is None:
        return ds.domain_subset(source)
    counts = equal_split(samples, len(source))
    parts = []
    for dom, n in zip(source, counts):
        sub = ds.domain_subset([dom])
        if n > len(sub):
            raise DataError(f"insufficient data: domain {dom!r} has {len(sub)} examples, "
                            f"{n} requested")
        parts.append(subsample(sub, n, derive_seed(seed, f"subsample:{dom}")))
    return concat(parts)


def target_groups(cfg: ExperimentConfig) -> list[tuple[list[str], list[str]]]:
    """Targets grouped by their effective transform set, in first-seen order."""
    if cfg.mode == "mdg":
        return [(list(cfg.transforms), list(cfg.targets))]
    groups: dict[tuple[str, ...], list[str]] = {}
    for t in cfg.targets:
        groups.setdefault(tuple(cfg.effective_transforms(t)), []).append(t)
    out = []
    for names, targets in groups.items():
        if not names:
            raise ConfigError(f"exclusions leave an empty transform set for {targets}",
                              key="exclusions")
        out.append((list(names), targets))
    return out


def resolved_config(cfg: ExperimentConfig, transforms: list[str], targets: list[str],
                    steps: int | None = None) -> dict:
    """The config one trial actually ran with; trial count and exclusions are folded out."""
    d = cfg.to_dict()
    d.pop("trials")
    d.pop("exclusions")
    d["transforms"] = list(transforms)
    d["targets"] = list(targets)
    if steps is not None:
        d["train"]["steps"] = steps
    return d


def run_experiment(cfg: ExperimentConfig, sink: RecordSink | None = None,
                   log_dir: str | Path | None = None, data: DomainDataset | None = None,
                   steps: int | None = None, protocol: dict | None = None) -> list[RunRecord]:
    """Run ``cfg.trials`` trials (seeds ``seed + 0 .. trials - 1``) per target group."""
    data = load_dataset(cfg) if data is None else data
    missing = [d for d in cfg.source + cfg.targets if d not in data.domains]
    if missing:
        raise ConfigError(f"domains {missing} not in dataset {list(data.domains)}", key="targets")
    records = []
    for transforms, targets in target_groups(cfg):
        resolved = resolved_config(cfg, transforms, targets, steps)
        if protocol:
            resolved["protocol"] = dict(protocol)
        cdig = digest(resolved)
        for trial in range(cfg.trials):
            seed = cfg.seed + trial
            rid = f"{cdig}:{seed}"
            if sink is not None and (old := sink.get(rid)) is not None:
                records.append(old)
                continue
            rec = _run_trial(cfg, data, transforms, targets, trial, seed, resolved, cdig, rid,
                             steps, log_dir, protocol or {})
            if sink is not None:
                sink.write(rec)
            records.append(rec)
    return records


def _run_trial(cfg, data, transforms, targets, trial, seed, resolved, cdig, rid, steps,
               log_dir, protocol) -> RunRecord:
    t0 = time.perf_counter()
    train_data = training_data(data, cfg.source, cfg.train["samples"], seed)
    tcfg = cfg.train_config(cfg.source, transforms, seed, steps)
    try:
        model, log = train(tcfg, train_data)
    except ConfigError as exc:
        raise ConfigError(exc.message, key=exc.key or "train") from None
    accs = evaluate(model, data, targets)
    log_ref = None
    if log_dir is not None:
        # relative to log_dir so records do not depend on where a run was written
        log_ref = log.write_jsonl(Path(log_dir) / f"{cdig}-{seed}.jsonl").name
    sel = log.selected
    return RunRecord(
        record_id=rid, config_digest=cdig, config=copy.deepcopy(resolved), trial=trial,
        seed=seed, mode=cfg.mode, algorithm=cfg.algorithm.lower(),
        transforms=list(transforms) if cfg.mode == "pmdg" else [],
        requested_transforms=list(cfg.transforms) if cfg.mode == "pmdg" else [],
        K=len(transforms) if cfg.mode == "pmdg" else len(cfg.source),
        source=list(cfg.source), targets=list(targets),
        accuracies={t: float(accs[t]) for t in targets},
        val_accuracy=None if sel is None else float(sel.val_accuracy),
        selected_step=None if sel is None else sel.step,
        sample_counts=train_data.domain_counts(), train_counts=dict(log.train_counts),
        val_counts=dict(log.val_counts), steps=log.total_steps,
        steps_per_epoch=log.steps_per_epoch,
        final_loss=log.events[-1]["total"] if log.events else None,
        wall_time=round(time.perf_counter() - t0, 3), log_ref=log_ref, protocol=dict(protocol),
    )


# --------------------------------------------------------------------------
# equal-data protocol


def equal_data_protocol(cfg: ExperimentConfig, source: str, mdg_domains: list[str], n: int,
                        sink: RecordSink | None = None, data: DomainDataset | None = None,
                        log_dir: str | Path | None = None) -> tuple[list[RunRecord], list[RunRecord]]:
    """Train a PMDG arm on ``n`` source samples and an MDG arm on ``n`` samples
    spread over ``mdg_domains``. Both arms share algorithm, hyperparameters,
    targets and optimizer-step count.
    """
    if len(set(mdg_domains)) != len(mdg_domains) or len(mdg_domains) < 2:
        raise ConfigError("need at least two distinct MDG domains", key="mdg_domains")
    data = load_dataset(cfg) if data is None else data
    for dom in [source, *mdg_domains]:
        if dom not in data.domains:
            raise ConfigError(f"domain {dom!r} not in dataset", key="source")
    avail = data.domain_counts()
    if n > avail[source]:
        raise DataError(f"insufficient data: PMDG arm needs {n}, {source!r} has {avail[source]}")
    for dom, k in zip(mdg_domains, equal_split(n, len(mdg_domains))):
        if k > avail[dom]:
            raise DataError(f"insufficient data: MDG arm needs {k} from {dom!r}, has {avail[dom]}")

    base = cfg.to_dict()
    base["train"]["samples"] = n
    pm = dict(base, mode="pmdg", source=[source])
    md = dict(base, mode="mdg", source=list(mdg_domains))
    pm_cfg, md_cfg = ExperimentConfig.from_dict(pm), ExperimentConfig.from_dict(md)
    pm_recs = run_experiment(pm_cfg, sink, log_dir, data,
                             protocol={"name": "equal_data", "n": n, "arm": "pmdg"})
    steps = pm_recs[0].steps
    md_recs = run_experiment(md_cfg, sink, log_dir, data, steps=steps,
                             protocol={"name": "equal_data", "n": n, "arm": "mdg"})
    return pm_recs, md_recs


# --------------------------------------------------------------------------
# sweeps


def expand_grid(spec: dict) -> list[ExperimentConfig]:
    """Expand ``{"base": cfg, "cells": [...], "grid": {key: [values]}}``.

    ``cells`` is a list of dotted-key mappings applied one at a time; ``grid``
    is a cartesian product over dotted keys. Both are optional; together
    they multiply.
    """
    if not isinstance(spec, dict) or "base" not in spec:
        raise ConfigError("sweep file needs a 'base' config", key="base")
    unknown = set(spec) - {"base", "cells", "grid"}
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", key=sorted(unknown)[0])
    base = ExperimentConfig.from_dict(spec["base"]).to_dict()
    cells = spec.get("cells") or [{}]
    grid = spec.get("grid") or {}
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError("grid axis must be a non-empty list", key=f"grid.{key}")
    out = []
    for cell in cells:
        for combo in itertools.product(*grid.values()):
            tree = copy.deepcopy(base)
            for key, value in [*cell.items(), *zip(grid.keys(), combo)]:
                set_path(tree, key, copy.deepcopy(value))
            out.append(ExperimentConfig.from_dict(tree))
    return out


def load_sweep(path: str | Path, overrides: list[str] | None = None) -> list[ExperimentConfig]:
    try:
        spec = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"sweep file not found: {path}", key="--config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}", key="--config") from None
    if overrides and isinstance(spec, dict) and "base" in spec:
        spec = dict(spec, base=apply_overrides(
            ExperimentConfig.from_dict(spec["base"]).to_dict(), overrides))
    return expand_grid(spec)


def run_sweep(configs: list[ExperimentConfig], sink: RecordSink | None = None, jobs: int = 1,
              log_dir: str | Path | None = None) -> list[RunRecord]:
    """Run every config; cells may run concurrently but records keep grid order."""
    if jobs < 1:
        raise ConfigError("must be >= 1", key="--jobs")
    if jobs == 1:
        return [r for c in configs for r in run_experiment(c, sink, log_dir)]
    for c in configs:
        load_dataset(c)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(lambda c: run_experiment(c, sink, log_dir), configs))
    return [r for rs in results for r in rs]
