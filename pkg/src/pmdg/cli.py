"""Command-line entry point: ``pmdg <subcommand> ...``.

Exit codes: 0 on success, 1 on invalid input (bad flags, config keys,
unknown names), 2 when a valid request fails at run time.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from pmdg.data import DomainDataset, MiniBatch, Normalizer, save_image_folder
from pmdg.errors import ConfigError, PMDGError
from pmdg.harness.config import ExperimentConfig, build_dataset, synthetic_spec
from pmdg.harness.records import RecordSink, read_records
from pmdg.harness.report import REPORT_KINDS, render_report
from pmdg.harness.runner import load_sweep, run_experiment, run_sweep
from pmdg.transforms import TRANSFORM_NAMES, make_transform_set

log = logging.getLogger("pmdg")


class UsageError(Exception):
    def __init__(self, message: str, usage: str):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; here bad usage is a validation error
    def error(self, message):
        raise UsageError(message, self.format_usage())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pmdg", description="Pseudo multi-source domain generalization experiments.")
    p.add_argument("--json-errors", action="store_true", help="print errors as one JSON object")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="materialize a synthetic dataset as an image folder")
    g.add_argument("--config", required=True,
                   help="experiment config, or a dataset spec ({'synthetic': ...})")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, help="overrides the synthetic generator seed")

    def experiment_flags(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, help="overrides train.seed")
        sp.add_argument("--trials", type=int, help="overrides trials")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override of an existing config key (repeatable)")
        sp.add_argument("--out", default="runs", help="output directory (records + logs)")
        sp.add_argument("--records", help="records file (default: <out>/records.jsonl)")
        sp.add_argument("--overwrite", action="store_true",
                        help="re-run and replace records that already exist")

    r = sub.add_parser("run", help="run one experiment config")
    experiment_flags(r)

    s = sub.add_parser("sweep", help="run a grid of configs")
    experiment_flags(s)
    s.add_argument("--jobs", type=int, default=1, help="cells run concurrently")

    rep = sub.add_parser("report", help="render a report from run records")
    rep.add_argument("kind", choices=REPORT_KINDS)
    rep.add_argument("--records", required=True)
    rep.add_argument("--out", required=True)
    rep.add_argument("--plot", action="store_true", help="also write a PNG (needs matplotlib)")

    pv = sub.add_parser("preview-transforms", help="write before/after grids per transform")
    pv.add_argument("--dataset", required=True,
                    help="experiment config or dataset spec file")
    pv.add_argument("--out", required=True)
    pv.add_argument("--seed", type=int, default=0)
    pv.add_argument("--n", type=int, default=8, help="images per grid")
    pv.add_argument("--domain", help="domain to sample from (default: first)")
    pv.add_argument("--transforms", nargs="+", default=list(TRANSFORM_NAMES))
    return p


# --------------------------------------------------------------------------
# subcommands


def _read_json(path: str, key: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}", key=key) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}", key=key) from None


def _dataset_tree(path: str, key: str, seed: int | None = None) -> dict:
    """Accept a full experiment config, ``{"synthetic": ...}``/``{"folder": ...}``
    or a bare synthetic spec."""
    raw = _read_json(path, key)
    if not isinstance(raw, dict):
        raise ConfigError("must be a JSON object", key=key)
    if "dataset" in raw:
        raw = raw["dataset"]
    elif not ({"synthetic", "folder"} & set(raw)):
        raw = {"synthetic": raw}
    if seed is not None:
        if "synthetic" not in raw:
            raise ConfigError("--seed only applies to synthetic datasets", key="--seed")
        raw = {"synthetic": dict(raw["synthetic"], seed=seed)}
    return raw


def cmd_gen_data(args) -> int:
    tree = _dataset_tree(args.config, "--config", args.seed)
    if "synthetic" not in tree:
        raise ConfigError("gen-data needs a synthetic dataset spec", key="dataset")
    synthetic_spec(tree["synthetic"])
    ds = build_dataset(tree)
    root = save_image_folder(ds, args.out)
    (root / "spec.json").write_text(json.dumps(tree, indent=2, sort_keys=True))
    print(f"wrote {len(ds)} images ({ds.domain_counts()}) to {root}")
    return 0


def _config_overrides(args) -> list[str]:
    extra = list(args.override)
    if args.seed is not None:
        extra.append(f"train.seed={args.seed}")
    if args.trials is not None:
        extra.append(f"trials={args.trials}")
    return extra


def _sink(args) -> RecordSink:
    path = Path(args.records) if args.records else Path(args.out) / "records.jsonl"
    return RecordSink(path, "overwrite" if args.overwrite else "skip")


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config, _config_overrides(args))
    sink = _sink(args)
    records = run_experiment(cfg, sink, log_dir=Path(args.out) / "logs")
    for r in records:
        accs = " ".join(f"{t}={100 * a:.1f}" for t, a in r.accuracies.items())
        print(f"{r.record_id} seed={r.seed} {accs}")
    print(f"records: {sink.path}")
    return 0


def cmd_sweep(args) -> int:
    configs = load_sweep(args.config, _config_overrides(args))
    sink = _sink(args)
    records = run_sweep(configs, sink, jobs=args.jobs, log_dir=Path(args.out) / "logs")
    print(f"{len(configs)} cells, {len(records)} records -> {sink.path}")
    return 0


def cmd_report(args) -> int:
    records = read_records(args.records)
    for path in render_report(args.kind, records, args.out, plot=args.plot):
        print(path)
    return 0


def preview_grid(ds: DomainDataset, name: str, n: int, seed: int) -> np.ndarray:
    """``[2, n]`` tiles as one HWC uint8 image: originals on top, transformed below."""
    norm = Normalizer()
    raw = torch.from_numpy(ds.images[:n].copy())
    batch = MiniBatch(norm.normalize(raw), torch.from_numpy(ds.labels[:n].copy()))
    tset = make_transform_set([name], seed, num_classes=len(ds.class_names), normalizer=norm)
    out = norm.denormalize(tset.ops[0](batch).images).clamp(0, 1)
    rows = [torch.cat(list(raw), dim=2), torch.cat(list(out), dim=2)]
    grid = torch.cat(rows, dim=1).permute(1, 2, 0).numpy()
    return (grid * 255).round().astype(np.uint8)


def cmd_preview(args) -> int:
    from PIL import Image

    if args.n < 2:
        raise ConfigError("must be >= 2", key="--n")
    ds = build_dataset(_dataset_tree(args.dataset, "--dataset"))
    domain = args.domain or ds.domains[0]
    if domain not in ds.domains:
        raise ConfigError(f"unknown domain; dataset has {list(ds.domains)}", key="--domain")
    sub = ds.domain_subset([domain])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.transforms:
        grid = preview_grid(sub, name, min(args.n, len(sub)), args.seed)
        img = Image.fromarray(grid).resize((grid.shape[1] * 3, grid.shape[0] * 3), Image.NEAREST)
        img.save(out / f"{name}.png")
        print(out / f"{name}.png")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "run": cmd_run, "sweep": cmd_sweep,
            "report": cmd_report, "preview-transforms": cmd_preview}


# --------------------------------------------------------------------------


def _fail(args_json: bool, code: int, kind: str, message: str, key: str | None,
          usage: str | None = None) -> int:
    if args_json:
        print(json.dumps({"error": kind, "key": key, "message": message, "exit_code": code}),
              file=sys.stderr)
    else:
        if usage:
            print(usage, file=sys.stderr, end="")
        where = f" [key: {key}]" if key else ""
        print(f"error{where}: {message}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(json_errors, 1, "usage", str(exc), "argv", exc.usage)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(args.json_errors, 1, "config", exc.message, exc.key)
    except (PMDGError, OSError, RuntimeError, ValueError) as exc:
        log.debug("runtime failure", exc_info=True)
        key = getattr(exc, "key", None) or "-"
        return _fail(args.json_errors, 2, "runtime", str(exc), key)


if __name__ == "__main__":
    sys.exit(main())
