"""Aggregation and the four report kinds: table, gains, equal_data, correlation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from pmdg.algorithms import ALGORITHMS
from pmdg.errors import ConfigError, DataError
from pmdg.harness.records import RunRecord
from pmdg.transforms import TRANSFORM_NAMES

REPORT_KINDS = ("table", "gains", "equal_data", "correlation")
AVG = "Avg"


# --------------------------------------------------------------------------
# mean ± standard error


@dataclass
class Summary:
    mean: float
    stderr: float
    n: int

    @property
    def single_trial(self) -> bool:
        return self.n == 1

    def cell(self) -> str:
        return format_cell(self.mean, self.stderr)


def format_cell(mean: float, stderr: float) -> str:
    """Fractions in, percent with one decimal out: ``"62.0 ± 1.2"``."""
    return f"{100 * mean:.1f} ± {100 * stderr:.1f}"


def summarize(values) -> Summary:
    """Mean and standard error (sample std with ddof=1 over sqrt(n))."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise DataError("empty cell: no records to aggregate")
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return Summary(float(v.mean()), se, int(v.size))


def method_label(rec: RunRecord) -> str:
    if rec.mode == "mdg":
        return f"{rec.algorithm}: mdg({'+'.join(rec.source)})"
    return f"{rec.algorithm}: {'+'.join(rec.requested_transforms)}"


@dataclass
class AggregateRow:
    method: str
    cells: dict[str, Summary]
    trials: int
    single_trial: bool
    excluded: dict[str, list[str]] = field(default_factory=dict)


def aggregate(records: list[RunRecord]) -> list[AggregateRow]:
    """One row per method, one cell per target plus ``Avg`` over targets.

    The average is taken per trial first, so its standard error reflects
    trial-to-trial spread.
    """
    if not records:
        raise DataError("no records to aggregate")
    by_method: dict[str, list[RunRecord]] = {}
    for r in records:
        by_method.setdefault(method_label(r), []).append(r)
    targets = _targets(records)
    rows = []
    for method, recs in by_method.items():
        per_target: dict[str, list[float]] = {}
        per_trial: dict[int, list[float]] = {}
        excluded = {}
        for r in recs:
            for t, acc in r.accuracies.items():
                per_target.setdefault(t, []).append(acc)
                per_trial.setdefault(r.seed, []).append(acc)
            dropped = [x for x in r.requested_transforms if x not in r.transforms]
            if dropped:
                for t in r.targets:
                    excluded[t] = dropped
        cells = {t: summarize(per_target[t]) for t in targets if t in per_target}
        if len(targets) > 1:
            complete = [v for v in per_trial.values() if len(v) == len(targets)]
            if complete:
                cells[AVG] = summarize(sum(v) / len(v) for v in complete)
        trials = len(per_trial)
        rows.append(AggregateRow(method, cells, trials, trials == 1, excluded))
    return rows


def _targets(records: list[RunRecord]) -> list[str]:
    seen: list[str] = []
    for r in records:
        for t in r.accuracies:
            if t not in seen:
                seen.append(t)
    return seen


def mean_accuracy(records: list[RunRecord], targets: list[str] | None = None) -> float:
    """Mean over targets of the per-target mean accuracy across trials."""
    targets = targets or _targets(records)
    per = []
    for t in targets:
        vals = [r.accuracies[t] for r in records if t in r.accuracies]
        if not vals:
            raise DataError(f"no accuracy recorded for target {t!r}")
        per.append(sum(vals) / len(vals))
    return sum(per) / len(per)


# --------------------------------------------------------------------------
# tables


def _rank_marks(values: dict[str, float]) -> dict[str, str]:
    """``"**"`` for the best displayed value, ``"_"`` for the second best."""
    shown = {k: round(100 * v, 1) for k, v in values.items()}
    distinct = sorted(set(shown.values()), reverse=True)
    marks = {}
    for k, v in shown.items():
        if v == distinct[0]:
            marks[k] = "**"
        elif len(distinct) > 1 and v == distinct[1]:
            marks[k] = "_"
    return marks


def table_markdown(rows: list[AggregateRow], columns: list[str]) -> str:
    marks = {c: _rank_marks({r.method: r.cells[c].mean for r in rows if c in r.cells})
             for c in columns}
    lines = ["| Method | " + " | ".join(columns) + " |",
             "|" + "---|" * (len(columns) + 1)]
    for r in rows:
        cells = []
        for c in columns:
            s = r.cells.get(c)
            if s is None:
                cells.append("–")
                continue
            m = marks[c].get(r.method, "")
            text = f"{m}{100 * s.mean:.1f}{m} ± {100 * s.stderr:.1f}"
            if c in r.excluded:
                text += "†"
            cells.append(text)
        lines.append(f"| {r.method} | " + " | ".join(cells) + " |")
    notes = []
    if any(r.excluded for r in rows):
        notes.append("† some transforms were excluded for this target.")
    if any(r.single_trial for r in rows):
        notes.append("Rows from a single trial report a standard error of 0.0.")
    return "\n".join(lines) + "\n" + "".join(f"\n{n}\n" for n in notes)


def table_csv(rows: list[AggregateRow], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *[f"{c}_{s}" for c in columns for s in ("mean", "stderr")], "trials"])
    for r in rows:
        vals = []
        for c in columns:
            s = r.cells.get(c)
            vals += ["", ""] if s is None else [f"{100 * s.mean:.4f}", f"{100 * s.stderr:.4f}"]
        w.writerow([r.method, *vals, r.trials])
    return buf.getvalue()


# --------------------------------------------------------------------------
# gains


def gain(records_a: list[RunRecord], records_b: list[RunRecord]) -> float:
    """Accuracy of A minus accuracy of B, in points, on B's targets."""
    targets = _targets(records_b)
    return 100 * (mean_accuracy(records_a, targets) - mean_accuracy(records_b, targets))


def row_key(transforms: list[str]) -> str:
    """Pseudo-domain part of a set: a leading ``org`` is implied."""
    names = transforms[1:] if len(transforms) > 1 and transforms[0] == "org" else transforms
    return "+".join(names)


def _row_order(key: str) -> tuple:
    return tuple(TRANSFORM_NAMES.index(n) if n in TRANSFORM_NAMES else len(TRANSFORM_NAMES)
                 for n in key.split("+"))


@dataclass
class GainMatrix:
    rows: list[str]
    cols: list[str]
    cells: dict[tuple[str, str], float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["transform", *self.cols])
        for r in self.rows:
            w.writerow([r, *["" if (r, c) not in self.cells else f"{self.cells[r, c]:.2f}"
                             for c in self.cols]])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = ["| Transform | " + " | ".join(self.cols) + " |",
                 "|" + "---|" * (len(self.cols) + 1)]
        for r in self.rows:
            vals = ["–" if (r, c) not in self.cells else f"{self.cells[r, c]:+.1f}"
                    for c in self.cols]
            lines.append(f"| {r} | " + " | ".join(vals) + " |")
        return "\n".join(lines) + "\n"


def gain_matrix(records: list[RunRecord], baseline_records: list[RunRecord]) -> GainMatrix:
    """Cell (transform set, algorithm) = its accuracy minus the ERM baseline, in points."""
    if not baseline_records:
        raise DataError("missing baseline: need ERM records without pseudo-domains")
    cells_recs: dict[tuple[str, str], list[RunRecord]] = {}
    sets: dict[tuple[str, str], list[str]] = {}
    for r in records:
        if r.mode != "pmdg":
            continue
        cell = (row_key(r.requested_transforms), r.algorithm)
        if sets.setdefault(cell, r.requested_transforms) != r.requested_transforms:
            raise DataError(f"ambiguous gain cell {cell}: sets {sets[cell]} and "
                            f"{r.requested_transforms}")
        cells_recs.setdefault(cell, []).append(r)
    if not cells_recs:
        raise DataError("no PMDG records to compare against the baseline")
    targets = _targets(baseline_records)
    for cell, recs in cells_recs.items():
        if set(_targets(recs)) != set(targets):
            raise DataError(f"cell {cell} covers targets {_targets(recs)}, baseline {targets}")
    rows = sorted({k for k, _ in cells_recs}, key=_row_order)
    cols = [a for a in ALGORITHMS if any(c == a for _, c in cells_recs)]
    values = {cell: gain(recs, baseline_records) for cell, recs in cells_recs.items()}
    return GainMatrix(rows, cols, values)


def split_baseline(records: list[RunRecord]) -> tuple[list[RunRecord], list[RunRecord]]:
    base = [r for r in records
            if r.mode == "pmdg" and r.algorithm == "erm" and r.requested_transforms == ["org"]]
    rest = [r for r in records if r not in base]
    return rest, base


# --------------------------------------------------------------------------
# equal data


@dataclass
class SeriesPoint:
    arm: str
    n: int
    summary: Summary


def equal_data_series(records: list[RunRecord]) -> list[SeriesPoint]:
    groups: dict[tuple[str, int], list[RunRecord]] = {}
    for r in records:
        p = r.protocol
        if p.get("name") == "equal_data":
            groups.setdefault((p["arm"], int(p["n"])), []).append(r)
    if not groups:
        raise DataError("no equal-data records")
    arms = {arm for arm, _ in groups}
    if arms != {"pmdg", "mdg"}:
        raise DataError(f"equal-data report needs both arms, found {sorted(arms)}")
    out = []
    for (arm, n), recs in sorted(groups.items(), key=lambda kv: (kv[0][0] != "pmdg", kv[0][1])):
        totals = {sum(r.sample_counts.values()) for r in recs}
        if totals != {n}:
            raise DataError(f"{arm} arm at n={n} trained on {sorted(totals)} samples")
        out.append(SeriesPoint(arm, n, summarize(r.mean_accuracy() for r in recs)))
    return out


# --------------------------------------------------------------------------
# correlation


@dataclass
class CorrelationReport:
    pearson: float
    spearman: float
    points: list[tuple[str, float, float]]


def correlation_report(mdg_accs: dict[str, float], pmdg_accs: dict[str, float]) -> CorrelationReport:
    """Pearson and Spearman coefficients between per-algorithm MDG and PMDG accuracy.

    Both are NaN when either side is constant across algorithms.
    """
    if set(mdg_accs) != set(pmdg_accs):
        raise DataError(f"algorithm keys differ: mdg {sorted(mdg_accs)} vs pmdg {sorted(pmdg_accs)}")
    if len(mdg_accs) < 3:
        raise DataError(f"need at least 3 algorithms, got {len(mdg_accs)}")
    keys = [a for a in ALGORITHMS if a in mdg_accs] + sorted(k for k in mdg_accs if k not in ALGORITHMS)
    x = np.array([mdg_accs[k] for k in keys], dtype=float)
    y = np.array([pmdg_accs[k] for k in keys], dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        # undefined, not an error: a degenerate sweep still gets its report
        pearson = spearman = float("nan")
    else:
        pearson = float(stats.pearsonr(x, y).statistic)
        spearman = float(stats.spearmanr(x, y).statistic)
    return CorrelationReport(pearson, spearman, [(k, float(a), float(b)) for k, a, b in zip(keys, x, y)])


def correlation_inputs(records: list[RunRecord]) -> tuple[dict[str, float], dict[str, float]]:
    mdg: dict[str, list[RunRecord]] = {}
    pmdg: dict[str, list[RunRecord]] = {}
    for r in records:
        if r.protocol.get("name") == "equal_data":
            continue
        (mdg if r.mode == "mdg" else pmdg).setdefault(r.algorithm, []).append(r)
    return ({a: mean_accuracy(rs) for a, rs in mdg.items()},
            {a: mean_accuracy(rs) for a, rs in pmdg.items()})


# --------------------------------------------------------------------------
# rendering


def render_report(kind: str, records: list[RunRecord], out_dir: str | Path,
                  plot: bool = False) -> list[Path]:
    """Write ``<kind>.csv`` and ``<kind>.md`` (and ``<kind>.png`` when ``plot``)."""
    if kind not in REPORT_KINDS:
        raise ConfigError(f"unknown report kind {kind!r}; one of {list(REPORT_KINDS)}", key="kind")
    if not records:
        raise DataError("no records")
    if kind in ("table", "gains"):
        # protocol runs (equal-data arms) only feed their own report
        records = [r for r in records if not r.protocol]
        if not records:
            raise DataError(f"no plain runs for a {kind} report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "table":
        rows = aggregate(records)
        cols = _targets(records)
        if len(cols) > 1:
            cols.append(AVG)
        csv_text, md = table_csv(rows, cols), table_markdown(rows, cols)
        figure = None
    elif kind == "gains":
        rest, base = split_baseline(records)
        gm = gain_matrix(rest, base)
        csv_text, md = gm.to_csv(), gm.to_markdown()
        figure = ("gains", gm)
    elif kind == "equal_data":
        series = equal_data_series(records)
        csv_text, md = _equal_data_tables(series)
        figure = ("equal_data", series)
    else:
        rep = correlation_report(*correlation_inputs(records))
        csv_text, md = _correlation_tables(rep)
        figure = ("correlation", rep)
    paths = [out / f"{kind}.csv", out / f"{kind}.md"]
    paths[0].write_text(csv_text)
    paths[1].write_text(md)
    if plot and figure is not None:
        paths.append(_plot(figure, out / f"{kind}.png"))
    return paths


def _equal_data_tables(series: list[SeriesPoint]) -> tuple[str, str]:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arm", "n", "mean", "stderr", "trials"])
    lines = ["| Arm | n | Accuracy |", "|---|---|---|"]
    for p in series:
        s = p.summary
        w.writerow([p.arm, p.n, f"{100 * s.mean:.4f}", f"{100 * s.stderr:.4f}", s.n])
        lines.append(f"| {p.arm} | {p.n} | {s.cell()} |")
    return buf.getvalue(), "\n".join(lines) + "\n"


def _correlation_tables(rep: CorrelationReport) -> tuple[str, str]:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["algorithm", "mdg", "pmdg"])
    lines = ["| Algorithm | MDG | PMDG |", "|---|---|---|"]
    for name, a, b in rep.points:
        w.writerow([name, f"{100 * a:.4f}", f"{100 * b:.4f}"])
        lines.append(f"| {name} | {100 * a:.1f} | {100 * b:.1f} |")
    lines += ["", f"Pearson r = {rep.pearson:.4f}", "", f"Spearman rho = {rep.spearman:.4f}"]
    if math.isnan(rep.pearson):
        lines += ["", "Undefined: accuracy is constant across algorithms on one side."]
    return buf.getvalue(), "\n".join(lines) + "\n"


def _plot(figure, path: Path) -> Path:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigError("plotting needs matplotlib (pip install 'artifact[plot]')",
                          key="--plot") from None
    kind, payload = figure
    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "gains":
        grid = np.full((len(payload.rows), len(payload.cols)), np.nan)
        for (r, c), v in payload.cells.items():
            grid[payload.rows.index(r), payload.cols.index(c)] = v
        lim = np.nanmax(np.abs(grid)) or 1.0
        im = ax.imshow(grid, cmap="RdBu", vmin=-lim, vmax=lim)
        ax.set_xticks(range(len(payload.cols)), payload.cols, rotation=45, ha="right")
        ax.set_yticks(range(len(payload.rows)), payload.rows)
        fig.colorbar(im, ax=ax, label="gain (points)")
    elif kind == "equal_data":
        for arm in ("pmdg", "mdg"):
            pts = [p for p in payload if p.arm == arm]
            ax.errorbar([p.n for p in pts], [100 * p.summary.mean for p in pts],
                        yerr=[100 * p.summary.stderr for p in pts], marker="o", capsize=3, label=arm)
        ax.set_xlabel("training samples")
        ax.set_ylabel("target accuracy (%)")
        ax.legend()
    else:
        xs = [100 * a for _, a, _ in payload.points]
        ys = [100 * b for _, _, b in payload.points]
        ax.scatter(xs, ys)
        for (name, _, _), x, y in zip(payload.points, xs, ys):
            ax.annotate(name, (x, y), fontsize=8)
        ax.set_xlabel("MDG accuracy (%)")
        ax.set_ylabel("PMDG accuracy (%)")
        ax.set_title(f"r = {payload.pearson:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
