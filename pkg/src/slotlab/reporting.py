"""Comparison tables, learning-curve files, and rendered figures.

The report path emits delimited data (a comparison table and per-run
curve CSVs) plus matplotlib figures rendered straight to files next to
them; runs are only comparable when they evaluated on identical test
sets, which is enforced via the recorded content hashes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import DataError
from .evaluation import EvalRecord, load_records

F1_FIELDS = ("f1_initial", "f1_learn", "f1_unknown", "f1_weighted")


@dataclass
class RunView:
    """A completed simulation run loaded from its artifact directory."""

    path: Path
    label: str
    mode: str
    seed: int
    records: list[EvalRecord]
    summary: dict

    @property
    def test_hashes(self) -> dict:
        return self.summary.get("test_hashes", {})

    def initial_record(self) -> EvalRecord:
        return next(r for r in self.records if not r.with_stm)

    def final_record(self) -> EvalRecord:
        """The run's headline view: STM-merged for STM_ONLY (that is the
        whole mechanism there), plain model view otherwise."""
        want_stm = self.mode == "STM_ONLY"
        return [r for r in self.records if r.with_stm == want_stm][-1]


def load_run(path: str | Path) -> RunView:
    path = Path(path)
    records_file = path / "eval_records.csv"
    summary_file = path / "summary.json"
    if not records_file.exists() or not summary_file.exists():
        raise DataError(f"{path}: not a completed run directory (records or summary missing)")
    summary = json.loads(summary_file.read_text())
    mode = summary.get("mode", "?")
    seed = summary.get("config_seed", summary.get("seed", 0))
    return RunView(
        path=path,
        label=f"{mode.lower()}-s{seed}",
        mode=mode,
        seed=seed,
        records=load_records(records_file),
        summary=summary,
    )


def check_comparable(runs: Sequence[RunView]) -> None:
    """Refuse to compare runs evaluated on different test sets."""
    reference = runs[0].test_hashes
    for run in runs[1:]:
        if run.test_hashes != reference:
            diff = {
                name
                for name in set(reference) | set(run.test_hashes)
                if reference.get(name) != run.test_hashes.get(name)
            }
            raise DataError(
                f"runs are not comparable: {run.label} evaluated on different "
                f"test sets than {runs[0].label} (mismatch in {sorted(diff)})"
            )


def comparison_rows(runs: Sequence[RunView]) -> list[dict]:
    """Initial-model row plus one final row per run, with signed deltas."""
    baseline = runs[0].initial_record()
    rows = [
        {
            "label": "initial",
            **{f: getattr(baseline, f) for f in F1_FIELDS},
            **{f + "_delta": 0.0 for f in F1_FIELDS},
            "f1_real": baseline.f1_real,
        }
    ]
    for run in runs:
        final = run.final_record()
        row = {"label": run.label, "f1_real": final.f1_real}
        for f in F1_FIELDS:
            row[f] = getattr(final, f)
            row[f + "_delta"] = getattr(final, f) - getattr(baseline, f)
        rows.append(row)
    return rows


def render_table(rows: Sequence[dict]) -> str:
    headers = ["model", "test_INITIAL", "test_LEARN", "test_UNKNOWN", "weighted", "test_REAL"]
    body = []
    for row in rows:
        cells = [row["label"]]
        for f in F1_FIELDS:
            value = f"{row[f]:.2f}"
            if row["label"] != "initial":
                value += f" ({row[f + '_delta']:+.2f})"
            cells.append(value)
        cells.append("-" if row.get("f1_real") is None else f"{row['f1_real']:.2f}")
        body.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
    ]
    for cells in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines)


def write_table_csv(rows: Sequence[dict], path: Path) -> None:
    fields = ["label"]
    for f in F1_FIELDS:
        fields += [f, f + "_delta"]
    fields.append("f1_real")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in fields})


def write_curves(run: RunView, path: Path) -> int:
    """Per-checkpoint curve file: one row per dialogue index, both views."""
    without = [r for r in run.records if not r.with_stm]
    with_stm = {r.dialogue_index: r for r in run.records if r.with_stm}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["dialogue_index"]
            + [f + "_model" for f in F1_FIELDS]
            + [f + "_stm" for f in F1_FIELDS]
            + ["stm_size", "adaptation_count"]
        )
        for record in without:
            stm_rec = with_stm.get(record.dialogue_index, record)
            writer.writerow(
                [record.dialogue_index]
                + [f"{getattr(record, f):.6f}" for f in F1_FIELDS]
                + [f"{getattr(stm_rec, f):.6f}" for f in F1_FIELDS]
                + [stm_rec.stm_size, record.adaptation_count]
            )
    return len(without)


def plot_run_curves(run: RunView, path: Path) -> None:
    """F1 evolution over the simulated dialogues, rendered to a file."""
    without = [r for r in run.records if not r.with_stm]
    x = [r.dialogue_index for r in without]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    styles = {
        "f1_initial": ("tab:blue", "test_INITIAL"),
        "f1_learn": ("tab:green", "test_LEARN"),
        "f1_unknown": ("tab:red", "test_UNKNOWN"),
        "f1_weighted": ("black", "weighted"),
    }
    for f, (color, label) in styles.items():
        ax.plot(x, [getattr(r, f) for r in without], color=color, label=label, linewidth=1.2)
    ax.set_xlabel("dialogue")
    ax.set_ylabel("F1")
    ax.set_ylim(0, 102)
    ax.set_title(f"F1 evolution during simulation ({run.label})")
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_comparison(runs: Sequence[RunView], path: Path, field: str = "f1_learn") -> None:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for run in runs:
        without = [r for r in run.records if not r.with_stm]
        ax.plot(
            [r.dialogue_index for r in without],
            [getattr(r, field) for r in without],
            label=run.label,
            linewidth=1.2,
        )
    ax.set_xlabel("dialogue")
    ax.set_ylabel(field)
    ax.set_title(f"{field} across runs")
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(
    run_dirs: Sequence[str | Path],
    out_dir: str | Path,
    plot: bool = True,
) -> dict:
    """Emit table + curves (+ figures) for one or more completed runs."""
    if not run_dirs:
        raise DataError("report needs at least one run directory")
    runs = [load_run(d) for d in run_dirs]
    check_comparable(runs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = comparison_rows(runs)
    table = render_table(rows)
    (out / "table.txt").write_text(table + "\n")
    write_table_csv(rows, out / "table.csv")

    curve_lengths = {}
    for run in runs:
        curve_lengths[run.label] = write_curves(run, out / f"curves_{run.label}.csv")
        if plot:
            plot_run_curves(run, out / f"curves_{run.label}.png")
    if plot and len(runs) > 1:
        plot_comparison(runs, out / "comparison_f1_learn.png")
    return {"table": table, "rows": rows, "curve_lengths": curve_lengths, "out_dir": str(out)}
