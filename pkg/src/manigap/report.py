"""CSV emission for sweep reports and eigenvalue tables.

Files are written to a temporary name and renamed into place, so a reader
never sees a half-written CSV. Numbers use 17 significant digits, which makes
reruns of the same configuration byte-identical (the manifest timestamp is
the only line that changes).
"""
from __future__ import annotations

import datetime
import math
import os
import tempfile

import numpy as np

from .config import RunConfig, serialize
from .errors import IOFailure
from .harness import EigTable, FitResult, GapReport

CELL_HEADER = "n,trial,empirical_risk,statistical_risk,gap,train_acc,eval_acc,reg_value,flag_overfit"


def _num(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.17g}"


def write_atomic(path, text: str) -> str:
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(folder, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=".part")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def fit_footer(label: str, fit: FitResult) -> str:
    return (f"# {label} slope={_num(fit.slope)} intercept={_num(fit.intercept)} "
            f"pearson={_num(fit.pearson)} points={fit.points} excluded={fit.excluded} "
            f"degenerate={str(fit.degenerate).lower()}\n")


def cells_csv(report: GapReport) -> str:
    lines = [CELL_HEADER]
    for c in report.rows:
        lines.append(",".join([str(c.n), str(c.trial)] + [_num(v) for v in (
            c.empirical_risk, c.statistical_risk, c.gap, c.train_acc, c.eval_acc, c.reg_value)]
            + [str(c.flag_overfit).lower()]))
    return "\n".join(lines) + "\n"


def summary_csv(report: GapReport) -> str:
    lines = ["n,gap_mean,gap_std"]
    lines += [f"{n},{_num(m)},{_num(s)}" for n, m, s in zip(report.n_values, report.gap_mean, report.gap_std)]
    text = "\n".join(lines) + "\n"
    text += f"# mode={report.mode}\n"
    return text + fit_footer("fit", report.fit) + fit_footer("fit_unflagged", report.fit_unflagged)


def outputs_csv(report: GapReport) -> str:
    lines = ["n,trial,output_diff"]
    lines += [f"{c.n},{c.trial},{_num(c.output_diff)}" for c in report.rows]
    return "\n".join(lines) + "\n"


def eig_csvs(table: EigTable) -> tuple[str, str]:
    rows = ["n,trial,i,ratio_error"]
    for (n, trial), errs in sorted(table.errors.items()):
        rows += [f"{n},{trial},{i},{_num(e)}" for i, e in zip(table.i_values, errs)]
    summary = ["n,i,mean_error,analytic_ratio"]
    for n in table.n_values:
        means = table.mean_error(n)
        summary += [f"{n},{i},{_num(m)},{_num(r)}"
                    for i, m, r in zip(table.i_values, means, table.analytic_ratios)]
    footer = "".join(f"# excluded n={n} trials={k}\n" for n, k in sorted(table.excluded.items()))
    return "\n".join(rows) + "\n", "\n".join(summary) + "\n" + footer


def manifest_text(config: RunConfig, extra: dict | None = None) -> str:
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    head = f"# manigap run manifest, written {stamp}\n# command: {config.command}\n"
    for k, v in (extra or {}).items():
        head += f"# {k}: {v}\n"
    return head + serialize(config)


def emit_report(result, out_dir, config: RunConfig | None = None, name: str = "gap",
                extra: dict | None = None) -> list:
    """Write the CSVs for a GapReport or EigTable (plus a manifest); return the paths."""
    paths = []
    join = lambda f: os.path.join(os.fspath(out_dir), f)
    if isinstance(result, GapReport):
        paths.append(write_atomic(join(f"{name}_cells.csv"), cells_csv(result)))
        paths.append(write_atomic(join(f"{name}_summary.csv"), summary_csv(result)))
        if result.mode == "output":
            paths.append(write_atomic(join(f"{name}_outputs.csv"), outputs_csv(result)))
        if result.mode != "accuracy" and not np.all(np.isnan([c.train_acc for c in result.rows])):
            paths.append(write_atomic(join(f"{name}_summary_accuracy.csv"), summary_csv(result.as_mode("accuracy"))))
    elif isinstance(result, EigTable):
        cells, summary = eig_csvs(result)
        paths.append(write_atomic(join(f"{name}_cells.csv"), cells))
        paths.append(write_atomic(join(f"{name}_summary.csv"), summary))
    else:
        raise TypeError(f"cannot emit {type(result).__name__}")
    if config is not None:
        paths.append(write_atomic(join("manifest.txt"), manifest_text(config, extra)))
    return paths
