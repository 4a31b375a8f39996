"""Report emission: delimited outputs, per-cell plot data, rendered figures.

The CSV and JSON outputs are byte-reproducible for a fixed configuration:
rows keep sweep order, floats are formatted with a fixed rule, JSON keys are
sorted, and files are written atomically (temp file + rename). Figures are
rendered with the Agg backend straight to PNG files next to the reports.
"""

from __future__ import annotations

import json
import math
import os
import re
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

CSV_COLUMNS = ("subject", "method", "degradation", "mitigation", "mae_bpm",
               "pcc", "psnr_db", "ssim", "n_windows", "n_missing", "seed", "error")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.6g}"
    return str(value)


def _json_num(value):
    if value is None:
        return None
    if isinstance(value, float):
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
    return value


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _row_values(row):
    return (row.subject, row.method, row.degradation, row.mitigation, row.mae,
            row.pcc, row.psnr, row.ssim, row.n_windows, row.n_missing,
            row.seed, row.error)


def report_csv_text(report) -> str:
    lines = [f"# schema_version={report.schema_version}",
             "# config=" + json.dumps(report.config, sort_keys=True, separators=(",", ":")),
             ",".join(CSV_COLUMNS)]
    for row in report.rows:
        lines.append(",".join(_fmt(v).replace(",", ";") for v in _row_values(row)))
    return "\n".join(lines) + "\n"


def report_json_text(report) -> str:
    rows = []
    for row in report.rows:
        rows.append({k: _json_num(v) for k, v in zip(CSV_COLUMNS, _row_values(row))})
    doc = {"schema_version": report.schema_version,
           "config": report.config,
           "rows": rows}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _slug(*parts) -> str:
    text = "_".join(str(p) for p in parts)
    return re.sub(r"[^A-Za-z0-9._+-]+", "-", text)


def write_plot_data(report, outdir: Path) -> None:
    """Per-cell CSVs: aligned HR traces and the first-window spectrum."""
    cells = outdir / "cells"
    cells.mkdir(parents=True, exist_ok=True)
    for row in report.rows:
        if row.est is None:
            continue
        stem = _slug(row.subject, row.method, row.degradation, row.mitigation)
        ref = {float(t): v for t, v in zip(row.ref.window_start, row.ref.hr_bpm)} \
            if row.ref is not None else {}
        lines = ["t_start,hr_est,hr_ref"]
        for t, v in zip(row.est.window_start, row.est.hr_bpm):
            r = ref.get(float(t), float("nan"))
            lines.append(f"{_fmt(float(t))},{_fmt(float(v))},{_fmt(float(r))}")
        _atomic_write_text(cells / f"{stem}_hr.csv", "\n".join(lines) + "\n")
        if row.psd is not None:
            freqs, psd = row.psd
            lines = ["freq_hz,psd"]
            for f, p in zip(freqs, psd):
                lines.append(f"{_fmt(float(f))},{_fmt(float(p))}")
            _atomic_write_text(cells / f"{stem}_psd.csv", "\n".join(lines) + "\n")


def _mae_summary_figure(report, path: Path) -> None:
    combos, methods = [], []
    for row in report.rows:
        key = f"{row.degradation}/{row.mitigation}"
        if key not in combos:
            combos.append(key)
        if row.method not in methods:
            methods.append(row.method)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(combos)), 4.0))
    width = 0.8 / max(1, len(methods))
    x = np.arange(len(combos))
    for mi, method in enumerate(methods):
        vals = np.full(len(combos), np.nan)
        for row in report.rows:
            if row.method != method or row.mae is None:
                continue
            vals[combos.index(f"{row.degradation}/{row.mitigation}")] = row.mae
        ax.bar(x + (mi - (len(methods) - 1) / 2) * width, vals, width, label=method)
    ax.set_xticks(x)
    ax.set_xticklabels(combos, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("MAE (bpm)")
    ax.set_title("Heart-rate error by degradation / mitigation")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _cell_figure(row, path: Path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.2))
    axes[0].plot(row.est.window_start, row.est.hr_bpm, label="estimate", lw=1.5)
    if row.ref is not None:
        axes[0].plot(row.ref.window_start, row.ref.hr_bpm, label="reference",
                     lw=1.0, ls="--")
    axes[0].set_xlabel("window start (s)")
    axes[0].set_ylabel("heart rate (bpm)")
    axes[0].legend(fontsize=8)
    title = f"{row.subject} {row.method} {row.degradation}/{row.mitigation}"
    axes[0].set_title(title, fontsize=9)
    if row.psd is not None:
        freqs, psd = row.psd
        band = (freqs >= 0.5) & (freqs <= 4.5)
        axes[1].plot(freqs[band], psd[band], lw=1.0)
        axes[1].set_xlabel("frequency (Hz)")
        axes[1].set_ylabel("PSD")
        axes[1].set_title("first window spectrum", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_figures(report, outdir: Path) -> None:
    figdir = outdir / "figures"
    figdir.mkdir(parents=True, exist_ok=True)
    _mae_summary_figure(report, figdir / "mae_summary.png")
    for row in report.rows:
        if row.est is None:
            continue
        stem = _slug(row.subject, row.method, row.degradation, row.mitigation)
        _cell_figure(row, figdir / f"{stem}.png")


def write_report(report, outdir, figures: bool = False, plot_data: bool = False) -> Path:
    """Emit report.csv / report.json (and optional extras) into outdir."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(outdir / "report.csv", report_csv_text(report))
    _atomic_write_text(outdir / "report.json", report_json_text(report))
    if plot_data:
        write_plot_data(report, outdir)
    if figures:
        write_figures(report, outdir)
    return outdir / "report.csv"
