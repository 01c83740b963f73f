"""Delimited output and figure rendering for experiment records.

CSV files follow RFC 4180 (CRLF line endings, header row) with '.' decimals
at 17 significant digits, so reruns with the same seed are byte-identical.
Figures are rendered with matplotlib to SVG next to the delimited output.
"""

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

TRAJECTORY_COLUMNS = ["t", "kl", "chi2", "bound_b1", "bound_b2", "feps", "mass_err"]


def fmt(value):
    """17-significant-digit decimal rendering; empty string for missing."""
    if value is None:
        return ""
    return format(float(value), ".17g")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else fmt(c) for c in row])


def write_timeseries_csv(path, series, columns=None):
    """One row per recorded time; missing columns are left empty."""
    columns = columns or TRAJECTORY_COLUMNS
    t = series["t"]
    rows = []
    for i in range(len(t)):
        row = []
        for col in columns:
            vals = series.get(col)
            row.append(None if vals is None else vals[i])
        rows.append(row)
    write_csv(path, columns, rows)


def read_csv_columns(path):
    """Inverse of write_csv for checks and aggregation: header -> float
    arrays (empty fields become NaN)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {h: [] for h in header}
        for row in reader:
            for h, c in zip(header, row):
                cols[h].append(float(c) if c != "" else np.nan)
    return {h: np.asarray(v) for h, v in cols.items()}


def write_manifest(path, record, extra=None):
    doc = {
        "config": record.config,
        "master_seed": record.master_seed,
        "version": record.version,
        "wall_clock_seconds": record.wall_clock,
        "summary": record.summary,
        "replicates": [
            {"label": r.label, "seed": r.seed, "metrics": sorted(r.series.keys())}
            for r in record.replicates
        ],
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")


def line_plot(path, curves, xlabel, ylabel, title=None, yscale="linear",
              xscale="linear"):
    """Render labelled (x, y) curves to an SVG file."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, x, y in curves:
        ax.plot(x, y, label=label, linewidth=1.4)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_xscale(xscale)
    ax.set_yscale(yscale)
    if title:
        ax.set_title(title)
    if len(curves) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_decay(record, out_dir):
    """Files for the pure-flow decay study: per-flow trajectory CSVs with
    the envelope columns, SVG decay plots, and a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    name_map = {"bd": "kl_decay", "bd2": "chi2_decay"}
    for rep in record.replicates:
        base = name_map.get(rep.label, rep.label)
        write_timeseries_csv(os.path.join(out_dir, f"{base}.csv"), rep.series)
        t = rep.series["t"]
        if rep.label == "bd":
            curves = [("KL", t, np.maximum(rep.series["kl"], 1e-300)),
                      ("direct envelope", t, rep.series["bound_b1"]),
                      ("Gronwall envelope", t, rep.series["bound_b2"])]
            ylabel = "KL divergence"
        else:
            curves = [("chi2", t, np.maximum(rep.series["chi2"], 1e-300)),
                      ("envelope", t, rep.series["bound_chi2"])]
            ylabel = "chi-squared divergence"
        line_plot(os.path.join(out_dir, f"{base}.svg"), curves,
                  xlabel="t", ylabel=ylabel, yscale="log",
                  title=f"{base.replace('_', ' ')}")
    write_manifest(os.path.join(out_dir, "manifest.json"), record, extra={
        "provenance": "decay of mean-field birth-death flows on a bimodal "
                      "torus potential, with theoretical decay envelopes",
    })


def emit_eps_scaling(record, out_dir):
    """Files for the bandwidth-bias study: per-bandwidth trajectory CSVs,
    the scaling summary CSV, log-log SVGs, and a manifest with the fitted
    slopes."""
    os.makedirs(out_dir, exist_ok=True)
    decay_curves = []
    for rep in record.replicates:
        eps = rep.label.split("=")[1]
        write_timeseries_csv(os.path.join(out_dir, f"trajectory_eps_{eps}.csv"),
                             rep.series)
        decay_curves.append((rep.label, rep.series["t"],
                             np.maximum(rep.series["kl"], 1e-300)))
    s = record.summary
    write_csv(os.path.join(out_dir, "eps_scaling.csv"),
              ["epsilon", "kl_final", "feps_final", "w2_circle_final"],
              list(zip(s["eps_ladder"], s["kl_final"], s["feps_final"],
                       s["w2_circle_final"])))
    line_plot(os.path.join(out_dir, "kl_vs_t.svg"), decay_curves,
              xlabel="t", ylabel="KL divergence", yscale="log",
              title="kernelized flow: KL decay per bandwidth")
    line_plot(os.path.join(out_dir, "eps_scaling.svg"),
              [("terminal KL", s["eps_ladder"], s["kl_final"])],
              xlabel="bandwidth", ylabel="terminal KL",
              xscale="log", yscale="log",
              title=f"terminal bias, log-log slope {s['loglog_slope_kl']:.3f}")
    write_manifest(os.path.join(out_dir, "manifest.json"), record, extra={
        "provenance": "terminal bias of the kernel-regularized flow over a "
                      "bandwidth ladder on a bimodal torus potential",
    })
