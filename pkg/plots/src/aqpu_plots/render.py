"""Render evolution / sweep / trade-off figures from the simulator's CSVs.

Pure function of its inputs: fixed figure geometry, no timestamps, stripped
metadata, so re-rendering the same CSV gives byte-identical images.  Invoked
as ``render --kind sweep --in sweep.csv --out fig.png``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

SCHEMAS = {
    "evolution": ["t", "p_n0", "p_n1", "p_n2", "p_n3", "fid_plus0", "fid_bell", "ticks_mean"],
    "sweep": ["accuracy", "infidelity", "entropy_lower_bound"],
    "tradeoff": ["length", "epsilon", "clock_term", "total"],
}

SLOPE_FIT_MIN_ACCURACY = 100.0
PNG_METADATA = {"Software": "render"}


class SchemaError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class FigureJob:
    kind: str
    input_path: str
    output_path: str
    summary_path: str | None = None
    annotate_slope: bool = True


def read_table(path: str, kind: str) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    expected = SCHEMAS[kind]
    missing = [c for c in expected if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column {missing[0]!r} (expected {expected})")
    idx = {c: header.index(c) for c in expected}
    data = np.array([[float(r[idx[c]]) for c in expected] for r in rows])
    if data.size == 0:
        raise SchemaError(f"{path}: no data rows")
    return {c: data[:, k] for k, c in enumerate(expected)}


def fit_sweep_slope(accuracy: np.ndarray, infidelity: np.ndarray) -> float:
    """Least squares on log-log points, restricted to accuracies >= 100
    where the inverse-linear regime has set in."""
    mask = accuracy >= SLOPE_FIT_MIN_ACCURACY
    if mask.sum() < 2:
        mask = np.ones_like(accuracy, dtype=bool)
    coeffs = np.polyfit(np.log(accuracy[mask]), np.log(infidelity[mask]), 1)
    return float(coeffs[0])


def _new_figure():
    return plt.figure(figsize=(6.4, 4.2), dpi=130)


def render_evolution(table, out_path):
    fig = _new_figure()
    ax = fig.add_subplot(111)
    t = table["t"]
    ax.plot(t, table["fid_plus0"], color="tab:orange", label="fidelity with |+,0>")
    ax.plot(t, table["fid_bell"], color="tab:red", label="fidelity with the Bell state")
    ax.set_xlabel("time")
    ax.set_ylabel("fidelity")
    ax.set_ylim(0.0, 1.05)
    ax2 = ax.twinx()
    ax2.plot(t, table["ticks_mean"], "k--", label="expected ticks")
    ax2.set_ylabel("expected ticks")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, metadata=PNG_METADATA)
    plt.close(fig)
    return {}


def render_sweep(table, out_path, annotate=True):
    fig = _new_figure()
    ax = fig.add_subplot(111)
    acc, infid = table["accuracy"], table["infidelity"]
    ax.loglog(acc, infid, "o-", color="tab:blue")
    ax.set_xlabel("clock accuracy N")
    ax.set_ylabel("infidelity")
    slope = fit_sweep_slope(acc, infid)
    if annotate:
        ax.annotate(
            f"slope = {slope:.3f}",
            xy=(0.05, 0.1),
            xycoords="axes fraction",
            fontsize=10,
        )
    inset = fig.add_axes([0.62, 0.6, 0.27, 0.27])
    inset.loglog(acc, table["entropy_lower_bound"], "s-", color="tab:green", markersize=3)
    inset.set_xlabel("N", fontsize=7)
    inset.set_ylabel("entropy per tick >=", fontsize=7)
    inset.tick_params(labelsize=6)
    fig.savefig(out_path, metadata=PNG_METADATA)
    plt.close(fig)
    return {"slope": slope}


def render_tradeoff(table, out_path):
    fig = _new_figure()
    ax = fig.add_subplot(111)
    length = table["length"]
    ax.plot(length, table["epsilon"], "o-", label="compilation error")
    ax.plot(length, table["clock_term"], "s-", label="clock error")
    ax.plot(length, table["total"], "^-", label="total")
    k = int(np.argmin(table["total"]))
    ax.axvline(length[k], color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("sequence length")
    ax.set_ylabel("error")
    ax.legend(fontsize=9)
    fig.tight_layout()
    fig.savefig(out_path, metadata=PNG_METADATA)
    plt.close(fig)
    return {"argmin_length": int(length[k])}


def render_figures(jobs: list[FigureJob]) -> list[dict]:
    results = []
    for job in jobs:
        table = read_table(job.input_path, job.kind)
        if job.kind == "evolution":
            info = render_evolution(table, job.output_path)
        elif job.kind == "sweep":
            info = render_sweep(table, job.output_path, annotate=job.annotate_slope)
            if job.summary_path:
                with open(job.summary_path) as fh:
                    summary = json.load(fh)
                reference = summary["metrics"]["loglog_slope"]
                if abs(info["slope"] - reference) > 0.01:
                    raise SchemaError(
                        f"fitted slope {info['slope']:.4f} deviates from the summary "
                        f"value {reference:.4f} by more than 0.01"
                    )
        elif job.kind == "tradeoff":
            info = render_tradeoff(table, job.output_path)
        else:
            raise SchemaError(f"unknown figure kind {job.kind!r}")
        results.append(info)
    return results


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="render", description=__doc__)
    parser.add_argument("--kind", required=True, choices=sorted(SCHEMAS))
    parser.add_argument("--in", dest="input_path", required=True)
    parser.add_argument("--out", dest="output_path", required=True)
    parser.add_argument("--summary", dest="summary_path", default=None,
                        help="CLI summary JSON; sweep slope must match within 0.01")
    parser.add_argument("--no-slope-annotation", action="store_true")
    args = parser.parse_args(argv)
    job = FigureJob(
        kind=args.kind,
        input_path=args.input_path,
        output_path=args.output_path,
        summary_path=args.summary_path,
        annotate_slope=not args.no_slope_annotation,
    )
    try:
        render_figures([job])
    except (SchemaError, OSError) as exc:
        print(f"render error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
