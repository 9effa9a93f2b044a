"""Small self-contained SVG charts and a markdown report assembler.

No plotting dependency: the charts a run needs are polylines, bars and
scatter points, which fit in a few dozen lines of SVG.
"""

from __future__ import annotations

import html
import json
from pathlib import Path

import numpy as np

_WIDTH, _HEIGHT = 520, 340
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 56, 16, 34, 44
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _axes(x_min, x_max, y_min, y_max, title, xlabel, ylabel):
    if x_max <= x_min:
        x_max = x_min + 1.0
    if y_max <= y_min:
        y_max = y_min + 1.0
    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B

    def to_px(x, y):
        px = _MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w
        py = _HEIGHT - _MARGIN_B - (y - y_min) / (y_max - y_min) * plot_h
        return px, py

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2}" y="18" text-anchor="middle" font-size="13">'
        f"{html.escape(title)}</text>",
    ]
    # frame and tick labels
    x0, y0 = to_px(x_min, y_min)
    x1, y1 = to_px(x_max, y_max)
    parts.append(
        f'<rect x="{x1 - plot_w}" y="{y1}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#444"/>'
    )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x_min + frac * (x_max - x_min)
        yv = y_min + frac * (y_max - y_min)
        px, _ = to_px(xv, y_min)
        _, py = to_px(x_min, yv)
        parts.append(
            f'<text x="{px:.1f}" y="{y0 + 16:.1f}" text-anchor="middle">{xv:.3g}</text>'
        )
        parts.append(
            f'<text x="{_MARGIN_L - 6}" y="{py + 4:.1f}" text-anchor="end">{yv:.3g}</text>'
        )
        parts.append(
            f'<line x1="{px:.1f}" y1="{y0:.1f}" x2="{px:.1f}" y2="{y1:.1f}" '
            f'stroke="#ddd" stroke-width="0.5"/>'
        )
        parts.append(
            f'<line x1="{x0:.1f}" y1="{py:.1f}" x2="{x0 + plot_w:.1f}" y2="{py:.1f}" '
            f'stroke="#ddd" stroke-width="0.5"/>'
        )
    parts.append(
        f'<text x="{_MARGIN_L + plot_w / 2}" y="{_HEIGHT - 8}" text-anchor="middle">'
        f"{html.escape(xlabel)}</text>"
    )
    parts.append(
        f'<text x="14" y="{_MARGIN_T + plot_h / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {_MARGIN_T + plot_h / 2})">{html.escape(ylabel)}</text>'
    )
    return parts, to_px


def line_chart_svg(series, title="", xlabel="", ylabel="") -> str:
    """series: list of (name, xs, ys) tuples."""
    xs_all = np.concatenate([np.asarray(xs, float) for _, xs, _ in series if len(xs)])
    ys_all = np.concatenate([np.asarray(ys, float) for _, _, ys in series if len(ys)])
    parts, to_px = _axes(
        float(xs_all.min()), float(xs_all.max()),
        float(ys_all.min()), float(ys_all.max()),
        title, xlabel, ylabel,
    )
    for i, (name, xs, ys) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(
            f"{px:.1f},{py:.1f}" for px, py in (to_px(x, y) for x, y in zip(xs, ys))
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{_WIDTH - _MARGIN_R - 4}" y="{_MARGIN_T + 14 + 14 * i}" '
            f'text-anchor="end" fill="{color}">{html.escape(str(name))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def histogram_svg(edges, counts_by_name, title="", xlabel="", ylabel="count") -> str:
    """Overlaid bar charts sharing one set of bin edges."""
    edges = np.asarray(edges, dtype=float)
    top = max(int(np.max(c)) for c in counts_by_name.values()) or 1
    parts, to_px = _axes(float(edges[0]), float(edges[-1]), 0.0, float(top),
                         title, xlabel, ylabel)
    for i, (name, counts) in enumerate(counts_by_name.items()):
        color = _COLORS[i % len(_COLORS)]
        for j, count in enumerate(counts):
            if count == 0:
                continue
            px0, py = to_px(float(edges[j]), float(count))
            px1, py0 = to_px(float(edges[j + 1]), 0.0)
            parts.append(
                f'<rect x="{px0:.1f}" y="{py:.1f}" width="{max(px1 - px0, 0.5):.1f}" '
                f'height="{max(py0 - py, 0):.1f}" fill="{color}" fill-opacity="0.45"/>'
            )
        parts.append(
            f'<text x="{_WIDTH - _MARGIN_R - 4}" y="{_MARGIN_T + 14 + 14 * i}" '
            f'text-anchor="end" fill="{color}">{html.escape(str(name))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def scatter_svg(groups, title="", xlabel="", ylabel="") -> str:
    """groups: list of (name, xy_array) with xy_array shaped (n, 2)."""
    all_xy = np.concatenate([np.asarray(xy, float) for _, xy in groups if len(xy)])
    parts, to_px = _axes(
        float(all_xy[:, 0].min()), float(all_xy[:, 0].max()),
        float(all_xy[:, 1].min()), float(all_xy[:, 1].max()),
        title, xlabel, ylabel,
    )
    for i, (name, xy) in enumerate(groups):
        color = _COLORS[i % len(_COLORS)]
        for x, y in np.asarray(xy, float):
            px, py = to_px(x, y)
            parts.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="2" fill="{color}" '
                         f'fill-opacity="0.6"/>')
        parts.append(
            f'<text x="{_WIDTH - _MARGIN_R - 4}" y="{_MARGIN_T + 14 + 14 * i}" '
            f'text-anchor="end" fill="{color}">{html.escape(str(name))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# markdown assembly over a run directory


def _load_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


def _read_csv_columns(path: Path) -> dict[str, list[str]]:
    import csv

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[str]] = {name: [] for name in reader.fieldnames or ()}
        for row in reader:
            for name, value in row.items():
                cols[name].append(value)
    return cols


def render_run_report(run_dir, out_dir) -> list[Path]:
    """Render whatever artifacts a run directory holds into markdown + SVG.

    Understands train logs, ROC tables, score tables, latent analyses
    and sweep summaries; missing pieces are simply left out. Returns the
    list of files written.
    """
    run = Path(run_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    sections: list[str] = ["# Run report", "", f"Source: `{run}`", ""]

    def emit_svg(name: str, content: str, heading: str):
        svg_path = out / name
        svg_path.write_text(content)
        written.append(svg_path)
        sections.extend([f"## {heading}", "", f"![{heading}]({name})", ""])

    train_log = run / "train_log.csv"
    if train_log.is_file():
        cols = _read_csv_columns(train_log)
        steps = [int(s) for s in cols["step"]]
        series = []
        for column in ("critic_loss", "generator_loss", "encoder_loss"):
            pairs = [(s, float(v)) for s, v in zip(steps, cols[column]) if v != ""]
            if pairs:
                series.append((column, [p[0] for p in pairs], [p[1] for p in pairs]))
        if series:
            emit_svg(
                "training_losses.svg",
                line_chart_svg(series, "Training losses", "step", "loss"),
                "Training losses",
            )

    roc_csv = run / "roc.csv"
    if roc_csv.is_file():
        cols = _read_csv_columns(roc_csv)
        fpr = [float(v) for v in cols["fpr"]]
        tpr = [float(v) for v in cols["tpr"]]
        emit_svg(
            "roc.svg",
            line_chart_svg(
                [("ROC", fpr, tpr), ("chance", [0, 1], [0, 1])],
                "ROC", "false positive rate", "true positive rate",
            ),
            "ROC curve",
        )

    summary_json = run / "summary.json"
    if summary_json.is_file():
        summary = _load_json(summary_json)
        sections.extend(["## Summary", "", "```json",
                         json.dumps(summary, indent=2, sort_keys=True), "```", ""])

    hist_csv = run / "latent_histograms.csv"
    if hist_csv.is_file():
        cols = _read_csv_columns(hist_csv)
        edges = [float(v) for v in cols["bin_left"]] + [float(cols["bin_right"][-1])]
        counts = {
            name: np.asarray([int(v) for v in values])
            for name, values in cols.items()
            if name not in ("bin_left", "bin_right")
        }
        emit_svg(
            "latent_histograms.svg",
            histogram_svg(edges, counts, "Latent coefficients", "coefficient value"),
            "Latent coefficient histograms",
        )

    proj_csv = run / "projection.csv"
    if proj_csv.is_file():
        cols = _read_csv_columns(proj_csv)
        groups = {}
        for label, p1, p2 in zip(cols["label"], cols["pc1"], cols["pc2"]):
            groups.setdefault(label, []).append((float(p1), float(p2)))
        emit_svg(
            "projection.svg",
            scatter_svg(
                [(k, np.asarray(v)) for k, v in sorted(groups.items())],
                "Latent projection", "first component", "second component",
            ),
            "Latent 2D projection",
        )

    sweep_csv = run / "sweep.csv"
    if sweep_csv.is_file():
        cols = _read_csv_columns(sweep_csv)
        sections.extend(["## Sweep results", "",
                         "| gamma | mode | variant | seed | auc |",
                         "|---|---|---|---|---|"])
        for i in range(len(cols["gamma"])):
            if cols["error"][i]:
                continue
            sections.append(
                "| {gamma} | {mode} | {variant} | {seed} | {auc:.4f} |".format(
                    gamma=cols["gamma"][i],
                    mode=cols["mode"][i],
                    variant=cols["variant"][i],
                    seed=cols["seed"][i],
                    auc=float(cols["auc"][i]),
                )
            )
        failures = [e for e in cols["error"] if e]
        if failures:
            sections.append("")
            sections.append(f"{len(failures)} cell(s) failed; see sweep.csv.")
        sections.append("")

    report_path = out / "report.md"
    report_path.write_text("\n".join(sections))
    written.append(report_path)
    return written
