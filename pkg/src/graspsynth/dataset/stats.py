"""Dataset statistics: grasp-width histogram, per-scene counts, mask coverage, quality."""
from __future__ import annotations

import numpy as np

WIDTH_BIN = 0.005
WIDTH_BINS = 8


def width_histogram(widths, bin_width: float = WIDTH_BIN, bins: int = WIDTH_BINS) -> dict:
    """Counts per ``[k d, (k+1) d)`` bin; the top bin is closed so ``w = bins * d`` lands in it.

    Widths above the top edge are counted separately as ``overflow``.
    """
    w = np.asarray(widths, dtype=np.float64).ravel()
    top = bins * bin_width
    over = w > top + 1e-12
    k = np.clip(np.floor(w[~over] / bin_width).astype(np.int64), 0, bins - 1)
    counts = np.bincount(k, minlength=bins)
    edges = [round(i * bin_width, 12) for i in range(bins + 1)]
    return {"edges": edges, "counts": [int(c) for c in counts], "overflow": int(over.sum()),
            "total": int(len(w))}


def dataset_stats(scenes: list, bin_width: float = WIDTH_BIN, bins: int = WIDTH_BINS) -> dict:
    """Aggregate per-scene label summaries.

    Each summary is a dict with ``scene_id``, ``positive_widths``,
    ``positive_qualities``, ``n_positive_grasps``, ``n_collided_grasps`` and
    ``mask_counts`` (``positive`` / ``negative`` / ``unlabeled`` point counts).
    """
    widths = np.concatenate([np.asarray(s.get("positive_widths", []), dtype=np.float64) for s in scenes]) \
        if scenes else np.zeros(0)
    quality = np.concatenate([np.asarray(s.get("positive_qualities", []), dtype=np.float64) for s in scenes]) \
        if scenes else np.zeros(0)
    masks = {"positive": 0, "negative": 0, "unlabeled": 0}
    per_scene = []
    for s in scenes:
        mc = s.get("mask_counts", {})
        for k in masks:
            masks[k] += int(mc.get(k, 0))
        per_scene.append({"scene_id": s["scene_id"], "positive_grasps": int(s.get("n_positive_grasps", 0)),
                          "negative_grasps": int(s.get("n_collided_grasps", 0))})
    n_points = sum(masks.values())
    coverage = {k: (v / n_points if n_points else 0.0) for k, v in masks.items()}
    if len(quality):
        qs = np.quantile(quality, [0.0, 0.25, 0.5, 0.75, 1.0])
        qstats = {"count": int(len(quality)), "mean": float(quality.mean()),
                  "quantiles": {k: float(v) for k, v in zip(("min", "q25", "median", "q75", "max"), qs)}}
    else:
        qstats = {"count": 0, "mean": 0.0, "quantiles": {}}
    return {
        "width_histogram": width_histogram(widths, bin_width, bins),
        "positive_grasps": int(len(widths)),
        "max_width": float(widths.max()) if len(widths) else 0.0,
        "per_scene": per_scene,
        "mask_counts": masks,
        "mask_coverage": coverage,
        "quality": qstats,
    }


def format_stats(report: dict) -> str:
    """Plain-text table of a :func:`dataset_stats` report."""
    h = report["width_histogram"]
    total = max(1, sum(h["counts"]))
    lines = ["grasp width histogram", f"{'range [cm]':>14}  {'count':>7}  {'share':>6}"]
    for k, c in enumerate(h["counts"]):
        lo, hi = 100 * h["edges"][k], 100 * h["edges"][k + 1]
        lines.append(f"{lo:6.1f} - {hi:4.1f}  {c:7d}  {c / total:6.1%}")
    if h["overflow"]:
        lines.append(f"{'overflow':>14}  {h['overflow']:7d}")
    lines.append(f"positive grasps: {report['positive_grasps']}  (max width {report['max_width']:.4f} m)")
    cov = report["mask_coverage"]
    lines.append("mask coverage: " + ", ".join(f"{k} {v:.1%}" for k, v in cov.items()))
    q = report["quality"]
    if q["count"]:
        qq = q["quantiles"]
        lines.append(f"quality: mean {q['mean']:.4f}, median {qq['median']:.4f}, max {qq['max']:.4f}")
    return "\n".join(lines)
