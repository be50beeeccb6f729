"""Paired fitting sweeps: primitive kind x count, and eps-range ablation."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import replace

from .metrics import evaluate
from .optimizer import FitConfig, fit, predict_grid
from .rasterizer import OccupancyGrid

log = logging.getLogger(__name__)


def fit_and_score(scene: OccupancyGrid, config: FitConfig):
    """Fit, re-voxelize at ``config.tau`` and score against the scene."""
    t0 = time.perf_counter()
    result = fit(scene, config)
    m = evaluate(predict_grid(result.primitives, scene.spec, config), scene)
    return {"iou": m["iou"], "miou": m["miou"], "seconds": time.perf_counter() - t0,
            "primitives": result.primitives}


def compare(scene: OccupancyGrid, counts, kinds, base: FitConfig):
    """One row per ``(kind, count)``.  Every fit shares the scene and the seed."""
    rows = []
    for count in counts:
        for kind in kinds:
            cfg = replace(base, primitive_count=int(count), primitive_kind=kind,
                          prune_split_count=None)
            r = fit_and_score(scene, cfg)
            log.info("%s x %d: iou %.4f miou %.4f (%.1fs)", cfg.primitive_kind, count,
                     r["iou"], r["miou"], r["seconds"])
            rows.append({"kind": cfg.primitive_kind, "count": int(count), "iou": r["iou"],
                         "miou": r["miou"], "seconds": r["seconds"]})
    return rows


def ablate_eps(scene: OccupancyGrid, ranges, base: FitConfig):
    """One superquadric fit per eps range ``(lo, hi)``."""
    rows = []
    for lo, hi in ranges:
        cfg = replace(base, primitive_kind="superquadric", eps_bounds=(lo, hi))
        r = fit_and_score(scene, cfg)
        log.info("eps (%g, %g): iou %.4f miou %.4f", lo, hi, r["iou"], r["miou"])
        rows.append({"eps_lo": lo, "eps_hi": hi, "iou": r["iou"], "miou": r["miou"],
                     "seconds": r["seconds"]})
    return rows


def format_table(rows, columns, delimiter=","):
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([f"{row[c]:g}" if c.startswith("eps") else _fmt(row[c]) for c in columns])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}" if abs(v) < 1e6 else f"{v:g}"
    return str(v)
