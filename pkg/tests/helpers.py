"""Shared scene builders and independent oracles for the test suite."""
from __future__ import annotations

import math
import random

import numpy as np

from bladeinspect.geometry import Detection, OrientedBox


def rotated_rect(cx, cy, w, h, theta):
    c, s = math.cos(theta), math.sin(theta)
    pts = []
    for dx, dy in ((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)):
        pts.append((cx + dx * c - dy * s, cy + dx * s + dy * c))
    return pts


def random_box(rng: random.Random, max_side=0.35, center=None, spread=0.0):
    """Random rotated rectangle fully inside the unit square."""
    while True:
        if center is None:
            cx, cy = rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)
        else:
            cx = center[0] + rng.uniform(-spread, spread)
            cy = center[1] + rng.uniform(-spread, spread)
        w, h = rng.uniform(0.02, max_side), rng.uniform(0.02, max_side)
        pts = rotated_rect(cx, cy, w, h, rng.uniform(0, math.pi))
        if all(0.0 <= x <= 1.0 and 0.0 <= y <= 1.0 for x, y in pts):
            return OrientedBox.from_coords(pts)


def random_convex_quad(rng: random.Random, center, spread=0.2):
    """Random convex (not necessarily rectangular) quadrilateral."""
    while True:
        angles = sorted(rng.uniform(0, 2 * math.pi) for _ in range(4))
        radii = [rng.uniform(0.05, spread) for _ in range(4)]
        pts = [(center[0] + r * math.cos(a), center[1] + r * math.sin(a)) for a, r in zip(angles, radii)]
        if not all(0.0 <= x <= 1.0 and 0.0 <= y <= 1.0 for x, y in pts):
            continue
        # keep only strictly convex outlines
        signs = []
        for i in range(4):
            o, a, b = pts[i], pts[(i + 1) % 4], pts[(i + 2) % 4]
            signs.append((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))
        if all(s > 1e-4 for s in signs):
            return OrientedBox.from_coords(pts)


def _inside_convex(px, py, poly):
    poly = np.asarray(poly)
    area = 0.5 * np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
    if area < 0:
        poly = poly[::-1]
    inside = np.ones_like(px, dtype=bool)
    for i in range(len(poly)):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % len(poly)]
        inside &= (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0
    return inside


def monte_carlo_iou(a: OrientedBox, b: OrientedBox, samples=100_000, seed=0):
    pa, pb = a.as_tuples(), b.as_tuples()
    pts = np.array(pa + pb)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    gen = np.random.default_rng(seed)
    xs = gen.uniform(lo[0], hi[0], samples)
    ys = gen.uniform(lo[1], hi[1], samples)
    in_a = _inside_convex(xs, ys, pa)
    in_b = _inside_convex(xs, ys, pb)
    union = np.count_nonzero(in_a | in_b)
    return 0.0 if union == 0 else np.count_nonzero(in_a & in_b) / union


def shapely_iou(a: OrientedBox, b: OrientedBox) -> float:
    from shapely.geometry import Polygon

    pa, pb = Polygon(a.as_tuples()), Polygon(b.as_tuples())
    union = pa.union(pb).area
    return 0.0 if union == 0 else pa.intersection(pb).area / union


def brute_force_nms(detections, iou_threshold):
    """Reference greedy NMS: repeatedly take the best survivor, strike its same-class overlaps."""
    remaining = list(enumerate(detections))
    kept = []
    while remaining:
        best = remaining[0]
        for cand in remaining[1:]:
            key_c = (-cand[1].confidence, cand[1].source_tile if cand[1].source_tile is not None else math.inf, cand[0])
            key_b = (-best[1].confidence, best[1].source_tile if best[1].source_tile is not None else math.inf, best[0])
            if key_c < key_b:
                best = cand
        kept.append(best[1])
        remaining = [
            r
            for r in remaining
            if r is not best
            and not (r[1].class_label == best[1].class_label and shapely_iou(r[1].box, best[1].box) >= iou_threshold)
        ]
    return kept


CLASSES = ("coating", "dirt", "VG-missing-teeth", "markings")


def seam_scene(rng: random.Random, n_objects=6, max_dupes=3):
    """Objects plus jittered near-duplicates, as produced by overlapping tile margins."""
    dets = []
    for _ in range(n_objects):
        base = random_box(rng, max_side=0.25)
        cls = rng.choice(CLASSES)
        tile = rng.randrange(6)
        dets.append(Detection(base, cls, round(rng.uniform(0.3, 0.99), 3), source_tile=tile))
        for _ in range(rng.randrange(max_dupes + 1)):
            jitter = rng.uniform(0.0, 0.03)
            pts = [
                (min(max(x + rng.uniform(-jitter, jitter), 0.0), 1.0), min(max(y + rng.uniform(-jitter, jitter), 0.0), 1.0))
                for x, y in base.as_tuples()
            ]
            try:
                box = OrientedBox.from_coords(pts)
            except ValueError:
                continue
            dup_cls = cls if rng.random() < 0.85 else rng.choice(CLASSES)
            dets.append(Detection(box, dup_cls, round(rng.uniform(0.3, 0.99), 3), source_tile=rng.randrange(6)))
    rng.shuffle(dets)
    return dets


# --------------------------------------------------------------------------
# self-consistent report fixtures and single-field corruptions

CORRUPTION_KINDS = ("grid_swap", "corner_shift", "fabricated_procedure", "class_rename")
EXPECTED_VIOLATION = {
    "grid_swap": "grid_mismatch",
    "corner_shift": "corner_drift",
    "fabricated_procedure": "unknown_procedure",
    "class_rename": "unknown_class",
}


def clean_fixture(rng: random.Random, kb, n=None):
    """Evidence boxes in distinct grid cells plus a report copied from them."""
    from bladeinspect.generation import DefectEntry, MaintenanceReport

    n = n if n is not None else rng.randint(1, 4)
    cells = rng.sample(range(9), n)
    evidence = []
    for cell in cells:
        u, v = cell % 3, cell // 3
        cx = (u + 0.5) / 3 + rng.uniform(-0.05, 0.05)
        cy = (v + 0.5) / 3 + rng.uniform(-0.05, 0.05)
        pts = rotated_rect(cx, cy, rng.uniform(0.03, 0.1), rng.uniform(0.03, 0.1), rng.uniform(0, math.pi))
        cls = rng.choice(CLASSES)
        evidence.append(Detection(OrientedBox.from_coords(pts), cls, round(rng.uniform(0.7, 1.0), 3)))
    defects = [
        DefectEntry.from_detection(
            d,
            severity_code=f"S{rng.randint(1, 3)}",
            procedure_ref=kb.for_class(d.class_label)[0].procedure_id,
            urgency=rng.choice(["routine", "scheduled", "immediate"]),
            recommendation=kb.for_class(d.class_label)[0].body,
        )
        for d in evidence
    ]
    return evidence, MaintenanceReport(defects, report_id="RPT-x", image_id="x", summary="ok")


def corrupt(report, kind: str, rng: random.Random, index=None):
    """Copy of ``report`` with exactly one field of one entry corrupted."""
    import copy

    from bladeinspect.geometry import GRID_LABELS

    out = copy.deepcopy(report)
    i = rng.randrange(len(out.defects)) if index is None else index
    e = out.defects[i]
    if kind == "grid_swap":
        e.grid_label = rng.choice([g for g in GRID_LABELS if g is not e.grid_label])
    elif kind == "corner_shift":
        cx, cy = e.centroid
        # push away from the image centre so the box stays inside the frame
        dx = -0.08 if cx > 0.5 else 0.08
        dy = -0.08 if cy > 0.5 else 0.08
        e.obb_corners = tuple((x + dx, y + dy) for x, y in e.obb_corners)
    elif kind == "fabricated_procedure":
        e.procedure_ref = f"ZZ-{rng.randint(900, 999)}"
    elif kind == "class_rename":
        e.defect_class = rng.choice(["erosion", "crack", "lightning-strike"])
    else:
        raise ValueError(kind)
    return out, i


def build_workspace(root, images, endpoints=None, size=(640, 640), **extra):
    """Manifest + detection files + config under ``root``; returns the config path.

    ``images`` is a list of (image_id, split, detections).
    """
    import json
    from pathlib import Path

    from bladeinspect.ingest import write_detection_file

    root = Path(root)
    det_dir = root / "detections"
    det_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"taxonomy": list(CLASSES), "images": []}
    for image_id, split, dets in images:
        manifest["images"].append({"id": image_id, "width": size[0], "height": size[1],
                                   "path": f"images/{image_id}.jpg", "split": split})
        if dets is not None:
            write_detection_file(det_dir / f"{image_id}.txt", dets, CLASSES)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    config = {"manifest": "manifest.json", "detections_dir": "detections", "output_dir": "out", **extra}
    if endpoints:
        config["endpoints"] = endpoints
    path = root / "config.json"
    path.write_text(json.dumps(config, indent=1))
    return path


def endpoint_block(url, **kw):
    return {"endpoint_url": url, "model_id": "mock", "backoff_s": 0.0, "timeout_s": 5.0, **kw}
