"""Oriented-box geometry: tiling plans, tile/frame coordinate remapping,
centroids, 3x3 grid labels, rotated IoU and cross-tile NMS.

Every box here lives in normalized ``[0, 1]^2`` coordinates; pixel values only
appear in tiling offsets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

COORD_TOL = 1e-9


class GeometryError(ValueError):
    """Invalid geometry: bad tiling request, malformed box, inconsistent offset."""


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise GeometryError(f"point ({self.x}, {self.y}) outside the unit square")


def _cross(o: tuple[float, float], a: tuple[float, float], b: tuple[float, float]) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_cross(p1, p2, q1, q2) -> bool:
    """True when the two segments intersect at a single interior point."""
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


@dataclass(frozen=True)
class OrientedBox:
    corners: tuple[Point, Point, Point, Point]

    def __post_init__(self):
        corners = tuple(self.corners)
        if len(corners) != 4:
            raise GeometryError(f"an oriented box needs exactly 4 corners, got {len(corners)}")
        object.__setattr__(self, "corners", corners)
        pts = self.as_tuples()
        # opposite edges of a simple quadrilateral never cross
        if _segments_cross(pts[0], pts[1], pts[2], pts[3]) or _segments_cross(
            pts[1], pts[2], pts[3], pts[0]
        ):
            raise GeometryError(f"self-intersecting quadrilateral {pts}")

    @classmethod
    def from_coords(cls, coords: Iterable[Sequence[float]]) -> "OrientedBox":
        return cls(tuple(Point(float(x), float(y)) for x, y in coords))

    @classmethod
    def from_flat(cls, values: Sequence[float]) -> "OrientedBox":
        if len(values) != 8:
            raise GeometryError(f"expected 8 coordinates, got {len(values)}")
        return cls.from_coords(zip(values[0::2], values[1::2]))

    def as_tuples(self) -> list[tuple[float, float]]:
        return [(p.x, p.y) for p in self.corners]

    def flat(self) -> list[float]:
        return [v for p in self.corners for v in (p.x, p.y)]


@dataclass(frozen=True)
class Detection:
    """One detector output: box, class label, confidence, originating tile."""

    box: OrientedBox
    class_label: str
    confidence: float
    source_tile: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise GeometryError(f"confidence {self.confidence} outside [0, 1]")
        if not self.class_label:
            raise GeometryError("empty class label")


# --------------------------------------------------------------------------
# tiling


@dataclass(frozen=True)
class TileOffset:
    index: int
    col_px: int
    row_px: int


@dataclass(frozen=True)
class TilePlan:
    image_width_px: int
    image_height_px: int
    tile_size_px: int
    overlap_ratio: float
    stride_px: int
    offsets: tuple[TileOffset, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.offsets)

    def covers(self, px: int, py: int) -> bool:
        t = self.tile_size_px
        return any(o.col_px <= px < o.col_px + t and o.row_px <= py < o.row_px + t for o in self.offsets)

    def to_dict(self) -> dict:
        return {
            "image_width_px": self.image_width_px,
            "image_height_px": self.image_height_px,
            "tile_size_px": self.tile_size_px,
            "overlap_ratio": self.overlap_ratio,
            "stride_px": self.stride_px,
            "tile_count": len(self.offsets),
            "offsets": [{"index": o.index, "col_px": o.col_px, "row_px": o.row_px} for o in self.offsets],
        }


def _axis_offsets(dim: int, tile: int, stride: int) -> list[int]:
    last = dim - tile
    positions = list(range(0, last + 1, stride))
    if positions[-1] != last:
        positions.append(last)
    return positions


def tile_plan(image_width_px: int, image_height_px: int, tile_size_px: int, overlap_ratio: float) -> TilePlan:
    """Sliding-window decomposition of a frame into square tiles.

    The stride is ``round(tile_size_px * (1 - overlap_ratio))`` (half-up); the
    last window on each axis is pulled back flush with the image border so
    every pixel is covered and no tile is partial. Offsets are row-major.
    """
    if tile_size_px < 1:
        raise GeometryError(f"tile size must be positive, got {tile_size_px}")
    if not 0.0 <= overlap_ratio < 1.0:
        raise GeometryError(f"overlap ratio must lie in [0, 1), got {overlap_ratio}")
    if image_width_px < tile_size_px or image_height_px < tile_size_px:
        raise GeometryError(
            f"image {image_width_px}x{image_height_px} is smaller than tile {tile_size_px}; pad or resize first"
        )
    stride = math.floor(tile_size_px * (1.0 - overlap_ratio) + 0.5)
    if stride < 1:
        raise GeometryError(f"overlap {overlap_ratio} leaves a zero stride for tile {tile_size_px}")
    cols = _axis_offsets(image_width_px, tile_size_px, stride)
    rows = _axis_offsets(image_height_px, tile_size_px, stride)
    offsets = tuple(
        TileOffset(index=i, col_px=c, row_px=r)
        for i, (r, c) in enumerate((r, c) for r in rows for c in cols)
    )
    return TilePlan(image_width_px, image_height_px, tile_size_px, overlap_ratio, stride, offsets)


def _snap(v: float, what: str) -> float:
    if -COORD_TOL <= v < 0.0:
        return 0.0
    if 1.0 < v <= 1.0 + COORD_TOL:
        return 1.0
    if not 0.0 <= v <= 1.0:
        raise GeometryError(f"{what} coordinate {v} leaves the unit square; offset and plan disagree")
    return v


def to_global(
    local_box: OrientedBox,
    offset: TileOffset,
    tile_size_px: int,
    image_width_px: int,
    image_height_px: int,
) -> OrientedBox:
    """Map a box normalized to its tile's frame into full-frame coordinates."""
    return OrientedBox(
        tuple(
            Point(
                _snap((p.x * tile_size_px + offset.col_px) / image_width_px, "global"),
                _snap((p.y * tile_size_px + offset.row_px) / image_height_px, "global"),
            )
            for p in local_box.corners
        )
    )


def to_local(
    global_box: OrientedBox,
    offset: TileOffset,
    tile_size_px: int,
    image_width_px: int,
    image_height_px: int,
) -> OrientedBox:
    """Inverse of :func:`to_global`; fails if the box is not inside the tile."""
    return OrientedBox(
        tuple(
            Point(
                _snap((p.x * image_width_px - offset.col_px) / tile_size_px, "local"),
                _snap((p.y * image_height_px - offset.row_px) / tile_size_px, "local"),
            )
            for p in global_box.corners
        )
    )


# --------------------------------------------------------------------------
# grid


class GridLabel(str, Enum):
    TOP_LEFT = "Top-Left (Leading Edge)"
    TOP_CENTRE = "Top-Centre"
    TOP_RIGHT = "Top-Right (Trailing Edge)"
    MID_LEFT = "Mid-Left"
    CENTRE = "Centre"
    MID_RIGHT = "Mid-Right"
    BOTTOM_LEFT = "Bottom-Left"
    BOTTOM_CENTRE = "Bottom-Centre"
    BOTTOM_RIGHT = "Bottom-Right"

    @property
    def rendered(self) -> str:
        """Name with the edge annotation after a slash: ``Top-Right / Trailing Edge``."""
        name, sep, note = self.value.partition(" (")
        return f"{name} / {note.rstrip(')')}" if sep else name

    @classmethod
    def parse(cls, text: str) -> "GridLabel":
        """Accept the canonical or the slash-rendered form."""
        key = " ".join(text.strip().split())
        for label in cls:
            if key in (label.value, label.rendered):
                return label
        raise ValueError(f"unknown grid label {text!r}")


GRID_LABELS: tuple[GridLabel, ...] = tuple(GridLabel)


def centroid(box: OrientedBox) -> Point:
    return Point(
        math.fsum(p.x for p in box.corners) / 4.0,
        math.fsum(p.y for p in box.corners) / 4.0,
    )


def grid_cell(p: Point) -> GridLabel:
    u = min(max(math.floor(3 * p.x), 0), 2)
    v = min(max(math.floor(3 * p.y), 0), 2)
    return GRID_LABELS[v * 3 + u]


# --------------------------------------------------------------------------
# rotated IoU


def polygon_area(pts: Sequence[tuple[float, float]]) -> float:
    """Signed shoelace area; positive for counter-clockwise winding."""
    n = len(pts)
    if n < 3:
        return 0.0
    return 0.5 * math.fsum(
        pts[i][0] * pts[(i + 1) % n][1] - pts[(i + 1) % n][0] * pts[i][1] for i in range(n)
    )


def _ccw(pts: list[tuple[float, float]]) -> list[tuple[float, float]]:
    return pts if polygon_area(pts) >= 0 else pts[::-1]


def clip_convex(subject: list[tuple[float, float]], clip: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Intersect two counter-clockwise convex polygons (Sutherland-Hodgman)."""
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a, b = clip[i], clip[(i + 1) % n]
        if a == b:
            continue
        inputs, output = output, []
        for j in range(len(inputs)):
            cur, prev = inputs[j], inputs[j - 1]
            cur_in = _cross(a, b, cur) >= 0
            prev_in = _cross(a, b, prev) >= 0
            if cur_in != prev_in:
                # edge prev->cur crosses the clip line
                dp = _cross(a, b, prev)
                dc = _cross(a, b, cur)
                t = dp / (dp - dc)
                output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            if cur_in:
                output.append(cur)
    return output


def _convex_pieces(pts: list[tuple[float, float]]) -> list[list[tuple[float, float]]]:
    """Split a simple ccw quadrilateral into convex parts.

    Jittered detector boxes are occasionally dented; a quadrilateral has at most one
    reflex corner, and the diagonal from it to the opposite corner lies inside.
    """
    reflex = [i for i in range(4) if _cross(pts[i - 1], pts[i], pts[(i + 1) % 4]) < 0]
    if not reflex:
        return [pts]
    r = reflex[0]
    p = [pts[(r + k) % 4] for k in range(4)]
    return [[p[0], p[1], p[2]], [p[0], p[2], p[3]]]


def rotated_iou(a: OrientedBox, b: OrientedBox) -> float:
    pa = _ccw(a.as_tuples())
    pb = _ccw(b.as_tuples())
    area_a = polygon_area(pa)
    area_b = polygon_area(pb)
    if area_a <= 0.0 or area_b <= 0.0:
        inter = 0.0
    else:
        inter = math.fsum(
            abs(polygon_area(clip_convex(x, y))) for x in _convex_pieces(pa) for y in _convex_pieces(pb)
        )
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


# --------------------------------------------------------------------------
# NMS


def _nms_order(detections: Sequence[Detection]) -> list[int]:
    return sorted(
        range(len(detections)),
        key=lambda i: (
            -detections[i].confidence,
            math.inf if detections[i].source_tile is None else detections[i].source_tile,
            i,
        ),
    )


def nms(detections: Sequence[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Class-aware greedy suppression of duplicates from overlapping tile margins."""
    kept: dict[str, list[Detection]] = {}
    out: list[Detection] = []
    for i in _nms_order(detections):
        d = detections[i]
        same_class = kept.setdefault(d.class_label, [])
        if all(rotated_iou(d.box, k.box) < iou_threshold for k in same_class):
            same_class.append(d)
            out.append(d)
    return out


def merge_tiles(
    per_tile: dict[int, Sequence[Detection]],
    plan: TilePlan,
    iou_threshold: float = 0.5,
) -> list[Detection]:
    """Translate tile-local detections to the full frame and run NMS."""
    by_index = {o.index: o for o in plan.offsets}
    merged = []
    for index in sorted(per_tile):
        if index not in by_index:
            raise GeometryError(f"tile {index} is not part of the plan ({len(plan)} tiles)")
        off = by_index[index]
        for d in per_tile[index]:
            box = to_global(d.box, off, plan.tile_size_px, plan.image_width_px, plan.image_height_px)
            merged.append(Detection(box, d.class_label, d.confidence, source_tile=index))
    return nms(merged, iou_threshold)
