"""Rasterized occupancy costmap with no-go masks and cost inflation.

No-go polygons (vegetation, water, neighboring collars) are rasterized
to lethal cells; an inflation band around them decays exponentially so
the planner is steered away from anything it could collide with or
sink into.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

LETHAL = 255
INSCRIBED = 254
_DECAY_TOP = 253  # first cost value outside the inscribed band

REGION_KINDS = ("vegetation", "water", "collar", "generic")


class RegionInvalidError(ValueError):
    """Raised for degenerate or self-intersecting no-go polygons."""


class OutOfBoundsError(ValueError):
    """Raised when a queried pose lies outside the map extent."""


def _segments_properly_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-15 else (1 if v > 0 else -1)

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


@dataclass(frozen=True)
class NoGoRegion:
    """Simple polygon marked untraversable, tagged with a terrain kind."""

    polygon: tuple[tuple[float, float], ...]
    kind: str = "generic"

    def __post_init__(self) -> None:
        if self.kind not in REGION_KINDS:
            raise RegionInvalidError(f"unknown region kind {self.kind!r}")
        pts = [tuple(map(float, p)) for p in self.polygon]
        if len(pts) < 3:
            raise RegionInvalidError("polygon needs at least 3 vertices")
        area = 0.0
        for i in range(len(pts)):
            x1, y1 = pts[i]
            x2, y2 = pts[(i + 1) % len(pts)]
            area += x1 * y2 - x2 * y1
        if abs(area) < 1e-12:
            raise RegionInvalidError("polygon has zero area")
        n = len(pts)
        for i in range(n):
            for j in range(i + 1, n):
                if abs(i - j) in (0, 1) or (i == 0 and j == n - 1):
                    continue  # adjacent edges share a vertex
                a, b = pts[i], pts[(i + 1) % n]
                c, d = pts[j], pts[(j + 1) % n]
                if _segments_properly_intersect(a, b, c, d):
                    raise RegionInvalidError("polygon is self-intersecting")
        object.__setattr__(self, "polygon", tuple(pts))

    @classmethod
    def circle(cls, center, radius: float, kind: str = "collar", sides: int = 16) -> "NoGoRegion":
        """Regular-polygon approximation of a circular keep-out."""
        cx, cy = float(center[0]), float(center[1])
        ang = np.linspace(0.0, 2.0 * math.pi, sides, endpoint=False)
        pts = tuple((cx + radius * math.cos(a), cy + radius * math.sin(a)) for a in ang)
        return cls(pts, kind)


def _points_in_polygon(px: np.ndarray, py: np.ndarray, polygon) -> np.ndarray:
    """Even-odd point-in-polygon test, vectorized over points."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = (x2 - x1) * (py - y1) / (y2 - y1) + x1
        inside ^= crosses & (px < x_at)
    return inside


@dataclass
class OccupancyCostmap:
    """Grid of traversal costs in [0, 254] plus LETHAL=255.

    Cell (ix, iy) covers [origin + i*res, origin + (i+1)*res); queries
    use cell centers. dist_to_lethal holds, per cell, the distance in
    meters from the cell center to the nearest lethal cell center
    (inf when the map has no lethal cells).
    """

    origin: tuple[float, float]
    resolution: float
    width: int
    height: int
    cost: np.ndarray  # uint8, shape (height, width), indexed [iy, ix]
    dist_to_lethal: np.ndarray = field(repr=False, default=None)
    _nearest_idx: np.ndarray = field(repr=False, default=None)
    robot_radius: float = 0.0
    inflation_radius: float = 0.0
    cost_scaling: float = 3.0

    @property
    def extent(self) -> tuple[float, float, float, float]:
        ox, oy = self.origin
        return (ox, oy, ox + self.width * self.resolution, oy + self.height * self.resolution)

    def contains(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.extent
        return xmin <= x < xmax and ymin <= y < ymax

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        ix = int(math.floor((x - self.origin[0]) / self.resolution))
        iy = int(math.floor((y - self.origin[1]) / self.resolution))
        return ix, iy

    def center_of(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def cost_at(self, x: float, y: float) -> int:
        """Cell cost at a map point; out-of-map points read as lethal."""
        if not self.contains(x, y):
            return LETHAL
        ix, iy = self.cell_of(x, y)
        return int(self.cost[iy, ix])

    def clearance(self, x: float, y: float) -> float:
        """Distance from a map point to the nearest lethal cell center."""
        if not self.contains(x, y):
            return 0.0
        ix, iy = self.cell_of(x, y)
        if self._nearest_idx is None:
            return math.inf
        ny, nx = self._nearest_idx[:, iy, ix]
        cx, cy = self.center_of(int(nx), int(ny))
        return math.hypot(x - cx, y - cy)

    def save_pgm(self, path: str) -> None:
        """Dump the cost grid as a portable graymap for debugging."""
        with open(path, "wb") as fh:
            fh.write(f"P5\n{self.width} {self.height}\n255\n".encode("ascii"))
            fh.write(np.flipud(self.cost).astype(np.uint8).tobytes())


def _inflate(lethal: np.ndarray, resolution: float, robot_radius: float,
             inflation_radius: float, cost_scaling: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cost grid from a lethal mask. Pure function of the mask, so
    inflating an already-inflated map is a no-op by construction."""
    h, w = lethal.shape
    cost = np.zeros((h, w), dtype=np.uint8)
    if not lethal.any():
        dist = np.full((h, w), np.inf, dtype=np.float64)
        return cost, dist, None
    dist_cells, nearest = distance_transform_edt(~lethal, return_indices=True)
    dist = dist_cells * resolution
    cost[dist <= robot_radius] = INSCRIBED
    band = (dist > robot_radius) & (dist < inflation_radius)
    decay = _DECAY_TOP * np.exp(-cost_scaling * (dist[band] - robot_radius))
    cost[band] = np.rint(decay).astype(np.uint8)
    cost[lethal] = LETHAL
    return cost, dist, nearest


def build_costmap(
    origin: tuple[float, float],
    size: tuple[float, float],
    resolution: float,
    regions: list[NoGoRegion] = (),
    robot_radius: float = 0.30,
    inflation_radius: float = 0.8,
    cost_scaling: float = 3.0,
) -> OccupancyCostmap:
    """Rasterize no-go regions into a lethal mask and inflate it."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if inflation_radius < robot_radius:
        raise ValueError("inflation_radius must be at least robot_radius")
    width = max(1, int(round(size[0] / resolution)))
    height = max(1, int(round(size[1] / resolution)))
    xs = origin[0] + (np.arange(width) + 0.5) * resolution
    ys = origin[1] + (np.arange(height) + 0.5) * resolution
    px, py = np.meshgrid(xs, ys)
    lethal = np.zeros((height, width), dtype=bool)
    for region in regions:
        lethal |= _points_in_polygon(px, py, region.polygon)
    cost, dist, nearest = _inflate(lethal, resolution, robot_radius, inflation_radius, cost_scaling)
    return OccupancyCostmap(
        origin=(float(origin[0]), float(origin[1])),
        resolution=float(resolution),
        width=width,
        height=height,
        cost=cost,
        dist_to_lethal=dist,
        _nearest_idx=nearest,
        robot_radius=robot_radius,
        inflation_radius=inflation_radius,
        cost_scaling=cost_scaling,
    )


def add_lethal_mask(cmap: OccupancyCostmap, regions: list[NoGoRegion]) -> OccupancyCostmap:
    """New costmap with extra no-go regions merged in and re-inflated."""
    xs = cmap.origin[0] + (np.arange(cmap.width) + 0.5) * cmap.resolution
    ys = cmap.origin[1] + (np.arange(cmap.height) + 0.5) * cmap.resolution
    px, py = np.meshgrid(xs, ys)
    lethal = cmap.cost == LETHAL
    for region in regions:
        lethal = lethal | _points_in_polygon(px, py, region.polygon)
    cost, dist, nearest = _inflate(
        lethal, cmap.resolution, cmap.robot_radius, cmap.inflation_radius, cmap.cost_scaling
    )
    return OccupancyCostmap(
        origin=cmap.origin,
        resolution=cmap.resolution,
        width=cmap.width,
        height=cmap.height,
        cost=cost,
        dist_to_lethal=dist,
        _nearest_idx=nearest,
        robot_radius=cmap.robot_radius,
        inflation_radius=cmap.inflation_radius,
        cost_scaling=cmap.cost_scaling,
    )


def reinflate(cmap: OccupancyCostmap) -> OccupancyCostmap:
    """Re-run inflation from the map's lethal mask (idempotence hook)."""
    return add_lethal_mask(cmap, [])


def padded(cmap: OccupancyCostmap, extra: float) -> OccupancyCostmap:
    """Copy of the map with the blocking radius grown by extra meters.

    Planning against the padded copy keeps the executed path from
    grazing the true collision boundary when tracking is imperfect;
    the simulation still scores contact against the unpadded map.
    """
    if extra <= 0.0:
        return cmap
    lethal = cmap.cost == LETHAL
    cost, dist, nearest = _inflate(
        lethal, cmap.resolution, cmap.robot_radius + extra,
        cmap.inflation_radius, cmap.cost_scaling
    )
    return OccupancyCostmap(
        origin=cmap.origin,
        resolution=cmap.resolution,
        width=cmap.width,
        height=cmap.height,
        cost=cost,
        dist_to_lethal=dist,
        _nearest_idx=nearest,
        robot_radius=cmap.robot_radius + extra,
        inflation_radius=cmap.inflation_radius,
        cost_scaling=cmap.cost_scaling,
    )


def is_pose_collision_free(cmap: OccupancyCostmap, pose, footprint_radius: float) -> bool:
    """True iff no lethal cell center lies within footprint_radius of the pose.

    With footprint_radius equal to the map's robot_radius this matches
    "the pose's cell is below the inscribed cost".
    """
    x, y = (pose.x, pose.y) if hasattr(pose, "x") else (pose[0], pose[1])
    if not cmap.contains(x, y):
        raise OutOfBoundsError(f"pose ({x:.3f}, {y:.3f}) outside map extent")
    return cmap.clearance(x, y) > footprint_radius
