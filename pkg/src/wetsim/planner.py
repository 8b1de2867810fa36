"""Hybrid-A* global planning over the inflated costmap.

Search runs on a continuous pose per node with a discrete (cell,
heading-bin, primitive) key, expanding constant-curvature arcs at the
minimum turn radius in both directions of travel. Near the goal an
analytic curve family finishes with exact headings. Heuristic is the
max of an obstacle-aware 2D grid distance and the straight-line
distance, both admissible.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .costmap import INSCRIBED, OccupancyCostmap
from .geometry import Pose2D, Twist, integrate_unicycle, wrap_angle

# 8-connected grid distance overestimates the continuous shortest path
# by at most this factor (worst case at 22.5 degrees).
_GRID_STRETCH = 1.0 / math.cos(math.pi / 8.0)

_DENSIFY_STEP = 0.025


class NoPathFound(RuntimeError):
    def __init__(self, explored: int):
        super().__init__(f"no path within node budget ({explored} nodes explored)")
        self.explored = explored


class InvalidEndpointError(ValueError):
    """Start or goal pose in collision or outside the map."""


@dataclass(frozen=True)
class PlannerConfig:
    min_turn_radius: float = 0.20
    cost_penalty: float = 3.0
    reverse_penalty: float = 2.0
    non_straight_penalty: float = 1.0
    change_penalty: float = 5.0
    motion_primitive_length: float | None = None  # default: one cell diagonal
    angular_bins: int = 72
    goal_tolerance_xy: float = 0.05
    goal_tolerance_psi: float = math.radians(10.0)
    node_budget: int = 200_000
    analytic_radius_factor: float = 10.0

    def __post_init__(self) -> None:
        if self.min_turn_radius <= 0.0:
            raise ValueError("min_turn_radius must be positive")
        if min(self.cost_penalty, self.reverse_penalty,
               self.non_straight_penalty, self.change_penalty) < 0.0:
            raise ValueError("penalties must be non-negative")
        if self.angular_bins < 8:
            raise ValueError("angular_bins too coarse")


@dataclass(frozen=True)
class PlannedPath:
    """Densified pose samples with per-pose travel direction (+1/-1)."""

    poses: tuple[Pose2D, ...]
    directions: tuple[int, ...]
    cumulative_cost: float
    length: float

    def __post_init__(self) -> None:
        if len(self.poses) != len(self.directions):
            raise ValueError("poses and directions must align")


def grid_distance_field(cmap: OccupancyCostmap, target_xy,
                        clearance_radius: float) -> np.ndarray:
    """8-connected shortest distance (m) from every cell to the target.

    Cells whose centers sit within clearance_radius of a lethal cell are
    blocked. Unreachable cells hold inf. Dividing by the grid stretch
    factor turns entries into admissible lower bounds on continuous
    path length.
    """
    blocked = cmap.dist_to_lethal <= clearance_radius
    h, w = blocked.shape
    dist = np.full((h, w), np.inf)
    gx, gy = cmap.cell_of(float(target_xy[0]), float(target_xy[1]))
    if not (0 <= gx < w and 0 <= gy < h) or blocked[gy, gx]:
        return dist
    res = cmap.resolution
    diag = res * math.sqrt(2.0)
    dist[gy, gx] = 0.0
    heap = [(0.0, gx, gy)]
    moves = ((1, 0, res), (-1, 0, res), (0, 1, res), (0, -1, res),
             (1, 1, diag), (1, -1, diag), (-1, 1, diag), (-1, -1, diag))
    while heap:
        d, x, y = heapq.heappop(heap)
        if d > dist[y, x]:
            continue
        for dx, dy, step in moves:
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and not blocked[ny, nx]:
                nd = d + step
                if nd < dist[ny, nx]:
                    dist[ny, nx] = nd
                    heapq.heappush(heap, (nd, nx, ny))
    return dist


# -- analytic goal curves ------------------------------------------------


def _mod2pi(x: float) -> float:
    return x % (2.0 * math.pi)


def _dubins_candidates(alpha: float, beta: float, d: float):
    """(total, [(turn_sign, seg_len), ...]) per feasible curve family,
    in units of the turn radius. Signs: +1 left, -1 right, 0 straight."""
    sa, sb, ca, cb = math.sin(alpha), math.sin(beta), math.cos(alpha), math.cos(beta)
    c_ab = math.cos(alpha - beta)
    out = []

    p_sq = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sa - sb)
    if p_sq >= 0.0:
        tmp = math.atan2(cb - ca, d + sa - sb)
        t, p, q = _mod2pi(-alpha + tmp), math.sqrt(p_sq), _mod2pi(beta - tmp)
        out.append((t + p + q, [(1, t), (0, p), (1, q)]))

    p_sq = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sb - sa)
    if p_sq >= 0.0:
        tmp = math.atan2(ca - cb, d - sa + sb)
        t, p, q = _mod2pi(alpha - tmp), math.sqrt(p_sq), _mod2pi(-beta + tmp)
        out.append((t + p + q, [(-1, t), (0, p), (-1, q)]))

    p_sq = -2.0 + d * d + 2.0 * c_ab + 2.0 * d * (sa + sb)
    if p_sq >= 0.0:
        p = math.sqrt(p_sq)
        tmp = math.atan2(-ca - cb, d + sa + sb) - math.atan2(-2.0, p)
        t, q = _mod2pi(-alpha + tmp), _mod2pi(-_mod2pi(beta) + tmp)
        out.append((t + p + q, [(1, t), (0, p), (-1, q)]))

    p_sq = d * d - 2.0 + 2.0 * c_ab - 2.0 * d * (sa + sb)
    if p_sq >= 0.0:
        p = math.sqrt(p_sq)
        tmp = math.atan2(ca + cb, d - sa - sb) - math.atan2(2.0, p)
        t, q = _mod2pi(alpha - tmp), _mod2pi(beta - tmp)
        out.append((t + p + q, [(-1, t), (0, p), (1, q)]))

    tmp = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sa - sb)) / 8.0
    if abs(tmp) <= 1.0:
        p = _mod2pi(2.0 * math.pi - math.acos(tmp))
        t = _mod2pi(alpha - math.atan2(ca - cb, d - sa + sb) + p / 2.0)
        q = _mod2pi(alpha - beta - t + p)
        out.append((t + p + q, [(-1, t), (1, p), (-1, q)]))

    tmp = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sb - sa)) / 8.0
    if abs(tmp) <= 1.0:
        p = _mod2pi(2.0 * math.pi - math.acos(tmp))
        t = _mod2pi(-alpha + math.atan2(-ca + cb, d + sa - sb) + p / 2.0)
        q = _mod2pi(_mod2pi(beta) - alpha - t + p)
        out.append((t + p + q, [(1, t), (-1, p), (1, q)]))

    out.sort(key=lambda item: item[0])
    return out


def dubins_shortest(start: Pose2D, goal: Pose2D, radius: float):
    """Shortest forward-only curve family reaching the goal pose.

    Returns (length_m, [(curvature, seg_len_m), ...]) or None. Each
    candidate is verified by rollout, so a family whose closed form
    misbehaves is skipped rather than trusted.
    """
    dx, dy = goal.x - start.x, goal.y - start.y
    big_d = math.hypot(dx, dy)
    theta = math.atan2(dy, dx) if big_d > 1e-12 else start.psi
    alpha = _mod2pi(start.psi - theta)
    beta = _mod2pi(goal.psi - theta)
    for total, segs in _dubins_candidates(alpha, beta, big_d / radius):
        segments = [(s / radius if s else 0.0, ln * radius) for s, ln in segs]
        pose = start
        for kappa, seg_len in segments:
            pose = integrate_unicycle(pose, Twist(seg_len, seg_len * kappa), 1.0)
        if (math.hypot(pose.x - goal.x, pose.y - goal.y) < 1e-6
                and abs(wrap_angle(pose.psi - goal.psi)) < 1e-6):
            return total * radius, segments
    return None


# -- search ----------------------------------------------------------------


def _sample_arc(pose: Pose2D, kappa: float, direction: int, length: float,
                step: float) -> list[Pose2D]:
    """Poses along a constant-curvature arc, excluding the start pose."""
    n = max(1, int(math.ceil(length / step)))
    ds = length / n
    out = []
    cur = pose
    for _ in range(n):
        cur = integrate_unicycle(cur, Twist(direction * ds, direction * ds * kappa), 1.0)
        out.append(cur)
    return out


def _segment_cost(samples: list[Pose2D], length: float, kappa: float, direction: int,
                  cmap: OccupancyCostmap, cfg: PlannerConfig) -> float:
    cell = max(cmap.cost_at(p.x, p.y) for p in samples)
    mult = 1.0 + cfg.cost_penalty * cell / (INSCRIBED - 1.0)
    if direction < 0:
        mult *= cfg.reverse_penalty
    if kappa != 0.0:
        mult *= cfg.non_straight_penalty
    return length * mult


def plan(cmap: OccupancyCostmap, start: Pose2D, goal: Pose2D,
         cfg: PlannerConfig = PlannerConfig()) -> PlannedPath:
    """Search for a drivable path from start to goal on the costmap."""
    radius = cmap.robot_radius
    for name, pose in (("start", start), ("goal", goal)):
        if not cmap.contains(pose.x, pose.y):
            raise InvalidEndpointError(f"{name} pose outside map")
        if cmap.clearance(pose.x, pose.y) <= radius:
            raise InvalidEndpointError(f"{name} pose in collision")

    res = cmap.resolution
    prim_len = cfg.motion_primitive_length or res * math.sqrt(2.0)
    kmax = 1.0 / cfg.min_turn_radius
    prims = [(0.0, 1), (kmax, 1), (-kmax, 1), (0.0, -1), (kmax, -1), (-kmax, -1)]
    bin_w = 2.0 * math.pi / cfg.angular_bins
    diag = res * math.sqrt(2.0)
    h_field = grid_distance_field(cmap, (goal.x, goal.y), radius)

    def h_of(pose: Pose2D) -> float:
        euclid = math.hypot(goal.x - pose.x, goal.y - pose.y)
        ix, iy = cmap.cell_of(pose.x, pose.y)
        hd = h_field[iy, ix]
        if math.isinf(hd):
            return euclid
        return max(euclid, hd / _GRID_STRETCH - diag, 0.0)

    def key_of(pose: Pose2D, prim_idx: int):
        ix, iy = cmap.cell_of(pose.x, pose.y)
        ib = int(round(wrap_angle(pose.psi) / bin_w)) % cfg.angular_bins
        return ix, iy, ib, prim_idx

    analytic_range = cfg.analytic_radius_factor * cfg.min_turn_radius
    sample_step = min(_DENSIFY_STEP, res / 2.0)

    # node store: key -> (g, pose, parent_key, prim_idx)
    nodes = {}
    start_key = key_of(start, -1)
    nodes[start_key] = (0.0, start, None, -1)
    counter = 0
    h0 = h_of(start)
    heap = [(h0, h0, counter, start_key)]
    explored = 0
    goal_key = None
    analytic_tail = None

    while heap:
        f, h, _, key = heapq.heappop(heap)
        g, pose, parent, prim_idx = nodes[key]
        if f - h > g + 1e-12:
            continue  # stale entry, a cheaper route to this key was found
        explored += 1
        if explored > cfg.node_budget:
            raise NoPathFound(explored)

        if (math.hypot(pose.x - goal.x, pose.y - goal.y) <= cfg.goal_tolerance_xy
                and abs(wrap_angle(pose.psi - goal.psi)) <= cfg.goal_tolerance_psi):
            goal_key = key
            break
        if math.hypot(pose.x - goal.x, pose.y - goal.y) <= analytic_range:
            found = dubins_shortest(pose, goal, cfg.min_turn_radius)
            if found is not None:
                total_len, segments = found
                tail_samples = []
                tail_cost = 0.0
                cur = pose
                ok = True
                for kappa, seg_len in segments:
                    if seg_len < 1e-9:
                        continue
                    samples = _sample_arc(cur, kappa, 1, seg_len, sample_step)
                    cur = samples[-1]
                    for p in samples:
                        if not cmap.contains(p.x, p.y) or cmap.clearance(p.x, p.y) <= radius:
                            ok = False
                            break
                    if not ok:
                        break
                    tail_cost += _segment_cost(samples, seg_len, kappa, 1, cmap, cfg)
                    tail_samples.append((kappa, seg_len))
                if ok:
                    goal_key = key
                    analytic_tail = (tail_samples, tail_cost)
                    break

        for new_idx, (kappa, direction) in enumerate(prims):
            samples = _sample_arc(pose, kappa, direction, prim_len, sample_step)
            bad = False
            for p in samples:
                if not cmap.contains(p.x, p.y) or cmap.clearance(p.x, p.y) <= radius:
                    bad = True
                    break
            if bad:
                continue
            end = samples[-1]
            cost = _segment_cost(samples, prim_len, kappa, direction, cmap, cfg)
            if prim_idx >= 0:
                old_kappa, old_dir = prims[prim_idx]
                if old_dir != direction or old_kappa != kappa:
                    cost += cfg.change_penalty
            new_g = g + cost
            new_key = key_of(end, new_idx)
            existing = nodes.get(new_key)
            if existing is not None and existing[0] <= new_g:
                continue
            nodes[new_key] = (new_g, end, key, new_idx)
            nh = h_of(end)
            counter += 1
            heapq.heappush(heap, (new_g + nh, nh, counter, new_key))

    if goal_key is None:
        raise NoPathFound(explored)

    # reconstruct primitive chain from the tree
    chain = []
    key = goal_key
    while True:
        g, pose, parent, prim_idx = nodes[key]
        if parent is None:
            break
        kappa, direction = prims[prim_idx]
        chain.append((kappa, direction))
        key = parent
    chain.reverse()

    poses = [start]
    directions = [chain[0][1] if chain else 1]
    total_len = 0.0
    cur = start
    for kappa, direction in chain:
        samples = _sample_arc(cur, kappa, direction, prim_len, _DENSIFY_STEP)
        poses.extend(samples)
        directions.extend([direction] * len(samples))
        cur = samples[-1]
        total_len += prim_len
    total_cost = nodes[goal_key][0]
    if analytic_tail is not None:
        tail_segments, tail_cost = analytic_tail
        for kappa, seg_len in tail_segments:
            samples = _sample_arc(cur, kappa, 1, seg_len, _DENSIFY_STEP)
            poses.extend(samples)
            directions.extend([1] * len(samples))
            cur = samples[-1]
            total_len += seg_len
        total_cost += tail_cost
    if not chain and analytic_tail is None:
        directions = [1] * len(poses)

    return PlannedPath(tuple(poses), tuple(directions), total_cost, total_len)


# -- smoothing --------------------------------------------------------------


def _path_curvature_ok(pts: np.ndarray, kappa_max: float) -> bool:
    """Circumcircle curvature of each consecutive triplet vs the bound."""
    for i in range(1, len(pts) - 1):
        a, b, c = pts[i - 1], pts[i], pts[i + 1]
        ab, bc, ca = b - a, c - b, a - c
        cross = abs(ab[0] * bc[1] - ab[1] * bc[0])
        denom = np.linalg.norm(ab) * np.linalg.norm(bc) * np.linalg.norm(ca)
        if denom < 1e-12:
            continue
        if 2.0 * cross / denom > kappa_max:
            return False
    return True


def smooth_path(path: PlannedPath, cmap: OccupancyCostmap,
                cfg: PlannerConfig = PlannerConfig()) -> PlannedPath:
    """Shortcut smoothing of each same-direction stretch.

    Interior points relax toward their neighbors while staying loyal to
    the original geometry; the result is kept only if it stays
    collision-free, respects the curvature bound and does not cost
    more. Endpoints and direction-switch poses never move.
    """
    n = len(path.poses)
    if n < 5:
        return path
    pts = np.array([(p.x, p.y) for p in path.poses])
    dirs = np.array(path.directions)
    fixed = np.zeros(n, dtype=bool)
    fixed[0] = fixed[-1] = True
    fixed[1:][dirs[1:] != dirs[:-1]] = True

    w_smooth, w_data, lr = 0.7, 0.3, 0.3
    smoothed = pts.copy()
    for _ in range(60):
        interior = smoothed[1:-1]
        delta = (w_smooth * (smoothed[:-2] + smoothed[2:] - 2.0 * interior)
                 + w_data * (pts[1:-1] - interior))
        delta[fixed[1:-1]] = 0.0
        smoothed[1:-1] = interior + lr * delta

    if np.allclose(smoothed, pts, atol=1e-12):
        return path

    kappa_max = 1.0 / cfg.min_turn_radius + 1e-6
    if not _path_curvature_ok(smoothed, kappa_max):
        return path
    for x, y in smoothed:
        if not cmap.contains(x, y) or cmap.clearance(x, y) <= cmap.robot_radius:
            return path

    # rebuild headings from travel tangents (reverse stretches face backward)
    new_poses = []
    for i in range(n):
        j = min(i + 1, n - 1)
        k = max(i - 1, 0)
        tx, ty = smoothed[j] - smoothed[k]
        if abs(tx) < 1e-12 and abs(ty) < 1e-12:
            psi = path.poses[i].psi
        else:
            psi = math.atan2(ty, tx)
            if dirs[i] < 0:
                psi = wrap_angle(psi + math.pi)
        new_poses.append(Pose2D(smoothed[i][0], smoothed[i][1], psi))
    new_poses[0] = path.poses[0]
    new_poses[-1] = path.poses[-1]

    def polyline_cost(points, directions) -> tuple[float, float]:
        total_c, total_l = 0.0, 0.0
        switches = 0
        for i in range(1, len(points)):
            seg = np.linalg.norm(points[i] - points[i - 1])
            if seg < 1e-12:
                continue
            cell = max(cmap.cost_at(*points[i]), cmap.cost_at(*points[i - 1]))
            mult = 1.0 + cfg.cost_penalty * cell / (INSCRIBED - 1.0)
            if directions[i] < 0:
                mult *= cfg.reverse_penalty
            total_c += seg * mult
            total_l += seg
            if i >= 1 and directions[i] != directions[i - 1]:
                switches += 1
        return total_c + switches * cfg.change_penalty, total_l

    new_cost, new_len = polyline_cost(smoothed, dirs)
    old_cost, _ = polyline_cost(pts, dirs)
    if new_cost > old_cost + 1e-12:
        return path
    # keep the planner's cost scale: shrink proportionally to the polyline costs
    scaled_cost = path.cumulative_cost * (new_cost / old_cost if old_cost > 0 else 1.0)
    return PlannedPath(tuple(new_poses), tuple(path.directions), scaled_cost, new_len)
