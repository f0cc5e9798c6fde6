"""Local trajectory generation between global-path nodes.

Initial paths come from RRT through preset flank viewpoints (sampling
segments) or risk-weighted A* on the traversability grid (transit segments).
They are then refined by functional-gradient descent on a weighted objective
of smoothness, obstacle proximity and viewpoint tracking, and finally
parameterised as a rational B-spline with constant-speed timestamps.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .farm_map import Instance, PlanningNode
from .terrain import ObstacleField, TraversabilityGrid, min_separation, obstacle_cost

__all__ = [
    "Trajectory",
    "OptimizerConfig",
    "ViewpointTrack",
    "BSplineConfig",
    "ObjectiveContext",
    "initial_path_viewpoints",
    "initial_path_transit",
    "objective",
    "functional_gradient",
    "optimize",
    "bspline_parameterize",
    "time_parameterize",
]

SPEED_SAMPLING = 0.2    # m/s while acquiring phenotyping views
SPEED_TRANSIT = 1.0     # m/s between instances


class PlanningFailure(RuntimeError):
    pass


@dataclass
class Trajectory:
    """A planar control-point path, optionally time-stamped."""

    control_points: np.ndarray          # (n, 2) metres
    kind: str = "transit"               # "sampling" | "transit"
    timestamps: np.ndarray | None = None
    viewpoints: np.ndarray | None = None  # preset view positions, sampling only

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=float).reshape(-1, 2)
        if len(self.control_points) < 2:
            raise ValueError("trajectory needs at least 2 control points")

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.control_points, axis=0), axis=1)))


@dataclass
class OptimizerConfig:
    alpha_s: float = 1.0
    alpha_c: float = 10.0
    alpha_o: float = 2.0
    learning_rate: float = 5e-3
    max_iters: int = 300
    convergence_tol: float = 1e-8
    dt: float = 1.0     # time step between consecutive control points

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.alpha_s <= 0 and self.alpha_c <= 0 and self.alpha_o <= 0:
            raise ValueError("at least one objective weight must be positive")


@dataclass
class ViewpointTrack:
    """Desired view positions paired to control-point indices."""

    indices: np.ndarray     # (k,) int
    positions: np.ndarray   # (k, 2)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if len(self.indices) != len(self.positions):
            raise ValueError("indices and positions must pair up")


@dataclass
class ObjectiveContext:
    weights: OptimizerConfig
    obstacles: ObstacleField | None = None
    view_track: ViewpointTrack | None = None
    epsilon: float = 0.8


@dataclass
class BSplineConfig:
    degree: int = 3
    weights: np.ndarray | None = None   # per control point, default all ones
    samples_per_span: int = 20

    def knot_vector(self, n_ctrl: int) -> np.ndarray:
        """Clamped uniform knot vector on [0, 1] for n_ctrl control points."""
        m = self.degree
        if n_ctrl < m + 1:
            raise ValueError(f"need at least {m + 1} control points for degree {m}")
        interior = n_ctrl - m - 1
        inner = np.linspace(0.0, 1.0, interior + 2)[1:-1]
        return np.concatenate([np.zeros(m + 1), inner, np.ones(m + 1)])


# ---------------------------------------------------------------------------
# initial paths


def _segment_clear(a: np.ndarray, b: np.ndarray, obstacles: ObstacleField | None,
                   step: float = 0.05) -> bool:
    if obstacles is None or not obstacles.polygons:
        return True
    n = max(2, int(math.ceil(np.linalg.norm(b - a) / step)) + 1)
    for t in np.linspace(0.0, 1.0, n):
        if min_separation(a + t * (b - a), obstacles) < 0:
            return False
    return True


def _rrt_connect(start: np.ndarray, goal: np.ndarray, obstacles: ObstacleField | None,
                 rng: np.random.Generator, step: float = 0.25,
                 max_samples: int = 5000, goal_bias: float = 0.1) -> np.ndarray:
    """Goal-biased RRT between two free points; returns a polyline (k, 2)."""
    if _segment_clear(start, goal, obstacles):
        return np.array([start, goal])
    pts = [start]
    parents = [-1]
    span = max(2.0, float(np.linalg.norm(goal - start)) * 2.0)
    lo = np.minimum(start, goal) - span
    hi = np.maximum(start, goal) + span
    for _ in range(max_samples):
        target = goal if rng.random() < goal_bias else rng.uniform(lo, hi)
        arr = np.array(pts)
        k = int(np.argmin(np.linalg.norm(arr - target, axis=1)))
        direction = target - arr[k]
        dist = np.linalg.norm(direction)
        if dist < 1e-9:
            continue
        new = arr[k] + direction / dist * min(step, dist)
        if obstacles is not None and min_separation(new, obstacles) < 0:
            continue
        if not _segment_clear(arr[k], new, obstacles):
            continue
        pts.append(new)
        parents.append(k)
        if np.linalg.norm(new - goal) <= step and _segment_clear(new, goal, obstacles):
            chain = [goal]
            j = len(pts) - 1
            while j >= 0:
                chain.append(pts[j])
                j = parents[j]
            return np.array(chain[::-1])
    raise PlanningFailure(
        f"RRT failed to connect {start.tolist()} -> {goal.tolist()} "
        f"after {max_samples} samples")


def _shortcut(polyline: np.ndarray, obstacles: ObstacleField | None) -> np.ndarray:
    """Greedy shortcutting of an RRT polyline."""
    out = [polyline[0]]
    i = 0
    while i < len(polyline) - 1:
        j = len(polyline) - 1
        while j > i + 1 and not _segment_clear(polyline[i], polyline[j], obstacles):
            j -= 1
        out.append(polyline[j])
        i = j
    return np.array(out)


def _resample_polyline(polyline: np.ndarray, n: int) -> np.ndarray:
    """Resample a polyline to n points uniformly by arc length."""
    seg = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0:
        return np.repeat(polyline[:1], n, axis=0)
    s = np.linspace(0.0, cum[-1], n)
    out = np.empty((n, 2))
    for d in range(2):
        out[:, d] = np.interp(s, cum, polyline[:, d])
    return out


def preset_viewpoints(a: PlanningNode, b: PlanningNode, inst: Instance,
                      n_views: int = 6) -> np.ndarray:
    """Evenly spaced view positions on the flank line between two corner nodes."""
    ts = np.linspace(0.0, 1.0, n_views + 2)[1:-1]
    return a.position[None, :] + ts[:, None] * (b.position - a.position)[None, :]


def initial_path_viewpoints(a: PlanningNode, b: PlanningNode, inst: Instance,
                            obstacles: ObstacleField | None = None,
                            n_views: int = 6, n_control: int = 16,
                            seed: int = 0) -> Trajectory:
    """Sampling path along one instance flank, threading preset viewpoints.

    Consecutive viewpoints are connected with goal-biased RRT (straight
    segments in free space), then shortcut and resampled to control points.
    """
    if a.instance_id != inst.id or b.instance_id != inst.id:
        raise ValueError("both nodes must belong to the given instance")
    views = preset_viewpoints(a, b, inst, n_views)
    waypoints = np.vstack([a.position[None, :], views, b.position[None, :]])
    for k, v in enumerate(waypoints):
        if obstacles is not None and min_separation(v, obstacles) < 0:
            raise PlanningFailure(f"viewpoint {k} at {v.tolist()} lies inside an obstacle")
    rng = np.random.default_rng(seed)
    pieces = []
    for p, q in zip(waypoints, waypoints[1:]):
        seg = _rrt_connect(p, q, obstacles, rng)
        seg = _shortcut(seg, obstacles)
        pieces.append(seg[:-1])
    polyline = np.vstack(pieces + [waypoints[-1:]])
    ctrl = _resample_polyline(polyline, max(n_control, len(waypoints)))
    ctrl[0], ctrl[-1] = a.position, b.position
    return Trajectory(control_points=ctrl, kind="sampling", viewpoints=views)


def initial_path_transit(a: PlanningNode, b: PlanningNode,
                         grid: TraversabilityGrid | None = None,
                         n_control: int = 16) -> Trajectory:
    """Transit path between nodes: risk-weighted 8-connected A* on the grid.

    Edge cost is euclidean step length times (1 + mean cell risk); infinite
    risk cells are impassable. Without a grid the path is a straight line.
    """
    if grid is None:
        ctrl = _resample_polyline(np.array([a.position, b.position]), n_control)
        return Trajectory(control_points=ctrl, kind="transit")
    start = grid.cell_of(a.position)
    goal = grid.cell_of(b.position)
    for name, cell in (("start", start), ("goal", goal)):
        if grid.in_bounds(*cell) and not np.isfinite(grid.risk[cell]):
            raise PlanningFailure(f"{name} node lies in an untraversable cell {cell}")

    def risk_of(cell):
        return float(grid.risk[cell]) if grid.in_bounds(*cell) else 0.0

    def passable(cell):
        return (not grid.in_bounds(*cell)) or np.isfinite(grid.risk[cell])

    steps = [(dr, dc, math.hypot(dr, dc) * grid.cell_size)
             for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    goal_xy = np.asarray(b.position, dtype=float)

    def heuristic(cell):
        center = grid.cell_center(*cell)
        return float(np.linalg.norm(center - goal_xy))

    open_heap = [(heuristic(start), 0.0, start)]
    best_g = {start: 0.0}
    came = {}
    found = False
    while open_heap:
        f, g, cur = heapq.heappop(open_heap)
        if cur == goal:
            found = True
            break
        if g > best_g.get(cur, float("inf")):
            continue
        for dr, dc, length in steps:
            nxt = (cur[0] + dr, cur[1] + dc)
            if not passable(nxt):
                continue
            # keep search inside a margin around the endpoints
            if not (-2 <= nxt[0] <= grid.height + 1 and -2 <= nxt[1] <= grid.width + 1):
                continue
            cost = length * (1.0 + 0.5 * (risk_of(cur) + risk_of(nxt)))
            g2 = g + cost
            if g2 < best_g.get(nxt, float("inf")) - 1e-12:
                best_g[nxt] = g2
                came[nxt] = cur
                heapq.heappush(open_heap, (g2 + heuristic(nxt), g2, nxt))
    if not found:
        raise PlanningFailure(f"no traversable grid path from {start} to {goal}")
    cells = [goal]
    while cells[-1] != start:
        cells.append(came[cells[-1]])
    cells.reverse()
    polyline = np.array([grid.cell_center(r, c) for r, c in cells])
    polyline[0], polyline[-1] = a.position, b.position
    ctrl = _resample_polyline(polyline, n_control)
    ctrl[0], ctrl[-1] = a.position, b.position
    traj = Trajectory(control_points=ctrl, kind="transit")
    traj.grid_cost = best_g[goal]   # exposed for oracle comparison
    return traj


# ---------------------------------------------------------------------------
# functional-gradient optimization


def objective(points: np.ndarray, ctx: ObjectiveContext) -> tuple[float, dict]:
    """Weighted trajectory objective and its individual terms.

    Discretization over control points Q_0..Q_n with uniform time step dt:
    smoothness sum ||Q_{i+1}-Q_i||^2 / dt, obstacle sum c(Q_i) ||Q_{i+1}-Q_i||,
    view tracking sum ||Q_i - d_i||^2 dt over the paired indices.
    """
    q = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(q) < 3:
        raise ValueError("objective needs at least 3 control points")
    w = ctx.weights
    diffs = np.diff(q, axis=0)
    seg = np.linalg.norm(diffs, axis=1)
    f_s = float(np.sum(seg**2) / w.dt)
    f_c = 0.0
    if ctx.obstacles is not None and ctx.obstacles.polygons:
        costs = np.array([obstacle_cost(p, ctx.obstacles, ctx.epsilon)[0] for p in q[:-1]])
        f_c = float(np.sum(costs * seg))
    f_o = 0.0
    if ctx.view_track is not None:
        delta = q[ctx.view_track.indices] - ctx.view_track.positions
        f_o = float(np.sum(delta**2) * w.dt)
    total = w.alpha_s * f_s + w.alpha_c * f_c + w.alpha_o * f_o
    return total, {"f_s": f_s, "f_c": f_c, "f_o": f_o}


def functional_gradient(points: np.ndarray, ctx: ObjectiveContext) -> np.ndarray:
    """Exact gradient of the discretized objective; zero at the fixed endpoints.

    The smoothness part is the (scaled) negative second difference of the
    path, the obstacle part combines the cost gradient with the path
    curvature contribution, and the view term pulls paired points toward
    their desired positions.
    """
    q = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(q)
    w = ctx.weights
    grad = np.zeros_like(q)

    # smoothness: d/dQ_j sum ||Q_{i+1} - Q_i||^2 / dt
    gs = np.zeros_like(q)
    gs[1:] += 2.0 * (q[1:] - q[:-1]) / w.dt
    gs[:-1] -= 2.0 * (q[1:] - q[:-1]) / w.dt
    grad += w.alpha_s * gs

    if ctx.obstacles is not None and ctx.obstacles.polygons and w.alpha_c > 0:
        diffs = np.diff(q, axis=0)
        seg = np.linalg.norm(diffs, axis=1)
        safe = np.where(seg < 1e-12, 1.0, seg)
        unit = diffs / safe[:, None]
        cvals = np.empty(n)
        cgrads = np.empty((n, 2))
        for i, p in enumerate(q):
            cvals[i], cgrads[i] = obstacle_cost(p, ctx.obstacles, ctx.epsilon)
        gc = np.zeros_like(q)
        gc[:-1] += cgrads[:-1] * seg[:, None]
        gc[1:] += cvals[:-1, None] * unit
        gc[:-1] -= cvals[:-1, None] * unit
        grad += w.alpha_c * gc

    if ctx.view_track is not None and w.alpha_o > 0:
        go = np.zeros_like(q)
        go[ctx.view_track.indices] += 2.0 * w.dt * (
            q[ctx.view_track.indices] - ctx.view_track.positions)
        grad += w.alpha_o * go

    grad[0] = 0.0
    grad[-1] = 0.0
    return grad


def optimize(traj: Trajectory, cfg: OptimizerConfig,
             ctx: ObjectiveContext) -> tuple[Trajectory, list[float]]:
    """Gradient descent on the trajectory objective with fixed endpoints."""
    q = traj.control_points.copy()
    history = []
    f_prev, _ = objective(q, ctx)
    history.append(f_prev)
    for it in range(cfg.max_iters):
        g = functional_gradient(q, ctx)
        q = q - cfg.learning_rate * g
        f, _ = objective(q, ctx)
        if not math.isfinite(f):
            raise PlanningFailure(f"optimization diverged at iteration {it}")
        history.append(f)
        if abs(f_prev - f) < cfg.convergence_tol:
            break
        f_prev = f
    out = Trajectory(control_points=q, kind=traj.kind,
                     viewpoints=traj.viewpoints)
    return out, history


# ---------------------------------------------------------------------------
# B-spline parameterization and timing


def bspline_basis(knots: np.ndarray, degree: int, n_ctrl: int,
                  t: np.ndarray) -> np.ndarray:
    """Cox-de Boor basis values, shape (len(t), n_ctrl), clamped at t=1."""
    t = np.asarray(t, dtype=float)
    tmax = knots[-1]
    tc = np.clip(t, knots[0], tmax)
    nk = len(knots)
    # degree 0
    N = np.zeros((len(tc), nk - 1))
    for i in range(nk - 1):
        if knots[i] < knots[i + 1]:
            N[:, i] = ((tc >= knots[i]) & (tc < knots[i + 1])).astype(float)
    # make the curve right-closed at the final knot
    last_span = np.nonzero(knots < tmax)[0][-1]
    N[tc >= tmax, last_span] = 1.0
    for p in range(1, degree + 1):
        N_new = np.zeros((len(tc), nk - 1 - p))
        for i in range(nk - 1 - p):
            left_den = knots[i + p] - knots[i]
            right_den = knots[i + p + 1] - knots[i + 1]
            term = np.zeros(len(tc))
            if left_den > 0:
                term += (tc - knots[i]) / left_den * N[:, i]
            if right_den > 0:
                term += (knots[i + p + 1] - tc) / right_den * N[:, i + 1]
            N_new[:, i] = term
        N = N_new
    return N[:, :n_ctrl]


def bspline_parameterize(traj: Trajectory, cfg: BSplineConfig | None = None,
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Sample the rational B-spline through the control points.

    Returns (t_values, curve_points). With uniform weights the rational form
    reduces to the ordinary clamped B-spline; the weight vector is invariant
    to overall scaling.
    """
    cfg = cfg or BSplineConfig()
    q = traj.control_points
    n_ctrl = len(q)
    knots = cfg.knot_vector(n_ctrl)
    w = np.ones(n_ctrl) if cfg.weights is None else np.asarray(cfg.weights, dtype=float)
    if len(w) != n_ctrl:
        raise ValueError("one weight per control point required")
    if np.any(w <= 0):
        raise ValueError("spline weights must be positive")
    spans = n_ctrl - cfg.degree
    t = np.linspace(0.0, 1.0, spans * cfg.samples_per_span + 1)
    N = bspline_basis(knots, cfg.degree, n_ctrl, t)
    num = (N * w[None, :]) @ q
    den = (N * w[None, :]).sum(axis=1)
    return t, num / den[:, None]


def time_parameterize(curve: np.ndarray, kind: str = "transit",
                      v_max: float | None = None) -> np.ndarray:
    """Constant-speed timestamps along a sampled curve.

    Sampling segments run at 0.2 m/s, transit at 1.0 m/s, unless v_max
    overrides.
    """
    curve = np.asarray(curve, dtype=float).reshape(-1, 2)
    speed = v_max if v_max is not None else (
        SPEED_SAMPLING if kind == "sampling" else SPEED_TRANSIT)
    if speed <= 0:
        raise ValueError("speed must be positive")
    if len(curve) == 1:
        return np.zeros(1)
    seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg / speed)])


def export_trajectory(path, traj: Trajectory, curve: np.ndarray,
                      times: np.ndarray, history: list[float],
                      spline_cfg: BSplineConfig, seed: int) -> None:
    speed = SPEED_SAMPLING if traj.kind == "sampling" else SPEED_TRANSIT
    knots = spline_cfg.knot_vector(len(traj.control_points))
    payload = {
        "kind": traj.kind,
        "seed": seed,
        "control_points": traj.control_points.tolist(),
        "spline": {
            "degree": spline_cfg.degree,
            "knots": knots.tolist(),
            "weights": (np.ones(len(traj.control_points))
                        if spline_cfg.weights is None
                        else np.asarray(spline_cfg.weights)).tolist(),
        },
        "samples": [
            {"t": float(t), "x": float(p[0]), "y": float(p[1]), "speed": speed}
            for t, p in zip(times, curve)
        ],
        "objective_history": history,
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)
