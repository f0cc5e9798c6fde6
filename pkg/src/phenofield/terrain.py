"""Traversability analysis from a terrain point cloud.

Projects points onto a 2-D grid, scores each cell with collision, slope and
step risks combined into a weighted traversability value, extracts obstacle
polygons from risky cells, and provides the smooth obstacle cost (with
gradient) used by the trajectory optimizer.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "TerrainCloud",
    "TraversabilityGrid",
    "ObstacleField",
    "CostFieldConfig",
    "build_grid",
    "slope_at",
    "step_at",
    "extract_obstacles",
    "min_separation",
    "obstacle_cost",
    "load_cloud",
    "save_cloud_ply",
]


@dataclass
class CostFieldConfig:
    """Risk weights, critical values and the obstacle-cost influence radius."""

    epsilon: float = 0.8        # obstacle cost influence radius, m
    s_crit: float = 0.35        # critical slope, rad
    lambda_crit: float = 0.15   # critical step height, m
    alpha_s: float = 0.5
    alpha_lambda: float = 0.5
    slope_window: float = 0.4   # side length of the slope-fit cube, m
    body_clearance: float = 0.3 # points this far above ground count as collision

    def __post_init__(self):
        for name in ("epsilon", "s_crit", "lambda_crit", "slope_window", "body_clearance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.alpha_s < 0 or self.alpha_lambda < 0:
            raise ValueError("risk weights must be non-negative")


@dataclass
class TerrainCloud:
    """A bag of 3-D terrain points. May be empty in synthetic flat-world mode."""

    points: np.ndarray  # (N, 3) metres

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.points.size and not np.all(np.isfinite(self.points)):
            raise ValueError("terrain points must be finite")


@dataclass
class TraversabilityGrid:
    """Per-cell risk layers over a regular 2-D grid.

    Cells without measurement points have risk +inf (negative-obstacle rule).
    risk = theta + alpha_s * slope / s_crit + alpha_lambda * step / lambda_crit.
    """

    origin: np.ndarray          # (2,) lower-left corner, m
    cell_size: float
    collision: np.ndarray       # (H, W) theta in [0, 1], nan where empty
    slope: np.ndarray           # (H, W) rad, nan where empty/degenerate
    step: np.ndarray            # (H, W) m, nan where empty
    ground: np.ndarray          # (H, W) ground height, nan where empty
    risk: np.ndarray            # (H, W) combined, +inf where unknown
    config: CostFieldConfig = field(default_factory=CostFieldConfig)

    @property
    def height(self) -> int:
        return self.risk.shape[0]

    @property
    def width(self) -> int:
        return self.risk.shape[1]

    def cell_of(self, p) -> tuple[int, int]:
        p = np.asarray(p, dtype=float)
        col = int(math.floor((p[0] - self.origin[0]) / self.cell_size))
        row = int(math.floor((p[1] - self.origin[1]) / self.cell_size))
        return row, col

    def cell_center(self, row: int, col: int) -> np.ndarray:
        return self.origin + (np.array([col, row]) + 0.5) * self.cell_size

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def risk_at(self, p) -> float:
        """Risk at a world position; cells outside the grid are free (0)."""
        row, col = self.cell_of(p)
        if not self.in_bounds(row, col):
            return 0.0
        return float(self.risk[row, col])

    def save(self, json_path, csv_path) -> None:
        header = {
            "origin": self.origin.tolist(),
            "cell_size": self.cell_size,
            "width": self.width,
            "height": self.height,
            "csv": str(csv_path),
        }
        with open(json_path, "w") as f:
            json.dump(header, f, indent=1)
        with open(csv_path, "w") as f:
            for row in self.risk:
                f.write(",".join("inf" if not np.isfinite(v) else repr(float(v))
                                 for v in row) + "\n")


def load_cloud(path) -> TerrainCloud:
    """Read a point cloud from ASCII PLY (x y z float) or plain XYZ text."""
    path = str(path)
    if path.endswith(".ply"):
        with open(path) as f:
            line = f.readline().strip()
            if line != "ply":
                raise ValueError(f"{path}: not a PLY file")
            n = None
            while True:
                line = f.readline()
                if not line:
                    raise ValueError(f"{path}: truncated PLY header")
                line = line.strip()
                if line.startswith("element vertex"):
                    n = int(line.split()[-1])
                elif line.startswith("format") and "ascii" not in line:
                    raise ValueError(f"{path}: only ASCII PLY is supported")
                elif line == "end_header":
                    break
            data = np.loadtxt(f, dtype=float, max_rows=n)
        return TerrainCloud(points=data.reshape(-1, 3)[:, :3])
    return TerrainCloud(points=np.loadtxt(path, dtype=float).reshape(-1, 3))


def save_cloud_ply(cloud: TerrainCloud, path) -> None:
    pts = cloud.points
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(pts)}\n")
        f.write("property double x\nproperty double y\nproperty double z\n")
        f.write("end_header\n")
        for p in pts:
            f.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")


def slope_at(point: np.ndarray, cloud: TerrainCloud, window: float,
             tree: cKDTree | None = None) -> float:
    """Slope angle at a terrain point from an SVD plane fit.

    Points inside the axis-aligned cube of side `window` around `point` are
    fit with a plane; the result is the angle between the plane normal and
    vertical, in [0, pi/2]. Returns nan when the neighbourhood is degenerate
    (fewer than 3 points, or collinear).
    """
    point = np.asarray(point, dtype=float)
    if tree is None:
        if cloud.points.shape[0] == 0:
            return float("nan")
        tree = cKDTree(cloud.points)
    idx = tree.query_ball_point(point, r=window / 2.0, p=np.inf)
    pts = cloud.points[idx]
    if len(pts) < 3:
        return float("nan")
    centered = pts - pts.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    if svals[1] <= 1e-12 * max(svals[0], 1.0):
        return float("nan")    # collinear neighbourhood
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    normal = vt[-1]
    cos = abs(normal[2]) / np.linalg.norm(normal)
    return float(math.acos(min(1.0, max(-1.0, cos))))


def step_at(row: int, col: int, ground: np.ndarray) -> float:
    """Max height gap to the 8-neighbour cells; empty neighbours are ignored."""
    h = ground[row, col]
    if not np.isfinite(h):
        return float("nan")
    best = 0.0
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            r, c = row + dr, col + dc
            if 0 <= r < ground.shape[0] and 0 <= c < ground.shape[1]:
                hn = ground[r, c]
                if np.isfinite(hn):
                    best = max(best, abs(h - hn))
    return best


def build_grid(cloud: TerrainCloud, cfg: CostFieldConfig | None = None,
               cell_size: float = 0.1,
               bounds: tuple[np.ndarray, np.ndarray] | None = None) -> TraversabilityGrid:
    """Project a terrain cloud onto a grid and score every cell.

    Per cell: ground height is the 10th percentile of point heights, the
    collision risk is the fraction of points more than `body_clearance` above
    ground, slope comes from an SVD plane fit over the `slope_window` cube,
    and step is the max gap to occupied 8-neighbours. Cells without points,
    or whose slope fit is degenerate, get risk +inf. Deterministic.
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    cfg = cfg or CostFieldConfig()
    pts = cloud.points

    if bounds is not None:
        lo = np.asarray(bounds[0], dtype=float)
        hi = np.asarray(bounds[1], dtype=float)
    elif pts.shape[0]:
        lo = pts[:, :2].min(axis=0)
        hi = pts[:, :2].max(axis=0)
    else:
        lo = np.zeros(2)
        hi = np.ones(2)
    origin = lo - 0.5 * cell_size
    width = int(math.ceil((hi[0] - origin[0]) / cell_size)) + 1
    height = int(math.ceil((hi[1] - origin[1]) / cell_size)) + 1

    shape = (height, width)
    ground = np.full(shape, np.nan)
    theta = np.full(shape, np.nan)
    slope = np.full(shape, np.nan)
    step = np.full(shape, np.nan)

    if pts.shape[0]:
        cols = np.floor((pts[:, 0] - origin[0]) / cell_size).astype(int)
        rows = np.floor((pts[:, 1] - origin[1]) / cell_size).astype(int)
        keep = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
        rows, cols = rows[keep], cols[keep]
        kept = pts[keep]
        flat = rows * width + cols
        order = np.argsort(flat, kind="stable")
        flat, kept = flat[order], kept[order]
        starts = np.searchsorted(flat, np.unique(flat))
        cells = np.unique(flat)
        tree = cKDTree(pts)
        bounds_idx = np.append(starts, len(flat))
        for k, cell in enumerate(cells):
            chunk = kept[bounds_idx[k]:bounds_idx[k + 1]]
            r, c = divmod(int(cell), width)
            g = float(np.percentile(chunk[:, 2], 10))
            ground[r, c] = g
            above = np.count_nonzero(chunk[:, 2] > g + cfg.body_clearance)
            theta[r, c] = min(1.0, max(0.0, above / len(chunk)))
        for k, cell in enumerate(cells):
            r, c = divmod(int(cell), width)
            center = origin + (np.array([c, r]) + 0.5) * cell_size
            p3 = np.array([center[0], center[1], ground[r, c]])
            slope[r, c] = slope_at(p3, cloud, cfg.slope_window, tree=tree)
        for cell in cells:
            r, c = divmod(int(cell), width)
            step[r, c] = step_at(r, c, ground)

    risk = np.full(shape, np.inf)
    finite = np.isfinite(theta) & np.isfinite(slope) & np.isfinite(step)
    risk[finite] = (theta[finite]
                    + cfg.alpha_s * slope[finite] / cfg.s_crit
                    + cfg.alpha_lambda * step[finite] / cfg.lambda_crit)
    return TraversabilityGrid(origin=origin, cell_size=cell_size, collision=theta,
                              slope=slope, step=step, ground=ground, risk=risk,
                              config=cfg)


# ---------------------------------------------------------------------------
# obstacle polygons and cost field


@dataclass
class ObstacleField:
    """Simple CCW polygons marking untraversable regions."""

    polygons: list[np.ndarray]  # each (V, 2), CCW, no closing repeat

    def __post_init__(self):
        self.polygons = [np.asarray(p, dtype=float) for p in self.polygons]
        for p in self.polygons:
            if p.shape[0] < 3:
                raise ValueError("polygons need at least 3 vertices")
            if _polygon_area(p) <= 0:
                raise ValueError("polygons must be counter-clockwise")

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump([p.tolist() for p in self.polygons], f)


def _polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def extract_obstacles(grid: TraversabilityGrid, risk_threshold: float) -> ObstacleField:
    """Trace obstacle cells (risk >= threshold, including +inf) into polygons.

    Connected components are 4-connected; each component's outer boundary is
    traced along cell edges into one simple CCW polygon with collinear
    vertices merged. Interior holes are not carved.
    """
    if risk_threshold <= 0:
        raise ValueError("risk threshold must be positive")
    mask = grid.risk >= risk_threshold
    H, W = mask.shape
    labels = np.zeros((H, W), dtype=int)
    nlab = 0
    for r in range(H):
        for c in range(W):
            if mask[r, c] and labels[r, c] == 0:
                nlab += 1
                stack = [(r, c)]
                labels[r, c] = nlab
                while stack:
                    rr, cc = stack.pop()
                    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        r2, c2 = rr + dr, cc + dc
                        if 0 <= r2 < H and 0 <= c2 < W and mask[r2, c2] and labels[r2, c2] == 0:
                            labels[r2, c2] = nlab
                            stack.append((r2, c2))

    polygons = []
    for lab in range(1, nlab + 1):
        cells = {(r, c) for r, c in zip(*np.nonzero(labels == lab))}
        polygons.append(_trace_boundary(cells, grid.origin, grid.cell_size))
    return ObstacleField(polygons=polygons)


def _trace_boundary(cells: set[tuple[int, int]], origin: np.ndarray,
                    cell_size: float) -> np.ndarray:
    """Outer boundary of a 4-connected cell set as a CCW vertex loop."""
    # directed boundary edges in lattice coordinates, inside kept on the left
    edges: dict[tuple[int, int], tuple[int, int]] = {}
    for (r, c) in cells:
        # corners of the cell: (c, r) .. (c+1, r+1) in (x, y) lattice units
        if (r - 1, c) not in cells:     # bottom edge, walk +x
            edges[(c, r)] = (c + 1, r)
        if (r, c + 1) not in cells:     # right edge, walk +y
            edges[(c + 1, r)] = (c + 1, r + 1)
        if (r + 1, c) not in cells:     # top edge, walk -x
            edges[(c + 1, r + 1)] = (c, r + 1)
        if (r, c - 1) not in cells:     # left edge, walk -y
            edges[(c, r + 1)] = (c, r)
    start = min(edges)
    loop = [start]
    cur = edges.pop(start)
    while cur != start:
        loop.append(cur)
        cur = edges.pop(cur)
    pts = np.array(loop, dtype=float)
    # merge collinear runs
    merged = []
    n = len(pts)
    for i in range(n):
        a, b, c = pts[i - 1], pts[i], pts[(i + 1) % n]
        u, v = b - a, c - b
        if abs(u[0] * v[1] - u[1] * v[0]) > 1e-12:
            merged.append(b)
    poly = np.array(merged)
    return origin + poly * cell_size


def _point_polygon_distance(q: np.ndarray, poly: np.ndarray) -> tuple[float, np.ndarray]:
    """Unsigned distance to the polygon boundary and the closest point."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", q - a, ab) / np.where(denom == 0, 1.0, denom), 0, 1)
    proj = a + t[:, None] * ab
    d2 = np.einsum("ij,ij->i", q - proj, q - proj)
    k = int(np.argmin(d2))
    return float(math.sqrt(d2[k])), proj[k]


def _point_in_polygon(q: np.ndarray, poly: np.ndarray) -> bool:
    x, y = q
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) / (y2 - y1) * (x2 - x1)
            if x < xc:
                inside = not inside
    return inside


def min_separation(q, obstacle_field: ObstacleField,
                   return_closest: bool = False):
    """Signed minimum separation between a point and all obstacle polygons.

    Positive outside, zero on a boundary, negative (penetration depth) inside
    any polygon. +inf for an empty field. Optionally also returns the closest
    boundary point.
    """
    q = np.asarray(q, dtype=float)
    if not obstacle_field.polygons:
        return (float("inf"), None) if return_closest else float("inf")
    best = float("inf")
    best_pt = None
    inside_any = False
    for poly in obstacle_field.polygons:
        d, pt = _point_polygon_distance(q, poly)
        if _point_in_polygon(q, poly):
            inside_any = True
        if d < best:
            best, best_pt = d, pt
    sep = -best if inside_any else best
    return (sep, best_pt) if return_closest else sep


def obstacle_cost(q, obstacle_field: ObstacleField,
                  epsilon: float) -> tuple[float, np.ndarray]:
    """Smooth obstacle cost and its gradient at a point.

    Piecewise form over the signed separation phi:
        phi >= eps:      0
        0 < phi < eps:   (eps - phi)^2 / (2 eps)
        phi <= 0:        -phi + eps / 2
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    q = np.asarray(q, dtype=float)
    phi, closest = min_separation(q, obstacle_field, return_closest=True)
    if phi >= epsilon or closest is None:
        return 0.0, np.zeros(2)
    if phi > 0:
        c = (epsilon - phi) ** 2 / (2.0 * epsilon)
        dc_dphi = -(epsilon - phi) / epsilon
    else:
        c = -phi + epsilon / 2.0
        dc_dphi = -1.0
    delta = q - closest
    norm = np.linalg.norm(delta)
    if norm < 1e-12:
        grad_phi = np.zeros(2)
    elif phi > 0:
        grad_phi = delta / norm
    else:
        grad_phi = -delta / norm
    return float(c), dc_dphi * grad_phi
