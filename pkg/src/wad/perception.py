"""Top-down colour-coded observation frames and the raw state vector."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sim.routing import OffMapError
from .sim.town import LANE_WIDTH, OPTIONS
from .sim.world import V_MAX, WorldState

WINDOW = 40.0          # metres covered by the frame (square)
AHEAD = 15.0           # window centre, metres in front of the ego
STOP_ZONE = 25.0
STOP_BAND = 1.5        # depth of the painted stop band past the line
PROXIMITY_RANGE = 20.0
LATERAL_CLIP = 2.0
RAW_DIM = 9


@dataclass
class Observation:
    latent: np.ndarray
    raw: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.latent, self.raw]).astype(np.float32)


class _Grid:
    """Pixel centres in the ego frame (forward, right) for a square frame of ``size`` pixels."""

    _cache: dict[int, "_Grid"] = {}

    def __init__(self, size):
        self.size = size
        self.res = WINDOW / size
        idx = (np.arange(size) + 0.5) * self.res
        self.fwd = (AHEAD + WINDOW / 2) - idx            # row 0 is the far edge
        self.right = idx - WINDOW / 2                    # column 0 is the left edge

    @classmethod
    def get(cls, size):
        if size not in cls._cache:
            cls._cache[size] = cls(size)
        return cls._cache[size]


def _pixel_of(grid, ego, px, py):
    """(row, col) float pixel coordinates of world points."""
    c, s = math.cos(ego.theta), math.sin(ego.theta)
    dx, dy = px - ego.x, py - ego.y
    f = dx * c + dy * s
    r = dx * s - dy * c
    row = ((AHEAD + WINDOW / 2) - f) / grid.res - 0.5
    col = (r + WINDOW / 2) / grid.res - 0.5
    return row, col


def _window_segments(world):
    """Route pieces near the window, with collinear 2 m segments merged: (a, b, s_a) arrays."""
    route = world.route
    ego = world.ego
    centre = (ego.x + AHEAD * math.cos(ego.theta), ego.y + AHEAD * math.sin(ego.theta))
    reach = WINDOW / 2 * math.sqrt(2) + LANE_WIDTH
    inside = np.flatnonzero((np.abs(route.xy[:, 0] - centre[0]) < reach)
                            & (np.abs(route.xy[:, 1] - centre[1]) < reach))
    if len(inside) == 0:
        return []
    # segments touching a waypoint in range
    idx = np.unique(np.concatenate([inside - 1, inside]))
    idx = idx[(idx >= 0) & (idx < len(route.xy) - 1)]
    pieces = []
    start = prev = int(idx[0])
    for i in map(int, idx[1:]):
        if i == prev + 1 and abs(route.headings[i] - route.headings[start]) < 1e-9:
            prev = i
            continue
        pieces.append((start, prev + 1))
        start = prev = i
    pieces.append((start, prev + 1))
    return [(route.xy[a], route.xy[b], route.cum[a]) for a, b in pieces]


def _route_field(world, grid):
    """Per-pixel distance to the route centreline and the route arc length of the closest point."""
    n = grid.size
    best = np.full((n, n), np.inf)
    best_s = np.zeros((n, n))
    ego = world.ego
    ec, es = math.cos(ego.theta), math.sin(ego.theta)
    pad = LANE_WIDTH / 2 / grid.res + 1.0
    for a, b, s_a in _window_segments(world):
        row, col = _pixel_of(grid, ego, np.array([a[0], b[0]]), np.array([a[1], b[1]]))
        r0, r1 = max(int(row.min() - pad), 0), min(int(math.ceil(row.max() + pad)), n - 1)
        c0, c1 = max(int(col.min() - pad), 0), min(int(math.ceil(col.max() + pad)), n - 1)
        if r0 > r1 or c0 > c1:
            continue
        f = grid.fwd[r0:r1 + 1, None]
        rt = grid.right[None, c0:c1 + 1]
        px = ego.x + f * ec + rt * es - a[0]
        py = ego.y + f * es - rt * ec - a[1]
        ab = b - a
        L2 = max(float(ab @ ab), 1e-12)
        t = np.clip((px * ab[0] + py * ab[1]) / L2, 0.0, 1.0)
        d = np.hypot(px - t * ab[0], py - t * ab[1])
        win = best[r0:r1 + 1, c0:c1 + 1]
        better = d < win
        win[better] = d[better]
        best_s[r0:r1 + 1, c0:c1 + 1][better] = (s_a + t * math.sqrt(L2))[better]
    return best.ravel(), best_s.ravel()


def rasterize(world: WorldState, size: int = 64, noise: bool = True) -> np.ndarray:
    """Ego-aligned (size, size, 3) frame in [0, 1]: route lane green, agents blue, stop band red."""
    grid = _Grid.get(size)
    ego, st = world.ego, world.status
    frame = np.zeros((size * size, 3), dtype=np.float32)
    dist, s_at = _route_field(world, grid)
    lane = dist <= LANE_WIDTH / 2
    frame[lane, 1] = 1.0
    if st is not None and st.red and 0.0 <= st.stop_dist <= STOP_ZONE:
        line = st.route_s + st.stop_dist
        band = lane & (s_at >= line) & (s_at <= line + STOP_BAND)
        frame[band] = (1.0, 0.0, 0.0)
    frame = frame.reshape(size, size, 3)
    reach = WINDOW / 2 * math.sqrt(2) + 4.0
    cx = ego.x + AHEAD * math.cos(ego.theta)
    cy = ego.y + AHEAD * math.sin(ego.theta)
    for ag in world.agents():
        if abs(ag.x - cx) > reach or abs(ag.y - cy) > reach:
            continue
        _paint_box(frame, grid, ego, ag)
    if noise and world.weather.noise > 0:
        rng = np.random.default_rng([world.seed, world.step_count, 0x5E6])
        frame = frame + rng.normal(0.0, world.weather.noise, frame.shape).astype(np.float32)
        np.clip(frame, 0.0, 1.0, out=frame)
    return frame


def _paint_box(frame, grid, ego, ag):
    c, s = math.cos(ag.theta), math.sin(ag.theta)
    hl, hw = ag.length / 2, ag.width / 2
    corners_x = ag.x + np.array([1, 1, -1, -1]) * hl * c - np.array([1, -1, -1, 1]) * hw * s
    corners_y = ag.y + np.array([1, 1, -1, -1]) * hl * s + np.array([1, -1, -1, 1]) * hw * c
    row, col = _pixel_of(grid, ego, corners_x, corners_y)
    r0, r1 = max(int(math.floor(row.min())), 0), min(int(math.ceil(row.max())), grid.size - 1)
    c0, c1 = max(int(math.floor(col.min())), 0), min(int(math.ceil(col.max())), grid.size - 1)
    if r0 > r1 or c0 > c1:
        return
    rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
    f = grid.fwd[rr]
    rt = grid.right[cc]
    ec, es = math.cos(ego.theta), math.sin(ego.theta)
    px = ego.x + f * ec + rt * es - ag.x
    py = ego.y + f * es - rt * ec - ag.y
    lon = px * c + py * s
    lat = -px * s + py * c
    inside = (np.abs(lon) <= hl) & (np.abs(lat) <= hw)
    frame[rr[inside], cc[inside]] = (0.0, 0.0, 1.0)


def raw_state(world: WorldState) -> np.ndarray:
    """Nine numbers: speed, lateral offset, road option one-hot (4), heading error, proximity, light."""
    st = world.status
    if st is None or st.off_map:
        raise OffMapError("ego is off the map")
    out = np.zeros(RAW_DIM, dtype=np.float32)
    out[0] = min(max(st.v / V_MAX, 0.0), 1.0)
    out[1] = min(max(st.lateral, -LATERAL_CLIP), LATERAL_CLIP) / LATERAL_CLIP
    out[2 + st.option] = 1.0
    out[6] = st.heading_error / math.pi
    out[7] = max(0.0, 1.0 - st.leader_gap / PROXIMITY_RANGE) if st.leader_gap < math.inf else 0.0
    out[7] = min(out[7], 1.0)
    out[8] = {"yellow": 0.5, "red": 1.0}.get(st.light, 0.0)
    return out


RAW_NAMES = ("speed", "lateral", *(f"option_{o}" for o in OPTIONS), "heading_error", "proximity", "light")


def observe(world: WorldState, encoder, latent_dim: int | None = None, size: int = 64) -> Observation:
    """Latent code of the rasterised frame plus the raw state vector."""
    frame = rasterize(world, size)
    latent = encoder.encode(frame)
    if latent_dim is not None and latent.shape[-1] != latent_dim:
        raise ValueError(f"encoder produces {latent.shape[-1]} latent values, config expects {latent_dim}")
    return Observation(latent=latent.astype(np.float32), raw=raw_state(world))


def save_png(frame: np.ndarray, path) -> None:
    from PIL import Image

    img = (np.clip(frame, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path)
