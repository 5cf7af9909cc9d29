"""Manhattan-style street grid, probabilistic-turn vehicle motion, and disc-model contacts.

Vehicles travel along the segments of a rectangular street grid. On reaching
an intersection, a vehicle keeps its heading with probability 0.5 whenever the
road ahead continues; the other half of the probability mass is split evenly
over every remaining outgoing road, the one it arrived on included. When the
road does not continue (corners, T-stems) the vehicle picks uniformly among
the other roads, reversing only when nothing else is available.
Area-restricted vehicles treat roads leaving their horizontal band as
nonexistent, so their trajectories never leave it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError


@dataclass(frozen=True)
class GridMap:
    """Street grid with `rows` horizontal and `cols` vertical streets, `block_length` m apart.

    Intersections are numbered row-major; intersection (row, col) sits at
    coordinates (col * block_length, row * block_length).
    """

    rows: int
    cols: int
    block_length: float
    neighbors: tuple[tuple[int, ...], ...] = field(repr=False, compare=False)

    @property
    def num_intersections(self) -> int:
        return self.rows * self.cols

    @property
    def num_streets(self) -> int:
        """Count of undirected one-block street segments."""
        return self.rows * (self.cols - 1) + self.cols * (self.rows - 1)

    def degree(self, node: int) -> int:
        return len(self.neighbors[node])

    def node_xy(self, node: int) -> tuple[float, float]:
        r, c = divmod(node, self.cols)
        return c * self.block_length, r * self.block_length

    def band_row_range(self, band: int, num_areas: int) -> tuple[int, int]:
        """Inclusive (first, last) street rows belonging to a horizontal band.

        Bands split the rows evenly; the last band absorbs any remainder rows.
        """
        rpb = self.rows // num_areas
        if num_areas < 1 or rpb < 1:
            raise InvalidConfigError(
                f"cannot split {self.rows} rows into {num_areas} areas"
            )
        if not 0 <= band < num_areas:
            raise InvalidConfigError(f"band {band} out of range for {num_areas} areas")
        lo = band * rpb
        hi = self.rows - 1 if band == num_areas - 1 else (band + 1) * rpb - 1
        return lo, hi


def build_grid(rows: int, cols: int, block_length: float) -> GridMap:
    """Construct a connected grid of `rows` x `cols` intersections."""
    if rows < 2 or cols < 2:
        raise InvalidConfigError(f"grid needs at least 2x2 streets, got {rows}x{cols}")
    if block_length <= 0:
        raise InvalidConfigError(f"block_length must be positive, got {block_length}")
    nbrs = []
    for node in range(rows * cols):
        r, c = divmod(node, cols)
        out = []
        for dr, dc in ((-1, 0), (0, -1), (0, 1), (1, 0)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols:
                out.append(rr * cols + cc)
        nbrs.append(tuple(sorted(out)))
    return GridMap(rows, cols, float(block_length), tuple(nbrs))


@dataclass(slots=True)
class VehicleState:
    """Kinematics of one vehicle: travelling from `tail` toward `head`, `offset` m along.

    `row_range` is the inclusive range of street rows an area-restricted
    vehicle may use; None means the whole grid is available.
    """

    id: int
    tail: int
    head: int
    offset: float
    speed: float
    home_area: int | None = None
    free_roam: bool = True
    row_range: tuple[int, int] | None = None


@dataclass(frozen=True)
class AreaSpec:
    """Vehicle population layout: per-band restricted vehicles plus free roamers."""

    num_areas: int
    restricted_per_area: int
    free: int

    @property
    def total(self) -> int:
        return self.num_areas * self.restricted_per_area + self.free


@dataclass(frozen=True)
class ContactEvent:
    """Two vehicles entering communication range during an epoch."""

    epoch: int
    tick_time: float
    a: int
    b: int


def position(v: VehicleState, grid: GridMap) -> tuple[float, float]:
    """Euclidean coordinates of a vehicle interpolated along its segment."""
    x0, y0 = grid.node_xy(v.tail)
    x1, y1 = grid.node_xy(v.head)
    f = v.offset / grid.block_length
    return x0 + f * (x1 - x0), y0 + f * (y1 - y0)


def _directed_edges(grid: GridMap, row_range: tuple[int, int] | None) -> list[tuple[int, int]]:
    edges = []
    for u in range(grid.num_intersections):
        if row_range is not None and not row_range[0] <= u // grid.cols <= row_range[1]:
            continue
        for w in grid.neighbors[u]:
            if row_range is not None and not row_range[0] <= w // grid.cols <= row_range[1]:
                continue
            edges.append((u, w))
    return edges


def init_vehicles(
    grid: GridMap,
    n: int,
    speed: float,
    area_spec: AreaSpec | None,
    rng: np.random.Generator,
) -> list[VehicleState]:
    """Place `n` vehicles uniformly at random on road segments.

    With an `area_spec`, the first num_areas * restricted_per_area vehicles are
    confined to their band (vehicle id // restricted_per_area) and placed inside
    it; the remaining `free` vehicles roam the whole grid.
    """
    if n < 1:
        raise InvalidConfigError("need at least one vehicle")
    if speed <= 0:
        raise InvalidConfigError(f"speed must be positive, got {speed}")
    if area_spec is not None:
        if area_spec.total != n:
            raise InvalidConfigError(
                f"area spec accounts for {area_spec.total} vehicles, expected {n}"
            )
        # raises when the rows cannot be banded
        grid.band_row_range(0, area_spec.num_areas)

    edge_lists: dict[tuple[int, int] | None, list[tuple[int, int]]] = {}
    vehicles = []
    for vid in range(n):
        home: int | None = None
        row_range: tuple[int, int] | None = None
        if area_spec is not None and vid < area_spec.num_areas * area_spec.restricted_per_area:
            home = vid // area_spec.restricted_per_area
            row_range = grid.band_row_range(home, area_spec.num_areas)
        if row_range not in edge_lists:
            edge_lists[row_range] = _directed_edges(grid, row_range)
        edges = edge_lists[row_range]
        tail, head = edges[int(rng.integers(len(edges)))]
        offset = float(rng.uniform(0.0, grid.block_length))
        vehicles.append(
            VehicleState(
                id=vid,
                tail=tail,
                head=head,
                offset=offset,
                speed=speed,
                home_area=home,
                free_roam=home is None,
                row_range=row_range,
            )
        )
    return vehicles


def _turn(v: VehicleState, grid: GridMap, rng: np.random.Generator) -> None:
    """Pick the next segment when `v` reaches the intersection `v.head`."""
    tail, node = v.tail, v.head
    if v.row_range is None:
        options = grid.neighbors[node]
    else:
        lo, hi = v.row_range
        cols = grid.cols
        options = [w for w in grid.neighbors[node] if lo <= w // cols <= hi]
    # Straight continuation keeps node-id stride; id wrap across a row edge is
    # never a grid neighbor, so membership alone validates it.
    straight = 2 * node - tail
    if straight in options:
        if rng.random() < 0.5:
            nxt = straight
        else:
            others = [w for w in options if w != straight]
            nxt = others[int(rng.integers(len(others)))] if len(others) > 1 else others[0]
    else:
        others = [w for w in options if w != tail]
        if others:
            nxt = others[int(rng.integers(len(others)))] if len(others) > 1 else others[0]
        else:
            nxt = tail  # dead end: forced U-turn
    v.tail = node
    v.head = nxt
    v.offset = 0.0


def step(v: VehicleState, grid: GridMap, dt: float, rng: np.random.Generator) -> VehicleState:
    """Advance `v` by speed*dt metres, turning at intersections; mutates and returns `v`.

    Residual distance carries across intersections, so the travelled distance
    within one tick is exactly speed*dt regardless of how many turns occur.
    """
    if dt <= 0:
        raise InvalidConfigError(f"dt must be positive, got {dt}")
    remaining = v.speed * dt
    length = grid.block_length
    while v.offset + remaining > length:
        remaining -= length - v.offset
        _turn(v, grid, rng)
    v.offset += remaining
    return v


def detect_contacts(
    states: list[VehicleState], grid: GridMap, comm_range: float
) -> list[tuple[int, int]]:
    """All unordered vehicle pairs within `comm_range` (inclusive), lexicographically sorted."""
    if comm_range <= 0:
        raise InvalidConfigError(f"communication range must be positive, got {comm_range}")
    n = len(states)
    if n < 2:
        return []
    xs = np.empty(n)
    ys = np.empty(n)
    ids = np.empty(n, dtype=np.int64)
    for k, v in enumerate(states):
        xs[k], ys[k] = position(v, grid)
        ids[k] = v.id
    dx = xs[:, None] - xs[None, :]
    dy = ys[:, None] - ys[None, :]
    within = dx * dx + dy * dy <= comm_range * comm_range
    iu, ju = np.nonzero(np.triu(within, k=1))
    pairs = []
    for i, j in zip(iu.tolist(), ju.tolist()):
        a, b = int(ids[i]), int(ids[j])
        pairs.append((a, b) if a < b else (b, a))
    pairs.sort()
    return pairs


def area_of(v: VehicleState, grid: GridMap, num_areas: int) -> int:
    """Horizontal band index containing the vehicle's y-coordinate.

    A y exactly on a band's top street belongs to that (lower-index) band.
    """
    rpb = grid.rows // num_areas
    if num_areas < 1 or rpb < 1:
        raise InvalidConfigError(f"cannot split {grid.rows} rows into {num_areas} areas")
    _, y = position(v, grid)
    for k in range(1, num_areas):
        top = (k * rpb - 1) * grid.block_length
        if y <= top:
            return k - 1
    return num_areas - 1
