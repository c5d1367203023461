"""Grid pursuit environment: two controlled spiders chase an evasive fly.

Both spiders move simultaneously (off-grid moves resolve to stay), then the
fly moves to a uniformly random safe neighbor, where safe means in bounds,
not a spider cell, and not Manhattan-adjacent to any spider; with no safe
neighbor the fly stays put.  A catch is a spider sharing the fly's cell,
checked after the spider move and again after the fly move, and pays reward
10; every other step pays 0.  States are immutable values and all functions
take an explicit random generator, so instances with independent streams can
run concurrently.
"""

from typing import Iterator, List, NamedTuple, Sequence, Tuple

import numpy as np

Coord = Tuple[int, int]

# Action ids 0..4.  Up increases y.
UP, DOWN, LEFT, RIGHT, STAY = range(5)
ACTION_DELTAS: Tuple[Coord, ...] = ((0, 1), (0, -1), (-1, 0), (1, 0), (0, 0))
N_ACTIONS = 5
N_AGENTS = 2
N_UNITS = 3  # two spiders plus the fly
NODE_DIM = N_UNITS + 2  # one-hot unit id ++ normalized position
EDGE_DIM = 2


class GridConfig(NamedTuple):
    side: int
    max_steps: int = 100
    min_start_distance: int = 4


class EnvState(NamedTuple):
    spiders: Tuple[Coord, Coord]
    fly: Coord
    step_count: int


class UnitFeatures(NamedTuple):
    """node: (3, NODE_DIM) per-unit vectors; edges: (3, 2, EDGE_DIM), where
    edges[j] holds the displacements from unit j to the other units in
    ascending unit index."""

    node: np.ndarray
    edges: np.ndarray


def default_config(side: int, max_steps: int = 100) -> GridConfig:
    """Standard config for a grid: start-distance threshold 4, scaled to
    side-1 on grids too small to satisfy it."""
    if side < 3:
        raise ValueError("side must be at least 3")
    return GridConfig(side, max_steps, 4 if side >= 5 else side - 1)


def manhattan(a: Coord, b: Coord) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _move(pos: Coord, action: int, side: int) -> Coord:
    dx, dy = ACTION_DELTAS[action]
    x, y = pos[0] + dx, pos[1] + dy
    if 0 <= x < side and 0 <= y < side:
        return (x, y)
    return pos  # off-grid resolves to stay


def is_caught(spiders: Sequence[Coord], fly: Coord) -> bool:
    return fly in spiders


def is_terminal(cfg: GridConfig, s: EnvState) -> bool:
    return is_caught(s.spiders, s.fly) or s.step_count >= cfg.max_steps


def safe_moves(cfg: GridConfig, spiders: Sequence[Coord], fly: Coord) -> List[Coord]:
    """In-bounds 4-neighbors of the fly that are neither a spider cell nor
    Manhattan-adjacent to any spider, in the fixed action-delta order."""
    out = []
    for dx, dy in ACTION_DELTAS[:4]:
        x, y = fly[0] + dx, fly[1] + dy
        if not (0 <= x < cfg.side and 0 <= y < cfg.side):
            continue
        if all(manhattan((x, y), sp) > 1 for sp in spiders):
            out.append((x, y))
    return out


def fly_move(cfg: GridConfig, s: EnvState, rng: np.random.Generator) -> Coord:
    """Next fly cell: uniform over the safe set, or the current cell if empty."""
    safe = safe_moves(cfg, s.spiders, s.fly)
    if not safe:
        return s.fly
    return safe[rng.integers(len(safe))]


def reset(cfg: GridConfig, rng: np.random.Generator) -> EnvState:
    """Uniform sample over placements with every spider-fly Manhattan
    distance strictly above the threshold."""
    if 2 * (cfg.side - 1) <= cfg.min_start_distance:
        raise ValueError("infeasible start constraint")
    while True:
        p = rng.integers(cfg.side, size=6)
        spiders = ((int(p[0]), int(p[1])), (int(p[2]), int(p[3])))
        fly = (int(p[4]), int(p[5]))
        if min(manhattan(sp, fly) for sp in spiders) > cfg.min_start_distance:
            return EnvState(spiders, fly, 0)


def step(
    cfg: GridConfig, s: EnvState, joint_action: Sequence[int], rng: np.random.Generator
) -> Tuple[EnvState, float, bool]:
    """Advance one step under per-spider actions; returns (state, reward, done)."""
    if is_terminal(cfg, s):
        raise ValueError("episode finished")
    if len(joint_action) != N_AGENTS:
        raise ValueError("joint action must have one action per spider")
    for a in joint_action:
        if not 0 <= int(a) < N_ACTIONS:
            raise ValueError(f"illegal action {a!r}")
    spiders = tuple(_move(sp, int(a), cfg.side) for sp, a in zip(s.spiders, joint_action))
    count = s.step_count + 1
    if is_caught(spiders, s.fly):
        return EnvState(spiders, s.fly, count), 10.0, True
    fly = fly_move(cfg, EnvState(spiders, s.fly, count), rng)
    if is_caught(spiders, fly):  # unreachable for a safe-rule fly, checked anyway
        return EnvState(spiders, fly, count), 10.0, True
    return EnvState(spiders, fly, count), 0.0, count >= cfg.max_steps


def features(cfg: GridConfig, s: EnvState) -> UnitFeatures:
    """Per-unit node features (one-hot id ++ position/L) and pairwise
    displacement edges ((x_k - x_j)/L, (y_k - y_j)/L)."""
    L = float(cfg.side)
    units = (*s.spiders, s.fly)
    node = np.zeros((N_UNITS, NODE_DIM), dtype=np.float32)
    edges = np.zeros((N_UNITS, N_UNITS - 1, EDGE_DIM), dtype=np.float32)
    for j, (x, y) in enumerate(units):
        node[j, j] = 1.0
        node[j, N_UNITS] = x / L
        node[j, N_UNITS + 1] = y / L
        for slot, k in enumerate(i for i in range(N_UNITS) if i != j):
            edges[j, slot, 0] = (units[k][0] - x) / L
            edges[j, slot, 1] = (units[k][1] - y) / L
    return UnitFeatures(node, edges)


def state_index(cfg: GridConfig, s: EnvState) -> int:
    """Mixed-radix index over (s0x, s0y, s1x, s1y, fx, fy)."""
    L = cfg.side
    idx = 0
    for v in (*s.spiders[0], *s.spiders[1], *s.fly):
        idx = idx * L + v
    return idx


def state_from_index(cfg: GridConfig, idx: int) -> EnvState:
    L = cfg.side
    digits = []
    for _ in range(6):
        digits.append(idx % L)
        idx //= L
    fy, fx, s1y, s1x, s0y, s0x = digits
    return EnvState(((s0x, s0y), (s1x, s1y)), (fx, fy), 0)


def enumerate_states(cfg: GridConfig) -> Iterator[EnvState]:
    """Every (spider0, spider1, fly) placement, side^6 states, catch states
    included as terminals, in index order."""
    if cfg.side > 9:
        raise ValueError("state space too large")
    for idx in range(cfg.side**6):
        yield state_from_index(cfg, idx)


class Env:
    """Stateful wrapper owning a config, a random stream and the live state.

    Constructed from a 64-bit seed; identical seeds reproduce identical
    episodes under identical action sequences.
    """

    def __init__(self, cfg: GridConfig, seed: int):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.state = reset(cfg, self.rng)

    def reset(self) -> EnvState:
        self.state = reset(self.cfg, self.rng)
        return self.state

    def step(self, joint_action: Sequence[int]) -> Tuple[EnvState, float, bool]:
        nxt, reward, done = step(self.cfg, self.state, joint_action, self.rng)
        self.state = nxt
        return nxt, reward, done
