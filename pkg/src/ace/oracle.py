"""Exact tabular ground truth for the pursuit environment.

Builds the full transition model over all side^6 states (per-state fly-move
outcome sets with exact probabilities), runs value iteration on the joint
MDP and on its sequential expansion, and derives the greedy oracle policy
used as the baseline for the steps-gap metric.  State indexing is the
mixed-radix (s0x, s0y, s1x, s1y, fx, fy) order of env.state_index.

Joint actions are indexed a0 * 5 + a1 (spider 0 major), matching the sorted
agent order; greedy ties break toward the lowest index.
"""

import struct
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np

from ace.env import ACTION_DELTAS, GridConfig, N_ACTIONS

MAX_ORACLE_SIDE = 7
N_JOINT = N_ACTIONS * N_ACTIONS
TABLE_MAGIC = b"ACETBL01"


class ValueTable(NamedTuple):
    """Converged values (one row per state), discount, final sup residual."""

    values: np.ndarray
    discount: float
    residual: float


class MMDPSolution(NamedTuple):
    table: ValueTable
    q: np.ndarray  # (S, 25) action values under the converged table
    policy: np.ndarray  # (S,) greedy joint-action index


class SESolution(NamedTuple):
    """Sequential-expansion tables: v1[s, a1] after the first decision,
    v2[s, a1*5+a2] after both."""

    v1: ValueTable
    v2: ValueTable


class TransitionModel(NamedTuple):
    """Dense dynamics: up to 4 fly outcomes per (state, joint action).

    Invalid outcome slots are masked out and aliased to a valid index so
    gathers stay in bounds.  ``caught[s, a]`` marks transitions where a
    spider lands on the fly (single outcome, reward 10, next state
    terminal).  ``n_out`` counts the equally likely outcomes.
    """

    side: int
    next_idx: np.ndarray  # (S, 25, 4) int32
    mask: np.ndarray  # (S, 25, 4) bool
    n_out: np.ndarray  # (S, 25) uint8
    reward: np.ndarray  # (S, 25) float32
    caught: np.ndarray  # (S, 25) bool
    terminal: np.ndarray  # (S,) bool


def state_digits(side: int) -> Tuple[np.ndarray, ...]:
    """Coordinate arrays (s0x, s0y, s1x, s1y, fx, fy) for every state index."""
    idx = np.arange(side**6)
    digits = []
    for p in range(5, -1, -1):
        digits.append((idx // side**p) % side)
    return tuple(digits)


def legal_start_mask(cfg: GridConfig) -> np.ndarray:
    """States usable as episode starts: every spider strictly farther than
    the threshold from the fly."""
    s0x, s0y, s1x, s1y, fx, fy = state_digits(cfg.side)
    d0 = np.abs(s0x - fx) + np.abs(s0y - fy)
    d1 = np.abs(s1x - fx) + np.abs(s1y - fy)
    return np.minimum(d0, d1) > cfg.min_start_distance


def build_transition_model(cfg: GridConfig) -> TransitionModel:
    L = cfg.side
    if L > MAX_ORACLE_SIDE:
        raise ValueError("state space too large")
    S = L**6
    s0x, s0y, s1x, s1y, fx, fy = state_digits(L)
    terminal = ((s0x == fx) & (s0y == fy)) | ((s1x == fx) & (s1y == fy))

    def moved(x, y, a):
        dx, dy = ACTION_DELTAS[a]
        nx, ny = x + dx, y + dy
        ok = (nx >= 0) & (nx < L) & (ny >= 0) & (ny < L)
        return np.where(ok, nx, x), np.where(ok, ny, y)

    sp0 = [moved(s0x, s0y, a) for a in range(N_ACTIONS)]
    sp1 = [moved(s1x, s1y, a) for a in range(N_ACTIONS)]

    next_idx = np.empty((S, N_JOINT, 4), dtype=np.int32)
    mask = np.zeros((S, N_JOINT, 4), dtype=bool)
    n_out = np.empty((S, N_JOINT), dtype=np.uint8)
    caught = np.empty((S, N_JOINT), dtype=bool)

    for a0 in range(N_ACTIONS):
        n0x, n0y = sp0[a0]
        for a1 in range(N_ACTIONS):
            n1x, n1y = sp1[a1]
            j = a0 * N_ACTIONS + a1
            hit = ((n0x == fx) & (n0y == fy)) | ((n1x == fx) & (n1y == fy))
            spider_part = ((n0x * L + n0y) * L + n1x) * L + n1y
            stay = (spider_part * L + fx) * L + fy
            n_safe = np.zeros(S, dtype=np.uint8)
            for k, (dx, dy) in enumerate(ACTION_DELTAS[:4]):
                cx, cy = fx + dx, fy + dy
                inb = (cx >= 0) & (cx < L) & (cy >= 0) & (cy < L)
                safe = (
                    inb
                    & (np.abs(cx - n0x) + np.abs(cy - n0y) > 1)
                    & (np.abs(cx - n1x) + np.abs(cy - n1y) > 1)
                )
                cand = (spider_part * L + np.clip(cx, 0, L - 1)) * L + np.clip(cy, 0, L - 1)
                use = safe & ~hit
                next_idx[:, j, k] = np.where(use, cand, stay)
                mask[:, j, k] = use
                n_safe += safe
            single = hit | (n_safe == 0)
            next_idx[:, j, 0] = np.where(single, stay, next_idx[:, j, 0])
            mask[:, j, 0] |= single
            n_out[:, j] = np.where(single, 1, n_safe)
            caught[:, j] = hit

    reward = np.where(caught, np.float32(10.0), np.float32(0.0))
    return TransitionModel(L, next_idx, mask, n_out, reward, caught, terminal)


def _expected_over_fly(model: TransitionModel, values: np.ndarray) -> np.ndarray:
    """E over fly outcomes of values[next state], per (state, joint action)."""
    acc = np.zeros(model.reward.shape, dtype=np.float64)
    for k in range(4):
        acc += model.mask[:, :, k] * values[model.next_idx[:, :, k]]
    acc /= model.n_out
    return acc


def _q_values(model: TransitionModel, values: np.ndarray, discount: float) -> np.ndarray:
    q = model.reward + discount * _expected_over_fly(model, values)
    q[model.terminal] = 0.0
    return q


def value_iteration_mmdp(
    cfg: GridConfig,
    discount: float,
    tol: float,
    model: Optional[TransitionModel] = None,
    max_sweeps: int = 100_000,
) -> MMDPSolution:
    """Exact value iteration on the joint MDP, synchronous sweeps.

    Converges to sup-norm Bellman residual <= tol; terminal (caught) states
    are absorbing with value 0.  The greedy policy breaks ties toward the
    lowest joint-action index.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0 < discount < 1:
        raise ValueError("discount must lie in (0, 1)")
    if model is None:
        model = build_transition_model(cfg)
    v = np.zeros(cfg.side**6, dtype=np.float64)
    for _ in range(max_sweeps):
        q = _q_values(model, v, discount)
        v_new = q.max(axis=1)
        residual = np.abs(v_new - v).max()
        v = v_new
        if residual <= tol:
            q = _q_values(model, v, discount)
            return MMDPSolution(ValueTable(v, discount, residual), q, q.argmax(axis=1))
    raise RuntimeError("value iteration did not converge within the sweep budget")


def value_iteration_semdp(
    cfg: GridConfig,
    discount: float,
    tol: float,
    model: Optional[TransitionModel] = None,
    max_sweeps: int = 100_000,
) -> SESolution:
    """Exact value iteration over the sequentially expanded states.

    Fixed point solved for:
      v1[s, a1]       = discount * max_a2 v2[s, a1*5+a2]
      v2[s, a1*5+a2]  = r(s, a) + discount * E_fly[ max_a1' v1[s', a1'] ]
    with every descendant of a terminal base state pinned to 0.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0 < discount < 1:
        raise ValueError("discount must lie in (0, 1)")
    if model is None:
        model = build_transition_model(cfg)
    S = cfg.side**6
    v1 = np.zeros((S, N_ACTIONS), dtype=np.float64)
    v2 = np.zeros((S, N_JOINT), dtype=np.float64)
    for _ in range(max_sweeps):
        m = v1.max(axis=1)
        v2_new = model.reward + discount * _expected_over_fly(model, m)
        v2_new[model.terminal] = 0.0
        v1_new = discount * v2.reshape(S, N_ACTIONS, N_ACTIONS).max(axis=2)
        v1_new[model.terminal] = 0.0
        residual = max(np.abs(v1_new - v1).max(), np.abs(v2_new - v2).max())
        v1, v2 = v1_new, v2_new
        if residual <= tol:
            return SESolution(
                ValueTable(v1, discount, residual), ValueTable(v2, discount, residual)
            )
    raise RuntimeError("value iteration did not converge within the sweep budget")


def sequential_greedy_policy(se: SESolution) -> np.ndarray:
    """Joint action chosen by maximizing v1 then v2 along the committed
    prefix, ties toward the lowest action id; returns (S,) joint indices."""
    S = se.v1.values.shape[0]
    a1 = se.v1.values.argmax(axis=1)
    rows = se.v2.values.reshape(S, N_ACTIONS, N_ACTIONS)[np.arange(S), a1]
    return a1 * N_ACTIONS + rows.argmax(axis=1)


def greedy_set(q: np.ndarray, tol: float) -> np.ndarray:
    """Boolean (S, 25) mask of actions within tol of the row maximum."""
    return q >= q.max(axis=1, keepdims=True) - tol


def check_equivalence(
    cfg: GridConfig, discount: float = 0.99, vi_tol: float = 1e-10, tol: float = 1e-8
) -> dict:
    """Compare the expanded and joint solutions on one grid.

    The expansion applies the discount once per intermediate hop, so the
    joint comparison runs at discount^n and the first-decision values carry
    one leftover discount factor: max_a1 v1 = discount * v_joint.
    """
    model = build_transition_model(cfg)
    se = value_iteration_semdp(cfg, discount, vi_tol, model)
    mmdp = value_iteration_mmdp(cfg, discount**2, vi_tol, model)
    scaling_error = float(
        np.abs(se.v1.values.max(axis=1) - discount * mmdp.table.values).max()
    )
    seq_pol = sequential_greedy_policy(se)
    ok_mask = greedy_set(mmdp.q, tol)[np.arange(seq_pol.shape[0]), seq_pol]
    return {
        "n_states": int(seq_pol.shape[0]),
        "scaling_error": scaling_error,
        "greedy_matches": int(ok_mask.sum()),
        "ok": scaling_error <= tol and bool(ok_mask.all()),
    }


# ---------------------------------------------------------------------------
# Policy rollouts: exact dynamic programming and Monte-Carlo simulation.


def policy_success_probability(
    model: TransitionModel, policy: np.ndarray, horizon: int
) -> np.ndarray:
    """Exact P(catch within `horizon` env steps | start state) under a
    deterministic joint policy; terminal states count as already caught."""
    S = model.terminal.shape[0]
    rows = np.arange(S)
    a = policy
    caught = model.caught[rows, a]
    n = model.n_out[rows, a].astype(np.float64)
    nxt = model.next_idx[rows, a]  # (S, 4)
    msk = model.mask[rows, a]
    p = model.terminal.astype(np.float64)
    for _ in range(horizon):
        cont = (msk * p[nxt]).sum(axis=1) / n
        p_new = np.where(caught, 1.0, cont)
        p_new = np.where(model.terminal, 1.0, p_new)
        p = p_new
    return p


def policy_expected_steps(
    model: TransitionModel, policy: np.ndarray, cap: int
) -> np.ndarray:
    """Exact E[min(steps to catch, cap)] per start state under a
    deterministic joint policy: sum over k of P(steps > k)."""
    S = model.terminal.shape[0]
    rows = np.arange(S)
    a = policy
    caught = model.caught[rows, a]
    n = model.n_out[rows, a].astype(np.float64)
    nxt = model.next_idx[rows, a]
    msk = model.mask[rows, a]
    p = model.terminal.astype(np.float64)
    expected = np.zeros(S, dtype=np.float64)
    for _ in range(cap):
        expected += 1.0 - p
        cont = (msk * p[nxt]).sum(axis=1) / n
        p = np.where(model.terminal | caught, 1.0, cont)
    return expected


def sample_legal_starts(
    cfg: GridConfig, count: int, rng: np.random.Generator, model: Optional[TransitionModel] = None
) -> np.ndarray:
    """Uniform state indices over the legal-start set, by rejection."""
    legal = legal_start_mask(cfg)
    if not legal.any():
        raise ValueError("infeasible start constraint")
    S = legal.shape[0]
    out = np.empty(count, dtype=np.int64)
    have = 0
    while have < count:
        draw = rng.integers(S, size=max(count - have, 64) * 2)
        draw = draw[legal[draw]][: count - have]
        out[have : have + draw.shape[0]] = draw
        have += draw.shape[0]
    return out


def oracle_average_steps(
    cfg: GridConfig,
    policy: np.ndarray,
    episodes: int,
    rng: np.random.Generator,
    model: Optional[TransitionModel] = None,
) -> Tuple[float, float]:
    """Monte-Carlo (mean steps, success rate within 10 steps) of a
    deterministic joint policy from uniform legal starts.

    Episodes uncaught at cfg.max_steps are counted at the cap and as
    failures for the 10-step rate.
    """
    if model is None:
        model = build_transition_model(cfg)
    cur = sample_legal_starts(cfg, episodes, rng)
    steps = np.full(episodes, cfg.max_steps, dtype=np.int64)
    success = np.zeros(episodes, dtype=bool)
    alive = np.arange(episodes)
    for t in range(1, cfg.max_steps + 1):
        if alive.size == 0:
            break
        a = policy[cur]
        rows_caught = model.caught[cur, a]
        ended = alive[rows_caught]
        steps[ended] = t
        success[ended] = t <= 10
        keep = ~rows_caught
        alive, cur, a = alive[keep], cur[keep], a[keep]
        if alive.size == 0:
            break
        msk = model.mask[cur, a]
        nxt = model.next_idx[cur, a]
        n = model.n_out[cur, a]
        pick = np.minimum((rng.random(cur.shape[0]) * n).astype(np.int64), n - 1)
        rank = np.cumsum(msk, axis=1) - 1
        sel = msk & (rank == pick[:, None])
        cur = (nxt * sel).sum(axis=1)
    return float(steps.mean()), float(success.mean())


# ---------------------------------------------------------------------------
# Flat binary table files for fixture reuse.


def save_table(path: str, cfg: GridConfig, table: ValueTable) -> None:
    """Header (magic, side, discount, count) then little-endian 64-bit
    values in index order."""
    flat = np.ascontiguousarray(table.values, dtype="<f8").ravel()
    with open(path, "wb") as f:
        f.write(struct.pack("<8sIdQ", TABLE_MAGIC, cfg.side, table.discount, flat.size))
        f.write(flat.tobytes())


def load_table(path: str) -> Tuple[int, float, np.ndarray]:
    """Returns (side, discount, flat values); validates magic and count."""
    with open(path, "rb") as f:
        header = f.read(struct.calcsize("<8sIdQ"))
        magic, side, discount, count = struct.unpack("<8sIdQ", header)
        if magic != TABLE_MAGIC:
            raise ValueError("not a value-table file")
        values = np.frombuffer(f.read(count * 8), dtype="<f8")
        if values.size != count:
            raise ValueError("truncated value-table file")
    return side, discount, values.astype(np.float64)
