"""Temporal-difference training on the sequentially expanded process.

Replay stores whole environment transitions (compact coordinate form); the
intermediate prefix states and their Bellman targets are rebuilt at training
time, so targets stay freshly maximized under the current target network:

    target_i = gamma * max_a V_target(s_{a_{1:i}, a})          for i < n
    target_n = r + gamma * max_a V_target(s'_a), or r when done

Action selection is epsilon-greedy independently at each intermediate
decision, so later agents condition on possibly exploratory earlier actions.
Everything runs single-threaded over a batched environment pool, which keeps
runs bit-reproducible for a fixed (seed, config).
"""

import time
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ace import env as envmod
from ace import oracle, seeding
from ace.env import Env, EnvState, GridConfig
from ace.model import ACEModel
from ace.nn.params import ParamStore, save_checkpoint


class EpsilonSchedule:
    """Linear interpolation from start to end over decay_steps samples."""

    def __init__(self, start: float = 1.0, end: float = 0.05,
                 decay_steps: int = 150_000):
        if not start >= end >= 0:
            raise ValueError("start must be >= end >= 0")
        if decay_steps <= 0:
            raise ValueError("decay_steps must be positive")
        self.start = start
        self.end = end
        self.decay_steps = decay_steps

    def value(self, samples: int) -> float:
        if samples >= self.decay_steps:
            return self.end
        frac = max(samples / self.decay_steps, 0.0)
        return self.start + (self.end - self.start) * frac


class TrainConfig(NamedTuple):
    side: int = 5
    max_steps: int = 100
    discount: float = 0.99
    hidden: int = 128
    lr: float = 5e-4
    weight_decay: float = 0.0
    batch_size: int = 256
    replay_capacity: int = 1_000_000
    collector_env_num: int = 8
    sample_per_collect: int = 1024
    update_per_collect: int = 10
    target_update_theta: float = 0.02
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 150_000
    order_mode: str = "sorted"
    ia_enabled: bool = True
    eval_every: int = 5120
    eval_episodes: int = 200
    solve_streak: int = 3

    def validate(self) -> "TrainConfig":
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        if self.order_mode not in ("sorted", "shuffle"):
            raise ValueError("order_mode must be 'sorted' or 'shuffle'")
        for field in ("hidden", "lr", "batch_size", "replay_capacity",
                      "collector_env_num", "sample_per_collect",
                      "update_per_collect", "eval_every", "eval_episodes",
                      "solve_streak"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive")
        EpsilonSchedule(self.eps_start, self.eps_end, self.eps_decay_steps)
        return self

    def schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.eps_start, self.eps_end, self.eps_decay_steps)

    def grid(self) -> GridConfig:
        base = envmod.default_config(self.side, self.max_steps)
        return base


class Batch(NamedTuple):
    """One replay sample; actions are position-ordered, ``first`` names the
    agent acting at position 0 (the other agent acts at position 1)."""

    coords: np.ndarray  # (B, 6) int8
    actions: np.ndarray  # (B, 2) int64
    rewards: np.ndarray  # (B,) float32
    next_coords: np.ndarray  # (B, 6) int8
    dones: np.ndarray  # (B,) bool
    first: np.ndarray  # (B,) int64


class ReplayBuffer:
    """Uniform ring buffer over fixed-width transition records."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.size = 0
        self._pos = 0
        self._coords = np.empty((capacity, 6), dtype=np.int8)
        self._actions = np.empty((capacity, 2), dtype=np.int8)
        self._rewards = np.empty(capacity, dtype=np.float32)
        self._next_coords = np.empty((capacity, 6), dtype=np.int8)
        self._dones = np.empty(capacity, dtype=bool)
        self._first = np.empty(capacity, dtype=np.int8)

    def __len__(self) -> int:
        return self.size

    def add_batch(self, coords, actions, rewards, next_coords, dones, first) -> None:
        n = coords.shape[0]
        if n > self.capacity:
            raise ValueError("batch larger than buffer capacity")
        idx = (self._pos + np.arange(n)) % self.capacity
        self._coords[idx] = coords
        self._actions[idx] = actions
        self._rewards[idx] = rewards
        self._next_coords[idx] = next_coords
        self._dones[idx] = dones
        self._first[idx] = first
        self._pos = (self._pos + n) % self.capacity
        self.size = min(self.size + n, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(self.size, size=batch_size)
        return Batch(
            self._coords[idx],
            self._actions[idx].astype(np.int64),
            self._rewards[idx],
            self._next_coords[idx],
            self._dones[idx],
            self._first[idx].astype(np.int64),
        )


# -- features over compact coordinates ---------------------------------------

_OTHERS = np.array([[1, 2], [0, 2], [0, 1]])


def state_coords(s: EnvState) -> np.ndarray:
    return np.array([*s.spiders[0], *s.spiders[1], *s.fly], dtype=np.int8)


def batch_features(side: int, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized equivalent of per-state feature extraction: coords (B, 6)
    -> node (B, 3, 5), edges (B, 3, 2, 2)."""
    B = coords.shape[0]
    xy = coords.reshape(B, 3, 2).astype(np.float32)
    L = np.float32(side)
    node = np.zeros((B, 3, envmod.NODE_DIM), dtype=np.float32)
    node[:, np.arange(3), np.arange(3)] = 1.0
    node[:, :, 3:] = xy / L
    edges = (xy[:, _OTHERS] - xy[:, :, None]) / L
    return node, edges


# -- sequential action selection ----------------------------------------------


def _eps_greedy(values: np.ndarray, eps: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    """Row-wise argmax (ties toward the lowest action id) replaced by a
    uniform draw with probability eps; rng is consumed at a fixed rate."""
    greedy = values.argmax(axis=1)
    explore = rng.random(values.shape[0]) < eps
    uniform = rng.integers(values.shape[1], size=values.shape[0])
    return np.where(explore, uniform, greedy)


def select_joint_actions(
    model: ACEModel,
    side: int,
    coords: np.ndarray,
    orders: np.ndarray,
    eps: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Batched two-step sequential selection.

    coords (B, 6), orders (B, 2) agent ids by position, eps broadcastable to
    (B,).  Returns position-ordered actions (B, 2); one encoder pass serves
    every candidate of both decisions.
    """
    node, edges = batch_features(side, coords)
    emb = model.encode_units(node, edges)
    B = coords.shape[0]
    empty = np.zeros((B, 0), dtype=np.int64)
    actions = np.empty((B, 2), dtype=np.int64)
    v1 = model.rollout_values(emb, empty, empty, orders[:, 0])
    actions[:, 0] = _eps_greedy(v1, eps, rng)
    v2 = model.rollout_values(emb, actions[:, :1], orders[:, :1], orders[:, 1])
    actions[:, 1] = _eps_greedy(v2, eps, rng)
    return actions


def select_joint_action(
    model: ACEModel,
    side: int,
    state: EnvState,
    eps: float,
    rng: np.random.Generator,
    order: Sequence[int] = (0, 1),
) -> Tuple[int, int]:
    """Single-state wrapper; returns the agent-indexed joint action."""
    pos = select_joint_actions(
        model, side, state_coords(state)[None], np.array([order]),
        np.full(1, eps), rng,
    )[0]
    joint = [0, 0]
    joint[order[0]] = int(pos[0])
    joint[order[1]] = int(pos[1])
    return tuple(joint)


# -- collection ---------------------------------------------------------------


class Collector:
    """Batched environment pool feeding the replay buffer.

    Epsilon follows the schedule at the global sample counter (one sample =
    one environment transition).  Order per step: agent index order, or a
    fresh random permutation in shuffle mode.
    """

    def __init__(self, cfg: TrainConfig, model: ACEModel, seed: int):
        self.cfg = cfg
        self.model = model
        self.grid = cfg.grid()
        seeds = seeding.env_seeds(seed, "collector-envs", cfg.collector_env_num)
        self.envs = [Env(self.grid, int(s)) for s in seeds]
        self.action_rng = seeding.make_rng(seed, "collector-actions")
        self.order_rng = seeding.make_rng(seed, "collector-orders")
        self.schedule = cfg.schedule()
        self.samples = 0
        self.episodes = 0

    def eps(self) -> float:
        return self.schedule.value(self.samples)

    def collect(self, replay: ReplayBuffer, count: int) -> int:
        """Append exactly ``count`` transitions; returns episodes finished."""
        finished = 0
        remaining = count
        while remaining > 0:
            envs = self.envs[: min(remaining, len(self.envs))]
            B = len(envs)
            coords = np.stack([state_coords(e.state) for e in envs])
            if self.cfg.order_mode == "shuffle":
                first = self.order_rng.integers(2, size=B)
            else:
                first = np.zeros(B, dtype=np.int64)
            orders = np.stack([first, 1 - first], axis=1)
            eps = np.full(B, self.eps())
            actions = select_joint_actions(self.model, self.cfg.side, coords,
                                           orders, eps, self.action_rng)
            next_coords = np.empty((B, 6), dtype=np.int8)
            rewards = np.empty(B, dtype=np.float32)
            dones = np.empty(B, dtype=bool)
            for i, env in enumerate(envs):
                joint = [0, 0]
                joint[orders[i, 0]] = int(actions[i, 0])
                joint[orders[i, 1]] = int(actions[i, 1])
                nxt, rewards[i], dones[i] = env.step(joint)
                next_coords[i] = state_coords(nxt)
                if dones[i]:
                    env.reset()
                    finished += 1
            replay.add_batch(coords, actions, rewards, next_coords, dones, first)
            self.samples += B
            remaining -= B
        self.episodes += finished
        return finished


# -- training -----------------------------------------------------------------


def bellman_targets(target_model: ACEModel, side: int, batch: Batch,
                    discount: float) -> np.ndarray:
    """Per-transition (target_1, target_2) under the target network, shape
    (B, 2): within-step maxima for the first decision, reward plus the next
    state's maximized first decision (stored order reused) for the second."""
    node, edges = batch_features(side, batch.coords)
    emb = target_model.encode_units(node, edges)
    second = 1 - batch.first
    v2 = target_model.rollout_values(emb, batch.actions[:, :1],
                                     batch.first[:, None], second)
    t1 = discount * v2.max(axis=1)

    node_n, edges_n = batch_features(side, batch.next_coords)
    emb_n = target_model.encode_units(node_n, edges_n)
    B = batch.coords.shape[0]
    empty = np.zeros((B, 0), dtype=np.int64)
    v1_next = target_model.rollout_values(emb_n, empty, empty, batch.first)
    t2 = batch.rewards + discount * ~batch.dones * v1_next.max(axis=1)
    return np.stack([t1, t2], axis=1)


def train_step(model: ACEModel, target_model: ACEModel, batch: Batch,
               cfg: TrainConfig) -> float:
    """One TD update over both intermediate states of every transition;
    applies Adam and one soft target update.  Returns the loss."""
    targets = bellman_targets(target_model, cfg.side, batch, cfg.discount)
    node, edges = batch_features(cfg.side, batch.coords)
    emb = model.encode_units(node, edges)
    B = batch.coords.shape[0]
    ex1 = batch.first[:, None]
    ex2 = np.stack([batch.first, 1 - batch.first], axis=1)
    comp1 = model.compose(emb, batch.actions[:, :1], ex1)
    comp2 = model.compose(emb, batch.actions, ex2)
    stacked = np.concatenate([comp1, comp2], axis=0)
    preds = model.value_forward(stacked)
    y = np.concatenate([targets[:, 0], targets[:, 1]]).astype(preds.dtype)
    diff = preds - y
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise RuntimeError(
            f"divergence detected: loss={loss!r}, max |prediction| = "
            f"{float(np.abs(preds).max())!r}"
        )
    d_stacked = model.value_backward(diff / B)
    d1 = model.compose_backward(d_stacked[:B], batch.actions[:, :1], ex1)
    d2 = model.compose_backward(d_stacked[B:], batch.actions, ex2)
    model.encode_backward(d1 + d2)
    model.store.adam_step(cfg.lr, weight_decay=cfg.weight_decay)
    target_model.store.soft_update_from(model.store, cfg.target_update_theta)
    return loss


# -- evaluation ----------------------------------------------------------------


def evaluate(
    model: ACEModel,
    grid: GridConfig,
    episodes: int,
    rng: np.random.Generator,
    oracle_mean: Optional[float] = None,
) -> dict:
    """Greedy lockstep evaluation from fresh episodes.

    Success means catching within 10 environment steps; mean_steps counts
    uncaught episodes at the step cap.  Order is agent index order.
    """
    envs = [Env(grid, int(s)) for s in rng.integers(2**63, size=episodes)]
    steps = np.full(episodes, grid.max_steps, dtype=np.int64)
    caught = np.zeros(episodes, dtype=bool)
    alive = list(range(episodes))
    orders_full = np.tile(np.array([0, 1]), (episodes, 1))
    zeros = np.zeros(episodes)
    pick_rng = np.random.default_rng(0)  # eps=0: draws are never used
    while alive:
        coords = np.stack([state_coords(envs[i].state) for i in alive])
        actions = select_joint_actions(model, grid.side, coords,
                                       orders_full[: len(alive)],
                                       zeros[: len(alive)], pick_rng)
        still = []
        for row, i in enumerate(alive):
            nxt, reward, done = envs[i].step(tuple(int(a) for a in actions[row]))
            if done:
                caught[i] = reward > 0
                steps[i] = nxt.step_count if caught[i] else grid.max_steps
            else:
                still.append(i)
        alive = still
    success = caught & (steps <= 10)
    out = {
        "success_rate_10": float(success.mean()),
        "mean_steps": float(steps.mean()),
    }
    if oracle_mean is not None:
        out["steps_gap"] = out["mean_steps"] - oracle_mean
    return out


def oracle_mean_steps(grid: GridConfig, discount: float = 0.99) -> float:
    """Exact mean catch time of the greedy joint policy from uniform legal
    starts, by dynamic programming."""
    model = oracle.build_transition_model(grid)
    sol = oracle.value_iteration_mmdp(grid, discount, 1e-10, model)
    steps = oracle.policy_expected_steps(model, sol.policy, grid.max_steps)
    legal = oracle.legal_start_mask(grid)
    return float(steps[legal].mean())


# -- the loop -------------------------------------------------------------------


def training_loop(
    cfg: TrainConfig,
    budget: int,
    seed: int,
    metrics_fn: Optional[Callable[[dict], None]] = None,
    checkpoint_path: Optional[str] = None,
    oracle_mean: Optional[float] = None,
) -> dict:
    """Alternate collection and training until the sample budget runs out or
    the 10-step success rate holds at 1.0 for ``solve_streak`` consecutive
    evaluations.  Emits one metrics record per evaluation; returns a summary.
    """
    cfg.validate()
    grid = cfg.grid()
    if oracle_mean is None and grid.side <= oracle.MAX_ORACLE_SIDE:
        oracle_mean = oracle_mean_steps(grid, cfg.discount)

    online_store = ParamStore(dtype=np.float32)
    model = ACEModel(online_store, seeding.make_rng(seed, "model-init"),
                     hidden=cfg.hidden, ia_enabled=cfg.ia_enabled)
    target_store = ParamStore(dtype=np.float32)
    target_model = ACEModel(target_store, seeding.make_rng(seed, "model-init"),
                            hidden=cfg.hidden, ia_enabled=cfg.ia_enabled)
    target_store.copy_values_from(online_store)

    replay = ReplayBuffer(cfg.replay_capacity)
    collector = Collector(cfg, model, seed)
    replay_rng = seeding.make_rng(seed, "replay-sampling")
    start = time.monotonic()

    loss = float("nan")
    streak = 0
    streak_start: Optional[int] = None
    samples_to_solve: Optional[int] = None
    eval_index = 0
    records = 0
    last_eval_samples = -1

    def run_eval() -> dict:
        nonlocal streak, streak_start, samples_to_solve, records, last_eval_samples
        last_eval_samples = collector.samples
        report = evaluate(model, grid, cfg.eval_episodes,
                          seeding.make_rng(seed, "eval", records),
                          oracle_mean)
        if report["success_rate_10"] == 1.0:
            if streak == 0:
                streak_start = collector.samples
            streak += 1
        else:
            streak = 0
            streak_start = None
        if streak >= cfg.solve_streak and samples_to_solve is None:
            samples_to_solve = streak_start
        record = {
            "samples": collector.samples,
            "episodes": collector.episodes,
            "eps": collector.eps(),
            "loss": loss,
            **report,
            "wall_time_s": time.monotonic() - start,
        }
        records += 1
        if metrics_fn is not None:
            metrics_fn(record)
        return report

    report = run_eval()
    while collector.samples < budget and samples_to_solve is None:
        take = min(cfg.sample_per_collect, budget - collector.samples)
        collector.collect(replay, take)
        if len(replay) >= cfg.batch_size:
            for _ in range(cfg.update_per_collect):
                loss = train_step(model, target_model,
                                  replay.sample(cfg.batch_size, replay_rng), cfg)
        if collector.samples >= (eval_index + 1) * cfg.eval_every:
            eval_index = collector.samples // cfg.eval_every
            report = run_eval()
    if collector.samples != last_eval_samples:
        report = run_eval()

    if checkpoint_path is not None:
        save_checkpoint(online_store, checkpoint_path)
    summary = {
        "samples": collector.samples,
        "episodes": collector.episodes,
        "solved": samples_to_solve is not None,
        "samples_to_solve": samples_to_solve,
        "final_success_rate_10": report["success_rate_10"],
        "final_mean_steps": report["mean_steps"],
        "evaluations": records,
    }
    if oracle_mean is not None:
        summary["final_steps_gap"] = report.get("steps_gap")
        summary["oracle_mean_steps"] = oracle_mean
    return summary
