"""Clipped-surrogate policy optimization over the sequentially expanded process.

A logit head (same architecture as the value head, over the same composed
embeddings) defines a softmax policy at each intermediate decision.  An
environment step with n agents contributes n decisions.  Each decision's
advantage starts from the one-step error of its own transition -- out of the
state it acted from, into the state it chose -- and continues lambda-weighted
along the taken chain

    V(s),  V(s_{a_1}), V(s_{a_1,a_2}),  V(s'_{a_1'}), V(s'_{a_1',a_2'}), ...

where reward enters at environment-step boundaries only and the boundary
error bootstraps with the next step's taken first-action value (the
pre-decision state value appears only as the first decision's baseline).
Collection is on-policy over whole fixed-size windows; updates run shuffled
minibatches with ratio clipping, value clipping anchored at collection-time
values, an entropy bonus, and optional advantage/target normalization.
"""

import math
import time
from typing import Callable, Dict, NamedTuple, Optional, Tuple

import numpy as np

from ace import env as envmod
from ace import oracle, seeding
from ace.env import Env, EnvState, GridConfig
from ace.learner import batch_features, evaluate, oracle_mean_steps, state_coords
from ace.model import ACEModel
from ace.nn.params import ParamStore, save_checkpoint


class PPOConfig(NamedTuple):
    side: int = 5
    max_steps: int = 100
    discount: float = 0.99
    hidden: int = 128
    lr: float = 5e-4
    clip_ratio: float = 0.05
    value_clip_ratio: float = 0.3
    entropy_weight: float = 0.01
    value_weight: float = 1.0
    gae_lambda: float = 0.95
    batch_size: int = 256
    sample_per_collect: int = 1024
    update_per_collect: int = 50
    recompute_adv: bool = True
    adv_norm: bool = True
    value_norm: bool = True
    collector_env_num: int = 8
    order_mode: str = "sorted"
    ia_enabled: bool = True
    eval_every: int = 5120
    eval_episodes: int = 200
    solve_streak: int = 3

    def validate(self) -> "PPOConfig":
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        if not 0 < self.clip_ratio < 1:
            raise ValueError("clip_ratio must lie in (0, 1)")
        if not 0 < self.value_clip_ratio < 1:
            raise ValueError("value_clip_ratio must lie in (0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.entropy_weight < 0 or self.value_weight < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.order_mode not in ("sorted", "shuffle"):
            raise ValueError("order_mode must be 'sorted' or 'shuffle'")
        for field in ("hidden", "lr", "batch_size", "sample_per_collect",
                      "update_per_collect", "collector_env_num", "eval_every",
                      "eval_episodes", "solve_streak"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive")
        # Whole windows split evenly across the pool so every env contributes
        # one contiguous trajectory segment per collect.
        if self.sample_per_collect % self.collector_env_num != 0:
            raise ValueError(
                "sample_per_collect must be a multiple of collector_env_num")
        return self

    def grid(self) -> GridConfig:
        return envmod.default_config(self.side, self.max_steps)


# -- policy ---------------------------------------------------------------------


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def policy_distribution(
    model: ACEModel,
    side: int,
    state: EnvState,
    prefix_actions: Tuple[int, ...] = (),
    order: Tuple[int, int] = (0, 1),
) -> np.ndarray:
    """Action probabilities for the next position given a committed prefix."""
    k = len(prefix_actions)
    if k >= len(order):
        raise ValueError("sequence complete")
    node, edges = batch_features(side, state_coords(state)[None])
    emb = model.encode_units(node, edges)
    prefix = np.array(prefix_actions, dtype=np.int64).reshape(1, k)
    pexec = np.array(order[:k], dtype=np.int64).reshape(1, k)
    executor = np.array([order[k]], dtype=np.int64)
    return softmax(model.rollout_logits(emb, prefix, pexec, executor))[0]


def sample_actions(logits: np.ndarray, rng: np.random.Generator
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse-CDF draw per row; returns (actions, their log probabilities)."""
    lp = log_softmax(logits)
    p = np.exp(lp)
    u = rng.random(p.shape[0])
    cdf = np.cumsum(p, axis=1)
    a = np.minimum((cdf < u[:, None]).sum(axis=1), p.shape[1] - 1)
    return a, lp[np.arange(p.shape[0]), a]


class GreedyLogitPolicy:
    """Adapter presenting rollout logits through the value-selection
    interface, so greedy evaluation picks the policy's argmax action."""

    def __init__(self, model: ACEModel):
        self.model = model

    def encode_units(self, node, edges):
        return self.model.encode_units(node, edges)

    def rollout_values(self, *args):
        return self.model.rollout_logits(*args)


# -- advantages -------------------------------------------------------------------


def chain_series(
    values: np.ndarray,
    rewards: np.ndarray,
    dones: np.ndarray,
    discount: float,
    lam: float,
    bootstrap: float = 0.0,
) -> np.ndarray:
    """Lambda-weighted series of one-step errors out of every chain state.

    values (T, n) hold V(s_{a_{1:q+1}}) for step t and position q; rewards and
    dones are per environment step.  One-step errors are chained across the
    flattened (T*n,) sequence: within a step the error is
    gamma*V(next) - V(cur) with no reward; across steps it is
    r + gamma*V(first of next step) - V(last), truncated at episode ends.
    ``bootstrap`` values the first position after the segment.  For n=1 this
    is exactly the textbook single-agent recursion over (values, rewards).
    """
    values = np.asarray(values, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if values.ndim != 2 or values.shape[1] < 1:
        raise ValueError("values must have shape (steps, positions)")
    T, n = values.shape
    if rewards.shape != (T,) or dones.shape != (T,):
        raise ValueError("trajectory arrays disagree on length")
    if not 0 < discount < 1:
        raise ValueError("discount must lie in (0, 1)")
    if not 0 <= lam <= 1:
        raise ValueError("gae_lambda must lie in [0, 1]")
    out = np.empty_like(values)
    carry = 0.0
    nxt = float(bootstrap)
    for t in reversed(range(T)):
        live = 0.0 if dones[t] else 1.0
        a = rewards[t] + discount * live * nxt - values[t, n - 1] \
            + discount * lam * live * carry
        out[t, n - 1] = a
        for q in range(n - 2, -1, -1):
            a = discount * values[t, q + 1] - values[t, q] + discount * lam * a
            out[t, q] = a
        carry = out[t, 0]
        nxt = values[t, 0]
    return out


def gae_advantages(
    values: np.ndarray,
    rewards: np.ndarray,
    dones: np.ndarray,
    discount: float,
    lam: float,
    bootstrap: float = 0.0,
) -> np.ndarray:
    """Advantage of every intermediate decision of a trajectory segment.

    values (T, n+1) hold the whole per-step chain: column 0 the pre-decision
    state value V(s^t), column q+1 the prefix value V(s_{a_{1:q+1}}).  The
    decision at position q acted from column q into column q+1, so its
    advantage is that hop's error plus the lambda-discounted series out of
    its landing state:

        A[t, q] = gamma*V[t, q+1] - V[t, q] + gamma*lam*S[t, q]

    where S is chain_series over the landing columns.  Pre-decision values
    never appear in any continuation -- only as the position-0 baseline.
    Returns (T, n) advantages.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] < 2:
        raise ValueError("values must have shape (steps, 1 + positions)")
    series = chain_series(values[:, 1:], rewards, dones, discount, lam,
                          bootstrap)
    adv = np.empty_like(series)
    adv[:, 0] = discount * values[:, 1] - values[:, 0] \
        + discount * lam * series[:, 0]
    adv[:, 1:] = series[:, :-1]
    return adv


class RunningNorm:
    """Streaming mean/std of regression targets; a fresh instance is the
    identity map, so disabling normalization just means never updating."""

    def __init__(self):
        self.count = 0.0
        self.mean = 0.0
        self.m2 = 0.0

    @property
    def std(self) -> float:
        if self.count == 0:
            return 1.0
        return max(math.sqrt(self.m2 / self.count), 1e-6)

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size == 0:
            return
        n = float(x.size)
        mean = float(x.mean())
        m2 = float(((x - mean) ** 2).sum())
        total = self.count + n
        delta = mean - self.mean
        self.m2 += m2 + delta * delta * self.count * n / total
        self.mean += delta * n / total
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


# -- loss -------------------------------------------------------------------------


def surrogate_loss(logp: np.ndarray, old_logp: np.ndarray, adv: np.ndarray,
                   clip_ratio: float) -> Tuple[float, np.ndarray]:
    """Clipped policy surrogate; returns (loss, d loss / d logp).  Ties
    between the branches take the unclipped one, whose gradient is live."""
    ratio = np.exp(logp - old_logp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * adv
    clipped = surr2 < surr1
    loss = -float(np.mean(np.where(clipped, surr2, surr1)))
    d_logp = np.where(clipped, 0.0, -ratio * adv) / logp.size
    return loss, d_logp


def clipped_value_loss(pred: np.ndarray, old: np.ndarray, target: np.ndarray,
                       clip_ratio: float) -> Tuple[float, np.ndarray]:
    """Mean of the elementwise worse of the plain and clipped squared errors,
    where the clipped prediction stays within clip_ratio of the collection
    value; returns (loss, d loss / d pred)."""
    clipped_pred = old + np.clip(pred - old, -clip_ratio, clip_ratio)
    e1 = (pred - target) ** 2
    e2 = (clipped_pred - target) ** 2
    take2 = e2 > e1
    loss = float(np.mean(np.maximum(e1, e2)))
    inside = np.abs(pred - old) <= clip_ratio
    d1 = 2.0 * (pred - target)
    d2 = 2.0 * (clipped_pred - target) * inside
    d_pred = np.where(take2, d2, d1) / pred.size
    return loss, d_pred


def ppo_loss_components(
    logits: np.ndarray,
    actions: np.ndarray,
    old_logp: np.ndarray,
    advantages: np.ndarray,
    values_pred: np.ndarray,
    values_old: np.ndarray,
    targets: np.ndarray,
    cfg: PPOConfig,
) -> Tuple[Dict[str, float], np.ndarray, np.ndarray]:
    """Assemble the PPO objective from one minibatch of decisions.

    All value arguments live in the value head's (possibly normalized)
    output scale.  Returns (components, d total / d logits, d total /
    d values_pred); components hold policy, value, entropy, and total.
    """
    B = logits.shape[0]
    lp = log_softmax(logits)
    p = np.exp(lp)
    rows = np.arange(B)
    logp = lp[rows, actions]
    adv = np.asarray(advantages, dtype=np.float64)
    if cfg.adv_norm:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    policy_loss, d_logp = surrogate_loss(logp, old_logp, adv, cfg.clip_ratio)
    value_loss, d_pred = clipped_value_loss(
        np.asarray(values_pred, dtype=np.float64), values_old, targets,
        cfg.value_clip_ratio)
    ent = -np.sum(p * lp, axis=1)
    entropy = float(ent.mean())
    total = policy_loss + cfg.value_weight * value_loss \
        - cfg.entropy_weight * entropy
    if not math.isfinite(total):
        raise RuntimeError(
            f"divergence detected: policy={policy_loss!r}, "
            f"value={value_loss!r}, entropy={entropy!r}")
    one_hot = np.zeros_like(p)
    one_hot[rows, actions] = 1.0
    d_logits = d_logp[:, None] * (one_hot - p)
    d_logits += (cfg.entropy_weight / B) * p * (lp + ent[:, None])
    d_values = cfg.value_weight * d_pred
    components = {"policy": policy_loss, "value": value_loss,
                  "entropy": entropy, "total": total}
    return components, d_logits, d_values


# -- update -----------------------------------------------------------------------


class DecisionBatch(NamedTuple):
    """Flat per-decision rows; position 0/1 is the slot within the step's
    selection order, ``first`` the agent acting at position 0."""

    coords: np.ndarray  # (B, 6) int8
    position: np.ndarray  # (B,) int64, 0 or 1
    first: np.ndarray  # (B,) int64
    prefix_action: np.ndarray  # (B,) int64, position-0 action of the step
    action: np.ndarray  # (B,) int64
    old_logp: np.ndarray  # (B,) float64
    old_value: np.ndarray  # (B,) float64, raw scale
    advantage: np.ndarray  # (B,) float64
    ret: np.ndarray  # (B,) float64, raw scale


def _take(batch: DecisionBatch, idx: np.ndarray) -> DecisionBatch:
    return DecisionBatch(*(field[idx] for field in batch))


def ppo_update(
    model: ACEModel,
    side: int,
    batch: DecisionBatch,
    cfg: PPOConfig,
    norm: RunningNorm,
    backward: bool = True,
    apply: bool = True,
) -> Dict[str, float]:
    """One minibatch step: forward both heads over the candidate successors,
    assemble the clipped objective, and (optionally) backpropagate and apply
    Adam.  Returns the loss components."""
    order = np.argsort(batch.position, kind="stable")
    rows = _take(batch, order)
    B = rows.coords.shape[0]
    n1 = int(np.count_nonzero(rows.position == 0))
    executors = np.where(rows.position == 0, rows.first, 1 - rows.first)

    node, edges = batch_features(side, rows.coords)
    emb = model.encode_units(node, edges)
    empty = np.zeros((n1, 0), dtype=np.int64)
    cand1, _ = model.candidate_embeddings(emb[:n1], empty, empty,
                                          executors[:n1])
    cand2, _ = model.candidate_embeddings(
        emb[n1:], rows.prefix_action[n1:, None], rows.first[n1:, None],
        executors[n1:])
    cands = np.concatenate([cand1, cand2], axis=0)  # (B, A, m, hidden)
    logits = model.logit_forward(cands)
    ridx = np.arange(B)
    values_pred = model.value_forward(cands[ridx, rows.action])

    components, d_logits, d_values = ppo_loss_components(
        logits, rows.action, rows.old_logp, rows.advantage, values_pred,
        norm.normalize(rows.old_value), norm.normalize(rows.ret), cfg)

    if backward:
        dtype = model.store.dtype
        d_cands = model.logit_backward(d_logits.astype(dtype))
        d_cands[ridx, rows.action] += model.value_backward(
            d_values.astype(dtype))
        A = logits.shape[1]
        # Mirror the candidate scatter: each candidate feeds its action's
        # active vector at the executor slot.
        model.compose_backward(
            d_cands.reshape(B * A, *d_cands.shape[2:]),
            np.tile(np.arange(A), B)[:, None],
            np.repeat(executors, A)[:, None])
        d_comp = d_cands.sum(axis=1)
        d2 = model.compose_backward(d_comp[n1:], rows.prefix_action[n1:, None],
                                    rows.first[n1:, None])
        model.encode_backward(np.concatenate([d_comp[:n1], d2], axis=0))
        if apply:
            model.store.adam_step(cfg.lr)
    return components


# -- collection -------------------------------------------------------------------


class Window(NamedTuple):
    """One on-policy collect: env-major (E, T, ...) trajectory segments plus
    the state, order, and sampled first action used to value the cut."""

    coords: np.ndarray  # (E, T, 6) int8
    first: np.ndarray  # (E, T) int64
    actions: np.ndarray  # (E, T, 2) int64, position-ordered
    rewards: np.ndarray  # (E, T) float32
    dones: np.ndarray  # (E, T) bool
    old_logp: np.ndarray  # (E, T, 2) float64
    old_values: np.ndarray  # (E, T, 2) float64, raw scale
    boot_coords: np.ndarray  # (E, 6) int8
    boot_first: np.ndarray  # (E,) int64
    boot_action: np.ndarray  # (E,) int64


class PPOCollector:
    """Batched on-policy collector: whole windows of fixed per-env length,
    actions sampled from the softmax policy, episodes resumed across windows."""

    def __init__(self, cfg: PPOConfig, model: ACEModel, seed: int):
        self.cfg = cfg
        self.model = model
        self.grid = cfg.grid()
        seeds = seeding.env_seeds(seed, "collector-envs", cfg.collector_env_num)
        self.envs = [Env(self.grid, int(s)) for s in seeds]
        self.action_rng = seeding.make_rng(seed, "collector-actions")
        self.order_rng = seeding.make_rng(seed, "collector-orders")
        self.samples = 0
        self.episodes = 0

    def _orders(self, count: int) -> np.ndarray:
        if self.cfg.order_mode == "shuffle":
            return self.order_rng.integers(2, size=count)
        return np.zeros(count, dtype=np.int64)

    def collect_window(self) -> Window:
        E = len(self.envs)
        T = self.cfg.sample_per_collect // E
        coords = np.empty((E, T, 6), dtype=np.int8)
        first = np.empty((E, T), dtype=np.int64)
        actions = np.empty((E, T, 2), dtype=np.int64)
        rewards = np.empty((E, T), dtype=np.float32)
        dones = np.empty((E, T), dtype=bool)
        old_logp = np.empty((E, T, 2), dtype=np.float64)
        old_values = np.empty((E, T, 2), dtype=np.float64)
        for t in range(T):
            cur = np.stack([state_coords(e.state) for e in self.envs])
            f = self._orders(E)
            node, edges = batch_features(self.cfg.side, cur)
            emb = self.model.encode_units(node, edges)
            empty = np.zeros((E, 0), dtype=np.int64)
            a1, lp1 = sample_actions(
                self.model.rollout_logits(emb, empty, empty, f),
                self.action_rng)
            a2, lp2 = sample_actions(
                self.model.rollout_logits(emb, a1[:, None], f[:, None], 1 - f),
                self.action_rng)
            acts = np.stack([a1, a2], axis=1)
            execs = np.stack([f, 1 - f], axis=1)
            comp1 = self.model.compose(emb, acts[:, :1], execs[:, :1])
            comp2 = self.model.compose(emb, acts, execs)
            v = self.model.value_forward(np.concatenate([comp1, comp2]))
            coords[:, t] = cur
            first[:, t] = f
            actions[:, t] = acts
            old_logp[:, t, 0] = lp1
            old_logp[:, t, 1] = lp2
            old_values[:, t, 0] = v[:E]
            old_values[:, t, 1] = v[E:]
            for i, env in enumerate(self.envs):
                joint = [0, 0]
                joint[int(f[i])] = int(a1[i])
                joint[1 - int(f[i])] = int(a2[i])
                _, rewards[i, t], dones[i, t] = env.step(joint)
                if dones[i, t]:
                    env.reset()
                    self.episodes += 1
        boot_coords = np.stack([state_coords(e.state) for e in self.envs])
        boot_first = self._orders(E)
        node, edges = batch_features(self.cfg.side, boot_coords)
        emb = self.model.encode_units(node, edges)
        empty = np.zeros((E, 0), dtype=np.int64)
        boot_action, _ = sample_actions(
            self.model.rollout_logits(emb, empty, empty, boot_first),
            self.action_rng)
        self.samples += E * T
        return Window(coords, first, actions, rewards, dones, old_logp,
                      old_values, boot_coords, boot_first, boot_action)


def window_values(model: ACEModel, side: int, win: Window, norm: RunningNorm
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """Raw-scale values of every chain state in the window (pre-decision
    state first, then both prefixes) plus the cut state's bootstrap value,
    under the current network.  Returns ((E, T, 3) values, (E,) bootstrap)."""
    E, T = win.first.shape
    N = E * T
    coords = win.coords.reshape(N, 6)
    acts = win.actions.reshape(N, 2)
    f = win.first.reshape(N)
    execs = np.stack([f, 1 - f], axis=1)
    node, edges = batch_features(side, coords)
    emb = model.encode_units(node, edges)
    comp1 = model.compose(emb, acts[:, :1], execs[:, :1])
    comp2 = model.compose(emb, acts, execs)
    v = norm.denormalize(model.value_forward(np.concatenate([emb, comp1, comp2])))
    values = np.stack([v[:N], v[N:2 * N], v[2 * N:]], axis=1).reshape(E, T, 3)

    node, edges = batch_features(side, win.boot_coords)
    emb = model.encode_units(node, edges)
    comp = model.compose(emb, win.boot_action[:, None], win.boot_first[:, None])
    boot = norm.denormalize(model.value_forward(comp))
    return values, boot


def window_advantages(win: Window, values: np.ndarray, boot: np.ndarray,
                      discount: float, lam: float
                      ) -> Tuple[np.ndarray, np.ndarray]:
    """Per-decision advantages and raw-scale return targets, env by env.

    values (E, T, 3) per window_values.  Return targets cover the two prefix
    states only (the value head is never regressed at pre-decision states)."""
    E, T, _ = values.shape
    adv = np.empty((E, T, 2), dtype=np.float64)
    rets = np.empty((E, T, 2), dtype=np.float64)
    for e in range(E):
        adv[e] = gae_advantages(values[e], win.rewards[e], win.dones[e],
                                discount, lam, bootstrap=float(boot[e]))
        series = chain_series(values[e, :, 1:], win.rewards[e], win.dones[e],
                              discount, lam, bootstrap=float(boot[e]))
        rets[e] = values[e, :, 1:] + series
    return adv, rets


def flatten_window(win: Window, adv: np.ndarray, rets: np.ndarray
                   ) -> DecisionBatch:
    """Spread a window into one row per decision (position fastest)."""
    E, T = win.first.shape
    N = E * T
    return DecisionBatch(
        coords=np.repeat(win.coords.reshape(N, 6), 2, axis=0),
        position=np.tile(np.array([0, 1], dtype=np.int64), N),
        first=np.repeat(win.first.reshape(N), 2),
        prefix_action=np.repeat(win.actions.reshape(N, 2)[:, 0], 2),
        action=win.actions.reshape(2 * N),
        old_logp=win.old_logp.reshape(2 * N),
        old_value=win.old_values.reshape(2 * N),
        advantage=adv.reshape(2 * N),
        ret=rets.reshape(2 * N),
    )


# -- the loop ---------------------------------------------------------------------


def ppo_training_loop(
    cfg: PPOConfig,
    budget: int,
    seed: int,
    metrics_fn: Optional[Callable[[dict], None]] = None,
    checkpoint_path: Optional[str] = None,
    oracle_mean: Optional[float] = None,
) -> dict:
    """Alternate whole-window collection with minibatch epochs until the
    sample budget runs out or the solve streak is reached.  Windows are never
    truncated, so the final sample count may overshoot the budget by less
    than one window.  Metrics records match the TD loop's schema (eps is 0:
    exploration comes from the softmax)."""
    cfg.validate()
    grid = cfg.grid()
    if oracle_mean is None and grid.side <= oracle.MAX_ORACLE_SIDE:
        oracle_mean = oracle_mean_steps(grid, cfg.discount)

    store = ParamStore(dtype=np.float32)
    model = ACEModel(store, seeding.make_rng(seed, "model-init"),
                     hidden=cfg.hidden, with_logits=True,
                     ia_enabled=cfg.ia_enabled)
    collector = PPOCollector(cfg, model, seed)
    mb_rng = seeding.make_rng(seed, "ppo-minibatch")
    norm = RunningNorm()
    greedy = GreedyLogitPolicy(model)
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
        report = evaluate(greedy, grid, cfg.eval_episodes,
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
            "eps": 0.0,
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
        win = collector.collect_window()
        values, boot = window_values(model, cfg.side, win, norm)
        adv, rets = window_advantages(win, values, boot, cfg.discount,
                                      cfg.gae_lambda)
        if cfg.value_norm:
            norm.update(rets)
        rows = flatten_window(win, adv, rets)
        D = rows.coords.shape[0]
        mb = min(cfg.batch_size, D)
        per_epoch = max(D // mb, 1)
        updates = 0
        while updates < cfg.update_per_collect:
            if updates > 0 and cfg.recompute_adv:
                values, boot = window_values(model, cfg.side, win, norm)
                adv, rets = window_advantages(win, values, boot, cfg.discount,
                                              cfg.gae_lambda)
                rows = flatten_window(win, adv, rets)
            perm = mb_rng.permutation(D)
            for k in range(per_epoch):
                if updates >= cfg.update_per_collect:
                    break
                out = ppo_update(model, cfg.side,
                                 _take(rows, perm[k * mb:(k + 1) * mb]),
                                 cfg, norm)
                loss = out["total"]
                updates += 1
        if collector.samples >= (eval_index + 1) * cfg.eval_every:
            eval_index = collector.samples // cfg.eval_every
            report = run_eval()
    if collector.samples != last_eval_samples:
        report = run_eval()

    if checkpoint_path is not None:
        save_checkpoint(store, checkpoint_path)
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
