"""Verification suites shared by the CLI and the acceptance tests.

Three suites: tabular equivalence of the expanded process with the joint
process, finite-difference checks over every trainable path, and a long fuzz
of the environment's stated invariants.  Each produces rows of
(name, detail, passed) so callers can print a report or assert.
"""

from typing import Dict, List, NamedTuple

import numpy as np

from ace import env as envmod
from ace import learner, oracle, ppo
from ace.model import ACEModel
from ace.nn.gradcheck import check_gradients
from ace.nn.params import ParamStore


class CheckRow(NamedTuple):
    name: str
    detail: str
    passed: bool


# -- suite: equivalence ----------------------------------------------------------


def equivalence_suite(side: int = 3, discount: float = 0.99,
                      tol: float = 1e-8) -> List[CheckRow]:
    """Exact value iteration on both formulations of the small grid: the
    first-decision values must match the joint solution at squared discount
    up to scaling, and sequential greedy picks must be jointly greedy."""
    grid = envmod.default_config(side)
    report = oracle.check_equivalence(grid, discount, tol=tol)
    n = report["n_states"]
    return [
        CheckRow("equivalence.scaling_error",
                 f"{report['scaling_error']:.3e} <= {tol:.0e}",
                 report["scaling_error"] <= tol),
        CheckRow("equivalence.greedy_set",
                 f"{report['greedy_matches']}/{n} states",
                 report["greedy_matches"] == n),
    ]


# -- suite: gradients --------------------------------------------------------------


def _randomized_model(seed: int, hidden: int = 8, with_logits: bool = False):
    store = ParamStore(dtype=np.float64)
    model = ACEModel(store, np.random.default_rng(seed), hidden=hidden,
                     with_logits=with_logits)
    rng = np.random.default_rng(seed + 1)
    # nonzero values everywhere keep ReLU preactivations off their kinks
    for _, p in store.items():
        p.value[:] = rng.standard_normal(p.value.shape) * 0.3
    return model, store, rng


def _value_path_errors(seed: int) -> Dict[str, float]:
    """Squared value of passively composed states: exercises both encoders,
    the active table, the passive encoder, and the value head."""
    model, store, rng = _randomized_model(seed)
    B = 5
    node, edges = learner.batch_features(3, rng.integers(3, size=(B, 6)))
    actions = rng.integers(5, size=(B, 2))
    executors = np.tile(np.array([0, 1]), (B, 1))
    targets = rng.random((B, 2, 3)) < 0.5

    def forward():
        emb = model.encode_units(node, edges)
        return model.value_forward(
            model.compose(emb, actions, executors, node=node, targets=targets))

    def loss():
        preds = forward()
        return float(np.mean(preds * preds))

    def backward():
        preds = forward()
        d = model.value_backward(2.0 * preds / B)
        model.compose_backward(d, actions, executors, targets=targets)
        model.encode_backward(d)
        return float(np.mean(preds * preds))

    return check_gradients(loss, backward, store)[1]


def _td_loss_errors(seed: int) -> Dict[str, float]:
    """The squared TD error against fixed targets from a separate network."""
    model, store, rng = _randomized_model(seed)
    target, _, _ = _randomized_model(seed + 100)
    B = 5
    batch = learner.Batch(
        coords=rng.integers(3, size=(B, 6)).astype(np.int8),
        actions=rng.integers(5, size=(B, 2)),
        rewards=rng.choice([0.0, 10.0], size=B).astype(np.float32),
        next_coords=rng.integers(3, size=(B, 6)).astype(np.int8),
        dones=rng.random(B) < 0.4,
        first=rng.integers(2, size=B),
    )
    y = learner.bellman_targets(target, 3, batch, 0.99)
    y = np.concatenate([y[:, 0], y[:, 1]])
    node, edges = learner.batch_features(3, batch.coords)
    ex1 = batch.first[:, None]
    ex2 = np.stack([batch.first, 1 - batch.first], axis=1)

    def forward():
        emb = model.encode_units(node, edges)
        comp1 = model.compose(emb, batch.actions[:, :1], ex1)
        comp2 = model.compose(emb, batch.actions, ex2)
        return model.value_forward(np.concatenate([comp1, comp2], axis=0))

    def loss():
        diff = forward() - y
        return float(np.mean(diff * diff))

    def backward():
        diff = forward() - y
        d = model.value_backward(diff / B)
        d1 = model.compose_backward(d[:B], batch.actions[:, :1], ex1)
        d2 = model.compose_backward(d[B:], batch.actions, ex2)
        model.encode_backward(d1 + d2)
        return float(np.mean(diff * diff))

    return check_gradients(loss, backward, store)[1]


def _ppo_loss_errors(seed: int) -> Dict[str, float]:
    """The full clipped objective through both heads."""
    model, store, rng = _randomized_model(seed, with_logits=True)
    B = 8
    rows = ppo.DecisionBatch(
        coords=rng.integers(3, size=(B, 6)).astype(np.int8),
        position=np.tile(np.array([0, 1], dtype=np.int64), B // 2),
        first=rng.integers(2, size=B),
        prefix_action=rng.integers(5, size=B),
        action=rng.integers(5, size=B),
        old_logp=np.log(rng.uniform(0.05, 0.9, size=B)),
        old_value=rng.normal(size=B),
        advantage=rng.normal(size=B) * 2,
        ret=rng.normal(size=B) * 3,
    )
    norm = ppo.RunningNorm()
    norm.update(rng.normal(loc=2.0, scale=1.5, size=64))
    cfg = ppo.PPOConfig(side=3, hidden=model.hidden)
    return check_gradients(
        lambda: ppo.ppo_update(model, 3, rows, cfg, norm,
                               backward=False)["total"],
        lambda: ppo.ppo_update(model, 3, rows, cfg, norm, backward=True,
                               apply=False)["total"],
        store,
    )[1]


def _path_max(per_tensor: Dict[str, float], *prefixes: str) -> float:
    return max(v for k, v in per_tensor.items()
               if any(k.startswith(p) for p in prefixes))


def gradients_suite(tol: float = 1e-4, seed: int = 11) -> List[CheckRow]:
    """Central finite differences on 64-bit models, one row per trainable
    path plus the two end-to-end losses."""
    value_path = _value_path_errors(seed)
    td = _td_loss_errors(seed + 1)
    ppo_loss = _ppo_loss_errors(seed + 2)
    suites = (value_path, td, ppo_loss)
    paths = [
        ("node_encoder", max(_path_max(s, "node_enc") for s in suites)),
        ("edge_encoder", max(_path_max(s, "edge_enc") for s in suites)),
        ("active_table", max(_path_max(s, "active") for s in suites)),
        ("passive_encoder", _path_max(value_path, "passive_enc")),
        ("value_head", max(_path_max(s, "value1", "value2") for s in suites)),
        ("logit_head", _path_max(ppo_loss, "logit1", "logit2")),
        ("td_loss", max(td.values())),
        ("ppo_loss", max(ppo_loss.values())),
    ]
    return [CheckRow(f"gradients.{name}", f"{err:.3e} < {tol:.0e}", err < tol)
            for name, err in paths]


# -- suite: environment fuzz --------------------------------------------------------


def env_fuzz_suite(steps: int = 1_000_000, side: int = 5, seed: int = 0
                   ) -> List[CheckRow]:
    """Random-policy fuzz asserting the stated invariants at every step:
    positions stay on the grid, the reward is 10 exactly when a spider shares
    the fly's cell, the fly only enters safe cells (standing still when it
    has none), and resets respect the start-distance constraint."""
    grid = envmod.default_config(side)
    rng = np.random.default_rng(seed)
    state = envmod.reset(grid, rng)
    bounds = rewards = safe = resets = 0
    episodes = 0
    for _ in range(steps):
        joint = (int(rng.integers(5)), int(rng.integers(5)))
        moved = tuple(envmod._move(s, a, side)
                      for s, a in zip(state.spiders, joint))
        options = envmod.safe_moves(grid, moved, state.fly)
        nxt, reward, done = envmod.step(grid, state, joint, rng)
        pts = nxt.spiders + (nxt.fly,)
        if not all(0 <= x < side and 0 <= y < side for x, y in pts):
            bounds += 1
        caught = nxt.fly in nxt.spiders
        if reward not in (0.0, 10.0) or (reward == 10.0) != caught:
            rewards += 1
        if envmod.is_caught(moved, state.fly):
            if nxt.fly != state.fly:
                safe += 1
        elif options:
            if nxt.fly not in options:
                safe += 1
        elif nxt.fly != state.fly:
            safe += 1
        if done:
            episodes += 1
            state = envmod.reset(grid, rng)
            dist = min(envmod.manhattan(s, state.fly) for s in state.spiders)
            if dist <= grid.min_start_distance:
                resets += 1
        else:
            state = nxt
    return [
        CheckRow("env.bounds_violations", f"{bounds} in {steps} steps",
                 bounds == 0),
        CheckRow("env.reward_violations", f"{rewards} in {steps} steps",
                 rewards == 0),
        CheckRow("env.safe_rule_violations", f"{safe} in {steps} steps",
                 safe == 0),
        CheckRow("env.reset_violations", f"{resets} over {episodes} episodes",
                 resets == 0),
    ]


SUITES = {
    "equivalence": equivalence_suite,
    "gradients": gradients_suite,
    "env": env_fuzz_suite,
}
