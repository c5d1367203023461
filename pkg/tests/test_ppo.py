import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ace import ppo
from ace.learner import batch_features, evaluate, state_coords
from ace.model import ACEModel
from ace.nn.gradcheck import check_gradients
from ace.nn.params import ParamStore, load_checkpoint
from ace.ppo import DecisionBatch, PPOConfig, RunningNorm


def make_model(seed=0, hidden=8, dtype=np.float32):
    store = ParamStore(dtype=dtype)
    model = ACEModel(store, np.random.default_rng(seed), hidden=hidden,
                     with_logits=True)
    return model, store


def random_rows(rng, B, side=3):
    return DecisionBatch(
        coords=rng.integers(0, side, size=(B, 6)).astype(np.int8),
        position=np.tile(np.array([0, 1], dtype=np.int64), (B + 1) // 2)[:B],
        first=rng.integers(0, 2, size=B),
        prefix_action=rng.integers(0, 5, size=B),
        action=rng.integers(0, 5, size=B),
        old_logp=np.log(rng.uniform(0.05, 0.9, size=B)),
        old_value=rng.normal(size=B),
        advantage=rng.normal(size=B) * 2,
        ret=rng.normal(size=B) * 3,
    )


# -- softmax policy ------------------------------------------------------------


def test_softmax_uniform_on_equal_logits():
    p = ppo.softmax(np.full((3, 5), 1.7))
    assert np.abs(p - 0.2).max() < 1e-12


def test_softmax_shift_invariance():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(6, 5)) * 3
    p = ppo.softmax(logits)
    q = ppo.softmax(logits + 123.456)
    assert np.abs(p - q).max() < 1e-12


def test_softmax_matches_exp_normalize():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(7, 5)) * 2
    e = np.exp(logits)
    want = e / e.sum(axis=1, keepdims=True)
    assert np.abs(ppo.softmax(logits) - want).max() < 1e-12
    assert np.abs(ppo.softmax(logits).sum(axis=1) - 1.0).max() < 1e-12


def test_log_softmax_is_log_of_softmax():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(4, 5))
    assert np.abs(ppo.log_softmax(logits) - np.log(ppo.softmax(logits))).max() < 1e-12


def test_entropy_peaks_at_uniform_and_decreases():
    def entropy(logits):
        p = ppo.softmax(np.asarray(logits, dtype=float))
        return float(-(p * np.log(p)).sum())

    assert abs(entropy([0.0] * 5) - math.log(5)) < 1e-12
    h1 = entropy([1.0, 0, 0, 0, 0])
    h2 = entropy([2.0, 0, 0, 0, 0])
    assert math.log(5) > h1 > h2


def test_policy_distribution_matches_manual():
    model, _ = make_model(seed=3)
    rng = np.random.default_rng(4)
    for p in model.store.items():
        p[1].value[...] = rng.normal(size=p[1].value.shape).astype(np.float32) * 0.3
    from ace.env import Env, GridConfig
    env = Env(GridConfig(side=3, max_steps=10, min_start_distance=2), seed=0)
    state = env.reset()

    probs = ppo.policy_distribution(model, 3, state)
    node, edges = batch_features(3, state_coords(state)[None])
    emb = model.encode_units(node, edges)
    empty = np.zeros((1, 0), dtype=np.int64)
    want = ppo.softmax(model.rollout_logits(emb, empty, empty, np.array([0])))[0]
    assert probs.shape == (5,)
    assert abs(probs.sum() - 1.0) < 1e-6
    assert np.abs(probs - want).max() < 1e-12

    with_prefix = ppo.policy_distribution(model, 3, state, prefix_actions=(3,))
    assert abs(with_prefix.sum() - 1.0) < 1e-6
    with pytest.raises(ValueError, match="sequence complete"):
        ppo.policy_distribution(model, 3, state, prefix_actions=(1, 2))


def test_sample_actions_frequencies_and_logp():
    logits = np.tile(np.array([0.0, math.log(2.0), 0.0, 0.0, 0.0]), (6000, 1))
    rng = np.random.default_rng(5)
    actions, logp = ppo.sample_actions(logits, rng)
    p = np.array([1, 2, 1, 1, 1]) / 6.0
    counts = np.bincount(actions, minlength=5)
    assert np.abs(counts - 6000 * p).max() < 150  # ~4 sigma
    lp = ppo.log_softmax(logits)
    assert np.array_equal(logp, lp[np.arange(6000), actions])


def test_sample_actions_degenerate_logit():
    logits = np.tile(np.array([0.0, 0.0, 50.0, 0.0, 0.0]), (64, 1))
    actions, logp = ppo.sample_actions(logits, np.random.default_rng(6))
    assert np.all(actions == 2)
    assert np.all(logp > -1e-12)


def test_greedy_logit_policy_adapts_selection():
    from ace.learner import select_joint_actions

    model, _ = make_model(seed=7)
    rng = np.random.default_rng(8)
    for _, p in model.store.items():
        p.value[...] = rng.normal(size=p.value.shape).astype(np.float32) * 0.3
    coords = rng.integers(0, 3, size=(4, 6)).astype(np.int8)
    orders = np.tile(np.array([0, 1]), (4, 1))
    greedy = ppo.GreedyLogitPolicy(model)
    acts = select_joint_actions(greedy, 3, coords, orders, np.zeros(4),
                                np.random.default_rng(0))
    node, edges = batch_features(3, coords)
    emb = model.encode_units(node, edges)
    empty = np.zeros((4, 0), dtype=np.int64)
    l1 = model.rollout_logits(emb, empty, empty, orders[:, 0])
    assert np.array_equal(acts[:, 0], l1.argmax(axis=1))
    l2 = model.rollout_logits(emb, acts[:, :1], orders[:, :1], orders[:, 1])
    assert np.array_equal(acts[:, 1], l2.argmax(axis=1))


# -- generalized advantage estimation -------------------------------------------


def series_oracle(values, rewards, dones, g, lam, boot):
    """Brute-force (g*lam)^k sum over the flattened one-step errors."""
    T, n = values.shape
    deltas = []
    for t in range(T):
        for q in range(n):
            if q < n - 1:
                deltas.append(g * values[t, q + 1] - values[t, q])
            else:
                nxt = boot if t == T - 1 else values[t + 1, 0]
                live = 0.0 if dones[t] else 1.0
                deltas.append(rewards[t] + g * live * nxt - values[t, n - 1])
    adv = np.zeros((T, n))
    for t in range(T):
        for q in range(n):
            acc, w = 0.0, 1.0
            for k in range(t * n + q, T * n):
                acc += w * deltas[k]
                tt, qq = divmod(k, n)
                if qq == n - 1 and dones[tt]:
                    break
                w *= g * lam
            adv[t, q] = acc
    return adv


def decision_oracle(values, rewards, dones, g, lam, boot):
    """Brute-force per-decision advantage: the decision's own hop error plus
    g*lam times the series out of its landing state.  values (T, n+1) with
    the pre-decision state value in column 0."""
    land = values[:, 1:]
    series = series_oracle(land, rewards, dones, g, lam, boot)
    adv = np.empty_like(land)
    for t in range(adv.shape[0]):
        for q in range(adv.shape[1]):
            adv[t, q] = g * values[t, q + 1] - values[t, q] \
                + g * lam * series[t, q]
    return adv


def test_series_lambda_zero_is_one_step_td():
    rng = np.random.default_rng(9)
    values = rng.normal(size=(5, 2)) * 3
    rewards = rng.normal(size=5)
    dones = np.array([False, True, False, False, False])
    boot = 1.3
    got = ppo.chain_series(values, rewards, dones, 0.99, 0.0, boot)
    want = np.empty_like(values)
    for t in range(5):
        nxt = boot if t == 4 else values[t + 1, 0]
        live = 0.0 if dones[t] else 1.0
        want[t, 1] = rewards[t] + 0.99 * live * nxt - values[t, 1]
        want[t, 0] = 0.99 * values[t, 1] - values[t, 0]
    assert np.array_equal(got, want)


def test_gae_lambda_zero_is_one_step_td():
    # Every decision's advantage collapses to its own hop's error.
    rng = np.random.default_rng(9)
    values = rng.normal(size=(5, 3)) * 3
    rewards = rng.normal(size=5)
    dones = np.array([False, True, False, False, False])
    got = ppo.gae_advantages(values, rewards, dones, 0.99, 0.0, 1.3)
    want = 0.99 * values[:, 1:] - values[:, :-1]
    assert np.abs(got - want).max() < 1e-12


def test_gae_single_step_episode():
    # n=1, done: own hop error plus one lambda step of the terminal error.
    adv = ppo.gae_advantages(np.array([[1.0, 2.5]]), np.array([10.0]),
                             np.array([True]), 0.99, 0.95, bootstrap=77.0)
    assert adv.shape == (1, 1)
    want = 0.99 * 2.5 - 1.0 + 0.99 * 0.95 * (10.0 - 2.5)
    assert abs(adv[0, 0] - want) < 1e-12
    # n=2, done: the last decision inherits the series out of its
    # predecessor's landing state.
    v = np.array([[0.5, 1.0, 3.0]])
    adv = ppo.gae_advantages(v, np.array([10.0]), np.array([True]), 0.9, 0.5)
    s0 = 0.9 * 3.0 - 1.0 + 0.9 * 0.5 * (10.0 - 3.0)
    assert abs(adv[0, 1] - s0) < 1e-12
    assert abs(adv[0, 0] - (0.9 * 1.0 - 0.5 + 0.9 * 0.5 * s0)) < 1e-12


def test_gae_matches_series_oracle():
    rng = np.random.default_rng(10)
    values = rng.normal(size=(6, 3)) * 3
    rewards = rng.normal(size=6)
    dones = np.array([False, False, True, False, False, False])
    boot = float(rng.normal())
    got = ppo.gae_advantages(values, rewards, dones, 0.99, 0.7, boot)
    want = decision_oracle(values, rewards, dones, 0.99, 0.7, boot)
    assert np.abs(got - want).max() < 1e-10


@settings(deadline=None, max_examples=60)
@given(
    n=st.integers(1, 3),
    T=st.integers(1, 6),
    lam=st.floats(0.0, 1.0),
    seed=st.integers(0, 10_000),
)
def test_gae_series_property(n, T, lam, seed):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(T, n + 1)) * 5
    rewards = rng.normal(size=T) * 3
    dones = rng.random(T) < 0.3
    boot = float(rng.normal())
    got = ppo.gae_advantages(values, rewards, dones, 0.95, lam, boot)
    want = decision_oracle(values, rewards, dones, 0.95, lam, boot)
    assert np.abs(got - want).max() < 1e-10


def test_series_n1_matches_standard_recursion():
    rng = np.random.default_rng(11)
    T = 8
    v = rng.normal(size=T)
    r = rng.normal(size=T)
    d = rng.random(T) < 0.25
    boot = float(rng.normal())
    got = ppo.chain_series(v[:, None], r, d, 0.99, 0.95, boot)[:, 0]
    adv = np.zeros(T)
    acc, nxt = 0.0, boot
    for t in reversed(range(T)):
        live = 0.0 if d[t] else 1.0
        delta = r[t] + 0.99 * live * nxt - v[t]
        acc = delta + 0.99 * 0.95 * live * acc
        adv[t] = acc
        nxt = v[t]
    assert np.abs(got - adv).max() < 1e-12


def test_gae_malformed_trajectories():
    v = np.zeros((4, 3))
    with pytest.raises(ValueError, match="disagree on length"):
        ppo.gae_advantages(v, np.zeros(3), np.zeros(4, dtype=bool), 0.99, 0.95)
    with pytest.raises(ValueError, match="disagree on length"):
        ppo.gae_advantages(v, np.zeros(4), np.zeros(5, dtype=bool), 0.99, 0.95)
    with pytest.raises(ValueError, match="shape"):
        ppo.gae_advantages(np.zeros(4), np.zeros(4), np.zeros(4, dtype=bool),
                           0.99, 0.95)
    with pytest.raises(ValueError, match="shape"):
        ppo.gae_advantages(np.zeros((4, 1)), np.zeros(4),
                           np.zeros(4, dtype=bool), 0.99, 0.95)
    with pytest.raises(ValueError, match="gae_lambda"):
        ppo.gae_advantages(v, np.zeros(4), np.zeros(4, dtype=bool), 0.99, 1.5)
    with pytest.raises(ValueError, match="discount"):
        ppo.gae_advantages(v, np.zeros(4), np.zeros(4, dtype=bool), 1.0, 0.95)


def test_gae_ignores_bootstrap_after_done():
    values = np.array([[0.5, 1.0, 2.0], [2.5, 3.0, 4.0]])
    rewards = np.array([0.0, 10.0])
    dones = np.array([False, True])
    a = ppo.gae_advantages(values, rewards, dones, 0.99, 0.95, bootstrap=0.0)
    b = ppo.gae_advantages(values, rewards, dones, 0.99, 0.95, bootstrap=99.0)
    assert np.array_equal(a, b)


# -- running normalization -------------------------------------------------------


def test_running_norm_matches_numpy():
    rng = np.random.default_rng(12)
    x = rng.normal(loc=3.0, scale=2.5, size=500)
    norm = RunningNorm()
    norm.update(x)
    assert abs(norm.mean - x.mean()) < 1e-12
    assert abs(norm.std - x.std()) < 1e-12


def test_running_norm_streams_in_chunks():
    rng = np.random.default_rng(13)
    x = rng.normal(loc=-1.0, scale=4.0, size=601)
    one = RunningNorm()
    one.update(x)
    chunked = RunningNorm()
    for part in np.array_split(x, 7):
        chunked.update(part)
    assert abs(one.mean - chunked.mean) < 1e-10
    assert abs(one.std - chunked.std) < 1e-10


def test_running_norm_fresh_is_identity_and_invertible():
    norm = RunningNorm()
    x = np.array([1.5, -2.0, 0.25])
    assert np.array_equal(norm.normalize(x), x)
    norm.update(np.array([1.0, 2.0, 3.0, 4.0]))
    y = norm.normalize(x)
    assert np.abs(norm.denormalize(y) - x).max() < 1e-12


# -- loss pieces -------------------------------------------------------------------


def test_surrogate_unclipped_when_ratio_one():
    adv = np.array([2.0, -1.0, 0.5])
    logp = np.log(np.array([0.2, 0.4, 0.1]))
    loss, d_logp = ppo.surrogate_loss(logp, logp.copy(), adv, 0.05)
    assert abs(loss - (-adv.mean())) < 1e-12
    assert np.abs(d_logp - (-adv / 3)).max() < 1e-12


def test_surrogate_zero_advantage():
    logp = np.log(np.array([0.3, 0.6]))
    loss, d_logp = ppo.surrogate_loss(logp, logp - 0.2, np.zeros(2), 0.05)
    assert loss == 0.0
    assert np.array_equal(d_logp, np.zeros(2))


def test_surrogate_hand_two_samples():
    # Sample 1: ratio 1.2, adv +2 -> clipped at 1.05, dead gradient.
    # Sample 2: ratio 1.0, adv -1 -> tie, live unclipped gradient.
    logp = np.array([math.log(0.2), math.log(0.4)])
    old = np.array([math.log(0.2) - math.log(1.2), math.log(0.4)])
    loss, d_logp = ppo.surrogate_loss(logp, old, np.array([2.0, -1.0]), 0.05)
    assert abs(loss - (-(1.05 * 2.0 - 1.0) / 2.0)) < 1e-12
    assert d_logp[0] == 0.0
    assert abs(d_logp[1] - 0.5) < 1e-12


def test_clipped_value_loss_hand():
    pred = np.array([0.5, -0.2])
    old = np.array([0.0, 0.1])
    target = np.array([1.0, -0.1])
    loss, d_pred = ppo.clipped_value_loss(pred, old, target, 0.3)
    # Sample 1 clips 0.5 -> 0.3: (0.3-1)^2 = 0.49 beats (0.5-1)^2 = 0.25 and
    # the saturated clip kills the gradient.  Sample 2 is inside the clip,
    # branches tie, plain gradient 2*(pred-target)/N.
    assert abs(loss - (0.49 + 0.01) / 2.0) < 1e-12
    assert d_pred[0] == 0.0
    assert abs(d_pred[1] - 2.0 * (-0.2 + 0.1) / 2.0) < 1e-12


def test_ppo_loss_components_hand_fixture():
    cfg = PPOConfig(adv_norm=False)
    logits = np.array([[0.0] * 5, [1.0, 0.0, 0.0, 0.0, 0.0]])
    actions = np.array([2, 0])
    old_logp = np.array([math.log(0.2) - math.log(1.2),
                         1.0 - math.log(math.e + 4.0)])
    comps, d_logits, d_values = ppo.ppo_loss_components(
        logits, actions, old_logp, np.array([2.0, -1.0]),
        np.array([0.5, -0.2]), np.array([0.0, 0.1]), np.array([1.0, -0.1]),
        cfg)
    h2 = math.log(math.e + 4.0) - math.e / (math.e + 4.0)
    want_policy = -(1.05 * 2.0 - 1.0) / 2.0
    want_value = (0.49 + 0.01) / 2.0
    want_entropy = (math.log(5.0) + h2) / 2.0
    assert abs(comps["policy"] - want_policy) < 1e-12
    assert abs(comps["value"] - want_value) < 1e-12
    assert abs(comps["entropy"] - want_entropy) < 1e-12
    want_total = want_policy + want_value - 0.01 * want_entropy
    assert abs(comps["total"] - want_total) < 1e-12
    # Uniform row: policy gradient clipped away and p*(logp + H) vanishes.
    assert np.abs(d_logits[0]).max() < 1e-15
    p0 = math.e / (math.e + 4.0)
    pj = 1.0 / (math.e + 4.0)
    lp0, lpj = 1.0 - math.log(math.e + 4.0), -math.log(math.e + 4.0)
    want_row2 = np.array(
        [0.5 * (1.0 - p0) + 0.005 * p0 * (lp0 + h2)]
        + 4 * [0.5 * (0.0 - pj) + 0.005 * pj * (lpj + h2)])
    assert np.abs(d_logits[1] - want_row2).max() < 1e-12
    assert abs(d_values[0]) < 1e-15
    assert abs(d_values[1] - 2.0 * (-0.2 + 0.1) / 2.0) < 1e-12


def test_ppo_loss_components_adv_norm_two_samples():
    # Advantages (2, -1) normalize to (1, -1); with ratio 1 everywhere the
    # normalized policy loss is exactly zero.
    cfg = PPOConfig(adv_norm=True)
    logits = np.zeros((2, 5))
    actions = np.array([0, 1])
    old_logp = np.full(2, math.log(0.2))
    comps, _, _ = ppo.ppo_loss_components(
        logits, actions, old_logp, np.array([2.0, -1.0]), np.zeros(2),
        np.zeros(2), np.zeros(2), cfg)
    assert abs(comps["policy"]) < 1e-8


def test_ppo_loss_components_divergence():
    cfg = PPOConfig(adv_norm=False)
    with pytest.raises(RuntimeError, match="divergence detected"):
        ppo.ppo_loss_components(
            np.zeros((1, 5)), np.array([0]), np.array([math.log(0.2)]),
            np.array([np.inf]), np.zeros(1), np.zeros(1), np.zeros(1), cfg)


# -- the model-coupled update --------------------------------------------------


def test_ppo_update_matches_per_row_forward():
    model, store = make_model(seed=14, hidden=6)
    rng = np.random.default_rng(15)
    for _, p in store.items():
        p.value[...] = rng.normal(size=p.value.shape).astype(np.float32) * 0.3
    rows = random_rows(rng, 10)
    norm = RunningNorm()
    norm.update(rng.normal(loc=1.0, size=32))
    cfg = PPOConfig(side=3, hidden=6)
    got = ppo.ppo_update(model, 3, rows, cfg, norm, backward=False)

    logits = np.empty((10, 5))
    values = np.empty(10)
    for i in range(10):
        node, edges = batch_features(3, rows.coords[i][None])
        emb = model.encode_units(node, edges)
        if rows.position[i] == 0:
            prefix = np.zeros((1, 0), dtype=np.int64)
            pexec = np.zeros((1, 0), dtype=np.int64)
            executor = rows.first[i]
        else:
            prefix = rows.prefix_action[i].reshape(1, 1)
            pexec = rows.first[i].reshape(1, 1)
            executor = 1 - rows.first[i]
        logits[i] = model.rollout_logits(emb, prefix, pexec,
                                         np.array([executor]))[0]
        # The valued state carries the whole prefix plus the taken action.
        acts = np.concatenate([prefix[0], [rows.action[i]]]).reshape(1, -1)
        execs = np.concatenate([pexec[0], [executor]]).reshape(1, -1)
        comp = model.compose(emb, acts, execs)
        values[i] = model.value_forward(comp)[0]
    want, _, _ = ppo.ppo_loss_components(
        logits, rows.action, rows.old_logp, rows.advantage, values,
        norm.normalize(rows.old_value), norm.normalize(rows.ret), cfg)
    for key in ("policy", "value", "entropy", "total"):
        assert got[key] == pytest.approx(want[key], rel=1e-5, abs=1e-6)


def test_ppo_update_apply_and_backward_flags():
    model, store = make_model(seed=16)
    rng = np.random.default_rng(17)
    rows = random_rows(rng, 8)
    norm = RunningNorm()
    cfg = PPOConfig(side=3, hidden=8)
    before = {name: p.value.copy() for name, p in store.items()}

    ppo.ppo_update(model, 3, rows, cfg, norm, backward=False)
    assert all(np.array_equal(p.value, before[n]) for n, p in store.items())
    assert all(np.all(p.grad == 0) for _, p in store.items())

    ppo.ppo_update(model, 3, rows, cfg, norm, backward=True, apply=False)
    assert all(np.array_equal(p.value, before[n]) for n, p in store.items())
    assert any(np.any(p.grad != 0) for _, p in store.items())
    store.zero_grad()

    ppo.ppo_update(model, 3, rows, cfg, norm)
    assert any(not np.array_equal(p.value, before[n])
               for n, p in store.items())
    assert all(np.all(p.grad == 0) for _, p in store.items())


def test_ppo_update_single_position_batches():
    model, _ = make_model(seed=18)
    rng = np.random.default_rng(19)
    norm = RunningNorm()
    cfg = PPOConfig(side=3, hidden=8)
    for pos in (0, 1):
        rows = random_rows(rng, 6)._replace(
            position=np.full(6, pos, dtype=np.int64))
        out = ppo.ppo_update(model, 3, rows, cfg, norm)
        assert all(math.isfinite(v) for v in out.values())


def test_ppo_update_divergence_aborts():
    model, store = make_model(seed=20)
    store["value2.w"].value[...] = np.inf
    rows = random_rows(np.random.default_rng(21), 4)
    with pytest.raises(RuntimeError, match="divergence detected"):
        ppo.ppo_update(model, 3, rows, PPOConfig(side=3, hidden=8),
                       RunningNorm())


def test_ppo_update_gradients_match_finite_differences():
    # Full objective through both heads, composition, and the encoder.
    # Randomized parameters keep ReLU preactivations off their kinks.
    store = ParamStore(dtype=np.float64)
    model = ACEModel(store, np.random.default_rng(22), hidden=5,
                     with_logits=True)
    rng = np.random.default_rng(23)
    for _, p in store.items():
        p.value[...] = rng.normal(size=p.value.shape) * 0.3
    rows = random_rows(rng, 8)
    norm = RunningNorm()
    norm.update(rng.normal(loc=2.0, scale=1.5, size=64))
    cfg = PPOConfig(side=3, hidden=5)
    worst, per_tensor = check_gradients(
        lambda: ppo.ppo_update(model, 3, rows, cfg, norm,
                               backward=False)["total"],
        lambda: ppo.ppo_update(model, 3, rows, cfg, norm, backward=True,
                               apply=False)["total"],
        store,
    )
    assert set(per_tensor) == set(store.names())
    assert worst < 1e-7


# -- collection --------------------------------------------------------------------


def smoke_config(**kw):
    base = dict(side=3, max_steps=20, hidden=8, sample_per_collect=8,
                collector_env_num=2, batch_size=16, update_per_collect=2,
                eval_every=16, eval_episodes=4)
    base.update(kw)
    return PPOConfig(**base)


def test_collector_window_shapes_and_counters():
    cfg = smoke_config()
    model, _ = make_model(seed=24)
    col = ppo.PPOCollector(cfg, model, seed=11)
    win = col.collect_window()
    E, T = 2, 4
    assert win.coords.shape == (E, T, 6)
    assert win.actions.shape == (E, T, 2)
    assert win.old_logp.shape == (E, T, 2)
    assert win.old_values.shape == (E, T, 2)
    assert win.boot_coords.shape == (E, 6)
    assert col.samples == 8
    assert np.all((win.actions >= 0) & (win.actions < 5))
    assert np.all(win.old_logp <= 0.0)
    assert np.all(win.first == 0)  # sorted order
    col.collect_window()
    assert col.samples == 16


def test_collector_reproducible():
    cfg = smoke_config()
    model, _ = make_model(seed=25)
    w1 = ppo.PPOCollector(cfg, model, seed=9).collect_window()
    w2 = ppo.PPOCollector(cfg, model, seed=9).collect_window()
    for a, b in zip(w1, w2):
        assert np.array_equal(a, b)


def test_collector_shuffle_draws_both_orders():
    cfg = smoke_config(order_mode="shuffle", sample_per_collect=64)
    model, _ = make_model(seed=26)
    win = ppo.PPOCollector(cfg, model, seed=3).collect_window()
    assert set(np.unique(win.first)) == {0, 1}


def test_collection_values_match_recompute():
    # Same parameters, so the stored values must match a fresh pass.
    cfg = smoke_config()
    model, _ = make_model(seed=27)
    win = ppo.PPOCollector(cfg, model, seed=5).collect_window()
    norm = RunningNorm()
    values, boot = ppo.window_values(model, 3, win, norm)
    assert values.shape == win.old_values.shape[:2] + (3,)
    assert np.abs(values[:, :, 1:] - win.old_values).max() < 1e-5
    E, T = win.first.shape
    node, edges = batch_features(3, win.coords.reshape(E * T, 6))
    emb = model.encode_units(node, edges)
    bare = model.value_forward(emb).reshape(E, T)
    assert np.abs(values[:, :, 0] - bare).max() < 1e-5
    node, edges = batch_features(3, win.boot_coords)
    emb = model.encode_units(node, edges)
    comp = model.compose(emb, win.boot_action[:, None],
                         win.boot_first[:, None])
    assert np.abs(boot - model.value_forward(comp)).max() < 1e-5


def test_window_advantages_assembles_decisions_and_returns():
    E, T = 1, 2
    values = np.array([[[0.5, 1.0, 2.0], [1.5, 2.5, 3.5]]])
    rewards = np.array([[0.0, 10.0]], dtype=np.float32)
    dones = np.array([[False, True]])
    win = ppo.Window(
        coords=np.zeros((E, T, 6), dtype=np.int8),
        first=np.zeros((E, T), dtype=np.int64),
        actions=np.zeros((E, T, 2), dtype=np.int64),
        rewards=rewards,
        dones=dones,
        old_logp=np.zeros((E, T, 2)),
        old_values=np.zeros((E, T, 2)),
        boot_coords=np.zeros((E, 6), dtype=np.int8),
        boot_first=np.zeros(E, dtype=np.int64),
        boot_action=np.zeros(E, dtype=np.int64),
    )
    adv, rets = ppo.window_advantages(win, values, np.array([7.0]), 0.99, 0.9)
    want_adv = decision_oracle(values[0], rewards[0].astype(float), dones[0],
                               0.99, 0.9, 7.0)
    series = series_oracle(values[0, :, 1:], rewards[0].astype(float),
                           dones[0], 0.99, 0.9, 7.0)
    assert np.abs(adv[0] - want_adv).max() < 1e-10
    assert np.abs(rets[0] - (values[0, :, 1:] + series)).max() < 1e-10


def test_flatten_window_layout():
    E, T = 1, 3
    win = ppo.Window(
        coords=np.arange(E * T * 6, dtype=np.int8).reshape(E, T, 6) % 3,
        first=np.zeros((E, T), dtype=np.int64),
        actions=np.array([[[1, 2], [3, 4], [0, 1]]], dtype=np.int64),
        rewards=np.zeros((E, T), dtype=np.float32),
        dones=np.zeros((E, T), dtype=bool),
        old_logp=np.arange(E * T * 2, dtype=np.float64).reshape(E, T, 2),
        old_values=np.arange(E * T * 2, dtype=np.float64).reshape(E, T, 2) * 10,
        boot_coords=np.zeros((E, 6), dtype=np.int8),
        boot_first=np.zeros(E, dtype=np.int64),
        boot_action=np.zeros(E, dtype=np.int64),
    )
    adv = np.arange(E * T * 2, dtype=np.float64).reshape(E, T, 2) + 100
    rets = adv + 1000
    rows = ppo.flatten_window(win, adv, rets)
    assert rows.coords.shape == (6, 6)
    assert np.array_equal(rows.position, [0, 1, 0, 1, 0, 1])
    assert np.array_equal(rows.action, [1, 2, 3, 4, 0, 1])
    assert np.array_equal(rows.prefix_action, [1, 1, 3, 3, 0, 0])
    assert np.array_equal(rows.coords[0], rows.coords[1])
    assert np.array_equal(rows.old_logp, np.arange(6))
    assert np.array_equal(rows.advantage, np.arange(6) + 100)
    assert np.array_equal(rows.ret, np.arange(6) + 1100)


# -- config and loop ----------------------------------------------------------------


def test_ppo_config_validation():
    PPOConfig().validate()
    with pytest.raises(ValueError, match="clip_ratio"):
        PPOConfig(clip_ratio=1.0).validate()
    with pytest.raises(ValueError, match="value_clip_ratio"):
        PPOConfig(value_clip_ratio=0.0).validate()
    with pytest.raises(ValueError, match="gae_lambda"):
        PPOConfig(gae_lambda=-0.1).validate()
    with pytest.raises(ValueError, match="discount"):
        PPOConfig(discount=1.0).validate()
    with pytest.raises(ValueError, match="order_mode"):
        PPOConfig(order_mode="random").validate()
    with pytest.raises(ValueError, match="multiple of collector_env_num"):
        PPOConfig(sample_per_collect=100, collector_env_num=8).validate()
    with pytest.raises(ValueError, match="update_per_collect must be positive"):
        PPOConfig(update_per_collect=0).validate()
    with pytest.raises(ValueError, match="nonnegative"):
        PPOConfig(entropy_weight=-0.1).validate()


def canon(record):
    return {k: (None if isinstance(v, float) and math.isnan(v) else v)
            for k, v in record.items() if k != "wall_time_s"}


def test_ppo_training_loop_smoke_and_reproducible(tmp_path):
    cfg = smoke_config(sample_per_collect=32, collector_env_num=4,
                       batch_size=32, update_per_collect=4, eval_every=64,
                       eval_episodes=6)

    def run(path=None):
        records = []
        summary = ppo.ppo_training_loop(cfg, budget=128, seed=2,
                                        metrics_fn=records.append,
                                        checkpoint_path=path)
        return records, summary

    records, summary = run(str(tmp_path / "ppo.ckpt"))
    assert summary["samples"] == 128
    assert summary["evaluations"] == len(records)
    samples = [r["samples"] for r in records]
    assert samples == sorted(samples)
    assert samples[-1] == 128
    for r in records:
        assert set(r) == {"samples", "episodes", "eps", "loss",
                          "success_rate_10", "mean_steps", "steps_gap",
                          "wall_time_s"}
        assert r["eps"] == 0.0
    assert math.isnan(records[0]["loss"])
    assert math.isfinite(records[-1]["loss"])

    records2, summary2 = run()
    assert [canon(r) for r in records] == [canon(r) for r in records2]
    assert canon(summary) == canon(summary2)

    store = ParamStore(dtype=np.float32)
    ACEModel(store, np.random.default_rng(0), hidden=cfg.hidden,
             with_logits=True)
    load_checkpoint(store, str(tmp_path / "ppo.ckpt"))


def test_ppo_training_loop_budget_zero():
    records = []
    summary = ppo.ppo_training_loop(smoke_config(), budget=0, seed=1,
                                    metrics_fn=records.append)
    assert len(records) == 1
    assert summary["samples"] == 0
    assert summary["solved"] is False
    assert math.isnan(records[0]["loss"])


def test_ppo_loop_evaluates_with_logit_greedy(tmp_path):
    # The evaluation path must run the softmax policy's argmax, which for an
    # untrained logit head is still a valid (roughly uniform) policy.
    cfg = smoke_config()
    summary = ppo.ppo_training_loop(cfg, budget=16, seed=4)
    assert 0.0 <= summary["final_success_rate_10"] <= 1.0
    assert summary["final_mean_steps"] <= cfg.max_steps
