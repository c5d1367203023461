"""The value network over unit-decomposed states with additive action embeddings.

A state embedding is one hidden vector per unit: a dense+ReLU node encoder
plus the mean-pooled dense+ReLU edge encoder of the unit's outgoing edges.
Committed actions are folded in additively: an action's learnable active
vector is added to its executor's slot, and (for actions that target other
units) a passive vector encoded from the executor's node feature is added
to each target's slot.  Scalar heads (value, and optionally logits) apply a
per-unit dense+ReLU, mean-pool across units, then a final dense layer.

Because actions enter additively, all candidate successors of a state reuse
one unit-encoder pass; ``encode_calls`` counts those passes so tests can
assert the economy.
"""

import math
from typing import Optional, Tuple

import numpy as np

from ace import env as envmod
from ace.nn.layers import Dense
from ace.nn.params import ParamStore


class ACEModel:
    def __init__(
        self,
        store: ParamStore,
        rng: np.random.Generator,
        hidden: int = 128,
        n_units: int = envmod.N_UNITS,
        n_actions: int = envmod.N_ACTIONS,
        node_dim: int = envmod.NODE_DIM,
        edge_dim: int = envmod.EDGE_DIM,
        with_logits: bool = False,
        ia_enabled: bool = True,
    ):
        self.store = store
        self.hidden = hidden
        self.n_units = n_units
        self.n_actions = n_actions
        self.ia_enabled = ia_enabled
        self.with_logits = with_logits
        self.node_enc = Dense(store, "node_enc", node_dim, hidden, rng)
        self.edge_enc = Dense(store, "edge_enc", edge_dim, hidden, rng)
        # Zero init keeps composition an identity on unit embeddings at start.
        self.active = store.add("active", np.zeros((n_actions, hidden)))
        self.passive_enc = Dense(store, "passive_enc", node_dim, hidden, rng)
        self.value1 = Dense(store, "value1", hidden, hidden, rng)
        self.value2 = Dense(store, "value2", hidden, 1, rng, activation="identity")
        if with_logits:
            self.logit1 = Dense(store, "logit1", hidden, hidden, rng)
            self.logit2 = Dense(store, "logit2", hidden, 1, rng, activation="identity")
        self.encode_calls = 0

    # -- unit encoder -------------------------------------------------------

    def encode_units(self, node: np.ndarray, edges: np.ndarray) -> np.ndarray:
        """(B, m, node_dim), (B, m, m-1, edge_dim) -> (B, m, hidden)."""
        self.encode_calls += 1
        ne = self.node_enc(node)
        ee = self.edge_enc(edges)
        return ne + ee.mean(axis=-2)

    def encode_backward(self, d_emb: np.ndarray) -> None:
        self.node_enc.backward(d_emb)
        k = self.n_units - 1
        self.edge_enc.backward(
            np.repeat(np.expand_dims(d_emb / k, -2), k, axis=-2)
        )

    # -- action composition -------------------------------------------------

    def compose(
        self,
        emb: np.ndarray,
        actions: np.ndarray,
        executors: np.ndarray,
        node: Optional[np.ndarray] = None,
        targets: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Fold a committed action prefix into a copy of the embedding.

        actions, executors: (B, k) action ids and executing unit per prefix
        position.  targets: optional (B, k, m) booleans marking units each
        action interacts with; their slots receive the passive vector
        encoded from the executor's node feature (node: (B, m, node_dim)).
        Executors within one row must be distinct.
        """
        out = emb.copy()
        if actions.shape[-1] == 0:
            return out
        B = emb.shape[0]
        rows = np.arange(B)[:, None]
        out[rows, executors] += self.active.value[actions]
        if targets is not None and self.ia_enabled:
            if node is None:
                raise ValueError("passive composition requires node features")
            p = self.passive_enc(node[rows, executors])  # (B, k, hidden)
            out += np.einsum("bkt,bkh->bth", targets.astype(out.dtype), p)
        return out

    def compose_backward(
        self,
        d_out: np.ndarray,
        actions: np.ndarray,
        executors: np.ndarray,
        targets: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Accumulate active (and passive-encoder) gradients; the embedding
        gradient passes through unchanged."""
        if actions.shape[-1] == 0:
            return d_out
        B = d_out.shape[0]
        rows = np.arange(B)[:, None]
        np.add.at(self.active.grad, actions, d_out[rows, executors])
        if targets is not None and self.ia_enabled:
            dp = np.einsum("bkt,bth->bkh", targets.astype(d_out.dtype), d_out)
            self.passive_enc.backward(dp)
        return d_out

    # -- scalar heads -------------------------------------------------------

    def _head_forward(self, h1: Dense, h2: Dense, emb: np.ndarray) -> np.ndarray:
        """(..., m, hidden) -> (...) through dense+ReLU, unit mean-pool, dense."""
        h = h1(emb)
        pooled = h.mean(axis=-2)
        return h2(pooled)[..., 0]

    def _head_backward(self, h1: Dense, h2: Dense, d_out: np.ndarray) -> np.ndarray:
        d_pooled = h2.backward(d_out[..., None])
        m = self.n_units
        dh = np.repeat(np.expand_dims(d_pooled / m, -2), m, axis=-2)
        return h1.backward(dh)

    def value_forward(self, emb: np.ndarray) -> np.ndarray:
        return self._head_forward(self.value1, self.value2, emb)

    def value_backward(self, d_out: np.ndarray) -> np.ndarray:
        return self._head_backward(self.value1, self.value2, d_out)

    def logit_forward(self, emb: np.ndarray) -> np.ndarray:
        return self._head_forward(self.logit1, self.logit2, emb)

    def logit_backward(self, d_out: np.ndarray) -> np.ndarray:
        return self._head_backward(self.logit1, self.logit2, d_out)

    # -- candidate rollout ---------------------------------------------------

    def candidate_embeddings(
        self,
        emb: np.ndarray,
        prefix_actions: np.ndarray,
        prefix_executors: np.ndarray,
        executor: np.ndarray,
        actions: Optional[np.ndarray] = None,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Embeddings of every candidate successor, reusing the encoder pass.

        Returns (candidates (B, A, m, hidden), action ids (A,)); candidate a
        extends the composed prefix by action a executed by ``executor``.
        """
        if actions is None:
            actions = np.arange(self.n_actions)
        else:
            actions = np.sort(np.asarray(actions))
        if actions.size == 0:
            raise ValueError("empty legal action set")
        base = self.compose(emb, prefix_actions, prefix_executors)
        B, A = emb.shape[0], actions.shape[0]
        cand = np.broadcast_to(base[:, None], (B, A) + base.shape[1:]).copy()
        rows = np.arange(B)[:, None]
        cols = np.arange(A)[None, :]
        cand[rows, cols, executor[:, None]] += self.active.value[actions][None]
        return cand, actions

    def rollout_values(self, emb, prefix_actions, prefix_executors, executor,
                       actions=None) -> np.ndarray:
        """Value of every candidate successor: (B, A)."""
        cand, _ = self.candidate_embeddings(emb, prefix_actions, prefix_executors,
                                            executor, actions)
        return self.value_forward(cand)

    def rollout_logits(self, emb, prefix_actions, prefix_executors, executor,
                       actions=None) -> np.ndarray:
        """Logit of every candidate successor: (B, A)."""
        cand, _ = self.candidate_embeddings(emb, prefix_actions, prefix_executors,
                                            executor, actions)
        return self.logit_forward(cand)


def expected_parameter_count(
    hidden: int,
    node_dim: int = envmod.NODE_DIM,
    edge_dim: int = envmod.EDGE_DIM,
    n_actions: int = envmod.N_ACTIONS,
    with_logits: bool = False,
) -> int:
    """Closed-form size of the model: node/edge/passive encoders, active
    table, and one scalar head (two with logits)."""
    enc = (node_dim + 1) * hidden + (edge_dim + 1) * hidden + (node_dim + 1) * hidden
    head = (hidden + 1) * hidden + (hidden + 1)
    n = enc + n_actions * hidden + head
    if with_logits:
        n += head
    return n
