"""Sequential expansion of a multi-agent MDP.

One environment transition under a joint action [a_1, ..., a_n] is expanded
into n intermediate transitions of a single-agent MDP whose states carry the
prefix of actions already committed this step.  Types here are immutable
values and the operations are pure functions, so they can be shared freely
across workers.
"""

from typing import NamedTuple, Sequence, Tuple


class SEState(NamedTuple):
    """A base environment state plus the ordered action prefix.

    ``prefix[k]`` is the action committed by the agent at position k of
    ``order``.  An empty prefix denotes the bare environment state.
    """

    base: object
    prefix: Tuple[int, ...]
    order: Tuple[int, ...]


class Transition(NamedTuple):
    """One whole environment step as stored in replay."""

    state: object
    joint_action: Tuple[int, ...]
    reward: float
    next_state: object
    done: bool
    order: Tuple[int, ...]


class SETransition(NamedTuple):
    """One intermediate transition of the expanded process."""

    state: SEState
    action: int
    reward: float
    next_state: SEState


def validate_order(order: Sequence[int]) -> None:
    """Raise if ``order`` is not a permutation of 0..n-1."""
    if sorted(order) != list(range(len(order))):
        raise ValueError(f"order {order!r} is not a permutation of 0..{len(order) - 1}")


def se_successor(s: SEState, a: int, action_space: Sequence[int]) -> SEState:
    """Extend the prefix of ``s`` by action ``a``; no environment interaction."""
    if len(s.prefix) >= len(s.order):
        raise ValueError("sequence complete")
    if a not in action_space:
        raise ValueError(f"illegal action {a!r}")
    return SEState(s.base, s.prefix + (a,), s.order)


def enumerate_candidates(s: SEState, action_space: Sequence[int]) -> Tuple[SEState, ...]:
    """All successor states of ``s``, one per legal action, ascending action id.

    The ascending order is the canonical tie-breaking order: a greedy argmax
    over these candidates resolves ties toward the lowest action id.
    """
    if len(s.prefix) >= len(s.order):
        raise ValueError("sequence complete")
    return tuple(SEState(s.base, s.prefix + (a,), s.order) for a in sorted(action_space))


def expand_transition(t: Transition) -> Tuple[SETransition, ...]:
    """Expand one environment transition into n intermediate transitions.

    All intermediate rewards are zero except the last, which carries the
    environment reward; the last successor is the next base state (empty
    prefix).  The stored order is carried onto the final successor so replay
    can roll out the next step's first decision under it.
    """
    n = len(t.order)
    if len(t.joint_action) != n:
        raise ValueError("joint action length does not match agent order")
    out = []
    state = SEState(t.state, (), t.order)
    for k, a in enumerate(t.joint_action):
        last = k == n - 1
        nxt = SEState(t.next_state, (), t.order) if last else SEState(t.state, state.prefix + (a,), t.order)
        out.append(SETransition(state, a, t.reward if last else 0.0, nxt))
        state = SEState(t.state, state.prefix + (a,), t.order)
    return tuple(out)
