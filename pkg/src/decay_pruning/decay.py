"""Multi-step decay pruning with a gradient-driven release rule.

Instead of zeroing a selected channel group in one action, the scheduler
walks its L2 norm down a fixed ladder: a group picked with initial norm
``L`` is projected after its k-th decay step onto norm ``(N-k)/N * L``,
reaching exact zero at step N while ordinary optimization keeps steering
the direction.  At every step two criteria inspect the tentative
optimizer update: the escape rate (how much of the step goes into norm
growth) and the group's gradient magnitude relative to its layer peers.
When both clear their thresholds the group is released back to normal
training instead of being pruned further.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .nn import GradSnapshot, GroupIndex, Network, ParamSet, read_group, write_group
from .tensor import l2_norm, scale_to_norm

__all__ = [
    "NothingToPrune",
    "ZeroStep",
    "ZeroPeers",
    "DecayState",
    "DpmConfig",
    "ReleaseEvent",
    "DecisionList",
    "step_length",
    "target_norm",
    "escape_rate",
    "relative_grad_magnitude",
    "should_release",
    "recalibrate_step",
    "decide_prune",
    "apply_decision",
    "decay_step",
    "tick",
    "sparsity_counts",
    "zeroed_group_ids",
]


class NothingToPrune(RuntimeError):
    """No eligible group survives the selection and protection rules."""


class ZeroStep(ValueError):
    """Tentative update equals the current weights: no gradient signal."""


class ZeroPeers(ValueError):
    """All parallel channels have zero gradient: no reference magnitude."""


@dataclass(frozen=True)
class DecayState:
    """Per-group bookkeeping.

    ``n_step`` counts completed decay steps (0..N).  A group with
    ``is_decay`` and ``n_step == N`` is fully decayed: pinned at exact
    zero and excluded from future updates.
    """

    n_step: int = 0
    init_norm: float = 0.0
    is_decay: bool = False


@dataclass
class DpmConfig:
    """Scheduler knobs.

    ``t_rate = math.inf`` disables releases entirely (pure smooth
    pruning); ``sparsity_target`` is the fraction of groups that should
    end up decaying-or-zeroed.
    """

    decay_steps: int = 5
    t_rate: float = 0.3
    t_len: float = 0.2
    neutralize_penalization: bool = True
    decision_interval: int = 1
    sparsity_target: float = 0.5
    groups_per_decision: int = 1
    zero_epsilon: float = 1e-12

    def validate(self) -> None:
        if int(self.decay_steps) < 1:
            raise ValueError("decay_steps must be >= 1")
        if not (self.t_rate == math.inf or math.isfinite(self.t_rate)):
            raise ValueError("t_rate must be finite or +inf")
        if not (math.isfinite(self.t_len) and self.t_len >= 0):
            raise ValueError("t_len must be a nonnegative finite value")
        if not 0.0 <= self.sparsity_target < 1.0:
            raise ValueError("sparsity_target must be in [0, 1)")
        if int(self.decision_interval) < 1:
            raise ValueError("decision_interval must be >= 1")
        if int(self.groups_per_decision) < 1:
            raise ValueError("groups_per_decision must be >= 1")
        if self.zero_epsilon <= 0:
            raise ValueError("zero_epsilon must be positive")


@dataclass(frozen=True)
class ReleaseEvent:
    step: int
    group_id: int
    c_rate: float
    c_len: float
    n_step_at_release: int


@dataclass(frozen=True)
class DecisionList:
    step: int
    group_ids: tuple[int, ...]


def step_length(init_norm: float, n_steps: int) -> float:
    """Norm decrement per decay step: init_norm / n_steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if init_norm < 0:
        raise ValueError("init_norm must be nonnegative")
    return init_norm / n_steps

def target_norm(init_norm: float, n_steps: int, step_index: int) -> float:
    """Scheduled norm after decay step ``step_index`` (1-based, 0 at N)."""
    if not 1 <= step_index <= n_steps:
        raise ValueError("step_index must be in [1, n_steps]")
    return (n_steps - step_index) * step_length(init_norm, n_steps)


def escape_rate(x_k, x_tilde, zero_epsilon: float = 1e-12) -> float:
    """Norm growth of the tentative update per unit of step length.

    (||x_tilde|| - ||x_k||) / ||x_tilde - x_k||, clamped into [-1, 1]
    (the triangle inequality bounds the true value; clamping absorbs
    float rounding on near-degenerate steps).  Raises ZeroStep when
    the step is too small to carry any signal.
    """
    x = np.asarray(x_k, dtype=np.float64)
    xt = np.asarray(x_tilde, dtype=np.float64)
    step = l2_norm(xt - x)
    if step <= zero_epsilon:
        raise ZeroStep("tentative update left the weights unchanged")
    rate = (l2_norm(xt) - l2_norm(x)) / step
    return float(min(1.0, max(-1.0, rate)))


def relative_grad_magnitude(grad, peer_grad_norms) -> float:
    """Group gradient norm over the mean gradient norm of layer peers.

    The peer set is every channel group of the same layer, the evaluated
    group included, so a uniform layer scores exactly 1.
    """
    peers = np.asarray(peer_grad_norms, dtype=np.float64).ravel()
    if peers.size == 0:
        raise ValueError("peer list must be nonempty")
    mean = float(peers.mean())
    if mean <= 0.0:
        raise ZeroPeers("no gradient signal anywhere in the layer")
    return l2_norm(grad) / mean


def should_release(c_rate: float, c_len: float, cfg: DpmConfig) -> bool:
    """Both criteria must clear their thresholds strictly."""
    return c_rate > cfg.t_rate and c_len > cfg.t_len


def recalibrate_step(pre_norm: float, init_norm: float, n_steps: int,
                     n_step: int) -> int:
    """Advance the step counter after an undershoot.

    When the tentative update already fell to ``pre_norm`` at or below
    the scheduled target, the counter jumps to
    clamp(N - floor(pre_norm / L_s), n_step+1, N): the schedule catches
    up with the weights instead of ever scaling them back upward, and
    the counter strictly advances so decay terminates in at most N calls.
    """
    ls = step_length(init_norm, n_steps)
    if ls <= 0.0 or pre_norm <= 0.0:
        return n_steps
    raw = n_steps - math.floor(pre_norm / ls)
    return int(min(max(raw, n_step + 1), n_steps))


def _group_norms(net: Network, groups: list[GroupIndex]) -> np.ndarray:
    return np.array([l2_norm(read_group(net, g)) for g in groups])


def decide_prune(net: Network, groups: list[GroupIndex],
                 states: list[DecayState], cfg: DpmConfig,
                 step: int = 0) -> DecisionList:
    """Pick the next groups to decay: global bottom-k by group norm.

    Eligible groups are neither decaying nor already zero; ties break by
    ascending group_id.  A layer's last live group is never selected
    (zeroing a whole hidden layer would disconnect the network), and the
    selection is capped so the decaying-or-zeroed count stops at the
    first value reaching ``sparsity_target``.
    """
    norms = _group_norms(net, groups)
    total = len(groups)
    current = sum(1 for s in states if s.is_decay)
    target_count = math.ceil(cfg.sparsity_target * total - 1e-9)
    cap = min(int(cfg.groups_per_decision), target_count - current)

    alive: dict[int, int] = {}
    for g, s, n in zip(groups, states, norms):
        if not s.is_decay and n > cfg.zero_epsilon:
            alive[g.layer_id] = alive.get(g.layer_id, 0) + 1

    candidates = sorted(
        (g for g, s, n in zip(groups, states, norms)
         if not s.is_decay and n > cfg.zero_epsilon),
        key=lambda g: (norms[g.group_id], g.group_id),
    )
    selected: list[int] = []
    for g in candidates:
        if len(selected) >= max(cap, 0):
            break
        if alive[g.layer_id] <= 1:
            continue  # last live group of its layer stays
        selected.append(g.group_id)
        alive[g.layer_id] -= 1

    if not selected:
        raise NothingToPrune("every eligible group is protected or absent")
    return DecisionList(step=step, group_ids=tuple(sorted(selected)))


def apply_decision(net: Network, groups: list[GroupIndex],
                   states: list[DecayState], decision: DecisionList) -> None:
    """Record the starting norm and switch the selected groups to decay."""
    for gid in decision.group_ids:
        if not states[gid].is_decay:
            states[gid] = DecayState(
                n_step=0,
                init_norm=l2_norm(read_group(net, groups[gid])),
                is_decay=True,
            )


def decay_step(group_id: int, x_k, x_tilde, grad, peer_grad_norms,
               state: DecayState, cfg: DpmConfig, *, step: int = 0,
               x_tilde_criteria=None):
    """One decay move for a single group.

    Returns (new_weights, new_state, release_event_or_None).  Fully
    decayed groups come back as exact zeros with their state untouched.
    Otherwise the release criteria are evaluated on the tentative update
    (``x_tilde_criteria`` substitutes a penalty-neutralized copy for the
    criteria only); released groups keep the plain update, everything
    else is projected onto the schedule, with the undershoot shortcut
    when the update already fell at or below target.
    """
    if not state.is_decay:
        raise ValueError("decay_step called for a group that is not decaying")
    xt = np.asarray(x_tilde, dtype=np.float64)
    n_steps = cfg.decay_steps
    if state.n_step >= n_steps:
        return np.zeros_like(xt), state, None

    crit = xt if x_tilde_criteria is None else np.asarray(x_tilde_criteria, np.float64)
    release = False
    c_rate = c_len = 0.0
    try:
        c_rate = escape_rate(x_k, crit, cfg.zero_epsilon)
        c_len = relative_grad_magnitude(grad, peer_grad_norms)
        release = should_release(c_rate, c_len, cfg)
    except (ZeroStep, ZeroPeers):
        release = False  # no gradient evidence: keep decaying

    if release:
        event = ReleaseEvent(step=step, group_id=group_id, c_rate=c_rate,
                             c_len=c_len, n_step_at_release=state.n_step)
        return xt.copy(), DecayState(), event

    index = state.n_step + 1
    target = target_norm(state.init_norm, n_steps, index)
    pre_norm = l2_norm(xt)
    if pre_norm <= target:
        # already below schedule: keep the update, let the counter catch up
        new_n = recalibrate_step(pre_norm, state.init_norm, n_steps, state.n_step)
        if new_n >= n_steps:
            # below the last nonzero rung; finish the decay now so a
            # never-released group zeroes within its N-call budget
            return np.zeros_like(xt), replace(state, n_step=n_steps), None
        return xt.copy(), replace(state, n_step=new_n), None
    return scale_to_norm(xt, target), replace(state, n_step=index), None


def _is_zeroed(state: DecayState, n_steps: int) -> bool:
    return state.is_decay and state.n_step >= n_steps


def sparsity_counts(states: list[DecayState], n_steps: int) -> tuple[int, int]:
    """(decaying_or_zeroed, zeroed) group counts."""
    marked = sum(1 for s in states if s.is_decay)
    zeroed = sum(1 for s in states if _is_zeroed(s, n_steps))
    return marked, zeroed


def zeroed_group_ids(states: list[DecayState], n_steps: int) -> list[int]:
    return [i for i, s in enumerate(states) if _is_zeroed(s, n_steps)]


def tick(net: Network, groups: list[GroupIndex], grads: GradSnapshot,
         states: list[DecayState], cfg: DpmConfig, opt,
         step: int = 0) -> list[ReleaseEvent]:
    """One full optimizer step with decay interleaved.

    Every coordinate gets the tentative SGD update; fully decayed groups
    are pinned at exact zero (update and momentum masked), decaying
    groups pass through :func:`decay_step`, everything else keeps the
    plain update.  All group reads come from the pre-update snapshot and
    writes land in ascending group_id order, so shared coordinates
    between adjacent layers resolve deterministically.
    """
    n_steps = cfg.decay_steps
    decaying = [g for g in groups
                if states[g.group_id].is_decay
                and states[g.group_id].n_step < n_steps]
    frozen = [g for g in groups if _is_zeroed(states[g.group_id], n_steps)]

    x_now = {g.group_id: read_group(net, g) for g in decaying}

    pre = ParamSet(opt.pre_update(net, grads))
    vel = ParamSet(opt.vel) if opt.vel is not None else None
    for g in frozen:
        write_group(pre, g, np.zeros(g.size))
        if vel is not None:
            write_group(vel, g, np.zeros(g.size))

    x_pre = {g.group_id: read_group(pre, g) for g in decaying}

    neutralize = cfg.neutralize_penalization and opt.l2_coeff > 0.0
    layers_needed = {g.layer_id for g in decaying}
    peer_norms = {
        li: [l2_norm(read_group(grads, g)) for g in groups if g.layer_id == li]
        for li in layers_needed
    }

    events: list[ReleaseEvent] = []
    for g in decaying:  # groups arrive in ascending group_id order
        gid = g.group_id
        crit = None
        if neutralize:
            crit = x_pre[gid] + opt.lr * opt.l2_coeff * x_now[gid]
        new_vec, new_state, event = decay_step(
            gid, x_now[gid], x_pre[gid], read_group(grads, g),
            peer_norms[g.layer_id], states[gid], cfg,
            step=step, x_tilde_criteria=crit,
        )
        write_group(pre, g, new_vec)
        states[gid] = new_state
        if event is not None:
            events.append(event)

    for layer, src in zip(net.layers, pre.layers):
        layer.w[...] = src.w
        layer.b[...] = src.b
    return events
