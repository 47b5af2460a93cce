"""Single-step pruning baseline: zero the selected groups immediately.

Shares the selection code path with the decay scheduler so comparison
runs differ only in *how* a decision is executed, never in which groups
get picked from identical network states.
"""

from __future__ import annotations

import numpy as np

from .decay import DecayState, DecisionList, DpmConfig, decide_prune
from .nn import GradSnapshot, GroupIndex, Network, ParamSet, write_group

__all__ = ["BaselineState", "single_step_prune", "baseline_tick"]


class BaselineState:
    """Per-group pruned flags; pruned groups hold exact zeros forever."""

    def __init__(self, num_groups: int):
        self.pruned = np.zeros(num_groups, dtype=bool)

    def zeroed_count(self) -> int:
        return int(self.pruned.sum())


def single_step_prune(net: Network, groups: list[GroupIndex],
                      bstate: BaselineState, cfg: DpmConfig,
                      step: int = 0) -> DecisionList:
    """Select with the shared criterion and zero the winners in place."""
    fresh = [DecayState() for _ in groups]  # already-pruned groups are
    decision = decide_prune(net, groups, fresh, cfg, step=step)  # zero-norm, so excluded
    for gid in decision.group_ids:
        write_group(net, groups[gid], np.zeros(groups[gid].size))
        bstate.pruned[gid] = True
    return decision


def baseline_tick(net: Network, groups: list[GroupIndex], grads: GradSnapshot,
                  bstate: BaselineState, opt) -> None:
    """Plain SGD step with pruned groups masked to exact zero."""
    pre = ParamSet(opt.pre_update(net, grads))
    vel = ParamSet(opt.vel) if opt.vel is not None else None
    for g in groups:
        if bstate.pruned[g.group_id]:
            write_group(pre, g, np.zeros(g.size))
            if vel is not None:
                write_group(vel, g, np.zeros(g.size))
    for layer, src in zip(net.layers, pre.layers):
        layer.w[...] = src.w
        layer.b[...] = src.b
