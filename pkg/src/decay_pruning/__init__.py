"""Smooth multi-step channel pruning with gradient-driven releases.

Channel groups picked for removal decay to zero over N optimizer steps
instead of being cut in one action; gradient evidence can release a
group back to normal training when the pruning decision looks wrong.
Includes a minimal MLP/backprop substrate, a single-step baseline, and
an experiment harness with deterministic sweeps and method comparisons.
"""

from .tensor import Rng, ZeroVectorScale, l2_norm, rng_normal, scale_to_norm
from .nn import (
    BadGroup,
    GradSnapshot,
    GroupIndex,
    Layer,
    Network,
    ParamSet,
    SgdOptimizer,
    ShapeMismatch,
    backward,
    forward,
    group_view,
    load_checkpoint,
    read_group,
    save_checkpoint,
    sgd_pre_update,
    write_group,
)
from .decay import (
    DecayState,
    DecisionList,
    DpmConfig,
    NothingToPrune,
    ReleaseEvent,
    ZeroPeers,
    ZeroStep,
    apply_decision,
    decay_step,
    decide_prune,
    escape_rate,
    recalibrate_step,
    relative_grad_magnitude,
    should_release,
    sparsity_counts,
    step_length,
    target_norm,
    tick,
    zeroed_group_ids,
)
from .baseline import BaselineState, baseline_tick, single_step_prune
from .data import (
    BadMagic,
    CountMismatch,
    Dataset,
    TruncatedFile,
    concat_datasets,
    gen_blobs,
    gen_two_moons,
    load_idx,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    RunRecord,
    build_dataset,
    compare_methods,
    count_flops,
    count_params,
    evaluate_accuracy,
    run_experiment,
    run_sweep,
)

__version__ = "0.1.0"
