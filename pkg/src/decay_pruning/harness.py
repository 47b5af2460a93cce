"""Experiment orchestration: training loop, metrics, sweeps, comparisons.

A run is a pure function of (config, seed): datasets, weight init and
batch order all come from Philox streams derived from the seed, so
artifacts are byte-identical across repeats and across worker counts.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from multiprocessing import get_context

import numpy as np

from .baseline import BaselineState, baseline_tick, single_step_prune
from .data import Dataset, concat_datasets, gen_blobs, gen_two_moons, load_idx
from .decay import (
    DecayState,
    DpmConfig,
    NothingToPrune,
    ReleaseEvent,
    apply_decision,
    decide_prune,
    sparsity_counts,
    tick,
    zeroed_group_ids,
)
from .nn import (
    GroupIndex,
    Network,
    SgdOptimizer,
    backward,
    forward,
    group_view,
    save_checkpoint,
)
from .tensor import Rng

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunRecord",
    "METHODS",
    "build_dataset",
    "count_flops",
    "count_params",
    "evaluate_accuracy",
    "run_experiment",
    "run_sweep",
    "compare_methods",
    "SWEEP_AXES",
]

METHODS = ("single", "sp", "sp_sr")
SWEEP_AXES = {"N": "decay_steps", "t-rate": "t_rate", "t-len": "t_len"}

STEP_HEADER = ["step", "epoch", "train_loss", "group_sparsity",
               "zeroed_fraction", "releases"]
EPOCH_HEADER = ["epoch", "test_acc", "params_fraction", "flops_fraction"]
RELEASE_HEADER = ["step", "group_id", "layer_id", "c_rate", "c_len",
                  "n_step_at_release"]


class ConfigError(ValueError):
    pass


_DATASET_KEYS = {
    "blobs": {"kind", "classes", "samples_per_class", "dims", "separation",
              "test_per_class"},
    "two_moons": {"kind", "samples_per_class", "noise", "test_per_class"},
    "idx": {"kind", "train_images", "train_labels", "test_images",
            "test_labels"},
}


@dataclass
class ExperimentConfig:
    """Everything a run needs; serialized verbatim into every artifact."""

    layer_widths: list[int]
    dataset: dict
    method: str = "sp_sr"
    epochs: int = 10
    batch_size: int = 50
    lr: float = 0.1
    lr_decay_epoch: int | None = None
    lr_decay_factor: float = 0.1
    momentum: float = 0.0
    l2_coeff: float = 0.0
    seed: int = 0
    decay_steps: int = 5
    t_rate: float = 0.3
    t_len: float = 0.2
    neutralize_penalization: bool = True
    decision_interval: int | None = None  # None -> once per epoch
    sparsity_target: float = 0.5
    groups_per_decision: int | None = None  # None -> spread over the run
    zero_epsilon: float = 1e-12

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"layer_widths", "dataset"} - set(raw)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        method = self.method.replace("-", "_")
        if method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        self.method = method
        w = self.layer_widths
        if (not isinstance(w, list) or len(w) < 3
                or any(not isinstance(v, int) or v < 1 for v in w)):
            raise ConfigError("layer_widths must be >=3 positive ints (in, hidden..., out)")
        if not isinstance(self.dataset, dict) or "kind" not in self.dataset:
            raise ConfigError("dataset must be a dict with a 'kind' key")
        kind = self.dataset["kind"]
        if kind not in _DATASET_KEYS:
            raise ConfigError(f"unknown dataset kind {kind!r}")
        extra = set(self.dataset) - _DATASET_KEYS[kind]
        if extra:
            raise ConfigError(f"unknown dataset keys for {kind!r}: {sorted(extra)}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.l2_coeff < 0:
            raise ConfigError("l2_coeff must be >= 0")
        if self.lr_decay_epoch is not None and self.lr_decay_epoch < 1:
            raise ConfigError("lr_decay_epoch must be >= 1")
        if self.lr_decay_factor <= 0:
            raise ConfigError("lr_decay_factor must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.decision_interval is not None and self.decision_interval < 1:
            raise ConfigError("decision_interval must be >= 1")
        if self.groups_per_decision is not None and self.groups_per_decision < 1:
            raise ConfigError("groups_per_decision must be >= 1")
        try:
            DpmConfig(
                decay_steps=self.decay_steps, t_rate=self.t_rate,
                t_len=self.t_len, sparsity_target=self.sparsity_target,
                zero_epsilon=self.zero_epsilon,
            ).validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None


def build_dataset(spec: dict, rng: Rng) -> Dataset:
    kind = spec["kind"]
    if kind == "blobs":
        return gen_blobs(
            rng,
            classes=spec["classes"],
            samples_per_class=spec["samples_per_class"],
            dims=spec["dims"],
            separation=spec["separation"],
            test_per_class=spec.get("test_per_class"),
        )
    if kind == "two_moons":
        return gen_two_moons(
            rng,
            samples_per_class=spec["samples_per_class"],
            noise=spec.get("noise", 0.15),
            test_per_class=spec.get("test_per_class"),
        )
    if kind == "idx":
        ds = load_idx(spec["train_images"], spec["train_labels"], tag="train")
        if spec.get("test_images"):
            ds = concat_datasets(
                ds, load_idx(spec["test_images"], spec["test_labels"], tag="test")
            )
        return ds
    raise ConfigError(f"unknown dataset kind {kind!r}")


def count_flops(net: Network, zeroed_groups=()) -> int:
    """Dense-layer cost model: 2*in*out per layer, zeroed channels excluded."""
    zeroed_at: dict[int, int] = {}
    for g in zeroed_groups:
        zeroed_at[g.layer_id] = zeroed_at.get(g.layer_id, 0) + 1
    flops = 0
    for i, layer in enumerate(net.layers):
        out, inn = layer.w.shape
        eff_out = out - zeroed_at.get(i, 0)
        eff_in = inn - zeroed_at.get(i - 1, 0)
        flops += 2 * eff_in * eff_out
    return flops


def count_params(net: Network, zeroed_groups=()) -> int:
    """Remaining weight+bias count once zeroed channels are compacted away."""
    zeroed_at: dict[int, int] = {}
    for g in zeroed_groups:
        zeroed_at[g.layer_id] = zeroed_at.get(g.layer_id, 0) + 1
    params = 0
    for i, layer in enumerate(net.layers):
        out, inn = layer.w.shape
        eff_out = out - zeroed_at.get(i, 0)
        eff_in = inn - zeroed_at.get(i - 1, 0)
        params += eff_in * eff_out + eff_out
    return params


def evaluate_accuracy(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    if len(x) == 0:
        return float("nan")
    pred = forward(net, x).argmax(axis=1)
    return float(np.mean(pred == y))


@dataclass
class RunRecord:
    """Full per-step/per-epoch timeline of one run plus final metrics."""

    config: dict
    step_rows: list[tuple]
    epoch_rows: list[tuple]
    releases: list[ReleaseEvent]
    final_accuracy: float
    final_group_sparsity: float
    final_zeroed_fraction: float
    params_fraction: float
    flops_fraction: float
    total_releases: int
    steps_to_target_sparsity: int | None
    net: Network | None = None
    groups: list[GroupIndex] | None = None

    def summary(self) -> dict:
        return {
            "config": self.config,
            "final_accuracy": self.final_accuracy,
            "final_group_sparsity": self.final_group_sparsity,
            "final_zeroed_fraction": self.final_zeroed_fraction,
            "params_fraction": self.params_fraction,
            "flops_fraction": self.flops_fraction,
            "total_releases": self.total_releases,
            "steps_to_target_sparsity": self.steps_to_target_sparsity,
        }


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _resolve(cfg: ExperimentConfig, total_groups: int,
             steps_per_epoch: int) -> ExperimentConfig:
    """Fill the schedule defaults that depend on the model/data sizes."""
    interval = cfg.decision_interval or steps_per_epoch
    gpd = cfg.groups_per_decision
    if gpd is None:
        planned = max(1, (cfg.epochs * steps_per_epoch) // interval)
        gpd = max(1, math.ceil(total_groups * cfg.sparsity_target / planned))
    return replace(cfg, decision_interval=interval, groups_per_decision=gpd)


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> RunRecord:
    """Train, prune per ``cfg.method``, record the timeline, persist artifacts.

    method "single" zeroes selections immediately, "sp" decays them with
    releases disabled (threshold sentinel +inf), "sp_sr" runs the full
    decay-plus-release scheduler.
    """
    cfg.validate()
    rng = Rng(cfg.seed)
    ds = build_dataset(cfg.dataset, rng.split(1))
    if ds.dims != cfg.layer_widths[0]:
        raise ConfigError(
            f"dataset has {ds.dims} features, model expects {cfg.layer_widths[0]}"
        )
    if ds.num_classes > cfg.layer_widths[-1]:
        raise ConfigError(
            f"dataset has {ds.num_classes} classes, model only {cfg.layer_widths[-1]}"
        )
    train_x, train_y = ds.train_x, ds.train_y
    test_x, test_y = ds.test_x, ds.test_y
    n_train = len(train_x)
    if n_train == 0:
        raise ConfigError("dataset has no training samples")

    net = Network.init(rng.split(2), cfg.layer_widths)
    shuffle_rng = rng.split(3)
    groups = group_view(net)
    total = len(groups)
    steps_per_epoch = math.ceil(n_train / cfg.batch_size)
    cfg = _resolve(cfg, total, steps_per_epoch)

    target_count = math.ceil(cfg.sparsity_target * total - 1e-9)
    prunable = sum(net.layers[li].w.shape[0] - 1 for li in range(len(net.layers) - 1))
    if target_count > prunable:
        raise ConfigError(
            f"sparsity_target needs {target_count} groups but layer protection "
            f"leaves only {prunable} prunable"
        )

    mcfg = DpmConfig(
        decay_steps=cfg.decay_steps,
        t_rate=math.inf if cfg.method == "sp" else cfg.t_rate,
        t_len=cfg.t_len,
        neutralize_penalization=cfg.neutralize_penalization,
        decision_interval=cfg.decision_interval,
        sparsity_target=cfg.sparsity_target,
        groups_per_decision=cfg.groups_per_decision,
        zero_epsilon=cfg.zero_epsilon,
    )
    mcfg.validate()

    states = [DecayState() for _ in groups]
    bstate = BaselineState(total)
    opt = SgdOptimizer(cfg.lr, momentum=cfg.momentum, l2_coeff=cfg.l2_coeff)

    dense_flops = count_flops(net)
    dense_params = count_params(net)

    def zeroed_groups():
        if cfg.method == "single":
            ids = np.flatnonzero(bstate.pruned)
        else:
            ids = zeroed_group_ids(states, mcfg.decay_steps)
        return [groups[i] for i in ids]

    def epoch_row(epoch):
        zg = zeroed_groups()
        return (
            epoch,
            evaluate_accuracy(net, test_x, test_y),
            count_params(net, zg) / dense_params,
            count_flops(net, zg) / dense_flops,
        )

    step_rows: list[tuple] = []
    epoch_rows = [epoch_row(0)]
    releases: list[ReleaseEvent] = []
    steps_to_target: int | None = None
    step = 0

    for epoch in range(1, cfg.epochs + 1):
        if cfg.lr_decay_epoch is not None and epoch == cfg.lr_decay_epoch:
            opt.lr *= cfg.lr_decay_factor
        order = shuffle_rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            step += 1
            loss, grads = backward(net, train_x[idx], train_y[idx], batch_id=step)

            if step % cfg.decision_interval == 0:
                if cfg.method == "single":
                    marked = bstate.zeroed_count()
                else:
                    marked, _ = sparsity_counts(states, mcfg.decay_steps)
                if marked < target_count:
                    try:
                        if cfg.method == "single":
                            single_step_prune(net, groups, bstate, mcfg, step=step)
                        else:
                            decision = decide_prune(net, groups, states, mcfg, step=step)
                            apply_decision(net, groups, states, decision)
                    except NothingToPrune:
                        pass

            if cfg.method == "single":
                baseline_tick(net, groups, grads, bstate, opt)
                step_events: list[ReleaseEvent] = []
                zeroed = bstate.zeroed_count()
                marked = zeroed
            else:
                step_events = tick(net, groups, grads, states, mcfg, opt, step=step)
                marked, zeroed = sparsity_counts(states, mcfg.decay_steps)

            releases.extend(step_events)
            step_rows.append(
                (step, epoch, loss, marked / total, zeroed / total, len(step_events))
            )
            if steps_to_target is None and 0 < target_count <= zeroed:
                steps_to_target = step
        epoch_rows.append(epoch_row(epoch))

    zg = zeroed_groups()
    record = RunRecord(
        config=cfg.to_dict(),
        step_rows=step_rows,
        epoch_rows=epoch_rows,
        releases=releases,
        final_accuracy=epoch_rows[-1][1],
        final_group_sparsity=(
            bstate.zeroed_count() / total if cfg.method == "single"
            else sparsity_counts(states, mcfg.decay_steps)[0] / total
        ),
        final_zeroed_fraction=len(zg) / total,
        params_fraction=count_params(net, zg) / dense_params,
        flops_fraction=count_flops(net, zg) / dense_flops,
        total_releases=len(releases),
        steps_to_target_sparsity=steps_to_target,
        net=net,
        groups=groups,
    )
    if out_dir is not None:
        _persist_run(record, out_dir)
    return record


def _persist_run(record: RunRecord, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "steps.csv"), STEP_HEADER, record.step_rows)
    _write_csv(os.path.join(out_dir, "epochs.csv"), EPOCH_HEADER, record.epoch_rows)
    layer_of = {g.group_id: g.layer_id for g in (record.groups or [])}
    _write_csv(
        os.path.join(out_dir, "releases.csv"),
        RELEASE_HEADER,
        [
            (e.step, e.group_id, layer_of.get(e.group_id, -1), e.c_rate, e.c_len,
             e.n_step_at_release)
            for e in record.releases
        ],
    )
    _write_json(os.path.join(out_dir, "config.json"), record.config)
    _write_json(os.path.join(out_dir, "summary.json"), record.summary())
    if record.net is not None:
        save_checkpoint(record.net, os.path.join(out_dir, "checkpoint.json"))


def _run_cell(payload):
    """Worker entry: run one experiment from a plain dict, return rows."""
    cfg_dict, out_dir = payload
    cfg = ExperimentConfig.from_dict(cfg_dict)
    rec = run_experiment(cfg, out_dir=out_dir)
    result = rec.summary()
    result["step_rows"] = rec.step_rows
    return result


def _map_cells(payloads, jobs: int):
    if jobs <= 1:
        return [_run_cell(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs, mp_context=get_context("fork")) as ex:
        return list(ex.map(_run_cell, payloads))


def run_sweep(base_cfg: ExperimentConfig, axis: str, values,
              out_dir: str | None = None, jobs: int = 1) -> list[dict]:
    """One run per value along a single hyperparameter axis.

    Cell i runs with seed ``base_seed ^ i`` and its own output directory;
    the summary table keeps the input value order.  A failed cell is
    recorded with empty metrics instead of aborting the sweep.
    """
    axis_key = axis.replace("_", "-") if axis != "N" else "N"
    if axis_key not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {sorted(SWEEP_AXES)}, got {axis!r}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    field_name = SWEEP_AXES[axis_key]

    payloads = []
    for i, value in enumerate(values):
        cfg = replace(base_cfg, **{field_name: value}, seed=base_cfg.seed ^ i)
        cell_dir = None
        if out_dir is not None:
            cell_dir = os.path.join(out_dir, f"cell_{i:02d}_{axis_key}_{value}")
        payloads.append((cfg.to_dict(), cell_dir))

    rows: list[dict] = []
    results = []
    if jobs <= 1:
        for payload in payloads:
            try:
                results.append(_run_cell(payload))
            except Exception as e:  # a failed cell is recorded, not fatal
                results.append({"error": f"{type(e).__name__}: {e}"})
    else:
        with ProcessPoolExecutor(max_workers=jobs, mp_context=get_context("fork")) as ex:
            futures = [ex.submit(_run_cell, p) for p in payloads]
            for fut in futures:
                try:
                    results.append(fut.result())
                except Exception as e:
                    results.append({"error": f"{type(e).__name__}: {e}"})

    for value, res in zip(values, results):
        row = {"value": value}
        if "error" in res:
            row.update(error=res["error"], final_accuracy=None,
                       final_flops_fraction=None, final_params_fraction=None,
                       total_releases=None)
        else:
            row.update(
                final_accuracy=res["final_accuracy"],
                final_flops_fraction=res["flops_fraction"],
                final_params_fraction=res["params_fraction"],
                total_releases=res["total_releases"],
            )
        rows.append(row)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(
            os.path.join(out_dir, "sweep_summary.csv"),
            ["value", "final_accuracy", "final_flops_fraction",
             "final_params_fraction", "total_releases"],
            [
                (r["value"], r["final_accuracy"], r["final_flops_fraction"],
                 r["final_params_fraction"], r["total_releases"])
                for r in rows
            ],
        )
        _write_json(
            os.path.join(out_dir, "sweep.json"),
            {"config": base_cfg.to_dict(), "axis": axis_key, "values": values,
             "rows": rows},
        )
    return rows


def _stats(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def compare_methods(cfg: ExperimentConfig, seeds, out_dir: str | None = None,
                    jobs: int = 1) -> dict:
    """Run all three methods over the given seeds and summarize.

    Seeds are shared across methods so comparisons are paired; the
    summary holds per-method mean/std of final accuracy, FLOPs/params
    fractions and steps to target sparsity, plus every run's timeline.
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ConfigError("compare needs at least 2 seeds")

    payloads = []
    labels = []
    for method in METHODS:
        for seed in seeds:
            run_cfg = replace(cfg, method=method, seed=seed)
            run_dir = None
            if out_dir is not None:
                run_dir = os.path.join(out_dir, method, f"seed_{seed}")
            payloads.append((run_cfg.to_dict(), run_dir))
            labels.append((method, seed))

    results = _map_cells(payloads, jobs)

    per_method: dict[str, list[dict]] = {m: [] for m in METHODS}
    timeline_rows = []
    for (method, seed), res in zip(labels, results):
        res["seed"] = seed
        per_method[method].append(res)
        for row in res["step_rows"]:
            timeline_rows.append((method, seed, row[0], row[3], row[4], row[5]))

    summary_rows = []
    summary = {"config": cfg.to_dict(), "seeds": seeds, "methods": {}}
    for method in METHODS:
        runs = per_method[method]
        acc_m, acc_s = _stats([r["final_accuracy"] for r in runs])
        flops_m, flops_s = _stats([r["flops_fraction"] for r in runs])
        params_m, params_s = _stats([r["params_fraction"] for r in runs])
        stt_m, stt_s = _stats([r["steps_to_target_sparsity"] for r in runs])
        summary["methods"][method] = {
            "accuracy_mean": acc_m, "accuracy_std": acc_s,
            "flops_fraction_mean": flops_m, "flops_fraction_std": flops_s,
            "params_fraction_mean": params_m, "params_fraction_std": params_s,
            "steps_to_target_mean": stt_m, "steps_to_target_std": stt_s,
            "total_releases": sum(r["total_releases"] for r in runs),
            "runs": [
                {k: v for k, v in r.items() if k != "step_rows"} for r in runs
            ],
        }
        summary_rows.append((method, acc_m, acc_s, flops_m, flops_s, params_m,
                             params_s, stt_m, stt_s))

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(
            os.path.join(out_dir, "compare_summary.csv"),
            ["method", "acc_mean", "acc_std", "flops_fraction_mean",
             "flops_fraction_std", "params_fraction_mean", "params_fraction_std",
             "steps_to_target_mean", "steps_to_target_std"],
            summary_rows,
        )
        _write_csv(
            os.path.join(out_dir, "compare_timelines.csv"),
            ["method", "seed", "step", "group_sparsity", "zeroed_fraction",
             "releases"],
            timeline_rows,
        )
        _write_json(os.path.join(out_dir, "compare.json"), summary)
    return summary
