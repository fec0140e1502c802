"""Reference methods: PBT, non-adaptive constant-HP search, pooled-history ablation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .genealogy import GenealogyTree
from .orchestrator import (
    STREAM_ALGO,
    CurvePoint,
    ProgressFn,
    RunConfig,
    RunResult,
    derive_seed,
    init_seed,
    run,
    search_stream,
)
from .searchers import Observation, SearcherConfig, suggest
from .space import SearchSpace
from .trainers import Trainer


@dataclass(frozen=True)
class PbtConfig:
    n: int
    t_max: int
    t_g: int = 1
    truncation: float = 0.25          # fraction exploited at both ends
    resample_prob: float = 0.25       # explore: probability of full resample
    perturb_factors: tuple[float, float] = (0.8, 1.2)
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.t_max < 1 or self.t_g < 1:
            raise ValueError("n, t_max and t_g must be >= 1")
        if not 0.0 < self.truncation <= 0.5:
            raise ValueError("truncation must be in (0, 0.5]")
        if not 0.0 <= self.resample_prob <= 1.0:
            raise ValueError("resample_prob must be in [0, 1]")

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "t_max": self.t_max,
            "t_g": self.t_g,
            "truncation": self.truncation,
            "resample_prob": self.resample_prob,
            "perturb_factors": list(self.perturb_factors),
            "seed": self.seed,
        }


def _explore(
    hp: Sequence[float], space: SearchSpace, cfg: PbtConfig, rng: np.random.Generator
):
    """Canonical PBT explore: resample uniformly with some probability,
    otherwise perturb every dimension by a random factor, clipped to bounds."""
    if rng.random() < cfg.resample_prob:
        return space.sample_uniform(rng)
    out = []
    for d, v in zip(space.dims, hp):
        factor = cfg.perturb_factors[int(rng.integers(0, len(cfg.perturb_factors)))]
        out.append(min(max(v * factor, d.lower), d.upper))
    return tuple(out)


def run_pbt(
    config: PbtConfig,
    space: SearchSpace,
    trainer: Trainer,
    *,
    progress: ProgressFn | None = None,
) -> RunResult:
    """Truncation-selection PBT: every generation the bottom fraction copies
    the state and hyperparameters of a random top-fraction member, explores,
    and all n agents keep training. Transfer ledger counts the exploit copies."""
    rng_search = search_stream(config.seed)
    rng_algo = np.random.default_rng(derive_seed(config.seed, STREAM_ALGO))
    tree = GenealogyTree()
    curves: list[CurvePoint] = []
    ledger: list[int] = []
    epochs_total = 0
    best_val, best_test = math.inf, math.inf

    states: list[object] = []
    hps: list[tuple] = []
    last_record: list[int] = []

    t_start = time.perf_counter()
    for i in range(config.n):
        hp = space.sample_uniform(rng_search)
        state = trainer.init(init_seed(config.seed, i))
        state = trainer.step_many(state, space.to_dict(hp), config.t_g)
        val, test = trainer.evaluate(state)
        cid = tree.record_child(None, 0, hp, val, test, config.t_g, False)
        states.append(state)
        hps.append(hp)
        last_record.append(cid)
        epochs_total += config.t_g
        if val < best_val:
            best_val, best_test = val, test
    ledger.append(1)
    curves.append(
        CurvePoint(0, epochs_total, best_val, best_test,
                   (time.perf_counter() - t_start) * 1000.0)
    )
    if progress is not None:
        progress(0, best_val, best_test, epochs_total)

    k = math.ceil(config.truncation * config.n)
    for t in range(1, config.t_max):
        t_start = time.perf_counter()
        order = sorted(
            range(config.n), key=lambda i: (tree.get(last_record[i]).val_loss, i)
        )
        top, bottom = order[:k], order[-k:]
        sources = {}
        for i in bottom:
            src = top[int(rng_algo.integers(0, len(top)))]
            sources[i] = src
            states[i] = trainer.fork(states[src])
            hps[i] = _explore(hps[src], space, config, rng_algo)
        ledger.append(k)
        tree.set_parents(t, sorted(set(last_record)))

        new_records = []
        for i in range(config.n):
            parent = last_record[sources[i]] if i in sources else last_record[i]
            states[i] = trainer.step_many(states[i], space.to_dict(hps[i]), config.t_g)
            val, test = trainer.evaluate(states[i])
            cid = tree.record_child(parent, t, hps[i], val, test, config.t_g, False)
            new_records.append(cid)
            epochs_total += config.t_g
            if val < best_val:
                best_val, best_test = val, test
        last_record = new_records
        curves.append(
            CurvePoint(t, epochs_total, best_val, best_test,
                       (time.perf_counter() - t_start) * 1000.0)
        )
        if progress is not None:
            progress(t, best_val, best_test, epochs_total)

    best_agent = min(tree.records, key=lambda r: (r.val_loss, r.id)).id
    return RunResult(
        best_agent=best_agent,
        best_schedule=tree.schedule(best_agent),
        curves=curves,
        total_epochs=epochs_total,
        transfer_ledger=ledger,
        tree=tree,
    )


def run_nonadaptive(
    searcher_config: SearcherConfig,
    space: SearchSpace,
    trainer: Trainer,
    trials: int,
    t_total: int,
    *,
    seed: int | None = None,
    progress: ProgressFn | None = None,
) -> RunResult:
    """Sequential constant-HP search: each trial trains a fresh lineage for the
    whole horizon under one hyperparameter vector chosen by the searcher."""
    if trials < 1 or t_total < 1:
        raise ValueError("trials and t_total must be >= 1")
    if seed is None:
        seed = searcher_config.seed
    rng_search = search_stream(seed)
    tree = GenealogyTree()
    curves: list[CurvePoint] = []
    history: list[Observation] = []
    best_val, best_test = math.inf, math.inf
    epochs_total = 0

    for kth in range(trials):
        t_start = time.perf_counter()
        hp = suggest(searcher_config, space, history, rng_search)
        state = trainer.init(init_seed(seed, kth))
        state = trainer.step_many(state, space.to_dict(hp), t_total)
        val, test = trainer.evaluate(state)
        tree.record_child(None, 0, hp, val, test, t_total, False)
        history.append(Observation(hp, val))
        epochs_total += t_total
        if val < best_val:
            best_val, best_test = val, test
        curves.append(
            CurvePoint(kth, epochs_total, best_val, best_test,
                       (time.perf_counter() - t_start) * 1000.0)
        )
        if progress is not None:
            progress(kth, best_val, best_test, epochs_total)

    best_agent = min(tree.records, key=lambda r: (r.val_loss, r.id)).id
    return RunResult(
        best_agent=best_agent,
        best_schedule=tree.schedule(best_agent),
        curves=curves,
        total_epochs=epochs_total,
        transfer_ledger=[1],
        tree=tree,
    )


def run_pooled_ablation(
    config: RunConfig,
    space: SearchSpace,
    trainer: Trainer,
    **kwargs,
) -> RunResult:
    """The generation loop with every child's searcher fed the union of all
    observations from all lineages and generations. Shares the exact code path
    of `run`, differing only in history assembly."""
    return run(replace(config, history_mode="pooled"), space, trainer, **kwargs)
