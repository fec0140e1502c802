"""Single-run adaptive schedule search: the generation loop.

Each generation step selects the best children as parents (roughly sqrt(n/c)
of them), forks every parent's model state to its children, asks the searcher
for each child's hyperparameters using only that lineage's history, trains for
t_g iterations subject to the early-stopping gates, and records everything in
the genealogy tree.

Two execution modes: sequential (bit-reproducible given the seed; what every
test uses) and parent-parallel (reproducible statistics, not bit-identical
ordering). The per-generation early-evaluation ledger is the only structure
shared across parents and is guarded by a lock.
"""

from __future__ import annotations

import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from statistics import median
from typing import Callable, Sequence

import numpy as np

from .genealogy import HISTORY_MODES, GenealogyTree
from .searchers import Observation, SearcherConfig, suggest
from .space import HpVector, SearchSpace
from .trainers import Trainer

# Purpose tags for the independent per-run rng streams. The search stream is
# consumed exclusively by suggest calls so that a t_max=1 run replays the bare
# searcher loop bit for bit.
STREAM_SEARCH = 0
STREAM_ALGO = 1
STREAM_INIT = 2

ProgressFn = Callable[[int, float, float, int], None]
HistoryProbe = Callable[[int, int | None, list[Observation]], None]


def derive_seed(seed: int, *path: int) -> int:
    """Stable 64-bit sub-seed for a (run seed, purpose, ...) path."""
    return int(np.random.SeedSequence((seed,) + path).generate_state(1, np.uint64)[0])


def search_stream(seed: int) -> np.random.Generator:
    """The rng stream consumed only by searcher suggestions."""
    return np.random.default_rng(derive_seed(seed, STREAM_SEARCH))


def init_seed(seed: int, k: int) -> int:
    """Trainer init seed for the k-th fresh lineage of a run."""
    return derive_seed(seed, STREAM_INIT, k)


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class FixedC:
    c: float = 1.0


@dataclass(frozen=True)
class DynamicC:
    """Gaussian controller for c: mean follows the winning half's c; the std is
    halved when the winner lands near the mean and doubled when it lands far
    outside (fractions of the current std, overridable)."""

    initial_mean: float = 2.0
    initial_std: float = 1.0
    near_fraction: float = 0.3
    far_fraction: float = 1.5
    std_min: float = 0.05


@dataclass(frozen=True)
class EarlyStopConfig:
    level1_threshold: float | None = None  # run halt: best-seen improvement per generation
    level1_window: int = 2
    level2_quantile: float | None = None  # generation halt: satisfaction quantile
    level3: bool = False  # per-child median gate after one iteration


@dataclass(frozen=True)
class RunConfig:
    n: int
    t_max: int
    searcher: SearcherConfig
    t_g: int = 1
    c: FixedC | DynamicC = FixedC(1.0)
    history_mode: str = "sibling_only"
    early_stop: EarlyStopConfig = EarlyStopConfig()
    selection_temperature: float | None = None  # Boltzmann T; None = argmin selection
    seed: int = 0
    seed_gen0_history: bool = False

    def as_dict(self) -> dict:
        if isinstance(self.c, FixedC):
            c_entry: dict = {"fixed": self.c.c}
        else:
            c_entry = {
                "dynamic": {
                    "initial_mean": self.c.initial_mean,
                    "initial_std": self.c.initial_std,
                    "near_fraction": self.c.near_fraction,
                    "far_fraction": self.c.far_fraction,
                    "std_min": self.c.std_min,
                }
            }
        return {
            "n": self.n,
            "t_max": self.t_max,
            "t_g": self.t_g,
            "c": c_entry,
            "searcher": self.searcher.as_dict(),
            "history_mode": self.history_mode,
            "early_stop": {
                "level1_threshold": self.early_stop.level1_threshold,
                "level1_window": self.early_stop.level1_window,
                "level2_quantile": self.early_stop.level2_quantile,
                "level3": self.early_stop.level3,
            },
            "selection_temperature": self.selection_temperature,
            "seed": self.seed,
            "seed_gen0_history": self.seed_gen0_history,
        }


def valid_c(n: int, c: float) -> bool:
    """Whether c yields between 1 and n parents before any clamping."""
    if c <= 0:
        return False
    p = int(math.floor(math.sqrt(n / c) + 0.5))
    return 1 <= p <= n


def validate_config(config: RunConfig) -> None:
    if config.n < 1:
        raise ValueError("n must be >= 1")
    if config.t_max < 1:
        raise ValueError("t_max must be >= 1")
    if config.t_g < 1:
        raise ValueError("t_g must be >= 1")
    if config.history_mode not in HISTORY_MODES:
        raise ValueError(f"unknown history mode {config.history_mode!r}")
    if isinstance(config.c, FixedC):
        if not valid_c(config.n, config.c.c):
            raise ValueError(f"c={config.c.c} is not usable with n={config.n}")
    else:
        if config.n < 2:
            raise ValueError("dynamic c needs n >= 2")
        if config.c.initial_mean <= 0 or config.c.initial_std <= 0:
            raise ValueError("dynamic c needs positive initial mean and std")
    if config.selection_temperature is not None and config.selection_temperature <= 0:
        raise ValueError("selection temperature must be positive")
    es = config.early_stop
    if es.level1_threshold is not None and es.level1_threshold <= 0:
        raise ValueError("level1 threshold must be positive")
    if es.level1_window < 1:
        raise ValueError("level1 window must be >= 1")
    if es.level2_quantile is not None and not 0.0 <= es.level2_quantile <= 1.0:
        raise ValueError("level2 quantile must be in [0, 1]")


# ---------------------------------------------------------------------------
# Population arithmetic and selection


@dataclass(frozen=True)
class GenerationPlan:
    parents: int
    children_per_parent: tuple[int, ...]  # rank order; remainder goes to the best


def plan_generation(n: int, c: float) -> GenerationPlan:
    """Parents p = round(sqrt(n/c)) clamped to [1, n]; children split n evenly,
    the remainder going one each to the best-ranked parents. Perfect-square
    cases recover p = sqrt(n/c) with sqrt(n*c) children per parent exactly."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if c <= 0:
        raise ValueError("c must be > 0")
    p = int(math.floor(math.sqrt(n / c) + 0.5))
    p = min(max(p, 1), n)
    return GenerationPlan(parents=p, children_per_parent=_split_children(n, p))


def _split_children(n: int, parents: int) -> tuple[int, ...]:
    base, extra = divmod(n, parents)
    return tuple(base + 1 if i < extra else base for i in range(parents))


def select_parents(
    results: Sequence[tuple[int, float]],
    p: int,
    temperature: float | None,
    rng: np.random.Generator,
) -> list[int]:
    """Pick p parents from (id, val_loss) pairs, best first.

    temperature=None is pure truncation (ties to the lower id); otherwise p
    distinct children are drawn without replacement with weight
    exp(-loss / temperature). Fewer than p candidates selects all of them.
    """
    k = min(p, len(results))
    if temperature is None:
        ranked = sorted(results, key=lambda r: (r[1], r[0]))
        return [i for i, _ in ranked[:k]]
    ids = np.array([i for i, _ in results])
    losses = np.array([l for _, l in results], dtype=float)
    w = np.exp(-(losses - losses.min()) / temperature) + 1e-300
    picks = rng.choice(len(ids), size=k, replace=False, p=w / w.sum())
    return [int(ids[j]) for j in picks]


# ---------------------------------------------------------------------------
# Early-stopping gates


def median_gate(early_losses: Sequence[float], candidate: float) -> bool:
    """Level 3: True if the child should stop after its first iteration.

    The comparison is strict (equality continues) against the median of the
    other children's early losses; an even count uses the mean of the two
    middle values. An empty ledger always continues.
    """
    if not early_losses:
        return False
    return candidate > median(early_losses)


def convergence_gate(best_seen: Sequence[float], threshold: float, window: int) -> bool:
    """Level 1: True to halt the run once the mean per-generation improvement
    of the best-seen validation loss over the window is slower than threshold."""
    if len(best_seen) < window + 1:
        return False
    diffs = np.diff(np.asarray(best_seen[-(window + 1):], dtype=float))
    return bool(diffs.mean() > -threshold)


def satisfaction_gate(
    child_val: float, previous_losses: Sequence[float], quantile: float
) -> bool:
    """Level 2: True to end the generation once a child reaches the given
    quantile of the previous generation's losses. Inert at generation 0."""
    if len(previous_losses) == 0:
        return False
    threshold = float(np.quantile(np.asarray(previous_losses, dtype=float), quantile, method="lower"))
    return child_val <= threshold


def schedule_children_for_level3(
    plan: GenerationPlan, ranked_parents: Sequence[int]
) -> list[tuple[int, int]]:
    """Evaluation order (parent_id, slot): the best parent's children first,
    each parent's own children in creation order. Deliberate best-first
    ordering keeps the early-loss median high, increasing level-3 stops."""
    slots = []
    for rank, pid in enumerate(ranked_parents):
        for s in range(plan.children_per_parent[rank]):
            slots.append((pid, s))
    return slots


# ---------------------------------------------------------------------------
# Dynamic c


@dataclass(frozen=True)
class DynamicCState:
    mean: float
    std: float
    last_best_c: float


def sample_dynamic_c(
    state: DynamicCState, n_half: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Two independent Gaussian draws, clamped so each half plans sensibly."""
    lo, hi = 1.0 / n_half, float(n_half)
    c_a = float(np.clip(rng.normal(state.mean, state.std), lo, hi))
    c_b = float(np.clip(rng.normal(state.mean, state.std), lo, hi))
    return c_a, c_b


def update_dynamic_c(
    state: DynamicCState, winner: float, cfg: DynamicC, n: int
) -> DynamicCState:
    """Move the mean to the winning c; halve the std if the winner was near the
    old mean, double it if far outside, clamped to [std_min, n]."""
    deviation = abs(winner - state.mean)
    std = state.std
    if deviation < cfg.near_fraction * std:
        std = std / 2.0
    elif deviation > cfg.far_fraction * std:
        std = std * 2.0
    std = float(min(max(std, cfg.std_min), n))
    return DynamicCState(mean=winner, std=std, last_best_c=winner)


# ---------------------------------------------------------------------------
# Results


@dataclass(frozen=True)
class CurvePoint:
    generation: int
    epochs_consumed: int
    best_seen_val: float
    best_seen_test: float
    wall_ms: float = 0.0


@dataclass
class RunResult:
    best_agent: int
    best_schedule: list[HpVector]
    curves: list[CurvePoint]
    total_epochs: int
    transfer_ledger: list[int]
    tree: GenealogyTree
    dynamic_c_trace: list[dict] | None = None

    @property
    def final_best_val(self) -> float:
        return self.curves[-1].best_seen_val

    @property
    def final_best_test(self) -> float:
        return self.curves[-1].best_seen_test


class _EarlyLedger:
    """First-iteration losses of the running generation, behind a lock."""

    def __init__(self):
        self.losses: list[float] = []
        self._lock = threading.Lock()

    def check_and_add(self, loss: float) -> bool:
        with self._lock:
            stop = median_gate(self.losses, loss)
            self.losses.append(loss)
            return stop


def _train_child(
    trainer: Trainer, state, hp_named: dict, t_g: int, early: _EarlyLedger | None
):
    """One child's training: early-evaluate after the first iteration when the
    level-3 gate is active (inert if t_g == 1), else train through."""
    state = trainer.step(state, hp_named)
    if early is not None and t_g > 1:
        val, test = trainer.evaluate(state)
        if early.check_and_add(val):
            return state, val, test, 1, True
    if t_g > 1:
        state = trainer.step_many(state, hp_named, t_g - 1)
    val, test = trainer.evaluate(state)
    return state, val, test, t_g, False


# ---------------------------------------------------------------------------
# The run itself


def run(
    config: RunConfig,
    space: SearchSpace,
    trainer: Trainer,
    *,
    progress: ProgressFn | None = None,
    history_probe: HistoryProbe | None = None,
    parallelism: int = 1,
) -> RunResult:
    """Execute the full generation loop and return the best agent, its
    hyperparameter schedule, best-seen curves, and the transfer ledger."""
    validate_config(config)
    es = config.early_stop
    rng_search = search_stream(config.seed)
    rng_algo = np.random.default_rng(derive_seed(config.seed, STREAM_ALGO))
    gate3 = es.level3 and config.t_g > 1

    tree = GenealogyTree()
    lock = threading.Lock()  # guards tree appends, states, and counters
    states: dict[int, object] = {}
    curves: list[CurvePoint] = []
    ledger: list[int] = []
    best_seen: list[float] = []
    totals = {"epochs": 0}
    best = {"val": math.inf, "test": math.inf}

    def note_child(val: float, test: float) -> None:
        if val < best["val"]:
            best["val"] = val
            best["test"] = test

    # -- generation 0: every lineage starts fresh, sharing one growing history
    t_start = time.perf_counter()
    shared: list[Observation] = []
    early = _EarlyLedger() if gate3 else None
    for k in range(config.n):
        if history_probe is not None:
            history_probe(0, None, list(shared))
        hp = suggest(config.searcher, space, shared, rng_search)
        state = trainer.init(init_seed(config.seed, k))
        state, val, test, epochs, stopped = _train_child(
            trainer, state, space.to_dict(hp), config.t_g, early
        )
        cid = tree.record_child(None, 0, hp, val, test, epochs, stopped)
        states[cid] = state
        shared.append(Observation(hp, val))
        totals["epochs"] += epochs
        note_child(val, test)
    prev_ids = list(range(config.n))
    ledger.append(1)  # the initial model
    best_seen.append(best["val"])
    curves.append(
        CurvePoint(0, totals["epochs"], best["val"], best["test"],
                   (time.perf_counter() - t_start) * 1000.0)
    )
    if progress is not None:
        progress(0, best["val"], best["test"], totals["epochs"])

    dyn_cfg = config.c if isinstance(config.c, DynamicC) else None
    dyn_state = (
        DynamicCState(dyn_cfg.initial_mean, dyn_cfg.initial_std, dyn_cfg.initial_mean)
        if dyn_cfg
        else None
    )
    dyn_trace: list[dict] | None = [] if dyn_cfg else None

    for t in range(1, config.t_max):
        if es.level1_threshold is not None and convergence_gate(
            best_seen, es.level1_threshold, es.level1_window
        ):
            break
        t_start = time.perf_counter()
        prev_results = [(i, tree.get(i).val_loss) for i in prev_ids]
        prev_losses = [v for _, v in prev_results]

        # One group under fixed c, two independently planned halves under
        # dynamic c (each half selects its parents from the full ranking).
        groups: list[tuple[str, int, list[int]]] = []
        if dyn_cfg is None:
            plan = plan_generation(config.n, config.c.c)
            ranked = select_parents(
                prev_results, plan.parents, config.selection_temperature, rng_algo
            )
            groups.append(("", config.n, ranked))
            c_pair = None
        else:
            n_a = config.n // 2
            n_b = config.n - n_a
            c_a, c_b = sample_dynamic_c(dyn_state, n_a, rng_algo)
            for label, n_half, c_half in (("a", n_a, c_a), ("b", n_b, c_b)):
                plan = plan_generation(n_half, c_half)
                ranked = select_parents(
                    prev_results, plan.parents, config.selection_temperature, rng_algo
                )
                groups.append((label, n_half, ranked))
            c_pair = (c_a, c_b)

        parents_union: list[int] = []
        for _, _, ranked in groups:
            for pid in ranked:
                if pid not in parents_union:
                    parents_union.append(pid)
        tree.set_parents(t, parents_union)
        ledger.append(len(parents_union))

        early = _EarlyLedger() if gate3 else None
        within: dict[int, list[Observation]] = {pid: [] for pid in parents_union}
        gen0_seed = (
            shared
            if (t == 1 and config.history_mode == "sibling_only" and config.seed_gen0_history)
            else None
        )
        stop_generation = threading.Event()
        recorded: list[int] = []
        group_best: dict[str, float] = {}

        def run_parent(pid: int, count: int, rng: np.random.Generator, label: str) -> None:
            parent_state = states[pid]
            for _ in range(count):
                if stop_generation.is_set():
                    return
                with lock:
                    history = tree.lineage_history(pid, config.history_mode, within[pid])
                if gen0_seed is not None:
                    history = list(gen0_seed) + history
                if history_probe is not None:
                    history_probe(t, pid, list(history))
                hp = suggest(config.searcher, space, history, rng)
                child = trainer.fork(parent_state)
                child, val, test, epochs, stopped = _train_child(
                    trainer, child, space.to_dict(hp), config.t_g, early
                )
                with lock:
                    cid = tree.record_child(pid, t, hp, val, test, epochs, stopped)
                    states[cid] = child
                    within[pid].append(Observation(hp, val))
                    recorded.append(cid)
                    totals["epochs"] += epochs
                    note_child(val, test)
                    if label not in group_best or val < group_best[label]:
                        group_best[label] = val
                if es.level2_quantile is not None and satisfaction_gate(
                    val, prev_losses, es.level2_quantile
                ):
                    stop_generation.set()
                    return

        for label, n_half, ranked in groups:
            counts = _split_children(n_half, len(ranked))
            if parallelism <= 1:
                for rank, pid in enumerate(ranked):
                    if stop_generation.is_set():
                        break
                    run_parent(pid, counts[rank], rng_search, label)
            else:
                rngs = rng_search.spawn(len(ranked))
                with ThreadPoolExecutor(max_workers=parallelism) as pool:
                    futures = [
                        pool.submit(run_parent, pid, counts[rank], rngs[rank], label)
                        for rank, pid in enumerate(ranked)
                    ]
                    for f in futures:
                        f.result()

        if dyn_cfg is not None:
            c_a, c_b = c_pair
            best_a = group_best.get("a", math.inf)
            best_b = group_best.get("b", math.inf)
            winner = c_a if best_a <= best_b else c_b
            dyn_state = update_dynamic_c(dyn_state, winner, dyn_cfg, config.n)
            dyn_trace.append(
                {
                    "generation": t,
                    "c_a": c_a,
                    "c_b": c_b,
                    "winner": winner,
                    "mean": dyn_state.mean,
                    "std": dyn_state.std,
                }
            )

        for pid in prev_ids:
            states.pop(pid, None)
        prev_ids = recorded
        best_seen.append(best["val"])
        curves.append(
            CurvePoint(t, totals["epochs"], best["val"], best["test"],
                       (time.perf_counter() - t_start) * 1000.0)
        )
        if progress is not None:
            progress(t, best["val"], best["test"], totals["epochs"])

    records = tree.records
    best_agent = min(records, key=lambda r: (r.val_loss, r.id)).id
    return RunResult(
        best_agent=best_agent,
        best_schedule=tree.schedule(best_agent),
        curves=curves,
        total_epochs=totals["epochs"],
        transfer_ledger=ledger,
        tree=tree,
        dynamic_c_trace=dyn_trace,
    )
