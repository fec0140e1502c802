"""Training-function contract, synthetic trainers, and a brute-force schedule oracle.

Trainers advance an opaque state one learning iteration at a time under a
named hyperparameter mapping. The synthetic trainers are built around a noisy
quadratic whose expected-loss recursion is exact:

    theta_i <- (1 - r*h_i) * theta_i + r*sigma*xi,   xi ~ N(0, 1)

so E[theta_i^2] obeys  v_i <- (1 - r*h_i)^2 * v_i + (r*sigma)^2.  With
sigma > 0 the stationary loss floor grows with r while the transient decays
faster with r, which is exactly the tension that makes a decaying rate
schedule strictly better than any constant rate.

Only the dimension named "lr" drives the dynamics; all other dimensions are
inert, so realistic multi-dimensional spaces run unchanged.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

LOSS_CLAMP = 1e12
THETA_CLIP = 1e9  # overflow guard for divergent rates; losses stay finite
TEST_GAP_SCALE = 0.05
_TEST_GAP_TAG = 7701
_THETA_TAG = 4242

TRAINER_KINDS = ("noisy_quadratic", "phase_surrogate", "weight_sensitive", "external")


@dataclass(frozen=True)
class TrainerSpec:
    kind: str = "noisy_quadratic"
    dim: int = 4
    curvatures: tuple[float, ...] | None = None  # default: 1.0 per coordinate
    noise: float = 0.0
    seed: int = 0
    lr_name: str = "lr"
    r_max: float = 1.0  # weight_sensitive: inverted response is r_max - r
    command: tuple[str, ...] = ()  # external trainer process
    timeout: float = 300.0

    def __post_init__(self):
        if self.kind not in TRAINER_KINDS:
            raise ValueError(f"unknown trainer kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.curvatures is not None and len(self.curvatures) != self.dim:
            raise ValueError("curvatures length must equal dim")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.kind == "external" and not self.command:
            raise ValueError("external trainer needs a command")

    @property
    def h(self) -> np.ndarray:
        if self.curvatures is None:
            return np.ones(self.dim)
        return np.asarray(self.curvatures, dtype=float)

    @classmethod
    def from_config(cls, entry: dict) -> "TrainerSpec":
        entry = dict(entry)
        if "curvatures" in entry and entry["curvatures"] is not None:
            entry["curvatures"] = tuple(float(x) for x in entry["curvatures"])
        if "command" in entry:
            entry["command"] = tuple(entry["command"])
        return cls(**entry)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "curvatures": None if self.curvatures is None else list(self.curvatures),
            "noise": self.noise,
            "seed": self.seed,
            "lr_name": self.lr_name,
            "r_max": self.r_max,
            "command": list(self.command),
            "timeout": self.timeout,
        }


class Trainer(Protocol):
    """What the generation loop needs from any trainer backend."""

    def init(self, seed: int): ...
    def step(self, state, hp: Mapping[str, float]): ...
    def step_many(self, state, hp: Mapping[str, float], iters: int): ...
    def evaluate(self, state) -> tuple[float, float]: ...
    def fork(self, state): ...


def _copy_generator(rng: np.random.Generator) -> np.random.Generator:
    fresh = np.random.Generator(type(rng.bit_generator)())
    fresh.bit_generator.state = rng.bit_generator.state
    return fresh


def _test_gap(spec_seed: int, steps: int, val: float) -> float:
    # Fixed-seed multiplicative perturbation modelling the val/test gap;
    # a fresh generator keeps evaluate pure (no stream is advanced).
    z = np.random.default_rng([spec_seed, _TEST_GAP_TAG, steps]).standard_normal()
    z = float(np.clip(z, -3.0, 3.0))
    return min(val * (1.0 + TEST_GAP_SCALE * z), LOSS_CLAMP)


# ---------------------------------------------------------------------------
# Noisy quadratic (and its weight-sensitive variant)


@dataclass
class QuadState:
    theta: np.ndarray
    steps: int
    rng: np.random.Generator
    latent: int = 1  # hidden response regime, only meaningful for weight_sensitive

    def as_dict(self) -> dict:
        return {
            "theta": [float(x) for x in self.theta],
            "steps": self.steps,
            "latent": self.latent,
            "bitgen": self.rng.bit_generator.state,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuadState":
        rng = np.random.default_rng(0)
        rng.bit_generator.state = data["bitgen"]
        return cls(
            theta=np.array(data["theta"], dtype=float),
            steps=int(data["steps"]),
            rng=rng,
            latent=int(data["latent"]),
        )


class NoisyQuadraticTrainer:
    """Stochastic quadratic: exact geometric decay at sigma=0, noise floor otherwise.

    All lineages start from the same initial parameter draw (fixed by the
    trainer-spec seed, the desk-scale analog of one shared initial model);
    the per-init seed only feeds the state's private noise stream.
    """

    def __init__(self, spec: TrainerSpec):
        self.spec = spec
        self.h = spec.h

    def init(self, seed: int) -> QuadState:
        theta = np.random.default_rng([self.spec.seed, _THETA_TAG]).standard_normal(self.spec.dim)
        return QuadState(theta=theta, steps=0, rng=np.random.default_rng(seed))

    def _rate(self, state: QuadState, hp: Mapping[str, float]) -> float:
        return float(hp.get(self.spec.lr_name, 0.0))

    def step(self, state: QuadState, hp: Mapping[str, float]) -> QuadState:
        r = self._rate(state, hp)
        xi = state.rng.standard_normal(self.spec.dim)
        theta = (1.0 - r * self.h) * state.theta + r * self.spec.noise * xi
        state.theta = np.clip(theta, -THETA_CLIP, THETA_CLIP)
        state.steps += 1
        return state

    def step_many(self, state: QuadState, hp: Mapping[str, float], iters: int) -> QuadState:
        for _ in range(iters):
            state = self.step(state, hp)
        return state

    def evaluate(self, state: QuadState) -> tuple[float, float]:
        val = float(min(np.sum(self.h * state.theta * state.theta), LOSS_CLAMP))
        return val, _test_gap(self.spec.seed, state.steps, val)

    def fork(self, state: QuadState) -> QuadState:
        return QuadState(
            theta=state.theta.copy(),
            steps=state.steps,
            rng=_copy_generator(state.rng),
            latent=state.latent,
        )


class WeightSensitiveTrainer(NoisyQuadraticTrainer):
    """Noisy quadratic whose rate response depends on a hidden per-lineage latent.

    The latent b in {-1, +1} is drawn once at init and inherited on fork, and
    flips the effective rate to r_max - r when b = -1: the best rate for one
    lineage is the worst for the other, so pooled observation histories mix
    two contradictory response regimes while per-lineage histories stay clean.
    """

    def init(self, seed: int) -> QuadState:
        state = super().init(seed)
        state.latent = 1 if state.rng.random() < 0.5 else -1
        return state

    def _rate(self, state: QuadState, hp: Mapping[str, float]) -> float:
        r = float(hp.get(self.spec.lr_name, 0.0))
        return r if state.latent > 0 else self.spec.r_max - r


# ---------------------------------------------------------------------------
# Phase surrogate: the expected-loss form, deterministic


@dataclass
class PhaseState:
    v: np.ndarray  # per-coordinate expected squared parameter
    steps: int

    def as_dict(self) -> dict:
        return {"v": [float(x) for x in self.v], "steps": self.steps}

    @classmethod
    def from_dict(cls, data: dict) -> "PhaseState":
        return cls(v=np.array(data["v"], dtype=float), steps=int(data["steps"]))


class PhaseSurrogateTrainer:
    """Deterministic expected-loss dynamics of the noisy quadratic.

    Starts from v_i = 1 (the expectation of a standard-normal init), so runs
    are seed-independent and exactly reproduce the closed-form recursion used
    by the schedule oracle.
    """

    def __init__(self, spec: TrainerSpec):
        self.spec = spec
        self.h = spec.h

    def init(self, seed: int) -> PhaseState:
        return PhaseState(v=np.ones(self.spec.dim), steps=0)

    def step(self, state: PhaseState, hp: Mapping[str, float]) -> PhaseState:
        r = float(hp.get(self.spec.lr_name, 0.0))
        decay = (1.0 - r * self.h) ** 2
        state.v = np.minimum(decay * state.v + (r * self.spec.noise) ** 2, THETA_CLIP**2)
        state.steps += 1
        return state

    def step_many(self, state: PhaseState, hp: Mapping[str, float], iters: int) -> PhaseState:
        for _ in range(iters):
            state = self.step(state, hp)
        return state

    def evaluate(self, state: PhaseState) -> tuple[float, float]:
        val = float(min(np.sum(self.h * state.v), LOSS_CLAMP))
        return val, _test_gap(self.spec.seed, state.steps, val)

    def fork(self, state: PhaseState) -> PhaseState:
        return PhaseState(v=state.v.copy(), steps=state.steps)


def make_trainer(spec: TrainerSpec, space=None) -> Trainer:
    if spec.kind == "noisy_quadratic":
        return NoisyQuadraticTrainer(spec)
    if spec.kind == "phase_surrogate":
        return PhaseSurrogateTrainer(spec)
    if spec.kind == "weight_sensitive":
        return WeightSensitiveTrainer(spec)
    from .external import ExternalTrainer  # lazy: spawns a process

    if space is None:
        raise ValueError("external trainer needs the search space for its handshake")
    return ExternalTrainer(spec, space)


# ---------------------------------------------------------------------------
# Closed-form expected loss and the brute-force schedule oracle


def expected_final_loss(
    spec: TrainerSpec,
    rates: Sequence[float],
    v0: np.ndarray | None = None,
) -> float:
    """Exact expected loss after applying one rate per step."""
    h = spec.h
    v = np.ones(spec.dim) if v0 is None else np.asarray(v0, dtype=float).copy()
    for r in rates:
        v = (1.0 - r * h) ** 2 * v + (r * spec.noise) ** 2
        v = np.minimum(v, THETA_CLIP**2)
    return float(min(np.sum(h * v), LOSS_CLAMP))


def expected_schedule_loss(
    spec: TrainerSpec,
    schedule: Sequence[Mapping[str, float]],
    t_g: int,
    v0: np.ndarray | None = None,
) -> float:
    """Expected loss of a per-generation hp schedule, each phase lasting t_g steps."""
    rates: list[float] = []
    for hp in schedule:
        rates.extend([float(hp.get(spec.lr_name, 0.0))] * t_g)
    return expected_final_loss(spec, rates, v0=v0)


def brute_force_schedule(
    spec: TrainerSpec,
    hp_grid: Sequence[Mapping[str, float]],
    t_max: int,
    t_g: int,
    seed: int | None = None,
    budget: int = 10**6,
) -> tuple[tuple[Mapping[str, float], ...], float]:
    """Enumerate every |grid|^t_max schedule on the expected-loss dynamics.

    With `seed` given, the starting point is the squared shared init draw of a
    spec seeded that way, instead of the distribution expectation v0 = 1.
    """
    total = len(hp_grid) ** t_max
    if total > budget:
        raise ValueError(f"{total} schedules exceed the enumeration budget {budget}")
    v0 = None
    if seed is not None:
        theta = np.random.default_rng([seed, _THETA_TAG]).standard_normal(spec.dim)
        v0 = theta * theta
    best_schedule = None
    best_loss = math.inf
    for schedule in itertools.product(hp_grid, repeat=t_max):
        loss = expected_schedule_loss(spec, schedule, t_g, v0=v0)
        if loss < best_loss:
            best_loss = loss
            best_schedule = schedule
    return best_schedule, best_loss
