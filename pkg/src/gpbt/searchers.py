"""Search functions mapping an observation history to the next hyperparameter proposal.

Four kinds are provided: random, TPE (kernel density ratio), a diagonal CMA
simplification, and GP-UCB (lower confidence bound, losses are minimized).
Every searcher is a pure function of (config, space, history, rng); proposals
are produced in unit coordinates, clipped to [0, 1] and mapped back to native
units, so every suggestion validates against the space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .space import HpVector, SearchSpace

SEARCHER_KINDS = ("random", "tpe", "cma", "gp_ucb")

# TPE bandwidth floor (unit space) and density floor for the ratio.
TPE_BANDWIDTH_FLOOR = 0.05
TPE_DENSITY_FLOOR = 1e-12

# Diagonal-CMA std clamp in unit space.
CMA_SIGMA_MIN = 0.01
CMA_SIGMA_MAX = 0.5

# GP-UCB internals: candidate pool size, squared-exponential lengthscale in
# unit space, observation-noise variance relative to (standardized) loss
# variance, and the jitter used on a singular kernel matrix.
GP_POOL = 256
GP_LENGTHSCALE = 0.2
GP_NOISE_VAR = 1e-4
GP_JITTER = 1e-6


@dataclass(frozen=True)
class Observation:
    """One evaluated hyperparameter vector; loss is minimized."""

    hp: HpVector
    loss: float

    def __post_init__(self):
        if not math.isfinite(self.loss):
            raise ValueError("observation loss must be finite")


History = Sequence[Observation]


@dataclass(frozen=True)
class SearcherConfig:
    kind: str = "tpe"
    seed: int = 0
    gamma: float = 0.25   # tpe: fraction of history routed to the good density
    pool: int = 24        # tpe: candidates drawn from the good density
    startup: int = 4      # tpe: observations required before modelling
    window: int = 12      # cma: most-recent observations used for the update
    beta_delta: float = 0.1  # gp_ucb: confidence parameter delta

    def __post_init__(self):
        if self.kind not in SEARCHER_KINDS:
            raise ValueError(f"unknown searcher kind {self.kind!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.pool < 1:
            raise ValueError("pool must be >= 1")
        if self.startup < 1:
            raise ValueError("startup must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 < self.beta_delta < 1.0:
            raise ValueError("beta_delta must be in (0, 1)")

    @classmethod
    def from_config(cls, entry: dict) -> "SearcherConfig":
        known = {"kind", "seed", "gamma", "pool", "startup", "window", "beta_delta"}
        unknown = set(entry) - known
        if unknown:
            raise ValueError(f"unknown searcher fields: {sorted(unknown)}")
        return cls(**entry)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "gamma": self.gamma,
            "pool": self.pool,
            "startup": self.startup,
            "window": self.window,
            "beta_delta": self.beta_delta,
        }


def _check_history(space: SearchSpace, history: History) -> None:
    for obs in history:
        if len(obs.hp) != space.dim:
            raise ValueError(
                f"history observation has {len(obs.hp)} values, space has {space.dim}"
            )


def suggest(
    config: SearcherConfig,
    space: SearchSpace,
    history: History,
    rng: np.random.Generator,
) -> HpVector:
    """Propose the next hyperparameter vector given past (hp, loss) pairs."""
    _check_history(space, history)
    if config.kind == "random":
        return space.sample_uniform(rng)
    if config.kind == "tpe":
        return _tpe_suggest(config, space, history, rng)
    if config.kind == "cma":
        return _cma_suggest(config, space, history, rng)
    beta_t = gp_ucb_beta(space.dim, len(history) + 1, config.beta_delta)
    return gp_ucb_suggest(history, space, beta_t, rng)


# ---------------------------------------------------------------------------
# TPE


def tpe_split(history: History, gamma: float) -> tuple[list[Observation], list[Observation]]:
    """Split history into (good, bad): ceil(gamma*n) lowest losses go to good.

    Ties are broken by insertion order, earlier observations entering good first.
    """
    if not history:
        raise ValueError("tpe_split needs a non-empty history")
    n_good = math.ceil(gamma * len(history))
    order = sorted(range(len(history)), key=lambda i: (history[i].loss, i))
    good_idx = set(order[:n_good])
    good = [history[i] for i in range(len(history)) if i in good_idx]
    bad = [history[i] for i in range(len(history)) if i not in good_idx]
    return good, bad


def tpe_bandwidths(points: np.ndarray) -> np.ndarray:
    """Per-dimension Silverman bandwidth with a floor, in unit space."""
    n = points.shape[0]
    std = points.std(axis=0)
    return np.maximum(1.06 * std * n ** (-0.2), TPE_BANDWIDTH_FLOOR)


def _kde(x: np.ndarray, centers: np.ndarray, bw: np.ndarray) -> float:
    """Kernel density with diagonal Gaussian kernels plus one uniform-prior
    component weighted like an extra observation, so an estimate over zero
    points is exactly the uniform density 1 on the cube."""
    if centers.shape[0] == 0:
        return 1.0
    z = (x[None, :] - centers) / bw[None, :]
    norm = np.prod(bw) * (2.0 * math.pi) ** (centers.shape[1] / 2.0)
    kernels = float(np.exp(-0.5 * (z * z).sum(axis=1)).sum() / norm)
    return (1.0 + kernels) / (centers.shape[0] + 1)


def tpe_score(
    candidate: np.ndarray,
    good: np.ndarray,
    bad: np.ndarray,
    bandwidths: tuple[np.ndarray, np.ndarray | None],
) -> float:
    """Density ratio l(x)/g(x) over unit-space point sets.

    `bandwidths` is the (good, bad) pair; the bad entry may be None when bad
    is empty, in which case g degrades to the uniform density 1 on the cube.
    """
    good_bw, bad_bw = bandwidths
    l = _kde(candidate, good, good_bw)
    if bad.shape[0] == 0:
        g = 1.0
    else:
        g = _kde(candidate, bad, bad_bw)
    return l / max(g, TPE_DENSITY_FLOOR)


def _tpe_suggest(
    config: SearcherConfig, space: SearchSpace, history: History, rng: np.random.Generator
) -> HpVector:
    if len(history) < config.startup:
        return space.sample_uniform(rng)
    good, bad = tpe_split(history, config.gamma)
    good_u = np.array([space.to_unit(o.hp) for o in good])
    bad_u = np.array([space.to_unit(o.hp) for o in bad]).reshape(len(bad), space.dim)
    good_bw = tpe_bandwidths(good_u)
    bad_bw = tpe_bandwidths(bad_u) if len(bad) else None

    # Draw candidates from l itself: each of the good kernels and the uniform
    # prior component are equally likely sources.
    component = rng.integers(0, len(good) + 1, size=config.pool)
    jitter = rng.standard_normal((config.pool, space.dim)) * good_bw
    uniform = rng.random((config.pool, space.dim))
    candidates = np.where(
        (component < len(good))[:, None],
        good_u[np.minimum(component, len(good) - 1)] + jitter,
        uniform,
    )
    candidates = np.clip(candidates, 0.0, 1.0)
    scores = [tpe_score(c, good_u, bad_u, (good_bw, bad_bw)) for c in candidates]
    best = int(np.argmax(scores))
    return space.from_unit(candidates[best])


# ---------------------------------------------------------------------------
# Diagonal CMA


@dataclass(frozen=True)
class CmaState:
    mean: np.ndarray   # unit space
    sigma: np.ndarray  # per-dimension std, unit space


def cma_update(
    state: CmaState | None, history_tail: History, space: SearchSpace
) -> CmaState | None:
    """Recompute the sampling state from the most recent observation window.

    The state is derived purely from the window (no carried momentum) so that
    histories remain the single source of truth. Windows smaller than 4
    return None, meaning: fall back to uniform sampling.
    """
    if len(history_tail) < 4:
        return None
    pts = np.array([space.to_unit(o.hp) for o in history_tail])
    losses = np.array([o.loss for o in history_tail])
    # At least two observations: the std of a single point is degenerate and
    # would pin sigma to the clamp floor before any search has happened.
    k = max(2, math.ceil(len(history_tail) / 4))
    top = np.argsort(losses, kind="stable")[:k]
    top_pts = pts[top]
    weights = np.arange(k, 0, -1, dtype=float)  # best observation heaviest
    weights /= weights.sum()
    mean = weights @ top_pts
    sigma = np.clip(top_pts.std(axis=0), CMA_SIGMA_MIN, CMA_SIGMA_MAX)
    return CmaState(mean=mean, sigma=sigma)


def _cma_suggest(
    config: SearcherConfig, space: SearchSpace, history: History, rng: np.random.Generator
) -> HpVector:
    # Sample uniformly until a full window exists: the window size doubles as
    # the exploration budget, preventing premature convergence on the first
    # few draws.
    if len(history) < config.window:
        return space.sample_uniform(rng)
    tail = list(history)[-config.window:]
    state = cma_update(None, tail, space)
    if state is None:
        return space.sample_uniform(rng)
    u = state.mean + state.sigma * rng.standard_normal(space.dim)
    return space.from_unit(np.clip(u, 0.0, 1.0))


# ---------------------------------------------------------------------------
# GP-UCB


def gp_ucb_beta(dim: int, t: int, delta: float) -> float:
    """Confidence scaling beta_t = 2 log(d t^2 pi^2 / (6 delta))."""
    return 2.0 * math.log(dim * t * t * math.pi * math.pi / (6.0 * delta))


def _rbf(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-0.5 * d2 / (GP_LENGTHSCALE * GP_LENGTHSCALE))


def gp_ucb_suggest(
    history: History,
    space: SearchSpace,
    beta_t: float,
    rng: np.random.Generator,
) -> HpVector:
    """Minimize the lower confidence bound of a GP fit on unit-space inputs.

    Losses are standardized before the fit; candidates are a scrambled Sobol
    pool plus the incumbent best. A singular kernel matrix gets one jitter
    retry, then the call degrades to a uniform sample.
    """
    if not history:
        return space.sample_uniform(rng)
    x = np.array([space.to_unit(o.hp) for o in history])
    y = np.array([o.loss for o in history])
    std = y.std()
    y_s = (y - y.mean()) / (std if std > 0 else 1.0)

    k = _rbf(x, x) + GP_NOISE_VAR * np.eye(len(x))
    chol = None
    for attempt in range(2):
        try:
            chol = np.linalg.cholesky(k)
            break
        except np.linalg.LinAlgError:
            k = k + GP_JITTER * np.eye(len(x))
    if chol is None:
        return space.sample_uniform(rng)

    sobol = qmc.Sobol(space.dim, scramble=True, seed=int(rng.integers(2**31)))
    candidates = sobol.random(GP_POOL)
    incumbent = x[int(np.argmin(y))]
    candidates = np.vstack([candidates, incumbent])

    k_star = _rbf(candidates, x)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y_s))
    mu = k_star @ alpha
    v = np.linalg.solve(chol, k_star.T)
    var = np.maximum(1.0 - (v * v).sum(axis=0), 0.0)  # prior variance is 1
    lcb = mu - math.sqrt(beta_t) * np.sqrt(var)
    best = int(np.argmin(lcb))
    return space.from_unit(np.clip(candidates[best], 0.0, 1.0))
