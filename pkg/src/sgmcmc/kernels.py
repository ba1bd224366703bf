"""Single-chain transition kernels, schedules and random-stream plumbing.

Random numbers follow one fixed discipline so results never depend on how
chains are batched.  Every chain owns a generator derived from
``SeedSequence(seed, spawn_key=(replication, 0, chain))`` and each step reads,
in this order, ``d`` standard normals for the Langevin kick, ``d`` more for the
gradient perturbation (when gradient noise is enabled) and then the energy
perturbation (when energy noise is enabled).  Coordinator randomness such as
swap uniforms comes from ``spawn_key=(replication, 1)``.

The vectorised samplers pre-draw these variates in blocks.  For Gaussian noise
a block of ``K`` steps is a single ``(K, width)`` draw, which consumes the
stream exactly as ``K`` separate steps would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .targets import NoiseSpec, TargetModel

__all__ = [
    "DIVERGENCE_LIMIT",
    "BlockNoise",
    "ChainState",
    "DivergenceError",
    "Schedule",
    "apply_schedule",
    "check_finite",
    "chain_generator",
    "coordinator_generator",
    "SGLDTrace",
    "sgd_step",
    "sgld_run",
    "sgld_step",
]

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    """A chain left the finite region; carries the offending iteration."""

    def __init__(self, iteration: int, detail: str = ""):
        self.iteration = int(iteration)
        msg = f"sampler diverged at iteration {self.iteration}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


def check_finite(x: np.ndarray, iteration: int) -> None:
    """Raise :class:`DivergenceError` if any coordinate is non-finite or huge."""
    # a NaN fails the comparison, so one reduction covers both cases
    if not np.abs(x).max(initial=0.0) <= DIVERGENCE_LIMIT:
        bad = "non-finite value" if not np.all(np.isfinite(x)) else f"|x| > {DIVERGENCE_LIMIT:g}"
        raise DivergenceError(iteration, bad)


def chain_generator(seed: int, replication: int = 0, chain: int = 0) -> np.random.Generator:
    """Private stream for one chain of one replication."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication, 0, chain)))


def coordinator_generator(seed: int, replication: int = 0) -> np.random.Generator:
    """Stream for swap decisions and other barrier-time randomness."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication, 1)))


# ---------------------------------------------------------------------------
# Chain state and schedules
# ---------------------------------------------------------------------------


@dataclass
class ChainState:
    """One replica: position, temperature, learning rate and private stream."""

    x: np.ndarray
    temperature: float
    learning_rate: float
    rng: np.random.Generator
    cached_noisy_energy: float = math.nan
    chain_index: int = 1
    iteration: int = 0

    def __post_init__(self) -> None:
        self.x = np.array(self.x, dtype=float).reshape(-1)
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class Schedule:
    """Learning-rate or temperature schedule.

    * ``constant``: identity.
    * ``decay``: multiply the base rate by ``factor`` once per epoch after
      ``start_epoch`` (``k`` counts epochs here).
    * ``anneal``: ``tau_k = tau0 / rate**k``.
    * ``cyclic``: cosine cycles of the learning rate starting from ``eta0``
      over ``total`` iterations split into ``cycles`` equal cycles.
    """

    kind: str = "constant"
    factor: float = 1.0
    start_epoch: int = 0
    rate: float = 1.0
    cycles: int = 1
    eta0: float = 0.0
    total: int = 1
    base_lr: Optional[float] = None
    base_tau: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "decay", "anneal", "cyclic"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0 < self.factor <= 1:
            raise ValueError("decay factor must lie in (0, 1]")
        if self.cycles < 1:
            raise ValueError("cycles must be at least 1")
        if self.kind == "anneal" and not self.rate > 0:
            raise ValueError("annealing rate must be positive")


def apply_schedule(schedule: Schedule, k: int, state: ChainState) -> ChainState:
    """Return a copy of ``state`` with the rate or temperature for step ``k``."""
    if k < 0:
        raise ValueError("iteration must be non-negative")
    if schedule.kind == "constant":
        return state
    if schedule.kind == "decay":
        base = state.learning_rate if schedule.base_lr is None else schedule.base_lr
        n = max(0, k - schedule.start_epoch)
        return replace(state, learning_rate=base * schedule.factor**n)
    if schedule.kind == "anneal":
        base = state.temperature if schedule.base_tau is None else schedule.base_tau
        return replace(state, temperature=base / schedule.rate**k)
    period = max(1, math.ceil(schedule.total / schedule.cycles))
    phase = (k % period) / period
    lr = 0.5 * schedule.eta0 * (math.cos(math.pi * phase) + 1.0)
    return replace(state, learning_rate=max(lr, np.finfo(float).tiny))


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def _draw_step(state: ChainState, noise: NoiseSpec):
    d = state.x.size
    rng = state.rng
    kick = rng.standard_normal(d)
    gnoise = rng.standard_normal(d) * noise.gradient_std if noise.has_gradient_noise else None
    return kick, gnoise


def _refresh_energy(model: TargetModel, noise: NoiseSpec, x: np.ndarray, rng) -> float:
    u = float(model.energy(x))
    if noise.has_energy_noise:
        u += float(noise.draw_energy(rng))
    return u


def sgld_step(
    state: ChainState,
    model: TargetModel,
    noise: NoiseSpec,
    multiplier: float = 1.0,
) -> ChainState:
    """One (possibly multiplier-scaled) SGLD transition.

    ``x' = x - eta * multiplier * g(x) + sqrt(2 eta tau) e`` where ``g`` is the
    noisy gradient at the current point.  The cached noisy energy is refreshed
    at ``x'`` with the energy perturbation drawn last in the step.
    """
    if not math.isfinite(multiplier):
        raise ValueError("gradient multiplier must be finite")
    kick, gnoise = _draw_step(state, noise)
    g = model.gradient(state.x)
    if gnoise is not None:
        g = g + gnoise
    eta, tau = state.learning_rate, state.temperature
    x_new = state.x - eta * multiplier * g + math.sqrt(2.0 * eta * tau) * kick
    k = state.iteration + 1
    check_finite(x_new, k)
    u = _refresh_energy(model, noise, x_new, state.rng)
    return replace(state, x=x_new, cached_noisy_energy=u, iteration=k)


def sgd_step(
    state: ChainState,
    model: TargetModel,
    noise: NoiseSpec,
    inject_gaussian: Optional[tuple[float, float]] = None,
) -> ChainState:
    """Plain stochastic gradient step, optionally with injected Gaussian noise.

    ``inject_gaussian=(eta1, tau1)`` adds ``N(0, 2 eta1 tau1 I)``.  The same
    ``d`` kick variates are consumed whether or not injection is requested, so
    the stream stays aligned with :func:`sgld_step`.
    """
    kick, gnoise = _draw_step(state, noise)
    g = model.gradient(state.x)
    if gnoise is not None:
        g = g + gnoise
    x_new = state.x - state.learning_rate * g
    if inject_gaussian is not None:
        eta1, tau1 = inject_gaussian
        if tau1 > 0:
            x_new = x_new + math.sqrt(2.0 * eta1 * tau1) * kick
    k = state.iteration + 1
    check_finite(x_new, k)
    u = _refresh_energy(model, noise, x_new, state.rng)
    return replace(state, x=x_new, cached_noisy_energy=u, iteration=k)


# ---------------------------------------------------------------------------
# Block noise for vectorised samplers
# ---------------------------------------------------------------------------


class BlockNoise:
    """Per-stream variates for many chains, drawn ``block`` steps at a time.

    ``generators`` is a sequence of generators, one per chain (flattened over
    replications).  :meth:`next` returns ``(kick, gnoise, enoise)`` with shapes
    ``(S, d)``, ``(S, d)`` or ``None``, and ``(S,)`` or ``None``.
    """

    def __init__(
        self,
        generators: Sequence[np.random.Generator],
        dim: int,
        noise: NoiseSpec,
        block: int = 512,
    ):
        self.gens = list(generators)
        self.dim = int(dim)
        self.noise = noise
        self.block = int(block)
        self._gw = self.dim if noise.has_gradient_noise else 0
        self._gauss_energy = noise.energy_noise == "gaussian"
        self._t_energy = noise.energy_noise == "student_t"
        self._width = self.dim + self._gw + (1 if self._gauss_energy else 0)
        self._pos = self.block
        self._buf = None
        self._tbuf = None

    def _refill(self) -> None:
        K, S = self.block, len(self.gens)
        buf = np.empty((K, S, self._width))
        tbuf = np.empty((K, S)) if self._t_energy else None
        for s, g in enumerate(self.gens):
            buf[:, s, :] = g.standard_normal((K, self._width))
            if tbuf is not None:
                tbuf[:, s] = g.standard_t(self.noise.dof, K)
        d, gw = self.dim, self._gw
        self._kick = buf[:, :, :d]
        self._gn = buf[:, :, d : d + gw] * self.noise.gradient_std if gw else None
        if self._gauss_energy:
            self._en = buf[:, :, d + gw] * self.noise.energy_scale
        elif tbuf is not None:
            self._en = tbuf * self.noise.energy_scale
        else:
            self._en = None
        self._pos = 0

    def next(self):
        if self._pos >= self.block:
            self._refill()
        i = self._pos
        self._pos += 1
        return (
            self._kick[i],
            None if self._gn is None else self._gn[i],
            None if self._en is None else self._en[i],
        )


# ---------------------------------------------------------------------------
# Vectorised plain SGLD baseline
# ---------------------------------------------------------------------------


@dataclass
class SGLDTrace:
    """Output of :func:`sgld_run`."""

    x: np.ndarray  # (R, d) final positions
    energies: np.ndarray  # (n_keep, R) exact energies of kept samples
    hitting: np.ndarray  # (R,) first iteration at or below the threshold, -1 if never
    iterations: int


def sgld_run(
    model: TargetModel,
    noise: NoiseSpec,
    lr: float,
    tau: float,
    n_iter: int,
    replications: int = 1,
    seed: int = 0,
    x0=None,
    init_box: Optional[tuple[float, float]] = None,
    stop_threshold: Optional[float] = None,
    thin: int = 0,
    block: int = 1024,
) -> SGLDTrace:
    """Independent SGLD chains, one per replication, on chain stream 0.

    Initial points follow the same convention as the contour samplers, so
    an SGLD baseline and a contour run with equal seeds start together.
    """
    from .contour import initial_points

    if n_iter < 1 or replications < 1 or not lr > 0 or tau < 0:
        raise ValueError("invalid SGLD settings")
    R, d = replications, model.domain_dim
    X = initial_points(d, R, 1, seed, x0, init_box)[:, 0, :]
    bn = BlockNoise([chain_generator(seed, r, 0) for r in range(R)], d, noise, block)
    step = math.sqrt(2.0 * lr * tau)
    n_keep = n_iter // thin if thin else 0
    energies = np.empty((n_keep, R))
    hitting = np.full(R, -1, dtype=np.int64)
    if stop_threshold is not None:
        hitting[model.energy(X) <= stop_threshold] = 0
    k = 0
    for k in range(1, n_iter + 1):
        kick, gn, _ = bn.next()
        g = model.gradient(X)
        if gn is not None:
            g = g + gn
        X = X - lr * g + step * kick
        check_finite(X, k)
        if n_keep or stop_threshold is not None:
            U = model.energy(X)
            if n_keep and k % thin == 0:
                energies[k // thin - 1] = U
            if stop_threshold is not None:
                new = (hitting < 0) & (U <= stop_threshold)
                if new.any():
                    hitting[new] = k
                    if (hitting >= 0).all():
                        break
    if n_keep:
        energies = energies[: k // thin]
    return SGLDTrace(X, energies, hitting, k)
