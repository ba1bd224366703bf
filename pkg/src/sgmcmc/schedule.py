"""Swap scheduling for parallel tempering and round-trip accounting.

Pairs are indexed from zero: pair ``q`` couples chains ``q`` and ``q + 1``
(chains are also zero-based internally; chain 0 is the coldest).  Under the
windowed deterministic even/odd scheme a pair is eligible at iteration ``k``
when ``q % 2 == (k // W) % 2`` and its gate is open.  Gates open at the start
of every window and close after a successful swap, so each pair swaps at most
once per window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, MutableSequence, Optional, Sequence

import numpy as np

__all__ = [
    "DEOConfig",
    "DEOResult",
    "IndexProcessResult",
    "LadderAdaptation",
    "RoundTripLog",
    "SwapEvent",
    "SwapSchedule",
    "attempt_window_swaps",
    "deo_sgd_run",
    "deterministic_swap",
    "eligible_pairs",
    "equi_acceptance_update",
    "expected_round_trip_time",
    "geometric_ladder",
    "optimal_window",
    "simulate_index_process",
    "update_correction_buffer",
    "update_round_trips",
]

SCHEMES = ("ADJ", "SEO", "DEO", "DEO_W")


@dataclass
class SwapSchedule:
    """Which adjacent pairs may attempt a swap at a given iteration.

    ``gate_mode="window"`` keeps a gate open from the first iteration of a
    window until that pair swaps.  ``gate_mode="literal"`` re-evaluates the
    gate as ``k % W == 0`` every iteration, so swaps can only happen on the
    first iteration of each window.
    """

    scheme: str
    P: int
    W: int = 1
    gate_mode: str = "window"
    rng: Optional[np.random.Generator] = None
    gates: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.P < 2:
            raise ValueError("need at least two chains")
        if self.scheme == "DEO":
            self.W = 1
        if self.W < 1:
            raise ValueError("window size must be at least 1")
        if self.gate_mode not in ("window", "literal"):
            raise ValueError("gate_mode must be 'window' or 'literal'")
        if self.scheme == "SEO" and self.rng is None:
            self.rng = np.random.default_rng()
        self.gates = np.ones(self.P - 1, dtype=bool)
        self._window = -1
        self._seo_k = -1
        self._seo_parity = 0

    @property
    def n_pairs(self) -> int:
        return self.P - 1

    def _sync(self, k: int) -> None:
        w = k // self.W
        if w != self._window:
            self._window = w
            self.gates[:] = True

    def parity(self, k: int) -> int:
        if self.scheme == "SEO":
            if k != self._seo_k:
                self._seo_k = k
                self._seo_parity = int(self.rng.random() < 0.5)
            return self._seo_parity
        return (k // self.W) % 2

    def close(self, pair: int) -> None:
        self.gates[pair] = False


def eligible_pairs(schedule: SwapSchedule, k: int) -> list[int]:
    """Pairs allowed to attempt a swap at iteration ``k`` (ascending order).

    ADJ returns every pair; the caller attempts them one after another so a
    later pair sees the outcome of an earlier one.
    """
    if k < 0:
        raise ValueError("iteration must be non-negative")
    if schedule.scheme == "ADJ":
        return list(range(schedule.n_pairs))
    parity = schedule.parity(k)
    pairs = range(parity, schedule.n_pairs, 2)
    if schedule.scheme == "SEO":
        return list(pairs)
    if schedule.gate_mode == "literal":
        return list(pairs) if k % schedule.W == 0 else []
    schedule._sync(k)
    return [q for q in pairs if schedule.gates[q]]


@dataclass(frozen=True)
class SwapEvent:
    iteration: int
    pair: int
    accepted: bool


# ---------------------------------------------------------------------------
# Round trips
# ---------------------------------------------------------------------------


@dataclass
class RoundTripLog:
    """Tracks which particle sits at which chain and counts completed round trips.

    Particles start at the chain with the same index and all flags point up.
    A particle counts a round trip when it returns to chain 0 after touching
    chain ``P - 1``; trips are only counted once the particle has been at
    chain 0, so a partial first journey is ignored.
    """

    P: int
    record_history: bool = False
    chain_of_particle: np.ndarray = field(init=False)
    particle_at_chain: np.ndarray = field(init=False)
    direction: np.ndarray = field(init=False)
    started: np.ndarray = field(init=False)
    counts: np.ndarray = field(init=False)
    completion_times: list = field(init=False)
    history: list = field(init=False)

    def __post_init__(self) -> None:
        self.chain_of_particle = np.arange(self.P)
        self.particle_at_chain = np.arange(self.P)
        self.direction = np.ones(self.P, dtype=int)
        self.started = np.zeros(self.P, dtype=bool)
        self.started[0] = True
        self.counts = np.zeros(self.P, dtype=int)
        self.completion_times = [[] for _ in range(self.P)]
        self.history = []

    @property
    def total_round_trips(self) -> int:
        return int(self.counts.sum())

    def swap(self, pair: int) -> None:
        a, b = self.particle_at_chain[pair], self.particle_at_chain[pair + 1]
        self.particle_at_chain[pair], self.particle_at_chain[pair + 1] = b, a
        self.chain_of_particle[a], self.chain_of_particle[b] = pair + 1, pair

    def touch_boundaries(self, time: int) -> None:
        top = self.particle_at_chain[self.P - 1]
        self.direction[top] = -1
        bottom = self.particle_at_chain[0]
        if self.direction[bottom] == -1:
            if self.started[bottom]:
                self.counts[bottom] += 1
                self.completion_times[bottom].append(time)
            self.direction[bottom] = 1
        self.started[bottom] = True

    def snapshot(self, window: int) -> None:
        cum = self.total_round_trips
        for particle in range(self.P):
            self.history.append(
                (window, particle, int(self.chain_of_particle[particle]), int(self.direction[particle]), cum)
            )


def update_round_trips(log: RoundTripLog, events: Iterable[SwapEvent], time: Optional[int] = None) -> RoundTripLog:
    """Apply accepted swaps to the permutation and update direction flags."""
    last = None
    for ev in events:
        last = ev.iteration
        if ev.accepted:
            log.swap(ev.pair)
    t = time if time is not None else (last if last is not None else 0)
    log.touch_boundaries(t)
    if log.record_history:
        log.snapshot(t)
    return log


def attempt_window_swaps(
    schedule: SwapSchedule,
    k: int,
    states: MutableSequence,
    acceptor: Callable[[int, MutableSequence], bool],
    log: Optional[RoundTripLog] = None,
) -> list[SwapEvent]:
    """Attempt every eligible pair once; swap ``states`` entries on acceptance.

    ``acceptor(pair, states)`` decides a single pair.  Accepted pairs have
    their gate closed until the next window begins.
    """
    events = []
    for q in eligible_pairs(schedule, k):
        ok = bool(acceptor(q, states))
        if ok:
            states[q], states[q + 1] = states[q + 1], states[q]
            if schedule.scheme == "DEO_W" or schedule.scheme == "DEO":
                schedule.close(q)
        events.append(SwapEvent(k, q, ok))
    if log is not None:
        update_round_trips(log, events, time=k)
    return events


# ---------------------------------------------------------------------------
# Closed-form round-trip time and window size
# ---------------------------------------------------------------------------


def _rates(P: int, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.ndim == 0:
        r = np.full(P - 1, float(r))
    if r.shape != (P - 1,):
        raise ValueError(f"need one rejection rate per pair ({P - 1}), got {r.shape}")
    return r


def expected_round_trip_time(P: int, W: int, r) -> float:
    """Expected round-trip time in iterations, ``2WP + 2WP sum r^W / (1 - r^W)``."""
    if P < 2 or W < 1:
        raise ValueError("need P >= 2 and W >= 1")
    rates = _rates(P, r)
    if np.any(rates < 0) or np.any(rates > 1):
        raise ValueError("rejection rates must lie in [0, 1]")
    if np.any(rates >= 1):
        raise ValueError("a rejection rate of 1 gives an infinite round-trip time")
    rw = rates**W
    return float(2 * W * P * (1.0 + np.sum(rw / (1.0 - rw))))


def optimal_window(P: int, r: float) -> int:
    """Window size ``ceil((log P + log log P) / (-log r))``; 1 for two or three chains."""
    if P < 2:
        raise ValueError("need P >= 2")
    if not 0 < r < 1:
        raise ValueError("rejection rate must lie in (0, 1)")
    if P <= 3:
        return 1
    return max(1, math.ceil((math.log(P) + math.log(math.log(P))) / (-math.log(r))))


@dataclass
class IndexProcessResult:
    """Outcome of the idealised index-process simulation."""

    mean: float
    stderr: float
    n_round_trips: int
    windows: int
    P: int
    W: int

    @property
    def round_trip_rate(self) -> float:
        """Round trips per iteration for the whole system of ``P`` particles."""
        return self.P / self.mean


def simulate_index_process(
    P: int,
    W: int,
    r,
    n_round_trips: int,
    rng: np.random.Generator,
    n_systems: int = 64,
    max_windows: int = 50_000_000,
) -> IndexProcessResult:
    """Monte Carlo oracle for the windowed even/odd index process.

    ``n_systems`` independent copies of a ``P``-chain system evolve in
    lockstep.  Within a window every eligible pair swaps with probability
    ``1 - r^W`` (the chance that at least one of ``W`` Bernoulli attempts
    succeeds; the gate prevents a second swap).

    Each system first runs until every particle has completed one round trip,
    which removes the influence of the ordered starting state.  Completions
    are then counted over a horizon that ends once ``n_round_trips`` have
    occurred, and the mean round-trip time is the particle time elapsed in
    that horizon divided by the number of completions.  Simply averaging the
    finished intervals would favour short trips whenever each particle only
    completes a handful of them.  The standard error treats systems as
    independent clusters.
    """
    if n_round_trips < 1:
        raise ValueError("n_round_trips must be positive")
    rates = _rates(P, r)
    if np.any(rates >= 1):
        raise ValueError("a rejection rate of 1 never completes a round trip")
    move = 1.0 - rates**W
    M = int(n_systems)
    if M < 2:
        raise ValueError("need at least two systems for a standard error")
    at_chain = np.tile(np.arange(P), (M, 1))  # particle occupying each chain
    seen_top = np.zeros((M, P), dtype=bool)
    ever_done = np.zeros((M, P), dtype=bool)
    counts = np.zeros(M, dtype=np.int64)
    rows = np.arange(M)
    pair_sets = [np.arange(0, P - 1, 2), np.arange(1, P - 1, 2)]
    counting = False
    horizon = 0
    total = 0
    t = 0
    while total < n_round_trips:
        if t >= max_windows:
            raise RuntimeError("index process did not reach the requested number of round trips")
        qs = pair_sets[t % 2]
        if qs.size:
            acc = rng.random((M, qs.size)) < move[qs]
            left = at_chain[:, qs]
            right = at_chain[:, qs + 1]
            at_chain[:, qs] = np.where(acc, right, left)
            at_chain[:, qs + 1] = np.where(acc, left, right)
        seen_top[rows, at_chain[:, P - 1]] = True
        bottom = at_chain[:, 0]
        done = seen_top[rows, bottom]
        t += 1
        if counting:
            horizon += 1
        if done.any():
            r_idx = rows[done]
            seen_top[r_idx, bottom[done]] = False
            if counting:
                counts += done
                total += int(done.sum())
            else:
                ever_done[r_idx, bottom[done]] = True
                counting = bool(ever_done.all())
    elapsed = horizon * W * P  # particle-iterations per system
    mean = M * elapsed / total
    rate = counts / elapsed
    se = mean * rate.std(ddof=1) / math.sqrt(M) / rate.mean()
    return IndexProcessResult(mean=float(mean), stderr=float(se), n_round_trips=int(total), windows=t, P=P, W=W)


# ---------------------------------------------------------------------------
# Equi-acceptance ladder and correction buffer
# ---------------------------------------------------------------------------


def geometric_ladder(low: float, high: float, P: int) -> np.ndarray:
    """``P`` geometrically spaced values from ``low`` to ``high``."""
    if not 0 < low <= high:
        raise ValueError("need 0 < low <= high")
    return np.geomspace(low, high, P)


@dataclass
class LadderAdaptation:
    """Learning-rate ladder with fixed end points and an adaptive swap threshold."""

    eta: np.ndarray
    target: float = 0.4
    correction: float = 0.0

    def __post_init__(self) -> None:
        self.eta = np.array(self.eta, dtype=float)
        if self.eta.ndim != 1 or self.eta.size < 2:
            raise ValueError("ladder needs at least two learning rates")
        if np.any(np.diff(self.eta) < 0) or self.eta[0] <= 0:
            raise ValueError("ladder must be positive and non-decreasing")
        if not 0 < self.target < 1:
            raise ValueError("target swap rate must lie in (0, 1)")

    @property
    def gaps(self) -> np.ndarray:
        """``eta[p] - eta[p-1]``: gap ``q`` sits under pair ``q``."""
        return np.diff(self.eta)


def equi_acceptance_update(ladder: LadderAdaptation, H, gamma: float) -> LadderAdaptation:
    """Move each interior rate towards the midpoint of its neighbours.

    ``H[q]`` is the random-field value (indicator minus target) for pair
    ``q``.  A positive value widens the gap under that pair.  The end points
    never move and the result is clamped to stay non-decreasing.
    """
    H = np.asarray(H, dtype=float)
    eta = ladder.eta
    if H.shape != (eta.size - 1,):
        raise ValueError("need one field value per adjacent pair")
    if eta.size > 2:
        grown = np.maximum(0.0, np.diff(eta)) * np.exp(gamma * H)
        new = eta.copy()
        new[1:-1] = 0.5 * (eta[:-2] + eta[2:]) + 0.5 * (grown[:-1] - grown[1:])
        new = np.clip(np.maximum.accumulate(new), eta[0], eta[-1])
        new[0], new[-1] = eta[0], eta[-1]
        ladder.eta = new
    return ladder


def update_correction_buffer(correction: float, indicators, target: float, gamma: float) -> float:
    """``C + gamma * (mean(indicators) - target)``."""
    ind = np.asarray(indicators, dtype=float)
    return float(correction + gamma * (ind.mean() - target))


def deterministic_swap(energy_p: float, energy_next: float, correction: float) -> bool:
    """True when the hotter chain's energy plus the buffer is strictly lower."""
    if correction < 0:
        raise ValueError("correction buffer must be non-negative")
    return bool(energy_next + correction < energy_p)


# ---------------------------------------------------------------------------
# DEO-SGD runner
# ---------------------------------------------------------------------------


DEFAULT_LADDER_GAMMA = 0.03


def _constant_gamma(k: int) -> float:
    return DEFAULT_LADDER_GAMMA


@dataclass
class DEOConfig:
    """Settings for :func:`deo_sgd_run`.

    Chain 0 runs SGD plus injected Gaussian noise at temperature ``tau1``;
    the other chains run plain SGD with learning rates spread between
    ``eta_low`` and ``eta_high`` (geometric start).  ``window="auto"`` picks
    the window from the target swap rate; ``scheme="DEO"`` forces ``W = 1``.
    """

    model: object
    noise: object
    chains: int = 16
    eta_low: float = 0.003
    eta_high: float = 0.6
    target: float = 0.4
    window: object = "auto"
    scheme: str = "DEO_W"
    gate_mode: str = "window"
    n_iter: int = 20_000
    gamma: Callable[[int], float] = None
    gamma_correction: Optional[Callable[[int], float]] = None
    tau1: float = 1.0
    correction0: float = 0.0
    adapt_ladder: bool = True
    adapt_correction: bool = True
    x0: Optional[Sequence[float]] = None
    init_box: Optional[tuple] = None
    thin: int = 1
    trace_stride: int = 100
    record_history: bool = False
    seed: int = 0
    block: int = 1024

    def __post_init__(self) -> None:
        if self.chains < 2:
            raise ValueError("need at least two chains")
        if not 0 < self.eta_low <= self.eta_high:
            raise ValueError("need 0 < eta_low <= eta_high")
        if not 0 < self.target < 1:
            raise ValueError("target swap rate must lie in (0, 1)")
        if self.scheme not in ("DEO", "DEO_W"):
            raise ValueError("scheme must be 'DEO' or 'DEO_W'")
        if self.window != "auto" and (not isinstance(self.window, (int, np.integer)) or self.window < 1):
            raise ValueError("window must be 'auto' or a positive integer")
        if self.gamma is None:
            self.gamma = _constant_gamma

    @property
    def W(self) -> int:
        if self.scheme == "DEO":
            return 1
        if self.window == "auto":
            return optimal_window(self.chains, 1.0 - self.target)
        return int(self.window)


@dataclass
class DEOResult:
    samples: np.ndarray  # (n_keep, d) from chain 0
    indicators: np.ndarray  # (n_iter, P-1) swap-condition indicators
    swaps: np.ndarray  # (P-1,) accepted swaps per pair
    eta_trace: np.ndarray  # (n_trace, P)
    correction_trace: np.ndarray  # (n_trace,)
    log: RoundTripLog
    W: int

    @property
    def round_trips(self) -> int:
        return self.log.total_round_trips

    def acceptance_rates(self, tail: float = 0.25) -> np.ndarray:
        """Mean swap-condition indicator per pair over the final ``tail`` fraction."""
        n = self.indicators.shape[0]
        start = n - max(1, int(round(tail * n)))
        return self.indicators[start:].mean(axis=0)


def deo_sgd_run(cfg: DEOConfig) -> DEOResult:
    """Non-reversible parallel tempering with SGD exploration kernels.

    Every iteration steps all chains, evaluates the deterministic swap
    condition for every adjacent pair, swaps the eligible pairs that satisfy
    it (closing their gates), then adapts the learning-rate ladder and the
    correction buffer towards the target swap rate.  The buffer is kept
    non-negative.  Chain streams follow ``(0, 0, p)`` and the draw order of
    :func:`sgd_step`.
    """
    from .kernels import BlockNoise, chain_generator, check_finite

    model, noise, P = cfg.model, cfg.noise, cfg.chains
    d = model.domain_dim
    W = cfg.W
    schedule = SwapSchedule(cfg.scheme, P, W=W, gate_mode=cfg.gate_mode)
    ladder = LadderAdaptation(geometric_ladder(cfg.eta_low, cfg.eta_high, P), cfg.target, cfg.correction0)
    gamma_c = cfg.gamma_correction or cfg.gamma
    if cfg.init_box is not None:
        rng0 = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0, 3)))
        X = rng0.uniform(cfg.init_box[0], cfg.init_box[1], (P, d))
    elif cfg.x0 is not None:
        X = np.broadcast_to(np.asarray(cfg.x0, dtype=float), (P, d)).copy()
    else:
        X = np.zeros((P, d))
    bn = BlockNoise([chain_generator(cfg.seed, 0, p) for p in range(P)], d, noise, cfg.block)
    log = RoundTripLog(P, record_history=cfg.record_history)
    n_keep = cfg.n_iter // cfg.thin
    samples = np.empty((n_keep, d))
    indicators = np.empty((cfg.n_iter, P - 1), dtype=np.uint8)
    swaps = np.zeros(P - 1, dtype=np.int64)
    n_trace = cfg.n_iter // cfg.trace_stride if cfg.trace_stride else 0
    eta_trace = np.empty((n_trace, P))
    corr_trace = np.empty(n_trace)
    inject = math.sqrt(2.0 * cfg.eta_low * cfg.tau1)
    for k in range(1, cfg.n_iter + 1):
        kick, gn, en = bn.next()
        g = model.gradient(X)
        if gn is not None:
            g = g + gn
        X = X - ladder.eta[:, None] * g
        X[0] += inject * kick[0]
        check_finite(X, k)
        L = model.energy(X)
        if en is not None:
            L = L + en
        A = L[1:] + ladder.correction < L[:-1]
        indicators[k - 1] = A
        for q in eligible_pairs(schedule, k):
            if A[q]:
                X[[q, q + 1]] = X[[q + 1, q]]
                L[q], L[q + 1] = L[q + 1], L[q]
                schedule.close(q)
                log.swap(q)
                swaps[q] += 1
        log.touch_boundaries(k)
        if log.record_history:
            log.snapshot(k)
        if cfg.adapt_ladder:
            equi_acceptance_update(ladder, A - cfg.target, cfg.gamma(k))
        if cfg.adapt_correction:
            ladder.correction = max(0.0, update_correction_buffer(ladder.correction, A, cfg.target, gamma_c(k)))
        if k % cfg.thin == 0:
            samples[k // cfg.thin - 1] = X[0]
        if n_trace and k % cfg.trace_stride == 0:
            eta_trace[k // cfg.trace_stride - 1] = ladder.eta
            corr_trace[k // cfg.trace_stride - 1] = ladder.correction
    return DEOResult(samples, indicators, swaps, eta_trace, corr_trace, log, W)
