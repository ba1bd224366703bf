"""Replica exchange SGLD with bias-corrected swaps and variance-reduced energies.

With noisy energies ``L~ = L + e`` the naive swap rate ``exp(tau_d (L~_low -
L~_high))`` is biased upward by the log-normal factor of the noise.  The
corrected rate subtracts ``tau_d * sigma2 / F`` inside the exponent, where
``tau_d = 1/tau_low - 1/tau_high`` and ``sigma2`` is an estimate of the noise
variance obtained by stochastic approximation.  ``F = 1`` is the full
correction and ``F = inf`` the naive rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .kernels import BlockNoise, chain_generator, check_finite, coordinator_generator
from .schedule import SwapSchedule, eligible_pairs
from .targets import NoiseSpec, PosteriorTarget, TargetModel

__all__ = [
    "ControlVariate",
    "ResgldConfig",
    "ResgldResult",
    "SmoothedScalar",
    "StaleAnchorError",
    "VRConfig",
    "VRResult",
    "corrected_swap_prob",
    "resgld_posterior_run",
    "resgld_run",
    "update_adaptive_coefficient",
    "update_variance_estimate",
    "vr_energy",
    "vr_variance_probe",
]


# ---------------------------------------------------------------------------
# Stochastic approximation of scalars
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothedScalar:
    """A scalar smoothed by stochastic approximation.

    ``robbins_monro`` uses ``gamma = 1 / (update_count + 1)`` so the value is
    the running mean of all inputs (the initial value is forgotten after the
    first update).  ``fixed`` uses the constant ``gamma``.
    """

    value: float
    smoothing: str = "robbins_monro"
    gamma: float = 1.0
    update_count: int = 0

    def __post_init__(self) -> None:
        if self.smoothing not in ("robbins_monro", "fixed"):
            raise ValueError("smoothing must be 'robbins_monro' or 'fixed'")
        if self.smoothing == "fixed" and not 0 < self.gamma <= 1:
            raise ValueError("fixed smoothing factor must lie in (0, 1]")

    def next_gamma(self) -> float:
        if self.smoothing == "robbins_monro":
            return 1.0 / (self.update_count + 1)
        return self.gamma

    def update(self, sample: float) -> "SmoothedScalar":
        g = self.next_gamma()
        return replace(self, value=(1.0 - g) * self.value + g * float(sample), update_count=self.update_count + 1)


def update_variance_estimate(est: SmoothedScalar, sample: float) -> SmoothedScalar:
    """Fold one non-negative variance sample into ``est``."""
    if not sample >= 0:
        raise ValueError("variance samples must be non-negative")
    return est.update(sample)


def update_adaptive_coefficient(c: SmoothedScalar, cov_sample: float, var_sample: float) -> SmoothedScalar:
    """Smooth ``c_k = -cov / var`` into the control-variate coefficient.

    A zero ``var_sample`` carries no information and leaves ``c`` unchanged.
    """
    if var_sample < 0:
        raise ValueError("variance sample must be non-negative")
    if var_sample == 0:
        return c
    return c.update(-cov_sample / var_sample)


def corrected_swap_prob(
    energy_low,
    energy_high,
    tau_low: float,
    tau_high: float,
    sigma2,
    F: float = 1.0,
):
    """Bias-corrected swap probability ``min(1, exp(tau_d (dL - tau_d sigma2 / F)))``.

    Works elementwise on arrays.  Large positive exponents saturate at 1.
    """
    if not tau_low < tau_high:
        raise ValueError("need tau_low < tau_high")
    if not F > 0:
        raise ValueError("correction factor F must be positive")
    s2 = np.asarray(sigma2, dtype=float)
    if np.any(s2 < 0):
        raise ValueError("variance estimate must be non-negative")
    td = 1.0 / tau_low - 1.0 / tau_high
    corr = 0.0 if math.isinf(F) else td * s2 / F
    expo = td * (np.asarray(energy_low, dtype=float) - np.asarray(energy_high, dtype=float) - corr)
    out = np.exp(np.minimum(expo, 0.0))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Control variates
# ---------------------------------------------------------------------------


class StaleAnchorError(ValueError):
    """The control-variate anchor was not refreshed on schedule."""


@dataclass
class ControlVariate:
    """Anchor points and their exact energies for variance-reduced estimators.

    ``anchor_x`` and ``anchor_full_energy`` hold one entry per chain.  The
    anchor must be refreshed at every iteration ``k`` with ``k % period == 0``.
    ``coefficient`` is ``-1`` for the classical control variate or a
    :class:`SmoothedScalar` when adapted online.
    """

    anchor_x: np.ndarray
    anchor_full_energy: np.ndarray
    period: int
    coefficient: Union[float, SmoothedScalar] = -1.0
    anchor_iteration: int = 0

    def __post_init__(self) -> None:
        self.anchor_x = np.atleast_1d(np.asarray(self.anchor_x, dtype=float))
        self.anchor_full_energy = np.atleast_1d(np.asarray(self.anchor_full_energy, dtype=float))
        if self.period < 1:
            raise ValueError("refresh period must be positive")

    @classmethod
    def at(cls, model: PosteriorTarget, x, period: int, iteration: int = 0, coefficient=-1.0) -> "ControlVariate":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x.copy(), model.batch_energy(x, np.arange(model.n_data)), period, coefficient, iteration)

    @property
    def c(self) -> float:
        return self.coefficient.value if isinstance(self.coefficient, SmoothedScalar) else float(self.coefficient)

    def due(self, k: int) -> bool:
        return k % self.period == 0

    def refresh(self, model: PosteriorTarget, x, k: int) -> "ControlVariate":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        self.anchor_x = x.copy()
        self.anchor_full_energy = model.batch_energy(x, np.arange(model.n_data))
        self.anchor_iteration = int(k)
        return self

    def check_fresh(self, k: int) -> None:
        if self.anchor_iteration != (k // self.period) * self.period:
            raise StaleAnchorError(
                f"anchor from iteration {self.anchor_iteration} is stale at iteration {k} (period {self.period})"
            )


def vr_energy(model: PosteriorTarget, cv: ControlVariate, x, batch, iteration: Optional[int] = None):
    """Control-variate energy ``(N/n) sum L(x) + c ((N/n) sum L(anchor) - L_hat)``.

    With ``c = -1`` this is ``(N/n) sum [L(x) - L(anchor)] + L_hat``.  ``x`` holds
    one value per chain; ``batch`` is shared ``(n,)`` or per chain ``(C, n)``.
    Passing ``iteration`` enforces the anchor refresh schedule.
    """
    batch = np.asarray(batch)
    if batch.shape[-1] == 0:
        raise ValueError("empty mini-batch")
    if iteration is not None:
        cv.check_fresh(iteration)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    plain = model.batch_energy(x, batch)
    at_anchor = model.batch_energy(cv.anchor_x, batch)
    out = plain + cv.c * (at_anchor - cv.anchor_full_energy)
    return out


def vr_variance_probe(
    model: PosteriorTarget,
    period: int = 40,
    eta: float = 1e-7,
    tau: float = 10.0,
    batch_size: int = 1000,
    n_iter: int = 400,
    n_batches: int = 20,
    seed: int = 0,
    x0: Optional[float] = None,
) -> tuple[float, float]:
    """Conditional variance of VR and plain mini-batch energies along an SGLD path.

    A single chain runs mini-batch SGLD at ``(eta, tau)`` with the anchor
    refreshed every ``period`` iterations.  At each iteration ``n_batches``
    fresh batches give the variance of both estimators at the current point.
    Returns the two variances averaged over iterations as ``(vr, plain)``.
    """
    rng = chain_generator(seed, 0, 0)
    coord = coordinator_generator(seed, 0)
    N = model.n_data
    x = np.array([model.metadata["beta_true"] if x0 is None else x0], dtype=float)
    cv = ControlVariate.at(model, x, period)
    var_vr = var_plain = 0.0
    for k in range(n_iter):
        if cv.due(k):
            cv.refresh(model, x, k)
        idx = coord.integers(0, N, size=(n_batches, batch_size))
        plain = model.batch_energy(np.full(n_batches, x[0]), idx)
        anchor = model.batch_energy(np.full(n_batches, cv.anchor_x[0]), idx)
        vr = plain + cv.c * (anchor - cv.anchor_full_energy[0])
        var_vr += vr.var(ddof=1)
        var_plain += plain.var(ddof=1)
        g = model.batch_gradient(x, coord.integers(0, N, size=batch_size))
        x = x - eta * g + math.sqrt(2 * eta * tau) * rng.standard_normal(1)
        check_finite(x, k + 1)
    return var_vr / n_iter, var_plain / n_iter


# ---------------------------------------------------------------------------
# Vectorised reSGLD on analytic targets
# ---------------------------------------------------------------------------


@dataclass
class ResgldConfig:
    """Settings for :func:`resgld_run`.

    ``sigma_estimator`` chooses how variance samples are built every
    ``sa_period`` iterations: ``energy`` takes the variance of ``sa_draws``
    noisy energies at the lower chain of each pair, ``difference`` the
    variance of ``sa_draws`` noisy energy differences across the pair, and
    ``fixed`` keeps ``sigma2_init`` throughout.
    """

    model: TargetModel
    noise: NoiseSpec
    temperatures: Sequence[float] = (1.0, 10.0)
    learning_rates: Union[float, Sequence[float]] = 0.03
    n_iter: int = 100_000
    F: float = 1.0
    sigma_estimator: str = "energy"
    sigma2_init: float = 100.0
    sa_period: int = 100
    sa_draws: int = 10
    smoothing: str = "robbins_monro"
    gamma: float = 1.0
    swap_scheme: str = "ADJ"
    thin: int = 1
    x0: Optional[Sequence[float]] = None
    replications: int = 1
    seed: int = 0
    log_swaps: bool = False
    block: int = 1024

    def __post_init__(self) -> None:
        t = np.asarray(self.temperatures, dtype=float)
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0) or t[0] <= 0:
            raise ValueError("temperatures must be positive and strictly increasing with at least two chains")
        if self.sigma_estimator not in ("energy", "difference", "fixed"):
            raise ValueError("sigma_estimator must be 'energy', 'difference' or 'fixed'")
        if self.n_iter < 1 or self.thin < 1 or self.replications < 1:
            raise ValueError("n_iter, thin and replications must be positive")
        if self.sa_period < 1 or self.sa_draws < 2:
            raise ValueError("sa_period must be positive and sa_draws at least 2")
        if not self.F > 0:
            raise ValueError("correction factor F must be positive")


@dataclass
class ResgldResult:
    samples: np.ndarray  # (R, n_keep, d) from the lowest-temperature chain
    swap_attempts: np.ndarray  # (R, P-1)
    swap_accepts: np.ndarray  # (R, P-1)
    sigma2: np.ndarray  # (R, P-1) final estimates
    swap_log: list = field(default_factory=list)

    @property
    def swap_rate(self) -> np.ndarray:
        return self.swap_accepts / np.maximum(self.swap_attempts, 1)


class _Uniforms:
    """Blocks of coordinator uniforms, one generator per replication."""

    def __init__(self, gens, width: int, block: int):
        self.gens, self.width, self.block = gens, width, block
        self.pos = block

    def next(self) -> np.ndarray:
        if self.pos >= self.block:
            self.buf = np.stack([g.random((self.block, self.width)) for g in self.gens], axis=1)
            self.pos = 0
        self.pos += 1
        return self.buf[self.pos - 1]


def _sa_generator(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r, 2)))


def resgld_run(cfg: ResgldConfig) -> ResgldResult:
    """Replica exchange SGLD, vectorised over replications.

    Each iteration steps every chain, refreshes the variance estimate on its
    cadence and then attempts the scheduled swaps.  Accepted swaps exchange
    positions, so chain 0 always holds the lowest-temperature sample.
    Replication ``r`` uses chain streams ``(r, 0, p)``, swap uniforms from
    ``(r, 1)`` and variance-probe draws from ``(r, 2)``.
    """
    model, noise = cfg.model, cfg.noise
    taus = np.asarray(cfg.temperatures, dtype=float)
    P, R, d = taus.size, cfg.replications, model.domain_dim
    etas = np.broadcast_to(np.asarray(cfg.learning_rates, dtype=float), (P,)).copy()
    scale = np.sqrt(2.0 * etas * taus)[None, :, None]
    eta_col = etas[None, :, None]
    X = np.zeros((R, P, d)) if cfg.x0 is None else np.broadcast_to(np.asarray(cfg.x0, dtype=float), (R, P, d)).copy()
    gens = [chain_generator(cfg.seed, r, p) for r in range(R) for p in range(P)]
    bn = BlockNoise(gens, d, noise, cfg.block)
    unif = _Uniforms([coordinator_generator(cfg.seed, r) for r in range(R)], P - 1, cfg.block)
    sa_gens = [_sa_generator(cfg.seed, r) for r in range(R)]
    schedule = SwapSchedule(cfg.swap_scheme, P, rng=coordinator_generator(cfg.seed, R))
    n_pairs = P - 1
    sig = [[SmoothedScalar(cfg.sigma2_init, cfg.smoothing, cfg.gamma) for _ in range(n_pairs)] for _ in range(R)]
    sigma2 = np.full((R, n_pairs), float(cfg.sigma2_init))
    attempts = np.zeros((R, n_pairs), dtype=np.int64)
    accepts = np.zeros((R, n_pairs), dtype=np.int64)
    n_keep = cfg.n_iter // cfg.thin
    samples = np.empty((R, n_keep, d))
    log: list = []
    rows = np.arange(R)
    for k in range(1, cfg.n_iter + 1):
        kick, gn, en = bn.next()
        g = model.gradient(X)
        if gn is not None:
            g = g + gn.reshape(R, P, d)
        X = X - eta_col * g + scale * kick.reshape(R, P, d)
        check_finite(X, k)
        U = model.energy(X)
        if en is not None:
            U = U + en.reshape(R, P)
        if cfg.sigma_estimator != "fixed" and k % cfg.sa_period == 0:
            B = cfg.sa_draws
            for r in range(R):
                for q in range(n_pairs):
                    low = noise.draw_energy(sa_gens[r], (B,))
                    if cfg.sigma_estimator == "difference":
                        low = low - noise.draw_energy(sa_gens[r], (B,))
                    sig[r][q] = update_variance_estimate(sig[r][q], float(np.var(low, ddof=1)))
                    sigma2[r, q] = sig[r][q].value
        u = unif.next()
        for q in eligible_pairs(schedule, k):
            prob = corrected_swap_prob(U[:, q], U[:, q + 1], taus[q], taus[q + 1], sigma2[:, q], cfg.F)
            acc = u[:, q] < prob
            attempts[:, q] += 1
            accepts[:, q] += acc
            if cfg.log_swaps:
                log.append((k, q, float(U[0, q]), float(U[0, q + 1]), float(sigma2[0, q]), float(prob[0]), bool(acc[0])))
            if acc.any():
                ra = rows[acc]
                X[ra, q], X[ra, q + 1] = X[ra, q + 1].copy(), X[ra, q].copy()
                U[ra, q], U[ra, q + 1] = U[ra, q + 1], U[ra, q]
        if k % cfg.thin == 0:
            samples[:, k // cfg.thin - 1] = X[:, 0]
    return ResgldResult(samples, attempts, accepts, sigma2, log)


# ---------------------------------------------------------------------------
# reSGLD on the mixture posterior with variance-reduced energies
# ---------------------------------------------------------------------------


@dataclass
class VRConfig:
    """Settings for :func:`resgld_posterior_run` (two chains, shared mini-batches)."""

    temperatures: Sequence[float] = (10.0, 1000.0)
    eta: float = 1e-7
    n_iter: int = 2000
    batch_size: int = 1000
    period: int = 40
    F: float = 1.0
    variance_reduction: bool = True
    adaptive_coefficient: bool = False
    coefficient_gamma: float = 0.1
    sigma2_init: float = 0.0
    sa_period: int = 1
    sa_draws: int = 10
    smoothing: str = "fixed"
    gamma: float = 0.3
    x0: Optional[Sequence[float]] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.temperatures) != 2 or not 0 < self.temperatures[0] < self.temperatures[1]:
            raise ValueError("need two increasing positive temperatures")
        if self.batch_size < 1 or self.period < 1 or self.n_iter < 1 or self.sa_draws < 2:
            raise ValueError("batch_size, period, n_iter must be positive and sa_draws at least 2")


@dataclass
class VRResult:
    samples: np.ndarray  # (n_iter,) low-temperature chain
    sigma2_trace: np.ndarray  # (n_iter,)
    swap_accepts: int
    coefficient_trace: np.ndarray  # (n_iter,)


def _energy_pair(model, cv, x, idx, use_vr):
    if use_vr:
        return vr_energy(model, cv, x, idx)
    return model.batch_energy(x, idx)


def resgld_posterior_run(model: PosteriorTarget, cfg: VRConfig) -> VRResult:
    """Two-chain reSGLD on the mixture posterior.

    Both chains share each mini-batch.  The variance estimate is built from
    ``sa_draws`` extra shared batches as the sample variance of the energy
    difference between the chains.  With ``adaptive_coefficient`` the control
    variate coefficient is re-estimated from the same draws as ``-Cov/Var``.
    """
    N, n = model.n_data, cfg.batch_size
    tau = np.asarray(cfg.temperatures, dtype=float)
    gens = [chain_generator(cfg.seed, 0, p) for p in range(2)]
    coord = coordinator_generator(cfg.seed, 0)
    sa_rng = _sa_generator(cfg.seed, 0)
    x = np.full(2, model.metadata["beta_true"], dtype=float) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float).copy()
    coef = SmoothedScalar(-1.0, "fixed", cfg.coefficient_gamma) if cfg.adaptive_coefficient else -1.0
    cv = ControlVariate.at(model, x, cfg.period, 0, coef)
    s2 = SmoothedScalar(cfg.sigma2_init, cfg.smoothing, cfg.gamma)
    samples = np.empty(cfg.n_iter)
    s_trace = np.empty(cfg.n_iter)
    c_trace = np.empty(cfg.n_iter)
    accepts = 0
    scale = np.sqrt(2 * cfg.eta * tau)
    for k in range(cfg.n_iter):
        if cfg.variance_reduction and cv.due(k):
            cv.refresh(model, x, k)
        idx = coord.integers(0, N, size=n)
        g = model.batch_gradient(x, idx)
        kick = np.array([gens[0].standard_normal(), gens[1].standard_normal()])
        x = x - cfg.eta * g + scale * kick
        check_finite(x, k + 1)
        if cfg.variance_reduction and cv.due(k + 1):
            cv.refresh(model, x, k + 1)
        if (k + 1) % cfg.sa_period == 0:
            draws = sa_rng.integers(0, N, size=(cfg.sa_draws, n))
            xs = np.broadcast_to(x, (cfg.sa_draws, 2))
            plain = model.batch_energy(xs, draws[:, None, :])
            if cfg.variance_reduction:
                anch = model.batch_energy(np.broadcast_to(cv.anchor_x, (cfg.sa_draws, 2)), draws[:, None, :])
                if cfg.adaptive_coefficient:
                    a = anch - anch.mean(axis=0)
                    cov = float(np.sum(a * (plain - plain.mean(axis=0))) / (2 * (cfg.sa_draws - 1)))
                    var = float(np.sum(a * a) / (2 * (cfg.sa_draws - 1)))
                    cv.coefficient = update_adaptive_coefficient(cv.coefficient, cov, var)
                est = plain + cv.c * (anch - cv.anchor_full_energy)
            else:
                est = plain
            diff = est[:, 0] - est[:, 1]
            s2 = update_variance_estimate(s2, float(diff.var(ddof=1)))
        U = _energy_pair(model, cv, x, idx, cfg.variance_reduction)
        prob = corrected_swap_prob(U[0], U[1], tau[0], tau[1], s2.value, cfg.F)
        if coord.random() < prob:
            accepts += 1
            x = x[::-1].copy()
            if cfg.variance_reduction:
                cv.anchor_x = cv.anchor_x[::-1].copy()
                cv.anchor_full_energy = cv.anchor_full_energy[::-1].copy()
        samples[k] = x[0]
        s_trace[k] = s2.value
        c_trace[k] = cv.c
    return VRResult(samples, s_trace, accepts, c_trace)
