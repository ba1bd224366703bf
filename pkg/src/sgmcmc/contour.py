"""Contour SGLD samplers: CSGLD, interacting CSGLD and AWSGLD.

The energy axis is cut into ``m`` subregions of width ``du`` starting at
``u_low``: subregion ``i`` (1-based) holds energies in ``(u_{i-1}, u_i]`` with
``u_i = u_low + i * du`` for ``1 <= i <= m - 1`` and open ends ``u_0 = -inf``,
``u_m = inf``.  A self-adapting vector ``theta`` tracks per-subregion
statistics and reshapes the gradient through a multiplier

    1 + (zeta * tau / du) * (log theta(J) - log theta(max(J - 1, 1))).

The three flavours differ only in their random field:

* ``csgld``: ``theta(J)^zeta (e_J - theta)``; ``theta`` converges to the
  subregion masses.
* ``icsgld``: ``theta(J) (e_J - theta)``; the limit is proportional to the
  masses raised to ``1 / zeta``.  Averaging this field over ``P`` chains
  gives the interacting sampler.
* ``awsgld``: ``theta(J) (1[i >= J] - theta)``; ``theta`` converges to the
  energy CDF at the boundaries and stays monotone with ``theta(m) = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .kernels import BlockNoise, chain_generator, check_finite
from .targets import NoiseSpec, TargetModel

__all__ = [
    "FLAVORS",
    "THETA_FLOOR",
    "ContourConfig",
    "ContourResult",
    "PartitionSpec",
    "QuadratureError",
    "StepSize",
    "ThetaInvariantError",
    "ThetaVector",
    "contour_run",
    "gradient_multiplier",
    "init_generator",
    "interacting_field",
    "partition_index",
    "quadrature_theta_star",
    "random_field",
    "sa_update",
    "weighted_expectation",
]

FLAVORS = ("csgld", "icsgld", "awsgld")
THETA_FLOOR = 1e-12
_SIMPLEX_TOL = 1e-9
_MONOTONE_TOL = 1e-12


class ThetaInvariantError(ValueError):
    """``theta`` left its admissible set (non-positive, off the simplex, or not monotone)."""


class QuadratureError(RuntimeError):
    """The quadrature box does not contain the bulk of the density."""


# ---------------------------------------------------------------------------
# Partition and theta
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionSpec:
    """Uniform energy partition plus the sampler constants tied to it.

    ``scale`` multiplies energies before indexing (``N/n`` for mini-batch
    sums).  ``tau`` is the sampler temperature.
    """

    m: int
    du: float
    u_low: float = 0.0
    zeta: float = 1.0
    tau: float = 1.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("need at least one subregion")
        if not self.du > 0:
            raise ValueError("bandwidth du must be positive")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if self.tau < 0 or not self.scale > 0:
            raise ValueError("tau must be non-negative and scale positive")

    @classmethod
    def from_range(cls, u_low: float, u_high: float, m: int, **kw) -> "PartitionSpec":
        """Split ``[u_low, u_high]`` into ``m`` equal subregions."""
        if not u_high > u_low:
            raise ValueError("need u_high > u_low")
        return cls(m=m, du=(u_high - u_low) / m, u_low=u_low, **kw)

    @property
    def boundaries(self) -> np.ndarray:
        """Interior boundaries ``u_1 < ... < u_{m-1}``."""
        return self.u_low + self.du * np.arange(1, self.m)

    @property
    def coefficient(self) -> float:
        """``zeta * tau / du``."""
        return self.zeta * self.tau / self.du


@dataclass(frozen=True)
class ThetaVector:
    flavor: str
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {self.flavor!r}; expected one of {FLAVORS}")
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def initial(cls, flavor: str, m: int, awsgld_start: str = "flat") -> "ThetaVector":
        """Uniform ``1/m`` for the simplex flavours.

        awsgld starts ``flat`` (all ones, so the first iterations are plain
        SGLD) or ``linear`` (``i/m``).  The linear start puts ``theta(1) = 1/m``
        under the lowest subregion; because every update is scaled by
        ``theta(J)`` and the sampler then sits almost entirely in that
        subregion, adaptation from the linear start is very slow.
        """
        if flavor == "awsgld":
            if awsgld_start == "flat":
                return cls(flavor, np.ones(m))
            if awsgld_start == "linear":
                return cls(flavor, np.arange(1, m + 1) / m)
            raise ValueError("awsgld_start must be 'flat' or 'linear'")
        return cls(flavor, np.full(m, 1.0 / m))

    @property
    def m(self) -> int:
        return self.values.size

    def validate(self) -> "ThetaVector":
        _check_theta(self.flavor, self.values)
        return self


def _check_theta(flavor: str, v: np.ndarray) -> None:
    if not np.all(v > 0):
        i = int(np.argmin(v))
        raise ThetaInvariantError(f"{flavor}: theta({i + 1}) = {v[..., i] if v.ndim == 1 else v.min()} is not positive")
    if flavor == "awsgld":
        gaps = np.diff(v, axis=-1)
        if gaps.size and gaps.min() < -_MONOTONE_TOL:
            raise ThetaInvariantError(f"awsgld: theta not monotone (largest drop {-gaps.min():.3g})")
        if np.max(np.abs(v[..., -1] - 1.0)) > _MONOTONE_TOL:
            raise ThetaInvariantError("awsgld: theta(m) must equal 1")
    else:
        drift = np.max(np.abs(v.sum(axis=-1) - 1.0))
        if drift > _SIMPLEX_TOL:
            raise ThetaInvariantError(f"{flavor}: theta left the simplex (sum off by {drift:.3g})")


def partition_index(spec: PartitionSpec, energy):
    """1-based subregion index of ``scale * energy`` (clamped at both ends)."""
    u = np.asarray(energy, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("energy must be finite to be indexed")
    J = np.searchsorted(spec.boundaries, spec.scale * u, side="left") + 1
    return int(J) if J.ndim == 0 else J


def _log_ratio(theta: np.ndarray, J, rows=None) -> np.ndarray:
    lo = np.maximum(J - 1, 1)
    if rows is None:
        a, b = theta[..., J - 1], theta[..., lo - 1]
    else:
        a, b = theta[rows, J - 1], theta[rows, lo - 1]
    return np.log(np.maximum(a, THETA_FLOOR)) - np.log(np.maximum(b, THETA_FLOOR))


def gradient_multiplier(theta: ThetaVector, J, spec: PartitionSpec):
    """Multiplier applied to the stochastic gradient at subregion ``J``."""
    v = theta.values
    if not np.all(v > 0):
        raise ThetaInvariantError("gradient multiplier needs strictly positive theta")
    J = np.asarray(J)
    if np.any(J < 1) or np.any(J > v.size):
        raise ValueError("subregion index out of range")
    out = 1.0 + spec.coefficient * _log_ratio(v, J)
    return float(out) if out.ndim == 0 else out


def random_field(flavor: str, theta, J: int, zeta: float = 1.0) -> np.ndarray:
    """Single-chain random field of the given flavour at index ``J``."""
    v = theta.values if isinstance(theta, ThetaVector) else np.asarray(theta, dtype=float)
    m = v.size
    if not 1 <= J <= m:
        raise ValueError("subregion index out of range")
    w = v[J - 1]
    if flavor == "csgld":
        w = w**zeta
        e = np.zeros(m)
        e[J - 1] = 1.0
    elif flavor == "icsgld":
        e = np.zeros(m)
        e[J - 1] = 1.0
    elif flavor == "awsgld":
        e = (np.arange(1, m + 1) >= J).astype(float)
    else:
        raise ValueError(f"unknown flavor {flavor!r}")
    return w * (e - v)


def interacting_field(theta, Js: Sequence[int]) -> np.ndarray:
    """Average of the icsgld fields over the chains' indices."""
    Js = list(Js)
    if not Js:
        raise ValueError("need at least one chain index")
    return np.mean([random_field("icsgld", theta, int(j)) for j in Js], axis=0)


def sa_update(theta: ThetaVector, field_value, omega: float) -> ThetaVector:
    """``theta + omega * field`` followed by the flavour's invariant check."""
    if not omega >= 0:
        raise ValueError("step size must be non-negative")
    f = np.asarray(field_value, dtype=float)
    if f.shape != theta.values.shape:
        raise ValueError("field and theta shapes differ")
    new = theta.values + omega * f
    try:
        _check_theta(theta.flavor, new)
    except ThetaInvariantError as exc:
        raise ThetaInvariantError(f"{exc} after a step of size {omega:g}; reduce omega") from None
    return ThetaVector(theta.flavor, new)


def weighted_expectation(values, theta_at_index, zeta: float = 1.0, f: Optional[Callable] = None) -> float:
    """Self-normalised estimate ``sum w f / sum w`` with ``w = theta(J)^zeta``.

    ``values`` are the samples (passed through ``f`` when given) and
    ``theta_at_index`` the value of ``theta`` at each sample's subregion.
    """
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        raise ValueError("empty sample trace")
    if f is not None:
        vals = np.asarray(f(vals), dtype=float)
    w = np.asarray(theta_at_index, dtype=float) ** zeta
    if w.shape != vals.shape[: w.ndim]:
        raise ValueError("one weight per sample is required")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise ValueError("total importance weight is zero")
    return float(np.tensordot(w, vals, axes=w.ndim) / total)


def _simpson_weights(n: int, h: float) -> np.ndarray:
    if n % 2 == 0:
        raise ValueError("Simpson's rule needs an odd number of nodes")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def quadrature_theta_star(
    model: TargetModel,
    spec: PartitionSpec,
    flavor: str,
    bounds: tuple[float, float] = (-15.0, 15.0),
    nodes: Optional[int] = None,
) -> np.ndarray:
    """Fixed point of ``theta`` for ``exp(-U / tau)`` by composite Simpson quadrature.

    One-dimensional targets use ``100001`` nodes on ``bounds``; two-dimensional
    targets use a ``2001 x 2001`` tensor grid on ``bounds`` squared.
    """
    if flavor not in FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}")
    d = model.domain_dim
    if d not in (1, 2):
        raise ValueError("quadrature oracle supports one- and two-dimensional targets only")
    n = nodes if nodes is not None else (100_001 if d == 1 else 2001)
    lo, hi = bounds
    grid = np.linspace(lo, hi, n)
    w1 = _simpson_weights(n, grid[1] - grid[0])
    if d == 1:
        pts = grid[:, None]
        wts = w1
    else:
        gx, gy = np.meshgrid(grid, grid, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
        wts = np.outer(w1, w1).ravel()
    U = model.energy(pts)
    tau = spec.tau if spec.tau > 0 else 1.0
    logd = -U / tau
    dens = np.exp(logd - logd.max())
    edge = dens.reshape((n,) * d)
    rim = max(edge[0].max(), edge[-1].max()) if d == 1 else max(
        edge[0].max(), edge[-1].max(), edge[:, 0].max(), edge[:, -1].max()
    )
    if rim > 1e-10:
        raise QuadratureError(f"density at the edge of {bounds} is {rim:.2e} of its peak; widen the bounds")
    J = partition_index(spec, U)
    mass = np.bincount(J - 1, weights=wts * dens, minlength=spec.m)
    mass = np.maximum(mass, 0.0)
    mass /= mass.sum()
    if flavor == "csgld":
        return mass
    if flavor == "icsgld":
        t = mass ** (1.0 / spec.zeta)
        return t / t.sum()
    cdf = np.cumsum(mass)
    cdf[-1] = 1.0
    return np.minimum(cdf, 1.0)


# ---------------------------------------------------------------------------
# Vectorised contour sampler
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepSize:
    """``omega_k = min(cap, a / (k^alpha + b))``."""

    a: float
    alpha: float = 0.6
    b: float = 0.0
    cap: float = math.inf

    def __post_init__(self) -> None:
        if not self.a > 0 or self.alpha < 0 or self.b < 0 or not self.cap > 0:
            raise ValueError("invalid step-size schedule")

    def __call__(self, k: int) -> float:
        return min(self.cap, self.a / (k**self.alpha + self.b))


def init_generator(seed: int, replication: int, chain: int) -> np.random.Generator:
    """Stream used only to draw random initial points."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication, 3, chain)))


def initial_points(
    d: int, R: int, P: int, seed: int, x0=None, init_box: Optional[tuple[float, float]] = None
) -> np.ndarray:
    """Starting positions of shape ``(R, P, d)``: uniform on ``init_box`` or ``x0``."""
    if init_box is not None:
        lo, hi = init_box
        return np.stack(
            [np.stack([init_generator(seed, r, p).uniform(lo, hi, d) for p in range(P)]) for r in range(R)]
        )
    if x0 is None:
        return np.zeros((R, P, d))
    return np.broadcast_to(np.asarray(x0, dtype=float), (R, P, d)).copy()


@dataclass
class ContourConfig:
    """Settings for :func:`contour_run`.

    ``index_energy`` chooses whether subregion indices use the noisy or the
    exact energy.  With ``stop_threshold`` the run ends once every
    replication has produced a sample with exact energy at or below it.
    """

    model: TargetModel
    flavor: str
    partition: PartitionSpec
    lr: float
    n_iter: int
    omega: StepSize
    noise: NoiseSpec = field(default_factory=NoiseSpec.none)
    chains: int = 1
    replications: int = 1
    index_energy: str = "noisy"
    broadcast_period: int = 1
    theta0: Optional[Sequence[float]] = None
    x0: Optional[Sequence[float]] = None
    init_box: Optional[tuple[float, float]] = None
    stop_threshold: Optional[float] = None
    theta_stride: int = 0
    sample_thin: int = 0
    check_every: int = 1
    seed: int = 0
    block: int = 1024

    def __post_init__(self) -> None:
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {self.flavor!r}")
        if self.chains < 1 or self.replications < 1 or self.n_iter < 1:
            raise ValueError("chains, replications and n_iter must be positive")
        if self.flavor != "icsgld" and self.chains != 1:
            raise ValueError(f"{self.flavor} runs a single chain; use icsgld for interacting chains")
        if self.index_energy not in ("noisy", "exact"):
            raise ValueError("index_energy must be 'noisy' or 'exact'")
        if not self.lr > 0 or self.broadcast_period < 1 or self.check_every < 1:
            raise ValueError("lr, broadcast_period and check_every must be positive")


@dataclass
class ContourResult:
    theta: np.ndarray  # (R, m) final
    theta_trace: np.ndarray  # (n_trace, R, m)
    theta_iters: np.ndarray  # (n_trace,)
    samples: np.ndarray  # (n_keep, R, P, d)
    energies: np.ndarray  # (n_keep, R, P) exact energies
    multipliers: np.ndarray  # (n_keep, R, P)
    indices: np.ndarray  # (n_keep, R, P)
    theta_at_index: np.ndarray  # (n_keep, R, P)
    sample_iters: np.ndarray  # (n_keep,)
    hitting: np.ndarray  # (R,) first hitting iteration, -1 if never
    min_multiplier: float
    iterations: int


def _initial_theta(cfg: ContourConfig, R: int) -> np.ndarray:
    m = cfg.partition.m
    if cfg.theta0 is not None:
        theta0 = np.broadcast_to(np.asarray(cfg.theta0, dtype=float), (R, m)).copy()
    else:
        theta0 = np.broadcast_to(ThetaVector.initial(cfg.flavor, m).values, (R, m)).copy()
    _check_theta(cfg.flavor, theta0)
    return theta0


def _run_single(cfg: ContourConfig, x: np.ndarray) -> ContourResult:
    """Scalar-loop version of :func:`contour_run` for one chain and one replication.

    Follows the same update rules and random streams as the vectorised loop;
    it only avoids array overhead on the per-iteration bookkeeping.
    """
    from bisect import bisect_left

    model, spec, flavor = cfg.model, cfg.partition, cfg.flavor
    d, m = model.domain_dim, spec.m
    psi = _initial_theta(cfg, 1)[0]
    simplex = flavor != "awsgld"
    norm = float(psi.sum()) if simplex else float(psi[-1])
    bn = BlockNoise([chain_generator(cfg.seed, 0, 0)], d, cfg.noise, cfg.block)
    bounds = spec.boundaries.tolist()
    scale, coef, zeta, lr = spec.scale, spec.coefficient, spec.zeta, cfg.lr
    step = math.sqrt(2.0 * lr * spec.tau)
    noisy_index = cfg.index_energy == "noisy" and cfg.noise.has_energy_noise
    log, floor = math.log, THETA_FLOOR
    U = float(model.energy(x))
    J = bisect_left(bounds, scale * U) + 1
    thr = cfg.stop_threshold
    hitting = np.full(1, -1, dtype=np.int64)
    if thr is not None and U <= thr:
        hitting[0] = 0
    n_trace = cfg.n_iter // cfg.theta_stride if cfg.theta_stride else 0
    n_keep = cfg.n_iter // cfg.sample_thin if cfg.sample_thin else 0
    theta_trace = np.empty((n_trace, 1, m))
    theta_iters = np.empty(n_trace, dtype=np.int64)
    samples = np.empty((n_keep, 1, 1, d))
    energies = np.empty((n_keep, 1, 1))
    mults = np.empty((n_keep, 1, 1))
    idxs = np.empty((n_keep, 1, 1), dtype=np.int64)
    tJs = np.empty((n_keep, 1, 1))
    min_mult = math.inf
    updates = 0
    k = 0
    for k in range(1, cfg.n_iter + 1):
        kick, gn, en = bn.next()
        a = max(psi[J - 1] / norm, floor)
        b = max(psi[J - 2] / norm, floor) if J > 1 else a
        mult = 1.0 + coef * (log(a) - log(b))
        if mult < min_mult:
            min_mult = mult
        g = model.gradient(x)
        if gn is not None:
            g = g + gn[0]
        x = x - (lr * mult) * g + step * kick[0]
        check_finite(x, k)
        U = float(model.energy(x))
        J = bisect_left(bounds, scale * (U + float(en[0])) if noisy_index else scale * U) + 1
        if k % cfg.broadcast_period == 0:
            omega = cfg.omega(k)
            w = psi[J - 1] / norm
            if flavor == "csgld":
                w = w**zeta
            shrink = 1.0 - omega * w
            if not shrink > 0:
                raise ThetaInvariantError(
                    f"{flavor}: step omega={omega:g} times theta(J)={w:.3g} reaches 1 at iteration {k}; "
                    "positivity would be lost, reduce omega"
                )
            if simplex:
                norm = norm / shrink
                psi[J - 1] += omega * norm * w
            else:
                psi[J - 1 :] += norm * (omega * w / shrink)
                norm = float(psi[-1])
            updates += 1
            if norm > 1e100 or updates % 4096 == 0:
                psi /= norm
                norm = float(psi.sum()) if simplex else float(psi[-1])
            if updates % cfg.check_every == 0:
                try:
                    _check_theta(flavor, psi / norm)
                except ThetaInvariantError as exc:
                    raise ThetaInvariantError(f"{exc} at iteration {k} (omega={omega:g})") from None
        if n_trace and k % cfg.theta_stride == 0:
            i = k // cfg.theta_stride - 1
            theta_trace[i, 0] = psi / norm
            theta_iters[i] = k
        if n_keep and k % cfg.sample_thin == 0:
            i = k // cfg.sample_thin - 1
            samples[i, 0, 0] = x
            energies[i, 0, 0] = U
            mults[i, 0, 0] = mult
            idxs[i, 0, 0] = J
            tJs[i, 0, 0] = psi[J - 1] / norm
        if thr is not None and U <= thr:
            hitting[0] = k
            break
    theta = (psi / norm)[None, :]
    if not simplex:
        theta[:, -1] = 1.0
    if n_trace:
        nt = min(n_trace, k // cfg.theta_stride)
        theta_trace, theta_iters = theta_trace[:nt], theta_iters[:nt]
    if n_keep:
        nk = min(n_keep, k // cfg.sample_thin)
        samples, energies, mults, idxs, tJs = samples[:nk], energies[:nk], mults[:nk], idxs[:nk], tJs[:nk]
    return ContourResult(
        theta=theta,
        theta_trace=theta_trace,
        theta_iters=theta_iters,
        samples=samples,
        energies=energies,
        multipliers=mults,
        indices=idxs,
        theta_at_index=tJs,
        sample_iters=(np.arange(1, samples.shape[0] + 1) * cfg.sample_thin if n_keep else np.empty(0, dtype=np.int64)),
        hitting=hitting,
        min_multiplier=min_mult,
        iterations=k,
    )


def contour_run(cfg: ContourConfig, scalar_path: bool = True) -> ContourResult:
    """Run CSGLD, ICSGLD or AWSGLD for ``R`` replications of ``P`` chains.

    Each iteration computes the multiplier from the current index, takes the
    SGLD step with the scaled gradient, indexes the new point and, every
    ``broadcast_period`` iterations, moves ``theta`` along the (chain
    averaged) random field.  The first index uses the exact energy at the
    starting point.

    ``theta`` is stored unnormalised as ``psi`` with ``theta = psi / sum(psi)``
    for the simplex flavours and ``theta = psi / psi[m]`` for awsgld.  In that
    form one stochastic-approximation step only touches the visited entries
    (or, for awsgld, adds a constant to a suffix), and the flavour's invariant
    holds by construction as long as ``omega * theta(J) < 1``, which is
    checked at every update.  The full invariant check on the normalised
    vector runs every ``check_every`` updates.

    A single replication of a single chain is run by a scalar loop with the
    same update rules and streams unless ``scalar_path`` is false.
    """
    model, spec, flavor = cfg.model, cfg.partition, cfg.flavor
    R, P, d, m = cfg.replications, cfg.chains, model.domain_dim, spec.m
    noise = cfg.noise
    X = initial_points(d, R, P, cfg.seed, cfg.x0, cfg.init_box)
    if scalar_path and R == 1 and P == 1:
        return _run_single(cfg, X[0, 0])
    simplex = flavor != "awsgld"
    psi = _initial_theta(cfg, R)
    norm = psi.sum(axis=1) if simplex else psi[:, -1].copy()

    def normalised() -> np.ndarray:
        return psi / norm[:, None]

    gens = [chain_generator(cfg.seed, r, p) for r in range(R) for p in range(P)]
    bn = BlockNoise(gens, d, noise, cfg.block)
    bounds = spec.boundaries
    scale = spec.scale
    coef = spec.coefficient
    step = math.sqrt(2.0 * cfg.lr * spec.tau)
    rows = np.arange(R)[:, None]
    rows_flat = np.arange(R)
    cols = np.arange(m)
    zeta = spec.zeta
    U = model.energy(X)
    J = np.searchsorted(bounds, scale * U, side="left") + 1
    hitting = np.full(R, -1, dtype=np.int64)
    thr = cfg.stop_threshold
    if thr is not None:
        hitting[(U <= thr).any(axis=1)] = 0
    n_trace = cfg.n_iter // cfg.theta_stride if cfg.theta_stride else 0
    n_keep = cfg.n_iter // cfg.sample_thin if cfg.sample_thin else 0
    theta_trace = np.empty((n_trace, R, m))
    theta_iters = np.empty(n_trace, dtype=np.int64)
    samples = np.empty((n_keep, R, P, d))
    energies = np.empty((n_keep, R, P))
    mults = np.empty((n_keep, R, P))
    idxs = np.empty((n_keep, R, P), dtype=np.int64)
    tJs = np.empty((n_keep, R, P))
    min_mult = math.inf
    updates = 0
    k = 0
    for k in range(1, cfg.n_iter + 1):
        kick, gn, en = bn.next()
        lo = np.maximum(J - 1, 1)
        nc = norm[:, None]
        mult = 1.0 + coef * (
            np.log(np.maximum(psi[rows, J - 1] / nc, THETA_FLOOR)) - np.log(np.maximum(psi[rows, lo - 1] / nc, THETA_FLOOR))
        )
        mm = mult.min()
        if mm < min_mult:
            min_mult = float(mm)
        g = model.gradient(X)
        if gn is not None:
            g = g + gn.reshape(R, P, d)
        X = X - (cfg.lr * mult)[..., None] * g + step * kick.reshape(R, P, d)
        check_finite(X, k)
        U = model.energy(X)
        if cfg.index_energy == "noisy" and en is not None:
            J = np.searchsorted(bounds, scale * (U + en.reshape(R, P)), side="left") + 1
        else:
            J = np.searchsorted(bounds, scale * U, side="left") + 1
        if k % cfg.broadcast_period == 0:
            omega = cfg.omega(k)
            w = psi[rows, J - 1] / norm[:, None]
            if flavor == "csgld":
                w = w**zeta
            wbar = w.mean(axis=1)
            shrink = 1.0 - omega * wbar
            if not shrink.min() > 0:
                raise ThetaInvariantError(
                    f"{flavor}: step omega={omega:g} times theta(J)={wbar.max():.3g} reaches 1 at iteration {k}; "
                    "positivity would be lost, reduce omega"
                )
            if simplex:
                norm = norm / shrink
                delta = (omega / P) * norm
                if P == 1:
                    psi[rows_flat, J[:, 0] - 1] += delta * w[:, 0]
                else:
                    np.add.at(psi, (np.broadcast_to(rows, J.shape), J - 1), delta[:, None] * w)
            else:
                delta = norm * (omega * wbar / shrink)
                if R == 1:
                    psi[0, J[0, 0] - 1 :] += delta[0]
                else:
                    psi += delta[:, None] * (cols >= (J[:, :1] - 1))
                norm = psi[:, -1].copy()
            updates += 1
            if norm.max() > 1e100 or updates % 4096 == 0:
                psi /= norm[:, None]
                norm = psi.sum(axis=1) if simplex else psi[:, -1].copy()
            if updates % cfg.check_every == 0:
                try:
                    _check_theta(flavor, normalised())
                except ThetaInvariantError as exc:
                    raise ThetaInvariantError(f"{exc} at iteration {k} (omega={omega:g})") from None
        if n_trace and k % cfg.theta_stride == 0:
            i = k // cfg.theta_stride - 1
            theta_trace[i] = normalised()
            theta_iters[i] = k
        if n_keep and k % cfg.sample_thin == 0:
            i = k // cfg.sample_thin - 1
            samples[i] = X
            energies[i] = U
            mults[i] = mult
            idxs[i] = J
            tJs[i] = psi[rows, J - 1] / norm[:, None]
        if thr is not None:
            new = (hitting < 0) & (U <= thr).any(axis=1)
            if new.any():
                hitting[new] = k
                if (hitting >= 0).all():
                    break
    done = k
    theta = normalised()
    if not simplex:
        theta[:, -1] = 1.0
    if n_trace:
        nt = min(n_trace, done // cfg.theta_stride)
        theta_trace, theta_iters = theta_trace[:nt], theta_iters[:nt]
    if n_keep:
        nk = min(n_keep, done // cfg.sample_thin)
        samples, energies, mults, idxs, tJs = samples[:nk], energies[:nk], mults[:nk], idxs[:nk], tJs[:nk]
    return ContourResult(
        theta=theta,
        theta_trace=theta_trace,
        theta_iters=theta_iters,
        samples=samples,
        energies=energies,
        multipliers=mults,
        indices=idxs,
        theta_at_index=tJs,
        sample_iters=(np.arange(1, samples.shape[0] + 1) * cfg.sample_thin if n_keep else np.empty(0, dtype=np.int64)),
        hitting=hitting,
        min_multiplier=min_mult,
        iterations=done,
    )
