"""Analytic energy functions with exact gradients and synthetic mini-batch noise.

Every target exposes a potential energy ``U(x)`` (the negative log density up to
a constant) and its gradient.  Both accept arrays of shape ``(..., d)`` so that
replicated chains can be evaluated in a single call.  Stochastic estimators are
emulated by adding centred noise to the exact values, except for the Gaussian
mixture posterior which stores a real synthetic dataset and evaluates honest
subsample sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "BENCHMARK_SETTINGS",
    "DimensionError",
    "NoiseSpec",
    "PosteriorTarget",
    "TargetModel",
    "energy",
    "gauss_mix_1d",
    "gauss_mix_posterior",
    "gradient",
    "lattice25",
    "make_benchmark",
    "noisy_energy",
    "noisy_gradient",
    "rugged2d",
    "shallow_traps",
]

Array = np.ndarray


class DimensionError(ValueError):
    """Raised when a point does not have the dimension of the target."""


# ---------------------------------------------------------------------------
# Noise model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Centred additive noise applied to exact energies and gradients.

    ``energy_noise`` is one of ``"none"``, ``"gaussian"`` (standard deviation
    ``energy_scale``) or ``"student_t"`` (``energy_scale`` times a t variate
    with ``dof`` degrees of freedom).  ``gradient_noise`` is ``"none"`` or
    ``"gaussian"`` with per-component standard deviation ``gradient_std``.
    """

    energy_noise: str = "none"
    energy_scale: float = 0.0
    dof: float = 5.0
    gradient_noise: str = "none"
    gradient_std: float = 0.0
    seedable: bool = True

    def __post_init__(self) -> None:
        if self.energy_noise not in ("none", "gaussian", "student_t"):
            raise ValueError(f"unknown energy noise {self.energy_noise!r}")
        if self.gradient_noise not in ("none", "gaussian"):
            raise ValueError(f"unknown gradient noise {self.gradient_noise!r}")
        if self.energy_scale < 0 or self.gradient_std < 0:
            raise ValueError("noise scales must be non-negative")
        if self.energy_noise == "student_t" and not self.dof > 2:
            raise ValueError("student_t noise needs dof > 2 for a finite variance")

    @property
    def has_energy_noise(self) -> bool:
        return self.energy_noise != "none"

    @property
    def has_gradient_noise(self) -> bool:
        return self.gradient_noise != "none"

    @property
    def energy_variance(self) -> float:
        """Variance of one energy perturbation."""
        if self.energy_noise == "gaussian":
            return self.energy_scale**2
        if self.energy_noise == "student_t":
            return self.energy_scale**2 * self.dof / (self.dof - 2.0)
        return 0.0

    def draw_energy(self, rng: np.random.Generator, shape=()) -> Array | float:
        if self.energy_noise == "gaussian":
            return self.energy_scale * rng.standard_normal(shape)
        if self.energy_noise == "student_t":
            return self.energy_scale * rng.standard_t(self.dof, shape)
        return np.zeros(shape) if shape != () else 0.0

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls()

    @classmethod
    def gaussian(cls, energy_std: float = 0.0, gradient_std: float = 0.0) -> "NoiseSpec":
        return cls(
            energy_noise="gaussian" if energy_std > 0 else "none",
            energy_scale=energy_std,
            gradient_noise="gaussian" if gradient_std > 0 else "none",
            gradient_std=gradient_std,
        )


# ---------------------------------------------------------------------------
# Target container
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TargetModel:
    """An immutable energy oracle.

    ``kind`` names the family, ``parameters`` holds the defining constants and
    ``metadata`` carries experiment defaults such as the known minimum value.
    """

    kind: str
    parameters: tuple[float, ...]
    domain_dim: int
    _energy: Callable[[Array], Array] = field(repr=False)
    _gradient: Callable[[Array], Array] = field(repr=False)
    metadata: Mapping[str, object] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "metadata", MappingProxyType(dict(self.metadata)))

    def _check(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.domain_dim:
            raise DimensionError(
                f"{self.name or self.kind} expects points of dimension {self.domain_dim}, "
                f"got shape {x.shape}"
            )
        return x

    def energy(self, x) -> Array:
        return self._energy(self._check(x))

    def gradient(self, x) -> Array:
        return self._gradient(self._check(x))


def energy(model: TargetModel, x) -> Array | float:
    """Exact energy ``U(x)``; returns a float for a single point."""
    out = model.energy(x)
    return float(out) if np.ndim(out) == 0 else out


def gradient(model: TargetModel, x) -> Array:
    """Exact gradient of ``U`` at ``x`` (same shape as ``x``)."""
    return model.gradient(x)


def noisy_energy(model: TargetModel, noise: NoiseSpec, x, rng: np.random.Generator):
    """Unbiased stochastic energy ``U(x) + e`` with ``e`` drawn from ``noise``."""
    u = model.energy(x)
    if not noise.has_energy_noise:
        return float(u) if np.ndim(u) == 0 else u
    e = noise.draw_energy(rng, np.shape(u))
    out = u + e
    return float(out) if np.ndim(out) == 0 else out


def noisy_gradient(model: TargetModel, noise: NoiseSpec, x, rng: np.random.Generator) -> Array:
    """Unbiased stochastic gradient with componentwise Gaussian perturbation."""
    g = model.gradient(x)
    if not noise.has_gradient_noise:
        return g
    return g + noise.gradient_std * rng.standard_normal(g.shape)


# ---------------------------------------------------------------------------
# One-dimensional Gaussian mixture
# ---------------------------------------------------------------------------


def gauss_mix_1d(
    weights: Sequence[float] = (0.4, 0.6),
    means: Sequence[float] = (-3.0, 2.0),
    stds: Sequence[float] = (0.7, 0.5),
    normalize: bool = True,
) -> TargetModel:
    """Mixture ``sum_k w_k N(mu_k, s_k^2)`` with energy ``-log p(x)``.

    The energy includes the normalising constant, so ``exp(-U)`` integrates to
    one.  ``normalize=False`` drops the ``log sqrt(2 pi)`` term, which makes a
    single standard normal component have energy exactly ``x^2 / 2``.
    """
    w = np.asarray(weights, dtype=float)
    mu = np.asarray(means, dtype=float)
    s = np.asarray(stds, dtype=float)
    if not (w.shape == mu.shape == s.shape) or w.ndim != 1:
        raise ValueError("weights, means and stds must be equal-length sequences")
    if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("mixture weights must be positive and sum to 1")
    if np.any(s <= 0):
        raise ValueError("component standard deviations must be positive")
    log_coef = np.log(w) - np.log(s) - (0.5 * math.log(2 * math.pi) if normalize else 0.0)

    inv_var = 1.0 / (s * s)
    K = w.size

    def _log_terms(x: Array) -> Array:
        z = (x[..., :1] - mu) / s
        return log_coef - 0.5 * z * z

    # one and two components are special-cased: these run once per sampler step
    if K == 1:
        c0, m0, iv0 = float(log_coef[0]), float(mu[0]), float(inv_var[0])

        def _energy(x: Array) -> Array:
            t = x[..., 0] - m0
            return 0.5 * iv0 * t * t - c0

        def _gradient(x: Array) -> Array:
            return (x[..., :1] - m0) * iv0

    elif K == 2:

        def _energy(x: Array) -> Array:
            lt = _log_terms(x)
            return -np.logaddexp(lt[..., 0], lt[..., 1])

        def _gradient(x: Array) -> Array:
            lt = _log_terms(x)
            r0 = 1.0 / (1.0 + np.exp(np.clip(lt[..., 1:] - lt[..., :1], -700.0, 700.0)))
            d = x[..., :1] - mu
            return r0 * d[..., :1] * inv_var[0] + (1.0 - r0) * d[..., 1:] * inv_var[1]

    else:

        def _energy(x: Array) -> Array:
            lt = _log_terms(x)
            top = lt.max(axis=-1, keepdims=True)
            return -(top[..., 0] + np.log(np.exp(lt - top).sum(axis=-1)))

        def _gradient(x: Array) -> Array:
            lt = _log_terms(x)
            e = np.exp(lt - lt.max(axis=-1, keepdims=True))
            resp = e / e.sum(axis=-1, keepdims=True)
            return np.sum(resp * (x[..., :1] - mu) * inv_var, axis=-1, keepdims=True)

    return TargetModel(
        kind="gauss_mix_1d",
        parameters=tuple(np.concatenate([w, mu, s]).tolist()),
        domain_dim=1,
        _energy=_energy,
        _gradient=_gradient,
        metadata={"weights": tuple(w), "means": tuple(mu), "stds": tuple(s), "normalized": normalize},
        name="GaussMix1D",
    )


# ---------------------------------------------------------------------------
# Two-dimensional test landscapes
# ---------------------------------------------------------------------------


def lattice25(regularize: bool = True, radius_sq: float = 20.0) -> TargetModel:
    """Twenty-five well lattice ``0.2|x|^2 - 2(cos 2pi x1 + cos 2pi x2)``.

    With ``regularize`` the penalty ``1{|x|^2 > radius_sq}(|x|^2 - radius_sq)``
    is added, keeping samplers away from the far tails.
    """
    two_pi = 2.0 * math.pi

    def _energy(x: Array) -> Array:
        r2 = np.sum(x * x, axis=-1)
        u = 0.2 * r2 - 2.0 * np.sum(np.cos(two_pi * x), axis=-1)
        if regularize:
            u = u + np.maximum(r2 - radius_sq, 0.0)
        return u

    def _gradient(x: Array) -> Array:
        g = 0.4 * x + 2.0 * two_pi * np.sin(two_pi * x)
        if regularize:
            outside = np.sum(x * x, axis=-1, keepdims=True) > radius_sq
            g = g + np.where(outside, 2.0 * x, 0.0)
        return g

    return TargetModel(
        kind="lattice25",
        parameters=(0.2, 2.0, radius_sq if regularize else math.inf),
        domain_dim=2,
        _energy=_energy,
        _gradient=_gradient,
        metadata={"u_min": -4.0, "regularize": regularize},
        name="Lattice25",
    )


def rugged2d() -> TargetModel:
    """Rugged two-dimensional landscape with many narrow local minima."""

    def _parts(x: Array):
        x1, x2 = x[..., 0], x[..., 1]
        s20_1, s20_2 = np.sin(20 * x1), np.sin(20 * x2)
        c20_1, c20_2 = np.cos(20 * x1), np.cos(20 * x2)
        s10_1, c10_1 = np.sin(10 * x1), np.cos(10 * x1)
        s10_2, c10_2 = np.sin(10 * x2), np.cos(10 * x2)
        a = x1 * s20_2 + x2 * s20_1
        b = np.cosh(s10_1 * x1)
        c = x1 * c10_2 - x2 * s10_1
        e = np.cosh(c20_2 * x2)
        return x1, x2, s20_1, s20_2, c20_1, c20_2, s10_1, c10_1, s10_2, c10_2, a, b, c, e

    def _energy(x: Array) -> Array:
        *_, a, b, c, e = _parts(x)
        return -(a * a) * b - (c * c) * e

    def _gradient(x: Array) -> Array:
        x1, x2, s20_1, s20_2, c20_1, c20_2, s10_1, c10_1, s10_2, c10_2, a, b, c, e = _parts(x)
        a1 = s20_2 + 20 * x2 * c20_1
        a2 = 20 * x1 * c20_2 + s20_1
        b1 = np.sinh(x1 * s10_1) * (s10_1 + 10 * x1 * c10_1)
        c1 = c10_2 - 10 * x2 * c10_1
        c2 = -10 * x1 * s10_2 - s10_1
        e2 = np.sinh(x2 * c20_2) * (c20_2 - 20 * x2 * s20_2)
        g1 = -2 * a * a1 * b - a * a * b1 - 2 * c * c1 * e
        g2 = -2 * a * a2 * b - 2 * c * c2 * e - c * c * e2
        return np.stack([g1, g2], axis=-1)

    return TargetModel(
        kind="rugged2d",
        parameters=(),
        domain_dim=2,
        _energy=_energy,
        _gradient=_gradient,
        name="Rugged2D",
    )


def shallow_traps(d: int = 2) -> TargetModel:
    """``U_d(x) = 0.05|x|^2 - 0.01 |x|^2 sum_i cos(2 x_i)``: many shallow minima."""
    if d < 1:
        raise ValueError("dimension must be positive")

    def _energy(x: Array) -> Array:
        r2 = np.sum(x * x, axis=-1)
        return 0.05 * r2 - 0.01 * r2 * np.sum(np.cos(2 * x), axis=-1)

    def _gradient(x: Array) -> Array:
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        cs = np.sum(np.cos(2 * x), axis=-1, keepdims=True)
        return 2 * x * (0.05 - 0.01 * cs) + 0.02 * r2 * np.sin(2 * x)

    return TargetModel(
        kind="shallow_traps",
        parameters=(0.05, 0.01),
        domain_dim=d,
        _energy=_energy,
        _gradient=_gradient,
        metadata={"u_min": 0.0},
        name=f"ShallowTraps{d}",
    )


# ---------------------------------------------------------------------------
# Optimisation benchmarks
# ---------------------------------------------------------------------------


def _idx(x: Array) -> Array:
    return np.arange(1, x.shape[-1] + 1, dtype=float)


def _rastrigin(x):
    return 10.0 * x.shape[-1] + np.sum(x * x - 10.0 * np.cos(2 * math.pi * x), axis=-1)


def _rastrigin_grad(x):
    return 2 * x + 20 * math.pi * np.sin(2 * math.pi * x)


def _griewank(x):
    root = np.sqrt(_idx(x))
    return 1.0 + np.sum(x * x, axis=-1) / 4000.0 - np.prod(np.cos(x / root), axis=-1)


def _griewank_grad(x):
    root = np.sqrt(_idx(x))
    cos = np.cos(x / root)
    ones = np.ones(x.shape[:-1] + (1,))
    # product of every cosine except the i-th, without dividing by cos
    left = np.cumprod(np.concatenate([ones, cos[..., :-1]], axis=-1), axis=-1)
    right = np.cumprod(np.concatenate([ones, cos[..., :0:-1]], axis=-1), axis=-1)[..., ::-1]
    return x / 2000.0 + np.sin(x / root) / root * left * right


def _sum_squares(x):
    return np.sum(_idx(x) * x * x, axis=-1)


def _sum_squares_grad(x):
    return 2 * _idx(x) * x


def _rosenbrock(x):
    a, b = x[..., :-1], x[..., 1:]
    return np.sum(100.0 * (b - a * a) ** 2 + (a - 1.0) ** 2, axis=-1)


def _rosenbrock_grad(x):
    a, b = x[..., :-1], x[..., 1:]
    t = b - a * a
    g = np.zeros_like(x)
    g[..., :-1] += -400.0 * a * t + 2.0 * (a - 1.0)
    g[..., 1:] += 200.0 * t
    return g


def _zakharov(x):
    s = np.sum(0.5 * _idx(x) * x, axis=-1)
    return np.sum(x * x, axis=-1) + s**2 + s**4


def _zakharov_grad(x):
    i = _idx(x)
    s = np.sum(0.5 * i * x, axis=-1, keepdims=True)
    return 2 * x + (2 * s + 4 * s**3) * 0.5 * i


def _powell_blocks(x):
    if x.shape[-1] % 4:
        raise DimensionError("Powell requires a dimension divisible by 4")
    xb = x.reshape(x.shape[:-1] + (-1, 4))
    return xb[..., 0], xb[..., 1], xb[..., 2], xb[..., 3]


def _powell(x):
    a, b, c, e = _powell_blocks(x)
    return np.sum((a + 10 * b) ** 2 + 5 * (c - e) ** 2 + (b - 2 * c) ** 4 + 10 * (a - e) ** 4, axis=-1)


def _powell_grad(x):
    a, b, c, e = _powell_blocks(x)
    t1, t2, t3, t4 = a + 10 * b, c - e, b - 2 * c, a - e
    g = np.stack(
        [
            2 * t1 + 40 * t4**3,
            20 * t1 + 4 * t3**3,
            10 * t2 - 8 * t3**3,
            -10 * t2 - 40 * t4**3,
        ],
        axis=-1,
    )
    return g.reshape(x.shape)


def _dixon_price(x):
    i = _idx(x)[1:]
    t = 2 * x[..., 1:] ** 2 - x[..., :-1]
    return (x[..., 0] - 1.0) ** 2 + np.sum(i * t * t, axis=-1)


def _dixon_price_grad(x):
    i = _idx(x)[1:]
    t = 2 * x[..., 1:] ** 2 - x[..., :-1]
    g = np.zeros_like(x)
    g[..., 0] = 2 * (x[..., 0] - 1.0)
    g[..., 1:] += 8 * i * t * x[..., 1:]
    g[..., :-1] += -2 * i * t
    return g


def _levy(x):
    w = 1.0 + (x - 1.0) / 4.0
    head = np.sin(math.pi * w[..., 0]) ** 2
    wi = w[..., :-1]
    body = np.sum((wi - 1) ** 2 * (1 + 10 * np.sin(math.pi * wi + 1) ** 2), axis=-1)
    wd = w[..., -1]
    tail = (wd - 1) ** 2 * (1 + np.sin(2 * math.pi * wd) ** 2)
    return head + body + tail


def _levy_grad(x):
    w = 1.0 + (x - 1.0) / 4.0
    gw = np.zeros_like(x)
    gw[..., 0] += math.pi * np.sin(2 * math.pi * w[..., 0])
    wi = w[..., :-1]
    gw[..., :-1] += 2 * (wi - 1) * (1 + 10 * np.sin(math.pi * wi + 1) ** 2) + (wi - 1) ** 2 * 10 * math.pi * np.sin(
        2 * (math.pi * wi + 1)
    )
    wd = w[..., -1]
    gw[..., -1] += 2 * (wd - 1) * (1 + np.sin(2 * math.pi * wd) ** 2) + (wd - 1) ** 2 * 2 * math.pi * np.sin(
        4 * math.pi * wd
    )
    return gw / 4.0


def _sphere(x):
    return np.sum(x * x, axis=-1)


def _sphere_grad(x):
    return 2 * x


def _ackley(x):
    d = x.shape[-1]
    s = np.sqrt(np.sum(x * x, axis=-1) / d)
    return -20.0 * np.exp(-0.2 * s) - np.exp(np.sum(np.cos(2 * math.pi * x), axis=-1) / d) + 20.0 + math.e


def _ackley_grad(x):
    d = x.shape[-1]
    s = np.sqrt(np.sum(x * x, axis=-1, keepdims=True) / d)
    safe = np.where(s > 0, s, 1.0)
    radial = np.where(s > 0, 4.0 * np.exp(-0.2 * s) * x / (d * safe), 0.0)
    cosine = np.exp(np.sum(np.cos(2 * math.pi * x), axis=-1, keepdims=True) / d)
    return radial + cosine * 2 * math.pi * np.sin(2 * math.pi * x) / d


_BENCHMARK_FUNCS: dict[str, tuple[Callable, Callable, tuple[float, float]]] = {
    # name: (energy, gradient, conventional search box used for initial points)
    "Rastrigin": (_rastrigin, _rastrigin_grad, (-5.12, 5.12)),
    "Griewank": (_griewank, _griewank_grad, (-600.0, 600.0)),
    "SumSquares": (_sum_squares, _sum_squares_grad, (-10.0, 10.0)),
    "Rosenbrock": (_rosenbrock, _rosenbrock_grad, (-5.0, 10.0)),
    "Zakharov": (_zakharov, _zakharov_grad, (-5.0, 10.0)),
    "Powell": (_powell, _powell_grad, (-4.0, 5.0)),
    "DixonPrice": (_dixon_price, _dixon_price_grad, (-10.0, 10.0)),
    "Levy": (_levy, _levy_grad, (-10.0, 10.0)),
    "Sphere": (_sphere, _sphere_grad, (-5.12, 5.12)),
    "Ackley": (_ackley, _ackley_grad, (-32.768, 32.768)),
}

#: Dimension and sampler defaults per benchmark: learning rate, temperature,
#: energy bandwidth for 10 and 100 subregions, zeta for 10 and 100 subregions,
#: and the accuracy tolerance of the hitting set.
BENCHMARK_SETTINGS: Mapping[str, Mapping[str, object]] = MappingProxyType(
    {
        "Rastrigin": {"dim": 20, "lr": 5e-4, "tau": 5.0, "du": (30.0, 3.0), "zeta": (0.02, 0.02), "rho": 75.0},
        "Griewank": {"dim": 20, "lr": 0.1, "tau": 10.0, "du": (50.0, 5.0), "zeta": (10.0, 10.0), "rho": 25.0},
        "SumSquares": {"dim": 20, "lr": 0.01, "tau": 0.01, "du": (10.0, 1.0), "zeta": (1.0, 1.0), "rho": 1.5},
        "Rosenbrock": {"dim": 20, "lr": 1e-5, "tau": 10.0, "du": (30.0, 3.0), "zeta": (100.0, 10.0), "rho": 20.0},
        "Zakharov": {"dim": 20, "lr": 1e-9, "tau": 1e4, "du": (500.0, 50.0), "zeta": (1.0, 0.5), "rho": 500.0},
        "Powell": {"dim": 24, "lr": 1e-4, "tau": 1.0, "du": (20.0, 2.0), "zeta": (500.0, 200.0), "rho": 1.0},
        "DixonPrice": {"dim": 25, "lr": 1e-5, "tau": 10.0, "du": (20.0, 2.0), "zeta": (100.0, 20.0), "rho": 10.0},
        "Levy": {"dim": 30, "lr": 1e-4, "tau": 100.0, "du": (600.0, 60.0), "zeta": (100.0, 10.0), "rho": 400.0},
        "Sphere": {"dim": 30, "lr": 0.01, "tau": 1e-4, "du": (20.0, 2.0), "zeta": (1.0, 1.0), "rho": 1e-3},
        "Ackley": {"dim": 30, "lr": 0.01, "tau": 0.05, "du": (0.4, 0.04), "zeta": (0.2, 0.2), "rho": 0.4},
    }
)


def make_benchmark(name: str, dim: int | None = None) -> TargetModel:
    """Build one of the ten optimisation benchmarks with its default settings.

    ``dim`` defaults to the tabulated dimension; any other value is rejected
    because the attached hyperparameters were tuned for that dimension only.
    """
    if name not in _BENCHMARK_FUNCS:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(_BENCHMARK_FUNCS)}")
    settings = BENCHMARK_SETTINGS[name]
    if dim is None:
        dim = int(settings["dim"])
    if dim != settings["dim"]:
        raise DimensionError(f"{name} is only supported in dimension {settings['dim']}, not {dim}")
    fn, grad, box = _BENCHMARK_FUNCS[name]
    du10, du100 = settings["du"]
    z10, z100 = settings["zeta"]
    meta = {
        "u_min": 0.0,
        "lr": settings["lr"],
        "tau": settings["tau"],
        "du_10": du10,
        "du_100": du100,
        "zeta_10": z10,
        "zeta_100": z100,
        "rho": settings["rho"],
        "box": box,
    }
    return TargetModel(
        kind="benchmark",
        parameters=(),
        domain_dim=dim,
        _energy=fn,
        _gradient=grad,
        metadata=meta,
        name=f"{name}{dim}",
    )


# ---------------------------------------------------------------------------
# Mixture posterior with a genuine dataset
# ---------------------------------------------------------------------------


class PosteriorTarget(TargetModel):
    """Posterior over ``beta`` for ``x_i | beta ~ 0.5 N(beta, s^2) + 0.5 N(phi - beta, s^2)``.

    A flat prior is used, so the energy is the summed negative log-likelihood.
    Arrays of ``beta`` values of shape ``(C,)`` or ``(C, 1)`` are evaluated
    against index sets of shape ``(n,)`` (shared) or ``(C, n)`` (per chain).
    """

    def __init__(self, data: Array, phi: float, sigma: float, seed: int, beta_true: float):
        self.data = np.asarray(data, dtype=float)
        self.data.setflags(write=False)
        self.phi = float(phi)
        self.sigma = float(sigma)
        self._log_norm = math.log(self.sigma) + 0.5 * math.log(2 * math.pi) + math.log(2.0)
        super().__init__(
            kind="gauss_mix_posterior",
            parameters=(self.phi, self.sigma, float(len(self.data))),
            domain_dim=1,
            _energy=self._full_energy,
            _gradient=self._full_gradient,
            metadata={"seed": seed, "beta_true": beta_true, "N": len(self.data)},
            name="GaussMixPosterior",
        )

    @property
    def n_data(self) -> int:
        return len(self.data)

    def unit_losses(self, beta, idx=None) -> Array:
        """Per-observation negative log-likelihoods ``L(x_i | beta)``.

        ``beta`` has shape ``(...,)``; the result has shape ``beta.shape + (n,)``
        (or broadcasts against a per-chain ``idx`` of shape ``beta.shape + (n,)``).
        """
        beta = np.asarray(beta, dtype=float)
        x = self.data if idx is None else self.data[idx]
        b = beta[..., None]
        z1 = (x - b) / self.sigma
        z2 = (x - self.phi + b) / self.sigma
        return self._log_norm - np.logaddexp(-0.5 * z1 * z1, -0.5 * z2 * z2)

    def unit_gradients(self, beta, idx=None) -> Array:
        beta = np.asarray(beta, dtype=float)
        x = self.data if idx is None else self.data[idx]
        b = beta[..., None]
        z1 = (x - b) / self.sigma
        z2 = (x - self.phi + b) / self.sigma
        # responsibility of the first component
        r = 1.0 / (1.0 + np.exp(np.clip(0.5 * z1 * z1 - 0.5 * z2 * z2, -700, 700)))
        return -(r * z1 - (1.0 - r) * z2) / self.sigma

    def batch_energy(self, beta, idx) -> Array:
        """Scaled subsample energy ``(N/n) sum_{i in B} L(x_i | beta)``."""
        n = np.shape(idx)[-1]
        if n == 0:
            raise ValueError("empty mini-batch")
        return self.n_data / n * np.sum(self.unit_losses(beta, idx), axis=-1)

    def batch_gradient(self, beta, idx) -> Array:
        n = np.shape(idx)[-1]
        if n == 0:
            raise ValueError("empty mini-batch")
        return self.n_data / n * np.sum(self.unit_gradients(beta, idx), axis=-1)

    def _full_energy(self, x: Array) -> Array:
        return np.sum(self.unit_losses(x[..., 0]), axis=-1)

    def _full_gradient(self, x: Array) -> Array:
        return np.sum(self.unit_gradients(x[..., 0]), axis=-1)[..., None]


def gauss_mix_posterior(
    n_data: int = 100_000,
    phi: float = 20.0,
    sigma: float = 5.0,
    beta_true: float = -5.0,
    seed: int = 2021,
) -> PosteriorTarget:
    """Generate the synthetic dataset at ``beta_true`` from ``seed`` and wrap it."""
    rng = np.random.default_rng(seed)
    first = rng.random(n_data) < 0.5
    centers = np.where(first, beta_true, phi - beta_true)
    data = centers + sigma * rng.standard_normal(n_data)
    return PosteriorTarget(data, phi=phi, sigma=sigma, seed=seed, beta_true=beta_true)
