"""Stochastic gradient oracles and the two-point perturbation-averaged estimator.

An oracle answers ``query(w, step)`` with an unbiased gradient estimate whose
noise second moment is at most ``sigma**2`` per query.  Three noise models:

* ``ExactGradient``: no noise.
* ``IsotropicGradientNoise``: adds N(0, (sigma^2/dim) I), a fresh draw per
  query, so E||noise||^2 = sigma^2.
* ``CoordinateBoundedNoise``: the worst-case model used by the lower-bound
  experiments.  At step t it adds +/- cap on coordinate t+1 with equal
  probability.  The sign is drawn once per two-point pair (queries 2j and
  2j+1 of a step share it, independent across pairs and steps), which makes
  the per-step averaged noise have second moment exactly cap^2/k while each
  individual query still satisfies the unbiased, variance <= sigma^2
  contract.  Signs are a pure function of (stream key, step, pair), so a
  replay can reconstruct the exact noise sequence.

``nso_gradient_estimate`` is the symmetric two-point estimator: k
perturbations, 2k oracle queries, average of g(w+u) and g(w-u) over the k
pairs.  For quadratics the perturbation contribution cancels exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PerturbationDist, RngStream
from .objectives import Objective

__all__ = [
    "ExactGradient",
    "IsotropicGradientNoise",
    "CoordinateBoundedNoise",
    "CoordinateNoiseExhausted",
    "GradOracle",
    "pair_sign",
    "nso_gradient_estimate",
    "delta_xi_decomposition",
    "noise_to_spec",
    "noise_from_spec",
]


@dataclass(frozen=True)
class ExactGradient:
    sigma: float = 0.0


@dataclass(frozen=True)
class IsotropicGradientNoise:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class CoordinateBoundedNoise:
    sigma: float
    cap: float | None = None  # defaults to sigma

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        cap = self.sigma if self.cap is None else self.cap
        if cap < 0:
            raise ValueError("cap must be >= 0")
        if cap > self.sigma + 1e-12:
            # per-query second moment is cap^2; the contract needs <= sigma^2
            raise ValueError("cap must not exceed sigma")
        object.__setattr__(self, "cap", cap)


NoiseModel = ExactGradient | IsotropicGradientNoise | CoordinateBoundedNoise


class CoordinateNoiseExhausted(ValueError):
    """Raised when step+1 is outside the coordinate range of the objective."""


def pair_sign(rng: RngStream, step: int, pair: int) -> float:
    """The +/-1 sign CoordinateBoundedNoise uses for (step, pair).

    Pure function of the stream key, so trajectories driven by this model
    can be replayed without re-issuing oracle calls.
    """
    s = rng.child(f"s{step}", pair)
    return 1.0 if s.gen.integers(0, 2) == 1 else -1.0


class GradOracle:
    """Counting gradient oracle over an objective with one noise model."""

    def __init__(self, objective: Objective, noise: NoiseModel, rng: RngStream | None = None):
        if not isinstance(noise, ExactGradient) and rng is None:
            raise ValueError("noisy oracles need an RngStream")
        self.objective = objective
        self.noise = noise
        self.rng = rng
        self.queries = 0
        self._step = None
        self._q = 0

    def query(self, w: np.ndarray, step: int) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if not np.all(np.isfinite(w)):
            raise ValueError("query point has non-finite entries")
        if step != self._step:
            self._step = step
            self._q = 0
        q = self._q
        self._q += 1
        self.queries += 1

        g = self.objective.gradient(w)
        noise = self.noise
        if isinstance(noise, ExactGradient):
            return g
        if isinstance(noise, IsotropicGradientNoise):
            scale = noise.sigma / np.sqrt(self.objective.dim)
            return g + scale * self.rng.gen.standard_normal(self.objective.dim)
        # CoordinateBoundedNoise
        coord = step + 1
        if coord >= self.objective.dim:
            raise CoordinateNoiseExhausted(
                f"step {step} needs noise coordinate {coord} but dim is {self.objective.dim}"
            )
        g = g.copy()
        g[coord] += pair_sign(self.rng, step, q // 2) * noise.cap
        return g


def nso_gradient_estimate(
    oracle: GradOracle,
    dist: PerturbationDist,
    w: np.ndarray,
    k: int,
    step: int,
    rng: RngStream,
) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric two-point estimate at w: exactly 2k oracle queries.

    Returns (estimate, perturbations) with perturbations of shape (k, dim).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    us = dist.sample_batch(rng, k)
    acc = np.zeros_like(np.asarray(w, dtype=float))
    for j in range(k):
        acc += oracle.query(w + us[j], step)
        acc += oracle.query(w - us[j], step)
    return acc / (2.0 * k), us


def delta_xi_decomposition(
    oracle: GradOracle,
    dist: PerturbationDist,
    w: np.ndarray,
    k: int,
    reps: int,
    rng: RngStream,
    grad_reference: np.ndarray | None = None,
) -> tuple[float, float]:
    """Empirical second moments of the estimator's two error components.

    delta: perturbation-averaging error, (1/2k) sum [grad f(w+u) + grad f(w-u)]
    minus the smoothed gradient at w.  xi: oracle-noise error, measured with
    the same perturbations (coupled), so the split is exact per sample.
    Returns (var_delta, var_xi) as means of squared norms over ``reps`` draws.

    Needs the smoothed gradient at w: either the objective's closed form or
    an explicit ``grad_reference``.
    """
    obj = oracle.objective
    w = np.asarray(w, dtype=float)
    if grad_reference is None:
        if obj.smoothed_gradient is not None:
            grad_reference = obj.smoothed_gradient(w, dist)
        if grad_reference is None:
            raise ValueError(
                "objective has no smoothed-gradient closed form here; "
                "pass grad_reference (e.g. a high-sample grad_F estimate)"
            )
    sum_d = 0.0
    sum_x = 0.0
    for _ in range(reps):
        us = dist.sample_batch(rng, k)
        exact = np.zeros_like(w)
        noisy = np.zeros_like(w)
        for j in range(k):
            up, um = w + us[j], w - us[j]
            exact += obj.gradient(up) + obj.gradient(um)
            noisy += oracle.query(up, 0) + oracle.query(um, 0)
        exact /= 2.0 * k
        noisy /= 2.0 * k
        d = exact - grad_reference
        x = noisy - exact
        sum_d += float(d @ d)
        sum_x += float(x @ x)
    return sum_d / reps, sum_x / reps


# -- serialization helpers (used by trajectory replay) -----------------------


def noise_to_spec(noise: NoiseModel) -> dict:
    if isinstance(noise, ExactGradient):
        return {"kind": "exact"}
    if isinstance(noise, IsotropicGradientNoise):
        return {"kind": "isotropic", "sigma": noise.sigma}
    return {"kind": "coordinate", "sigma": noise.sigma, "cap": noise.cap}


def noise_from_spec(spec: dict) -> NoiseModel:
    kind = spec["kind"]
    if kind == "exact":
        return ExactGradient()
    if kind == "isotropic":
        return IsotropicGradientNoise(spec["sigma"])
    if kind == "coordinate":
        return CoordinateBoundedNoise(spec["sigma"], spec["cap"])
    raise ValueError(f"unknown noise kind {kind!r}")
