"""Hessian diagnostics, smoothed-objective measurement, and the closed-form
rate/bound calculators.

The Monte Carlo pieces (trace probes, smoothed-gap measurement, error-moment
sweeps) all take explicit RngStream arguments and are deterministic given the
stream.  The bound calculators are pure formulas over BoundInputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import PerturbationDist, RngStream
from .objectives import Objective, SensingInstance
from .oracles import (
    CoordinateBoundedNoise,
    ExactGradient,
    IsotropicGradientNoise,
    NoiseModel,
)

__all__ = [
    "hutchinson_trace",
    "exact_trace",
    "Lambda1Result",
    "power_lambda1",
    "grad_F",
    "value_F",
    "TaylorRow",
    "TaylorReport",
    "taylor_gap",
    "delta_xi_moments",
    "BoundInputs",
    "theorem1_rhs",
    "theorem2_rhs",
    "optimal_eta",
    "convex_bound",
    "sensing_trace_formula",
    "sensing_trace_deviation",
    "momentum_transfer_matrix",
    "momentum_power_iterates",
    "momentum_grad_norm_series",
]


# ---------------------------------------------------------------------------
# Hessian diagnostics


def exact_trace(obj: Objective, w: np.ndarray) -> float:
    """tr of the Hessian at w: closed form if declared, else d HVP probes."""
    w = np.asarray(w, dtype=float)
    if obj.trace_hessian is not None:
        return float(obj.trace_hessian(w))
    if obj.hessian_diag is not None:
        return float(obj.hessian_diag(w).sum())
    total = 0.0
    e = np.zeros(obj.dim)
    for i in range(obj.dim):
        e[i] = 1.0
        total += float(obj.hvp(w, e)[i])
        e[i] = 0.0
    return total


def hutchinson_trace(obj: Objective, w: np.ndarray, m: int, rng: RngStream) -> tuple[float, float]:
    """Randomized trace estimate (mean, standard error) from m Rademacher probes."""
    if m < 1:
        raise ValueError("m must be >= 1")
    w = np.asarray(w, dtype=float)
    samples = np.empty(m)
    for i in range(m):
        v = rng.gen.integers(0, 2, size=obj.dim) * 2.0 - 1.0
        samples[i] = float(v @ obj.hvp(w, v))
    se = float(samples.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return float(samples.mean()), se


class Lambda1Result(NamedTuple):
    value: float
    converged: bool
    iterations: int


def power_lambda1(
    obj: Objective, w: np.ndarray, iters: int = 200, tol: float = 1e-10, rng: RngStream | None = None
) -> Lambda1Result:
    """Dominant-magnitude Hessian eigenvalue by HVP power iteration.

    Stops when the Rayleigh quotient's relative change drops below tol;
    otherwise returns the last estimate with converged=False.  For indefinite
    Hessians the returned value is the eigenvalue of largest magnitude.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if rng is None:
        raise ValueError("power iteration needs an RngStream for its start vector")
    w = np.asarray(w, dtype=float)
    v = rng.gen.standard_normal(obj.dim)
    v /= np.linalg.norm(v)
    lam = float(v @ obj.hvp(w, v))
    for it in range(1, iters + 1):
        hv = obj.hvp(w, v)
        norm = np.linalg.norm(hv)
        if norm == 0.0:
            return Lambda1Result(0.0, True, it)
        v = hv / norm
        new = float(v @ obj.hvp(w, v))
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            return Lambda1Result(new, True, it)
        lam = new
    return Lambda1Result(lam, False, iters)


# ---------------------------------------------------------------------------
# smoothed objective F(w) = E f(w + U)


def grad_F(
    obj: Objective, dist: PerturbationDist, w: np.ndarray, m: int = 0, rng: RngStream | None = None
) -> np.ndarray:
    """Gradient of the smoothed objective at w.

    Uses the objective's closed form when it applies to (w, dist); otherwise
    averages grad f over m symmetric perturbation pairs.
    """
    w = np.asarray(w, dtype=float)
    if obj.smoothed_gradient is not None:
        g = obj.smoothed_gradient(w, dist)
        if g is not None:
            return np.asarray(g, dtype=float)
    if m < 1 or rng is None:
        raise ValueError("no closed form applies; Monte Carlo path needs m >= 1 and rng")
    acc = np.zeros_like(w)
    for u in dist.sample_batch(rng, m):
        acc += obj.gradient(w + u) + obj.gradient(w - u)
    return acc / (2.0 * m)


def value_F(
    obj: Objective, dist: PerturbationDist, w: np.ndarray, m: int = 0, rng: RngStream | None = None
) -> float:
    """Smoothed objective value at w (closed form or symmetric-pair average)."""
    w = np.asarray(w, dtype=float)
    if obj.smoothed_value is not None:
        v = obj.smoothed_value(w, dist)
        if v is not None:
            return float(v)
    if m < 1 or rng is None:
        raise ValueError("no closed form applies; Monte Carlo path needs m >= 1 and rng")
    us = dist.sample_batch(rng, m)
    if obj.value_batch is not None:
        total = float(obj.value_batch(w + us).sum() + obj.value_batch(w - us).sum())
    else:
        total = sum(obj.value(w + u) + obj.value(w - u) for u in us)
    return total / (2.0 * m)


# ---------------------------------------------------------------------------
# second-order expansion measurement


@dataclass(frozen=True)
class TaylorRow:
    """One sigma point: measured smoothing gap vs the trace prediction."""

    sigma: float
    measured: float
    std_err: float
    predicted: float
    remainder: float  # measured minus second-order prediction
    remainder_se: float


def _hessian_diag_or_probe(obj: Objective, w: np.ndarray) -> np.ndarray:
    if obj.hessian_diag is not None:
        return np.asarray(obj.hessian_diag(w), dtype=float)
    diag = np.empty(obj.dim)
    e = np.zeros(obj.dim)
    for i in range(obj.dim):
        e[i] = 1.0
        diag[i] = float(obj.hvp(w, e)[i])
        e[i] = 0.0
    return diag


def taylor_gap(
    obj: Objective, w: np.ndarray, dist: PerturbationDist, m: int, rng: RngStream
) -> TaylorRow:
    """Measure E[(f(w+U)+f(w-U))/2] - f(w) against (1/2) sum_i H_ii Var(U_i).

    The remainder column subtracts each sample's own quadratic form
    (1/2) U^T H U instead of its expectation, a control variate that removes
    the second-order Monte Carlo noise and leaves the higher-order residue
    measurable at far smaller m.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    w = np.asarray(w, dtype=float)
    us = dist.sample_batch(rng, m)
    f0 = obj.value(w)
    if obj.value_batch is not None:
        gaps = 0.5 * (obj.value_batch(w + us) + obj.value_batch(w - us)) - f0
    else:
        gaps = np.array(
            [0.5 * (obj.value(w + u) + obj.value(w - u)) - f0 for u in us]
        )
    diag = _hessian_diag_or_probe(obj, w)
    predicted = float(0.5 * (diag * dist.coordinate_variances()).sum())
    cv = 0.5 * (us**2 @ diag)  # per-sample quadratic form: E[cv] == predicted
    resid = gaps - cv
    denom = math.sqrt(m) if m > 1 else 1.0
    return TaylorRow(
        sigma=dist.sigma,
        measured=float(gaps.mean()),
        std_err=float(gaps.std(ddof=1)) / denom if m > 1 else 0.0,
        predicted=predicted,
        remainder=float(resid.mean()),
        remainder_se=float(resid.std(ddof=1)) / denom if m > 1 else 0.0,
    )


@dataclass
class TaylorReport:
    """Smoothing-gap measurements across a sigma grid."""

    rows: list[TaylorRow]

    @property
    def relative_rss(self) -> float:
        num = sum((r.measured - r.predicted) ** 2 for r in self.rows)
        den = sum(r.predicted**2 for r in self.rows)
        return num / den if den > 0 else 0.0

    def remainder_slope(self) -> float:
        """Log-log slope of |measured - predicted| vs sigma (nan if degenerate)."""
        pts = [(r.sigma, abs(r.remainder)) for r in self.rows if r.sigma > 0 and r.remainder != 0.0]
        if len(pts) < 2:
            return float("nan")
        xs = np.log([p[0] for p in pts])
        ys = np.log([p[1] for p in pts])
        return float(np.polyfit(xs, ys, 1)[0])

    def to_csv(self) -> str:
        lines = ["sigma,measured,std_err,predicted"]
        for r in self.rows:
            lines.append(
                "%.17g,%.17g,%.17g,%.17g" % (r.sigma, r.measured, r.std_err, r.predicted)
            )
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# estimator error moments (vectorized large-m path)


def delta_xi_moments(
    obj: Objective,
    dist: PerturbationDist,
    w: np.ndarray,
    k: int,
    reps: int,
    rng: RngStream,
    noise: NoiseModel = ExactGradient(),
    grad_batch=None,
) -> tuple[float, float]:
    """Second moments of the estimate's perturbation and oracle error parts.

    Vectorized companion to oracles.delta_xi_decomposition for large rep
    counts: gradients evaluate through ``grad_batch`` (a broadcasting version
    of obj.gradient) when given, and the oracle-noise part is drawn from the
    noise model's law directly (2k fresh isotropic draws per step, or one
    pair-shared sign per two-point pair), matching GradOracle sample for
    sample in distribution.
    """
    if k < 1 or reps < 1:
        raise ValueError("k and reps must be >= 1")
    w = np.asarray(w, dtype=float)
    ref = grad_F(obj, dist, w)
    us = dist.sample_batch(rng, reps * k).reshape(reps, k, obj.dim)
    if grad_batch is not None:
        pair_mean = 0.5 * (grad_batch(w + us) + grad_batch(w - us))  # (reps, k, dim)
        deltas = pair_mean.mean(axis=1) - ref
    else:
        deltas = np.empty((reps, obj.dim))
        for i in range(reps):
            acc = np.zeros(obj.dim)
            for j in range(k):
                acc += obj.gradient(w + us[i, j]) + obj.gradient(w - us[i, j])
            deltas[i] = acc / (2.0 * k) - ref
    var_delta = float((deltas**2).sum(axis=1).mean())

    if isinstance(noise, ExactGradient):
        return var_delta, 0.0
    xi_rng = rng.child("xi-moments")
    if isinstance(noise, IsotropicGradientNoise):
        scale = noise.sigma / math.sqrt(obj.dim)
        draws = xi_rng.gen.standard_normal((reps, 2 * k, obj.dim))
        xi = scale * draws.mean(axis=1)
        return var_delta, float((xi**2).sum(axis=1).mean())
    if isinstance(noise, CoordinateBoundedNoise):
        signs = xi_rng.gen.integers(0, 2, size=(reps, k)) * 2.0 - 1.0
        xi_coord = (noise.cap / k) * signs.sum(axis=1)
        return var_delta, float((xi_coord**2).mean())
    raise TypeError(f"unsupported noise model {noise!r}")


# ---------------------------------------------------------------------------
# bound calculators


@dataclass(frozen=True)
class BoundInputs:
    """Problem constants feeding the rate formulas.

    C: gradient Lipschitz constant; D: initial-suboptimality root
    (F(W_0) - min F <= D^2); sigma: per-query oracle noise level;
    H: perturbation second moment E||U||^2; k: perturbations per step;
    T: steps; R / G_bound: iterate and gradient radii for the convex case;
    mu: momentum coefficient.
    """

    C: float
    D: float
    sigma: float
    k: int = 1
    T: int = 1
    H: float = 0.0
    R: float | None = None
    G_bound: float | None = None
    mu: float = 0.0

    def __post_init__(self):
        if self.C <= 0 or self.D <= 0:
            raise ValueError("C and D must be positive")
        if self.sigma < 0 or self.H < 0:
            raise ValueError("sigma and H must be >= 0")
        if not (isinstance(self.k, int) and self.k >= 1):
            raise ValueError("k must be an integer >= 1")
        if not (isinstance(self.T, int) and self.T >= 1):
            raise ValueError("T must be an integer >= 1")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError("mu must lie in [0, 1)")
        if self.R is not None and self.R < 0:
            raise ValueError("R must be >= 0")
        if self.G_bound is not None and self.G_bound <= 0:
            raise ValueError("G_bound must be positive")


def theorem1_rhs(b: BoundInputs) -> float:
    """Upper bound on E||grad F(W_t)||^2 for the random-iterate rule."""
    first = math.sqrt(2.0 * b.C * b.D**2 * (b.sigma**2 + b.C**2 * b.H) / (b.k * b.T))
    return first + 2.0 * b.C * b.D**2 / b.T


def theorem2_rhs(b: BoundInputs) -> float:
    """Lower bound on min_t E||grad F(W_t)||^2 against the hard instances."""
    return b.D * math.sqrt(b.C * b.sigma**2 / (32.0 * b.k * b.T))


def optimal_eta(b: BoundInputs) -> float:
    """The constant step size behind theorem1_rhs, capped at 1/C."""
    delta = (b.sigma**2 + b.C**2 * b.H) / b.k
    if delta <= 0.0:
        return 1.0 / b.C
    return min(math.sqrt(2.0 * b.D**2 / (b.C * delta * b.T)), 1.0 / b.C)


def convex_bound(R: float, G_bound: float, T: int) -> tuple[float, float]:
    """Step size and certified averaged-iterate gap for the convex case.

    Returns (eta, bound) with eta = R/(2 G sqrt(T)).  The certified bound is
    the value of the telescoping estimate R^2/(2 eta T) + eta G^2/2 at that
    step size, i.e. 1.25 R G / sqrt(T).
    """
    if R < 0 or G_bound <= 0 or T < 1:
        raise ValueError("need R >= 0, G_bound > 0, T >= 1")
    root = math.sqrt(T)
    return R / (2.0 * G_bound * root), 1.25 * R * G_bound / root


# ---------------------------------------------------------------------------
# sensing trace diagnostic


def sensing_trace_formula(instance: SensingInstance, w) -> float:
    """(1/n) sum_i ||A_i W||_F^2, the Hessian trace surrogate at interpolation."""
    wm = np.asarray(w, dtype=float)
    if wm.ndim == 1:
        wm = wm.reshape(instance.d, instance.d)
    if wm.shape != (instance.d, instance.d):
        raise ValueError(f"W must be {instance.d}x{instance.d}")
    prods = instance.mats @ wm
    return float(np.einsum("nij,nij->", prods, prods) / instance.n)


def sensing_trace_deviation(instance: SensingInstance, w) -> float:
    """Relative deviation of the trace surrogate from its mean d ||W||_F^2."""
    wm = np.asarray(w, dtype=float).reshape(instance.d, instance.d)
    ref = instance.d * float((wm**2).sum())
    if ref == 0.0:
        return 0.0
    return abs(sensing_trace_formula(instance, wm) - ref) / ref


# ---------------------------------------------------------------------------
# momentum closed forms (quadratic instance)


def momentum_transfer_matrix(c: float, eta: float, mu: float) -> np.ndarray:
    """One-step map of the per-coordinate state (w, m) on f = (c/2)||w||^2."""
    return np.array([[1.0 - c * eta, mu], [-c * eta, mu]])


def momentum_power_iterates(
    c: float, eta: float, mu: float, w0: np.ndarray, steps: int
) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free iterates and momenta via repeated application of the
    transfer matrix; reference for trajectory checks."""
    w0 = np.asarray(w0, dtype=float)
    x = momentum_transfer_matrix(c, eta, mu)
    state = np.vstack([w0, np.zeros_like(w0)])  # rows: w, m
    ws = np.empty((steps + 1, w0.shape[0]))
    ms = np.zeros((steps + 1, w0.shape[0]))
    ws[0] = w0
    for t in range(1, steps + 1):
        state = x @ state
        ws[t], ms[t] = state[0], state[1]
    return ws, ms


def momentum_grad_norm_series(
    c: float, d_gap: float, etas: np.ndarray, sigma: float, k: int
) -> np.ndarray:
    """E||grad F(W_t)||^2 for t = 0..T on the quadratic instance driven by
    pair-shared coordinate-bounded noise at full strength (E||xi_bar||^2 =
    sigma^2/k):

        2 c d_gap^2 prod_{j<t} (1 - c eta_j)^2
        + (c^2 sigma^2 / k) sum_{i<t} eta_i^2 prod_{i<j<t} (1 - c eta_j)^2
    """
    etas = np.asarray(etas, dtype=float)
    t_max = etas.shape[0]
    out = np.empty(t_max + 1)
    decay = 1.0 - c * etas
    for t in range(t_max + 1):
        lead = 2.0 * c * d_gap**2 * float(np.prod(decay[:t]) ** 2)
        noise = 0.0
        for i in range(t):
            noise += etas[i] ** 2 * float(np.prod(decay[i + 1 : t]) ** 2)
        out[t] = lead + (c**2 * sigma**2 / k) * noise
    return out
