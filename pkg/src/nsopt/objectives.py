"""Benchmark objectives with exact gradients, HVPs, and smoothed closed forms.

Each factory returns an :class:`Objective`: a bundle of callables over flat
float64 vectors.  Optional fields carry exact side information when the
construction admits it (Hessian diagonal/trace, closed-form value/gradient of
the perturbation-smoothed objective F(W) = E f(W + U)); estimators fall back
to Monte Carlo when a field is None or a closed form declines to certify.

The two chain constructions are the worst-case instances used by the
lower-bound experiments:

* ``make_hard_chain``: a weak quadratic on coordinate 0 plus a piecewise
  bump ``h_piece`` per chain coordinate whose inner region is exactly flat,
  so bounded per-coordinate noise never produces a restoring gradient.
* ``make_chain_g``: a concave-capped well ``chain_g_piece`` on coordinate 0
  plus plain quadratics elsewhere, used in the fixed-step-size regime.

Branch conventions: all piecewise definitions take the lower branch at a
breakpoint (comparisons are ``<=`` in increasing order of |x|).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import PerturbationDist, RngStream, derive_stream

__all__ = [
    "Objective",
    "h_piece",
    "chain_g_piece",
    "make_quadratic",
    "make_quadratic_form",
    "make_quartic",
    "make_hard_chain",
    "make_chain_g",
    "SensingInstance",
    "make_matrix_sensing",
    "sensing_objective",
    "make_smooth_convex_bench",
]


@dataclass(eq=False)
class Objective:
    """A twice-differentiable objective over R^dim with optional extras.

    value/gradient/hvp are exact.  lipschitz_c is a certified gradient
    Lipschitz constant; for objectives that are only locally smooth it is
    certified on the ball ||w|| <= ball_radius (documented per factory).
    """

    dim: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hvp: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz_c: float | None = None
    ball_radius: float | None = None
    convex: bool = False
    name: str = ""
    trace_hessian: Callable[[np.ndarray], float] | None = None
    hessian_diag: Callable[[np.ndarray], np.ndarray] | None = None
    value_batch: Callable[[np.ndarray], np.ndarray] | None = None
    # closed forms under a perturbation law; return None to decline
    smoothed_value: Callable[[np.ndarray, PerturbationDist], float | None] | None = None
    smoothed_gradient: Callable[[np.ndarray, PerturbationDist], np.ndarray | None] | None = None


def _check_vec(w: np.ndarray, dim: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (dim,):
        raise ValueError(f"expected vector of length {dim}, got shape {w.shape}")
    return w


# ---------------------------------------------------------------------------
# quadratics and the quartic benchmark


def make_quadratic(curvature: float, dim: int) -> Objective:
    """f(w) = (c/2) ||w||^2; the smoothed objective is exactly f + (c/2) E||U||^2."""
    if curvature <= 0:
        raise ValueError("curvature must be positive")
    c = float(curvature)

    def smoothed_value(w, dist):
        return 0.5 * c * float(w @ w) + 0.5 * c * dist.h_moment()

    return Objective(
        dim=dim,
        value=lambda w: 0.5 * c * float(_check_vec(w, dim) @ w),
        gradient=lambda w: c * _check_vec(w, dim),
        hvp=lambda w, v: c * _check_vec(v, dim),
        lipschitz_c=c,
        convex=True,
        name=f"quadratic(c={c:g}, d={dim})",
        trace_hessian=lambda w: c * dim,
        hessian_diag=lambda w: np.full(dim, c),
        value_batch=lambda ws: 0.5 * c * np.einsum("ij,ij->i", ws, ws),
        smoothed_value=smoothed_value,
        smoothed_gradient=lambda w, dist: c * w,
    )


def make_quadratic_form(a_matrix: np.ndarray) -> Objective:
    """f(w) = (1/2) w^T A w for symmetric A."""
    a = np.asarray(a_matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("A must be square")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("A must be symmetric")
    dim = a.shape[0]
    eigs = np.linalg.eigvalsh(a)
    diag = np.diag(a).copy()

    def smoothed_value(w, dist):
        return 0.5 * float(w @ (a @ w)) + 0.5 * float(diag @ dist.coordinate_variances())

    return Objective(
        dim=dim,
        value=lambda w: 0.5 * float(_check_vec(w, dim) @ (a @ w)),
        gradient=lambda w: a @ _check_vec(w, dim),
        hvp=lambda w, v: a @ _check_vec(v, dim),
        lipschitz_c=float(np.max(np.abs(eigs))),
        convex=bool(eigs[0] >= -1e-12),
        name=f"quadratic_form(d={dim})",
        trace_hessian=lambda w: float(np.trace(a)),
        hessian_diag=lambda w: diag,
        value_batch=lambda ws: 0.5 * np.einsum("ij,ij->i", ws @ a, ws),
        smoothed_value=smoothed_value,
        smoothed_gradient=lambda w, dist: a @ w,
    )


def make_quartic(dim: int, radius: float = 1.5) -> Objective:
    """f(w) = sum_i w_i^4, the separable quartic benchmark.

    The gradient is only locally Lipschitz; lipschitz_c = 12 radius^2 is
    certified for max_i |w_i| <= radius.  The smoothed gradient has the exact
    per-coordinate form 4 w^3 + 12 w Var(U_i) for any symmetric law.
    """

    def smoothed_gradient(w, dist):
        return 4.0 * w**3 + 12.0 * w * dist.coordinate_variances()

    return Objective(
        dim=dim,
        value=lambda w: float((_check_vec(w, dim) ** 4).sum()),
        gradient=lambda w: 4.0 * _check_vec(w, dim) ** 3,
        hvp=lambda w, v: 12.0 * w**2 * _check_vec(v, dim),
        lipschitz_c=12.0 * radius**2,
        ball_radius=radius,
        convex=True,
        name=f"quartic(d={dim})",
        trace_hessian=lambda w: 12.0 * float(w @ w),
        hessian_diag=lambda w: 12.0 * w**2,
        value_batch=lambda ws: (ws**4).sum(axis=1),
        smoothed_gradient=smoothed_gradient,
    )


# ---------------------------------------------------------------------------
# chain constructions


def h_piece(x: float, alpha: float, curvature: float) -> tuple[float, float]:
    """Value and slope of the flat-bump chain piece.

    Four branches in |x| (lower branch at breakpoints):
      |x| <= a          : c a^2/4,                     slope 0
      a < |x| <= 1.5 a  : -c(|x|-a)^2/2 + c a^2/4,     slope -c(|x|-a) sgn x
      1.5a < |x| <= 2a  : c(|x|-2a)^2/2,               slope  c(|x|-2a) sgn x
      |x| > 2a          : 0,                           slope 0
    Continuous with continuous derivative; even in x.
    """
    a, c = alpha, curvature
    ax = abs(x)
    s = 1.0 if x > 0 else (-1.0 if x < 0 else 0.0)
    if ax <= a:
        return 0.25 * c * a * a, 0.0
    if ax <= 1.5 * a:
        return -0.5 * c * (ax - a) ** 2 + 0.25 * c * a * a, -c * (ax - a) * s
    if ax <= 2.0 * a:
        return 0.5 * c * (ax - 2.0 * a) ** 2, c * (ax - 2.0 * a) * s
    return 0.0, 0.0


def _h_piece_arrays(x: np.ndarray, alphas: np.ndarray, c: float):
    """Vectorized h_piece over chain coordinates: (values, slopes, curvatures)."""
    ax = np.abs(x)
    s = np.sign(x)
    flat = ax <= alphas
    down = ~flat & (ax <= 1.5 * alphas)
    up = ~flat & ~down & (ax <= 2.0 * alphas)
    vals = np.where(
        flat,
        0.25 * c * alphas**2,
        np.where(
            down,
            -0.5 * c * (ax - alphas) ** 2 + 0.25 * c * alphas**2,
            np.where(up, 0.5 * c * (ax - 2.0 * alphas) ** 2, 0.0),
        ),
    )
    slopes = np.where(
        down, -c * (ax - alphas) * s, np.where(up, c * (ax - 2.0 * alphas) * s, 0.0)
    )
    curvs = np.where(down, -c, np.where(up, c, 0.0))
    return vals, slopes, curvs


def make_hard_chain(
    curvature: float, g_scale: float, alphas: np.ndarray, dim: int
) -> Objective:
    """Weak quadratic on coordinate 0 plus one flat bump per chain coordinate.

    f(w) = w_0^2 / (2 G) + sum_i h_piece(w_{i+1}, alphas[i], c), with
    G = g_scale >= 1/c so the certified Lipschitz constant is c.  Chain
    coordinate i+1 contributes zero gradient whenever it stays within
    [-alphas[i], alphas[i]]; in that regime the smoothed gradient is exactly
    (w_0 / G) e_0 for any perturbation whose coordinate-wise reach keeps
    every evaluation point inside the flat region.
    """
    c, g = float(curvature), float(g_scale)
    alphas = np.asarray(alphas, dtype=float)
    t = alphas.shape[0]
    if c <= 0 or g <= 0:
        raise ValueError("curvature and g_scale must be positive")
    if g < 1.0 / c - 1e-12:
        raise ValueError("g_scale must be >= 1/curvature")
    if np.any(alphas <= 0):
        raise ValueError("alphas must be positive")
    if dim < t + 1:
        raise ValueError(f"dim must be >= len(alphas)+1 = {t + 1}")

    def value(w):
        w = _check_vec(w, dim)
        vals, _, _ = _h_piece_arrays(w[1 : t + 1], alphas, c)
        return 0.5 * w[0] ** 2 / g + float(vals.sum())

    def gradient(w):
        w = _check_vec(w, dim)
        _, slopes, _ = _h_piece_arrays(w[1 : t + 1], alphas, c)
        out = np.zeros(dim)
        out[0] = w[0] / g
        out[1 : t + 1] = slopes
        return out

    def hessian_diag(w):
        _, _, curvs = _h_piece_arrays(w[1 : t + 1], alphas, c)
        out = np.zeros(dim)
        out[0] = 1.0 / g
        out[1 : t + 1] = curvs
        return out

    def _flat_reach(dist: PerturbationDist) -> np.ndarray | None:
        """Worst-case |U_i| per chain coordinate, or None if unbounded."""
        if dist.kind == "truncated_gaussian":
            return dist.caps[1 : t + 1]
        if dist.kind == "uniform":
            return np.full(t, dist.sigma * math.sqrt(3.0))
        if dist.kind == "binomial":
            return np.full(t, dist.sigma)
        return None  # gaussian / laplace have unbounded support

    def smoothed_gradient(w, dist):
        reach = _flat_reach(dist)
        if reach is None or np.any(np.abs(w[1 : t + 1]) + reach > alphas):
            return None
        out = np.zeros(dim)
        out[0] = w[0] / g
        return out

    def smoothed_value(w, dist):
        reach = _flat_reach(dist)
        if reach is None or np.any(np.abs(w[1 : t + 1]) + reach > alphas):
            return None
        v0 = dist.coordinate_variances()[0]
        return 0.5 * (w[0] ** 2 + v0) / g + 0.25 * c * float((alphas**2).sum())

    return Objective(
        dim=dim,
        value=value,
        gradient=gradient,
        hvp=lambda w, v: hessian_diag(w) * _check_vec(v, dim),
        lipschitz_c=c,
        name=f"hard_chain(c={c:g}, G={g:g}, T={t}, d={dim})",
        trace_hessian=lambda w: float(hessian_diag(w).sum()),
        hessian_diag=hessian_diag,
        smoothed_value=smoothed_value,
        smoothed_gradient=smoothed_gradient,
    )


def chain_g_piece(x: float, alpha: float, curvature: float) -> tuple[float, float]:
    """Value and slope of the concave-capped well piece.

    Three branches in |x| (lower branch at breakpoints):
      |x| <= a/2        : -c x^2/2 + c a^2/4,   slope -c x
      a/2 < |x| <= a    : c(|x|-a)^2/2,         slope c(|x|-a) sgn x
      |x| > a           : 0,                    slope 0
    Continuous with continuous derivative; even in x.
    """
    a, c = alpha, curvature
    ax = abs(x)
    s = 1.0 if x > 0 else (-1.0 if x < 0 else 0.0)
    if ax <= 0.5 * a:
        return -0.5 * c * x * x + 0.25 * c * a * a, -c * x
    if ax <= a:
        return 0.5 * c * (ax - a) ** 2, c * (ax - a) * s
    return 0.0, 0.0


def make_chain_g(curvature: float, alpha: float, dim: int) -> Objective:
    """Well piece on coordinate 0 plus (c/2) x^2 on every other coordinate."""
    c, a = float(curvature), float(alpha)
    if c <= 0 or a <= 0:
        raise ValueError("curvature and alpha must be positive")
    if dim < 2:
        raise ValueError("dim must be >= 2")

    def value(w):
        w = _check_vec(w, dim)
        v0, _ = chain_g_piece(w[0], a, c)
        return v0 + 0.5 * c * float(w[1:] @ w[1:])

    def gradient(w):
        w = _check_vec(w, dim)
        _, s0 = chain_g_piece(w[0], a, c)
        out = c * w
        out[0] = s0
        return out

    def _curv0(x0):
        ax = abs(x0)
        if ax <= 0.5 * a:
            return -c
        if ax <= a:
            return c
        return 0.0

    def hessian_diag(w):
        out = np.full(dim, c)
        out[0] = _curv0(w[0])
        return out

    def _reach(dist):
        if dist.kind == "truncated_gaussian":
            return float(dist.caps[0])
        if dist.kind == "uniform":
            return dist.sigma * math.sqrt(3.0)
        if dist.kind == "binomial":
            return dist.sigma
        return math.inf

    def smoothed_gradient(w, dist):
        out = c * w  # exact for the quadratic coordinates under any symmetric law
        if dist.kind == "binomial":
            # two-point law: the smoothed slope is the average of two values,
            # valid at every w[0], not just inside the concave region
            r = dist.sigma
            _, sp = chain_g_piece(w[0] + r, a, c)
            _, sm = chain_g_piece(w[0] - r, a, c)
            out[0] = 0.5 * (sp + sm)
            return out
        if abs(w[0]) + _reach(dist) > 0.5 * a:
            return None
        out[0] = -c * w[0]
        return out

    def smoothed_value(w, dist):
        if abs(w[0]) + _reach(dist) > 0.5 * a:
            return None
        vars = dist.coordinate_variances()
        quad = 0.5 * c * float(w[1:] @ w[1:] + vars[1:].sum())
        return -0.5 * c * (w[0] ** 2 + vars[0]) + 0.25 * c * a * a + quad

    return Objective(
        dim=dim,
        value=value,
        gradient=gradient,
        hvp=lambda w, v: hessian_diag(w) * _check_vec(v, dim),
        lipschitz_c=c,
        name=f"chain_g(c={c:g}, alpha={a:g}, d={dim})",
        trace_hessian=lambda w: float(hessian_diag(w).sum()),
        hessian_diag=hessian_diag,
        smoothed_value=smoothed_value,
        smoothed_gradient=smoothed_gradient,
    )


# ---------------------------------------------------------------------------
# matrix sensing


@dataclass(eq=False)
class SensingInstance:
    """A low-rank matrix sensing problem: y_i = <A_i, U* U*^T>.

    Fully determined by (d, r, n, seed); the measurement matrices and signal
    are regenerated from the seed on deserialization, so the JSON form stays
    a few bytes regardless of n.
    """

    d: int
    r: int
    n: int
    seed: int
    mats: np.ndarray = field(repr=False)  # (n, d, d)
    y: np.ndarray = field(repr=False)  # (n,)
    u_star: np.ndarray = field(repr=False)  # (d, r)

    @classmethod
    def generate(cls, d: int, r: int, n: int, seed: int) -> "SensingInstance":
        if d < 1 or r < 1 or r > d or n < 1:
            raise ValueError(f"bad sensing shape d={d} r={r} n={n}")
        root = derive_stream(seed, "sensing-instance")
        u_star = root.child("signal").gen.standard_normal((d, r))
        mats = root.child("measurements").gen.standard_normal((n, d, d))
        y = np.einsum("nij,ij->n", mats, u_star @ u_star.T)
        return cls(d=d, r=r, n=n, seed=seed, mats=mats, y=y, u_star=u_star)

    def fresh_measurements(self, count: int, rng: RngStream):
        """Held-out measurement matrices and targets for validation."""
        mats = rng.gen.standard_normal((count, self.d, self.d))
        y = np.einsum("nij,ij->n", mats, self.u_star @ self.u_star.T)
        return mats, y

    def to_json(self) -> str:
        return json.dumps({"d": self.d, "r": self.r, "n": self.n, "seed": self.seed})

    @classmethod
    def from_json(cls, text: str) -> "SensingInstance":
        spec = json.loads(text)
        extra = set(spec) - {"d", "r", "n", "seed"}
        if extra:
            raise ValueError(f"unknown sensing fields: {sorted(extra)}")
        return cls.generate(spec["d"], spec["r"], spec["n"], spec["seed"])


def _opnorms(mats: np.ndarray) -> np.ndarray:
    """Spectral norms of the symmetrized measurement matrices, chunked."""
    out = np.empty(mats.shape[0])
    for lo in range(0, mats.shape[0], 256):
        block = mats[lo : lo + 256]
        sym = block + np.transpose(block, (0, 2, 1))
        out[lo : lo + 256] = np.abs(np.linalg.eigvalsh(sym)).max(axis=1)
    return out


def sensing_objective(
    mats: np.ndarray, y: np.ndarray, ball_radius: float, name: str = "sensing"
) -> Objective:
    """Empirical sensing loss L(W) = (1/2n) sum_i (<A_i, W W^T> - y_i)^2.

    W is passed flattened (length d^2).  The gradient is the symmetrized
    form (1/n) sum_i r_i (A_i + A_i^T) W.  lipschitz_c is a certified bound
    on the Hessian spectral norm over the Frobenius ball ||W||_F <= ball_radius.
    """
    n, d, _ = mats.shape
    opn = _opnorms(mats)
    fro = np.sqrt(np.einsum("nij,nij->n", mats, mats))
    rho = float(ball_radius)
    lipschitz = float(
        np.mean(opn**2 * rho**2 + (fro * rho**2 + np.abs(y)) * opn)
    )
    dim = d * d

    def _mat(w):
        return _check_vec(w, dim).reshape(d, d)

    def _residuals(wm):
        return np.einsum("nij,ij->n", mats, wm @ wm.T) - y

    def value(w):
        res = _residuals(_mat(w))
        return 0.5 * float(res @ res) / n

    def gradient(w):
        wm = _mat(w)
        m = np.tensordot(_residuals(wm), mats, axes=1)
        return ((m + m.T) @ wm).ravel() / n

    def hvp(w, v):
        wm, vm = _mat(w), _mat(v)
        res = _residuals(wm)
        cross = vm @ wm.T
        dres = np.einsum("nij,ij->n", mats, cross + cross.T)
        m1 = np.tensordot(dres, mats, axes=1)
        m2 = np.tensordot(res, mats, axes=1)
        return (((m1 + m1.T) @ wm + (m2 + m2.T) @ vm) / n).ravel()

    def trace_hessian(w):
        # tr = (1/n) sum_i [ ||S_i W||_F^2 + r_i * d * tr(S_i) ],  S = A + A^T
        # (second term: sum over the d^2 basis matrices E_ab of <E_ab, S E_ab>
        # is d * tr(S); it vanishes at interpolation where all r_i = 0)
        wm = _mat(w)
        aw = mats @ wm
        atw = np.transpose(mats, (0, 2, 1)) @ wm
        sq = np.einsum("nij,nij->", aw + atw, aw + atw) / n
        res = _residuals(wm)
        tr_sym = 2.0 * np.trace(mats, axis1=1, axis2=2)
        return float(sq + d * (res @ tr_sym) / n)

    return Objective(
        dim=dim,
        value=value,
        gradient=gradient,
        hvp=hvp,
        lipschitz_c=lipschitz,
        ball_radius=rho,
        name=name,
        trace_hessian=trace_hessian,
    )


def make_matrix_sensing(
    d: int, r: int, n: int, seed: int, ball_radius: float | None = None
) -> tuple[SensingInstance, Objective]:
    """Generate an instance and its training objective from a seed."""
    inst = SensingInstance.generate(d, r, n, seed)
    if ball_radius is None:
        ball_radius = 3.0 * d  # ~3x the Frobenius norm of a N(0,1) init
    obj = sensing_objective(inst.mats, inst.y, ball_radius, name=f"sensing(d={d}, r={r}, n={n})")
    return inst, obj


# ---------------------------------------------------------------------------
# bounded-gradient convex benchmark


def _smoothed_huber_scalar(x: float, sigma: float, slope: float, delta: float) -> float:
    """E[huber(x + sigma Z)] for Z ~ N(0,1), exact."""
    if sigma == 0.0:
        ax = abs(x)
        return slope * x * x / (2.0 * delta) if ax <= delta else slope * (ax - 0.5 * delta)
    inv = 1.0 / sigma
    a = (-delta - x) * inv
    b = (delta - x) * inv
    sqrt2 = math.sqrt(2.0)
    phi = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    cdf = lambda t: 0.5 * (1.0 + math.erf(t / sqrt2))
    m0 = cdf(b) - cdf(a)
    core = (
        x * x * m0
        + 2.0 * x * sigma * (phi(a) - phi(b))
        + sigma * sigma * (m0 + a * phi(a) - b * phi(b))
    )
    right = (x - 0.5 * delta) * (1.0 - cdf(b)) + sigma * phi(b)
    left = (-x - 0.5 * delta) * cdf(a) + sigma * phi(a)
    return slope * (core / (2.0 * delta) + right + left)


def make_smooth_convex_bench(
    dim: int, radius: float, grad_bound: float, core_frac: float = 0.01
) -> Objective:
    """Separable Huber objective with a certified global gradient bound.

    Per coordinate: quadratic of curvature slope/delta on |x| <= delta,
    linear with slope = grad_bound/sqrt(dim) outside, so ||grad f|| <=
    grad_bound everywhere.  delta = core_frac * radius / sqrt(dim) keeps the
    linear region long relative to the start scale radius/sqrt(dim).  The
    Gaussian-smoothed value has a closed form (used for near-exact optimality
    gaps); other laws fall back to Monte Carlo.
    """
    if radius <= 0 or grad_bound <= 0 or not 0 < core_frac < 1:
        raise ValueError("radius, grad_bound positive and 0 < core_frac < 1 required")
    s = grad_bound / math.sqrt(dim)
    delta = core_frac * radius / math.sqrt(dim)

    def _vals(ws):
        ax = np.abs(ws)
        return np.where(
            ax <= delta, s * ws**2 / (2.0 * delta), s * (ax - 0.5 * delta)
        )

    def smoothed_value(w, dist):
        if dist.kind != "gaussian":
            return None
        return float(
            sum(_smoothed_huber_scalar(float(x), dist.sigma, s, delta) for x in w)
        )

    return Objective(
        dim=dim,
        value=lambda w: float(_vals(_check_vec(w, dim)).sum()),
        gradient=lambda w: s * np.clip(_check_vec(w, dim) / delta, -1.0, 1.0),
        hvp=lambda w, v: np.where(np.abs(w) <= delta, s / delta, 0.0) * _check_vec(v, dim),
        lipschitz_c=s / delta,
        convex=True,
        name=f"huber_bench(d={dim}, R={radius:g}, G={grad_bound:g})",
        trace_hessian=lambda w: float((np.abs(w) <= delta).sum() * s / delta),
        hessian_diag=lambda w: np.where(np.abs(w) <= delta, s / delta, 0.0),
        value_batch=lambda ws: _vals(ws).sum(axis=1),
        smoothed_value=smoothed_value,
    )
