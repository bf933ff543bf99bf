"""Deterministic random streams and symmetric perturbation distributions.

Everything downstream (estimators, optimizers, experiments) draws its
randomness through :class:`RngStream`, a hierarchical counter-based stream:
a stream is identified by a 16-byte key, and child streams are derived by
hashing ``(parent_key, purpose, index)`` with blake2b.  The key seeds a
Philox counter-based bit generator, so the sample sequence for a given
``(seed, purpose, index)`` lineage is identical on every platform and
independent of how sibling streams are scheduled.  That is what makes
parallel experiment shards and byte-identical CLI reruns possible.

Perturbation laws are mean-zero, coordinate-independent and symmetric
(U and -U have the same law), parameterized so that every untruncated kind
has per-coordinate variance ``sigma**2`` and hence second moment
``E||U||^2 = sigma**2 * dim``.  The truncated Gaussian clips each
coordinate to ``[-cap_i, +cap_i]`` (symmetric, so it stays mean-zero) and
its second moment uses the closed-form clipped-Gaussian moment.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RngStream",
    "derive_stream",
    "PerturbationDist",
    "PERTURBATION_KINDS",
]

_KEY_BYTES = 16


def _mix(parent_key: bytes, purpose: str, index: int) -> bytes:
    """Hash a (parent, purpose, index) triple into a fresh stream key."""
    if index < 0:
        raise ValueError(f"stream index must be >= 0, got {index}")
    h = hashlib.blake2b(digest_size=_KEY_BYTES)
    h.update(parent_key)
    h.update(purpose.encode("utf-8"))
    h.update(index.to_bytes(8, "little"))
    return h.digest()


class RngStream:
    """A single-owner random stream with a reproducible identity.

    ``key`` fully determines the sample sequence; ``child`` derives an
    independent stream whose identity depends only on the lineage of
    (purpose, index) labels, never on how much the parent has sampled.
    """

    __slots__ = ("key", "gen")

    def __init__(self, key: bytes):
        if len(key) != _KEY_BYTES:
            raise ValueError(f"stream key must be {_KEY_BYTES} bytes")
        self.key = key
        seq = np.random.SeedSequence(int.from_bytes(key, "little"))
        self.gen = np.random.Generator(np.random.Philox(seq))

    def child(self, purpose: str, index: int = 0) -> "RngStream":
        return RngStream(_mix(self.key, purpose, index))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"RngStream(key={self.key.hex()})"


def derive_stream(seed: int, purpose: str = "root", index: int = 0) -> RngStream:
    """Derive a stream from a u64 seed and a purpose label.

    Calling this twice with the same arguments yields two streams that
    produce identical sample sequences.
    """
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit int, got {seed}")
    return RngStream(_mix(seed.to_bytes(8, "little"), purpose, index))


PERTURBATION_KINDS = (
    "gaussian",
    "laplace",
    "uniform",
    "binomial",
    "truncated_gaussian",
)


def _clipped_normal_second_moment(sigma: float, cap: float) -> float:
    """E[clip(X, -cap, cap)^2] for X ~ N(0, sigma^2), closed form."""
    if sigma == 0.0:
        return 0.0
    if not math.isfinite(cap):
        return sigma * sigma
    c = cap / sigma
    # E[X^2 1{|X|<=cap}] = sigma^2 [(2 Phi(c) - 1) - 2 c phi(c)]
    phi_c = math.exp(-0.5 * c * c) / math.sqrt(2.0 * math.pi)
    inner = math.erf(c / math.sqrt(2.0)) - 2.0 * c * phi_c
    tail = 1.0 - 0.5 * (1.0 + math.erf(c / math.sqrt(2.0)))
    return sigma * sigma * inner + 2.0 * cap * cap * tail


@dataclass(frozen=True, eq=False)
class PerturbationDist:
    """A symmetric mean-zero perturbation law over R^dim.

    kind: one of PERTURBATION_KINDS.
    sigma: per-coordinate standard deviation of the untruncated base law.
    caps: per-coordinate clipping bounds, required for (and only for)
        "truncated_gaussian"; entries may be +inf for unclipped coordinates.
    """

    kind: str
    sigma: float
    dim: int
    caps: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if not (self.sigma >= 0.0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.kind == "truncated_gaussian":
            if self.caps is None:
                raise ValueError("truncated_gaussian requires caps")
            caps = np.asarray(self.caps, dtype=float)
            if caps.shape != (self.dim,):
                raise ValueError(f"caps must have shape ({self.dim},), got {caps.shape}")
            if not np.all(caps > 0.0):
                raise ValueError("caps must be strictly positive (use inf to disable)")
            object.__setattr__(self, "caps", caps)
        elif self.caps is not None:
            raise ValueError(f"caps are only valid for truncated_gaussian, not {self.kind}")

    # -- sampling ---------------------------------------------------------

    def sample(self, rng: RngStream) -> np.ndarray:
        return self._draw(rng, None)

    def sample_batch(self, rng: RngStream, count: int) -> np.ndarray:
        """Draw `count` independent perturbations, shape (count, dim)."""
        if count < 1:
            raise ValueError("count must be >= 1")
        return self._draw(rng, count)

    def _draw(self, rng: RngStream, count: int | None) -> np.ndarray:
        shape = (self.dim,) if count is None else (count, self.dim)
        g = rng.gen
        if self.kind == "gaussian":
            return self.sigma * g.standard_normal(shape)
        if self.kind == "laplace":
            # variance of Laplace(scale b) is 2 b^2, so b = sigma / sqrt(2)
            return g.laplace(0.0, self.sigma / math.sqrt(2.0), shape)
        if self.kind == "uniform":
            half = self.sigma * math.sqrt(3.0)
            return g.uniform(-half, half, shape)
        if self.kind == "binomial":
            # scaled Rademacher: +/- sigma with equal probability
            return self.sigma * (2.0 * g.integers(0, 2, shape).astype(float) - 1.0)
        # truncated_gaussian
        raw = self.sigma * g.standard_normal(shape)
        return np.clip(raw, -self.caps, self.caps)

    # -- moments ----------------------------------------------------------

    def coordinate_variances(self) -> np.ndarray:
        """Per-coordinate second moments (equal to variances: mean is zero)."""
        if self.kind != "truncated_gaussian":
            return np.full(self.dim, self.sigma**2)
        return np.array(
            [_clipped_normal_second_moment(self.sigma, c) for c in self.caps]
        )

    def h_moment(self) -> float:
        """E||U||^2, the perturbation second moment entering the rate bounds."""
        return float(self.coordinate_variances().sum())
