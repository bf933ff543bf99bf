"""Optimization loops: the two-point perturbation-averaged method (with
optional heavy-ball momentum) and the single-query baselines.

Every run returns a Trajectory that records iterates, momenta, step sizes,
objective values, estimate norms, and cumulative oracle-query counts, plus a
replay spec: the stream keys and run parameters needed to reproduce the run
bit for bit (``rerun``).  Randomness is split into two child streams of the
run's root stream, "perturb" for the perturbation draws and "oracle" for the
oracle noise, so the two sources can be replayed independently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import PerturbationDist, RngStream, derive_stream
from .objectives import Objective
from .oracles import (
    ExactGradient,
    GradOracle,
    NoiseModel,
    noise_from_spec,
    noise_to_spec,
    nso_gradient_estimate,
)

__all__ = [
    "StepSchedule",
    "Trajectory",
    "DivergedError",
    "run_nso",
    "run_wp_sgd",
    "run_sgd",
    "select_random_iterate",
    "average_iterates",
    "trajectory_to_csv",
    "save_replay",
    "load_replay",
    "rerun",
]

_DIVERGE_LIMIT = 1e12


class DivergedError(RuntimeError):
    """The objective value left the trust region (non-finite or > 1e12)."""


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes for a run: a constant or an explicit per-step sequence."""

    kind: str
    eta: float | None = None
    etas: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "constant":
            if self.eta is None or self.eta <= 0:
                raise ValueError("constant schedule needs eta > 0")
        elif self.kind == "explicit":
            if not self.etas or any(e <= 0 for e in self.etas):
                raise ValueError("explicit schedule needs positive etas")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, eta: float) -> "StepSchedule":
        return cls("constant", eta=float(eta))

    @classmethod
    def explicit(cls, etas) -> "StepSchedule":
        return cls("explicit", etas=tuple(float(e) for e in etas))

    def resolve(self, steps: int) -> np.ndarray:
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if self.kind == "constant":
            return np.full(steps, self.eta)
        if len(self.etas) != steps:
            raise ValueError(f"schedule has {len(self.etas)} etas but run has {steps} steps")
        return np.array(self.etas)


@dataclass
class Trajectory:
    """Full record of one optimization run."""

    algorithm: str
    iterates: np.ndarray  # (steps+1, dim): W_0 .. W_T
    momenta: np.ndarray  # (steps+1, dim): M_0 = 0, then M_1 .. M_T
    etas: np.ndarray  # (steps,)
    values: np.ndarray  # (steps+1,) objective at each iterate
    grad_est_norms: np.ndarray  # (steps,) norm of each gradient estimate
    query_counts: np.ndarray  # (steps+1,) cumulative oracle queries
    k: int
    mu: float
    seed_key: str  # hex key of the run's root stream
    warnings: list[str] = field(default_factory=list)
    replay_spec: dict | None = None

    @property
    def steps(self) -> int:
        return len(self.etas)

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]


def _root_stream(seed, rng) -> RngStream:
    if (seed is None) == (rng is None):
        raise ValueError("pass exactly one of seed or rng")
    return derive_stream(seed, "run") if rng is None else rng


def _start_point(objective: Objective, w0) -> np.ndarray:
    w = np.zeros(objective.dim) if w0 is None else np.array(w0, dtype=float)
    if w.shape != (objective.dim,):
        raise ValueError(f"w0 must have shape ({objective.dim},), got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("w0 has non-finite entries")
    return w


def _eta_warnings(etas: np.ndarray, objective: Objective) -> list[str]:
    c = objective.lipschitz_c
    if c is None or c <= 0:
        return []
    limit = 1.0 / c
    over = int(np.sum(etas > limit * (1 + 1e-12)))
    if over:
        return [f"{over} of {len(etas)} step sizes exceed 1/lipschitz_c = {limit:.6g}"]
    return []


def _check_value(v: float, step: int) -> float:
    if not np.isfinite(v) or abs(v) > _DIVERGE_LIMIT:
        raise DivergedError(f"objective value {v!r} after step {step}")
    return v


def _descend(algorithm, objective, noise, schedule, steps, k, w0, mu, root, estimate):
    """Shared momentum loop; ``estimate(w, step, rng)`` supplies G_i."""
    etas = schedule.resolve(steps)
    w = _start_point(objective, w0)
    m = np.zeros_like(w)
    perturb = root.child("perturb")

    dim = objective.dim
    iterates = np.empty((steps + 1, dim))
    momenta = np.zeros((steps + 1, dim))
    values = np.empty(steps + 1)
    norms = np.empty(steps)
    queries = np.zeros(steps + 1, dtype=np.int64)
    iterates[0] = w
    values[0] = _check_value(objective.value(w), -1)

    oracle = GradOracle(objective, noise, None if isinstance(noise, ExactGradient) else root.child("oracle"))
    for i in range(steps):
        g_est = estimate(oracle, w, i, perturb)
        m = mu * m - etas[i] * g_est
        w = w + m
        iterates[i + 1] = w
        momenta[i + 1] = m
        norms[i] = np.linalg.norm(g_est)
        values[i + 1] = _check_value(objective.value(w), i)
        queries[i + 1] = oracle.queries

    return Trajectory(
        algorithm=algorithm,
        iterates=iterates,
        momenta=momenta,
        etas=etas,
        values=values,
        grad_est_norms=norms,
        query_counts=queries,
        k=k,
        mu=mu,
        seed_key=root.key.hex(),
        warnings=_eta_warnings(etas, objective),
    )


def run_nso(
    objective: Objective,
    dist: PerturbationDist,
    schedule: StepSchedule,
    steps: int,
    k: int,
    *,
    noise: NoiseModel = ExactGradient(),
    seed: int | None = None,
    rng: RngStream | None = None,
    w0=None,
    mu: float = 0.0,
) -> Trajectory:
    """Two-point perturbation-averaged descent: 2k oracle queries per step.

    Each step draws k perturbations U_j and moves against the average of the
    oracle's gradients at w +/- U_j; with mu > 0 the update runs through the
    heavy-ball recursion M <- mu M - eta G, w <- w + M.
    """
    if dist.dim != objective.dim:
        raise ValueError("perturbation dimension does not match objective")
    root = _root_stream(seed, rng)

    def estimate(oracle, w, i, perturb):
        g, _ = nso_gradient_estimate(oracle, dist, w, k, i, perturb)
        return g

    traj = _descend("nso", objective, noise, schedule, steps, k, w0, mu, root, estimate)
    traj.replay_spec = _make_replay_spec(traj, dist, noise)
    return traj


def run_wp_sgd(
    objective: Objective,
    dist: PerturbationDist,
    schedule: StepSchedule,
    steps: int,
    *,
    noise: NoiseModel = ExactGradient(),
    seed: int | None = None,
    rng: RngStream | None = None,
    w0=None,
) -> Trajectory:
    """Single-query baseline: step against the oracle's gradient at w + U.

    One perturbation and one oracle query per step (half-query cost of the
    two-point method at k=1, but no cancellation of the perturbation error).
    """
    if dist.dim != objective.dim:
        raise ValueError("perturbation dimension does not match objective")
    root = _root_stream(seed, rng)

    def estimate(oracle, w, i, perturb):
        return oracle.query(w + dist.sample(perturb), i)

    traj = _descend("wp_sgd", objective, noise, schedule, steps, 1, w0, 0.0, root, estimate)
    traj.replay_spec = _make_replay_spec(traj, dist, noise)
    return traj


def run_sgd(
    objective: Objective,
    schedule: StepSchedule,
    steps: int,
    *,
    noise: NoiseModel = ExactGradient(),
    seed: int | None = None,
    rng: RngStream | None = None,
    w0=None,
) -> Trajectory:
    """Plain (stochastic) gradient descent: one unperturbed query per step."""
    root = _root_stream(seed, rng)

    def estimate(oracle, w, i, perturb):
        return oracle.query(w, i)

    traj = _descend("sgd", objective, noise, schedule, steps, 1, w0, 0.0, root, estimate)
    traj.replay_spec = _make_replay_spec(traj, None, noise)
    return traj


def select_random_iterate(traj: Trajectory, rng: RngStream) -> tuple[int, np.ndarray]:
    """Pick the iterate *entering* step j with probability proportional to eta_j.

    Returns (j, W_j); the guarantee for the returned point is on W_j, the
    iterate before the chosen step is applied.
    """
    p = traj.etas / traj.etas.sum()
    j = int(rng.gen.choice(traj.steps, p=p))
    return j, traj.iterates[j]


def average_iterates(traj: Trajectory) -> np.ndarray:
    """Mean of W_1 .. W_T (the starting point is excluded)."""
    return traj.iterates[1:].mean(axis=0)


def trajectory_to_csv(traj: Trajectory) -> str:
    """Per-step CSV: step, eta, f_value, grad_est_norm, query_count."""
    lines = ["step,eta,f_value,grad_est_norm,query_count"]
    lines.append("0,%.17g,%.17g,%.17g,0" % (0.0, traj.values[0], 0.0))
    for i in range(traj.steps):
        lines.append(
            "%d,%.17g,%.17g,%.17g,%d"
            % (i + 1, traj.etas[i], traj.values[i + 1], traj.grad_est_norms[i], traj.query_counts[i + 1])
        )
    return "\n".join(lines) + "\n"


# -- replay -------------------------------------------------------------------


def _dist_to_spec(dist: PerturbationDist | None) -> dict | None:
    if dist is None:
        return None
    caps = None if dist.caps is None else [float(c) for c in dist.caps]
    return {"kind": dist.kind, "sigma": dist.sigma, "dim": dist.dim, "caps": caps}


def _dist_from_spec(spec: dict | None) -> PerturbationDist | None:
    if spec is None:
        return None
    caps = spec["caps"]
    return PerturbationDist(
        spec["kind"], spec["sigma"], spec["dim"], None if caps is None else np.array(caps)
    )


def _make_replay_spec(traj: Trajectory, dist: PerturbationDist | None, noise: NoiseModel) -> dict:
    return {
        "algorithm": traj.algorithm,
        "seed_key": traj.seed_key,
        "dist": _dist_to_spec(dist),
        "noise": noise_to_spec(noise),
        "w0": [float(x) for x in traj.iterates[0]],
        "etas": [float(e) for e in traj.etas],
        "steps": traj.steps,
        "k": traj.k,
        "mu": traj.mu,
    }


def save_replay(traj: Trajectory, path) -> None:
    """Store the replay spec plus the realized iterates (for verification)."""
    if traj.replay_spec is None:
        raise ValueError("trajectory has no replay spec")
    np.savez(path, spec=json.dumps(traj.replay_spec), iterates=traj.iterates)


def load_replay(path) -> tuple[dict, np.ndarray]:
    with np.load(path) as data:
        return json.loads(str(data["spec"])), data["iterates"]


def rerun(spec: dict, objective: Objective) -> Trajectory:
    """Re-execute a recorded run against a caller-supplied objective.

    The objective is not serialized (it may hold closures or data); the
    caller must reconstruct the same one for the replay to be meaningful.
    """
    schedule = StepSchedule.explicit(spec["etas"])
    rng = RngStream(bytes.fromhex(spec["seed_key"]))
    noise = noise_from_spec(spec["noise"])
    dist = _dist_from_spec(spec["dist"])
    w0 = np.array(spec["w0"])
    alg = spec["algorithm"]
    if alg == "nso":
        return run_nso(
            objective, dist, schedule, spec["steps"], spec["k"],
            noise=noise, rng=rng, w0=w0, mu=spec["mu"],
        )
    if alg == "wp_sgd":
        return run_wp_sgd(objective, dist, schedule, spec["steps"], noise=noise, rng=rng, w0=w0)
    if alg == "sgd":
        return run_sgd(objective, schedule, spec["steps"], noise=noise, rng=rng, w0=w0)
    raise ValueError(f"unknown algorithm {alg!r}")
