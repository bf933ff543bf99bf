"""Optimizer loop checks: hand-unrolled recursions, query accounting, stream
splitting, replay fidelity, and the iterate-selection rules."""

import numpy as np
import pytest

from nsopt.core import PerturbationDist, derive_stream
from nsopt.objectives import make_quadratic, make_quartic
from nsopt.oracles import ExactGradient, GradOracle, IsotropicGradientNoise, nso_gradient_estimate
from nsopt.optimizers import (
    DivergedError,
    StepSchedule,
    Trajectory,
    average_iterates,
    load_replay,
    rerun,
    run_nso,
    run_sgd,
    run_wp_sgd,
    save_replay,
    select_random_iterate,
    trajectory_to_csv,
)


def _quad_dist(dim, sigma=0.5, kind="binomial"):
    return PerturbationDist(kind, sigma, dim)


def test_schedule_constant_and_explicit():
    assert np.all(StepSchedule.constant(0.1).resolve(4) == 0.1)
    sched = StepSchedule.explicit([0.1, 0.2, 0.3])
    assert list(sched.resolve(3)) == [0.1, 0.2, 0.3]
    with pytest.raises(ValueError):
        sched.resolve(4)  # length mismatch
    with pytest.raises(ValueError):
        StepSchedule.constant(0.0)
    with pytest.raises(ValueError):
        StepSchedule.explicit([0.1, -0.2])
    with pytest.raises(ValueError):
        StepSchedule("warmup", eta=0.1)


def test_momentum_recursion_hand_unrolled():
    # f = w^2/2, mu=0.9, eta=0.1, W0=1, exact oracle, binomial perturbations
    # (powers of two, so the two-point average is exact):
    #   G0=1.0 -> M1=-0.1, W1=0.9; G1=0.9 -> M2=-0.18, W2=0.72
    obj = make_quadratic(1.0, 1)
    traj = run_nso(
        obj, _quad_dist(1), StepSchedule.constant(0.1), 2, 1,
        seed=0, w0=[1.0], mu=0.9,
    )
    assert traj.iterates[:, 0] == pytest.approx([1.0, 0.9, 0.72], rel=1e-12)
    assert traj.momenta[:, 0] == pytest.approx([0.0, -0.1, -0.18], rel=1e-12)
    assert traj.values[0] == 0.5
    assert np.array_equal(traj.iterates[1:], traj.iterates[:-1] + traj.momenta[1:])


def test_mu_zero_matches_plain_descent_bitwise():
    obj = make_quartic(3)
    dist = PerturbationDist("gaussian", 0.3, 3)
    noise = IsotropicGradientNoise(0.2)
    steps, k, eta = 12, 2, 0.01
    traj = run_nso(
        obj, dist, StepSchedule.constant(eta), steps, k,
        noise=noise, seed=77, w0=[0.5, -0.2, 0.1],
    )
    # replicate with the same stream lineage and the unadorned update rule
    root = derive_stream(77, "run")
    perturb = root.child("perturb")
    oracle = GradOracle(obj, noise, root.child("oracle"))
    w = np.array([0.5, -0.2, 0.1])
    for i in range(steps):
        g, _ = nso_gradient_estimate(oracle, dist, w, k, i, perturb)
        w = w - eta * g
    assert np.array_equal(traj.final, w)


def test_query_accounting():
    obj = make_quadratic(1.0, 2)
    dist = _quad_dist(2)
    steps, k = 5, 3
    traj = run_nso(obj, dist, StepSchedule.constant(0.1), steps, k, seed=1)
    assert traj.query_counts[0] == 0
    assert list(np.diff(traj.query_counts)) == [2 * k] * steps
    wp = run_wp_sgd(obj, dist, StepSchedule.constant(0.1), steps, seed=1)
    assert wp.query_counts[-1] == steps
    gd = run_sgd(obj, StepSchedule.constant(0.1), steps, seed=1)
    assert gd.query_counts[-1] == steps


def test_wp_with_zero_sigma_matches_sgd_bitwise():
    # the perturbation and oracle streams are split, so a zero-width
    # perturbation makes the single-query baselines coincide exactly
    obj = make_quartic(2)
    noise = IsotropicGradientNoise(0.1)
    sched = StepSchedule.constant(0.02)
    wp = run_wp_sgd(
        obj, PerturbationDist("gaussian", 0.0, 2), sched, 8,
        noise=noise, seed=5, w0=[1.0, -1.0],
    )
    gd = run_sgd(obj, sched, 8, noise=noise, seed=5, w0=[1.0, -1.0])
    assert np.array_equal(wp.iterates, gd.iterates)


def test_divergence_raises():
    obj = make_quadratic(1.0, 1)
    with pytest.raises(DivergedError):
        run_nso(obj, _quad_dist(1), StepSchedule.constant(3.0), 100, 1, seed=2, w0=[1.0])


def test_step_size_warning_against_curvature():
    obj = make_quadratic(2.0, 1)  # 1/C = 0.5
    args = (obj, _quad_dist(1), StepSchedule.constant(0.6), 2, 1)
    assert run_nso(*args, seed=0, w0=[0.1]).warnings
    calm = run_nso(obj, _quad_dist(1), StepSchedule.constant(0.5), 2, 1, seed=0, w0=[0.1])
    assert calm.warnings == []  # eta = 1/C exactly is allowed


def test_input_validation():
    obj = make_quadratic(1.0, 2)
    sched = StepSchedule.constant(0.1)
    with pytest.raises(ValueError):
        run_nso(obj, _quad_dist(3), sched, 1, 1, seed=0)  # dim mismatch
    with pytest.raises(ValueError):
        run_nso(obj, _quad_dist(2), sched, 1, 1)  # neither seed nor rng
    with pytest.raises(ValueError):
        run_nso(obj, _quad_dist(2), sched, 1, 1, seed=0, rng=derive_stream(0))
    with pytest.raises(ValueError):
        run_nso(obj, _quad_dist(2), sched, 1, 1, seed=0, w0=[1.0, np.nan])
    with pytest.raises(ValueError):
        run_nso(obj, _quad_dist(2), sched, 1, 1, seed=0, w0=[1.0])  # bad shape
    with pytest.raises(ValueError):
        run_nso(obj, _quad_dist(2), sched, 1, 0, seed=0)  # k < 1


def test_select_random_iterate_weights_and_indexing():
    traj = run_nso(
        make_quadratic(1.0, 1), _quad_dist(1), StepSchedule.explicit([1.0, 3.0]), 2, 1,
        seed=3, w0=[1.0],
    )
    rng = derive_stream(11, "sel")
    picks = [select_random_iterate(traj, rng) for _ in range(10_000)]
    freq = np.mean([j for j, _ in picks])
    assert freq == pytest.approx(0.75, abs=0.01)
    for j, w in picks[:10]:
        assert np.array_equal(w, traj.iterates[j])  # iterate *before* step j


def test_average_iterates_excludes_start():
    traj = run_nso(
        make_quadratic(1.0, 2), _quad_dist(2), StepSchedule.constant(0.1), 3, 1,
        seed=4, w0=[1.0, 2.0],
    )
    assert np.allclose(average_iterates(traj), traj.iterates[1:].mean(axis=0))
    assert not np.allclose(average_iterates(traj), traj.iterates.mean(axis=0))


def test_trajectory_csv_layout():
    traj = run_nso(
        make_quadratic(1.0, 1), _quad_dist(1), StepSchedule.constant(0.25), 2, 2,
        seed=6, w0=[1.0],
    )
    lines = trajectory_to_csv(traj).strip().split("\n")
    assert lines[0] == "step,eta,f_value,grad_est_norm,query_count"
    assert len(lines) == 4  # header + start row + 2 steps
    assert lines[1].startswith("0,0,0.5")
    assert lines[1].endswith(",0,0")
    last = lines[3].split(",")
    assert last[0] == "3" or last[0] == "2"
    assert last[-1] == "8"  # 2k queries per step, cumulative


def test_replay_round_trip_bitwise(tmp_path):
    obj = make_quartic(4)
    dist = PerturbationDist("laplace", 0.2, 4)
    traj = run_nso(
        obj, dist, StepSchedule.explicit([0.02, 0.01, 0.01]), 3, 2,
        noise=IsotropicGradientNoise(0.3), seed=9, w0=[1.0, 0.5, -0.5, 0.25], mu=0.5,
    )
    path = tmp_path / "run.npz"
    save_replay(traj, path)
    spec, recorded = load_replay(path)
    assert np.array_equal(recorded, traj.iterates)
    again = rerun(spec, obj)
    assert np.array_equal(again.iterates, traj.iterates)
    assert np.array_equal(again.values, traj.values)
    assert again.mu == 0.5 and again.k == 2


def test_replay_round_trip_baselines(tmp_path):
    obj = make_quadratic(1.0, 2)
    dist = PerturbationDist("uniform", 0.4, 2)
    for traj in [
        run_wp_sgd(obj, dist, StepSchedule.constant(0.1), 4, noise=IsotropicGradientNoise(0.2), seed=12, w0=[1.0, 1.0]),
        run_sgd(obj, StepSchedule.constant(0.1), 4, noise=IsotropicGradientNoise(0.2), seed=12, w0=[1.0, 1.0]),
    ]:
        p = tmp_path / f"{traj.algorithm}.npz"
        save_replay(traj, p)
        spec, _ = load_replay(p)
        assert np.array_equal(rerun(spec, obj).iterates, traj.iterates)


def test_trajectory_properties():
    traj = run_nso(
        make_quadratic(1.0, 1), _quad_dist(1), StepSchedule.constant(0.1), 3, 1,
        seed=8, w0=[1.0],
    )
    assert traj.steps == 3
    assert isinstance(traj, Trajectory)
    assert np.array_equal(traj.final, traj.iterates[-1])
    assert traj.values.shape == (4,)
    assert traj.grad_est_norms.shape == (3,)