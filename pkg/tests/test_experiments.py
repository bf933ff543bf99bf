import json

import numpy as np
import pytest

from nsopt.config import (
    CONFIG_TYPES,
    ConvexRateConfig,
    LowerBoundConfig,
    MomentumConfig,
    RateSweepConfig,
    SensingConfig,
    TaylorConfig,
)
from nsopt.experiments import (
    EXPERIMENTS,
    RunReport,
    exp_convex_rate,
    exp_lower_bound,
    exp_matrix_sensing,
    exp_momentum_lb,
    exp_rate_sweep,
    exp_taylor_check,
)


def test_registry_matches_config_types():
    assert set(EXPERIMENTS) == set(CONFIG_TYPES)
    for name, (cls, runner) in EXPERIMENTS.items():
        assert CONFIG_TYPES[name] is cls
        assert callable(runner)


# ---------------------------------------------------------------------------
# small smoke runs, one per experiment


def test_taylor_smoke():
    rep = exp_taylor_check(TaylorConfig(m=50_000))
    assert rep.experiment == "taylor"
    assert len(rep.records) == len(TaylorConfig().sigma_grid)
    assert rep.passed
    # remainder should grow with sigma for the quartic
    rems = [abs(r["remainder"]) for r in rep.records]
    assert rems[-1] > rems[0]


def test_taylor_quadratic_has_no_slope_check():
    rep = exp_taylor_check(TaylorConfig(objective="quadratic", m=20_000))
    names = [c["name"] for c in rep.checks]
    assert not any("slope" in n for n in names)
    assert rep.passed  # quadratic remainder is identically ~0


def test_rate_sweep_smoke():
    cfg = RateSweepConfig(repetitions=15, T_list=(16, 64), k_list=(1,), dim=4)
    rep = exp_rate_sweep(cfg)
    assert len(rep.records) == 15 * 2
    cells = rep.aggregates["cells"]
    assert [(c["k"], c["T"]) for c in cells] == [(1, 16), (1, 64)]
    for c in cells:
        assert c["mean"] <= c["rhs"]
    # every record stores the stepsize and bound used for its cell
    for r in rep.records:
        assert r["eta"] > 0 and r["rhs"] > 0 and r["grad_norm_sq"] >= 0


def test_lower_bound_regime1_smoke():
    cfg = LowerBoundConfig(regime=1, k_list=(1,), T_list=(8,), runs=10)
    rep = exp_lower_bound(cfg)
    assert rep.passed
    for r in rep.records:
        assert r["min_grad_sq"] >= r["rhs"]
        assert r["flat_ok"]


def test_lower_bound_regime2_smoke():
    rep = exp_lower_bound(LowerBoundConfig(regime=2, repetitions=30))
    assert rep.passed
    (check,) = rep.checks
    assert check["name"] == "min_t_mean>=rhs"
    rec = rep.records[0]
    assert len(rec["grad_sq_by_t"]) == LowerBoundConfig(regime=2).T


def test_momentum_smoke():
    rep = exp_momentum_lb(MomentumConfig(repetitions=40))
    assert rep.passed
    kinds = {r["kind"] for r in rep.records}
    assert kinds == {"xmu_dev", "grad_sq"}
    devs = [r for r in rep.records if r["kind"] == "xmu_dev"]
    assert len(devs) == 3  # one per momentum value
    assert all(d["value"] <= 1e-10 for d in devs)


def test_convex_rate_smoke():
    rep = exp_convex_rate(ConvexRateConfig(T_list=(25, 100, 400), repetitions=2))
    assert rep.passed
    for r in rep.records:
        assert 0 <= r["gap"] <= r["bound"]


def _tiny_sensing(**overrides):
    base = dict(
        d=6,
        r=1,
        n=10,
        repetitions=2,
        steps=200,
        eta=0.02,
        sigma_p=0.05,
        validation=50,
        val_every=50,
    )
    base.update(overrides)
    return SensingConfig(**base)


def test_sensing_smoke_structure():
    cfg = _tiny_sensing()
    rep = exp_matrix_sensing(cfg)
    # 3 algorithms x repetitions records, each with a validation curve
    assert len(rep.records) == 3 * cfg.repetitions
    algs = sorted({r["alg"] for r in rep.records})
    assert algs == ["gd", "nso", "wp"]
    for r in rep.records:
        assert not r["diverged"]
        steps = [p["step"] for p in r["curve"]]
        assert steps[0] == 0 and steps[-1] == cfg.steps
        assert r["final_train_mse"] == r["curve"][-1]["train_mse"]
    assert set(rep.aggregates["medians"]) == {"gd", "wp", "nso"}


def test_sensing_zero_smoothing_reduces_to_gd():
    # with sigma_p = 0 every perturbation is the zero vector, so the three
    # update rules coincide and the trajectories must match bit for bit
    rep = exp_matrix_sensing(_tiny_sensing(repetitions=1, sigma_p=0.0))
    by_alg = {r["alg"]: r for r in rep.records}
    gd = by_alg["gd"]
    for alg in ("wp", "nso"):
        other = by_alg[alg]
        assert other["final_train_mse"] == gd["final_train_mse"]
        assert other["final_val_mse"] == gd["final_val_mse"]
        assert other["final_trace"] == gd["final_trace"]
        assert other["curve"] == gd["curve"]


# ---------------------------------------------------------------------------
# RunReport serialization and verification


def test_report_json_round_trip_and_verify():
    rep = exp_lower_bound(LowerBoundConfig(regime=1, k_list=(1,), T_list=(8,), runs=5))
    text = rep.to_json()
    back = RunReport.from_json(text)
    assert back.to_json() == text
    assert back.verify()


def test_verify_detects_tampering():
    rep = exp_lower_bound(LowerBoundConfig(regime=1, k_list=(1,), T_list=(8,), runs=5))
    back = RunReport.from_json(rep.to_json())
    back.records[0]["min_grad_sq"] = 0.0
    assert not back.verify()


def test_json_payload_is_plain_data():
    rep = exp_convex_rate(ConvexRateConfig(T_list=(25,), repetitions=2))
    payload = json.loads(rep.to_json())
    assert payload["experiment"] == "convex_rate"
    assert payload["passed"] is True
    assert isinstance(payload["config"]["T_list"], list)


def test_summary_lines_shape():
    rep = exp_convex_rate(ConvexRateConfig(T_list=(25,), repetitions=1))
    lines = rep.summary_lines()
    assert lines[0].startswith("experiment: convex_rate (seed 0)")
    assert lines[-1] in ("result: PASS", "result: FAIL")
    assert all(l.lstrip().startswith("[PASS]") or l.lstrip().startswith("[FAIL]")
               for l in lines[1:-1])


# ---------------------------------------------------------------------------
# CSV output


def test_csv_layout_and_precision():
    cfg = RateSweepConfig(repetitions=3, T_list=(16,), k_list=(1,), dim=4)
    rep = exp_rate_sweep(cfg)
    text = rep.to_csv()
    lines = text.strip().split("\n")
    header = lines[0].split(",")
    assert header == ["k", "T", "rep", "eta", "rhs", "grad_norm_sq"]
    assert len(lines) == 1 + len(rep.records)
    # floats are written with enough digits to round-trip exactly
    for line, rec in zip(lines[1:], rep.records):
        cells = line.split(",")
        assert float(cells[3]) == rec["eta"]
        assert float(cells[5]) == rec["grad_norm_sq"]


def test_sensing_csv_flattens_curves():
    cfg = _tiny_sensing(repetitions=1)
    rep = exp_matrix_sensing(cfg)
    lines = rep.to_csv().strip().split("\n")
    assert lines[0] == "rep,alg,step,train_mse,val_mse"
    points_per_curve = len(rep.records[0]["curve"])
    assert len(lines) == 1 + 3 * points_per_curve


def test_lower_bound_csv_regimes_differ():
    r1 = exp_lower_bound(LowerBoundConfig(regime=1, k_list=(1,), T_list=(8,), runs=3))
    r2 = exp_lower_bound(LowerBoundConfig(regime=2, repetitions=3))
    h1 = r1.to_csv().split("\n", 1)[0]
    h2 = r2.to_csv().split("\n", 1)[0]
    assert h1 != h2
    assert h1.startswith("regime,") and h2.startswith("regime,")


# ---------------------------------------------------------------------------
# determinism


def test_same_seed_same_bytes():
    cfg = MomentumConfig(repetitions=10)
    a = exp_momentum_lb(cfg)
    b = exp_momentum_lb(cfg)
    assert a.to_json() == b.to_json()
    assert a.to_csv() == b.to_csv()


def test_different_seed_different_records():
    a = exp_rate_sweep(RateSweepConfig(repetitions=5, T_list=(16,), k_list=(1,), dim=4, seed=0))
    b = exp_rate_sweep(RateSweepConfig(repetitions=5, T_list=(16,), k_list=(1,), dim=4, seed=1))
    va = [r["grad_norm_sq"] for r in a.records]
    vb = [r["grad_norm_sq"] for r in b.records]
    assert va != vb


@pytest.mark.parametrize("threads", [2, 4])
def test_thread_count_never_changes_output(threads):
    cfg = RateSweepConfig(repetitions=12, T_list=(16, 64), k_list=(1,), dim=4)
    serial = exp_rate_sweep(cfg, threads=1)
    parallel = exp_rate_sweep(cfg, threads=threads)
    assert serial.to_json() == parallel.to_json()
    assert serial.to_csv() == parallel.to_csv()


def test_thread_determinism_sensing():
    cfg = _tiny_sensing(repetitions=3)
    serial = exp_matrix_sensing(cfg, threads=1)
    parallel = exp_matrix_sensing(cfg, threads=3)
    assert serial.to_json() == parallel.to_json()


def test_records_are_json_safe():
    # np scalars sneaking into records would break json round trips
    for runner, cfg in [
        (exp_taylor_check, TaylorConfig(m=2000)),
        (exp_convex_rate, ConvexRateConfig(T_list=(25,), repetitions=1)),
        (exp_lower_bound, LowerBoundConfig(regime=2, repetitions=2)),
    ]:
        rep = runner(cfg)
        json.loads(rep.to_json())  # raises on non-serializable content
        assert not _has_numpy(rep.records)


def _has_numpy(obj):
    if isinstance(obj, (np.generic, np.ndarray)):
        return True
    if isinstance(obj, dict):
        return any(_has_numpy(v) for v in obj.values())
    if isinstance(obj, (list, tuple)):
        return any(_has_numpy(v) for v in obj)
    return False
