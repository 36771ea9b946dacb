import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sobolev_pinn import problems as P
from sobolev_pinn.trainer import (
    SamplingPlan, TestGrid, TrainConfig, TrainRecord, aggregate, censored_epochs, epochs_to, make_fixed_grid,
    make_test_grid, read_record, resample_uniform, sweep, test_error as compute_error, train, write_record,
    write_sweep,
)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_heat_grid_counts():
    b = make_fixed_grid(P.heat(), 31, 31, 31, seed=0)
    assert b.interior.shape == (961, 2) and b.initial.shape == (31, 2) and b.boundary.shape == (62, 2)
    assert np.all(b.initial[:, 0] == 0.0)
    assert set(b.boundary[:, 1]) == {0.0, math.pi}
    assert b.w_ge == pytest.approx(10 * math.pi / 961) and b.w_bc == pytest.approx(20 / 62)


def test_fixed_grid_is_seeded():
    a, b = make_fixed_grid(P.burgers(), seed=4), make_fixed_grid(P.burgers(), seed=4)
    np.testing.assert_array_equal(a.interior, b.interior)
    np.testing.assert_array_equal(a.boundary, b.boundary)
    c = make_fixed_grid(P.burgers(), seed=5)
    assert np.any(a.interior != c.interior)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), name=st.sampled_from(["heat", "burgers", "fp-f2"]))
def test_interior_times_in_half_open_interval(seed, name):
    pr = P.get_problem(name)
    b = make_fixed_grid(pr, 7, 5, 6, 4, seed=seed)
    t = b.interior[:, 0]
    assert np.all(t > 0) and np.all(t <= pr.T)


def test_fp_grid_pairs_periodic_sides():
    b = make_fixed_grid(P.fokker_planck(), 5, 6, 7, 8, seed=1)
    assert b.interior.shape == (240, 3) and b.initial.shape == (48, 3) and b.boundary.shape == (56, 3)
    np.testing.assert_array_equal(b.boundary[:, [0, 2]], b.boundary_right[:, [0, 2]])
    assert np.all(b.boundary[:, 1] == 0.0) and np.all(b.boundary_right[:, 1] == 1.0)


def test_fixed_grid_counts_at_least_two():
    with pytest.raises(ValueError):
        make_fixed_grid(P.heat(), 1, 31, 31)


def test_poisson_iterative_draws():
    pr = P.poisson(10, 1)
    rng = np.random.default_rng(0)
    a, b = resample_uniform(pr, 500, rng), resample_uniform(pr, 500, rng)
    assert a.interior.shape == (500, 10)
    assert np.all((a.interior > 0) & (a.interior < 1))
    assert np.any(a.interior != b.interior)
    on_face = np.any((a.boundary == 0.0) | (a.boundary == 1.0), axis=1)
    assert on_face.all()


# ---------------------------------------------------------------------------
# test error
# ---------------------------------------------------------------------------

def test_exact_prediction_has_zero_error():
    for name in ["heat", "burgers", "poisson-d3-k1", "toy-sin-k2"]:
        pr = P.get_problem(name)
        metric = "linf_l2" if pr.time_dependent else "relative_l2"
        assert compute_error(lambda x: P.exact_value(pr, x), pr, metric) == 0.0


def test_zero_prediction_heat_linf_l2():
    pr = P.heat()
    err = compute_error(lambda x: np.zeros(len(x)), pr, "linf_l2")
    assert abs(err - math.sqrt(math.pi / 2)) <= 1e-3
    assert err == pytest.approx(1.2533141373155001, abs=1e-3)


@pytest.mark.parametrize("name", ["heat", "burgers", "poisson-d10-k1", "toy-relu-k2"])
def test_zero_prediction_relative_error_is_one(name):
    pr = P.get_problem(name)
    assert compute_error(lambda x: np.zeros(len(x)), pr, "relative_l2") == pytest.approx(1.0, rel=1e-15)


def test_fp_error_needs_reference():
    with pytest.raises(ValueError, match="reference"):
        compute_error(lambda x: np.zeros(len(x)), P.fokker_planck(), "linf_l2")


def test_fp_test_grid_uses_reference_axes():
    from sobolev_pinn import reference as R
    pr = P.fokker_planck("f1")
    grid = R.fp_solve(lambda x, v: P.initial_data(pr, np.stack(np.broadcast_arrays(x, v), -1)),
                      nx=8, nv=16, snapshots=3)
    tg = make_test_grid(pr, grid=grid)
    assert tg.n_times == 3 and tg.points.shape == (3 * 8 * 16, 3)
    assert tg.weights[0] == pytest.approx(1 / 8 * 10 / 16)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def test_zero_epoch_budget_rejected():
    with pytest.raises(ValueError, match="epoch"):
        train(TrainConfig("heat", "hb0", epochs=0))


def test_incompatible_or_bad_config_rejected():
    with pytest.raises(ValueError):
        TrainConfig("heat", "fp1").validate()
    with pytest.raises(ValueError):
        TrainConfig("heat", "hb0", threshold=0.0).validate()
    with pytest.raises(ValueError):
        TrainConfig("heat", "hb0", arch="3-8-1").validate()
    with pytest.raises(ValueError):
        TrainConfig("poisson-d2-k1", "po0", metric="linf_l2").validate()


def test_config_dict_roundtrip():
    c = TrainConfig("fp-f2", "fp1", sampling=SamplingPlan(n_t=5, n_x=6, n_b=7, n_v=8), threshold=1e-3)
    assert TrainConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"problem": "heat", "loss": "hb0", "epoch": 3})


def test_training_is_deterministic():
    cfg = TrainConfig("burgers", "hb1", epochs=25, eval_every=5, seed=3,
                      sampling=SamplingPlan(n_t=8, n_x=8, n_b=8))
    a, b = train(cfg), train(cfg)
    assert a.numeric() == b.numeric()
    np.testing.assert_array_equal(a.params.flatten(), b.params.flatten())


def test_fixed_grid_never_resampled_and_iterative_is():
    seen = []
    train(TrainConfig("heat", "hb0", epochs=5, sampling=SamplingPlan(n_t=4, n_x=4, n_b=4)),
          callback=lambda e, batch, p: seen.append(batch))
    assert all(b is seen[0] for b in seen)
    seen.clear()
    train(TrainConfig("poisson-d2-k1", "po0", epochs=3, sampling=SamplingPlan("iterative", n_points=20, n_boundary=8)),
          callback=lambda e, batch, p: seen.append(batch.interior))
    assert np.any(seen[0] != seen[1])


def test_training_reduces_toy_error_and_records_series():
    rec = train(TrainConfig("toy-sin-k1", "toy_h2", epochs=200, eval_every=10, threshold=1e-9))
    assert len(rec.loss) == 200
    assert rec.eval_epochs[0] == 0 and rec.eval_epochs[-1] == 200
    assert all(e % 10 == 0 for e in rec.eval_epochs)
    assert rec.test_error[-1] < 0.5 * rec.test_error[0]
    assert rec.loss[-1] < rec.loss[0]


def test_threshold_crossing_and_dense_evaluation_nearby():
    rec = train(TrainConfig("toy-sin-k1", "toy_h2", epochs=3000, threshold=1e-2, eval_every=10))
    e = rec.epochs_to_threshold
    assert e is not None
    assert rec.test_error[rec.eval_epochs.index(e)] <= 1e-2
    assert all(err > 1e-2 for ep, err in zip(rec.eval_epochs, rec.test_error) if ep < e)
    assert rec.eval_epochs[-1] == e  # stops at the threshold
    # once within a factor 2 of the threshold the stride drops to one epoch
    near = [ep for ep, err in zip(rec.eval_epochs, rec.test_error) if err <= 2e-2]
    assert near and all(b - a == 1 for a, b in zip(rec.eval_epochs[rec.eval_epochs.index(near[0]):],
                                                    rec.eval_epochs[rec.eval_epochs.index(near[0]) + 1:]))


def test_epochs_to_is_monotone_in_threshold():
    rec = train(TrainConfig("toy-sin-k2", "toy_h1", epochs=400, eval_every=10))
    errs = sorted(set(rec.test_error))
    prev = None
    for thr in errs[::-1]:
        e = epochs_to(rec, thr)
        assert e is not None
        if prev is not None:
            assert e >= prev
        prev = e


def test_divergence_is_recorded():
    pr = P.get_problem("toy-sin-k1")
    x = np.linspace(0, 2 * math.pi, 50)[:, None]
    grid = TestGrid(x, np.full(50, 1e-12), np.ones(50))  # relative error ~ |u| / 1e-12
    rec = train(TrainConfig("toy-sin-k1", "toy_l2", epochs=20, eval_every=5), test_grid=grid)
    assert rec.diverged and "test error" in rec.diverge_reason
    assert len(rec.loss) == 5


# ---------------------------------------------------------------------------
# sweeps and files
# ---------------------------------------------------------------------------

def test_single_seed_aggregate():
    res = sweep(TrainConfig("toy-sin-k1", "toy_h2", epochs=400, threshold=5e-2), 1)
    r = res.records[0]
    s = res.summary
    assert s["n_runs"] == 1 and s["epochs_std"] == 0.0 and s["final_error_std"] == 0.0
    assert s["epochs_mean"] == r.epochs_to_threshold and s["final_error_mean"] == r.final_error


def test_parallel_sweep_matches_serial():
    cfg = TrainConfig("toy-sin-k2", "toy_h1", epochs=60, eval_every=10, threshold=1e-3)
    serial = sweep(cfg, 3, jobs=1)
    parallel = sweep(cfg, 3, jobs=3)
    assert [r.numeric() for r in serial.records] == [r.numeric() for r in parallel.records]
    assert [r.seed for r in serial.records] == [0, 1, 2]


def _fake(seed, epochs, final, diverged=False, budget=100):
    return TrainRecord({"seed": seed, "epochs": budget}, [1.0], [0], [final], epochs, final, 0.1, diverged)


def test_aggregate_recomputes_from_records():
    recs = [_fake(0, 10, 1e-3), _fake(1, 30, 2e-3), _fake(2, None, 5e-3), _fake(3, 20, 9.0, diverged=True)]
    s = aggregate(recs)
    assert (s["n_runs"], s["n_reached"], s["n_diverged"]) == (4, 2, 1)
    assert s["epochs_mean"] == 20.0 and s["epochs_std"] == 10.0
    assert s["final_error_mean"] == pytest.approx(np.mean([1e-3, 2e-3, 5e-3]))
    assert s["epochs_censored_mean"] == pytest.approx((10 + 30 + 100) / 3)
    assert sum(c for _, _, c in s["histogram"]) == 2
    assert censored_epochs(recs[2]) == 100


def test_record_files_roundtrip(tmp_path):
    rec = train(TrainConfig("toy-relu-k1", "toy_l2", epochs=12, eval_every=5))
    write_record(rec, tmp_path, "000")
    back = read_record(tmp_path / "000.json")
    assert back.numeric() == rec.numeric()
    lines = (tmp_path / "000.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,test_error" and len(lines) == 14
    assert (tmp_path / "000.params.json").exists()


def test_sweep_files(tmp_path):
    res = sweep(TrainConfig("toy-sin-k1", "toy_h2", epochs=300, threshold=0.1), 2)
    s, h = write_sweep(res, tmp_path, "toy")
    assert s.read_text().splitlines()[0] == "seed,epochs_to_threshold,final_error,seconds,diverged"
    assert h.read_text().splitlines()[0] == "bin_left,bin_right,count"
