import json
import math

import numpy as np
import pytest

from marginlab.data import Dataset, gen_combes, gen_example1
from marginlab.model import ModelKind, MultiNeuronNet, loss, sample_grad
from marginlab.optim import (
    ConstantStep,
    PolynomialStep,
    default_gd_stepsize,
    init_weights,
    load_trajectory_csv,
    record_steps,
    run_gd,
    run_gd_net,
    run_sgd,
    run_sgd_ensemble,
    run_sgd_net,
    sample_indices,
    save_ensemble_json,
    save_trajectory_csv,
)
from marginlab.scenarios import EXAMPLE1_W0, two_cone_instance

RELU = ModelKind.relu()


def acute_mixed_dataset():
    """All pairwise-acute points with mixed labels; -sum(points) sits in the
    all-inactive region."""
    pts = np.array([[1.0, 0.1], [1.0, -0.1], [0.9, 0.0]])
    return Dataset(pts, np.array([1, 1, -1]))


class TestSchedules:
    def test_polynomial_exact(self):
        s = PolynomialStep(0.75)
        for k in (0, 1, 7, 1000):
            assert s.at(k) == (k + 1.0) ** (-0.75)

    def test_constant(self):
        s = ConstantStep(0.3)
        assert s.at(0) == s.at(99) == 0.3

    def test_validation(self):
        with pytest.raises(ValueError):
            PolynomialStep(0.5)
        with pytest.raises(ValueError):
            PolynomialStep(1.0)
        with pytest.raises(ValueError):
            ConstantStep(0.0)


class TestRecordSteps:
    def test_geometric_endpoints(self):
        steps = record_steps(100_000, 0)
        assert steps[0] == 0 and steps[-1] == 100_000
        assert steps == sorted(set(steps))
        late = [t for t in steps if t >= 20]
        ratios = [b / a for a, b in zip(late, late[1:])]
        assert max(ratios) <= 1.15  # ceil effects near t ~ 30
        very_late = [t for t in steps if t >= 1000]
        assert max(b / a for a, b in zip(very_late, very_late[1:])) <= 1.101

    def test_linear(self):
        assert record_steps(10, 3) == [0, 3, 6, 9, 10]

    def test_validation(self):
        with pytest.raises(ValueError):
            record_steps(0)
        with pytest.raises(ValueError):
            record_steps(10, -1)


class TestRunGD:
    def test_example1_second_sample_never_activates(self):
        ds = gen_example1()
        traj = run_gd(ds, RELU, np.array(EXAMPLE1_W0),
                      ConstantStep(default_gd_stepsize(ds)), 20_000)
        assert all(float(r.w @ ds.points[1]) < 0 for r in traj.records)
        assert traj.records[-1].region.kind == "local"
        assert traj.flip_count == 0

    def test_finite_local_min_terminates_immediately(self):
        ds = acute_mixed_dataset()
        w0 = -ds.points.sum(axis=0)
        traj = run_gd(ds, RELU, w0, ConstantStep(0.05), 1000)
        assert traj.early_terminated_at == 0
        assert traj.records[-1].t == 0
        assert traj.records[0].loss == 1.0
        assert np.array_equal(traj.final_w, w0)

    def test_linear_kind_converges_to_bisector(self):
        # two symmetric positive samples + a far-off negative pair keeping the
        # dataset two-class; the bisector (1, 0) is the closed-form target
        pts = np.array([[1.0, 0.5], [1.0, -0.5], [-3.0, 0.0]])
        ds = Dataset(pts, np.array([1, 1, -1]))
        w0 = np.array([0.4, 0.3])
        traj = run_gd(ds, ModelKind.linear(), w0, ConstantStep(0.05), 50_000)
        bisector = np.array([1.0, 0.0])
        errs = [
            np.linalg.norm(r.w / np.linalg.norm(r.w) - bisector)
            for r in traj.records
            if r.t >= 100
        ]
        assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 0.05

    def test_descent_monotone_below_smoothness_threshold(self):
        ds = gen_example1()
        traj = run_gd(ds, RELU, np.array(EXAMPLE1_W0),
                      ConstantStep(default_gd_stepsize(ds)), 10_000)
        max_loss = max(r.loss for r in traj.records)
        assert default_gd_stepsize(ds) < 2.0 / (ds.norm_bound**2 * max_loss)
        losses = [r.loss for r in traj.records]
        assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))

    def test_running_average_identity_stride_one(self):
        ds = gen_example1()
        traj = run_gd(ds, RELU, np.array(EXAMPLE1_W0), ConstantStep(0.05),
                      200, stride=1)
        ws = [r.w for r in traj.records]
        for r in traj.records[1:]:
            direct = np.mean(ws[: r.t], axis=0)
            assert np.linalg.norm(r.avg_w - direct) <= 1e-9 * max(
                1.0, np.linalg.norm(direct)
            )

    def test_avg_at_zero_is_w0(self):
        ds = gen_example1()
        traj = run_gd(ds, RELU, np.array(EXAMPLE1_W0), ConstantStep(0.05), 10)
        assert np.array_equal(traj.records[0].avg_w, traj.records[0].w)

    def test_requires_constant_schedule(self):
        ds = gen_example1()
        with pytest.raises(ValueError):
            run_gd(ds, RELU, np.zeros(2), PolynomialStep(0.6), 10)


class TestRunSGD:
    def test_matches_pure_python_replay(self):
        ds = gen_combes(2, 2, 3, 4)
        w0 = init_weights(ds, "neg-mean", scale=0.5)
        sched = PolynomialStep(0.7)
        T, seed = 2000, 13
        traj = run_sgd(ds, RELU, w0, sched, T, seed)

        idxs = sample_indices(ds.n, T, seed)
        w = w0.copy()
        avg = np.zeros(3)
        var = 0.0
        by_t = {r.t: r for r in traj.records}
        for t in range(T):
            if t in by_t:
                rec = by_t[t]
                assert np.allclose(rec.w, w, rtol=1e-12, atol=1e-14)
                assert rec.var_sum == pytest.approx(var, rel=1e-12, abs=1e-300)
                if t > 0:
                    assert np.allclose(rec.avg_w, avg, rtol=1e-11, atol=1e-14)
            avg = avg + (w - avg) / (t + 1)
            i = int(idxs[t])
            g = sample_grad(w, (ds.points[i], int(ds.labels[i])), RELU)
            eta = sched.at(t)
            var += eta * eta * float(g @ g)
            w = w - eta * g
        final = traj.records[-1]
        assert np.allclose(final.w, w, rtol=1e-12, atol=1e-14)

    def test_deterministic_by_seed(self):
        ds = gen_combes(3, 3, 3, 1)
        w0 = init_weights(ds, "neg-mean")
        a = run_sgd(ds, RELU, w0, PolynomialStep(0.6), 5000, 7)
        b = run_sgd(ds, RELU, w0, PolynomialStep(0.6), 5000, 7)
        assert np.array_equal(a.final_w, b.final_w)
        for ra, rb in zip(a.records, b.records):
            assert ra.t == rb.t and ra.loss == rb.loss
            assert np.array_equal(ra.w, rb.w)

    def test_seeds_differ_schema_identical(self):
        ds = gen_combes(3, 3, 3, 1)
        w0 = init_weights(ds, "neg-mean")
        a = run_sgd(ds, RELU, w0, PolynomialStep(0.6), 3000, 1)
        b = run_sgd(ds, RELU, w0, PolynomialStep(0.6), 3000, 2)
        assert np.array_equal(a.ts, b.ts)
        assert not np.array_equal(a.final_w, b.final_w)

    def test_stride_does_not_change_dynamics(self):
        # recording is observation only: chunk boundaries shift the RNG calls
        # but not the stream, so the endpoint is bit-identical
        ds = gen_combes(3, 3, 3, 2)
        w0 = init_weights(ds, "neg-mean")
        geo = run_sgd(ds, RELU, w0, PolynomialStep(0.6), 4000, 5, stride=0)
        lin = run_sgd(ds, RELU, w0, PolynomialStep(0.6), 4000, 5, stride=137)
        assert np.array_equal(geo.final_w, lin.final_w)
        assert geo.flip_count == lin.flip_count

    def test_region_monotone_on_combes(self):
        ds = gen_combes(4, 4, 4, 3)
        w0 = init_weights(ds, "neg-mean", scale=0.5)
        traj = run_sgd(ds, RELU, w0, PolynomialStep(0.6), 100_000, 11)
        assert traj.records[-1].region.kind == "separable"
        stab = traj.last_flip_step
        assert 0 <= stab < 100_000
        for r in traj.records:
            if r.t >= stab:
                assert r.region.kind == "separable"
                assert r.flips == traj.flip_count

    def test_var_sum_log_growth_bound(self):
        ds = gen_combes(4, 4, 4, 5)
        w0 = init_weights(ds, "neg-mean", scale=0.5)
        T = 200_000
        traj = run_sgd(ds, RELU, w0, PolynomialStep(0.6), T, 3)
        ratios = {r.t: r.var_sum / math.log(r.t) for r in traj.records if r.t >= 2}
        half_t = min(t for t in ratios if t >= T // 2)
        final_max = max(v for t, v in ratios.items() if t >= T // 2)
        assert final_max <= 2.0 * ratios[half_t]

    def test_var_sum_nondecreasing(self):
        ds = gen_combes(3, 3, 3, 6)
        traj = run_sgd(ds, RELU, init_weights(ds, "neg-mean"),
                       PolynomialStep(0.6), 10_000, 9)
        vs = [r.var_sum for r in traj.records]
        assert all(b >= a for a, b in zip(vs, vs[1:]))

    def test_requires_polynomial_schedule(self):
        ds = gen_example1()
        with pytest.raises(ValueError):
            run_sgd(ds, RELU, np.zeros(2), ConstantStep(0.1), 10, 0)

    def test_overflow_taints(self):
        ds = gen_example1()
        w0 = 1e4 * ds.points[2]  # enormous misclassified negative product
        traj = run_sgd(ds, RELU, w0, PolynomialStep(0.6), 200, 0)
        assert traj.tainted


class TestEnsemble:
    def test_duplicated_seeds_equal_single_run(self):
        ds = gen_combes(3, 3, 3, 1)
        w0 = init_weights(ds, "neg-mean")
        single = run_sgd(ds, RELU, w0, PolynomialStep(0.6), 2000, 5)
        ens = run_sgd_ensemble(ds, RELU, w0, PolynomialStep(0.6), 2000, [5, 5])
        assert np.array_equal(ens.ts, single.ts)
        for r, mean in zip(single.records, ens.mean_avg_w):
            assert np.allclose(mean, r.avg_w, rtol=0, atol=0)
        assert np.all(ens.se_avg_w == 0.0)

    def test_standard_error_shrinks_with_seeds(self):
        ds = gen_combes(3, 3, 3, 2)
        w0 = init_weights(ds, "neg-mean")
        small = run_sgd_ensemble(ds, RELU, w0, PolynomialStep(0.6), 5000,
                                 list(range(4)))
        big = run_sgd_ensemble(ds, RELU, w0, PolynomialStep(0.6), 5000,
                               list(range(16)))
        assert big.se_loss_avg_w[-1] < small.se_loss_avg_w[-1]

    def test_needs_two_seeds(self):
        ds = gen_combes(3, 3, 3, 1)
        with pytest.raises(ValueError):
            run_sgd_ensemble(ds, RELU, np.zeros(3), PolynomialStep(0.6), 100, [1])

    def test_thread_cap_env(self, monkeypatch):
        ds = gen_combes(3, 3, 3, 1)
        w0 = init_weights(ds, "neg-mean")
        monkeypatch.setenv("MARGINLAB_THREADS", "1")
        serial = run_sgd_ensemble(ds, RELU, w0, PolynomialStep(0.6), 1000, [1, 2])
        monkeypatch.setenv("MARGINLAB_THREADS", "2")
        threaded = run_sgd_ensemble(ds, RELU, w0, PolynomialStep(0.6), 1000, [1, 2])
        assert np.array_equal(serial.mean_avg_w, threaded.mean_avg_w)


class TestNetRunners:
    def test_dead_neuron_reduces_to_single_neuron_gd(self):
        ds = acute_mixed_dataset()
        axis = ds.points.mean(axis=0)
        w1 = axis / np.linalg.norm(axis)
        w2 = -w1  # never activates and never updates
        net = MultiNeuronNet(np.stack([w1, w2], axis=1), np.array([1.0, -1.0]))
        eta = 0.05
        ntraj = run_gd_net(ds, net, eta, 500)
        straj = run_gd(ds, RELU, w1, ConstantStep(eta), 500)
        for nr, sr in zip(ntraj.records, straj.records):
            assert nr.t == sr.t
            assert np.allclose(nr.W[:, 0], sr.w, rtol=1e-12, atol=1e-14)
            assert np.array_equal(nr.W[:, 1], w2)
            assert nr.loss == pytest.approx(sr.loss, rel=1e-12)

    def test_shared_activation_proportional_updates(self):
        ds, _ = two_cone_instance(seed=1)
        axis = ds.points[ds.pos_indices].mean(axis=0)
        axis /= np.linalg.norm(axis)
        # neurons 1-2 identical activation set (the positive cone)
        W0 = np.stack([0.3 * axis, 0.5 * axis,
                       -0.4 * axis, -0.7 * axis], axis=1)
        v = np.array([2.0, 0.5, -1.0, -0.5])
        net = MultiNeuronNet(W0, v)
        ntraj = run_gd_net(ds, net, 0.05, 100, stride=1)
        for r0, r1 in zip(ntraj.records, ntraj.records[1:]):
            d = r1.W - r0.W
            assert np.allclose(d[:, 0] / v[0], d[:, 1] / v[1],
                               rtol=1e-10, atol=1e-14)
            assert np.allclose(d[:, 2] / v[2], d[:, 3] / v[3],
                               rtol=1e-10, atol=1e-14)

    def test_effective_weight_recursion_definition_match(self):
        from marginlab.analysis import verify_partition_claims

        ds, net = two_cone_instance(seed=0)
        ntraj = run_gd_net(ds, net, default_gd_stepsize(ds), 5000)
        rep = verify_partition_claims(ntraj, ds, 1)
        assert rep.recursion_max_rel_err <= 1e-9

    def test_pattern_changes_recorded(self):
        ds, net = two_cone_instance(seed=0)
        # tilt neuron 0 to weakly activate one negative-cone sample; the
        # dynamics pull it back into the positive cone, flipping that bit
        j = int(ds.neg_indices[0])
        W = net.W.copy()
        W[:, 0] = 0.05 * ds.points[j] / np.linalg.norm(ds.points[j]) + 0.02 * W[:, 0] / np.linalg.norm(W[:, 0])
        tilted = MultiNeuronNet(W, net.v)
        assert float(tilted.W[:, 0] @ ds.points[j]) > 0
        ntraj = run_gd_net(ds, tilted, default_gd_stepsize(ds), 20_000)
        assert ntraj.pattern_change_steps.size > 0
        first, last = ntraj.records[0], ntraj.records[-1]
        assert not np.array_equal(first.patterns, last.patterns)

    def test_sgd_net_deterministic(self):
        ds, net = two_cone_instance(seed=2)
        a = run_sgd_net(ds, net, PolynomialStep(0.6), 3000, seed=4)
        b = run_sgd_net(ds, net, PolynomialStep(0.6), 3000, seed=4)
        assert np.array_equal(a.records[-1].W, b.records[-1].W)

    def test_effective_map_matches_definition(self):
        ds, net = two_cone_instance(seed=1)
        ntraj = run_gd_net(ds, net, 0.05, 2000, stride=500)
        for idx in range(len(ntraj.records)):
            r = ntraj.records[idx]
            for pattern, (wt, wb) in ntraj.effective_map(idx).items():
                bits = np.array(pattern, dtype=np.float64)
                assert np.array_equal(wt, r.W @ (net.v * bits))
                assert np.array_equal(wb, r.avg_W @ (net.v * bits))

    def test_net_all_inactive_terminates(self):
        ds = acute_mixed_dataset()
        axis = ds.points.mean(axis=0)
        W = np.stack([-axis, -2 * axis], axis=1)
        net = MultiNeuronNet(W, np.array([1.0, -1.0]))
        ntraj = run_gd_net(ds, net, 0.05, 100)
        assert ntraj.early_terminated_at == 0
        assert ntraj.records[-1].loss == 1.0


class TestSerialization:
    def test_csv_round_trip_and_determinism(self, tmp_path):
        ds = gen_combes(3, 3, 3, 1)
        w0 = init_weights(ds, "neg-mean")
        traj = run_sgd(ds, RELU, w0, PolynomialStep(0.6), 2000, 3)
        target = np.zeros(3)
        target[0] = 1.0
        p1, p2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        save_trajectory_csv(traj, p1, dir_global=target)
        save_trajectory_csv(traj, p2, dir_global=target)
        assert open(p1, "rb").read() == open(p2, "rb").read()
        table = load_trajectory_csv(p1)
        assert np.array_equal(table.ts, traj.ts)
        for r, lo, reg in zip(traj.records, table.loss, table.regions):
            assert lo == r.loss
            assert reg == r.region

    def test_weights_sidecar(self, tmp_path):
        ds = gen_example1()
        traj = run_gd(ds, RELU, np.array(EXAMPLE1_W0), ConstantStep(0.05), 100)
        files = save_trajectory_csv(traj, str(tmp_path / "t.csv"),
                                    weights_sidecar=True)
        assert len(files) == 2
        lines = open(files[1]).read().splitlines()
        assert lines[0] == "t,w0,w1,avg0,avg1"
        first = lines[1].split(",")
        assert float(first[1]) == traj.records[0].w[0]

    def test_ensemble_json(self, tmp_path):
        ds = gen_combes(3, 3, 3, 1)
        w0 = init_weights(ds, "neg-mean")
        ens = run_sgd_ensemble(ds, RELU, w0, PolynomialStep(0.6), 1000, [1, 2, 3])
        path = str(tmp_path / "ens.json")
        save_ensemble_json(ens, path)
        doc = json.loads(open(path).read())
        assert doc["schema_version"] == 1
        assert doc["seeds"] == [1, 2, 3]
        assert len(doc["t"]) == len(ens.ts)
        assert not doc["tainted"]


class TestInitWeights:
    def test_modes(self):
        ds = gen_combes(3, 3, 3, 1)
        assert np.array_equal(init_weights(ds, "zeros"), np.zeros(3))
        fp = init_weights(ds, "first-pos")
        assert np.linalg.norm(fp) == pytest.approx(1.0)
        nm = init_weights(ds, "neg-mean", scale=2.0)
        assert np.linalg.norm(nm) == pytest.approx(2.0)
        # neg-mean starts misclassified on two-cone data
        assert np.any(ds.points[ds.neg_indices] @ nm > 0)
        r1 = init_weights(ds, "random", seed=5)
        r2 = init_weights(ds, "random", seed=5)
        assert np.array_equal(r1, r2)
        with pytest.raises(ValueError):
            init_weights(ds, "bogus")
