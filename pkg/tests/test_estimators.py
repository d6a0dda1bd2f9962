import numpy as np
import pytest
from hypothesis import given, strategies as st

from hpinf.estimators import (EXACT_MAX_ENTRIES, CapacityError, GradientDump, InfluenceReport,
                              datainf_inverse_dense, rank_examples, run_estimator, score_datainf,
                              score_exact, score_hyperinf, score_lissa, score_tracin)
from hpinf.fisher import ConvergenceWarning, damping_factor, vec
from hpinf.hyperpower import IterationConfig
from hpinf.linalg import ShapeError

from conftest import random_dump

STABLE = IterationConfig(max_iters=60, init_mode="transpose-scaled")


def kron_lift_oracle(dump, lam):
    """-sum_l vec(v)^T (I_r kron (G + lam I))^{-1} vec(g_k), solved densely."""
    total = np.zeros(dump.n_examples)
    for b in dump.block_names:
        g = dump.train[b]
        n, d, r = g.shape
        gfim = sum(gi @ gi.T for gi in g) / n + lam * np.eye(d)
        big = np.kron(np.eye(r), gfim)
        u = np.linalg.solve(big, vec(dump.val[b]))
        total -= np.array([vec(gi) @ u for gi in g])
    return total


def exact_loop_oracle(dump, lam):
    total = np.zeros(dump.n_examples)
    for b in dump.block_names:
        g = dump.train[b]
        flat = [vec(gi) for gi in g]
        fim = sum(np.outer(f, f) for f in flat) / len(flat) + lam * np.eye(len(flat[0]))
        u = np.linalg.solve(fim, vec(dump.val[b]))
        total -= np.array([f @ u for f in flat])
    return total


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestDump:
    def test_transposes_wide_blocks(self, rng):
        dump = GradientDump(["w"], {"w": rng.standard_normal((3, 2, 5))}, {"w": np.ones((2, 5))})
        assert dump.shape("w") == (5, 2) and dump.transposed["w"]

    def test_default_ids(self, rng):
        assert random_dump(rng, n=4).example_ids == ["0", "1", "2", "3"]

    @pytest.mark.parametrize("bad", ["missing_val", "shape", "count", "nan"])
    def test_validation(self, rng, bad):
        train = {"a": rng.standard_normal((3, 4, 2)), "b": rng.standard_normal((3, 4, 2))}
        val = {"a": np.ones((4, 2)), "b": np.ones((4, 2))}
        if bad == "missing_val":
            del val["b"]
        elif bad == "shape":
            val["b"] = np.ones((4, 3))
        elif bad == "count":
            train["b"] = train["b"][:2]
        else:
            train["a"][1, 2, 0] = np.nan
        with pytest.raises((ShapeError, ValueError)):
            GradientDump(["a", "b"], train, val)


class TestExact:
    def test_identity_curvature(self, rng):
        v = rng.standard_normal((3, 1))
        dump = GradientDump(["a"], {"a": np.zeros((1, 3, 1)) + v}, {"a": v})
        # FIM = v v^T, so choose lam=1 and compare against the explicit formula
        rep = score_exact(dump, lam=1.0)
        expected = -(vec(v) @ np.linalg.solve(np.outer(vec(v), vec(v)) + np.eye(3), vec(v)))
        assert rep.scores[0] == pytest.approx(expected, rel=1e-12)

    def test_orthogonal_under_metric(self):
        g = np.array([[[0.0], [1.0]]])
        dump = GradientDump(["a"], {"a": g}, {"a": np.array([[1.0], [0.0]])})
        assert score_exact(dump, lam=0.5).scores[0] == 0.0

    def test_brute_force_loop(self, rng):
        dump = random_dump(rng, 20, (("a", 8, 2),))
        np.testing.assert_allclose(score_exact(dump, lam=0.3).scores,
                                   exact_loop_oracle(dump, 0.3), rtol=1e-10, atol=1e-12)

    def test_cg_consistent(self, rng):
        dump = random_dump(rng, 20, (("a", 8, 2), ("b", 6, 3)))
        lu = score_exact(dump).scores
        cg = score_exact(dump, solver="cg").scores
        assert rel_err(cg, lu) <= 1e-8

    def test_capacity(self, rng):
        d = int(np.sqrt(EXACT_MAX_ENTRIES)) // 2 + 1
        dump = GradientDump(["a"], {"a": np.zeros((1, d, 2))}, {"a": np.zeros((d, 2))})
        with pytest.raises(CapacityError):
            score_exact(dump, lam=1.0)

    def test_per_block_damping_echoed(self, rng):
        dump = random_dump(rng, 10, (("a", 5, 2),))
        rep = score_exact(dump)
        assert rep.status["lambda"]["a"] == pytest.approx(damping_factor(dump.train["a"]))
        assert rep.config["damping"] == "per-block"


class TestHyperinf:
    def test_kron_lift_exact_inverter(self, rng):
        dump = random_dump(rng)
        lam = 0.2
        rep = score_hyperinf(dump, lam=lam, inverter="exact")
        assert rel_err(rep.scores, kron_lift_oracle(dump, lam)) <= 1e-10

    def test_kron_lift_schulz(self, rng):
        dump = random_dump(rng)
        rep = score_hyperinf(dump, STABLE, lam=0.2)
        assert rel_err(rep.scores, kron_lift_oracle(dump, 0.2)) <= 1e-6
        assert all(rep.status["converged"].values())

    def test_r1_collapse(self, rng):
        dump = random_dump(rng, 15, (("a", 7, 1), ("b", 4, 1)))
        ex = score_exact(dump, lam=0.05).scores
        np.testing.assert_allclose(score_hyperinf(dump, lam=0.05, inverter="exact").scores, ex,
                                   rtol=1e-10, atol=1e-12)
        assert rel_err(score_hyperinf(dump, STABLE, lam=0.05).scores, ex) <= 1e-6

    def test_identity_curvature_is_tracin(self, rng):
        v = rng.standard_normal((4, 2))
        dump = GradientDump(["a"], {"a": np.zeros((5, 4, 2))}, {"a": v})
        np.testing.assert_allclose(score_hyperinf(dump, lam=1.0, inverter="exact").scores,
                                   score_tracin(dump).scores)

    def test_flatten_matches_exact(self, rng):
        dump = random_dump(rng, 12, (("a", 6, 3),))
        np.testing.assert_allclose(score_hyperinf(dump, lam=0.1, inverter="exact", flatten=True).scores,
                                   score_exact(dump, lam=0.1).scores, rtol=1e-10, atol=1e-12)

    def test_non_convergence_warns_but_scores(self, rng):
        dump = random_dump(rng, 10, (("a", 8, 2),), val_scale=1.0)
        dump.train["a"] *= 300
        with pytest.warns(ConvergenceWarning):
            rep = score_hyperinf(dump, IterationConfig(max_iters=3))
        assert rep.scores.shape == (10,) and not rep.status["converged"]["a"]

    def test_curvature_bytes(self, rng):
        small = score_hyperinf(random_dump(rng, 8, (("a", 10, 1),)), STABLE).status["curvature_bytes"]
        wide = score_hyperinf(random_dump(rng, 8, (("a", 10, 5),)), STABLE).status["curvature_bytes"]
        assert small == wide == 10 * 10 * 8


class TestDataInf:
    def test_n1_equals_unaveraged_exact(self, rng):
        g = rng.standard_normal((1, 6, 2))
        dump = GradientDump(["a"], {"a": g}, {"a": rng.standard_normal((6, 2))})
        lam = 0.3
        # with n = 1 the averaged FIM is exactly g g^T
        np.testing.assert_allclose(score_datainf(dump, lam).scores, score_exact(dump, lam).scores,
                                   rtol=1e-12)

    def test_zero_gradients(self, rng):
        dump = GradientDump(["a"], {"a": np.zeros((4, 3, 2))}, {"a": rng.standard_normal((3, 2))})
        assert np.array_equal(score_datainf(dump, 0.1).scores, np.zeros(4))

    def test_dense_materialization(self, rng):
        dump = random_dump(rng, 50, (("a", 8, 2),))
        lam = 0.7
        flat = vec(dump.train["a"])
        dense = datainf_inverse_dense(flat, lam)
        expected = -(flat @ dense @ vec(dump.val["a"]))
        np.testing.assert_allclose(score_datainf(dump, lam).scores, expected, rtol=1e-10)

    def test_dense_is_sherman_morrison_average(self, rng):
        g = rng.standard_normal((3, 4))
        lam = 0.5
        terms = [np.linalg.inv(np.outer(gi, gi) + lam * np.eye(4)) for gi in g]
        np.testing.assert_allclose(datainf_inverse_dense(g, lam), sum(terms) / 3, atol=1e-12)


class TestLissa:
    def test_identity_operator(self, rng):
        v = rng.standard_normal((3, 2))
        dump = GradientDump(["a"], {"a": np.zeros((4, 3, 2)) + v}, {"a": v})
        dump.train["a"][:] = 0.0
        rep = score_lissa(dump, lam=1.0)
        np.testing.assert_array_equal(rep.scores, np.zeros(4))

    def test_identity_scores_are_tracin(self, rng):
        v = rng.standard_normal((3, 2))
        g = rng.standard_normal((4, 3, 2)) * 1e-9
        dump = GradientDump(["a"], {"a": g}, {"a": v})
        np.testing.assert_allclose(score_lissa(dump, lam=1.0).scores, score_tracin(dump).scores,
                                   rtol=1e-8)

    def test_half_identity_geometric(self, rng):
        # zero gradients and lambda 0.5 give H = 0.5 I, so r_10 = 2 v (1 - 2^-11)
        v = rng.standard_normal((4, 2))
        probe = rng.standard_normal((1, 4, 2))
        dump = GradientDump(["a"], {"a": np.zeros((3, 4, 2))}, {"a": v})
        r10 = score_lissa(dump, lam=0.5)
        assert np.array_equal(r10.scores, np.zeros(3))
        # probe the returned vector via a gradient that does not perturb H noticeably
        dump2 = GradientDump(["a"], {"a": np.concatenate([probe * 1e-12, np.zeros((2, 4, 2))])},
                             {"a": v})
        got = score_lissa(dump2, lam=0.5).scores[0] / 1e-12
        closed = -2 * (1 - 0.5 ** 11) * float(vec(probe[0]) @ vec(v))
        assert got == pytest.approx(closed, rel=1e-3)
        assert abs(closed / (-2 * float(vec(probe[0]) @ vec(v))) - 1) <= 1e-3

    def test_divergence_flag(self, rng):
        dump = random_dump(rng, 20, (("a", 6, 2),))
        dump.train["a"] *= 10  # lambda_max of the FIM is far above 2
        rep = score_lissa(dump, iters=10, lam=0.01)
        assert rep.status["diverged"]["a"] and np.all(np.isfinite(rep.scores))


class TestTracin:
    def test_self(self, rng):
        v = rng.standard_normal((5, 2))
        dump = GradientDump(["a"], {"a": v[None]}, {"a": v})
        assert score_tracin(dump).scores[0] == pytest.approx(-np.sum(v ** 2), rel=1e-14)

    def test_orthogonal(self):
        dump = GradientDump(["a"], {"a": np.array([[[1.0], [0.0]]])}, {"a": np.array([[0.0], [1.0]])})
        assert score_tracin(dump).scores[0] == 0.0

    def test_dot_loop(self, rng):
        dump = random_dump(rng, 9)
        expected = [-sum(float(np.sum(dump.train[b][k] * dump.val[b])) for b in dump.block_names)
                    for k in range(9)]
        np.testing.assert_allclose(score_tracin(dump).scores, expected, rtol=1e-12)


class TestCrossEstimator:
    def test_identity_curvature_agreement(self, rng):
        v = rng.standard_normal((4, 2))
        g = rng.standard_normal((6, 4, 2))
        scores = {}
        probe = GradientDump(["a"], {"a": g}, {"a": v})
        scores["tracin"] = score_tracin(probe).scores
        # curvature exactly I: zero gradients in the curvature, lam = 1; scoring gradients g
        zero = GradientDump(["a"], {"a": np.zeros_like(g)}, {"a": v})
        for name in ("hyperinf", "datainf", "lissa", "exact"):
            rep = run_estimator(name, zero, lam=1.0, cfg=STABLE)
            assert np.allclose(rep.scores, 0.0)
        # scores against g with identity curvature reduce to -<v, g>
        for name in ("hyperinf", "exact"):
            tiny = GradientDump(["a"], {"a": g * 1e-9}, {"a": v})
            rep = run_estimator(name, tiny, lam=1.0, cfg=STABLE)
            np.testing.assert_allclose(rep.scores / 1e-9, scores["tracin"], rtol=1e-8)

    @pytest.mark.parametrize("name", ["hyperinf", "datainf", "lissa", "tracin", "exact"])
    def test_block_additivity(self, rng, name):
        dump = random_dump(rng, 10, (("a", 5, 2), ("b", 4, 1)))
        rep = run_estimator(name, dump, cfg=STABLE)
        np.testing.assert_allclose(rep.per_block_scores.sum(axis=1), rep.scores, atol=1e-10)

    @given(st.floats(0.01, 100.0), st.sampled_from(["hyperinf", "datainf", "lissa", "tracin", "exact"]),
           st.integers(0, 2**32 - 1))
    def test_positive_scaling(self, c, name, seed):
        dump = random_dump(np.random.default_rng(seed), 8, (("a", 5, 2),))
        base = run_estimator(name, dump, cfg=STABLE)
        scaled = run_estimator(name, dump.scaled_val(c), cfg=STABLE)
        np.testing.assert_allclose(scaled.scores, c * base.scores, rtol=1e-9,
                                   atol=1e-12 * np.abs(c * base.scores).max())
        if np.unique(base.scores).size == base.scores.size:
            gaps = np.diff(np.sort(base.scores))
            if gaps.min() > 1e-8 * np.abs(base.scores).max():
                assert np.array_equal(scaled.order, base.order)

    def test_unknown(self, rng):
        with pytest.raises(ValueError):
            run_estimator("nope", random_dump(rng, 3))


class TestRanking:
    def _report(self, scores):
        return InfluenceReport("x", np.asarray(scores, float), [f"id{i}" for i in range(len(scores))])

    def test_hand_case(self):
        rep = self._report([-3.0, -1.0, 2.0])
        assert rank_examples(rep, "most-helpful", 33.4) == ["id0", "id1"]
        assert rank_examples(rep, "most-harmful", 33.4) == ["id2", "id1"]

    def test_ties_by_index(self):
        rep = self._report([1.0] * 5)
        assert rank_examples(rep, "most-helpful", 60) == ["id0", "id1", "id2"]
        assert rank_examples(rep, "most-harmful", 60) == ["id0", "id1", "id2"]

    def test_empty(self):
        assert rank_examples(self._report([]), "most-helpful", 50) == []

    def test_bad_k(self):
        with pytest.raises(ValueError):
            rank_examples(self._report([1.0]), "most-helpful", 0)

    def test_exact_percent_no_float_creep(self):
        rep = self._report(np.arange(500.0))
        assert len(rank_examples(rep, "most-helpful", 20)) == 100
        assert len(rank_examples(rep, "most-helpful", 7)) == 35

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.floats(0.5, 100))
    def test_sort_oracle(self, scores, k):
        rep = self._report(scores)
        size = int(np.ceil(round(k * len(scores) / 100, 9)))
        oracle = sorted(range(len(scores)), key=lambda i: (scores[i], i))[:size]
        assert rank_examples(rep, "most-helpful", k) == [f"id{i}" for i in oracle]
        ranks = rep.ranks
        assert sorted(ranks) == list(range(1, len(scores) + 1))
