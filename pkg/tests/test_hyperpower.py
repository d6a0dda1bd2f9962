import numpy as np
import pytest
from hypothesis import given, strategies as st

from hpinf.hyperpower import (ConvergenceTrace, IterationConfig, hyperpower_inverse, lissa_hvp,
                              schulz_inverse, stabilized_init)
from hpinf.linalg import ShapeError, frobenius_norm, gaussian_inverse

from conftest import random_spd


def residual(a, x):
    return frobenius_norm(np.eye(a.shape[0]) - a @ x)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(max_iters=0), dict(init_scale=0.0),
                                        dict(order_p=1), dict(init_mode="nope"),
                                        dict(init_mode="custom"), dict(early_stop_tol=-1.0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            IterationConfig(**kwargs)

    def test_defaults(self):
        cfg = IterationConfig()
        assert (cfg.max_iters, cfg.init_scale, cfg.order_p, cfg.early_stop_tol) == (25, 5e-4, 2, None)

    def test_trace_length_invariant(self):
        with pytest.raises(ValueError):
            ConvergenceTrace("x", [1.0, 2.0], "m", False, 3)


class TestSchulz:
    def test_scalar_recurrence(self):
        # x_{t+1} = x_t (2 - x_t) on a = I: residual 1 - x_t squares every step
        d = 4
        cfg = IterationConfig(max_iters=3, init_scale=0.5)
        x, trace = schulz_inverse(np.eye(d), cfg)
        expected = [np.sqrt(d) * 0.5 ** (2 ** t) for t in (1, 2, 3)]
        np.testing.assert_allclose(trace.per_iteration_error, expected, rtol=1e-14)
        assert trace.error_metric == "residual_frobenius"
        np.testing.assert_allclose(np.diag(x), 1 - 0.5 ** 8)

    def test_first_step_identity(self):
        x0 = 5e-4
        x, _ = schulz_inverse(np.eye(3), IterationConfig(max_iters=1))
        np.testing.assert_allclose(x, x0 * (2 - x0) * np.eye(3))

    def test_identity_fixed_point(self):
        cfg = IterationConfig(max_iters=5, init_mode="custom", init_matrix=np.eye(3))
        x, trace = schulz_inverse(np.eye(3), cfg)
        assert np.array_equal(x, np.eye(3)) and trace.final_error == 0.0

    def test_diag_two(self):
        x, trace = schulz_inverse(np.diag([2.0]), IterationConfig(max_iters=20, init_scale=0.1))
        assert x[0, 0] == pytest.approx(0.5, abs=1e-15) and trace.converged

    def test_bit_identical_to_hyperpower_p2(self, rng):
        m = random_spd(rng, 24, n=50)
        cfg = IterationConfig(max_iters=25)
        x1, t1 = schulz_inverse(m, cfg)
        x2, t2 = hyperpower_inverse(m, cfg)
        assert np.array_equal(x1, x2)
        assert t1.per_iteration_error == t2.per_iteration_error

    def test_schulz_overrides_order(self, rng):
        m = random_spd(rng, 8)
        x1, _ = schulz_inverse(m, IterationConfig(order_p=3))
        x2, _ = hyperpower_inverse(m, IterationConfig(order_p=2))
        assert np.array_equal(x1, x2)

    def test_d512_relative_error(self):
        rng = np.random.default_rng(5)
        s = 0.3 * rng.standard_normal((200, 512))
        m = s.T @ s + 0.01 * np.eye(512)
        oracle = gaussian_inverse(m)
        _, trace = schulz_inverse(m, IterationConfig(max_iters=25), oracle=oracle)
        assert trace.relative_error[-1] <= 1e-6
        assert trace.error_metric == "frobenius_error_vs_oracle"

    def test_d16_error_near_gaussian(self, rng):
        m = random_spd(rng, 16, n=64, std=0.3)
        truth = gaussian_inverse(m)
        x, _ = schulz_inverse(m, IterationConfig(max_iters=40))
        ge_res = max(residual(m, truth), 1e-16)
        assert residual(m, x) <= 100 * ge_res

    def test_symmetric_iterates(self, rng):
        m = random_spd(rng, 20)
        for t in range(1, 12):
            x, _ = schulz_inverse(m, IterationConfig(max_iters=t))
            assert frobenius_norm(x - x.T) <= 1e-10 * max(frobenius_norm(x), 1.0)

    def test_monotone_after_contraction(self, rng):
        m = random_spd(rng, 32, n=64, std=0.5)
        _, trace = schulz_inverse(m, IterationConfig(max_iters=40))
        errs = trace.per_iteration_error
        start = next(i for i, e in enumerate(errs) if e < 1)
        tail = [e for e in errs[start:] if e > 1e-13 * 32]
        assert all(b < a for a, b in zip(tail, tail[1:]))

    def test_early_stop(self, rng):
        m = random_spd(rng, 16, std=0.3)
        _, trace = schulz_inverse(m, IterationConfig(max_iters=100, early_stop_tol=1e-6))
        assert trace.converged and trace.final_error <= 1e-6 and trace.iters_used < 100

    def test_divergence_is_data(self):
        m = np.diag([1e4, 1.0])
        x, trace = schulz_inverse(m, IterationConfig(max_iters=50, init_scale=1.0))
        assert trace.diverged and not trace.converged
        assert trace.iters_used == len(trace.per_iteration_error) < 50

    def test_oracle_shape_checked(self):
        with pytest.raises(ShapeError):
            schulz_inverse(np.eye(3), oracle=np.eye(2))

    def test_non_square(self):
        with pytest.raises(ShapeError):
            schulz_inverse(np.ones((2, 3)))

    @given(st.integers(2, 10), st.integers(0, 2**32 - 1))
    def test_errors_nonnegative_and_length(self, d, seed):
        m = random_spd(np.random.default_rng(seed), d)
        _, trace = schulz_inverse(m, IterationConfig(max_iters=15, init_mode="transpose-scaled"))
        assert len(trace.per_iteration_error) == trace.iters_used
        assert all(e >= 0 for e in trace.per_iteration_error)


class TestHyperpowerOrder:
    def test_p3_not_slower(self, rng):
        m = random_spd(rng, 32, std=0.5, lam=0.5)
        iters = {}
        for p in (2, 3):
            cfg = IterationConfig(max_iters=200, order_p=p, init_mode="transpose-scaled",
                                  early_stop_tol=1e-10)
            _, trace = hyperpower_inverse(m, cfg)
            assert trace.converged
            iters[p] = trace.iters_used
        assert iters[3] <= iters[2]

    @pytest.mark.parametrize("p", [2, 3, 4, 5])
    def test_order_p_limit(self, rng, p):
        m = random_spd(rng, 12, lam=1.0)
        x, _ = hyperpower_inverse(m, IterationConfig(max_iters=80, order_p=p,
                                                     init_mode="transpose-scaled"))
        np.testing.assert_allclose(x, np.linalg.inv(m), atol=1e-10)

    def test_p3_cubic_step(self):
        # scalar case: residual r -> r^3
        _, trace = hyperpower_inverse(np.eye(1), IterationConfig(max_iters=2, order_p=3,
                                                                 init_scale=0.5))
        np.testing.assert_allclose(trace.per_iteration_error, [0.5 ** 3, 0.5 ** 9], rtol=1e-14)


class TestStabilizedInit:
    def test_identity(self):
        np.testing.assert_array_equal(stabilized_init(np.eye(4)), np.eye(4))

    def test_diag_two(self):
        np.testing.assert_array_equal(stabilized_init(np.diag([2.0])), np.diag([0.5]))

    def test_zero_matrix(self):
        with pytest.raises(ValueError):
            stabilized_init(np.zeros((3, 3)))

    def test_converges_within_60(self, rng):
        m = random_spd(rng, 64)
        x, _ = schulz_inverse(m, IterationConfig(max_iters=60, init_mode="transpose-scaled"))
        assert residual(m, x) < 1e-8

    def test_nonsymmetric(self, rng):
        a = rng.standard_normal((15, 15))
        x, trace = schulz_inverse(a, IterationConfig(max_iters=100, init_mode="transpose-scaled"))
        assert residual(a, x) < 1e-8


class TestLissa:
    def test_identity_fixed_point(self, rng):
        v = rng.standard_normal(6)
        out, trace = lissa_hvp(np.eye(6), v, max_iters=10)
        np.testing.assert_array_equal(out, v)
        assert trace.per_iteration_error == [0.0] * 10

    def test_geometric_series(self, rng):
        v = rng.standard_normal(5)
        out, trace = lissa_hvp(0.5 * np.eye(5), v, max_iters=10)
        np.testing.assert_allclose(out, 2 * v * (1 - 0.5 ** 11), rtol=1e-14)
        errs = np.array(trace.per_iteration_error)
        np.testing.assert_allclose(errs[1:] / errs[:-1], 0.5, rtol=1e-10)

    def test_diverges_when_lambda_max_above_two(self, rng):
        m = random_spd(rng, 16, n=64)
        assert np.linalg.eigvalsh(m)[-1] > 2
        _, trace = lissa_hvp(m, rng.standard_normal(16), max_iters=10)
        assert trace.per_iteration_error[9] > trace.per_iteration_error[0]

    def test_overflow_flagged(self):
        with np.errstate(over="ignore", invalid="ignore"):
            out, trace = lissa_hvp(np.diag([1e200, 1.0]), np.ones(2), max_iters=10)
        assert trace.diverged and np.all(np.isfinite(out))

    @given(st.integers(2, 10), st.integers(0, 2**32 - 1))
    def test_converges_for_spectrum_in_unit_band(self, d, seed):
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        a = q @ np.diag(rng.uniform(0.2, 1.8, d)) @ q.T
        _, trace = lissa_hvp(a, rng.standard_normal(d), max_iters=12)
        errs = trace.per_iteration_error
        assert all(b < a_ for a_, b in zip(errs, errs[1:]) if a_ > 1e-13)
        assert not trace.diverged
