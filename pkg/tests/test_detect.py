import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from piaid import detect, sdp
from piaid.netgen import QPSK

A = np.sqrt(2) / 2


def cgauss(rng, shape, scale=1.0):
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def oracle_nearest(y, gains):
    best, arg = np.inf, None
    for syms in itertools.product(QPSK, repeat=len(gains)):
        c = sum(g * s for g, s in zip(gains, syms))
        if abs(y - c) < best:
            best, arg = abs(y - c), c
    return arg, best


class TestStream:
    def test_zero_direct_gain(self):
        with pytest.raises(ValueError):
            detect.ReceivedStream(y=1.0, direct_gain=0.0)


class TestStageOne:
    def test_no_strong_interferers(self):
        s = detect.ReceivedStream(y=0.2 + 0.1j, direct_gain=1.0)
        assert detect.stage1_exhaustive(s) == 0
        out = detect.detect_stream(s)
        assert out.stage1_used is False and out.i_hat == 0

    def test_single_interferer_exact(self):
        g = 3.0 - 2.0j
        s = detect.ReceivedStream(y=g * A * (1 + 1j), direct_gain=0.1, strong=[(g, (1, 0))])
        assert detect.stage1_exhaustive(s) == pytest.approx(g * A * (1 + 1j))

    def test_two_interferers_monte_carlo(self):
        rng = np.random.default_rng(1)
        T = 10_000
        g = cgauss(rng, (T, 2), scale=10.0)
        sym = QPSK[rng.integers(0, 4, (T, 2))]
        truth = (g * sym).sum(axis=1)
        y = truth + cgauss(rng, T, scale=1e-3)
        i_hat, _ = detect.stage1_exhaustive_batch(y, g)
        assert np.mean(np.isclose(i_hat, truth, atol=1e-9)) >= 0.999

    @given(st.integers(0, 2**32 - 1), st.integers(1, 3))
    def test_exhaustive_optimality(self, seed, n):
        rng = np.random.default_rng(seed)
        g = cgauss(rng, n, scale=3.0)
        y = complex(cgauss(rng, 1, scale=5.0)[0])
        i_hat, syms = detect.stage1_exhaustive_batch(np.array([y]), g[None])
        _, dmin = oracle_nearest(y, g)
        assert abs(y - i_hat[0]) == pytest.approx(dmin, abs=1e-12)
        assert i_hat[0] == pytest.approx((g * syms[0]).sum())
        assert np.any(np.isclose(detect.candidate_set(g), i_hat[0], atol=1e-12))

    def test_candidate_set_order_and_size(self):
        c = detect.candidate_set([1.0, 10.0])
        assert c.size == 16
        np.testing.assert_allclose(c[:4], QPSK[0] + 10 * QPSK)

    def test_tie_goes_to_first(self):
        # equal gains: swapping the two symbols gives the same aggregate
        i_hat, syms = detect.stage1_exhaustive_batch(np.array([2 * A * 1j]), np.array([[1.0, 1.0]]))
        np.testing.assert_allclose(syms[0], [QPSK[0], QPSK[2]])

    def test_too_many(self):
        with pytest.raises(detect.TooManyInterferers):
            detect.stage1_exhaustive_batch(np.zeros(1), np.ones((1, 11)))
        with pytest.raises(detect.TooManyInterferers):
            detect.candidate_set(np.ones(11))


class TestStageTwo:
    @pytest.mark.parametrize(
        "r, expected",
        [(0.3 + 0.4j, A * (1 + 1j)), (-0.1 - 2j, A * (-1 - 1j)), (0.0 - 1j, A * (1 - 1j)), (-1 + 0j, A * (-1 + 1j))],
    )
    def test_sign_rule(self, r, expected):
        s = detect.ReceivedStream(y=r * (2 - 1j), direct_gain=2 - 1j)
        assert detect.stage2_min_distance(s) == pytest.approx(expected)

    @given(st.complex_numbers(max_magnitude=1e6, allow_nan=False, allow_infinity=False))
    def test_totality(self, r):
        x = detect.slice_qpsk(np.array([r]))[0]
        assert np.min(np.abs(QPSK - x)) < 1e-15

    def test_noise_free_recovery(self):
        for x in QPSK:
            s = detect.ReceivedStream(y=(0.5 + 2j) * x, direct_gain=0.5 + 2j)
            assert detect.detect_stream(s).x_hat == pytest.approx(x)


class TestSdrSid:
    def test_single_interferer_agrees(self):
        rng = np.random.default_rng(2)
        T = 10_000
        # interference 20 dB above signal plus noise (unit power each)
        g = cgauss(rng, (T, 1), scale=np.sqrt(200.0))
        y = (g[:, 0] * QPSK[rng.integers(0, 4, T)] + QPSK[rng.integers(0, 4, T)] + cgauss(rng, T))
        ex, _ = detect.stage1_exhaustive_batch(y, g)
        sd, *_ = detect.sdr_sid_batch(y, g)
        assert np.mean(np.isclose(ex, sd)) >= 0.99

    def test_commit_order_strongest_first(self):
        g1, g2 = 1.0 + 0.5j, 4.0 - 3.0j
        x1, x2 = QPSK[1], QPSK[2]
        s = detect.ReceivedStream(y=g1 * x1 + g2 * x2 + 0.3 + 0.2j, direct_gain=1.0,
                                  strong=[(g1, (1, 0)), (g2, (2, 0))])
        out = detect.detect_stream(s, method="sdr_sid")
        assert out.commit_order[0] == (2, 0)
        assert out.i_hat == pytest.approx(g1 * x1 + g2 * x2)
        assert out.x_hat == pytest.approx(QPSK[0])

    def test_rank_one_needs_one_solve(self):
        # noise-free with a dominant interferer: the relaxation is tight
        g = 5.0 + 1.0j
        s = detect.ReceivedStream(y=g * QPSK[3], direct_gain=0.01, strong=[(g, (1, 0))])
        out = detect.detect_stream(s, method="sdr_sid")
        assert out.sdp_solves == 1 and out.commit_order == ()
        assert out.i_hat == pytest.approx(g * QPSK[3])

    @given(st.integers(0, 2**32 - 1), st.integers(1, 4))
    def test_terminates_within_symbol_count(self, seed, n):
        rng = np.random.default_rng(seed)
        g = cgauss(rng, (3, n), scale=4.0)
        y = cgauss(rng, 3, scale=6.0)
        i_hat, syms, order, stats = detect.sdr_sid_batch(y, g)
        assert np.all(stats["sdp_solves"] <= n) and np.all(stats["sdp_solves"] >= 1)
        assert np.all(np.abs(np.abs(syms) - 1) < 1e-12)
        np.testing.assert_allclose(i_hat, (g * syms).sum(axis=1))

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
    def test_scale_equivariance(self, seed, c):
        rng = np.random.default_rng(seed)
        g = cgauss(rng, (4, 2), scale=4.0)
        y = (g * QPSK[rng.integers(0, 4, (4, 2))]).sum(axis=1) + cgauss(rng, 4, scale=0.3)
        a, *_ = detect.sdr_sid_batch(y, g)
        b, *_ = detect.sdr_sid_batch(c * y, c * g)
        np.testing.assert_allclose(b, c * a, rtol=1e-9, atol=1e-9)

    def test_injected_solver_and_strategy(self):
        calls = {"solver": 0, "strategy": 0}

        def solver(W):
            calls["solver"] += 1
            S, *_, conv = sdp.solve_batch(W)
            return S, conv

        def strategy(S, count):
            calls["strategy"] += 1
            return sdp.dominant_eigenvector_candidates(S, count)

        g = np.array([1.0 + 0.2j, 0.9 - 0.4j])
        s = detect.ReceivedStream(y=0.4 + 0.1j, direct_gain=1.0, strong=[(g[0], 0), (g[1], 1)])
        i_hat = detect.sdr_sid(s, solver, strategy)
        assert calls["solver"] >= 1
        assert np.any(np.isclose(detect.candidate_set(g), i_hat))

    def test_strict_failure_propagates(self):
        def bad(W):
            return np.broadcast_to(np.eye(W.shape[-1]), W.shape).copy(), np.zeros(W.shape[0], bool)

        s = detect.ReceivedStream(y=1.0, direct_gain=1.0, strong=[(2.0, 0)])
        with pytest.raises(sdp.NumericalFailure):
            detect.sdr_sid(s, bad)

    def test_needs_interferer(self):
        with pytest.raises(ValueError):
            detect.sdr_sid(detect.ReceivedStream(y=1.0, direct_gain=1.0))


class TestBatch:
    def test_mixed_counts_match_scalar(self):
        rng = np.random.default_rng(4)
        gains = cgauss(rng, (6, 2), scale=5.0)
        counts = np.array([0, 1, 2, 1, 0, 2])
        gains[counts < 2, 1] = 0
        gains[counts < 1, 0] = 0
        y = cgauss(rng, 6, scale=5.0)
        direct = cgauss(rng, 6)
        x_hat, i_hat = detect.detect_batch(y, direct, gains, counts)
        for j in range(6):
            s = detect.ReceivedStream(y[j], direct[j], [(gains[j, m], m) for m in range(counts[j])])
            out = detect.detect_stream(s)
            assert out.x_hat == pytest.approx(x_hat[j]) and out.i_hat == pytest.approx(i_hat[j])

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            detect.detect_batch(np.zeros(1), np.ones(1), np.zeros((1, 1)), method="ml")
