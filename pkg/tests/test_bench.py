import numpy as np
import pytest

from streampile import (
    Ar1Spec,
    ConfigError,
    GaussianTransportDenoiser,
    ScheduleConfig,
    bench_pipeline,
    build_schedule,
    compare_streaming_offline,
    drift,
    jitter_ratio,
    run_stream,
)


def oracle(d=2, rho=0.0):
    return GaussianTransportDenoiser(Ar1Spec(d=d, rho=rho), build_schedule(1000))


class TestBenchPipeline:
    def test_latency_and_throughput_at_defaults(self, default_cfg):
        report = bench_pipeline(default_cfg, oracle(), 64, seed=0)
        assert report.first_frame_latency_iters == 4
        assert report.throughput_frames_per_iter == 4.0
        assert report.first_frame_latency_wall > 0

    def test_g1_n4_configuration(self):
        cfg = ScheduleConfig(K=16, G=1, N=4, T=1000)
        report = bench_pipeline(cfg, oracle(), 64, seed=0)
        assert report.first_frame_latency_iters == 4          # G*N
        assert report.throughput_frames_per_iter == 16 / 4    # g/N

    def test_overhead_below_one_millisecond(self, default_cfg):
        report = bench_pipeline(default_cfg, oracle(d=8), 256, seed=1, d=8)
        assert report.engine_overhead_per_iter < 1e-3

    def test_counts_deterministic_across_runs(self, default_cfg):
        a = bench_pipeline(default_cfg, oracle(), 64, seed=3)
        b = bench_pipeline(default_cfg, oracle(), 64, seed=3)
        assert a.first_frame_latency_iters == b.first_frame_latency_iters
        assert a.throughput_frames_per_iter == b.throughput_frames_per_iter

    def test_random_configs_obey_lifetime_law(self):
        r = np.random.default_rng(0)
        for _ in range(6):
            G = int(r.choice([1, 2, 4, 5]))
            N = int(r.choice([1, 2, 4]))
            if 1000 % (G * N):
                continue
            g = int(r.integers(1, 5))
            cfg = ScheduleConfig(K=g * G, G=G, N=N, T=1000)
            report = bench_pipeline(cfg, oracle(), cfg.g * 8, seed=7)
            assert report.first_frame_latency_iters == G * N


class TestJitterRatio:
    def test_constant_stream_ratio_one(self):
        frames = np.ones((32, 3))
        rep = jitter_ratio(frames, 4)
        assert rep.ratio == 1.0 and rep.boundary_msd == 0.0

    def test_constructed_boundary_jumps(self):
        # baseline alternating pattern plus a +delta jump on every g-th frame
        g = 4
        n = 4000
        r = np.random.default_rng(5)
        base = r.standard_normal((n, 1))
        frames = base.copy()
        delta = 2.0
        idx = np.arange(n)
        frames[idx % g == 0] += delta
        rep = jitter_ratio(frames, g)
        # boundary diff gains delta, interior pair (k=g-1 -> k+1=g... ) loses it;
        # derived expectation: boundary msd = E[(b + delta)^2] = 2 + delta^2,
        # interior contains the down-steps: mean over interior of diffs
        expected_boundary = 2.0 + delta**2
        assert rep.boundary_msd == pytest.approx(expected_boundary, rel=0.1)
        assert rep.ratio > 1.0

    def test_invariant_under_constant_shift(self):
        r = np.random.default_rng(6)
        frames = r.standard_normal((400, 2))
        a = jitter_ratio(frames, 4)
        b = jitter_ratio(frames + 7.3, 4)
        assert a.ratio == pytest.approx(b.ratio, rel=1e-12)

    def test_too_few_frames(self):
        with pytest.raises(ConfigError):
            jitter_ratio(np.zeros((7, 2)), 4)


class TestDrift:
    def test_white_noise_matching_prior_has_no_trend(self):
        r = np.random.default_rng(7)
        frames = r.standard_normal((4000, 4))
        rep = drift(frames, 0.0, 1.0, window=100)
        assert abs(rep.tau_mean) < 0.2 and abs(rep.tau_var) < 0.2

    def test_injected_linear_bias_recovered(self):
        r = np.random.default_rng(8)
        frames = r.standard_normal((4000, 4))
        b = 5e-4
        frames += b * np.arange(4000)[:, None]
        rep = drift(frames, 0.0, 1.0, window=100)
        assert rep.slope == pytest.approx(b, rel=0.1)

    def test_oracle_stream_is_stationary(self, default_cfg):
        frames, _ = run_stream(default_cfg, oracle(d=4, rho=0.9), None, 2000, seed=9, d=4)
        rep = drift(frames, 0.0, 1.0, window=100)
        assert abs(rep.tau_mean) < 0.25

    def test_window_must_divide(self):
        with pytest.raises(ConfigError):
            drift(np.zeros((100, 2)), 0.0, 1.0, window=33)


class TestCompareStreamingOffline:
    def test_degenerate_full_window_is_exact(self):
        cfg = ScheduleConfig(K=16, G=1, N=4, T=1000)
        mse = compare_streaming_offline(cfg, Ar1Spec(d=4, rho=0.95), seed=0, L=16)
        np.testing.assert_array_equal(mse, 0.0)

    def test_independent_prior_matches_offline(self, default_cfg):
        mse = compare_streaming_offline(default_cfg, Ar1Spec(d=4, rho=0.0), seed=1, L=64)
        assert mse.max() < 1e-20

    def test_correlated_prior_gap_is_bounded_and_logged(self, default_cfg):
        mse = compare_streaming_offline(default_cfg, Ar1Spec(d=8, rho=0.95), seed=2, L=64)
        assert mse.shape == (64,)
        assert 0.0 < mse.mean() < 0.5
