import numpy as np
import pytest

from ttgen.diffusion import (
    BETA_END,
    BETA_START,
    DESK_T,
    PAPER_T,
    DiffusionError,
    DivergenceError,
    ddpm_step,
    make_linear_schedule,
    posterior_mean,
    q_sample,
    q_sample_batch,
    sample,
    sample_batch,
    schedule_from_json_dict,
)
from ttgen.tensor import rng_for


class TestSchedule:
    def test_paper_preset_endpoints(self):
        s = make_linear_schedule(PAPER_T)
        assert s.beta(1) == 0.00085
        assert s.beta(1000) == 0.012

    def test_first_alpha_bar(self):
        s = make_linear_schedule(PAPER_T)
        assert s.alpha_bar(1) == 1.0 - 0.00085

    def test_identities_exact(self):
        s = make_linear_schedule(DESK_T)
        np.testing.assert_array_equal(s.alphas, 1.0 - s.betas)
        for t in range(2, s.T + 1):
            assert s.alpha_bar(t) == s.alpha_bar(t - 1) * s.alpha(t)

    def test_monotonicity(self):
        s = make_linear_schedule(DESK_T)
        assert (np.diff(s.betas) > 0.0).all()
        assert (np.diff(s.alpha_bars) < 0.0).all()
        assert ((s.alpha_bars > 0.0) & (s.alpha_bars < 1.0)).all()
        assert s.alpha_bar(s.T) < s.alpha_bar(1)

    def test_desk_preset_keeps_paper_endpoints(self):
        s = make_linear_schedule(DESK_T)
        assert s.beta(1) == BETA_START
        assert s.beta(DESK_T) == BETA_END

    @pytest.mark.parametrize(
        "args", [(1, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.2, 0.1), (10, 0.1, 1.0), (10, -0.1, 0.2)]
    )
    def test_rejects_bad_parameters(self, args):
        with pytest.raises(DiffusionError):
            make_linear_schedule(*args)

    def test_step_range_checked(self):
        s = make_linear_schedule(10)
        with pytest.raises(DiffusionError):
            s.beta(0)
        with pytest.raises(DiffusionError):
            s.alpha_bar(11)

    def test_json_round_trip(self):
        s = make_linear_schedule(50, 0.001, 0.02)
        back = schedule_from_json_dict(s.to_json_dict())
        np.testing.assert_array_equal(back.betas, s.betas)


class TestQSample:
    def test_zero_noise(self):
        s = make_linear_schedule(DESK_T)
        x0 = np.arange(8.0).reshape(2, 4)
        got = q_sample(x0, 7, np.zeros_like(x0), s)
        np.testing.assert_array_equal(got, np.sqrt(s.alpha_bar(7)) * x0)

    def test_zero_signal(self):
        s = make_linear_schedule(DESK_T)
        eps = np.ones((3, 3))
        got = q_sample(np.zeros((3, 3)), 150, eps, s)
        np.testing.assert_array_equal(got, np.sqrt(1.0 - s.alpha_bar(150)) * eps)

    def test_shape_mismatch(self):
        s = make_linear_schedule(DESK_T)
        with pytest.raises(DiffusionError):
            q_sample(np.zeros((2, 2)), 5, np.zeros((2, 3)), s)

    def test_batched_matches_per_sample(self):
        s = make_linear_schedule(DESK_T)
        rng = rng_for(102, "batched")
        x0 = rng.standard_normal((5, 3, 4))
        eps = rng.standard_normal((5, 3, 4))
        ts = np.array([1, 17, 60, 150, DESK_T])
        got = q_sample_batch(x0, ts, eps, s)
        for i, t in enumerate(ts):
            np.testing.assert_array_equal(got[i], q_sample(x0[i], int(t), eps[i], s))

    def test_batched_rejects_bad_steps(self):
        s = make_linear_schedule(DESK_T)
        with pytest.raises(DiffusionError):
            q_sample_batch(np.zeros((2, 3)), np.array([0, 5]), np.zeros((2, 3)), s)
        with pytest.raises(DiffusionError):
            q_sample_batch(np.zeros((2, 3)), np.array([5, DESK_T + 1]), np.zeros((2, 3)), s)

    @pytest.mark.parametrize("t", [1, DESK_T // 2, DESK_T])
    def test_monte_carlo_statistics(self, t):
        # 1e5 draws on a 2x2 grid against the closed-form mean and variance
        s = make_linear_schedule(DESK_T)
        rng = rng_for(100, "mc", t)
        x0 = np.array([[0.5, -0.3], [0.8, 0.0]])
        n = 100_000
        eps = rng.standard_normal((n, 2, 2))
        draws = np.sqrt(s.alpha_bar(t)) * x0 + np.sqrt(1.0 - s.alpha_bar(t)) * eps
        var = 1.0 - s.alpha_bar(t)
        mean_se = np.sqrt(var / n)
        assert np.abs(draws.mean(axis=0) - np.sqrt(s.alpha_bar(t)) * x0).max() < 3.0 * mean_se
        var_se = var * np.sqrt(2.0 / (n - 1))
        assert np.abs(draws.var(axis=0, ddof=1) - var).max() < 3.0 * var_se

    def test_iterated_chain_matches_closed_form(self):
        # applying the one-step kernel t times agrees with the closed form
        s = make_linear_schedule(DESK_T)
        t = DESK_T
        rng = rng_for(101, "chain")
        x0 = np.array([[0.5, -0.3], [0.8, 0.0]])
        n = 100_000
        x = np.broadcast_to(x0, (n, 2, 2)).copy()
        for i in range(1, t + 1):
            eps_i = rng.standard_normal((n, 2, 2))
            x = np.sqrt(1.0 - s.beta(i)) * x + np.sqrt(s.beta(i)) * eps_i
        var = 1.0 - s.alpha_bar(t)
        mean_se = np.sqrt(var / n)
        assert np.abs(x.mean(axis=0) - np.sqrt(s.alpha_bar(t)) * x0).max() < 3.0 * mean_se
        var_se = var * np.sqrt(2.0 / (n - 1))
        assert np.abs(x.var(axis=0, ddof=1) - var).max() < 3.0 * var_se


class TestPosteriorMean:
    def test_zero_prediction(self):
        s = make_linear_schedule(DESK_T)
        x_t = np.full((2, 2), 0.7)
        got = posterior_mean(x_t, 9, np.zeros_like(x_t), s)
        np.testing.assert_allclose(got, x_t / np.sqrt(s.alpha(9)), atol=1e-15)

    def test_true_noise_at_t1_recovers_x0(self):
        s = make_linear_schedule(DESK_T)
        rng = rng_for(5, "pm")
        x0 = rng.uniform(-1.0, 1.0, size=(3, 3))
        eps = rng.standard_normal((3, 3))
        x1 = q_sample(x0, 1, eps, s)
        mu = posterior_mean(x1, 1, eps, s)
        assert np.abs(mu - x0).max() < 1e-9

    def test_linearity_identity(self):
        s = make_linear_schedule(DESK_T)
        rng = rng_for(6, "lin")
        x_t = rng.standard_normal((2, 3))
        e1 = rng.standard_normal((2, 3))
        e2 = rng.standard_normal((2, 3))
        a, b = 0.3, 1.4
        t = 80
        lhs = posterior_mean(x_t, t, a * e1 + b * e2, s)
        rhs = (
            a * posterior_mean(x_t, t, e1, s)
            + b * posterior_mean(x_t, t, e2, s)
            - (a + b - 1.0) * x_t / np.sqrt(s.alpha(t))
        )
        assert np.abs(lhs - rhs).max() < 1e-12

    @pytest.mark.parametrize("t", [1, DESK_T // 2, DESK_T])
    def test_contraction_toward_x0(self, t):
        # with the true noise the posterior mean is strictly closer to x0
        s = make_linear_schedule(DESK_T)
        rng = rng_for(7, "contract", t)
        for _ in range(20):
            x0 = rng.uniform(-1.0, 1.0, size=(4, 4))
            eps = rng.standard_normal((4, 4))
            x_t = q_sample(x0, t, eps, s)
            mu = posterior_mean(x_t, t, eps, s)
            before = np.linalg.norm(x_t - x0)
            after = np.linalg.norm(mu - x0)
            if t == 1:
                assert after < 1e-9
            else:
                assert after < before


class TestDdpmStep:
    def test_final_step_ignores_noise(self):
        s = make_linear_schedule(DESK_T)
        rng = rng_for(8, "step")
        x = rng.standard_normal((2, 2))
        e = rng.standard_normal((2, 2))
        z = rng.standard_normal((2, 2))
        got = ddpm_step(x, 1, e, z, s)
        np.testing.assert_array_equal(got, posterior_mean(x, 1, e, s))

    def test_zero_z_gives_mean(self):
        s = make_linear_schedule(DESK_T)
        x = np.full((2, 2), 0.3)
        e = np.full((2, 2), 0.1)
        got = ddpm_step(x, 50, e, np.zeros_like(x), s)
        np.testing.assert_array_equal(got, posterior_mean(x, 50, e, s))

    def test_step_variance_is_beta(self):
        s = make_linear_schedule(DESK_T)
        t = 120
        rng = rng_for(9, "var")
        x = np.full((1, 1), 0.4)
        e = np.full((1, 1), -0.2)
        n = 100_000
        z = rng.standard_normal((n, 1, 1))
        outs = posterior_mean(x, t, e, s) + np.sqrt(s.beta(t)) * z
        assert abs(outs.var(ddof=1) - s.beta(t)) < 0.05 * s.beta(t)


class TestSampler:
    def test_deterministic_per_seed(self):
        s = make_linear_schedule(20)

        def eps_fn(x, t):
            return 0.1 * x

        a = sample(eps_fn, (3, 2, 2), s, seed=42)
        b = sample(eps_fn, (3, 2, 2), s, seed=42)
        np.testing.assert_array_equal(a, b)
        c = sample(eps_fn, (3, 2, 2), s, seed=43)
        assert (a != c).any()

    def test_output_clamped_and_finite(self):
        s = make_linear_schedule(20)
        out = sample(lambda x, t: np.zeros_like(x), (3, 4, 4), s, seed=0)
        assert out.shape == (3, 4, 4)
        assert np.isfinite(out).all()
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_divergence_reports_step(self):
        s = make_linear_schedule(20)

        def explode(x, t):
            return np.full_like(x, np.nan) if t == 13 else np.zeros_like(x)

        with pytest.raises(DivergenceError) as err:
            sample(explode, (1, 2, 2), s, seed=1)
        assert err.value.step == 13

    def test_visits_every_step_once_descending(self):
        s = make_linear_schedule(15)
        seen = []

        def eps_fn(x, t):
            seen.append(t)
            return np.zeros_like(x)

        sample(eps_fn, (1, 2, 2), s, seed=3)
        assert seen == list(range(15, 0, -1))

    def test_batch_matches_single_chains(self):
        s = make_linear_schedule(25)

        def eps_fn(x, t):
            return 0.05 * x  # elementwise, so batching cannot mix chains

        batch = sample_batch(eps_fn, (3, 2, 2), s, seeds=[7, 8, 9])
        for i, seed in enumerate([7, 8, 9]):
            single = sample(lambda x, t: 0.05 * x, (3, 2, 2), s, seed=seed)
            np.testing.assert_array_equal(batch[i], single)

    def test_batch_composition_independence(self):
        s = make_linear_schedule(25)

        def eps_fn(x, t):
            return 0.05 * x

        pair = sample_batch(eps_fn, (1, 2, 2), s, seeds=[5, 6])
        trio = sample_batch(eps_fn, (1, 2, 2), s, seeds=[11, 5, 6])
        np.testing.assert_array_equal(pair[0], trio[1])
        np.testing.assert_array_equal(pair[1], trio[2])

    def test_bad_eps_shape_rejected(self):
        s = make_linear_schedule(10)
        with pytest.raises(DiffusionError):
            sample_batch(lambda x, t: x[..., :1], (1, 2, 2), s, seeds=[0])
