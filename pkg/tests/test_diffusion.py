"""Forward/reverse diffusion arithmetic against closed-form and
Monte-Carlo oracles."""

import numpy as np
import pytest
from scipy import stats as spstats

from unicardio.diffusion import (
    NoiseSchedule,
    SamplerConfig,
    ddim_step,
    ddpm_step,
    dump_schedule_csv,
    forward_marginal,
    make_schedule,
    noise_prediction_loss,
    select_subset_timesteps,
)
from unicardio.errors import ParameterError

SCHED = make_schedule()


def test_default_schedule_shape_and_placeholder():
    assert SCHED.n_steps == 50
    assert SCHED.beta.shape == (51,)
    assert SCHED.beta[0] == 0.0
    assert SCHED.alpha_bar[0] == 1.0


def test_quadratic_schedule_values_match_construction():
    betas = np.linspace(1e-4**0.5, 0.5**0.5, 50) ** 2
    np.testing.assert_allclose(SCHED.beta[1:], betas, rtol=0, atol=0)
    np.testing.assert_allclose(SCHED.alpha_bar[1:], np.cumprod(1.0 - betas))


def test_alpha_bar_strictly_decreasing_and_terminal_small():
    assert np.all(np.diff(SCHED.alpha_bar) < 0)
    assert SCHED.alpha_bar[-1] < 0.01


def test_linear_schedule_kind():
    s = make_schedule(10, 0.01, 0.2, kind="linear")
    np.testing.assert_allclose(s.beta[1:], np.linspace(0.01, 0.2, 10))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_steps=0),
        dict(beta_start=0.0),
        dict(beta_start=0.6, beta_end=0.5),
        dict(beta_end=1.0),
        dict(kind="cosine"),
    ],
)
def test_make_schedule_rejects_bad_parameters(kwargs):
    with pytest.raises(ParameterError):
        make_schedule(**kwargs)


def test_schedule_validates_placeholder_and_monotonicity():
    with pytest.raises(ParameterError):
        NoiseSchedule(
            beta=np.array([0.1, 0.2]),
            alpha=np.array([0.9, 0.8]),
            alpha_bar=np.array([0.9, 0.72]),
        )
    with pytest.raises(ParameterError):
        NoiseSchedule(
            beta=np.array([0.0, 0.2, 0.2]),
            alpha=np.array([1.0, 0.8, 0.8]),
            alpha_bar=np.array([1.0, 0.8, 0.9]),
        )


@pytest.mark.parametrize("t", [1, 25, 50])
def test_forward_marginal_monte_carlo_moments(t):
    """Sample mean and variance of x_t over 10^4 noise draws must match
    sqrt(abar_t) * x0 and 1 - abar_t within 5%."""
    rng = np.random.default_rng(42)
    x0 = 0.7
    draws = np.array(
        [forward_marginal(x0, t, e, SCHED) for e in rng.standard_normal(10_000)]
    )
    abar = SCHED.alpha_bar[t]
    want_mean = np.sqrt(abar) * x0
    want_var = 1.0 - abar
    sem = np.sqrt(want_var / draws.size)
    assert abs(draws.mean() - want_mean) <= max(0.05 * abs(want_mean), 4 * sem)
    assert abs(draws.var() - want_var) <= 0.05 * max(want_var, 1e-4)


def test_forward_marginal_terminal_is_standard_normal():
    """At t = T the signal share is under 10% and the standardized
    marginal passes a KS test against N(0, 1)."""
    rng = np.random.default_rng(7)
    x0 = 0.7
    t = SCHED.n_steps
    abar = SCHED.alpha_bar[t]
    assert np.sqrt(abar) < 0.1
    draws = np.array(
        [forward_marginal(x0, t, e, SCHED) for e in rng.standard_normal(10_000)]
    )
    z = (draws - np.sqrt(abar) * x0) / np.sqrt(1.0 - abar)
    assert spstats.kstest(z, "norm").pvalue > 1e-3


def test_forward_marginal_t_zero_is_identity():
    x0 = np.array([1.0, -2.0, 3.0])
    out = forward_marginal(x0, 0, np.ones(3), SCHED)
    np.testing.assert_array_equal(out, x0)


def test_forward_marginal_rejects_bad_t_and_shapes():
    with pytest.raises(ParameterError):
        forward_marginal(np.zeros(4), 51, np.zeros(4), SCHED)
    with pytest.raises(ParameterError):
        forward_marginal(np.zeros(4), 1, np.zeros(5), SCHED)


@pytest.mark.parametrize("t", [1, 10, 30, 50])
def test_renoising_reconstruction_identity(t):
    """Noising then inverting with the same eps recovers x0 to 1e-6."""
    rng = np.random.default_rng(t)
    x0 = rng.standard_normal(256)
    eps = rng.standard_normal(256)
    x_t = forward_marginal(x0, t, eps, SCHED)
    abar = SCHED.alpha_bar[t]
    x0_hat = (x_t - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)
    assert np.max(np.abs(x0_hat - x0)) < 1e-6


def test_ddpm_step_matches_hand_formula():
    t = 20
    rng = np.random.default_rng(0)
    x_t = rng.standard_normal(64)
    eps_hat = rng.standard_normal(64)
    z = rng.standard_normal(64)
    beta = SCHED.beta[t]
    abar = SCHED.alpha_bar[t]
    mu = (x_t - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(1.0 - beta)
    want = mu + np.sqrt(beta) * z
    got = ddpm_step(x_t, eps_hat, t, SCHED, z=z)
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_ddpm_step_posterior_variance_choice():
    t = 20
    rng = np.random.default_rng(1)
    x_t = rng.standard_normal(8)
    eps_hat = rng.standard_normal(8)
    z = np.ones(8)
    beta = SCHED.beta[t]
    abar_prev = SCHED.alpha_bar[t - 1]
    abar = SCHED.alpha_bar[t]
    default = ddpm_step(x_t, eps_hat, t, SCHED, z=z)
    posterior = ddpm_step(x_t, eps_hat, t, SCHED, z=z, posterior_variance=True)
    diff = posterior - default
    want = np.sqrt((1.0 - abar_prev) / (1.0 - abar)) - np.sqrt(beta)
    np.testing.assert_allclose(diff, want, rtol=1e-9)


def test_ddpm_final_step_adds_no_noise():
    x_t = np.array([0.5, -0.5])
    eps_hat = np.array([0.1, 0.2])
    out1 = ddpm_step(x_t, eps_hat, 1, SCHED)
    out2 = ddpm_step(x_t, eps_hat, 1, SCHED, rng=np.random.default_rng(99))
    np.testing.assert_array_equal(out1, out2)


def test_ddpm_step_needs_randomness_above_t1():
    with pytest.raises(ParameterError):
        ddpm_step(np.zeros(4), np.zeros(4), 2, SCHED)


def test_ddim_step_matches_hand_formula():
    t, t_prev = 30, 20
    rng = np.random.default_rng(2)
    x_t = rng.standard_normal(32)
    eps_hat = rng.standard_normal(32)
    abar_t = SCHED.alpha_bar[t]
    abar_p = SCHED.alpha_bar[t_prev]
    x0_hat = (x_t - np.sqrt(1 - abar_t) * eps_hat) / np.sqrt(abar_t)
    want = np.sqrt(abar_p) * x0_hat + np.sqrt(1 - abar_p) * eps_hat
    got = ddim_step(x_t, eps_hat, t, t_prev, SCHED)
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_ddim_deterministic_path_is_bitwise_reproducible():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(128)
    eps_hat = rng.standard_normal(128)
    a = ddim_step(x, eps_hat, 40, 25, SCHED, eta=0.0)
    b = ddim_step(x, eps_hat, 40, 25, SCHED, eta=0.0)
    assert a.tobytes() == b.tobytes()


def test_ddim_eta_zero_ignores_rng_entirely():
    x = np.ones(16)
    eps_hat = np.zeros(16)
    a = ddim_step(x, eps_hat, 10, 5, SCHED, eta=0.0, rng=np.random.default_rng(0))
    b = ddim_step(x, eps_hat, 10, 5, SCHED, eta=0.0, rng=np.random.default_rng(777))
    assert a.tobytes() == b.tobytes()


def test_ddim_stochastic_term_scales_with_eta():
    x = np.zeros(8)
    eps_hat = np.zeros(8)
    z = np.ones(8)
    eta = 0.05
    base = ddim_step(x, eps_hat, 10, 5, SCHED, eta=0.0)
    noisy = ddim_step(x, eps_hat, 10, 5, SCHED, eta=eta, z=z)
    resid = np.sqrt(1 - SCHED.alpha_bar[5] - eta**2) - np.sqrt(1 - SCHED.alpha_bar[5])
    np.testing.assert_allclose(noisy - base, eta * z + resid * eps_hat, atol=1e-12)


def test_ddim_rejects_excessive_eta_and_bad_order():
    with pytest.raises(ParameterError):
        ddim_step(np.zeros(4), np.zeros(4), 10, 0, SCHED, eta=1.5)
    with pytest.raises(ParameterError):
        ddim_step(np.zeros(4), np.zeros(4), 5, 10, SCHED)
    with pytest.raises(ParameterError):
        ddim_step(np.zeros(4), np.zeros(4), 10, 5, SCHED, eta=-0.1)


def test_ddim_degenerate_identity_step():
    x = np.linspace(-1, 1, 8)
    eps_hat = np.zeros(8)
    out = ddim_step(x, eps_hat, 10, 10, SCHED)
    np.testing.assert_allclose(out, x, rtol=1e-12)


def test_subset_timesteps_endpoints_and_count():
    steps = select_subset_timesteps(50, 6)
    assert steps[0] == 50 and steps[-1] == 0
    assert len(steps) == 7
    assert all(a > b for a, b in zip(steps, steps[1:]))


def test_subset_timesteps_full_chain():
    assert select_subset_timesteps(8, 8) == list(range(8, -1, -1))


def test_subset_timesteps_oversampled_collapses():
    steps = select_subset_timesteps(4, 10)
    assert steps[0] == 4 and steps[-1] == 0
    assert all(a > b for a, b in zip(steps, steps[1:]))
    assert len(steps) <= 5


def test_noise_prediction_loss_is_mse():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((4, 16))
    b = rng.standard_normal((4, 16))
    total = 0.0
    for i in range(4):
        for j in range(16):
            total += (a[i, j] - b[i, j]) ** 2
    assert np.isclose(noise_prediction_loss(a, b), total / 64)
    with pytest.raises(ParameterError):
        noise_prediction_loss(a, b[:2])


def test_sampler_config_validation():
    assert SamplerConfig().kind == "ddim"
    with pytest.raises(ParameterError):
        SamplerConfig(kind="euler")
    with pytest.raises(ParameterError):
        SamplerConfig(n_steps=0)
    with pytest.raises(ParameterError):
        SamplerConfig(eta=-1.0)


def test_schedule_csv_dump(tmp_path):
    path = tmp_path / "schedule.csv"
    dump_schedule_csv(SCHED, path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "t,beta,alpha,alpha_bar"
    assert len(rows) == 52
    t, beta, alpha, abar = rows[1].split(",")
    assert (int(t), float(beta), float(alpha), float(abar)) == (0, 0.0, 1.0, 1.0)
    last = rows[-1].split(",")
    assert float(last[3]) == pytest.approx(SCHED.alpha_bar[-1], rel=0, abs=0)
