"""Forward/reverse diffusion arithmetic.

Everything here is plain array math with scalar coefficients taken from
a precomputed noise schedule, so the same functions serve NumPy arrays
during testing and torch tensors during training and sampling.

Timestep convention: ``t`` runs over ``1..T`` for noising; ``t = 0`` is
the clean signal and ``alpha_bar[0] == 1`` by definition.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule with cumulative products, indexed ``0..T``.

    ``beta[0]`` is a placeholder zero so that ``beta[t]`` matches the
    1-based timestep convention; ``alpha_bar[0] == 1``.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.beta) - 1

    def __post_init__(self):
        if self.beta[0] != 0.0:
            raise ParameterError("beta[0] must be the zero placeholder")
        if np.any(self.beta[1:] <= 0.0) or np.any(self.beta[1:] >= 1.0):
            raise ParameterError("beta values must lie strictly in (0, 1)")
        if not np.all(np.diff(self.alpha_bar) < 0.0):
            raise ParameterError("alpha_bar must be strictly decreasing")


def make_schedule(
    n_steps: int = 50,
    beta_start: float = 1e-4,
    beta_end: float = 0.5,
    kind: str = "quadratic",
) -> NoiseSchedule:
    """Build the variance schedule.

    The default is quadratic in sqrt-space: linearly spaced square roots
    between ``sqrt(beta_start)`` and ``sqrt(beta_end)``, squared. This
    front-loads small betas so early steps barely perturb the signal
    while the terminal marginal still collapses to near-pure noise.
    """
    if n_steps < 1:
        raise ParameterError(f"n_steps must be >= 1, got {n_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    if kind == "quadratic":
        betas = np.linspace(beta_start**0.5, beta_end**0.5, n_steps) ** 2
    elif kind == "linear":
        betas = np.linspace(beta_start, beta_end, n_steps)
    else:
        raise ParameterError(f"unknown schedule kind {kind!r}")
    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _check_t(schedule: NoiseSchedule, t: int, allow_zero: bool = False) -> None:
    lo = 0 if allow_zero else 1
    if not (lo <= t <= schedule.n_steps):
        raise ParameterError(
            f"t must lie in [{lo}, {schedule.n_steps}], got {t}"
        )


def forward_marginal(x0, t: int, eps, schedule: NoiseSchedule):
    """Sample of the noising marginal at step ``t`` given noise ``eps``:

        x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
    """
    _check_t(schedule, t, allow_zero=True)
    if np.shape(x0) != np.shape(eps):
        raise ParameterError(
            f"x0 and eps shapes differ: {np.shape(x0)} vs {np.shape(eps)}"
        )
    a = float(schedule.alpha_bar[t])
    return math.sqrt(a) * x0 + math.sqrt(1.0 - a) * eps


def noise_prediction_loss(eps_hat, eps):
    """Mean squared error between predicted and true noise. Works on
    NumPy arrays and torch tensors alike (returns a scalar of the same
    library)."""
    if np.shape(eps_hat) != np.shape(eps):
        raise ParameterError(
            f"shape mismatch: {np.shape(eps_hat)} vs {np.shape(eps)}"
        )
    diff = eps_hat - eps
    return (diff * diff).mean()


def ddpm_step(
    x_t,
    eps_hat,
    t: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
    z=None,
    posterior_variance: bool = False,
):
    """One ancestral reverse step from ``t`` to ``t - 1``.

        mu = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)

    Noise ``sigma_t * z`` is added except at the final step ``t == 1``.
    The default variance is ``beta_t``; with ``posterior_variance`` it
    is ``(1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)`` instead. ``z`` may
    be passed explicitly (mainly for tests); otherwise it is drawn from
    ``rng``.
    """
    _check_t(schedule, t)
    beta = float(schedule.beta[t])
    abar = float(schedule.alpha_bar[t])
    mu = (x_t - beta / math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(1.0 - beta)
    if t == 1:
        return mu
    if posterior_variance:
        var = (1.0 - float(schedule.alpha_bar[t - 1])) / (1.0 - abar)
    else:
        var = beta
    if z is None:
        if rng is None:
            raise ParameterError("ddpm_step needs rng or explicit z for t > 1")
        z = rng.standard_normal(np.shape(x_t))
    return mu + math.sqrt(var) * z


def ddim_step(
    x_t,
    eps_hat,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    rng: np.random.Generator | None = None,
    z=None,
):
    """One deterministic-or-stochastic step from ``t`` down to ``t_prev``.

    Reconstructs the clean-signal estimate and re-noises it at the
    earlier step:

        x0_hat  = (x_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)
        x_prev  = sqrt(abar_prev) * x0_hat
                  + sqrt(1 - abar_prev - eta^2) * eps_hat + eta * z

    ``eta = 0`` gives the deterministic probability-flow update and
    draws no noise at all, so repeated runs are bitwise identical.
    ``t_prev == t`` is tolerated (a degenerate identity step).
    """
    _check_t(schedule, t)
    _check_t(schedule, t_prev, allow_zero=True)
    if t_prev > t:
        raise ParameterError(f"t_prev must be <= t, got {t_prev} > {t}")
    if eta < 0.0:
        raise ParameterError(f"eta must be >= 0, got {eta}")
    abar_t = float(schedule.alpha_bar[t])
    abar_p = float(schedule.alpha_bar[t_prev])
    resid_var = 1.0 - abar_p - eta * eta
    if resid_var < 0.0:
        raise ParameterError(
            f"eta^2 = {eta * eta:g} exceeds 1 - alpha_bar[{t_prev}] = {1.0 - abar_p:g}"
        )
    x0_hat = (x_t - math.sqrt(1.0 - abar_t) * eps_hat) / math.sqrt(abar_t)
    x_prev = math.sqrt(abar_p) * x0_hat + math.sqrt(resid_var) * eps_hat
    if eta > 0.0:
        if z is None:
            if rng is None:
                raise ParameterError("ddim_step with eta > 0 needs rng or explicit z")
            z = rng.standard_normal(np.shape(x_t))
        x_prev = x_prev + eta * z
    return x_prev


def select_subset_timesteps(n_steps: int, n_subset: int) -> list[int]:
    """Strictly decreasing integer timesteps from ``n_steps`` to 0.

    Linearly spaced with both endpoints included, rounded to integers,
    consecutive duplicates collapsed. Returns at most ``n_subset + 1``
    values; exactly that many whenever ``n_subset <= n_steps``.
    """
    if n_steps < 1:
        raise ParameterError(f"n_steps must be >= 1, got {n_steps}")
    if n_subset < 1:
        raise ParameterError(f"n_subset must be >= 1, got {n_subset}")
    raw = np.linspace(n_steps, 0, n_subset + 1)
    steps = [int(round(v)) for v in raw]
    out = [steps[0]]
    for s in steps[1:]:
        if s < out[-1]:
            out.append(s)
    return out


@dataclass(frozen=True)
class SamplerConfig:
    """How to run the reverse process.

    ``n_steps`` is the number of network evaluations for the ddim
    sampler; the ddpm sampler always walks the full chain.
    """

    kind: str = "ddim"  # "ddim" or "ddpm"
    n_steps: int = 6
    eta: float = 0.0
    seed: int | None = None
    posterior_variance: bool = False  # ddpm sigma^2 choice

    def __post_init__(self):
        if self.kind not in ("ddim", "ddpm"):
            raise ParameterError(f"unknown sampler kind {self.kind!r}")
        if self.n_steps < 1:
            raise ParameterError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.eta < 0.0:
            raise ParameterError(f"eta must be >= 0, got {self.eta}")


def dump_schedule_csv(schedule: NoiseSchedule, path) -> None:
    """Write ``t,beta,alpha,alpha_bar`` rows for t = 0..T."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "beta", "alpha", "alpha_bar"])
        for t in range(schedule.n_steps + 1):
            writer.writerow(
                [
                    t,
                    repr(float(schedule.beta[t])),
                    repr(float(schedule.alpha[t])),
                    repr(float(schedule.alpha_bar[t])),
                ]
            )
