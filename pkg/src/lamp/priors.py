"""Noise-prediction denoisers with exact Tweedie estimates.

The analytic priors have covariance diagonal in an orthonormal basis given
by any object exposing ``to_spectral`` / ``from_spectral`` (normally the
forward operator itself, so the linear-Gaussian posterior is componentwise).
When the basis is the complex unitary DFT, ``spectral_var`` must be
conjugate-symmetric for the prior to describe real images; variances built
from an operator's singular values satisfy this automatically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy.special import logsumexp

from .schedule import Schedule

__all__ = [
    "Denoiser",
    "GaussianPrior",
    "GmmPrior",
    "GaussianDenoiser",
    "GmmDenoiser",
    "TabulatedDenoiser",
    "CountingDenoiser",
    "tweedie",
    "tweedie_from_eps",
    "eps_from_x0",
    "gaussian_posterior_mean",
    "gaussian_posterior_eps",
    "gmm_posterior_mean",
    "gmm_responsibilities",
    "gmm_posterior_eps",
]


class Denoiser(Protocol):
    schedule: Schedule

    def predict_eps(self, x_t: np.ndarray, t: int) -> np.ndarray: ...


def tweedie_from_eps(x_t, eps, alpha: float, sigma: float) -> np.ndarray:
    return (x_t - sigma * eps) / alpha


def eps_from_x0(x_t, x0, alpha: float, sigma: float) -> np.ndarray:
    """Invert the Tweedie relation for the noise prediction."""
    return (x_t - alpha * x0) / sigma


def tweedie(denoiser: Denoiser, x_t: np.ndarray, t: int, schedule: Schedule | None = None) -> np.ndarray:
    """Clean-image estimate ``(x_t - sigma_t eps) / alpha_t``."""
    schedule = schedule or denoiser.schedule
    eps = denoiser.predict_eps(x_t, t)
    return tweedie_from_eps(x_t, eps, schedule.alphas[t], schedule.sigmas[t])


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """``x0 ~ N(mean, V diag(spectral_var) V^T)``."""

    mean: np.ndarray
    spectral_var: np.ndarray
    basis: object

    def __post_init__(self):
        var = np.asarray(self.spectral_var, dtype=np.float64)
        if np.any(var < 0) or not np.all(np.isfinite(var)):
            raise ValueError("spectral_var must be finite and nonnegative")
        object.__setattr__(self, "spectral_var", var)
        object.__setattr__(self, "mean", np.broadcast_to(np.asarray(self.mean, dtype=np.float64), var.shape).copy())

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.mean.shape)
        return self.mean + self.basis.from_spectral(np.sqrt(self.spectral_var) * self.basis.to_spectral(z))


@dataclass(frozen=True, eq=False)
class GmmPrior:
    """Mixture of Gaussians sharing one spectral covariance."""

    weights: np.ndarray
    means: Sequence[np.ndarray]
    spectral_var: np.ndarray
    basis: object
    _means_bar: list = field(init=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        var = np.asarray(self.spectral_var, dtype=np.float64)
        if np.any(var < 0):
            raise ValueError("spectral_var must be nonnegative")
        means = [np.broadcast_to(np.asarray(m, dtype=np.float64), var.shape).copy() for m in self.means]
        if len(means) != len(w):
            raise ValueError("one mean per weight")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "spectral_var", var)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "_means_bar", [self.basis.to_spectral(m) for m in means])

    def component(self, k: int) -> GaussianPrior:
        return GaussianPrior(self.means[k], self.spectral_var, self.basis)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        k = int(rng.choice(len(self.weights), p=self.weights))
        return self.component(k).sample(rng)


def _shrink(c, alpha, sigma):
    # per-component posterior gain alpha c / (alpha^2 c + sigma^2)
    return alpha * c / (alpha**2 * c + sigma**2)


def gaussian_posterior_mean(prior: GaussianPrior, x_t, alpha: float, sigma: float) -> np.ndarray:
    """``E[x0 | x_t]`` for ``x_t = alpha x0 + sigma z``."""
    basis = prior.basis
    m_bar = basis.to_spectral(prior.mean)
    x_bar = basis.to_spectral(x_t)
    c = prior.spectral_var
    if sigma == 0:
        post = np.where(c > 0, x_bar / alpha, m_bar)
    else:
        post = m_bar + _shrink(c, alpha, sigma) * (x_bar - alpha * m_bar)
    return basis.from_spectral(post)


def gaussian_posterior_eps(prior: GaussianPrior, x_t, t: int, schedule: Schedule) -> np.ndarray:
    a, s = float(schedule.alphas[t]), float(schedule.sigmas[t])
    return eps_from_x0(x_t, gaussian_posterior_mean(prior, x_t, a, s), a, s)


def gmm_responsibilities(prior: GmmPrior, x_t, alpha: float, sigma: float) -> np.ndarray:
    """Posterior component probabilities, computed in the log domain."""
    x_bar = prior.basis.to_spectral(x_t)
    var = alpha**2 * prior.spectral_var + sigma**2
    # the shared normalizer cancels; zero-variance slots carry no information
    inv = np.where(var > 0, 1.0 / np.where(var > 0, var, 1.0), 0.0)
    logits = np.array(
        [
            np.log(w) - 0.5 * float(np.sum(np.abs(x_bar - alpha * mb) ** 2 * inv))
            for w, mb in zip(prior.weights, prior._means_bar)
        ]
    )
    return np.exp(logits - logsumexp(logits))


def gmm_posterior_mean(prior: GmmPrior, x_t, alpha: float, sigma: float) -> np.ndarray:
    resp = gmm_responsibilities(prior, x_t, alpha, sigma)
    out = np.zeros(prior.spectral_var.shape)
    for k, r in enumerate(resp):
        out = out + r * gaussian_posterior_mean(prior.component(k), x_t, alpha, sigma)
    return out


def gmm_posterior_eps(prior: GmmPrior, x_t, t: int, schedule: Schedule) -> np.ndarray:
    a, s = float(schedule.alphas[t]), float(schedule.sigmas[t])
    return eps_from_x0(x_t, gmm_posterior_mean(prior, x_t, a, s), a, s)


# ---------------------------------------------------------------------------


class GaussianDenoiser:
    """Exact noise predictor for a Gaussian prior."""

    def __init__(self, prior: GaussianPrior, schedule: Schedule):
        self.prior = prior
        self.schedule = schedule

    def predict_eps(self, x_t, t):
        return gaussian_posterior_eps(self.prior, x_t, t, self.schedule)


class GmmDenoiser:
    """Exact noise predictor for a Gaussian mixture prior."""

    def __init__(self, prior: GmmPrior, schedule: Schedule):
        self.prior = prior
        self.schedule = schedule

    def predict_eps(self, x_t, t):
        return gmm_posterior_eps(self.prior, x_t, t, self.schedule)


class TabulatedDenoiser:
    """Replays precomputed noise predictions stored as ``eps_<t>.ltnsr`` files."""

    def __init__(self, directory, schedule: Schedule):
        self.directory = Path(directory)
        self.schedule = schedule

    def predict_eps(self, x_t, t):
        from .imaging import read_tensor

        eps = read_tensor(self.directory / f"eps_{int(t)}.ltnsr")
        if eps.shape != np.shape(x_t):
            raise ValueError(f"tabulated eps at t={t} has shape {eps.shape}, expected {np.shape(x_t)}")
        return eps


class CountingDenoiser:
    """Wraps a denoiser and counts ``predict_eps`` calls."""

    def __init__(self, inner: Denoiser):
        self.inner = inner
        self.schedule = inner.schedule
        self.calls = 0

    def predict_eps(self, x_t, t):
        self.calls += 1
        return self.inner.predict_eps(x_t, t)
