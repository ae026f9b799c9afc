"""Variance-preserving noise schedule, respaced reverse grid and
exponential-integrator step coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ConfigError

__all__ = [
    "Schedule",
    "StepPlan",
    "StepCoeffs",
    "build_linear_schedule",
    "respace",
    "step_coeffs",
    "phi_coeffs",
    "exp_mh_identity_check",
]

_TAYLOR_CUTOFF = 1e-8


@dataclass(frozen=True, eq=False)
class Schedule:
    """Discrete VP schedule, indexed ``0 .. n_train_steps - 1``.

    ``alphas[t]`` is the cumulative signal coefficient and ``sigmas[t]`` the
    matching noise coefficient, so that ``x_t = alphas[t] x_0 + sigmas[t] eps``.
    """

    betas: np.ndarray
    alphas: np.ndarray
    sigmas: np.ndarray
    beta_start: float | None = None
    beta_end: float | None = None

    def __post_init__(self):
        for name in ("betas", "alphas", "sigmas"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_train_steps(self) -> int:
        return len(self.alphas)

    @property
    def lambdas(self) -> np.ndarray:
        return np.log(self.alphas) - np.log(self.sigmas)

    def noise_level(self, t: int) -> float:
        """Effective noise level ``sigma_t / alpha_t``."""
        return float(self.sigmas[t] / self.alphas[t])

    @classmethod
    def from_betas(cls, betas) -> "Schedule":
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 2:
            raise ConfigError("need at least two betas", "betas")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ConfigError("every beta must lie in (0, 1)", "betas")
        alpha2 = np.cumprod(1.0 - betas)
        return cls(betas, np.sqrt(alpha2), np.sqrt(1.0 - alpha2))

    @classmethod
    def from_alphas(cls, alphas) -> "Schedule":
        """Build a schedule from explicit signal coefficients (hand cases)."""
        alphas = np.asarray(alphas, dtype=np.float64)
        if np.any(alphas <= 0) or np.any(alphas >= 1):
            raise ConfigError("alphas must lie in (0, 1)", "alphas")
        if np.any(np.diff(alphas) >= 0):
            raise ConfigError("alphas must be strictly decreasing", "alphas")
        alpha2 = alphas**2
        prev = np.concatenate([[1.0], alpha2[:-1]])
        return cls(1.0 - alpha2 / prev, alphas, np.sqrt(1.0 - alpha2))

    def validate(self, tol: float = 1e-12) -> None:
        """Raise ConfigError unless the VP invariants hold."""
        if np.max(np.abs(self.alphas**2 + self.sigmas**2 - 1.0)) > tol:
            raise ConfigError("alpha^2 + sigma^2 != 1", "schedule")
        if np.any(self.alphas <= 0):
            raise ConfigError("alphas must be positive", "schedule")
        if np.any(np.diff(self.alphas) >= 0) or np.any(np.diff(self.sigmas) <= 0):
            raise ConfigError("alphas must decrease and sigmas increase", "schedule")

    def to_config(self) -> dict[str, Any]:
        return {
            "n_train_steps": self.n_train_steps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
        }


def build_linear_schedule(
    n_train_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02
) -> Schedule:
    """Linear DDPM beta schedule with cumulative-product signal coefficients."""
    if not isinstance(n_train_steps, (int, np.integer)) or n_train_steps < 2:
        raise ConfigError("must be an integer >= 2", "n_train_steps")
    if not 0 < beta_start < 1:
        raise ConfigError("must lie in (0, 1)", "beta_start")
    if not beta_start <= beta_end < 1:
        raise ConfigError("must satisfy beta_start <= beta_end < 1", "beta_end")
    betas = np.linspace(beta_start, beta_end, int(n_train_steps), dtype=np.float64)
    sched = Schedule.from_betas(betas)
    return Schedule(sched.betas, sched.alphas, sched.sigmas, float(beta_start), float(beta_end))


@dataclass(frozen=True, eq=False)
class StepPlan:
    """Respaced reverse grid.

    ``timesteps`` holds the NFE evaluation indices in decreasing order. The
    transition out of the last index lands on the clean boundary
    (alpha = 1, sigma = 0, log-SNR = +inf).
    """

    timesteps: np.ndarray
    alphas: np.ndarray
    sigmas: np.ndarray
    lambdas: np.ndarray

    @property
    def nfe(self) -> int:
        return len(self.timesteps)

    def __len__(self) -> int:
        return len(self.timesteps)


def respace(schedule: Schedule, nfe: int) -> StepPlan:
    """Pick ``nfe`` uniformly strided indices, ``floor(k n / nfe)``, reversed."""
    n = schedule.n_train_steps
    if not isinstance(nfe, (int, np.integer)) or not 2 <= nfe <= n:
        raise ConfigError(f"must be an integer in [2, {n}]", "nfe")
    ts = (np.arange(nfe, dtype=np.int64) * n) // nfe
    ts = ts[::-1].copy()
    alphas = schedule.alphas[ts]
    sigmas = schedule.sigmas[ts]
    lambdas = np.log(alphas) - np.log(sigmas)
    for arr in (ts, alphas, sigmas, lambdas):
        arr.setflags(write=False)
    return StepPlan(ts, alphas, sigmas, lambdas)


def phi_coeffs(h: float) -> tuple[float, float, float]:
    """Return ``(exp(-h), A0(h), A1(h))`` for a log-SNR increment ``h >= 0``.

    ``A0 = 1 - exp(-h)``, ``A1 = 1 - A0 / h``; small ``h`` uses the series
    ``h/2 - h^2/6`` for ``A1``.
    """
    if math.isinf(h):
        return 0.0, 1.0, 1.0
    e_mh = math.exp(-h)
    a0 = -math.expm1(-h)
    if h < _TAYLOR_CUTOFF:
        a1 = h / 2.0 - h * h / 6.0
    else:
        a1 = 1.0 - a0 / h
    return e_mh, a0, a1


@dataclass(frozen=True)
class StepCoeffs:
    i: int
    t: int
    t_next: int | None  # None marks the clean boundary
    alpha: float
    sigma: float
    alpha_next: float
    sigma_next: float
    h: float
    h_prev: float | None
    e_mh: float
    A0: float
    A1: float

    @property
    def sigma_ratio(self) -> float:
        return self.sigma_next / self.sigma


def step_coeffs(plan: StepPlan, i: int) -> StepCoeffs:
    """Coefficients for reverse step ``i`` (from ``timesteps[i]`` onward)."""
    n = len(plan)
    if not 0 <= i < n:
        raise IndexError(f"step index {i} outside [0, {n})")
    lam = float(plan.lambdas[i])
    if i + 1 < n:
        t_next = int(plan.timesteps[i + 1])
        alpha_next, sigma_next = float(plan.alphas[i + 1]), float(plan.sigmas[i + 1])
        h = float(plan.lambdas[i + 1]) - lam
    else:
        t_next, alpha_next, sigma_next, h = None, 1.0, 0.0, math.inf
    h_prev = lam - float(plan.lambdas[i - 1]) if i > 0 else None
    e_mh, a0, a1 = phi_coeffs(h)
    return StepCoeffs(
        i=i,
        t=int(plan.timesteps[i]),
        t_next=t_next,
        alpha=float(plan.alphas[i]),
        sigma=float(plan.sigmas[i]),
        alpha_next=alpha_next,
        sigma_next=sigma_next,
        h=h,
        h_prev=h_prev,
        e_mh=e_mh,
        A0=a0,
        A1=a1,
    )


def exp_mh_identity_check(schedule: Schedule, t: int, t_next: int) -> float:
    """``|exp(-h) - alpha_t sigma_next / (alpha_next sigma_t)|`` for a pair."""
    lam = schedule.lambdas
    h = lam[t_next] - lam[t]
    a, s = schedule.alphas, schedule.sigmas
    ratio = a[t] * s[t_next] / (a[t_next] * s[t])
    return float(abs(math.exp(-h) - ratio))
