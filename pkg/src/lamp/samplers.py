"""Reverse-time steppers: DDIM/PS, first- and second-order exponential
steps, and the lagged multistep posterior (LAMP) update.

Each step makes exactly one denoiser call. The update formulas are exposed
as pure functions of a :class:`~lamp.schedule.StepCoeffs` so their
algebraic equivalences can be checked on arbitrary inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .corrections import lag_filter
from .errors import ConfigError, NonFiniteError
from .priors import Denoiser, tweedie_from_eps
from .schedule import StepCoeffs, StepPlan, step_coeffs

__all__ = [
    "SamplerConfig",
    "SamplerState",
    "StepRecord",
    "Trajectory",
    "ddim_update",
    "ps_update",
    "one_m_update",
    "ps_decomposed",
    "two_m_update",
    "lamp_from_two_m",
    "lamp_from_ps",
    "lamp_lagged",
    "beta_from_gamma",
    "gamma_from_beta",
    "step_ps",
    "step_1m",
    "step_2m",
    "step_lamp",
    "run_trajectory",
    "METHODS",
]

METHODS = ("ps", "one_m", "two_m", "lamp")
_DEFAULT_GAMMA = {"ps": 0.0, "one_m": 0.0, "two_m": 1.0, "lamp": -0.15}
IDENTITY_TOL = 1e-12


# ---------------------------------------------------------------------------
# update formulas


def ddim_update(xhat, eps, c: StepCoeffs):
    return c.alpha_next * xhat + c.sigma_next * eps


def ps_update(d, eps, c: StepCoeffs):
    return c.alpha_next * d + c.sigma_next * eps


def one_m_update(x, d, c: StepCoeffs):
    return c.sigma_ratio * x + c.alpha_next * c.A0 * d


def ps_decomposed(x, d, xhat, c: StepCoeffs):
    """PS update written as the 1M step plus residual forcing."""
    return one_m_update(x, d, c) + c.alpha_next * c.e_mh * (d - xhat)


def _temporal(d, d_prev, c: StepCoeffs, gamma: float):
    return c.alpha_next * c.A1 * gamma * (d - d_prev) / c.h_prev


def two_m_update(x, d, d_prev, c: StepCoeffs, gamma: float):
    return one_m_update(x, d, c) + _temporal(d, d_prev, c, gamma)


def lamp_from_two_m(x, d, d_prev, xhat, c: StepCoeffs, gamma: float):
    return two_m_update(x, d, d_prev, c, gamma) + c.alpha_next * c.e_mh * (d - xhat)


def lamp_from_ps(d, d_prev, eps, c: StepCoeffs, gamma: float):
    return ps_update(d, eps, c) + _temporal(d, d_prev, c, gamma)


def lamp_lagged(d, d_prev, eps, c: StepCoeffs, beta: float):
    return ps_update(lag_filter(d, d_prev, beta), eps, c)


def beta_from_gamma(gamma: float, c: StepCoeffs) -> float:
    return -gamma * c.A1 / c.h_prev


def gamma_from_beta(beta: float, c: StepCoeffs) -> float:
    return -beta * c.h_prev / c.A1


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    """``gamma=None`` picks 1.0 for ``two_m`` and -0.15 for ``lamp``.

    With ``beta_mode="constant"`` LAMP uses the fixed lag weight ``beta``
    instead of deriving it from ``gamma`` at every step.
    """

    method: str = "ps"
    gamma: float | None = None
    n_warm: int = 0
    beta_mode: str = "from_gamma"
    beta: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}", "sampler.method")
        if self.beta_mode not in ("from_gamma", "constant"):
            raise ConfigError("must be 'from_gamma' or 'constant'", "sampler.beta_mode")
        if int(self.n_warm) != self.n_warm or self.n_warm < 0:
            raise ConfigError("must be a nonnegative integer", "sampler.n_warm")
        if self.gamma is None:
            object.__setattr__(self, "gamma", _DEFAULT_GAMMA[self.method])
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "n_warm", int(self.n_warm))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SamplerConfig":
        allowed = {"method", "gamma", "n_warm", "beta_mode", "beta"}
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)}", "sampler")
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "gamma": self.gamma,
            "n_warm": self.n_warm,
            "beta_mode": self.beta_mode,
            "beta": self.beta,
        }


@dataclass(frozen=True, eq=False)
class SamplerState:
    x: np.ndarray
    d_prev: np.ndarray | None = None
    i: int = 0


@dataclass
class StepRecord:
    step: int
    t: int
    h: float
    h_prev: float
    beta_t: float
    res_norm: float
    temporal_norm: float
    # identity deviations measured at this step (not part of the CSV log)
    ps_decomposition_dev: float = 0.0
    lamp_form_dev: float = 0.0

    CSV_COLUMNS = ("step", "t", "h", "h_prev", "beta_t", "res_norm", "temporal_norm")

    def csv_row(self) -> list:
        return [getattr(self, k) for k in self.CSV_COLUMNS]


@dataclass(frozen=True, eq=False)
class _Eval:
    c: StepCoeffs
    eps: np.ndarray
    xhat: np.ndarray
    d: np.ndarray


def _evaluate(state: SamplerState, plan: StepPlan, denoiser: Denoiser, correction: Callable) -> _Eval:
    c = step_coeffs(plan, state.i)
    eps = denoiser.predict_eps(state.x, c.t)
    xhat = tweedie_from_eps(state.x, eps, c.alpha, c.sigma)
    d = correction(xhat, c.t)
    return _Eval(c, eps, xhat, d)


def _max_abs(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def _scale(*arrays) -> float:
    return max(1.0, *(_max_abs(a) for a in arrays))


def _norm(a) -> float:
    return float(np.linalg.norm(np.ravel(a)))


def _record(ev: _Eval, beta: float, d_prev, x_next, ps_dev: float, lamp_dev: float) -> StepRecord:
    c = ev.c
    return StepRecord(
        step=c.i,
        t=c.t,
        h=c.h,
        h_prev=c.h_prev if c.h_prev is not None else math.nan,
        beta_t=beta,
        res_norm=_norm(ev.d - ev.xhat),
        temporal_norm=_norm(ev.d - d_prev) if d_prev is not None else math.nan,
        ps_decomposition_dev=ps_dev,
        lamp_form_dev=lamp_dev,
    )


def _ps_dev(state, ev, x_ps) -> float:
    alt = ps_decomposed(state.x, ev.d, ev.xhat, ev.c)
    return _max_abs(alt - x_ps) / _scale(state.x, x_ps)


def step_ps(state: SamplerState, plan: StepPlan, denoiser: Denoiser, correction: Callable):
    """``x_next = alpha_next D_t + sigma_next eps``. Returns ``(state, record)``."""
    ev = _evaluate(state, plan, denoiser, correction)
    x_next = ps_update(ev.d, ev.eps, ev.c)
    rec = _record(ev, 0.0, state.d_prev, x_next, _ps_dev(state, ev, x_next), 0.0)
    return SamplerState(x_next, ev.d, state.i + 1), rec


def step_1m(state: SamplerState, plan: StepPlan, denoiser: Denoiser, correction: Callable):
    ev = _evaluate(state, plan, denoiser, correction)
    x_next = one_m_update(state.x, ev.d, ev.c)
    x_ps = ps_update(ev.d, ev.eps, ev.c)
    rec = _record(ev, 0.0, state.d_prev, x_next, _ps_dev(state, ev, x_ps), 0.0)
    return SamplerState(x_next, ev.d, state.i + 1), rec


def step_2m(state: SamplerState, plan: StepPlan, denoiser: Denoiser, correction: Callable, gamma: float = 1.0):
    """Second-order step; the first reverse step falls back to 1M."""
    ev = _evaluate(state, plan, denoiser, correction)
    if state.d_prev is None or ev.c.h_prev is None:
        x_next = one_m_update(state.x, ev.d, ev.c)
    else:
        x_next = two_m_update(state.x, ev.d, state.d_prev, ev.c, gamma)
    x_ps = ps_update(ev.d, ev.eps, ev.c)
    rec = _record(ev, 0.0, state.d_prev, x_next, _ps_dev(state, ev, x_ps), 0.0)
    return SamplerState(x_next, ev.d, state.i + 1), rec


def lamp_active(i: int, n_warm: int, d_prev) -> bool:
    """Warm-up gate: the lag applies once ``i > n_warm`` and a previous target exists."""
    return d_prev is not None and i > n_warm


def step_lamp(
    state: SamplerState,
    plan: StepPlan,
    denoiser: Denoiser,
    correction: Callable,
    gamma: float = -0.15,
    n_warm: int = 0,
    beta: float | None = None,
):
    """LAMP step. ``beta`` given overrides ``gamma`` (constant-lag mode).

    The lagged form drives the trajectory; the two other forms are
    evaluated alongside and their largest deviation is recorded.
    """
    ev = _evaluate(state, plan, denoiser, correction)
    c = ev.c
    x_ps = ps_update(ev.d, ev.eps, c)
    ps_dev = _ps_dev(state, ev, x_ps)
    if not lamp_active(state.i, n_warm, state.d_prev):
        rec = _record(ev, 0.0, state.d_prev, x_ps, ps_dev, 0.0)
        return SamplerState(x_ps, ev.d, state.i + 1), rec

    if beta is None:
        beta_t = beta_from_gamma(gamma, c)
        gamma_t = gamma
    else:
        beta_t = float(beta)
        gamma_t = gamma_from_beta(beta_t, c)
    if gamma_t == 0.0:
        # zero lag is the PS update exactly
        x_next = x_ps
        dev = 0.0
    else:
        x_next = lamp_lagged(ev.d, state.d_prev, ev.eps, c, beta_t)
        form_a = lamp_from_two_m(state.x, ev.d, state.d_prev, ev.xhat, c, gamma_t)
        form_b = lamp_from_ps(ev.d, state.d_prev, ev.eps, c, gamma_t)
        sc = _scale(state.x, x_next, ev.d, state.d_prev)
        dev = max(_max_abs(form_a - x_next), _max_abs(form_b - x_next)) / sc
    rec = _record(ev, beta_t, state.d_prev, x_next, ps_dev, dev)
    return SamplerState(x_next, ev.d, state.i + 1), rec


# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    x0: np.ndarray
    records: list[StepRecord] = field(default_factory=list)
    nfe: int = 0

    @property
    def beta_bar(self) -> float:
        return float(np.mean([r.beta_t for r in self.records])) if self.records else 0.0

    @property
    def max_ps_decomposition_dev(self) -> float:
        return max((r.ps_decomposition_dev for r in self.records), default=0.0)

    @property
    def max_lamp_form_dev(self) -> float:
        return max((r.lamp_form_dev for r in self.records), default=0.0)


def initial_noise(shape, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def run_trajectory(
    config: SamplerConfig,
    plan: StepPlan,
    denoiser: Denoiser,
    correction: Callable,
    x_T: np.ndarray | None = None,
    seed: int | None = None,
    shape=None,
    check_identities: bool = True,
    callback: Callable[[SamplerState, StepRecord], None] | None = None,
) -> Trajectory:
    """Run the configured stepper across the whole plan.

    Either ``x_T`` or ``(seed, shape)`` supplies the starting noise. With
    ``check_identities`` the PS decomposition and LAMP form agreement are
    asserted at every step.
    """
    if config.n_warm >= len(plan):
        raise ConfigError(f"n_warm={config.n_warm} must be < NFE={len(plan)}", "sampler.n_warm")
    if x_T is None:
        if seed is None or shape is None:
            raise ValueError("need x_T or both seed and shape")
        x_T = initial_noise(shape, seed)
    state = SamplerState(np.asarray(x_T, dtype=np.float64))
    traj = Trajectory(state.x)
    constant_beta = config.beta if config.beta_mode == "constant" else None

    for _ in range(len(plan)):
        if config.method == "ps":
            state, rec = step_ps(state, plan, denoiser, correction)
        elif config.method == "one_m":
            state, rec = step_1m(state, plan, denoiser, correction)
        elif config.method == "two_m":
            state, rec = step_2m(state, plan, denoiser, correction, config.gamma)
        else:
            state, rec = step_lamp(state, plan, denoiser, correction, config.gamma, config.n_warm, constant_beta)
        traj.nfe += 1
        if not np.all(np.isfinite(state.x)):
            raise NonFiniteError(rec.step, rec.t)
        if check_identities:
            if rec.ps_decomposition_dev > IDENTITY_TOL:
                raise AssertionError(
                    f"PS decomposition off by {rec.ps_decomposition_dev:.3e} at step {rec.step}"
                )
            if rec.lamp_form_dev > IDENTITY_TOL:
                raise AssertionError(f"LAMP forms disagree by {rec.lamp_form_dev:.3e} at step {rec.step}")
        traj.records.append(rec)
        if callback is not None:
            callback(state, rec)
    traj.x0 = state.x
    return traj
