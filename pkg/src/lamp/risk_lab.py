"""Monte Carlo and closed-form one-step risks of lagged estimates.

Errors follow ``D_t = mu_t + eta_t`` and ``D_{t+dt} = mu_{t+dt} + eta_{t+dt}``
with componentwise bivariate Gaussian ``(eta_t, eta_{t+dt})``. Risks are
reported at estimator level; multiply by ``alpha_{t-dt}^2`` for the state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "ErrorModel",
    "RiskEstimate",
    "sample_errors",
    "empirical_risks",
    "closed_form_risks",
    "improvement_condition",
    "variance_factor",
    "sweep_beta",
    "SWEEP_COLUMNS",
]


@dataclass(frozen=True, eq=False)
class ErrorModel:
    """Per-component error statistics.

    Leave ``sigma_diag_next`` and ``cov_cross_diag`` unset for the
    equal-variance model with cross-covariance ``rho * sigma_diag``.
    """

    sigma_diag: np.ndarray
    rho: float = 0.0
    r: np.ndarray | None = None
    sigma_diag_next: np.ndarray | None = None
    cov_cross_diag: np.ndarray | None = None

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma_diag, dtype=np.float64))
        if np.any(s <= 0):
            raise ConfigError("must be positive", "sigma_diag")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError("must lie in [0, 1)", "rho")
        r = np.zeros_like(s) if self.r is None else np.broadcast_to(np.asarray(self.r, dtype=np.float64), s.shape).copy()
        object.__setattr__(self, "sigma_diag", s)
        object.__setattr__(self, "r", r)
        if self.generalized:
            nxt = np.broadcast_to(np.asarray(self.sigma_diag_next, dtype=np.float64), s.shape).copy()
            cross = np.broadcast_to(np.asarray(self.cov_cross_diag, dtype=np.float64), s.shape).copy()
            if np.any(nxt < 0) or np.any(cross**2 > s * nxt * (1 + 1e-12)):
                raise ConfigError("per-component covariance blocks must be PSD", "cov_cross_diag")
            object.__setattr__(self, "sigma_diag_next", nxt)
            object.__setattr__(self, "cov_cross_diag", cross)
        elif self.sigma_diag_next is not None or self.cov_cross_diag is not None:
            raise ConfigError("give both sigma_diag_next and cov_cross_diag", "sigma_diag_next")

    @property
    def generalized(self) -> bool:
        return self.sigma_diag_next is not None and self.cov_cross_diag is not None

    @property
    def dim(self) -> int:
        return self.sigma_diag.size

    @property
    def var_next(self) -> np.ndarray:
        return self.sigma_diag_next if self.generalized else self.sigma_diag

    @property
    def cross(self) -> np.ndarray:
        return self.cov_cross_diag if self.generalized else self.rho * self.sigma_diag

    @classmethod
    def generalize(cls, model: "ErrorModel") -> "ErrorModel":
        """Same statistics, expressed through the unequal-variance fields."""
        return cls(model.sigma_diag, 0.0, model.r, model.var_next.copy(), model.cross.copy())


def sample_errors(model: ErrorModel, n_trials: int, seed: int):
    """Draw ``(eta_t, eta_next)``, each of shape ``(n_trials, dim)``."""
    if n_trials < 1:
        raise ConfigError("must be >= 1", "n_trials")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, n_trials, model.dim))
    s1 = np.sqrt(model.sigma_diag)
    load = model.cross / s1
    rest = np.sqrt(np.maximum(model.var_next - load**2, 0.0))
    eta = s1 * z[0]
    eta_next = load * z[0] + rest * z[1]
    return eta, eta_next


@dataclass(frozen=True)
class RiskEstimate:
    risk_ps: float
    risk_lamp: float
    se_ps: float = 0.0
    se_lamp: float = 0.0


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    n = v.size
    se = float(np.std(v, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(v)), se


def empirical_risks(model: ErrorModel, beta: float, n_trials: int = 100_000, seed: int = 0, draws=None) -> RiskEstimate:
    eta, eta_next = draws if draws is not None else sample_errors(model, n_trials, seed)
    base = np.sum(eta**2, axis=1)
    lagged = (1.0 - beta) * eta + beta * eta_next + beta * model.r
    lam = np.sum(lagged**2, axis=1)
    m_ps, se_ps = _mean_se(base)
    m_lamp, se_lamp = _mean_se(lam)
    return RiskEstimate(m_ps, m_lamp, se_ps, se_lamp)


def closed_form_risks(model: ErrorModel, beta: float) -> RiskEstimate:
    tr = float(np.sum(model.sigma_diag))
    r2 = float(np.sum(model.r**2))
    if model.generalized:
        lamp = (
            beta**2 * r2
            + (1 - beta) ** 2 * tr
            + beta**2 * float(np.sum(model.sigma_diag_next))
            + 2 * beta * (1 - beta) * float(np.sum(model.cov_cross_diag))
        )
    else:
        lamp = (1 - 2 * beta * (1 - beta) * (1 - model.rho)) * tr + beta**2 * r2
    return RiskEstimate(tr, lamp)


def variance_factor(beta: float, rho: float) -> float:
    """Variance ratio of the lagged to the instantaneous error."""
    return 1 - 2 * beta * (1 - beta) * (1 - rho)


def improvement_condition(model: ErrorModel, beta: float) -> tuple[bool, float, float]:
    """Return ``(holds, lhs, rhs)``; ``holds`` iff the lagged risk is lower.

    Requires ``beta > 0``.
    """
    if not beta > 0:
        raise ValueError("improvement condition needs beta > 0")
    tr = float(np.sum(model.sigma_diag))
    r2 = float(np.sum(model.r**2))
    if model.generalized:
        lhs = beta * (r2 + tr + float(np.sum(model.sigma_diag_next)))
        rhs = 2 * (tr - (1 - beta) * float(np.sum(model.cov_cross_diag)))
    else:
        lhs = beta * r2
        rhs = 2 * (1 - beta) * (1 - model.rho) * tr
    return lhs < rhs, lhs, rhs


SWEEP_COLUMNS = ("beta", "risk_ps_cf", "risk_lamp_cf", "risk_lamp_mc", "se", "condition_holds")


def sweep_beta(model: ErrorModel, beta_grid, n_trials: int = 100_000, seed: int = 0):
    """Risk table over ``beta_grid`` on one shared set of draws.

    Returns ``(rows, argmin_beta)`` where rows are dicts keyed by
    ``SWEEP_COLUMNS`` and the argmin is taken on the closed-form risk.
    """
    draws = sample_errors(model, n_trials, seed)
    rows = []
    for beta in beta_grid:
        beta = float(beta)
        cf = closed_form_risks(model, beta)
        mc = empirical_risks(model, beta, draws=draws)
        holds = improvement_condition(model, beta)[0] if beta > 0 else False
        rows.append(
            {
                "beta": beta,
                "risk_ps_cf": cf.risk_ps,
                "risk_lamp_cf": cf.risk_lamp,
                "risk_lamp_mc": mc.risk_lamp,
                "se": mc.se_lamp,
                "condition_holds": holds,
            }
        )
    best = min(rows, key=lambda row: row["risk_lamp_cf"])["beta"] if rows else None
    return rows, best
