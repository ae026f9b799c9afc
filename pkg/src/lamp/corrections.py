"""Measurement-aware estimates ``D_t = C_t(xhat, y, K)`` and the lag filter."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .errors import ConfigError, SingularCorrectionError
from .linops import SpectralOperator
from .schedule import Schedule

__all__ = [
    "CorrectionConfig",
    "Correction",
    "correct_identity",
    "correct_diffpir",
    "correct_ddrm",
    "ddrm_components",
    "lag_filter",
    "REGIME_NULL",
    "REGIME_PINV",
    "REGIME_RESIDUAL",
]

KINDS = ("identity", "diffpir", "ddrm")

REGIME_NULL = 0
REGIME_PINV = 1
REGIME_RESIDUAL = 2


@dataclass(frozen=True)
class CorrectionConfig:
    kind: str = "identity"
    sigma_y: float = 0.05
    mu: float = 7.0
    eta: float = 0.85
    eta_b: float = 1.0
    # accepted for DiffPIR configs; the deterministic sampler ignores it
    zeta: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; expected one of {KINDS}", "correction.kind")
        if not self.sigma_y >= 0:
            raise ConfigError("must be >= 0", "correction.sigma_y")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("must lie in [0, 1]", "correction.eta")
        if not 0.0 <= self.eta_b <= 1.0:
            raise ConfigError("must lie in [0, 1]", "correction.eta_b")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CorrectionConfig":
        known = {k: d[k] for k in ("kind", "sigma_y", "mu", "eta", "eta_b", "zeta") if k in d}
        extra = set(d) - set(known)
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)}", "correction")
        return cls(**{k: (v if k == "kind" else float(v)) for k, v in known.items()})

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def correct_identity(xhat, y=None, op=None, t=None):
    return xhat


def correct_diffpir(xhat, y, op: SpectralOperator, mu: float):
    """Proximal data-consistency step.

    Minimizes ``0.5 ||y - K x||^2 + 0.5 mu ||x - xhat||^2`` in the
    operator's spectral coordinates:
    ``d_i = (a_i ybar_i + mu xbar_i) / (a_i^2 + mu)``.
    """
    a = op.spectrum
    xbar = op.to_spectral(xhat)
    ybar = op.to_spectral_out(y)
    if mu > 0:
        dbar = (a * ybar + mu * xbar) / (a * a + mu)
    else:
        if mu < 0 or not np.all(op.observed):
            raise SingularCorrectionError("proximal solve needs mu > 0 or full column rank")
        dbar = ybar / a
    return op.from_spectral(dbar)


def ddrm_components(xbar, ybar, a, n_t: float, n_0: float, eta: float, eta_b: float):
    """Componentwise DDRM rule. Returns ``(dbar, regime)``.

    Regimes: ``a == 0`` keeps the prior value; ``a n_t > n_0`` blends toward
    ``ybar / a`` with weight ``eta_b``; otherwise the residual step
    ``xbar + n_t sqrt(1 - eta^2) (ybar - a xbar) / n_0``.
    """
    xbar = np.asarray(xbar)
    ybar = np.asarray(ybar)
    a = np.asarray(a, dtype=np.float64)
    null = a <= 0
    pinv = ~null & (a * n_t > n_0)
    resid = ~null & ~pinv
    if n_0 == 0:
        # no residual step without measurement noise; a n_t = 0 keeps the prior value
        null, resid = null | resid, np.zeros_like(resid)
    regime = np.where(null, REGIME_NULL, np.where(pinv, REGIME_PINV, REGIME_RESIDUAL))

    safe_a = np.where(pinv, a, 1.0)
    dbar = np.where(pinv, eta_b * ybar / safe_a + (1.0 - eta_b) * xbar, xbar)
    if n_0 > 0 and np.any(resid):
        n_tilde = n_t * np.sqrt(1.0 - eta * eta)
        dbar = np.where(resid, xbar + n_tilde * (ybar - a * xbar) / n_0, dbar)
    return dbar, regime


def correct_ddrm(xhat, y, op: SpectralOperator, n_t: float, cfg: CorrectionConfig):
    """Deterministic DDRM target mapped back to the image domain."""
    a = np.where(op.observed, op.spectrum, 0.0)
    dbar, _ = ddrm_components(
        op.to_spectral(xhat), op.to_spectral_out(y), a, n_t, cfg.sigma_y, cfg.eta, cfg.eta_b
    )
    return op.from_spectral(dbar)


def lag_filter(d, d_prev, beta_t: float):
    """``(1 - beta) d + beta d_prev``; no clipping."""
    return (1.0 - beta_t) * d + beta_t * d_prev


class Correction:
    """Binds a correction rule to an operator, measurement and schedule.

    Call with ``(xhat, t)`` where ``t`` is a schedule index.
    """

    def __init__(self, cfg: CorrectionConfig, op: SpectralOperator | None = None, y=None, schedule: Schedule | None = None):
        if cfg.kind != "identity" and (op is None or y is None):
            raise ConfigError(f"{cfg.kind} correction needs an operator and a measurement", "correction")
        if cfg.kind == "ddrm" and schedule is None:
            raise ConfigError("ddrm correction needs the schedule", "correction")
        if cfg.kind == "diffpir" and not (cfg.mu > 0 or np.all(op.observed)):
            raise SingularCorrectionError("diffpir with mu <= 0 needs a full-rank operator")
        self.cfg = cfg
        self.op = op
        self.y = y
        self.schedule = schedule

    @property
    def kind(self) -> str:
        return self.cfg.kind

    def __call__(self, xhat, t: int):
        kind = self.cfg.kind
        if kind == "identity":
            return correct_identity(xhat)
        if kind == "diffpir":
            return correct_diffpir(xhat, self.y, self.op, self.cfg.mu)
        return correct_ddrm(xhat, self.y, self.op, self.schedule.noise_level(t), self.cfg)
