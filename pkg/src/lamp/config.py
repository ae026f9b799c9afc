"""JSON experiment configuration and seed derivation."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .corrections import Correction, CorrectionConfig
from .errors import ConfigError
from .imaging import read_pgm, read_tensor
from .linops import SpectralOperator, operator_from_config
from .priors import GaussianDenoiser, GaussianPrior, GmmDenoiser, GmmPrior, TabulatedDenoiser
from .samplers import SamplerConfig
from .schedule import Schedule, StepPlan, build_linear_schedule, respace

__all__ = [
    "ExperimentConfig",
    "load_config",
    "splitmix64",
    "sub_seed",
    "SEED_STREAMS",
    "DEFAULT_CONFIG",
]

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

SEED_STREAMS = {"truth": 0, "noise": 1, "init": 2}

DEFAULT_CONFIG: dict[str, Any] = {
    "shape": [1, 16, 16],
    "schedule": {"n_train_steps": 1000, "beta_start": 1e-4, "beta_end": 0.02},
    "nfe": 100,
    "operator": {"kind": "gaussian_blur", "kernel_size": 9, "sigma": 3.0},
    "correction": {"kind": "diffpir", "mu": 7.0, "zeta": 0.3},
    "sampler": {"method": "ps", "n_warm": 3},
    "prior": {"kind": "gaussian", "mean": 0.5, "var_floor": 0.005, "var_gain": 0.1},
    "truth": {"source": "prior"},
    "degradation": {"sigma_y": 0.05},
    "seed": 0,
    "output": "runs/default",
    "metrics": ["psnr", "ssim", "mse_to_oracle"],
}

_TOP_KEYS = set(DEFAULT_CONFIG) | {"version", "derived_seeds"}
KNOWN_METRICS = ("psnr", "ssim", "mse_to_oracle")


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def sub_seed(master: int, stream: int) -> int:
    """Output number ``stream`` of the splitmix64 sequence seeded by ``master``."""
    state = (int(master) + int(stream) * _GOLDEN) & _MASK
    return splitmix64(state)[1]


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("prior", "truth", "operator"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    ``raw`` keeps the merged JSON tree; the typed fields are resolved from it
    before anything is computed.
    """

    raw: dict[str, Any]
    shape: tuple[int, int, int]
    schedule: Schedule
    nfe: int
    correction: CorrectionConfig
    sampler: SamplerConfig
    sigma_y: float
    seed: int
    output: Path
    metrics: tuple[str, ...]
    base_dir: Path

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir=".") -> "ExperimentConfig":
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "config")
        raw = _merge(DEFAULT_CONFIG, {k: v for k, v in d.items() if k not in ("version", "derived_seeds")})

        shape = tuple(int(s) for s in raw["shape"])
        if len(shape) != 3 or min(shape) < 1:
            raise ConfigError("must be [channels, height, width]", "shape")

        sc = raw["schedule"]
        extra = set(sc) - {"n_train_steps", "beta_start", "beta_end"}
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)}", "schedule")
        schedule = build_linear_schedule(int(sc["n_train_steps"]), float(sc["beta_start"]), float(sc["beta_end"]))

        nfe = raw["nfe"]
        if not isinstance(nfe, int) or not 2 <= nfe <= schedule.n_train_steps:
            raise ConfigError(f"must be an integer in [2, {schedule.n_train_steps}]", "nfe")

        deg = raw["degradation"]
        sigma_y = float(deg.get("sigma_y", 0.05))
        if sigma_y < 0:
            raise ConfigError("must be >= 0", "degradation.sigma_y")
        corr = dict(raw["correction"])
        corr.setdefault("sigma_y", sigma_y)
        correction = CorrectionConfig.from_dict(corr)

        sampler = SamplerConfig.from_dict(raw["sampler"])
        if sampler.n_warm >= nfe:
            raise ConfigError(f"must be < nfe ({nfe})", "sampler.n_warm")

        metrics = tuple(raw["metrics"])
        bad = [m for m in metrics if m not in KNOWN_METRICS]
        if bad:
            raise ConfigError(f"unknown metrics {bad}; expected {KNOWN_METRICS}", "metrics")

        seed = int(raw["seed"])
        if not 0 <= seed <= _MASK:
            raise ConfigError("must be an unsigned 64-bit integer", "seed")

        cfg = cls(
            raw=raw,
            shape=shape,
            schedule=schedule,
            nfe=nfe,
            correction=correction,
            sampler=sampler,
            sigma_y=sigma_y,
            seed=seed,
            output=Path(raw["output"]),
            metrics=metrics,
            base_dir=Path(base_dir),
        )
        # surface operator/prior errors before any computation
        op = cfg.build_operator()
        cfg.build_prior(op)
        return cfg

    # -- builders -----------------------------------------------------------
    def seeds(self) -> dict[str, int]:
        return {name: sub_seed(self.seed, k) for name, k in SEED_STREAMS.items()}

    def plan(self) -> StepPlan:
        return respace(self.schedule, self.nfe)

    def build_operator(self) -> SpectralOperator:
        return operator_from_config(self.raw["operator"], self.shape)

    def _path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def _spectral_var(self, spec, op):
        if "spectral_var_file" in spec:
            var = read_tensor(self._path(spec["spectral_var_file"]))
            if var.shape != op.in_shape:
                raise ConfigError(f"shape {var.shape} != {op.in_shape}", "prior.spectral_var_file")
            return var
        floor = float(spec.get("var_floor", 0.005))
        gain = float(spec.get("var_gain", 0.1))
        if floor < 0 or gain < 0:
            raise ConfigError("var_floor and var_gain must be >= 0", "prior")
        return floor + gain * op.spectrum

    def _mean(self, value, op):
        if isinstance(value, str):
            m = read_tensor(self._path(value))
            if m.shape != op.in_shape:
                raise ConfigError(f"shape {m.shape} != {op.in_shape}", "prior.mean")
            return m
        return np.full(op.in_shape, float(value))

    def build_prior(self, op: SpectralOperator):
        """Gaussian or GMM prior diagonal in ``op``'s basis, or None (tabulated)."""
        spec = self.raw["prior"]
        kind = spec.get("kind")
        if kind == "gaussian":
            return GaussianPrior(self._mean(spec.get("mean", 0.5), op), self._spectral_var(spec, op), op)
        if kind == "gmm":
            weights = spec.get("weights", [0.5, 0.5])
            offsets = spec.get("offsets", [-0.2, 0.2])
            if len(weights) != len(offsets):
                raise ConfigError("weights and offsets differ in length", "prior")
            base = self._mean(spec.get("mean", 0.5), op)
            try:
                return GmmPrior(np.asarray(weights, dtype=float), [base + float(o) for o in offsets], self._spectral_var(spec, op), op)
            except ValueError as exc:
                raise ConfigError(str(exc), "prior") from exc
        if kind == "tabulated":
            if "directory" not in spec:
                raise ConfigError("tabulated prior needs 'directory'", "prior")
            if self.raw["truth"].get("source") == "prior":
                raise ConfigError("a tabulated prior cannot generate the ground truth", "truth.source")
            return None
        raise ConfigError(f"unknown prior kind {kind!r}; expected gaussian, gmm or tabulated", "prior.kind")

    def build_denoiser(self, prior):
        if prior is None:
            return TabulatedDenoiser(self._path(self.raw["prior"]["directory"]), self.schedule)
        if isinstance(prior, GmmPrior):
            return GmmDenoiser(prior, self.schedule)
        return GaussianDenoiser(prior, self.schedule)

    def build_truth(self, prior) -> np.ndarray:
        spec = self.raw["truth"]
        src = spec.get("source", "prior")
        if src == "prior":
            return prior.sample(np.random.default_rng(self.seeds()["truth"]))
        if src == "file":
            path = self._path(spec["path"])
            img = read_pgm(path) if path.suffix in (".pgm", ".ppm") else read_tensor(path)
            if img.shape != self.shape:
                raise ConfigError(f"image shape {img.shape} != {self.shape}", "truth.path")
            return img
        raise ConfigError(f"unknown source {src!r}; expected prior or file", "truth.source")

    def build_correction(self, op, y) -> Correction:
        return Correction(self.correction, op, y, self.schedule)

    def snapshot(self) -> dict[str, Any]:
        """Fully resolved config, loadable again with :func:`load_config`."""
        snap = copy.deepcopy(self.raw)
        snap["correction"] = self.correction.to_dict()
        snap["sampler"] = self.sampler.to_dict()
        snap["degradation"] = {"sigma_y": self.sigma_y}
        snap["shape"] = list(self.shape)
        snap["version"] = __version__
        snap["derived_seeds"] = self.seeds()
        return snap

    def with_override(self, param: str, value) -> "ExperimentConfig":
        """Copy of this config with one sweep parameter replaced."""
        d = copy.deepcopy(self.raw)
        d["correction"] = self.correction.to_dict()
        d["sampler"] = self.sampler.to_dict()
        if param == "gamma":
            d["sampler"].update(gamma=float(value), beta_mode="from_gamma")
        elif param == "beta":
            d["sampler"].update(beta=float(value), beta_mode="constant")
        elif param in ("mu", "eta", "eta_b"):
            d["correction"][param] = float(value)
        elif param == "nfe":
            d["nfe"] = int(value)
        elif param == "sigma_y":
            d["degradation"]["sigma_y"] = float(value)
            d["correction"]["sigma_y"] = float(value)
        elif param == "n_warm":
            d["sampler"]["n_warm"] = int(value)
        else:
            raise ConfigError(f"unknown sweep parameter {param!r}; valid: {SWEEP_PARAMS}", "param")
        return ExperimentConfig.from_dict(d, self.base_dir)


SWEEP_PARAMS = ("gamma", "beta", "mu", "eta", "eta_b", "nfe", "sigma_y", "n_warm")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(str(exc), str(path)) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", str(path))
    return ExperimentConfig.from_dict(data, path.parent)
