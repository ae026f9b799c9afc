"""Batch runs and parameter sweeps writing artifacts to disk."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import SWEEP_PARAMS, ExperimentConfig
from .errors import ConfigError
from .imaging import degrade, exact_posterior_mean, mse, psnr, ssim, tensor_bytes, write_pnm
from .priors import CountingDenoiser, GaussianPrior
from .samplers import StepRecord, Trajectory, run_trajectory

__all__ = ["RunResult", "run", "sweep", "steps_csv", "SWEEP_COLUMNS"]

SWEEP_COLUMNS = ("param", "value", "method", "nfe", "beta_bar", "psnr", "ssim", "mse_to_oracle", "run_dir")


@dataclass
class RunResult:
    x0: np.ndarray
    truth: np.ndarray
    y: np.ndarray
    oracle: np.ndarray | None
    trajectory: Trajectory
    metrics: dict[str, Any]
    out_dir: Path | None


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def steps_csv(records: Sequence[StepRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(StepRecord.CSV_COLUMNS)
    for rec in records:
        w.writerow([_fmt(v) for v in rec.csv_row()])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def run(cfg: ExperimentConfig, out_dir=None, write: bool = True) -> RunResult:
    """Degrade the ground truth, sample, score and (optionally) write artifacts.

    Files: ``x0.ltnsr``, ``truth.ltnsr``, ``y.ltnsr``, ``x0.pgm``/``.ppm``
    (3-channel), ``steps.csv``, ``metrics.json``, ``config.json``.
    """
    seeds = cfg.seeds()
    op = cfg.build_operator()
    prior = cfg.build_prior(op)
    truth = cfg.build_truth(prior)
    y = degrade(truth, op, cfg.sigma_y, seeds["noise"])
    denoiser = CountingDenoiser(cfg.build_denoiser(prior))
    correction = cfg.build_correction(op, y)
    plan = cfg.plan()
    traj = run_trajectory(cfg.sampler, plan, denoiser, correction, seed=seeds["init"], shape=cfg.shape)
    if denoiser.calls != len(plan):
        raise AssertionError(f"denoiser called {denoiser.calls} times for {len(plan)} steps")

    oracle = None
    if isinstance(prior, GaussianPrior) and (cfg.sigma_y > 0 or np.all(op.observed)):
        oracle = exact_posterior_mean(prior, op, y, cfg.sigma_y)

    shown = np.clip(traj.x0, 0.0, 1.0)
    metrics: dict[str, Any] = {
        "nfe": denoiser.calls,
        "method": cfg.sampler.method,
        "correction": cfg.correction.kind,
        "beta_bar": traj.beta_bar,
        "max_ps_decomposition_dev": traj.max_ps_decomposition_dev,
        "max_lamp_form_dev": traj.max_lamp_form_dev,
    }
    if "psnr" in cfg.metrics:
        metrics["psnr"] = psnr(shown, truth)
    if "ssim" in cfg.metrics:
        metrics["ssim"] = ssim(shown, truth) if min(cfg.shape[1:]) >= 11 else None
    if "mse_to_oracle" in cfg.metrics:
        metrics["mse_to_oracle"] = mse(traj.x0, oracle) if oracle is not None else None

    out = Path(out_dir) if out_dir is not None else cfg.output
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "x0.ltnsr").write_bytes(tensor_bytes(traj.x0))
        (out / "truth.ltnsr").write_bytes(tensor_bytes(truth))
        (out / "y.ltnsr").write_bytes(tensor_bytes(y))
        if cfg.shape[0] in (1, 3):
            write_pnm(out / ("x0.pgm" if cfg.shape[0] == 1 else "x0.ppm"), traj.x0)
        (out / "steps.csv").write_text(steps_csv(traj.records))
        (out / "metrics.json").write_text(_json(_finite(metrics)))
        (out / "config.json").write_text(_json(cfg.snapshot()))
    return RunResult(traj.x0, truth, y, oracle, traj, metrics, out if write else None)


def _finite(d: dict) -> dict:
    # JSON has no infinities; identical images report psnr as the string "inf"
    return {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in d.items()}


def sweep(cfg: ExperimentConfig, param: str, values, out_dir=None) -> str:
    """One run per value in its own subdirectory; returns the CSV table."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {param!r}; valid: {', '.join(SWEEP_PARAMS)}", "param")
    if param in ("gamma", "beta") and cfg.sampler.method != "lamp":
        raise ConfigError(f"sweeping {param} needs sampler.method = 'lamp'", "sampler.method")
    root = Path(out_dir) if out_dir is not None else cfg.output
    rows = []
    for k, value in enumerate(values):
        sub = cfg.with_override(param, value)
        res = run(sub, root / f"{k:03d}_{param}_{value}")
        m = res.metrics
        rows.append(
            [
                param,
                _fmt(value),
                sub.sampler.method,
                m["nfe"],
                _fmt(m["beta_bar"]),
                _fmt(m.get("psnr")),
                _fmt(m.get("ssim")),
                _fmt(m.get("mse_to_oracle")),
                res.out_dir.name,
            ]
        )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    w.writerows(rows)
    text = buf.getvalue()
    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep.csv").write_text(text)
    return text
