"""End-to-end identity and oracle audit behind ``lamp verify``.

Each suite returns a :class:`SuiteResult` listing named checks with the
largest deviation seen and the tolerance it was held to.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .corrections import (
    REGIME_NULL,
    REGIME_PINV,
    REGIME_RESIDUAL,
    CorrectionConfig,
    Correction,
    correct_diffpir,
    ddrm_components,
    lag_filter,
)
from .imaging import degrade, exact_posterior_mean, mse, psnr, ssim
from .linops import (
    dense_adjoint_oracle,
    dense_oracle,
    make_block_sr,
    make_gaussian_blur,
    make_identity,
    make_motion_blur,
)
from .priors import (
    CountingDenoiser,
    GaussianDenoiser,
    GaussianPrior,
    GmmDenoiser,
    GmmPrior,
    gaussian_posterior_mean,
    gmm_responsibilities,
)
from .risk_lab import (
    ErrorModel,
    closed_form_risks,
    empirical_risks,
    improvement_condition,
    sample_errors,
    variance_factor,
)
from .samplers import (
    SamplerConfig,
    SamplerState,
    beta_from_gamma,
    ddim_update,
    lamp_from_ps,
    lamp_from_two_m,
    lamp_lagged,
    one_m_update,
    run_trajectory,
    step_lamp,
    step_ps,
)
from .schedule import Schedule, build_linear_schedule, exp_mh_identity_check, phi_coeffs, respace, step_coeffs

__all__ = ["Check", "SuiteResult", "SUITES", "verify", "format_report"]


@dataclass
class Check:
    name: str
    deviation: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.deviation <= self.tol)


@dataclass
class SuiteResult:
    name: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)

    @property
    def max_deviation(self) -> float:
        return max((c.deviation for c in self.checks), default=0.0)

    def add(self, name: str, deviation: float, tol: float) -> None:
        self.checks.append(Check(name, float(deviation), tol))


def _small_ops(shape=(1, 8, 8)):
    return {
        "gaussian_blur": make_gaussian_blur(shape, 3, 1.0),
        "motion_blur": make_motion_blur(shape, 5, 0.5, seed=7),
        "block_sr_2": make_block_sr(shape, 2),
        "block_sr_4": make_block_sr(shape, 4),
    }


# ---------------------------------------------------------------------------


def suite_schedule(schedule: Schedule) -> SuiteResult:
    res = SuiteResult("schedule")
    a, s = schedule.alphas, schedule.sigmas
    res.add("alpha^2 + sigma^2 = 1", np.max(np.abs(a**2 + s**2 - 1)), 1e-12)
    res.add("alpha strictly decreasing", float(np.max(np.diff(a)) >= 0), 0.0)
    res.add("sigma strictly increasing", float(np.min(np.diff(s)) <= 0), 0.0)
    lam = np.log(a) - np.log(s)
    res.add("n_t = exp(-lambda)", np.max(np.abs(s / a - np.exp(-lam)) / np.exp(-lam)), 1e-12)
    n = schedule.n_train_steps
    res.add(
        "exp(-h) identity, consecutive pairs",
        max(exp_mh_identity_check(schedule, t, t - 1) for t in range(1, n)),
        1e-12,
    )
    worst = 0.0
    for t in range(1, n):
        e_mh, a0, _ = phi_coeffs(float(lam[t - 1] - lam[t]))
        worst = max(worst, abs(a0 + e_mh - 1))
    res.add("A0 + exp(-h) = 1", worst, 1e-15)
    bad = 0
    for nfe in range(2, n + 1):
        if np.any(np.diff(respace(schedule, nfe).lambdas) <= 0):
            bad += 1
    res.add("respaced log-SNR increasing (all NFE)", bad, 0)
    return res


def suite_linops() -> SuiteResult:
    res = SuiteResult("linops")
    rng = np.random.default_rng(11)
    for name, op in _small_ops().items():
        M = dense_oracle(op)
        Mt = dense_adjoint_oracle(op)
        sv = np.linalg.svd(M, compute_uv=False)
        spec = np.sort(op.spectrum.ravel())[::-1][: sv.size]
        res.add(f"{name}: spectrum vs dense SVD", np.max(np.abs(sv - spec)), 1e-8)
        x = rng.standard_normal(op.in_shape)
        y = rng.standard_normal(op.out_shape)
        res.add(f"{name}: apply vs dense", np.max(np.abs(M @ x.ravel() - op.apply(x).ravel())), 1e-10)
        res.add(f"{name}: adjoint vs dense", np.max(np.abs(M.T @ y.ravel() - op.adjoint(y).ravel())), 1e-10)
        res.add(f"{name}: adjoint oracle = transpose", np.max(np.abs(Mt - M.T)), 1e-12)
        pinv = np.linalg.pinv(M, rcond=1e-10)
        res.add(f"{name}: pinv vs dense", np.max(np.abs(pinv @ y.ravel() - op.pinv_apply(y).ravel())), 1e-10)
        res.add(f"{name}: round trip", np.max(np.abs(op.from_spectral(op.to_spectral(x)) - x)), 1e-10)
        res.add(
            f"{name}: isometry",
            abs(np.linalg.norm(op.to_spectral(x)) - np.linalg.norm(x)),
            1e-10,
        )
        lhs = np.vdot(op.apply(x), y)
        rhs = np.vdot(x, op.adjoint(y))
        res.add(f"{name}: <Kx,y> = <x,K^T y>", abs(lhs - rhs) / max(1.0, abs(lhs)), 1e-10)
        res.add(f"{name}: K pinv K x = K x", np.max(np.abs(op.apply(op.pinv_apply(op.apply(x))) - op.apply(x))), 1e-8)
        if name.startswith("block_sr"):
            r = op.factor
            nz = op.spectrum[op.observed]
            res.add(f"{name}: singular values = 1/r", np.max(np.abs(nz - 1.0 / r)), 0.0)
            res.add(f"{name}: K K^T = I / r^2", np.max(np.abs(M @ M.T - np.eye(M.shape[0]) / r**2)), 1e-12)
        else:
            shifted = np.roll(x, (1, 2), axis=(1, 2))
            res.add(
                f"{name}: shift equivariance",
                np.max(np.abs(op.apply(shifted) - np.roll(op.apply(x), (1, 2), axis=(1, 2)))),
                1e-10,
            )
    return res


def suite_priors(schedule: Schedule) -> SuiteResult:
    res = SuiteResult("priors")
    rng = np.random.default_rng(5)
    shape = (1, 4, 4)
    op = make_block_sr(shape, 2)
    c = rng.uniform(0.05, 1.0, shape)
    m = rng.standard_normal(shape)
    prior = GaussianPrior(m, c, op)
    V = np.stack([op.from_spectral(e.reshape(shape)).ravel() for e in np.eye(16)], axis=1)
    C = V @ np.diag(c.ravel()) @ V.T
    t = 500
    a, s = float(schedule.alphas[t]), float(schedule.sigmas[t])
    x_t = rng.standard_normal(shape)
    dense = m.ravel() + a * C @ np.linalg.solve(a * a * C + s * s * np.eye(16), x_t.ravel() - a * m.ravel())
    res.add("gaussian posterior mean vs dense", np.max(np.abs(gaussian_posterior_mean(prior, x_t, a, s).ravel() - dense)), 1e-12)

    fd_worst = 0.0
    for k in range(16):
        e = np.zeros(16)
        e[k] = 1.0
        v = op.from_spectral(e.reshape(shape))
        step = 1e-4
        deriv = (gaussian_posterior_mean(prior, x_t + step * v, a, s) - gaussian_posterior_mean(prior, x_t - step * v, a, s)) / (2 * step)
        expect = a * c.ravel()[k] / (a * a * c.ravel()[k] + s * s)
        fd_worst = max(fd_worst, abs(float(np.vdot(v, deriv)) - expect))
    res.add("Tweedie gain by finite differences", fd_worst, 1e-6)

    gmm = GmmPrior([0.2, 0.5, 0.3], [m, m + 1.0, m - 2.0], c, op)
    worst = 0.0
    for t in (0, 100, 500, 999):
        aa, ss = float(schedule.alphas[t]), float(schedule.sigmas[t])
        r = gmm_responsibilities(gmm, 3 * rng.standard_normal(shape), aa, ss)
        worst = max(worst, abs(r.sum() - 1.0))
    res.add("GMM responsibilities sum to 1", worst, 1e-12)
    return res


def _ddrm_scalar(x, y, a, n_t, n_0, eta, eta_b):
    if a == 0:
        return x, REGIME_NULL
    if a * n_t > n_0:
        return eta_b * y / a + (1 - eta_b) * x, REGIME_PINV
    if n_0 == 0:
        return x, REGIME_NULL
    return x + n_t * math.sqrt(1 - eta * eta) * (y - a * x) / n_0, REGIME_RESIDUAL


def suite_corrections() -> SuiteResult:
    res = SuiteResult("corrections")
    rng = np.random.default_rng(3)
    for name, op in _small_ops().items():
        M = dense_oracle(op)
        xhat = rng.standard_normal(op.in_shape)
        y = rng.standard_normal(op.out_shape)
        mu = 7.0
        d = correct_diffpir(xhat, y, op, mu)
        grad = M.T @ (M @ d.ravel() - y.ravel()) + mu * (d.ravel() - xhat.ravel())
        scale = np.linalg.norm(y) + np.linalg.norm(xhat)
        res.add(f"{name}: DiffPIR gradient norm", np.linalg.norm(grad) / scale, 1e-8)
        dense = np.linalg.solve(M.T @ M + mu * np.eye(M.shape[1]), M.T @ y.ravel() + mu * xhat.ravel())
        res.add(f"{name}: DiffPIR vs dense solve", np.max(np.abs(d.ravel() - dense)), 1e-8)

    n = 10_000
    a = np.where(rng.random(n) < 0.1, 0.0, rng.uniform(0, 2, n))
    n_t = rng.uniform(0, 2, n)
    n_0 = np.where(rng.random(n) < 0.1, 0.0, rng.uniform(0, 0.5, n))
    eta, eta_b = rng.random(n), rng.random(n)
    xb, yb = rng.standard_normal(n), rng.standard_normal(n)
    val_dev, regime_bad = 0.0, 0
    for i in range(n):
        got, reg = ddrm_components(xb[i : i + 1], yb[i : i + 1], a[i : i + 1], n_t[i], n_0[i], eta[i], eta_b[i])
        ref, ref_reg = _ddrm_scalar(xb[i], yb[i], a[i], n_t[i], n_0[i], eta[i], eta_b[i])
        val_dev = max(val_dev, abs(float(got[0]) - ref))
        regime_bad += int(reg[0] != ref_reg)
    res.add("DDRM scalar reference (1e4 cases)", val_dev, 1e-12)
    res.add("DDRM regime classification mismatches", regime_bad, 0)

    op = make_gaussian_blur((1, 8, 8), 3, 1.0)
    x0 = rng.standard_normal(op.in_shape)
    y = op.apply(x0)
    corr = Correction(CorrectionConfig("ddrm", sigma_y=0.0, eta_b=1.0), op, y, build_linear_schedule())
    d = corr(rng.standard_normal(op.in_shape), 500)
    res.add("DDRM noiseless consistency K D = y", np.max(np.abs(op.apply(d) - y)), 1e-8)

    u, v, w, z = (rng.standard_normal(5) for _ in range(4))
    b = 0.3
    lin = lag_filter(2 * u + 3 * w, 2 * v + 3 * z, b) - (2 * lag_filter(u, v, b) + 3 * lag_filter(w, z, b))
    res.add("lag filter superposition", np.max(np.abs(lin)), 1e-12)
    return res


def _gmm_problem(schedule, shape=(1, 16, 16), seed=0):
    rng = np.random.default_rng(seed)
    basis = make_identity(shape)
    c = rng.uniform(0.01, 0.2, shape)
    prior = GmmPrior([0.4, 0.6], [np.full(shape, 0.3), np.full(shape, 0.7)], c, basis)
    return GmmDenoiser(prior, schedule)


def suite_samplers(schedule: Schedule) -> SuiteResult:
    res = SuiteResult("samplers")
    rng = np.random.default_rng(9)
    shape = (1, 16, 16)
    den = _gmm_problem(schedule, shape)
    plan = respace(schedule, 100)
    ident = Correction(CorrectionConfig("identity"))

    # DDIM step and 1M step from the same states along a DDIM trajectory
    x = rng.standard_normal(shape)
    worst = 0.0
    for i in range(len(plan)):
        c = step_coeffs(plan, i)
        eps = den.predict_eps(x, c.t)
        xhat = (x - c.sigma * eps) / c.alpha
        x_ddim = ddim_update(xhat, eps, c)
        worst = max(worst, float(np.max(np.abs(x_ddim - one_m_update(x, xhat, c)))))
        x = x_ddim
    res.add("DDIM = 1M over 100 steps", worst, 1e-10)

    # triple-form agreement on random inputs
    worst = 0.0
    for k in range(1000):
        i = int(rng.integers(1, len(plan)))
        c = step_coeffs(plan, i)
        dims = (1,) if k % 2 == 0 else shape
        x, d, dp, eps = (rng.standard_normal(dims) for _ in range(4))
        xhat = (x - c.sigma * eps) / c.alpha
        gamma = float(rng.uniform(-3, 1))
        beta = beta_from_gamma(gamma, c)
        fc = lamp_lagged(d, dp, eps, c, beta)
        fa = lamp_from_two_m(x, d, dp, xhat, c, gamma)
        fb = lamp_from_ps(d, dp, eps, c, gamma)
        worst = max(worst, float(np.max(np.abs(fa - fc))), float(np.max(np.abs(fb - fc))))
    res.add("LAMP triple-form agreement (1000 cases)", worst, 1e-12)

    # PS decomposition and NFE accounting inside full runs
    op = make_gaussian_blur(shape, 5, 1.5)
    y = degrade(np.full(shape, 0.5), op, 0.05, 1)
    ps_worst, nfe_bad = 0.0, 0
    runs = {}
    for kind in ("identity", "diffpir", "ddrm"):
        corr = Correction(CorrectionConfig(kind, sigma_y=0.05), op, y, schedule)
        for method, gamma in (("ps", None), ("one_m", None), ("two_m", None), ("lamp", -0.15), ("lamp", 0.0)):
            counting = CountingDenoiser(den)
            p = respace(schedule, 20)
            traj = run_trajectory(SamplerConfig(method, gamma, n_warm=3), p, counting, corr, seed=4, shape=shape)
            ps_worst = max(ps_worst, traj.max_ps_decomposition_dev)
            nfe_bad += int(counting.calls != len(p) or traj.nfe != len(p))
            runs[(kind, method, gamma)] = traj.x0
    res.add("PS decomposition at every step", ps_worst, 1e-12)
    res.add("NFE = plan length (all methods)", nfe_bad, 0)
    collapse = sum(int(not np.array_equal(runs[(k, "lamp", 0.0)], runs[(k, "ps", None)])) for k in ("identity", "diffpir", "ddrm"))
    res.add("gamma = 0 LAMP bit-identical to PS", collapse, 0)

    # warm-up prefix identical for any gamma
    corr = Correction(CorrectionConfig("ddrm", sigma_y=0.05), op, y, schedule)
    p = respace(schedule, 20)
    bad = 0
    for gamma in (-3.0, -0.15, 0.5):
        s_ps = s_lamp = SamplerState(rng.standard_normal(shape))
        for i in range(4):
            s_ps, _ = step_ps(s_ps, p, den, corr)
            s_lamp, _ = step_lamp(s_lamp, p, den, corr, gamma=gamma, n_warm=3)
            bad += int(not np.array_equal(s_ps.x, s_lamp.x))
    res.add("warm-up prefix bit-identical", bad, 0)
    return res


def suite_risk(n_trials: int = 100_000) -> SuiteResult:
    res = SuiteResult("risk_lab")
    worst = 0.0
    seed = 100
    for beta in (0.03, 0.1, 0.5, 0.9):
        for rho in (0.0, 0.5, 0.9):
            model = ErrorModel(np.ones(4), rho)
            est = empirical_risks(model, beta, n_trials, seed)
            seed += 1
            tr = float(np.sum(model.sigma_diag))
            z = abs(est.risk_lamp / tr - variance_factor(beta, rho)) / (est.se_lamp / tr)
            worst = max(worst, z)
    res.add("variance factor MC (z-score)", worst, 3.0)

    rng = np.random.default_rng(77)
    worst = 0.0
    for k in range(6):
        model = ErrorModel(rng.uniform(0.5, 2, 3), float(rng.uniform(0, 0.95)), rng.normal(0, 0.5, 3))
        beta = float(rng.uniform(0.05, 0.95))
        est = empirical_risks(model, beta, n_trials, 500 + k)
        cf = closed_form_risks(model, beta)
        worst = max(worst, abs(est.risk_ps - cf.risk_ps) / est.se_ps, abs(est.risk_lamp - cf.risk_lamp) / est.se_lamp)
    res.add("risks MC vs closed form (z-score)", worst, 3.0)

    mismatch = 0
    for _ in range(1000):
        if rng.random() < 0.5:
            model = ErrorModel(rng.uniform(0.1, 3, 4), float(rng.uniform(0, 0.99)), rng.normal(0, 1, 4))
        else:
            s1 = rng.uniform(0.1, 3, 4)
            s2 = rng.uniform(0.1, 3, 4)
            cross = rng.uniform(-1, 1, 4) * np.sqrt(s1 * s2)
            model = ErrorModel(s1, 0.0, rng.normal(0, 1, 4), s2, cross)
        beta = float(rng.uniform(0.01, 0.99))
        cf = closed_form_risks(model, beta)
        holds = improvement_condition(model, beta)[0]
        mismatch += int(holds != (cf.risk_ps - cf.risk_lamp > 0))
    res.add("condition sign = risk difference sign (1000 models)", mismatch, 0)

    worst = 0.0
    for _ in range(100):
        model = ErrorModel(rng.uniform(0.1, 3, 5), float(rng.uniform(0, 0.99)), rng.normal(0, 1, 5))
        gen = ErrorModel.generalize(model)
        beta = float(rng.uniform(-0.5, 1.5))
        worst = max(worst, abs(closed_form_risks(model, beta).risk_lamp - closed_form_risks(gen, beta).risk_lamp))
    res.add("generalized risk reduces to equal-variance", worst, 1e-12)
    return res


def suite_imaging() -> SuiteResult:
    res = SuiteResult("imaging")
    rng = np.random.default_rng(21)
    a, b = rng.random((1, 16, 16)), rng.random((1, 16, 16))
    res.add("psnr symmetric", abs(psnr(a, b) - psnr(b, a)), 1e-12)
    res.add("ssim symmetric", abs(ssim(a, b) - ssim(b, a)), 1e-12)
    res.add("ssim(x, x) = 1", abs(ssim(a, a) - 1), 1e-12)
    ident = make_identity(a.shape)
    res.add("degrade identity noiseless", np.max(np.abs(degrade(a, ident, 0.0, 0) - a)), 0.0)

    op = make_gaussian_blur((1, 8, 8), 3, 1.0)
    c = 0.01 + 0.3 * op.spectrum
    prior = GaussianPrior(rng.random(op.in_shape), c, op)
    y = op.apply(rng.random(op.in_shape)) + 0.05 * rng.standard_normal(op.out_shape)
    pm = exact_posterior_mean(prior, op, y, 0.05)
    M = dense_oracle(op)
    V = np.stack([op.from_spectral(op.to_spectral(e.reshape(op.in_shape))).ravel() for e in np.eye(64)], axis=1)
    # covariance C = V diag(c) V^H built column by column
    C = np.stack([op.from_spectral(c * op.to_spectral(e.reshape(op.in_shape))).ravel() for e in np.eye(64)], axis=1)
    Ci = np.linalg.inv(C)
    grad = M.T @ (M @ pm.ravel() - y.ravel()) / 0.05**2 + Ci @ (pm.ravel() - prior.mean.ravel())
    res.add("posterior mean stationarity", np.linalg.norm(grad) / np.linalg.norm(Ci @ prior.mean.ravel()), 1e-8)
    dense = prior.mean.ravel() + C @ M.T @ np.linalg.solve(M @ C @ M.T + 0.05**2 * np.eye(64), y.ravel() - M @ prior.mean.ravel())
    res.add("posterior mean vs dense regression", np.max(np.abs(pm.ravel() - dense)), 1e-10)
    del V
    return res


def suite_end_to_end(schedule: Schedule) -> SuiteResult:
    res = SuiteResult("end_to_end")
    shape = (1, 16, 16)
    op = make_gaussian_blur(shape, 9, 3.0)
    prior = GaussianPrior(0.5, 0.005 + 0.1 * op.spectrum, op)
    den = GaussianDenoiser(prior, schedule)
    ratios, ddrm = [], []
    for seed in range(3):
        x0 = prior.sample(np.random.default_rng(1000 + seed))
        y = degrade(x0, op, 0.05, 2000 + seed)
        oracle = exact_posterior_mean(prior, op, y, 0.05)
        diffpir = Correction(CorrectionConfig("diffpir", sigma_y=0.05, mu=7.0), op, y, schedule)
        m100 = mse(run_trajectory(SamplerConfig("ps"), respace(schedule, 100), den, diffpir, seed=seed, shape=shape).x0, oracle)
        m1000 = mse(run_trajectory(SamplerConfig("ps"), respace(schedule, 1000), den, diffpir, seed=seed, shape=shape).x0, oracle)
        ratios.append(m100 / m1000)
        corr = Correction(CorrectionConfig("ddrm", sigma_y=0.05, eta=0.85, eta_b=1.0), op, y, schedule)
        plan = respace(schedule, 20)
        base = mse(run_trajectory(SamplerConfig("ps"), plan, den, corr, seed=seed, shape=shape).x0, oracle)
        lamp = mse(run_trajectory(SamplerConfig("lamp", -0.15, n_warm=3), plan, den, corr, seed=seed, shape=shape).x0, oracle)
        ddrm.append(lamp / base)
    res.add("DiffPIR MSE(100 NFE) / MSE(1000 NFE)", max(ratios), 10.0)
    res.add("DDRM-LAMP / DDRM-PS MSE to oracle", float(np.mean(ddrm)), 1.01)
    return res


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "schedule": suite_schedule,
    "linops": suite_linops,
    "priors": suite_priors,
    "corrections": suite_corrections,
    "samplers": suite_samplers,
    "risk_lab": suite_risk,
    "imaging": suite_imaging,
    "end_to_end": suite_end_to_end,
}
_NEEDS_SCHEDULE = {"schedule", "priors", "samplers", "end_to_end"}


def verify(schedule: Schedule | None = None, suites=None, n_trials: int = 100_000) -> list[SuiteResult]:
    """Run the named suites (all by default). Exceptions become failed suites."""
    schedule = schedule if schedule is not None else build_linear_schedule()
    out = []
    for name in suites or SUITES:
        fn = SUITES[name]
        start = time.perf_counter()
        try:
            if name in _NEEDS_SCHEDULE:
                result = fn(schedule)
            elif name == "risk_lab":
                result = fn(n_trials)
            else:
                result = fn()
        except Exception as exc:  # reported, not raised
            result = SuiteResult(name, error=f"{type(exc).__name__}: {exc}")
        result.seconds = time.perf_counter() - start
        out.append(result)
    return out


def format_report(results: list[SuiteResult], verbose: bool = False) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"[{status}] {r.name:<12} max deviation {r.max_deviation:.3e}  ({r.seconds:.2f}s)")
        if r.error:
            lines.append(f"    error: {r.error}")
        for c in r.checks:
            if verbose or not c.passed:
                mark = "ok  " if c.passed else "FAIL"
                lines.append(f"    {mark} {c.name}: {c.deviation:.3e} (tol {c.tol:g})")
    return "\n".join(lines)
