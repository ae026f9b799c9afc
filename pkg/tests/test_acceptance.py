"""Acceptance criteria 1-12.

Each test computes its own reference quantities (explicit formulas, dense
linear algebra, scalar loops) and records one PASS/FAIL line, printed in the
pytest terminal summary. Run directly with ``python tests/test_acceptance.py``
for the same lines without pytest.
"""

from __future__ import annotations

import itertools
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from lamp.config import ExperimentConfig
from lamp.corrections import (
    REGIME_NULL,
    REGIME_PINV,
    REGIME_RESIDUAL,
    Correction,
    CorrectionConfig,
    correct_diffpir,
    ddrm_components,
)
from lamp.experiment import run
from lamp.imaging import degrade, exact_posterior_mean, mse
from lamp.linops import (
    dense_adjoint_oracle,
    dense_oracle,
    make_block_sr,
    make_dense,
    make_gaussian_blur,
    make_identity,
    make_motion_blur,
)
from lamp.priors import CountingDenoiser, GaussianDenoiser, GaussianPrior, GmmDenoiser, GmmPrior
from lamp.risk_lab import ErrorModel, closed_form_risks, empirical_risks, improvement_condition
from lamp.samplers import METHODS, SamplerConfig, lamp_from_ps, lamp_from_two_m, lamp_lagged, run_trajectory
from lamp.schedule import build_linear_schedule, respace, step_coeffs

pytestmark = pytest.mark.acceptance

SCHED = build_linear_schedule()
IMG = (1, 16, 16)


def report(num: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _gmm_denoiser(shape=IMG, seed=0):
    r = np.random.default_rng(seed)
    c = r.uniform(0.01, 0.2, shape)
    prior = GmmPrior([0.35, 0.65], [np.full(shape, 0.25), np.full(shape, 0.75)], c, make_identity(shape))
    return GmmDenoiser(prior, SCHED)


def _raw_step(plan, i):
    """Grid values for step i straight from the plan arrays."""
    a, s, lam = float(plan.alphas[i]), float(plan.sigmas[i]), float(plan.lambdas[i])
    if i + 1 < len(plan):
        a1, s1, h = float(plan.alphas[i + 1]), float(plan.sigmas[i + 1]), float(plan.lambdas[i + 1]) - lam
        e = math.exp(-h)
    else:
        a1, s1, h, e = 1.0, 0.0, math.inf, 0.0
    h_prev = lam - float(plan.lambdas[i - 1]) if i > 0 else None
    A1 = 1.0 if math.isinf(h) else 1.0 - (1.0 - e) / h
    return a, s, a1, s1, h, e, h_prev, A1


# ---------------------------------------------------------------------------


def test_criterion_01_ddim_equals_1m():
    start = time.perf_counter()
    plan = respace(SCHED, 100)
    den = _gmm_denoiser()
    x = np.random.default_rng(1).standard_normal(IMG)
    worst = 0.0
    for i in range(len(plan)):
        a, s, a1, s1, h, e, _, _ = _raw_step(plan, i)
        eps = den.predict_eps(x, int(plan.timesteps[i]))
        xhat = (x - s * eps) / a
        ddim = a1 * xhat + s1 * eps
        one_m = (s1 / s) * x + a1 * (1.0 - e) * xhat
        worst = max(worst, float(np.max(np.abs(ddim - one_m))))
        x = ddim
    dt = time.perf_counter() - start
    report(1, "DDIM/1M equivalence", worst <= 1e-10 and dt < 1.0, f"max dev {worst:.2e} <= 1e-10, {dt:.2f}s < 1s")


class _Tap:
    """Records (x, eps, xhat, D) at every evaluation of a run."""

    def __init__(self, den, corr):
        self.den, self.corr, self.log = den, corr, []
        self.schedule = SCHED

    def predict_eps(self, x, t):
        eps = self.den.predict_eps(x, t)
        self.log.append({"x": x, "eps": eps, "t": t})
        return eps

    def __call__(self, xhat, t):
        d = self.corr(xhat, t)
        self.log[-1].update(xhat=xhat, d=d)
        return d


def test_criterion_02_ps_decomposition():
    from lamp.verify import verify

    op = make_gaussian_blur(IMG, 5, 1.5)
    y = degrade(np.full(IMG, 0.5), op, 0.05, 3)
    den = _gmm_denoiser()
    plan = respace(SCHED, 50)
    worst, steps = 0.0, 0
    for kind in ("identity", "diffpir", "ddrm"):
        tap = _Tap(den, Correction(CorrectionConfig(kind, sigma_y=0.05), op, y, SCHED))
        traj = run_trajectory(SamplerConfig("ps"), plan, tap, tap, seed=2, shape=IMG)
        xs = [e["x"] for e in tap.log] + [traj.x0]
        for i, ev in enumerate(tap.log):
            a, s, a1, s1, h, e, _, _ = _raw_step(plan, i)
            ps = a1 * ev["d"] + s1 * ev["eps"]
            split = (s1 / s) * ev["x"] + a1 * (1 - e) * ev["d"] + a1 * e * (ev["d"] - ev["xhat"])
            scale = max(1.0, float(np.max(np.abs(ev["x"]))))
            worst = max(worst, float(np.max(np.abs(ps - split))) / scale)
            worst = max(worst, float(np.max(np.abs(ps - xs[i + 1]))) / scale)
            steps += 1
    (suite,) = verify(SCHED, suites=["samplers"])
    inner = next(c for c in suite.checks if c.name.startswith("PS decomposition"))
    ok = worst <= 1e-12 and inner.passed
    report(2, "PS decomposition", ok, f"max dev {worst:.2e} over {steps} steps, verify() {inner.deviation:.2e} <= 1e-12")


def test_criterion_03_lamp_triple_form():
    plan = respace(SCHED, 100)
    r = np.random.default_rng(3)
    worst = 0.0
    for k in range(1000):
        i = int(r.integers(1, len(plan)))
        a, s, a1, s1, h, e, hp, A1 = _raw_step(plan, i)
        dims = (1,) if k % 2 == 0 else IMG
        x, d, dp, eps = (r.standard_normal(dims) for _ in range(4))
        xhat = (x - s * eps) / a
        gamma = float(r.uniform(-3, 1))
        beta = -gamma * A1 / hp
        temporal = a1 * A1 * gamma * (d - dp) / hp
        form_a = (s1 / s) * x + a1 * (1 - e) * d + temporal + a1 * e * (d - xhat)
        form_b = a1 * d + s1 * eps + temporal
        form_c = a1 * ((1 - beta) * d + beta * dp) + s1 * eps
        # the library's forms, on the library's coefficients
        c = step_coeffs(plan, i)
        lib = (lamp_from_two_m(x, d, dp, xhat, c, gamma), lamp_from_ps(d, dp, eps, c, gamma), lamp_lagged(d, dp, eps, c, beta))
        for f in (form_a, form_b, *lib):
            worst = max(worst, float(np.max(np.abs(f - form_c))))
    report(3, "LAMP triple-form agreement", worst <= 1e-12, f"max dev {worst:.2e} over 1000 cases")


def test_criterion_04_gamma_zero_collapse():
    op = make_gaussian_blur(IMG, 5, 1.5)
    y = degrade(np.full(IMG, 0.5), op, 0.05, 3)
    den = _gmm_denoiser()
    plan = respace(SCHED, 50)
    mismatches = 0
    for kind in ("identity", "diffpir", "ddrm"):
        corr = Correction(CorrectionConfig(kind, sigma_y=0.05), op, y, SCHED)
        ps_states = []
        ps = run_trajectory(SamplerConfig("ps"), plan, den, corr, seed=9, shape=IMG, callback=lambda st, _: ps_states.append(st.x))
        for n_warm in (0, 3):
            lamp0 = run_trajectory(SamplerConfig("lamp", 0.0, n_warm), plan, den, corr, seed=9, shape=IMG)
            mismatches += int(not np.array_equal(ps.x0, lamp0.x0))
        for gamma in (-3.0, -0.15, 0.7):
            n_warm = 5
            states = []
            run_trajectory(SamplerConfig("lamp", gamma, n_warm), plan, den, corr, seed=9, shape=IMG, callback=lambda st, _: states.append(st.x))
            # steps 0..n_warm are plain PS
            mismatches += sum(int(not np.array_equal(states[j], ps_states[j])) for j in range(n_warm + 1))
            mismatches += int(np.array_equal(states[n_warm + 1], ps_states[n_warm + 1]))
    report(4, "gamma=0 collapse and warm-up prefix", mismatches == 0, f"{mismatches} non-identical arrays")


def test_criterion_05_operator_oracles():
    shape = (1, 8, 8)
    ops = {
        "gaussian_blur": make_gaussian_blur(shape, 3, 1.0),
        "motion_blur": make_motion_blur(shape, 5, 0.5, seed=11),
        "block_sr_2": make_block_sr(shape, 2),
        "block_sr_4": make_block_sr(shape, 4),
    }
    r = np.random.default_rng(5)
    spec_dev = map_dev = 0.0
    exact = True
    for name, op in ops.items():
        M = dense_oracle(op)
        sv = np.linalg.svd(M, compute_uv=False)
        spec_dev = max(spec_dev, float(np.max(np.abs(np.sort(op.spectrum.ravel())[::-1][: sv.size] - sv))))
        x = r.standard_normal(op.in_shape)
        y = r.standard_normal(op.out_shape)
        map_dev = max(
            map_dev,
            float(np.max(np.abs(op.apply(x).ravel() - M @ x.ravel()))),
            float(np.max(np.abs(op.adjoint(y).ravel() - M.T @ y.ravel()))),
            float(np.max(np.abs(dense_adjoint_oracle(op) - M.T))),
            float(np.max(np.abs(op.pinv_apply(y).ravel() - np.linalg.pinv(M, rcond=1e-10) @ y.ravel()))),
        )
        if name.startswith("block_sr"):
            nz = op.spectrum[op.observed]
            exact &= bool(np.all(nz == 1.0 / op.factor)) and nz.size == op.out_dim
    ok = spec_dev <= 1e-8 and map_dev <= 1e-10 and exact
    report(5, "operator oracles", ok, f"spectrum {spec_dev:.2e} <= 1e-8, maps {map_dev:.2e} <= 1e-10, 1/r exact={exact}")


def test_criterion_06_diffpir_optimality():
    shape = (1, 8, 8)
    r = np.random.default_rng(6)
    ops = [
        make_gaussian_blur(shape, 3, 1.0),
        make_motion_blur(shape, 5, 0.5, seed=2),
        make_block_sr(shape, 2),
        make_block_sr(shape, 4),
        make_identity(shape),
        make_dense(shape, (1, 4, 8), r.standard_normal((32, 64))),
    ]
    resid = solve = 0.0
    for op in ops:
        M = dense_oracle(op)
        for mu in (0.1, 7.0):
            xhat = r.standard_normal(op.in_shape)
            y = r.standard_normal(op.out_shape)
            d = correct_diffpir(xhat, y, op, mu).ravel()
            g = M.T @ (M @ d - y.ravel()) + mu * (d - xhat.ravel())
            resid = max(resid, float(np.linalg.norm(g) / (np.linalg.norm(M.T @ y.ravel()) + mu * np.linalg.norm(xhat))))
            ref = np.linalg.solve(M.T @ M + mu * np.eye(M.shape[1]), M.T @ y.ravel() + mu * xhat.ravel())
            solve = max(solve, float(np.max(np.abs(d - ref))))
    ok = resid <= 1e-8 and solve <= 1e-8
    report(6, "DiffPIR proximal optimality", ok, f"rel residual {resid:.2e}, dense solve {solve:.2e} <= 1e-8, {len(ops)} kinds")


def test_criterion_07_ddrm_regimes():
    r = np.random.default_rng(7)
    n = 10_000
    a = np.where(r.random(n) < 0.15, 0.0, r.uniform(0, 3, n))
    n_t = r.uniform(0, 3, n)
    n_0 = r.uniform(1e-3, 0.5, n)
    eta, eta_b = r.random(n), r.random(n)
    xb, yb = r.standard_normal(n), r.standard_normal(n)
    val_dev, bad, counts = 0.0, 0, [0, 0, 0]
    for i in range(n):
        if a[i] == 0:
            ref, reg = xb[i], REGIME_NULL
        elif a[i] * n_t[i] > n_0[i]:
            ref, reg = eta_b[i] * yb[i] / a[i] + (1 - eta_b[i]) * xb[i], REGIME_PINV
        else:
            ref = xb[i] + n_t[i] * math.sqrt(1 - eta[i] ** 2) * (yb[i] - a[i] * xb[i]) / n_0[i]
            reg = REGIME_RESIDUAL
        got, got_reg = ddrm_components(xb[i : i + 1], yb[i : i + 1], a[i : i + 1], n_t[i], n_0[i], eta[i], eta_b[i])
        val_dev = max(val_dev, abs(float(got[0]) - ref))
        bad += int(got_reg[0] != reg)
        counts[reg] += 1
    ok = val_dev <= 1e-12 and bad == 0 and min(counts) > 0
    report(7, "DDRM regimes", ok, f"value dev {val_dev:.2e}, {bad} misclassified, regimes null/pinv/resid={counts}")


def test_criterion_08_variance_reduction():
    start = time.perf_counter()
    worst, seed = 0.0, 800
    for beta, rho in itertools.product((0.03, 0.1, 0.5, 0.9), (0.0, 0.5, 0.9)):
        model = ErrorModel(np.ones(4), rho)
        est = empirical_risks(model, beta, 100_000, seed)
        seed += 1
        factor = 1 - 2 * beta * (1 - beta) * (1 - rho)
        z = abs(est.risk_lamp / 4.0 - factor) / (est.se_lamp / 4.0)
        worst = max(worst, z)
    dt = time.perf_counter() - start
    report(8, "variance reduction factor", worst <= 3.0 and dt < 60, f"max |z| {worst:.2f} <= 3 SE, {dt:.1f}s < 60s")


def test_criterion_09_one_step_risks():
    r = np.random.default_rng(9)
    z_worst = 0.0
    for k in range(8):
        dim = 3
        s = r.uniform(0.3, 2.0, dim)
        rho = float(r.uniform(0, 0.95))
        drift = r.normal(0, 0.7, dim)
        beta = float(r.uniform(0.05, 0.95))
        est = empirical_risks(ErrorModel(s, rho, drift), beta, 100_000, 900 + k)
        ps_ref = s.sum()
        lamp_ref = (1 - beta) ** 2 * s.sum() + beta**2 * s.sum() + 2 * beta * (1 - beta) * rho * s.sum() + beta**2 * drift @ drift
        z_worst = max(z_worst, abs(est.risk_ps - ps_ref) / est.se_ps, abs(est.risk_lamp - lamp_ref) / est.se_lamp)

    mismatches = 0
    for _ in range(1000):
        s1 = r.uniform(0.1, 3, 4)
        drift = r.normal(0, 1, 4)
        beta = float(r.uniform(0.01, 0.99))
        if r.random() < 0.5:
            rho = float(r.uniform(0, 0.99))
            model = ErrorModel(s1, rho, drift)
            diff = s1.sum() - ((1 - beta) ** 2 * s1.sum() + beta**2 * s1.sum() + 2 * beta * (1 - beta) * rho * s1.sum() + beta**2 * drift @ drift)
        else:
            s2 = r.uniform(0.1, 3, 4)
            cross = r.uniform(-1, 1, 4) * np.sqrt(s1 * s2)
            model = ErrorModel(s1, 0.0, drift, s2, cross)
            diff = s1.sum() - ((1 - beta) ** 2 * s1.sum() + beta**2 * s2.sum() + 2 * beta * (1 - beta) * cross.sum() + beta**2 * drift @ drift)
        mismatches += int(improvement_condition(model, beta)[0] != (diff > 0))

    reduce_dev = 0.0
    for _ in range(200):
        model = ErrorModel(r.uniform(0.1, 3, 5), float(r.uniform(0, 0.99)), r.normal(0, 1, 5))
        gen = ErrorModel(model.sigma_diag, 0.0, model.r, model.sigma_diag.copy(), model.rho * model.sigma_diag)
        beta = float(r.uniform(0, 1))
        reduce_dev = max(reduce_dev, abs(closed_form_risks(gen, beta).risk_lamp - closed_form_risks(model, beta).risk_lamp))
    ok = z_worst <= 3.0 and mismatches == 0 and reduce_dev <= 1e-12
    report(9, "one-step risks", ok, f"max |z| {z_worst:.2f}, {mismatches}/1000 sign mismatches, reduction {reduce_dev:.1e}")


def test_criterion_10_end_to_end_oracle():
    start = time.perf_counter()
    op = make_gaussian_blur(IMG, 9, 3.0)
    prior = GaussianPrior(0.5, 0.005 + 0.1 * op.spectrum, op)
    den = GaussianDenoiser(prior, SCHED)
    conv, ddrm = [], []
    for seed in range(3):
        x0 = prior.sample(np.random.default_rng(100 + seed))
        y = degrade(x0, op, 0.05, 200 + seed)
        oracle = exact_posterior_mean(prior, op, y, 0.05)
        diffpir = Correction(CorrectionConfig("diffpir", sigma_y=0.05, mu=7.0), op, y, SCHED)
        m100 = mse(run_trajectory(SamplerConfig("ps"), respace(SCHED, 100), den, diffpir, seed=seed, shape=IMG).x0, oracle)
        m1000 = mse(run_trajectory(SamplerConfig("ps"), respace(SCHED, 1000), den, diffpir, seed=seed, shape=IMG).x0, oracle)
        conv.append(m100 / m1000)
        corr = Correction(CorrectionConfig("ddrm", sigma_y=0.05, eta=0.85, eta_b=1.0), op, y, SCHED)
        plan = respace(SCHED, 100)
        base = mse(run_trajectory(SamplerConfig("ps"), plan, den, corr, seed=seed, shape=IMG).x0, oracle)
        lamp = mse(run_trajectory(SamplerConfig("lamp", -0.15, n_warm=3), plan, den, corr, seed=seed, shape=IMG).x0, oracle)
        ddrm.append(lamp / base)
    dt = time.perf_counter() - start
    ok = max(conv) <= 10.0 and max(ddrm) <= 1.01 and dt < 30
    report(
        10,
        "end-to-end Gaussian oracle",
        ok,
        f"DiffPIR MSE100/MSE1000 max {max(conv):.3f} <= 10, DDRM LAMP/PS max {max(ddrm):.4f} <= 1.01, {dt:.1f}s < 30s",
    )


def test_criterion_11_nfe_accounting():
    op = make_block_sr(IMG, 2)
    y = degrade(np.full(IMG, 0.5), op, 0.05, 1)
    den = _gmm_denoiser()
    bad, runs = 0, 0
    for method, kind, nfe in itertools.product(METHODS, ("identity", "diffpir", "ddrm"), (2, 20, 100)):
        counting = CountingDenoiser(den)
        cfg = SamplerConfig(method, n_warm=min(3, nfe - 1))
        traj = run_trajectory(cfg, respace(SCHED, nfe), counting, Correction(CorrectionConfig(kind), op, y, SCHED), seed=0, shape=IMG)
        bad += int(counting.calls != nfe or traj.nfe != nfe)
        runs += 1
    report(11, "NFE accounting", bad == 0, f"{bad} mismatches over {runs} runs")


CONFIGS = [
    {"nfe": 20},
    {"nfe": 20, "correction": {"kind": "ddrm"}, "sampler": {"method": "lamp", "gamma": -0.15, "n_warm": 3}},
    {"nfe": 15, "prior": {"kind": "gmm"}, "sampler": {"method": "two_m"}, "seed": 2**63 + 5},
    {"nfe": 10, "shape": [3, 16, 16], "operator": {"kind": "motion_blur", "kernel_size": 7, "intensity": 0.6, "seed": 4}},
    {"nfe": 10, "operator": {"kind": "block_sr", "factor": 4}, "sampler": {"method": "lamp", "beta_mode": "constant", "beta": 0.1}},
]


def test_criterion_12_determinism(tmp_path):
    differing = []
    for k, conf in enumerate(CONFIGS):
        cfg = ExperimentConfig.from_dict(conf)
        a = run(cfg, tmp_path / f"{k}a")
        b = run(ExperimentConfig.from_dict(conf), tmp_path / f"{k}b")
        snap = tmp_path / f"{k}a" / "config.json"
        c = run(ExperimentConfig.from_dict(json.loads(snap.read_text())), tmp_path / f"{k}c")
        for f in sorted(p.name for p in a.out_dir.iterdir()):
            ref = (a.out_dir / f).read_bytes()
            if ref != (b.out_dir / f).read_bytes() or ref != (c.out_dir / f).read_bytes():
                differing.append(f"{k}/{f}")
    report(12, "determinism", not differing, f"{len(CONFIGS)} configs x 3 reruns, differing files: {differing or 'none'}")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
