"""Command-line front end.

Subcommands: ``run``, ``sweep``, ``verify``, ``risk``, ``op-check``.
Exit codes: 0 ok, 1 verification failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULT_CONFIG, ExperimentConfig, load_config
from .errors import ConfigError, NonFiniteError, SingularCorrectionError
from .imaging import write_tensor
from .linops import dense_adjoint_oracle, dense_oracle, operator_from_config

log = logging.getLogger("lamp")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig.from_dict({})
    if getattr(args, "seed", None) is not None:
        d = cfg.snapshot()
        d["seed"] = args.seed
        d["output"] = str(cfg.output)
        cfg = ExperimentConfig.from_dict(d, cfg.base_dir)
    return cfg


def cmd_run(args) -> int:
    from .experiment import run

    cfg = _config(args)
    res = run(cfg, args.out)
    print(json.dumps({k: v for k, v in res.metrics.items()}, sort_keys=True, default=str))
    log.info("artifacts written to %s", res.out_dir)
    return EXIT_OK


def _parse_values(text: str, param: str):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(int(tok) if param in ("nfe", "n_warm") else float(tok))
        except ValueError as exc:
            raise ConfigError(f"cannot parse {tok!r}", "--values") from exc
    if not out:
        raise ConfigError("no values given", "--values")
    return out


def cmd_sweep(args) -> int:
    from .experiment import sweep

    cfg = _config(args)
    text = sweep(cfg, args.param, _parse_values(args.values, args.param), args.out)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import format_report, verify

    results = verify(n_trials=args.trials)
    print(format_report(results, verbose=args.verbose))
    ok = all(r.passed for r in results)
    print("verify: all suites passed" if ok else "verify: FAILED " + ", ".join(r.name for r in results if not r.passed))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_risk(args) -> int:
    from .risk_lab import SWEEP_COLUMNS, ErrorModel, sweep_beta

    spec = {"dim": 8, "sigma2": 1.0, "rho": 0.5, "drift": 0.1, "betas": [0.0, 0.03, 0.1, 0.25, 0.5, 0.75, 1.0]}
    if args.config:
        spec.update(json.loads(Path(args.config).read_text()))
    unknown = set(spec) - {"dim", "sigma2", "rho", "drift", "betas", "sigma2_next", "cross"}
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", "risk")
    dim = int(spec["dim"])
    sigma = np.full(dim, float(spec["sigma2"]))
    r = np.full(dim, float(spec["drift"]) / np.sqrt(dim))
    if "sigma2_next" in spec or "cross" in spec:
        model = ErrorModel(sigma, 0.0, r, np.full(dim, float(spec["sigma2_next"])), np.full(dim, float(spec["cross"])))
    else:
        model = ErrorModel(sigma, float(spec["rho"]), r)
    seed = 0 if args.seed is None else args.seed
    rows, best = sweep_beta(model, spec["betas"], args.trials, seed)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    text = buf.getvalue()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "risk.csv").write_text(text)
    sys.stdout.write(text)
    log.info("closed-form argmin beta on grid: %s", best)
    return EXIT_OK


def cmd_op_check(args) -> int:
    if args.config:
        spec = json.loads(Path(args.config).read_text())
        spec = spec.get("operator", spec)
    else:
        spec = DEFAULT_CONFIG["operator"]
    shape = (1, args.size, args.size)
    op = operator_from_config(spec, shape)
    M = dense_oracle(op)
    Mt = dense_adjoint_oracle(op)
    sv = np.linalg.svd(M, compute_uv=False)
    spec_sorted = np.sort(op.spectrum.ravel())[::-1][: sv.size]
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    x = rng.standard_normal(op.in_shape)
    y = rng.standard_normal(op.out_shape)
    ref_pinv = np.linalg.pinv(M, rcond=1e-10) @ y.ravel()
    checks = {
        "spectrum_vs_svd": (float(np.max(np.abs(sv - spec_sorted))), 1e-8),
        "apply_vs_dense": (float(np.max(np.abs(M @ x.ravel() - op.apply(x).ravel()))), 1e-10),
        "adjoint_vs_transpose": (float(np.max(np.abs(Mt - M.T))), 1e-12),
        # relative: ill-conditioned blurs give large pseudo-inverse outputs
        "pinv_vs_dense": (float(np.max(np.abs(ref_pinv - op.pinv_apply(y).ravel())) / max(1.0, np.max(np.abs(ref_pinv)))), 1e-10),
        "round_trip": (float(np.max(np.abs(op.from_spectral(op.to_spectral(x)) - x))), 1e-10),
    }
    ok = True
    for name, (dev, tol) in checks.items():
        passed = dev <= tol
        ok &= passed
        print(f"{'ok  ' if passed else 'FAIL'} {op.kind} {name}: {dev:.3e} (tol {tol:g})")
    if args.out and hasattr(op, "kernel"):
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_tensor(out / "kernel.ltnsr", op.kernel)
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lamp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lamp {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, trials=False):
        sp.add_argument("--config", type=str, default=None, help="JSON config path")
        sp.add_argument("--out", type=str, default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="master seed (u64)")
        if trials:
            sp.add_argument("--trials", type=int, default=100_000)

    sp = sub.add_parser("run", help="reconstruct one configured problem")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="one run per parameter value")
    common(sp)
    sp.add_argument("--param", required=True)
    sp.add_argument("--values", required=True, help="comma-separated list")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify", help="run the identity/oracle audit")
    sp.add_argument("--trials", type=int, default=100_000)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("risk", help="one-step risk table over a beta grid")
    common(sp, trials=True)
    sp.set_defaults(func=cmd_risk)

    sp = sub.add_parser("op-check", help="audit an operator against its dense matrix")
    common(sp)
    sp.add_argument("--size", type=int, default=16, help="square image side for the dense check")
    sp.set_defaults(func=cmd_op_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteError, SingularCorrectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
