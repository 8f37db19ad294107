"""Command line front end.

    sdepca <command> [--config FILE] [--out DIR] [--seed N] [--paths N] [--threads N]

Commands: simulate, certify, threshold, convergence, lyapunov, chain. Every
run writes its CSV reports and a ``manifest.json`` into the output
directory. A failing certificate is a successful run (exit 0); errors map
to exit codes 2 (validation), 3 (divergence), 4 (insufficient data),
5 (no certificate), 6 (unrepresentable n_hat), 7 (non-monotone condition).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field

import numpy as np
import scipy

from . import __version__, _kernels
from . import certificates as cert
from .config import COMMANDS, ExperimentConfig, config_hash, dumps, load
from .errors import DivergedError, NoCertificateError, SdepcaError
from .integrators import (EM_SDEPCA, EXACT_GBM, STRONG_ERROR_COLUMNS, TRAJECTORY_COLUMNS,
                          em_sde_path, em_sdepca_path, gbm_exact_path, strong_error_study)
from .lyapunov import assumption_margin
from .moments import estimate_pth_moment
from .paths import IncrementPlan, generate_increments
from .report import emit_report, format_from_log

log = logging.getLogger("sdepca")

THRESHOLD_COLUMNS = ("kind", "p", "K", "delta", "M", "gamma", "tau", "threshold", "m", "method")
LYAPUNOV_COLUMNS = ("p", "K", "lambda", "decay_rate", "method", "n_samples", "worst_point")


@dataclass
class ReportBundle:
    """Files written by one run, keyed by report name."""

    directory: str
    files: dict = field(default_factory=dict)
    manifest: str = ""
    error: SdepcaError | None = None


def _simulate(cfg, spec, out, files):
    x0 = np.asarray(cfg.x0, dtype=float)
    diverged = None
    for scheme in cfg.mc.schemes:
        series = estimate_pth_moment(spec, scheme, x0, cfg.grid, cfg.mc.p, cfg.mc.n_paths,
                                     cfg.mc.seed, threads=cfg.mc.threads)
        name = f"moments_{scheme}"
        files[name] = series.to_csv(os.path.join(out, name + ".csv"))
        if series.unstable and diverged is None:
            diverged = DivergedError(series.first_divergence, message=(
                f"{scheme}: {series.diverged_paths} path(s) diverged, first at step "
                f"{series.first_divergence}"))
    if cfg.mc.dump_paths:
        rows = []
        for scheme in cfg.mc.schemes:
            for pid in range(cfg.mc.dump_paths):
                plan = IncrementPlan(cfg.mc.seed, pid, cfg.grid.n_steps, cfg.grid.h, spec.m_bm)
                dw = generate_increments(plan)
                try:
                    if scheme == EXACT_GBM:
                        a, b, c, d = spec.scalar_coefficients()
                        tr = gbm_exact_path(a + c, b + d, x0, cfg.grid, dw)
                    elif scheme == EM_SDEPCA:
                        tr = em_sdepca_path(spec, x0, cfg.grid, dw)
                    else:
                        tr = em_sde_path(spec, x0, cfg.grid, dw)
                except DivergedError:
                    continue
                rows += [(pid, *r[1:]) for r in tr.rows()]
            files[f"trajectories_{scheme}"] = emit_report(
                rows, TRAJECTORY_COLUMNS, os.path.join(out, f"trajectories_{scheme}.csv"))
            rows = []
    return diverged


def _certify(cfg, spec, out, files):
    c = cfg.certificate
    pr = cert.CertificateParams.make(cfg.mc.p, spec.K, M=c.M, gamma=c.gamma, tau=c.tau, h=c.h,
                                     delta=c.delta)
    if c.optimise_delta and c.kind in cert.TAU_KINDS:
        res = cert.best_delta(c.kind, pr)
    else:
        res = cert.check_certificate(c.kind, pr)
    files["certificates"] = emit_report([res.row()], cert.CERTIFICATE_COLUMNS,
                                        os.path.join(out, "certificates.csv"))


def _threshold(cfg, spec, out, files):
    c, t = cfg.certificate, cfg.threshold
    rows = []
    for kind in t.kinds:
        for dlt in t.deltas:
            for g in t.gammas:
                pr = cert.CertificateParams.make(cfg.mc.p, spec.K, M=c.M, gamma=g, tau=c.tau,
                                                 h=c.h, delta=dlt, max_n_hat=None)
                th = cert.solve_threshold(kind, pr)
                m = (th.m if th.m is not None else
                     (format_from_log(th.log_m) if th.log_m is not None else ""))
                rows.append((kind, cfg.mc.p, spec.K, dlt if kind in cert.TAU_KINDS else "",
                             c.M, g, c.tau if kind == cert.Q4 else "",
                             format_from_log(th.log_value), m, th.method))
    files["thresholds"] = emit_report(rows, THRESHOLD_COLUMNS, os.path.join(out, "thresholds.csv"))


def _convergence(cfg, spec, out, files):
    cv = cfg.convergence
    table = strong_error_study(cv.alpha, cv.beta, cfg.x0[0], cv.T, cv.levels, cfg.mc.p,
                               cfg.mc.n_paths, cfg.mc.seed)
    files["convergence"] = emit_report(table.rows(), STRONG_ERROR_COLUMNS,
                                       os.path.join(out, "convergence.csv"))


def _lyapunov_report(cfg, spec):
    ly = cfg.lyapunov
    return assumption_margin(spec, cfg.mc.p, resolution=ly.resolution or None,
                             n_random=ly.n_random, seed=ly.seed)


def _lyapunov(cfg, spec, out, files):
    rep = _lyapunov_report(cfg, spec)
    point = json.dumps([float(v) for v in rep.worst_point])
    files["lyapunov"] = emit_report(
        [(rep.p, rep.K, rep.lam, rep.decay_rate, rep.method, rep.n_samples, point)],
        LYAPUNOV_COLUMNS, os.path.join(out, "lyapunov.csv"))
    files["certificates"] = emit_report([rep.row()], cert.CERTIFICATE_COLUMNS,
                                        os.path.join(out, "certificates.csv"))


def _chain(cfg, spec, out, files):
    c = cfg.certificate
    if c.pair_source == "lyapunov":
        rep = _lyapunov_report(cfg, spec)
        if not rep.holds:
            raise NoCertificateError(f"Lyapunov margin {rep.lam} is not positive")
        M, gamma, start = 1.0, rep.decay_rate, "SDE"
    else:
        M, gamma, start = c.M, c.gamma, c.start
    res = cert.chain_certificates(cfg.mc.p, spec.K, M, gamma, start=start, delta=c.delta)
    files["chain"] = emit_report(res.rows(), cert.CERTIFICATE_COLUMNS,
                                 os.path.join(out, "chain.csv"))
    if not res.passed:
        raise NoCertificateError("the cycle did not close at the selected tau and h")


_DISPATCH = {"simulate": _simulate, "certify": _certify, "threshold": _threshold,
             "convergence": _convergence, "lyapunov": _lyapunov, "chain": _chain}


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(cfg: ExperimentConfig, bundle: ReportBundle):
    manifest = {
        "command": cfg.command,
        "seed": cfg.mc.seed,
        "config_sha256": config_hash(cfg),
        "config": dumps(cfg),
        "versions": {"sdepca": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "backend": _kernels.BACKEND,
        "threads": cfg.mc.threads,
        "files": {k: {"path": os.path.basename(v), "sha256": _sha256(v)}
                  for k, v in sorted(bundle.files.items())},
        "status": "ok" if bundle.error is None else type(bundle.error).__name__,
    }
    path = os.path.join(bundle.directory, "manifest.json")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    bundle.manifest = path
    return path


def run_experiment(cfg: ExperimentConfig) -> ReportBundle:
    """Run ``cfg.command`` and write its reports and manifest.

    A divergence during ``simulate`` still writes the (NaN-marked) series
    and the manifest before :class:`DivergedError` is raised.
    """
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    spec = cfg.spec()
    bundle = ReportBundle(out)
    log.info("running %s (backend %s)", cfg.command, _kernels.BACKEND)
    err = _DISPATCH[cfg.command](cfg, spec, out, bundle.files)
    bundle.error = err
    write_manifest(cfg, bundle)
    if err is not None:
        raise err
    return bundle


def build_parser():
    ap = argparse.ArgumentParser(prog="sdepca", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="experiment config file (INI)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="64-bit seed")
    ap.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    ap.add_argument("--threads", type=int, help="worker threads")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load(args.config) if args.config else ExperimentConfig()
        cfg = cfg.with_overrides(command=args.command, out=args.out, seed=args.seed,
                                 paths=args.paths, threads=args.threads)
        bundle = run_experiment(cfg)
    except SdepcaError as exc:
        print(f"sdepca: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sdepca: I/O error: {exc}", file=sys.stderr)
        return 1
    for name, path in sorted(bundle.files.items()):
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
