"""Command-line entry point: ``hidden-ou <subcommand> [--config FILE] [--set sec.key=value]``.

Outputs go to ``--out``, else ``$HIDDEN_OU_OUT_DIR``, else the current
directory, under ``{subcommand}-{seed}.{csv|json}`` where ``seed`` is
``mc.master_seed`` for ``mc`` and ``sim.seed`` otherwise.

Exit status: 0 success, 1 invalid configuration or input, 2 failed checks.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError

OUT_ENV = "HIDDEN_OU_OUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_CHECKS = 0, 1, 2


SECTIONS = {
    "simulate": ["model", "sim"],
    "filter": ["model", "spec", "sim", "input", "filter"],
    "prelim": ["model", "spec", "sim", "input"],
    "onestep": ["model", "spec", "sim", "input", "estimator"],
    "twostep": ["model", "spec", "sim", "input", "estimator"],
    "adaptive": ["model", "spec", "sim", "input", "estimator"],
    "mle-grid": ["model", "spec", "sim", "input", "estimator"],
    "oracle": ["model", "oracle"],
    "mc": ["model", "spec", "sim", "estimator", "mc", "checks"],
}
HELP = {
    "simulate": "simulate one path and write t,X,Y",
    "filter": "run the filter and its derivatives at a fixed parameter",
    "prelim": "preliminary moment estimator from the learning segment",
    "onestep": "one-step MLE-process (vector update for FB and FA)",
    "twostep": "two-step MLE-process (delta in (1/3, 1/2])",
    "adaptive": "recurrent estimator coupled with the adaptive filter",
    "mle-grid": "log-likelihood on a parameter grid and its maximizer",
    "oracle": "closed forms against independent numerical references",
    "mc": "Monte Carlo experiment with named checks",
}


def _path(cfg, params):
    from .simulate import SamplePath, simulate

    src = cfg["input"]["path"] if "input" in cfg else None
    sim = cfgmod.build_sim(cfg)
    if src:
        try:
            return SamplePath.from_csv(src, params=params, seed=sim.seed)
        except (OSError, ValueError) as exc:
            raise ConfigError("input.path", str(exc)) from None
    return simulate(params, sim)


def _tau_grid(cfg):
    tg = cfg["estimator"]["tau_grid"]
    return None if tg is None else np.asarray(tg, dtype=float)


def _prelim(path, spec, params):
    from .prelim import prelim_1d, prelim_2d

    return prelim_1d(path, spec, params) if spec.dim == 1 else prelim_2d(path, spec, params)


def _run(sub: str, cfg: dict, out: Path) -> int:
    params = cfgmod.build_params(cfg)
    seed = int(cfg["mc"]["master_seed"]) if sub == "mc" else int(cfg["sim"]["seed"])
    stem = out / f"{sub}-{seed}"

    if sub == "simulate":
        from .simulate import simulate

        path = simulate(params, cfgmod.build_sim(cfg))
        path.to_csv(f"{stem}.csv")
        print(f"wrote {stem}.csv ({path.n_steps} steps)")
        return EXIT_OK

    if sub == "oracle":
        from .oracle import oracle_table

        o = cfg["oracle"]
        rows = oracle_table(params, theta=float(o["theta"]), mc_T=float(o["mc_T"]),
                            mc_dt=float(o["mc_dt"]), seed=seed)
        with open(f"{stem}.json", "w") as fh:
            for r in rows:
                fh.write(r.to_json() + "\n")
        print(f"{'quantity':<22}{'closed form':>20}{'oracle':>20}{'rel err':>11}  method")
        for r in rows:
            mark = "ok" if r.passed else "FAIL"
            print(f"{r.name:<22}{r.closed_form:>20.12g}{r.oracle_value:>20.12g}"
                  f"{r.rel_err:>11.2e}  {r.method} [{mark}]")
        return EXIT_OK if all(r.passed for r in rows) else EXIT_CHECKS

    if sub == "mc":
        from .harness import run_experiment

        exp = cfgmod.experiment_from_dict(cfg)
        report = run_experiment(exp)
        files = report.save(out, f"mc-{seed}")
        for name, c in report.checks.items():
            print(f"{name}: {'pass' if c['passed'] else 'FAIL'} "
                  f"({c['kind']} = {c['value']:.4g}, tolerance {c['tolerance']:g})")
        print(f"excluded {report.n_excluded}/{len(report.records)}; wrote {files['report']}")
        if not report.passed:
            print("failing checks: " + ", ".join(report.failing_checks()), file=sys.stderr)
            return EXIT_CHECKS
        return EXIT_OK

    spec = cfgmod.build_spec(cfg)
    path = _path(cfg, params)

    if sub == "filter":
        from .filtering import run_filter

        f = cfg["filter"]
        theta = params.theta(spec.case) if f["theta"] is None else f["theta"]
        if isinstance(theta, list):
            theta = tuple(theta)
        tr = run_filter(path, theta, spec.case, params, with_mddot=bool(f["with_mddot"]),
                        stationary_gamma=bool(f["stationary_gamma"]))
        tr.to_csv(f"{stem}.csv")
        print(f"wrote {stem}.csv")
        return EXIT_OK

    if sub == "prelim":
        pr = _prelim(path, spec, params)
        Path(f"{stem}.json").write_text(pr.to_json() + "\n")
        print(pr.to_json())
        return EXIT_OK

    e = cfg["estimator"]
    norm = str(e["norm"])
    if sub == "onestep":
        from .mle import one_step_process, one_step_vector

        pr = _prelim(path, spec, params)
        fn = one_step_process if spec.dim == 1 else one_step_vector
        est = fn(path, pr, spec, params, tau_grid=_tau_grid(cfg), norm=norm)
        est.to_csv(f"{stem}.csv")
        print(f"theta_bar = {pr.theta_bar}; theta*(1) = {est.theta_star[-1]}")
        return EXIT_OK

    if sub == "twostep":
        from .mle import two_step_process

        est = two_step_process(path, spec, params, tau_grid=_tau_grid(cfg),
                               n_tau=int(e["n_tau"]), norm=norm)
        est.to_csv(f"{stem}.csv")
        print(f"theta_bar = {est.prelim.theta_bar}; theta**(1) = {est.theta_star[-1]}")
        return EXIT_OK

    if sub == "adaptive":
        from .filtering import adaptive_system

        pr = _prelim(path, spec, params)
        ad = adaptive_system(path, pr, spec, params, norm=norm, drift=str(e["drift"]))
        ad.to_csv(f"{stem}.csv")
        print(f"theta_bar = {pr.theta_bar}; theta*(T) = {ad.theta_star[-1]}; "
              f"clamped = {ad.any_clamped}")
        return EXIT_OK

    if sub == "mle-grid":
        from .mle import grid_mle

        theta, grid, ll = grid_mle(path, spec, params, grid_size=int(e["grid_size"]),
                                   return_curve=True)
        np.savetxt(f"{stem}.csv", np.column_stack([grid, ll]), delimiter=",",
                   header="theta,loglik", comments="", fmt="%.17g")
        print(f"argmax = {theta!r}")
        return EXIT_OK

    raise ConfigError("subcommand", f"unknown subcommand {sub!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hidden-ou",
        description="Estimation for a partially observed Ornstein-Uhlenbeck system.")
    subs = parser.add_subparsers(dest="subcommand", required=True, metavar="subcommand")
    for name, sections in SECTIONS.items():
        p = subs.add_parser(
            name, help=HELP[name], description=HELP[name],
            epilog="accepted config keys:\n" + cfgmod.describe_keys(sections),
            formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", "-c", help="YAML config file")
        p.add_argument("--set", "-s", action="append", default=[], metavar="SEC.KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", "-o", help=f"output directory (default ${OUT_ENV} or .)")
        p.add_argument("--verbose", "-v", action="count", default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    try:
        cfg = cfgmod.load_config(args.config, args.set)
        out.mkdir(parents=True, exist_ok=True)
        return _run(args.subcommand, cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as exc:
        print(f"error: {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
