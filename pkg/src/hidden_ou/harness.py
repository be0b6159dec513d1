"""Monte Carlo replication engine and the statistics run on its output.

Each replication owns an independent random stream keyed by
``(master_seed, rep_index)``, so a report does not depend on how the
replications are spread over worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import stats

from . import model
from .filtering import FilterInstability, adaptive_system
from .mle import grid_mle, one_step_process, one_step_vector, two_step_process
from .model import ParamSpec, SystemParams
from .prelim import PrelimResult, prelim_1d, prelim_2d
from .simulate import SimConfig, make_rng, replication_seed, simulate

ESTIMATORS = ("prelim", "onestep", "twostep", "adaptive", "vector", "mle_grid")
CHECK_KINDS = ("var_ratio", "ks_p", "abs_mean", "cov_min", "cov_frobenius")
MAX_EXCLUDED_FRACTION = 0.01


@dataclass(frozen=True)
class CheckSpec:
    """A named assertion evaluated on the scaled errors.

    ``var_ratio``: ``|var / target - 1| <= tolerance`` at ``tau``.
    ``ks_p``: KS p-value against ``N(0, target)`` exceeds ``tolerance``.
    ``abs_mean``: ``|mean| <= tolerance``.
    ``cov_min``: ``Cov(tau_i zeta_i, tau_j zeta_j)`` within ``tolerance``
    (relative, elementwise) of ``min(tau_i, tau_j)``.
    ``cov_frobenius``: vector cases, covariance of ``sqrt(T)`` errors within
    ``tolerance`` (relative Frobenius) of the inverse information matrix.
    """

    name: str
    kind: str
    tolerance: float
    tau: float = 1.0

    def __post_init__(self):
        if self.kind not in CHECK_KINDS:
            raise ValueError(f"check {self.name!r}: kind must be one of {CHECK_KINDS}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to rerun an experiment bit for bit.

    The true parameter is read from ``params`` at the coordinates of
    ``spec.case``. ``prelim_at_truth`` replaces the preliminary estimate
    by the true value (a diagnostic that isolates the first-order term).
    """

    params: SystemParams
    spec: ParamSpec
    sim: SimConfig = SimConfig(horizon_T=1000.0)
    reps: int = 100
    tau_grid: Tuple[float, ...] = (1.0,)
    checks: Tuple[CheckSpec, ...] = ()
    master_seed: int = 0
    workers: int = 1
    estimator: str = "onestep"
    norm: str = "elapsed"
    grid_size: int = 50
    prelim_at_truth: bool = False

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        tau = tuple(float(t) for t in self.tau_grid)
        if not tau or any(b <= a for a, b in zip(tau, tau[1:])) or tau[-1] > 1 or tau[0] <= 0:
            raise ValueError("tau_grid must be strictly increasing in (0, 1]")
        object.__setattr__(self, "tau_grid", tau)
        names = [c.name for c in self.checks]
        if len(set(names)) != len(names):
            raise ValueError("check names must be unique")
        vector = self.spec.case in model.VECTOR_CASES
        if vector != (self.estimator == "vector") and self.estimator != "prelim":
            raise ValueError(f"estimator {self.estimator!r} does not fit case {self.spec.case}")

    @property
    def theta0(self):
        return self.params.theta(self.spec.case)

    @property
    def T(self) -> float:
        return self.sim.horizon_T

    def to_dict(self) -> dict:
        p = self.params
        return {
            "model": {"a": p.a, "f": p.f, "b": p.b, "sigma": p.sigma, "d2": p.d2,
                      "strict": p.strict},
            "spec": {"case": self.spec.case, "alpha": self.spec.alpha,
                     "beta": self.spec.beta, "delta": self.spec.delta},
            "sim": {"dt": self.sim.dt, "T": self.sim.horizon_T, "scheme": self.sim.scheme},
            "mc": {"reps": self.reps, "workers": self.workers, "master_seed": self.master_seed,
                   "tau_grid": list(self.tau_grid), "estimator": self.estimator,
                   "grid_size": self.grid_size,
                   "prelim_at_truth": self.prelim_at_truth},
            "estimator": {"norm": self.norm},
            "checks": [asdict(c) for c in self.checks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        from .config import experiment_from_dict

        return experiment_from_dict(d)


# ---------------------------------------------------------------------------
# one replication


def _prelim(path, cfg: ExperimentConfig) -> PrelimResult:
    if cfg.spec.dim == 1:
        pr = prelim_1d(path, cfg.spec, cfg.params)
    else:
        pr = prelim_2d(path, cfg.spec, cfg.params)
    if cfg.prelim_at_truth:
        pr = replace(pr, theta_bar=cfg.theta0, clipped="truth")
    return pr


def _estimate(path, pr: PrelimResult, cfg: ExperimentConfig) -> np.ndarray:
    tau = np.asarray(cfg.tau_grid)
    est = cfg.estimator
    if est == "prelim":
        return np.tile(np.atleast_1d(pr.theta_bar), (tau.size, 1))
    if est == "onestep":
        tr = one_step_process(path, pr, cfg.spec, cfg.params, tau_grid=tau, norm=cfg.norm)
    elif est == "twostep":
        tr = two_step_process(path, cfg.spec, cfg.params, tau_grid=tau, norm=cfg.norm, prelim=pr)
    elif est == "vector":
        tr = one_step_vector(path, pr, cfg.spec, cfg.params, tau_grid=tau, norm=cfg.norm)
    elif est == "adaptive":
        ad = adaptive_system(path, pr, cfg.spec, cfg.params, norm=cfg.norm)
        idx = np.rint(tau * path.n_steps).astype(int)
        return ad.theta_star[idx][:, None]
    else:
        out = np.empty((tau.size, 1))
        for i, t in enumerate(tau):
            sub = path if t == 1.0 else path.truncate(t * path.horizon)
            out[i, 0] = grid_mle(sub, cfg.spec, cfg.params, grid_size=cfg.grid_size)
        return out
    return np.asarray(tr.theta_star, dtype=float).reshape(tau.size, -1)


def run_replication(cfg: ExperimentConfig, index: int) -> dict:
    """Simulate, estimate and return one per-rep record."""
    seed = replication_seed(cfg.master_seed, index)
    rng = make_rng(cfg.master_seed, index)
    sim = replace(cfg.sim, seed=seed, record_latent=False)
    path = simulate(cfg.params, sim, rng=rng)
    dim = cfg.spec.dim
    rec = {"rep": index, "seed": seed, "status": "ok", "clipped": "",
           "theta_bar": [math.nan] * dim,
           "theta_star": np.full((len(cfg.tau_grid), dim), np.nan)}
    try:
        pr = _prelim(path, cfg)
        rec["theta_bar"] = list(np.atleast_1d(pr.theta_bar).astype(float))
        rec["clipped"] = pr.clipped if isinstance(pr.clipped, str) else "|".join(pr.clipped)
        rec["theta_star"] = _estimate(path, pr, cfg)
        if not np.all(np.isfinite(rec["theta_star"])):
            raise FloatingPointError("non-finite estimate")
    except (FilterInstability, FloatingPointError, np.linalg.LinAlgError) as exc:
        rec["status"] = f"excluded: {type(exc).__name__}"
    return rec


def _run_chunk(args):
    cfg, indices = args
    return [run_replication(cfg, i) for i in indices]


# ---------------------------------------------------------------------------
# statistics


class NormalityResult(NamedTuple):
    ks_stat: float
    p_value: float
    var_ratio: float
    n: int


def normality_check(samples, target_variance: float = 1.0) -> NormalityResult:
    """KS test against ``N(0, target_variance)`` with the asymptotic Kolmogorov law."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise ValueError("normality_check needs at least 100 samples")
    sd = math.sqrt(target_variance)
    res = stats.kstest(x, "norm", args=(0.0, sd), method="asymp")
    return NormalityResult(float(res.statistic), float(res.pvalue),
                           float(np.var(x, ddof=1) / target_variance), int(x.size))


class CovarianceFit(NamedTuple):
    tau: np.ndarray
    cov_zeta: np.ndarray
    cov_tau_zeta: np.ndarray
    errors: Dict[str, float]
    best: str
    max_rel_err_min: float


KERNELS = {
    "zeta~min(tau)": lambda t1, t2: np.minimum(t1, t2),
    "tau*zeta~min(tau)": lambda t1, t2: 1.0 / np.maximum(t1, t2),
}


def _rel_frobenius(a, b) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def covariance_over_tau(report: "MCReport", theta0=None, kappa: Optional[float] = None,
                        fit_threshold: float = 0.5) -> CovarianceFit:
    """Empirical covariance of ``zeta(tau)`` and a fit of both candidate kernels.

    ``"zeta~min(tau)"`` is ``Cov(zeta_i, zeta_j) = min(tau_i, tau_j)``;
    ``"tau*zeta~min(tau)"`` is ``Cov(tau_i zeta_i, tau_j zeta_j) =
    min(tau_i, tau_j)``, equivalently ``Cov(zeta_i, zeta_j) = 1 / max``.
    The best kernel minimizes the relative Frobenius error; when both errors
    exceed ``fit_threshold`` the tag is ``"neither"``.
    """
    cfg = report.config
    if theta0 is None:
        theta0 = cfg.theta0
    if kappa is None:
        kappa = cfg.tau_grid[0]
    if kappa <= cfg.T ** (cfg.spec.delta - 1):
        raise ValueError("kappa must exceed T**(delta - 1)")
    tau = np.asarray(cfg.tau_grid)
    keep = tau >= kappa - 1e-12
    tau = tau[keep]
    info = model.fisher(cfg.spec.case, theta0, cfg.params)
    th = report.theta_star_matrix()[:, keep, 0]
    zeta = math.sqrt(cfg.T * info) * (th - theta0)
    C = np.atleast_2d(np.cov(zeta, rowvar=False))
    Ct = C * np.outer(tau, tau)
    t1, t2 = np.meshgrid(tau, tau, indexing="ij")
    errors = {k: _rel_frobenius(C, f(t1, t2)) for k, f in KERNELS.items()}
    best = min(errors, key=errors.get)
    if errors[best] > fit_threshold:
        best = "neither"
    target = np.minimum(t1, t2)
    return CovarianceFit(tau, C, Ct, errors, best, float(np.max(np.abs(Ct - target) / target)))


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class TauAggregate:
    tau: float
    n: int
    mean: float
    variance: float
    skewness: float
    target_variance: float
    ks_stat: float
    p_value: float


@dataclass(frozen=True, eq=False)
class MCReport:
    """Per-rep records, aggregates over the included reps and check outcomes.

    Scalar cases store aggregates of ``zeta(tau) = sqrt(T I(theta0))
    (theta*(tau) - theta0)`` whose first-order variance is ``1 / tau``.
    Vector cases store the covariance of ``sqrt(T) (theta*(1) - theta0)``.
    """

    config: ExperimentConfig
    records: List[dict]
    aggregates: List[TauAggregate]
    covariance: np.ndarray
    checks: Dict[str, dict]
    n_excluded: int
    wall_clock: float

    @property
    def included(self) -> List[dict]:
        return [r for r in self.records if r["status"] == "ok"]

    @property
    def exclusion_ok(self) -> bool:
        return self.n_excluded <= MAX_EXCLUDED_FRACTION * len(self.records)

    @property
    def passed(self) -> bool:
        return self.exclusion_ok and all(c["passed"] for c in self.checks.values())

    def failing_checks(self) -> List[str]:
        out = [k for k, c in self.checks.items() if not c["passed"]]
        if not self.exclusion_ok:
            out.append("exclusions")
        return out

    def theta_star_matrix(self) -> np.ndarray:
        """``(reps_included, n_tau, dim)`` array of estimates."""
        return np.array([r["theta_star"] for r in self.included], dtype=float)

    def scaled_errors(self) -> np.ndarray:
        """``zeta`` for scalar cases, ``sqrt(T)`` errors for vector cases."""
        cfg = self.config
        th = self.theta_star_matrix()
        theta0 = np.atleast_1d(cfg.theta0)
        if cfg.spec.dim == 1:
            scale = math.sqrt(cfg.T * model.fisher(cfg.spec.case, theta0[0], cfg.params))
        else:
            scale = math.sqrt(cfg.T)
        return scale * (th - theta0)

    # persistence --------------------------------------------------------

    def records_csv(self) -> str:
        cfg = self.config
        dim = cfg.spec.dim
        cols = ["rep", "seed", "status", "clipped"]
        cols += [f"theta_bar_{i + 1}" for i in range(dim)]
        cols += [f"theta_star_{i + 1}@{t!r}" for t in cfg.tau_grid for i in range(dim)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.records:
            w.writerow([r["rep"], r["seed"], r["status"], r["clipped"]]
                       + [repr(float(x)) for x in r["theta_bar"]]
                       + [repr(float(x)) for x in np.asarray(r["theta_star"]).ravel()])
        return buf.getvalue()

    def plot_csv(self) -> str:
        """``kind,x,y`` rows: variance against ``tau`` and normal QQ pairs at the last ``tau``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "x", "y"])
        for a in self.aggregates:
            w.writerow(["variance", repr(a.tau), repr(a.variance)])
            w.writerow(["target_variance", repr(a.tau), repr(a.target_variance)])
        z = self.scaled_errors()
        if z.shape[0] > 0:
            last = np.sort(z[:, -1, 0])
            q = stats.norm.ppf((np.arange(1, last.size + 1) - 0.5) / last.size)
            if self.config.spec.dim == 1:
                q = q * math.sqrt(self.aggregates[-1].target_variance)
            for x, y in zip(q, last):
                w.writerow(["qq", repr(float(x)), repr(float(y))])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "n_reps": len(self.records),
            "n_excluded": self.n_excluded,
            "exclusion_ok": self.exclusion_ok,
            "aggregates": [asdict(a) for a in self.aggregates],
            "covariance": self.covariance.tolist(),
            "checks": self.checks,
            "passed": self.passed,
            "wall_clock": self.wall_clock,
        }

    def save(self, directory, stem: str) -> Dict[str, Path]:
        """Write ``{stem}.json``, ``{stem}.csv`` (per rep) and ``{stem}-plot.csv``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        out = {"report": d / f"{stem}.json", "records": d / f"{stem}.csv",
               "plot": d / f"{stem}-plot.csv"}
        out["report"].write_text(json.dumps(self.summary(), indent=2))
        out["records"].write_text(self.records_csv())
        out["plot"].write_text(self.plot_csv())
        return out

    @classmethod
    def load(cls, report_path, records_path, rtol: float = 1e-9) -> "MCReport":
        """Rebuild a report from disk and verify its aggregates against the records."""
        summary = json.loads(Path(report_path).read_text())
        cfg = ExperimentConfig.from_dict(summary["config"])
        records = _parse_records(Path(records_path).read_text(), cfg)
        rebuilt = _assemble(cfg, records, summary["wall_clock"])
        for a, b in zip(rebuilt.aggregates, summary["aggregates"]):
            for key, val in asdict(a).items():
                if not _close(val, b[key], rtol):
                    raise ValueError(f"aggregate {key} at tau={a.tau} does not match records")
        if not np.allclose(rebuilt.covariance, np.array(summary["covariance"]),
                           rtol=rtol, atol=0, equal_nan=True):
            raise ValueError("covariance does not match records")
        return rebuilt


def _close(a, b, rtol):
    if a is None or b is None:
        return a is b
    if isinstance(a, float) and math.isnan(a):
        return isinstance(b, float) and math.isnan(b)
    return abs(a - b) <= rtol * max(abs(a), abs(b), 1e-300)


def _parse_records(text: str, cfg: ExperimentConfig) -> List[dict]:
    dim = cfg.spec.dim
    rows = list(csv.reader(io.StringIO(text)))
    out = []
    for row in rows[1:]:
        vals = [float(x) for x in row[4:]]
        out.append({"rep": int(row[0]), "seed": int(row[1]), "status": row[2],
                    "clipped": row[3], "theta_bar": vals[:dim],
                    "theta_star": np.array(vals[dim:]).reshape(len(cfg.tau_grid), dim)})
    return out


def _evaluate_check(chk: CheckSpec, rep: MCReport) -> dict:
    cfg = rep.config
    out = {"kind": chk.kind, "tolerance": chk.tolerance, "tau": chk.tau}
    try:
        if chk.kind == "cov_min":
            fit = covariance_over_tau(rep)
            value = fit.max_rel_err_min
            passed = value <= chk.tolerance
            out["best_kernel"] = fit.best
        elif chk.kind == "cov_frobenius":
            from .oracle import lyapunov_information_matrix

            target = np.linalg.inv(lyapunov_information_matrix(cfg.spec.case, cfg.theta0,
                                                               cfg.params))
            value = _rel_frobenius(rep.covariance, target)
            passed = value <= chk.tolerance
        else:
            i = int(np.argmin(np.abs(np.asarray(cfg.tau_grid) - chk.tau)))
            if abs(cfg.tau_grid[i] - chk.tau) > 1e-12:
                raise ValueError(f"tau={chk.tau} not on the grid")
            a = rep.aggregates[i]
            if chk.kind == "var_ratio":
                value = a.variance / a.target_variance
                passed = abs(value - 1) <= chk.tolerance
            elif chk.kind == "ks_p":
                value = a.p_value
                passed = value > chk.tolerance
            else:
                value = abs(a.mean)
                passed = value <= chk.tolerance
    except ValueError as exc:
        value, passed = math.nan, False
        out["error"] = str(exc)
    out["value"] = float(value)
    out["passed"] = bool(passed)
    return out


def _assemble(cfg: ExperimentConfig, records: List[dict], wall_clock: float) -> MCReport:
    n_excl = sum(r["status"] != "ok" for r in records)
    rep = MCReport(cfg, records, [], np.empty((0, 0)), {}, n_excl, wall_clock)
    z = rep.scaled_errors() if rep.included else np.empty((0, len(cfg.tau_grid), cfg.spec.dim))
    aggs = []
    for j, tau in enumerate(cfg.tau_grid):
        x = z[:, j, 0]
        target = 1.0 / tau if cfg.spec.dim == 1 else math.nan
        n = x.size
        mean = float(np.mean(x)) if n else math.nan
        var = float(np.var(x, ddof=1)) if n > 1 else (0.0 if n == 1 else math.nan)
        skew = float(stats.skew(x)) if n > 2 else math.nan
        ks, p = math.nan, math.nan
        if n >= 100 and cfg.spec.dim == 1:
            nc = normality_check(x, target)
            ks, p = nc.ks_stat, nc.p_value
        aggs.append(TauAggregate(float(tau), int(n), mean, var, skew, target, ks, p))
    if cfg.spec.dim == 1:
        cov = np.atleast_2d(np.cov(z[:, :, 0], rowvar=False)) if z.shape[0] > 1 else \
            np.zeros((len(cfg.tau_grid),) * 2)
    else:
        cov = np.atleast_2d(np.cov(z[:, -1, :], rowvar=False)) if z.shape[0] > 1 else \
            np.zeros((cfg.spec.dim,) * 2)
    rep = replace(rep, aggregates=aggs, covariance=cov)
    checks = {c.name: _evaluate_check(c, rep) for c in cfg.checks}
    return replace(rep, checks=checks)


def run_experiment(cfg: ExperimentConfig) -> MCReport:
    """Run ``cfg.reps`` replications and evaluate the configured checks.

    Replications are distributed over ``cfg.workers`` processes in contiguous
    chunks and reassembled in index order.
    """
    t_start = time.perf_counter()
    idx = list(range(cfg.reps))
    if cfg.workers == 1 or cfg.reps == 1:
        records = [run_replication(cfg, i) for i in idx]
    else:
        n_chunks = min(cfg.reps, 4 * cfg.workers)
        chunks = [c.tolist() for c in np.array_split(np.array(idx), n_chunks)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            records = [r for part in ex.map(_run_chunk, [(cfg, c) for c in chunks])
                       for r in part]
    return _assemble(cfg, records, time.perf_counter() - t_start)
