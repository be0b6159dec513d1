"""One-step and two-step MLE-processes and a grid-search likelihood reference.

All stochastic integrals are left-point sums on the simulation grid. The
learning segment ends at the integer time ``K = floor(T**delta)`` used by the
preliminary estimator, so that it falls on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import model
from .filtering import run_filter
from .model import ParamSpec, SystemParams
from .prelim import PrelimResult, prelim_1d
from .simulate import SamplePath


@dataclass(frozen=True, eq=False)
class EstimatorTrajectory:
    """Estimator-process sampled on ``tau_grid`` (time ``t = tau T``).

    ``theta_star`` has shape ``(len(tau_grid),)`` for scalar cases and
    ``(len(tau_grid), 2)`` for two-dimensional ones.
    """

    tau_grid: np.ndarray
    theta_star: np.ndarray
    prelim: PrelimResult
    fisher_at_prelim: object
    case: str
    T: float
    delta: float
    params: SystemParams

    def at(self, tau: float):
        i = int(np.argmin(np.abs(self.tau_grid - tau)))
        if not np.isclose(self.tau_grid[i], tau, rtol=0, atol=1e-12):
            raise KeyError(f"tau={tau} not on the grid")
        return self.theta_star[i]

    def to_csv(self, path):
        th = np.atleast_2d(self.theta_star.T).T
        names = ["tau", "theta_star"] + (["theta_star_2"] if th.shape[1] > 1 else [])
        np.savetxt(path, np.column_stack([self.tau_grid, th]), delimiter=",",
                   header=",".join(names), comments="", fmt="%.17g")


@dataclass(frozen=True, eq=False)
class ZetaTrajectory:
    tau_grid: np.ndarray
    zeta: np.ndarray
    kappa: float
    theta0: float


def _tau_indices(path: SamplePath, tau_grid, k0: int):
    """Grid indices for ``tau`` values; ``None`` means every point after ``k0``."""
    n = path.n_steps
    if tau_grid is None:
        idx = np.arange(k0 + 1, n + 1)
        return idx, idx / n
    tau = np.asarray(tau_grid, dtype=float)
    if np.any(np.diff(tau) <= 0):
        raise ValueError("tau_grid must be strictly increasing")
    idx = np.rint(tau * n).astype(np.int64)
    if np.any(idx <= k0) or np.any(idx > n):
        raise ValueError("tau_grid must lie in (T**(delta - 1), 1]")
    return idx, tau


def _normalizer(t: np.ndarray, t0: float, norm: str) -> np.ndarray:
    if norm == "elapsed":
        return t - t0
    if norm == "time":
        return t
    raise ValueError("norm must be 'elapsed' or 'time'")


def _score_increments(path, traj, k0):
    """Left-point summands of the score integral from the learning end on."""
    s = traj.score()[:, k0:-1]
    innov = traj.innovations(path.dX)[k0:]
    return s * innov


def one_step_process(path: SamplePath, prelim: PrelimResult, spec: ParamSpec,
                     params: SystemParams, tau_grid=None, norm: str = "elapsed",
                     stationary_gamma: bool = False) -> EstimatorTrajectory:
    """One Fisher-scoring correction of the preliminary estimate, as a process in ``t``.

    ``theta*(t) = theta_bar + (norm(t) sigma**2 I(theta_bar))**-1 * sum score * innovation``

    where the score factor is ``a mdot`` (``m + a mdot`` when ``a`` is the
    unknown) and ``norm(t)`` is ``t - K`` (``"elapsed"``) or ``t`` (``"time"``).
    A single filter run at the preliminary value serves every ``t``.
    """
    if spec.dim != 1:
        raise ValueError("one_step_process handles scalar cases; see one_step_vector")
    if prelim is None:
        raise ValueError("a preliminary estimate is required")
    theta_bar = float(prelim.theta_bar)
    dt = path.dt
    t0 = float(prelim.K)
    k0 = int(round(t0 / dt))
    idx, tau = _tau_indices(path, tau_grid, k0)
    traj = run_filter(path, theta_bar, spec.case, params, stationary_gamma=stationary_gamma)
    info = model.fisher(spec.case, theta_bar, params)
    J = np.concatenate([[0.0], np.cumsum(_score_increments(path, traj, k0)[0])])
    t = idx * dt
    theta_star = theta_bar + J[idx - k0] / (params.sigma2 * info * _normalizer(t, t0, norm))
    return EstimatorTrajectory(tau_grid=tau, theta_star=theta_star, prelim=prelim,
                               fisher_at_prelim=info, case=spec.case, T=path.horizon,
                               delta=spec.delta, params=params)


def two_step_process(path: SamplePath, spec: ParamSpec, params: SystemParams,
                     tau_grid=None, n_tau: int = 20, norm: str = "elapsed",
                     prelim: Optional[PrelimResult] = None,
                     stationary_gamma: bool = False) -> EstimatorTrajectory:
    """Two-step MLE-process for a short learning segment (``delta`` in (1/3, 1/2]).

    The first stage is :func:`one_step_process`. At each output time ``t`` the
    second stage re-filters the data up to ``t`` at the first-stage value
    (projected on the parameter interval) and applies one more scoring
    correction with the derivative filter kept at the preliminary value.
    The output grid defaults to ``n_tau`` equispaced points ending at 1.
    """
    if not 1.0 / 3.0 < spec.delta <= 0.5:
        raise ValueError("two_step_process needs delta in (1/3, 1/2]")
    if spec.dim != 1:
        raise ValueError("two_step_process handles scalar cases")
    if prelim is None:
        prelim = prelim_1d(path, spec, params)
    dt = path.dt
    t0 = float(prelim.K)
    k0 = int(round(t0 / dt))
    if tau_grid is None:
        tau_grid = np.arange(1, n_tau + 1) / n_tau
        tau_grid = tau_grid[np.rint(tau_grid * path.n_steps) > k0]
    first = one_step_process(path, prelim, spec, params, tau_grid=tau_grid, norm=norm,
                             stationary_gamma=stationary_gamma)
    idx, tau = _tau_indices(path, tau_grid, k0)
    theta_bar = float(prelim.theta_bar)
    ref = run_filter(path, theta_bar, spec.case, params, stationary_gamma=stationary_gamma)
    score = ref.score()[0]
    out = np.empty(idx.size)
    lo, hi = spec.bounds()
    for j, (i_end, th1) in enumerate(zip(idx, first.theta_star)):
        th1 = float(np.clip(th1, lo, hi))
        sub = path.truncate(i_end * dt)
        tr = run_filter(sub, th1, spec.case, params, with_mdot=False,
                        stationary_gamma=stationary_gamma)
        innov = tr.innovations(sub.dX)[k0:]
        total = float(np.dot(score[k0:i_end], innov))
        info = model.fisher(spec.case, th1, params)
        scale = _normalizer(np.array([i_end * dt]), t0, norm)[0]
        out[j] = th1 + total / (params.sigma2 * info * scale)
    return EstimatorTrajectory(tau_grid=tau, theta_star=out, prelim=prelim,
                               fisher_at_prelim=first.fisher_at_prelim, case=spec.case,
                               T=path.horizon, delta=spec.delta, params=params)


def one_step_vector(path: SamplePath, prelim: PrelimResult, spec: ParamSpec,
                    params: SystemParams, tau_grid=None, norm: str = "elapsed",
                    info: Optional[np.ndarray] = None,
                    stationary_gamma: bool = False) -> EstimatorTrajectory:
    """Vector scoring correction for the two-dimensional cases.

    ``info`` defaults to the stationary information matrix at the
    preliminary value from :func:`hidden_ou.oracle.lyapunov_information_matrix`.
    """
    from .oracle import lyapunov_information_matrix

    if spec.case not in model.VECTOR_CASES:
        raise ValueError("one_step_vector handles cases 'FB' and 'FA'")
    theta_bar = np.asarray(prelim.theta_bar, dtype=float)
    if info is None:
        info = lyapunov_information_matrix(spec.case, theta_bar, params)
    info = np.asarray(info, dtype=float)
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > 1e10:
        raise np.linalg.LinAlgError(f"information matrix is singular (cond={cond:.3g})")
    dt = path.dt
    t0 = float(prelim.K)
    k0 = int(round(t0 / dt))
    idx, tau = _tau_indices(path, tau_grid, k0)
    traj = run_filter(path, tuple(theta_bar), spec.case, params,
                      stationary_gamma=stationary_gamma)
    inc = _score_increments(path, traj, k0)
    J = np.concatenate([np.zeros((2, 1)), np.cumsum(inc, axis=1)], axis=1)
    step = np.linalg.solve(info, J[:, idx - k0]) / params.sigma2
    t = idx * dt
    theta_star = theta_bar[:, None] + step / _normalizer(t, t0, norm)
    return EstimatorTrajectory(tau_grid=tau, theta_star=theta_star.T, prelim=prelim,
                               fisher_at_prelim=info, case=spec.case, T=path.horizon,
                               delta=spec.delta, params=params)


def log_likelihood(path: SamplePath, theta, case: str, params: SystemParams,
                   stationary_gamma: bool = False) -> float:
    """Discretized log-likelihood ratio ``int a m / sigma**2 dX - int a**2 m**2 / (2 sigma**2) dt``."""
    tr = run_filter(path, theta, case, params, with_mdot=False,
                    stationary_gamma=stationary_gamma)
    am = tr.obs_gain * tr.m[:-1]
    return float((np.dot(am, path.dX) - 0.5 * np.dot(am, am) * path.dt) / params.sigma2)


def grid_mle(path: SamplePath, spec: ParamSpec, params: SystemParams, grid_size: int = 50,
             return_curve: bool = False, stationary_gamma: bool = False):
    """Maximize the log-likelihood over an equispaced grid on the parameter interval.

    The best grid point is refined by one parabolic step through its
    neighbours. Ties (a flat likelihood) resolve to the tied point nearest
    the middle of the grid.
    """
    if grid_size < 3:
        raise ValueError("grid_size must be at least 3")
    if spec.dim != 1:
        raise ValueError("grid_mle handles scalar cases")
    lo, hi = spec.bounds()
    grid = np.linspace(lo, hi, grid_size)
    ll = np.array([log_likelihood(path, th, spec.case, params, stationary_gamma)
                   for th in grid])
    best = np.flatnonzero(ll >= ll.max() - 1e-12 * max(1.0, abs(ll.max())))
    mid = (grid_size - 1) / 2.0
    i = int(best[np.argmin(np.abs(best - mid))])
    theta = float(grid[i])
    if 0 < i < grid_size - 1:
        y0, y1, y2 = ll[i - 1], ll[i], ll[i + 1]
        curv = y0 - 2 * y1 + y2
        if curv < 0:
            h = grid[1] - grid[0]
            theta = float(grid[i] + 0.5 * h * (y0 - y2) / curv)
    if return_curve:
        return theta, grid, ll
    return theta


def zeta_trajectory(est: EstimatorTrajectory, theta0: float, kappa: float) -> ZetaTrajectory:
    """Rescaled error ``sqrt(T I(theta0)) (theta*(tau) - theta0)`` on ``[kappa, 1]``."""
    if kappa <= est.T ** (est.delta - 1):
        raise ValueError("kappa must exceed T**(delta - 1)")
    keep = est.tau_grid >= kappa - 1e-12
    info = model.fisher(est.case, theta0, est.params)
    zeta = np.sqrt(est.T * info) * (est.theta_star[keep] - theta0)
    return ZetaTrajectory(tau_grid=est.tau_grid[keep], zeta=zeta, kappa=kappa, theta0=theta0)
