"""Kalman-Bucy filter for the hidden state and its parameter derivatives.

The filter

    dm = -A(theta, t) m dt + g(theta, t) dX

is integrated with an exponential step for the linear drift and the raw
increment for the input,

    m[k+1] = exp(-A_k dt) m[k] + g_k dX[k],

and the derivative filters are the exact ``theta``-derivatives of that
recursion. They are a consistent discretization of the continuous-time
derivative equations, and finite differences of ``m`` in ``theta`` reproduce
them to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba as nb
import numpy as np
from scipy.integrate import solve_ivp

from . import model
from .model import ParamSpec, SystemParams
from .simulate import SamplePath

OVERFLOW_GUARD = 1e100


class FilterInstability(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FilterTrajectory:
    """Filter output along one path for a fixed parameter value.

    ``mdot`` has shape ``(p, n + 1)`` where ``p`` is the number of unknown
    coordinates; ``gamma`` holds the error variance used at each grid point.
    """

    theta_used: object
    case: str
    m: np.ndarray
    mdot: np.ndarray
    gamma: np.ndarray
    dt: float
    params: SystemParams
    mddot: Optional[np.ndarray] = None

    @property
    def obs_gain(self) -> float:
        return self.params.with_theta(self.case, self.theta_used).a

    def score(self) -> np.ndarray:
        """Derivative of the observed drift ``a m`` in each unknown coordinate.

        Shape ``(p, n + 1)``; the ``a`` coordinate picks up the extra ``m``.
        """
        gain = self.obs_gain
        out = gain * self.mdot
        for i, name in enumerate(model.case_coordinates(self.case)):
            if name == "a":
                out[i] = out[i] + self.m
        return out

    def innovations(self, dX: np.ndarray) -> np.ndarray:
        """``dX[k] - a m[k] dt`` for ``k = 0 .. n - 1``."""
        return dX - self.obs_gain * self.m[:-1] * self.dt

    def to_csv(self, path, theta_star: Optional[np.ndarray] = None):
        t = np.arange(self.m.size) * self.dt
        cols = [t, self.m]
        names = ["t", "m"]
        for i in range(self.mdot.shape[0]):
            cols.append(self.mdot[i])
            names.append("mdot" if self.mdot.shape[0] == 1 else f"mdot_{i + 1}")
        if self.mddot is not None:
            cols.append(self.mddot)
            names.append("mddot")
        cols.append(self.gamma)
        names.append("gamma")
        if theta_star is not None:
            cols.append(theta_star)
            names.append("theta_star")
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names),
                   comments="", fmt="%.17g")


@nb.njit(cache=True)
def _filter_kernel(dX, E, g, dA, dg, dt, m0, m, mdot):
    p = dA.shape[0]
    m[0] = m0
    for i in range(p):
        mdot[i, 0] = 0.0
    for k in range(dX.shape[0]):
        mk = m[k]
        ek = E[k]
        for i in range(p):
            mdot[i, k + 1] = ek * (mdot[i, k] - dA[i, k] * dt * mk) + dg[i, k] * dX[k]
        m[k + 1] = ek * mk + g[k] * dX[k]


@nb.njit(cache=True)
def _second_kernel(dX, E, dA, ddA, ddg, dt, m, mdot, mddot):
    # second theta-derivative of the same recursion, scalar coefficients
    mddot[0] = 0.0
    for k in range(dX.shape[0]):
        mddot[k + 1] = E * (mddot[k] - 2.0 * dA * dt * mdot[k]
                            + (dA * dA * dt * dt - ddA * dt) * m[k]) + ddg * dX[k]


def filter_coefficients(case: str, theta, params: SystemParams, n: int, dt: float,
                        stationary_gamma: bool = False, gamma0: Optional[float] = None):
    """Per-step drift ``A``, gain ``g`` and their gradients for ``n`` steps.

    Returns ``(A, g, dA, dg, gamma)`` with ``gamma`` of length ``n + 1``.
    """
    c = model.riccati_coeffs(case, theta, params)
    s2 = params.sigma2
    t = np.arange(n + 1) * dt
    if stationary_gamma:
        gs, dgs = model.gamma_stationary(case, theta, params)
        gam = np.full(n + 1, gs)
        dgam = np.repeat(np.atleast_1d(dgs)[:, None], n + 1, axis=1)
    else:
        g0 = params.d2 if gamma0 is None else gamma0
        gam, dgam = model.riccati_transient(c, g0, t)
    A = c.phi + c.kappa * gam
    g = gam * c.gain / s2
    dA = c.dphi[:, None] + c.dkappa[:, None] * gam + c.kappa * dgam
    dg = (dgam * c.gain + gam * c.dgain[:, None]) / s2
    return A[:-1], g[:-1], dA[:, :-1], dg[:, :-1], gam


def stationary_gain(case: str, theta: np.ndarray, params: SystemParams):
    """Stationary drift ``A`` and gain ``g`` for an array of scalar parameter values."""
    th = np.asarray(theta, dtype=float)
    s2 = params.sigma2
    phi = th if case == "F" else np.full_like(th, params.f)
    kappa = th**2 / s2 if case == "A" else np.full_like(th, params.a**2 / s2)
    q = th**2 if case == "B" else np.full_like(th, params.b**2)
    gain = th if case == "A" else np.full_like(th, params.a)
    R = np.sqrt(phi**2 + kappa * q)
    gam = q / (R + phi)
    return phi + kappa * gam, gam * gain / s2


def _check_stable(m, A, dt):
    if not np.all(np.isfinite(m)) or np.max(np.abs(m)) > OVERFLOW_GUARD:
        raise FilterInstability(
            f"filter state overflowed; dt*A = {dt * float(np.max(A)):.3g}")


def run_filter(path: SamplePath, theta, case: str, params: SystemParams,
               with_mdot: bool = True, with_mddot: bool = False,
               stationary_gamma: bool = False, m0: float = 0.0,
               gamma0: Optional[float] = None) -> FilterTrajectory:
    """Filter ``path`` at parameter value ``theta``.

    Parameters
    ----------
    path : SamplePath
        Observations.
    theta : float or pair
        Value of the unknown coordinate(s) of ``case``.
    case : str
        One of ``"F"``, ``"B"``, ``"A"``, ``"FB"``, ``"FA"``.
    params : SystemParams
        Known constants; the unknown coordinates are overwritten by ``theta``.
    with_mdot : bool
        Integrate the derivative filters (skipped for likelihood sweeps).
    with_mddot : bool
        Also integrate the second derivative (case ``"F"`` with
        ``stationary_gamma`` only).
    stationary_gamma : bool
        Use the stationary Riccati root throughout instead of the transient
        solution started from ``gamma0``.
    m0 : float
        Initial filter value.
    gamma0 : float, optional
        Initial error variance; defaults to ``params.d2``.
    """
    n = path.n_steps
    dt = path.dt
    A, g, dA, dg, gam = filter_coefficients(case, theta, params, n, dt,
                                            stationary_gamma, gamma0)
    if not with_mdot:
        dA = dA[:0]
        dg = dg[:0]
    E = np.exp(-A * dt)
    dX = path.dX
    m = np.empty(n + 1)
    mdot = np.empty((dA.shape[0], n + 1))
    _filter_kernel(dX, E, g, np.ascontiguousarray(dA), np.ascontiguousarray(dg),
                   dt, float(m0), m, mdot)
    _check_stable(m, A, dt)
    mddot = None
    if with_mddot:
        if case != "F" or not stationary_gamma:
            raise ValueError("second derivative filter needs case 'F' and stationary_gamma")
        if not with_mdot:
            raise ValueError("with_mddot requires with_mdot")
        r, rd = model.r_of(theta, params)
        ddA = (params.a * params.b) ** 2 / params.sigma2 / r**3
        ddg = model.gamma_stationary_second(theta, params) * params.a / params.sigma2
        mddot = np.empty(n + 1)
        _second_kernel(dX, float(E[0]), float(dA[0, 0]), ddA, ddg, dt, m, mdot[0], mddot)
    return FilterTrajectory(theta_used=theta, case=case, m=m, mdot=mdot, gamma=gam,
                            dt=dt, params=params.with_theta(case, theta), mddot=mddot)


def riccati_ode(theta: float, d2: float, t_end: float, params: SystemParams,
                case: str = "F", n_points: int = 1001, rtol: float = 1e-10):
    """Integrate the Riccati equation numerically (Dormand-Prince 5(4)).

    Independent reference for :func:`hidden_ou.model.gamma_transient`.
    Returns ``(t, gamma)`` sampled on ``n_points`` equispaced times.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    t_eval = np.linspace(0.0, t_end, n_points)
    sol = solve_ivp(lambda t, y: model.riccati_rhs(y, theta, params, case),
                    (0.0, t_end), [d2], method="RK45", t_eval=t_eval,
                    rtol=rtol, atol=1e-14)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.t, sol.y[0]


@dataclass(frozen=True, eq=False)
class AdaptiveTrajectory:
    t: np.ndarray
    theta_star: np.ndarray
    m: np.ndarray
    start_index: int
    clamped: np.ndarray

    @property
    def any_clamped(self) -> bool:
        return bool(self.clamped.any())

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.t, self.m, self.theta_star]),
                   delimiter=",", header="t,m,theta_star", comments="", fmt="%.17g")


@nb.njit(cache=True)
def _recurrent_kernel(theta_bar, centre, s, inc, k0, lo, hi, out, clamped):
    # theta[k+1] - c = (theta[k] - c) s[k] / s[k+1] + inc[k] / s[k+1]
    # the state is carried unclamped; only the emitted value is clamped
    th = theta_bar
    out[k0] = th
    for k in range(k0, inc.shape[0]):
        th = centre + (th - centre) * s[k] / s[k + 1] + inc[k] / s[k + 1]
        if th < lo:
            out[k + 1] = lo
            clamped[k + 1] = True
        elif th > hi:
            out[k + 1] = hi
            clamped[k + 1] = True
        else:
            out[k + 1] = th


def recurrent_estimator(path: SamplePath, theta_bar: float, t0: float, case: str,
                        params: SystemParams, info: float, norm: str = "elapsed",
                        drift: str = "centered", guard=(-np.inf, np.inf),
                        traj: Optional[FilterTrajectory] = None,
                        stationary_gamma: bool = False):
    """Step-by-step integration of the differential form of the one-step update.

    ``drift="centered"`` pulls toward the preliminary value (the exact
    differential of the cumulative update). ``drift="literal"`` uses
    ``-theta / s`` with ``s`` offset by one step, which pulls toward zero.

    Returns ``(theta_star, clamped)`` on the full grid; entries before the
    learning end are NaN.
    """
    n = path.n_steps
    dt = path.dt
    k0 = int(round(t0 / dt))
    if traj is None:
        traj = run_filter(path, theta_bar, case, params, stationary_gamma=stationary_gamma)
    score = traj.score()[0]
    innov = traj.innovations(path.dX)
    t = np.arange(n + 1) * dt
    if drift == "centered":
        s = _norm(t, t0, norm)
        centre = theta_bar
    elif drift == "literal":
        s = t - t0 + dt
        centre = 0.0
    else:
        raise ValueError("drift must be 'centered' or 'literal'")
    inc = np.zeros(n)
    inc[k0:] = score[k0:n] * innov[k0:] / (params.sigma2 * info)
    out = np.full(n + 1, np.nan)
    clamped = np.zeros(n + 1, dtype=np.bool_)
    _recurrent_kernel(float(theta_bar), float(centre), s, inc, k0,
                      float(guard[0]), float(guard[1]), out, clamped)
    return out, clamped


def _norm(t: np.ndarray, t0: float, norm: str) -> np.ndarray:
    if norm == "elapsed":
        return t - t0
    if norm == "time":
        return np.asarray(t, dtype=float).copy()
    raise ValueError("norm must be 'elapsed' or 'time'")


def adaptive_system(path: SamplePath, prelim, spec: ParamSpec, params: SystemParams,
                    norm: str = "elapsed", drift: str = "centered",
                    stationary_gamma: bool = False) -> AdaptiveTrajectory:
    """Run the recurrent estimator together with the filter that plugs it in.

    The estimator is driven by the filter at the preliminary value; the
    adaptive filter uses the current estimate in its drift and gain through
    the stationary Riccati root, and starts at the learning end from the
    filter at the preliminary value.
    """
    if spec.dim != 1:
        raise ValueError("adaptive_system handles scalar cases")
    case = spec.case
    theta_bar = float(prelim.theta_bar)
    t0 = float(prelim.K)
    dt = path.dt
    k0 = int(round(t0 / dt))
    n = path.n_steps
    if not 0 < k0 < n:
        raise ValueError("learning interval must end inside the path")
    width = spec.beta - spec.alpha
    guard = (spec.alpha - 10 * width, spec.beta + 10 * width)
    if case == "F":
        guard = (max(guard[0], 1e-6), guard[1])
    traj = run_filter(path, theta_bar, case, params, stationary_gamma=stationary_gamma)
    info = model.fisher(case, theta_bar, params)
    theta_star, clamped = recurrent_estimator(path, theta_bar, t0, case, params, info,
                                              norm=norm, drift=drift, guard=guard, traj=traj)
    # adaptive filter on [t0, T]
    A, g = stationary_gain(case, theta_star[k0:n], params)
    E = np.exp(-A * dt)
    seg = np.empty(n - k0 + 1)
    _filter_kernel(path.dX[k0:], E, g, np.zeros((0, n - k0)), np.zeros((0, n - k0)),
                   dt, float(traj.m[k0]), seg, np.empty((0, n - k0 + 1)))
    _check_stable(seg, A, dt)
    m = traj.m.copy()
    m[k0:] = seg
    return AdaptiveTrajectory(t=np.arange(n + 1) * dt, theta_star=theta_star, m=m,
                              start_index=k0, clamped=clamped)
