"""Brute-force references for the closed forms in :mod:`hidden_ou.model`.

Nothing here calls the closed-form moment maps or Fisher informations; the
stationary Riccati root is recomputed from the quadratic and its derivative
by implicit differentiation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Optional

import numpy as np
from scipy import integrate, linalg

from . import model
from .model import SystemParams
from .simulate import SimConfig, simulate

_EPS = 1e-300


@dataclass(frozen=True)
class OracleReport:
    name: str
    closed_form: float
    oracle_value: float
    abs_err: float
    rel_err: float
    method: str
    tolerance: Optional[float] = None

    @classmethod
    def compare(cls, name, closed_form, oracle_value, method, tolerance=None, rel=True):
        err = abs(closed_form - oracle_value)
        return cls(name, float(closed_form), float(oracle_value), float(err),
                   float(err / max(abs(closed_form), _EPS)), method, tolerance)

    @property
    def passed(self) -> bool:
        return bool(self.tolerance is None or self.rel_err <= self.tolerance)

    def to_json(self) -> str:
        d = asdict(self)
        d["passed"] = self.passed
        return json.dumps(d)


# ---------------------------------------------------------------------------
# quadrature of the state covariance


def _state_cov(f, b, d2):
    c = b**2 / (2.0 * f)

    def cov(t, s):
        return (d2 - c) * np.exp(-f * (t + s)) + c * np.exp(-f * abs(t - s))

    return cov


def _square_integral(cov, t_lo, t_hi, s_lo, s_hi, tol):
    # inner integral split at the diagonal where the covariance has a kink
    def inner(t):
        pts = [s_lo, s_hi]
        if s_lo < t < s_hi:
            pts = [s_lo, t, s_hi]
        total = 0.0
        for lo, hi in zip(pts[:-1], pts[1:]):
            total += integrate.quad(lambda s: cov(t, s), lo, hi, epsabs=tol, epsrel=tol)[0]
        return total

    return integrate.quad(inner, t_lo, t_hi, epsabs=tol, epsrel=tol, limit=200)[0]


def _system_for(case, theta, params):
    if case in model.SCALAR_CASES:
        return params.with_theta(case, theta)
    return params


def quad_phi_oracle(case: str, theta: float, params: SystemParams, k: Optional[int] = None,
                    tol: float = 1e-11) -> float:
    """``a**2 E[(int_{k-1}^k Y dt)**2] + sigma**2`` by adaptive double quadrature.

    With ``k=None`` the state is taken stationary (the large-``k`` limit);
    otherwise ``params.d2`` enters through the transient covariance term.
    """
    p = _system_for(case, theta, params)
    d2 = p.b**2 / (2 * p.f) if k is None else p.d2
    kk = 1 if k is None else k
    cov = _state_cov(p.f, p.b, d2)
    return p.a**2 * _square_integral(cov, kk - 1, kk, kk - 1, kk, tol) + p.sigma2


def quad_xi_oracle(params: SystemParams, k: Optional[int] = None, tol: float = 1e-11) -> float:
    """``a**2 E[eta_k eta_{k-1}]`` over adjacent unit squares (stationary when ``k=None``)."""
    d2 = params.b**2 / (2 * params.f) if k is None else params.d2
    kk = 2 if k is None else k
    cov = _state_cov(params.f, params.b, d2)
    return params.a**2 * _square_integral(cov, kk - 1, kk, kk - 2, kk - 1, tol)


# ---------------------------------------------------------------------------
# stationary covariance of the filter and its derivatives


def _riccati_root(phi, kappa, q):
    # positive root of -2 phi g - kappa g^2 + q = 0
    if kappa == 0:
        return q / (2 * phi)
    roots = np.roots([-kappa, -2 * phi, q])
    roots = roots[np.isreal(roots)].real
    return float(roots[roots >= 0].max())


class LinearScoreSystem(NamedTuple):
    drift: np.ndarray      # (p+1, p+1)
    diffusion: np.ndarray  # (p+1,)
    score_map: np.ndarray  # (p, p+1): score = score_map @ (m, mdot_1, ..)
    sigma2: float


def score_system(case: str, theta, params: SystemParams) -> LinearScoreSystem:
    """Joint linear dynamics of ``(m, mdot_1, ..., mdot_p)`` at the true value.

    Driven by the innovation Wiener process, with the filter evaluated at the
    true parameter in its stationary regime.
    """
    c = model.riccati_coeffs(case, theta, params)
    s = abs(params.sigma)
    gam = _riccati_root(c.phi, c.kappa, c.q)
    # implicit differentiation of the stationary Riccati identity
    dF_dg = -2 * c.phi - 2 * c.kappa * gam
    dF_dth = -2 * c.dphi * gam - c.dkappa * gam**2 + c.dq
    dgam = -dF_dth / dF_dg
    G = c.gain
    A = c.phi + c.kappa * gam
    g = gam * G / params.sigma2
    dA = c.dphi + c.dkappa * gam + c.kappa * dgam
    dg = (dgam * G + gam * c.dgain) / params.sigma2
    p = dA.size
    F = np.zeros((p + 1, p + 1))
    F[0, 0] = -A + g * G
    L = np.zeros(p + 1)
    L[0] = g * s
    C = np.zeros((p, p + 1))
    for i in range(p):
        F[i + 1, i + 1] = -A
        F[i + 1, 0] = dg[i] * G - dA[i]
        L[i + 1] = dg[i] * s
        C[i, i + 1] = G
        C[i, 0] = c.dgain[i]
    return LinearScoreSystem(F, L, C, params.sigma2)


def stationary_covariance(system: LinearScoreSystem) -> np.ndarray:
    F = system.drift
    if np.max(np.linalg.eigvals(F).real) >= 0:
        raise linalg.LinAlgError("drift matrix is not Hurwitz")
    P = linalg.solve_continuous_lyapunov(F, -np.outer(system.diffusion, system.diffusion))
    return 0.5 * (P + P.T)


def lyapunov_information_matrix(case: str, theta, params: SystemParams) -> np.ndarray:
    """Stationary information matrix ``E[score score^T] / sigma**2`` (``p x p``)."""
    sysm = score_system(case, theta, params)
    P = stationary_covariance(sysm)
    info = sysm.score_map @ P @ sysm.score_map.T / sysm.sigma2
    return 0.5 * (info + info.T)


def lyapunov_fisher_oracle(case: str, theta: float, params: SystemParams) -> float:
    """Scalar Fisher information from the stationary Lyapunov equation."""
    if case not in model.SCALAR_CASES:
        raise ValueError("scalar cases only; see lyapunov_information_matrix")
    return float(lyapunov_information_matrix(case, theta, params)[0, 0])


# ---------------------------------------------------------------------------
# time averages along simulated paths


def _stationary_path(case, theta, params, T, dt, seed):
    p = params.with_theta(case, theta).stationary_d2()
    return simulate(p, SimConfig(dt=dt, horizon_T=T, seed=seed, record_latent=False)), p


def _time_average_scores(case, theta, params, T, dt, seed, burn_in):
    from .filtering import run_filter

    path, p = _stationary_path(case, theta, params, T, dt, seed)
    tr = run_filter(path, theta, case, params, gamma0=model.gamma_stationary(case, theta, p)[0])
    k = int(round(burn_in / dt))
    S = tr.score()[:, k:]
    return S @ S.T / S.shape[1] / params.sigma2


def fisher_mc_oracle(case: str, theta: float, params: SystemParams, T: float = 1e5,
                     dt: float = 0.005, seed: int = 0, burn_in: float = 50.0) -> float:
    """Time average of the squared score factor along one long simulated path."""
    if case not in model.SCALAR_CASES:
        raise ValueError("scalar cases only; see fisher_matrix_numeric")
    return float(_time_average_scores(case, theta, params, T, dt, seed, burn_in)[0, 0])


class NumericInformation(NamedTuple):
    matrix: np.ndarray
    positive_definite: bool


def fisher_matrix_numeric(case: str, theta_pair, params: SystemParams, T: float = 1e5,
                          dt: float = 0.005, seed: int = 0,
                          burn_in: float = 50.0) -> NumericInformation:
    """Time-averaged outer product of the score vector (two-dimensional cases).

    ``positive_definite`` is ``False`` when Monte Carlo noise left the
    estimate indefinite; rerun with a longer horizon in that case.
    """
    if case not in model.VECTOR_CASES:
        raise ValueError("cases 'FB' and 'FA' only")
    M = _time_average_scores(case, tuple(theta_pair), params, T, dt, seed, burn_in)
    M = 0.5 * (M + M.T)
    return NumericInformation(M, bool(np.all(np.linalg.eigvalsh(M) > 0)))


# ---------------------------------------------------------------------------


def oracle_table(params: Optional[SystemParams] = None, theta: float = 1.0,
                 mc_T: float = 1e5, mc_dt: float = 0.005, seed: int = 0) -> List[OracleReport]:
    """Closed form against independent reference for each model quantity."""
    from .filtering import riccati_ode

    p = SystemParams() if params is None else params
    rows = []
    for case in model.SCALAR_CASES:
        rows.append(OracleReport.compare(
            f"phi[{case}]", model.phi(case, theta, p).value,
            quad_phi_oracle(case, theta, p), "double quadrature", 1e-8))
    rows.append(OracleReport.compare("xi", model.xi(p.with_theta("F", theta)),
                                     quad_xi_oracle(p.with_theta("F", theta)),
                                     "double quadrature", 1e-8))
    for case in ("F", "B", "A"):
        rows.append(OracleReport.compare(
            f"fisher[{case}]", model.fisher(case, theta, p),
            lyapunov_fisher_oracle(case, theta, p), "lyapunov", 1e-8))
    rows.append(OracleReport.compare(
        "fisher[A]", model.fisher("A", theta, p),
        fisher_mc_oracle("A", theta, p, T=mc_T, dt=mc_dt, seed=seed), "time average", 0.02))
    g0 = 0.9
    t, ode = riccati_ode(theta, g0, 10.0, p)
    closed = model.gamma_transient(theta, t, p, gamma0=g0)
    err = float(np.max(np.abs(closed - ode)))
    rows.append(OracleReport("gamma_transient[F]", float(closed[-1]), float(ode[-1]), err,
                             err / abs(closed[-1]), "runge-kutta", 1e-7))
    return rows
