"""Closed-form quantities of the partially observed Ornstein-Uhlenbeck system.

The observed and hidden processes are

    dX_t = a Y_t dt + sigma dW_t,      X_0 = 0
    dY_t = -f Y_t dt + b dV_t,         Y_0 ~ N(0, d2)

One (or two) of ``f``, ``b``, ``a`` is the unknown parameter. Cases are
labelled by the unknown coordinate(s): ``"F"``, ``"B"``, ``"A"``, ``"FB"``,
``"FA"``.

Every case maps onto the same scalar Riccati equation

    gamma' = -2 phi gamma - kappa gamma**2 + q

with drift ``phi = f``, observation precision ``kappa = a**2 / sigma**2`` and
state noise ``q = b**2``. The helpers below work on that generic form and
carry analytic gradients with respect to the unknown coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Tuple, Union

import numpy as np

SCALAR_CASES = ("F", "B", "A")
VECTOR_CASES = ("FB", "FA")
CASES = SCALAR_CASES + VECTOR_CASES

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class SystemParams:
    """Constants of the linear system.

    Parameters
    ----------
    a : float
        Observation gain, non-zero.
    f : float
        Mean-reversion rate of the hidden state, positive.
    b : float
        State noise intensity, non-zero.
    sigma : float
        Observation noise intensity, non-zero.
    d2 : float
        Variance of the initial state (also the initial filtering error).
    strict : bool
        Reject ``a == 0`` and ``b == 0``. Pass ``False`` to build the
        degenerate systems used as sanity checks (no signal, decoupled state).
    """

    a: float = 1.0
    f: float = 1.0
    b: float = 1.0
    sigma: float = 1.0
    d2: float = 0.5
    strict: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.strict and self.a == 0:
            raise ValueError("a must be non-zero")
        if self.strict and self.b == 0:
            raise ValueError("b must be non-zero")
        if self.sigma == 0:
            raise ValueError("sigma must be non-zero")
        if not self.f > 0:
            raise ValueError("f must be positive")
        if not self.d2 >= 0:
            raise ValueError("d2 must be non-negative")

    @property
    def sigma2(self) -> float:
        return self.sigma * self.sigma

    def stationary_d2(self) -> "SystemParams":
        """Copy with ``d2`` set to the stationary state variance b**2/(2f)."""
        return replace(self, d2=self.b**2 / (2.0 * self.f))

    def with_theta(self, case: str, theta) -> "SystemParams":
        """Copy with the unknown coordinate(s) of ``case`` set to ``theta``."""
        names = case_coordinates(case)
        values = np.atleast_1d(np.asarray(theta, dtype=float))
        if values.size != len(names):
            raise ValueError(f"case {case} needs {len(names)} value(s), got {values.size}")
        return replace(self, **{n: float(v) for n, v in zip(names, values)})

    def theta(self, case: str):
        """Current value of the unknown coordinate(s) of ``case``."""
        vals = tuple(getattr(self, n) for n in case_coordinates(case))
        return vals[0] if len(vals) == 1 else vals


def case_coordinates(case: str) -> Tuple[str, ...]:
    """Names of the :class:`SystemParams` fields that are unknown in ``case``."""
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}; expected one of {CASES}")
    return tuple(c.lower() for c in case)


@dataclass(frozen=True)
class ParamSpec:
    """Which parameter is unknown, its admissible interval and the learning exponent.

    For the two-dimensional cases ``alpha`` and ``beta`` are pairs ordered as
    the case letters, e.g. ``(f_low, b_low)`` for ``"FB"``.
    """

    case: str
    alpha: Union[float, Tuple[float, float]]
    beta: Union[float, Tuple[float, float]]
    delta: float = 0.6

    def __post_init__(self):
        names = case_coordinates(self.case)
        lo = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        hi = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if lo.size != len(names) or hi.size != len(names):
            raise ValueError(f"case {self.case} needs {len(names)} bound(s) per side")
        for name, l, h in zip(names, lo, hi):
            if not l < h:
                raise ValueError(f"bounds for {name}: alpha must be < beta")
            if l <= 0 <= h:
                raise ValueError(f"bounds for {name} must not contain 0")
            if name == "f" and l <= 0:
                raise ValueError("lower bound for f must be positive")
        if not 1.0 / 3.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (1/3, 1)")
        if len(names) == 1:
            object.__setattr__(self, "alpha", float(lo[0]))
            object.__setattr__(self, "beta", float(hi[0]))
        else:
            object.__setattr__(self, "alpha", tuple(float(x) for x in lo))
            object.__setattr__(self, "beta", tuple(float(x) for x in hi))

    @property
    def dim(self) -> int:
        return len(self.case)

    def bounds(self, i: int = 0) -> Tuple[float, float]:
        if self.dim == 1:
            return self.alpha, self.beta
        return self.alpha[i], self.beta[i]

    def contains(self, theta) -> bool:
        th = np.atleast_1d(theta)
        return all(self.bounds(i)[0] <= th[i] <= self.bounds(i)[1] for i in range(self.dim))


class PhiEval(NamedTuple):
    value: float
    derivative: float


# ---------------------------------------------------------------------------
# elementary functions


def psi(x: ArrayLike) -> ArrayLike:
    """``exp(-x) - 1 + x`` without cancellation for small ``x``."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    xs = np.where(small, x, 0.0)
    series = xs**2 / 2 - xs**3 / 6 + xs**4 / 24
    out = np.where(small, series, np.expm1(-np.where(small, 1.0, x)) + np.where(small, 1.0, x))
    return out[()] if out.ndim == 0 else out


def _check_scalar_case(case: str):
    if case not in SCALAR_CASES:
        raise ValueError(f"case must be one of {SCALAR_CASES}, got {case!r}")


def phi(case: str, theta: float, params: SystemParams) -> PhiEval:
    """Limit of the mean squared unit increment of ``X`` as a function of the unknown.

    Returns the value and its analytic derivative in ``theta``. For ``"F"``
    the map is strictly decreasing on ``theta > 0``; for ``"B"`` and ``"A"``
    it is even in ``theta`` and increasing on ``theta > 0``.
    """
    _check_scalar_case(case)
    s2 = params.sigma2
    if case == "F":
        if not theta > 0:
            raise ValueError("theta must be positive when f is unknown")
        c = params.a**2 * params.b**2
        p = psi(theta)
        value = c * p / theta**3 + s2
        deriv = c * (-np.expm1(-theta) / theta**3 - 3.0 * p / theta**4)
        return PhiEval(float(value), float(deriv))
    f = params.f
    other = params.a if case == "B" else params.b
    k = other**2 * psi(f) / f**3
    return PhiEval(float(k * theta**2 + s2), float(2.0 * k * theta))


def phi_2d(case: str, theta, params: SystemParams) -> float:
    """Same limit with both coordinates of a two-dimensional case supplied."""
    p = params.with_theta(case, theta)
    return float((p.a * p.b) ** 2 * psi(p.f) / p.f**3 + p.sigma2)


def xi(params: SystemParams) -> float:
    """Limit of the mean lag-one product of unit increments of ``X``."""
    f = params.f
    return float((params.a * params.b) ** 2 * np.expm1(-f) ** 2 / (2.0 * f**3))


def increment_ratio(x: ArrayLike) -> ArrayLike:
    """``2 psi(x) / (exp(-x) - 1)**2``: the ratio of the two increment moments.

    Strictly increasing on ``x > 0`` with limit 1 at the origin.
    """
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    xs = np.where(small, x, 0.0)
    # series of the ratio about 0
    series = 1.0 + xs / 3.0 + xs**2 / 36.0
    xl = np.where(small, 1.0, x)
    out = np.where(small, series, 2.0 * psi(xl) / np.expm1(-xl) ** 2)
    return out[()] if out.ndim == 0 else out


def _bisect(fun, lo: float, hi: float, width: float = 1e-12, maxiter: int = 200) -> float:
    flo = fun(lo)
    for _ in range(maxiter):
        if hi - lo <= width:
            break
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def invert_phi(case: str, s: float, bounds: Tuple[float, float], params: SystemParams,
               with_flag: bool = False):
    """Solve ``phi(case, theta) = s`` on ``bounds`` with clipping.

    Returns the lower (upper) bound exactly when ``s`` lies on or beyond the
    value of ``phi`` there. With ``with_flag`` a second value names the
    branch taken: ``"interior"``, ``"lower"`` or ``"upper"``.
    """
    _check_scalar_case(case)
    lo, hi = map(float, bounds)
    if not np.isfinite(s):
        raise ValueError("statistic must be finite")
    f_lo = phi(case, lo, params).value
    f_hi = phi(case, hi, params).value
    if f_lo > f_hi:
        # decreasing on the interval
        if s >= f_lo:
            out, flag = lo, "lower"
        elif s <= f_hi:
            out, flag = hi, "upper"
        else:
            out, flag = None, "interior"
    else:
        if s <= f_lo:
            out, flag = lo, "lower"
        elif s >= f_hi:
            out, flag = hi, "upper"
        else:
            out, flag = None, "interior"
    if out is None:
        if case == "F":
            out = _bisect(lambda t: phi("F", t, params).value - s, lo, hi)
        else:
            other = params.a if case == "B" else params.b
            f = params.f
            root = np.sqrt(f**3 * (s - params.sigma2) / (other**2 * psi(f)))
            out = float(root if lo > 0 else -root)
    return (out, flag) if with_flag else out


def invert_increment_ratio(qk: float, bounds: Tuple[float, float], with_flag: bool = False):
    """Solve ``increment_ratio(x) = qk`` on ``bounds`` with clipping."""
    lo, hi = map(float, bounds)
    if qk <= increment_ratio(lo):
        out, flag = lo, "lower"
    elif qk >= increment_ratio(hi):
        out, flag = hi, "upper"
    else:
        out = _bisect(lambda x: increment_ratio(x) - qk, lo, hi)
        flag = "interior"
    return (out, flag) if with_flag else out


# ---------------------------------------------------------------------------
# Riccati equation


def r_of(theta: float, params: SystemParams) -> Tuple[float, float]:
    """``r = sqrt(theta**2 + a**2 b**2 / sigma**2)`` and its derivative ``theta / r``."""
    r = float(np.sqrt(theta**2 + (params.a * params.b) ** 2 / params.sigma2))
    return r, theta / r


class RiccatiCoeffs(NamedTuple):
    """Coefficients ``(phi, kappa, q)`` of the scalar Riccati equation plus the
    observation gain, each with a gradient over the unknown coordinates."""

    phi: float
    kappa: float
    q: float
    gain: float
    dphi: np.ndarray
    dkappa: np.ndarray
    dq: np.ndarray
    dgain: np.ndarray


def riccati_coeffs(case: str, theta, params: SystemParams) -> RiccatiCoeffs:
    """Riccati coefficients for ``case`` at ``theta`` with gradients in ``theta``."""
    p = params.with_theta(case, theta)
    names = case_coordinates(case)
    s2 = p.sigma2
    n = len(names)
    dphi, dkappa, dq, dgain = (np.zeros(n) for _ in range(4))
    for i, name in enumerate(names):
        if name == "f":
            dphi[i] = 1.0
        elif name == "b":
            dq[i] = 2.0 * p.b
        elif name == "a":
            dgain[i] = 1.0
            dkappa[i] = 2.0 * p.a / s2
    return RiccatiCoeffs(p.f, p.a**2 / s2, p.b**2, p.a, dphi, dkappa, dq, dgain)


def _stationary(c: RiccatiCoeffs):
    R = np.sqrt(c.phi**2 + c.kappa * c.q)
    g = c.q / (R + c.phi)
    dR = (c.phi * c.dphi + 0.5 * (c.dkappa * c.q + c.kappa * c.dq)) / R
    dg = (c.dq * (R + c.phi) - c.q * (dR + c.dphi)) / (R + c.phi) ** 2
    return R, g, dR, dg


def gamma_stationary(case: str, theta, params: SystemParams) -> Tuple[float, np.ndarray]:
    """Stationary filtering error variance and its gradient in ``theta``.

    For scalar cases the gradient is returned as a float.
    """
    _, g, _, dg = _stationary(riccati_coeffs(case, theta, params))
    return float(g), (float(dg[0]) if dg.size == 1 else dg)


def gamma_stationary_second(theta: float, params: SystemParams) -> float:
    """Second ``theta``-derivative of the stationary error variance, case ``"F"``."""
    r, _ = r_of(theta, params)
    rdd = (params.a * params.b) ** 2 / params.sigma2 / r**3
    return params.sigma2 / params.a**2 * rdd


def riccati_transient(c: RiccatiCoeffs, gamma0: float, t: ArrayLike):
    """Closed-form solution ``gamma(t)`` with ``gamma(0) = gamma0`` and its gradient.

    Written as ``gs + u d0 / (1 + d0 kappa (1 - u) / (2R))`` with
    ``u = exp(-2 R t)`` and ``d0 = gamma0 - gs``; this is the textbook formula
    with the ``1 / (gamma0 - gs)`` term multiplied through, so ``gamma0 == gs``
    needs no special branch.

    Returns ``(gamma, dgamma)`` with shapes ``t.shape`` and ``(p,) + t.shape``.
    """
    t = np.asarray(t, dtype=float)
    R, gs, dR, dgs = _stationary(c)
    u = np.exp(-2.0 * R * t)
    d0 = gamma0 - gs
    h = c.kappa * (1.0 - u) / (2.0 * R)
    den = 1.0 + d0 * h
    gamma = gs + u * d0 / den

    dR_ = dR.reshape((-1,) + (1,) * t.ndim)
    dgs_ = dgs.reshape(dR_.shape)
    dk_ = c.dkappa.reshape(dR_.shape)
    du = -2.0 * t * dR_ * u
    dh = (dk_ * (1.0 - u) - c.kappa * du) / (2.0 * R) - c.kappa * (1.0 - u) * dR_ / (2.0 * R**2)
    dnum = du * d0 - u * dgs_
    dden = -dgs_ * h + d0 * dh
    dgamma = dgs_ + (dnum * den - u * d0 * dden) / den**2
    return gamma, dgamma


def gamma_transient(theta: float, t: ArrayLike, params: SystemParams, case: str = "F",
                    gamma0: float | None = None) -> ArrayLike:
    """Solution of the Riccati equation started from ``gamma0`` (default ``d2``)."""
    c = riccati_coeffs(case, theta, params)
    g0 = params.d2 if gamma0 is None else gamma0
    gamma, _ = riccati_transient(c, g0, t)
    return gamma[()] if np.ndim(gamma) == 0 else gamma


def riccati_rhs(gamma: ArrayLike, theta: float, params: SystemParams, case: str = "F") -> ArrayLike:
    """Right-hand side of the Riccati equation."""
    c = riccati_coeffs(case, theta, params)
    return -2.0 * c.phi * gamma - c.kappa * gamma**2 + c.q


# ---------------------------------------------------------------------------
# Fisher information


def fisher(case: str, theta: float, params: SystemParams) -> float:
    """Fisher information per unit time for a scalar unknown."""
    _check_scalar_case(case)
    s2 = params.sigma2
    if case == "F":
        r, rd = r_of(theta, params)
        return float(1.0 / (2.0 * theta) - 2.0 * rd / (r + theta) + rd**2 / (2.0 * r))
    if case == "B":
        A = np.sqrt(params.f**2 + theta**2 * params.a**2 / s2)
        return float(theta**2 * params.a**4 / (2.0 * s2**2 * A**3))
    # case A: the score is (m + theta mdot) / sigma**2; with
    #   m     = Q int e^{-f(t-s)} dW
    #   mdot  = (M + N) int e^{-A(t-s)} dW - N int e^{-f(t-s)} dW
    # the stationary second moment has three terms.
    sigma = abs(params.sigma)
    f = params.f
    g, gd = gamma_stationary("A", theta, params)
    A = f + g * theta**2 / s2
    M = (gd * theta + g) / sigma
    N = g**2 * theta**2 / (sigma**3 * (A - f))
    Q = g * theta / sigma
    slow = Q - theta * N
    fast = theta * (M + N)
    return float((slow**2 / (2 * f) + fast**2 / (2 * A) + 2 * slow * fast / (A + f)) / s2)
