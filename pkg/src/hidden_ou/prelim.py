"""Moment-based preliminary estimators from unit-spaced increments of ``X``."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import model
from .model import ParamSpec, SystemParams
from .simulate import SamplePath


@dataclass(frozen=True)
class PrelimResult:
    """Preliminary estimate and the statistics it was built from.

    ``clipped`` is ``"interior"`` when the moment equation had a root inside
    the bounds, otherwise ``"lower"`` or ``"upper"``; for two-dimensional
    cases it is a pair, one flag per coordinate, with ``"R_nonpositive"``
    marking a non-positive lag-one statistic.
    """

    theta_bar: object
    K: int
    statistic_S: float
    statistic_R: Optional[float] = None
    clipped: object = "interior"
    case: str = "F"
    seed: Optional[int] = None

    def to_json(self) -> str:
        d = asdict(self)
        d = {"theta_bar": d["theta_bar"], "K": d["K"], "S_K": d["statistic_S"],
             "R_K": d["statistic_R"], "clipped": d["clipped"], "case": d["case"],
             "seed": d["seed"]}
        return json.dumps(d)


def learning_size(T: float, delta: float) -> int:
    """Number of unit intervals in the learning segment, ``floor(T**delta)``."""
    # small tolerance so that e.g. 100**0.5 lands on 10
    return int(math.floor(T**delta * (1 + 1e-12)))


def unit_increments(path: SamplePath, K: int) -> np.ndarray:
    """``X_k - X_{k-1}`` for ``k = 1 .. K``."""
    step = path.steps_per_unit()
    if K < 1 or K * step > path.n_steps:
        raise ValueError(f"K={K} exceeds the path horizon {path.horizon:g}")
    return np.diff(path.X[: K * step + 1 : step])


def stat_S(path: SamplePath, K: int) -> float:
    """Mean squared unit increment over the first ``K`` time units."""
    d = unit_increments(path, K)
    return float(np.dot(d, d) / K)


def stat_R(path: SamplePath, K: int) -> float:
    """Mean lag-one product of unit increments over the first ``K`` time units.

    The sum runs over the ``K - 1`` adjacent pairs and is divided by ``K``.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    d = unit_increments(path, K)
    return float(np.dot(d[1:], d[:-1]) / K)


def prelim_1d(path: SamplePath, spec: ParamSpec, params: SystemParams,
              K: Optional[int] = None, S: Optional[float] = None) -> PrelimResult:
    """Clipped moment estimator for a scalar unknown.

    ``K`` defaults to ``floor(T**delta)`` with ``T`` the path horizon. ``S``
    overrides the statistic (for checking the inversion in isolation).
    """
    if spec.dim != 1:
        raise ValueError("prelim_1d handles scalar cases")
    if K is None:
        K = learning_size(path.horizon, spec.delta)
    if S is None:
        S = stat_S(path, K)
    theta, flag = model.invert_phi(spec.case, S, spec.bounds(), params, with_flag=True)
    return PrelimResult(theta_bar=float(theta), K=K, statistic_S=S, clipped=flag,
                        case=spec.case, seed=path.seed)


def _second_coordinate(case: str, f_star: float, s: float, bounds, params: SystemParams):
    # solve S = (a b)^2 psi(f) / f^3 + sigma^2 for b (case FB) or a (case FA)
    other = params.a if case == "FB" else params.b
    k = other**2 * model.psi(f_star) / f_star**3
    lo, hi = bounds
    v_lo, v_hi = k * lo**2, k * hi**2
    target = s - params.sigma2
    if v_lo > v_hi:
        v_lo, v_hi = v_hi, v_lo
        lo_flag, hi_flag, lo_val, hi_val = "upper", "lower", hi, lo
    else:
        lo_flag, hi_flag, lo_val, hi_val = "lower", "upper", lo, hi
    if target <= v_lo:
        return lo_val, lo_flag
    if target >= v_hi:
        return hi_val, hi_flag
    root = math.sqrt(target / k)
    return (root if lo > 0 else -root), "interior"


def prelim_2d(path: SamplePath, spec: ParamSpec, params: SystemParams,
              K: Optional[int] = None, sigma2: Optional[float] = None,
              S: Optional[float] = None, R: Optional[float] = None) -> PrelimResult:
    """Two-dimensional moment estimator for cases ``"FB"`` and ``"FA"``.

    The ratio ``(S - sigma**2) / R`` identifies ``f`` through
    :func:`hidden_ou.model.increment_ratio`; ``S`` then gives the second
    coordinate. ``sigma2`` defaults to the known ``params.sigma**2``.
    """
    if spec.case not in model.VECTOR_CASES:
        raise ValueError("prelim_2d handles cases 'FB' and 'FA'")
    if K is None:
        K = learning_size(path.horizon, spec.delta)
    if S is None:
        S = stat_S(path, K)
    if R is None:
        R = stat_R(path, K)
    s2 = params.sigma2 if sigma2 is None else sigma2
    if R <= 0:
        # vanishing lag-one correlation is the fast-reversion end
        f_star, f_flag = spec.beta[0], "R_nonpositive"
    else:
        f_star, f_flag = model.invert_increment_ratio((S - s2) / R, spec.bounds(0),
                                                      with_flag=True)
    p = model.SystemParams(a=params.a, f=f_star, b=params.b, sigma=np.sqrt(s2),
                           d2=params.d2, strict=params.strict)
    second, s_flag = _second_coordinate(spec.case, f_star, S, spec.bounds(1), p)
    return PrelimResult(theta_bar=(float(f_star), float(second)), K=K, statistic_S=S,
                        statistic_R=R, clipped=(f_flag, s_flag), case=spec.case,
                        seed=path.seed)
