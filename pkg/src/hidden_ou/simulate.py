"""Sample paths of the observed/hidden pair on a uniform grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional

import numba as nb
import numpy as np

from .model import SystemParams

MAX_STEPS = 2**31 - 1


def make_rng(master_seed: int, index: Optional[int] = None) -> np.random.Generator:
    """Counter-based generator keyed by ``(master_seed, index)``.

    Replication ``index`` always sees the same stream, whichever worker runs it.
    """
    if index is None:
        ss = np.random.SeedSequence(int(master_seed))
    else:
        ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def replication_seed(master_seed: int, index: int) -> int:
    """64-bit seed mixed from the master seed and a replication index."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    horizon_T: float = 100.0
    seed: int = 0
    scheme: str = "exact"
    record_latent: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon_T >= self.dt:
            raise ValueError("horizon_T must be at least dt")
        if self.scheme not in ("exact", "euler"):
            raise ValueError("scheme must be 'exact' or 'euler'")
        if self.n_steps > MAX_STEPS:
            raise ValueError("horizon_T / dt is too large")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_T / self.dt))


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Observation record ``X`` (and optionally the hidden ``Y``) on ``t_k = k dt``."""

    dt: float
    X: np.ndarray
    Y: Optional[np.ndarray] = None
    seed: Optional[int] = None
    params_used: Optional[SystemParams] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 1 or X.size < 2:
            raise ValueError("X must be a 1-d array with at least two points")
        if X[0] != 0.0:
            raise ValueError("X must start at 0")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        if self.Y is not None:
            Y = np.asarray(self.Y, dtype=float)
            if Y.shape != X.shape:
                raise ValueError("Y must have the same length as X")
            Y.setflags(write=False)
            object.__setattr__(self, "Y", Y)

    @property
    def n_steps(self) -> int:
        return self.X.size - 1

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.X.size) * self.dt

    @property
    def dX(self) -> np.ndarray:
        return np.diff(self.X)

    def truncate(self, t_end: float) -> "SamplePath":
        """Prefix of the path up to time ``t_end`` (rounded to the grid)."""
        n = int(round(t_end / self.dt))
        if not 1 <= n <= self.n_steps:
            raise ValueError("t_end outside the path")
        Y = None if self.Y is None else self.Y[: n + 1]
        return replace(self, X=self.X[: n + 1], Y=Y)

    def steps_per_unit(self) -> int:
        """Number of grid steps in one time unit; the grid must resolve integers."""
        k = int(round(1.0 / self.dt))
        if k < 1 or abs(k * self.dt - 1.0) > 1e-9:
            raise ValueError(f"1/dt must be an integer, got dt={self.dt}")
        return k

    def to_csv(self, path, include_latent: bool = True):
        """Write ``t,X[,Y]`` rows with full double precision."""
        latent = include_latent and self.Y is not None
        cols = [self.t, self.X] + ([self.Y] if latent else [])
        header = "t,X,Y" if latent else "t,X"
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header,
                   comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, params: Optional[SystemParams] = None,
                 seed: Optional[int] = None) -> "SamplePath":
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if header[:2] != ["t", "X"]:
            raise ValueError(f"{path}: expected header t,X[,Y], got {header}")
        dt = float(data[1, 0] - data[0, 0])
        Y = data[:, 2].copy() if len(header) > 2 else None
        return cls(dt=dt, X=data[:, 1].copy(), Y=Y, seed=seed, params_used=params)


def transition_moments(f: float, b: float, dt: float):
    """Exact one-step law of ``(Y_{t+dt}, int_t^{t+dt} Y ds)`` given ``Y_t``.

    Returns the two mean coefficients and the 2x2 covariance of the noise.
    """
    e1 = -np.expm1(-f * dt)            # 1 - e^{-f dt}
    e2 = -np.expm1(-2.0 * f * dt)      # 1 - e^{-2 f dt}
    var_y = b**2 * e2 / (2.0 * f)
    cov = b**2 * e1**2 / (2.0 * f**2)
    var_i = b**2 / f**2 * (dt - 2.0 * e1 / f + e2 / (2.0 * f))
    if f * dt < 1e-3:
        # series avoids cancellation in the bracket
        x = f * dt
        var_i = b**2 * dt**3 * (1.0 / 3.0 - x / 4.0 + 7.0 * x**2 / 60.0 - x**3 / 24.0)
    mean_y = 1.0 - e1
    mean_i = e1 / f
    return mean_y, mean_i, np.array([[var_y, cov], [cov, var_i]])


@nb.njit(cache=True)
def _exact_kernel(y0, z, a, sigma, dt, my, mi, l11, l21, l22, X, Y):
    y = y0
    Y[0] = y
    sdt = np.sqrt(dt)
    for k in range(z.shape[0]):
        e1 = l11 * z[k, 0]
        e2 = l21 * z[k, 0] + l22 * z[k, 1]
        integral = mi * y + e2
        y = my * y + e1
        X[k + 1] = X[k] + a * integral + sigma * sdt * z[k, 2]
        Y[k + 1] = y


@nb.njit(cache=True)
def _euler_kernel(y0, z, a, f, b, sigma, dt, X, Y):
    y = y0
    Y[0] = y
    sdt = np.sqrt(dt)
    for k in range(z.shape[0]):
        X[k + 1] = X[k] + a * y * dt + sigma * sdt * z[k, 2]
        y = y - f * y * dt + b * sdt * z[k, 0]
        Y[k + 1] = y


def simulate(params: SystemParams, cfg: SimConfig, theta_true: Optional[dict] = None,
             rng: Optional[np.random.Generator] = None) -> SamplePath:
    """Draw one path of the system.

    Parameters
    ----------
    params : SystemParams
        Model constants.
    cfg : SimConfig
        Grid, horizon, seed and scheme.
    theta_true : dict, optional
        Field overrides applied to ``params`` (e.g. ``{"f": 1.3}``); they
        go through the same validation as the constructor.
    rng : numpy.random.Generator, optional
        Source of randomness; by default one is built from ``cfg.seed``.

    Notes
    -----
    The exact scheme draws the Gaussian pair (next state, integral of the
    state over the step) from the Ornstein-Uhlenbeck transition law, so the
    path has no discretization error at the grid points. The Euler scheme
    uses first-order increments.
    """
    if theta_true:
        params = replace(params, **theta_true)
    if rng is None:
        rng = make_rng(cfg.seed)
    n = cfg.n_steps
    dt = cfg.dt
    y0 = rng.standard_normal() * np.sqrt(params.d2)
    z = rng.standard_normal((n, 3))
    X = np.zeros(n + 1)
    Y = np.empty(n + 1)
    if cfg.scheme == "exact":
        my, mi, cov = transition_moments(params.f, params.b, dt)
        l11 = np.sqrt(cov[0, 0])
        l21 = cov[1, 0] / l11 if l11 > 0 else 0.0
        l22 = np.sqrt(max(cov[1, 1] - l21**2, 0.0))
        _exact_kernel(y0, z, params.a, params.sigma, dt, my, mi, l11, l21, l22, X, Y)
    else:
        _euler_kernel(y0, z, params.a, params.f, params.b, params.sigma, dt, X, Y)
    return SamplePath(dt=dt, X=X, Y=Y if cfg.record_latent else None,
                      seed=cfg.seed, params_used=params)


def sigma2_hat(path: SamplePath) -> float:
    """Realized quadratic variation of ``X`` per unit time.

    On a grid of step ``dt`` this overestimates ``sigma**2`` by roughly
    ``a**2 E[Y**2] dt``.
    """
    if path.n_steps < 1:
        raise ValueError("path needs at least one step")
    dX = path.dX
    return float(np.dot(dX, dX) / path.horizon)
