"""High-gain observer: gain synthesis, numerical left inverse, flow field.

The left inverse of the observability stack is realized by a small damped
Gauss-Newton (Levenberg-Marquardt) iteration projected into the saturation
ball; the certified injective-immersion margins make the least-squares
problem locally well-posed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from . import jets
from .errors import ConfigError
from .models import SatMap, SystemModel

GRAD_TOL = 1e-10
RESIDUAL_TOL = 1e-9
FTOL = 1e-12
MAX_ITERS = 50


def hurwitz_gains(q: int) -> np.ndarray:
    """Binomial gains placing all observer poles at -1: (s+1)^(q+1)."""
    if q < 0:
        raise ConfigError("q must be non-negative")
    return np.array([float(math.comb(q + 1, i + 1)) for i in range(q + 1)])


def _companion_max_real(c: np.ndarray) -> float:
    # s^{q+1} + c_0 s^q + ... + c_q
    q1 = c.shape[0]
    M = np.zeros((q1, q1))
    M[0, :] = -c
    if q1 > 1:
        M[1:, :-1] = np.eye(q1 - 1)
    return float(np.max(np.linalg.eigvals(M).real))


@dataclass(frozen=True)
class ObserverConfig:
    q: int
    c: np.ndarray
    theta: float
    delta: float
    mu_margin: float = 0.1

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        object.__setattr__(self, "c", c)
        if c.shape[0] != self.q + 1:
            raise ConfigError(f"need q+1 = {self.q + 1} gains, got {c.shape[0]}")
        if self.theta < 1.0:
            raise ConfigError("theta must be >= 1")
        if self.delta <= 0.0:
            raise ConfigError("delta must be positive")
        if _companion_max_real(c) >= -1e-9:
            raise ConfigError("observer gains are not Hurwitz")

    @staticmethod
    def default(q: int, theta: float, delta: float, mu_margin: float = 0.1
                ) -> "ObserverConfig":
        return ObserverConfig(q=q, c=hurwitz_gains(q), theta=theta, delta=delta,
                              mu_margin=mu_margin)


@dataclass(frozen=True)
class PhiResult:
    x_hat: np.ndarray
    residual: float
    iterations: int
    converged: bool


def _tangent_basis(xu: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the hyperplane orthogonal to the unit vector xu."""
    n = xu.shape[0]
    Q, _ = np.linalg.qr(np.column_stack([xu, np.eye(n)]))
    return Q[:, 1:n]


def _project_ball(x: np.ndarray, radius: float) -> np.ndarray:
    nrm = np.linalg.norm(x)
    if nrm > radius:
        return x * (radius / nrm)
    return x


def phi_invert(z, t, mu, R, system: SystemModel, input_signal, cfg: ObserverConfig,
               warm_start, sat: SatMap) -> PhiResult:
    """Left-invert the observability stack by saturated Levenberg-Marquardt.

    Minimizes |calH(x, t, mu R u) - z|^2 from ``warm_start``; iterates are
    projected into the ball of radius 2*rho_sat so non-convergent calls still
    return a usable saturated estimate.
    """
    z = np.asarray(z, dtype=float)
    q = cfg.q
    radius = 2.0 * sat.bound
    x = _project_ball(np.asarray(warm_start, dtype=float).copy(), radius)
    mu = float(mu)
    R = np.atleast_2d(np.asarray(R, dtype=float))

    lam = 1e-3
    r = jets._calh_values(system, x, t, input_signal, mu, R, q) - z
    cost = float(r @ r)
    converged = False
    it = 0
    for it in range(1, MAX_ITERS + 1):
        J = jets.calH_jacobian(system, x, t, input_signal, mu, R, q)
        g = J.T @ r
        # stationarity for the ball-constrained problem: on the boundary the
        # outward gradient component is blocked, so test the projected
        # gradient; tolerance is scaled by the residual for out-of-range z
        pg = g
        nrm_x = np.linalg.norm(x)
        if nrm_x >= radius * (1.0 - 1e-12) and nrm_x > 0:
            xu = x / nrm_x
            radial = float(g @ xu)
            if radial < 0.0:
                pg = g - radial * xu
        resid = math.sqrt(cost)
        if np.linalg.norm(pg) < GRAD_TOL * (1.0 + resid) or resid < RESIDUAL_TOL:
            converged = True
            break
        JtJ = J.T @ J
        on_boundary = nrm_x >= radius * (1.0 - 1e-12) and float(g @ (x / nrm_x)) < 0.0
        if on_boundary:
            # constrained minimizer lies on the sphere: damped Gauss-Newton
            # in the tangent space with retraction back to the sphere
            xu = x / nrm_x
            Tb = _tangent_basis(xu)
            H_t = Tb.T @ JtJ @ Tb
            g_t = Tb.T @ g
        accepted = False
        for _ in range(12):
            try:
                if on_boundary:
                    s = np.linalg.solve(H_t + lam * np.eye(H_t.shape[0]), -g_t)
                    x_cand = x + Tb @ s
                    x_new = x_cand * (radius / np.linalg.norm(x_cand))
                else:
                    step = np.linalg.solve(JtJ + lam * np.eye(system.n), -g)
                    x_new = _project_ball(x + step, radius)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            r_new = jets._calh_values(system, x_new, t, input_signal, mu, R, q) - z
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                decrease = cost - cost_new
                x, r, cost = x_new, r_new, cost_new
                lam = max(lam * 0.25, 1e-12)
                accepted = True
                # cost decrease at float resolution: the (possibly
                # ball-constrained) minimizer is resolved as well as doubles
                # allow, even if the raw gradient tolerance is unreachable
                if decrease <= FTOL * max(cost, 1e-30):
                    converged = True
                break
            lam *= 10.0
        if not accepted or converged:
            break
    residual = math.sqrt(cost)
    if residual < RESIDUAL_TOL:
        converged = True
    return PhiResult(x_hat=x, residual=residual, iterations=it, converged=converged)


class WarmStart:
    """Mutable warm-start cell owned by a single simulation run."""

    def __init__(self, x0):
        self.x = np.asarray(x0, dtype=float).copy()

    def update(self, x):
        self.x = np.asarray(x, dtype=float).copy()


def observer_rhs(y, z, s, mu, R, system: SystemModel, input_signal,
                 cfg: ObserverConfig, sat: SatMap, warm: WarmStart):
    """Flow field of the observer block; returns (zdot, PhiResult).

    Row i gets innovation theta^(i+1) c_i (y - z_0); the last row feeds the
    next output derivative evaluated at the saturated current estimate.
    """
    q = cfg.q
    m = system.m
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.asarray(z, dtype=float)
    innov = y - z[:m]
    zdot = np.empty_like(z)
    for i in range(q):
        zdot[i * m:(i + 1) * m] = z[(i + 1) * m:(i + 2) * m] \
            + (cfg.theta ** (i + 1)) * cfg.c[i] * innov
    phi = phi_invert(z, s, mu, R, system, input_signal, cfg, warm.x, sat)
    warm.update(phi.x_hat)
    x_sat = sat.apply_np(phi.x_hat)
    sigma = jets._scaled_input_jet(input_signal, s, float(mu),
                                   np.atleast_2d(np.asarray(R, dtype=float)), q)
    hq1 = jets.hk(system, x_sat, sigma, q + 1)
    zdot[q * m:(q + 1) * m] = hq1 + (cfg.theta ** (q + 1)) * cfg.c[q] * innov
    return zdot, phi
