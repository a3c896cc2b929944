"""Hybrid-arc simulation of the templated closed loops.

Three variants share one flow/jump skeleton: full templated output feedback,
its sample-and-hold specialization (piecewise-constant input), and templated
state feedback (no observer).  Jump times are known a priori (the timer s is
advanced analytically), so flow integration is fixed-step RK4 with the final
substep shortened to land exactly on s = Delta.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import jets
from .errors import ConfigError
from .models import CompactSpec, SatMap, SystemModel
from .observer import ObserverConfig, WarmStart, observer_rhs, phi_invert
from .template import ControlTemplate, isometry_update


@dataclass
class HybridState:
    x: np.ndarray
    z: Optional[np.ndarray]
    s: float
    mu: float
    R: np.ndarray

    def copy(self):
        return HybridState(
            x=self.x.copy(),
            z=None if self.z is None else self.z.copy(),
            s=self.s, mu=self.mu, R=self.R.copy(),
        )


@dataclass(frozen=True)
class IntegratorParams:
    step: float = 0.01
    stride: int = 5  # record every stride-th RK4 step

    def __post_init__(self):
        if self.step <= 0 or self.stride < 1:
            raise ConfigError("integrator step must be > 0 and stride >= 1")


@dataclass
class JumpRecord:
    tau: float
    index: int
    pre: HybridState
    post: HybridState
    phi_converged: bool


@dataclass
class HybridArc:
    """Sampled hybrid trajectory plus jump records and event flags."""

    n: int
    mz: int
    p: int
    t: np.ndarray = None
    i: np.ndarray = None
    x: np.ndarray = None
    z: np.ndarray = None
    s: np.ndarray = None
    mu: np.ndarray = None
    R: np.ndarray = None  # (N, p*p) row-major
    e_norm: np.ndarray = None
    phi_ok: np.ndarray = None
    jumps: List[JumpRecord] = field(default_factory=list)
    phi_failures: int = 0
    clamp_events: List[float] = field(default_factory=list)
    escaped: bool = False
    escape_time: Optional[float] = None

    def csv_header(self):
        cols = ["t", "i"]
        cols += [f"x_{k+1}" for k in range(self.n)]
        cols += [f"z_{k}" for k in range(self.mz)]
        cols += ["s", "mu"]
        cols += [f"R_{k}" for k in range(self.p * self.p)]
        cols += ["e_norm", "phi_converged"]
        return cols

    def to_csv(self, path):
        header = ",".join(self.csv_header())
        rows = np.column_stack([
            self.t, self.i.astype(float), self.x,
            self.z if self.mz else np.empty((len(self.t), 0)),
            self.s, self.mu, self.R, self.e_norm, self.phi_ok.astype(float),
        ])
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


class _Recorder:
    def __init__(self, n, mz, p):
        self.n, self.mz, self.p = n, mz, p
        self.rows = {k: [] for k in ("t", "i", "x", "z", "s", "mu", "R",
                                     "e", "ok")}

    def add(self, t, i, x, z, s, mu, R, e, ok):
        r = self.rows
        r["t"].append(t)
        r["i"].append(i)
        r["x"].append(np.asarray(x, dtype=float).copy())
        r["z"].append(np.zeros(0) if z is None else np.asarray(z, dtype=float).copy())
        r["s"].append(s)
        r["mu"].append(mu)
        r["R"].append(np.asarray(R, dtype=float).ravel().copy())
        r["e"].append(e)
        r["ok"].append(bool(ok))

    def finish(self, arc: HybridArc):
        r = self.rows
        arc.t = np.asarray(r["t"])
        arc.i = np.asarray(r["i"], dtype=int)
        arc.x = np.stack(r["x"])
        arc.z = np.stack(r["z"]) if self.mz else np.empty((len(r["t"]), 0))
        arc.s = np.asarray(r["s"])
        arc.mu = np.asarray(r["mu"])
        arc.R = np.stack(r["R"])
        arc.e_norm = np.asarray(r["e"])
        arc.phi_ok = np.asarray(r["ok"], dtype=bool)
        return arc


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


def _rk4(rhs, w, h, s0):
    k1 = rhs(w, s0)
    k2 = rhs(w + 0.5 * h * k1, s0 + 0.5 * h)
    k3 = rhs(w + 0.5 * h * k2, s0 + 0.5 * h)
    k4 = rhs(w + h * k3, s0 + h)
    return w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def jump_map(state: HybridState, system: SystemModel, template: ControlTemplate,
             cfg: ObserverConfig, spec: CompactSpec, sat: SatMap,
             warm: WarmStart):
    """Discrete update at s = Delta for the output-feedback loop.

    Returns (post_state, phi_result, clamped).
    """
    mu_max = spec.lambda_bar * (1.0 + cfg.mu_margin)
    phi = phi_invert(state.z, cfg.delta, state.mu, state.R, system, template,
                     cfg, warm.x, sat)
    warm.update(phi.x_hat)
    x_hat = sat.apply_np(phi.x_hat)
    lam_hat = system.lam_np(x_hat)
    mu_raw = float(np.linalg.norm(lam_hat))
    clamped = mu_raw > mu_max
    mu_new = min(mu_raw, mu_max)
    u_prev = state.mu * state.R[:, 0]
    R_new = _orthonormalize(isometry_update(u_prev, state.R, lam_hat))
    z_new = jets._calh_values(system, x_hat, 0.0, template, mu_new, R_new, cfg.q)
    return (
        HybridState(x=state.x.copy(), z=z_new, s=0.0, mu=mu_new, R=R_new),
        phi,
        clamped,
    )


def _flow_steps(duration: float, step: float):
    n_full = int(math.floor(duration / step + 1e-12))
    rem = duration - n_full * step
    sizes = [step] * n_full
    if rem > 1e-12 * max(1.0, duration):
        sizes.append(rem)
    return sizes


def _check_stiffness(cfg: Optional[ObserverConfig], integ: IntegratorParams):
    if cfg is not None and integ.step > 0.1 / cfg.theta:
        warnings.warn(
            f"RK4 step {integ.step} exceeds stiffness heuristic 0.1/theta = "
            f"{0.1 / cfg.theta:.4g}; observer integration may be inaccurate",
            stacklevel=3,
        )


def simulate(system: SystemModel, spec: CompactSpec, template: ControlTemplate,
             cfg: ObserverConfig, init: HybridState, t_end: float,
             integrator: IntegratorParams = IntegratorParams(),
             sat: Optional[SatMap] = None) -> HybridArc:
    """Templated output-feedback closed loop."""
    return _simulate_output_feedback(system, spec, template, cfg, init, t_end,
                                     integrator, sat, sample_hold=False)


def simulate_sample_hold(system: SystemModel, spec: CompactSpec,
                         cfg: ObserverConfig, init: HybridState, t_end: float,
                         integrator: IntegratorParams = IntegratorParams(),
                         sat: Optional[SatMap] = None) -> HybridArc:
    """Sample-and-hold specialization: the input is held constant per period.

    The held vector is represented as mu * R e1 with the constant template,
    which matches the piecewise-constant loop exactly.
    """
    template = ControlTemplate.constant(system.p, max(cfg.delta, 1e-9))
    return _simulate_output_feedback(system, spec, template, cfg, init, t_end,
                                     integrator, sat, sample_hold=True)


def _simulate_output_feedback(system, spec, template, cfg, init, t_end,
                              integrator, sat, sample_hold):
    if t_end <= 0:
        raise ConfigError("t_end must be positive")
    if sat is None:
        sat = SatMap.for_box(spec.outer)
    _check_stiffness(cfg, integrator)
    n, m, p, q = system.n, system.m, system.p, cfg.q
    mz = m * (q + 1)
    arc = HybridArc(n=n, mz=mz, p=p)
    rec = _Recorder(n, mz, p)
    warm = WarmStart(spec.inner.bounds.mean(axis=1))

    state = init.copy()
    t = 0.0
    i = 0
    last_phi_ok = True

    def e_norm_of(x, z, s, mu, R):
        stack = jets._calh_values(system, x, s, template, mu, R, q)
        return float(np.linalg.norm(z - stack))

    rec.add(t, i, state.x, state.z, state.s, state.mu, state.R,
            e_norm_of(state.x, state.z, state.s, state.mu, state.R), last_phi_ok)

    while t < t_end - 1e-12:
        flow_dur = min(cfg.delta - state.s, t_end - t)
        mu, R = state.mu, state.R

        def rhs(w, s_now):
            x = w[:n]
            z = w[n:]
            y = system.h_np(x)
            u = mu * (R @ template.value(s_now))
            xdot = system.f_np(x, u)
            zdot, phi = observer_rhs(y, z, s_now, mu, R, system, template,
                                     cfg, sat, warm)
            rhs.last_phi = phi
            return np.concatenate([xdot, zdot])

        rhs.last_phi = None
        w = np.concatenate([state.x, state.z])
        sizes = _flow_steps(flow_dur, integrator.step)
        since_record = 0
        ok = True
        for h in sizes:
            w = _rk4(rhs, w, h, state.s)
            t += h
            state.s += h
            if not np.all(np.isfinite(w)):
                arc.escaped = True
                arc.escape_time = t
                ok = False
                break
            if rhs.last_phi is not None:
                last_phi_ok = rhs.last_phi.converged
                if not last_phi_ok:
                    arc.phi_failures += 1
            since_record += 1
            if since_record >= integrator.stride:
                since_record = 0
                rec.add(t, i, w[:n], w[n:], state.s, mu, R,
                        e_norm_of(w[:n], w[n:], state.s, mu, R), last_phi_ok)
        if not ok:
            break
        state.x = w[:n]
        state.z = w[n:]
        if since_record != 0:
            rec.add(t, i, state.x, state.z, state.s, mu, R,
                    e_norm_of(state.x, state.z, state.s, mu, R), last_phi_ok)
        if t >= t_end - 1e-12:
            break
        # jump at s = Delta
        state.s = cfg.delta
        pre = state.copy()
        post, phi, clamped = jump_map(state, system, template, cfg, spec, sat, warm)
        if not phi.converged:
            arc.phi_failures += 1
        if clamped:
            arc.clamp_events.append(t)
        arc.jumps.append(JumpRecord(tau=t, index=i, pre=pre, post=post.copy(),
                                    phi_converged=phi.converged))
        i += 1
        state = post
        rec.add(t, i, state.x, state.z, state.s, state.mu, state.R,
                e_norm_of(state.x, state.z, state.s, state.mu, state.R),
                phi.converged)
    return rec.finish(arc)


def simulate_state_feedback(system: SystemModel, spec: CompactSpec,
                            template: ControlTemplate, delta: float,
                            init: HybridState, t_end: float,
                            integrator: IntegratorParams = IntegratorParams(),
                            sat: Optional[SatMap] = None) -> HybridArc:
    """Templated state feedback: true state in the jump map, no observer."""
    if t_end <= 0:
        raise ConfigError("t_end must be positive")
    if delta <= 0:
        raise ConfigError("delta must be positive")
    if sat is None:
        sat = SatMap.for_box(spec.outer)
    n, p = system.n, system.p
    arc = HybridArc(n=n, mz=0, p=p)
    rec = _Recorder(n, 0, p)
    state = init.copy()
    t = 0.0
    i = 0
    rec.add(t, i, state.x, None, state.s, state.mu, state.R, 0.0, True)
    while t < t_end - 1e-12:
        flow_dur = min(delta - state.s, t_end - t)
        mu, R = state.mu, state.R

        def rhs(x, s_now):
            u = mu * (R @ template.value(s_now))
            return system.f_np(x, u)

        x = state.x
        sizes = _flow_steps(flow_dur, integrator.step)
        since_record = 0
        ok = True
        for h in sizes:
            x = _rk4(rhs, x, h, state.s)
            t += h
            state.s += h
            if not np.all(np.isfinite(x)):
                arc.escaped = True
                arc.escape_time = t
                ok = False
                break
            since_record += 1
            if since_record >= integrator.stride:
                since_record = 0
                rec.add(t, i, x, None, state.s, mu, R, 0.0, True)
        if not ok:
            break
        state.x = x
        if since_record != 0:
            rec.add(t, i, state.x, None, state.s, mu, R, 0.0, True)
        if t >= t_end - 1e-12:
            break
        state.s = delta
        pre = state.copy()
        x_sat = sat.apply_np(state.x)
        lam_x = system.lam_np(x_sat)
        mu_new = float(np.linalg.norm(lam_x))
        u_prev = state.mu * state.R[:, 0]
        R_new = _orthonormalize(isometry_update(u_prev, state.R, lam_x))
        post = HybridState(x=state.x.copy(), z=None, s=0.0, mu=mu_new, R=R_new)
        arc.jumps.append(JumpRecord(tau=t, index=i, pre=pre, post=post.copy(),
                                    phi_converged=True))
        i += 1
        state = post
        rec.add(t, i, state.x, None, state.s, state.mu, state.R, 0.0, True)
    return rec.finish(arc)


def initial_state(x0, system: SystemModel, template: ControlTemplate,
                  cfg: Optional[ObserverConfig], s0: float = 0.0,
                  mu0: float = 0.0, R0: Optional[np.ndarray] = None,
                  z0: Optional[np.ndarray] = None,
                  consistent_z: bool = False) -> HybridState:
    """Convenience constructor for closed-loop initial conditions."""
    x0 = np.asarray(x0, dtype=float)
    p = system.p
    R0 = np.eye(p) if R0 is None else np.atleast_2d(np.asarray(R0, dtype=float))
    if cfg is None:
        return HybridState(x=x0, z=None, s=s0, mu=mu0, R=R0)
    mz = system.m * (cfg.q + 1)
    if z0 is not None:
        z = np.asarray(z0, dtype=float)
        if z.shape != (mz,):
            raise ConfigError(f"z0 must have dimension {mz}")
    elif consistent_z:
        z = jets._calh_values(system, x0, s0, template, mu0, R0, cfg.q)
    else:
        z = np.zeros(mz)
    return HybridState(x=x0, z=z, s=s0, mu=mu0, R=R0)
