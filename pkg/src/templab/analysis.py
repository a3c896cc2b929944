"""Post-hoc diagnostics: estimation error, decay-rate fits, containment."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import jets
from .errors import ConfigError
from .models import CompactSpec, SystemModel

VALUE_FLOOR = 1e-300


@dataclass(frozen=True)
class DecayFit:
    C: float
    nu: float
    r_squared: float
    window: Tuple[float, float]


def estimation_error(arc, system: SystemModel, template, cfg) -> np.ndarray:
    """Per-sample |z - calH(x, s, mu R v*)| recomputed from arc columns."""
    if arc.mz == 0:
        return np.zeros(len(arc.t))
    p = system.p
    out = np.empty(len(arc.t))
    for k in range(len(arc.t)):
        R = arc.R[k].reshape(p, p)
        stack = jets._calh_values(system, arc.x[k], arc.s[k], template,
                                  arc.mu[k], R, cfg.q)
        out[k] = np.linalg.norm(arc.z[k] - stack)
    return out


def _peak_envelope(t, v, period):
    """Per-period peaks of a positive series: (peak time, peak value)."""
    t0 = t[0]
    idx = np.floor((t - t0) / period + 1e-12).astype(int)
    pts, pvs = [], []
    for k in np.unique(idx):
        mask = idx == k
        j = np.argmax(v[mask])
        pts.append(t[mask][j])
        pvs.append(v[mask][j])
    return np.asarray(pts), np.asarray(pvs)


def fit_rate(t, values, window: Optional[Tuple[float, float]] = None,
             period: Optional[float] = None) -> DecayFit:
    """Least-squares exponential fit on the log of a positive envelope.

    With ``period`` given, the fit uses per-period peaks (robust to
    oscillation and observer peaking).  ``window`` defaults to the second
    half of the series to skip transients.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is None:
        window = (0.5 * (t[0] + t[-1]), t[-1])
    lo, hi = window
    mask = (t >= lo) & (t <= hi)
    tw, vw = t[mask], values[mask]
    if len(tw) < 10:
        raise ConfigError("need at least 10 samples in the fit window")
    vw = np.maximum(vw, VALUE_FLOOR)
    if period is not None and period > 0:
        tw, vw = _peak_envelope(tw, vw, period)
        if len(tw) < 2:
            raise ConfigError("fewer than 2 envelope peaks in window")
    logs = np.log(vw)
    A = np.column_stack([tw, np.ones_like(tw)])
    coef, *_ = np.linalg.lstsq(A, logs, rcond=None)
    slope, intercept = coef
    pred = A @ coef
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(C=float(math.exp(intercept)), nu=float(-slope),
                    r_squared=r2, window=(float(lo), float(hi)))


@dataclass(frozen=True)
class ContainmentReport:
    contained: bool
    max_excursion: float  # max over time of inf-norm distance outside the box
    first_escape_time: Optional[float]


def containment(arc, spec: CompactSpec) -> ContainmentReport:
    """Check whether the state stays inside the outer box along the arc."""
    lo = spec.outer.bounds[:, 0]
    hi = spec.outer.bounds[:, 1]
    below = lo[None, :] - arc.x
    above = arc.x - hi[None, :]
    viol = np.maximum(np.maximum(below, above), 0.0)
    per_sample = viol.max(axis=1)
    esc = np.nonzero(per_sample > 0)[0]
    first = float(arc.t[esc[0]]) if len(esc) else None
    contained = len(esc) == 0 and not arc.escaped
    if arc.escaped and first is None:
        first = arc.escape_time
    return ContainmentReport(contained=contained,
                             max_excursion=float(per_sample.max(initial=0.0)),
                             first_escape_time=first)


def arc_summary(arc, spec: CompactSpec, system: SystemModel, template, cfg,
                period: Optional[float] = None) -> dict:
    """JSON-ready digest: fitted state/error rates plus event counters."""
    cont = containment(arc, spec)
    xnorm = np.linalg.norm(arc.x, axis=1)
    out = {
        "contained": cont.contained,
        "max_excursion": cont.max_excursion,
        "first_escape_time": cont.first_escape_time,
        "clamp_events": len(arc.clamp_events),
        "phi_failures": arc.phi_failures,
        "nu_x": None,
        "nu_e": None,
        "fit_windows": {},
    }
    try:
        fx = fit_rate(arc.t, xnorm, period=period)
        if np.max(xnorm) > 0:
            out["nu_x"] = fx.nu
            out["fit_windows"]["x"] = list(fx.window)
    except ConfigError:
        pass
    if arc.mz:
        try:
            fe = fit_rate(arc.t, arc.e_norm, period=period)
            if np.max(arc.e_norm) > 0:
                out["nu_e"] = fe.nu
                out["fit_windows"]["e"] = list(fe.window)
        except ConfigError:
            pass
    return out


def summary_to_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True)
