"""Control templates: representation, isometry selection, certification, search.

A template is a polynomial input on [0, T] with exact derivative access and
value (1, 0, ..., 0) at t = 0.  Certification samples the working compacts
and checks that every rescaling/isometry of the template keeps the
observability stack an injective immersion: the off-diagonal separation
ratio (rho1) and the minimum singular value of the Jacobian (rho2) must both
stay positive on the sampled grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from . import jets
from .errors import CapabilityError, ConfigError
from .models import CompactSpec, SystemModel

# ---------------------------------------------------------------------------
# Isometry selection in R0(u0)
# ---------------------------------------------------------------------------


def isometry_from(u0) -> np.ndarray:
    """Orthogonal R with R (|u0|, 0, ..., 0)^T = u0; identity for u0 = 0.

    Uses the Householder reflection exchanging e1 and u0/|u0| when they
    differ; this is a total map.
    """
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    p = u0.shape[0]
    norm = np.linalg.norm(u0)
    if norm == 0.0:
        return np.eye(p)
    v = u0 / norm
    w = v - np.eye(p)[:, 0]
    wn2 = float(w @ w)
    if wn2 == 0.0:
        return np.eye(p)
    return np.eye(p) - 2.0 * np.outer(w, w) / wn2


def _orthonormal_perp(b1: np.ndarray) -> np.ndarray:
    """Any unit vector orthogonal to b1 (dimension >= 2)."""
    p = b1.shape[0]
    k = int(np.argmin(np.abs(b1)))
    e = np.zeros(p)
    e[k] = 1.0
    w = e - (e @ b1) * b1
    return w / np.linalg.norm(w)


def isometry_update(u_prev, R_prev, u_new, tol: float = 1e-8) -> np.ndarray:
    """Continuous selection R_new in R0(u_new) near R_prev.

    Satisfies the operator-norm bound
    || |u_prev| R_prev - |u_new| R_new || <= |u_prev - u_new|
    by rotating R_prev in the 2-plane spanned by u_prev and u_new.
    """
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    u_new = np.atleast_1d(np.asarray(u_new, dtype=float))
    R_prev = np.atleast_2d(np.asarray(R_prev, dtype=float))
    p = u_prev.shape[0]
    n_prev = np.linalg.norm(u_prev)
    n_new = np.linalg.norm(u_new)
    if n_prev > 0:
        aligned = R_prev @ np.eye(p)[:, 0] * n_prev
        if np.linalg.norm(aligned - u_prev) > tol * (1.0 + n_prev):
            raise ValueError("R_prev does not belong to R0(u_prev)")
    if n_new == 0.0:
        return R_prev.copy()
    if n_prev == 0.0:
        return isometry_from(u_new)
    if p == 1:
        return np.array([[math.copysign(1.0, u_new[0])]])
    b1 = u_prev / n_prev
    d_new = u_new / n_new
    cos_psi = float(np.clip(b1 @ d_new, -1.0, 1.0))
    w = d_new - cos_psi * b1
    wn = np.linalg.norm(w)
    if wn < 1e-14:
        if cos_psi > 0.0:
            return R_prev.copy()
        b2 = _orthonormal_perp(b1)
        sin_psi = 0.0
        cos_psi = -1.0
    else:
        b2 = w / wn
        sin_psi = wn
    P = np.outer(b1, b1) + np.outer(b2, b2)
    G = np.eye(p) + (cos_psi - 1.0) * P + sin_psi * (np.outer(b2, b1) - np.outer(b1, b2))
    return G @ R_prev


# ---------------------------------------------------------------------------
# Polynomial control templates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlTemplate:
    """Polynomial input on [0, T]; coefficients in normalized time t/T.

    ``coeffs[i, j]`` multiplies (t/T)^j on channel i.  ``order`` is the
    certified observability order (set by certification, None before).
    """

    T: float
    coeffs: np.ndarray  # (p, d+1)
    order: Optional[int] = None

    def __post_init__(self):
        coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "coeffs", coeffs)
        if self.T <= 0:
            raise ConfigError("template horizon must be positive")

    @property
    def p(self):
        return self.coeffs.shape[0]

    @property
    def degree(self):
        return self.coeffs.shape[1] - 1

    @staticmethod
    def constant(p: int, T: float) -> "ControlTemplate":
        c = np.zeros((p, 1))
        c[0, 0] = 1.0
        return ControlTemplate(T=T, coeffs=c)

    def value(self, t: float) -> np.ndarray:
        return self.derivative(t, 0)

    def derivative(self, t: float, k: int) -> np.ndarray:
        """Exact k-th time derivative at t (polynomial differentiation)."""
        tau = t / self.T
        d = self.degree
        out = np.zeros(self.p)
        if k > d:
            return out
        scale = self.T ** (-k)
        for j in range(k, d + 1):
            fall = math.perm(j, k)
            out += self.coeffs[:, j] * (fall * tau ** (j - k))
        return out * scale

    def jet(self, t: float, order: int) -> np.ndarray:
        """Raw derivatives 0..order at t; shape (order+1, p)."""
        return np.stack([self.derivative(t, k) for k in range(order + 1)])

    def with_order(self, q: int) -> "ControlTemplate":
        return replace(self, order=q)


def normalize_template(v: ControlTemplate, v_ref_scale: Optional[float] = None
                       ) -> ControlTemplate:
    """Rescale/rotate a raw polynomial input so its value at 0 is e1.

    Applies mu_ref = 1/|v(0)| and R_ref with R_ref^{-1} in R0(v(0)); the
    constant coefficient is then pinned to e1 exactly.  ``v_ref_scale``
    (the feedback bound used when drawing v) is recorded for context only.
    """
    v0 = v.value(0.0)
    norm = np.linalg.norm(v0)
    if norm == 0.0:
        raise ConfigError("cannot normalize a template vanishing at t=0")
    R_ref = isometry_from(v0).T  # R_ref^{-1} = isometry_from(v0) in R0(v(0))
    coeffs = (R_ref @ v.coeffs) / norm
    coeffs[:, 0] = 0.0
    coeffs[0, 0] = 1.0
    return ControlTemplate(T=v.T, coeffs=coeffs, order=v.order)


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridParams:
    nx: int = 5            # grid points per state axis over the outer box
    nt: int = 4            # time samples on [0, T]
    nmu: int = 8           # scale samples on [0, lambda_bar]
    n_haar: int = 4        # seeded Haar-random isometries (p >= 2)
    seed: int = 0
    mu_extra: tuple = ()   # extra scale samples (e.g. known landmarks)
    min_margin: float = 1e-9  # positivity threshold for rho1/rho2


@dataclass(frozen=True)
class CertificationReport:
    passed: bool
    rho1: float
    rho2: float
    eta: float
    grid: dict
    witnesses: dict
    seed: int

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        payload = {
            "passed": self.passed,
            "rho1": clean(self.rho1),
            "rho2": clean(self.rho2),
            "eta": self.eta,
            "grid": clean(self.grid),
            "witnesses": clean(self.witnesses),
            "seed": self.seed,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _haar_orthogonal(p: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix via QR of a Gaussian draw."""
    A = rng.standard_normal((p, p))
    Q, R = np.linalg.qr(A)
    return Q * np.sign(np.diag(R))


def orthogonal_samples(p: int, n_haar: int, seed: int):
    """Deterministic structured isometries plus seeded Haar draws."""
    if p == 1:
        return [np.array([[1.0]]), np.array([[-1.0]])]
    samples = [np.eye(p)]
    if p == 2:
        for ang in (0.5 * math.pi, math.pi, 1.5 * math.pi):
            c, s = math.cos(ang), math.sin(ang)
            samples.append(np.array([[c, -s], [s, c]]))
        samples.append(np.array([[1.0, 0.0], [0.0, -1.0]]))  # reflection
    rng = np.random.default_rng(seed)
    for _ in range(n_haar):
        samples.append(_haar_orthogonal(p, rng))
    return samples


def certify_template(system: SystemModel, spec: CompactSpec, v: ControlTemplate,
                     q: int, grid: GridParams = GridParams()) -> CertificationReport:
    """Grid certification of the injective-immersion property.

    rho2 is the minimum singular value of the observability-stack Jacobian
    over the whole (x, t, mu, R) grid; rho1 is the minimum separation ratio
    over state pairs at distance >= eta, where eta = 2x the grid-cell
    diagonal (the near-diagonal is covered by the Jacobian bound).
    """
    if q > jets.MAX_JET_DEPTH:
        raise CapabilityError(f"certification order {q} exceeds max jet depth")
    if system.m * (q + 1) < system.n:
        raise ConfigError(
            f"m(q+1) = {system.m * (q + 1)} < n = {system.n}: injectivity impossible"
        )
    box = spec.outer
    xs = box.grid(grid.nx)
    spacing = np.array(
        [(hi - lo) / (grid.nx - 1) if grid.nx > 1 else (hi - lo)
         for lo, hi in box.bounds]
    )
    eta = 2.0 * float(np.linalg.norm(spacing))
    if box.diameter > 0 and eta >= box.diameter:
        raise ConfigError("grid too coarse: near-diagonal radius covers the whole box")

    ts = np.linspace(0.0, v.T, grid.nt)
    mus = np.linspace(0.0, spec.lambda_bar, grid.nmu)
    if grid.mu_extra:
        mus = np.concatenate([mus, np.asarray(grid.mu_extra, dtype=float)])
    Rs = orthogonal_samples(system.p, grid.n_haar, grid.seed)

    dx = pdist(xs)
    far = (dx >= eta) & (dx > 0.0)
    has_pairs = bool(np.any(far))

    rho1 = math.inf
    rho2 = math.inf
    wit1 = None
    wit2 = None
    npts = xs.shape[0]
    iu = np.triu_indices(npts, k=1)
    for t in ts:
        for mu in mus:
            for R in Rs:
                stacks = np.empty((npts, system.m * (q + 1)))
                for i, x in enumerate(xs):
                    stacks[i] = jets._calh_values(system, x, t, v, mu, R, q)
                    J = jets.calH_jacobian(system, x, t, v, mu, R, q)
                    smin = float(np.linalg.svd(J, compute_uv=False)[-1])
                    if smin < rho2:
                        rho2 = smin
                        wit2 = {"x": x.copy(), "t": float(t), "mu": float(mu),
                                "sigma_min": smin}
                if has_pairs:
                    dH = pdist(stacks)
                    ratios = np.where(far, dH / np.where(dx > 0, dx, 1.0), math.inf)
                    k = int(np.argmin(ratios))
                    if ratios[k] < rho1:
                        rho1 = float(ratios[k])
                        wit1 = {"x_a": xs[iu[0][k]].copy(), "x_b": xs[iu[1][k]].copy(),
                                "t": float(t), "mu": float(mu),
                                "ratio": float(ratios[k])}
    passed = rho2 > grid.min_margin and (not has_pairs or rho1 > grid.min_margin)
    return CertificationReport(
        passed=passed,
        rho1=rho1,
        rho2=rho2,
        eta=eta,
        grid={
            "nx": grid.nx, "nt": grid.nt, "nmu": grid.nmu,
            "n_R": len(Rs), "n_haar": grid.n_haar,
            "mu_extra": list(grid.mu_extra),
            "n_x_points": int(npts),
        },
        witnesses={"separation": wit1, "immersion": wit2},
        seed=grid.seed,
    )


# ---------------------------------------------------------------------------
# Randomized search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchResult:
    template: ControlTemplate
    report: CertificationReport
    attempts_used: int
    succeeded: bool


def search_template(system: SystemModel, spec: CompactSpec, base: ControlTemplate,
                    degree: int, attempts: int, seed: int, q: int,
                    grid: GridParams = GridParams(),
                    noise_scale: float = 0.5) -> SearchResult:
    """Randomized template search: perturb, normalize, certify.

    Attempt 0 is the base itself.  Later attempts add uniform coefficient
    noise whose amplitude shrinks geometrically; the first certified
    candidate wins, otherwise the best failure by (rho2, rho1)
    lexicographic margin is returned.  Deterministic given the seed.
    """
    if attempts < 1:
        raise ConfigError("attempts must be >= 1")
    rng = np.random.default_rng(seed)
    base_coeffs = np.zeros((base.p, max(degree + 1, base.coeffs.shape[1])))
    base_coeffs[:, : base.coeffs.shape[1]] = base.coeffs
    best = None
    best_key = (-math.inf, -math.inf)
    for attempt in range(attempts):
        if attempt == 0:
            cand = ControlTemplate(T=base.T, coeffs=base_coeffs.copy())
        else:
            shrink = 0.97 ** (attempt - 1)
            noise = rng.uniform(-1.0, 1.0, size=base_coeffs.shape) * noise_scale * shrink
            coeffs = base_coeffs + noise
            cand = ControlTemplate(T=base.T, coeffs=coeffs)
            if np.linalg.norm(cand.value(0.0)) == 0.0:
                continue
            cand = normalize_template(cand)
        report = certify_template(system, spec, cand, q, grid)
        if report.passed:
            return SearchResult(template=cand.with_order(q), report=report,
                                attempts_used=attempt + 1, succeeded=True)
        key = (report.rho2, report.rho1 if math.isfinite(report.rho1) else math.inf)
        if key > best_key:
            best_key = key
            best = (cand, report)
    cand, report = best
    return SearchResult(template=cand, report=report,
                        attempts_used=attempts, succeeded=False)
