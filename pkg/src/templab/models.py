"""System descriptions, compact-set specifications and benchmark instances.

A :class:`SystemModel` supplies the vector field ``f``, the output map ``h``
and a stabilizing feedback ``lam`` as generic-over-scalar callables: the same
code path evaluates on plain floats, :class:`~templab.jets.Dual` numbers and
:class:`~templab.jets.JetScalar` jets.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import jets
from .errors import ConfigError


@dataclass(frozen=True)
class SystemModel:
    n: int
    p: int
    m: int
    f: Callable  # (x_seq, u_seq) -> seq of n scalars
    h: Callable  # (x_seq,) -> seq of m scalars
    lam: Callable  # (x_seq,) -> seq of p scalars
    name: str = "custom"
    V: Optional[Callable] = None  # Lyapunov value, optional

    def f_np(self, x, u):
        return np.array([jets.scalar_value(v) for v in self.f(list(x), list(u))])

    def h_np(self, x):
        return np.array([jets.scalar_value(v) for v in self.h(list(x))])

    def lam_np(self, x):
        return np.array([jets.scalar_value(v) for v in self.lam(list(x))])


class Box:
    """Axis-aligned box given by per-axis (lo, hi) bounds."""

    def __init__(self, bounds):
        self.bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
        if np.any(self.bounds[:, 0] > self.bounds[:, 1]):
            raise ConfigError("box lower bound exceeds upper bound")

    @property
    def dim(self):
        return self.bounds.shape[0]

    @property
    def diameter(self):
        return float(np.linalg.norm(self.bounds[:, 1] - self.bounds[:, 0]))

    def contains(self, x, slack=0.0):
        x = np.asarray(x)
        return bool(
            np.all(x >= self.bounds[:, 0] - slack)
            and np.all(x <= self.bounds[:, 1] + slack)
        )

    def grid(self, per_axis):
        if np.isscalar(per_axis):
            per_axis = [int(per_axis)] * self.dim
        axes = [
            np.linspace(lo, hi, k) if k > 1 else np.array([(lo + hi) / 2.0])
            for (lo, hi), k in zip(self.bounds, per_axis)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def corners(self):
        return self.grid([2] * self.dim)

    def max_norm(self):
        """Largest Euclidean norm over the box (attained at a corner)."""
        return float(np.max(np.linalg.norm(self.corners(), axis=1)))

    def strictly_inside(self, other: "Box"):
        return bool(
            np.all(self.bounds[:, 0] > other.bounds[:, 0])
            and np.all(self.bounds[:, 1] < other.bounds[:, 1])
        )


def _grid_max_lambda(system: SystemModel, box: Box, per_axis: int) -> float:
    pts = box.grid(per_axis)
    best = 0.0
    for x in pts:
        best = max(best, float(np.linalg.norm(system.lam_np(x))))
    return best


@dataclass(frozen=True)
class CompactSpec:
    """Working compacts: target box (inner) and invariant box (outer).

    ``lambda_bar`` is a grid maximum of the feedback magnitude over the outer
    box, inflated by a 10% safety margin since exact maximization is
    unavailable.
    """

    inner: Box
    outer: Box
    lambda_bar: float

    def __post_init__(self):
        degenerate_equal = (self.outer.diameter == 0.0
                            and np.array_equal(self.inner.bounds,
                                               self.outer.bounds))
        # single-point compacts are allowed (certification degenerates to a
        # pure immersion check there); otherwise inner must be strictly inside
        if not (self.inner.strictly_inside(self.outer) or degenerate_equal):
            raise ConfigError("inner box must lie strictly inside the outer box")
        if self.lambda_bar < 0:
            raise ConfigError("lambda_bar must be non-negative")

    @staticmethod
    def build(system: SystemModel, inner: Box, outer: Box, per_axis: int = 21,
              margin: float = 0.1) -> "CompactSpec":
        lb = _grid_max_lambda(system, outer, per_axis) * (1.0 + margin)
        return CompactSpec(inner=inner, outer=outer, lambda_bar=lb)

    def lambda_bar_refined(self, system: SystemModel, per_axis: int = 41,
                           margin: float = 0.1) -> float:
        return _grid_max_lambda(system, self.outer, per_axis) * (1.0 + margin)


def _smoothstep(t):
    """C-infinity step: 0 for t<=0, 1 for t>=1, flat at both junctions."""
    tv = jets.scalar_value(t)
    if tv <= 0.0:
        return 0.0
    if tv >= 1.0:
        return 1.0
    a = jets.exp(-1.0 / t)
    b = jets.exp(-1.0 / (1.0 - t))
    return a / (a + b)


class SatMap:
    """Smooth radial saturation: identity on the outer box, globally bounded.

    Identity holds for Euclidean norm <= rho (rho = largest norm over the
    outer box, so the whole box is covered); beyond that a flat-junction
    radial blend caps the norm at 2*rho over the transition band
    [rho, 2*rho].
    """

    def __init__(self, bound: float):
        if bound <= 0:
            raise ConfigError("saturation radius must be positive")
        self.bound = float(bound)

    @staticmethod
    def for_box(outer: Box) -> "SatMap":
        return SatMap(outer.max_norm())

    def __call__(self, x):
        rho = self.bound
        r2 = None
        for xi in x:
            r2 = xi * xi if r2 is None else r2 + xi * xi
        if jets.scalar_value(r2) <= rho * rho:
            return list(x)
        r = jets.sqrt(r2)
        w = _smoothstep((r - rho) * (1.0 / rho))
        g = r * (1.0 - w) + (2.0 * rho) * w
        scale = g / r
        return [xi * scale for xi in x]

    def apply_np(self, x):
        return np.array([jets.scalar_value(v) for v in self(list(np.asarray(x, dtype=float)))])


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Benchmark:
    system: SystemModel
    spec: CompactSpec
    sat: SatMap
    q: int
    delta: float
    theta: float
    T: float
    template_coeffs: np.ndarray  # (p, d+1) in normalized time


def _linear2d() -> Benchmark:
    # xdot = A x + B u, y = C x, with A double integrator and poles at -1,-1.
    def f(x, u):
        return [x[1], u[0]]

    def h(x):
        return [x[0]]

    def lam(x):
        return [-x[0] - 2.0 * x[1]]

    system = SystemModel(n=2, p=1, m=1, f=f, h=h, lam=lam, name="linear2d")
    inner = Box([[-0.5, 0.5], [-0.5, 0.5]])
    outer = Box([[-2.0, 2.0], [-2.0, 2.0]])
    spec = CompactSpec.build(system, inner, outer)
    return Benchmark(
        system=system, spec=spec, sat=SatMap.for_box(outer),
        q=1, delta=0.2, theta=6.0, T=1.0,
        template_coeffs=np.array([[1.0]]),
    )


def _bilinear2d() -> Benchmark:
    def f(x, u):
        return [x[1], -x[0] - x[1] + u[0] * (1.0 + x[0])]

    def h(x):
        return [x[0]]

    def lam(x):
        return [-0.5 * x[0] - 0.5 * x[1]]

    system = SystemModel(n=2, p=1, m=1, f=f, h=h, lam=lam, name="bilinear2d")
    inner = Box([[-0.5, 0.5], [-0.5, 0.5]])
    outer = Box([[-1.5, 1.5], [-1.5, 1.5]])
    spec = CompactSpec.build(system, inner, outer)
    return Benchmark(
        system=system, spec=spec, sat=SatMap.for_box(outer),
        q=1, delta=0.2, theta=8.0, T=1.0,
        template_coeffs=np.array([[1.0]]),
    )


def _bilinear_unobservable() -> Benchmark:
    # xdot = (A + u B) x with A = [[0,1],[-1,-1]], B = [[0,1],[0,0]].
    # The constant input u = -1 freezes x1, killing observability of x2
    # through y = x1 at every differential order.
    def f(x, u):
        return [x[1] + u[0] * x[1], -x[0] - x[1]]

    def h(x):
        return [x[0]]

    def lam(x):
        return [-x[0] - x[1]]

    system = SystemModel(n=2, p=1, m=1, f=f, h=h, lam=lam,
                         name="bilinear_unobservable")
    inner = Box([[-0.4, 0.4], [-0.4, 0.4]])
    outer = Box([[-1.0, 1.0], [-1.0, 1.0]])
    spec = CompactSpec.build(system, inner, outer)
    return Benchmark(
        system=system, spec=spec, sat=SatMap.for_box(outer),
        q=2, delta=0.2, theta=8.0, T=1.0,
        template_coeffs=np.array([[1.0, 0.5]]),
    )


_BUILTINS = {
    "linear2d": _linear2d,
    "bilinear2d": _bilinear2d,
    "bilinear_unobservable": _bilinear_unobservable,
}


def builtin_system(name: str) -> Benchmark:
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ConfigError(
            f"unknown system '{name}' (available: {', '.join(sorted(_BUILTINS))})"
        ) from None
    return factory()


def builtin_names():
    return sorted(_BUILTINS)


# ---------------------------------------------------------------------------
# State-feedback decay verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LesReport:
    min_nu: float
    all_contained: bool
    rates: list
    contained: list
    escapes: int


def verify_state_feedback_les(system: SystemModel, spec: CompactSpec,
                              horizon: float, grid: int = 3,
                              step: float = 0.005) -> LesReport:
    """Integrate xdot = f(x, lam(x)) from inner-box grid points and fit decay."""
    from .analysis import fit_rate

    if horizon <= 0:
        raise ConfigError("horizon must be positive")
    pts = spec.inner.grid(grid)
    rates, contained = [], []
    escapes = 0
    nsteps = max(int(round(horizon / step)), 10)
    h = horizon / nsteps
    for x0 in pts:
        x = np.asarray(x0, dtype=float)
        ts = np.empty(nsteps + 1)
        norms = np.empty(nsteps + 1)
        inside = True
        ts[0], norms[0] = 0.0, np.linalg.norm(x)
        kept = nsteps
        for i in range(nsteps):
            x = _rk4_step(system, x, h)
            if not np.all(np.isfinite(x)):
                escapes += 1
                inside = False
                kept = i
                break
            ts[i + 1] = (i + 1) * h
            norms[i + 1] = np.linalg.norm(x)
            if not spec.outer.contains(x):
                inside = False
        ts, norms = ts[: kept + 1], norms[: kept + 1]
        contained.append(inside)
        if norms[0] == 0.0 or len(ts) < 10:
            rates.append(math.inf if norms[0] == 0.0 else 0.0)
            continue
        fit = fit_rate(ts, norms, window=(0.0, ts[-1]))
        rates.append(fit.nu)
    finite = [r for r in rates if math.isfinite(r)]
    return LesReport(
        min_nu=min(finite) if finite else math.inf,
        all_contained=all(contained),
        rates=rates,
        contained=contained,
        escapes=escapes,
    )


def _rk4_step(system: SystemModel, x, h):
    def rhs(xv):
        return system.f_np(xv, system.lam_np(xv))

    k1 = rhs(x)
    k2 = rhs(x + 0.5 * h * k1)
    k3 = rhs(x + 0.5 * h * k2)
    k4 = rhs(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


# ---------------------------------------------------------------------------
# Expression-tree systems (config-definable, jet-evaluable)
# ---------------------------------------------------------------------------

_FUNCS = {"sin": jets.sin, "cos": jets.cos, "exp": jets.exp, "sqrt": jets.sqrt}

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


def _compile_expr(text: str, names: Sequence[str]) -> Callable:
    """Compile one scalar expression over the given variable names.

    Supports +, -, *, /, integer **, unary -, sin/cos/exp/sqrt and numeric
    constants; evaluates generically over floats, duals and jets.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"invalid expression {text!r}: {exc.msg}") from None

    name_index = {nm: i for i, nm in enumerate(names)}

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                raise ConfigError(f"non-numeric constant in {text!r}")
            c = float(node.value)
            return lambda env: c
        if isinstance(node, ast.Name):
            if node.id not in name_index:
                raise ConfigError(f"unknown variable {node.id!r} in {text!r}")
            i = name_index[node.id]
            return lambda env: env[i]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = build(node.operand)
            if isinstance(node.op, ast.UAdd):
                return inner
            return lambda env: -inner(env)
        if isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
            left, right = build(node.left), build(node.right)
            if isinstance(node.op, ast.Add):
                return lambda env: left(env) + right(env)
            if isinstance(node.op, ast.Sub):
                return lambda env: left(env) - right(env)
            if isinstance(node.op, ast.Mult):
                return lambda env: left(env) * right(env)
            if isinstance(node.op, ast.Div):
                return lambda env: left(env) / right(env)
            # power: exponent must be a non-negative integer literal
            if not (isinstance(node.right, ast.Constant)
                    and isinstance(node.right.value, int) and node.right.value >= 0):
                raise ConfigError(f"only non-negative integer powers allowed in {text!r}")
            k = node.right.value
            return lambda env: left(env) ** k
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            if node.func.id not in _FUNCS or len(node.args) != 1 or node.keywords:
                raise ConfigError(f"unsupported call in {text!r}")
            fn = _FUNCS[node.func.id]
            arg = build(node.args[0])
            return lambda env: fn(arg(env))
        raise ConfigError(f"unsupported syntax in expression {text!r}")

    return build(tree)


def system_from_expressions(n: int, p: int, m: int,
                            f_exprs: Sequence[str], h_exprs: Sequence[str],
                            lam_exprs: Sequence[str],
                            name: str = "custom") -> SystemModel:
    """Build a jet-evaluable SystemModel from expression strings.

    State variables are named x1..xn, inputs u1..up.
    """
    if len(f_exprs) != n or len(h_exprs) != m or len(lam_exprs) != p:
        raise ConfigError("expression counts must match declared dimensions")
    xnames = [f"x{i+1}" for i in range(n)]
    unames = [f"u{i+1}" for i in range(p)]
    f_fns = [_compile_expr(e, xnames + unames) for e in f_exprs]
    h_fns = [_compile_expr(e, xnames) for e in h_exprs]
    l_fns = [_compile_expr(e, xnames) for e in lam_exprs]

    def f(x, u):
        env = list(x) + list(u)
        return [fn(env) for fn in f_fns]

    def h(x):
        env = list(x)
        return [fn(env) for fn in h_fns]

    def lam(x):
        env = list(x)
        return [fn(env) for fn in l_fns]

    system = SystemModel(n=n, p=p, m=m, f=f, h=h, lam=lam, name=name)
    _check_normalization(system)
    return system


def _check_normalization(system: SystemModel, tol: float = 1e-9):
    zero = np.zeros(system.n)
    lam0 = system.lam_np(zero)
    h0 = system.h_np(zero)
    f0 = system.f_np(zero, lam0)
    if np.linalg.norm(lam0) > tol or np.linalg.norm(h0) > tol:
        raise ConfigError("system must satisfy lambda(0)=0 and h(0)=0")
    if np.linalg.norm(f0) > tol:
        raise ConfigError("origin must be an equilibrium: f(0, lambda(0)) = 0")
