"""Truncated Taylor-jet arithmetic and output-derivative stacks.

Jet coefficients are stored as raw derivatives (not Taylor-normalized), so
coefficient ``j`` of a jet is the j-th time derivative at the expansion
point.  All recurrences below are written in terms of raw derivatives via
binomial (Leibniz) weights.

The scalar type is generic: arithmetic works on plain floats and on
:class:`Dual` numbers, which is how forward sensitivities (Jacobians of the
observability stack) are obtained without finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CapabilityError, NumericalError

#: Hard limit on jet depth.  Requests beyond this raise CapabilityError
#: instead of silently truncating.
MAX_JET_DEPTH = 8

_BINOM = [[math.comb(k, i) for i in range(k + 1)] for k in range(MAX_JET_DEPTH + 2)]


# ---------------------------------------------------------------------------
# Dual numbers (first-order forward sensitivities)
# ---------------------------------------------------------------------------


class Dual:
    """Scalar carrying a value and a gradient with respect to seed directions."""

    __slots__ = ("v", "g")

    def __init__(self, v, g):
        self.v = v
        self.g = np.asarray(g, dtype=float)

    def __repr__(self):
        return f"Dual({self.v!r}, {self.g!r})"

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.v + o.v, self.g + o.g)
        return Dual(self.v + o, self.g)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.v, -self.g)

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.v - o.v, self.g - o.g)
        return Dual(self.v - o, self.g)

    def __rsub__(self, o):
        return Dual(o - self.v, -self.g)

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.v * o.v, self.v * o.g + o.v * self.g)
        return Dual(self.v * o, self.g * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            inv = 1.0 / o.v
            return Dual(self.v * inv, (self.g - (self.v * inv) * o.g) * inv)
        inv = 1.0 / o
        return Dual(self.v * inv, self.g * inv)

    def __rtruediv__(self, o):
        inv = 1.0 / self.v
        return Dual(o * inv, (-o * inv * inv) * self.g)

    def __pow__(self, k):
        if not isinstance(k, int):
            raise TypeError("Dual only supports integer powers")
        if k == 0:
            return Dual(1.0, np.zeros_like(self.g))
        r = self
        for _ in range(k - 1):
            r = r * self
        return r


def scalar_value(x):
    """Plain float value of a float, Dual or JetScalar."""
    if isinstance(x, JetScalar):
        x = x.c[0]
    if isinstance(x, Dual):
        return float(x.v)
    return float(x)


# ---------------------------------------------------------------------------
# Jet scalars
# ---------------------------------------------------------------------------


class JetScalar:
    """One scalar signal truncated at a fixed derivative order.

    ``c[j]`` is the raw j-th derivative at the expansion point.  Binary
    operations between two JetScalars require equal orders; plain scalars
    (floats, Duals) broadcast as constants.
    """

    __slots__ = ("c",)

    def __init__(self, coeffs):
        self.c = list(coeffs)

    @property
    def order(self):
        return len(self.c) - 1

    def __repr__(self):
        return f"JetScalar({self.c!r})"

    def _other_coeffs(self, o):
        if isinstance(o, JetScalar):
            if len(o.c) != len(self.c):
                raise ValueError("jet order mismatch")
            return o.c
        return [o] + [0.0] * self.order

    def __add__(self, o):
        oc = self._other_coeffs(o)
        return JetScalar([a + b for a, b in zip(self.c, oc)])

    __radd__ = __add__

    def __neg__(self):
        return JetScalar([-a for a in self.c])

    def __sub__(self, o):
        oc = self._other_coeffs(o)
        return JetScalar([a - b for a, b in zip(self.c, oc)])

    def __rsub__(self, o):
        oc = self._other_coeffs(o)
        return JetScalar([b - a for a, b in zip(self.c, oc)])

    def __mul__(self, o):
        if not isinstance(o, JetScalar):
            return JetScalar([a * o for a in self.c])
        if len(o.c) != len(self.c):
            raise ValueError("jet order mismatch")
        a, b = self.c, o.c
        out = []
        for k in range(len(a)):
            bk = _BINOM[k]
            s = a[0] * b[k]
            for i in range(1, k + 1):
                s = s + bk[i] * a[i] * b[k - i]
            out.append(s)
        return JetScalar(out)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if not isinstance(o, JetScalar):
            return JetScalar([a * (1.0 / o) for a in self.c])
        return _jet_div(self, o)

    def __rtruediv__(self, o):
        num = JetScalar([o] + [0.0] * self.order)
        return _jet_div(num, self)

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise TypeError("JetScalar only supports non-negative integer powers")
        r = JetScalar([1.0] + [0.0] * self.order)
        for _ in range(k):
            r = r * self
        return r


def _jet_div(f: JetScalar, g: JetScalar) -> JetScalar:
    if len(f.c) != len(g.c):
        raise ValueError("jet order mismatch")
    inv_g0 = 1.0 / g.c[0]
    out = [f.c[0] * inv_g0]
    for k in range(1, len(f.c)):
        bk = _BINOM[k]
        s = f.c[k]
        for i in range(k):
            s = s - bk[i] * out[i] * g.c[k - i]
        out.append(s * inv_g0)
    return JetScalar(out)


def _lift(fn_float, fn_dual_pair):
    """Build a unary function working on floats, Duals and JetScalars.

    ``fn_dual_pair(v)`` must return ``(f(v), f'(v))`` for a scalar v.
    """

    def apply(x):
        if isinstance(x, JetScalar):
            raise TypeError("internal: jet branch handled by caller")
        if isinstance(x, Dual):
            fv, dfv = fn_dual_pair(x.v)
            return Dual(fv, dfv * x.g)
        return fn_float(x)

    return apply


_exp0 = _lift(math.exp, lambda v: (math.exp(v), math.exp(v)))
_sin0 = _lift(math.sin, lambda v: (math.sin(v), math.cos(v)))
_cos0 = _lift(math.cos, lambda v: (math.cos(v), -math.sin(v)))
_sqrt0 = _lift(math.sqrt, lambda v: (math.sqrt(v), 0.5 / math.sqrt(v)))


def exp(x):
    if not isinstance(x, JetScalar):
        return _exp0(x)
    u = x.c
    e = [_exp0(u[0])]
    # e' = u' e  =>  e^{(k+1)} = sum_i C(k,i) u^{(i+1)} e^{(k-i)}
    for k in range(len(u) - 1):
        bk = _BINOM[k]
        s = 0.0
        for i in range(k + 1):
            s = s + bk[i] * u[i + 1] * e[k - i]
        e.append(s)
    return JetScalar(e)


def sincos(x):
    """Jointly propagated (sin, cos) pair."""
    if not isinstance(x, JetScalar):
        return _sin0(x), _cos0(x)
    u = x.c
    s = [_sin0(u[0])]
    c = [_cos0(u[0])]
    for k in range(len(u) - 1):
        bk = _BINOM[k]
        ds = 0.0
        dc = 0.0
        for i in range(k + 1):
            ds = ds + bk[i] * u[i + 1] * c[k - i]
            dc = dc - bk[i] * u[i + 1] * s[k - i]
        s.append(ds)
        c.append(dc)
    return JetScalar(s), JetScalar(c)


def sin(x):
    return sincos(x)[0]


def cos(x):
    return sincos(x)[1]


def sqrt(x):
    if not isinstance(x, JetScalar):
        return _sqrt0(x)
    f = x.c
    s = [_sqrt0(f[0])]
    half_inv_s0 = 0.5 / s[0]
    # s^2 = f  =>  s^{(k)} = (f^{(k)} - sum_{0<i<k} C(k,i) s^{(i)} s^{(k-i)}) / (2 s0)
    for k in range(1, len(f)):
        bk = _BINOM[k]
        acc = f[k]
        for i in range(1, k):
            acc = acc - bk[i] * s[i] * s[k - i]
        s.append(acc * half_inv_s0)
    return JetScalar(s)


# ---------------------------------------------------------------------------
# Public jet containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Jet:
    """Truncated jet of a vector signal: raw derivatives 0..order."""

    order: int
    coeffs: np.ndarray  # shape (order+1, dim)

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.ndim == 1:
            coeffs = coeffs[:, None]
        object.__setattr__(self, "coeffs", coeffs)
        if coeffs.shape[0] != self.order + 1:
            raise ValueError("coeffs must have order+1 rows")

    @property
    def dim(self):
        return self.coeffs.shape[1]


@dataclass(frozen=True)
class ObservabilityStack:
    """Stacked output derivatives: block j holds the j-th output derivative."""

    k: int
    values: np.ndarray  # shape (m*(k+1),)

    def block(self, j: int) -> np.ndarray:
        m = self.values.shape[0] // (self.k + 1)
        return self.values[j * m : (j + 1) * m]


# ---------------------------------------------------------------------------
# Output-derivative maps
# ---------------------------------------------------------------------------


def _check_depth(k: int):
    if k > MAX_JET_DEPTH:
        raise CapabilityError(
            f"requested jet depth {k} exceeds maximum {MAX_JET_DEPTH}"
        )
    if k < 0:
        raise ValueError("order must be non-negative")


def _output_jet(system, x, u_coeffs, order):
    """Raw output derivatives 0..order of t -> h(X(x,t,u)).

    ``x``: sequence of n scalars (floats or Duals).
    ``u_coeffs``: sequence of >= order rows, row j = u^{(j)}(0), entries
    scalar-like.  The state jet is propagated through xdot = f(x,u) one
    coefficient at a time; coefficient j+1 of the state is coefficient j of
    the evaluated vector field.
    """
    n = system.n
    p = system.p
    X = [[xi] for xi in x]
    for j in range(order):
        xj = [JetScalar(X[i]) for i in range(n)]
        uj = [JetScalar([u_coeffs[l][i] for l in range(j + 1)]) for i in range(p)]
        fx = system.f(xj, uj)
        for i in range(n):
            fi = fx[i]
            if isinstance(fi, JetScalar):
                X[i].append(fi.c[j])
            else:
                X[i].append(fi if j == 0 else 0.0)
    xfull = [JetScalar(X[i]) for i in range(n)]
    y = system.h(xfull)
    out = []
    for yi in y:
        if isinstance(yi, JetScalar):
            out.append(yi.c)
        else:
            out.append([yi] + [0.0] * order)
    return out  # m lists of length order+1


def hk(system, x, sigma, k: int) -> np.ndarray:
    """k-th output derivative map H_k(x, sigma_0..sigma_{k-1}).

    ``sigma`` is the input jet at the evaluation time: a :class:`Jet`, an
    array of shape (>=k, p), or None for the null input.
    """
    _check_depth(k)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite state")
    if sigma is None:
        u_coeffs = np.zeros((max(k, 1), system.p))
    elif isinstance(sigma, Jet):
        u_coeffs = sigma.coeffs
    else:
        u_coeffs = np.asarray(sigma, dtype=float)
        if u_coeffs.ndim == 1:
            u_coeffs = u_coeffs[:, None]
    if k >= 1 and u_coeffs.shape[0] < k:
        raise ValueError(f"input jet must provide orders 0..{k-1}")
    yj = _output_jet(system, list(x), u_coeffs, k)
    out = np.array([float(c[k]) for c in yj])
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite output derivative")
    return out


def _scaled_input_jet(input_signal, t, mu, R, order):
    """Raw derivatives 0..order of s -> mu R u(s) at s=t; shape (order+1, p)."""
    base = input_signal.jet(t, order)  # (order+1, p)
    return mu * (base @ np.asarray(R).T)


def _calh_values(system, x, t, input_signal, mu, R, q):
    u_coeffs = _scaled_input_jet(input_signal, t, mu, R, max(q - 1, 0))
    yj = _output_jet(system, list(x), u_coeffs, q)
    vals = np.empty(system.m * (q + 1))
    for j in range(q + 1):
        for i in range(system.m):
            vals[j * system.m + i] = float(yj[i][j])
    return vals


def _check_orthogonal(R, p, tol=1e-10):
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape != (p, p):
        raise ValueError(f"R must be {p}x{p}")
    if np.max(np.abs(R.T @ R - np.eye(p))) > tol:
        raise ValueError("R is not orthogonal within tolerance")
    return R


def calH(system, x, t, input_signal, mu, R, q: int) -> ObservabilityStack:
    """Observability stack of x along the input s -> mu R u(s), orders 0..q.

    ``input_signal`` must expose ``jet(t, order) -> (order+1, p)`` with exact
    derivatives (e.g. a polynomial control template or a constant signal).
    """
    _check_depth(q)
    R = _check_orthogonal(R, system.p)
    x = np.asarray(x, dtype=float)
    vals = _calh_values(system, x, t, input_signal, float(mu), R, q)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("non-finite observability stack")
    return ObservabilityStack(k=q, values=vals)


def calH_jacobian(system, x, t, input_signal, mu, R, q: int) -> np.ndarray:
    """Jacobian of x -> calH(x, t, mu R u) by forward (dual) sensitivity."""
    _check_depth(q)
    R = _check_orthogonal(R, system.p)
    x = np.asarray(x, dtype=float)
    n = system.n
    seeds = np.eye(n)
    xd = [Dual(float(x[i]), seeds[i]) for i in range(n)]
    u_coeffs = _scaled_input_jet(input_signal, t, float(mu), R, max(q - 1, 0))
    yj = _output_jet(system, xd, u_coeffs, q)
    J = np.empty((system.m * (q + 1), n))
    for j in range(q + 1):
        for i in range(system.m):
            cij = yj[i][j]
            if isinstance(cij, Dual):
                J[j * system.m + i] = cij.g
            else:
                J[j * system.m + i] = 0.0
    if not np.all(np.isfinite(J)):
        raise NumericalError("non-finite Jacobian")
    return J


class ConstantSignal:
    """Constant vector input with exact (zero) derivatives."""

    def __init__(self, value: Sequence[float]):
        self.value = np.atleast_1d(np.asarray(value, dtype=float))

    def jet(self, t, order):
        out = np.zeros((order + 1, self.value.shape[0]))
        out[0] = self.value
        return out


NULL_INPUT_CACHE = {}


def null_signal(p: int) -> ConstantSignal:
    if p not in NULL_INPUT_CACHE:
        NULL_INPUT_CACHE[p] = ConstantSignal(np.zeros(p))
    return NULL_INPUT_CACHE[p]
