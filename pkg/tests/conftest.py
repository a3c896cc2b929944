"""Shared oracles for the test suite.

The jet code is validated against two independent references: closed-form
derivatives where available, and Richardson-extrapolated finite differences
of the output of a high-accuracy ODE integration (which never touches the
jet recurrences).
"""

import math

import numpy as np
from scipy.integrate import solve_ivp

from templab.jets import _scaled_input_jet


def integrated_output(system, x0, input_signal, mu, R, t_grid):
    """y(t) on t_grid by integrating xdot = f(x, mu R u(t)) with solve_ivp."""
    R = np.atleast_2d(np.asarray(R, dtype=float))

    def rhs(t, x):
        u = mu * (R @ input_signal.jet(t, 0)[0])
        return system.f_np(x, u)

    t_grid = np.asarray(t_grid, dtype=float)
    lo, hi = float(np.min(t_grid)), float(np.max(t_grid))
    sol = solve_ivp(rhs, (0.0, hi) if lo >= 0 else (0.0, lo), np.asarray(x0, float),
                    t_eval=None, rtol=1e-12, atol=1e-13, dense_output=True,
                    method="DOP853")
    if lo < 0 <= hi:
        sol_neg = solve_ivp(rhs, (0.0, lo), np.asarray(x0, float),
                            rtol=1e-12, atol=1e-13, dense_output=True,
                            method="DOP853")

        def x_at(t):
            return sol_neg.sol(t) if t < 0 else sol.sol(t)
    else:
        def x_at(t):
            return sol.sol(t)
    return np.array([system.h_np(x_at(t)) for t in t_grid])


def central_fd(y_of_t, t0, k, h):
    """Second-order central difference for the k-th derivative."""
    if k == 0:
        return y_of_t(t0)
    total = 0.0
    for i in range(k + 1):
        total = total + (-1.0) ** i * math.comb(k, i) * y_of_t(t0 + (k / 2.0 - i) * h)
    return total / h ** k


def richardson_fd(y_of_t, t0, k, h, levels=2):
    """Richardson extrapolation of the central difference (error O(h^2))."""
    table = [central_fd(y_of_t, t0, k, h / 2.0 ** j) for j in range(levels + 1)]
    fac = 4.0
    while len(table) > 1:
        table = [(fac * b - a) / (fac - 1.0) for a, b in zip(table, table[1:])]
        fac *= 4.0
    return table[0]


def output_derivative_oracle(system, x0, input_signal, mu, R, k, h=0.08):
    """FD oracle for H_k via the integrated output, independent of jets."""

    cache = {}

    def y(t):
        key = round(t, 15)
        if key not in cache:
            cache[key] = integrated_output(system, x0, input_signal, mu, R, [t])[0]
        return cache[key]

    return richardson_fd(y, 0.0, k, h)


def input_jet_at(input_signal, t, mu, R, order):
    return _scaled_input_jet(input_signal, t, mu,
                             np.atleast_2d(np.asarray(R, float)), order)
