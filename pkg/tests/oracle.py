"""Independent shooting solver for the scalar radial problem -u'' - (d-1)/r u' + lam u = mu u^3.

Used as an oracle only: it shares no code with the package.
"""
import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

# u(0) brackets on the unit ball in dimension 1 with lam = mu = 1, by node count
BRACKETS = {0: (2.0, 3.0), 1: (5.0, 6.1), 2: (9.0, 10.1)}


def shoot(a, dim=1, lam=1.0, mu=1.0, R=1.0):
    def rhs(r, y):
        u, v = y
        if r == 0.0:
            return [v, (lam * u - mu * u ** 3) / dim]
        return [v, -(dim - 1) / r * v + lam * u - mu * u ** 3]
    return solve_ivp(rhs, [0.0, R], [a, 0.0], method="DOP853", rtol=1e-12, atol=1e-13,
                     dense_output=True)


def nodal_solution(P, dim=1, R=1.0):
    """``(u(0), callable profile)`` of the solution with ``P`` interior zeros."""
    lo, hi = BRACKETS[P]
    a = brentq(lambda s: shoot(s, dim, R=R).sol(R)[0], lo, hi, xtol=1e-14)
    sol = shoot(a, dim, R=R)
    return a, lambda r: sol.sol(np.asarray(r))[0]


def interior_zeros(profile, R=1.0, n=20001):
    u = profile(np.linspace(0.0, R, n))[1:-1]
    return int(np.count_nonzero(np.sign(u[1:]) != np.sign(u[:-1])))
