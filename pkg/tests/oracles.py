"""Reference computations that share no code with the package.

Dense-matrix oracles use numpy linear algebra directly; the closed forms
for the three-parameter kernel are re-derived here from the Poisson
structure of its stem process.
"""

import math

import numpy as np
from scipy.stats import poisson


def random_atom_kernel(rng, n):
    """Positive ``M`` with entries U(0, 1) and a random atom keeping ``m >= 0``."""
    M = rng.random((n, n))
    gamma = rng.random(n) + 0.05
    g = rng.uniform(0.1, 0.9, n) * np.min(M / gamma[None, :], axis=1)
    return M, g, gamma


def dominant_eig(M):
    """Perron root with right/left eigenvectors from ``numpy.linalg.eig``."""
    w, V = np.linalg.eig(M)
    k = int(np.argmax(w.real))
    wl, U = np.linalg.eig(M.T)
    kl = int(np.argmax(wl.real))
    v = np.abs(V[:, k].real)
    u = np.abs(U[:, kl].real)
    return float(w[k].real), v, u


def projection(M):
    """``lim (M / rho)^n`` for a primitive matrix."""
    rho, v, u = dominant_eig(M)
    return np.outer(v, u) / float(u @ v)


def f_coefficients(m, g, gamma, N):
    """``f_n = gamma m^{n-1} g`` by explicit matrix powers."""
    return np.array([gamma @ np.linalg.matrix_power(m, n - 1) @ g for n in range(1, N + 1)])


def renewal_division(f, N):
    """Coefficients of ``f / (1 - f)`` by the convolution recursion, in plain Python."""
    F = [0.0] * (N + 1)
    fl = [0.0] + list(f[:N])
    for n in range(1, N + 1):
        F[n] = fl[n] + sum(fl[n - k] * F[k] for k in range(1, n))
    return np.array(F[1:])


# three-parameter kernel: M(x, dy) = a e^{x-y} 1{y>=x} dy + c e^{-bx} delta_0(dy)


def ex_r(a, b):
    return (1 + b) / a


def ex_R(a, b, c):
    r = ex_r(a, b)
    return r / (1 + c * r)


def ex_f(a, b, c, s):
    """Sum over n of s^n c r^{1-n}: each stem generation has Gamma(n) displacement."""
    r = ex_r(a, b)
    return c * r * s / (r - s)


def ex_fprime(a, b, c, s):
    r = ex_r(a, b)
    return c * r * r / (r - s) ** 2


def ex_stem_power(a, n, x, t):
    """``m^n(x, [0, t])``: n exponential steps from x stay below t."""
    if n == 0:
        return float(x <= t)
    return a**n * poisson.sf(n - 1, t - x) if t >= x else 0.0


def ex_pi(a, s, t):
    """``pi_s([0, t]) = s + a s^2 int_0^t e^{(as - 1) y} dy``."""
    k = a * s - 1
    integral = t if k == 0 else math.expm1(k * t) / k
    return s + a * s * s * integral


def ex_target_limit(a, b, c, x, t):
    """Acceptance target for A = [0, t]: ``h(x) pi([0, t])`` at ``R`` without the ``1 / (R^2 f'(R)) = c`` factor."""
    R = ex_R(a, b, c)
    return math.exp(-b * x) * (a * R * R * math.exp((a * R - 1) * t) - R) / (a * R - 1)


def ex_target_limit_whole(a, b, c, x):
    """Acceptance target for A = E (needs ``aR < 1``), also without the factor ``c``."""
    R = ex_R(a, b, c)
    return R * math.exp(-b * x) / (1 - a * R)
