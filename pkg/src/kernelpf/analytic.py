"""Closed forms for the three-parameter kernel on ``[0, inf)``.

    M(x, dy) = a e^{x-y} 1{y >= x} dy + c e^{-bx} delta_0(dy),  a, c > 0, b > -1.

Stem particles of type ``x`` have children at ``x + Exp(1)``; the number of
stem generations needed to pass a level is Poisson, which gives every
quantity below in closed form.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from scipy.stats import poisson

from .errors import DivergentSeriesError, InvalidAtomError


def _check(a: float, b: float, c: float):
    if not (a > 0 and c > 0 and b > -1):
        raise InvalidAtomError(f"need a > 0, c > 0, b > -1; got a={a}, b={b}, c={c}")


def _expm1_ratio(u: float, eps: float) -> float:
    """``(exp(u eps) - 1) / eps`` with the ``eps -> 0`` limit ``u``."""
    if eps == 0.0:
        return u
    return math.expm1(u * eps) / eps


def radius(a: float, b: float) -> float:
    return (1.0 + b) / a


def convergence_parameter(a: float, b: float, c: float) -> float:
    r = radius(a, b)
    return r / (1.0 + c * r)


def f_closed(a: float, b: float, c: float, s: float) -> float:
    r = radius(a, b)
    if s >= r:
        raise DivergentSeriesError(f"f(s) diverges for s >= r = {r:g}")
    return r * c * s / (r - s)


def f_prime_closed(a: float, b: float, c: float, s: float) -> float:
    r = radius(a, b)
    if s >= r:
        raise DivergentSeriesError(f"f'(s) diverges for s >= r = {r:g}")
    return r * r * c / (r - s) ** 2


def f_coefficient(a: float, b: float, c: float, n: int) -> float:
    """``f_n = c r^{1-n}`` from the geometric expansion of ``f``."""
    return c * radius(a, b) ** (1 - n)


def criticality(a: float, b: float, c: float) -> str:
    """Compare ``c`` with the boundary ``(r - 1) / r``."""
    r = radius(a, b)
    boundary = (r - 1.0) / r
    if math.isclose(c, boundary, rel_tol=1e-12, abs_tol=1e-15):
        return "critical"
    return "supercritical" if c > boundary else "subcritical"


def kernel_mass_closed(a: float, b: float, c: float, x: float, t: float) -> float:
    """``M(x, [0, t])``."""
    stem = a * (1.0 - math.exp(x - t)) if t >= x else 0.0
    return stem + c * math.exp(-b * x)


def stem_power_closed(a: float, n: int, x: float, t: float) -> float:
    """``m^n(x, [0, t]) = a^n P(Poisson(t - x) >= n)``."""
    if n == 0:
        return float(0.0 <= x <= t)
    if t < x:
        return 0.0
    return a**n * float(poisson.sf(n - 1, t - x))


def m_s_closed(a: float, s: float, x: float, t: float) -> float:
    """``m_s(x, [0, t]) = sum_n s^n m^{n-1}(x, [0, t])``."""
    if t < x:
        return 0.0
    u, eps = t - x, a * s - 1.0
    return s * (_expm1_ratio(u, eps) + math.exp(u * eps))


def h_s_closed(a: float, b: float, c: float, s: float, x: float) -> float:
    return f_closed(a, b, c, s) * math.exp(-b * x)


def pi_s_closed(a: float, s: float, t: float) -> float:
    """``pi_s([0, t]) = s + a s^2 int_0^t e^{(as-1)y} dy``."""
    return s + a * s * s * _expm1_ratio(t, a * s - 1.0)


def pi_s_density(a: float, s: float, y: float) -> float:
    return a * s * s * math.exp((a * s - 1.0) * y)


@dataclass(frozen=True)
class AnalyticReference:
    a: float
    b: float
    c: float
    s: float
    x: float
    t: float
    r: float
    R: float
    f_s: float
    f_prime_s: float
    m_s: float
    h_s: float
    pi_s: float
    #: R^2 f'(R), equal to 1/c for this family
    normalizer: float
    #: lim R^n M^n(x, [0, t]) = h(x) pi([0, t]) / (R^2 f'(R))
    limit: float
    #: h(x) pi([0, t]) without the normalizer
    h_pi_product: float
    #: lim R^n M^n(x, E) when aR < 1, else None
    limit_whole: float | None
    criticality: str

    def to_dict(self) -> dict:
        return asdict(self)


def analytic_reference(a: float, b: float, c: float, s: float, x: float, t: float) -> AnalyticReference:
    """Closed-form reference values at ``(s, x, [0, t])``; requires ``0 < s < r``."""
    _check(a, b, c)
    r = radius(a, b)
    if not 0 < s < r:
        raise DivergentSeriesError(f"need 0 < s < r = {r:g}, got s = {s:g}")
    R = convergence_parameter(a, b, c)
    f_s = f_closed(a, b, c, s)
    fp_s = f_prime_closed(a, b, c, s)
    normalizer = R * R * f_prime_closed(a, b, c, R)
    h_R = math.exp(-b * x)
    hp = h_R * pi_s_closed(a, R, t)
    whole = None
    if a * R < 1:
        whole = h_R * (R / (1.0 - a * R)) / normalizer
    return AnalyticReference(
        a=a, b=b, c=c, s=s, x=x, t=t, r=r, R=R,
        f_s=f_s,
        f_prime_s=fp_s,
        m_s=m_s_closed(a, s, x, t),
        h_s=h_s_closed(a, b, c, s, x),
        pi_s=pi_s_closed(a, s, t),
        normalizer=normalizer,
        limit=hp / normalizer,
        h_pi_product=hp,
        limit_whole=whole,
        criticality=criticality(a, b, c),
    )
