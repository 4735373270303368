"""Generating functions of an atom kernel and the convergence parameter.

``f_n`` counts clusters produced at age ``n`` by the stem process started
from one cluster, ``F_n`` counts all clusters born at time ``n``.  Both come
from iterating the discretized kernel on ``g`` and integrating against
``gamma``; ``F`` must equal ``f / (1 - f)`` coefficient-wise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from .errors import (
    AssumptionViolatedError,
    DimensionError,
    InconclusiveAtRadiusError,
    RadiusZeroError,
)
from scipy.sparse.csgraph import breadth_first_order

from .kernel import AnalyticKernel, AtomKernel, Measure

DEFAULT_N = 200
ROOT_TOL = 1e-12
INFINITE_DERIVATIVE = 1e8


class RadiusWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SeriesValue:
    value: float
    tail_bound: float
    terms: int

    @property
    def upper(self) -> float:
        return self.value + self.tail_bound


@dataclass(frozen=True, eq=False)
class PowerSeries:
    """Truncated series ``sum_{n=0}^N c_n s^n`` with non-negative coefficients.

    Coefficients are stored as ``a_n = c_n / unit^n`` so that fast-growing
    sequences stay in floating-point range; ``unit = 1`` stores ``c_n``
    directly.  ``exact_radius`` short-circuits radius estimation for
    closed-form variants and fixes the tail ratio used in truncation bounds.
    ``closed``/``closed_prime``, when given, evaluate the full series and its
    derivative exactly inside the radius (used for finite kernels).
    """

    coeffs: np.ndarray
    exact_radius: float | None = None
    unit: float = 1.0
    closed: Callable[[float], float] | None = None
    closed_prime: Callable[[float], float] | None = None

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 1 or len(c) == 0:
            raise DimensionError("coefficients must be a non-empty 1-d sequence")
        if np.any(c < 0):
            raise ValueError("power series coefficients must be non-negative")
        if not self.unit > 0:
            raise ValueError("unit must be positive")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_terms(cls, terms, exact_radius=None, unit: float = 1.0, **kw) -> "PowerSeries":
        """Build from ``a_1 .. a_N`` (``a_0 = 0``)."""
        return cls(np.concatenate([[0.0], np.asarray(terms, dtype=float)]), exact_radius, unit, **kw)

    @property
    def N(self) -> int:
        return len(self.coeffs) - 1

    def __getitem__(self, n: int) -> float:
        """True coefficient ``c_n`` (may overflow to ``inf`` for large units)."""
        if not 0 <= n <= self.N:
            return 0.0
        with np.errstate(over="ignore"):
            return float(self.coeffs[n] * self.unit**n)

    @property
    def terms(self) -> np.ndarray:
        """``c_1 .. c_N``."""
        return np.array([self[n] for n in range(1, self.N + 1)])

    def nonzero_indices(self) -> np.ndarray:
        return np.flatnonzero(self.coeffs > 0)

    def period(self) -> int:
        """gcd of the indices of non-zero coefficients (1 = aperiodic)."""
        idx = self.nonzero_indices()
        idx = idx[idx > 0]
        return int(np.gcd.reduce(idx)) if len(idx) else 0

    def is_polynomial(self) -> bool:
        """Fewer than five non-zero coefficients, all well before the cut-off."""
        idx = self.nonzero_indices()
        return len(idx) < 5 and (len(idx) == 0 or idx[-1] < self.N // 2)

    @cached_property
    def _ratio(self) -> float:
        if self.exact_radius is not None:
            return 0.0 if math.isinf(self.exact_radius) else 1.0 / self.exact_radius
        if self.is_polynomial():
            return 0.0
        return 1.0 / estimate_radius(self)

    def tail_ratio(self) -> float:
        """Estimate of ``lim c_{n+1} / c_n``; 0 for polynomials."""
        return self._ratio

    def __call__(self, s: float) -> float:
        return self.evaluate(s).value

    def evaluate(self, s: float) -> SeriesValue:
        """Partial sum in ascending order plus the geometric tail bound.

        Inside the radius a closed form, if attached, replaces the partial
        sum and the tail bound is zero.
        """
        if self.closed is not None and (self.exact_radius is None or s < self.exact_radius):
            return SeriesValue(float(self.closed(s)), 0.0, self.N)
        terms = self.term_values(s)
        return SeriesValue(float(np.sum(terms)), self._tail(terms, s), self.N)

    def term_values(self, s: float) -> np.ndarray:
        """``c_n s^n`` for ``n = 0..N``."""
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            t = self.coeffs * (self.unit * s) ** np.arange(self.N + 1, dtype=float)
        return np.where(self.coeffs > 0, t, 0.0)

    def _tail(self, terms: np.ndarray, s: float) -> float:
        if self.is_polynomial() and (self.exact_radius is None or math.isinf(self.exact_radius)):
            return 0.0
        q = self.tail_ratio() * s
        if q >= 1.0 + 1e-9:
            return math.inf
        if q >= 1.0 - 1e-9:
            # evaluation at the radius: only algebraically decaying terms are summable
            return _power_tail(terms)
        return float(terms[-1] * q / (1.0 - q))

    def derivative(self) -> "PowerSeries":
        n = np.arange(1, self.N + 1)
        return PowerSeries(np.concatenate([n * self.coeffs[1:] * self.unit, [0.0]]),
                           self.exact_radius, self.unit, self.closed_prime)

    def scaled(self, k: float) -> "PowerSeries":
        closed = None if self.closed is None else (lambda s, f=self.closed: k * f(s))
        prime = None if self.closed_prime is None else (lambda s, f=self.closed_prime: k * f(s))
        return PowerSeries(k * self.coeffs, self.exact_radius, self.unit, closed, prime)


def _power_tail(terms: np.ndarray) -> float:
    """Tail estimate for terms decaying like ``C n^{-p}``; inf unless ``p > 1``."""
    n = np.arange(len(terms))
    win = slice(len(terms) * 3 // 4, len(terms))
    t, k = terms[win], n[win]
    pos = t > 0
    if pos.sum() < 5:
        return 0.0 if not np.any(terms[len(terms) // 2:]) else math.inf
    p = -np.polyfit(np.log(k[pos]), np.log(t[pos]), 1)[0]
    if p <= 1.05:
        return math.inf
    N = k[pos][-1]
    return float(t[pos][-1] * N / (p - 1.0))


# ---------------------------------------------------------------------------
# coefficients


def _pair(mu: Measure, K: AtomKernel, v: np.ndarray, v_prev: np.ndarray | None, part: str) -> float:
    """``int phi dmu`` where ``phi`` has point values ``v`` (``v = mat @ v_prev``)."""
    val = float(mu.masses @ v)
    if mu.extra_masses.size:
        for loc, mass in zip(mu.extra_locs, mu.extra_masses):
            i = K.point_index(loc)
            if i is not None:
                val += mass * v[i]
            elif v_prev is None:
                val += mass * K.g_at(loc)
            else:
                val += mass * float(K.row(loc, part) @ v_prev)
    return val


def _log_pairs(K: AtomKernel, mu: Measure, N: int, part: str) -> np.ndarray:
    """``log int (mat^{n-1} g) dmu`` for ``n = 1..N``, renormalizing the iterate each step."""
    mat = K.matrix(part)
    out = np.empty(N)
    v = K.g.values.copy()
    prev = None
    log_scale = 0.0
    with np.errstate(divide="ignore"):
        for n in range(N):
            out[n] = np.log(max(_pair(mu, K, v, prev, part), 0.0)) + log_scale
            w = mat @ v
            size = float(np.max(np.abs(w)))
            if size == 0.0 or not np.isfinite(size):
                if size == 0.0:
                    out[n + 1:] = -np.inf
                    break
                raise RadiusZeroError(f"iterate {n + 1} overflowed; the series has zero radius")
            # w = mat @ v and the off-grid rows need prev in the same scaling
            prev, v = v / size, w / size
            log_scale += math.log(size)
    return out


def _stored(log_terms: np.ndarray, unit: float | None) -> tuple[np.ndarray, float]:
    """Choose a unit from the growth rate and return ``(c_n / unit^n, unit)``."""
    n = np.arange(1, len(log_terms) + 1)
    if unit is None:
        finite = np.isfinite(log_terms)
        unit = 1.0
        if finite.sum() >= 2:
            k = n[finite]
            slope = (log_terms[finite][-1] - log_terms[finite][0]) / max(k[-1] - k[0], 1)
            # keep plain coefficients when they already fit comfortably in range
            if np.max(np.abs(log_terms[finite])) > 300 * math.log(10) / 2:
                unit = math.exp(slope)
    with np.errstate(under="ignore"):
        return np.exp(log_terms - n * math.log(unit)), unit


def _exact_radius(K: AtomKernel) -> float | None:
    return K.r if isinstance(K, AnalyticKernel) else None


def _relevant_states(m: np.ndarray, start: np.ndarray, end: np.ndarray) -> np.ndarray:
    """States on some ``m``-path from ``supp(start)`` to ``supp(end)``."""
    def reach(adj, seeds):
        seen = np.zeros(len(adj), dtype=bool)
        for i in np.flatnonzero(seeds > 0):
            if not seen[i]:
                seen[breadth_first_order(adj, i, directed=True, return_predecessors=False)] = True
        return seen

    adj = (m > 0).astype(float)
    return np.flatnonzero(reach(adj, start) & reach(adj.T, end))


def finite_resolvent(K: AtomKernel, mu: Measure | None = None, part: str = "m"):
    """Exact ``s -> s mu^T (I - s m)^{-1} g``, its derivative and its radius.

    The radius is ``1 / rho`` of ``m`` restricted to the states lying on a
    path from the support of ``mu`` to the support of ``g``.  ``part="M"``
    gives the same for the full kernel, i.e. ``F`` instead of ``f``.
    """
    m = K.matrix(part)
    g = K.g.values
    mu_v = (K.gamma if mu is None else mu).masses
    idx = _relevant_states(m, mu_v, g)
    if len(idx):
        rho = float(np.max(np.abs(np.linalg.eigvals(m[np.ix_(idx, idx)]))))
    else:
        rho = 0.0
    radius = math.inf if rho <= 1e-14 else 1.0 / rho
    eye = np.eye(len(g))

    def value(s: float) -> float:
        x = np.linalg.solve(eye - s * m, g)
        return float(s * mu_v @ x)

    def prime(s: float) -> float:
        x = np.linalg.solve(eye - s * m, g)
        y = np.linalg.solve(eye - s * m, m @ x)
        return float(mu_v @ x + s * mu_v @ y)

    return value, prime, radius


def _check_assumption(terms: np.ndarray):
    if not np.any(terms > 0):
        raise AssumptionViolatedError("all computed f_n vanish: f is identically zero on the window")


def compute_fn(K: AtomKernel, N: int = DEFAULT_N, unit: float | None = None) -> PowerSeries:
    """``f_n = int int g(y) m^{n-1}(x, dy) gamma(dx)`` for ``n = 1..N``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    terms, unit = _stored(_log_pairs(K, K.gamma, N, "m"), unit)
    _check_assumption(terms)
    if K.is_finite:
        value, prime, radius = finite_resolvent(K)
        fs = PowerSeries.from_terms(terms, radius, unit, closed=value, closed_prime=prime)
    else:
        fs = PowerSeries.from_terms(terms, _exact_radius(K), unit)
    if not fs.is_polynomial() and fs.exact_radius is None:
        r = estimate_radius(fs)
        if r == 0.0:
            raise RadiusZeroError("f has zero radius of convergence")
    return fs


def compute_Fn(K: AtomKernel, N: int = DEFAULT_N, unit: float | None = None) -> PowerSeries:
    """``F_n = int int g(y) M^{n-1}(x, dy) gamma(dx)``, computed directly from ``M``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    terms, unit = _stored(_log_pairs(K, K.gamma, N, "M"), unit)
    _check_assumption(terms)
    if K.is_finite:
        value, prime, radius = finite_resolvent(K, part="M")
        return PowerSeries.from_terms(terms, radius, unit, closed=value, closed_prime=prime)
    return PowerSeries.from_terms(terms, unit=unit)


def renewal_quotient(a: PowerSeries, b: PowerSeries, N: int | None = None) -> PowerSeries:
    """Coefficients of ``c = b / (1 - a)``: ``c_n = b_n + sum_{k=1}^n a_k c_{n-k}``."""
    if a.coeffs[0] != 0.0:
        raise ValueError("renewal_quotient needs a_0 = 0")
    if a.unit != b.unit:
        raise ValueError("renewal_quotient needs series stored with the same unit")
    N = min(a.N, b.N) if N is None else N
    if a.N < N or b.N < N:
        raise DimensionError(f"series too short for N={N}")
    ac = a.coeffs[: N + 1]
    c = np.zeros(N + 1)
    c[0] = b.coeffs[0]
    for n in range(1, N + 1):
        c[n] = b.coeffs[n] + ac[1 : n + 1] @ c[n - 1 :: -1][:n]
    return PowerSeries(c, unit=a.unit)


def _tail_fit(c: np.ndarray) -> tuple[float, float]:
    """Fit ``log c_n = alpha - p log n + n log q`` on the tail; returns (q, spread).

    The fit is exact for coefficients of the form ``C n^{-p} q^n`` and uses
    only the non-zero coefficients, so periodic series are handled too.
    ``spread`` is the relative scatter of the fitted residuals, a measure of
    how far the tail is from that form.
    """
    idx = np.flatnonzero(c > 0)
    idx = idx[idx >= 1]
    if len(idx) < 5:
        raise RadiusZeroError("not enough non-zero coefficients for a radius estimate")
    n = idx[idx >= idx[-1] / 4].astype(float)
    if len(n) < 5:
        n = idx[-5:].astype(float)
    y = np.log(c[n.astype(int)])
    design = np.column_stack([np.ones_like(n), np.log(n), n])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    spread = float(np.ptp(resid[len(resid) // 2 :])) if len(resid) > 2 else 0.0
    return float(np.exp(coef[2])), spread


def estimate_radius(fs: PowerSeries, tol: float = 1e-3) -> float:
    """Radius of convergence ``r = inf{s : f(s) = inf}``.

    Uses a log-linear fit of the tail coefficients, i.e. the ratio test
    with algebraic corrections.  The exact radius is returned when the
    series carries one and ``inf`` for polynomial windows.  Tails that do
    not fit ``C n^-p q^n`` within ``tol`` raise a :class:`RadiusWarning`.
    """
    if fs.exact_radius is not None:
        return float(fs.exact_radius)
    if fs.is_polynomial():
        return math.inf
    q, spread = _tail_fit(fs.coeffs)
    q *= fs.unit
    if not np.isfinite(q) or q > 1e12:
        raise RadiusZeroError("coefficient ratios grow without bound")
    if spread > tol:
        warnings.warn(f"tail coefficients deviate from C n^-p q^n (log spread {spread:.2g}); "
                      "radius estimate unreliable",
                      RadiusWarning)
    if q <= 0:
        return math.inf
    return 1.0 / q


# ---------------------------------------------------------------------------
# the convergence parameter


def solve_R(fs: PowerSeries, r: float | None = None, tol: float = ROOT_TOL) -> float:
    """``R = r`` if ``f(r) < 1``, else the unique root of ``f(R) = 1`` in ``(0, r]``."""
    r = estimate_radius(fs) if r is None else r
    if math.isinf(r):
        hi = 1.0
        while fs(hi) <= 1.0:
            hi *= 2.0
            if hi > 1e300:
                raise AssumptionViolatedError("f stays below 1 on (0, inf)")
        return _root(fs, hi, tol)
    if fs.closed is not None:
        below = r * (1.0 - 1e-13)
        if fs.closed(below) > 1.0:
            return _root(fs, below, tol)
    at_r = fs.evaluate(r)
    if at_r.value > 1.0:
        return _root(fs, r, tol)
    tail = _power_tail(fs.term_values(r))
    if at_r.value + tail < 1.0:
        return float(r)
    if at_r.value == 1.0 and tail == 0.0:
        return float(r)
    raise InconclusiveAtRadiusError(
        f"f(r) lies in [{at_r.value:.6g}, {at_r.value + tail:.6g}] which contains 1",
        transient_candidate=float(r),
        recurrent_candidate=None,
    )


def _root(fs: PowerSeries, hi: float, tol: float) -> float:
    g = lambda s: fs(s) - 1.0  # noqa: E731
    if g(hi) <= 0:
        return float(hi)
    R = brentq(g, 0.0, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
    # polish with one secant step if the bracket stopped short of tol
    if abs(g(R)) > tol:
        d = fs.derivative()(R)
        if d > 0:
            R = R - g(R) / d
    return float(R)


class RecurrenceClass(str, Enum):
    TRANSIENT = "RTransient"
    NULL = "RNullRecurrent"
    POSITIVE = "RPositiveRecurrent"


@dataclass
class SpectralReport:
    r: float
    R: float
    fR: float
    fpR: float
    recurrence: RecurrenceClass
    renewal_class: str
    mean_generation_length: float
    criticality: str
    f1: float
    N: int
    tail_bound_fR: float
    tail_bound_fpR: float
    period: int
    certified: bool
    warnings: list = field(default_factory=list)
    fs: PowerSeries | None = field(default=None, repr=False)

    @property
    def rho(self) -> float:
        return 1.0 / self.R

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "fs"}
        d["recurrence"] = self.recurrence.value
        return {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in d.items()}


def _derivative_value(fs: PowerSeries, s: float) -> SeriesValue:
    dv = fs.derivative().evaluate(s)
    terms = fs.derivative().term_values(s)
    if dv.value > INFINITE_DERIVATIVE and terms[-1] >= terms[len(terms) // 2] > 0:
        return SeriesValue(math.inf, math.inf, dv.terms)
    return dv


def classify(K: AtomKernel, N: int = DEFAULT_N, tol: float | None = None, extend: bool = True,
             N_max: int = 6400, crit_tol: float = 1e-9) -> SpectralReport:
    """Radius, convergence parameter and recurrence class of ``K``.

    With ``extend`` the truncation order is doubled (up to ``N_max``) until
    the tail bound of ``f(R)`` drops below ``tol``; a report whose bound is
    still above ``tol`` is marked uncertified.
    """
    tol = K.identity_tol if tol is None else tol
    while True:
        fs = compute_fn(K, N)
        r = estimate_radius(fs)
        try:
            R = solve_R(fs, r)
            inconclusive = None
        except InconclusiveAtRadiusError as exc:
            inconclusive = exc
            R = r
        val = fs.evaluate(R)
        grow = (inconclusive is not None or val.tail_bound > tol) and extend and 2 * N <= N_max
        if grow:
            N *= 2
            continue
        if inconclusive is not None:
            raise inconclusive
        break

    notes = []
    dv = _derivative_value(fs, R)
    fR, fpR = val.value, dv.value
    recurrent = abs(fR - 1.0) <= max(tol, val.tail_bound) or (R < r)
    if not recurrent:
        recurrence = RecurrenceClass.TRANSIENT
        renewal = "transient"
    elif math.isfinite(fpR) and fpR > 0:
        recurrence = RecurrenceClass.POSITIVE
        renewal = "positive-recurrent"
    else:
        recurrence = RecurrenceClass.NULL
        renewal = "null-recurrent"
        notes.append("f'(R) declared infinite from a partial-sum witness")

    crit_tol = max(crit_tol, getattr(K, "truncation_error", 0.0))
    f1, crit = _criticality(fs, r, R, crit_tol)
    period = fs.period()
    if period > 1:
        notes.append(f"f-coefficients have period {period}")
    certified = val.tail_bound <= tol and (math.isfinite(dv.tail_bound) or recurrence is RecurrenceClass.NULL)
    if not certified:
        notes.append(f"tail bound {val.tail_bound:.3g} exceeds tolerance {tol:.3g}")
    return SpectralReport(
        r=float(r), R=float(R), fR=fR, fpR=fpR, recurrence=recurrence, renewal_class=renewal,
        mean_generation_length=R * fpR, criticality=crit, f1=f1, N=fs.N,
        tail_bound_fR=val.tail_bound, tail_bound_fpR=dv.tail_bound, period=period,
        certified=bool(certified), warnings=notes, fs=fs,
    )


def _criticality(fs: PowerSeries, r: float, R: float, crit_tol: float) -> tuple[float, str]:
    """Compare the Perron root ``1/R`` with 1 through the sign of ``f(1) - 1``."""
    if 1.0 < r:
        f1 = fs(1.0)
        if abs(f1 - 1.0) <= crit_tol:
            return f1, "critical"
        return f1, "supercritical" if f1 > 1.0 else "subcritical"
    f1 = math.inf
    if math.isclose(R, 1.0, rel_tol=crit_tol):
        return f1, "critical"
    return f1, "supercritical" if R < 1.0 else "subcritical"


def renewal_residual(K: AtomKernel, s: float, N: int = DEFAULT_N, tol: float | None = None,
                     N_max: int = 6400) -> tuple[float, int]:
    """``|F(s)(1 - f(s)) - f(s)|`` with ``F`` and ``f`` computed independently.

    ``N`` is doubled until the tail bound of ``F(s)`` drops below ``tol``
    (``F_n s^n`` decays slowly for ``s`` near ``R``).  Returns the residual
    and the order used.
    """
    tol = K.identity_tol if tol is None else tol
    while True:
        fs, Fs = compute_fn(K, N), compute_Fn(K, N)
        Fv, fv = Fs.evaluate(s), fs.evaluate(s)
        if max(Fv.tail_bound, fv.tail_bound) <= tol or 2 * N > N_max:
            break
        N *= 2
    return abs(Fv.value * (1.0 - fv.value) - fv.value), N


def immigration_series(K: AtomKernel, mu0: Measure, N: int = DEFAULT_N):
    """``(tilde f, tilde F)`` for a general initial measure ``mu0``.

    Returns the two series and the maximum coefficient residual of
    ``tilde F = tilde f (1 + F)``.
    """
    if not np.isfinite(mu0.total()):
        raise ValueError("mu0 must be finite")
    F = compute_Fn(K, N)
    unit = F.unit
    tf, _ = _stored(_log_pairs(K, mu0, N, "m"), unit)
    tF, _ = _stored(_log_pairs(K, mu0, N, "M"), unit)
    _check_assumption(tf)
    tf_s = PowerSeries.from_terms(tf, _exact_radius(K), unit)
    tF_s = PowerSeries.from_terms(tF, unit=unit)
    one_plus_F = PowerSeries(np.concatenate([[1.0], F.coeffs[1:]]))
    conv = np.convolve(tf_s.coeffs, one_plus_F.coeffs)[: N + 1]
    scale = max(1.0, float(np.max(np.abs(tF_s.coeffs))))
    residual = float(np.max(np.abs(conv - tF_s.coeffs)) / scale)
    return tf_s, tF_s, residual
