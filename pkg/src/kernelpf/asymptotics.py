"""Limit theorems for ``R^n M^n(x, A)``, the resolvent decomposition and
the eigenvector oracle for finite kernels."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .io import write_atomic
from .errors import ConvergenceError, NotApplicableError, PeriodicityError, PreconditionError
from .kernel import (
    AtomKernel,
    FiniteSpace,
    Measure,
    TypeFunction,
    check_irreducible,
    detect_period,
    scaled_powers,
    set_to_str,
)
from .invariant import compute_hs, compute_pis, invariant_pair, subinvariant_pair
from .series import DEFAULT_N, PowerSeries, RecurrenceClass, SpectralReport, classify

DEFAULT_NMAX = 500
EPS_GRID = (1.0, 0.5, 0.1, 1e-2, 1e-3, 1e-4, 1e-6)
SENSITIVITY_STEP = 1e-6


class ApplicabilityWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# finite oracle


@dataclass
class EigenOracle:
    rho: float
    right: TypeFunction
    left: Measure
    iterations: int

    def projection(self, x, A) -> float:
        """``v(x) u(A) / (u . v)``, the limit of ``(M / rho)^n (x, A)``."""
        v, u = self.right.values, self.left.masses
        return self.right.at(x) * self.left.of(A) / float(u @ v)


def _power_iterate(mat: np.ndarray, tol: float, max_iter: int) -> tuple[float, np.ndarray, int]:
    v = np.ones(mat.shape[0])
    rho = 0.0
    for it in range(1, max_iter + 1):
        w = mat @ v
        rho = float(np.max(w))
        if rho <= 0:
            raise ConvergenceError("iterate vanished; the matrix is nilpotent on the start vector")
        w /= rho
        if np.max(np.abs(mat @ w - rho * w)) <= tol * rho:
            return rho, w, it
        v = w
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")


def power_iteration_oracle(K: AtomKernel, tol: float = 1e-12, max_iter: int = 100_000) -> EigenOracle:
    """Dominant eigenvalue and positive eigenvectors of a finite kernel.

    Requires an irreducible aperiodic kernel; periodic input raises
    :class:`PeriodicityError` since the iteration would not settle.
    """
    info = detect_period(K)
    if info.period > 1:
        raise PeriodicityError(f"kernel has period {info.period}", info.period)
    rho, v, it_r = _power_iterate(K.M, tol, max_iter)
    rho_l, u, it_l = _power_iterate(K.M.T, tol, max_iter)
    right = K.function(v)
    left = Measure.from_masses(K.space, u)
    return EigenOracle(rho, right, left, max(it_r, it_l))


# ---------------------------------------------------------------------------
# the resolvent decomposition


@dataclass
class DecompositionReport:
    s: float
    x: object
    A: str
    f_s: float
    M_s: float
    m_s: float
    h_s: float
    pi_s: float
    rhs: float
    residual: float
    terms: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _resolvent_value(K: AtomKernel, x, A, s: float, part: str, tol: float, n_max: int) -> tuple[float, int]:
    """``sum_{n>=1} s^n K^{n-1}(x, A)`` with doubling until the terms are negligible."""
    n = 64
    while True:
        tr = scaled_powers(K, x, A, n, s, part)
        total = s * float(np.sum(tr))
        tail = s * float(np.max(tr[-8:]))
        if tail <= tol * 1e-3 * max(1.0, total) or n >= n_max:
            if tail > tol * max(1.0, total):
                raise ConvergenceError(f"resolvent series at s = {s:g} has not converged after {n} terms")
            return total, n
        n *= 2


def resolvent_decomposition(K: AtomKernel, s: float, x, A, N: int = DEFAULT_N,
                            tol: float | None = None, n_max: int = 1 << 16) -> DecompositionReport:
    """Both sides of ``M_s(x, A) = m_s(x, A) + h_s(x) pi_s(A) / (1 - f(s))``.

    The left side iterates ``M``; the right side combines the stem series
    with the subinvariant pair.
    """
    tol = K.identity_tol if tol is None else tol
    h = compute_hs(K, s, N)
    f_s = K.gamma.pair(h)
    if f_s >= 1.0:
        raise PreconditionError(f"f(s) = {f_s:.12g} >= 1; the decomposition needs f(s) < 1")
    pi = compute_pis(K, s, N)
    lhs, n_lhs = _resolvent_value(K, x, A, s, "M", tol, n_max)
    m_s, n_rhs = _resolvent_value(K, x, A, s, "m", tol, n_max)
    h_x, pi_A = h.at(x), pi.of(A)
    rhs = m_s + h_x * pi_A / (1.0 - f_s)
    return DecompositionReport(s, x, set_to_str(A), f_s, lhs, m_s, h_x, pi_A, rhs,
                               abs(lhs - rhs), max(n_lhs, n_rhs))


# ---------------------------------------------------------------------------
# applicability


@dataclass
class Applicability:
    eps_verdict: bool
    eps: float | None
    h_x: float
    extra_verdict: bool
    extra_last: float
    extra_rigorous: bool = False

    @property
    def applies(self) -> bool:
        return self.eps_verdict or self.extra_verdict

    def to_dict(self) -> dict:
        return {**self.__dict__, "extra_verdict_label": "empirical, non-rigorous"}


def _min_g_on(K: AtomKernel, A) -> float:
    sp = K.space
    if isinstance(sp, FiniteSpace):
        mask = sp.indicator(A)
        return float(K.g.values[mask].min()) if mask.any() else math.inf
    lo, hi = sp.bounds(A)
    mask = sp.indicator(A)
    vals = list(K.g.values[mask]) + [K.g_at(lo), K.g_at(min(hi, sp.T))]
    return float(min(vals))


def check_limit_applicability(K: AtomKernel, x, A, R: float | None = None, n_max: int = DEFAULT_NMAX,
                              tol: float | None = None, h: TypeFunction | None = None) -> Applicability:
    """Sufficient conditions for the limit of ``R^n M^n(x, A)``.

    ``eps_verdict``: ``h(x)`` is finite and ``g >= eps`` on ``A`` for some
    ``eps`` in :data:`EPS_GRID`.  ``extra_verdict`` is empirical: the trace
    of ``R^n m^n(x, A)`` ends below ``tol`` and is non-increasing over its
    last ten steps.
    """
    tol = K.identity_tol if tol is None else tol
    R = classify(K).R if R is None else R
    try:
        h = compute_hs(K, R) if h is None else h
        h_x = h.at(x)
    except Exception:  # divergent stem series: h(x) is infinite
        h_x = math.inf
    finite_h = math.isfinite(h_x) and h_x < 1e12
    gmin = _min_g_on(K, A)
    eps = next((e for e in EPS_GRID if gmin >= e), None)
    stem = scaled_powers(K, x, A, n_max, R, "m")
    tail = np.diff(stem[-11:])
    extra = bool(stem[-1] <= tol and np.all(tail <= 1e-15 * max(1.0, stem[-11])))
    return Applicability(finite_h and eps is not None, eps, float(h_x), extra, float(stem[-1]))


# ---------------------------------------------------------------------------
# the Perron-Frobenius limit


def cesaro_means(seq) -> np.ndarray:
    seq = np.asarray(seq, dtype=float)
    return np.cumsum(seq) / np.arange(1, len(seq) + 1)


def renewal_limit(a: PowerSeries, b: PowerSeries) -> float:
    """``b(1) / a'(1)``, the limit of the coefficients of ``b / (1 - a)``."""
    return b(1.0) / a.derivative()(1.0)


def _settled(trace: np.ndarray, target: float, tol: float) -> bool:
    """Close to ``target`` with the last ten increments non-increasing in size.

    Increments below a round-off floor count as zero.
    """
    scale = max(1.0, abs(target))
    if abs(trace[-1] - target) > tol * scale:
        return False
    inc = np.abs(np.diff(trace[-11:]))
    inc = np.where(inc <= 1e-13 * scale, 0.0, inc)
    return bool(np.all(np.diff(inc) <= 0.0))


@dataclass
class LimitReport:
    x: object
    A: str
    R: float
    predicted: float
    h_x: float
    pi_A: float
    normalizer: float
    trace: np.ndarray = field(repr=False)
    converged: bool
    applicability: Applicability | None
    sensitivity: float
    cesaro: bool = False
    tol: float = 0.0
    n_max: int = DEFAULT_NMAX
    notes: list = field(default_factory=list)

    @property
    def final(self) -> float:
        return float(self.trace[-1])

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "A": self.A,
            "R": self.R,
            "predicted_limit": self.predicted,
            "h_x": self.h_x,
            "pi_A": self.pi_A,
            "normalizer": self.normalizer,
            "trace_final": self.final,
            "converged": self.converged,
            "applicability": None if self.applicability is None else self.applicability.to_dict(),
            "sensitivity_dlimit_dR": self.sensitivity,
            "cesaro": self.cesaro,
            "tol": self.tol,
            "n_max": self.n_max,
            "notes": list(self.notes),
        }

    def write_trace_csv(self, path) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "value"])
        for n, v in enumerate(self.trace):
            w.writerow([n, repr(float(v))])
        write_atomic(path, buf.getvalue())


def _prediction(K: AtomKernel, s: float, x, A, N: int) -> float:
    pair = subinvariant_pair(K, s, N)
    fs_prime = pair.hpi_product / s**2
    return pair.h.at(x) * pair.pi.of(A) / (s * s * fs_prime)


def _kernel_period(K: AtomKernel, report: SpectralReport) -> int:
    if K.is_finite and check_irreducible(K):
        return detect_period(K).period
    return max(report.period, 1)


def perron_limit(K: AtomKernel, x, A, n_max: int = DEFAULT_NMAX, N: int = DEFAULT_N,
                 tol: float | None = None, cesaro: bool = False,
                 report: SpectralReport | None = None) -> LimitReport:
    """Trace of ``R^n M^n(x, A)`` against ``h(x) pi(A) / (R^2 f'(R))``.

    Needs an R-positive recurrent kernel.  A periodic kernel is refused
    unless ``cesaro`` is set, in which case the trace holds Cesaro means.
    """
    tol = K.identity_tol if tol is None else tol
    report = classify(K, N) if report is None else report
    if report.recurrence is not RecurrenceClass.POSITIVE:
        raise NotApplicableError(f"the limit needs an R-positive recurrent kernel, got {report.recurrence.value}")
    notes = []
    period = _kernel_period(K, report)
    if period > 1 and not cesaro:
        raise PeriodicityError(f"kernel has period {period}; use the Cesaro variant", period)
    if period > 1:
        notes.append(f"period {period}: trace holds Cesaro means")
    pair = invariant_pair(K, N, report)
    R = report.R
    normalizer = R * R * report.fpR
    h_x, pi_A = pair.h.at(x), pair.pi.of(A)
    predicted = h_x * pi_A / normalizer
    app = check_limit_applicability(K, x, A, R, n_max, tol, pair.h)
    if not app.eps_verdict:
        msg = ("only the empirical condition supports this (x, A)" if app.extra_verdict
               else "no sufficient condition holds for this (x, A)")
        notes.append(msg)
        warnings.warn(msg, ApplicabilityWarning)
    trace = scaled_powers(K, x, A, n_max, R)
    if cesaro:
        trace = cesaro_means(trace[1:])
        trace = np.concatenate([[0.0], trace])
    lo = _prediction(K, R * (1 - SENSITIVITY_STEP), x, A, N)
    try:
        hi = _prediction(K, R * (1 + SENSITIVITY_STEP), x, A, N)
        sens = (hi - lo) / (2 * SENSITIVITY_STEP * R)
    except Exception:  # R sits at the radius; fall back to a one-sided difference
        sens = (predicted - lo) / (SENSITIVITY_STEP * R)
    converged = _settled(trace, predicted, tol)
    return LimitReport(x, set_to_str(A), R, predicted, h_x, pi_A, normalizer, trace, converged,
                       app, float(sens), cesaro, tol, n_max, notes)
