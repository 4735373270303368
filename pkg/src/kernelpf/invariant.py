"""The s-subinvariant pair ``(h_s, pi_s)`` and the R-invariant pair.

    h_s(x)  = sum_{n>=1} s^n int g(y) m^{n-1}(x, dy)
    pi_s(A) = sum_{n>=1} s^n int m^{n-1}(x, A) gamma(dx)

On finite spaces both are obtained from one linear solve with ``I - s m``;
on grids the series is summed in ascending order with a geometric tail
bound.  ``h_s`` is extended off the grid by the Nystrom identity
``h_s(x) = s g(x) + s int h_s(y) m(x, dy)``; ``pi_s`` is a smooth density
plus atoms and is integrated over intervals with the panel interpolant.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import breadth_first_order

from .io import write_atomic
from .errors import DivergentSeriesError, NotRecurrentError, PreconditionError
from .kernel import WHOLE, AtomKernel, apply_adjoint, FiniteSpace, Interval, Labels, Measure, TypeFunction
from .series import DEFAULT_N, RecurrenceClass, SpectralReport, classify

EFFECTIVELY_INFINITE = 1e12
#: right end points, as fractions of T, of the intervals [0, t] used as test sets on grids
QUANTILES = (0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0)


def _restricted_solve(m: np.ndarray, rhs: np.ndarray, s: float, support: np.ndarray) -> np.ndarray:
    """``s (I - s m)^{-1} rhs`` on the states in ``support``, zero elsewhere.

    ``support`` must be closed under the relevant reachability so that the
    series never leaves it; convergence then only involves ``m`` restricted
    to it.
    """
    out = np.zeros(len(rhs))
    if len(support) == 0:
        return out
    sub = m[np.ix_(support, support)]
    rho = float(np.max(np.abs(np.linalg.eigvals(sub))))
    if s * rho >= 1.0:
        raise DivergentSeriesError(f"s = {s:g} is beyond the radius 1/{rho:g} of the stem series")
    out[support] = s * np.linalg.solve(np.eye(len(support)) - s * sub, rhs[support])
    return np.clip(out, 0.0, None)


def _reach(adj: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    seen = np.zeros(len(adj), dtype=bool)
    for i in np.flatnonzero(seeds > 0):
        if not seen[i]:
            seen[breadth_first_order(adj, i, directed=True, return_predecessors=False)] = True
    return np.flatnonzero(seen)


def _series_sum(step, start: np.ndarray, s: float, N: int, tol: float, N_max: int):
    """``sum_{n=1}^{N'} s^n v_n`` with ``v_1 = start``, ``v_{n+1} = step(v_n)``.

    Extends past ``N`` (up to ``N_max``) until the geometric tail bound, from
    the ratio of the last two term norms, is below ``tol``.
    """
    v = s * start
    total = v.copy()
    prev_norm = float(np.max(np.abs(v)))
    n, tail = 1, math.inf
    while True:
        v = s * step(v)
        total += v
        n += 1
        norm = float(np.max(np.abs(v)))
        if not np.isfinite(norm) or not np.all(np.isfinite(total)):
            raise DivergentSeriesError(f"partial sums diverge at s = {s:g}")
        if norm == 0.0:
            return total, 0.0, n
        q = norm / prev_norm if prev_norm > 0 else math.inf
        prev_norm = norm
        if n >= N:
            tail = norm * q / (1.0 - q) if q < 1.0 else math.inf
            if tail <= tol:
                return total, tail, n
            if n >= N_max:
                if q >= 1.0:
                    raise DivergentSeriesError(f"series terms do not decay at s = {s:g} (ratio {q:.4g})")
                return total, tail, n


def compute_hs(K: AtomKernel, s: float, N: int = DEFAULT_N, tol: float | None = None,
               N_max: int = 6400) -> TypeFunction:
    """``h_s(x) = sum_n s^n int g(y) m^{n-1}(x, dy)`` with its tail bound."""
    if not s > 0:
        raise PreconditionError("s must be positive")
    tol = K.identity_tol if tol is None else tol
    g = K.g.values
    if K.is_finite:
        # h lives on the states from which supp(g) can be reached
        support = _reach((K.m.T > 0).astype(float), g)
        return K.function(_restricted_solve(K.m, g, s, support))
    vals, tail, _ = _series_sum(lambda v: K.m @ v, g, s, N, tol, N_max)
    return K.function(vals, evaluator=lambda x: s * K.g_at(x) + s * float(K.m_row(x) @ vals),
                      tail_bound=tail)


def compute_pis(K: AtomKernel, s: float, N: int = DEFAULT_N, tol: float | None = None,
                N_max: int = 6400) -> Measure:
    """``pi_s(A) = sum_n s^n int m^{n-1}(x, A) gamma(dx)`` with its tail bound."""
    if not s > 0:
        raise PreconditionError("s must be positive")
    tol = K.identity_tol if tol is None else tol
    gam = K.gamma
    if K.is_finite:
        # pi lives on the states reachable from supp(gamma)
        support = _reach((K.m > 0).astype(float), gam.masses)
        return Measure.from_masses(K.space, _restricted_solve(K.m.T, gam.masses, s, support))
    # gamma m as a mass vector; off-grid atoms of gamma enter through their rows
    first = gam.masses @ K.m
    for loc, mass in zip(gam.extra_locs, gam.extra_masses):
        first = first + mass * K.m_row(loc)
    later, tail, _ = _series_sum(lambda mu: mu @ K.m, first, s, N, tol, N_max)
    masses = s * gam.masses + s * later
    return Measure.from_masses(K.space, masses, extra_locs=gam.extra_locs,
                               extra_masses=s * gam.extra_masses, tail_bound=tail)


def sample_sets(K: AtomKernel) -> list:
    """All singletons on finite spaces; ``[0, t]`` on a fixed quantile grid otherwise."""
    if isinstance(K.space, FiniteSpace):
        return [Labels([lab]) for lab in K.space.labels]
    return [Interval(0.0, q * K.space.T) for q in QUANTILES]


def _sample_points(K: AtomKernel) -> list:
    if isinstance(K.space, FiniteSpace):
        return list(K.space.labels)
    T = K.space.T
    off_grid = [q * T for q in (0.013, 0.1, 0.37, 0.5)]
    return list(K.space.points) + off_grid


@dataclass
class SubinvarianceReport:
    """Residuals of the two subinvariance identities.

    Residuals are scaled by ``max(1, |terms|)`` so that measures with large
    total mass (e.g. growing densities on long grids) are judged in relative
    terms; the unscaled maxima are kept alongside.
    """

    s: float
    f_s: float
    function_residual: float
    measure_residual: float
    tol: float
    function_residual_abs: float = 0.0
    measure_residual_abs: float = 0.0

    @property
    def ok(self) -> bool:
        return self.function_residual <= self.tol and self.measure_residual <= self.tol

    @property
    def invariant(self) -> bool:
        return self.ok and abs(1.0 - self.f_s) <= self.tol

    def to_dict(self) -> dict:
        return {**self.__dict__, "ok": self.ok, "invariant": self.invariant}


def f_value(K: AtomKernel, s: float, h: TypeFunction | None = None, N: int = DEFAULT_N) -> float:
    """``f(s) = int h_s dgamma``."""
    h = compute_hs(K, s, N) if h is None else h
    return K.gamma.pair(h)


def check_subinvariance(K: AtomKernel, s: float, h: TypeFunction | None = None,
                        pi: Measure | None = None, N: int = DEFAULT_N,
                        tol: float | None = None) -> SubinvarianceReport:
    """Residuals of ``Mh = h/s - (1-f) g`` and ``pi M = pi/s - (1-f) gamma``.

    Functions are compared at every point (plus a few off-grid types on
    grids); measures on :func:`sample_sets`.
    """
    tol = K.identity_tol if tol is None else tol
    h = compute_hs(K, s, N) if h is None else h
    pi = compute_pis(K, s, N) if pi is None else pi
    f_s = K.gamma.pair(h)
    if f_s > 1.0 + tol:
        raise PreconditionError(f"f(s) = {f_s:.12g} exceeds 1; no subinvariant pair at s = {s:g}")
    fres = fabs = 0.0
    hv = h.values
    for x in _sample_points(K):
        Mh = float(K.m_row(x) @ hv) + K.g_at(x) * f_s
        hx = h.at(x) / s
        r = abs(Mh - hx + (1.0 - f_s) * K.g_at(x))
        fabs = max(fabs, r)
        fres = max(fres, r / max(1.0, abs(hx)))
    piM = apply_adjoint(K, pi)
    mres = mabs = 0.0
    for A in sample_sets(K):
        lhs, rhs = piM.tabulated_of(A), pi.tabulated_of(A) / s
        r = abs(lhs - rhs + (1.0 - f_s) * K.gamma.of(A))
        mabs = max(mabs, r)
        mres = max(mres, r / max(1.0, abs(rhs)))
    return SubinvarianceReport(s, f_s, fres, mres, tol, fabs, mabs)


@dataclass
class InvariantPair:
    s: float
    h: TypeFunction
    pi: Measure
    f_s: float
    hpi_product: float
    h_gamma: float
    g_pi: float
    tail_bound: float
    certified: bool
    effectively_infinite: int = 0
    spectral: SpectralReport | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        sp = self.h.space
        pts = list(sp.labels) if isinstance(sp, FiniteSpace) else [float(p) for p in sp.points]
        return {
            "s": self.s,
            "f_s": self.f_s,
            "hpi_product": self.hpi_product,
            "normalization": {"h_gamma": self.h_gamma, "g_pi": self.g_pi},
            "tail_bound": self.tail_bound,
            "certified": self.certified,
            "effectively_infinite": self.effectively_infinite,
            "points": pts,
            "h": self.h.values.tolist(),
            "pi_masses": self.pi.masses.tolist(),
            "pi_whole": self.pi.of(WHOLE),
            "spectral": None if self.spectral is None else self.spectral.to_dict(),
            "notes": list(self.notes),
        }

    def write_csv(self, path) -> None:
        """One row per point: ``point, h, pi_mass``."""
        sp = self.h.space
        pts = list(sp.labels) if isinstance(sp, FiniteSpace) else list(sp.points)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "h", "pi_mass"])
        for p, hv, pm in zip(pts, self.h.values, self.pi.masses):
            w.writerow([p, repr(float(hv)), repr(float(pm))])
        write_atomic(path, buf.getvalue())


def subinvariant_pair(K: AtomKernel, s: float, N: int = DEFAULT_N, tol: float | None = None) -> InvariantPair:
    """``(h_s, pi_s)`` with ``f(s)``, ``int h_s dgamma``, ``int g dpi_s`` and ``int h_s dpi_s``."""
    tol = K.identity_tol if tol is None else tol
    h = compute_hs(K, s, N, tol)
    pi = compute_pis(K, s, N, tol)
    h_gamma = K.gamma.pair(h)
    g_pi = pi.pair(K.g)
    hpi = pi.pair(h)
    tail = max(h.tail_bound, pi.tail_bound)
    big = int(np.sum(h.values > EFFECTIVELY_INFINITE))
    notes = []
    if big:
        notes.append(f"{big} values of h exceed {EFFECTIVELY_INFINITE:g} and are effectively infinite")
    return InvariantPair(s, h, pi, h_gamma, hpi, h_gamma, g_pi, tail, tail <= tol, big, None, notes)


def invariant_pair(K: AtomKernel, N: int = DEFAULT_N, report: SpectralReport | None = None,
                   tol: float | None = None) -> InvariantPair:
    """The R-invariant pair, normalized so that ``int h dgamma = int g dpi = 1``."""
    report = classify(K, N) if report is None else report
    if report.recurrence is RecurrenceClass.TRANSIENT:
        raise NotRecurrentError(f"kernel is R-transient (f(R) = {report.fR:.6g} < 1)")
    pair = subinvariant_pair(K, report.R, N, tol)
    pair.spectral = report
    tol = K.identity_tol if tol is None else tol
    expected = report.R**2 * report.fpR
    for name, val, target in (("int h dgamma", pair.h_gamma, 1.0), ("int g dpi", pair.g_pi, 1.0),
                              ("int h dpi", pair.hpi_product, expected)):
        if not math.isclose(val, target, rel_tol=max(tol, 1e-8), abs_tol=tol):
            pair.notes.append(f"{name} = {val:.12g}, expected {target:.12g}")
            pair.certified = False
    if not report.certified:
        pair.certified = False
        pair.notes.append("spectral report is uncertified")
    return pair
