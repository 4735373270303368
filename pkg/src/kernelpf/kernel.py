"""Type spaces, measures, functions and kernels with an atom.

Every kernel is held in a discretized form: a square matrix ``m`` acting on
function values at the *points* of the space, together with the atom
``(g, gamma)``.  For a finite space the points are the labels and the matrix
is exact.  For a grid space the points are the designated point masses
followed by the quadrature nodes, and ``m[i, j]`` is the Nystrom weight of
node ``j`` in the row of point ``i``.  Point masses are never smeared onto
the grid: a measure keeps them as separate atoms.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import quadrature
from .errors import (
    DimensionError,
    InvalidAtomError,
    ReducibleKernelError,
    UnrepresentableSetError,
    UnsupportedVariantError,
)

TOL_EXACT = 1e-10
TOL_QUAD = 1e-6


# ---------------------------------------------------------------------------
# type spaces


@dataclass(frozen=True)
class FiniteSpace:
    labels: tuple

    kind = "finite"

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ValueError("finite space needs at least one label")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be distinct")

    @classmethod
    def of_size(cls, n: int) -> "FiniteSpace":
        return cls(tuple(range(n)))

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def n_atoms(self) -> int:
        return len(self.labels)

    @cached_property
    def _lookup(self) -> dict:
        return {lab: i for i, lab in enumerate(self.labels)}

    def index(self, x) -> int | None:
        i = self._lookup.get(x)
        if i is None and isinstance(x, str):
            for lab, j in self._lookup.items():
                if str(lab) == x:
                    return j
        return i

    def require_index(self, x) -> int:
        i = self.index(x)
        if i is None:
            raise DimensionError(f"{x!r} is not a label of this space")
        return i

    def set_functional(self, A) -> np.ndarray:
        return self.indicator(A).astype(float)

    def indicator(self, A) -> np.ndarray:
        if isinstance(A, Whole):
            return np.ones(self.size, dtype=bool)
        if isinstance(A, Labels):
            out = np.zeros(self.size, dtype=bool)
            for lab in A.items:
                out[self.require_index(lab)] = True
            return out
        raise UnrepresentableSetError(f"{A!r} is not representable on a finite space")


@dataclass(frozen=True, eq=False)
class GridSpace:
    """Quadrature grid on ``[0, T]`` plus point-mass locations.

    Points are ordered as ``point_masses + nodes``.
    """

    T: float
    nodes: np.ndarray
    weights: np.ndarray
    point_masses: tuple = ()
    rule: str = "custom"
    order: int = 8

    kind = "grid"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "point_masses", tuple(float(p) for p in self.point_masses))
        if nodes.ndim != 1 or len(nodes) == 0:
            raise ValueError("grid needs a non-empty 1-d node list")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if nodes[0] < 0 or nodes[-1] > self.T:
            raise ValueError("grid nodes must lie in [0, T]")
        if weights.shape != nodes.shape:
            raise ValueError("weights must match nodes")
        if np.any(weights < 0):
            raise ValueError("quadrature weights must be non-negative")
        if any(p < 0 or p > self.T for p in self.point_masses):
            raise ValueError("point masses must lie in [0, T]")
        if self.rule not in quadrature.RULES:
            raise ValueError(f"unknown rule {self.rule!r}")

    @classmethod
    def uniform(cls, T: float, n: int, rule: str = "gauss", order: int = 8, point_masses=(0.0,)):
        nodes, weights = quadrature.make_nodes(T, n, rule, order)
        return cls(T, nodes, weights, tuple(point_masses), rule, order)

    @property
    def n_atoms(self) -> int:
        return len(self.point_masses)

    @property
    def size(self) -> int:
        return self.n_atoms + len(self.nodes)

    @cached_property
    def points(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.point_masses, dtype=float), self.nodes])

    def index(self, x) -> int | None:
        try:
            x = float(x)
        except (TypeError, ValueError):
            return None
        for i, p in enumerate(self.point_masses):
            if x == p:
                return i
        j = int(np.searchsorted(self.nodes, x))
        for k in (j - 1, j):
            if 0 <= k < len(self.nodes) and abs(self.nodes[k] - x) <= 1e-13 * max(1.0, abs(x)):
                return self.n_atoms + k
        return None

    def contains(self, x) -> bool:
        return 0.0 <= float(x) <= self.T

    def interval_weights(self, lo: float, hi: float) -> np.ndarray:
        return quadrature.interval_weights(self.nodes, self.rule, self.T, self.order, lo, hi)

    def bounds(self, A) -> tuple[float, float]:
        if isinstance(A, Whole):
            return 0.0, self.T
        if isinstance(A, Interval):
            return A.lo, A.hi
        raise UnrepresentableSetError(f"{A!r} is not representable on a grid space")

    def indicator(self, A) -> np.ndarray:
        lo, hi = self.bounds(A)
        return (self.points >= lo) & (self.points <= hi)

    def set_functional(self, A) -> np.ndarray:
        """``w`` with ``mu(A) = w @ mu.masses`` for measures tabulated on the points.

        Node masses are read as density times weight, and the density is
        integrated over ``A`` with the panel interpolant.
        """
        lo, hi = self.bounds(A)
        pm = np.asarray(self.point_masses, dtype=float)
        w = self.weights
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.where(w > 0, self.interval_weights(lo, hi) / np.where(w > 0, w, 1.0), 0.0)
        return np.concatenate([((pm >= lo) & (pm <= hi)).astype(float), dens])


TypeSpace = FiniteSpace | GridSpace


# ---------------------------------------------------------------------------
# set descriptors


@dataclass(frozen=True)
class Labels:
    items: frozenset

    def __init__(self, items):
        object.__setattr__(self, "items", frozenset(items))


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.hi < self.lo:
            raise UnrepresentableSetError(f"empty interval [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Whole:
    pass


WHOLE = Whole()


def parse_set(text: str, space: TypeSpace):
    """``"all"`` -> whole space, ``"lo:hi"`` -> interval, ``"a,b"`` -> labels."""
    text = text.strip()
    if text.lower() in ("all", "e", "*"):
        return WHOLE
    if ":" in text:
        lo, hi = text.split(":", 1)
        return Interval(float(lo), float(hi))
    if isinstance(space, GridSpace):
        raise UnrepresentableSetError(f"grid spaces take intervals lo:hi, got {text!r}")
    items = [s.strip() for s in text.split(",") if s.strip()]
    return Labels(space.labels[space.require_index(s)] for s in items)


def set_to_str(A) -> str:
    if isinstance(A, Whole):
        return "all"
    if isinstance(A, Interval):
        return f"{A.lo:g}:{A.hi:g}"
    return ",".join(sorted(str(x) for x in A.items))


# ---------------------------------------------------------------------------
# functions and measures


@dataclass(frozen=True, eq=False)
class TypeFunction:
    """Non-negative function given by its values at the points of a space.

    ``evaluator`` extends the function off the points (Nystrom extension or
    closed form); ``tail_bound`` records series truncation error, if any.
    """

    space: TypeSpace
    values: np.ndarray
    evaluator: Callable[[float], float] | None = None
    tail_bound: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.space.size,):
            raise DimensionError(f"function has {v.shape} values, space has {self.space.size} points")
        object.__setattr__(self, "values", v)

    def at(self, x) -> float:
        i = self.space.index(x)
        if i is not None:
            return float(self.values[i])
        if self.evaluator is None:
            raise DimensionError(f"{x!r} is not a point of the space and no evaluator is attached")
        return float(self.evaluator(float(x)))


@dataclass(frozen=True, eq=False)
class Measure:
    """Atoms (labels or point masses) plus a density on the grid nodes.

    ``extra_locs``/``extra_masses`` hold atoms at grid locations that are not
    designated point masses (e.g. a Dirac measure at an arbitrary type).
    ``set_fn`` optionally evaluates the measure of a set more accurately than
    integrating the tabulated density.
    """

    space: TypeSpace
    atoms: np.ndarray
    density: np.ndarray = field(default_factory=lambda: np.zeros(0))
    extra_locs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    extra_masses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    set_fn: Callable | None = None
    tail_bound: float = 0.0

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        density = np.asarray(self.density, dtype=float)
        n_nodes = 0 if isinstance(self.space, FiniteSpace) else len(self.space.nodes)
        if density.size == 0 and n_nodes:
            density = np.zeros(n_nodes)
        if atoms.shape != (self.space.n_atoms,) or density.shape != (n_nodes,):
            raise DimensionError("measure shape does not match its space")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "density", density)
        object.__setattr__(self, "extra_locs", np.asarray(self.extra_locs, dtype=float))
        object.__setattr__(self, "extra_masses", np.asarray(self.extra_masses, dtype=float))

    @classmethod
    def from_masses(cls, space: TypeSpace, masses: np.ndarray, **kw) -> "Measure":
        masses = np.asarray(masses, dtype=float)
        if masses.shape != (space.size,):
            raise DimensionError("mass vector does not match space")
        if isinstance(space, FiniteSpace):
            return cls(space, masses, **kw)
        k = space.n_atoms
        w = space.weights
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.where(w > 0, masses[k:] / np.where(w > 0, w, 1.0), 0.0)
        return cls(space, masses[:k], dens, **kw)

    @classmethod
    def dirac(cls, space: TypeSpace, x) -> "Measure":
        if isinstance(space, FiniteSpace):
            atoms = np.zeros(space.size)
            atoms[space.require_index(x)] = 1.0
            return cls(space, atoms)
        atoms = np.zeros(space.n_atoms)
        for i, p in enumerate(space.point_masses):
            if float(x) == p:
                atoms[i] = 1.0
                return cls(space, atoms)
        if not space.contains(x):
            raise DimensionError(f"{x} is outside [0, {space.T}]")
        return cls(space, atoms, extra_locs=[float(x)], extra_masses=[1.0])

    @property
    def masses(self) -> np.ndarray:
        if isinstance(self.space, FiniteSpace):
            return self.atoms
        return np.concatenate([self.atoms, self.density * self.space.weights])

    def total(self) -> float:
        return float(self.masses.sum() + self.extra_masses.sum())

    def scaled(self, k: float) -> "Measure":
        fn = None if self.set_fn is None else (lambda A, f=self.set_fn: k * f(A))
        return Measure(self.space, k * self.atoms, k * self.density, self.extra_locs,
                       k * self.extra_masses, fn, abs(k) * self.tail_bound)

    def of(self, A) -> float:
        if self.set_fn is not None:
            return float(self.set_fn(A))
        return self.tabulated_of(A)

    __call__ = of

    def tabulated_of(self, A) -> float:
        sp = self.space
        val = float(sp.set_functional(A) @ self.masses)
        if self.extra_masses.size:
            lo, hi = sp.bounds(A)
            val += float(self.extra_masses[(self.extra_locs >= lo) & (self.extra_locs <= hi)].sum())
        return val

    def pair(self, h: TypeFunction) -> float:
        """``int h dmu``."""
        if h.space is not self.space and h.space != self.space:
            raise DimensionError("function and measure live on different spaces")
        val = float(self.masses @ h.values)
        for loc, mass in zip(self.extra_locs, self.extra_masses):
            val += mass * h.at(loc)
        return val


# ---------------------------------------------------------------------------
# kernels


class AtomKernel:
    """Kernel ``M = m + g (x) gamma`` on a discretized type space.

    Subclasses set ``space``, ``m`` (points x points), ``g`` and ``gamma``
    and may override :meth:`m_row` / :meth:`m_set` with more accurate
    evaluations.
    """

    variant: str = "abstract"
    space: TypeSpace
    m: np.ndarray
    g: TypeFunction
    gamma: Measure
    tol: float = TOL_EXACT
    tol_quad: float = TOL_QUAD

    @property
    def is_finite(self) -> bool:
        return isinstance(self.space, FiniteSpace)

    @property
    def identity_tol(self) -> float:
        return self.tol if self.is_finite else self.tol_quad

    @cached_property
    def M(self) -> np.ndarray:
        return self.m + np.outer(self.g.values, self.gamma.masses)

    def matrix(self, part: str = "M") -> np.ndarray:
        return self.M if part == "M" else self.m

    # rows at arbitrary points -------------------------------------------------
    def point_index(self, x) -> int | None:
        return self.space.index(x)

    def m_row(self, x) -> np.ndarray:
        i = self.point_index(x)
        if i is None:
            raise DimensionError(f"{x!r} is not a point of the space")
        return self.m[i]

    def g_at(self, x) -> float:
        return self.g.at(x)

    def row(self, x, part: str = "M") -> np.ndarray:
        i = self.point_index(x)
        if i is not None:
            return self.matrix(part)[i]
        r = self.m_row(x)
        if part == "M":
            r = r + self.g_at(x) * self.gamma.masses
        return r

    # kernel values on sets ----------------------------------------------------
    def m_set(self, A) -> np.ndarray:
        """``m(x_i, A)`` at every point."""
        return self.m @ self.space.indicator(A).astype(float)

    def m_set_at(self, x, A) -> float:
        i = self.point_index(x)
        if i is not None:
            return float(self.m_set(A)[i])
        raise DimensionError(f"{x!r} is not a point of the space")

    def kernel_set(self, A, part: str = "M") -> np.ndarray:
        v = self.m_set(A)
        if part == "M":
            v = v + self.g.values * self.gamma.of(A)
        return v

    def kernel_set_at(self, x, A, part: str = "M") -> float:
        v = self.m_set_at(x, A)
        if part == "M":
            v += self.g_at(x) * self.gamma.of(A)
        return v

    def function(self, values, evaluator=None, tail_bound=0.0) -> TypeFunction:
        return TypeFunction(self.space, values, evaluator, tail_bound)

    def to_spec(self) -> dict:
        raise NotImplementedError


class DenseKernel(AtomKernel):
    """Finite kernel given by the full matrix ``M`` and an atom ``(g, gamma)``.

    ``m`` defaults to ``M - g gamma^T``.  Entries in ``[-tol, 0)`` are
    clamped to zero; more negative ones are kept so that
    :func:`validate_atom` can reject the decomposition.
    """

    variant = "dense"

    def __init__(self, M, g, gamma, labels: Sequence | None = None, m=None,
                 tol: float = TOL_EXACT, tol_quad: float = TOL_QUAD):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        g = np.asarray(g, dtype=float).ravel()
        gamma = np.asarray(gamma, dtype=float).ravel()
        n = M.shape[0]
        if M.shape != (n, n):
            raise DimensionError(f"M must be square, got {M.shape}")
        if g.shape != (n,) or gamma.shape != (n,):
            raise DimensionError("g and gamma must have one entry per state")
        self.space = FiniteSpace(tuple(labels) if labels is not None else tuple(range(n)))
        if self.space.size != n:
            raise DimensionError("labels do not match matrix size")
        self.M_given = M
        self.m_given = m is not None
        m = np.asarray(m, dtype=float) if m is not None else M - np.outer(g, gamma)
        if m.shape != (n, n):
            raise DimensionError("m must have the shape of M")
        # rounding-level negatives are clamped; larger ones are left for validate_atom
        tiny = (m < 0) & (m >= -tol)
        self.clamped = int(tiny.sum())
        if self.clamped:
            warnings.warn(f"clamping {self.clamped} entries of m in [-tol, 0) to zero", RuntimeWarning)
            m = np.where(tiny, 0.0, m)
        self.m = m
        self.g = TypeFunction(self.space, g)
        self.gamma = Measure(self.space, gamma)
        self.tol = tol
        self.tol_quad = tol_quad

    @cached_property
    def M(self) -> np.ndarray:
        return self.M_given

    @classmethod
    def from_parts(cls, m, g, gamma, **kw) -> "DenseKernel":
        m = np.atleast_2d(np.asarray(m, dtype=float))
        M = m + np.outer(g, gamma)
        return cls(M, g, gamma, m=m, **kw)

    def to_spec(self) -> dict:
        spec = {
            "variant": "dense",
            "M": self.M.tolist(),
            "g": self.g.values.tolist(),
            "gamma": self.gamma.atoms.tolist(),
            "labels": list(self.space.labels),
            "tol": self.tol,
            "tol_quad": self.tol_quad,
        }
        if self.m_given:
            spec["m"] = self.m.tolist()
        return spec


class RankOneRemarkKernel(DenseKernel):
    """``m = g1 gamma1^T`` with vanishing cross-integrals against ``(g, gamma)``.

    With the default construction on two states the pieces sit on disjoint
    states: ``g = (a, 0)``, ``gamma = (1, 0)``, ``g1 = (0, a1)``,
    ``gamma1 = (0, 1)``.
    """

    variant = "rankone"

    def __init__(self, g1, gamma1, g, gamma, labels=None, tol=TOL_EXACT, tol_quad=TOL_QUAD):
        g1, gamma1 = np.asarray(g1, float), np.asarray(gamma1, float)
        g, gamma = np.asarray(g, float), np.asarray(gamma, float)
        self.a1 = float(g1 @ gamma1)
        self.a = float(g @ gamma)
        cross = max(abs(g1 @ gamma), abs(g @ gamma1))
        if cross > tol:
            raise InvalidAtomError(f"cross-integrals must vanish, got {cross:g}")
        if not self.a1 > self.a > 0:
            raise InvalidAtomError(f"need a1 > a > 0, got a1={self.a1:g}, a={self.a:g}")
        self.g1, self.gamma1 = g1, gamma1
        m = np.outer(g1, gamma1)
        super().__init__(m + np.outer(g, gamma), g, gamma, labels=labels, m=m, tol=tol, tol_quad=tol_quad)

    @classmethod
    def two_state(cls, a1: float, a: float) -> "RankOneRemarkKernel":
        return cls([0.0, a1], [0.0, 1.0], [a, 0.0], [1.0, 0.0])

    def to_spec(self) -> dict:
        return {
            "variant": "rankone",
            "g1": self.g1.tolist(),
            "gamma1": self.gamma1.tolist(),
            "g": self.g.values.tolist(),
            "gamma": self.gamma.atoms.tolist(),
            "labels": list(self.space.labels),
            "tol": self.tol,
            "tol_quad": self.tol_quad,
        }


class DensityKernel(AtomKernel):
    """``m(x, dy) = k(x, y) dy`` on a grid, plus an atom.

    ``density(x, y)`` must be vectorized and smooth on the support; with
    ``support="upper"`` it is integrated over ``y >= x`` only, and should
    return the smooth continuation of ``k`` for ``y < x`` (used by the
    in-panel interpolant).  ``mass(x, lo, hi)``, if given, is the exact
    ``int_lo^hi k(x, y) dy`` and replaces numerical integration in
    :meth:`m_set`.
    """

    variant = "density"

    def __init__(self, space: GridSpace, density: Callable, g: Callable, gamma: Measure,
                 support: str = "full", mass: Callable | None = None,
                 tol: float = TOL_EXACT, tol_quad: float = TOL_QUAD, spec: dict | None = None):
        if support not in ("full", "upper"):
            raise ValueError("support must be 'full' or 'upper'")
        if gamma.space is not space:
            raise DimensionError("gamma must live on the kernel's space")
        self.space = space
        self.density = density
        self.support = support
        self.mass = mass
        self.g_fn = g
        self.tol, self.tol_quad = tol, tol_quad
        self._spec = spec
        pts = space.points
        self.g = TypeFunction(space, np.asarray(g(pts), dtype=float) * np.ones(len(pts)), evaluator=lambda x: float(g(np.float64(x))))
        self.gamma = gamma
        self.m = np.vstack([self._row(x) for x in pts])

    def _row(self, x: float) -> np.ndarray:
        sp = self.space
        lo = x if self.support == "upper" else 0.0
        w = sp.interval_weights(lo, sp.T)
        row = np.zeros(sp.size)
        nz = w != 0
        row[sp.n_atoms:][nz] = self.density(x, sp.nodes[nz]) * w[nz]
        return row

    def m_row(self, x) -> np.ndarray:
        i = self.point_index(x)
        if i is not None:
            return self.m[i]
        if not self.space.contains(x):
            raise DimensionError(f"{x} is outside [0, {self.space.T}]")
        return self._row(float(x))

    def g_at(self, x) -> float:
        return float(self.g_fn(np.float64(x)))

    def _mass(self, x: float, lo: float, hi: float) -> float:
        if self.support == "upper":
            lo = max(lo, x)
        lo, hi = max(lo, 0.0), min(hi, self.space.T)
        if hi <= lo:
            return 0.0
        if self.mass is not None:
            return float(self.mass(x, lo, hi))
        y, wy = quadrature.gauss_interval(lo, hi)
        return float(self.density(x, y) @ wy)

    def m_set(self, A) -> np.ndarray:
        lo, hi = self.space.bounds(A)
        return np.array([self._mass(x, lo, hi) for x in self.space.points])

    def m_set_at(self, x, A) -> float:
        lo, hi = self.space.bounds(A)
        return self._mass(float(x), lo, hi)

    def to_spec(self) -> dict:
        if self._spec is None:
            raise UnsupportedVariantError("this density kernel was built from callables and has no JSON form")
        return self._spec


class AnalyticKernel(DensityKernel):
    """``M(x, dy) = a e^{x-y} 1{y>=x} dy + c e^{-bx} delta_0(dy)`` on ``[0, T]``.

    Stem offspring of a type-``x`` particle are spread exponentially above
    ``x``; every cluster is a single particle of type 0.
    """

    variant = "analytic"

    def __init__(self, a: float, b: float, c: float, T: float | None = None, n: int = 400,
                 rule: str = "gauss", order: int = 8, tol: float = TOL_EXACT, tol_quad: float = TOL_QUAD):
        if not (a > 0 and c > 0 and b > -1):
            raise InvalidAtomError(f"need a > 0, c > 0, b > -1; got a={a}, b={b}, c={c}")
        if T is None:
            T = default_truncation(b)
        self.a, self.b, self.c = float(a), float(b), float(c)
        self.n, self.rule, self.order = int(n), rule, int(order)
        space = GridSpace.uniform(T, n, rule, order, point_masses=(0.0,))
        gamma = Measure(space, np.array([1.0]))
        a_, b_, c_ = self.a, self.b, self.c
        super().__init__(
            space,
            density=lambda x, y: a_ * np.exp(x - y),
            g=lambda x: c_ * np.exp(-b_ * x),
            gamma=gamma,
            support="upper",
            mass=lambda x, lo, hi: a_ * (np.exp(x - lo) - np.exp(x - hi)),
            tol=tol,
            tol_quad=tol_quad,
        )

    @property
    def r(self) -> float:
        return (1 + self.b) / self.a

    @property
    def truncation_error(self) -> float:
        return math.exp(-min(1.0, 1.0 + self.b) * self.space.T)

    def to_spec(self) -> dict:
        return {
            "variant": "analytic",
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "grid": {"T": self.space.T, "n": self.n, "rule": self.rule, "order": self.order},
            "tol": self.tol,
            "tol_quad": self.tol_quad,
        }


def default_truncation(b: float, eps: float = 1e-12) -> float:
    """Smallest integer ``T`` with ``exp(-min(1, 1+b) T) < eps``."""
    return float(math.floor(-math.log(eps) / min(1.0, 1.0 + b)) + 1)


# ---------------------------------------------------------------------------
# operations


def _check_function(K: AtomKernel, h: TypeFunction):
    if h.space is not K.space and h.space != K.space:
        raise DimensionError("function does not live on the kernel's space")


def apply_kernel(K: AtomKernel, h: TypeFunction, part: str = "M") -> TypeFunction:
    """``x -> int h(y) M(x, dy)`` (or the ``m`` part)."""
    _check_function(K, h)
    vals = h.values.copy()
    return TypeFunction(K.space, K.matrix(part) @ vals, evaluator=lambda x: float(K.row(x, part) @ vals))


def apply_adjoint(K: AtomKernel, mu: Measure, part: str = "M") -> Measure:
    """``A -> int M(x, A) mu(dx)``."""
    if mu.space is not K.space and mu.space != K.space:
        raise DimensionError("measure does not live on the kernel's space")
    out = mu.masses @ K.matrix(part)
    for loc, mass in zip(mu.extra_locs, mu.extra_masses):
        out = out + mass * K.row(loc, part)
    return Measure.from_masses(K.space, out)


def _check_point(K: AtomKernel, x):
    if K.is_finite:
        K.space.require_index(x)
    elif K.space.index(x) is None and not K.space.contains(x):
        raise DimensionError(f"{x} is outside [0, {K.space.T}]")


def scaled_powers(K: AtomKernel, x, A, n_max: int, s: float = 1.0, part: str = "M") -> np.ndarray:
    """``[s^n M^n(x, A) for n = 0..n_max]`` by repeated matrix-vector products."""
    _check_point(K, x)
    out = np.empty(n_max + 1)
    if K.is_finite:
        out[0] = float(K.space.indicator(A)[K.space.require_index(x)])
    else:
        lo, hi = K.space.bounds(A)
        out[0] = float(lo <= float(x) <= hi)
    if n_max == 0:
        return out
    mat = K.matrix(part)
    row = s * K.row(x, part)
    # iterate the set functional rather than M(., A): the latter has a kink at
    # the edge of A that the quadrature would integrate poorly
    v = K.space.set_functional(A)
    out[1] = s * K.kernel_set_at(x, A, part)
    for n in range(2, n_max + 1):
        v = s * (mat @ v)
        out[n] = row @ v
    return out


def iterate_kernel(K: AtomKernel, n: int, x, A, part: str = "M") -> float:
    """``M^n(x, A)`` with ``M^0(x, A) = delta_x(A)``; ``part="m"`` gives ``m^n``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return float(scaled_powers(K, x, A, n, 1.0, part)[n])


def _require_finite(K: AtomKernel, what: str):
    if not K.is_finite:
        raise UnsupportedVariantError(f"{what} is only available for finite kernels, got {K.variant!r}")


def support_graph(K: AtomKernel, tol: float = 0.0) -> csr_matrix:
    return csr_matrix(K.M > tol)


def check_irreducible(K: AtomKernel) -> bool:
    _require_finite(K, "irreducibility check")
    n, _ = connected_components(support_graph(K), directed=True, connection="strong")
    return n == 1


@dataclass(frozen=True)
class PeriodInfo:
    period: int
    classes: tuple  # tuple of tuples of labels, D_0 .. D_{d-1}
    class_of: tuple  # class index per state


def detect_period(K: AtomKernel, reference=None) -> PeriodInfo:
    """Period of an irreducible finite kernel and its cyclic classes.

    Breadth-first levels from a reference state; the period is the gcd of
    ``level(i) + 1 - level(j)`` over all support edges ``i -> j``.
    """
    _require_finite(K, "period detection")
    if not check_irreducible(K):
        raise ReducibleKernelError("period is only defined for irreducible kernels")
    n = K.space.size
    adj = K.M > 0
    ref = 0 if reference is None else K.space.require_index(reference)
    level = np.full(n, -1)
    level[ref] = 0
    frontier = [ref]
    while frontier:
        nxt = []
        for i in frontier:
            for j in np.flatnonzero(adj[i]):
                if level[j] < 0:
                    level[j] = level[i] + 1
                    nxt.append(j)
        frontier = nxt
    d = 0
    for i, j in zip(*np.nonzero(adj)):
        d = math.gcd(d, int(abs(level[i] + 1 - level[j])))
    d = max(d, 1)
    cls = tuple(int(level[i] % d) for i in range(n))
    classes = tuple(tuple(K.space.labels[i] for i in range(n) if cls[i] == k) for k in range(d))
    return PeriodInfo(d, classes, cls)


@dataclass
class ValidationReport:
    valid: bool
    max_residual: float
    min_m: float
    gamma_mass: float
    g_integral: float
    clamped: int = 0
    messages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def validate_atom(K: AtomKernel, tol: float | None = None, n_samples: int = 9) -> ValidationReport:
    """Check ``M = m + g gamma`` with ``m >= 0``, ``gamma(E) > 0`` and ``g`` not null.

    Entries of ``m`` in ``[-tol, 0)`` are clamped to zero with a warning;
    anything more negative raises :class:`InvalidAtomError`.
    """
    tol = K.identity_tol if tol is None else tol
    msgs = []
    gamma_mass = K.gamma.total()
    g_vals = K.g.values
    if K.is_finite:
        g_int = float(g_vals.sum())
    else:
        g_int = float(g_vals[K.space.n_atoms:] @ K.space.weights)
    clamped = 0

    if isinstance(K, DenseKernel):
        m = K.m
        residual = float(np.max(np.abs(K.M - m - np.outer(g_vals, K.gamma.atoms))))
        min_m = float(m.min())
        clamped = K.clamped
        if min_m < -tol:
            report = ValidationReport(False, residual, min_m, gamma_mass, g_int, 0,
                                      [f"m has entry {min_m:g} below -tol"])
            raise InvalidAtomError(f"negative stem kernel entry {min_m:g}", report)
    else:
        xs = np.linspace(0.0, K.space.T, n_samples)
        ys = np.linspace(0.0, K.space.T, n_samples)
        dens = np.array([K.density(x, ys) for x in xs])
        if K.support == "upper":
            dens = np.where(ys[None, :] >= xs[:, None], dens, 0.0)
        min_m = float(dens.min())
        if min_m < -tol:
            report = ValidationReport(False, float("nan"), min_m, gamma_mass, g_int, 0,
                                      [f"density has value {min_m:g}"])
            raise InvalidAtomError(f"negative stem density {min_m:g}", report)
        residual = 0.0
        if isinstance(K, AnalyticKernel):
            # closed-form M(x, [0, t]) against m(x, [0, t]) + g(x) gamma([0, t])
            from .analytic import kernel_mass_closed

            for x in xs:
                for t in ys:
                    lhs = kernel_mass_closed(K.a, K.b, K.c, x, t)
                    rhs = K.m_set_at(x, Interval(0.0, t)) + K.g_at(x) * K.gamma.of(Interval(0.0, t))
                    residual = max(residual, abs(lhs - rhs))
        if np.any(g_vals < -tol):
            raise InvalidAtomError("g takes negative values")

    if not gamma_mass > 0:
        raise InvalidAtomError("gamma must have positive total mass", ValidationReport(False, 0, 0, gamma_mass, g_int))
    if not np.isfinite(gamma_mass):
        raise InvalidAtomError("gamma must have finite total mass")
    if not np.any(g_vals > 0):
        raise InvalidAtomError("g vanishes identically", ValidationReport(False, 0, 0, gamma_mass, g_int))
    if residual > tol:
        msgs.append(f"decomposition residual {residual:g} exceeds tolerance {tol:g}")
        raise InvalidAtomError(msgs[-1], ValidationReport(False, residual, min_m, gamma_mass, g_int))
    return ValidationReport(True, residual, min_m, gamma_mass, g_int, clamped, msgs)
