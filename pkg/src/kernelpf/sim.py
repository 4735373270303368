"""Monte Carlo simulation of Galton-Watson processes with clusters.

Every particle of type ``x`` leaves stem offspring ``xi`` and a number
``N`` of new clusters; each cluster is an independent draw ``tau`` of typed
particles.  The mean structure is ``E xi(A) = m(x, A)``, ``E N = g(x)``,
``E tau(A) = gamma(A)``, so ``M = m + g gamma`` is the mean kernel.

Only means are pinned down by the kernel.  The presets use these laws:

* ``split-chain``: exactly one offspring; with probability ``g(x)`` it is a
  new cluster ``tau = delta_Y``, ``Y ~ gamma``, otherwise a stem child drawn
  from ``m(x, .) / (1 - g(x))``.
* ``linear-fractional``: at most one stem child (probability ``m(x, E)``);
  a particle with a child also leaves a geometric number of clusters on
  ``{0, 1, ...}``; ``tau = delta_Y``.
* ``pure-atom``: no stem offspring, ``N ~ Poisson(g(x))``, ``tau`` has a
  ``Poisson(gamma(E))`` number of particles with types drawn from
  ``gamma / gamma(E)``.
* ``analytic-example``: ``Poisson(a)`` stem children, each at ``x + Exp(1)``;
  ``N ~ Poisson(c e^{-bx})``; every cluster is one particle of type 0.
* ``figure1``: a scripted deterministic replay used as a fixture.

Replicates are simulated in fixed-size chunks; chunk ``i`` draws from the
``i``-th child of ``SeedSequence(seed)``, so results do not depend on the
number of worker threads.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .io import write_atomic
from .errors import ExplosionError, PreconditionError, UnreliableEstimateError
from .kernel import AnalyticKernel, AtomKernel, DenseKernel

CHUNK = 10_000
POPULATION_CAP = 10_000_000
EXPLOSION_LIMIT = 0.5


def _row_sampler(rows: np.ndarray):
    """Inverse-CDF sampler for the categorical laws given by (sub-)probability rows."""
    rows = np.asarray(rows, dtype=float)
    totals = rows.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cdf = np.cumsum(rows, axis=1) / np.where(totals > 0, totals, 1.0)[:, None]
    cdf[:, -1] = 1.0

    def draw(idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(len(idx))
        return (u[:, None] > cdf[idx]).sum(axis=1)

    return draw


# ---------------------------------------------------------------------------
# cluster laws: sample(n, rng) -> (types, owner) with owner in range(n)


@dataclass
class SingleParticleCluster:
    """``tau = delta_Y`` with ``Y ~ gamma`` (a probability vector)."""

    gamma: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        if not np.isclose(self.gamma.sum(), 1.0):
            raise PreconditionError("single-particle clusters need a probability vector gamma")
        self._draw = _row_sampler(self.gamma[None, :])

    def sample(self, n: int, rng: np.random.Generator):
        return self._draw(np.zeros(n, dtype=int), rng), np.arange(n)


@dataclass
class PoissonCluster:
    """``Poisson(gamma(E))`` particles with types drawn from ``gamma / gamma(E)``."""

    gamma: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self._draw = _row_sampler(self.gamma[None, :])

    def sample(self, n: int, rng: np.random.Generator):
        sizes = rng.poisson(self.gamma.sum(), size=n)
        total = int(sizes.sum())
        return self._draw(np.zeros(total, dtype=int), rng), np.repeat(np.arange(n), sizes)


@dataclass
class DiracCluster:
    """One particle of a fixed type."""

    location: float = 0.0

    def sample(self, n: int, rng: np.random.Generator):
        return np.full(n, self.location), np.arange(n)


# ---------------------------------------------------------------------------
# reproduction laws: reproduce(types, rng) -> (child_types, child_parent, clusters)


@dataclass
class SplitChainReproduction:
    m: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.m, self.g = np.asarray(self.m, float), np.asarray(self.g, float)
        if np.any(self.g < 0) or np.any(self.g > 1):
            raise PreconditionError("split chain needs g(x) in [0, 1]")
        if not np.allclose(self.m.sum(axis=1), 1.0 - self.g):
            raise PreconditionError("split chain needs m(x, E) = 1 - g(x)")
        self._draw = _row_sampler(self.m)

    def reproduce(self, types, rng):
        regen = rng.random(len(types)) < self.g[types]
        keep = np.flatnonzero(~regen)
        return self._draw(types[keep], rng), keep, regen.astype(np.int64)


@dataclass
class LinearFractionalReproduction:
    m: np.ndarray
    mean_clusters: float

    def __post_init__(self):
        self.m = np.asarray(self.m, float)
        if np.any(self.m.sum(axis=1) > 1 + 1e-12):
            raise PreconditionError("linear-fractional stem rows must be sub-stochastic")
        if not self.mean_clusters > 0:
            raise PreconditionError("the geometric cluster count needs a positive mean")
        self._draw = _row_sampler(self.m)
        self._p_child = self.m.sum(axis=1)

    def reproduce(self, types, rng):
        has_child = rng.random(len(types)) < self._p_child[types]
        keep = np.flatnonzero(has_child)
        # geometric on {0, 1, ...} with the requested mean
        counts = rng.geometric(1.0 / (1.0 + self.mean_clusters), size=len(types)) - 1
        return self._draw(types[keep], rng), keep, np.where(has_child, counts, 0)


@dataclass
class PureAtomReproduction:
    g: np.ndarray

    def reproduce(self, types, rng):
        empty = np.zeros(0, dtype=types.dtype)
        return empty, np.zeros(0, dtype=int), rng.poisson(np.asarray(self.g, float)[types])


@dataclass
class AnalyticReproduction:
    a: float
    b: float
    c: float

    def reproduce(self, types, rng):
        kids = rng.poisson(self.a, size=len(types))
        parent = np.repeat(np.arange(len(types)), kids)
        child_types = types[parent] + rng.exponential(1.0, size=len(parent))
        clusters = rng.poisson(self.c * np.exp(-self.b * types))
        return child_types, parent, clusters


@dataclass
class ScriptedReproduction:
    """Replays ``script[k][i] = (stem_children, clusters)`` for particle ``i`` of generation ``k``."""

    script: list

    def __post_init__(self):
        self._gen = 0

    def reset(self):
        self._gen = 0

    def reproduce(self, types, rng):
        rows = self.script[self._gen] if self._gen < len(self.script) else [(0, 0)] * len(types)
        if len(rows) != len(types):
            raise PreconditionError(f"script generation {self._gen} lists {len(rows)} particles, got {len(types)}")
        self._gen += 1
        kids = np.array([r[0] for r in rows], dtype=int)
        clusters = np.array([r[1] for r in rows], dtype=np.int64)
        parent = np.repeat(np.arange(len(types)), kids)
        return np.zeros(len(parent)), parent, clusters


@dataclass
class ScriptedCluster:
    size: int

    def sample(self, n: int, rng):
        return np.zeros(n * self.size), np.repeat(np.arange(n), self.size)


# ---------------------------------------------------------------------------
# presets


@dataclass
class Preset:
    name: str
    reproduction: object
    cluster: object
    kernel_factory: Callable[[], AtomKernel] | None
    params: dict = field(default_factory=dict)
    #: the stem of every particle is a single lineage (split chain)
    single_lineage: bool = False

    @property
    def kernel(self) -> AtomKernel:
        if self.kernel_factory is None:
            raise PreconditionError(f"preset {self.name!r} has no matching kernel")
        if not hasattr(self, "_kernel"):
            self._kernel = self.kernel_factory()
        return self._kernel


PRESETS = ("split-chain", "linear-fractional", "pure-atom", "analytic-example", "figure1")

FIGURE1_SCRIPT = [
    [(1, 1), (1, 1), (0, 1)],
    [(1, 1), (1, 1)],
    [(1, 1), (0, 1)],
    [(2, 0)],
    [(1, 1), (0, 1)],
    [(0, 1)],
]


def build_preset(name: str, **params) -> Preset:
    """Samplers plus the matching mean kernel for a named family."""
    if name == "split-chain":
        P = np.asarray(params.get("P", [[0.5, 0.5], [0.25, 0.75]]), float)
        g = np.asarray(params.get("g", [0.2, 0.4]), float)
        gamma = np.asarray(params.get("gamma", [0.5, 0.5]), float)
        if not np.allclose(P.sum(axis=1), 1.0):
            raise PreconditionError("split chain needs a stochastic matrix P")
        m = P - np.outer(g, gamma)
        return Preset(name, SplitChainReproduction(m, g), SingleParticleCluster(gamma),
                      lambda: DenseKernel(P, g, gamma),
                      {"P": P.tolist(), "g": g.tolist(), "gamma": gamma.tolist()}, single_lineage=True)
    if name == "linear-fractional":
        m = np.asarray(params.get("m", [[0.3, 0.4], [0.2, 0.5]]), float)
        mean = float(params.get("mean_clusters", 2.0))
        gamma = np.asarray(params.get("gamma", [0.5, 0.5]), float)
        g = mean * m.sum(axis=1)
        return Preset(name, LinearFractionalReproduction(m, mean), SingleParticleCluster(gamma),
                      lambda: DenseKernel.from_parts(m, g, gamma),
                      {"m": m.tolist(), "mean_clusters": mean, "gamma": gamma.tolist()})
    if name == "pure-atom":
        g = np.asarray(params.get("g", [0.5, 1.0]), float)
        gamma = np.asarray(params.get("gamma", [0.3, 0.4]), float)
        m = np.zeros((len(g), len(g)))
        return Preset(name, PureAtomReproduction(g), PoissonCluster(gamma),
                      lambda: DenseKernel.from_parts(m, g, gamma),
                      {"g": g.tolist(), "gamma": gamma.tolist()})
    if name == "analytic-example":
        a, b, c = (float(params.get(k, d)) for k, d in (("a", 2.0), ("b", 2.0), ("c", 0.2)))
        T, n = float(params.get("T", 20.0)), int(params.get("n", 400))
        return Preset(name, AnalyticReproduction(a, b, c), DiracCluster(0.0),
                      lambda: AnalyticKernel(a, b, c, T=T, n=n),
                      {"a": a, "b": b, "c": c, "T": T, "n": n})
    if name == "figure1":
        return Preset(name, ScriptedReproduction(params.get("script", FIGURE1_SCRIPT)),
                      ScriptedCluster(int(params.get("size", 3))), None, {})
    raise PreconditionError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


# ---------------------------------------------------------------------------
# life records and CMJ trajectories


@dataclass
class LifeRecord:
    X: np.ndarray
    L: int
    censored: bool
    index: int = 0

    def to_dict(self) -> dict:
        return {"index": self.index, "L": self.L, "censored": self.censored,
                "X": [None if np.isnan(v) else int(v) for v in np.asarray(self.X[: self.L], float)]}


def _over_cap(owner: np.ndarray, n: int, cap: int) -> np.ndarray:
    """Replicates to stop: any above ``cap``, then the largest until the chunk total fits."""
    sizes = np.bincount(owner, minlength=n)
    over = sizes > cap
    if sizes.sum() > cap:
        order = np.argsort(-sizes, kind="stable")
        excess = np.cumsum(sizes[order]) - (sizes.sum() - cap)
        over[order[: int(np.searchsorted(excess, 0, side="left")) + 1]] = True
    return over


def _life_records(preset: Preset, n: int, horizon: int, rng, keep_counts: bool = True,
                  cap: int = POPULATION_CAP):
    """Vectorized stem runs from one cluster each.

    Returns ``X`` (n, horizon; NaN after a replicate exceeds ``cap``), ``L``,
    ``censored`` and ``exploded``.
    """
    types, owner = preset.cluster.sample(n, rng)
    columns = []
    L = np.zeros(n, dtype=np.int64)
    exploded = np.zeros(n, dtype=bool)
    for step in range(1, horizon + 1):
        kids, parent, clusters = preset.reproduction.reproduce(types, rng)
        if keep_counts:
            col = np.bincount(owner, weights=clusters, minlength=n)
            col[exploded] = np.nan
            columns.append(col)
        types, owner = kids, owner[parent]
        alive = np.bincount(owner, minlength=n) > 0
        L[(L == 0) & ~alive & ~exploded] = step
        over = _over_cap(owner, n, cap)
        if over.any():
            exploded |= over
            keep = ~exploded[owner]
            types, owner = types[keep], owner[keep]
        if len(types) == 0:
            break
    censored = L == 0
    L[censored] = horizon
    if not keep_counts:
        return None, L, censored, exploded
    X = np.zeros((n, horizon))
    X[:, : len(columns)] = np.stack(columns, axis=1)
    X[exploded, len(columns):] = np.nan
    return X, L, censored, exploded


def _cmj(preset: Preset, n: int, horizon: int, rng, cap: int):
    """Full population from one cluster each, with the stem of the ancestor tracked.

    ``W[:, k]`` counts all clusters born at time ``k+1`` and ``X[:, k]`` those
    born to the stem (descendants of the initial cluster through ``m`` only),
    so both come from the same realization.  Returns ``W``, ``X``, ``L``,
    ``censored`` and ``exploded``; counts are NaN once a replicate exceeds ``cap``.
    """
    types, owner = preset.cluster.sample(n, rng)
    stem = np.ones(len(types), dtype=bool)
    W = np.zeros((n, horizon), dtype=float)
    X = np.zeros((n, horizon), dtype=float)
    L = np.zeros(n, dtype=np.int64)
    exploded = np.zeros(n, dtype=bool)
    for step in range(1, horizon + 1):
        if len(types) == 0:
            break
        kids, parent, clusters = preset.reproduction.reproduce(types, rng)
        W[:, step - 1] = np.bincount(owner, weights=clusters, minlength=n)
        X[:, step - 1] = np.bincount(owner[stem], weights=clusters[stem], minlength=n)
        c_types, c_owner = preset.cluster.sample(int(clusters.sum()), rng)
        cluster_rep = np.repeat(owner, clusters)[c_owner]
        types = np.concatenate([kids, c_types])
        owner = np.concatenate([owner[parent], cluster_rep])
        stem = np.concatenate([stem[parent], np.zeros(len(c_types), dtype=bool)])
        stem_alive = np.bincount(owner[stem], minlength=n) > 0
        L[(L == 0) & ~stem_alive & ~exploded] = step
        over = _over_cap(owner, n, cap)
        if over.any():
            newly = over & ~exploded
            W[newly, step:] = np.nan
            X[newly, step:] = np.nan
            exploded |= over
            keep = ~exploded[owner]
            types, owner, stem = types[keep], owner[keep], stem[keep]
    censored = (L == 0) & ~exploded
    L[L == 0] = horizon
    return W, X, L, censored, exploded


def _reset(preset: Preset):
    if isinstance(preset.reproduction, ScriptedReproduction):
        preset.reproduction.reset()


def simulate_life_record(preset: Preset, seed: int, horizon: int) -> LifeRecord:
    """One life record of the embedded CMJ individual started by a single cluster."""
    if horizon < 1:
        raise PreconditionError("horizon must be at least 1")
    _reset(preset)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    X, L, cens, exploded = _life_records(preset, 1, horizon, rng)
    if exploded[0]:
        raise ExplosionError("stem population exceeded the cap", partial=X[0])
    return LifeRecord(X[0].astype(np.int64), int(L[0]), bool(cens[0]))


def simulate_cmj(preset: Preset, seed: int, horizon: int, cap: int = POPULATION_CAP) -> np.ndarray:
    """``W_1 .. W_horizon`` from one initial cluster; raises :class:`ExplosionError` past ``cap``."""
    if horizon < 1:
        raise PreconditionError("horizon must be at least 1")
    _reset(preset)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    W, _, _, _, exploded = _cmj(preset, 1, horizon, rng, cap)
    if exploded[0]:
        raise ExplosionError(f"population exceeded {cap} individuals", partial=W[0])
    return W[0].astype(np.int64)


# ---------------------------------------------------------------------------
# estimation


@dataclass
class SimBatch:
    preset: str
    params: dict
    replicates: int
    N: int
    seed: int
    f_hat: np.ndarray
    f_se: np.ndarray
    F_hat: np.ndarray
    F_se: np.ndarray
    W: np.ndarray = field(repr=False)
    explosions: int
    censored: int
    chunk: int = CHUNK
    records: tuple = field(default=(), repr=False)

    def to_dict(self, trajectories: bool = True) -> dict:
        d = {
            "preset": self.preset,
            "params": self.params,
            "replicates": self.replicates,
            "N": self.N,
            "seed": self.seed,
            "chunk": self.chunk,
            "f_hat": self.f_hat.tolist(),
            "f_se": self.f_se.tolist(),
            "F_hat": self.F_hat.tolist(),
            "F_se": self.F_se.tolist(),
            "explosions": self.explosions,
            "censored": self.censored,
        }
        if trajectories:
            d["W"] = [[None if np.isnan(v) else int(v) for v in row] for row in self.W]
        return d

    def write_records(self, path) -> None:
        """One JSON object per line: index, L, censored, X."""
        X, L, cens = self.records
        lines = (json.dumps(LifeRecord(X[i], int(L[i]), bool(cens[i]), i).to_dict()) for i in range(len(L)))
        write_atomic(path, "".join(line + "\n" for line in lines))


def _threads(workers: int | None) -> int:
    env = os.environ.get("KERNELPF_THREADS")
    cap = int(env) if env and env.isdigit() and int(env) > 0 else (os.cpu_count() or 1)
    return max(1, min(cap, workers or cap))


def _mean_se(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.sum(~np.isnan(a), axis=0)
    mean = np.nanmean(a, axis=0)
    sd = np.nanstd(a, axis=0, ddof=1)
    return mean, sd / np.sqrt(np.maximum(n, 1))


def estimate_series(preset: Preset, replicates: int, N: int, seed: int, workers: int | None = None,
                    chunk: int = CHUNK, cap: int | None = None) -> SimBatch:
    """Monte Carlo ``f_n = E X_n`` and ``F_n = E W_n`` for ``n = 1..N`` with standard errors.

    ``cap`` defaults to the module-level :data:`POPULATION_CAP`.
    """
    cap = POPULATION_CAP if cap is None else cap
    if replicates < 100:
        raise PreconditionError("estimate_series needs at least 100 replicates")
    if isinstance(preset.reproduction, ScriptedReproduction):
        raise PreconditionError("scripted presets replay a single record; use simulate_life_record")
    sizes = [min(chunk, replicates - k) for k in range(0, replicates, chunk)]
    streams = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(i: int):
        rng = np.random.default_rng(streams[i])
        W, X, L, cens, exploded = _cmj(preset, sizes[i], N, rng, cap)
        return X, L, cens, W, exploded

    with ThreadPoolExecutor(max_workers=_threads(workers)) as pool:
        parts = list(pool.map(run, range(len(sizes))))
    X = np.concatenate([p[0] for p in parts])
    L = np.concatenate([p[1] for p in parts])
    cens = np.concatenate([p[2] for p in parts])
    W = np.concatenate([p[3] for p in parts])
    exploded = np.concatenate([p[4] for p in parts])
    if exploded.mean() > EXPLOSION_LIMIT:
        raise UnreliableEstimateError(f"{exploded.sum()} of {replicates} replicates exceeded the population cap")
    f_hat, f_se = _mean_se(X)
    F_hat, F_se = _mean_se(W)
    return SimBatch(preset.name, preset.params, replicates, N, seed, f_hat, f_se, F_hat, F_se, W,
                    int(exploded.sum()), int(cens.sum()), chunk, (X, L, cens))


@dataclass
class RegenerationSample:
    gaps: np.ndarray
    censored: np.ndarray

    @property
    def observed(self) -> np.ndarray:
        return self.gaps[~self.censored]

    def mean(self) -> tuple[float, float]:
        g = self.observed
        return float(g.mean()), float(g.std(ddof=1) / np.sqrt(len(g)))


def regeneration_times(preset: Preset, n_gaps: int, seed: int, horizon: int = 10_000) -> RegenerationSample:
    """Gaps between successive regenerations along one split chain.

    Each gap starts from a fresh ``Y ~ gamma`` and ends at the next
    regeneration; gaps longer than ``horizon`` are censored.
    """
    if not preset.single_lineage:
        raise PreconditionError("regeneration times need a single-lineage (split chain) preset")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    _, L, cens, _ = _life_records(preset, n_gaps, horizon, rng, keep_counts=False)
    return RegenerationSample(L, cens)


def empirical_means(preset: Preset, x, A_mask: np.ndarray, draws: int, seed: int) -> dict:
    """Sample means and standard errors of ``xi(A)``, ``N`` and ``tau(A)`` for a type ``x``.

    ``A_mask`` selects the finite types counted in ``A``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    types = np.full(draws, x)
    kids, parent, clusters = preset.reproduction.reproduce(types, rng)
    xi_A = np.bincount(parent[A_mask[kids]], minlength=draws)
    c_types, c_owner = preset.cluster.sample(draws, rng)
    tau_A = np.bincount(c_owner[A_mask[c_types]], minlength=draws)
    out = {}
    for name, arr in (("xi", xi_A), ("N", clusters), ("tau", tau_A)):
        arr = np.asarray(arr, float)
        out[name] = (float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(draws)))
    return out
