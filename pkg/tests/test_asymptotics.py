import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kernelpf import WHOLE, DenseKernel, Interval, Labels, RankOneRemarkKernel, classify
from kernelpf.asymptotics import (
    ApplicabilityWarning,
    check_limit_applicability,
    perron_limit,
    power_iteration_oracle,
    resolvent_decomposition,
)
from kernelpf.errors import NotApplicableError, PeriodicityError, PreconditionError
from kernelpf.invariant import compute_hs, invariant_pair
from kernelpf.kernel import iterate_kernel, scaled_powers

from oracles import ex_f, ex_pi, ex_R, projection, random_atom_kernel


def period_two():
    """M = [[0, 1], [1, 0]] with atom g = (0.5, 0), gamma = (0, 1): f(s) = sum 0.5^k s^{2k}."""
    return DenseKernel([[0.0, 1.0], [1.0, 0.0]], [0.5, 0.0], [0.0, 1.0])


# ---------------------------------------------------------------------------
# oracle


def test_oracle_scalar():
    o = power_iteration_oracle(DenseKernel([[2.0]], [1.0], [1.0]))
    assert o.rho == pytest.approx(2.0)
    np.testing.assert_allclose(o.right.values, [1.0])


def test_oracle_periodic():
    with pytest.raises(PeriodicityError):
        power_iteration_oracle(period_two())


def test_oracle_two_by_two(two_by_two):
    o = power_iteration_oracle(two_by_two)
    assert o.rho == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(o.right.values / o.right.values[0], [1.0, 1.0], rtol=1e-10)
    u = o.left.masses / o.left.masses.sum()
    np.testing.assert_allclose(u, [1 / 3, 2 / 3], rtol=1e-10)


# ---------------------------------------------------------------------------
# resolvent decomposition


def test_decomposition_pure_atom(pure_atom):
    s = 1.0
    rep = resolvent_decomposition(pure_atom, s, 0, Labels([1]))
    # M_s = s delta + (s g)(s gamma) / (1 - a s)
    expected = s * 0.0 + (s * 0.5) * (s * 0.4) / (1 - 0.55 * s)
    assert rep.M_s == pytest.approx(expected, rel=1e-12)
    assert rep.residual <= 1e-12


def test_decomposition_analytic(analytic):
    a, b, c = 2.0, 2.0, 0.2
    s = ex_R(a, b, c) / 2
    rep = resolvent_decomposition(analytic, s, 0.0, Interval(0, 1))
    assert rep.residual <= 1e-6
    assert rep.h_s == pytest.approx(ex_f(a, b, c, s), rel=1e-8)
    assert rep.pi_s == pytest.approx(ex_pi(a, s, 1.0), rel=1e-8)


def test_decomposition_random_matrix(rng):
    M, g, gamma = random_atom_kernel(rng, 4)
    K = DenseKernel(M, g, gamma)
    s = 0.9 * classify(K).R
    rep = resolvent_decomposition(K, s, 1, Labels([0, 3]))
    assert rep.residual <= 1e-10
    # matrix series oracle
    Ms = s * np.linalg.inv(np.eye(4) - s * M)
    assert rep.M_s == pytest.approx(Ms[1, 0] + Ms[1, 3], rel=1e-10)


def test_decomposition_needs_f_below_one(two_by_two):
    with pytest.raises(PreconditionError):
        resolvent_decomposition(two_by_two, 1.0, 0, Labels([0]))


@pytest.mark.parametrize("n", range(1, 11))
def test_coefficientwise_decomposition(n):
    M, g, gamma = random_atom_kernel(np.random.default_rng(3), 4)
    K = DenseKernel(M, g, gamma)
    x, A = 2, Labels([1])
    lhs = iterate_kernel(K, n, x, A) - iterate_kernel(K, n, x, A, part="m")
    rhs = sum((np.linalg.matrix_power(K.m, i - 1) @ g)[x] * (gamma @ np.linalg.matrix_power(M, n - i))[1]
              for i in range(1, n + 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


# ---------------------------------------------------------------------------
# applicability


def test_rank_one_extra_verdict():
    K = RankOneRemarkKernel.two_state(3.0, 2.0)
    R = 0.5
    for x in (0, 1):
        for A in (Labels([0]), Labels([1]), WHOLE):
            app = check_limit_applicability(K, x, A, R)
            g1_gamma1 = K.g1[x] * K.gamma1 @ K.space.indicator(A)
            assert app.extra_verdict == bool(g1_gamma1 == 0), (x, A)


def test_rank_one_growth():
    K = RankOneRemarkKernel.two_state(3.0, 2.0)
    stem = scaled_powers(K, 1, Labels([1]), 20, 0.5, "m")
    # R^n m^n(x, A) = (a1/a)^n g1(x) gamma1(A) / a1
    np.testing.assert_allclose(stem[1:], [(3 / 2) ** n * 3 / 3 for n in range(1, 21)], rtol=1e-12)


@pytest.mark.parametrize("t", [0.5, 1.0, 3.0])
def test_analytic_eps_verdict(analytic, t):
    app = check_limit_applicability(analytic, 0.0, Interval(0, t))
    assert app.eps_verdict
    assert app.eps <= 0.2 * math.exp(-2 * t)


# ---------------------------------------------------------------------------
# the limit


def test_pure_atom_limit_constant(pure_atom):
    rep = perron_limit(pure_atom, 0, Labels([1]), n_max=50)
    a = 0.55
    assert rep.predicted == pytest.approx(0.5 * 0.4 / a, rel=1e-12)
    np.testing.assert_allclose(rep.trace[1:], rep.predicted, rtol=1e-12)
    assert rep.converged


def test_analytic_limit_matches_theorem(analytic):
    rep = perron_limit(analytic, 0.0, Interval(0, 1), n_max=300)
    assert rep.converged
    assert rep.final == pytest.approx(rep.predicted, abs=1e-6)
    # h(0) pi([0, 1]) times c, which is 1 / (R^2 f'(R))
    assert rep.predicted == pytest.approx(0.2 * ex_pi(2.0, ex_R(2, 2, 0.2), 1.0), rel=1e-4)


def test_limit_not_applicable():
    K = DenseKernel([[0.5, 0.5], [0.25, 0.75]], [0.2, 0.4], [0.5, 0.5])
    rep = classify(K)
    from kernelpf.series import RecurrenceClass

    rep.recurrence = RecurrenceClass.NULL
    with pytest.raises(NotApplicableError):
        perron_limit(K, 0, Labels([0]), report=rep)


def test_periodic_limit_refused_and_cesaro():
    K = period_two()
    with pytest.raises(PeriodicityError):
        perron_limit(K, 0, Labels([0]))
    rep = perron_limit(K, 0, Labels([0]), n_max=2000, cesaro=True)
    raw = scaled_powers(K, 0, Labels([0]), 20, rep.R)
    assert set(np.round(raw[1:], 12)) == {0.0, 1.0}
    assert rep.final == pytest.approx(rep.predicted, abs=2e-3)
    assert rep.predicted == pytest.approx(projection(K.M @ K.M)[0, 0] / 2, rel=1e-9)


def test_applicability_warning_rank_one():
    K = RankOneRemarkKernel.two_state(3.0, 2.0)
    with pytest.warns(ApplicabilityWarning):
        perron_limit(K, 1, Labels([1]), n_max=30)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6))
def test_limit_matches_eigen_oracle(seed, n):
    M, g, gamma = random_atom_kernel(np.random.default_rng(seed), n)
    K = DenseKernel(M, g, gamma)
    P = projection(M)
    x = int(seed % n)
    rep = perron_limit(K, x, Labels([0]), n_max=200)
    assert rep.predicted == pytest.approx(P[x, 0], rel=1e-6)
    assert rep.final == pytest.approx(P[x, 0], rel=1e-6)


def test_summability_bound(analytic):
    """sum_n R^n m^{n-1}(x, A) <= h(x) / eps for A inside {g >= eps}."""
    R = classify(analytic).R
    h = compute_hs(analytic, R)
    A = Interval(0, 1)
    eps = 0.2 * math.exp(-2.0)
    stem = scaled_powers(analytic, 0.0, A, 400, R, "m")
    total = R * float(np.sum(stem[:-1]))
    assert total <= h.at(0.0) / eps + 1e-6


def test_limit_csv(tmp_path, two_by_two):
    rep = perron_limit(two_by_two, 0, Labels([1]), n_max=20)
    path = tmp_path / "trace.csv"
    rep.write_trace_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,value" and len(lines) == 22
