import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kernelpf import WHOLE, AnalyticKernel, DenseKernel, Interval, Labels, Measure, RankOneRemarkKernel
from kernelpf.analytic import analytic_reference, kernel_mass_closed
from kernelpf.errors import (
    DimensionError,
    DivergentSeriesError,
    InvalidAtomError,
    ReducibleKernelError,
    UnrepresentableSetError,
    UnsupportedVariantError,
)
from kernelpf.kernel import (
    apply_adjoint,
    apply_kernel,
    check_irreducible,
    detect_period,
    iterate_kernel,
    parse_set,
    validate_atom,
)

from oracles import ex_stem_power, random_atom_kernel


def dense(M):
    M = np.asarray(M, float)
    n = len(M)
    # matrix-only fixtures: a zero atom, never passed to validate_atom
    return DenseKernel.from_parts(M, np.zeros(n), np.ones(n))


def test_apply_kernel_scalar():
    K = DenseKernel([[2.0]], [1.0], [1.0])
    assert apply_kernel(K, K.function([3.0])).values.tolist() == [6.0]


def test_apply_kernel_permutation():
    K = dense([[0, 1], [1, 0]])
    np.testing.assert_allclose(apply_kernel(K, K.function([1.0, 2.0])).values, [2.0, 1.0])


@pytest.mark.parametrize("M,mu,expected", [
    ([[0, 1], [1, 0]], [1, 0], [0, 1]),
    ([[2]], [3], [6]),
])
def test_apply_adjoint_finite(M, mu, expected):
    K = dense(M)
    out = apply_adjoint(K, Measure(K.space, np.asarray(mu, float)))
    np.testing.assert_allclose(out.masses, expected)


def test_apply_kernel_to_g_analytic(analytic):
    a, b, c = 2.0, 2.0, 0.2
    Mg = apply_kernel(analytic, analytic.g)
    for x in (0.0, 0.37, 1.5, 4.0):
        expected = (c * a / (1 + b)) * math.exp(-b * x) + c * c * math.exp(-b * x)
        assert Mg.at(x) == pytest.approx(expected, rel=1e-9)


def test_apply_adjoint_of_gamma_analytic(analytic):
    # the image of delta_0 is a e^{-y} dy plus the atom c delta_0
    out = apply_adjoint(analytic, analytic.gamma)
    for t in (0.5, 1.0, 3.0):
        assert out.of(Interval(0, t)) == pytest.approx(2.0 * (1 - math.exp(-t)) + 0.2, rel=1e-10)


def test_dimension_mismatch(two_by_two):
    other = DenseKernel([[1.0]], [1.0], [1.0])
    with pytest.raises(DimensionError):
        apply_kernel(two_by_two, other.function([1.0]))
    with pytest.raises(DimensionError):
        apply_adjoint(two_by_two, other.gamma)


@pytest.mark.parametrize("x,A,expected", [(0, Labels([0]), 1.0), (0, Labels([1]), 0.0), (1, WHOLE, 1.0)])
def test_iterate_zero(two_by_two, x, A, expected):
    assert iterate_kernel(two_by_two, 0, x, A) == expected


def test_iterate_matches_matrix_power(rng):
    M, g, gamma = random_atom_kernel(rng, 5)
    K = DenseKernel(M, g, gamma)
    for n in range(6):
        P = np.linalg.matrix_power(M, n)
        assert iterate_kernel(K, n, 2, Labels([1, 3])) == pytest.approx(P[2, 1] + P[2, 3], rel=1e-12)


def test_rank_one_stem_powers():
    # m = g1 gamma1^T with int g1 dgamma1 = a1, so m^n = a1^{n-1} m
    K = RankOneRemarkKernel.two_state(3.0, 2.0)
    for n in range(1, 7):
        brute = np.linalg.matrix_power(K.m, n)
        assert iterate_kernel(K, n, 1, Labels([1]), part="m") == pytest.approx(brute[1, 1])
        assert brute[1, 1] == pytest.approx(3.0 ** (n - 1) * 3.0)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
@pytest.mark.parametrize("t", [0.5, 1.0, 2.5])
def test_analytic_stem_powers_vs_poisson(analytic, n, t):
    got = iterate_kernel(analytic, n, 0.0, Interval(0, t), part="m")
    assert got == pytest.approx(ex_stem_power(2.0, n, 0.0, t), rel=1e-8, abs=1e-12)


def test_unrepresentable_sets(analytic, two_by_two):
    with pytest.raises(UnrepresentableSetError):
        parse_set("0,1", analytic.space)
    with pytest.raises(UnrepresentableSetError):
        two_by_two.space.indicator(Interval(0, 1))


@pytest.mark.parametrize("M,expected", [
    ([[0, 1], [1, 0]], True),
    ([[1, 0], [0, 1]], False),
    ([[0, 1], [0, 1]], False),
])
def test_irreducible(M, expected):
    assert check_irreducible(dense(M)) is expected


def test_irreducible_needs_finite(analytic):
    with pytest.raises(UnsupportedVariantError):
        check_irreducible(analytic)


@pytest.mark.parametrize("M,d", [
    ([[0, 1], [1, 0]], 2),
    ([[1, 1], [1, 1]], 1),
    ([[0, 1, 0], [0, 0, 1], [1, 0, 0]], 3),
    ([[0, 1, 0, 0], [0, 0, 1, 0], [1, 0, 0, 1], [1, 0, 0, 0]], 1),  # cycles of length 4 and 3
])
def test_period(M, d):
    assert detect_period(dense(M)).period == d


def test_period_classes_two_cycle():
    info = detect_period(dense([[0, 1], [1, 0]]))
    assert info.classes == ((0,), (1,))


def test_period_reducible():
    with pytest.raises(ReducibleKernelError):
        detect_period(dense([[1, 0], [0, 1]]))


@st.composite
def cyclic_matrices(draw):
    """Block-cyclic support with random extra chords."""
    d = draw(st.integers(1, 4))
    sizes = draw(st.lists(st.integers(1, 3), min_size=d, max_size=d))
    n = sum(sizes)
    starts = np.cumsum([0] + sizes)
    M = np.zeros((n, n))
    for k in range(d):
        rows = range(starts[k], starts[k + 1])
        nxt = (k + 1) % d
        cols = range(starts[nxt], starts[nxt + 1])
        for i in rows:
            for j in cols:
                M[i, j] = draw(st.sampled_from([0.0, 0.5, 1.0]))
            M[i, starts[nxt]] = 1.0
        for j in cols:
            M[starts[k], j] = 1.0
    return M


@settings(max_examples=60, deadline=None)
@given(cyclic_matrices())
def test_period_classes_respect_support(M):
    K = dense(M)
    if not check_irreducible(K):
        return
    info = detect_period(K)
    for i, j in zip(*np.nonzero(M)):
        assert info.class_of[j] == (info.class_of[i] + 1) % info.period


def test_validate_atom_valid():
    K = DenseKernel([[0.5, 0.5], [0.5, 0.5]], [1.0, 1.0], [0.25, 0.25])
    rep = validate_atom(K)
    assert rep.valid
    np.testing.assert_allclose(K.m, 0.25)


def test_validate_atom_negative():
    # g(1) gamma(0) = 0.35 > M[1, 0] = 0.25 leaves m[1, 0] = -0.1
    K = DenseKernel([[0.5, 0.5], [0.25, 0.75]], [0.2, 0.7], [0.5, 0.5])
    with pytest.raises(InvalidAtomError):
        validate_atom(K)


def test_validate_atom_clamps_rounding():
    M = np.array([[0.5, 0.5], [0.25, 0.75]])
    g, gamma = np.array([0.2, 0.5]), np.array([0.5, 0.5])
    with pytest.warns(RuntimeWarning, match="clamping"):
        K = DenseKernel(M - np.array([[0, 0], [1e-12, 0]]), g, gamma)
    assert validate_atom(K).clamped == 1


def test_validate_atom_analytic(analytic):
    rep = validate_atom(analytic)
    assert rep.valid and rep.max_residual <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6))
def test_decomposition_identity(seed, n):
    M, g, gamma = random_atom_kernel(np.random.default_rng(seed), n)
    K = DenseKernel(M, g, gamma)
    np.testing.assert_allclose(K.m + np.outer(K.g.values, K.gamma.masses), M, atol=1e-12)
    assert (K.m >= 0).all()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 6), k=st.integers(0, 6))
def test_semigroup(seed, n, k):
    M, g, gamma = random_atom_kernel(np.random.default_rng(seed), 4)
    K = DenseKernel(M, g, gamma)
    A = Labels([0, 2])
    lhs = iterate_kernel(K, n + k, 1, A)
    col = np.array([iterate_kernel(K, k, y, A) for y in range(4)])
    rhs = np.linalg.matrix_power(M, n)[1] @ col
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_analytic_kernel_masses(analytic):
    a, b, c = 2.0, 2.0, 0.2
    for x in (0.0, 0.3, 2.0):
        for t in (0.1, 1.0, 5.0):
            got = analytic.kernel_set_at(x, Interval(0, t))
            assert got == pytest.approx(kernel_mass_closed(a, b, c, x, t), rel=1e-12, abs=1e-14)


def test_analytic_m_s_convergence_order():
    """Error of the quadrature m_s against the closed form shrinks with the grid."""
    s, x, t = 0.4, 0.2, 1.3
    ref = analytic_reference(2.0, 2.0, 0.2, s, x, t).m_s
    errs = []
    for n in (24, 48, 96):
        K = AnalyticKernel(2.0, 2.0, 0.2, T=12.0, n=n, rule="trapezoid")
        vals = [iterate_kernel(K, k, x, Interval(0, t), part="m") for k in range(60)]
        errs.append(abs(s * sum(s**k * v for k, v in enumerate(vals)) - ref))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert (orders >= 1.0).all(), (errs, orders)


def test_analytic_reference_criticality():
    assert analytic_reference(2, 2, 1 / 3, 0.5, 0, 1).criticality == "critical"
    assert analytic_reference(2, 2, 1 / 3, 0.5, 0, 1).R == pytest.approx(1.0)
    assert analytic_reference(2, 2, 0.2, 0.5, 0, 1).criticality == "subcritical"
    ref = analytic_reference(2, 2, 0.2, 1e-8, 0, 1)
    assert ref.f_s / 1e-8 == pytest.approx(0.2)


def test_analytic_reference_diverges():
    with pytest.raises(DivergentSeriesError):
        analytic_reference(2, 2, 0.2, 1.5, 0, 1)


def test_analytic_truncation(analytic):
    assert analytic.truncation_error < 1e-8
    assert AnalyticKernel(2, 2, 0.2, n=80).space.T == 28.0
    assert math.exp(-28.0) < 1e-12
