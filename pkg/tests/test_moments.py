import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entrostat import moments as mo
from entrostat import sampling
from entrostat.core import DomainError, Spectrum


def dense_swap(l):
    s = np.zeros((l * l, l * l))
    for a in range(l):
        for b in range(l):
            s[b * l + a, a * l + b] = 1.0
    return s


# ---------------------------------------------------------------- weingarten

def test_weingarten_order2_l4():
    t = mo.weingarten(2, 4)
    assert t.coeffs[(1, 1)] == Fraction(1, 15)
    assert t.coeffs[(2,)] == Fraction(-1, 60)


def test_weingarten_order4_l4():
    assert mo.weingarten(4, 4).coeffs[(4,)] == Fraction(-1, 1008)


def test_weingarten_leading_asymptotics():
    assert mo.weingarten(2, 10 ** 6)[(1, 1)] * 1e12 == pytest.approx(1.0, rel=1e-11)


def test_weingarten_order4_orthogonality():
    # sum over S_4 of Wg(sigma) L^{#cycles(sigma)} equals 1 (Wg is the inverse Gram matrix)
    import itertools
    for l in (4, 5, 7):
        t = mo.weingarten(4, l)
        total = sum(t.of_permutation(p) * Fraction(l) ** len(mo._cycle_type(p))
                    for p in itertools.permutations(range(4)))
        assert total == 1


@pytest.mark.parametrize("order, l", [(2, 1), (4, 3), (4, 2), (3, 5)])
def test_weingarten_poles(order, l):
    with pytest.raises(DomainError):
        mo.weingarten(order, l)


def test_monomial_examples():
    est, err = mo.unitary_monomial_mc(3, ((0,), (0,), (0,), (0,)), 20_000, seed=1)
    assert abs(est - 1 / 3) <= 3 * err
    est, err = mo.unitary_monomial_mc(3, ((0, 0), (0, 0), (0, 0), (0, 0)), 20_000, seed=2)
    assert abs(est - 1 / 6) <= 3 * err
    assert mo.weingarten_integral(3, (0, 0), (0, 0), (0, 0), (0, 0)) == pytest.approx(1 / 6)
    pat = ((0, 1), (0, 1), (0, 1), (0, 1))
    est, err = mo.unitary_monomial_mc(4, pat, 20_000, seed=3)
    assert abs(est - mo.weingarten_integral(4, *pat)) <= 3 * err


def test_monomial_reproducible_across_workers():
    pat = ((0, 1), (1, 0), (0, 1), (1, 0))
    a = mo.unitary_monomial_mc(3, pat, 4000, seed=9, workers=1)
    b = mo.unitary_monomial_mc(3, pat, 4000, seed=9, workers=4)
    assert a == b


def test_monomial_rejects_small_inputs():
    with pytest.raises(DomainError):
        mo.unitary_monomial_mc(1, ((0,), (0,), (0,), (0,)), 2000)
    with pytest.raises(DomainError):
        mo.unitary_monomial_mc(3, ((0,), (0,), (0,), (0,)), 10)


# ---------------------------------------------------------------- twirl

@pytest.mark.parametrize("l", [2, 3, 4])
def test_twirl_fixed_points(l):
    eye = np.eye(l * l)
    swap = dense_swap(l)
    assert np.allclose(mo.twirl2(eye, l).to_dense(), eye, atol=1e-14)
    assert np.allclose(mo.twirl2(swap, l).to_dense(), swap, atol=1e-14)
    assert np.allclose(mo.swap_operator(l).toarray(), swap)


def test_twirl_product_state():
    gen = np.random.default_rng(4)
    for l in (2, 3, 5):
        psi = gen.normal(size=l) + 1j * gen.normal(size=l)
        psi /= np.linalg.norm(psi)
        pp = np.kron(psi, psi)
        out = mo.twirl2(np.outer(pp, pp.conj()), l).to_dense()
        assert np.max(np.abs(out - (np.eye(l * l) + dense_swap(l)) / (l * (l + 1)))) < 1e-12


def random_operator(gen, l):
    return gen.normal(size=(l * l, l * l)) + 1j * gen.normal(size=(l * l, l * l))


def test_twirl_idempotent_and_trace_preserving():
    gen = np.random.default_rng(5)
    for l in (2, 3, 4):
        theta = random_operator(gen, l)
        once = mo.twirl2(theta, l)
        twice = mo.twirl2(once, l)
        assert np.max(np.abs(once.to_dense() - twice.to_dense())) < 1e-12
        assert np.max(np.abs(once.to_dense() - mo.twirl2(once.to_dense(), l).to_dense())) < 1e-12
        assert abs(once.trace() - np.trace(theta)) < 1e-12 * max(1, abs(np.trace(theta)))


def test_twirl_accepts_sparse():
    gen = np.random.default_rng(6)
    theta = random_operator(gen, 3)
    from scipy import sparse
    a = mo.twirl2(theta, 3)
    b = mo.twirl2(sparse.csr_matrix(theta), 3)
    assert a.c_id == pytest.approx(b.c_id) and a.c_swap == pytest.approx(b.c_swap)


def test_twirl_commutes_with_product_unitaries():
    gen = np.random.default_rng(7)
    l = 3
    out = mo.twirl2(random_operator(gen, l), l).to_dense()
    for v in sampling.haar_unitaries(l, 20, 8):
        w = np.kron(v, v)
        assert np.max(np.abs(w @ out - out @ w)) < 1e-10


def test_twirl_matvec():
    op = mo.IdSwapOperator(3, 0.5, -0.25)
    v = np.arange(9.0)
    assert np.allclose(op.matvec(v), op.to_dense() @ v)


def test_twirl_rejects():
    with pytest.raises(DomainError):
        mo.twirl2(np.eye(1), 1)
    with pytest.raises(DomainError):
        mo.twirl2(np.eye(5), 2)


def test_twirl_mc_matches():
    gen = np.random.default_rng(10)
    theta = random_operator(gen, 2)
    est, err = mo.twirl2_mc(theta, 2, 10_000, seed=11)
    z = np.abs(est - mo.twirl2(theta, 2).to_dense()) / err
    assert z.max() <= 4


# ---------------------------------------------------------------- pure states

@pytest.mark.parametrize("n, m, expected", [(4, 4, 8 / 17), (1, 7, 1.0), (2, 3, 5 / 7)])
def test_pure_first_moment(n, m, expected):
    assert mo.pure_first_moment(n, m) == pytest.approx(expected, abs=1e-15)


def test_pure_second_cumulant():
    # 2 (N^2-1)(M^2-1) / ((1+NM)^2 (2+NM)(3+NM)) at N=M=2 is 2*3*3/(25*6*7)
    assert mo.pure_second_cumulant(2, 2) == pytest.approx(3 / 175, abs=1e-15)
    assert mo.pure_second_cumulant(1, 5) == 0.0
    assert mo.pure_second_cumulant(200, 200) * 200 ** 4 == pytest.approx(2.0, rel=1e-3)


@pytest.mark.parametrize("order, expected", [(1, lambda n: 2 / n), (2, lambda n: 2 / n ** 4),
                                             (3, lambda n: 16 / n ** 7)])
def test_pure_cumulant_asymptotic(order, expected):
    for n in (3, 10, 50):
        assert mo.pure_cumulant_asymptotic(order, n) == pytest.approx(expected(n), rel=1e-14)


def test_pure_second_cumulant_mc():
    lam = sampling.reduced_spectra(sampling.BipartiteDims(2, 2), 100_000, sampling.RngSpec(3, 1))
    p = np.sum(lam ** 2, axis=1)
    var = p.var(ddof=1)
    se = math.sqrt((np.mean((p - p.mean()) ** 4) - var ** 2) / p.size)
    assert abs(var - 3 / 175) <= 3 * se


# ---------------------------------------------------------------- mixed states

def test_mixed_first_moment_examples():
    for n, m in [(2, 2), (2, 5), (3, 3)]:
        assert mo.mixed_first_moment(1 / (n * m), n, m) == pytest.approx(1 / n, abs=1e-15)
    assert mo.mixed_first_moment(1.0, 3, 3) == pytest.approx(0.6, abs=1e-15)
    l = 400 ** 2
    assert mo.mixed_first_moment(0.5, 400, 400) == pytest.approx(1.5 / math.sqrt(l), rel=1e-2)
    with pytest.raises(DomainError):
        mo.mixed_first_moment(1.5, 2, 2)
    with pytest.raises(DomainError):
        mo.mixed_first_moment(0.1, 2, 2)


@given(st.integers(1, 12), st.integers(1, 12))
@settings(max_examples=80, deadline=None)
def test_mixed_first_moment_pure_identity(n, m):
    if n * m == 1:
        return
    assert abs(mo.mixed_first_moment(1.0, n, m) - mo.pure_first_moment(n, m)) < 1e-14


@given(st.integers(2, 9), st.integers(2, 9))
@settings(max_examples=50, deadline=None)
def test_mixed_first_moment_affine_increasing(n, m):
    xs = np.linspace(1 / (n * m), 1, 25)
    vals = np.array([mo.mixed_first_moment(x, n, m) for x in xs])
    assert np.all(np.diff(vals) > 0)
    slope = (vals[-1] - vals[0]) / (xs[-1] - xs[0])
    assert slope == pytest.approx(m * (n * n - 1) / (n * n * m * m - 1), rel=1e-12)
    assert mo.mixed_slope(n, m) == pytest.approx(slope, rel=1e-12)


@pytest.mark.parametrize("n, m", [(2, 2), (2, 3), (3, 3)])
def test_second_moment_maximally_mixed(n, m):
    l = n * m
    assert mo.mixed_second_moment_given_spectrum(Spectrum(np.full(l, 1 / l)), n, m) == pytest.approx(
        1 / n ** 2, abs=1e-12)


@pytest.mark.parametrize("n, m", [(2, 2), (2, 3), (3, 3), (2, 4)])
def test_second_moment_pure_consistency(n, m):
    pure = np.zeros(n * m)
    pure[0] = 1
    expect = mo.pure_second_cumulant(n, m) + mo.pure_first_moment(n, m) ** 2
    assert mo.mixed_second_moment_given_spectrum(Spectrum(pure), n, m) == pytest.approx(expect, abs=1e-12)


def test_second_moment_mc_generic_spectrum():
    spec = Spectrum([0.5, 0.25, 0.15, 0.1, 0.0, 0.0])
    closed = mo.mixed_second_moment_given_spectrum(spec, 2, 3)
    est, err = mo.mixed_second_moment_mc(spec, 2, 3, 40_000, seed=12)
    assert abs(est - closed) <= 3 * err


def test_second_moment_rejects():
    with pytest.raises(DomainError):
        mo.mixed_second_moment_given_spectrum(Spectrum([0.5, 0.5]), 2, 2)
    with pytest.raises(DomainError):
        mo.mixed_second_moment_given_spectrum(Spectrum([0.5, 0.5, 0]), 1, 3)


def test_mixed_second_cumulant_examples():
    assert mo.mixed_second_cumulant(1.0, 2, 3, 1.0, 1.0) == pytest.approx(mo.pure_second_cumulant(2, 3), abs=1e-14)
    for n, m in [(2, 2), (3, 3), (2, 5)]:
        l = n * m
        assert mo.mixed_second_cumulant(1 / l, n, m, 1 / l ** 2, 1 / l ** 3) == pytest.approx(0.0, abs=1e-14)


def test_mixed_second_cumulant_against_binned_variance():
    # at l=9 the purified ensemble concentrates near x ~ 0.2, so populated bins are used
    be = sampling.purified_mixed_ensemble(9, 60_000, 40, rng=sampling.RngSpec(13, 0), n=3)
    width = be.edges[1] - be.edges[0]
    spread = mo.mixed_slope(3, 3) ** 2 * width ** 2 / 12  # variance of M1 across one bin
    used = np.nonzero(be.counts >= 3000)[0]
    assert used.size >= 3
    for k in used:
        k2 = mo.mixed_second_cumulant(be.mean_x[k], 3, 3, be.mean_t3[k], be.mean_t4[k])
        assert be.var_piA[k] / (k2 + spread) == pytest.approx(1.0, abs=0.06)


def test_variance_positivity_on_sampled_triples():
    for l, n in ((4, 2), (6, 2), (9, 3)):
        rows = sampling.purified_samples(l, 2000, sampling.RngSpec(14, l), n=n)
        k2 = [mo.mixed_second_cumulant(x, n, l // n, t3, t4) for x, _, t3, t4 in rows]
        assert min(k2) >= -1e-12


def test_high_temp_first_moment():
    n = m = 3
    l = 9
    for beta in (-0.3, 0.0, 0.2):
        assert mo.high_temp_first_moment(1 / l, beta, n, m, 1 / l ** 2, 1 / l ** 3) == pytest.approx(1 / n, abs=1e-14)
    assert mo.high_temp_first_moment(0.4, 0.0, n, m, 0.1, 0.05) == mo.mixed_first_moment(0.4, n, m)
    # balanced pure case: beta = beta' L^(3/2) turns M1 - beta K2 into (1 - beta') 2/sqrt(L)
    n = 30
    l = n * n
    beta_p = 0.3
    val = mo.high_temp_first_moment(1.0, beta_p * l ** 1.5, n, n, 1.0, 1.0)
    assert val == pytest.approx((1 - beta_p) * 2 / math.sqrt(l), rel=2e-2)


def test_gaussian_first_moment():
    assert mo.gaussian_first_moment(1.0, 5, 5) == pytest.approx(2 / 5)
    assert mo.gaussian_first_moment(0.0, 5, 7) == pytest.approx(1 / 5)
    l = 64
    gap = abs(mo.gaussian_first_moment(0.5, 8, 8) - mo.mixed_first_moment(0.5, 8, 8))
    assert gap * l < 1.0
