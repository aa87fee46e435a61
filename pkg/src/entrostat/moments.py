"""Moments and cumulants of the subsystem purity.

Pure global states: exact first moment and second cumulant, and the large-N
cumulants. Mixed global states (purified on a doubled space): exact first
and second moments through the 2-fold twirl and order-2/order-4 Weingarten
coefficients.

Moments of order k >= 3 for mixed states would need Weingarten functions on
S_2k; they depend on the conjugacy class of the permutation pairing the
indices, but are not implemented here.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy import sparse

from .core import DomainError, Spectrum, trace_power
from .sampling import RngLike, as_spec, haar_unitaries, run_chunks


# ---------------------------------------------------------------------------
# Weingarten coefficients

def _cycle_type(perm: Sequence[int]) -> Tuple[int, ...]:
    seen = [False] * len(perm)
    lens = []
    for start in range(len(perm)):
        if seen[start]:
            continue
        k, c = start, 0
        while not seen[k]:
            seen[k] = True
            k = perm[k]
            c += 1
        lens.append(c)
    return tuple(sorted(lens, reverse=True))


@dataclass(frozen=True)
class WeingartenTable:
    order: int
    l: int
    coeffs: Dict[Tuple[int, ...], Fraction] = field(hash=False)

    def __getitem__(self, label) -> float:
        return float(self.coeffs[tuple(label)])

    def of_permutation(self, perm: Sequence[int]) -> Fraction:
        return self.coeffs[_cycle_type(perm)]


def weingarten(order: int, l: int) -> WeingartenTable:
    """Exact Weingarten coefficients Wg(sigma, l) for sigma in S_2 or S_4."""
    if order not in (1, 2, 4):
        raise DomainError("order must be 1, 2 or 4")
    if l < order or l < 2 and order > 1:
        # poles sit at L = 1 (order 2) and L = 1, 2, 3 (order 4)
        raise DomainError(f"l={l} hits a pole of the order-{order} coefficients")
    L = Fraction(int(l))
    if order == 1:
        return WeingartenTable(1, l, {(1,): 1 / L})
    if order == 2:
        c = {
            (1, 1): 1 / ((L - 1) * (L + 1)),
            (2,): -1 / ((L - 1) * L * (L + 1)),
        }
        return WeingartenTable(2, l, c)
    d = (L - 3) * (L - 2) * (L - 1) * L ** 2 * (L + 1) * (L + 2) * (L + 3)
    c = {
        (1, 1, 1, 1): (L ** 4 - 8 * L ** 2 + 6) / d,
        (2, 1, 1): -1 / ((L - 3) * (L - 1) * L * (L + 1) * (L + 3)),
        (2, 2): (L ** 2 + 6) / d,
        (3, 1): (2 * L ** 2 - 3) / d,
        (4,): -5 / ((L - 3) * (L - 2) * (L - 1) * L * (L + 1) * (L + 2) * (L + 3)),
    }
    return WeingartenTable(4, l, c)


def weingarten_integral(l: int, i, j, ip, jp) -> float:
    """Haar average of U_{i1 j1}...U_{ik jk} conj(U_{i'1 j'1})...conj(U_{i'k j'k}).

    Sum over sigma, tau in S_k of delta(i, i' o sigma) delta(j, j' o tau)
    Wg(sigma tau^-1); k must be 1, 2 or 4.
    """
    k = len(i)
    if not (len(j) == len(ip) == len(jp) == k):
        raise DomainError("index tuples must have equal length")
    table = weingarten(k, l)
    total = Fraction(0)
    perms = list(itertools.permutations(range(k)))
    for sigma in perms:
        if any(i[a] != ip[sigma[a]] for a in range(k)):
            continue
        for tau in perms:
            if any(j[a] != jp[tau[a]] for a in range(k)):
                continue
            tau_inv = [0] * k
            for a, t in enumerate(tau):
                tau_inv[t] = a
            total += table.of_permutation([sigma[tau_inv[a]] for a in range(k)])
    return float(total)


def order2_patterns(l: int):
    """All order-2 index patterns up to relabelling, as (i, j, i', j')."""
    pats = []
    vals = range(min(l, 2))
    for i in itertools.product(vals, repeat=2):
        for j in itertools.product(vals, repeat=2):
            for ip in itertools.permutations(i):
                for jp in itertools.permutations(j):
                    pats.append((i, j, tuple(ip), tuple(jp)))
    return sorted(set(pats))


def unitary_monomial_mc(l: int, pairing, samples: int, seed: RngLike = 0, batches: int = 20,
                        workers: int = 1):
    """Monte Carlo estimate of a unitary monomial with batch-means stderr.

    ``pairing`` is (i, j, i', j'): U factors at (i_a, j_a), conjugate factors at
    (i'_a, j'_a). Each batch uses its own sub-stream.
    """
    if l < 2 or samples < 1000:
        raise DomainError("need l >= 2 and samples >= 1000")
    batches = max(int(batches), 20)
    i, j, ip, jp = (np.asarray(p, dtype=int) for p in pairing)
    base = as_spec(seed)
    per = samples // batches

    def work(b):
        u = haar_unitaries(l, per, base.child(b))
        val = np.prod(u[:, i, j], axis=1) * np.prod(np.conj(u[:, ip, jp]), axis=1)
        return val.mean()

    means = np.array(run_chunks(work, list(range(batches)), workers))
    est = means.mean()
    err = math.hypot(means.real.std(ddof=1), means.imag.std(ddof=1)) / math.sqrt(batches)
    return complex(est), float(err)


# ---------------------------------------------------------------------------
# 2-fold twirl on the doubled space

def swap_permutation(l: int) -> np.ndarray:
    """perm[a] = S(a) for the basis index a = i*l + j of C^l (x) C^l."""
    a = np.arange(l * l)
    return (a % l) * l + a // l


def swap_operator(l: int) -> sparse.csr_matrix:
    perm = swap_permutation(l)
    return sparse.csr_matrix((np.ones(l * l), (perm, np.arange(l * l))), shape=(l * l, l * l))


@dataclass(frozen=True)
class IdSwapOperator:
    """c_id * I + c_swap * S on C^l (x) C^l, kept in factored form."""

    l: int
    c_id: complex
    c_swap: complex

    def to_sparse(self) -> sparse.csr_matrix:
        eye = sparse.identity(self.l * self.l, dtype=complex, format="csr")
        return (self.c_id * eye + self.c_swap * swap_operator(self.l)).tocsr()

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def trace(self) -> complex:
        return self.c_id * self.l ** 2 + self.c_swap * self.l

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.c_id * v + self.c_swap * v[swap_permutation(self.l)]


def _trace_and_swap_trace(theta, l: int):
    perm = swap_permutation(l)
    if isinstance(theta, IdSwapOperator):
        return theta.trace(), theta.c_id * l + theta.c_swap * l ** 2
    if sparse.issparse(theta):
        th = theta.tocsr()
        tr = th.diagonal().sum()
        tr_s = np.asarray(th[perm, np.arange(l * l)]).ravel().sum()
        return tr, tr_s
    th = np.asarray(theta)
    if th.shape != (l * l, l * l):
        raise DomainError(f"theta must be {l * l}x{l * l}")
    idx = np.arange(l * l)
    return np.trace(th), th[perm, idx].sum()


def twirl2(theta, l: int) -> IdSwapOperator:
    """Haar average of (U (x) U) theta (U (x) U)^dagger.

    Only Tr(theta) and Tr(S theta) are needed; S acts as an index permutation.
    """
    if l < 2:
        raise DomainError("l must be >= 2")
    tr, tr_s = _trace_and_swap_trace(theta, l)
    den = l * (l * l - 1)
    return IdSwapOperator(l, (l * tr - tr_s) / den, (l * tr_s - tr) / den)


def twirl2_mc(theta: np.ndarray, l: int, samples: int, seed: RngLike = 0, batches: int = 20,
              workers: int = 1):
    """Entrywise Monte Carlo twirl with batch-means stderr (dense; small l only)."""
    theta = np.asarray(theta, dtype=complex)
    base = as_spec(seed)
    batches = max(int(batches), 20)
    per = samples // batches

    def work(b):
        us = haar_unitaries(l, per, base.child(b))
        acc = np.zeros_like(theta)
        for u in us:
            w = np.kron(u, u)
            acc += w @ theta @ w.conj().T
        return acc / per

    means = np.array(run_chunks(work, list(range(batches)), workers))
    est = means.mean(axis=0)
    err = np.hypot(means.real.std(axis=0, ddof=1), means.imag.std(axis=0, ddof=1)) / math.sqrt(batches)
    return est, err


# ---------------------------------------------------------------------------
# pure global states

def pure_first_moment(n: int, m: int) -> float:
    return (n + m) / (n * m + 1)


def pure_second_cumulant(n: int, m: int) -> float:
    L = n * m
    num = 2 * (n * n - 1) * (m * m - 1)
    den = (1 + L) ** 2 * (2 + L) * (3 + L)
    return float(Fraction(num, den))


def pure_cumulant_asymptotic(order: int, n: int) -> float:
    """Large-n cumulant K_k = 2^(k+1) (3k-3)! / ((2k)! n^(3k-2)) for n = m."""
    if order < 1:
        raise DomainError("order must be >= 1")
    k = order
    return 2.0 ** (k + 1) * math.factorial(3 * k - 3) / math.factorial(2 * k) / float(n) ** (3 * k - 2)


# ---------------------------------------------------------------------------
# mixed global states

def _check_x(x: float, n: int, m: int) -> None:
    if not (1.0 / (n * m) - 1e-14 <= x <= 1.0 + 1e-14):
        raise DomainError(f"x={x!r} outside [1/(nm), 1]")


def mixed_first_moment(x: float, n: int, m: int) -> float:
    """Average purity of subsystem A given global purity x."""
    _check_x(x, n, m)
    L2 = (n * m) ** 2
    return (m * (n * n - 1) * x + n * (m * m - 1)) / (L2 - 1)


def mixed_slope(n: int, m: int) -> float:
    return m * (n * n - 1) / ((n * m) ** 2 - 1)


def _second_moment_coeffs(n: int, m: int):
    """Exact rational coefficients of {1, T2, T2^2, T3, T4} in M2."""
    N2, M2, NM = n * n, m * m, n * m
    L2 = NM * NM
    c = Fraction(1, L2 * (L2 - 7) ** 2 - 36)
    k0 = (M2 - 1) * (N2 * N2 * M2 * (M2 - 1) - 2 * N2 * (6 * M2 - 7) + 22)
    k1 = 2 * NM * (N2 - 1) * (M2 - 1) * (L2 - 14)
    k2 = (N2 - 1) * (M2 * M2 * N2 * N2 + M2 * M2 * N2 - 14 * L2 + 6 * M2 + 30)
    k3 = 40 * (N2 - 1) * (M2 - 1)
    k4 = -10 * NM * (N2 - 1) * (M2 - 1)
    return [c * k for k in (k0, k1, k2, k3, k4)]


def mixed_second_moment_given_spectrum(spec: Spectrum, n: int, m: int) -> float:
    """E[pi_A^2] over Haar rotations of a global state with spectrum spec."""
    if len(spec) != n * m:
        raise DomainError(f"spectrum length {len(spec)} != n*m = {n * m}")
    if n * m < 4:
        raise DomainError("n*m must be >= 4")
    t2 = trace_power(spec, 2)
    t3 = trace_power(spec, 3)
    t4 = trace_power(spec, 4)
    k = _second_moment_coeffs(n, m)
    return float(k[0]) + float(k[1]) * t2 + float(k[2]) * t2 * t2 + float(k[3]) * t3 + float(k[4]) * t4


def mixed_second_cumulant(x: float, n: int, m: int, t3: float, t4: float) -> float:
    """Second cumulant of pi_A at global purity x, given <Tr L^3>_x = t3 and <Tr L^4>_x = t4."""
    _check_x(x, n, m)
    if not (0 < t3 <= 1 + 1e-14 and 0 < t4 <= 1 + 1e-14):
        raise DomainError("t3 and t4 must lie in (0, 1]")
    N2, M2, NM = n * n, m * m, n * m
    L2 = NM * NM
    P = (N2 - 1) * (M2 - 1)
    Q = (L2 - 1) ** 2 * (L2 * L2 - 13 * L2 + 36)
    c = Fraction(1, L2 * (L2 - 7) ** 2 - 36)
    a0 = float(Fraction(2 * P * (L2 + 11), Q))
    a1 = float(Fraction(-4 * NM * P * (L2 + 11), Q))
    a2 = float(Fraction(2 * P * (L2 * L2 - 4 * L2 + 15), Q))
    b3 = float(40 * P * c)
    b4 = float(-10 * NM * P * c)
    return a0 + a1 * x + a2 * x * x + b3 * t3 + b4 * t4


def high_temp_first_moment(x: float, beta: float, n: int, m: int, t3: float, t4: float) -> float:
    """First-order expansion M1(x) - beta K2(x) around beta = 0."""
    return mixed_first_moment(x, n, m) - beta * mixed_second_cumulant(x, n, m, t3, t4)


def gaussian_first_moment(x: float, n: int, m: int) -> float:
    """Leading large-L approximation 1/n + x/m."""
    return 1.0 / n + x / m


def mixed_second_moment_mc(spec: Spectrum, n: int, m: int, samples: int, seed: RngLike = 0,
                           batches: int = 20, workers: int = 1):
    """Brute-force Haar average of pi_A^2 for rho = U diag(spec) U^dagger."""
    lam = np.asarray(spec.values)
    l = n * m
    base = as_spec(seed)
    batches = max(int(batches), 20)
    per = samples // batches

    def work(b):
        u = haar_unitaries(l, per, base.child(b))
        rho = (u * lam[None, None, :]) @ np.conj(np.swapaxes(u, 1, 2))
        rho_a = np.einsum("kajbj->kab", rho.reshape(per, n, m, n, m))
        pa = np.real(np.einsum("kab,kba->k", rho_a, rho_a))
        return np.mean(pa ** 2)

    means = np.array(run_chunks(work, list(range(batches)), workers))
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(batches))
