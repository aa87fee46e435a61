"""Random states: Haar unitaries, reduced spectra, simplex points, purified
mixed states and a Metropolis sampler for the eigenvalue Coulomb gas."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Union

import numpy as np

from ._accel import USE_NUMBA, optional_njit
from .core import BipartiteDims, DomainError, Spectrum


# ---------------------------------------------------------------------------
# random streams

@dataclass(frozen=True)
class RngSpec:
    """(seed, stream) pair naming a counter-based Philox stream."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngSpec":
        """Independent sub-stream, used per batch or per worker chunk."""
        return RngSpec(self.seed, (int(self.stream) << 20) + 1 + int(index))


RngLike = Union[RngSpec, np.random.Generator, int, None]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator()
    return RngSpec(0 if rng is None else int(rng)).generator()


def as_spec(rng: RngLike) -> RngSpec:
    if isinstance(rng, RngSpec):
        return rng
    if isinstance(rng, np.random.Generator):
        return RngSpec(int(rng.integers(0, 2 ** 63)))
    return RngSpec(0 if rng is None else int(rng))


def run_chunks(func, specs: Sequence, workers: int = 1) -> list:
    """Apply func to each chunk spec; results are returned in chunk order."""
    if workers <= 1 or len(specs) <= 1:
        return [func(s) for s in specs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, specs))


# ---------------------------------------------------------------------------
# Haar measure

def ginibre(shape, gen: np.random.Generator) -> np.ndarray:
    return (gen.standard_normal(shape) + 1j * gen.standard_normal(shape)) / math.sqrt(2.0)


def haar_unitaries(l: int, count: int, rng: RngLike) -> np.ndarray:
    """Stack of ``count`` Haar unitaries, shape (count, l, l)."""
    if l < 1:
        raise DomainError("l must be >= 1")
    gen = as_generator(rng)
    z = ginibre((count, l, l), gen)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    ph = d / np.abs(d)
    return q * ph[:, None, :]


def haar_unitary(l: int, rng: RngLike) -> np.ndarray:
    return haar_unitaries(l, 1, rng)[0]


def haar_states(dim: int, count: int, gen: np.random.Generator) -> np.ndarray:
    psi = ginibre((count, dim), gen)
    return psi / np.linalg.norm(psi, axis=1, keepdims=True)


def reduced_spectra(dims: BipartiteDims, count: int, rng: RngLike) -> np.ndarray:
    """Descending Schmidt spectra of ``count`` Haar pure states, shape (count, n)."""
    gen = as_generator(rng)
    n, m = dims.n, dims.m
    psi = haar_states(n * m, count, gen).reshape(count, n, m)
    rho = psi @ np.conj(np.swapaxes(psi, 1, 2))
    ev = np.linalg.eigvalsh(rho)[:, ::-1]
    ev = np.clip(ev, 0.0, None)
    return ev / ev.sum(axis=1, keepdims=True)


def reduced_spectrum(dims: BipartiteDims, rng: RngLike) -> Spectrum:
    return Spectrum.normalized(reduced_spectra(dims, 1, rng)[0])


def simplex_points(l: int, count: int, rng: RngLike) -> np.ndarray:
    """Uniform points on the (l-1)-simplex via normalized exponentials."""
    if l < 1:
        raise DomainError("l must be >= 1")
    gen = as_generator(rng)
    e = gen.standard_exponential((count, l))
    return e / e.sum(axis=1, keepdims=True)


def simplex_uniform(l: int, rng: RngLike) -> Spectrum:
    return Spectrum.normalized(simplex_points(l, 1, rng)[0])


# ---------------------------------------------------------------------------
# purified mixed states

@dataclass
class BinnedEnsemble:
    """Purity-binned statistics of a purified mixed-state ensemble."""

    edges: np.ndarray
    counts: np.ndarray
    mean_x: np.ndarray
    mean_piA: np.ndarray
    var_piA: np.ndarray
    mean_t3: np.ndarray
    mean_t4: np.ndarray
    n: int = 0
    m: int = 0
    total_mean_t3: float = float("nan")
    total_mean_t4: float = float("nan")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_json(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]

        return {
            "edges": clean(self.edges),
            "counts": [int(c) for c in self.counts],
            "mean_x": clean(self.mean_x),
            "mean_piA": clean(self.mean_piA),
            "var_piA": clean(self.var_piA),
            "mean_t3": clean(self.mean_t3),
            "mean_t4": clean(self.mean_t4),
        }

    def dump(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


def purified_samples(l: int, count: int, rng: RngLike, n: Optional[int] = None) -> np.ndarray:
    """Rows (x, pi_A, Tr L^3, Tr L^4) for ``count`` purified mixed states.

    A Haar vector on H_X (x) H_X' (dimension l^2) is reduced to rho_X; its
    spectrum gives x and the trace invariants, a further partial trace over B
    (with l = n m) gives the subsystem purity pi_A.
    """
    if l < 2:
        raise DomainError("l must be >= 2")
    if n is None:
        n = math.isqrt(l)
    if l % n:
        raise DomainError(f"n={n} does not divide l={l}")
    m = l // n
    gen = as_generator(rng)
    psi = haar_states(l * l, count, gen).reshape(count, l, l)
    rho = psi @ np.conj(np.swapaxes(psi, 1, 2))
    lam = np.clip(np.linalg.eigvalsh(rho), 0.0, None)
    x = np.sum(lam ** 2, axis=1)
    t3 = np.sum(lam ** 3, axis=1)
    t4 = np.sum(lam ** 4, axis=1)
    rho_a = np.einsum("kajbj->kab", rho.reshape(count, n, m, n, m))
    pi_a = np.real(np.einsum("kab,kba->k", rho_a, rho_a))
    return np.column_stack([x, pi_a, t3, t4])


def purified_mixed_ensemble(l: int, samples: int, bins: int = 40, rng: RngLike = 0,
                            n: Optional[int] = None, workers: int = 1,
                            chunk: int = 10000) -> BinnedEnsemble:
    """Bin purified samples by x on [1/l, 1] with equal-width bins.

    Each chunk draws from its own sub-stream, so the result depends on
    (seed, chunk) only and not on the worker count.
    """
    if n is None:
        n = math.isqrt(l)
    base = as_spec(rng)
    sizes = [min(chunk, samples - i) for i in range(0, samples, chunk)]
    edges = np.linspace(1.0 / l, 1.0, bins + 1)

    def work(args):
        idx, size = args
        rows = purified_samples(l, size, base.child(idx), n=n)
        b = np.clip(np.searchsorted(edges, rows[:, 0], side="right") - 1, 0, bins - 1)
        # accumulator columns: count, x, pi_A, pi_A^2, t3, t4
        acc = np.zeros((bins, 6))
        np.add.at(acc[:, 0], b, 1.0)
        np.add.at(acc[:, 3], b, rows[:, 1] ** 2)
        for k, col in ((1, 0), (2, 1), (4, 2), (5, 3)):
            np.add.at(acc[:, k], b, rows[:, col])
        return acc, rows[:, 2].sum(), rows[:, 3].sum()

    parts = run_chunks(work, list(enumerate(sizes)), workers)
    acc = np.zeros((bins, 6))
    t3_tot = t4_tot = 0.0
    for a, s3, s4 in parts:  # fixed order keeps sums bit-reproducible
        acc += a
        t3_tot += s3
        t4_tot += s4
    cnt = acc[:, 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_x = acc[:, 1] / cnt
        mean_pi = acc[:, 2] / cnt
        var_pi = (acc[:, 3] - cnt * mean_pi ** 2) / (cnt - 1)
        mean_t3 = acc[:, 4] / cnt
        mean_t4 = acc[:, 5] / cnt
    return BinnedEnsemble(edges, cnt.astype(int), mean_x, mean_pi, var_pi, mean_t3, mean_t4,
                          n=n, m=l // n, total_mean_t3=t3_tot / samples, total_mean_t4=t4_tot / samples)


# ---------------------------------------------------------------------------
# canonical-ensemble Metropolis chain

@optional_njit
def _mcmc_kernel(lam, beta_s, h, pick_i, pick_j, u_eps, u_acc, thin, out, out_start):
    """Pairwise mass-transfer Metropolis sweep over len(pick_i) steps.

    Target: exp(-beta_s sum lam^2) prod_{i<j} (lam_i - lam_j)^2 on the simplex.
    Every ``thin``-th state is copied into ``out`` from row ``out_start``.
    Returns (accepted, rows written).
    """
    n = lam.shape[0]
    steps = pick_i.shape[0]
    acc = 0
    row = out_start
    for t in range(steps):
        i = pick_i[t]
        j = pick_j[t]
        if j >= i:
            j += 1
        eps = (2.0 * u_eps[t] - 1.0) * h
        li = lam[i] + eps
        lj = lam[j] - eps
        if li > 0.0 and lj > 0.0:
            dlog = -beta_s * (li * li + lj * lj - lam[i] * lam[i] - lam[j] * lam[j])
            ok = True
            for k in range(n):
                if k == i or k == j:
                    continue
                lk = lam[k]
                ai = abs(li - lk)
                aj = abs(lj - lk)
                if ai < 1e-300 or aj < 1e-300:
                    ok = False
                    break
                dlog += 2.0 * (math.log(ai) - math.log(abs(lam[i] - lk)))
                dlog += 2.0 * (math.log(aj) - math.log(abs(lam[j] - lk)))
            dij = abs(li - lj)
            if ok and dij > 1e-300:
                dlog += 2.0 * (math.log(dij) - math.log(abs(lam[i] - lam[j])))
                if dlog >= 0.0 or u_acc[t] < math.exp(dlog):
                    lam[i] = li
                    lam[j] = lj
                    acc += 1
        if thin > 0 and (t + 1) % thin == 0 and row < out.shape[0]:
            for k in range(n):
                out[row, k] = lam[k]
            row += 1
    return acc, row - out_start


def _mcmc_kernel_numpy(lam, beta_s, h, pick_i, pick_j, u_eps, u_acc, thin, out, out_start):
    """Same chain as the compiled kernel with the pair-interaction sum vectorized."""
    n = lam.shape[0]
    idx = np.arange(n)
    acc = 0
    row = out_start
    for t in range(pick_i.shape[0]):
        i = int(pick_i[t])
        j = int(pick_j[t])
        if j >= i:
            j += 1
        eps = (2.0 * u_eps[t] - 1.0) * h
        li = lam[i] + eps
        lj = lam[j] - eps
        if li > 0.0 and lj > 0.0:
            others = lam[(idx != i) & (idx != j)]
            ai = np.abs(li - others)
            aj = np.abs(lj - others)
            dij = abs(li - lj)
            if ai.min(initial=1.0) >= 1e-300 and aj.min(initial=1.0) >= 1e-300 and dij > 1e-300:
                dlog = -beta_s * (li * li + lj * lj - lam[i] * lam[i] - lam[j] * lam[j])
                dlog += 2.0 * float(np.sum(np.log(ai) - np.log(np.abs(lam[i] - others))))
                dlog += 2.0 * float(np.sum(np.log(aj) - np.log(np.abs(lam[j] - others))))
                dlog += 2.0 * (math.log(dij) - math.log(abs(lam[i] - lam[j])))
                if dlog >= 0.0 or u_acc[t] < math.exp(dlog):
                    lam[i] = li
                    lam[j] = lj
                    acc += 1
        if thin > 0 and (t + 1) % thin == 0 and row < out.shape[0]:
            out[row] = lam
            row += 1
    return acc, row - out_start


_chain_kernel = _mcmc_kernel if USE_NUMBA else _mcmc_kernel_numpy


def _draws(gen, n, size):
    return (gen.integers(0, n, size).astype(np.int64), gen.integers(0, n - 1, size).astype(np.int64),
            gen.random(size), gen.random(size))


@dataclass
class ChainResult:
    samples: np.ndarray
    acceptance: float
    step_size: float
    burn_in: int
    thin: int

    def spectra(self) -> Iterator[Spectrum]:
        for row in self.samples:
            yield Spectrum.normalized(row)


def canonical_mcmc(n: int, beta_scaled: float, steps: int, burn_in: Optional[int] = None,
                   rng: RngLike = 0, thin: Optional[int] = None, block: int = 1 << 16,
                   init: Optional[np.ndarray] = None) -> ChainResult:
    """Metropolis chain targeting exp(-beta_scaled sum lam^2) Delta(lam)^2 on the simplex.

    ``steps`` counts post-burn-in proposals; a state is stored every ``thin``
    steps. During burn-in the transfer width h is rescaled every block toward
    an acceptance rate inside [0.3, 0.5].
    """
    if n < 2:
        raise DomainError("n must be >= 2")
    gen = as_generator(rng)
    if burn_in is None:
        burn_in = max(100_000, 100 * n * n)
    if thin is None:
        thin = n * n
    lam = np.sort(gen.standard_exponential(n))[::-1].copy() if init is None else np.array(init, dtype=float)
    lam /= lam.sum()
    h = 0.5 / n
    dummy = np.zeros((0, n))
    done = 0
    adapt = max(1000, min(block, burn_in // 20 or 1))
    while done < burn_in:
        size = min(adapt, burn_in - done)
        pi, pj, ue, ua = _draws(gen, n, size)
        acc, _ = _chain_kernel(lam, float(beta_scaled), h, pi, pj, ue, ua, 0, dummy, 0)
        rate = acc / size
        if rate < 0.3:
            h *= max(0.5, rate / 0.4)
        elif rate > 0.5:
            h *= min(2.0, rate / 0.4)
        h = min(h, 1.0)
        done += size
    nout = steps // thin
    out = np.empty((nout, n))
    row = 0
    acc_total = 0
    done = 0
    while done < steps:
        size = min(block - block % thin if block >= thin else thin, steps - done)
        pi, pj, ue, ua = _draws(gen, n, size)
        acc, wrote = _chain_kernel(lam, float(beta_scaled), h, pi, pj, ue, ua, thin, out, row)
        row += wrote
        acc_total += acc
        done += size
    samples = -np.sort(-out[:row], axis=1)
    return ChainResult(samples, acc_total / max(steps, 1), h, burn_in, thin)


def canonical_mcmc_chains(n: int, beta_scaled: float, steps: int, chains: int, rng: RngLike = 0,
                          workers: int = 1, **kwargs) -> ChainResult:
    """Independent chains on sub-streams, concatenated in chain order."""
    base = as_spec(rng)
    res = run_chunks(lambda c: canonical_mcmc(n, beta_scaled, steps, rng=base.child(c), **kwargs),
                     list(range(chains)), workers)
    return ChainResult(np.vstack([r.samples for r in res]), float(np.mean([r.acceptance for r in res])),
                       float(np.mean([r.step_size for r in res])), res[0].burn_in, res[0].thin)


# ---------------------------------------------------------------------------
# summaries and I/O

def _as_matrix(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return np.atleast_2d(samples)
    return np.array([np.asarray(s.values if isinstance(s, Spectrum) else s, dtype=float) for s in samples])


def empirical_density(samples, rescale: float, bins: Union[int, np.ndarray] = 50, range_=None):
    """Normalized histogram of rescale*lambda over all eigenvalues; returns (edges, density)."""
    mat = _as_matrix(samples)
    if mat.size == 0:
        raise DomainError("need at least one sample")
    vals = rescale * mat.ravel()
    dens, edges = np.histogram(vals, bins=bins, range=range_, density=True)
    return edges, dens


def one_per_spectrum(samples, rng: RngLike = 0) -> np.ndarray:
    """Pick one eigenvalue at random from each spectrum.

    Eigenvalues within a spectrum are strongly correlated; one uniformly chosen
    entry per spectrum is an exact draw from the one-point density.
    """
    mat = _as_matrix(samples)
    gen = as_generator(rng)
    idx = gen.integers(0, mat.shape[1], mat.shape[0])
    return mat[np.arange(mat.shape[0]), idx]


def write_spectra_csv(path: str, samples, header: Optional[str] = None) -> None:
    mat = _as_matrix(samples)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header.rstrip("\n") + "\n")
        w = csv.writer(fh)
        w.writerow([f"lambda_{k + 1}" for k in range(mat.shape[1])])
        for row in mat:
            w.writerow([repr(float(v)) for v in row])
