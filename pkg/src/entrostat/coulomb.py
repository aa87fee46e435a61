"""Finite-N Coulomb gas: free energy, gradient and constrained minimization.

beta is in the alpha=2 scaling. Reported free energies subtract ln N so that
finite-N values are directly comparable with the N -> infinity branches.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from . import analytic
from ._accel import USE_NUMBA, optional_njit
from .core import BracketError, ConvergenceError, DegenerateError, DomainError, Spectrum, SupportParams
from .sampling import run_chunks

GAP_MIN = 1e-14
GRAD_TOL = 1e-9
CROSSING_TOL = 1e-3
ROUND_E = 1e-14


# ---------------------------------------------------------------------------
# kernels

@optional_njit
def _energy_grad_loops(lam, beta, n_norm):
    n = lam.shape[0]
    e = 0.0
    g = np.empty(n)
    for i in range(n):
        e += beta * lam[i] * lam[i]
        g[i] = 2.0 * beta * lam[i]
    c = 2.0 / (n_norm * n_norm)
    for i in range(n):
        for j in range(i + 1, n):
            d = lam[i] - lam[j]
            e -= c * math.log(abs(d))
            inv = c / d
            g[i] -= inv
            g[j] += inv
    return e, g


def _energy_grad_numpy(lam, beta, n_norm):
    d = lam[:, None] - lam[None, :]
    iu = np.triu_indices(lam.size, 1)
    c = 2.0 / (n_norm * n_norm)
    e = beta * np.dot(lam, lam) - c * np.sum(np.log(np.abs(d[iu])))
    np.fill_diagonal(d, np.inf)
    g = 2.0 * beta * lam - c * np.sum(1.0 / d, axis=1)
    return e, g


def energy_and_gradient(lam: np.ndarray, beta: float, n_norm: Optional[int] = None):
    """(beta f_N, gradient) without the ln N offset; n_norm defaults to len(lam)."""
    lam = np.ascontiguousarray(lam, dtype=float)
    nn = float(lam.size if n_norm is None else n_norm)
    if USE_NUMBA:
        return _energy_grad_loops(lam, float(beta), nn)
    return _energy_grad_numpy(lam, float(beta), nn)


def _check_positions(lam: np.ndarray) -> None:
    if np.any(lam <= 0):
        raise DegenerateError("eigenvalues must be strictly positive")
    s = np.sort(lam)
    if s.size > 1 and np.min(np.diff(s)) < GAP_MIN:
        raise DegenerateError("coincident eigenvalues")


def finite_free_energy(spec, beta: float, n: Optional[int] = None) -> float:
    """beta f_N - ln N for a spectrum of length n."""
    lam = np.asarray(spec.values if isinstance(spec, Spectrum) else spec, dtype=float)
    if n is not None and lam.size != n:
        raise DomainError(f"spectrum length {lam.size} != n={n}")
    _check_positions(lam)
    e, _ = energy_and_gradient(lam, beta)
    return e - math.log(lam.size)


def gradient(spec, beta: float) -> np.ndarray:
    """Unprojected gradient 2 beta lambda_i - (2/N^2) sum_{j != i} 1/(lambda_i - lambda_j)."""
    lam = np.asarray(spec.values if isinstance(spec, Spectrum) else spec, dtype=float)
    _check_positions(lam)
    return energy_and_gradient(lam, beta)[1]


# ---------------------------------------------------------------------------
# projected-gradient minimizer

@dataclass
class MinimizationResult:
    spectrum: Spectrum
    beta_f: float
    converged: bool
    iterations: int
    grad_norm: float
    fixed_max: Optional[float] = None

    @property
    def lambda_max(self) -> float:
        return float(self.spectrum.values[0])


def _feasible_steps(lam_sorted: np.ndarray, d_sorted: np.ndarray):
    """(t_pos, k_pos, t_col): step at which entry k_pos hits zero, and at which two entries collide."""
    t_pos = t_col = np.inf
    k_pos = -1
    neg = d_sorted < 0
    if np.any(neg):
        ratios = np.where(neg, -lam_sorted / np.where(neg, d_sorted, -1.0), np.inf)
        k_pos = int(np.argmin(ratios))
        t_pos = float(ratios[k_pos])
    gaps = np.diff(lam_sorted)          # ascending order: gaps > 0
    dd = np.diff(d_sorted)
    closing = dd < 0
    if np.any(closing):
        t_col = float(np.min(-gaps[closing] / dd[closing]))
    return t_pos, k_pos, t_col


def _lbfgs_direction(pg: np.ndarray, pairs) -> np.ndarray:
    """Two-loop recursion on the stored (s, y) pairs; returns -H pg."""
    q = pg.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def _derivative_search(lam, d, beta, n, t_max, steps=60):
    """Largest t in (0, t_max] found by bisection with g(lam + t d).d < 0."""
    if not t_max > 0:
        return None

    def probe(t):
        cand = np.maximum(lam + t * d, 0.0)
        e_c, g_c = energy_and_gradient(cand, beta, n)
        return cand, e_c, g_c, float(np.dot(g_c, d))

    best = None
    hi = probe(t_max)
    if hi[3] < 0:
        return hi[:3] if np.isfinite(hi[1]) else None
    lo_t, hi_t = 0.0, t_max
    for _ in range(steps):
        mid = 0.5 * (lo_t + hi_t)
        r = probe(mid)
        if r[3] < 0:
            lo_t, best = mid, r
        else:
            hi_t = mid
    if best is None or not np.isfinite(best[1]):
        return None
    return best[:3]


def _minimize(lam0: np.ndarray, beta: float, free: np.ndarray, max_iter: int, tol: float,
              memory: int = 12):
    """Projected descent on the simplex slice with Armijo backtracking.

    Only entries flagged in ``free`` move and their sum is conserved. For n = m
    nothing repels eigenvalues from zero, so the smallest one typically ends on
    the bound lambda = 0; entries on the bound whose gradient exceeds the
    multiplier are held there (active set). The projected gradient is rescaled
    by limited-memory secant pairs, since the sea and a detached eigenvalue
    differ in stiffness by ~N^2. Steps stop exactly at the positivity bound and
    at 0.9 of the distance to the nearest collision.
    """
    order = np.argsort(lam0)
    lam = lam0[order].astype(float).copy()
    free = free[order]
    n = lam.size
    e, g = energy_and_gradient(lam, beta, n)
    pairs = []
    gnorm = np.inf
    prev_active = None

    def projected(grad):
        at_bound = free & (lam <= 0.0)
        movable = free & ~at_bound
        nu = grad[movable].mean()
        # release bound entries in order of increasing gradient until consistent
        for k in np.argsort(np.where(at_bound, grad, np.inf)):
            if not at_bound[k] or grad[k] >= nu:
                break
            movable[k] = True
            nu = grad[movable].mean()
        return np.where(movable, grad - nu, 0.0), movable

    for it in range(1, max_iter + 1):
        pg, movable = projected(g)
        gnorm = float(np.max(np.abs(pg)))
        if gnorm < tol:
            return lam, e, True, it - 1, gnorm
        if prev_active is None or not np.array_equal(movable, prev_active):
            pairs.clear()
            prev_active = movable
        d = _lbfgs_direction(pg, pairs)
        d = np.where(movable, d - d[movable].mean(), 0.0)
        if np.any(movable & (lam <= 0.0) & (d < 0.0)):
            pairs.clear()
            d = -pg
        slope = float(np.dot(pg, d))
        if not slope < 0:
            pairs.clear()
            d = -pg
            slope = -float(np.dot(pg, pg))
        t_pos, k_pos, t_col = _feasible_steps(lam, d)
        t = 1.0 if pairs else 1e-3 / max(float(np.max(np.abs(d))) * n, 1e-300)
        t = min(t, t_pos, 0.9 * t_col)
        accepted = False
        for _ in range(60):
            cand = lam + t * d
            if t == t_pos:
                cand[k_pos] = 0.0
            cand = np.maximum(cand, 0.0)
            if np.array_equal(cand, lam):
                break
            e_new, g_new = energy_and_gradient(cand, beta, n)
            if np.isfinite(e_new) and e_new <= e + 1e-4 * t * slope:
                accepted = True
                break
            # Near the minimum the decrease drops below the rounding of e; then
            # accept steps that keep e flat to rounding and shrink the gradient.
            if np.isfinite(e_new) and e_new <= e + ROUND_E * max(1.0, abs(e)):
                pg_try, _ = projected(g_new)
                if np.max(np.abs(pg_try)) < 0.9 * gnorm:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            # energy differences are lost in rounding: bisect on the sign of the
            # directional derivative, which is still resolved
            d = -pg
            t_pos, k_pos, t_col = _feasible_steps(lam, d)
            found = _derivative_search(lam, d, beta, n, min(t_pos, 0.9 * t_col,
                                       0.1 / max(n * float(np.max(np.abs(d))), 1e-300)))
            if found is not None:
                cand, e_new, g_new = found
                accepted = e_new <= e + ROUND_E * max(1.0, abs(e))
        if not accepted:
            if pairs:
                pairs.clear()
                continue
            # no decrease representable in double precision
            return lam, e, gnorm < 1e3 * tol, it, gnorm
        s_vec = cand - lam
        lam = cand
        pg_new, mov_new = projected(g_new)
        if np.array_equal(mov_new, movable):
            y_vec = pg_new - pg
            sy = float(np.dot(s_vec, y_vec))
            if sy > 1e-300:
                pairs.append((s_vec, y_vec, 1.0 / sy))
                if len(pairs) > memory:
                    pairs.pop(0)
        e, g = e_new, g_new
    return lam, e, False, max_iter, gnorm


def minimize_free_energy(n: int, beta: float, init, max_iter: int = 20000, tol: float = GRAD_TOL,
                         strict: bool = True) -> MinimizationResult:
    """Local minimum of beta f_N on the simplex starting from ``init``."""
    lam0 = np.asarray(init.values if isinstance(init, Spectrum) else init, dtype=float)
    if lam0.size != n or n < 2:
        raise DomainError("init must have length n >= 2")
    lam0 = lam0 / lam0.sum()
    _check_positions(lam0)
    lam, e, ok, it, gn = _minimize(lam0, beta, np.ones(n, dtype=bool), max_iter, tol)
    if strict and not ok:
        raise ConvergenceError(f"no convergence after {it} iterations (|grad| = {gn:.3g})")
    spec = Spectrum.normalized(lam)
    return MinimizationResult(spec, e - math.log(n), ok, it, gn)


def _minimize_fixed_max(n: int, beta: float, mu: float, max_iter: int, tol: float) -> MinimizationResult:
    sea = wishart_profile(n - 1, 0.0) * (1.0 - mu)
    flat = (1.0 - mu) / (n - 1)
    if sea.max() >= mu:
        # shrink toward the flat sea so every entry stays below mu; the minimizer
        # never reorders entries, so mu remains the largest eigenvalue
        sea = flat + (0.999 * mu - flat) / (sea.max() - flat) * (sea - flat)
    lam0 = np.append(sea, mu)
    _check_positions(lam0)
    free = np.ones(n, dtype=bool)
    free[-1] = False
    lam, e, ok, it, gn = _minimize(lam0, beta, free, max_iter, tol)
    return MinimizationResult(Spectrum.normalized(lam), e - math.log(n), ok, it, gn, fixed_max=mu)


# ---------------------------------------------------------------------------
# seeding profiles

def wishart_profile(n: int, beta: float = 0.0) -> np.ndarray:
    """Deterministic spectrum at the quantiles of the Wishart-type density at beta/n."""
    d = analytic.wishart_delta(beta / n) if beta / n >= analytic.BETA_G else 2.0
    p = SupportParams(d, d, beta / n)
    q = (np.arange(n) + 0.5) / n
    xs = np.array([optimize.brentq(lambda x: analytic.tricomi_cdf(p, x) - qq, -1.0, 1.0, xtol=1e-14)
                   for qq in q])
    lam = p.m_center + p.delta * xs
    return np.sort(lam / lam.sum())[::-1]


def typical_seed(n: int, beta: float) -> np.ndarray:
    return wishart_profile(n, beta)


def separable_seed(n: int, beta: float) -> np.ndarray:
    mu = analytic.evaporated_mu(beta) if beta <= -2.0 else 0.6
    sea = wishart_profile(n - 1, 0.0) * (1.0 - mu)
    return np.append(mu, sea)


# ---------------------------------------------------------------------------
# basins, profiles and the stability swap

def _separable_collapsed(res: MinimizationResult, n: int) -> bool:
    # a sea-sized maximum means the detached eigenvalue was reabsorbed
    return res.lambda_max < 8.0 / n


def basin_label(res: MinimizationResult, n: int) -> str:
    """'separable' if the state carries a detached O(1) eigenvalue, else 'typical'."""
    return "typical" if _separable_collapsed(res, n) else "separable"


def basin_minima(n: int, beta: float, max_iter: int = 20000, tol: float = GRAD_TOL):
    """(typical, separable) local minima; separable is None if that basin is absent."""
    typ = minimize_free_energy(n, beta, typical_seed(n, beta), max_iter, tol, strict=False)
    sep = minimize_free_energy(n, beta, separable_seed(n, beta), max_iter, tol, strict=False)
    if _separable_collapsed(sep, n):
        sep = None
    return typ, sep


def profile_fixed_max(n: int, beta: float, mu_grid: Sequence[float], max_iter: int = 20000,
                      tol: float = GRAD_TOL, workers: int = 1):
    """Rows (mu, beta_f, converged, reliable) minimizing over the other n-1 eigenvalues.

    Points with mu < 2/n are flagged unreliable: there the continuum limit and
    mu -> 0 do not commute.
    """
    for mu in mu_grid:
        if not (1.0 / n < mu < 1.0):
            raise DomainError(f"mu={mu!r} outside (1/n, 1)")

    def work(mu):
        r = _minimize_fixed_max(n, beta, float(mu), max_iter, tol)
        return float(mu), r.beta_f, r.converged, bool(mu >= 2.0 / n)

    return run_chunks(work, list(mu_grid), workers)


def local_minima(values: Sequence[float]) -> list:
    """Indices of strict interior local minima of a sampled curve."""
    v = np.asarray(values)
    return [i for i in range(1, v.size - 1) if v[i] < v[i - 1] and v[i] < v[i + 1]]


def free_energy_gap(n: int, beta: float, max_iter: int = 20000, tol: float = GRAD_TOL) -> float:
    """beta f_typical - beta f_separable.

    A missing basin counts as infinitely unfavourable: -inf when the separable
    seed collapses into the sea, +inf when the typical seed evaporates.
    """
    typ, sep = basin_minima(n, beta, max_iter, tol)
    if sep is None:
        return -np.inf
    if basin_label(typ, n) == "separable":
        return np.inf
    return typ.beta_f - sep.beta_f


def locate_crossing(n: int, beta_lo: float = -2.6, beta_hi: float = -1.7, tol: float = CROSSING_TOL,
                    max_iter: int = 20000) -> float:
    """Bisection for the beta where the typical and separable minima swap stability."""
    g_lo = free_energy_gap(n, beta_lo, max_iter)
    g_hi = free_energy_gap(n, beta_hi, max_iter)
    if not (g_lo > 0 and g_hi < 0):
        raise BracketError(f"gap does not change sign: {g_lo!r} at {beta_lo}, {g_hi!r} at {beta_hi}")
    lo, hi = beta_lo, beta_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if free_energy_gap(n, mid, max_iter) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class CurvePoint:
    beta: float
    basin: str
    beta_f: float
    lambda_max: float
    lambda_max_analytic: float
    converged: bool
    iterations: int


def max_eigenvalue_curve(n: int, beta_grid: Sequence[float], max_iter: int = 20000,
                         tol: float = GRAD_TOL, workers: int = 1):
    """Largest eigenvalue of the global minimum at each beta, with the analytic prediction."""

    def work(beta):
        typ, sep = basin_minima(n, float(beta), max_iter, tol)
        best = typ
        if sep is not None and sep.beta_f < typ.beta_f:
            best = sep
        # label by the state reached, since a typical seed may evaporate
        basin = basin_label(best, n)
        try:
            predicted = analytic.finite_n_lambda_max(float(beta), n)
        except DomainError:
            predicted = math.nan  # beta/n below beta_g: no Wishart continuation at this n
        return CurvePoint(float(beta), basin, best.beta_f, best.lambda_max, predicted,
                          best.converged, best.iterations)

    return run_chunks(work, list(beta_grid), workers)


def write_results_csv(path: str, rows, header: Optional[str] = None) -> None:
    """CSV with columns beta, basin, beta_f, lambda_max, converged, iterations."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header.rstrip("\n") + "\n")
        w = csv.writer(fh)
        w.writerow(["beta", "basin", "beta_f", "lambda_max", "converged", "iterations"])
        for r in rows:
            w.writerow([repr(r.beta), r.basin, repr(r.beta_f), repr(r.lambda_max), int(r.converged), r.iterations])
