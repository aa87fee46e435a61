"""Closed-form eigenvalue densities and thermodynamics of the Coulomb gas.

Rescaled eigenvalues live on [a, b] = [m - delta, m + delta]; x = (lambda - m)/delta
maps the support onto [-1, 1]. Unless stated otherwise beta is in the alpha=3
scaling (purity O(1/N)); the separable phase uses alpha=2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .core import (
    BETA_ARCSINE,
    BETA_ASYM,
    BETA_G,
    BETA_PLUS,
    BracketError,
    BranchId,
    ConvergenceError,
    DomainError,
    SupportParams,
    ThermoPoint,
)

SQRT2 = math.sqrt(2.0)
DELTA_ASYM = 2.0 + SQRT2
ROOT_XTOL = 1e-14
ROOT_MAXITER = 200


# ---------------------------------------------------------------------------
# root finding helpers

def _brent(f: Callable[[float], float], lo: float, hi: float) -> float:
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(f"no sign change on [{lo!r}, {hi!r}]")
    try:
        root, info = optimize.brentq(f, lo, hi, xtol=ROOT_XTOL, maxiter=ROOT_MAXITER,
                                     full_output=True, disp=False)
    except RuntimeError as exc:  # pragma: no cover
        raise ConvergenceError(str(exc)) from exc
    if not info.converged:  # pragma: no cover
        raise ConvergenceError(f"brentq did not converge: {info.flag}")
    return root


def wishart_beta(delta: float) -> float:
    """beta(delta) on the m = delta family: 4/delta^3 - 2/delta^2."""
    return 4.0 / delta ** 3 - 2.0 / delta ** 2


def wishart_delta(beta: float) -> float:
    """Invert beta = 4/delta^3 - 2/delta^2 on delta in (0, 3], valid for beta >= beta_g.

    The map is monotone decreasing on (0, 3) with minimum beta_g at delta = 3.
    """
    if beta < BETA_G - 1e-15:
        raise DomainError(f"no Wishart solution for beta={beta!r} < beta_g")
    if beta <= BETA_G:
        return 3.0
    hi = 3.0
    lo = min(0.5, 0.5 * (4.0 / max(beta, 1.0)) ** (1.0 / 3.0))
    return _brent(lambda d: wishart_beta(d) - beta, lo, hi)


def _asym_q(delta: float) -> float:
    # sqrt(-delta^2 + 4 delta - 2) = sqrt((2+sqrt2-delta)(delta-2+sqrt2))
    arg = (DELTA_ASYM - delta) * (delta - 2.0 + SQRT2)
    return math.sqrt(max(arg, 0.0))


def asym_beta(delta: float, sign: int) -> float:
    """Both real solutions of delta - 1 = delta^2 sqrt(-beta(1 + beta delta^2/2))."""
    return -1.0 / delta ** 2 + sign * _asym_q(delta) / delta ** 3


def asym_delta(beta: float, sign: int) -> float:
    """delta on the upper (sign=+1) or lower (sign=-1) asymmetric-arcsine solution."""
    if sign > 0:
        if not (BETA_ASYM - 1e-15 <= beta <= BETA_G + 1e-15):
            raise DomainError(f"beta={beta!r} outside the upper asymmetric window")
        return _brent(lambda d: asym_beta(d, +1) - beta, 3.0, DELTA_ASYM)
    if not (BETA_ARCSINE - 1e-15 <= beta <= BETA_ASYM + 1e-15):
        raise DomainError(f"beta={beta!r} outside the lower asymmetric window")
    return _brent(lambda d: asym_beta(d, -1) - beta, 1.0, DELTA_ASYM)


# ---------------------------------------------------------------------------
# feasible domain and the Tricomi solution

def _numerator_coeffs(m: float, delta: float, beta: float):
    c0 = 1.0 + beta * delta ** 2 / 2.0
    c1 = 2.0 * (1.0 - m) / delta
    c2 = -beta * delta ** 2
    return c0, c1, c2


def _numerator_min(m: float, delta: float, beta: float) -> float:
    """Minimum over [-1, 1] of the quadratic numerator of phi."""
    c0, c1, c2 = _numerator_coeffs(m, delta, beta)
    vals = [c0 - c1 + c2, c0 + c1 + c2]
    if c2 > 0:
        xs = -c1 / (2 * c2)
        if -1 < xs < 1:
            vals.append(c0 + c1 * xs + c2 * xs * xs)
    return min(vals)


@dataclass(frozen=True)
class FeasibleDomain:
    """Region of (delta, m) where phi is a nonnegative density with a >= 0."""

    beta: float
    lower: Callable[[float], float]
    upper: Callable[[float], float]
    delta_max: float
    corner: Optional[tuple]

    def contains(self, m: float, delta: float, tol: float = 1e-10) -> bool:
        if delta <= 0 or m < delta - tol:
            return False
        return _numerator_min(m, delta, self.beta) >= -tol


def feasible_domain(beta: float) -> FeasibleDomain:
    beta = float(beta)

    def gamma1(delta, sgn):
        return 1.0 + sgn * (delta / 2.0) * (1.0 - beta * delta ** 2 / 2.0)

    if beta >= 0:
        def lower(delta):
            return max(delta, gamma1(delta, -1))

        def upper(delta):
            return gamma1(delta, +1)

        corner = (math.sqrt(2.0 / beta), 1.0) if beta >= BETA_PLUS else None
    else:
        d_switch = math.sqrt(-2.0 / (3.0 * beta))

        def gamma2(delta, sgn):
            arg = -beta * (1.0 + beta * delta ** 2 / 2.0)
            return 1.0 + sgn * delta ** 2 * math.sqrt(max(arg, 0.0))

        def lower(delta):
            g = gamma1(delta, -1) if delta <= d_switch else gamma2(delta, -1)
            return max(delta, g)

        def upper(delta):
            return gamma1(delta, +1) if delta <= d_switch else gamma2(delta, +1)

        corner = (math.sqrt(-2.0 / beta), 1.0) if beta <= BETA_ARCSINE else None

    # For m >= max(delta, 1) the numerator only gets worse as m grows, so a
    # width delta is feasible iff m = max(delta, 1) is.
    def feasible_width(d):
        return _numerator_min(max(d, 1.0), d, beta) >= -1e-13

    d_cap = 10.0 if beta >= 0 else min(10.0, math.sqrt(-2.0 / beta))
    grid = np.linspace(1e-9, d_cap, 4001)
    ok = np.array([feasible_width(d) for d in grid])
    last = int(np.nonzero(ok)[0].max())
    if last == grid.size - 1:
        delta_max = float(grid[-1])
    else:
        lo, hi = grid[last], grid[last + 1]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if feasible_width(mid):
                lo = mid
            else:
                hi = mid
        delta_max = float(lo)
    return FeasibleDomain(beta, lower, upper, delta_max, corner)


def _check_feasible(p: SupportParams, tol: float = 1e-9) -> None:
    if p.delta <= 0:
        raise DomainError("delta must be positive")
    if p.m_center < p.delta - tol or _numerator_min(p.m_center, p.delta, p.beta) < -tol:
        raise DomainError(f"(m={p.m_center!r}, delta={p.delta!r}) outside the feasible domain at beta={p.beta!r}")


def tricomi_density(p: SupportParams, x):
    """phi(x) on [-1, 1]; +inf at an edge where the numerator does not vanish."""
    _check_feasible(p)
    c0, c1, c2 = _numerator_coeffs(p.m_center, p.delta, p.beta)
    xa = np.asarray(x, dtype=float)
    if np.any(np.abs(xa) > 1.0):
        raise DomainError("x outside [-1, 1]")
    num = c0 + c1 * xa + c2 * xa * xa
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / (math.pi * np.sqrt(1.0 - xa * xa))
    edge = np.abs(xa) == 1.0
    if np.any(edge):
        out = np.where(edge & (np.abs(num) > 1e-12), np.inf, out)
        out = np.where(edge & (np.abs(num) <= 1e-12), 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


def tricomi_cdf(p: SupportParams, x):
    """Closed-form CDF of phi, obtained with x = -cos(theta)."""
    c0, c1, c2 = _numerator_coeffs(p.m_center, p.delta, p.beta)
    xa = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    th = np.arccos(-xa)
    out = (c0 * th - c1 * np.sin(th) + c2 * (th / 2.0 + np.sin(2.0 * th) / 4.0)) / math.pi
    return float(out) if np.ndim(out) == 0 else out


def lagrange_xi(p: SupportParams) -> float:
    """Imaginary part of the Lagrange multiplier fixing the trace."""
    if p.delta == 0:
        raise DomainError("delta must be nonzero")
    d2 = p.delta ** 2
    return 4.0 / d2 + p.m_center * (2.0 * p.beta - 4.0 / d2)


# ---------------------------------------------------------------------------
# branches

@dataclass(frozen=True)
class EvaporationState:
    mu: float

    @property
    def sea_scale(self) -> float:
        return 1.0 - self.mu


@lru_cache(maxsize=1)
def solve_beta_minus():
    """(mu_-, beta_-): root of mu/(2(1-mu)) = -ln(1-mu) and the matching beta."""

    def g(mu):
        return mu / (2.0 * (1.0 - mu)) + math.log1p(-mu)

    mu, info = optimize.brentq(g, 0.5, 0.99, xtol=1e-15, rtol=1e-15, maxiter=200,
                               full_output=True, disp=False)
    if not info.converged or abs(g(mu)) > 1e-12:
        raise ConvergenceError("mu_- root did not reach |residual| < 1e-12")
    return mu, -1.0 / (2.0 * mu * (1.0 - mu))


def evaporated_mu(beta: float) -> float:
    """Detached eigenvalue 1/2 + sqrt(1 + 2/beta)/2 (requires beta <= -2)."""
    if beta > BETA_ARCSINE:
        raise DomainError("evaporation formula needs beta <= -2")
    return 0.5 + 0.5 * math.sqrt(1.0 + 2.0 / beta)


def stable_branch(beta: float, n: Optional[int] = None):
    """Global minimum of the free energy at inverse temperature beta.

    beta >= 0 is in the alpha=3 scaling, beta < 0 in the alpha=2 scaling. For
    beta_- <= beta < 0 the sea is Wishart; with ``n`` given its width uses the
    finite-size rescaling beta/n (the continuation shared with the metastable
    branch), otherwise the N -> infinity value delta = 2.
    """
    beta = float(beta)
    if beta >= BETA_PLUS:
        d = math.sqrt(2.0 / beta)
        return SupportParams(1.0, d, beta), BranchId.SEMICIRCLE, EvaporationState(0.0)
    if beta >= 0:
        d = wishart_delta(beta)
        return SupportParams(d, d, beta), BranchId.WISHART, EvaporationState(0.0)
    _, beta_minus = solve_beta_minus()
    if beta >= beta_minus:
        if n is None:
            return SupportParams(2.0, 2.0, 0.0), BranchId.WISHART, EvaporationState(0.0)
        d = wishart_delta(beta / n)
        return SupportParams(d, d, beta / n), BranchId.WISHART, EvaporationState(0.0)
    return SupportParams(2.0, 2.0, 0.0), BranchId.SEPARABLE, EvaporationState(evaporated_mu(beta))


def metastable_branch(beta: float):
    """Analytic continuation of the alpha=3 solution to beta < 0."""
    beta = float(beta)
    if beta >= 0:
        raise DomainError("metastable branch is defined for beta < 0")
    if beta >= BETA_G:
        d = wishart_delta(beta)
        return SupportParams(d, d, beta), BranchId.META_WISHART
    if beta >= BETA_ASYM:
        d = asym_delta(beta, +1)
        return SupportParams(d, d, beta), BranchId.ASYM_ARCSINE_UPPER
    if beta > BETA_ARCSINE:
        d = asym_delta(beta, -1)
        return SupportParams(d, d, beta), BranchId.ASYM_ARCSINE_LOWER
    d = math.sqrt(-2.0 / beta)
    return SupportParams(1.0, d, beta), BranchId.ARCSINE


def _branch_for_beta(beta: float) -> BranchId:
    if beta >= BETA_PLUS:
        return BranchId.SEMICIRCLE
    if beta >= 0:
        return BranchId.WISHART
    if beta >= BETA_G:
        return BranchId.META_WISHART
    if beta >= BETA_ASYM:
        return BranchId.ASYM_ARCSINE_UPPER
    if beta > BETA_ARCSINE:
        return BranchId.ASYM_ARCSINE_LOWER
    return BranchId.ARCSINE


# ---------------------------------------------------------------------------
# thermodynamics

def thermo(p: SupportParams, branch: Optional[BranchId] = None) -> ThermoPoint:
    """u, s and beta*f in the alpha=3 scaling for support parameters p."""
    _check_feasible(p)
    m, d, b = p.m_center, p.delta, p.beta
    u = 1.0 - (1.0 - m) ** 2 + d ** 2 / 2.0 - b * d ** 4 / 8.0
    s = -2.0 * (1.0 - m) ** 2 / d ** 2 - b ** 2 * d ** 4 / 16.0 + math.log(d / 2.0)
    if branch is None:
        branch = _branch_for_beta(b)
    else:
        branch.check(b)
    return ThermoPoint(b, u, s, b * u - s, 3, branch)


def thermo_negative_stable(beta: float) -> ThermoPoint:
    """Stable solution at beta < 0 in the alpha=2 scaling."""
    beta = float(beta)
    if beta >= 0:
        raise DomainError("beta must be negative")
    _, beta_minus = solve_beta_minus()
    if beta >= beta_minus:
        return ThermoPoint(beta, 0.0, -0.5, 0.5, 2, BranchId.SEPARABLE)
    mu = evaporated_mu(beta)
    u = mu * mu
    s = math.log1p(-mu) - 0.5
    return ThermoPoint(beta, u, s, beta * u - s, 2, BranchId.SEPARABLE)


def entropy_of_beta(beta: float, family: str = "stable") -> float:
    """s(beta) along the alpha=3 stable (beta >= 0) or metastable (beta < 0) family."""
    if family == "stable":
        if beta < 0:
            raise DomainError("stable alpha=3 family needs beta >= 0")
        return thermo(stable_branch(beta)[0]).s
    if family == "metastable":
        p, br = metastable_branch(beta)
        return thermo(p, br).s
    raise DomainError(f"unknown family {family!r}")


def _metastable_u_s(delta: float, sign: int):
    q = _asym_q(delta)
    u = 2.0 * delta - 3.0 * delta ** 2 / 8.0 - sign * delta * q / 8.0
    s = -2.0 + 15.0 / (4 * delta) - 15.0 / (8 * delta ** 2) + sign * q / (8 * delta) + math.log(delta / 2.0)
    return u, s


def _wishart_s_of_u(u: float) -> float:
    dd = 1.5 - math.sqrt(max(9.0 / 4.0 - u, 0.0))
    return math.log(dd) - 9.0 / 4.0 + 5.0 / (2.0 * dd) - 3.0 / (4.0 * dd ** 2)


U_ASYM_MAX = _metastable_u_s(DELTA_ASYM, +1)[0]


@lru_cache(maxsize=1)
def _lower_fold():
    """delta where u(delta) peaks on the lower asymmetric sub-branch."""
    res = optimize.minimize_scalar(lambda d: -_metastable_u_s(d, -1)[0], bounds=(1.0, DELTA_ASYM),
                                   method="bounded", options={"xatol": 1e-13})
    return float(res.x), -float(res.fun)


def entropy_vs_u(u: float, branch_family: str, sub_branch: Optional[str] = None) -> float:
    """Entropy density as a function of internal energy density.

    branch_family is one of PositiveStable, NegativeStable, Metastable. In the
    metastable asymmetric-arcsine window u(delta) is inverted numerically. The
    lower sub-branch folds back at its maximum u, so three pieces can share a
    value of u: 'upper', 'lower' (rising from the arcsine end) and 'lower-fold'.
    The default follows the printed closed forms and the piece continuing them.
    """
    u = float(u)
    if branch_family == "PositiveStable":
        if 1.0 < u <= 1.25:
            return 0.5 * math.log(u - 1.0) - 0.25
        if 1.25 < u <= 2.0:
            return _wishart_s_of_u(u)
        raise DomainError("PositiveStable needs 1 < u <= 2")
    if branch_family == "NegativeStable":
        mu_m, beta_m = solve_beta_minus()
        if 0.0 <= u <= mu_m ** 2:
            return beta_m * u - 0.5
        if mu_m ** 2 < u < 1.0:
            return math.log1p(-math.sqrt(u)) - 0.5
        raise DomainError("NegativeStable needs 0 <= u < 1")
    if branch_family == "Metastable":
        if sub_branch is None:
            if 1.0 < u <= 1.75:
                return 0.5 * math.log(u - 1.0) - 0.5 * math.log(3.0) - 0.25
            if 2.0 < u <= 2.25:
                return _wishart_s_of_u(u)
            sub_branch = "lower" if u <= 2.0 else "upper"
        d_fold, _ = _lower_fold()
        pieces = {"upper": (+1, 3.0, DELTA_ASYM), "lower": (-1, 1.0, d_fold),
                  "lower-fold": (-1, d_fold, DELTA_ASYM)}
        if sub_branch not in pieces:
            raise DomainError(f"unknown sub-branch {sub_branch!r}")
        sign, lo, hi = pieces[sub_branch]
        u_lo, u_hi = sorted((_metastable_u_s(lo, sign)[0], _metastable_u_s(hi, sign)[0]))
        if not (u_lo - 1e-12 <= u <= u_hi + 1e-12):
            raise DomainError(f"u={u!r} not reached on the {sub_branch} piece")
        u = min(max(u, u_lo), u_hi)
        d = _brent(lambda dd: _metastable_u_s(dd, sign)[0] - u, lo, hi)
        return _metastable_u_s(d, sign)[1]
    raise DomainError(f"unknown branch family {branch_family!r}")


def entropy_vs_purity(pi: float, n: int) -> float:
    """Stable-branch entropy density of the isopurity manifold at purity pi."""
    pi = float(pi)
    if not (1.0 / n < pi < 1.0):
        raise DomainError("pi must lie strictly between 1/n and 1")
    mu_m, beta_m = solve_beta_minus()
    npi = n * pi
    if pi <= 5.0 / (4.0 * n):
        return 0.5 * math.log(npi - 1.0) - 0.25
    if pi <= 2.0 / n:
        return _wishart_s_of_u(npi)
    if pi <= mu_m ** 2:
        return beta_m * pi - 0.5
    return math.log1p(-math.sqrt(pi)) - 0.5


def log_volume_vs_purity(pi: float, n: int) -> float:
    """ln V = n^2 s(pi), up to the normalization constant."""
    return n * n * entropy_vs_purity(pi, n)


def lambda_extremes(pi: float, n: int):
    """(lambda_min, lambda_max) of a typical state with purity pi."""
    pi = float(pi)
    if not (1.0 / n - 1e-15 <= pi <= 1.0):
        raise DomainError("pi must lie in [1/n, 1]")
    npi = max(n * pi, 1.0)
    if pi <= 5.0 / (4.0 * n):
        r = 2.0 * math.sqrt(npi - 1.0)
        return (1.0 - r) / n, (1.0 + r) / n
    if pi <= 2.0 / n:
        return 0.0, (2.0 / n) * (3.0 - 2.0 * math.sqrt(9.0 / 4.0 - npi))
    return 0.0, math.sqrt(pi)


# ---------------------------------------------------------------------------
# densities in lambda space

def density_of_eigenvalues(branch: BranchId, p: SupportParams, lam):
    """rho(lambda) = phi((lambda - m)/delta)/delta on [a, b]."""
    lam_a = np.asarray(lam, dtype=float)
    a, b = p.m_center - p.delta, p.m_center + p.delta
    if np.any(lam_a < a - 1e-12) or np.any(lam_a > b + 1e-12):
        raise DomainError("lambda outside the support")
    if branch is BranchId.SEMICIRCLE:
        out = (p.beta / math.pi) * np.sqrt(np.clip(lam_a - a, 0, None) * np.clip(b - lam_a, 0, None))
    elif branch in (BranchId.WISHART, BranchId.META_WISHART) and abs(p.m_center - p.delta) < 1e-12:
        bb = 2.0 * p.delta
        with np.errstate(divide="ignore"):
            root = np.sqrt(np.clip(bb - lam_a, 0, None) / lam_a)
        out = 4.0 / (math.pi * bb ** 2) * root * (bb - 2.0 + 2.0 * (4.0 - bb) * lam_a / bb)
    else:
        x = np.clip((lam_a - p.m_center) / p.delta, -1.0, 1.0)
        out = np.asarray(tricomi_density(p, x)) / p.delta
    return float(out) if np.ndim(out) == 0 else out


def sea_density_mixed(x: float, lambda_tilde):
    """Sea density for a mixed global state with purity x (Wishart-like)."""
    if not (0.0 <= x < 1.0):
        raise DomainError("x must lie in [0, 1)")
    w = 1.0 - math.sqrt(x)
    lt = np.asarray(lambda_tilde, dtype=float)
    if np.any(lt <= 0) or np.any(lt > 4.0 * w + 1e-15):
        raise DomainError("lambda_tilde outside (0, 4(1 - sqrt x)]")
    out = np.sqrt(np.clip(4.0 * w - lt, 0, None) / lt) / (2.0 * math.pi * w)
    return float(out) if np.ndim(out) == 0 else out


def finite_n_lambda_max(beta: float, n: int) -> float:
    """Largest eigenvalue of the stable finite-n saddle point (alpha=2 beta)."""
    _, beta_minus = solve_beta_minus()
    if beta >= beta_minus:
        return 2.0 * wishart_delta(beta / n) / n
    return evaporated_mu(beta)


# ---------------------------------------------------------------------------
# critical points

@dataclass(frozen=True)
class CriticalPoint:
    beta_c: float
    name: str
    order: int
    signature: str
    jump: Optional[float] = None
    exponent: Optional[float] = None


def critical_points():
    _, beta_minus = solve_beta_minus()
    return [
        CriticalPoint(BETA_PLUS, "beta_plus", 2, "jump in d2s/dbeta2", jump=0.125),
        CriticalPoint(beta_minus, "beta_minus", 1, "jump in u (latent heat mu_-^2), ds/du = beta_-"),
        CriticalPoint(BETA_G, "beta_g", 2, "d2s/dbeta2 diverges", exponent=-0.5),
        CriticalPoint(BETA_ARCSINE, "minus_beta_plus", 2, "jump in d2s/dbeta2", jump=5.0 / 32.0),
    ]


def second_derivative_jump(beta_c: float, family: str, h: float = 1e-3) -> float:
    """d2s/dbeta2 just above minus just below beta_c, by three-point stencils.

    Each side uses points on its own branch only, evaluated one step away from
    the critical point, so the O(h) stencil error is the same on both sides.
    """
    s = lambda b: entropy_of_beta(b, family)  # noqa: E731
    right = (s(beta_c) - 2.0 * s(beta_c + h) + s(beta_c + 2 * h)) / h ** 2
    left = (s(beta_c) - 2.0 * s(beta_c - h) + s(beta_c - 2 * h)) / h ** 2
    return right - left


def second_derivative(beta: float, family: str, h: float) -> float:
    s = lambda b: entropy_of_beta(b, family)  # noqa: E731
    return (s(beta + h) - 2.0 * s(beta) + s(beta - h)) / h ** 2
