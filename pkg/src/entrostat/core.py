"""Domain types and elementary spectral functionals."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

TOL = 1e-12


class EntrostatError(Exception):
    """Base class for package errors."""


class DomainError(EntrostatError, ValueError):
    """Argument outside the validity domain of a formula."""


class EdgeError(DomainError):
    """Density evaluated exactly at a divergent support edge."""


class ConvergenceError(EntrostatError, RuntimeError):
    """Iterative solver failed to meet its tolerance."""


class DegenerateError(EntrostatError, ValueError):
    """Coincident or non-positive eigenvalues where logs are taken."""


class BracketError(EntrostatError, ValueError):
    """Root-finding bracket without a sign change."""


@dataclass(frozen=True)
class BipartiteDims:
    """Subsystem dimensions, normalized so that n <= m."""

    n: int
    m: int
    swapped: bool = field(default=False, compare=False)

    def __post_init__(self):
        n, m = int(self.n), int(self.m)
        if n < 1 or m < 1:
            raise DomainError(f"dimensions must be positive, got ({n}, {m})")
        swapped = self.swapped
        if n > m:
            n, m = m, n
            swapped = True
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "swapped", swapped)

    @property
    def l(self) -> int:
        return self.n * self.m


class Spectrum:
    """Probability vector stored in non-increasing order.

    Entries in (-TOL, 0) are clamped to zero and the vector renormalized;
    anything more negative, or a trace off by more than TOL, is rejected.
    """

    __slots__ = ("_values",)

    def __init__(self, values, tol: float = TOL):
        v = np.array(values, dtype=float).ravel()
        if v.size == 0:
            raise DomainError("empty spectrum")
        if not np.all(np.isfinite(v)):
            raise DomainError("spectrum has non-finite entries")
        if np.any(v < -tol):
            raise DomainError(f"negative eigenvalue {v.min()!r}")
        total = v.sum()
        if abs(total - 1.0) > tol:
            raise DomainError(f"trace {total!r} differs from 1")
        if np.any(v < 0):
            v = np.clip(v, 0.0, None)
            v /= v.sum()
        v = np.sort(v)[::-1].copy()
        v.setflags(write=False)
        self._values = v

    @classmethod
    def normalized(cls, values) -> "Spectrum":
        """Build from any nonnegative vector by dividing by its sum."""
        v = np.asarray(values, dtype=float)
        return cls(v / v.sum())

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __len__(self):
        return self._values.size

    def __iter__(self):
        return iter(self._values)

    def __getitem__(self, i):
        return self._values[i]

    def __repr__(self):
        return f"Spectrum({self._values.tolist()!r})"

    def __eq__(self, other):
        return isinstance(other, Spectrum) and np.array_equal(self._values, other._values)

    def __hash__(self):
        return hash(self._values.tobytes())


def purity(s: Spectrum) -> float:
    return float(np.dot(s.values, s.values))


def trace_power(s: Spectrum, k: int) -> float:
    if k < 1:
        raise DomainError("k must be >= 1")
    if k == 1:
        return float(s.values.sum())
    return float(np.sum(s.values ** k))


class BranchId(enum.Enum):
    """Density regimes with the beta interval on which each is defined.

    Intervals are in the scaling native to the branch (alpha=3, except
    Separable which uses alpha=2). Bounds are (lo, hi, lo_closed, hi_closed).
    """

    SEMICIRCLE = "Semicircle"
    WISHART = "Wishart"
    META_WISHART = "MetaWishart"
    ASYM_ARCSINE_UPPER = "AsymArcsineUpper"
    ASYM_ARCSINE_LOWER = "AsymArcsineLower"
    ARCSINE = "Arcsine"
    SEPARABLE = "Separable"

    @property
    def interval(self):
        return _BRANCH_INTERVALS[self]

    def contains(self, beta: float, slack: float = 1e-12) -> bool:
        lo, hi, lo_closed, hi_closed = self.interval
        if lo_closed:
            ok_lo = beta >= lo - slack
        else:
            ok_lo = beta > lo - slack
        if hi_closed:
            ok_hi = beta <= hi + slack
        else:
            ok_hi = beta < hi + slack
        return ok_lo and ok_hi

    def check(self, beta: float) -> None:
        if not self.contains(beta):
            raise DomainError(f"beta={beta!r} outside the {self.value} interval {self.interval[:2]}")


BETA_PLUS = 2.0
BETA_G = -2.0 / 27.0
BETA_ASYM = -1.5 + math.sqrt(2.0)
BETA_ARCSINE = -2.0

_BRANCH_INTERVALS = {
    BranchId.SEMICIRCLE: (BETA_PLUS, math.inf, True, False),
    BranchId.WISHART: (0.0, BETA_PLUS, True, True),
    BranchId.META_WISHART: (BETA_G, 0.0, True, False),
    BranchId.ASYM_ARCSINE_UPPER: (BETA_ASYM, BETA_G, True, True),
    BranchId.ASYM_ARCSINE_LOWER: (BETA_ARCSINE, BETA_ASYM, True, True),
    BranchId.ARCSINE: (-math.inf, BETA_ARCSINE, False, True),
    BranchId.SEPARABLE: (-math.inf, 0.0, False, False),
}


@dataclass(frozen=True)
class SupportParams:
    """Center m, half-width delta of the rescaled support, and beta."""

    m_center: float
    delta: float
    beta: float

    def __post_init__(self):
        if not (self.delta >= 0):
            raise DomainError(f"delta must be >= 0, got {self.delta!r}")
        if self.delta > self.m_center * (1 + 1e-12) + 1e-12:
            raise DomainError(f"delta={self.delta!r} exceeds m={self.m_center!r}")

    @property
    def a(self) -> float:
        return max(self.m_center - self.delta, 0.0)

    @property
    def b(self) -> float:
        return self.m_center + self.delta


@dataclass(frozen=True)
class ThermoPoint:
    beta: float
    u: float
    s: float
    beta_f: float
    alpha: int
    branch: BranchId

    def __post_init__(self):
        if self.alpha not in (2, 3):
            raise DomainError("alpha must be 2 or 3")
        if not math.isfinite(self.beta_f):
            return
        if abs(self.beta_f - (self.beta * self.u - self.s)) > 1e-10 * max(1.0, abs(self.beta_f)):
            raise DomainError("beta_f != beta*u - s")
