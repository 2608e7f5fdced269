"""Agreement coefficients and their unbiased-expected-index variants.

Classic coefficients share the form ``(I_o - I_e) / (1 - I_e)``.  Replacing the
plug-in expected index ``I_e`` by an estimator that is unbiased in finite
samples gives the ``*_U`` variants.  For every family handled here the
``*_U`` value is a linear-fractional (Mobius) function of the classic value
and the sample size, so it can be obtained either from the data or from the
classic estimate alone.  Both routes are implemented and kept in agreement by
the test-suite.

Families whose base estimator is defined elsewhere (Hubert, pairwise
multi-rater ``F2`` and its Krippendorff analogue ``K2``) are supported only
through :func:`to_unbiased` and friends, with a caller-supplied base value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Family(str, Enum):
    COHEN = "cohen"
    SCOTT = "scott"
    KRIPPENDORFF = "krippendorff"
    HUBERT = "hubert"
    FLEISS = "fleiss"
    FLEISS2 = "fleiss2"
    KRIPPENDORFF2 = "krippendorff2"


# families sharing one transformation
_COHEN_LIKE = (Family.COHEN, Family.HUBERT)
_SCOTT_LIKE = (Family.SCOTT, Family.FLEISS2)
_KRIPP_LIKE = (Family.KRIPPENDORFF, Family.KRIPPENDORFF2)
_TWO_RATER = (Family.COHEN, Family.SCOTT, Family.KRIPPENDORFF)


class UndefinedCoefficientError(ValueError):
    """The expected index equals one, so the coefficient is 0/0."""

    def __init__(self, message: str, table=None):
        super().__init__(message)
        self.table = table


class TransformationError(ValueError):
    """The Mobius map to the unbiased variant has a non-positive denominator."""


def as_family(family: Family | str) -> Family:
    try:
        return Family(family.lower() if isinstance(family, str) else family)
    except ValueError:
        names = ", ".join(f.value for f in Family)
        raise ValueError(f"unknown family {family!r}; expected one of {names}") from None


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """K x K counts for two raters; rows are rater 1, columns rater 2."""

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x)
        if x.ndim != 2 or x.shape[0] != x.shape[1]:
            raise ValueError(f"contingency table must be square, got shape {x.shape}")
        if x.shape[0] < 2:
            raise ValueError("contingency table needs at least 2 categories")
        if not np.issubdtype(x.dtype, np.integer):
            if not np.all(np.isfinite(x)) or np.any(x != np.round(x)):
                raise ValueError("contingency table counts must be integers")
        x = x.astype(np.int64)
        if np.any(x < 0):
            raise ValueError("contingency table counts must be non-negative")
        if x.sum() < 1:
            raise ValueError("contingency table must contain at least one subject")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def K(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return int(self.x.sum())

    @property
    def proportions(self) -> np.ndarray:
        return self.x / self.n

    def __eq__(self, other):
        if not isinstance(other, ContingencyTable):
            return NotImplemented
        return np.array_equal(self.x, other.x)

    def __hash__(self):
        return hash(self.x.tobytes())

    def __repr__(self):
        return f"ContingencyTable({self.x.tolist()})"

    def to_multirater(self) -> MultiRaterTable:
        """Per-subject category counts for the same data (R = 2)."""
        rows = []
        for (i, j), count in np.ndenumerate(self.x):
            row = np.zeros(self.K, dtype=np.int64)
            row[i] += 1
            row[j] += 1
            rows.extend([row] * int(count))
        return MultiRaterTable(np.array(rows))


@dataclass(frozen=True, eq=False)
class MultiRaterTable:
    """n x K matrix; row i counts how many of the R raters chose each category."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("multi-rater table must be a non-empty 2-D array")
        if c.shape[1] < 2:
            raise ValueError("multi-rater table needs at least 2 categories")
        if not np.issubdtype(c.dtype, np.integer) and np.any(c != np.round(c)):
            raise ValueError("multi-rater counts must be integers")
        c = c.astype(np.int64)
        if np.any(c < 0):
            raise ValueError("multi-rater counts must be non-negative")
        totals = c.sum(axis=1)
        if np.any(totals != totals[0]):
            bad = int(np.flatnonzero(totals != totals[0])[0])
            raise ValueError(
                f"varying raters per subject: subject 0 has {totals[0]}, subject {bad} has {totals[bad]}"
            )
        if totals[0] < 2:
            raise ValueError("at least 2 raters per subject are required")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def R(self) -> int:
        return int(self.counts[0].sum())

    @property
    def K(self) -> int:
        return self.counts.shape[1]


@dataclass(frozen=True)
class CoefficientEstimate:
    family: Family
    value: float
    I_o: float
    I_e: float
    n: int
    R: int = 2
    I_eU: float | None = None
    value_U: float | None = None
    extra: dict = field(default_factory=dict, compare=False)


def _kappa(I_o: float, I_e: float, table=None) -> float:
    if I_e >= 1.0:
        raise UndefinedCoefficientError("undefined coefficient: expected index equals 1", table)
    return (I_o - I_e) / (1.0 - I_e)


def _indices(table: ContingencyTable) -> tuple[float, np.ndarray, np.ndarray]:
    p = table.proportions
    return math.fsum(np.diag(p)), p.sum(axis=1), p.sum(axis=0)


def _with_unbiased(family: Family, table: ContingencyTable, value: float, I_o: float, I_e: float):
    n = table.n
    if n < 2:
        return CoefficientEstimate(family, value, I_o, I_e, n)
    I_eU = unbiased_expected_index(family, table)
    value_U = _kappa(I_o, I_eU, table) if I_eU < 1.0 else None
    return CoefficientEstimate(family, value, I_o, I_e, n, I_eU=I_eU, value_U=value_U)


def cohen_kappa(table: ContingencyTable) -> CoefficientEstimate:
    I_o, rows, cols = _indices(table)
    I_e = math.fsum(rows * cols)
    value = _kappa(I_o, I_e, table)
    return _with_unbiased(Family.COHEN, table, value, I_o, I_e)


def scott_pi(table: ContingencyTable) -> CoefficientEstimate:
    I_o, rows, cols = _indices(table)
    pooled = (rows + cols) / 2
    I_e = math.fsum(pooled**2)
    value = _kappa(I_o, I_e, table)
    return _with_unbiased(Family.SCOTT, table, value, I_o, I_e)


def krippendorff_alpha(table: ContingencyTable) -> CoefficientEstimate:
    """Krippendorff's alpha (nominal, two raters, no missing values).

    Computed as ``pi + (1 - pi) / (2n)`` from Scott's pi.  The reported
    ``I_e`` is the without-replacement pooled index
    ``sum_k s_k (s_k - 1) / (2n (2n - 1))`` so that the usual kappa form
    still reproduces the value.
    """
    scott = scott_pi(table)
    n = table.n
    value = ((2 * n - 1) * scott.value + 1) / (2 * n)
    pooled = table.x.sum(axis=0) + table.x.sum(axis=1)
    I_e = math.fsum(pooled * (pooled - 1)) / (2 * n * (2 * n - 1))
    value_U = None
    if scott.value_U is not None:
        value_U = to_unbiased(Family.KRIPPENDORFF, scott.value, n)
    return CoefficientEstimate(
        Family.KRIPPENDORFF, value, scott.I_o, I_e, n, value_U=value_U,
        extra={"scott_pi": scott.value},
    )


def fleiss_kappa(mr: MultiRaterTable) -> CoefficientEstimate:
    c = mr.counts
    n, R = mr.n, mr.R
    I_o = math.fsum((c * (c - 1)).ravel()) / (n * R * (R - 1))
    pbar = c.sum(axis=0) / (n * R)
    I_e = math.fsum(pbar**2)
    value = _kappa(I_o, I_e, mr)
    value_U = None
    if _denominator(Family.FLEISS, value, n, R) > 0:
        value_U = to_unbiased(Family.FLEISS, value, n, R)
    return CoefficientEstimate(Family.FLEISS, value, I_o, I_e, n, R=R, value_U=value_U)


def unbiased_expected_index(family: Family | str, table: ContingencyTable) -> float:
    """Finite-sample unbiased estimator of the population expected index.

    Each product of two marginal proportions is replaced by its unbiased
    counterpart built from the counts: for row total ``r_i`` and column
    total ``c_i``, ``E[r_i c_i] = n(n-1) p_i. p_.i + n p_ii``, and
    ``E[s(s-1)] = n(n-1) P(s)^2`` for any total ``s``.
    """
    family = as_family(family)
    n = table.n
    if n < 2:
        raise ValueError("unbiased expected index needs n >= 2")
    x = table.x
    rows, cols, diag = x.sum(axis=1), x.sum(axis=0), np.diag(x)
    if family is Family.COHEN:
        terms = rows * cols - diag
        return math.fsum(terms.astype(float)) / (n * (n - 1))
    if family is Family.SCOTT:
        s = rows + cols
        terms = s * s - s - 2 * diag
        return math.fsum(terms.astype(float)) / (4 * n * (n - 1))
    raise ValueError(
        f"no data route for the unbiased expected index of {family.value}; use to_unbiased"
    )


def _denominator(family: Family, kappa: float, n: int, R: int) -> float:
    if family in _COHEN_LIKE:
        return n - 1 + kappa
    if family in _SCOTT_LIKE or family in _KRIPP_LIKE:
        return 2 * n - 1 + kappa
    if family is Family.FLEISS:
        return n * R - (R - 1) * (1 - kappa)
    raise ValueError(f"unsupported family {family!r}")


def _check(family: Family | str, kappa: float, n: int, R: int) -> tuple[Family, float]:
    family = as_family(family)
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if family in _TWO_RATER and R != 2:
        raise ValueError(f"{family.value} is a two-rater coefficient, got R={R}")
    if R < 2:
        raise ValueError(f"R must be >= 2, got {R}")
    d = _denominator(family, kappa, n, R)
    if d <= 0:
        raise TransformationError(
            f"transformation undefined for {family.value}: denominator {d:g} <= 0 "
            f"at kappa={kappa:g}, n={n}, R={R}"
        )
    return family, d


def to_unbiased(family: Family | str, kappa: float, n: int, R: int = 2) -> float:
    """Map a classic estimate to its unbiased-expected-index variant.

    Cohen/Hubert: ``n k / (n - 1 + k)``.  Scott/F2:
    ``((2n-1) k + 1) / (2n - 1 + k)``.  Fleiss:
    ``((Rn-1) k + 1) / (Rn - (R-1)(1-k))``.  Krippendorff/K2 take the
    Scott-type base value (``pi`` or ``F2``), not alpha, and return
    ``((2n-1) pi_U + 1) / (2n)``.
    """
    family, d = _check(family, kappa, n, R)
    if family in _COHEN_LIKE:
        return n * kappa / d
    if family in _SCOTT_LIKE:
        return ((2 * n - 1) * kappa + 1) / d
    if family in _KRIPP_LIKE:
        scott_u = ((2 * n - 1) * kappa + 1) / d
        return ((2 * n - 1) * scott_u + 1) / (2 * n)
    return ((R * n - 1) * kappa + 1) / d


def transform_derivative(family: Family | str, kappa: float, n: int, R: int = 2) -> float:
    """d(kappa_U)/d(kappa) of :func:`to_unbiased`."""
    family, d = _check(family, kappa, n, R)
    if family in _COHEN_LIKE:
        return n * (n - 1) / d**2
    if family in _SCOTT_LIKE:
        return 4 * n * (n - 1) / d**2
    if family in _KRIPP_LIKE:
        return 2 * (2 * n - 1) * (n - 1) / d**2
    return R**2 * n * (n - 1) / d**2


def crossover_kappa(family: Family | str, n: int, R: int = 2) -> float:
    """Base value where the transformation has unit slope.

    There the variance factor of the unbiased variant is exactly one and
    ``kappa_U - kappa`` reaches its maximum.
    """
    family = as_family(family)
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    root = math.sqrt(n * (n - 1))
    if family in _COHEN_LIKE:
        return root - (n - 1)
    if family in _SCOTT_LIKE:
        return 2 * root - (2 * n - 1)
    if family in _KRIPP_LIKE:
        return math.sqrt(2 * (2 * n - 1) * (n - 1)) - (2 * n - 1)
    return (R * root - (R * n - R + 1)) / (R - 1)


def agreement_range(family: Family | str, R: int = 2) -> tuple[float, float]:
    """Interval of base values on which ``kappa_U >= kappa``.

    Bounded by the fixed points of the transformation, clipped to [-1, 1].
    """
    family = as_family(family)
    if family in _COHEN_LIKE:
        return 0.0, 1.0
    if family is Family.FLEISS:
        return -1.0 / (R - 1), 1.0
    return -1.0, 1.0


def estimate(family: Family | str, data) -> CoefficientEstimate:
    """Dispatch on family for data-driven estimators."""
    family = as_family(family)
    if family is Family.FLEISS:
        mr = data.to_multirater() if isinstance(data, ContingencyTable) else data
        return fleiss_kappa(mr)
    if not isinstance(data, ContingencyTable):
        raise TypeError(f"{family.value} needs a two-rater contingency table")
    if family is Family.COHEN:
        return cohen_kappa(data)
    if family is Family.SCOTT:
        return scott_pi(data)
    if family is Family.KRIPPENDORFF:
        return krippendorff_alpha(data)
    raise ValueError(
        f"{family.value} has no data estimator here; supply its base value to to_unbiased"
    )
