"""Asymptotic variances of kappa-type estimators.

Three routes are provided:

* the Fleiss-Cohen-Everitt closed form for Cohen's kappa,
* a generic multivariate delta-method engine for any smooth functional of
  multinomial cell probabilities, ``V = [sum f_c^2 p_c - (sum f_c p_c)^2] / n``,
* the transformation rule for the unbiased variants: the variance of
  ``kappa_U`` is the base variance times ``(d kappa_U / d kappa)^2``.

Plug-in estimates and a subject-level bootstrap sit on top of these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import coefficients as coef
from .coefficients import (
    ContingencyTable,
    Family,
    MultiRaterTable,
    TransformationError,
    UndefinedCoefficientError,
)

METHODS = ("closed_form", "delta_numeric", "va_transform", "plugin", "bootstrap")
PLUGIN_FORMULAS = ("fleiss_cohen_everitt", "va_transform", "delta_numeric")

# tolerated negative round-off in a variance before it is treated as an error
_NEG_SLACK = 1e-15


class DegenerateSampleError(ValueError):
    """A sample on which the unbiased coefficient or its variance is undefined."""


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    method: str
    family: Family = Family.COHEN
    at: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown variance method {self.method!r}")
        if not self.value >= 0:
            raise ValueError(f"variance must be non-negative, got {self.value!r}")

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class SmoothFunctional:
    """A real function of a probability vector, optionally with its gradient."""

    evaluate: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray] | None = None


def _nonneg(v: float) -> float:
    if v < 0:
        if v < -_NEG_SLACK:
            raise ArithmeticError(f"negative variance {v!r}")
        return 0.0
    return v


# ---------------------------------------------------------------- delta engine


def finite_difference_gradient(evaluate: Callable[[np.ndarray], float], p: np.ndarray) -> np.ndarray:
    """Gradient of ``evaluate`` at ``p`` along directions inside the simplex.

    Cell ``c`` is moved against the largest cell, so the result is the true
    gradient minus a constant.  The delta formula is blind to that constant.
    Zero cells carry no weight in the formula and get a zero entry.
    """
    p = np.asarray(p, dtype=float)
    ref = int(np.argmax(p))
    grad = np.zeros_like(p)
    for c in range(p.size):
        if c == ref or p[c] == 0:
            continue
        h = min(max(1e-6, 1e-4 * p[c]), p[c] / 2, p[ref] / 2)
        up, down = p.copy(), p.copy()
        up[c] += h
        up[ref] -= h
        down[c] -= h
        down[ref] += h
        try:
            grad[c] = (evaluate(up) - evaluate(down)) / (2 * h)
        except (ArithmeticError, ValueError) as exc:
            raise ValueError(f"functional undefined near cell {c}: {exc}") from exc
        if not math.isfinite(grad[c]):
            raise ValueError(f"non-finite derivative at cell {c}")
    return grad


def delta_variance(
    f: SmoothFunctional, p: Sequence[float], n: int, family: Family = Family.COHEN
) -> VarianceEstimate:
    p = np.asarray(p, dtype=float).ravel()
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if np.any(p < 0) or abs(math.fsum(p) - 1.0) > 1e-9:
        raise ValueError("p must be a probability vector")
    if f.gradient is not None:
        g = np.asarray(f.gradient(p), dtype=float).ravel()
    else:
        g = finite_difference_gradient(f.evaluate, p)
    mean = math.fsum(g * p)
    # centre first: same quantity, far less cancellation
    v = math.fsum((g - mean) ** 2 * p) / n
    return VarianceEstimate(_nonneg(v), "delta_numeric", family, {"n": n})


def _square(p: np.ndarray) -> np.ndarray:
    K = math.isqrt(p.size)
    if K * K != p.size:
        raise ValueError(f"{p.size} cells do not form a square table")
    return p.reshape(K, K)


def _cohen_parts(q: np.ndarray):
    rows, cols = q.sum(axis=1), q.sum(axis=0)
    I_o = math.fsum(np.diag(q))
    I_e = math.fsum(rows * cols)
    if I_e >= 1:
        raise UndefinedCoefficientError("undefined coefficient: expected index equals 1")
    return rows, cols, I_o, I_e


def _cohen_gradient(q: np.ndarray) -> np.ndarray:
    rows, cols, I_o, I_e = _cohen_parts(q)
    kappa = (I_o - I_e) / (1 - I_e)
    # d kappa / d p_ij = [delta_ij - (1 - kappa)(p_.i + p_j.)] / (1 - I_e)
    w = cols[:, None] + rows[None, :]
    return (np.eye(q.shape[0]) - (1 - kappa) * w) / (1 - I_e)


def cohen_functional() -> SmoothFunctional:
    """Cohen's kappa as a function of the flattened K x K cell vector."""

    def evaluate(p):
        q = _square(np.asarray(p, dtype=float))
        _, _, I_o, I_e = _cohen_parts(q)
        return (I_o - I_e) / (1 - I_e)

    def gradient(p):
        return _cohen_gradient(_square(np.asarray(p, dtype=float))).ravel()

    return SmoothFunctional(evaluate, gradient)


def scott_functional() -> SmoothFunctional:
    def evaluate(p):
        q = _square(np.asarray(p, dtype=float))
        pooled = (q.sum(axis=1) + q.sum(axis=0)) / 2
        I_o, I_e = math.fsum(np.diag(q)), math.fsum(pooled**2)
        if I_e >= 1:
            raise UndefinedCoefficientError("undefined coefficient: expected index equals 1")
        return (I_o - I_e) / (1 - I_e)

    return SmoothFunctional(evaluate)


def fleiss_functional(profiles: np.ndarray) -> SmoothFunctional:
    """Fleiss' kappa as a function of the distribution of rating profiles.

    ``profiles`` is an ``M x K`` array; row ``m`` is a per-subject vector of
    category counts.  Subjects are i.i.d. draws from a multinomial over the
    M profiles, which puts Fleiss' kappa in reach of the delta engine.
    """
    profiles = np.asarray(profiles, dtype=float)
    R = profiles[0].sum()
    agree = (profiles * (profiles - 1)).sum(axis=1) / (R * (R - 1))

    def evaluate(q):
        q = np.asarray(q, dtype=float)
        I_o = math.fsum(q * agree)
        pbar = q @ profiles / R
        I_e = math.fsum(pbar**2)
        if I_e >= 1:
            raise UndefinedCoefficientError("undefined coefficient: expected index equals 1")
        return (I_o - I_e) / (1 - I_e)

    return SmoothFunctional(evaluate)


def unbiased_functional(
    base: SmoothFunctional, family: Family | str, n: int, R: int = 2
) -> SmoothFunctional:
    """Compose a base functional with the map to its unbiased variant."""
    family = coef.as_family(family)

    def evaluate(p):
        return coef.to_unbiased(family, base.evaluate(p), n, R)

    gradient = None
    if base.gradient is not None:

        def gradient(p):
            k = base.evaluate(p)
            return coef.transform_derivative(family, k, n, R) * np.asarray(base.gradient(p))

    return SmoothFunctional(evaluate, gradient)


# ------------------------------------------------------------------ closed form


def _fce_numerator(p: np.ndarray, I_e, kappa):
    """A + B - C for arrays of tables ``(..., K, K)`` with broadcast I_e, kappa."""
    rows, cols = p.sum(axis=-1), p.sum(axis=-2)
    diag = np.diagonal(p, axis1=-2, axis2=-1)
    one_minus = 1 - np.asarray(kappa, dtype=float)
    om = one_minus[..., None]
    A = np.sum(diag * (1 - (rows + cols) * om) ** 2, axis=-1)
    w = cols[..., :, None] + rows[..., None, :]
    K = p.shape[-1]
    off = ~np.eye(K, dtype=bool)
    B = one_minus**2 * np.sum(np.where(off, p * w**2, 0.0), axis=(-2, -1))
    C = (1 - one_minus * (1 + np.asarray(I_e, dtype=float))) ** 2
    return A + B - C


def fce_terms(p, I_e: float | None = None, kappa: float | None = None) -> dict:
    """The A, B, C terms, evaluated with optional substituted I_e and kappa."""
    q = np.asarray(p, dtype=float)
    rows, cols = q.sum(axis=1), q.sum(axis=0)
    if I_e is None:
        I_e = math.fsum(rows * cols)
    if kappa is None:
        if I_e >= 1:
            raise UndefinedCoefficientError("undefined coefficient: expected index equals 1")
        kappa = (math.fsum(np.diag(q)) - I_e) / (1 - I_e)
    K = q.shape[0]
    A = math.fsum(q[i, i] * (1 - (rows[i] + cols[i]) * (1 - kappa)) ** 2 for i in range(K))
    B = (1 - kappa) ** 2 * math.fsum(
        q[i, j] * (cols[i] + rows[j]) ** 2 for i in range(K) for j in range(K) if i != j
    )
    C = (1 - (1 - kappa) * (1 + I_e)) ** 2
    return {"A": A, "B": B, "C": C, "I_e": I_e, "kappa": kappa}


def fleiss_cohen_everitt_variance(
    p, n: int, *, I_e: float | None = None, kappa: float | None = None
) -> VarianceEstimate:
    """Large-sample variance of Cohen's kappa.

    ``(A + B - C) / (n (1 - I_e)^2)`` with

    * ``A = sum_i p_ii [1 - (p_i. + p_.i)(1 - kappa)]^2``
    * ``B = (1 - kappa)^2 sum_{i != j} p_ij (p_.i + p_j.)^2``
    * ``C = [1 - (1 - kappa)(1 + I_e)]^2``

    ``I_e`` and ``kappa`` default to the values implied by ``p``; passing
    them evaluates the formula at substituted values instead.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    t = fce_terms(p, I_e, kappa)
    if t["I_e"] >= 1:
        raise UndefinedCoefficientError("undefined coefficient: expected index equals 1")
    v = (t["A"] + t["B"] - t["C"]) / (n * (1 - t["I_e"]) ** 2)
    at = {"n": n, "I_e": t["I_e"], "kappa": t["kappa"]}
    return VarianceEstimate(_nonneg(v), "closed_form", Family.COHEN, at)


# ------------------------------------------------------------- V_A transform


def va_factor(family: Family | str, kappa: float, n: int, R: int = 2) -> float:
    """Variance multiplier for the unbiased variant.

    Cohen/Hubert ``{n(n-1)}^2 / (n-1+k)^4``; Scott/F2 ``{4n(n-1)}^2 / (2n-1+k)^4``;
    Krippendorff/K2 ``{2(2n-1)(n-1)}^2 / (2n-1+k)^4``; Fleiss
    ``{R^2 n(n-1)}^2 / {nR - (R-1)(1-k)}^4``.
    """
    family = coef.as_family(family)
    if family in (Family.COHEN, Family.HUBERT):
        num, den = n * (n - 1), n - 1 + kappa
    elif family in (Family.SCOTT, Family.FLEISS2):
        num, den = 4 * n * (n - 1), 2 * n - 1 + kappa
    elif family in (Family.KRIPPENDORFF, Family.KRIPPENDORFF2):
        num, den = 2 * (2 * n - 1) * (n - 1), 2 * n - 1 + kappa
    else:
        num, den = R**2 * n * (n - 1), n * R - (R - 1) * (1 - kappa)
    if den <= 0:
        raise TransformationError(
            f"transformation undefined for {family.value}: denominator {den:g} <= 0"
        )
    return num**2 / den**4


def va_transform(
    family: Family | str, base_variance: float, kappa_base: float, n: int, R: int = 2
) -> VarianceEstimate:
    family = coef.as_family(family)
    base_variance = float(base_variance)
    if base_variance < 0:
        raise ValueError(f"base variance must be non-negative, got {base_variance}")
    coef._check(family, kappa_base, n, R)
    factor = va_factor(family, kappa_base, n, R)
    at = {"n": n, "R": R, "kappa": kappa_base, "factor": factor, "base": base_variance}
    return VarianceEstimate(factor * base_variance, "va_transform", family, at)


# ------------------------------------------------------------------- plug-in


def _cohen_sample_point(table: ContingencyTable) -> tuple[float, float]:
    """Unbiased expected index and unbiased kappa of a table, or raise."""
    if table.n < 2:
        raise DegenerateSampleError("plug-in variance needs n >= 2")
    est = coef.cohen_kappa(table) if _cohen_defined(table) else None
    if est is None or est.value_U is None:
        raise DegenerateSampleError(f"unbiased kappa undefined on {table!r}")
    return est.I_eU, est.value_U


def _cohen_defined(table: ContingencyTable) -> bool:
    x = table.x
    n = table.n
    # I_eU == 1  <=>  sum_i r_i c_i - sum_i x_ii == n (n - 1); covers I_e == 1 too
    return int((x.sum(axis=1) * x.sum(axis=0)).sum() - np.trace(x)) != n * (n - 1)


def plugin_variance(
    formula: str, table: ContingencyTable, *, unbiased: bool = True
) -> VarianceEstimate:
    """Cohen-family variance formulas evaluated at a sample.

    With ``unbiased=True`` the population ``I_e`` and ``kappa_C`` are replaced
    by the unbiased expected index and the unbiased kappa of the sample, in
    the closed form and in the transformation factor alike.  ``delta_numeric``
    runs the delta engine on the unbiased-kappa functional at the sample
    proportions, where the substitution has no separate meaning.
    ``unbiased=False`` gives the classic plug-in values.
    """
    if formula not in PLUGIN_FORMULAS:
        raise ValueError(f"unknown plug-in formula {formula!r}; expected one of {PLUGIN_FORMULAS}")
    n = table.n
    p = table.proportions
    if unbiased:
        I_e, kappa = _cohen_sample_point(table)
    else:
        est = coef.cohen_kappa(table)
        I_e, kappa = est.I_e, est.value
    at = {"formula": formula, "n": n, "I_e": I_e, "kappa": kappa, "unbiased": unbiased}
    if formula == "delta_numeric":
        f = cohen_functional()
        if unbiased:
            f = unbiased_functional(SmoothFunctional(f.evaluate), Family.COHEN, n)
        v = delta_variance(f, p.ravel(), n).value
        return VarianceEstimate(v, "plugin", Family.COHEN, at)
    base = fleiss_cohen_everitt_variance(p, n, I_e=I_e, kappa=kappa).value
    if formula == "fleiss_cohen_everitt":
        return VarianceEstimate(base, "plugin", Family.COHEN, at)
    v = va_transform(Family.COHEN, base, kappa, n).value
    return VarianceEstimate(v, "plugin", Family.COHEN, at)


def family_plugin(family: Family | str, data) -> tuple[VarianceEstimate, VarianceEstimate]:
    """Plug-in (stand-in V, V_A) for the unbiased variant of a data family.

    Cohen follows :func:`plugin_variance`.  Scott, Krippendorff and Fleiss use
    the delta engine for the base variance at the sample point and the
    transformation factor at the classic estimate; the stand-in is the delta
    engine on the unbiased functional itself.
    """
    family = coef.as_family(family)
    if family is Family.COHEN:
        return plugin_variance("delta_numeric", data), plugin_variance("va_transform", data)
    if family in (Family.SCOTT, Family.KRIPPENDORFF):
        if not isinstance(data, ContingencyTable):
            raise TypeError(f"{family.value} needs a two-rater contingency table")
        n, R = data.n, 2
        base = scott_functional()
        q = data.proportions.ravel()
    elif family is Family.FLEISS:
        mr = data.to_multirater() if isinstance(data, ContingencyTable) else data
        profiles, freq = np.unique(mr.counts, axis=0, return_counts=True)
        n, R = mr.n, mr.R
        base = fleiss_functional(profiles)
        q = freq / n
    else:
        raise ValueError(f"no data-driven variance for {family.value}")
    kappa = base.evaluate(q)
    try:
        V_base = delta_variance(base, q, n, family).value
        V_A = va_transform(family, V_base, kappa, n, R)
        standin = delta_variance(unbiased_functional(base, family, n, R), q, n, family)
    except (TransformationError, UndefinedCoefficientError) as exc:
        raise DegenerateSampleError(str(exc)) from exc
    tag = {"n": n, "R": R, "kappa": kappa}
    return (
        VarianceEstimate(standin.value, "plugin", family, tag),
        VarianceEstimate(V_A.value, "plugin", family, tag),
    )


# -------------------------------------------------------------- batch kernels


def cohen_batch(x: np.ndarray) -> dict[str, np.ndarray]:
    """Per-table Cohen quantities for counts ``x`` of shape ``(N, K, K)``.

    Returns arrays ``kappa_C``, ``kappa_CU``, ``I_e``, ``I_eU``, ``V_delta``
    (plug-in delta stand-in) and ``V_A`` (plug-in with unbiased substitution),
    plus a boolean ``degenerate`` mask.  Entries for degenerate tables are NaN.
    Each non-degenerate entry matches the scalar functions to round-off.
    """
    x = np.asarray(x, dtype=np.int64)
    N, K, _ = x.shape
    n = int(x[0].sum())
    rows_i, cols_i = x.sum(axis=2), x.sum(axis=1)
    trace_i = np.trace(x, axis1=1, axis2=2)
    cross_i = (rows_i * cols_i).sum(axis=1)
    degenerate = cross_i - trace_i == n * (n - 1)
    ok = ~degenerate

    p = x[ok] / n
    I_o = trace_i[ok] / n
    I_e = cross_i[ok] / n**2
    I_eU = (cross_i[ok] - trace_i[ok]) / (n * (n - 1))
    kappa = (I_o - I_e) / (1 - I_e)
    kappa_U = (I_o - I_eU) / (1 - I_eU)

    # delta stand-in: gradient of the unbiased functional at p-hat
    rows, cols = p.sum(axis=2), p.sum(axis=1)
    w = cols[:, :, None] + rows[:, None, :]
    g = (np.eye(K) - (1 - kappa)[:, None, None] * w) / (1 - I_e)[:, None, None]
    g *= (n * (n - 1) / (n - 1 + kappa) ** 2)[:, None, None]
    mean = np.sum(g * p, axis=(1, 2))
    V_delta = np.sum((g - mean[:, None, None]) ** 2 * p, axis=(1, 2)) / n

    base = _fce_numerator(p, I_eU, kappa_U) / (n * (1 - I_eU) ** 2)
    V_A = (n * (n - 1)) ** 2 / (n - 1 + kappa_U) ** 4 * base

    out = {}
    for name, vals in (
        ("kappa_C", kappa), ("kappa_CU", kappa_U), ("I_e", I_e), ("I_eU", I_eU),
        ("V_delta", np.maximum(V_delta, 0.0)), ("V_A", np.maximum(V_A, 0.0)),
    ):
        full = np.full(N, np.nan)
        full[ok] = vals
        out[name] = full
    out["degenerate"] = degenerate
    return out


# ----------------------------------------------------------------- bootstrap


def empirical_variance(values: Sequence[float]) -> float:
    """Sample variance with denominator ``N - 1``, compensated sums."""
    vals = np.asarray(values, dtype=float).ravel()
    if vals.size < 2:
        raise ValueError("empirical variance needs at least 2 values")
    mean = math.fsum(vals) / vals.size
    return math.fsum((vals - mean) ** 2) / (vals.size - 1)


def _scalar(result) -> float:
    return float(getattr(result, "value", result))


def bootstrap_variance(estimator: Callable, data, B: int, stream) -> VarianceEstimate:
    """Variance of ``estimator`` over ``B`` resamples of subjects.

    Contingency tables are resampled as multinomial(n, p-hat) draws, which is
    the same as resampling subjects; multi-rater tables resample rows.
    Resamples on which the estimator is undefined are dropped and counted.
    """
    if B < 100:
        raise ValueError(f"bootstrap needs B >= 100, got {B}")
    rng = stream.generator()
    if isinstance(data, ContingencyTable):
        draws = rng.multinomial(data.n, data.proportions.ravel(), size=B)
        samples = (ContingencyTable(d.reshape(data.K, data.K)) for d in draws)
    elif isinstance(data, MultiRaterTable):
        idx = rng.integers(0, data.n, size=(B, data.n))
        samples = (MultiRaterTable(data.counts[i]) for i in idx)
    else:
        raise TypeError(f"cannot resample {type(data).__name__}")
    values, dropped = [], 0
    for s in samples:
        try:
            values.append(_scalar(estimator(s)))
        except (UndefinedCoefficientError, TransformationError, DegenerateSampleError):
            dropped += 1
    if dropped > B / 2:
        raise DegenerateSampleError(f"{dropped} of {B} bootstrap resamples were degenerate")
    at = {"B": B, "used": len(values), "degenerate": dropped}
    return VarianceEstimate(empirical_variance(values), "bootstrap", at=at)
