"""Population multinomial models over K x K rating tables."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .coefficients import ContingencyTable, UndefinedCoefficientError, unbiased_expected_index

ENUMERATION_CAP = 1_000_000


@dataclass(frozen=True, eq=False)
class MultinomialModel:
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 2:
            raise ValueError(f"cell probabilities must be K x K with K >= 2, got {p.shape}")
        if np.any(p < 0):
            raise ValueError("cell probabilities must be non-negative")
        total = math.fsum(p.ravel())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"cell probabilities sum to {total!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def K(self) -> int:
        return self.p.shape[0]

    def __repr__(self):
        return f"MultinomialModel({self.p.tolist()})"


@dataclass(frozen=True)
class Scenario:
    K: int
    n: int
    kappa_target: float
    marginals: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if not -1.0 < self.kappa_target <= 1.0:
            raise ValueError(f"kappa must lie in (-1, 1], got {self.kappa_target}")
        if self.marginals is not None:
            object.__setattr__(self, "marginals", tuple(float(m) for m in self.marginals))

    def model(self) -> MultinomialModel:
        return build_scenario(self.K, self.kappa_target, self.marginals)


class PopulationSummary(NamedTuple):
    I_o: float
    I_e: float
    kappa_C: float


@dataclass(frozen=True)
class SampleStream:
    """Independent, replayable random stream for replicate ``stream_index``."""

    base_seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.base_seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.PCG64(seq))


def build_scenario(K: int, kappa_target: float, marginals: Sequence[float] | None = None) -> MultinomialModel:
    """Mixture of perfect agreement and independence with shared marginals.

    ``p_ij = kappa * delta_ij * m_i + (1 - kappa) * m_i * m_j``; both raters
    have marginals ``m`` and the population Cohen kappa is ``kappa`` exactly.
    """
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if marginals is None:
        m = np.full(K, 1.0 / K)
    else:
        m = np.asarray(marginals, dtype=float)
        if m.shape != (K,):
            raise ValueError(f"need {K} marginals, got {m.shape}")
        if np.any(m <= 0) or abs(math.fsum(m) - 1.0) > 1e-12:
            raise ValueError("marginals must be positive and sum to 1")
    p = kappa_target * np.diag(m) + (1 - kappa_target) * np.outer(m, m)
    if np.any(p < 0):
        raise ValueError(
            f"kappa={kappa_target} with these marginals gives negative cell probabilities"
        )
    # absorb rounding so the total is 1 to the last bit where possible
    p[np.unravel_index(np.argmax(p), p.shape)] += 1.0 - math.fsum(p.ravel())
    return MultinomialModel(p)


def population_summaries(model: MultinomialModel) -> PopulationSummary:
    p = model.p
    I_o = math.fsum(np.diag(p))
    I_e = math.fsum(p.sum(axis=1) * p.sum(axis=0))
    if I_e >= 1.0:
        raise UndefinedCoefficientError("kappa undefined: population expected index is 1")
    return PopulationSummary(I_o, I_e, (I_o - I_e) / (1 - I_e))


def sample_table(model: MultinomialModel, n: int, stream: SampleStream) -> ContingencyTable:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    counts = stream.generator().multinomial(n, model.p.ravel())
    return ContingencyTable(counts.reshape(model.K, model.K))


def sample_tables(model: MultinomialModel, n: int, base_seed: int, indices: range) -> np.ndarray:
    """Counts for many replicates, shape ``(len(indices), K, K)``.

    Row ``h`` is exactly ``sample_table(model, n, SampleStream(base_seed, h)).x``.
    """
    flat = model.p.ravel()
    out = np.empty((len(indices), model.K, model.K), dtype=np.int64)
    for row, h in enumerate(indices):
        out[row] = SampleStream(base_seed, h).generator().multinomial(n, flat).reshape(model.K, model.K)
    return out


def composition_count(n: int, parts: int) -> int:
    return math.comb(n + parts - 1, parts - 1)


def _compositions(n: int, parts: int) -> Iterator[tuple[int, ...]]:
    # stars and bars over bar positions
    for bars in itertools.combinations(range(n + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(n + parts - 2 - prev)
        yield tuple(out)


def enumerate_tables(
    model: MultinomialModel, n: int, cap: int = ENUMERATION_CAP
) -> Iterator[tuple[ContingencyTable, float]]:
    """Every table with total ``n`` and its exact multinomial probability."""
    K = model.K
    total = composition_count(n, K * K)
    if total > cap:
        raise ValueError(
            f"{total} tables for K={K}, n={n} exceeds the enumeration cap {cap}; reduce n or K"
        )
    flat = model.p.ravel()
    for comp in _compositions(n, K * K):
        coef = math.factorial(n)
        prob = 1.0
        for c, q in zip(comp, flat):
            coef //= math.factorial(c)
            if c:
                prob *= q**c
        yield ContingencyTable(np.array(comp).reshape(K, K)), coef * prob


def population_expected_index(model: MultinomialModel, family: str = "cohen") -> float:
    """Population expected index: product marginals (Cohen) or squared pooled (Scott)."""
    rows, cols = model.p.sum(axis=1), model.p.sum(axis=0)
    if family == "cohen":
        return math.fsum(rows * cols)
    if family == "scott":
        return math.fsum(((rows + cols) / 2) ** 2)
    raise ValueError(f"no population expected index for {family!r}")


def expectation(model: MultinomialModel, n: int, statistic, cap: int = ENUMERATION_CAP) -> float:
    """Exact ``E[statistic(table)]`` over all tables of size ``n``."""
    return math.fsum(prob * statistic(table) for table, prob in enumerate_tables(model, n, cap))


def unbiasedness_bias(model: MultinomialModel, n: int, family: str = "cohen") -> float:
    """``E[I_eU] - I_e`` computed by exhaustive enumeration."""
    mean = expectation(model, n, lambda t: unbiased_expected_index(family, t))
    return mean - population_expected_index(model, family)
