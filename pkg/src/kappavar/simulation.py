"""Monte Carlo assessment of variance estimators for the unbiased Cohen kappa.

For a scenario (K, n, kappa) the population model gives the exact asymptotic
variances.  ``N`` tables are drawn; each yields the unbiased kappa and two
plug-in variance estimates.  The empirical variance of the N kappas is the
reference against which the four other columns are judged.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from .coefficients import Family
from .model import MultinomialModel, Scenario, population_summaries, sample_tables
from .variance import (
    SmoothFunctional,
    cohen_batch,
    cohen_functional,
    delta_variance,
    empirical_variance,
    fleiss_cohen_everitt_variance,
    unbiased_functional,
    va_transform,
)

log = logging.getLogger(__name__)

POLICIES = ("redraw", "drop")
# reported columns, then bookkeeping
COLUMNS = (
    "K", "n", "kappa_target", "V_E_hat", "V_exact", "VA_exact", "V_bar", "VA_bar",
    "N", "used", "degenerate_count", "rel_V", "rel_VA", "rel_Vbar", "rel_VAbar",
)
REL_FIELDS = ("rel_V", "rel_VA", "rel_Vbar", "rel_VAbar")
V_EXACT_LABEL = "delta_stand_in"

# redraws use stream indices from here up, so they never collide with h < N
_REDRAW_OFFSET = 1 << 40
_CHUNK = 2_000
_MAX_REDRAWS = 100


@dataclass(frozen=True)
class SimConfig:
    scenario: Scenario
    N: int = 10_000
    seed: int = 0
    degenerate_policy: str = "redraw"

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")
        if self.degenerate_policy not in POLICIES:
            raise ValueError(f"degenerate_policy must be one of {POLICIES}")


@dataclass(frozen=True)
class SimulationCell:
    K: int
    n: int
    kappa_target: float
    V_E_hat: float
    V_exact: float
    VA_exact: float
    V_bar: float
    VA_bar: float
    N: int
    used: int
    degenerate_count: int
    rel_V: float | None
    rel_VA: float | None
    rel_Vbar: float | None
    rel_VAbar: float | None


@dataclass(frozen=True)
class SimulationReport:
    cells: list[SimulationCell]
    summary: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for cell in self.cells:
            w.writerow([_fmt(getattr(cell, c)) for c in COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "columns": {"V_exact": V_EXACT_LABEL},
            "cells": [asdict(c) for c in self.cells],
            "summary": self.summary,
        }
        return json.dumps(doc, indent=2)

    def to_table(self) -> str:
        head = ["K", "n", "kappa", "V_E^", "V(stand-in)", "V_A", "mean V^", "mean V_A^"]
        lines = ["  ".join(f"{h:>11}" for h in head)]
        for c in self.cells:
            vals = [c.V_E_hat, c.V_exact, c.VA_exact, c.V_bar, c.VA_bar]
            lines.append(
                "  ".join(
                    [f"{c.K:>11d}", f"{c.n:>11d}", f"{c.kappa_target:>11.2f}"]
                    + [f"{v:>11.4f}" for v in vals]
                )
            )
        lines.append("")
        lines.append("mean relative difference vs V_E^ (%):")
        for key in REL_FIELDS:
            val = self.summary.get(key)
            lines.append(f"  {key:<10} {'NA' if val is None else f'{val:+.2f}'}")
        lines.append(f"V(stand-in) = {V_EXACT_LABEL}: delta method on the unbiased-kappa functional")
        return "\n".join(lines)


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_csv_report(text: str) -> list[dict]:
    """Parse :meth:`SimulationReport.to_csv` output back into typed rows."""
    ints = {"K", "n", "N", "used", "degenerate_count"}
    rows = []
    for raw in csv.DictReader(io.StringIO(text)):
        row = {}
        for k, v in raw.items():
            if v == "NA":
                row[k] = None
            elif k in ints:
                row[k] = int(v)
            else:
                row[k] = float(v)
        rows.append(row)
    return rows


def _draw_chunk(args):
    model_p, n, seed, start, stop = args
    return sample_tables(MultinomialModel(model_p), n, seed, range(start, stop))


def _draw(model, n: int, seed: int, indices: range, workers: int) -> np.ndarray:
    if workers <= 1 or len(indices) <= _CHUNK:
        return sample_tables(model, n, seed, indices)
    jobs = [
        (model.p, n, seed, s, min(s + _CHUNK, indices.stop))
        for s in range(indices.start, indices.stop, _CHUNK)
    ]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_draw_chunk, jobs))
    return np.concatenate(parts)


def exact_variances(scenario: Scenario) -> tuple[float, float]:
    """(delta stand-in for V(kappa_CU), V_A(kappa_CU)) at the population."""
    model = scenario.model()
    kappa = population_summaries(model).kappa_C
    base = fleiss_cohen_everitt_variance(model.p, scenario.n).value
    VA = va_transform(Family.COHEN, base, kappa, scenario.n).value
    f = unbiased_functional(SmoothFunctional(cohen_functional().evaluate), Family.COHEN, scenario.n)
    V = delta_variance(f, model.p.ravel(), scenario.n).value
    return V, VA


def _rel(value: float, ref: float) -> float | None:
    return None if ref == 0 else value / ref - 1


def run_cell(config: SimConfig, workers: int = 1) -> SimulationCell:
    sc = config.scenario
    model = sc.model()
    V_exact, VA_exact = exact_variances(sc)

    tables = _draw(model, sc.n, config.seed, range(config.N), workers)
    stats = cohen_batch(tables)
    degenerate = int(stats["degenerate"].sum())
    if degenerate and config.degenerate_policy == "redraw":
        keep = {k: v[~stats["degenerate"]] for k, v in stats.items()}
        next_index = _REDRAW_OFFSET
        while len(keep["kappa_CU"]) < config.N:
            if next_index - _REDRAW_OFFSET > _MAX_REDRAWS * config.N:
                raise ValueError(f"too many degenerate samples ({degenerate}) to complete {config.N} draws")
            need = config.N - len(keep["kappa_CU"])
            extra = cohen_batch(sample_tables(model, sc.n, config.seed, range(next_index, next_index + need)))
            next_index += need
            degenerate += int(extra["degenerate"].sum())
            good = ~extra["degenerate"]
            keep = {k: np.concatenate([keep[k], extra[k][good]]) for k in keep}
        stats = keep
    else:
        stats = {k: v[~stats["degenerate"]] for k, v in stats.items()}
    if degenerate:
        log.info("cell K=%d n=%d kappa=%g: %d degenerate samples (%s)",
                 sc.K, sc.n, sc.kappa_target, degenerate, config.degenerate_policy)
    used = len(stats["kappa_CU"])
    if used < 2:
        raise ValueError(f"only {used} usable samples in cell K={sc.K} n={sc.n} kappa={sc.kappa_target}")

    V_E = empirical_variance(stats["kappa_CU"])
    V_bar = math.fsum(stats["V_delta"]) / used
    VA_bar = math.fsum(stats["V_A"]) / used
    return SimulationCell(
        K=sc.K, n=sc.n, kappa_target=sc.kappa_target,
        V_E_hat=V_E, V_exact=V_exact, VA_exact=VA_exact, V_bar=V_bar, VA_bar=VA_bar,
        N=config.N, used=used, degenerate_count=degenerate,
        rel_V=_rel(V_exact, V_E), rel_VA=_rel(VA_exact, V_E),
        rel_Vbar=_rel(V_bar, V_E), rel_VAbar=_rel(VA_bar, V_E),
    )


def relative_bias_summary(cells: list[SimulationCell]) -> dict[str, float]:
    """Mean of each relative-difference column across cells, in percent."""
    if not cells:
        raise ValueError("no cells to summarise")
    for c in cells:
        if c.V_E_hat == 0:
            raise ValueError(f"cell K={c.K} n={c.n} kappa={c.kappa_target} has zero empirical variance")
    return {key: 100 * math.fsum(getattr(c, key) for c in cells) / len(cells) for key in REL_FIELDS}


def run_grid(configs: list[SimConfig], workers: int = 1) -> SimulationReport:
    if not configs:
        raise ValueError("empty grid")
    cells = []
    for cfg in configs:
        sc = cfg.scenario
        try:
            cells.append(run_cell(cfg, workers=workers))
        except Exception as exc:
            raise RuntimeError(f"cell K={sc.K} n={sc.n} kappa={sc.kappa_target}: {exc}") from exc
    defined = [c for c in cells if c.V_E_hat > 0]
    if defined:
        summary = relative_bias_summary(defined)
    else:
        summary = {key: None for key in REL_FIELDS}
    summary["cells_summarised"] = len(defined)
    return SimulationReport(cells, summary)


def reference_grid(N: int = 10_000, seed: int = 0, policy: str = "redraw") -> list[SimConfig]:
    """The 24 benchmark scenarios: K in (2, 3, 5), n in (10, 20, 50, 100), kappa in (0.4, 0.8)."""
    return [
        SimConfig(Scenario(K, n, kappa), N, seed, policy)
        for K in (2, 3, 5)
        for n in (10, 20, 50, 100)
        for kappa in (0.4, 0.8)
    ]


def field_names() -> list[str]:
    return [f.name for f in fields(SimulationCell)]
