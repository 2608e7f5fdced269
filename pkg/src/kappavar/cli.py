"""Command-line front end: ``kappavar {estimate,variance,simulate,crossover,oracle}``."""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import coefficients as coef
from .coefficients import ContingencyTable, Family, MultiRaterTable
from .model import MultinomialModel, Scenario, unbiasedness_bias
from .simulation import POLICIES, SimConfig, run_grid
from .variance import DegenerateSampleError, family_plugin

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

Z_95 = 1.959964
CLI_FAMILIES = ("cohen", "scott", "krippendorff", "fleiss")
CONFIG_KEYS = {"grid", "replicates", "seed", "marginals", "degenerate_policy"}
GRID_KEYS = {"K", "n", "kappa"}


class InputError(ValueError):
    """Malformed input file or config, with a location in the message."""


@dataclass
class RunRequest:
    command: str
    input_path: Path | None = None
    config_path: Path | None = None
    output_format: str = "table"
    seed: int | None = None
    family: str = "cohen"
    data_format: str = "matrix"
    policy: str | None = None

    def __post_init__(self):
        if self.command in ("estimate", "variance") and self.input_path is None:
            raise InputError(f"{self.command} requires --input")
        if self.command == "simulate" and self.config_path is None:
            raise InputError("simulate requires --config")


# ------------------------------------------------------------------ ingestion


def _read_rows(path) -> list[tuple[int, list[str]]]:
    text = Path(path).read_text()
    rows = [
        (lineno, [cell.strip() for cell in row])
        for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1)
        if row and any(cell.strip() for cell in row)
    ]
    if not rows:
        raise InputError(f"{path}: empty file")
    return rows


def ingest_ratings(path, format: str = "matrix"):
    """Read ratings as a contingency table or a multi-rater table."""
    return read_ratings(path, format)[0]


def read_ratings(path, format: str = "matrix") -> tuple[ContingencyTable | MultiRaterTable, dict[str, int]]:
    """Parse a ratings file; also return the category-label to index map.

    ``matrix``: CSV of K x K integer counts, no header.
    ``long``: CSV with header ``subject,rater,category``.  Two raters per
    subject with the same two rater labels throughout gives a contingency
    table (rows = first rater seen); otherwise a multi-rater table.
    Category labels map to indices by first appearance.
    """
    rows = _read_rows(path)
    if format == "matrix":
        width = len(rows[0][1])
        counts = []
        for lineno, cells in rows:
            if len(cells) != width:
                raise InputError(f"{path}:{lineno}: ragged matrix, expected {width} columns, got {len(cells)}")
            try:
                counts.append([int(c) for c in cells])
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-integer count in {cells}") from None
        if len(counts) != width:
            raise InputError(f"{path}: matrix is {len(counts)} x {width}, must be square")
        try:
            return ContingencyTable(np.array(counts)), {str(i): i for i in range(width)}
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from None
    if format != "long":
        raise InputError(f"unknown ratings format {format!r}")

    header_line, header = rows[0]
    if [h.lower() for h in header] != ["subject", "rater", "category"]:
        raise InputError(f"{path}:{header_line}: header must be subject,rater,category")
    categories: dict[str, int] = {}
    raters: dict[str, int] = {}
    subjects: dict[str, list[tuple[str, int, int]]] = {}
    for lineno, cells in rows[1:]:
        if len(cells) != 3:
            raise InputError(f"{path}:{lineno}: expected 3 fields, got {len(cells)}")
        subject, rater, category = cells
        cat = categories.setdefault(category, len(categories))
        raters.setdefault(rater, len(raters))
        subjects.setdefault(subject, []).append((rater, cat, lineno))
    if not subjects:
        raise InputError(f"{path}: no ratings after header")
    K = max(len(categories), 2)

    sizes = {s: len(r) for s, r in subjects.items()}
    first = next(iter(sizes.values()))
    for s, size in sizes.items():
        if size != first:
            line = subjects[s][0][2]
            raise InputError(
                f"{path}:{line}: varying raters per subject ({first} for the first subject, {size} for subject {s})"
            )
    if first < 2:
        raise InputError(f"{path}: each subject needs at least 2 ratings")

    if first == 2 and len(raters) == 2:
        x = np.zeros((K, K), dtype=np.int64)
        for s, ratings in subjects.items():
            by_rater = {raters[r]: c for r, c, _ in ratings}
            if len(by_rater) != 2:
                raise InputError(f"{path}:{ratings[0][2]}: subject {s} rated twice by one rater")
            x[by_rater[0], by_rater[1]] += 1
        return ContingencyTable(x), categories
    counts = np.zeros((len(subjects), K), dtype=np.int64)
    for i, ratings in enumerate(subjects.values()):
        for _, c, _ in ratings:
            counts[i, c] += 1
    return MultiRaterTable(counts), categories


# --------------------------------------------------------------------- config


def _int_list(value, key):
    if not isinstance(value, list) or not value:
        raise InputError(f"{key}: expected a non-empty list")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, int):
            raise InputError(f"{key}: {v!r} is not an integer")
    return value


def parse_config(path) -> list[SimConfig]:
    """Grid config (TOML, or JSON by extension) to one SimConfig per cell.

    Order is K outer, n middle, kappa inner.
    """
    path = Path(path)
    try:
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
        else:
            doc = tomllib.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
    grid = doc.get("grid")
    if not isinstance(grid, dict):
        raise InputError("grid: missing table with keys K, n, kappa")
    unknown = set(grid) - GRID_KEYS
    if unknown:
        raise InputError(f"unknown config keys: {', '.join('grid.' + k for k in sorted(unknown))}")
    missing = GRID_KEYS - set(grid)
    if missing:
        raise InputError(f"missing config keys: {', '.join('grid.' + k for k in sorted(missing))}")

    Ks = _int_list(grid["K"], "grid.K")
    ns = _int_list(grid["n"], "grid.n")
    kappas = grid["kappa"]
    if not isinstance(kappas, list) or not kappas:
        raise InputError("grid.kappa: expected a non-empty list")
    for i, K in enumerate(Ks):
        if K < 2:
            raise InputError(f"grid.K[{i}]: K must be >= 2, got {K}")
    for i, n in enumerate(ns):
        if n < 2:
            raise InputError(f"grid.n[{i}]: n must be >= 2, got {n}")
    for i, k in enumerate(kappas):
        if isinstance(k, bool) or not isinstance(k, (int, float)) or not -1 < k <= 1:
            raise InputError(f"grid.kappa[{i}]: kappa must lie in (-1, 1], got {k!r}")

    replicates = doc.get("replicates", 10_000)
    if isinstance(replicates, bool) or not isinstance(replicates, int) or replicates < 2:
        raise InputError(f"replicates: must be an integer >= 2, got {replicates!r}")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise InputError(f"seed: must be a non-negative integer, got {seed!r}")
    policy = doc.get("degenerate_policy", "redraw")
    if policy not in POLICIES:
        raise InputError(f"degenerate_policy: must be one of {POLICIES}, got {policy!r}")

    marginals = doc.get("marginals")
    by_K: dict[int, tuple[float, ...] | None] = {K: None for K in Ks}
    if isinstance(marginals, list):
        for K in Ks:
            if len(marginals) != K:
                raise InputError(f"marginals: list of {len(marginals)} does not fit K={K}; key by K instead")
            by_K[K] = tuple(marginals)
    elif isinstance(marginals, dict):
        for key, value in marginals.items():
            try:
                K = int(key)
            except ValueError:
                raise InputError(f"marginals.{key}: key must be a category count") from None
            if K not in by_K:
                raise InputError(f"marginals.{key}: K={K} is not in grid.K")
            if not isinstance(value, list) or len(value) != K:
                raise InputError(f"marginals.{key}: expected {K} values")
            by_K[K] = tuple(value)
    elif marginals is not None:
        raise InputError("marginals: expected a list or a table keyed by K")

    configs = []
    for K, n, kappa in itertools.product(Ks, ns, kappas):
        try:
            scenario = Scenario(K, n, float(kappa), by_K[K])
            scenario.model()
        except ValueError as exc:
            raise InputError(f"grid cell K={K} n={n} kappa={kappa}: {exc}") from None
        configs.append(SimConfig(scenario, replicates, seed, policy))
    return configs


# -------------------------------------------------------------------- reports


def _emit(record: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(record, indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(record.keys())
        w.writerow(["NA" if v is None else (repr(v) if isinstance(v, float) else v) for v in record.values()])
        return buf.getvalue().rstrip("\n")
    width = max(len(k) for k in record)
    lines = []
    for k, v in record.items():
        if isinstance(v, float):
            v = f"{v:.6f}"
        elif v is None:
            v = "NA"
        lines.append(f"{k:<{width}}  {v}")
    return "\n".join(lines)


def _estimate_record(req: RunRequest):
    data, categories = read_ratings(req.input_path, req.data_format)
    est = coef.estimate(req.family, data)
    record = {
        "family": est.family.value,
        "n": est.n,
        "R": est.R,
        "kappa": est.value,
        "kappa_U": est.value_U,
        "I_o": est.I_o,
        "I_e": est.I_e,
        "I_eU": est.I_eU,
    }
    if req.data_format == "long":
        record["categories"] = " ".join(f"{label}={i}" for label, i in categories.items())
    return data, est, record


def _variance_record(req: RunRequest) -> dict:
    data, est, record = _estimate_record(req)
    V, VA = family_plugin(req.family, data)
    record["V_stand_in"] = V.value
    record["V_A"] = VA.value
    if est.value_U is None:
        raise DegenerateSampleError("unbiased coefficient undefined on this sample")
    half = Z_95 * math.sqrt(VA.value)
    lo, hi = est.value_U - half, est.value_U + half
    clamped = lo < -1 or hi > 1
    record["wald95_lower"] = max(lo, -1.0)
    record["wald95_upper"] = min(hi, 1.0)
    record["wald95_clamped"] = clamped
    return record


def _oracle_report(Ks, ns, models: int, seed: int) -> tuple[str, float]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    lines = ["K  n  family  max|bias|"]
    for K in Ks:
        for n in ns:
            ps = [rng.dirichlet(np.ones(K * K)).reshape(K, K) for _ in range(models)]
            for family in ("cohen", "scott"):
                b = max(abs(unbiasedness_bias(MultinomialModel(p / p.sum()), n, family)) for p in ps)
                worst = max(worst, b)
                lines.append(f"{K}  {n}  {family:<6}  {b:.3e}")
    lines.append(f"max |bias| = {worst:.3e}")
    return "\n".join(lines), worst


def run(req: RunRequest, workers: int = 1, **opts) -> str:
    """Execute a request and return the report text (raises on error)."""
    if req.command == "estimate":
        return _emit(_estimate_record(req)[2], req.output_format)
    if req.command == "variance":
        return _emit(_variance_record(req), req.output_format)
    if req.command == "crossover":
        n, R = opts["n"], opts.get("R", 2)
        value = coef.crossover_kappa(req.family, n, R)
        return _emit({"family": coef.as_family(req.family).value, "n": n, "R": R, "crossover_kappa": value},
                     req.output_format)
    if req.command == "oracle":
        text, worst = _oracle_report(opts["K"], opts["n"], opts.get("models", 20), req.seed or 0)
        if worst > 1e-10:
            raise ArithmeticError(f"unbiasedness oracle failed: max |bias| {worst:.3e}\n{text}")
        return text
    if req.command == "simulate":
        configs = parse_config(req.config_path)
        if req.seed is not None or req.policy is not None:
            configs = [
                SimConfig(c.scenario, c.N,
                          c.seed if req.seed is None else req.seed,
                          c.degenerate_policy if req.policy is None else req.policy)
                for c in configs
            ]
        report = run_grid(configs, workers=workers)
        if req.output_format == "csv":
            return report.to_csv().rstrip("\n")
        if req.output_format == "json":
            return report.to_json()
        return report.to_table()
    raise InputError(f"unknown command {req.command!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kappavar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--output", choices=("csv", "json", "table"), default="table")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")

    for name in ("estimate", "variance"):
        p = sub.add_parser(name)
        p.add_argument("--input", required=True, type=Path)
        p.add_argument("--format", choices=("matrix", "long"), default="matrix")
        p.add_argument("--family", choices=CLI_FAMILIES, default="cohen")
        common(p)

    p = sub.add_parser("simulate")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--workers", type=int, default=1)
    common(p)

    p = sub.add_parser("crossover")
    p.add_argument("--family", choices=[f.value for f in Family], default="cohen")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--R", type=int, default=2)
    common(p)

    p = sub.add_parser("oracle")
    p.add_argument("--K", type=int, nargs="+", default=[2, 3])
    p.add_argument("--n", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--models", type=int, default=20)
    common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        req = RunRequest(
            command=args.command,
            input_path=getattr(args, "input", None),
            config_path=getattr(args, "config", None),
            output_format=args.output,
            seed=args.seed,
            family=getattr(args, "family", "cohen"),
            data_format=getattr(args, "format", "matrix"),
            policy=getattr(args, "policy", None),
        )
        opts = {k: getattr(args, k) for k in ("n", "R", "K", "models") if hasattr(args, k)}
        text = run(req, workers=getattr(args, "workers", 1), **opts)
    except Exception as exc:  # every failure: message on stderr, nothing on stdout
        print(f"kappavar {args.command}: {exc}", file=sys.stderr)
        return 1
    print(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
