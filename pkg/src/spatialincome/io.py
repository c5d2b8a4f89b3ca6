"""File formats and persistence.

All tables are comma-separated text with a header row. Floats are written
with 17 significant digits so that a write/read cycle is lossless. Every file
is written to a temporary sibling and renamed into place.
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .graph import AdjacencyGraph
from .likelihood import BoundaryGrid, GroupedCounts
from .mcmc import PosteriorDraws

__all__ = [
    "atomic_write", "write_json", "read_json", "sha256_file",
    "load_counts", "write_counts", "load_edges", "write_edges", "parse_boundaries",
    "write_table", "read_table", "write_draws", "load_draws", "write_summary", "summary_rows",
    "write_replication",
]


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_table(path, header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    atomic_write(path, buf.getvalue())


def read_table(path):
    """Header and rows (as strings) of a comma-separated table."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file", stage="load", line=1)
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# counts, edges, boundaries
# ---------------------------------------------------------------------------

def load_counts(path, boundaries) -> GroupedCounts:
    """Read a counts table with header ``area_id,c_1,...,c_N``.

    Raises
    ------
    ParseError
        Malformed header or row; the 1-based line number is attached.
    """
    grid = boundaries if isinstance(boundaries, BoundaryGrid) else BoundaryGrid(boundaries)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [(k + 1, r) for k, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: no header", stage="load_counts", line=1)
    line, header = rows[0]
    header = [h.strip() for h in header]
    N = len(header) - 1
    if header[0] != "area_id" or N < 1 or header[1:] != [f"c_{k}" for k in range(1, N + 1)]:
        raise ParseError(f"{path}: header must be area_id,c_1,...,c_N", stage="load_counts", line=line)
    if N != grid.N:
        raise ParseError(f"{path}: {N} count columns but the boundaries define {grid.N} bins",
                         stage="load_counts", line=line)
    ids, counts = [], []
    for line, r in rows[1:]:
        if len(r) != N + 1:
            raise ParseError(f"{path}: line {line} has {len(r)} fields, expected {N + 1}",
                             stage="load_counts", line=line)
        try:
            vals = [int(c.strip()) for c in r[1:]]
        except ValueError:
            raise ParseError(f"{path}: line {line} has a non-integer count", stage="load_counts", line=line) from None
        if min(vals) < 0:
            raise ParseError(f"{path}: line {line} has a negative count", stage="load_counts", line=line,
                             areas=[r[0].strip()])
        ids.append(r[0].strip())
        counts.append(vals)
    if len(set(ids)) != len(ids):
        raise ParseError(f"{path}: duplicate area_id", stage="load_counts")
    return GroupedCounts(np.array(counts, dtype=np.int64).reshape(-1, N), grid, np.array(ids, dtype=object))


def write_counts(path, data: GroupedCounts):
    header = ["area_id"] + [f"c_{k}" for k in range(1, data.N + 1)]
    write_table(path, header, ([str(a)] + list(c) for a, c in zip(data.area_ids, data.counts)))


def load_edges(path, m: int) -> AdjacencyGraph:
    """Read an edge list of 0-based area indices, two per line; a header line is optional."""
    edges = []
    with open(path, newline="") as fh:
        for line, r in enumerate(csv.reader(fh), start=1):
            if not r or not any(c.strip() for c in r):
                continue
            if len(r) != 2:
                raise ParseError(f"{path}: line {line} must have two fields", stage="load_edges", line=line)
            try:
                edges.append((int(r[0]), int(r[1])))
            except ValueError:
                if line == 1 and not edges:
                    continue
                raise ParseError(f"{path}: line {line} is not a pair of integers", stage="load_edges",
                                 line=line) from None
    return AdjacencyGraph(m, edges)


def write_edges(path, graph: AdjacencyGraph):
    write_table(path, ["i", "j"], graph.edges.tolist())


def parse_boundaries(spec) -> BoundaryGrid:
    """Interior boundaries from a sequence, a comma-separated string or a file holding one."""
    if isinstance(spec, BoundaryGrid):
        return spec
    if isinstance(spec, (list, tuple, np.ndarray)):
        return BoundaryGrid(tuple(float(v) for v in spec))
    text = str(spec)
    if os.path.exists(text):
        text = Path(text).read_text()
    try:
        vals = [float(v) for v in text.replace("\n", ",").split(",") if v.strip()]
    except ValueError:
        raise ParseError(f"cannot parse boundaries {spec!r}", stage="boundaries") from None
    return BoundaryGrid(tuple(vals))


# ---------------------------------------------------------------------------
# posterior draws
# ---------------------------------------------------------------------------

def write_draws(directory, draws: PosteriorDraws):
    """One table per parameter block plus ``meta.json``."""
    d = Path(directory)
    D, m, p = draws.u.shape
    it = np.repeat(draws.iteration, m)
    area = np.tile(np.arange(m), D)
    flat = draws.u.reshape(D * m, p)
    write_table(d / "u.csv", ["iteration", "area"] + [f"u_{k}" for k in range(1, p + 1)],
                ([a, b, *row] for a, b, row in zip(it, area, flat.tolist())))
    nl = draws.lam.shape[1]
    header = (["iteration"] + [f"mu_{k}" for k in range(1, p + 1)] + [f"tau_{k}" for k in range(1, p + 1)]
              + ([f"lambda_{k}" for k in range(1, nl + 1)] if nl > 1 else ["lambda"]))
    write_table(d / "hyper.csv", header,
                ([t, *a, *b, *c] for t, a, b, c in zip(draws.iteration, draws.mu.tolist(), draws.tau.tolist(),
                                                       draws.lam.tolist())))
    if draws.scales is not None:
        write_table(d / "scales.csv", ["iteration"] + [f"s_{e}" for e in range(draws.scales.shape[1])],
                    ([t, *s] for t, s in zip(draws.iteration, draws.scales.tolist())))
    if draws.diagnostics:
        keys = sorted({k for rec in draws.diagnostics for k in rec} - {"iteration"})
        write_table(d / "diagnostics.csv", ["iteration"] + keys,
                    ([rec["iteration"]] + [rec.get(k, float("nan")) for k in keys] for rec in draws.diagnostics))
    write_json(d / "meta.json", {
        "prior": draws.prior, "family": draws.family, "n_draws": D, "m": m, "p": p,
        "sampled": [bool(v) for v in draws.sampled], "acceptance": draws.acceptance, "flags": draws.flags,
    })


def load_draws(directory) -> PosteriorDraws:
    d = Path(directory)
    meta = read_json(d / "meta.json")
    D, m, p = meta["n_draws"], meta["m"], meta["p"]
    _, rows = read_table(d / "u.csv")
    arr = np.array(rows, dtype=float).reshape(D, m, p + 2)
    u = arr[..., 2:]
    header, rows = read_table(d / "hyper.csv")
    h = np.array(rows, dtype=float).reshape(D, len(header))
    iteration = h[:, 0].astype(np.int64)
    scales = None
    if (d / "scales.csv").exists():
        _, rows = read_table(d / "scales.csv")
        scales = np.array(rows, dtype=float).reshape(D, -1)[:, 1:]
    diagnostics = []
    if (d / "diagnostics.csv").exists():
        keys, rows = read_table(d / "diagnostics.csv")
        for r in rows:
            rec = {k: float(v) for k, v in zip(keys, r)}
            rec["iteration"] = int(rec["iteration"])
            diagnostics.append(rec)
    return PosteriorDraws(
        prior=meta["prior"], family=meta["family"], u=u, mu=h[:, 1:1 + p], tau=h[:, 1 + p:1 + 2 * p],
        lam=h[:, 1 + 2 * p:], iteration=iteration, sampled=np.array(meta["sampled"], dtype=bool),
        acceptance=meta["acceptance"], scales=scales, diagnostics=diagnostics, flags=meta["flags"],
    )


# ---------------------------------------------------------------------------
# summaries and simulation artifacts
# ---------------------------------------------------------------------------

def summary_header(p: int):
    cols = ["area_id", "sampled", "income_mean", "income_lower", "income_upper", "gini_mean", "gini_lower",
            "gini_upper", "excluded_draws"]
    for k in range(1, p + 1):
        cols += [f"u{k}_mean", f"u{k}_lower", f"u{k}_upper"]
    return cols


def summary_rows(summary, sampled):
    for i in range(summary.m):
        row = [str(summary.area_ids[i]), int(bool(sampled[i])), *summary.income[i], *summary.gini[i],
               int(summary.excluded[i])]
        for k in range(summary.u_mean.shape[1]):
            row += [summary.u_mean[i, k], summary.u_lower[i, k], summary.u_upper[i, k]]
        yield row


def write_summary(path, summary, sampled):
    write_table(path, summary_header(summary.u_mean.shape[1]), summary_rows(summary, sampled))


def write_replication(directory, ds, estimates: dict, intervals: dict):
    d = Path(directory)
    write_counts(d / "counts.csv", ds.data)
    write_edges(d / "edges.csv", ds.graph)
    write_table(d / "truth.csv", ["area", "x", "y", "n", "u_1", "u_2"],
                ([i, *ds.locations[i], ds.n[i], *ds.truth[i]] for i in range(ds.scenario.m)))
    for method, est in estimates.items():
        itv = intervals[method]
        write_table(d / f"estimates_{method}.csv", ["area", "u_1", "u_2", "lower_1", "upper_1", "lower_2", "upper_2"],
                    ([i, *est[i], *itv[i, 0], *itv[i, 1]] for i in range(len(est))))
