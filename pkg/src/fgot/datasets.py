"""Graph collection loaders (edge lists, TUDataset archives) and result writers."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .graph import Graph

log = logging.getLogger(__name__)


class ParseError(ValidationError):
    """Malformed input file; the message names the file and line."""

    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = str(path)
        self.lineno = lineno


def _sha256(paths: Iterable[Path]) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _parse_id(tok: str, path, lineno: int) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise ParseError(path, lineno, f"vertex id {tok!r} is not an integer") from None
    if v < 0:
        raise ParseError(path, lineno, f"negative vertex id {v}")
    return v


def load_edge_list(path, label=None) -> Graph:
    """Read ``u v [w]`` lines (0-indexed ids, default weight 1).

    ``#`` starts a comment. An ``n <count>`` line fixes the vertex count,
    otherwise it is the largest id plus one. Repeated edges (in either
    direction) have their weights summed, with a warning.
    """
    path = Path(path)
    n_header: Optional[int] = None
    weights: Dict[Tuple[int, int], float] = {}
    first_line: Dict[Tuple[int, int], int] = {}
    duplicates = 0
    max_id = -1
    with path.open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            if toks[0] == "n":
                if len(toks) != 2:
                    raise ParseError(path, lineno, "header must read 'n <count>'")
                if n_header is not None:
                    raise ParseError(path, lineno, "repeated 'n' header")
                n_header = _parse_id(toks[1], path, lineno)
                if n_header < 1:
                    raise ParseError(path, lineno, "vertex count must be positive")
                continue
            if len(toks) not in (2, 3):
                raise ParseError(path, lineno, f"expected 'u v [w]', got {len(toks)} fields")
            u, v = _parse_id(toks[0], path, lineno), _parse_id(toks[1], path, lineno)
            w = 1.0
            if len(toks) == 3:
                try:
                    w = float(toks[2])
                except ValueError:
                    raise ParseError(path, lineno, f"weight {toks[2]!r} is not a number") from None
                if not (math.isfinite(w) and w > 0):
                    raise ParseError(path, lineno, f"weight must be positive and finite, got {toks[2]}")
            if u == v:
                raise ParseError(path, lineno, f"self-loop on vertex {u}")
            key = (min(u, v), max(u, v))
            if key in weights:
                duplicates += 1
                log.warning("%s:%d: duplicate edge %s (first on line %d); weights summed",
                            path, lineno, key, first_line[key])
                weights[key] += w
            else:
                weights[key] = w
                first_line[key] = lineno
            max_id = max(max_id, u, v)
    if n_header is not None:
        if max_id >= n_header:
            raise ParseError(path, first_line[max(weights, key=lambda k: k[1])],
                             f"vertex id {max_id} exceeds header count n={n_header}")
        n = n_header
    else:
        n = max_id + 1
    if n < 1:
        raise ValidationError(f"{path}: no edges and no 'n' header; cannot infer the vertex count")
    W = np.zeros((n, n))
    for (u, v), w in weights.items():
        W[u, v] = W[v, u] = w
    return Graph(W, label=label)


@dataclass(frozen=True, eq=False)
class GraphCollection:
    graphs: Tuple[Graph, ...]
    name: str
    provenance: str = ""
    checksum: str = ""

    def __post_init__(self):
        if not self.graphs:
            raise ValidationError("graph collection is empty")
        object.__setattr__(self, "graphs", tuple(self.graphs))

    def __len__(self):
        return len(self.graphs)

    @property
    def labels(self) -> list:
        return [g.label for g in self.graphs]

    @property
    def label_set(self) -> list:
        return sorted(set(self.labels), key=repr)

    def mean_nodes(self) -> float:
        return float(np.mean([g.n for g in self.graphs]))


def _read_int_lines(path: Path, sep: Optional[str] = None) -> List[Tuple[int, List[int]]]:
    out = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            toks = [t for t in (line.split(sep) if sep else line.split()) if t.strip()]
            try:
                out.append((lineno, [int(float(t)) for t in toks]))
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric entry in {line!r}") from None
    return out


def load_tudataset(directory, name: str) -> GraphCollection:
    """Load a TUDataset-format benchmark (node/edge attribute files are ignored).

    ``<name>_A.txt`` holds 1-indexed ``i, j`` node pairs over all graphs,
    ``<name>_graph_indicator.txt`` the 1-indexed graph of each node and
    ``<name>_graph_labels.txt`` one class label per graph. Edges are
    symmetrized with unit weight; self-loops are dropped with a warning.
    """
    d = Path(directory)
    fa, fi, fl = (d / f"{name}_{suffix}.txt" for suffix in ("A", "graph_indicator", "graph_labels"))
    for f in (fa, fi, fl):
        if not f.is_file():
            raise ValidationError(f"missing TUDataset file {f}")
    indicator = np.array([vals[0] for _, vals in _read_int_lines(fi)], dtype=np.int64)
    labels = [vals[0] for _, vals in _read_int_lines(fl)]
    n_graphs = len(labels)
    if indicator.size == 0:
        raise ValidationError(f"{fi}: no nodes")
    if indicator.min() < 1 or indicator.max() > n_graphs:
        bad = int(np.nonzero((indicator < 1) | (indicator > n_graphs))[0][0])
        raise ParseError(fi, bad + 1, f"graph id {indicator[bad]} outside 1..{n_graphs}")
    if np.any(np.diff(indicator) < 0):
        bad = int(np.nonzero(np.diff(indicator) < 0)[0][0]) + 1
        raise ParseError(fi, bad + 1, "graph indicator must be non-decreasing")
    sizes = np.bincount(indicator - 1, minlength=n_graphs)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    mats = [np.zeros((s, s)) for s in sizes]
    loops = 0
    for lineno, vals in _read_int_lines(fa, sep=","):
        if len(vals) != 2:
            raise ParseError(fa, lineno, f"expected 'i, j', got {len(vals)} fields")
        i, j = vals
        if not (1 <= i <= indicator.size and 1 <= j <= indicator.size):
            raise ParseError(fa, lineno, f"edge ({i}, {j}) references a node outside 1..{indicator.size}")
        gi, gj = indicator[i - 1], indicator[j - 1]
        if gi != gj:
            raise ParseError(fa, lineno, f"edge ({i}, {j}) joins graph {gi} and graph {gj}")
        if i == j:
            loops += 1
            continue
        k = gi - 1
        a, b = i - 1 - offsets[k], j - 1 - offsets[k]
        mats[k][a, b] = mats[k][b, a] = 1.0
    if loops:
        log.warning("%s: dropped %d self-loops", fa, loops)
    graphs = tuple(Graph(W, label=lab) for W, lab in zip(mats, labels))
    return GraphCollection(graphs, name, provenance=str(d.resolve()), checksum=_sha256((fa, fi, fl)))


def sample_collection(c: GraphCollection, k: int, seed=None) -> GraphCollection:
    """Sample ``k`` graphs without replacement.

    Stratified by label (proportional allocation, largest remainders) when
    every class has at least two members; ``k == len(c)`` returns ``c``
    unchanged. Sampled graphs keep their original relative order.
    """
    N = len(c)
    if not 1 <= k <= N:
        raise ValidationError(f"sample size must be in 1..{N}, got {k}")
    if k == N:
        return c
    rng = np.random.default_rng(seed)
    by_label = defaultdict(list)
    for i, lab in enumerate(c.labels):
        by_label[lab].append(i)
    classes = sorted(by_label, key=repr)
    if len(classes) > 1 and all(len(by_label[l]) >= 2 for l in classes):
        quota = np.array([k * len(by_label[l]) / N for l in classes])
        take = np.floor(quota).astype(int)
        if k >= len(classes):
            take = np.maximum(take, 1)
        short = k - take.sum()
        order = np.argsort(-(quota - np.floor(quota)), kind="stable")
        for idx in order:
            if short <= 0:
                break
            if take[idx] < len(by_label[classes[idx]]):
                take[idx] += 1
                short -= 1
        while take.sum() > k:
            take[int(np.argmax(take))] -= 1
        picked = []
        for lab, t in zip(classes, take):
            if t > 0:
                picked.extend(rng.choice(by_label[lab], size=int(t), replace=False).tolist())
    else:
        picked = rng.choice(N, size=k, replace=False).tolist()
    picked = sorted(picked)
    return GraphCollection(
        tuple(c.graphs[i] for i in picked), c.name,
        provenance=f"{c.provenance} [sample k={k}]", checksum=c.checksum,
    )


def _format_value(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _jsonable(v):
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def format_results(rows: Sequence[Mapping], fmt: str = "csv", metadata: Optional[Mapping] = None,
                   columns: Optional[Sequence[str]] = None) -> str:
    """Render rows as CSV or JSON lines, preceded by ``# key: value`` metadata lines."""
    if fmt not in ("csv", "jsonl"):
        raise ValidationError(f"unknown result format {fmt!r}")
    cols = list(columns) if columns is not None else (list(rows[0].keys()) if rows else [])
    for r in rows:
        if list(r.keys()) != cols:
            raise ValidationError(f"rows do not share a schema: {list(r.keys())} vs {cols}")
    buf = io.StringIO()
    for key, val in (metadata or {}).items():
        text = str(val).replace("\n", " ")
        buf.write(f"# {key}: {text}\n")
    if fmt == "csv":
        w = csv.writer(buf, lineterminator="\n")
        if cols:
            w.writerow(cols)
        for r in rows:
            w.writerow([_format_value(r[c]) for c in cols])
    else:
        for r in rows:
            buf.write(json.dumps({c: _jsonable(r[c]) for c in cols}) + "\n")
    return buf.getvalue()


def write_results(rows: Sequence[Mapping], path, fmt: str = "csv", metadata: Optional[Mapping] = None,
                  columns: Optional[Sequence[str]] = None) -> None:
    """Write result rows; ``path='-'`` writes to standard output."""
    text = format_results(rows, fmt, metadata, columns)
    if str(path) == "-":
        import sys

        sys.stdout.write(text)
        return
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ValidationError(f"cannot write results to {path}: {exc}") from exc


def _parse_scalar(s: str):
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def read_results(path) -> Tuple[Dict[str, str], List[dict]]:
    """Inverse of :func:`write_results` (format inferred from the extension)."""
    meta, body = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# ") and not body:
                key, _, val = line[2:].rstrip("\n").partition(": ")
                meta[key] = val
            else:
                body.append(line)
    if os.fspath(path).endswith(".jsonl"):
        return meta, [json.loads(l) for l in body if l.strip()]
    reader = csv.DictReader(body)
    return meta, [{k: _parse_scalar(v) for k, v in r.items()} for r in reader]
