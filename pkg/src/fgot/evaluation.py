"""Alignment quality metrics, pairwise distance matrices and 1-NN classification."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans

from .errors import NumericError, ValidationError
from .filters import FilteredGraph, materialize, parse_filter
from .graph import Graph, PermutationMatrix, laplacian
from .solvers import HardAssignment, SolverSpec

log = logging.getLogger(__name__)

KMEANS_RESTARTS = 20


class Clustering(NamedTuple):
    labels: np.ndarray
    degenerate: bool


def spectral_clustering(g: Graph, k: int, seed=None, return_info: bool = False):
    """k-means on the row-normalized bottom-``k`` Laplacian eigenvectors.

    ``degenerate`` is set when there is no spectral gap after the ``k``-th
    eigenvalue; the embedding is then arbitrary, so contiguous balanced
    blocks are returned instead of k-means labels.
    """
    if not 1 <= k <= g.n:
        raise ValidationError(f"need 1 <= k <= n, got k={k}, n={g.n}")
    w, U = np.linalg.eigh(laplacian(g).matrix)
    emb = U[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)
    degenerate = k < g.n and (w[k] - w[k - 1]) <= 1e-8 * max(1.0, abs(w[-1]))
    if k == 1:
        labels = np.zeros(g.n, dtype=int)
    elif degenerate:
        labels = (np.arange(g.n) * k) // g.n
    else:
        km = KMeans(n_clusters=k, n_init=KMEANS_RESTARTS, random_state=_int_seed(seed))
        labels = km.fit_predict(emb)
    if return_info:
        return Clustering(labels, bool(degenerate))
    return labels


def _int_seed(seed) -> Optional[int]:
    if seed is None or isinstance(seed, (int, np.integer)):
        return None if seed is None else int(seed) % (2 ** 32)
    return int(np.random.default_rng(seed).integers(2 ** 32))


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(a, b) -> float:
    """Mutual information normalized by the arithmetic mean of the two entropies.

    A constant labeling has zero entropy; NMI against it is 0 unless both
    labelings are constant (identical partitions, NMI 1).
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("label arrays must be 1-d of equal length")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1.0)
    ha, hb = _entropy(table.sum(1)), _entropy(table.sum(0))
    if ha == 0 and hb == 0:
        return 1.0
    if ha == 0 or hb == 0:
        return 0.0
    pij = table / table.sum()
    outer = np.outer(pij.sum(1), pij.sum(0))
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / outer[nz])))
    return float(np.clip(mi / ((ha + hb) / 2), 0.0, 1.0))


def _assignment_matrix(hard) -> np.ndarray:
    if isinstance(hard, HardAssignment):
        if not hard.is_permutation:
            raise ValidationError("Frobenius alignment error needs a square assignment")
        return hard.matrix
    if isinstance(hard, PermutationMatrix):
        return hard.matrix
    return np.asarray(hard, dtype=float)


def aligned_frobenius(g1: Graph, g2: Graph, hard) -> float:
    """``||L1 - P L2 P^T||_F`` with ``P[i, j] = 1`` when G1 vertex ``i`` maps to G2 vertex ``j``."""
    if g1.n != g2.n:
        raise ValidationError("Frobenius alignment error is undefined for graphs of different size")
    P = _assignment_matrix(hard)
    if P.shape != (g1.n, g1.n):
        raise ValidationError(f"assignment shape {P.shape} does not match graph size {g1.n}")
    L1, L2 = laplacian(g1).matrix, laplacian(g2).matrix
    return float(np.linalg.norm(L1 - P @ L2 @ P.T))


def community_nmi(g1: Graph, g2: Graph, hard: HardAssignment, k: int, seed=None) -> float:
    """Cluster both graphs, carry G2's labels onto G1's vertices through ``hard``, compare."""
    ss = np.random.SeedSequence(_int_seed(seed))
    s1, s2 = ss.spawn(2)
    lab1 = spectral_clustering(g1, k, np.random.default_rng(s1))
    lab2 = spectral_clustering(g2, k, np.random.default_rng(s2))
    return nmi(lab1, lab2[hard.mapping])


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    values: np.ndarray
    labels: tuple
    failures: tuple = ()


def _pair_task(args):
    i, j, f1, f2, spec, seed = args
    try:
        res = spec.solve(f1, f2, seed)
    except (NumericError, FloatingPointError) as exc:
        log.warning("pair (%d, %d) failed (%s); retrying with halved step", i, j, exc)
        try:
            res = spec.halved().solve(f1, f2, seed)
        except (NumericError, FloatingPointError):
            return i, j, float("nan")
    norm = np.sqrt(f1.gL_sq_trace * f2.gL_sq_trace)
    return i, j, float(res.final_cost / norm) if norm > 0 else float(res.final_cost)


def derive_seed(master: int, *keys) -> int:
    """Child seed of ``master`` addressed by integer or string ``keys``.

    Depends only on the keys, never on scheduling or worker count.
    """
    words = [int(master) % (2 ** 63)]
    for k in keys:
        if isinstance(k, str):
            words.extend(k.encode())
        else:
            words.append(int(k))
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def pair_seed(master: int, i: int, j: int) -> int:
    """Seed for pair ``(i, j)`` that does not depend on scheduling."""
    return int(np.random.SeedSequence([master, i, j]).generate_state(1)[0])


def _run_tasks(fn, tasks, parallelism: int):
    if parallelism > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as ex:
            return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (8 * parallelism))))
    return [fn(t) for t in tasks]


def pair_costs(fgs: Sequence[FilteredGraph], pairs, solver: SolverSpec, seed: int = 0, parallelism: int = 1):
    """Normalized costs for the given index pairs (NaN where the solver failed twice)."""
    tasks = [(i, j, fgs[i], fgs[j], solver, pair_seed(seed, i, j)) for i, j in pairs]
    return [d for _, _, d in _run_tasks(_pair_task, tasks, parallelism)]


def distance_matrix(
    graphs: Sequence[Graph],
    filter,
    solver: SolverSpec,
    parallelism: int = 1,
    seed: int = 0,
    allow_missing: bool = False,
) -> DistanceMatrix:
    """Normalized pairwise alignment costs ``D_ij / sqrt(Tr g^2(L_i) Tr g^2(L_j))``.

    Each unordered pair is solved once and mirrored. A failed pair is
    retried once with a halved step; if it fails again the whole call aborts
    unless ``allow_missing`` (then the entry is NaN).
    """
    if len(graphs) < 2:
        raise ValidationError("need at least two graphs")
    spec = parse_filter(filter)
    fgs: List[FilteredGraph] = [materialize(g, spec) for g in graphs]
    N = len(graphs)
    pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]
    D = np.zeros((N, N))
    failures = []
    for (i, j), d in zip(pairs, pair_costs(fgs, pairs, solver, seed, parallelism)):
        D[i, j] = D[j, i] = d
        if not np.isfinite(d):
            failures.append((i, j))
    if failures and not allow_missing:
        raise NumericError(f"solver failed on pairs {failures}")
    return DistanceMatrix(D, tuple(g.label for g in graphs), tuple(failures))


class LineSearch(NamedTuple):
    best: float
    grid: tuple
    scores: tuple
    pairs: tuple


def line_search_c1(
    graphs: Sequence[Graph],
    filter,
    solver: SolverSpec,
    grid: Sequence[float],
    holdout: float = 0.2,
    seed: int = 0,
    parallelism: int = 1,
) -> LineSearch:
    """Pick ``c1`` from ``grid`` by the mean normalized cost on a random ``holdout`` share of pairs.

    The alignment problem is a minimization, so the constant that reaches
    the lowest costs is the one that optimizes best; no class labels are
    used. Ties go to the smaller constant.
    """
    spec = parse_filter(filter)
    fgs = [materialize(g, spec) for g in graphs]
    N = len(graphs)
    pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]
    rng = np.random.default_rng(derive_seed(seed, "holdout"))
    k = max(1, int(round(holdout * len(pairs))))
    chosen = sorted(rng.choice(len(pairs), size=k, replace=False).tolist())
    sub = [pairs[c] for c in chosen]
    scores = []
    for c1 in grid:
        costs = np.array(pair_costs(fgs, sub, solver.with_c1(float(c1)), seed, parallelism))
        scores.append(float(np.nanmean(costs)) if np.any(np.isfinite(costs)) else float("inf"))
    best = float(grid[int(np.argmin(scores))])
    return LineSearch(best, tuple(float(c) for c in grid), tuple(scores), tuple(sub))


class Classification(NamedTuple):
    accuracy: float
    evaluated: int
    skipped: tuple


def one_nn_classify(dm: DistanceMatrix) -> Classification:
    """Leave-one-out 1-nearest-neighbour accuracy; ties go to the lowest index.

    Rows containing missing (NaN) distances are skipped and reported.
    """
    D = np.asarray(dm.values, dtype=float)
    labels = list(dm.labels)
    if len(set(labels)) < 2:
        raise ValidationError("need at least two classes")
    correct, evaluated, skipped = 0, 0, []
    for i in range(D.shape[0]):
        row = D[i].copy()
        row[i] = np.inf
        if np.any(np.isnan(row)):
            skipped.append(i)
            continue
        nn = int(np.argmin(row))
        correct += labels[nn] == labels[i]
        evaluated += 1
    acc = correct / evaluated if evaluated else float("nan")
    return Classification(acc, evaluated, tuple(skipped))
