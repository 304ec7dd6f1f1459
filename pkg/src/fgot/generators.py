"""Random graph families and perturbations."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .graph import Graph

log = logging.getLogger(__name__)

DEFAULT_ER_P = 0.4
DEFAULT_P_IN = 0.7
DEFAULT_P_OUT = 0.05


def _upper_bernoulli(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = probs.shape[0]
    draws = rng.random((n, n)) < probs
    W = np.triu(draws, 1).astype(float)
    return W + W.T


def erdos_renyi(n: int, p: float = DEFAULT_ER_P, seed=None) -> Graph:
    if not 0 <= p <= 1:
        raise ValidationError(f"edge probability must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    return Graph(_upper_bernoulli(np.full((n, n), p), rng))


@dataclass(frozen=True)
class SbmSpec:
    n: int
    k: int
    p_in: float = DEFAULT_P_IN
    p_out: float = DEFAULT_P_OUT
    sizes: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if not 0 <= self.p_out < self.p_in <= 1:
            raise ValidationError("SBM needs 0 <= p_out < p_in <= 1")
        if not 1 <= self.k <= self.n:
            raise ValidationError("SBM needs 1 <= k <= n")
        if self.sizes is not None and (len(self.sizes) != self.k or sum(self.sizes) != self.n):
            raise ValidationError("community sizes must have k entries summing to n")

    def community_sizes(self) -> Tuple[int, ...]:
        if self.sizes is not None:
            return tuple(self.sizes)
        base, extra = divmod(self.n, self.k)
        return tuple(base + (1 if i < extra else 0) for i in range(self.k))


def sbm(spec: SbmSpec, seed=None) -> Tuple[Graph, np.ndarray]:
    """Stochastic block model graph and its ground-truth community labels."""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(spec.k), spec.community_sizes())
    same = labels[:, None] == labels[None, :]
    probs = np.where(same, spec.p_in, spec.p_out)
    return Graph(_upper_bernoulli(probs, rng)), labels


@dataclass(frozen=True, eq=False)
class FusedGraph:
    graph: Graph
    node_map: np.ndarray
    merges: int
    fraction: float


def fuse_nodes(g: Graph, fraction: float, seed=None, return_map: bool = False):
    """Collapse uniformly chosen edges until ``ceil(fraction * n)`` merges happened.

    Merged vertices take the union of neighbourhoods with parallel-edge
    weights summed; the self-loop from the collapsed edge is dropped. With
    ``return_map`` a :class:`FusedGraph` is returned whose ``node_map[i]`` is
    the fused vertex that original vertex ``i`` ended up in.
    """
    if not 0 <= fraction < 1:
        raise ValidationError("fuse fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    n = g.n
    target = math.ceil(fraction * n - 1e-9)
    W = np.array(g.weights)
    node_map = np.arange(n)
    merges = 0
    while merges < target:
        iu, ju = np.nonzero(np.triu(W, 1))
        if iu.size == 0:
            log.warning("no edges left after %d of %d merges; stopping early", merges, target)
            break
        e = rng.integers(iu.size)
        u, v = int(iu[e]), int(ju[e])  # u < v
        W[u, :] += W[v, :]
        W[:, u] += W[:, v]
        W[u, u] = 0.0
        W = np.delete(np.delete(W, v, axis=0), v, axis=1)
        node_map = np.where(node_map == v, u, node_map)
        node_map = np.where(node_map > v, node_map - 1, node_map)
        merges += 1
    out = Graph(W, label=g.label)
    if return_map:
        return FusedGraph(out, node_map, merges, merges / n)
    return out


def perturb_edges(g: Graph, n_flips: int, seed=None) -> Graph:
    """Toggle ``n_flips`` distinct vertex pairs (add absent edges, remove present ones)."""
    rng = np.random.default_rng(seed)
    n = g.n
    iu, ju = np.triu_indices(n, 1)
    pick = rng.choice(iu.size, size=min(n_flips, iu.size), replace=False)
    W = np.array(g.weights)
    for k in pick:
        a, b = iu[k], ju[k]
        W[a, b] = W[b, a] = 0.0 if W[a, b] > 0 else 1.0
    return Graph(W, label=g.label)


def ring_with_chords(n: int, chords: Sequence[Tuple[int, int]] = ()) -> Graph:
    edges = [(i, (i + 1) % n) for i in range(n)] + list(chords)
    return Graph.from_edges(n, edges)
