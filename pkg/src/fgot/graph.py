"""Dense undirected weighted graphs, Laplacians and vertex permutations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional

import numpy as np

from .errors import ValidationError

SYMMETRY_TOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected weighted graph stored as a dense adjacency matrix.

    ``weights`` is validated on construction: square, finite, nonnegative,
    symmetric within ``SYMMETRY_TOL`` (then symmetrized exactly) and with a
    zero diagonal.
    """

    weights: np.ndarray
    label: Optional[Hashable] = None

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValidationError(f"adjacency must be square, got shape {W.shape}")
        if W.shape[0] < 1:
            raise ValidationError("graph needs at least one vertex")
        if not np.all(np.isfinite(W)):
            raise ValidationError("adjacency contains non-finite entries")
        asym = np.max(np.abs(W - W.T))
        if asym > SYMMETRY_TOL:
            raise ValidationError(f"adjacency not symmetric (max |W - W^T| = {asym:.3g})")
        if np.min(W) < 0:
            raise ValidationError("adjacency has negative weights")
        if np.any(np.diag(W) != 0):
            raise ValidationError("self-loops are not supported (nonzero diagonal)")
        object.__setattr__(self, "weights", _frozen((W + W.T) / 2))

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.weights, 1)))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable, label=None) -> "Graph":
        """Build from ``(u, v)`` or ``(u, v, w)`` tuples; parallel edges add up."""
        W = np.zeros((n, n))
        for e in edges:
            u, v = int(e[0]), int(e[1])
            w = float(e[2]) if len(e) > 2 else 1.0
            if u == v:
                raise ValidationError(f"self-loop on vertex {u}")
            W[u, v] += w
            W[v, u] += w
        return cls(W, label=label)

    def permuted(self, perm: "PermutationMatrix") -> "Graph":
        """Graph whose adjacency is ``P W P^T``."""
        P = perm.matrix
        return Graph(P @ self.weights @ P.T, label=self.label)

    def with_label(self, label) -> "Graph":
        return Graph(self.weights, label=label)

    def __repr__(self):
        return f"Graph(n={self.n}, edges={self.n_edges}, label={self.label!r})"


@dataclass(frozen=True, eq=False)
class Laplacian:
    """Combinatorial Laplacian ``L = D - W``."""

    matrix: np.ndarray
    degree: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def laplacian(g: Graph) -> Laplacian:
    W = g.weights
    deg = W.sum(axis=1)
    return Laplacian(_frozen(np.diag(deg) - W), _frozen(deg))


@dataclass(frozen=True, eq=False)
class PermutationMatrix:
    """A bijection on ``{0..n-1}``; as a matrix ``P[i, perm[i]] = 1``.

    When used to align two graphs, row ``i`` is a vertex of the first graph
    and ``perm[i]`` the vertex of the second graph it is matched to, so
    ``P L2 P^T`` expresses the second graph in the first graph's ordering.
    """

    perm: np.ndarray = field()

    def __post_init__(self):
        p = np.asarray(self.perm)
        if p.ndim != 1 or p.size < 1:
            raise ValidationError("permutation must be a nonempty 1-d index array")
        if not np.issubdtype(p.dtype, np.integer):
            if not np.all(p == np.round(p)):
                raise ValidationError("permutation entries must be integers")
            p = p.astype(int)
        if not np.array_equal(np.sort(p), np.arange(p.size)):
            raise ValidationError(f"not a bijection on 0..{p.size - 1}: {p.tolist()}")
        p = np.array(p, dtype=np.intp)
        p.setflags(write=False)
        object.__setattr__(self, "perm", p)

    @property
    def n(self) -> int:
        return self.perm.size

    @property
    def matrix(self) -> np.ndarray:
        P = np.zeros((self.n, self.n))
        P[np.arange(self.n), self.perm] = 1.0
        return P

    @property
    def T(self) -> "PermutationMatrix":
        return self.inverse()

    def inverse(self) -> "PermutationMatrix":
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.n)
        return PermutationMatrix(inv)

    def compose(self, other: "PermutationMatrix") -> "PermutationMatrix":
        """Matrix product ``self.matrix @ other.matrix``."""
        return PermutationMatrix(other.perm[self.perm])

    @classmethod
    def identity(cls, n: int) -> "PermutationMatrix":
        return cls(np.arange(n))

    @classmethod
    def from_matrix(cls, P) -> "PermutationMatrix":
        P = np.asarray(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValidationError("permutation matrix must be square")
        if not (np.all((P == 0) | (P == 1)) and np.all(P.sum(0) == 1) and np.all(P.sum(1) == 1)):
            raise ValidationError("matrix is not a 0/1 permutation matrix")
        return cls(np.argmax(P, axis=1))

    def __eq__(self, other):
        return isinstance(other, PermutationMatrix) and np.array_equal(self.perm, other.perm)

    def __hash__(self):
        return hash(self.perm.tobytes())

    def __repr__(self):
        return f"PermutationMatrix({self.perm.tolist()})"


def as_matrix(P) -> np.ndarray:
    if isinstance(P, PermutationMatrix):
        return P.matrix
    return np.asarray(P, dtype=float)


def apply_permutation(L: Laplacian, P) -> Laplacian:
    """Return ``P L P^T``; the spectrum is unchanged."""
    M = as_matrix(P)
    if M.shape != L.matrix.shape:
        raise ValidationError(f"permutation of size {M.shape} does not match Laplacian {L.matrix.shape}")
    return Laplacian(_frozen(M @ L.matrix @ M.T), _frozen(M @ L.degree))


def random_permutation(n: int, seed=None) -> PermutationMatrix:
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return PermutationMatrix(rng.permutation(n))
