"""Filter graph distances between two filtered graphs.

Two quantities are provided. The exact 2-Wasserstein distance between the
zero-mean Gaussians ``N(0, g1^2)`` and ``N(0, g2'^2)``::

    Tr g1^2 + Tr g2^2 - 2 Tr sqrt(g1 g2'^2 g1)

and the square-root-free upper bound used for alignment::

    Tr g1^2 + Tr g2^2 - 2 <g1 P g2, P>

Orientation: in the surrogate, ``P`` is a ``|V1| x |V2|`` coupling whose
entry ``(i, j)`` links vertex ``i`` of the first graph to vertex ``j`` of the
second; it implicitly compares ``g1`` with ``P g2 P^T``. The exact distance
takes its permutation argument in the transposed orientation: ``Q`` aligns
the second graph as ``Q^T L2 Q``. Hence for a hard coupling ``P``,
``exact_distance(f1, f2, P.T) <= surrogate_cost(f1, f2, P)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .errors import NumericError, ValidationError
from .filters import FilteredGraph
from .graph import PermutationMatrix, as_matrix

PSD_FAIL_TOL = 1e-6
BRUTE_FORCE_MAX_N = 8


def _check_square_pair(f1: FilteredGraph, f2: FilteredGraph, P):
    if f1.n != f2.n:
        raise ValidationError(f"exact distance needs graphs of equal size, got {f1.n} and {f2.n}")
    if P.shape != (f1.n, f1.n):
        raise ValidationError(f"permutation shape {P.shape} does not match graph size {f1.n}")


def _check_coupling(f1: FilteredGraph, f2: FilteredGraph, P: np.ndarray):
    if P.shape != (f1.n, f2.n):
        raise ValidationError(f"coupling shape {P.shape} does not match graphs ({f1.n}, {f2.n})")


def trace_sqrt_psd(M: np.ndarray) -> float:
    """``Tr sqrt(M)`` for a symmetric PSD matrix; small negative eigenvalues clamp to 0."""
    M = (M + M.T) / 2
    w = np.linalg.eigvalsh(M)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w[0] < -PSD_FAIL_TOL * scale:
        raise NumericError(f"matrix under square root is not PSD (min eigenvalue {w[0]:.3g})")
    return float(np.sum(np.sqrt(np.maximum(w, 0.0))))


def exact_distance(f1: FilteredGraph, f2: FilteredGraph, P=None) -> float:
    """Exact squared 2-Wasserstein distance with the second graph aligned as ``P^T L2 P``.

    ``P`` defaults to the identity. By the filter/permutation commutation
    ``g(P^T L2 P) = P^T g(L2) P`` no re-decomposition is needed.
    """
    Q = np.eye(f1.n) if P is None else as_matrix(P)
    _check_square_pair(f1, f2, Q)
    g1 = f1.gL
    g2a = Q.T @ f2.gL @ Q
    # Tr sqrt(A A^T) is the sum of singular values of A; taking them from an
    # SVD keeps full precision near zero, where sqrt(eigvalsh(A A^T)) loses half
    cross = float(np.sum(np.linalg.svd(g1 @ g2a, compute_uv=False)))
    return f1.gL_sq_trace + f2.gL_sq_trace - 2.0 * cross


def surrogate_cost(f1: FilteredGraph, f2: FilteredGraph, P) -> float:
    """The upper-bound alignment cost evaluated at a (possibly rectangular) ``P`` as given."""
    P = as_matrix(P)
    _check_coupling(f1, f2, P)
    cross = float(np.sum((f1.gL @ P @ f2.gL) * P))
    return f1.gL_sq_trace + f2.gL_sq_trace - 2.0 * cross


def surrogate_gradient(f1: FilteredGraph, f2: FilteredGraph, P) -> np.ndarray:
    """Gradient of :func:`surrogate_cost` w.r.t. ``P``: ``-4 g1 P g2``."""
    P = as_matrix(P)
    _check_coupling(f1, f2, P)
    return -4.0 * (f1.gL @ P @ f2.gL)


def coupling_scale(n1: int, n2: int) -> float:
    """Factor mapping a coupling with marginals ``1/n1, 1/n2`` onto permutation scale."""
    return float(np.sqrt(n1 * n2))


def scaled_surrogate_cost(f1: FilteredGraph, f2: FilteredGraph, C: np.ndarray) -> float:
    return surrogate_cost(f1, f2, coupling_scale(f1.n, f2.n) * np.asarray(C))


def scaled_surrogate_gradient(f1: FilteredGraph, f2: FilteredGraph, C: np.ndarray) -> np.ndarray:
    """Gradient of :func:`scaled_surrogate_cost` w.r.t. the unscaled coupling."""
    s = coupling_scale(f1.n, f2.n)
    return s * surrogate_gradient(f1, f2, s * np.asarray(C))


@dataclass(frozen=True)
class DistanceReport:
    surrogate: float
    trace_terms: Tuple[float, float]
    cross_term: float
    exact: Optional[float] = None


def distance_report(f1: FilteredGraph, f2: FilteredGraph, P) -> DistanceReport:
    """Surrogate at ``P`` (coupling orientation) plus the exact distance when ``P`` is a square permutation."""
    M = as_matrix(P)
    _check_coupling(f1, f2, M)
    cross = float(np.sum((f1.gL @ M @ f2.gL) * M))
    exact = None
    is_perm = (
        M.shape[0] == M.shape[1]
        and np.all((M == 0) | (M == 1))
        and np.all(M.sum(0) == 1)
        and np.all(M.sum(1) == 1)
    )
    if is_perm:
        exact = exact_distance(f1, f2, M.T)
    return DistanceReport(
        surrogate=f1.gL_sq_trace + f2.gL_sq_trace - 2.0 * cross,
        trace_terms=(f1.gL_sq_trace, f2.gL_sq_trace),
        cross_term=cross,
        exact=exact,
    )


class BruteForceResult(NamedTuple):
    """Exhaustive alignment optimum.

    ``perm`` is in coupling orientation (``perm L2 perm^T`` is compared with
    ``L1``), so ``exact == exact_distance(f1, f2, perm.T)``.
    """

    perm: PermutationMatrix
    exact: float
    surrogate_perm: PermutationMatrix
    surrogate: float


def brute_force_align(f1: FilteredGraph, f2: FilteredGraph) -> BruteForceResult:
    n = f1.n
    if f2.n != n:
        raise ValidationError("brute-force alignment needs graphs of equal size")
    if n > BRUTE_FORCE_MAX_N:
        raise ValidationError(f"brute-force alignment limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    g1, g2 = f1.gL, f2.gL
    # g2 expressed in G1's ordering for every candidate: (P g2 P^T)[i, k] = g2[p_i, p_k]
    g2p = g2[perms[:, :, None], perms[:, None, :]]
    cross_sur = np.einsum("ik,pki->p", g1, g2p)
    cross_exact = np.linalg.svd(g1[None] @ g2p, compute_uv=False).sum(axis=1)
    base = f1.gL_sq_trace + f2.gL_sq_trace
    exact = base - 2.0 * cross_exact
    sur = base - 2.0 * cross_sur
    ie, is_ = int(np.argmin(exact)), int(np.argmin(sur))
    return BruteForceResult(
        PermutationMatrix(perms[ie]), float(exact[ie]), PermutationMatrix(perms[is_]), float(sur[is_])
    )
