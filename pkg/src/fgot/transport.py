"""Log-domain Sinkhorn projection onto the uniform-marginal coupling polytope.

The polytope holds nonnegative ``n x m`` matrices whose rows sum to ``1/n``
and columns to ``1/m``. All routines accept a trailing ``(n, m)`` shape with
optional leading batch dimensions.

Reverse-mode derivatives are obtained by replaying the exact sequence of
row/column log-normalizations executed in the forward pass, so value and
gradient agree at any finite iteration count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
from numba import njit

from .errors import NumericError, ValidationError

LOG_FLOOR = 1e-30


@dataclass(frozen=True)
class SinkhornConfig:
    tau: float = 1.0
    max_iters: int = 50
    tol: float = 1e-9

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError("sinkhorn temperature tau must be positive")
        if self.max_iters < 1:
            raise ValidationError("sinkhorn max_iters must be >= 1")

    def with_iters(self, max_iters: int) -> "SinkhornConfig":
        return SinkhornConfig(self.tau, max_iters, self.tol)


@dataclass(frozen=True, eq=False)
class Coupling:
    matrix: np.ndarray
    iterations: int = 0

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def row_target(self) -> float:
        return 1.0 / self.matrix.shape[-2]

    @property
    def col_target(self) -> float:
        return 1.0 / self.matrix.shape[-1]

    def marginal_violation(self) -> float:
        M = self.matrix
        r = np.abs(M.sum(axis=-1) - self.row_target).max()
        c = np.abs(M.sum(axis=-2) - self.col_target).max()
        return float(max(r, c))


@njit(cache=True)
def _sinkhorn_kernel(logK, max_iters, tol, record):
    B, n, m = logK.shape
    log_a, log_b = -np.log(n), -np.log(m)
    X = logK.copy()
    tape = np.empty((B, 2 * max_iters if record else 0, n, m))
    iters = np.zeros(B, dtype=np.int64)
    finite = True
    r = np.empty(n)
    c = np.empty(m)
    for b in range(B):
        it = 0
        while True:
            for i in range(n):
                mx = X[b, i, 0]
                for j in range(1, m):
                    if X[b, i, j] > mx:
                        mx = X[b, i, j]
                acc = 0.0
                for j in range(m):
                    acc += np.exp(X[b, i, j] - mx)
                r[i] = mx + np.log(acc)
            if it > 0:
                viol = 0.0
                for i in range(n):
                    v = abs(np.exp(r[i]) - 1.0 / n)
                    if v > viol:
                        viol = v
                if not np.isfinite(viol):
                    finite = False
                    break
                if viol < tol or it == max_iters:
                    break
            for i in range(n):
                for j in range(m):
                    X[b, i, j] += log_a - r[i]
            if record:
                tape[b, 2 * it] = X[b]
            for j in range(m):
                mx = X[b, 0, j]
                for i in range(1, n):
                    if X[b, i, j] > mx:
                        mx = X[b, i, j]
                acc = 0.0
                for i in range(n):
                    acc += np.exp(X[b, i, j] - mx)
                c[j] = mx + np.log(acc)
            for i in range(n):
                for j in range(m):
                    X[b, i, j] += log_b - c[j]
            if record:
                tape[b, 2 * it + 1] = X[b]
            it += 1
        iters[b] = it
    return X, tape, iters, finite


@njit(cache=True)
def _pullback_kernel(tape, iters, dX):
    B, n, m = dX.shape
    out = dX.copy()
    r = np.empty(n)
    c = np.empty(m)
    for b in range(B):
        for k in range(2 * iters[b] - 1, -1, -1):
            if k % 2 == 1:
                for j in range(m):
                    c[j] = 0.0
                    for i in range(n):
                        c[j] += out[b, i, j]
                for i in range(n):
                    for j in range(m):
                        out[b, i, j] -= m * np.exp(tape[b, k, i, j]) * c[j]
            else:
                for i in range(n):
                    r[i] = 0.0
                    for j in range(m):
                        r[i] += out[b, i, j]
                for i in range(n):
                    for j in range(m):
                        out[b, i, j] -= n * np.exp(tape[b, k, i, j]) * r[i]
    return out


class _Tape(NamedTuple):
    steps: np.ndarray
    iters: np.ndarray
    shape: tuple


def _normalize(logK: np.ndarray, cfg: SinkhornConfig, record: bool):
    """Alternate row/column log-normalizations; optionally tape each step's output.

    Each batch element stops on its own once the row residual (columns are
    exact after a column step) drops below ``cfg.tol``. Returns the log
    coupling, the tape and the largest iteration count.
    """
    shape = logK.shape
    X3 = np.ascontiguousarray(logK, dtype=float).reshape((-1,) + shape[-2:])
    X, steps, iters, finite = _sinkhorn_kernel(X3, cfg.max_iters, cfg.tol, record)
    if not finite or not np.all(np.isfinite(X)):
        raise NumericError("non-finite values in Sinkhorn iterations")
    return X.reshape(shape), _Tape(steps, iters, shape), int(iters.max())


def _pullback(tape: _Tape, dX: np.ndarray) -> np.ndarray:
    """Reverse through the taped normalizations.

    A step ``Y = X - lse(X) + c`` along an axis has Jacobian-transpose
    ``dX = dY - softmax(X) * sum(dY)``, and ``softmax(X) = exp(Y - c)``.
    """
    d3 = np.ascontiguousarray(dX, dtype=float).reshape(tape.steps.shape[:1] + tape.shape[-2:])
    return _pullback_kernel(tape.steps, tape.iters, d3).reshape(tape.shape)


def _check_finite(a: np.ndarray, what: str):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite entries in {what}")


def sinkhorn(cost, cfg: SinkhornConfig = SinkhornConfig()) -> Coupling:
    """Entropic coupling ``diag(u) exp(-cost/tau) diag(v)`` with uniform marginals."""
    cost = np.asarray(cost, dtype=float)
    _check_finite(cost, "cost matrix")
    X, _, it = _normalize(-cost / cfg.tau, cfg, record=False)
    return Coupling(np.exp(X), it)


def sinkhorn_and_grad(cost, upstream, cfg: SinkhornConfig = SinkhornConfig()) -> Tuple[Coupling, np.ndarray]:
    """:func:`sinkhorn` plus the pullback of ``upstream = d f / d coupling`` onto the cost."""
    cost = np.asarray(cost, dtype=float)
    _check_finite(cost, "cost matrix")
    X, tape, it = _normalize(-cost / cfg.tau, cfg, record=True)
    Q = np.exp(X)
    dX0 = _pullback(tape, np.asarray(upstream, dtype=float) * Q)
    return Coupling(Q, it), -dX0 / cfg.tau


def _log_input(P) -> Tuple[np.ndarray, np.ndarray]:
    P = np.asarray(P, dtype=float)
    _check_finite(P, "matrix to project")
    if np.any(np.all(P.reshape(P.shape[:-2] + (-1,)) <= 0, axis=-1)):
        raise ValidationError("cannot KL-project an all-zero (or nonpositive) matrix")
    live = P > LOG_FLOOR
    return np.log(np.where(live, P, LOG_FLOOR)), live


def kl_project(P, cfg: SinkhornConfig = SinkhornConfig()) -> Coupling:
    """KL projection of a positive matrix onto the coupling polytope.

    This is the Sinkhorn operator applied to the cost ``-tau log P``; the
    temperature cancels, so the result depends on ``P`` only. Entries are
    floored at ``LOG_FLOOR`` before the log.
    """
    logP, _ = _log_input(P)
    X, _, it = _normalize(logP, cfg, record=False)
    return Coupling(np.exp(X), it)


def project_and_grad(P, upstream, cfg: SinkhornConfig = SinkhornConfig()) -> Tuple[Coupling, np.ndarray]:
    """:func:`kl_project` and the pullback of ``upstream`` onto ``P``.

    Entries that were floored contribute no gradient.
    """
    P = np.asarray(P, dtype=float)
    logP, live = _log_input(P)
    X, tape, it = _normalize(logP, cfg, record=True)
    Q = np.exp(X)
    dlogP = _pullback(tape, np.asarray(upstream, dtype=float) * Q)
    grad = np.where(live, dlogP / np.where(live, P, 1.0), 0.0)
    return Coupling(Q, it), grad


def project_log(logK, cfg: SinkhornConfig = SinkhornConfig()) -> Coupling:
    """KL projection of ``exp(logK)``, taking the log-weights directly."""
    logK = np.asarray(logK, dtype=float)
    _check_finite(logK, "log-weights")
    X, _, it = _normalize(logK, cfg, record=False)
    return Coupling(np.exp(X), it)


def uniform_coupling(n: int, m: int) -> np.ndarray:
    return np.full((n, m), 1.0 / (n * m))


def round_to_polytope(C) -> Coupling:
    """Exactly feasible coupling close to a nonnegative ``C`` in l1.

    Rows and then columns carrying too much mass are scaled down, and the
    remaining deficits are filled with a rank-one correction (Altschuler,
    Weed and Rigollet, 2017). The l1 change is at most a small multiple of the
    marginal violation of ``C``.
    """
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    r = C.sum(1)
    F = C * np.minimum(1.0, (1.0 / n) / np.where(r > 0, r, 1.0))[:, None]
    c = F.sum(0)
    F = F * np.minimum(1.0, (1.0 / m) / np.where(c > 0, c, 1.0))[None, :]
    er = 1.0 / n - F.sum(1)
    ec = 1.0 / m - F.sum(0)
    total = er.sum()
    if total > 0:
        F = F + np.outer(er, ec) / total
    return Coupling(F)
