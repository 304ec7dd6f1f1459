"""Alignment solvers for the surrogate filter distance.

``mgd_solve`` runs entropic mirror descent with KL projections onto the
coupling polytope. ``stochastic_mgd_solve`` runs mirror descent on the
mean and standard deviation of a diagonal Gaussian over unconstrained
matrices that are pushed through the projection before evaluating the cost.

All reported costs are on permutation scale: a coupling ``C`` is evaluated
as ``surrogate_cost(f1, f2, sqrt(n m) C)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .distance import coupling_scale, scaled_surrogate_cost
from .errors import NumericError, ValidationError
from .filters import FilteredGraph
from .graph import PermutationMatrix
from .transport import (
    LOG_FLOOR,
    Coupling,
    SinkhornConfig,
    _normalize,
    _pullback,
    project_log,
    round_to_polytope,
    uniform_coupling,
)

log = logging.getLogger(__name__)

FINAL_PROJECTION_ITERS = 500
SIGMA_FLOOR = 1e-10


@dataclass(frozen=True)
class MgdConfig:
    """Entropic mirror descent settings.

    ``alpha=None`` means ``1/epsilon``, which turns each step into a plain
    Sinkhorn solve on the current gradient.
    """

    epsilon: float = 1e-2
    alpha: Optional[float] = None
    max_iters: int = 1000
    tol: float = 1e-7
    patience: int = 10
    init_noise: float = 0.1
    sinkhorn: SinkhornConfig = SinkhornConfig()
    seed: Optional[int] = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValidationError("epsilon must be >= 0")
        if self.alpha is None and self.epsilon == 0:
            raise ValidationError("alpha is required when epsilon = 0")
        if self.alpha is not None and not self.alpha > 0:
            raise ValidationError("alpha must be positive")

    @property
    def step(self) -> float:
        return self.alpha if self.alpha is not None else 1.0 / self.epsilon


@dataclass(frozen=True)
class StochasticConfig:
    """Settings for mirror descent over a diagonal Gaussian search distribution.

    ``parametrization`` selects how a sampled matrix becomes a coupling:
    ``"log"`` treats it as log-weights (``project_log(P / tau)``), ``"positive"``
    as a positive matrix to KL-project (nonpositive entries floored).
    """

    alpha: float = 1.0
    samples: int = 5
    max_iters: int = 500
    sigma0: float = 1.0
    eta0: Optional[float] = None
    patience: int = 50
    tol: float = 1e-7
    adaptive: bool = False
    beta2: float = 0.99
    parametrization: str = "positive"
    sinkhorn: SinkhornConfig = SinkhornConfig()
    seed: Optional[int] = None

    def __post_init__(self):
        if self.samples < 1:
            raise ValidationError("samples must be >= 1")
        if not self.sigma0 > 0:
            raise ValidationError("sigma0 must be positive")
        if not self.alpha > 0:
            raise ValidationError("alpha must be positive")
        if self.parametrization not in ("log", "positive"):
            raise ValidationError(f"unknown parametrization {self.parametrization!r}")


@dataclass(frozen=True, eq=False)
class HardAssignment:
    """Vertex map from the first graph into the second: ``mapping[i]`` is a G2 vertex."""

    mapping: np.ndarray
    n2: int
    degenerate: bool = False

    @property
    def n1(self) -> int:
        return self.mapping.size

    @property
    def is_permutation(self) -> bool:
        return self.n1 == self.n2

    @property
    def permutation(self) -> PermutationMatrix:
        if not self.is_permutation:
            raise ValidationError("rectangular assignment is not a permutation")
        return PermutationMatrix(self.mapping)

    @property
    def matrix(self) -> np.ndarray:
        M = np.zeros((self.n1, self.n2))
        M[np.arange(self.n1), self.mapping] = 1.0
        return M


@dataclass(eq=False)
class SolverResult:
    coupling: Coupling
    hard: HardAssignment
    cost_trace: List[float]
    final_cost: float
    iterations: int
    best_iteration: int
    converged: bool = False
    extra: dict = field(default_factory=dict)


def round_to_hard(C) -> HardAssignment:
    """Round a coupling to a hard vertex map.

    Square and wide couplings use an exact maximum-weight assignment (a
    permutation, resp. an injective map); tall couplings map each G1 vertex
    to its row argmax. A constant coupling yields the lowest-index map and
    sets ``degenerate``.
    """
    M = C.matrix if isinstance(C, Coupling) else np.asarray(C, dtype=float)
    n1, n2 = M.shape
    degenerate = bool(np.ptp(M) <= 1e-12 * max(np.abs(M).max(), 1e-300))
    if degenerate:
        mapping = np.arange(n1) if n1 <= n2 else np.zeros(n1, dtype=np.intp)
    elif n1 <= n2:
        rows, cols = linear_sum_assignment(M, maximize=True)
        mapping = np.empty(n1, dtype=np.intp)
        mapping[rows] = cols
    else:
        mapping = np.argmax(M, axis=1)
    mapping = np.asarray(mapping, dtype=np.intp)
    return HardAssignment(mapping, n2, degenerate)


def default_hyperparams(f1: FilteredGraph, f2: FilteredGraph, c1: float, c2: float) -> Tuple[float, float]:
    """Size- and scale-normalized ``(epsilon, alpha)`` from dimensionless constants.

    ``epsilon = c1 * max1 * max2 / sqrt(n m)`` and
    ``alpha = c2 * n m / (max1 * max2)``, with ``max_k`` the largest entry of
    ``g(L_k)``.
    """
    max1, max2 = float(np.max(f1.gL)), float(np.max(f2.gL))
    if max1 <= 0 or max2 <= 0:
        raise ValidationError("filter matrices need a positive maximum entry")
    nm = f1.n * f2.n
    return c1 * max1 * max2 / np.sqrt(nm), c2 * nm / (max1 * max2)


def _batched_grad(f1: FilteredGraph, f2: FilteredGraph, C: np.ndarray) -> np.ndarray:
    s2 = coupling_scale(f1.n, f2.n) ** 2
    return -4.0 * s2 * (f1.gL @ C @ f2.gL)


def _batched_cost(f1: FilteredGraph, f2: FilteredGraph, C: np.ndarray) -> np.ndarray:
    s2 = coupling_scale(f1.n, f2.n) ** 2
    cross = np.sum((f1.gL @ C @ f2.gL) * C, axis=(-2, -1))
    return f1.gL_sq_trace + f2.gL_sq_trace - 2.0 * s2 * cross


def _final_sinkhorn(sinkhorn: SinkhornConfig) -> SinkhornConfig:
    return sinkhorn.with_iters(max(FINAL_PROJECTION_ITERS, sinkhorn.max_iters))


def _accurate_coupling(log_weights: np.ndarray, final_cfg: SinkhornConfig) -> Coupling:
    coupling = project_log(log_weights, final_cfg)
    if coupling.marginal_violation() > final_cfg.tol:
        # Sinkhorn is sublinear when the support barely admits the marginals
        coupling = Coupling(round_to_polytope(coupling.matrix).matrix, coupling.iterations)
    return coupling


def _finish(f1, f2, C_best, trace, it, best_it, converged, sinkhorn, extra=None, log_weights=None):
    if log_weights is None:
        log_weights = np.log(np.maximum(C_best, LOG_FLOOR))
    coupling = _accurate_coupling(log_weights, _final_sinkhorn(sinkhorn))
    final_cost = scaled_surrogate_cost(f1, f2, coupling.matrix)
    if not np.isfinite(final_cost):
        raise NumericError("final cost is not finite")
    return SolverResult(
        coupling=coupling,
        hard=round_to_hard(coupling),
        cost_trace=trace,
        final_cost=float(final_cost),
        iterations=it,
        best_iteration=best_it,
        converged=converged,
        extra=extra or {},
    )


def initial_coupling(n: int, m: int, noise: float, seed, sinkhorn: SinkhornConfig) -> np.ndarray:
    """Uniform coupling, log-perturbed by ``noise`` standard normals and re-projected.

    Filters that annihilate the constant vector make the uniform coupling a
    stationary point of the cost, so some perturbation is needed to move.
    """
    if noise == 0:
        return uniform_coupling(n, m)
    rng = np.random.default_rng(seed)
    return project_log(noise * rng.standard_normal((n, m)), sinkhorn).matrix


def mgd_solve(f1: FilteredGraph, f2: FilteredGraph, cfg: MgdConfig = MgdConfig()) -> SolverResult:
    """Entropic mirror descent from the uniform coupling; returns the best iterate.

    Each step forms ``q = grad + epsilon (log C + 1)`` and sets
    ``C <- KL-projection(C * exp(-alpha q))``.
    """
    n, m = f1.n, f2.n
    C = initial_coupling(n, m, cfg.init_noise, cfg.seed, cfg.sinkhorn)
    alpha, eps = cfg.step, cfg.epsilon
    cost = float(_batched_cost(f1, f2, C))
    trace = [cost]
    best_cost, best_C, best_it = cost, C, 0
    calm, converged, it = 0, False, 0
    for it in range(1, cfg.max_iters + 1):
        logC = np.log(np.maximum(C, LOG_FLOOR))
        q = _batched_grad(f1, f2, C) + eps * (logC + 1.0)
        logK = logC - alpha * q
        if not np.all(np.isfinite(logK)):
            raise NumericError(f"non-finite mirror step at iteration {it}; step size alpha={alpha:g} too large?")
        X, _, _ = _normalize(logK, cfg.sinkhorn, record=False)
        C = np.exp(X)
        new_cost = float(_batched_cost(f1, f2, C))
        if not np.isfinite(new_cost):
            raise NumericError(f"non-finite cost at iteration {it}")
        trace.append(new_cost)
        if new_cost < best_cost:
            best_cost, best_C, best_it = new_cost, C, it
        if abs(cost - new_cost) <= cfg.tol * max(abs(cost), 1e-12):
            calm += 1
            if calm >= cfg.patience:
                converged = True
                cost = new_cost
                break
        else:
            calm = 0
        cost = new_cost
    return _finish(f1, f2, best_C, trace, it, best_it, converged, cfg.sinkhorn)


def _project_with_grad(P: np.ndarray, f1, f2, cfg: StochasticConfig):
    """Couplings of a batch of sampled matrices, their costs, and d cost / d sample."""
    tau = cfg.sinkhorn.tau
    if cfg.parametrization == "log":
        logK = P / tau
        live = None
    else:
        live = P > LOG_FLOOR
        logK = np.log(np.where(live, P, LOG_FLOOR))
    if not np.all(np.isfinite(logK)):
        raise NumericError("non-finite sample in stochastic solver")
    X, tape, _ = _normalize(logK, cfg.sinkhorn, record=True)
    Q = np.exp(X)
    costs = _batched_cost(f1, f2, Q)
    dlogK = _pullback(tape, _batched_grad(f1, f2, Q) * Q)
    if live is None:
        grad = dlogK / tau
    else:
        grad = np.where(live, dlogK / np.where(live, P, 1.0), 0.0)
    return Q, costs, grad


def _mean_log_weights(eta: np.ndarray, cfg: StochasticConfig) -> np.ndarray:
    if cfg.parametrization == "log":
        return eta / cfg.sinkhorn.tau
    return np.log(np.maximum(eta, LOG_FLOOR))


def sigma_update(sigma: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Mirror step on the standard deviation: ``sqrt(sigma^2 + d^2) - d``."""
    # written as sigma^2 / (sqrt(sigma^2 + d^2) + d) to avoid cancellation for d >> sigma
    root = np.sqrt(sigma ** 2 + d ** 2)
    pos = d > 0
    out = np.where(pos, sigma ** 2 / np.where(pos, root + d, 1.0), root - d)
    return np.maximum(out, SIGMA_FLOOR)


def stochastic_mgd_solve(
    f1: FilteredGraph, f2: FilteredGraph, cfg: StochasticConfig = StochasticConfig()
) -> SolverResult:
    """Mirror descent on ``(eta, sigma)`` of ``N(eta, diag(sigma^2))``.

    Per iteration, ``samples`` perturbations ``E`` give ``P = eta + sigma * E``;
    the pathwise gradients ``G`` of the cost of the projected ``P`` are averaged
    into ``g_eta = mean(G)`` and ``g_sigma = mean(E * G)``, followed by::

        eta   <- eta - alpha sigma^2 g_eta
        d      = alpha sigma^2 g_sigma / 2
        sigma <- sqrt(sigma^2 + d^2) - d

    The mean with the lowest projected cost is returned after a final
    high-accuracy projection.
    """
    n, m = f1.n, f2.n
    rng = np.random.default_rng(cfg.seed)
    eta = np.full((n, m), cfg.eta0 if cfg.eta0 is not None else 1.0 / (n * m))
    sigma = cfg.sigma0 * np.abs(rng.standard_normal((n, m)))
    sigma = np.maximum(sigma, SIGMA_FLOOR)
    v_eta = np.zeros((n, m))
    v_sig = np.zeros((n, m))

    # the mean is scored with the same projection accuracy as the returned coupling
    final_sk = _final_sinkhorn(cfg.sinkhorn)

    def mean_cost(eta):
        C = _accurate_coupling(_mean_log_weights(eta, cfg), final_sk).matrix
        return float(_batched_cost(f1, f2, C))

    cost = mean_cost(eta)
    trace = [cost]
    best_cost, best_eta, best_it = cost, eta.copy(), 0
    since_best, converged, it = 0, False, 0
    for it in range(1, cfg.max_iters + 1):
        E = rng.standard_normal((cfg.samples, n, m))
        P = eta + sigma * E
        _, _, G = _project_with_grad(P, f1, f2, cfg)
        g_eta = G.mean(axis=0)
        g_sig = (E * G).mean(axis=0)
        if cfg.adaptive:
            b = cfg.beta2
            v_eta = np.maximum(v_eta, b * v_eta + (1 - b) * g_eta ** 2)
            v_sig = np.maximum(v_sig, b * v_sig + (1 - b) * g_sig ** 2)
            g_eta = g_eta / (np.sqrt(v_eta) + 1e-12)
            g_sig = g_sig / (np.sqrt(v_sig) + 1e-12)
        s2 = sigma ** 2
        eta = eta - cfg.alpha * s2 * g_eta
        sigma = sigma_update(sigma, 0.5 * cfg.alpha * s2 * g_sig)
        if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(sigma))):
            raise NumericError(f"non-finite search distribution at iteration {it}; alpha={cfg.alpha:g} too large?")
        cost = mean_cost(eta)
        trace.append(cost)
        if cost < best_cost - cfg.tol * abs(best_cost):
            best_cost, best_eta, best_it = cost, eta.copy(), it
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                converged = True
                break
    return _finish(
        f1, f2, None, trace, it, best_it, converged, cfg.sinkhorn,
        extra={"sigma_min": float(sigma.min())},
        log_weights=_mean_log_weights(best_eta, cfg),
    )


METHODS = ("mgd", "smgd")


@dataclass(frozen=True)
class SolverSpec:
    """Solver choice plus dimensionless constants, resolved per graph pair.

    ``c1`` sets the MGD entropic weight and ``c2`` the stochastic step through
    :func:`default_hyperparams`; explicit ``epsilon`` / ``alpha`` override
    them. The constants are calibrated against the gradient of the cost at
    the raw coupling, which is ``n m`` times smaller than the gradient on
    permutation scale used by the solvers, so the resolved ``epsilon`` is
    multiplied and ``alpha`` divided by ``n m``. ``step_scale`` multiplies whichever step size is used (halved on
    retry after a numeric failure).
    """

    method: str = "smgd"
    c1: float = 6e-3
    c2: float = 1.0
    epsilon: Optional[float] = None
    alpha: Optional[float] = None
    max_iters: Optional[int] = None
    patience: Optional[int] = None
    samples: int = 5
    sigma0: float = 1.0
    tau: float = 1.0
    sinkhorn_iters: int = 50
    init_noise: float = 0.1
    adaptive: bool = False
    parametrization: str = "positive"
    step_scale: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown solver {self.method!r}; expected one of {METHODS}")

    def halved(self) -> "SolverSpec":
        return replace(self, step_scale=self.step_scale / 2)

    def with_c1(self, c1: float) -> "SolverSpec":
        return replace(self, c1=c1)

    def _loop_kwargs(self) -> dict:
        kw = {}
        if self.max_iters is not None:
            kw["max_iters"] = self.max_iters
        if self.patience is not None:
            kw["patience"] = self.patience
        return kw

    def config(self, f1: FilteredGraph, f2: FilteredGraph, seed=None):
        sk = SinkhornConfig(tau=self.tau, max_iters=self.sinkhorn_iters)
        eps, alpha = default_hyperparams(f1, f2, self.c1, self.c2)
        nm = f1.n * f2.n
        eps, alpha = eps * nm, alpha / nm
        if self.method == "mgd":
            eps = self.epsilon if self.epsilon is not None else eps
            step = self.alpha if self.alpha is not None else (1.0 / eps if eps > 0 else None)
            if step is None:
                raise ValidationError("mgd with epsilon = 0 needs an explicit alpha")
            kw = self._loop_kwargs()
            return MgdConfig(epsilon=eps, alpha=step * self.step_scale, init_noise=self.init_noise,
                             sinkhorn=sk, seed=seed, **kw)
        alpha = self.alpha if self.alpha is not None else alpha
        kw = self._loop_kwargs()
        return StochasticConfig(alpha=alpha * self.step_scale, samples=self.samples, sigma0=self.sigma0,
                                adaptive=self.adaptive, parametrization=self.parametrization,
                                sinkhorn=sk, seed=seed, **kw)

    def solve(self, f1: FilteredGraph, f2: FilteredGraph, seed=None) -> SolverResult:
        cfg = self.config(f1, f2, seed)
        if self.method == "mgd":
            return mgd_solve(f1, f2, cfg)
        return stochastic_mgd_solve(f1, f2, cfg)

    def describe(self) -> str:
        parts = [self.method]
        if self.method == "mgd":
            parts.append(f"c1={self.c1:g}" if self.epsilon is None else f"epsilon={self.epsilon:g}")
        else:
            parts.append(f"c2={self.c2:g}" if self.alpha is None else f"alpha={self.alpha:g}")
            parts.append(f"samples={self.samples}")
        if self.step_scale != 1.0:
            parts.append(f"step_scale={self.step_scale:g}")
        return " ".join(parts)


# (preset, method, filter kind) -> constants; filter kind "*" is the fallback
_PRESET_TABLE = {
    ("er-align", "mgd", "pinv_sqrt"): {"c1": 6e-3},
    ("er-align", "mgd", "*"): {"c1": 3e-3},
    ("er-align", "smgd", "*"): {"c2": 50.0},
    ("sbm-community", "mgd", "pinv_sqrt"): {"c1": 8e-3},
    ("sbm-community", "mgd", "*"): {"c1": 2e-2},
    ("sbm-community", "smgd", "*"): {"c2": 1.0},
    ("classify-linesearch", "mgd", "*"): {"c1": 1e-2},
    ("classify-linesearch", "smgd", "*"): {"c2": 1.0},
}
PRESETS = ("er-align", "sbm-community", "classify-linesearch")
LINESEARCH_GRID = tuple(np.logspace(-3, -1, 7))


def preset(name: str, method: str, filter_kind: str = "*", **overrides) -> SolverSpec:
    """Solver constants for a named experiment preset."""
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; expected one of {PRESETS}")
    if method not in METHODS:
        raise ValidationError(f"unknown solver {method!r}; expected one of {METHODS}")
    consts = _PRESET_TABLE.get((name, method, filter_kind)) or _PRESET_TABLE[(name, method, "*")]
    return SolverSpec(method=method, **{**consts, **overrides})
