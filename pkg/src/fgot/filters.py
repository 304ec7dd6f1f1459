"""Spectral graph filters ``g(L) = U diag(g(lambda)) U^T``.

Filters are described by :class:`FilterSpec` and parsed from a small string
grammar shared by the library and the command line::

    pinv-sqrt            g(l) = l^(-1/2) on the nonzero spectrum, 0 on the kernel
    sq                   g(l) = l^2
    sqrt                 g(l) = l^(1/2)
    heat:<tau>           g(l) = exp(-tau l)
    a+b[+c...]           pointwise sum of the members
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import NumericError, ValidationError
from .graph import Graph, Laplacian, laplacian

CLAMP_TOL = 1e-8
PINV_REL_TOL = 1e-8

KINDS = ("pinv_sqrt", "square", "sqrt", "heat", "sum")

# The six filters compared in the classification study.
STANDARD_FILTERS = (
    "pinv-sqrt",
    "sq",
    "heat:0.8",
    "pinv-sqrt+sq",
    "pinv-sqrt+heat:0.8",
    "sq+heat:0.8",
)


@dataclass(frozen=True)
class FilterSpec:
    kind: str
    tau: float = 0.0
    members: Tuple["FilterSpec", ...] = ()
    zero_tol: float = PINV_REL_TOL

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown filter kind {self.kind!r}")
        if self.kind == "heat" and not self.tau > 0:
            raise ValidationError("heat filter requires tau > 0")
        if self.kind == "sum" and len(self.members) < 2:
            raise ValidationError("composite filter needs at least two members")

    @classmethod
    def parse(cls, text: str) -> "FilterSpec":
        parts = [p.strip().lower() for p in text.split("+")]
        if len(parts) > 1:
            return cls("sum", members=tuple(cls.parse(p) for p in parts))
        s = parts[0]
        if s in ("pinv-sqrt", "pinv_sqrt"):
            return cls("pinv_sqrt")
        if s in ("sq", "square"):
            return cls("square")
        if s == "sqrt":
            return cls("sqrt")
        if s.startswith("heat:"):
            try:
                tau = float(s[5:])
            except ValueError:
                raise ValidationError(f"bad heat temperature in {text!r}") from None
            return cls("heat", tau=tau)
        raise ValidationError(f"cannot parse filter {text!r}")

    def __str__(self):
        if self.kind == "pinv_sqrt":
            return "pinv-sqrt"
        if self.kind == "square":
            return "sq"
        if self.kind == "sqrt":
            return "sqrt"
        if self.kind == "heat":
            return f"heat:{self.tau:g}"
        return "+".join(str(m) for m in self.members)

    def response(self, lam, lam_max: float | None = None) -> np.ndarray:
        """Evaluate the scalar response on an array of nonnegative eigenvalues.

        ``lam_max`` fixes the scale of the pseudoinverse threshold; it defaults
        to the largest entry of ``lam``.
        """
        lam = np.asarray(lam, dtype=float)
        if lam_max is None:
            lam_max = float(np.max(lam)) if lam.size else 0.0
        if self.kind == "pinv_sqrt":
            thresh = self.zero_tol * max(lam_max, 1.0)
            out = np.zeros_like(lam)
            nz = lam > thresh
            out[nz] = 1.0 / np.sqrt(lam[nz])
            return out
        if self.kind == "square":
            return lam ** 2
        if self.kind == "sqrt":
            return np.sqrt(np.maximum(lam, 0.0))
        if self.kind == "heat":
            return np.exp(-self.tau * lam)
        return sum(m.response(lam, lam_max) for m in self.members)


def parse_filter(spec) -> FilterSpec:
    return spec if isinstance(spec, FilterSpec) else FilterSpec.parse(spec)


def evaluate_filter(spec, lam: float) -> float:
    return float(parse_filter(spec).response(np.array([lam]))[0])


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def decompose(L) -> SpectralDecomposition:
    """Symmetric eigendecomposition with roundoff-negative eigenvalues clamped to 0."""
    M = L.matrix if isinstance(L, Laplacian) else np.asarray(L, dtype=float)
    if not np.all(M == 0):
        try:
            w, U = np.linalg.eigh(M)
        except np.linalg.LinAlgError as exc:
            raise NumericError(
                f"eigendecomposition failed for {M.shape} matrix "
                f"(norm={np.linalg.norm(M):.3g}, cond={np.linalg.cond(M):.3g})"
            ) from exc
    else:
        w, U = np.zeros(M.shape[0]), np.eye(M.shape[0])
    if not np.all(np.isfinite(w)):
        raise NumericError("eigendecomposition returned non-finite eigenvalues")
    w = np.where((w < 0) & (w > -CLAMP_TOL), 0.0, w)
    w.setflags(write=False)
    U.setflags(write=False)
    return SpectralDecomposition(w, U)


@dataclass(frozen=True, eq=False)
class FilteredGraph:
    """A graph with its materialized filter matrix ``g(L)``."""

    graph: Graph
    filter: FilterSpec
    gL: np.ndarray
    response: np.ndarray
    decomposition: SpectralDecomposition

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def gL_sq_trace(self) -> float:
        return float(np.sum(self.response ** 2))


def materialize(g: Graph, spec) -> FilteredGraph:
    spec = parse_filter(spec)
    dec = decompose(laplacian(g))
    lam = dec.eigenvalues
    resp = spec.response(np.maximum(lam, 0.0), float(lam[-1]) if lam.size else 0.0)
    U = dec.eigenvectors
    gL = (U * resp) @ U.T
    gL = (gL + gL.T) / 2
    gL.setflags(write=False)
    resp.setflags(write=False)
    return FilteredGraph(g, spec, gL, resp, dec)
