"""Invariant densities, Ulam spectra and the resolvent on mean-zero functions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError
from .function_space import (
    SplineFunction, integrate, lp_norm, mean_zero_project, random_corpus, sobolev_norm,
)
from .transfer_operator import OperatorContext, UlamOperator, apply

_DENSE_LIMIT = 512


@dataclass
class InvariantDensity:
    h: SplineFunction
    residual: float
    iterations: int
    trace: list = field(default_factory=list)


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    leading_eigenvalue: complex
    second_modulus: float
    gap: float
    resolvent_bound_proxy: float | None = None


def invariant_density(ctx: OperatorContext, tol=1e-9, max_iter=500, start=None) -> InvariantDensity:
    """Power iteration ``h <- P h / int(P h)`` until ``||P h - h||_p < tol``.

    Raises `ConvergenceError` carrying the last residual when `max_iter`
    applications do not reach `tol`.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    h = start if start is not None else _constant(ctx, 1.0)
    h = h / h.integral()
    trace = []
    for it in range(1, max_iter + 1):
        ph = apply(ctx, h)
        ph = ph / ph.integral()
        res = lp_norm(ph - h, ctx.cfg)
        trace.append((it, res))
        h = ph
        if res < tol:
            return InvariantDensity(h, res, it, trace)
    raise ConvergenceError(f"power iteration stalled at residual {res:.3e}", res, max_iter)


def _constant(ctx, value):
    from .function_space import project
    return project(np.full(ctx.mesh.nodes.size, value), ctx.mesh, "C1")


def density_residual(ctx: OperatorContext, h: SplineFunction) -> float:
    return lp_norm(apply(ctx, h) - h, ctx.cfg)


# ---------------------------------------------------------------------------
# Ulam side


def ulam_spectrum(op: UlamOperator, count=6) -> SpectrumReport:
    """Largest-modulus eigenvalues of the Ulam matrix.

    Dense LAPACK for matrices up to 512 cells, ARPACK beyond.
    """
    if count < 2:
        raise ValueError("count must be at least 2")
    n = op.size
    if n <= _DENSE_LIMIT:
        vals = scipy.linalg.eigvals(op.matrix.toarray())
    else:
        try:
            # subdominant eigenvalues cluster, a wide Krylov space is needed
            k = min(count, n - 2)
            vals = spla.eigs(op.matrix.astype(float), k=k, which="LM",
                             ncv=min(n - 1, max(80, 4 * k)), tol=1e-12,
                             maxiter=20 * n, v0=np.ones(n) / n,
                             return_eigenvectors=False)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError("ARPACK did not converge") from exc
    vals = vals[np.argsort(-np.abs(vals), kind="stable")][:count]
    second = float(np.abs(vals[1]))
    return SpectrumReport(vals, complex(vals[0]), second, 1.0 - second)


def ulam_fixed_density(op: UlamOperator) -> np.ndarray:
    """Cell densities of the mass-one fixed vector of the Ulam matrix."""
    n = op.size
    A = sp.bmat([[sp.identity(n) - op.matrix, np.ones((n, 1))],
                 [np.ones((1, n)), None]], format="csc")
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    v = spla.spsolve(A, rhs)[:n]
    return op.density(v)


def ulam_resolvent(op: UlamOperator, masses) -> np.ndarray:
    """Cell densities of v with ``(I - P) v = q``, ``sum v = 0``.

    `masses` are the cell integrals of a mean-zero q; the bordered system
    carries a Lagrange multiplier for the zero-mean constraint.
    """
    n = op.size
    A = sp.bmat([[sp.identity(n) - op.matrix, np.ones((n, 1))],
                 [np.ones((1, n)), None]], format="csc")
    rhs = np.append(np.asarray(masses, dtype=float), 0.0)
    v = spla.spsolve(A, rhs)[:n]
    return op.density(v)


def l1_distance_to_cells(f: SplineFunction, op: UlamOperator, cell_density, cfg) -> float:
    """``int |f - rho|`` with rho piecewise constant on the Ulam cells."""
    mesh = f.mesh.union(op.mesh)
    nodes = op.mesh.nodes

    def integrand(x):
        idx = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, op.size - 1)
        return np.abs(f(x) - cell_density[idx])
    return integrate(integrand, mesh, cfg)


# ---------------------------------------------------------------------------
# resolvent


def neumann_series(ctx: OperatorContext, q: SplineFunction, tol=1e-10, max_terms=10_000,
                   mean_tol=1e-8):
    """Partial sums of ``sum_n P^n q`` and the W^{1,p} norms of the terms.

    Stops once a term's W^{1,p} norm falls below `tol`.  P maps mean-zero
    functions to mean-zero functions, but interpolation leaves a mean of
    order 1e-12 per application which the series would otherwise accumulate
    along h_0; every term is therefore re-centred.
    """
    if abs(q.integral()) > mean_tol:
        raise ValueError(f"resolvent needs a mean-zero input, got integral {q.integral():.3e}")
    cfg = ctx.cfg
    term = q.restrict_to(q.mesh.union(ctx.mesh)) if q.mesh is not ctx.mesh else q
    term = mean_zero_project(term)
    total = term
    norms = [sobolev_norm(term, cfg, 1)]
    if norms[0] == 0.0:
        return total, norms
    for _ in range(max_terms):
        term = mean_zero_project(apply(ctx, term))
        total = total + term
        norms.append(sobolev_norm(term, cfg, 1))
        if norms[-1] < tol:
            return total, norms
    raise ConvergenceError(f"Neumann series terms did not decay below {tol:g} "
                           f"after {max_terms} terms", norms[-1], max_terms)


def resolvent_apply(ctx: OperatorContext, q: SplineFunction, tol=1e-10, max_terms=10_000):
    """``(I - P)^{-1} q`` on mean-zero q by the Neumann series."""
    return neumann_series(ctx, q, tol, max_terms)[0]


def resolvent_bound_proxy(ctx: OperatorContext, corpus_size=20, seed=0, tol=1e-10) -> float:
    """Largest ``||(I-P)^{-1} f||_{W^{1,p}} / ||f||_{W^{1,p}}`` over a mean-zero corpus."""
    if corpus_size < 20:
        raise ValueError("corpus_size must be at least 20")
    cfg = ctx.cfg
    best = 0.0
    for f in random_corpus(ctx.mesh, corpus_size, seed, kind="mixed", continuity="C1"):
        f = mean_zero_project(f)
        u = resolvent_apply(ctx, f, tol)
        best = max(best, sobolev_norm(u, cfg, 1) / sobolev_norm(f, cfg, 1))
    return best


def decay_ratio(ctx: OperatorContext, f: SplineFunction, n_lo=5, n_hi=30) -> float:
    """Geometric mean contraction of ``||P^n f||_p`` between n_lo and n_hi."""
    cfg = ctx.cfg
    g = f
    norms = {}
    for n in range(1, n_hi + 1):
        g = apply(ctx, g)
        if n in (n_lo, n_hi):
            norms[n] = lp_norm(g, cfg)
    return (norms[n_hi] / norms[n_lo]) ** (1.0 / (n_hi - n_lo))
