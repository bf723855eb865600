"""Transfer operator of a cusp map acting on splines, and its Ulam matrix.

``P f(x) = sum_{T(y) = x} f(y) / |T'(y)|`` on [0, a_eps] and 0 beyond.
Differentiating through the branch inverses gives ``(P f)' = P((f / T')')``,
so first and second derivatives of ``P f`` are again transfer-operator images:

    (P f)'  = P(f' / T' - T'' f / T'^2)
    (P f)'' = P(f'' / T'^2 - 3 T'' f' / T'^3 + (3 T''^2 / T'^4 - T''' / T'^3) f)

`apply` evaluates these at mesh nodes and re-projects onto a C1 cubic Hermite
spline, so the slopes it interpolates are exact operator images rather than
difference quotients.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .function_space import (
    GradedMesh, NormConfig, SplineFunction, graded_mesh, lp_norm, project,
    project_hermite, random_corpus, sobolev_norm,
)
from .map_family import MapModel


@dataclass(frozen=True)
class OperatorContext:
    model: MapModel
    mesh: GradedMesh
    cfg: NormConfig

    def __post_init__(self):
        if not self.mesh.has_node(self.model.a_eps):
            raise ConfigError("operator mesh must contain a_eps as a node")
        if not self.mesh.has_node(self.model.c):
            raise ConfigError("operator mesh must contain the cusp as a node")

    @cached_property
    def node_preimages(self):
        """Per branch: preimages of the mesh nodes, 1/|T'| there, and the contribution mask."""
        out = []
        for y, ok in _preimages(self.model, self.mesh.nodes):
            out.append((y, 1.0 / np.abs(self.model.derivative(y, 1)), ok))
        return out


def make_context(model: MapModel, panel_count=4096, grading_exponent=2.0,
                 cfg: NormConfig | None = None) -> OperatorContext:
    mesh = graded_mesh(panel_count, model.c, model.a_eps, grading_exponent)
    return OperatorContext(model, mesh, cfg or NormConfig(p=model.p))


def _preimages(model: MapModel, x):
    """Branch preimages of x, with a mask of points that contribute."""
    x = np.asarray(x, dtype=float)
    inside = x < model.a_eps
    xs = np.where(inside, x, 0.0)
    out = []
    for br in ("left", "right"):
        y = model.branch_inverse(br, xs)
        ok = inside & (y != model.c)
        out.append((np.where(ok, y, 0.25 if br == "left" else 0.75), ok))
    return out


def pullback_mesh(model: MapModel, mesh: GradedMesh, image_nodes=None) -> GradedMesh:
    """`mesh` refined by the branch preimages of `image_nodes` (default: its own nodes).

    A spline g on `image_nodes` composed with T is smooth between these
    nodes, so integrals of ``f * (g o T)`` converge at the quadrature order.
    """
    y = mesh.nodes if image_nodes is None else np.asarray(image_nodes, dtype=float)
    y = y[y <= model.a_eps]
    pre = np.concatenate([model.branch_inverse(b, y) for b in ("left", "right")])
    return GradedMesh(np.union1d(mesh.nodes, pre), mesh.c, mesh.a, mesh.grading_exponent)


def transfer_values(model: MapModel, phi, x):
    """Pointwise ``sum phi(y) / |T'(y)|`` over preimages; 0 for x >= a_eps.

    `phi` receives the branch preimages (never the cusp itself).
    """
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    for y, ok in _preimages(model, x):
        val = phi(y) / np.abs(model.derivative(y, 1))
        total = total + np.where(ok, val, 0.0)
    return total


def node_transfer_values(ctx: OperatorContext, phi):
    """`transfer_values` at the mesh nodes, reusing the cached preimages."""
    total = np.zeros_like(ctx.mesh.nodes)
    for y, weight, ok in ctx.node_preimages:
        total = total + np.where(ok, phi(y) * weight, 0.0)
    return total


def _first_integrand(model, f, fprime):
    def phi(y):
        t1 = model.derivative(y, 1)
        return fprime(y) / t1 - model.derivative(y, 2) * f(y) / t1 ** 2
    return phi


def _second_integrand(model, f, fprime, fsecond):
    def phi(y):
        t1 = model.derivative(y, 1)
        t2 = model.derivative(y, 2)
        t3 = model.derivative(y, 3)
        return (fsecond(y) / t1 ** 2 - 3.0 * t2 * fprime(y) / t1 ** 3
                + (3.0 * t2 ** 2 / t1 ** 4 - t3 / t1 ** 3) * f(y))
    return phi


def _parts(f):
    if isinstance(f, SplineFunction):
        return f, (lambda y: f.derivative(y, 1)), (lambda y: f.derivative(y, 2))
    return f, None, None


def apply(ctx: OperatorContext, f, fprime=None) -> SplineFunction:
    """``P f`` re-projected on the context mesh.

    Spline inputs (or callables with `fprime`) give a C1 Hermite result with
    exact node slopes; a bare callable is interpolated by a C2 spline.
    """
    model = ctx.model
    fn, d1, _ = _parts(f)
    d1 = fprime if fprime is not None else d1
    values = node_transfer_values(ctx, fn)
    if d1 is None:
        return project(values, ctx.mesh, "C2")
    slopes = node_transfer_values(ctx, _first_integrand(model, fn, d1))
    return project_hermite(values, slopes, ctx.mesh)


def apply_derivative(ctx: OperatorContext, f: SplineFunction) -> SplineFunction:
    """``(P f)'`` via ``P(f'/T') - P(T'' f / T'^2)``."""
    model = ctx.model
    fn, d1, d2 = _parts(f)
    values = node_transfer_values(ctx, _first_integrand(model, fn, d1))
    slopes = node_transfer_values(ctx, _second_integrand(model, fn, d1, d2))
    return project_hermite(values, slopes, ctx.mesh)


def apply_second(ctx: OperatorContext, f: SplineFunction) -> SplineFunction:
    model = ctx.model
    fn, d1, d2 = _parts(f)
    values = node_transfer_values(ctx, _second_integrand(model, fn, d1, d2))
    return project(values, ctx.mesh, "C2")


def apply_D_eps(g: SplineFunction, eps: float) -> SplineFunction:
    """``(1-eps)^-1 g(x / (1-eps))`` on [0, 1-eps], zero beyond; exact on splines."""
    if not 0.0 <= eps < 0.1:
        raise ConfigError("eps must lie in [0, 0.1)")
    if eps == 0.0:
        return g
    s = 1.0 - eps
    mesh = g.mesh
    nodes = np.append(mesh.nodes * s, 1.0)
    scale = s ** -(np.arange(4) + 1.0)
    coef = np.vstack([g.coefficients * scale, np.zeros(4)])
    new_mesh = GradedMesh(nodes, mesh.c, s * mesh.a, mesh.grading_exponent)
    return SplineFunction(new_mesh, coef, "C0")


def rescaled_mesh(mesh: GradedMesh, eps: float) -> GradedMesh:
    """Images ``(1-eps) x`` of the nodes of `mesh`, plus `mesh.c`, with
    [1-eps, 1] filled by panels doubling away from 1-eps.

    A context on this mesh evaluates ``P_eps f`` exactly where
    `apply_D_eps` places the rescaled nodes of ``P_0 f``, so the two sides of
    the factorization can be compared without cross-mesh interpolation.
    Inserting c may leave one spacing ratio above 4.
    """
    if not 0.0 < eps < 0.1:
        raise ConfigError("eps must lie in (0, 0.1)")
    s = 1.0 - eps
    nodes = mesh.nodes * s
    fill = [s]
    step = nodes[-1] - nodes[-2]
    while fill[-1] + 2 * step < 1.0:
        step *= 2
        fill.append(fill[-1] + step)
    return GradedMesh(np.union1d(np.union1d(nodes, fill), [mesh.c, 1.0]), mesh.c, s,
                      mesh.grading_exponent)


# ---------------------------------------------------------------------------
# Ulam discretisation


@dataclass
class UlamOperator:
    """Column-stochastic matrix: ``matrix[j, i]`` is the fraction of cell i
    that lands in cell j."""

    matrix: sp.csr_matrix
    mesh: GradedMesh

    @property
    def size(self):
        return self.matrix.shape[0]

    def cell_masses(self, f) -> np.ndarray:
        """Integral of `f` over each cell (Gauss rule per cell)."""
        t, w = np.polynomial.legendre.leggauss(8)
        t, w = 0.5 * (t + 1), 0.5 * w
        left, h = self.mesh.nodes[:-1], self.mesh.widths
        pts = left[:, None] + h[:, None] * t
        return (np.asarray(f(pts)) * w).sum(axis=1) * h

    def density(self, masses) -> np.ndarray:
        return np.asarray(masses) / self.mesh.widths

    def write_triplets(self, path):
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("row", "col", "value"))
            for i in order:
                w.writerow((int(coo.row[i]), int(coo.col[i]), format(coo.data[i], ".17g")))


def ulam_matrix(ctx: OperatorContext) -> UlamOperator:
    """Exact Ulam matrix: overlaps of cells with branch preimages of cells."""
    mesh, model = ctx.mesh, ctx.model
    n = mesh.panel_count
    if n < 32:
        raise ValueError("Ulam matrix needs at least 32 cells")
    nodes = mesh.nodes
    images = nodes[nodes <= model.a_eps]
    rows, cols, vals = [], [], []
    for br in ("left", "right"):
        lo, hi = model.branch_domain(br)
        pre = model.branch_inverse(br, images)
        if br == "right":
            pre = pre[::-1]
            target = np.arange(images.size - 1)[::-1]
        else:
            target = np.arange(images.size - 1)
        pre[0], pre[-1] = lo, hi
        pre = np.maximum.accumulate(pre)
        cells = nodes[(nodes >= lo) & (nodes <= hi)]
        pts = np.union1d(pre, cells)
        left, right = pts[:-1], pts[1:]
        # locate pieces by their left end; midpoints of one-ulp pieces round onto a breakpoint
        src = np.searchsorted(nodes, left, side="right") - 1
        dst_piece = np.searchsorted(pre, left, side="right") - 1
        dst = target[dst_piece]
        rows.append(dst)
        cols.append(src)
        vals.append((right - left) / mesh.widths[src])
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    m.sum_duplicates()
    return UlamOperator(m.tocsr(), mesh)


# ---------------------------------------------------------------------------
# (A9)-type mixed-norm gap


def operator_gap_norm(ctx0: OperatorContext, ctx_eps: OperatorContext, trial_count=50,
                      seed=0) -> float:
    """Corpus lower estimate of ``sup_{||f||_{W^{1,p}} <= 1} ||(P_0 - P_eps) f||_{2p}``."""
    if trial_count < 50:
        raise ValueError("trial_count must be at least 50")
    cfg = ctx0.cfg
    corpus = random_corpus(ctx0.mesh, trial_count, seed, kind="mixed")
    best = 0.0
    for f in corpus:
        f = f / sobolev_norm(f, cfg, 1)
        diff = apply(ctx0, f) - apply(ctx_eps, f)
        best = max(best, lp_norm(diff, cfg, 2 * cfg.p))
    return best


def write_trace(path, x, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("node", "value"))
        for a, b in zip(x, values):
            w.writerow((format(a, ".17g"), format(b, ".17g")))
