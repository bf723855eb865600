"""Piecewise-cubic functions on graded meshes, quadrature and Sobolev norms.

Densities, kernels and test functions all live here as `SplineFunction`
objects: one cubic per mesh panel, stored in the local power basis
``c0 + c1 t + c2 t**2 + c3 t**3`` with ``t = x - panel_left``.  Integrals of
spline expressions are taken with composite Gauss-Legendre quadrature; panels
touching the cusp are refined geometrically and the innermost piece is
integrated after the substitution ``x = c + w t**4``, which removes the
algebraic endpoint singularities produced by the map's derivatives.  When the
geometric pieces decay like a pure power law that is too singular for the
substitution, the remainder is summed as a geometric tail instead.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence, Union

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, DomainError

Evaluator = Callable[[np.ndarray], np.ndarray]

_CONTINUITY_RANK = {"C0": 0, "C1": 1, "C2": 2}
_MAX_SPACING_RATIO = 4.0
# innermost cusp panel is integrated in t with x = c + w * t**_CUSP_POWER
_CUSP_POWER = 4
# piece ratio above which the cusp remainder is summed as a geometric tail;
# bounded integrands give ratio 1/2
_TAIL_RATIO = 0.55
_TAIL_AGREEMENT = 1e-3


@dataclass(frozen=True)
class NormConfig:
    """Exponent and quadrature settings shared by all norm evaluations."""

    p: float = 1.5
    quadrature_order: int = 8
    subdivision_depth: int = 12

    def __post_init__(self):
        if not self.p > 1:
            raise ConfigError(f"p must exceed 1, got {self.p}")
        if self.quadrature_order < 4:
            raise ConfigError("quadrature_order must be at least 4")
        if self.subdivision_depth < 0:
            raise ConfigError("subdivision_depth must be non-negative")


class GradedMesh:
    """Sorted panel boundaries on [0, 1] that always contain `c` and `a`.

    `c` is the cusp (quadrature refines towards it) and `a` the right edge of
    the support of transfer-operator images.  Instances are treated as
    immutable; the node array is write-protected.
    """

    def __init__(self, nodes, c=0.5, a=1.0, grading_exponent=1.0):
        nodes = np.array(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ConfigError("a mesh needs at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ConfigError("mesh nodes must be strictly increasing")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise ConfigError("mesh must span exactly [0, 1]")
        nodes.setflags(write=False)
        self.nodes = nodes
        self.c = float(c)
        self.a = float(a)
        self.grading_exponent = float(grading_exponent)
        self._quad_cache = {}

    @property
    def panel_count(self):
        return self.nodes.size - 1

    @property
    def widths(self):
        return np.diff(self.nodes)

    def __len__(self):
        return self.panel_count

    def __repr__(self):
        return (f"GradedMesh(panels={self.panel_count}, c={self.c}, a={self.a}, "
                f"grading={self.grading_exponent})")

    def has_node(self, x):
        i = np.searchsorted(self.nodes, x)
        return i < self.nodes.size and self.nodes[i] == x

    def union(self, other: "GradedMesh") -> "GradedMesh":
        if other is self:
            return self
        return GradedMesh(np.union1d(self.nodes, other.nodes), self.c, self.a,
                          self.grading_exponent)

    def spacing_ratio(self):
        h = self.widths
        if h.size < 2:
            return 1.0
        r = h[1:] / h[:-1]
        return float(max(r.max(), (1.0 / r).max()))

    def quadrature(self, cfg: NormConfig):
        """Points, weights and cusp-panel offsets of the composite rule, cached."""
        key = (cfg.quadrature_order, cfg.subdivision_depth)
        if key not in self._quad_cache:
            self._quad_cache[key] = _composite_rule(self.nodes, self.c, *key)
        return self._quad_cache[key]


def _half_segment(left, right, m, grading, toward):
    """Nodes of [left, right] split into m panels, clustered at one end."""
    u = (np.arange(m + 1) / m) ** grading
    if toward == "left":
        pts = left + (right - left) * u
    else:
        pts = right - (right - left) * u[::-1]
    pts[0], pts[-1] = left, right
    return pts


def _enforce_ratio(nodes, ratio=_MAX_SPACING_RATIO):
    # bisect any panel more than `ratio` times wider than a neighbour
    while True:
        h = np.diff(nodes)
        big = np.zeros(h.size, dtype=bool)
        big[1:] |= h[1:] > ratio * h[:-1]
        big[:-1] |= h[:-1] > ratio * h[1:]
        if not big.any():
            return nodes
        mids = 0.5 * (nodes[:-1][big] + nodes[1:][big])
        nodes = np.sort(np.concatenate([nodes, mids]))


def graded_mesh(panel_count: int, c: float = 0.5, a: float = 1.0,
                grading_exponent: float = 2.0) -> GradedMesh:
    """Mesh of roughly `panel_count` panels clustered towards `c` and `a`.

    Each side of `c` and of `a` is meshed with nodes ``end +- L (j/m)**g``;
    panels are shared between segments in proportion to their length.  Any
    adjacent pair whose width ratio exceeds 4 is repaired by bisection, so the
    final count can exceed the request by a few panels when `a` is close to 1.
    """
    if panel_count < 8:
        raise ConfigError("graded_mesh needs at least 8 panels")
    if not 0.0 < c < a <= 1.0:
        raise ConfigError(f"need 0 < c < a <= 1, got c={c}, a={a}")
    if grading_exponent < 1:
        raise ConfigError("grading_exponent must be >= 1")
    mid = 0.5 * (c + a)
    pieces = [(0.0, c, "right"), (c, mid, "left"), (mid, a, "right")]
    if a < 1.0:
        pieces.append((a, 1.0, "left"))
    lengths = np.array([r - l for l, r, _ in pieces])
    share = panel_count * lengths / lengths.sum()
    counts = np.maximum(4, np.floor(share)).astype(int)
    # largest remainders take the leftover panels
    short = panel_count - counts.sum()
    if short > 0:
        order = np.argsort(-(share - np.floor(share)), kind="stable")
        for i in order[:short]:
            counts[i] += 1
    parts = [_half_segment(l, r, m, grading_exponent, side)
             for (l, r, side), m in zip(pieces, counts)]
    nodes = np.unique(np.concatenate(parts))
    nodes = _enforce_ratio(nodes)
    return GradedMesh(nodes, c, a, grading_exponent)


def uniform_mesh(panel_count: int, c: float = 0.5, a: float = 1.0) -> GradedMesh:
    nodes = np.union1d(np.linspace(0.0, 1.0, panel_count + 1), [c, a])
    return GradedMesh(nodes, c, a, 1.0)


@lru_cache(maxsize=None)
def _gauss(order):
    t, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (t + 1.0), 0.5 * w


def _composite_rule(nodes, c, order, depth):
    t, w = _gauss(order)
    left, right = nodes[:-1], nodes[1:]
    touches = (left == c) | (right == c)
    h = right - left
    pts = [(left[~touches, None] + h[~touches, None] * t).ravel()]
    wts = [(h[~touches, None] * w).ravel()]
    # each cusp panel contributes `depth` geometric pieces and one inner
    # piece of `order` points each, starting at the recorded offset
    starts = []
    size = pts[0].size
    for lo, hi in zip(left[touches], right[touches]):
        starts.append(size)
        size += (depth + 1) * order
        width = hi - lo
        sign = 1.0 if lo == c else -1.0
        # geometric pieces [c + s w 2^-(j+1), c + s w 2^-j]
        for j in range(depth):
            far = width * 2.0 ** -j
            near = width * 2.0 ** -(j + 1)
            a_, b_ = sorted((c + sign * near, c + sign * far))
            pts.append(a_ + (b_ - a_) * t)
            wts.append((b_ - a_) * w)
        inner = width * 2.0 ** -depth
        pts.append(c + sign * inner * t ** _CUSP_POWER)
        wts.append(inner * _CUSP_POWER * t ** (_CUSP_POWER - 1) * w)
    return np.concatenate(pts), np.concatenate(wts), tuple(starts)


def _cusp_tail_correction(terms, start, order, depth):
    """Geometric tail minus the inner-piece rule, or 0 if the pieces are not
    a clean power law steeper than the substitution handles."""
    if depth < 3:
        return 0.0
    block = terms[start:start + (depth + 1) * order].reshape(depth + 1, order).sum(axis=1)
    s1, s2, s3 = block[depth - 3:depth]
    if not (s1 > 0 and s2 > 0 and s3 > 0) and not (s1 < 0 and s2 < 0 and s3 < 0):
        return 0.0
    r_prev, r = s2 / s1, s3 / s2
    if not (_TAIL_RATIO < r < 1.0) or abs(r - r_prev) > _TAIL_AGREEMENT * r:
        return 0.0
    return s3 * r / (1.0 - r) - block[depth]


def integrate(fn: Evaluator, mesh: GradedMesh, cfg: NormConfig = NormConfig()) -> float:
    """Integral of `fn` over [0, 1] by the mesh's composite Gauss rule."""
    x, w, starts = mesh.quadrature(cfg)
    vals = np.asarray(fn(x), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite integrand value during quadrature")
    terms = w * vals
    total = float(np.sum(terms))
    for start in starts:
        total += _cusp_tail_correction(terms, start, cfg.quadrature_order, cfg.subdivision_depth)
    return total


class SplineFunction:
    """Piecewise cubic on a `GradedMesh`.

    Parameters
    ----------
    mesh : GradedMesh
    coefficients : (panel_count, 4) array
        Local power-basis coefficients, column ``m`` multiplies
        ``(x - panel_left)**m``.
    continuity : {"C0", "C1", "C2"}
        Smoothness across panel boundaries; ``sobolev_norm(order=2)`` needs at
        least C1.
    """

    def __init__(self, mesh: GradedMesh, coefficients, continuity="C1"):
        coefficients = np.array(coefficients, dtype=float)
        if coefficients.shape != (mesh.panel_count, 4):
            raise ValueError(f"expected coefficients of shape {(mesh.panel_count, 4)}, "
                             f"got {coefficients.shape}")
        if continuity not in _CONTINUITY_RANK:
            raise ValueError(f"unknown continuity class {continuity!r}")
        coefficients.setflags(write=False)
        self.mesh = mesh
        self.coefficients = coefficients
        self.continuity = continuity

    def __repr__(self):
        return f"SplineFunction({self.mesh!r}, continuity={self.continuity})"

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        nodes = self.mesh.nodes
        if x.size and (x.min() < nodes[0] - 1e-14 or x.max() > nodes[-1] + 1e-14):
            raise DomainError("spline evaluated outside [0, 1]")
        idx = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.size - 2)
        return idx, x - nodes[idx]

    def __call__(self, x):
        return self.derivative(x, 0)

    def derivative(self, x, order=1):
        idx, t = self._locate(x)
        c = self.coefficients[idx]
        if order == 0:
            return c[..., 0] + t * (c[..., 1] + t * (c[..., 2] + t * c[..., 3]))
        if order == 1:
            return c[..., 1] + t * (2.0 * c[..., 2] + 3.0 * t * c[..., 3])
        if order == 2:
            return 2.0 * c[..., 2] + 6.0 * t * c[..., 3]
        if order == 3:
            return 6.0 * c[..., 3] + 0.0 * t
        raise ValueError("derivative order must be 0..3")

    def node_values(self):
        h = self.mesh.widths
        c = self.coefficients
        right = c[:, 0] + h * (c[:, 1] + h * (c[:, 2] + h * c[:, 3]))
        return np.append(c[:, 0], right[-1])

    def integral(self):
        h = self.mesh.widths
        c = self.coefficients
        return float(np.sum(h * (c[:, 0] + h * (c[:, 1] / 2 + h * (c[:, 2] / 3 + h * c[:, 3] / 4)))))

    def restrict_to(self, mesh: GradedMesh) -> "SplineFunction":
        """Exact re-expression on a mesh whose nodes include this mesh's nodes."""
        if mesh is self.mesh:
            return self
        left = mesh.nodes[:-1]
        mid = 0.5 * (left + mesh.nodes[1:])
        idx, _ = self._locate(mid)
        t = left - self.mesh.nodes[idx]
        c = self.coefficients[idx]
        new = np.column_stack([
            c[:, 0] + t * (c[:, 1] + t * (c[:, 2] + t * c[:, 3])),
            c[:, 1] + t * (2 * c[:, 2] + 3 * t * c[:, 3]),
            c[:, 2] + 3 * t * c[:, 3],
            c[:, 3],
        ])
        return SplineFunction(mesh, new, self.continuity)

    def _combine(self, other, op):
        if isinstance(other, SplineFunction):
            mesh = self.mesh.union(other.mesh)
            a, b = self.restrict_to(mesh), other.restrict_to(mesh)
            cont = min(self.continuity, other.continuity, key=_CONTINUITY_RANK.get)
            return SplineFunction(mesh, op(a.coefficients, b.coefficients), cont)
        return NotImplemented

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, scalar):
        if isinstance(scalar, SplineFunction):
            return NotImplemented
        return SplineFunction(self.mesh, self.coefficients * float(scalar), self.continuity)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __neg__(self):
        return self * -1.0

    def shift(self, constant):
        coef = self.coefficients.copy()
        coef[:, 0] += constant
        return SplineFunction(self.mesh, coef, self.continuity)

    def times_x_derivative(self) -> "SplineFunction":
        """The cubic ``x * f'(x)`` (exact: linear times quadratic)."""
        xl = self.mesh.nodes[:-1]
        c = self.coefficients
        new = np.column_stack([
            xl * c[:, 1],
            c[:, 1] + 2 * xl * c[:, 2],
            2 * c[:, 2] + 3 * xl * c[:, 3],
            3 * c[:, 3],
        ])
        return SplineFunction(self.mesh, new, "C0")

    def to_rows(self):
        nodes = self.mesh.nodes
        return [(nodes[i], nodes[i + 1], *self.coefficients[i]) for i in range(self.mesh.panel_count)]


SPLINE_CSV_HEADER = ("panel_left", "panel_right", "c0", "c1", "c2", "c3")


def write_spline_csv(f: SplineFunction, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SPLINE_CSV_HEADER)
        for row in f.to_rows():
            w.writerow([format(v, ".17g") for v in row])


def read_spline_csv(path, c=0.5, a=1.0, continuity="C1") -> SplineFunction:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != SPLINE_CSV_HEADER:
        raise ValueError(f"unexpected header {rows[0]}")
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    nodes = np.append(data[:, 0], data[-1, 1])
    return SplineFunction(GradedMesh(nodes, c, a), data[:, 2:], continuity)


def project(samples, mesh: GradedMesh, continuity="C2") -> SplineFunction:
    """Interpolating spline through one sample per mesh node.

    The default is the C2 not-a-knot cubic spline; ``continuity="C1"`` uses
    local Hermite panels with slopes from the C2 spline's node derivatives.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape != mesh.nodes.shape:
        raise ValueError(f"need {mesh.nodes.size} samples, got {samples.size}")
    if mesh.nodes.size < 4:
        raise ValueError("projection needs at least 4 nodes")
    cs = CubicSpline(mesh.nodes, samples, bc_type="not-a-knot")
    if continuity == "C2":
        return SplineFunction(mesh, cs.c[::-1].T, "C2")
    if continuity == "C1":
        return project_hermite(samples, cs(mesh.nodes, 1), mesh)
    raise ValueError("project supports C1 or C2")


def project_hermite(values, slopes, mesh: GradedMesh) -> SplineFunction:
    """Local C1 cubic matching values and slopes at every node."""
    v = np.asarray(values, dtype=float)
    d = np.asarray(slopes, dtype=float)
    if v.shape != mesh.nodes.shape or d.shape != mesh.nodes.shape:
        raise ValueError("values and slopes need one entry per node")
    h = mesh.widths
    dv = (v[1:] - v[:-1]) / h
    c2 = (3 * dv - 2 * d[:-1] - d[1:]) / h
    c3 = (d[:-1] + d[1:] - 2 * dv) / h ** 2
    return SplineFunction(mesh, np.column_stack([v[:-1], d[:-1], c2, c3]), "C1")


def sample(fn: Evaluator, mesh: GradedMesh, continuity="C2") -> SplineFunction:
    return project(fn(mesh.nodes), mesh, continuity)


def _as_evaluator(f, order=0):
    if isinstance(f, SplineFunction):
        return lambda x: f.derivative(x, order)
    if order:
        raise ValueError("derivatives are only available for SplineFunction inputs")
    return f


_DEFAULT_MESH = None


def _default_mesh():
    global _DEFAULT_MESH
    if _DEFAULT_MESH is None:
        _DEFAULT_MESH = uniform_mesh(64)
    return _DEFAULT_MESH


def lp_norm(f: Union[SplineFunction, Evaluator], cfg: NormConfig = NormConfig(),
            exponent=None, mesh: GradedMesh = None) -> float:
    """L^r norm on [0, 1], r = `exponent` (defaults to ``cfg.p``)."""
    r = cfg.p if exponent is None else float(exponent)
    if r < 1:
        raise ValueError("exponent must be >= 1")
    if mesh is None:
        mesh = f.mesh if isinstance(f, SplineFunction) else _default_mesh()
    ev = _as_evaluator(f)
    return integrate(lambda x: np.abs(ev(x)) ** r, mesh, cfg) ** (1.0 / r)


def sobolev_norm(f: SplineFunction, cfg: NormConfig = NormConfig(), order=1,
                 mesh: GradedMesh = None) -> float:
    """``(sum_{i <= order} ||f^(i)||_p^p)^(1/p)``."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if order == 2 and _CONTINUITY_RANK[f.continuity] < 1:
        raise ValueError("second-order Sobolev norm needs a C1 spline")
    mesh = f.mesh if mesh is None else mesh
    p = cfg.p
    total = sum(integrate(lambda x, i=i: np.abs(f.derivative(x, i)) ** p, mesh, cfg)
                for i in range(order + 1))
    return total ** (1.0 / p)


def mean_zero_project(f: SplineFunction) -> SplineFunction:
    return f.shift(-f.integral())


def embedding_constant(p: float) -> float:
    """C with ``||f||_inf <= C ||f||_{W^{1,p}}`` on [0, 1] for our norm.

    From ``|f(x)| <= ||f||_1 + ||f'||_1 <= ||f||_p + ||f'||_p`` and Hoelder on
    the two-term sum.
    """
    return 2.0 ** (1.0 - 1.0 / p)


def random_corpus(mesh: GradedMesh, count: int, seed: int, kind="mixed",
                  nonnegative=False, continuity="C2") -> list:
    """Deterministic corpus of test splines on `mesh`.

    ``kind="fourier"`` gives random trigonometric profiles with decaying
    spectra; ``"cusp"`` gives profiles with steep or power-law behaviour at
    ``mesh.c`` and ``mesh.a``; ``"mixed"`` alternates the two.
    """
    rng = np.random.default_rng(seed)
    x = mesh.nodes
    c, a = mesh.c, mesh.a
    out = []
    for i in range(count):
        use_cusp = kind == "cusp" or (kind == "mixed" and i % 2 == 1)
        if use_cusp:
            choice = rng.integers(4)
            gamma = rng.uniform(0.5, 2.5)
            if choice == 0:
                y = np.abs(x - c) ** gamma
            elif choice == 1:
                w = 10.0 ** rng.uniform(-2.5, -1)
                y = np.tanh((x - c) / w)
            elif choice == 2:
                # Lipschitz at the support edge: its image lands near 0, where
                # the mesh is not graded
                y = np.clip(a - x, 0.0, None) ** max(gamma, 1.0)
            else:
                y = np.abs(x - c) ** gamma * np.cos(rng.uniform(1, 6) * np.pi * x)
            y = y * rng.normal() + rng.normal(scale=0.5)
        else:
            modes = int(rng.integers(2, 10))
            m = np.arange(modes)
            amp = rng.normal(size=(2, modes)) / (1.0 + m) ** 1.5
            y = amp[0] @ np.cos(np.outer(m, np.pi * x)) + amp[1] @ np.sin(np.outer(m + 1, np.pi * x))
        if nonnegative:
            y = y - y.min() + rng.uniform(0.05, 1.0)
        out.append(project(y, mesh, continuity))
    return out


def union_mesh(meshes: Sequence[GradedMesh]) -> GradedMesh:
    out = meshes[0]
    for m in meshes[1:]:
        out = out.union(m)
    return out
