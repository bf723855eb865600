"""First-order response of the invariant density to the perturbation parameter.

The kernel ``q = d/d(eps) P_eps h_0`` is built two ways: through the
branch-inverse coefficients ``A = -dT/T'`` and
``B = dT T''/T'^2 - dT'/T'`` (``dT`` the eps-derivative of the map), and,
for the scaled tent family where ``P_eps = D_eps o P_0``, as
``h_0 + x h_0'``.  The predicted derivative of the density is
``u = (I - P_0)^{-1} q``, compared against difference quotients of densities
computed at positive eps.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvergenceError
from .function_space import NormConfig, SplineFunction, lp_norm, mean_zero_project, project
from .map_family import CuspTentFamily, MapModel
from .spectral import InvariantDensity, invariant_density, neumann_series
from .transfer_operator import OperatorContext, make_context, node_transfer_values


@dataclass(frozen=True)
class ResponseCoefficients:
    A: Callable[[np.ndarray], np.ndarray]
    B: Callable[[np.ndarray], np.ndarray]


def coefficients(model: MapModel) -> ResponseCoefficients:
    def A(x):
        return -model.eps_derivative(x, "value") / model.derivative(x, 1)

    def B(x):
        t1 = model.derivative(x, 1)
        return (model.eps_derivative(x, "value") * model.derivative(x, 2) / t1 ** 2
                - model.eps_derivative(x, "slope") / t1)

    return ResponseCoefficients(A, B)


def kernel_q(ctx0: OperatorContext, h0: InvariantDensity, coeff: ResponseCoefficients) -> SplineFunction:
    """``P_0[A h_0' + B h_0]`` at the mesh nodes, interpolated by a C2 spline.

    B is unbounded at the cusp but the 1/|T'| weight of the transfer operator
    tames it, so the product is evaluated pointwise and never splined.
    """
    h = h0.h

    def phi(y):
        return coeff.A(y) * h.derivative(y, 1) + coeff.B(y) * h(y)

    values = node_transfer_values(ctx0, phi)
    return project(values, ctx0.mesh, "C2")


def kernel_q_family(h0: InvariantDensity) -> SplineFunction:
    """``h_0 + x h_0'``; valid when the perturbation is ``T_eps = (1-eps) T_0``."""
    return h0.h + h0.h.times_x_derivative()


def predicted_derivative(ctx0: OperatorContext, q: SplineFunction, tol=1e-10) -> SplineFunction:
    return neumann_series(ctx0, q, tol)[0]


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepEntry:
    eps: float
    status: str
    h_residual: float = float("nan")
    iterations: int = 0
    fd_error_lp: float = float("nan")
    density_shift_lp: float = float("nan")


@dataclass
class ResponseReport:
    h0: InvariantDensity
    q_theorem: SplineFunction
    q_family: SplineFunction
    u: SplineFunction
    kernel_route_gap: float
    neumann_terms: int
    sweep: list = field(default_factory=list)
    fitted_rate: float = float("nan")
    densities: dict = field(default_factory=dict)
    kernel_mean: float = 0.0

    def errors(self):
        return [(e.eps, e.fd_error_lp) for e in self.sweep if e.status == "ok"]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("eps", "status", "h_residual", "fd_error_lp", "kernel_route_gap",
                        "density_shift_lp"))
            for e in self.sweep:
                w.writerow((_g(e.eps), e.status, _g(e.h_residual), _g(e.fd_error_lp),
                            _g(self.kernel_route_gap), _g(e.density_shift_lp)))


def _g(v):
    return format(float(v), ".17g")


def fit_rate(eps, err, last=3):
    """Least-squares slope of log(err) against log(eps) over the `last`
    smallest eps values."""
    pairs = sorted(zip(eps, err))[:last]
    if len(pairs) < 2:
        return float("nan")
    x = np.log([p[0] for p in pairs])
    y = np.log([p[1] for p in pairs])
    return float(np.polyfit(x, y, 1)[0])


def _worker_count():
    try:
        return max(1, int(os.environ.get("CUSP_RESPONSE_THREADS", "1")))
    except ValueError:
        return 1


def response_sweep(model0: CuspTentFamily, eps_list, panel_count=4096, grading_exponent=2.0,
                   cfg: NormConfig | None = None, tol_density=1e-10, tol_neumann=1e-10,
                   max_iter=500, workers=None) -> ResponseReport:
    """Densities along `eps_list` compared with the first-order prediction.

    Entries whose density does not converge keep ``status="no-convergence"``
    and are left out of the rate fit.  With more than one worker the eps
    entries are computed concurrently; results are merged by eps so the
    report does not depend on scheduling.
    """
    eps_list = [float(e) for e in eps_list]
    if any(not 0 < e < 0.1 for e in eps_list):
        raise ValueError("sweep eps values must lie in (0, 0.1)")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if model0.eps != 0:
        model0 = model0.with_eps(0.0)
    cfg = cfg or NormConfig(p=model0.p)
    ctx0 = make_context(model0, panel_count, grading_exponent, cfg)
    h0 = invariant_density(ctx0, tol_density, max_iter)
    q_thm = kernel_q(ctx0, h0, coefficients(model0))
    q_fam = kernel_q_family(h0)
    gap = lp_norm(q_thm - q_fam, cfg)
    # the exact kernel has zero mean; interpolation leaves O(n^-2) behind
    u, terms = neumann_series(ctx0, mean_zero_project(q_thm), tol_neumann)
    report = ResponseReport(h0, q_thm, q_fam, u, gap, len(terms),
                            kernel_mean=q_thm.integral())

    def run(eps):
        ctx = make_context(model0.with_eps(eps), panel_count, grading_exponent, cfg)
        try:
            h = invariant_density(ctx, tol_density, max_iter)
        except ConvergenceError as exc:
            return SweepEntry(eps, "no-convergence", exc.residual, exc.iterations), None
        fd = (h.h - h0.h) / eps
        entry = SweepEntry(eps, "ok", h.residual, h.iterations,
                           lp_norm(fd - u, cfg), lp_norm(h.h - h0.h, cfg))
        return entry, h

    n_workers = workers if workers is not None else _worker_count()
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            results = dict(zip(eps_list, pool.map(run, eps_list)))
    else:
        results = {e: run(e) for e in eps_list}
    for eps in eps_list:
        entry, h = results[eps]
        report.sweep.append(entry)
        if h is not None:
            report.densities[eps] = h
    ok = report.errors()
    report.fitted_rate = fit_rate([e for e, _ in ok], [v for _, v in ok])
    return report
