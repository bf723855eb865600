"""Command-line driver: audits, densities, Ulam spectra and the response sweep.

Usage::

    cusp-response <audit|density|spectrum|response> --config run.cfg [--out DIR] [--svg]

Configs are flat ``key = value`` files with ``#`` comments.  Every command
writes one CSV into the output directory and nothing else (plus an SVG for
``response --svg``).  Floats are written with 17 significant digits so that
repeated runs give byte-identical files.

Exit codes: 0 success, 1 validation failure, 2 convergence failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConvergenceError
from .function_space import NormConfig
from .map_family import CuspTentFamily, audit_assumptions
from .response import response_sweep
from .spectral import invariant_density, resolvent_bound_proxy, ulam_spectrum
from .transfer_operator import make_context, ulam_matrix

log = logging.getLogger("cusp_response")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_IO = 0, 1, 2, 3

# thresholds checked by the response command
ROUTE_GAP_LIMIT = 1e-3
MIN_RATE = 0.5


def _g(v) -> str:
    return format(float(v), ".17g")


@dataclass(frozen=True)
class ExperimentConfig:
    k: int = 4
    p: float = 1.5
    eps_list: tuple = (0.04, 0.02, 0.01, 0.005)
    mesh_panels: int = 4096
    grading_exponent: float = 2.0
    quad_order: int = 8
    tol_density: float = 1e-10
    tol_neumann: float = 1e-10
    seed: int = 0
    output_dir: str = "results"

    def __post_init__(self):
        if not isinstance(self.k, int) or self.k < 3:
            raise ConfigError(f"k must be an integer >= 3, got {self.k!r}")
        if not self.p > 1:
            raise ConfigError(f"p must exceed 1, got {self.p}")
        if not self.k > 2 * self.p:
            raise ConfigError(f"need k > 2p, got k={self.k}, p={self.p}")
        eps = tuple(float(e) for e in self.eps_list)
        if not eps:
            raise ConfigError("eps_list is empty")
        if any(not 0.0 <= e < 0.1 for e in eps):
            raise ConfigError("eps values must lie in [0, 0.1)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_list must be strictly decreasing")
        object.__setattr__(self, "eps_list", eps)
        if self.mesh_panels < 32:
            raise ConfigError("mesh_panels must be at least 32")
        if self.grading_exponent < 1:
            raise ConfigError("grading_exponent must be >= 1")
        if self.quad_order < 4:
            raise ConfigError("quad_order must be at least 4")
        if not (self.tol_density > 0 and self.tol_neumann > 0):
            raise ConfigError("tolerances must be positive")

    @property
    def norm_config(self) -> NormConfig:
        return NormConfig(p=self.p, quadrature_order=self.quad_order)

    def model(self, eps=0.0) -> CuspTentFamily:
        return CuspTentFamily(self.k, float(eps), self.p)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "eps_list":
                text = ", ".join(_g(e) for e in v)
            elif isinstance(v, float):
                text = _g(v)
            else:
                text = str(v)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


_CASTS = {"k": int, "mesh_panels": int, "quad_order": int, "seed": int,
          "p": float, "grading_exponent": float, "tol_density": float,
          "tol_neumann": float, "output_dir": str,
          "eps_list": lambda s: tuple(float(t) for t in s.split(",") if t.strip())}


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CASTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _CASTS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------------------
# commands; each returns an exit code


def _write_rows(path: Path, header, rows):
    # assemble in memory first so a failure never leaves a truncated file
    lines = [list(header)] + [list(r) for r in rows]
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(lines)
    tmp.replace(path)


AUDIT_COLUMNS = ("eps", "beta", "theta_hat", "lambda_hat", "M_hat", "M2_hat", "C1", "C2",
                 "C3", "a8_sup", "a8_inf", "second_modulus", "mixing_iterations")


def cmd_audit(cfg: ExperimentConfig, out: Path, svg=False) -> int:
    rows, ok = [], True
    verdict_keys = None
    for eps in cfg.eps_list:
        audit = audit_assumptions(cfg.model(eps), cfg=cfg.norm_config)
        row = audit.row()
        verdict_keys = verdict_keys or list(audit.verdicts)
        rows.append([_g(row[c]) if c != "mixing_iterations" else str(row[c])
                     for c in AUDIT_COLUMNS] + [str(row[k]) for k in verdict_keys])
        ok &= audit.passed
        log.info("audit eps=%g passed=%s", eps, audit.passed)
    _write_rows(out / "audit.csv", AUDIT_COLUMNS + tuple(verdict_keys), rows)
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_density(cfg: ExperimentConfig, out: Path, svg=False) -> int:
    rows, code = [], EXIT_OK
    for eps in cfg.eps_list:
        ctx = make_context(cfg.model(eps), cfg.mesh_panels, cfg.grading_exponent,
                           cfg.norm_config)
        try:
            dens = invariant_density(ctx, cfg.tol_density)
        except ConvergenceError as exc:
            log.warning("density eps=%g did not converge (residual %.3e)", eps, exc.residual)
            rows.append([_g(eps), "nan", "nan", "no-convergence"])
            code = EXIT_CONVERGENCE
            continue
        for x, h in zip(ctx.mesh.nodes, dens.h.node_values()):
            rows.append([_g(eps), _g(x), _g(h), "ok"])
    _write_rows(out / "density.csv", ("eps", "x", "h", "status"), rows)
    return code


def cmd_spectrum(cfg: ExperimentConfig, out: Path, svg=False) -> int:
    rows, code = [], EXIT_OK
    for eps in cfg.eps_list:
        ctx = make_context(cfg.model(eps), cfg.mesh_panels, cfg.grading_exponent,
                           cfg.norm_config)
        try:
            rep = ulam_spectrum(ulam_matrix(ctx))
            proxy = resolvent_bound_proxy(ctx, seed=cfg.seed, tol=cfg.tol_neumann)
        except ConvergenceError:
            rows.append([_g(eps)] + ["nan"] * 5 + ["no-convergence"])
            code = EXIT_CONVERGENCE
            continue
        lam = rep.leading_eigenvalue
        rows.append([_g(eps), _g(lam.real), _g(lam.imag), _g(rep.second_modulus),
                     _g(rep.gap), _g(proxy), "ok"])
    _write_rows(out / "spectrum.csv", ("eps", "lambda1_re", "lambda1_im", "lambda2_mod", "gap",
                                       "resolvent_bound_proxy", "status"), rows)
    return code


def response_thresholds_met(report) -> bool:
    errs = [e for _, e in report.errors()]
    decreasing = len(errs) == len(report.sweep) and all(b < a for a, b in zip(errs, errs[1:]))
    return bool(decreasing and report.fitted_rate > MIN_RATE
                and report.kernel_route_gap < ROUTE_GAP_LIMIT)


def cmd_response(cfg: ExperimentConfig, out: Path, svg=False) -> int:
    eps = [e for e in cfg.eps_list if e > 0]
    if not eps:
        raise ConfigError("response needs at least one positive eps")
    report = response_sweep(cfg.model(0.0), eps, cfg.mesh_panels, cfg.grading_exponent,
                            cfg.norm_config, cfg.tol_density, cfg.tol_neumann)
    report.write_csv(out / "response.csv")
    if svg:
        plot_response(report, out / "response.svg")
    log.info("route gap %.3e, fitted rate %.3f", report.kernel_route_gap, report.fitted_rate)
    if any(e.status != "ok" for e in report.sweep):
        return EXIT_CONVERGENCE
    return EXIT_OK if response_thresholds_met(report) else EXIT_VALIDATION


def plot_response(report, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "cusp-response"
    x = np.linspace(0.0, 1.0, 2001)
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
    left.plot(x, report.h0.h(x), label="h0")
    left.plot(x, report.q_theorem(x), label="q")
    left.plot(x, report.u(x), label="u")
    left.set_xlabel("x")
    left.legend()
    ok = report.errors()
    if ok:
        right.loglog([e for e, _ in ok], [v for _, v in ok], "o-")
    right.set_xlabel("eps")
    right.set_ylabel("L^p error of difference quotient")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


COMMANDS = {"audit": cmd_audit, "density": cmd_density, "spectrum": cmd_spectrum,
            "response": cmd_response}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cusp-response", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="key = value config file")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--svg", action="store_true", help="also plot the response sweep")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args.svg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
