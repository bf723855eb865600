"""Two-branch interval maps with a cusp, and the tent family with k-th root cusp.

A `MapModel` is a map of [0, 1] whose left branch on [0, c) and right branch
on (c, 1] are monotone, vanish at 0 and 1, and meet at height `a_eps` where
|T'| blows up like ``|x - c|**beta``.  Subclasses supply the closed forms;
branch inversion and the numerical audit are generic.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError, DomainError, SingularityError
from .function_space import NormConfig, graded_mesh, lp_norm

# bisect down to double resolution next to c: near the cusp |T'| is large
# and Newton steps tend to leave the bracket
_BISECT_WIDTH = 2.0 ** -56
_NEWTON_STEPS = 2


class MapModel(ABC):
    """Interface for a piecewise monotone two-branch map with a cusp at `c`."""

    c: float
    a_eps: float
    beta: float
    p: float
    eps: float

    @abstractmethod
    def _value(self, x: np.ndarray) -> np.ndarray:
        """T on points with x != c."""

    @abstractmethod
    def _deriv(self, x: np.ndarray, order: int) -> np.ndarray:
        """T^(order) on points with x != c."""

    @abstractmethod
    def _eps_value(self, x: np.ndarray) -> np.ndarray:
        """d/d(eps) of T at fixed x."""

    @abstractmethod
    def _eps_slope(self, x: np.ndarray) -> np.ndarray:
        """d/d(eps) of T' at fixed x."""

    @property
    def branch_signs(self):
        """Sign of T' on the left and right branch, read from the model."""
        x = np.array([0.5 * self.c, 0.5 * (1 + self.c)])
        s = np.sign(self._deriv(x, 1))
        return int(s[0]), int(s[1])

    def _check_domain(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
            raise DomainError("points must lie in [0, 1]")
        return x

    def _check_regular(self, x):
        x = self._check_domain(x)
        if np.any(x == self.c):
            raise SingularityError(f"derivative undefined at the cusp c={self.c}")
        return x

    def evaluate(self, x):
        """T(x); at x = c the common one-sided limit a_eps is returned."""
        x = self._check_domain(x)
        at_c = x == self.c
        safe = np.where(at_c, 0.0, x)
        return np.where(at_c, self.a_eps, self._value(safe))

    def derivative(self, x, order=1):
        if order not in (1, 2, 3):
            raise ValueError("order must be 1, 2 or 3")
        return self._deriv(self._check_regular(x), order)

    def eps_derivative(self, x, which="value"):
        if which == "value":
            x = self._check_domain(x)
            at_c = x == self.c
            return np.where(at_c, self._eps_limit_at_c(), self._eps_value(np.where(at_c, 0.0, x)))
        if which == "slope":
            return self._eps_slope(self._check_regular(x))
        raise ValueError("which must be 'value' or 'slope'")

    def _eps_limit_at_c(self):
        # one-sided limit of d/d(eps) T towards c, by evaluating very close
        return float(self._eps_value(np.array([self.c - 2.0 ** -45]))[0])

    def branch_domain(self, branch):
        if branch == "left":
            return 0.0, self.c
        if branch == "right":
            return self.c, 1.0
        raise ValueError("branch must be 'left' or 'right'")

    def branch_inverse(self, branch, y):
        """Preimage of `y` in [0, a_eps] on one branch.

        Bisection on the monotone branch down to the double spacing at c, then
        two Newton steps kept only if they stay inside the final bracket.
        """
        lo0, hi0 = self.branch_domain(branch)
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(y > self.a_eps) or np.any(np.isnan(y)):
            raise DomainError(f"branch inverse needs y in [0, {self.a_eps}]")
        scalar = y.ndim == 0
        y = np.atleast_1d(y)
        sign = self.branch_signs[0 if branch == "left" else 1]
        lo = np.full(y.shape, lo0)
        hi = np.full(y.shape, hi0)
        steps = int(math.ceil(math.log2((hi0 - lo0) / _BISECT_WIDTH)))
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            below = sign * (self.evaluate(mid) - y) < 0
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        x = 0.5 * (lo + hi)
        for _ in range(_NEWTON_STEPS):
            ok = x != self.c
            if not ok.any():
                break
            xs = np.where(ok, x, 0.25)
            step = (self.evaluate(xs) - y) / self._deriv(xs, 1)
            cand = xs - step
            keep = ok & (cand >= lo) & (cand <= hi) & np.isfinite(cand)
            x = np.where(keep, cand, x)
        # endpoints are exact preimages of 0 and of the peak
        x = np.where(y == 0, lo0 if branch == "left" else hi0, x)
        x = np.where(y == self.a_eps, self.c, x)
        return float(x[0]) if scalar else x

    def transfer_one(self, y):
        """``sum 1/|T'(y_j)|`` over preimages of points y in [0, a_eps]."""
        total = np.zeros_like(np.asarray(y, dtype=float))
        for br in ("left", "right"):
            pre = self.branch_inverse(br, y)
            ok = pre != self.c
            d = self._deriv(np.where(ok, pre, 0.25), 1)
            total = total + np.where(ok, 1.0 / np.abs(d), 0.0)
        return total


@dataclass(frozen=True)
class CuspTentFamily(MapModel):
    """Tent map with k-th root cusp, scaled by (1 - eps).

    ``T(x) = (1 - eps) * (1 - 3 s / 4 - s**(1/k) / 4)`` with ``s = |1 - 2x|``,
    which is the same expression on both branches.  Peak ``a_eps = 1 - eps``
    at ``c = 1/2`` and singularity exponent ``beta = (1 - k) / k``.
    """

    k: int = 4
    eps: float = 0.0
    p: float = 1.5
    c: float = field(default=0.5, init=False)

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 3:
            raise ConfigError(f"k must be an integer >= 3, got {self.k}")
        if not self.p > 1:
            raise ConfigError(f"p must exceed 1, got {self.p}")
        if not self.k > 2 * self.p:
            raise ConfigError(f"need k > 2p, got k={self.k}, p={self.p}")
        if not 0.0 <= self.eps < 0.1:
            raise ConfigError(f"eps must lie in [0, 0.1), got {self.eps}")

    @property
    def a_eps(self):
        return 1.0 - self.eps

    @property
    def beta(self):
        return float(self.beta_exact)

    @property
    def beta_exact(self):
        return Fraction(1 - self.k, self.k)

    @property
    def branch_signs(self):
        return 1, -1

    def with_eps(self, eps):
        return CuspTentFamily(self.k, eps, self.p)

    def _shape(self, s):
        return 1.0 - 0.75 * s - 0.25 * s ** (1.0 / self.k)

    def _value(self, x):
        return (1.0 - self.eps) * self._shape(np.abs(1.0 - 2.0 * x))

    def _slope0(self, x):
        # T_0'(x)
        k = self.k
        s = np.abs(1.0 - 2.0 * x)
        side = np.where(x < self.c, 1.0, -1.0)
        return side * (1.5 + s ** (1.0 / k - 1.0) / (2.0 * k))

    def _deriv(self, x, order):
        k = self.k
        scale = 1.0 - self.eps
        if order == 1:
            return scale * self._slope0(x)
        s = np.abs(1.0 - 2.0 * x)
        if order == 2:
            return scale * (k - 1) / k ** 2 * s ** (1.0 / k - 2.0)
        if order == 3:
            side = np.where(x < self.c, 1.0, -1.0)
            return side * scale * 2.0 * (k - 1) * (2 * k - 1) / k ** 3 * s ** (1.0 / k - 3.0)
        raise ValueError(order)

    def _eps_value(self, x):
        return -self._shape(np.abs(1.0 - 2.0 * x))

    def _eps_limit_at_c(self):
        return -1.0

    def _eps_slope(self, x):
        return -self._slope0(x)


def branch_inverse(model: MapModel, branch: str, y):
    return model.branch_inverse(branch, y)


# ---------------------------------------------------------------------------
# audit


@dataclass
class AssumptionAudit:
    """Measured constants for (A1)-(A8) and per-assumption verdicts."""

    eps: float
    beta: float
    theta_hat: float
    lambda_hat: float
    M_hat: float
    M2_hat: float
    lp_operator_bound: float
    C1: tuple
    C2: tuple
    C3: tuple
    a8_sup: float
    a8_inf: float
    second_modulus: float
    mixing_iterations: int
    verdicts: dict

    @property
    def passed(self):
        return all(self.verdicts.values())

    def row(self):
        return {
            "eps": self.eps, "beta": self.beta, "theta_hat": self.theta_hat,
            "lambda_hat": self.lambda_hat, "M_hat": self.M_hat, "M2_hat": self.M2_hat,
            "C1": self.C1[0], "C2": self.C2[0], "C3": self.C3[0],
            "a8_sup": self.a8_sup, "a8_inf": self.a8_inf,
            "second_modulus": self.second_modulus,
            "mixing_iterations": self.mixing_iterations,
            **{k: int(v) for k, v in self.verdicts.items()},
        }


def _extrapolate(seq):
    """Limit of a sequence with geometric error decay (Richardson/Aitken)."""
    r = np.asarray(seq, dtype=float)
    d1, d0 = r[-1] - r[-2], r[-2] - r[-3]
    if d1 == 0 or d0 == 0 or abs(d1) < 1e-15 * abs(r[-1]):
        return float(r[-1])
    rho = d1 / d0
    if not 0 < rho < 1:
        return float(r[-1])
    return float(r[-1] + d1 * rho / (1 - rho))


def cusp_limits(model: MapModel, order: int, j_range=range(10, 41)):
    """One-sided limits of ``|T^(i)(x)| / |x-c|^(beta-i+1)`` at c (left, right)."""
    out = []
    for side in (-1.0, 1.0):
        d = 2.0 ** -np.array(list(j_range), dtype=float)
        x = model.c + side * d
        ratio = np.abs(model.derivative(x, order)) / d ** (model.beta - order + 1)
        out.append(_extrapolate(ratio))
    return tuple(out)


def _audit_grid(model, grid_size):
    u = np.linspace(0.0, 1.0, grid_size + 1)
    dyadic = 2.0 ** -np.arange(2, 41, dtype=float)
    x = np.concatenate([u, model.c - dyadic, model.c + dyadic])
    x = np.unique(x[(x >= 0) & (x <= 1) & (x != model.c)])
    return x


def _interval_image(model, lo, hi):
    if lo < model.c < hi:
        ends = model.evaluate(np.array([lo, hi]))
        return float(ends.min()), model.a_eps
    ends = model.evaluate(np.array([lo, hi]))
    return float(ends.min()), float(ends.max())


def covering_iterations(model: MapModel, level=8, max_iter=60, margin=1e-3):
    """Largest number of iterations any dyadic interval of the given level
    needs before its image covers the core ``[T(a_eps), a_eps]`` shrunk by
    `margin` at both ends; -1 if one never does.

    The core is forward invariant and carries the invariant density.  For
    eps = 0 it is all of [0, 1]; for eps > 0 the points below T(a_eps) are
    transient and no image ever returns to them.
    """
    worst = 0
    n = 2 ** level
    floor = float(model.evaluate(np.array([model.a_eps]))[0]) + margin
    target = model.a_eps - margin
    for i in range(n):
        lo, hi = i / n, (i + 1) / n
        for it in range(1, max_iter + 1):
            lo, hi = _interval_image(model, lo, hi)
            if lo <= floor and hi >= target:
                worst = max(worst, it)
                break
        else:
            return -1
    return worst


def _second_order_coefficients(model, y):
    t1 = model.derivative(y, 1)
    t2 = model.derivative(y, 2)
    t3 = model.derivative(y, 3)
    first = 3.0 * t2 / t1 ** 3
    zeroth = 3.0 * t2 ** 2 / t1 ** 4 - t3 / t1 ** 3
    return first, zeroth


def audit_assumptions(model: MapModel, grid_size: int = 4000,
                      cfg: NormConfig | None = None, ulam_panels=256) -> AssumptionAudit:
    """Measure the constants behind (A1)-(A8) on a sample grid.

    Failures are reported as verdicts.  The mixing assumption (A5) is checked
    heuristically: the Ulam matrix on `ulam_panels` cells must have its second
    eigenvalue modulus below 1 - 1e-3 and every dyadic interval of level 8
    must cover the invariant core [T(a_eps), a_eps], up to 1e-3 at each end,
    within 60 iterations.
    """
    if grid_size < 1000:
        raise ValueError("grid_size must be at least 1000")
    cfg = cfg or NormConfig(p=model.p)
    c, beta, p = model.c, model.beta, model.p
    x = _audit_grid(model, grid_size)
    left, right = x[x < c], x[x > c]
    T = model.evaluate(x)
    d1 = model.derivative(x, 1)
    d2 = model.derivative(x, 2)
    d3 = model.derivative(x, 3)
    verdicts = {}

    tl, tr = model.evaluate(left), model.evaluate(right)
    verdicts["A1"] = bool(np.all(np.diff(tl) > 0) and np.all(np.diff(tr) < 0))

    ends = model.evaluate(np.array([0.0, 1.0]))
    lim_l = _extrapolate(model.evaluate(c - 2.0 ** -np.arange(10, 41.0)))
    lim_r = _extrapolate(model.evaluate(c + 2.0 ** -np.arange(10, 41.0)))
    verdicts["A2"] = bool(np.all(np.abs(ends) < 1e-14)
                          and abs(lim_l - model.a_eps) < 1e-9
                          and abs(lim_r - model.a_eps) < 1e-9
                          and 0.0 <= model.a_eps <= 1.0)

    # C3 away from c: finite values and analytic derivatives consistent with
    # central differences of the next lower order
    away = x[np.abs(x - c) > 1e-2]
    away = away[(away > 1e-4) & (away < 1 - 1e-4)]
    h = 1e-6
    consistent = True
    for order in (1, 2, 3):
        lower = (lambda z: model.evaluate(z)) if order == 1 else (lambda z, o=order: model.derivative(z, o - 1))
        fd = (lower(away + h) - lower(away - h)) / (2 * h)
        an = model.derivative(away, order)
        consistent &= bool(np.all(np.abs(fd - an) <= 1e-5 * np.maximum(1.0, np.abs(an))))
    verdicts["A3"] = bool(consistent and np.all(np.isfinite(T)) and np.all(np.isfinite(d1))
                          and np.all(np.isfinite(d2)) and np.all(np.isfinite(d3)))

    theta = float(np.min(np.abs(d1)))
    verdicts["A4"] = theta > 1.0

    from .transfer_operator import OperatorContext, ulam_matrix
    from .spectral import ulam_spectrum
    ctx = OperatorContext(model, graded_mesh(ulam_panels, c, model.a_eps), cfg)
    second = ulam_spectrum(ulam_matrix(ctx), 2).second_modulus
    cover = covering_iterations(model)
    verdicts["A5"] = bool(second < 1 - 1e-3 and cover > 0)

    C1, C2, C3 = (cusp_limits(model, o) for o in (1, 2, 3))
    near = 2.0 ** -40
    slopes = model.derivative(np.array([c - near, c + near]), 1)
    signs_ok = slopes[0] > 1e6 and slopes[1] < -1e6
    agree = all(v[0] > 0 and np.isfinite(v[0]) and abs(v[0] - v[1]) <= 1e-6 * v[0]
                for v in (C1, C2, C3))
    verdicts["A6"] = bool(signs_ok and agree)
    verdicts["A7"] = bool(agree)

    dist = np.abs(x - c)
    ratios = [np.abs(d) / dist ** (beta - i) for i, d in enumerate((d1, d2, d3))]
    a8_sup = float(max(r.max() for r in ratios))
    a8_inf = float(ratios[0].min())
    beta_ok = -1.0 < beta < (1 - 2 * p) / (2 * p)
    verdicts["A8"] = bool(np.isfinite(a8_sup) and a8_inf > 0 and beta_ok)

    lam = 1.0 / theta
    M_hat = lp_norm(lambda y: model.derivative(y, 2) / model.derivative(y, 1) ** 2, cfg,
                    2 * p, graded_mesh(256, c, 1.0))
    # second-order inequality constant, see README "Constants"
    kappa = float(np.max(model.transfer_one(np.linspace(0, model.a_eps, 2001)))) ** (1 - 1 / p)
    first, _ = _second_order_coefficients(model, x)
    zeroth_norm = lp_norm(lambda y: _second_order_coefficients(model, y)[1], cfg, p,
                          graded_mesh(256, c, 1.0))
    from .function_space import embedding_constant
    emb = embedding_constant(p)
    M2 = kappa * (1 + lam + M_hat * emb + float(np.max(np.abs(first))) + emb * zeroth_norm)

    return AssumptionAudit(
        eps=float(model.eps), beta=beta, theta_hat=theta, lambda_hat=lam,
        M_hat=M_hat, M2_hat=M2, lp_operator_bound=kappa,
        C1=C1, C2=C2, C3=C3, a8_sup=a8_sup, a8_inf=a8_inf,
        second_modulus=float(second), mixing_iterations=int(cover), verdicts=verdicts,
    )
