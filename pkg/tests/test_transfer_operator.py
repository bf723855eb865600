import numpy as np
import pytest

from cusp_response.errors import ConfigError
from cusp_response.function_space import (
    graded_mesh, integrate, lp_norm, project, random_corpus, sample, uniform_mesh,
)
from cusp_response.spectral import invariant_density, l1_distance_to_cells, ulam_fixed_density
from cusp_response.transfer_operator import (
    OperatorContext, apply, apply_D_eps, apply_derivative, apply_second, make_context,
    operator_gap_norm, pullback_mesh, rescaled_mesh, transfer_values, ulam_matrix, write_trace,
    _first_integrand, _second_integrand,
)


@pytest.fixture(scope="module", params=[0.0, 0.05])
def ctx(request, model0, cfg):
    return make_context(model0.with_eps(request.param), 512, cfg=cfg)


def test_context_requires_peak_node(model0, cfg):
    with pytest.raises(ConfigError):
        OperatorContext(model0.with_eps(0.05), graded_mesh(64), cfg)


def test_mass_conservation(ctx):
    for f in random_corpus(ctx.mesh, 20, 4):
        assert apply(ctx, f).integral() == pytest.approx(f.integral(), abs=5e-7)


def test_zero_beyond_peak(ctx):
    a = ctx.model.a_eps
    for f in random_corpus(ctx.mesh, 5, 5):
        pf = apply(ctx, f)
        x = np.linspace(a, 1, 101)
        assert np.all(pf(x) == 0.0)
        assert pf(a) == 0.0


def test_positivity(ctx):
    x = np.linspace(0, 1, 20001)
    for f in random_corpus(ctx.mesh, 20, 6, nonnegative=True):
        assert apply(ctx, f)(x).min() > -1e-10


def test_duality(ctx):
    m, cfg = ctx.model, ctx.cfg
    pulled = pullback_mesh(m, ctx.mesh)
    for f, g in zip(random_corpus(ctx.mesh, 10, 7), random_corpus(ctx.mesh, 10, 8)):
        pf = apply(ctx, f)
        lhs = integrate(lambda x: pf(x) * g(x), ctx.mesh, cfg)
        rhs = integrate(lambda x: f(x) * g(m.evaluate(x)), pulled, cfg)
        assert lhs == pytest.approx(rhs, abs=1e-7)


def test_pointwise_definition(ctx):
    m = ctx.model
    f = lambda y: np.cos(3 * y) + 2  # noqa: E731
    x = np.array([0.1, 0.3, 0.77, 0.9])
    expected = sum(f(y) / abs(m.derivative(y, 1))
                   for y in (m.branch_inverse(b, x) for b in ("left", "right")))
    np.testing.assert_allclose(transfer_values(m, f, x), expected, rtol=1e-14)


def test_pullback_mesh_contains_preimages(ctx):
    m = ctx.model
    pulled = pullback_mesh(m, ctx.mesh)
    assert set(ctx.mesh.nodes) <= set(pulled.nodes)
    y = ctx.mesh.nodes[ctx.mesh.nodes <= m.a_eps][::37]
    for b in ("left", "right"):
        assert all(pulled.has_node(v) for v in m.branch_inverse(b, y))


def test_apply_linear(ctx):
    f, g = random_corpus(ctx.mesh, 2, 9)
    lhs = apply(ctx, 2 * f - g)
    rhs = 2 * apply(ctx, f) - apply(ctx, g)
    # compare Hermite data; cubic coefficients divide by h**2 on tiny panels
    x = ctx.mesh.nodes[:-1]
    np.testing.assert_allclose(lhs(x), rhs(x), atol=1e-13)
    np.testing.assert_allclose(lhs.derivative(x, 1), rhs.derivative(x, 1), atol=1e-12)


def test_zero_maps_to_zero(ctx):
    zero = project(np.zeros(ctx.mesh.nodes.size), ctx.mesh)
    for op in (apply, apply_derivative, apply_second):
        assert np.all(op(ctx, zero).coefficients == 0.0)


def _fd_points(ctx):
    x = np.linspace(0.02, ctx.model.a_eps - 0.02, 60)
    return x[np.abs(x - ctx.model.evaluate(np.array(1e-9))) > 1e-3]


def test_first_derivative_of_one_matches_difference_quotient(ctx):
    m = ctx.model
    one = lambda y: np.ones_like(y)  # noqa: E731
    zero = lambda y: np.zeros_like(y)  # noqa: E731
    x = _fd_points(ctx)
    h = 1e-6
    fd = (transfer_values(m, one, x + h) - transfer_values(m, one, x - h)) / (2 * h)
    exact = transfer_values(m, _first_integrand(m, one, zero), x)
    np.testing.assert_allclose(exact, fd, atol=1e-5, rtol=1e-5)
    # the spline output carries the same node values
    d = apply_derivative(ctx, project(np.ones(ctx.mesh.nodes.size), ctx.mesh))
    nodes = ctx.mesh.nodes[ctx.mesh.nodes < m.a_eps]
    np.testing.assert_allclose(d(nodes), transfer_values(m, _first_integrand(m, one, zero), nodes),
                               atol=1e-9)


def test_first_derivative_matches_difference_quotient(ctx):
    m = ctx.model
    x = _fd_points(ctx)
    h = 1e-6
    for f in random_corpus(ctx.mesh, 4, 10, kind="fourier"):
        d1 = lambda y: f.derivative(y, 1)  # noqa: E731
        fd = (transfer_values(m, f, x + h) - transfer_values(m, f, x - h)) / (2 * h)
        exact = transfer_values(m, _first_integrand(m, f, d1), x)
        np.testing.assert_allclose(exact, fd, atol=1e-5, rtol=1e-5)


def test_second_derivative_matches_difference_quotient(ctx):
    m = ctx.model
    x = _fd_points(ctx)
    h = 1e-4
    for f in random_corpus(ctx.mesh, 4, 11, kind="fourier"):
        d1 = lambda y: f.derivative(y, 1)  # noqa: E731
        d2 = lambda y: f.derivative(y, 2)  # noqa: E731
        v = [transfer_values(m, f, x + k * h) for k in (-1, 0, 1)]
        fd = (v[0] - 2 * v[1] + v[2]) / h ** 2
        exact = transfer_values(m, _second_integrand(m, f, d1, d2), x)
        np.testing.assert_allclose(exact, fd, atol=1e-4, rtol=1e-4)
        # apply_second interpolates the same node values
        s2 = apply_second(ctx, f)
        nodes = ctx.mesh.nodes[ctx.mesh.nodes < m.a_eps]
        np.testing.assert_allclose(s2(nodes), transfer_values(
            m, _second_integrand(m, f, d1, d2), nodes), atol=1e-9)


def test_apply_derivative_is_slope_of_apply(ctx):
    # Hermite data of apply are the values of apply_derivative at the nodes
    f = random_corpus(ctx.mesh, 1, 12)[0]
    nodes = ctx.mesh.nodes[:-1]
    np.testing.assert_allclose(apply(ctx, f).derivative(nodes, 1),
                               apply_derivative(ctx, f)(nodes), atol=1e-9)


# --- D_eps -----------------------------------------------------------------


def test_D_eps_identity_at_zero():
    g = sample(np.cos, uniform_mesh(32))
    assert apply_D_eps(g, 0.0) is g


def test_D_eps_of_constant():
    g = project(np.ones(33), uniform_mesh(32))
    out = apply_D_eps(g, 0.1 - 1e-12)
    s = 1 - (0.1 - 1e-12)
    assert out(np.array([0.0, 0.5, 0.89]))[0] == pytest.approx(1 / s)
    assert out(np.array([0.95, 1.0])).max() == 0.0
    assert out.integral() == pytest.approx(1.0, abs=1e-14)


def test_D_eps_rejects_large_eps():
    with pytest.raises(ConfigError):
        apply_D_eps(sample(np.cos, uniform_mesh(8)), 0.1)


@pytest.mark.parametrize("eps", [0.01, 0.05, 0.09])
def test_factorization(model0, cfg, ctx0, eps):
    ce = OperatorContext(model0.with_eps(eps), rescaled_mesh(ctx0.mesh, eps), cfg)
    for f in random_corpus(ctx0.mesh, 10, 13):
        diff = apply(ce, f) - apply_D_eps(apply(ctx0, f), eps)
        assert lp_norm(diff, cfg) < 1e-8


def test_factorization_across_layouts_shrinks(model0, cfg):
    # with each context on its own graded mesh the gap is interpolation error only
    gaps = []
    for n in (256, 1024):
        c0 = make_context(model0, n, cfg=cfg)
        ce = make_context(model0.with_eps(0.05), n, cfg=cfg)
        f = random_corpus(c0.mesh, 1, 14, kind="fourier")[0]
        gaps.append(lp_norm(apply(ce, f) - apply_D_eps(apply(c0, f), 0.05), cfg))
    assert gaps[1] < gaps[0] / 4


# --- Ulam --------------------------------------------------------------------


def test_ulam_column_stochastic(ctx):
    op = ulam_matrix(ctx)
    assert op.matrix.min() >= 0
    np.testing.assert_allclose(np.asarray(op.matrix.sum(axis=0)).ravel(), 1.0, atol=1e-12)


def test_ulam_survives_one_ulp_pieces(model0, cfg):
    # at eps = 0.04, n = 4096 a preimage lands one ulp below the cusp node
    op = ulam_matrix(make_context(model0.with_eps(0.04), 4096, cfg=cfg))
    np.testing.assert_allclose(np.asarray(op.matrix.sum(axis=0)).ravel(), 1.0, atol=1e-12)


def test_ulam_no_mass_beyond_peak(model0, cfg):
    ctx = make_context(model0.with_eps(0.09), 256, cfg=cfg)
    op = ulam_matrix(ctx)
    beyond = ctx.mesh.nodes[:-1] >= ctx.model.a_eps
    assert beyond.any()
    assert op.matrix[beyond].sum() == 0.0


def test_ulam_needs_cells(model0, cfg):
    ctx = OperatorContext(model0, graded_mesh(16), cfg)
    with pytest.raises(ValueError):
        ulam_matrix(ctx)


def test_ulam_action_matches_cell_averages(ctx):
    # Ulam acts on cell masses; agreement with the analytic operator is O(1/n)
    op = ulam_matrix(ctx)
    f = random_corpus(ctx.mesh, 1, 15, nonnegative=True, kind="fourier")[0]
    pf = apply(ctx, f)
    got = op.matrix @ op.cell_masses(f)
    want = op.cell_masses(pf)
    assert np.abs(got - want).sum() < 5.0 / op.size


def test_ulam_density_converges(model0, cfg):
    dists = []
    ref = invariant_density(make_context(model0, 1024, cfg=cfg), 1e-9).h
    for n in (128, 256, 512):
        op = ulam_matrix(make_context(model0, n, cfg=cfg))
        dists.append(l1_distance_to_cells(ref, op, ulam_fixed_density(op), cfg))
    assert dists[0] > dists[1] > dists[2]
    assert dists[2] < 0.01


def test_ulam_triplets(tmp_path, ctx0):
    op = ulam_matrix(ctx0)
    path = tmp_path / "ulam.csv"
    op.write_triplets(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "row,col,value"
    assert len(rows) - 1 == op.matrix.nnz
    r, c, v = rows[1].split(",")
    assert float(v) == op.matrix[int(r), int(c)]


def test_write_trace(tmp_path):
    path = tmp_path / "trace.csv"
    write_trace(path, [0.0, 0.5], [1.0, 1 / 3])
    assert path.read_text().splitlines() == ["node,value", "0,1", "0.5,0.33333333333333331"]


# --- operator gap -----------------------------------------------------------


def test_gap_norm_zero_at_eps_zero(ctx0):
    assert operator_gap_norm(ctx0, ctx0) < 1e-10


def test_gap_norm_needs_trials(ctx0):
    with pytest.raises(ValueError):
        operator_gap_norm(ctx0, ctx0, trial_count=10)


def test_gap_norm_decreases(model0, cfg, ctx0):
    vals = [operator_gap_norm(ctx0, make_context(model0.with_eps(e), 512, cfg=cfg))
            for e in (0.08, 0.04, 0.02)]
    assert vals[0] > vals[1] > vals[2] > 0
