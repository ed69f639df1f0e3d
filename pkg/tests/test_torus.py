import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bounded_away_from_zero, random_divfree, random_scalar, random_vector
from pvlab.dynamics import momentum, taylor_green
from pvlab.torus import Grid, read_field_dump, write_field_csv, write_field_dump


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(4, 32)
    with pytest.raises(ValueError):
        Grid(2, 33)
    g = Grid(3, 16)
    assert g.shape == (16, 16, 16) and g.vshape == (3, 16, 16, 16)
    assert g.points.shape == (16**3, 3)


def test_constant_maps_to_zero_mode(grid):
    fh = grid.transform(np.ones(grid.shape))
    assert fh[0, 0] == pytest.approx(1.0, abs=1e-15)
    fh[0, 0] = 0
    assert np.abs(fh).max() < 1e-15


def test_sine_is_single_conjugate_pair(grid):
    x = grid.x[0]
    fh = grid.transform(np.sin(x))
    nz = np.argwhere(np.abs(fh) > 1e-12)
    assert sorted(map(tuple, nz)) == [(1, 0), (grid.n - 1, 0)]
    assert fh[1, 0] == pytest.approx(-0.5j)
    assert fh[-1, 0] == pytest.approx(0.5j)


@pytest.mark.parametrize("dim,n", [(2, 64), (3, 16)])
def test_round_trip(dim, n):
    g = Grid(dim, n)
    f = random_vector(g, np.random.default_rng(1), kmax=5)
    back = g.inverse_transform(g.transform(f))
    assert np.abs(back - f).max() <= 1e-12 * np.abs(f).max()


def test_basic_derivatives(grid):
    x, y = grid.x
    assert np.allclose(grid.gradient(np.sin(x)), [np.cos(x), 0 * x], atol=1e-13)
    assert np.abs(grid.divergence(np.array([np.sin(y), 0 * x]))).max() < 1e-13
    f = np.sin(x) * np.cos(y)
    assert np.abs(grid.laplacian(f) + 2 * f).max() < 1e-12


def test_vector_gradient_layout(grid):
    x, y = grid.x
    u = np.array([np.sin(y), np.cos(x)])
    du = grid.gradient(u)
    assert np.allclose(du[1, 0], np.cos(y), atol=1e-13)  # d_y u^1
    assert np.allclose(du[0, 1], -np.sin(x), atol=1e-13)  # d_x u^2
    assert np.abs(du[0, 0]).max() < 1e-13 and np.abs(du[1, 1]).max() < 1e-13


def test_advect_examples(grid):
    x, y = grid.x
    c = np.array([0.7, -1.3])
    w = np.array([np.sin(x), 0 * x])
    out = grid.advect(grid.constant(c), w)
    assert np.allclose(out, [c[0] * np.cos(x), 0 * x], atol=1e-12)
    rng = np.random.default_rng(3)
    assert np.abs(grid.advect(random_divfree(grid, rng), grid.constant(c))).max() < 1e-13


def test_taylor_green_self_advection_is_gradient(grid):
    u0 = taylor_green(grid)
    adv = grid.advect(u0, u0)
    x, y = grid.x
    # (u0·∇)u0 = -∇ (cos 2x + cos 2y)/4
    assert np.allclose(adv, [np.sin(2 * x) / 2, np.sin(2 * y) / 2], atol=1e-12)
    assert np.abs(grid.leray_project(adv)[0]).max() < 1e-12


def test_advect_dealiases_product():
    g = Grid(2, 16)
    x, y = g.x
    # each factor sits inside the 2/3 band, the product (mode 10) does not
    u = np.array([np.cos(5 * x), 0 * x])
    w = np.array([np.sin(5 * x), 0 * x])
    out = g.advect(u, w)
    # 5 cos^2(5x) = 5/2 (1 + cos 10x); the k = 10 part is outside the band
    assert np.allclose(out, [np.full_like(x, 2.5), 0 * x], atol=1e-13)
    u = np.array([np.ones_like(x), 0 * x])
    w = np.array([np.sin(6 * x), 0 * x])  # |k| = 6 > 16 // 3
    assert np.abs(g.advect(u, w)).max() < 1e-13


def test_lie_bracket_examples(grid):
    x, y = grid.x
    u = np.array([np.sin(y), 0 * x])
    v = grid.constant([0.0, 1.0])
    assert np.allclose(grid.lie_bracket(u, v), [-np.cos(y), 0 * x], atol=1e-12)
    assert np.abs(grid.lie_bracket(u, u)).max() == 0.0
    assert np.abs(grid.lie_bracket(grid.constant([1, 2]), grid.constant([3, -1]))).max() < 1e-14


def test_lie_bracket_antisymmetry(grid):
    rng = np.random.default_rng(11)
    u, v = random_vector(grid, rng), random_vector(grid, rng)
    assert np.abs(grid.lie_bracket(u, v) + grid.lie_bracket(v, u)).max() < 1e-13


def test_leray_examples(grid):
    x, y = grid.x
    assert np.abs(grid.leray_project(grid.gradient(np.sin(x)))[0]).max() < 1e-14
    assert np.abs(grid.leray_project(np.array([np.sin(x), 0 * x]))[0]).max() < 1e-14
    w = random_divfree(grid, np.random.default_rng(5))
    assert np.abs(grid.leray_project(w)[0] - w).max() < 1e-13


def test_leray_decomposition(grid):
    rng = np.random.default_rng(7)
    u = random_vector(grid, rng) + grid.constant([0.3, -0.2])
    proj, phi = grid.leray_project(u)
    scale = np.abs(u).max()
    assert np.abs(grid.divergence(proj)).max() <= 1e-10 * scale
    assert np.abs(proj + grid.gradient(phi) - u).max() <= 1e-12 * scale
    assert np.allclose(grid.integral(proj), [0.3, -0.2], atol=1e-14)
    assert np.abs(grid.leray_project(proj)[0] - proj).max() <= 1e-12 * scale
    w = random_divfree(grid, rng)
    assert abs(grid.inner(grid.gradient(phi), w)) <= 1e-10 * scale


def test_leray_3d():
    g = Grid(3, 16)
    u = random_vector(g, np.random.default_rng(2), kmax=3)
    proj, _ = g.leray_project(u)
    assert np.abs(g.divergence(proj)).max() <= 1e-10 * np.abs(u).max()


def test_integrals(grid):
    x, y = grid.x
    assert grid.integral(np.ones(grid.shape)) == 1.0
    assert abs(grid.integral(np.sin(x))) < 1e-14
    assert grid.lq_integral(np.array([np.sin(x), 0 * x]), 2) == pytest.approx(0.5, abs=1e-14)
    c = np.array([0.6, 0.8 * 2])
    assert grid.lq_integral(grid.constant(c), 3.5) == pytest.approx(np.linalg.norm(c) ** 3.5, rel=1e-14)
    with pytest.raises(ValueError):
        grid.lq_integral(grid.constant(c), 1.0)


@pytest.mark.parametrize("q", [2, 3, 4])
def test_first_ibp_identity(grid, q):
    """∫ ‖u‖^{q-2} <(v·∇)u, u> dx = 0 for divergence-free v."""
    rng = np.random.default_rng(100 + q)
    for _ in range(5):
        u = bounded_away_from_zero(grid, rng)
        v = random_divfree(grid, rng)
        val = grid.inner(grid.advect(v, u), momentum(u, q))
        scale = grid.l2_norm(momentum(u, q)) * grid.l2_norm(grid.gradient(u)) * grid.l2_norm(v)
        assert abs(val) <= 1e-8 * scale


@pytest.mark.parametrize("q", [2, 3, 4])
def test_second_ibp_identity(grid, q):
    """∫ (u·∇)<v, ‖u‖^{q-2} u> dx = 0 for divergence-free u."""
    rng = np.random.default_rng(200 + q)
    for _ in range(5):
        u = bounded_away_from_zero(grid, rng)
        v = random_divfree(grid, rng)
        g = np.sum(v * momentum(u, q), axis=0)
        val = grid.integral(np.sum(u * grid.gradient(g), axis=0))
        scale = grid.l2_norm(u) * grid.l2_norm(grid.gradient(g))
        assert abs(val) <= 1e-8 * scale


def test_interpolation_matches_closed_form(grid):
    x, y = grid.x
    u = np.array([np.sin(x + 2 * y), np.cos(3 * x) * np.sin(y)])
    pts = np.random.default_rng(4).uniform(-3, 9, size=(500, 2))
    px, py = pts.T
    exact = np.array([np.sin(px + 2 * py), np.cos(3 * px) * np.sin(py)]).T
    assert np.abs(grid.interpolate(u, pts) - exact).max() < 1e-12
    assert np.abs(grid.interpolate(u, grid.points) - u.reshape(2, -1).T).max() < 1e-12


def test_interpolant_gradient(grid):
    x, y = grid.x
    u = np.array([np.sin(x) * np.cos(2 * y), np.cos(y)])
    pts = np.random.default_rng(8).uniform(0, 2 * np.pi, size=(50, 2))
    px, py = pts.T
    d = grid.interpolant(u).gradient()(pts)  # component j*N + i = d_j u^i
    assert np.allclose(d[:, 0], np.cos(px) * np.cos(2 * py), atol=1e-12)
    assert np.allclose(d[:, 2], -2 * np.sin(px) * np.sin(2 * py), atol=1e-12)
    assert np.allclose(d[:, 3], -np.sin(py), atol=1e-12)
    assert np.allclose(d[:, 1], 0, atol=1e-12)


def test_field_dump_round_trip(tmp_path, grid):
    u = random_vector(grid, np.random.default_rng(9))
    write_field_dump(tmp_path / "u.pvl", grid, u)
    raw = (tmp_path / "u.pvl").read_bytes()
    assert raw[:4] == b"PVL1" and raw[4] == 2 and raw[5] == 2
    assert int.from_bytes(raw[6:10], "little") == 64
    assert len(raw) == 10 + 8 * u.size
    g2, back = read_field_dump(tmp_path / "u.pvl")
    assert g2 == grid and np.array_equal(back, u)
    f = u[0]
    write_field_dump(tmp_path / "f.pvl", grid, f)
    assert np.array_equal(read_field_dump(tmp_path / "f.pvl")[1], f)


def test_field_dump_rejects_bad_input(tmp_path, grid):
    p = tmp_path / "bad.pvl"
    p.write_bytes(b"XXXX" + bytes(6))
    with pytest.raises(ValueError):
        read_field_dump(p)
    write_field_dump(p, grid, grid.zeros())
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_field_dump(p)


def test_field_csv(tmp_path):
    g = Grid(2, 8)
    u = random_vector(g, np.random.default_rng(10), kmax=2)
    write_field_csv(tmp_path / "u.csv", g, u)
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,u1,u2"
    data = np.loadtxt(tmp_path / "u.csv", delimiter=",", skiprows=1)
    assert data.shape == (64, 4)
    assert np.allclose(data[:, :2], g.points) and np.allclose(data[:, 2:], u.reshape(2, -1).T)


def test_non_finite_input_rejected(grid):
    f = np.zeros(grid.shape)
    f[3, 3] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        grid.transform(f)


small = Grid(2, 16)
coef = st.floats(-2, 2, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(a=coef, b=coef, c=coef, kx=st.integers(-4, 4), ky=st.integers(-4, 4))
def test_laplacian_of_mode_property(a, b, c, kx, ky):
    x, y = small.x
    f = a * np.cos(kx * x + ky * y) + b * np.sin(kx * x + ky * y) + c
    assert np.allclose(small.laplacian(f), -(kx**2 + ky**2) * (f - c), atol=1e-11)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=coef, beta=coef)
def test_projection_linear_and_idempotent(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    u, w = random_vector(small, rng, 3), random_vector(small, rng, 3)
    P = lambda f: small.leray_project(f)[0]
    assert np.allclose(P(alpha * u + beta * w), alpha * P(u) + beta * P(w), atol=1e-12)
    assert np.allclose(P(P(u)), P(u), atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_inner_symmetric_and_skew_gradient(seed):
    rng = np.random.default_rng(seed)
    u, v = random_vector(small, rng, 3), random_vector(small, rng, 3)
    assert small.inner(u, v) == pytest.approx(small.inner(v, u), abs=1e-15)
    f = random_scalar(small, rng, 3)
    # ∫ u·∇f = -∫ f div u on the discrete grid
    lhs = small.integral(np.sum(u * small.gradient(f), axis=0))
    rhs = -small.integral(f * small.divergence(u))
    assert lhs == pytest.approx(rhs, abs=1e-12)
