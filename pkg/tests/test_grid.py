import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fitnessflow.errors import ContractViolation, DimensionError
from fitnessflow.grid import (
    Grid,
    cell_divergence,
    face_gradient,
    face_upwind,
    integrate,
    laplacian,
    read_field_csv,
    write_field_csv,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_invalid_grids():
    with pytest.raises(DimensionError):
        Grid((1,), (0.1,))
    with pytest.raises(DimensionError):
        Grid((4,), (0.0,))
    with pytest.raises(DimensionError):
        Grid((2, 2, 2), (1.0, 1.0, 1.0))


def test_box_geometry():
    g = Grid.box((4, 5), (2.0, 1.0), origin=(1.0, -1.0))
    assert g.dim == 2 and g.n_cells == 20
    assert g.spacing == (0.5, 0.2)
    assert g.volume == pytest.approx(2.0)
    x, y = g.centers()
    assert x.shape == (4, 5)
    assert x[0, 0] == pytest.approx(1.25) and y[0, 0] == pytest.approx(-0.9)


def test_gradient_of_constant_is_zero():
    g = Grid.box(10)
    (gx,) = face_gradient(g, np.full(10, 3.7))
    assert np.all(gx == 0)


def test_gradient_of_linear_1d():
    g = Grid((10,), (0.1,))
    (x,) = g.centers()
    (gx,) = face_gradient(g, x)
    np.testing.assert_allclose(gx, 1.0, rtol=1e-12)
    assert gx.shape == (9,)


def test_gradient_of_linear_2d():
    g = Grid.box((6, 7), (1.0, 2.0))
    x, y = g.centers()
    gx, gy = face_gradient(g, x + 2 * y)
    np.testing.assert_allclose(gx, 1.0, rtol=1e-12)
    np.testing.assert_allclose(gy, 2.0, rtol=1e-12)


def test_gradient_dimension_mismatch():
    with pytest.raises(DimensionError):
        face_gradient(Grid.box(5), np.zeros(4))


def test_divergence_of_zero_flux():
    g = Grid.box((3, 4))
    out = cell_divergence(g, (np.zeros((2, 4)), np.zeros((3, 3))))
    assert np.all(out == 0)


def test_divergence_counts_flux_leaving_left_cell():
    g = Grid((3,), (0.5,))
    out = cell_divergence(g, (np.array([1.0, 0.0]),))
    np.testing.assert_array_equal(out, [2.0, -2.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(arrays(float, (2, 8), elements=finite), arrays(float, (3, 7), elements=finite))
def test_divergence_integrates_to_zero(fx, fy):
    g = Grid.box((3, 8), (1.3, 0.7))
    total = integrate(g, cell_divergence(g, (fx, fy)))
    scale = (np.abs(fx).sum() + np.abs(fy).sum() + 1.0) * g.cell_volume / min(g.spacing)
    assert abs(total) <= 1e-12 * scale


@settings(max_examples=50, deadline=None)
@given(
    arrays(float, 12, elements=st.floats(-10, 10)),
    arrays(float, 12, elements=st.floats(-10, 10)),
    st.floats(0.1, 5.0),
)
def test_summation_by_parts(phi, w, c):
    g = Grid((12,), (0.3,))
    (gp,) = face_gradient(g, phi)
    (gw,) = face_gradient(g, w)
    lhs = integrate(g, w * cell_divergence(g, (c * gp,)))
    rhs = -float(np.sum(gw * c * gp)) * g.cell_volume
    scale = float(np.sum(np.abs(gw * c * gp))) * g.cell_volume + 1e-300
    assert abs(lhs - rhs) <= 1e-12 * max(scale, 1.0)


def test_integrate_examples():
    assert integrate(Grid.box(37), np.ones(37)) == pytest.approx(1.0, rel=1e-15)
    g = Grid.box((4, 5), (2.0, 3.0))
    assert integrate(g, np.full((4, 5), 1.5)) == pytest.approx(9.0)
    g = Grid.box(100)
    (x,) = g.centers()
    assert integrate(g, x) == pytest.approx(0.5, abs=1e-15)
    per_species = integrate(g, np.stack([np.ones(100), 2 * np.ones(100)]))
    np.testing.assert_allclose(per_species, [1.0, 2.0])


def test_upwind_examples():
    g = Grid((2,), (1.0,))
    (F,) = face_upwind(g, np.array([2.0, 5.0]), (np.array([1.0]),))
    assert F[0] == 2.0
    (F,) = face_upwind(g, np.array([2.0, 5.0]), (np.array([-1.0]),))
    assert F[0] == -5.0
    g = Grid.box(6)
    v = np.linspace(-1, 1, 5)
    (F,) = face_upwind(g, np.full(6, 3.0), (v,))
    np.testing.assert_array_equal(F, 3.0 * v)
    (F,) = face_upwind(g, np.arange(6.0), (np.zeros(5),))
    assert np.all(F == 0)


def test_upwind_rejects_negative_density():
    g = Grid.box(3)
    with pytest.raises(ContractViolation):
        face_upwind(g, np.array([1.0, -1e-300, 1.0]), (np.ones(2),))


def test_laplacian_of_quadratic_interior():
    g = Grid((20,), (0.05,))
    (x,) = g.centers()
    lap = laplacian(g, x**2)
    np.testing.assert_allclose(lap[1:-1], 2.0, rtol=1e-9)


def test_field_csv_round_trip(tmp_path):
    g = Grid.box((3, 4), (1.0, 2.0))
    rng = np.random.default_rng(1)
    u = rng.random((2, 3, 4))
    path = tmp_path / "u.csv"
    write_field_csv(path, g, u)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,species_1,species_2"
    assert len(lines) == 13
    back = read_field_csv(path, g)
    np.testing.assert_array_equal(back, u)


def test_field_csv_checks_grid(tmp_path):
    g = Grid.box(4)
    path = tmp_path / "u.csv"
    write_field_csv(path, g, np.ones(4))
    with pytest.raises(DimensionError):
        read_field_csv(path, Grid.box(5))
    with pytest.raises(DimensionError):
        read_field_csv(path, Grid.box(4, 2.0))
