"""Discretization, point-cloud files, and the ball-mass density check."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from geosink.measures import (
    DensityField,
    ManifoldPoint,
    check_density_property,
    discretize_sphere,
    discretize_torus,
    load_point_cloud,
)
from geosink.sphere import SphericalGrid


class TestDiscretizeTorus:
    def test_uniform_density(self):
        mu = discretize_torus("0", 4, 1)
        assert_allclose(mu.coords.ravel(), [0.0, 0.25, 0.5, 0.75])
        assert_allclose(mu.weights, 0.25)

    def test_cosine_density_direct_evaluation(self):
        # f = cos(2 pi x) on {0, 1/4, 1/2, 3/4} gives e^{-f} = (1/e, 1, e, 1)
        mu = discretize_torus("cos(2*pi*x1)", 4, 1)
        raw = np.array([np.exp(-1.0), 1.0, np.e, 1.0])
        assert_allclose(mu.weights, raw / raw.sum(), rtol=1e-14)

    def test_constant_shift_cancels(self):
        # the normalizer subtracts the max before exponentiating, so the
        # only residue of the shift is the rounding of the addition itself
        a = discretize_torus("cos(2*pi*x1)", 16, 1)
        b = discretize_torus("cos(2*pi*x1) + 7", 16, 1)
        assert_allclose(b.weights, a.weights, rtol=1e-14)

    def test_weights_sum_to_one(self, rng):
        mu = discretize_torus("sin(2*pi*x1) + 0.5*cos(4*pi*x2)", 8, 2)
        assert mu.coords.shape == (64, 2)
        assert abs(mu.weights.sum() - 1.0) <= 1e-12


class TestDiscretizeSphere:
    def test_uniform_density_gives_quadrature_weights(self):
        grid = SphericalGrid(8)
        mu = discretize_sphere("0", grid)
        assert_allclose(mu.weights, grid.node_weights, rtol=1e-14)

    def test_z_coordinate_density_matches_per_node_evaluation(self):
        grid = SphericalGrid(8)
        mu = discretize_sphere("cos(theta)", grid)
        raw = grid.node_weights * np.exp(-np.cos(grid.angles()[:, 1]))
        assert_allclose(mu.weights, raw / raw.sum(), rtol=1e-13)

    def test_weights_sum_to_one(self):
        grid = SphericalGrid(12)
        mu = discretize_sphere("sin(theta)*cos(phi) + 0.3*cos(theta)^2", grid)
        assert abs(mu.weights.sum() - 1.0) <= 1e-12


class TestLoadPointCloud:
    def test_equal_weights_file(self, tmp_path):
        path = tmp_path / "pts.txt"
        path.write_text(
            "# four points, same mass\n"
            "torus1 0.0 0.25\n"
            "torus1 0.25 0.25\n"
            "torus1 0.5 0.25\n"
            "torus1 0.75 0.25\n"
        )
        mu = load_point_cloud(path)
        assert_allclose(mu.weights, 0.25)
        assert_allclose(mu.coords.ravel(), [0.0, 0.25, 0.5, 0.75])

    def test_explicit_weights_kept(self, tmp_path):
        path = tmp_path / "pts.txt"
        path.write_text("torus1 0.1 0.2\ntorus1 0.6 0.8\n")
        mu = load_point_cloud(path)
        assert_allclose(mu.weights, [0.2, 0.8])

    def test_missing_weights_default_to_uniform(self, tmp_path):
        # rotated octahedron: all six vertices stay clear of the poles
        r = 1.0 / np.sqrt(2.0)
        xyz = np.array(
            [
                [r, 0.0, -r],
                [-r, 0.0, r],
                [0.0, 1.0, 0.0],
                [0.0, -1.0, 0.0],
                [r, 0.0, r],
                [-r, 0.0, -r],
            ]
        )
        phi = np.arctan2(xyz[:, 1], xyz[:, 0])
        theta = np.arccos(xyz[:, 2])
        lines = "".join(f"sphere {p} {t}\n" for p, t in zip(phi, theta))
        path = tmp_path / "oct.txt"
        path.write_text(lines)
        mu = load_point_cloud(path)
        assert mu.coords.shape == (6, 2)
        assert_allclose(mu.weights, 1.0 / 6.0)

    def test_pole_rejected(self, tmp_path):
        path = tmp_path / "pole.txt"
        path.write_text("sphere 0.0 0.0\n")
        with pytest.raises(ValueError, match="colatitude"):
            load_point_cloud(path)

    def test_partial_weights_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("torus1 0.1 0.5\ntorus1 0.6\n")
        with pytest.raises(ValueError, match="all points or none"):
            load_point_cloud(path)

    def test_weight_sum_guard_and_renormalize(self, tmp_path):
        path = tmp_path / "off.txt"
        path.write_text("torus1 0.1 0.3\ntorus1 0.6 0.3\n")
        with pytest.raises(ValueError, match="renormalize"):
            load_point_cloud(path)
        mu = load_point_cloud(path, renormalize=True)
        assert_allclose(mu.weights, [0.5, 0.5])

    def test_mixed_charts_rejected(self, tmp_path):
        path = tmp_path / "mix.txt"
        path.write_text("torus1 0.1\nsphere 0.0 1.0\n")
        with pytest.raises(ValueError, match="mixed"):
            load_point_cloud(path)


class TestManifoldPoint:
    def test_torus_coords_wrap(self):
        pt = ManifoldPoint("torus", (1.25, -0.25))
        assert_allclose(pt.coords, (0.25, 0.75))

    def test_sphere_unit_vector(self):
        pt = ManifoldPoint("sphere", (0.0, np.pi / 2))
        assert_allclose(pt.to_unit_vector(), [1.0, 0.0, 0.0], atol=1e-15)


class TestCheckDensityProperty:
    def test_uniform_lattice_ball_masses_by_enumeration(self):
        mu = discretize_torus("0", 8, 1)
        centers = mu.coords
        out = check_density_property(mu, k=8, radius=0.25, sample_centers=centers)
        # radius 0.25 around any lattice point covers exactly 5 of 8 nodes
        # (offsets 0, +-1/8, +-2/8), so every ball mass is 5/8
        assert_allclose(out["min"], np.log(5.0 / 8.0) / 8.0, rtol=1e-12)

    def test_empty_ball_flags_minus_inf(self):
        mu = discretize_torus("0", 4, 1)
        atom = ManifoldPoint("torus", (0.0,))
        from geosink.measures import DiscreteMeasure

        single = DiscreteMeasure("torus", np.array([atom.coords]), np.array([1.0]))
        out = check_density_property(
            single, k=4, radius=0.1, sample_centers=np.array([[0.5]])
        )
        assert out["min"] == -np.inf
        assert mu.weights.sum() == pytest.approx(1.0)

    def test_radius_covering_everything_gives_zero(self):
        mu = discretize_torus("cos(2*pi*x1)", 8, 1)
        out = check_density_property(
            mu, k=8, radius=1.0, sample_centers=np.array([[0.3]])
        )
        assert_allclose(out["min"], 0.0, atol=1e-15)


class TestDensityField:
    def test_exponent_bound_enforced(self):
        f = DensityField.torus_expression("1000*x1", 1)
        with pytest.raises(ValueError, match="magnitude"):
            f(np.array([[0.9]]))

    def test_constant_field(self):
        f = DensityField.constant("torus", 1.5)
        assert_allclose(f(np.zeros((3, 1))), 1.5)
