import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.spatial import cKDTree

from glidermdo import geometry
from shapes import flat_sections, icosphere, unit_cube


def thickness_oracle(x, t):
    # standard 4-digit half-thickness with the closed (-0.1036) trailing-edge coefficient
    return 5 * t * (0.2969 * x**0.5 - 0.1260 * x - 0.3516 * x**2 + 0.2843 * x**3 - 0.1036 * x**4)


def polygon_area(loop):
    x, z = loop[:, 0], loop[:, 1]
    return 0.5 * abs(np.sum(x * np.roll(z, -1) - np.roll(x, -1) * z))


class TestNacaProfile:
    def test_max_thickness_location(self):
        xs = np.linspace(0.0, 1.0, 200001)
        yt = thickness_oracle(xs, 0.12)
        x_peak, y_peak = xs[np.argmax(yt)], yt.max()
        assert y_peak == pytest.approx(0.06, abs=2e-4)
        assert x_peak == pytest.approx(0.30, abs=0.01)
        prof = geometry.naca4_profile(0.0, 0.4, 0.12, 57)
        k = np.argmax(prof[:, 1])
        assert prof[k, 1] == pytest.approx(y_peak, abs=5e-4)
        assert prof[k, 0] == pytest.approx(x_peak, abs=0.05)

    def test_flat_plate(self):
        prof = geometry.naca4_profile(0.0, 0.4, 0.0, 57)
        assert np.all(prof[:, 1] == 0.0)

    def test_loop_order_and_closure(self):
        prof = geometry.naca4_profile(0.02, 0.4, 0.12, 57)
        assert np.array_equal(prof[0], prof[-1])
        assert prof[0, 0] == pytest.approx(1.0)
        lead = len(prof) // 2
        assert prof[lead, 0] == pytest.approx(0.0, abs=1e-15)
        assert np.all(prof[1:lead, 1] >= prof[-2:lead:-1, 1])  # upper above lower

    def test_cosine_spacing(self):
        prof = geometry.naca4_profile(0.0, 0.4, 0.12, 57)
        xs = prof[: len(prof) // 2 + 1, 0][::-1]
        beta = np.linspace(0.0, np.pi, len(xs))
        np.testing.assert_allclose(xs, 0.5 * (1 - np.cos(beta)), atol=1e-15)

    @given(t=st.floats(0.0, 0.5), n=st.integers(5, 100).map(lambda k: 2 * k + 1))
    def test_symmetric_without_camber(self, t, n):
        prof = geometry.naca4_profile(0.0, 0.4, t, n)
        mirrored = prof[::-1] * [1.0, -1.0]
        np.testing.assert_allclose(prof, mirrored, atol=1e-12)

    def test_area_matches_quadrature(self):
        prof = geometry.naca4_profile(0.0, 0.4, 0.12, 801)
        exact = 2.0 * quad(thickness_oracle, 0.0, 1.0, args=(0.12,))[0]
        assert polygon_area(prof) == pytest.approx(exact, rel=1e-3)

    @pytest.mark.parametrize(
        "args, field",
        [((0.0, 0.4, 0.6), "thickness"), ((0.3, 0.4, 0.1), "camber_max"), ((0.02, 1.0, 0.1), "camber_pos")],
    )
    def test_domain_error_names_field(self, args, field):
        with pytest.raises(geometry.DomainError) as info:
            geometry.naca4_profile(*args, 57)
        assert info.value.field == field

    def test_too_few_points(self):
        with pytest.raises(geometry.DomainError):
            geometry.naca4_profile(0.0, 0.4, 0.12, 9)


class TestSections:
    def test_round_trip(self, space):
        secs = geometry.build_sections(space.baseline)
        assert len(secs) == 4
        np.testing.assert_array_equal(geometry.sections_to_vector(secs), space.baseline)

    def test_root_fixed_by_symmetry(self, space):
        root = geometry.build_sections(space.baseline)[0]
        assert root.leading_edge == (0.0, 0.0, 0.0)
        assert (root.twist, root.roll, root.yaw, root.camber_max) == (0.0, 0.0, 0.0, 0.0)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            geometry.build_sections(np.zeros(31))

    def test_out_of_range_names_section(self, space):
        u = space.baseline.copy()
        u[geometry.PARAM_NAMES.index("s3_thickness")] = 0.7
        with pytest.raises(geometry.DomainError) as info:
            geometry.build_sections(u)
        assert info.value.field == "s3.thickness"

    def test_zero_angles_give_parallel_planes(self):
        for sec in flat_sections(thickness=0.12):
            pts = geometry.place_section(sec, geometry.naca4_profile(0.0, 0.4, 0.12, 57))
            assert np.all(pts[:, 1] == sec.leading_edge[1])

    def test_twist_rotates_chord_line(self):
        theta = np.radians(4.0)
        sec = geometry.SectionParams(chord=0.8, leading_edge=(0.1, 0.3, 0.02), twist=theta)
        le, te = geometry.place_section(sec, np.array([[0.0, 0.0], [1.0, 0.0]]))
        np.testing.assert_allclose(le, sec.leading_edge, atol=1e-15)
        chord = te - le
        assert np.linalg.norm(chord) == pytest.approx(0.8)
        assert np.arctan2(-chord[2], chord[0]) == pytest.approx(theta, abs=1e-14)


class TestLoft:
    def test_baseline_dimensions(self, baseline_geometry):
        assert baseline_geometry.span == pytest.approx(2.0, rel=0.1)
        assert baseline_geometry.length == pytest.approx(1.0, rel=0.1)

    def test_baseline_watertight(self, baseline_geometry):
        assert geometry.is_watertight(baseline_geometry.mesh)

    def test_default_resolution_node_count(self, baseline_geometry):
        mesh = baseline_geometry.mesh
        assert mesh.grid.shape == (57, 56, 3)
        assert mesh.grid.shape[0] * mesh.grid.shape[1] == 3192

    def test_no_degenerate_triangles(self, baseline_geometry):
        mesh = baseline_geometry.mesh
        assert geometry.triangle_areas(mesh.points, mesh.triangles).min() > 0

    def test_mirror_symmetry(self, baseline_geometry):
        pts = baseline_geometry.mesh.points
        d, _ = cKDTree(pts).query(pts * [1.0, -1.0, 1.0])
        assert d.max() < 1e-12

    def test_prism_volume(self):
        secs = flat_sections(chord=0.6, half_span=0.9, thickness=0.15)
        mesh = geometry.loft(secs)
        area = polygon_area(geometry.naca4_profile(0.0, 0.4, 0.15, 57)) * 0.6**2
        assert geometry.enclosed_volume(mesh) == pytest.approx(area * 2 * 0.9, rel=0.01)

    def test_resolution_convergence(self, space, baseline_geometry):
        fine = geometry.build_geometry(space.baseline, 113, 113)
        assert fine.volume == pytest.approx(baseline_geometry.volume, rel=5e-3)

    def test_deterministic(self, space):
        a = geometry.build_geometry(space.baseline)
        b = geometry.build_geometry(space.baseline)
        assert np.array_equal(a.mesh.points, b.mesh.points)
        assert np.array_equal(a.mesh.triangles, b.mesh.triangles)

    def test_root_tangency(self, baseline_geometry):
        grid = baseline_geometry.mesh.grid
        slope = (grid[1] - grid[0])[:, [0, 2]] / (grid[1] - grid[0])[:, 1:2]
        slope2 = (grid[2] - grid[1])[:, [0, 2]] / (grid[2] - grid[1])[:, 1:2]
        # zero spanwise slope at the symmetry plane: first differences are second order
        assert np.abs(slope).max() < np.abs(slope2).max()

    def test_non_increasing_span_rejected(self):
        secs = flat_sections(thickness=0.1)
        secs[2] = geometry.SectionParams(thickness=0.1, leading_edge=(0.0, 0.1, 0.0))
        with pytest.raises(geometry.GeometryError):
            geometry.loft(secs)

    def test_small_chord_rejected(self):
        secs = flat_sections(thickness=0.1)
        secs[3] = geometry.SectionParams(thickness=0.1, chord=0.005, leading_edge=(0.0, 1.0, 0.0))
        with pytest.raises(geometry.GeometryError):
            geometry.loft(secs)

    def test_folded_loft_rejected(self):
        secs = flat_sections(thickness=0.12)
        secs[1] = geometry.SectionParams(thickness=0.12, leading_edge=(0.0, 1 / 3, 0.0), yaw=np.radians(60.0))
        with pytest.raises(geometry.GeometryError):
            geometry.loft(secs)


class TestVolume:
    def test_icosphere(self):
        assert geometry.enclosed_volume(icosphere(4)) == pytest.approx(4 * np.pi / 3, rel=0.01)

    def test_unit_cube(self):
        assert geometry.enclosed_volume(unit_cube()) == pytest.approx(1.0, abs=1e-15)

    def test_reversed_winding(self):
        cube = unit_cube()
        flipped = geometry.SurfaceMesh(cube.points, cube.triangles[:, ::-1], 0, 0)
        assert geometry.enclosed_volume(flipped) == pytest.approx(-1.0, abs=1e-15)

    def test_open_mesh_rejected(self):
        cube = unit_cube()
        with pytest.raises(geometry.GeometryError):
            geometry.enclosed_volume(geometry.SurfaceMesh(cube.points, cube.triangles[:-1], 0, 0))

    @given(
        shift=st.tuples(*[st.floats(-5, 5)] * 3),
        scale=st.floats(0.1, 10.0),
    )
    def test_translation_and_scaling(self, baseline_geometry, shift, scale):
        mesh = baseline_geometry.mesh
        v0 = baseline_geometry.volume
        moved = geometry.SurfaceMesh(mesh.points + np.array(shift), mesh.triangles, 0, 0)
        scaled = geometry.SurfaceMesh(mesh.points * scale, mesh.triangles, 0, 0)
        assert geometry.enclosed_volume(moved) == pytest.approx(v0, rel=1e-9)
        assert geometry.enclosed_volume(scaled) == pytest.approx(v0 * scale**3, rel=1e-9)


class TestExport:
    def test_stl_round_trip(self, baseline_geometry, tmp_path):
        mesh = baseline_geometry.mesh
        geometry.write_stl(mesh, tmp_path / "body.stl")
        tris = geometry.read_stl_triangles(tmp_path / "body.stl")
        np.testing.assert_allclose(tris, mesh.points[mesh.triangles], atol=1e-9)

    def test_point_table_round_trip(self, baseline_geometry, tmp_path):
        mesh = baseline_geometry.mesh
        geometry.write_point_table(mesh, tmp_path / "body.dat")
        grid = geometry.read_point_table(tmp_path / "body.dat")
        np.testing.assert_allclose(grid, mesh.grid, atol=1e-9)
