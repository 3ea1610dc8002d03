import io
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robinrec.geometry import (
    DegenerateMeshError,
    DomainKind,
    DomainSpec,
    GeometryError,
    ThetaField,
    build_half_annulus_mesh,
    build_rectangle_mesh,
    curvature,
    deform_mesh,
    mesh_fingerprint,
    write_mesh_listing,
)


def signed_areas(mesh):
    p = mesh.vertices[mesh.triangles]
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


def boundary_edges_from_triangles(mesh):
    """Independent boundary extraction: edges belonging to exactly one triangle."""
    count = Counter()
    for a, b, c in mesh.triangles:
        for e in ((a, b), (b, c), (c, a)):
            count[frozenset(e)] += 1
    return {e for e, k in count.items() if k == 1}


class TestRectangleMesh:
    def test_smallest_grid_counts(self):
        mesh = build_rectangle_mesh(2, 2)
        assert mesh.num_vertices == 9
        assert len(mesh.triangles) == 8
        tags = Counter(mesh.edge_tags.tolist())
        assert tags == {"A": 2, "I": 2, "D": 4}

    @given(nx=st.integers(2, 12), ny=st.integers(2, 12))
    @settings(max_examples=20, deadline=None)
    def test_boundary_edge_count(self, nx, ny):
        mesh = build_rectangle_mesh(nx, ny)
        assert len(mesh.boundary_edges) == 2 * nx + 2 * ny
        assert mesh.num_vertices == (nx + 1) * (ny + 1)

    def test_gamma_I_arclength(self):
        mesh = build_rectangle_mesh(128, 64)
        assert abs(mesh.gamma_I.length - np.pi) < 1e-12
        assert abs(mesh.gamma_A.length - np.pi) < 1e-12

    def test_rejects_too_coarse(self):
        with pytest.raises(GeometryError):
            build_rectangle_mesh(1, 4)
        with pytest.raises(GeometryError):
            build_rectangle_mesh(4, 1)

    def test_positive_areas_and_orientation(self, rect_small):
        assert np.all(signed_areas(rect_small) > 0.0)

    def test_tags_partition_boundary(self, rect_small):
        expected = boundary_edges_from_triangles(rect_small)
        tagged = [frozenset(e) for e in rect_small.boundary_edges.tolist()]
        assert len(tagged) == len(set(tagged))  # no edge tagged twice
        assert set(tagged) == expected

    def test_chain_arclengths_strictly_increasing(self, rect_small):
        for chain in (rect_small.gamma_A, rect_small.gamma_I):
            assert np.all(np.diff(chain.arclength) > 0.0)
            assert chain.arclength[0] == 0.0

    def test_chain_endpoints_meet_grounded_part(self, rect_small):
        dirichlet = set(rect_small.dirichlet_vertices().tolist())
        for chain in (rect_small.gamma_A, rect_small.gamma_I):
            assert chain.vertices[0] in dirichlet
            assert chain.vertices[-1] in dirichlet

    def test_refinement_preserves_tags_and_lengths(self):
        coarse = build_rectangle_mesh(16, 8)
        fine = build_rectangle_mesh(32, 16)
        assert Counter(fine.edge_tags.tolist()) == {"A": 32, "I": 32, "D": 32}
        assert abs(coarse.gamma_I.length - fine.gamma_I.length) < 1e-12


class TestHalfAnnulusMesh:
    def test_chain_lengths_approach_arc_lengths(self):
        errs_i = []
        errs_a = []
        for nt in (32, 64):
            mesh = build_half_annulus_mesh(8, nt)
            errs_i.append(abs(mesh.gamma_I.length - np.pi))
            errs_a.append(abs(mesh.gamma_A.length - 2.0 * np.pi))
        # chord-length defect shrinks like nt^-2
        assert errs_i[1] < errs_i[0] / 3.0
        assert errs_a[1] < errs_a[0] / 3.0
        assert errs_i[1] < 1e-2

    def test_vertices_in_polar_box(self):
        mesh = build_half_annulus_mesh(8, 64)
        r = np.hypot(mesh.vertices[:, 0], mesh.vertices[:, 1])
        ang = np.arctan2(mesh.vertices[:, 1], mesh.vertices[:, 0])
        assert np.all(r >= 1.0 - 1e-12) and np.all(r <= 2.0 + 1e-12)
        assert np.all(ang >= -1e-12) and np.all(ang <= np.pi + 1e-12)

    def test_rejects_below_minimums(self):
        with pytest.raises(GeometryError):
            build_half_annulus_mesh(1, 64)
        with pytest.raises(GeometryError):
            build_half_annulus_mesh(8, 3)

    def test_tags_partition_boundary(self):
        mesh = build_half_annulus_mesh(4, 12)
        expected = boundary_edges_from_triangles(mesh)
        tagged = [frozenset(e) for e in mesh.boundary_edges.tolist()]
        assert len(tagged) == len(set(tagged))
        assert set(tagged) == expected
        assert np.all(signed_areas(mesh) > 0.0)


class TestCurvature:
    def test_rectangle_flat(self):
        spec = DomainSpec(DomainKind.RECTANGLE, 0.999, lambda x, y: np.sin(x))
        assert np.all(curvature(spec, np.linspace(0, np.pi, 7)) == 0.0)

    def test_inner_circle_positive_unit(self):
        spec = DomainSpec(DomainKind.HALF_ANNULUS, 0.99, lambda x, y: 0.5 * y)
        assert np.all(curvature(spec, np.linspace(0, np.pi, 7)) == 1.0)

    def test_robin_assumption_holds_for_tested_impedances(self):
        for gamma in (0.95, 0.999):
            spec = DomainSpec(DomainKind.RECTANGLE, gamma, lambda x, y: np.sin(x))
            h = curvature(spec, 0.5)
            assert 2.0 * h + gamma > 0.0


class TestThetaField:
    def test_requires_vanishing_endpoints(self):
        s = np.linspace(0.0, np.pi, 9)
        with pytest.raises(GeometryError):
            ThetaField(values=np.full(9, 0.5), arclength=s)

    def test_finite_difference_derivative(self):
        s = np.linspace(0.0, np.pi, 65)
        field = ThetaField(values=np.sin(s), arclength=s)
        d = field.derivative()
        interior = slice(1, -1)
        assert np.max(np.abs(d[interior] - np.cos(s)[interior])) < 2e-3


class TestDeformMesh:
    def test_zero_displacement_is_identity(self, rect_small):
        theta = ThetaField(
            values=np.zeros(rect_small.gamma_I.size),
            arclength=rect_small.gamma_I.arclength,
        )
        out = deform_mesh(rect_small, theta)
        assert np.array_equal(out.vertices, rect_small.vertices)
        assert np.array_equal(out.triangles, rect_small.triangles)

    def test_top_boundary_moves_bottom_fixed(self, rect_small):
        s = rect_small.gamma_I.arclength
        theta = ThetaField(values=-0.1 * np.sin(s), arclength=s)
        out = deform_mesh(rect_small, theta)
        top = out.vertices[out.gamma_I.vertices]
        assert np.max(np.abs(top[:, 1] - (1.0 - 0.1 * np.sin(top[:, 0])))) < 1e-12
        bottom = out.vertices[out.gamma_A.vertices]
        assert np.array_equal(bottom, rect_small.vertices[rect_small.gamma_A.vertices])
        assert np.array_equal(out.edge_tags, rect_small.edge_tags)

    def test_excessive_displacement_degenerates(self, rect_small):
        # the linear blend keeps cells valid until the displacement swallows
        # the whole transverse extent
        s = rect_small.gamma_I.arclength
        values = -1.05 * np.sin(s) ** 0.0
        values[0] = 0.0
        values[-1] = 0.0
        theta = ThetaField(values=values, arclength=s)
        with pytest.raises(DegenerateMeshError):
            deform_mesh(rect_small, theta)

    def test_displacement_affine_in_theta(self, rect_small):
        s = rect_small.gamma_I.arclength
        rng = np.random.default_rng(7)
        v1 = rng.normal(0.0, 0.01, s.size)
        v2 = rng.normal(0.0, 0.01, s.size)
        v1[0] = v1[-1] = v2[0] = v2[-1] = 0.0
        t1 = ThetaField(values=v1, arclength=s)
        t2 = ThetaField(values=v2, arclength=s)
        t12 = ThetaField(values=2.0 * v1 + 3.0 * v2, arclength=s)
        d1 = deform_mesh(rect_small, t1).vertices - rect_small.vertices
        d2 = deform_mesh(rect_small, t2).vertices - rect_small.vertices
        d12 = deform_mesh(rect_small, t12).vertices - rect_small.vertices
        assert np.max(np.abs(d12 - 2.0 * d1 - 3.0 * d2)) < 1e-14

    def test_annulus_inner_nodes_move_radially(self):
        mesh = build_half_annulus_mesh(8, 32)
        s = mesh.gamma_I.arclength
        values = -0.05 * np.sin(np.pi * s / mesh.gamma_I.length)
        values[0] = values[-1] = 0.0
        theta = ThetaField(values=values, arclength=s)
        out = deform_mesh(mesh, theta)
        inner = out.vertices[out.gamma_I.vertices]
        # outward normal points to the origin: radius becomes 1 - theta
        r = np.hypot(inner[:, 0], inner[:, 1])
        assert np.max(np.abs(r - (1.0 - values))) < 1e-12
        outer = out.vertices[out.gamma_A.vertices]
        assert np.array_equal(outer, mesh.vertices[mesh.gamma_A.vertices])


class TestMeshIO:
    def test_listing_format(self):
        mesh = build_rectangle_mesh(2, 2)
        buf = io.StringIO()
        write_mesh_listing(mesh, buf)
        lines = buf.getvalue().strip().split("\n")
        assert len(lines) == 9 + 8 + 8
        assert len(lines[0].split()) == 2
        assert len(lines[9].split()) == 3
        i, j, tag = lines[-1].split()
        assert tag in {"A", "I", "D"}

    def test_fingerprint_distinguishes_meshes(self):
        a = build_rectangle_mesh(4, 4)
        b = build_rectangle_mesh(4, 4)
        c = build_rectangle_mesh(8, 4)
        assert mesh_fingerprint(a) == mesh_fingerprint(b)
        assert mesh_fingerprint(a) != mesh_fingerprint(c)


class TestDomainSpec:
    def test_rejects_nonpositive_gamma(self):
        with pytest.raises(GeometryError):
            DomainSpec(DomainKind.RECTANGLE, 0.0, lambda x, y: np.sin(x))
