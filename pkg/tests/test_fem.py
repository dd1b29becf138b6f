import math

import numpy as np
import pytest

from nitsche_contact.fem import (
    FeSpace,
    FieldFunction,
    MaterialParams,
    assemble_boundary_load,
    assemble_bulk,
    assemble_load,
    constrain,
    dirichlet_mask,
    expand,
    gauss1d,
    interpolate,
    shape_values,
    strain,
    stress,
    traction_split,
    triangle_rule,
)
from nitsche_contact.mesh import NEUMANN, BoundaryRule, BoundarySpec, classify_boundary

from test_mesh import body1_mesh


STEEL_LIKE = MaterialParams.from_young(1.0, 0.3)


def field_from(space, func):
    return FieldFunction(space, interpolate(space, func))


class TestMaterial:
    def test_plane_strain_lame(self):
        m = STEEL_LIKE
        assert m.mu == pytest.approx(0.38461538461538464, rel=1e-14)
        assert m.lam == pytest.approx(0.5769230769230769, rel=1e-14)

    def test_rejects_near_incompressible(self):
        with pytest.raises(ValueError):
            MaterialParams.from_young(1.0, 0.49)


class TestQuadrature:
    @pytest.mark.parametrize("degree", [1, 2, 4, 6])
    def test_monomial_exactness(self, degree):
        pts, w = triangle_rule(degree)
        for i in range(degree + 1):
            for j in range(degree + 1 - i):
                # exact integral of x^i y^j over the reference triangle
                exact = (
                    math.factorial(i) * math.factorial(j)
                    / math.factorial(i + j + 2)
                )
                got = (w * pts[:, 0] ** i * pts[:, 1] ** j).sum()
                assert got == pytest.approx(exact, rel=1e-13), (degree, i, j)

    def test_gauss1d(self):
        x, w = gauss1d(3)
        for k in range(6):
            assert (w * x**k).sum() == pytest.approx(1.0 / (k + 1), rel=1e-13)


class TestBasis:
    def test_partition_of_unity_p1(self):
        pts, _ = triangle_rule(4)
        assert np.allclose(shape_values(1, pts).sum(axis=1), 1.0, atol=1e-14)

    def test_partition_of_unity_p2(self):
        pts, _ = triangle_rule(4)
        assert np.allclose(shape_values(2, pts).sum(axis=1), 1.0, atol=1e-13)

    def test_p2_reproduces_quadratics(self):
        space = FeSpace.build(body1_mesh(2, 2), 2)
        f = field_from(space, lambda x: np.column_stack([x[:, 0] ** 2, x[:, 0] * x[:, 1]]))
        rng = np.random.RandomState(0)
        for t in rng.choice(space.mesh.num_triangles, 5):
            ref = rng.rand(4, 2) * 0.4
            xs = space.global_points(ref)[t]
            vals = f.element_values(t, ref)
            assert np.allclose(vals[:, 0], xs[:, 0] ** 2, atol=1e-12)
            assert np.allclose(vals[:, 1], xs[:, 0] * xs[:, 1], atol=1e-12)

    def test_dof_counts(self):
        m = body1_mesh(2, 3)
        assert FeSpace.build(m, 1).num_dofs == 2 * m.num_vertices
        assert FeSpace.build(m, 2).num_dofs == 2 * (m.num_vertices + m.num_facets)


class TestStrainStress:
    def test_linear_field(self):
        space = FeSpace.build(body1_mesh(), 1)
        f = field_from(space, lambda x: np.column_stack([x[:, 0], 0 * x[:, 1]]))
        eps = strain(f, 0, (0.3, 0.3))
        assert np.allclose(eps, [[1, 0], [0, 0]], atol=1e-14)

    def test_zero_field(self):
        space = FeSpace.build(body1_mesh(), 1)
        f = FieldFunction(space, np.zeros(space.num_dofs))
        assert np.allclose(strain(f, 2, (0.2, 0.1)), 0.0)

    def test_shear_field(self):
        space = FeSpace.build(body1_mesh(), 2)
        f = field_from(space, lambda x: np.column_stack([x[:, 1], x[:, 0]]))
        eps = strain(f, 1, (0.25, 0.5))
        assert np.allclose(eps, [[0, 1], [1, 0]], atol=1e-13)

    def test_stress_zero(self):
        assert np.allclose(stress(STEEL_LIKE, np.zeros((2, 2))), 0.0)

    def test_stress_identity(self):
        s = stress(STEEL_LIKE, np.eye(2))
        expect = (2 * STEEL_LIKE.mu + 2 * STEEL_LIKE.lam) * np.eye(2)
        assert np.allclose(s, expect, rtol=1e-14)
        assert s[0, 0] == pytest.approx(1.9230769230769231, rel=1e-13)

    def test_stress_traceless(self):
        eps = np.array([[1.0, 0.0], [0.0, -1.0]])
        assert np.allclose(stress(STEEL_LIKE, eps), 2 * STEEL_LIKE.mu * eps, rtol=1e-14)

    def test_stress_linearity(self):
        rng = np.random.RandomState(1)
        e1 = rng.randn(2, 2)
        e1 = 0.5 * (e1 + e1.T)
        e2 = rng.randn(2, 2)
        e2 = 0.5 * (e2 + e2.T)
        a, b = 1.7, -0.3
        assert np.allclose(
            stress(STEEL_LIKE, a * e1 + b * e2),
            a * stress(STEEL_LIKE, e1) + b * stress(STEEL_LIKE, e2),
            atol=1e-14,
        )


class TestTractionSplit:
    def test_uniaxial_compression_body1(self):
        sigma = np.array([[-1.0, 0.0], [0.0, 0.0]])
        sn, st = traction_split(sigma, (1.0, 0.0), body=1)
        assert sn == pytest.approx(-1.0)
        assert np.allclose(st, 0.0)

    def test_uniaxial_compression_body2_same_sign(self):
        sigma = np.array([[-1.0, 0.0], [0.0, 0.0]])
        sn, st = traction_split(sigma, (-1.0, 0.0), body=2)
        assert sn == pytest.approx(-1.0)
        assert np.allclose(st, 0.0)

    def test_pure_shear(self):
        sigma = np.array([[0.0, 1.0], [1.0, 0.0]])
        sn, st = traction_split(sigma, (1.0, 0.0), body=1)
        assert sn == pytest.approx(0.0)
        assert np.allclose(st, [0.0, 1.0])

    def test_reconstruction_and_orthogonality(self):
        rng = np.random.RandomState(2)
        s = rng.randn(2, 2)
        s = 0.5 * (s + s.T)
        th = 0.7
        n = np.array([np.cos(th), np.sin(th)])
        sn, st = traction_split(s, n, body=1)
        assert np.allclose(sn * n + st, s @ n, atol=1e-14)
        assert st @ n == pytest.approx(0.0, abs=1e-14)

    def test_non_unit_normal(self):
        with pytest.raises(ValueError):
            traction_split(np.eye(2), (1.0, 1.0), body=1)


class TestBulk:
    def test_rigid_modes_have_zero_energy(self):
        for p in (1, 2):
            space = FeSpace.build(body1_mesh(2, 2), p)
            K = assemble_bulk(space, STEEL_LIKE)
            for mode in (
                lambda x: np.column_stack([np.ones(len(x)), np.zeros(len(x))]),
                lambda x: np.column_stack([np.zeros(len(x)), np.ones(len(x))]),
                lambda x: np.column_stack([-x[:, 1], x[:, 0]]),
            ):
                w = interpolate(space, mode)
                assert abs(w @ (K @ w)) < 1e-13

    def test_patch_energy(self):
        for p in (1, 2):
            space = FeSpace.build(body1_mesh(3, 2), p)
            K = assemble_bulk(space, STEEL_LIKE)
            w = interpolate(space, lambda x: np.column_stack([x[:, 0], 0 * x[:, 1]]))
            expect = (2 * STEEL_LIKE.mu + STEEL_LIKE.lam) * 0.25
            assert w @ (K @ w) == pytest.approx(expect, rel=1e-13)

    def test_positive_semidefinite(self):
        space = FeSpace.build(body1_mesh(2, 2), 2)
        K = assemble_bulk(space, STEEL_LIKE)
        rng = np.random.RandomState(3)
        for _ in range(20):
            w = rng.randn(space.num_dofs)
            assert w @ (K @ w) >= -1e-12

    def test_symmetry(self):
        space = FeSpace.build(body1_mesh(2, 3), 2)
        K = assemble_bulk(space, STEEL_LIKE)
        d = abs(K - K.T).max()
        assert d < 1e-12 * abs(K).max()

    def test_quadrature_saturation(self):
        # raising the rule two degrees must not change the entries
        for p, qd in ((1, 2), (2, 4)):
            space = FeSpace.build(body1_mesh(2, 2), p)
            K1 = assemble_bulk(space, STEEL_LIKE, quad_degree=qd)
            K2 = assemble_bulk(space, STEEL_LIKE, quad_degree=qd + 2)
            scale = abs(K1).max()
            assert abs(K1 - K2).max() < 1e-12 * scale


class TestLoad:
    def test_zero(self):
        space = FeSpace.build(body1_mesh(), 1)
        b = assemble_load(space, lambda x: np.zeros_like(x))
        assert np.allclose(b, 0.0)

    def test_constant_partition_of_unity(self):
        for p in (1, 2):
            space = FeSpace.build(body1_mesh(2, 2), p)
            b = assemble_load(space, lambda x: np.column_stack([np.ones(len(x)), np.zeros(len(x))]))
            assert b[0::2].sum() == pytest.approx(0.25, rel=1e-13)
            assert abs(b[1::2].sum()) < 1e-15

    def test_linear_load_total(self):
        space = FeSpace.build(body1_mesh(3, 3), 1)
        b = assemble_load(space, lambda x: np.column_stack([x[:, 0] - 0.5, np.zeros(len(x))]))
        assert b[0::2].sum() == pytest.approx(0.0625, rel=1e-13)


class TestBoundaryLoad:
    def test_uniform_traction_total(self):
        rules = (
            BoundaryRule(
                "pull", NEUMANN,
                lambda m: np.abs(m[:, 0] - 0.5) < 1e-9,
                traction=lambda x: np.tile([2.0, 0.0], (len(x), 1)),
            ),
            BoundaryRule("rest", NEUMANN, lambda m: np.abs(m[:, 0] - 0.5) >= 1e-9),
        )
        from nitsche_contact.mesh import generate_block_mesh

        m = generate_block_mesh((0.5, 1.0, 0.25, 0.75), 2, 2)
        m = classify_boundary(m, BoundarySpec(rules))
        for p in (1, 2):
            space = FeSpace.build(m, p)
            b = assemble_boundary_load(space)
            # resultant = traction times the loaded edge length
            assert b[0::2].sum() == pytest.approx(2.0 * 0.5, rel=1e-13)
            assert abs(b[1::2].sum()) < 1e-14


class TestDirichlet:
    def test_all_fixed_solution_zero(self):
        space = FeSpace.build(body1_mesh(), 1)
        K = assemble_bulk(space, STEEL_LIKE)
        b = assemble_load(space, lambda x: np.column_stack([np.ones(len(x)), np.ones(len(x))]))
        fixed = np.ones(space.num_dofs, dtype=bool)
        Kf, bf, free = constrain(K, b, fixed)
        assert Kf.shape == (0, 0)
        u = expand(np.zeros(0), free, space.num_dofs)
        assert np.allclose(u, 0.0)

    def test_component_mask(self):
        space = FeSpace.build(body1_mesh(2, 2), 1)
        fixed = dirichlet_mask(space)
        mids = space.mesh.vertices
        on_wall = np.abs(mids[:, 0] - 0.5) < 1e-12
        # x constrained, y free on the clamped face
        assert np.all(fixed[2 * np.flatnonzero(on_wall)])
        assert not np.any(fixed[2 * np.flatnonzero(on_wall) + 1])
        assert not np.any(fixed[2 * np.flatnonzero(~on_wall)])

    def test_constrained_system_symmetric(self):
        space = FeSpace.build(body1_mesh(2, 2), 2)
        K = assemble_bulk(space, STEEL_LIKE)
        fixed = dirichlet_mask(space)
        Kf, _, _ = constrain(K, np.zeros(space.num_dofs), fixed)
        assert abs(Kf - Kf.T).max() < 1e-14
