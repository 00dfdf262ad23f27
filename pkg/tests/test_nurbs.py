import numpy as np
import pytest

from splinelbm import nurbs as ng


def fd_jacobian(patch, xi, eta, h=1e-6):
    """Central-difference oracle for the geometry-map Jacobian."""
    d_xi = (ng.map_point(patch, xi + h, eta) - ng.map_point(patch, xi - h, eta)) / (2 * h)
    d_eta = (ng.map_point(patch, xi, eta + h) - ng.map_point(patch, xi, eta - h)) / (2 * h)
    return np.stack([d_xi, d_eta], axis=1)


def all_builders():
    return {
        "unit_square": ng.build_unit_square(2, 8),
        "periodic_box": ng.build_periodic_box(3, 12),
        "curved_quad": ng.build_curved_quad(2, 8, amplitude=0.1),
        "quarter_annulus": ng.build_quarter_annulus(1.0, 2.0, degree=2, elements=(3, 6)),
    }


class TestFindSpan:
    def test_single_span(self):
        kv = ng.KnotVector.from_knots([0, 0, 0, 1, 1, 1], 2)
        assert ng.find_span(kv, 0.5) == 2

    def test_left_closed_at_interior_knot(self):
        kv = ng.KnotVector.from_knots([0, 0, 0, 0.5, 1, 1, 1], 2)
        assert ng.find_span(kv, 0.5) == 3

    def test_right_end_maps_to_last_nonempty_span(self):
        kv = ng.KnotVector.from_knots([0, 0, 0, 1, 1, 1], 2)
        assert ng.find_span(kv, 1.0) == 2

    def test_out_of_domain_raises(self):
        kv = ng.KnotVector.from_knots([0, 0, 0, 1, 1, 1], 2)
        with pytest.raises(ng.GeometryError):
            ng.find_span(kv, 1.5)

    def test_periodic_accepts_any_real(self):
        kv = ng.KnotVector.periodic_uniform(8, 2)
        v1, i1 = ng.eval_basis(kv, 0.3)
        v2, i2 = ng.eval_basis(kv, 0.3 + 2.0)
        np.testing.assert_allclose(v1, v2, atol=1e-14)
        assert np.array_equal(i1, i2)


class TestBasis:
    def test_bernstein_quadratic_midpoint(self):
        # (1-x)^2, 2x(1-x), x^2 at x = 0.5
        kv = ng.KnotVector.from_knots([0, 0, 0, 1, 1, 1], 2)
        vals, idx = ng.eval_basis(kv, 0.5)
        np.testing.assert_allclose(vals, [0.25, 0.5, 0.25], atol=1e-15)
        assert np.array_equal(idx, [0, 1, 2])

    def test_endpoint_interpolation(self):
        kv = ng.KnotVector.from_knots([0, 0, 0, 1, 1, 1], 2)
        vals, _ = ng.eval_basis(kv, 0.0)
        np.testing.assert_allclose(vals, [1, 0, 0], atol=1e-15)

    def test_partition_of_unity_random(self):
        rng = np.random.default_rng(7)
        for kv in (
            ng.KnotVector.clamped_uniform(9, 3),
            ng.KnotVector.from_knots([0, 0, 0, 0.2, 0.2, 0.7, 1, 1, 1], 2),
            ng.KnotVector.periodic_uniform(11, 4),
        ):
            lo, hi = kv.domain
            for xi in rng.uniform(lo, hi, size=200):
                vals, _ = ng.eval_basis(kv, xi)
                assert abs(vals.sum() - 1.0) < 1e-12
                assert np.all(vals >= -1e-14)

    def test_bernstein_derivatives_midpoint(self):
        kv = ng.KnotVector.from_knots([0, 0, 0, 1, 1, 1], 2)
        _, ders, _ = ng.eval_basis_derivs(kv, 0.5)
        np.testing.assert_allclose(ders, [-1.0, 0.0, 1.0], atol=1e-14)

    def test_linear_hats(self):
        kv = ng.KnotVector.from_knots([0, 0, 1, 1], 1)
        vals, ders, _ = ng.eval_basis_derivs(kv, 0.3)
        np.testing.assert_allclose(vals, [0.7, 0.3], atol=1e-15)
        np.testing.assert_allclose(ders, [-1.0, 1.0], atol=1e-15)

    def test_derivative_sums_vanish(self):
        rng = np.random.default_rng(3)
        kv = ng.KnotVector.clamped_uniform(7, 3)
        for xi in rng.uniform(0, 1, size=100):
            _, ders, _ = ng.eval_basis_derivs(kv, xi)
            assert abs(ders.sum()) < 1e-12

    def test_degenerate_vector_rejected(self):
        with pytest.raises(ng.GeometryError):
            ng.KnotVector.from_knots([0, 0, 0, 0, 0, 0], 2)

    def test_interior_multiplicity_capped(self):
        with pytest.raises(ng.GeometryError):
            ng.KnotVector.from_knots([0, 0, 0, 0.5, 0.5, 0.5, 1, 1, 1], 2)


class TestGreville:
    def test_single_element_quadratic(self):
        kv = ng.KnotVector.from_knots([0, 0, 0, 1, 1, 1], 2)
        np.testing.assert_allclose(ng.greville_points(kv), [0.0, 0.5, 1.0])

    def test_linear(self):
        kv = ng.KnotVector.from_knots([0, 0, 1, 1], 1)
        np.testing.assert_allclose(ng.greville_points(kv), [0.0, 1.0])

    def test_periodic_equally_spaced(self):
        kv = ng.KnotVector.periodic_uniform(8, 2)
        g = ng.greville_points(kv)
        np.testing.assert_allclose(g, np.arange(8) / 8.0, atol=1e-15)

    def test_nondecreasing_in_domain(self):
        kv = ng.KnotVector.clamped_uniform(9, 4)
        g = ng.greville_points(kv)
        assert np.all(np.diff(g) > 0)
        lo, hi = kv.domain
        assert g[0] >= lo and g[-1] <= hi


class TestPatchEvaluation:
    def test_tensor_product_reduction_with_unit_weights(self):
        patch = ng.build_unit_square(2, 5)
        r, _, _, _ = ng.eval_nurbs2d(patch, 0.31, 0.62)
        nu, iu = ng.eval_basis(patch.kv_u, 0.31)
        nv, iv = ng.eval_basis(patch.kv_v, 0.62)
        np.testing.assert_allclose(r, np.outer(nu, nv).ravel(), atol=1e-15)

    def test_partition_of_unity_all_builders(self):
        rng = np.random.default_rng(11)
        for name, patch in all_builders().items():
            (ulo, uhi), (vlo, vhi) = patch.kv_u.domain, patch.kv_v.domain
            for _ in range(50):
                xi, eta = rng.uniform(ulo, uhi), rng.uniform(vlo, vhi)
                r, rx, re, _ = ng.eval_nurbs2d(patch, xi, eta)
                assert abs(r.sum() - 1.0) < 1e-12, name
                assert abs(rx.sum()) < 1e-10, name
                assert abs(re.sum()) < 1e-10, name

    def test_local_support_count(self):
        patch = ng.build_quarter_annulus(1, 2, degree=3, elements=(4, 4))
        p, q = patch.degrees
        r, _, _, gidx = ng.eval_nurbs2d(patch, 0.5, 0.5)
        assert len(r) == (p + 1) * (q + 1)
        assert len(np.unique(gidx)) == len(gidx)


class TestMapAndJacobian:
    def test_identity_map(self):
        patch = ng.build_unit_square(2, 8)
        np.testing.assert_allclose(ng.map_point(patch, 0.3, 0.7), [0.3, 0.7], atol=1e-14)

    def test_corner_is_corner_control_point(self):
        patch = ng.build_curved_quad(2, 6, amplitude=0.08)
        np.testing.assert_allclose(ng.map_point(patch, 0.0, 0.0), patch.control_points[0, 0])
        np.testing.assert_allclose(ng.map_point(patch, 1.0, 1.0), patch.control_points[-1, -1])

    def test_identity_jacobian(self):
        patch = ng.build_unit_square(2, 8)
        jd = ng.jacobian(patch, 0.42, 0.17)
        np.testing.assert_allclose(jd.jac, np.eye(2), atol=1e-13)
        assert abs(jd.det - 1.0) < 1e-13
        np.testing.assert_allclose(jd.inv, np.eye(2), atol=1e-13)

    def test_affine_scaling_jacobian(self):
        patch = ng.build_unit_square(2, 4, length=2.0)
        # x = 2 xi, y = 2 eta for the square builder; use an anisotropic net for diag(2,3)
        cp = patch.control_points.copy()
        cp[:, :, 1] *= 1.5  # y = 3 eta
        patch = ng.NurbsPatch2D(patch.kv_u, patch.kv_v, cp, patch.weights)
        jd = ng.jacobian(patch, 0.3, 0.8)
        np.testing.assert_allclose(jd.jac, np.diag([2.0, 3.0]), atol=1e-12)
        assert abs(jd.det - 6.0) < 1e-11

    def test_jacobian_inverse_identity(self):
        patch = ng.build_quarter_annulus(1, 2, elements=(3, 5))
        jd = ng.jacobian(patch, 0.37, 0.81)
        np.testing.assert_allclose(jd.jac @ jd.inv, np.eye(2), atol=1e-12)
        adj = np.array([[jd.jac[1, 1], -jd.jac[0, 1]], [-jd.jac[1, 0], jd.jac[0, 0]]])
        np.testing.assert_allclose(jd.inv, adj / jd.det, atol=1e-12)

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        for name, patch in all_builders().items():
            (ulo, uhi), (vlo, vhi) = patch.kv_u.domain, patch.kv_v.domain
            for _ in range(25):
                xi = rng.uniform(ulo + 1e-3, uhi - 1e-3)
                eta = rng.uniform(vlo + 1e-3, vhi - 1e-3)
                jac = ng.jacobian(patch, xi, eta).jac
                fd = fd_jacobian(patch, xi, eta)
                err = np.abs(jac - fd).max() / max(np.abs(jac).max(), 1.0)
                assert err < 1e-6, (name, err)

    def test_singular_map_reported(self):
        kv = ng.KnotVector.from_knots([0, 0, 1, 1], 1)
        cp = np.zeros((2, 2, 2))  # collapsed net
        patch = ng.NurbsPatch2D(kv, kv, cp, np.ones((2, 2)))
        with pytest.raises(ng.SingularMapError):
            ng.jacobian(patch, 0.5, 0.5)


class TestBuilders:
    def test_unit_square_det_one_everywhere(self):
        patch = ng.build_unit_square(2, 8)
        for xi in ng.greville_points(patch.kv_u):
            for eta in ng.greville_points(patch.kv_v):
                assert abs(ng.jacobian(patch, xi, eta).det - 1.0) < 1e-12

    def test_quarter_annulus_inner_edge_radius(self):
        patch = ng.build_quarter_annulus(1.0, 2.0, degree=2, elements=(4, 7))
        for eta in np.linspace(0.0, 1.0, 41):
            r = np.hypot(*ng.map_point(patch, 0.0, eta))
            assert abs(r - 1.0) < 1e-12

    def test_quarter_annulus_outer_edge_radius(self):
        patch = ng.build_quarter_annulus(1.0, 2.0, degree=3, elements=(4, 7))
        for eta in np.linspace(0.0, 1.0, 41):
            r = np.hypot(*ng.map_point(patch, 1.0, eta))
            assert abs(r - 2.0) < 1e-12

    def test_curved_quad_positive_jacobian(self):
        patch = ng.build_curved_quad(2, 8, amplitude=0.1)
        dets = [
            ng.jacobian(patch, xi, eta).det
            for xi in ng.greville_points(patch.kv_u)
            for eta in ng.greville_points(patch.kv_v)
        ]
        assert min(dets) > 0

    def test_excessive_amplitude_rejected(self):
        with pytest.raises(ng.GeometryError):
            ng.build_curved_quad(2, 8, amplitude=0.9)

    def test_periodic_box_side_lengths(self):
        patch = ng.build_periodic_box(3, 16, length=2.5)
        np.testing.assert_allclose(ng.map_point(patch, 1.0, 1.0), [2.5, 2.5])
        jd = ng.jacobian(patch, 0.2, 0.9)
        np.testing.assert_allclose(jd.jac, np.diag([2.5, 2.5]))

    def test_registry_dispatch_and_unknown_name(self):
        patch = ng.build_geometry("unit_square", degree=2, elements=4)
        assert isinstance(patch, ng.NurbsPatch2D)
        with pytest.raises(ng.GeometryError, match="registered builders"):
            ng.build_geometry("moebius_strip")

    def test_dump_patch_roundtrippable_text(self, tmp_path):
        patch = ng.build_quarter_annulus(1, 2, elements=(2, 3))
        out = tmp_path / "patch.txt"
        ng.dump_patch(patch, out)
        text = out.read_text()
        assert "degree_u" in text and "control points" in text
        # every control point appears
        assert sum(1 for ln in text.splitlines() if ln and ln[0].isdigit()) == patch.n_u * patch.n_v


class TestKnotInsertion:
    def test_arc_refinement_stays_on_circle(self):
        kv, xy, w = ng._quarter_arc(6)
        # evaluate the rational curve at many parameters via a 1D patch trick
        patch = ng.NurbsPatch2D(
            kv,
            ng.KnotVector.from_knots([0, 0, 1, 1], 1),
            np.repeat(xy[:, None, :], 2, axis=1),
            np.repeat(w[:, None], 2, axis=1),
        )
        for t in np.linspace(0, 1, 97):
            pt = ng.map_point(patch, t, 0.3)
            assert abs(np.hypot(*pt) - 1.0) < 1e-13
