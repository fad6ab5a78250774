import numpy as np
import pytest

from hybridfsi.errors import AssemblyError
from hybridfsi.fem import (
    CooBuilder,
    DofMap,
    boundary_batch,
    eval_basis,
    facet_batch,
    inverse_map,
    metric_quantities,
    scatter_add,
    shape_functions,
    volume_batch,
)
from hybridfsi.mesh import generate_structured_rect


class TestShapeFunctions:
    def test_partition_of_unity(self):
        rng = np.random.default_rng(0)
        xi = rng.uniform(-1, 1, size=(50, 2))
        N, dN = shape_functions(xi)
        assert np.allclose(N.sum(axis=-1), 1.0, atol=1e-14)
        assert np.allclose(dN.sum(axis=-2), 0.0, atol=1e-14)

    def test_kronecker_at_nodes(self):
        corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
        N, _ = shape_functions(corners)
        assert np.allclose(N, np.eye(4), atol=1e-15)

    def test_center_values(self):
        N, _ = shape_functions(np.zeros(2))
        assert np.allclose(N, 0.25)


class TestEvalBasis:
    def test_metric_unit_square(self):
        m = generate_structured_rect((0, 0), (1, 1), 1, 1)
        G, trG, GddG = metric_quantities(m, 0, (0.3, -0.2))
        assert np.allclose(G, np.diag([4.0, 4.0]), atol=1e-13)
        assert trG == pytest.approx(8.0, abs=1e-12)
        assert GddG == pytest.approx(32.0, abs=1e-12)

    def test_metric_scaling(self):
        m = generate_structured_rect((0, 0), (0.5, 0.5), 1, 1)
        _, trG, _ = metric_quantities(m, 0, (0.0, 0.0))
        assert trG == pytest.approx(32.0, abs=1e-11)

    def test_identity_mapped_element(self):
        m = generate_structured_rect((-1, -1), (2, 2), 1, 1)
        G, trG, _ = metric_quantities(m, 0, (0.1, 0.4))
        assert np.allclose(G, np.eye(2), atol=1e-13)
        assert trG == pytest.approx(2.0, abs=1e-12)

    def test_sheared_element_spd(self):
        from hybridfsi.mesh import QuadMesh

        coords = np.array([[0, 0], [1.3, 0.1], [1.5, 1.2], [0.2, 1.0]])
        elems = np.array([[0, 1, 2, 3]])
        m = QuadMesh(coords, elems,
                     np.zeros((0, 4), dtype=int),
                     np.array([[0, 1, 0], [1, 2, 0], [2, 3, 0], [3, 0, 0]]),
                     ("b", "b", "b", "b"))
        G, _, _ = metric_quantities(m, 0, (0.2, -0.3))
        assert np.all(np.linalg.eigvalsh(G) > 0)
        assert np.allclose(G, G.T)

    def test_linear_field_gradient_exact(self):
        m = generate_structured_rect((0, 0), (2, 3), 3, 4)
        s = eval_basis(m, 5, (0.37, -0.81))
        nodal = 2.0 * m.node_coords[m.elements[5], 0] - \
            0.7 * m.node_coords[m.elements[5], 1] + 1.0
        grad = nodal @ s.dNdx
        assert np.allclose(grad, [2.0, -0.7], atol=1e-12)


class TestInverseMap:
    def test_roundtrip_random(self):
        rng = np.random.default_rng(3)
        coords = np.array([[0, 0], [1.2, 0.1], [1.4, 1.3], [-0.1, 1.1]])
        xi_true = rng.uniform(-0.99, 0.99, size=(40, 2))
        N, _ = shape_functions(xi_true)
        x = N @ coords
        xi = inverse_map(np.broadcast_to(coords, (40, 4, 2)), x)
        assert np.allclose(xi, xi_true, atol=1e-11)


class TestDofMap:
    def test_active_filter(self):
        active = np.array([True, False, True, True])
        dm = DofMap(4, 3, active)
        assert dm.n_dofs == 9
        d = dm.dofs(np.array([0, 1, 2]))
        assert d[0].tolist() == [0, 1, 2]
        assert np.all(d[1] == -1)
        assert d[2].tolist() == [3, 4, 5]

    def test_expand_pack_roundtrip(self):
        dm = DofMap(5, 2, np.array([True, True, False, True, True]))
        v = np.arange(8, dtype=float)
        nodal = dm.expand(v)
        assert nodal.shape == (5, 2)
        assert np.allclose(dm.pack(nodal), v)


class TestScatter:
    def test_double_add(self):
        b = CooBuilder(4, 4)
        m = np.array([[1.0]])
        scatter_add(b, m, np.array([2]), np.array([2]))
        scatter_add(b, m, np.array([2]), np.array([2]))
        A = b.tocsr()
        assert A[2, 2] == 2.0

    def test_order_independent(self):
        rng = np.random.default_rng(1)
        blocks = [(rng.integers(0, 6, 3), rng.integers(0, 6, 3),
                   rng.normal(size=(3, 3))) for _ in range(5)]
        b1, b2 = CooBuilder(6, 6), CooBuilder(6, 6)
        for r, c, v in blocks:
            b1.add(r, c, v)
        for r, c, v in reversed(blocks):
            b2.add(r, c, v)
        assert np.allclose(b1.tocsr().toarray(), b2.tocsr().toarray(),
                           atol=1e-15)

    def test_empty(self):
        assert CooBuilder(3, 3).tocsr().nnz == 0

    def test_inactive_dof_rejected(self):
        b = CooBuilder(4, 4)
        with pytest.raises(AssemblyError):
            b.add(np.array([-1]), np.array([0]), np.array([[1.0]]))


class TestVolumeBatch:
    def test_area_integration(self):
        m = generate_structured_rect((0, 0), (2.2, 0.44), 11, 5)
        q = volume_batch(m)
        assert q.w.sum() == pytest.approx(2.2 * 0.44, abs=1e-12)

    def test_quadratic_exact(self):
        m = generate_structured_rect((0, 0), (1, 1), 4, 4)
        q = volume_batch(m)
        val = np.sum(q.w * q.x[:, 0] ** 2 * q.x[:, 1])
        assert val == pytest.approx(1 / 6, abs=1e-13)

    def test_cut_state_area(self):
        from hybridfsi.cutcell import classify_and_cut

        m = generate_structured_rect((0, 0), (2, 2), 6, 6)
        t = 2 * np.pi * np.arange(33) / 32
        loop = np.column_stack([1 + 0.5 * np.cos(t), 1 + 0.5 * np.sin(t)])
        st = classify_and_cut(m, loop)
        q = volume_batch(m, st)
        x, y = loop[:-1, 0], loop[:-1, 1]
        hole = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        assert q.w.sum() == pytest.approx(4.0 - hole, abs=1e-10)

    def test_metric_trace_per_point(self):
        m = generate_structured_rect((0, 0), (1, 1), 2, 2)
        q = volume_batch(m)
        assert np.allclose(q.trG, 32.0, atol=1e-10)
        assert np.allclose(q.GddG, 512.0, atol=1e-8)

    def test_mixed_second_derivative(self):
        # Nodal field x*y on a unit element has d2/dxdy = 1 everywhere.
        m = generate_structured_rect((0, 0), (1, 1), 1, 1)
        q = volume_batch(m)
        nodal = m.node_coords[:, 0] * m.node_coords[:, 1]
        d2 = np.einsum("qa,qakl->qkl", nodal[q.enodes], q.d2Ndx2)
        assert np.allclose(d2[:, 0, 1], 1.0, atol=1e-12)
        assert np.allclose(d2[:, 0, 0], 0.0, atol=1e-12)


class TestFacetBatch:
    def test_lengths_and_normals(self):
        m = generate_structured_rect((0, 0), (2, 1), 2, 1)
        fb = facet_batch(m, np.arange(len(m.interior_facets)))
        assert fb.w.sum() == pytest.approx(1.0, abs=1e-13)
        # Vertical facet at x=1: normal along +-x.
        assert np.allclose(np.abs(fb.normal[:, 0]), 1.0, atol=1e-13)

    def test_trace_continuity_linear_field(self):
        m = generate_structured_rect((0, 0), (1, 1), 3, 3)
        fb = facet_batch(m, np.arange(len(m.interior_facets)))
        nodal = 3.0 * m.node_coords[:, 0] - m.node_coords[:, 1]
        jump = fb.left.interpolate(nodal) - fb.right.interpolate(nodal)
        assert np.allclose(jump, 0.0, atol=1e-11)
        gl = np.einsum("qa,qai->qi", nodal[fb.left.enodes], fb.left.dNdx)
        gr = np.einsum("qa,qai->qi", nodal[fb.right.enodes], fb.right.dNdx)
        assert np.allclose(gl - gr, 0.0, atol=1e-10)

    def test_empty(self):
        m = generate_structured_rect((0, 0), (1, 1), 2, 2)
        fb = facet_batch(m, np.array([], dtype=int))
        assert len(fb.w) == 0


class TestBoundaryBatch:
    def test_outward_normals(self):
        m = generate_structured_rect((0, 0), (1, 1), 2, 2)
        for tag, n_exp in (("left", [-1, 0]), ("right", [1, 0]),
                           ("bottom", [0, -1]), ("top", [0, 1])):
            bb = boundary_batch(m, tag)
            assert np.allclose(bb.normal, n_exp, atol=1e-13)
            assert bb.w.sum() == pytest.approx(1.0, abs=1e-13)
