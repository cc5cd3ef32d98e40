import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cstarnet.algebra import (
    AElement,
    AlgebraError,
    AnchorMismatchError,
    AnchorSet,
    AVector,
    DomainError,
    RepresentationError,
    constant,
    evaluate,
    identity_element,
    inner_product,
    is_positive,
    norm,
    pointwise,
)
from cstarnet.basis import BasisSpec, RidgeProjector, make_grid_anchors

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@pytest.fixture
def anchors():
    return make_grid_anchors()


@pytest.fixture
def proj(anchors):
    return RidgeProjector(BasisSpec(anchors, 10.0), mu=0.1)


class TestAnchorSet:
    def test_shape(self, anchors):
        assert anchors.count == 9
        assert anchors.dim == 2

    def test_duplicates_rejected(self):
        with pytest.raises(AlgebraError):
            AnchorSet(np.array([[0.0, 0.0], [0.0, 0.0]]))

    def test_outside_box_rejected(self):
        with pytest.raises(DomainError):
            AnchorSet(np.array([[5.0, 0.0]]), -4.0, 4.0)

    def test_round_trip_dict(self, anchors):
        again = AnchorSet.from_dict(anchors.to_dict())
        np.testing.assert_array_equal(again.points, anchors.points)
        np.testing.assert_array_equal(again.lower, anchors.lower)


class TestEvaluate:
    def test_identity_is_one_everywhere(self, anchors, proj):
        one = identity_element(anchors, proj)
        for z in ([0.0, 0.0], [1.3, -2.2], [3.9, 3.9]):
            assert abs(evaluate(one, z) - 1.0) <= 1e-9

    def test_basis_function_at_its_center(self, anchors, proj):
        e1 = proj.element(np.eye(9)[0])
        assert evaluate(e1, anchors.points[0]) == pytest.approx(1.0, abs=1e-15)

    def test_basis_function_decay(self, anchors, proj):
        e1 = proj.element(np.eye(9)[0])
        z = anchors.points[0] + np.array([math.sqrt(0.1), 0.0])
        assert evaluate(e1, z) == pytest.approx(0.367879441171, abs=1e-12)

    def test_needs_coeffs(self, anchors):
        with pytest.raises(RepresentationError):
            evaluate(AElement(anchors, np.ones(9)), [0.0, 0.0])

    def test_outside_box(self, anchors, proj):
        with pytest.raises(DomainError):
            evaluate(identity_element(anchors, proj), [5.0, 0.0])

    def test_anchor_value_matches_sample(self, anchors, proj):
        rng = np.random.default_rng(3)
        a = proj.element(rng.normal(size=9))
        for i, z in enumerate(anchors.points):
            assert abs(evaluate(a, z) - a.samples[i]) <= 1e-12


class TestPointwise:
    def test_constants_multiply(self, anchors):
        out = pointwise(constant(anchors, 2.0), constant(anchors, 3.0), "mul")
        np.testing.assert_array_equal(out.samples, np.full(9, 6.0))

    def test_identity_law(self, anchors, proj):
        rng = np.random.default_rng(0)
        a = proj.element(rng.normal(size=9))
        out = a * identity_element(anchors, proj)
        np.testing.assert_array_equal(out.samples, a.samples)

    def test_square_of_basis_function(self, anchors, proj):
        v1 = proj.element(np.eye(9)[0])
        out = v1 * v1
        # oracle: closed-form square at the anchors, then a dense ridge solve
        d2 = np.sum((anchors.points - anchors.points[0]) ** 2, axis=1)
        expect = np.exp(-20.0 * d2)
        G = np.exp(-10.0 * np.sum((anchors.points[:, None] - anchors.points[None]) ** 2, axis=-1))
        coeffs = np.linalg.solve(G + 0.1 * np.eye(9), expect)
        np.testing.assert_allclose(v1.samples ** 2, expect, atol=1e-15)
        np.testing.assert_allclose(out.coeffs, coeffs, rtol=1e-10, atol=1e-13)
        np.testing.assert_allclose(out.samples, G @ coeffs, atol=1e-12)

    def test_add_carries_coeffs(self, anchors, proj):
        rng = np.random.default_rng(1)
        a, b = proj.element(rng.normal(size=9)), proj.element(rng.normal(size=9))
        out = a + b
        np.testing.assert_allclose(out.coeffs, a.coeffs + b.coeffs)
        np.testing.assert_allclose(out.samples, a.samples + b.samples)

    def test_anchor_mismatch(self, anchors):
        other = AnchorSet(np.zeros((9, 2)) + np.arange(9)[:, None] * 0.1)
        with pytest.raises(AnchorMismatchError):
            pointwise(constant(anchors, 1.0), constant(other, 1.0), "add")


class TestInnerProductAndNorm:
    def test_unit_vector(self, anchors):
        e1 = AVector.from_elements([constant(anchors, 1.0), constant(anchors, 0.0)])
        np.testing.assert_array_equal(inner_product(e1, e1).samples, np.ones(9))

    def test_constant_dot_product(self, anchors):
        u = AVector.from_elements([constant(anchors, 1.0), constant(anchors, 2.0)])
        v = AVector.from_elements([constant(anchors, 3.0), constant(anchors, 4.0)])
        np.testing.assert_array_equal(inner_product(u, v).samples, np.full(9, 11.0))

    def test_length_mismatch(self, anchors):
        u = AVector(anchors, np.ones((2, 9)))
        with pytest.raises(AlgebraError):
            inner_product(u, AVector(anchors, np.ones((3, 9))))

    def test_zero_norm(self, anchors):
        assert norm(AVector(anchors, np.zeros((4, 9)))) == 0.0

    def test_constant_norm(self, anchors):
        assert norm(AVector(anchors, np.full((1, 9), -2.5))) == 2.5

    def test_sup_over_anchors(self, anchors):
        s = np.full((1, 9), 4.0)
        s[0, 0] = 3.0
        assert norm(AVector(anchors, s)) == 4.0

    def test_empty_vector_rejected(self, anchors):
        with pytest.raises(AlgebraError):
            AVector.from_elements([])


class TestPositivity:
    def test_one_is_positive(self, anchors):
        assert is_positive(constant(anchors, 1.0))

    def test_negative_sample(self, anchors):
        s = np.ones(9)
        s[4] = -1.0
        assert not is_positive(AElement(anchors, s))

    def test_square_is_positive(self, anchors):
        u = AVector(anchors, np.random.default_rng(0).normal(size=(6, 9)))
        assert is_positive(inner_product(u, u))


# -- properties ------------------------------------------------------------------

vecs = arrays(np.float64, (3, 4), elements=finite)
ANCH4 = AnchorSet(np.array([[0.0], [0.25], [0.5], [0.75]]), 0.0, 1.0)


class TestProperties:
    @given(vecs, vecs)
    def test_inner_product_symmetric(self, a, b):
        u, v = AVector(ANCH4, a), AVector(ANCH4, b)
        np.testing.assert_array_equal(inner_product(u, v).samples, inner_product(v, u).samples)

    @given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite))
    def test_submultiplicative(self, a, b):
        ea, eb = AElement(ANCH4, a), AElement(ANCH4, b)
        prod = pointwise(ea, eb, "mul")
        assert prod.sup_norm() <= ea.sup_norm() * eb.sup_norm()

    @settings(max_examples=200)
    @given(vecs)
    def test_cstar_identity(self, a):
        u = AVector(ANCH4, a)
        lhs = float(np.max(np.abs(inner_product(u, u).samples)))
        # the norm is a square root; squaring it back is exact up to ulps
        np.testing.assert_allclose(lhs, norm(u) ** 2, rtol=4 * np.finfo(float).eps, atol=0)

    @given(vecs)
    def test_self_inner_product_positive(self, a):
        u = AVector(ANCH4, a)
        assert is_positive(inner_product(u, u))
