import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from formjoin.errors import DimensionMismatch, DuplicateAgent, InvalidRotation
from formjoin.formation import (
    ManeuverParams,
    NominalFormation,
    Rotation,
    apply_maneuver,
    distance_to_shape_space,
    scaling_transform,
    shape_space_basis,
)

# 45 degree rotation with rows [cos, sin], [-sin, cos]
C = np.cos(np.pi / 4)
R45 = np.array([[C, C], [-C, C]])

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_rotation_rejects_non_orthogonal_and_reflections():
    with pytest.raises(InvalidRotation):
        Rotation(np.array([[1.0, 0.1], [0.0, 1.0]]))
    with pytest.raises(InvalidRotation):
        Rotation(np.diag([1.0, -1.0]))
    Rotation(R45)


@pytest.mark.parametrize("d", [1, 2, 3, 5, 8])
def test_random_rotation_is_in_so_d(d):
    R = Rotation.random(d, np.random.default_rng(d)).matrix
    assert np.allclose(R.T @ R, np.eye(d), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


class TestScalingTransform:
    def test_identity(self):
        assert np.array_equal(scaling_transform([1, 1], np.eye(2)), np.eye(2))

    def test_rotated_axes(self):
        # oracle: explicit triple product with hand-entered matrices
        oracle = R45 @ np.array([[2.0, 0.0], [0.0, 1.0]]) @ R45.T
        S = scaling_transform([2, 1], R45)
        assert np.allclose(S, oracle, atol=1e-12)
        assert np.allclose(S, [[1.5, -0.5], [-0.5, 1.5]], atol=1e-12)

    def test_zero(self):
        assert np.allclose(scaling_transform([0, 0], R45), 0.0, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            scaling_transform([1, 2, 3], np.eye(2))

    @given(arrays(float, 3, elements=finite), st.integers(0, 2**31))
    def test_symmetric_with_eigenvalues_s(self, s, seed):
        R = Rotation.random(3, np.random.default_rng(seed))
        S = scaling_transform(s, R)
        assert np.allclose(S, S.T, atol=1e-12)
        assert np.allclose(np.sort(np.linalg.eigvalsh(S)), np.sort(s), atol=1e-9)
        assert np.allclose(scaling_transform(np.ones(3), R), np.eye(3), atol=1e-12)

    @given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite), st.integers(0, 2**31))
    def test_composition_is_elementwise_product(self, s1, s2, seed):
        R = Rotation.random(4, np.random.default_rng(seed))
        lhs = scaling_transform(s1, R) @ scaling_transform(s2, R)
        assert np.allclose(lhs, scaling_transform(s1 * s2, R), atol=1e-12 * max(1.0, np.abs(s1 * s2).max()) * 100)


class TestApplyManeuver:
    def test_identity_maneuver(self, F6):
        assert np.allclose(apply_maneuver(F6, ManeuverParams.identity(2)), F6.ptilde)

    def test_corridor_compression(self, F6):
        p = apply_maneuver(F6, ManeuverParams([1, 0.5], [0, 0])).reshape(-1, 2)
        assert np.allclose(p[0], [-3, 1.5])

    def test_collapse_to_translation(self, F6):
        p = apply_maneuver(F6, ManeuverParams([0, 0], [1, -1])).reshape(-1, 2)
        assert np.allclose(p, [1, -1])


class TestShapeSpace:
    def test_six_agent_rank(self, F6):
        # oracle: kron-built generators, rank via numpy's SVD rank
        n, d = 6, 2
        gens = [np.kron(np.ones(n), e) for e in np.eye(d)]
        gens += [np.kron(np.eye(n), np.diag(e)) @ F6.ptilde for e in np.eye(d)]
        assert np.linalg.matrix_rank(np.column_stack(gens)) == 4
        B = shape_space_basis(F6)
        assert B.rank == 4
        assert np.allclose(B.columns.T @ B.columns, np.eye(4), atol=1e-10)

    def test_coincident_agents_rank_d(self):
        F = NominalFormation((1, 2, 3), np.tile([1.0, 2.0], (3, 1)), Rotation.identity(2), {1})
        assert shape_space_basis(F).rank == 2

    def test_single_agent_rank_d(self):
        F = NominalFormation((1,), np.array([[0.5, -1.0, 2.0]]), Rotation.identity(3), {1})
        assert shape_space_basis(F).rank == 3

    def test_distance_zero_at_nominal(self, F6):
        assert distance_to_shape_space(F6.ptilde, shape_space_basis(F6)) < 1e-12

    def test_maneuvers_stay_in_shape_space(self, F6, rng):
        B = shape_space_basis(F6)
        for _ in range(100):
            p = apply_maneuver(F6, ManeuverParams(rng.uniform(-3, 3, 2), rng.uniform(-10, 10, 2)))
            assert distance_to_shape_space(p, B) <= 1e-9 * np.linalg.norm(p)

    def test_orthogonal_perturbation(self, F6, rng):
        B = shape_space_basis(F6)
        x = rng.standard_normal(12)
        x -= B.project(x)
        x /= np.linalg.norm(x)
        assert distance_to_shape_space(F6.ptilde + x, B) == pytest.approx(1.0, abs=1e-9)

    @settings(max_examples=50)
    @given(st.integers(2, 4), st.integers(1, 7), st.integers(0, 2**31))
    def test_property_distance_after_maneuver(self, d, n, seed):
        r = np.random.default_rng(seed)
        F = NominalFormation(tuple(range(n)), r.uniform(-5, 5, (n, d)), Rotation.random(d, r), {0})
        p = apply_maneuver(F, ManeuverParams(r.uniform(-2, 2, d), r.uniform(-5, 5, d)))
        assert distance_to_shape_space(p, shape_space_basis(F)) <= 1e-9 * (1 + np.linalg.norm(p))


def test_formation_validation(F6):
    with pytest.raises(DuplicateAgent):
        NominalFormation((1, 1), np.zeros((2, 2)), Rotation.identity(2), {1})
    with pytest.raises(ValueError):
        NominalFormation((1, 2), np.zeros((2, 2)), Rotation.identity(2), set())
    with pytest.raises(DuplicateAgent):
        F6.with_agent(3, [0, 0])
    F7 = F6.with_agent(7, [-1, -2.1])
    assert F7.n == 7 and F7.follower_ids == [3, 4, 5, 6, 7]
