import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formjoin.constraints import (
    Triplet,
    TripletWeights,
    constraint_residual,
    constraint_weights,
    genericity_check,
    genericity_margin,
    require_generic,
    resolve_dependent,
    rotated_offset,
    weights_from_positions,
)
from formjoin.errors import SingularWeight
from formjoin.formation import ManeuverParams, Rotation, apply_maneuver, scaling_transform

from conftest import P7, P8

C = np.cos(np.pi / 4)
R45 = np.array([[C, C], [-C, C]])


def test_rotated_offset_quarter_turn():
    R = Rotation.planar(np.pi / 2).matrix
    assert np.allclose(R, [[0, -1], [1, 0]], atol=1e-15)
    assert np.allclose(rotated_offset([1, 0], [0, 0], R), [0, -1], atol=1e-15)


def test_triplet_needs_distinct_agents():
    with pytest.raises(ValueError):
        Triplet(1, 1, 2)


def test_weights_sum_is_checked():
    with pytest.raises(ValueError):
        TripletWeights(np.eye(2), np.eye(2), np.eye(2))


def test_join_of_agent_seven(F6):
    F7 = F6.with_agent(7, P7)
    w = constraint_weights(Triplet(5, 6, 7), F7)
    assert np.allclose(w.w_jk, -np.diag([1, 0.9]), atol=1e-12, rtol=0)
    assert np.allclose(w.w_ki, -np.diag([1, 0.1]), atol=1e-12, rtol=0)
    assert np.allclose(w.w_kk, -np.diag([2, 1]), atol=1e-12, rtol=0)


def test_join_of_agent_eight_anchor_weight(F6):
    F8 = F6.with_agent(8, P8)
    w = constraint_weights(Triplet(2, 3, 8), F8)
    assert np.allclose(w.w_kk, np.diag([-1, -2]), atol=1e-12)


class TestGenericity:
    def test_identity_rotation(self):
        assert genericity_check([0, 0], [1, 1], np.eye(2))
        assert not genericity_check([0, 0], [1, 0], np.eye(2))

    def test_diagonal_offset_is_degenerate_under_45_degrees(self):
        # R^T [1, 1] = [0, sqrt 2]
        assert not genericity_check([0, 0], [1, 1], R45)
        assert genericity_check([0, 0], [1, 0], R45)
        assert genericity_margin([0, 0], [1, 0], R45) == pytest.approx(C)

    def test_require_generic_raises(self):
        with pytest.raises(SingularWeight) as exc:
            require_generic([0, 0], [3, 0], np.eye(2))
        assert exc.value.sigma_min == 0.0

    def test_explicit_eps(self):
        assert not genericity_check([0, 0], [1, 0.01], np.eye(2), eps=0.1)
        with pytest.raises(ValueError):
            genericity_check([0, 0], [1, 1], np.eye(2), eps=0)


class TestResolveDependent:
    def test_recovers_new_agent(self):
        w = weights_from_positions([0, -2], [-2, -3], P7, np.eye(2))
        assert np.allclose(resolve_dependent(w, [0, -2], [-2, -3]), P7, atol=1e-12)

    def test_after_maneuver(self, rng):
        R = Rotation.random(3, rng)
        p = rng.uniform(-3, 3, (3, 3))
        w = weights_from_positions(*p, R)
        s, tau = rng.uniform(0.2, 2, 3), rng.uniform(-4, 4, 3)
        q = (scaling_transform(s, R) @ p.T).T + tau
        assert np.allclose(resolve_dependent(w, q[0], q[1]), q[2], atol=1e-9)

    @pytest.mark.parametrize("offset", [[2.0, 0.0], [0.0, -1.5], [0.0, 0.0]])
    def test_zero_component_is_singular(self, offset):
        p_i = np.array([1.0, 1.0])
        w = weights_from_positions(p_i, p_i + offset, [4.0, -2.0], np.eye(2))
        with pytest.raises(SingularWeight):
            resolve_dependent(w, p_i, p_i + offset)


triplet_coords = st.lists(st.floats(-5, 5, allow_nan=False), min_size=9, max_size=9)


@settings(max_examples=200)
@given(triplet_coords, st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3),
       st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3), st.integers(0, 2**31))
def test_residual_vanishes_under_scaling_and_translation(coords, s, tau, seed):
    R = Rotation.random(3, np.random.default_rng(seed))
    p = np.array(coords).reshape(3, 3)
    w = weights_from_positions(*p, R)
    q = (scaling_transform(s, R) @ p.T).T + np.array(tau)
    bound = 1e-9 * (1 + np.max(np.abs(s))) * max(1.0, np.abs(p).max())
    assert np.max(np.abs(constraint_residual(w, *q))) <= bound


def test_residual_detects_non_affine_motion(F6):
    F7 = F6.with_agent(7, P7)
    w = constraint_weights(Triplet(5, 6, 7), F7)
    q = apply_maneuver(F7, ManeuverParams([1, 1], [0, 0])).reshape(-1, 2)
    q[-1] += [0.5, 0]
    assert np.linalg.norm(constraint_residual(w, q[4], q[5], q[6])) > 0.1
