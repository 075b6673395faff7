import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formjoin.constraints import Triplet, genericity_margin
from formjoin.errors import DimensionMismatch, DuplicateAgent, SingularFollowerBlock, SingularWeight, UnknownAnchor
from formjoin.formation import ManeuverParams, NominalFormation, Rotation, apply_maneuver
from formjoin.protocol import select_pair
from formjoin.laplacian import (
    BlockLaplacian,
    DesignWeight,
    JoinStep,
    build_incremental,
    follower_equilibrium,
    iter_incremental,
    join_update,
    laplacian_apply,
    pad,
    stamp_blocks,
    triplet_stamp,
    validate_spectral,
)

from conftest import P7


def random_steps(rng, d, n, R, box=5.0, margin=0.1):
    """Seed pair plus join steps; each newcomer anchors on the max-margin placed pair."""
    pos = [rng.uniform(-box, box, d)]
    while True:
        cand = rng.uniform(-box, box, d)
        if genericity_margin(pos[0], cand, R) > margin:
            pos.append(cand)
            break
    steps = []
    for v in range(2, n):
        pos.append(rng.uniform(-box, box, d))
        i, j = select_pair(dict(enumerate(pos[:v])), pos[v], R)
        steps.append(JoinStep(v, pos[v], int(i), int(j)))
    return ((0, pos[0]), (1, pos[1])), steps


class TestStamp:
    def test_agent_seven_blocks(self, F6):
        t0 = time.perf_counter()
        st_ = triplet_stamp(Triplet(5, 6, 7), F6.with_agent(7, P7))
        assert time.perf_counter() - t0 < 0.1
        blocks = dict(((a, b), blk) for a, b, blk in st_.edge_deltas())
        assert np.allclose(blocks[(5, 6)], np.diag([1, 0.09]), atol=1e-12, rtol=0)
        assert np.allclose(blocks[(5, 7)], np.diag([-2, -0.9]), atol=1e-12, rtol=0)
        assert np.allclose(blocks[(6, 7)], np.diag([-2, -0.1]), atol=1e-12, rtol=0)
        assert np.allclose(st_.blocks[2, 2], np.diag([4, 1]), atol=1e-12)

    def test_stamp_psd_rank_d_and_zero_rows(self, rng):
        for _ in range(20):
            d = int(rng.integers(2, 5))
            p = rng.uniform(-3, 3, (3, d))
            A = triplet_stamp(Triplet(0, 1, 2), NominalFormation((0, 1, 2), p, Rotation.random(d, rng), {0})).matrix()
            ev = np.linalg.eigvalsh(A)
            assert ev[0] >= -1e-9 * ev[-1]
            assert np.sum(ev > 1e-8 * ev[-1]) == d
            assert np.allclose(A @ np.tile(np.eye(d), (3, 1)), 0, atol=1e-9 * ev[-1])

    def test_design_weight_scales_stamp(self):
        args = ([0, -2], [-2, -3], P7, np.eye(2))
        base = stamp_blocks(*args)
        assert np.allclose(stamp_blocks(*args, DesignWeight([3.0, 3.0])), 3 * base)

    def test_design_weight_must_be_positive(self):
        with pytest.raises(ValueError):
            DesignWeight([1.0, 0.0])

    def test_degenerate_anchors(self):
        with pytest.raises(SingularWeight):
            stamp_blocks([0, 0], [1, 0], [2, 2], np.eye(2))


class TestBlockLaplacian:
    def test_dense_matches_blocks(self, L6):
        A = L6.dense()
        assert np.allclose(A, A.T)
        assert np.allclose(A[0:2, 2:4], np.diag([5, -6]))
        assert np.allclose(L6.diag_block(1), -(np.diag([5, -6]) + np.diag([-30, 1])))
        assert np.allclose(A @ np.tile(np.eye(2), (6, 1)), 0)

    def test_block_symmetry(self):
        L = BlockLaplacian(2, (1, 2), {(2, 1): np.array([[1.0, 2.0], [3.0, 4.0]])})
        assert np.allclose(L.block(1, 2), L.block(2, 1).T)
        assert L.neighbors(1) == [2]

    def test_json_roundtrip_is_exact(self, L6, rng):
        L = L6.with_increments([])
        L = BlockLaplacian(2, L.agent_ids, {k: v + rng.standard_normal((2, 2)) * 1e-7 for k, v in L.edges.items()})
        back = BlockLaplacian.from_json(L.to_json())
        assert np.array_equal(back.dense(), L.dense())

    def test_apply_matches_dense(self, L6, rng):
        p = rng.standard_normal(12)
        assert np.allclose(laplacian_apply(L6, p), L6.dense() @ p, atol=1e-12)
        with pytest.raises(DimensionMismatch):
            laplacian_apply(L6, np.zeros(5))

    def test_pad(self, L6):
        P = pad(L6, [7])
        A = P.dense()
        assert A.shape == (14, 14)
        assert np.array_equal(A[:12, :12], L6.dense())
        assert not A[12:].any() and not A[:, 12:].any()
        with pytest.raises(DuplicateAgent):
            pad(L6, [3])


class TestJoin:
    def test_merged_edge(self, L6, F6):
        L7, F7, _ = join_update(L6, F6, 7, P7, 5, 6)
        assert np.allclose(L7.block(5, 6), np.diag([-14, -5.91]), atol=1e-12, rtol=0)
        assert np.allclose(L7.dense() @ F7.ptilde, 0, atol=1e-10)

    def test_spectrum_before_and_after(self, L6, F6):
        before = validate_spectral(L6, F6)
        L7, F7, _ = join_update(L6, F6, 7, P7, 5, 6)
        after = validate_spectral(L7, F7)
        assert before.passed and after.passed
        assert after.kernel_dim == 4 and after.rank == before.rank + 2
        assert after.lff_min_eig > 0

    def test_design_weight_changes_blocks_not_kernel(self, L6, F6):
        L7, F7, _ = join_update(L6, F6, 7, P7, 5, 6, DesignWeight([2.0, 0.5]))
        assert validate_spectral(L7, F7).passed
        assert not np.allclose(L7.block(5, 6), np.diag([-14, -5.91]))

    def test_bad_anchor_and_duplicate(self, L6, F6):
        with pytest.raises(UnknownAnchor):
            join_update(L6, F6, 7, P7, 5, 99)
        with pytest.raises(DuplicateAgent):
            join_update(L6, F6, 6, P7, 4, 5)

    @pytest.mark.parametrize("case", ["two_followers", "leader_and_follower", "two_leaders"])
    def test_follower_block_stays_positive_definite(self, L6, F6, case):
        anchors = {"two_followers": (5, 6), "leader_and_follower": (1, 6), "two_leaders": (1, 2)}[case]
        v_pos = {"two_followers": P7, "leader_and_follower": [-4.0, -1.0], "two_leaders": [0.5, 4.0]}[case]
        L7, F7, _ = join_update(L6, F6, 7, v_pos, *anchors)
        rep = validate_spectral(L7, F7)
        assert rep.passed and rep.lff_min_eig > 0

    def test_non_adjacent_anchors_create_edge(self, L6, F6):
        assert 4 not in L6.neighbors(2)
        L8, F8, _ = join_update(L6, F6, 8, [-1.0, 1.0], 2, 4)
        assert 4 in L8.neighbors(2)
        assert validate_spectral(L8, F8).passed

    def test_zeroed_edge_breaks_kernel(self, L6, F6):
        edges = dict(L6.edges)
        edges[(1, 6)] = np.zeros((2, 2))
        rep = validate_spectral(BlockLaplacian(2, L6.agent_ids, edges), F6)
        assert not rep.passed


class TestFollowerEquilibrium:
    def test_maneuvered_targets(self, L6, F6, rng):
        L7, F7, _ = join_update(L6, F6, 7, P7, 5, 6)
        for _ in range(10):
            p = apply_maneuver(F7, ManeuverParams(rng.uniform(0.2, 2, 2), rng.uniform(-5, 5, 2))).reshape(-1, 2)
            lead = [F7.index(a) for a in F7.leader_ids]
            fol = [F7.index(a) for a in F7.follower_ids]
            assert np.allclose(follower_equilibrium(L7, F7, p[lead]), p[fol], atol=1e-8)

    def test_singular_follower_block(self, F6):
        with pytest.raises(SingularFollowerBlock):
            follower_equilibrium(BlockLaplacian.zero(2, F6.agent_ids), F6, np.zeros((2, 2)))

    def test_wrong_leader_count(self, L6, F6):
        with pytest.raises(DimensionMismatch):
            follower_equilibrium(L6, F6, np.zeros((3, 2)))


class TestIncremental:
    def test_twelve_agents_in_three_dimensions(self, rng):
        R = Rotation.random(3, rng)
        seed, steps = random_steps(rng, 3, 12, R)
        for k, (L, F) in enumerate(iter_incremental(seed, steps, R)):
            rep = validate_spectral(L, F)
            assert rep.passed and rep.kernel_dim == 6
            assert rep.rank == 3 * k

    def test_degenerate_step_reports_index(self):
        seed = ((0, [0.0, 0.0]), (1, [1.0, 1.0]))
        with pytest.raises(SingularWeight, match="step 1"):
            build_incremental(seed, [JoinStep(2, [2.0, 1.0], 0, 1), JoinStep(3, [5.0, 5.0], 1, 2)], np.eye(2))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 4), st.integers(3, 8), st.integers(0, 2**31))
    def test_kernel_is_shape_space(self, d, n, seed):
        r = np.random.default_rng(seed)
        R = Rotation.random(d, r)
        s, steps = random_steps(r, d, n, R)
        L, F = build_incremental(s, steps, R)
        rep = validate_spectral(L, F)
        assert rep.passed and rep.kernel_dim == 2 * d
