import numpy as np
import pytest

from seqedit.editor import (
    ConstraintViolation,
    DegenerateKey,
    EditorState,
    apply_edit,
    compute_delta,
    constraint_residual,
    init_state,
    minimal_disturbance_check,
    pre_edit_value,
)
from seqedit.keyvalues import EditRequest
from seqedit.linalg import MemoryMatrix, ShapeError, SpdMatrix, cholesky, frob_norm_sq, random_spd


def make_state(w, c=None):
    w = np.asarray(w, dtype=np.float64)
    if c is None:
        c = SpdMatrix.identity(w.shape[1])
    return EditorState(w=MemoryMatrix(w), c=c)


def request(key, rid="t"):
    return EditRequest(id=rid, key=np.asarray(key, dtype=np.float64))


class TestPreEditValue:
    def test_zero_matrix(self):
        state = make_state(np.zeros((3, 2)))
        assert np.array_equal(pre_edit_value(state, np.ones(2)), np.zeros(3))

    def test_identity_map(self):
        state = make_state(np.eye(2))
        assert np.array_equal(pre_edit_value(state, np.array([3.0, 4.0])),
                              np.array([3.0, 4.0]))

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((3, 3))
        k = rng.standard_normal(3)
        expected = np.array([sum(w[i, j] * k[j] for j in range(3)) for i in range(3)])
        state = make_state(w)
        assert np.allclose(pre_edit_value(state, k), expected, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            pre_edit_value(make_state(np.eye(2)), np.ones(3))


class TestComputeDelta:
    def test_noop_is_zero(self):
        rng = np.random.default_rng(1)
        state = make_state(rng.standard_normal((4, 3)))
        k = rng.standard_normal(3)
        v_old = pre_edit_value(state, k)
        delta = compute_delta(state, k, v_old)
        assert np.all(delta.materialize() == 0.0)

    def test_hand_evaluated_identity_c(self):
        # W = 0 (2x2), k = e1, v_new = (5, 0): delta = v k^T / ||k||^2
        state = make_state(np.zeros((2, 2)))
        delta = compute_delta(state, np.array([1.0, 0.0]), np.array([5.0, 0.0]))
        assert np.allclose(delta.materialize(), np.array([[5.0, 0.0], [0.0, 0.0]]))

    def test_general_c_satisfies_constraint(self):
        c = cholesky(np.diag([4.0, 1.0]))
        state = make_state(np.zeros((2, 2)), c)
        k = np.array([1.0, 0.0])
        v_new = np.array([5.0, 0.0])
        delta = compute_delta(state, k, v_new)
        w_after = state.w.data + delta.materialize()
        assert np.allclose(w_after @ k, v_new, rtol=1e-10)

    def test_degenerate_key(self):
        state = make_state(np.eye(2))
        with pytest.raises(DegenerateKey):
            compute_delta(state, np.full(2, 1e-9), np.ones(2))

    def test_scale_is_inverse_quad_form(self):
        rng = np.random.default_rng(2)
        c = random_spd(5, 10.0, rng)
        state = make_state(rng.standard_normal((3, 5)), c)
        k = rng.standard_normal(5)
        delta = compute_delta(state, k, rng.standard_normal(3))
        assert delta.scale == pytest.approx(c.quad_inv(k), rel=1e-12)


class TestApplyEdit:
    def test_constraint_exact(self):
        rng = np.random.default_rng(3)
        state = make_state(rng.standard_normal((6, 4)))
        k = rng.standard_normal(4)
        v_new = rng.standard_normal(6)
        apply_edit(state, request(k), v_new)
        assert constraint_residual(state, k, v_new) <= 1e-8

    def test_noop_preserves_norm_exactly(self):
        rng = np.random.default_rng(4)
        state = make_state(rng.standard_normal((4, 4)))
        before = state.w.norm_sq()
        k = rng.standard_normal(4)
        v_old = pre_edit_value(state, k)
        apply_edit(state, request(k), v_old)
        assert state.w.norm_sq() == before

    def test_single_edit_from_zero_matches_recursion(self):
        # ||W1||^2 = ||v_new||^2 / ||k||^2 for W0 = 0, C = I
        rng = np.random.default_rng(5)
        state = make_state(np.zeros((5, 3)))
        k = rng.standard_normal(3)
        v_new = rng.standard_normal(5)
        apply_edit(state, request(k), v_new)
        expected = float(v_new @ v_new) / float(k @ k)
        assert state.w.norm_sq() == pytest.approx(expected, rel=1e-12)

    def test_step_counter_increments(self):
        rng = np.random.default_rng(6)
        state = make_state(rng.standard_normal((3, 3)))
        for i in range(3):
            apply_edit(state, request(rng.standard_normal(3), rid=str(i)),
                       rng.standard_normal(3))
        assert state.step == 3

    def test_two_orthogonal_edits_hold_simultaneously(self):
        # brute-force 4x4 check with orthogonal keys under C = I
        rng = np.random.default_rng(7)
        state = make_state(rng.standard_normal((4, 4)))
        k1 = np.array([1.0, 0.0, 0.0, 0.0])
        k2 = np.array([0.0, 2.0, 0.0, 0.0])
        v1 = rng.standard_normal(4)
        v2 = rng.standard_normal(4)
        apply_edit(state, request(k1, "a"), v1)
        apply_edit(state, request(k2, "b"), v2)
        assert np.allclose(state.w.data @ k1, v1, rtol=1e-10, atol=1e-12)
        assert np.allclose(state.w.data @ k2, v2, rtol=1e-10, atol=1e-12)

    def test_norm_recursion_per_step_identity_c(self):
        # ||W_n||^2 - ||W_{n-1}||^2 = (||v_new||^2 - ||v_old||^2)/||k||^2
        rng = np.random.default_rng(8)
        state = make_state(rng.standard_normal((8, 6)))
        for i in range(50):
            k = rng.standard_normal(6)
            v_new = rng.standard_normal(8)
            before = state.w.norm_sq()
            out = apply_edit(state, request(k, str(i)), v_new)
            after = state.w.norm_sq()
            lhs = after - before
            rhs = (float(v_new @ v_new) - float(out.v_old @ out.v_old)) / out.key_norm_sq
            assert abs(lhs - rhs) <= 1e-8 * max(abs(lhs), abs(rhs), before, after)

    def test_norm_recursion_whitened_general_c(self):
        rng = np.random.default_rng(9)
        c = random_spd(6, 10.0, rng)
        state = make_state(rng.standard_normal((8, 6)), c)
        for i in range(50):
            k = rng.standard_normal(6)
            v_new = rng.standard_normal(8)
            before = frob_norm_sq(state.w.data @ c.sqrt)
            out = apply_edit(state, request(k, str(i)), v_new)
            after = frob_norm_sq(state.w.data @ c.sqrt)
            lhs = after - before
            rhs = (float(v_new @ v_new) - float(out.v_old @ out.v_old)) / out.key_c_norm_sq
            assert abs(lhs - rhs) <= 1e-8 * max(abs(lhs), abs(rhs), before, after)

    def test_delta_numerical_rank_one(self):
        rng = np.random.default_rng(10)
        state = make_state(rng.standard_normal((6, 5)))
        out = apply_edit(state, request(rng.standard_normal(5)), rng.standard_normal(6))
        s = np.linalg.svd(out.delta.materialize(), compute_uv=False)
        assert s[1] <= 1e-10 * s[0]

    def test_outcome_records_unconstrained_value(self):
        rng = np.random.default_rng(11)
        state = make_state(rng.standard_normal((3, 3)))
        v_hat = rng.standard_normal(3)
        v_new = 2.0 * v_hat
        out = apply_edit(state, request(rng.standard_normal(3)), v_new,
                         v_new_unconstrained=v_hat)
        assert np.array_equal(out.v_new_unconstrained, v_hat)
        assert np.array_equal(out.v_new, v_new)

    def test_verification_failure_raises(self):
        rng = np.random.default_rng(12)
        state = make_state(rng.standard_normal((3, 3)))
        with pytest.raises(ConstraintViolation):
            apply_edit(state, request(rng.standard_normal(3)), rng.standard_normal(3),
                       constraint_rtol=1e-18)

    def test_v_old_recomputed_from_current_state(self):
        # second edit with the same key sees the first edit's result
        rng = np.random.default_rng(13)
        state = make_state(rng.standard_normal((4, 4)))
        k = rng.standard_normal(4)
        v1 = rng.standard_normal(4)
        apply_edit(state, request(k, "a"), v1)
        out = apply_edit(state, request(k, "b"), rng.standard_normal(4))
        assert np.allclose(out.v_old, v1, rtol=1e-9)


class TestInitState:
    def test_shape_and_determinism(self):
        s1 = init_state(6, 4, seed=5)
        s2 = init_state(6, 4, seed=5)
        assert s1.w.data.shape == (6, 4)
        assert np.array_equal(s1.w.data, s2.w.data)

    def test_norm_scales_with_sigma(self):
        # E ||W0||^2 = d_v * sigma^2
        states = [init_state(64, 32, w0_sigma=2.0, seed=s) for s in range(30)]
        mean = np.mean([s.w.norm_sq() for s in states])
        assert mean == pytest.approx(64 * 4.0, rel=0.1)

    def test_w0_norm_recorded(self):
        s = init_state(4, 4, seed=0)
        assert s.w0_norm_sq == s.w.norm_sq()


class TestMinimalDisturbance:
    def test_identical_states(self):
        rng = np.random.default_rng(14)
        w = MemoryMatrix(rng.standard_normal((4, 3)))
        keys = rng.standard_normal((5, 3))
        assert minimal_disturbance_check(w, w.copy(), keys) == 0.0

    def test_orthogonal_holdouts_untouched(self):
        # rank-one update annihilates keys orthogonal to C^{-1} k*
        rng = np.random.default_rng(15)
        c = random_spd(4, 5.0, rng)
        state = make_state(rng.standard_normal((3, 4)), c)
        before = state.w.copy()
        k = rng.standard_normal(4)
        apply_edit(state, request(k), rng.standard_normal(3))
        ck = c.solve(k)
        basis = np.linalg.svd(ck[None, :])[2][1:]  # orthogonal complement of ck
        value = minimal_disturbance_check(before, state.w, basis)
        assert value <= 1e-10

    def test_matches_naive_per_key_oracle(self):
        rng = np.random.default_rng(16)
        w1 = MemoryMatrix(rng.standard_normal((4, 3)))
        w2 = MemoryMatrix(rng.standard_normal((4, 3)))
        keys = rng.standard_normal((7, 3))
        naive = np.mean([
            float(np.sum((w2.data @ k - w1.data @ k) ** 2)) for k in keys
        ])
        assert minimal_disturbance_check(w1, w2, keys) == pytest.approx(naive, rel=1e-12)

    def test_requires_keys(self):
        w = MemoryMatrix(np.eye(2))
        with pytest.raises(ValueError):
            minimal_disturbance_check(w, w, np.empty((0, 2)))


def test_state_copy_isolated():
    rng = np.random.default_rng(17)
    state = make_state(rng.standard_normal((3, 3)))
    clone = state.copy()
    apply_edit(clone, request(rng.standard_normal(3)), rng.standard_normal(3))
    assert state.step == 0
    assert clone.step == 1
    assert not np.array_equal(state.w.data, clone.w.data)
    assert state.w0_norm_sq == clone.w0_norm_sq
