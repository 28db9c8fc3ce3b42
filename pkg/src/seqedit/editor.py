"""Closed-form rank-one editing of the key-value memory.

Each edit solves: move W so that the target key retrieves the new value
exactly, while disturbing the response on typical keys (second moment C)
as little as possible. The minimizer is the rank-one update

    dW = (v_new - v_old) (C^{-1} k)^T / (k^T C^{-1} k),

applied sequentially: W_n = W_{n-1} + dW_n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .keyvalues import STREAM_W0, EditRequest, stream_rng
from .linalg import EditDelta, MemoryMatrix, NumericError, ShapeError, SpdMatrix

DEGENERATE_KEY_NORM = 1e-8


class DegenerateKey(ValueError):
    """Edit key too close to zero for the closed-form update."""


class ConstraintViolation(NumericError):
    """Post-edit check W k = v_new failed beyond tolerance."""


@dataclass
class EditorState:
    """Mutable state of one sequential-editing run.

    Owned by exactly one logical thread; independent states (distinct
    seeds or configs) may run in parallel.
    """

    w: MemoryMatrix
    c: SpdMatrix
    step: int = 0
    w0_norm_sq: float | None = None

    def __post_init__(self) -> None:
        if self.c.dim != self.w.d_k:
            raise ShapeError("second moment dimension does not match W columns")
        if self.w0_norm_sq is None:
            self.w0_norm_sq = self.w.norm_sq()

    def copy(self) -> "EditorState":
        return EditorState(self.w.copy(), self.c, self.step, self.w0_norm_sq)


@dataclass
class EditOutcome:
    """Per-edit record: values, factored update, and key norms."""

    v_old: np.ndarray
    v_new: np.ndarray
    v_new_unconstrained: np.ndarray
    delta: EditDelta
    key_norm_sq: float
    key_c_norm_sq: float


def init_state(
    d_v: int,
    d_k: int,
    c: SpdMatrix | None = None,
    w0_sigma: float = 1.0,
    seed: int = 0,
) -> EditorState:
    """Fresh state with W0 entries i.i.d. N(0, w0_sigma^2 / d_k)."""
    rng = stream_rng(seed, STREAM_W0)
    w0 = rng.normal(0.0, w0_sigma / np.sqrt(d_k), size=(d_v, d_k))
    if c is None:
        c = SpdMatrix.identity(d_k)
    return EditorState(w=MemoryMatrix(w0), c=c)


def pre_edit_value(state: EditorState, key: np.ndarray) -> np.ndarray:
    """v_old = W_{n-1} k, recomputed from the current weights."""
    key = np.asarray(key, dtype=np.float64)
    if key.shape != (state.w.d_k,):
        raise ShapeError(f"key shape {key.shape} does not match d_k={state.w.d_k}")
    return state.w.data @ key


def compute_delta(state: EditorState, key: np.ndarray, v_new: np.ndarray) -> EditDelta:
    """Factored rank-one update enforcing (W + dW) k = v_new."""
    key = np.asarray(key, dtype=np.float64)
    v_new = np.asarray(v_new, dtype=np.float64)
    if np.linalg.norm(key) <= DEGENERATE_KEY_NORM:
        raise DegenerateKey("key norm at or below degeneracy floor")
    if v_new.shape != (state.w.d_v,):
        raise ShapeError(f"v_new shape {v_new.shape} does not match d_v={state.w.d_v}")
    v_old = pre_edit_value(state, key)
    ck = state.c.solve(key)
    scale = state.c.quad_inv(key)
    return EditDelta(value_diff=v_new - v_old, key_row=ck, scale=scale)


def apply_edit(
    state: EditorState,
    request: EditRequest,
    v_new: np.ndarray,
    v_new_unconstrained: np.ndarray | None = None,
    verify: bool = True,
    constraint_rtol: float = 1e-8,
) -> EditOutcome:
    """Commit one edit: W_n = W_{n-1} + dW_n, step += 1.

    ``v_new_unconstrained`` is the raw target before any norm rescaling
    (defaults to v_new). With verify=True the post-state is checked to
    satisfy W_n k = v_new within constraint_rtol.
    """
    key = np.asarray(request.key, dtype=np.float64)
    v_new = np.asarray(v_new, dtype=np.float64)
    if np.linalg.norm(key) <= DEGENERATE_KEY_NORM:
        raise DegenerateKey(f"edit {request.id}: key norm at degeneracy floor")
    v_old = pre_edit_value(state, key)
    ck = state.c.solve(key)
    scale = state.c.quad_inv(key)
    delta = EditDelta(value_diff=v_new - v_old, key_row=ck, scale=scale)
    state.w.data += delta.materialize()
    state.step += 1
    if verify:
        resid = constraint_residual(state, key, v_new)
        if resid > constraint_rtol:
            raise ConstraintViolation(
                f"edit {request.id}: constraint residual {resid:.3e} > {constraint_rtol:.1e}"
            )
    return EditOutcome(
        v_old=v_old,
        v_new=v_new,
        v_new_unconstrained=v_new if v_new_unconstrained is None else np.asarray(v_new_unconstrained, dtype=np.float64),
        delta=delta,
        key_norm_sq=float(np.dot(key, key)),
        key_c_norm_sq=scale,
    )


def constraint_residual(state: EditorState, key: np.ndarray, v_new: np.ndarray) -> float:
    """||W k - v_new|| / max(1, ||v_new||)."""
    out = state.w.data @ np.asarray(key, dtype=np.float64)
    v = np.asarray(v_new, dtype=np.float64)
    return float(np.linalg.norm(out - v) / max(1.0, np.linalg.norm(v)))


def minimal_disturbance_check(
    w_before: MemoryMatrix,
    w_after: MemoryMatrix,
    holdout_keys: list[np.ndarray] | np.ndarray,
) -> float:
    """Monte Carlo estimate of the disturbance objective E ||W' k - W k||^2."""
    keys = np.atleast_2d(np.asarray(holdout_keys, dtype=np.float64))
    if keys.shape[0] < 1:
        raise ValueError("at least one holdout key is required")
    diff = (w_after.data - w_before.data) @ keys.T
    return float(np.mean(np.sum(diff * diff, axis=0)))
