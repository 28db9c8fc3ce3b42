"""Norm-anchor scaling: pin injected target values to a pre-edit norm level.

The anchor a is the expected squared target-value norm measured by pilot
edits on the clean (unedited) state. During the run each unconstrained
target v_hat is rescaled to v_hat * sqrt(a / ||v_hat||^2), which enforces
||v||^2 = a while preserving direction. This converts the positive
feedback between weight norm and target norm into negative feedback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .editor import EditorState
from .keyvalues import KeyModel, ValueModel

ZERO_VALUE_NORM = 1e-12


class PilotFailure(RuntimeError):
    """A pilot edit failed during anchor estimation."""


class ZeroValueVector(ValueError):
    """Cannot rescale a (near-)zero target value."""


@dataclass
class AnchorSpec:
    """Anchor level plus the pilot sample it was estimated from.

    Immutable after estimation. ``pilot_norms_sq`` is empty when the
    anchor was set by hand (override), in which case the raw statistics
    are NaN.
    """

    a: float
    pilot_n: int
    pilot_norms_sq: np.ndarray = field(default_factory=lambda: np.empty(0))
    enabled: bool = True

    def __post_init__(self) -> None:
        self.pilot_norms_sq = np.asarray(self.pilot_norms_sq, dtype=np.float64)
        if self.a <= 0 or not np.isfinite(self.a):
            raise ValueError(f"anchor level must be positive, got {self.a}")

    @property
    def raw_norms(self) -> np.ndarray:
        return np.sqrt(self.pilot_norms_sq)

    @property
    def raw_mean(self) -> float:
        """Mean of pilot ||v_new|| (raw, not squared)."""
        if self.pilot_norms_sq.size == 0:
            return float("nan")
        return float(np.mean(self.raw_norms))

    @property
    def raw_std(self) -> float:
        """Sample std of pilot ||v_new||."""
        if self.pilot_norms_sq.size < 2:
            return float("nan")
        return float(np.std(self.raw_norms, ddof=1))

    def summary(self) -> dict:
        return {
            "a": self.a,
            "pilot_n": self.pilot_n,
            "raw_mean": self.raw_mean,
            "raw_std": self.raw_std,
        }


def estimate_anchor(
    clean_state: EditorState,
    value_model: ValueModel,
    key_model: KeyModel,
    pilot_n: int = 1000,
    weight_norm_sq: float | None = None,
) -> AnchorSpec:
    """Estimate a = E||v_new||^2 from pilot edits on the clean state.

    Pilot targets are computed against a copy of the clean weights; the
    clean state is never mutated and no pilot update is committed, so
    every pilot sees the unedited model. Pilot keys and value noise come
    from dedicated streams, keeping the main edit stream untouched.
    ``weight_norm_sq`` overrides the conditioning norm handed to the
    value model (whitened runs pass ||W0 C^{1/2}||^2).
    """
    if clean_state.step != 0:
        raise ValueError("anchor must be estimated on a clean (step 0) state")
    if pilot_n < 1:
        raise ValueError("pilot_n must be >= 1")
    w = clean_state.w.copy()
    x = w.norm_sq() if weight_norm_sq is None else weight_norm_sq
    norms_sq = np.empty(pilot_n)
    for i in range(pilot_n):
        try:
            k = key_model.sample()
            v_hat = value_model.target(w, k, weight_norm_sq=x)
        except Exception as exc:
            raise PilotFailure(f"pilot edit {i} failed: {exc}") from exc
        norms_sq[i] = float(np.dot(v_hat, v_hat))
    return AnchorSpec(a=float(np.mean(norms_sq)), pilot_n=pilot_n,
                      pilot_norms_sq=norms_sq)


def rescale(v_hat: np.ndarray, anchor: AnchorSpec) -> np.ndarray:
    """v = v_hat * sqrt(a / ||v_hat||^2): norm pinned to a, direction kept."""
    if not anchor.enabled:
        raise ValueError("rescale called with a disabled anchor")
    v_hat = np.asarray(v_hat, dtype=np.float64)
    norm = float(np.linalg.norm(v_hat))
    if norm <= ZERO_VALUE_NORM:
        raise ZeroValueVector("target value norm at or below zero floor")
    return v_hat * np.sqrt(anchor.a / norm**2)
