"""Desk-scale editing-quality metrics and the representation-drift probe.

These are value-space analogs of token-level editing metrics: an edit
counts as retained when the current memory maps its key to within a
relative tolerance of the injected value. Numbers produced here live on
their own scale and are not comparable to token-accuracy tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .editor import EditorState
from .linalg import MemoryMatrix


class MissingProbes(ValueError):
    """A required probe class is empty."""


@dataclass
class MetricsReport:
    """Efficacy / generalization / specificity fractions plus the score.

    The score is the harmonic mean scaled to percent, 0 when any
    component is 0, and None when efficacy is undefined (no edits yet).
    """

    efficacy: Optional[float]
    generalization: Optional[float]
    specificity: float
    score: Optional[float]


@dataclass
class DriftReport:
    """Centroid shift and dispersion of outputs on held-out keys."""

    centroid_pre: np.ndarray
    centroid_post: np.ndarray
    delta: float
    dispersion_pre: float
    dispersion_post: float


@dataclass
class ProbeSet:
    """Probe material for one run: applied edits, paraphrases, holdouts.

    Neighborhood and holdout keys are drawn independently of the edit
    stream and never appear as edit keys; baseline outputs are snapshots
    of the pre-edit model on those keys.
    """

    sigma_p: float
    neighborhood_keys: np.ndarray
    holdout_keys: np.ndarray
    baseline_neighborhood: np.ndarray  # pre-edit outputs, one row per key
    edit_keys: list[np.ndarray] = field(default_factory=list)
    edit_values: list[np.ndarray] = field(default_factory=list)
    paraphrase_keys: list[list[np.ndarray]] = field(default_factory=list)

    @property
    def n_edits(self) -> int:
        return len(self.edit_keys)

    def add_edit(self, key: np.ndarray, v_new: np.ndarray,
                 paraphrases: Sequence[np.ndarray]) -> None:
        self.edit_keys.append(np.asarray(key, dtype=np.float64))
        self.edit_values.append(np.asarray(v_new, dtype=np.float64))
        self.paraphrase_keys.append([np.asarray(p, dtype=np.float64) for p in paraphrases])

    def subset(self, indices: Sequence[int]) -> "ProbeSet":
        """View restricted to the given edit indices (probe sampling)."""
        sub = ProbeSet(
            sigma_p=self.sigma_p,
            neighborhood_keys=self.neighborhood_keys,
            holdout_keys=self.holdout_keys,
            baseline_neighborhood=self.baseline_neighborhood,
        )
        for i in indices:
            sub.edit_keys.append(self.edit_keys[i])
            sub.edit_values.append(self.edit_values[i])
            sub.paraphrase_keys.append(self.paraphrase_keys[i])
        return sub


def make_paraphrase(
    key: np.ndarray,
    sigma_p: float,
    rng: np.random.Generator,
    cos_floor: float = 0.9,
    max_tries: int = 100,
) -> np.ndarray:
    """Perturb a key by relative magnitude sigma_p, renormalized.

    The perturbation is Gaussian with RMS sigma_p * ||k||; the result is
    rescaled back to the original key norm so the key-norm bookkeeping of
    the run stays comparable. Redrawn (rarely) until the cosine with the
    original key clears the floor.
    """
    key = np.asarray(key, dtype=np.float64)
    nk = np.linalg.norm(key)
    if nk == 0:
        raise ValueError("cannot paraphrase a zero key")
    d = key.shape[0]
    for _ in range(max_tries):
        noise = rng.standard_normal(d) * (sigma_p * nk / np.sqrt(d))
        cand = key + noise
        nc = np.linalg.norm(cand)
        if nc == 0:
            continue
        cand *= nk / nc
        if float(np.dot(cand, key)) / (nk * nk) >= cos_floor:
            return cand
    raise RuntimeError(f"no paraphrase above cosine floor {cos_floor} in {max_tries} tries")


def _relative_residuals(w: np.ndarray, keys: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = keys @ w.T  # (m, d_v)
    err = np.linalg.norm(out - values, axis=1)
    denom = np.maximum(np.linalg.norm(values, axis=1), 1e-12)
    return err / denom


def evaluate_edits(
    state: EditorState,
    probes: ProbeSet,
    tol: float = 0.05,
    gen_relax: float = 1.0,
    tol_spe: float = 0.1,
) -> MetricsReport:
    """Score the current state against the probe set.

    efficacy: fraction of probed edits with relative retrieval error
    <= tol. generalization: same test on paraphrase keys at tol *
    gen_relax. specificity: fraction of neighborhood keys whose output
    moved less than tol_spe relative to the pre-edit output.
    """
    if probes.neighborhood_keys.shape[0] < 1:
        raise MissingProbes("neighborhood probe class is empty")
    w = state.w.data

    if probes.n_edits == 0:
        efficacy: Optional[float] = None
        generalization: Optional[float] = None
    else:
        keys = np.stack(probes.edit_keys)
        values = np.stack(probes.edit_values)
        efficacy = float(np.mean(_relative_residuals(w, keys, values) <= tol))
        flat_para = [p for plist in probes.paraphrase_keys for p in plist]
        if flat_para:
            pkeys = np.stack(flat_para)
            pvalues = np.stack([
                probes.edit_values[i]
                for i, plist in enumerate(probes.paraphrase_keys)
                for _ in plist
            ])
            generalization = float(
                np.mean(_relative_residuals(w, pkeys, pvalues) <= tol * gen_relax)
            )
        else:
            generalization = None

    out_post = probes.neighborhood_keys @ w.T
    movement = np.linalg.norm(out_post - probes.baseline_neighborhood, axis=1)
    base = np.maximum(np.linalg.norm(probes.baseline_neighborhood, axis=1), 1e-12)
    specificity = float(np.mean(movement / base <= tol_spe))

    return MetricsReport(
        efficacy=efficacy,
        generalization=generalization,
        specificity=specificity,
        score=harmonic_score(efficacy, generalization, specificity),
    )


def harmonic_score(
    efficacy: Optional[float],
    generalization: Optional[float],
    specificity: Optional[float],
) -> Optional[float]:
    """Harmonic mean of the three fractions, scaled to percent.

    None when any component is undefined; 0 when any component is 0.
    """
    parts = (efficacy, generalization, specificity)
    if any(p is None for p in parts):
        return None
    if any(p == 0.0 for p in parts):
        return 0.0
    return 100.0 * 3.0 / sum(1.0 / p for p in parts)  # type: ignore[arg-type]


def representation_drift(
    state_pre: MemoryMatrix,
    state_post: MemoryMatrix,
    holdout_keys: np.ndarray | Sequence[np.ndarray],
) -> DriftReport:
    """Centroid distance and dispersions of outputs on held-out keys."""
    keys = np.atleast_2d(np.asarray(holdout_keys, dtype=np.float64))
    if keys.shape[0] < 2:
        raise MissingProbes("drift probe needs at least 2 holdout keys")
    out_pre = keys @ state_pre.data.T
    out_post = keys @ state_post.data.T
    mu_pre = out_pre.mean(axis=0)
    mu_post = out_post.mean(axis=0)
    return DriftReport(
        centroid_pre=mu_pre,
        centroid_post=mu_post,
        delta=float(np.linalg.norm(mu_post - mu_pre)),
        dispersion_pre=float(np.mean(np.linalg.norm(out_pre - mu_pre, axis=1))),
        dispersion_post=float(np.mean(np.linalg.norm(out_post - mu_post, axis=1))),
    )
