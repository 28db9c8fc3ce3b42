"""Stochastic inputs of the simulation: edit keys and target values.

Keys are drawn from a distribution with a prescribed SPD second moment C.
Target values come in two flavors: a surrogate readout optimization
(gradient descent on an additive correction against a softmax readout)
and a statistical model that realizes a linear law between the expected
squared target norm and the current squared weight norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import MemoryMatrix, NumericError, ShapeError, SpdMatrix

# Independent RNG stream labels. Every consumer of randomness owns one of
# these streams so that toggling one feature (e.g. the anchor rescale)
# cannot perturb the draws seen by another.
STREAM_W0 = 0
STREAM_KEYS = 1
STREAM_VALUE = 2
STREAM_PARAPHRASE = 3
STREAM_PILOT_KEYS = 4
STREAM_PILOT_VALUE = 5
STREAM_PROBE = 6
STREAM_HOLDOUT = 7
STREAM_READOUT = 8
STREAM_STRUCTURE = 9

# Floor for sampled squared value norms; guards early draws where
# b_new + noise < 0.
NORM_SQ_FLOOR = 1e-8

KEY_MODES = ("isotropic", "anisotropic-spd", "fixed-pool")
RADIAL_LAWS = ("gaussian", "fixed")
VALUE_MODES = ("surrogate-nll", "statistical-linear", "identity")


class OptDiverged(NumericError):
    """Non-finite values appeared during target-value optimization."""


class KeyPoolExhausted(RuntimeError):
    """A fixed-pool key model ran out of keys to draw without replacement."""


def stream_rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    """Deterministic generator for (seed, stream) and optional subkeys."""
    if seed < 0:
        raise ValueError("seeds must be non-negative")
    return np.random.default_rng(np.random.SeedSequence((seed, stream, *extra)))


def draw_key(
    c: SpdMatrix,
    dim: int,
    radial: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """One key draw with second moment C under the given radial law.

    "gaussian": k = L z with z standard normal, L the Cholesky factor,
    so k ~ N(0, C). "fixed": k = sqrt(dim) * C^{1/2} u with u a uniform
    direction, which keeps E[k k^T] = C exactly while pinning the
    whitened key norm ||C^{-1/2} k|| to sqrt(dim); this is the tightly
    concentrated key-norm regime the recurrence analysis assumes.
    """
    if radial == "gaussian":
        z = rng.standard_normal(dim)
        return c.chol_lower @ z
    if radial != "fixed":
        raise ValueError(f"unknown radial law {radial!r}")
    z = rng.standard_normal(dim)
    nz = np.linalg.norm(z)
    while nz < 1e-12:  # never in practice; keeps the direction well defined
        z = rng.standard_normal(dim)
        nz = np.linalg.norm(z)
    u = z / nz
    if c.is_identity:
        return np.sqrt(dim) * u
    return c.sqrt @ (np.sqrt(dim) * u)


@dataclass
class KeyModel:
    """Sampler for edit keys with second moment C.

    The radial law is delegated to :func:`draw_key`. A sampler owns its
    RNG state and is single-threaded; independent instances may run in
    parallel. In fixed-pool mode the pool is precomputed and keys are
    drawn from it without replacement.
    """

    second_moment: SpdMatrix
    dim: int
    seed: int
    mode: str = "anisotropic-spd"
    radial: str = "gaussian"
    pool_size: int = 0
    stream: int = STREAM_KEYS
    _rng: np.random.Generator = field(init=False, repr=False)
    _pool: np.ndarray | None = field(init=False, repr=False, default=None)
    _pool_next: int = field(init=False, repr=False, default=0)
    draw_index: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        if self.mode not in KEY_MODES:
            raise ValueError(f"unknown key mode {self.mode!r}")
        if self.radial not in RADIAL_LAWS:
            raise ValueError(f"unknown radial law {self.radial!r}")
        if self.second_moment.dim != self.dim:
            raise ShapeError("second moment dimension does not match dim")
        self._rng = stream_rng(self.seed, self.stream)
        if self.mode == "fixed-pool":
            if self.pool_size < 1:
                raise ValueError("fixed-pool mode requires pool_size >= 1")
            self._pool = np.stack([self._draw() for _ in range(self.pool_size)])
            self._pool_next = 0

    def _draw(self) -> np.ndarray:
        return draw_key(self.second_moment, self.dim, self.radial, self._rng)

    def sample(self) -> np.ndarray:
        self.draw_index += 1
        if self.mode == "fixed-pool":
            assert self._pool is not None
            if self._pool_next >= self.pool_size:
                raise KeyPoolExhausted(f"pool of {self.pool_size} keys exhausted")
            k = self._pool[self._pool_next].copy()
            self._pool_next += 1
            return k
        return self._draw()

    @staticmethod
    def isotropic(dim: int, seed: int, radial: str = "gaussian",
                  stream: int = STREAM_KEYS) -> "KeyModel":
        return KeyModel(SpdMatrix.identity(dim), dim, seed,
                        mode="isotropic", radial=radial, stream=stream)


def sample_key(model: KeyModel) -> np.ndarray:
    """Draw the next key from the model's stream."""
    return model.sample()


@dataclass
class ValueModelConfig:
    """Configuration for the target-value generator.

    statistical-linear: E[||v_new||^2 | W] = s_new * ||W||^2 + b_new, with
    Gaussian noise of sd noise_std on the sampled squared norm, and the
    direction a convex mix of the pre-edit value direction and a random
    unit vector. surrogate-nll: gradient descent on an additive correction
    against a fixed random softmax readout. identity: returns the pre-edit
    value unchanged (degenerate mode used by no-op smoke runs).
    """

    mode: str = "statistical-linear"
    s_new: float = 0.0
    b_new: float = 1.0
    noise_std: float = 0.0
    direction_mix: float = 0.5
    readout_classes: int = 8
    opt_steps: int = 25
    opt_lr: float = 0.5
    readout_seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in VALUE_MODES:
            raise ValueError(f"unknown value mode {self.mode!r}")
        if self.mode == "statistical-linear" and self.s_new < 0:
            raise ValueError("statistical-linear mode requires s_new >= 0")
        if self.mode == "surrogate-nll":
            if self.readout_classes < 2:
                raise ValueError("surrogate-nll mode requires readout_classes >= 2")
            if self.opt_steps < 1:
                raise ValueError("surrogate-nll mode requires opt_steps >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 0.0 <= self.direction_mix <= 1.0:
            raise ValueError("direction_mix must lie in [0, 1]")


@dataclass
class EditRequest:
    """One atomic edit: an opaque id, the key, and an optional target class."""

    id: str
    key: np.ndarray
    target_class: int | None = None

    def __post_init__(self) -> None:
        self.key = np.asarray(self.key, dtype=np.float64)
        if np.linalg.norm(self.key) <= 1e-8:
            raise ValueError(f"edit request {self.id}: degenerate key")


def make_readout(cfg: ValueModelConfig, d_v: int) -> np.ndarray:
    """Fixed seeded random readout, entries N(0, 1/d_v)."""
    rng = stream_rng(cfg.readout_seed, STREAM_READOUT)
    return rng.normal(0.0, 1.0 / np.sqrt(d_v), size=(cfg.readout_classes, d_v))


def target_value_surrogate(
    w: MemoryMatrix,
    key: np.ndarray,
    target_class: int,
    cfg: ValueModelConfig,
    readout: np.ndarray | None = None,
) -> np.ndarray:
    """Optimize an additive correction so the readout favors target_class.

    Runs cfg.opt_steps plain gradient-descent steps on delta for the
    cross-entropy of softmax(U (v_old + delta)) toward the target class,
    starting from delta = 0, and returns v_old + delta.
    """
    if not 0 <= target_class < cfg.readout_classes:
        raise ValueError(f"target_class {target_class} out of range")
    u = make_readout(cfg, w.d_v) if readout is None else readout
    v_old = w.data @ np.asarray(key, dtype=np.float64)
    delta = np.zeros_like(v_old)
    onehot = np.zeros(cfg.readout_classes)
    onehot[target_class] = 1.0
    for _ in range(cfg.opt_steps):
        logits = u @ (v_old + delta)
        logits = logits - logits.max()
        p = np.exp(logits)
        p /= p.sum()
        grad = u.T @ (p - onehot)
        delta = delta - cfg.opt_lr * grad
        if not np.all(np.isfinite(delta)):
            raise OptDiverged("correction diverged during surrogate optimization")
    return v_old + delta


def surrogate_nll(v: np.ndarray, target_class: int, readout: np.ndarray) -> float:
    """Cross-entropy of the readout softmax at v for the target class."""
    logits = readout @ v
    logits = logits - logits.max()
    return float(np.log(np.sum(np.exp(logits))) - logits[target_class])


def target_value_statistical(
    w: MemoryMatrix,
    key: np.ndarray,
    cfg: ValueModelConfig,
    rng: np.random.Generator,
    weight_norm_sq: float | None = None,
) -> np.ndarray:
    """Draw a target value whose squared norm follows the linear law.

    The squared norm is s_new * x + b_new + noise floored at a small
    epsilon, where x is ``weight_norm_sq`` (callers pass the whitened
    weight norm for anisotropic runs) or ||W||_F^2 by default. The
    direction mixes the pre-edit value direction with a random unit
    vector; both noise and direction draws happen unconditionally so the
    stream advances identically across configurations.
    """
    if cfg.mode != "statistical-linear":
        raise ValueError("target_value_statistical requires statistical-linear mode")
    key = np.asarray(key, dtype=np.float64)
    v_old = w.data @ key
    x = float(np.sum(w.data * w.data)) if weight_norm_sq is None else weight_norm_sq
    # scale 0 still consumes the draw, keeping the stream aligned across configs
    eta = rng.normal(0.0, cfg.noise_std)
    t = max(NORM_SQ_FLOOR, cfg.s_new * x + cfg.b_new + eta)
    g = rng.standard_normal(v_old.shape[0])
    g /= np.linalg.norm(g)
    v_old_norm = np.linalg.norm(v_old)
    if cfg.direction_mix > 0.0 and v_old_norm > 0.0:
        d = cfg.direction_mix * (v_old / v_old_norm) + (1.0 - cfg.direction_mix) * g
        nd = np.linalg.norm(d)
        if nd <= 1e-12:  # antipodal cancellation: fall back to the random direction
            d, nd = g, 1.0
    else:
        d, nd = g, 1.0
    return np.sqrt(t) * (d / nd)


class ValueModel:
    """Stateful wrapper dispatching on the configured value mode."""

    def __init__(self, cfg: ValueModelConfig, d_v: int, seed: int = 0,
                 stream: int = STREAM_VALUE,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.rng = stream_rng(seed, stream) if rng is None else rng
        self.readout = make_readout(cfg, d_v) if cfg.mode == "surrogate-nll" else None

    def draw_class(self) -> int:
        return int(self.rng.integers(self.cfg.readout_classes))

    def target(
        self,
        w: MemoryMatrix,
        key: np.ndarray,
        target_class: int | None = None,
        weight_norm_sq: float | None = None,
    ) -> np.ndarray:
        if self.cfg.mode == "identity":
            return w.data @ np.asarray(key, dtype=np.float64)
        if self.cfg.mode == "surrogate-nll":
            cls = self.draw_class() if target_class is None else target_class
            return target_value_surrogate(w, key, cls, self.cfg, self.readout)
        return target_value_statistical(w, key, self.cfg, self.rng, weight_norm_sq)
