"""Experiment orchestration: run loops, trace emission, comparisons.

A run executes, for each seed, a stream of atomic edits against one
memory matrix: sample key, produce the unconstrained target value,
optionally rescale it to the anchor, commit the closed-form update, and
record the norm bookkeeping. Checkpoints interleave metric evaluation,
a drift probe, and a batch of discarded probe edits that feed the
value-norm regressions.

Everything emitted for a (config, seed) pair is byte-deterministic;
wall-clock quantities live only in the run manifest.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy import stats as scipy_stats

from . import __version__
from .config import RunConfig
from .dynamics import (
    TRACE_FIELDS,
    RecurrenceParams,
    TraceRecord,
    ValueLawSample,
    collapse_point,
    fit_log_rn,
    fit_value_norm_laws_from_samples,
    predict_trajectory,
    recurrence_from_constants,
    verify_recursion,
)
from .editor import EditorState, constraint_residual, apply_edit, init_state
from .keyvalues import (
    NORM_SQ_FLOOR,
    STREAM_HOLDOUT,
    STREAM_KEYS,
    STREAM_PARAPHRASE,
    STREAM_PILOT_KEYS,
    STREAM_PILOT_VALUE,
    STREAM_PROBE,
    STREAM_STRUCTURE,
    EditRequest,
    KeyModel,
    ValueModel,
    draw_key,
    stream_rng,
)
from .linalg import SpdMatrix, frob_norm_sq, random_spd
from .metrics import ProbeSet, evaluate_edits, make_paraphrase, representation_drift
from .nas import AnchorSpec, estimate_anchor, rescale

MANIFEST_SCHEMA = "seqedit/run-manifest/v1"
SUMMARY_SCHEMA = "seqedit/seed-summary/v1"
FIT_SCHEMA = "seqedit/fit-summary/v1"
COMPARISON_SCHEMA = "seqedit/comparison/v1"

# Growth cap for trajectory-vs-prediction comparisons: the linear value
# laws are trusted while the weight norm has grown by at most this factor.
GROWTH_CAP = 1e3
# Default window for the value-law regressions themselves. The probe
# noise on ||v_old||^2 scales with the weight norm, so checkpoints deep
# into the blow-up carry all the OLS leverage while the intercepts are
# identified only by low-growth checkpoints; fitting over a narrower
# window keeps both slopes and intercepts identifiable.
FIT_GROWTH_CAP = 10.0**1.5


class TraceFormatError(ValueError):
    """Trace file does not match the declared header/format."""


class OutputDirExists(FileExistsError):
    """Refusing to write into a non-empty output directory."""


def build_second_moment(cfg: RunConfig) -> SpdMatrix:
    """Second moment C shared by every seed of a run (structure seed)."""
    if cfg.key.mode == "isotropic":
        return SpdMatrix.identity(cfg.d_k)
    rng = stream_rng(cfg.key.seed, STREAM_STRUCTURE)
    return random_spd(cfg.d_k, cfg.key.cond, rng)


# ---------------------------------------------------------------------------
# trace io


def write_trace(path: Path, records: Sequence[TraceRecord]) -> None:
    """CSV, one row per step, floats as shortest round-trip decimals."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(TRACE_FIELDS) + "\n")
        for r in records:
            cells = [str(int(r.n))] + [
                repr(float(getattr(r, name))) for name in TRACE_FIELDS[1:]
            ]
            fh.write(",".join(cells) + "\n")


def read_trace(path: Path) -> list[TraceRecord]:
    """Parse a trace file, enforcing the declared header."""
    with open(path, "r", newline="") as fh:
        header = fh.readline().rstrip("\n")
        if header.split(",") != list(TRACE_FIELDS):
            raise TraceFormatError(f"{path}: unexpected header {header!r}")
        records = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(TRACE_FIELDS):
                raise TraceFormatError(f"{path}:{lineno}: expected {len(TRACE_FIELDS)} fields")
            try:
                records.append(TraceRecord(int(parts[0]), *map(float, parts[1:])))
            except ValueError as exc:
                raise TraceFormatError(f"{path}:{lineno}: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# per-seed run


@dataclass
class SeedRunResult:
    seed: int
    trace: list[TraceRecord]
    summary: dict[str, Any]
    per_edit_seconds: np.ndarray


def _probe_value_model(cfg: RunConfig, seed: int, n: int) -> ValueModel:
    rng = stream_rng(seed, STREAM_PROBE, n, 2)
    return ValueModel(cfg.value.to_model_config(), cfg.d_v, rng=rng)


def _draw_key_batch(
    c: SpdMatrix,
    dim: int,
    radial: str,
    rng: np.random.Generator,
    batch: int,
) -> np.ndarray:
    """Batched key draws, one row per key (same laws as draw_key)."""
    z = rng.standard_normal((batch, dim))
    if radial == "gaussian":
        return z @ c.chol_lower.T
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    k = np.sqrt(dim) * z / norms
    if c.is_identity:
        return k
    return k @ c.sqrt  # symmetric root, so no transpose needed


def _checkpoint(
    cfg: RunConfig,
    c: SpdMatrix,
    state: EditorState,
    w0_snapshot,
    probes: ProbeSet,
    anchor: Optional[AnchorSpec],
    seed: int,
    n: int,
    w_ns: float,
    wt_ns: float,
    conditioning: str,
) -> dict[str, Any]:
    """Metrics, drift, and a batch of discarded probe edits at step n."""
    sel_rng = stream_rng(seed, STREAM_PROBE, n, 0)
    total = probes.n_edits
    if total > cfg.probes.max_edit_probes:
        idx = np.sort(sel_rng.choice(total, size=cfg.probes.max_edit_probes, replace=False))
        sub = probes.subset(idx.tolist())
    else:
        sub = probes
    report = evaluate_edits(
        state, sub,
        tol=cfg.tolerances.eff_tol,
        gen_relax=cfg.tolerances.gen_relax,
        tol_spe=cfg.tolerances.spe_tol,
    )
    drift = representation_drift(w0_snapshot, state.w, probes.holdout_keys)

    key_rng = stream_rng(seed, STREAM_PROBE, n, 1)
    x = wt_ns if conditioning == "whitened" else w_ns
    batch = cfg.probes.value_probe_batch
    keys = _draw_key_batch(c, cfg.d_k, cfg.key.radial, key_rng, batch)
    vo2 = np.sum((keys @ state.w.data.T) ** 2, axis=1)
    ik2 = 1.0 / np.sum(keys * keys, axis=1)
    y = scipy.linalg.solve_triangular(c.chol_lower, keys.T, lower=True)
    ikc2 = 1.0 / np.sum(y * y, axis=0)
    if cfg.value.mode == "statistical-linear":
        # probe targets vectorized over the batch; only norms are recorded
        # and the sampled squared norm does not depend on the direction
        vcfg = cfg.value
        value_rng = stream_rng(seed, STREAM_PROBE, n, 2)
        eta = value_rng.normal(0.0, vcfg.noise_std, size=batch)
        vh2 = np.maximum(NORM_SQ_FLOOR, vcfg.s_new * x + vcfg.b_new + eta)
    else:
        value_model = _probe_value_model(cfg, seed, n)
        vh2 = np.empty(batch)
        for j in range(batch):
            v_hat = value_model.target(state.w, keys[j], weight_norm_sq=x)
            vh2[j] = np.dot(v_hat, v_hat)
    vn2 = np.full(batch, anchor.a) if anchor is not None else vh2
    return {
        "n": n,
        "w_norm_sq": w_ns,
        "w_tilde_norm_sq": wt_ns,
        "r_n": float(np.sqrt(w_ns / state.w0_norm_sq)),
        "efficacy": report.efficacy,
        "generalization": report.generalization,
        "specificity": report.specificity,
        "score": report.score,
        "drift_delta": drift.delta,
        "dispersion_pre": drift.dispersion_pre,
        "dispersion_post": drift.dispersion_post,
        "probe": {
            "batch": batch,
            "v_new_norm_sq": float(vn2.mean()),
            "v_new_unconstrained_norm_sq": float(vh2.mean()),
            "v_old_norm_sq": float(vo2.mean()),
            "inv_key_norm_sq": float(ik2.mean()),
            "inv_key_c_norm_sq": float(ikc2.mean()),
        },
    }


def run_seed(cfg: RunConfig, c: SpdMatrix, seed: int) -> SeedRunResult:
    """Execute one seed's edit stream and collect trace + summary."""
    conditioning = cfg.resolve_conditioning()
    use_whitened = not c.is_identity
    c_sqrt = c.sqrt if use_whitened else None

    state = init_state(cfg.d_v, cfg.d_k, c, cfg.w0_sigma, seed)
    w0 = state.w.copy()
    w0_ns = state.w0_norm_sq
    w0t_ns = frob_norm_sq(w0.data @ c_sqrt) if use_whitened else w0_ns

    key_model = KeyModel(
        c, cfg.d_k, seed, mode=cfg.key.mode, radial=cfg.key.radial,
        pool_size=cfg.key.pool_size, stream=STREAM_KEYS,
    )
    value_model = ValueModel(cfg.value.to_model_config(), cfg.d_v, seed)

    anchor: Optional[AnchorSpec] = None
    if cfg.nas.enabled:
        if cfg.nas.anchor_override is not None:
            anchor = AnchorSpec(a=cfg.nas.anchor_override, pilot_n=0, enabled=True)
        else:
            pilot_keys = KeyModel(
                c, cfg.d_k, seed,
                mode=cfg.key.mode if cfg.key.mode != "fixed-pool" else "anisotropic-spd",
                radial=cfg.key.radial, stream=STREAM_PILOT_KEYS,
            )
            pilot_values = ValueModel(
                cfg.value.to_model_config(), cfg.d_v, seed, stream=STREAM_PILOT_VALUE
            )
            anchor = estimate_anchor(
                state, pilot_values, pilot_keys, cfg.nas.pilot_n,
                weight_norm_sq=w0t_ns if conditioning == "whitened" else w0_ns,
            )

    holdout_rng = stream_rng(seed, STREAM_HOLDOUT)
    neighborhood = np.stack([
        draw_key(c, cfg.d_k, cfg.key.radial, holdout_rng)
        for _ in range(cfg.probes.neighborhood)
    ])
    holdout = np.stack([
        draw_key(c, cfg.d_k, cfg.key.radial, holdout_rng)
        for _ in range(cfg.probes.holdout)
    ])
    probes = ProbeSet(
        sigma_p=cfg.probes.sigma_p,
        neighborhood_keys=neighborhood,
        holdout_keys=holdout,
        baseline_neighborhood=neighborhood @ w0.data.T,
    )

    verify_every = 1 if cfg.profile == "debug" else 100
    max_resid = 0.0
    cur_w_ns, cur_wt_ns = w0_ns, w0t_ns
    trace: list[TraceRecord] = []
    checkpoints: list[dict[str, Any]] = []
    per_edit = np.empty(cfg.n_edits)

    for n in range(1, cfg.n_edits + 1):
        t0 = time.perf_counter()
        k = key_model.sample()
        request = EditRequest(id=f"{seed}-{n}", key=k)
        x = cur_wt_ns if conditioning == "whitened" else cur_w_ns
        v_hat = value_model.target(state.w, k, weight_norm_sq=x)
        v_new = rescale(v_hat, anchor) if anchor is not None else v_hat
        outcome = apply_edit(state, request, v_new, v_new_unconstrained=v_hat,
                             verify=False)
        if n % verify_every == 0 or cfg.profile == "debug":
            resid = constraint_residual(state, k, v_new)
            max_resid = max(max_resid, resid)
            if resid > cfg.tolerances.constraint_rtol:
                raise RuntimeError(
                    f"edit {n}: constraint residual {resid:.3e} exceeds "
                    f"{cfg.tolerances.constraint_rtol:.1e}"
                )
        cur_w_ns = frob_norm_sq(state.w.data)
        cur_wt_ns = frob_norm_sq(state.w.data @ c_sqrt) if use_whitened else cur_w_ns
        per_edit[n - 1] = time.perf_counter() - t0

        trace.append(TraceRecord(
            n=n,
            w_norm_sq=cur_w_ns,
            r_n=float(np.sqrt(cur_w_ns / w0_ns)),
            v_old_norm_sq=float(np.dot(outcome.v_old, outcome.v_old)),
            v_new_norm_sq=float(np.dot(v_new, v_new)),
            v_new_unconstrained_norm_sq=float(np.dot(v_hat, v_hat)),
            key_norm_sq=outcome.key_norm_sq,
            key_c_norm_sq=outcome.key_c_norm_sq,
            w_tilde_norm_sq=cur_wt_ns,
        ))

        para_rng = stream_rng(seed, STREAM_PARAPHRASE, n)
        paras = [
            make_paraphrase(k, cfg.probes.sigma_p, para_rng, cfg.probes.cos_floor)
            for _ in range(cfg.probes.paraphrases_per_edit)
        ]
        probes.add_edit(k, v_new, paras)

        if n % cfg.probes.checkpoint_every == 0 or n == cfg.n_edits:
            checkpoints.append(_checkpoint(
                cfg, c, state, w0, probes, anchor, seed, n,
                cur_w_ns, cur_wt_ns, conditioning,
            ))

    summary = {
        "schema": SUMMARY_SCHEMA,
        "seed": seed,
        "w0_norm_sq": w0_ns,
        "w0_tilde_norm_sq": w0t_ns,
        "use_whitened": use_whitened,
        "conditioning": conditioning,
        "anchor": anchor.summary() if anchor is not None else None,
        "n_edits": cfg.n_edits,
        "max_constraint_residual": max_resid,
        "constraint_checked_every": verify_every,
        "final_w_norm_sq": cur_w_ns,
        "final_w_tilde_norm_sq": cur_wt_ns,
        "checkpoints": checkpoints,
    }
    return SeedRunResult(seed=seed, trace=trace, summary=summary, per_edit_seconds=per_edit)


def _seed_dirname(seed: int) -> str:
    return f"seed_{seed:04d}"


def _run_seed_to_disk(cfg_dict: dict, seed: int, out_dir: str) -> dict[str, Any]:
    """Worker entry: run one seed, write its files, return a manifest entry."""
    cfg = RunConfig.from_dict(cfg_dict)
    c = build_second_moment(cfg)
    seed_dir = Path(out_dir) / _seed_dirname(seed)
    seed_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = run_seed(cfg, c, seed)
    except Exception as exc:  # crash isolation: record, never poison other seeds
        return {
            "seed": seed,
            "ok": False,
            "error": f"{type(exc).__name__}: {exc}",
            "trace": None,
            "summary": None,
        }
    trace_path = seed_dir / "trace.csv"
    summary_path = seed_dir / "summary.json"
    write_trace(trace_path, result.trace)
    summary_path.write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    return {
        "seed": seed,
        "ok": True,
        "error": None,
        "trace": f"{_seed_dirname(seed)}/trace.csv",
        "summary": f"{_seed_dirname(seed)}/summary.json",
        "anchor": result.summary["anchor"],
        "per_edit_seconds_mean": float(result.per_edit_seconds.mean()),
        "per_edit_seconds_std": float(result.per_edit_seconds.std()),
    }


def run_sequence(cfg: RunConfig, out_dir: str | Path | None = None) -> dict[str, Any]:
    """Run every seed of a config and write traces plus the manifest.

    Refuses a non-empty output directory rather than overwrite anything.
    Returns the manifest dict.
    """
    cfg.validate()
    out = Path(out_dir if out_dir is not None else (cfg.out_dir or "run_out"))
    if out.exists() and any(out.iterdir()):
        raise OutputDirExists(f"output directory {out} exists and is not empty")
    out.mkdir(parents=True, exist_ok=True)

    cfg_dict = cfg.to_dict()
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            entries = list(pool.map(
                _run_seed_to_disk,
                [cfg_dict] * len(cfg.seeds),
                cfg.seeds,
                [str(out)] * len(cfg.seeds),
            ))
    else:
        entries = [_run_seed_to_disk(cfg_dict, seed, str(out)) for seed in cfg.seeds]

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "config": cfg_dict,
        "config_hash": cfg.config_hash(),
        "seeds": entries,
        "n_failed": sum(1 for e in entries if not e["ok"]),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# loading and analysis over completed runs


def load_manifest(run_dir: str | Path) -> dict[str, Any]:
    path = Path(run_dir) / "manifest.json"
    with open(path) as fh:
        return json.load(fh)


def load_seed(run_dir: str | Path, entry: dict[str, Any]) -> tuple[list[TraceRecord], dict]:
    run_dir = Path(run_dir)
    trace = read_trace(run_dir / entry["trace"])
    with open(run_dir / entry["summary"]) as fh:
        summary = json.load(fh)
    return trace, summary


def _ok_entries(manifest: dict[str, Any]) -> list[dict[str, Any]]:
    return [e for e in manifest["seeds"] if e["ok"]]


def samples_from_summary(summary: dict[str, Any]) -> list[ValueLawSample]:
    return [
        ValueLawSample(
            n=cp["n"],
            w_norm_sq=cp["w_norm_sq"],
            w_tilde_norm_sq=cp["w_tilde_norm_sq"],
            v_new_norm_sq=cp["probe"]["v_new_norm_sq"],
            v_old_norm_sq=cp["probe"]["v_old_norm_sq"],
            inv_key_norm_sq=cp["probe"]["inv_key_norm_sq"],
            inv_key_c_norm_sq=cp["probe"]["inv_key_c_norm_sq"],
            batch=cp["probe"]["batch"],
        )
        for cp in summary["checkpoints"]
    ]


def verify_run(run_dir: str | Path, rtol: float = 1e-8) -> dict[str, Any]:
    """Audit the exact identities over an existing run's traces.

    Checks, per seed: the norm recursion (plain when C = I, whitened
    always), r_n consistency with the recorded w0, the recorded max
    constraint residual, and trace parsability. Plain-space residuals are
    reported but only asserted when C = I.
    """
    manifest = load_manifest(run_dir)
    isotropic = manifest["config"]["key"]["mode"] == "isotropic"
    constraint_rtol = manifest["config"]["tolerances"]["constraint_rtol"]
    seeds = []
    ok = True
    for entry in _ok_entries(manifest):
        trace, summary = load_seed(run_dir, entry)
        plain = verify_recursion(trace, use_whitened=False,
                                 w0_norm_sq=summary["w0_norm_sq"])
        whitened = verify_recursion(trace, use_whitened=True,
                                    w0_norm_sq=summary["w0_tilde_norm_sq"])
        w0 = summary["w0_norm_sq"]
        rn_err = max(
            abs(rec.r_n - np.sqrt(rec.w_norm_sq / w0)) / max(1.0, rec.r_n)
            for rec in trace
        )
        seed_ok = (
            whitened <= rtol
            and (plain <= rtol or not isotropic)
            and rn_err <= 1e-12
            and summary["max_constraint_residual"] <= constraint_rtol
        )
        ok = ok and seed_ok
        seeds.append({
            "seed": entry["seed"],
            "plain_residual": plain,
            "whitened_residual": whitened,
            "plain_asserted": isotropic,
            "r_n_error": rn_err,
            "max_constraint_residual": summary["max_constraint_residual"],
            "ok": seed_ok,
        })
    if manifest["n_failed"] > 0:
        ok = False
    return {"ok": ok, "rtol": rtol, "seeds": seeds, "n_failed": manifest["n_failed"]}


def _mean_trajectory(
    traces: list[list[TraceRecord]],
    use_whitened: bool,
    ns: Sequence[int],
) -> np.ndarray:
    """Mean (over seeds) of the squared weight norm at the given steps."""
    get = (lambda r: r.w_tilde_norm_sq) if use_whitened else (lambda r: r.w_norm_sq)
    out = np.empty(len(ns))
    for i, n in enumerate(ns):
        out[i] = float(np.mean([get(tr[n - 1]) for tr in traces]))
    return out


def fit_run(
    run_dir: str | Path,
    growth_cap: float = GROWTH_CAP,
    fit_growth_cap: float = FIT_GROWTH_CAP,
) -> dict[str, Any]:
    """Regressions and closed-form trajectory prediction for a run.

    Value-law constants come from one OLS fit per seed on that seed's
    probe batch means (checkpoints with norm growth <= ``fit_growth_cap``),
    averaged across seeds; the prediction is compared to the realized
    trajectory out to ``growth_cap``. The log R_n fit uses per-step trace
    records over the pre-collapse window (all steps when no collapse).
    """
    manifest = load_manifest(run_dir)
    cfg = RunConfig.from_dict(manifest["config"])
    entries = _ok_entries(manifest)
    if not entries:
        raise RuntimeError("no successful seeds to fit")
    traces, summaries = [], []
    for entry in entries:
        trace, summary = load_seed(run_dir, entry)
        traces.append(trace)
        summaries.append(summary)

    use_whitened = bool(summaries[0]["use_whitened"])
    w0_key = "w0_tilde_norm_sq" if use_whitened else "w0_norm_sq"
    w0_mean = float(np.mean([s[w0_key] for s in summaries]))

    anchor_vals = [s["anchor"]["a"] for s in summaries if s.get("anchor")]
    anchor = float(np.mean(anchor_vals)) if anchor_vals else None

    # One fit per seed, constants averaged across seeds. Pooling raw
    # points instead would confound the anchored runs: each seed's
    # constant ||v_new||^2 = a_s tracks its own w0, so the across-seed
    # variation masquerades as a slope.
    per_seed_params = []
    n_fit_samples = 0
    for summary in summaries:
        seed_samples = []
        for sample in samples_from_summary(summary):
            x = sample.w_tilde_norm_sq if use_whitened else sample.w_norm_sq
            if x / summary[w0_key] <= fit_growth_cap:
                seed_samples.append(sample)
        n_fit_samples += len(seed_samples)
        anchor_s = summary["anchor"]["a"] if summary.get("anchor") else None
        per_seed_params.append(fit_value_norm_laws_from_samples(
            seed_samples, use_whitened=use_whitened, anchor=anchor_s))

    def _avg_se(name: str) -> tuple[float, float]:
        vals = np.array([getattr(p, name) for p in per_seed_params])
        se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else float("nan")
        return float(vals.mean()), se

    (k_mean, _), (sn_mean, sn_se) = _avg_se("K"), _avg_se("s_new")
    (bn_mean, bn_se), (so_mean, so_se) = _avg_se("b_new"), _avg_se("s_old")
    (bo_mean, bo_se) = _avg_se("b_old")
    params = recurrence_from_constants(
        K=k_mean, s_new=sn_mean, b_new=bn_mean, s_old=so_mean, b_old=bo_mean,
        anchor=anchor,
    )

    # log R_n over the pre-collapse window, per seed
    log_fits = []
    for trace, summary in zip(traces, summaries):
        scores = [(cp["n"], cp["score"]) for cp in summary["checkpoints"]
                  if cp["score"] is not None]
        cp_at = collapse_point(scores, cfg.tolerances.score_threshold) if scores else None
        window = (1, cp_at) if cp_at is not None else None
        try:
            fit = fit_log_rn(trace, window)
        except Exception:
            fit = fit_log_rn(trace)
        log_fits.append({
            "seed": summary["seed"], "slope": fit.slope, "intercept": fit.intercept,
            "r_squared": fit.r_squared, "n_points": fit.n_points,
            "window_end": cp_at,
        })

    ns = [cp["n"] for cp in summaries[0]["checkpoints"]]
    realized = _mean_trajectory(traces, use_whitened, ns)
    predicted_full = predict_trajectory(params, w0_mean, max(ns))
    rows = []
    for i, n in enumerate(ns):
        pred = float(predicted_full[n])
        real = float(realized[i])
        in_cap = real / w0_mean <= growth_cap
        rows.append({
            "n": n, "realized_mean": real, "predicted": pred,
            "rel_err": abs(real - pred) / abs(pred) if pred != 0 else float("inf"),
            "within_growth_cap": in_cap,
        })

    fit_summary = {
        "schema": FIT_SCHEMA,
        "use_whitened": use_whitened,
        "growth_cap": growth_cap,
        "fit_growth_cap": fit_growth_cap,
        "n_fit_samples": n_fit_samples,
        "w0_mean": w0_mean,
        "anchor": anchor,
        "params": {
            "K": params.K,
            "s_new": params.s_new, "b_new": params.b_new,
            "s_old": params.s_old, "b_old": params.b_old,
            "rho": params.rho, "gamma": params.gamma,
            "regime": params.regime,
            "s_new_se": sn_se, "b_new_se": bn_se,
            "s_old_se": so_se, "b_old_se": bo_se,
        },
        "per_seed_params": [
            {
                "seed": summary["seed"],
                "K": p.K, "s_new": p.s_new, "b_new": p.b_new,
                "s_old": p.s_old, "b_old": p.b_old,
                "rho": p.rho, "gamma": p.gamma, "regime": p.regime,
            }
            for summary, p in zip(summaries, per_seed_params)
        ],
        "log_rn_fits": log_fits,
        "trajectory": rows,
    }
    path = Path(run_dir) / "fit.json"
    path.write_text(json.dumps(fit_summary, indent=2, sort_keys=True) + "\n")
    return fit_summary


def recurrence_params_from_fit(fit_summary: dict[str, Any]) -> RecurrenceParams:
    p = fit_summary["params"]
    return RecurrenceParams(
        K=p["K"], s_new=p["s_new"], b_new=p["b_new"],
        s_old=p["s_old"], b_old=p["b_old"],
        rho=p["rho"], gamma=p["gamma"], regime=p["regime"],
    )


def _score_series(summary: dict[str, Any]) -> list[tuple[int, float]]:
    return [(cp["n"], cp["score"]) for cp in summary["checkpoints"]
            if cp["score"] is not None]


def spearman_rn_score(summary: dict[str, Any]) -> float:
    """Spearman rank correlation between R_n and score over checkpoints.

    Restricted to checkpoints with positive score: once the score hits
    exactly 0 it stays there, and a long tail of tied zeros says nothing
    about co-movement.
    """
    pts = [(cp["r_n"], cp["score"]) for cp in summary["checkpoints"]
           if cp["score"] is not None and cp["score"] > 0.0]
    if len(pts) < 3:
        return float("nan")
    r = [p[0] for p in pts]
    s = [p[1] for p in pts]
    rho, _ = scipy_stats.spearmanr(r, s)
    return float(rho)


def compare_regimes(
    cfg: RunConfig,
    out_dir: str | Path,
    drift_steps: tuple[int, ...] = (100, 500),
) -> dict[str, Any]:
    """Run vanilla and anchored variants of one config and compare them.

    Emits paired (score, R_n) trajectories, Spearman correlations on the
    vanilla runs, collapse points with the delay ratio (censored collapse
    points are treated as one step past the horizon), log R_n slopes, and
    drift comparisons at matched step counts.
    """
    cfg.validate()
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise OutputDirExists(f"output directory {out} exists and is not empty")
    vanilla_cfg = cfg.with_nas(False)
    nas_cfg = cfg.with_nas(True)
    run_sequence(vanilla_cfg, out / "vanilla")
    run_sequence(nas_cfg, out / "nas")

    van_manifest = load_manifest(out / "vanilla")
    nas_manifest = load_manifest(out / "nas")
    threshold = cfg.tolerances.score_threshold
    horizon = cfg.n_edits

    van_by_seed = {e["seed"]: e for e in _ok_entries(van_manifest)}
    nas_by_seed = {e["seed"]: e for e in _ok_entries(nas_manifest)}
    paired_seeds = sorted(set(van_by_seed) & set(nas_by_seed))

    per_seed = []
    for seed in paired_seeds:
        v_entry, n_entry = van_by_seed[seed], nas_by_seed[seed]
        v_trace, v_summary = load_seed(out / "vanilla", v_entry)
        n_trace, n_summary = load_seed(out / "nas", n_entry)
        cp_v = collapse_point(_score_series(v_summary), threshold)
        cp_n = collapse_point(_score_series(n_summary), threshold)
        cp_v_eff = cp_v if cp_v is not None else horizon + 1
        cp_n_eff = cp_n if cp_n is not None else horizon + 1
        drifts = {}
        for step in drift_steps:
            v_cp = next((c for c in v_summary["checkpoints"] if c["n"] == step), None)
            n_cp = next((c for c in n_summary["checkpoints"] if c["n"] == step), None)
            if v_cp and n_cp:
                drifts[str(step)] = {
                    "vanilla": v_cp["drift_delta"],
                    "nas": n_cp["drift_delta"],
                }
        per_seed.append({
            "seed": v_entry["seed"],
            "cp_vanilla": cp_v,
            "cp_nas": cp_n,
            "cp_ratio": cp_n_eff / cp_v_eff,
            "nas_not_earlier": cp_n_eff >= cp_v_eff,
            "spearman_vanilla": spearman_rn_score(v_summary),
            "log_rn_slope_vanilla": fit_log_rn(v_trace).slope,
            "log_rn_slope_nas": fit_log_rn(n_trace).slope,
            "final_r_n_vanilla": v_trace[-1].r_n,
            "final_r_n_nas": n_trace[-1].r_n,
            "drift": drifts,
        })

    # paired (score, R_n) trajectories, seed-averaged per checkpoint
    van_summaries, nas_summaries = [], []
    for seed in paired_seeds:
        van_summaries.append(load_seed(out / "vanilla", van_by_seed[seed])[1])
        nas_summaries.append(load_seed(out / "nas", nas_by_seed[seed])[1])
    trajectories = []
    if van_summaries:
        for i, cp in enumerate(van_summaries[0]["checkpoints"]):
            def _mean(summaries, fld):
                vals = [s["checkpoints"][i][fld] for s in summaries]
                vals = [v for v in vals if v is not None]
                return float(np.mean(vals)) if vals else None
            trajectories.append({
                "n": cp["n"],
                "score_vanilla": _mean(van_summaries, "score"),
                "r_n_vanilla": _mean(van_summaries, "r_n"),
                "score_nas": _mean(nas_summaries, "score"),
                "r_n_nas": _mean(nas_summaries, "r_n"),
            })

    fits = {}
    for side in ("vanilla", "nas"):
        try:
            fit = fit_run(out / side)
            fits[side] = {"params": fit["params"], "trajectory": fit["trajectory"]}
        except Exception as exc:  # too few checkpoints in the fit window
            fits[side] = {"error": f"{type(exc).__name__}: {exc}"}

    # one-sided sign test per matched step: vanilla drift exceeding the
    # anchored drift in k of n pairs under a fair-coin null
    drift_tests = {}
    for step in drift_steps:
        key = str(step)
        wins = sum(1 for p in per_seed
                   if key in p["drift"]
                   and p["drift"][key]["vanilla"] > p["drift"][key]["nas"])
        total = sum(1 for p in per_seed if key in p["drift"])
        if total:
            p_val = float(scipy_stats.binomtest(wins, total, 0.5,
                                                alternative="greater").pvalue)
            drift_tests[key] = {"wins": wins, "pairs": total, "p_value": p_val}

    ratios = [p["cp_ratio"] for p in per_seed]
    comparison = {
        "schema": COMPARISON_SCHEMA,
        "threshold": threshold,
        "horizon": horizon,
        "per_seed": per_seed,
        "n_pairs": len(per_seed),
        "n_nas_not_earlier": sum(p["nas_not_earlier"] for p in per_seed),
        "drift_sign_tests": drift_tests,
        "median_cp_ratio": float(np.median(ratios)) if ratios else float("nan"),
        "median_spearman_vanilla": float(np.median([
            p["spearman_vanilla"] for p in per_seed
            if not np.isnan(p["spearman_vanilla"])
        ])) if per_seed else float("nan"),
        "trajectories": trajectories,
        "fits": fits,
    }
    (out / "comparison.json").write_text(
        json.dumps(comparison, indent=2, sort_keys=True) + "\n")
    return comparison


def report_run(run_dir: str | Path) -> dict[str, Path]:
    """Aggregate plot-ready CSV tables for a completed run."""
    manifest = load_manifest(run_dir)
    entries = _ok_entries(manifest)
    if not entries:
        raise RuntimeError("no successful seeds to report")
    summaries = []
    for entry in entries:
        _, summary = load_seed(run_dir, entry)
        summaries.append(summary)
    report_dir = Path(run_dir) / "report"
    report_dir.mkdir(exist_ok=True)

    ns = [cp["n"] for cp in summaries[0]["checkpoints"]]
    traj_path = report_dir / "trajectory.csv"
    with open(traj_path, "w") as fh:
        fh.write("n,w_norm_sq_mean,w_norm_sq_se,w_tilde_norm_sq_mean,r_n_mean\n")
        for i, n in enumerate(ns):
            w = np.array([s["checkpoints"][i]["w_norm_sq"] for s in summaries])
            wt = np.array([s["checkpoints"][i]["w_tilde_norm_sq"] for s in summaries])
            r = np.array([s["checkpoints"][i]["r_n"] for s in summaries])
            se = w.std(ddof=1) / np.sqrt(len(w)) if len(w) > 1 else 0.0
            fh.write(f"{n},{w.mean()!r},{float(se)!r},{wt.mean()!r},{r.mean()!r}\n")

    score_path = report_dir / "scores.csv"
    with open(score_path, "w") as fh:
        fh.write("n,efficacy,generalization,specificity,score,drift_delta\n")
        for i, n in enumerate(ns):
            cols = []
            for field_name in ("efficacy", "generalization", "specificity",
                               "score", "drift_delta"):
                vals = [s["checkpoints"][i][field_name] for s in summaries]
                vals = [v for v in vals if v is not None]
                cols.append(repr(float(np.mean(vals))) if vals else "")
            fh.write(f"{n}," + ",".join(cols) + "\n")

    cp_path = report_dir / "collapse_points.csv"
    threshold = manifest["config"]["tolerances"]["score_threshold"]
    with open(cp_path, "w") as fh:
        fh.write("seed,collapse_point\n")
        for summary in summaries:
            cp = collapse_point(_score_series(summary), threshold)
            fh.write(f"{summary['seed']},{'' if cp is None else cp}\n")

    return {"trajectory": traj_path, "scores": score_path, "collapse_points": cp_path}
