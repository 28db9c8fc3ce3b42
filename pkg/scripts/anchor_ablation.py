#!/usr/bin/env python3
"""Pilot-count ablation for the anchor estimate.

Estimates the anchor at several pilot counts with repeated restarts and
prints estimation time plus the raw ||v_new|| statistics, mirroring the
anchor-estimation protocol: pilot edits on a clean state, mean of the
squared norms.

Usage:
  python scripts/anchor_ablation.py [--restarts 5] [--dv 64] [--dk 32]
"""

import argparse
import sys
import time

import numpy as np

from seqedit.editor import init_state
from seqedit.keyvalues import (
    STREAM_PILOT_KEYS,
    STREAM_PILOT_VALUE,
    KeyModel,
    ValueModel,
    ValueModelConfig,
)
from seqedit.nas import estimate_anchor

PILOT_COUNTS = (100, 300, 500, 1000, 2000)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--restarts", type=int, default=5)
    parser.add_argument("--dv", type=int, default=64)
    parser.add_argument("--dk", type=int, default=32)
    parser.add_argument("--s-new", type=float, default=1.8)
    parser.add_argument("--b-new", type=float, default=8.0)
    parser.add_argument("--noise-std", type=float, default=1.0)
    args = parser.parse_args()

    cfg = ValueModelConfig(mode="statistical-linear", s_new=args.s_new,
                           b_new=args.b_new, noise_std=args.noise_std,
                           direction_mix=0.9)
    state = init_state(args.dv, args.dk, seed=0)

    print(f"{'N':>6} {'time (s)':>16} {'anchor a':>18} {'raw ||v_new||':>18}")
    for n_pilot in PILOT_COUNTS:
        times, anchors, raws = [], [], []
        for r in range(args.restarts):
            seed = 15485863 * (r + 1) + n_pilot
            keys = KeyModel.isotropic(args.dk, seed, radial="fixed",
                                      stream=STREAM_PILOT_KEYS)
            values = ValueModel(cfg, args.dv, seed, stream=STREAM_PILOT_VALUE)
            t0 = time.perf_counter()
            anchor = estimate_anchor(state, values, keys, n_pilot)
            times.append(time.perf_counter() - t0)
            anchors.append(anchor.a)
            raws.append(anchor.raw_mean)
        print(f"{n_pilot:>6} "
              f"{np.mean(times):>9.4f}+-{np.std(times, ddof=1):.4f} "
              f"{np.mean(anchors):>11.3f}+-{np.std(anchors, ddof=1):.3f} "
              f"{np.mean(raws):>11.4f}+-{np.std(raws, ddof=1):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
