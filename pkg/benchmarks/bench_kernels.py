"""Numba vs pure-numpy kernels, and end-to-end engine throughput.

Usage:
    python benchmarks/bench_kernels.py [--repeat N] [--frames N]

The kernel table calls both variants in one process. Engine throughput is
measured in a child process per mode, since the JIT switch is read at
import time.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from lumentrack import kernels

ENGINE_SNIPPET = """
import json, sys, time
from dataclasses import replace
import numpy as np
from lumentrack import EngineConfig, LocalizationEngine, experiments, io, kernels
from lumentrack.geometry import BoundingBox
from lumentrack.loop_closure import NullMatcher
from lumentrack.sim import render_frames
from lumentrack.tracker import Detection

frames = int(sys.argv[1])
sc, g, path = experiments.reference_scenario(0, frames=frames)
rng = np.random.default_rng(1)
pos = rng.uniform(20, 492, size=(20, 2))
emb = rng.normal(size=(20, 32))
emb /= np.linalg.norm(emb, axis=1, keepdims=True)
packets = []
for p, _ in render_frames(sc, g, path):
    dets = list(p.detections)
    k = 0
    while p.frame >= 5 and len(dets) < 20:
        dets.append(Detection(BoundingBox(float(pos[k, 0]), float(pos[k, 1]), 10.0, 10.0), 0.9, emb[k]))
        k += 1
    packets.append(io.FramePacket(p.frame, dets))
cfg = EngineConfig()
cfg = replace(cfg, loop_closure=replace(cfg.loop_closure, enabled=False))
kernels.warmup()
best = 0.0
for _ in range(3):
    eng = LocalizationEngine(g, cfg, NullMatcher())
    t0 = time.perf_counter()
    for p in packets:
        eng.process(p)
    best = max(best, len(packets) / (time.perf_counter() - t0))
print(json.dumps({"numba": kernels.USE_NUMBA, "fps": best, "frames": len(packets)}))
"""


def kernel_cases(rng):
    boxes = np.column_stack([rng.uniform(0, 512, (20, 2)), rng.uniform(10, 80, (20, 2))])
    mean = np.column_stack([boxes[:, :2], boxes[:, 3], boxes[:, 2] / boxes[:, 3], np.zeros((20, 3))])
    cov = np.repeat(np.eye(7)[None], 20, axis=0)
    z = boxes[:, [0, 1, 2, 3]].copy()
    z[:, 2] = boxes[:, 2] / boxes[:, 3]
    z[:, 3] = boxes[:, 3]
    cost = rng.uniform(0, 1, (20, 20))
    return {
        "iou_matrix 20x20": ((kernels.iou_matrix_jit, kernels.iou_matrix_np), (boxes, boxes)),
        "containment 20x20": ((kernels.containment_matrix_jit, kernels.containment_matrix_np), (boxes, boxes)),
        "kf_predict x20": ((kernels.kf_predict_jit, kernels.kf_predict_np), (mean, cov, 0.05, 0.00625, 0.01)),
        "kf_update x20": ((kernels.kf_update_jit, kernels.kf_update_np), (mean, cov, z, 0.05, 0.01)),
        "lsa 20x20": ((kernels.lsa_jit, kernels.lsa_np), (cost,)),
    }


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for name, ((jit, ref), args) in kernel_cases(rng).items():
        jit(*args)  # compile
        t_jit = min(timeit.repeat(lambda: jit(*args), number=repeat, repeat=3)) / repeat
        t_np = min(timeit.repeat(lambda: ref(*args), number=repeat, repeat=3)) / repeat
        rows.append((name, t_jit * 1e6, t_np * 1e6))
    return rows


def bench_engine(frames, disable_numba):
    env = dict(os.environ)
    if disable_numba:
        env["LUMENTRACK_DISABLE_NUMBA"] = "1"
    else:
        env.pop("LUMENTRACK_DISABLE_NUMBA", None)
    out = subprocess.run([sys.executable, "-c", ENGINE_SNIPPET, str(frames)], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000, help="calls per kernel timing")
    ap.add_argument("--frames", type=int, default=2000, help="frames in the engine stream")
    args = ap.parse_args(argv)

    print(f"{'kernel':<20}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, tj, tn in bench_kernels(args.repeat):
        print(f"{name:<20}{tj:>12.2f}{tn:>12.2f}{tn / tj:>9.1f}x")
    print()
    print("engine, 20 detections/frame, providers off")
    for disable in (False, True):
        r = bench_engine(args.frames, disable)
        mode = "numba" if r["numba"] else "numpy"
        print(f"  {mode:<6} {r['fps']:>8.0f} frames/s over {r['frames']} frames")


if __name__ == "__main__":
    main()
