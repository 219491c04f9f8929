"""Simulate-track-score runs used by the acceptance suite and benchmarks."""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import EngineConfig
from .engine import LocalizationEngine
from .metrics import MetricsReport, SeqFrame, evaluate_localization, evaluate_mot
from .sim import SimNoise, SimScenario, generate_tree, render_frames

REFERENCE_PATH_END = "RB1a"

NOISY = SimNoise(center_jitter=2.0, fn_rate=0.05, fp_rate=0.1, embedding_noise=0.1)

VARIANTS = ("loop_closure", "full", "no_reid", "no_kalman")


def reference_scenario(seed: int = 0, noise: SimNoise | None = None, frames: int = 2000) -> tuple:
    """4-generation tree and a forward walk to a 3rd-generation leaf, about
    ``frames`` frames long. Returns ``(scenario, graph, path)``."""
    base = SimScenario(seed=seed, generations=4, noise=noise or SimNoise())
    graph = generate_tree(base)
    path = list(reversed(graph.ancestors(REFERENCE_PATH_END)))
    dist = sum(graph[b].length for b in path[:-1]) + base.end_s * graph[path[-1]].length
    scenario = replace(base, speed=dist / (frames - 1))
    return scenario, graph, path


def variant_config(variant: str, seed: int = 0, base: EngineConfig | None = None) -> EngineConfig:
    """Engine configuration for one ablation variant."""
    cfg = base or EngineConfig()
    tracker = cfg.tracker
    lc = replace(cfg.loop_closure, sim_seed=seed)
    if variant == "loop_closure":
        lc = replace(lc, enabled=True)
    elif variant == "full":
        lc = replace(lc, enabled=False)
    elif variant == "no_reid":
        lc = replace(lc, enabled=False)
        tracker = replace(tracker, reid_weight=0.0)
    elif variant == "no_kalman":
        lc = replace(lc, enabled=False)
        tracker = replace(tracker, use_kalman=False)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return replace(cfg, tracker=tracker, loop_closure=lc)


@dataclass
class RunSummary:
    frames: int
    metrics: MetricsReport
    loc_accuracy: float
    loc_error_mean: float
    roll_abs_err: np.ndarray  # radians, frames after initialization
    violations: int
    predicted: list = field(default_factory=list)
    truth: list = field(default_factory=list)
    results: list = field(default_factory=list)

    @property
    def roll_mae_deg(self) -> float:
        return float(np.degrees(self.roll_abs_err.mean())) if self.roll_abs_err.size else 0.0


def run(scenario: SimScenario, graph, path, config: EngineConfig | None = None, matcher=None, keep_results: bool = False) -> RunSummary:
    eng = LocalizationEngine(graph, config or EngineConfig(), matcher)
    pred, truth, seq, roll_err = [], [], [], []
    results = []
    violations = 0
    for packet, gt in render_frames(scenario, graph, path):
        r = eng.process(packet)
        pred.append(r.branch)
        truth.append(gt.branch)
        violations += r.violations
        if r.roll is not None:
            roll_err.append(abs(math.remainder(r.roll - gt.roll, 2 * math.pi)))
        seq.append(
            SeqFrame(
                [i for _, _, i in gt.lumens],
                [b.as_array() for _, b, _ in gt.lumens],
                [t[0] for t in r.tracks],
                [t[1].as_array() for t in r.tracks],
            )
        )
        if keep_results:
            results.append((r, gt))
    cfg = eng.config
    m = evaluate_mot(seq, cfg.metrics.iou_threshold, cfg.metrics.hota_alphas)
    loc = evaluate_localization(pred, truth, graph)
    m.loc_accuracy, m.loc_error_mean, m.per_branch = loc.accuracy, loc.error_mean, loc.per_branch
    return RunSummary(len(seq), m, loc.accuracy, loc.error_mean, np.asarray(roll_err), violations, pred, truth, results)
