"""Per-stream pipeline: tracking, airway association, localization, loop closure.

One :class:`LocalizationEngine` owns all mutable state of a stream and
consumes frames strictly in order.
"""
import math
from dataclasses import dataclass, field

from .airway import AirwayGraph
from .association import (
    Gallery,
    build_subgraph,
    estimate_roll,
    hierarchy_violations,
    initialize,
    localize,
    propagate_labels,
    update_gallery,
)
from .config import EngineConfig
from .errors import InsufficientTracklets, NoLabeledSeed, NotAtCarina, NoVotes
from .loop_closure import ExternalProcessMatcher, FrameRef, NullMatcher, on_new_branch, recompute_association
from .tracker import LumenTracker


@dataclass
class FrameResult:
    frame: int
    tracks: list  # (id, BoundingBox, label or None), observed this frame
    branch: str | None
    votes: dict = field(default_factory=dict)
    roll: float | None = None
    initialized: bool = False
    loop_closed: bool = False
    reidentified: dict = field(default_factory=dict)  # old id -> restored id
    violations: int = 0


def make_matcher(cfg: EngineConfig):
    lc = cfg.loop_closure
    if not lc.enabled or lc.provider == "none":
        return NullMatcher()
    if lc.provider == "external":
        return ExternalProcessMatcher(lc.external_command)
    from .sim import SimFeatureMatcher

    return SimFeatureMatcher(seed=lc.sim_seed, base=lc.sim_base)


class LocalizationEngine:
    def __init__(self, graph: AirwayGraph, config: EngineConfig | None = None, matcher=None):
        self.graph = graph
        self.config = config or EngineConfig()
        self.tracker = LumenTracker(self.config.tracker)
        self.gallery = Gallery()
        self.matcher = matcher if matcher is not None else make_matcher(self.config)
        self.loop_enabled = self.config.loop_closure.enabled
        self.location = None
        self.votes = {}
        self.roll = None

    def process(self, packet) -> FrameResult:
        cfg = self.config
        ac = cfg.association
        frame = packet.frame
        g = self.graph
        res = self.tracker.step(frame, packet.detections, self.location, g)
        vis = res.visible
        tracklets = [t for t, _ in vis]
        boxes = [packet.detections[j].box for _, j in vis]
        centers = [(b.x_c, b.y_c) for b in boxes]
        ages = [t.age(frame) for t in tracklets]
        sub = build_subgraph(boxes, ac.containment, ac.dup_iou)
        out = FrameResult(frame, [], self.location)

        labels = [t.airway_label if t.airway_label in g else None for t in tracklets]
        have_seed = any(labels[j] is not None for j in sub.nodes)
        init_now = self.location is None or (not have_seed and self.location == g.root)
        if init_now:
            try:
                roll0, (left, right) = initialize(sub, centers, math.radians(ac.roll_hint_deg))
            except NotAtCarina:
                init_now = False
            else:
                self.roll = roll0
                labels[left], labels[right] = g.lmb, g.rmb
                out.initialized = True
        if not out.initialized and self.roll is not None and len(tracklets) >= 2:
            try:
                self.roll = estimate_roll(
                    self.gallery,
                    [(t.id, t.start_frame, c) for t, c in zip(tracklets, centers)],
                    ac.roll_min_separation_px,
                )
            except InsufficientTracklets:
                pass

        if self.roll is not None:
            seen_ids = {t.id for t in tracklets}
            hold = ac.label_hold_frames
            reserved = {
                t.airway_label
                for t in self.tracker.tracklets
                if t.airway_label is not None and t.id not in seen_ids and frame - t.last_frame <= hold
            }
            try:
                labels = propagate_labels(
                    sub, labels, centers, ages, g, self.roll, ac.probe_mm, ac.max_bend_deg, ac.label_gate, reserved
                )
            except NoLabeledSeed:
                pass
            for t, lb in zip(tracklets, labels):
                if lb is not None and t.airway_label != lb:
                    t.airway_label = lb
            try:
                est = localize(sub, labels, g, frame)
                new_loc, self.votes = est.branch, est.votes
            except NoVotes:
                new_loc = self.location  # hold
        else:
            new_loc = None
        out.violations = hierarchy_violations(sub, labels, g)

        changed = new_loc is not None and new_loc != self.location
        prev = self.location
        self.location = new_loc
        keyframe = None
        if out.initialized or changed:
            keyframe = FrameRef(
                frame,
                [[b.x_c, b.y_c, b.w, b.h] for b in boxes],
                [t.id for t in tracklets],
                [t.airway_label for t in tracklets],
                packet.handle,
            )
        loop = None
        if changed and prev is not None and self.loop_enabled and not out.initialized:
            loop = on_new_branch(
                keyframe, self.gallery, self.matcher, cfg.loop_closure.min_pairs, cfg.loop_closure.recent
            )
            if loop.loop:
                out.loop_closed = True
                moves = recompute_association(loop.report, loop.record.keyframe, keyframe, cfg.loop_closure.min_points)
                for idx in sorted(moves):
                    tid, lb = moves[idx]
                    t = tracklets[idx]
                    old = t.id
                    if old != tid and self.tracker.reidentify(t, tid, lb):
                        self.gallery.rename_tracklet(old, tid)
                        out.reidentified[old] = tid
                    elif old == tid and lb is not None:
                        t.airway_label = lb

        if self.location is not None:
            seen = {t.id: c for t, c in zip(tracklets, centers) if t.airway_label is not None}
            is_new = self.location not in self.gallery
            store_kf = keyframe if (out.initialized or (changed and not (loop and loop.loop))) else None
            update_gallery(self.gallery, seen, self.roll, self.location, frame, store_kf if is_new else None)
            if store_kf is not None and not is_new:
                self.gallery.insert_keyframe(self.location, store_kf)

        out.branch = self.location
        out.votes = dict(self.votes) if self.location is not None else {}
        out.roll = self.roll
        out.tracks = [(t.id, b, t.airway_label) for t, b in zip(tracklets, boxes)]
        return out

    def run(self, packets):
        for p in packets:
            yield self.process(p)
