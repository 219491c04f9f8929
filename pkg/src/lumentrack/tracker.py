"""Multi-lumen tracker: two-stage detection/tracklet association.

Stage one matches high-confidence detections against every live tracklet on
a fused appearance+motion cost; stage two gives the leftover detections
(low-confidence ones plus unmatched high ones) a motion-only chance against
tracklets that were still active on the previous frame. Tracklets labelled
with a branch too far (in tree hops) from the previous localization are
kept out of both stages.
"""
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .airway import AirwayGraph, generation_distance
from .assignment import solve
from .errors import MissingEmbedding, ZeroVector
from .geometry import BoundingBox, boxes_to_array, iou
from .kalman import (
    DEFAULT_NOISE,
    KalmanNoise,
    MotionState,
    initial_covariance,
    kf_predicted_box,
)


class TrackState(enum.Enum):
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


@dataclass
class Detection:
    box: BoundingBox
    score: float
    embedding: np.ndarray | None = None


@dataclass
class Tracklet:
    id: int
    start_frame: int
    last_frame: int
    motion: MotionState
    embedding: np.ndarray | None = None
    airway_label: str | None = None
    state: TrackState = TrackState.ACTIVE
    history: list = field(default_factory=list)
    was_active: bool = True  # ACTIVE at the end of the previous frame

    def age(self, frame: int) -> int:
        return frame - self.start_frame

    @property
    def box(self) -> BoundingBox:
        """Most recent observed box."""
        return self.history[-1][1]

    def predicted_box(self) -> BoundingBox:
        return kf_predicted_box(self.motion)


@dataclass
class TrackerConfig:
    det_threshold: float = 0.1
    high_threshold: float = 0.5
    match_gate: float = 0.4
    low_gate: float = 0.7
    low_gate_no_match: float = 0.9
    reid_weight: float = 0.5
    ema_momentum: float = 0.9
    max_age: int = 30
    max_generation_gap: int = 3
    use_kalman: bool = True
    noise: KalmanNoise = DEFAULT_NOISE


@dataclass
class MatchResult:
    matched: list = field(default_factory=list)  # (Tracklet, det index)
    new: list = field(default_factory=list)  # (Tracklet, det index)
    lost: list = field(default_factory=list)
    removed: list = field(default_factory=list)
    discarded: list = field(default_factory=list)  # det indices

    @property
    def visible(self) -> list:
        """``(Tracklet, det index)`` for every tracklet observed this frame."""
        return self.matched + self.new


def motion_cost(t: Tracklet, d: Detection) -> float:
    return 1.0 - iou(t.predicted_box(), d.box)


def appearance_cost(t: Tracklet, d: Detection) -> float:
    if d.embedding is None or t.embedding is None:
        raise MissingEmbedding("appearance cost needs embeddings on both sides")
    return 1.0 - float(np.dot(d.embedding, t.embedding))


def fused_cost(t: Tracklet, d: Detection, weight: float = 0.5) -> float:
    cm = motion_cost(t, d)
    try:
        ca = appearance_cost(t, d)
    except MissingEmbedding:
        return cm
    return weight * ca + (1.0 - weight) * cm


def normalize_embedding(f):
    f = np.asarray(f, dtype=np.float64)
    n = float(np.linalg.norm(f))
    if n <= 1e-12:
        raise ZeroVector("embedding has zero norm")
    return f / n


def update_embedding(e, f, momentum: float = 0.9) -> np.ndarray:
    """Exponential moving average of unit embeddings, renormalized."""
    if e is None:
        return normalize_embedding(f)
    mixed = momentum * np.asarray(e) + (1.0 - momentum) * np.asarray(f)
    n = math.sqrt(float(mixed @ mixed))
    if n <= 1e-12:
        raise ZeroVector("embedding update cancelled out")
    return mixed / n


class LumenTracker:
    """Mutable tracking state for one stream; not thread-safe."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.tracklets = []  # live (ACTIVE or LOST)
        self._next_id = 1
        self.frame = -1
        self._gate_graph, self._gate_memo = None, {}

    def _new_id(self) -> int:
        tid = self._next_id
        self._next_id += 1
        return tid

    def get(self, tid):
        for t in self.tracklets:
            if t.id == tid:
                return t
        return None

    # -- prediction ---------------------------------------------------------

    def predict(self):
        if not self.tracklets or not self.config.use_kalman:
            return
        n = self.config.noise
        mean = np.array([t.motion.x for t in self.tracklets])
        cov = np.array([t.motion.P for t in self.tracklets])
        mean, cov = kernels.kf_predict(mean, cov, n.std_position, n.std_velocity, n.std_aspect)
        for i, t in enumerate(self.tracklets):
            t.motion = MotionState(mean[i], cov[i])

    def _predicted_boxes(self, tracks) -> np.ndarray:
        out = np.empty((len(tracks), 4))
        for i, t in enumerate(tracks):
            x = t.motion.x
            h = max(x[2], 1.0)
            out[i] = (x[0], x[1], max(x[3], kernels.MIN_SIZE) * h, h)
        return out

    # -- association --------------------------------------------------------

    def _cost_matrix(self, tracks, det_boxes, det_embs, fuse: bool) -> np.ndarray:
        cm = 1.0 - kernels.iou_matrix(self._predicted_boxes(tracks), det_boxes)
        weight = self.config.reid_weight
        if not fuse or weight == 0.0:
            return cm
        t_has = np.array([t.embedding is not None for t in tracks])
        d_has = np.array([e is not None for e in det_embs])
        if not t_has.any() or not d_has.any():
            return cm
        dim = next(e for e in det_embs if e is not None).shape[0]
        zero = np.zeros(dim)
        te = np.array([zero if t.embedding is None else t.embedding for t in tracks])
        de = np.array([zero if e is None else e for e in det_embs])
        ca = 1.0 - te @ de.T
        both = t_has[:, None] & d_has[None, :]
        return np.where(both, weight * ca + (1.0 - weight) * cm, cm)

    def _gated_out(self, t: Tracklet, prev_location, graph) -> bool:
        if prev_location is None or graph is None or t.airway_label is None:
            return False
        key = (t.airway_label, prev_location)
        if self._gate_graph is not graph:
            self._gate_graph, self._gate_memo = graph, {}
        out = self._gate_memo.get(key)
        if out is None:
            if t.airway_label not in graph or prev_location not in graph:
                out = False
            else:
                out = generation_distance(graph, t.airway_label, prev_location) > self.config.max_generation_gap
            self._gate_memo[key] = out
        return out

    def step(self, frame: int, detections, prev_location=None, graph: AirwayGraph | None = None) -> MatchResult:
        """Predict, associate and update for one frame."""
        self.frame = frame
        self.predict()
        return self.associate(frame, detections, prev_location, graph)

    def associate(self, frame: int, detections, prev_location=None, graph=None) -> MatchResult:
        cfg = self.config
        res = MatchResult()
        keep = [j for j, d in enumerate(detections) if d.score >= cfg.det_threshold]
        res.discarded.extend(j for j, d in enumerate(detections) if d.score < cfg.det_threshold)
        high = [j for j in keep if detections[j].score >= cfg.high_threshold]
        low = [j for j in keep if detections[j].score < cfg.high_threshold]

        all_boxes = boxes_to_array([d.box for d in detections]) if detections else np.zeros((0, 4))
        embs = [d.embedding for d in detections]

        candidates = [t for t in self.tracklets if not self._gated_out(t, prev_location, graph)]
        matched_t = set()
        matched_d = set()
        pairs = []

        # stage one: high-confidence detections, fused cost
        if candidates and high:
            cost = self._cost_matrix(candidates, all_boxes[high], [embs[j] for j in high], fuse=True)
            a = solve(cost, cfg.match_gate)
            for r, c in a.pairs:
                pairs.append((candidates[r], high[c]))
                matched_t.add(id(candidates[r]))
                matched_d.add(high[c])
        first_stage_matches = len(pairs)

        # stage two: leftovers against tracklets active last frame, motion only
        rest_d = low + [j for j in high if j not in matched_d]
        rest_t = [t for t in candidates if id(t) not in matched_t and t.was_active]
        if rest_t and rest_d:
            gate = cfg.low_gate if first_stage_matches > 0 else cfg.low_gate_no_match
            cost = self._cost_matrix(rest_t, all_boxes[rest_d], None, fuse=False)
            a = solve(cost, gate)
            for r, c in a.pairs:
                pairs.append((rest_t[r], rest_d[c]))
                matched_t.add(id(rest_t[r]))
                matched_d.add(rest_d[c])

        self._apply_updates(frame, pairs, detections)
        res.matched = pairs

        for j in high:
            if j not in matched_d:
                res.new.append((self._spawn(frame, detections[j]), j))
        res.discarded.extend(j for j in low if j not in matched_d)
        res.discarded.sort()

        survivors = []
        new_ids = {id(t) for t, _ in res.new}
        for t in self.tracklets:
            if id(t) in matched_t or id(t) in new_ids:
                t.state = TrackState.ACTIVE
                t.was_active = True
                survivors.append(t)
                continue
            t.was_active = False
            if frame - t.last_frame > cfg.max_age:
                t.state = TrackState.REMOVED
                res.removed.append(t)
                continue
            if t.state is TrackState.ACTIVE:
                t.state = TrackState.LOST
                res.lost.append(t)
            survivors.append(t)
        self.tracklets = survivors
        return res

    def _apply_updates(self, frame, pairs, detections):
        if not pairs:
            return
        cfg = self.config
        z = np.empty((len(pairs), 4))
        for i, (_, j) in enumerate(pairs):
            b = detections[j].box
            z[i] = (b.x_c, b.y_c, b.h, b.w / b.h)
        if cfg.use_kalman:
            n = cfg.noise
            mean = np.array([t.motion.x for t, _ in pairs])
            cov = np.array([t.motion.P for t, _ in pairs])
            mean, cov, ok = kernels.kf_update(mean, cov, z, n.std_measurement, n.std_aspect_measurement)
        for i, (t, j) in enumerate(pairs):
            d = detections[j]
            if cfg.use_kalman:
                if ok[i]:
                    t.motion = MotionState(mean[i], cov[i])
                # a singular innovation drops the update and keeps the prediction
            else:
                x = np.zeros(7)
                x[:4] = z[i]
                t.motion = MotionState(x, t.motion.P)
            t.last_frame = frame
            t.history.append((frame, d.box))
        self._update_embeddings(pairs, detections)

    def _update_embeddings(self, pairs, detections):
        """Batched :func:`update_embedding` over matched pairs."""
        momentum = self.config.ema_momentum
        mix = []
        for t, j in pairs:
            f = detections[j].embedding
            if f is None:
                continue
            if t.embedding is None or t.embedding.shape != np.shape(f):
                try:
                    t.embedding = update_embedding(t.embedding, f, momentum)
                except ZeroVector:
                    pass
            else:
                mix.append((t, f))
        if not mix:
            return
        old = np.array([t.embedding for t, _ in mix])
        new = np.array([f for _, f in mix], dtype=np.float64)
        mixed = momentum * old + (1.0 - momentum) * new
        norms = np.sqrt(np.einsum("ij,ij->i", mixed, mixed))
        for (t, _), m, n in zip(mix, mixed, norms):
            if n > 1e-12:  # a cancelled-out update keeps the old embedding
                t.embedding = m / n

    def _spawn(self, frame, d: Detection) -> Tracklet:
        m = np.array([d.box.x_c, d.box.y_c, d.box.h, d.box.w / d.box.h])
        x = np.zeros(7)
        x[:4] = m
        t = Tracklet(
            id=self._new_id(),
            start_frame=frame,
            last_frame=frame,
            motion=MotionState(x, initial_covariance(m[2], self.config.noise)),
            embedding=None if d.embedding is None else normalize_embedding(d.embedding),
            history=[(frame, d.box)],
        )
        self.tracklets.append(t)
        return t

    # -- identity surgery used by loop closure ------------------------------

    def reidentify(self, t: Tracklet, new_id: int, label=None) -> bool:
        """Give ``t`` a previous identity; drops a dormant holder of that id.

        Returns False (and changes nothing) if another tracklet observed this
        frame already holds ``new_id``.
        """
        if t.id == new_id:
            if label is not None:
                t.airway_label = label
            return True
        holder = self.get(new_id)
        if holder is not None:
            if holder.last_frame == self.frame:
                return False
            holder.state = TrackState.REMOVED
            self.tracklets.remove(holder)
        t.id = new_id
        if label is not None:
            t.airway_label = label
        return True


def associate_frame(tracker: LumenTracker, frame: int, detections, prev_location=None, graph=None) -> MatchResult:
    """Functional entry point; tracklets must already be predicted for ``frame``."""
    tracker.frame = frame
    return tracker.associate(frame, detections, prev_location, graph)
