"""Detection-to-airway association and branch-level localization.

Per frame, the boxes of the observed tracklets are arranged into a forest
(:class:`DetectionSubgraph`) by containment. Labels inherited from the
tracker seed a propagation over that forest: parents get the parent branch,
children and siblings are matched to the projected child directions of the
airway graph. Labelled nodes then vote for the camera location.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .airway import AirwayGraph, ancestor, project_children, to_image
from .assignment import solve
from .errors import AboveRoot, InsufficientTracklets, NoLabeledSeed, NotAtCarina, NoVotes
from .geometry import signed_angle, wrap_angle

DEFAULT_CONTAINMENT = 0.7
DEFAULT_DUP_IOU = 0.85
DEFAULT_LABEL_GATE = 1.0


@dataclass
class DetectionSubgraph:
    nodes: list  # indices into this frame's box list (pruned ones excluded)
    parent_of: dict
    children: dict
    primary: list
    level: dict
    pruned: list = field(default_factory=list)

    def siblings(self, node) -> list:
        p = self.parent_of.get(node)
        pool = self.primary if p is None else self.children[p]
        return [s for s in pool if s != node]


def build_subgraph(boxes, containment: float = DEFAULT_CONTAINMENT, dup_iou: float = DEFAULT_DUP_IOU) -> DetectionSubgraph:
    """Containment forest over ``boxes`` (``(N, 4)`` center form or BoundingBoxes).

    ``j`` hangs under ``i`` when at least ``containment`` of ``j``'s area lies in the
    strictly larger box ``i``; the smallest such container is the parent, which
    drops grandparent edges. A child overlapping its container with
    IoU >= ``dup_iou`` is a duplicate and is pruned.
    """
    arr = _as_array(boxes)
    n = arr.shape[0]
    if n == 0:
        return DetectionSubgraph([], {}, {}, [], {})
    area = arr[:, 2] * arr[:, 3]
    cont = kernels.containment_matrix(arr, arr)  # cont[j, i]: j inside i
    ious = kernels.iou_matrix(arr, arr)
    cand = (cont >= containment) & (area[:, None] < area[None, :])
    dup = (cand & (ious >= dup_iou)).any(axis=1)
    cand[:, dup] = False
    masked = np.where(cand, area[None, :], np.inf)
    parent_idx = np.argmin(masked, axis=1)
    has_parent = np.isfinite(masked[np.arange(n), parent_idx])

    nodes = [j for j in range(n) if not dup[j]]
    parent_of = {}
    children = {j: [] for j in nodes}
    for j in nodes:
        if has_parent[j]:
            p = int(parent_idx[j])
            parent_of[j] = p
            children[p].append(j)
    primary = [j for j in nodes if j not in parent_of]
    level = {}
    for j in sorted(nodes, key=lambda k: -area[k]):
        p = parent_of.get(j)
        level[j] = 1 if p is None else level[p] + 1
    return DetectionSubgraph(nodes, parent_of, children, primary, level, [j for j in range(n) if dup[j]])


def _as_array(boxes) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, 4).astype(np.float64)
    return np.array([[b.x_c, b.y_c, b.w, b.h] for b in boxes], dtype=np.float64).reshape(-1, 4)


# --------------------------------------------------------------------------
# initialization and roll
# --------------------------------------------------------------------------


def initialize(subgraph: DetectionSubgraph, centers, roll_hint: float = 0.0):
    """Identify the main bronchi at the carina.

    Returns ``(roll_0, (left_node, right_node))``. With two primaries the
    roll is ambiguous by a half turn; the hypothesis closer to ``roll_hint``
    (default: scope upright) wins.

    Raises:
        NotAtCarina: the frame does not show exactly two primary lumens.
    """
    if len(subgraph.primary) != 2:
        raise NotAtCarina(f"need 2 primary lumens, got {len(subgraph.primary)}")
    p, q = subgraph.primary
    cp = np.asarray(centers[p], dtype=np.float64)
    cq = np.asarray(centers[q], dtype=np.float64)
    theta = signed_angle((1.0, 0.0), cq - cp)  # q taken as right
    flipped = wrap_angle(theta + math.pi)
    if abs(wrap_angle(theta - roll_hint)) <= abs(wrap_angle(flipped - roll_hint)):
        return theta, (p, q)
    return flipped, (q, p)


@dataclass
class GalleryRecord:
    branch: str
    tracklet_ids: frozenset
    tracklet_centers: dict
    roll: float
    lumen_count: int
    keyframe: object = None
    frame: int = -1
    updated: int = 0


class Gallery:
    """Per-branch records of the richest view seen so far."""

    def __init__(self):
        self.records = {}
        self._tick = 0
        self._by_tracklet = {}

    def __contains__(self, branch):
        return branch in self.records

    def __getitem__(self, branch) -> GalleryRecord:
        return self.records[branch]

    def __len__(self):
        return len(self.records)

    def _touch(self, rec):
        self._tick += 1
        rec.updated = self._tick

    def _index(self, rec, old_ids=()):
        for tid in old_ids:
            s = self._by_tracklet.get(tid)
            if s is not None:
                s.discard(rec.branch)
        for tid in rec.tracklet_ids:
            self._by_tracklet.setdefault(tid, set()).add(rec.branch)

    def put(self, branch, centers: dict, roll: float, frame: int = -1, keyframe=None) -> GalleryRecord:
        old = self.records.get(branch)
        rec = GalleryRecord(
            branch,
            frozenset(centers),
            {k: np.asarray(v, dtype=np.float64) for k, v in centers.items()},
            float(roll),
            len(centers),
            keyframe if keyframe is not None else (old.keyframe if old else None),
            frame,
        )
        self.records[branch] = rec
        self._index(rec, old.tracklet_ids if old else ())
        self._touch(rec)
        return rec

    def insert_keyframe(self, branch, keyframe) -> bool:
        rec = self.records.get(branch)
        if rec is None or rec.keyframe is not None:
            return False
        rec.keyframe = keyframe
        self._touch(rec)
        return True

    def records_with(self, tid) -> set:
        return self._by_tracklet.get(tid, set())

    def most_recent(self, count: int = 1) -> list:
        return sorted(self.records.values(), key=lambda r: -r.updated)[:count]

    def rename_tracklet(self, old_id, new_id):
        """Keep records consistent after loop closure restores an identity."""
        for branch in list(self.records_with(old_id)):
            rec = self.records[branch]
            centers = dict(rec.tracklet_centers)
            moved = centers.pop(old_id)
            centers.setdefault(new_id, moved)
            rec.tracklet_centers = centers
            rec.tracklet_ids = frozenset(centers)
            rec.lumen_count = len(centers)
            self._by_tracklet.setdefault(new_id, set()).add(branch)
        self._by_tracklet.pop(old_id, None)


def update_gallery(gallery: Gallery, centers: dict, roll: float, location, frame: int = -1, keyframe=None) -> Gallery:
    """New record on first visit; replace it when more lumens are visible now."""
    if location is None:
        return gallery
    rec = gallery.records.get(location)
    if rec is None or len(centers) > rec.lumen_count:
        gallery.put(location, centers, roll, frame, keyframe)
    return gallery


def estimate_roll(gallery: Gallery, visible, min_separation: float = 0.0) -> float:
    """Roll from the two oldest visible tracklets seen together in a record.

    Args:
        visible: iterable of ``(tracklet_id, start_frame, center)``.
        min_separation: pairs closer than this (px, in the record or now)
            give a poorly conditioned angle; the oldest pair clearing it is
            preferred, the oldest pair overall is the fallback.

    Raises:
        InsufficientTracklets: no visible pair co-occurs in any record.
    """
    order = sorted(visible, key=lambda v: (v[1], v[0]))
    fallback = None
    for a in range(len(order)):
        ida, _, ca = order[a]
        recs_a = gallery.records_with(ida)
        if not recs_a:
            continue
        for b in range(a + 1, len(order)):
            idb, _, cb = order[b]
            shared = recs_a & gallery.records_with(idb)
            if not shared:
                continue
            rec = max((gallery.records[s] for s in shared), key=lambda r: r.updated)
            now = np.asarray(ca, dtype=np.float64) - np.asarray(cb, dtype=np.float64)
            then = rec.tracklet_centers[ida] - rec.tracklet_centers[idb]
            sep = min(math.hypot(*now), math.hypot(*then))
            if sep < 1e-9:
                continue
            est = wrap_angle(rec.roll + signed_angle(then, now))
            if sep >= min_separation:
                return est
            if fallback is None:
                fallback = est
    if fallback is not None:
        return fallback
    raise InsufficientTracklets("no pair of visible tracklets shares a gallery record")


# --------------------------------------------------------------------------
# label propagation
# --------------------------------------------------------------------------


def _match_directions(rows, labels, centers, ref_center, cand_labels, cand_dirs, gate, taken):
    """Assign unlabelled ``rows`` (nodes) to candidate branches by direction
    agreement. Labels in ``taken`` are not offered.

    Returns ``[(node, label)]``.
    """
    free = [n for n in rows if labels[n] is None]
    cols = [c for c, cl in enumerate(cand_labels) if cl not in taken]
    if not free or not cols:
        return []
    pts = np.array([centers[n] for n in free], dtype=np.float64) - ref_center
    norm = np.hypot(pts[:, 0], pts[:, 1])
    ok = norm >= 1e-9
    pts[ok] /= norm[ok, None]
    dirs = np.array([cand_dirs[c] for c in cols], dtype=np.float64)
    cost = 1.0 - pts @ dirs.T
    cost[~ok] = np.inf
    return [(free[r], cand_labels[cols[c]]) for r, c in solve(cost, gate).pairs]


def propagate_labels(
    subgraph: DetectionSubgraph,
    labels: list,
    centers,
    ages,
    graph: AirwayGraph,
    roll: float,
    probe_mm: float = 10.0,
    max_bend_deg: float = 70.0,
    label_gate: float = DEFAULT_LABEL_GATE,
    reserved=(),
) -> list:
    """Fill unlabelled subgraph nodes from labelled ones, oldest tracklet first.

    Args:
        labels: per-box branch label or None (indexed like ``centers``).
        ages: per-box tracklet age; older references are processed first.
        reserved: labels held by tracklets not seen this frame; a lumen
            missed for a few frames keeps its label from being handed to a
            neighbouring opening.

    Returns:
        A new label list. Existing labels are never overwritten.

    Raises:
        NoLabeledSeed: no node carries a label.
    """
    labels = list(labels)
    seeds = [j for j in subgraph.nodes if labels[j] is not None and labels[j] in graph]
    if not seeds:
        raise NoLabeledSeed("no labelled node in this frame")
    queue = sorted(seeds, key=lambda j: (-ages[j], j))
    done = set()
    taken = set(reserved) | {lb for lb in labels if lb is not None}

    memo = {}

    def proj(label):
        hit = memo.get(label)
        if hit is None:
            entries = [e for e in project_children(graph, label, roll, probe_mm, max_bend_deg).entries if e.weight > 0]
            hit = memo[label] = ([e.label for e in entries], [to_image(e.dir) for e in entries])
        return hit

    k = 0
    while k < len(queue):
        b = queue[k]
        k += 1
        if b in done:
            continue
        done.add(b)
        lb = labels[b]
        cb = np.asarray(centers[b], dtype=np.float64)

        p = subgraph.parent_of.get(b)
        parent_branch = graph.parent(lb)
        if p is not None and labels[p] is None and parent_branch is not None:
            labels[p] = parent_branch
            taken.add(parent_branch)
            queue.append(p)

        kids = subgraph.children.get(b, [])
        if any(labels[c] is None for c in kids) and graph.children(lb):
            cand, dirs = proj(lb)
            if cand:
                for node, cl in _match_directions(kids, labels, centers, cb, cand, dirs, label_gate, taken):
                    labels[node] = cl
                    taken.add(cl)
                    queue.append(node)

        sibs = subgraph.siblings(b)
        if parent_branch is not None and any(labels[s] is None for s in sibs):
            cand, dirs = proj(parent_branch)
            if lb in cand:
                own = dirs[cand.index(lb)]
                pairs = []
                for cl, v in zip(cand, dirs):
                    if cl == lb:
                        continue
                    d = v - own
                    nd = math.hypot(d[0], d[1])
                    if nd > 1e-9:
                        pairs.append((cl, d / nd))
                if pairs:
                    sl = [c for c, _ in pairs]
                    for node, cl in _match_directions(sibs, labels, centers, cb, sl, [v for _, v in pairs], label_gate, taken):
                        labels[node] = cl
                        taken.add(cl)
                        queue.append(node)
    return labels


def hierarchy_violations(subgraph: DetectionSubgraph, labels, graph: AirwayGraph) -> int:
    """Parent/child node pairs whose labels are not parent/child branches."""
    bad = 0
    for child, parent in subgraph.parent_of.items():
        lc, lp = labels[child], labels[parent]
        if lc is not None and lp is not None and graph.parent(lc) != lp:
            bad += 1
    return bad


# --------------------------------------------------------------------------
# voting
# --------------------------------------------------------------------------


@dataclass
class LocalizationEstimate:
    frame: int
    branch: str
    votes: dict
    labeled_tracklets: dict = field(default_factory=dict)


def localize(subgraph: DetectionSubgraph, labels, graph: AirwayGraph, frame: int = -1, tracklet_ids=None) -> LocalizationEstimate:
    """Every labelled node votes for an ancestor of its label.

    With a single primary lumen in view the camera sits inside it, so a node
    at level ``k`` votes ``k - 1`` levels up; with several primaries it votes
    ``k`` levels up. Ties go to the deeper branch, then the smaller label.

    Raises:
        NoVotes: no labelled node.
    """
    n = len(subgraph.primary)
    votes = {}
    for j in subgraph.nodes:
        lb = labels[j]
        if lb is None or lb not in graph:
            continue
        k = subgraph.level[j] - 1 if n == 1 else subgraph.level[j]
        try:
            target = ancestor(graph, lb, k)
        except AboveRoot:
            target = graph.root
        votes[target] = votes.get(target, 0) + 1
    if not votes:
        raise NoVotes("no labelled lumen to vote")
    best = min(votes, key=lambda lb: (-votes[lb], -graph.generation(lb), lb))
    labeled = {}
    if tracklet_ids is not None:
        labeled = {tracklet_ids[j]: labels[j] for j in subgraph.nodes if labels[j] is not None}
    return LocalizationEstimate(frame, best, votes, labeled)
