"""Multi-object tracking and localization scores.

Per frame the input is a pair of ``(ids, boxes)`` for ground truth and for
the predictions, boxes as ``(N, 4)`` center-form arrays. CLEAR and HOTA
follow the TrackEval reference implementation; IDF1 uses the global optimal
identity assignment.
"""
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .airway import AirwayGraph, generation_distance
from .assignment import solve
from .errors import MisalignedFrames, UnknownLabel

HOTA_ALPHAS = tuple(round(0.05 * k, 2) for k in range(1, 20))
_EPS = np.finfo(float).eps


@dataclass
class SeqFrame:
    gt_ids: list
    gt_boxes: np.ndarray
    pr_ids: list
    pr_boxes: np.ndarray

    def __post_init__(self):
        self.gt_boxes = np.asarray(self.gt_boxes, dtype=np.float64).reshape(-1, 4)
        self.pr_boxes = np.asarray(self.pr_boxes, dtype=np.float64).reshape(-1, 4)
        self.gt_ids = list(self.gt_ids)
        self.pr_ids = list(self.pr_ids)
        if len(self.gt_ids) != len(self.gt_boxes) or len(self.pr_ids) != len(self.pr_boxes):
            raise ValueError("ids and boxes must be parallel")


@dataclass
class MetricsReport:
    MOTA: float = 0.0
    IDF1: float = 0.0
    HOTA: float = 0.0
    DetA: float = 0.0
    AssA: float = 0.0
    FP: int = 0
    FN: int = 0
    IDSW: int = 0
    IDs: int = 0
    GT_IDs: int = 0
    GT: int = 0
    loc_accuracy: float | None = None
    loc_error_mean: float | None = None
    loc_frames: int = 0
    per_branch: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _iou(f: SeqFrame) -> np.ndarray:
    if not len(f.gt_ids) or not len(f.pr_ids):
        return np.zeros((len(f.gt_ids), len(f.pr_ids)))
    return kernels.iou_matrix(f.gt_boxes, f.pr_boxes)


def clear_mot(frames, alpha: float = 0.5) -> dict:
    """CLEAR MOT counts with carry-over of last frame's pairings.

    A pairing from the previous frame is kept while its IoU stays >= alpha.
    Remaining objects are matched with maximum cardinality, then minimum
    total ``1 - IoU``. An identity switch is a ground-truth object matched to
    a different prediction than the last time it was matched.
    """
    last_frame = {}  # gt id -> pred id matched on the previous frame
    last_ever = {}  # gt id -> most recent pred id ever matched
    tp = fp = fn = idsw = n_gt = 0
    for f in frames:
        sim = _iou(f)
        n_gt += len(f.gt_ids)
        gi = {g: i for i, g in enumerate(f.gt_ids)}
        pj = {p: j for j, p in enumerate(f.pr_ids)}
        pairs = []
        used_r, used_c = set(), set()
        for g, p in last_frame.items():
            if g in gi and p in pj and sim[gi[g], pj[p]] >= alpha:
                pairs.append((gi[g], pj[p]))
                used_r.add(gi[g])
                used_c.add(pj[p])
        rows = [i for i in range(len(f.gt_ids)) if i not in used_r]
        cols = [j for j in range(len(f.pr_ids)) if j not in used_c]
        if rows and cols:
            sub = sim[np.ix_(rows, cols)]
            cost = np.where(sub >= alpha, 1.0 - sub, np.inf)
            gate = float(min(len(rows), len(cols)) + 2)
            a = solve(cost - gate, 0.0)
            pairs.extend((rows[r], cols[c]) for r, c in a.pairs)
        last_frame = {}
        for i, j in pairs:
            g, p = f.gt_ids[i], f.pr_ids[j]
            if g in last_ever and last_ever[g] != p:
                idsw += 1
            last_ever[g] = p
            last_frame[g] = p
        tp += len(pairs)
        fn += len(f.gt_ids) - len(pairs)
        fp += len(f.pr_ids) - len(pairs)
    mota = 1.0 - (fn + fp + idsw) / n_gt if n_gt else (1.0 if fp == 0 else -math.inf)
    return {"TP": tp, "FP": fp, "FN": fn, "IDSW": idsw, "GT": n_gt, "MOTA": mota}


def _id_index(frames):
    gts = sorted({g for f in frames for g in f.gt_ids})
    prs = sorted({p for f in frames for p in f.pr_ids})
    return {g: i for i, g in enumerate(gts)}, {p: j for j, p in enumerate(prs)}


def idf1(frames, alpha: float = 0.5) -> dict:
    gmap, pmap = _id_index(frames)
    counts = np.zeros((len(gmap), len(pmap)))
    n_gt = n_pr = 0
    for f in frames:
        n_gt += len(f.gt_ids)
        n_pr += len(f.pr_ids)
        sim = _iou(f)
        for i, j in zip(*np.nonzero(sim >= alpha)):
            counts[gmap[f.gt_ids[i]], pmap[f.pr_ids[j]]] += 1
    idtp = 0.0
    if counts.size:
        a = solve(-counts, 0.0)
        idtp = float(sum(counts[r, c] for r, c in a.pairs))
    denom = n_gt + n_pr
    return {
        "IDTP": idtp,
        "IDFN": n_gt - idtp,
        "IDFP": n_pr - idtp,
        "IDF1": 2 * idtp / denom if denom else 1.0,
    }


def _max_assign(score: np.ndarray) -> list:
    """Full maximum-score assignment of a rectangular matrix."""
    r, c = score.shape
    if r == 0 or c == 0:
        return []
    if r <= c:
        cols = kernels.lsa(-score)
        return [(i, int(j)) for i, j in enumerate(cols)]
    rows = kernels.lsa(-score.T)
    return sorted((int(i), j) for j, i in enumerate(rows))


def hota(frames, alphas=HOTA_ALPHAS) -> dict:
    """HOTA averaged over localization thresholds ``alphas``."""
    alphas = np.asarray(alphas, dtype=np.float64)
    gmap, pmap = _id_index(frames)
    ng, npr = len(gmap), len(pmap)
    n_gt_dets = sum(len(f.gt_ids) for f in frames)
    n_pr_dets = sum(len(f.pr_ids) for f in frames)
    if n_pr_dets == 0 or n_gt_dets == 0:
        perfect = n_pr_dets == 0 and n_gt_dets == 0
        v = 1.0 if perfect else 0.0
        return {"HOTA": v, "DetA": v, "AssA": v, "per_alpha": [v] * len(alphas)}

    sims = [_iou(f) for f in frames]
    potential = np.zeros((ng, npr))
    gt_count = np.zeros(ng)
    pr_count = np.zeros(npr)
    for f, sim in zip(frames, sims):
        gi = [gmap[g] for g in f.gt_ids]
        pj = [pmap[p] for p in f.pr_ids]
        if gi and pj:
            denom = sim.sum(0)[None, :] + sim.sum(1)[:, None] - sim
            sim_iou = np.zeros_like(sim)
            mask = denom > _EPS
            sim_iou[mask] = sim[mask] / denom[mask]
            potential[np.ix_(gi, pj)] += sim_iou
        gt_count[gi] += 1
        pr_count[pj] += 1
    global_score = potential / (gt_count[:, None] + pr_count[None, :] - potential)

    na = len(alphas)
    tp = np.zeros(na)
    match_counts = np.zeros((na, ng, npr))
    for f, sim in zip(frames, sims):
        if not len(f.gt_ids) or not len(f.pr_ids):
            continue
        gi = np.array([gmap[g] for g in f.gt_ids])
        pj = np.array([pmap[p] for p in f.pr_ids])
        score = global_score[gi[:, None], pj[None, :]] * sim
        for r, c in _max_assign(score):
            if score[r, c] <= 0:
                continue
            ok = sim[r, c] >= alphas - _EPS
            tp += ok
            match_counts[ok, gi[r], pj[c]] += 1

    fn = n_gt_dets - tp
    fp = n_pr_dets - tp
    det_a = tp / np.maximum(1.0, tp + fn + fp)
    ass_a = np.zeros(na)
    for a in range(na):
        mc = match_counts[a]
        ass = mc / np.maximum(1.0, gt_count[:, None] + pr_count[None, :] - mc)
        ass_a[a] = (mc * ass).sum() / max(1.0, tp[a])
    h = np.sqrt(det_a * ass_a)
    return {"HOTA": float(h.mean()), "DetA": float(det_a.mean()), "AssA": float(ass_a.mean()), "per_alpha": h.tolist()}


def evaluate_mot(frames, alpha: float = 0.5, hota_alphas=HOTA_ALPHAS) -> MetricsReport:
    frames = list(frames)
    c = clear_mot(frames, alpha)
    i = idf1(frames, alpha)
    h = hota(frames, hota_alphas)
    gmap, pmap = _id_index(frames)
    return MetricsReport(
        MOTA=c["MOTA"],
        IDF1=i["IDF1"],
        HOTA=h["HOTA"],
        DetA=h["DetA"],
        AssA=h["AssA"],
        FP=c["FP"],
        FN=c["FN"],
        IDSW=c["IDSW"],
        IDs=len(pmap),
        GT_IDs=len(gmap),
        GT=c["GT"],
    )


@dataclass
class LocalizationScore:
    accuracy: float
    error_mean: float
    per_branch: dict  # true branch -> {"frames", "correct", "accuracy"}
    unlocalized: int = 0


def evaluate_localization(pred, truth, graph: AirwayGraph) -> LocalizationScore:
    """Frame accuracy and mean tree-hop error of predicted branches.

    Frames without a prediction (``None``) count as wrong and are left out
    of the error mean.

    Raises:
        MisalignedFrames: sequences differ in length.
        UnknownLabel: a label is not in ``graph``.
    """
    pred = list(pred)
    truth = list(truth)
    if len(pred) != len(truth):
        raise MisalignedFrames(f"{len(pred)} predicted vs {len(truth)} true frames")
    table = {}
    correct = 0
    errs = []
    missing = 0
    for p, t in zip(pred, truth):
        if t not in graph:
            raise UnknownLabel(f"unknown branch label {t!r}")
        row = table.setdefault(t, {"frames": 0, "correct": 0})
        row["frames"] += 1
        if p is None:
            missing += 1
            continue
        if p not in graph:
            raise UnknownLabel(f"unknown branch label {p!r}")
        d = generation_distance(graph, p, t)
        errs.append(d)
        if d == 0:
            correct += 1
            row["correct"] += 1
    for row in table.values():
        row["accuracy"] = row["correct"] / row["frames"]
    n = len(truth)
    return LocalizationScore(
        correct / n if n else 1.0,
        float(np.mean(errs)) if errs else 0.0,
        dict(sorted(table.items())),
        missing,
    )


def align_frames(pred_records, truth_records) -> list:
    """Pair tracks and truth records by frame index into :class:`SeqFrame`s.

    Raises:
        MisalignedFrames: the two streams cover different frames.
    """
    pred = {r["frame"]: r for r in pred_records}
    truth = {r["frame"]: r for r in truth_records}
    if set(pred) != set(truth):
        only_p = sorted(set(pred) - set(truth))[:5]
        only_t = sorted(set(truth) - set(pred))[:5]
        raise MisalignedFrames(f"frame sets differ (pred only {only_p}, truth only {only_t})")
    out = []
    for k in sorted(truth):
        t, p = truth[k], pred[k]
        out.append(
            SeqFrame(
                [g["id"] for g in t["gts"]],
                [[g["cx"], g["cy"], g["w"], g["h"]] for g in t["gts"]],
                [x["id"] for x in p["tracks"]],
                [[x["cx"], x["cy"], x["w"], x["h"]] for x in p["tracks"]],
            )
        )
    return out
