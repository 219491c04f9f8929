"""Slow, obviously-correct reference computations used as test oracles."""
import itertools
import math

import numpy as np


def box_iou(a, b):
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def best_partial_matching(cost, gate):
    """Minimum of sum(cost - gate) over partial matchings using entries < gate.

    Bitmask recursion over rows: every row is either left out or paired
    with an unused column.
    """
    cost = np.asarray(cost, dtype=np.float64)
    rows, cols = cost.shape
    memo = {}

    def f(i, mask):
        if i == rows:
            return 0.0
        key = (i, mask)
        if key in memo:
            return memo[key]
        best = f(i + 1, mask)
        for j in range(cols):
            if not mask & (1 << j) and cost[i, j] < gate:
                best = min(best, (cost[i, j] - gate) + f(i + 1, mask | (1 << j)))
        memo[key] = best
        return best

    return f(0, 0)


def all_matchings(rows, cols, allowed):
    """Every partial matching as a list of (r, c), restricted to allowed(r, c)."""
    out = []

    def rec(i, used, acc):
        if i == rows:
            out.append(list(acc))
            return
        rec(i + 1, used, acc)
        for j in range(cols):
            if j not in used and allowed(i, j):
                acc.append((i, j))
                rec(i + 1, used | {j}, acc)
                acc.pop()

    rec(0, frozenset(), [])
    return out


def clear_oracle(frames, alpha=0.5):
    """CLEAR MOT by enumerating every per-frame matching.

    frames: list of (gt_ids, gt_boxes, pr_ids, pr_boxes). Previous-frame
    pairs that still overlap by >= alpha are kept; among all matchings of the
    rest, the one with most pairs and then least total (1 - IoU) is chosen.
    """
    last_frame, last_ever = {}, {}
    tp = fp = fn = idsw = n_gt = 0
    for gids, gb, pids, pb in frames:
        n_gt += len(gids)
        sim = [[box_iou(gb[i], pb[j]) for j in range(len(pids))] for i in range(len(gids))]
        kept = []
        for i, g in enumerate(gids):
            if g in last_frame and last_frame[g] in pids:
                j = pids.index(last_frame[g])
                if sim[i][j] >= alpha:
                    kept.append((i, j))
        kr = {i for i, _ in kept}
        kc = {j for _, j in kept}
        rows = [i for i in range(len(gids)) if i not in kr]
        cols = [j for j in range(len(pids)) if j not in kc]
        cands = all_matchings(len(rows), len(cols), lambda r, c: sim[rows[r]][cols[c]] >= alpha)
        best = min(cands, key=lambda m: (-len(m), sum(1 - sim[rows[r]][cols[c]] for r, c in m)))
        pairs = kept + [(rows[r], cols[c]) for r, c in best]
        last_frame = {}
        for i, j in pairs:
            g, p = gids[i], pids[j]
            if g in last_ever and last_ever[g] != p:
                idsw += 1
            last_ever[g] = p
            last_frame[g] = p
        tp += len(pairs)
        fn += len(gids) - len(pairs)
        fp += len(pids) - len(pairs)
    if n_gt:
        mota = 1.0 - (fn + fp + idsw) / n_gt
    else:
        mota = 1.0 if fp == 0 else -math.inf
    return {"TP": tp, "FP": fp, "FN": fn, "IDSW": idsw, "MOTA": mota}


def idf1_oracle(frames, alpha=0.5):
    """IDF1 by brute force over all partial injections gt id -> pred id."""
    gts = sorted({g for f in frames for g in f[0]})
    prs = sorted({p for f in frames for p in f[2]})
    counts = {}
    n_gt = n_pr = 0
    for gids, gb, pids, pb in frames:
        n_gt += len(gids)
        n_pr += len(pids)
        for i, g in enumerate(gids):
            for j, p in enumerate(pids):
                if box_iou(gb[i], pb[j]) >= alpha:
                    counts[(g, p)] = counts.get((g, p), 0) + 1
    best = 0
    for k in range(min(len(gts), len(prs)) + 1):
        for gsel in itertools.combinations(gts, k):
            for psel in itertools.permutations(prs, k):
                best = max(best, sum(counts.get((g, p), 0) for g, p in zip(gsel, psel)))
    denom = n_gt + n_pr
    return 2 * best / denom if denom else 1.0


def hota_direct(frames, alpha=0.5):
    """HOTA at one threshold from its definition.

    Per frame, the matching maximizes the summed (global alignment x IoU)
    score over all one-to-one pairings; matched pairs with IoU >= alpha are
    true positives. Each true positive c = (g, p) scores
    A(c) = |TPA| / (|TPA| + |FNA| + |FPA|).
    """
    eps = np.finfo(float).eps
    gts = sorted({g for f in frames for g in f[0]})
    prs = sorted({p for f in frames for p in f[2]})
    n_gt_dets = sum(len(f[0]) for f in frames)
    n_pr_dets = sum(len(f[2]) for f in frames)
    if n_gt_dets + n_pr_dets == 0:
        return 1.0  # nothing to detect and nothing predicted: 0/0, scored as perfect like MOTA and IDF1
    gt_count = {g: 0 for g in gts}
    pr_count = {p: 0 for p in prs}
    potential = {(g, p): 0.0 for g in gts for p in prs}
    sims = []
    for gids, gb, pids, pb in frames:
        sim = [[box_iou(gb[i], pb[j]) for j in range(len(pids))] for i in range(len(gids))]
        sims.append(sim)
        for g in gids:
            gt_count[g] += 1
        for p in pids:
            pr_count[p] += 1
        for i, g in enumerate(gids):
            for j, p in enumerate(pids):
                row = sum(sim[i])
                col = sum(sim[r][j] for r in range(len(gids)))
                d = row + col - sim[i][j]
                if d > eps:
                    potential[(g, p)] += sim[i][j] / d
    glob = {k: v / (gt_count[k[0]] + pr_count[k[1]] - v) for k, v in potential.items()}

    tps = []
    for (gids, gb, pids, pb), sim in zip(frames, sims):
        score = [[glob[(gids[i], pids[j])] * sim[i][j] for j in range(len(pids))] for i in range(len(gids))]
        best, best_m = -1.0, []
        # full one-to-one assignments of the smaller side
        if len(gids) <= len(pids):
            for psel in itertools.permutations(range(len(pids)), len(gids)):
                m = list(zip(range(len(gids)), psel))
                s = sum(score[i][j] for i, j in m)
                if s > best:
                    best, best_m = s, m
        else:
            for gsel in itertools.permutations(range(len(gids)), len(pids)):
                m = list(zip(gsel, range(len(pids))))
                s = sum(score[i][j] for i, j in m)
                if s > best:
                    best, best_m = s, m
        for i, j in best_m:
            if score[i][j] > 0 and sim[i][j] >= alpha - eps:
                tps.append((gids[i], pids[j]))
    tp = len(tps)
    fn = n_gt_dets - tp
    fp = n_pr_dets - tp
    det_a = tp / max(1, tp + fn + fp)
    pair_tp = {}
    for c in tps:
        pair_tp[c] = pair_tp.get(c, 0) + 1
    ass = 0.0
    for g, p in tps:
        tpa = pair_tp[(g, p)]
        fna = gt_count[g] - tpa
        fpa = pr_count[p] - tpa
        ass += tpa / (tpa + fna + fpa)
    ass_a = ass / max(1, tp)
    return math.sqrt(det_a * ass_a)


def micro_sequence(rng, max_ids=4, max_frames=6):
    """Random tiny tracking sequence with jitter, misses, clutter and id swaps."""
    n_ids = int(rng.integers(1, max_ids + 1))
    n_frames = int(rng.integers(1, max_frames + 1))
    pos = rng.uniform(20, 80, size=(n_ids, 2))
    size = rng.uniform(8, 20, size=(n_ids, 2))
    vel = rng.normal(0, 3, size=(n_ids, 2))
    pid_of = {g: g + 10 for g in range(n_ids)}
    frames = []
    for t in range(n_frames):
        gids, gb, pids, pb = [], [], [], []
        for g in range(n_ids):
            if rng.random() < 0.15:
                continue
            b = [*(pos[g] + vel[g] * t), *size[g]]
            gids.append(g)
            gb.append(b)
            if rng.random() < 0.15:
                continue
            if rng.random() < 0.2:
                pid_of[g] = int(rng.integers(10, 10 + max_ids + 2))
            j = rng.normal(0, 2.5, size=4)
            pb.append([b[0] + j[0], b[1] + j[1], max(2.0, b[2] + j[2]), max(2.0, b[3] + j[3])])
            pids.append(pid_of[g])
        if rng.random() < 0.3:
            pb.append([*rng.uniform(20, 80, 2), *rng.uniform(8, 20, 2)])
            pids.append(int(rng.integers(10, 10 + max_ids + 2)))
        # one prediction per id within a frame
        seen, keep = set(), []
        for k, p in enumerate(pids):
            if p not in seen:
                seen.add(p)
                keep.append(k)
        frames.append((gids, gb, [pids[k] for k in keep], [pb[k] for k in keep]))
    return frames
