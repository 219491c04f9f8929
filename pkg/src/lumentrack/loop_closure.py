"""Keyframe-based loop closure.

When localization moves to a different branch, the current frame is matched
against the keyframes of the most recently updated gallery records. A match
with enough keypoint pairs means the scope is back somewhere it has been;
current tracklets then take back the identities seen in that keyframe.

Feature matching is a pluggable provider: anything with
``match(a: FrameRef, b: FrameRef) -> MatchReport``.
"""
import json
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .errors import ProviderFailure

DEFAULT_MIN_PAIRS = 100
DEFAULT_RECENT = 1
DEFAULT_MIN_POINTS = 10


@dataclass
class FrameRef:
    frame: int
    boxes: np.ndarray  # (N, 4) center form
    tracklet_ids: list
    labels: list = field(default_factory=list)
    handle: object = None

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        if len(self.tracklet_ids) != self.boxes.shape[0]:
            raise ValueError("boxes and tracklet ids must be parallel")
        if not self.labels:
            self.labels = [None] * len(self.tracklet_ids)


@dataclass
class MatchReport:
    pair_count: int = 0
    correspondences: list = field(default_factory=list)  # ((x, y) in a, (x, y) in b)

    @classmethod
    def from_pairs(cls, pairs) -> "MatchReport":
        pairs = [(tuple(map(float, p)), tuple(map(float, q))) for p, q in pairs]
        return cls(len(pairs), pairs)


class NullMatcher:
    """Never reports a match; loop closure effectively off."""

    def match(self, a: FrameRef, b: FrameRef) -> MatchReport:
        return MatchReport()


class ExternalProcessMatcher:
    """Talks to a long-running matcher over stdin/stdout, one JSON object per line.

    Request: ``{"a": {"frame", "handle"}, "b": {...}}``.
    Reply: ``{"pairs": [[[xa, ya], [xb, yb]], ...]}`` or ``{"error": msg}``.
    """

    def __init__(self, command, timeout: float = 10.0):
        self.command = list(command)
        self.timeout = timeout
        self._proc = None

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
                )
            except OSError as exc:
                raise ProviderFailure(f"cannot start matcher: {exc}") from None
        return self._proc

    def match(self, a: FrameRef, b: FrameRef) -> MatchReport:
        proc = self._ensure()
        req = {"a": {"frame": a.frame, "handle": a.handle}, "b": {"frame": b.frame, "handle": b.handle}}
        try:
            proc.stdin.write(json.dumps(req) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (OSError, ValueError) as exc:
            raise ProviderFailure(f"matcher pipe broken: {exc}") from None
        if not line:
            raise ProviderFailure("matcher closed its output")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProviderFailure(f"bad matcher reply: {exc}") from None
        if "error" in reply:
            raise ProviderFailure(str(reply["error"]))
        return MatchReport.from_pairs(reply.get("pairs", []))

    def close(self):
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=self.timeout)
            self._proc = None


def safe_match(provider, a: FrameRef, b: FrameRef) -> MatchReport:
    """Provider call where any failure counts as zero matches."""
    try:
        report = provider.match(a, b)
    except ProviderFailure:
        return MatchReport()
    if report.pair_count != len(report.correspondences):
        return MatchReport.from_pairs(report.correspondences)
    return report


@dataclass
class LoopOutcome:
    loop: bool
    record: object = None
    report: MatchReport = field(default_factory=MatchReport)


def on_new_branch(current: FrameRef, gallery, provider, min_pairs: int = DEFAULT_MIN_PAIRS, recent: int = DEFAULT_RECENT) -> LoopOutcome:
    """Look for a loop against the ``recent`` most recently updated records.

    The caller inserts ``current`` as keyframe of the new branch's record on
    a ``NoLoop`` outcome.
    """
    best = None
    for rec in gallery.most_recent(recent):
        if rec.keyframe is None:
            continue
        report = safe_match(provider, rec.keyframe, current)
        if report.pair_count > min_pairs and (best is None or report.pair_count > best[1].pair_count):
            best = (rec, report)
    if best is None:
        return LoopOutcome(False)
    return LoopOutcome(True, best[0], best[1])


def _smallest_containing(boxes: np.ndarray, pt) -> int:
    if boxes.shape[0] == 0:
        return -1
    half_w = boxes[:, 2] / 2
    half_h = boxes[:, 3] / 2
    inside = (np.abs(pt[0] - boxes[:, 0]) <= half_w) & (np.abs(pt[1] - boxes[:, 1]) <= half_h)
    if not inside.any():
        return -1
    area = np.where(inside, boxes[:, 2] * boxes[:, 3], np.inf)
    return int(np.argmin(area))


def recompute_association(report: MatchReport, keyframe: FrameRef, current: FrameRef, min_points: int = DEFAULT_MIN_POINTS) -> dict:
    """Identities the current boxes should inherit from the keyframe.

    Every correspondence votes for (current box, keyframe box), each endpoint
    going to the smallest box containing it. A current box takes the
    keyframe tracklet holding more than half of the points that fall in it
    (whether or not their keyframe end hits a box) if that is at least
    ``min_points`` points; when two current boxes claim the same
    keyframe tracklet the larger count wins. A current box already labelled
    with a different branch than the keyframe tracklet keeps its identity:
    a few stray points on the rim of a neighbouring opening are not a
    reason to swap anatomy.

    Returns:
        ``{current box index: (tracklet id, label)}``; boxes absent keep their id.
    """
    counts = {}
    for pk, pc in report.correspondences:
        c = _smallest_containing(current.boxes, pc)
        if c < 0:
            continue
        k = _smallest_containing(keyframe.boxes, pk)
        tid = keyframe.tracklet_ids[k] if k >= 0 else None
        row = counts.setdefault(c, {})
        row[tid] = row.get(tid, 0) + 1

    claims = []
    label_of = dict(zip(keyframe.tracklet_ids, keyframe.labels))
    for c, row in counts.items():
        total = sum(row.values())
        row.pop(None, None)  # endpoints outside every keyframe box still count in the total
        if not row:
            continue
        tid = min(row, key=lambda t: (-row[t], t))
        have, want = current.labels[c], label_of.get(tid)
        if have is not None and want is not None and have != want:
            continue
        if row[tid] >= min_points and 2 * row[tid] > total:
            claims.append((row[tid], c, tid))
    claims.sort(key=lambda x: (-x[0], x[1]))
    out = {}
    taken = set()
    for n, c, tid in claims:
        if tid in taken:
            continue
        taken.add(tid)
        out[c] = (tid, label_of.get(tid))
    return out
