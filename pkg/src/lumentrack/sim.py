"""Synthetic bronchoscopy: procedural airway trees and lumen detection streams.

The image model is a self-similar 2D layout rather than a renderer. Every
branch gets a layout position and size: a child sits at
``parent_pos + offset * parent_size * dir`` where ``dir`` is the child's
tangent-plane direction as projected by the airway graph, and its size is
``size_decay * parent_size``. The camera at depth ``D = generation + s``
(``s`` the fraction of the current branch travelled) sees the layout scaled
by ``base_px * size_decay**-D``, centered on a focus point that slides toward
the branch being entered, and rotated by the camera roll. This keeps the
geometric relations the engine relies on exact: child openings are displaced
from their parent lumen along the projected child directions rotated by the
roll.

What is visible from ``(branch, s)``:

* approach (``s < 0.5``, not the trachea): the branch's own lumen with its
  child openings nested inside it;
* bifurcation (``s >= 0.5``, or the trachea): the child openings, plus the
  grandchildren once ``s >= 0.75``.

Leaves only ever show their own lumen.
"""
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .airway import AirwayGraph, child_visibility_weights, load_and_normalize, project_children, to_image
from .errors import ConfigError, DisconnectedPath
from .geometry import BoundingBox, rotate2d
from .io import FramePacket
from .loop_closure import FrameRef, MatchReport
from .tracker import Detection

APPROACH_END = 0.5
GRANDCHILD_START = 0.75
FOCUS_START = 0.4


@dataclass
class SimNoise:
    center_jitter: float = 0.0  # px std per coordinate
    size_jitter: float = 0.0  # fractional std
    fp_rate: float = 0.0  # expected clutter boxes per frame
    fn_rate: float = 0.0
    low_score_prob: float = 0.0  # true detections scored in the low band
    embedding_noise: float = 0.0
    clutter_size: tuple = (10.0, 60.0)

    @property
    def noiseless(self) -> bool:
        return not (self.center_jitter or self.size_jitter or self.fp_rate or self.fn_rate or self.low_score_prob or self.embedding_noise)


@dataclass
class SimScenario:
    seed: int = 0
    generations: int = 4
    branch_angle_deg: tuple = (25.0, 45.0)
    twist_deg: float = 20.0
    azimuth_jitter_deg: float = 15.0
    trachea_length: float = 100.0  # mm
    length_decay: float = 0.8
    size_decay: float = 0.35  # opening size ratio child/parent in the image layout
    speed: float = 1.0  # mm per frame
    roll_keyframes: list = field(default_factory=lambda: [[0, 0.0]])  # [frame, degrees]
    image_size: int = 512
    base_px: float = 140.0
    child_offset: float = 0.28
    turn_s: float = 0.4
    reverse_s: float = 0.9
    end_s: float = 0.9
    min_box_px: float = 4.0
    embedding_dim: int = 32
    noise: SimNoise = field(default_factory=SimNoise)

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = SimNoise(**self.noise)
        self.branch_angle_deg = tuple(self.branch_angle_deg)
        self.noise.clutter_size = tuple(self.noise.clutter_size)
        self.validate()

    def validate(self):
        n = self.noise
        for name in ("fp_rate", "fn_rate", "low_score_prob"):
            v = getattr(n, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"noise.{name} must be in [0, 1], got {v}")
        for name in ("length_decay", "size_decay"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if self.generations < 2:
            raise ConfigError("generations must be >= 2")
        if self.speed <= 0:
            raise ConfigError("speed must be positive")
        lo, hi = self.branch_angle_deg
        if not 0.0 < lo <= hi < 90.0:
            raise ConfigError("branch_angle_deg must satisfy 0 < lo <= hi < 90")

    @classmethod
    def from_dict(cls, d: dict) -> "SimScenario":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        noise = d.pop("noise", None) or {}
        nk = {f.name for f in fields(SimNoise)}
        if set(noise) - nk:
            raise ConfigError(f"unknown noise keys: {sorted(set(noise) - nk)}")
        return cls(noise=SimNoise(**noise), **d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branch_angle_deg"] = list(self.branch_angle_deg)
        d["noise"]["clutter_size"] = list(self.noise.clutter_size)
        return d


@dataclass
class GroundTruthFrame:
    frame: int
    branch: str
    roll: float
    lumens: list  # (label, BoundingBox, gt id)
    s: float = 0.0


# --------------------------------------------------------------------------
# tree
# --------------------------------------------------------------------------


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def _child_labels(label: str, gen: int) -> tuple:
    if gen == 0:
        return "LMB", "RMB"
    if gen == 1:
        side = label[0]
        return f"{side}B1", f"{side}B2"
    suffix = ("a", "b") if gen % 2 == 0 else ("1", "2")
    return label + suffix[0], label + suffix[1]


def _rotate_about(v, axis, angle):
    axis = axis / np.linalg.norm(axis)
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1 - c)


def generate_tree(scenario: SimScenario) -> AirwayGraph:
    """Symmetric bifurcating tree with ``generations`` levels, seeded."""
    rng = _rng(scenario.seed, 1)
    lo, hi = (math.radians(a) for a in scenario.branch_angle_deg)
    twist = math.radians(scenario.twist_deg)
    az = math.radians(scenario.azimuth_jitter_deg)

    raw = []
    # (label, start, end, parent, plane vector, generation)
    stack = [("trachea", np.array([0.0, -scenario.trachea_length, 0.0]), np.zeros(3), None, np.array([1.0, 0.0, 0.0]), 0)]
    while stack:
        label, start, end, parent, plane, gen = stack.pop(0)
        raw.append({"label": label, "start": start.tolist(), "end": end.tolist(), "parent": parent})
        if gen + 1 >= scenario.generations:
            continue
        d = (end - start) / np.linalg.norm(end - start)
        normal = np.cross(d, plane)
        length = np.linalg.norm(end - start)
        names = _child_labels(label, gen)
        for k, (name, sign) in enumerate(zip(names, (-1.0, 1.0))):
            theta = rng.uniform(lo, hi)
            phi = 0.0 if gen == 0 else rng.uniform(-az, az)
            side = math.cos(phi) * plane + math.sin(phi) * normal
            cd = math.cos(theta) * d + sign * math.sin(theta) * side
            cd /= np.linalg.norm(cd)
            clen = length * scenario.length_decay * rng.uniform(0.9, 1.1)
            # next bifurcation plane: roughly perpendicular to this one
            nxt = normal - np.dot(normal, cd) * cd
            nxt = _rotate_about(nxt / np.linalg.norm(nxt), cd, rng.uniform(-twist, twist))
            stack.append((name, end.copy(), end + clen * cd, label, nxt, gen + 1))
    return load_and_normalize({"branches": raw, "designations": {"trachea": "trachea", "lmb": "LMB", "rmb": "RMB"}})


# --------------------------------------------------------------------------
# image layout and camera path
# --------------------------------------------------------------------------


@dataclass
class Layout:
    pos: dict  # label -> (2,) layout coordinates, raster orientation
    size: dict  # label -> layout size
    aspect: dict  # label -> w/h
    embedding: dict  # label -> unit vector
    gt_id: dict  # label -> int
    visible_children: dict  # label -> children with non-zero visibility


def build_layout(graph: AirwayGraph, scenario: SimScenario) -> Layout:
    rng = _rng(scenario.seed, 2)
    pos = {graph.root: np.zeros(2)}
    size = {graph.root: 1.0}
    vis = {}
    for lb in graph.labels:  # breadth-first order
        weights = dict(child_visibility_weights(graph, lb))
        proj = project_children(graph, lb).by_label()
        vis[lb] = tuple(c for c in graph.children(lb) if weights[c] > 0)
        for c in graph.children(lb):
            pos[c] = pos[lb] + scenario.child_offset * size[lb] * to_image(proj[c].dir)
            size[c] = scenario.size_decay * size[lb]
    aspect = {lb: float(rng.uniform(0.92, 1.08)) for lb in graph.labels}
    emb = {}
    for lb in graph.labels:
        v = rng.normal(size=scenario.embedding_dim)
        emb[lb] = v / np.linalg.norm(v)
    gt_id = {lb: i + 1 for i, lb in enumerate(graph.labels)}
    return Layout(pos, size, aspect, emb, gt_id, vis)


def validate_path(graph: AirwayGraph, path) -> list:
    path = list(path)
    if not path or path[0] != graph.root:
        raise DisconnectedPath(f"path must start at {graph.root!r}")
    for a, b in zip(path, path[1:]):
        if a not in graph or b not in graph:
            raise DisconnectedPath(f"unknown branch in path: {a!r} -> {b!r}")
        if graph.parent(b) != a and graph.parent(a) != b:
            raise DisconnectedPath(f"{a!r} and {b!r} are not adjacent")
    return path


def _segments(graph: AirwayGraph, path, scenario: SimScenario) -> list:
    """Straight moves ``(branch, s_from, s_to, heading)`` along the walk."""
    segs = []
    cur, s = path[0], 0.0
    forward = True  # entered ``cur`` going deeper

    def move(b, s0, s1, head):
        if s1 != s0:
            segs.append((b, s0, s1, head))

    for nxt in path[1:]:
        if graph.parent(nxt) == cur:
            move(cur, s, 1.0, nxt)
            cur, s, forward = nxt, 0.0, True
        else:
            if forward and s < scenario.reverse_s:
                move(cur, s, scenario.reverse_s, None)
                s = scenario.reverse_s
            move(cur, s, 0.0, None)
            move(nxt, 1.0, scenario.turn_s, cur)
            cur, s, forward = nxt, scenario.turn_s, False
    if forward:
        move(cur, s, scenario.end_s, None)
    return segs


def camera_track(graph: AirwayGraph, path, scenario: SimScenario) -> list:
    """Per-frame ``(branch, s, heading)`` at constant speed along ``path``."""
    path = validate_path(graph, path)
    segs = _segments(graph, path, scenario)
    lengths = [abs(s1 - s0) * graph[b].length for b, s0, s1, _ in segs]
    total = float(sum(lengths))
    n = int(math.floor(total / scenario.speed)) + 1
    out = []
    k = 0
    acc = 0.0
    for f in range(n):
        dist = f * scenario.speed
        while k < len(segs) - 1 and dist > acc + lengths[k]:
            acc += lengths[k]
            k += 1
        b, s0, s1, head = segs[k]
        t = 0.0 if lengths[k] == 0 else min(1.0, (dist - acc) / lengths[k])
        out.append((b, s0 + t * (s1 - s0), head))
    return out


def roll_at(scenario: SimScenario, frame: int) -> float:
    """Piecewise-linear roll (radians) through the keyframes, constant outside."""
    kf = sorted((int(f), float(r)) for f, r in scenario.roll_keyframes)
    frames = [f for f, _ in kf]
    degs = [r for _, r in kf]
    return math.radians(float(np.interp(frame, frames, degs)))


def roll_steps(values_deg, hold: int, ramp: int) -> list:
    """Keyframes for plateaus at ``values_deg`` joined by linear ramps."""
    kf = []
    t = 0
    for i, v in enumerate(values_deg):
        if i > 0:
            t += ramp
        kf.append([t, float(v)])
        t += hold
        kf.append([t, float(v)])
    return kf


def _smoothstep(x: float) -> float:
    x = min(1.0, max(0.0, x))
    return x * x * (3 - 2 * x)


def visible_lumens(graph: AirwayGraph, layout: Layout, scenario: SimScenario, branch: str, s: float, heading, roll: float) -> list:
    """Noise-free ``[(label, BoundingBox)]`` seen from ``(branch, s)``."""
    kids = layout.visible_children[branch]
    if not kids:
        labels = [branch]
    elif s < APPROACH_END and branch != graph.root:
        labels = [branch, *kids]
    else:
        labels = list(kids)
        if s >= GRANDCHILD_START:
            for c in kids:
                labels.extend(layout.visible_children[c])
    focus = layout.pos[branch]
    if heading is not None:
        w = _smoothstep((s - FOCUS_START) / (1.0 - FOCUS_START))
        focus = focus + w * (layout.pos[heading] - focus)
    zoom = scenario.base_px * scenario.size_decay ** (-(graph.generation(branch) + s))
    c = scenario.image_size / 2.0
    out = []
    for lb in labels:
        xy = c + zoom * rotate2d(layout.pos[lb] - focus, roll)
        if not (0.0 <= xy[0] <= scenario.image_size and 0.0 <= xy[1] <= scenario.image_size):
            continue
        sz = zoom * layout.size[lb]
        if sz < scenario.min_box_px:
            continue
        a = layout.aspect[lb]
        out.append((lb, BoundingBox(float(xy[0]), float(xy[1]), float(sz * a), float(sz / a))))
    return out


def render_frames(scenario: SimScenario, graph: AirwayGraph, path):
    """Yield ``(FramePacket, GroundTruthFrame)`` for each frame of the walk.

    Raises:
        DisconnectedPath: ``path`` is not a walk from the trachea.
    """
    track = camera_track(graph, path, scenario)
    layout = build_layout(graph, scenario)
    rng = _rng(scenario.seed, 3)
    nz = scenario.noise
    noiseless = nz.noiseless
    size = scenario.image_size
    for f, (branch, s, heading) in enumerate(track):
        roll = roll_at(scenario, f)
        truth = visible_lumens(graph, layout, scenario, branch, s, heading, roll)
        dets = []
        for lb, box in truth:
            if nz.fn_rate and rng.random() < nz.fn_rate:
                continue
            cx, cy, w, h = box.x_c, box.y_c, box.w, box.h
            if nz.center_jitter:
                cx += rng.normal(0.0, nz.center_jitter)
                cy += rng.normal(0.0, nz.center_jitter)
            if nz.size_jitter:
                w *= max(0.2, 1.0 + rng.normal(0.0, nz.size_jitter))
                h *= max(0.2, 1.0 + rng.normal(0.0, nz.size_jitter))
            if noiseless:
                score = 0.9
            elif nz.low_score_prob and rng.random() < nz.low_score_prob:
                score = float(rng.uniform(0.1, 0.5))
            else:
                score = float(rng.uniform(0.6, 1.0))
            emb = layout.embedding[lb]
            if nz.embedding_noise:
                emb = emb + rng.normal(0.0, nz.embedding_noise, size=emb.shape)
                emb = emb / np.linalg.norm(emb)
            dets.append(Detection(BoundingBox(float(cx), float(cy), float(w), float(h)), score, emb.copy()))
        if nz.fp_rate:
            for _ in range(int(rng.poisson(nz.fp_rate))):
                sz = rng.uniform(*nz.clutter_size)
                e = rng.normal(size=scenario.embedding_dim)
                dets.append(
                    Detection(
                        BoundingBox(float(rng.uniform(0, size)), float(rng.uniform(0, size)), float(sz), float(sz)),
                        float(rng.uniform(0.1, 0.5)),
                        e / np.linalg.norm(e),
                    )
                )
        if len(dets) > 1 and not noiseless:
            dets = [dets[i] for i in rng.permutation(len(dets))]
        handle = {
            "frame": f,
            "size": [size, size],
            "visible": [[lb, b.x_c, b.y_c, b.w, b.h] for lb, b in truth],
        }
        gt = GroundTruthFrame(f, branch, roll, [(lb, b, layout.gt_id[lb]) for lb, b in truth], s)
        yield FramePacket(f, dets, handle), gt


def tour(graph: AirwayGraph, targets) -> list:
    """Walk from the trachea through each target branch in turn, backing up
    to the common ancestor between targets."""
    path = [graph.root]
    for t in targets:
        here = path[-1]
        up = graph.ancestors(here)
        down = graph.ancestors(t)
        common = next(a for a in up if a in down)
        for a in up[1:]:
            path.append(a)
            if a == common:
                break
        if here == common and path[-1] != common:
            path.append(common)
        chain = list(reversed(down[: down.index(common)]))
        path.extend(chain)
    return path


# --------------------------------------------------------------------------
# simulated feature matcher
# --------------------------------------------------------------------------


class SimFeatureMatcher:
    """Keypoint correspondences backed by simulator ground truth.

    Uses the ``handle`` of each frame (visible branches with their true
    boxes). The pair count is ``floor(base * jaccard) + noise`` where
    ``jaccard`` is the overlap of the two visible branch sets; points are
    spread over the shared branches in box-relative coordinates, avoiding
    openings nested inside each box.
    """

    def __init__(self, seed: int = 0, base: int = 200, noise: int = 3, max_tries: int = 50):
        self.seed = int(seed)
        self.base = base
        self.noise = noise
        self.max_tries = max_tries

    def match(self, a: FrameRef, b: FrameRef) -> MatchReport:
        ha, hb = a.handle, b.handle
        if not ha or not hb:
            return MatchReport()
        va = {r[0]: np.asarray(r[1:5], dtype=np.float64) for r in ha["visible"]}
        vb = {r[0]: np.asarray(r[1:5], dtype=np.float64) for r in hb["visible"]}
        shared = sorted(set(va) & set(vb))
        if not shared:
            return MatchReport()
        jac = len(shared) / len(set(va) | set(vb))
        rng = _rng(self.seed, 1_000_003 * (int(ha["frame"]) + 1) + int(hb["frame"]))
        count = int(math.floor(self.base * jac)) + int(rng.integers(-self.noise, self.noise + 1))
        count = max(0, count)
        size_a = ha.get("size", [math.inf, math.inf])
        size_b = hb.get("size", [math.inf, math.inf])
        pairs = []
        for k in range(count):
            lb = shared[k % len(shared)]
            for _ in range(self.max_tries):
                u = rng.uniform(-0.5, 0.5, size=2)
                pa = va[lb][:2] + u * va[lb][2:]
                pb = vb[lb][:2] + u * vb[lb][2:]
                if _owner(va, pa, size_a) == lb and _owner(vb, pb, size_b) == lb:
                    pairs.append((tuple(pa), tuple(pb)))
                    break
        return MatchReport.from_pairs(pairs)


def _owner(boxes: dict, p, size):
    if not (0.0 <= p[0] <= size[0] and 0.0 <= p[1] <= size[1]):
        return None
    best, area = None, math.inf
    for lb, b in boxes.items():
        if abs(p[0] - b[0]) <= b[2] / 2 and abs(p[1] - b[1]) <= b[3] / 2 and b[2] * b[3] < area:
            best, area = lb, b[2] * b[3]
    return best
