"""Labelled airway centerline tree in the standard frame.

Standard frame: origin at the carina (distal end of the trachea), +y along
the trachea, +x in the plane through the origin and the distal ends of the
two main bronchi (pointing from the left toward the right main bronchus),
``z = x cross y``.

Tangent-plane projections (:func:`project_children`) are expressed in a
right-handed 2D basis whose second axis points "up". Image rasters have y
pointing down, so the image-plane direction of a projected vector ``(a, b)``
is ``(a, -b)``; see :func:`to_image`.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AboveRoot, MalformedTree, UnknownLabel
from .geometry import rotate2d

DEFAULT_MAX_BEND_DEG = 70.0
DEFAULT_PROBE_MM = 10.0
COLLINEAR_TOL = 1e-6


@dataclass(frozen=True)
class Branch:
    label: str
    start: tuple
    end: tuple
    parent: str | None
    children: tuple
    generation: int

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.end, dtype=np.float64) - np.asarray(self.start, dtype=np.float64)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.vector))

    @property
    def direction(self) -> np.ndarray:
        v = self.vector
        return v / np.linalg.norm(v)


@dataclass(frozen=True)
class ProjectedEntry:
    label: str
    dir: np.ndarray
    weight: float
    degenerate: bool = False


@dataclass(frozen=True)
class Projected2DGraph:
    parent_label: str
    entries: tuple

    @property
    def degenerate(self) -> bool:
        return any(e.degenerate for e in self.entries)

    def by_label(self) -> dict:
        return {e.label: e for e in self.entries}


@dataclass
class AirwayGraph:
    """Immutable after construction; build through :func:`load_and_normalize`."""

    branches: dict
    root: str
    lmb: str
    rmb: str
    _proj_cache: dict = field(default_factory=dict, repr=False, compare=False)
    _ancestors: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for label in self.branches:
            chain = [label]
            b = self.branches[label]
            while b.parent is not None:
                chain.append(b.parent)
                b = self.branches[b.parent]
            self._ancestors[label] = tuple(chain)

    def __contains__(self, label) -> bool:
        return label in self.branches

    def __len__(self) -> int:
        return len(self.branches)

    def __getitem__(self, label) -> Branch:
        try:
            return self.branches[label]
        except KeyError:
            raise UnknownLabel(f"unknown branch label {label!r}") from None

    @property
    def labels(self) -> list:
        return list(self.branches)

    def parent(self, label):
        return self[label].parent

    def children(self, label) -> tuple:
        return self[label].children

    def generation(self, label) -> int:
        return self[label].generation

    def ancestors(self, label) -> tuple:
        """``(label, parent, grandparent, ..., root)``."""
        try:
            return self._ancestors[label]
        except KeyError:
            raise UnknownLabel(f"unknown branch label {label!r}") from None

    def leaves(self) -> list:
        return [lb for lb, b in self.branches.items() if not b.children]

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "branches": [
                {
                    "label": b.label,
                    "start": [float(v) for v in b.start],
                    "end": [float(v) for v in b.end],
                    "parent": b.parent,
                }
                for b in self.branches.values()
            ],
            "designations": {"trachea": self.root, "lmb": self.lmb, "rmb": self.rmb},
        }


def _validate(raw) -> tuple:
    try:
        entries = list(raw["branches"])
        designations = raw["designations"]
        trachea = designations["trachea"]
        lmb = designations["lmb"]
        rmb = designations["rmb"]
    except (KeyError, TypeError) as exc:
        raise MalformedTree(f"missing field: {exc}") from None

    nodes = {}
    for e in entries:
        try:
            label = str(e["label"])
            start = tuple(float(v) for v in e["start"])
            end = tuple(float(v) for v in e["end"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedTree(f"bad branch record {e!r}: {exc}") from None
        if label in nodes:
            raise MalformedTree(f"duplicate label {label!r}")
        if len(start) != 3 or len(end) != 3:
            raise MalformedTree(f"branch {label!r}: points must be 3D")
        if not all(math.isfinite(v) for v in start + end):
            raise MalformedTree(f"branch {label!r}: non-finite coordinates")
        if np.linalg.norm(np.subtract(end, start)) <= 0:
            raise MalformedTree(f"branch {label!r} has zero length")
        parent = e.get("parent")
        nodes[label] = (start, end, None if parent is None else str(parent))

    roots = [lb for lb, (_, _, p) in nodes.items() if p is None]
    if len(roots) != 1:
        raise MalformedTree(f"expected exactly one root, found {len(roots)}: {roots}")
    if roots[0] != trachea:
        raise MalformedTree(f"root {roots[0]!r} is not the designated trachea {trachea!r}")
    for label, (_, _, p) in nodes.items():
        if p is not None and p not in nodes:
            raise MalformedTree(f"branch {label!r} references unknown parent {p!r}")
    for name, lb in (("lmb", lmb), ("rmb", rmb)):
        if lb not in nodes:
            raise MalformedTree(f"designated {name} {lb!r} missing")
        if nodes[lb][2] != trachea:
            raise MalformedTree(f"designated {name} {lb!r} is not a child of the trachea")
    if lmb == rmb:
        raise MalformedTree("left and right main bronchus must differ")

    children = {lb: [] for lb in nodes}
    for label, (_, _, p) in nodes.items():
        if p is not None:
            children[p].append(label)

    # breadth-first from the root; anything unreached sits on a cycle
    generation = {trachea: 0}
    order = [trachea]
    for lb in order:
        for c in children[lb]:
            if c in generation:
                raise MalformedTree(f"cycle through {c!r}")
            generation[c] = generation[lb] + 1
            order.append(c)
    if len(order) != len(nodes):
        missing = sorted(set(nodes) - set(order))
        raise MalformedTree(f"cycle or unreachable branches: {missing}")
    return nodes, children, generation, order, trachea, lmb, rmb


def standard_frame(trachea_start, trachea_end, lmb_end, rmb_end):
    """Return ``(origin, R)`` with ``p_std = R @ (p - origin)``."""
    origin = np.asarray(trachea_end, dtype=np.float64)
    y = origin - np.asarray(trachea_start, dtype=np.float64)
    y = y / np.linalg.norm(y)
    el = np.asarray(lmb_end, dtype=np.float64) - origin
    er = np.asarray(rmb_end, dtype=np.float64) - origin
    lr = er - el
    x = np.cross(y, np.cross(el, er))
    if np.linalg.norm(x) < 1e-9 * max(1.0, np.linalg.norm(el) * np.linalg.norm(er)):
        x = lr - np.dot(lr, y) * y
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise MalformedTree("main bronchi ends do not define a lateral axis")
    x = x / nx
    if np.dot(x, lr) < 0:
        x = -x
    z = np.cross(x, y)
    return origin, np.vstack([x, y, z])


def load_and_normalize(raw) -> AirwayGraph:
    """Validate a raw centerline tree and move it into the standard frame.

    Raises:
        MalformedTree: cycles, several roots, missing or misplaced main bronchi.
    """
    nodes, children, generation, order, trachea, lmb, rmb = _validate(raw)
    origin, R = standard_frame(nodes[trachea][0], nodes[trachea][1], nodes[lmb][1], nodes[rmb][1])
    # already normalized input passes through untouched so that reloading is exact
    identity = np.abs(R - np.eye(3)).max() < 1e-12 and np.abs(origin).max() < 1e-12

    def tf(p):
        if identity:
            return tuple(float(v) for v in p)
        q = R @ (np.asarray(p) - origin)
        return tuple(float(v) for v in q)

    branches = {}
    for lb in order:
        start, end, parent = nodes[lb]
        branches[lb] = Branch(lb, tf(start), tf(end), parent, tuple(children[lb]), generation[lb])
    return AirwayGraph(branches, trachea, lmb, rmb)


def ancestor(g: AirwayGraph, label: str, k: int) -> str:
    """The ``k``-th branch above ``label`` (``k = 0`` is the branch itself)."""
    chain = g.ancestors(label)
    if k < 0:
        raise ValueError("k must be non-negative")
    if k >= len(chain):
        raise AboveRoot(f"{label!r} has generation {len(chain) - 1}, cannot go up {k}")
    return chain[k]


def generation_distance(g: AirwayGraph, a: str, b: str) -> int:
    """Hop count between two branches through their lowest common ancestor."""
    ca = g.ancestors(a)
    cb = g.ancestors(b)
    # chains end at the root; align from the top
    i, j = len(ca) - 1, len(cb) - 1
    while i >= 0 and j >= 0 and ca[i] == cb[j]:
        i -= 1
        j -= 1
    return (i + 1) + (j + 1)


def child_visibility_weights(g: AirwayGraph, label: str, max_bend_deg: float = DEFAULT_MAX_BEND_DEG):
    """``[(child, weight)]`` with ``weight = max(0, cos angle)``, zero past the cutoff."""
    d = g[label].direction
    out = []
    for c in g[label].children:
        cos = float(np.clip(np.dot(d, g[c].direction), -1.0, 1.0))
        theta = math.degrees(math.acos(cos))
        out.append((c, 0.0 if theta > max_bend_deg else max(0.0, cos)))
    return out


def tangent_basis(d) -> tuple:
    """Right-handed basis ``(e1, e2)`` of the plane orthogonal to ``d``."""
    d = np.asarray(d, dtype=np.float64)
    ref = np.array([1.0, 0.0, 0.0])
    e1 = ref - np.dot(ref, d) * d
    if np.linalg.norm(e1) < 1e-6:
        ref = np.array([0.0, 0.0, 1.0])
        e1 = ref - np.dot(ref, d) * d
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return e1, e2


def _base_projection(g, label, max_bend_deg, probe_mm):
    key = (label, max_bend_deg, probe_mm)
    hit = g._proj_cache.get(key)
    if hit is not None:
        return hit
    b = g[label]
    d = b.direction
    e1, e2 = tangent_basis(d)
    anchor = np.asarray(b.end, dtype=np.float64)
    weights = dict(child_visibility_weights(g, label, max_bend_deg))
    entries = []
    for c in b.children:
        cb = g[c]
        tip = np.asarray(cb.start) + min(probe_mm, cb.length) * cb.direction
        v = tip - anchor
        v = v - np.dot(v, d) * d
        q = np.array([np.dot(v, e1), np.dot(v, e2)])
        n = float(np.linalg.norm(q))
        if n < COLLINEAR_TOL * max(1.0, probe_mm):
            entries.append((c, np.array([1.0, 0.0]), weights[c], True))
        else:
            entries.append((c, q / n, weights[c], False))
    g._proj_cache[key] = entries
    return entries


def project_children(
    g: AirwayGraph,
    label: str,
    roll: float = 0.0,
    probe_mm: float = DEFAULT_PROBE_MM,
    max_bend_deg: float = DEFAULT_MAX_BEND_DEG,
) -> Projected2DGraph:
    """Children of ``label`` projected on its distal tangent plane, rotated by ``-roll``.

    Collinear children cannot be projected; they are emitted with the fixed
    direction ``(1, 0)`` and ``degenerate=True``.
    """
    base = _base_projection(g, label, max_bend_deg, probe_mm)
    entries = tuple(
        ProjectedEntry(c, rotate2d(q, -roll) if roll else q.copy(), w, deg) for c, q, w, deg in base
    )
    return Projected2DGraph(label, entries)


def to_image(v) -> np.ndarray:
    """Tangent-plane coordinates (second axis up) to raster direction (y down)."""
    return np.array([v[0], -v[1]])
