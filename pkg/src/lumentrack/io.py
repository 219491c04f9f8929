"""JSON-lines stream formats and atomic file output.

Every record carries ``"v": 1``. Readers accept any minor revision of a
known major version and reject the rest. Floats go through ``json`` which
writes the shortest repr that round-trips, so reading back is exact.
"""
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .airway import AirwayGraph, load_and_normalize
from .errors import MalformedTree, SchemaVersionError
from .geometry import BoundingBox
from .tracker import Detection

SCHEMA_VERSION = 1


@dataclass
class FramePacket:
    frame: int
    detections: list = field(default_factory=list)
    handle: object = None


def check_version(rec: dict) -> dict:
    v = rec.get("v")
    try:
        major = int(str(v).split(".")[0])
    except ValueError:
        raise SchemaVersionError(f"bad schema version {v!r}") from None
    if major != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported schema version {v!r} (expected {SCHEMA_VERSION})")
    return rec


def _f(x) -> float:
    return float(x)


def dumps(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"), allow_nan=False)


# -- atomic output ----------------------------------------------------------


def atomic_write_text(path, text: str):
    """Write ``text`` to ``path`` via a temp file and rename; no partial files."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path, records):
    atomic_write_text(path, "".join(dumps(r) + "\n" for r in records))


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{n}: {exc}") from None
            yield check_version(rec)


# -- detections -------------------------------------------------------------


def packet_to_record(p: FramePacket) -> dict:
    dets = []
    for d in p.detections:
        r = {"cx": _f(d.box.x_c), "cy": _f(d.box.y_c), "w": _f(d.box.w), "h": _f(d.box.h), "score": _f(d.score)}
        if d.embedding is not None:
            r["emb"] = [_f(v) for v in d.embedding]
        dets.append(r)
    rec = {"v": SCHEMA_VERSION, "frame": int(p.frame), "dets": dets}
    if p.handle is not None:
        rec["handle"] = p.handle
    return rec


def packet_from_record(rec: dict) -> FramePacket:
    dets = []
    for r in rec["dets"]:
        emb = r.get("emb")
        dets.append(
            Detection(
                BoundingBox(float(r["cx"]), float(r["cy"]), float(r["w"]), float(r["h"])),
                float(r["score"]),
                None if emb is None else np.asarray(emb, dtype=np.float64),
            )
        )
    return FramePacket(int(rec["frame"]), dets, rec.get("handle"))


def read_packets(path):
    last = None
    for rec in read_jsonl(path):
        p = packet_from_record(rec)
        if last is not None and p.frame <= last:
            raise ValueError(f"frame indices must increase: {p.frame} after {last}")
        last = p.frame
        yield p


# -- truth ------------------------------------------------------------------


def truth_to_record(gt) -> dict:
    return {
        "v": SCHEMA_VERSION,
        "frame": int(gt.frame),
        "branch": gt.branch,
        "roll": _f(gt.roll),
        "gts": [
            {"id": int(i), "label": lb, "cx": _f(b.x_c), "cy": _f(b.y_c), "w": _f(b.w), "h": _f(b.h)}
            for lb, b, i in gt.lumens
        ],
    }


# -- tracks and localization -----------------------------------------------


def tracks_record(frame: int, tracks) -> dict:
    """``tracks``: iterable of ``(id, BoundingBox, label or None)``."""
    out = []
    for tid, b, lb in tracks:
        r = {"id": int(tid), "cx": _f(b.x_c), "cy": _f(b.y_c), "w": _f(b.w), "h": _f(b.h)}
        if lb is not None:
            r["label"] = lb
        out.append(r)
    return {"v": SCHEMA_VERSION, "frame": int(frame), "tracks": out}


def localization_record(frame: int, branch, votes: dict) -> dict:
    return {
        "v": SCHEMA_VERSION,
        "frame": int(frame),
        "branch": branch,
        "votes": {k: int(votes[k]) for k in sorted(votes)},
    }


# -- airway graph -----------------------------------------------------------


def graph_to_json(g: AirwayGraph) -> dict:
    d = g.to_dict()
    return {"v": SCHEMA_VERSION, **d}


def graph_from_json(obj: dict) -> AirwayGraph:
    if not isinstance(obj, dict):
        raise MalformedTree("graph document must be an object")
    check_version(obj)
    return load_and_normalize(obj)


def write_graph(path, g: AirwayGraph):
    atomic_write_text(path, json.dumps(graph_to_json(g), indent=1) + "\n")


def read_graph(path) -> AirwayGraph:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedTree(f"{path}: {exc}") from None
    return graph_from_json(obj)
