"""Engine configuration: defaults, validation and the YAML file format.

The file has one mapping per section. Unknown sections or keys are errors,
so a typo never silently falls back to a default.
"""
from dataclasses import dataclass, field, fields, replace

import yaml

from .errors import ConfigError
from .kalman import KalmanNoise
from .tracker import TrackerConfig

PUBLISHED = "published setting"
TUNED = "tuned default"


@dataclass
class AssociationConfig:
    containment: float = 0.7
    dup_iou: float = 0.85
    max_bend_deg: float = 70.0
    probe_mm: float = 10.0
    label_gate: float = 1.0
    roll_hint_deg: float = 0.0
    roll_min_separation_px: float = 48.0
    label_hold_frames: int = 5


@dataclass
class LoopClosureConfig:
    enabled: bool = True
    min_pairs: int = 100
    recent: int = 1
    min_points: int = 10
    provider: str = "simulated"  # simulated | external | none
    external_command: list = field(default_factory=list)
    sim_base: int = 200
    sim_seed: int = 0


@dataclass
class MetricsConfig:
    iou_threshold: float = 0.5
    hota_alphas: list = field(default_factory=lambda: [round(0.05 * k, 2) for k in range(1, 20)])


@dataclass
class EngineConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    kalman: KalmanNoise = field(default_factory=KalmanNoise)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    loop_closure: LoopClosureConfig = field(default_factory=LoopClosureConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    embedding_dim: int = 32

    def __post_init__(self):
        if self.tracker.noise != self.kalman:
            self.tracker = replace(self.tracker, noise=self.kalman)
        validate(self)


_PROVENANCE = {
    ("tracker", "det_threshold"): PUBLISHED,
    ("tracker", "match_gate"): PUBLISHED,
    ("tracker", "low_gate"): PUBLISHED,
    ("tracker", "low_gate_no_match"): PUBLISHED,
    ("tracker", "reid_weight"): PUBLISHED,
    ("tracker", "ema_momentum"): PUBLISHED,
    ("association", "containment"): PUBLISHED,
    ("loop_closure", "min_pairs"): PUBLISHED,
    ("loop_closure", "recent"): PUBLISHED,
}

_HELP = {
    ("tracker", "det_threshold"): "detections below this score are dropped",
    ("tracker", "high_threshold"): "score splitting high- and low-confidence detections",
    ("tracker", "match_gate"): "first-stage cost gate (fused appearance+motion)",
    ("tracker", "low_gate"): "second-stage gate when the first stage matched something",
    ("tracker", "low_gate_no_match"): "second-stage gate when the first stage matched nothing",
    ("tracker", "reid_weight"): "appearance weight in the fused cost; 0 disables re-identification",
    ("tracker", "ema_momentum"): "embedding moving-average momentum",
    ("tracker", "max_age"): "frames a lost tracklet survives",
    ("tracker", "max_generation_gap"): "tracklets labelled farther than this from the last location sit out",
    ("tracker", "use_kalman"): "false: predict with the last box",
    ("association", "containment"): "containment for a parent-child edge between boxes",
    ("association", "dup_iou"): "child boxes overlapping their parent this much are duplicates",
    ("association", "max_bend_deg"): "children bending more than this are invisible",
    ("association", "probe_mm"): "distance along a child used for its projected direction",
    ("association", "label_gate"): "direction-matching gate on 1 - cos",
    ("association", "roll_min_separation_px"): "closer tracklet pairs are avoided for roll estimation",
    ("association", "label_hold_frames"): "labels of tracklets missed this recently are not handed to other openings",
    ("association", "roll_hint_deg"): "expected roll at the carina; picks between the two hypotheses",
    ("loop_closure", "min_pairs"): "keypoint pairs needed to declare a loop",
    ("loop_closure", "recent"): "most recently updated gallery records searched",
    ("loop_closure", "min_points"): "points needed to inherit an identity",
    ("loop_closure", "provider"): "simulated | external | none",
    ("loop_closure", "external_command"): "argv of an external matcher process",
    ("metrics", "iou_threshold"): "CLEAR and identity matching threshold",
    ("metrics", "hota_alphas"): "HOTA localization thresholds",
}

_SECTIONS = {
    "tracker": TrackerConfig,
    "kalman": KalmanNoise,
    "association": AssociationConfig,
    "loop_closure": LoopClosureConfig,
    "metrics": MetricsConfig,
}


def _unit(name, v, lo=0.0, hi=1.0):
    if not lo <= v <= hi:
        raise ConfigError(f"{name} must be in [{lo}, {hi}], got {v}")


def validate(cfg: EngineConfig):
    t = cfg.tracker
    for k in ("det_threshold", "high_threshold", "reid_weight", "ema_momentum"):
        _unit(f"tracker.{k}", getattr(t, k))
    for k in ("match_gate", "low_gate", "low_gate_no_match"):
        _unit(f"tracker.{k}", getattr(t, k), 0.0, 2.0)
    if t.det_threshold > t.high_threshold:
        raise ConfigError("tracker.det_threshold must not exceed tracker.high_threshold")
    if t.max_age < 0 or t.max_generation_gap < 0:
        raise ConfigError("tracker.max_age and max_generation_gap must be >= 0")
    a = cfg.association
    _unit("association.containment", a.containment)
    _unit("association.dup_iou", a.dup_iou)
    _unit("association.max_bend_deg", a.max_bend_deg, 0.0, 90.0)
    _unit("association.label_gate", a.label_gate, 0.0, 2.0)
    if a.label_hold_frames < 0 or a.roll_min_separation_px < 0:
        raise ConfigError("association.label_hold_frames and roll_min_separation_px must be >= 0")
    if a.probe_mm <= 0:
        raise ConfigError("association.probe_mm must be positive")
    lc = cfg.loop_closure
    if lc.provider not in ("simulated", "external", "none"):
        raise ConfigError(f"loop_closure.provider must be simulated, external or none, got {lc.provider!r}")
    if lc.provider == "external" and not lc.external_command:
        raise ConfigError("loop_closure.external_command is required for the external provider")
    if lc.min_pairs < 0 or lc.recent < 1 or lc.min_points < 1:
        raise ConfigError("loop_closure: min_pairs >= 0, recent >= 1, min_points >= 1")
    m = cfg.metrics
    _unit("metrics.iou_threshold", m.iou_threshold)
    if not m.hota_alphas:
        raise ConfigError("metrics.hota_alphas must not be empty")
    for x in m.hota_alphas:
        _unit("metrics.hota_alphas", x)
    if cfg.embedding_dim < 1:
        raise ConfigError("embedding_dim must be positive")


def config_from_dict(d: dict) -> EngineConfig:
    d = dict(d or {})
    extra = set(d) - set(_SECTIONS) - {"embedding_dim"}
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    parts = {}
    for name, cls in _SECTIONS.items():
        sec = d.get(name) or {}
        if not isinstance(sec, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        known = {f.name for f in fields(cls)} - {"noise"}
        bad = set(sec) - known
        if bad:
            raise ConfigError(f"unknown keys in {name}: {sorted(bad)}")
        try:
            parts[name] = cls(**sec)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    kalman = parts.pop("kalman")
    parts["tracker"] = replace(parts["tracker"], noise=kalman)
    return EngineConfig(kalman=kalman, embedding_dim=int(d.get("embedding_dim", 32)), **parts)


def load_config(path) -> EngineConfig:
    if path is None:
        return EngineConfig()
    with open(path, encoding="utf-8") as fh:
        try:
            d = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if d is not None and not isinstance(d, dict):
        raise ConfigError("config file must hold a mapping")
    return config_from_dict(d)


def dump_config(cfg: EngineConfig | None = None) -> str:
    """YAML text with every key spelled out and annotated."""
    cfg = cfg or EngineConfig()
    lines = ["# lumentrack engine configuration", ""]
    for name in _SECTIONS:
        sec = getattr(cfg, name)
        lines.append(f"{name}:")
        for f in fields(sec):
            if f.name == "noise":
                continue
            val = getattr(sec, f.name)
            text = yaml.safe_dump(val, default_flow_style=True).strip()
            if text.endswith("\n...") or text.endswith("..."):
                text = text.split("\n")[0]
            note = _PROVENANCE.get((name, f.name), TUNED)
            extra = _HELP.get((name, f.name))
            comment = f"{note}; {extra}" if extra else note
            lines.append(f"  {f.name}: {text}  # {comment}")
        lines.append("")
    lines.append(f"embedding_dim: {cfg.embedding_dim}  # {TUNED}")
    return "\n".join(lines) + "\n"
