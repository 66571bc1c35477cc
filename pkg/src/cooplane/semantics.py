"""Ontology, numeric-to-linguistic categorisation, triples and frame keys."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import InputError, VocabularyError

SUBJECT = "vehicle"
INTENTION_RELATION = "INTENTION_IS"
MANEUVERS = ("laneKeep", "leftLaneChange", "rightLaneChange")
KEY_SEP = "|"

RISK = ("highRisk", "mediumRisk", "lowRisk")
SIDES = ("left", "current", "right")


@dataclass(frozen=True)
class FeatureDef:
    name: str
    relation: str
    categories: tuple

    def __post_init__(self):
        if len(self.categories) < 2:
            raise InputError(f"feature {self.name} needs at least two categories")
        if len(set(self.categories)) != len(self.categories):
            raise InputError(f"duplicate categories in {self.name}")
        for c in self.categories:
            if KEY_SEP in c or "," in c:
                raise InputError(f"category label {c!r} contains a reserved character")


@dataclass(frozen=True)
class Ontology:
    features: tuple
    lane_count: int
    subject: str = SUBJECT
    intention_relation: str = INTENTION_RELATION
    maneuvers: tuple = MANEUVERS

    def __post_init__(self):
        if len(self.features) != 12:
            raise InputError(f"ontology must define 12 features, got {len(self.features)}")
        names = [f.name for f in self.features]
        rels = [f.relation for f in self.features] + [self.intention_relation]
        if len(set(names)) != len(names) or len(set(rels)) != len(rels):
            raise InputError("feature names and relation labels must be unique")

    @property
    def names(self) -> tuple:
        return tuple(f.name for f in self.features)

    @property
    def cardinalities(self) -> tuple:
        return tuple(len(f.categories) for f in self.features)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise VocabularyError(f"unknown feature {name!r}") from None

    def feature(self, name: str) -> FeatureDef:
        return self.features[self.index(name)]

    def to_dict(self) -> dict:
        return {
            "lane_count": self.lane_count,
            "subject": self.subject,
            "intention_relation": self.intention_relation,
            "maneuvers": list(self.maneuvers),
            "features": [{"name": f.name, "relation": f.relation, "categories": list(f.categories)}
                         for f in self.features],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ontology":
        feats = tuple(FeatureDef(f["name"], f["relation"], tuple(f["categories"])) for f in d["features"])
        return cls(features=feats, lane_count=d["lane_count"], subject=d.get("subject", SUBJECT),
                   intention_relation=d.get("intention_relation", INTENTION_RELATION),
                   maneuvers=tuple(d.get("maneuvers", MANEUVERS)))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def vocabulary(self) -> set:
        labels = {self.subject, *self.maneuvers}
        for f in self.features:
            labels.update(f.categories)
        return labels


def lane_labels(lane_count: int) -> tuple:
    """Lane-identifier categories ordered left to right."""
    if lane_count < 2:
        raise InputError("the lane feature needs at least two lanes")
    if lane_count == 2:
        return ("leftLane", "rightLane")
    if lane_count == 3:
        return ("leftLane", "middleLane", "rightLane")
    inner = tuple(f"lane{i}" for i in range(lane_count - 2, 0, -1))
    return ("leftLane",) + inner + ("rightLane",)


def make_ontology(lane_count: int = 3) -> Ontology:
    feats = (
        FeatureDef("lateral_velocity", "LATERAL_VELOCITY_IS",
                   ("movingLeft", "movingStraight", "movingRight")),
        FeatureDef("lateral_acceleration", "LATERAL_ACCELERATION_IS",
                   ("acceleratingLeft", "zeroLateralAcceleration", "acceleratingRight")),
        FeatureDef("ttc_preceding", "TTC_WITH_PRECEDING_VEHICLE_IS", RISK),
        FeatureDef("ttc_left_preceding", "TTC_WITH_LEFT_PRECEDING_VEHICLE_IS", RISK),
        FeatureDef("ttc_right_preceding", "TTC_WITH_RIGHT_PRECEDING_VEHICLE_IS", RISK),
        FeatureDef("ttc_left_following", "TTC_WITH_LEFT_FOLLOWING_VEHICLE_IS", RISK),
        FeatureDef("ttc_right_following", "TTC_WITH_RIGHT_FOLLOWING_VEHICLE_IS", RISK),
        FeatureDef("lane_id", "LANE_IS", lane_labels(lane_count)),
        FeatureDef("position_in_lane", "POSITION_IN_LANE_IS",
                   ("leftOfCenter", "laneCenter", "rightOfCenter")),
        FeatureDef("thw_preceding", "THW_WITH_PRECEDING_VEHICLE_IS",
                   ("shortHeadway", "mediumHeadway", "longHeadway")),
        FeatureDef("highest_frontal_gap_lane", "LANE_WITH_HIGHEST_FRONTAL_GAP_IS",
                   ("gapLeft", "gapCurrent", "gapRight")),
        FeatureDef("highest_attraction_lane", "LANE_WITH_HIGHEST_ATTRACTION_IS",
                   ("attractionLeft", "attractionCurrent", "attractionRight")),
    )
    return Ontology(features=feats, lane_count=lane_count)


@dataclass
class Thresholds:
    lat_vel_mu: float = 0.0
    lat_vel_sigma: float = 0.15
    lat_acc_mu: float = 0.0
    lat_acc_sigma: float = 0.15
    ttc_high: float = 2.0
    ttc_medium: float = 4.0
    thw_short: float = 1.0
    thw_medium: float = 2.0
    position_boundary: float = 0.15
    gap_cap: float = 100.0
    attraction_weight: float = 2.0
    free_flow_speed: float = 2.5

    def __post_init__(self):
        if not self.ttc_high < self.ttc_medium:
            raise InputError("ttc_high must be below ttc_medium")
        if not self.thw_short < self.thw_medium:
            raise InputError("thw_short must be below thw_medium")
        if self.lat_vel_sigma <= 0 or self.lat_acc_sigma <= 0:
            raise InputError("sigma must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Thresholds":
        return cls(**d)


@dataclass
class NumericFeatures:
    """Raw feature vector as produced by the perception side.

    TTC/THW of absent neighbours are ``inf``. ``frontal_gaps`` and
    ``lane_speeds`` map ``left``/``current``/``right`` to a value, or ``None``
    when the lane does not exist (gap) or is empty (speed). An existing lane
    with nothing ahead reports the sensing range as its gap.
    """

    lat_vel: float
    lat_acc: float
    ttc_preceding: float
    ttc_left_preceding: float
    ttc_right_preceding: float
    ttc_left_following: float
    ttc_right_following: float
    lane_index: int
    lane_count: int
    lane_offset: float
    lane_width: float
    thw: float
    frontal_gaps: dict = field(default_factory=dict)
    lane_speeds: dict = field(default_factory=dict)

    TTC_FIELDS = ("ttc_preceding", "ttc_left_preceding", "ttc_right_preceding",
                  "ttc_left_following", "ttc_right_following")

    def to_payload(self) -> dict:
        """JSON-safe dict: infinities become ``None``."""
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, float) and math.isinf(v):
                v = None
            out[k] = v
        return out

    @classmethod
    def from_payload(cls, d: dict) -> "NumericFeatures":
        kw = {}
        for name in cls.__dataclass_fields__:
            if name not in d:
                raise InputError(f"missing feature {name!r}")
            v = d[name]
            if name in cls.TTC_FIELDS or name == "thw":
                v = math.inf if v is None else float(v)
            elif name in ("frontal_gaps", "lane_speeds"):
                if not isinstance(v, dict):
                    raise InputError(f"{name} must be an object")
                v = {s: (None if v.get(s) is None else float(v[s])) for s in SIDES}
            elif name in ("lane_index", "lane_count"):
                if isinstance(v, bool) or not isinstance(v, int):
                    raise InputError(f"{name} must be an integer")
            else:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise InputError(f"{name} must be a number")
                v = float(v)
            kw[name] = v
        return cls(**kw)


class LinguisticFrame(tuple):
    """One category label per ontology feature, in ontology order."""

    __slots__ = ()

    def __new__(cls, values: Iterable[str], ontology: Optional[Ontology] = None):
        self = super().__new__(cls, values)
        if ontology is not None:
            validate_frame(self, ontology)
        return self

    def as_dict(self, ontology: Ontology) -> dict:
        return dict(zip(ontology.names, self))


def validate_frame(frame: Sequence[str], ontology: Ontology) -> None:
    if len(frame) != len(ontology.features):
        raise VocabularyError(f"frame has {len(frame)} values, ontology has {len(ontology.features)}")
    for value, feat in zip(frame, ontology.features):
        if value not in feat.categories:
            raise VocabularyError(f"{value!r} is not a category of {feat.name}")


def frame_from_dict(values: dict, ontology: Ontology) -> LinguisticFrame:
    try:
        return LinguisticFrame((values[n] for n in ontology.names), ontology)
    except KeyError as e:
        raise VocabularyError(f"missing feature {e.args[0]!r}") from None


@dataclass(frozen=True)
class Triple:
    subject: str
    relation: str
    object: str


def _check_number(name, v):
    if v is None:
        return
    if isinstance(v, float) and math.isnan(v):
        raise InputError(f"{name} is NaN")


def _three_way(v, mu, sigma, labels):
    if v >= mu + sigma:
        return labels[0]
    if v <= mu - sigma:
        return labels[2]
    return labels[1]


def _risk(ttc: float, th: Thresholds) -> str:
    if ttc < th.ttc_high:
        return "highRisk"
    if ttc < th.ttc_medium:
        return "mediumRisk"
    return "lowRisk"


def _side_argmax(values: dict, prefix: str) -> str:
    # ties resolve toward the current lane, then left, then right
    best, best_side = -math.inf, None
    for side in ("current", "left", "right"):
        v = values.get(side)
        if v is None:
            continue
        if v > best:
            best, best_side = v, side
    return prefix + (best_side or "current").capitalize()


def attraction_scores(nf: NumericFeatures, th: Thresholds) -> dict:
    """Per-side attraction: capped frontal gap plus weighted lane mean speed."""
    out = {}
    for side in SIDES:
        gap = nf.frontal_gaps.get(side)
        if gap is None:
            out[side] = None
            continue
        speed = nf.lane_speeds.get(side)
        speed = th.free_flow_speed if speed is None else speed
        out[side] = min(gap, th.gap_cap) + th.attraction_weight * speed
    return out


def categorize(nf: NumericFeatures, th: Thresholds, ontology: Ontology) -> LinguisticFrame:
    for name in ("lat_vel", "lat_acc", "lane_offset", "thw", *NumericFeatures.TTC_FIELDS):
        _check_number(name, getattr(nf, name))
    for d in (nf.frontal_gaps, nf.lane_speeds):
        for side, v in d.items():
            _check_number(side, v)
    if not 0 <= nf.lane_index < nf.lane_count:
        raise InputError(f"lane_index {nf.lane_index} outside [0, {nf.lane_count})")
    if nf.lane_count != ontology.lane_count:
        raise InputError(f"frame from a {nf.lane_count}-lane road, ontology has {ontology.lane_count}")

    lanes = ontology.feature("lane_id").categories
    frac = nf.lane_offset / nf.lane_width
    values = [
        _three_way(nf.lat_vel, th.lat_vel_mu, th.lat_vel_sigma, ontology.features[0].categories),
        _three_way(nf.lat_acc, th.lat_acc_mu, th.lat_acc_sigma, ontology.features[1].categories),
        _risk(nf.ttc_preceding, th),
        _risk(nf.ttc_left_preceding, th),
        _risk(nf.ttc_right_preceding, th),
        _risk(nf.ttc_left_following, th),
        _risk(nf.ttc_right_following, th),
        lanes[nf.lane_count - 1 - nf.lane_index],
        _three_way(frac, 0.0, th.position_boundary, ontology.features[8].categories),
        ("shortHeadway" if nf.thw < th.thw_short
         else "mediumHeadway" if nf.thw < th.thw_medium else "longHeadway"),
        _side_argmax(nf.frontal_gaps, "gap"),
        _side_argmax(attraction_scores(nf, th), "attraction"),
    ]
    return LinguisticFrame(values, ontology)


def reify(frame: Sequence[str], ontology: Ontology, intention: Optional[str] = None,
          subject: Optional[str] = None) -> list:
    validate_frame(frame, ontology)
    subject = subject or ontology.subject
    triples = [Triple(subject, f.relation, v) for f, v in zip(ontology.features, frame)]
    if intention is not None:
        if intention not in ontology.maneuvers:
            raise VocabularyError(f"unknown maneuver {intention!r}")
        triples.append(Triple(subject, ontology.intention_relation, intention))
    return triples


def frame_key(frame: Sequence[str]) -> str:
    return KEY_SEP.join(frame)


def parse_key(key: str, ontology: Optional[Ontology] = None) -> LinguisticFrame:
    return LinguisticFrame(key.split(KEY_SEP), ontology)


def write_triples_csv(triples: Iterable[Triple], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject", "relation", "object"])
    for t in triples:
        w.writerow([t.subject, t.relation, t.object])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_triples_csv(source) -> list:
    """Read the 3-column fact file from a path or from CSV text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        source = Path(source).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(source)))
    if not rows or rows[0] != ["subject", "relation", "object"]:
        raise InputError("fact CSV must start with the header subject,relation,object")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise InputError(f"line {i}: expected 3 columns, got {len(row)}")
        out.append(Triple(*row))
    return out
