"""Synthetic labelled corpus used to fit the frequency likelihoods.

Real naturalistic recordings are out of scope, so numeric feature vectors are
drawn from maneuver-conditional distributions that encode the usual risk
semantics: a lane change is preceded by a risky frontal TTC, a safe target
lane and lateral motion toward it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InputError
from .inference import LikelihoodModel, fit_likelihoods_frequency
from .semantics import NumericFeatures, Ontology, Thresholds, categorize, make_ontology

PRIOR = {"laneKeep": 0.6, "leftLaneChange": 0.2, "rightLaneChange": 0.2}

# (P(high), P(medium)) of the TTC risk band per maneuver and neighbour role.
# "target" is the lane being entered, "other" is the opposite side.
RISK_BANDS = {
    "laneKeep": {"front": (0.05, 0.15), "target_precede": (0.1, 0.2), "target_follow": (0.1, 0.2),
                 "other_precede": (0.1, 0.2), "other_follow": (0.1, 0.2)},
    "change": {"front": (0.5, 0.3), "target_precede": (0.05, 0.15), "target_follow": (0.05, 0.15),
               "other_precede": (0.1, 0.2), "other_follow": (0.4, 0.3)},
}

LAT_VEL = {"laneKeep": (0.0, 0.08), "leftLaneChange": (0.3, 0.12), "rightLaneChange": (-0.3, 0.12)}
LAT_ACC = {"laneKeep": (0.0, 0.05), "leftLaneChange": (0.12, 0.08), "rightLaneChange": (-0.12, 0.08)}
OFFSET = {"laneKeep": (0.0, 0.3), "leftLaneChange": (0.6, 0.4), "rightLaneChange": (-0.6, 0.4)}


@dataclass
class LabelledCorpus:
    features: list
    labels: list
    lane_count: int


def _sample_ttc(rng, bands) -> float:
    p_high, p_med = bands
    u = rng.random()
    if u < p_high:
        return float(rng.uniform(0.3, 2.0))
    if u < p_high + p_med:
        return float(rng.uniform(2.0, 4.0))
    # low risk: either opening/absent or a long horizon
    return math.inf if rng.random() < 0.5 else float(rng.uniform(4.0, 20.0))


def _lane_prior(lane_index: int, lane_count: int) -> dict:
    p = dict(PRIOR)
    if lane_index == lane_count - 1:
        p["leftLaneChange"] = 0.0
    if lane_index == 0:
        p["rightLaneChange"] = 0.0
    z = sum(p.values())
    return {k: v / z for k, v in p.items()}


def sample_numeric(rng: np.random.Generator, lane_count: int, lane_width: float = 3.5):
    """One (NumericFeatures, maneuver) draw. Lane 0 is the rightmost lane."""
    lane = int(rng.integers(lane_count))
    prior = _lane_prior(lane, lane_count)
    names = list(prior)
    h = names[int(rng.choice(len(names), p=[prior[n] for n in names]))]
    has = {"left": lane < lane_count - 1, "right": lane > 0}
    bands = RISK_BANDS["laneKeep" if h == "laneKeep" else "change"]
    target = {"leftLaneChange": "left", "rightLaneChange": "right"}.get(h)

    def role(side, kind):
        if target is None:
            return bands[f"target_{kind}"]
        return bands[f"target_{kind}" if side == target else f"other_{kind}"]

    ttc = {}
    for side in ("left", "right"):
        for kind, key in (("precede", "preceding"), ("follow", "following")):
            ttc[f"ttc_{side}_{key}"] = _sample_ttc(rng, role(side, kind)) if has[side] else math.inf

    def gap(low, high):
        return float(rng.uniform(low, high))

    lc = h != "laneKeep"
    gaps = {"current": gap(3, 20) if lc else gap(10, 60)}
    speeds = {"current": float(rng.normal(2.5, 0.5))}
    for side in ("left", "right"):
        if has[side]:
            gaps[side] = gap(20, 80) if side == target else gap(5, 60)
            speeds[side] = float(rng.normal(2.8 if side == target else 2.5, 0.5))
        else:
            gaps[side] = None
            speeds[side] = None
    thw_mu = 1.0 if lc else 2.0
    nf = NumericFeatures(
        lat_vel=float(rng.normal(*LAT_VEL[h])),
        lat_acc=float(rng.normal(*LAT_ACC[h])),
        ttc_preceding=_sample_ttc(rng, bands["front"]),
        lane_index=lane, lane_count=lane_count,
        lane_offset=float(rng.normal(*OFFSET[h])), lane_width=lane_width,
        thw=float(rng.lognormal(math.log(thw_mu), 0.4)),
        frontal_gaps=gaps, lane_speeds=speeds, **ttc,
    )
    return nf, h


def synthesize_corpus(lane_count: int, n: int = 20000, seed: int = 0) -> LabelledCorpus:
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for _ in range(n):
        nf, h = sample_numeric(rng, lane_count)
        feats.append(nf)
        labels.append(h)
    return LabelledCorpus(feats, labels, lane_count)


def pooled_thresholds(corpus: LabelledCorpus, base: Optional[Thresholds] = None) -> Thresholds:
    """Lateral thresholds at the corpus mean plus/minus one pooled standard deviation."""
    base = base or Thresholds()
    lv = np.array([f.lat_vel for f in corpus.features])
    la = np.array([f.lat_acc for f in corpus.features])
    d = base.to_dict()
    d.update(lat_vel_mu=float(lv.mean()), lat_vel_sigma=float(lv.std()),
             lat_acc_mu=float(la.mean()), lat_acc_sigma=float(la.std()))
    return Thresholds.from_dict(d)


def fit_from_corpus(corpus: LabelledCorpus, ontology: Ontology, thresholds: Thresholds,
                    alpha: float = 1.0) -> LikelihoodModel:
    frames = [categorize(f, thresholds, ontology) for f in corpus.features]
    return fit_likelihoods_frequency(frames, corpus.labels, ontology, alpha=alpha)


FIXTURE_SEED = 0
FIXTURE_SIZE = 20000


def fixture_path(lane_count: int) -> Path:
    return Path(__file__).parent / "data" / f"likelihoods_{lane_count}lane.json"


def build_fixture(lane_count: int, n: int = FIXTURE_SIZE, seed: int = FIXTURE_SEED) -> dict:
    corpus = synthesize_corpus(lane_count, n, seed)
    th = pooled_thresholds(corpus)
    model = fit_from_corpus(corpus, make_ontology(lane_count), th)
    return {"corpus": {"size": n, "seed": seed}, "thresholds": th.to_dict(), "model": model.to_dict()}


def write_fixture(lane_count: int, path=None) -> Path:
    path = Path(path) if path is not None else fixture_path(lane_count)
    path.write_text(json.dumps(build_fixture(lane_count), indent=1, sort_keys=True))
    return path


def load_fixture(lane_count: int = 3, path=None):
    """Shipped (LikelihoodModel, Thresholds) for a lane count."""
    path = Path(path) if path is not None else fixture_path(lane_count)
    if not path.exists():
        raise InputError(f"no likelihood fixture at {path}")
    d = json.loads(path.read_text())
    return LikelihoodModel.from_dict(d["model"]), Thresholds.from_dict(d["thresholds"])
