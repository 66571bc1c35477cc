import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cooplane.errors import InputError, VocabularyError
from cooplane.semantics import (LinguisticFrame, NumericFeatures, Ontology, Thresholds, Triple,
                                categorize, frame_from_dict, frame_key, lane_labels, make_ontology,
                                parse_key, read_triples_csv, reify, write_triples_csv)

TH = Thresholds()


def features(**kw):
    base = dict(lat_vel=0.0, lat_acc=0.0, ttc_preceding=math.inf, ttc_left_preceding=math.inf,
                ttc_right_preceding=math.inf, ttc_left_following=math.inf,
                ttc_right_following=math.inf, lane_index=0, lane_count=2, lane_offset=0.0,
                lane_width=3.5, thw=math.inf,
                frontal_gaps={"left": 20.0, "current": 20.0, "right": None},
                lane_speeds={"left": None, "current": None, "right": None})
    base.update(kw)
    return NumericFeatures(**base)


def a_frame(onto):
    return LinguisticFrame((f.categories[0] for f in onto.features), onto)


def test_reify_counts(onto2):
    fr = a_frame(onto2)
    assert len(reify(fr, onto2)) == 12
    triples = reify(fr, onto2, intention="laneKeep")
    assert len(triples) == 13
    assert triples[-1] == Triple("vehicle", "INTENTION_IS", "laneKeep")
    with pytest.raises(VocabularyError):
        reify(fr, onto2, intention="uTurn")


def test_key_round_trip(onto3):
    fr = a_frame(onto3)
    assert parse_key(frame_key(fr), onto3) == fr
    with pytest.raises(VocabularyError):
        parse_key("a|b", onto3)


def test_fact_csv_round_trip(onto2, tmp_path):
    triples = reify(a_frame(onto2), onto2, intention="leftLaneChange")
    path = tmp_path / "facts.csv"
    text = write_triples_csv(triples, path)
    assert read_triples_csv(path) == triples
    assert read_triples_csv(text) == triples
    with pytest.raises(InputError):
        read_triples_csv("a,b\n")
    with pytest.raises(InputError):
        read_triples_csv("subject,relation,object\nx,y\n")


def test_categorize_examples(onto2):
    fr = categorize(features(ttc_preceding=1.0), TH, onto2).as_dict(onto2)
    assert fr["ttc_preceding"] == "highRisk"
    assert fr["ttc_left_following"] == "lowRisk"
    assert fr["lane_id"] == "rightLane"
    assert fr["lateral_velocity"] == "movingStraight"
    assert categorize(features(ttc_preceding=3.0), TH, onto2).as_dict(onto2)["ttc_preceding"] == "mediumRisk"
    assert categorize(features(lane_index=1), TH, onto2).as_dict(onto2)["lane_id"] == "leftLane"


def test_categorize_rejects_nan_and_bad_lane(onto2):
    with pytest.raises(InputError):
        categorize(features(lat_vel=math.nan), TH, onto2)
    with pytest.raises(InputError):
        categorize(features(lane_index=2), TH, onto2)
    with pytest.raises(InputError):
        categorize(features(lane_count=3), TH, onto2)


def test_side_argmax(onto2):
    fr = categorize(features(frontal_gaps={"left": 30.0, "current": 5.0, "right": None}), TH, onto2)
    assert fr.as_dict(onto2)["highest_frontal_gap_lane"] == "gapLeft"
    assert fr.as_dict(onto2)["highest_attraction_lane"] == "attractionLeft"


@given(st.floats(-3, 3, allow_nan=False), st.floats(-3, 3, allow_nan=False),
       st.floats(0, 50) | st.just(math.inf), st.floats(0, 10) | st.just(math.inf),
       st.floats(-1.7, 1.7), st.integers(0, 2))
def test_categorize_is_total_on_valid_input(vel, acc, ttc, thw, offset, lane):
    onto = make_ontology(3)
    nf = features(lat_vel=vel, lat_acc=acc, ttc_preceding=ttc, thw=thw, lane_offset=offset,
                  lane_index=lane, lane_count=3,
                  frontal_gaps={"left": 10.0, "current": 5.0, "right": 3.0})
    fr = categorize(nf, TH, onto)
    assert len(fr) == 12


@given(st.floats(0, 30), st.floats(0, 30))
def test_risk_is_monotone(t1, t2):
    onto = make_ontology(2)
    order = {"highRisk": 0, "mediumRisk": 1, "lowRisk": 2}
    lo, hi = sorted((t1, t2))
    r = lambda t: order[categorize(features(ttc_preceding=t), TH, onto).as_dict(onto)["ttc_preceding"]]
    assert r(lo) <= r(hi)


def test_payload_round_trip():
    nf = features(ttc_preceding=2.5)
    p = nf.to_payload()
    assert p["ttc_left_preceding"] is None
    assert NumericFeatures.from_payload(p) == nf
    del p["thw"]
    with pytest.raises(InputError):
        NumericFeatures.from_payload(p)


def test_ontology_round_trip_and_validation(onto3):
    assert Ontology.from_dict(onto3.to_dict()) == onto3
    assert onto3.fingerprint() != make_ontology(2).fingerprint()
    assert onto3.cardinalities == (3,) * 12
    assert make_ontology(2).cardinalities[7] == 2
    with pytest.raises(InputError):
        Ontology(features=onto3.features[:11], lane_count=3)
    with pytest.raises(VocabularyError):
        onto3.index("speed")


def test_lane_labels():
    assert lane_labels(2) == ("leftLane", "rightLane")
    assert lane_labels(3) == ("leftLane", "middleLane", "rightLane")
    assert len(lane_labels(5)) == 5
    with pytest.raises(InputError):
        lane_labels(1)


def test_frame_from_dict(onto2):
    fr = a_frame(onto2)
    assert frame_from_dict(fr.as_dict(onto2), onto2) == fr
    with pytest.raises(VocabularyError):
        frame_from_dict({}, onto2)


def test_thresholds_validation():
    with pytest.raises(InputError):
        Thresholds(ttc_high=5.0, ttc_medium=4.0)
    assert Thresholds.from_dict(TH.to_dict()) == TH
