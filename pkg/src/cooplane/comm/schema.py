"""FEATURES body layouts. The relay accepts every version and emits one LINGUISTIC schema."""

from __future__ import annotations

from ..errors import InputError
from ..semantics import NumericFeatures

SCHEMA_VERSIONS = (1, 2)

_V2_TTC = {
    "preceding": "ttc_preceding",
    "left_preceding": "ttc_left_preceding",
    "right_preceding": "ttc_right_preceding",
    "left_following": "ttc_left_following",
    "right_following": "ttc_right_following",
}


def features_to_body(nf: NumericFeatures, schema: int = 1) -> dict:
    flat = nf.to_payload()
    if schema == 1:
        return flat
    if schema == 2:
        return {
            "lateral": {"velocity": flat["lat_vel"], "acceleration": flat["lat_acc"],
                        "offset": flat["lane_offset"]},
            "lane": {"index": flat["lane_index"], "count": flat["lane_count"], "width": flat["lane_width"]},
            "ttc": {k: flat[v] for k, v in _V2_TTC.items()},
            "thw": flat["thw"],
            "neighbourhood": {"gaps": flat["frontal_gaps"], "speeds": flat["lane_speeds"]},
        }
    raise InputError(f"unknown FEATURES schema {schema}")


def features_from_body(schema: int, body: dict) -> NumericFeatures:
    if schema == 1:
        return NumericFeatures.from_payload(body)
    if schema == 2:
        try:
            flat = {
                "lat_vel": body["lateral"]["velocity"],
                "lat_acc": body["lateral"]["acceleration"],
                "lane_offset": body["lateral"]["offset"],
                "lane_index": body["lane"]["index"],
                "lane_count": body["lane"]["count"],
                "lane_width": body["lane"]["width"],
                "thw": body["thw"],
                "frontal_gaps": body["neighbourhood"]["gaps"],
                "lane_speeds": body["neighbourhood"]["speeds"],
            }
            for k, v in _V2_TTC.items():
                flat[v] = body["ttc"][k]
        except (KeyError, TypeError) as e:
            raise InputError(f"malformed v2 FEATURES body: {e}") from None
        return NumericFeatures.from_payload(flat)
    raise InputError(f"unknown FEATURES schema {schema}")
