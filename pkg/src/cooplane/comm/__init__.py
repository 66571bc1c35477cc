"""Wire protocol, node runtimes and link measurement."""

from .codec import Message, frame_decode, frame_encode
from .nodes import PerceptionClient, PredictionServer, Relay, TopologyConfig, table_predictor
from .rtt import LinkStats, measure_rtt

__all__ = ["Message", "frame_encode", "frame_decode", "PerceptionClient", "PredictionServer", "Relay",
           "TopologyConfig", "table_predictor", "LinkStats", "measure_rtt"]
