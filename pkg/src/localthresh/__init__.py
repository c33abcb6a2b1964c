"""Local source selection in large peer-to-peer networks.

Peers hold weighted input vectors and agree, by purely local message
exchange, on which of ``k`` candidate sources is nearest to the network-wide
average input.
"""

from .data import DataModel, gen_inputs, resample_one
from .metrics import RunRecord, measure
from .protocol import NeighborLedger, Params, PeerState, check_stopping, violations
from .regions import SourceSet, classify, same_region
from .simulator import SimConfig, World, build_termination_state, run
from .topology import Topology, gen_ba, gen_chord, gen_grid
from .wvector import WeightedVector, wv_add, wv_fold, wv_scale, wv_sub

__all__ = [
    "DataModel", "NeighborLedger", "Params", "PeerState", "RunRecord", "SimConfig",
    "SourceSet", "Topology", "WeightedVector", "World", "build_termination_state",
    "check_stopping", "classify", "gen_ba", "gen_chord", "gen_grid", "gen_inputs",
    "measure", "resample_one", "run", "same_region", "violations", "wv_add", "wv_fold",
    "wv_scale", "wv_sub",
]
