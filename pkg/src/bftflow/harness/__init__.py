from .faults import ConsensusEquivocator
from .cluster import ConsensusCluster, OutcomeBox

__all__ = ["ConsensusEquivocator", "ConsensusCluster", "OutcomeBox"]
