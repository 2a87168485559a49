from .messages import ClientRequest, ConsensusBody, OpTag, OrderingReply
from .state import AcceptAllApp, ReplicaState, ViewConfig
from .replica import ReplicaConfig, ReplicaCore
from .client import ClientCore, ClientOutcome

__all__ = [
    "ClientRequest",
    "ConsensusBody",
    "OpTag",
    "OrderingReply",
    "AcceptAllApp",
    "ReplicaState",
    "ViewConfig",
    "ReplicaConfig",
    "ReplicaCore",
    "ClientCore",
    "ClientOutcome",
]
