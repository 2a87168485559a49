"""Permissioned BFT blockchain with a co-located Petri-net workflow engine.

Each node bundles four services: a PBFT ordering replica, a hash-chained
block store with peer-to-peer recovery, a generic workflow engine driven by
committed blocks, and a worklist HTTP API for human participants.
"""

__version__ = "0.1.0"
