"""Static permissioned peer list: who may participate and where they live."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PeerDescriptor:
    node_id: str
    address: str  # host:port
    public_key: bytes


class PeerRegistry:
    """All known participants. Connections from anyone else are refused."""

    def __init__(self, peers: list[PeerDescriptor]):
        ids = [p.node_id for p in peers]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate peer node ids")
        addresses = [p.address for p in peers]
        if len(set(addresses)) != len(addresses):
            raise ValueError("duplicate peer addresses")
        self._by_id = {p.node_id: p for p in peers}

    def get(self, node_id: str) -> PeerDescriptor | None:
        return self._by_id.get(node_id)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._by_id

    def ids(self) -> list[str]:
        return sorted(self._by_id)

    def public_keys(self) -> dict[str, bytes]:
        return {p.node_id: p.public_key for p in self._by_id.values()}

    def __iter__(self):
        return iter(sorted(self._by_id.values(), key=lambda p: p.node_id))
