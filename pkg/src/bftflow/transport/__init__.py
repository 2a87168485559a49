from .envelope import MessageKind, SignedEnvelope, make_envelope, verify_envelope
from .peers import PeerDescriptor, PeerRegistry

__all__ = [
    "MessageKind",
    "SignedEnvelope",
    "make_envelope",
    "verify_envelope",
    "PeerDescriptor",
    "PeerRegistry",
]
