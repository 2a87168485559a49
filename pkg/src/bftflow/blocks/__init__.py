from .block import Block, GENESIS_PREVIOUS, decode_block, encode_block
from .store import BlockStore, ChainVerification, HeadRegression, LinkageMismatch
from .service import BlockService, SyncStalled

__all__ = [
    "Block",
    "GENESIS_PREVIOUS",
    "decode_block",
    "encode_block",
    "BlockStore",
    "ChainVerification",
    "HeadRegression",
    "LinkageMismatch",
    "BlockService",
    "SyncStalled",
]
