"""Block storage with backward chain verification.

Blocks are held sparsely (sync fills gaps in any order) while the head only
advances over a verified, contiguous prefix. The head never regresses; a
regression attempt is a programming or consensus-finality violation and
raises instead of being absorbed.

On disk every block is one append-only file named by number plus a head
pointer file and a human-greppable index, so a chain can be inspected with
nothing but a hex dumper.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .. import codec
from .block import Block, GENESIS_PREVIOUS, decode_block, encode_block

log = logging.getLogger(__name__)


class LinkageMismatch(Exception):
    """A block claiming to extend the head does not link to it."""


class HeadRegression(Exception):
    """An attempt to move the head backwards: consensus finality forbids it."""


@dataclass(frozen=True)
class ChainVerification:
    ok: bool
    lowest_verified: int | None  # lowest block number whose link to head checks out
    failed_at: int | None = None  # number where hash recomputation failed
    missing: int | None = None  # number absent from the store, if the walk stalled


class BlockStore:
    def __init__(self, data_dir: Path | str | None = None):
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.blocks: dict[int, Block] = {}
        self._by_hash: dict[bytes, int] = {}
        self.head_number = 0
        self.head_hash = b""
        self.verified_prefix_from: int | None = None
        if self.data_dir is not None:
            self._blocks_dir = self.data_dir / "blocks"
            self._blocks_dir.mkdir(parents=True, exist_ok=True)
            self._load()
        if 0 not in self.blocks:
            genesis = Block.genesis()
            self._insert(genesis)
            self.head_number = 0
            self.head_hash = genesis.hash
            self.verified_prefix_from = 0
            self._persist_head()

    # -- persistence ---------------------------------------------------------

    def _block_path(self, number: int) -> Path:
        return self._blocks_dir / f"{number:012d}.blk"

    def _load(self) -> None:
        for path in sorted(self._blocks_dir.glob("*.blk")):
            block = decode_block(path.read_bytes())
            self.blocks[block.number] = block
            self._by_hash[block.hash] = block.number
        head_file = self.data_dir / "HEAD"
        if head_file.exists():
            number, head_hash = codec.decode(head_file.read_bytes())
            self.head_number = number
            self.head_hash = head_hash
            result = self.verify_backward(head_hash)
            self.verified_prefix_from = result.lowest_verified if result.ok else None

    def _persist_block(self, block: Block) -> None:
        if self.data_dir is None:
            return
        path = self._block_path(block.number)
        path.write_bytes(encode_block(block))
        with open(self.data_dir / "index", "a") as fh:
            fh.write(f"{block.number} {block.hash.hex()}\n")

    def _persist_head(self) -> None:
        if self.data_dir is None:
            return
        (self.data_dir / "HEAD").write_bytes(
            codec.encode([self.head_number, self.head_hash]))

    # -- access ----------------------------------------------------------------

    def get(self, number: int) -> Block | None:
        return self.blocks.get(number)

    def get_by_hash(self, block_hash: bytes) -> Block | None:
        number = self._by_hash.get(block_hash)
        return None if number is None else self.blocks.get(number)

    def __contains__(self, number: int) -> bool:
        return number in self.blocks

    def contiguous_range_ending(self, upper: int) -> tuple[int, int] | None:
        """Maximal stored contiguous range ending exactly at `upper`."""
        if upper not in self.blocks:
            return None
        lower = upper
        while lower - 1 in self.blocks:
            lower -= 1
        return lower, upper

    # -- mutation ----------------------------------------------------------------

    def _insert(self, block: Block) -> None:
        self.blocks[block.number] = block
        self._by_hash[block.hash] = block.number
        self._persist_block(block)

    def put(self, block: Block) -> None:
        """Sparse insert used during sync; head is untouched."""
        existing = self.blocks.get(block.number)
        if existing is not None and existing.hash == block.hash:
            return
        self._insert(block)

    def advance_head(self, block: Block) -> None:
        """Append the next block at head+1, enforcing linkage."""
        if block.number != self.head_number + 1:
            raise ValueError(
                f"advance_head expects block {self.head_number + 1}, got {block.number}")
        if block.previous_hash != self.head_hash:
            raise LinkageMismatch(
                f"block {block.number} previous hash does not match head")
        if not block.verify_hash():
            raise LinkageMismatch(f"block {block.number} hash does not recompute")
        self._insert(block)
        self.head_number = block.number
        self.head_hash = block.hash
        self._persist_head()

    def set_head(self, number: int, block_hash: bytes) -> None:
        """Adopt an externally verified head (after sync). Never regresses."""
        if number < self.head_number:
            raise HeadRegression(
                f"head would regress from {self.head_number} to {number}")
        if number == self.head_number and block_hash != self.head_hash:
            raise HeadRegression("conflicting head at the same number")
        self.head_number = number
        self.head_hash = block_hash
        self._persist_head()

    # -- verification ----------------------------------------------------------

    def verify_backward(self, from_hash: bytes) -> ChainVerification:
        """Walk previous-hash links toward genesis, recomputing every hash.

        The expected hash always comes from above (the authoritative head or
        the already-verified successor), so a block's fields are trusted only
        after its own bytes rehash correctly.
        """
        number = self._by_hash.get(from_hash)
        if number is None:
            # nothing stored under that hash: report the gap at the head itself
            return ChainVerification(False, None, missing=None)
        expected = from_hash
        k = number
        while k >= 0:
            block = self.blocks.get(k)
            if block is None:
                return ChainVerification(False, k + 1 if k < number else None,
                                         missing=k)
            if codec.digest_bytes(block.region) != expected:
                return ChainVerification(False, k + 1 if k < number else None,
                                         failed_at=k)
            if k == 0:
                if block.previous_hash != GENESIS_PREVIOUS:
                    return ChainVerification(False, 1 if number > 0 else None,
                                             failed_at=0)
                return ChainVerification(True, 0)
            expected = block.previous_hash
            k -= 1
        return ChainVerification(True, 0)

    def chain_bytes(self) -> list[bytes]:
        """Canonical region bytes from genesis to head, for store comparisons."""
        return [self.blocks[k].region for k in range(self.head_number + 1)]
