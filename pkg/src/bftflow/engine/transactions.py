"""The two on-chain transaction types.

A ModelUpdate installs a workflow model; an InstanceState carries a full
snapshot of one case (marking plus data) after a launch or an activity
completion. Nothing about the executed activity itself is recorded: state
is copied onto the chain, and validators infer the fired transition from
the marking delta.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .. import codec
from ..crypto import KeyRing
from .model import WorkflowModel, normalize_marking


class TxKind(str, Enum):
    MODEL_UPDATE = "MODEL_UPDATE"
    INSTANCE_STATE = "INSTANCE_STATE"


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    submitter: str
    signature: bytes = b""
    # MODEL_UPDATE
    model: WorkflowModel | None = None
    # INSTANCE_STATE
    case_id: str = ""
    model_id: str = ""
    marking: dict | None = None
    data: dict | None = None

    def signing_body(self) -> bytes:
        if self.kind == TxKind.MODEL_UPDATE:
            payload = {"model": self.model.to_dict()}
        else:
            payload = {
                "case_id": self.case_id,
                "model_id": self.model_id,
                "marking": dict(self.marking),
                "data": dict(self.data),
            }
        return codec.encode(["tx", self.kind.value, self.submitter, payload])

    def to_bytes(self) -> bytes:
        return codec.encode([self.signing_body(), self.signature])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Transaction":
        body_bytes, signature = codec.decode(raw)
        tag, kind_value, submitter, payload = codec.decode(body_bytes)
        if tag != "tx":
            raise codec.CodecError("not a transaction")
        kind = TxKind(kind_value)
        if kind == TxKind.MODEL_UPDATE:
            return cls(kind, submitter, bytes(signature),
                       model=WorkflowModel.from_dict(payload["model"]))
        return cls(kind, submitter, bytes(signature),
                   case_id=payload["case_id"], model_id=payload["model_id"],
                   marking=normalize_marking(payload["marking"]),
                   data=dict(payload["data"]))

    @property
    def tx_id(self) -> bytes:
        """Digest over the canonical serialization; the chain-wide identity."""
        return codec.digest_bytes(self.to_bytes())

    def verify_signature(self, keyring: KeyRing) -> bool:
        return keyring.verify(self.submitter, self.signing_body(), self.signature)


def sign_transaction(tx: Transaction, keyring: KeyRing) -> Transaction:
    from dataclasses import replace

    return replace(tx, signature=keyring.sign(tx.signing_body()))


def model_update(model: WorkflowModel, keyring: KeyRing) -> Transaction:
    return sign_transaction(
        Transaction(TxKind.MODEL_UPDATE, keyring.node_id, model=model), keyring)


def instance_state(case_id: str, model_id: str, marking: dict, data: dict,
                   keyring: KeyRing) -> Transaction:
    tx = Transaction(TxKind.INSTANCE_STATE, keyring.node_id, case_id=case_id,
                     model_id=model_id, marking=normalize_marking(marking),
                     data=dict(data))
    return sign_transaction(tx, keyring)
