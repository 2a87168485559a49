"""The workflow engine: validation, state materialization, and worklists.

State lives on the chain. The engine's case map is only a materialization
of the latest InstanceState transaction per case, rebuilt from the chain at
startup and advanced by copying states out of each applied block. Validation
is the deterministic gate the ordering service calls before queueing a
transaction: a proposed instance state must be exactly one transition firing
away from its base (the current case state, or the immediately prior pending
transaction for the same case), must respect the declared variable types and
global data constraints, and may change only the variables the fired
transition declares as outputs. Because transactions carry no activity
record, the fired transition is inferred from the marking delta; when two
transitions produce the same delta the data check passes if it passes for
any of them.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import Enum

from .. import codec
from ..crypto import KeyRing
from .model import (
    MalformedModel,
    WorkflowModel,
    enabled_transitions,
    fire_transition,
    marking_covers,
)
from .transactions import Transaction, TxKind, instance_state, model_update

log = logging.getLogger(__name__)

_MISSING = object()


class CaseStatus(str, Enum):
    RUNNING = "RUNNING"
    FINISHED = "FINISHED"
    DEADLOCKED = "DEADLOCKED"


class WorkItemStatus(str, Enum):
    ENABLED = "ENABLED"
    COMPLETED = "COMPLETED"
    WITHDRAWN = "WITHDRAWN"


class EngineError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass
class CaseState:
    case_id: str
    model_id: str
    marking: dict
    data: dict
    status: CaseStatus = CaseStatus.RUNNING


@dataclass
class WorkItem:
    work_item_id: str
    case_id: str
    transition_name: str
    input_values: dict
    status: WorkItemStatus = WorkItemStatus.ENABLED
    output_values: dict = field(default_factory=dict)
    locked: bool = False
    submitted_tx_id: bytes = b""
    enabled_at_block: int = 0


@dataclass(frozen=True)
class EngineEffect:
    kind: str
    data: dict


class WorkflowEngine:
    def __init__(self, node_id: str, keyring: KeyRing,
                 host_functions: dict | None = None,
                 rng: random.Random | None = None):
        self.node_id = node_id
        self.keyring = keyring
        self.host_functions = dict(host_functions or {})
        self.rng = rng or random.Random()
        self.models: dict[str, WorkflowModel] = {}
        self.cases: dict[str, CaseState] = {}
        self.work_items: dict[str, WorkItem] = {}
        self.applied_block_number = -1
        self._case_counter = 0
        self._item_counter = 0

    # -- validation (called from the ordering execution path) ---------------

    def validate_transaction(self, tx_bytes: bytes,
                             pending_tx_bytes: bytes | None = None
                             ) -> tuple[bool, str]:
        try:
            tx = Transaction.from_bytes(bytes(tx_bytes))
        except (codec.CodecError, KeyError, TypeError, ValueError):
            return False, "MALFORMED_TX"
        if not tx.verify_signature(self.keyring):
            return False, "BAD_SIGNATURE"
        pending = None
        if pending_tx_bytes is not None:
            try:
                pending = Transaction.from_bytes(bytes(pending_tx_bytes))
            except (codec.CodecError, KeyError, TypeError, ValueError):
                pending = None

        if tx.kind == TxKind.MODEL_UPDATE:
            return self._validate_model_update(tx, pending)
        return self._validate_instance_state(tx, pending)

    def _validate_model_update(self, tx: Transaction, pending: Transaction | None
                               ) -> tuple[bool, str]:
        try:
            tx.model.validate_structure()
        except MalformedModel as exc:
            return False, f"MALFORMED_MODEL: {exc}"
        if tx.model.model_id in self.models:
            return False, "DUPLICATE_MODEL"
        if (pending is not None and pending.kind == TxKind.MODEL_UPDATE
                and pending.model.model_id == tx.model.model_id):
            return False, "DUPLICATE_MODEL"
        return True, "ok"

    def _validate_instance_state(self, tx: Transaction, pending: Transaction | None
                                 ) -> tuple[bool, str]:
        if not tx.case_id:
            return False, "EMPTY_CASE_ID"
        model = self.models.get(tx.model_id)
        if (model is None and pending is not None
                and pending.kind == TxKind.MODEL_UPDATE
                and pending.model.model_id == tx.model_id):
            model = pending.model  # installed by the immediately prior pending tx
        if model is None:
            return False, "UNKNOWN_MODEL"
        for place in tx.marking:
            if place not in model.places:
                return False, f"UNKNOWN_PLACE: {place}"
        type_error = model.check_data_types(tx.data)
        if type_error is not None:
            return False, f"TYPE_MISMATCH: {type_error}"

        base_marking = base_data = None
        if (pending is not None and pending.kind == TxKind.INSTANCE_STATE
                and pending.case_id == tx.case_id):
            if pending.model_id != tx.model_id:
                return False, "MODEL_MISMATCH"
            base_marking, base_data = pending.marking, pending.data
        elif tx.case_id in self.cases:
            case = self.cases[tx.case_id]
            if case.model_id != tx.model_id:
                return False, "MODEL_MISMATCH"
            base_marking, base_data = case.marking, case.data

        constraints_ok, violated = model.constraints_satisfied(tx.data)
        if not constraints_ok:
            return False, f"CONSTRAINT_VIOLATED: {violated}"

        if base_marking is None:
            # case launch: the state must be exactly the initial marking
            if tx.marking != model.initial_marking:
                return False, "NOT_INITIAL_MARKING"
            return True, "ok"

        changed = {
            key
            for key in set(base_data) | set(tx.data)
            if base_data.get(key, _MISSING) != tx.data.get(key, _MISSING)
        }
        candidates = [
            t for t in model.transitions
            if marking_covers(base_marking, t.consumes)
            and fire_transition(base_marking, t) == tx.marking
        ]
        if not candidates:
            return False, "UNREACHABLE_MARKING"
        if not any(changed <= set(t.output_variables) for t in candidates):
            return False, "DATA_DISCIPLINE"
        return True, "ok"

    # -- block application ----------------------------------------------------

    def apply_block(self, block, replay: bool = False) -> list[EngineEffect]:
        effects: list[EngineEffect] = []
        touched: list[str] = []
        block_tx_ids = set()
        for raw in block.transactions:
            raw = bytes(raw)
            tx = Transaction.from_bytes(raw)
            block_tx_ids.add(tx.tx_id)
            if tx.kind == TxKind.MODEL_UPDATE:
                self.models[tx.model.model_id] = tx.model
                effects.append(EngineEffect("MODEL_INSTALLED", {
                    "model_id": tx.model.model_id, "block": block.number,
                }))
            else:
                launched = tx.case_id not in self.cases
                self.cases[tx.case_id] = CaseState(
                    tx.case_id, tx.model_id, dict(tx.marking), dict(tx.data))
                if tx.case_id not in touched:
                    touched.append(tx.case_id)
                effects.append(EngineEffect(
                    "CASE_LAUNCHED" if launched else "CASE_UPDATED", {
                        "case_id": tx.case_id, "model_id": tx.model_id,
                        "tx_id": tx.tx_id.hex(), "block": block.number,
                    }))
        self.applied_block_number = block.number
        for case_id in touched:
            self._refresh_case(case_id, block_tx_ids, block.number, effects, replay)
        return effects

    def rebuild_from_chain(self, blocks) -> list[EngineEffect]:
        """Materialize state by replaying the chain; no external side effects."""
        self.models.clear()
        self.cases.clear()
        self.work_items.clear()
        self.applied_block_number = -1
        self._case_counter = 0
        self._item_counter = 0
        effects: list[EngineEffect] = []
        for block in blocks:
            effects = self.apply_block(block, replay=True)
        return effects

    def _refresh_case(self, case_id: str, block_tx_ids: set, block_number: int,
                      effects: list, replay: bool) -> None:
        case = self.cases[case_id]
        model = self.models.get(case.model_id)
        if model is None:
            # committed transactions were validated; this is local corruption
            raise EngineError("CORRUPT_STATE",
                              f"case {case_id} references unknown model {case.model_id}")
        enabled = set(enabled_transitions(case.marking, model))
        if enabled:
            case.status = CaseStatus.RUNNING
        else:
            on_end = all(place in model.end_places for place in case.marking)
            case.status = CaseStatus.FINISHED if on_end else CaseStatus.DEADLOCKED
            effects.append(EngineEffect(
                "CASE_FINISHED" if case.status == CaseStatus.FINISHED
                else "CASE_DEADLOCKED",
                {"case_id": case_id, "block": block_number}))

        open_items = {
            item.transition_name: item
            for item in self.work_items.values()
            if item.case_id == case_id and item.status == WorkItemStatus.ENABLED
        }
        for name, item in open_items.items():
            if item.locked and item.submitted_tx_id in block_tx_ids:
                item.status = WorkItemStatus.COMPLETED
                item.locked = False
                effects.append(EngineEffect("WORK_ITEM_COMPLETED", {
                    "work_item_id": item.work_item_id, "case_id": case_id,
                    "transition": name,
                }))
            elif name not in enabled:
                item.status = WorkItemStatus.WITHDRAWN
                item.locked = False
                effects.append(EngineEffect("WORK_ITEM_WITHDRAWN", {
                    "work_item_id": item.work_item_id, "case_id": case_id,
                    "transition": name, "reason": "not enabled",
                }))
        for name in sorted(enabled):
            transition = model.transition(name)
            if transition.assigned_node != self.node_id:
                continue  # another node's activity; nothing to offer here
            current = open_items.get(name)
            if current is not None and current.status == WorkItemStatus.ENABLED:
                continue
            item = self._create_work_item(case, transition, block_number)
            effects.append(EngineEffect("WORK_ITEM_ADDED", {
                "work_item_id": item.work_item_id, "case_id": case_id,
                "transition": name,
            }))
            if transition.external_call and not replay:
                self._run_external(item, transition, effects)

    def _create_work_item(self, case: CaseState, transition, block_number: int
                          ) -> WorkItem:
        self._item_counter += 1
        item = WorkItem(
            work_item_id=f"wi-{self._item_counter:06d}",
            case_id=case.case_id,
            transition_name=transition.name,
            input_values={k: case.data[k] for k in transition.input_variables
                          if k in case.data},
            enabled_at_block=block_number,
        )
        self.work_items[item.work_item_id] = item
        return item

    def _run_external(self, item: WorkItem, transition, effects: list) -> None:
        try:
            outputs = self.external_call(transition.external_call, item.input_values)
        except EngineError as exc:
            log.warning("external call %s failed (%s); leaving %s enabled",
                        transition.external_call, exc.code, item.work_item_id)
            return
        except Exception:
            log.exception("external function %s raised; leaving %s enabled",
                          transition.external_call, item.work_item_id)
            return
        try:
            tx = self.complete_work_item(item.work_item_id, outputs)
        except EngineError as exc:
            log.warning("auto-completion of %s failed: %s", item.work_item_id, exc)
            return
        effects.append(EngineEffect("AUTO_COMPLETION", {
            "work_item_id": item.work_item_id, "tx": tx.to_bytes(),
        }))

    # -- worklist operations ---------------------------------------------------

    def worklist(self) -> list[WorkItem]:
        return [i for i in self.work_items.values()
                if i.status == WorkItemStatus.ENABLED]

    def install_model(self, model: WorkflowModel) -> Transaction:
        model.validate_structure()  # MalformedModel propagates with the reason
        return model_update(model, self.keyring)

    def launch_case(self, model_id: str, initial_data: dict) -> Transaction:
        model = self.models.get(model_id)
        if model is None:
            raise EngineError("UNKNOWN_MODEL", f"model {model_id} is not installed")
        type_error = model.check_data_types(initial_data)
        if type_error is not None:
            raise EngineError("TYPE_MISMATCH", type_error)
        case_id = self._new_case_id(model_id)
        return instance_state(case_id, model_id, dict(model.initial_marking),
                              initial_data, self.keyring)

    def _new_case_id(self, model_id: str) -> str:
        self._case_counter += 1
        nonce = self.rng.getrandbits(64)
        return codec.digest(
            [self.node_id, model_id, self._case_counter, nonce]).hex()[:32]

    def complete_work_item(self, work_item_id: str, output_values: dict
                           ) -> Transaction:
        item = self.work_items.get(work_item_id)
        if item is None:
            raise EngineError("UNKNOWN_WORK_ITEM", f"no work item {work_item_id}")
        if item.status != WorkItemStatus.ENABLED:
            raise EngineError("WORK_ITEM_STALE",
                              f"work item is {item.status.value}")
        if item.locked:
            raise EngineError("WORK_ITEM_LOCKED",
                              "completion already submitted; awaiting its block")
        case = self.cases[item.case_id]
        model = self.models[case.model_id]
        transition = model.transition(item.transition_name)
        if not marking_covers(case.marking, transition.consumes):
            item.status = WorkItemStatus.WITHDRAWN
            raise EngineError("WORK_ITEM_STALE", "transition no longer enabled")
        allowed = set(transition.output_variables)
        for key in output_values:
            if key not in allowed:
                raise EngineError("TYPE_MISMATCH",
                                  f"{key} is not an output of {transition.name}")
        type_error = model.check_data_types(output_values)
        if type_error is not None:
            raise EngineError("TYPE_MISMATCH", type_error)
        new_marking = fire_transition(case.marking, transition)
        new_data = dict(case.data)
        new_data.update(output_values)
        tx = instance_state(case.case_id, case.model_id, new_marking, new_data,
                            self.keyring)
        item.locked = True
        item.output_values = dict(output_values)
        item.submitted_tx_id = tx.tx_id
        return tx

    def on_submission_rejected(self, tx_id: bytes, reason: str) -> WorkItem | None:
        """A consensus rejection: unlock and re-evaluate the submitting item."""
        for item in self.work_items.values():
            if item.submitted_tx_id == tx_id and item.locked:
                item.locked = False
                item.submitted_tx_id = b""
                case = self.cases.get(item.case_id)
                model = self.models.get(case.model_id) if case else None
                transition = model.transition(item.transition_name) if model else None
                if (case is None or transition is None
                        or not marking_covers(case.marking, transition.consumes)):
                    item.status = WorkItemStatus.WITHDRAWN
                else:
                    # still enabled against the new state: refresh and re-offer
                    item.input_values = {
                        k: case.data[k] for k in transition.input_variables
                        if k in case.data}
                log.info("submission %s rejected (%s); work item %s now %s",
                         tx_id.hex()[:12], reason, item.work_item_id,
                         item.status.value)
                return item
        return None

    def external_call(self, function_name: str, input_values: dict) -> dict:
        fn = self.host_functions.get(function_name)
        if fn is None:
            raise EngineError("UNREGISTERED_FUNCTION",
                              f"no host function named {function_name}")
        return fn(dict(input_values))

    # -- inspection -------------------------------------------------------------

    def snapshot_cases(self) -> dict:
        return {
            case_id: {
                "model_id": case.model_id,
                "marking": dict(case.marking),
                "data": dict(case.data),
                "status": case.status.value,
            }
            for case_id, case in self.cases.items()
        }
