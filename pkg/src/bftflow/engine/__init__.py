from .model import (
    DataConstraint,
    MalformedModel,
    TransitionDef,
    WorkflowModel,
    enabled_transitions,
    fire_transition,
    marking_covers,
)
from .transactions import Transaction, TxKind
from .core import CaseState, CaseStatus, EngineError, WorkflowEngine, WorkItem, WorkItemStatus

__all__ = [
    "DataConstraint",
    "MalformedModel",
    "TransitionDef",
    "WorkflowModel",
    "enabled_transitions",
    "fire_transition",
    "marking_covers",
    "Transaction",
    "TxKind",
    "CaseState",
    "CaseStatus",
    "EngineError",
    "WorkflowEngine",
    "WorkItem",
    "WorkItemStatus",
]
