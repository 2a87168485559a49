"""Shared model and engine builders for the test suite."""

import random

from bftflow import crypto
from bftflow.engine.core import WorkflowEngine
from bftflow.engine.model import (
    ConstraintAtom,
    DataConstraint,
    TransitionDef,
    WorkflowModel,
)


def sequence_model(model_id="seq", nodes=("n0", "n1", "n2"), constraints=(),
                   variables=(("amount", "real"), ("note", "text"))):
    """p0 -[A]-> p1 -[B]-> p2 -[C]-> p3, one activity per node."""
    return WorkflowModel(
        model_id=model_id,
        places=frozenset({"p0", "p1", "p2", "p3"}),
        transitions=(
            TransitionDef("A", {"p0": 1}, {"p1": 1}, nodes[0],
                          output_variables=("amount",)),
            TransitionDef("B", {"p1": 1}, {"p2": 1}, nodes[1 % len(nodes)],
                          input_variables=("amount",),
                          output_variables=("note",)),
            TransitionDef("C", {"p2": 1}, {"p3": 1}, nodes[2 % len(nodes)],
                          input_variables=("amount", "note")),
        ),
        initial_marking={"p0": 1},
        variables=tuple(variables),
        constraints=tuple(constraints),
        end_places=frozenset({"p3"}),
    )


def racing_model(model_id="race", node_a="n0", node_b="n1"):
    """Two transitions fighting over one token in p0: a conflict net."""
    return WorkflowModel(
        model_id=model_id,
        places=frozenset({"p0", "pa", "pb"}),
        transitions=(
            TransitionDef("TakeA", {"p0": 1}, {"pa": 1}, node_a),
            TransitionDef("TakeB", {"p0": 1}, {"pb": 1}, node_b),
        ),
        initial_marking={"p0": 1},
        end_places=frozenset({"pa", "pb"}),
    )


def and_split_model(model_id="split", node="n0"):
    """Fork into two parallel branches that later join."""
    return WorkflowModel(
        model_id=model_id,
        places=frozenset({"start", "l1", "l2", "r1", "r2", "done"}),
        transitions=(
            TransitionDef("Fork", {"start": 1}, {"l1": 1, "r1": 1}, node),
            TransitionDef("Left", {"l1": 1}, {"l2": 1}, node),
            TransitionDef("Right", {"r1": 1}, {"r2": 1}, node),
            TransitionDef("Join", {"l2": 1, "r2": 1}, {"done": 1}, node),
        ),
        initial_marking={"start": 1},
        end_places=frozenset({"done"}),
    )


def amount_constraint(limit=1000):
    return DataConstraint(
        description=f"amount <= {limit}",
        atoms=(ConstraintAtom(("var", "amount"), "<=", ("lit", limit)),),
    )


def make_engines(node_ids, seed=b"engine-tests", host_functions=None):
    rings = crypto.build_rings("hmac-sha256", list(node_ids), seed=seed)
    return {
        nid: WorkflowEngine(nid, rings[nid], host_functions=host_functions,
                            rng=random.Random(f"{seed}:{nid}"))
        for nid in node_ids
    }, rings


def random_net(rng, model_id, max_places=8, max_transitions=8, node_ids=("n0",)):
    """A random plain Petri net within the stated bounds, always well-formed."""
    n_places = rng.randint(2, max_places)
    places = [f"p{i}" for i in range(n_places)]
    n_transitions = rng.randint(1, max_transitions)
    transitions = []
    for i in range(n_transitions):
        consumes = {}
        for place in rng.sample(places, rng.randint(1, min(3, n_places))):
            consumes[place] = rng.randint(1, 2)
        produces = {}
        for place in rng.sample(places, rng.randint(0, min(3, n_places))):
            produces[place] = rng.randint(1, 2)
        transitions.append(TransitionDef(
            name=f"t{i}",
            consumes=consumes,
            produces=produces,
            assigned_node=rng.choice(list(node_ids)),
            output_variables=tuple(
                v for v in ("x", "y") if rng.random() < 0.5),
        ))
    initial = {}
    for place in rng.sample(places, rng.randint(1, n_places)):
        initial[place] = rng.randint(1, 2)
    constraints = []
    if rng.random() < 0.5:
        constraints.append(DataConstraint(
            description="x bounded",
            atoms=(ConstraintAtom(("var", "x"), "<=", ("lit", 100)),),
        ))
    if rng.random() < 0.3:
        constraints.append(DataConstraint(
            description="x and y ordered",
            atoms=(ConstraintAtom(("var", "x"), "<=", ("var", "y")),),
        ))
    return WorkflowModel(
        model_id=model_id,
        places=frozenset(places),
        transitions=tuple(transitions),
        initial_marking=initial,
        variables=(("x", "integer"), ("y", "integer")),
        constraints=tuple(constraints),
        end_places=frozenset(rng.sample(places, rng.randint(0, n_places))),
    )


def random_marking(rng, model):
    out = {}
    for place in model.places:
        if rng.random() < 0.5:
            out[place] = rng.randint(1, 2)
    if not out:
        out[rng.choice(sorted(model.places))] = 1
    return out
