"""Operator-facing workflow model documents.

Models are authored as YAML (or the equivalent JSON, which the HTTP API
accepts). Schema:

    model_id: order-process          # unique chain-wide
    places: [received, checked, done]
    end_places: [done]
    initial_marking: {received: 1}
    variables:
      - {name: amount, type: real}   # integer | real | text | boolean
      - {name: approved, type: boolean}
    constraints:
      - description: amount within policy
        predicate: amount >= 0 and amount <= 1000
    transitions:
      - name: Check order
        node: n1                     # the node whose worklist offers it
        consumes: {received: 1}
        produces: {checked: 1}
        inputs: [amount]             # copied into the work item
        outputs: [approved]          # the only variables it may change
        external: null               # or a registered host function name

Constraint predicates are conjunctions of comparison atoms joined with
`and`. Each atom compares a variable or literal with a variable or literal
using =, !=, <, <=, > or >=. Literals are integers, floats, booleans
(true/false) or single-/double-quoted strings.
"""

from __future__ import annotations

import re

import yaml

from .model import (
    ConstraintAtom,
    DataConstraint,
    MalformedModel,
    TransitionDef,
    WorkflowModel,
    normalize_marking,
)

_ATOM_RE = re.compile(
    r"""^\s*(?P<lhs>"[^"]*"|'[^']*'|[^\s<>=!]+)\s*"""
    r"""(?P<op><=|>=|!=|==|=|<|>)\s*"""
    r"""(?P<rhs>"[^"]*"|'[^']*'|[^\s<>=!]+)\s*$""")

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class ModelFileError(ValueError):
    pass


def _parse_operand(token: str) -> tuple:
    if (token.startswith('"') and token.endswith('"')) or (
            token.startswith("'") and token.endswith("'")):
        return ("lit", token[1:-1])
    lowered = token.lower()
    if lowered == "true":
        return ("lit", True)
    if lowered == "false":
        return ("lit", False)
    try:
        return ("lit", int(token))
    except ValueError:
        pass
    try:
        return ("lit", float(token))
    except ValueError:
        pass
    if not _IDENT_RE.match(token):
        raise ModelFileError(f"cannot parse operand {token!r}")
    return ("var", token)


def parse_predicate(text: str) -> tuple:
    """Parse `a <= 3 and b = 'x'` into constraint atoms."""
    atoms = []
    for part in re.split(r"\s+and\s+", text.strip()):
        match = _ATOM_RE.match(part)
        if not match:
            raise ModelFileError(f"cannot parse constraint atom {part!r}")
        op = match.group("op")
        if op == "==":
            op = "="
        atoms.append(ConstraintAtom(
            _parse_operand(match.group("lhs")), op,
            _parse_operand(match.group("rhs"))))
    if not atoms:
        raise ModelFileError("empty predicate")
    return tuple(atoms)


def model_from_document(doc: dict) -> WorkflowModel:
    """Build and structurally validate a model from a parsed document."""
    if not isinstance(doc, dict):
        raise ModelFileError("model document must be a mapping")
    try:
        transitions = tuple(
            TransitionDef(
                name=t["name"],
                consumes=normalize_marking(t.get("consumes", {})),
                produces=normalize_marking(t.get("produces", {})),
                assigned_node=t.get("node", ""),
                input_variables=tuple(t.get("inputs", ())),
                output_variables=tuple(t.get("outputs", ())),
                external_call=t.get("external"),
            )
            for t in doc.get("transitions", ())
        )
        variables = tuple(
            (v["name"], v["type"]) for v in doc.get("variables", ()))
        constraints = tuple(
            DataConstraint(
                description=c.get("description", c["predicate"]),
                atoms=parse_predicate(c["predicate"]),
            )
            for c in doc.get("constraints", ())
        )
        model = WorkflowModel(
            model_id=doc.get("model_id", ""),
            places=frozenset(doc.get("places", ())),
            transitions=transitions,
            initial_marking=normalize_marking(doc.get("initial_marking", {})),
            variables=variables,
            constraints=constraints,
            end_places=frozenset(doc.get("end_places", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFileError):
            raise
        raise ModelFileError(f"bad model document: {exc}") from exc
    model.validate_structure()  # MalformedModel with the violated invariant
    return model


def load_model_file(path) -> WorkflowModel:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return model_from_document(doc)


def model_to_document(model: WorkflowModel) -> dict:
    """Inverse of model_from_document, with predicates re-rendered as text."""
    def render_operand(side):
        kind, value = side
        if kind == "var":
            return value
        if isinstance(value, str):
            return f"'{value}'"
        if isinstance(value, bool):
            return "true" if value else "false"
        return str(value)

    return {
        "model_id": model.model_id,
        "places": sorted(model.places),
        "end_places": sorted(model.end_places),
        "initial_marking": dict(model.initial_marking),
        "variables": [{"name": n, "type": t} for n, t in model.variables],
        "constraints": [
            {
                "description": c.description,
                "predicate": " and ".join(
                    f"{render_operand(a.lhs)} {a.op} {render_operand(a.rhs)}"
                    for a in c.atoms),
            }
            for c in model.constraints
        ],
        "transitions": [
            {
                "name": t.name,
                "node": t.assigned_node,
                "consumes": dict(t.consumes),
                "produces": dict(t.produces),
                "inputs": list(t.input_variables),
                "outputs": list(t.output_variables),
                "external": t.external_call,
            }
            for t in model.transitions
        ],
    }


def dump_model_file(model: WorkflowModel, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(model_to_document(model), fh, sort_keys=False)
