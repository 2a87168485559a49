"""Plain Petri-net workflow models.

A model is a plain Petri net whose transitions are workflow activities:
each one names the node responsible for it, the variables it reads into a
work item and writes back on completion, and optionally a registered host
function for automated execution. Markings are multisets over places,
represented as dicts from place name to a positive token count.

Data constraints are conjunctions of comparison atoms over case variables
and literals. They are global case constraints: with state-only
transactions there is no activity record to attach pre/post conditions to,
so every accepted instance state must satisfy all of them. A constraint
that references an unset variable is vacuously satisfied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .. import codec

VALUE_TYPES = ("integer", "real", "text", "boolean")

_PYTHON_TYPES = {
    "integer": int,
    "real": (int, float),
    "text": str,
    "boolean": bool,
}

OPERATORS = ("=", "!=", "<", "<=", ">", ">=")


class MalformedModel(Exception):
    """A model violates a structural invariant; carries which one."""


def value_matches_type(value, value_type: str) -> bool:
    if value_type == "integer" or value_type == "real":
        if isinstance(value, bool):
            return False
        return isinstance(value, _PYTHON_TYPES[value_type])
    return isinstance(value, _PYTHON_TYPES[value_type])


# -- markings ----------------------------------------------------------------

def normalize_marking(marking: dict) -> dict:
    """Drop zero counts; reject negatives and non-integer counts."""
    out = {}
    for place, count in marking.items():
        if not isinstance(count, int) or isinstance(count, bool) or count < 0:
            raise ValueError(f"bad token count for {place}: {count!r}")
        if count > 0:
            out[place] = count
    return out


def marking_covers(marking: dict, required: dict) -> bool:
    """Multiset containment: marking has at least the required tokens."""
    return all(marking.get(place, 0) >= count for place, count in required.items())


def enabled_transitions(marking: dict, model: "WorkflowModel") -> list[str]:
    return [t.name for t in model.transitions if marking_covers(marking, t.consumes)]


def fire_transition(marking: dict, transition: "TransitionDef") -> dict:
    """Successor marking: base minus consumed plus produced."""
    if not marking_covers(marking, transition.consumes):
        raise ValueError(f"transition {transition.name} is not enabled")
    out = dict(marking)
    for place, count in transition.consumes.items():
        remaining = out[place] - count
        if remaining:
            out[place] = remaining
        else:
            del out[place]
    for place, count in transition.produces.items():
        out[place] = out.get(place, 0) + count
    return out


# -- constraints --------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintAtom:
    lhs: tuple  # ("var", name) or ("lit", value)
    op: str
    rhs: tuple

    def operand_value(self, side, data):
        kind, payload = side
        if kind == "lit":
            return True, payload
        if payload in data:
            return True, data[payload]
        return False, None

    def holds(self, data: dict) -> bool | None:
        """True/False when decidable; None when a referenced variable is unset."""
        ok_l, left = self.operand_value(self.lhs, data)
        ok_r, right = self.operand_value(self.rhs, data)
        if not (ok_l and ok_r):
            return None
        if not _comparable(left, right):
            return False
        if self.op == "=":
            return left == right
        if self.op == "!=":
            return left != right
        if self.op == "<":
            return left < right
        if self.op == "<=":
            return left <= right
        if self.op == ">":
            return left > right
        if self.op == ">=":
            return left >= right
        raise ValueError(f"unknown operator {self.op}")


def _comparable(left, right) -> bool:
    def family(v):
        if isinstance(v, bool):
            return "bool"
        if isinstance(v, (int, float)):
            return "number"
        return "text" if isinstance(v, str) else None

    fl, fr = family(left), family(right)
    return fl is not None and fl == fr


@dataclass(frozen=True)
class DataConstraint:
    description: str
    atoms: tuple  # tuple[ConstraintAtom, ...]

    def satisfied(self, data: dict) -> bool:
        """Vacuously satisfied when any referenced variable is unset."""
        for atom in self.atoms:
            verdict = atom.holds(data)
            if verdict is None:
                return True
            if verdict is False:
                return False
        return True

    def variables(self) -> set:
        out = set()
        for atom in self.atoms:
            for side in (atom.lhs, atom.rhs):
                if side[0] == "var":
                    out.add(side[1])
        return out


# -- model structure ---------------------------------------------------------

@dataclass(frozen=True)
class TransitionDef:
    name: str
    consumes: dict  # input places multiset
    produces: dict  # output places multiset
    assigned_node: str
    input_variables: tuple = ()
    output_variables: tuple = ()
    external_call: str | None = None


@dataclass(frozen=True)
class WorkflowModel:
    model_id: str
    places: frozenset
    transitions: tuple  # tuple[TransitionDef, ...]
    initial_marking: dict
    variables: tuple = ()  # tuple[(name, value_type), ...]
    constraints: tuple = ()  # tuple[DataConstraint, ...]
    end_places: frozenset = frozenset()

    def transition(self, name: str) -> TransitionDef | None:
        for t in self.transitions:
            if t.name == name:
                return t
        return None

    def variable_types(self) -> dict:
        return dict(self.variables)

    def validate_structure(self) -> None:
        """Raise MalformedModel naming the violated invariant."""
        if not self.model_id:
            raise MalformedModel("model id must be nonempty")
        if not self.places:
            raise MalformedModel("model declares no places")
        names = [t.name for t in self.transitions]
        if len(set(names)) != len(names):
            raise MalformedModel("transition names must be unique")
        declared = {name for name, _ in self.variables}
        if len(declared) != len(self.variables):
            raise MalformedModel("variable names must be unique")
        for _, value_type in self.variables:
            if value_type not in VALUE_TYPES:
                raise MalformedModel(f"unknown variable type {value_type}")
        if not self.initial_marking:
            raise MalformedModel("initial marking must be nonempty")
        for place in self.initial_marking:
            if place not in self.places:
                raise MalformedModel(f"initial marking references unknown place {place}")
        if not self.end_places <= self.places:
            raise MalformedModel("end places must be declared places")
        for t in self.transitions:
            if not t.consumes:
                raise MalformedModel(
                    f"transition {t.name} has no input places")
            for place in list(t.consumes) + list(t.produces):
                if place not in self.places:
                    raise MalformedModel(
                        f"transition {t.name} references unknown place {place}")
            if not t.assigned_node:
                raise MalformedModel(f"transition {t.name} has no assigned node")
            for var in tuple(t.input_variables) + tuple(t.output_variables):
                if var not in declared:
                    raise MalformedModel(
                        f"transition {t.name} references undeclared variable {var}")
        for constraint in self.constraints:
            for var in constraint.variables():
                if var not in declared:
                    raise MalformedModel(
                        f"constraint references undeclared variable {var}")

    def check_data_types(self, data: dict) -> str | None:
        """None when every value matches its declared type; else a reason."""
        types = self.variable_types()
        for name, value in data.items():
            if name not in types:
                return f"undeclared variable {name}"
            if not value_matches_type(value, types[name]):
                return f"variable {name} expects {types[name]}"
        return None

    def constraints_satisfied(self, data: dict) -> tuple[bool, str | None]:
        for constraint in self.constraints:
            if not constraint.satisfied(data):
                return False, constraint.description
        return True, None

    # -- canonical form ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "places": sorted(self.places),
            "transitions": [
                {
                    "name": t.name,
                    "consumes": dict(t.consumes),
                    "produces": dict(t.produces),
                    "node": t.assigned_node,
                    "inputs": list(t.input_variables),
                    "outputs": list(t.output_variables),
                    "external": t.external_call,
                }
                for t in self.transitions
            ],
            "initial_marking": dict(self.initial_marking),
            "variables": [[name, vt] for name, vt in self.variables],
            "constraints": [
                {
                    "description": c.description,
                    "atoms": [[list(a.lhs), a.op, list(a.rhs)] for a in c.atoms],
                }
                for c in self.constraints
            ],
            "end_places": sorted(self.end_places),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "WorkflowModel":
        transitions = tuple(
            TransitionDef(
                name=t["name"],
                consumes=normalize_marking(t["consumes"]),
                produces=normalize_marking(t.get("produces", {})),
                assigned_node=t["node"],
                input_variables=tuple(t.get("inputs", ())),
                output_variables=tuple(t.get("outputs", ())),
                external_call=t.get("external"),
            )
            for t in raw["transitions"]
        )
        constraints = tuple(
            DataConstraint(
                description=c["description"],
                atoms=tuple(
                    ConstraintAtom(tuple(lhs), op, tuple(rhs))
                    for lhs, op, rhs in c["atoms"]
                ),
            )
            for c in raw.get("constraints", ())
        )
        return cls(
            model_id=raw["model_id"],
            places=frozenset(raw["places"]),
            transitions=transitions,
            initial_marking=normalize_marking(raw["initial_marking"]),
            variables=tuple((name, vt) for name, vt in raw.get("variables", ())),
            constraints=constraints,
            end_places=frozenset(raw.get("end_places", ())),
        )

    def to_bytes(self) -> bytes:
        return codec.encode(self.to_dict())

    @classmethod
    def from_bytes(cls, data: bytes) -> "WorkflowModel":
        return cls.from_dict(codec.decode(data))
