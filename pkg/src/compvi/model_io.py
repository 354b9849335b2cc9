"""JSON interchange format for string diagrams of open MDPs.

A document looks like::

    {
      "numeric_mode": "exact",
      "leaves": {
        "A": {
          "states": ["i", "s", "o"],
          "transitions": [["i", "go", [["s", "1"]]], ["s", "a", [["o", "1/2"], ["s", "1/2"]]]],
          "right_entrances": ["i"], "left_entrances": [],
          "right_exits": ["o"], "left_exits": []
        }
      },
      "diagram": {"seq": [{"leaf": "A"}, {"leaf": "A"}]},
      "query": {"entrance": "A#1/i", "weights": {"A#2/o": "1"}, "epsilon": 1e-4}
    }

Probabilities and weights are decimal strings, "num/den" strings or numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .diagram import Leaf, OpenMdp, Seq, StringDiagram, Sum, validate_arities
from .mdp import Mdp, MdpError, NumericMode, parse_probability

IO_KEYS = ("right_entrances", "left_entrances", "right_exits", "left_exits")


class ModelFormatError(ValueError):
    """A malformed model document; the message starts with the JSON path."""


@dataclass
class Query:
    entrance: str | None = None
    weights: dict | None = None
    goal: str | None = None
    epsilon: float | None = None

    def resolve_weights(self, exit_names) -> list:
        """One weight per global exit, in order."""
        if self.weights is None:
            if self.goal is None:
                raise ModelFormatError("$.query: needs 'weights' or 'goal'")
            if self.goal not in exit_names:
                raise ModelFormatError(f"$.query.goal: {self.goal!r} is not a global exit")
            return [Fraction(int(n == self.goal)) for n in exit_names]
        unknown = set(self.weights) - set(exit_names)
        if unknown:
            raise ModelFormatError(f"$.query.weights: not a global exit: {sorted(unknown)[0]!r}")
        missing = [n for n in exit_names if n not in self.weights]
        if missing:
            raise ModelFormatError(f"$.query.weights: missing weight for global exit {missing[0]!r}")
        return [self.weights[n] for n in exit_names]


@dataclass
class Model:
    diagram: StringDiagram
    query: Query = field(default_factory=Query)
    metadata: dict = field(default_factory=dict)
    numeric_mode: NumericMode = NumericMode.EXACT


def _req(obj, key, path, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ModelFormatError(f"{path}: missing key {key!r}")
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise ModelFormatError(f"{path}.{key}: expected {kind.__name__}")
    return val


def _prob(x, path) -> Fraction:
    try:
        return parse_probability(x)
    except MdpError:
        raise ModelFormatError(f"{path}: not a probability: {x!r}") from None


def parse_leaf(doc, path, mode) -> OpenMdp:
    states = _req(doc, "states", path, list)
    trans = _req(doc, "transitions", path, list)
    parsed = []
    for k, t in enumerate(trans):
        p = f"{path}.transitions[{k}]"
        if not isinstance(t, list) or len(t) != 3 or not isinstance(t[2], list):
            raise ModelFormatError(f"{p}: expected [src, action, [[dst, prob], ...]]")
        dist = []
        for j, e in enumerate(t[2]):
            if not isinstance(e, list) or len(e) != 2:
                raise ModelFormatError(f"{p}[2][{j}]: expected [dst, prob]")
            dist.append((e[0], _prob(e[1], f"{p}[2][{j}][1]")))
        parsed.append((t[0], t[1], dist))
    try:
        mdp = Mdp.build(states, parsed, mode)
    except MdpError as e:
        raise ModelFormatError(f"{path}: {e}") from None
    ends = {}
    for key in IO_KEYS:
        lst = doc.get(key, [])
        if not isinstance(lst, list):
            raise ModelFormatError(f"{path}.{key}: expected list")
        for j, s in enumerate(lst):
            if s not in mdp.index:
                raise ModelFormatError(f"{path}.{key}[{j}]: unknown state {s!r}")
        ends[key] = lst
    try:
        return OpenMdp(mdp, **ends)
    except MdpError as e:
        raise ModelFormatError(f"{path}: {e}") from None


def parse_term(doc, path):
    if not isinstance(doc, dict) or len(doc) != 1:
        raise ModelFormatError(f"{path}: expected one of {{leaf}}, {{seq}}, {{sum}}")
    (key, val), = doc.items()
    if key == "leaf":
        if not isinstance(val, str):
            raise ModelFormatError(f"{path}.leaf: expected a leaf name")
        return Leaf(val)
    if key in ("seq", "sum"):
        if not isinstance(val, list) or len(val) < 1:
            raise ModelFormatError(f"{path}.{key}: expected a non-empty list")
        parts = tuple(parse_term(v, f"{path}.{key}[{k}]") for k, v in enumerate(val))
        if len(parts) == 1:
            return parts[0]
        return Seq(parts) if key == "seq" else Sum(parts)
    raise ModelFormatError(f"{path}: unknown node {key!r}")


def parse_model(doc) -> Model:
    if not isinstance(doc, dict):
        raise ModelFormatError("$: expected an object")
    mode_txt = doc.get("numeric_mode", "exact")
    try:
        mode = NumericMode(mode_txt)
    except ValueError:
        raise ModelFormatError(f"$.numeric_mode: unknown mode {mode_txt!r}") from None
    leaves_doc = _req(doc, "leaves", "$", dict)
    leaves = {name: parse_leaf(ld, f"$.leaves.{name}", mode) for name, ld in leaves_doc.items()}
    root = parse_term(_req(doc, "diagram", "$"), "$.diagram")
    d = StringDiagram(root, leaves)
    errs = validate_arities(d)
    if errs:
        raise ModelFormatError("$.diagram: " + "; ".join(str(e) for e in errs))
    q = doc.get("query", {})
    if not isinstance(q, dict):
        raise ModelFormatError("$.query: expected an object")
    weights = q.get("weights")
    if weights is not None:
        if not isinstance(weights, dict):
            raise ModelFormatError("$.query.weights: expected an object")
        weights = {k: _prob(v, f"$.query.weights.{k}") for k, v in weights.items()}
    eps = q.get("epsilon")
    if eps is not None and not isinstance(eps, (int, float)):
        raise ModelFormatError("$.query.epsilon: expected a number")
    query = Query(q.get("entrance"), weights, q.get("goal"), eps)
    return Model(d, query, dict(doc.get("metadata", {})), mode)


def load_model(src) -> Model:
    """Load from a path, a JSON string or an already parsed dict."""
    if isinstance(src, dict):
        return parse_model(src)
    if isinstance(src, Path) or (isinstance(src, str) and not src.lstrip().startswith("{")):
        try:
            text = Path(src).read_text()
        except OSError as e:
            raise ModelFormatError(f"$: cannot read {src}: {e}") from None
    else:
        text = src
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"$: invalid JSON: {e}") from None
    return parse_model(doc)


def _num(p: Fraction) -> str:
    return str(p.numerator) if p.denominator == 1 else f"{p.numerator}/{p.denominator}"


def leaf_to_doc(leaf: OpenMdp) -> dict:
    mdp = leaf.mdp
    trans = []
    for s in range(mdp.n_states):
        for r in mdp.rows(s):
            trans.append([mdp.names[s], mdp.action_label(r),
                          [[mdp.names[d], _num(p)] for d, p in mdp.successors(r)]])
    doc = {"states": list(mdp.names), "transitions": trans}
    for key in IO_KEYS:
        doc[key] = [mdp.names[s] for s in getattr(leaf, key)]
    return doc


def term_to_doc(t) -> dict:
    if isinstance(t, Leaf):
        return {"leaf": t.name}
    key = "seq" if isinstance(t, Seq) else "sum"
    return {key: [term_to_doc(p) for p in t.parts]}


def model_to_doc(model: Model) -> dict:
    q = model.query
    qdoc = {}
    if q.entrance is not None:
        qdoc["entrance"] = q.entrance
    if q.weights is not None:
        qdoc["weights"] = {k: _num(Fraction(v)) for k, v in q.weights.items()}
    if q.goal is not None:
        qdoc["goal"] = q.goal
    if q.epsilon is not None:
        qdoc["epsilon"] = q.epsilon
    doc = {
        "numeric_mode": model.numeric_mode.value,
        "leaves": {name: leaf_to_doc(l) for name, l in model.diagram.leaves.items()},
        "diagram": term_to_doc(model.diagram.root),
        "query": qdoc,
    }
    if model.metadata:
        doc["metadata"] = model.metadata
    return doc


def dump_model(model: Model, path=None) -> str:
    text = json.dumps(model_to_doc(model), sort_keys=True, separators=(",", ":"))
    if path is not None:
        Path(path).write_text(text)
    return text
