"""Typed expression trees: primitives, registries, evaluation, and serialization.

Three node types exist. Feat nodes carry data values; Pos and Thr nodes appear
only as the parameter slots of gate primitives (steepness and threshold). Trees
are immutable after construction; every structural edit builds a new tree and
shares untouched subtrees.

Complexity is the total typed node count, constants included, so a bare
lgo_thre(x; a, b) costs 4 nodes: the gate, its feature input, and the two
parameter terminals.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

import numpy as np

from . import gates
from .errors import ConfigError, ParseError


class TypeTag(enum.Enum):
    FEAT = "Feat"
    POS = "Pos"
    THR = "Thr"


@dataclass(frozen=True, slots=True)
class Primitive:
    """A typed operator: name, argument types, return type, and a cost weight.

    cost_weight feeds engine-native complexity measures; the unified complexity
    used everywhere in this package is the plain node count.
    frozen_slots marks argument positions that variation operators must never
    select (the integer exponent of pow).
    """

    name: str
    arg_types: tuple[TypeTag, ...]
    return_type: TypeTag
    cost_weight: float = 1.0
    frozen_slots: frozenset[int] = frozenset()

    @property
    def arity(self) -> int:
        return len(self.arg_types)


@dataclass(frozen=True, slots=True)
class Feature:
    index: int
    name: str


@dataclass(frozen=True, slots=True)
class Const:
    value: float


@dataclass(frozen=True, slots=True)
class PosConst:
    """Pre-softplus steepness parameter a~; the effective steepness is softplus(a~)."""

    a_tilde: float


@dataclass(frozen=True, slots=True)
class ThrConst:
    """Threshold parameter b_z in standardized units, kept inside [-3, 3]."""

    b_z: float


@dataclass(frozen=True, slots=True)
class Call:
    prim: Primitive
    args: tuple["Node", ...]


Node = Feature | Const | PosConst | ThrConst | Call


@dataclass(frozen=True)
class GateParams:
    """The (a~, b_z) pair carried by one gate node."""

    a_tilde: float
    b_z: float

    @property
    def a(self) -> float:
        return float(gates.softplus(self.a_tilde))


F, P, T = TypeTag.FEAT, TypeTag.POS, TypeTag.THR

_ARITHMETIC = (
    Primitive("add", (F, F), F),
    Primitive("sub", (F, F), F),
    Primitive("mul", (F, F), F),
    Primitive("div", (F, F), F),
    Primitive("sqrt", (F,), F),
    Primitive("log", (F,), F),
    Primitive("pow", (F, F), F, frozen_slots=frozenset({1})),
    Primitive("exp", (F,), F),
    Primitive("inv", (F,), F),
)

_SOFT_GATES = (
    Primitive("lgo", (F, P, T), F),
    Primitive("lgo_pair", (F, F, P, T), F),
    Primitive("lgo_and2", (F, F, P, T), F),
    Primitive("lgo_or2", (F, F, P, T), F),
    Primitive("lgo_and3", (F, F, F, P, T), F),
    Primitive("gate_expr", (F, P, T), F),
)

_HARD_GATES = (
    Primitive("lgo_thre", (F, P, T), F),
    Primitive("lgo_and2", (F, F, P, T), F),
    Primitive("lgo_or2", (F, F, P, T), F),
    Primitive("gate_expr", (F, P, T), F),
)

GATE_NAMES = frozenset(
    {"lgo", "lgo_thre", "lgo_pair", "lgo_and2", "lgo_or2", "lgo_and3", "gate_expr"}
)

# Exponents allowed in pow's frozen slot. Generation draws from POW_EXPONENTS.
POW_EXPONENTS = (2, 3)
_PARSEABLE_EXPONENTS = (0, 1, 2, 3)

OPERATOR_SETS = ("base", "soft", "hard")


class PrimitiveRegistry:
    """The primitives available to one experiment arm (base, soft, or hard)."""

    def __init__(self, operator_set: str, primitives: tuple[Primitive, ...]):
        self.operator_set = operator_set
        self.primitives = primitives
        self.by_name = {p.name: p for p in primitives}
        self.feat_primitives = tuple(p for p in primitives if p.return_type is F)
        self.gates = tuple(p for p in primitives if p.name in GATE_NAMES)

    def __contains__(self, name: str) -> bool:
        return name in self.by_name

    def __getitem__(self, name: str) -> Primitive:
        return self.by_name[name]


def register_primitives(operator_set: str) -> PrimitiveRegistry:
    """Build the registry for one operator set.

    base: arithmetic only. soft: adds {lgo, lgo_pair, lgo_and2, lgo_or2,
    lgo_and3, gate_expr}. hard: adds {lgo_thre, lgo_and2, lgo_or2, gate_expr}.
    """
    if operator_set == "base":
        prims = _ARITHMETIC
    elif operator_set == "soft":
        prims = _ARITHMETIC + _SOFT_GATES
    elif operator_set == "hard":
        prims = _ARITHMETIC + _HARD_GATES
    else:
        raise ConfigError(
            "unknown operator set %r (expected one of %s)" % (operator_set, ", ".join(OPERATOR_SETS))
        )
    return PrimitiveRegistry(operator_set, prims)


def is_gate(node: Node) -> bool:
    return isinstance(node, Call) and node.prim.name in GATE_NAMES


def gate_params(node: Call) -> GateParams:
    """Read the (a~, b_z) pair off a gate node's parameter slots."""
    if not is_gate(node):
        raise ValueError("gate_params called on non-gate node %r" % (node,))
    pos = node.args[-2]
    thr = node.args[-1]
    assert isinstance(pos, PosConst) and isinstance(thr, ThrConst)
    return GateParams(pos.a_tilde, thr.b_z)


def with_gate_params(node: Call, a_tilde: float, b_z: float) -> Call:
    """Copy of a gate node with new parameter terminals."""
    args = node.args[:-2] + (PosConst(float(a_tilde)), ThrConst(float(b_z)))
    return Call(node.prim, args)


def return_type(node: Node) -> TypeTag:
    if isinstance(node, Call):
        return node.prim.return_type
    if isinstance(node, PosConst):
        return P
    if isinstance(node, ThrConst):
        return T
    return F


def complexity(node: Node) -> int:
    """Total node count: functional nodes plus all terminals, constants included."""
    count = 0
    stack = [node]
    while stack:
        n = stack.pop()
        count += 1
        if isinstance(n, Call):
            stack.extend(n.args)
    return count


def depth(node: Node) -> int:
    """Longest root-to-leaf path in edges; a bare terminal has depth 0."""
    if not isinstance(node, Call):
        return 0
    return 1 + max(depth(a) for a in node.args)


def gate_count(node: Node) -> int:
    count = 0
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Call):
            if n.prim.name in GATE_NAMES:
                count += 1
            stack.extend(n.args)
    return count


def is_well_typed(node: Node, expected: TypeTag = F) -> bool:
    """Check slot types everywhere, plus the integer restriction on pow exponents."""
    if return_type(node) is not expected:
        return False
    if isinstance(node, Call):
        if node.prim.arity != len(node.args):
            return False
        for arg, want in zip(node.args, node.prim.arg_types):
            if not is_well_typed(arg, want):
                return False
        if node.prim.name == "pow":
            exp_node = node.args[1]
            if not isinstance(exp_node, Const):
                return False
            if exp_node.value != int(exp_node.value) or int(exp_node.value) not in _PARSEABLE_EXPONENTS:
                return False
    return True


# --- evaluation ---

_EVAL_2 = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": gates.protected_div,
    "pow": gates.integer_pow,
}

_EVAL_1 = {
    "sqrt": gates.protected_sqrt,
    "log": gates.protected_log,
    "exp": gates.protected_exp,
    "inv": gates.protected_inv,
}

_EVAL_GATE = {
    "lgo": gates.lgo_soft,
    "lgo_thre": gates.lgo_hard,
    "lgo_pair": gates.lgo_pair,
    "lgo_and2": gates.lgo_and2,
    "lgo_or2": gates.lgo_or2,
    "lgo_and3": gates.lgo_and3,
    "gate_expr": gates.gate_expr,
}


def _eval(node: Node, X: np.ndarray):
    if isinstance(node, Feature):
        return X[:, node.index]
    if isinstance(node, Const):
        return node.value
    if isinstance(node, PosConst):
        return float(gates.softplus(node.a_tilde))
    if isinstance(node, ThrConst):
        return node.b_z
    name = node.prim.name
    fn = _EVAL_GATE.get(name)
    if fn is not None:
        vals = [_eval(a, X) for a in node.args]
        return fn(*vals)
    fn = _EVAL_2.get(name)
    if fn is not None:
        return fn(_eval(node.args[0], X), _eval(node.args[1], X))
    return _EVAL_1[name](_eval(node.args[0], X))


def evaluate(node: Node, X: np.ndarray) -> np.ndarray:
    """Evaluate a tree over a (n, d) matrix of standardized features.

    Returns a length-n vector. Overflow in unguarded spots (deep mul/pow chains)
    yields inf and is handled by callers as an invalid candidate.
    """
    X = np.asarray(X, dtype=float)
    with np.errstate(all="ignore"):
        out = _eval(node, X)
    out = np.asarray(out, dtype=float)
    if out.ndim == 0:
        out = np.full(X.shape[0], float(out))
    return out


# --- serialization ---

def print_expr(node: Node) -> str:
    """Canonical prefix form; constants at full precision (repr round-trip).

    Gate steepness is serialized pre-softplus (the learnable a~).
    """
    if isinstance(node, Feature):
        return node.name
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, PosConst):
        return repr(node.a_tilde)
    if isinstance(node, ThrConst):
        return repr(node.b_z)
    return "%s(%s)" % (node.prim.name, ", ".join(print_expr(a) for a in node.args))


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<punct>[(),]))"
)


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError("unexpected character %r at position %d" % (text[pos], pos))
        out.append((m.lastgroup, m.group(m.lastgroup)))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, tokens, registry: PrimitiveRegistry, feature_names):
        self.tokens = tokens
        self.i = 0
        self.registry = registry
        self.feature_index = {name: i for i, name in enumerate(feature_names)}

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("end", "")

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value):
        kind, val = self.take()
        if val != value:
            raise ParseError("expected %r but found %r" % (value, val or "end of input"))

    def parse(self, expected: TypeTag) -> Node:
        kind, val = self.take()
        if kind == "num":
            value = float(val)
            if expected is P:
                return PosConst(value)
            if expected is T:
                return ThrConst(value)
            return Const(value)
        if kind != "name":
            raise ParseError("unexpected token %r" % (val or "end of input",))
        if self.peek() == ("punct", "("):
            prim = self.registry.by_name.get(val)
            if prim is None:
                raise ParseError("unknown symbol %r" % (val,))
            if prim.return_type is not expected:
                raise ParseError(
                    "type mismatch: %r returns %s where %s expected"
                    % (val, prim.return_type.value, expected.value)
                )
            self.expect("(")
            args = []
            for slot, want in enumerate(prim.arg_types):
                if slot:
                    self.expect(",")
                args.append(self.parse(want))
            kindp, valp = self.peek()
            if (kindp, valp) == ("punct", ","):
                raise ParseError("arity mismatch: %r takes %d arguments" % (val, prim.arity))
            self.expect(")")
            node = Call(prim, tuple(args))
            if prim.name == "pow":
                exp_node = args[1]
                if not isinstance(exp_node, Const) or exp_node.value != int(exp_node.value) or int(
                    exp_node.value
                ) not in _PARSEABLE_EXPONENTS:
                    raise ParseError("pow exponent must be an integer constant in %s" % (_PARSEABLE_EXPONENTS,))
            return node
        if expected is not F:
            raise ParseError(
                "type mismatch: feature %r found where %s expected" % (val, expected.value)
            )
        idx = self.feature_index.get(val)
        if idx is None:
            raise ParseError("unknown symbol %r" % (val,))
        return Feature(idx, val)


def parse_expr(text: str, registry: PrimitiveRegistry, feature_names) -> Node:
    """Parse the canonical prefix form back into a tree.

    The slot type of each position decides whether a numeric literal becomes a
    Const, PosConst, or ThrConst, so print -> parse is a structural round trip.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise ParseError("empty expression")
    parser = _Parser(tokens, registry, feature_names)
    node = parser.parse(F)
    if parser.i != len(tokens):
        raise ParseError("trailing input starting at %r" % (parser.peek()[1],))
    return node


# --- structural utilities ---

def points(node: Node):
    """All (path, node, selectable) triples in preorder.

    path is a tuple of child indices from the root. selectable is False for
    nodes sitting in a frozen slot (pow exponents), which variation operators
    must skip.
    """
    out = []

    def walk(n: Node, path: tuple, selectable: bool):
        out.append((path, n, selectable))
        if isinstance(n, Call):
            for i, a in enumerate(n.args):
                walk(a, path + (i,), i not in n.prim.frozen_slots)

    walk(node, (), True)
    return out


def subtree_at(node: Node, path: tuple) -> Node:
    for i in path:
        node = node.args[i]
    return node


def replace_at(node: Node, path: tuple, new: Node) -> Node:
    """New tree with the subtree at path replaced; untouched subtrees are shared."""
    if not path:
        return new
    i = path[0]
    args = node.args[:i] + (replace_at(node.args[i], path[1:], new),) + node.args[i + 1 :]
    return Call(node.prim, args)


# --- random typed generation ---

CONST_RANGE = (-2.0, 2.0)
THR_INIT_RANGE = (-1.5, 1.5)
STEEPNESS_INIT_RANGE = (1.0, 5.0)
_GROW_TERMINAL_PROB = 0.3


def random_tree(
    registry: PrimitiveRegistry,
    feature_names,
    rng: np.random.Generator,
    max_depth: int,
    method: str = "grow",
    rtype: TypeTag = F,
) -> Node:
    """Generate a random well-typed tree of depth <= max_depth.

    method "full" places primitives until the depth budget runs out; "grow"
    may stop early at terminals. Pos and Thr slots are always terminals with
    threshold ~ U[-1.5, 1.5] and steepness softplus(a~) ~ U[1, 5]. Ephemeral
    constants are drawn uniform on [-2, 2].
    """
    if rtype is P:
        a = rng.uniform(*STEEPNESS_INIT_RANGE)
        return PosConst(gates.inv_softplus(a))
    if rtype is T:
        return ThrConst(float(rng.uniform(*THR_INIT_RANGE)))
    n_features = len(feature_names)
    terminal = max_depth <= 0 or (method == "grow" and rng.random() < _GROW_TERMINAL_PROB)
    if terminal:
        choice = int(rng.integers(0, n_features + 1))
        if choice < n_features:
            return Feature(choice, feature_names[choice])
        return Const(float(rng.uniform(*CONST_RANGE)))
    prim = registry.feat_primitives[int(rng.integers(0, len(registry.feat_primitives)))]
    args = []
    for slot, want in enumerate(prim.arg_types):
        if prim.name == "pow" and slot in prim.frozen_slots:
            args.append(Const(float(rng.choice(POW_EXPONENTS))))
        else:
            args.append(random_tree(registry, feature_names, rng, max_depth - 1, method, want))
    return Call(prim, tuple(args))
