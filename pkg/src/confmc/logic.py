"""Formula language for requirements over (cell, speed, env) states.

Concrete syntax (ASCII, CLI-typeable)::

    G(env=ped | !(cell=56 & speed=0))
    F<=9(cell=56 & speed=0)
    (speed>0) U (cell=56)

Operators by binding strength: unary (!, G, F, X) over U over & over | over
->. Temporal operators conventionally take a parenthesized argument; a unary
temporal may also directly prefix another unary term, so nested temporal
text like ``G F (cell=1)`` still parses (and is then rejected by
``classify``, not the parser). Implication is desugared to ``!a | b`` while
parsing.

The checkable fragment is a single top-level temporal operator over
propositional bodies: invariants G p, reachability F p, p U q, next X p, and
their step-bounded forms. Anything deeper classifies as unsupported and is
reported with the offending subtree.
"""

import enum
from dataclasses import dataclass

from .scenario import SystemState


class ParseError(ValueError):
    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        self.offset = offset
        self.expected = expected
        detail = f" (expected one of {', '.join(expected)})" if expected else ""
        super().__init__(f"at offset {offset}: {message}{detail}")


# --- AST ---------------------------------------------------------------------


class Formula:
    """Base class for AST nodes. Nodes are frozen and compare structurally."""

    def __str__(self) -> str:  # pragma: no cover - overridden
        raise NotImplementedError


@dataclass(frozen=True)
class Atom(Formula):
    """Comparison over one state component: cell/speed vs an integer, or an
    env equality. Out-of-range operands are legal and simply never hold."""

    var: str  # "cell" | "speed" | "env"
    op: str  # "=" | "<=" | ">=" | "<" | ">" (env only "=")
    value: int | str

    def __str__(self):
        return f"{self.var}{self.op}{self.value}"


@dataclass(frozen=True)
class Not(Formula):
    child: Formula

    def __str__(self):
        return f"!{_wrap(self.child, atom_ok=True)}"


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"{_wrap_bin(self.left, (Or, Implies))} & {_wrap_bin(self.right, (Or, Implies, And))}"


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"{_wrap_bin(self.left, (Implies,))} | {_wrap_bin(self.right, (Implies, Or))}"


@dataclass(frozen=True)
class Implies(Formula):
    """Present for completeness; the parser desugars ``a -> b`` away."""

    left: Formula
    right: Formula

    def __str__(self):
        return f"({self.left}) -> ({self.right})"


@dataclass(frozen=True)
class Next(Formula):
    child: Formula

    def __str__(self):
        return f"X({self.child})"


@dataclass(frozen=True)
class Always(Formula):
    child: Formula

    def __str__(self):
        return f"G({self.child})"


@dataclass(frozen=True)
class Eventually(Formula):
    child: Formula

    def __str__(self):
        return f"F({self.child})"


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"({self.left}) U ({self.right})"


@dataclass(frozen=True)
class BoundedAlways(Formula):
    child: Formula
    bound: int

    def __str__(self):
        return f"G<={self.bound}({self.child})"


@dataclass(frozen=True)
class BoundedEventually(Formula):
    child: Formula
    bound: int

    def __str__(self):
        return f"F<={self.bound}({self.child})"


@dataclass(frozen=True)
class BoundedUntil(Formula):
    left: Formula
    right: Formula
    bound: int

    def __str__(self):
        return f"({self.left}) U<={self.bound} ({self.right})"


def _wrap(f: Formula, atom_ok: bool = False) -> str:
    if atom_ok and isinstance(f, (Atom, Not)):
        return str(f)
    if isinstance(f, (Next, Always, Eventually, BoundedAlways, BoundedEventually)):
        return str(f)
    return f"({f})"


def _wrap_bin(f: Formula, needs_parens: tuple) -> str:
    if isinstance(f, needs_parens) or isinstance(f, (Until, BoundedUntil)):
        return f"({f})"
    return str(f)


TEMPORAL_NODES = (Next, Always, Eventually, Until, BoundedAlways, BoundedEventually, BoundedUntil)


# --- tokenizer / parser ------------------------------------------------------

_PUNCT = ("<=", ">=", "->", "(", ")", "!", "&", "|", "=", "<", ">")


@dataclass(frozen=True)
class _Token:
    kind: str  # "ident" | "int" | punctuation literal | "eof"
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        matched = False
        for p in _PUNCT:
            if text.startswith(p, i):
                tokens.append(_Token(p, p, i))
                i += len(p)
                matched = True
                break
        if matched:
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(_Token("int", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("ident", text[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(_Token("eof", "", n))
    return tokens


_CMP_OPS = ("=", "<=", ">=", "<", ">")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ParseError(f"found {tok.text or 'end of input'!r}", tok.offset, (kind,))
        return self.advance()

    def parse(self) -> Formula:
        f = self.formula()
        tok = self.peek()
        if tok.kind != "eof":
            raise ParseError(f"trailing input {tok.text!r}", tok.offset, ("eof",))
        return f

    def formula(self) -> Formula:
        left = self.or_expr()
        if self.peek().kind == "->":
            self.advance()
            right = self.formula()  # right associative
            return Or(Not(left), right)
        return left

    def or_expr(self) -> Formula:
        left = self.and_expr()
        while self.peek().kind == "|":
            self.advance()
            left = Or(left, self.and_expr())
        return left

    def and_expr(self) -> Formula:
        left = self.until_expr()
        while self.peek().kind == "&":
            self.advance()
            left = And(left, self.until_expr())
        return left

    def until_expr(self) -> Formula:
        left = self.unary()
        while self.peek().kind == "ident" and self.peek().text == "U":
            self.advance()
            bound = self.opt_bound()
            right = self.unary()
            left = Until(left, right) if bound is None else BoundedUntil(left, right, bound)
        return left

    def opt_bound(self) -> int | None:
        if self.peek().kind == "<=":
            self.advance()
            tok = self.expect("int")
            return int(tok.text)
        return None

    def unary(self) -> Formula:
        tok = self.peek()
        if tok.kind == "!":
            self.advance()
            return Not(self.unary())
        if tok.kind == "ident" and tok.text in ("G", "F", "X"):
            self.advance()
            bound = self.opt_bound()
            if tok.text == "X":
                if bound is not None:
                    raise ParseError("next operator takes no bound", tok.offset)
                return Next(self.unary())
            child = self.unary()
            if tok.text == "G":
                return Always(child) if bound is None else BoundedAlways(child, bound)
            return Eventually(child) if bound is None else BoundedEventually(child, bound)
        if tok.kind == "(":
            self.advance()
            inner = self.formula()
            self.expect(")")
            return inner
        return self.atom()

    def atom(self) -> Formula:
        tok = self.peek()
        if tok.kind != "ident":
            raise ParseError(
                f"found {tok.text or 'end of input'!r}",
                tok.offset,
                ("cell", "speed", "env", "(", "!", "G", "F", "X"),
            )
        if tok.text == "env":
            self.advance()
            self.expect("=")
            name = self.expect("ident")
            return Atom("env", "=", name.text)
        if tok.text in ("cell", "speed"):
            self.advance()
            op = self.peek()
            if op.kind not in _CMP_OPS:
                raise ParseError(f"found {op.text!r}", op.offset, _CMP_OPS)
            self.advance()
            value = self.expect("int")
            return Atom(tok.text, op.kind, int(value.text))
        raise ParseError(f"unknown identifier {tok.text!r}", tok.offset, ("cell", "speed", "env"))


def parse(text: str) -> Formula:
    """Parse formula text to an AST. Raises ParseError with the byte offset
    and the expected-token set on malformed input."""
    return _Parser(text).parse()


# --- fragment classification -------------------------------------------------


class Shape(enum.Enum):
    INVARIANT = "invariant"
    REACH = "reach"
    UNTIL = "until"
    NEXT = "next"
    BOUNDED_INVARIANT = "bounded-invariant"
    BOUNDED_REACH = "bounded-reach"
    BOUNDED_UNTIL = "bounded-until"
    UNSUPPORTED = "unsupported"


@dataclass(frozen=True)
class Classification:
    shape: Shape
    offender: Formula | None = None


def _first_temporal(f: Formula) -> Formula | None:
    if isinstance(f, TEMPORAL_NODES):
        return f
    if isinstance(f, Not):
        return _first_temporal(f.child)
    if isinstance(f, (And, Or, Implies)):
        return _first_temporal(f.left) or _first_temporal(f.right)
    return None


def is_propositional(f: Formula) -> bool:
    return _first_temporal(f) is None


def classify(f: Formula) -> Classification:
    """Map a formula to its checkable shape.

    Exactly one top-level temporal operator with propositional bodies is
    supported; everything else (including purely propositional formulas and
    nested temporal operators) is Unsupported, carrying the offending
    subtree.
    """
    if isinstance(f, (Always, BoundedAlways)):
        bad = _first_temporal(f.child)
        if bad is not None:
            return Classification(Shape.UNSUPPORTED, bad)
        return Classification(
            Shape.INVARIANT if isinstance(f, Always) else Shape.BOUNDED_INVARIANT
        )
    if isinstance(f, (Eventually, BoundedEventually)):
        bad = _first_temporal(f.child)
        if bad is not None:
            return Classification(Shape.UNSUPPORTED, bad)
        return Classification(Shape.REACH if isinstance(f, Eventually) else Shape.BOUNDED_REACH)
    if isinstance(f, (Until, BoundedUntil)):
        bad = _first_temporal(f.left) or _first_temporal(f.right)
        if bad is not None:
            return Classification(Shape.UNSUPPORTED, bad)
        return Classification(Shape.UNTIL if isinstance(f, Until) else Shape.BOUNDED_UNTIL)
    if isinstance(f, Next):
        bad = _first_temporal(f.child)
        if bad is not None:
            return Classification(Shape.UNSUPPORTED, bad)
        return Classification(Shape.NEXT)
    return Classification(Shape.UNSUPPORTED, f)


# --- evaluation and chain labeling -------------------------------------------


def eval_atom(s: SystemState, a: Atom) -> bool:
    """Pointwise truth of one comparison at a system state."""
    if a.var == "env":
        return s.env.value == a.value
    lhs = s.agent.cell if a.var == "cell" else s.agent.speed
    rhs = a.value
    if a.op == "=":
        return lhs == rhs
    if a.op == "<=":
        return lhs <= rhs
    if a.op == ">=":
        return lhs >= rhs
    if a.op == "<":
        return lhs < rhs
    return lhs > rhs


def eval_prop(s: SystemState, f: Formula) -> bool:
    """Truth of a propositional formula at a single state."""
    if isinstance(f, Atom):
        return eval_atom(s, f)
    if isinstance(f, Not):
        return not eval_prop(s, f.child)
    if isinstance(f, And):
        return eval_prop(s, f.left) and eval_prop(s, f.right)
    if isinstance(f, Or):
        return eval_prop(s, f.left) or eval_prop(s, f.right)
    if isinstance(f, Implies):
        return (not eval_prop(s, f.left)) or eval_prop(s, f.right)
    raise ValueError(f"not a propositional formula: {f}")


@dataclass(frozen=True)
class LabeledSets:
    """State-index sets feeding the checker, one field group per shape."""

    shape: Shape
    safe: frozenset[int] | None = None
    target: frozenset[int] | None = None
    hold: frozenset[int] | None = None  # the p-set of p U q
    goal: frozenset[int] | None = None  # the q-set of p U q
    bound: int | None = None


def label_chain(chain, f: Formula | str) -> LabeledSets:
    """Evaluate the formula's propositional bodies over a chain's states.

    Returns the exact index sets the probability engines consume: the safe
    set of an invariant, the target of a reachability query, or the
    (hold, goal) pair of an until. The chain only needs an indexable
    ``states`` list of SystemState.
    """
    if isinstance(f, str):
        f = parse(f)
    cls = classify(f)
    if cls.shape is Shape.UNSUPPORTED:
        raise ValueError(f"formula outside the checkable fragment at: {cls.offender}")

    def satisfying(p: Formula) -> frozenset[int]:
        return frozenset(i for i, s in enumerate(chain.states) if eval_prop(s, p))

    if cls.shape in (Shape.INVARIANT, Shape.BOUNDED_INVARIANT):
        return LabeledSets(
            cls.shape, safe=satisfying(f.child), bound=getattr(f, "bound", None)
        )
    if cls.shape in (Shape.REACH, Shape.BOUNDED_REACH):
        return LabeledSets(
            cls.shape, target=satisfying(f.child), bound=getattr(f, "bound", None)
        )
    if cls.shape is Shape.NEXT:
        return LabeledSets(cls.shape, target=satisfying(f.child))
    return LabeledSets(
        cls.shape, hold=satisfying(f.left), goal=satisfying(f.right), bound=getattr(f, "bound", None)
    )
