"""Expressions as postfix token sequences.

A genome is a tuple of token strings in postfix order. The trailing halt
symbol is implicit: it is written out by :meth:`Expression.to_text` and
accepted (but not required) by :meth:`Expression.from_text`, and it never
counts towards the length.

Tokens::

    x y z                 variables
    sin cos exp ln        unary functions
    + - * / ^             binary operators
    1 2                   integer scalars
    A0 A1 ...             free scalars
    zero one inf          simplifier intermediates
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

HALT = "halt"
VARIABLES = ("x", "y", "z")
UNARY = ("sin", "cos", "exp", "ln")
BINARY = ("+", "-", "*", "/", "^")
INT_SCALARS = ("1", "2")
ZERO, ONE, INF = "zero", "one", "inf"
SPECIAL = (ZERO, ONE, INF)

# |value| above this counts as an overflow
OVERFLOW = 1e100
# exponents this close to an integer are rounded when the base is negative
INT_POW_TOL = 1e-9

_CONST_VALUE = {"1": 1.0, "2": 2.0, ZERO: 0.0, ONE: 1.0, INF: math.inf}


class MalformedPostfix(ValueError):
    pass


class ScalarMode(str, enum.Enum):
    INTEGER = "integer"
    FREE = "free"


class Failure(str, enum.Enum):
    DIV_BY_ZERO = "div_by_zero"
    DOMAIN_ERROR = "domain_error"
    OVERFLOW = "overflow"
    NON_FINITE = "non_finite"


def is_free(tok: str) -> bool:
    return tok[0] == "A"


def is_scalar(tok: str) -> bool:
    return tok in INT_SCALARS or tok[0] == "A"


def is_constant(tok: str) -> bool:
    """Arity-0 token that is not a variable."""
    return tok in _CONST_VALUE or tok[0] == "A"


def free_index(tok: str) -> int:
    return int(tok[1:])


def arity(tok: str) -> int:
    if tok in BINARY:
        return 2
    if tok in UNARY:
        return 1
    if tok in VARIABLES or tok in _CONST_VALUE or (tok[0] == "A" and tok[1:].isdigit()):
        return 0
    raise MalformedPostfix(f"unknown token {tok!r}")


def subtree_starts(tokens: Sequence[str]) -> list[int]:
    """Start index of the subtree rooted at every position."""
    starts = []
    stack: list[int] = []
    for i, tok in enumerate(tokens):
        a = arity(tok)
        if a == 0:
            s = i
        else:
            if len(stack) < a:
                raise MalformedPostfix(f"stack underflow at position {i} ({tok})")
            s = stack[-a]
            del stack[-a:]
        stack.append(s)
        starts.append(s)
    if len(stack) != 1:
        raise MalformedPostfix(f"postfix leaves {len(stack)} values on the stack")
    return starts


def nesting_depth(tokens: Sequence[str]) -> int:
    """Largest number of unary functions met along a root-to-leaf path."""
    stack: list[int] = []
    for tok in tokens:
        a = arity(tok)
        if a == 0:
            stack.append(0)
        elif a == 1:
            stack.append(stack.pop() + 1)
        else:
            r = stack.pop()
            stack.append(max(stack.pop(), r))
    return stack[-1]


@dataclass(frozen=True)
class FeatureDescriptor:
    length: int
    n_scalars: int
    n_functions: int


@dataclass(frozen=True)
class Expression:
    tokens: tuple[str, ...]
    mode: ScalarMode = ScalarMode.INTEGER
    _starts: list = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise MalformedPostfix("empty expression")
        object.__setattr__(self, "_starts", subtree_starts(self.tokens))

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def starts(self) -> list[int]:
        return self._starts

    @property
    def n_free(self) -> int:
        """Size of the scalar vector this expression expects."""
        idx = [free_index(t) for t in self.tokens if t[0] == "A"]
        return max(idx) + 1 if idx else 0

    @property
    def nesting(self) -> int:
        return nesting_depth(self.tokens)

    def has_variable(self) -> bool:
        return any(t in VARIABLES for t in self.tokens)

    def variables(self) -> set[str]:
        return {t for t in self.tokens if t in VARIABLES}

    def describe(self) -> FeatureDescriptor:
        return describe(self)

    def to_text(self) -> str:
        return " ".join(self.tokens + (HALT,))

    @classmethod
    def from_text(cls, text: str, mode: Optional[ScalarMode] = None) -> "Expression":
        toks = text.split()
        if toks and toks[-1] in (HALT, "∅"):
            toks = toks[:-1]
        if mode is None:
            mode = ScalarMode.FREE if any(t[0] == "A" for t in toks) else ScalarMode.INTEGER
        return cls(tuple(toks), mode)

    def __str__(self):
        return render_infix(self)


def describe(expr: Expression) -> FeatureDescriptor:
    n_scalars = n_functions = 0
    for t in expr.tokens:
        if t in UNARY:
            n_functions += 1
        elif is_scalar(t):
            n_scalars += 1
    return FeatureDescriptor(len(expr.tokens), n_scalars, n_functions)


def renumber_free(tokens: Iterable[str]) -> tuple[str, ...]:
    """Give every free-scalar occurrence its own index, in order of appearance."""
    out = []
    k = 0
    for t in tokens:
        if t[0] == "A":
            out.append(f"A{k}")
            k += 1
        else:
            out.append(t)
    return tuple(out)


# ---------------------------------------------------------------- trees


@dataclass(frozen=True)
class Node:
    token: str
    children: tuple["Node", ...] = ()

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


def tokens_to_tree(expr: Expression | Sequence[str]) -> Node:
    tokens = expr.tokens if isinstance(expr, Expression) else tuple(expr)
    if tokens and tokens[-1] == HALT:
        tokens = tokens[:-1]
    stack: list[Node] = []
    for i, tok in enumerate(tokens):
        a = arity(tok)
        if len(stack) < a:
            raise MalformedPostfix(f"stack underflow at position {i} ({tok})")
        if a:
            kids = tuple(stack[-a:])
            del stack[-a:]
            stack.append(Node(tok, kids))
        else:
            stack.append(Node(tok))
    if len(stack) != 1:
        raise MalformedPostfix(f"postfix leaves {len(stack)} values on the stack")
    return stack[0]


def _postfix(node: Node, out: list[str]) -> None:
    for c in node.children:
        _postfix(c, out)
    out.append(node.token)


def tree_to_tokens(tree: Node, mode: Optional[ScalarMode] = None) -> Expression:
    out: list[str] = []
    _postfix(tree, out)
    if mode is None:
        mode = ScalarMode.FREE if any(t[0] == "A" for t in out) else ScalarMode.INTEGER
    return Expression(tuple(out), mode)


# ---------------------------------------------------------------- rendering

_INFIX_OP = {"+": "+", "-": "-", "*": "*", "/": "/", "^": "^"}
_LEAF_TEXT = {ZERO: "0", ONE: "1", INF: "inf"}


def _fmt_scalar(v: float) -> str:
    return f"{v:.12g}"


def render_infix(expr: Expression, scalars: Optional[Sequence[float]] = None) -> str:
    """Fully parenthesised infix text; free scalars are substituted when given."""
    stack: list[str] = []
    for tok in expr.tokens:
        a = arity(tok)
        if a == 0:
            if tok[0] == "A" and scalars is not None:
                stack.append(_fmt_scalar(float(scalars[free_index(tok)])))
            else:
                stack.append(_LEAF_TEXT.get(tok, tok))
        elif a == 1:
            stack.append(f"{tok}({stack.pop()})")
        else:
            r = stack.pop()
            l = stack.pop()
            stack.append(f"({l}{_INFIX_OP[tok]}{r})")
    return stack[0]


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class EvalOutcome:
    value: Optional[float] = None
    failure: Optional[Failure] = None

    @property
    def ok(self) -> bool:
        return self.failure is None


def _check(v: float) -> Optional[Failure]:
    if math.isnan(v):
        return Failure.NON_FINITE
    if not abs(v) <= OVERFLOW:
        return Failure.OVERFLOW
    return None


def _pow(a: float, b: float) -> float:
    if a < 0:
        rb = round(b)
        if abs(b - rb) > INT_POW_TOL:
            raise ValueError("negative base with non-integer exponent")
        b = float(rb)
    if a == 0 and b < 0:
        raise ZeroDivisionError
    return math.pow(a, b)


def evaluate(expr: Expression, point, scalars: Sequence[float] = ()) -> EvalOutcome:
    """Evaluate at a single point; every failure is returned, never raised.

    ``point`` maps variable names to values, or is a sequence ordered x, y, z.
    """
    if not isinstance(point, dict):
        point = dict(zip(VARIABLES, point))
    stack: list[float] = []
    try:
        for tok in expr.tokens:
            a = arity(tok)
            if a == 0:
                if tok in VARIABLES:
                    v = float(point[tok])
                elif tok[0] == "A":
                    v = float(scalars[free_index(tok)])
                else:
                    v = _CONST_VALUE[tok]
                    if tok == INF:
                        return EvalOutcome(failure=Failure.NON_FINITE)
            elif a == 1:
                u = stack.pop()
                if tok == "sin":
                    v = math.sin(u)
                elif tok == "cos":
                    v = math.cos(u)
                elif tok == "exp":
                    v = math.exp(u)
                else:
                    if u <= 0:
                        return EvalOutcome(failure=Failure.DOMAIN_ERROR)
                    v = math.log(u)
            else:
                b = stack.pop()
                u = stack.pop()
                if tok == "+":
                    v = u + b
                elif tok == "-":
                    v = u - b
                elif tok == "*":
                    v = u * b
                elif tok == "/":
                    if b == 0:
                        return EvalOutcome(failure=Failure.DIV_BY_ZERO)
                    v = u / b
                else:
                    try:
                        v = _pow(u, b)
                    except ZeroDivisionError:
                        return EvalOutcome(failure=Failure.DIV_BY_ZERO)
                    except ValueError:
                        return EvalOutcome(failure=Failure.DOMAIN_ERROR)
            bad = _check(v)
            if bad is not None:
                return EvalOutcome(failure=bad)
            stack.append(v)
    except OverflowError:
        return EvalOutcome(failure=Failure.OVERFLOW)
    except (KeyError, IndexError, TypeError, ValueError):
        return EvalOutcome(failure=Failure.NON_FINITE)
    return EvalOutcome(value=stack[0])


def _sanitize(v):
    # NaN marks a failed point from here on; NaN propagates through every op
    # except pow, which is handled separately
    if type(v) is not np.ndarray:
        return v if abs(v) <= OVERFLOW else np.nan
    # fmax skips NaNs, so this only looks at values that are still valid
    if _fmax(np.abs(v), axis=None) > OVERFLOW:
        v = np.where(np.abs(v) <= OVERFLOW, v, np.nan)
    return v


_fmax = np.fmax.reduce


def _np_pow(a, b):
    neg = a < 0
    if np.any(neg):
        rb = np.round(b)
        b = np.where(neg & (np.abs(b - rb) <= INT_POW_TOL), rb, b)
    v = np.power(a, b)
    return np.where(np.isnan(a) | np.isnan(b), np.nan, v)


_NP_UNARY = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "ln": np.log}
_NP_BINARY = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": _np_pow,
}


_VAR, _FREE, _CONST, _TRIG, _UNARY, _BINARY = range(6)


@lru_cache(maxsize=65536)
def _program(tokens: tuple) -> tuple:
    """Resolve every token to an opcode once per distinct genome."""
    prog = []
    for tok in tokens:
        a = arity(tok)
        if a == 0:
            if tok in VARIABLES:
                prog.append((_VAR, VARIABLES.index(tok)))
            elif tok[0] == "A":
                prog.append((_FREE, free_index(tok)))
            else:
                prog.append((_CONST, np.nan if tok == INF else _CONST_VALUE[tok]))
        elif a == 1:
            prog.append((_TRIG if tok in ("sin", "cos") else _UNARY, _NP_UNARY[tok]))
        else:
            prog.append((_BINARY, _NP_BINARY[tok]))
    return tuple(prog)


def evaluate_array(expr: Expression, X, scalars=None) -> np.ndarray:
    """Vectorised evaluation; failed points come back as NaN.

    ``X`` has shape (n_points, n_vars). ``scalars`` is either a vector of
    free-scalar values or a (batch, n_free) matrix, in which case the result
    has shape (batch, n_points).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    npts = X.shape[0]
    if scalars is not None:
        scalars = np.asarray(scalars, dtype=float)
    batch = scalars is not None and scalars.ndim == 2
    shape = (scalars.shape[0], npts) if batch else (npts,)
    stack: list = []
    push, pop = stack.append, stack.pop
    with np.errstate(all="ignore"):
        for code, arg in _program(expr.tokens):
            if code == _VAR:
                push(X[:, arg])
            elif code == _FREE:
                push(scalars[:, arg : arg + 1] if batch else scalars[arg])
            elif code == _CONST:
                push(arg)
            elif code == _TRIG:
                push(arg(pop()))
            elif code == _UNARY:
                push(_sanitize(arg(pop())))
            else:
                b = pop()
                push(_sanitize(arg(pop(), b)))
        out = stack[0]
    if isinstance(out, np.ndarray) and out.shape == shape:
        return out
    return np.broadcast_to(np.asarray(out, dtype=float), shape)


# ---------------------------------------------------------------- generation


@dataclass(frozen=True)
class Primitives:
    """Terminal and operator alphabet for one problem."""

    n_vars: int = 1
    mode: ScalarMode = ScalarMode.INTEGER

    @property
    def variables(self) -> tuple[str, ...]:
        return VARIABLES[: self.n_vars]

    @property
    def scalars(self) -> tuple[str, ...]:
        return INT_SCALARS if self.mode == ScalarMode.INTEGER else ("A",)

    @property
    def terminals(self) -> tuple[str, ...]:
        return self.variables + self.scalars


def _pick(seq, rng):
    return seq[int(rng.integers(len(seq)))]


def _grow(budget: int, nest_left: int, prims: Primitives, rng) -> list[str]:
    can_unary = budget >= 2 and nest_left > 0
    can_binary = budget >= 3
    p_leaf = 1.0 / (1.0 + 0.5 * (budget - 1))
    if (not can_unary and not can_binary) or rng.random() < p_leaf:
        if rng.random() < 0.5:
            return [_pick(prims.variables, rng)]
        return [_pick(prims.scalars, rng)]
    ops = (UNARY if can_unary else ()) + (BINARY if can_binary else ())
    op = _pick(ops, rng)
    if op in UNARY:
        return _grow(budget - 1, nest_left - 1, prims, rng) + [op]
    first = _grow(budget - 2, nest_left, prims, rng)
    second = _grow(budget - 1 - len(first), nest_left, prims, rng)
    if rng.random() < 0.5:
        first, second = second, first
    return first + second + [op]


def make_expression(tokens: Sequence[str], mode: ScalarMode) -> Expression:
    """Build an expression, expanding bare ``A`` placeholders in free mode."""
    if mode == ScalarMode.FREE:
        tokens = renumber_free(tokens)
    return Expression(tuple(tokens), mode)


def random_expression(
    max_len: int,
    max_nested: int,
    rng,
    prims: Primitives = Primitives(),
    max_tries: int = 100,
) -> Expression:
    """Grow a random expression that contains at least one variable."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    for _ in range(max_tries):
        toks = _grow(max_len, max_nested, prims, rng)
        if any(t in VARIABLES for t in toks):
            return make_expression(toks, prims.mode)
    return Expression((prims.variables[0],), prims.mode)
