"""Expression-tree programs over the 22 per-block statistic slots.

A program is an immutable tree whose internal nodes are primitive ops and
whose terminals name statistic slots. One tree is shared across every block
of a network; a ``to_scalar`` reduction turns the per-block output into a
scalar (skipped when the root already yields rank 0) and a cross-block
aggregation (mean) turns those into the network score.

Depth is counted in edges: a bare terminal is depth 0, the baseline trees
below are depth 2. All generated and varied programs stay within
[MIN_DEPTH, MAX_DEPTH].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import math
import random

import numpy as np

from . import primitives
from .errors import ExecutionFailure, ParseError

MIN_DEPTH = 2
MAX_DEPTH = 10

TO_SCALAR_CHOICES = ("mean", "l2norm")
AGGREGATION_CHOICES = ("mean",)

# The 22 statistic slots: block input, post-ReLU activation, conv weights and
# block output, plus their loss gradients, for data (D), noise (N) and
# perturbed-data (P) inputs. The weights T3 do not depend on the input.
INPUT_KINDS = ("D", "N", "P")
ALL_SLOTS: Tuple[str, ...] = tuple(
    [f"{base}_{kind}" for base in ("T1", "T2") for kind in INPUT_KINDS]
    + ["T3"]
    + [f"T4_{kind}" for kind in INPUT_KINDS]
    + [f"{base}G_{kind}" for base in ("T1", "T2", "T3", "T4") for kind in INPUT_KINDS]
)
assert len(ALL_SLOTS) == 22

_SLOT_SET = frozenset(ALL_SLOTS)

# grow-style generation picks a terminal with the natural ratio of terminals
# to all symbols once past the minimum depth
_TERMINAL_RATIO = len(ALL_SLOTS) / (len(ALL_SLOTS) + len(primitives.PRIMITIVES))


@dataclass(frozen=True, slots=True)
class Node:
    """A tree node: either a primitive call or a terminal slot."""

    op: Optional[int]  # primitive id; None marks a terminal
    slot: Optional[str] = None
    children: Tuple["Node", ...] = ()

    def is_terminal(self) -> bool:
        return self.op is None


@dataclass(frozen=True, slots=True)
class ExprProgram:
    root: Node
    to_scalar: str = "mean"
    aggregation: str = "mean"


def terminal(slot: str) -> Node:
    if slot not in _SLOT_SET:
        raise ValueError(f"unknown statistic slot {slot!r}")
    return Node(op=None, slot=slot)


def call(op_name: str, *children: Node) -> Node:
    prim = primitives.BY_NAME[op_name]
    if len(children) != prim.arity:
        raise ValueError(f"{op_name} takes {prim.arity} children, got {len(children)}")
    return Node(op=prim.id, children=tuple(children))


def depth(node: Node) -> int:
    if node.is_terminal():
        return 0
    return 1 + max(depth(c) for c in node.children)


def iter_nodes(node: Node, node_depth: int = 0) -> Iterator[Tuple[Node, int]]:
    """Preorder traversal yielding (node, depth-from-root)."""
    yield node, node_depth
    for c in node.children:
        yield from iter_nodes(c, node_depth + 1)


def count_nodes(node: Node) -> int:
    return sum(1 for _ in iter_nodes(node))


def _grow(rng: random.Random, at_depth: int, height: int, min_depth: int) -> Node:
    if at_depth >= height or (at_depth >= min_depth and rng.random() < _TERMINAL_RATIO):
        return Node(op=None, slot=rng.choice(ALL_SLOTS))
    prim = rng.choice(primitives.PRIMITIVES)
    children = tuple(_grow(rng, at_depth + 1, height, min_depth) for _ in range(prim.arity))
    return Node(op=prim.id, children=children)


def random_subtree(rng: random.Random, min_depth: int, max_depth: int) -> Node:
    """Grow-style random tree with depth in [min_depth, max_depth]."""
    if min_depth > max_depth:
        raise ValueError(f"min_depth {min_depth} > max_depth {max_depth}")
    height = rng.randint(min_depth, max_depth)
    return _grow(rng, 0, height, min_depth)


def random_tree(rng: random.Random, min_depth: int = MIN_DEPTH,
                max_depth: int = MAX_DEPTH, to_scalar: str = "mean") -> ExprProgram:
    """A random program; deterministic for a given rng state."""
    if not (MIN_DEPTH <= min_depth <= max_depth <= MAX_DEPTH):
        raise ValueError(f"depth bounds ({min_depth}, {max_depth}) outside "
                         f"[{MIN_DEPTH}, {MAX_DEPTH}]")
    return ExprProgram(root=random_subtree(rng, min_depth, max_depth),
                       to_scalar=to_scalar)


def _replace_at(node: Node, index: int, replacement: Node, counter: list) -> Node:
    if counter[0] == index:
        counter[0] += 1
        return replacement
    counter[0] += 1
    if node.is_terminal():
        return node
    new_children = []
    changed = False
    for c in node.children:
        if counter[0] > index:
            new_children.append(c)
            continue
        nc = _replace_at(c, index, replacement, counter)
        changed = changed or nc is not c
        new_children.append(nc)
    if not changed:
        return node
    return Node(op=node.op, children=tuple(new_children))


def _subtree_at(node: Node, index: int) -> Tuple[Node, int]:
    for i, (sub, d) in enumerate(iter_nodes(node)):
        if i == index:
            return sub, d
    raise IndexError(index)


def crossover(a: ExprProgram, b: ExprProgram, rng: random.Random,
              max_tries: int = 8) -> ExprProgram:
    """Swap a uniformly chosen subtree of ``a`` for one of ``b``; keep the
    first child. An exchange that leaves the depth bounds is resampled up to
    ``max_tries`` times, after which a copy of ``a`` is returned."""
    na, nb = count_nodes(a.root), count_nodes(b.root)
    for _ in range(max_tries):
        ia = rng.randrange(na)
        ib = rng.randrange(nb)
        donor, _ = _subtree_at(b.root, ib)
        child_root = _replace_at(a.root, ia, donor, [0])
        d = depth(child_root)
        if MIN_DEPTH <= d <= MAX_DEPTH:
            return ExprProgram(root=child_root, to_scalar=a.to_scalar,
                               aggregation=a.aggregation)
    return ExprProgram(root=a.root, to_scalar=a.to_scalar, aggregation=a.aggregation)


def mutate(a: ExprProgram, rng: random.Random) -> ExprProgram:
    """Replace a uniformly chosen node's subtree with a fresh random subtree
    sized so the whole tree stays within the depth bounds."""
    n = count_nodes(a.root)
    idx = rng.randrange(n)
    _, at_depth = _subtree_at(a.root, idx)
    lo = max(0, MIN_DEPTH - at_depth)
    hi = MAX_DEPTH - at_depth
    replacement = random_subtree(rng, lo, hi)
    new_root = _replace_at(a.root, idx, replacement, [0])
    return ExprProgram(root=new_root, to_scalar=a.to_scalar, aggregation=a.aggregation)


# --- evaluation -------------------------------------------------------------

def evaluate_node(node: Node, slots: dict) -> np.ndarray:
    """Evaluate a tree against a slot-name -> tensor mapping."""
    if node.is_terminal():
        try:
            return slots[node.slot]
        except KeyError as exc:
            raise ExecutionFailure(f"slot {node.slot} not available") from exc
    if len(node.children) == 1:
        return primitives.eval_primitive(node.op, evaluate_node(node.children[0], slots))
    return primitives.eval_primitive(node.op,
                                     evaluate_node(node.children[0], slots),
                                     evaluate_node(node.children[1], slots))


def block_scalar(p: ExprProgram, slots: dict) -> float:
    """Program output for one block, reduced to a scalar.

    ``to_scalar`` is skipped when the root already yields rank 0. Raises
    ExecutionFailure on any primitive failure; the returned float may be
    non-finite (callers decide what that means)."""
    out = evaluate_node(p.root, slots)
    if out.ndim == 0:
        return float(out)
    if out.size == 0:
        return float("nan")
    if p.to_scalar == "mean":
        return float(np.mean(out, dtype=np.float32))
    if p.to_scalar == "l2norm":
        with np.errstate(all="ignore"):
            return float(np.sqrt(np.sum(np.square(out), dtype=np.float32)))
    raise ExecutionFailure(f"unknown to_scalar {p.to_scalar!r}")


def check_validity(p: ExprProgram, probe) -> bool:
    """True iff the program runs on every probe block with finite per-block
    scalars and a finite aggregated score."""
    if not probe:
        raise ValueError("probe must be non-empty")
    scalars = []
    for block in probe:
        try:
            s = block_scalar(p, block.slots())
        except ExecutionFailure:
            return False
        if not math.isfinite(s):
            return False
        scalars.append(s)
    return math.isfinite(sum(scalars) / len(scalars))


# --- text format ------------------------------------------------------------

def format_node(node: Node) -> str:
    if node.is_terminal():
        return node.slot
    name = primitives.BY_ID[node.op].name
    inner = " ".join(format_node(c) for c in node.children)
    return f"({name} {inner})"


def format_program(p: ExprProgram) -> str:
    return f"to_scalar={p.to_scalar} aggregation={p.aggregation}\n{format_node(p.root)}\n"


def _tokenize(text: str):
    tokens = []  # (token, position)
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "()":
            tokens.append((ch, i))
            i += 1
            continue
        j = i
        while j < len(text) and not text[j].isspace() and text[j] not in "()":
            j += 1
        tokens.append((text[i:j], i))
        i = j
    return tokens


def _parse_expr(tokens, pos, base_offset):
    if pos >= len(tokens):
        raise ParseError("unexpected end of program", base_offset)
    tok, at = tokens[pos]
    if tok == ")":
        raise ParseError("unexpected ')'", base_offset + at)
    if tok != "(":
        if tok not in _SLOT_SET:
            raise ParseError(f"unknown terminal {tok!r}", base_offset + at)
        return Node(op=None, slot=tok), pos + 1
    if pos + 1 >= len(tokens):
        raise ParseError("unterminated '('", base_offset + at)
    name, name_at = tokens[pos + 1]
    prim = primitives.BY_NAME.get(name)
    if prim is None:
        raise ParseError(f"unknown operation {name!r}", base_offset + name_at)
    children = []
    cur = pos + 2
    while True:
        if cur >= len(tokens):
            raise ParseError("unterminated '('", base_offset + at)
        if tokens[cur][0] == ")":
            break
        child, cur = _parse_expr(tokens, cur, base_offset)
        children.append(child)
    if len(children) != prim.arity:
        raise ParseError(
            f"{name} takes {prim.arity} argument(s), got {len(children)}",
            base_offset + name_at)
    return Node(op=prim.id, children=tuple(children)), cur + 1


def parse_program(text: str) -> ExprProgram:
    """Parse the two-line program format (header, then one s-expression)."""
    stripped = text.lstrip()
    offset = len(text) - len(stripped)
    newline = stripped.find("\n")
    if newline < 0:
        raise ParseError("missing program body after header", len(text))
    header, body = stripped[:newline], stripped[newline + 1:]
    fields = {}
    for part in header.split():
        if "=" not in part:
            raise ParseError(f"bad header field {part!r}", offset + header.find(part))
        k, v = part.split("=", 1)
        fields[k] = v
    to_scalar = fields.get("to_scalar", "mean")
    aggregation = fields.get("aggregation", "mean")
    if to_scalar not in TO_SCALAR_CHOICES:
        raise ParseError(f"unknown to_scalar {to_scalar!r}", offset)
    if aggregation not in AGGREGATION_CHOICES:
        raise ParseError(f"unknown aggregation {aggregation!r}", offset)
    body_offset = offset + newline + 1
    tokens = _tokenize(body)
    if not tokens:
        raise ParseError("empty program body", body_offset)
    root, consumed = _parse_expr(tokens, 0, body_offset)
    if consumed != len(tokens):
        raise ParseError("trailing tokens after program",
                         body_offset + tokens[consumed][1])
    return ExprProgram(root=root, to_scalar=to_scalar, aggregation=aggregation)


# --- baseline proxy corpus ---------------------------------------------------

BASELINE_NAMES = ("synflow", "snip", "fisher")


def baseline_proxy(name: str) -> ExprProgram:
    """One of the bundled hand-coded scoring programs."""
    if name == "synflow":
        root = call("abs", call("eltwise_mul", terminal("T3"), terminal("T3G_N")))
    elif name == "snip":
        root = call("abs", call("eltwise_mul", terminal("T3"), terminal("T3G_D")))
    elif name == "fisher":
        root = call("square", call("eltwise_mul", terminal("T4_D"), terminal("T4G_D")))
    else:
        raise ValueError(f"unknown baseline {name!r}; have {BASELINE_NAMES}")
    return ExprProgram(root=root, to_scalar="mean", aggregation="mean")
