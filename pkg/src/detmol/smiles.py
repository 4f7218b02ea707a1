"""SMILES parsing and deterministic, canonical-order writing."""

from __future__ import annotations

import math
import re
import sys

from .entities import ATOM_CLASSES
from .molgraph import Atom, Bond, MolGraph, ORDER_VALUE, match_order

ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "S", "P", "F", "I")
AROMATIC_LETTERS = {"b": "B", "c": "C", "n": "N", "o": "O", "s": "S", "p": "P"}

_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic",
                 "/": "single", "\\": "single"}
_ELEMENTS = set(ATOM_CLASSES.values()) - {"D", "T"}

_BRACKET = re.compile(
    r"(?P<isotope>\d+)?"
    r"(?P<element>\*|[A-Za-z][a-z]?)"
    r"(?P<stereo>@@|@)?"
    r"(?P<hcount>H\d*)?"
    r"(?P<charge>[+-]\d+|[+-]+)?"
)


class SmilesError(ValueError):
    """Syntax or vocabulary error; `.offset` is the byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[Atom] = []
        self.aromatic: list[bool] = []
        self.bonds: dict[tuple[int, int], Bond] = {}
        self.anchor: int | None = None
        self.branch_stack: list[int | None] = []
        self.pending_order: str | None = None
        self.pending_order_pos = 0
        self.pending_stereo = False
        self.open_rings: dict[int, tuple[int, str | None]] = {}

    def error(self, message: str, offset: int | None = None) -> SmilesError:
        return SmilesError(message, self.pos if offset is None else offset)

    def add_atom(self, element: str, charge: int, stereo: bool, aromatic: bool) -> None:
        if self.pending_stereo:
            stereo = True
            self.pending_stereo = False
        try:
            atom = Atom(element, charge, stereo)
        except ValueError as exc:
            raise self.error(str(exc))
        index = len(self.atoms)
        self.atoms.append(atom)
        self.aromatic.append(aromatic)
        if self.anchor is not None:
            order = self.pending_order
            if order is None:
                order = "aromatic" if self.aromatic[self.anchor] and aromatic else "single"
            self.add_bond(self.anchor, index, order)
        elif self.pending_order is not None:
            raise self.error("bond symbol without a preceding atom",
                             self.pending_order_pos)
        self.pending_order = None
        self.anchor = index

    def add_bond(self, u: int, v: int, order: str) -> None:
        if u == v:
            raise self.error("ring bond closes onto its own atom")
        key = (min(u, v), max(u, v))
        if key in self.bonds:
            raise self.error(f"duplicate bond between atoms {u} and {v}")
        self.bonds[key] = Bond(u, v, order)

    def ring_closure(self, number: int) -> None:
        if self.anchor is None:
            raise self.error("ring closure before any atom")
        if number in self.open_rings:
            partner, opening_order = self.open_rings.pop(number)
            order = self.pending_order
            if order is not None and opening_order is not None and order != opening_order:
                raise self.error(f"ring bond {number} declared with two orders")
            order = order or opening_order
            if order is None:
                both_aromatic = self.aromatic[partner] and self.aromatic[self.anchor]
                order = "aromatic" if both_aromatic else "single"
            self.add_bond(partner, self.anchor, order)
        else:
            self.open_rings[number] = (self.anchor, self.pending_order)
        self.pending_order = None

    def parse_bracket(self) -> None:
        start = self.pos
        end = self.text.find("]", start)
        if end < 0:
            raise self.error("unterminated bracket atom", start)
        body = self.text[start + 1:end]
        match = _BRACKET.fullmatch(body)
        if not match or not body:
            raise self.error(f"malformed bracket atom [{body}]", start)
        isotope, element = match.group("isotope"), match.group("element")
        if isotope is not None:
            if element != "H" or isotope not in ("2", "3"):
                raise self.error(f"unsupported isotope [{body}]", start)
            element = "D" if isotope == "2" else "T"
        elif element in AROMATIC_LETTERS:
            element = AROMATIC_LETTERS[element]
        elif element == "*":
            pass
        elif element not in _ELEMENTS:
            raise self.error(f"unknown element {element!r}", start)
        hcount = match.group("hcount")
        if hcount is not None and element in ("H", "D", "T"):
            raise self.error("hydrogen atom with a hydrogen count", start)
        charge = self._parse_charge(match.group("charge"), start)
        aromatic = match.group("element") in AROMATIC_LETTERS
        # Explicit hydrogen counts are accepted but re-derived from valence.
        self.add_atom(element, charge, match.group("stereo") is not None, aromatic)
        self.pos = end + 1

    def _parse_charge(self, token: str | None, offset: int) -> int:
        if token is None:
            return 0
        sign = 1 if token[0] == "+" else -1
        digits = token.lstrip("+-")
        if digits:
            if len(set(token[:len(token) - len(digits)])) != 1:
                raise self.error(f"bad charge {token!r}", offset)
            magnitude = int(digits)
        else:
            if len(set(token)) != 1:
                raise self.error(f"bad charge {token!r}", offset)
            magnitude = len(token)
        charge = sign * magnitude
        if not -2 <= charge <= 6:
            raise self.error(f"charge {charge:+d} outside the supported range", offset)
        return charge

    def run(self) -> MolGraph:
        text = self.text
        while self.pos < len(text):
            ch = text[self.pos]
            if ch == "[":
                self.parse_bracket()
            elif text.startswith(("Cl", "Br"), self.pos):
                self.add_atom(text[self.pos:self.pos + 2], 0, False, False)
                self.pos += 2
            elif ch in "BCNOSPFI":
                self.add_atom(ch, 0, False, False)
                self.pos += 1
            elif ch in AROMATIC_LETTERS:
                self.add_atom(AROMATIC_LETTERS[ch], 0, False, True)
                self.pos += 1
            elif ch == "*":
                self.add_atom("*", 0, False, False)
                self.pos += 1
            elif ch in _BOND_SYMBOLS:
                if self.pending_order is not None:
                    raise self.error("two bond symbols in a row")
                if self.anchor is None:
                    raise self.error("bond symbol without a preceding atom")
                self.pending_order = _BOND_SYMBOLS[ch]
                self.pending_order_pos = self.pos
                if ch in "/\\":
                    self.pending_stereo = True
                self.pos += 1
            elif ch.isdigit():
                self.ring_closure(int(ch))
                self.pos += 1
            elif ch == "%":
                digits = text[self.pos + 1:self.pos + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise self.error("'%' needs two digits")
                self.ring_closure(int(digits))
                self.pos += 3
            elif ch == "(":
                if self.anchor is None:
                    raise self.error("branch before any atom")
                if self.pending_order is not None:
                    raise self.error("bond symbol before a branch open")
                self.branch_stack.append(self.anchor)
                self.pos += 1
            elif ch == ")":
                if not self.branch_stack:
                    raise self.error("unbalanced ')'")
                if self.pending_order is not None:
                    raise self.error("dangling bond symbol before ')'")
                self.anchor = self.branch_stack.pop()
                self.pos += 1
            elif ch == ".":
                if self.pending_order is not None:
                    raise self.error("bond symbol before '.'")
                if self.anchor is None:
                    raise self.error("'.' before any atom")
                self.anchor = None
                self.pos += 1
            else:
                raise self.error(f"unexpected character {ch!r}")
        if self.branch_stack:
            raise self.error("unbalanced '('")
        if self.pending_order is not None:
            raise self.error("dangling bond symbol", self.pending_order_pos)
        if self.open_rings:
            number = min(self.open_rings)
            raise self.error(f"ring bond {number} never closed")
        if not self.atoms:
            raise self.error("empty SMILES", 0)
        return MolGraph(tuple(self.atoms), tuple(self.bonds.values()))


def parse(text: str) -> MolGraph:
    """Parse a SMILES string into a molecular graph.

    Organic-subset atoms, bracket atoms with charge and hydrogen counts,
    aromatic lowercase forms, branches, ring closures (including %nn) and
    dot-separated fragments are supported.  Stereo markers are accepted and
    reduced to per-atom stereocenter flags; hydrogen counts are re-derived
    from valence rather than stored.
    """
    return _Parser(text).run()


def _rank_dense(keys: list) -> list[int]:
    order = sorted(set(keys))
    index = {k: i for i, k in enumerate(order)}
    return [index[k] for k in keys]


def canonical_ranks(graph: MolGraph) -> dict[int, int]:
    """Stable atom ranks: neighborhood refinement plus tie individualization.

    Ranks are a permutation of 0..n-1.  Among automorphic atoms the choice is
    made by comparing fully-refined graph certificates, so any residual
    freedom never changes the written SMILES.
    """
    n = graph.n_atoms
    if n == 0:
        return {}
    adj = graph.adjacency()
    labels = [(a.element, a.formal_charge) for a in graph.atoms]

    def refine(colors: list[int]) -> list[int]:
        while True:
            keys = [
                (
                    colors[i],
                    tuple(sorted(
                        (match_order(b.order), colors[b.other(i)]) for b in adj[i]
                    )),
                )
                for i in range(n)
            ]
            new = _rank_dense(keys)
            if new == colors:
                return colors
            colors = new

    def certificate(colors: list[int]) -> tuple:
        atom_part = tuple(lab for _, lab in sorted(zip(colors, labels)))
        edge_part = tuple(sorted(
            (min(colors[b.u], colors[b.v]), max(colors[b.u], colors[b.v]),
             match_order(b.order))
            for b in graph.bonds
        ))
        return (atom_part, edge_part)

    initial = [
        (
            labels[i],
            len(adj[i]),
            math.ceil(sum(ORDER_VALUE[b.order] for b in adj[i])),
        )
        for i in range(n)
    ]
    best: list[tuple] = [()]
    best_colors: list[list[int] | None] = [None]

    def search(colors: list[int]) -> None:
        classes: dict[int, list[int]] = {}
        for i, c in enumerate(colors):
            classes.setdefault(c, []).append(i)
        tied = sorted(c for c, members in classes.items() if len(members) > 1)
        if not tied:
            cert = certificate(colors)
            if best_colors[0] is None or cert < best[0]:
                best[0] = cert
                best_colors[0] = colors
            return
        for member in classes[tied[0]]:
            split = refine(_rank_dense([
                (colors[i], i != member) for i in range(n)
            ]))
            search(split)

    search(refine(_rank_dense(initial)))
    return {i: r for i, r in enumerate(best_colors[0])}


def _is_aromatic_atom(adj_row: list[Bond]) -> bool:
    return sum(1 for b in adj_row if b.order == "aromatic") >= 2


def _atom_token(atom: Atom, aromatic: bool) -> str:
    if atom.element == "D":
        symbol, bracket = "2H", True
    elif atom.element == "T":
        symbol, bracket = "3H", True
    elif atom.element == "H":
        symbol, bracket = "H", True
    else:
        lower = aromatic and atom.element in AROMATIC_LETTERS.values()
        symbol = atom.element.lower() if lower else atom.element
        bracket = atom.element not in ORGANIC_SUBSET and atom.element != "*"
    if atom.formal_charge != 0:
        sign = "+" if atom.formal_charge > 0 else "-"
        magnitude = abs(atom.formal_charge)
        symbol += sign + (str(magnitude) if magnitude > 1 else "")
        bracket = True
    return f"[{symbol}]" if bracket else symbol


def write(graph: MolGraph) -> str:
    """Emit a deterministic SMILES string; the empty graph writes as ''.

    Output is invariant under atom reordering: traversal starts from the
    minimal canonical rank and visits neighbors in rank order.  Wedged and
    dashed bonds are written as plain single bonds; disconnected components
    are dot-separated.
    """
    n = graph.n_atoms
    if n == 0:
        return ""
    if n * 4 + 100 > sys.getrecursionlimit():
        sys.setrecursionlimit(n * 4 + 100)
    ranks = canonical_ranks(graph)
    adj = graph.adjacency()
    aromatic = [_is_aromatic_atom(adj[i]) for i in range(n)]

    def bond_symbol(bond: Bond) -> str:
        order = match_order(bond.order)
        if order == "single":
            return "-" if aromatic[bond.u] and aromatic[bond.v] else ""
        if order == "aromatic":
            return "" if aromatic[bond.u] and aromatic[bond.v] else ":"
        return {"double": "=", "triple": "#"}[order]

    visited = [False] * n
    children: dict[int, list[tuple[int, Bond]]] = {}
    closures: dict[int, list[tuple[int, Bond]]] = {i: [] for i in range(n)}
    back_pairs: set[tuple[int, int]] = set()
    component_roots: list[int] = []

    def dfs(node: int, via: Bond | None) -> None:
        visited[node] = True
        children[node] = []
        for bond in sorted(adj[node], key=lambda b: ranks[b.other(node)]):
            other = bond.other(node)
            if bond is via:
                continue
            if not visited[other]:
                children[node].append((other, bond))
                dfs(other, bond)
            elif bond.pair not in back_pairs:
                back_pairs.add(bond.pair)
                closures[node].append((other, bond))
                closures[other].append((node, bond))

    for root in sorted(range(n), key=lambda i: ranks[i]):
        if not visited[root]:
            component_roots.append(root)
            dfs(root, None)

    marker_of: dict[tuple[int, int], int] = {}
    free = list(range(1, 100))
    emitted: list[str] = []

    def digit_token(number: int) -> str:
        return str(number) if number < 10 else f"%{number:02d}"

    def emit(node: int) -> None:
        emitted.append(_atom_token(graph.atoms[node], aromatic[node]))
        for other, bond in sorted(closures[node], key=lambda ob: ranks[ob[0]]):
            if bond.pair not in marker_of:
                if not free:
                    raise ValueError("more than 99 concurrent ring closures")
                marker_of[bond.pair] = free.pop(0)
                emitted.append(bond_symbol(bond) + digit_token(marker_of[bond.pair]))
            else:
                number = marker_of.pop(bond.pair)
                free.append(number)
                free.sort()
                emitted.append(digit_token(number))
        kids = children[node]
        for other, bond in kids[:-1]:
            emitted.append("(" + bond_symbol(bond))
            emit(other)
            emitted.append(")")
        for other, bond in kids[-1:]:
            emitted.append(bond_symbol(bond))
            emit(other)

    for k, root in enumerate(component_roots):
        if k:
            emitted.append(".")
        emit(root)
    return "".join(emitted)
