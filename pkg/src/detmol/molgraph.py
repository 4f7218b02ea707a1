"""Molecular graphs with valence accounting, repair, and isomorphism."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

from .entities import BBox

WILDCARD = "*"

#: Numeric contribution of each bond kind to an atom's bond-order sum.
ORDER_VALUE: dict[str, float] = {
    "single": 1.0,
    "wedged": 1.0,
    "dashed": 1.0,
    "double": 2.0,
    "triple": 3.0,
    "aromatic": 1.5,
}

#: Wedge marks are rendering artifacts of single bonds.
_MATCH_ORDER = {"wedged": "single", "dashed": "single"}

DEFAULT_VALENCES: dict[str, tuple[int, ...]] = {
    "C": (4,), "N": (3,), "O": (2,), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
    "P": (3, 5), "B": (3,), "Si": (4,),
    "Se": (2, 4, 6), "Te": (2, 4, 6),
    "Sn": (4,), "As": (3, 5), "Al": (3,), "Ge": (4,),
    "H": (1,), "D": (1,), "T": (1,),
}

#: Elements whose cation charge raises the allowed valence.
_CATION_ADJUSTED = {"N", "P"}

MIN_CHARGE, MAX_CHARGE = -2, 6


class ValenceConfigError(ValueError):
    """An element has no valence entry and is not the wildcard."""


class RepairError(RuntimeError):
    """Repair did not converge; `.graph` holds the partial result."""

    def __init__(self, message: str, graph: "MolGraph"):
        super().__init__(message)
        self.graph = graph


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    is_stereocenter: bool = False
    source_box: BBox | None = None

    def __post_init__(self) -> None:
        if not (MIN_CHARGE <= self.formal_charge <= MAX_CHARGE):
            raise ValueError(f"formal charge {self.formal_charge} out of range")


@dataclass(frozen=True)
class Bond:
    """Undirected bond; endpoints are stored with u < v."""

    u: int
    v: int
    order: str
    source_box: BBox | None = None
    score: float = 1.0

    def __post_init__(self) -> None:
        if self.order not in ORDER_VALUE:
            raise ValueError(f"unknown bond order {self.order!r}")
        if self.u == self.v:
            raise ValueError("bond endpoints must differ")
        if self.u > self.v:
            u, v = self.v, self.u
            object.__setattr__(self, "u", u)
            object.__setattr__(self, "v", v)

    @property
    def pair(self) -> tuple[int, int]:
        return (self.u, self.v)

    def other(self, index: int) -> int:
        return self.v if index == self.u else self.u


@dataclass(frozen=True)
class ChemProblem:
    """A valence or aromaticity violation at one atom."""

    atom_index: int
    observed: float
    max_allowed: float
    kind: str = "valence"


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "bonds", tuple(self.bonds))
        n = len(self.atoms)
        seen: set[tuple[int, int]] = set()
        for bond in self.bonds:
            if not (0 <= bond.u < n and 0 <= bond.v < n):
                raise ValueError(f"bond {bond.pair} references a missing atom")
            if bond.pair in seen:
                raise ValueError(f"duplicate bond between {bond.pair}")
            seen.add(bond.pair)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def adjacency(self) -> list[list[Bond]]:
        adj: list[list[Bond]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            adj[bond.u].append(bond)
            adj[bond.v].append(bond)
        return adj

    def bond_between(self, u: int, v: int) -> Bond | None:
        if u > v:
            u, v = v, u
        for bond in self.bonds:
            if bond.u == u and bond.v == v:
                return bond
        return None

    def degree(self, index: int) -> int:
        return sum(1 for b in self.bonds if index in b.pair)


EMPTY_GRAPH = MolGraph((), ())


def match_order(order: str, strict_stereo: bool = False) -> str:
    """Bond label used for comparisons; wedge marks collapse to single."""
    if strict_stereo:
        return order
    return _MATCH_ORDER.get(order, order)


def load_valence_table(path: str | Path) -> dict[str, tuple[int, ...]]:
    """Read `element valence [valence ...]` lines; '#' starts a comment."""
    table: dict[str, tuple[int, ...]] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) < 2:
            raise ValenceConfigError(f"line {lineno}: expected element and valences")
        element = parts[0]
        try:
            valences = tuple(sorted(int(p) for p in parts[1:]))
        except ValueError:
            raise ValenceConfigError(f"line {lineno}: non-integer valence") from None
        if any(v < 0 for v in valences):
            raise ValenceConfigError(f"line {lineno}: negative valence")
        table[element] = valences
    return table


def allowed_valences(
    element: str, charge: int, table: dict[str, tuple[int, ...]] | None = None
) -> tuple[int, ...] | None:
    """Charge-adjusted valence list; None means unconstrained (wildcard)."""
    if element == WILDCARD:
        return None
    table = DEFAULT_VALENCES if table is None else table
    base = table.get(element)
    if base is None:
        raise ValenceConfigError(f"no valence entry for element {element!r}")
    if charge > 0 and element in _CATION_ADJUSTED:
        return tuple(v + charge for v in base)
    if charge < 0:
        return tuple(max(0, v + charge) for v in base)
    return base


def bond_order_sum(graph: MolGraph, index: int) -> float:
    """Sum of order contributions over the atom's bonds; aromatic adds 1.5."""
    return sum(
        ORDER_VALUE[b.order] for b in graph.bonds if index in b.pair
    )


def detect_problems(
    graph: MolGraph, table: dict[str, tuple[int, ...]] | None = None
) -> list[ChemProblem]:
    """Valence and aromaticity violations, one entry per offending atom."""
    problems: list[ChemProblem] = []
    adj = graph.adjacency()
    for i, atom in enumerate(graph.atoms):
        order_sum = sum(ORDER_VALUE[b.order] for b in adj[i])
        valences = allowed_valences(atom.element, atom.formal_charge, table)
        if valences is not None:
            max_allowed = max(valences) if valences else 0
            if math.ceil(order_sum) > max_allowed:
                problems.append(ChemProblem(i, order_sum, max_allowed, "valence"))
                continue
        n_aromatic = sum(1 for b in adj[i] if b.order == "aromatic")
        if n_aromatic == 1:
            problems.append(ChemProblem(i, float(n_aromatic), 2.0, "aromatic"))
    return problems


def _removal_candidate(graph: MolGraph, problem: ChemProblem) -> int:
    """Index of the incident bond to drop for this problem."""
    candidates = [
        (k, b) for k, b in enumerate(graph.bonds) if problem.atom_index in b.pair
    ]
    if problem.kind == "aromatic":
        candidates = [(k, b) for k, b in candidates if b.order == "aromatic"]
    # Lowest score goes first; ties prefer the higher bond order, then the
    # lowest bond index.
    return min(candidates, key=lambda kb: (kb[1].score, -ORDER_VALUE[kb[1].order], kb[0]))[0]


def repair(
    graph: MolGraph,
    table: dict[str, tuple[int, ...]] | None = None,
    max_iterations: int = 10,
) -> MolGraph:
    """Delete bonds until detect_problems is empty; atoms are never touched."""
    current = graph
    for _ in range(max_iterations):
        problems = detect_problems(current, table)
        if not problems:
            return current
        drop = _removal_candidate(current, problems[0])
        bonds = current.bonds[:drop] + current.bonds[drop + 1:]
        current = MolGraph(current.atoms, bonds)
    if detect_problems(current, table):
        raise RepairError(
            f"repair did not converge within {max_iterations} iterations", current
        )
    return current


def implicit_hydrogens(
    graph: MolGraph, index: int, table: dict[str, tuple[int, ...]] | None = None
) -> int:
    """Hydrogens implied by the smallest allowed valence >= the bond sum."""
    atom = graph.atoms[index]
    valences = allowed_valences(atom.element, atom.formal_charge, table)
    if valences is None:
        return 0
    occupied = math.ceil(bond_order_sum(graph, index))
    fitting = [v for v in valences if v >= occupied]
    target = min(fitting) if fitting else max(valences)
    return max(0, target - occupied)


def _bond_codes(graph: MolGraph, strict_stereo: bool) -> dict[tuple[int, int], str]:
    return {b.pair: match_order(b.order, strict_stereo) for b in graph.bonds}


def _refine_colors(
    graphs: list[MolGraph], strict_stereo: bool = False
) -> list[list[int]]:
    """Joint neighborhood refinement; colors are comparable across graphs."""
    adjacencies = [g.adjacency() for g in graphs]
    keys: list[list[object]] = []
    for g, adj in zip(graphs, adjacencies):
        keys.append([
            (
                atom.element,
                atom.formal_charge,
                len(adj[i]),
                math.ceil(sum(ORDER_VALUE[b.order] for b in adj[i])),
            )
            for i, atom in enumerate(g.atoms)
        ])
    colors = _rank_keys(keys)
    while True:
        new_keys = []
        for gi, (g, adj) in enumerate(zip(graphs, adjacencies)):
            new_keys.append([
                (
                    colors[gi][i],
                    tuple(sorted(
                        (match_order(b.order, strict_stereo), colors[gi][b.other(i)])
                        for b in adj[i]
                    )),
                )
                for i in range(g.n_atoms)
            ])
        new_colors = _rank_keys(new_keys)
        if new_colors == colors:
            return colors
        colors = new_colors


def _rank_keys(keys: list[list[object]]) -> list[list[int]]:
    universe = sorted({k for group in keys for k in group})
    index = {k: i for i, k in enumerate(universe)}
    return [[index[k] for k in group] for group in keys]


def isomorphic(a: MolGraph, b: MolGraph, strict_stereo: bool = False) -> bool:
    """Label-preserving graph isomorphism.

    Elements, formal charges, adjacency, and bond orders must correspond;
    wedged and dashed bonds count as single unless strict_stereo is set.
    Stereocenter flags are derived annotations and are not compared.
    """
    if a.n_atoms != b.n_atoms or len(a.bonds) != len(b.bonds):
        return False
    if a.n_atoms == 0:
        return True
    colors_a, colors_b = _refine_colors([a, b], strict_stereo)
    if sorted(colors_a) != sorted(colors_b):
        return False

    adj_a = a.adjacency()
    codes_a = _bond_codes(a, strict_stereo)
    codes_b = _bond_codes(b, strict_stereo)
    by_color_b: dict[int, list[int]] = {}
    for j, c in enumerate(colors_b):
        by_color_b.setdefault(c, []).append(j)

    # Order atoms of `a` so each one touches the already-mapped prefix when
    # possible; mismatches then surface early.
    order: list[int] = []
    placed = [False] * a.n_atoms
    while len(order) < a.n_atoms:
        frontier = [
            i for i in range(a.n_atoms)
            if not placed[i] and any(placed[b_.other(i)] for b_ in adj_a[i])
        ]
        pick = min(
            frontier or [i for i in range(a.n_atoms) if not placed[i]],
            key=lambda i: (len(by_color_b[colors_a[i]]), i),
        )
        placed[pick] = True
        order.append(pick)

    mapping: dict[int, int] = {}
    used: set[int] = set()

    def extend(depth: int) -> bool:
        if depth == len(order):
            return True
        i = order[depth]
        for j in by_color_b[colors_a[i]]:
            if j in used:
                continue
            ok = True
            for bond in adj_a[i]:
                k = bond.other(i)
                if k in mapping:
                    code = codes_b.get(tuple(sorted((j, mapping[k]))))
                    if code != codes_a[bond.pair]:
                        ok = False
                        break
            if ok:
                mapping[i] = j
                used.add(j)
                if extend(depth + 1):
                    return True
                del mapping[i]
                used.discard(j)
        return False

    return extend(0)
