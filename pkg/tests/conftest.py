"""Shared generators: random valence-clean molecules and permutations."""

import math
from itertools import permutations

import pytest

from detmol import Atom, Bond, MolGraph, detect_problems
from detmol.molgraph import ORDER_VALUE, allowed_valences

# weighted toward organic chemistry; rare entries keep the whole vocabulary
# reachable without dominating the sample
ELEMENT_POOL = (
    ["C"] * 30 + ["N"] * 8 + ["O"] * 8 + ["S"] * 4
    + ["F", "Cl", "Br", "I"] * 2
    + ["P", "B", "Si", "Se"]
    + ["Sn", "As", "Al", "Ge", "Te", "*", "H", "D", "T"]
)


def _cap(atom: Atom) -> float:
    valences = allowed_valences(atom.element, atom.formal_charge)
    return math.inf if valences is None else float(max(valences))


def random_molecule(rng, max_heavy: int = 12, p_aromatic: float = 0.35) -> MolGraph:
    """Random chemically valid graph; aromatic six-ring in ~p_aromatic of
    draws, occasional wedge bonds, charges, and an extra ring closure."""
    n = rng.randint(2, max_heavy)
    aromatic = rng.random() < p_aromatic
    if aromatic and n < 6:
        n = rng.randint(6, max_heavy)
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    sums: list[float] = []

    if aromatic:
        for _ in range(6):
            atoms.append(Atom("C"))
            sums.append(3.0)
        for i in range(6):
            bonds.append(Bond(i, (i + 1) % 6, "aromatic"))
    else:
        atoms.append(Atom(rng.choice(ELEMENT_POOL)))
        sums.append(0.0)

    while len(atoms) < n:
        element = rng.choice(ELEMENT_POOL)
        new_cap = _cap(Atom(element))
        anchors = [
            i for i in range(len(atoms))
            if math.ceil(sums[i] + 1.0) <= _cap(atoms[i])
        ]
        if not anchors:
            break
        anchor = rng.choice(anchors)
        order = "single"
        roll = rng.random()
        if roll < 0.05 and new_cap >= 3 and math.ceil(sums[anchor] + 3) <= _cap(atoms[anchor]):
            order = "triple"
        elif roll < 0.22 and new_cap >= 2 and math.ceil(sums[anchor] + 2) <= _cap(atoms[anchor]):
            order = "double"
        elif roll < 0.30:
            order = rng.choice(["wedged", "dashed"])
        new_index = len(atoms)
        stereo = order in ("wedged", "dashed") and rng.random() < 0.5
        atoms.append(Atom(element))
        if stereo:
            atoms[anchor] = Atom(
                atoms[anchor].element, atoms[anchor].formal_charge, True
            )
        bonds.append(Bond(anchor, new_index, order))
        value = ORDER_VALUE[order]
        sums[anchor] += value
        sums.append(value)

    if len(atoms) >= 5 and rng.random() < 0.25:
        adjacent = {b.pair for b in bonds}
        closures = [
            (u, v)
            for u in range(len(atoms)) for v in range(u + 1, len(atoms))
            if (u, v) not in adjacent
            and math.ceil(sums[u] + 1.0) <= _cap(atoms[u])
            and math.ceil(sums[v] + 1.0) <= _cap(atoms[v])
        ]
        if closures:
            u, v = rng.choice(closures)
            bonds.append(Bond(u, v, "single"))
            sums[u] += 1.0
            sums[v] += 1.0

    if rng.random() < 0.2:
        cations = [
            i for i, a in enumerate(atoms)
            if a.element == "N" and a.formal_charge == 0 and sums[i] <= 4.0
        ]
        anions = [
            i for i, a in enumerate(atoms)
            if a.element == "O" and a.formal_charge == 0 and sums[i] <= 1.0
        ]
        if cations and rng.random() < 0.7:
            i = rng.choice(cations)
            atoms[i] = Atom("N", 1, atoms[i].is_stereocenter)
        elif anions:
            i = rng.choice(anions)
            atoms[i] = Atom("O", -1, atoms[i].is_stereocenter)

    graph = MolGraph(tuple(atoms), tuple(bonds))
    assert not detect_problems(graph)
    return graph


def permute_graph(rng, graph: MolGraph):
    """Relabeled copy under a random atom permutation; returns (copy, perm)
    with perm[old_index] = new_index."""
    perm = list(range(graph.n_atoms))
    rng.shuffle(perm)
    atoms = [None] * graph.n_atoms
    for old, new in enumerate(perm):
        atoms[new] = graph.atoms[old]
    bonds = [
        Bond(perm[b.u], perm[b.v], b.order, b.source_box, b.score)
        for b in graph.bonds
    ]
    rng.shuffle(bonds)
    return MolGraph(tuple(atoms), tuple(bonds)), perm


def brute_force_isomorphic(a: MolGraph, b: MolGraph) -> bool:
    """Permutation-exhaustive oracle; only for small graphs."""
    if a.n_atoms != b.n_atoms or len(a.bonds) != len(b.bonds):
        return False
    if a.n_atoms > 8:
        raise ValueError("oracle limited to 8 atoms")

    def norm(order):
        return "single" if order in ("wedged", "dashed") else order

    b_edges = {(bond.u, bond.v): norm(bond.order) for bond in b.bonds}
    for perm in permutations(range(a.n_atoms)):
        if any(
            (a.atoms[i].element, a.atoms[i].formal_charge)
            != (b.atoms[perm[i]].element, b.atoms[perm[i]].formal_charge)
            for i in range(a.n_atoms)
        ):
            continue
        mapped = {
            (min(perm[bond.u], perm[bond.v]), max(perm[bond.u], perm[bond.v])):
            norm(bond.order)
            for bond in a.bonds
        }
        if mapped == b_edges:
            return True
    return False


@pytest.fixture
def fixtures_dir():
    from pathlib import Path
    return Path(__file__).parent / "fixtures"
