"""Bounded edit-correction of predicted graphs against references."""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, replace

from .constructor import ConstructorParams, bond_endpoints, construct, filter_cands
from .entities import (
    ATOM_CLASSES, BOND_CLASSES, CHARGE_CLASSES, BBox, DetBox, EntityChannel,
    EntitySet, intersects,
)
from .molgraph import (
    ORDER_VALUE, Atom, Bond, MolGraph, allowed_valences, detect_problems,
    isomorphic, match_order,
)

EDIT_KINDS = (
    "relabel_atom", "relabel_bond", "delete_bond",
    "insert_bond", "delete_atom", "insert_atom",
)


class LayoutError(RuntimeError):
    """The planar lattice embedding could not be completed."""


class ProjectionError(RuntimeError):
    """Projected pseudo-labels failed to re-construct the corrected graph."""


@dataclass(frozen=True)
class EditOp:
    """One unit-cost graph edit; indices refer to the graph it applies to."""

    kind: str
    atom_index: int | None = None
    pair: tuple[int, int] | None = None
    element: str | None = None
    charge: int = 0
    order: str | None = None
    attach_to: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in EDIT_KINDS:
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if self.pair is not None:
            object.__setattr__(self, "pair", (min(self.pair), max(self.pair)))

    @classmethod
    def relabel_atom(cls, index: int, element: str, charge: int = 0) -> "EditOp":
        return cls("relabel_atom", atom_index=index, element=element, charge=charge)

    @classmethod
    def relabel_bond(cls, pair: tuple[int, int], order: str) -> "EditOp":
        return cls("relabel_bond", pair=pair, order=order)

    @classmethod
    def delete_bond(cls, pair: tuple[int, int]) -> "EditOp":
        return cls("delete_bond", pair=pair)

    @classmethod
    def insert_bond(cls, pair: tuple[int, int], order: str) -> "EditOp":
        return cls("insert_bond", pair=pair, order=order)

    @classmethod
    def delete_atom(cls, index: int) -> "EditOp":
        return cls("delete_atom", atom_index=index)

    @classmethod
    def insert_atom(
        cls, element: str, charge: int = 0,
        attach_to: int | None = None, order: str | None = None,
    ) -> "EditOp":
        return cls("insert_atom", element=element, charge=charge,
                   attach_to=attach_to, order=order)


@dataclass(frozen=True)
class EditScript:
    ops: tuple[EditOp, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", tuple(self.ops))

    @property
    def cost(self) -> int:
        return len(self.ops)


@dataclass(frozen=True)
class Correction:
    """A minimum edit script and the graph it produces."""

    script: EditScript
    graph: MolGraph


def apply_op(graph: MolGraph, op: EditOp) -> MolGraph:
    """Apply one edit; atom deletion renumbers the atoms above it."""
    atoms = list(graph.atoms)
    bonds = list(graph.bonds)
    if op.kind == "relabel_atom":
        _check_index(op.atom_index, len(atoms))
        atoms[op.atom_index] = replace(
            atoms[op.atom_index], element=op.element, formal_charge=op.charge
        )
    elif op.kind == "relabel_bond":
        at = _find_bond(bonds, op.pair)
        bonds[at] = replace(bonds[at], order=op.order)
    elif op.kind == "delete_bond":
        del bonds[_find_bond(bonds, op.pair)]
    elif op.kind == "insert_bond":
        u, v = op.pair
        _check_index(u, len(atoms))
        _check_index(v, len(atoms))
        if any(b.pair == op.pair for b in bonds):
            raise ValueError(f"bond {op.pair} already present")
        bonds.append(Bond(u, v, op.order))
    elif op.kind == "delete_atom":
        _check_index(op.atom_index, len(atoms))
        if any(op.atom_index in b.pair for b in bonds):
            raise ValueError(f"atom {op.atom_index} still has bonds")
        del atoms[op.atom_index]
        bonds = [
            replace(
                b,
                u=b.u - (b.u > op.atom_index),
                v=b.v - (b.v > op.atom_index),
            )
            for b in bonds
        ]
    elif op.kind == "insert_atom":
        atoms.append(Atom(op.element, op.charge))
        if op.attach_to is not None:
            _check_index(op.attach_to, len(atoms) - 1)
            bonds.append(Bond(op.attach_to, len(atoms) - 1, op.order))
    return MolGraph(tuple(atoms), tuple(bonds))


def apply_script(graph: MolGraph, ops) -> MolGraph:
    for op in ops:
        graph = apply_op(graph, op)
    return graph


def _check_index(index: int | None, n: int) -> None:
    if index is None or not 0 <= index < n:
        raise ValueError(f"atom index {index} out of range")


def _find_bond(bonds: list[Bond], pair: tuple[int, int] | None) -> int:
    for k, bond in enumerate(bonds):
        if bond.pair == pair:
            return k
    raise ValueError(f"no bond between {pair}")


def _labels(graph: MolGraph) -> list[tuple[str, int]]:
    return [(a.element, a.formal_charge) for a in graph.atoms]


def _histogram_gap(a: list, b: list) -> int:
    ca, cb = Counter(a), Counter(b)
    overlap = sum((ca & cb).values())
    return max(len(a), len(b)) - overlap


def edit_correct(pred: MolGraph, ref: MolGraph, k_max: int = 3) -> Correction | None:
    """Minimum-cost edit script turning pred into ref, within the budget.

    The search is exact: branch and bound over partial atom assignments with
    admissible lower bounds from label histogram and bond count mismatches.
    With k_max 0 this degenerates to an isomorphism test.  Returns None when
    no script of cost <= k_max exists.
    """
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    found = _search_mapping(pred, ref, k_max)
    if found is None:
        return None
    cost, mapping = found
    ops = _script_from_mapping(pred, ref, mapping)
    if len(ops) != cost:
        raise RuntimeError("internal: script length disagrees with search cost")
    corrected = apply_script(pred, ops)
    if not isomorphic(corrected, ref):
        raise RuntimeError("internal: edit script does not reach the reference")
    return Correction(EditScript(tuple(ops)), corrected)


def _search_mapping(
    pred: MolGraph, ref: MolGraph, budget: int
) -> tuple[int, list[int]] | None:
    labels_p, labels_r = _labels(pred), _labels(ref)
    orders_p = [match_order(b.order) for b in pred.bonds]
    orders_r = [match_order(b.order) for b in ref.bonds]
    lower = max(
        _histogram_gap(labels_p, labels_r),
        abs(len(orders_p) - len(orders_r)),
        _histogram_gap(orders_p, orders_r),
    )
    if lower > budget:
        return None

    n_pred, n_ref = pred.n_atoms, ref.n_atoms
    adj_p = pred.adjacency()
    adj_r = ref.adjacency()
    pred_pairs = {b.pair: match_order(b.order) for b in pred.bonds}
    ref_pairs = {b.pair: match_order(b.order) for b in ref.bonds}

    order = _assignment_order(pred, adj_p)
    mapping = [-2] * n_pred  # -2 unassigned, -1 delete, >= 0 ref index
    ref_owner = [-1] * n_ref
    rem_p = Counter(labels_p)
    rem_r = Counter(labels_r)
    best: list[tuple[int, list[int]] | None] = [None]

    def heuristic() -> int:
        total_p = sum(rem_p.values())
        total_r = sum(rem_r.values())
        overlap = sum((rem_p & rem_r).values())
        return max(total_p, total_r) - overlap

    def completion_cost() -> int:
        missing = [s for s in range(n_ref) if ref_owner[s] < 0]
        if not missing:
            return 0
        missing_set = set(missing)
        incident = sum(
            1 for pair in ref_pairs
            if pair[0] in missing_set or pair[1] in missing_set
        )
        islands = 0
        seen: set[int] = set()
        for s in missing:
            if s in seen:
                continue
            stack, anchored = [s], False
            seen.add(s)
            while stack:
                node = stack.pop()
                for bond in adj_r[node]:
                    other = bond.other(node)
                    if other in missing_set:
                        if other not in seen:
                            seen.add(other)
                            stack.append(other)
                    else:
                        anchored = True
            if not anchored:
                islands += 1
        return len(missing) + incident - (len(missing) - islands)

    def bound() -> int:
        if best[0] is None:
            return budget
        return min(budget, best[0][0] - 1)

    def descend(depth: int, cost: int) -> None:
        if cost + heuristic() > bound():
            return
        if depth == n_pred:
            total = cost + completion_cost()
            if total <= bound():
                best[0] = (total, mapping.copy())
            return
        i = order[depth]
        label_i = labels_p[i]
        for r in range(n_ref):
            if ref_owner[r] >= 0:
                continue
            delta = 0 if label_i == labels_r[r] else 1
            for bond in adj_p[i]:
                j = bond.other(i)
                fj = mapping[j]
                if fj == -2:
                    continue
                if fj == -1:
                    delta += 1
                else:
                    held = ref_pairs.get((min(r, fj), max(r, fj)))
                    if held is None or held != match_order(bond.order):
                        delta += 1
            for bond in adj_r[r]:
                s = bond.other(r)
                j = ref_owner[s]
                if j >= 0 and (min(i, j), max(i, j)) not in pred_pairs:
                    delta += 1
            if cost + delta > bound():
                continue
            mapping[i] = r
            ref_owner[r] = i
            rem_p[label_i] -= 1
            rem_r[labels_r[r]] -= 1
            descend(depth + 1, cost + delta)
            mapping[i] = -2
            ref_owner[r] = -1
            rem_p[label_i] += 1
            rem_r[labels_r[r]] += 1
        delta = 1 + sum(1 for b in adj_p[i] if mapping[b.other(i)] != -2)
        if cost + delta <= bound():
            mapping[i] = -1
            rem_p[label_i] -= 1
            descend(depth + 1, cost + delta)
            mapping[i] = -2
            rem_p[label_i] += 1

    descend(0, 0)
    return best[0]


def _assignment_order(pred: MolGraph, adj_p) -> list[int]:
    order: list[int] = []
    placed = [False] * pred.n_atoms
    while len(order) < pred.n_atoms:
        frontier = [
            i for i in range(pred.n_atoms)
            if not placed[i] and any(placed[b.other(i)] for b in adj_p[i])
        ]
        pool = frontier or [i for i in range(pred.n_atoms) if not placed[i]]
        pick = max(pool, key=lambda i: (len(adj_p[i]), -i))
        placed[pick] = True
        order.append(pick)
    return order


def _script_from_mapping(
    pred: MolGraph, ref: MolGraph, mapping: list[int]
) -> list[EditOp]:
    ops: list[EditOp] = []
    labels_r = _labels(ref)
    ref_pairs = {b.pair: match_order(b.order) for b in ref.bonds}
    owner = {r: i for i, r in enumerate(mapping) if r >= 0}

    kept_ref_pairs: set[tuple[int, int]] = set()
    relabels: list[EditOp] = []
    for bond in sorted(pred.bonds, key=lambda b: b.pair):
        fu, fv = mapping[bond.u], mapping[bond.v]
        target = None if fu < 0 or fv < 0 else (min(fu, fv), max(fu, fv))
        held = ref_pairs.get(target) if target is not None else None
        if held is None:
            ops.append(EditOp.delete_bond(bond.pair))
        else:
            kept_ref_pairs.add(target)
            if held != match_order(bond.order):
                relabels.append(EditOp.relabel_bond(bond.pair, held))
    ops.extend(relabels)

    for i, r in enumerate(mapping):
        if r >= 0 and (pred.atoms[i].element, pred.atoms[i].formal_charge) != labels_r[r]:
            ops.append(EditOp.relabel_atom(i, *labels_r[r]))

    deleted = sorted((i for i, r in enumerate(mapping) if r == -1), reverse=True)
    ops.extend(EditOp.delete_atom(i) for i in deleted)
    deleted_set = set(deleted)
    working_index = {}
    shift = 0
    for i in range(pred.n_atoms):
        if i in deleted_set:
            shift += 1
        else:
            working_index[i] = i - shift

    placed = {r: working_index[i] for r, i in owner.items()}
    next_index = pred.n_atoms - len(deleted)
    adj_r = ref.adjacency()
    bundled: set[tuple[int, int]] = set()
    remaining = {s for s in range(ref.n_atoms) if s not in placed}
    while remaining:
        anchored = sorted(
            s for s in remaining
            if any(b.other(s) in placed for b in adj_r[s])
        )
        if anchored:
            s = anchored[0]
            anchor_bond = min(
                (b for b in adj_r[s] if b.other(s) in placed),
                key=lambda b: b.other(s),
            )
            ops.append(EditOp.insert_atom(
                ref.atoms[s].element, ref.atoms[s].formal_charge,
                placed[anchor_bond.other(s)], match_order(anchor_bond.order),
            ))
            bundled.add(anchor_bond.pair)
        else:
            s = min(remaining)
            ops.append(EditOp.insert_atom(
                ref.atoms[s].element, ref.atoms[s].formal_charge
            ))
        placed[s] = next_index
        next_index += 1
        remaining.discard(s)

    for bond in sorted(ref.bonds, key=lambda b: b.pair):
        if bond.pair in kept_ref_pairs or bond.pair in bundled:
            continue
        ops.append(EditOp.insert_bond(
            (placed[bond.u], placed[bond.v]), match_order(bond.order)
        ))
    return ops


# ---------------------------------------------------------------------------
# Synthetic fixtures: lattice layout, rendering, and planted corruptions.

LATTICE_SPACING = 60.0
ATOM_BOX_HALF = 10.0
BOND_BOX_PAD = 8.0
CHARGE_BOX_HALF = 3.0
STEREO_BOX_HALF = 4.0

_AXIAL_STEPS = ((1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1))


def _axial_to_pixel(q: int, r: int) -> tuple[float, float]:
    x = LATTICE_SPACING * (q + r / 2.0)
    y = LATTICE_SPACING * (r * math.sqrt(3.0) / 2.0)
    return (round(x), round(y))


def _axial_adjacent(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return (a[0] - b[0], a[1] - b[1]) in _AXIAL_STEPS


def _layout(graph: MolGraph) -> list[tuple[float, float]]:
    """Place atoms on a triangular lattice.

    Strict mode puts every bond on a unit lattice edge, which keeps bond
    boxes short and endpoint resolution unambiguous.  Graphs with no such
    embedding fall back to a lax placement with long ring-closure bonds;
    the caller's reconstruction check decides whether that render is usable.
    """
    try:
        return _layout_cells(graph, strict=True)
    except LayoutError:
        return _layout_cells(graph, strict=False)


def _layout_cells(graph: MolGraph, strict: bool) -> list[tuple[float, float]]:
    n = graph.n_atoms
    adj = graph.adjacency()
    order: list[int] = []
    parents: list[int | None] = []
    seen = [False] * n
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        order.append(root)
        parents.append(None)
        queue = [root]
        while queue:
            node = queue.pop(0)
            for bond in adj[node]:
                other = bond.other(node)
                if not seen[other]:
                    seen[other] = True
                    order.append(other)
                    parents.append(node)
                    queue.append(other)

    cells: dict[int, tuple[int, int]] = {}
    occupied: set[tuple[int, int]] = set()
    steps = [0]
    component_base = 0

    def place(k: int) -> bool:
        steps[0] += 1
        if steps[0] > 20000:
            raise LayoutError("placement search budget exhausted")
        if k == len(order):
            return True
        atom = order[k]
        parent = parents[k]
        if parent is None:
            base = max((q for q, _ in occupied), default=-4) + 4
            choices = [(base + d, 0) for d in range(0, 4 * n, 4)]
        else:
            pq, pr = cells[parent]
            placed_mates = [
                cells[b.other(atom)] for b in adj[atom] if b.other(atom) in cells
            ]
            choices = [(pq + dq, pr + dr) for dq, dr in _AXIAL_STEPS]
            if strict:
                # every bond must land on a unit lattice edge, otherwise its
                # box would span other atoms and endpoint search can misroute
                choices = [
                    cell for cell in choices
                    if all(_axial_adjacent(cell, mate) for mate in placed_mates)
                ]
            else:
                choices.sort(key=lambda cell: -sum(
                    1 for mate in placed_mates if _axial_adjacent(cell, mate)
                ))
        for cell in choices:
            if cell in occupied:
                continue
            cells[atom] = cell
            occupied.add(cell)
            if place(k + 1):
                return True
            occupied.discard(cell)
            del cells[atom]
        return False

    if not place(0):
        raise LayoutError("no lattice embedding found")
    return [_axial_to_pixel(*cells[i]) for i in range(n)]


def _atom_box(center: tuple[float, float]) -> BBox:
    x, y = center
    return BBox(x - ATOM_BOX_HALF, y - ATOM_BOX_HALF,
                x + ATOM_BOX_HALF, y + ATOM_BOX_HALF)


def _bond_box(a: tuple[float, float], b: tuple[float, float]) -> BBox:
    box = BBox(
        min(a[0], b[0]) - BOND_BOX_PAD, min(a[1], b[1]) - BOND_BOX_PAD,
        max(a[0], b[0]) + BOND_BOX_PAD, max(a[1], b[1]) + BOND_BOX_PAD,
    )
    length = math.dist(a, b)
    if length <= LATTICE_SPACING + 1.0:
        return box
    # long bonds get a square box: endpoint resolution then goes through the
    # corner rule, whose extremes sit at the chord ends instead of the edge
    # midpoints that collinear intermediate atoms crowd
    grow = abs(box.width - box.height) / 2.0
    if box.width > box.height:
        return BBox(box.xmin, box.ymin - grow, box.xmax, box.ymax + grow)
    if box.height > box.width:
        return BBox(box.xmin - grow, box.ymin, box.xmax + grow, box.ymax)
    return box


def _small_box(center: tuple[float, float], half: float) -> BBox:
    return BBox(center[0] - half, center[1] - half,
                center[0] + half, center[1] + half)


_BOND_IDS = {name: i for i, name in BOND_CLASSES.items()}
_ATOM_IDS = {symbol: i for i, symbol in ATOM_CLASSES.items()}
_CHARGE_IDS = {value: i for i, value in CHARGE_CLASSES.items()}
_PLAIN_ORDERS = ("single", "double", "triple")


def _fits_valence(element: str, charge: int, order_sum: float) -> bool:
    try:
        valences = allowed_valences(element, charge)
    except Exception:
        return False
    return valences is None or math.ceil(order_sum) <= max(valences)


def plant_errors(
    truth: MolGraph, n_edits: int = 0, seed: int = 0, image_id: str = "synthetic"
) -> EntitySet:
    """Render a graph to synthetic detections, then corrupt n_edits entries.

    Corruptions are sampled so each one maps to exactly one graph edit after
    re-construction: atom relabels and bond relabels stay valence-safe,
    inserted bonds are single, non-parallel, and must resolve back to their
    own endpoints, and aromatic bonds are left alone (touching one would
    cascade through repair).  Deterministic for a given seed.  Geometry is
    sized for default ConstructorParams.
    """
    if detect_problems(truth):
        raise ValueError("truth graph must be chemically valid")
    params = ConstructorParams()
    positions = _layout(truth)
    atom_rows = [
        [_ATOM_IDS[a.element], _atom_box(positions[i])]
        for i, a in enumerate(truth.atoms)
    ]
    bond_rows = [
        [_BOND_IDS[b.order], _bond_box(positions[b.u], positions[b.v]), b.pair]
        for b in truth.bonds
    ]
    charge_rows = [
        [_CHARGE_IDS[a.formal_charge], _small_box(positions[i], CHARGE_BOX_HALF)]
        for i, a in enumerate(truth.atoms) if a.formal_charge != 0
    ]
    stereo_rows = [
        [0, _small_box(positions[i], STEREO_BOX_HALF)]
        for i, a in enumerate(truth.atoms) if a.is_stereocenter
    ]

    elements = [a.element for a in truth.atoms]
    charges = [a.formal_charge for a in truth.atoms]
    orders: dict[tuple[int, int], str] = {b.pair: b.order for b in truth.bonds}
    touched_atoms: set[int] = set()
    touched_pairs: set[tuple[int, int]] = set()
    rng = random.Random(seed)

    def assemble() -> EntitySet:
        return EntitySet(
            image_id,
            EntityChannel("atom", tuple(DetBox(box, cid) for cid, box in atom_rows)),
            EntityChannel("bond", tuple(DetBox(row[1], row[0]) for row in bond_rows)),
            EntityChannel("charge", tuple(DetBox(box, cid) for cid, box in charge_rows)),
            EntityChannel("stereo", tuple(DetBox(box, cid) for cid, box in stereo_rows)),
        )

    if not isomorphic(construct(assemble(), params), truth):
        raise LayoutError("rendered boxes do not re-construct the input graph")

    def resolves_to(box: BBox, expect: tuple[int, int]) -> bool:
        det_atoms = EntityChannel(
            "atom", tuple(DetBox(row[1], row[0]) for row in atom_rows)
        )
        hits = bond_endpoints(det_atoms, DetBox(box, _BOND_IDS["single"]), params)
        if len(hits) == 2:
            found = (hits[0], hits[1])
        elif len(hits) > 2:
            try:
                found = filter_cands(hits, det_atoms, box)
            except ValueError:
                return False
        else:
            return False
        return (min(found), max(found)) == expect

    def order_sum_at(i: int, skip=None, extra=0.0) -> float:
        total = extra
        for pair, order in orders.items():
            if i in pair and pair != skip:
                total += ORDER_VALUE[order]
        return total

    def relabel_atom_candidates() -> list[tuple[int, str]]:
        out = []
        for i in range(truth.n_atoms):
            if i in touched_atoms:
                continue
            for element in sorted(_ATOM_IDS):
                if element != elements[i] and _fits_valence(
                    element, charges[i], order_sum_at(i)
                ):
                    out.append((i, element))
        return out

    def relabel_bond_candidates() -> list[tuple[tuple[int, int], str]]:
        out = []
        for pair, order in sorted(orders.items()):
            normal = match_order(order)
            if pair in touched_pairs or normal not in _PLAIN_ORDERS:
                continue
            for new_order in _PLAIN_ORDERS:
                if new_order == normal:
                    continue
                grow = ORDER_VALUE[new_order]
                if all(
                    _fits_valence(elements[e], charges[e],
                                  order_sum_at(e, skip=pair, extra=grow))
                    for e in pair
                ):
                    out.append((pair, new_order))
        return out

    def delete_bond_candidates() -> list[tuple[int, int]]:
        return [
            pair for pair, order in sorted(orders.items())
            if pair not in touched_pairs and match_order(order) in _PLAIN_ORDERS
        ]

    def insert_bond_candidates() -> list[tuple[int, int]]:
        out = []
        for u in range(truth.n_atoms):
            for v in range(u + 1, truth.n_atoms):
                pair = (u, v)
                if pair in orders or pair in touched_pairs:
                    continue
                if not all(
                    _fits_valence(elements[e], charges[e],
                                  order_sum_at(e, extra=1.0))
                    for e in pair
                ):
                    continue
                if resolves_to(_bond_box(positions[u], positions[v]), pair):
                    out.append(pair)
        return out

    for _ in range(n_edits):
        kinds = ["relabel_atom", "relabel_bond", "delete_bond", "insert_bond"]
        rng.shuffle(kinds)
        for kind in kinds:
            if kind == "relabel_atom":
                cands = relabel_atom_candidates()
                if not cands:
                    continue
                i, element = rng.choice(cands)
                elements[i] = element
                atom_rows[i][0] = _ATOM_IDS[element]
                touched_atoms.add(i)
            elif kind == "relabel_bond":
                cands = relabel_bond_candidates()
                if not cands:
                    continue
                pair, new_order = rng.choice(cands)
                orders[pair] = new_order
                for row in bond_rows:
                    if row[2] == pair:
                        row[0] = _BOND_IDS[new_order]
                touched_pairs.add(pair)
            elif kind == "delete_bond":
                cands = delete_bond_candidates()
                if not cands:
                    continue
                pair = rng.choice(cands)
                del orders[pair]
                bond_rows = [row for row in bond_rows if row[2] != pair]
                touched_pairs.add(pair)
            else:
                cands = insert_bond_candidates()
                if not cands:
                    continue
                pair = rng.choice(cands)
                orders[pair] = "single"
                bond_rows.append([
                    _BOND_IDS["single"],
                    _bond_box(positions[pair[0]], positions[pair[1]]),
                    pair,
                ])
                touched_pairs.add(pair)
            break
        else:
            raise ValueError("no further corruption is possible on this graph")

    return assemble()


def project_pseudo_labels(
    pred_entities: EntitySet,
    script: EditScript,
    corrected: MolGraph,
    params: ConstructorParams = ConstructorParams(),
) -> EntitySet:
    """Push an edit script back onto the entity boxes.

    Relabels keep the original box with a new class; deletions drop boxes;
    an inserted bond spans its endpoint boxes and an inserted atom gets a
    median-size box placed outward from its attachment.  The result must
    re-construct to the corrected graph, otherwise ProjectionError is raised;
    geometry is validated only through that oracle.
    """
    base = construct(pred_entities, params)
    if not script.ops:
        if not isomorphic(base, corrected):
            raise ProjectionError("construction no longer matches the corrected graph")
        return pred_entities

    boxes: list[BBox] = [a.source_box for a in base.atoms]
    labels: list[tuple[str, int, bool]] = [
        (a.element, a.formal_charge, a.is_stereocenter) for a in base.atoms
    ]
    bond_rows: list[dict] = [
        {"pair": b.pair, "order": b.order, "box": b.source_box} for b in base.bonds
    ]
    if any(box is None for box in boxes) or any(r["box"] is None for r in bond_rows):
        raise ProjectionError("constructed graph lacks box provenance")

    def median_half() -> float:
        spans = sorted(
            v for box in boxes for v in (box.width / 2.0, box.height / 2.0)
        )
        if not spans:
            return ATOM_BOX_HALF
        return spans[len(spans) // 2]

    for op in script.ops:
        if op.kind == "relabel_atom":
            _, _, flag = labels[op.atom_index]
            labels[op.atom_index] = (op.element, op.charge, flag)
        elif op.kind == "relabel_bond":
            for row in bond_rows:
                if row["pair"] == op.pair:
                    row["order"] = op.order
                    break
            else:
                raise ProjectionError(f"no bond {op.pair} to relabel")
        elif op.kind == "delete_bond":
            before = len(bond_rows)
            bond_rows = [r for r in bond_rows if r["pair"] != op.pair]
            if len(bond_rows) == before:
                raise ProjectionError(f"no bond {op.pair} to delete")
        elif op.kind == "insert_bond":
            u, v = op.pair
            bond_rows.append({
                "pair": (min(u, v), max(u, v)),
                "order": op.order,
                "box": _union_box(boxes[u], boxes[v]),
            })
        elif op.kind == "delete_atom":
            i = op.atom_index
            if any(i in r["pair"] for r in bond_rows):
                raise ProjectionError(f"atom {i} still bonded at deletion")
            del boxes[i]
            del labels[i]
            for row in bond_rows:
                u, v = row["pair"]
                row["pair"] = (u - (u > i), v - (v > i))
        else:  # insert_atom
            new_box = _synthesize_atom_box(boxes, op.attach_to, median_half())
            new_index = len(boxes)
            boxes.append(new_box)
            labels.append((op.element, op.charge, False))
            if op.attach_to is not None:
                bond_rows.append({
                    "pair": (min(op.attach_to, new_index), max(op.attach_to, new_index)),
                    "order": op.order,
                    "box": _union_box(boxes[op.attach_to], new_box),
                })

    atoms = EntityChannel("atom", tuple(
        DetBox(box, _ATOM_IDS[label[0]]) for box, label in zip(boxes, labels)
    ))
    bonds = EntityChannel("bond", tuple(
        DetBox(row["box"], _BOND_IDS[row["order"]]) for row in bond_rows
    ))
    charge_boxes = tuple(
        DetBox(_small_box(boxes[i].center, CHARGE_BOX_HALF), _CHARGE_IDS[label[1]])
        for i, label in enumerate(labels) if label[1] != 0
    )
    stereo_boxes = tuple(
        DetBox(_small_box(boxes[i].center, STEREO_BOX_HALF), 0)
        for i, label in enumerate(labels) if label[2]
    )
    result = EntitySet(
        pred_entities.image_id,
        atoms, bonds,
        EntityChannel("charge", charge_boxes),
        EntityChannel("stereo", stereo_boxes),
    )
    rebuilt = construct(result, params)
    if not isomorphic(rebuilt, corrected):
        raise ProjectionError("pseudo-labels do not re-construct the corrected graph")
    return result


def _union_box(a: BBox, b: BBox) -> BBox:
    return BBox(min(a.xmin, b.xmin), min(a.ymin, b.ymin),
                max(a.xmax, b.xmax), max(a.ymax, b.ymax))


def _synthesize_atom_box(
    boxes: list[BBox], attach_to: int | None, half: float
) -> BBox:
    if attach_to is None or not boxes:
        base = max((box.xmax for box in boxes), default=0.0)
        return _small_box((base + 6 * half, 0.0), half)
    ax, ay = boxes[attach_to].center
    others = [box.center for k, box in enumerate(boxes) if k != attach_to]
    if others:
        mx = sum(p[0] for p in others) / len(others)
        my = sum(p[1] for p in others) / len(others)
        dx, dy = ax - mx, ay - my
    else:
        dx, dy = 1.0, 0.0
    norm = math.hypot(dx, dy)
    if norm < 1e-9:
        dx, dy, norm = 1.0, 0.0, 1.0
    dx, dy = dx / norm, dy / norm
    distance = 5.0 * half
    for turn in range(8):
        angle = turn * math.pi / 4.0
        cos_t, sin_t = math.cos(angle), math.sin(angle)
        vx = dx * cos_t - dy * sin_t
        vy = dx * sin_t + dy * cos_t
        candidate = _small_box((ax + vx * distance, ay + vy * distance), half)
        if not any(intersects(candidate, box) for box in boxes):
            return candidate
    return _small_box((ax + dx * distance, ay + dy * distance), half)
