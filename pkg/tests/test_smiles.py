import random

import pytest
from hypothesis import given, settings, strategies as st

from detmol import Atom, Bond, MolGraph, SmilesError, isomorphic, parse, write
from conftest import permute_graph, random_molecule


class TestParseBasics:
    def test_linear(self):
        g = parse("CCO")
        assert [a.element for a in g.atoms] == ["C", "C", "O"]
        assert [(b.u, b.v, b.order) for b in g.bonds] == [
            (0, 1, "single"), (1, 2, "single")]

    def test_branch(self):
        g = parse("CC(C)C")
        assert g.degree(1) == 3

    def test_nested_branches(self):
        g = parse("CC(C(C)C)C")
        assert g.n_atoms == 6
        assert g.degree(1) == 3 and g.degree(2) == 3

    def test_double_and_triple(self):
        g = parse("C=C")
        assert g.bonds[0].order == "double"
        assert parse("C#N").bonds[0].order == "triple"

    def test_two_letter_elements(self):
        g = parse("ClCBr")
        assert [a.element for a in g.atoms] == ["Cl", "C", "Br"]

    def test_ring_closure(self):
        g = parse("C1CCCCC1")
        assert len(g.bonds) == 6
        assert g.bond_between(0, 5) is not None

    def test_ring_bond_order_on_either_side(self):
        for s in ("C=1CCCCC=1", "C=1CCCCC1", "C1CCCCC=1"):
            g = parse(s)
            assert g.bond_between(0, 5).order == "double"

    def test_percent_ring_number(self):
        g = parse("C%12CCCCC%12")
        assert g.bond_between(0, 5) is not None

    def test_aromatic_ring(self):
        g = parse("c1ccccc1")
        assert all(b.order == "aromatic" for b in g.bonds)
        assert len(g.bonds) == 6

    def test_aromatic_implicit_bond_needs_both_lowercase(self):
        g = parse("Cc1ccccc1")
        orders = {b.order for b in g.bonds}
        assert "single" in orders and "aromatic" in orders
        assert g.bond_between(0, 1).order == "single"

    def test_slash_bonds_are_single(self):
        g = parse("C/C=C/C")
        assert [b.order for b in g.bonds] == ["single", "double", "single"]

    def test_dot_splits_components(self):
        g = parse("CC.O")
        assert g.n_atoms == 3
        assert len(g.bonds) == 1

    def test_explicit_aromatic_bond_symbol(self):
        g = parse("C:C")
        assert g.bonds[0].order == "aromatic"


class TestBrackets:
    def test_charges(self):
        assert parse("[O-]").atoms[0].formal_charge == -1
        assert parse("[N+]").atoms[0].formal_charge == 1
        assert parse("[S+2]").atoms[0].formal_charge == 2
        assert parse("[O--]").atoms[0].formal_charge == -2
        assert parse("[N++]").atoms[0].formal_charge == 2

    def test_deuterium_tritium(self):
        assert parse("[2H]").atoms[0].element == "D"
        assert parse("[3H]").atoms[0].element == "T"
        assert parse("[H]").atoms[0].element == "H"

    def test_stereo_marker_sets_flag(self):
        g = parse("C[C@H](N)O")
        assert g.atoms[1].is_stereocenter
        g2 = parse("C[C@@H](N)O")
        assert g2.atoms[1].is_stereocenter

    def test_hydrogen_count_is_dropped(self):
        # implicit hydrogens are recomputed from valence instead
        g = parse("[CH3]C")
        assert g.n_atoms == 2
        assert g.atoms[0].element == "C"

    def test_wildcard(self):
        assert parse("[*]").atoms[0].element == "*"
        assert parse("*C").atoms[0].element == "*"

    def test_aromatic_bracket_atom(self):
        g = parse("c1ccc[nH]c1".replace("[nH]", "n"))
        assert g.atoms[4].element == "N"

    def test_charge_range_enforced(self):
        with pytest.raises(SmilesError):
            parse("[O-3]")
        with pytest.raises(SmilesError):
            parse("[S+7]")

    def test_isotope_only_for_hydrogen(self):
        with pytest.raises(SmilesError):
            parse("[13C]")
        with pytest.raises(SmilesError):
            parse("[4H]")

    def test_hcount_on_explicit_hydrogen_rejected(self):
        with pytest.raises(SmilesError):
            parse("[HH]")


class TestParseErrors:
    @pytest.mark.parametrize("text", [
        "", "C(", "C)", "C(C", "C1CC", "C=", "=C", "C..C", "C%1C",
        "[Q]", "[C", "C1CC=1=", "Xx", "99",
    ])
    def test_rejects(self, text):
        with pytest.raises(SmilesError):
            parse(text)

    def test_redundant_branch_nesting_is_tolerated(self):
        # parens balance, so this is not an error; both branches hang off C0
        assert isomorphic(parse("C((C))C"), parse("C(C)C"))

    def test_offset_reported(self):
        with pytest.raises(SmilesError) as err:
            parse("CC)")
        assert "offset 2" in str(err.value)

    def test_ring_self_loop(self):
        with pytest.raises(SmilesError):
            parse("C11")

    def test_duplicate_ring_bond(self):
        with pytest.raises(SmilesError):
            parse("C12C12")

    def test_conflicting_ring_orders(self):
        with pytest.raises(SmilesError):
            parse("C=1CCCCC#1")

    def test_dot_then_bond_rejected(self):
        with pytest.raises(SmilesError):
            parse("C.=C")


class TestWriter:
    def test_empty_graph(self):
        assert write(MolGraph((), ())) == ""

    def test_single_atom(self):
        assert write(parse("C")) == "C"
        assert write(parse("[O-]")) == "[O-]"

    def test_deterministic_across_permutation(self):
        rng = random.Random(11)
        for _ in range(60):
            g = random_molecule(rng)
            h, _ = permute_graph(rng, g)
            assert write(g) == write(h)

    def test_isotopes_roundtrip(self):
        s = write(parse("[2H]O[3H]"))
        assert "[2H]" in s and "[3H]" in s
        assert isomorphic(parse(s), parse("[2H]O[3H]"))

    def test_aromatic_ring_emitted_lowercase(self):
        s = write(parse("c1ccccc1"))
        assert "c" in s and "C" not in s

    def test_single_bond_between_aromatic_systems_is_explicit(self):
        g = parse("c1ccccc1-c1ccccc1")
        s = write(g)
        assert isomorphic(parse(s), g)
        # without the explicit single bond the rings would fuse aromatically
        assert "-" in s

    def test_lone_aromatic_bond_emits_colon(self):
        # chemically invalid but representable; the writer must not lose it
        g = MolGraph((Atom("C"), Atom("C")), (Bond(0, 1, "aromatic"),))
        s = write(g)
        assert ":" in s
        assert isomorphic(parse(s), g)

    def test_components_joined_by_dot(self):
        g = parse("CCO.CC")
        s = write(g)
        assert s.count(".") == 1
        assert isomorphic(parse(s), g)

    def test_wedges_written_as_single(self):
        g = MolGraph((Atom("C"), Atom("C")), (Bond(0, 1, "wedged"),))
        assert write(g) == "CC"

    def test_charge_tokens(self):
        assert write(MolGraph((Atom("S", 2),), ())) == "[S+2]"
        assert write(MolGraph((Atom("O", -2),), ())) == "[O-2]"
        assert write(MolGraph((Atom("Sn"),), ())) == "[Sn]"

    def test_many_rings_use_percent_markers(self):
        # a wheel with 11 spokes plus rim closures forces ring ids >= 10
        n = 12
        atoms = tuple(Atom("*") for _ in range(n))
        bonds = tuple(Bond(0, i, "single") for i in range(1, n)) + tuple(
            Bond(i, i + 1, "single") for i in range(1, n - 1)
        ) + (Bond(1, n - 1, "single"),)
        g = MolGraph(atoms, bonds)
        s = write(g)
        assert "%" in s
        assert isomorphic(parse(s), g)


class TestRoundTrip:
    @settings(max_examples=120, deadline=None)
    @given(st.integers(0, 10 ** 9))
    def test_parse_write_isomorphic(self, seed):
        g = random_molecule(random.Random(seed))
        assert isomorphic(parse(write(g)), g)

    def test_known_molecules(self):
        for s in [
            "CCO", "c1ccccc1", "CC(=O)N", "C[N+](C)(C)C", "O=C=O",
            "C[C@H](N)C(=O)O", "CC(C)(C)c1ccc(O)cc1", "[2H]OC", "*CC*",
            "N#Cc1ccccc1", "C1CC1.C1CCC1", "[O-]S(=O)(=O)[O-]",
            "FC(F)(F)c1ccccc1", "[Se]1CCCC1", "B(O)(O)c1ccccc1",
        ]:
            g = parse(s)
            assert isomorphic(parse(write(g)), g), s

    def test_write_stable_under_reparse(self):
        rng = random.Random(3)
        for _ in range(40):
            g = random_molecule(rng)
            s = write(g)
            assert write(parse(s)) == s
