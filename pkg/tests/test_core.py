"""Domain types and library algebra."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deldesign.core import (
    CycleSpec,
    DesignState,
    SizeConstraint,
    cycle_counts,
    decode_selection,
    encode_selection,
    enumerate_feasible_states,
    feasible_count_triples,
    library_size,
)
from deldesign.errors import ConfigError, DimensionError


PAPER_SPEC = CycleSpec((90, 89, 197))


class TestCycleSpec:
    def test_total_bits_paper_instance(self):
        # [PAPER] 90 + 89 + 197 building blocks
        assert PAPER_SPEC.total_bits == 376
        assert PAPER_SPEC.n_cycles == 3

    def test_offsets(self):
        spec = CycleSpec((2, 3, 4))
        assert [spec.offset(i) for i in range(3)] == [0, 2, 5]
        assert spec.slices() == [slice(0, 2), slice(2, 5), slice(5, 9)]

    def test_cycle_of_bit(self):
        spec = CycleSpec((2, 3, 4))
        assert [spec.cycle_of_bit(b) for b in range(9)] == [0, 0, 1, 1, 1, 2, 2, 2, 2]
        with pytest.raises(DimensionError):
            spec.cycle_of_bit(9)

    def test_rejects_single_cycle(self):
        with pytest.raises(ConfigError):
            CycleSpec((5,))

    def test_rejects_empty_cycle(self):
        with pytest.raises(ConfigError):
            CycleSpec((2, 0, 3))


class TestDesignState:
    def test_round_trip_array(self):
        s = DesignState((1, 0, 1, 1))
        assert DesignState.from_array(s.to_array()) == s

    def test_bit_set_clear(self):
        s = DesignState.zeros(CycleSpec((2, 2)))
        s2 = s.with_bit_set(1)
        assert s2.bits == (0, 1, 0, 0)
        assert s2.with_bit_cleared(1) == s
        with pytest.raises(DimensionError):
            s2.with_bit_set(1)
        with pytest.raises(DimensionError):
            s.with_bit_cleared(0)

    def test_rejects_non_binary(self):
        with pytest.raises(DimensionError):
            DesignState((0, 2, 1))


class TestSizeConstraint:
    def test_contains(self):
        c = SizeConstraint(2, 5)
        assert not c.contains(1)
        assert c.contains(2)
        assert c.contains(5)
        assert not c.contains(6)

    @pytest.mark.parametrize("lo,hi", [(0, 3), (4, 3), (-1, -1)])
    def test_rejects_bad_bounds(self, lo, hi):
        with pytest.raises(ConfigError):
            SizeConstraint(lo, hi)


class TestDecodeEncode:
    def test_spec_example_223(self):
        # [TRIVIAL] spec [2,2,3], bits 10|01|110
        spec = CycleSpec((2, 2, 3))
        s = DesignState((1, 0, 0, 1, 1, 1, 0))
        assert decode_selection(s, spec) == [[0], [1], [0, 1]]

    def test_all_zero(self):
        # [TRIVIAL]
        spec = CycleSpec((2, 2, 3))
        assert decode_selection(DesignState.zeros(spec), spec) == [[], [], []]

    def test_paper_spec_first_bits(self):
        # [TRIVIAL] first bit of each cycle set
        sel = [[0], [0], [0]]
        s = encode_selection(sel, PAPER_SPEC)
        assert decode_selection(s, PAPER_SPEC) == sel
        assert sum(s.bits) == 3

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            decode_selection(DesignState((1, 0)), CycleSpec((2, 2)))

    def test_encode_rejects_out_of_range_block(self):
        with pytest.raises(DimensionError):
            encode_selection([[0], [2], []], CycleSpec((2, 2, 2)))

    @given(st.data())
    def test_round_trip_property(self, data):
        sizes = data.draw(st.lists(st.integers(1, 5), min_size=2, max_size=4))
        spec = CycleSpec(sizes)
        sel = [
            sorted(data.draw(st.sets(st.integers(0, n - 1), max_size=n)))
            for n in sizes
        ]
        assert decode_selection(encode_selection(sel, spec), spec) == sel


class TestLibrarySize:
    def test_product(self):
        # [TRIVIAL] 1 * 2 * 2 = 4
        spec = CycleSpec((2, 2, 3))
        s = encode_selection([[0], [0, 1], [0, 2]], spec)
        assert library_size(s, spec) == 4
        assert cycle_counts(s, spec) == [1, 2, 2]

    def test_zero_when_any_cycle_empty(self):
        spec = CycleSpec((2, 2, 3))
        assert library_size(DesignState.zeros(spec), spec) == 0
        s = encode_selection([[0, 1], [0, 1], []], spec)
        assert library_size(s, spec) == 0

    def test_paper_full_library(self):
        # [DERIVED] 90 * 89 * 197 = 1,577,970 (paper: ~1.58M molecules)
        s = DesignState((1,) * PAPER_SPEC.total_bits)
        assert library_size(s, PAPER_SPEC) == 1_577_970

    @given(st.data())
    def test_monotone_under_bit_set(self, data):
        sizes = data.draw(st.lists(st.integers(1, 4), min_size=2, max_size=3))
        spec = CycleSpec(sizes)
        bits = data.draw(
            st.lists(st.integers(0, 1), min_size=spec.total_bits, max_size=spec.total_bits)
        )
        s = DesignState(bits)
        zero_bits = [i for i, v in enumerate(bits) if v == 0]
        if not zero_bits:
            return
        i = data.draw(st.sampled_from(zero_bits))
        assert library_size(s.with_bit_set(i), spec) >= library_size(s, spec)


class TestFeasibleEnumeration:
    def test_count_triples(self):
        spec = CycleSpec((2, 2, 2))
        triples = feasible_count_triples(spec, SizeConstraint(4, 4))
        # product-4 count combinations of at most 2 per cycle
        assert sorted(triples) == [(1, 2, 2), (2, 1, 2), (2, 2, 1)]

    def test_unsatisfiable_raises(self):
        with pytest.raises(ConfigError):
            feasible_count_triples(CycleSpec((2, 2, 2)), SizeConstraint(9, 10))

    def test_enumerate_feasible_states_matches_brute_force(self):
        spec = CycleSpec((2, 2, 2))
        c = SizeConstraint(1, 4)
        states = enumerate_feasible_states(spec, c)
        # independent count: choose non-empty subsets per cycle with product <= 4
        import itertools

        count = 0
        for n1, n2, n3 in itertools.product(range(1, 3), repeat=3):
            if c.contains(n1 * n2 * n3):
                from math import comb

                count += comb(2, n1) * comb(2, n2) * comb(2, n3)
        assert len(states) == count
        assert all(c.contains(library_size(s, spec)) for s in states)

    def test_enumeration_guard(self):
        with pytest.raises(ConfigError):
            enumerate_feasible_states(CycleSpec((10, 10, 10)), SizeConstraint(1, 8))
