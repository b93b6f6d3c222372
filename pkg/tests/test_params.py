from __future__ import annotations

import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gsagg.errors import InfeasibleS, InvalidParams
from gsagg.params import SchemeParams, binom, capacity_rates, enough_space, round1_overhead
from gsagg.scheme import achieved_rates


def test_binom_zero_convention():
    assert binom(3, 5) == 0
    assert binom(-1, 0) == 0
    assert binom(3, -1) == 0
    assert binom(0, 0) == 1
    assert binom(5, 2) == 10


def test_derived_sizes_5_2_3():
    p = SchemeParams(5, 2, 3, L=10)
    assert (p.n_combos, p.n_known, p.n_pieces) == (6, 1, 5)
    assert (p.piece_len, p.subkey_len, p.key_len, p.codedkey_len) == (2, 2, 6, 1)
    assert (p.R1, p.R2) == (Fraction(6, 5), Fraction(1, 2))
    assert p.null_dim == 3 and p.align_rank == 3
    assert p.dim_F == 12 and p.n_groups == 10


def test_default_L_is_smallest_valid():
    assert SchemeParams(5, 2, 3).L == 10
    assert SchemeParams(4, 2, 2).L == 4


@pytest.mark.parametrize("L", [5, 15, 0, -10])
def test_L_must_be_multiple_of_unit(L):
    with pytest.raises(InvalidParams):
        SchemeParams(5, 2, 3, L=L)


def test_S_equal_one_is_infeasible():
    with pytest.raises(InfeasibleS):
        SchemeParams(5, 2, 1)
    with pytest.raises(InfeasibleS):
        capacity_rates(5, 2, 1)


@pytest.mark.parametrize("K,U,S", [(5, 5, 3), (5, 0, 3), (5, 2, 6), (3, 1, 0)])
def test_invalid_shapes_rejected(K, U, S):
    with pytest.raises(InvalidParams):
        SchemeParams(K, U, S)


def test_composite_modulus_rejected():
    with pytest.raises(InvalidParams):
        SchemeParams(5, 2, 3, q=9)


def test_rates_examples():
    assert capacity_rates(5, 2, 3) == (Fraction(6, 5), Fraction(1, 2))
    assert capacity_rates(4, 2, 2) == (Fraction(3, 2), Fraction(1, 2))
    assert capacity_rates(5, 4, 3) == (Fraction(1), Fraction(1, 4))
    assert achieved_rates(SchemeParams(5, 2, 3)) == (Fraction(6, 5), Fraction(1, 2))
    assert round1_overhead(5, 2, 3) == Fraction(1, 5)
    assert round1_overhead(5, 4, 3) == 0


@given(st.integers(2, 12).flatmap(lambda K: st.tuples(st.just(K), st.integers(1, K - 1), st.integers(2, K))))
def test_large_groups_collapse_to_unconstrained_rates(kus):
    K, U, S = kus
    r1, r2 = capacity_rates(K, U, S)
    assert r2 == Fraction(1, U)
    assert r1 >= 1
    assert (r1 == 1) == (S > K - U)


def test_lexicographic_groups_and_layout():
    p = SchemeParams(5, 2, 3)
    assert p.groups[:3] == ((1, 2, 3), (1, 2, 4), (1, 2, 5))
    assert p.groups_with(1)[-1] == (1, 4, 5)
    assert p.groups_without(1) == [(2, 3, 4), (2, 3, 5), (2, 4, 5), (3, 4, 5)]
    # coded keys the first user cannot compute sit at 1-based columns 7-10 and 17-20
    cols = sorted(p.coded_key_column(i, g) + 1 for i in range(2) for g in p.groups_without(1))
    assert cols == [7, 8, 9, 10, 17, 18, 19, 20]
    cols2 = sorted(p.coded_key_column(i, g) + 1 for i in range(2) for g in p.groups_without(2))
    assert cols2 == [4, 5, 6, 10, 14, 15, 16, 20]
    assert [x + 1 for x in p.known_F_indices()] == [6, 12]


def test_group_count_and_membership():
    p = SchemeParams(6, 3, 2)
    assert p.n_groups == math.comb(6, 2)
    for k in p.users:
        assert len(p.groups_with(k)) == p.n_combos


def test_dict_round_trip():
    p = SchemeParams(6, 3, 2, q=7, L=18)
    assert SchemeParams.from_dict(p.to_dict()) == p
    assert p.with_L(27).L == 27 and p.with_q(11).q == 11


def test_round_symbol_counts_meet_rates():
    for K, U, S in [(5, 2, 3), (4, 2, 2), (6, 3, 2), (6, 5, 3)]:
        p = SchemeParams(K, U, S)
        p = p.with_L(p.L * 3)
        assert p.round1_symbols == p.R1 * p.L
        assert p.round2_symbols == p.R2 * p.L


ALL_SHAPES = [(K, U, S) for K in range(2, 11) for U in range(1, K) for S in range(2, K + 1)]


@pytest.mark.parametrize("K,U,S", ALL_SHAPES)
def test_enough_null_space_rows(K, U, S):
    lhs, rhs = enough_space(K, U, S)
    assert lhs >= rhs


def test_enough_space_equality_cases():
    # Equality holds exactly when U = 1 or S = 2 over the whole sweep.
    eq = {(K, U, S) for K, U, S in ALL_SHAPES if enough_space(K, U, S)[0] == enough_space(K, U, S)[1]}
    assert eq == {(K, U, S) for K, U, S in ALL_SHAPES if U == 1 or S == 2}
    # with a single group and U > 1 there is slack
    assert enough_space(5, 3, 5) == (3, 1)
