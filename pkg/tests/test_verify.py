from __future__ import annotations

import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from conftest import validated
from gsagg.errors import TooFewSurvivors, TooLargeToEnumerate, TraceMismatch
from gsagg.params import SchemeParams
from gsagg.verify import (
    ViewSystem,
    _EntropyAccumulator,
    _row_keys,
    brute_force_mi,
    build_view_system,
    count_patterns,
    exhaustive_dropout_sweep,
    leakage_rank,
    leakage_sweep,
    sabotage_duplicate_rows,
    sabotage_unmasked_piece,
    sabotage_zero_keys,
    zero_padded_view,
)
from gsagg.coeffs import verify_decodability
from gsagg.scheme import legal_patterns


# view system ------------------------------------------------------------------------


def test_view_dimensions(scheme523):
    p, fam, ums = scheme523
    vs = build_view_system(p, fam, ums, (1, 2, 3, 4))
    # worst case: every round-1 message, plus round 2 from each survivor
    assert vs.n_view == p.K * p.R1 * p.L + 4 * p.R2 * p.L
    assert vs.n_inputs == p.K * p.L
    assert vs.n_keys == p.n_groups * p.key_len
    assert vs.T_W.shape == (p.L, p.K * p.L)


def test_target_sum_matrix_selects_survivors(scheme523):
    p, fam, ums = scheme523
    vs = build_view_system(p, fam, ums, (2, 5))
    w = np.arange(p.K * p.L, dtype=np.int64)
    expected = w[p.L : 2 * p.L] + w[4 * p.L :]
    assert np.array_equal(vs.T_W @ w % p.q, expected)


def test_view_needs_threshold(scheme523):
    p, fam, ums = scheme523
    with pytest.raises(TooFewSurvivors):
        build_view_system(p, fam, ums, (3,))


def test_view_cross_check_catches_unrealizable_matrices(scheme523):
    p, fam, ums = scheme523
    from gsagg.coeffs import UserMatrixSet
    from gsagg.field import FieldMatrix

    S = dict(ums.S)
    S[1] = FieldMatrix.identity(p.dim_F, p.q)[: p.n_pieces, :]
    with pytest.raises((TraceMismatch, AssertionError)):
        build_view_system(p, fam, UserMatrixSet(p, ums.s_basis, S), p.users)


# rank-based leakage -------------------------------------------------------------------


@pytest.mark.parametrize("shape", [(5, 2, 3), (4, 2, 2), (6, 3, 2), (4, 2, 4), (5, 4, 3)])
def test_no_leakage_for_every_survivor_set(shape):
    p, fam, ums = validated(*shape)
    reports = leakage_sweep(p, fam, ums)
    assert len(reports) == sum(math.comb(p.K, n) for n in range(p.U, p.K + 1))
    for rep in reports:
        assert rep.passed, rep
        assert rep.i_w_view == p.L
        assert rep.i_w_view_given_sum == 0


def test_unmasked_piece_leaks_one_piece(scheme523):
    p, fam, ums = scheme523
    vs = build_view_system(p, fam, ums, p.users)
    rep = leakage_rank(p, sabotage_unmasked_piece(vs, k=2, j=3))
    assert not rep.passed
    assert rep.i_w_view_given_sum == p.piece_len


def test_key_only_piece_cannot_be_unmasked(scheme523):
    p, fam, ums = scheme523
    vs = build_view_system(p, fam, ums, p.users)
    with pytest.raises(ValueError):
        sabotage_unmasked_piece(vs, k=1, j=p.n_combos)


def test_zero_keys_leak_everything_but_the_sum(scheme523):
    p, fam, ums = scheme523
    rep = leakage_rank(p, sabotage_zero_keys(build_view_system(p, fam, ums, p.users)))
    assert rep.i_w_view_given_sum == (p.K - 1) * p.L


def test_duplicate_rows_break_decoding(scheme523):
    p, fam, ums = scheme523
    assert not verify_decodability(fam, sabotage_duplicate_rows(ums, k=3))


# brute-force oracle -------------------------------------------------------------------


def test_row_keys_distinguish_rows():
    rows = np.array([[0, 1], [1, 0], [0, 1], [1, 1]])
    keys = _row_keys(rows, 2)
    assert keys[0] == keys[2] and len(set(keys.tolist())) == 3
    wide = np.random.default_rng(0).integers(0, 2**31 - 1, size=(50, 4))
    assert len(set(_row_keys(wide, 2**31 - 1).tolist())) == 50


def test_entropy_accumulator_matches_direct_formula():
    acc = _EntropyAccumulator(2)
    acc.add(np.array([2, 2, 4]))
    # distribution (1/4, 1/4, 1/2) has entropy 3/2 bits
    assert acc.value(8) == Fraction(3, 2)


def mi_by_counting(vs: ViewSystem, U1, q: int) -> float:
    """Independent slow oracle: enumerate every (w, z) with itertools and count."""
    import itertools

    p = vs.params
    joint = Counter()
    for w in itertools.product(range(q), repeat=vs.n_inputs):
        w = np.array(w, dtype=np.int64)
        t = tuple(sum(w[(k - 1) * p.L : k * p.L] for k in U1) % q)
        for z in itertools.product(range(q), repeat=vs.n_keys):
            v = tuple(vs.evaluate(w, np.array(z, dtype=np.int64)))
            joint[(tuple(w), v, t)] += 1
    total = sum(joint.values())

    def H(key):
        c = Counter()
        for k, n in joint.items():
            c[key(k)] += n
        return -sum(n / total * math.log(n / total, q) for n in c.values())

    return H(lambda k: (k[0], k[2])) + H(lambda k: (k[1], k[2])) - H(lambda k: k) - H(lambda k: k[2])


def test_brute_force_agrees_with_counting_oracle_on_toy_view():
    # hand-built view: user 1 sends w1 + z, user 2 sends w2 - z; q = 3, L = 1
    p = SchemeParams(2, 1, 2, q=3, L=1)
    A_W = np.array([[1, 0], [0, 1]])
    A_Z = np.array([[1], [2]])
    T_W = np.array([[1, 1]])
    vs = ViewSystem(p, (1, 2), A_W, A_Z, T_W)
    assert brute_force_mi(p, None, None, (1, 2), vs=vs) == 0
    assert abs(mi_by_counting(vs, (1, 2), 3)) < 1e-12
    leaky = ViewSystem(p, (1, 2), A_W, np.zeros_like(A_Z), T_W)
    assert brute_force_mi(p, None, None, (1, 2), vs=leaky) == 1
    assert abs(mi_by_counting(leaky, (1, 2), 3) - 1) < 1e-12


def test_brute_force_honest_scheme_has_zero_leakage(tiny_scheme):
    p, fam, ums = tiny_scheme
    for U1 in [(1, 2, 3), (1, 3)]:
        assert brute_force_mi(p, fam, ums, U1) == 0


def test_brute_force_detects_sabotage(tiny_scheme):
    p, fam, ums = tiny_scheme
    vs = build_view_system(p, fam, ums, p.users)
    unmasked = sabotage_unmasked_piece(vs)
    assert brute_force_mi(p, fam, ums, p.users, vs=unmasked) == leakage_rank(p, unmasked).i_w_view_given_sum
    assert brute_force_mi(p, fam, ums, p.users, vs=unmasked) == p.piece_len


def test_zero_padded_view_matches_padded_encoding(scheme523):
    p, fam, ums = scheme523
    vs = build_view_system(p, fam, ums, (1, 2, 3))
    short = zero_padded_view(vs, 3)
    assert short.n_inputs == 3 * p.K and short.T_W.shape == (3, 3 * p.K)
    rng = np.random.default_rng(0)
    w = rng.integers(0, p.q, size=(p.K, 3))
    padded = np.hstack([w, np.zeros((p.K, p.L - 3), dtype=np.int64)]).reshape(-1)
    z = rng.integers(0, p.q, size=vs.n_keys)
    assert np.array_equal(short.evaluate(w.reshape(-1), z), vs.evaluate(padded, z))
    rep = leakage_rank(p, short)
    assert rep.passed and rep.L == 3
    with pytest.raises(ValueError):
        zero_padded_view(vs, p.L + 1)


def test_brute_force_refuses_large_instances(scheme523):
    p, fam, ums = scheme523
    with pytest.raises(TooLargeToEnumerate):
        brute_force_mi(p, fam, ums, p.users)


# dropout sweep ------------------------------------------------------------------------


@pytest.mark.parametrize("K,U", [(5, 2), (4, 1), (6, 3), (3, 2)])
def test_pattern_count_matches_enumeration(K, U):
    assert count_patterns(K, U) == len(list(legal_patterns(K, U)))


def test_sweep_passes_for_honest_scheme():
    p, fam, ums = validated(5, 2, 3, L=20)
    rep = exhaustive_dropout_sweep(p, fam, ums, trials_per_pattern=2)
    assert rep.passed and rep.patterns == 131 and rep.trials == 2
    assert rep.to_dict()["passed"] is True


def test_sweep_reports_failures_with_context(scheme523):
    p, fam, ums = scheme523
    rep = exhaustive_dropout_sweep(p, fam, sabotage_duplicate_rows(ums, k=1), trials_per_pattern=1)
    assert not rep.passed
    assert all(1 in f["U2"] for f in rep.failures)
    assert all(f["error"] for f in rep.failures)


def test_sweep_budget(monkeypatch, scheme523):
    import gsagg.verify as verify

    p, fam, ums = scheme523
    monkeypatch.setattr(verify, "SWEEP_LIMIT", 10)
    with pytest.raises(ValueError):
        exhaustive_dropout_sweep(p, fam, ums, trials_per_pattern=1)
    assert exhaustive_dropout_sweep(p, fam, ums, trials_per_pattern=1, force=True).passed
