from __future__ import annotations

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import validated
from gsagg.coeffs import (
    CoefficientFamily,
    UserMatrixSet,
    build_family,
    build_user_matrices,
    build_validated,
    decodability_matrix,
    failing_decode_sets,
    fixture_from_dict,
    fixture_to_dict,
    load_fixture,
    pivot_expand,
    pivot_terms,
    save_fixture,
    step2_terms,
    user_null_basis,
    verify_alignment_rank,
    verify_c1,
    verify_decodability,
    verify_security_rank,
)
from gsagg.errors import AlignmentRankFailure, ExhaustedAttempts, InvalidPivot
from gsagg.field import DEFAULT_PRIME, FieldMatrix, mat_rank
from gsagg.params import SchemeParams
from ref523 import DERIVED, FIRST_STEP, S_MATRICES


def reference_family(q: int = DEFAULT_PRIME) -> CoefficientFamily:
    return build_family(SchemeParams(5, 2, 3, q=q), first_step=FIRST_STEP)


def reference_ums(q: int = DEFAULT_PRIME) -> UserMatrixSet:
    p = SchemeParams(5, 2, 3, q=q)
    return UserMatrixSet(p, {}, {k: FieldMatrix(v, q) for k, v in S_MATRICES.items()})


# two-step construction ---------------------------------------------------------------


@pytest.mark.parametrize("q", [7, 11, DEFAULT_PRIME])
def test_second_step_reproduces_reference_vectors(q):
    fam = reference_family(q)
    for g, vec in DERIVED.items():
        assert fam.a[g].tolist() == [v % q for v in vec]


def test_step2_terms_signs():
    assert step2_terms((2, 3, 4)) == [(1, (1, 3, 4)), (-1, (1, 2, 4)), (1, (1, 2, 3))]


def test_single_group_family():
    p = SchemeParams(4, 2, 4)
    fam = build_family(p, seed=3)
    assert list(fam.a) == [(1, 2, 3, 4)]
    assert fam.a[(1, 2, 3, 4)].shape == (1,)


def test_family_deterministic_per_seed():
    p = SchemeParams(6, 3, 3)
    assert build_family(p, 11) == build_family(p, 11)
    assert build_family(p, 11) != build_family(p, 12)


def test_rebuilding_from_first_step_is_bit_exact():
    p = SchemeParams(6, 2, 3)
    fam = build_family(p, 5)
    rebuilt = build_family(p, first_step={g: fam.a[g] for g in p.groups_with(1)})
    assert rebuilt == fam


def test_first_step_length_checked():
    with pytest.raises(ValueError):
        build_family(SchemeParams(5, 2, 3), first_step={g: [1, 2] for g in SchemeParams(5, 2, 3).groups_with(1)})


# pivot identity ----------------------------------------------------------------------


def test_pivot_terms_match_hand_expansion():
    assert pivot_terms((3, 4, 5), 1) == [(1, (1, 4, 5)), (-1, (1, 3, 5)), (1, (1, 3, 4))]
    assert pivot_terms((3, 4, 5), 2) == [(1, (2, 4, 5)), (-1, (2, 3, 5)), (1, (2, 3, 4))]


def test_pivot_expand_reference_examples():
    fam = reference_family()
    assert np.array_equal(pivot_expand(fam, (3, 4, 5), 1), fam.a[(3, 4, 5)])
    assert np.array_equal(pivot_expand(fam, (3, 4, 5), 2), fam.a[(3, 4, 5)])


def test_pivot_inside_group_rejected():
    with pytest.raises(InvalidPivot):
        pivot_expand(reference_family(), (3, 4, 5), 4)


@pytest.mark.parametrize("K,S", [(5, 3), (6, 2), (6, 4), (7, 3)])
@pytest.mark.parametrize("seed", range(5))
def test_pivot_identity_every_group_and_user(K, S, seed):
    fam = build_family(SchemeParams(K, 1, S), seed)
    for g in fam.params.groups:
        for k in fam.params.users:
            if k not in g:
                assert np.array_equal(pivot_expand(fam, g, k), fam.a[g]), (g, k)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(3, 8).flatmap(lambda K: st.tuples(st.just(K), st.integers(2, K))),
    st.sampled_from([2, 3, 7, DEFAULT_PRIME]),
    st.integers(0, 2**32 - 1),
)
def test_pivot_identity_property(ks, q, seed):
    K, S = ks
    fam = build_family(SchemeParams(K, 1, S, q=q), seed)
    rng = np.random.default_rng(seed)
    g = fam.params.groups[rng.integers(fam.params.n_groups)]
    for k in fam.params.users:
        if k not in g:
            assert np.array_equal(pivot_expand(fam, g, k), fam.a[g])


# rank conditions ---------------------------------------------------------------------


def test_reference_family_rank_conditions():
    fam = reference_family()
    assert verify_security_rank(fam)
    assert verify_alignment_rank(fam)
    assert mat_rank(fam.alignment_matrix(1)) == 3
    assert mat_rank(fam.alignment_matrix(2)) == 3


def test_duplicated_column_breaks_security():
    fam = reference_family()
    a = dict(fam.a)
    a[(1, 2, 4)] = a[(1, 2, 3)].copy()
    assert not verify_security_rank(CoefficientFamily(fam.params, a))


def test_random_families_full_rank_whp():
    p = SchemeParams(6, 3, 2)
    good = sum(verify_security_rank(build_family(p, s)) for s in range(100))
    assert good >= 99


def test_alignment_vacuous_for_single_group():
    fam = build_family(SchemeParams(4, 2, 4), 1)
    assert fam.alignment_matrix(1).shape == (1, 0)
    assert verify_alignment_rank(fam)


@pytest.mark.parametrize("K,S", [(5, 3), (6, 2), (6, 4), (7, 3), (5, 5)])
def test_alignment_rank_random(K, S):
    assert verify_alignment_rank(build_family(SchemeParams(K, 1, S), 0))


# user matrices -----------------------------------------------------------------------


def test_user_matrices_shape_and_zero_columns(scheme523):
    p, fam, ums = scheme523
    for k in p.users:
        assert ums.S[k].shape == (5, 12)
        assert ums.s_basis[k].shape == (3, 6)
        assert ums.S_prime(k).shape == (6, 12)
    SF = (ums.S[1] @ fam.F_matrix()).data
    assert not np.any(SF[:, [c - 1 for c in (7, 8, 9, 10, 17, 18, 19, 20)]])
    assert verify_c1(fam, ums)


def test_user_matrix_rows_lie_in_block_null_space(scheme523):
    p, fam, ums = scheme523
    for k in p.users:
        combined = ums.S_prime(k).vstack(ums.S[k])
        assert mat_rank(combined) == mat_rank(ums.S_prime(k))


def test_single_group_user_matrices_use_available_rows():
    # K = S: one null direction per replica, n_pieces = 1 row needed.
    p = SchemeParams(4, 2, 4)
    fam = build_family(p, 2)
    ums = build_user_matrices(fam, 2)
    for k in p.users:
        assert ums.s_basis[k].rows == p.null_dim == 1
        assert ums.S_prime(k).rows == p.U * p.null_dim == 2
        assert ums.S[k].rows == p.n_pieces == 1


def test_broken_alignment_rejected():
    p = SchemeParams(5, 2, 3)
    rng = np.random.default_rng(0)
    a = {g: rng.integers(0, p.q, p.n_combos) for g in p.groups}  # no alignment structure
    fam = CoefficientFamily(p, a)
    assert not verify_alignment_rank(fam)
    with pytest.raises(AlignmentRankFailure):
        user_null_basis(fam, 1)
    with pytest.raises(AlignmentRankFailure):
        build_user_matrices(fam, 0)


def test_zero_columns_detects_misplaced_rows(scheme523):
    p, fam, ums = scheme523
    S = dict(ums.S)
    S[1] = FieldMatrix.identity(12, p.q)[:5, :]
    assert not verify_c1(fam, UserMatrixSet(p, ums.s_basis, S))


# decodability -------------------------------------------------------------------------


@pytest.mark.parametrize("q", [7, 11, DEFAULT_PRIME])
def test_reference_matrices_decodable(q):
    fam, ums = reference_family(q), reference_ums(q)
    assert verify_c1(fam, ums)
    for U2 in itertools.combinations(range(1, 6), 2):
        D = decodability_matrix(fam.params, ums, U2)
        assert D.shape == (12, 12)
        assert mat_rank(D) == 12, U2


def test_identical_user_matrices_not_decodable(scheme523):
    p, fam, ums = scheme523
    S = dict(ums.S)
    S[2] = S[1]
    bad = failing_decode_sets(fam, UserMatrixSet(p, ums.s_basis, S))
    assert (1, 2) in bad
    assert not verify_decodability(fam, UserMatrixSet(p, ums.s_basis, S))


def test_random_decodability_whp():
    p = SchemeParams(6, 2, 2)
    good = 0
    for s in range(50):
        fam = build_family(p, s)
        good += verify_decodability(fam, build_user_matrices(fam, s + 1000))
    assert good >= 48


# resampling -----------------------------------------------------------------------------


def test_validated_first_attempt_usually():
    p = SchemeParams(5, 2, 3)
    firsts = sum(build_validated(p, seed=s)[1].meta["attempts"] == 1 for s in range(100))
    assert firsts >= 95


def test_tiny_field_reports_failed_check():
    p = SchemeParams(5, 2, 3, q=2)
    outcomes = set()
    for s in range(20):
        try:
            build_validated(p, seed=s, max_attempts=1)
            outcomes.add("ok")
        except ExhaustedAttempts as exc:
            assert exc.failed_check in {"security_rank", "alignment_rank", "decodability"}
            assert exc.attempts == 1
            outcomes.add(exc.failed_check)
    assert outcomes - {"ok"}


def test_small_field_succeeds_with_enough_attempts():
    p = SchemeParams(4, 2, 2, q=7)
    fam, ums = build_validated(p, seed=0, max_attempts=100)
    assert verify_security_rank(fam) and verify_alignment_rank(fam) and verify_decodability(fam, ums)


def test_max_attempts_must_be_positive():
    with pytest.raises(ValueError):
        build_validated(SchemeParams(5, 2, 3), max_attempts=0)


def test_validated_is_reproducible():
    p = SchemeParams(5, 2, 3)
    f1, u1 = build_validated(p, seed=9)
    f2, u2 = build_validated(p, seed=9)
    assert f1 == f2 and all(u1.S[k] == u2.S[k] for k in p.users)


# fixture files ------------------------------------------------------------------------


def test_fixture_round_trip(tmp_path, scheme523):
    p, fam, ums = scheme523
    path = tmp_path / "fx.json"
    save_fixture(path, fam, ums)
    doc = json.loads(path.read_text())
    assert doc["a"]["1,2,3"] == [str(int(v)) for v in fam.a[(1, 2, 3)]]
    assert all(isinstance(v, str) for v in doc["Sk"]["1"][0])
    fam2, ums2 = load_fixture(path)
    assert fam2 == fam
    assert all(ums2.S[k] == ums.S[k] and ums2.s_basis[k] == ums.s_basis[k] for k in p.users)
    assert ums2.meta["attempts"] == ums.meta["attempts"]


def test_fixture_missing_group_rejected(scheme523):
    _, fam, ums = scheme523
    doc = fixture_to_dict(fam, ums)
    del doc["a"]["3,4,5"]
    with pytest.raises(ValueError):
        fixture_from_dict(doc)


def test_shared_cache_helper_returns_valid_schemes():
    p, fam, ums = validated(6, 3, 2)
    assert verify_decodability(fam, ums) and verify_c1(fam, ums)
