"""Coefficient vectors a_V and the per-user second-round matrices S_k.

The vectors of groups containing user 1 are drawn at random; every other
vector is an alternating-sign combination of those. That choice makes, for
each user k, the vectors of the groups k cannot see collapse into a
C(K-2, S-1)-dimensional space, which leaves room in the left null space for
the rows of S_k.
"""

from __future__ import annotations

import itertools
import json
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentRankFailure, ExhaustedAttempts, InvalidPivot
from .field import FieldMatrix, block_diag, left_null_basis, mat_rank, rand_matrix
from .params import Group, SchemeParams

logger = logging.getLogger(__name__)


@dataclass
class CoefficientFamily:
    params: SchemeParams
    a: dict[Group, np.ndarray]
    seed: int | None = None

    @property
    def subset_order(self) -> tuple[Group, ...]:
        return self.params.groups

    def vector(self, group: Iterable[int]) -> np.ndarray:
        return self.a[tuple(sorted(group))]

    def matrix(self, groups: Iterable[Group]) -> FieldMatrix:
        """Columns a_V for the given groups, in the given order."""
        groups = list(groups)
        return FieldMatrix.from_columns([self.a[g] for g in groups], self.params.q, nrows=self.params.n_combos)

    @property
    def A(self) -> FieldMatrix:
        """C(K-1,S-1) x C(K,S) matrix of every a_V, groups lexicographic."""
        return self.matrix(self.params.groups)

    def security_matrix(self, k: int) -> FieldMatrix:
        return self.matrix(self.params.groups_with(k))

    def alignment_matrix(self, k: int) -> FieldMatrix:
        return self.matrix(self.params.groups_without(k))

    def F_matrix(self) -> FieldMatrix:
        """U-fold block diagonal of A: maps stacked coded keys to F."""
        return block_diag([self.A] * self.params.U)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CoefficientFamily):
            return NotImplemented
        return self.params == other.params and self.a.keys() == other.a.keys() and all(
            np.array_equal(self.a[g], other.a[g]) for g in self.a
        )


@dataclass
class UserMatrixSet:
    params: SchemeParams
    s_basis: dict[int, FieldMatrix]
    S: dict[int, FieldMatrix]
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def S_prime(self, k: int) -> FieldMatrix:
        return block_diag([self.s_basis[k]] * self.params.U)


def _swap_member(group: Group, out: int, into: int) -> Group:
    return tuple(sorted(set(group) - {out} | {into}))


def _alternating_sum(a: Mapping[Group, np.ndarray], terms: list[tuple[int, Group]], q: int) -> np.ndarray:
    acc = np.zeros_like(next(iter(a.values())))
    for sign, g in terms:
        # -1 is applied as multiplication by q - 1.
        acc = (acc + (a[g] if sign > 0 else a[g] * (q - 1))) % q
    return acc


def step2_terms(group: Group) -> list[tuple[int, Group]]:
    """Signed groups whose sum defines a_V for a group V without user 1."""
    return [((-1) ** i, _swap_member(group, group[i], 1)) for i in range(len(group))]


def pivot_terms(group: Group, k: int) -> list[tuple[int, Group]]:
    """Signed groups V - {V(i)} + {k} expressing a_V through groups containing k."""
    if k in group:
        raise InvalidPivot(f"user {k} belongs to group {group}")
    S = len(group)
    n = sum(1 for v in group if v < k)
    terms = []
    for i1 in range(n + 1, S + 1):
        terms.append(((-1) ** (i1 - n - 1), _swap_member(group, group[i1 - 1], k)))
    for i2 in range(1, n + 1):
        terms.append(((-1) ** (n + i2), _swap_member(group, group[i2 - 1], k)))
    return terms


def build_family(
    params: SchemeParams, seed: int | None = None, first_step: Mapping[Group, Iterable[int]] | None = None
) -> CoefficientFamily:
    """Draw a_V for V containing 1 (or take ``first_step``) and derive the rest."""
    q, C = params.q, params.n_combos
    with_one = params.groups_with(1)
    a: dict[Group, np.ndarray] = {}
    if first_step is not None:
        for g in with_one:
            vec = np.array([int(x) % q for x in first_step[g]], dtype=np.int64)
            if vec.shape != (C,):
                raise ValueError(f"a_{g} must have length {C}")
            a[g] = vec
    else:
        draws = rand_matrix(len(with_one), C, q, np.random.default_rng(seed)).data
        for g, row in zip(with_one, draws):
            a[g] = row.copy()
    for g in params.groups:
        if 1 not in g:
            a[g] = _alternating_sum(a, step2_terms(g), q)
    ordered = {g: a[g] for g in params.groups}
    return CoefficientFamily(params, ordered, seed)


def pivot_expand(family: CoefficientFamily, group: Iterable[int], k: int) -> np.ndarray:
    group = tuple(sorted(group))
    return _alternating_sum(family.a, pivot_terms(group, k), family.params.q)


def verify_security_rank(family: CoefficientFamily) -> bool:
    C = family.params.n_combos
    return all(mat_rank(family.security_matrix(k)) == C for k in family.params.users)


def verify_alignment_rank(family: CoefficientFamily) -> bool:
    target = family.params.align_rank
    return all(mat_rank(family.alignment_matrix(k)) == target for k in family.params.users)


def user_null_basis(family: CoefficientFamily, k: int) -> FieldMatrix:
    basis = left_null_basis(family.alignment_matrix(k))
    if basis.rows != family.params.null_dim:
        raise AlignmentRankFailure(
            f"user {k}: left null space has dimension {basis.rows}, expected {family.params.null_dim}"
        )
    return basis


def build_user_matrices(family: CoefficientFamily, seed: int | None = None) -> UserMatrixSet:
    """S_k = (random n_pieces x U*d combination) @ blockdiag(null basis, U times)."""
    p = family.params
    rng = np.random.default_rng(seed)
    s_basis, S = {}, {}
    for k in p.users:
        basis = user_null_basis(family, k)
        s_prime = block_diag([basis] * p.U)
        mix = rand_matrix(p.n_pieces, s_prime.rows, p.q, rng)
        s_basis[k] = basis
        S[k] = mix @ s_prime
    return UserMatrixSet(p, s_basis, S, seed)


def decodability_matrix(params: SchemeParams, ums: UserMatrixSet, U2: Iterable[int]) -> FieldMatrix:
    """Stack S_k for k in U2 with unit rows at the round-1-known F positions."""
    U2 = sorted(U2)
    n = params.dim_F
    known = params.known_F_indices()
    units = np.zeros((len(known), n), dtype=np.int64)
    units[np.arange(len(known)), known] = 1
    blocks = [ums.S[k] for k in U2]
    return blocks[0].vstack(*blocks[1:], FieldMatrix(units, params.q)) if blocks else FieldMatrix(units, params.q)


def failing_decode_sets(family: CoefficientFamily, ums: UserMatrixSet) -> list[tuple[int, ...]]:
    p = family.params
    bad = []
    for U2 in itertools.combinations(p.users, p.U):
        if mat_rank(decodability_matrix(p, ums, U2)) < p.dim_F:
            bad.append(U2)
    return bad


def verify_decodability(family: CoefficientFamily, ums: UserMatrixSet) -> bool:
    return not failing_decode_sets(family, ums)


def verify_c1(family: CoefficientFamily, ums: UserMatrixSet) -> bool:
    """Check that S_k F has zero columns for every coded key of a group avoiding k."""
    p = family.params
    F = family.F_matrix()
    for k in p.users:
        SF = (ums.S[k] @ F).data
        cols = [p.coded_key_column(i, g) for i in range(p.U) for g in p.groups_without(k)]
        if cols and np.any(SF[:, cols]):
            return False
    return True


def _attempt_seed(seed: int, attempt: int) -> int:
    return int(np.random.SeedSequence([seed, attempt]).generate_state(1)[0])


def build_validated(
    params: SchemeParams, seed: int = 0, max_attempts: int = 10
) -> tuple[CoefficientFamily, UserMatrixSet]:
    """Resample (family, S_k) until security, alignment and decodability all hold."""
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    failed = ""
    for attempt in range(1, max_attempts + 1):
        s = _attempt_seed(seed, attempt)
        family = build_family(params, s)
        if not verify_security_rank(family):
            failed = "security_rank"
            continue
        if not verify_alignment_rank(family):
            failed = "alignment_rank"
            continue
        ums = build_user_matrices(family, _attempt_seed(s, 0))
        if not verify_decodability(family, ums):
            failed = "decodability"
            continue
        ums.meta.update(attempts=attempt, base_seed=seed)
        logger.debug("validated scheme %s after %d attempt(s)", params, attempt)
        return family, ums
    raise ExhaustedAttempts(
        f"no valid scheme for {params} in {max_attempts} attempt(s); last failure: {failed}", failed, max_attempts
    )


# JSON fixture -----------------------------------------------------------------


def _group_key(g: Group) -> str:
    return ",".join(map(str, g))


def _mat_json(m: FieldMatrix) -> list[list[str]]:
    return [[str(v) for v in row] for row in m.tolist()]


def fixture_to_dict(family: CoefficientFamily, ums: UserMatrixSet) -> dict:
    p = family.params
    return {
        "params": p.to_dict(),
        "seed": ums.meta.get("base_seed", family.seed),
        "family_seed": family.seed,
        "sk_seed": ums.seed,
        "attempts": ums.meta.get("attempts"),
        "a": {_group_key(g): [str(int(v)) for v in family.a[g]] for g in p.groups},
        "s_basis": {str(k): _mat_json(ums.s_basis[k]) for k in p.users},
        "Sk": {str(k): _mat_json(ums.S[k]) for k in p.users},
    }


def fixture_from_dict(d: dict) -> tuple[CoefficientFamily, UserMatrixSet]:
    p = SchemeParams.from_dict(d["params"])
    a = {}
    for key, vec in d["a"].items():
        g = tuple(int(x) for x in key.split(","))
        a[g] = np.array([int(v) for v in vec], dtype=np.int64) % p.q
    if set(a) != set(p.groups):
        raise ValueError("fixture does not list every S-subset")
    family = CoefficientFamily(p, {g: a[g] for g in p.groups}, d.get("family_seed"))

    def mat(rows, ncols):
        return FieldMatrix([[int(v) for v in r] for r in rows], p.q) if rows else FieldMatrix.zeros(0, ncols, p.q)

    s_basis = {int(k): mat(v, p.n_combos) for k, v in d["s_basis"].items()}
    S = {int(k): mat(v, p.dim_F) for k, v in d["Sk"].items()}
    meta = {"attempts": d.get("attempts"), "base_seed": d.get("seed")}
    return family, UserMatrixSet(p, s_basis, S, d.get("sk_seed"), meta)


def save_fixture(path, family: CoefficientFamily, ums: UserMatrixSet) -> None:
    with open(path, "w") as fh:
        json.dump(fixture_to_dict(family, ums), fh, indent=1)


def load_fixture(path) -> tuple[CoefficientFamily, UserMatrixSet]:
    with open(path) as fh:
        return fixture_from_dict(json.load(fh))
