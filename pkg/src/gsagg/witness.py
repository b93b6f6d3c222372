"""Deterministic witness that the decodability determinant is a nonzero polynomial.

For a fixed survivor set U2 and an outside user u, the vectors of groups
containing u are set to unit vectors, all other vectors follow from the pivot
identity, and each S_k (k in U2) picks unit rows of S'_k chosen by a
ball-and-urn placement. The resulting decodability matrix for U2 is a row
permutation of the identity.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .coeffs import CoefficientFamily, UserMatrixSet, _alternating_sum, pivot_terms, user_null_basis
from .errors import InvalidWitnessParams
from .field import FieldMatrix, block_diag
from .params import Group, SchemeParams


def _cyc(x: int, m: int) -> int:
    """x mod m taken in {1, ..., m}."""
    r = x % m
    return m if r == 0 else r


def urns(params: SchemeParams, U2, u: int) -> list[Group]:
    """Groups containing u that meet U2, lexicographic (the C1 collection)."""
    U2 = set(U2)
    return [g for g in params.groups_with(u) if U2 & set(g)]


def ball_and_urn(params: SchemeParams, U2, u: int) -> dict[Group, list[int]]:
    """Place n_pieces balls of each color k in U2 so every urn holds exactly U balls.

    Returns, per urn, the colors of its balls in placement order.
    """
    U2 = sorted(U2)
    Uc = len(U2)
    placement: dict[Group, list[int]] = {g: [] for g in urns(params, U2, u)}
    for s in range(1, Uc + 1):
        k = U2[s - 1]
        for t in range(1, Uc + 1):
            excluded = {U2[_cyc(s + d, Uc) - 1] for d in range(1, t)}
            for g in placement:
                if k in g and not excluded & set(g):
                    placement[g].append(k)
    return placement


def witness_family(params: SchemeParams, U2, u: int) -> CoefficientFamily:
    q, C = params.q, params.n_combos
    U2set = set(U2)
    c1 = [g for g in params.groups_with(u) if U2set & set(g)]
    c2 = [g for g in params.groups_with(u) if not U2set & set(g)]
    a: dict[Group, np.ndarray] = {}
    for i, g in enumerate(c1 + c2):
        vec = np.zeros(C, dtype=np.int64)
        vec[i] = 1
        a[g] = vec
    for g in params.groups_without(u):
        a[g] = _alternating_sum(a, pivot_terms(g, u), q)
    return CoefficientFamily(params, {g: a[g] for g in params.groups}, seed=None)


def deterministic_witness(params: SchemeParams, U2, u: int) -> tuple[CoefficientFamily, UserMatrixSet]:
    U2 = sorted(set(U2))
    if len(U2) != params.U or any(k not in params.users for k in U2):
        raise InvalidWitnessParams(f"U2 must be {params.U} distinct users of [1..{params.K}], got {U2}")
    if u not in params.users or u in U2:
        raise InvalidWitnessParams(f"u={u} must be a user outside U2")

    family = witness_family(params, U2, u)
    C = params.n_combos
    c1_index = {g: i for i, g in enumerate(urns(params, U2, u))}
    placement = ball_and_urn(params, U2, u)

    rows: dict[int, list[int]] = defaultdict(list)
    for g, colors in placement.items():
        # Consecutive replicas of urn g go to its balls' colors in order.
        for replica, k in enumerate(colors):
            rows[k].append(replica * C + c1_index[g])

    s_basis, S = {}, {}
    for k in params.users:
        if k in U2:
            basis = np.zeros((params.null_dim, C), dtype=np.int64)
            mine = [c1_index[g] for g in params.groups_with(k) if u in g]
            basis[np.arange(len(mine)), mine] = 1
            s_basis[k] = FieldMatrix(basis, params.q)
            sel = np.zeros((len(rows[k]), params.dim_F), dtype=np.int64)
            sel[np.arange(len(rows[k])), sorted(rows[k])] = 1
            S[k] = FieldMatrix(sel, params.q)
        else:
            basis = user_null_basis(family, k)
            s_basis[k] = basis
            S[k] = block_diag([basis] * params.U)[: params.n_pieces, :]
    ums = UserMatrixSet(params, s_basis, S, seed=None, meta={"witness": {"U2": U2, "u": u}})
    return family, ums


def is_permutation_matrix(m: np.ndarray) -> bool:
    m = np.asarray(m)
    return (
        m.ndim == 2
        and m.shape[0] == m.shape[1]
        and bool(np.isin(m, (0, 1)).all())
        and bool((m.sum(axis=0) == 1).all())
        and bool((m.sum(axis=1) == 1).all())
    )


def witness_report(params: SchemeParams, U2, u: int) -> dict:
    """Build the witness for (U2, u) and summarize the checks it must pass."""
    from .coeffs import decodability_matrix, verify_c1

    family, ums = deterministic_witness(params, U2, u)
    D = decodability_matrix(params, ums, U2).data
    totals = {",".join(map(str, g)): len(c) for g, c in ball_and_urn(params, U2, u).items()}
    return {
        "U2": sorted(U2),
        "u": u,
        "size": D.shape[0],
        "permutation": is_permutation_matrix(D),
        "urn_totals": totals,
        "urns_full": all(t == params.U for t in totals.values()),
        "zero_columns": verify_c1(family, ums),
        "matrix": D.tolist(),
    }
