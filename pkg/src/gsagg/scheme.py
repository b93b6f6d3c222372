"""The two-round aggregation protocol: key generation, user encoders, server decoder.

Symbol blocks are ``int64`` numpy arrays reduced mod q. A round-1 message is a
``(C(K-1,S-1), piece_len)`` array, a round-2 message an
``(n_pieces, codedkey_len)`` array; flattening either gives the wire symbols.
"""

from __future__ import annotations

import itertools
import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .coeffs import CoefficientFamily, UserMatrixSet, decodability_matrix
from .errors import LengthMismatch, NotASurvivor, SingularDecodeMatrix, SingularMatrix, TooFewSurvivors
from .field import FieldMatrix, mod_matmul, solve_square
from .params import Group, SchemeParams, capacity_rates

KEY_STREAM = 1
INPUT_STREAM = 2


@dataclass
class KeyMaterial:
    """Groupwise keys Z_V; sub-key Z_{V,k} is the slice at k's rank inside V."""

    params: SchemeParams
    keys: dict[Group, np.ndarray]
    seed: int | None = None

    def subkey(self, group: Group, k: int) -> np.ndarray:
        pos = group.index(k)
        pl = self.params.piece_len
        return self.keys[group][pos * pl : (pos + 1) * pl]

    def restrict(self, k: int) -> KeyMaterial:
        """The keys user k actually holds."""
        return KeyMaterial(self.params, {g: z for g, z in self.keys.items() if k in g}, self.seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.keys[g] for g in self.params.groups])

    @classmethod
    def from_flat(cls, params: SchemeParams, z: np.ndarray, seed: int | None = None) -> KeyMaterial:
        z = np.asarray(z, dtype=np.int64) % params.q
        n = params.key_len
        if z.shape != (params.n_groups * n,):
            raise LengthMismatch(f"expected {params.n_groups * n} key symbols, got {z.shape}")
        return cls(params, {g: z[i * n : (i + 1) * n].copy() for i, g in enumerate(params.groups)}, seed)

    @classmethod
    def zeros(cls, params: SchemeParams) -> KeyMaterial:
        return cls(params, {g: np.zeros(params.key_len, dtype=np.int64) for g in params.groups})


@dataclass
class InputVector:
    owner: int
    W: np.ndarray

    def pieces(self, params: SchemeParams) -> np.ndarray:
        return self.W.reshape(params.n_pieces, params.piece_len)


@dataclass
class Round1Message:
    sender: int
    X: np.ndarray

    @property
    def symbols(self) -> np.ndarray:
        return self.X.reshape(-1)


@dataclass
class Round2Message:
    sender: int
    U1: tuple[int, ...]
    Y: np.ndarray

    @property
    def symbols(self) -> np.ndarray:
        return self.Y.reshape(-1)


@dataclass
class Round1Aggregate:
    U1: tuple[int, ...]
    masked_sums: np.ndarray  # (n_pieces, piece_len)
    known_F: dict[int, np.ndarray]  # F index -> (codedkey_len,)


@dataclass
class Transcript:
    params: SchemeParams
    U1: tuple[int, ...]
    U2: tuple[int, ...]
    X: dict[int, Round1Message]
    Y: dict[int, Round2Message]
    decoded: np.ndarray | None = None
    seeds: dict = field(default_factory=dict)


def achieved_rates(params: SchemeParams) -> tuple[Fraction, Fraction]:
    return capacity_rates(params.K, params.U, params.S)


def gen_keys(params: SchemeParams, seed: int | None = None) -> KeyMaterial:
    rng = np.random.default_rng([KEY_STREAM, seed]) if seed is not None else np.random.default_rng()
    keys = {g: rng.integers(0, params.q, size=params.key_len, dtype=np.int64) for g in params.groups}
    return KeyMaterial(params, keys, seed)


def random_inputs(params: SchemeParams, seed: int | None = None) -> dict[int, InputVector]:
    rng = np.random.default_rng([INPUT_STREAM, seed]) if seed is not None else np.random.default_rng()
    return {k: InputVector(k, rng.integers(0, params.q, size=params.L, dtype=np.int64)) for k in params.users}


def _check_users(params: SchemeParams, users: Iterable[int], what: str) -> tuple[int, ...]:
    users = tuple(sorted(set(users)))
    if any(k not in params.users for k in users):
        raise ValueError(f"{what} contains unknown users: {users}")
    return users


def round1_encode(
    params: SchemeParams, family: CoefficientFamily, keys: KeyMaterial, inp: InputVector
) -> Round1Message:
    q, k = params.q, inp.owner
    W = np.asarray(inp.W, dtype=np.int64)
    if W.shape != (params.L,):
        raise LengthMismatch(f"input of user {k} has {W.size} symbols, expected {params.L}")
    X = np.zeros((params.n_combos, params.piece_len), dtype=np.int64)
    for g in params.groups_with(k):
        X = (X + np.outer(family.a[g], keys.subkey(g, k))) % q
    X[: params.n_pieces] = (X[: params.n_pieces] + W.reshape(params.n_pieces, params.piece_len)) % q
    return Round1Message(k, X)


def server_round1_aggregate(params: SchemeParams, msgs: Mapping[int, Round1Message]) -> Round1Aggregate:
    U1 = _check_users(params, msgs, "U1")
    if len(U1) < params.U:
        raise TooFewSurvivors(f"{len(U1)} round-1 messages, need at least {params.U}")
    total = np.zeros((params.n_combos, params.piece_len), dtype=np.int64)
    for m in msgs.values():
        if m.X.shape != total.shape:
            raise LengthMismatch(f"round-1 message of user {m.sender} has shape {m.X.shape}")
        total = (total + m.X) % params.q
    C, cl = params.n_combos, params.codedkey_len
    known = {}
    for j in range(params.n_pieces, C):
        for i in range(params.U):
            known[i * C + j] = total[j, i * cl : (i + 1) * cl].copy()
    return Round1Aggregate(U1, total[: params.n_pieces].copy(), known)


def coded_keys(params: SchemeParams, keys: KeyMaterial, U1: Iterable[int]) -> dict[tuple[Group, int], np.ndarray]:
    """Z^{U1}_{V,i}: i-th of U slices of the survivors' summed sub-keys, for V meeting U1.

    Only groups present in ``keys`` are produced, so a user's restricted key
    material yields exactly the coded keys that user can compute.
    """
    U1 = set(U1)
    if len(U1) < params.U:
        raise TooFewSurvivors(f"|U1| = {len(U1)} < U = {params.U}")
    cl = params.codedkey_len
    out = {}
    for g in params.groups:
        if g not in keys.keys or not U1 & set(g):
            continue
        z = np.zeros(params.piece_len, dtype=np.int64)
        for k in g:
            if k in U1:
                z = (z + keys.subkey(g, k)) % params.q
        for i in range(params.U):
            out[(g, i)] = z[i * cl : (i + 1) * cl]
    return out


def _F_blocks(params: SchemeParams, family: CoefficientFamily, coded: Mapping[tuple[Group, int], np.ndarray]) -> np.ndarray:
    """F as a (U*C, codedkey_len) array; missing coded keys count as zero."""
    C, q = params.n_combos, params.q
    F = np.zeros((params.dim_F, params.codedkey_len), dtype=np.int64)
    for (g, i), block in coded.items():
        F[i * C : (i + 1) * C] = (F[i * C : (i + 1) * C] + np.outer(family.a[g], block)) % q
    return F


def round2_encode(
    params: SchemeParams,
    family: CoefficientFamily,
    ums: UserMatrixSet,
    keys: KeyMaterial,
    k: int,
    U1: Iterable[int],
    full_keys: KeyMaterial | None = None,
) -> Round2Message:
    """Y_k = S_k F, evaluated with the coded keys user k can compute.

    Passing ``full_keys`` recomputes F with every coded key and asserts the two
    agree, which is exactly the zero-column property of S_k.
    """
    U1 = tuple(sorted(set(U1)))
    if k not in U1:
        raise NotASurvivor(f"user {k} is not in U1={U1}")
    mine = keys.restrict(k)
    F = _F_blocks(params, family, coded_keys(params, mine, U1))
    Y = mod_matmul(ums.S[k].data, F, params.q)
    if full_keys is not None:
        F_full = _F_blocks(params, family, coded_keys(params, full_keys, U1))
        if not np.array_equal(Y, mod_matmul(ums.S[k].data, F_full, params.q)):
            raise AssertionError(f"S_{k} touches coded keys user {k} cannot compute")
    return Round2Message(k, U1, Y)


def server_decode(
    params: SchemeParams,
    family: CoefficientFamily,
    ums: UserMatrixSet,
    agg: Round1Aggregate,
    y_msgs: Mapping[int, Round2Message],
) -> np.ndarray:
    """Recover the sum of the U1 users' inputs (length L)."""
    U2 = _check_users(params, y_msgs, "U2")
    if len(U2) < params.U:
        raise TooFewSurvivors(f"{len(U2)} round-2 messages, need at least {params.U}")
    if not set(U2) <= set(agg.U1):
        raise ValueError(f"U2={U2} is not a subset of U1={agg.U1}")
    chosen = U2[: params.U]
    D = decodability_matrix(params, ums, chosen)
    rhs = [y_msgs[k].Y for k in chosen]
    rhs.append(np.array([agg.known_F[x] for x in params.known_F_indices()], dtype=np.int64).reshape(-1, params.codedkey_len))
    try:
        F = solve_square(D, FieldMatrix(np.vstack(rhs), params.q)).data
    except SingularMatrix as exc:
        raise SingularDecodeMatrix(f"decodability matrix singular for survivors {chosen}") from exc
    C = params.n_combos
    # Row j of the mask is the concatenation of F_{iC+j} over replicas i.
    mask = np.concatenate([F[i * C : i * C + params.n_pieces] for i in range(params.U)], axis=1)
    return ((agg.masked_sums - mask) % params.q).reshape(-1)


def run_protocol(
    params: SchemeParams,
    family: CoefficientFamily,
    ums: UserMatrixSet,
    inputs: Mapping[int, InputVector],
    keys: KeyMaterial,
    U1: Iterable[int],
    U2: Iterable[int],
) -> Transcript:
    """Simulate one epoch; every user sends round 1 (worst-case view), U1 is what arrives."""
    U1 = _check_users(params, U1, "U1")
    U2 = _check_users(params, U2, "U2")
    if not set(U2) <= set(U1):
        raise ValueError(f"U2={U2} is not a subset of U1={U1}")
    X = {k: round1_encode(params, family, keys.restrict(k), inputs[k]) for k in params.users}
    agg = server_round1_aggregate(params, {k: X[k] for k in U1})
    Y = {k: round2_encode(params, family, ums, keys.restrict(k), k, U1) for k in U1}
    decoded = server_decode(params, family, ums, agg, {k: Y[k] for k in U2})
    return Transcript(params, U1, U2, X, Y, decoded, {"family": family.seed, "keys": keys.seed})


def decode_transcript(transcript: Transcript, family: CoefficientFamily, ums: UserMatrixSet) -> np.ndarray:
    p = transcript.params
    agg = server_round1_aggregate(p, {k: transcript.X[k] for k in transcript.U1})
    return server_decode(p, family, ums, agg, {k: transcript.Y[k] for k in transcript.U2})


def legal_patterns(K: int, U: int) -> Iterable[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Every (U1, U2) with U2 a subset of U1 and |U1| >= |U2| >= U."""
    users = range(1, K + 1)
    for n1 in range(U, K + 1):
        for U1 in itertools.combinations(users, n1):
            for n2 in range(U, n1 + 1):
                for U2 in itertools.combinations(U1, n2):
                    yield U1, U2


# padding ------------------------------------------------------------------------


def padded_length(L: int, unit: int) -> int:
    return -(-L // unit) * unit


def pad_input(W: np.ndarray, L_padded: int) -> np.ndarray:
    out = np.zeros(L_padded, dtype=np.int64)
    out[: len(W)] = W
    return out


# transcript dump ----------------------------------------------------------------


def symbols_to_hex(symbols: np.ndarray) -> str:
    return np.asarray(symbols, dtype="<u4").tobytes().hex()


def hex_to_symbols(text: str) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(text), dtype="<u4").astype(np.int64)


def transcript_to_dict(t: Transcript) -> dict:
    p = t.params
    return {
        "params": p.to_dict(),
        "seeds": t.seeds,
        "U1": list(t.U1),
        "U2": list(t.U2),
        "X": {str(k): symbols_to_hex(m.symbols) for k, m in t.X.items()},
        "Y": {str(k): symbols_to_hex(m.symbols) for k, m in t.Y.items()},
        "decoded": None if t.decoded is None else symbols_to_hex(t.decoded),
    }


def transcript_from_dict(d: dict) -> Transcript:
    p = SchemeParams.from_dict(d["params"])
    U1 = tuple(d["U1"])
    X = {int(k): Round1Message(int(k), hex_to_symbols(v).reshape(p.n_combos, p.piece_len)) for k, v in d["X"].items()}
    Y = {
        int(k): Round2Message(int(k), U1, hex_to_symbols(v).reshape(p.n_pieces, p.codedkey_len))
        for k, v in d["Y"].items()
    }
    decoded = None if d.get("decoded") is None else hex_to_symbols(d["decoded"])
    return Transcript(p, U1, tuple(d["U2"]), X, Y, decoded, d.get("seeds", {}))


def save_transcript(path, t: Transcript) -> None:
    with open(path, "w") as fh:
        json.dump(transcript_to_dict(t), fh)


def load_transcript(path) -> Transcript:
    with open(path) as fh:
        return transcript_from_dict(json.load(fh))
