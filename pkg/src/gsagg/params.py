"""System parameters (K, U, S, q, L) and the combinatorial bookkeeping derived from them."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

from .errors import InfeasibleS, InvalidParams
from .field import DEFAULT_PRIME, check_modulus

Group = tuple[int, ...]


def binom(x: int, y: int) -> int:
    """Binomial coefficient with the convention C(x, y) = 0 if x < 0, y < 0 or x < y."""
    if x < 0 or y < 0 or x < y:
        return 0
    return math.comb(x, y)


def capacity_rates(K: int, U: int, S: int) -> tuple[Fraction, Fraction]:
    """Optimal (R1, R2) for uncoded groupwise keys; raises InfeasibleS when S = 1."""
    if S == 1:
        raise InfeasibleS("secure aggregation is impossible with S = 1 (individual keys only)")
    if not (2 <= S <= K and 1 <= U < K):
        raise InvalidParams(f"need 2 <= S <= K and 1 <= U < K, got K={K}, U={U}, S={S}")
    combos = binom(K - 1, S - 1)
    return Fraction(combos, combos - binom(K - 1 - U, S - 1)), Fraction(1, U)


def round1_overhead(K: int, U: int, S: int) -> Fraction:
    """Extra first-round rate paid over the unconstrained-key optimum R1 = 1."""
    r1, _ = capacity_rates(K, U, S)
    return r1 - 1


@dataclass(frozen=True)
class SchemeParams:
    K: int
    U: int
    S: int
    q: int = DEFAULT_PRIME
    L: int | None = None
    _groups: tuple[Group, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        K, U, S = self.K, self.U, self.S
        if S == 1:
            raise InfeasibleS("secure aggregation is impossible with S = 1 (individual keys only)")
        if not (2 <= S <= K):
            raise InvalidParams(f"need 2 <= S <= K, got S={S}, K={K}")
        if not (1 <= U < K):
            raise InvalidParams(f"need 1 <= U < K, got U={U}, K={K}")
        try:
            check_modulus(self.q)
        except ValueError as exc:
            raise InvalidParams(str(exc)) from None
        unit = U * self.n_pieces
        if self.L is None:
            object.__setattr__(self, "L", unit)
        elif self.L <= 0 or self.L % unit:
            raise InvalidParams(f"L={self.L} must be a positive multiple of U * n_pieces = {unit}")
        object.__setattr__(self, "_groups", tuple(itertools.combinations(range(1, K + 1), S)))

    def with_L(self, L: int) -> SchemeParams:
        return SchemeParams(self.K, self.U, self.S, self.q, L)

    def with_q(self, q: int) -> SchemeParams:
        return SchemeParams(self.K, self.U, self.S, q, self.L)

    # sizes -----------------------------------------------------------------
    @property
    def n_combos(self) -> int:
        """Length of every coefficient vector, C(K-1, S-1)."""
        return binom(self.K - 1, self.S - 1)

    @property
    def n_known(self) -> int:
        """Key-only first-round blocks per user, C(K-1-U, S-1)."""
        return binom(self.K - 1 - self.U, self.S - 1)

    @property
    def n_pieces(self) -> int:
        return self.n_combos - self.n_known

    @property
    def null_dim(self) -> int:
        return binom(self.K - 2, self.S - 2)

    @property
    def align_rank(self) -> int:
        return binom(self.K - 2, self.S - 1)

    @property
    def piece_len(self) -> int:
        return self.L // self.n_pieces

    @property
    def subkey_len(self) -> int:
        return self.piece_len

    @property
    def key_len(self) -> int:
        return self.S * self.piece_len

    @property
    def codedkey_len(self) -> int:
        return self.L // (self.U * self.n_pieces)

    @property
    def n_groups(self) -> int:
        return len(self._groups)

    @property
    def dim_F(self) -> int:
        return self.U * self.n_combos

    @property
    def R1(self) -> Fraction:
        return Fraction(self.n_combos, self.n_pieces)

    @property
    def R2(self) -> Fraction:
        return Fraction(1, self.U)

    @property
    def round1_symbols(self) -> int:
        return self.n_combos * self.piece_len

    @property
    def round2_symbols(self) -> int:
        return self.n_pieces * self.codedkey_len

    # subsets ---------------------------------------------------------------
    @property
    def users(self) -> range:
        return range(1, self.K + 1)

    @property
    def groups(self) -> tuple[Group, ...]:
        """All S-subsets of [K] in lexicographic order."""
        return self._groups

    @cached_property
    def group_index(self) -> dict[Group, int]:
        return {g: i for i, g in enumerate(self._groups)}

    def groups_with(self, k: int) -> list[Group]:
        """S_{k,1}, ..., S_{k,C(K-1,S-1)}: groups containing k, lexicographic."""
        return [g for g in self._groups if k in g]

    def groups_without(self, k: int) -> list[Group]:
        return [g for g in self._groups if k not in g]

    def known_F_indices(self) -> list[int]:
        """0-based F positions already recoverable after round 1."""
        C = self.n_combos
        return [i * C + j for i in range(self.U) for j in range(self.n_pieces, C)]

    def coded_key_column(self, replica: int, group: Group) -> int:
        """Global column of coded key (replica, group); group varies fastest."""
        return replica * self.n_groups + self.group_index[group]

    def to_dict(self) -> dict:
        return {"K": self.K, "U": self.U, "S": self.S, "q": self.q, "L": self.L}

    @classmethod
    def from_dict(cls, d: dict) -> SchemeParams:
        return cls(int(d["K"]), int(d["U"]), int(d["S"]), int(d.get("q", DEFAULT_PRIME)), d.get("L"))


def enough_space(K: int, U: int, S: int) -> tuple[int, int]:
    """Both sides of U*C(K-2,S-2) >= C(K-1,S-1) - C(K-1-U,S-1)."""
    return U * binom(K - 2, S - 2), binom(K - 1, S - 1) - binom(K - 1 - U, S - 1)
