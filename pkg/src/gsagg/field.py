"""Dense matrices over a prime field F_q.

Entries live in an ``int64`` numpy array, always reduced into ``[0, q)``.
The modulus must be below 2**31 so that a product of two residues fits in a
signed 64-bit integer; matrix products split one operand into 16-bit halves
to keep the accumulated dot products in range.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence

import numpy as np

from .errors import SingularMatrix

DEFAULT_PRIME = 2147483647  # 2**31 - 1
MAX_MODULUS = 1 << 31

# Accumulated products below 2**62 cannot overflow int64.
_SAFE_INNER_BITS = 62


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    # Deterministic Miller-Rabin for n < 3.3e24.
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if a % n == 0:
            continue
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def check_modulus(q: int) -> int:
    q = int(q)
    if not is_prime(q):
        raise ValueError(f"modulus {q} is not prime")
    if q >= MAX_MODULUS:
        raise ValueError(f"modulus {q} too large; must be < 2**31")
    return q


def mod_matmul(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    """Return ``a @ b mod q`` for reduced int64 arrays without overflow."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    inner = a.shape[-1]
    if inner == 0:
        return np.zeros(a.shape[:-1] + b.shape[1:], dtype=np.int64)
    if (q - 1) ** 2 * inner < (1 << _SAFE_INNER_BITS):
        return (a @ b) % q
    lo = b & 0xFFFF
    hi = b >> 16
    # Each half-product is bounded by inner * 2**31 * 2**16.
    if inner >= (1 << 15):
        raise ValueError("inner dimension too large for exact modular matmul")
    res_hi = (a @ hi) % q
    res_lo = (a @ lo) % q
    return (res_hi * 65536 + res_lo) % q


def _rref(data: np.ndarray, q: int, ncols: int | None = None) -> tuple[np.ndarray, list[int]]:
    """Gauss-Jordan elimination; pivots searched only in the first ``ncols`` columns.

    Pivoting picks the first nonzero entry at or below the current row, scanning
    columns left to right, so results are deterministic.
    """
    r_mat = np.array(data, dtype=np.int64, copy=True)
    rows = r_mat.shape[0]
    ncols = r_mat.shape[1] if ncols is None else ncols
    pivots: list[int] = []
    r = 0
    for c in range(ncols):
        if r == rows:
            break
        nz = np.flatnonzero(r_mat[r:, c])
        if nz.size == 0:
            continue
        p = r + int(nz[0])
        if p != r:
            r_mat[[r, p]] = r_mat[[p, r]]
        inv = pow(int(r_mat[r, c]), q - 2, q)
        r_mat[r] = (r_mat[r] * inv) % q
        col = r_mat[:, c].copy()
        col[r] = 0
        nzr = np.flatnonzero(col)
        if nzr.size:
            r_mat[nzr] = (r_mat[nzr] - (col[nzr, None] * r_mat[r][None, :]) % q) % q
        pivots.append(c)
        r += 1
    return r_mat, pivots


class FieldMatrix:
    """Immutable dense matrix over F_q."""

    __slots__ = ("_data", "q")

    def __init__(self, data, q: int = DEFAULT_PRIME):
        try:
            arr = np.array(data, dtype=np.int64)
        except OverflowError:
            arr = np.array([[int(v) % q for v in row] for row in data], dtype=np.int64)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 0)
        if arr.ndim != 2:
            raise ValueError(f"FieldMatrix needs 2-D data, got shape {arr.shape}")
        arr = arr % q
        arr.setflags(write=False)
        self._data = arr
        self.q = int(q)

    @classmethod
    def _wrap(cls, arr: np.ndarray, q: int) -> FieldMatrix:
        # Trusted constructor: arr is already reduced int64.
        obj = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.int64)
        arr.setflags(write=False)
        obj._data = arr
        obj.q = int(q)
        return obj

    @classmethod
    def zeros(cls, rows: int, cols: int, q: int = DEFAULT_PRIME) -> FieldMatrix:
        return cls._wrap(np.zeros((rows, cols), dtype=np.int64), q)

    @classmethod
    def identity(cls, n: int, q: int = DEFAULT_PRIME) -> FieldMatrix:
        return cls._wrap(np.eye(n, dtype=np.int64), q)

    @classmethod
    def from_columns(cls, columns: Sequence[Sequence[int]], q: int, nrows: int = 0) -> FieldMatrix:
        if len(columns) == 0:
            return cls.zeros(nrows, 0, q)
        return cls(np.array([list(c) for c in columns], dtype=np.int64).T, q)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    @property
    def T(self) -> FieldMatrix:
        return FieldMatrix._wrap(self._data.T, self.q)

    def __matmul__(self, other: FieldMatrix) -> FieldMatrix:
        _same_field(self, other)
        return FieldMatrix._wrap(mod_matmul(self._data, other._data, self.q), self.q)

    def __add__(self, other: FieldMatrix) -> FieldMatrix:
        _same_field(self, other)
        return FieldMatrix._wrap((self._data + other._data) % self.q, self.q)

    def __sub__(self, other: FieldMatrix) -> FieldMatrix:
        _same_field(self, other)
        return FieldMatrix._wrap((self._data - other._data) % self.q, self.q)

    def scale(self, c: int) -> FieldMatrix:
        return FieldMatrix._wrap((self._data * (int(c) % self.q)) % self.q, self.q)

    def __getitem__(self, idx) -> FieldMatrix:
        sub = self._data[idx]
        if sub.ndim != 2:
            raise IndexError("FieldMatrix indexing must keep two dimensions; use slices")
        return FieldMatrix._wrap(sub, self.q)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FieldMatrix):
            return NotImplemented
        return self.q == other.q and self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    def __hash__(self) -> int:
        return hash((self.q, self.shape, self._data.tobytes()))

    def __repr__(self) -> str:
        return f"FieldMatrix(q={self.q}, shape={self.shape}, data={self._data.tolist()})"

    def tolist(self) -> list[list[int]]:
        return self._data.tolist()

    def hstack(self, *others: FieldMatrix) -> FieldMatrix:
        for o in others:
            _same_field(self, o)
        return FieldMatrix._wrap(np.hstack([self._data, *(o._data for o in others)]), self.q)

    def vstack(self, *others: FieldMatrix) -> FieldMatrix:
        for o in others:
            _same_field(self, o)
        return FieldMatrix._wrap(np.vstack([self._data, *(o._data for o in others)]), self.q)

    def rref(self) -> tuple[FieldMatrix, list[int]]:
        r_mat, pivots = _rref(self._data, self.q)
        return FieldMatrix._wrap(r_mat, self.q), pivots


def _same_field(a: FieldMatrix, b: FieldMatrix) -> None:
    if a.q != b.q:
        raise ValueError(f"modulus mismatch: {a.q} vs {b.q}")


def block_diag(blocks: Iterable[FieldMatrix]) -> FieldMatrix:
    blocks = list(blocks)
    if not blocks:
        raise ValueError("block_diag needs at least one block")
    q = blocks[0].q
    rows = sum(b.rows for b in blocks)
    cols = sum(b.cols for b in blocks)
    out = np.zeros((rows, cols), dtype=np.int64)
    r = c = 0
    for b in blocks:
        _same_field(blocks[0], b)
        out[r : r + b.rows, c : c + b.cols] = b.data
        r += b.rows
        c += b.cols
    return FieldMatrix._wrap(out, q)


def mat_rank(m: FieldMatrix) -> int:
    """Exact rank over F_q. An empty matrix has rank 0."""
    if m.rows == 0 or m.cols == 0:
        return 0
    _, pivots = _rref(m.data, m.q)
    return len(pivots)


def left_null_basis(m: FieldMatrix) -> FieldMatrix:
    """Rows spanning ``{x : x @ m == 0}``; shape ``(rows(m) - rank(m), rows(m))``."""
    n = m.rows
    if m.cols == 0:
        return FieldMatrix.identity(n, m.q)
    # Null space of m^T, read off the reduced echelon form.
    r_mat, pivots = _rref(m.data.T, m.q)
    free = [c for c in range(n) if c not in set(pivots)]
    basis = np.zeros((len(free), n), dtype=np.int64)
    for i, f in enumerate(free):
        basis[i, f] = 1
        for row, p in enumerate(pivots):
            basis[i, p] = (-r_mat[row, f]) % m.q
    return FieldMatrix._wrap(basis, m.q)


def solve_square(a: FieldMatrix, b: FieldMatrix) -> FieldMatrix:
    """Solve ``a @ x == b`` for square, full-rank ``a``."""
    n = a.rows
    if a.cols != n:
        raise ValueError(f"solve_square needs a square matrix, got {a.shape}")
    if b.rows != n:
        raise ValueError(f"right-hand side has {b.rows} rows, expected {n}")
    _same_field(a, b)
    aug = np.hstack([a.data, b.data])
    r_mat, pivots = _rref(aug, a.q, ncols=n)
    if len(pivots) < n:
        raise SingularMatrix(f"matrix has rank {len(pivots)} < {n}")
    return FieldMatrix._wrap(r_mat[:, n:], a.q)


def rand_matrix(rows: int, cols: int, q: int, rng_seed) -> FieldMatrix:
    """Uniform i.i.d. entries; ``rng_seed`` is anything numpy's default_rng accepts."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return FieldMatrix._wrap(rng.integers(0, q, size=(rows, cols), dtype=np.int64), q)
