"""Independent checks of decodability and zero leakage.

Leakage is measured on the worst-case server view: every round-1 message
X_1..X_K plus the round-2 messages of all users in U1. All transmissions are
linear in the stacked inputs w and keys z, so with w and z uniform and
independent every entropy is a rank (in units of q-ary symbols):

    I(W; view)       = rank[A_W | A_Z] - rank A_Z
    I(W; view | sum) = rank[[A_W, A_Z], [T_W, 0]] - rank T_W - rank A_Z

``brute_force_mi`` recomputes the second quantity by enumerating every
(w, z) on tiny instances and counting outcomes.
"""

from __future__ import annotations

import itertools
import math
import time
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .coeffs import CoefficientFamily, UserMatrixSet
from .errors import GsaError, TooFewSurvivors, TooLargeToEnumerate, TraceMismatch
from .field import FieldMatrix, mat_rank, mod_matmul
from .params import SchemeParams
from .scheme import (
    InputVector,
    KeyMaterial,
    legal_patterns,
    round1_encode,
    round2_encode,
    run_protocol,
    transcript_to_dict,
)

ENUMERATION_LIMIT = 1 << 26
SWEEP_LIMIT = 10**5


@dataclass
class ViewSystem:
    params: SchemeParams
    U1: tuple[int, ...]
    A_W: np.ndarray  # view rows x K*L
    A_Z: np.ndarray  # view rows x (#groups * S * piece_len)
    T_W: np.ndarray  # L x K*L

    @property
    def n_view(self) -> int:
        return self.A_W.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.A_W.shape[1]

    @property
    def n_keys(self) -> int:
        return self.A_Z.shape[1]

    def evaluate(self, w: np.ndarray, z: np.ndarray) -> np.ndarray:
        q = self.params.q
        return (mod_matmul(self.A_W, w.reshape(-1, 1), q) + mod_matmul(self.A_Z, z.reshape(-1, 1), q)).reshape(-1) % q

    def x_rows(self, k: int, j: int) -> slice:
        """View rows carrying X_{k,j} (1-based k and j)."""
        p = self.params
        start = ((k - 1) * p.n_combos + (j - 1)) * p.piece_len
        return slice(start, start + p.piece_len)


@dataclass
class LeakageReport:
    U1: tuple[int, ...]
    h_view: int
    h_view_given_w: int
    i_w_view: int
    i_w_view_given_sum: int
    L: int
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"


def _w_index(p: SchemeParams, k: int, t: int) -> int:
    return (k - 1) * p.L + t


def _z_index(p: SchemeParams, g, k: int, s: int) -> int:
    return p.group_index[g] * p.key_len + g.index(k) * p.piece_len + s


def _symbolic_view(p: SchemeParams, family: CoefficientFamily, ums: UserMatrixSet, U1: tuple[int, ...]):
    q, C, pl, cl = p.q, p.n_combos, p.piece_len, p.codedkey_len
    nW, nZ = p.K * p.L, p.n_groups * p.key_len
    r1 = p.K * C * pl
    r2 = len(U1) * p.n_pieces * cl
    A_W = np.zeros((r1 + r2, nW), dtype=np.int64)
    A_Z = np.zeros((r1 + r2, nZ), dtype=np.int64)

    for k in p.users:
        for j in range(C):
            for s in range(pl):
                row = ((k - 1) * C + j) * pl + s
                if j < p.n_pieces:
                    A_W[row, _w_index(p, k, j * pl + s)] = 1
                for g in p.groups_with(k):
                    A_Z[row, _z_index(p, g, k, s)] = family.a[g][j]

    # F_{iC+j}[r] = sum_V a_{V,j} sum_{k' in V and U1} Z_{V,k'}[i*cl + r]
    F_of_z = np.zeros((p.dim_F * cl, nZ), dtype=np.int64)
    for i in range(p.U):
        for j in range(C):
            for r in range(cl):
                row = (i * C + j) * cl + r
                for g in p.groups:
                    coef = family.a[g][j]
                    for k in g:
                        if k in U1:
                            F_of_z[row, _z_index(p, g, k, i * cl + r)] = coef
    for idx, k in enumerate(U1):
        S_exp = np.kron(ums.S[k].data, np.eye(cl, dtype=np.int64))
        start = r1 + idx * p.n_pieces * cl
        A_Z[start : start + p.n_pieces * cl] = mod_matmul(S_exp, F_of_z, q)

    T_W = np.zeros((p.L, nW), dtype=np.int64)
    for k in U1:
        for t in range(p.L):
            T_W[t, _w_index(p, k, t)] = 1
    return A_W, A_Z, T_W


def _concrete_view(p, family, ums, U1, w: np.ndarray, z: np.ndarray) -> np.ndarray:
    keys = KeyMaterial.from_flat(p, z)
    parts = []
    for k in p.users:
        inp = InputVector(k, w[(k - 1) * p.L : k * p.L])
        parts.append(round1_encode(p, family, keys.restrict(k), inp).symbols)
    for k in U1:
        parts.append(round2_encode(p, family, ums, keys.restrict(k), k, U1).symbols)
    return np.concatenate(parts)


def build_view_system(
    params: SchemeParams,
    family: CoefficientFamily,
    ums: UserMatrixSet,
    U1: Iterable[int],
    checks: int = 10,
    seed: int = 0,
) -> ViewSystem:
    """Assemble the view matrices from the encoder formulas and cross-check them
    against the concrete encoders on ``checks`` random (w, z) draws."""
    U1 = tuple(sorted(set(U1)))
    if len(U1) < params.U:
        raise TooFewSurvivors(f"|U1| = {len(U1)} < U = {params.U}")
    A_W, A_Z, T_W = _symbolic_view(params, family, ums, U1)
    vs = ViewSystem(params, U1, A_W, A_Z, T_W)
    rng = np.random.default_rng(seed)
    for _ in range(checks):
        w = rng.integers(0, params.q, size=vs.n_inputs, dtype=np.int64)
        z = rng.integers(0, params.q, size=vs.n_keys, dtype=np.int64)
        if not np.array_equal(vs.evaluate(w, z), _concrete_view(params, family, ums, U1, w, z)):
            raise TraceMismatch(f"symbolic view disagrees with the encoders for U1={U1}")
    return vs


def leakage_rank(params: SchemeParams, vs: ViewSystem) -> LeakageReport:
    q = params.q
    full = FieldMatrix(np.hstack([vs.A_W, vs.A_Z]), q)
    r_full = mat_rank(full)
    r_z = mat_rank(FieldMatrix(vs.A_Z, q))
    r_t = mat_rank(FieldMatrix(vs.T_W, q))
    stacked = full.vstack(FieldMatrix(np.hstack([vs.T_W, np.zeros((vs.T_W.shape[0], vs.n_keys), np.int64)]), q))
    r_stacked = mat_rank(stacked)
    i_w = r_full - r_z
    i_cond = r_stacked - r_t - r_z
    L = vs.T_W.shape[0]
    verdict = "PASS" if i_cond == 0 and i_w == L else "FAIL"
    return LeakageReport(vs.U1, r_full, r_z, i_w, i_cond, L, verdict)


# sabotage fixtures -------------------------------------------------------------------


def zero_padded_view(vs: ViewSystem, n: int) -> ViewSystem:
    """View of inputs holding only ``n`` real symbols each, zero-padded to L.

    The padding symbols are constant, so their columns drop out of A_W and the
    target sum keeps its first ``n`` rows.
    """
    p = vs.params
    if not 0 < n <= p.L:
        raise ValueError(f"real input length must be in 1..{p.L}")
    cols = [_w_index(p, k, t) for k in p.users for t in range(n)]
    return ViewSystem(p, vs.U1, vs.A_W[:, cols], vs.A_Z, vs.T_W[:n][:, cols])


def sabotage_unmasked_piece(vs: ViewSystem, k: int = 1, j: int = 1) -> ViewSystem:
    """X_{k,j} sent in the clear: its key coefficients are dropped."""
    if j > vs.params.n_pieces:
        raise ValueError("only pieces carrying input symbols can be unmasked")
    A_Z = vs.A_Z.copy()
    A_Z[vs.x_rows(k, j)] = 0
    return ViewSystem(vs.params, vs.U1, vs.A_W, A_Z, vs.T_W)


def sabotage_zero_keys(vs: ViewSystem) -> ViewSystem:
    return ViewSystem(vs.params, vs.U1, vs.A_W, np.zeros_like(vs.A_Z), vs.T_W)


def sabotage_duplicate_rows(ums: UserMatrixSet, k: int = 1) -> UserMatrixSet:
    """S_k with its last row overwritten by its first.

    The rows stay inside the admissible null space, so the honest encoder can
    still produce the messages, but any survivor set containing k loses a
    dimension and decoding must fail.
    """
    if ums.S[k].rows < 2:
        raise ValueError("need at least two rows in S_k to duplicate one")
    data = ums.S[k].data.copy()
    data[-1] = data[0]
    S = dict(ums.S)
    S[k] = FieldMatrix(data, ums.params.q)
    return UserMatrixSet(ums.params, dict(ums.s_basis), S, ums.seed, dict(ums.meta))


# brute force oracle -------------------------------------------------------------------


def _digits(n_vars: int, q: int) -> np.ndarray:
    """All q**n_vars assignments, one per row, most significant variable first."""
    idx = np.arange(q**n_vars, dtype=np.int64)
    out = np.empty((idx.size, n_vars), dtype=np.int64)
    for v in range(n_vars - 1, -1, -1):
        out[:, v] = idx % q
        idx //= q
    return out


def _row_keys(rows: np.ndarray, q: int) -> np.ndarray:
    """Injective per-row labels that compare consistently across separate arrays.

    Rows fitting in 63 bits become base-q integers; wider rows fall back to
    (much slower) raw-byte void scalars.
    """
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    width = rows.shape[1]
    if width * math.log2(q) < 63:
        return rows @ (q ** np.arange(width - 1, -1, -1, dtype=np.int64)) if width else np.zeros(len(rows), np.int64)
    return rows.view(np.dtype((np.void, 8 * width))).reshape(-1)


def _exact_log(n: int, q: int) -> int | None:
    e = 0
    while n > 1:
        if n % q:
            return None
        n //= q
        e += 1
    return e


class _EntropyAccumulator:
    """Collects outcome counts; ``value(total)`` is the base-q entropy as a Fraction.

    Linear images of uniform variables give counts that are powers of q, so the
    result is exact; otherwise a float approximation is returned as a Fraction.
    """

    def __init__(self, q: int):
        self.q = q
        self.tally: dict[int, int] = {}  # count -> number of outcomes with that count

    def add(self, counts: np.ndarray) -> None:
        values, mult = np.unique(np.asarray(counts, dtype=np.int64), return_counts=True)
        for c, m in zip(values.tolist(), mult.tolist()):
            self.tally[c] = self.tally.get(c, 0) + m

    def value(self, total: int) -> Fraction:
        q = self.q
        log_total = _exact_log(total, q)
        logs = {c: _exact_log(c, q) for c in self.tally}
        if log_total is not None and None not in logs.values():
            return log_total - sum((Fraction(c * m * logs[c], total) for c, m in self.tally.items()), Fraction(0))
        h = -sum(m * c / total * math.log(c / total, q) for c, m in self.tally.items())
        return Fraction(h).limit_denominator(10**9)


def _run_lengths(sorted_rows: np.ndarray) -> np.ndarray:
    """Lengths of runs of equal labels inside each (already sorted) row."""
    n_rows, width = sorted_rows.shape
    starts = np.empty(sorted_rows.shape, dtype=bool)
    starts[:, 0] = True
    starts[:, 1:] = sorted_rows[:, 1:] != sorted_rows[:, :-1]
    idx = np.flatnonzero(starts.ravel())
    return np.diff(np.append(idx, n_rows * width))


def brute_force_mi(
    params: SchemeParams,
    family: CoefficientFamily,
    ums: UserMatrixSet,
    U1: Iterable[int],
    vs: ViewSystem | None = None,
    chunk_elems: int = 1 << 24,
) -> Fraction:
    """I(W; view | sum over U1 of W_k) by full enumeration of inputs and keys.

    The view map comes from ``vs`` (default: the encoder-checked view system);
    the target sum is computed directly from the enumerated inputs and every
    entropy is obtained by counting outcomes:
    I = H(W,T) + H(V,T) - H(W,V,T) - H(T).
    """
    U1 = tuple(sorted(set(U1)))
    q = params.q
    if vs is None:
        vs = build_view_system(params, family, ums, U1)
    nW, nZ = vs.n_inputs, vs.n_keys
    if q ** (nW + nZ) > ENUMERATION_LIMIT:
        raise TooLargeToEnumerate(f"q^{nW + nZ} states exceeds the {ENUMERATION_LIMIT} limit")
    total = q ** (nW + nZ)
    view_from_z = mod_matmul(_digits(nZ, q), vs.A_Z.T, q)
    w_all = _digits(nW, q)
    view_from_w = mod_matmul(w_all, vs.A_W.T, q)
    Lw = nW // params.K  # per-user input length (below L for zero-padded views)
    sums = np.zeros((w_all.shape[0], Lw), dtype=np.int64)
    for k in U1:
        sums = (sums + w_all[:, (k - 1) * Lw : k * Lw]) % q
    t_keys = _row_keys(sums, q)

    h_wt, h_vt, h_wvt, h_t = (_EntropyAccumulator(q) for _ in range(4))
    n_z = view_from_z.shape[0]
    step = max(1, chunk_elems // max(1, n_z * vs.n_view))
    for t in np.unique(t_keys):
        ws = np.flatnonzero(t_keys == t)
        h_t.add([ws.size * n_z])
        # T is a function of W, so (W, T) has one outcome per input.
        h_wt.add(np.full(ws.size, n_z))
        labels = []
        for lo in range(0, ws.size, step):
            chunk = ws[lo : lo + step]
            views = (view_from_z[None, :, :] + view_from_w[chunk, None, :]) % q
            lab = _row_keys(views.reshape(-1, vs.n_view), q).reshape(chunk.size, n_z)
            lab.sort(axis=1)
            h_wvt.add(_run_lengths(lab))
            labels.append(lab.reshape(-1))
        h_vt.add(np.unique(np.concatenate(labels), return_counts=True)[1])
    return h_wt.value(total) + h_vt.value(total) - h_wvt.value(total) - h_t.value(total)


# dropout sweep ---------------------------------------------------------------------


@dataclass
class SweepReport:
    params: dict
    patterns: int
    trials: int
    failures: list[dict] = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def count_patterns(K: int, U: int) -> int:
    return sum(
        math.comb(K, n1) * sum(math.comb(n1, n2) for n2 in range(U, n1 + 1)) for n1 in range(U, K + 1)
    )


def exhaustive_dropout_sweep(
    params: SchemeParams,
    family: CoefficientFamily,
    ums: UserMatrixSet,
    trials_per_pattern: int = 3,
    seed: int = 0,
    force: bool = False,
) -> SweepReport:
    from .scheme import gen_keys, random_inputs

    n_patterns = count_patterns(params.K, params.U)
    if n_patterns > SWEEP_LIMIT and not force:
        raise ValueError(f"{n_patterns} dropout patterns exceed the {SWEEP_LIMIT} budget; pass force=True")
    t0 = time.perf_counter()
    report = SweepReport(params.to_dict(), n_patterns, trials_per_pattern)
    for trial in range(trials_per_pattern):
        keys = gen_keys(params, seed * 1_000_003 + trial)
        inputs = random_inputs(params, seed * 1_000_003 + trial)
        for U1, U2 in legal_patterns(params.K, params.U):
            expected = sum(inputs[k].W for k in U1) % params.q
            try:
                tr = run_protocol(params, family, ums, inputs, keys, U1, U2)
                ok = np.array_equal(tr.decoded, expected)
                dump = None if ok else transcript_to_dict(tr)
                err = None if ok else "wrong sum"
            except GsaError as exc:
                ok, dump, err = False, None, f"{type(exc).__name__}: {exc}"
            if not ok:
                report.failures.append({"U1": list(U1), "U2": list(U2), "trial": trial, "error": err, "transcript": dump})
    report.elapsed_s = time.perf_counter() - t0
    return report


def leakage_sweep(params: SchemeParams, family: CoefficientFamily, ums: UserMatrixSet) -> list[LeakageReport]:
    """Leakage report for every U1 with |U1| >= U."""
    out = []
    for n in range(params.U, params.K + 1):
        for U1 in itertools.combinations(params.users, n):
            out.append(leakage_rank(params, build_view_system(params, family, ums, U1)))
    return out
