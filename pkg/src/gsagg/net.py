"""TCP realization of the two-round protocol: one server, K clients.

Frame layout (all multi-byte header fields big-endian)::

    magic "GSA1" | type u8 | user_id u16 | payload_len u32 | payload

Symbols inside payloads are little-endian 4-byte residues, or single bytes
when q <= 251 and the client asked for that width in its HELLO. The server
answers HELLO with a one-byte payload carrying the width it accepted.
SURVIVORS carries a u16 count followed by u16 user ids, ERROR a UTF-8 reason.

Keys are pre-shared as per-user ``.npz`` files stamped with the fixture
checksum; only the two protocol rounds go over the wire.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import random
import socket
import struct
import threading
import time
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .coeffs import CoefficientFamily, UserMatrixSet, fixture_to_dict, load_fixture
from .errors import ConnectionLost, KeyFileMismatch, ProtocolViolation, TooFewSurvivors
from .params import SchemeParams
from .scheme import (
    InputVector,
    KeyMaterial,
    Round1Message,
    Round2Message,
    Transcript,
    round1_encode,
    round2_encode,
    server_decode,
    server_round1_aggregate,
    symbols_to_hex,
)

logger = logging.getLogger(__name__)

MAGIC = b"GSA1"
HEADER = struct.Struct(">4sBHI")

HELLO, ROUND1, SURVIVORS, ROUND2, RESULT, ERROR = 1, 2, 3, 4, 5, 6
FRAME_NAMES = {HELLO: "HELLO", ROUND1: "ROUND1", SURVIVORS: "SURVIVORS", ROUND2: "ROUND2", RESULT: "RESULT", ERROR: "ERROR"}
SERVER_ID = 0
MAX_CONTROL_PAYLOAD = 1024
SMALL_FIELD = 251

DROP_MODES = ("never", "before_round1", "after_round1", "before_round2")


# framing ------------------------------------------------------------------------


def encode_frame(ftype: int, user_id: int, payload: bytes = b"") -> bytes:
    return HEADER.pack(MAGIC, ftype, user_id, len(payload)) + payload


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise ConnectionLost(f"peer closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket, max_payload: int) -> tuple[int, int, bytes]:
    """Read one frame; a declared payload above ``max_payload`` is refused unread."""
    magic, ftype, user_id, n = HEADER.unpack(recv_exact(sock, HEADER.size))
    if magic != MAGIC:
        raise ProtocolViolation(f"bad magic {magic!r}")
    if ftype not in FRAME_NAMES:
        raise ProtocolViolation(f"unknown frame type {ftype}")
    if n > max_payload:
        raise ProtocolViolation(f"{FRAME_NAMES[ftype]} payload of {n} bytes exceeds the {max_payload}-byte limit")
    return ftype, user_id, recv_exact(sock, n)


def error_frame(exc: Exception) -> bytes:
    return encode_frame(ERROR, SERVER_ID, f"{type(exc).__name__}: {exc}".encode()[:MAX_CONTROL_PAYLOAD])


def pack_symbols(symbols: np.ndarray, width: int) -> bytes:
    dtype = "u1" if width == 1 else "<u4"
    return np.asarray(symbols).astype(dtype).tobytes()


def unpack_symbols(payload: bytes, width: int, q: int) -> np.ndarray:
    if len(payload) % width:
        raise ProtocolViolation(f"payload of {len(payload)} bytes is not a whole number of {width}-byte symbols")
    out = np.frombuffer(payload, dtype="u1" if width == 1 else "<u4").astype(np.int64)
    if out.size and out.max() >= q:
        raise ProtocolViolation("symbol out of range for the field")
    return out


def pack_ids(ids) -> bytes:
    ids = list(ids)
    return struct.pack(f">H{len(ids)}H", len(ids), *ids)


def unpack_ids(payload: bytes) -> tuple[int, ...]:
    if len(payload) < 2:
        raise ProtocolViolation("truncated id list")
    (n,) = struct.unpack_from(">H", payload)
    if len(payload) != 2 + 2 * n:
        raise ProtocolViolation("id list length disagrees with its count")
    return struct.unpack_from(f">{n}H", payload, 2)


def choose_width(requested: int, q: int) -> int:
    return 1 if requested == 1 and q <= SMALL_FIELD else 4


# offline material -----------------------------------------------------------------


def fixture_checksum(family: CoefficientFamily, ums: UserMatrixSet) -> str:
    blob = json.dumps(fixture_to_dict(family, ums), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def write_key_files(directory, keys: KeyMaterial, checksum: str) -> dict[int, Path]:
    """One file per user holding exactly the group keys that user shares."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    p = keys.params
    paths = {}
    for k in p.users:
        groups = p.groups_with(k)
        path = directory / f"user_{k}.npz"
        np.savez(
            path,
            user=k,
            groups=np.array(groups, dtype=np.int64),
            keys=np.stack([keys.keys[g] for g in groups]),
            checksum=checksum,
        )
        paths[k] = path
    return paths


def load_user_keys(path, params: SchemeParams, user_id: int, checksum: str) -> KeyMaterial:
    with np.load(path) as data:
        if str(data["checksum"]) != checksum:
            raise KeyFileMismatch(f"{path} was issued for a different fixture")
        if int(data["user"]) != user_id:
            raise KeyFileMismatch(f"{path} belongs to user {int(data['user'])}, not {user_id}")
        groups = [tuple(int(v) for v in row) for row in data["groups"]]
        keys = {g: data["keys"][i].astype(np.int64) for i, g in enumerate(groups)}
    if sorted(groups) != params.groups_with(user_id) or any(z.shape != (params.key_len,) for z in keys.values()):
        raise KeyFileMismatch(f"{path} does not match the session parameters")
    return KeyMaterial(params, keys)


# configuration ---------------------------------------------------------------------


@dataclass(frozen=True)
class DropPlan:
    mode: str = "never"
    prob: float = 0.0

    @classmethod
    def parse(cls, text: str) -> DropPlan:
        text = text.strip()
        if text.startswith("p="):
            prob = float(text[2:])
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"drop probability {prob} outside [0, 1]")
            return cls("random", prob)
        if text not in DROP_MODES:
            raise ValueError(f"unknown drop plan {text!r}; expected one of {DROP_MODES} or p=<prob>")
        return cls(text)

    def __str__(self) -> str:
        return f"p={self.prob}" if self.mode == "random" else self.mode


def parse_drop_plans(text: str | None) -> dict[int, DropPlan]:
    """``"3:after_round1,4:p=0.5"`` -> {3: ..., 4: ...}."""
    plans = {}
    for item in filter(None, (s.strip() for s in (text or "").split(","))):
        uid, _, spec = item.partition(":")
        plans[int(uid)] = DropPlan.parse(spec)
    return plans


@dataclass
class SessionConfig:
    params: SchemeParams
    fixture_path: str | None = None
    key_dir: str | None = None
    host: str = "127.0.0.1"
    port: int = 0
    drop_plan: dict[int, DropPlan] = field(default_factory=dict)
    timeout_ms: int = 5000
    symbol_width: int = 4
    seed: int = 0
    family: CoefficientFamily | None = field(default=None, repr=False)
    ums: UserMatrixSet | None = field(default=None, repr=False)

    def fixture(self) -> tuple[CoefficientFamily, UserMatrixSet]:
        if self.family is None or self.ums is None:
            if self.fixture_path is None:
                raise ValueError("session has neither a fixture path nor a loaded fixture")
            self.family, self.ums = load_fixture(self.fixture_path)
            if self.family.params != self.params:
                raise KeyFileMismatch("fixture parameters differ from the session parameters")
        return self.family, self.ums

    def key_path(self, k: int) -> Path:
        if self.key_dir is None:
            raise ValueError("no key directory configured")
        return Path(self.key_dir) / f"user_{k}.npz"

    def plan_for(self, k: int) -> DropPlan:
        return self.drop_plan.get(k, DropPlan())

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "fixture_path": self.fixture_path,
            "key_dir": self.key_dir,
            "host": self.host,
            "port": self.port,
            "drop_plan": {str(k): str(v) for k, v in self.drop_plan.items()},
            "timeout_ms": self.timeout_ms,
            "symbol_width": self.symbol_width,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> SessionConfig:
        return cls(
            params=SchemeParams.from_dict(d["params"]),
            fixture_path=d.get("fixture_path"),
            key_dir=d.get("key_dir"),
            host=d.get("host", "127.0.0.1"),
            port=int(d.get("port", 0)),
            drop_plan={int(k): DropPlan.parse(v) for k, v in d.get("drop_plan", {}).items()},
            timeout_ms=int(d.get("timeout_ms", 5000)),
            symbol_width=int(d.get("symbol_width", 4)),
            seed=int(d.get("seed", 0)),
        )


# records ---------------------------------------------------------------------------


@dataclass
class AggregationRecord:
    params: dict
    U1: list[int]
    U2: list[int]
    result: np.ndarray | None
    timings: dict[str, float]
    bytes_r1: dict[int, int] = field(default_factory=dict)
    bytes_r2: dict[int, int] = field(default_factory=dict)
    symbol_width: dict[int, int] = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)
    transcript: Transcript | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("result", "transcript")}
        d["result"] = None if self.result is None else symbols_to_hex(self.result)
        return d


@dataclass
class ClientRecord:
    user_id: int
    dropped: str | None = None  # "round1" / "round2" when the drop plan fired
    bytes_r1: int = 0
    bytes_r2: int = 0
    symbol_width: int = 4
    U1: list[int] | None = None
    result: np.ndarray | None = None
    digest_r1: str | None = None
    digest_r2: str | None = None
    error: str | None = None


# server ----------------------------------------------------------------------------


class _Session:
    """Shared state of one aggregation epoch on the server side."""

    def __init__(self, params: SchemeParams):
        self.params = params
        self.cond = threading.Condition()
        self.conns: dict[int, socket.socket] = {}
        self.width: dict[int, int] = {}
        self.r1: dict[int, Round1Message] = {}
        self.r2: dict[int, Round2Message] = {}
        self.bytes_r1: dict[int, int] = {}
        self.bytes_r2: dict[int, int] = {}
        self.gone: set[int] = set()  # users whose connection failed or closed
        self.violations: list[str] = []
        self.U1: tuple[int, ...] | None = None
        self.round2_open = threading.Event()
        self.closing = threading.Event()

    def fail(self, uid: int | None, reason: str) -> None:
        with self.cond:
            if uid is not None:
                self.gone.add(uid)
            self.cond.notify_all()
        logger.info("user %s: %s", uid, reason)

    def violation(self, uid: int | None, conn: socket.socket, exc: Exception) -> None:
        self.violations.append(f"user {uid}: {exc}")
        try:
            conn.sendall(error_frame(exc))
        except OSError:
            pass
        conn.close()
        self.fail(uid, f"protocol violation: {exc}")

    def round1_done(self) -> bool:
        return len(set(self.r1) | self.gone) >= self.params.K

    def round2_done(self) -> bool:
        return all(k in self.r2 or k in self.gone for k in self.U1)


def _handle_client(sess: _Session, conn: socket.socket, deadline1: float, timeout_s: float) -> None:
    p = sess.params
    uid = None
    try:
        conn.settimeout(max(0.01, deadline1 - time.monotonic()))
        ftype, uid, payload = read_frame(conn, MAX_CONTROL_PAYLOAD)
        if ftype != HELLO or not 1 <= uid <= p.K or len(payload) != 1:
            bad, uid = uid, None
            raise ProtocolViolation(f"expected HELLO from a user in [1..{p.K}], got {FRAME_NAMES[ftype]} from {bad}")
        with sess.cond:
            if uid in sess.conns or sess.U1 is not None:
                dup, uid = uid, None
                raise ProtocolViolation(f"user {dup} connected twice or after the round-1 deadline")
            sess.conns[uid] = conn
        width = choose_width(payload[0], p.q)
        sess.width[uid] = width
        conn.sendall(encode_frame(HELLO, SERVER_ID, bytes([width])))

        expected = p.round1_symbols * width
        ftype, sender, payload = read_frame(conn, expected)
        if ftype != ROUND1 or sender != uid or len(payload) != expected:
            raise ProtocolViolation(f"expected a {expected}-byte ROUND1 from user {uid}")
        X = unpack_symbols(payload, width, p.q).reshape(p.n_combos, p.piece_len)
        with sess.cond:
            if sess.U1 is None:
                sess.r1[uid] = Round1Message(uid, X)
                sess.bytes_r1[uid] = HEADER.size + len(payload)
            sess.cond.notify_all()

        # Only the coordinator writes from here on; this thread just reads ROUND2.
        sess.round2_open.wait()
        if sess.closing.is_set() or uid not in sess.U1:
            return
        conn.settimeout(timeout_s)
        expected = p.round2_symbols * width
        ftype, sender, payload = read_frame(conn, expected)
        if ftype != ROUND2 or sender != uid or len(payload) != expected:
            raise ProtocolViolation(f"expected a {expected}-byte ROUND2 from user {uid}")
        Y = unpack_symbols(payload, width, p.q).reshape(p.n_pieces, p.codedkey_len)
        with sess.cond:
            sess.r2[uid] = Round2Message(uid, sess.U1, Y)
            sess.bytes_r2[uid] = HEADER.size + len(payload)
            sess.cond.notify_all()
    except ProtocolViolation as exc:
        sess.violation(uid, conn, exc)
    except (ConnectionLost, OSError) as exc:
        sess.fail(uid, f"connection ended: {exc}")


def _broadcast(sess: _Session, users, frame: bytes) -> None:
    for k in users:
        conn = sess.conns.get(k)
        if conn is None or k in sess.gone:
            continue
        try:
            conn.sendall(frame)
        except OSError:
            sess.fail(k, "send failed")


def run_server(cfg: SessionConfig, ready: threading.Event | None = None, bound: dict | None = None) -> AggregationRecord:
    """Serve one aggregation epoch and return its record.

    ``ready`` is set once the socket listens; the bound port is written to
    ``bound["port"]`` (useful with ``cfg.port == 0``).
    """
    p = cfg.params
    family, ums = cfg.fixture()
    timeout_s = cfg.timeout_ms / 1000
    sess = _Session(p)
    threads: list[threading.Thread] = []

    with socket.create_server((cfg.host, cfg.port), reuse_port=False) as srv:
        srv.settimeout(0.02)
        if bound is not None:
            bound["port"] = srv.getsockname()[1]
        if ready is not None:
            ready.set()
        t0 = time.perf_counter()
        deadline1 = time.monotonic() + timeout_s
        try:
            # round 1: accept until everyone is accounted for or the deadline passes
            while time.monotonic() < deadline1:
                with sess.cond:
                    if sess.round1_done():
                        break
                try:
                    conn, _ = srv.accept()
                except socket.timeout:
                    continue
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                t = threading.Thread(target=_handle_client, args=(sess, conn, deadline1, timeout_s), daemon=True)
                t.start()
                threads.append(t)
            with sess.cond:
                sess.cond.wait_for(sess.round1_done, timeout=max(0.0, deadline1 - time.monotonic()))
                sess.U1 = tuple(sorted(sess.r1))
            t1 = time.perf_counter()
            if len(sess.U1) < p.U:
                raise TooFewSurvivors(f"round 1 heard from {len(sess.U1)} users {list(sess.U1)}, need {p.U}")

            _broadcast(sess, sess.U1, encode_frame(SURVIVORS, SERVER_ID, pack_ids(sess.U1)))
            sess.round2_open.set()
            with sess.cond:
                sess.cond.wait_for(sess.round2_done, timeout=timeout_s)
                U2 = tuple(sorted(sess.r2))
            t2 = time.perf_counter()
            if len(U2) < p.U:
                raise TooFewSurvivors(f"round 2 heard from {len(U2)} users {list(U2)}, need {p.U}")

            agg = server_round1_aggregate(p, {k: sess.r1[k] for k in sess.U1})
            result = server_decode(p, family, ums, agg, {k: sess.r2[k] for k in U2})
            t3 = time.perf_counter()
            for k in sess.U1:
                _broadcast(sess, [k], encode_frame(RESULT, SERVER_ID, pack_symbols(result, sess.width[k])))
        except TooFewSurvivors as exc:
            _broadcast(sess, list(sess.conns), error_frame(exc))
            raise
        finally:
            sess.closing.set()
            sess.round2_open.set()
            for conn in list(sess.conns.values()):
                try:
                    conn.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                conn.close()
            for t in threads:
                t.join(timeout=1.0)

    timings = {
        "round1_ms": (t1 - t0) * 1e3,
        "round2_ms": (t2 - t1) * 1e3,
        "decode_ms": (t3 - t2) * 1e3,
        "total_ms": (t3 - t0) * 1e3,
    }
    transcript = Transcript(p, sess.U1, U2, dict(sess.r1), dict(sess.r2), result, {"family": family.seed})
    return AggregationRecord(
        p.to_dict(),
        list(sess.U1),
        list(U2),
        result,
        timings,
        dict(sess.bytes_r1),
        dict(sess.bytes_r2),
        dict(sess.width),
        list(sess.violations),
        transcript,
    )


# client ----------------------------------------------------------------------------


def _connect(cfg: SessionConfig, deadline: float) -> socket.socket:
    while True:
        try:
            sock = socket.create_connection((cfg.host, cfg.port), timeout=max(0.05, deadline - time.monotonic()))
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except (ConnectionRefusedError, socket.timeout) as exc:
            if time.monotonic() >= deadline:
                raise ConnectionLost(f"could not reach {cfg.host}:{cfg.port}") from exc
            time.sleep(0.02)


def _expect(sock: socket.socket, ftype: int, max_payload: int) -> bytes:
    got, _, payload = read_frame(sock, max(max_payload, MAX_CONTROL_PAYLOAD))
    if got == ERROR:
        kind, _, reason = payload.decode(errors="replace").partition(": ")
        if kind == TooFewSurvivors.__name__:
            raise TooFewSurvivors(reason)
        raise ProtocolViolation(f"server error: {kind}: {reason}")
    if got != ftype:
        raise ProtocolViolation(f"expected {FRAME_NAMES[ftype]}, got {FRAME_NAMES[got]}")
    return payload


def load_input(source, params: SchemeParams) -> np.ndarray:
    if isinstance(source, (str, os.PathLike)):
        source = np.load(source)
    W = np.asarray(source, dtype=np.int64) % params.q
    if W.shape != (params.L,):
        raise ValueError(f"input must hold {params.L} symbols, got shape {W.shape}")
    return W


def run_client(cfg: SessionConfig, user_id: int, input_source, keys: KeyMaterial | None = None) -> ClientRecord:
    """Run one user's side of an epoch; ``input_source`` is a .npy path or an array."""
    p = cfg.params
    family, ums = cfg.fixture()
    if keys is None:
        keys = load_user_keys(cfg.key_path(user_id), p, user_id, fixture_checksum(family, ums))
    W = load_input(input_source, p)
    plan = cfg.plan_for(user_id)
    rng = random.Random(f"{cfg.seed}:{user_id}")
    rec = ClientRecord(user_id)

    def drops(stage: str) -> bool:
        if plan.mode == "random":
            # one draw per round, taken just before that round's transmission
            return stage != "after_round1" and rng.random() < plan.prob
        return plan.mode == stage

    if drops("before_round1"):
        rec.dropped = "round1"
        return rec
    timeout_s = cfg.timeout_ms / 1000
    sock = _connect(cfg, time.monotonic() + timeout_s)
    try:
        sock.settimeout(3 * timeout_s)
        requested = 1 if cfg.symbol_width == 1 and p.q <= SMALL_FIELD else 4
        sock.sendall(encode_frame(HELLO, user_id, bytes([requested])))
        ack = _expect(sock, HELLO, 1)
        if len(ack) != 1 or ack[0] not in (1, 4) or ack[0] > requested:
            raise ProtocolViolation(f"bad HELLO acknowledgement {ack!r}")
        width = rec.symbol_width = ack[0]

        x = round1_encode(p, family, keys, InputVector(user_id, W))
        payload = pack_symbols(x.symbols, width)
        sock.sendall(encode_frame(ROUND1, user_id, payload))
        rec.bytes_r1 = HEADER.size + len(payload)
        rec.digest_r1 = hashlib.sha256(payload).hexdigest()
        if drops("after_round1"):
            rec.dropped = "round2"
            return rec

        U1 = unpack_ids(_expect(sock, SURVIVORS, 2 + 2 * p.K))
        rec.U1 = list(U1)
        if drops("before_round2"):
            rec.dropped = "round2"
            return rec
        y = round2_encode(p, family, ums, keys, user_id, U1)
        payload = pack_symbols(y.symbols, width)
        sock.sendall(encode_frame(ROUND2, user_id, payload))
        rec.bytes_r2 = HEADER.size + len(payload)
        rec.digest_r2 = hashlib.sha256(payload).hexdigest()

        rec.result = unpack_symbols(_expect(sock, RESULT, p.L * width), width, p.q)
        return rec
    finally:
        sock.close()


# loopback session and benchmark ------------------------------------------------------


def prepare_session(
    params: SchemeParams,
    family: CoefficientFamily,
    ums: UserMatrixSet,
    directory,
    seed: int = 0,
    **cfg_kwargs,
) -> tuple[SessionConfig, KeyMaterial, dict[int, np.ndarray]]:
    """Write key files and random inputs for a loopback run."""
    from .coeffs import save_fixture
    from .scheme import gen_keys, random_inputs

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fixture_path = directory / "fixture.json"
    save_fixture(fixture_path, family, ums)
    keys = gen_keys(params, seed)
    write_key_files(directory / "keys", keys, fixture_checksum(family, ums))
    inputs = {k: v.W for k, v in random_inputs(params, seed).items()}
    cfg = SessionConfig(
        params, str(fixture_path), str(directory / "keys"), seed=seed, family=family, ums=ums, **cfg_kwargs
    )
    return cfg, keys, inputs


def run_session(
    cfg: SessionConfig, inputs: Mapping[int, np.ndarray]
) -> tuple[AggregationRecord | None, dict[int, ClientRecord], Exception | None]:
    """Run server and all K clients on loopback threads.

    Returns the server record (None if the epoch aborted), every client record
    and the server-side exception, if any.
    """
    ready, bound = threading.Event(), {}
    out: dict = {}

    def serve():
        try:
            out["record"] = run_server(cfg, ready, bound)
        except Exception as exc:  # reported to the caller
            out["error"] = exc
            ready.set()

    server = threading.Thread(target=serve, daemon=True)
    server.start()
    ready.wait()
    if "error" in out:
        return None, {}, out["error"]
    client_cfg = SessionConfig(**{**cfg.__dict__, "port": bound["port"]})
    clients: dict[int, ClientRecord] = {}

    def client(k: int):
        try:
            clients[k] = run_client(client_cfg, k, inputs[k])
        except Exception as exc:  # a failing client is recorded, not fatal
            clients[k] = ClientRecord(k, error=f"{type(exc).__name__}: {exc}")

    threads = [threading.Thread(target=client, args=(k,), daemon=True) for k in cfg.params.users]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    server.join()
    return out.get("record"), clients, out.get("error")


BENCH_COLUMNS = ["K", "U", "S", "L", "q", "repeat", "round1_ms", "round2_ms", "decode_ms", "total_ms", "bytes_r1", "bytes_r2"]


def bench_aggregation(
    base: SessionConfig,
    L_values,
    n_repeats: int,
    directory,
    csv_path=None,
    seed: int = 0,
    max_attempts: int = 100,
) -> list[dict]:
    """Time loopback epochs for each input length; one row per repeat.

    ``bytes_r1``/``bytes_r2`` are the per-user frame sizes (header included).
    """
    from .coeffs import build_validated

    rows = []
    for L in L_values:
        params = base.params.with_L(int(L))
        family, ums = build_validated(params, seed, max_attempts)
        for rep in range(n_repeats):
            cfg, _, inputs = prepare_session(
                params,
                family,
                ums,
                Path(directory) / f"L{L}",
                seed=seed + rep,
                drop_plan=base.drop_plan,
                timeout_ms=base.timeout_ms,
                symbol_width=base.symbol_width,
                host=base.host,
            )
            record, clients, err = run_session(cfg, inputs)
            if err is not None:
                raise err
            r1 = max(record.bytes_r1.values())
            r2 = max(record.bytes_r2.values())
            rows.append(
                {"K": params.K, "U": params.U, "S": params.S, "L": params.L, "q": params.q, "repeat": rep}
                | {k: round(v, 3) for k, v in record.timings.items()}
                | {"bytes_r1": r1, "bytes_r2": r2}
            )
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    return rows


def mean_totals(rows: list[dict]) -> dict[int, float]:
    by_L: dict[int, list[float]] = {}
    for r in rows:
        by_L.setdefault(r["L"], []).append(r["total_ms"])
    return {L: sum(v) / len(v) for L, v in sorted(by_L.items())}
