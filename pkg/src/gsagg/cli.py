"""Command-line entry point: ``gsagg <command> ...``.

Every command prints the seeds it used, accepts ``--json`` for machine output
and ``--config file.json`` whose keys (flag names with dashes as underscores)
fill in any flag not given on the command line. Exit codes: 0 success,
1 a verification or protocol check failed, 2 bad arguments.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .coeffs import (
    build_validated,
    load_fixture,
    save_fixture,
    verify_alignment_rank,
    verify_c1,
    verify_decodability,
    verify_security_rank,
)
from .errors import GsaError, InfeasibleS, InvalidParams, TooLargeToEnumerate
from .field import DEFAULT_PRIME
from .params import SchemeParams, binom, capacity_rates

DEFAULTS = {
    "q": DEFAULT_PRIME,
    "L": None,
    "seed": 0,
    "max_attempts": 10,
    "trials": 3,
    "mode": "all",
    "timeout_ms": 5000,
    "listen": "127.0.0.1:7787",
    "symbol_width": 4,
    "repeats": 3,
    "L_values": "100000,200000,300000",
    "drop_plan": "",
    "work_dir": "gsagg-work",
}


class UsageError(Exception):
    pass


def _users(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return sorted({int(v) for v in text})
    try:
        return sorted({int(v) for v in str(text).split(",") if v.strip()})
    except ValueError:
        raise UsageError(f"expected a comma-separated list of user ids, got {text!r}") from None


def _frac(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def _emit(args, payload: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, indent=1, default=str))
    else:
        print("\n".join(lines))


def _params(args) -> SchemeParams:
    for name in ("K", "U", "S"):
        if args.get(name) is None:
            raise UsageError(f"--{name} is required")
    return SchemeParams(int(args["K"]), int(args["U"]), int(args["S"]), int(args["q"]), args.get("L") and int(args["L"]))


def _fixture(args):
    if not args.get("fixture"):
        raise UsageError("--fixture is required")
    return load_fixture(args["fixture"])


# commands -----------------------------------------------------------------------


def cmd_rates(args, opts) -> int:
    K, U, S = (int(opts[n]) if opts.get(n) is not None else None for n in ("K", "U", "S"))
    if None in (K, U, S):
        raise UsageError("--K, --U and --S are required")
    if K < 2:
        raise UsageError("K must be at least 2")
    try:
        r1, r2 = capacity_rates(K, U, S)
    except InfeasibleS:
        payload = {"K": K, "U": U, "S": S, "feasible": False, "reason": "secure aggregation is infeasible with S = 1"}
        _emit(args, payload, [f"K={K} U={U} S={S}: infeasible - no secure aggregation is possible with S = 1"])
        return 0
    overhead = r1 - 1
    known = binom(K - 1 - U, S - 1)
    payload = {
        "K": K,
        "U": U,
        "S": S,
        "feasible": True,
        "R1": _frac(r1),
        "R2": _frac(r2),
        "round1_overhead": _frac(overhead),
        "unconstrained_keys": {"R1": "1", "R2": _frac(Fraction(1, U))},
        "collapses_to_unconstrained": S > K - U,
        "key_only_blocks": known,
    }
    lines = [
        f"K={K} U={U} S={S}",
        f"  R1 = {_frac(r1)}   R2 = {_frac(r2)}",
        f"  unconstrained-key optimum: R1 = 1, R2 = {_frac(Fraction(1, U))}",
        f"  round-1 overhead = {_frac(overhead)} (round 2 has none)",
    ]
    if S > K - U:
        lines.append(f"  S > K-U ({S} > {K - U}): the region collapses to the unconstrained one")
    _emit(args, payload, lines)
    return 0


def cmd_fixture(args, opts) -> int:
    params = _params(opts)
    out = opts.get("out") or "fixture.json"
    family, ums = build_validated(params, int(opts["seed"]), int(opts["max_attempts"]))
    save_fixture(out, family, ums)
    payload = {"params": params.to_dict(), "seed": int(opts["seed"]), "attempts": ums.meta["attempts"], "out": out}
    _emit(args, payload, [f"wrote {out} for {params}", f"seed: {opts['seed']}  attempts: {ums.meta['attempts']}"])
    return 0


def cmd_keys(args, opts) -> int:
    from .net import fixture_checksum, write_key_files
    from .scheme import gen_keys, random_inputs

    family, ums = _fixture(opts)
    p = family.params
    out = Path(opts.get("out") or "keys")
    seed = int(opts["seed"])
    paths = write_key_files(out, gen_keys(p, seed), fixture_checksum(family, ums))
    inputs = random_inputs(p, seed)
    for k, inp in inputs.items():
        np.save(out / f"input_{k}.npy", inp.W)
    payload = {"seed": seed, "key_files": {k: str(v) for k, v in paths.items()}, "inputs": str(out)}
    _emit(args, payload, [f"wrote {len(paths)} key files and inputs to {out}", f"seed: {seed}"])
    return 0


def cmd_simulate(args, opts) -> int:
    from .scheme import gen_keys, pad_input, random_inputs, run_protocol, save_transcript

    if opts.get("U1") is None or opts.get("U2") is None:
        raise UsageError("--U1 and --U2 are required")
    U1, U2 = _users(opts["U1"]), _users(opts["U2"])
    if not set(U2) <= set(U1):
        raise UsageError(f"U2={U2} is not a subset of U1={U1}")
    family, ums = _fixture(opts)
    p = family.params
    if len(U2) < p.U:
        raise UsageError(f"|U2| = {len(U2)} is below U = {p.U}")
    if any(k not in p.users for k in U1):
        raise UsageError(f"U1 must be drawn from users 1..{p.K}")
    seed = int(opts["seed"])
    keys = gen_keys(p, seed)
    inputs = random_inputs(p, seed)
    n = p.L
    if opts.get("pad") is not None:
        n = int(opts["pad"])
        if not 0 < n <= p.L:
            raise UsageError(f"--pad length must be in 1..{p.L}")
        for inp in inputs.values():
            inp.W = pad_input(inp.W[:n], p.L)
    tr = run_protocol(p, family, ums, inputs, keys, U1, U2)
    expected = sum(inputs[k].W for k in U1) % p.q
    ok = bool(np.array_equal(tr.decoded, expected))
    if opts.get("dump"):
        save_transcript(opts["dump"], tr)
    payload = {
        "seed": seed,
        "U1": U1,
        "U2": U2,
        "correct": ok,
        "input_len": n,
        "sum_head": [int(v) for v in tr.decoded[: min(n, 8)]],
        "round1_symbols_per_user": p.round1_symbols,
        "round2_symbols_per_user": p.round2_symbols,
    }
    lines = [
        f"U1={U1} U2={U2} seed: {seed}",
        f"decoded sum {'matches' if ok else 'DOES NOT match'} the true sum (first symbols {payload['sum_head']})",
        f"per-user load: round 1 {p.round1_symbols} symbols, round 2 {p.round2_symbols} symbols (L={p.L})",
    ]
    _emit(args, payload, lines)
    return 0 if ok else 1


def cmd_verify(args, opts) -> int:
    from .verify import brute_force_mi, build_view_system, exhaustive_dropout_sweep, leakage_sweep

    family, ums = _fixture(opts)
    p = family.params
    mode = opts["mode"]
    if mode not in ("decode", "leak", "mi", "all"):
        raise UsageError(f"unknown verify mode {mode!r}")
    seed = int(opts["seed"])
    rows: list[dict] = []

    def add(check: str, verdict: str, detail: str = "") -> None:
        rows.append({"check": check, "verdict": verdict, "detail": detail})

    if mode in ("decode", "all"):
        add("security_rank", "PASS" if verify_security_rank(family) else "FAIL")
        add("alignment_rank", "PASS" if verify_alignment_rank(family) else "FAIL")
        add("decodability", "PASS" if verify_decodability(family, ums) else "FAIL")
        add("zero_columns", "PASS" if verify_c1(family, ums) else "FAIL")
        try:
            sweep = exhaustive_dropout_sweep(p, family, ums, int(opts["trials"]), seed, bool(opts.get("force")))
            add("dropout_sweep", "PASS" if sweep.passed else "FAIL",
                f"{sweep.patterns} patterns x {sweep.trials} trials, {len(sweep.failures)} failures")
        except ValueError as exc:
            add("dropout_sweep", "FAIL", str(exc))
    if mode in ("leak", "all"):
        reports = leakage_sweep(p, family, ums)
        bad = [r for r in reports if not r.passed]
        worst = max(r.i_w_view_given_sum for r in reports)
        add("leakage_rank", "FAIL" if bad else "PASS",
            f"{len(reports)} survivor sets, max I(W;view|sum)={worst}, I(W;view)={sorted({r.i_w_view for r in reports})}")
    if mode in ("mi", "all"):
        try:
            values = {}
            for U1 in (c for n in range(p.U, p.K + 1) for c in itertools.combinations(p.users, n)):
                values[U1] = brute_force_mi(p, family, ums, U1, build_view_system(p, family, ums, U1))
            add("brute_force_mi", "PASS" if all(v == 0 for v in values.values()) else "FAIL",
                ", ".join(f"U1={list(k)}: {_frac(v)}" for k, v in values.items()))
        except TooLargeToEnumerate as exc:
            if mode == "mi":
                add("brute_force_mi", "FAIL", str(exc))
            else:
                add("brute_force_mi", "SKIP", str(exc))
    ok = all(r["verdict"] != "FAIL" for r in rows)
    payload = {"params": p.to_dict(), "seed": seed, "fixture_seed": family.seed, "passed": ok, "checks": rows}
    width = max(len(r["check"]) for r in rows)
    lines = [f"{p}  seed: {seed}  fixture seed: {family.seed}"]
    lines += [f"  {r['check']:<{width}}  {r['verdict']:<4}  {r['detail']}" for r in rows]
    lines.append("ALL PASS" if ok else "FAILED")
    _emit(args, payload, lines)
    return 0 if ok else 1


def cmd_witness(args, opts) -> int:
    from .witness import witness_report

    params = _params(opts)
    if opts.get("U2") is None or opts.get("u") is None:
        raise UsageError("--U2 and --u are required")
    rep = witness_report(params, _users(opts["U2"]), int(opts["u"]))
    ok = rep["permutation"] and rep["urns_full"] and rep["zero_columns"]
    lines = [
        f"{params} U2={rep['U2']} u={rep['u']}",
        f"  decodability matrix ({rep['size']}x{rep['size']}) is a permutation of the identity: {rep['permutation']}",
        f"  urn totals: {rep['urn_totals']} (each must be {params.U})",
        f"  zero-column property: {rep['zero_columns']}",
    ]
    lines += ["  " + " ".join(str(v) for v in row) for row in rep["matrix"]]
    _emit(args, {**rep, "passed": ok}, lines)
    return 0 if ok else 1


def _session_config(opts, params=None):
    from .net import SessionConfig, parse_drop_plans

    host, _, port = str(opts["listen"]).rpartition(":")
    cfg = SessionConfig(
        params=params,
        fixture_path=opts.get("fixture"),
        key_dir=opts.get("keys"),
        host=host or "127.0.0.1",
        port=int(port),
        drop_plan=parse_drop_plans(opts.get("drop_plan")),
        timeout_ms=int(opts["timeout_ms"]),
        symbol_width=int(opts["symbol_width"]),
        seed=int(opts["seed"]),
    )
    if params is None:
        cfg.family, cfg.ums = _fixture(opts)
        cfg.params = cfg.family.params
    return cfg


def cmd_serve(args, opts) -> int:
    from .net import run_server

    cfg = _session_config(opts)
    record = run_server(cfg)
    payload = record.to_dict()
    if opts.get("out"):
        Path(opts["out"]).write_text(json.dumps(payload, indent=1))
    if opts.get("dump"):
        from .scheme import save_transcript

        save_transcript(opts["dump"], record.transcript)
    t = record.timings
    _emit(args, payload, [
        f"U1={record.U1} U2={record.U2}",
        f"round1 {t['round1_ms']:.1f} ms, round2 {t['round2_ms']:.1f} ms, decode {t['decode_ms']:.1f} ms, total {t['total_ms']:.1f} ms",
    ])
    return 0


def cmd_client(args, opts) -> int:
    from .net import run_client

    if opts.get("user") is None or opts.get("input") is None:
        raise UsageError("--user and --input are required")
    cfg = _session_config(opts)
    rec = run_client(cfg, int(opts["user"]), opts["input"])
    payload = {
        "user": rec.user_id,
        "seed": cfg.seed,
        "dropped": rec.dropped,
        "bytes_r1": rec.bytes_r1,
        "bytes_r2": rec.bytes_r2,
        "U1": rec.U1,
        "result_len": None if rec.result is None else int(rec.result.size),
    }
    if opts.get("out"):
        Path(opts["out"]).write_text(json.dumps(payload, indent=1))
    _emit(args, payload, [f"user {rec.user_id}: dropped={rec.dropped} bytes r1={rec.bytes_r1} r2={rec.bytes_r2} seed: {cfg.seed}"])
    return 0


def cmd_loopback(args, opts) -> int:
    from .net import prepare_session, run_session

    family, ums = _fixture(opts)
    p = family.params
    seed = int(opts["seed"])
    cfg, _, inputs = prepare_session(
        p, family, ums, opts["work_dir"], seed=seed,
        drop_plan=_session_config({**opts, "listen": "127.0.0.1:0"}, p).drop_plan,
        timeout_ms=int(opts["timeout_ms"]), symbol_width=int(opts["symbol_width"]),
    )
    record, clients, err = run_session(cfg, inputs)
    if err is not None:
        _emit(args, {"seed": seed, "error": f"{type(err).__name__}: {err}"}, [f"epoch aborted: {err}  seed: {seed}"])
        return 1
    expected = sum(inputs[k] for k in record.U1) % p.q
    ok = bool(np.array_equal(record.result, expected))
    payload = record.to_dict() | {"seed": seed, "correct": ok}
    t = record.timings
    _emit(args, payload, [
        f"U1={record.U1} U2={record.U2} seed: {seed}",
        f"RESULT {'equals' if ok else 'DIFFERS FROM'} the offline sum",
        f"round1 {t['round1_ms']:.1f} ms, round2 {t['round2_ms']:.1f} ms, decode {t['decode_ms']:.1f} ms, total {t['total_ms']:.1f} ms",
    ])
    return 0 if ok else 1


def cmd_bench(args, opts) -> int:
    from .net import bench_aggregation, mean_totals

    params = _params(opts)
    cfg = _session_config({**opts, "listen": "127.0.0.1:0"}, params)
    L_values = [int(v) for v in str(opts["L_values"]).split(",")] if isinstance(opts["L_values"], str) else list(opts["L_values"])
    rows = bench_aggregation(cfg, L_values, int(opts["repeats"]), opts["work_dir"], opts.get("csv"), int(opts["seed"]),
                             int(opts["max_attempts"]))
    means = mean_totals(rows)
    vals = list(means.values())
    monotone = all(a < b for a, b in zip(vals, vals[1:]))
    payload = {"seed": int(opts["seed"]), "rows": rows, "mean_total_ms": means, "monotone_in_L": monotone}
    lines = [f"K={params.K} U={params.U} S={params.S} q={params.q} seed: {opts['seed']}"]
    lines += [f"  L={L:>8}  mean total {m:8.1f} ms" for L, m in means.items()]
    lines.append(f"  mean total increases with L: {monotone}")
    _emit(args, payload, lines)
    return 0


def cmd_replay(args, opts) -> int:
    from .scheme import decode_transcript, load_transcript

    if not opts.get("transcript"):
        raise UsageError("--transcript is required")
    family, ums = _fixture(opts)
    tr = load_transcript(opts["transcript"])
    decoded = decode_transcript(tr, family, ums)
    ok = tr.decoded is not None and bool(np.array_equal(decoded, tr.decoded))
    payload = {"U1": list(tr.U1), "U2": list(tr.U2), "matches_recorded_result": ok, "seeds": tr.seeds}
    _emit(args, payload, [f"replayed U1={list(tr.U1)} U2={list(tr.U2)}: {'matches' if ok else 'DIFFERS FROM'} the recorded result, seeds: {tr.seeds}"])
    return 0 if ok else 1


COMMANDS = {
    "rates": cmd_rates,
    "fixture": cmd_fixture,
    "keys": cmd_keys,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "witness": cmd_witness,
    "serve": cmd_serve,
    "client": cmd_client,
    "loopback": cmd_loopback,
    "bench": cmd_bench,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--config", help="JSON file supplying defaults for any flag")
    common.add_argument("--seed", type=int)

    scheme = argparse.ArgumentParser(add_help=False)
    for name in ("K", "U", "S"):
        scheme.add_argument(f"--{name}", type=int)
    scheme.add_argument("--q", type=int, help=f"field prime (default {DEFAULT_PRIME})")
    scheme.add_argument("--L", type=int, help="input length (default U * pieces)")

    fixture = argparse.ArgumentParser(add_help=False)
    fixture.add_argument("--fixture", help="coefficient/user-matrix fixture JSON")

    net = argparse.ArgumentParser(add_help=False)
    net.add_argument("--listen", help="host:port")
    net.add_argument("--timeout-ms", type=int, dest="timeout_ms")
    net.add_argument("--symbol-width", type=int, choices=(1, 4), dest="symbol_width")
    net.add_argument("--drop-plan", dest="drop_plan", help="e.g. '3:after_round1,4:p=0.2'")

    parser = argparse.ArgumentParser(prog="gsagg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("rates", parents=[common, scheme], help="rate region for (K, U, S)")
    p = sub.add_parser("fixture", parents=[common, scheme], help="build and validate a scheme")
    p.add_argument("--max-attempts", type=int, dest="max_attempts")
    p.add_argument("--out")
    p = sub.add_parser("keys", parents=[common, fixture], help="write per-user key files and inputs")
    p.add_argument("--out")
    p = sub.add_parser("simulate", parents=[common, fixture], help="run one epoch in memory")
    p.add_argument("--U1")
    p.add_argument("--U2")
    p.add_argument("--pad", type=int, help="use inputs of this many symbols, zero-padded to L")
    p.add_argument("--dump", help="write the transcript JSON here")
    p = sub.add_parser("verify", parents=[common, fixture], help="decodability and leakage checks")
    p.add_argument("--mode", choices=("decode", "leak", "mi", "all"))
    p.add_argument("--trials", type=int)
    p.add_argument("--force", action="store_true", default=None, help="allow sweeps above the pattern budget")
    p = sub.add_parser("witness", parents=[common, scheme], help="deterministic decodability witness")
    p.add_argument("--U2")
    p.add_argument("--u", type=int)
    p = sub.add_parser("serve", parents=[common, fixture, net], help="run the aggregation server")
    p.add_argument("--out", help="write the aggregation record JSON here")
    p.add_argument("--dump", help="write the transcript JSON here")
    p = sub.add_parser("client", parents=[common, fixture, net], help="run one user")
    p.add_argument("--keys", help="directory of per-user key files")
    p.add_argument("--user", type=int)
    p.add_argument("--input", help=".npy file with the user's input")
    p.add_argument("--out")
    p = sub.add_parser("loopback", parents=[common, fixture, net], help="server and all clients on loopback")
    p.add_argument("--work-dir", dest="work_dir")
    p = sub.add_parser("bench", parents=[common, scheme, net], help="time loopback epochs over input lengths")
    p.add_argument("--L-values", dest="L_values")
    p.add_argument("--repeats", type=int)
    p.add_argument("--csv")
    p.add_argument("--work-dir", dest="work_dir")
    p.add_argument("--max-attempts", type=int, dest="max_attempts")
    p = sub.add_parser("replay", parents=[common, fixture], help="re-decode a dumped transcript")
    p.add_argument("--transcript")
    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    """Flags win over the config file, which wins over built-in defaults."""
    config = {}
    if args.config:
        config = json.loads(Path(args.config).read_text())
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
    flags = {k: v for k, v in vars(args).items() if v is not None}
    return {**DEFAULTS, **config, **flags}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        args.json = bool(opts.get("json"))
        return COMMANDS[args.command](args, opts)
    except (UsageError, InvalidParams) as exc:
        print(f"gsagg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except GsaError as exc:
        print(f"gsagg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
