"""Command-line entry point: ``acric <subcommand> ...``.

Every run prints one JSON object holding the fully resolved configuration
and the result.  Failures print ``{"error": {...}}`` to stderr and exit with
2 (configuration), 3 (protocol or authentication) or 4 (I/O).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import random
import socket
import sys
from collections import Counter
from pathlib import Path

from . import bench
from .adversary import (
    ForgeryExperiment,
    cdf_build,
    cdf_export,
    ks_geometric,
    ks_two_sample,
    pooled_success_rate,
    run_forgery,
)
from .chain import (
    Consumption,
    StorageApproach,
    StorageModel,
    live_storage_audit,
    node_storage,
    storage_bits,
)
from .errors import AcricError, InitFailure, ParameterError
from .handshake import (
    dial_group_member,
    dial_initiator,
    run_p2p,
    serve_group_coordinator,
    serve_responder,
)
from .primitives import DH_GROUPS, MasterKey, dh_group
from .scenario import Scenario, build, seeded_master_key
from .transport import DEFAULT_CRC
from .wire import parse_address

EXIT_OK, EXIT_CONFIG, EXIT_PROTOCOL, EXIT_IO = 0, 2, 3, 4


def _emit(config: dict, result: dict) -> None:
    print(json.dumps({"config": config, "result": result}, indent=2, sort_keys=True))


def _load_key(path: str | None, seed: int | None) -> MasterKey:
    if path:
        text = Path(path).read_text(encoding="ascii").strip()
        try:
            return MasterKey.fromhex(text)
        except ValueError:
            raise ParameterError(f"{path} does not hold a 64-hex-digit key") from None
    if seed is None:
        raise ParameterError("either --key or --seed is required")
    return seeded_master_key(seed)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _fingerprint(secret: bytes) -> str:
    return hashlib.sha256(b"fingerprint:" + secret).hexdigest()[:16]


def cmd_keygen(args) -> dict:
    path = Path(args.out)
    if path.exists() and not args.force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")
    key = MasterKey(os.urandom(32))
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w", encoding="ascii") as fh:
        fh.write(key.hex() + "\n")
    os.chmod(path, 0o600)
    return {"written": str(path), "fingerprint": _fingerprint(bytes(key))}


def cmd_init(args) -> dict:
    master = _load_key(args.key, args.seed)
    group = dh_group(args.dh_group)
    rand = random.Random(f"{args.seed}:cli-init").randbytes if args.seed is not None else os.urandom
    if args.role == "local":
        run = run_p2p(master, group, rand=rand)
        if run.error is not None:
            raise run.error
        result = run.initiator.result
        if result != run.responder.result:
            raise InitFailure("endpoints disagree")
    elif args.role == "responder":
        with socket.create_server(parse_address(args.peer)) as listener:
            result = serve_responder(listener, master, group, timeout=args.timeout, rand=rand)
    elif args.role == "initiator":
        result = dial_initiator(parse_address(args.peer), master, group,
                                timeout=args.timeout, rand=rand)
    elif args.role == "group-coordinator":
        with socket.create_server(parse_address(args.peer)) as listener:
            result = serve_group_coordinator(listener, args.members, master, group,
                                             timeout=args.timeout, rand=rand)
    else:
        result = dial_group_member(parse_address(args.peer), master, group,
                                   member_id=args.member_id, timeout=args.timeout, rand=rand)
    return {"completed": True, "session_key_fingerprint": _fingerprint(bytes(result.session_key)),
            "seed_fingerprint": _fingerprint(result.seed)}


def cmd_bus(args) -> dict:
    try:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParameterError(f"invalid JSON in {args.config}: {exc}") from None
    if args.crc:
        data = {**data, "crc": args.crc}
    scenario = Scenario.from_dict(data)
    master = _load_key(args.key, args.seed) if args.key else None
    bus, schedule = build(scenario, args.seed, master)
    trace = bus.run(schedule, args.duration)
    if args.trace:
        trace.write(args.trace)
    tally = Counter((e["src"], e["dev"], e["verdict"]) for e in trace.select(event="recv"))
    return {
        "scenario": scenario.to_dict(),
        "frames_sent": len(trace.select(event="send")),
        "frames_dropped": len(trace.select(event="drop")),
        "verdicts": [{"src": s, "dev": d, "verdict": v, "count": n}
                     for (s, d, v), n in sorted(tally.items())],
        "trace": args.trace,
    }


def cmd_attack(args) -> dict:
    exp = ForgeryExperiment(args.crc_width, args.mode, args.trials, args.seed,
                            not args.without_replacement, args.message_bytes)
    record = run_forgery(exp)
    table = cdf_build(record)
    cdf_export(table, args.out)
    rate, total = pooled_success_rate(record.attempts)
    result = {
        "out": args.out,
        "rows": len(table.points),
        "mean_attempts": float(record.attempts.mean()),
        "total_attempts": int(total),
        "per_attempt_success": rate,
        "ks_vs_geometric": ks_geometric(record.attempts, args.crc_width),
    }
    tables = {args.mode: table}
    if args.compare:
        other = "random" if args.mode == "informed" else "informed"
        other_record = run_forgery(ForgeryExperiment(args.crc_width, other, args.trials, args.seed,
                                                     not args.without_replacement, args.message_bytes))
        tables[other] = cdf_build(other_record)
        result["ks_two_sample"] = ks_two_sample(record.attempts, other_record.attempts)
    if args.figure:
        from .plots import plot_cdfs
        plot_cdfs(tables, args.crc_width, args.figure)
        result["figure"] = args.figure
    return result


def storage_rows(x: int, n_hash: int, nodes: int, audit: bool = True) -> list[dict]:
    rows = []
    for approach in StorageApproach:
        for consumption in Consumption:
            model = StorageModel(x, n_hash, nodes, approach, consumption)
            row = {"approach": approach.value, "consumption": consumption.value,
                   "formula_bits": storage_bits(model)}
            if audit and x == 256:
                # live chains hold 256-bit values, so the audit only applies at x = 256
                row["audit_bits"] = live_storage_audit(node_storage(approach, consumption, nodes, n_hash))
            rows.append(row)
    return rows


def cmd_storage(args) -> dict:
    rows = storage_rows(args.x, args.n_hash, args.nodes, not args.no_audit)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    if args.figure:
        from .plots import plot_storage
        plot_storage(rows, args.figure)
    return {"rows": rows, "out": args.out, "figure": args.figure}


def cmd_bench(args) -> dict:
    master = _load_key(args.key, 0) if args.key else MasterKey(os.urandom(32))
    result = {"per_frame": bench.frame_overhead(args.frames, args.frame_bytes, args.crc)}
    if args.init_runs:
        result["init_loopback"] = bench.loopback_init(master, dh_group(args.dh_group), args.init_runs)
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acric", description="Authenticated CRC toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="write a fresh hex-encoded master key")
    p.add_argument("--out", default="master.key")
    p.add_argument("--force", action="store_true", help="overwrite an existing file")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("init", help="run the authenticated key initialization")
    p.add_argument("--role", choices=("local", "initiator", "responder", "group-coordinator",
                                      "group-member"), default="local",
                   help="local runs both endpoints in one process")
    p.add_argument("--peer", default="127.0.0.1:5020",
                   help="host:port to dial (initiator, group-member) or bind (responder, group-coordinator)")
    p.add_argument("--members", type=int, default=1, help="members the coordinator waits for")
    p.add_argument("--member-id", type=int, default=1)
    p.add_argument("--dh-group", choices=sorted(DH_GROUPS), default="toy64")
    p.add_argument("--key", help="master key file (hex)")
    p.add_argument("--seed", type=_u64, help="derive randomness (and a demo key) from this seed")
    p.add_argument("--timeout", type=float, default=5.0)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("bus", help="simulate a bus scenario and write a JSONL trace")
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--trace", help="output JSONL path")
    p.add_argument("--duration", type=float, help="stop after this simulated time")
    p.add_argument("--key", help="master key file; default derives one from the seed")
    p.add_argument("--crc", help="16-bit catalog CRC for the frame field; overrides the config")
    p.set_defaults(func=cmd_bus)

    p = sub.add_parser("attack", help="brute-force forgery experiment, CDF as CSV")
    p.add_argument("--mode", choices=("random", "informed"), default="random")
    p.add_argument("--crc-width", type=int, choices=(8, 16), default=16)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--out", default="cdf.csv")
    p.add_argument("--message-bytes", type=int, default=8)
    p.add_argument("--without-replacement", action="store_true",
                   help="guess each value at most once instead of uniformly with replacement")
    p.add_argument("--compare", action="store_true", help="also run the other mode and compare")
    p.add_argument("--figure", help="write a PNG of the CDF(s)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("storage", help="per-node hash-chain storage for all strategies")
    p.add_argument("--x", type=int, default=256, help="bits per stored chain value")
    p.add_argument("--n-hash", type=int, default=1024)
    p.add_argument("--nodes", type=int, default=5)
    p.add_argument("--no-audit", action="store_true", help="skip building live chains")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--figure", help="PNG output path")
    p.set_defaults(func=cmd_storage)

    p = sub.add_parser("bench", help="per-frame overhead and loopback init timing")
    p.add_argument("--frames", type=int, default=2000)
    p.add_argument("--frame-bytes", type=int, default=256)
    p.add_argument("--init-runs", type=int, default=5)
    p.add_argument("--dh-group", choices=sorted(DH_GROUPS), default="modp2048")
    p.add_argument("--crc", default=DEFAULT_CRC, help="16-bit catalog CRC name")
    p.add_argument("--key", help="master key file (hex)")
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_bench)
    return parser


def _config_of(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except (ParameterError, ValueError) as exc:
        code = EXIT_CONFIG
        err = exc
    except AcricError as exc:
        code = EXIT_PROTOCOL
        err = exc
    except OSError as exc:
        code = EXIT_IO
        err = exc
    else:
        _emit(_config_of(args), result)
        return EXIT_OK
    print(json.dumps({"error": {"type": type(err).__name__, "message": str(err), "exit": code}}),
          file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
