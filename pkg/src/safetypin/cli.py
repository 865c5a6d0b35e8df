"""Command-line front end.

Exit codes: 0 success (including scripted, expected failures), 2 an
invariant or bound was violated, 3 configuration or parse error.
"""

import argparse
import csv
import io
import json
import os
import pickle
import statistics
import sys
import time
from random import Random
from typing import List, Optional

from . import authlog, bounds
from .config import ClusterConfig, ConfigError, dump_config, load_config
from .crypto.encoding import DecodeError

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 2, 3
STATE_FILE = "datacenter.pkl"


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_CONFIG):
        super().__init__(msg)
        self.code = code


def _config(args) -> ClusterConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ClusterConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------ state files

def _state_path(state_dir: str) -> str:
    return os.path.join(state_dir, STATE_FILE)


def load_state(state_dir: str):
    path = _state_path(state_dir)
    if not os.path.exists(path):
        raise CliError(f"{state_dir} is not initialized (run init first)")
    with open(path, "rb") as fh:
        return pickle.load(fh)


def save_state(dc, state_dir: str) -> None:
    with open(_state_path(state_dir), "wb") as fh:
        pickle.dump(dc, fh)
    for i, h in dc.hsms.items():
        info = {
            "node_id": i,
            "signer_pk": dc.signer_pks[i].hex() if isinstance(dc.signer_pks[i], bytes) else str(dc.signer_pks[i]),
            "punc_epoch": h.punc_sk.epoch_id,
            "bloom_m": h.punc_sk.params.m,
            "bloom_k": h.punc_sk.params.k,
            "punc_pk_fingerprint": h.punc_pk.fingerprint().hex(),
            "log_epoch": h.log.epoch,
            "log_digest": h.log.digest.hex(),
            "gc_counter": h.log.gc_counter,
            "deleted_slots": h.punc_sk.deleted_count,
        }
        with open(os.path.join(state_dir, f"hsm-{i:03d}.json"), "w", encoding="utf-8") as fh:
            json.dump(info, fh, indent=1, sort_keys=True)
    log = dc.provider.log
    with open(os.path.join(state_dir, "provider-log.bin"), "wb") as fh:
        fh.write(authlog.write_replay(log.tree.entries, log.checkpoints))
    for k, (entries, checkpoints) in enumerate(log.archives):
        with open(os.path.join(state_dir, f"provider-log.gc{k}.bin"), "wb") as fh:
            fh.write(authlog.write_replay(entries, checkpoints))
    with open(os.path.join(state_dir, "transcript.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(dc.router.jsonl())


# --------------------------------------------------------------- commands

def cmd_init(args) -> int:
    from .cluster import Datacenter
    cfg = _config(args)
    if os.path.isdir(args.state_dir) and os.listdir(args.state_dir):
        raise CliError(f"state directory {args.state_dir} is not empty")
    os.makedirs(args.state_dir, exist_ok=True)
    dc = Datacenter(cfg)
    with open(os.path.join(args.state_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    save_state(dc, args.state_dir)
    print(f"initialized {cfg.N} HSMs in {args.state_dir}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .cluster.scenario import ScenarioError, parse_scenario, run_scenario
    dc = load_state(args.state_dir)
    try:
        with open(args.scenario, encoding="utf-8") as fh:
            steps = parse_scenario(fh.read())
    except OSError as exc:
        raise CliError(f"cannot read scenario: {exc}") from exc
    except ScenarioError as exc:
        raise CliError(str(exc)) from exc
    messages = getattr(dc, "scenario_messages", {})
    try:
        result = run_scenario(dc, steps, os.path.dirname(os.path.abspath(args.scenario)), messages)
    except ScenarioError as exc:
        raise CliError(str(exc)) from exc
    dc.scenario_messages = messages
    save_state(dc, args.state_dir)
    if args.out:
        _emit(dc.router.jsonl(), args.out)
    for lineno, cmd, outcome in result.outcomes:
        print(f"line {lineno}: {cmd} -> {outcome}")
    for v in result.violations:
        print(f"VIOLATION {v}", file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_VIOLATION


def cmd_verify_bounds(args) -> int:
    rng = Random(args.seed if args.seed is not None else 0)
    trials = args.trials or (20000 if args.which == "audit" else 1000)
    rows = bounds.CHECKS[args.which](trials, rng)
    _emit(bounds.CSV_HEADER + "\n" + "".join(r.csv() + "\n" for r in rows), args.out)
    return EXIT_OK if all(r.passed for r in rows) else EXIT_VIOLATION


def cmd_audit_log(args) -> int:
    try:
        with open(args.replay, "rb") as fh:
            entries, checkpoints = authlog.read_replay(fh.read())
        if args.chain:
            with open(args.chain, encoding="utf-8") as fh:
                checkpoints = _read_chain(fh.read())
    except (OSError, DecodeError, ValueError) as exc:
        raise CliError(f"cannot parse replay: {exc}") from exc
    report = authlog.audit_replay(entries, checkpoints)
    if report.ok:
        print(f"ok: {len(entries)} records, {report.checked_epochs} checkpoints")
        return EXIT_OK
    print(f"violation at record {report.bad_record}: {report.reason}")
    return EXIT_VIOLATION


def _read_chain(text: str):
    """Digest chain file: one ``<entry count> <hex digest>`` pair per line."""
    chain = []
    for line in text.splitlines():
        if line.strip():
            count, digest = line.split()
            chain.append((int(count), bytes.fromhex(digest)))
    return chain


def cmd_epoch(args) -> int:
    dc = load_state(args.state_dir)
    if args.epoch_cmd == "run":
        r = dc.run_epoch()
        print(f"epoch {r.epoch}: {r.status} (restarts={r.restarts})")
        code = EXIT_OK if r.status == "finalized" else EXIT_VIOLATION
    elif args.epoch_cmd == "forge":
        victim = args.overwrite_id.encode() if args.overwrite_id else None
        if victim is not None:
            from .cluster.messages import log_id
            victim = log_id(victim, 0) if victim not in dc.provider.log.tree else victim
        try:
            r = dc.forge_epoch(victim)
        except Exception as exc:           # empty log or unknown id
            raise CliError(f"cannot forge: {exc}") from exc
        detected = r.status == "rejected"
        print(f"forged epoch {r.epoch}: {'detected' if detected else r.status}; "
              f"rejecting HSMs={sorted(r.rejections)}")
        code = EXIT_OK if detected else EXIT_VIOLATION
    else:
        stats = {
            "epochs": dc.provider.log.epoch,
            "log_entries": len(dc.provider.log.tree),
            "chunks_verified_per_hsm": sorted({h.log.stats["chunks_verified"] for h in dc.hsms.values()}),
            "signatures_verified_per_hsm": sorted({h.log.stats["signatures_verified"] for h in dc.hsms.values()}),
            "results": [(r.epoch, r.status, r.restarts) for r in dc.epoch_results],
        }
        print(json.dumps(stats, sort_keys=True))
        return EXIT_OK
    save_state(dc, args.state_dir)
    return code


def _median_time(fn, repeats: int) -> float:
    fn()                                           # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cmd_bench(args) -> int:
    from . import sdstore
    from .cluster import Datacenter
    cfg = _config(args)
    ops = args.ops.split(",")
    unknown = set(ops) - {"recover", "delete", "epoch"}
    if unknown:
        raise CliError(f"unknown bench ops: {', '.join(sorted(unknown))}")
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["op", "setting", "median_seconds", "counter", "value"])
    ok = True
    rng = Random(cfg.seed)
    if "delete" in ops:
        for d in (8, 64, 739):
            server = sdstore.BlockServer()
            handle = sdstore.setup([bytes(32)] * d, server, rng)
            state = {"h": handle, "i": 0}

            def one():
                mark = len(server.accesses)
                state["h"] = sdstore.delete(state["h"], state["i"] % d, server, rng)
                state["i"] += 1
                return len(server.touched_since(mark))
            touched = one()
            t = _median_time(one, min(args.repeats, d - 2))
            ok &= touched == sdstore.tree_height(d)
            w.writerow(["delete", f"D={d}", f"{t:.6f}", "blocks_touched", touched])
    if "recover" in ops or "epoch" in ops:
        dc = Datacenter(cfg)
        users = [dc.client(f"bench-{k}") for k in range(args.repeats + 1)]
        for u in users:
            u.backup(1234, b"bench payload")
        if "recover" in ops:
            it = iter(users)
            t = _median_time(lambda: next(it).recover(1234), args.repeats)
            w.writerow(["recover", f"N={cfg.N} n={cfg.n} t={cfg.t}", f"{t:.6f}", "", ""])
        if "epoch" in ops:
            before = {i: h.log.stats["chunks_verified"] for i, h in dc.hsms.items()}
            dc.provider.log.submit(b"bench-entry", b"v")
            t0 = time.perf_counter()
            r = dc.run_epoch()
            t = time.perf_counter() - t0
            work = {h.log.stats["chunks_verified"] - before[i] for i, h in dc.hsms.items()}
            ok &= r.status == "finalized" and work == {cfg.audit_count}
            w.writerow(["epoch", f"N={cfg.N} C={cfg.audit_count}", f"{t:.6f}", "chunks_per_hsm",
                        "/".join(str(x) for x in sorted(work))])
    _emit(out.getvalue(), args.out)
    return EXIT_OK if ok else EXIT_VIOLATION


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safetypin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, state=False):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        if state:
            sp.add_argument("--state-dir", required=True)

    sp = sub.add_parser("init", help="create HSM keys and provider state")
    common(sp, state=True)
    sp.set_defaults(fn=cmd_init)

    sp = sub.add_parser("run", help="run a scenario file against saved state")
    common(sp, state=True)
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--out", help="write the JSON-lines transcript here")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("verify-bounds", help="Monte Carlo check of an analytic bound")
    common(sp)
    sp.add_argument("which", choices=sorted(bounds.CHECKS))
    sp.add_argument("--trials", type=int)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_verify_bounds)

    for name in ("audit-log", "verify-log"):
        sp = sub.add_parser(name, help="replay and audit a published log")
        sp.add_argument("--replay", required=True)
        sp.add_argument("--chain", help="digest chain file overriding the embedded one")
        sp.set_defaults(fn=cmd_audit_log)

    sp = sub.add_parser("bench", help="desk-scale timings as CSV")
    common(sp)
    sp.add_argument("--ops", default="recover,delete,epoch")
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("epoch", help="log epoch operations")
    esub = sp.add_subparsers(dest="epoch_cmd", required=True)
    for name in ("run", "forge", "stats"):
        e = esub.add_parser(name)
        common(e, state=True)
        if name == "forge":
            e.add_argument("--overwrite-id", help="user (or raw log id) whose value is overwritten")
    sp.set_defaults(fn=cmd_epoch)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except (CliError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "code", EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())
