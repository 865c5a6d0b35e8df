"""Line-oriented scenario scripts for the simulator.

Commands (one per line, ``#`` comments)::

    backup <user> <pin> <msgfile> [same-salt]
    recover <user> <pin> [expect=ok|fail]
    crash-recover <user> <pin> <contacts>
    resume <user> <pin> [expect=ok|fail]
    fail-hsm <id>      revive-hsm <id>
    compromise <ids>   (comma list, ranges like 3-7)
    adversary <mode>|off
    forge-epoch        epoch        gc
"""

import os
import shlex
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .client import ClientCrash
from .datacenter import Datacenter
from .provider import ADVERSARY_MODES


class ScenarioError(ValueError):
    pass


ARITY = {
    "backup": (3, 4), "recover": (2, 3), "crash-recover": (3, 3), "resume": (2, 3),
    "fail-hsm": (1, 1), "revive-hsm": (1, 1), "compromise": (1, 1), "adversary": (1, 1),
    "forge-epoch": (0, 0), "epoch": (0, 0), "gc": (0, 0),
}


@dataclass
class Step:
    lineno: int
    cmd: str
    args: List[str]


def parse_ids(text: str) -> List[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def parse_scenario(text: str) -> List[Step]:
    steps = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            words = shlex.split(line)
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: {exc}") from exc
        cmd, args = words[0], words[1:]
        if cmd not in ARITY:
            raise ScenarioError(f"line {lineno}: unknown command {cmd!r}")
        lo, hi = ARITY[cmd]
        if not lo <= len(args) <= hi:
            raise ScenarioError(f"line {lineno}: {cmd} takes {lo}..{hi} arguments")
        if cmd in ("recover", "resume") and len(args) == 3 and args[2] not in ("expect=ok", "expect=fail"):
            raise ScenarioError(f"line {lineno}: expected expect=ok or expect=fail")
        if cmd == "backup" and len(args) == 4 and args[3] != "same-salt":
            raise ScenarioError(f"line {lineno}: unknown backup flag {args[3]!r}")
        if cmd == "adversary" and args[0] not in ADVERSARY_MODES + ("off",):
            raise ScenarioError(f"line {lineno}: unknown adversary mode {args[0]!r}")
        try:
            if cmd in ("fail-hsm", "revive-hsm", "crash-recover"):
                int(args[-1])
            if cmd == "compromise":
                parse_ids(args[0])
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: bad number") from exc
        steps.append(Step(lineno, cmd, args))
    return steps


@dataclass
class ScenarioResult:
    violations: List[str] = field(default_factory=list)
    outcomes: List[Tuple[int, str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def run_scenario(dc: Datacenter, steps: List[Step], base_dir: str = ".",
                 messages: Optional[Dict[bytes, bytes]] = None) -> ScenarioResult:
    """Execute ``steps``; scripted expectations that fail become violations."""
    res = ScenarioResult()
    messages = {} if messages is None else messages
    note = dc.router.note

    def check(step: Step, got: Optional[bytes], user: bytes, expect: Optional[str]):
        outcome = "ok" if got is not None and got == messages.get(user) else "fail"
        if got is not None and got != messages.get(user):
            res.violations.append(f"line {step.lineno}: recovered a wrong plaintext")
        note("client", step.cmd, user=user.decode(errors="replace"), outcome=outcome)
        res.outcomes.append((step.lineno, step.cmd, outcome))
        if expect is not None and outcome != expect:
            res.violations.append(f"line {step.lineno}: expected {expect}, got {outcome}")

    for step in steps:
        a = step.args
        if step.cmd == "backup":
            path = a[2] if os.path.isabs(a[2]) else os.path.join(base_dir, a[2])
            try:
                with open(path, "rb") as fh:
                    msg = fh.read()
            except OSError as exc:
                raise ScenarioError(f"line {step.lineno}: cannot read {a[2]}: {exc}") from exc
            user = a[0].encode()
            dc.client(user).backup(a[1], msg, same_salt=len(a) == 4)
            messages[user] = msg
            note("client", "backup", user=a[0], bytes=len(msg))
        elif step.cmd == "recover":
            user = a[0].encode()
            expect = a[2].split("=", 1)[1] if len(a) == 3 else None
            check(step, dc.client(user).recover(a[1]), user, expect)
        elif step.cmd == "crash-recover":
            user = a[0].encode()
            try:
                got = dc.client(user).recover(a[1], die_after=int(a[2]))
                check(step, got, user, None)
            except ClientCrash:
                res.outcomes.append((step.lineno, step.cmd, "crashed"))
        elif step.cmd == "resume":
            user = a[0].encode()
            expect = a[2].split("=", 1)[1] if len(a) == 3 else None
            check(step, dc.client(user).resume(a[1]), user, expect)
        elif step.cmd == "fail-hsm":
            dc.fail_hsm(int(a[0]))
        elif step.cmd == "revive-hsm":
            dc.revive_hsm(int(a[0]))
        elif step.cmd == "compromise":
            leaked = dc.compromise(parse_ids(a[0]))
            res.outcomes.append((step.lineno, step.cmd, f"{len(leaked)} exported"))
        elif step.cmd == "adversary":
            dc.provider.adversary = set() if a[0] == "off" else {a[0]}
            note("harness", "adversary", mode=a[0])
        elif step.cmd == "epoch":
            r = dc.run_epoch()
            res.outcomes.append((step.lineno, step.cmd, r.status))
        elif step.cmd == "forge-epoch":
            try:
                r = dc.forge_epoch()
            except ValueError as exc:
                raise ScenarioError(f"line {step.lineno}: {exc}") from exc
            detected = r.status == "rejected"
            note("harness", "forge-detected" if detected else "forge-missed", epoch=r.epoch)
            res.outcomes.append((step.lineno, step.cmd, "detected" if detected else r.status))
            if r.status == "finalized":
                res.violations.append(f"line {step.lineno}: forged epoch was adopted")
        elif step.cmd == "gc":
            out = dc.gc()
            res.outcomes.append((step.lineno, step.cmd, f"{sum(out.values())} accepted"))
    if dc.adoption_violations:
        res.violations.append(f"digest safety violated: {dc.adoption_violations[:3]}")
    if not dc.puncture_order_ok():
        res.violations.append("a share was released before its puncture")
    return res
