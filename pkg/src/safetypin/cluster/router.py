"""Message router that records every hop as a JSON-lines transcript."""

import json
from typing import Callable, List, Set

from ..logsync import Unreachable


def hsm_name(i: int) -> str:
    return f"hsm-{i:03d}"


def _size(payload) -> int:
    if payload is None:
        return 0
    if isinstance(payload, (bytes, bytearray)):
        return len(payload)
    if isinstance(payload, int):
        return 8
    to_bytes = getattr(payload, "to_bytes", None)
    return len(to_bytes()) if to_bytes else 0


class Router:
    """Delivers calls between actors; a downed HSM makes its calls raise Unreachable."""

    def __init__(self):
        self.transcript: List[dict] = []
        self.down: Set[str] = set()

    def call(self, src: str, dst: str, verb: str, payload, handler: Callable):
        entry = {"seq": len(self.transcript), "src": src, "dst": dst, "verb": verb,
                 "bytes": _size(payload)}
        self.transcript.append(entry)
        if dst in self.down:
            entry["status"] = "unreachable"
            raise Unreachable(dst)
        try:
            result = handler(payload)
        except Exception as exc:
            entry["status"] = type(exc).__name__
            raise
        entry["status"] = "ok" if result is not None else "none"
        return result

    def note(self, actor: str, event: str, **fields) -> None:
        """Record a non-message event (epoch outcome, crash, attack result)."""
        self.transcript.append({"seq": len(self.transcript), "src": actor, "event": event, **fields})

    def jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.transcript)
